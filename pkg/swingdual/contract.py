"""Generic multiple-exercise cashflow with volume constraints and refraction.

A chain of exercise dates j_1 <= ... <= j_L pays

    sum_k U^k_{j_k} * prod_{l<k} V^l_{j_l}

where U^k is the additive contribution of the k-th right and V^l > 0 the
multiplicative factor left behind by the l-th right. At most v_j rights may
be exercised at date j, and after exercising at i the next distinct date
must be >= rho^i. Date T+1 is the cemetery: unused rights are exercised
there and the volume cap is L.

Evaluators are vectorized over prices: they receive a numpy array and return
an array of the same shape.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

PayoffFn = Callable[[int, int, np.ndarray], np.ndarray]
VolumeFn = Callable[[int, np.ndarray], np.ndarray]
RefractionFn = Callable[[int], int]

WEEKEND = (5, 6)  # date 0 is a Monday


class ContractError(ValueError):
    """Contract parameters violate a preset's preconditions."""


# --- Volume profiles and refraction rules ---------------------------------------

@dataclass(frozen=True)
class UnitVolume:
    rights: int
    cemetery: int

    def __call__(self, date: int, prices: np.ndarray) -> np.ndarray:
        cap = self.rights if date >= self.cemetery else 1
        return np.full(np.shape(prices), cap, dtype=np.int64)


@dataclass(frozen=True)
class OffPeakVolume:
    """Two exercises on weekend dates (j mod 7 in {5, 6}), one otherwise."""
    rights: int
    cemetery: int

    def __call__(self, date: int, prices: np.ndarray) -> np.ndarray:
        if date >= self.cemetery:
            cap = self.rights
        else:
            cap = min(2 if date % 7 in WEEKEND else 1, self.rights)
        return np.full(np.shape(prices), cap, dtype=np.int64)


@dataclass(frozen=True)
class FullVolume:
    rights: int
    cemetery: int

    def __call__(self, date: int, prices: np.ndarray) -> np.ndarray:
        return np.full(np.shape(prices), self.rights, dtype=np.int64)


@dataclass(frozen=True)
class TableVolume:
    """Explicit per-date caps for dates 0..T."""
    rights: int
    cemetery: int
    caps: Tuple[int, ...]

    def __call__(self, date: int, prices: np.ndarray) -> np.ndarray:
        cap = self.rights if date >= self.cemetery else min(self.caps[date], self.rights)
        return np.full(np.shape(prices), cap, dtype=np.int64)


@dataclass(frozen=True)
class ConstantRefraction:
    """rho^i = min(i + delta, cemetery)."""
    delta: int
    cemetery: int

    def __call__(self, date: int) -> int:
        return min(date + self.delta, self.cemetery)


# --- Cashflow evaluators ---------------------------------------------------------

@dataclass(frozen=True)
class CallPayoff:
    """U^p_j = (S_j - K)^+ for every right."""
    strike: float

    def __call__(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        return np.maximum(prices - self.strike, 0.0)


@dataclass(frozen=True)
class UnitFactor:
    def __call__(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        return np.ones(np.shape(prices))


@dataclass(frozen=True)
class UtilityPayoff:
    """Only the last right pays: U^L_j = -exp(-alpha Z_j)."""
    alpha: float
    strike: float
    rights: int

    def __call__(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        if right < self.rights:
            return np.zeros(np.shape(prices))
        return -np.exp(-self.alpha * np.maximum(prices - self.strike, 0.0))


@dataclass(frozen=True)
class UtilityFactor:
    """V^l_j = exp(-alpha Z_j)."""
    alpha: float
    strike: float

    def __call__(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        return np.exp(-self.alpha * np.maximum(prices - self.strike, 0.0))


@dataclass(frozen=True)
class LiquidationPayoff:
    """U^k_j = S_j exp[b (a j - 1)(k - 1)]; zero at the cemetery."""
    a: float
    b: float
    cemetery: int

    def __call__(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        if date >= self.cemetery:
            return np.zeros(np.shape(prices))
        return prices * np.exp(self.b * (self.a * date - 1.0) * (right - 1))


@dataclass(frozen=True)
class LiquidationFactor:
    """V^l_j = exp(-a b j); one at the cemetery."""
    a: float
    b: float
    cemetery: int

    def __call__(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        if date >= self.cemetery:
            return np.ones(np.shape(prices))
        return np.full(np.shape(prices), np.exp(-self.a * self.b * date))


# --- Contract ----------------------------------------------------------------------

@dataclass(frozen=True)
class ContractSpec:
    """Generic cashflow plus constraints for L rights over dates 0..T.

    u_eval(p, j, prices) -> U^p_j for p in 1..L
    v_eval(l, j, prices) -> V^l_j for l in 1..L-1 (V^L is never needed and
                            is taken as 1)
    volume(j, prices)    -> integer caps v_j, equal to L at the cemetery
    refraction(i)        -> next admissible distinct date, > i
    """
    rights: int
    horizon: int
    u_eval: PayoffFn
    v_eval: PayoffFn
    volume: VolumeFn
    refraction: RefractionFn
    strike: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        if self.rights < 0:
            raise ContractError(f"rights must be >= 0, got {self.rights}")
        if self.horizon < 0:
            raise ContractError(f"horizon must be >= 0, got {self.horizon}")

    @property
    def cemetery(self) -> int:
        return self.horizon + 1

    def next_date(self, date: int) -> int:
        """rho^date, capped at the cemetery."""
        return min(int(self.refraction(date)), self.cemetery)

    def max_volume(self, date: int, prices: np.ndarray) -> np.ndarray:
        if date >= self.cemetery:
            return np.full(np.shape(prices), self.rights, dtype=np.int64)
        return np.minimum(np.asarray(self.volume(date, prices), dtype=np.int64), self.rights)

    def factor(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        if right >= self.rights:
            return np.ones(np.shape(prices))
        return np.asarray(self.v_eval(right, date, prices), dtype=float)

    def payoff(self, right: int, date: int, prices: np.ndarray) -> np.ndarray:
        return np.asarray(self.u_eval(right, date, prices), dtype=float)

    def cashflows(self, date: int, prices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """U and V for rights 1..L at one date; row 0 is unused padding."""
        prices = np.asarray(prices, dtype=float)
        u = np.zeros((self.rights + 1,) + prices.shape)
        v = np.ones((self.rights + 1,) + prices.shape)
        for p in range(1, self.rights + 1):
            u[p] = self.payoff(p, date, prices)
            v[p] = self.factor(p, date, prices)
        return u, v

    def exercise_value(self, first_right: int, count: int, date: int, prices) -> Tuple[np.ndarray, np.ndarray]:
        """Immediate value and V-product of exercising rights first_right..first_right+count-1 at date."""
        prices = np.asarray(prices, dtype=float)
        value = np.zeros(prices.shape)
        product = np.ones(prices.shape)
        for p in range(first_right, first_right + count):
            value = value + product * self.payoff(p, date, prices)
            product = product * self.factor(p, date, prices)
        return value, product

    def cemetery_values(self) -> np.ndarray:
        """Value of exercising the last l rights at the cemetery, l = 0..L."""
        out = np.zeros(self.rights + 1)
        zero = np.zeros(1)
        for l in range(1, self.rights + 1):
            value, _ = self.exercise_value(self.rights - l + 1, l, self.cemetery, zero)
            out[l] = value[0]
        return out


@dataclass(frozen=True)
class ExerciseChain:
    dates: Tuple[int, ...]

    def __post_init__(self):
        dates = tuple(int(d) for d in self.dates)
        if any(d < 0 for d in dates):
            raise ValueError(f"exercise dates must be >= 0: {dates}")
        if any(b < a for a, b in zip(dates, dates[1:])):
            raise ValueError(f"exercise dates must be non-decreasing: {dates}")
        object.__setattr__(self, "dates", dates)

    def __len__(self) -> int:
        return len(self.dates)


def exercise_count(prefix: Sequence[int]) -> int:
    """Number of rights in the prefix exercised at its last date."""
    if not prefix:
        raise ValueError("prefix must contain at least one date")
    last = prefix[-1]
    return sum(1 for d in prefix if d == last)


def is_admissible(spec: ContractSpec, prefix: Sequence[int], prices: Sequence[float]) -> bool:
    """Volume and refraction constraints for every element of the prefix.

    prices[i] is the price at date prefix[i] (only used by price-dependent
    volume rules).
    """
    dates = list(prefix.dates if isinstance(prefix, ExerciseChain) else prefix)
    for l, d in enumerate(dates):
        if d < 0 or d > spec.cemetery:
            return False
        if l > 0 and d < dates[l - 1]:
            return False
        cap = int(spec.max_volume(d, np.asarray([prices[l]], dtype=float))[0])
        if exercise_count(dates[:l + 1]) > cap:
            return False
        if l > 0 and d > dates[l - 1] and d < spec.next_date(dates[l - 1]):
            return False
    return True


def chain_payoff(spec: ContractSpec, chain: Union[ExerciseChain, Sequence[int]], prices: Sequence[float]) -> float:
    """sum_k U^k_{j_k} prod_{l<k} V^l_{j_l} for an admissible chain."""
    dates = chain.dates if isinstance(chain, ExerciseChain) else tuple(chain)
    total = 0.0
    product = 1.0
    for k, (d, s) in enumerate(zip(dates, prices), start=1):
        x = np.asarray([s], dtype=float)
        total += product * float(spec.payoff(k, d, x)[0])
        product *= float(spec.factor(k, d, x)[0])
    return total


# --- Presets -------------------------------------------------------------------------

def _volume_profile(profile: Union[str, VolumeFn, None], rights: int, horizon: int) -> VolumeFn:
    cemetery = horizon + 1
    if profile is None or profile == "full":
        return FullVolume(rights, cemetery)
    if profile == "unit":
        return UnitVolume(rights, cemetery)
    if profile == "offpeak":
        return OffPeakVolume(rights, cemetery)
    if callable(profile):
        return profile
    raise ContractError(f"unknown volume profile {profile!r} (expected unit, offpeak or full)")


def _check_delta(delta: int) -> None:
    if delta < 1:
        raise ContractError(f"refraction period delta must be >= 1, got {delta}")


def preset_swing(strike: float = 1.0, rights: int = 2, horizon: int = 50,
                 volume: Union[str, VolumeFn] = "unit", delta: int = 1) -> ContractSpec:
    _check_delta(delta)
    return ContractSpec(
        rights=rights, horizon=horizon,
        u_eval=CallPayoff(strike), v_eval=UnitFactor(),
        volume=_volume_profile(volume, rights, horizon),
        refraction=ConstantRefraction(delta, horizon + 1),
        strike=strike, name="swing",
    )


def preset_exp_utility(alpha: float, strike: float = 1.0, rights: int = 2, horizon: int = 50,
                       volume: Union[str, VolumeFn] = "unit", delta: int = 1) -> ContractSpec:
    if not alpha > 0:
        raise ContractError(f"risk aversion alpha must be > 0, got {alpha}")
    _check_delta(delta)
    return ContractSpec(
        rights=rights, horizon=horizon,
        u_eval=UtilityPayoff(alpha, strike, rights), v_eval=UtilityFactor(alpha, strike),
        volume=_volume_profile(volume, rights, horizon),
        refraction=ConstantRefraction(delta, horizon + 1),
        strike=strike, name="exputil",
    )


def preset_liquidation(a: float, b: float, rights: int = 2, horizon: int = 50,
                       volume: Optional[Union[str, VolumeFn]] = None, delta: int = 1) -> ContractSpec:
    """Share liquidation with price impact; unconstrained (v = L, rho = i+1) by default."""
    if not (a > 0 and b > 0):
        raise ContractError(f"liquidation parameters must be > 0, got a={a}, b={b}")
    if horizon * a > 1:
        raise ContractError(f"liquidation needs a short horizon T <= 1/a; got T={horizon}, 1/a={1 / a:g}")
    _check_delta(delta)
    cemetery = horizon + 1
    return ContractSpec(
        rights=rights, horizon=horizon,
        u_eval=LiquidationPayoff(a, b, cemetery), v_eval=LiquidationFactor(a, b, cemetery),
        volume=_volume_profile(volume, rights, horizon),
        refraction=ConstantRefraction(delta, cemetery),
        strike=0.0, name="liquidation",
    )


def preset_by_name(name: str, *, strike: float, rights: int, horizon: int, volume: Optional[str], delta: int,
                   alpha: float = 1.0, liq_a: float = 0.01, liq_b: float = 1.0) -> ContractSpec:
    """Build a preset from its command-line name; volume None picks the preset default."""
    if name == "swing":
        return preset_swing(strike, rights, horizon, volume or "unit", delta)
    if name == "exputil":
        return preset_exp_utility(alpha, strike, rights, horizon, volume or "unit", delta)
    if name == "liquidation":
        return preset_liquidation(liq_a, liq_b, rights, horizon, volume, delta)
    raise ContractError(f"unknown preset {name!r} (expected swing, exputil or liquidation)")
