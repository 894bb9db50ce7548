"""Experiment configuration and runtime tuning.

Precedence for experiment settings: dataclass defaults, then a flat
``key = value`` file, then command-line flags. Runtime tuning (thread count,
nested-simulation chunk size) is read from the environment with clamping.
"""
from __future__ import annotations
import os
from dataclasses import asdict, dataclass, replace
from itertools import product
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from .logging_util import info, warn

DEFAULT_WORKERS = 1
MIN_WORKERS = 1
MAX_WORKERS = 64
DEFAULT_CHUNK_PATHS = 64
MIN_CHUNK_PATHS = 1
MAX_CHUNK_PATHS = 4096

PRESETS = ("swing", "exputil", "liquidation")
VOLUMES = ("unit", "offpeak", "full")
BASES = ("default", "compact")
N1_UNIT = 1000
N1_OFFPEAK = 10000


class ConfigError(ValueError):
    """Invalid experiment configuration; `problems` lists every issue found."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("invalid experiment config: " + "; ".join(self.problems))


def parse_int_list(raw: str) -> Tuple[int, ...]:
    items = [p.strip() for p in str(raw).split(",") if p.strip()]
    return tuple(int(p) for p in items)


def _bool(raw: str) -> bool:
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(raw: str):
        text = str(raw).strip()
        return None if text.lower() in ("", "none") else parse(text)
    return inner


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a table run.

    `delta` and `rights` hold one or more values; the table grid is their
    product and run_experiment needs exactly one of each.
    """
    # model
    sigma: float = 0.5
    meanrev: float = 0.9
    mu: float = 0.0
    s0: float = 1.0
    horizon: int = 50
    # contract
    preset: str = "swing"
    strike: float = 1.0
    rights: Tuple[int, ...] = (2,)
    delta: Tuple[int, ...] = (1,)
    volume: Optional[str] = None
    alpha: float = 1.0
    liq_a: float = 0.01
    liq_b: float = 1.0
    # simulation sizes
    n1: Optional[int] = None
    n2: int = 300_000
    n3: int = 2000
    n4: int = 100
    seed: int = 0
    basis: str = "default"
    variance_reduction: bool = True
    # execution and output
    workers: Optional[int] = None
    chunk: Optional[int] = None
    out: Optional[str] = None
    db: Optional[str] = None
    diagnostics: Optional[str] = None
    timing: bool = True

    @property
    def regression_paths(self) -> int:
        """N1, defaulting to the larger off-peak size for the off-peak profile."""
        if self.n1 is not None:
            return self.n1
        return N1_OFFPEAK if self.volume == "offpeak" else N1_UNIT

    def grid(self) -> List[Tuple[int, int]]:
        return list(product(self.delta, self.rights))

    def cell(self, delta: int, rights: int) -> "ExperimentConfig":
        return replace(self, delta=(int(delta),), rights=(int(rights),))

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Replace every field whose override is not None."""
        chosen = {k: v for k, v in overrides.items() if v is not None}
        unknown = sorted(set(chosen) - set(_PARSERS))
        if unknown:
            raise ConfigError([f"unknown setting {k!r}" for k in unknown])
        return replace(self, **chosen)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    # --- Loading --------------------------------------------------------------------
    @classmethod
    def from_mapping(cls, values: Dict[str, str]) -> "ExperimentConfig":
        problems = []
        parsed: Dict[str, Any] = {}
        for key, raw in values.items():
            parse = _PARSERS.get(key)
            if parse is None:
                problems.append(f"unknown setting {key!r}")
                continue
            try:
                parsed[key] = parse(raw)
            except ValueError:
                problems.append(f"{key}: cannot parse {raw!r}")
        if problems:
            raise ConfigError(problems)
        return cls(**parsed)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Flat ``key = value`` file; '#' starts a comment."""
        values: Dict[str, str] = {}
        problems = []
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError([f"cannot read {path}: {e}"]) from e
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(f"{path}:{number}: expected key = value")
                continue
            key, raw = (p.strip() for p in line.split("=", 1))
            values[key.replace("-", "_")] = raw
        if problems:
            raise ConfigError(problems)
        config = cls.from_mapping(values)
        info("config_loaded", path=str(path), keys=sorted(values))
        return config

    # --- Validation -----------------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        problems = []
        if not self.sigma >= 0:
            problems.append(f"sigma must be >= 0, got {self.sigma}")
        if not self.s0 > 0:
            problems.append(f"s0 must be > 0, got {self.s0}")
        if self.horizon < 1:
            problems.append(f"horizon must be >= 1, got {self.horizon}")
        if self.preset not in PRESETS:
            problems.append(f"preset must be one of {', '.join(PRESETS)}, got {self.preset!r}")
        if self.volume is not None and self.volume not in VOLUMES:
            problems.append(f"volume must be one of {', '.join(VOLUMES)}, got {self.volume!r}")
        if self.basis not in BASES:
            problems.append(f"basis must be one of {', '.join(BASES)}, got {self.basis!r}")
        if any(d < 1 for d in self.delta):
            problems.append(f"delta values must be >= 1, got {list(self.delta)}")
        if any(l < 1 for l in self.rights):
            problems.append(f"rights values must be >= 1, got {list(self.rights)}")
        for name in ("n2", "n3", "n4"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n1 is not None and self.n1 < 1:
            problems.append(f"n1 must be >= 1, got {self.n1}")
        if self.seed < 0:
            problems.append(f"seed must be >= 0, got {self.seed}")
        if self.preset == "exputil" and not self.alpha > 0:
            problems.append(f"alpha must be > 0, got {self.alpha}")
        if self.preset == "liquidation":
            if not (self.liq_a > 0 and self.liq_b > 0):
                problems.append(f"liq_a and liq_b must be > 0, got {self.liq_a}, {self.liq_b}")
            elif self.horizon * self.liq_a > 1:
                problems.append(f"liquidation needs horizon * liq_a <= 1, got {self.horizon * self.liq_a:g}")
        if self.workers is not None and not MIN_WORKERS <= self.workers <= MAX_WORKERS:
            problems.append(f"workers must lie in {MIN_WORKERS}..{MAX_WORKERS}, got {self.workers}")
        if self.chunk is not None and not MIN_CHUNK_PATHS <= self.chunk <= MAX_CHUNK_PATHS:
            problems.append(f"chunk must lie in {MIN_CHUNK_PATHS}..{MAX_CHUNK_PATHS}, got {self.chunk}")
        if problems:
            raise ConfigError(problems)
        return self


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "sigma": float, "meanrev": float, "mu": float, "s0": float, "horizon": int,
    "preset": str, "strike": float, "rights": parse_int_list, "delta": parse_int_list,
    "volume": _optional(str), "alpha": float, "liq_a": float, "liq_b": float,
    "n1": _optional(int), "n2": int, "n3": int, "n4": int, "seed": int,
    "basis": str, "variance_reduction": _bool,
    "workers": _optional(int), "chunk": _optional(int), "out": _optional(str),
    "db": _optional(str), "diagnostics": _optional(str), "timing": _bool,
}


@dataclass
class RuntimeSettings:
    workers: int = DEFAULT_WORKERS
    chunk_paths: int = DEFAULT_CHUNK_PATHS

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        def _int(name: str, default: int) -> int:
            raw = os.environ.get(name)
            if raw is None:
                return default
            try:
                return int(raw)
            except ValueError:
                warn("invalid_env_int", key=name, value=raw, default=default)
                return default
        workers = _int("SWINGDUAL_WORKERS", DEFAULT_WORKERS)
        chunk = _int("SWINGDUAL_CHUNK_PATHS", DEFAULT_CHUNK_PATHS)
        # Clamp
        adjusted = {}
        if workers < MIN_WORKERS or workers > MAX_WORKERS:
            adjusted["workers"] = workers
            workers = min(MAX_WORKERS, max(MIN_WORKERS, workers))
        if chunk < MIN_CHUNK_PATHS or chunk > MAX_CHUNK_PATHS:
            adjusted["chunk_paths"] = chunk
            chunk = min(MAX_CHUNK_PATHS, max(MIN_CHUNK_PATHS, chunk))
        if adjusted:
            warn("runtime_settings_clamped", original=adjusted, clamped={"workers": workers, "chunk_paths": chunk})
        return cls(workers=workers, chunk_paths=chunk)

    def resolve(self, config: ExperimentConfig) -> "RuntimeSettings":
        """Explicit config values win over the environment."""
        return RuntimeSettings(workers=config.workers or self.workers, chunk_paths=config.chunk or self.chunk_paths)
