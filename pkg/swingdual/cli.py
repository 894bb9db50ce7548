"""Command-line entry point: price a grid of (delta, L) contracts end to end.

Each table row runs
  1. regression on N1 paths (fit_continuation),
  2. the low-biased estimate on N2 fresh paths (lower_bound),
  3. nested simulation with N3 outer and N4 inner paths (sample_snell),
  4. the pathwise dual maximum and the confidence interval (upper_bound),
with the four seeds spawned from the master seed. Every row of a table uses
the same derived seeds, so rows share their random numbers.
"""
from __future__ import annotations
import argparse, json, sys, time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import PACKAGE_VERSION, RESULT_SCHEMA_VERSION
from .config import ConfigError, ExperimentConfig, RuntimeSettings, parse_int_list
from .contract import ContractError, ContractSpec, preset_by_name
from .dual import confidence_interval, dump_diagnostics, sample_snell, upper_bound
from .logging_util import error, info
from .model import MarketModel, simulate_paths
from .oracle import run_oracle_suite
from .primal import lower_bound
from .regress import BasisSet, ContinuationTable, fit_continuation
from .store import ResultStore, fingerprint

CSV_COLUMNS = ["delta", "L", "lower", "upper", "ci_low", "ci_high", "std_lower", "std_upper", "seconds"]


@dataclass(frozen=True)
class ResultRow:
    delta: int
    rights: int
    lower: float
    upper: float
    ci_low: float
    ci_high: float
    std_lower: float
    std_upper: float
    seconds: float

    @property
    def relative_gap(self) -> float:
        return (self.upper - self.lower) / abs(self.lower) if self.lower else float("nan")

    @classmethod
    def failed(cls, delta: int, rights: int) -> "ResultRow":
        nan = float("nan")
        return cls(delta, rights, nan, nan, nan, nan, nan, nan, nan)

    def as_record(self) -> dict:
        record = asdict(self)
        record["L"] = record.pop("rights")
        return {k: record[k] for k in CSV_COLUMNS}


def build_model(config: ExperimentConfig) -> MarketModel:
    return MarketModel(sigma=config.sigma, meanrev=config.meanrev, mu=config.mu, s0=config.s0,
                       horizon=config.horizon)


def _single_cell(config: ExperimentConfig) -> Tuple[int, int]:
    if len(config.delta) != 1 or len(config.rights) != 1:
        raise ConfigError([f"one experiment needs a single delta and rights value, got "
                           f"delta={list(config.delta)} rights={list(config.rights)}; use run_table for grids"])
    return config.delta[0], config.rights[0]


def build_contract(config: ExperimentConfig) -> ContractSpec:
    delta, rights = _single_cell(config)
    return preset_by_name(config.preset, strike=config.strike, rights=rights, horizon=config.horizon,
                          volume=config.volume, delta=delta, alpha=config.alpha,
                          liq_a=config.liq_a, liq_b=config.liq_b)


def derive_seeds(master: int) -> Tuple[int, int, int, int]:
    """Independent seeds for regression, lower-bound, outer and inner paths."""
    children = np.random.SeedSequence(master).spawn(4)
    return tuple(int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)  # type: ignore[return-value]


def _table_key(config: ExperimentConfig, seed: int) -> str:
    delta, rights = _single_cell(config)
    return fingerprint(schema=RESULT_SCHEMA_VERSION, sigma=config.sigma, meanrev=config.meanrev, mu=config.mu,
                       s0=config.s0, horizon=config.horizon, preset=config.preset, strike=config.strike,
                       rights=rights, delta=delta, volume=config.volume, alpha=config.alpha,
                       liq_a=config.liq_a, liq_b=config.liq_b, n1=config.regression_paths, seed=seed,
                       basis=config.basis)


def fit_or_load(config: ExperimentConfig, model: MarketModel, spec: ContractSpec, seed: int,
                workers: int, store: Optional[ResultStore] = None) -> ContinuationTable:
    """Step 1, reusing a cached table from the store when one matches."""
    key = _table_key(config, seed) if store is not None else None
    if store is not None:
        cached = store.load_table(key)
        if cached is not None:
            return cached
    paths = simulate_paths(model, config.regression_paths, seed, workers=workers)
    info("paths_simulated", purpose="regression", count=paths.count, seed=seed)
    table = fit_continuation(model, spec, paths, BasisSet.by_name(config.basis, spec.strike))
    if store is not None:
        store.save_table(key, table)
    return table


def run_experiment(config: ExperimentConfig, store: Optional[ResultStore] = None,
                   settings: Optional[RuntimeSettings] = None) -> ResultRow:
    """Steps 1-4 for one (delta, L) pair."""
    config.validate()
    delta, rights = _single_cell(config)
    settings = (settings or RuntimeSettings.from_env()).resolve(config)
    model = build_model(config)
    spec = build_contract(config)
    seed_fit, seed_lower, seed_outer, seed_inner = derive_seeds(config.seed)
    start = time.perf_counter()

    table = fit_or_load(config, model, spec, seed_fit, settings.workers, store)
    lower = lower_bound(table, spec, model, config.n2, seed_lower, workers=settings.workers)
    outer = simulate_paths(model, config.n3, seed_outer, workers=settings.workers)
    info("paths_simulated", purpose="outer", count=outer.count, seed=seed_outer)
    snell = sample_snell(table, spec, model, outer, config.n4, lower, seed_inner, workers=settings.workers,
                         variance_reduction=config.variance_reduction, chunk=settings.chunk_paths)
    upper = upper_bound(spec, snell, outer)
    ci_low, ci_high = confidence_interval(lower, upper)
    if config.diagnostics:
        dump_diagnostics(spec, snell, outer, upper, config.diagnostics.format(delta=delta, rights=rights))

    seconds = time.perf_counter() - start if config.timing else 0.0
    row = ResultRow(delta, rights, lower.mean, upper.mean, ci_low, ci_high, lower.std, upper.std, seconds)
    info("experiment_done", preset=config.preset, delta=delta, rights=rights, lower=row.lower, upper=row.upper,
         ci_low=ci_low, ci_high=ci_high, relative_gap=row.relative_gap, seconds=round(seconds, 3))
    if store is not None:
        store.record_row(row, config.to_dict(), config.preset)
    return row


def run_table(config: ExperimentConfig, grid: Optional[Sequence[Tuple[int, int]]] = None,
              store: Optional[ResultStore] = None,
              settings: Optional[RuntimeSettings] = None) -> Tuple[pd.DataFrame, List[Tuple[int, int]]]:
    """One row per (delta, L); failed rows are kept with NaN statistics.

    Returns the table and the list of failed cells. Writes CSV to config.out
    when set ("-" for stdout).
    """
    cells = list(grid if grid is not None else config.grid())
    settings = (settings or RuntimeSettings.from_env()).resolve(config)

    def run(cell: Tuple[int, int]) -> Tuple[ResultRow, bool]:
        delta, rights = cell
        try:
            return run_experiment(config.cell(delta, rights), store=store, settings=settings), True
        except Exception as e:
            error("row_failed", delta=delta, rights=rights, error=str(e), error_type=type(e).__name__)
            return ResultRow.failed(delta, rights), False

    if settings.workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=min(settings.workers, len(cells))) as pool:
            outcomes = list(pool.map(run, cells))
    else:
        outcomes = [run(c) for c in cells]
    frame = pd.DataFrame([row.as_record() for row, _ in outcomes], columns=CSV_COLUMNS)
    failures = [cell for cell, (_, ok) in zip(cells, outcomes) if not ok]
    if config.out:
        write_csv(frame, config.out)
        info("table_written", path=config.out, rows=len(frame), failures=len(failures))
    return frame, failures


def write_csv(frame: pd.DataFrame, out: str) -> None:
    target = sys.stdout if out == "-" else out
    frame.to_csv(target, index=False, float_format="%.6g", lineterminator="\n")


# --- Command line -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swingdual",
                                 description="Primal-dual Monte Carlo bounds for swing and multiple-exercise options")
    ap.add_argument("--version", action="version", version=f"%(prog)s {PACKAGE_VERSION}")
    ap.add_argument("--config", help="Flat key = value experiment file (flags override it)")
    g = ap.add_argument_group("model")
    g.add_argument("--sigma", type=float)
    g.add_argument("--meanrev", type=float, help="Mean-reversion speed k")
    g.add_argument("--mu", type=float)
    g.add_argument("--s0", type=float)
    g.add_argument("--horizon", type=int, help="Last exercise date T")
    g = ap.add_argument_group("contract")
    g.add_argument("--preset", choices=["swing", "exputil", "liquidation"])
    g.add_argument("--strike", type=float)
    g.add_argument("--delta", type=parse_int_list, help="Refraction period(s), comma separated")
    g.add_argument("--rights", type=parse_int_list, help="Number(s) of exercise rights L, comma separated")
    g.add_argument("--volume", choices=["unit", "offpeak", "full"])
    g.add_argument("--alpha", type=float, help="Risk aversion for exputil")
    g.add_argument("--liq-a", dest="liq_a", type=float, help="Liquidation impact decay a (needs T*a <= 1)")
    g.add_argument("--liq-b", dest="liq_b", type=float, help="Liquidation impact size b")
    g = ap.add_argument_group("simulation")
    for n, what in (("n1", "regression paths"), ("n2", "lower-bound paths"),
                    ("n3", "outer dual paths"), ("n4", "inner paths per outer state")):
        g.add_argument(f"--{n}", type=int, help=what.capitalize())
    g.add_argument("--seed", type=int, help="Master seed")
    g.add_argument("--basis", choices=["default", "compact"])
    g.add_argument("--no-variance-reduction", dest="variance_reduction", action="store_const", const=False,
                   help="Estimate date-0 Snell entries by nested simulation as well")
    g = ap.add_argument_group("execution and output")
    g.add_argument("--workers", type=int, help="Worker threads (overrides SWINGDUAL_WORKERS)")
    g.add_argument("--chunk", type=int, help="Outer paths per nested-simulation task")
    g.add_argument("--out", help="CSV output path ('-' for stdout, the default)")
    g.add_argument("--db", help="SQLite result store (rows and cached regression tables)")
    g.add_argument("--diagnostics", help="Per-path dual diagnostics CSV; may contain {delta} and {rights}")
    g.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="Write seconds = 0 so reruns give byte-identical CSV")
    g = ap.add_argument_group("oracle")
    g.add_argument("--oracle-check", action="store_true", help="Run the randomized finite-tree oracle suite and exit")
    g.add_argument("--oracle-count", type=int, default=200, help="Instances for --oracle-check")
    return ap


_OVERRIDE_FIELDS = ("sigma", "meanrev", "mu", "s0", "horizon", "preset", "strike", "delta", "rights", "volume",
                    "alpha", "liq_a", "liq_b", "n1", "n2", "n3", "n4", "seed", "basis", "variance_reduction",
                    "workers", "chunk", "out", "db", "diagnostics", "timing")


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    config = config.with_overrides(**{f: getattr(args, f) for f in _OVERRIDE_FIELDS})
    if config.out is None:
        config = config.with_overrides(out="-")
    config.validate()
    for delta, rights in config.grid():
        try:
            build_contract(config.cell(delta, rights))
        except ContractError as e:
            raise ConfigError([str(e)]) from e
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.oracle_check:
        report = run_oracle_suite(args.oracle_count, args.seed or 0)
        print(json.dumps(report, indent=2))
        return 0 if report["ok"] else 1
    try:
        config = load_config(args)
    except ConfigError as e:
        error("config_invalid", problems=e.problems)
        print(str(e), file=sys.stderr)
        return 2
    store = ResultStore(config.db) if config.db else None
    _, failures = run_table(config, store=store)
    return 1 if failures else 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
