#!/usr/bin/env python3
"""Set up a working swingdual checkout in one command.

Steps, each idempotent:
  1. `.venv` is created unless it already exists
  2. the package is installed editable (numpy, scipy, pandas come with it);
     `--dev` adds pytest
  3. `--oracle-check` runs the randomized finite-tree suite as an install sanity check
  4. `--run-tests` runs pytest; `--slow` includes the desk-scale price tables

  python bootstrap.py --dev --run-tests
  python bootstrap.py --oracle-check --oracle-count 50
"""
from __future__ import annotations
import argparse, os, platform, subprocess, sys, textwrap
from pathlib import Path

ROOT = Path(__file__).resolve().parent
VENV = ROOT / ".venv"


def sh(cmd: list[str], env: dict | None = None) -> None:
    print("[bootstrap] >", " ".join(cmd))
    subprocess.check_call(cmd, cwd=ROOT, env=env)


def venv_python(base: str) -> Path:
    """Interpreter inside .venv, creating the environment on first use."""
    if not VENV.exists():
        print("[bootstrap] no .venv yet, creating it")
        sh([base, "-m", "venv", str(VENV)])
    if platform.system() == "Windows":
        exe = VENV / "Scripts" / "python.exe"
        return exe if exe.exists() else VENV / "Scripts" / "python"
    return VENV / "bin" / "python"


def install(py: Path, with_dev: bool) -> None:
    sh([str(py), "-m", "pip", "install", "-q", "--upgrade", "pip", "setuptools", "wheel"])
    sh([str(py), "-m", "pip", "install", "-q", "-e", ".[dev]" if with_dev else "."])


def oracle_check(py: Path, count: int) -> None:
    sh([str(py), "-m", "swingdual.cli", "--oracle-check", "--oracle-count", str(count)])


def pytest_run(py: Path, slow: bool) -> None:
    env = dict(os.environ)
    if slow:
        env["SWINGDUAL_RUN_SLOW"] = "1"
    sh([str(py), "-m", "pytest", "-q"], env=env)


HINT = textwrap.dedent("""
    Activate the environment:
      PowerShell: .venv\\Scripts\\Activate.ps1
      bash/zsh : source .venv/bin/activate

    Then, for example:
      swingdual --rights 2,3 --delta 1 --n2 100000 --n3 500 --n4 50
      swingdual --config config/experiments/table1.cfg --out table1.csv
      swingdual --oracle-check

    Optional environment:
      SWINGDUAL_WORKERS=8   worker threads (1..64)
      LOG_LEVEL=DEBUG       JSON log lines on stderr
""")


def parse_args(argv: list[str]) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description="Create .venv and install swingdual")
    ap.add_argument("--dev", action="store_true", help="Also install pytest")
    ap.add_argument("--oracle-check", action="store_true", help="Run the finite-tree oracle suite after install")
    ap.add_argument("--oracle-count", type=int, default=200, help="Random instances for --oracle-check")
    ap.add_argument("--run-tests", action="store_true", help="Run pytest after install (implies --dev)")
    ap.add_argument("--slow", action="store_true", help="With --run-tests: include the price table reproductions")
    return ap.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    py = venv_python(sys.executable)
    install(py, with_dev=args.dev or args.run_tests)
    try:
        if args.oracle_check:
            oracle_check(py, args.oracle_count)
        if args.run_tests:
            pytest_run(py, args.slow)
    except subprocess.CalledProcessError as e:
        print(f"[bootstrap] step failed with exit code {e.returncode}")
        return e.returncode
    print(HINT)
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
