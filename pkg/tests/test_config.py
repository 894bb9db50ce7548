import pathlib
from dataclasses import fields

import pytest

from swingdual.config import (_PARSERS, ConfigError, ExperimentConfig, MAX_CHUNK_PATHS, MAX_WORKERS,
                              RuntimeSettings, parse_int_list)

PROJECT_ROOT = pathlib.Path(__file__).resolve().parents[1]


def test_defaults_follow_published_setup():
    cfg = ExperimentConfig()
    assert (cfg.sigma, cfg.meanrev, cfg.mu, cfg.s0, cfg.horizon, cfg.strike) == (0.5, 0.9, 0.0, 1.0, 50, 1.0)
    assert (cfg.n2, cfg.n3, cfg.n4) == (300_000, 2000, 100)
    assert cfg.regression_paths == 1000
    assert ExperimentConfig(volume="offpeak").regression_paths == 10000
    assert ExperimentConfig(volume="offpeak", n1=50).regression_paths == 50
    cfg.validate()


def test_every_field_has_a_parser():
    assert set(_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def test_grid_and_cells():
    cfg = ExperimentConfig(delta=(1, 2), rights=(2, 3, 4))
    assert cfg.grid() == [(1, 2), (1, 3), (1, 4), (2, 2), (2, 3), (2, 4)]
    cell = cfg.cell(2, 3)
    assert cell.delta == (2,) and cell.rights == (3,)
    assert ExperimentConfig(delta=(), rights=(2,)).grid() == []
    assert parse_int_list("1, 2,5") == (1, 2, 5)


def test_from_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# desk run\npreset = exputil\nalpha = 0.5\n\nrights = 2,3  # two rows\n"
                    "n1 = none\nvariance-reduction = off\nout = rows.csv\n", encoding="utf-8")
    cfg = ExperimentConfig.from_file(path)
    assert cfg.preset == "exputil" and cfg.alpha == 0.5
    assert cfg.rights == (2, 3)
    assert cfg.n1 is None and cfg.variance_reduction is False
    assert cfg.out == "rows.csv"


def test_from_file_reports_every_problem(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("sigma = high\nbarrier = 3\nn2 = 10\n", encoding="utf-8")
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig.from_file(path)
    assert len(exc.value.problems) == 2
    assert "sigma" in str(exc.value) and "barrier" in str(exc.value)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.cfg")


def test_validate_collects_problems():
    cfg = ExperimentConfig(sigma=-1.0, n3=0, delta=(0, 1), preset="liquidation", liq_a=0.1, workers=500)
    with pytest.raises(ConfigError) as exc:
        cfg.validate()
    text = " ".join(exc.value.problems)
    for needle in ("sigma", "n3", "delta", "liquidation", "workers"):
        assert needle in text
    assert isinstance(exc.value, ValueError)


def test_overrides_skip_none():
    cfg = ExperimentConfig().with_overrides(seed=7, n2=None, rights=(5,))
    assert cfg.seed == 7 and cfg.n2 == 300_000 and cfg.rights == (5,)
    with pytest.raises(ConfigError):
        ExperimentConfig().with_overrides(barrier=2)


def test_runtime_settings_from_env(monkeypatch, capsys):
    monkeypatch.delenv('SWINGDUAL_WORKERS', raising=False)
    monkeypatch.delenv('SWINGDUAL_CHUNK_PATHS', raising=False)
    assert RuntimeSettings.from_env() == RuntimeSettings(1, 64)
    monkeypatch.setenv('SWINGDUAL_WORKERS', '1000')
    monkeypatch.setenv('SWINGDUAL_CHUNK_PATHS', '0')
    settings = RuntimeSettings.from_env()
    assert settings.workers == MAX_WORKERS and settings.chunk_paths == 1
    assert 'runtime_settings_clamped' in capsys.readouterr().err
    monkeypatch.setenv('SWINGDUAL_CHUNK_PATHS', 'lots')
    assert RuntimeSettings.from_env().chunk_paths == 64
    assert 'invalid_env_int' in capsys.readouterr().err
    assert MAX_CHUNK_PATHS == 4096


def test_explicit_workers_win():
    settings = RuntimeSettings(workers=8, chunk_paths=32)
    resolved = settings.resolve(ExperimentConfig(workers=2))
    assert resolved.workers == 2 and resolved.chunk_paths == 32
    assert settings.resolve(ExperimentConfig()).workers == 8


@pytest.mark.parametrize("name", ["table1.cfg", "table2.cfg", "table3_offpeak.cfg"])
def test_committed_experiment_files_are_valid(name):
    cfg = ExperimentConfig.from_file(PROJECT_ROOT / "config" / "experiments" / name).validate()
    assert cfg.grid()
