import logging
from pathlib import Path

import pytest

from app.config import EXIT_CONFIG_ERROR, configure_logging
from app.exceptions import ConfigError
from app.models import ExperimentKind
from app.schemas import load_run_config, nest


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "taskrel.env"
    path.write_text(
        "# desk-scale task relatedness\n"
        "experiment=taskrel\n"
        "seed=3\n"
        "zoo.thetas=0, 30,90\n"
        "zoo.epochs=5\n"
        "sampler.refs=64\n"
        "curve.steps=16\n"
        "sweep.refs=8,16\n"
    )
    return path


def test_loads_nested_sections(config_file):
    cfg = load_run_config(str(config_file))
    assert cfg.experiment == ExperimentKind.TASKREL
    assert cfg.zoo.thetas == [0.0, 30.0, 90.0]
    assert cfg.zoo.epochs == 5
    assert cfg.sampler.refs == 64
    assert cfg.curve.steps == 16 and cfg.curve.baseline == "zero"
    assert cfg.sweep.refs == [8, 16]
    assert cfg.sampler_seed == 3


def test_overrides_win_over_the_file(config_file):
    cfg = load_run_config(str(config_file), {"curve.steps": 32, "sampler.seed": 9, "jobs": None})
    assert cfg.curve.steps == 32
    assert cfg.sampler_seed == 9
    assert cfg.jobs == 1


def test_unknown_keys_are_rejected(config_file):
    with pytest.raises(ConfigError):
        load_run_config(str(config_file), {"curve.stpes": 8})
    with pytest.raises(ConfigError):
        load_run_config(str(config_file), {"verbose": "yes"})


def test_invalid_values_are_config_errors(config_file):
    with pytest.raises(ConfigError) as raised:
        load_run_config(str(config_file), {"curve.steps": 1})
    assert raised.value.exit_code == EXIT_CONFIG_ERROR
    with pytest.raises(ConfigError):
        load_run_config(str(config_file), {"experiment": "benchmark"})


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.env"))


def test_referenced_files_must_exist(config_file, tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(config_file), {"sampler.refset_file": str(tmp_path / "nope.mgrs")})
    with pytest.raises(ConfigError):
        load_run_config(str(config_file), {"sampler.kind": "given"})
    cfg = load_run_config(None, {"experiment": "unlearn", "sampler.kind": "given"})
    assert cfg.sampler.kind == "given"


def test_hash_ignores_parallelism_and_location(config_file):
    base = load_run_config(str(config_file))
    assert load_run_config(str(config_file), {"jobs": 8, "output_dir": "elsewhere"}).hash == base.hash
    assert load_run_config(str(config_file), {"curve.steps": 64}).hash != base.hash


def test_nest_builds_sections():
    assert nest({"a.b.c": 1, "a.d": 2, "e": 3}) == {"a": {"b": {"c": 1}, "d": 2}, "e": 3}
    with pytest.raises(ConfigError):
        nest({"a": 1, "a.b": 2})


def test_configure_logging_sets_the_level():
    configure_logging("DEBUG")
    assert logging.getLogger().level == logging.DEBUG
    configure_logging("WARNING")


@pytest.mark.parametrize("path", sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.env")),
                         ids=lambda path: path.stem)
def test_shipped_configs_validate(path):
    cfg = load_run_config(str(path))
    assert cfg.experiment.value == path.stem
