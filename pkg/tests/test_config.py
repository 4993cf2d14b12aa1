from contextlib import nullcontext

import pytest

from salad._schema import PruningVariant, RunConfig, SelfAssessVariant
from salad.config import (
    EFFECTIVE_CONFIG_NAME,
    apply_overrides,
    effective_config_yaml,
    load_config,
    parse,
    strategy_overrides,
    verify,
    write_effective_config,
)
from salad.exceptions import ConfigError, UnableToParse
from salad.utils import yaml


def test_seed_is_inherited(tiny_config_file):
    cfg = load_config(tiny_config_file)
    assert cfg.seed == 7
    assert cfg.synth.seed == cfg.model.seed == cfg.train.seed == 7
    assert cfg.model.head_widths == (8, 6)


def test_section_seed_wins():
    cfg = verify({"seed": 1, "model": {"seed": 5}})
    assert cfg.model.seed == 5
    assert cfg.train.seed == 1


def test_missing_seed_is_named():
    with pytest.raises(ConfigError, match="seed") as exc:
        verify({})
    assert exc.value.exit_code == 2
    assert "- <root>: 'seed' is a required property" in exc.value.error_msg()


@pytest.mark.parametrize(
    "info, expectation",
    (
        pytest.param({"seed": 0}, nullcontext(), id="defaults"),
        pytest.param({"seed": 0, "colour": "red"}, pytest.raises(ConfigError, match="colour"), id="unknown-key"),
        pytest.param(
            {"seed": 0, "train": {"pruning": "sometimes"}},
            pytest.raises(ConfigError, match="train.pruning"),
            id="bad-enum",
        ),
        pytest.param(
            {"seed": 0, "weights": {"mu": 0.5}}, pytest.raises(ConfigError, match="weights"), id="misplaced"
        ),
        pytest.param(
            {"seed": 0, "train": {"weights": {"mu": 1.5}}},
            pytest.raises(ConfigError, match="train.weights.mu"),
            id="mu-range",
        ),
        pytest.param(
            {"seed": 0, "evaluation": {"thresholds": "anet"}}, nullcontext(), id="preset"
        ),
        pytest.param(
            {"seed": 0, "evaluation": {"thresholds": [0.3, 0.7]}}, nullcontext(), id="threshold-list"
        ),
    ),
)
def test_verify(info, expectation):
    with expectation:
        assert isinstance(verify(info), RunConfig)


def test_every_problem_is_listed():
    with pytest.raises(ConfigError) as exc:
        verify({"seed": "x", "train": {"epochs": -1}})
    assert len(exc.value.problems) == 2


def test_overrides():
    data = {"seed": 1, "train": {"epochs": 3}}
    apply_overrides(data, ["train.epochs=0", "train.weights.mu=0.25", "inference.top_k=null", "seed=4"])
    assert data == {
        "seed": 4,
        "train": {"epochs": 0, "weights": {"mu": 0.25}},
        "inference": {"top_k": None},
    }
    cfg = verify(data)
    assert cfg.train.weights.mu == 0.25


@pytest.mark.parametrize(
    "override, match",
    (
        pytest.param("train.epochs", "key=value", id="no-value"),
        pytest.param("=3", "key=value", id="no-key"),
        pytest.param("seed.value=3", "not a section", id="scalar-parent"),
        pytest.param("train.epochs=[1", "unreadable", id="bad-yaml"),
    ),
)
def test_bad_overrides(override, match):
    with pytest.raises(ConfigError, match=match):
        apply_overrides({"seed": 1}, [override])


@pytest.mark.parametrize(
    "strategy, expected",
    (
        pytest.param("top1iou", ["train.pruning=top1iou"], id="pruning"),
        pytest.param("iou_threshold", ["train.assignment=iou_threshold"], id="assignment"),
        pytest.param("salad", ["train.pruning=salad", "train.assignment=salad"], id="both"),
    ),
)
def test_strategy_overrides(strategy, expected):
    assert strategy_overrides(strategy) == expected


def test_unknown_strategy():
    with pytest.raises(ConfigError, match="allowed: confidence_threshold"):
        strategy_overrides("greedy")


def test_strategy_reaches_the_config(tiny_config_file):
    cfg = load_config(tiny_config_file, strategy_overrides("random"))
    assert cfg.train.pruning == PruningVariant.RANDOM
    assert cfg.train.assignment == SelfAssessVariant.SALAD


def test_jinja_template(tmp_path, monkeypatch):
    monkeypatch.setenv("SALAD_TEST_EPOCHS", "3")
    path = tmp_path / "templated.yaml"
    path.write_text(
        "{% set base = 21 %}\n"
        "seed: {{ 2 * base }}\n"
        "train:\n"
        "  epochs: {{ environ['SALAD_TEST_EPOCHS'] }}\n"
    )
    cfg = load_config(path)
    assert cfg.seed == 42
    assert cfg.train.epochs == 3


def test_unparseable_file(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("seed: [1\n")
    with pytest.raises(UnableToParse):
        parse(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="could not open"):
        parse(tmp_path / "absent.yaml")


def test_non_mapping_file(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        parse(path)


def test_effective_config_round_trip(tmp_path, tiny_config_file):
    cfg = load_config(tiny_config_file, ["train.pruning=frozen"])
    path = write_effective_config(cfg, tmp_path)
    assert path.name == EFFECTIVE_CONFIG_NAME
    echoed = yaml.load(path.read_text())
    assert echoed["train"]["pruning"] == "frozen"
    assert echoed["model"]["head_widths"] == [8, 6]
    assert load_config(path) == cfg
    assert effective_config_yaml(load_config(path)) == path.read_text()
