from pathlib import Path

import pytest

from ucprop.config import EXPERIMENTS, ScenarioConfig, dump_config, load_config, parse_config
from ucprop.constants import ConstantsProfile
from ucprop.errors import ConfigError

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))


def violations(text):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    return exc.value.violations


def test_minimal():
    cfg = parse_config("experiment: doubling\n")
    assert cfg.experiment == "doubling"
    assert cfg.domain.dim == 3
    assert cfg.profile.kappa == 0.24


def test_experiment_required():
    assert "config.experiment: required" in violations("seed: 1\n")


def test_kappa_bound_message():
    v = violations("experiment: doubling\nconstants: {kappa: 0.3}\n")
    assert any("kappa < 1/4 required" in s for s in v)


def test_unknown_keys_reported_with_path():
    v = violations("experiment: doubling\ngrid: {n: 33, size: 4}\nconstants: {zeta: 1}\n")
    assert "config.grid.size: unknown key" in v
    assert "constants.zeta: unknown key" in v


def test_type_errors_reported_with_path():
    v = violations("experiment: doubling\nensemble: {size: ten}\nsweep: {epsilons: 0.1}\n")
    assert "config.ensemble.size: expected int, got str" in v
    assert "config.sweep.epsilons: expected list, got float" in v


def test_all_violations_collected():
    v = violations("experiment: nope\ndomain: {dim: 4}\nsweep: {step_ratio: 2.0, stride: 0}\n")
    for msg in (
        "experiment: unknown selector 'nope'",
        "domain.dim: must be 2 or 3",
        "sweep.stride: at least 1 required",
        "sweep.step_ratio: > 2 required",
    ):
        assert msg in v


def test_malformed_yaml():
    assert violations("experiment: [\n")[0].startswith("malformed YAML")


def test_singular_terms_checked():
    text = "experiment: solve\ncoefficients:\n  singular:\n    - {target: Q, center: [0, 0]}\n"
    v = violations(text)
    assert "coefficients.singular[0].target: one of V, W1, W2" in v
    assert "coefficients.singular[0].center: length must equal domain.dim" in v


def test_int_accepted_for_float():
    cfg = parse_config("experiment: dyadic\nsweep: {margin: 1}\n")
    assert cfg.sweep.margin == 1.0 and isinstance(cfg.sweep.margin, float)


def test_roundtrip():
    cfg = ScenarioConfig(experiment="growth-linf", seed=3)
    cfg.constants = {"kappa": 0.249, "C": [2.0] * 11}
    back = parse_config(dump_config(cfg))
    assert back.to_dict() == cfg.to_dict()
    assert back.profile == ConstantsProfile(kappa=0.249, C=(2.0,) * 11)


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.experiment in EXPERIMENTS
    assert parse_config(dump_config(cfg)).to_dict() == cfg.to_dict()


def test_every_experiment_has_a_config():
    assert {load_config(p).experiment for p in CONFIGS} == set(EXPERIMENTS)


def test_profile_derived_constants():
    p = ConstantsProfile(H0=2.0, C=tuple(range(1, 12)))
    assert p.H1 == 10.0
    assert p.C0 == 1.0 and p.C7 == 8.0
    assert p.replace(kappa=0.1).kappa == 0.1
    with pytest.raises(ConfigError):
        ConstantsProfile(sigma=0.4)
    with pytest.raises(ConfigError):
        ConstantsProfile.from_dict({"nope": 1})
