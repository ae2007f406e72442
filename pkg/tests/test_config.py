from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pathito.config import ConfigError, ExperimentConfig, dump_config, load_config, parse_config

ROOT = Path(__file__).resolve().parents[1]

BASE = """
seed = 3
[grid]
T = 1.0
n_steps = 10
[models.bm]
kind = "brownian"
sigma = 0.2
[functionals.f]
kind = "asian"
f_tilde = "square"
"""


@pytest.mark.parametrize("path", sorted((ROOT / "configs").glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_round_trip(path):
    cfg = load_config(path)
    assert parse_config(dump_config(cfg)) == cfg


def test_defaults_filled():
    cfg = parse_config(BASE + '[probe]\nfunctional = "f"\nmodel = "bm"\n')
    assert cfg.data["probe"]["n_paths"] == 100
    assert cfg.data["models"]["bm"] == {"kind": "brownian", "x0": 0.0, "b": 0.0, "sigma": 0.2}
    assert cfg.data["functionals"]["f"]["f_tilde"] == {"name": "square"}
    assert cfg.data["schema_version"] == "1.0"
    assert cfg.grid.n_steps == 10
    assert cfg.model("bm").sigma == 0.2


def test_overrides():
    cfg = parse_config(BASE)
    o = cfg.with_overrides(seed=9, out="x")
    assert o.seed == 9 and o.data["out"] == "x"
    assert cfg.seed == 3


@pytest.mark.parametrize(
    "extra",
    [
        '[probe]\nfunctional = "g"\nmodel = "bm"\n',
        '[probe]\nfunctional = "f"\nmodel = "bm"\nn_paths = 0\n',
        '[probe]\nfunctional = "f"\nmodel = "bm"\ntol = -1.0\n',
        "[bogus]\nx = 1\n",
        '[compare]\nmodel_X = "bm"\nmodel_Y = "bm"\npayoff = "f"\n',
        '[check_kbe]\nn_paths = 5\n',
        '[[check_kbe.cases]]\nfunctional = "f"\nmodel = "bm"\nexpect = "maybe"\n',
        '[check_ito]\nfunctionals = []\nmodels = ["bm"]\n',
        '[derivatives]\neps_v = -1.0\n',
        '[models.bad]\nkind = "brownian"\nsigma = -1.0\n',
        '[functionals.bad]\nkind = "asian"\nf_tilde = "nope"\n',
    ],
)
def test_invalid_configs(extra):
    with pytest.raises(ConfigError):
        parse_config(BASE + extra)


def test_schema_and_grid_errors():
    with pytest.raises(ConfigError):
        parse_config('schema_version = "2.0"\n' + BASE)
    with pytest.raises(ConfigError):
        parse_config("seed = 1\n")
    with pytest.raises(ConfigError):
        parse_config("seed = ")
    cfg = parse_config(BASE)
    with pytest.raises(ConfigError):
        cfg.section("compare")
    with pytest.raises(ConfigError):
        cfg.model("nope")


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**31),
    st.floats(0.1, 5.0),
    st.integers(1, 500),
    st.floats(0.0, 2.0),
    st.sampled_from(["square", "softplus", "identity", "tanh"]),
    st.lists(st.tuples(st.floats(-1, 1), st.floats(0.01, 5)), max_size=3),
)
def test_round_trip_property(seed, T, n, sigma, fname, atoms):
    data = {
        "seed": seed,
        "grid": {"T": T, "n_steps": n},
        "models": {
            "m": {"kind": "levy", "sigma": sigma, "jumps": [{"size": s, "intensity": i} for s, i in atoms]},
        },
        "functionals": {"f": {"kind": "integral", "f_tilde": fname}},
        "simulate": {"model": "m"},
    }
    import tomli_w

    cfg = parse_config(tomli_w.dumps(data))
    assert parse_config(cfg.dumps()) == cfg
    assert isinstance(cfg, ExperimentConfig)
