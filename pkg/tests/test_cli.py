import json
from pathlib import Path

import pytest

from pathito.cli import main

HEAD = """
seed = 21
[grid]
T = 1.0
n_steps = 40
[models.bm]
kind = "brownian"
x0 = 1.0
sigma = 0.3
[models.bm_low]
kind = "brownian"
x0 = 1.0
sigma = 0.2
[models.flat]
kind = "brownian"
x0 = 0.5
sigma = 0.0
[models.cp]
kind = "compound_poisson"
x0 = 1.0
rate = 2.0
jumps = [{ size = 0.2, prob = 0.5 }, { size = -0.1, prob = 0.5 }]
[functionals.asian]
kind = "asian"
f_tilde = "softplus"
[functionals.asian_sq]
kind = "asian"
f_tilde = "square"
[functionals.integral]
kind = "integral_of_function"
g = "tanh"
rho = "one"
[functionals.payoff]
kind = "integral"
f_tilde = "tanh"
"""

SECTIONS = {
    "simulate": '[simulate]\nmodel = "cp"\nn_paths = 50\nn_files = 3\n',
    "check-ito": '[check_ito]\nfunctionals = ["integral", "asian"]\nmodels = ["bm", "cp"]\nladder = [20, 40]\nn_paths = 20\nmin_order = 0.5\n',
    "check-kbe": '[check_kbe]\nn_paths = 5\nn_time_probes = 3\n[[check_kbe.cases]]\nfunctional = "payoff"\nmodel = "cp"\nM = 300\n',
    "compare": '[compare]\nmodel_X = "bm"\nmodel_Y = "bm_low"\npayoff = "asian_sq"\ntheorem = "emm_cx"\nn_out = 5000\nM = 300\nn_hyp_paths = 4\nn_hyp_times = 3\n',
    "probe": '[probe]\nfunctional = "asian"\nmodel = "bm"\nn_paths = 10\nproperties = ["convex", "monotone"]\n',
}

OUTPUTS = {
    "simulate": ["manifest.json", "paths/path_00000.csv", "paths/path_00002.csv"],
    "check-ito": ["ito_report.json", "ito_convergence.csv"],
    "check-kbe": ["kbe_report.json", "kbe_report.csv"],
    "compare": ["order_report.json", "order_report.csv"],
    "probe": ["probe_report.json", "derivatives.csv"],
}


def write_cfg(tmp_path, cmd, extra=""):
    f = tmp_path / f"{cmd}.toml"
    f.write_text(HEAD + SECTIONS[cmd] + extra, encoding="utf-8")
    return f


def snapshot(out: Path) -> dict:
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("cmd", sorted(SECTIONS))
def test_command_outputs_and_determinism(tmp_path, cmd):
    cfg = write_cfg(tmp_path, cmd)
    a = tmp_path / "a"
    assert main([cmd, "--config", str(cfg), "--out", str(a)]) == 0
    for name in OUTPUTS[cmd]:
        assert (a / name).exists(), name
    first = snapshot(a)
    # rerun into the same directory with a different thread count
    assert main([cmd, "--config", str(cfg), "--out", str(a), "--threads", "2"]) == 0
    assert snapshot(a) == first
    js = [p for p in OUTPUTS[cmd] if p.endswith(".json")][0]
    doc = json.loads((a / js).read_text(encoding="utf-8"))
    assert doc["schema_version"] == "1.0"
    assert doc["config"]["seed"] == 21
    assert doc["pass"] is True


def test_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, "simulate")
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "22"])
    a = (tmp_path / "a" / "paths" / "path_00000.csv").read_bytes()
    b = (tmp_path / "b" / "paths" / "path_00000.csv").read_bytes()
    assert a != b
    doc = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert doc["root_seed"] == 22


def test_zero_noise_simulation_is_constant(tmp_path):
    cfg = write_cfg(tmp_path, "simulate", "").read_text().replace('model = "cp"', 'model = "flat"')
    f = tmp_path / "flat.toml"
    f.write_text(cfg)
    assert main(["simulate", "--config", str(f), "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "paths" / "path_00001.csv").read_text().splitlines()[1:]
    assert {r.split(",")[1] for r in rows} == {"0.5"}
    assert {r.split(",")[2] for r in rows} == {"0"}


def test_failing_verdict_exit_code(tmp_path, capsys):
    # the payoff is concave, so the convexity probe fails
    text = HEAD + SECTIONS["probe"].replace('functional = "asian"', 'functional = "neg"')
    text += '[functionals.neg]\nkind = "asian"\nf_tilde = "neg_square"\n'
    f = tmp_path / "neg.toml"
    f.write_text(text)
    assert main(["probe", "--config", str(f), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "FAIL probe convex" in err
    doc = json.loads((tmp_path / "o" / "probe_report.json").read_text())
    assert doc["pass"] is False


def test_expected_failure_case_passes(tmp_path):
    extra = '[[check_kbe.cases]]\nfunctional = "payoff"\nmodel = "cp"\nM = 300\nexpect = "fail"\n'
    f = write_cfg(tmp_path, "check-kbe", extra)
    # the second case expects a failure that does not happen, so the run fails
    assert main(["check-kbe", "--config", str(f), "--out", str(tmp_path / "o")]) == 1


def test_config_errors_exit_2(tmp_path, capsys):
    f = tmp_path / "bad.toml"
    f.write_text(HEAD + '[probe]\nfunctional = "missing"\nmodel = "bm"\n')
    assert main(["probe", "--config", str(f), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["probe", "--config", str(tmp_path / "nope.toml")]) == 2
    f2 = write_cfg(tmp_path, "probe")
    assert main(["compare", "--config", str(f2), "--out", str(tmp_path / "o")]) == 2
    assert main(["probe", "--config", str(f2), "--threads", "0"]) == 2
