"""Command-line front end.

Usage::

    pathito {simulate,check-ito,check-kbe,compare,probe} --config FILE [--out DIR] [--seed N] [--threads N]

Every command writes UTF-8 JSON (and CSV where tabular) into the output
directory. Reports embed the resolved config and a ``schema_version``. The exit
status is 0 iff every verdict passes; failing checks are listed on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .backwards import describe, ito_convergence, kbe_residual_profile
from .calculus import (
    closed_form,
    horizontal_derivative,
    probe_vertical_property,
    vertical_gradient,
    vertical_hessian,
)
from .comparison import ComparisonScenario, run_scenario
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config
from .functionals import EstimatedValuation
from .models import _simulate_parts, simulate_batch
from .pathspace import GridPath, stop, write_csv

log = logging.getLogger("pathito")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def _envelope(cfg: ExperimentConfig, command: str, body: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg.data, **body}


# ---------------------------------------------------------------------------
# commands; each returns a list of failure messages


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> list:
    s = cfg.section("simulate")
    model = cfg.model(s["model"])
    grid = cfg.grid
    parts = _simulate_parts(model, grid, s["n_paths"], cfg.seed, threads)
    paths = GridPath(grid, parts.values[..., None], parts.flags)
    n_files = min(s["n_files"], s["n_paths"])
    pdir = out / "paths"
    pdir.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(n_files):
        name = f"path_{i:05d}.csv"
        write_csv(paths[i], pdir / name)
        files.append(f"paths/{name}")
    counts = parts.counts.sum(axis=1)
    flagged = parts.flags.sum(axis=1)
    n = counts.size
    manifest = {
        "model": describe(model),
        "n_paths": int(n),
        "root_seed": cfg.seed,
        "seeding": "SeedSequence(root_seed).spawn per chunk of 1024 paths; path i is row i",
        "files": files,
        "jump_count_mean": float(counts.mean()),
        "jump_count_se": float(counts.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
        "flagged_steps_mean": float(flagged.mean()),
        "terminal_mean": float(paths.values[:, -1, 0].mean()),
        "pass": True,
    }
    _write_json(out / "manifest.json", _envelope(cfg, "simulate", manifest))
    return []


def cmd_check_ito(cfg: ExperimentConfig, out: Path, threads: int) -> list:
    s = cfg.section("check_ito")
    dcfg = cfg.derivatives()
    reports, rows, fails = [], [], []
    for i, fname in enumerate(s["functionals"]):
        for j, mname in enumerate(s["models"]):
            F, model = cfg.functional(fname), cfg.model(mname)
            seed = int(np.random.SeedSequence([cfg.seed, i, j]).generate_state(1)[0])
            log.info("ito residual %s x %s", fname, mname)
            r = ito_convergence(
                F, model, cfg.grid.T, tuple(s["ladder"]), s["n_paths"], seed, dcfg, s["min_order"], s["qv"], threads
            )
            d = r.to_dict()
            d.update(functional_name=fname, model_name=mname)
            reports.append(d)
            for n, mean, p95 in zip(r.n_steps, r.residual_mean, r.residual_p95):
                rows.append([SCHEMA_VERSION, fname, mname, n, _num(mean), _num(p95), _num(r.order), int(r.exact), int(r.passed)])
            if not r.passed:
                fails.append(f"check-ito {fname} x {mname}: order {r.order}")
    _write_json(out / "ito_report.json", _envelope(cfg, "check-ito", {"cells": reports, "pass": not fails}))
    _write_rows(
        out / "ito_convergence.csv",
        ["schema_version", "functional", "model", "n_steps", "residual_mean", "residual_p95", "order", "exact", "pass"],
        rows,
    )
    return fails


def cmd_check_kbe(cfg: ExperimentConfig, out: Path, threads: int) -> list:
    s = cfg.section("check_kbe")
    dcfg = cfg.derivatives()
    grid = cfg.grid
    reports, rows, fails = [], [], []
    for i, case in enumerate(s["cases"]):
        model = cfg.model(case["model"])
        chars = cfg.model(case.get("chars_model", case["model"]))
        ss = np.random.SeedSequence([cfg.seed, i]).spawn(2)
        vseed, pseed = (int(c.generate_state(1)[0]) for c in ss)
        G = EstimatedValuation(cfg.functional(case["functional"]), model, grid, case["M"], vseed, threads)
        log.info("kbe profile case %d", i)
        r = kbe_residual_profile(
            G, model, grid, s["n_paths"], s["n_time_probes"], pseed, dcfg,
            chars_model=chars, C1=s["C1"], C2=s["C2"], threshold=s["threshold"], threads=threads,
        )
        ok = r.passed == (case["expect"] == "pass")
        d = r.to_dict()
        d.update(case=case, verdict="pass" if ok else "fail")
        reports.append(d)
        rows.append([SCHEMA_VERSION, i, case["functional"], case["model"], case.get("chars_model", case["model"]),
                     _num(r.residual_mean), _num(r.residual_p95), _num(r.tol), _num(r.pass_rate), case["expect"], int(ok)])
        if not ok:
            fails.append(f"check-kbe case {i}: pass rate {r.pass_rate:.3f}, expected {case['expect']}")
    _write_json(out / "kbe_report.json", _envelope(cfg, "check-kbe", {"reports": reports, "pass": not fails}))
    _write_rows(
        out / "kbe_report.csv",
        ["schema_version", "case", "functional", "model", "chars_model", "residual_mean", "residual_p95", "tol", "pass_rate", "expect", "pass"],
        rows,
    )
    return fails


def cmd_compare(cfg: ExperimentConfig, out: Path, threads: int) -> list:
    s = cfg.section("compare")
    sc = ComparisonScenario(
        cfg.model(s["model_X"]), cfg.model(s["model_Y"]), cfg.functional(s["payoff"]), s["theorem"], cfg.grid,
        n_out=s["n_out"], M=s["M"], n_hyp_paths=s["n_hyp_paths"], n_hyp_times=s["n_hyp_times"], seed=cfg.seed,
        reversed=s["reversed"], bump=s["bump"], slack_tol=s["slack_tol"], kbe_threshold=s["kbe_threshold"],
        cfg=cfg.derivatives(),
    )
    rep = run_scenario(sc, hypotheses=s["hypotheses"], threads=threads)
    body = rep.to_dict()
    body.pop("schema_version")
    _write_json(out / "order_report.json", _envelope(cfg, "compare", body))
    (out / "order_report.csv").write_text(rep.to_csv(), encoding="utf-8")
    return [f"compare: {f}" for f in rep.failures()]


def cmd_probe(cfg: ExperimentConfig, out: Path, threads: int) -> list:
    s = cfg.section("probe")
    F = cfg.functional(s["functional"])
    model = cfg.model(s["model"])
    grid = cfg.grid
    dcfg = cfg.derivatives()
    ss = np.random.SeedSequence(cfg.seed).spawn(2)
    pseed, tseed = (int(c.generate_state(1)[0]) for c in ss)
    paths = simulate_batch(model, grid, s["n_paths"], pseed, threads)
    ks = np.random.default_rng(tseed).integers(0, grid.n_steps, size=s["n_paths"])
    rows, probes = [], []
    worst = {"DF": 0.0, "grad": 0.0, "hess": 0.0}
    for i, k in enumerate(ks):
        sp = stop(paths[i], int(k))
        probes.append(sp)
        DF = float(horizontal_derivative(F, sp, dcfg))
        g = float(vertical_gradient(F, sp, dcfg)[0])
        H = float(vertical_hessian(F, sp, dcfg)[0, 0])
        ref = closed_form(F, sp)
        if ref is not None:
            rDF, rg, rH = (float(x) for x in ref)
            for key, fd, cf in (("DF", DF, rDF), ("grad", g, rg), ("hess", H, rH)):
                err = abs(fd - cf) / max(1.0, abs(cf))
                worst[key] = max(worst[key], err)
        else:
            rDF = rg = rH = None
        rows.append([SCHEMA_VERSION, i, int(k), _num(sp.time), _num(DF), _num(g), _num(H), _num(rDF), _num(rg), _num(rH)])
    bumps = np.array([-s["bump"], 0.0, s["bump"]])
    reports = [probe_vertical_property(F, p, probes, bumps, s["tol"], dcfg) for p in s["properties"]]
    fails = [f"probe {r.property}: min slack {r.min_slack:.6g}" for r in reports if not r.passed]
    has_ref = closed_form(F, probes[0]) is not None
    if has_ref:
        fails += [f"probe derivative {k}: error {v:.3g}" for k, v in worst.items() if v > s["deriv_tol"]]
    body = {
        "functional": describe(F),
        "closed_form_available": has_ref,
        "max_scaled_error": worst if has_ref else None,
        "convexity": [r.to_dict() for r in reports],
        "pass": not fails,
    }
    _write_json(out / "probe_report.json", _envelope(cfg, "probe", body))
    _write_rows(
        out / "derivatives.csv",
        ["schema_version", "path", "stop_index", "t", "DF", "grad", "hess", "DF_ref", "grad_ref", "hess_ref"],
        rows,
    )
    return fails


COMMANDS = {
    "simulate": cmd_simulate,
    "check-ito": cmd_check_ito,
    "check-kbe": cmd_check_kbe,
    "compare": cmd_compare,
    "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathito", description="Functional Itô calculus experiments.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="experiment TOML file")
    p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for batch simulation")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.data["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 2
    try:
        fails = COMMANDS[args.command](cfg, out, args.threads)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for f in fails:
        print(f"FAIL {f}", file=sys.stderr)
    return 1 if fails else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
