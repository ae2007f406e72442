"""Functional Itô formula residuals and the backward operators ``U`` and ``Ubar``."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .calculus import (
    DerivativeConfig,
    default_eps,
    horizontal_derivative,
    vertical_gradient,
    vertical_hessian,
)
from .models import Characteristics, characteristics_at, simulate_batch
from .pathspace import GridPath, StoppedPath, TimeGrid, stop, stop_pre, vertical_bump

__all__ = [
    "ito_residual",
    "ito_convergence",
    "ItoResidualReport",
    "generator_terms",
    "derivative_bundle",
    "combine_bundle",
    "U_op",
    "Ubar_op",
    "kbe_residual_profile",
    "stratified_indices",
    "KBEReport",
    "describe",
]

EXACT_LEVEL = 1e-8


def describe(obj) -> str:
    """Short identifier for reports."""
    d = obj.to_dict() if hasattr(obj, "to_dict") else {"kind": type(obj).__name__}
    kind = d.pop("kind", type(obj).__name__)
    inner = ",".join(f"{k}={v}" for k, v in d.items())
    return f"{kind}({inner})"


# ---------------------------------------------------------------------------
# functional Itô formula


def ito_residual(F, p: GridPath, model=None, cfg: DerivativeConfig = DerivativeConfig(), qv: str = "realized"):
    """Defect of the discretized functional Itô formula along ``p``.

    Returns ``F(T, p) - F(0, p_0)`` minus the left-Riemann horizontal integral,
    the left-point vertical sums and the jump sum. On a step without a jump the
    vertical part is ``grad . dX + 1/2 dX^T H dX`` (``qv="realized"``) or
    ``grad . dX + 1/2 tr(H c) dt`` with ``c`` from ``model`` (``qv="model"``).
    On a step that ends in a flagged jump the whole increment is the jump and
    contributes ``F(w^{t}) - F(w^{t-})``, which is ``grad . dX`` plus the jump
    correction.

    Args:
        F: catalog functional.
        p: path or batch of paths.
        model: model used for ``c`` when ``qv="model"``.
        cfg: finite-difference settings.
        qv: ``"realized"`` or ``"model"``.

    Returns:
        Residual per path, shape ``p.batch_shape``.
    """
    if qv not in ("realized", "model"):
        raise ValueError(f"unknown qv mode {qv!r}")
    if qv == "model" and model is None:
        raise ValueError("qv='model' needs the model characteristics")
    N, dt = p.grid.n_steps, p.grid.dt
    vals = p.values
    total = F.evaluate(stop(p, N)) - F.evaluate(stop(p, 0))
    acc = np.zeros(p.batch_shape)
    for k in range(N):
        sp_h = stop(p, 0) if k == 0 else stop_pre(p, k)
        acc = acc + horizontal_derivative(F, sp_h, cfg) * dt
        sk = stop(p, k)
        dX = vals[..., k + 1, :] - vals[..., k, :]
        f0 = F.evaluate(sk)
        grad = vertical_gradient(F, sk, cfg)
        H = vertical_hessian(F, sk, cfg, f0=f0)
        first = np.sum(grad * dX, axis=-1)
        if qv == "realized":
            second = 0.5 * np.einsum("...i,...ij,...j->...", dX, H, dX)
        else:
            c = characteristics_at(model, k, sp_h if k else stop(p, 0)).c
            second = 0.5 * np.einsum("...ij,...ij->...", H, c) * dt
        cont = first + second
        jumped = p.jump_flags[..., k + 1]
        if np.any(jumped):
            jump_term = F.evaluate(stop(p, k + 1)) - F.evaluate(stop_pre(p, k + 1))
            cont = np.where(jumped, jump_term, cont)
        acc = acc + cont
    return total - acc


@dataclass
class ItoResidualReport:
    functional: str
    model: str
    n_steps: list
    residual_mean: list
    residual_p95: list
    order: float | None
    exact: bool
    tol: float
    passed: bool
    qv: str = "realized"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def fit_order(n_steps, means) -> float:
    """Slope of ``log mean|r|`` against ``log dt``."""
    x = -np.log(np.asarray(n_steps, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def ito_convergence(
    F,
    model,
    T: float,
    ladder=(50, 100, 200, 400),
    n_paths: int = 200,
    seed: int = 0,
    cfg: DerivativeConfig = DerivativeConfig(),
    min_order: float = 0.8,
    qv: str = "realized",
    threads: int = 1,
) -> ItoResidualReport:
    """Residual statistics over a grid ladder and the fitted convergence order.

    Each rung draws its own paths from a seed derived from ``seed`` and the
    rung size. A cell whose mean residual stays below ``1e-8`` at every rung is
    exact up to rounding; it passes without an order fit.
    """
    means, p95 = [], []
    for n in ladder:
        grid = TimeGrid(T, n)
        sub = int(np.random.SeedSequence([seed, n]).generate_state(1)[0])
        paths = simulate_batch(model, grid, n_paths, sub, threads)
        r = np.abs(ito_residual(F, paths, model, cfg, qv))
        means.append(float(r.mean()))
        p95.append(float(np.quantile(r, 0.95)))
    exact = max(means) <= EXACT_LEVEL
    order = None if exact else fit_order(ladder, means)
    ok = exact or (order is not None and order >= min_order)
    return ItoResidualReport(describe(F), describe(model), list(ladder), means, p95, order, exact, min_order, ok, qv)


# ---------------------------------------------------------------------------
# backward operators


def derivative_bundle(F, sp_pre: StoppedPath, sizes, cfg: DerivativeConfig = DerivativeConfig(), samples=False) -> dict:
    """Evaluations of ``F`` needed by the backward operators at ``sp_pre``.

    ``sizes`` lists the jump sizes whose bumped values are required. The bundle
    does not depend on the characteristics, so one bundle serves several models.
    """
    ev = F.evaluate_samples if samples else F.evaluate
    f0 = ev(sp_pre)
    sizes = np.asarray(sizes, dtype=float).reshape(-1, sp_pre.dim)
    return {
        "f0": f0,
        "DF": horizontal_derivative(F, sp_pre, cfg, samples, f0=f0),
        "grad": vertical_gradient(F, sp_pre, cfg, samples),
        "hess": vertical_hessian(F, sp_pre, cfg, samples, f0=f0),
        "sizes": sizes,
        "jumped": [ev(vertical_bump(sp_pre, x)) for x in sizes],
        "samples": samples,
    }


def combine_bundle(bundle: dict, chars: Characteristics) -> dict:
    """Operator terms from a derivative bundle and characteristics."""
    samples = bundle["samples"]
    f0, grad, H = bundle["f0"], bundle["grad"], bundle["hess"]
    c = chars.c[..., None, :, :] if samples else chars.c
    b = chars.b[..., None, :] if samples else chars.b
    diffusion = 0.5 * np.einsum("...ij,...ij->...", H, c)
    kernel = np.zeros(np.shape(f0))
    for m in range(chars.n_atoms):
        lam = chars.intensities[..., m]
        lam = lam[..., None] if samples else lam
        if np.all(lam == 0):
            continue
        x = chars.sizes[m]
        hit = [i for i, s in enumerate(bundle["sizes"]) if np.array_equal(s, x)]
        if not hit:
            raise KeyError(f"jump size {x} missing from the derivative bundle")
        hf = bundle["jumped"][hit[0]] - f0 - np.sum(grad * x, axis=-1)
        kernel = kernel + lam * hf
    drift = np.sum(grad * b, axis=-1)
    return {"DF": bundle["DF"], "grad": grad, "hess": H, "diffusion": diffusion, "kernel": kernel, "drift": drift}


def generator_terms(F, chars: Characteristics, sp_pre: StoppedPath, cfg: DerivativeConfig = DerivativeConfig(), samples=False) -> dict:
    """Terms of ``U`` and ``Ubar`` at ``sp_pre``.

    With ``samples=True`` (Monte Carlo valuations) every term is returned per
    continuation sample, shape ``(*batch, M)``; their sample means are the
    operator values and their spread gives the standard error.
    """
    return combine_bundle(derivative_bundle(F, sp_pre, chars.sizes, cfg, samples), chars)


def U_op(F, chars: Characteristics, sp_pre: StoppedPath, cfg: DerivativeConfig = DerivativeConfig(), samples=False):
    """``DF + 1/2 sum H_ij c_ij + int H_F(x) K(dx)``."""
    t = generator_terms(F, chars, sp_pre, cfg, samples)
    return t["DF"] + t["diffusion"] + t["kernel"]


def Ubar_op(F, chars: Characteristics, sp_pre: StoppedPath, cfg: DerivativeConfig = DerivativeConfig(), samples=False):
    """``U`` plus the first-order drift term ``grad . b``."""
    t = generator_terms(F, chars, sp_pre, cfg, samples)
    return t["DF"] + t["diffusion"] + t["kernel"] + t["drift"]


@dataclass
class KBEReport:
    functional: str
    model: str
    n_steps: int
    operator: str
    probes: int
    residual_mean: float
    residual_p95: float
    tol: float
    tol_max: float
    pass_rate: float
    pass_threshold: float
    C1: float
    C2: float
    passed: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


def kbe_tolerance(se, eps_v, dt, C1=3.0, C2=10.0):
    """``C1 * SE(U) + C2 * (eps_v^2 + dt)``."""
    return C1 * se + C2 * (eps_v**2 + dt)


def kbe_probe(F, chars_model, sp_pre: StoppedPath, cfg=DerivativeConfig(), use_ubar=None, C1=3.0, C2=10.0, bundle=None):
    """Residuals, standard errors and tolerances at a batch of probes."""
    k = sp_pre.stop_index
    chars = characteristics_at(chars_model, k, sp_pre)
    if use_ubar is None:
        use_ubar = bool(np.any(chars.b != 0))
    samples = bool(getattr(F, "is_estimate", False))
    if bundle is None:
        bundle = derivative_bundle(F, sp_pre, chars.sizes, cfg, samples)
    t = combine_bundle(bundle, chars)
    u = t["DF"] + t["diffusion"] + t["kernel"] + (t["drift"] if use_ubar else 0.0)
    if samples:
        M = u.shape[-1]
        res = u.mean(axis=-1)
        se = u.std(axis=-1, ddof=1) / math.sqrt(M)
    else:
        res = u
        se = np.zeros_like(u)
    eps_v = default_eps(F, sp_pre, cfg, 1)
    tol = kbe_tolerance(se, eps_v, sp_pre.grid.dt, C1, C2)
    return res, se, tol, use_ubar


def stratified_indices(n_steps: int, n_paths: int, n_strata: int, seed: int) -> np.ndarray:
    """Per-path probe indices, one uniform draw per stratum of ``[1, n_steps - 1]``.

    Returns an integer array of shape ``(n_paths, n_strata)``.
    """
    if n_steps < 2:
        raise ValueError("need at least two steps for interior probes")
    n_strata = min(n_strata, n_steps - 1)
    edges = np.linspace(1, n_steps, n_strata + 1)
    lo = np.floor(edges[:-1]).astype(int)
    hi = np.maximum(np.floor(edges[1:]).astype(int), lo + 1)
    u = np.random.default_rng(seed).random((n_paths, n_strata))
    return lo + np.floor(u * (hi - lo)).astype(int)


def kbe_residual_profile(
    F,
    model,
    grid: TimeGrid,
    n_paths: int,
    n_time_probes: int,
    seed: int,
    cfg: DerivativeConfig = DerivativeConfig(),
    chars_model=None,
    path_model=None,
    use_ubar=None,
    C1: float = 3.0,
    C2: float = 10.0,
    threshold: float = 0.95,
    threads: int = 1,
) -> KBEReport:
    """Sample (path, time) probes and test ``|U F| <= tol_kbe`` (or ``Ubar``).

    The index range ``[1, N-1]`` is split into ``n_time_probes`` equal strata
    and every path gets its own uniform index in each stratum; probes sharing
    an index are evaluated as one batch. Characteristics come from
    ``chars_model`` (default ``model``); paths from ``path_model`` (default
    ``chars_model``).
    """
    chars_model = chars_model or model
    path_model = path_model or chars_model
    N = grid.n_steps
    ss = np.random.SeedSequence(seed)
    path_seed, time_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    paths = simulate_batch(path_model, grid, n_paths, path_seed, threads)
    ks = stratified_indices(N, n_paths, n_time_probes, time_seed)
    res = np.empty(ks.shape)
    tols = np.empty(ks.shape)
    ubar = False
    for k in np.unique(ks):
        rows, cols = np.nonzero(ks == k)
        r, _, tol, ubar = kbe_probe(F, chars_model, stop_pre(paths[rows], int(k)), cfg, use_ubar, C1, C2)
        res[rows, cols] = r
        tols[rows, cols] = tol
    res = res.ravel()
    tols = tols.ravel()
    ok = np.abs(res) <= tols
    rate = float(ok.mean())
    return KBEReport(
        functional=describe(F.payoff) if hasattr(F, "payoff") else describe(F),
        model=describe(chars_model),
        n_steps=N,
        operator="Ubar" if ubar else "U",
        probes=int(res.size),
        residual_mean=float(np.abs(res).mean()),
        residual_p95=float(np.quantile(np.abs(res), 0.95)),
        tol=float(np.median(tols)),
        tol_max=float(tols.max()),
        pass_rate=rate,
        pass_threshold=threshold,
        C1=C1,
        C2=C2,
        passed=rate >= threshold,
    )
