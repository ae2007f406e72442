"""Finite-difference horizontal and vertical derivatives and vertical property probes."""

from __future__ import annotations

from dataclasses import dataclass, asdict
from itertools import combinations_with_replacement

import numpy as np

from .pathspace import StoppedPath, horizontal_extend, vertical_bump

__all__ = [
    "DerivativeConfig",
    "ConvexityReport",
    "default_eps",
    "horizontal_derivative",
    "vertical_gradient",
    "vertical_hessian",
    "hessian_asymmetry",
    "probe_vertical_property",
    "closed_form",
]

EPS = np.finfo(float).eps
PROPERTIES = ("convex", "directional_convex", "monotone")


@dataclass(frozen=True)
class DerivativeConfig:
    """Finite-difference settings.

    Attributes:
        eps_v: vertical step for first derivatives; ``None`` picks
            ``eps^(1/3) (1 + |w|_inf)``, times ``mc_factor`` for Monte Carlo targets.
        eps_h2: vertical step for second derivatives; ``None`` picks
            ``eps^(1/4) (1 + |w|_inf)``, with the same Monte Carlo factor.
        m_h: horizontal step in grid steps.
        richardson: combine horizontal steps ``m_h`` and ``2 m_h``.
        scheme: ``"central"`` or ``"forward"`` vertical first differences.
        mc_factor: step multiplier for estimated (Monte Carlo) functionals.
    """

    eps_v: float | None = None
    eps_h2: float | None = None
    m_h: int = 1
    richardson: bool = False
    scheme: str = "central"
    mc_factor: float = 10.0

    def __post_init__(self):
        if self.eps_v is not None and not self.eps_v > 0:
            raise ValueError("eps_v must be positive")
        if self.eps_h2 is not None and not self.eps_h2 > 0:
            raise ValueError("eps_h2 must be positive")
        if int(self.m_h) != self.m_h or self.m_h < 1:
            raise ValueError("m_h must be a positive integer")
        if self.scheme not in ("central", "forward"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def _sup_norm(sp: StoppedPath):
    return np.linalg.norm(sp.values, axis=-1).max(axis=-1)


def default_eps(F, sp: StoppedPath, cfg: DerivativeConfig, order: int = 1):
    """Vertical step, per batch element, of shape ``sp.batch_shape``."""
    given = cfg.eps_v if order == 1 else cfg.eps_h2
    if given is not None:
        return np.full(sp.batch_shape, float(given))
    power = 1 / 3 if order == 1 else 1 / 4
    h = EPS**power * (1.0 + _sup_norm(sp))
    if getattr(F, "is_estimate", False):
        h = h * cfg.mc_factor
    return h


def _ev(F, sp, samples):
    return F.evaluate_samples(sp) if samples else F.evaluate(sp)


def _bump(sp, i, h):
    """Bump coordinate ``i`` by ``h`` (array over the batch)."""
    x = np.zeros(np.shape(h) + (sp.dim,))
    x[..., i] = h
    return vertical_bump(sp, x)


def _sx(h, samples):
    # align a batch-shaped step with per-sample outputs
    return h[..., None] if samples else h


def horizontal_derivative(F, sp: StoppedPath, cfg: DerivativeConfig = DerivativeConfig(), samples=False, f0=None):
    """Forward difference ``(F(t + m dt, w^t) - F(t, w^t)) / (m dt)``."""
    m = cfg.m_h
    need = 2 * m if cfg.richardson else m
    if sp.stop_index + need > sp.grid.n_steps:
        raise ValueError(
            f"horizontal step of {need} from index {sp.stop_index} passes the horizon {sp.grid.n_steps}"
        )
    if f0 is None:
        f0 = _ev(F, sp, samples)
    d1 = (_ev(F, horizontal_extend(sp, m), samples) - f0) / (m * sp.grid.dt)
    if not cfg.richardson:
        return d1
    d2 = (_ev(F, horizontal_extend(sp, 2 * m), samples) - f0) / (2 * m * sp.grid.dt)
    return 2.0 * d1 - d2


def vertical_gradient(F, sp: StoppedPath, cfg: DerivativeConfig = DerivativeConfig(), samples=False):
    """Vertical gradient, shape ``(*batch, d)`` (``(*batch, M, d)`` with ``samples``)."""
    h = default_eps(F, sp, cfg, 1)
    out = []
    f0 = None if cfg.scheme == "central" else _ev(F, sp, samples)
    for i in range(sp.dim):
        up = _ev(F, _bump(sp, i, h), samples)
        if cfg.scheme == "central":
            dn = _ev(F, _bump(sp, i, -h), samples)
            out.append((up - dn) / (2.0 * _sx(h, samples)))
        else:
            out.append((up - f0) / _sx(h, samples))
    return np.stack(out, axis=-1)


def vertical_hessian(F, sp: StoppedPath, cfg: DerivativeConfig = DerivativeConfig(), samples=False, f0=None):
    """Second central differences, symmetric by construction, shape ``(..., d, d)``."""
    h = default_eps(F, sp, cfg, 2)
    hs = _sx(h, samples)
    d = sp.dim
    if f0 is None:
        f0 = _ev(F, sp, samples)
    H = np.empty(np.shape(f0) + (d, d))
    for i, j in combinations_with_replacement(range(d), 2):
        if i == j:
            up = _ev(F, _bump(sp, i, h), samples)
            dn = _ev(F, _bump(sp, i, -h), samples)
            H[..., i, i] = (up - 2.0 * f0 + dn) / (hs * hs)
        else:
            vals = {}
            for si in (1, -1):
                for sj in (1, -1):
                    x = np.zeros(np.shape(h) + (d,))
                    x[..., i] = si * h
                    x[..., j] = sj * h
                    vals[si, sj] = _ev(F, vertical_bump(sp, x), samples)
            hij = (vals[1, 1] - vals[1, -1] - vals[-1, 1] + vals[-1, -1]) / (4.0 * hs * hs)
            H[..., i, j] = hij
            H[..., j, i] = hij
    return H


def hessian_asymmetry(F, sp: StoppedPath, cfg: DerivativeConfig = DerivativeConfig()):
    """Max ``|A - A^T|`` for the unsymmetrized Hessian built from gradient differences."""
    h = default_eps(F, sp, cfg, 2)
    cols = []
    for i in range(sp.dim):
        gu = vertical_gradient(F, _bump(sp, i, h), cfg)
        gd = vertical_gradient(F, _bump(sp, i, -h), cfg)
        cols.append((gu - gd) / (2.0 * h[..., None]))
    A = np.stack(cols, axis=-2)
    return np.abs(A - np.swapaxes(A, -1, -2)).max(axis=(-1, -2))


@dataclass
class ConvexityReport:
    """Outcome of a vertical property probe; ``verdict`` is pass iff ``min_slack >= -tol``."""

    property: str
    samples: int
    min_slack: float
    tol: float
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return asdict(self)


def _probe_slacks(F, prop, sp, bumps, cfg):
    bumps = np.asarray(bumps, dtype=float)
    if bumps.ndim == 1:
        bumps = bumps[:, None]
    if bumps.shape[-1] != sp.dim:
        raise ValueError("bump dimension does not match the path")
    ev = lambda x: F.evaluate(vertical_bump(sp, x))  # noqa: E731
    slacks = []
    if prop == "convex":
        vals = [ev(b) for b in bumps]
        for a in range(len(bumps)):
            for c in range(a + 1, len(bumps)):
                mid = ev(0.5 * (bumps[a] + bumps[c]))
                slacks.append(vals[a] + vals[c] - 2.0 * mid)
    elif prop == "monotone":
        step = np.abs(bumps[bumps != 0]).min()
        for b in bumps:
            base = ev(b)
            for i in range(sp.dim):
                e = np.zeros(sp.dim)
                e[i] = step
                slacks.append(ev(b + e) - base)
    elif prop == "directional_convex":
        for b in bumps:
            H = vertical_hessian(F, vertical_bump(sp, b), cfg)
            slacks.append(H.reshape(H.shape[:-2] + (-1,)).min(axis=-1))
    else:
        raise ValueError(f"unknown property {prop!r}; choose from {PROPERTIES}")
    return np.stack([np.broadcast_to(s, sp.batch_shape) for s in slacks], axis=-1)


def probe_vertical_property(
    F,
    prop: str,
    sample_paths,
    bump_grid,
    tol: float,
    cfg: DerivativeConfig = DerivativeConfig(),
) -> ConvexityReport:
    """Check vertical convexity, directional convexity or monotonicity on samples.

    Args:
        F: functional with ``evaluate``.
        prop: ``"convex"`` (midpoint convexity over pairs of bumps),
            ``"directional_convex"`` (Hessian entries) or ``"monotone"``
            (first differences along ``+e_i``).
        sample_paths: a stopped path (batched or not) or a list of them.
        bump_grid: finite symmetric set of bump vectors near 0.
        tol: tolerance on the most negative slack.
    """
    if isinstance(sample_paths, StoppedPath):
        sample_paths = [sample_paths]
    if not sample_paths:
        raise ValueError("no sample paths to probe")
    worst = np.inf
    count = 0
    for sp in sample_paths:
        s = _probe_slacks(F, prop, sp, bump_grid, cfg)
        worst = min(worst, float(s.min()))
        count += int(np.prod(sp.batch_shape, dtype=int))
    verdict = "pass" if worst >= -tol else "fail"
    return ConvexityReport(prop, count, worst, float(tol), verdict)


def closed_form(F, sp: StoppedPath):
    """Known derivatives ``(DF, grad, hess)`` of catalog functionals, or ``None``.

    ``IntegralOfFunction``: ``DF = g(w_t) rho(t)``, vertical derivatives 0.
    ``DiscreteMonitor``: ``DF = 0``; after the last monitor time
    ``grad = h'(w_t - w_{t_n-}) g`` and ``hess = h'' g``.
    ``AsianPayoff``: ``DF = 0``, ``grad = w f'(mean)``, ``hess = w^2 f''(mean)``
    with ``w = (T - t) / T``.
    """
    from .functionals import AsianPayoff, DiscreteMonitor, IntegralOfFunction

    shape = sp.batch_shape
    zero = np.zeros(shape)
    if isinstance(F, IntegralOfFunction):
        x = sp.frozen_value[..., 0]
        return F.g(x) * F.rho(sp.time), zero, zero
    if isinstance(F, AsianPayoff):
        grid = sp.grid
        w = (grid.n_steps - sp.stop_index) * grid.dt / grid.T
        mean = F.mean(sp)
        return zero, w * F.f_tilde.d1(mean), w * w * F.f_tilde.d2(mean)
    if isinstance(F, DiscreteMonitor):
        idx = [sp.grid.index_of(t) for t in F.times]
        if sp.stop_index < idx[-1]:
            return zero, zero, zero
        left = sp.left_limits[..., 0]
        mon = np.stack([left[..., i] for i in idx], axis=-1)
        y = sp.frozen_value[..., 0] - mon[..., -1]
        g = F.g(mon.mean(axis=-1))
        return zero, F.h.d1(y) * g, F.h.d2(y) * g
    return None
