"""Catalog of non-anticipative functionals and valuation functionals.

Every functional exposes ``evaluate(sp)`` on a (possibly batched)
:class:`~pathito.pathspace.StoppedPath` and returns an array of the batch shape.
Time integrals use the left-Riemann rule on the grid, so the integrand never
sees the value at the stop time itself.

Terminal payoffs (``AsianPayoff``, ``TerminalPayoff``, ``IntegralPayoff``) read
the whole canonical representative; at an intermediate stop time they are
evaluated on the frozen extension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .funclib import ScalarFunction, get_function
from .models import BrownianMotion, simulate_batch, with_x0
from .pathspace import GridPath, StoppedPath, TimeGrid, concat_values, vertical_bump

__all__ = [
    "IntegralOfFunction",
    "DiscreteMonitor",
    "AsianPayoff",
    "TerminalPayoff",
    "IntegralPayoff",
    "LinearCombination",
    "increment_H",
    "EstimatedValuation",
    "valuation_mc",
    "SemigroupValuation",
    "BrownianAsianSquareValuation",
    "functional_from_dict",
]


def _scalar_path(sp):
    if sp.dim != 1:
        raise ValueError(f"catalog functionals are one-dimensional, got d={sp.dim}")
    return sp.values[..., 0]


def _fn(v) -> ScalarFunction:
    return get_function(v)


@dataclass(frozen=True)
class IntegralOfFunction:
    """``F(t, w) = int_0^t g(w_s) rho(s) ds``."""

    g: ScalarFunction = ScalarFunction("identity")
    rho: ScalarFunction = ScalarFunction("one")
    kind: str = field(default="integral_of_function", init=False)
    terminal = False

    def __post_init__(self):
        object.__setattr__(self, "g", _fn(self.g))
        object.__setattr__(self, "rho", _fn(self.rho))

    def evaluate(self, sp: StoppedPath):
        k = sp.stop_index
        x = _scalar_path(sp)[..., :k]
        w = self.rho(sp.grid.times[:k])
        return (self.g(x) * w).sum(axis=-1) * sp.grid.dt

    def to_dict(self):
        return {"kind": self.kind, "g": self.g.to_dict(), "rho": self.rho.to_dict()}


@dataclass(frozen=True)
class DiscreteMonitor:
    """``F(t, w) = h(w_t - w_{t_n-}) 1_{t >= t_n} g(mean_i w_{t_i-})``.

    ``h`` must vanish at 0. ``g`` acts on the average of the monitored left
    limits; monitor times must lie on the grid.
    """

    times: tuple = (0.5,)
    h: ScalarFunction = ScalarFunction("identity")
    g: ScalarFunction = ScalarFunction("one")
    kind: str = field(default="discrete_monitor", init=False)
    terminal = False

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if not times or any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("monitor times must be a non-empty increasing sequence")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "h", _fn(self.h))
        object.__setattr__(self, "g", _fn(self.g))
        if abs(float(self.h(0.0))) > 0:
            raise ValueError(f"h must vanish at 0, got h(0)={float(self.h(0.0))}")

    def evaluate(self, sp: StoppedPath):
        idx = [sp.grid.index_of(t) for t in self.times]
        shape = sp.batch_shape
        if sp.stop_index < idx[-1]:
            return np.zeros(shape)
        left = sp.left_limits[..., 0]
        monitored = np.stack([left[..., i] for i in idx], axis=-1)
        x = sp.frozen_value[..., 0]
        return self.h(x - monitored[..., -1]) * self.g(monitored.mean(axis=-1))

    def to_dict(self):
        return {
            "kind": self.kind,
            "times": list(self.times),
            "h": self.h.to_dict(),
            "g": self.g.to_dict(),
        }


@dataclass(frozen=True)
class AsianPayoff:
    """``f(w) = f_tilde((1/T) int_0^T w_t dt)``."""

    f_tilde: ScalarFunction = ScalarFunction("identity")
    kind: str = field(default="asian", init=False)
    terminal = True

    def __post_init__(self):
        object.__setattr__(self, "f_tilde", _fn(self.f_tilde))

    def mean(self, sp) -> np.ndarray:
        x = _scalar_path(sp)
        return x[..., :-1].sum(axis=-1) * (sp.grid.dt / sp.grid.T)

    def evaluate(self, sp):
        return self.f_tilde(self.mean(sp))

    def to_dict(self):
        return {"kind": self.kind, "f_tilde": self.f_tilde.to_dict()}


@dataclass(frozen=True)
class TerminalPayoff:
    """``f(w) = f_tilde(w_T)``."""

    f_tilde: ScalarFunction = ScalarFunction("identity")
    kind: str = field(default="terminal", init=False)
    terminal = True

    def __post_init__(self):
        object.__setattr__(self, "f_tilde", _fn(self.f_tilde))

    def evaluate(self, sp):
        return self.f_tilde(_scalar_path(sp)[..., -1])

    def to_dict(self):
        return {"kind": self.kind, "f_tilde": self.f_tilde.to_dict()}


@dataclass(frozen=True)
class IntegralPayoff:
    """``f(w) = int_0^T f_tilde(w_t) dt``."""

    f_tilde: ScalarFunction = ScalarFunction("identity")
    kind: str = field(default="integral", init=False)
    terminal = True

    def __post_init__(self):
        object.__setattr__(self, "f_tilde", _fn(self.f_tilde))

    def evaluate(self, sp):
        return self.f_tilde(_scalar_path(sp)[..., :-1]).sum(axis=-1) * sp.grid.dt

    def to_dict(self):
        return {"kind": self.kind, "f_tilde": self.f_tilde.to_dict()}


@dataclass(frozen=True)
class LinearCombination:
    """``sum_i a_i F_i`` over catalog functionals."""

    terms: tuple = ()
    kind: str = field(default="linear", init=False)

    @property
    def terminal(self) -> bool:
        return all(f.terminal for _, f in self.terms)

    def evaluate(self, sp):
        total = np.zeros(sp.batch_shape)
        for a, f in self.terms:
            total = total + a * f.evaluate(sp)
        return total

    def to_dict(self):
        return {"kind": self.kind, "terms": [{"coef": a, "functional": f.to_dict()} for a, f in self.terms]}


FUNCTIONAL_KINDS = {
    "integral_of_function": IntegralOfFunction,
    "discrete_monitor": DiscreteMonitor,
    "asian": AsianPayoff,
    "terminal": TerminalPayoff,
    "integral": IntegralPayoff,
}


def functional_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "linear":
        terms = tuple((float(t["coef"]), functional_from_dict(t["functional"])) for t in d["terms"])
        return LinearCombination(terms)
    try:
        cls = FUNCTIONAL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown functional kind {kind!r}; choose from {sorted(FUNCTIONAL_KINDS)}") from None
    return cls(**d)


def increment_H(F, sp_pre: StoppedPath, x, grad, samples: bool = False):
    """``F(w^{t-} + x 1_[t,T]) - F(w^{t-}) - grad . x``.

    With ``samples=True`` and an :class:`EstimatedValuation`, returns the
    per-sample increments (the gradient may then also be per sample).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ev = (lambda s: F.evaluate_samples(s)) if samples else F.evaluate
    lin = np.sum(np.asarray(grad) * x, axis=-1)
    return ev(vertical_bump(sp_pre, x)) - ev(sp_pre) - lin


# ---------------------------------------------------------------------------
# valuation functionals


class EstimatedValuation:
    """Monte Carlo valuation ``G_f(t, w) = E[f(w (+)_t X)]`` with common random numbers.

    ``M`` continuation paths of the model started at 0 are drawn once. For an
    independent-increment, time-homogeneous model the continuation after any
    stop index ``k`` can be taken as the first ``N - k`` increments of each
    stored path, so every query, bumped or extended, reuses the same draws.

    Args:
        payoff: terminal catalog functional ``f``.
        model: independent-increment model.
        grid: time grid.
        M: number of continuation samples.
        seed: root seed for the continuation draws.
    """

    is_estimate = True

    def __init__(self, payoff, model, grid: TimeGrid, M: int, seed: int, threads: int = 1):
        if not getattr(payoff, "terminal", False):
            raise ValueError("valuation needs a terminal payoff")
        if not model.independent_increments:
            raise ValueError(
                f"{type(model).__name__} lacks independent increments; "
                "the concatenation estimator would be biased"
            )
        if M < 1:
            raise ValueError("M must be positive")
        self.payoff = payoff
        self.model = model
        self.grid = grid
        self.M = int(M)
        self.seed = int(seed)
        paths = simulate_batch(with_x0(model, 0.0), grid, self.M, seed, threads)
        # S[:, j] = X_{t_j} - X_0 for the model started at 0
        self.S = paths.values[..., 0]
        self.flags = paths.jump_flags
        self.CS = np.concatenate([np.zeros((self.M, 1)), np.cumsum(self.S, axis=1)], axis=1)

    @property
    def terminal(self) -> bool:
        return False

    def _continuation(self, k: int) -> np.ndarray:
        """Continuation values aligned so that index ``k`` starts at 0, shape (M, N+1)."""
        N = self.grid.n_steps
        out = np.zeros((self.M, N + 1))
        out[:, k:] = self.S[:, : N + 1 - k]
        return out

    def evaluate_samples(self, sp: StoppedPath) -> np.ndarray:
        """Per-sample payoffs ``f(sp (+)_t X^(j))``, shape ``(*batch, M)``."""
        if sp.grid != self.grid:
            raise ValueError(f"grid mismatch: {sp.grid} vs {self.grid}")
        k = sp.stop_index
        N = self.grid.n_steps
        m = N - k
        f = self.payoff
        v = sp.frozen_value[..., 0][..., None]
        if isinstance(f, AsianPayoff):
            head = sp.values[..., :k, 0].sum(axis=-1)[..., None]
            tot = head + m * v + self.CS[:, m]
            return f.f_tilde(tot * (self.grid.dt / self.grid.T))
        if isinstance(f, TerminalPayoff):
            return f.f_tilde(v + self.S[:, m])
        if isinstance(f, IntegralPayoff):
            head = f.f_tilde(sp.values[..., :k, 0]).sum(axis=-1)[..., None]
            out = np.empty(np.broadcast_shapes(v.shape, (self.M,)))
            vv = np.broadcast_to(v, out.shape[:-1] + (1,))
            for idx in np.ndindex(out.shape[:-1]):
                tail = f.f_tilde(vv[idx] + self.S[:, :m]).sum(axis=-1)
                out[idx] = tail
            return (head + out) * self.grid.dt
        # generic route through explicit concatenation
        batch = sp.batch_shape
        cont = self._continuation(k)[..., None]
        vals = concat_values(_expand(sp, batch), cont.reshape((1,) * len(batch) + cont.shape))
        flags = np.zeros(vals.shape[:-1], dtype=bool)
        flags[..., : k + 1] = sp.jump_flags[..., None, : k + 1]
        flags[..., k + 1 :] = self.flags[:, 1 : m + 1]
        full = GridPath(self.grid, vals, flags)
        return f.evaluate(StoppedPath(full, N))

    def evaluate(self, sp: StoppedPath):
        samples = self.evaluate_samples(sp)
        if sp.stop_index == self.grid.n_steps:
            # empty continuation: every sample equals f(w)
            return samples[..., 0]
        return samples.mean(axis=-1)

    def standard_error(self, sp: StoppedPath):
        s = self.evaluate_samples(sp)
        return s.std(axis=-1, ddof=1) / math.sqrt(self.M)

    def __repr__(self):
        return f"EstimatedValuation({self.payoff}, {self.model}, M={self.M}, seed={self.seed})"


def _expand(sp: StoppedPath, batch: tuple) -> StoppedPath:
    """Insert a sample axis after the batch axes of ``sp``."""
    base = sp.base
    bv = base.values
    if base.batch_shape != batch:
        bv = np.broadcast_to(bv, batch + bv.shape[-2:])
    left = base._left
    if left is not None and left.shape != bv.shape:
        left = np.broadcast_to(left, bv.shape)
    flags = np.broadcast_to(base.jump_flags, bv.shape[:-1])
    nb = GridPath(
        base.grid,
        bv[..., None, :, :],
        flags[..., None, :],
        None if left is None else left[..., None, :, :],
    )
    off = np.broadcast_to(sp.offset, batch + (sp.dim,))[..., None, :]
    return StoppedPath(nb, sp.stop_index, sp.pre, off)


def valuation_mc(payoff, model, grid: TimeGrid, M: int, seed: int, threads: int = 1) -> EstimatedValuation:
    return EstimatedValuation(payoff, model, grid, M, seed, threads)


class SemigroupValuation:
    """``G(t, w) = int_0^{T-t} T_s f(w_t) ds + int_0^t f(w_s) ds`` for Brownian motion.

    Both time integrals use the left-Riemann rule on the grid, matching
    :class:`IntegralPayoff`; ``T_s`` is Gauss-Hermite quadrature in space.
    """

    def __init__(self, f_tilde, model, grid: TimeGrid, n_nodes: int = 40):
        if not isinstance(model, BrownianMotion):
            raise ValueError("the closed-form semigroup is only available for Brownian motion")
        self.f_tilde = get_function(f_tilde)
        self.model = model
        self.grid = grid
        self.n_nodes = int(n_nodes)

    def _semigroup_sum(self, x, q):
        nodes, weights = hermegauss(q)
        weights = weights / weights.sum()
        N = self.grid.n_steps
        dt = self.grid.dt
        s = np.arange(N) * dt
        x = np.asarray(x, dtype=float)
        # T_{s_j} f(x) for all j, summed over the remaining steps
        pts = x[..., None, None] + self.model.b * s[:, None] + self.model.sigma * np.sqrt(s)[:, None] * nodes
        return (self.f_tilde(pts) * weights).sum(axis=-1)  # (..., N)

    def _value(self, sp, q):
        k = sp.stop_index
        N = self.grid.n_steps
        x = sp.frozen_value[..., 0]
        ts = self._semigroup_sum(x, q)[..., : N - k].sum(axis=-1)
        head = self.f_tilde(sp.values[..., :k, 0]).sum(axis=-1)
        return (ts + head) * self.grid.dt

    def evaluate(self, sp: StoppedPath):
        if sp.grid != self.grid:
            raise ValueError("grid mismatch")
        return self._value(sp, self.n_nodes)

    def quadrature_bound(self, sp: StoppedPath):
        """``|GH(q) - GH(2q)|`` as a quadrature error estimate."""
        return np.abs(self._value(sp, self.n_nodes) - self._value(sp, 2 * self.n_nodes))


class BrownianAsianSquareValuation:
    """Exact grid valuation of ``AsianPayoff(square)`` under Brownian motion.

    With ``n = N - k`` remaining steps, the continuation mean is Gaussian with
    mean ``(dt/T)(sum_{i<k} w_i + n v + b dt n(n-1)/2)`` and variance
    ``(dt/T)^2 sigma^2 dt (n-1) n (2n-1) / 6``.
    """

    terminal = False

    def __init__(self, model: BrownianMotion, grid: TimeGrid):
        if not isinstance(model, BrownianMotion):
            raise ValueError("closed form needs Brownian motion")
        self.model = model
        self.grid = grid

    def evaluate(self, sp: StoppedPath):
        k = sp.stop_index
        N, dt, T = self.grid.n_steps, self.grid.dt, self.grid.T
        n = N - k
        v = sp.frozen_value[..., 0]
        head = sp.values[..., :k, 0].sum(axis=-1)
        mu = (dt / T) * (head + n * v + self.model.b * dt * n * (n - 1) / 2)
        var = (dt / T) ** 2 * self.model.sigma**2 * dt * (n - 1) * n * (2 * n - 1) / 6
        return mu * mu + var
