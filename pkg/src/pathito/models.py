"""Semimartingale model catalog: grid simulators and differential characteristics.

All characteristics are taken with respect to ``A_t = t`` and the identity
truncation function, so the drift ``b`` already contains the compensated jump
mean. The Euler scheme therefore moves by ``(b - sum_m x_m lambda_m) dt`` between
jumps, plus ``sigma sqrt(dt) Z`` and the jumps that fall into the step. Jumps are
flagged at the right end of their step.

Batch simulation splits the root seed into one child seed per fixed-size chunk
of paths, so the output depends only on ``(model, grid, n_paths, seed)`` and not
on the number of worker threads.
"""

from __future__ import annotations

import ast
import math
import operator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .pathspace import GridPath, StoppedPath, TimeGrid

__all__ = [
    "Expr",
    "Characteristics",
    "BrownianMotion",
    "CompoundPoisson",
    "LevyJumpDiffusion",
    "ItoSemimartingale",
    "simulate",
    "simulate_batch",
    "iter_simulate",
    "characteristics_at",
    "kernel_integral",
    "h1_norm_estimate",
    "jump_counts",
    "model_from_dict",
]

CHUNK = 1024

# ---------------------------------------------------------------------------
# coefficient expressions

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "abs": np.abs,
    "sqrt": np.sqrt,
    "log1p": np.log1p,
    "min": np.minimum,
    "max": np.maximum,
}
_VARS = ("t", "x", "m")


@dataclass(frozen=True)
class Expr:
    """Arithmetic expression in ``t`` (time), ``x`` (left limit of the path)
    and ``m`` (running time average of the path).

    Only numbers, the three variables, ``+ - * / **`` and the functions
    ``sin cos exp tanh abs sqrt log1p min max`` are accepted.

    >>> Expr("0.2 + 0.05*sin(x)")(0.0, np.array([0.0]), np.array([0.0]))
    array([0.2])
    """

    source: str

    def __post_init__(self):
        tree = ast.parse(str(self.source), mode="eval")
        self._validate(tree.body)
        object.__setattr__(self, "source", str(self.source))
        object.__setattr__(self, "_tree", tree.body)

    def _validate(self, node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ValueError(f"unsupported constant {node.value!r} in {self.source!r}")
        elif isinstance(node, ast.Name):
            if node.id not in _VARS:
                raise ValueError(f"unknown variable {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ValueError(f"unsupported operator in {self.source!r}")
            self._validate(node.left)
            self._validate(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNOPS:
                raise ValueError(f"unsupported operator in {self.source!r}")
            self._validate(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCS or node.keywords:
                raise ValueError(f"unsupported call in {self.source!r}")
            for a in node.args:
                self._validate(a)
        else:
            raise ValueError(f"unsupported syntax {type(node).__name__} in {self.source!r}")

    def __call__(self, t, x, m):
        x = np.asarray(x, dtype=float)
        env = {"t": float(t), "x": x, "m": np.asarray(m, dtype=float)}
        out = self._eval(self._tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNOPS[type(node.op)](self._eval(node.operand, env))
        return _FUNCS[node.func.id](*(self._eval(a, env) for a in node.args))

    @property
    def is_constant(self) -> bool:
        return not any(isinstance(n, ast.Name) for n in ast.walk(self._tree))

    def __str__(self):
        return self.source


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float)):
        return Expr(repr(float(v)))
    return Expr(v)


# ---------------------------------------------------------------------------
# characteristics


@dataclass
class Characteristics:
    """Differential characteristics ``(b, c, K)`` at one time, possibly batched.

    Attributes:
        b: drift density, shape ``(*batch, d)``.
        c: diffusion density, shape ``(*batch, d, d)``.
        sizes: jump atom sizes, shape ``(n_atoms, d)``.
        intensities: atom intensities per unit time, shape ``(*batch, n_atoms)``.
    """

    b: np.ndarray
    c: np.ndarray
    sizes: np.ndarray
    intensities: np.ndarray

    def __post_init__(self):
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.c = np.asarray(self.c, dtype=float)
        if self.c.ndim < 2:
            self.c = np.reshape(self.c, self.c.shape + (1, 1))
        self.sizes = np.asarray(self.sizes, dtype=float).reshape(-1, self.b.shape[-1])
        self.intensities = np.asarray(self.intensities, dtype=float)
        if np.any(self.intensities < 0):
            raise ValueError("jump intensities must be non-negative")
        if self.intensities.shape[-1:] != (self.sizes.shape[0],) and self.sizes.shape[0]:
            raise ValueError("one intensity per jump atom is required")

    @property
    def dim(self) -> int:
        return self.b.shape[-1]

    @property
    def n_atoms(self) -> int:
        return self.sizes.shape[0]


def kernel_integral(chars: Characteristics, h) -> np.ndarray:
    """``int h(x) K(dx) = sum_m intensity_m h(x_m)`` for a finite atom list.

    ``h`` maps a size vector of shape ``(d,)`` to a scalar or batch array.
    """
    total = np.zeros(chars.intensities.shape[:-1]) if chars.n_atoms else np.zeros(chars.b.shape[:-1])
    for m in range(chars.n_atoms):
        total = total + chars.intensities[..., m] * np.asarray(h(chars.sizes[m]), dtype=float)
    return total


# ---------------------------------------------------------------------------
# model catalog


def _atoms_tuple(atoms) -> tuple:
    out = []
    for a in atoms:
        if isinstance(a, dict):
            size = a["size"]
            w = a.get("prob", a.get("intensity"))
        else:
            size, w = a
        out.append((float(size), w))
    return tuple(out)


@dataclass(frozen=True)
class BrownianMotion:
    """``X_t = x0 + b t + sigma W_t``."""

    x0: float = 0.0
    b: float = 0.0
    sigma: float = 1.0
    kind: str = field(default="brownian", init=False)

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    independent_increments = True
    dim = 1

    @property
    def finite_variation(self) -> bool:
        return self.sigma == 0

    @property
    def type_c(self) -> bool:
        return self.sigma > 0

    @property
    def atoms(self) -> tuple:
        return ()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "x0": self.x0, "b": self.b, "sigma": self.sigma}


@dataclass(frozen=True)
class CompoundPoisson:
    """Compound Poisson process with rate ``rate`` and atoms ``(size, prob)``.

    Its identity-truncation drift is ``rate * E[jump]``, so the path has no
    drift between jumps.
    """

    x0: float = 0.0
    rate: float = 1.0
    jumps: tuple = ((1.0, 1.0),)
    kind: str = field(default="compound_poisson", init=False)

    def __post_init__(self):
        jumps = tuple((float(s), float(p)) for s, p in _atoms_tuple(self.jumps))
        object.__setattr__(self, "jumps", jumps)
        if self.rate < 0:
            raise ValueError("rate must be non-negative")
        probs = np.array([p for _, p in jumps])
        if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError("jump probabilities must be non-negative and sum to 1")

    independent_increments = True
    finite_variation = True
    type_c = False
    dim = 1
    sigma = 0.0

    @property
    def b(self) -> float:
        return self.rate * sum(s * p for s, p in self.jumps)

    @property
    def atoms(self) -> tuple:
        return tuple((s, self.rate * p) for s, p in self.jumps)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "x0": self.x0,
            "rate": self.rate,
            "jumps": [{"size": s, "prob": p} for s, p in self.jumps],
        }


@dataclass(frozen=True)
class LevyJumpDiffusion:
    """Brownian motion with drift plus finitely many jump atoms ``(size, intensity)``.

    A Gaussian component (``sigma > 0``) makes it a type C process.
    """

    x0: float = 0.0
    b: float = 0.0
    sigma: float = 0.0
    jumps: tuple = ()
    kind: str = field(default="levy", init=False)

    def __post_init__(self):
        jumps = tuple((float(s), float(i)) for s, i in _atoms_tuple(self.jumps))
        object.__setattr__(self, "jumps", jumps)
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if any(i < 0 for _, i in jumps):
            raise ValueError("jump intensities must be non-negative")

    independent_increments = True
    dim = 1

    @property
    def finite_variation(self) -> bool:
        return self.sigma == 0

    @property
    def type_c(self) -> bool:
        return self.sigma > 0

    @property
    def atoms(self) -> tuple:
        return self.jumps

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "x0": self.x0,
            "b": self.b,
            "sigma": self.sigma,
            "jumps": [{"size": s, "intensity": i} for s, i in self.jumps],
        }


@dataclass(frozen=True)
class ItoSemimartingale:
    """Itô semimartingale with path-dependent coefficients.

    ``beta`` (drift), ``delta`` (volatility) and the atom intensities are
    :class:`Expr` objects in ``t``, ``x`` and ``m``, evaluated predictably at
    the left limit of the path.
    """

    x0: float = 0.0
    beta: Expr = Expr("0")
    delta: Expr = Expr("0")
    jumps: tuple = ()
    kind: str = field(default="ito", init=False)

    def __post_init__(self):
        object.__setattr__(self, "beta", _as_expr(self.beta))
        object.__setattr__(self, "delta", _as_expr(self.delta))
        jumps = tuple((float(s), _as_expr(i)) for s, i in _atoms_tuple(self.jumps))
        object.__setattr__(self, "jumps", jumps)

    independent_increments = False
    finite_variation = False
    type_c = False
    dim = 1

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "x0": self.x0,
            "beta": str(self.beta),
            "delta": str(self.delta),
            "jumps": [{"size": s, "intensity": str(i)} for s, i in self.jumps],
        }


MODEL_KINDS = {
    "brownian": BrownianMotion,
    "compound_poisson": CompoundPoisson,
    "levy": LevyJumpDiffusion,
    "ito": ItoSemimartingale,
}


def model_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    if "jumps" in d:
        d["jumps"] = _atoms_tuple(d["jumps"])
    return cls(**d)


def with_x0(model, x0: float):
    """Copy of ``model`` started at ``x0``."""
    d = model.to_dict()
    d["x0"] = float(x0)
    return model_from_dict(d)


def _levy_params(model):
    """(b, sigma, sizes, intensities) of an independent-increment model."""
    if isinstance(model, BrownianMotion):
        return model.b, model.sigma, np.zeros(0), np.zeros(0)
    sizes = np.array([s for s, _ in model.atoms], dtype=float)
    ints = np.array([i for _, i in model.atoms], dtype=float)
    return model.b, model.sigma, sizes, ints


# ---------------------------------------------------------------------------
# characteristics


def _state(sp: StoppedPath):
    """(t, left limit, running mean) read off a pre-jump stopped path."""
    k = sp.stop_index
    x = sp.frozen_value[..., 0]
    if k == 0:
        m = x
    else:
        m = sp.values[..., :k, 0].mean(axis=-1)
    return sp.time, x, m


def characteristics_at(model, k: int, sp_pre: StoppedPath | None = None) -> Characteristics:
    """Characteristics used by the simulator on the step starting at index ``k``.

    ``sp_pre`` is only read for path-dependent (Itô) models.
    """
    if model.independent_increments:
        b, sigma, sizes, ints = _levy_params(model)
        return Characteristics(np.array([b]), np.array([[sigma * sigma]]), sizes[:, None], ints)
    if sp_pre is None:
        raise ValueError("path-dependent characteristics need the stopped path")
    if sp_pre.stop_index != k:
        raise ValueError(f"stopped path is at index {sp_pre.stop_index}, expected {k}")
    t, x, m = _state(sp_pre)
    beta = model.beta(t, x, m)
    delta = model.delta(t, x, m)
    sizes = np.array([s for s, _ in model.jumps], dtype=float)
    ints = (
        np.stack([e(t, x, m) for _, e in model.jumps], axis=-1)
        if model.jumps
        else np.zeros(np.shape(x) + (0,))
    )
    return Characteristics(beta[..., None], (delta * delta)[..., None, None], sizes[:, None], ints)


# ---------------------------------------------------------------------------
# simulation


@dataclass
class _Parts:
    values: np.ndarray  # (n, N+1)
    flags: np.ndarray  # (n, N+1)
    drift: np.ndarray  # (n, N) finite-variation increments b dt
    diffusive: np.ndarray  # (n, N) sigma sqrt(dt) Z
    jumps: np.ndarray  # (n, N) sum of jumps in the step
    counts: np.ndarray  # (n, N) number of jumps in the step


def _simulate_levy(model, grid: TimeGrid, n: int, rng: np.random.Generator) -> _Parts:
    b, sigma, sizes, ints = _levy_params(model)
    N, dt = grid.n_steps, grid.dt
    z = rng.standard_normal((n, N))
    diffusive = sigma * math.sqrt(dt) * z
    jumps = np.zeros((n, N))
    counts = np.zeros((n, N), dtype=np.int64)
    comp = float(np.dot(sizes, ints)) if sizes.size else 0.0
    for s, lam in zip(sizes, ints):
        cnt = rng.poisson(lam * dt, size=(n, N))
        counts += cnt
        jumps += s * cnt
    drift = np.full((n, N), (b - comp) * dt)
    return _assemble(model.x0, drift, diffusive, jumps, counts, b * dt)


def _assemble(x0, drift, diffusive, jumps, counts, fv_step) -> _Parts:
    n, N = drift.shape
    values = np.empty((n, N + 1))
    values[:, 0] = x0
    np.cumsum(drift + diffusive + jumps, axis=1, out=values[:, 1:])
    values[:, 1:] += x0
    flags = np.zeros((n, N + 1), dtype=bool)
    flags[:, 1:] = counts > 0
    fv = np.broadcast_to(fv_step, drift.shape).copy()
    return _Parts(values, flags, fv, diffusive, jumps, counts)


def _simulate_ito(model: ItoSemimartingale, grid: TimeGrid, n: int, rng) -> _Parts:
    N, dt = grid.n_steps, grid.dt
    values = np.empty((n, N + 1))
    values[:, 0] = model.x0
    flags = np.zeros((n, N + 1), dtype=bool)
    fv = np.empty((n, N))
    diffusive = np.empty((n, N))
    jumps = np.zeros((n, N))
    counts = np.zeros((n, N), dtype=np.int64)
    sizes = np.array([s for s, _ in model.jumps], dtype=float)
    running = np.zeros(n)
    for k in range(N):
        t = k * dt
        x = np.where(flags[:, k], values[:, k - 1], values[:, k]) if k else values[:, 0]
        m = running / k if k else x
        beta = model.beta(t, x, m)
        delta = model.delta(t, x, m)
        comp = np.zeros(n)
        z = rng.standard_normal(n)
        for j, (s, e) in enumerate(model.jumps):
            lam = e(t, x, m)
            if np.any(lam < 0):
                raise ValueError(f"negative jump intensity from {e} at t={t}")
            comp += s * lam
            cnt = rng.poisson(lam * dt)
            counts[:, k] += cnt
            jumps[:, k] += sizes[j] * cnt
        fv[:, k] = beta * dt
        diffusive[:, k] = delta * math.sqrt(dt) * z
        values[:, k + 1] = values[:, k] + (beta - comp) * dt + diffusive[:, k] + jumps[:, k]
        flags[:, k + 1] = counts[:, k] > 0
        running += values[:, k]
    return _Parts(values, flags, fv, diffusive, jumps, counts)


def _simulate_chunk(model, grid, n, seed_seq) -> _Parts:
    rng = np.random.default_rng(seed_seq)
    if model.independent_increments:
        return _simulate_levy(model, grid, n, rng)
    return _simulate_ito(model, grid, n, rng)


def _chunk_jobs(n_paths: int, seed: int):
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    n_chunks = -(-n_paths // CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    return [(min(CHUNK, n_paths - i * CHUNK), children[i]) for i in range(n_chunks)]


def _map_chunks(model, grid, jobs, threads):
    run = lambda a: _simulate_chunk(model, grid, a[0], a[1])  # noqa: E731
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            yield from ex.map(run, jobs)
    else:
        for job in jobs:
            yield run(job)


def _simulate_parts(model, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1) -> _Parts:
    parts = list(_map_chunks(model, grid, _chunk_jobs(n_paths, seed), threads))
    if len(parts) == 1:
        return parts[0]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])  # noqa: E731
    return _Parts(*(cat(f) for f in ("values", "flags", "drift", "diffusive", "jumps", "counts")))


def iter_simulate(model, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1, group: int = 16):
    """Yield the paths of :func:`simulate_batch` as consecutive batched chunks.

    Up to ``group`` seed chunks are simulated together, so memory stays bounded
    while the concatenated output equals ``simulate_batch`` exactly.
    """
    jobs = _chunk_jobs(n_paths, seed)
    for start in range(0, len(jobs), group):
        parts = list(_map_chunks(model, grid, jobs[start : start + group], threads))
        values = np.concatenate([p.values for p in parts])
        flags = np.concatenate([p.flags for p in parts])
        yield GridPath(grid, values[..., None], flags)


def simulate_batch(model, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1) -> GridPath:
    """Simulate ``n_paths`` paths; returns a batched :class:`GridPath` of shape ``(n_paths,)``."""
    p = _simulate_parts(model, grid, n_paths, seed, threads)
    return GridPath(grid, p.values[..., None], p.flags)


def simulate(model, grid: TimeGrid, seed: int) -> GridPath:
    """Simulate a single path; equals ``simulate_batch(model, grid, 1, seed)[0]``."""
    return simulate_batch(model, grid, 1, seed)[0]


def jump_counts(model, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1) -> np.ndarray:
    """Number of jumps per path of ``simulate_batch`` with the same arguments.

    Several jumps can fall in one grid step, so this can exceed the number of
    flagged steps.
    """
    return _simulate_parts(model, grid, n_paths, seed, threads).counts.sum(axis=1)


def h1_norm_estimate(model, grid: TimeGrid, n_paths: int, seed: int, threads: int = 1):
    """Monte Carlo estimate of ``E[[M]_T^{1/2} + int |dB|]`` and its standard error.

    ``M`` collects the diffusive increments and the jumps; ``B`` the drift
    increments ``b dt`` of the identity-truncation decomposition.
    """
    p = _simulate_parts(model, grid, n_paths, seed, threads)
    qv = (p.diffusive**2).sum(axis=1) + (p.jumps**2).sum(axis=1)
    var = np.abs(p.drift).sum(axis=1)
    z = np.sqrt(qv) + var
    se = z.std(ddof=1) / math.sqrt(n_paths) if n_paths > 1 else float("nan")
    return float(z.mean()), float(se)
