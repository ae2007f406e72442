"""Named scalar functions with hand-coded first and second derivatives.

Payoff shapes, integrands and weights are picked from this library by name so
that derivative probes always have an exact reference to compare against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

__all__ = ["ScalarFunction", "get_function", "available_functions"]


def _softplus(x, strike, beta):
    z = beta * (x - strike)
    # same value as logaddexp(0, z), about twice as fast on large arrays
    return (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / beta


def _softplus_d1(x, strike, beta):
    return expit(beta * (x - strike))


def _softplus_d2(x, strike, beta):
    s = expit(beta * (x - strike))
    return beta * s * (1.0 - s)


def _exp_clip(x, cap):
    return np.exp(np.clip(x, -cap, cap))


def _exp_clip_d(x, cap):
    inside = (x > -cap) & (x < cap)
    return np.where(inside, np.exp(np.clip(x, -cap, cap)), 0.0)


_ZERO = lambda x, **_: np.zeros_like(x)  # noqa: E731

# name -> (f, f', f'', default parameters)
_LIBRARY: dict[str, tuple[Callable, Callable, Callable, dict]] = {
    "zero": (_ZERO, _ZERO, _ZERO, {}),
    "one": (lambda x: np.ones_like(x), _ZERO, _ZERO, {}),
    "const": (lambda x, c: np.full_like(x, c), _ZERO, _ZERO, {"c": 1.0}),
    "identity": (lambda x: x, lambda x: np.ones_like(x), _ZERO, {}),
    "affine": (
        lambda x, a, b: a * x + b,
        lambda x, a, b: np.full_like(x, a),
        _ZERO,
        {"a": 1.0, "b": 0.0},
    ),
    "square": (lambda x: x * x, lambda x: 2.0 * x, lambda x: np.full_like(x, 2.0), {}),
    "neg_square": (lambda x: -x * x, lambda x: -2.0 * x, lambda x: np.full_like(x, -2.0), {}),
    "cube": (lambda x: x * x * x, lambda x: 3.0 * x * x, lambda x: 6.0 * x, {}),
    "exp_clip": (_exp_clip, _exp_clip_d, _exp_clip_d, {"cap": 30.0}),
    "softplus": (_softplus, _softplus_d1, _softplus_d2, {"strike": 0.0, "beta": 1.0}),
    "sin": (np.sin, np.cos, lambda x: -np.sin(x), {}),
    "cos": (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), {}),
    "tanh": (
        np.tanh,
        lambda x: 1.0 - np.tanh(x) ** 2,
        lambda x: -2.0 * np.tanh(x) * (1.0 - np.tanh(x) ** 2),
        {},
    ),
    "logistic": (
        expit,
        lambda x: expit(x) * (1.0 - expit(x)),
        lambda x: expit(x) * (1.0 - expit(x)) * (1.0 - 2.0 * expit(x)),
        {},
    ),
    "gauss": (
        lambda x: np.exp(-0.5 * x * x),
        lambda x: -x * np.exp(-0.5 * x * x),
        lambda x: (x * x - 1.0) * np.exp(-0.5 * x * x),
        {},
    ),
}


def available_functions() -> list[str]:
    return sorted(_LIBRARY)


@dataclass(frozen=True)
class ScalarFunction:
    """A library member, optionally with parameters.

    >>> sq = ScalarFunction("square")
    >>> float(sq(3.0)), float(sq.d1(3.0)), float(sq.d2(3.0))
    (9.0, 6.0, 2.0)
    """

    name: str
    params: tuple = field(default=())

    def __post_init__(self):
        if self.name not in _LIBRARY:
            raise ValueError(f"unknown function {self.name!r}; choose from {available_functions()}")
        defaults = _LIBRARY[self.name][3]
        given = dict(self.params)
        unknown = set(given) - set(defaults)
        if unknown:
            raise ValueError(f"{self.name} takes parameters {sorted(defaults)}, got {sorted(unknown)}")
        merged = {**defaults, **{k: float(v) for k, v in given.items()}}
        object.__setattr__(self, "params", tuple(sorted(merged.items())))

    @property
    def kwargs(self) -> dict:
        return dict(self.params)

    def __call__(self, x):
        return _LIBRARY[self.name][0](np.asarray(x, dtype=float), **self.kwargs)

    def d1(self, x):
        return _LIBRARY[self.name][1](np.asarray(x, dtype=float), **self.kwargs)

    def d2(self, x):
        return _LIBRARY[self.name][2](np.asarray(x, dtype=float), **self.kwargs)

    def to_dict(self) -> dict:
        out = {"name": self.name}
        defaults = _LIBRARY[self.name][3]
        out.update({k: v for k, v in self.params if v != defaults[k]})
        return out

    def __str__(self):
        extra = ",".join(f"{k}={v:g}" for k, v in self.params)
        return f"{self.name}({extra})" if extra else self.name


def get_function(spec) -> ScalarFunction:
    """Build a :class:`ScalarFunction` from a name, a mapping or an instance."""
    if isinstance(spec, ScalarFunction):
        return spec
    if isinstance(spec, str):
        return ScalarFunction(spec)
    if isinstance(spec, dict):
        spec = dict(spec)
        name = spec.pop("name")
        return ScalarFunction(name, tuple(spec.items()))
    raise TypeError(f"cannot build a function from {spec!r}")
