"""Multiscale coefficient fields and known effective matrices.

Every field maps points ``(..., 2)`` to matrices ``(..., 2, 2)``.  The shipped
examples are all scalar multiples of the identity.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

TWO_PI = 2.0 * math.pi
DEFAULT_EPSILON = 1e-6
# effective matrix of the Kozlov example divided by the slow factor, taken from
# a truncated-corrector computation on (-200, 200)^2; not recomputed here
KOZLOV_REFERENCE_FACTOR = 7.00


class EllipticityError(ValueError):
    pass


def _identity_times(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    return out


def slow_factor(x) -> np.ndarray:
    """(2.5 + 1.5 sin 2 pi x1)(2.5 + 1.5 cos 2 pi x2)."""
    x = np.asarray(x, dtype=float)
    return (2.5 + 1.5 * np.sin(TWO_PI * x[..., 0])) * (2.5 + 1.5 * np.cos(TWO_PI * x[..., 1]))


def analytic_effective(x) -> np.ndarray:
    """Homogenized matrix of the locally periodic example."""
    return _identity_times(slow_factor(x) / 5.0)


class CoefficientField:
    """Base class for coefficient evaluators.

    Subclasses implement :meth:`__call__`.  ``lattice`` is the edge length of
    an axis-aligned grid on which the field is piecewise smooth (``None`` when
    the field is smooth).
    """

    name = "field"
    epsilon: float = 1.0
    alpha: float = 0.0
    beta: float = math.inf
    seed: int | None = None
    lattice: float | None = None

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def descriptor(self) -> dict:
        d = {"name": self.name, **self.params()}
        if self.seed is not None:
            d["seed"] = int(self.seed)
        return d

    def frozen(self, x0) -> "CoefficientField":
        """Field with its slow part held at ``x0`` (identity for unstructured fields)."""
        return self

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.descriptor()})"


class ConstantField(CoefficientField):
    name = "constant"

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.ndim == 0:
            m = m * np.eye(2)
        self.matrix = m
        sym = 0.5 * (m + m.T)
        self.alpha = float(np.linalg.eigvalsh(sym).min())
        self.beta = float(np.linalg.norm(m, 2))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + (2, 2)).copy()

    def params(self):
        return {"matrix": self.matrix.tolist()}


class FunctionField(CoefficientField):
    """Wrap a plain callable; bounds are declared by the caller."""

    name = "function"

    def __init__(self, func: Callable, alpha: float = 0.0, beta: float = math.inf, label: str = "function"):
        self.func = func
        self.alpha = alpha
        self.beta = beta
        self.label = label

    def __call__(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def params(self):
        return {"label": self.label}


class AnalyticEffective(CoefficientField):
    name = "analytic_effective"
    alpha = 0.2
    beta = 3.2

    def __call__(self, x):
        return analytic_effective(x)


class LocallyPeriodic(CoefficientField):
    """slow(x) / ((2.5 + 1.5 sin(2 pi x1/eps)) (2.5 + 1.5 sin(2 pi x2/eps))) * I."""

    name = "locally_periodic"
    alpha = 1.0 / 16.0
    beta = 16.0

    def __init__(self, epsilon: float = DEFAULT_EPSILON, x_frozen=None):
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self.x_frozen = None if x_frozen is None else np.asarray(x_frozen, dtype=float)

    @staticmethod
    def fast_factor(y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return 1.0 / ((2.5 + 1.5 * np.sin(TWO_PI * y[..., 0])) * (2.5 + 1.5 * np.sin(TWO_PI * y[..., 1])))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        slow = slow_factor(x) if self.x_frozen is None else slow_factor(self.x_frozen)
        return _identity_times(slow * self.fast_factor(x / self.epsilon))

    def frozen(self, x0):
        return LocallyPeriodic(self.epsilon, x0)

    def params(self):
        return {"epsilon": self.epsilon}


def locally_periodic(epsilon: float = DEFAULT_EPSILON) -> LocallyPeriodic:
    return LocallyPeriodic(epsilon)


class Kozlov(CoefficientField):
    """a0(x/eps) a1(x) with quasi-periodic a0 (frequencies 1 and sqrt 2)."""

    name = "kozlov"
    alpha = 6.0
    beta = 128.0

    def __init__(self, epsilon: float = DEFAULT_EPSILON, x_frozen=None):
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        self.epsilon = float(epsilon)
        self.x_frozen = None if x_frozen is None else np.asarray(x_frozen, dtype=float)

    @staticmethod
    def fast_factor(y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        diag = 6.0 + np.sin(TWO_PI * y) ** 2 + np.sin(TWO_PI * math.sqrt(2.0) * y) ** 2
        out = np.zeros(y.shape[:-1] + (2, 2))
        out[..., 0, 0] = diag[..., 0]
        out[..., 1, 1] = diag[..., 1]
        return out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        slow = slow_factor(x) if self.x_frozen is None else slow_factor(self.x_frozen)
        return self.fast_factor(x / self.epsilon) * np.asarray(slow)[..., None, None]

    def frozen(self, x0):
        return Kozlov(self.epsilon, x0)

    def params(self):
        return {"epsilon": self.epsilon}


def kozlov(epsilon: float = DEFAULT_EPSILON) -> Kozlov:
    return Kozlov(epsilon)


def kozlov_reference_effective(x) -> np.ndarray:
    return _identity_times(KOZLOV_REFERENCE_FACTOR * slow_factor(x))


_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def splitmix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def hash_uniform(seed: int, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) draw that depends only on (seed, i, j)."""
    i = np.asarray(i, dtype=np.int64).astype(np.uint64)
    j = np.asarray(j, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        h = splitmix64(h ^ i)
        h = splitmix64(h ^ (j * np.uint64(0xD6E8FEB86659FD93)))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def derive_seed(master: int, index: int) -> int:
    return int(splitmix64(splitmix64(np.uint64(master & 0xFFFFFFFFFFFFFFFF)) ^ np.uint64(index)))


@dataclass(frozen=True)
class CheckerboardSpec:
    epsilon: float = DEFAULT_EPSILON
    k1: float = 1.0
    k2: float = 9.0
    p1: float = 0.5
    seed: int = 0
    a0: str = "slow"  # "slow" for the (2.5+1.5 sin)(2.5+1.5 cos) background, "zero" for none

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ValueError(f"p1 must lie in [0, 1], got {self.p1}")
        if not (self.k1 > 0 and self.k2 > 0):
            raise ValueError("k1 and k2 must be positive")
        if self.a0 not in ("slow", "zero"):
            raise ValueError(f"unknown background {self.a0!r}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


class Checkerboard(CoefficientField):
    """(k(cell) + a0(x)) I with k drawn per epsilon-cell from {k1, k2}."""

    name = "checkerboard"

    def __init__(self, spec: CheckerboardSpec, x_frozen=None):
        self.spec = spec
        self.epsilon = spec.epsilon
        self.seed = spec.seed
        self.lattice = spec.epsilon
        self.x_frozen = None if x_frozen is None else np.asarray(x_frozen, dtype=float)
        ks = [k for k, p in ((spec.k1, spec.p1), (spec.k2, 1.0 - spec.p1)) if p > 0]
        lo, hi = (1.0, 16.0) if spec.a0 == "slow" else (0.0, 0.0)
        self.alpha = min(ks) + lo
        self.beta = max(ks) + hi

    def cell_values(self, i, j) -> np.ndarray:
        u = hash_uniform(self.spec.seed, i, j)
        return np.where(u < self.spec.p1, self.spec.k1, self.spec.k2)

    def background(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.spec.a0 == "zero":
            return np.zeros(x.shape[:-1])
        if self.x_frozen is not None:
            return np.broadcast_to(slow_factor(self.x_frozen), x.shape[:-1])
        return slow_factor(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        i = np.floor(x[..., 0] / self.epsilon)
        j = np.floor(x[..., 1] / self.epsilon)
        return _identity_times(self.cell_values(i, j) + self.background(x))

    def frozen(self, x0):
        return Checkerboard(self.spec, x0)

    def params(self):
        d = asdict(self.spec)
        d.pop("seed")
        return d


def checkerboard(spec: CheckerboardSpec) -> Checkerboard:
    return Checkerboard(spec)


def field_from_descriptor(desc: dict) -> CoefficientField:
    """Rebuild a shipped field from its :meth:`CoefficientField.descriptor`."""
    desc = dict(desc)
    name = desc.pop("name")
    if name == "locally_periodic":
        return LocallyPeriodic(desc.get("epsilon", DEFAULT_EPSILON))
    if name == "kozlov":
        return Kozlov(desc.get("epsilon", DEFAULT_EPSILON))
    if name == "checkerboard":
        return Checkerboard(CheckerboardSpec(**desc))
    if name == "constant":
        return ConstantField(desc.get("matrix", np.eye(2)))
    if name == "identity":
        return ConstantField(np.eye(2))
    if name == "analytic_effective":
        return AnalyticEffective()
    raise ValueError(f"unknown coefficient {name!r}")


def verify_ellipticity(field: CoefficientField, probes, directions: int = 16, tol: float = 1e-12):
    """Empirical ellipticity bounds of ``field`` over the probe points.

    Returns ``(alpha_hat, beta_hat)``: the least Rayleigh quotient
    ``(A xi, xi)`` and the largest gain ``|A xi|`` over unit directions.
    Raises :class:`EllipticityError` if a probe is not positive or the
    declared bounds are violated.
    """
    probes = np.asarray(probes, dtype=float).reshape(-1, 2)
    if len(probes) == 0:
        raise ValueError("empty probe set")
    theta = np.pi * np.arange(directions) / directions
    xi = np.stack([np.cos(theta), np.sin(theta)], -1)
    A = field(probes)
    Axi = np.einsum("pij,dj->pdi", A, xi)
    rayleigh = np.einsum("pdi,di->pd", Axi, xi)
    gain = np.linalg.norm(Axi, axis=-1)
    alpha_hat, beta_hat = float(rayleigh.min()), float(gain.max())
    if alpha_hat <= 0:
        bad = probes[np.argmin(rayleigh.min(axis=1))]
        raise EllipticityError(f"non-positive coefficient at {tuple(bad)}: {alpha_hat}")
    if alpha_hat < field.alpha - tol or beta_hat > field.beta + tol:
        raise EllipticityError(
            f"bounds violated: alpha_hat={alpha_hat} (declared {field.alpha}), "
            f"beta_hat={beta_hat} (declared {field.beta})"
        )
    return alpha_hat, beta_hat


def probe_grid(domain=(0.0, 0.0, 1.0, 1.0), n: int = 128) -> np.ndarray:
    x0, y0, x1, y1 = domain
    X, Y = np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n))
    return np.stack([X.ravel(), Y.ravel()], -1)
