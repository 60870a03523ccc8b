"""Local least-squares reconstruction of the effective matrix.

On every offline element ``K`` the entries of the sampled effective matrix are
fitted, in the least-squares sense, by polynomials of degree ``m`` over the
sampling points of the patch ``S(K)``.  The basis is the monomials in
``(x - c) / R`` with ``c`` the patch center and ``R`` its enclosing radius, so
the design matrix conditioning does not depend on the mesh size.

Besides the fit itself the module carries the norming-set diagnostics: the
constant ``Lambda(m, I(K))`` (estimated by linear programming on a probe grid),
the Markov-inequality ratio, and randomized checks of the stability,
quasi-optimality and perturbation estimates of the reconstruction operator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .mesh import ElementPatch, OfflineMesh, build_offline_mesh, build_patch, locate, sampling_threshold

FIELD_FORMAT = "oohomog.poly_matrix_field"
FIELD_VERSION = 1
RANK_TOL = 1e-12


class UnisolvenceError(ValueError):
    """Sampling points of a patch do not determine a unique polynomial."""

    def __init__(self, element: int, message: str):
        super().__init__(f"element {element}: {message}")
        self.element = element


@lru_cache(maxsize=None)
def exponents(m: int) -> tuple[tuple[int, int], ...]:
    """Monomial exponents of P_m in two variables, ordered by total degree."""
    return tuple((k - j, j) for k in range(m + 1) for j in range(k + 1))


def dim_poly(m: int, d: int = 2) -> int:
    return math.comb(m + d, d)


def basis(x, center, scale, m: int) -> np.ndarray:
    """Scaled monomials at ``x``; ``center``/``scale`` broadcast against ``x``."""
    z = (np.asarray(x, dtype=float) - center) / np.asarray(scale)[..., None]
    ex = np.array(exponents(m))
    return z[..., None, 0] ** ex[:, 0] * z[..., None, 1] ** ex[:, 1]


def basis_gradient(x, center, scale, m: int) -> np.ndarray:
    z = (np.asarray(x, dtype=float) - center) / np.asarray(scale)[..., None]
    ex = np.array(exponents(m))
    a, b = ex[:, 0], ex[:, 1]
    zx, zy = z[..., None, 0], z[..., None, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = np.where(a > 0, a * zx ** np.maximum(a - 1, 0) * zy**b, 0.0)
        dy = np.where(b > 0, b * zx**a * zy ** np.maximum(b - 1, 0), 0.0)
    return np.stack([dx, dy], -1) / np.asarray(scale)[..., None, None]


def reconstruction_patch(mesh: OfflineMesh, k: int, m: int, n_lowest: int | None = None) -> ElementPatch:
    """Patch used to fit element ``k``: the Moore growth with at least m+1 cells per axis."""
    if n_lowest is None:
        n_lowest = sampling_threshold(m) if m >= 1 else 1
    return build_patch(mesh, k, n_lowest, min_extent=m + 1)


@dataclass
class PatchFit:
    coeffs: np.ndarray  # (nb, ...) one coefficient vector per fitted entry
    center: np.ndarray
    scale: float
    residual: float
    condition: float


def fit_patch(points, values, patch: ElementPatch, m: int) -> PatchFit:
    """Least-squares fit of ``values`` (shape ``(n, ...)``) at ``points`` by P_m.

    All entries share the SVD of the common design matrix.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(values, dtype=float)
    V = basis(points, patch.center, patch.R, m)
    nb = V.shape[1]
    if len(points) < nb:
        raise UnisolvenceError(patch.k, f"{len(points)} samples cannot determine {nb} coefficients")
    U, s, Vt = np.linalg.svd(V, full_matrices=False)
    if s[-1] <= RANK_TOL * s[0]:
        raise UnisolvenceError(patch.k, f"rank-deficient design matrix (sigma_min/sigma_max={s[-1] / s[0]:.2e})")
    Y = values.reshape(len(points), -1)
    C = Vt.T @ ((U.T @ Y) / s[:, None])
    resid = float(np.linalg.norm(V @ C - Y))
    return PatchFit(C.reshape((nb,) + values.shape[1:]), np.asarray(patch.center), float(patch.R), resid, float(s[0] / s[-1]))


@dataclass(eq=False)
class PolyMatrixField:
    """Piecewise polynomial matrix field, one polynomial matrix per offline element."""

    mesh: OfflineMesh
    m: int
    n_lowest: int
    centers: np.ndarray  # (nE, 2) basis centers
    scales: np.ndarray  # (nE,)
    coeffs: np.ndarray  # (nE, nb, 2, 2)
    residuals: np.ndarray
    conditions: np.ndarray
    sample_points: np.ndarray
    sample_matrices: np.ndarray
    provenance: dict = field(default_factory=dict)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        flat = x.reshape(-1, 2)
        e = np.atleast_1d(locate(self.mesh, flat))
        B = basis(flat, self.centers[e], self.scales[e], self.m)
        out = np.einsum("pb,pbij->pij", B, self.coeffs[e])
        return out.reshape(shape + (2, 2))

    __call__ = evaluate

    def to_dict(self) -> dict:
        return {
            "format": FIELD_FORMAT,
            "version": FIELD_VERSION,
            "mesh": {"domain": self.mesh.domain.as_list(), "q": self.mesh.q},
            "order": self.m,
            "n_lowest": self.n_lowest,
            "basis": "scaled monomials ((x-c)/R)^a, exponents ordered by total degree",
            "centers": self.centers.tolist(),
            "scales": self.scales.tolist(),
            "coeffs": self.coeffs.reshape(len(self.scales), -1).tolist(),
            "residuals": self.residuals.tolist(),
            "conditions": self.conditions.tolist(),
            "samples": {
                "points": self.sample_points.tolist(),
                "matrices": self.sample_matrices.reshape(len(self.sample_points), -1).tolist(),
            },
            "provenance": self.provenance,
        }

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), **kw)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "PolyMatrixField":
        if d.get("format") != FIELD_FORMAT:
            raise ValueError("not a reconstructed-field artifact")
        if d.get("version") != FIELD_VERSION:
            raise ValueError(f"unsupported field version {d.get('version')}")
        mesh = build_offline_mesh(d["mesh"]["domain"], d["mesh"]["q"])
        m = int(d["order"])
        nb = dim_poly(m)
        return cls(
            mesh,
            m,
            int(d["n_lowest"]),
            np.asarray(d["centers"], dtype=float),
            np.asarray(d["scales"], dtype=float),
            np.asarray(d["coeffs"], dtype=float).reshape(-1, nb, 2, 2),
            np.asarray(d["residuals"], dtype=float),
            np.asarray(d["conditions"], dtype=float),
            np.asarray(d["samples"]["points"], dtype=float),
            np.asarray(d["samples"]["matrices"], dtype=float).reshape(-1, 2, 2),
            d.get("provenance", {}),
        )

    @classmethod
    def from_json(cls, path) -> "PolyMatrixField":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate(field: PolyMatrixField, x) -> np.ndarray:
    return field.evaluate(x)


def reconstruct_field(mesh: OfflineMesh, table, m: int, n_lowest: int | None = None) -> PolyMatrixField:
    """Fit every element of ``mesh`` from its patch of table samples."""
    threshold = sampling_threshold(m) if m >= 1 else 1
    if n_lowest is None:
        n_lowest = threshold
    if n_lowest < threshold:
        raise ValueError(f"n_lowest={n_lowest} below the threshold {threshold} for m={m}")
    if len(table.centers) != mesh.n_elements:
        raise ValueError("table does not hold one sample per offline element")
    nE, nb = mesh.n_elements, dim_poly(m)
    centers = np.empty((nE, 2))
    scales = np.empty(nE)
    coeffs = np.empty((nE, nb, 2, 2))
    residuals = np.empty(nE)
    conds = np.empty(nE)
    for k in range(nE):
        patch = reconstruction_patch(mesh, k, m, n_lowest)
        idx = np.asarray(patch.members)
        fit = fit_patch(table.centers[idx], table.matrices[idx], patch, m)
        centers[k], scales[k], coeffs[k] = fit.center, fit.scale, fit.coeffs
        residuals[k], conds[k] = fit.residual, fit.condition
    prov = {"table": dict(table.provenance), "m": m, "n_lowest": n_lowest}
    return PolyMatrixField(mesh, m, n_lowest, centers, scales, coeffs, residuals, conds,
                           table.centers.copy(), table.matrices.copy(), prov)


# ---------------------------------------------------------------------------
# norming-set diagnostics

def patch_probes(patch: ElementPatch, density: int = 8) -> np.ndarray:
    """Uniform grid on the closed patch, ``density`` intervals per cell side.

    Even densities contain the barycenters; doubling the density nests grids.
    """
    lo, hi = patch.bbox
    h = math.sqrt(patch.cell_area)
    nx = int(round((hi[0] - lo[0]) / h)) * density
    ny = int(round((hi[1] - lo[1]) / h)) * density
    X, Y = np.meshgrid(np.linspace(lo[0], hi[0], nx + 1), np.linspace(lo[1], hi[1], ny + 1))
    pts = np.stack([X.ravel(), Y.ravel()], -1)
    return np.unique(np.vstack([pts, patch.points]), axis=0)


def element_probes(patch: ElementPatch, probes: np.ndarray, mesh_cell: np.ndarray | None = None) -> np.ndarray:
    """Subset of ``probes`` lying in the closed element ``K`` of the patch."""
    h = math.sqrt(patch.cell_area)
    c = patch.points[patch.members.index(patch.k)]
    inside = np.all(np.abs(probes - c) <= 0.5 * h * (1 + 1e-12), axis=-1)
    return probes[inside]


def _pointwise_norming(phi_x: np.ndarray, V: np.ndarray) -> float:
    """max p(x) over p in P_m with |p| <= 1 on the sampling points."""
    n = len(V)
    res = linprog(-phi_x, A_ub=np.vstack([V, -V]), b_ub=np.ones(2 * n), bounds=(None, None), method="highs")
    if res.status != 0:
        raise UnisolvenceError(-1, f"norming LP failed: {res.message}")
    return float(-res.fun)


def _geometry_key(patch: ElementPatch) -> tuple:
    h = math.sqrt(patch.cell_area)
    c = patch.points[patch.members.index(patch.k)]
    return tuple(np.round((patch.bbox - c).ravel() / h, 9))


_LAMBDA_CACHE: dict = {}


def lambda_estimate(patch: ElementPatch, m: int, density: int = 8, probes: np.ndarray | None = None) -> float:
    """Probe-grid estimate of ``Lambda(m, I(K))``.

    For each probe ``x`` the exact value ``max{p(x) : |p| <= 1 on I(K)}`` is an
    LP; the estimate is the largest such value over the probes and therefore a
    lower bound of the true constant.  Probes are visited in decreasing order
    of the Lebesgue-function upper bound ``||phi(x) V^+||_1`` and the search stops
    once no remaining probe can beat the current maximum.
    """
    key = None
    if probes is None:
        key = (_geometry_key(patch), m, density)
        if key in _LAMBDA_CACHE:
            return _LAMBDA_CACHE[key]
        probes = patch_probes(patch, density)
    V = basis(patch.points, patch.center, patch.R, m)
    if np.linalg.matrix_rank(V, tol=RANK_TOL * np.linalg.norm(V, 2)) < V.shape[1]:
        raise UnisolvenceError(patch.k, "sampling set is not unisolvent")
    Phi = basis(probes, patch.center, patch.R, m)
    upper = np.abs(Phi @ np.linalg.pinv(V)).sum(axis=1)
    best = 1.0
    for i in np.argsort(-upper):
        if upper[i] <= best * (1 + 1e-12):
            break
        best = max(best, _pointwise_norming(Phi[i], V))
    if key is not None:
        _LAMBDA_CACHE[key] = best
    return best


def markov_factor(patch: ElementPatch, m: int, convex: bool = False) -> float:
    """Markov constant ``4 m^2 R / r^2`` (or ``4 m^2 / w`` for a convex patch)."""
    if convex:
        return 4 * m * m / patch.width
    return 4 * m * m * patch.R / patch.r**2


def _random_coeffs(rng, m, trials):
    return rng.standard_normal((trials, dim_poly(m)))


def markov_check(patch: ElementPatch, m: int, trials: int = 100, rng=None, density: int = 16, convex: bool = False) -> float:
    """Worst ``||grad g|| / (||g|| * Markov constant)`` over random ``g`` in P_m."""
    if m == 0:
        return 0.0
    rng = np.random.default_rng(rng)
    probes = patch_probes(patch, density)
    B = basis(probes, patch.center, patch.R, m)
    G = basis_gradient(probes, patch.center, patch.R, m)
    C = _random_coeffs(rng, m, trials)
    gvals = np.abs(B @ C.T).max(axis=0)
    gnorm = np.linalg.norm(np.einsum("pbk,tb->tpk", G, C), axis=-1).max(axis=1)
    return float((gnorm / (gvals * markov_factor(patch, m, convex))).max())


@dataclass
class CheckReport:
    trials: int
    violations: int
    worst_ratio: float
    lambda_hat: float
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _fit_values(points, values, patch, m):
    return fit_patch(points, values, patch, m).coeffs


def stability_check(patch: ElementPatch, m: int, trials: int = 100, rng=None, density: int = 8) -> CheckReport:
    """``||R_K g||_K <= Lambda sqrt(#I) ||g|_I||_inf`` on random sample data."""
    rng = np.random.default_rng(rng)
    lam = lambda_estimate(patch, m, density)
    probes = element_probes(patch, patch_probes(patch, density))
    BK = basis(probes, patch.center, patch.R, m)
    n = patch.n_samples
    data = rng.uniform(-1, 1, (n, trials)) * rng.uniform(0.1, 10, trials)
    C = _fit_values(patch.points, data, patch, m)
    lhs = np.abs(BK @ C).max(axis=0)
    rhs = lam * math.sqrt(n) * np.abs(data).max(axis=0)
    ratio = lhs / rhs
    return CheckReport(trials, int(np.sum(ratio > 1 + 1e-9)), float(ratio.max()), lam)


def random_smooth_function(rng):
    """Random analytic function of the patch-scaled variable, vectorized in x."""
    k = rng.normal(0, 2.5, 2)
    b = rng.normal(0, 1.0, 2)
    ph = rng.uniform(0, 2 * math.pi)
    amp = rng.uniform(0.5, 2.0)

    def g(z):
        return amp * np.sin(z @ k + ph) * np.exp(0.5 * (z @ b))

    return g


def best_approximation_error(values: np.ndarray, B: np.ndarray) -> float:
    """``min_p max_j |values_j - p(x_j)|`` over the rows of ``B`` (LP)."""
    npts, nb = B.shape
    c = np.zeros(nb + 1)
    c[-1] = 1.0
    A = np.block([[-B, -np.ones((npts, 1))], [B, -np.ones((npts, 1))]])
    b = np.concatenate([-values, values])
    res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * nb + [(0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"minimax LP failed: {res.message}")
    return float(res.x[-1])


def quasi_optimality_check(patch: ElementPatch, m: int, trials: int = 100, rng=None, density: int = 6) -> CheckReport:
    """``||g - R_K g||_K <= (1 + Lambda) sqrt(#I) inf_p ||g - p||_S`` for random analytic ``g``.

    The infimum is taken over the probe grid of the patch, which contains the
    sampling points and the probes of ``K``.
    """
    rng = np.random.default_rng(rng)
    lam = lambda_estimate(patch, m, density)
    probes = patch_probes(patch, density)
    kprobes = element_probes(patch, probes)
    BS = basis(probes, patch.center, patch.R, m)
    BK = basis(kprobes, patch.center, patch.R, m)
    zS = (probes - patch.center) / patch.R
    zK = (kprobes - patch.center) / patch.R
    zI = (patch.points - patch.center) / patch.R
    n = patch.n_samples
    ratios = []
    for _ in range(trials):
        g = random_smooth_function(rng)
        C = _fit_values(patch.points, g(zI), patch, m)
        lhs = np.abs(g(zK) - BK @ C).max()
        best = best_approximation_error(g(zS), BS)
        rhs = (1 + lam) * math.sqrt(n) * best
        ratios.append(lhs / rhs if rhs > 0 else (0.0 if lhs < 1e-13 else math.inf))
    ratios = np.array(ratios)
    return CheckReport(trials, int(np.sum(ratios > 1 + 1e-7)), float(ratios.max()), lam)


def perturbation_radius(patch: ElementPatch, m: int, delta: float, lam: float) -> float:
    """Admissible node perturbation ``delta r^2 / (4 Lambda m^2 R)``."""
    if m == 0:
        return math.inf
    return delta * patch.r**2 / (4 * lam * m * m * patch.R)


def perturb_stability(patch: ElementPatch, m: int, delta: float = 0.5, trials: int = 100, rng=None,
                      density: int = 8) -> CheckReport:
    """Fits on randomly perturbed sampling nodes obey the perturbed stability bound."""
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    rng = np.random.default_rng(rng)
    lam = lambda_estimate(patch, m, density)
    eps = perturbation_radius(patch, m, delta, lam) if delta > 0 else 0.0
    kprobes = element_probes(patch, patch_probes(patch, density))
    BK = basis(kprobes, patch.center, patch.R, m)
    n = patch.n_samples
    bound_factor = lam / (1 - delta) * math.sqrt(n)
    ratios = np.empty(trials)
    for t in range(trials):
        rad = eps * np.sqrt(rng.uniform(0, 1, n))
        ang = rng.uniform(0, 2 * math.pi, n)
        pts = patch.points + np.stack([rad * np.cos(ang), rad * np.sin(ang)], -1)
        data = rng.uniform(-1, 1, n)
        C = _fit_values(pts, data, patch, m)
        ratios[t] = np.abs(BK @ C).max() / (bound_factor * np.abs(data).max())
    return CheckReport(trials, int(np.sum(ratios > 1 + 1e-9)), float(ratios.max()), lam, {"epsilon": eps})


@dataclass
class NormingReport:
    element: int
    lambda_hat: float
    markov_ratio: float
    cardinality: int
    R: float
    r: float
    width: float
    perturbation_radius: float


def norming_report(patch: ElementPatch, m: int, delta: float = 0.5, density: int = 8, trials: int = 50, rng=None) -> NormingReport:
    lam = lambda_estimate(patch, m, density)
    return NormingReport(
        patch.k,
        lam,
        markov_check(patch, m, trials, rng),
        patch.n_samples,
        patch.R,
        patch.r,
        patch.width,
        perturbation_radius(patch, m, delta, lam),
    )


def lambda_summary(mesh: OfflineMesh, m: int, n_lowest: int | None = None, density: int = 8) -> dict:
    """Per-element and worst-case ``Lambda`` estimates over the whole mesh."""
    n_lowest = n_lowest or sampling_threshold(m)
    per = np.array([lambda_estimate(reconstruction_patch(mesh, k, m, n_lowest), m, density)
                    for k in range(mesh.n_elements)])
    return {"per_element": per, "max": float(per.max())}
