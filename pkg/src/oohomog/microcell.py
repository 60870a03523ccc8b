"""Cell problems and flux-averaged effective matrices.

Cell problems are solved on the unit square in the cell-local frame
``y = (x - corner) / delta``; the corrector gradients and therefore the
averaged fluxes are invariant under this rescaling.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse.linalg as spla

from .coeffs import CoefficientField
from .fem import LagrangeSpace, unit_cell_space
from .mesh import OfflineMesh, Rectangle, build_offline_mesh

log = logging.getLogger(__name__)

TABLE_FORMAT = "oohomog.effective_table"
TABLE_VERSION = 1


class CellSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class CellSpec:
    center: tuple[float, float] = (0.5, 0.5)
    delta: float = 1e-6
    bc: str = "periodic"  # "dirichlet" or "periodic"
    resolution: int = 32
    degree: int = 2
    freeze_slow: bool = False
    qdeg: int | None = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.bc not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.resolution < 4:
            raise ValueError("resolution must be at least 4")
        if self.degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def quadrature_degree(self) -> int:
        return self.qdeg if self.qdeg is not None else 2 * self.degree + 2

    def at(self, center) -> "CellSpec":
        return replace(self, center=tuple(float(c) for c in center))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["center"] = list(self.center)
        return d


@dataclass
class CellSolution:
    space: LagrangeSpace
    correctors: np.ndarray  # (d, n_dofs) nodal values; for periodic bc the periodic part chi_i
    corner: np.ndarray
    coefficient_values: np.ndarray  # (nT, nq, 2, 2)
    residual: float

    def gradients(self, qdeg: int) -> np.ndarray:
        """Gradients of ``v_i`` at quadrature points, shape ``(d, nT, nq, 2)``."""
        grads = np.stack([self.space.gradient_at_quadrature(c, qdeg) for c in self.correctors])
        if self.space.periodic:
            grads[0, ..., 0] += 1.0
            grads[1, ..., 1] += 1.0
        return grads


def _cell_corner(spec: CellSpec, coeff: CoefficientField) -> np.ndarray:
    corner = np.asarray(spec.center) - 0.5 * spec.delta
    if coeff.lattice:
        # align the micro mesh with the coefficient's grid so jumps sit on element edges
        corner = coeff.lattice * np.round(corner / coeff.lattice)
    return corner


def solve_cell(spec: CellSpec, coeff: CoefficientField) -> CellSolution:
    """Correctors of the cell problem ``-div(a grad v_i) = 0``.

    Dirichlet: ``v_i = y_i`` on the cell boundary.  Periodic: ``v_i - y_i``
    periodic with zero mean; the periodic part is returned.
    """
    space = unit_cell_space(spec.resolution, spec.degree, spec.bc == "periodic")
    qdeg = spec.quadrature_degree
    corner = _cell_corner(spec, coeff)
    field = coeff.frozen(np.asarray(spec.center)) if spec.freeze_slow else coeff
    yq, wq = space.quadrature(qdeg)
    A = field(corner + spec.delta * yq)
    if not np.all(np.isfinite(A)):
        raise CellSolveError(f"non-finite coefficient in cell at {spec.center}")
    K = space.stiffness(A, qdeg)
    if space.periodic:
        rhs = -np.stack([space.vector_load(A[..., :, i], qdeg) for i in range(2)], -1)
        free = np.arange(1, space.n_dofs)  # pin the first dof, then shift to zero mean
        Kff = K[free][:, free].tocsc()
        sol = np.zeros((space.n_dofs, 2))
        sol[free] = _spd_solve(Kff, rhs[free], spec)
        vals = space.values_at_quadrature(sol[:, 0], qdeg), space.values_at_quadrature(sol[:, 1], qdeg)
        for i in range(2):
            sol[:, i] -= np.sum(vals[i] * wq) / np.sum(wq)
        res = K[free] @ sol - rhs[free]
        scale = np.linalg.norm(rhs[free])
    else:
        y = space.dof_coords
        bnd, free = space.boundary_dofs, space.interior_dofs
        sol = y.copy()
        rhs = -(K[free][:, bnd] @ y[bnd])
        sol[free] = _spd_solve(K[free][:, free].tocsc(), rhs, spec)
        res = K[free] @ sol
        scale = np.linalg.norm(K[free][:, bnd] @ y[bnd])
    residual = float(np.linalg.norm(res) / scale) if scale > 0 else float(np.linalg.norm(res))
    if not np.isfinite(residual) or residual > 1e-8:
        raise CellSolveError(f"cell solve at {spec.center} did not converge (residual {residual:.3e})")
    return CellSolution(space, sol.T.copy(), corner, A, residual)


def _spd_solve(K, rhs, spec):
    try:
        lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:  # exactly singular factor
        raise CellSolveError(f"singular cell system at {spec.center}: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0):
        raise CellSolveError(f"indefinite cell system at {spec.center}; check the coefficient")
    return lu.solve(np.asarray(rhs))


@dataclass
class EffectiveSample:
    center: np.ndarray
    matrix: np.ndarray
    spec: CellSpec | None = None
    residual: float = 0.0

    @property
    def off_diagonal(self) -> float:
        return float(max(abs(self.matrix[0, 1]), abs(self.matrix[1, 0])))


def effective_sample(spec: CellSpec, coeff: CoefficientField) -> EffectiveSample:
    """Average of ``a grad v_i`` over the cell; column ``i`` per corrector."""
    sol = solve_cell(spec, coeff)
    qdeg = spec.quadrature_degree
    _, wq = sol.space.quadrature(qdeg)
    grads = sol.gradients(qdeg)  # (i, t, q, k)
    flux = np.einsum("tqjk,itqk,tq->ji", sol.coefficient_values, grads, wq) / wq.sum()
    return EffectiveSample(np.asarray(spec.center, dtype=float), flux, spec, sol.residual)


def _sample_task(args):
    spec, coeff = args
    return effective_sample(spec, coeff)


@dataclass
class EffectiveTable:
    mesh: OfflineMesh
    centers: np.ndarray  # (n, 2)
    matrices: np.ndarray  # (n, 2, 2)
    provenance: dict = field(default_factory=dict)
    residuals: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def analytic(self) -> bool:
        return bool(self.provenance.get("analytic", False))

    @property
    def cell_problems(self) -> int:
        return 0 if self.analytic else len(self.centers)

    def __len__(self) -> int:
        return len(self.centers)

    def to_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "mesh": {"domain": self.mesh.domain.as_list(), "q": self.mesh.q},
            "provenance": self.provenance,
            "centers": self.centers.tolist(),
            "matrices": self.matrices.reshape(len(self), -1).tolist(),
            "residuals": None if self.residuals is None else self.residuals.tolist(),
            "cell_problems": self.cell_problems,
            "wall_time": self.wall_time,
        }

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), **kw)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "EffectiveTable":
        if d.get("format") != TABLE_FORMAT:
            raise ValueError("not an effective-table artifact")
        if d.get("version") != TABLE_VERSION:
            raise ValueError(f"unsupported effective-table version {d.get('version')}")
        mesh = build_offline_mesh(d["mesh"]["domain"], d["mesh"]["q"])
        centers = np.asarray(d["centers"], dtype=float)
        mats = np.asarray(d["matrices"], dtype=float).reshape(-1, 2, 2)
        res = None if d.get("residuals") is None else np.asarray(d["residuals"], dtype=float)
        return cls(mesh, centers, mats, d.get("provenance", {}), res, d.get("wall_time", 0.0))

    @classmethod
    def from_json(cls, path) -> "EffectiveTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def offline_sweep(
    mesh: OfflineMesh,
    coeff: CoefficientField,
    template: CellSpec,
    jobs: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> EffectiveTable:
    """Solve one cell problem per offline element barycenter."""
    t0 = time.perf_counter()
    specs = [template.at(c) for c in mesh.barycenters]
    failures = []
    samples: list[EffectiveSample | None] = [None] * len(specs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sample_task, (s, coeff)) for s in specs]
            for k, fut in enumerate(futures):
                try:
                    samples[k] = fut.result()
                except CellSolveError as exc:
                    failures.append((k, str(exc)))
    else:
        for k, s in enumerate(specs):
            try:
                samples[k] = effective_sample(s, coeff)
            except CellSolveError as exc:
                failures.append((k, str(exc)))
            if progress is not None:
                progress(k + 1, len(specs))
    if failures:
        msg = "; ".join(f"element {k}: {m}" for k, m in failures[:5])
        raise CellSolveError(f"{len(failures)} of {len(specs)} cell problems failed: {msg}")
    wall = time.perf_counter() - t0
    log.info("offline sweep: %d cell problems in %.2fs", len(specs), wall)
    tmpl = template.to_dict()
    tmpl.pop("center")
    return EffectiveTable(
        mesh,
        mesh.barycenters.copy(),
        np.stack([s.matrix for s in samples]),
        {"analytic": False, "coefficient": coeff.descriptor(), "cell": tmpl},
        np.array([s.residual for s in samples]),
        wall,
    )


def analytic_table(mesh: OfflineMesh, effective: Callable, label: str = "analytic") -> EffectiveTable:
    """Table filled by evaluating a known effective matrix at the barycenters."""
    t0 = time.perf_counter()
    mats = np.asarray(effective(mesh.barycenters), dtype=float).reshape(-1, 2, 2)
    return EffectiveTable(
        mesh,
        mesh.barycenters.copy(),
        mats,
        {"analytic": True, "effective": label},
        np.zeros(len(mats)),
        time.perf_counter() - t0,
    )
