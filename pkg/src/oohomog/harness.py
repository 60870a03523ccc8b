"""Config-driven offline/online runs, convergence studies and ensembles.

A study is described by a TOML file::

    [problem]
    coefficient = "locally_periodic"   # analytic_effective | kozlov | checkerboard | identity
    epsilon = 1e-6
    f = 1.0

    [offline]
    q = [8, 16, 32]          # or a single int; may be derived from [coupling]
    m = 2
    analytic = true          # sample the known effective matrix instead of solving cells

    [offline.cell]
    resolution = 32
    bc = "periodic"

    [online]
    n = [16, 32, 64]
    l = 2
    reference_n = 256

    [coupling]
    rule = "h1"              # none | h1 | l2
    c = 2.0

Every CSV written here is a pure function of the config and the master seed;
wall times go to a separate ``timings.csv``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .coeffs import (
    AnalyticEffective,
    Checkerboard,
    CheckerboardSpec,
    CoefficientField,
    ConstantField,
    Kozlov,
    LocallyPeriodic,
    analytic_effective,
    derive_seed,
    kozlov_reference_effective,
)
from .macrosolver import ExactSolution, assemble_solve, emod_report, fem_space, relative_errors
from .mesh import Rectangle, build_offline_mesh
from .microcell import CellSolveError, CellSpec, EffectiveTable, analytic_table, effective_sample, offline_sweep
from .reconstruct import PolyMatrixField, reconstruct_field

log = logging.getLogger(__name__)

ERRORS_SCHEMA = "oohomog.errors.v1"
ERROR_COLUMNS = ["schema", "kind", "q", "n", "m", "l", "cell_problems", "h1_error", "l2_error", "emod", "e1mod"]
TIMING_COLUMNS = ["q", "n", "m", "l", "cell_problems", "offline_time", "online_time"]
ENSEMBLE_SCHEMA = "oohomog.ensemble.v1"
ENSEMBLE_COLUMNS = ["schema", "probe", "x1", "x2", "L", "mean11", "mean12", "mean21", "mean22", "sigma_diag", "sigma_12"]
DEFAULT_PROBES = {"A": (0.25, 0.0), "B": (0.75, 0.5), "C": (1.0, 0.25)}


class ConfigError(ValueError):
    pass


def _schedule(v, name) -> list[int]:
    vals = [int(x) for x in (v if isinstance(v, (list, tuple)) else [v])]
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{name} schedule must be strictly increasing: {vals}")
    if any(x < 1 for x in vals):
        raise ConfigError(f"{name} values must be positive")
    return vals


@dataclass
class StudyConfig:
    problem: dict = field(default_factory=lambda: {"coefficient": "locally_periodic"})
    offline: dict = field(default_factory=dict)
    online: dict = field(default_factory=dict)
    coupling: dict = field(default_factory=lambda: {"rule": "none"})
    ensemble: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    study: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = {"problem", "offline", "online", "coupling", "ensemble", "output", "study", "seed"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        d = {k: (dict(v) if isinstance(v, dict) else v) for k, v in d.items()}
        return cls(**d)

    @classmethod
    def from_toml(cls, path) -> "StudyConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    # -- accessors with defaults
    @property
    def domain(self) -> Rectangle:
        return Rectangle.coerce(self.problem.get("domain", (0.0, 0.0, 1.0, 1.0)))

    @property
    def m_values(self) -> list[int]:
        m = self.offline.get("m", 2)
        return [int(x) for x in (m if isinstance(m, (list, tuple)) else [m])]

    @property
    def l(self) -> int:
        return int(self.online.get("l", 2))

    @property
    def q_schedule(self) -> list[int] | None:
        return _schedule(self.offline["q"], "q") if "q" in self.offline else None

    @property
    def n_schedule(self) -> list[int] | None:
        return _schedule(self.online["n"], "n") if "n" in self.online else None

    @property
    def analytic(self) -> bool:
        return bool(self.offline.get("analytic", False))

    def cell_template(self) -> CellSpec:
        c = dict(self.offline.get("cell", {}))
        c.setdefault("delta", float(self.problem.get("epsilon", 1e-6)) * float(c.pop("delta_over_epsilon", 1.0)))
        # one fast period with the slow factor frozen at the sampling point
        c.setdefault("freeze_slow", self.problem.get("coefficient") == "locally_periodic")
        return CellSpec(**c)

    def validate(self) -> None:
        name = self.problem.get("coefficient")
        if name not in COEFFICIENTS:
            raise ConfigError(f"unknown coefficient {name!r}; expected one of {sorted(COEFFICIENTS)}")
        rule = self.coupling.get("rule", "none")
        if rule not in ("none", "h1", "l2"):
            raise ConfigError(f"unknown coupling rule {rule!r}")
        if rule != "none" and "n" not in self.online:
            raise ConfigError("a coupling rule needs an online n schedule")
        if self.l not in (1, 2):
            raise ConfigError("online degree l must be 1 or 2")
        for m in self.m_values:
            if not 0 <= m <= 3:
                raise ConfigError(f"reconstruction order {m} outside 0..3")
        self.q_schedule, self.n_schedule  # schedule checks
        if "L" in self.ensemble:
            _schedule(self.ensemble["L"], "L")
        if "cell" in self.offline:
            self.cell_template()


# ---------------------------------------------------------------------------
# problem set-up

def _checkerboard_spec(problem: dict, seed: int) -> CheckerboardSpec:
    cb = dict(problem.get("checkerboard", {}))
    cb.setdefault("epsilon", float(problem.get("epsilon", 1e-6)))
    cb["seed"] = int(seed)
    return CheckerboardSpec(**cb)


COEFFICIENTS = {
    "locally_periodic": lambda p, s: LocallyPeriodic(float(p.get("epsilon", 1e-6))),
    "kozlov": lambda p, s: Kozlov(float(p.get("epsilon", 1e-6))),
    "checkerboard": lambda p, s: Checkerboard(_checkerboard_spec(p, s)),
    "analytic_effective": lambda p, s: AnalyticEffective(),
    "identity": lambda p, s: ConstantField(np.eye(2)),
    "constant": lambda p, s: ConstantField(np.asarray(p.get("matrix", np.eye(2)), dtype=float)),
}

EFFECTIVE = {
    "locally_periodic": analytic_effective,
    "analytic_effective": analytic_effective,
    "kozlov": kozlov_reference_effective,
}


def make_coefficient(cfg: StudyConfig, seed: int | None = None) -> CoefficientField:
    return COEFFICIENTS[cfg.problem["coefficient"]](cfg.problem, cfg.seed if seed is None else seed)


def effective_reference(cfg: StudyConfig):
    """Known effective matrix of the configured problem, or None."""
    name = cfg.problem["coefficient"]
    if name in EFFECTIVE:
        return EFFECTIVE[name]
    if name in ("identity", "constant"):
        return make_coefficient(cfg)
    return None


def coupled_q(n: int, l: int, m: int, rule: str, c: float) -> int:
    """Offline size balancing the online error: ``c n^{l/(m+1)}`` (H1) or ``c n^{(l+1)/(m+1)}`` (L2)."""
    if rule == "h1":
        return math.ceil(c * n ** (l / (m + 1)) - 1e-12)
    if rule == "l2":
        return math.ceil(c * n ** ((l + 1) / (m + 1)) - 1e-12)
    raise ConfigError(f"coupling rule {rule!r} does not define q")


def default_coupling_constant(m: int) -> float:
    return {2: 2.0, 3: 2.5}.get(m, 2.0)


def fit_slope(x, y) -> tuple[float, float]:
    """OLS slope of log y against log x and the residual norm of the fit."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("slopes need at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    (slope, icpt), res, *_ = np.polyfit(np.log(x), np.log(y), 1, full=True)
    return float(slope), float(np.sqrt(res[0])) if len(res) else 0.0


# ---------------------------------------------------------------------------
# offline / online

@dataclass
class OfflineArtifact:
    table: EffectiveTable
    field: PolyMatrixField
    offline_time: float
    seed: int

    @property
    def cell_problems(self) -> int:
        return self.table.cell_problems

    def cost(self) -> dict:
        return {"q": self.table.mesh.q, "m": self.field.m, "cell_problems": self.cell_problems,
                "offline_time": self.offline_time, "seed": self.seed}

    def write(self, out) -> dict:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        tag = f"q{self.table.mesh.q}_m{self.field.m}"
        paths = {"table": out / f"table_{tag}.json", "field": out / f"field_{tag}.json", "cost": out / f"cost_{tag}.json"}
        self.table.to_json(paths["table"])
        self.field.to_json(paths["field"])
        with open(paths["cost"], "w") as fh:
            json.dump(self.cost(), fh, indent=2)
        return paths


def run_offline(cfg: StudyConfig, q: int | None = None, m: int | None = None, seed: int | None = None,
                jobs: int = 1, table: EffectiveTable | None = None) -> OfflineArtifact:
    """Sample the effective matrix on a q x q mesh and reconstruct the field.

    A precomputed ``table`` on the same mesh is reused (the reconstruction
    order only affects the fitting step).
    """
    seed = cfg.seed if seed is None else seed
    q = q if q is not None else (cfg.q_schedule or [None])[0]
    if q is None:
        raise ConfigError("offline.q is required")
    m = m if m is not None else cfg.m_values[0]
    t0 = time.perf_counter()
    mesh = build_offline_mesh(cfg.domain, q)
    reused = table.wall_time if table is not None else 0.0
    if table is None:
        if cfg.analytic:
            eff = effective_reference(cfg)
            if eff is None:
                raise ConfigError(f"no analytic effective matrix for {cfg.problem['coefficient']!r}")
            table = analytic_table(mesh, eff, cfg.problem["coefficient"])
        else:
            table = offline_sweep(mesh, make_coefficient(cfg, seed), cfg.cell_template(), jobs=jobs)
    field_ = reconstruct_field(mesh, table, m, cfg.offline.get("n_lowest"))
    return OfflineArtifact(table, field_, reused + time.perf_counter() - t0, seed)


_REFERENCE_CACHE: dict = {}


def manufactured_solution() -> tuple[ExactSolution, callable]:
    """``u = sin(pi x) sin(pi y)`` for ``A = I`` with its load."""
    pi = math.pi

    def u(x):
        return np.sin(pi * x[..., 0]) * np.sin(pi * x[..., 1])

    def grad(x):
        return pi * np.stack([np.cos(pi * x[..., 0]) * np.sin(pi * x[..., 1]),
                              np.sin(pi * x[..., 0]) * np.cos(pi * x[..., 1])], -1)

    return ExactSolution(u, grad), (lambda x: 2 * pi * pi * u(x))


def reference_solution(cfg: StudyConfig):
    """Fine P2 solve with the known effective matrix (cached per config)."""
    n_ref = int(cfg.online.get("reference_n", 256))
    key = (json.dumps(cfg.problem, sort_keys=True, default=str), n_ref)
    if key not in _REFERENCE_CACHE:
        eff = effective_reference(cfg)
        if eff is None:
            raise ConfigError(f"no reference effective matrix for {cfg.problem['coefficient']!r}")
        space = fem_space(cfg.domain, n_ref, 2)
        _REFERENCE_CACHE[key] = assemble_solve(space, eff, cfg.problem.get("f", 1.0))
    return _REFERENCE_CACHE[key]


def run_online(cfg: StudyConfig, artifact: OfflineArtifact, n: int | None = None, reference=None) -> dict:
    """Solve the online problem with the artifact's field; one report row."""
    n = n if n is not None else (cfg.n_schedule or [None])[0]
    if n is None:
        raise ConfigError("online.n is required")
    field_ = artifact.field
    if Rectangle.coerce(field_.mesh.domain) != cfg.domain:
        raise ConfigError("offline artifact domain does not match the configured domain")
    t0 = time.perf_counter()
    space = fem_space(cfg.domain, n, cfg.l)
    sol = assemble_solve(space, field_, cfg.problem.get("f", 1.0))
    online_time = time.perf_counter() - t0
    ref = reference if reference is not None else reference_solution(cfg)
    h1, l2 = relative_errors(sol, ref)
    row = _row("online", artifact.table.mesh.q, n, field_.m, cfg.l, artifact.cell_problems, h1, l2)
    eff = effective_reference(cfg)
    if eff is not None:
        rep = emod_report(field_, eff, int(cfg.offline.get("probe", 512)))
        row["emod"], row["e1mod"] = rep.emod, rep.e1
    row["_timing"] = {"offline_time": artifact.offline_time, "online_time": online_time}
    return row


def _row(kind, q, n, m, l, cells, h1=math.nan, l2=math.nan, emod=math.nan, e1=math.nan) -> dict:
    return {"schema": ERRORS_SCHEMA, "kind": kind, "q": q, "n": n, "m": m, "l": l, "cell_problems": cells,
            "h1_error": h1, "l2_error": l2, "emod": emod, "e1mod": e1}


@dataclass
class ErrorReport:
    rows: list[dict]
    slopes: dict = field(default_factory=dict)

    def write(self, out) -> dict:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"errors": out / "errors.csv", "timings": out / "timings.csv", "slopes": out / "slopes.json"}
        write_csv(paths["errors"], ERROR_COLUMNS, self.rows)
        trows = [{**{k: r[k] for k in TIMING_COLUMNS[:5]}, **r.get("_timing", {})} for r in self.rows]
        write_csv(paths["timings"], TIMING_COLUMNS, trows)
        with open(paths["slopes"], "w") as fh:
            json.dump(self.slopes, fh, indent=2, sort_keys=True)
        return paths


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_convergence_study(cfg: StudyConfig, jobs: int = 1, out=None) -> ErrorReport:
    """One row per schedule point, plus fitted log-log slopes.

    ``study.kind`` selects ``emod`` (reconstruction error vs q, per m),
    ``coupled`` (online errors vs n, q from the coupling rule or fixed) or
    ``manufactured`` (FEM sanity lane with ``A = I``).
    """
    kind = cfg.study.get("kind", "coupled")
    rows: list[dict] = []
    slopes: dict = {}
    report = ErrorReport(rows, slopes)

    def flush():
        if out is not None:
            report.write(out)

    try:
        if kind == "emod":
            _emod_study(cfg, rows, slopes, jobs)
        elif kind == "coupled":
            _coupled_study(cfg, rows, slopes, jobs)
        elif kind == "manufactured":
            _manufactured_study(cfg, rows, slopes)
        else:
            raise ConfigError(f"unknown study kind {kind!r}")
    finally:
        flush()  # partial CSV survives a failed run
    return report


def _emod_study(cfg, rows, slopes, jobs):
    qs = cfg.q_schedule
    if qs is None or len(qs) < 3:
        raise ConfigError("emod study needs at least 3 q values")
    eff = effective_reference(cfg)
    if eff is None:
        raise ConfigError("emod study needs a known effective matrix")
    probe = int(cfg.offline.get("probe", 512))
    for q in qs:
        table = None
        for m in cfg.m_values:
            art = run_offline(cfg, q, m, jobs=jobs, table=table)
            table = art.table
            rep = emod_report(art.field, eff, probe)
            row = _row("emod", q, 0, m, 0, art.cell_problems, emod=rep.emod, e1=rep.e1)
            row["_timing"] = {"offline_time": art.offline_time, "online_time": 0.0}
            rows.append(row)
    for m in cfg.m_values:
        sel = [r for r in rows if r["m"] == m]
        slopes[f"emod_vs_q_m{m}"] = dict(zip(("slope", "residual"), fit_slope([r["q"] for r in sel], [r["emod"] for r in sel])))


def _coupled_study(cfg, rows, slopes, jobs):
    ns = cfg.n_schedule
    if ns is None or len(ns) < 3:
        raise ConfigError("coupled study needs at least 3 n values")
    rule = cfg.coupling.get("rule", "none")
    ref = reference_solution(cfg)
    for m in cfg.m_values:
        c = float(cfg.coupling.get("c", default_coupling_constant(m)))
        if rule == "none":
            qs = cfg.q_schedule
            if qs is None or len(qs) not in (1, len(ns)):
                raise ConfigError("without coupling give one q or one q per n")
            qs = qs * len(ns) if len(qs) == 1 else qs
        else:
            qs = [coupled_q(n, cfg.l, m, rule, c) for n in ns]
        for n, q in zip(ns, qs):
            art = run_offline(cfg, q, m, jobs=jobs)
            rows.append(run_online(cfg, art, n, ref))
        sel = [r for r in rows if r["m"] == m]
        nn = [r["n"] for r in sel]
        slopes[f"h1_vs_n_m{m}"] = dict(zip(("slope", "residual"), fit_slope(nn, [r["h1_error"] for r in sel])))
        slopes[f"l2_vs_n_m{m}"] = dict(zip(("slope", "residual"), fit_slope(nn, [r["l2_error"] for r in sel])))
        if len(set(qs)) >= 3:
            slopes[f"emod_vs_q_m{m}"] = dict(zip(("slope", "residual"), fit_slope(qs, [r["emod"] for r in sel])))


def _manufactured_study(cfg, rows, slopes):
    ns = cfg.n_schedule
    if ns is None or len(ns) < 3:
        raise ConfigError("manufactured study needs at least 3 n values")
    exact, f = manufactured_solution()
    A = ConstantField(np.eye(2))
    for n in ns:
        t0 = time.perf_counter()
        sol = assemble_solve(fem_space(cfg.domain, n, cfg.l), A, f)
        h1, l2 = relative_errors(sol, exact)
        row = _row("manufactured", 0, n, 0, cfg.l, 0, h1, l2)
        row["_timing"] = {"offline_time": 0.0, "online_time": time.perf_counter() - t0}
        rows.append(row)
    slopes["h1_vs_n"] = dict(zip(("slope", "residual"), fit_slope(ns, [r["h1_error"] for r in rows])))
    slopes["l2_vs_n"] = dict(zip(("slope", "residual"), fit_slope(ns, [r["l2_error"] for r in rows])))


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleReport:
    probes: dict  # label -> point
    L: list[int]
    realizations: int
    excluded: int
    samples: np.ndarray  # (R, nL, nP, 2, 2)
    mean: np.ndarray  # (nL, nP, 2, 2)
    sigma_diag: np.ndarray  # (nL, nP)
    sigma_12: np.ndarray
    slopes: dict
    errors: list[dict] = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for b, (lab, p) in enumerate(self.probes.items()):
            for a, L in enumerate(self.L):
                M = self.mean[a, b]
                out.append({"schema": ENSEMBLE_SCHEMA, "probe": lab, "x1": p[0], "x2": p[1], "L": L,
                            "mean11": M[0, 0], "mean12": M[0, 1], "mean21": M[1, 0], "mean22": M[1, 1],
                            "sigma_diag": self.sigma_diag[a, b], "sigma_12": self.sigma_12[a, b]})
        return out

    def write(self, out) -> dict:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"ensemble": out / "ensemble.csv", "summary": out / "ensemble.json"}
        write_csv(paths["ensemble"], ENSEMBLE_COLUMNS, self.rows())
        if self.errors:
            paths["errors"] = out / "ensemble_errors.csv"
            write_csv(paths["errors"], ["realization", "h1_error", "l2_error"], self.errors)
        summary = {"realizations": self.realizations, "excluded": self.excluded, "L": self.L,
                   "probes": {k: list(v) for k, v in self.probes.items()}, "slopes": self.slopes}
        if self.errors:
            summary["mean_h1_error"] = float(np.mean([e["h1_error"] for e in self.errors]))
            summary["mean_l2_error"] = float(np.mean([e["l2_error"] for e in self.errors]))
        with open(paths["summary"], "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        return paths


def _realization_task(args):
    cfg, r = args
    seed = derive_seed(cfg.seed, r)
    coeff = make_coefficient(cfg, seed)
    eps = coeff.epsilon
    ens = cfg.ensemble
    probes = ensemble_probes(cfg)
    Ls = _schedule(ens.get("L", [4, 8, 16]), "L")
    per_eps = int(ens.get("cells_per_epsilon", 2))
    base = CellSpec(delta=eps, bc=ens.get("bc", "periodic"), resolution=4, degree=int(ens.get("degree", 2)),
                    freeze_slow=bool(ens.get("freeze_slow", False)))
    out = np.empty((len(Ls), len(probes), 2, 2))
    try:
        for a, L in enumerate(Ls):
            spec = replace(base, delta=L * eps, resolution=max(4, per_eps * L))
            for b, p in enumerate(probes.values()):
                out[a, b] = effective_sample(spec.at(p), coeff).matrix
        errors = _realization_pipeline(cfg, seed) if ens.get("pipeline", False) else None
    except CellSolveError as exc:
        return r, None, None, str(exc)
    return r, out, errors, None


def ensemble_probes(cfg: StudyConfig) -> dict:
    pts = cfg.ensemble.get("probes")
    if pts is None:
        return dict(DEFAULT_PROBES)
    if isinstance(pts, dict):
        return {k: tuple(map(float, v)) for k, v in pts.items()}
    return {f"P{i}": tuple(map(float, p)) for i, p in enumerate(pts)}


def _realization_pipeline(cfg: StudyConfig, seed: int):
    """Full offline-online run for one realization against a finer offline reference."""
    ens = cfg.ensemble
    n = int(ens.get("n", 32))
    q = int(ens.get("q", 8))
    m = int(ens.get("m", 2))
    coeff = make_coefficient(cfg, seed)
    eps = coeff.epsilon
    cell = CellSpec(delta=int(ens.get("pipeline_L", 8)) * eps,
                    resolution=int(ens.get("cells_per_epsilon", 2)) * int(ens.get("pipeline_L", 8)))
    mesh = build_offline_mesh(cfg.domain, q)
    field_ = reconstruct_field(mesh, offline_sweep(mesh, coeff, cell), m)
    ref_q = int(ens.get("reference_q", 20))
    ref_L = int(ens.get("reference_L", 16))
    ref_cell = replace(cell, delta=ref_L * eps, resolution=int(ens.get("cells_per_epsilon", 2)) * ref_L)
    ref_mesh = build_offline_mesh(cfg.domain, ref_q)
    ref_field = reconstruct_field(ref_mesh, offline_sweep(ref_mesh, coeff, ref_cell), 3)
    f = cfg.problem.get("f", 1.0)
    ref = assemble_solve(fem_space(cfg.domain, int(ens.get("reference_n", 2 * n)), 2), ref_field, f)
    sol = assemble_solve(fem_space(cfg.domain, n, cfg.l), field_, f)
    return relative_errors(sol, ref)


def run_ensemble(cfg: StudyConfig, jobs: int = 1, out=None) -> EnsembleReport:
    """Variance of periodic-cell effective matrices over checkerboard realizations.

    Realization ``r`` uses the seed ``derive_seed(master, r)`` so results do
    not depend on scheduling.
    """
    if cfg.problem["coefficient"] != "checkerboard":
        raise ConfigError("ensembles need the checkerboard coefficient")
    R = int(cfg.ensemble.get("realizations", 100))
    if R < 1:
        raise ConfigError("need at least one realization")
    Ls = _schedule(cfg.ensemble.get("L", [4, 8, 16]), "L")
    probes = ensemble_probes(cfg)
    tasks = [(cfg, r) for r in range(R)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_realization_task, tasks))
    else:
        results = [_realization_task(t) for t in tasks]
    results.sort(key=lambda t: t[0])
    failed = [(r, msg) for r, s, _, msg in results if s is None]
    for r, msg in failed:
        log.warning("realization %d excluded: %s", r, msg)
    if len(failed) > 0.01 * R:
        raise RuntimeError(f"{len(failed)} of {R} realizations failed; first: {failed[0][1]}")
    good = [(r, s, e) for r, s, e, _ in results if s is not None]
    S = np.stack([s for _, s, _ in good])
    mean = S.mean(axis=0)
    ref = mean[-1]  # ensemble mean at the largest cell
    dd = (S[..., 0, 0] - ref[None, None, :, 0, 0]) ** 2 + (S[..., 1, 1] - ref[None, None, :, 1, 1]) ** 2
    sigma_diag = np.sqrt(dd.mean(axis=0))
    sigma_12 = np.sqrt((S[..., 0, 1] ** 2).mean(axis=0))
    slopes = {}
    if len(Ls) >= 3:
        for b, lab in enumerate(probes):
            for name, sig in (("sigma_diag", sigma_diag), ("sigma_12", sigma_12)):
                if np.all(sig[:, b] > 0):
                    slopes[f"{name}_{lab}"] = dict(zip(("slope", "residual"), fit_slope(Ls, sig[:, b])))
    errors = [{"realization": r, "h1_error": e[0], "l2_error": e[1]} for r, _, e in good if e is not None]
    rep = EnsembleReport(probes, Ls, len(good), len(failed), S, mean, sigma_diag, sigma_12, slopes, errors)
    if out is not None:
        rep.write(out)
    return rep


# ---------------------------------------------------------------------------
# cost

COST_COLUMNS = ["q", "n", "m", "l", "cell_problems", "hmm_ls_proxy", "offline_time", "online_time", "total_time",
                "h1_error"]


def cost_report(rows: list[dict], timings: list[dict] | None = None) -> list[dict]:
    """Cell-problem counts against the HMM-LS proxy ``(n+1)^2`` (one cell per online vertex).

    HMM-LS itself is not run; the proxy is its cell-count law.
    """
    if len(rows) < 2:
        raise ValueError("cost comparison needs at least two runs")
    timings = timings or [r.get("_timing", {}) for r in rows]
    out = []
    for r, t in zip(rows, timings):
        n = int(r["n"])
        off, on = float(t.get("offline_time", math.nan)), float(t.get("online_time", math.nan))
        out.append({"q": int(r["q"]), "n": n, "m": int(r["m"]), "l": int(r["l"]),
                    "cell_problems": int(r["cell_problems"]), "hmm_ls_proxy": (n + 1) ** 2,
                    "offline_time": off, "online_time": on, "total_time": off + on,
                    "h1_error": float(r["h1_error"])})
    return out


def cost_scaling_holds(ns, m: int, l: int = 2, c: float | None = None) -> bool:
    """``q^2 < (n+1)^2`` along the H1 coupling for every n given."""
    c = default_coupling_constant(m) if c is None else c
    return all(coupled_q(n, l, m, "h1", c) ** 2 < (n + 1) ** 2 for n in ns)


def code_version() -> str:
    return __version__


def default_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))
