"""Convergence studies, error accumulation and the advection stability run."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .experiments import (DOMAIN, build_advection_problem, build_convergence_problem,
                          convergence_exact, convergence_gradient, convergence_time_derivative)
from .fespace import DGSpace, tensor_rule
from .mesh import Mesh, build_structured_mesh, refine_uniform
from .operators import Discretization
from .problem import ProblemDefinition
from .stepper import SchemeConfig, integrate

logger = logging.getLogger(__name__)


@dataclass
class ManufacturedProblem:
    """Exact solution with its derivatives and the problem it induces."""
    exact: object
    gradient: object
    time_derivative: object
    problem: ProblemDefinition

    @property
    def forcing(self):
        return self.problem.forcing


def manufactured_convergence(weights=None) -> ManufacturedProblem:
    pb = build_convergence_problem() if weights is None else build_convergence_problem(weights)
    return ManufacturedProblem(convergence_exact, convergence_gradient,
                               convergence_time_derivative, pb)


class ErrorAccumulator:
    """Observer accumulating ``L2(0, T; dG)`` and ``Linf(0, T; L2)`` errors.

    The time integral of the squared dG norm uses the composite trapezoid
    rule over the observed time levels.
    """

    def __init__(self, disc: Discretization, exact=None, exact_gradient=None):
        self.disc = disc
        pb = disc.problem
        self.exact = pb.exact if exact is None else exact
        self.exact_gradient = pb.exact_gradient if exact_gradient is None else exact_gradient
        self.integral = 0.0
        self.max_l2 = 0.0
        self._last = None
        self.history: list[tuple[float, float, float]] = []

    def __call__(self, t: float, U) -> None:
        fields = self.disc.point_fields(U, t, self.exact, self.exact_gradient)
        dg2 = self.disc.dg_norm_squared(fields, t)
        l2 = math.sqrt(self.disc.l2_norm_squared(fields))
        self.add(t, dg2, l2)

    def add(self, t: float, dg2: float, l2: float) -> None:
        if self._last is not None:
            t0, d0 = self._last
            self.integral += 0.5 * (t - t0) * (dg2 + d0)
        self._last = (t, dg2)
        self.max_l2 = max(self.max_l2, l2)
        self.history.append((t, dg2, l2))

    @property
    def l2_dg(self) -> float:
        return math.sqrt(self.integral)

    @property
    def linf_l2(self) -> float:
        return self.max_l2


@dataclass
class ConvergenceRow:
    cells: int
    dofs: int
    err_L2S: float
    rate_L2S: float | None
    err_LinfL2: float
    rate_LinfL2: float | None


@dataclass
class ConvergenceTable:
    degree: int
    rows: list[ConvergenceRow] = field(default_factory=list)

    def add(self, cells: int, dofs: int, err_l2s: float, err_linf: float) -> ConvergenceRow:
        prev = self.rows[-1] if self.rows else None
        row = ConvergenceRow(
            cells, dofs, err_l2s,
            rate(prev.err_L2S, err_l2s) if prev else None,
            err_linf,
            rate(prev.err_LinfL2, err_linf) if prev else None,
        )
        self.rows.append(row)
        return row

    def to_text(self) -> str:
        head = f"{'# cells':>8} {'# dofs':>8} | {'L2(0,1;S)':>10} {'rate':>5} | {'Linf(0,1;L2)':>12} {'rate':>5}"
        lines = [f"m = {self.degree}", head, "-" * len(head)]
        for r in self.rows:
            r1 = "-" if r.rate_L2S is None else f"{r.rate_L2S:.2f}"
            r2 = "-" if r.rate_LinfL2 is None else f"{r.rate_LinfL2:.2f}"
            lines.append(f"{r.cells:>8} {r.dofs:>8} | {r.err_L2S:>10.3e} {r1:>5} | "
                         f"{r.err_LinfL2:>12.3e} {r2:>5}")
        return "\n".join(lines)


def rate(coarse: float, fine: float) -> float:
    return math.log2(coarse / fine)


def run_level(problem: ProblemDefinition, mesh: Mesh, degree: int, scheme: SchemeConfig,
              C_sigma: float = 10.0, inject_exact: bool = False) -> ErrorAccumulator:
    """Integrate one mesh level and return its error accumulator.

    With ``inject_exact`` the time loop is skipped and the L2 projection of
    the exact solution is measured at every time level instead.
    """
    space = DGSpace(mesh, degree, problem.n_components)
    disc = Discretization(space, problem, C_sigma)
    acc = ErrorAccumulator(Discretization(space, problem, C_sigma, quad_extra=2))
    if inject_exact:
        for n in range(scheme.n_steps + 1):
            t = n * scheme.dt
            acc(t, space.l2_project(problem.exact, t))
        return acc
    integrate(disc, scheme, [acc])
    return acc


def run_convergence_study(degree: int = 1, n_levels: int = 5, dt: float = 5e-4,
                          C_sigma: float = 10.0, t_final: float = 1.0, theta: float = 0.5,
                          interface: str = "explicit", solver: str = "lu",
                          problem: ProblemDefinition | None = None,
                          inject_exact: bool = False, threads: int = 1) -> ConvergenceTable:
    """Errors and rates under uniform refinement starting from a 2x2 mesh."""
    problem = build_convergence_problem() if problem is None else problem
    scheme = SchemeConfig(dt=dt, t_final=t_final, theta=theta, interface=interface,
                          solver=solver)
    meshes = [build_structured_mesh(DOMAIN, 2)]
    for _ in range(n_levels - 1):
        meshes.append(refine_uniform(meshes[-1]))
    table = ConvergenceTable(degree)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(threads) as pool:
            futures = [pool.submit(_level_errors, problem, mh, degree, scheme, C_sigma,
                                   inject_exact) for mh in meshes]
            results = [f.result() for f in futures]
    else:
        results = [_level_errors(problem, mh, degree, scheme, C_sigma, inject_exact)
                   for mh in meshes]
    for mesh, (l2s, linf) in zip(meshes, results):
        dofs = problem.n_components * (degree + 1) ** 2 * mesh.n_elements
        row = table.add(mesh.n_elements, dofs, l2s, linf)
        logger.info("cells=%d dofs=%d L2S=%.3e LinfL2=%.3e", row.cells, row.dofs,
                    row.err_L2S, row.err_LinfL2)
    return table


def _level_errors(problem, mesh, degree, scheme, C_sigma, inject_exact):
    acc = run_level(problem, mesh, degree, scheme, C_sigma, inject_exact)
    return acc.l2_dg, acc.linf_l2


# -- advection-dominated run ---------------------------------------------------------


def sample_matrix(space: DGSpace, npts: int = 3):
    """Evaluation matrix at element corners plus interior Gauss points."""
    mesh = space.mesh
    r = tensor_rule(npts)
    ref = np.vstack([[[-1, -1], [1, -1], [1, 1], [-1, 1]], r.points])
    e = np.repeat(np.arange(mesh.n_elements), len(ref))
    val, _, _ = space.evaluation_matrices(e, np.tile(ref[:, 0], mesh.n_elements),
                                          np.tile(ref[:, 1], mesh.n_elements))
    return val


def max_norm(space: DGSpace, U, sampler=None) -> float:
    sampler = sample_matrix(space) if sampler is None else sampler
    return float(max(np.max(np.abs(sampler @ u)) for u in space.split(U)))


def interface_jump_size(disc: Discretization, U) -> float:
    """Largest |u1 - u2| over interface quadrature points."""
    fs = disc.interface_points
    if fs is None:
        return 0.0
    return float(max(np.max(np.abs(disc.interface_jump @ u)) for u in disc.space.split(U)))


def layer_strip_means(space: DGSpace, U, component: int = 0) -> tuple[float, float]:
    """Means over the first and second element columns upwind of the membrane."""
    mesh = space.mesh
    cx = mesh.element_center[:, 0]
    c = mesh.domain.interface_x
    h = mesh.element_size[:, 0]
    means = space.element_means(U)[component]
    area = mesh.element_area()
    first = np.isclose(cx, c - 0.5 * h)
    second = np.isclose(cx, c - 1.5 * h)
    avg = lambda sel: float(np.sum(means[sel] * area[sel]) / np.sum(area[sel]))  # noqa: E731
    return avg(first), avg(second)


@dataclass
class AdvectionReport:
    nx: int
    degree: int
    dt: float
    t_final: float
    initial_max: float
    max_norm: float
    finite: bool
    jump_history: list[tuple[float, float]]
    layer_means: tuple[float, float] | None
    snapshots: list[str]
    l2_history: list[float] = field(default_factory=list)

    @property
    def l2_monotone(self) -> bool:
        h = np.asarray(self.l2_history)
        return bool(np.all(h[1:] <= h[:-1] * (1 + 1e-10)))

    @property
    def bounded(self) -> bool:
        return self.finite and self.max_norm <= 1.1 * self.initial_max + 0.1

    @property
    def layer_upwind(self) -> bool | None:
        if self.layer_means is None:
            return None
        return self.layer_means[0] > self.layer_means[1]


def run_advection_study(nx_list=(16, 64), degree: int = 1, dt: float = 1e-3,
                        t_final: float = 2.0, C_sigma: float = 10.0,
                        problem: ProblemDefinition | None = None,
                        out_dir: str | Path | None = None, snapshot_every: float = 0.5,
                        interface: str = "explicit", layer_time: float = 1.0,
                        ) -> list[AdvectionReport]:
    """Advection-dominated runs; reports boundedness and the upwind layer."""
    from .io import write_vtk

    problem = build_advection_problem() if problem is None else problem
    reports = []
    for nx in nx_list:
        mesh = build_structured_mesh(DOMAIN, nx)
        space = DGSpace(mesh, degree, problem.n_components)
        disc = Discretization(space, problem, C_sigma)
        sampler = sample_matrix(space)
        mdiag = np.tile(space.mass_diagonal(), space.n_components)
        scheme = SchemeConfig(dt=dt, t_final=t_final, interface=interface)
        every = max(1, int(round(snapshot_every / dt)))
        layer_step = int(round(layer_time / dt))
        state = dict(max=0.0, init=None, layer=None)
        jumps, files, l2 = [], [], []

        def observer(t, U, _space=space, _disc=disc, _sampler=sampler, _nx=nx, _md=mdiag,
                     _l2=l2):
            n = int(round(t / dt))
            _l2.append(float(np.sqrt(U @ (_md * U))))
            mx = max_norm(_space, U, _sampler)
            if state["init"] is None:
                state["init"] = mx
            state["max"] = max(state["max"], mx)
            if n % every == 0:
                jumps.append((t, interface_jump_size(_disc, U)))
                if out_dir is not None:
                    path = Path(out_dir) / f"advection_{_nx}x{_nx}_t{t:.2f}.vtk"
                    write_vtk(_space, U, path, title=f"advection t={t:.3f}")
                    files.append(str(path))
            if n == layer_step:
                state["layer"] = layer_strip_means(_space, U)

        finite = True
        try:
            integrate(disc, scheme, [observer])
        except FloatingPointError:
            finite = False
        reports.append(AdvectionReport(nx, degree, dt, t_final, state["init"], state["max"],
                                       finite, jumps, state["layer"], files, l2))
    return reports
