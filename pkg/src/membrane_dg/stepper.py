"""Linearly implicit AB2-AM2 time stepping.

The semidiscrete system is written as ``M U' = L U + F(U, t)`` where ``L``
holds the linear terms (``-B``, plus the interface matrix when it is routed
implicitly) and ``F`` the explicit bucket (reaction, forcing, interface form
and boundary functional).  One step reads::

    (M - k th L) U^{n+1} = (M + k (1 - th) L) U^n + k/2 (3 F(U^n) - F(U^{n-1}))

The first step uses the same theta scheme with a forward Euler treatment of
``F``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .interface import eval_N
from .operators import Discretization

logger = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    pass


class NonFiniteState(FloatingPointError):
    def __init__(self, step: int, t: float):
        super().__init__(f"non-finite state at step {step} (t={t:g})")
        self.step = step
        self.t = t


class PicardDiverged(RuntimeError):
    pass


@dataclass
class SchemeConfig:
    dt: float = 5e-4
    t_final: float = 1.0
    theta: float = 0.5
    interface: str = "explicit"        # or "implicit"
    initial: str = "l2"                # or "elliptic"
    elliptic_lambda: float = 1.0
    solver: str = "lu"                 # or "gmres"
    gmres_tol: float = 1e-12
    reassemble: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.interface not in ("explicit", "implicit"):
            raise ValueError("interface routing must be 'explicit' or 'implicit'")
        if self.initial not in ("l2", "elliptic"):
            raise ValueError("initial mode must be 'l2' or 'elliptic'")
        if self.solver not in ("lu", "gmres"):
            raise ValueError("solver must be 'lu' or 'gmres'")
        ratio = self.t_final / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            warnings.warn("t_final is not an integer multiple of dt", stacklevel=2)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


class LinearSolver:
    """Factor-once solver for a fixed sparse matrix."""

    def __init__(self, A, method: str = "lu", tol: float = 1e-12):
        self.A = sp.csc_matrix(A)
        self.method = method
        self.tol = tol
        self.n_solves = 0
        try:
            if method == "lu":
                self._lu = spla.splu(self.A)
            elif method == "gmres":
                self._ilu = spla.spilu(self.A, drop_tol=1e-6, fill_factor=20)
                self._prec = spla.LinearOperator(self.A.shape, self._ilu.solve)
            else:
                raise ValueError(f"unknown solver {method!r}")
        except RuntimeError as exc:
            raise SolverFailure(f"factorization failed: {exc}") from exc

    def solve(self, b) -> np.ndarray:
        self.n_solves += 1
        if self.method == "lu":
            return self._lu.solve(b)
        x, info = spla.gmres(self.A, b, rtol=self.tol, atol=0.0, M=self._prec,
                             restart=50, maxiter=200)
        if info != 0:
            raise SolverFailure(f"GMRES stagnated (info={info})")
        return x

    def residual(self, x, b) -> float:
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(self.A @ x - b) / (nb if nb > 0 else 1.0))


@dataclass
class StateHistory:
    U: np.ndarray
    t: float
    F: np.ndarray
    U_prev: np.ndarray | None = None
    t_prev: float | None = None
    F_prev: np.ndarray | None = None
    step: int = 0


class AB2AM2:
    """Two-step IMEX integrator for ``M U' = L U + F(U, t)``."""

    def __init__(self, M, L, explicit: Callable[[np.ndarray, float], np.ndarray], dt: float,
                 theta: float = 0.5, solver: str = "lu", tol: float = 1e-12):
        self.M = sp.csr_matrix(M)
        self.L = sp.csr_matrix(L)
        self.explicit = explicit
        self.dt = dt
        self.theta = theta
        self.lhs = (self.M - dt * theta * self.L).tocsc()
        self.rhs_op = (self.M + dt * (1.0 - theta) * self.L).tocsr()
        self.solver = LinearSolver(self.lhs, solver, tol)

    def start(self, U0, t0: float = 0.0) -> StateHistory:
        U0 = np.asarray(U0, dtype=float)
        return StateHistory(U=U0, t=t0, F=self.explicit(U0, t0))

    def bootstrap_first_step(self, h: StateHistory) -> StateHistory:
        k = self.dt
        U1 = self.solver.solve(self.rhs_op @ h.U + k * h.F)
        t1 = h.t + k
        return StateHistory(U=U1, t=t1, F=self.explicit(U1, t1),
                            U_prev=h.U, t_prev=h.t, F_prev=h.F, step=h.step + 1)

    def step(self, h: StateHistory) -> StateHistory:
        if h.U_prev is None:
            return self.bootstrap_first_step(h)
        k = self.dt
        b = self.rhs_op @ h.U + 0.5 * k * (3.0 * h.F - h.F_prev)
        U = self.solver.solve(b)
        t = h.t + k
        return StateHistory(U=U, t=t, F=self.explicit(U, t),
                            U_prev=h.U, t_prev=h.t, F_prev=h.F, step=h.step + 1)


# -- dG system ------------------------------------------------------------------------


class SemiDiscreteSystem:
    """Mass matrix, linear operator and explicit bucket of one dG problem."""

    def __init__(self, disc: Discretization, interface: str = "explicit", t0: float = 0.0):
        self.disc = disc
        self.interface = interface
        self.M = disc.mass_matrix()
        self.B = disc.bilinear_matrix(t0)
        self.L = -self.B
        if interface == "implicit":
            self.K = disc.interface_matrix(t0, include_permeability=True)
            self.L = self.L - self.K
        elif interface != "explicit":
            raise ValueError(f"unknown interface routing {interface!r}")
        pb = disc.problem
        self._static_rhs = None
        if not pb.time_dependent and not _depends_on_time(pb):
            self._static_rhs = disc.rhs_vector(t0)

    def boundary(self, t: float) -> np.ndarray:
        if self._static_rhs is not None:
            return self._static_rhs
        return self.disc.rhs_vector(t)

    def explicit(self, U, t: float) -> np.ndarray:
        F = self.boundary(t) - self.disc.reaction_vector(U, t)
        if self.interface == "explicit":
            F = F - eval_N(self.disc, U, t)
        return F


def _depends_on_time(pb) -> bool:
    return pb.dirichlet_data is not None or pb.neumann_data is not None


def initial_state(disc: Discretization, mode: str = "l2", lam: float = 1.0, t0: float = 0.0,
                  tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Discrete initial data: L2 projection or elliptic projection of ``u0``."""
    pb = disc.problem
    space = disc.space
    U0 = space.l2_project(pb.initial, t0)
    if mode == "l2":
        return U0
    if mode != "elliptic":
        raise ValueError(f"unknown initial mode {mode!r}")
    # B(u - w) + lam (u - w, v) + N(u) - N(w) = 0, N lagged in its nonlinear part
    hi = Discretization(space, pb, disc.C_sigma, quad_extra=disc.quad_extra + 2)
    fields = hi.function_fields(pb.initial, _initial_gradient(pb), t0)
    Bu = hi.apply_bilinear(fields, t0)
    Mu = np.concatenate([hi.vol.val.T @ (hi.vol.weight * u) for u in fields["V", "+"][0]])
    Nu = _interface_form_of_function(hi, pb.initial, t0)
    M = disc.mass_matrix()
    constant = pb.interface.permeability_is_constant
    K = disc.interface_matrix(t0, include_permeability=constant)
    A = (disc.bilinear_matrix(t0) + lam * M + K).tocsc()
    solver = LinearSolver(A)
    rhs0 = Bu + lam * Mu + Nu
    W = U0
    increments = []
    for it in range(max_iter):
        lagged = eval_N(disc, W, t0) - K @ W
        W_new = solver.solve(rhs0 - lagged)
        inc = float(np.max(np.abs(W_new - W)))
        increments.append(inc)
        W = W_new
        if inc <= tol * max(1.0, np.max(np.abs(W))):
            logger.debug("elliptic projection converged in %d iterations", it + 1)
            return W
    if increments[-1] > increments[0]:
        raise PicardDiverged(f"increment grew to {increments[-1]:.3e} after {max_iter} iterations")
    warnings.warn("elliptic projection did not reach tolerance", stacklevel=2)
    return W


def _initial_gradient(pb):
    if pb.exact_gradient is None:
        raise ValueError("elliptic projection needs the exact gradient at t=0")
    return pb.exact_gradient


def _interface_form_of_function(disc: Discretization, fn, t):
    """``N(u, phi_j)`` for a function ``u`` with two traces on the interface."""
    out = np.zeros(disc.space.total_dofs)
    fs = disc.interface_points
    if fs is None:
        return out
    n = disc.space.n_components
    co = disc.coefficients(t)
    u1 = np.broadcast_to(fn(t, fs.x, fs.y, fs.plus.subdomain), (n, len(fs.x)))
    u2 = np.broadcast_to(fn(t, fs.x, fs.y, fs.minus.subdomain), (n, len(fs.x)))
    adv = 0.5 * (u1 * co.bn["I", "+"] + u2 * co.bn["I", "-"]) + co.interface_beta * (u1 - u2)
    g = disc.problem.interface.diffusive_flux(u1, u2) - (1.0 - co.friction) * adv
    ns = disc.space.n_scalar
    for c in range(n):
        out[c * ns:(c + 1) * ns] = disc.interface_jump.T @ (fs.weight * g[c])
    return out


@dataclass
class Trajectory:
    U: np.ndarray
    t: float
    n_steps: int
    observers: list = field(default_factory=list)


def integrate(disc: Discretization, scheme: SchemeConfig,
              observers: Sequence[Callable[[float, np.ndarray], None]] = (),
              U0: np.ndarray | None = None) -> Trajectory:
    """Run the AB2-AM2 scheme from ``t = 0`` to ``scheme.t_final``."""
    if U0 is None:
        U0 = initial_state(disc, scheme.initial, scheme.elliptic_lambda)
    if not np.all(np.isfinite(U0)):
        raise NonFiniteState(0, 0.0)
    for obs in observers:
        obs(0.0, U0)
    n_steps = scheme.n_steps
    if n_steps == 0:
        return Trajectory(U0, 0.0, 0, list(observers))
    system = SemiDiscreteSystem(disc, scheme.interface)
    stepper = AB2AM2(system.M, system.L, system.explicit, scheme.dt, scheme.theta,
                     scheme.solver, scheme.gmres_tol)
    h = stepper.start(U0, 0.0)
    for n in range(1, n_steps + 1):
        if scheme.reassemble:
            system = SemiDiscreteSystem(disc, scheme.interface, t0=h.t + scheme.dt)
            stepper = AB2AM2(system.M, system.L, system.explicit, scheme.dt, scheme.theta,
                             scheme.solver, scheme.gmres_tol)
        h = stepper.step(h)
        # the step counter restarts with a rebuilt stepper; use the loop index
        t = n * scheme.dt
        if not np.all(np.isfinite(h.U)):
            raise NonFiniteState(n, t)
        for obs in observers:
            obs(t, h.U)
    logger.info("integrated %d steps, %d linear solves", n_steps, stepper.solver.n_solves)
    return Trajectory(h.U, n_steps * scheme.dt, n_steps, list(observers))
