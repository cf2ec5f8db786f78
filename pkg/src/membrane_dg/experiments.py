"""The two built-in test problems on ``[-1, 1]^2`` with the membrane at ``x = 0``.

Convergence problem (two species ``u``, ``v``)::

    u_t - lap u - u_x = f_u + { u^2 - v (1 - v)  in compartment 1
                              { -v               in compartment 2
    v_t - lap v - v_x = f_v + u

with exact solution ``(cos t, sin t) * exp((y^2 - 1)^2) * X(x)`` where
``X = 4 x (1 + x)`` left and ``X = -4 x^3 + 3 x + 1`` right of the membrane.
The transport terms ``-u_x`` correspond to the advection row ``(-1, 0)``.
Dirichlet data on ``x = +-1``, Neumann data on ``y = +-1``, both zero.

Advection problem (one species): ``a = 1e-2``, ``B = (0.5, 0.5)``, no
reaction, zero Neumann data everywhere and a Gaussian bump as initial data.
"""
from __future__ import annotations

import numpy as np

from .interface import InterfaceModel
from .mesh import Domain2D
from .problem import BoundarySpec, ProblemDefinition, constant_field

DOMAIN = Domain2D((-1.0, 1.0), (-1.0, 1.0), 0.0)

# Weights of the convergence test.  The manufactured solution satisfies the
# membrane conditions for P = 3, R = 1 only when the downstream-in-x
# compartment 2 (upwind for B = (-1, 0)) carries the full weight.
CONVERGENCE_PERMEABILITY = 3.0
CONVERGENCE_WEIGHTS = (0.0, 1.0)
CONVERGENCE_FRICTION = 1.0


def _profile_x(x, sub):
    """``X``, ``X'`` and ``X''`` of the piecewise x-profile."""
    left = sub == 1
    X = np.where(left, 4 * x * (1 + x), -4 * x ** 3 + 3 * x + 1)
    dX = np.where(left, 4 + 8 * x, -12 * x ** 2 + 3)
    d2X = np.where(left, 8.0, -24 * x)
    return X, dX, d2X


def _profile_y(y):
    q = y ** 2 - 1
    E = np.exp(q ** 2)
    dE = 4 * y * q * E
    d2E = (16 * y ** 2 * q ** 2 + 4 * (3 * y ** 2 - 1)) * E
    return E, dE, d2E


def convergence_exact(t, x, y, sub):
    X, _, _ = _profile_x(x, sub)
    E, _, _ = _profile_y(y)
    return np.stack([np.cos(t) * E * X, np.sin(t) * E * X])


def convergence_gradient(t, x, y, sub):
    X, dX, _ = _profile_x(x, sub)
    E, dE, _ = _profile_y(y)
    amp = np.array([np.cos(t), np.sin(t)]).reshape((2,) + (1,) * np.ndim(x))
    return np.stack([amp * dX * E, amp * X * dE], axis=1)


def convergence_time_derivative(t, x, y, sub):
    X, _, _ = _profile_x(x, sub)
    E, _, _ = _profile_y(y)
    return np.stack([-np.sin(t) * E * X, np.cos(t) * E * X])


def convergence_reaction(u, sub):
    """Model reaction ``F(u)``: the negated source terms of the system."""
    uu, vv = u
    left = sub == 1
    f1 = np.where(left, -(uu ** 2 - vv * (1 - vv)), vv)
    f2 = -uu
    return np.stack([f1, f2])


def convergence_forcing(t, x, y, sub):
    """``f = u_t - lap u - u_x + F(u)`` for the exact solution."""
    X, dX, d2X = _profile_x(x, sub)
    E, dE, d2E = _profile_y(y)
    c, s = np.cos(t), np.sin(t)
    base = E * X
    lap = d2X * E + X * d2E
    ux = dX * E
    u, v = c * base, s * base
    F = convergence_reaction(np.stack([u, v]), sub)
    fu = -s * base - c * lap - c * ux + F[0]
    fv = c * base - s * lap - s * ux + F[1]
    return np.stack([fu, fv])


def build_convergence_problem(weights=CONVERGENCE_WEIGHTS) -> ProblemDefinition:
    model = InterfaceModel(
        n_components=2,
        weights1=[weights[0]] * 2,
        weights2=[weights[1]] * 2,
        friction=[CONVERGENCE_FRICTION] * 2,
        permeability=np.diag([CONVERGENCE_PERMEABILITY] * 2),
    )
    on_x_walls = lambda x, y: np.abs(np.abs(x) - 1.0) < 1e-12  # noqa: E731
    return ProblemDefinition(
        n_components=2,
        diffusion=constant_field([1.0, 1.0]),
        advection=constant_field([[-1.0, 0.0], [-1.0, 0.0]]),
        reaction=convergence_reaction,
        reaction_growth=1.0,
        forcing=convergence_forcing,
        initial=lambda t, x, y, sub: convergence_exact(0.0, x, y, sub),
        boundary=BoundarySpec.dirichlet_where(2, on_x_walls),
        interface=model,
        exact=convergence_exact,
        exact_gradient=convergence_gradient,
        advection_divergence=constant_field([0.0, 0.0]),
        name="convergence",
    )


ADVECTION_DIFFUSION = 1e-2
ADVECTION_FIELD = (0.5, 0.5)
ADVECTION_INTERFACE = dict(permeability=0.2, weights1=5 / 6, weights2=1 / 6, friction=0.6)


def gaussian_bump(t, x, y, sub):
    return np.exp(-8.0 * ((x + 0.5) ** 2 + y ** 2))[None]


def build_advection_problem(advection=ADVECTION_FIELD, diffusion=ADVECTION_DIFFUSION,
                            initial=gaussian_bump) -> ProblemDefinition:
    p = ADVECTION_INTERFACE
    model = InterfaceModel(
        n_components=1,
        weights1=[p["weights1"]],
        weights2=[1.0 - p["weights1"]],
        friction=[p["friction"]],
        permeability=np.array([[p["permeability"]]]),
    )
    return ProblemDefinition(
        n_components=1,
        diffusion=constant_field([diffusion]),
        advection=constant_field([list(advection)]),
        reaction=None,
        initial=initial,
        boundary=BoundarySpec.all_neumann(1),
        interface=model,
        advection_divergence=constant_field([0.0]),
        name="advection",
    )
