import dataclasses
import math

import numpy as np
import pytest
import sympy as sy

from membrane_dg.experiments import (ADVECTION_FIELD, DOMAIN, build_advection_problem,
                                     build_convergence_problem, convergence_exact,
                                     convergence_forcing, convergence_gradient)
from membrane_dg.fespace import DGSpace
from membrane_dg.harness import (ConvergenceTable, ErrorAccumulator, layer_strip_means,
                                 manufactured_convergence, rate, run_advection_study,
                                 run_convergence_study, run_level)
from membrane_dg.interface import InterfaceModel
from membrane_dg.mesh import build_structured_mesh
from membrane_dg.operators import Discretization
from membrane_dg.problem import BoundarySpec, ProblemDefinition, constant_field
from membrane_dg.stepper import SchemeConfig


# -- manufactured solution ---------------------------------------------------------

def _symbolic():
    t, x, y = sy.symbols("t x y", real=True)
    E = sy.exp((y ** 2 - 1) ** 2)
    X = {1: 4 * x * (1 + x), 2: -4 * x ** 3 + 3 * x + 1}
    sol = {k: (sy.cos(t) * E * X[k], sy.sin(t) * E * X[k]) for k in (1, 2)}
    return t, x, y, sol


def _lam(args, expr):
    return sy.lambdify(args, expr, "numpy")


def test_forcing_residual_1000_samples(rng):
    t, x, y, sol = _symbolic()
    pb = build_convergence_problem()
    n = 1000
    ts = rng.uniform(0, 1, n)
    ys = rng.uniform(-1, 1, n)
    for sub, (lo, hi) in ((1, (-1, 0)), (2, (0, 1))):
        xs = rng.uniform(lo, hi, n)
        u, v = sol[sub]
        # reference form of the system: sources on the right-hand side
        src_u = u ** 2 - v * (1 - v) if sub == 1 else -v
        src_v = u
        lhs_u = sy.diff(u, t) - sy.diff(u, x, 2) - sy.diff(u, y, 2) - sy.diff(u, x)
        lhs_v = sy.diff(v, t) - sy.diff(v, x, 2) - sy.diff(v, y, 2) - sy.diff(v, x)
        fu = _lam((t, x, y), lhs_u - src_u)(ts, xs, ys)
        fv = _lam((t, x, y), lhs_v - src_v)(ts, xs, ys)
        sub_arr = np.full(n, sub)
        f = np.stack([convergence_forcing(tt, xx, yy, sub_arr[:1])[:, 0]
                      for tt, xx, yy in zip(ts, xs, ys)], axis=1)
        assert np.max(np.abs(f - np.stack([fu, fv]))) <= 1e-8 * max(1, np.max(np.abs(f)))
        # the same data in the solver's form u_t - div(grad u - u B) + F(u) = f
        ex = np.stack([_lam((t, x, y), c)(ts, xs, ys) for c in (u, v)])
        dt = np.stack([_lam((t, x, y), sy.diff(c, t))(ts, xs, ys) for c in (u, v)])
        lap = np.stack([_lam((t, x, y), sy.diff(c, x, 2) + sy.diff(c, y, 2))(ts, xs, ys)
                        for c in (u, v)])
        gx = np.stack([_lam((t, x, y), sy.diff(c, x))(ts, xs, ys) for c in (u, v)])
        gy = np.stack([_lam((t, x, y), sy.diff(c, y))(ts, xs, ys) for c in (u, v)])
        B = pb.advection(0.0, xs, ys, sub_arr)
        res = dt - lap + B[:, 0] * gx + B[:, 1] * gy + pb.reaction(ex, sub_arr) - f
        assert np.max(np.abs(res)) <= 1e-8 * max(1, np.max(np.abs(f)))
        # analytic gradient helper
        g = np.stack([convergence_gradient(tt, np.array([xx]), np.array([yy]), sub_arr[:1])[..., 0]
                      for tt, xx, yy in zip(ts[:50], xs[:50], ys[:50])])
        np.testing.assert_allclose(g[:, :, 0], gx[:, :50].T, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(g[:, :, 1], gy[:, :50].T, rtol=1e-12, atol=1e-12)


def test_exact_solution_values():
    u = convergence_exact(0.0, np.array([-0.5]), np.array([0.0]), np.array([1]))
    assert abs(u[0, 0] + math.e) < 1e-12
    one = np.array([0.0])
    jump = (convergence_exact(1.0, one, one, np.array([2]))
            - convergence_exact(1.0, one, one, np.array([1])))
    assert abs(jump[0, 0] - math.cos(1) * math.e) < 1e-12


def test_manufactured_wrapper():
    mp = manufactured_convergence()
    assert mp.problem.exact is mp.exact and mp.forcing is convergence_forcing
    x = np.array([0.3])
    h = 1e-6
    d = (mp.exact(0.4 + h, x, x, np.array([2])) - mp.exact(0.4 - h, x, x, np.array([2]))) / (2 * h)
    np.testing.assert_allclose(mp.time_derivative(0.4, x, x, np.array([2])), d, rtol=1e-8)


def test_membrane_conditions_hold_for_exact_solution():
    # total flux continuity and the membrane law at x = 0 for the chosen weights
    pb = build_convergence_problem()
    y = np.linspace(-1, 1, 7)
    x = np.zeros_like(y)
    for t in (0.0, 0.3, 1.0):
        u1 = convergence_exact(t, x, y, np.ones_like(y, int))
        u2 = convergence_exact(t, x, y, 2 * np.ones_like(y, int))
        g1 = convergence_gradient(t, x, y, np.ones_like(y, int))[:, 0]
        g2 = convergence_gradient(t, x, y, 2 * np.ones_like(y, int))[:, 0]
        bn = -1.0
        flux1 = g1 - u1 * bn
        flux2 = g2 - u2 * bn
        np.testing.assert_allclose(flux1, flux2, atol=1e-12)
        w1, w2, r = pb.interface.coefficients(x, y)
        law = pb.interface.diffusive_flux(u1, u2) - (1 - r) * (w1 * u1 + w2 * u2) * bn
        # outward total flux = P [[u]] + R (Y1 u1 + Y2 u2) B.n
        np.testing.assert_allclose(-flux1 - (w1 * u1 + w2 * u2) * bn, law, atol=1e-12)


# -- accumulators and tables -----------------------------------------------------


def test_rate_extraction_synthetic():
    table = ConvergenceTable(1)
    p, C = 1.7, 3.3
    for j in range(5):
        table.add(4 ** (j + 1), 8 * 4 ** (j + 1), C * 2.0 ** (-p * j), C * 2.0 ** (-2 * p * j))
    assert table.rows[0].rate_L2S is None
    for r in table.rows[1:]:
        assert abs(r.rate_L2S - p) < 1e-12 and abs(r.rate_LinfL2 - 2 * p) < 1e-12
    assert abs(rate(8.0, 2.0) - 2.0) < 1e-15


def test_accumulator_constant_error():
    acc = ErrorAccumulator.__new__(ErrorAccumulator)
    acc.integral, acc.max_l2, acc._last, acc.history = 0.0, 0.0, None, []
    E2 = 2.25
    for n in range(101):
        acc.add(n * 0.01, E2, 0.5)
    assert abs(acc.l2_dg - math.sqrt(1.0 * E2)) < 1e-14
    assert acc.linf_l2 == 0.5


def test_accumulator_on_discrete_constant_error():
    pb = build_convergence_problem()
    disc = Discretization(DGSpace(build_structured_mesh(DOMAIN, 4), 1, 2), pb, quad_extra=2)
    acc = ErrorAccumulator(disc)
    U = disc.space.l2_project(lambda t, x, y, s: np.stack([x * y, 1 + 0 * x]))
    frozen = ErrorAccumulator(disc, exact=lambda t, x, y, s: np.zeros((2,) + np.shape(x)),
                              exact_gradient=lambda t, x, y, s: np.zeros((2, 2) + np.shape(x)))
    for n in range(11):
        frozen(n * 0.05, U)
    dg = disc.dg_norm_squared(disc.point_fields(U))
    assert abs(frozen.l2_dg - math.sqrt(0.5 * dg)) < 1e-12 * math.sqrt(dg)
    maxes = [h[2] for h in frozen.history]
    assert np.all(np.diff(np.maximum.accumulate(maxes)) >= 0)
    assert acc.integral == 0.0


def test_table_dof_invariant():
    table = run_convergence_study(1, 2, dt=0.05, t_final=0.1)
    for r in table.rows:
        assert r.dofs == 2 * 4 * r.cells
    assert [r.cells for r in table.rows] == [4, 16]
    assert "# cells" in table.to_text()


def _polynomial_problem():
    """Steady exact solution in V_h (m = 2) satisfying all membrane conditions."""
    def exact(t, x, y, sub):
        return (np.where(sub == 1, 1.0, 2.0) + x + y ** 2)[None]

    def grad(t, x, y, sub):
        return np.stack([np.ones_like(x), 2 * y])[None]

    b = np.array([0.0, 0.5])

    def forcing(t, x, y, sub):
        u = exact(t, x, y, sub)
        return -2.0 + b[1] * 2 * y[None] + u ** 2

    def neumann(t, x, y, sub):
        ny = np.sign(y)
        bn = b[1] * ny
        u = exact(t, x, y, sub)[0]
        return (2 * y * ny - np.minimum(bn, 0.0) * u)[None]

    model = InterfaceModel(1, [0.5], [0.5], [1.0], permeability=[[1.0]])
    return ProblemDefinition(
        1, constant_field([1.0]), constant_field([b]), lambda u, sub: u ** 2, exact,
        BoundarySpec.dirichlet_where(1, lambda x, y: np.abs(np.abs(x) - 1) < 1e-12), model,
        forcing=forcing, dirichlet_data=exact, neumann_data=neumann, exact=exact,
        exact_gradient=grad, reaction_growth=1.0, name="polynomial")


@pytest.mark.parametrize("interface", ["explicit", "implicit"])
def test_exactness_degeneracy(interface):
    pb = _polynomial_problem()
    acc = run_level(pb, build_structured_mesh(DOMAIN, 4), 2,
                    SchemeConfig(dt=0.01, t_final=0.5, interface=interface))
    assert max(math.sqrt(h[1]) for h in acc.history) <= 1e-8
    assert acc.linf_l2 <= 1e-8


def test_injected_exact_solution_gives_projection_error():
    pb = build_convergence_problem()
    scheme = SchemeConfig(dt=0.25, t_final=1.0)
    errs = []
    mesh = build_structured_mesh(DOMAIN, 4)
    for nx in (4, 8, 16):
        acc = run_level(pb, build_structured_mesh(DOMAIN, nx), 2, scheme, inject_exact=True)
        assert acc.l2_dg > 0 and acc.linf_l2 > 0
        errs.append(acc.linf_l2)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 3) < 0.35), orders
    assert mesh.n_elements == 16


# -- advection run ------------------------------------------------------------------


def test_advection_configuration():
    pb = build_advection_problem()
    assert pb.diffusion.constant[0] == 0.01
    np.testing.assert_array_equal(pb.advection.constant, [ADVECTION_FIELD])
    m = pb.interface
    assert m.permeability[0, 0] == 0.2 and abs(m._w1.constant[0] - 5 / 6) < 1e-15
    assert m._r.constant[0] == 0.6


def test_zero_advection_decays_in_l2():
    pb = build_advection_problem(advection=(0.0, 0.0))
    (rep,) = run_advection_study((8,), 1, dt=1e-2, t_final=0.5, problem=pb, interface="implicit")
    assert rep.finite and rep.l2_monotone
    assert rep.l2_history[-1] < rep.l2_history[0]


def test_advection_snapshots(tmp_path):
    (rep,) = run_advection_study((8,), 1, dt=1e-2, t_final=1.0, out_dir=tmp_path)
    assert [round(t, 6) for t, _ in rep.jump_history] == [0.0, 0.5, 1.0]
    assert len(rep.snapshots) == 3 and all((tmp_path / p).exists() for p in rep.snapshots)
    assert rep.bounded and rep.layer_means is not None


def test_layer_strip_means_on_indicator():
    mesh = build_structured_mesh(DOMAIN, 8)
    space = DGSpace(mesh, 1)
    U = space.l2_project(lambda t, x, y, s: np.where(x > -0.25, 1.0, 0.0)[None])
    first, second = layer_strip_means(space, U)
    assert first == pytest.approx(1.0) and second == pytest.approx(0.0)
    U = space.l2_project(lambda t, x, y, s: np.where(x > -0.25, 0.0, 1.0)[None])
    assert layer_strip_means(space, U) == pytest.approx((0.0, 1.0))
    U = space.l2_project(lambda t, x, y, s: (x + 1)[None])
    first, second = layer_strip_means(space, U)
    assert first == pytest.approx(1 - 0.125) and second == pytest.approx(1 - 0.375)
