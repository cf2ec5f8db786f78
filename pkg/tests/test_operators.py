import dataclasses

import numpy as np
import pytest
import scipy.sparse as sp

from membrane_dg.experiments import DOMAIN, build_advection_problem, build_convergence_problem
from membrane_dg.fespace import DGSpace
from membrane_dg.interface import InterfaceModel
from membrane_dg.mesh import Domain2D, FaceKind, build_structured_mesh
from membrane_dg.operators import (CoefficientSingular, Discretization, NegativeRadicand,
                                   NonFiniteValue, assemble_B, assemble_mass, assemble_rhs_l,
                                   dg_norm, eval_reaction)
from membrane_dg.problem import BoundarySpec, ProblemDefinition, constant_field
from oracle import DenseReference


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def scalar_problem(a=1.0, b=(0.0, 0.0), boundary=None, **kw):
    model = InterfaceModel(1, [0.5], [0.5], [1.0], permeability=[[1.0]])
    return ProblemDefinition(
        n_components=1, diffusion=constant_field([a]), advection=constant_field([list(b)]),
        reaction=None, initial=lambda t, x, y, s: np.zeros((1,) + np.shape(x)),
        boundary=boundary or BoundarySpec.all_dirichlet(1), interface=model, **kw)


def _with_data(pb, dirichlet=None):
    n = pb.n_components

    def gD(t, x, y, sub):
        return np.broadcast_to(1 + x * y + y ** 2, (n,) + np.shape(x)) * np.arange(1, n + 1)[:, None]

    def gN(t, x, y, sub):
        return np.broadcast_to(x - 2 * y ** 2, (n,) + np.shape(x)) * np.arange(1, n + 1)[:, None]

    kw = dict(dirichlet_data=gD, neumann_data=gN)
    if dirichlet is not None:
        kw["boundary"] = dirichlet
    return dataclasses.replace(pb, **kw)


CONFIGS = {
    "convergence": build_convergence_problem,
    "advection": build_advection_problem,
}


@pytest.mark.parametrize("name", CONFIGS)
@pytest.mark.parametrize("nx", [2, 4])
@pytest.mark.parametrize("m", [1, 2])
def test_oracle_mass_and_bilinear(name, nx, m):
    pb = CONFIGS[name]()
    space = DGSpace(build_structured_mesh(DOMAIN, nx), m, pb.n_components)
    ref = DenseReference(nx, nx, m, pb)
    assert rel(assemble_mass(space).toarray(), ref.mass()) <= 1e-11
    assert rel(assemble_B(space, pb).toarray(), ref.bilinear()) <= 1e-11


@pytest.mark.parametrize("name,boundary", [
    ("convergence", None),
    ("advection", None),
    ("advection", BoundarySpec.all_dirichlet(1)),
    ("convergence", BoundarySpec.dirichlet_where(2, lambda x, y: y < 0)),
])
@pytest.mark.parametrize("m", [1, 2])
def test_oracle_boundary_functional(name, boundary, m):
    pb = _with_data(CONFIGS[name](), boundary)
    nx = 4
    space = DGSpace(build_structured_mesh(DOMAIN, nx), m, pb.n_components)
    ref = DenseReference(nx, nx, m, pb)
    assert rel(assemble_rhs_l(space, pb), ref.boundary_functional()) <= 1e-11
    assert rel(assemble_B(space, pb).toarray(), ref.bilinear()) <= 1e-11


def test_homogeneous_data_gives_zero_functional():
    pb = build_convergence_problem()
    space = DGSpace(build_structured_mesh(DOMAIN, 4), 1, 2)
    assert np.all(assemble_rhs_l(space, pb) == 0.0)


@pytest.mark.parametrize("m", [1, 2])
def test_oracle_reaction_polynomial(rng, m):
    pb = dataclasses.replace(build_convergence_problem(), forcing=None)
    space = DGSpace(build_structured_mesh(DOMAIN, 4), m, 2)
    U = rng.standard_normal(space.total_dofs)
    ref = DenseReference(4, 4, m, pb)
    assert rel(eval_reaction(space, pb, U), ref.reaction(U)) <= 1e-12


def test_mass_one_element():
    mesh = build_structured_mesh(Domain2D((-1, 1), (-1, 1), None), 1)
    M = assemble_mass(DGSpace(mesh, 1))
    np.testing.assert_allclose(M.toarray(), np.diag([4, 4 / 3, 4 / 3, 4 / 9]), rtol=1e-15)
    M0 = assemble_mass(DGSpace(build_structured_mesh(DOMAIN, 4), 0))
    np.testing.assert_allclose(M0.diagonal(), 0.25)
    assert (M - M.T).nnz == 0


def test_one_element_entry_matches_hand_value():
    # B(phi_x, phi_x) with phi_x = P1(x) on [-1, 1]^2, all Dirichlet, A = I, B = 0:
    # volume 4, each vertical face -2*(1*2) + sigma*2 with trace 1, horizontal faces sigma*int x^2
    mesh = build_structured_mesh(Domain2D((-1, 1), (-1, 1), None), 1)
    space = DGSpace(mesh, 1)
    B = assemble_B(space, scalar_problem()).toarray()
    sigma = 10.0 / np.sqrt(8.0)
    k = 2  # P1(x) P0(y)
    expected = 4.0 + 2 * (-2 * 2.0 + sigma * 2.0) + 2 * sigma * 2 / 3
    assert abs(B[k, k] - expected) < 1e-12
    assert rel(B, DenseReference(1, 1, 1, scalar_problem(), domain=((-1, 1), (-1, 1), 5.0)
                                 ).bilinear()) < 1e-12


def test_constants_in_kernel_for_neumann_zero_advection():
    pb = scalar_problem(boundary=BoundarySpec.all_neumann(1))
    space = DGSpace(build_structured_mesh(DOMAIN, 4), 2)
    B = assemble_B(space, pb)
    c = space.l2_project(lambda t, x, y, s: 3.0 * np.ones((1,) + np.shape(x)))
    assert np.max(np.abs(B @ c)) < 1e-12


@pytest.mark.parametrize("m", [1, 2])
def test_symmetry_without_advection(m):
    pb = dataclasses.replace(build_convergence_problem(),
                             advection=constant_field([[0.0, 0.0], [0.0, 0.0]]))
    B = assemble_B(DGSpace(build_structured_mesh(DOMAIN, 4), m, 2), pb)
    assert abs(B - B.T).max() <= 1e-12 * abs(B).max()


def test_matrix_is_canonical_csr():
    B = assemble_B(DGSpace(build_structured_mesh(DOMAIN, 4), 2, 2), build_convergence_problem())
    assert sp.isspmatrix_csr(B) and B.has_sorted_indices and B.has_canonical_format
    assert B.shape == (2 * 16 * 9,) * 2


def test_assembly_deterministic():
    pb = build_convergence_problem()
    space = DGSpace(build_structured_mesh(DOMAIN, 4), 2, 2)
    A1 = assemble_B(space, pb)
    A2 = assemble_B(DGSpace(build_structured_mesh(DOMAIN, 4), 2, 2), pb)
    assert np.array_equal(A1.indices, A2.indices) and np.array_equal(A1.data, A2.data)


@pytest.mark.parametrize("m", [1, 2])
def test_coercivity_rayleigh(rng, m):
    pb = build_convergence_problem()
    space = DGSpace(build_structured_mesh(DOMAIN, 4), m, 2)
    disc = Discretization(space, pb)
    B = disc.bilinear_matrix()
    q = []
    for _ in range(200):
        v = rng.standard_normal(space.total_dofs)
        q.append((v @ (B @ v)) / disc.dg_norm_squared(disc.point_fields(v)))
    assert min(q) >= 0.01, min(q)


def test_penalty_monotone(rng):
    pb = build_convergence_problem()
    space = DGSpace(build_structured_mesh(DOMAIN, 4), 1, 2)
    v = rng.standard_normal(space.total_dofs)
    vals = [v @ (assemble_B(space, pb, C) @ v) for C in (2.0, 5.0, 10.0, 40.0)]
    assert np.all(np.diff(vals) >= 0)
    # a globally constant function has no jumps and no Dirichlet trace in a
    # Neumann problem: the penalty cannot see it
    pn = scalar_problem(b=(0.3, -0.2), boundary=BoundarySpec.all_neumann(1))
    sp1 = DGSpace(build_structured_mesh(DOMAIN, 4), 1)
    c = sp1.l2_project(lambda t, x, y, s: np.ones((1,) + np.shape(x)))
    e = [c @ (assemble_B(sp1, pn, C) @ c) for C in (2.0, 40.0)]
    assert abs(e[0] - e[1]) < 1e-12 * abs(e[0])


def test_penalty_constant_must_exceed_one():
    space = DGSpace(build_structured_mesh(DOMAIN, 2), 1, 2)
    with pytest.raises(ValueError):
        Discretization(space, build_convergence_problem(), C_sigma=1.0)


def test_nonpositive_diffusion_rejected():
    space = DGSpace(build_structured_mesh(DOMAIN, 2), 1)
    with pytest.raises(CoefficientSingular):
        assemble_B(space, scalar_problem(a=0.0))


def test_reaction_zero_and_constant_state():
    pb0 = scalar_problem()
    space1 = DGSpace(build_structured_mesh(DOMAIN, 2), 1)
    assert np.all(eval_reaction(space1, pb0, np.ones(space1.total_dofs)) == 0)

    pb = dataclasses.replace(build_convergence_problem(), forcing=None)
    mesh = build_structured_mesh(DOMAIN, 4)
    space = DGSpace(mesh, 1, 2)
    U = space.l2_project(lambda t, x, y, s: np.stack([np.ones_like(x), np.zeros_like(x)]))
    r = space.split(eval_reaction(space, pb, U))
    const = space.dofmap.offsets[:-1]
    mass0 = space.mass_diagonal()[const]
    left = mesh.element_subdomain == 1
    # F_1(1, 0) = -(1 - 0) on compartment 1, v = 0 on compartment 2
    np.testing.assert_allclose(r[0, const][left], -mass0[left], rtol=1e-14)
    np.testing.assert_allclose(r[0, const][~left], 0.0, atol=1e-15)
    # F_2(1, 0) = -u = -1 everywhere
    np.testing.assert_allclose(r[1, const], -mass0, rtol=1e-14)


def test_reaction_overflow_reported():
    pb = dataclasses.replace(build_convergence_problem(), forcing=None)
    space = DGSpace(build_structured_mesh(DOMAIN, 2), 1, 2)
    U = np.zeros(space.total_dofs)
    U[space.dofmap.offsets[1]] = 1e200
    with pytest.raises(NonFiniteValue, match="element 1"):
        eval_reaction(space, pb, U)


def test_dg_norm_zero():
    space = DGSpace(build_structured_mesh(DOMAIN, 2), 1, 2)
    assert dg_norm(space, build_convergence_problem(), np.zeros(space.total_dofs)) == 0.0


def test_dg_norm_continuous_function_is_h1_seminorm():
    pb = scalar_problem()
    space = DGSpace(build_structured_mesh(DOMAIN, 4), 1)
    disc = Discretization(space, pb, quad_extra=10)

    def u(t, x, y, sub):
        return (np.sin(np.pi * x) * np.sin(np.pi * y))[None]

    def grad(t, x, y, sub):
        return np.pi * np.stack([np.cos(np.pi * x) * np.sin(np.pi * y),
                                 np.sin(np.pi * x) * np.cos(np.pi * y)])[None]

    val = disc.dg_norm_squared(disc.function_fields(u, grad))
    assert abs(val - 2 * np.pi ** 2) < 1e-10


def test_dg_norm_single_jump():
    mesh = build_structured_mesh(DOMAIN, 4, 1)
    space = DGSpace(mesh, 1)
    pb = scalar_problem(boundary=BoundarySpec.all_neumann(1))
    U = np.zeros(space.total_dofs)
    U[space.dofmap.offsets[0]] = 1.0   # indicator of the leftmost column
    h = mesh.element_h[0]
    val = dg_norm(space, pb, U, quad_extra=0) ** 2
    assert abs(val - 10.0 / h * 2.0) < 1e-12


def test_negative_divergence_rejected():
    pb = scalar_problem(advection_divergence=constant_field([-1.0]))
    space = DGSpace(build_structured_mesh(DOMAIN, 2), 1)
    with pytest.raises(NegativeRadicand):
        dg_norm(space, pb, np.ones(space.total_dofs))


def test_interface_beta_nonnegative_both_configs():
    for build in CONFIGS.values():
        pb = build()
        disc = Discretization(DGSpace(build_structured_mesh(DOMAIN, 4), 2, pb.n_components), pb)
        assert np.all(disc.coefficients().interface_beta >= -1e-12)
    beta = Discretization(DGSpace(build_structured_mesh(DOMAIN, 4), 1, 1),
                          build_advection_problem()).coefficients().interface_beta
    np.testing.assert_allclose(beta, 1 / 6, rtol=1e-14)


def test_face_point_classification():
    mesh = build_structured_mesh(DOMAIN, 4)
    disc = Discretization(DGSpace(mesh, 1, 2), build_convergence_problem())
    fs = disc.faces["I"]
    assert set(np.unique(mesh.face_kind[fs.face])) == {FaceKind.INTERFACE}
    assert np.all(fs.plus.subdomain == 1) and np.all(fs.minus.subdomain == 2)
