"""Interior penalty dG operators for the two-compartment system.

:class:`Discretization` caches quadrature point sets and coefficient values
and produces the mass matrix, the bilinear-form matrix ``B``, the boundary
functional ``l(t)``, the reaction vector and dG norms.  The weak form reads::

    (u_t, v) + B(u, v) + N(u, v) + (F(u) - f, v) = l(v)

Rows of every assembled matrix index test functions and columns index trial
functions, so ``(B @ w)[j] = B(w, phi_j)``.

Point-set keys: ``("V", "+")`` volume, ``("int", "+"/"-")`` interior faces,
``("I", "+"/"-")`` interface faces (plus = compartment 1) and ``("bd", "+")``
boundary faces.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import DGSpace, FacePointSet, PointSet
from .mesh import FaceKind
from .problem import ProblemDefinition

logger = logging.getLogger(__name__)

GROUPS = {"int": FaceKind.INTERIOR, "I": FaceKind.INTERFACE, "bd": FaceKind.BOUNDARY}


class CoefficientSingular(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class NegativeRadicand(ValueError):
    pass


@dataclass
class Coefficients:
    """Coefficient values at all point sets for one time level."""
    a: dict
    b: dict
    bn: dict
    sigma: dict
    dirichlet: np.ndarray | None      # (n, npts) on boundary points
    interface_beta: np.ndarray | None  # (n, npts) on interface points
    weights1: np.ndarray | None
    weights2: np.ndarray | None
    friction: np.ndarray | None
    divb: np.ndarray


def _d(w, X):
    """Row scaling ``diag(w) @ X`` for sparse matrices, ``w * X`` for arrays."""
    if sp.issparse(X):
        return sp.diags(w) @ X
    return w * X


class Discretization:
    """Cached dG discretisation of one problem on one space.

    ``quad_extra`` raises every quadrature rule by that many points per
    direction (``0``: volume ``m + 2``, faces ``m + 2``).
    """

    def __init__(self, space: DGSpace, problem: ProblemDefinition, C_sigma: float = 10.0,
                 quad_extra: int = 0):
        if C_sigma <= 1.0:
            raise ValueError("penalty constant C_sigma must exceed 1")
        if space.n_components != problem.n_components:
            raise ValueError("space and problem disagree on the number of components")
        self.space = space
        self.problem = problem
        self.C_sigma = float(C_sigma)
        self.quad_extra = quad_extra
        self.vol: PointSet = space.volume_points(quad_extra)
        self.faces: dict[str, FacePointSet] = {}
        for key, kind in GROUPS.items():
            fs = space.face_groups(quad_extra)[kind]
            if len(fs):
                self.faces[key] = fs
        self._coef_cache: dict[float, Coefficients] = {}
        # test-side normal derivative matrices
        self._dn = {}
        for key, fs in self.faces.items():
            for side, ps in self._sides(fs):
                self._dn[key, side] = _d(fs.normal[0], ps.gx) + _d(fs.normal[1], ps.gy)
        fi = self.faces.get("I")
        self.interface_points = fi
        self.interface_jump = (fi.plus.val - fi.minus.val).tocsr() if fi is not None else None

    @staticmethod
    def _sides(fs):
        yield "+", fs.plus
        if fs.minus is not None:
            yield "-", fs.minus

    def point_sets(self):
        yield ("V", "+"), self.vol, None
        for key, fs in self.faces.items():
            for side, ps in self._sides(fs):
                yield (key, side), ps, fs

    # -- coefficients ---------------------------------------------------------

    def coefficients(self, t: float = 0.0) -> Coefficients:
        tkey = 0.0 if not self.problem.time_dependent else float(t)
        if tkey in self._coef_cache:
            return self._coef_cache[tkey]
        pb = self.problem
        n = pb.n_components
        a, b, bn = {}, {}, {}
        for key, ps, fs in self.point_sets():
            ak = np.asarray(pb.diffusion(t, ps.x, ps.y, ps.subdomain), dtype=float)
            ak = np.broadcast_to(ak, (n, len(ps.x)))
            if np.any(ak <= 0.0):
                raise CoefficientSingular(f"non-positive diffusion on point set {key}")
            bk = np.broadcast_to(np.asarray(pb.advection(t, ps.x, ps.y, ps.subdomain), dtype=float),
                                 (n, 2, len(ps.x)))
            a[key], b[key] = ak, bk
            if fs is not None:
                bn[key] = bk[:, 0] * fs.normal[0] + bk[:, 1] * fs.normal[1]

        ne = self.space.mesh.n_elements
        amax = np.zeros((n, ne))
        for c in range(n):
            np.maximum.at(amax[c], self.vol.element, a["V", "+"][c])
        sigma = {}
        for key, fs in self.faces.items():
            ap = amax[:, fs.plus.element]
            am = amax[:, fs.minus.element] if fs.minus is not None else ap
            sigma[key] = self.C_sigma * 0.5 * (ap + am) * fs.m ** 2 / fs.h

        dirichlet = None
        if "bd" in self.faces:
            fs = self.faces["bd"]
            dirichlet = np.stack([pb.boundary.is_dirichlet(c, fs.x, fs.y) for c in range(n)])
            for c in range(n):
                if not dirichlet[c].any():
                    logger.info("component %d has no Dirichlet boundary; the dG norm "
                                "is only a seminorm", c)

        beta = w1 = w2 = r = None
        if "I" in self.faces:
            fs = self.faces["I"]
            w1, w2, r = pb.interface.coefficients(fs.x, fs.y)
            beta = (w1 - 0.5) * bn["I", "+"]
            if np.min(beta) < -1e-12:
                warnings.warn("interface upwind coefficient B_I has negative entries", stacklevel=2)
            pb.interface.check_upwind(bn["I", "+"], w1, w2)

        divb = pb.divergence_of_advection(t, self.vol.x, self.vol.y, self.vol.subdomain)
        co = Coefficients(a, b, bn, sigma, dirichlet, beta, w1, w2, r,
                          np.broadcast_to(divb, (n, len(self.vol.x))))
        self._coef_cache[tkey] = co
        return co

    # -- trial-side fields -------------------------------------------------------

    def _matrix_trial(self):
        return {key: (ps.val, ps.gx, ps.gy) for key, ps, _ in self.point_sets()}

    def point_fields(self, U=None, t: float = 0.0, exact=None, exact_gradient=None):
        """Values and gradients ``(n, npts)`` of ``U - exact`` on every point set."""
        n = self.space.n_components
        out = {}
        Us = self.space.split(U) if U is not None else None
        for key, ps, _ in self.point_sets():
            npts = len(ps.x)
            val = np.zeros((n, npts))
            gx = np.zeros((n, npts))
            gy = np.zeros((n, npts))
            if Us is not None:
                val += np.stack([ps.val @ u for u in Us])
                gx += np.stack([ps.gx @ u for u in Us])
                gy += np.stack([ps.gy @ u for u in Us])
            if exact is not None:
                val -= np.broadcast_to(exact(t, ps.x, ps.y, ps.subdomain), (n, npts))
            if exact_gradient is not None:
                g = np.broadcast_to(exact_gradient(t, ps.x, ps.y, ps.subdomain), (n, 2, npts))
                gx -= g[:, 0]
                gy -= g[:, 1]
            out[key] = (val, gx, gy)
        return out

    def function_fields(self, fn, gradient, t: float = 0.0):
        """Point data of a function given by value and gradient callables."""
        diff = self.point_fields(None, t, fn, gradient)
        return {k: (-v, -gx, -gy) for k, (v, gx, gy) in diff.items()}

    # -- bilinear form -------------------------------------------------------------

    def _bilinear_component(self, c, tr, co):
        """``B(w, phi_j)`` for component ``c`` with trial data ``tr``.

        Returns a sparse matrix when ``tr`` holds evaluation matrices and a
        vector when it holds point values.
        """
        vol = self.vol
        val, gx, gy = tr["V", "+"]
        a = co.a["V", "+"][c]
        bx, by = co.b["V", "+"][c]
        W = vol.weight
        out = vol.gx.T @ _d(W, _d(a, gx) - _d(bx, val)) + vol.gy.T @ _d(W, _d(a, gy) - _d(by, val))

        fs = self.faces.get("int")
        if fs is not None:
            W = fs.weight
            vp, gxp, gyp = tr["int", "+"]
            vm, gxm, gym = tr["int", "-"]
            nx_, ny_ = fs.normal
            ap, am = co.a["int", "+"][c], co.a["int", "-"][c]
            bnp, bnm = co.bn["int", "+"][c], co.bn["int", "-"][c]
            dnp = _d(nx_, gxp) + _d(ny_, gyp)
            dnm = _d(nx_, gxm) + _d(ny_, gym)
            flux = 0.5 * (_d(ap, dnp) + _d(am, dnm)) - 0.5 * (_d(bnp, vp) + _d(bnm, vm))
            wj = vp - vm
            Jv = fs.plus.val - fs.minus.val
            test_dn = 0.5 * (_d(ap, self._dn["int", "+"]) + _d(am, self._dn["int", "-"]))
            pen = co.sigma["int"][c] + 0.5 * np.abs(0.5 * (bnp + bnm))
            out = out - Jv.T @ _d(W, flux) - test_dn.T @ _d(W, wj) + Jv.T @ _d(W * pen, wj)

        fs = self.faces.get("I")
        if fs is not None:
            W = fs.weight
            vp = tr["I", "+"][0]
            vm = tr["I", "-"][0]
            bnp, bnm = co.bn["I", "+"][c], co.bn["I", "-"][c]
            adv = 0.5 * (_d(bnp, vp) + _d(bnm, vm)) + _d(co.interface_beta[c], vp - vm)
            out = out + self.interface_jump.T @ _d(W, adv)

        fs = self.faces.get("bd")
        if fs is not None:
            W = fs.weight
            v, gxb, gyb = tr["bd", "+"]
            nx_, ny_ = fs.normal
            a = co.a["bd", "+"][c]
            bn = co.bn["bd", "+"][c]
            mD = co.dirichlet[c].astype(float)
            mN = 1.0 - mD
            Xp = (bn >= 0.0).astype(float)
            dn = _d(nx_, gxb) + _d(ny_, gyb)
            T = fs.plus.val
            test_dn = _d(a, self._dn["bd", "+"])
            out = (out
                   - T.T @ _d(W * mD, _d(a, dn) - _d(Xp * bn, v))
                   - test_dn.T @ _d(W * mD, v)
                   + T.T @ _d(W * mD * co.sigma["bd"][c], v)
                   + T.T @ _d(W * mN * Xp * bn, v))
        return out

    def bilinear_matrix(self, t: float = 0.0) -> sp.csr_matrix:
        co = self.coefficients(t)
        tr = self._matrix_trial()
        blocks = [self._bilinear_component(c, tr, co) for c in range(self.space.n_components)]
        B = sp.block_diag(blocks, format="csr")
        B.sum_duplicates()
        B.sort_indices()
        return B

    def apply_bilinear(self, fields, t: float = 0.0) -> np.ndarray:
        """``B(w, phi_j)`` for a function given by :meth:`point_fields` data."""
        co = self.coefficients(t)
        parts = []
        for c in range(self.space.n_components):
            tr = {k: (v[0][c], v[1][c], v[2][c]) for k, v in fields.items()}
            parts.append(np.asarray(self._bilinear_component(c, tr, co)).ravel())
        return np.concatenate(parts)

    # -- mass, boundary functional, reaction -----------------------------------------

    def mass_matrix(self) -> sp.csr_matrix:
        d = np.tile(self.space.mass_diagonal(), self.space.n_components)
        return sp.diags(d, format="csr")

    def rhs_vector(self, t: float = 0.0) -> np.ndarray:
        """Boundary functional ``l(phi_j)``."""
        pb = self.problem
        n = pb.n_components
        out = np.zeros(self.space.total_dofs)
        fs = self.faces.get("bd")
        if fs is None or (pb.dirichlet_data is None and pb.neumann_data is None):
            return out
        co = self.coefficients(t)
        sub = fs.plus.subdomain
        npts = len(fs.x)
        gD = (np.zeros((n, npts)) if pb.dirichlet_data is None
              else np.broadcast_to(pb.dirichlet_data(t, fs.x, fs.y, sub), (n, npts)))
        gN = (np.zeros((n, npts)) if pb.neumann_data is None
              else np.broadcast_to(pb.neumann_data(t, fs.x, fs.y, sub), (n, npts)))
        T = fs.plus.val
        W = fs.weight
        ns = self.space.n_scalar
        for c in range(n):
            mD = co.dirichlet[c].astype(float)
            bn = co.bn["bd", "+"][c]
            Xm = (bn < 0.0).astype(float)
            a = co.a["bd", "+"][c]
            g = gD[c]
            vec = (-(self._dn["bd", "+"].T @ (W * mD * a * g))
                   - T.T @ (W * mD * Xm * bn * g)
                   + T.T @ (W * mD * co.sigma["bd"][c] * g)
                   + T.T @ (W * (1.0 - mD) * gN[c]))
            out[c * ns:(c + 1) * ns] = vec
        return out

    def state_at_volume_points(self, U) -> np.ndarray:
        return np.stack([self.vol.val @ u for u in self.space.split(U)])

    def reaction_vector(self, U, t: float = 0.0) -> np.ndarray:
        """``(F(u_h) - f(t), phi_j)``."""
        pb = self.problem
        n = pb.n_components
        vol = self.vol
        npts = len(vol.x)
        r = np.zeros((n, npts))
        if pb.reaction is not None:
            u = self.state_at_volume_points(U)
            with np.errstate(over="ignore", invalid="ignore"):
                r = r + np.asarray(pb.reaction(u, vol.subdomain), dtype=float)
            bad = ~np.isfinite(r)
            if bad.any():
                elem = int(vol.element[np.flatnonzero(bad.any(axis=0))[0]])
                raise NonFiniteValue(f"reaction overflowed on element {elem}")
        if pb.forcing is not None:
            r = r - np.broadcast_to(pb.forcing(t, vol.x, vol.y, vol.subdomain), (n, npts))
        return np.concatenate([vol.val.T @ (vol.weight * r[c]) for c in range(n)])

    # -- interface (linear parts) ------------------------------------------------------

    def interface_matrix(self, t: float = 0.0, include_permeability: bool = True) -> sp.csr_matrix:
        """Matrix of the interface form ``N``; exact when the permeability is constant.

        With ``include_permeability=False`` only the friction-weighted
        advective group is returned (always linear).
        """
        n = self.space.n_components
        ndof = self.space.total_dofs
        fs = self.interface_points
        if fs is None:
            return sp.csr_matrix((ndof, ndof))
        co = self.coefficients(t)
        J = self.interface_jump
        W = fs.weight
        P = self.problem.interface.permeability
        if include_permeability and P is None:
            raise ValueError("permeability is state dependent; use include_permeability=False")
        blocks = [[None] * n for _ in range(n)]
        for c in range(n):
            for d in range(n):
                if include_permeability and P[c, d] != 0.0:
                    blocks[c][d] = J.T @ _d(W * P[c, d], J)
            bnp, bnm = co.bn["I", "+"][c], co.bn["I", "-"][c]
            adv = (0.5 * (_d(bnp, fs.plus.val) + _d(bnm, fs.minus.val))
                   + _d(co.interface_beta[c], J))
            lin = -(J.T @ _d(W * (1.0 - co.friction[c]), adv))
            blocks[c][c] = lin if blocks[c][c] is None else blocks[c][c] + lin
        K = sp.bmat(blocks, format="csr")
        K.sum_duplicates()
        return K

    # -- norms --------------------------------------------------------------------------

    def dg_norm_squared(self, fields, t: float = 0.0) -> float:
        """Squared dG norm of a function given by :meth:`point_fields` data."""
        co = self.coefficients(t)
        val, gx, gy = fields["V", "+"]
        W = self.vol.weight
        if np.min(co.divb) < -1e-12:
            raise NegativeRadicand("diag(div B) has negative entries")
        total = np.sum(W * co.a["V", "+"] * (gx ** 2 + gy ** 2))
        total += 0.5 * np.sum(W * np.maximum(co.divb, 0.0) * val ** 2)
        fs = self.faces.get("int")
        if fs is not None:
            jump = fields["int", "+"][0] - fields["int", "-"][0]
            bn = 0.5 * (co.bn["int", "+"] + co.bn["int", "-"])
            total += np.sum(fs.weight * (co.sigma["int"] + 0.5 * np.abs(bn)) * jump ** 2)
        fs = self.faces.get("bd")
        if fs is not None:
            v = fields["bd", "+"][0]
            pen = co.sigma["bd"] * co.dirichlet + 0.5 * np.abs(co.bn["bd", "+"])
            total += np.sum(fs.weight * pen * v ** 2)
        fs = self.faces.get("I")
        if fs is not None:
            jump = fields["I", "+"][0] - fields["I", "-"][0]
            total += np.sum(fs.weight * np.maximum(co.interface_beta, 0.0) * jump ** 2)
        return float(total)

    def l2_norm_squared(self, fields) -> float:
        val = fields["V", "+"][0]
        return float(np.sum(self.vol.weight * val ** 2))


def assemble_mass(space: DGSpace) -> sp.csr_matrix:
    """Block-diagonal mass matrix; diagonal for the Legendre basis."""
    d = np.tile(space.mass_diagonal(), space.n_components)
    return sp.diags(d, format="csr")


def assemble_B(space, problem, C_sigma: float = 10.0, t: float = 0.0) -> sp.csr_matrix:
    return Discretization(space, problem, C_sigma).bilinear_matrix(t)


def assemble_rhs_l(space, problem, C_sigma: float = 10.0, t: float = 0.0) -> np.ndarray:
    return Discretization(space, problem, C_sigma).rhs_vector(t)


def eval_reaction(space, problem, U, t: float = 0.0) -> np.ndarray:
    return Discretization(space, problem).reaction_vector(U, t)


def dg_norm(space, problem, U=None, t: float = 0.0, C_sigma: float = 10.0, exact=None,
            exact_gradient=None, quad_extra: int = 2) -> float:
    """dG norm of ``U - exact`` (either may be omitted)."""
    disc = Discretization(space, problem, C_sigma, quad_extra=quad_extra)
    fields = disc.point_fields(U, t, exact, exact_gradient)
    return float(np.sqrt(disc.dg_norm_squared(fields, t)))
