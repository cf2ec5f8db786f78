"""Broken tensor-product Legendre spaces on structured quadrilateral meshes.

Every scalar component lives in the same broken space.  The global unknown
vector is component-major: component ``c`` occupies
``[c * n_scalar, (c + 1) * n_scalar)`` and inside it element ``e`` owns the
contiguous block ``offset[e] : offset[e] + (m_e + 1)**2``.

Local basis function ``k = i * (m + 1) + j`` is ``P_i(xi) * P_j(eta)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import FaceKind, Mesh


class UnsupportedOrder(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int  # polynomial exactness


@lru_cache(maxsize=None)
def _leggauss(npts: int):
    x, w = np.polynomial.legendre.leggauss(npts)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre_1d(npts: int) -> QuadratureRule:
    """Gauss-Legendre rule on ``[-1, 1]`` exact to degree ``2 * npts - 1``."""
    if not 1 <= npts <= 30:
        raise UnsupportedOrder(f"npts must be in [1, 30], got {npts}")
    x, w = _leggauss(npts)
    return QuadratureRule(x, w, 2 * npts - 1)


def tensor_rule(npts: int) -> QuadratureRule:
    r = gauss_legendre_1d(npts)
    X, Y = np.meshgrid(r.points, r.points, indexing="ij")
    W = np.outer(r.weights, r.weights)
    return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]), W.ravel(), r.degree)


def legendre_1d(m: int, x) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives of ``P_0 .. P_m`` at ``x``; shapes ``(m + 1, *x.shape)``."""
    x = np.asarray(x, dtype=float)
    P = np.empty((m + 1,) + x.shape)
    dP = np.empty_like(P)
    P[0] = 1.0
    dP[0] = 0.0
    if m >= 1:
        P[1] = x
        dP[1] = 1.0
    for k in range(1, m):
        # Bonnet recursion and P'_{k+1} = P'_{k-1} + (2k + 1) P_k
        P[k + 1] = ((2 * k + 1) * x * P[k] - k * P[k - 1]) / (k + 1)
        dP[k + 1] = dP[k - 1] + (2 * k + 1) * P[k]
    return P, dP


@dataclass(frozen=True)
class ReferenceBasis:
    degree: int

    @property
    def size(self) -> int:
        return (self.degree + 1) ** 2

    def tabulate(self, xi, eta):
        """Values ``(nb, npts)`` and reference gradients ``(2, nb, npts)``."""
        m = self.degree
        Px, dPx = legendre_1d(m, xi)
        Py, dPy = legendre_1d(m, eta)
        val = (Px[:, None] * Py[None, :]).reshape((m + 1) ** 2, *np.shape(xi))
        gx = (dPx[:, None] * Py[None, :]).reshape(val.shape)
        gy = (Px[:, None] * dPy[None, :]).reshape(val.shape)
        return val, np.stack([gx, gy])

    def norms_squared(self) -> np.ndarray:
        """``int P_i(xi)^2 P_j(eta)^2`` over the reference square."""
        k = np.arange(self.degree + 1)
        n1 = 2.0 / (2 * k + 1)
        return np.outer(n1, n1).ravel()


def eval_basis(basis: ReferenceBasis, ref_point) -> tuple[np.ndarray, np.ndarray]:
    """Basis values ``(nb,)`` and reference gradients ``(nb, 2)`` at one point."""
    xi, eta = np.asarray(ref_point, dtype=float)
    val, grad = basis.tabulate(np.array(xi), np.array(eta))
    return val, grad.T


@dataclass(frozen=True, eq=False)
class DofMap:
    n_components: int
    offsets: np.ndarray   # (ne + 1,) scalar offsets
    n_scalar: int

    @property
    def total_dofs(self) -> int:
        return self.n_components * self.n_scalar

    def block(self, element: int, component: int) -> slice:
        start = component * self.n_scalar + self.offsets[element]
        return slice(int(start), int(component * self.n_scalar + self.offsets[element + 1]))

    def component(self, c: int) -> slice:
        return slice(c * self.n_scalar, (c + 1) * self.n_scalar)


@dataclass(frozen=True, eq=False)
class PointSet:
    """Quadrature points with sparse evaluation matrices of the scalar basis.

    ``val``, ``gx`` and ``gy`` map scalar coefficient vectors to point values
    and physical derivatives.  ``weight`` already contains the Jacobian.
    """
    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    element: np.ndarray
    subdomain: np.ndarray
    val: sp.csr_matrix
    gx: sp.csr_matrix
    gy: sp.csr_matrix


@dataclass(frozen=True, eq=False)
class FacePointSet:
    """Face quadrature points with both one-sided traces.

    Minus-side data are ``None`` on boundary faces.  ``h`` and ``m`` are the
    face-averaged mesh size and degree at each point.
    """
    face: np.ndarray
    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    normal: np.ndarray  # (2, npts), plus -> minus
    h: np.ndarray
    m: np.ndarray
    plus: PointSet
    minus: PointSet | None

    def __len__(self):
        return len(self.x)


class DGSpace:
    """Scalar broken polynomial space with per-element degrees."""

    def __init__(self, mesh: Mesh, degree, n_components: int = 1):
        degrees = np.broadcast_to(np.asarray(degree, dtype=int), (mesh.n_elements,)).copy()
        if np.any(degrees < 0):
            raise ValueError("degrees must be non-negative")
        self.mesh = mesh
        self.degrees = degrees
        self.n_components = n_components
        nb = (degrees + 1) ** 2
        offsets = np.concatenate([[0], np.cumsum(nb)])
        self.dofmap = DofMap(n_components, offsets, int(offsets[-1]))
        self._cache = {}

    @property
    def n_scalar(self) -> int:
        return self.dofmap.n_scalar

    @property
    def total_dofs(self) -> int:
        return self.dofmap.total_dofs

    @property
    def uniform_degree(self) -> int | None:
        d = np.unique(self.degrees)
        return int(d[0]) if d.size == 1 else None

    def face_degree(self, faces) -> np.ndarray:
        mesh = self.mesh
        mp = self.degrees[mesh.face_plus[faces]]
        minus = mesh.face_minus[faces]
        mm = np.where(minus >= 0, self.degrees[np.maximum(minus, 0)], mp)
        return 0.5 * (mp + mm)

    def face_h(self, faces) -> np.ndarray:
        mesh = self.mesh
        hp = mesh.element_h[mesh.face_plus[faces]]
        minus = mesh.face_minus[faces]
        hm = np.where(minus >= 0, mesh.element_h[np.maximum(minus, 0)], hp)
        return 0.5 * (hp + hm)

    # -- evaluation -------------------------------------------------------

    def evaluation_matrices(self, element, xi, eta):
        """Sparse ``(npts, n_scalar)`` value and physical-gradient matrices."""
        element = np.asarray(element)
        npts = element.size
        rows, cols, v, gx, gy = [], [], [], [], []
        degs = self.degrees[element]
        size = self.mesh.element_size
        for m in np.unique(degs):
            sel = np.flatnonzero(degs == m)
            e = element[sel]
            val, grad = ReferenceBasis(int(m)).tabulate(xi[sel], eta[sel])
            nb = val.shape[0]
            rows.append(np.repeat(sel, nb))
            cols.append((self.dofmap.offsets[e][:, None] + np.arange(nb)).ravel())
            v.append(val.T.ravel())
            gx.append((grad[0] * (2.0 / size[e, 0])).T.ravel())
            gy.append((grad[1] * (2.0 / size[e, 1])).T.ravel())
        shape = (npts, self.n_scalar)
        if not rows:
            return tuple(sp.csr_matrix(shape) for _ in range(3))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)

        def mk(data):
            return sp.csr_matrix((np.concatenate(data), (rows, cols)), shape=shape)

        return mk(v), mk(gx), mk(gy)

    def volume_points(self, extra: int = 0) -> PointSet:
        """Tensor Gauss points, ``m_e + 2 + extra`` per direction on element ``e``."""
        key = ("vol", extra)
        if key in self._cache:
            return self._cache[key]
        mesh = self.mesh
        elems, xis, etas, wts = [], [], [], []
        for e in range(mesh.n_elements):
            r = tensor_rule(int(self.degrees[e]) + 2 + extra)
            k = len(r.weights)
            elems.append(np.full(k, e))
            xis.append(r.points[:, 0])
            etas.append(r.points[:, 1])
            wts.append(r.weights * (0.25 * mesh.element_size[e, 0] * mesh.element_size[e, 1]))
        elem = np.concatenate(elems)
        xi = np.concatenate(xis)
        eta = np.concatenate(etas)
        x, y = mesh.to_physical(elem, xi, eta)
        val, gx, gy = self.evaluation_matrices(elem, xi, eta)
        ps = PointSet(x, y, np.concatenate(wts), elem, mesh.element_subdomain[elem], val, gx, gy)
        self._cache[key] = ps
        return ps

    def face_points(self, faces, extra: int = 0) -> FacePointSet:
        """Gauss points on ``faces`` with ``max(m+, m-) + 2 + extra`` nodes each."""
        faces = np.asarray(faces, dtype=int)
        mesh = self.mesh
        fid, t, w = [], [], []
        for f in faces:
            p, q = mesh.face_plus[f], mesh.face_minus[f]
            m = self.degrees[p] if q < 0 else max(self.degrees[p], self.degrees[q])
            r = gauss_legendre_1d(int(m) + 2 + extra)
            fid.append(np.full(len(r.weights), f))
            t.append(r.points)
            w.append(r.weights * 0.5 * mesh.face_length[f])
        fid = np.concatenate(fid) if fid else np.zeros(0, dtype=int)
        t = np.concatenate(t) if t else np.zeros(0)
        w = np.concatenate(w) if w else np.zeros(0)

        plus_e = mesh.face_plus[fid]
        xi_p, eta_p = local_face_coords(mesh.face_plus_local[fid], t)
        x, y = mesh.to_physical(plus_e, xi_p, eta_p)
        plus = self._trace_set(plus_e, xi_p, eta_p, x, y, w)
        minus = None
        if fid.size and np.all(mesh.face_minus[fid] >= 0):
            minus_e = mesh.face_minus[fid]
            xi_m, eta_m = local_face_coords(mesh.face_minus_local[fid], t)
            minus = self._trace_set(minus_e, xi_m, eta_m, x, y, w)
        elif fid.size and np.any(mesh.face_minus[fid] >= 0):
            raise ValueError("face set mixes boundary and inner faces")
        return FacePointSet(
            face=fid, x=x, y=y, weight=w,
            normal=mesh.face_normal[fid].T.copy(),
            h=self.face_h(fid), m=self.face_degree(fid),
            plus=plus, minus=minus,
        )

    def _trace_set(self, elem, xi, eta, x, y, w):
        val, gx, gy = self.evaluation_matrices(elem, xi, eta)
        return PointSet(x, y, w, elem, self.mesh.element_subdomain[elem], val, gx, gy)

    def face_groups(self, extra: int = 0) -> dict[FaceKind, FacePointSet]:
        key = ("faces", extra)
        if key not in self._cache:
            self._cache[key] = {
                kind: self.face_points(self.mesh.faces_of_kind(kind), extra) for kind in FaceKind
            }
        return self._cache[key]

    # -- discrete functions ---------------------------------------------------

    def evaluate(self, U, element, xi, eta):
        """Values of all components of ``U`` at reference points; ``(n, npts)``."""
        val, _, _ = self.evaluation_matrices(np.asarray(element), np.asarray(xi), np.asarray(eta))
        return np.stack([val @ u for u in self.split(U)])

    def split(self, U) -> np.ndarray:
        return np.asarray(U).reshape(self.n_components, self.n_scalar)

    def mass_diagonal(self) -> np.ndarray:
        """Diagonal of the scalar mass matrix (exact for the Legendre basis)."""
        mesh = self.mesh
        out = np.empty(self.n_scalar)
        jac = 0.25 * mesh.element_area()
        for m in np.unique(self.degrees):
            norms = ReferenceBasis(int(m)).norms_squared()
            e = np.flatnonzero(self.degrees == m)
            idx = self.dofmap.offsets[e][:, None] + np.arange(norms.size)
            out[idx] = jac[e][:, None] * norms
        return out

    def l2_project(self, fn, t: float = 0.0, extra: int = 2) -> np.ndarray:
        """Orthogonal L2 projection of ``fn(t, x, y, sub) -> (n, npts)``."""
        ps = self.volume_points(extra)
        vals = np.atleast_2d(np.asarray(fn(t, ps.x, ps.y, ps.subdomain), dtype=float))
        vals = np.broadcast_to(vals, (self.n_components, len(ps.x)))
        mdiag = self.mass_diagonal()
        return np.concatenate([(ps.val.T @ (ps.weight * v)) / mdiag for v in vals])

    def element_means(self, U) -> np.ndarray:
        """Cell averages ``(n, ne)``: the constant Legendre coefficient."""
        return self.split(U)[:, self.dofmap.offsets[:-1]]


def local_face_coords(local, t):
    """Reference coordinates of the face parameter ``t`` on local face(s)."""
    local = np.asarray(local)
    t = np.asarray(t, dtype=float)
    one = np.ones_like(t)
    xi = np.select([local == 0, local == 1], [-one, one], t)
    eta = np.select([local == 2, local == 3], [-one, one], t)
    return xi, eta


def trace_quadrature(mesh: Mesh, face: int, rule: QuadratureRule):
    """Reference points on the plus (and minus) element for each face node.

    Returns ``(ref_plus, ref_minus, physical)`` with shapes ``(npts, 2)``;
    ``ref_minus`` is ``None`` on boundary faces.
    """
    t = rule.points
    p = mesh.face_plus[face]
    xi, eta = local_face_coords(np.full(t.shape, mesh.face_plus_local[face]), t)
    phys = np.column_stack(mesh.to_physical(p, xi, eta))
    ref_plus = np.column_stack([xi, eta])
    ref_minus = None
    if mesh.face_minus[face] >= 0:
        xi_m, eta_m = local_face_coords(np.full(t.shape, mesh.face_minus_local[face]), t)
        ref_minus = np.column_stack([xi_m, eta_m])
    return ref_plus, ref_minus, phys
