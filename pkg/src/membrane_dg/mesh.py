"""Structured quadrilateral meshes of a two-compartment rectangle.

The domain is split by the vertical line ``x = interface_x`` into the
compartment ``1`` (``x < interface_x``) and compartment ``2``
(``x > interface_x``).  Meshes are uniform tensor grids whose column lines
include the interface, so every element lies in exactly one compartment and
the interface is a union of mesh faces.

Local face numbering on the reference square ``[-1, 1]^2``::

    0 : xi  = -1 (left)      1 : xi  = +1 (right)
    2 : eta = -1 (bottom)    3 : eta = +1 (top)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class InterfaceNotAligned(ValueError):
    """No grid column line coincides with the interface."""


class FaceKind(enum.IntEnum):
    INTERIOR = 0
    INTERFACE = 1
    BOUNDARY = 2


@dataclass(frozen=True)
class Domain2D:
    x_range: tuple[float, float] = (-1.0, 1.0)
    y_range: tuple[float, float] = (-1.0, 1.0)
    interface_x: float | None = 0.0

    def __post_init__(self):
        x0, x1 = self.x_range
        y0, y1 = self.y_range
        if self.interface_x is not None and not x0 < self.interface_x < x1:
            raise ValueError("interface_x must lie strictly inside x_range")
        if not y0 < y1:
            raise ValueError("empty y_range")

    @property
    def area(self) -> float:
        return (self.x_range[1] - self.x_range[0]) * (self.y_range[1] - self.y_range[0])


@dataclass(frozen=True)
class Face:
    """Single face view; see :class:`Mesh` for the array storage."""
    kind: FaceKind
    plus_element: int
    minus_element: int | None
    normal: np.ndarray
    vertices: tuple[np.ndarray, np.ndarray]
    length: float
    plus_local: int
    minus_local: int | None


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform ``nx x ny`` quadrilateral mesh with classified faces.

    All per-element and per-face data are flat arrays.  ``face_normal`` points
    from the plus to the minus element (outward on the boundary).  On
    interface faces the plus element is always in compartment 1.
    """
    domain: Domain2D
    nx: int
    ny: int
    vertices: np.ndarray            # (nv, 2)
    elements: np.ndarray            # (ne, 4) counter-clockwise vertex ids
    element_subdomain: np.ndarray   # (ne,) values in {1, 2}
    element_center: np.ndarray      # (ne, 2)
    element_size: np.ndarray        # (ne, 2) side lengths (hx, hy)
    element_h: np.ndarray           # (ne,) cell diagonal
    face_kind: np.ndarray           # (nf,)
    face_plus: np.ndarray           # (nf,)
    face_minus: np.ndarray          # (nf,) -1 on boundary faces
    face_plus_local: np.ndarray
    face_minus_local: np.ndarray    # -1 on boundary faces
    face_normal: np.ndarray         # (nf, 2)
    face_vertices: np.ndarray       # (nf, 2) vertex ids
    face_length: np.ndarray
    element_faces: np.ndarray = field(repr=False)  # (ne, 4) face id per local face

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.face_kind)

    def faces_of_kind(self, kind: FaceKind) -> np.ndarray:
        return np.flatnonzero(self.face_kind == kind)

    def face(self, f: int) -> Face:
        minus = int(self.face_minus[f])
        va, vb = self.face_vertices[f]
        return Face(
            kind=FaceKind(int(self.face_kind[f])),
            plus_element=int(self.face_plus[f]),
            minus_element=None if minus < 0 else minus,
            normal=self.face_normal[f].copy(),
            vertices=(self.vertices[va].copy(), self.vertices[vb].copy()),
            length=float(self.face_length[f]),
            plus_local=int(self.face_plus_local[f]),
            minus_local=None if minus < 0 else int(self.face_minus_local[f]),
        )

    def face_midpoints(self, faces=None) -> np.ndarray:
        fv = self.face_vertices if faces is None else self.face_vertices[faces]
        return 0.5 * (self.vertices[fv[:, 0]] + self.vertices[fv[:, 1]])

    def element_area(self) -> np.ndarray:
        return self.element_size[:, 0] * self.element_size[:, 1]

    def shape_regularity(self) -> float:
        """Largest ratio of diameter to inradius over all elements."""
        inradius = 0.5 * self.element_size.min(axis=1)
        return float(np.max(self.element_h / inradius))

    def to_reference(self, elem, x, y):
        """Map physical points in element(s) ``elem`` to reference coordinates."""
        c = self.element_center[elem]
        s = self.element_size[elem]
        return 2.0 * (x - c[..., 0]) / s[..., 0], 2.0 * (y - c[..., 1]) / s[..., 1]

    def to_physical(self, elem, xi, eta):
        c = self.element_center[elem]
        s = self.element_size[elem]
        return c[..., 0] + 0.5 * s[..., 0] * xi, c[..., 1] + 0.5 * s[..., 1] * eta

    def summary(self) -> str:
        kinds = np.bincount(self.face_kind, minlength=3)
        return (
            f"Mesh {self.nx}x{self.ny} on {self.domain.x_range}x{self.domain.y_range}, "
            f"interface x={self.domain.interface_x}\n"
            f"  elements: {self.n_elements} (compartment 1: "
            f"{int(np.sum(self.element_subdomain == 1))}, compartment 2: "
            f"{int(np.sum(self.element_subdomain == 2))})\n"
            f"  faces: {self.n_faces} (interior {kinds[0]}, interface {kinds[1]}, "
            f"boundary {kinds[2]})\n"
            f"  h_max: {self.element_h.max():.6g}  shape regularity: "
            f"{self.shape_regularity():.6g}"
        )


def build_structured_mesh(domain: Domain2D, nx: int, ny: int | None = None) -> Mesh:
    """Uniform ``nx x ny`` quadrilateral mesh with the interface on a column line."""
    ny = nx if ny is None else ny
    x0, x1 = domain.x_range
    y0, y1 = domain.y_range
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    if domain.interface_x is None:
        # single compartment: everything belongs to compartment 1
        if nx < 1 or ny < 1:
            raise ValueError("need nx >= 1 and ny >= 1")
        icol = nx + 1
    else:
        if nx < 2 or ny < 1:
            raise ValueError("need nx >= 2 and ny >= 1")
        width = x1 - x0
        hits = np.flatnonzero(np.abs(xs - domain.interface_x) <= 1e-12 * width)
        if hits.size == 0:
            raise InterfaceNotAligned(
                f"no column line of the {nx}-column grid lies on x={domain.interface_x}"
            )
        icol = int(hits[0])
        xs[icol] = domain.interface_x

    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    I, J = I.ravel(), J.ravel()
    # element id e = i * ny + j
    elements = np.column_stack([vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)])
    hx = xs[I + 1] - xs[I]
    hy = ys[J + 1] - ys[J]
    center = np.column_stack([0.5 * (xs[I] + xs[I + 1]), 0.5 * (ys[J] + ys[J + 1])])
    subdomain = np.where(I < icol, 1, 2)

    def eid(i, j):
        return i * ny + j

    kind, plus, minus, plocal, mlocal, normal, fverts = [], [], [], [], [], [], []

    def add(k, p, m, pl, ml, nrm, va, vb):
        kind.append(k)
        plus.append(p)
        minus.append(m)
        plocal.append(pl)
        mlocal.append(ml)
        normal.append(nrm)
        fverts.append((va, vb))

    # vertical faces, x = xs[i]
    for i in range(nx + 1):
        for j in range(ny):
            va, vb = vid(i, j), vid(i, j + 1)
            if i == 0:
                add(FaceKind.BOUNDARY, eid(0, j), -1, 0, -1, (-1.0, 0.0), va, vb)
            elif i == nx:
                add(FaceKind.BOUNDARY, eid(nx - 1, j), -1, 1, -1, (1.0, 0.0), va, vb)
            else:
                k = FaceKind.INTERFACE if i == icol else FaceKind.INTERIOR
                add(k, eid(i - 1, j), eid(i, j), 1, 0, (1.0, 0.0), va, vb)
    # horizontal faces, y = ys[j]
    for i in range(nx):
        for j in range(ny + 1):
            va, vb = vid(i, j), vid(i + 1, j)
            if j == 0:
                add(FaceKind.BOUNDARY, eid(i, 0), -1, 2, -1, (0.0, -1.0), va, vb)
            elif j == ny:
                add(FaceKind.BOUNDARY, eid(i, ny - 1), -1, 3, -1, (0.0, 1.0), va, vb)
            else:
                add(FaceKind.INTERIOR, eid(i, j - 1), eid(i, j), 3, 2, (0.0, 1.0), va, vb)

    face_plus = np.array(plus)
    face_minus = np.array(minus)
    face_plus_local = np.array(plocal)
    face_minus_local = np.array(mlocal)
    face_vertices = np.array(fverts)
    face_length = np.linalg.norm(
        vertices[face_vertices[:, 1]] - vertices[face_vertices[:, 0]], axis=1
    )
    element_faces = np.full((nx * ny, 4), -1)
    element_faces[face_plus, face_plus_local] = np.arange(len(kind))
    inner = face_minus >= 0
    element_faces[face_minus[inner], face_minus_local[inner]] = np.flatnonzero(inner)

    return Mesh(
        domain=domain,
        nx=nx,
        ny=ny,
        vertices=vertices,
        elements=elements,
        element_subdomain=subdomain,
        element_center=center,
        element_size=np.column_stack([hx, hy]),
        element_h=np.hypot(hx, hy),
        face_kind=np.array(kind, dtype=int),
        face_plus=face_plus,
        face_minus=face_minus,
        face_plus_local=face_plus_local,
        face_minus_local=face_minus_local,
        face_normal=np.array(normal, dtype=float),
        face_vertices=face_vertices,
        face_length=face_length,
        element_faces=element_faces,
    )


def refine_uniform(mesh: Mesh) -> Mesh:
    """Quadrisect every element."""
    return build_structured_mesh(mesh.domain, 2 * mesh.nx, 2 * mesh.ny)


@dataclass
class ContrastReport:
    face: int
    product: float
    passed: bool


def check_diffusion_contrast(mesh: Mesh, diffusion: Callable, C_A: float,
                             t: float = 0.0) -> list[ContrastReport]:
    """Check the bounded-contrast condition on all non-interface inner faces.

    ``diffusion(t, x, y, sub)`` returns the diagonal of ``A`` with shape
    ``(n, npts)``.  The element norms are sampled at interior 3x3 Gauss
    points so that coefficients jumping across faces are read from the
    correct side.  Both orderings of the two neighbours are checked and the worst
    product is reported.
    """
    g = np.sqrt(0.6) * np.array([-1.0, 0.0, 1.0])
    ref = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    e = np.repeat(np.arange(mesh.n_elements), len(ref))
    xi = np.tile(ref[:, 0], mesh.n_elements)
    eta = np.tile(ref[:, 1], mesh.n_elements)
    x, y = mesh.to_physical(e, xi, eta)
    a = np.asarray(diffusion(t, x, y, mesh.element_subdomain[e]), dtype=float)
    a = np.atleast_2d(a).reshape(-1, mesh.n_elements, len(ref))
    a_max = np.abs(a).max(axis=(0, 2))
    ainv_max = (1.0 / np.abs(a)).max(axis=(0, 2))

    reports = []
    for f in np.flatnonzero(mesh.face_kind == FaceKind.INTERIOR):
        p, m = mesh.face_plus[f], mesh.face_minus[f]
        products = (a_max[p] * ainv_max[m], a_max[m] * ainv_max[p])
        worst = max(products, key=lambda v: max(v, 1.0 / v))
        ok = all(1.0 / C_A <= v <= C_A for v in products)
        reports.append(ContrastReport(int(f), float(worst), ok))
    return reports
