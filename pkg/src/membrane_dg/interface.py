"""Kedem-Katchalsky membrane closure and the nonlinear interface form.

On an interface face the plus trace is taken from compartment 1 and the
normal ``n`` points from compartment 1 into compartment 2.  For a state
``w`` and test function ``v`` the interface form is::

    N(w, v) = int_I [ p(w1, w2) - (I - R) (Y1 w1 + Y2 w2) (B n) ] . (v1 - v2)

where ``p(w1, w2) = P (w1 - w2)`` is the diffusive membrane flux.  The
weighted average in the second group equals ``{w B} n + B_I (w1 - w2)`` with
``B_I = (Y1 - I/2) B n`` evaluated from compartment 1.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np
import scipy.sparse as sp

if TYPE_CHECKING:
    from .operators import Discretization


class NotLinear(ValueError):
    """The membrane permeability depends on the state."""


def _as_pointwise(value, n):
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float).reshape(n)

    def fn(x, y):
        return np.broadcast_to(arr[:, None], (n, np.size(x))).copy()

    fn.constant = arr
    return fn


@dataclass
class InterfaceModel:
    """Membrane permeability, averaging weights and friction.

    Weights and friction are length-``n`` vectors (diagonal matrices) or
    callables ``(x, y) -> (n, npts)``.  Either a constant ``permeability``
    matrix or a general ``flux(u1, u2) -> (n, npts)`` callback must be given.
    """
    n_components: int
    weights1: object
    weights2: object
    friction: object
    permeability: np.ndarray | None = None
    flux: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    flux_jacobian: Callable | None = None

    def __post_init__(self):
        n = self.n_components
        if self.permeability is None and self.flux is None:
            raise ValueError("give a constant permeability or a flux callback")
        if self.permeability is not None:
            P = np.asarray(self.permeability, dtype=float)
            self.permeability = np.diag(P) if P.ndim == 1 else P.reshape(n, n)
        self._w1 = _as_pointwise(self.weights1, n)
        self._w2 = _as_pointwise(self.weights2, n)
        self._r = _as_pointwise(self.friction, n)
        if all(hasattr(f, "constant") for f in (self._w1, self._w2)):
            total = self._w1.constant + self._w2.constant
            if np.max(np.abs(total - 1.0)) > 1e-14:
                raise ValueError(f"interface weights must sum to one, got {total}")
            for w in (self._w1.constant, self._w2.constant):
                if np.any((w < 0) | (w > 1)):
                    raise ValueError("interface weights must lie in [0, 1]")
        if hasattr(self._r, "constant") and np.any((self._r.constant < 0) | (self._r.constant > 1)):
            raise ValueError("friction coefficients must lie in [0, 1]")

    @property
    def permeability_is_constant(self) -> bool:
        return self.permeability is not None

    def coefficients(self, x, y):
        """Weights ``Y1``, ``Y2`` and friction ``R`` at points, each ``(n, npts)``."""
        w1, w2, r = self._w1(x, y), self._w2(x, y), self._r(x, y)
        if np.max(np.abs(w1 + w2 - 1.0), initial=0.0) > 1e-14:
            raise ValueError("interface weights must sum to one")
        return w1, w2, r

    def diffusive_flux(self, u1, u2) -> np.ndarray:
        if self.permeability is not None:
            return self.permeability @ (u1 - u2)
        return np.asarray(self.flux(u1, u2), dtype=float)

    def check_upwind(self, bn1, w1, w2) -> bool:
        """Warn unless the upwind compartment carries the larger weight."""
        bad = ((bn1 > 0) & (w1 < w2)) | ((bn1 < 0) & (w1 > w2))
        if np.any(bad):
            warnings.warn("interface weights do not favour the upwind compartment", stacklevel=2)
            return False
        return True


def interface_upwind_coefficient(disc: "Discretization", t: float = 0.0) -> np.ndarray:
    """``B_I = (Y1 - I/2) B n`` at interface quadrature points; ``(n, npts)``."""
    return disc.coefficients(t).interface_beta


def eval_N(disc: "Discretization", U, t: float = 0.0) -> np.ndarray:
    """Vector ``N(w, phi_j)`` for all basis functions ``phi_j``."""
    out = np.zeros(disc.space.total_dofs)
    fs = disc.interface_points
    if fs is None:
        return out
    co = disc.coefficients(t)
    model = disc.problem.interface
    Us = disc.space.split(U)
    w1 = np.stack([fs.plus.val @ u for u in Us])
    w2 = np.stack([fs.minus.val @ u for u in Us])
    bn1 = co.bn[("I", "+")]
    bn2 = co.bn[("I", "-")]
    adv = 0.5 * (w1 * bn1 + w2 * bn2) + co.interface_beta * (w1 - w2)
    g = model.diffusive_flux(w1, w2) - (1.0 - co.friction) * adv
    jump = disc.interface_jump
    n_s = disc.space.n_scalar
    for c in range(disc.space.n_components):
        out[c * n_s:(c + 1) * n_s] = jump.T @ (fs.weight * g[c])
    return out


def linearize_N(disc: "Discretization", t: float = 0.0) -> sp.csr_matrix:
    """Matrix ``K`` with ``K @ w == eval_N(w)`` for constant permeability."""
    model = disc.problem.interface
    if not model.permeability_is_constant:
        raise NotLinear("interface permeability is state dependent")
    return disc.interface_matrix(t, include_permeability=True)


def jacobian_N_fd(disc: "Discretization", U, t: float = 0.0, step: float | None = None,
                  ) -> sp.csr_matrix:
    """Central-difference Jacobian of :func:`eval_N` over interface dofs."""
    ndof = disc.space.total_dofs
    U = np.asarray(U, dtype=float)
    fs = disc.interface_points
    if fs is None:
        return sp.csr_matrix((ndof, ndof))
    if step is None:
        step = 1e-6 * (1.0 + np.max(np.abs(U), initial=0.0))
    touched = np.unique(disc.interface_jump.indices)
    n_s = disc.space.n_scalar
    cols = np.concatenate([touched + c * n_s for c in range(disc.space.n_components)])
    rows, vals, cidx = [], [], []
    for j in cols:
        e = np.zeros(ndof)
        e[j] = step
        d = (eval_N(disc, U + e, t) - eval_N(disc, U - e, t)) / (2 * step)
        nz = np.flatnonzero(d)
        rows.append(nz)
        vals.append(d[nz])
        cidx.append(np.full(nz.size, j))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cidx))), shape=(ndof, ndof)
    )


def jacobian_N(disc: "Discretization", U, t: float = 0.0) -> sp.csr_matrix:
    """Exact Jacobian of :func:`eval_N` from ``model.flux_jacobian``.

    ``flux_jacobian(u1, u2)`` returns ``(n, 2n, npts)``: derivatives of the
    diffusive flux with respect to ``(u1, u2)``.
    """
    model = disc.problem.interface
    if model.permeability_is_constant:
        return linearize_N(disc, t)
    if model.flux_jacobian is None:
        raise ValueError("model has no analytic flux Jacobian")
    fs = disc.interface_points
    n = disc.space.n_components
    Us = disc.space.split(U)
    w1 = np.stack([fs.plus.val @ u for u in Us])
    w2 = np.stack([fs.minus.val @ u for u in Us])
    J = np.asarray(model.flux_jacobian(w1, w2))
    jump = disc.interface_jump
    blocks = [[None] * n for _ in range(n)]
    for c in range(n):
        for d in range(n):
            dp = jump.T @ sp.diags(fs.weight * J[c, d]) @ fs.plus.val
            dm = jump.T @ sp.diags(fs.weight * J[c, n + d]) @ fs.minus.val
            blocks[c][d] = dp + dm
    K = sp.bmat(blocks, format="csr")
    return K + disc.interface_matrix(t, include_permeability=False)
