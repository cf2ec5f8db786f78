"""Problem data for two-compartment advection-diffusion-reaction systems.

All space-time fields share the call signature ``fn(t, x, y, sub)`` where
``x``, ``y`` are equally shaped point arrays and ``sub`` holds the compartment
(1 or 2) the point is evaluated from.  Knowing the compartment matters on the
interface, where data may take two values.  Scalar fields return ``(n, npts)``
arrays; the advection field returns ``(n, 2, npts)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .interface import InterfaceModel

Field = Callable[..., np.ndarray]


def constant_field(values) -> Field:
    """Space-time constant field; ``values`` has shape ``(n,)`` or ``(n, 2)``."""
    values = np.asarray(values, dtype=float)

    def fn(t, x, y, sub=None):
        shape = np.shape(x)
        return np.broadcast_to(values.reshape(values.shape + (1,) * len(shape)),
                               values.shape + shape).copy()

    fn.constant = values
    return fn


def zero_field(n: int) -> Field:
    return constant_field(np.zeros(n))


@dataclass
class BoundarySpec:
    """Per-component Dirichlet predicate on ``(x, y)``; the rest is Neumann."""
    dirichlet: Sequence[Callable[[np.ndarray, np.ndarray], np.ndarray]]

    @classmethod
    def all_neumann(cls, n: int) -> "BoundarySpec":
        return cls([lambda x, y: np.zeros(np.shape(x), dtype=bool)] * n)

    @classmethod
    def all_dirichlet(cls, n: int) -> "BoundarySpec":
        return cls([lambda x, y: np.ones(np.shape(x), dtype=bool)] * n)

    @classmethod
    def dirichlet_where(cls, n: int, predicate) -> "BoundarySpec":
        return cls([predicate] * n)

    def is_dirichlet(self, component: int, x, y) -> np.ndarray:
        return np.asarray(self.dirichlet[component](x, y), dtype=bool)


@dataclass
class ProblemDefinition:
    """Coefficients and data of ``u_t - div(A grad u - U B) + F(u) = f``.

    ``reaction(u, sub)`` maps ``(n, npts)`` states to ``(n, npts)``.
    ``dirichlet_data``/``neumann_data``/``forcing`` default to zero.
    """
    n_components: int
    diffusion: Field
    advection: Field
    reaction: Callable[[np.ndarray, np.ndarray], np.ndarray] | None
    initial: Field
    boundary: BoundarySpec
    interface: InterfaceModel
    forcing: Field | None = None
    dirichlet_data: Field | None = None
    neumann_data: Field | None = None
    advection_divergence: Field | None = None
    reaction_growth: float = 0.0
    exact: Field | None = None
    exact_gradient: Field | None = None
    time_dependent: bool = False
    name: str = "custom"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.reaction_growth <= 2.0:
            warnings.warn(
                f"reaction growth exponent {self.reaction_growth} outside [0, 2]",
                stacklevel=2,
            )
        if len(self.boundary.dirichlet) != self.n_components:
            raise ValueError("boundary spec must have one predicate per component")

    def check_parabolicity(self, x, y, sub, times=(0.0,)) -> float:
        """Smallest sampled diffusion entry; raises if not positive."""
        amin = min(float(np.min(self.diffusion(t, x, y, sub))) for t in times)
        if amin <= 0.0:
            raise ValueError(f"diffusion must be positive, found {amin}")
        return amin

    def divergence_of_advection(self, t, x, y, sub, step: float = 1e-6) -> np.ndarray:
        if self.advection_divergence is not None:
            return np.asarray(self.advection_divergence(t, x, y, sub), dtype=float)
        if getattr(self.advection, "constant", None) is not None:
            return np.zeros((self.n_components,) + np.shape(x))
        bxp = self.advection(t, x + step, y, sub)[:, 0]
        bxm = self.advection(t, x - step, y, sub)[:, 0]
        byp = self.advection(t, x, y + step, sub)[:, 1]
        bym = self.advection(t, x, y - step, sub)[:, 1]
        return (bxp - bxm + byp - bym) / (2 * step)
