"""Black-box functions on extended boxes n*T^2 with derivative queries.

A BoxFunction is anything that can be evaluated, together with partial
derivatives up to a declared order, at arbitrary points of the box
[-n pi, n pi]^2.  Concrete implementations: trigonometric interpolants of
periodic grid fields (spectral module), closures over dual-number arithmetic
(below), and tanh networks frozen at a time slice (residuals module).
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .errors import CapabilityError, DomainError


class BoxFunction:
    """Base class: evaluable on extent*T^2 with derivatives up to max order."""

    extent: float = math.inf
    max_derivative_order: int = 0

    def check_points(self, points: np.ndarray):
        limit = self.extent * math.pi
        if np.any(np.abs(points) > limit + 1e-9):
            raise DomainError(
                f"evaluation outside the box [-{self.extent}pi, {self.extent}pi]^2")

    def check_order(self, alpha):
        if sum(alpha) > self.max_derivative_order:
            raise CapabilityError(
                f"derivative order {alpha} exceeds configured maximum "
                f"{self.max_derivative_order}")

    def eval(self, points, alpha=(0, 0)) -> np.ndarray:
        """Evaluate D^alpha of the function at points of shape (P, 2)."""
        raise NotImplementedError

    def __call__(self, points, alpha=(0, 0)):
        return self.eval(points, alpha)

    def gradient(self, points) -> np.ndarray:
        return np.stack([self.eval(points, (1, 0)), self.eval(points, (0, 1))],
                        axis=-1)


class ShiftedDerivative(BoxFunction):
    """View of a base function pre-differentiated by a fixed multi-index.

    Realizes the commutation D^alpha (op phi) = op (D^alpha phi): applying an
    operator to this view evaluates derivatives of the operator output.
    """

    def __init__(self, base: BoxFunction, alpha):
        self.base = base
        self.alpha = tuple(alpha)
        self.extent = base.extent
        self.max_derivative_order = base.max_derivative_order - sum(alpha)
        if self.max_derivative_order < 0:
            raise CapabilityError("base function cannot supply the requested order")

    def eval(self, points, alpha=(0, 0)):
        combined = (self.alpha[0] + alpha[0], self.alpha[1] + alpha[1])
        return self.base.eval(points, combined)


class CallableBoxFunction(BoxFunction):
    """Smooth closure over dual-capable arithmetic; derivatives are exact.

    fn must map two scalar-like arguments (x1, x2) built from the generic
    operations in :mod:`sqgpinn.autodiff` (sin, cos, exp, tanh, +, *, ...) to
    a scalar-like result.
    """

    def __init__(self, fn, extent=math.inf, max_derivative_order=6):
        self.fn = fn
        self.extent = extent
        self.max_derivative_order = max_derivative_order

    def eval(self, points, alpha=(0, 0)):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        self.check_points(pts)
        self.check_order(alpha)
        # reuse the 3-coordinate lift with a dummy frozen time slot
        coords = ad.lift([0.0, pts[:, 0], pts[:, 1]], (0,) + tuple(alpha))
        out = self.fn(coords[1], coords[2])
        val = ad.extract(out, sum(alpha), like=pts[:, 0])
        val = np.asarray(val, dtype=float)
        return val if np.ndim(points) > 1 else float(val[0])
