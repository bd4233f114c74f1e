"""Exact periodic operators on [-pi, pi]^2 as Fourier multipliers.

Fields are sampled on the uniform N x N grid x_jk = (-pi + 2 pi j / N,
-pi + 2 pi k / N) with axis 0 <-> x1.  Wavenumbers follow the fft layout
n in {-N/2, ..., N/2 - 1}; the Nyquist row/column is zeroed for odd-order
derivative multipliers so real fields stay real.

These operators (Lambda^s, Riesz transform, gradients, Sobolev norms) are the
oracle the singular-integral machinery is verified against: for periodic
inputs the quadrature operators must coincide with them.
"""

from __future__ import annotations

import math

import numpy as np

from .boxfn import BoxFunction
from .errors import CapabilityError, InvertibilityError

TWO_PI = 2.0 * math.pi


class GridField:
    """Real scalar field on the uniform periodic N x N grid over T^2."""

    def __init__(self, values: np.ndarray, mean_zero: bool = False):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("values must be a square N x N array")
        if values.shape[0] % 2:
            raise ValueError("grid size N must be even")
        if mean_zero:
            scale = np.max(np.abs(values))
            if scale > 0 and abs(values.mean()) > 1e-12 * scale:
                raise ValueError("field flagged mean-zero has a nonzero mean")
        self.values = values
        self.values.setflags(write=False)
        self.n_grid = values.shape[0]
        self.mean_zero = mean_zero

    @property
    def spectrum(self) -> np.ndarray:
        """Raw fft2 of the samples (no phase correction), cached."""
        cached = getattr(self, "_spec", None)
        if cached is None:
            cached = np.fft.fft2(self.values)
            self._spec = cached
        return cached

    def __repr__(self):
        return f"GridField(N={self.n_grid}, mean_zero={self.mean_zero})"


def grid_coordinates(n: int) -> tuple[np.ndarray, np.ndarray]:
    x = -math.pi + TWO_PI * np.arange(n) / n
    return np.meshgrid(x, x, indexing="ij")


def from_function(fn, n: int, mean_zero: bool = False) -> GridField:
    x1, x2 = grid_coordinates(n)
    return GridField(fn(x1, x2), mean_zero=mean_zero)


def wavenumbers(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.fft.fftfreq(n, d=1.0 / n)
    return np.meshgrid(k, k, indexing="ij")


def _abs_n(n: int) -> np.ndarray:
    n1, n2 = wavenumbers(n)
    return np.hypot(n1, n2)


def _odd_derivative_mask(n: int) -> np.ndarray:
    """Zero weight on the unpaired Nyquist modes used by odd multipliers."""
    n1, n2 = wavenumbers(n)
    return ((n1 != -n // 2) & (n2 != -n // 2)).astype(float)


def _apply_multiplier(field: GridField, mult: np.ndarray) -> GridField:
    out = np.fft.ifft2(field.spectrum * mult).real
    return GridField(out)


def lambda_pow(field: GridField, s: float) -> GridField:
    """Fractional Laplacian power Lambda^s; the zero mode is annihilated."""
    n = field.n_grid
    absn = _abs_n(n)
    if s < 0:
        mean = abs(field.spectrum[0, 0]) / n**2
        scale = max(np.max(np.abs(field.values)), 1e-300)
        if mean > 1e-10 * scale:
            raise InvertibilityError(
                "negative Lambda power requires a mean-zero field")
    with np.errstate(divide="ignore"):
        mult = np.where(absn > 0, absn**s, 0.0)
    return _apply_multiplier(field, mult)


def derivative(field: GridField, alpha: tuple[int, int]) -> GridField:
    """Spatial derivative D^alpha by the (i n)^alpha multiplier."""
    n = field.n_grid
    n1, n2 = wavenumbers(n)
    mult = (1j * n1) ** alpha[0] * (1j * n2) ** alpha[1]
    if (alpha[0] + alpha[1]) % 2:
        mult = mult * _odd_derivative_mask(n)
    return _apply_multiplier(field, mult)


def gradient(field: GridField) -> tuple[GridField, GridField]:
    return derivative(field, (1, 0)), derivative(field, (0, 1))


def riesz(field: GridField) -> tuple[GridField, GridField]:
    """Riesz transform R = grad Lambda^{-1}, multiplier i n / |n|."""
    n = field.n_grid
    mean = abs(field.spectrum[0, 0]) / n**2
    scale = max(np.max(np.abs(field.values)), 1e-300)
    if mean > 1e-10 * scale:
        raise InvertibilityError("Riesz transform requires a mean-zero field")
    n1, n2 = wavenumbers(n)
    absn = np.hypot(n1, n2)
    with np.errstate(invalid="ignore", divide="ignore"):
        m1 = np.where(absn > 0, 1j * n1 / absn, 0.0)
        m2 = np.where(absn > 0, 1j * n2 / absn, 0.0)
    mask = _odd_derivative_mask(n)
    return _apply_multiplier(field, m1 * mask), _apply_multiplier(field, m2 * mask)


def riesz_perp(field: GridField) -> tuple[GridField, GridField]:
    """Rotated Riesz transform R_perp = (-R_2, R_1); divergence free."""
    r1, r2 = riesz(field)
    return GridField(-r2.values), r1


def sobolev_norm(field: GridField, s: float) -> float:
    """Inhomogeneous Sobolev norm ||f||_{H^s} via Parseval.

    Uses the Bessel weight (1 + |n|^2)^{s/2}; for s = 0 this is the L^2(T^2)
    norm with the full 4 pi^2 area factor.
    """
    n = field.n_grid
    coeffs = field.spectrum / n**2
    weight = (1.0 + _abs_n(n) ** 2) ** s
    return math.sqrt(4.0 * math.pi**2 * float(np.sum(weight * np.abs(coeffs) ** 2)))


def lambda_norm(field: GridField, s: float) -> float:
    """Homogeneous norm ||Lambda^s f||_{L^2} (zero mode dropped)."""
    n = field.n_grid
    coeffs = field.spectrum / n**2
    absn = _abs_n(n)
    with np.errstate(divide="ignore"):
        weight = np.where(absn > 0, absn ** (2.0 * s), 0.0)
    return math.sqrt(4.0 * math.pi**2 * float(np.sum(weight * np.abs(coeffs) ** 2)))


def l2_inner(f: GridField, g: GridField) -> float:
    """Grid quadrature of the L^2(T^2) inner product of two fields."""
    n = f.n_grid
    return float(np.sum(f.values * g.values)) * (TWO_PI / n) ** 2


def true_coefficients(field: GridField) -> np.ndarray:
    """Coefficients c_n of f(x) = sum c_n exp(i n . x) on the fft layout.

    The grid starts at x = -pi, so the raw fft picks up the phase
    (-1)^(n1 + n2) relative to the series coefficients.
    """
    n = field.n_grid
    n1, n2 = wavenumbers(n)
    return field.spectrum * ((-1.0) ** (n1 + n2)) / n**2


class TrigInterpolant(BoxFunction):
    """Exact trigonometric interpolant of a periodic grid field.

    Evaluation sums the full series (O(N^2) per point, done as two matrix
    products), so it is oracle grade: periodicity is exact by construction
    and derivatives differentiate the series termwise.
    """

    def __init__(self, field: GridField, extent: float = math.inf,
                 max_derivative_order: int = 6):
        self.field = field
        self.extent = extent
        self.max_derivative_order = max_derivative_order
        self._coeffs = true_coefficients(field)
        n = field.n_grid
        self._modes = np.fft.fftfreq(n, d=1.0 / n)
        self._nyquist = -(n // 2)

    def eval(self, points, alpha=(0, 0)):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        self.check_points(pts)
        self.check_order(alpha)
        c = self._coeffs
        m = self._modes
        fac1 = (1j * m) ** alpha[0]
        fac2 = (1j * m) ** alpha[1]
        if alpha[0] % 2:
            fac1 = fac1 * (m != self._nyquist)
        if alpha[1] % 2:
            fac2 = fac2 * (m != self._nyquist)
        weighted = c * fac1[:, None] * fac2[None, :]
        out = np.empty(pts.shape[0])
        step = 65536 // max(len(m), 1) * 64 or 1
        for i in range(0, pts.shape[0], step):
            blk = pts[i : i + step]
            e1 = np.exp(1j * np.outer(blk[:, 0], m))
            e2 = np.exp(1j * np.outer(blk[:, 1], m))
            out[i : i + step] = np.einsum("pn,nm,pm->p", e1, weighted, e2).real
        return out if np.ndim(points) > 1 else float(out[0])


def to_box_function(field: GridField, extent: float = math.inf,
                    interp_order: int = 6) -> TrigInterpolant:
    """Wrap a periodic grid field for evaluation anywhere on extent*T^2."""
    return TrigInterpolant(field, extent=extent, max_derivative_order=interp_order)
