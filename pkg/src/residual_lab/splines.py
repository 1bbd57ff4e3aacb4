"""Uniform B-spline bases on a closed interval.

The knot vector is the uniform grid over the domain, extended past each end
by ``order`` extra knots at the same spacing (uniform extension, not the
clamped-open convention).  That yields ``grid_size + order`` basis functions
of degree ``order``, evaluated by the Cox-de Boor recursion.  With uniform
extension no knot interval degenerates, so the recursion needs no 0/0
special-casing, and on the domain itself the basis inherits the partition
of unity of the biinfinite uniform family.

The right domain endpoint belongs to the last interior interval (closed on
the right), so evaluation at the boundary is exact and derivatives there are
the interior one-sided values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SplineSpec:
    """Grid size (interval count), polynomial order, and evaluation domain."""

    grid_size: int = 5
    order: int = 3
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        if self.order < 0:
            raise ValueError("order must be >= 0")
        if not self.domain[0] < self.domain[1]:
            raise ValueError(f"degenerate domain {self.domain}")

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order


def knot_vector(spec: SplineSpec) -> np.ndarray:
    lo, hi = spec.domain
    h = (hi - lo) / spec.grid_size
    return lo + (np.arange(spec.grid_size + 2 * spec.order + 1) - spec.order) * h


def basis_and_derivative(spec: SplineSpec, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate all basis functions and their u-derivatives.

    ``u`` may have any shape but must already lie inside the domain (callers
    clamp first); returns two arrays of shape ``u.shape + (n_basis,)``.
    """
    G, k = spec.grid_size, spec.order
    T = knot_vector(spec)
    u = np.asarray(u, dtype=float)
    # One-hot on the interior interval containing u; the right boundary maps
    # into the last interior interval so the closed domain is covered.
    idx = np.clip(np.searchsorted(T, u, side="right") - 1, k, k + G - 1)
    B = (idx[..., None] == np.arange(G + 2 * k)).astype(float)
    B_prev = B
    for d in range(1, k + 1):
        m = B.shape[-1] - 1
        left = (u[..., None] - T[:m]) / (T[d : d + m] - T[:m]) * B[..., :-1]
        right = (T[d + 1 : d + 1 + m] - u[..., None]) / (T[d + 1 : d + 1 + m] - T[1 : 1 + m]) * B[..., 1:]
        B_prev = B
        B = left + right
    if k == 0:
        dB = np.zeros_like(B)
    else:
        # dN_{j,k} = k * (N_{j,k-1}/(T[j+k]-T[j]) - N_{j+1,k-1}/(T[j+k+1]-T[j+1]))
        n = G + k
        dB = k * (B_prev[..., :-1] / (T[k : k + n] - T[:n]) - B_prev[..., 1:] / (T[k + 1 :] - T[1 : n + 1]))
    return B, dB


def bspline_basis(u: float, spec: SplineSpec) -> np.ndarray:
    """Values of all ``grid_size + order`` basis functions at a scalar point.

    Non-finite input is rejected; out-of-domain input is clamped, mirroring
    how network layers feed the basis.
    """
    if not np.isfinite(u):
        raise ValueError(f"non-finite spline input {u}")
    uc = min(max(u, spec.domain[0]), spec.domain[1])
    B, _ = basis_and_derivative(spec, np.asarray(uc))
    return B


def fit_coefficients(spec: SplineSpec, fn, n_samples: int = 200) -> np.ndarray:
    """Least-squares coefficients reproducing ``fn`` on the domain.

    Exact (to roundoff) whenever fn is a polynomial of degree <= order.
    """
    u = np.linspace(spec.domain[0], spec.domain[1], n_samples)
    B, _ = basis_and_derivative(spec, u)
    coef, *_ = np.linalg.lstsq(B, fn(u), rcond=None)
    return coef
