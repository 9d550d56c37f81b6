"""Low-rank spatial random effects via a Laplacian eigenbasis on a box.

The Gaussian process with a Matern-3/2 kernel is approximated by sine
eigenfunctions of the Laplacian on [-L_x, L_x] x [-L_y, L_y], weighted by the
square root of the kernel's spectral density at the eigenvalue frequencies.
The approximation is linear in the weights, which makes gradients trivial and
the density evaluation O(n * n_b^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class HsgpError(ValueError):
    pass


@dataclass(frozen=True)
class HsgpSpec:
    """Basis size and box for the spatial approximation."""

    n_b: int = 16
    boundary_factor: float = 2.5
    l_x: float = None
    l_y: float = None

    def __post_init__(self):
        if self.n_b < 1:
            raise HsgpError("need at least one basis function per dimension")
        if self.l_x is not None and (self.l_x <= 0 or self.l_y <= 0):
            raise HsgpError("box half-widths must be positive")

    def with_box_for(self, points: np.ndarray) -> "HsgpSpec":
        """Fix the box from the points: half-width = factor * max |coord|."""
        points = np.asarray(points, dtype=float)
        lx = self.boundary_factor * float(np.max(np.abs(points[:, 0])))
        ly = self.boundary_factor * float(np.max(np.abs(points[:, 1])))
        return HsgpSpec(self.n_b, self.boundary_factor, lx, ly)


def _eigenfunctions(coord: np.ndarray, half_width: float, n_b: int) -> np.ndarray:
    """phi_j(x) = sin(pi j (x + L) / (2L)) / sqrt(L) for j = 1..n_b."""
    j = np.arange(1, n_b + 1)
    return np.sin(np.pi * j[None, :] * (coord[:, None] + half_width) / (2 * half_width)) / np.sqrt(half_width)


def eigen_roots(half_width: float, n_b: int) -> np.ndarray:
    """sqrt(lambda_j) = pi j / (2L) for j = 1..n_b."""
    return np.pi * np.arange(1, n_b + 1) / (2 * half_width)


def hsgp_basis(points: np.ndarray, spec: HsgpSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tensor-product basis matrix and per-dimension frequency roots.

    Returns (phi, roots_x, roots_y) with phi of shape (n_points, n_b^2);
    column j * n_b + k corresponds to the (j+1, k+1) eigenfunction pair.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise HsgpError("points must be an (n, 2) array")
    if spec.l_x is None:
        spec = spec.with_box_for(points)
    if np.any(np.abs(points[:, 0]) >= spec.l_x) or np.any(np.abs(points[:, 1]) >= spec.l_y):
        raise HsgpError("boundary violated")
    phi_x = _eigenfunctions(points[:, 0], spec.l_x, spec.n_b)
    phi_y = _eigenfunctions(points[:, 1], spec.l_y, spec.n_b)
    phi = phi_x[:, :, None] * phi_y[:, None, :]
    return phi.reshape(len(points), spec.n_b ** 2), eigen_roots(spec.l_x, spec.n_b), eigen_roots(spec.l_y, spec.n_b)


def matern32_spectral_density(omega_sq: np.ndarray, sigma: float, delta: float) -> np.ndarray:
    """2-D Matern-3/2 spectral density at squared frequency norms."""
    return (
        sigma ** 2 * 6.0 * np.pi * 3.0 ** 1.5 * delta ** -3.0
        * (3.0 / delta ** 2 + omega_sq) ** -2.5
    )


def spectral_weights(roots_x: np.ndarray, roots_y: np.ndarray, sigma: float, delta: float) -> np.ndarray:
    """sqrt(S) at each (j, k) frequency pair, flattened to match the basis."""
    omega_sq = (roots_x[:, None] ** 2 + roots_y[None, :] ** 2).reshape(-1)
    return np.sqrt(matern32_spectral_density(omega_sq, sigma, delta))


def hsgp_effect(
    phi: np.ndarray,
    roots_x: np.ndarray,
    roots_y: np.ndarray,
    sigma: float,
    delta: float,
    z: np.ndarray,
) -> np.ndarray:
    """Spatial effect phi @ (sqrt(S) * z) for standard-normal weights z."""
    z = np.asarray(z, dtype=float)
    if z.shape != (phi.shape[1],):
        raise HsgpError(f"need {phi.shape[1]} basis weights, got {z.shape}")
    return phi @ (spectral_weights(roots_x, roots_y, sigma, delta) * z)


def matern32_kernel(points: np.ndarray, sigma: float, delta: float) -> np.ndarray:
    """Exact Matern-3/2 covariance matrix on the points."""
    points = np.asarray(points, dtype=float)
    diff = points[:, None, :] - points[None, :, :]
    r = np.sqrt(np.sum(diff ** 2, axis=-1))
    a = np.sqrt(3.0) * r / delta
    return sigma ** 2 * (1.0 + a) * np.exp(-a)


def approximate_kernel(phi: np.ndarray, roots_x: np.ndarray, roots_y: np.ndarray, sigma: float, delta: float) -> np.ndarray:
    """Covariance implied by the basis: phi diag(S) phi^T."""
    s = spectral_weights(roots_x, roots_y, sigma, delta) ** 2
    return (phi * s[None, :]) @ phi.T
