import numpy as np
import pytest

from popuptake.hsgp import (
    HsgpError,
    HsgpSpec,
    approximate_kernel,
    eigen_roots,
    hsgp_basis,
    hsgp_effect,
    matern32_kernel,
    matern32_spectral_density,
)

from oracles import matern32_direct


def test_first_eigenfunction_at_origin():
    phi, _, _ = hsgp_basis(np.array([[0.0, 0.0]]), HsgpSpec(n_b=2, l_x=1.0, l_y=1.0))
    # column 0 pairs (j=1, k=1): sin(pi/2)^2 / sqrt(1*1) = 1
    assert phi[0, 0] == pytest.approx(1.0)


def test_second_eigenfunction_node_at_origin():
    phi, _, _ = hsgp_basis(np.array([[0.0, 0.5]]), HsgpSpec(n_b=2, l_x=1.0, l_y=1.0))
    # columns with j=2 in x vanish at x=0: sin(pi) = 0
    assert phi[0, 2] == pytest.approx(0.0, abs=1e-12)
    assert phi[0, 3] == pytest.approx(0.0, abs=1e-12)


def test_eigenvalue_roots():
    roots = eigen_roots(2.0, 3)
    assert roots == pytest.approx([np.pi / 4, np.pi / 2, 3 * np.pi / 4])


def test_spectral_density_at_zero_frequency():
    assert matern32_spectral_density(np.array([0.0]), 1.0, 1.0)[0] == pytest.approx(2 * np.pi)
    # scales as sigma^2 * delta^2 at the origin
    assert matern32_spectral_density(np.array([0.0]), 2.0, 3.0)[0] == pytest.approx(8 * np.pi * 9)


def test_zero_weights_zero_effect():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(20, 2))
    phi, rx, ry = hsgp_basis(pts, HsgpSpec(n_b=4, l_x=2.5, l_y=2.5))
    effect = hsgp_effect(phi, rx, ry, sigma=0.5, delta=1.0, z=np.zeros(16))
    assert np.all(effect == 0.0)


def test_sign_flip_symmetry():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, size=(15, 2))
    phi, rx, ry = hsgp_basis(pts, HsgpSpec(n_b=3, l_x=2.0, l_y=2.0))
    z = rng.standard_normal(9)
    base = hsgp_effect(phi, rx, ry, 0.7, 0.9, z)
    flipped = hsgp_effect(-phi, rx, ry, 0.7, 0.9, -z)
    assert flipped == pytest.approx(base)


def test_boundary_violation():
    spec = HsgpSpec(n_b=2, l_x=1.0, l_y=1.0)
    with pytest.raises(HsgpError, match="boundary violated"):
        hsgp_basis(np.array([[1.5, 0.0]]), spec)


def test_box_from_points():
    pts = np.array([[1.0, -0.5], [-2.0, 0.25]])
    spec = HsgpSpec(n_b=4).with_box_for(pts)
    assert spec.l_x == pytest.approx(5.0)  # 2.5 * max |x|
    assert spec.l_y == pytest.approx(1.25)


def test_weight_count_validated():
    pts = np.zeros((3, 2))
    phi, rx, ry = hsgp_basis(pts, HsgpSpec(n_b=2, l_x=1.0, l_y=1.0))
    with pytest.raises(HsgpError, match="basis weights"):
        hsgp_effect(phi, rx, ry, 1.0, 1.0, np.zeros(7))


def test_exact_kernel_matches_oracle():
    rng = np.random.default_rng(2)
    pts = rng.uniform(-1, 1, size=(10, 2))
    k = matern32_kernel(pts, sigma=0.8, delta=0.6)
    for i in range(10):
        for j in range(10):
            assert k[i, j] == pytest.approx(
                matern32_direct(pts[i], pts[j], 0.8, 0.6), abs=1e-12
            )


@pytest.mark.parametrize("delta", [0.5, 0.75, 1.0, 1.25, 1.5])
def test_covariance_fidelity(delta):
    # unit-variance point cloud, matching the standardized coordinates the
    # model feeds in; the box inflation then leaves everything interior
    rng = np.random.default_rng(33)
    pts = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(50, 2))
    spec = HsgpSpec(n_b=16).with_box_for(pts)
    phi, rx, ry = hsgp_basis(pts, spec)
    approx = approximate_kernel(phi, rx, ry, sigma=1.0, delta=delta)
    exact = matern32_kernel(pts, sigma=1.0, delta=delta)
    rel = np.linalg.norm(approx - exact) / np.linalg.norm(exact)
    assert rel < 0.10
