import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from couq.errors import DimensionError, EmptyModelError, FitError
from couq.subspace import ClassSubspace, fit_subspace, fre, fre_batch, min_fre, min_fre_batch


def eig_projector_fre(vectors: np.ndarray, variance_retained: float, u: np.ndarray) -> float:
    """Brute-force oracle: dense eigendecomposition of the scatter matrix,
    projector built explicitly, residual norm computed directly."""
    x = np.asarray(vectors, dtype=np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    scatter = centered.T @ centered
    evals, evecs = np.linalg.eigh(scatter)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    total = evals.sum()
    q_max = min(x.shape[0] - 1, x.shape[1])
    if total <= 0:
        q = 1
        proj = np.zeros((x.shape[1], x.shape[1]))
        proj[0, 0] = 1.0
    else:
        cum = np.cumsum(evals[:q_max])
        reached = np.nonzero(cum >= variance_retained * total - 1e-12)[0]
        q = int(reached[0]) + 1 if len(reached) else q_max
        basis = evecs[:, :q]
        proj = basis @ basis.T
    centered_u = np.asarray(u, dtype=np.float64) - mean
    return float(np.linalg.norm(centered_u - proj @ centered_u))


def test_two_point_pca_by_hand():
    sub = fit_subspace(np.asarray([[1.0, 0.0], [-1.0, 0.0]]), 0.99)
    assert np.allclose(sub.mean, [0.0, 0.0])
    assert sub.q == 1
    assert np.allclose(np.abs(sub.basis), [[1.0, 0.0]], atol=1e-7)
    # Sign convention: the largest-magnitude entry is positive.
    assert sub.basis[0, 0] > 0


def test_degenerate_identical_vectors():
    sub = fit_subspace(np.zeros((2, 2)), 0.99)
    assert sub.degenerate
    assert sub.q == 1
    assert fre(sub, np.zeros(2)) == 0.0


def test_full_variance_forces_full_rank():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(200, 8))
    sub = fit_subspace(x, 1.0)
    assert sub.q == 8
    # Cross-check against the dense oracle on a probe vector.
    probe = rng.normal(size=8)
    assert fre(sub, probe) == pytest.approx(eig_projector_fre(x, 1.0, probe), abs=1e-6)


def test_fre_hand_geometry():
    sub = fit_subspace(np.asarray([[1.0, 0.0], [-1.0, 0.0]]), 0.99)
    assert fre(sub, np.asarray([0.0, 2.0])) == pytest.approx(2.0, abs=1e-6)
    assert fre(sub, np.asarray([3.0, 0.0])) == pytest.approx(0.0, abs=1e-6)
    assert fre(sub, sub.mean.astype(np.float64)) == 0.0


def test_fre_dimension_mismatch():
    sub = fit_subspace(np.asarray([[1.0, 0.0], [-1.0, 0.0]]), 0.99)
    with pytest.raises(DimensionError):
        fre(sub, np.zeros(3))


def test_fit_too_few_vectors():
    with pytest.raises(FitError):
        fit_subspace(np.zeros((1, 3)), 0.9)


def test_min_fre_tie_breaks_to_smallest_class():
    a = fit_subspace(np.asarray([[1.0, 0.0], [-1.0, 0.0]]), 0.99, class_id=5)
    b = fit_subspace(np.asarray([[1.0, 0.0], [-1.0, 0.0]]), 0.99, class_id=2)
    score, cls = min_fre([a, b], np.asarray([0.0, 1.0]))
    assert score == pytest.approx(1.0, abs=1e-6)
    assert cls == 2


def test_min_fre_empty_model():
    with pytest.raises(EmptyModelError):
        min_fre([], np.zeros(2))


def test_min_fre_matches_bruteforce_loop():
    rng = np.random.default_rng(17)
    subs = [
        fit_subspace(rng.normal(size=(20, 6)) + rng.normal(size=6) * 3, 0.9, class_id=c)
        for c in range(10)
    ]
    for _ in range(50):
        u = rng.normal(size=6) * 4
        expect = min((fre(s, u), s.class_id) for s in subs)
        got = min_fre(subs, u)
        assert got == pytest.approx(expect)
    pool = rng.normal(size=(40, 6)) * 4
    scores, classes = min_fre_batch(subs, pool)
    for i in range(40):
        es, ec = min_fre(subs, pool[i])
        assert scores[i] == pytest.approx(es)
        assert classes[i] == ec


def test_fre_oracle_equivalence_random_instances():
    # 100 random (subspace, vector) pairs with n <= 50, D <= 10 against the
    # dense eigendecomposition oracle, 1e-4 relative.
    rng = np.random.default_rng(99)
    for trial in range(100):
        n = int(rng.integers(3, 51))
        d = int(rng.integers(2, 11))
        v = float(rng.uniform(0.5, 1.0))
        x = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0) + rng.normal(size=d)
        u = rng.normal(size=d) * 3
        sub = fit_subspace(x, v)
        expect = eig_projector_fre(x, v, u)
        got = fre(sub, u)
        assert got == pytest.approx(expect, rel=1e-4, abs=1e-6), f"trial {trial}"


def test_orthonormal_basis_rows():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=(30, 7)) * rng.uniform(0.2, 5.0)
        sub = fit_subspace(x, 0.9)
        gram = sub.basis.astype(np.float64) @ sub.basis.astype(np.float64).T
        assert np.abs(gram - np.eye(sub.q)).max() < 1e-5


def test_projection_contraction_and_pythagoras():
    rng = np.random.default_rng(21)
    x = rng.normal(size=(40, 9))
    sub = fit_subspace(x, 0.8)
    basis = sub.basis.astype(np.float64)
    for _ in range(200):
        u = rng.normal(size=9) * rng.uniform(0.1, 10)
        centered = u - sub.mean.astype(np.float64)
        r = fre(sub, u)
        assert 0.0 <= r <= np.linalg.norm(centered) + 1e-12
        proj = np.linalg.norm(basis @ centered)
        lhs = r**2 + proj**2
        rhs = np.linalg.norm(centered) ** 2
        assert lhs == pytest.approx(rhs, rel=1e-4)


def test_fit_sample_residual_mass_bound():
    rng = np.random.default_rng(8)
    for v in (0.6, 0.8, 0.95, 0.995):
        x = rng.normal(size=(60, 12)) * rng.uniform(0.5, 2.0, size=12)
        sub = fit_subspace(x, v)
        residuals = fre_batch(sub, x)
        total_variance = ((x - x.mean(axis=0)) ** 2).sum(axis=1).mean()
        assert (residuals**2).mean() <= (1 - v) * total_variance + 1e-6


def test_determinism_bit_identical():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(25, 5))
    a = fit_subspace(x, 0.9)
    b = fit_subspace(x, 0.9)
    assert np.array_equal(a.basis, b.basis)
    assert np.array_equal(a.mean, b.mean)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fre_scale_equivariance(seed):
    # Scaling all inputs by c > 0 scales the score by c.
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 4))
    u = rng.normal(size=4)
    c = float(rng.uniform(0.5, 4.0))
    a = fit_subspace(x, 0.9)
    b = fit_subspace(c * x, 0.9)
    assert fre(b, c * u) == pytest.approx(c * fre(a, u), rel=1e-5, abs=1e-8)
