import numpy as np
import pytest
from scipy.stats import spearmanr

from nlidguard.lid import (LID_MAX, LidError, NeighborTable, knn, lid_mle, nlid, nlid_minibatch,
                           nlid_scores)


def ball_on_subspace(n, m, dim, seed):
    """Uniform points in an m-dim unit ball placed in the first m of ``dim`` coordinates."""
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(n, m))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    pts = np.zeros((n, dim))
    pts[:, :m] = g * rng.uniform(size=(n, 1)) ** (1.0 / m)
    return pts


def displaced_cluster(seed, n=1000, dim=20, m=4, frac=0.1, offset_sd=0.1):
    """Points on a 4-dim subspace with a tenth pushed off it; returns points and the displaced mask."""
    rng = np.random.default_rng(seed)
    pts = np.zeros((n, dim))
    pts[:, :m] = rng.uniform(size=(n, m))
    moved = rng.choice(n, int(frac * n), replace=False)
    pts[moved, m:] += rng.normal(scale=offset_sd, size=(moved.size, dim - m))
    mask = np.zeros(n, dtype=bool)
    mask[moved] = True
    return pts, mask


def test_knn_collinear():
    table = knn(np.array([[0.0], [1.0], [3.0]]), 1)
    np.testing.assert_array_equal(table.indices[:, 0], [1, 0, 1])
    np.testing.assert_array_equal(table.distances[:, 0], [1, 1, 2])


def test_knn_full_neighborhood():
    table = knn(np.random.default_rng(0).normal(size=(7, 2)), 6)
    for i, row in enumerate(table.indices):
        assert sorted(row) == [j for j in range(7) if j != i]


def test_knn_matches_brute_force():
    pts = np.random.default_rng(1).uniform(size=(100, 10))
    table = knn(pts, 15)
    for i in range(100):
        dists = [(float(np.sqrt(np.sum((pts[i] - pts[j]) ** 2))), j) for j in range(100) if j != i]
        dists.sort()
        assert [j for _, j in dists[:15]] == list(table.indices[i])
        np.testing.assert_allclose(table.distances[i], [d for d, _ in dists[:15]], rtol=1e-12)


def test_knn_ties_prefer_lower_index():
    table = knn(np.array([[0.0], [-1.0], [1.0]]), 1)
    assert table.indices[0, 0] == 1


@pytest.mark.parametrize("k", [0, 3])
def test_knn_k_out_of_range(k):
    with pytest.raises(LidError):
        knn(np.zeros((3, 1)), k)


def test_lid_closed_form():
    table = NeighborTable(2, np.array([[1, 2]]), np.array([[np.exp(-1.0), 1.0]]))
    assert lid_mle(table)[0] == pytest.approx(2.0, rel=1e-12)


def test_lid_equal_distances_clamped():
    table = NeighborTable(3, np.array([[1, 2, 3]]), np.full((1, 3), 0.7))
    assert lid_mle(table)[0] == LID_MAX


def test_lid_duplicates_stay_finite():
    pts = np.array([[0.0], [0.0], [1.0], [2.0], [4.0]])
    lid = lid_mle(knn(pts, 3))
    assert np.all(np.isfinite(lid)) and np.all(lid > 0)


def test_lid_subspace_dimension():
    pts = ball_on_subspace(2000, 8, 100, 0)
    median = np.median(lid_mle(knn(pts, 100)))
    assert 5.6 <= median <= 10.4


@pytest.mark.parametrize("m", [2, 5])
def test_lid_affine_subspace_cube(m):
    rng = np.random.default_rng(m)
    basis = np.linalg.qr(rng.normal(size=(30, m)))[0]
    pts = rng.uniform(size=(1500, m)) @ basis.T + rng.normal(size=30)
    median = np.median(lid_mle(knn(pts, 50)))
    assert 0.7 * m <= median <= 1.3 * m


def test_lid_scale_invariant():
    pts = np.random.default_rng(2).uniform(size=(200, 5))
    np.testing.assert_allclose(lid_mle(knn(pts * 37.5, 10)), lid_mle(knn(pts, 10)), rtol=1e-10)


def test_nlid_permutation_invariant():
    pts = np.random.default_rng(3).uniform(size=(150, 4))
    perm = np.random.default_rng(4).permutation(150)
    base = nlid_scores(pts, 10).nlid
    np.testing.assert_allclose(nlid_scores(pts[perm], 10).nlid, base[perm], rtol=1e-12)


def test_nlid_equal_lid_gives_one():
    table = knn(np.random.default_rng(5).uniform(size=(20, 2)), 4)
    np.testing.assert_array_equal(nlid(np.full(20, 3.0), table).nlid, np.ones(20))


def test_nlid_direct_ratio():
    table = NeighborTable(2, np.array([[1, 2], [0, 2], [0, 1]]), np.ones((3, 2)))
    assert nlid(np.array([1.5, 3.0, 3.0]), table).nlid[0] == pytest.approx(2.0)


def test_nlid_length_mismatch():
    table = knn(np.random.default_rng(6).uniform(size=(10, 2)), 3)
    with pytest.raises(LidError):
        nlid(np.ones(9), table)


def test_nlid_separates_displaced_points():
    for seed in range(10):
        pts, mask = displaced_cluster(seed)
        scores = nlid_scores(pts, 20).nlid
        assert abs(scores[mask].mean() - scores[~mask].mean()) >= 0.5


def test_minibatch_full_batch_identical():
    pts = np.random.default_rng(7).uniform(size=(120, 3))
    full, mb = nlid_scores(pts, 10), nlid_minibatch(pts, 10, 120, 0)
    np.testing.assert_array_equal(mb.nlid, full.nlid)
    np.testing.assert_array_equal(mb.lid, full.lid)


def test_minibatch_agreement_grows_with_batch():
    pts, _ = displaced_cluster(0)
    full = nlid_scores(pts, 20).nlid
    rho = [spearmanr(full, nlid_minibatch(pts, 20, b, 0).nlid).correlation for b in (125, 250, 500, 1000)]
    assert rho == sorted(rho) and rho[-1] == pytest.approx(1.0)


@pytest.mark.xfail(strict=True, reason="half-batch rank agreement is about 0.6 at k=20; see decisions ledger")
def test_minibatch_half_batch_spearman():
    pts, _ = displaced_cluster(0)
    full = nlid_scores(pts, 20).nlid
    for seed in range(5):
        assert spearmanr(full, nlid_minibatch(pts, 20, 500, seed).nlid).correlation >= 0.8


def test_minibatch_batch_too_small():
    with pytest.raises(LidError):
        nlid_minibatch(np.zeros((50, 2)), 10, 10, 0)


def test_minibatch_small_tail_merged():
    pts = np.random.default_rng(8).uniform(size=(105, 2))
    scores = nlid_minibatch(pts, 10, 50, 0)
    assert np.all(np.isfinite(scores.nlid))
