import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from wphist.errors import DataError, InvalidParameterError, ShapeError
from wphist.inference import (
    BandResult,
    bfdr,
    bfdr_cutoff,
    draws_inside,
    joint_band,
    metrics,
    pointwise_band,
)
from wphist.sampler import PosteriorSamples


def brute_force_flags(p_cells, alpha):
    """Direct scan of every prefix size over the descending ranking."""
    cells = list(p_cells)
    ranked = sorted(cells, key=lambda c: -c[1])
    best = 0
    for r in range(1, len(ranked) + 1):
        total = 0.0
        for i in range(r):
            total += 1.0 - ranked[i][1]
        if total / r <= alpha:
            best = r
    if best == 0:
        return set()
    phi = ranked[best - 1][1]
    return {c for c, p in cells if p >= phi}


def draws_with_probs(probs, V, delta=0.5, M=100):
    """Draws on a V x V grid whose exceedance frequencies equal ``probs`` (multiples of 1/M)."""
    d = np.zeros((M, V, V))
    region = np.argwhere(np.triu(np.ones((V, V), bool)))
    for (v, t), p in zip(region, probs):
        d[: int(round(p * M)), v, t] = 2 * delta
    return d


def test_worked_cutoff_example():
    lam, phi = bfdr_cutoff([0.99, 0.97, 0.90, 0.60], 0.05)
    assert (lam, phi) == (3, 0.90)


def test_worked_example_on_grid():
    # V = 3 has six historical cells; pad with two zeros
    d = draws_with_probs([0.99, 0.97, 0.90, 0.60, 0.0, 0.0], 3)
    res = bfdr(d, 0.5, 0.05)
    assert res.lambda_rank == 3 and res.phi_alpha == 0.90
    assert res.flagged_cells == {(0, 0), (0, 1), (0, 2)}


def test_delta_above_all_draws():
    d = np.random.default_rng(0).normal(size=(50, 6, 6))
    res = bfdr(d, 100.0, 0.05)
    assert not res.p_b.any() and not res.flagged.any()
    assert res.phi_alpha == 1.0 and res.lambda_rank == 0


def test_all_certain_cells_flagged():
    d = np.full((20, 5, 5), 3.0)
    for alpha in (0.001, 0.5):
        res = bfdr(d, 0.5, alpha)
        assert res.flagged.sum() == 15
        assert not res.flagged[np.tril_indices(5, -1)].any()


def test_bfdr_rejects_bad_parameters():
    d = np.zeros((10, 4, 4))
    with pytest.raises(InvalidParameterError):
        bfdr(d, 0.0, 0.05)
    with pytest.raises(InvalidParameterError):
        bfdr(d, 0.5, 1.0)
    with pytest.raises(ShapeError):
        bfdr(np.zeros((10, 4, 5)), 0.5, 0.05)


def test_bfdr_matches_brute_force_random_instances():
    rng = np.random.default_rng(99)
    for _ in range(100):
        V = int(rng.integers(1, 14))
        region = np.argwhere(np.triu(np.ones((V, V), bool)))
        if len(region) > 100:
            continue
        M = int(rng.integers(1, 60))
        d = rng.normal(scale=rng.uniform(0.1, 2.0), size=(M, V, V)) + rng.normal(size=(V, V))
        alpha = float(rng.uniform(0.01, 0.5))
        res = bfdr(d, 0.5, alpha)
        p = [((int(v), int(t)), float(np.mean(np.abs(d[:, v, t]) > 0.5))) for v, t in region]
        assert res.flagged_cells == brute_force_flags(p, alpha)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 2.0), st.floats(0.0, 1.0), st.floats(0.01, 0.4), st.floats(0.0, 0.5))
def test_bfdr_monotone(seed, delta, bump, alpha, alpha_bump):
    d = np.random.default_rng(seed).normal(size=(40, 6, 6))
    lo, hi = bfdr(d, delta, alpha), bfdr(d, delta + bump, alpha)
    assert np.all(hi.p_b <= lo.p_b)
    wider = bfdr(d, delta, min(alpha + alpha_bump, 0.99))
    assert lo.flagged_cells <= wider.flagged_cells
    assert np.all((lo.p_b >= 0) & (lo.p_b <= 1))


def test_joint_band_two_valued_cell():
    d = np.array([0.0, 2.0] * 5).reshape(10, 1, 1)
    for alpha in (0.01, 0.3, 0.9):
        band = joint_band(d, alpha)
        assert band.lower[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert band.upper[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_joint_band_content_and_translation(rng):
    d = rng.normal(size=(200, 8, 8)) * rng.uniform(0.1, 3, size=(8, 8))
    for alpha in (0.05, 0.2):
        band = joint_band(d, alpha)
        assert draws_inside(d, band).mean() >= 1 - alpha
        assert np.all(band.lower <= band.upper)
        np.testing.assert_allclose(band.center, d.mean(0))
        shifted = joint_band(d + 3.25, alpha)
        np.testing.assert_allclose(shifted.lower, band.lower + 3.25, atol=1e-12)
        np.testing.assert_allclose(shifted.upper, band.upper + 3.25, atol=1e-12)


def test_joint_band_zero_sd_cells(rng):
    d = rng.normal(size=(50, 4, 4))
    d[:, 0, 3] = 1.5
    band = joint_band(d, 0.05)
    assert band.lower[0, 3] == band.upper[0, 3] == 1.5


def test_joint_band_errors():
    with pytest.raises(DataError):
        joint_band(np.ones((20, 3, 3)), 0.05)
    with pytest.raises(ShapeError):
        joint_band(np.zeros((5, 3, 3)), 0.05)


def test_pointwise_examples():
    d = np.array([-1.0, 1.0] * 5).reshape(10, 1, 1)
    band = pointwise_band(d, 0.5)
    assert (band.lower[0, 0], band.upper[0, 0]) == (-1.0, 1.0)
    const = pointwise_band(np.full((12, 2, 2), 0.7), 0.05)
    assert np.all(const.lower == 0.7) and np.all(const.upper == 0.7)


def test_pointwise_gaussian():
    rng = np.random.default_rng(8)
    d = rng.normal(loc=1.0, scale=2.0, size=(10000, 2, 2))
    band = pointwise_band(d, 0.05)
    z = stats.norm.ppf(0.975)
    # MC sd of an extreme-ish sample quantile is well under 0.08 here
    np.testing.assert_allclose(band.lower, 1 - z * 2, atol=0.15)
    np.testing.assert_allclose(band.upper, 1 + z * 2, atol=0.15)


def test_joint_wider_than_pointwise(rng):
    d = rng.normal(size=(500, 6, 6))
    j, p = joint_band(d, 0.05), pointwise_band(d, 0.05)
    region = np.triu(np.ones((6, 6), bool))
    assert np.all((j.upper - j.lower)[region] >= (p.upper - p.lower)[region])


def test_metrics_exact_truth(rng):
    truth = np.triu(rng.normal(size=(6, 6)))
    d = truth + rng.normal(scale=0.1, size=(40, 6, 6))
    d -= d.mean(0) - truth
    s = PosteriorSamples(d, np.zeros((2, 6)), {"energy_preserved": 0.5})
    m = metrics(s, truth, {"joint": joint_band(s, 0.05), "pointwise": pointwise_band(s, 0.05)})
    assert m["rmise"] == pytest.approx(0.0, abs=1e-12)
    assert m["joint_coverage"] == 1.0 and m["pointwise_coverage"] == 1.0
    assert m["energy_preserved"] == 0.5


def test_metrics_rmise_over_region():
    truth = np.zeros((4, 4))
    d = np.zeros((10, 4, 4))
    d[:, 0, 1] = 1.0  # in region
    d[:, 3, 0] = 100.0  # outside region, ignored
    m = metrics(d, truth)
    assert m["rmise"] == pytest.approx(np.sqrt(1 / 10))


def test_metrics_shape_error():
    with pytest.raises(ShapeError):
        metrics(np.zeros((10, 4, 4)), np.zeros((5, 5)))


def test_band_contains():
    b = BandResult(np.zeros((2, 2)), np.ones((2, 2)), "joint", 0.05)
    inside = b.contains(np.array([[0.5, 2.0], [9.0, 1.0]]))
    assert inside.tolist() == [[True, False], [True, True]]
