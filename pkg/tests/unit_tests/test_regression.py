import numpy as np
import pytest

from ccrtrack.exceptions import NotPositiveSemidefiniteError, RankDeficientError, ShapeError
from ccrtrack.regression import (
    FunctionalTrainingSet,
    LinearRegressor,
    PerturbationStats,
    expected_loss,
    expected_loss_gradient,
    predict,
    resolve_ridge,
    solve_sampled,
    train_continuous,
    train_continuous_expanded,
    train_continuous_legacy,
    train_sampled,
    uniform_equivalent_stats,
)

from .shared_data import random_functional_set, random_psd, random_stats


def relative_error(estimate, reference):
    return np.linalg.norm(estimate - reference) / np.linalg.norm(reference)


@pytest.mark.lite
def test_compact_and_expanded_forms_agree():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d, m = rng.integers(5, 20), rng.integers(2, 8)
        training_set = random_functional_set(rng, 40, d, m)
        stats = random_stats(rng, m)
        compact, _ = train_continuous(training_set, stats)
        expanded = train_continuous_expanded(training_set, stats)
        assert relative_error(expanded.matrix, compact.matrix) < 1e-10


@pytest.mark.lite
def test_uniform_data_term_reduces_to_legacy_regression():
    rng = np.random.default_rng(1)
    k = 6
    training_set = random_functional_set(rng, 30, 12, 4 + k)
    flexible = training_set.restrict(range(4, 4 + k))
    r = rng.uniform(0.5, 2.0, k)
    eigenvalues = np.sort(rng.uniform(1.0, 50.0, k))[::-1]

    general, _ = train_continuous(flexible, uniform_equivalent_stats(r, eigenvalues), ridge=1e-3)
    legacy = train_continuous_legacy(flexible, r, eigenvalues, ridge=1e-3)
    assert relative_error(legacy.matrix, general.matrix) < 1e-12


@pytest.mark.lite
def test_continuous_solution_is_a_stationary_point_of_the_expected_loss():
    rng = np.random.default_rng(2)
    training_set = random_functional_set(rng, 25, 10, 5)
    stats = random_stats(rng, 5)
    regressor, state = train_continuous(training_set, stats)
    gradient = expected_loss_gradient(regressor, training_set, stats, state.ridge)
    scale = np.linalg.norm(expected_loss_gradient(LinearRegressor(np.zeros_like(regressor.matrix)), training_set, stats))
    assert np.linalg.norm(gradient) < 1e-9 * scale

    best = expected_loss(regressor, training_set, stats, state.ridge)
    for _ in range(5):
        moved = LinearRegressor(regressor.matrix + 1e-3 * rng.standard_normal(regressor.matrix.shape))
        assert expected_loss(moved, training_set, stats, state.ridge) > best


@pytest.mark.lite
def test_expected_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    training_set = random_functional_set(rng, 6, 7, 3)
    stats = random_stats(rng, 3)
    regressor = LinearRegressor(rng.standard_normal((3, 8)))
    analytic = expected_loss_gradient(regressor, training_set, stats, ridge=0.5)
    step = 1e-4
    for row, column in [(0, 0), (1, 3), (2, 7), (0, 5)]:
        plus, minus = regressor.matrix.copy(), regressor.matrix.copy()
        plus[row, column] += step
        minus[row, column] -= step
        numeric = (
            expected_loss(LinearRegressor(plus), training_set, stats, 0.5)
            - expected_loss(LinearRegressor(minus), training_set, stats, 0.5)
        ) / (2 * step)
        assert numeric == pytest.approx(analytic[row, column], rel=1e-6, abs=1e-6)


@pytest.mark.lite
def test_expected_loss_matches_monte_carlo():
    """ Tr(Q Sigma) + mu^T Q mu style closed forms against sampled averages. """
    rng = np.random.default_rng(4)
    samples = 20000
    for _ in range(10):
        training_set = random_functional_set(rng, 2, 5, 3)
        stats = random_stats(rng, 3)
        regressor = LinearRegressor(0.3 * rng.standard_normal((3, 6)))
        offsets = stats.sample(rng, samples)
        losses = np.zeros(samples)
        for block in training_set.blocks:
            x, jac = block[:, 0], block[:, 1:]
            residuals = offsets - (x + offsets @ jac.T) @ regressor.matrix.T
            losses += np.sum(residuals ** 2, axis=1)
        standard_error = losses.std(ddof=1) / np.sqrt(samples)
        assert abs(losses.mean() - expected_loss(regressor, training_set, stats)) < 4 * standard_error


def _well_specified_blocks(rng, count, d, m, noise):
    """ Blocks for which one regressor nearly inverts every image, so the
        sampled estimate converges at the plain Monte-Carlo rate. """
    exact = rng.standard_normal((m, d)) / np.sqrt(d)
    pseudo_inverse = np.linalg.pinv(exact)
    blocks = []
    for _ in range(count):
        jac = rng.standard_normal((d, m))
        jac -= pseudo_inverse @ (exact @ jac - np.eye(m))
        x = rng.standard_normal(d)
        x -= pseudo_inverse @ (exact @ x)
        block = np.column_stack([x, jac]) + noise * rng.standard_normal((d, m + 1))
        blocks.append(block)
    return FunctionalTrainingSet.from_blocks(blocks)


@pytest.mark.slow
def test_sampled_regression_converges_to_the_continuous_solution():
    rng = np.random.default_rng(5)
    count, d, m, ridge = 20, 60, 8, 1e-3
    training_set = _well_specified_blocks(rng, count, d, m, noise=0.05)
    stats = PerturbationStats(0.1 * rng.standard_normal(m), random_psd(rng, m, 0.5))
    closed_form, _ = train_continuous(training_set, stats, ridge=ridge)

    total = 200_000
    offsets = stats.sample(rng, total)
    features = np.empty((total, d))
    for index, block in enumerate(training_set.blocks):
        rows = slice(index, total, count)
        features[rows] = block[:, 0] + offsets[rows] @ block[:, 1:].T

    sizes = [12_500, 50_000, 200_000]
    errors = []
    for size in sizes:
        sampled = train_sampled(features[:size].T, offsets[:size].T, ridge * size / count)
        errors.append(relative_error(sampled.matrix, closed_form.matrix))

    assert errors[-1] < 2e-2
    assert errors[0] > errors[1] > errors[2]
    exponent, _ = np.polyfit(np.log(sizes), np.log(errors), 1)
    assert -0.65 <= exponent <= -0.35


@pytest.mark.lite
def test_sampled_regression_with_one_feature_is_the_rank_one_formula():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((1, 40))
    y = rng.standard_normal((3, 40))
    expected = y @ x.T / float(x @ x.T)
    assert np.allclose(train_sampled(x, y).matrix, expected)
    regressor, state = solve_sampled(x, y)
    assert np.allclose(regressor.matrix, expected)
    assert state.v[0, 0] == pytest.approx(1.0 / float(x @ x.T))


@pytest.mark.lite
def test_sampled_regression_matches_least_squares():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((6, 50))
    y = rng.standard_normal((2, 50))
    reference = np.linalg.lstsq(x.T, y.T, rcond=None)[0].T
    assert np.allclose(train_sampled(x, y).matrix, reference)
    assert np.allclose(solve_sampled(x, y)[0].matrix, reference)


@pytest.mark.lite
def test_rank_deficient_features_need_a_ridge():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((5, 3))
    y = rng.standard_normal((2, 3))
    with pytest.raises(RankDeficientError, match="rank deficient; set ridge > 0"):
        train_sampled(x, y)
    with pytest.raises(RankDeficientError, match="rank deficient; set ridge > 0"):
        solve_sampled(x, y)
    assert np.all(np.isfinite(train_sampled(x, y, ridge=1e-2).matrix))

    blocks = np.array(random_functional_set(rng, 5, 8, 2).blocks)
    blocks[:, 3, :] = 0.0
    with pytest.raises(RankDeficientError):
        train_continuous(FunctionalTrainingSet.from_blocks(blocks), random_stats(rng, 2), ridge=0.0)


@pytest.mark.lite
def test_default_ridge_scales_with_the_normal_matrix():
    normal = np.diag([2.0, 4.0, 6.0])
    assert resolve_ridge(None, normal) == pytest.approx(1e-3 * 12.0 / 3)
    assert resolve_ridge(0.5, normal) == 0.5
    with pytest.raises(ValueError):
        resolve_ridge(-1.0, normal)

    rng = np.random.default_rng(9)
    training_set = random_functional_set(rng, 10, 6, 3)
    stats = random_stats(rng, 3)
    _, state = train_continuous(training_set, stats)
    normal = training_set.moment_matrix(stats.moment_matrix())
    assert state.ridge == pytest.approx(1e-3 * np.trace(normal) / normal.shape[0])


@pytest.mark.lite
def test_functional_set_moment_matrix_and_views():
    rng = np.random.default_rng(10)
    training_set = random_functional_set(rng, 4, 5, 3)
    stats = random_stats(rng, 3)
    moments = stats.moment_matrix()
    explicit = sum(block @ moments @ block.T for block in training_set.blocks)
    assert np.allclose(training_set.moment_matrix(moments), explicit)

    restricted = training_set.restrict([0, 2])
    assert restricted.blocks.shape == (4, 6, 3)
    assert np.allclose(restricted.blocks[:, :, 2], training_set.blocks[:, :, 3])

    block = rng.standard_normal((6, 4))
    grown = training_set.append(block)
    assert grown.count == 5 and training_set.count == 4
    assert np.allclose(grown.sum_d, training_set.sum_d + block)
    with pytest.raises(ShapeError):
        training_set.append(np.zeros((6, 5)))


@pytest.mark.lite
def test_moment_matrices():
    stats = PerturbationStats(np.array([1.0, -2.0]), np.array([[2.0, 0.5], [0.5, 1.0]]))
    assert np.allclose(stats.second_moment(), [[3.0, -1.5], [-1.5, 5.0]])
    assert np.allclose(stats.cross_moments(), [[1.0, 3.0, -1.5], [-2.0, -1.5, 5.0]])
    assert np.allclose(stats.moment_matrix(), [[1.0, 1.0, -2.0], [1.0, 3.0, -1.5], [-2.0, -1.5, 5.0]])
    assert np.allclose(stats.restrict([1]).covariance, [[1.0]])


@pytest.mark.lite
def test_statistics_must_be_symmetric_positive_semidefinite():
    with pytest.raises(NotPositiveSemidefiniteError):
        PerturbationStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(NotPositiveSemidefiniteError):
        PerturbationStats(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ShapeError):
        PerturbationStats(np.zeros(3), np.eye(2))


@pytest.mark.lite
def test_normal_fit_with_shrinkage():
    rng = np.random.default_rng(11)
    samples = rng.multivariate_normal([1.0, 2.0], [[1.0, 0.8], [0.8, 1.0]], size=400)
    raw = PerturbationStats.from_samples(samples, shrinkage=0.0)
    assert np.allclose(raw.covariance, np.cov(samples.T))
    shrunk = PerturbationStats.from_samples(samples)
    assert shrunk.covariance[0, 1] == pytest.approx(0.95 * raw.covariance[0, 1])
    assert shrunk.covariance[0, 0] == pytest.approx(raw.covariance[0, 0])


@pytest.mark.lite
def test_zero_data_term_gives_a_zero_regressor():
    rng = np.random.default_rng(12)
    training_set = random_functional_set(rng, 10, 6, 3)
    regressor, _ = train_continuous(training_set, PerturbationStats.zeros(3))
    assert np.allclose(regressor.matrix, 0.0)
    with pytest.raises(ShapeError):
        predict(regressor, np.ones(3))
