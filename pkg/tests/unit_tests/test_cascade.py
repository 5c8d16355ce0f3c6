import numpy as np
import pytest

from ccrtrack.cascade import CascadeModel, Method, fit, retrain_ccr, train_ccr, train_sdm
from ccrtrack.exceptions import DegenerateStatisticsError, FitError, ShapeError
from ccrtrack.features import count_extractions
from ccrtrack.pdm import RigidParams, ShapeParams, compose
from ccrtrack.regression import CrSolverState, PerturbationStats, SampledSolverState

from .shared_data import analytic_scene, blob_sequences, centred_params, pixel_patch_scene, small_pdm, training_frames

IMAGES = 8
RIDGE = 1e-2


def init_stats(pdm, translation=3.0, similarity=0.02, flexible=0.3):
    variances = np.concatenate([
        [similarity ** 2, similarity ** 2, translation ** 2, translation ** 2],
        flexible * pdm.eigenvalues,
    ])
    return PerturbationStats(np.zeros(pdm.n_params), np.diag(variances))


def analytic_training_data(seed=0):
    """ Analytic features ignore the image, so every copy shares one ground truth. """
    pdm, extractor, image = analytic_scene()
    truth = [centred_params(pdm, np.random.default_rng(seed))] * IMAGES
    return pdm, extractor, [image] * IMAGES, truth


def landmark_error(pdm, params, truth):
    return float(np.mean(np.linalg.norm(compose(pdm, params).points - compose(pdm, truth).points, axis=1)))


@pytest.mark.lite
def test_ccr_on_affine_features_recovers_the_ground_truth():
    pdm, extractor, images, truth = analytic_training_data()
    stats = init_stats(pdm)
    model = train_ccr(images, truth, pdm, extractor, None, stats, n_levels=2, ridge=RIDGE)
    assert model.method is Method.CCR
    assert model.n_levels == 2
    assert isinstance(model.levels[0].solver_state, CrSolverState)
    assert len(model.training_errors) == 3
    assert model.training_errors[1].parameter_norm < 0.2 * model.training_errors[0].parameter_norm

    rng = np.random.default_rng(1)
    ratios = []
    target = truth[0]
    for _ in range(5):
        start = ShapeParams.from_vector(target.to_vector() + stats.sample(rng, 1)[0])
        estimate = fit(model, images[0], start)
        ratios.append(landmark_error(pdm, estimate, target) / landmark_error(pdm, start, target))
    assert np.mean(ratios) < 0.2


@pytest.mark.lite
def test_sdm_on_affine_features_reduces_the_training_error():
    pdm, extractor, images, truth = analytic_training_data()
    model = train_sdm(images, truth, pdm, extractor, None, init_stats(pdm), n_perturbations=5, n_levels=2, ridge=RIDGE)
    assert model.method is Method.SDM
    assert isinstance(model.levels[0].solver_state, SampledSolverState)
    assert model.functional_set is None
    errors = model.training_errors
    assert len(errors) == 3
    assert errors[1].parameter_norm < 0.5 * errors[0].parameter_norm
    assert errors[1].landmark_error < errors[0].landmark_error
    assert model.levels[1].stats.covariance.trace() < model.levels[0].stats.covariance.trace()


@pytest.mark.lite
def test_ccr_on_rendered_frames_reduces_the_training_error():
    sequences = blob_sequences(2, length=10)
    pdm = small_pdm()
    extractor, pca = pixel_patch_scene(sequences)
    images, truth = training_frames(sequences)
    stats = init_stats(pdm, translation=2.0, similarity=0.01, flexible=0.1)
    model = train_ccr(images, truth, pdm, extractor, pca, stats, n_levels=2)
    errors = model.training_errors
    assert errors[1].parameter_norm < errors[0].parameter_norm
    assert errors[1].landmark_error < errors[0].landmark_error
    assert model.levels[0].regressor.feature_dim == pca.d + 1


@pytest.mark.lite
def test_fit_runs_exactly_one_pass_per_level():
    pdm, extractor, images, truth = analytic_training_data()
    model = train_ccr(images, truth, pdm, extractor, None, init_stats(pdm), n_levels=3, ridge=RIDGE)
    with count_extractions() as count:
        fit(model, images[0], truth[0])
    assert count.passes == 3


@pytest.mark.lite
def test_fit_leaving_the_frame_raises_with_the_last_estimate():
    pdm, extractor, images, truth = analytic_training_data()
    model = train_ccr(images, truth, pdm, extractor, None, init_stats(pdm), n_levels=2, ridge=RIDGE)
    lost = ShapeParams(RigidParams(1.0, 0.0, -5000.0, -5000.0), np.zeros(pdm.n_modes))
    with pytest.raises(FitError) as error:
        fit(model, images[0], lost)
    assert error.value.level == 0
    assert error.value.last_params is lost
    with pytest.raises(ShapeError):
        fit(model, images[0], ShapeParams(RigidParams(), np.zeros(pdm.n_modes + 1)))


@pytest.mark.lite
def test_rigid_only_cascade_leaves_flexible_parameters_alone():
    pdm, extractor, images, truth = analytic_training_data()
    rigid = init_stats(pdm).restrict(range(4))
    model = train_ccr(images, truth, pdm, extractor, None, rigid, n_levels=1, columns=range(4), ridge=RIDGE)
    assert model.columns == (0, 1, 2, 3)
    assert model.levels[0].regressor.param_dim == 4
    start = ShapeParams(RigidParams(1.0, 0.0, 203.0, 198.0), truth[3].flexible)
    estimate = fit(model, images[0], start)
    assert np.array_equal(estimate.flexible, start.flexible)


@pytest.mark.lite
def test_retraining_reuses_the_functional_set():
    pdm, extractor, images, truth = analytic_training_data()
    stats = init_stats(pdm)
    model = train_ccr(images, truth, pdm, extractor, None, stats, n_levels=2, ridge=RIDGE)
    with count_extractions() as count:
        same = retrain_ccr(model, model.functional_set, stats, ridge=RIDGE)
        wider = retrain_ccr(model, model.functional_set, init_stats(pdm, translation=6.0), ridge=RIDGE)
    assert count.passes == 0
    for original, retrained in zip(model.levels, same.levels):
        assert np.array_equal(original.regressor.matrix, retrained.regressor.matrix)
    assert not np.allclose(wider.levels[0].regressor.matrix, model.levels[0].regressor.matrix)


@pytest.mark.lite
def test_collapsed_residuals_have_no_next_level_statistics():
    pdm, extractor, images, truth = analytic_training_data()
    still = PerturbationStats.zeros(pdm.n_params)
    with pytest.raises(DegenerateStatisticsError, match="degenerate level statistics"):
        train_ccr(images, truth, pdm, extractor, None, still, n_levels=2)
    with pytest.raises(DegenerateStatisticsError, match="degenerate level statistics"):
        train_sdm(images, truth, pdm, extractor, None, still, n_perturbations=2, n_levels=2)


@pytest.mark.lite
def test_training_arguments_are_validated():
    pdm, extractor, images, truth = analytic_training_data()
    stats = init_stats(pdm)
    with pytest.raises(ShapeError):
        train_ccr(images[:3], truth[:2], pdm, extractor, None, stats)
    with pytest.raises(ValueError):
        train_sdm(images, truth, pdm, extractor, None, stats, n_levels=0)
    with pytest.raises(ShapeError):
        train_sdm(images, truth, pdm, extractor, None, stats.restrict(range(4)))
    with pytest.raises(ShapeError):
        CascadeModel((), pdm, extractor, None, Method.CCR)
