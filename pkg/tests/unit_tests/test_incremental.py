from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from ccrtrack.cascade import CascadeLevel, CascadeModel, Method, train_ccr, train_sdm
from ccrtrack.exceptions import DataTermNotInvertibleError, ShapeError
from ccrtrack.features import AnalyticFeatures, count_extractions
from ccrtrack.incremental import (
    IccrState,
    IncrementalSdmState,
    ModelSnapshot,
    iccr_level_update,
    iccr_update,
    iccr_update_block,
    isdm_level_update,
    isdm_update,
    isdm_update_samples,
    woodbury_inner,
)
from ccrtrack.regression import FunctionalTrainingSet, PerturbationStats, solve_sampled, train_continuous

from .shared_data import analytic_scene, centred_params, random_block, random_functional_set, random_stats, small_pdm

RIDGE = 1.0


def relative_error(estimate, reference):
    return np.linalg.norm(estimate - reference) / np.linalg.norm(reference)


def random_ccr_model(rng, d=30, count=20):
    """ Single-level CCR cascade over random blocks, functional set attached. """
    pdm = small_pdm()
    training_set = random_functional_set(rng, count, d, pdm.n_params)
    stats = random_stats(rng, pdm.n_params)
    regressor, state = train_continuous(training_set, stats, ridge=RIDGE)
    level = CascadeLevel(regressor, stats, state)
    model = CascadeModel((level,), pdm, AnalyticFeatures(pdm.n_points), None, Method.CCR, functional_set=training_set)
    return model, stats


def perturbation_stats(pdm):
    variances = np.concatenate([[0.02 ** 2, 0.02 ** 2, 9.0, 9.0], 0.3 * pdm.eigenvalues])
    return PerturbationStats(np.zeros(pdm.n_params), np.diag(variances))


@pytest.mark.lite
def test_iccr_updates_match_batch_training():
    rng = np.random.default_rng(0)
    d, m = 100, 10
    initial = random_functional_set(rng, 30, d, m)
    stats = random_stats(rng, m)
    _, state = train_continuous(initial, stats, ridge=RIDGE)
    blocks = [random_block(rng, d, m) for _ in range(50)]
    for block in blocks:
        state = iccr_level_update(state, block)

    everything = FunctionalTrainingSet.from_blocks(list(initial.blocks) + blocks)
    batch, batch_state = train_continuous(everything, stats, ridge=RIDGE)
    assert relative_error(state.regressor().matrix, batch.matrix) < 1e-6
    assert np.allclose(state.sum_d, batch_state.sum_d)
    assert state.ridge == RIDGE


@pytest.mark.lite
def test_woodbury_inner_matrix_is_parameter_sized():
    rng = np.random.default_rng(1)
    m = 6
    _, state = train_continuous(random_functional_set(rng, 10, 80, m), random_stats(rng, m))
    inner = woodbury_inner(state, random_block(rng, 80, m))
    assert inner.shape == (m + 1, m + 1)
    assert np.allclose(inner, inner.T)


@pytest.mark.lite
def test_isdm_updates_match_batch_training():
    rng = np.random.default_rng(2)
    d, m, k = 60, 8, 5
    x = rng.standard_normal((d, 100))
    y = rng.standard_normal((m, 100))
    regressor, state = solve_sampled(x, y, RIDGE)
    new_x = [rng.standard_normal((d, k)) for _ in range(20)]
    new_y = [rng.standard_normal((m, k)) for _ in range(20)]
    for batch_x, batch_y in zip(new_x, new_y):
        regressor, state = isdm_level_update(regressor, state, batch_x, batch_y)

    batch, batch_state = solve_sampled(np.hstack([x] + new_x), np.hstack([y] + new_y), RIDGE)
    assert relative_error(regressor.matrix, batch.matrix) < 1e-8
    assert relative_error(state.v, batch_state.v) < 1e-8


@pytest.mark.lite
def test_empty_isdm_update_is_a_no_op():
    rng = np.random.default_rng(3)
    regressor, state = solve_sampled(rng.standard_normal((4, 20)), rng.standard_normal((2, 20)), RIDGE)
    same_regressor, same_state = isdm_level_update(regressor, state, np.zeros((4, 0)), np.zeros((2, 0)))
    assert same_regressor is regressor and same_state is state
    with pytest.raises(ShapeError):
        isdm_level_update(regressor, state, np.zeros((5, 2)), np.zeros((2, 2)))


@pytest.mark.lite
def test_update_pass_counts():
    pdm, extractor, image = analytic_scene()
    truth = [centred_params(pdm, np.random.default_rng(0))] * 4
    images = [image] * 4
    stats = perturbation_stats(pdm)

    ccr = train_ccr(images, truth, pdm, extractor, None, stats, n_levels=3, ridge=1e-2)
    with count_extractions() as count:
        updated = iccr_update(IccrState(ccr), image, truth[0])
    assert count.passes == 3
    assert updated.updates == 1
    assert updated.model.n_levels == 3

    sdm = train_sdm(images, truth, pdm, extractor, None, stats, n_perturbations=5, n_levels=2, ridge=1e-2)
    with count_extractions() as count:
        updated = isdm_update(IncrementalSdmState(sdm, n_samples=4), image, truth[0], np.random.default_rng(1))
    assert count.passes == 2 * 4
    assert updated.updates == 1


@pytest.mark.lite
def test_zero_covariance_data_term_cannot_be_updated():
    rng = np.random.default_rng(4)
    m = 3
    _, state = train_continuous(random_functional_set(rng, 10, 8, m), PerturbationStats.zeros(m))
    with pytest.raises(DataTermNotInvertibleError, match="data term not invertible"):
        iccr_level_update(state, random_block(rng, 8, m))


@pytest.mark.lite
def test_periodic_refresh_re_inverts_from_the_stored_blocks():
    rng = np.random.default_rng(5)
    model, stats = random_ccr_model(rng)
    m = model.pdm.n_params
    blocks = [random_block(rng, 30, m) for _ in range(5)]

    state = IccrState(model, refresh_every=5)
    for block in blocks:
        state = iccr_update_block(state, block)
    assert state.updates == 5
    assert state.model.functional_set.count == 25

    everything = model.functional_set
    for block in blocks:
        everything = everything.append(block)
    batch, _ = train_continuous(everything, stats, ridge=RIDGE)
    assert relative_error(state.model.levels[0].regressor.matrix, batch.matrix) < 1e-10

    plain = iccr_update_block(IccrState(model), blocks[0])
    assert plain.model.functional_set is None


@pytest.mark.lite
def test_non_finite_updates_are_rejected():
    rng = np.random.default_rng(6)
    model, _ = random_ccr_model(rng)
    state = IccrState(model)
    block = random_block(rng, 30, model.pdm.n_params)
    block[2, 3] = np.nan
    assert iccr_update_block(state, block) is state

    regressor, solver_state = solve_sampled(rng.standard_normal((5, 30)), rng.standard_normal((model.pdm.n_params, 30)), RIDGE)
    sdm = CascadeModel((CascadeLevel(regressor, PerturbationStats.zeros(model.pdm.n_params), solver_state),), model.pdm, model.extractor, None, Method.SDM)
    isdm = IncrementalSdmState(sdm, n_samples=2)
    bad = np.full((5, 2), np.inf)
    assert isdm_update_samples(isdm, [(bad, np.zeros((model.pdm.n_params, 2)))]) is isdm
    with pytest.raises(ShapeError):
        isdm_update_samples(isdm, [])


@pytest.mark.lite
def test_incremental_states_check_their_cascade():
    rng = np.random.default_rng(7)
    model, _ = random_ccr_model(rng)
    with pytest.raises(ValueError):
        IncrementalSdmState(model)
    with pytest.raises(ValueError):
        IccrState(replace(model, functional_set=None), refresh_every=3)
    with pytest.raises(ValueError):
        IccrState(model, refresh_every=0)


@pytest.mark.lite
def test_snapshot_publishes_whole_models():
    rng = np.random.default_rng(8)
    model, _ = random_ccr_model(rng)
    snapshot = ModelSnapshot(model)
    blocks = [random_block(rng, 30, model.pdm.n_params) for _ in range(8)]

    def update(block):
        with snapshot.updating() as current:
            snapshot.publish(iccr_update_block(IccrState(current), block).model)
        return snapshot.current()

    with ThreadPoolExecutor(max_workers=4) as pool:
        seen = list(pool.map(update, blocks))

    assert snapshot.version == 8
    assert all(isinstance(published, CascadeModel) for published in seen)
    final = snapshot.current().levels[0].solver_state
    assert np.allclose(final.sum_d, model.levels[0].solver_state.sum_d + sum(blocks))
