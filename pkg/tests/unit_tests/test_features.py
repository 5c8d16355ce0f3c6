import math

import numpy as np
import pytest

from ccrtrack.exceptions import InsufficientDataError, ModelFormatError, ShapeOutOfFrameError
from ccrtrack.features import (
    GradientHistogram,
    PixelPatch,
    analytic_jacobian,
    build_extractor,
    count_extractions,
    extract,
    extract_functional_block,
    feature_dim,
    fit_feature_pca,
    jacobian,
)
from ccrtrack.image import ConstantImage, RasterImage, load_image, save_image
from ccrtrack.pdm import compose

from .shared_data import analytic_scene, blob_sequences, centred_params, pixel_patch_scene, small_pdm


@pytest.mark.lite
def test_functional_block_costs_three_passes():
    pdm, extractor, image = analytic_scene()
    params = centred_params(pdm)
    with count_extractions() as count:
        block = extract_functional_block(extractor, None, image, pdm, params)
    assert count.passes == 3
    assert count.evaluations == 5
    assert block.shape == (feature_dim(extractor, None), pdm.n_params + 1)
    assert block[-1, 0] == 1.0
    assert np.all(block[-1, 1:] == 0.0)


@pytest.mark.lite
def test_counters_nest():
    pdm, extractor, image = analytic_scene()
    params = centred_params(pdm)
    with count_extractions() as outer:
        extract(extractor, None, image, pdm, params)
        with count_extractions() as inner:
            extract(extractor, None, image, pdm, params)
    assert inner.passes == 1
    assert outer.passes == 2
    assert outer.evaluations == 2


@pytest.mark.lite
def test_affine_features_have_exact_central_differences():
    pdm, extractor, image = analytic_scene(amplitude=0.0)
    params = centred_params(pdm, np.random.default_rng(0))
    empirical = jacobian(extractor, None, image, pdm, params, delta_x=1.0).matrix
    exact = analytic_jacobian(extractor, None, pdm, params).matrix
    assert np.max(np.abs(empirical - exact)) < 1e-8


@pytest.mark.lite
def test_smooth_features_jacobian_accuracy():
    pdm, extractor, image = analytic_scene(amplitude=1.0)
    params = centred_params(pdm, np.random.default_rng(1))
    empirical = jacobian(extractor, None, image, pdm, params, delta_x=1e-3).matrix
    exact = analytic_jacobian(extractor, None, pdm, params).matrix
    assert np.max(np.abs(empirical - exact)) < 1e-6


@pytest.mark.lite
def test_central_difference_convergence_order():
    pdm, extractor, image = analytic_scene(amplitude=1.0)
    params = centred_params(pdm, np.random.default_rng(2))
    exact = analytic_jacobian(extractor, None, pdm, params).matrix
    errors = [
        np.max(np.abs(jacobian(extractor, None, image, pdm, params, delta_x=delta).matrix - exact))
        for delta in (0.4, 0.2)
    ]
    order = math.log2(errors[0] / errors[1])
    assert order >= 1.8


@pytest.mark.lite
def test_jacobian_chains_through_the_pca():
    sequences = blob_sequences(1, length=12)
    pdm = small_pdm()
    extractor = PixelPatch(pdm.n_points, 3)
    frames = sequences[0].frames
    pca = fit_feature_pca([extractor.describe(f.image, f.shape.points) for f in frames], 8)
    frame = frames[4]
    raw = jacobian(extractor, None, frame.image, pdm, frame.params).matrix[:-1]
    reduced = jacobian(extractor, pca, frame.image, pdm, frame.params).matrix
    assert reduced.shape == (pca.d + 1, pdm.n_params)
    assert np.allclose(reduced[:-1], pca.projection @ raw, atol=1e-10)
    features = extract(extractor, pca, frame.image, pdm, frame.params)
    assert np.allclose(features[:-1], pca.project(extractor.describe(frame.image, frame.shape.points)))


@pytest.mark.lite
def test_pca_reconstruction_score():
    rng = np.random.default_rng(0)
    basis = np.linalg.qr(rng.standard_normal((30, 3)))[0]
    data = rng.standard_normal((50, 3)) @ basis.T * np.array(5.0)
    pca = fit_feature_pca(data, 3)
    inside = data.mean(axis=0) + basis @ np.array([1.0, -2.0, 0.5])
    assert pca.reconstruction_score(inside) < 1e-10
    assert np.allclose(pca.reconstruct(pca.project(inside)), inside)

    outside = np.linalg.qr(np.column_stack([basis, rng.standard_normal(30)]))[0][:, 3]
    assert pca.reconstruction_score(data.mean(axis=0) + outside) == pytest.approx(1.0)
    assert pca.reconstruction_score(data.mean(axis=0)) == 0.0
    assert np.all(np.diff(pca.explained_fractions()) <= 0)


@pytest.mark.lite
def test_isotropic_noise_spreads_variance_evenly():
    data = np.random.default_rng(6).standard_normal((20_000, 10))
    fractions = fit_feature_pca(data, 4).explained_fractions()
    assert np.allclose(fractions, 0.1, atol=0.01)
    assert np.sum(fit_feature_pca(data, 10).explained_fractions()) == pytest.approx(1.0)


@pytest.mark.lite
def test_scene_pca_fits_within_the_sample_rank():
    sequences = blob_sequences(2, length=10)
    _, pca = pixel_patch_scene(sequences)
    assert pca.d == 12
    with pytest.raises(InsufficientDataError, match="achievable rank is 19"):
        pixel_patch_scene(sequences, d=20)


@pytest.mark.lite
def test_pca_needs_enough_rank():
    rng = np.random.default_rng(0)
    with pytest.raises(InsufficientDataError):
        fit_feature_pca(rng.standard_normal((3, 10)), 5)
    low_rank = np.outer(rng.standard_normal(20), rng.standard_normal(10))
    with pytest.raises(InsufficientDataError):
        fit_feature_pca(low_rank, 3)


@pytest.mark.lite
def test_pixel_patch_layout_and_frame_check():
    pdm = small_pdm()
    extractor = PixelPatch(pdm.n_points, 2)
    image = ConstantImage(400, 400, 0.25)
    points = compose(pdm, centred_params(pdm)).points
    raw = extractor.describe(image, points)
    assert raw.shape == (pdm.n_points * 25,)
    assert np.allclose(raw, 0.25)
    with pytest.raises(ShapeOutOfFrameError, match="shape out of frame"):
        extractor.describe(image, points - 1000.0)


@pytest.mark.lite
def test_gradient_histograms_are_normalised():
    sequence = blob_sequences(1, length=4)[0]
    frame = sequence.frames[0]
    extractor = GradientHistogram(frame.shape.n_points)
    raw = extractor.describe(frame.image, frame.shape.points).reshape(frame.shape.n_points, -1)
    norms = np.linalg.norm(raw, axis=1)
    assert np.all(norms <= 1.0)
    assert np.all(norms > 0.99)
    assert np.all(raw >= 0.0)


@pytest.mark.lite
def test_extractors_rebuild_from_config():
    for extractor in (PixelPatch(12, 3), GradientHistogram(12, cells=2)):
        rebuilt = build_extractor(extractor.config())
        assert type(rebuilt) is type(extractor)
        assert rebuilt.config() == extractor.config()
    with pytest.raises(ValueError, match="Valid kinds include"):
        build_extractor({"kind": "sift", "n_points": 12})


@pytest.mark.lite
def test_raster_image_is_bilinear_and_clamped():
    image = RasterImage(np.array([[0.0, 1.0], [2.0, 3.0]]))
    assert image.intensity(np.array(0.5), np.array(0.5)) == pytest.approx(1.5)
    assert image.intensity(np.array(1.0), np.array(0.0)) == pytest.approx(1.0)
    assert image.intensity(np.array(-5.0), np.array(9.0)) == pytest.approx(2.0)


@pytest.mark.lite
def test_image_files_round_trip(tmp_path):
    frame = blob_sequences(1, length=2)[0].frames[0]
    path = tmp_path / "frame.pgm"
    save_image(path, frame.image)
    loaded = load_image(path)
    assert (loaded.width, loaded.height) == (frame.image.width, frame.image.height)
    assert np.max(np.abs(loaded.pixels - frame.image.rasterize())) <= 0.5 / 255 + 1e-12
    with pytest.raises(ModelFormatError):
        save_image(tmp_path / "frame.jpg", frame.image)
