import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ccrtrack.evaluation import ced_and_auc, normalized_error
from ccrtrack.exceptions import ShapeError
from ccrtrack.pdm import Shape

from .shared_data import EYES, TEMPLATE

errors_strategy = st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=200)


@pytest.mark.lite
@given(errors_strategy)
def test_ced_is_monotone_and_auc_bounded(errors):
    thresholds, ced, auc = ced_and_auc(errors)
    assert thresholds.shape == ced.shape == (801,)
    assert np.all(np.diff(ced) >= 0)
    assert 0.0 <= ced[0] and ced[-1] <= 1.0
    assert 0.0 <= auc <= 1.0


@pytest.mark.lite
def test_auc_extremes_and_a_single_step():
    assert ced_and_auc([0.0, 0.0])[2] == pytest.approx(1.0)
    assert ced_and_auc([0.5, 0.09])[2] == 0.0
    assert ced_and_auc([0.04])[2] == pytest.approx(0.5, abs=1e-3)
    thresholds, ced, _ = ced_and_auc([0.01, 0.03, 0.2, 0.07])
    assert thresholds[-1] == pytest.approx(0.08)
    assert ced[-1] == pytest.approx(0.75)


@pytest.mark.lite
def test_auc_uses_the_requested_bound():
    _, _, narrow = ced_and_auc([0.05], upper_bound=0.1, points=1001)
    assert narrow == pytest.approx(0.5, abs=1e-3)


@pytest.mark.lite
def test_ced_rejects_bad_input():
    with pytest.raises(ValueError):
        ced_and_auc([])
    with pytest.raises(ValueError):
        ced_and_auc([0.1, -0.01])
    with pytest.raises(ValueError):
        ced_and_auc([float("nan")])
    with pytest.raises(ValueError):
        ced_and_auc([0.1], upper_bound=0.0)


@pytest.mark.lite
def test_normalized_error_divides_by_the_eye_corner_distance():
    left, right = EYES
    inter_ocular = np.linalg.norm(TEMPLATE.points[left] - TEMPLATE.points[right])
    shifted = TEMPLATE.translated(3.0, 4.0)
    assert normalized_error(shifted, TEMPLATE, EYES) == pytest.approx(5.0 / inter_ocular)
    assert normalized_error(TEMPLATE, TEMPLATE, EYES) == 0.0


@pytest.mark.lite
def test_normalized_error_needs_matching_shapes():
    with pytest.raises(ShapeError):
        normalized_error(Shape(TEMPLATE.points[:5]), TEMPLATE, EYES)
    collapsed = Shape(np.zeros((12, 2)))
    with pytest.raises(ShapeError):
        normalized_error(TEMPLATE, collapsed, EYES)
