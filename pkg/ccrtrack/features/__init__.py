from typing import Dict

from .analytic import AnalyticFeatures
from .counter import ExtractionCount, count_extractions
from .extractor import FeatureExtractor
from .functional import (
    FeatureJacobian,
    analytic_jacobian,
    extract,
    extract_functional_block,
    feature_dim,
    jacobian,
    reduce,
)
from .gradient_histogram import GradientHistogram
from .pca import FeaturePca, fit_feature_pca
from .pixel_patch import PixelPatch

EXTRACTOR_KINDS = {
    PixelPatch.kind: PixelPatch,
    GradientHistogram.kind: GradientHistogram,
    AnalyticFeatures.kind: AnalyticFeatures,
}


def build_extractor(config: Dict) -> FeatureExtractor:
    """ Rebuilds an extractor from its `config()` dictionary. """
    config = dict(config)
    kind = config.pop("kind", None)
    if kind not in EXTRACTOR_KINDS:
        raise ValueError(f"{kind} is an invalid extractor kind. Valid kinds include {list(EXTRACTOR_KINDS)}")
    return EXTRACTOR_KINDS[kind](**config)
