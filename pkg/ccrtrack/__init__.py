from .constants import TOOL_VERSION as __version__
from .cascade import CascadeModel, Method, fit, retrain_ccr, train_ccr, train_sdm
from .config import RunConfig, is_config_data_valid, resolve_config
from .evaluation import ced_and_auc, normalized_error
from .features import FeatureExtractor, FeaturePca, build_extractor, count_extractions, extract_functional_block
from .gates import UpdateGate, build_gate
from .incremental import IccrState, IncrementalSdmState, ModelSnapshot, iccr_update, isdm_update
from .pdm import PdmModel, RigidParams, Shape, ShapeParams, compose, decompose, train_pdm
from .regression import FunctionalTrainingSet, LinearRegressor, PerturbationStats, train_continuous, train_sampled
from .tracker import EvalReport, IncrementalMode, TrackingProtocol, evaluate_sequences, track_sequence
