""" File to hold values that should not be configurable. """

TOOL_VERSION = "1.0.0"

MODEL_FORMAT_VERSION = 1
SEQUENCE_FORMAT_VERSION = 1

RIGID_DIM = 4

# 300VW-style failure definition.
REINIT_THRESHOLD = 0.1
# Update gate on the normalised error. Must stay below REINIT_THRESHOLD:
# failed frames never reach the gate.
GATE_THRESHOLD = 0.05
CED_UPPER_BOUND = 0.08
CED_GRID_POINTS = 801

PROCRUSTES_MAX_ITERATIONS = 100
PROCRUSTES_TOLERANCE = 1e-10

COVARIANCE_SHRINKAGE = 0.05
SYMMETRY_TOLERANCE = 1e-10
PSD_TOLERANCE = 1e-10

TIMING_PERCENTILES = (50, 90, 99)

ENV_PREFIX = "CCRTRACK_"
