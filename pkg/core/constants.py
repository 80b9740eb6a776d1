# core/constants.py

from enum import Enum

TOOL_VERSION = "0.3.0"

# Float formatting for every CSV artifact
FLOAT_FMT = "%.17g"

# CSV/Files
CSV_COMMENT_PREFIX = "# "
TIME_FORMAT_FILE = "%Y%m%d_%H%M%S"
TIME_FORMAT_ISO = "%Y-%m-%dT%H:%M:%S"
MANIFEST_NAME = "manifest.json"

# Tolerances
WEIGHT_SUM_TOL = 1e-12
PD_DET_TOL = 1e-12
ORTHONORMAL_TOL = 1e-10
SNR_RESIDUAL_FLOOR = 1e-15
FIT_PLATEAU = 1e-13

# Diffusion
COSINE_OFFSET = 0.008
MAX_BETA = 0.999

# Sinkhorn
DEFAULT_K_SINK = 200
DEFAULT_SINKHORN_TOL = 1e-6
PLAN_SIZE_GUARD = 4_000_000

# Ergodicity histograms
TV_BINS = 64

# Gradient-norm decay fit
DECAY_BETA_STARTS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
DECAY_MIN_R2 = 0.9

# ACO refinement loop
DEFAULT_EMA_RATE = 0.1
DEFAULT_BUFFER_SIZE = 2048
DEFAULT_K_WARM = 100

# Monte-Carlo acceptance bands
MC_SIGMA_BAND = 3.0

# Sharded ensembles
DEFAULT_SHARDS = 4

# Runner defaults
DEFAULT_SEED = 0
DEFAULT_OUT_DIR = "results"
CONFIG_DIR = "configs"
CONFIG_SUFFIX = ".cfg"


class ExperimentName(Enum):
    THM1_UPPER_BOUND = "thm1-upper-bound"
    LEMMA2_CONTROL_TERM = "lemma2-control-term"
    PROP1_GAUSSIAN_DECAY = "prop1-gaussian-decay"
    THM2_GRADIENT_DECAY = "thm2-gradient-decay"
    ERGODICITY = "ergodicity"
    INCONSISTENCY_ENERGY = "inconsistency-energy"
    SINKHORN_VALIDATE = "sinkhorn-validate"
    SINKHORN_ERROR_DECAY = "sinkhorn-error-decay"
    THM3_CONTRACTION = "thm3-contraction"
    ACO_FULL = "aco-full"
    SNR_CURVES = "snr-curves"


class CheckStatus(Enum):
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"
