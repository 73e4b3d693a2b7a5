# Invariant tolerances
SUM_TOL = 1e-12
FIELD_SUM_TOL = 1e-10
# regularized fields may leave [0, 1] by up to this multiple of eps*(theta + lambda_A)
REGULARIZED_BOUND_FACTOR = 10.0
POTENTIAL_SUM_TOL = 1e-9
MEAN_DRIFT_TOL = 1e-11
SYMMETRY_TOL = 1e-12
EIGEN_TOL = 1e-10

# Entropy evaluation
LOG_FLOOR = 1e-14
RESOLVENT_TOL = 1e-13
RESOLVENT_MAX_ITER = 200
CERTIFY_SAMPLES = 10_000
CERTIFY_DECADES = tuple(range(2, 9))

# Grids
MIN_CELLS = 4
SUPPORTED_DIMS = (1, 2)

# Solver defaults
DEFAULT_YOSIDA_EPSILON = 1e-4
DEFAULT_DT = 1e-3
DEFAULT_EQUILIBRIUM_TOL = 1e-8
DEFAULT_MAX_STEPS = 1_000_000
DEFAULT_TAU_FRACTION = 0.05

# Decay fit: middle 60% of the post-transient tail
FIT_WINDOW = (0.2, 0.8)

STATUS = ("running", "reached_t_end", "reached_equilibrium", "max_steps")
INIT_KINDS = ("uniform_noise", "step", "custom")

# --- Output formats ---

CHECKPOINT_MAGIC = b"MCAC1"

SERIES_COLUMNS = (
    "t",
    "total_energy",
    "bulk_energy",
    "gradient_energy",
    "dissipation",
    "mean_drift_max",
    "constraint_violation",
    "potential_sum_violation",
    "separation_floor",
    "step_energy_delta",
)
SERIES_FLOAT_FORMAT = "%.17g"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_VERIFY = 4
