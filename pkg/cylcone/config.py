"""Configuration constants for cylcone."""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Paths
BASE_DIR = Path(__file__).parent.parent
OUTPUT_DIR = Path(os.getenv("CYLCONE_OUTPUT_DIR", str(BASE_DIR / "runs")))

# Parallelism
THREADS = max(1, int(os.getenv("CYLCONE_THREADS", "1")))
DEFAULT_SEED = int(os.getenv("CYLCONE_SEED", "20240101"))

# Report formatting
FLOAT_FORMAT = "%.17g"  # byte-identical CSV bodies across runs

# Cone spectra
LAMBDA_GRID_POINTS = 10001  # candidates in [lambda0/2, lambda0]
SL_GRID = 2048  # Sturm-Liouville oracle cells
RESIDUAL_TOL = 1e-12

# Leaf ODE
LEAF_RTOL = 1e-10
LEAF_ATOL = 1e-12
LEAF_LAUNCH = 1e-4  # Taylor start, as a fraction of the axis radius
LEAF_S_MAX = 2000.0
LEAF_SAMPLES = 20000
LEAF_RADIUS_RATIO = 1e3  # r(s_max)/r(0) needed for the asymptotic fit
POLAR_TABLE_SIZE = 4096
POLAR_TABLE_FLOOR = 1e-13  # smallest sin|phi - alpha| the polar table resolves
POLAR_EXTENSION_SAMPLES = 2000

# Barriers F_a
BARRIER_SIGMA_RANGE = (1e-3, 1e3)
BARRIER_BISECTION_ITERS = 60
BARRIER_MATCH_TOL = 1e-3

# Jacobi fields
QUADRATURE_NODES = 64  # Gauss-Legendre nodes per direction
SUITE_MAX_MODES = 12
RECURRENCE_TOL = 1e-10
BOUNDARY_TOL = 1e-12

# Gluing and Newton
GRID_SLICE = 64
GRID_HEIGHT = 96
GRID_DECADES = 2.5
REGION_GRAPH_LIMIT = 0.2  # |u_l| <= 0.2 r on region I
DELTA_OFFSET = 0.05
TAU_OFFSET = 0.05
JACOBIAN_STEP = 1e-6
NEWTON_MAX_ITER = 12
NEWTON_REDUCTION = 1e-4
INDICIAL_AVOID_TOL = 1e-6
PARAM_STEP = 1e-3  # central-difference step in continuous grid index
NEWTON_BACKTRACKS = 8
PROJECTION_ITERS = 40  # scalar Newton steps placing X nodes on the target graph
KAPPA_GRID = 21

# Continuation diagnostics
Q_REG = 0.05
BETA_PARAM = 0.01
P_BARRIER = 9
Q_BARRIER = 8.0
BARRIER_RESOLVED_OFFSET = 1e-6  # least max |w|/sigma a sampled barrier resolves
DISTANCE_BISECTION_TOL = 1e-4
DISTANCE_BISECTION_ITERS = 60
MIN_BALL_SAMPLES = 100
MASS_RATIO = 1.1
