#constants.py
#These constants are shared defaults for the numerical kernels, the study runner and the CSV writers
class Constants:
    # quadrature
    GAUSS_ORDER = 16
    GAUSS_PAIR_ORDER = 8
    QUADRATURE_REL_TOL = 1e-8
    QUADRATURE_ABS_FLOOR = 1e-300
    PANEL_BUDGET = 10000

    # polytope membership
    MEMBERSHIP_TOL = 1e-12

    # Legendre transform
    LEGENDRE_RESOLUTION = {1: 2048, 2: 256}
    LEGENDRE_RESOLUTION_HIGH_DIM = 32
    CLUSTER_MERGE_TOL = 1e-6
    TIE_ABS_TOL = 1e-10
    TIE_REL_TOL = 1e-8
    MAX_CANDIDATES = 8
    NEWTON_MAX_ITER = 60
    NEWTON_STEP_TOL = 1e-15
    ZOOM_ROUNDS = 40
    ZOOM_POINTS = 33

    # lifespan
    LIFESPAN_RESOLUTION = 256
    LIFESPAN_REL_ACCURACY = 1e-3
    HESSIAN_SYMMETRY_TOL = 1e-9

    # geodesic
    SINGULAR_TOL_FACTOR = 10.0
    FD_STEP = 1e-3
    RAY_CACHE_SIZE = 65536

    # quantization
    C2_X_POINTS = 41
    LOG_FLOOR = 2.220446049250313e-16

    # cli
    EXIT_OK = 0
    EXIT_CONFIG = 1
    EXIT_IO = 2
    EXIT_NUMERICAL = 3
    CSV_FLOAT_FORMAT = "%.17g"
    LOG_FILE = "hrma-lab.log"
    LOG_FORMAT = '%(asctime)s:%(levelname)s:%(message)s'
    DIAGNOSTICS_FILE = "diagnostics.json"
    CACHE_DIR = "spectral-cache"
