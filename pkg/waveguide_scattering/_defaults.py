"""
Package-wide numeric defaults. Values here are used whenever a config file or a
caller does not give its own. Keep them in one place so that the CLI, the tests
and the library agree on what "default" means.
"""

# Mesh: h = width / DIVISIONS for every arm and junction rectangle
DIVISIONS = 64

# Points per oscillation required before a transverse mode is considered resolved
POINTS_PER_OSCILLATION = 8

# Relative closeness k^2 ~ mu that counts as sitting on a threshold
THRESHOLD_TOL_FACTOR = 1e-9

# Fixed-point iterations (Neumann series)
SERIES_TOL = 1e-8
SERIES_MAX_ITERATIONS = 200
SERIES_STEP = 0.02
# The series must be contracting once this many iterations have been taken
CONTRACTION_CHECK_AFTER = 3
# Truncation length L = T + 3 + TRUNCATION_DECAYS / |rate|
TRUNCATION_DECAYS = 30.0
# Fraction of the weighted norm allowed beyond L/2
TAIL_FRACTION = 1e-6
# Relative mismatch between a model solution and its waves plus remainder
DECOMPOSITION_TOL = 1e-5

# Flux quadrature
FLUX_RESIDUAL_TOL = 1e-6
NULL_FLUX_TOL = 1e-8
DUAL_PAIR_TOL = 1e-6
# Default cross-sections used when a pairing is evaluated without an explicit position
FLUX_POSITION = 2.0
FLUX_SECOND_POSITION = 3.0

# Junction solves
EXTRACTION_RESIDUAL_WARN = 1e-3
RESONANCE_RESIDUAL = 1e-8
# Largest growth factor of a captured growing mode at the truncation before refusing
GROWTH_LIMIT = 1e12
KERNEL_TOL = 1e-7
EXTRA_DECAYING_MODES = 2

# Scattering
EIGEN_TOL = 1e-2
UNITARITY_TOL = 1e-3
THRESHOLD_GUARD = 1e-3
COARSE_GATE = 0.5
REFINE_XATOL = 1e-7
ORACLE_KTOL = 1e-10
ORACLE_MAX_ITERATIONS = 60
ORACLE_EIGENVALUES = 6

# Default arm truncation length R_a, in multiples of the arm width
TRUNCATION_LENGTH = 0.5
