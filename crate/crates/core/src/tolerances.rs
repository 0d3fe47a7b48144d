//! Named default tolerances and grid sizes.

/// Closedness of a Lee form on the sample set.
pub const CLOSEDNESS: f64 = 1e-9;
/// Number of quasi-random points used for closedness checks.
pub const CLOSEDNESS_SAMPLES: usize = 1024;

/// Lagrangian residual |i*ω|.
pub const LAGRANGIAN: f64 = 1e-9;
/// Exactness residual and holonomy defects of a solved primitive.
pub const EXACTNESS: f64 = 1e-8;
/// A multiplicative holonomy this close to 1 counts as trivial.
pub const HOLONOMY_TRIVIAL: f64 = 1e-9;
/// RK4 steps per generator loop in primitive solving.
pub const PRIMITIVE_STEPS_PER_LOOP: usize = 2048;
/// Grid nodes per circle when tabulating a primitive.
pub const PRIMITIVE_GRID: usize = 128;

/// Immersion test: smallest singular value of the Jacobian.
pub const IMMERSION: f64 = 1e-8;

/// Verification grid for radial criteria.
pub const VERIFICATION_POINTS: usize = 4096;
pub const VERIFICATION_RADIUS: f64 = 4.0;

/// Chord scanning.
pub const CHORD_DEDUP: f64 = 1e-4;
pub const CHORD_LOG_BAND: f64 = 1e-3;
pub const CHORD_MIN_FIBER_NORM: f64 = 1e-3;
pub const CHORD_ANGLE: f64 = 1e-6;
pub const CHORD_NEWTON_TOL: f64 = 1e-12;
pub const CHORD_NEWTON_ITERS: usize = 60;
/// Ratios and defects within this band of the boundary count as on it.
pub const MVT_EQUALITY_BAND: f64 = 1e-8;

/// Extension grid.
pub const EXT_RADII: usize = 128;
pub const EXT_R_MIN: f64 = 1e-3;
pub const EXT_R_MAX: f64 = 16.0;
pub const EXT_BASE_PER_CIRCLE: usize = 64;
pub const EXT_DIRECTIONS: usize = 256;
pub const EXT_COLLAR_MATCH: f64 = 1e-6;

/// Moser flow.
pub const MOSER_STEP: f64 = 1e-3;
pub const MOSER_MAX_HALVINGS: usize = 10;
pub const FIBER_DRIFT: f64 = 1e-8;
pub const PULLBACK_FD_STEP: f64 = 1e-5;
pub const PULLBACK_RESIDUAL: f64 = 1e-4;

/// Near-Lagrangian extension bound on |d ln h(Z)|.
pub const NEAR_LAGRANGIAN_SLOPE: f64 = 0.1;
