//! Default parameters of the toy datasets and of training runs.
//!
//! Every dataset default lives here and is echoed into output metadata.

/// Rows generated for a training set.
pub const DEFAULT_TRAIN_ROWS: usize = 10_000;
/// Rows in evaluation batches (the exact W2 solver limit).
pub const DEFAULT_EVAL_ROWS: usize = 2048;

pub const MOG2D_MODES: usize = 8;
pub const MOG2D_RADIUS: f64 = 3.0;
pub const MOG2D_STD: f64 = 0.3;

/// Modes at the cube corners scaled to this radius.
pub const MOG3D_RADIUS: f64 = 3.0;
pub const MOG3D_STD: f64 = 0.3;

/// Modes at ±radius along each axis of ℝ⁴ (a 3-sphere shell).
pub const MOG4D_RADIUS: f64 = 3.0;
pub const MOG4D_STD: f64 = 0.3;

pub const CIRCLES_RADII: [f64; 2] = [1.0, 2.0];
pub const CIRCLES_JITTER: f64 = 0.05;

/// Segment from `-LINE_END` to `LINE_END` through the origin.
pub const LINE_END: [f64; 2] = [3.0, 1.5];
pub const LINE_JITTER: f64 = 0.05;

pub const TORUS_RING_RADIUS: f64 = 2.0;
pub const TORUS_TUBE_RADIUS: f64 = 0.6;
pub const TORUS_JITTER: f64 = 0.05;

pub const MOEBIUS_RADIUS: f64 = 2.0;
pub const MOEBIUS_HALF_WIDTH: f64 = 0.5;
pub const MOEBIUS_JITTER: f64 = 0.05;

/// Angle mixture on a fixed circle.
pub const ANGULAR_MODES: usize = 3;
pub const ANGULAR_STD: f64 = 0.2;
pub const ANGULAR_RADIUS: f64 = 2.0;
pub const ANGULAR_RADIAL_JITTER: f64 = 0.05;

/// Radius mixture with uniform angle.
pub const RADIAL_RADII: [f64; 2] = [1.0, 2.5];
pub const RADIAL_STD: f64 = 0.1;

/// Radii of the rotation-bridge pairs are uniform on this range.
pub const BRIDGE_RADIUS_RANGE: (f64, f64) = (1.0, 2.0);

/// Score/flow network defaults.
pub const HIDDEN_WIDTH: usize = 128;
pub const HIDDEN_LAYERS: usize = 3;
pub const TIME_EMBED_DIM: usize = 32;
pub const BATCH_SIZE: usize = 256;
pub const TRAIN_STEPS: usize = 20_000;
pub const LEARNING_RATE: f64 = 1e-3;
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
pub const DIFFUSION_STEPS: usize = 100;

/// Training steps for the angular bridge demo.
pub const BRIDGE_TRAIN_STEPS: usize = 5000;
/// Bridge schedule: cumulative variance grows geometrically between these.
pub const BRIDGE_VAR_RANGE: (f64, f64) = (1e-4, 9.0);

/// Lower end of the flow-matching time range (the conditional field is
/// singular at zero noise).
pub const CFM_T_MIN: f64 = 1e-3;
/// Integration end point of the flow-matching sampler.
pub const CFM_ODE_END: f64 = 1e-8;
pub const CFM_ODE_STEPS: usize = 200;

/// Sliced W2 projection count.
pub const SLICED_PROJECTIONS: usize = 256;
/// Largest n for the exact assignment solver.
pub const EXACT_W2_MAX: usize = 2048;
