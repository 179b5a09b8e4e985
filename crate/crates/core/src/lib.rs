//! Vehicle pose, size and track estimation from planar-projected LADAR
//! point clusters.
//!
//! The measurement core is an adaptive matched filter built from weighted
//! axis-aligned rectangles whose edge weights follow the sensor viewing
//! angle. Its response to a Gaussian-mixture point signal has a closed form
//! in terms of error functions, together with exact first and second
//! derivatives, which drives a Levenberg-Marquardt pose/size fit and a
//! first-order perturbation covariance. On top of that sit visibility
//! corrections, a constant-turn-rate EKF multi-target tracker, a ray-casting
//! scan synthesizer used for ground truth, and a canonical-frame linear
//! vehicle discriminator.

pub mod angles;
pub mod classifier;
pub mod config;
pub mod covariance;
pub mod ctrv;
pub mod error;
pub mod filter;
pub mod frame_io;
pub mod matching;
pub mod optimizer;
pub mod scan;
pub mod synth;
pub mod timing;
pub mod tracker;
pub mod visibility;

pub use config::RunConfig;
pub use covariance::{pose_covariance, Measurement, VisibleEdges};
pub use error::{CoreError, Result};
pub use filter::{build_filter, normalize_filter, FilterSpec, FilterTable, MatchState, Rect};
pub use matching::{evaluate, MatchEval};
pub use optimizer::{fit, initialize_state, FitResult, OptimizerConfig};
pub use scan::{cluster_points, remove_ground, viewing_angle, Cluster, Frame, ScanPoint, SensorOrigin};
pub use tracker::{Track, Tracker, TrackerConfig};
