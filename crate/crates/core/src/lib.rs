//! Low-resolution previews for rectified-flow samplers.
//!
//! A preview follows the full-resolution trajectory for the first `D` Euler
//! steps, then switches to a reduced grid through a row-selection operator
//! chosen so that downsampling and the velocity field (nearly) commute, and
//! keeps the reduced trajectory consistent with a guidance term built from
//! the stored full-resolution velocity.

pub mod commutator;
pub mod error;
pub mod experiment;
pub mod field;
pub mod grid;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod operator;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod study;

pub use commutator::{commutator, commutator_norm, select_operator, CommutatorReport, Strategy};
pub use error::{Error, Result};
pub use field::{Field, VelocityField};
pub use grid::{gaussian_noise, LatentGrid, TimestepSchedule};
pub use guidance::{guidance_step, guidance_target, GuidanceSign, GuidanceState};
pub use operator::{build_family, nearest_operator, translate_operator, warp_operator, FamilyMode, OperatorFamily, SelectionOperator};
pub use rng::{SeededRng, Stream};
pub use sampler::{sample_baseline, sample_hr, sample_manipulated, sample_preview, BaselineKind, CostModel, PreviewConfig, Run, RunReport};
