//! GRWf model hierarchy, propagators, and the sequential flash sampler.

pub mod builders;
pub mod corpus;
pub mod model;
pub mod propagator;
pub mod sampler;
pub mod space;

pub use builders::{gaussian_flash_rate, CollapseFamily, Statistics};
pub use model::{GrwfModel, Tier};
pub use propagator::{
    dyson_propagator, limit_wstar_w, ln_chain, stop_probability, survival, time_ordered_exp,
};
pub use sampler::{collapse, sample_next_flash, simulate, simulate_batch, StopRule, Trajectory};
pub use space::{ConfigSpace, Flash, FlashRecord};
