//! Decision engine for sharing VNF instances among services in a single
//! point of presence.

pub mod analysis;
pub mod assignment;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod model;
pub mod scaling;
pub mod scenario;

pub use engine::{run_strategy, RunReport, Strategy};
pub use error::{Error, Result};
pub use model::{Deployment, Instance, PriorityModel, Pop, ServiceId, ServiceSpec, VmId, VmSpec, VnfId, VnfSpec};
pub use scenario::{load_scenario, Scenario};
