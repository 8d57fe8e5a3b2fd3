use crate::model::{ServiceId, VmId, VnfId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unstable queue: offered load {load} is not below capability {capability}")]
    Unstable { load: f64, capability: f64 },

    #[error("service {0} is not part of the instance population")]
    NotInPopulation(ServiceId),

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("insufficient resources: no admissible VM for VNF {0}")]
    NoCandidate(VnfId),

    #[error("no assignment covers every required VNF")]
    NoMatching,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("elastic relaxation infeasible for VM set {0:?}")]
    ElasticInfeasible(Vec<VmId>),

    #[error("brute-force enumeration needs {count} combinations (cap {cap})")]
    EnumerationOverflow { count: u128, cap: u128 },

    #[error("oracle cap exceeded: {0}")]
    OracleCap(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }
}
