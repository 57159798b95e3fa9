/// Columns appended to every CSV artifact so rows can be traced to a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub experiment: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn new(experiment: impl Into<String>, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn columns() -> [&'static str; 3] {
        ["experiment", "seed", "version"]
    }

    pub fn values(&self) -> [String; 3] {
        [self.experiment.clone(), self.seed.to_string(), self.version.clone()]
    }
}
