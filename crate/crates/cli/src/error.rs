use perpl::engine::EngineError;
use perpl::metrics::MetricsError;
use perpl::rl::CheckpointError;
use perpl::scenarios::ScenarioError;

/// Error classes with fixed exit codes: config 2, data 3, numeric 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

fn one_line(s: String) -> String {
    s.replace('\n', "; ")
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => {
                write!(f, "{}", one_line(m.clone()))
            }
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Scenario(s) => CliError::Data(s.to_string()),
            EngineError::Metrics(m) => CliError::Data(m.to_string()),
            EngineError::TrajectoryTooShort(_)
            | EngineError::InitialSpeedMismatch { .. }
            | EngineError::NoTrajectories => CliError::Data(e.to_string()),
            EngineError::NonFinite { .. }
            | EngineError::Dynamics(_)
            | EngineError::Idm(_)
            | EngineError::Ppo(_)
            | EngineError::Gae(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
