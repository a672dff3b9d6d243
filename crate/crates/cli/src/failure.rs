use liftpose_core::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidConfig(_) => EXIT_CONFIG,
            Error::NumericalFailure(_)
            | Error::NonFiniteLoss { .. }
            | Error::PointAtInfinity(_)
            | Error::SingularIntrinsics
            | Error::ZeroExtent(_)
            | Error::DegenerateShape(_) => EXIT_NUMERICAL,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}
