use thiserror::Error;

/// Command failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<bsm_core::Error> for CliError {
    fn from(e: bsm_core::Error) -> Self {
        use bsm_core::Error as E;
        match &e {
            E::SingularSystem { .. } | E::DegeneratePower(_) => CliError::Numerical(e.to_string()),
            E::Domain(_) | E::InsufficientTaps { .. } | E::InvalidTaps(_) => {
                CliError::Config(e.to_string())
            }
            _ if e.is_data_error() => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let singular = bsm_core::Error::SingularSystem {
            bin: 1,
            freq_hz: 2.0,
        };
        assert_eq!(CliError::from(singular).exit_code(), 4);
        assert_eq!(
            CliError::from(bsm_core::Error::Truncated("x")).exit_code(),
            3
        );
        assert_eq!(
            CliError::from(bsm_core::Error::InvalidTaps(3)).exit_code(),
            2
        );
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
    }
}
