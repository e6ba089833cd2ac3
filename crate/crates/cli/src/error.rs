//! Maps failures to process exit codes.

use std::fmt;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

/// Unreadable or invalid configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Input data that cannot be used.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub fn data_error(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

/// 2 for configuration problems, 3 for data and I/O problems, 4 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use fedsim::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if cause.is::<DataError>() || cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return EXIT_DATA;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) => EXIT_CONFIG,
                E::Data(_) | E::Io(_) | E::Json(_) | E::Wav(_) | E::InfeasibleAlignment { .. } => EXIT_DATA,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_root_cause() {
        assert_eq!(exit_code(&config_error("x")), EXIT_CONFIG);
        let wrapped = Err::<(), _>(fedsim::Error::Data("bad".into())).context("loading").unwrap_err();
        assert_eq!(exit_code(&wrapped), EXIT_DATA);
        assert_eq!(exit_code(&fedsim::Error::Protocol("shape".into()).into()), EXIT_RUNTIME);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_RUNTIME);
    }
}
