use std::fmt;

use cardio_lnode::Error;

pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn compute(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_COMPUTE,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Errors while computing: bad settings still exit 2, everything else 1.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::config(e.to_string()),
            _ => Failure::compute(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::compute(e.to_string())
    }
}

/// Loading an input: any failure is a configuration problem.
pub trait InputContext<T> {
    fn input(self, what: &str) -> Result<T, Failure>;
}

impl<T, E: fmt::Display> InputContext<T> for Result<T, E> {
    fn input(self, what: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::config(format!("{what}: {e}")))
    }
}
