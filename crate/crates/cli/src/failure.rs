use std::fmt::Display;

/// A command error together with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const VERIFICATION: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const MISSING_INIT: u8 = 4;

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn config(msg: impl Display) -> Self {
        Failure::new(CONFIG, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl Display) -> Self {
        Failure::new(DATA, anyhow::anyhow!("{msg}"))
    }

    pub fn missing_init(msg: impl Display) -> Self {
        Failure::new(MISSING_INIT, anyhow::anyhow!("{msg}"))
    }
}

impl From<egoact_core::Error> for Failure {
    fn from(e: egoact_core::Error) -> Self {
        use egoact_core::Error as E;
        let code = match &e {
            E::Config(_) | E::Domain(_) => CONFIG,
            E::MissingPhaseOne { .. } => MISSING_INIT,
            E::Io { .. } | E::Parse { .. } | E::Validation(_) | E::Dimension(_) => DATA,
        };
        Failure::new(code, e)
    }
}

/// Attaches context to library errors while keeping their exit code.
pub trait Context<T> {
    fn context(self, what: impl Display) -> Result<T, Failure>;
}

impl<T> Context<T> for Result<T, egoact_core::Error> {
    fn context(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| {
            let f = Failure::from(e);
            Failure::new(f.code, f.error.context(what.to_string()))
        })
    }
}
