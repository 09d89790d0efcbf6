use std::process::ExitCode;

/// A failed run, classified by the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solve(anyhow::Error),
    Data(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            Self::Config(_) => 2,
            Self::Solve(_) => 3,
            Self::Data(_) => 4,
        })
    }

    pub fn describe(&self) -> String {
        let (kind, e) = match self {
            Self::Config(e) => ("configuration error", e),
            Self::Solve(e) => ("solve failure", e),
            Self::Data(e) => ("data error", e),
        };
        format!("{kind}: {e:#}")
    }
}

pub trait ResultExt<T> {
    fn config(self) -> Result<T, Failure>;
    fn data(self) -> Result<T, Failure>;
    fn solve(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ResultExt<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn data(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn solve(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Solve(e.into()))
    }
}
