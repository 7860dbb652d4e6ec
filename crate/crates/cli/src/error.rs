use rom_core::bo::BoError;
use rom_core::hfm::HfmError;
use rom_core::io::IoError;
use rom_core::nn::NnError;
use rom_core::reduce::ReduceError;
use rom_core::rom::RomError;
use rom_core::uq::UqError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<HfmError> for CliError {
    fn from(e: HfmError) -> Self {
        match e {
            HfmError::Config(_) | HfmError::InvalidMaterial(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ReduceError> for CliError {
    fn from(e: ReduceError) -> Self {
        match e {
            ReduceError::Tolerance(_) => CliError::Config(e.to_string()),
            ReduceError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BoError> for CliError {
    fn from(e: BoError) -> Self {
        match e {
            BoError::Config(_) => CliError::Config(e.to_string()),
            BoError::Hfm { ref source, .. } if matches!(source, HfmError::Config(_) | HfmError::InvalidMaterial(_)) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(_) => CliError::Config(e.to_string()),
            NnError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<RomError> for CliError {
    fn from(e: RomError) -> Self {
        match e {
            RomError::Config(_) => CliError::Config(e.to_string()),
            RomError::Io(_) => CliError::Io(e.to_string()),
            RomError::Bo(b) => b.into(),
            RomError::Reduce(r) => r.into(),
            RomError::Network { source: NnError::Io(_), .. } => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<UqError> for CliError {
    fn from(e: UqError) -> Self {
        match e {
            UqError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
