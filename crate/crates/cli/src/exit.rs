use std::fmt;
use std::path::Path;

use dfsim_core::graph::GraphError;
use dfsim_core::profile::ProfileError;
use dfsim_core::strategy::StrategyError;
use dfsim_core::synth::SynthError;

pub const FINDINGS: u8 = 1;
pub const IO: u8 = 2;
pub const UNKNOWN_OP: u8 = 3;
pub const FIT: u8 = 4;

/// A failed command: the process exit code and a message for stderr.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub message: String,
}

impl Exit {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type Outcome = Result<(), Exit>;

pub fn read(path: &Path) -> Result<Vec<u8>, Exit> {
    std::fs::read(path).map_err(|e| Exit::new(IO, format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, Exit> {
    String::from_utf8(read(path)?).map_err(|e| Exit::new(IO, format!("{}: {e}", path.display())))
}

pub fn write(path: &Path, contents: &[u8]) -> Outcome {
    std::fs::write(path, contents).map_err(|e| Exit::new(IO, format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Outcome {
    std::fs::create_dir_all(path).map_err(|e| Exit::new(IO, format!("{}: {e}", path.display())))
}

pub fn graph(path: &Path, e: GraphError) -> Exit {
    let code = match e {
        GraphError::Syntax { .. } | GraphError::Schema { .. } | GraphError::UnsupportedVersion(_) => IO,
        _ => FINDINGS,
    };
    Exit::new(code, format!("{}: {e}", path.display()))
}

pub fn profile(path: &Path, e: ProfileError) -> Exit {
    Exit::new(IO, format!("{}: {e}", path.display()))
}

pub fn config(path: &Path, e: StrategyError) -> Exit {
    let code = match e {
        StrategyError::Parse { .. } | StrategyError::UnsupportedVersion(_) => IO,
        _ => FINDINGS,
    };
    Exit::new(code, format!("{}: {e}", path.display()))
}

pub fn synth(path: &Path, e: SynthError) -> Exit {
    let code = match e {
        SynthError::Parse { .. } => IO,
        _ => FINDINGS,
    };
    Exit::new(code, format!("{}: {e}", path.display()))
}
