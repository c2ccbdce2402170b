use std::path::Path;

/// Process outcome classes; each maps to one exit code.
#[derive(Debug)]
pub enum Fail {
    /// Bad flags or arguments.
    Usage(anyhow::Error),
    /// Invalid configuration, data that fails validation or an audit, or a
    /// failed check.
    Invalid(anyhow::Error),
    /// I/O, network or numerical failure while running.
    Runtime(anyhow::Error),
}

impl Fail {
    pub fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 1,
            Fail::Invalid(_) => 2,
            Fail::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Fail::Usage(e) | Fail::Invalid(e) | Fail::Runtime(e) => e,
        }
    }

    pub fn io(path: &Path) -> impl Fn(std::io::Error) -> Fail + '_ {
        move |e| Fail::Runtime(anyhow::Error::new(e).context(path.display().to_string()))
    }

    pub fn usage(msg: impl std::fmt::Display) -> Fail {
        Fail::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn invalid(msg: impl std::fmt::Display) -> Fail {
        Fail::Invalid(anyhow::anyhow!("{msg}"))
    }
}

impl From<resmix::Error> for Fail {
    fn from(e: resmix::Error) -> Self {
        use resmix::Error as E;
        match e {
            E::Io { .. } | E::NonFiniteLoss { .. } | E::Image(_) => Fail::Runtime(e.into()),
            _ => Fail::Invalid(e.into()),
        }
    }
}
