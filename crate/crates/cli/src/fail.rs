use std::fmt;

/// Process exit codes.
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum Fail {
    Usage(String),
    Data(String),
    Numeric(String),
}

pub type CliResult<T> = Result<T, Fail>;

impl Fail {
    pub fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => EXIT_USAGE,
            Fail::Data(_) => EXIT_DATA,
            Fail::Numeric(_) => EXIT_NUMERIC,
        }
    }

    /// Prefixes the message with `what`.
    pub fn context(self, what: impl fmt::Display) -> Self {
        match self {
            Fail::Usage(m) => Fail::Usage(format!("{what}: {m}")),
            Fail::Data(m) => Fail::Data(format!("{what}: {m}")),
            Fail::Numeric(m) => Fail::Numeric(format!("{what}: {m}")),
        }
    }
}

impl fmt::Display for Fail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Fail::Usage(m) | Fail::Data(m) | Fail::Numeric(m)) = self;
        // Diagnostics are a single line.
        f.write_str(&m.split_whitespace().collect::<Vec<_>>().join(" "))
    }
}

impl From<essgan::Error> for Fail {
    fn from(e: essgan::Error) -> Self {
        if e.is_numeric() {
            Fail::Numeric(e.to_string())
        } else {
            Fail::Data(e.to_string())
        }
    }
}

pub trait Context<T> {
    fn ctx(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<Fail>> Context<T> for Result<T, E> {
    fn ctx(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}

pub fn io_fail(path: &std::path::Path, e: std::io::Error) -> Fail {
    Fail::Data(format!("{}: {e}", path.display()))
}
