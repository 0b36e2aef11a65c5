use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("rational input: {0}")]
    RationalInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("frequency depth insufficient: need denominators above {needed}, have {have}")]
    InsufficientDepth { needed: u64, have: u64 },
    #[error("evaluation outside reliable strip: tail bound {tail:.3e} at |Im z| = {imag:.3e}")]
    OutsideStrip { tail: f64, imag: f64 },
    #[error("period mismatch: {0}")]
    PeriodMismatch(String),
    #[error("small divisor breach at k = {k}{}: |e^(2πikα) - 1| = {divisor:.3e}", entry.map(|e| format!(" (entry {e})")).unwrap_or_default())]
    SmallDivisor { k: i64, divisor: f64, entry: Option<&'static str> },
    #[error("near-singular matrix at x = {x}: {detail}")]
    Singular { x: f64, detail: String },
    #[error("winding number ill-defined after {attempts} attempts")]
    DegreeUndefined { attempts: usize },
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("energy {0} lies inside a band")]
    InsideBand(f64),
    #[error("residual {residual:.3e} exceeds tolerance {tolerance:.3e} ({what})")]
    Residual { what: String, residual: f64, tolerance: f64 },
    #[error("no Bloch solution: {0}")]
    NoBloch(String),
    #[error("inadmissible perturbation: {0}")]
    Inadmissible(String),
    #[error("not enough data: {0}")]
    NotEnoughData(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage { stage: &'static str, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
