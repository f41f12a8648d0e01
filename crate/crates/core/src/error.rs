use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no vector sensitivity: rotating-field amplitude is zero")]
    NoVectorSensitivity,

    #[error("no transverse sensitivity: cone angle is zero")]
    NoTransverseSensitivity,

    #[error("time {t} s is outside the block [0, {end}) s")]
    OutOfBlock { t: f64, end: f64 },

    #[error("undersampled eddy filter: dt = {dt} s must be below tau_e/10 = {limit} s")]
    UndersampledEddy { dt: f64, limit: f64 },

    #[error("integration step {dt} s exceeds 1/(50 f_Larmor) = {limit} s")]
    StepTooLarge { dt: f64, limit: f64 },

    #[error("non-finite field at t = {t} s")]
    NonFiniteField { t: f64 },

    #[error("closed form not applicable: {0}")]
    ClosedForm(String),

    #[error("no threshold crossings found")]
    NoCrossings,

    #[error("signal lost at t = {t} s")]
    SignalLost { t: f64 },

    #[error("reference {reference_hz} Hz is not within 20% of the signal frequency {signal_hz} Hz")]
    ReferenceMismatch { reference_hz: f64, signal_hz: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design matrix (condition ratio {0:e})")]
    RankDeficient(f64),

    #[error("outside validity: {0}")]
    OutsideValidity(String),

    #[error("shot {shot}: {source}")]
    Shot {
        shot: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Library module the failure originates in, for diagnostics.
    pub fn module(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "config",
            Error::NoVectorSensitivity | Error::NoTransverseSensitivity => "model",
            Error::OutOfBlock { .. } | Error::UndersampledEddy { .. } => "waveform",
            Error::StepTooLarge { .. } | Error::NonFiniteField { .. } | Error::ClosedForm(_) => "spin_sim",
            Error::NoCrossings | Error::SignalLost { .. } | Error::ReferenceMismatch { .. } => "detection",
            Error::InsufficientData(_) | Error::RankDeficient(_) => "harmonic_fit",
            Error::OutsideValidity(_) => "sensitivity",
            Error::Shot { source, .. } => source.module(),
        }
    }

    pub(crate) fn in_shot(self, shot: usize) -> Self {
        Error::Shot { shot, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
