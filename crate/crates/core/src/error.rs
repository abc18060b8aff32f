use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical core.
///
/// Every variant is a validation problem with the caller's input; I/O errors
/// are the companion crate's concern.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two arrays that must agree in shape do not.
    Shape(String),
    /// A label value outside `0..C` that is not the ignore index.
    LabelOutOfRange { x: usize, y: usize, value: u32, class_count: usize },
    /// A class set that must be non-empty is empty, or names a class `>= C`.
    ClassSet(String),
    /// A non-finite or otherwise invalid numeric value.
    Value(String),
    /// Crop geometry does not fit the frame.
    Geometry(String),
    /// Invalid configuration value.
    Config(String),
    /// A feature provider could not produce a requested view.
    MissingView { scene: String, view: String },
    /// A provider failure, annotated with where in training it happened.
    Provider { scene: String, iteration: u64, source: alloc::boxed::Box<Error> },
    /// Input collection that must be non-empty is empty.
    Empty(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(m) => write!(f, "shape mismatch: {m}"),
            Error::LabelOutOfRange { x, y, value, class_count } => write!(
                f,
                "label {value} at pixel ({x}, {y}) is outside 0..{class_count} and is not the ignore index"
            ),
            Error::ClassSet(m) => write!(f, "invalid class set: {m}"),
            Error::Value(m) => write!(f, "invalid value: {m}"),
            Error::Geometry(m) => write!(f, "invalid geometry: {m}"),
            Error::Config(m) => write!(f, "invalid configuration: {m}"),
            Error::MissingView { scene, view } => {
                write!(f, "missing view {view} for scene {scene}")
            }
            Error::Provider { scene, iteration, source } => {
                write!(f, "feature provider failed on scene {scene} at iteration {iteration}: {source}")
            }
            Error::Empty(what) => write!(f, "{what} must not be empty"),
        }
    }
}

impl core::error::Error for Error {}
