//! Built-in example models.

pub mod gompertz;
pub mod ricker;
pub mod sir;

use crate::data::TimeSeriesData;
use crate::error::{Error, Result};
use crate::model::ModelSpec;

pub use gompertz::gompertz;
pub use ricker::ricker;
pub use sir::{sir, sir_seasonal};

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = ["gompertz", "ricker", "sir", "sir-seasonal"];

/// Builds a built-in model by name, on `data` if given (otherwise on the
/// model's default observation times with missing values).
pub fn by_name(name: &str, data: Option<TimeSeriesData>) -> Result<ModelSpec> {
    match name {
        "gompertz" => gompertz(data),
        "ricker" => ricker(data),
        "sir" => sir(data),
        "sir-seasonal" => sir_seasonal(data, None),
        other => Err(Error::invalid(
            "model",
            format!("unknown model `{other}`; expected one of {}", NAMES.join(", ")),
        )),
    }
}

/// Observable names of a built-in model.
pub fn observables(name: &str) -> Result<Vec<String>> {
    Ok(by_name(name, None)?.obs_names().to_vec())
}
