//! Policy simulator: generates sample sets from placement policies whose
//! entropies are known exactly.

pub mod analytic;
pub mod builtin;
pub mod generate;
pub mod policy;
pub mod rng;

pub use analytic::{analytic_corr_entropy, analytic_entropy, Analytic};
pub use builtin::{builtin, BUILTIN_NAMES};
pub use generate::{generate, generate_with_seed};
pub use policy::{Direction, Mode, ObjectPlacement, OffsetMode, PolicySpec, UniformRange};
pub use rng::{CounterRng, RNG_ID};

/// A builtin name or a path to a policy JSON file.
pub fn load_policy(name_or_path: &str) -> crate::Result<PolicySpec> {
    if let Some(p) = builtin(name_or_path) {
        return Ok(p);
    }
    let text = std::fs::read_to_string(name_or_path)?;
    PolicySpec::from_json(&text)
}
