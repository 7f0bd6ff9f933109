use crate::mfgp::Domain;
use crate::Result;

/// A model that can be queried at any design point and fidelity.
///
/// Implemented by the synthetic benchmarks and by the external-process adapter.
pub trait MultifidelityModel: Send + Sync {
    fn domain(&self) -> &Domain;

    fn evaluate(&self, x: &[f64], s: f64) -> Result<f64>;
}
