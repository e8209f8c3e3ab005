use crate::error::{Error, Result};

/// Exponential decay with the time gap between two instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecencyModel {
    /// Decay scale in time units.
    pub h: f64,
}

impl RecencyModel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("recency scale must be positive, got {h}")));
        }
        Ok(Self { h })
    }

    /// `exp(-|t_i - t_j| / h)`
    pub fn sim(&self, t_i: f64, t_j: f64) -> f64 {
        (-(t_i - t_j).abs() / self.h).exp()
    }
}
