//! Compound-Poisson task arrivals with truncated-normal task sizes.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::config::AppProfile;
use crate::error::{Error, Result};

/// Upper bound on rejection-sampling draws for a single task size.
pub const MAX_REJECTION_DRAWS: usize = 1_000_000;

/// Draws one task size (bits) from `N(size_mean, size_std)` truncated to
/// `[size_min, size_max]` by rejection.
pub fn sample_task_size<R: Rng + ?Sized>(app: &AppProfile, rng: &mut R) -> Result<f64> {
    let normal = Normal::new(app.size_mean, app.size_std)
        .map_err(|e| Error::InvalidConfig(vec![format!("task size distribution: {e}")]))?;
    for _ in 0..MAX_REJECTION_DRAWS {
        let x = normal.sample(rng);
        if x >= app.size_min && x <= app.size_max {
            return Ok(x);
        }
    }
    Err(Error::SamplerExhausted { draws: MAX_REJECTION_DRAWS })
}

/// Total bits arriving at one queue during a slot.
pub fn sample_app_arrival<R: Rng + ?Sized>(app: &AppProfile, rng: &mut R) -> Result<f64> {
    if app.arrival_rate <= 0.0 {
        return Ok(0.0);
    }
    let poisson = Poisson::new(app.arrival_rate)
        .map_err(|e| Error::InvalidConfig(vec![format!("arrival process: {e}")]))?;
    let count = poisson.sample(rng) as u64;
    let mut total = 0.0;
    for _ in 0..count {
        total += sample_task_size(app, rng)?;
    }
    Ok(total)
}

/// One slot of arrivals for every queue, in bits.
pub fn sample_arrivals<R: Rng + ?Sized>(apps: &[AppProfile], rng: &mut R) -> Result<Vec<f64>> {
    apps.iter().map(|app| sample_app_arrival(app, rng)).collect()
}
