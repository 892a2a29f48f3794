//! Poincaré histograms of successive RR pairs and the fitting error between
//! an observed and a simulated series.

use serde::{Deserialize, Serialize};

pub const BIN_LO_MS: f64 = 250.0;
pub const BIN_HI_MS: f64 = 1800.0;
pub const BIN_WIDTH_MS: f64 = 50.0;
pub const BINS_PER_AXIS: usize = 31;
pub const NUM_BINS: usize = BINS_PER_AXIS * BINS_PER_AXIS;

/// 31x31 histogram of successive RR-interval pairs, 50 ms bins over
/// [250, 1800) ms on both axes. Pairs with either coordinate out of range
/// are discarded but counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareHistogram {
    counts: Vec<u32>,
    pub total_pairs: u64,
    pub discarded_pairs: u64,
    /// Sum of the source series' RR intervals (ms).
    pub duration_ms: f64,
}

fn bin_index(rr_ms: f64) -> Option<usize> {
    if rr_ms >= BIN_LO_MS && rr_ms < BIN_HI_MS {
        Some(((rr_ms - BIN_LO_MS) / BIN_WIDTH_MS) as usize)
    } else {
        None
    }
}

impl PoincareHistogram {
    pub fn from_rr(rr: &[f64]) -> Self {
        let mut counts = vec![0u32; NUM_BINS];
        let mut discarded = 0u64;
        for w in rr.windows(2) {
            match (bin_index(w[0]), bin_index(w[1])) {
                (Some(i), Some(j)) => counts[i * BINS_PER_AXIS + j] += 1,
                _ => discarded += 1,
            }
        }
        Self {
            counts,
            total_pairs: rr.len().saturating_sub(1) as u64,
            discarded_pairs: discarded,
            duration_ms: rr.iter().sum(),
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count_at(&self, row: usize, col: usize) -> u32 {
        self.counts[row * BINS_PER_AXIS + col]
    }

    pub fn binned_pairs(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Fitting error between an observed and a simulated histogram.
///
/// Per-bin squared residuals, duration-normalized and weighted by the
/// observed count (floored at 1 so empty observed bins still contribute),
/// averaged over all bins. The normalizer is the simulated-to-observed
/// duration ratio; when either duration is zero it falls back to 1.
pub fn error(obs: &PoincareHistogram, sim: &PoincareHistogram) -> f64 {
    let t_norm = if obs.duration_ms > 0.0 && sim.duration_ms > 0.0 {
        sim.duration_ms / obs.duration_ms
    } else {
        1.0
    };
    let mut total = 0.0;
    for (&x, &x_sim) in obs.counts.iter().zip(&sim.counts) {
        let x = f64::from(x);
        let resid = x - f64::from(x_sim) / t_norm;
        total += resid * resid / x.max(1.0).sqrt();
    }
    total / NUM_BINS as f64
}

/// Histogram difference between consecutive observed segments, used to drive
/// the GA generation budget.
pub fn delta_p(current: &PoincareHistogram, following: &PoincareHistogram) -> f64 {
    error(current, following)
}
