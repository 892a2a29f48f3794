//! From posterior parameter samples to interpretable per-segment properties.
//!
//! Every posterior particle drives one tracked ten-minute simulation; the
//! recorded per-activation refractory periods and conduction delays are
//! pooled per pathway and summarized by their density mode, 5th/95th
//! percentiles and the slow-pathway conduction share.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{self, CouplingConfig};
use crate::params::ModelParameters;
use crate::seeds::{Purpose, SeedSchedule};
use crate::stats;

pub const KDE_GRID_POINTS: usize = 512;
const KDE_MAX_EXACT_SAMPLES: usize = 4096;

/// Pooled per-activation samples for one segment (ms), plus pathway counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertySamples {
    pub r_fp: Vec<f64>,
    pub r_sp: Vec<f64>,
    pub d_fp: Vec<f64>,
    pub d_sp: Vec<f64>,
    pub n_fp: u64,
    pub n_sp: u64,
}

impl PropertySamples {
    pub fn property(&self, index: usize) -> &[f64] {
        match index {
            0 => &self.r_fp,
            1 => &self.r_sp,
            2 => &self.d_fp,
            3 => &self.d_sp,
            _ => panic!("property index {index} out of range"),
        }
    }

    pub fn total_samples(&self) -> usize {
        self.r_fp.len() + self.r_sp.len() + self.d_fp.len() + self.d_sp.len()
    }

    /// Seeded subsample of each pool down to `cap` values, for bounded-memory
    /// distance computations.
    pub fn subsampled(&self, cap: usize, rng: &mut ChaCha8Rng) -> PropertySamples {
        let mut take = |xs: &[f64]| -> Vec<f64> {
            if xs.len() <= cap {
                xs.to_vec()
            } else {
                let mut idx: Vec<usize> = (0..xs.len()).collect();
                idx.shuffle(rng);
                idx.truncate(cap);
                idx.sort_unstable();
                idx.into_iter().map(|i| xs[i]).collect()
            }
        };
        PropertySamples {
            r_fp: take(&self.r_fp),
            r_sp: take(&self.r_sp),
            d_fp: take(&self.d_fp),
            d_sp: take(&self.d_sp),
            n_fp: self.n_fp,
            n_sp: self.n_sp,
        }
    }
}

/// Per-segment summary of the four property distributions
/// (order: R fast, R slow, D fast, D slow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySummary {
    pub phi_max: [f64; 4],
    pub phi_5: [f64; 4],
    pub phi_95: [f64; 4],
    /// Share of conducted impulses that came through the slow pathway;
    /// None when nothing conducted.
    pub sp_ratio: Option<f64>,
}

/// Run one tracked simulation per parameter vector and pool the samples.
pub fn reduce(
    thetas: &[ModelParameters],
    lambda_hz: f64,
    coupling: &CouplingConfig,
    seeds: &SeedSchedule,
    patient: &str,
    segment: u32,
    duration_ms: f64,
) -> Result<PropertySamples> {
    if thetas.is_empty() {
        return Err(CoreError::InvalidArgument("no parameter vectors to reduce".into()));
    }
    let runs: Result<Vec<model::SimulationResult>> = thetas
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let seed = seeds.derive(patient, u64::from(segment), Purpose::Reduce, i as u64);
            model::simulate(theta, coupling, lambda_hz, duration_ms, seed, true)
        })
        .collect();

    let mut pooled = PropertySamples::default();
    for run in runs? {
        let tracked = run.tracked.expect("tracking requested");
        pooled.r_fp.extend(tracked.r_fp);
        pooled.r_sp.extend(tracked.r_sp);
        pooled.d_fp.extend(tracked.d_fp);
        pooled.d_sp.extend(tracked.d_sp);
        pooled.n_fp += run.n_fp;
        pooled.n_sp += run.n_sp;
    }
    Ok(pooled)
}

/// Location of the maximum of a Gaussian-kernel density estimate with the
/// normal-reference (Silverman) bandwidth, evaluated on a uniform grid over
/// [min - 3h, max + 3h]; grid ties resolve to the lowest value and the
/// result is clamped into the sample range.
pub fn kde_mode(samples: &[f64]) -> Result<f64> {
    match samples.len() {
        0 => return Err(CoreError::EmptyInput("kde_mode".into())),
        1 => return Ok(samples[0]),
        _ => {}
    }
    let n = samples.len();
    let sigma = stats::sample_std(samples);
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if sigma == 0.0 {
        return Ok(samples[0]);
    }
    let h = sigma * (4.0 / (3.0 * n as f64)).powf(0.2);

    // Large pools are first binned; the kernel sum over bin centers is
    // indistinguishable from the exact sum at this grid resolution.
    let (centers, weights): (Vec<f64>, Vec<f64>) = if n <= KDE_MAX_EXACT_SAMPLES {
        (samples.to_vec(), vec![1.0; n])
    } else {
        let nbins = KDE_MAX_EXACT_SAMPLES;
        let width = (max - min) / nbins as f64;
        let mut counts = vec![0.0f64; nbins];
        for &x in samples {
            let b = (((x - min) / width) as usize).min(nbins - 1);
            counts[b] += 1.0;
        }
        let centers = (0..nbins).map(|b| min + (b as f64 + 0.5) * width).collect();
        (centers, counts)
    };

    let lo = min - 3.0 * h;
    let hi = max + 3.0 * h;
    let step = (hi - lo) / (KDE_GRID_POINTS - 1) as f64;
    let mut best_x = lo;
    let mut best_f = f64::NEG_INFINITY;
    for g in 0..KDE_GRID_POINTS {
        let x = lo + g as f64 * step;
        let mut f = 0.0;
        for (&c, &w) in centers.iter().zip(&weights) {
            let z = (x - c) / h;
            f += w * (-0.5 * z * z).exp();
        }
        if f > best_f {
            best_f = f;
            best_x = x;
        }
    }
    Ok(best_x.clamp(min, max))
}

/// Empirical 5th and 95th percentiles (linear interpolation between order
/// statistics).
pub fn percentiles(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(CoreError::EmptyInput("percentiles".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok((stats::quantile_sorted(&v, 0.05), stats::quantile_sorted(&v, 0.95)))
}

/// Share of coupling-node transmissions that came through the slow pathway.
pub fn sp_ratio(n_fp: u64, n_sp: u64) -> Option<f64> {
    if n_fp + n_sp == 0 {
        None
    } else {
        Some(n_sp as f64 / (n_fp + n_sp) as f64)
    }
}

/// Summarize pooled samples into the per-segment record. Pools left empty by
/// a silent pathway yield NaN summaries for that property.
pub fn summarize(samples: &PropertySamples) -> PropertySummary {
    let mut phi_max = [f64::NAN; 4];
    let mut phi_5 = [f64::NAN; 4];
    let mut phi_95 = [f64::NAN; 4];
    for i in 0..4 {
        let pool = samples.property(i);
        if pool.is_empty() {
            continue;
        }
        phi_max[i] = kde_mode(pool).expect("non-empty pool");
        let (p5, p95) = percentiles(pool).expect("non-empty pool");
        phi_5[i] = p5;
        phi_95[i] = p95;
    }
    PropertySummary {
        phi_max,
        phi_5,
        phi_95,
        sp_ratio: sp_ratio(samples.n_fp, samples.n_sp),
    }
}
