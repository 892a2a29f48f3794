//! Shared evaluation context: how a candidate parameter vector is scored
//! against one observed segment.

use crate::ingest::RrSegment;
use crate::model::{self, CouplingConfig};
use crate::params::ModelParameters;
use crate::poincare::{self, PoincareHistogram};

/// Everything needed to score a parameter vector against one segment.
#[derive(Debug, Clone)]
pub struct SegmentFit {
    pub patient_id: String,
    pub segment_index: u32,
    pub lambda_hz: f64,
    pub coupling: CouplingConfig,
    pub observed: PoincareHistogram,
    pub sim_duration_ms: f64,
}

impl SegmentFit {
    pub fn new(segment: &RrSegment, coupling: CouplingConfig) -> Self {
        Self {
            patient_id: segment.patient_id.clone(),
            segment_index: segment.segment_index,
            lambda_hz: segment.lambda_hat,
            coupling,
            observed: PoincareHistogram::from_rr(&segment.rr_intervals),
            sim_duration_ms: 600_000.0,
        }
    }

    /// Simulate under `theta` and return the histogram error against the
    /// observed segment. Runs that produce fewer than two RR intervals after
    /// warm-up score +inf.
    pub fn eps(&self, theta: &ModelParameters, seed: u64) -> f64 {
        let sim = match model::simulate(
            theta,
            &self.coupling,
            self.lambda_hz,
            self.sim_duration_ms,
            seed,
            false,
        ) {
            Ok(s) => s,
            Err(_) => return f64::INFINITY,
        };
        let rr = sim.rr_after_warmup();
        if rr.len() < 2 {
            return f64::INFINITY;
        }
        poincare::error(&self.observed, &PoincareHistogram::from_rr(rr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamBounds;

    fn segment_from(theta: &ModelParameters, coupling: &CouplingConfig, seed: u64) -> RrSegment {
        let sim = model::simulate(theta, coupling, 8.0, 600_000.0, seed, false).unwrap();
        RrSegment {
            patient_id: "synth".into(),
            segment_index: 0,
            start_ms: 0,
            rr_intervals: sim.rr_after_warmup().to_vec(),
            n_beats: sim.ventricular_times.len(),
            lambda_hat: 8.0,
            wall_clock_start_ms: 0,
        }
    }

    #[test]
    fn eps_is_deterministic_and_discriminates() {
        let coupling = CouplingConfig { rp_ms: 300.0, cd_ms: 60.0 };
        let truth = ParamBounds::ga_default().midpoint();
        let seg = segment_from(&truth, &coupling, 1);
        let fit = SegmentFit::new(&seg, coupling);

        let e1 = fit.eps(&truth, 99);
        let e2 = fit.eps(&truth, 99);
        assert_eq!(e1.to_bits(), e2.to_bits());

        // A blocked-everything candidate scores far worse than the generator.
        let mut blocked = truth;
        blocked.fp.r_min = 1000.0;
        blocked.fp.r_delta = 1000.0;
        blocked.sp.r_min = 1000.0;
        blocked.sp.r_delta = 1000.0;
        let e_blocked = fit.eps(&blocked, 99);
        assert!(e_blocked > e1 * 3.0, "blocked {e_blocked} vs truth {e1}");
    }
}
