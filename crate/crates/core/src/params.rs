//! Model parameter vector and estimator bounds.
//!
//! Each AV-node pathway is described by six scalars: the refractory-period
//! recovery curve (r_min, r_delta, tau_r) and the conduction-delay recovery
//! curve (d_min, d_delta, tau_d), all in milliseconds. The fast and slow
//! pathway together form the 12-dimensional vector the estimators search.

use serde::{Deserialize, Serialize};

pub const THETA_DIM: usize = 12;

/// Recovery-curve parameters of one pathway (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathwayParams {
    pub r_min: f64,
    pub r_delta: f64,
    pub tau_r: f64,
    pub d_min: f64,
    pub d_delta: f64,
    pub tau_d: f64,
}

impl PathwayParams {
    /// Refractory period after a diastolic interval `tilde_ms` >= 0.
    ///
    /// tau_r = 0 is treated as the limit: a step to r_min + r_delta for any
    /// positive diastolic interval.
    pub fn refractory(&self, tilde_ms: f64) -> f64 {
        self.r_min + self.r_delta * (1.0 - recovery_decay(tilde_ms, self.tau_r))
    }

    /// Conduction delay after a diastolic interval `tilde_ms` >= 0.
    pub fn delay(&self, tilde_ms: f64) -> f64 {
        self.d_min + self.d_delta * recovery_decay(tilde_ms, self.tau_d)
    }
}

/// exp(-tilde/tau) with the degenerate cases pinned: tilde = 0 gives 1,
/// tau = 0 with tilde > 0 gives 0.
fn recovery_decay(tilde_ms: f64, tau_ms: f64) -> f64 {
    if tilde_ms <= 0.0 {
        1.0
    } else if tau_ms <= 0.0 {
        0.0
    } else {
        (-tilde_ms / tau_ms).exp()
    }
}

/// The full parameter vector theta: fast pathway then slow pathway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters {
    pub fp: PathwayParams,
    pub sp: PathwayParams,
}

impl ModelParameters {
    pub fn to_vector(&self) -> [f64; THETA_DIM] {
        [
            self.fp.r_min,
            self.fp.r_delta,
            self.fp.tau_r,
            self.fp.d_min,
            self.fp.d_delta,
            self.fp.tau_d,
            self.sp.r_min,
            self.sp.r_delta,
            self.sp.tau_r,
            self.sp.d_min,
            self.sp.d_delta,
            self.sp.tau_d,
        ]
    }

    pub fn from_vector(v: &[f64; THETA_DIM]) -> Self {
        let pw = |o: usize| PathwayParams {
            r_min: v[o],
            r_delta: v[o + 1],
            tau_r: v[o + 2],
            d_min: v[o + 3],
            d_delta: v[o + 4],
            tau_d: v[o + 5],
        };
        Self { fp: pw(0), sp: pw(6) }
    }
}

/// Per-coordinate box bounds for an estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub lo: [f64; THETA_DIM],
    pub hi: [f64; THETA_DIM],
}

/// One pathway's coordinate ranges, repeated for both pathways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathwayRanges {
    pub r_min: (f64, f64),
    pub r_delta: (f64, f64),
    pub tau_r: (f64, f64),
    pub d_min: (f64, f64),
    pub d_delta: (f64, f64),
    pub tau_d: (f64, f64),
}

impl ParamBounds {
    pub fn from_ranges(r: &PathwayRanges) -> Self {
        let per = [r.r_min, r.r_delta, r.tau_r, r.d_min, r.d_delta, r.tau_d];
        let mut lo = [0.0; THETA_DIM];
        let mut hi = [0.0; THETA_DIM];
        for p in 0..2 {
            for (i, (l, h)) in per.iter().enumerate() {
                lo[p * 6 + i] = *l;
                hi[p * 6 + i] = *h;
            }
        }
        Self { lo, hi }
    }

    /// Search box used by the genetic algorithm.
    pub fn ga_default() -> Self {
        Self::from_ranges(&PathwayRanges {
            r_min: (100.0, 1000.0),
            r_delta: (0.0, 1000.0),
            tau_r: (25.0, 500.0),
            d_min: (2.0, 50.0),
            d_delta: (0.0, 100.0),
            tau_d: (25.0, 500.0),
        })
    }

    /// Wider box used by the ABC sampler so the posterior tails fit.
    pub fn abc_default() -> Self {
        Self::from_ranges(&PathwayRanges {
            r_min: (30.0, 1300.0),
            r_delta: (0.0, 1300.0),
            tau_r: (10.0, 700.0),
            d_min: (0.1, 80.0),
            d_delta: (0.0, 130.0),
            tau_d: (10.0, 700.0),
        })
    }

    pub fn range(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn contains(&self, theta: &ModelParameters) -> bool {
        let v = theta.to_vector();
        (0..THETA_DIM).all(|i| v[i] >= self.lo[i] && v[i] <= self.hi[i])
    }

    pub fn contains_vector(&self, v: &[f64; THETA_DIM]) -> bool {
        (0..THETA_DIM).all(|i| v[i] >= self.lo[i] && v[i] <= self.hi[i])
    }

    pub fn clamp_vector(&self, v: &mut [f64; THETA_DIM]) {
        for i in 0..THETA_DIM {
            v[i] = v[i].clamp(self.lo[i], self.hi[i]);
        }
    }

    /// Midpoint of the box, handy as a reference parameter set.
    pub fn midpoint(&self) -> ModelParameters {
        let mut v = [0.0; THETA_DIM];
        for i in 0..THETA_DIM {
            v[i] = 0.5 * (self.lo[i] + self.hi[i]);
        }
        ModelParameters::from_vector(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pw() -> PathwayParams {
        PathwayParams {
            r_min: 250.0,
            r_delta: 600.0,
            tau_r: 120.0,
            d_min: 5.0,
            d_delta: 50.0,
            tau_d: 80.0,
        }
    }

    #[test]
    fn refractory_limits() {
        let p = pw();
        assert_eq!(p.refractory(0.0), 250.0);
        assert!((p.refractory(f64::INFINITY) - 850.0).abs() < 1e-12);
        let at_tau = 250.0 + 600.0 * (1.0 - (-1.0f64).exp());
        assert!((p.refractory(120.0) - at_tau).abs() < 1e-9);
        assert!((at_tau - 629.27).abs() < 0.01);
    }

    #[test]
    fn delay_limits() {
        let p = pw();
        assert_eq!(p.delay(0.0), 55.0);
        assert!((p.delay(f64::INFINITY) - 5.0).abs() < 1e-12);
        let at_tau = 5.0 + 50.0 * (-1.0f64).exp();
        assert!((p.delay(80.0) - at_tau).abs() < 1e-9);
        assert!((at_tau - 23.39).abs() < 0.01);
    }

    #[test]
    fn zero_tau_is_a_step() {
        let mut p = pw();
        p.tau_r = 0.0;
        p.tau_d = 0.0;
        assert_eq!(p.refractory(0.0), 250.0);
        assert_eq!(p.refractory(1e-9), 850.0);
        assert_eq!(p.delay(0.0), 55.0);
        assert_eq!(p.delay(1e-9), 5.0);
    }

    #[test]
    fn vector_round_trip() {
        let theta = ModelParameters { fp: pw(), sp: pw() };
        let v = theta.to_vector();
        assert_eq!(ModelParameters::from_vector(&v), theta);
    }

    #[test]
    fn bounds_tables() {
        let ga = ParamBounds::ga_default();
        assert_eq!(ga.lo[0], 100.0);
        assert_eq!(ga.hi[0], 1000.0);
        assert_eq!(ga.lo[3], 2.0);
        assert_eq!(ga.hi[4], 100.0);
        let abc = ParamBounds::abc_default();
        assert_eq!(abc.lo[0], 30.0);
        assert_eq!(abc.hi[0], 1300.0);
        assert_eq!(abc.lo[3], 0.1);
        assert_eq!(abc.hi[11], 700.0);
        // GA box sits inside the ABC box
        for i in 0..THETA_DIM {
            assert!(abc.lo[i] <= ga.lo[i] && ga.hi[i] <= abc.hi[i]);
        }
    }

    #[test]
    fn contains_and_clamp() {
        let ga = ParamBounds::ga_default();
        assert!(ga.contains(&ga.midpoint()));
        let mut v = ga.midpoint().to_vector();
        v[0] = 5000.0;
        assert!(!ga.contains_vector(&v));
        ga.clamp_vector(&mut v);
        assert_eq!(v[0], 1000.0);
        assert!(ga.contains_vector(&v));
    }
}
