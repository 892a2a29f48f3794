//! Approximate Bayesian computation with population Monte Carlo.
//!
//! Refines the ranked GA estimates of one segment into posterior samples:
//! the initial particle population is drawn around the five fittest GA
//! vectors, then resampled by weight, perturbed with a Gaussian kernel and
//! filtered through a shrinking error threshold for eight iterations. The
//! thresholds are the error values of fixed GA ranks, so the final population
//! sits at or below the best error the GA found.

use nalgebra::{Cholesky, Const, SMatrix, SVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fit::SegmentFit;
use crate::ga::Individual;
use crate::params::{ModelParameters, ParamBounds, THETA_DIM};
use crate::seeds::{Purpose, SeedSchedule};

type Vec12 = SVector<f64, THETA_DIM>;
type Mat12 = SMatrix<f64, THETA_DIM, THETA_DIM>;

/// One weighted posterior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub theta: ModelParameters,
    pub weight: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcSchedule {
    pub n_particles: usize,
    pub n_iterations: usize,
    /// GA ranks (1-based) whose error values become the iteration thresholds.
    pub threshold_ranks: Vec<usize>,
    pub bounds: ParamBounds,
    /// Proposals allowed per particle slot before the segment is abandoned.
    pub max_proposals_per_slot: u64,
}

impl Default for AbcSchedule {
    fn default() -> Self {
        Self {
            n_particles: 100,
            n_iterations: 8,
            threshold_ranks: vec![10, 8, 5, 3, 1, 1, 1, 1],
            bounds: ParamBounds::abc_default(),
            max_proposals_per_slot: 100_000,
        }
    }
}

impl AbcSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 || self.n_particles % 5 != 0 {
            return Err(CoreError::InvalidArgument(format!(
                "n_particles must be a positive multiple of 5, got {}",
                self.n_particles
            )));
        }
        if self.threshold_ranks.len() != self.n_iterations {
            return Err(CoreError::InvalidArgument(format!(
                "{} threshold ranks for {} iterations",
                self.threshold_ranks.len(),
                self.n_iterations
            )));
        }
        if self.n_iterations < 2 {
            return Err(CoreError::InvalidArgument(
                "need at least 2 iterations".into(),
            ));
        }
        Ok(())
    }

    /// Instantiate the error thresholds from the ranked GA output.
    pub fn thresholds(&self, ga_ranked: &[Individual]) -> Result<Vec<f64>> {
        let needed = self.threshold_ranks.iter().copied().max().unwrap_or(0);
        if ga_ranked.len() < needed.max(25) {
            return Err(CoreError::InsufficientData(format!(
                "need {} ranked GA individuals, got {}",
                needed.max(25),
                ga_ranked.len()
            )));
        }
        Ok(self
            .threshold_ranks
            .iter()
            .map(|&rank| ga_ranked[rank - 1].eps)
            .collect())
    }
}

fn to_vec12(theta: &ModelParameters) -> Vec12 {
    Vec12::from_column_slice(&theta.to_vector())
}

fn from_vec12(v: &Vec12) -> ModelParameters {
    let mut arr = [0.0; THETA_DIM];
    arr.copy_from_slice(v.as_slice());
    ModelParameters::from_vector(&arr)
}

/// Sample covariance of a set of parameter vectors (n-1 denominator).
fn covariance(points: &[Vec12]) -> Mat12 {
    let n = points.len();
    if n < 2 {
        return Mat12::zeros();
    }
    let mean: Vec12 = points.iter().sum::<Vec12>() / n as f64;
    let mut cov = Mat12::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov / (n - 1) as f64
}

/// Cholesky factor of `cov`, regularizing a degenerate matrix by adding a
/// small diagonal scaled to the squared search ranges.
fn cholesky_regularized(
    cov: &Mat12,
    bounds: &ParamBounds,
) -> Result<Cholesky<f64, Const<THETA_DIM>>> {
    if let Some(chol) = Cholesky::new(*cov) {
        return Ok(chol);
    }
    let mut reg = *cov;
    for i in 0..THETA_DIM {
        let r = bounds.range(i);
        reg[(i, i)] += 1e-6 * (r * r) / 144.0;
    }
    Cholesky::new(reg).ok_or(CoreError::SingularCovariance)
}

/// Log-density of a multivariate normal with the given Cholesky factor.
fn mvn_logpdf(x: &Vec12, mean: &Vec12, chol: &Cholesky<f64, Const<THETA_DIM>>) -> f64 {
    let d = x - mean;
    let quad = d.dot(&chol.solve(&d));
    let log_det: f64 = (0..THETA_DIM).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (THETA_DIM as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

fn draw_correlated(mean: &Vec12, chol_lower: &Mat12, rng: &mut ChaCha8Rng) -> Vec12 {
    let z = Vec12::from_fn(|_, _| rng.sample(StandardNormal));
    mean + chol_lower * z
}

/// Weighted draw from the cumulative weights (which must end at ~1).
fn sample_index(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|&c| c < u)
        .min(cumulative.len() - 1)
}

/// Initial particle population: equal shares drawn around the five fittest
/// GA vectors with the shared covariance of the 25 fittest; out-of-bounds
/// draws are redrawn. Weights start uniform.
pub fn init_particles(
    ga_ranked: &[Individual],
    schedule: &AbcSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Particle>> {
    schedule.validate()?;
    if ga_ranked.len() < 25 {
        return Err(CoreError::InsufficientData(format!(
            "initial population needs 25 ranked GA individuals, got {}",
            ga_ranked.len()
        )));
    }
    let top25: Vec<Vec12> = ga_ranked[..25].iter().map(|i| to_vec12(&i.theta)).collect();
    let sigma_init = covariance(&top25);
    let chol_lower = cholesky_regularized(&sigma_init, &schedule.bounds)?.l();

    let per_center = schedule.n_particles / 5;
    let mut particles = Vec::with_capacity(schedule.n_particles);
    for center in top25.iter().take(5) {
        for _ in 0..per_center {
            let mut tries = 0u64;
            let theta = loop {
                let draw = draw_correlated(center, &chol_lower, rng);
                let theta = from_vec12(&draw);
                if schedule.bounds.contains(&theta) {
                    break theta;
                }
                tries += 1;
                if tries > schedule.max_proposals_per_slot {
                    return Err(CoreError::AcceptanceStall {
                        iteration: 1,
                        slot: particles.len(),
                        proposals: tries,
                        threshold: f64::INFINITY,
                    });
                }
            };
            particles.push(Particle {
                theta,
                weight: 1.0 / schedule.n_particles as f64,
                eps: f64::INFINITY,
            });
        }
    }
    Ok(particles)
}

/// Unnormalized transition weights for a new population given the previous
/// one (inverse mixture density), computed in log space.
fn transition_log_weights(
    new_thetas: &[Vec12],
    prev: &[Particle],
    prev_thetas: &[Vec12],
    chol: &Cholesky<f64, Const<THETA_DIM>>,
) -> Vec<f64> {
    new_thetas
        .par_iter()
        .map(|nt| {
            let mut max_term = f64::NEG_INFINITY;
            let terms: Vec<f64> = prev
                .iter()
                .zip(prev_thetas)
                .map(|(p, pt)| {
                    let t = p.weight.ln() + mvn_logpdf(pt, nt, chol);
                    if t > max_term {
                        max_term = t;
                    }
                    t
                })
                .collect();
            if max_term == f64::NEG_INFINITY {
                return f64::INFINITY; // all densities underflowed
            }
            let lse = max_term + terms.iter().map(|t| (t - max_term).exp()).sum::<f64>().ln();
            -lse
        })
        .collect()
}

/// Normalize log weights in place into probabilities summing to 1.
fn normalize_log_weights(log_w: &[f64], iteration: usize) -> Result<Vec<f64>> {
    let max_lw = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return Err(CoreError::WeightUnderflow { iteration });
    }
    if log_w.iter().any(|w| !w.is_finite()) {
        return Err(CoreError::WeightUnderflow { iteration });
    }
    let sum: f64 = log_w.iter().map(|&w| (w - max_lw).exp()).sum();
    Ok(log_w.iter().map(|&w| (w - max_lw).exp() / sum).collect())
}

/// Run the full sampler for one segment. Returns the final weighted
/// population; every particle's error is at or below the last threshold.
pub fn run_abc(
    fit: &SegmentFit,
    ga_ranked: &[Individual],
    schedule: &AbcSchedule,
    seeds: &SeedSchedule,
) -> Result<Vec<Particle>> {
    schedule.validate()?;
    let thresholds = schedule.thresholds(ga_ranked)?;
    let segment = u64::from(fit.segment_index);

    let mut rng = seeds.rng(&fit.patient_id, segment, Purpose::AbcInit, 0);
    let mut population = init_particles(ga_ranked, schedule, &mut rng)?;
    let mut thetas: Vec<Vec12> = population.iter().map(|p| to_vec12(&p.theta)).collect();
    let mut sigma = 2.0 * covariance(&thetas);

    for j in 2..=schedule.n_iterations {
        let threshold = thresholds[j - 1];
        let kernel = cholesky_regularized(&sigma, &schedule.bounds)?;
        let kernel_lower = kernel.l();
        let cumulative: Vec<f64> = population
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p.weight;
                Some(*acc)
            })
            .collect();

        let accepted: Result<Vec<(ModelParameters, f64)>> = (0..schedule.n_particles)
            .into_par_iter()
            .map(|slot| {
                let replicate = (j as u64) << 32 | slot as u64;
                let mut rng = seeds.rng(&fit.patient_id, segment, Purpose::AbcSlot, replicate);
                let mut proposals = 0u64;
                loop {
                    proposals += 1;
                    if proposals > schedule.max_proposals_per_slot {
                        return Err(CoreError::AcceptanceStall {
                            iteration: j,
                            slot,
                            proposals: proposals - 1,
                            threshold,
                        });
                    }
                    let pick = sample_index(&cumulative, rng.gen::<f64>());
                    let proposal = draw_correlated(&thetas[pick], &kernel_lower, &mut rng);
                    let theta = from_vec12(&proposal);
                    if !schedule.bounds.contains(&theta) {
                        continue; // outside the box: always rejected
                    }
                    let sim_seed = rng.gen::<u64>();
                    let eps = fit.eps(&theta, sim_seed);
                    if eps <= threshold {
                        return Ok((theta, eps));
                    }
                }
            })
            .collect();
        let accepted = accepted?;

        let new_thetas: Vec<Vec12> = accepted.iter().map(|(t, _)| to_vec12(t)).collect();
        let log_w = transition_log_weights(&new_thetas, &population, &thetas, &kernel);
        let weights = normalize_log_weights(&log_w, j)?;

        population = accepted
            .into_iter()
            .zip(&weights)
            .map(|((theta, eps), &weight)| Particle { theta, weight, eps })
            .collect();
        thetas = new_thetas;
        sigma = 2.0 * covariance(&thetas);
    }

    Ok(population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RrSegment;
    use crate::model::{simulate, CouplingConfig};

    fn ranked_around(center: &ModelParameters, spread: f64, n: usize) -> Vec<Individual> {
        // Deterministic fan of vectors around a center, eps increasing with rank.
        let bounds = ParamBounds::ga_default();
        (0..n)
            .map(|i| {
                let mut v = center.to_vector();
                for (dim, x) in v.iter_mut().enumerate() {
                    let offset = ((i * 7 + dim * 3) % 11) as f64 / 11.0 - 0.5;
                    *x += offset * spread * bounds.range(dim);
                }
                bounds.clamp_vector(&mut v);
                Individual {
                    theta: ModelParameters::from_vector(&v),
                    eps: 1.0 + i as f64 * 0.1,
                }
            })
            .collect()
    }

    #[test]
    fn schedule_validation() {
        let mut s = AbcSchedule::default();
        s.validate().unwrap();
        s.n_particles = 33;
        assert!(s.validate().is_err());
        s.n_particles = 50;
        s.threshold_ranks = vec![10, 1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn thresholds_follow_ga_ranks_and_never_increase() {
        let ranked = ranked_around(&ParamBounds::ga_default().midpoint(), 0.02, 25);
        let schedule = AbcSchedule::default();
        let t = schedule.thresholds(&ranked).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(t[0], ranked[9].eps);
        assert_eq!(t[1], ranked[7].eps);
        assert_eq!(t[2], ranked[4].eps);
        assert_eq!(t[3], ranked[2].eps);
        for k in 4..8 {
            assert_eq!(t[k], ranked[0].eps);
        }
        for w in t.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn init_draws_twenty_per_center_with_uniform_weights() {
        let ranked = ranked_around(&ParamBounds::ga_default().midpoint(), 0.02, 25);
        let schedule = AbcSchedule::default();
        let seeds = SeedSchedule::new(3);
        let mut rng = seeds.rng("p", 0, Purpose::AbcInit, 0);
        let particles = init_particles(&ranked, &schedule, &mut rng).unwrap();
        assert_eq!(particles.len(), 100);
        let total: f64 = particles.iter().map(|p| p.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(particles.iter().all(|p| (p.weight - 0.01).abs() < 1e-15));
        assert!(particles
            .iter()
            .all(|p| schedule.bounds.contains(&p.theta)));
    }

    #[test]
    fn degenerate_ga_output_is_regularized() {
        // All 25 ranked vectors identical: zero covariance.
        let center = ParamBounds::ga_default().midpoint();
        let ranked: Vec<Individual> = (0..25)
            .map(|_| Individual { theta: center, eps: 1.0 })
            .collect();
        let schedule = AbcSchedule::default();
        let seeds = SeedSchedule::new(4);
        let mut rng = seeds.rng("p", 0, Purpose::AbcInit, 0);
        let particles = init_particles(&ranked, &schedule, &mut rng).unwrap();
        let cv = center.to_vector();
        for p in &particles {
            let pv = p.theta.to_vector();
            for i in 0..THETA_DIM {
                // regularized sigma is ~1e-3 of the range: draws hug the center
                assert!(
                    (pv[i] - cv[i]).abs() < 0.05 * schedule.bounds.range(i),
                    "coordinate {i} drifted"
                );
            }
        }
    }

    #[test]
    fn weight_update_matches_scalar_gaussian_oracle() {
        // Two-particle, effectively 1-D case: only coordinate 0 varies.
        // Hand-computed mixture densities from the scalar normal pdf.
        let base = ParamBounds::abc_default().midpoint();
        let mk = |x0: f64| {
            let mut v = base.to_vector();
            v[0] = x0;
            to_vec12(&ModelParameters::from_vector(&v))
        };
        let prev_thetas = vec![mk(600.0), mk(601.0)];
        let prev = vec![
            Particle { theta: from_vec12(&prev_thetas[0]), weight: 0.5, eps: 1.0 },
            Particle { theta: from_vec12(&prev_thetas[1]), weight: 0.5, eps: 1.0 },
        ];
        // Kernel: identity covariance (sigma^2 = 1 in every coordinate).
        let chol = Cholesky::new(Mat12::identity()).unwrap();
        let new_thetas = vec![mk(600.0), mk(603.0)];
        let lw = transition_log_weights(&new_thetas, &prev, &prev_thetas, &chol);

        let phi = |d: f64| (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let scale = (2.0 * std::f64::consts::PI).sqrt().powi(-(THETA_DIM as i32 - 1));
        let mix0 = 0.5 * phi(0.0) * scale + 0.5 * phi(1.0) * scale;
        let mix1 = 0.5 * phi(3.0) * scale + 0.5 * phi(2.0) * scale;
        assert!((lw[0] - (1.0 / mix0).ln()).abs() < 1e-9);
        assert!((lw[1] - (1.0 / mix1).ln()).abs() < 1e-9);
        // The far particle gets the larger weight.
        assert!(lw[1] > lw[0]);

        let w = normalize_log_weights(&lw, 2).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let expected0 = (1.0 / mix0) / (1.0 / mix0 + 1.0 / mix1);
        assert!((w[0] - expected0).abs() < 1e-9);
    }

    #[test]
    fn single_point_mass_weight_is_inverse_density_at_mode() {
        let base = ParamBounds::abc_default().midpoint();
        let theta = to_vec12(&base);
        let prev = vec![Particle { theta: base, weight: 1.0, eps: 1.0 }];
        let chol = Cholesky::new(Mat12::identity()).unwrap();
        let lw = transition_log_weights(&[theta], &prev, &[theta], &chol);
        let density_at_mode = (2.0 * std::f64::consts::PI).sqrt().powi(-(THETA_DIM as i32));
        assert!((lw[0] - (1.0 / density_at_mode).ln()).abs() < 1e-9);
    }

    #[test]
    fn abc_full_run_contract_small_scale() {
        // Small synthetic segment; the final population must sit at or below
        // the best GA error, inside bounds, with normalized weights.
        let coupling = CouplingConfig { rp_ms: 320.0, cd_ms: 60.0 };
        let truth = ParamBounds::ga_default().midpoint();
        let sim = simulate(&truth, &coupling, 8.0, 600_000.0, 1, false).unwrap();
        let seg = RrSegment {
            patient_id: "synth".into(),
            segment_index: 0,
            start_ms: 0,
            rr_intervals: sim.rr_after_warmup().to_vec(),
            n_beats: sim.ventricular_times.len(),
            lambda_hat: 8.0,
            wall_clock_start_ms: 0,
        };
        let fit = SegmentFit::new(&seg, coupling);
        let seeds = SeedSchedule::new(7);

        // Rank 25 individuals by their true eps around the generator.
        let mut ranked = ranked_around(&truth, 0.03, 25);
        for (i, ind) in ranked.iter_mut().enumerate() {
            ind.eps = fit.eps(&ind.theta, 1000 + i as u64);
        }
        ranked.sort_by(|a, b| a.eps.total_cmp(&b.eps));

        let schedule = AbcSchedule {
            n_particles: 10,
            n_iterations: 4,
            threshold_ranks: vec![20, 10, 5, 1],
            ..AbcSchedule::default()
        };
        let best_ga = ranked[0].eps;
        let particles = run_abc(&fit, &ranked, &schedule, &seeds).unwrap();

        assert_eq!(particles.len(), 10);
        let wsum: f64 = particles.iter().map(|p| p.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-9);
        for p in &particles {
            assert!(p.eps <= best_ga);
            assert!(p.weight > 0.0);
            assert!(schedule.bounds.contains(&p.theta));
        }

        // Determinism.
        let again = run_abc(&fit, &ranked, &schedule, &seeds).unwrap();
        assert_eq!(particles, again);
    }

    #[test]
    fn infinite_thresholds_reduce_to_resample_perturb_chain() {
        // Smoke property: with every threshold at +inf each in-bounds proposal
        // is accepted immediately and the population just stays inside bounds.
        let coupling = CouplingConfig { rp_ms: 320.0, cd_ms: 60.0 };
        let truth = ParamBounds::ga_default().midpoint();
        let sim = simulate(&truth, &coupling, 8.0, 120_000.0, 2, false).unwrap();
        let seg = RrSegment {
            patient_id: "smoke".into(),
            segment_index: 0,
            start_ms: 0,
            rr_intervals: sim.rr_after_warmup().to_vec(),
            n_beats: sim.ventricular_times.len(),
            lambda_hat: 8.0,
            wall_clock_start_ms: 0,
        };
        let fit = SegmentFit::new(&seg, coupling);
        let mut ranked = ranked_around(&truth, 0.05, 25);
        for ind in &mut ranked {
            ind.eps = f64::INFINITY;
        }
        let schedule = AbcSchedule {
            n_particles: 10,
            n_iterations: 3,
            threshold_ranks: vec![10, 5, 1],
            ..AbcSchedule::default()
        };
        let particles = run_abc(&fit, &ranked, &schedule, &SeedSchedule::new(9)).unwrap();
        assert_eq!(particles.len(), 10);
        assert!(particles.iter().all(|p| schedule.bounds.contains(&p.theta)));
        let wsum: f64 = particles.iter().map(|p| p.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_center_rejection() {
        // A proposal outside the ABC box must be rejected regardless of eps:
        // verified structurally by bounds.contains on an upper-edge vector.
        let bounds = ParamBounds::abc_default();
        let mut v = bounds.midpoint().to_vector();
        v[0] = 1400.0;
        assert!(!bounds.contains_vector(&v));
    }
}
