//! Dynamic genetic algorithm for the initial per-segment parameter estimates.
//!
//! The population is carried across a patient's segments; the number of
//! generations spent on a segment follows how much its Poincaré histogram
//! differs from the previous one, and immigration of fresh latin-hypercube
//! samples at every segment hand-off keeps diversity up.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::SegmentFit;
use crate::params::{ModelParameters, ParamBounds, THETA_DIM};
use crate::seeds::{Purpose, SeedSchedule};
use crate::stats;

/// One candidate parameter vector with its error on the current segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub theta: ModelParameters,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub tournament_size: usize,
    pub crossover_rate: f64,
    /// Per-coordinate probability of a creep perturbation.
    pub mutation_rate: f64,
    /// Creep width as a fraction of the coordinate's range.
    pub mutation_width: f64,
    /// Least-fit individuals replaced by fresh samples at segment hand-off.
    pub immigration_count: usize,
    pub elite_count: usize,
    pub generations_min: u32,
    pub generations_max: u32,
    /// Fittest individuals returned per segment.
    pub ranked_count: usize,
    pub bounds: ParamBounds,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 300,
            tournament_size: 4,
            crossover_rate: 0.9,
            mutation_rate: 0.3,
            mutation_width: 0.05,
            immigration_count: 10,
            elite_count: 1,
            generations_min: 2,
            generations_max: 7,
            ranked_count: 25,
            bounds: ParamBounds::ga_default(),
        }
    }
}

/// Latin hypercube sample: each coordinate stratified into `n` equal strata
/// of its range, one draw per stratum, strata permuted independently.
pub fn latin_hypercube(n: usize, bounds: &ParamBounds, rng: &mut ChaCha8Rng) -> Vec<ModelParameters> {
    let mut coords = vec![[0.0f64; THETA_DIM]; n];
    for dim in 0..THETA_DIM {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        let lo = bounds.lo[dim];
        let width = bounds.range(dim) / n as f64;
        for (row, &stratum) in strata.iter().enumerate() {
            coords[row][dim] = lo + (stratum as f64 + rng.gen::<f64>()) * width;
        }
    }
    coords.iter().map(ModelParameters::from_vector).collect()
}

/// Fresh population for the first segment of a patient.
pub fn init_population(config: &GaConfig, rng: &mut ChaCha8Rng) -> Vec<Individual> {
    latin_hypercube(config.population_size, &config.bounds, rng)
        .into_iter()
        .map(|theta| Individual { theta, eps: f64::INFINITY })
        .collect()
}

/// Score every individual on the segment. `round` separates evaluation seed
/// families (0 for the segment-entry evaluation, then one per generation).
pub fn evaluate_population(
    pop: &mut [Individual],
    fit: &SegmentFit,
    seeds: &SeedSchedule,
    round: u64,
) {
    let base = round * pop.len() as u64;
    let patient = fit.patient_id.clone();
    let segment = u64::from(fit.segment_index);
    pop.par_iter_mut().enumerate().for_each(|(i, ind)| {
        let seed = seeds.derive(&patient, segment, Purpose::GaEval, base + i as u64);
        ind.eps = fit.eps(&ind.theta, seed);
    });
}

/// Piecewise-linear map from the previous segment difference to a generation
/// budget, anchored at the patient's own low/high quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationsMap {
    anchors: Option<(f64, f64)>,
    gens_min: u32,
    gens_max: u32,
}

impl GenerationsMap {
    /// Calibrate from the patient's consecutive-segment differences.
    pub fn from_deltas(deltas: &[f64], gens_min: u32, gens_max: u32) -> Self {
        let anchors = if deltas.len() >= 2 {
            Some((stats::quantile(deltas, 0.25), stats::quantile(deltas, 0.75)))
        } else {
            None
        };
        Self { anchors, gens_min, gens_max }
    }

    pub fn with_anchors(low: f64, high: f64, gens_min: u32, gens_max: u32) -> Self {
        Self { anchors: Some((low, high)), gens_min, gens_max }
    }

    /// Fixed budget regardless of the segment difference.
    pub fn fixed(g: u32) -> Self {
        Self { anchors: None, gens_min: g, gens_max: g }
    }

    pub fn generations(&self, delta_p_prev: Option<f64>) -> u32 {
        let Some(dp) = delta_p_prev else {
            return self.gens_max; // fresh population: largest budget
        };
        let Some((low, high)) = self.anchors else {
            return self.gens_max;
        };
        if high <= low {
            return if dp <= low { self.gens_min } else { self.gens_max };
        }
        let frac = ((dp - low) / (high - low)).clamp(0.0, 1.0);
        let g = self.gens_min as f64 + frac * (self.gens_max - self.gens_min) as f64;
        (g.round() as u32).clamp(self.gens_min, self.gens_max)
    }
}

fn tournament<'a>(
    pop: &'a [Individual],
    size: usize,
    rng: &mut ChaCha8Rng,
) -> &'a Individual {
    let mut best: Option<&Individual> = None;
    for _ in 0..size.max(1) {
        let cand = &pop[rng.gen_range(0..pop.len())];
        best = match best {
            Some(b) if b.eps <= cand.eps => Some(b),
            _ => Some(cand),
        };
    }
    best.expect("population non-empty")
}

fn two_point_crossover(
    a: &ModelParameters,
    b: &ModelParameters,
    rng: &mut ChaCha8Rng,
) -> (ModelParameters, ModelParameters) {
    let (va, vb) = (a.to_vector(), b.to_vector());
    let mut c1 = va;
    let mut c2 = vb;
    let mut p1 = rng.gen_range(0..=THETA_DIM);
    let mut p2 = rng.gen_range(0..=THETA_DIM);
    if p1 > p2 {
        std::mem::swap(&mut p1, &mut p2);
    }
    for i in p1..p2 {
        c1[i] = vb[i];
        c2[i] = va[i];
    }
    (ModelParameters::from_vector(&c1), ModelParameters::from_vector(&c2))
}

fn creep_mutate(theta: &mut ModelParameters, config: &GaConfig, rng: &mut ChaCha8Rng) {
    let mut v = theta.to_vector();
    for i in 0..THETA_DIM {
        if rng.gen::<f64>() < config.mutation_rate {
            let width = config.mutation_width * config.bounds.range(i);
            v[i] += rng.gen_range(-width..=width);
        }
    }
    config.bounds.clamp_vector(&mut v);
    *theta = ModelParameters::from_vector(&v);
}

fn sort_by_eps(pop: &mut [Individual]) {
    pop.sort_by(|a, b| a.eps.total_cmp(&b.eps));
}

/// Evolve the population on one segment and return it together with the
/// ranked fittest vectors.
///
/// The population must already be evaluated on this segment. Runs the
/// `delta_p_prev`-driven number of generations of tournament selection,
/// two-point crossover and creep mutation with elitism, extracts the
/// `ranked_count` fittest, then replaces the least-fit individuals with fresh
/// latin-hypercube immigrants for the next segment.
pub fn evolve_segment(
    mut pop: Vec<Individual>,
    fit: &SegmentFit,
    delta_p_prev: Option<f64>,
    gens_map: &GenerationsMap,
    config: &GaConfig,
    seeds: &SeedSchedule,
) -> (Vec<Individual>, Vec<Individual>) {
    let segment = u64::from(fit.segment_index);
    let generations = gens_map.generations(delta_p_prev);

    for gen in 1..=generations {
        let mut rng = seeds.rng(&fit.patient_id, segment, Purpose::GaEvolve, u64::from(gen));
        let n_offspring = config.population_size - config.elite_count.min(config.population_size);

        let mut offspring: Vec<Individual> = Vec::with_capacity(n_offspring);
        while offspring.len() < n_offspring {
            let pa = tournament(&pop, config.tournament_size, &mut rng);
            let pb = tournament(&pop, config.tournament_size, &mut rng);
            let (mut ta, mut tb) = if rng.gen::<f64>() < config.crossover_rate {
                two_point_crossover(&pa.theta, &pb.theta, &mut rng)
            } else {
                (pa.theta, pb.theta)
            };
            creep_mutate(&mut ta, config, &mut rng);
            creep_mutate(&mut tb, config, &mut rng);
            offspring.push(Individual { theta: ta, eps: f64::INFINITY });
            if offspring.len() < n_offspring {
                offspring.push(Individual { theta: tb, eps: f64::INFINITY });
            }
        }
        evaluate_population(&mut offspring, fit, seeds, u64::from(gen));

        sort_by_eps(&mut pop);
        let mut next = Vec::with_capacity(config.population_size);
        next.extend_from_slice(&pop[..config.elite_count.min(pop.len())]);
        next.append(&mut offspring);
        pop = next;
    }

    sort_by_eps(&mut pop);
    let ranked: Vec<Individual> = pop[..config.ranked_count.min(pop.len())].to_vec();

    // Immigration for the next segment: the tail is the least fit.
    let n_imm = config.immigration_count.min(pop.len());
    if n_imm > 0 {
        let mut rng = seeds.rng(&fit.patient_id, segment, Purpose::GaImmigrate, 0);
        let immigrants = latin_hypercube(n_imm, &config.bounds, &mut rng);
        let start = pop.len() - n_imm;
        for (slot, theta) in pop[start..].iter_mut().zip(immigrants) {
            *slot = Individual { theta, eps: f64::INFINITY };
        }
    }

    (pop, ranked)
}
