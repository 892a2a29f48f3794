//! Event-driven simulation of the dual-pathway AV-node network.
//!
//! The network is two 10-node chains (fast and slow pathway) joined by a
//! coupling node, 21 nodes total. Atrial impulses from a Poisson process
//! arrive at the entry node of both chains simultaneously. A non-refractory
//! node transmits an arriving impulse to all adjacent nodes after its current
//! conduction delay and then enters refractoriness; a refractory node blocks.
//! Refractory period and delay recover exponentially with the diastolic
//! interval since the end of the previous refractory period. Conduction is
//! bidirectional along each chain, so retrograde invasion of the opposite
//! pathway through the coupling node (concealed conduction) can occur.
//!
//! Each transmission of the coupling node produces a ventricular activation
//! after the fixed coupling delay; the output RR series is the sequence of
//! differences between ventricular activation times.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::ModelParameters;

const FP_ENTRY: u8 = 0;
const SP_ENTRY: u8 = 10;
const COUPLING: u8 = 20;
const FP_EXIT: u8 = 9;
const SP_EXIT: u8 = 19;
const ATRIUM: u8 = u8::MAX;
const NUM_NODES: usize = 21;

/// Simulated RR intervals this many beats into a run reflect the fully
/// recovered initial state; callers computing fit metrics drop them.
pub const WARMUP_BEATS: usize = 10;

/// Fixed properties of the coupling node (Purkinje/His).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub rp_ms: f64,
    pub cd_ms: f64,
}

impl CouplingConfig {
    pub fn new(rp_ms: f64, cd_ms: f64) -> Result<Self> {
        if !(rp_ms > 0.0) || !(cd_ms >= 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "coupling rp must be > 0 and cd >= 0, got rp={rp_ms}, cd={cd_ms}"
            )));
        }
        Ok(Self { rp_ms, cd_ms })
    }
}

/// Refractory-period and conduction-delay samples recorded per node
/// activation, pooled per pathway, plus delay samples.
#[derive(Debug, Clone, Default)]
pub struct TrackedSamples {
    pub r_fp: Vec<f64>,
    pub r_sp: Vec<f64>,
    pub d_fp: Vec<f64>,
    pub d_sp: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    /// Ventricular activation times (ms from run start).
    pub ventricular_times: Vec<f64>,
    /// Successive differences of `ventricular_times`.
    pub rr_intervals: Vec<f64>,
    /// Per-activation samples, present when tracking was requested.
    pub tracked: Option<TrackedSamples>,
    /// Impulses reaching the coupling node through the fast pathway.
    pub n_fp: u64,
    /// Impulses reaching the coupling node through the slow pathway.
    pub n_sp: u64,
    /// Atrial impulses generated by the arrival process.
    pub n_atrial: u64,
}

impl SimulationResult {
    /// RR series with the initial-transient beats removed.
    pub fn rr_after_warmup(&self) -> &[f64] {
        let skip = WARMUP_BEATS.min(self.rr_intervals.len());
        &self.rr_intervals[skip..]
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    dest: u8,
    src: u8,
    seq: u32,
}

// Min-ordering on (time, dest, src, seq): simultaneous events resolve by
// destination node index (fast pathway before slow), then source, then
// insertion order. Times are finite by construction.
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.dest.cmp(&self.dest))
            .then_with(|| other.src.cmp(&self.src))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

fn neighbors(node: u8) -> &'static [u8] {
    static TABLE: [&[u8]; NUM_NODES] = [
        &[1],       // 0: FP entry
        &[0, 2],
        &[1, 3],
        &[2, 4],
        &[3, 5],
        &[4, 6],
        &[5, 7],
        &[6, 8],
        &[7, 9],
        &[8, 20],   // 9: FP exit, joins coupling
        &[11],      // 10: SP entry
        &[10, 12],
        &[11, 13],
        &[12, 14],
        &[13, 15],
        &[14, 16],
        &[15, 17],
        &[16, 18],
        &[17, 19],
        &[18, 20],  // 19: SP exit, joins coupling
        &[9, 19],   // 20: coupling node
    ];
    TABLE[node as usize]
}

/// Poisson arrival times over [0, duration_ms] at `lambda_hz` impulses per second.
fn poisson_arrivals(lambda_hz: f64, duration_ms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let exp = Exp::new(lambda_hz / 1000.0).expect("lambda checked by caller");
    let mut times = Vec::with_capacity((lambda_hz * duration_ms / 1000.0 * 1.2) as usize + 16);
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > duration_ms {
            break;
        }
        times.push(t);
    }
    times
}

/// Run one simulation. Deterministic given all arguments including `seed`.
///
/// Atrial impulses arrive over [0, duration_ms]; in-flight conduction is
/// drained afterwards so the last wavefronts complete. Node states start
/// fully recovered.
pub fn simulate(
    theta: &ModelParameters,
    coupling: &CouplingConfig,
    lambda_hz: f64,
    duration_ms: f64,
    seed: u64,
    track: bool,
) -> Result<SimulationResult> {
    if !(lambda_hz > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "lambda must be > 0, got {lambda_hz}"
        )));
    }
    if !(duration_ms > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "duration must be > 0, got {duration_ms}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrivals = poisson_arrivals(lambda_hz, duration_ms, &mut rng);

    let mut t_last = [f64::NEG_INFINITY; NUM_NODES];
    let mut r_last = [0.0f64; NUM_NODES];

    let mut heap: BinaryHeap<Event> = BinaryHeap::with_capacity(64);
    let mut seq: u32 = 0;

    let mut ventricular = Vec::with_capacity(1024);
    let mut n_fp = 0u64;
    let mut n_sp = 0u64;
    let mut tracked = track.then(TrackedSamples::default);

    let mut next_arrival = 0usize;
    loop {
        // Feed atrial arrivals due before (or at) the earliest queued event.
        while next_arrival < arrivals.len()
            && heap.peek().map_or(true, |e| arrivals[next_arrival] <= e.time)
        {
            let t = arrivals[next_arrival];
            next_arrival += 1;
            heap.push(Event { time: t, dest: FP_ENTRY, src: ATRIUM, seq });
            seq = seq.wrapping_add(1);
            heap.push(Event { time: t, dest: SP_ENTRY, src: ATRIUM, seq });
            seq = seq.wrapping_add(1);
        }
        let Some(ev) = heap.pop() else {
            if next_arrival >= arrivals.len() {
                break;
            }
            continue;
        };

        let node = ev.dest as usize;
        let tilde = ev.time - (t_last[node] + r_last[node]);
        if tilde < 0.0 {
            continue; // refractory: impulse blocked
        }

        let (rp, cd) = if ev.dest == COUPLING {
            (coupling.rp_ms, coupling.cd_ms)
        } else {
            let pathway = if ev.dest < SP_ENTRY { &theta.fp } else { &theta.sp };
            let rp = pathway.refractory(tilde);
            let cd = pathway.delay(tilde);
            if let Some(tr) = tracked.as_mut() {
                if ev.dest < SP_ENTRY {
                    tr.r_fp.push(rp);
                    tr.d_fp.push(cd);
                } else {
                    tr.r_sp.push(rp);
                    tr.d_sp.push(cd);
                }
            }
            (rp, cd)
        };

        t_last[node] = ev.time;
        r_last[node] = rp;

        if ev.dest == COUPLING {
            ventricular.push(ev.time + cd);
            match ev.src {
                FP_EXIT => n_fp += 1,
                SP_EXIT => n_sp += 1,
                other => unreachable!("coupling arrival from node {other}"),
            }
        }

        for &nb in neighbors(ev.dest) {
            heap.push(Event { time: ev.time + cd, dest: nb, src: ev.dest, seq });
            seq = seq.wrapping_add(1);
        }
    }

    let rr_intervals = ventricular.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(SimulationResult {
        ventricular_times: ventricular,
        rr_intervals,
        tracked,
        n_fp,
        n_sp,
        n_atrial: arrivals.len() as u64,
    })
}

/// Coupling-node refractory period derived from a patient's recording:
/// the mean of the ten shortest RR intervals.
pub fn coupling_rp_from_data(all_rr: &[f64]) -> Result<f64> {
    if all_rr.len() < 10 {
        return Err(CoreError::InsufficientData(format!(
            "coupling RP needs at least 10 RR intervals, got {}",
            all_rr.len()
        )));
    }
    let mut v = all_rr.to_vec();
    v.select_nth_unstable_by(9, f64::total_cmp);
    Ok(v[..10].iter().sum::<f64>() / 10.0)
}
