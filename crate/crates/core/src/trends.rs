//! Variability metrics over a patient's per-segment property estimates and
//! cohort-level summaries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{CoreError, Result};
use crate::reduction::{PropertySamples, PropertySummary};
use crate::stats;

pub const PROPERTY_NAMES: [&str; 4] = ["r_fp", "r_sp", "d_fp", "d_sp"];
/// Conduction-delay columns are reported as the ten-node total in tables.
pub const PROPERTY_TABLE_SCALE: [f64; 4] = [1.0, 1.0, 10.0, 10.0];

/// One segment's contribution to a patient trend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendPoint {
    pub segment_index: u32,
    pub wall_clock_start_ms: u64,
    pub summary: PropertySummary,
    /// Sample pools (possibly subsampled) backing distance computations.
    pub samples: PropertySamples,
}

/// A patient's ordered per-segment estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendSeries {
    pub patient_id: String,
    pub points: Vec<TrendPoint>,
}

/// Daytime/nighttime windows as ms-since-midnight half-open intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiurnalWindows {
    pub day_start_ms: u64,
    pub day_end_ms: u64,
    pub night_start_ms: u64,
    pub night_end_ms: u64,
}

impl Default for DiurnalWindows {
    fn default() -> Self {
        Self {
            day_start_ms: 9 * 3_600_000,    // 9:00 AM
            day_end_ms: 21 * 3_600_000,     // 9:00 PM
            night_start_ms: 2 * 3_600_000,  // 2:00 AM
            night_end_ms: 6 * 3_600_000,    // 6:00 AM
        }
    }
}

fn in_window(clock_ms: u64, start: u64, end: u64) -> bool {
    if start <= end {
        (start..end).contains(&clock_ms)
    } else {
        clock_ms >= start || clock_ms < end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DayPart {
    Day,
    Night,
    Full,
}

fn part_filter(windows: &DiurnalWindows, part: DayPart) -> impl Fn(&TrendPoint) -> bool + '_ {
    move |p| match part {
        DayPart::Day => in_window(p.wall_clock_start_ms, windows.day_start_ms, windows.day_end_ms),
        DayPart::Night => {
            in_window(p.wall_clock_start_ms, windows.night_start_ms, windows.night_end_ms)
        }
        DayPart::Full => true,
    }
}

/// Componentwise mean of a per-point extractor over segments in a day part;
/// NaN entries are skipped. None when the part has no segments.
fn mean_over_part(
    series: &TrendSeries,
    windows: &DiurnalWindows,
    part: DayPart,
    extract: impl Fn(&TrendPoint) -> [f64; 4],
) -> [Option<f64>; 4] {
    let filter = part_filter(windows, part);
    let mut out = [None; 4];
    for i in 0..4 {
        let vals: Vec<f64> = series
            .points
            .iter()
            .filter(|p| filter(p))
            .map(|p| extract(p)[i])
            .filter(|v| v.is_finite())
            .collect();
        if !vals.is_empty() {
            out[i] = Some(stats::mean(&vals));
        }
    }
    out
}

/// Diurnal variability: daytime mean of the density modes divided by the
/// nighttime mean, per property. None where either window is empty.
pub fn diurnal_variability(series: &TrendSeries, windows: &DiurnalWindows) -> [Option<f64>; 4] {
    let day = mean_over_part(series, windows, DayPart::Day, |p| p.summary.phi_max);
    let night = mean_over_part(series, windows, DayPart::Night, |p| p.summary.phi_max);
    let mut out = [None; 4];
    for i in 0..4 {
        out[i] = match (day[i], night[i]) {
            (Some(d), Some(n)) if n != 0.0 => Some(d / n),
            _ => None,
        };
    }
    out
}

/// Two-sample Kolmogorov-Smirnov distance: the largest separation between the
/// empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "ks_distance needs non-empty samples");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);

    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut max_d = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        max_d = max_d.max((i as f64 / na - j as f64 / nb).abs());
    }
    max_d
}

/// Mean Kolmogorov-Smirnov distance between the sample pools of consecutive
/// segments (window ordinals differing by exactly one), per property,
/// restricted to segments whose start falls in the given day part.
pub fn short_term_variability(
    series: &TrendSeries,
    windows: &DiurnalWindows,
    part: DayPart,
) -> [Option<f64>; 4] {
    let filter = part_filter(windows, part);
    let mut out = [None; 4];
    for i in 0..4 {
        let mut dists = Vec::new();
        for w in series.points.windows(2) {
            if w[1].segment_index != w[0].segment_index + 1 {
                continue;
            }
            if !filter(&w[0]) {
                continue;
            }
            let (a, b) = (w[0].samples.property(i), w[1].samples.property(i));
            if a.is_empty() || b.is_empty() {
                continue;
            }
            dists.push(ks_distance(a, b));
        }
        if !dists.is_empty() {
            out[i] = Some(stats::mean(&dists));
        }
    }
    out
}

/// Spearman rank correlation with average ranks for ties and a two-sided
/// p-value from the t approximation. Ok(None) when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<(f64, f64)>> {
    if x.len() != y.len() {
        return Err(CoreError::InvalidArgument(format!(
            "paired inputs differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(CoreError::InsufficientData(format!(
            "spearman needs at least 3 pairs, got {n}"
        )));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);

    let mx = stats::mean(&rx);
    let my = stats::mean(&ry);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None); // constant input: correlation undefined
    }
    let rho = sxy / (sxx * syy).sqrt();

    let df = (n - 2) as f64;
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Some((rho, p)))
}

/// Ranks 1..n with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j share rank (i+1 + j+1)/2
        let shared = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Everything the cohort table needs from one patient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientTrendStats {
    pub patient_id: String,
    pub n_segments: usize,
    /// Mean density mode per property, per day part [full, day, night].
    pub mean_phi_max: [[Option<f64>; 4]; 3],
    /// Mean credibility width (p95 - p5) per property, per day part.
    pub mean_width: [[Option<f64>; 4]; 3],
    /// Mean consecutive-segment KS distance per property, per day part.
    pub mean_delta_ks: [[Option<f64>; 4]; 3],
    pub delta_dv: [Option<f64>; 4],
    pub mean_sp_ratio: [Option<f64>; 3],
}

const DAY_PARTS: [DayPart; 3] = [DayPart::Full, DayPart::Day, DayPart::Night];

/// Reduce one patient's trend series to its summary statistics.
pub fn patient_stats(series: &TrendSeries, windows: &DiurnalWindows) -> PatientTrendStats {
    let mut mean_phi_max = [[None; 4]; 3];
    let mut mean_width = [[None; 4]; 3];
    let mut mean_delta_ks = [[None; 4]; 3];
    let mut mean_sp_ratio = [None; 3];
    for (k, part) in DAY_PARTS.into_iter().enumerate() {
        mean_phi_max[k] = mean_over_part(series, windows, part, |p| p.summary.phi_max);
        mean_width[k] = mean_over_part(series, windows, part, |p| {
            let mut w = [f64::NAN; 4];
            for i in 0..4 {
                w[i] = p.summary.phi_95[i] - p.summary.phi_5[i];
            }
            w
        });
        mean_delta_ks[k] = short_term_variability(series, windows, part);
        let filter = part_filter(windows, part);
        let ratios: Vec<f64> = series
            .points
            .iter()
            .filter(|p| filter(p))
            .filter_map(|p| p.summary.sp_ratio)
            .collect();
        if !ratios.is_empty() {
            mean_sp_ratio[k] = Some(stats::mean(&ratios));
        }
    }
    PatientTrendStats {
        patient_id: series.patient_id.clone(),
        n_segments: series.points.len(),
        mean_phi_max,
        mean_width,
        mean_delta_ks,
        delta_dv: diurnal_variability(series, windows),
        mean_sp_ratio,
    }
}

/// One cohort-table row: mean and std over patients per property column,
/// with the number of contributing patients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortRow {
    pub label: String,
    pub mean: [Option<f64>; 4],
    pub std: [Option<f64>; 4],
    pub n: [usize; 4],
}

fn cohort_row(
    label: &str,
    patients: &[PatientTrendStats],
    extract: impl Fn(&PatientTrendStats) -> [Option<f64>; 4],
    table_scale: bool,
) -> CohortRow {
    let mut mean = [None; 4];
    let mut std = [None; 4];
    let mut n = [0usize; 4];
    for i in 0..4 {
        let scale = if table_scale { PROPERTY_TABLE_SCALE[i] } else { 1.0 };
        let vals: Vec<f64> = patients
            .iter()
            .filter_map(|p| extract(p)[i])
            .map(|v| v * scale)
            .collect();
        n[i] = vals.len();
        if !vals.is_empty() {
            mean[i] = Some(stats::mean(&vals));
            std[i] = Some(stats::sample_std(&vals));
        }
    }
    CohortRow { label: label.to_string(), mean, std, n }
}

/// Cohort summary across patients: per-property mean ± std of the day-part
/// averages of the density mode, the credibility width and the short-term
/// variability, plus the diurnal-variability row. Conduction-delay columns
/// carry the ten-node total.
pub fn cohort_table(patients: &[PatientTrendStats]) -> Vec<CohortRow> {
    const PART_LABELS: [&str; 3] = ["24h", "day", "night"];
    let mut rows = Vec::with_capacity(10);
    for (k, label) in PART_LABELS.iter().enumerate() {
        rows.push(cohort_row(
            &format!("{label}_phi_max_ms"),
            patients,
            |p| p.mean_phi_max[k],
            true,
        ));
    }
    for (k, label) in PART_LABELS.iter().enumerate() {
        rows.push(cohort_row(
            &format!("{label}_credibility_width_ms"),
            patients,
            |p| p.mean_width[k],
            true,
        ));
    }
    for (k, label) in PART_LABELS.iter().enumerate() {
        rows.push(cohort_row(
            &format!("{label}_mean_delta_ks"),
            patients,
            |p| p.mean_delta_ks[k],
            false,
        ));
    }
    rows.push(cohort_row("delta_dv", patients, |p| p.delta_dv, false));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(s: u32, clock_h: f64, phi_max: [f64; 4], pool: Vec<f64>) -> TrendPoint {
        TrendPoint {
            segment_index: s,
            wall_clock_start_ms: (clock_h * 3_600_000.0) as u64,
            summary: PropertySummary {
                phi_max,
                phi_5: phi_max.map(|v| v - 10.0),
                phi_95: phi_max.map(|v| v + 10.0),
                sp_ratio: Some(0.5),
            },
            samples: PropertySamples {
                r_fp: pool.clone(),
                r_sp: pool.clone(),
                d_fp: pool.clone(),
                d_sp: pool,
                n_fp: 1,
                n_sp: 1,
            },
        }
    }

    #[test]
    fn ks_hand_cases() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_distance(&[1.0, 2.0], &[5.0, 6.0]), 1.0);
        assert_eq!(ks_distance(&[1.0, 2.0], &[1.0, 3.0]), 0.5);
    }

    #[test]
    fn ks_symmetric_and_bounded() {
        let a = [1.0, 4.0, 4.0, 7.0];
        let b = [2.0, 4.0, 9.0];
        let d1 = ks_distance(&a, &b);
        let d2 = ks_distance(&b, &a);
        assert_eq!(d1, d2);
        assert!((0.0..=1.0).contains(&d1));
    }

    #[test]
    fn diurnal_ratio() {
        let series = TrendSeries {
            patient_id: "p".into(),
            points: vec![
                point(0, 10.0, [800.0; 4], vec![1.0, 2.0]),
                point(1, 12.0, [800.0; 4], vec![1.0, 2.0]),
                point(2, 3.0, [1000.0; 4], vec![1.0, 2.0]),
            ],
        };
        let dv = diurnal_variability(&series, &DiurnalWindows::default());
        for v in dv {
            assert!((v.unwrap() - 0.8).abs() < 1e-12);
        }

        // Day mean == night mean -> 1.0
        let series = TrendSeries {
            patient_id: "p".into(),
            points: vec![
                point(0, 10.0, [500.0; 4], vec![1.0]),
                point(1, 3.0, [500.0; 4], vec![1.0]),
            ],
        };
        let dv = diurnal_variability(&series, &DiurnalWindows::default());
        assert!(dv.iter().all(|v| v.unwrap() == 1.0));

        // No night segments -> undefined
        let series = TrendSeries {
            patient_id: "p".into(),
            points: vec![point(0, 10.0, [500.0; 4], vec![1.0])],
        };
        let dv = diurnal_variability(&series, &DiurnalWindows::default());
        assert!(dv.iter().all(Option::is_none));
    }

    #[test]
    fn diurnal_is_order_invariant() {
        let mk = |perm: &[usize]| {
            let pts = [
                point(0, 9.5, [700.0; 4], vec![1.0]),
                point(1, 15.0, [900.0; 4], vec![1.0]),
                point(2, 3.0, [1000.0; 4], vec![1.0]),
                point(3, 4.0, [1100.0; 4], vec![1.0]),
            ];
            TrendSeries {
                patient_id: "p".into(),
                points: perm.iter().map(|&i| pts[i].clone()).collect(),
            }
        };
        let a = diurnal_variability(&mk(&[0, 1, 2, 3]), &DiurnalWindows::default());
        let b = diurnal_variability(&mk(&[3, 1, 0, 2]), &DiurnalWindows::default());
        assert_eq!(a, b);
    }

    #[test]
    fn short_term_zero_for_identical_pools() {
        let series = TrendSeries {
            patient_id: "p".into(),
            points: (0..4)
                .map(|s| point(s, 10.0, [500.0; 4], vec![1.0, 2.0, 3.0]))
                .collect(),
        };
        let ks = short_term_variability(&series, &DiurnalWindows::default(), DayPart::Full);
        assert!(ks.iter().all(|v| v.unwrap() == 0.0));
    }

    #[test]
    fn short_term_skips_gaps() {
        // Ordinals 0,1,5: only the (0,1) pair is consecutive.
        let series = TrendSeries {
            patient_id: "p".into(),
            points: vec![
                point(0, 10.0, [500.0; 4], vec![1.0, 2.0]),
                point(1, 10.1, [500.0; 4], vec![100.0, 200.0]),
                point(5, 10.4, [500.0; 4], vec![1.0, 2.0]),
            ],
        };
        let ks = short_term_variability(&series, &DiurnalWindows::default(), DayPart::Full);
        assert!(ks.iter().all(|v| v.unwrap() == 1.0)); // disjoint pools
    }

    #[test]
    fn spearman_monotone_and_oracle() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (rho, p) = spearman(&x, &x).unwrap().unwrap();
        assert_eq!(rho, 1.0);
        assert_eq!(p, 0.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (rho, _) = spearman(&x, &neg).unwrap().unwrap();
        assert_eq!(rho, -1.0);

        // Classic no-ties formula oracle: 1 - 6*sum(d^2)/(n(n^2-1)).
        let y = [2.0, 1.0, 4.0, 3.0, 5.0];
        let (rho, _) = spearman(&x, &y).unwrap().unwrap();
        let d2: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let expected = 1.0 - 6.0 * d2 / (5.0 * 24.0);
        assert!((rho - expected).abs() < 1e-12);
        assert!((rho - 0.7).abs() < 1e-12);
    }

    #[test]
    fn spearman_edge_cases() {
        assert!(spearman(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
        let flat = [2.0, 2.0, 2.0, 2.0];
        let vary = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&flat, &vary).unwrap(), None);
        assert_eq!(spearman(&vary, &flat).unwrap(), None);
    }

    #[test]
    fn rank_invariance_under_monotone_transform() {
        let x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
        let y = [0.2, 0.9, 0.1, 0.4, 0.5, 0.7];
        let (rho1, p1) = spearman(&x, &y).unwrap().unwrap();
        let fx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let gy: Vec<f64> = y.iter().map(|v| v.powi(3)).collect();
        let (rho2, p2) = spearman(&fx, &gy).unwrap().unwrap();
        assert!((rho1 - rho2).abs() < 1e-12);
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_handle_ties() {
        let r = average_ranks(&[10.0, 20.0, 20.0, 30.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn cohort_single_patient_has_zero_std() {
        let series = TrendSeries {
            patient_id: "p".into(),
            points: vec![
                point(0, 10.0, [800.0, 400.0, 8.0, 55.0], vec![1.0, 2.0]),
                point(1, 10.1, [800.0, 400.0, 8.0, 55.0], vec![1.0, 2.0]),
                point(2, 3.0, [1000.0, 500.0, 10.0, 60.0], vec![1.0, 2.0]),
            ],
        };
        let stats = vec![patient_stats(&series, &DiurnalWindows::default())];
        let table = cohort_table(&stats);
        assert_eq!(table.len(), 10);
        for row in &table {
            for i in 0..4 {
                if row.mean[i].is_some() {
                    assert_eq!(row.std[i], Some(0.0), "row {}", row.label);
                    assert_eq!(row.n[i], 1);
                }
            }
        }
        // CD columns are scaled by ten in phi-max rows.
        let full_row = &table[0];
        assert!((full_row.mean[2].unwrap() - (8.0 * 2.0 + 10.0) / 3.0 * 10.0).abs() < 1e-9);

        // A cohort of identical patients keeps the single-patient means.
        let stats3 = vec![stats[0].clone(), stats[0].clone(), stats[0].clone()];
        let table3 = cohort_table(&stats3);
        for (r1, r3) in table.iter().zip(&table3) {
            assert_eq!(r1.mean, r3.mean);
            for i in 0..4 {
                if r3.mean[i].is_some() {
                    assert_eq!(r3.std[i], Some(0.0));
                    assert_eq!(r3.n[i], 3);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn ks_properties(a in proptest::collection::vec(-50.0..50.0f64, 1..40),
                         b in proptest::collection::vec(-50.0..50.0f64, 1..40)) {
            let d = ks_distance(&a, &b);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
            prop_assert!((d - ks_distance(&b, &a)).abs() < 1e-12);
            prop_assert_eq!(ks_distance(&a, &a), 0.0);
        }

        #[test]
        fn spearman_in_range(
            pairs in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 3..20)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Some((rho, p)) = spearman(&x, &y).unwrap() {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
                prop_assert!((0.0..=1.0 + 1e-9).contains(&p));
            }
        }
    }
}
