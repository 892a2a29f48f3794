//! Input parsing and segmentation.
//!
//! RR beat files and atrial-rate trend files come in as CSV; recordings are
//! cut into overlapping ten-minute windows, noisy windows are excluded, and
//! each surviving window gets the mean atrial arrival rate of its minutes.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const WINDOW_MS: u64 = 600_000;
pub const STEP_MS: u64 = 300_000;
pub const MINUTE_MS: u64 = 60_000;
pub const MIN_BEATS_PER_MINUTE: usize = 20;
pub const MIN_PATIENT_HOURS: f64 = 12.0;
pub const MS_PER_DAY: u64 = 86_400_000;

/// One patient's detected beats.
///
/// `valid_flags[i]` covers the interval between beats i and i+1; an interval
/// adjacent to a deviating-morphology beat is invalid and is dropped from
/// segment interval lists, but its beats still count as detected.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatSeries {
    pub patient_id: String,
    pub beat_times: Vec<f64>,
    pub valid_flags: Vec<bool>,
}

impl BeatSeries {
    pub fn new(patient_id: String, beat_times: Vec<f64>, beat_valid: &[bool]) -> Result<Self> {
        if beat_times.is_empty() {
            return Err(CoreError::EmptyInput(format!("no beats for {patient_id}")));
        }
        if beat_times.len() != beat_valid.len() {
            return Err(CoreError::InvalidArgument(
                "beat_times and beat_valid lengths differ".into(),
            ));
        }
        for (i, w) in beat_times.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(CoreError::InvalidArgument(format!(
                    "beat times not strictly increasing at index {}",
                    i + 1
                )));
            }
        }
        let valid_flags = beat_valid.windows(2).map(|w| w[0] && w[1]).collect();
        Ok(Self { patient_id, beat_times, valid_flags })
    }

    /// All valid RR intervals of the recording (ms).
    pub fn valid_rr(&self) -> Vec<f64> {
        self.beat_times
            .windows(2)
            .zip(&self.valid_flags)
            .filter(|(_, &ok)| ok)
            .map(|(w, _)| w[1] - w[0])
            .collect()
    }
}

/// Per-minute atrial fibrillatory rate trend (Hz); minutes may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct AfrTrend {
    minutes: Vec<i64>,
    afr_hz: Vec<f64>,
}

impl AfrTrend {
    pub fn new(mut entries: Vec<(i64, f64)>) -> Result<Self> {
        for &(minute, afr) in &entries {
            if !(afr > 0.0) {
                return Err(CoreError::InvalidArgument(format!(
                    "afr must be > 0, got {afr} at minute {minute}"
                )));
            }
        }
        entries.sort_by_key(|&(m, _)| m);
        entries.dedup_by_key(|&mut (m, _)| m);
        Ok(Self {
            minutes: entries.iter().map(|&(m, _)| m).collect(),
            afr_hz: entries.iter().map(|&(_, a)| a).collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn get(&self, minute: i64) -> Option<f64> {
        self.minutes
            .binary_search(&minute)
            .ok()
            .map(|i| self.afr_hz[i])
    }

    /// Value at `minute`, or the nearest observed minute's value; equidistant
    /// neighbors resolve to the earlier one.
    pub fn nearest(&self, minute: i64) -> Option<f64> {
        if self.minutes.is_empty() {
            return None;
        }
        match self.minutes.binary_search(&minute) {
            Ok(i) => Some(self.afr_hz[i]),
            Err(i) => {
                let before = i.checked_sub(1).map(|j| (minute - self.minutes[j], j));
                let after = (i < self.minutes.len()).then(|| (self.minutes[i] - minute, i));
                match (before, after) {
                    (Some((db, jb)), Some((da, ja))) => {
                        // tie -> earlier neighbor
                        Some(if db <= da { self.afr_hz[jb] } else { self.afr_hz[ja] })
                    }
                    (Some((_, j)), None) | (None, Some((_, j))) => Some(self.afr_hz[j]),
                    (None, None) => None,
                }
            }
        }
    }
}

/// A ten-minute window before the atrial rate is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentWindow {
    pub patient_id: String,
    /// Window ordinal: start_ms / step.
    pub segment_index: u32,
    pub start_ms: u64,
    pub rr_intervals: Vec<f64>,
    pub n_beats: usize,
}

/// A ten-minute window ready for fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RrSegment {
    pub patient_id: String,
    pub segment_index: u32,
    pub start_ms: u64,
    pub rr_intervals: Vec<f64>,
    pub n_beats: usize,
    /// Mean atrial arrival rate over the window (impulses per second).
    pub lambda_hat: f64,
    /// Start of the window as time of day (ms since midnight).
    pub wall_clock_start_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub window_ms: u64,
    pub step_ms: u64,
    pub min_beats_per_minute: usize,
    /// Time of day at recording start (ms since midnight).
    pub recording_start_clock_ms: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            window_ms: WINDOW_MS,
            step_ms: STEP_MS,
            min_beats_per_minute: MIN_BEATS_PER_MINUTE,
            recording_start_clock_ms: 8 * 3_600_000, // 8:00 AM
        }
    }
}

/// Parse a beats CSV (`t_ms,valid`, header required) into a `BeatSeries`.
/// The patient id is the file stem.
pub fn parse_beats(path: &Path) -> Result<BeatSeries> {
    let patient_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("unknown")
        .to_string();
    let file = std::fs::File::open(path)?;
    parse_beats_reader(std::io::BufReader::new(file), patient_id)
}

pub fn parse_beats_reader<R: BufRead>(reader: R, patient_id: String) -> Result<BeatSeries> {
    let mut times = Vec::new();
    let mut valid = Vec::new();
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(CoreError::EmptyInput(format!("beats file for {patient_id}"))),
    };
    let header = header.trim();
    if header != "t_ms,valid" {
        return Err(CoreError::Parse {
            line: 1,
            message: format!("expected header 't_ms,valid', got '{header}'"),
        });
    }

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (t_str, v_str) = match (cols.next(), cols.next(), cols.next()) {
            (Some(t), Some(v), None) => (t.trim(), v.trim()),
            _ => {
                return Err(CoreError::Parse {
                    line: line_no,
                    message: format!("expected 2 columns, got '{line}'"),
                })
            }
        };
        let t: f64 = t_str.parse().map_err(|_| CoreError::Parse {
            line: line_no,
            message: format!("bad timestamp '{t_str}'"),
        })?;
        if !t.is_finite() || t < 0.0 {
            return Err(CoreError::Parse {
                line: line_no,
                message: format!("timestamp must be finite and >= 0, got {t}"),
            });
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(CoreError::Parse {
                    line: line_no,
                    message: format!("timestamp {t} not after previous {prev}"),
                });
            }
        }
        let v = match v_str {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(CoreError::Parse {
                    line: line_no,
                    message: format!("bad valid flag '{other}'"),
                })
            }
        };
        times.push(t);
        valid.push(v);
    }

    if times.is_empty() {
        return Err(CoreError::EmptyInput(format!(
            "beats file for {patient_id} has a header but no rows"
        )));
    }
    BeatSeries::new(patient_id, times, &valid)
}

/// Parse an AFR trend CSV. Header declares the unit: `minute,afr_hz` or
/// `minute,afr_per_min` (converted to Hz at the boundary).
pub fn parse_afr(path: &Path) -> Result<AfrTrend> {
    let file = std::fs::File::open(path)?;
    parse_afr_reader(std::io::BufReader::new(file))
}

pub fn parse_afr_reader<R: BufRead>(reader: R) -> Result<AfrTrend> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(CoreError::EmptyInput("afr file".into())),
    };
    let per_minute = match header.trim() {
        "minute,afr_hz" => false,
        "minute,afr_per_min" => true,
        other => {
            return Err(CoreError::Parse {
                line: 1,
                message: format!(
                    "expected header 'minute,afr_hz' or 'minute,afr_per_min', got '{other}'"
                ),
            })
        }
    };

    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (m_str, a_str) = match (cols.next(), cols.next(), cols.next()) {
            (Some(m), Some(a), None) => (m.trim(), a.trim()),
            _ => {
                return Err(CoreError::Parse {
                    line: line_no,
                    message: format!("expected 2 columns, got '{line}'"),
                })
            }
        };
        let minute: i64 = m_str.parse().map_err(|_| CoreError::Parse {
            line: line_no,
            message: format!("bad minute '{m_str}'"),
        })?;
        // Missing minutes may be encoded as empty cells.
        if a_str.is_empty() {
            continue;
        }
        let mut afr: f64 = a_str.parse().map_err(|_| CoreError::Parse {
            line: line_no,
            message: format!("bad afr '{a_str}'"),
        })?;
        if per_minute {
            afr /= 60.0;
        }
        if !(afr > 0.0) || !afr.is_finite() {
            return Err(CoreError::Parse {
                line: line_no,
                message: format!("afr must be finite and > 0, got {afr}"),
            });
        }
        entries.push((minute, afr));
    }
    AfrTrend::new(entries)
}

/// Cut a recording into overlapping windows.
///
/// Windows start every `step_ms` from recording start; a window is emitted
/// only if it fits inside the recording and every one of its one-minute
/// sub-intervals has at least `min_beats_per_minute` detected beats
/// (invalid-flagged intervals still count their beats). Exclusion is not an
/// error.
pub fn segment_beats(beats: &BeatSeries, cfg: &SegmentationConfig) -> Vec<SegmentWindow> {
    let mut out = Vec::new();
    let Some(&last) = beats.beat_times.last() else {
        return out;
    };
    if (last as u64) < cfg.window_ms {
        return out;
    }

    let n_minutes = (cfg.window_ms / MINUTE_MS) as usize;
    let mut k = 0u64;
    loop {
        let start = k * cfg.step_ms;
        if start + cfg.window_ms > last as u64 {
            break;
        }
        let start_f = start as f64;
        let end_f = (start + cfg.window_ms) as f64;

        // Beats in [start, end): partition by binary search.
        let lo = beats.beat_times.partition_point(|&t| t < start_f);
        let hi = beats.beat_times.partition_point(|&t| t < end_f);

        let mut minute_counts = vec![0usize; n_minutes];
        for &t in &beats.beat_times[lo..hi] {
            let m = ((t - start_f) / MINUTE_MS as f64) as usize;
            minute_counts[m.min(n_minutes - 1)] += 1;
        }
        let noisy = minute_counts.iter().any(|&c| c < cfg.min_beats_per_minute);
        if !noisy {
            // intervals with both endpoint beats inside the window
            let mut rr = Vec::with_capacity(hi.saturating_sub(lo));
            for i in lo..hi.saturating_sub(1) {
                if beats.valid_flags[i] {
                    rr.push(beats.beat_times[i + 1] - beats.beat_times[i]);
                }
            }
            out.push(SegmentWindow {
                patient_id: beats.patient_id.clone(),
                segment_index: k as u32,
                start_ms: start,
                rr_intervals: rr,
                n_beats: hi - lo,
            });
        }
        k += 1;
    }
    out
}

/// Total recording time covered by the union of the windows (ms).
pub fn covered_ms(windows: &[SegmentWindow], window_ms: u64) -> u64 {
    let mut spans: Vec<(u64, u64)> = windows
        .iter()
        .map(|w| (w.start_ms, w.start_ms + window_ms))
        .collect();
    spans.sort_unstable();
    let mut covered = 0;
    let mut cur: Option<(u64, u64)> = None;
    for (s, e) in spans {
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                covered += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        covered += ce - cs;
    }
    covered
}

/// Accept a patient only if the included windows cover at least `min_hours`
/// of recording (boundary inclusive).
pub fn check_patient_duration(windows: &[SegmentWindow], min_hours: f64) -> bool {
    covered_ms(windows, WINDOW_MS) as f64 >= min_hours * 3_600_000.0
}

/// Attach the mean atrial rate of each window's minutes; minutes without an
/// observation take the nearest observed value before averaging.
pub fn attach_afr(
    windows: &[SegmentWindow],
    trend: &AfrTrend,
    cfg: &SegmentationConfig,
) -> Result<Vec<RrSegment>> {
    if trend.is_empty() {
        return Err(CoreError::EmptyInput("afr trend".into()));
    }
    let n_minutes = (cfg.window_ms / MINUTE_MS) as i64;
    windows
        .iter()
        .map(|w| {
            let first_minute = (w.start_ms / MINUTE_MS) as i64;
            let mut sum = 0.0;
            for m in first_minute..first_minute + n_minutes {
                sum += trend
                    .nearest(m)
                    .expect("trend emptiness checked above");
            }
            let lambda_hat = sum / n_minutes as f64;
            Ok(RrSegment {
                patient_id: w.patient_id.clone(),
                segment_index: w.segment_index,
                start_ms: w.start_ms,
                rr_intervals: w.rr_intervals.clone(),
                n_beats: w.n_beats,
                lambda_hat,
                wall_clock_start_ms: (cfg.recording_start_clock_ms + w.start_ms) % MS_PER_DAY,
            })
        })
        .collect()
}
