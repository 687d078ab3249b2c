//! Spike and subthreshold-event extraction, and binning into 0/1 processes.
//!
//! An event is the onset of an excitatory upswing. At each interior sample the
//! detector estimates a left slope (least squares over the `deriv_window`
//! samples ending at the sample) and a right slope (over the window starting at
//! it) and applies up to three tests:
//!
//! * (i)   right slope >= `right_deriv_threshold` (> 0)
//! * (ii)  right - left >= `deriv_jump_threshold` (> 0)
//! * (iii) left slope >= `left_deriv_threshold` (< 0)
//!
//! A maximal run of consecutive qualifying samples is one event, timed at the
//! run's first sample.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::VoltageTraces;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventDetectorParams {
    /// mV/ms
    pub right_deriv_threshold: f64,
    /// mV/ms
    pub deriv_jump_threshold: f64,
    /// mV/ms, negative
    pub left_deriv_threshold: f64,
    /// Enables conditions (i), (ii), (iii).
    pub use_condition: [bool; 3],
    /// Samples per one-sided slope window.
    pub deriv_window: usize,
}

impl Default for EventDetectorParams {
    fn default() -> Self {
        EventDetectorParams {
            right_deriv_threshold: 1.0,
            deriv_jump_threshold: 1.0,
            left_deriv_threshold: -1.0,
            use_condition: [true; 3],
            deriv_window: 5,
        }
    }
}

impl EventDetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.right_deriv_threshold.is_finite() && self.right_deriv_threshold > 0.0) {
            return Err(Error::Parameter(
                "right derivative threshold must be > 0".into(),
            ));
        }
        if !(self.deriv_jump_threshold.is_finite() && self.deriv_jump_threshold > 0.0) {
            return Err(Error::Parameter(
                "derivative jump threshold must be > 0".into(),
            ));
        }
        if !(self.left_deriv_threshold.is_finite() && self.left_deriv_threshold < 0.0) {
            return Err(Error::Parameter(
                "left derivative threshold must be < 0".into(),
            ));
        }
        if !self.use_condition.iter().any(|&c| c) {
            return Err(Error::Parameter(
                "at least one event condition must be enabled".into(),
            ));
        }
        if self.deriv_window == 0 {
            return Err(Error::Parameter("deriv_window must be positive".into()));
        }
        Ok(())
    }

    /// Only the listed conditions (1-based: 1, 2, 3) enabled.
    pub fn with_conditions(mut self, conditions: &[usize]) -> Self {
        self.use_condition = [1, 2, 3].map(|c| conditions.contains(&c));
        self
    }

    /// File tag for the enabled condition set: `all`, `cond_iii`, `cond_i_ii`, ...
    pub fn tag(&self) -> String {
        if self.use_condition.iter().all(|&c| c) {
            return "all".into();
        }
        let names = ["i", "ii", "iii"];
        let parts: Vec<&str> = names
            .iter()
            .zip(self.use_condition)
            .filter_map(|(n, on)| on.then_some(*n))
            .collect();
        format!("cond_{}", parts.join("_"))
    }
}

/// Fallback spike detection for traces without recorded spike times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeDetectorParams {
    pub threshold: f64,
    pub lockout: f64,
}

impl Default for SpikeDetectorParams {
    fn default() -> Self {
        SpikeDetectorParams {
            threshold: -20.0,
            lockout: 2.0,
        }
    }
}

/// `(neuron, time_ms)`, sorted by neuron then time.
pub type Occurrences = Vec<(usize, f64)>;

pub fn detect_spikes(tr: &VoltageTraces, p: &SpikeDetectorParams) -> Occurrences {
    if let Some(spikes) = &tr.spike_times {
        return spikes
            .iter()
            .enumerate()
            .flat_map(|(j, ts)| ts.iter().map(move |&t| (j, t)))
            .collect();
    }
    let mut out = Vec::new();
    for (j, col) in tr.values.columns().into_iter().enumerate() {
        let mut last = f64::NEG_INFINITY;
        for k in 1..col.len() {
            let (a, b) = (col[k - 1], col[k]);
            if a < p.threshold && b >= p.threshold {
                let t = tr.time(k - 1) + tr.dt_record * (p.threshold - a) / (b - a);
                if t - last >= p.lockout {
                    out.push((j, t));
                    last = t;
                }
            }
        }
    }
    out
}

/// Least-squares slopes of every window `y[k..=k + w]`, indexed by `k`.
fn forward_slopes(y: ArrayView1<f64>, w: usize, dt: f64) -> Vec<f64> {
    let mean = w as f64 / 2.0;
    let sxx: f64 = (0..=w).map(|x| (x as f64 - mean).powi(2)).sum();
    let coef: Vec<f64> = (0..=w).map(|x| (x as f64 - mean) / (sxx * dt)).collect();
    (0..y.len().saturating_sub(w))
        .map(|k| coef.iter().enumerate().map(|(x, c)| c * y[k + x]).sum())
        .collect()
}

/// Per-sample qualification under the enabled conditions; `None` for samples
/// too close to either end to have both windows.
fn qualifying(y: ArrayView1<f64>, dt: f64, p: &EventDetectorParams) -> Vec<Option<bool>> {
    let w = p.deriv_window;
    let slopes = forward_slopes(y, w, dt);
    let [use_i, use_ii, use_iii] = p.use_condition;
    (0..y.len())
        .map(|k| {
            if k < w || k + w >= y.len() {
                return None;
            }
            let left = slopes[k - w];
            let right = slopes[k];
            Some(
                (!use_i || right >= p.right_deriv_threshold)
                    && (!use_ii || right - left >= p.deriv_jump_threshold)
                    && (!use_iii || left >= p.left_deriv_threshold),
            )
        })
        .collect()
}

fn detect_in_trace(y: ArrayView1<f64>, dt: f64, p: &EventDetectorParams) -> Vec<usize> {
    let mut onsets = Vec::new();
    let mut in_run = false;
    for (k, q) in qualifying(y, dt, p).into_iter().enumerate() {
        let Some(ok) = q else { continue };
        if ok && !in_run {
            onsets.push(k);
        }
        in_run = ok;
    }
    onsets
}

pub fn detect_events(tr: &VoltageTraces, p: &EventDetectorParams) -> Result<Occurrences> {
    p.validate()?;
    let need = 2 * p.deriv_window + 1;
    if tr.n_samples() < need {
        return Err(Error::Parameter(format!(
            "trace has {} samples; event detection needs at least {need}",
            tr.n_samples()
        )));
    }
    let per_neuron: Vec<Vec<usize>> = (0..tr.n_neurons())
        .into_par_iter()
        .map(|j| detect_in_trace(tr.values.column(j), tr.dt_record, p))
        .collect();
    Ok(per_neuron
        .into_iter()
        .enumerate()
        .flat_map(|(j, ks)| ks.into_iter().map(move |k| (j, tr.time(k))))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Spike,
    Event,
}

impl ProcessKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProcessKind::Spike => "spike",
            ProcessKind::Event => "event",
        }
    }
}

/// Binned 0/1 indicators; row `m` covers `(m * delta, (m + 1) * delta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryProcessMatrix {
    pub delta: f64,
    /// bins x neurons
    pub values: Array2<u8>,
    pub kind: ProcessKind,
}

impl BinaryProcessMatrix {
    pub fn n_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.values.ncols()
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }
}

pub fn n_bins(duration: f64, delta: f64) -> usize {
    (duration / delta + 1e-9).floor() as usize
}

fn bin_one(
    occ: &[(usize, f64)],
    n_neurons: usize,
    duration: f64,
    delta: f64,
    kind: ProcessKind,
) -> Result<BinaryProcessMatrix> {
    let bins = n_bins(duration, delta);
    let mut values = Array2::<u8>::zeros((bins, n_neurons));
    for &(j, t) in occ {
        if j >= n_neurons {
            return Err(Error::Data(format!(
                "{} for neuron {j} of {n_neurons}",
                kind.as_str()
            )));
        }
        if !(t >= 0.0 && t <= duration) {
            return Err(Error::Data(format!(
                "{} time {t} outside [0, {duration}]",
                kind.as_str()
            )));
        }
        // (m delta, (m+1) delta] -> m; t = 0 joins the first bin
        let m = ((t / delta - 1e-9).ceil() as isize - 1).max(0) as usize;
        if m < bins {
            values[[m, j]] = 1;
        }
    }
    Ok(BinaryProcessMatrix {
        delta,
        values,
        kind,
    })
}

/// Bins spikes into `x` and events into `y`. Occurrences after the last full
/// bin are dropped.
pub fn bin_processes(
    spikes: &[(usize, f64)],
    events: &[(usize, f64)],
    n_neurons: usize,
    duration: f64,
    delta: f64,
) -> Result<(BinaryProcessMatrix, BinaryProcessMatrix)> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Parameter(format!("bin width {delta} must be > 0")));
    }
    Ok((
        bin_one(spikes, n_neurons, duration, delta, ProcessKind::Spike)?,
        bin_one(events, n_neurons, duration, delta, ProcessKind::Event)?,
    ))
}

fn meta_line(delta: f64, bins: usize, neurons: usize) -> String {
    format!("# delta={delta},n_bins={bins},n_neurons={neurons}\n")
}

/// Sparse raster: one `neuron,bin_index,kind` row per 1-entry of every matrix.
pub fn write_raster(mats: &[&BinaryProcessMatrix], path: &Path) -> Result<()> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Data("no matrices to write".into()))?;
    let mut out = meta_line(first.delta, first.n_bins(), first.n_neurons());
    out.push_str("neuron,bin_index,kind\n");
    for m in mats {
        if m.values.dim() != first.values.dim() || m.delta != first.delta {
            return Err(Error::Data(
                "raster matrices must share shape and delta".into(),
            ));
        }
        for j in 0..m.n_neurons() {
            for (b, &v) in m.values.column(j).iter().enumerate() {
                if v == 1 {
                    out.push_str(&format!("{j},{b},{}\n", m.kind.as_str()));
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Dense raster: bins x neurons matrix of 0/1 after a metadata line.
pub fn write_dense(m: &BinaryProcessMatrix, path: &Path) -> Result<()> {
    let mut out = meta_line(m.delta, m.n_bins(), m.n_neurons());
    out.insert_str(out.len() - 1, &format!(",kind={}", m.kind.as_str()));
    for row in m.values.rows() {
        let cells: Vec<&str> = row
            .iter()
            .map(|&v| if v == 1 { "1" } else { "0" })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct RasterMeta {
    delta: f64,
    n_bins: usize,
    n_neurons: usize,
    kind: Option<ProcessKind>,
}

fn parse_meta(line: &str, path: &Path) -> Result<RasterMeta> {
    let mut delta = None;
    let mut bins = None;
    let mut neurons = None;
    let mut kind = None;
    let body = line.trim_start_matches('#').trim();
    for kv in body.split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::format(path, 1, format!("bad metadata `{kv}`")))?;
        let bad = |e: String| Error::format(path, 1, format!("{k}: {e}"));
        match k.trim() {
            "delta" => delta = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "n_bins" => bins = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "n_neurons" => neurons = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "kind" => {
                kind = Some(match v.trim() {
                    "spike" => ProcessKind::Spike,
                    "event" => ProcessKind::Event,
                    other => return Err(bad(format!("unknown kind `{other}`"))),
                })
            }
            other => return Err(Error::format(path, 1, format!("unknown key `{other}`"))),
        }
    }
    match (delta, bins, neurons) {
        (Some(delta), Some(n_bins), Some(n_neurons)) => Ok(RasterMeta {
            delta,
            n_bins,
            n_neurons,
            kind,
        }),
        _ => Err(Error::format(
            path,
            1,
            "metadata needs delta, n_bins, n_neurons",
        )),
    }
}

/// Reads a sparse raster; returns `(spikes, events)`.
pub fn read_raster(path: &Path) -> Result<(BinaryProcessMatrix, BinaryProcessMatrix)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let meta = match lines.next() {
        Some((_, l)) if l.starts_with('#') => parse_meta(l, path)?,
        _ => {
            return Err(Error::format(
                path,
                1,
                "missing `# delta=...` metadata line",
            ))
        }
    };
    match lines.next() {
        Some((_, h)) if h.trim() == "neuron,bin_index,kind" => {}
        _ => {
            return Err(Error::format(
                path,
                2,
                "expected header `neuron,bin_index,kind`",
            ))
        }
    }
    let shape = (meta.n_bins, meta.n_neurons);
    let mut x = Array2::<u8>::zeros(shape);
    let mut y = Array2::<u8>::zeros(shape);
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(Error::format(path, lineno, "expected 3 fields"));
        }
        let j: usize = cells[0]
            .parse()
            .map_err(|e| Error::format(path, lineno, format!("neuron: {e}")))?;
        let b: usize = cells[1]
            .parse()
            .map_err(|e| Error::format(path, lineno, format!("bin_index: {e}")))?;
        if j >= meta.n_neurons || b >= meta.n_bins {
            return Err(Error::format(path, lineno, "index outside declared shape"));
        }
        match cells[2] {
            "spike" => x[[b, j]] = 1,
            "event" => y[[b, j]] = 1,
            other => {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("unknown kind `{other}`"),
                ))
            }
        }
    }
    Ok((
        BinaryProcessMatrix {
            delta: meta.delta,
            values: x,
            kind: ProcessKind::Spike,
        },
        BinaryProcessMatrix {
            delta: meta.delta,
            values: y,
            kind: ProcessKind::Event,
        },
    ))
}

pub fn read_dense(path: &Path) -> Result<BinaryProcessMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let meta = match lines.next() {
        Some((_, l)) if l.starts_with('#') => parse_meta(l, path)?,
        _ => {
            return Err(Error::format(
                path,
                1,
                "missing `# delta=...` metadata line",
            ))
        }
    };
    let kind = meta
        .kind
        .ok_or_else(|| Error::format(path, 1, "dense raster needs kind=spike|event"))?;
    let mut values = Array2::<u8>::zeros((meta.n_bins, meta.n_neurons));
    let mut row = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if row >= meta.n_bins {
            return Err(Error::format(path, idx + 1, "more rows than n_bins"));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != meta.n_neurons {
            return Err(Error::format(
                path,
                idx + 1,
                "row width differs from n_neurons",
            ));
        }
        for (j, c) in cells.iter().enumerate() {
            values[[row, j]] = match c.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::format(
                        path,
                        idx + 1,
                        format!("entry `{other}` is not 0/1"),
                    ))
                }
            };
        }
        row += 1;
    }
    if row != meta.n_bins {
        return Err(Error::format(
            path,
            0,
            format!("{row} rows, expected {}", meta.n_bins),
        ));
    }
    Ok(BinaryProcessMatrix {
        delta: meta.delta,
        values,
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    /// One-neuron trace sampled every `dt` from a function of time.
    fn trace_from(f: impl Fn(f64) -> f64, duration: f64, dt: f64) -> VoltageTraces {
        let n = (duration / dt).round() as usize + 1;
        let col: Array1<f64> = (0..n).map(|k| f(k as f64 * dt)).collect();
        VoltageTraces {
            dt_record: dt,
            values: col.insert_axis(ndarray::Axis(1)),
            spike_times: None,
        }
    }

    #[test]
    fn forward_slopes_exact_on_lines() {
        let y: Array1<f64> = (0..20).map(|k| 3.0 - 2.5 * k as f64 * 0.1).collect();
        for s in forward_slopes(y.view(), 4, 0.1) {
            assert!((s + 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn kink_fixture_single_sample_window() {
        // flat for 10 ms, then +5 mV/ms; with one-sample windows the slopes
        // are two-point differences and the kink sample is the only onset
        let tr = trace_from(
            |t| {
                if t <= 10.0 {
                    -70.0
                } else {
                    -70.0 + 5.0 * (t - 10.0)
                }
            },
            20.0,
            0.1,
        );
        let p = EventDetectorParams {
            deriv_window: 1,
            ..EventDetectorParams::default()
        };
        let ev = detect_events(&tr, &p).unwrap();
        assert_eq!(ev.len(), 1);
        assert!((ev[0].1 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn kink_fixture_default_window() {
        // 6-point windows at dt = 0.1: the right window at kink - 3 samples holds
        // [0, 0, 0, 0, 0.5, 1.0] mV, slope 3.25 / 17.5 / 0.1 = 1.857 mV/ms >= 1,
        // while at kink - 4 it is 1.25 / 17.5 / 0.1 = 0.714 < 1
        let tr = trace_from(
            |t| {
                if t <= 10.0 {
                    -70.0
                } else {
                    -70.0 + 5.0 * (t - 10.0)
                }
            },
            20.0,
            0.1,
        );
        let ev = detect_events(&tr, &EventDetectorParams::default()).unwrap();
        assert_eq!(ev.len(), 1);
        assert!((ev[0].1 - 9.7).abs() < 1e-9, "{:?}", ev);
    }

    #[test]
    fn constant_trace_has_no_events() {
        let tr = trace_from(|_| -65.0, 10.0, 0.1);
        for conds in [&[1usize, 2, 3][..], &[1], &[2], &[1, 2]] {
            let p = EventDetectorParams::default().with_conditions(conds);
            assert!(detect_events(&tr, &p).unwrap().is_empty(), "{conds:?}");
        }
    }

    #[test]
    fn jump_condition_rejects_recovery_ramp() {
        // rising at +2 mV/ms, then steepening to +2.5 mV/ms at t = 10
        let tr = trace_from(
            |t| {
                if t <= 10.0 {
                    -80.0 + 2.0 * t
                } else {
                    -60.0 + 2.5 * (t - 10.0)
                }
            },
            20.0,
            0.1,
        );
        let without_jump = EventDetectorParams::default().with_conditions(&[1, 3]);
        let ev = detect_events(&tr, &without_jump).unwrap();
        // every interior sample qualifies: one run, timed at the first interior sample
        assert_eq!(ev.len(), 1);
        assert!((ev[0].1 - 0.5).abs() < 1e-9);
        // right - left never exceeds 0.5 < 1
        let all = EventDetectorParams::default();
        assert!(detect_events(&tr, &all).unwrap().is_empty());
    }

    #[test]
    fn too_short_trace_rejected() {
        let tr = trace_from(|_| -70.0, 0.9, 0.1);
        assert_eq!(tr.n_samples(), 10);
        assert!(matches!(
            detect_events(&tr, &EventDetectorParams::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = EventDetectorParams {
            left_deriv_threshold: 0.5,
            ..EventDetectorParams::default()
        };
        assert!(p.validate().is_err());
        let p = EventDetectorParams::default().with_conditions(&[]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn tags() {
        let p = EventDetectorParams::default();
        assert_eq!(p.tag(), "all");
        assert_eq!(p.clone().with_conditions(&[3]).tag(), "cond_iii");
        assert_eq!(p.with_conditions(&[1, 2]).tag(), "cond_i_ii");
    }

    #[test]
    fn spikes_pass_through_when_recorded() {
        let mut tr = trace_from(|_| -70.0, 5.0, 0.1);
        tr.spike_times = Some(vec![vec![1.25, 3.5]]);
        assert_eq!(
            detect_spikes(&tr, &SpikeDetectorParams::default()),
            vec![(0, 1.25), (0, 3.5)]
        );
    }

    #[test]
    fn spike_threshold_crossings() {
        let flat = trace_from(|_| -70.0, 100.0, 0.1);
        assert!(detect_spikes(&flat, &SpikeDetectorParams::default()).is_empty());

        // triangular spikes peaking at +30 mV, rising 50 mV/ms from -70 mV at t0
        let spike = |t: f64, t0: f64| {
            let d = t - t0;
            if (0.0..2.0).contains(&d) {
                -70.0 + 50.0 * d.min(2.0 - d)
            } else {
                -70.0
            }
        };
        let tr = trace_from(|t| spike(t, 10.0).max(spike(t, 60.0)), 100.0, 0.1);
        let got = detect_spikes(&tr, &SpikeDetectorParams::default());
        // -20 mV reached 1 ms after each onset
        assert_eq!(got.len(), 2);
        assert!((got[0].1 - 11.0).abs() < 1e-9);
        assert!((got[1].1 - 61.0).abs() < 1e-9);
    }

    #[test]
    fn binning_rules() {
        let (x, y) = bin_processes(&[(0, 1.5)], &[(1, 2.1), (1, 2.3)], 2, 5.0, 1.0).unwrap();
        assert_eq!(x.n_bins(), 5);
        assert_eq!(x.values[[1, 0]], 1);
        assert_eq!(x.count(), 1);
        assert_eq!(y.values[[2, 1]], 1);
        assert_eq!(y.count(), 1);

        // right-closed bins: t = 2 belongs to (1, 2]
        let (x, _) = bin_processes(&[(0, 2.0)], &[], 1, 5.0, 1.0).unwrap();
        assert_eq!(x.values[[1, 0]], 1);

        let (x, y) = bin_processes(&[], &[], 3, 7.5, 1.0).unwrap();
        assert_eq!(x.values.dim(), (7, 3));
        assert_eq!(x.count() + y.count(), 0);

        assert!(matches!(
            bin_processes(&[(0, 6.0)], &[], 1, 5.0, 1.0),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            bin_processes(&[(0, -0.1)], &[], 1, 5.0, 1.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn rasters_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (x, y) =
            bin_processes(&[(0, 0.5), (2, 3.2)], &[(1, 1.7), (2, 4.0)], 3, 5.0, 1.0).unwrap();
        let p = dir.path().join("raster.csv");
        write_raster(&[&x, &y], &p).unwrap();
        let (x2, y2) = read_raster(&p).unwrap();
        assert_eq!((x2, y2), (x.clone(), y));

        let d = dir.path().join("dense.csv");
        write_dense(&x, &d).unwrap();
        assert_eq!(read_dense(&d).unwrap(), x);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn noisy_trace(seed_vals: &[f64], dt: f64) -> VoltageTraces {
            // random walk with occasional steep upswings
            let mut v = -70.0;
            let col: Array1<f64> = seed_vals
                .iter()
                .map(|&u| {
                    v += if u > 0.9 { 0.5 } else { (u - 0.5) * 0.1 };
                    v
                })
                .collect();
            VoltageTraces {
                dt_record: dt,
                values: col.insert_axis(ndarray::Axis(1)),
                spike_times: None,
            }
        }

        proptest! {
            #[test]
            fn conjunction_is_subset(vals in proptest::collection::vec(0.0f64..1.0, 50..400), single in 1usize..=3) {
                let tr = noisy_trace(&vals, 0.1);
                let col = tr.values.column(0);
                let all_p = EventDetectorParams::default();
                let one_p = EventDetectorParams::default().with_conditions(&[single]);
                let all_q = qualifying(col, 0.1, &all_p);
                let one_q = qualifying(col, 0.1, &one_p);
                for (a, b) in all_q.iter().zip(&one_q) {
                    if *a == Some(true) {
                        prop_assert_eq!(*b, Some(true));
                    }
                }
                // so every conjunctive onset sits inside a single-condition run
                let one_onsets = detect_in_trace(col, 0.1, &one_p);
                for k in detect_in_trace(col, 0.1, &all_p) {
                    let start = one_onsets.iter().rev().find(|&&s| s <= k).copied();
                    prop_assert!(start.is_some());
                    prop_assert!((start.unwrap()..=k).all(|i| one_q[i] == Some(true)));
                }
            }

            #[test]
            fn offset_invariance(vals in proptest::collection::vec(0.0f64..1.0, 50..300), offset in -50.0f64..50.0) {
                let tr = noisy_trace(&vals, 0.1);
                let mut shifted = tr.clone();
                shifted.values.mapv_inplace(|v| v + offset);
                for conds in [&[1usize, 2, 3][..], &[1], &[2]] {
                    let p = EventDetectorParams::default().with_conditions(conds);
                    let a = detect_events(&tr, &p).unwrap();
                    let b = detect_events(&shifted, &p).unwrap();
                    prop_assert_eq!(a, b);
                }
            }

            #[test]
            fn binning_caps_counts(times in proptest::collection::vec((0usize..4, 0.0f64..20.0), 0..200)) {
                let (x, _) = bin_processes(&times, &[], 4, 20.0, 1.0).unwrap();
                prop_assert!(x.values.iter().all(|&v| v <= 1));
                prop_assert!(x.count() <= times.len());
                for &(j, t) in &times {
                    let m = ((t / 1.0 - 1e-9).ceil() as isize - 1).max(0) as usize;
                    prop_assert_eq!(x.values[[m, j]], 1);
                }
            }
        }
    }
}
