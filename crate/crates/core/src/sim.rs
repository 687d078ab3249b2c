//! Network simulator producing membrane-potential traces.
//!
//! The cell model is a conductance-based leaky integrate-and-fire neuron. It
//! stands in for a detailed Hodgkin-Huxley granule-cell model: it yields
//! subthreshold EPSP upswings with clean left/right slopes, threshold spikes
//! with reset and refractoriness, and sparse noise-driven depolarizations,
//! which is everything the event detector and the regression need. It does not
//! reproduce the granule cell's f-I curve or spike waveform (a spike is a
//! threshold crossing followed by an instantaneous reset).
//!
//! Synapses follow a two-state receptor scheme: the open fraction `r` obeys
//! `dr/dt = r1 T (1 - r) - r2 r`, with transmitter concentration `T` a square
//! pulse released after each presynaptic spike. Within each interval of
//! constant `T` the open fraction is advanced exactly, and the membrane sees
//! the mean conductance over the step. The membrane itself is stepped with
//! explicit Euler.
//!
//! Units: time ms, potential mV, conductance nS (synaptic `gmax` in pS),
//! capacitance pF, current pA, concentration mM. With these, pA/pF = mV/ms.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DirectedGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronParams {
    /// pF
    pub membrane_capacitance: f64,
    /// nS
    pub leak_conductance: f64,
    pub leak_reversal: f64,
    pub spike_threshold: f64,
    pub reset_potential: f64,
    pub refractory_period: f64,
    /// pA, drawn once per neuron
    pub bias_current_mean: f64,
    pub bias_current_std: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            membrane_capacitance: 8.0,
            leak_conductance: 0.07,
            leak_reversal: -70.0,
            spike_threshold: -40.0,
            reset_potential: -70.0,
            refractory_period: 2.0,
            bias_current_mean: 2.0,
            bias_current_std: 0.2,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.membrane_capacitance,
            self.leak_conductance,
            self.leak_reversal,
            self.spike_threshold,
            self.reset_potential,
            self.refractory_period,
            self.bias_current_mean,
            self.bias_current_std,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parameter("neuron parameters must be finite".into()));
        }
        if self.membrane_capacitance <= 0.0 || self.leak_conductance <= 0.0 {
            return Err(Error::Parameter(
                "membrane capacitance and leak conductance must be > 0".into(),
            ));
        }
        if self.refractory_period < 0.0 {
            return Err(Error::Parameter("refractory period must be >= 0".into()));
        }
        if self.spike_threshold <= self.reset_potential {
            return Err(Error::Parameter(format!(
                "spike threshold {} must exceed reset potential {}",
                self.spike_threshold, self.reset_potential
            )));
        }
        if self.bias_current_std < 0.0 {
            return Err(Error::Parameter("bias current std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynapseParams {
    /// pS
    pub gmax: f64,
    /// ms^-1 mM^-1
    pub r1: f64,
    /// ms^-1
    pub r2: f64,
    /// Desensitization rate of the three-state scheme. Only 0 is supported.
    pub r6: f64,
    pub transmitter_pulse_amplitude: f64,
    pub transmitter_pulse_duration: f64,
    pub reversal_potential: f64,
}

impl SynapseParams {
    /// Fast excitatory synapse between network neurons.
    pub fn ampa() -> Self {
        SynapseParams {
            gmax: 800.0,
            r1: 5.4,
            r2: 0.84,
            r6: 0.0,
            transmitter_pulse_amplitude: 1.0,
            transmitter_pulse_duration: 1.0,
            reversal_potential: 0.0,
        }
    }

    /// Background synapse driven by Poisson events.
    pub fn noise() -> Self {
        SynapseParams {
            gmax: 500.0,
            r2: 0.1,
            ..SynapseParams::ampa()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gmax,
            self.r1,
            self.r2,
            self.r6,
            self.transmitter_pulse_amplitude,
            self.transmitter_pulse_duration,
            self.reversal_potential,
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("synapse parameters must be finite".into()));
        }
        if self.gmax <= 0.0 {
            return Err(Error::Parameter("synapse gmax must be > 0".into()));
        }
        if self.r1 < 0.0 || self.r2 < 0.0 {
            return Err(Error::Parameter("synapse rates r1, r2 must be >= 0".into()));
        }
        if self.r6 != 0.0 {
            return Err(Error::Parameter(
                "r6 != 0 requires the desensitized state, which is not modelled".into(),
            ));
        }
        if self.transmitter_pulse_duration <= 0.0 || self.transmitter_pulse_amplitude < 0.0 {
            return Err(Error::Parameter(
                "transmitter pulse needs duration > 0 and amplitude >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn kinetics(&self) -> KineticSynapse {
        KineticSynapse {
            r1: self.r1,
            r2: self.r2,
        }
    }
}

impl Default for SynapseParams {
    fn default() -> Self {
        SynapseParams::ampa()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub duration: f64,
    pub dt: f64,
    /// Hz, per neuron
    pub noise_rate: f64,
    pub seed: u64,
    pub record_stride: usize,
    /// Spike-to-release latency.
    pub synaptic_delay: f64,
    /// Starting potential of every neuron; the leak reversal when absent.
    pub initial_potential: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration: 5000.0,
            dt: 0.025,
            noise_rate: 0.2,
            seed: 0,
            record_stride: 1,
            synaptic_delay: 1.0,
            initial_potential: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Parameter(format!("dt = {} must be > 0", self.dt)));
        }
        if !(self.duration.is_finite() && self.duration >= self.dt) {
            return Err(Error::Parameter(format!(
                "duration = {} must be at least dt = {}",
                self.duration, self.dt
            )));
        }
        if !(self.noise_rate.is_finite() && self.noise_rate >= 0.0) {
            return Err(Error::Parameter("noise rate must be >= 0".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::Parameter("record_stride must be positive".into()));
        }
        if !(self.synaptic_delay.is_finite() && self.synaptic_delay >= 0.0) {
            return Err(Error::Parameter("synaptic delay must be >= 0".into()));
        }
        if matches!(self.initial_potential, Some(v) if !v.is_finite()) {
            return Err(Error::Parameter("initial potential must be finite".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        // tolerance keeps e.g. 5000 / 0.025 from flooring to 199999
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    pub fn dt_record(&self) -> f64 {
        self.dt * self.record_stride as f64
    }
}

/// Two-state receptor kinetics, `dr/dt = r1 T (1 - r) - r2 r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KineticSynapse {
    pub r1: f64,
    pub r2: f64,
}

impl KineticSynapse {
    /// Exact solution over `h` ms at constant transmitter `t`. Returns the new
    /// open fraction and the integral of `r` over the interval.
    pub fn advance(&self, r: f64, transmitter: f64, h: f64) -> (f64, f64) {
        let rate = self.r1 * transmitter + self.r2;
        if rate == 0.0 {
            return (r, r * h);
        }
        let r_inf = self.r1 * transmitter / rate;
        let decay = (-rate * h).exp();
        let r_new = r_inf + (r - r_inf) * decay;
        let integral = r_inf * h + (r - r_inf) * (1.0 - decay) / rate;
        (r_new, integral)
    }
}

/// Sorted, merged transmitter release windows `[start, end)` for one source.
#[derive(Debug, Default, Clone)]
struct ReleaseQueue {
    windows: VecDeque<(f64, f64)>,
}

impl ReleaseQueue {
    fn push(&mut self, start: f64, end: f64) {
        if let Some(last) = self.windows.back_mut() {
            if start <= last.1 {
                last.1 = last.1.max(end);
                return;
            }
        }
        self.windows.push_back((start, end));
    }

    fn retire_before(&mut self, t: f64) {
        while matches!(self.windows.front(), Some(&(_, end)) if end <= t) {
            self.windows.pop_front();
        }
    }

    /// Advances `r` across `[t0, t1]`, splitting at window edges. Returns the
    /// integral of `r`.
    fn integrate(
        &self,
        kin: &KineticSynapse,
        amplitude: f64,
        r: &mut f64,
        t0: f64,
        t1: f64,
    ) -> f64 {
        let mut t = t0;
        let mut integral = 0.0;
        for &(start, end) in &self.windows {
            if start >= t1 {
                break;
            }
            if end <= t {
                continue;
            }
            if start > t {
                let (rn, i) = kin.advance(*r, 0.0, start - t);
                *r = rn;
                integral += i;
                t = start;
            }
            let stop = end.min(t1);
            let (rn, i) = kin.advance(*r, amplitude, stop - t);
            *r = rn;
            integral += i;
            t = stop;
        }
        if t < t1 {
            let (rn, i) = kin.advance(*r, 0.0, t1 - t);
            *r = rn;
            integral += i;
        }
        integral
    }

    fn is_idle(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageTraces {
    pub dt_record: f64,
    /// samples x neurons, mV
    pub values: Array2<f64>,
    /// Per-neuron spike times in ms; `None` when only voltages are known.
    pub spike_times: Option<Vec<Vec<f64>>>,
}

impl VoltageTraces {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration(&self) -> f64 {
        (self.n_samples().saturating_sub(1)) as f64 * self.dt_record
    }

    pub fn time(&self, sample: usize) -> f64 {
        sample as f64 * self.dt_record
    }
}

/// Simulates the network described by `graph`. Each edge carries its own
/// synapse with conductance `sp_edge.gmax * weight`; each neuron has one noise
/// synapse driven by an independent Poisson train.
pub fn simulate(
    graph: &DirectedGraph,
    np: &NeuronParams,
    sp_edge: &SynapseParams,
    sp_noise: &SynapseParams,
    cfg: &SimConfig,
) -> Result<VoltageTraces> {
    np.validate()?;
    sp_edge.validate()?;
    sp_noise.validate()?;
    cfg.validate()?;

    let n = graph.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let bias: Vec<f64> = if np.bias_current_std > 0.0 {
        let dist = Normal::new(np.bias_current_mean, np.bias_current_std)
            .map_err(|e| Error::Parameter(e.to_string()))?;
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![np.bias_current_mean; n]
    };

    let n_steps = cfg.n_steps();
    let t_end = n_steps as f64 * cfg.dt;
    let mut noise = vec![ReleaseQueue::default(); n];
    if cfg.noise_rate > 0.0 {
        let exp = Exp::new(cfg.noise_rate / 1000.0).map_err(|e| Error::Parameter(e.to_string()))?;
        for q in noise.iter_mut() {
            let mut t = exp.sample(&mut rng);
            while t <= t_end {
                q.push(t, t + sp_noise.transmitter_pulse_duration);
                t += exp.sample(&mut rng);
            }
        }
    }
    // incoming synapses per target: (source, conductance nS, open fraction)
    let mut incoming: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
    for (s, t) in graph.edges() {
        let g = sp_edge.gmax * 1e-3 * graph.weight((s, t));
        incoming[t].push((s, g, 0.0));
    }
    let mut releases = vec![ReleaseQueue::default(); n];
    let mut noise_r = vec![0.0; n];

    let edge_kin = sp_edge.kinetics();
    let noise_kin = sp_noise.kinetics();
    let g_noise = sp_noise.gmax * 1e-3;
    let c = np.membrane_capacitance;

    let v0 = cfg.initial_potential.unwrap_or(np.leak_reversal);
    let mut v = vec![v0; n];
    let mut refractory_until = vec![f64::NEG_INFINITY; n];
    let mut spikes: Vec<Vec<f64>> = vec![Vec::new(); n];

    let stride = cfg.record_stride;
    let n_samples = n_steps / stride + 1;
    let mut values = Array2::<f64>::zeros((n_samples, n));
    values
        .row_mut(0)
        .iter_mut()
        .zip(&v)
        .for_each(|(d, s)| *d = *s);

    let mut fired: Vec<(usize, f64)> = Vec::new();
    for step in 0..n_steps {
        let t0 = step as f64 * cfg.dt;
        let t1 = (step + 1) as f64 * cfg.dt;
        fired.clear();

        for i in 0..n {
            // step-averaged synaptic conductances
            let mut g_exc = 0.0;
            for syn in incoming[i].iter_mut() {
                let q = &releases[syn.0];
                if q.is_idle() && syn.2 == 0.0 {
                    continue;
                }
                let integral = q.integrate(
                    &edge_kin,
                    sp_edge.transmitter_pulse_amplitude,
                    &mut syn.2,
                    t0,
                    t1,
                );
                if syn.2 < 1e-300 {
                    syn.2 = 0.0;
                }
                g_exc += syn.1 * integral;
            }
            g_exc /= cfg.dt;
            let g_bg = if noise[i].is_idle() && noise_r[i] == 0.0 {
                0.0
            } else {
                let integral = noise[i].integrate(
                    &noise_kin,
                    sp_noise.transmitter_pulse_amplitude,
                    &mut noise_r[i],
                    t0,
                    t1,
                );
                if noise_r[i] < 1e-300 {
                    noise_r[i] = 0.0;
                }
                g_noise * integral / cfg.dt
            };

            let (start, v_start) = if t1 <= refractory_until[i] {
                v[i] = np.reset_potential;
                continue;
            } else if t0 < refractory_until[i] {
                (refractory_until[i], np.reset_potential)
            } else {
                (t0, v[i])
            };
            let h = t1 - start;
            let current = -np.leak_conductance * (v_start - np.leak_reversal)
                + bias[i]
                + g_exc * (sp_edge.reversal_potential - v_start)
                + g_bg * (sp_noise.reversal_potential - v_start);
            let v_new = v_start + h * current / c;
            if !v_new.is_finite() {
                return Err(Error::Unstable {
                    time_ms: t1,
                    neuron: i,
                });
            }
            if v_new >= np.spike_threshold {
                let frac = ((np.spike_threshold - v_start) / (v_new - v_start)).clamp(0.0, 1.0);
                let t_spike = start + frac * h;
                spikes[i].push(t_spike);
                fired.push((i, t_spike));
                refractory_until[i] = t_spike + np.refractory_period;
                v[i] = np.reset_potential;
            } else {
                v[i] = v_new;
            }
        }

        for &(i, ts) in &fired {
            let onset = ts + cfg.synaptic_delay;
            releases[i].push(onset, onset + sp_edge.transmitter_pulse_duration);
        }
        for q in releases.iter_mut().chain(noise.iter_mut()) {
            q.retire_before(t1);
        }

        if (step + 1) % stride == 0 {
            let row = (step + 1) / stride;
            values
                .row_mut(row)
                .iter_mut()
                .zip(&v)
                .for_each(|(d, s)| *d = *s);
        }
    }

    Ok(VoltageTraces {
        dt_record: cfg.dt_record(),
        values,
        spike_times: Some(spikes),
    })
}

/// Writes the trace CSV (`time,v0,...`, preceded by a `# dt_record=` line)
/// and, when spike times are known, the spike CSV (`neuron,time_ms`).
pub fn write_traces(
    tr: &VoltageTraces,
    trace_path: &Path,
    spike_path: Option<&Path>,
) -> Result<()> {
    let mut out = String::with_capacity(tr.values.len() * 20);
    out.push_str(&format!("# dt_record={}\n", tr.dt_record));
    out.push_str("time");
    for j in 0..tr.n_neurons() {
        out.push_str(&format!(",v{j}"));
    }
    out.push('\n');
    for (k, row) in tr.values.rows().into_iter().enumerate() {
        out.push_str(&tr.time(k).to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(trace_path, out).map_err(|e| Error::io(trace_path, e))?;

    if let Some(spike_path) = spike_path {
        let mut out = String::from("neuron,time_ms\n");
        if let Some(spikes) = &tr.spike_times {
            for (j, times) in spikes.iter().enumerate() {
                for t in times {
                    out.push_str(&format!("{j},{t}\n"));
                }
            }
        }
        fs::write(spike_path, out).map_err(|e| Error::io(spike_path, e))?;
    }
    Ok(())
}

pub fn read_traces(trace_path: &Path, spike_path: Option<&Path>) -> Result<VoltageTraces> {
    let text = fs::read_to_string(trace_path).map_err(|e| Error::io(trace_path, e))?;
    let mut dt_record = None;
    let mut header: Option<usize> = None;
    let mut times = Vec::new();
    let mut flat = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("dt_record=") {
                dt_record = Some(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::format(trace_path, lineno, e.to_string()))?,
                );
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match header {
            None => {
                if cells[0] != "time" {
                    return Err(Error::format(
                        trace_path,
                        lineno,
                        "header must start with `time`",
                    ));
                }
                for (j, c) in cells[1..].iter().enumerate() {
                    if *c != format!("v{j}") {
                        return Err(Error::format(
                            trace_path,
                            lineno,
                            format!("expected column v{j}, found `{c}`"),
                        ));
                    }
                }
                header = Some(cells.len() - 1);
            }
            Some(n) => {
                if cells.len() != n + 1 {
                    return Err(Error::format(
                        trace_path,
                        lineno,
                        format!("expected {} fields, found {}", n + 1, cells.len()),
                    ));
                }
                let parse = |c: &str| {
                    c.parse::<f64>()
                        .map_err(|e| Error::format(trace_path, lineno, format!("`{c}`: {e}")))
                };
                times.push(parse(cells[0])?);
                for c in &cells[1..] {
                    flat.push(parse(c)?);
                }
            }
        }
    }
    let n = header.ok_or_else(|| Error::format(trace_path, 0, "missing header"))?;
    if times.is_empty() {
        return Err(Error::format(trace_path, 0, "no samples"));
    }
    let dt_record = match dt_record {
        Some(dt) => dt,
        None if times.len() >= 2 => times[1] - times[0],
        None => {
            return Err(Error::format(
                trace_path,
                0,
                "single-sample trace without a dt_record line",
            ))
        }
    };
    let values = Array2::from_shape_vec((times.len(), n), flat)
        .map_err(|e| Error::format(trace_path, 0, e.to_string()))?;

    let spike_times = match spike_path {
        Some(p) => Some(read_spikes(p, n)?),
        None => None,
    };
    Ok(VoltageTraces {
        dt_record,
        values,
        spike_times,
    })
}

pub fn read_spikes(path: &Path, n_neurons: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut spikes = vec![Vec::new(); n_neurons];
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "neuron,time_ms" => {}
        _ => return Err(Error::format(path, 1, "expected header `neuron,time_ms`")),
    }
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::format(path, idx + 1, "expected two fields"))?;
        let j: usize = a
            .trim()
            .parse()
            .map_err(|e| Error::format(path, idx + 1, format!("neuron: {e}")))?;
        let t: f64 = b
            .trim()
            .parse()
            .map_err(|e| Error::format(path, idx + 1, format!("time: {e}")))?;
        if j >= n_neurons {
            return Err(Error::format(
                path,
                idx + 1,
                format!("neuron {j} outside 0..{n_neurons}"),
            ));
        }
        spikes[j].push(t);
    }
    for s in spikes.iter_mut() {
        s.sort_by(f64::total_cmp);
    }
    Ok(spikes)
}
