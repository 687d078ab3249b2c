//! C interface to `lassoconn`.
//!
//! Every object crosses the boundary as an opaque pointer returned through an
//! `out` argument (`lc_graph_generate`, `lc_fit_path`, ...) and released by
//! the matching `lc_*_free`.
//! Functions return an [`LcStatus`]; on failure the message is kept per
//! thread and can be copied out with [`lc_last_error_message`].
//! Matrices are row-major: rasters are `bins x neurons`, coefficients are
//! `source x target`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use lassoconn::config::PipelineConfig;
use lassoconn::eval::{evaluate, RankedEdgeList};
use lassoconn::events::{
    bin_processes, detect_events, detect_spikes, BinaryProcessMatrix, ProcessKind,
};
use lassoconn::graph::DirectedGraph;
use lassoconn::lasso::{
    fit_path, lambda_max, nll, CoefficientSet, LambdaPath, PathOptions, RegressionProblem,
    SolverOptions, TopologyRule, WeightRule,
};
use lassoconn::sim::{simulate, VoltageTraces};
use lassoconn::xcorr::cross_correlate;
use lassoconn::Error;
use ndarray::Array2;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    InvalidData = 3,
    Degenerate = 4,
    Unstable = 5,
    Numeric = 6,
    Convergence = 7,
    Format = 8,
    Io = 9,
    InvalidUtf8 = 10,
    OutOfRange = 11,
    Panic = 12,
}

/// Weight rule selector for [`lc_problem_from_rasters`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcWeightRule {
    Balance = 0,
    Unweighted = 1,
}

/// Edge rule selector for [`lc_path_rank`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcTopologyRule {
    Positive = 0,
    Nonzero = 1,
}

pub struct LcGraph(DirectedGraph);
pub struct LcTraces(VoltageTraces);
pub struct LcProblem(RegressionProblem);
pub struct LcPath(LambdaPath);
pub struct LcRanked(RankedEdgeList);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> LcStatus {
    match e {
        Error::Parameter(_) => LcStatus::InvalidParameter,
        Error::Data(_) => LcStatus::InvalidData,
        Error::Degenerate(_) => LcStatus::Degenerate,
        Error::Unstable { .. } => LcStatus::Unstable,
        Error::Numeric(_) => LcStatus::Numeric,
        Error::Convergence { .. } => LcStatus::Convergence,
        Error::Format { .. } | Error::Json { .. } => LcStatus::Format,
        Error::Io { .. } => LcStatus::Io,
        Error::Stage { source, .. } => status_of(source),
    }
}

struct Fail(LcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LcStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LcStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn config(json: *const c_char) -> Result<PipelineConfig, Fail> {
    if json.is_null() {
        return Ok(PipelineConfig::default());
    }
    let text = CStr::from_ptr(json)
        .to_str()
        .map_err(|_| Fail(LcStatus::InvalidUtf8, "config is not UTF-8".into()))?;
    let cfg = PipelineConfig::from_json_str(text)
        .map_err(|e| Fail(LcStatus::Format, format!("config JSON: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Fail> {
    if got < want {
        return Err(Fail(
            LcStatus::OutOfRange,
            format!("`{what}` holds {got} entries, {want} needed"),
        ));
    }
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Random directed graph without self-loops.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_graph_generate(
    n_nodes: usize,
    p_connect: f64,
    seed: u64,
    out: *mut *mut LcGraph,
) -> LcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(LcGraph(DirectedGraph::generate_random(
            n_nodes, p_connect, seed,
        )?));
        Ok(())
    })
}

/// Graph from `count` edges `sources[k] -> targets[k]`.
///
/// # Safety
/// `sources` and `targets` must hold `count` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_graph_from_edges(
    n_nodes: usize,
    sources: *const usize,
    targets: *const usize,
    count: usize,
    out: *mut *mut LcGraph,
) -> LcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = input(sources, count, "sources")?;
        let t = input(targets, count, "targets")?;
        let g = DirectedGraph::from_edges(n_nodes, s.iter().copied().zip(t.iter().copied()))?;
        *out = boxed(LcGraph(g));
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_graph_free(g: *mut LcGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must be a valid graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_graph_n_nodes(g: *const LcGraph, out: *mut usize) -> LcStatus {
    guard(|| {
        *out_ptr(out, "out")? = obj(g, "graph")?.0.n_nodes();
        Ok(())
    })
}

/// # Safety
/// `g` must be a valid graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_graph_n_edges(g: *const LcGraph, out: *mut usize) -> LcStatus {
    guard(|| {
        *out_ptr(out, "out")? = obj(g, "graph")?.0.n_edges();
        Ok(())
    })
}

/// Number of reciprocal pairs.
///
/// # Safety
/// `g` must be a valid graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_graph_count_bidirectional(
    g: *const LcGraph,
    out: *mut usize,
) -> LcStatus {
    guard(|| {
        *out_ptr(out, "out")? = obj(g, "graph")?.0.count_bidirectional();
        Ok(())
    })
}

/// Dense 0/1 adjacency (row = source) into `buf` of at least `n * n` bytes.
///
/// # Safety
/// `buf` must hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lc_graph_adjacency(
    g: *const LcGraph,
    buf: *mut u8,
    len: usize,
) -> LcStatus {
    guard(|| {
        let g = &obj(g, "graph")?.0;
        let n = g.n_nodes();
        check_len(len, n * n, "buf")?;
        let buf = output(buf, len, "buf")?;
        for (d, s) in buf.iter_mut().zip(g.to_adjacency().iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Simulates `graph` with the `sim` section of a pipeline config (JSON; null
/// for defaults). The simulation seed is derived from the config's master seed.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_simulate(
    graph: *const LcGraph,
    config_json: *const c_char,
    out: *mut *mut LcTraces,
) -> LcStatus {
    guard(|| {
        let g = &obj(graph, "graph")?.0;
        let out = out_ptr(out, "out")?;
        let cfg = config(config_json)?;
        let tr = simulate(
            g,
            &cfg.sim.neuron,
            &cfg.sim.synapse,
            &cfg.sim.noise_synapse,
            &cfg.sim_run(),
        )?;
        *out = boxed(LcTraces(tr));
        Ok(())
    })
}

/// # Safety
/// `t` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_traces_free(t: *mut LcTraces) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Sample count, neuron count and sampling interval (ms).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_traces_shape(
    t: *const LcTraces,
    n_samples: *mut usize,
    n_neurons: *mut usize,
    dt_record: *mut f64,
) -> LcStatus {
    guard(|| {
        let t = &obj(t, "traces")?.0;
        *out_ptr(n_samples, "n_samples")? = t.n_samples();
        *out_ptr(n_neurons, "n_neurons")? = t.n_neurons();
        *out_ptr(dt_record, "dt_record")? = t.dt_record;
        Ok(())
    })
}

/// Membrane potentials, `samples x neurons`, into `buf`.
///
/// # Safety
/// `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_traces_values(
    t: *const LcTraces,
    buf: *mut f64,
    len: usize,
) -> LcStatus {
    guard(|| {
        let t = &obj(t, "traces")?.0;
        check_len(len, t.values.len(), "buf")?;
        let buf = output(buf, len, "buf")?;
        for (d, s) in buf.iter_mut().zip(t.values.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Detects spikes and events (main detector of the config), bins them and
/// builds the weighted regression problem.
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_problem_from_traces(
    traces: *const LcTraces,
    config_json: *const c_char,
    out: *mut *mut LcProblem,
) -> LcStatus {
    guard(|| {
        let t = &obj(traces, "traces")?.0;
        let out = out_ptr(out, "out")?;
        let cfg = config(config_json)?;
        let spikes = detect_spikes(t, &cfg.events.spikes);
        let events = detect_events(t, &cfg.events.detector)?;
        let (x, y) = bin_processes(
            &spikes,
            &events,
            t.n_neurons(),
            t.duration(),
            cfg.events.delta,
        )?;
        *out = boxed(LcProblem(RegressionProblem::new(
            x,
            y,
            cfg.lasso.weight_rule,
        )?));
        Ok(())
    })
}

fn raster(
    values: &[u8],
    bins: usize,
    neurons: usize,
    kind: ProcessKind,
) -> Result<BinaryProcessMatrix, Fail> {
    if values.iter().any(|&v| v > 1) {
        return Err(Fail(
            LcStatus::InvalidData,
            "raster entries must be 0 or 1".into(),
        ));
    }
    Ok(BinaryProcessMatrix {
        delta: 1.0,
        values: Array2::from_shape_vec((bins, neurons), values.to_vec())
            .map_err(|e| Fail(LcStatus::InvalidData, e.to_string()))?,
        kind,
    })
}

/// Regression problem from binned spikes `x` and events `y`, both
/// `n_bins x n_neurons`.
///
/// # Safety
/// `x` and `y` must hold `n_bins * n_neurons` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_problem_from_rasters(
    n_bins: usize,
    n_neurons: usize,
    x: *const u8,
    y: *const u8,
    rule: LcWeightRule,
    out: *mut *mut LcProblem,
) -> LcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let len = n_bins * n_neurons;
        let xm = raster(input(x, len, "x")?, n_bins, n_neurons, ProcessKind::Spike)?;
        let ym = raster(input(y, len, "y")?, n_bins, n_neurons, ProcessKind::Event)?;
        let rule = match rule {
            LcWeightRule::Balance => WeightRule::Balance,
            LcWeightRule::Unweighted => WeightRule::None,
        };
        *out = boxed(LcProblem(RegressionProblem::new(xm, ym, rule)?));
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_problem_free(p: *mut LcProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_problem_n_neurons(p: *const LcProblem, out: *mut usize) -> LcStatus {
    guard(|| {
        *out_ptr(out, "out")? = obj(p, "problem")?.0.n_neurons();
        Ok(())
    })
}

/// Weighted negative log-likelihood at (`intercepts`, `betas`) and, when the
/// gradient buffers are non-null, its gradient.
///
/// # Safety
/// `intercepts`/`grad_intercepts` hold `n`, `betas`/`grad_betas` hold `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn lc_nll(
    p: *const LcProblem,
    intercepts: *const f64,
    betas: *const f64,
    value: *mut f64,
    grad_intercepts: *mut f64,
    grad_betas: *mut f64,
) -> LcStatus {
    guard(|| {
        let p = &obj(p, "problem")?.0;
        let n = p.n_neurons();
        let b0 = input(intercepts, n, "intercepts")?;
        let b = input(betas, n * n, "betas")?;
        let coeffs = CoefficientSet {
            intercepts: b0.to_vec(),
            betas: Array2::from_shape_vec((n, n), b.to_vec()).expect("n * n values"),
            lambda: 0.0,
        };
        let (v, g) = nll(p, &coeffs)?;
        *out_ptr(value, "value")? = v;
        if !grad_intercepts.is_null() {
            output(grad_intercepts, n, "grad_intercepts")?.copy_from_slice(&g.intercepts);
        }
        if !grad_betas.is_null() {
            for (d, s) in output(grad_betas, n * n, "grad_betas")?
                .iter_mut()
                .zip(g.betas.iter())
            {
                *d = *s;
            }
        }
        Ok(())
    })
}

/// Smallest lambda with an empty support.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_lambda_max(
    p: *const LcProblem,
    shared_intercept: bool,
    out: *mut f64,
) -> LcStatus {
    guard(|| {
        *out_ptr(out, "out")? = lambda_max(&obj(p, "problem")?.0, shared_intercept)?;
        Ok(())
    })
}

/// Lasso path with default solver settings.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_fit_path(
    p: *const LcProblem,
    n_lambdas: usize,
    lambda_min_ratio: f64,
    out: *mut *mut LcPath,
) -> LcStatus {
    guard(|| {
        let p = &obj(p, "problem")?.0;
        let out = out_ptr(out, "out")?;
        let path = fit_path(
            p,
            &PathOptions {
                n_lambdas,
                lambda_min_ratio,
            },
            &SolverOptions::default(),
        )?;
        *out = boxed(LcPath(path));
        Ok(())
    })
}

/// # Safety
/// `p` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_path_free(p: *mut LcPath) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_path_len(p: *const LcPath, out: *mut usize) -> LcStatus {
    guard(|| {
        *out_ptr(out, "out")? = obj(p, "path")?.0.fits.len();
        Ok(())
    })
}

/// Lambda, intercepts (`n`) and betas (`n * n`, row = source) of fit `k`.
/// Null buffers are skipped.
///
/// # Safety
/// Non-null buffers must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn lc_path_fit(
    p: *const LcPath,
    k: usize,
    lambda: *mut f64,
    intercepts: *mut f64,
    betas: *mut f64,
) -> LcStatus {
    guard(|| {
        let path = &obj(p, "path")?.0;
        let fit = path.fits.get(k).ok_or_else(|| {
            Fail(
                LcStatus::OutOfRange,
                format!("fit {k} of {}", path.fits.len()),
            )
        })?;
        let n = fit.intercepts.len();
        *out_ptr(lambda, "lambda")? = fit.lambda;
        if !intercepts.is_null() {
            output(intercepts, n, "intercepts")?.copy_from_slice(&fit.intercepts);
        }
        if !betas.is_null() {
            for (d, s) in output(betas, n * n, "betas")?
                .iter_mut()
                .zip(fit.betas.iter())
            {
                *d = *s;
            }
        }
        Ok(())
    })
}

/// Edges ranked by the lambda at which they enter the path.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_path_rank(
    p: *const LcPath,
    rule: LcTopologyRule,
    out: *mut *mut LcRanked,
) -> LcStatus {
    guard(|| {
        let path = &obj(p, "path")?.0;
        let out = out_ptr(out, "out")?;
        let rule = match rule {
            LcTopologyRule::Positive => TopologyRule::Positive,
            LcTopologyRule::Nonzero => TopologyRule::Nonzero,
        };
        *out = boxed(LcRanked(path.rank_edges(rule)));
        Ok(())
    })
}

/// Cross-correlation ranking of the spike raster held by `p`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_xcorr_rank(
    p: *const LcProblem,
    max_lag: usize,
    out: *mut *mut LcRanked,
) -> LcStatus {
    guard(|| {
        let p = &obj(p, "problem")?.0;
        let out = out_ptr(out, "out")?;
        *out = boxed(LcRanked(cross_correlate(p.spikes(), max_lag)?.rank_edges()));
        Ok(())
    })
}

/// # Safety
/// `r` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn lc_ranked_free(r: *mut LcRanked) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_ranked_len(r: *const LcRanked, out: *mut usize) -> LcStatus {
    guard(|| {
        *out_ptr(out, "out")? = obj(r, "ranked")?.0.len();
        Ok(())
    })
}

/// Entry `k` of the ranking.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_ranked_get(
    r: *const LcRanked,
    k: usize,
    source: *mut usize,
    target: *mut usize,
    score: *mut f64,
) -> LcStatus {
    guard(|| {
        let r = &obj(r, "ranked")?.0;
        let &(s, t, v) = r
            .edges
            .get(k)
            .ok_or_else(|| Fail(LcStatus::OutOfRange, format!("entry {k} of {}", r.len())))?;
        *out_ptr(source, "source")? = s;
        *out_ptr(target, "target")? = t;
        *out_ptr(score, "score")? = v;
        Ok(())
    })
}

/// ROC area and maximum PPC of a ranking against a true graph.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_evaluate(
    r: *const LcRanked,
    truth: *const LcGraph,
    auc: *mut f64,
    max_ppc: *mut f64,
) -> LcStatus {
    guard(|| {
        let (_, summary) = evaluate(&obj(r, "ranked")?.0, &obj(truth, "truth")?.0)?;
        *out_ptr(auc, "auc")? = summary.auc;
        *out_ptr(max_ppc, "max_ppc")? = summary.max_ppc;
        Ok(())
    })
}
