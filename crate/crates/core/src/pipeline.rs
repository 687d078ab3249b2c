//! File-based pipeline stages. Each stage reads its inputs from a directory
//! and writes its outputs to another, so any stage can be re-run alone.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSummary, RankedEdgeList};
use crate::events::{
    bin_processes, detect_events, detect_spikes, read_dense, read_raster, write_dense,
    write_raster, BinaryProcessMatrix,
};
use crate::graph::DirectedGraph;
use crate::lasso::{estimate_topology, fit_path, RegressionProblem};
use crate::sim::{read_traces, simulate, write_traces};
use crate::xcorr::cross_correlate;

pub const TRUTH_JSON: &str = "truth.json";
pub const TRUTH_CSV: &str = "truth.csv";
pub const TRACES_CSV: &str = "traces.csv";
pub const SPIKES_CSV: &str = "spikes.csv";
pub const CONFIG_JSON: &str = "config.json";
pub const XCORR_CSV: &str = "xcorr.csv";

pub fn raster_file(tag: &str) -> String {
    format!("raster_{tag}.csv")
}

/// Dense layout: one file per process kind.
pub fn dense_raster_files(tag: &str) -> (String, String) {
    (
        format!("raster_{tag}_spikes.csv"),
        format!("raster_{tag}_events.csv"),
    )
}

pub fn ranked_file(method: &str) -> String {
    format!("ranked_{method}.csv")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::io(
            &path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "required input file is missing",
            ),
        ))
    }
}

fn save_raster(
    cfg: &PipelineConfig,
    x: &BinaryProcessMatrix,
    y: &BinaryProcessMatrix,
    out: &Path,
    tag: &str,
) -> Result<()> {
    if cfg.events.dense {
        let (xs, ys) = dense_raster_files(tag);
        write_dense(x, &out.join(xs))?;
        write_dense(y, &out.join(ys))
    } else {
        write_raster(&[x, y], &out.join(raster_file(tag)))
    }
}

fn load_raster(
    cfg: &PipelineConfig,
    input: &Path,
    tag: &str,
) -> Result<(BinaryProcessMatrix, BinaryProcessMatrix)> {
    if cfg.events.dense {
        let (xs, ys) = dense_raster_files(tag);
        let x = read_dense(&require(input.join(xs))?)?;
        let y = read_dense(&require(input.join(ys))?)?;
        if x.values.dim() != y.values.dim() || x.delta != y.delta {
            return Err(Error::Data(format!(
                "dense rasters for `{tag}` disagree in shape or delta"
            )));
        }
        Ok((x, y))
    } else {
        read_raster(&require(input.join(raster_file(tag)))?)
    }
}

/// Ground-truth graph, voltage traces, spike times and the resolved config.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let stage = "simulate";
    let run = || -> Result<()> {
        cfg.validate()?;
        ensure_dir(out)?;
        let truth = DirectedGraph::generate_random(
            cfg.graph.n_nodes,
            cfg.graph.p_connect,
            cfg.graph_seed(),
        )?;
        let traces = simulate(
            &truth,
            &cfg.sim.neuron,
            &cfg.sim.synapse,
            &cfg.sim.noise_synapse,
            &cfg.sim_run(),
        )?;
        truth.write_json(&out.join(TRUTH_JSON))?;
        truth.write_csv(&out.join(TRUTH_CSV))?;
        write_traces(&traces, &out.join(TRACES_CSV), Some(&out.join(SPIKES_CSV)))?;
        let mut resolved = cfg.clone();
        resolved.sim.run.seed = cfg.sim_seed();
        resolved.write(&out.join(CONFIG_JSON))
    };
    run().map_err(|e| e.in_stage(stage))
}

/// Spike and event rasters, one file per detector configuration.
pub fn cmd_detect(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<String>> {
    let run = || -> Result<Vec<String>> {
        cfg.validate()?;
        ensure_dir(out)?;
        let spikes_path = input.join(SPIKES_CSV);
        let traces = read_traces(
            &require(input.join(TRACES_CSV))?,
            spikes_path.is_file().then_some(spikes_path.as_path()),
        )?;
        let spikes = detect_spikes(&traces, &cfg.events.spikes);
        let mut tags = Vec::new();
        for det in cfg.events.detectors() {
            let events = detect_events(&traces, &det)?;
            let (x, y) = bin_processes(
                &spikes,
                &events,
                traces.n_neurons(),
                traces.duration(),
                cfg.events.delta,
            )?;
            let tag = det.tag();
            save_raster(cfg, &x, &y, out, &tag)?;
            tags.push(tag);
        }
        Ok(tags)
    };
    run().map_err(|e| e.in_stage("detect"))
}

/// Lasso path, ranked edges and final-lambda topology for every raster.
pub fn cmd_infer(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<()> {
    let run = || -> Result<()> {
        cfg.validate()?;
        ensure_dir(out)?;
        for det in cfg.events.detectors() {
            let tag = det.tag();
            let (x, y) = load_raster(cfg, input, &tag)?;
            let problem =
                RegressionProblem::new(x, y, cfg.lasso.weight_rule).map_err(|e| match e {
                    Error::Degenerate(m) => Error::Degenerate(format!("events `{tag}`: {m}")),
                    other => other,
                })?;
            let path = fit_path(&problem, &cfg.lasso.path, &cfg.lasso.solver)?;
            let method = format!("lasso_{tag}");
            write_text(
                &out.join(format!("{method}_path.csv")),
                &path.summary_csv(&problem)?,
            )?;
            path.write_fits_json(&out.join(format!("{method}_fits.json")))?;
            let mut ranked = path.rank_edges(cfg.lasso.topology_rule);
            ranked.method_tag = method.clone();
            ranked.write_csv(&out.join(ranked_file(&method)))?;
            let last = path.fits.last().expect("path has at least two fits");
            estimate_topology(last, cfg.lasso.topology_rule)
                .write_json(&out.join(format!("estimate_{method}.json")))?;
        }
        Ok(())
    };
    run().map_err(|e| e.in_stage("infer"))
}

/// Cross-correlation peaks and their ranking, from the spike raster.
pub fn cmd_baseline(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<()> {
    let run = || -> Result<()> {
        cfg.validate()?;
        ensure_dir(out)?;
        let tag = cfg.events.detector.tag();
        let (x, _) = load_raster(cfg, input, &tag)?;
        let cr = cross_correlate(&x, cfg.xcorr.max_lag)?;
        cr.write_csv(&out.join(XCORR_CSV))?;
        cr.rank_edges().write_csv(&out.join(ranked_file("xcorr")))
    };
    run().map_err(|e| e.in_stage("baseline"))
}

/// Curves and summaries for every `ranked_<method>.csv` in `input`.
pub fn cmd_evaluate(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<Vec<EvalSummary>> {
    let run = || -> Result<Vec<EvalSummary>> {
        cfg.validate()?;
        ensure_dir(out)?;
        let truth = DirectedGraph::read_json(&require(input.join(TRUTH_JSON))?)?;
        let mut ranked_files: Vec<(String, PathBuf)> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter_map(|p| {
                let name = p.file_name()?.to_str()?;
                let method = name
                    .strip_prefix("ranked_")?
                    .strip_suffix(".csv")?
                    .to_string();
                Some((method, p))
            })
            .collect();
        ranked_files.sort();
        if ranked_files.is_empty() {
            return Err(Error::Data(format!(
                "no ranked_<method>.csv files in {}",
                input.display()
            )));
        }
        let mut summaries = Vec::new();
        for (method, path) in ranked_files {
            let mut ranked = RankedEdgeList::read_csv(&path)?;
            ranked.method_tag = method.clone();
            let (curves, summary) = evaluate(&ranked, &truth)?;
            curves.write_csv(&out.join(format!("{}_{method}.csv", cfg.eval.curves_prefix)))?;
            let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
            write_text(
                &out.join(format!("{}_{method}.json", cfg.eval.summary_prefix)),
                &(json + "\n"),
            )?;
            summaries.push(summary);
        }
        Ok(summaries)
    };
    run().map_err(|e| e.in_stage("evaluate"))
}

/// Every stage in order, all inside `out`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<Vec<EvalSummary>> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    cmd_simulate(cfg, out)?;
    cmd_detect(cfg, out, out)?;
    cmd_infer(cfg, out, out)?;
    cmd_baseline(cfg, out, out)?;
    cmd_evaluate(cfg, out, out)
}
