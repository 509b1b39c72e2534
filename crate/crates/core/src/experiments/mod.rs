//! End-to-end experiment drivers behind the `liegg` command line.
//!
//! Each command reads an [`ExperimentConfig`], writes its artifacts under
//! `output_dir` and returns the same numbers it wrote.

mod config;
mod output;
mod pipeline;

use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::metrics::{apply_generator_image, SymmetryReport};
use crate::net::{save_checkpoint, write_loss_history, Network};
use crate::polarization::subsample_rows;

pub use config::{
    DataConfig, ExperimentConfig, ExtractionConfig, LayerwiseConfig, NetConfig, Overrides, Regime,
    SampleComplexityConfig, SweepConfig, Task,
};
pub use output::{fmt_f64, write_generators, write_pgm, write_spectrum};
pub use pipeline::{
    analyze, fit, obtain_model, polarize, prepare_data, Model, TaskData, TrainSummary,
};

use output::{write_json, write_records, write_run_sidecar};

#[derive(Clone, Debug)]
pub struct ExtractOutcome {
    pub report: SymmetryReport,
    pub training: Option<TrainSummary>,
    pub network: Option<Network>,
}

fn save_training(dir: &Path, net: &Network, summary: Option<&TrainSummary>) -> Result<()> {
    save_checkpoint(net, &dir.join("checkpoint.json"))?;
    if let Some(s) = summary {
        write_loss_history(&s.history, fs::File::create(dir.join("loss.csv"))?)?;
    }
    Ok(())
}

fn extract_into(cfg: &ExperimentConfig, dir: &Path) -> Result<ExtractOutcome> {
    fs::create_dir_all(dir)?;
    let data = prepare_data(cfg)?;
    let (model, training) = obtain_model(cfg, &data)?;
    if let Some(net) = model.network() {
        save_training(dir, net, training.as_ref())?;
    }
    let e = polarize(cfg, model.discriminator(), &data, &cfg.extraction.seed_mode)?;
    let report = analyze(cfg, &e)?;

    write_json(
        &dir.join("report.json"),
        &json!({
            "command": "extract",
            "config": cfg,
            "training": training,
            "report": report,
        }),
    )?;
    write_spectrum(&dir.join("spectrum.csv"), &report)?;
    write_generators(&dir.join("generators.csv"), &report)?;
    e.write_csv(fs::File::create(dir.join("polarization.csv"))?)?;
    write_json(&dir.join("polarization.json"), &e.sidecar())?;

    if let TaskData::Images { train, .. } = &data {
        let x = &cfg.extraction;
        if x.pgm_images > 0 && !x.pgm_times.is_empty() {
            let pgm = dir.join("pgm");
            fs::create_dir_all(&pgm)?;
            let h = &report.generators[0];
            for (i, img) in train.images.iter().take(x.pgm_images).enumerate() {
                for (j, &t) in x.pgm_times.iter().enumerate() {
                    let moved = apply_generator_image(img, h, t)?;
                    write_pgm(&pgm.join(format!("img{i}_t{j}.pgm")), &moved)?;
                }
            }
        }
    }
    Ok(ExtractOutcome {
        report,
        training,
        network: model.network().cloned(),
    })
}

/// Trains (or loads) a model, extracts its generators and writes
/// `report.json`, `spectrum.csv`, `generators.csv`, the polarization matrix
/// and, for image tasks, PGM snapshots along the top generator.
pub fn cmd_extract(cfg: &ExperimentConfig) -> Result<ExtractOutcome> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    let out = extract_into(cfg, &cfg.output_dir)?;
    write_run_sidecar(&cfg.output_dir, "extract", started, clock.elapsed())?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub param_budget: usize,
    pub depth: usize,
    pub hidden_dim: usize,
    pub test_metric: f64,
    pub variance: f64,
    pub min_bias: f64,
    pub mean_bias: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepFailure {
    pub param_budget: usize,
    pub depth: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// The config of one sweep cell: its own seed, widths and directory.
pub fn sweep_cell_config(
    cfg: &ExperimentConfig,
    budget: usize,
    depth: usize,
    seed: u64,
) -> Result<ExperimentConfig> {
    let mut cell = cfg.clone();
    cell.seed = seed;
    cell.train.seed = seed;
    cell.net.param_budget = Some(budget);
    cell.net.hidden_layers = depth;
    cell.net.layer_dims = Some(cfg.dims_for_budget(budget, depth)?);
    cell.checkpoint = None;
    cell.output_dir = cfg
        .output_dir
        .join("cells")
        .join(format!("b{budget}_d{depth}_s{seed}"));
    Ok(cell)
}

/// Trains and scores every `(budget, depth, seed)` cell. Failed cells are
/// listed in `sweep_failures.csv` and omitted from `sweep.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    if cfg.task == Task::Sphere {
        return Err(Error::Config(
            "the sphere task has no network to sweep".into(),
        ));
    }
    let (started, clock) = (SystemTime::now(), Instant::now());
    let s = &cfg.sweep;
    if s.budgets.is_empty() || s.depths.is_empty() || s.seeds.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one budget, depth and seed".into(),
        ));
    }
    let mut cells = Vec::new();
    for &b in &s.budgets {
        for &d in &s.depths {
            for &seed in &s.seeds {
                cells.push(sweep_cell_config(cfg, b, d, seed)?);
            }
        }
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let outcomes: Vec<(ExperimentConfig, Result<ExtractOutcome>)> = cells
        .into_par_iter()
        .map(|cell| {
            let r = extract_into(&cell, &cell.output_dir);
            (cell, r)
        })
        .collect();

    let mut result = SweepResult::default();
    for (cell, outcome) in outcomes {
        let budget = cell.net.param_budget.unwrap_or(0);
        let depth = cell.net.hidden_layers;
        match outcome {
            Ok(o) => result.rows.push(SweepRow {
                param_budget: budget,
                depth,
                hidden_dim: cell.net.layer_dims.as_ref().map_or(0, |d| d[1]),
                test_metric: o.training.as_ref().map_or(f64::NAN, |t| t.test_metric),
                variance: o.report.variance,
                min_bias: o.report.min_bias,
                mean_bias: o.report.mean_bias,
                seed: cell.seed,
            }),
            Err(e) => result.failures.push(SweepFailure {
                param_budget: budget,
                depth,
                seed: cell.seed,
                error: e.to_string(),
            }),
        }
    }
    write_records(&cfg.output_dir.join("sweep.csv"), &result.rows)?;
    if !result.failures.is_empty() {
        write_records(&cfg.output_dir.join("sweep_failures.csv"), &result.failures)?;
    }
    write_json(
        &cfg.output_dir.join("report.json"),
        &json!({
            "command": "sweep",
            "config": cfg,
            "cells": result.rows.len() + result.failures.len(),
            "failures": result.failures,
        }),
    )?;
    write_run_sidecar(&cfg.output_dir, "sweep", started, clock.elapsed())?;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerRow {
    pub regime: &'static str,
    pub layer: usize,
    pub width: usize,
    pub variance: f64,
    pub mean_variance: f64,
    pub min_bias: f64,
    pub mean_bias: f64,
    pub test_metric: f64,
}

#[derive(Clone, Debug)]
pub struct LayerwiseOutcome {
    pub rows: Vec<LayerRow>,
    pub networks: Vec<(Regime, Network)>,
    /// Whether the frozen layers of the `freeze` regime match the pretrained weights bit for bit.
    pub frozen_identical: Option<bool>,
}

/// Scores every prefix `1..=L` of `net` with per-output polarization.
pub fn layer_reports(
    cfg: &ExperimentConfig,
    net: &Network,
    data: &TaskData,
) -> Result<Vec<SymmetryReport>> {
    (1..=net.layers().len())
        .map(|k| {
            let cut = net.truncate(k)?;
            let e = polarize(cfg, &cut, data, &cfg.layerwise.seed_mode)?;
            analyze(cfg, &e)
        })
        .collect()
}

fn with_prefix(base: &Network, donor: &Network, layers: usize) -> Result<Network> {
    let mut ls = donor.layers()[..layers].to_vec();
    ls.extend_from_slice(&base.layers()[layers..]);
    Network::from_layers(base.spec().clone(), ls)
}

/// Compares per-layer symmetry across training regimes of a deep network
/// and its pretrained shallow prefix. Writes `layerwise.csv`.
pub fn cmd_layerwise(cfg: &ExperimentConfig) -> Result<LayerwiseOutcome> {
    if cfg.task == Task::Sphere {
        return Err(Error::Config("layerwise needs a trainable task".into()));
    }
    let (started, clock) = (SystemTime::now(), Instant::now());
    let lw = &cfg.layerwise;
    if lw.regimes.is_empty() {
        return Err(Error::Config("layerwise.regimes is empty".into()));
    }
    let (input, output) = cfg.io_dims();
    let deep_dims: Vec<usize> = std::iter::once(input)
        .chain(std::iter::repeat_n(lw.hidden, lw.depth - 1))
        .chain(std::iter::once(output))
        .collect();
    let sub_dims: Vec<usize> = std::iter::once(input)
        .chain(std::iter::repeat_n(lw.hidden, lw.sub_layers))
        .chain(std::iter::once(output))
        .collect();
    let deep_spec = cfg.net_spec(deep_dims)?;
    let sub_spec = cfg.net_spec(sub_dims)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let data = prepare_data(cfg)?;

    let needs_sub = lw.regimes.iter().any(|r| *r != Regime::Mlp7);
    let pretrained = if needs_sub {
        Some(fit(sub_spec, cfg.seed, None, &data, &cfg.train)?)
    } else {
        None
    };

    let mut trained: Vec<(Regime, Network, TrainSummary)> = Vec::new();
    let mut frozen_identical = None;
    for &regime in &lw.regimes {
        let (net, summary) = match regime {
            Regime::Mlp7 => fit(deep_spec.clone(), cfg.seed, None, &data, &cfg.train)?,
            Regime::Sub3 => pretrained.clone().expect("pretrained sub-network"),
            Regime::Finetune | Regime::Freeze => {
                let (sub, _) = pretrained.as_ref().expect("pretrained sub-network");
                let start = with_prefix(
                    &Network::init(deep_spec.clone(), cfg.seed)?,
                    sub,
                    lw.sub_layers,
                )?;
                let mut train = cfg.train.clone();
                if regime == Regime::Freeze {
                    train.frozen_layers = lw.sub_layers;
                }
                let (net, summary) = fit(deep_spec.clone(), cfg.seed, Some(start), &data, &train)?;
                if regime == Regime::Freeze {
                    frozen_identical =
                        Some(net.layers()[..lw.sub_layers] == sub.layers()[..lw.sub_layers]);
                }
                (net, summary)
            }
        };
        trained.push((regime, net, summary));
    }

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (regime, net, summary) in &trained {
        let per_layer = layer_reports(cfg, net, &data)?;
        for (i, r) in per_layer.iter().enumerate() {
            rows.push(LayerRow {
                regime: regime.name(),
                layer: i + 1,
                width: net.spec().layer_dims[i + 1],
                variance: r.variance,
                mean_variance: r.mean_variance,
                min_bias: r.min_bias,
                mean_bias: r.mean_bias,
                test_metric: summary.test_metric,
            });
        }
        let dir = cfg.output_dir.join(regime.name());
        fs::create_dir_all(&dir)?;
        save_training(&dir, net, Some(summary))?;
        reports.push(json!({ "regime": regime, "training": summary, "layers": per_layer }));
    }
    write_records(&cfg.output_dir.join("layerwise.csv"), &rows)?;
    write_json(
        &cfg.output_dir.join("report.json"),
        &json!({
            "command": "layerwise",
            "config": cfg,
            "frozen_identical": frozen_identical,
            "regimes": reports,
        }),
    )?;
    write_run_sidecar(&cfg.output_dir, "layerwise", started, clock.elapsed())?;
    Ok(LayerwiseOutcome {
        rows,
        networks: trained.into_iter().map(|(r, n, _)| (r, n)).collect(),
        frozen_identical,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleRow {
    pub fraction: f64,
    pub samples: usize,
    pub seed: u64,
    pub variance: f64,
    pub mean_bias: f64,
    pub min_bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleSummary {
    pub fraction: f64,
    pub samples: usize,
    pub variance_mean: f64,
    pub variance_std: f64,
    pub mean_bias_mean: f64,
    pub mean_bias_std: f64,
    pub reference_variance: f64,
    pub reference_mean_bias: f64,
}

#[derive(Clone, Debug)]
pub struct SampleComplexityOutcome {
    pub reference: SymmetryReport,
    pub rows: Vec<SampleRow>,
    pub summary: Vec<SampleSummary>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Scores random sample subsets of the polarization matrix against the
/// full-data reference. Writes `sample_complexity.csv` (one row per fraction
/// and seed) and `sample_complexity_summary.csv`.
pub fn cmd_sample_complexity(cfg: &ExperimentConfig) -> Result<SampleComplexityOutcome> {
    let (started, clock) = (SystemTime::now(), Instant::now());
    let sc = &cfg.sample_complexity;
    if sc.fractions.is_empty() || sc.seeds.is_empty() {
        return Err(Error::Config(
            "sample_complexity needs fractions and seeds".into(),
        ));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let data = prepare_data(cfg)?;
    let (model, training) = obtain_model(cfg, &data)?;
    if let Some(net) = model.network() {
        save_training(&cfg.output_dir, net, training.as_ref())?;
    }
    let e = polarize(cfg, model.discriminator(), &data, &cfg.extraction.seed_mode)?;
    let mut full = cfg.clone();
    full.extraction.subsample_fraction = 1.0;
    let reference = analyze(&full, &e)?;

    let jobs: Vec<(f64, u64)> = sc
        .fractions
        .iter()
        .flat_map(|&f| sc.seeds.iter().map(move |&s| (f, s)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(fraction, seed)| {
            let sub = subsample_rows(&e, fraction, seed)?;
            let r = analyze(&full, &sub)?;
            Ok(SampleRow {
                fraction,
                samples: sub.sample_count(),
                seed,
                variance: r.variance,
                mean_bias: r.mean_bias,
                min_bias: r.min_bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary: Vec<SampleSummary> = sc
        .fractions
        .iter()
        .map(|&f| {
            let group: Vec<&SampleRow> = rows.iter().filter(|r| r.fraction == f).collect();
            let (vm, vs) = mean_std(&group.iter().map(|r| r.variance).collect::<Vec<_>>());
            let (bm, bs) = mean_std(&group.iter().map(|r| r.mean_bias).collect::<Vec<_>>());
            SampleSummary {
                fraction: f,
                samples: group[0].samples,
                variance_mean: vm,
                variance_std: vs,
                mean_bias_mean: bm,
                mean_bias_std: bs,
                reference_variance: reference.variance,
                reference_mean_bias: reference.mean_bias,
            }
        })
        .collect();

    write_records(&cfg.output_dir.join("sample_complexity.csv"), &rows)?;
    write_records(
        &cfg.output_dir.join("sample_complexity_summary.csv"),
        &summary,
    )?;
    write_spectrum(&cfg.output_dir.join("spectrum.csv"), &reference)?;
    write_json(
        &cfg.output_dir.join("report.json"),
        &json!({
            "command": "sample-complexity",
            "config": cfg,
            "training": training,
            "reference": reference,
            "summary": summary,
        }),
    )?;
    write_run_sidecar(
        &cfg.output_dir,
        "sample-complexity",
        started,
        clock.elapsed(),
    )?;
    Ok(SampleComplexityOutcome {
        reference,
        rows,
        summary,
    })
}
