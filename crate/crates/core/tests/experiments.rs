use liegg::experiments::{
    cmd_extract, cmd_layerwise, cmd_sample_complexity, cmd_sweep, sweep_cell_config,
    ExperimentConfig, Overrides, Regime,
};
use liegg::net::hidden_dim_for_budget;
use serde_json::{json, Value};
use std::path::Path;

fn o5_config(out: &Path, extra: Value) -> ExperimentConfig {
    let mut base = json!({
        "task": "o5",
        "data": { "n_samples": 120 },
        "net": { "layer_dims": [10, 12, 12, 1] },
        "train": { "epochs": 3 },
        "output_dir": out,
    });
    merge(&mut base, extra);
    ExperimentConfig::from_value(base, &Overrides::default()).unwrap()
}

fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

#[test]
fn a_single_sweep_cell_matches_extract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = o5_config(
        dir.path(),
        json!({ "net": { "layer_dims": null, "param_budget": 400 }, "sweep": { "budgets": [400], "depths": [2], "seeds": [5] } }),
    );
    let sweep = cmd_sweep(&cfg).unwrap();
    assert!(sweep.failures.is_empty());
    assert_eq!(sweep.rows.len(), 1);

    let mut cell = sweep_cell_config(&cfg, 400, 2, 5).unwrap();
    cell.output_dir = dir.path().join("alone");
    let single = cmd_extract(&cell).unwrap();
    let row = &sweep.rows[0];
    assert_eq!(row.variance, single.report.variance);
    assert_eq!(row.min_bias, single.report.min_bias);
    assert_eq!(row.mean_bias, single.report.mean_bias);
    assert_eq!(
        std::fs::read(dir.path().join("alone/spectrum.csv")).unwrap(),
        std::fs::read(dir.path().join("cells/b400_d2_s5/spectrum.csv")).unwrap()
    );
}

#[test]
fn sweep_widths_follow_the_budget() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = o5_config(
        dir.path(),
        json!({
            "net": { "layer_dims": null, "param_budget": 400 },
            "train": { "epochs": 1 },
            "sweep": { "budgets": [300, 900], "depths": [1, 3], "seeds": [1] },
        }),
    );
    let sweep = cmd_sweep(&cfg).unwrap();
    assert_eq!(sweep.rows.len(), 4);
    for row in &sweep.rows {
        assert_eq!(
            row.hidden_dim,
            hidden_dim_for_budget(row.param_budget, row.depth, 10, 1).unwrap()
        );
    }
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("param_budget,depth,hidden_dim,"));
}

#[test]
fn infeasible_sweep_cells_are_listed_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = o5_config(
        dir.path(),
        json!({
            "net": { "layer_dims": null, "param_budget": 400 },
            "train": { "learning_rate": 1e300, "epochs": 2 },
            "sweep": { "budgets": [400], "depths": [1], "seeds": [1, 2] },
        }),
    );
    let sweep = cmd_sweep(&cfg).unwrap();
    assert_eq!(sweep.failures.len(), 2);
    assert!(dir.path().join("sweep_failures.csv").exists());
}

#[test]
fn full_fraction_reproduces_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = o5_config(
        dir.path(),
        json!({ "sample_complexity": { "fractions": [0.5, 1.0], "seeds": [1, 2] } }),
    );
    let o = cmd_sample_complexity(&cfg).unwrap();
    assert_eq!(o.rows.len(), 4);
    for row in o.rows.iter().filter(|r| r.fraction == 1.0) {
        assert_eq!(row.samples, 120);
        assert!(
            (row.variance - o.reference.variance).abs() <= 1e-12 * o.reference.variance.max(1e-300)
        );
        assert!((row.mean_bias - o.reference.mean_bias).abs() <= 1e-9);
    }
    let half = o.summary.iter().find(|s| s.fraction == 0.5).unwrap();
    assert_eq!(half.samples, 60);
}

#[test]
fn frozen_layers_stay_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = o5_config(
        dir.path(),
        json!({ "layerwise": { "regimes": ["sub3", "freeze"], "hidden": 8, "depth": 4, "sub_layers": 2 } }),
    );
    let o = cmd_layerwise(&cfg).unwrap();
    assert_eq!(o.frozen_identical, Some(true));
    let sub = &o
        .networks
        .iter()
        .find(|(r, _)| *r == Regime::Sub3)
        .unwrap()
        .1;
    let frozen = &o
        .networks
        .iter()
        .find(|(r, _)| *r == Regime::Freeze)
        .unwrap()
        .1;
    assert_eq!(frozen.layers()[..2], sub.layers()[..2]);
    assert_ne!(frozen.layers()[2..], sub.layers()[2..]);
    // sub3 scores 3 layers, freeze 4.
    assert_eq!(o.rows.len(), 7);
    assert!(dir.path().join("layerwise.csv").exists());
}

#[test]
fn checkpoints_reproduce_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = o5_config(&dir.path().join("a"), json!({}));
    let first = cmd_extract(&cfg).unwrap();
    let mut again = cfg.clone();
    again.checkpoint = Some(dir.path().join("a/checkpoint.json"));
    again.output_dir = dir.path().join("b");
    let second = cmd_extract(&again).unwrap();
    assert!(second.training.is_none());
    assert_eq!(
        first.report.singular_spectrum,
        second.report.singular_spectrum
    );
    assert_eq!(first.report.biases, second.report.biases);
}
