use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::{json, Value};

use sdforge_core::adaptive::{self, AdaptiveConfig, AdaptiveMode, AdaptiveRun};
use sdforge_core::cart::{self, CartConfig};
use sdforge_core::experiment::ExperimentConfig;
use sdforge_core::metamodel::{GPModel, Hyper};
use sdforge_core::metrics;
use sdforge_core::prim::{self, LabeledSamples, PrimConfig};
use sdforge_core::sampling::{self, SampleMatrix};
use sdforge_core::{seed, simulator, Error, Result};
use sdforge_service::model::BoxRecord;
use sdforge_service::AppState;

use crate::manifest::{sha256_hex, ArtifactWriter};
use crate::{
    overrides, AdaptiveArgs, CartArgs, CommonArgs, DiscoverArgs, EvaluateArgs, ModeArg,
    SampleArgs, ServeArgs, SweepArgs,
};

struct Loaded {
    path: PathBuf,
    input_sha256: String,
    config: ExperimentConfig,
    /// The experiment document after overrides; written back out so a run
    /// directory is self-describing.
    resolved: Value,
    /// Resolved root seed: --seed / SDFORGE_SEED, else the experiment's.
    seed: u64,
}

fn load(common: &CommonArgs) -> Result<Loaded> {
    let context = |e: std::fmt::Arguments| {
        Error::InvalidExperiment(format!("{}: {e}", common.experiment.display()))
    };
    let text = std::fs::read_to_string(&common.experiment)
        .map_err(|e| context(format_args!("{e}")))?;
    let input_sha256 = sha256_hex(text.as_bytes());
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| context(format_args!("{e}")))?;
    overrides::apply(&mut doc, &common.set)?;
    let config: ExperimentConfig =
        serde_json::from_value(doc.clone()).map_err(|e| context(format_args!("{e}")))?;
    config.validate()?;
    Ok(Loaded {
        path: common.experiment.clone(),
        input_sha256,
        seed: common.seed.unwrap_or(config.seed),
        config,
        resolved: doc,
    })
}

fn design(loaded: &Loaded, n: Option<usize>) -> Result<SampleMatrix> {
    let n = n.unwrap_or(loaded.config.n_scenarios as usize);
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    Ok(sampling::lhs_with(
        &loaded.config.space,
        n,
        &mut seed::rng(loaded.seed, "sample", 0),
    ))
}

fn simulate_design(loaded: &Loaded, n: Option<usize>) -> Result<LabeledSamples> {
    let m = design(loaded, n)?;
    let outcomes = simulator::evaluate_matrix(&loaded.config, &m)?;
    Ok(LabeledSamples::from_outcomes(&m, &outcomes, &loaded.config.rule))
}

fn parameters<const N: usize>(entries: [(&str, Value); N]) -> BTreeMap<String, Value> {
    entries
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

fn write_samples_csv(w: &mut ArtifactWriter, m: &SampleMatrix) -> Result<()> {
    let mut csv = Vec::new();
    m.to_csv(&mut csv)?;
    w.write("samples.csv", &csv)
}

fn write_labeled_csv(
    w: &mut ArtifactWriter,
    name: &str,
    data: &LabeledSamples,
    loaded: &Loaded,
) -> Result<()> {
    let mut csv = Vec::new();
    data.to_csv(&loaded.config.space, &mut csv)?;
    w.write(name, &csv)
}

fn box_records(entries: &[prim::CoverEntry]) -> Vec<BoxRecord> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| BoxRecord {
            round: i,
            scenario_box: e.scenario_box.clone(),
            stats: e.stats,
            cumulative_coverage: e.cumulative_coverage,
        })
        .collect()
}

pub fn sample(args: SampleArgs) -> Result<()> {
    let loaded = load(&args.common)?;
    let m = design(&loaded, args.n)?;
    let mut w = ArtifactWriter::create(&args.common.out)?;
    w.write_json("experiment.json", &loaded.resolved)?;
    write_samples_csv(&mut w, &m)?;
    println!("sample: {} scenarios -> {}", m.n(), w.dir().display());
    w.finish(
        "sample",
        &loaded.path,
        loaded.input_sha256,
        loaded.seed,
        parameters([("n", json!(m.n())), ("set", json!(args.common.set))]),
    )
}

pub fn simulate(args: SampleArgs) -> Result<()> {
    let loaded = load(&args.common)?;
    let data = simulate_design(&loaded, args.n)?;
    let mut w = ArtifactWriter::create(&args.common.out)?;
    w.write_json("experiment.json", &loaded.resolved)?;
    write_labeled_csv(&mut w, "samples.csv", &data, &loaded)?;
    println!(
        "simulate: {} scenarios, {} vulnerable -> {}",
        data.len(),
        data.n_vulnerable(),
        w.dir().display()
    );
    w.finish(
        "simulate",
        &loaded.path,
        loaded.input_sha256,
        loaded.seed,
        parameters([("n", json!(data.len())), ("set", json!(args.common.set))]),
    )
}

pub fn discover(args: DiscoverArgs) -> Result<()> {
    let loaded = load(&args.common)?;
    let mut cfg = PrimConfig::default();
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if let Some(v) = args.support_threshold {
        cfg.support_threshold = v;
    }
    if let Some(v) = args.min_mean_gain {
        cfg.min_mean_gain = v;
    }
    if let Some(v) = args.coverage_floor {
        cfg.coverage_floor = v;
    }
    let max_boxes = args.max_boxes.unwrap_or(prim::DEFAULT_MAX_BOXES);
    let stop_coverage = args.stop_coverage.unwrap_or(prim::DEFAULT_STOP_COVERAGE);

    let data = simulate_design(&loaded, args.n)?;
    let entries = prim::cover(&data, &cfg, &loaded.config.space, max_boxes, stop_coverage)?;
    let boxes = box_records(&entries);
    let trajectories: Vec<&prim::PeelingTrajectory> =
        entries.iter().map(|e| &e.trajectory).collect();

    let mut w = ArtifactWriter::create(&args.common.out)?;
    w.write_json("experiment.json", &loaded.resolved)?;
    write_labeled_csv(&mut w, "samples.csv", &data, &loaded)?;
    w.write_json("trajectory.json", &trajectories)?;
    w.write_json("boxes.json", &boxes)?;
    println!(
        "discover: {} boxes, cumulative coverage {:.3} -> {}",
        boxes.len(),
        boxes.last().map_or(0.0, |b| b.cumulative_coverage),
        w.dir().display()
    );
    w.finish(
        "discover",
        &loaded.path,
        loaded.input_sha256,
        loaded.seed,
        parameters([
            ("n", json!(data.len())),
            ("prim", serde_json::to_value(&cfg)?),
            ("max_boxes", json!(max_boxes)),
            ("stop_coverage", json!(stop_coverage)),
            ("set", json!(args.common.set)),
        ]),
    )
}

pub fn cart(args: CartArgs) -> Result<()> {
    let loaded = load(&args.common)?;
    let mut cfg = CartConfig::default();
    if let Some(v) = args.min_split {
        cfg.min_split = v;
    }
    if let Some(v) = args.min_leaf {
        cfg.min_leaf = v;
    }
    if let Some(v) = args.max_depth {
        cfg.max_depth = v;
    }

    let data = simulate_design(&loaded, args.n)?;
    let unpruned = cart::grow(&data, &cfg)?;
    let pruned = cart::prune(&unpruned);
    let leaves = cart::leaves_to_boxes(&pruned, &loaded.config.space, &data);

    let total = data.n_vulnerable();
    let mut covered = 0usize;
    let boxes: Vec<BoxRecord> = leaves
        .into_iter()
        .enumerate()
        .map(|(i, (scenario_box, stats))| {
            covered += stats.n_vulnerable_inside;
            BoxRecord {
                round: i,
                scenario_box,
                stats,
                cumulative_coverage: if total == 0 {
                    0.0
                } else {
                    covered as f64 / total as f64
                },
            }
        })
        .collect();

    let mut w = ArtifactWriter::create(&args.common.out)?;
    w.write_json("experiment.json", &loaded.resolved)?;
    write_labeled_csv(&mut w, "samples.csv", &data, &loaded)?;
    w.write_json("tree.json", &json!({ "unpruned": unpruned, "pruned": pruned }))?;
    w.write_json("boxes.json", &boxes)?;
    println!(
        "cart: {} vulnerable leaves, union coverage {:.3} -> {}",
        boxes.len(),
        boxes.last().map_or(0.0, |b| b.cumulative_coverage),
        w.dir().display()
    );
    w.finish(
        "cart",
        &loaded.path,
        loaded.input_sha256,
        loaded.seed,
        parameters([
            ("n", json!(data.len())),
            ("cart", serde_json::to_value(cfg)?),
            ("set", json!(args.common.set)),
        ]),
    )
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let loaded = load(&args.common)?;
    let deltas = parse_deltas(&args.deltas)?;
    let n = args.n.unwrap_or(loaded.config.n_scenarios as usize);
    let cutoff = args.cutoff.unwrap_or(metrics::DEFAULT_SWEEP_CUTOFF);
    let result = metrics::policy_sweep(
        &loaded.config,
        &deltas,
        n,
        seed::sub_seed(loaded.seed, "sweep", 0),
        cutoff,
    )?;

    let mut w = ArtifactWriter::create(&args.common.out)?;
    w.write_json("experiment.json", &loaded.resolved)?;
    w.write_json("sweep.json", &result)?;
    let mut csv = Vec::new();
    metrics::write_sweep_csv(&result, &mut csv)?;
    w.write("sweep.csv", &csv)?;

    if result.zero_lever_warning {
        eprintln!("warning: a zero lever makes every scenario vulnerable under the >= 0 rule");
    }
    match result.threshold {
        Some(t) => println!(
            "sweep: threshold {t} (first count <= {cutoff} over {n} scenarios) -> {}",
            w.dir().display()
        ),
        None => println!(
            "sweep: no setting reached count <= {cutoff} over {n} scenarios -> {}",
            w.dir().display()
        ),
    }
    w.finish(
        "sweep",
        &loaded.path,
        loaded.input_sha256,
        loaded.seed,
        parameters([
            ("deltas", json!(args.deltas)),
            ("n", json!(n)),
            ("cutoff", json!(cutoff)),
            ("set", json!(args.common.set)),
        ]),
    )
}

pub fn adaptive(args: AdaptiveArgs) -> Result<()> {
    let loaded = load(&args.common)?;
    let mut cfg = AdaptiveConfig {
        seed: loaded.seed,
        ..AdaptiveConfig::default()
    };
    if let Some(v) = args.n_init {
        cfg.n_init = v;
    }
    if let Some(v) = args.pool_size {
        cfg.pool_size = v;
    }
    if let Some(v) = args.n_iter {
        cfg.n_iter = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    if let Some(v) = args.interior_prob {
        cfg.interior_prob = v;
    }
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::InteriorOrBorder => AdaptiveMode::InteriorOrBorder,
            ModeArg::BorderOnly => AdaptiveMode::BorderOnly,
        };
    }
    if let Some(budget) = args.gp_budget {
        cfg.hyper = Hyper::Optimize { budget, seed: 0 };
    }

    let mut run = AdaptiveRun::new(cfg, loaded.config.clone())?;
    for _ in 0..run.cfg.n_iter {
        run.step()?;
    }
    run.finalize()?;

    let mut w = ArtifactWriter::create(&args.common.out)?;
    w.write_json("experiment.json", &loaded.resolved)?;
    write_labeled_csv(&mut w, "dataset.csv", &run.state.dataset, &loaded)?;
    let mut jsonl = Vec::new();
    adaptive::write_history_jsonl(&run.state.history, &mut jsonl)?;
    w.write("history.jsonl", &jsonl)?;
    w.write_json("boxes.json", &box_records(&run.state.final_boxes))?;
    let gp = run
        .state
        .final_gp
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("run did not produce a model".into()))?;
    w.write_json("model.json", gp)?;

    if let Some(truth_n) = args.truth_n {
        let truth_seed = args
            .truth_seed
            .unwrap_or_else(|| seed::sub_seed(loaded.seed, "truth", 0));
        let truth = adaptive::truth_set(&run.experiment, truth_n, truth_seed)?;
        let report = adaptive::evaluate_against_truth(&run, &truth)?;
        w.write_json("diagnostics.json", &report)?;
        println!(
            "adaptive: accuracy {:.3}, pearson {:.3} on {} truth points",
            report.accuracy, report.pearson_r, report.n_truth
        );
    }
    println!(
        "adaptive: {} true calls over {} iterations, {} boxes -> {}",
        run.state.true_calls,
        run.state.iteration,
        run.state.final_boxes.len(),
        w.dir().display()
    );
    w.finish(
        "adaptive",
        &loaded.path,
        loaded.input_sha256,
        loaded.seed,
        parameters([
            ("adaptive", serde_json::to_value(&run.cfg)?),
            ("truth_n", json!(args.truth_n)),
            ("truth_seed", json!(args.truth_seed)),
            ("set", json!(args.common.set)),
        ]),
    )
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let read = |name: &str| {
        std::fs::read_to_string(args.run.join(name)).map_err(|e| {
            Error::InvalidConfig(format!(
                "{}: {e}; `evaluate` expects a directory written by `adaptive`",
                args.run.join(name).display()
            ))
        })
    };
    let experiment_text = read("experiment.json")?;
    let config: ExperimentConfig = serde_json::from_str(&experiment_text)
        .map_err(|e| Error::InvalidExperiment(format!("experiment.json: {e}")))?;
    config.validate()?;
    let gp: GPModel = serde_json::from_str(&read("model.json")?)
        .map_err(|e| Error::InvalidConfig(format!("model.json: {e}")))?;
    let dataset = LabeledSamples::from_csv(&config.space, read("dataset.csv")?.as_bytes())?;

    let root = args.seed.unwrap_or(config.seed);
    let truth_seed = args
        .truth_seed
        .unwrap_or_else(|| seed::sub_seed(root, "truth", 0));
    let truth = adaptive::truth_set(&config, args.truth_n, truth_seed)?;
    let report = adaptive::evaluate_model(
        &gp,
        &config.rule,
        &dataset.outputs,
        dataset.len(),
        &truth,
    )?;

    let out = args.out.unwrap_or_else(|| args.run.join("evaluation"));
    let mut w = ArtifactWriter::create(&out)?;
    w.write_json("diagnostics.json", &report)?;
    println!(
        "evaluate: accuracy {:.3}, pearson {:.3} on {} truth points -> {}",
        report.accuracy,
        report.pearson_r,
        report.n_truth,
        w.dir().display()
    );
    let experiment_path = args.run.join("experiment.json");
    w.finish(
        "evaluate",
        &experiment_path,
        sha256_hex(experiment_text.as_bytes()),
        root,
        parameters([
            ("run", json!(args.run.display().to_string())),
            ("truth_n", json!(args.truth_n)),
            ("truth_seed", json!(truth_seed)),
        ]),
    )
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let state = AppState::open(&args.data_dir, args.ui_dir)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async {
        println!(
            "serving http://{} (runs persist to {})",
            args.addr,
            args.data_dir.display()
        );
        sdforge_service::serve(args.addr, state).await
    })
}

/// Either a comma list (`0,5,10`) or an inclusive `min:max:step` range.
fn parse_deltas(spec: &str) -> Result<Vec<f64>> {
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::InvalidConfig(format!("bad delta `{s}`: {e}")))
    };
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "range `{spec}` must be min:max:step"
            )));
        }
        let (min, max, step) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
        if !(step > 0.0) {
            return Err(Error::InvalidConfig(format!("step {step} must be > 0")));
        }
        if max < min {
            return Err(Error::InvalidConfig(format!(
                "range `{spec}` has max below min"
            )));
        }
        // Tolerate float drift at the top end so min:max:step includes max.
        let count = ((max - min) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| min + i as f64 * step).collect())
    } else {
        spec.split(',').map(number).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_ranges_and_lists() {
        let grid = parse_deltas("0.5:30:0.5").unwrap();
        assert_eq!(grid.len(), 60);
        assert_eq!(grid[0], 0.5);
        assert_eq!(*grid.last().unwrap(), 30.0);

        assert_eq!(parse_deltas("0,2.5,5").unwrap(), vec![0.0, 2.5, 5.0]);
        assert_eq!(parse_deltas("1:1:1").unwrap(), vec![1.0]);

        for bad in ["", "1:2", "1:2:0", "5:1:1", "a,b", "1:2:3:4"] {
            assert!(parse_deltas(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn load_applies_overrides_and_seed_priority() {
        let path = concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../experiments/norrebro.experiment"
        );
        let common = CommonArgs {
            experiment: path.into(),
            out: "unused".into(),
            seed: Some(9),
            set: vec!["lever.delta=20.5".into()],
        };
        let loaded = load(&common).unwrap();
        assert_eq!(loaded.config.lever.delta, 20.5);
        assert_eq!(loaded.seed, 9, "--seed beats the experiment seed");
        assert_eq!(loaded.resolved["lever"]["delta"], json!(20.5));

        let with_file_seed = load(&CommonArgs {
            experiment: path.into(),
            out: "unused".into(),
            seed: None,
            set: vec![],
        })
        .unwrap();
        assert_eq!(with_file_seed.seed, 42, "experiment seed is the fallback");

        let invalid = load(&CommonArgs {
            experiment: path.into(),
            out: "unused".into(),
            seed: None,
            set: vec!["lever.delta=-3".into()],
        });
        assert!(invalid.err().is_some_and(|e| e.is_validation()));
    }
}
