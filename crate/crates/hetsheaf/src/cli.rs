//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage and validation problems, 2 for
//! numeric failures (non-finite losses, failed gradient verification).

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::data::{load_dataset, save_dataset, synth_hetero, SynthKind, SynthSizes};
use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::tensor::{GradCheckConfig, ParamStore, Tape};
use crate::train::{evaluate, train, train_multi, run_gradcheck, RunConfig};

#[derive(Parser)]
#[command(name = "hetsheaf", version, about = "Sheaf diffusion on heterogeneous graphs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a JSON run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seed list; overrides the config's seed and
        /// aggregates mean/std across the runs.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate a checkpoint against a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate a synthetic benchmark dataset.
    Synth {
        /// One of: type_signal_nc, conflicting_edges_nc, bipartite_lp.
        #[arg(long, value_parser = parse_kind)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        nodes_per_type: usize,
        #[arg(long, default_value_t = 4)]
        degree: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
    /// Verify the configured objective's gradients against finite
    /// differences on a small synthetic instance.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Dump the dense normalized sheaf Laplacian of an untrained model on
    /// the configured dataset.
    InspectSheaf {
        #[arg(long)]
        config: PathBuf,
        /// Output TSV, one row of the (n*d)^2 operator per line.
        #[arg(long)]
        out: PathBuf,
        /// Diffusion layer whose operator is materialized.
        #[arg(long, default_value_t = 0)]
        layer: usize,
    },
    /// Cartesian hyperparameter sweep over a JSON grid.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
}

fn parse_kind(s: &str) -> std::result::Result<SynthKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown dataset kind {s:?}"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::validation(format!("serialization: {e}")))?;
    println!("{json}");
    Ok(())
}

/// Small in-memory instance for gradient verification: the real objective,
/// but on a graph where central differences over every weight stay cheap.
fn gradcheck_instance(cfg: &RunConfig) -> Result<crate::data::Dataset> {
    let sizes = SynthSizes { nodes_per_type: 8, degree: 3, num_classes: 3, feature_noise: 0.1 };
    let kind = match cfg.model.task {
        TaskKind::Nc => SynthKind::TypeSignalNc,
        TaskKind::Lp => SynthKind::BipartiteLp,
    };
    synth_hetero(kind, &sizes, cfg.seed)
}

fn cmd_train(config: PathBuf, seeds: Option<Vec<u64>>) -> Result<()> {
    let cfg: RunConfig = read_json(&config)?;
    match seeds {
        Some(seeds) if !seeds.is_empty() => {
            let summary = train_multi(&cfg, &seeds)?;
            print_json(&summary)
        }
        _ => {
            let outcome = train(&cfg)?;
            eprintln!(
                "best epoch {} of {} run",
                outcome.best_epoch, outcome.epochs_run
            );
            print_json(&outcome.report)
        }
    }
}

fn cmd_synth(
    kind: SynthKind,
    out: PathBuf,
    seed: u64,
    nodes_per_type: usize,
    degree: usize,
    classes: usize,
    noise: f64,
) -> Result<()> {
    let sizes =
        SynthSizes { nodes_per_type, degree, num_classes: classes, feature_noise: noise };
    let ds = synth_hetero(kind, &sizes, seed)?;
    save_dataset(&out, &ds)?;
    eprintln!(
        "wrote {} nodes, {} edges to {}",
        ds.graph.n(),
        ds.graph.num_edges(),
        out.display()
    );
    Ok(())
}

fn cmd_gradcheck(config: PathBuf) -> Result<()> {
    let cfg: RunConfig = read_json(&config)?;
    let ds = gradcheck_instance(&cfg)?;
    let report = run_gradcheck(&cfg, &ds, &GradCheckConfig::default())?;
    println!(
        "checked {} partial derivatives, max relative error {:.3e}",
        report.checked, report.max_rel_err
    );
    if let Some((name, idx)) = &report.worst {
        println!("largest at {name}[{idx}]");
    }
    if report.pass() {
        println!("PASS");
        Ok(())
    } else {
        for f in report.failures.iter().take(5) {
            eprintln!(
                "{}[{}]: analytic {:.6e}, numeric {:.6e}, rel err {:.3e}",
                f.param, f.index, f.analytic, f.numeric, f.rel_err
            );
        }
        Err(Error::numeric(format!(
            "{} of {} gradient entries disagree with finite differences",
            report.failures.len(),
            report.checked
        )))
    }
}

fn cmd_inspect(config: PathBuf, out: PathBuf, layer: usize) -> Result<()> {
    let cfg: RunConfig = read_json(&config)?;
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset)?;
    if cfg.model.task != ds.meta.task {
        return Err(Error::validation(format!(
            "config task {:?} does not match dataset task {:?}",
            cfg.model.task, ds.meta.task
        )));
    }
    let graph = ds.graph.clone();
    let mut store = ParamStore::new();
    let mut rng = crate::rng::substream(cfg.seed, 0);
    let model = crate::model::SheafModel::init(
        &mut store,
        &cfg.model,
        &graph,
        ds.features.as_ref(),
        ds.target_node_type(),
        &mut rng,
    )?;
    let mut tape = Tape::new();
    let leaves = store.load(&mut tape)?;
    let lap = model.layer_laplacian(&mut tape, &leaves, &graph, ds.features.as_ref(), layer)?;
    let dense = lap.dense();
    let nd = graph.n() * cfg.model.d;
    let mut text = String::with_capacity(dense.len() * 24);
    for row in dense.chunks_exact(nd) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        text.push_str(&line.join("\t"));
        text.push('\n');
    }
    fs::write(&out, text).map_err(|e| Error::io(out.display().to_string(), e))?;
    println!(
        "layer {layer}: {nd} x {nd} normalized operator, min eigenvalue {:.6e}",
        lap.min_eigenvalue()
    );
    Ok(())
}

#[derive(serde::Deserialize)]
struct SweepGrid {
    base: serde_json::Value,
    /// Axis name -> candidate values. Names address run-config fields,
    /// model fields included since they sit at the top level.
    axes: BTreeMap<String, Vec<serde_json::Value>>,
}

fn materialize(grid: &SweepGrid) -> Result<Vec<(Vec<(String, serde_json::Value)>, RunConfig)>> {
    // Axis names must address real config fields. The parsed base echoes
    // every field back (model fields at the top level), which gives the
    // authoritative key set; unknown keys would otherwise be swallowed
    // silently and sweep nothing.
    let base: RunConfig = serde_json::from_value(grid.base.clone())
        .map_err(|e| Error::validation(format!("sweep base: {e}")))?;
    let echo = serde_json::to_value(&base)
        .map_err(|e| Error::validation(format!("sweep base echo: {e}")))?;
    let known = echo.as_object().expect("config serializes to an object");
    for (axis, values) in &grid.axes {
        if axis != "out_dir" && !known.contains_key(axis) {
            return Err(Error::validation(format!("unknown sweep axis {axis:?}")));
        }
        if values.is_empty() {
            return Err(Error::validation(format!("sweep axis {axis} has no values")));
        }
    }
    let axes: Vec<(&String, &Vec<serde_json::Value>)> = grid.axes.iter().collect();
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut configs = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut patch = grid.base.clone();
        let obj = patch
            .as_object_mut()
            .ok_or_else(|| Error::validation("sweep base must be a JSON object"))?;
        let mut assignment = Vec::with_capacity(axes.len());
        for (axis, values) in &axes {
            let v = &values[flat % values.len()];
            flat /= values.len();
            obj.insert((*axis).clone(), v.clone());
            assignment.push(((*axis).clone(), v.clone()));
        }
        let cfg: RunConfig = serde_json::from_value(patch)
            .map_err(|e| Error::validation(format!("sweep point {assignment:?}: {e}")))?;
        configs.push((assignment, cfg));
    }
    Ok(configs)
}

fn cmd_sweep(grid_path: PathBuf) -> Result<()> {
    let grid: SweepGrid = read_json(&grid_path)?;
    let points = materialize(&grid)?;
    let base: RunConfig = serde_json::from_value(grid.base.clone())
        .map_err(|e| Error::validation(format!("sweep base: {e}")))?;
    let root = base
        .out_dir
        .clone()
        .ok_or_else(|| Error::validation("sweep base needs an out_dir"))?;
    fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;

    let run_one = |(i, (_, cfg)): (usize, &(Vec<(String, serde_json::Value)>, RunConfig))| {
        let mut cfg = cfg.clone();
        cfg.out_dir = Some(root.join(format!("run_{i:03}")));
        train(&cfg)
    };
    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        points.par_iter().enumerate().map(run_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = points.iter().enumerate().map(run_one).collect();

    let axis_names: Vec<&String> = grid.axes.keys().collect();
    let mut summary = String::from("run");
    for a in &axis_names {
        summary.push('\t');
        summary.push_str(a);
    }
    summary.push_str("\tval_metric\ttest_metric\n");
    let mut best: Option<(usize, f64)> = None;
    for (i, ((assignment, _), outcome)) in points.iter().zip(&outcomes).enumerate() {
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => return Err(Error::validation(format!("run_{i:03}: {e}"))),
        };
        let values = &outcome.report.values;
        let val = values.get("val_micro_f1").or_else(|| values.get("val_auroc")).copied();
        let test = values.get("test_micro_f1").or_else(|| values.get("test_auroc")).copied();
        let (val, test) = (val.unwrap_or(f64::NAN), test.unwrap_or(f64::NAN));
        summary.push_str(&format!("run_{i:03}"));
        for (_, v) in assignment {
            summary.push('\t');
            summary.push_str(&v.to_string());
        }
        summary.push_str(&format!("\t{val}\t{test}\n"));
        if best.map_or(true, |(_, b)| val > b) {
            best = Some((i, val));
        }
    }
    let path = root.join("summary.tsv");
    fs::write(&path, summary).map_err(|e| Error::io(path.display().to_string(), e))?;
    if let Some((i, val)) = best {
        println!("best run_{i:03} with validation metric {val}");
    }
    println!("{} configurations swept, summary at {}", points.len(), path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Train { config, seeds } => cmd_train(config, seeds),
        Cmd::Eval { ckpt, data } => print_json(&evaluate(ckpt, data)?),
        Cmd::Synth { kind, out, seed, nodes_per_type, degree, classes, noise } => {
            cmd_synth(kind, out, seed, nodes_per_type, degree, classes, noise)
        }
        Cmd::Gradcheck { config } => cmd_gradcheck(config),
        Cmd::InspectSheaf { config, out, layer } => cmd_inspect(config, out, layer),
        Cmd::Sweep { grid } => cmd_sweep(grid),
    }
}

/// Parses `args` (argv[0] included) and runs the command, mapping every
/// failure to its exit code. Usage errors print the usage text and exit 1;
/// `--help` and `--version` exit 0.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
