//! Command-line front end. Every subcommand writes into `--out` and
//! overwrites what it finds there.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{
    dataset_from_container, dataset_to_container, map_from_container, map_to_container, model_from_container,
    state_from_container, state_to_container, synthesize, Container, Dataset, Tensor,
};
use crate::error::{Error, Result};
use crate::experiments::evaluate;
use crate::forward::{spectral_init, ForwardMap, ScaleRule};
use crate::linalg::to_complex;
use crate::metrics::Curves;
use crate::plot::render_svg;
use crate::theory::{check_theorem1, delta_sweep, empirical_params, estimate_delta, wf_feasibility_boundary, TheoryParams};
use crate::train::{history_csv, prepare, split_indices, train_epochs, Prepared, TrainState};
use crate::unrolled::{reconstruct, UnrolledModel};
use crate::wf::{run_wf, WfConfig};

pub const DATASET_FILE: &str = "dataset.uwfd";
pub const MODEL_FILE: &str = "model.uwfd";
pub const HISTORY_FILE: &str = "history.csv";
pub const RECON_FILE: &str = "reconstructions.uwfd";
pub const REPORT_FILE: &str = "report.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const THEORY_FILE: &str = "theory_report.json";
pub const PLOT_FILE: &str = "curves.svg";

const DELTA_SWEEP_RATIOS: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 64.0];

#[derive(Debug, Parser)]
#[command(name = "uwf", version, about = "Phase retrieval by classic and unrolled Wirtinger Flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a map and a measured dataset.
    GenData(GenDataArgs),
    /// Train (or resume) an unrolled model.
    Train(TrainArgs),
    /// Reconstruct every sample of a dataset.
    Reconstruct(EvalArgs),
    /// Per-sample and aggregate errors, with curves.
    Eval(EvalArgs),
    /// Recovery-theory ledger for a model, map and sample set.
    Theory(TheoryArgs),
    /// Render a curves CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Wf,
    None,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `data.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset container from gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to resume from; runs `train.epochs` further epochs.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Supplies the scale rule and WF settings; defaults apply without it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "wf")]
    pub baseline: Baseline,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Dataset container; its ground truths drive the estimates.
    #[arg(long)]
    pub samples: PathBuf,
    /// Container holding `forward.A`; defaults to the one in `--samples`.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Without a model only the identity-decoder reduction is reported.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Code-domain radius of the planted pairs.
    #[arg(long, default_value_t = 0.1)]
    pub eps_y: f64,
    /// Samples per ratio in the δ sweep.
    #[arg(long, default_value_t = 20)]
    pub sweep_samples: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long, default_value = "x")]
    pub x_label: String,
    #[arg(long, default_value = "y")]
    pub y_label: String,
}

/// Cap the global rayon pool from `UWF_THREADS`.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("UWF_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("UWF_THREADS must be a positive integer, got {v:?}")))?;
    // A pool built earlier in the process keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match init_threads().and_then(|_| run(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Theory(a) => theory_cmd(a),
        Command::Plot(a) => plot_cmd(a),
    }
}

fn out_dir(out: &Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    out.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn optional_config(path: &Option<PathBuf>) -> Result<Option<RunConfig>> {
    path.as_ref().map(RunConfig::load).transpose()
}

fn load_dataset(path: &Path) -> Result<(ForwardMap, Dataset)> {
    let c = Container::load(path)?;
    let f = map_from_container(&c)?;
    let ds = dataset_from_container(&c)?;
    if ds.samples.first().is_some_and(|s| s.d.len() != f.m() || s.rho_star.len() != f.n()) {
        return Err(Error::Format(format!("{}: dataset does not match its map", path.display())));
    }
    Ok((f, ds))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.data.seed = s;
    }
    let dir = out_dir(&a.out, &cfg);
    ensure_dir(&dir)?;
    let f = cfg.build_map()?;
    let images = cfg.images()?;
    let samples = synthesize(&f, &images, cfg.data.snr_db, cfg.data.seed)?;
    let ds = Dataset { h: cfg.data.h, w: cfg.data.w, snr_db: cfg.data.snr_db, samples };
    let mut c = Container::default();
    map_to_container(&f, &mut c)?;
    dataset_to_container(&ds, &mut c)?;
    c.meta.insert("data_seed".into(), json!(cfg.data.seed));
    let path = dir.join(DATASET_FILE);
    c.store(&path)?;
    println!("wrote {} ({} samples, M = {}, N = {})", path.display(), ds.samples.len(), f.m(), f.n());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let dir = out_dir(&a.out, &cfg);
    ensure_dir(&dir)?;
    let (f, ds) = load_dataset(&a.data)?;
    let rule = cfg.train.scale_rule;
    let prepared = prepare(&f, &ds.samples, rule)?;
    let (tr, va) = split_indices(prepared.len(), cfg.train.val_fraction, cfg.train.seed);
    let pick = |ix: &[usize]| -> Vec<Prepared> { ix.iter().map(|&i| prepared[i].clone()).collect() };
    let state = match &a.model {
        Some(p) => state_from_container(&Container::load(p)?)?,
        None => TrainState::new(UnrolledModel::init(f.n(), &cfg.model, cfg.train.seed)?, &cfg.train),
    };
    if state.model.n() != f.n() {
        return Err(Error::Config(format!("model expects N = {}, dataset has N = {}", state.model.n(), f.n())));
    }
    let state = train_epochs(state, &f, &pick(&tr), &pick(&va), &cfg.train, cfg.train.epochs)?;
    let mut c = Container::default();
    state_to_container(&state, &mut c)?;
    c.meta.insert("scale_rule".into(), serde_json::to_value(rule).expect("enum"));
    let mp = dir.join(MODEL_FILE);
    c.store(&mp)?;
    let hp = dir.join(HISTORY_FILE);
    fs::write(&hp, history_csv(&state.history))?;
    match state.history.last() {
        Some(r) => println!("epoch {}: train {:.4e}, val {:.4e}", r.epoch, r.train_mse, r.val_mse),
        None => println!("no epochs run"),
    }
    println!("wrote {} and {}", mp.display(), hp.display());
    Ok(())
}

struct EvalInputs {
    model: UnrolledModel,
    f: ForwardMap,
    ds: Dataset,
    rule: ScaleRule,
    wf: WfConfig,
}

fn eval_inputs(a: &EvalArgs) -> Result<EvalInputs> {
    let cfg = optional_config(&a.config)?;
    let mc = Container::load(&a.model)?;
    let model = model_from_container(&mc)?;
    let (f, ds) = load_dataset(&a.data)?;
    if model.n() != f.n() {
        return Err(Error::Config(format!("model expects N = {}, dataset has N = {}", model.n(), f.n())));
    }
    let stored_rule = mc.meta.get("scale_rule").and_then(|v| serde_json::from_value(v.clone()).ok());
    let rule = cfg.as_ref().map(|c| c.train.scale_rule).or(stored_rule).unwrap_or_default();
    let wf = cfg.as_ref().map(RunConfig::wf_config).unwrap_or_default();
    Ok(EvalInputs { model, f, ds, rule, wf })
}

fn reconstruct_cmd(a: &EvalArgs) -> Result<()> {
    let inp = eval_inputs(a)?;
    ensure_dir(&a.out)?;
    let (t, n) = (inp.ds.samples.len(), inp.f.n());
    let mut c = Container::default();
    let mut flat = Vec::with_capacity(t * n);
    for s in &inp.ds.samples {
        flat.extend(reconstruct(&inp.model, &inp.f, &s.d, inp.rule)?);
    }
    c.put(Tensor::f64("recon.model", vec![t, n], flat)?);
    if a.baseline == Baseline::Wf {
        let mut wf = Vec::with_capacity(t * n);
        for s in &inp.ds.samples {
            let init = spectral_init(&inp.f, &s.d, inp.rule)?;
            wf.extend(run_wf(&inp.f, &s.d, &init.estimate, &inp.wf, None)?.final_estimate);
        }
        c.put(Tensor::c128("recon.wf", vec![t, n], wf)?);
    }
    c.meta.insert("H".into(), json!(inp.ds.h));
    c.meta.insert("W".into(), json!(inp.ds.w));
    let p = a.out.join(RECON_FILE);
    c.store(&p)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let inp = eval_inputs(a)?;
    ensure_dir(&a.out)?;
    let wf = (a.baseline == Baseline::Wf).then_some(&inp.wf);
    let report = evaluate(&inp.model, &inp.f, &inp.ds.samples, wf, inp.rule)?;
    let mut curves = Curves::default();
    for r in &report.per_sample {
        curves.push("model", r.index as f64, r.model_mse);
        if let Some(w) = r.wf_mse {
            curves.push("wf", r.index as f64, w);
        }
    }
    let value = json!({
        "samples": inp.ds.samples.len(),
        "M": inp.f.m(),
        "N": inp.f.n(),
        "snr_db": inp.ds.snr_db,
        "scale_rule": inp.rule,
        "wf": wf,
        "report": report,
    });
    write_json(&a.out.join(REPORT_FILE), &value)?;
    fs::write(a.out.join(CURVES_FILE), curves.to_csv())?;
    match report.wf_median {
        Some(w) => println!("median MSE: model {:.4e}, wf {:.4e}", report.model_median, w),
        None => println!("median MSE: model {:.4e}", report.model_median),
    }
    Ok(())
}

fn theory_cmd(a: &TheoryArgs) -> Result<()> {
    let cfg = optional_config(&a.config)?;
    let rule = cfg.as_ref().map(|c| c.train.scale_rule).unwrap_or_default();
    let (sample_map, ds) = load_dataset(&a.samples)?;
    let f = match &a.map {
        Some(p) => map_from_container(&Container::load(p)?)?,
        None => sample_map,
    };
    if f.n() != ds.h * ds.w {
        return Err(Error::Config(format!("map has N = {}, samples have {} pixels", f.n(), ds.h * ds.w)));
    }
    ensure_dir(&a.out)?;
    let truths: Vec<_> = ds.samples.iter().map(|s| to_complex(&s.rho_star)).collect();
    let delta_data = estimate_delta(&f, &truths)?;

    let mut wf_eps = 0.0f64;
    for s in &ds.samples {
        let init = spectral_init(&f, &s.d, rule)?;
        let t = to_complex(&s.rho_star);
        let nt = crate::linalg::norm(&t);
        if nt > 0.0 {
            wf_eps = wf_eps.max(crate::linalg::dist(&init.estimate, &t)? / nt);
        }
    }
    let mut reduction_params = TheoryParams::wf_regime(delta_data.delta, wf_eps);
    reduction_params.m = f.m();
    reduction_params.n = f.n();
    let reduction = check_theorem1(&reduction_params);
    let grid: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3).collect();
    let boundary = wf_feasibility_boundary(wf_eps.min(0.99), &grid);
    let sweep = delta_sweep(f.n(), &DELTA_SWEEP_RATIOS, a.sweep_samples, a.seed)?;

    let model_part = match &a.model {
        Some(p) => {
            let model = model_from_container(&Container::load(p)?)?;
            let (params, prov) = empirical_params(&model, &f, &ds.samples, a.eps_y, rule, a.seed)?;
            let report = check_theorem1(&params);
            json!({"report": report, "provenance": prov})
        }
        None => serde_json::Value::Null,
    };
    let value = json!({
        "M": f.m(),
        "N": f.n(),
        "samples": ds.samples.len(),
        "scale_rule": rule,
        "delta_data": delta_data.delta,
        "identity_decoder": reduction,
        "wf_boundary_delta": boundary,
        "delta_sweep": sweep.iter().map(|(r, d)| json!({"ratio": r, "delta": d})).collect::<Vec<_>>(),
        "model": model_part,
    });
    let p = a.out.join(THEORY_FILE);
    write_json(&p, &value)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn plot_cmd(a: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.curves)?;
    let curves = Curves::from_csv(&text)?;
    let title = if a.title.is_empty() {
        a.curves.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        a.title.clone()
    };
    let svg = render_svg(&curves, &title, &a.x_label, &a.y_label)?;
    ensure_dir(&a.out)?;
    let p = a.out.join(PLOT_FILE);
    fs::write(&p, svg)?;
    println!("wrote {}", p.display());
    Ok(())
}
