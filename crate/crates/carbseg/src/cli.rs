//! Command-line front end. [`run`] maps every outcome to an exit code:
//! 0 on success, 1 on usage or validation errors, 2 on I/O errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use carbseg_core::eval::{evaluate, evaluate_labels, EvalReport};
use carbseg_core::exec::Executor;
use carbseg_core::maskgen::{cosine_pseudo_mask, local_view_features, paste_local_mask, FeatureChannel, FeatureProvider};
use carbseg_core::stats::{compute_stats, image_label_set};
use carbseg_core::synth::{make_synthetic_dataset, SyntheticDataset, SyntheticProvider};
use carbseg_core::train::train;
use carbseg_core::types::resize_labels_nearest;
use carbseg_core::{ClassCatalog, ClassSet};

use crate::catalog::{read_catalog, write_catalog};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{synth_entries, train_entries, KeyValues};
use crate::curves::{compute_curves, write_curves, DEFAULT_WINDOW};
use crate::dtn1::{self, Tensor};
use crate::error::{Error, IoContext, Result};
use crate::labels::{file_stem, list_label_files, read_label_map, write_label_map};
use crate::manifest::RunManifest;
use crate::parallel::RayonExecutor;
use crate::provider::FileProvider;
use crate::stats_csv::write_stats;
use crate::telemetry::{read_telemetry, write_telemetry};

pub const TELEMETRY_FILE: &str = "telemetry.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const EVAL_FILE: &str = "eval.csv";

#[derive(Debug, Parser)]
#[command(name = "carbseg", version, about = "Pseudo-mask segmentation training with region balancing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classes-per-image, co-occurrence and positive/negative counts of a label directory.
    Stats(StatsArgs),
    /// Cosine-argmax pseudo-masks for a feature directory.
    Pseudomask(PseudomaskArgs),
    /// Writes a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Trains a head on synthetic data generated from the config and seed.
    Train(TrainArgs),
    /// mIoU of label directories, or of a checkpoint on synthetic data.
    Eval(EvalArgs),
    /// Window-averaged loss, area and weight curves from telemetry.
    ExportCurves(CurvesArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_pixels: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct PseudomaskArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict each scene to the classes of `<dir>/<scene>.pgm` (or `.dtn1`).
    #[arg(long)]
    pub allowed_from_labels: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_pixels: usize,
    #[arg(long, default_value_t = carbseg_core::maskgen::DEFAULT_STRIDE)]
    pub stride: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, requires = "gt", conflicts_with = "checkpoint")]
    pub pred: Option<PathBuf>,
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    #[arg(long, required_unless_present = "checkpoint")]
    pub catalog: Option<PathBuf>,
    /// Checkpoint directory, evaluated on the synthetic data of `--config` and `--seed`.
    #[arg(long, requires = "seed", required_unless_present = "pred")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for `eval.csv` and the run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub telemetry: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Accepted for uniformity with the other subcommands; not used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr, results to stdout.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match dispatch(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Stats(a) => stats(a, out),
        Command::Pseudomask(a) => pseudomask(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval(a, out),
        Command::ExportCurves(a) => export_curves(a, out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) {
    let _ = writeln!(out, "{}", line.as_ref());
}

fn executor(threads: usize) -> Result<RayonExecutor> {
    if threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    RayonExecutor::new(threads).map_err(|e| Error::Usage(format!("cannot start {threads} threads: {e}")))
}

fn key_values(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        Some(p) => KeyValues::read(p),
        None => Ok(KeyValues::default()),
    }
}

fn stats(a: StatsArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("stats", None);
    if a.min_pixels == 0 {
        return Err(Error::Usage("--min-pixels must be at least 1".into()));
    }
    let exec = executor(a.threads)?;
    let catalog = read_catalog(&a.catalog)?;
    let files = list_label_files(&a.labels)?;
    if files.is_empty() {
        return Err(Error::format(&a.labels, "no .pgm or .dtn1 label maps found"));
    }
    let c = catalog.class_count();
    let sets = exec
        .map(files.len(), |i| {
            let lm = read_label_map(&files[i], Some(c))?;
            Ok(image_label_set(file_stem(&files[i]), &lm, a.min_pixels))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    for s in sets.iter().filter(|s| s.is_empty()) {
        eprintln!("warning: image {} has no class with at least {} pixels", s.image_id, a.min_pixels);
    }
    let st = compute_stats(&sets, c)?;
    m.outputs = write_stats(&a.out, &st, &catalog)?;
    m.config = vec![("min_pixels".into(), a.min_pixels.to_string())];
    m.inputs = vec![("labels".into(), a.labels), ("catalog".into(), a.catalog)];
    say(out, format!("images {}", st.image_count));
    m.finish(&a.out)?;
    Ok(())
}

fn allowed_for(dir: &Path, scene: &str, class_count: usize, min_pixels: usize) -> Result<ClassSet> {
    for ext in ["pgm", "dtn1"] {
        let p = dir.join(format!("{scene}.{ext}"));
        if p.is_file() {
            let lm = read_label_map(&p, Some(class_count))?;
            let set = image_label_set(scene, &lm, min_pixels).present;
            if set.is_empty() {
                return Err(Error::format(&p, "label map has no class to allow"));
            }
            return Ok(set);
        }
    }
    Err(Error::format(dir, format!("no label map for scene {scene}")))
}

fn pseudomask(a: PseudomaskArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("pseudomask", None);
    if a.min_pixels == 0 {
        return Err(Error::Usage("--min-pixels must be at least 1".into()));
    }
    let exec = executor(a.threads)?;
    let provider = FileProvider::open(&a.features, a.stride)?;
    let text = dtn1::read_text(&a.text)?;
    if text.dim() != provider.dim() {
        return Err(Error::format(&a.text, format!("text dim {} differs from feature dim {}", text.dim(), provider.dim())));
    }
    fs::create_dir_all(&a.out).at(&a.out)?;
    let c = text.class_count();
    let results = exec.map(provider.scene_count(), |i| -> Result<(Vec<PathBuf>, usize)> {
        let name = provider.scene_id(i);
        let allowed = match &a.allowed_from_labels {
            Some(dir) => Some(allowed_for(dir, &name, c, a.min_pixels)?),
            None => None,
        };
        let (fw, fh) = provider.frame_size(i)?;
        let f = provider.features(i, None, FeatureChannel::PseudoLabel).map_err(|e| Error::invalid(provider.view_path(i, None), e))?;
        let g = cosine_pseudo_mask(&f, &text, allowed.as_ref())?;
        let mut zero = g.zero_norm_cells;
        let gp = a.out.join(format!("{name}.pgm"));
        write_label_map(&gp, &resize_labels_nearest(&g.labels, fw, fh)?)?;
        let mut written = vec![gp];
        let views = provider.local_views(i)?;
        if !views.is_empty() {
            let dir = a.out.join(&name);
            fs::create_dir_all(&dir).at(&dir)?;
            for spec in views {
                let lf = local_view_features(&provider, i, &spec).map_err(|e| Error::invalid(provider.view_path(i, Some(&spec)), e))?;
                let lm = cosine_pseudo_mask(&lf, &text, allowed.as_ref())?;
                zero += lm.zero_norm_cells;
                let pasted = paste_local_mask(fw, fh, None, &lm.labels, &spec)?;
                let p = dir.join(format!("{}.pgm", spec.file_stem()));
                write_label_map(&p, &pasted)?;
                written.push(p);
            }
        }
        Ok((written, zero))
    });
    let mut zero = 0;
    for r in results {
        let (paths, z) = r?;
        m.outputs.extend(paths);
        zero += z;
    }
    if zero > 0 {
        eprintln!("warning: {zero} zero-norm feature cells were set to the ignore index");
    }
    say(out, format!("scenes {}", provider.scene_count()));
    m.config = vec![("stride".into(), a.stride.to_string()), ("min_pixels".into(), a.min_pixels.to_string())];
    m.inputs = vec![("features".into(), a.features), ("text".into(), a.text)];
    if let Some(d) = a.allowed_from_labels {
        m.inputs.push(("allowed_from_labels".into(), d));
    }
    m.finish(&a.out)?;
    Ok(())
}

fn synthetic(kv: &KeyValues, seed: u64) -> Result<SyntheticDataset> {
    Ok(make_synthetic_dataset(&kv.synth_config()?, seed)?)
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("synth", Some(a.seed));
    let kv = key_values(a.config.as_deref())?;
    let ds = synthetic(&kv, a.seed)?;
    let provider = SyntheticProvider::new(&ds, a.seed);
    fs::create_dir_all(&a.out).at(&a.out)?;
    let cat = a.out.join("catalog.tsv");
    write_catalog(&cat, &ClassCatalog::generic(ds.config.class_count)?)?;
    let text = a.out.join("text.dtn1");
    dtn1::write_tensor(&text, &Tensor::from_text(&ds.text))?;
    m.outputs = vec![cat, text];
    for (i, s) in ds.scenes.iter().enumerate() {
        for (sub, channel) in [("features", FeatureChannel::PseudoLabel), ("inputs", FeatureChannel::ModelInput)] {
            let dir = a.out.join(sub).join(&s.id);
            fs::create_dir_all(&dir).at(&dir)?;
            let p = dir.join(crate::provider::GLOBAL_FILE);
            dtn1::write_tensor(&p, &Tensor::from_features(&provider.features(i, None, channel)?))?;
            m.outputs.push(p);
        }
        for (sub, map) in [("labels", &s.ground_truth), ("noisy", &s.noisy_mask)] {
            let dir = a.out.join(sub);
            fs::create_dir_all(&dir).at(&dir)?;
            let p = dir.join(format!("{}.pgm", s.id));
            write_label_map(&p, map)?;
            m.outputs.push(p);
        }
    }
    say(out, format!("scenes {}", ds.scenes.len()));
    m.config = synth_entries(&ds.config);
    if let Some(c) = a.config {
        m.inputs.push(("config".into(), c));
    }
    m.finish(&a.out)?;
    Ok(())
}

fn report_lines(r: &EvalReport, names: &[String], out: &mut dyn Write) {
    for (k, iou) in r.iou.iter().enumerate() {
        match iou {
            Some(v) => say(out, format!("IoU {} {v:.6}", names[k])),
            None => say(out, format!("IoU {} undefined", names[k])),
        }
    }
    say(out, format!("mIoU {:.6}", r.miou));
}

fn write_report(path: &Path, r: &EvalReport, names: &[String]) -> Result<()> {
    let mut s = String::from("index,class,iou\n");
    for (k, iou) in r.iou.iter().enumerate() {
        s.push_str(&format!("{k},{},{}\n", names[k], iou.map(|v| format!("{v:.6}")).unwrap_or_default()));
    }
    s.push_str(&format!(",mean,{:.6}\n", r.miou));
    fs::write(path, s).at(path)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("train", Some(a.seed));
    let exec = executor(a.threads)?;
    let kv = key_values(a.config.as_deref())?;
    let cfg = kv.train_config(a.seed)?;
    let ds = synthetic(&kv, a.seed)?;
    let provider = SyntheticProvider::new(&ds, a.seed);
    let scenes: Vec<usize> = (0..ds.scenes.len()).collect();
    let outcome = train(&cfg, &provider, &ds, &scenes, &ds.text, &exec)?;
    fs::create_dir_all(&a.out).at(&a.out)?;
    let tp = a.out.join(TELEMETRY_FILE);
    write_telemetry(&tp, &outcome.telemetry)?;
    m.outputs.push(tp);
    m.outputs.extend(write_checkpoint(a.out.join(CHECKPOINT_DIR), &outcome.head, outcome.iterations)?);
    let gt: Vec<_> = ds.scenes.iter().enumerate().map(|(i, s)| (i, &s.ground_truth)).collect();
    let report = evaluate(&outcome.head, &provider, &gt, &exec)?;
    let names = ClassCatalog::generic(ds.config.class_count)?.names().to_vec();
    let ep = a.out.join(EVAL_FILE);
    write_report(&ep, &report, &names)?;
    m.outputs.push(ep);
    report_lines(&report, &names, out);
    m.config = synth_entries(&ds.config).into_iter().chain(train_entries(&cfg)).collect();
    if let Some(c) = a.config {
        m.inputs.push(("config".into(), c));
    }
    m.finish(&a.out)?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("eval", a.seed);
    let exec = executor(a.threads)?;
    let (report, names) = if let (Some(pred), Some(gt)) = (&a.pred, &a.gt) {
        let catalog_path = a.catalog.as_ref().ok_or_else(|| Error::Usage("missing required flag --catalog".into()))?;
        let catalog = read_catalog(catalog_path)?;
        let c = catalog.class_count();
        let files = list_label_files(gt)?;
        if files.is_empty() {
            return Err(Error::format(gt, "no ground-truth label maps found"));
        }
        let pairs = exec
            .map(files.len(), |i| {
                let g = read_label_map(&files[i], Some(c))?;
                let pp = pred.join(files[i].file_name().unwrap());
                let p = read_label_map(&pp, Some(c))?;
                p.same_shape(&g).map_err(|e| Error::invalid(&pp, e))?;
                Ok((p, g))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        m.inputs = vec![("pred".into(), pred.clone()), ("gt".into(), gt.clone()), ("catalog".into(), catalog_path.clone())];
        (evaluate_labels(pairs.iter().map(|(p, g)| (p, g)), c)?, catalog.names().to_vec())
    } else {
        let ck = a.checkpoint.as_ref().ok_or_else(|| Error::Usage("missing required flag --checkpoint or --pred".into()))?;
        let seed = a.seed.ok_or_else(|| Error::Usage("missing required flag --seed".into()))?;
        let kv = key_values(a.config.as_deref())?;
        let ds = synthetic(&kv, seed)?;
        let provider = SyntheticProvider::new(&ds, seed);
        let (head, _) = read_checkpoint(ck)?;
        let gt: Vec<_> = ds.scenes.iter().enumerate().map(|(i, s)| (i, &s.ground_truth)).collect();
        let names = match &a.catalog {
            Some(p) => read_catalog(p)?.names().to_vec(),
            None => ClassCatalog::generic(head.class_count())?.names().to_vec(),
        };
        if names.len() != head.class_count() {
            return Err(Error::Usage(format!("catalog has {} classes, checkpoint {}", names.len(), head.class_count())));
        }
        m.config = synth_entries(&ds.config);
        m.inputs = vec![("checkpoint".into(), ck.clone())];
        if let Some(c) = &a.config {
            m.inputs.push(("config".into(), c.clone()));
        }
        (evaluate(&head, &provider, &gt, &exec)?, names)
    };
    report_lines(&report, &names, out);
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir).at(&dir)?;
        let p = dir.join(EVAL_FILE);
        write_report(&p, &report, &names)?;
        m.outputs.push(p);
        m.finish(&dir)?;
    }
    Ok(())
}

fn export_curves(a: CurvesArgs, out: &mut dyn Write) -> Result<()> {
    let mut m = RunManifest::new("export-curves", a.seed);
    let rows = read_telemetry(&a.telemetry)?;
    let curves = compute_curves(&rows, a.window)?;
    m.outputs = write_curves(&a.out, &curves)?;
    m.config = vec![("window".into(), a.window.to_string())];
    m.inputs = vec![("telemetry".into(), a.telemetry)];
    if let Some(c) = a.config {
        m.inputs.push(("config".into(), c));
    }
    say(out, format!("rows {}", rows.len()));
    m.finish(&a.out)?;
    Ok(())
}
