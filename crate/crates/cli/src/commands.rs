//! Implementations of the six operator commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gridcast_core::data::augment::{AUGMENTED_CHANNELS, DOWNSAMPLE_STRIDE};
use gridcast_core::data::io::{read_sequence, sidecar_path, write_sequence};
use gridcast_core::data::synth::{synthesize_storms, StormConfig};
use gridcast_core::model::ModelForecaster;
use gridcast_core::verify::InputMeanBaseline;
use gridcast_core::{
    evaluate_split, train, EvalOptions, MetricReport, NowcastConfig, NowcastDataset, NowcastModel,
    RadarSequence, Split,
};
use serde_json::json;

use crate::cli::{
    AblateArgs, BaselineKind, EvaluateArgs, ExportGraphArgs, GenerateArgs, PredictArgs, TrainArgs,
};
use crate::config;
use crate::error::{CliError, Result};
use crate::manifest::{sha256_hex, ManifestBuilder};

/// Shared run context: global flags plus the invocation line.
pub struct Ctx {
    pub out_dir: PathBuf,
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub verbose: bool,
    pub argv: Vec<String>,
}

impl Ctx {
    fn vlog(&self, msg: &str) {
        if self.verbose {
            eprintln!("{msg}");
        }
    }

    /// Registers the config file (if any) as a manifest input.
    fn note_config_input(&self, mb: &mut ManifestBuilder) -> Result<()> {
        if let Some(path) = &self.config_file {
            mb.input(path)?;
        }
        Ok(())
    }
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::from_io("writing output", e))
}

fn load_sequence(path: &Path) -> Result<RadarSequence> {
    read_sequence(path).map_err(CliError::from_load)
}

/// Short content hash of the effective config, stamped into CSV headers
/// so a result file can be traced back to the settings that made it.
fn config_hash(cfg: &NowcastConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    sha256_hex(json.as_bytes())[..16].to_string()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// generate

pub fn generate(ctx: &Ctx, args: GenerateArgs) -> Result<()> {
    // Only the seed is taken from the layered config; the storm geometry
    // is controlled by this command's own flags.
    let cfg = config::resolve(ctx.config_file.as_deref(), None, ctx.seed, false)?;
    let storm = StormConfig {
        width: args.width,
        height: args.height,
        n_frames: args.frames,
        n_blobs: args.blobs,
        velocity: (args.velocity_x, args.velocity_y),
        rotation: args.rotation,
        noise_dbz: args.noise_dbz,
        seed: cfg.seed,
    };
    let storm_json = json!({
        "width": storm.width,
        "height": storm.height,
        "n_frames": storm.n_frames,
        "n_blobs": storm.n_blobs,
        "velocity": [storm.velocity.0, storm.velocity.1],
        "rotation": storm.rotation,
        "noise_dbz": storm.noise_dbz,
        "seed": storm.seed,
    });

    ctx.vlog(&format!(
        "synthesizing {}x{} reflectivity, {} frames, {} cells, seed {}",
        storm.width, storm.height, storm.n_frames, storm.n_blobs, storm.seed
    ));
    let seq = synthesize_storms(&storm);

    let out = args
        .out
        .unwrap_or_else(|| ctx.out_dir.join("synthetic.rdr"));
    write_sequence(&out, &seq).map_err(CliError::from_compute)?;

    let mut mb = ManifestBuilder::new("generate", ctx.argv.clone(), storm.seed, storm_json);
    ctx.note_config_input(&mut mb)?;
    mb.output(&out);
    mb.output(&sidecar_path(&out));
    let manifest = mb.write(&ctx.out_dir)?;

    announce(&out);
    announce(&manifest);
    Ok(())
}

// ---------------------------------------------------------------------------
// train

pub fn train_cmd(ctx: &Ctx, args: TrainArgs) -> Result<()> {
    let cfg = config::resolve(ctx.config_file.as_deref(), Some(args.hyper), ctx.seed, true)?;
    let seq = load_sequence(&args.data)?;
    let ds = NowcastDataset::prepare(&seq, cfg.channels, cfg.input_len, cfg.horizon)
        .map_err(CliError::from_compute)?;
    ctx.vlog(&format!(
        "dataset: {} nodes ({}x{}), {} windows ({} train / {} validation / {} test)",
        ds.n_node(),
        ds.stack.width,
        ds.stack.height,
        ds.starts.len(),
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    ));

    let mut model =
        NowcastModel::<f32>::new(cfg.clone(), ds.n_node()).map_err(CliError::from_compute)?;
    ctx.vlog(&format!("model: {} parameters", model.n_parameters()));

    let log = train(&mut model, &ds).map_err(CliError::from_compute)?;
    if ctx.verbose {
        for r in &log.records {
            eprintln!(
                "epoch {}: train L1 {:.6}, validation L1 {:.6} ({:.1}s)",
                r.epoch, r.train_l1, r.val_l1, r.seconds
            );
        }
        for note in &log.notes {
            eprintln!("{note}");
        }
    }

    let ckpt = args.out.unwrap_or_else(|| ctx.out_dir.join("model.ckpt"));
    model
        .save(&ckpt, &ds.normalizer)
        .map_err(CliError::from_compute)?;
    let log_path = ctx.out_dir.join("training_log.csv");
    write_text(&log_path, &log.to_csv())?;

    let mut mb = ManifestBuilder::new(
        "train",
        ctx.argv.clone(),
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    mb.input(&args.data)?;
    ctx.note_config_input(&mut mb)?;
    mb.output(&ckpt);
    mb.output(&log_path);
    let manifest = mb.write(&ctx.out_dir)?;

    announce(&ckpt);
    announce(&log_path);
    announce(&manifest);
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

pub fn predict(ctx: &Ctx, args: PredictArgs) -> Result<()> {
    let (model, norm) = NowcastModel::<f32>::load(&args.checkpoint).map_err(CliError::from_load)?;
    let cfg = model.config.clone();
    let seq = load_sequence(&args.data)?;
    let input_meta = seq.meta.clone();
    let ds = NowcastDataset::prepare_with_norm(&seq, cfg.channels, cfg.input_len, cfg.horizon, norm)
        .map_err(CliError::from_compute)?;

    if args.t_index >= ds.starts.len() {
        return Err(CliError::Usage(format!(
            "--t-index {} out of range: the data yields {} forecast windows",
            args.t_index,
            ds.starts.len()
        )));
    }
    let start = ds.starts[args.t_index];
    let target = ds.target_frame(args.t_index);
    ctx.vlog(&format!(
        "window {}: input frames {}..={}, predicting frame {}",
        args.t_index,
        start,
        start + cfg.input_len - 1,
        target
    ));

    let (x, _) = ds.batch::<f32>(&[args.t_index]).map_err(CliError::from_compute)?;
    let pred = model.forward_eval(&x).map_err(CliError::from_compute)?;
    let frame: Vec<f32> = pred.data().iter().map(|&v| ds.normalizer.invert(v)).collect();

    let mut out_seq = RadarSequence {
        width: ds.stack.width,
        height: ds.stack.height,
        n_frames: 1,
        frames: frame,
        meta: input_meta,
    };
    out_seq.meta.pixel_meters *= DOWNSAMPLE_STRIDE as f64;
    out_seq.meta.norm_min = None;
    out_seq.meta.norm_max = None;
    out_seq.meta.seed = None;
    out_seq.meta.provenance = Some(format!(
        "forecast from window {} (input frames {}..={}, target frame {}) by checkpoint {}",
        args.t_index,
        start,
        start + cfg.input_len - 1,
        target,
        args.checkpoint
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.checkpoint.display().to_string()),
    ));

    let out = args
        .out
        .unwrap_or_else(|| ctx.out_dir.join("prediction.rdr"));
    write_sequence(&out, &out_seq).map_err(CliError::from_compute)?;

    let mut mb = ManifestBuilder::new(
        "predict",
        ctx.argv.clone(),
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    mb.params(json!({ "t_index": args.t_index }));
    mb.input(&args.checkpoint)?;
    mb.input(&args.data)?;
    mb.output(&out);
    mb.output(&sidecar_path(&out));
    let manifest = mb.write(&ctx.out_dir)?;

    announce(&out);
    announce(&manifest);
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

/// Renders one metrics row; `None` scores become empty cells.
fn metrics_row(h: usize, r: &MetricReport) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        h,
        fmt_opt(r.mae),
        fmt_opt(r.rmse),
        fmt_opt(r.corr),
        fmt_opt(r.csi),
        fmt_opt(r.hss),
        r.n_samples,
        r.n_masked,
        r.event_threshold,
    )
}

fn psd_csv(header: &str, r: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push_str("wavenumber,mean,p25,p50,p75\n");
    for bin in &r.psd {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            bin.k, bin.mean, bin.p25, bin.p50, bin.p75
        ));
    }
    out
}

/// PSD file path for one horizon: next to the metrics file, suffixed
/// with the horizon when several are scored at once.
fn psd_path(metrics: &Path, horizon: usize, multi: bool) -> PathBuf {
    let stem = metrics
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "metrics".to_string());
    let name = if multi {
        format!("{stem}_psd_h{horizon}.csv")
    } else {
        format!("{stem}_psd.csv")
    };
    metrics.with_file_name(name)
}

pub fn evaluate_cmd(ctx: &Ctx, args: EvaluateArgs) -> Result<()> {
    let seq = load_sequence(&args.data)?;
    let opts = EvalOptions {
        mask_floor: args.mask_floor,
        rain_threshold_mm: args.threshold,
        denormalize: args.denormalize,
        batch: args.batch,
    };
    let split: Split = args.split.into();

    // Checkpoint mode scores the stored model with its stored
    // normalization bounds; baseline mode scores the parameter-free
    // reference on a dataset normalized from its own training split.
    enum Source {
        Checkpoint(Box<NowcastModel<f32>>, gridcast_core::Normalizer),
        Baseline,
    }
    let (source, cfg, source_label) = if let Some(ckpt) = &args.checkpoint {
        let (model, norm) = NowcastModel::<f32>::load(ckpt).map_err(CliError::from_load)?;
        let cfg = model.config.clone();
        let label = format!(
            "checkpoint:{}",
            ckpt.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| ckpt.display().to_string())
        );
        (Source::Checkpoint(Box::new(model), norm), cfg, label)
    } else {
        let cfg = config::resolve(ctx.config_file.as_deref(), None, ctx.seed, true)?;
        let label = match args.baseline.expect("clap enforces exactly one source") {
            BaselineKind::InputMean => "baseline:input-mean".to_string(),
        };
        (Source::Baseline, cfg, label)
    };

    let horizons = match &args.horizon {
        Some(hs) if !hs.is_empty() => hs.clone(),
        _ => vec![cfg.horizon],
    };
    for &h in &horizons {
        if h == 0 {
            return Err(CliError::Usage("--horizon values must be positive".into()));
        }
    }

    let header = format!(
        "# config_hash={} source={} split={:?} mask_floor={} rain_threshold_mm={} denormalize={}\n",
        config_hash(&cfg),
        source_label,
        split,
        opts.mask_floor,
        opts.rain_threshold_mm,
        opts.denormalize,
    );

    let metrics_path = args.out.unwrap_or_else(|| ctx.out_dir.join("metrics.csv"));
    let multi = horizons.len() > 1;
    let mut metrics_csv = header.clone();
    metrics_csv.push_str(
        "horizon,mae,rmse,corr,csi,hss,n_samples,n_masked,event_threshold\n",
    );
    let mut psd_paths = Vec::new();

    for &h in &horizons {
        let report = match &source {
            Source::Checkpoint(model, norm) => {
                let ds = NowcastDataset::prepare_with_norm(
                    &seq,
                    cfg.channels,
                    cfg.input_len,
                    h,
                    *norm,
                )
                .map_err(CliError::from_compute)?;
                let mut fc = ModelForecaster { model: &**model };
                evaluate_split(&mut fc, &ds, split, &opts).map_err(CliError::from_compute)?
            }
            Source::Baseline => {
                let ds = NowcastDataset::prepare(&seq, cfg.channels, cfg.input_len, h)
                    .map_err(CliError::from_compute)?;
                let mut fc = InputMeanBaseline;
                evaluate_split(&mut fc, &ds, split, &opts).map_err(CliError::from_compute)?
            }
        };
        ctx.vlog(&format!(
            "horizon {h}: mae {} rmse {} corr {} csi {} hss {} over {} windows",
            fmt_opt(report.mae),
            fmt_opt(report.rmse),
            fmt_opt(report.corr),
            fmt_opt(report.csi),
            fmt_opt(report.hss),
            report.n_samples,
        ));
        metrics_csv.push_str(&metrics_row(h, &report));

        let psd_header = format!("{}# horizon={h}\n", header);
        let p = psd_path(&metrics_path, h, multi);
        write_text(&p, &psd_csv(&psd_header, &report))?;
        psd_paths.push(p);
    }
    write_text(&metrics_path, &metrics_csv)?;

    let mut mb = ManifestBuilder::new(
        "evaluate",
        ctx.argv.clone(),
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    mb.params(json!({
        "source": source_label,
        "split": format!("{split:?}"),
        "horizons": horizons,
        "mask_floor": opts.mask_floor,
        "rain_threshold_mm": opts.rain_threshold_mm,
        "denormalize": opts.denormalize,
        "batch": opts.batch,
    }));
    if let Some(ckpt) = &args.checkpoint {
        mb.input(ckpt)?;
    }
    mb.input(&args.data)?;
    ctx.note_config_input(&mut mb)?;
    mb.output(&metrics_path);
    for p in &psd_paths {
        mb.output(p);
    }
    let manifest = mb.write(&ctx.out_dir)?;

    announce(&metrics_path);
    for p in &psd_paths {
        announce(p);
    }
    announce(&manifest);
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate-channels

pub fn ablate_channels(ctx: &Ctx, args: AblateArgs) -> Result<()> {
    if args.hyper.channels.is_some() {
        return Err(CliError::Usage(
            "--channels conflicts with ablate-channels, which scans the channel counts itself"
                .into(),
        ));
    }
    let cfg = config::resolve(ctx.config_file.as_deref(), Some(args.hyper), ctx.seed, true)?;
    let seq = load_sequence(&args.data)?;

    let mut csv = String::from("channels,mae,rmse,corr,train_seconds\n");
    for channels in [1, AUGMENTED_CHANNELS] {
        let cfg_c = NowcastConfig {
            channels,
            ..cfg.clone()
        };
        ctx.vlog(&format!("training with {channels} input channel(s)"));
        // The clock covers channel construction and training: extra
        // channels cost both augmentation and wider convolutions.
        let t0 = Instant::now();
        let ds = NowcastDataset::prepare(&seq, channels, cfg_c.input_len, cfg_c.horizon)
            .map_err(CliError::from_compute)?;
        let mut model =
            NowcastModel::<f32>::new(cfg_c.clone(), ds.n_node()).map_err(CliError::from_compute)?;
        train(&mut model, &ds).map_err(CliError::from_compute)?;
        let seconds = t0.elapsed().as_secs_f64();

        let mut fc = ModelForecaster { model: &model };
        let report = evaluate_split(&mut fc, &ds, Split::Test, &EvalOptions::default())
            .map_err(CliError::from_compute)?;
        ctx.vlog(&format!(
            "channels {channels}: test mae {} rmse {} corr {} in {seconds:.1}s",
            fmt_opt(report.mae),
            fmt_opt(report.rmse),
            fmt_opt(report.corr),
        ));
        csv.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            channels,
            fmt_opt(report.mae),
            fmt_opt(report.rmse),
            fmt_opt(report.corr),
            seconds,
        ));
    }

    let out = args.out.unwrap_or_else(|| ctx.out_dir.join("ablation.csv"));
    write_text(&out, &csv)?;

    let mut mb = ManifestBuilder::new(
        "ablate-channels",
        ctx.argv.clone(),
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    mb.params(json!({ "channel_counts": [1, AUGMENTED_CHANNELS] }));
    mb.input(&args.data)?;
    ctx.note_config_input(&mut mb)?;
    mb.output(&out);
    let manifest = mb.write(&ctx.out_dir)?;

    announce(&out);
    announce(&manifest);
    Ok(())
}

// ---------------------------------------------------------------------------
// export-graph

pub fn export_graph(ctx: &Ctx, args: ExportGraphArgs) -> Result<()> {
    let (model, _) = NowcastModel::<f32>::load(&args.checkpoint).map_err(CliError::from_load)?;
    let adj = model.current_adjacency().map_err(CliError::from_compute)?;
    let n = model.n_node();

    let mut csv = String::new();
    for row in 0..n {
        let cells: Vec<String> = adj.data()[row * n..(row + 1) * n]
            .iter()
            .map(|v| v.to_string())
            .collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }

    let out = args
        .out
        .unwrap_or_else(|| ctx.out_dir.join("adjacency.csv"));
    write_text(&out, &csv)?;

    let info_path = {
        let mut name = out
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "adjacency.csv".to_string());
        name.push_str(".txt");
        out.with_file_name(name)
    };
    let info = format!(
        "k = {}\nalpha = {}\nd_emb = {}\nn_node = {}\n",
        model.config.top_k, model.config.alpha, model.config.embed_dim, n
    );
    write_text(&info_path, &info)?;
    ctx.vlog(&format!(
        "adjacency: {n}x{n}, at most {} neighbours per row",
        model.config.top_k
    ));

    let mut mb = ManifestBuilder::new(
        "export-graph",
        ctx.argv.clone(),
        model.config.seed,
        serde_json::to_value(&model.config).expect("config serializes"),
    );
    mb.input(&args.checkpoint)?;
    mb.output(&out);
    mb.output(&info_path);
    let manifest = mb.write(&ctx.out_dir)?;

    announce(&out);
    announce(&info_path);
    announce(&manifest);
    Ok(())
}
