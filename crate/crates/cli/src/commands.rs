use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hashenc::analysis::{self, entry_histograms, histogram_image, layer_ablation};
use hashenc::flow::{self, FieldRef, FlowConfig, FlowMode, FlowProblem};
use hashenc::format::{self, payload_sizes, Precision};
use hashenc::grid::LevelGeometry;
use hashenc::interp::trace_1d;
use hashenc::train::{self, TrainConfig, TrainMode};
use hashenc::{GridConfig, HashField, ImageBuffer};

use crate::run::{write_atomic, RunDir};
use crate::{Analyze, Cli, Command, FlowArgs, GridArgs, TrainArgs};

pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Fit { .. } => "fit",
        Command::Finetune { .. } => "finetune",
        Command::Decode { .. } => "decode",
        Command::Flow(_) => "flow",
        Command::Analyze(a) => match a {
            Analyze::Invariance { .. } => "analyze-invariance",
            Analyze::Ablation { .. } => "analyze-ablation",
            Analyze::Sweep { .. } => "analyze-sweep",
            Analyze::Hist { .. } => "analyze-hist",
            Analyze::IndexMap { .. } => "analyze-index-map",
        },
        Command::ModelInfo { .. } => "model-info",
        Command::Trace { .. } => "trace",
    }
}

fn command_seed(cmd: &Command) -> Option<u64> {
    match cmd {
        Command::Fit { train, .. } => Some(train.seed),
        Command::Finetune { seed, .. } | Command::Trace { seed, .. } => Some(*seed),
        Command::Flow(f) => Some(f.seed),
        Command::Analyze(Analyze::Invariance { train, .. } | Analyze::Sweep { train, .. }) => {
            Some(train.seed)
        }
        _ => None,
    }
}

/// Runs the command inside a fresh run directory. The directory is removed
/// when the command fails, so failed runs leave no outputs behind.
pub fn execute(cli: &Cli, argv: Vec<String>) -> Result<PathBuf, Failure> {
    let mut run = RunDir::create(
        &cli.runs_dir,
        command_name(&cli.command),
        argv,
        command_seed(&cli.command),
    )?;
    let result = dispatch(cli, &mut run);
    match result {
        Ok(()) => Ok(run.finish()?),
        Err(e) => {
            let _ = std::fs::remove_dir_all(run.path());
            Err(e)
        }
    }
}

fn dispatch(cli: &Cli, run: &mut RunDir) -> Outcome {
    match &cli.command {
        Command::Fit {
            image,
            mode,
            out,
            f16,
            grid,
            train,
        } => fit(cli, run, image, mode, out, *f16, grid, train),
        Command::Finetune {
            model,
            image,
            freeze_decoder,
            steps,
            seed,
            out,
        } => finetune(cli, run, model, image, *freeze_decoder, *steps, *seed, out),
        Command::Decode {
            model,
            out,
            width,
            height,
        } => decode(run, model, out, *width, *height),
        Command::Flow(args) => flow_cmd(cli, run, args),
        Command::Analyze(a) => analyze(cli, run, a),
        Command::ModelInfo { model } => model_info(run, model),
        Command::Trace {
            k,
            values,
            vertices,
            samples,
            seed,
        } => trace(run, *k, values, *vertices, *samples, *seed),
    }
}

fn grid_config(g: &GridArgs) -> Result<GridConfig, Failure> {
    let cfg = GridConfig {
        levels: g.levels,
        table_size: g.table_size,
        features_per_level: g.features,
        n_min: g.n_min,
        n_max: g.n_max,
        k: g.k,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn train_config(cli: &Cli, t: &TrainArgs, mode: TrainMode) -> Result<TrainConfig, Failure> {
    let cfg = TrainConfig {
        steps: t.steps,
        batch_pixels: t.batch,
        lr_tables: t.lr_tables,
        lr_decoder: t.lr_decoder,
        seed: t.seed,
        mode,
        hidden: t.hidden,
        threads: cli.threads,
        ordered_reduction: !t.unordered,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_image(run: &mut RunDir, path: &Path) -> Result<ImageBuffer, Failure> {
    run.input(path)?;
    ImageBuffer::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(Failure::Runtime)
}

fn load_model(run: &mut RunDir, path: &Path) -> Result<HashField<f32>, Failure> {
    run.input(path)?;
    format::read::<f32>(path)
        .with_context(|| format!("reading model {}", path.display()))
        .map_err(Failure::Runtime)
}

fn save_model(
    run: &mut RunDir,
    field: &HashField<f32>,
    path: &Path,
    precision: Precision,
) -> Outcome {
    write_atomic(path, &format::serialize(field, precision))?;
    run.output(path);
    Ok(())
}

fn save_image(run: &mut RunDir, img: &ImageBuffer, name: &str) -> Outcome {
    let p = run.file(name);
    img.save(&p)?;
    Ok(())
}

fn indexed_path(base: &Path, i: usize) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}-{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{i}"),
    };
    base.with_file_name(name)
}

#[allow(clippy::too_many_arguments)]
fn fit(
    cli: &Cli,
    run: &mut RunDir,
    images: &[PathBuf],
    mode: &str,
    out: &Path,
    f16: bool,
    grid: &GridArgs,
    targs: &TrainArgs,
) -> Outcome {
    let mode: TrainMode = mode.parse().map_err(usage)?;
    if !matches!(mode, TrainMode::PerImage | TrainMode::SharedDecoder) {
        return Err(usage("fit --mode takes per-image or shared-decoder"));
    }
    if mode == TrainMode::PerImage && images.len() != 1 {
        return Err(usage("per-image mode takes exactly one --image"));
    }
    let gcfg = grid_config(grid)?;
    let tcfg = train_config(cli, targs, mode)?;
    run.set_config(&json!({"grid": gcfg, "train": tcfg, "f16": f16}))?;
    let bufs = images
        .iter()
        .map(|p| load_image(run, p))
        .collect::<Result<Vec<_>, _>>()?;
    if bufs.iter().any(|b| b.width() != b.height()) {
        run.note("non-square input: normalized coordinates span [0,1] on each axis independently");
    }
    let (grids, decoder, report) = train::fit_shared_decoder::<f32>(&bufs, gcfg, tcfg)?;
    let precision = if f16 { Precision::F16 } else { Precision::F32 };
    for (i, (g, img)) in grids.into_iter().zip(&bufs).enumerate() {
        let field = HashField::new(g, decoder.clone())?;
        let path = if bufs.len() == 1 {
            out.to_path_buf()
        } else {
            indexed_path(out, i)
        };
        save_model(run, &field, &path, precision)?;
        let rec = field.render(img.width(), img.height())?;
        save_image(run, &rec, &format!("reconstruction-{i}.png"))?;
    }
    run.write_json("report.json", &report)?;
    println!(
        "final PSNR {:?} dB in {:.1}s",
        report.final_psnr, report.wall_clock_secs
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune(
    cli: &Cli,
    run: &mut RunDir,
    model: &Path,
    image: &Path,
    freeze: bool,
    steps: usize,
    seed: u64,
    out: &Path,
) -> Outcome {
    let mode = if freeze {
        TrainMode::FinetuneTablesOnly
    } else {
        TrainMode::FinetuneJoint
    };
    let cfg = TrainConfig {
        steps,
        seed,
        mode,
        threads: cli.threads,
        ..TrainConfig::finetune()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let field = load_model(run, model)?;
    let img = load_image(run, image)?;
    let cfg = TrainConfig {
        hidden: field.decoder.hidden(),
        ..cfg
    };
    run.set_config(&json!({"grid": field.grid.config(), "train": cfg}))?;
    let (g, d, report) = train::finetune(&field.grid, &field.decoder, &img, cfg)?;
    let tuned = HashField::new(g, d)?;
    save_model(run, &tuned, out, Precision::F32)?;
    save_image(
        run,
        &tuned.render(img.width(), img.height())?,
        "reconstruction.png",
    )?;
    run.write_json("report.json", &report)?;
    println!(
        "PSNR {:.2} -> {:.2} dB",
        report.initial_psnr[0], report.final_psnr[0]
    );
    Ok(())
}

fn decode(
    run: &mut RunDir,
    model: &Path,
    out: &Path,
    width: Option<usize>,
    height: Option<usize>,
) -> Outcome {
    let field = load_model(run, model)?;
    let n = field.grid.config().n_max as usize;
    let (w, h) = (width.unwrap_or(n), height.unwrap_or(n));
    run.set_config(&json!({"width": w, "height": h, "grid": field.grid.config()}))?;
    let img = field.render(w, h)?;
    img.save(out)?;
    run.output(out);
    Ok(())
}

fn parse_pair(s: &str, what: &str) -> Result<[f64; 2], Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(usage(format!("{what} must look like \"dx,dy\", got {s:?}")));
    }
    let p = |t: &str| {
        t.parse::<f64>()
            .map_err(|_| usage(format!("bad number {t:?} in {what}")))
    };
    Ok([p(parts[0])?, p(parts[1])?])
}

fn flow_modes(mode: &str) -> Result<Vec<FlowMode>, Failure> {
    if mode == "all" {
        Ok(FlowMode::ALL.to_vec())
    } else {
        Ok(vec![mode.parse().map_err(usage)?])
    }
}

fn flow_cmd(cli: &Cli, run: &mut RunDir, args: &FlowArgs) -> Outcome {
    let modes = flow_modes(&args.mode)?;
    let mut truth = args
        .truth
        .as_deref()
        .map(|t| parse_pair(t, "--truth"))
        .transpose()?;
    let fcfg = FlowConfig {
        steps: args.steps,
        step_px: args.step_px,
        margin: args.margin,
        samples: args.samples,
        ..FlowConfig::default()
    };
    if fcfg.steps == 0 || !(fcfg.step_px > 0.0) || fcfg.samples == 0 {
        return Err(usage("--steps, --step-px and --samples must be positive"));
    }
    run.set_config(&json!({"flow": fcfg, "args": args}))?;

    let (a, b, w, h) = if let Some(image) = &args.image {
        let s = parse_pair(args.shift.as_deref().unwrap_or_default(), "--shift")?;
        if s.iter().any(|v| v.fract() != 0.0) {
            return Err(usage("--shift components must be integers"));
        }
        let shift = [s[0] as i32, s[1] as i32];
        let img = load_image(run, image)?;
        let (ia, ib, t) = flow::synth_translation_pair(&img, shift)?;
        truth.get_or_insert(t);
        let gcfg = GridConfig::default().with_k(args.k.unwrap_or(1));
        let tcfg = TrainConfig {
            steps: args.fit_steps,
            seed: args.seed,
            mode: TrainMode::SharedDecoder,
            threads: cli.threads,
            ..TrainConfig::default()
        };
        tcfg.validate().map_err(|e| usage(e.to_string()))?;
        let (mut grids, dec, report) = train::fit_shared_decoder::<f32>(&[ia, ib], gcfg, tcfg)?;
        run.write_json("fit_report.json", &report)?;
        let gb = grids.pop().unwrap();
        let ga = grids.pop().unwrap();
        let fa = HashField::new(ga, dec.clone())?;
        let fb = HashField::new(gb, dec)?;
        let pa = run.file("model_a.hshf");
        let pb = run.file("model_b.hshf");
        write_atomic(&pa, &format::serialize(&fa, Precision::F32))?;
        write_atomic(&pb, &format::serialize(&fb, Precision::F32))?;
        (fa, fb, img.width(), img.height())
    } else {
        let (Some(ma), Some(mb)) = (&args.model_a, &args.model_b) else {
            return Err(usage(
                "flow needs --model-a and --model-b, or --image and --shift",
            ));
        };
        let fa = load_model(run, ma)?;
        let fb = load_model(run, mb)?;
        if fa.grid.config() != fb.grid.config() {
            return Err(anyhow!("models differ in grid configuration").into());
        }
        if let Some(k) = args.k {
            if k != fa.grid.config().k {
                return Err(anyhow!(
                    "--k {k} does not match the models' k = {}",
                    fa.grid.config().k
                )
                .into());
            }
        }
        let n = fa.grid.config().n_max as usize;
        (fa, fb, args.width.unwrap_or(n), args.height.unwrap_or(n))
    };

    let samples = flow::sample_pixels(w, h, fcfg.samples, fcfg.margin, args.seed)?;
    let mut estimates = Vec::new();
    for mode in modes {
        let est = flow::solve_flow(&FlowProblem {
            a: FieldRef {
                grid: &a.grid,
                decoder: &a.decoder,
            },
            b: FieldRef {
                grid: &b.grid,
                decoder: &b.decoder,
            },
            width: w,
            height: h,
            samples: samples.clone(),
            mode,
            config: fcfg.clone(),
            truth,
        })?;
        let mean_d = mean_displacement(&est.displacements);
        println!(
            "{mode:?}: mean displacement ({:.3}, {:.3}) px, mean EPE {}, failures {}",
            mean_d[0],
            mean_d[1],
            est.mean_epe.map_or("n/a".into(), |e| format!("{e:.4}")),
            est.failures
        );
        if args.vis {
            let vis = flow::flow_visualization(&est, w, h)?;
            save_image(run, &vis, &format!("flow-{mode:?}.png").to_lowercase())?;
        }
        estimates.push(est);
    }
    run.write_json(
        "flow.json",
        &json!({"truth": truth, "width": w, "height": h, "estimates": estimates}),
    )?;
    Ok(())
}

fn mean_displacement(d: &[[f64; 2]]) -> [f64; 2] {
    let kept: Vec<_> = d.iter().filter(|v| v[0].is_finite()).collect();
    let n = kept.len().max(1) as f64;
    [
        kept.iter().map(|v| v[0]).sum::<f64>() / n,
        kept.iter().map(|v| v[1]).sum::<f64>() / n,
    ]
}

fn analyze(cli: &Cli, run: &mut RunDir, a: &Analyze) -> Outcome {
    match a {
        Analyze::Invariance {
            image,
            shifts,
            channels,
            grid,
            train,
        } => {
            let gcfg = grid_config(grid)?;
            let tcfg = train_config(cli, train, TrainMode::SharedDecoder)?;
            if let Some(c) = channels.iter().find(|&&c| c >= gcfg.input_dim()) {
                return Err(usage(format!(
                    "channel {c} out of range for {} features",
                    gcfg.input_dim()
                )));
            }
            if shifts
                .iter()
                .any(|s| s.abs() > analysis::MAX_INVARIANCE_SHIFT)
            {
                return Err(usage("invariance shifts must lie in [-80, 80]"));
            }
            run.set_config(
                &json!({"grid": gcfg, "train": tcfg, "shifts": shifts, "channels": channels}),
            )?;
            run.note("heatmaps: blue-white-red, normalized per channel over the joint range of both panels; masked strip black");
            let img = load_image(run, image)?;
            let (result, grids, _) = analysis::translation_invariance(&img, shifts, gcfg, tcfg)?;
            for w in result.results.iter().flat_map(|r| &r.warnings) {
                run.note(w.clone());
            }
            let mut distinct: Vec<i32> = shifts.iter().copied().filter(|&s| s != 0).collect();
            distinct.sort_unstable();
            distinct.dedup();
            for (i, &s) in distinct.iter().enumerate() {
                for &c in channels {
                    let [ha, hb] = analysis::feature_heatmaps(
                        &grids[0],
                        &grids[i + 1],
                        s,
                        c,
                        img.width(),
                        img.height(),
                    )?;
                    save_image(run, &ha, &format!("heat-r{s}-c{c}-reference.png"))?;
                    save_image(run, &hb, &format!("heat-r{s}-c{c}-shifted.png"))?;
                }
            }
            let mut text = String::from("shift  rho    coarse  relative divergence per level\n");
            for r in &result.results {
                let rel: Vec<String> = r
                    .levels
                    .iter()
                    .map(|l| format!("{:.3}", l.relative))
                    .collect();
                let _ = writeln!(
                    text,
                    "{:>5}  {:>5.2}  {:>6.3}  {}",
                    r.shift,
                    r.spearman,
                    r.coarse_relative(),
                    rel.join(" ")
                );
            }
            print!("{text}");
            run.write_json("invariance.json", &result)?;
        }
        Analyze::Ablation { model, image } => {
            let field = load_model(run, model)?;
            let img = load_image(run, image)?;
            run.set_config(&json!({"grid": field.grid.config()}))?;
            let r = layer_ablation(&field, &img)?;
            let (dense, hashed) = analysis::ablation_masks(field.grid.config())?;
            let (w, h) = (img.width(), img.height());
            save_image(run, &field.render(w, h)?, "full.png")?;
            let d = hashenc::model::render(&field.grid, &field.decoder, w, h, Some(&dense))?;
            save_image(run, &d, "dense-only.png")?;
            let hs = hashenc::model::render(&field.grid, &field.decoder, w, h, Some(&hashed))?;
            save_image(run, &hs, "hashed-only.png")?;
            println!(
                "full {:.2} dB, dense-only {:.2} dB, hashed-only {:.2} dB",
                r.full_psnr, r.dense_only_psnr, r.hashed_only_psnr
            );
            run.write_json("ablation.json", &r)?;
        }
        Analyze::Sweep {
            image,
            min_exp,
            max_exp,
            grid,
            train,
        } => {
            if min_exp > max_exp || *max_exp > 30 {
                return Err(usage("need --min-exp <= --max-exp <= 30"));
            }
            let gcfg = grid_config(grid)?;
            let tcfg = train_config(cli, train, TrainMode::PerImage)?;
            let sizes = analysis::power_of_two_sizes(*min_exp, *max_exp);
            run.set_config(&json!({"grid": gcfg, "train": tcfg, "sizes": sizes}))?;
            let img = load_image(run, image)?;
            let points = analysis::table_size_sweep(&img, &sizes, gcfg, tcfg)?;
            for p in &points {
                println!(
                    "T = 2^{:<2} PSNR {:.2} dB, {} dense levels, {} table bytes (f32)",
                    p.table_size.trailing_zeros(),
                    p.psnr,
                    p.dense_levels,
                    p.payload.table_bytes_f32
                );
            }
            let curve: Vec<(f64, f64)> = points
                .iter()
                .map(|p| (f64::from(p.table_size.trailing_zeros()), p.psnr))
                .collect();
            save_image(run, &plot(&curve, 320, 200)?, "psnr-vs-table-size.png")?;
            run.write_json("sweep.json", &points)?;
        }
        Analyze::Hist { model } => {
            let fields = model
                .iter()
                .map(|p| load_model(run, p))
                .collect::<Result<Vec<_>, _>>()?;
            if fields.len() < 20 {
                run.note(format!(
                    "{} models pooled; the entry-statistics protocol uses at least 20",
                    fields.len()
                ));
            }
            let grids: Vec<_> = fields.iter().map(|f| &f.grid).collect();
            let hist = entry_histograms(&grids)?;
            for h in &hist {
                println!(
                    "level {:>2}: n {:>7} mean {:+.3e} std {:.3e} skew {:+.3}",
                    h.level, h.count, h.mean, h.std, h.skewness
                );
                save_image(
                    run,
                    &histogram_image(h, 256, 128)?,
                    &format!("hist-level-{:02}.png", h.level),
                )?;
            }
            run.write_json("histograms.json", &hist)?;
        }
        Analyze::IndexMap { level, grid } => {
            let gcfg = grid_config(grid)?;
            if *level >= gcfg.levels {
                return Err(usage(format!("--level must be below {}", gcfg.levels)));
            }
            let geom: LevelGeometry = gcfg.resolution_schedule()?[*level];
            let map = geom.index_map();
            let gray = map.to_gray();
            let scale = 8usize.div_ceil(map.side).max(1);
            let side = map.side * scale;
            let img = ImageBuffer::from_fn(side, side, |c, r| {
                let v = f32::from(gray[(r / scale) * map.side + c / scale]) / 255.0;
                [v, v, v]
            })?;
            save_image(run, &img, &format!("index-map-level-{level:02}.png"))?;
            let offsets = map.repeat_offsets(map.side.min(128) - 1);
            run.set_config(&json!({"grid": gcfg, "level": level}))?;
            println!(
                "level {level}: N = {}, {} vertices, {} distinct entries, injective {}",
                geom.resolution,
                map.entries.len(),
                map.distinct(),
                map.is_injective()
            );
            run.write_json(
                "index-map.json",
                &json!({
                    "level": level,
                    "resolution": geom.resolution,
                    "dense": geom.dense,
                    "side": map.side,
                    "distinct": map.distinct(),
                    "injective": map.is_injective(),
                    "repeat_offsets": offsets.iter().take(8).map(|o| json!({"di": o.di, "dj": o.dj, "match_fraction": o.match_fraction})).collect::<Vec<_>>(),
                    "entries": map.entries,
                }),
            )?;
        }
    }
    Ok(())
}

fn model_info(run: &mut RunDir, model: &Path) -> Outcome {
    let field = load_model(run, model)?;
    let cfg = *field.grid.config();
    let sizes = payload_sizes(&cfg, field.decoder.hidden());
    let levels: Vec<_> = cfg
        .resolution_schedule()?
        .iter()
        .map(|l| json!({"level": l.level, "resolution": l.resolution, "dense": l.dense}))
        .collect();
    let info = json!({
        "config": cfg,
        "hidden": field.decoder.hidden(),
        "table_values": cfg.table_len(),
        "decoder_params": field.decoder.size(),
        "payload": sizes,
        "levels": levels,
    });
    println!("{}", serde_json::to_string_pretty(&info)?);
    run.write_json("model-info.json", &info)?;
    Ok(())
}

fn trace(
    run: &mut RunDir,
    k: usize,
    values: &[f64],
    vertices: usize,
    samples: usize,
    seed: u64,
) -> Outcome {
    let values = if values.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..vertices).map(|_| rng.random_range(-1.0..1.0)).collect()
    } else {
        values.to_vec()
    };
    if values.len() < 2 * k || samples < 2 {
        return Err(usage(format!(
            "need at least {} values and 2 samples for k = {k}",
            2 * k
        )));
    }
    run.set_config(&json!({"k": k, "values": values, "samples": samples}))?;
    let rows = trace_1d(&values, k, samples).map_err(|e| usage(e.to_string()))?;
    let mut csv = String::from("u,value,derivative\n");
    for (u, v, d) in rows {
        let _ = writeln!(csv, "{u},{v},{d}");
    }
    let p = run.file("trace.csv");
    write_atomic(&p, csv.as_bytes())?;
    Ok(())
}

/// Polyline of `(x, y)` points on white, axes scaled to the data range.
fn plot(points: &[(f64, f64)], width: usize, height: usize) -> hashenc::Result<ImageBuffer> {
    let (x0, x1) = range(points.iter().map(|p| p.0));
    let (y0, y1) = range(points.iter().map(|p| p.1));
    let pad = 12.0;
    let to_px = |(x, y): (f64, f64)| {
        (
            pad + (x - x0) / (x1 - x0) * (width as f64 - 2.0 * pad),
            height as f64 - pad - (y - y0) / (y1 - y0) * (height as f64 - 2.0 * pad),
        )
    };
    let mut data = vec![1.0f32; width * height * 3];
    let mut dot = |x: f64, y: f64, r: i64| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (c, row) = (x.round() as i64 + dx, y.round() as i64 + dy);
                if (0..width as i64).contains(&c) && (0..height as i64).contains(&row) {
                    let i = (row as usize * width + c as usize) * 3;
                    data[i..i + 3].copy_from_slice(&[0.1, 0.2, 0.7]);
                }
            }
        }
    };
    for w in points.windows(2) {
        let (a, b) = (to_px(w[0]), to_px(w[1]));
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) as usize).max(1);
        for s in 0..=n {
            let t = s as f64 / n as f64;
            dot(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), 0);
        }
    }
    for &p in points {
        let (x, y) = to_px(p);
        dot(x, y, 2);
    }
    ImageBuffer::new(width, height, data)
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}
