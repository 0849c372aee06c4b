//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hiervec_core::checkpoint::Checkpoint;
use hiervec_core::diffusion::{sample_cascade, train_cascade, NoiseScheduleEDM, TrainedStage};
use hiervec_core::geometry::primitives::primitive_suite;
use hiervec_core::geometry::{preprocess_mesh, read_shard, write_shard, PreprocessConfig, SampledShape, TriangleMesh};
use hiervec_core::recon::{self, summary_table, write_reports, ExtractConfig, MetricReport};
use hiervec_core::training::{encoder_input, AutoencoderTrainer, TrainedAutoencoder};
use hiervec_core::vecset::{attention_cost_account, LevelConfig, ModelConfig};
use hiervec_core::{Error, LatentSet, Mat, Result};

use crate::config;
use crate::{
    AnalyzeArgs, Cli, Command, CostReportArgs, EncodeArgs, EvalArgs, ExtractArgs, PreprocessArgs, ReconstructArgs, SampleArgs, TrainAeArgs,
    TrainDiffArgs, WritePrimitivesArgs,
};

struct Ctx<'a> {
    workdir: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn create_parent(&self, p: &Path) -> Result<PathBuf> {
        let full = self.path(p);
        if let Some(dir) = full.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(full)
    }

    fn create_dir(&self, p: &Path) -> Result<PathBuf> {
        let full = self.path(p);
        fs::create_dir_all(&full)?;
        Ok(full)
    }

    fn shards(&self, paths: &[PathBuf]) -> Result<Vec<SampledShape>> {
        let mut out = Vec::new();
        for p in paths {
            out.extend(read_shard(&self.path(p))?);
        }
        if out.is_empty() {
            return Err(Error::Format("shards hold no shapes".into()));
        }
        Ok(out)
    }

    fn autoencoder(&self, p: &Path) -> Result<(TrainedAutoencoder, Checkpoint)> {
        let ckpt = Checkpoint::load(&self.path(p))?;
        Ok((TrainedAutoencoder::from_checkpoint(&ckpt)?, ckpt))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx { workdir: &cli.workdir };
    match &cli.command {
        Command::WritePrimitives(a) => write_primitives(&ctx, a),
        Command::Preprocess(a) => preprocess(&ctx, a),
        Command::TrainAe(a) => train_ae(&ctx, a),
        Command::Encode(a) => encode(&ctx, a),
        Command::Reconstruct(a) => reconstruct(&ctx, a),
        Command::TrainDiff(a) => train_diff(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
        Command::CostReport(a) => cost_report(&ctx, a),
    }
}

/// Mesh files of a directory in name order.
fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("obj") || e.eq_ignore_ascii_case("off")))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn write_primitives(ctx: &Ctx, a: &WritePrimitivesArgs) -> Result<()> {
    let dir = ctx.create_dir(&a.out)?;
    let suite = primitive_suite();
    for (name, mesh) in &suite {
        mesh.write_obj(&dir.join(format!("{name}.obj")))?;
    }
    println!("wrote {} meshes to {}", suite.len(), dir.display());
    Ok(())
}

fn preprocess(ctx: &Ctx, a: &PreprocessArgs) -> Result<()> {
    let mut cfg: PreprocessConfig = config::load_or(a.config.as_ref().map(|p| ctx.path(p)).as_deref(), PreprocessConfig::default)?;
    cfg.seed = a.seed;
    if let Some(v) = a.surface_points {
        cfg.surface_points = v;
    }
    if let Some(v) = a.vol_points {
        cfg.vol_points = v;
    }
    if let Some(v) = a.near_base_points {
        cfg.near_base_points = v;
    }
    if let Some(v) = a.augment {
        cfg.augment = v;
    }
    cfg.validate()?;
    let files = mesh_files(&ctx.path(&a.meshes))?;
    let mut shapes = Vec::new();
    let mut reports = String::new();
    let mut failures = 0;
    for (i, file) in files.iter().enumerate() {
        let name = stem(file);
        let result = TriangleMesh::load(file).and_then(|m| preprocess_mesh(&name, &m, &cfg, i as u64));
        match result {
            Ok((shape, report)) => {
                println!(
                    "{name}: {} triangles, {} of {} volume queries inside, {} unreliable labels{}",
                    report.triangles,
                    report.vol_positive,
                    shape.vol_queries.len(),
                    report.unreliable_labels,
                    if report.watertight { "" } else { ", not watertight" }
                );
                reports.push_str(&serde_json::to_string(&report)?);
                reports.push('\n');
                shapes.push(shape);
            }
            Err(e) => {
                log::error!("{}: {e}", file.display());
                failures += 1;
            }
        }
    }
    if shapes.is_empty() {
        return Err(Error::Format(format!("no mesh in {} could be processed", a.meshes.display())));
    }
    let out = ctx.create_parent(&a.out)?;
    write_shard(&shapes, &out)?;
    let mut report_path = out.clone().into_os_string();
    report_path.push(".report.ndjson");
    fs::write(&report_path, reports)?;
    println!("{} shapes written to {}, {failures} failed", shapes.len(), out.display());
    Ok(())
}

fn train_ae(ctx: &Ctx, a: &TrainAeArgs) -> Result<()> {
    let mut cfg = config::load_or(a.config.as_ref().map(|p| ctx.path(p)).as_deref(), config::default_train)?;
    cfg.seed = a.seed;
    if let Some(v) = a.steps {
        cfg.steps = v;
        cfg.optim.decay_steps = v.saturating_sub(cfg.optim.warmup_steps).max(1);
    }
    if let Some(v) = a.lr {
        cfg.optim.lr = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    let shapes = ctx.shards(&a.shards)?;
    let mut trainer = match &a.resume {
        Some(p) => AutoencoderTrainer::resume(cfg, &Checkpoint::load(&ctx.path(p))?)?,
        None => AutoencoderTrainer::new(cfg)?,
    };
    let out = ctx.create_parent(&a.out)?;
    let start = trainer.step();
    let result = trainer.fit_with_checkpoints(&shapes, |_, _| {}, |c| c.save(&out));
    let trace = match result {
        Ok(t) => t,
        Err(Error::NonFiniteLoss { step, snapshot }) => {
            let dump = out.with_extension("diverged");
            snapshot.save(&dump)?;
            return Err(Error::NonFiniteLoss { step, snapshot }).inspect_err(|_| eprintln!("parameters before the failing step saved to {}", dump.display()));
        }
        Err(e) => return Err(e),
    };
    trainer.checkpoint().save(&out)?;
    let last = trace.last().map_or(f64::NAN, |l| l.total);
    println!("trained steps {start}..{} on {} shapes, final loss {last:.5}, checkpoint {}", trainer.step(), shapes.len(), out.display());
    Ok(())
}

fn input_points(ckpt: &Checkpoint, flag: Option<usize>) -> usize {
    flag.or_else(|| ckpt.meta["input_points"].as_u64().map(|v| v as usize)).unwrap_or(512)
}

fn encode(ctx: &Ctx, a: &EncodeArgs) -> Result<()> {
    let (model, ckpt) = ctx.autoencoder(&a.model)?;
    let n = input_points(&ckpt, a.input_points);
    let mut set = LatentSet::default();
    for shape in ctx.shards(&a.shards)? {
        let input = encoder_input::<ChaCha8Rng>(&shape, n, None)?;
        set.push(shape.name.clone(), model.encode(&input)?, Vec::new());
    }
    let out = ctx.create_parent(&a.out)?;
    set.save(&out)?;
    println!("encoded {} shapes into {}", set.len(), out.display());
    Ok(())
}

fn extract_config(ctx: &Ctx, a: &ExtractArgs) -> Result<ExtractConfig> {
    let mut cfg = match &a.extract_config {
        Some(p) => config::load(&ctx.path(p))?,
        None => ExtractConfig::with_resolution(a.resolution.unwrap_or(128)),
    };
    if let Some(r) = a.resolution {
        cfg.resolution = r;
        if a.coarse_resolution.is_none() && cfg.resolution % cfg.coarse_resolution != 0 {
            cfg.coarse_resolution = ExtractConfig::with_resolution(r).coarse_resolution;
        }
    }
    if let Some(c) = a.coarse_resolution {
        cfg.coarse_resolution = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn reconstruct(ctx: &Ctx, a: &ReconstructArgs) -> Result<()> {
    let (model, _) = ctx.autoencoder(&a.model)?;
    let set = LatentSet::load(&ctx.path(&a.latents))?;
    let cfg = extract_config(ctx, &a.extract)?;
    let dir = ctx.create_dir(&a.out_dir)?;
    for (name, latents) in set.names.iter().zip(&set.hierarchies) {
        let (mesh, report) = recon::extract_mesh(&model, latents, &cfg)?;
        if mesh.triangles.is_empty() {
            log::warn!("{name}: empty surface");
        }
        mesh.write_obj(&dir.join(format!("{name}.obj")))?;
        println!(
            "{name}: {} vertices, {} triangles, watertight {}, {} field evaluations",
            mesh.vertices.len(),
            mesh.triangles.len(),
            mesh.is_watertight(),
            report.evaluated_points
        );
    }
    Ok(())
}

fn level_configs(set: &LatentSet) -> Result<Vec<LevelConfig>> {
    let first = set.hierarchies.first().ok_or_else(|| Error::Format("latent file is empty".into()))?;
    let levels: Vec<LevelConfig> = first.levels.iter().map(|z| LevelConfig::new(z.nrows(), z.ncols(), 1)).collect();
    for (name, h) in set.names.iter().zip(&set.hierarchies) {
        if h.levels.iter().map(|z| z.dim()).ne(first.levels.iter().map(|z| z.dim())) {
            return Err(Error::Format(format!("{name}: latent shapes differ from the first entry")));
        }
    }
    Ok(levels)
}

fn train_diff(ctx: &Ctx, a: &TrainDiffArgs) -> Result<()> {
    let mut cfg = config::load_or(a.config.as_ref().map(|p| ctx.path(p)).as_deref(), config::default_diffusion)?;
    cfg.seed = a.seed;
    if let Some(v) = a.steps {
        cfg.steps = v;
        cfg.optim.decay_steps = v.saturating_sub(cfg.optim.warmup_steps).max(1);
    }
    if let Some(v) = a.lr {
        cfg.optim.lr = v;
    }
    let set = LatentSet::load(&ctx.path(&a.latents))?;
    let levels = level_configs(&set)?;
    cfg.cond_dim = set.conds.first().map_or(0, Vec::len);
    let dir = ctx.create_dir(&a.out_dir)?;
    let stages = train_cascade(&set.records(), &levels, &cfg, |level, step, loss| {
        if step % 250 == 0 {
            log::info!("level {} step {step} loss {loss:.5}", level + 1);
        }
    })?;
    for stage in &stages {
        stage.checkpoint().save(&dir.join(format!("level{}.ckpt", stage.level() + 1)))?;
    }
    println!("trained {} denoisers on {} latent sets into {}", stages.len(), set.len(), dir.display());
    Ok(())
}

fn load_stages(dir: &Path) -> Result<Vec<TrainedStage>> {
    let mut stages = Vec::new();
    loop {
        let p = dir.join(format!("level{}.ckpt", stages.len() + 1));
        if !p.exists() {
            break;
        }
        stages.push(TrainedStage::from_checkpoint(&Checkpoint::load(&p)?)?);
    }
    if stages.is_empty() {
        return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("no level1.ckpt in {}", dir.display()))));
    }
    Ok(stages)
}

fn sample(ctx: &Ctx, a: &SampleArgs) -> Result<()> {
    let stages = load_stages(&ctx.path(&a.stages))?;
    let n = stages.len();
    let mut schedule: NoiseScheduleEDM = config::load_or(a.schedule.as_ref().map(|p| ctx.path(p)).as_deref(), NoiseScheduleEDM::default)?;
    if let Some(s) = a.steps {
        schedule.steps = s;
    }
    schedule.validate()?;
    let cond_dim = stages[0].denoiser.config.cond_dim;
    let cond = if a.cond.is_empty() { vec![0.0; cond_dim] } else { a.cond.clone() };
    if cond.len() != cond_dim {
        return Err(Error::config("cond", format!("has {} values, denoisers expect {cond_dim}", cond.len())));
    }
    let mut fixed: Vec<Option<Mat<f32>>> = vec![None; n];
    if let Some(p) = &a.levels_from {
        let source = LatentSet::load(&ctx.path(p))?;
        let h = source
            .hierarchies
            .get(a.from_index)
            .ok_or_else(|| Error::config("from_index", format!("{} is past the {} entries of the latent file", a.from_index, source.len())))?;
        if h.levels.len() != n {
            return Err(Error::Format(format!("latent file has {} levels, cascade has {n}", h.levels.len())));
        }
        let freeze = if a.freeze.is_empty() { vec![n] } else { a.freeze.clone() };
        for l in freeze {
            if l == 0 || l > n {
                return Err(Error::config("freeze", format!("level {l} is outside 1..={n}")));
            }
            fixed[l - 1] = Some(h.levels[l - 1].clone());
        }
    } else if !a.freeze.is_empty() {
        return Err(Error::config("freeze", "needs --levels-from"));
    }
    if a.count == 0 {
        return Err(Error::config("count", "must be positive"));
    }
    let mut set = LatentSet::default();
    for k in 0..a.count {
        let h = sample_cascade(&stages, &schedule, &cond, a.seed.wrapping_add(k as u64), &fixed)?;
        set.push(format!("sample{k:03}"), h, cond.clone());
    }
    let out = ctx.create_parent(&a.out)?;
    set.save(&out)?;
    let frozen: Vec<usize> = fixed.iter().enumerate().filter(|(_, f)| f.is_some()).map(|(i, _)| i + 1).collect();
    println!("sampled {} hierarchies ({} steps, frozen levels {frozen:?}) into {}", a.count, schedule.steps, out.display());
    Ok(())
}

fn reference_meshes(ctx: &Ctx, dir: &Path) -> Result<Vec<(String, TriangleMesh)>> {
    let files = mesh_files(&ctx.path(dir))?;
    let mut out = Vec::new();
    for f in files {
        out.push((stem(&f), TriangleMesh::load(&f)?.normalize_unit_sphere()?));
    }
    if out.is_empty() {
        return Err(Error::Format(format!("no reference meshes in {}", dir.display())));
    }
    Ok(out)
}

fn finish_reports(ctx: &Ctx, out: &Path, reports: &[MetricReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Format("no shape could be evaluated".into()));
    }
    let path = ctx.create_parent(out)?;
    write_reports(&path, reports)?;
    print!("{}", summary_table(reports));
    println!("{} records written to {}", reports.len(), path.display());
    Ok(())
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Result<()> {
    let pred_dir = ctx.path(&a.pred);
    let mut reports = Vec::new();
    for (i, (name, reference)) in reference_meshes(ctx, &a.meshes)?.iter().enumerate() {
        let pred = pred_dir.join(format!("{name}.obj"));
        let mut rng = ChaCha8Rng::seed_from_u64(a.metric.seed.wrapping_add(i as u64));
        match TriangleMesh::load(&pred).and_then(|m| MetricReport::from_meshes(name, &m, reference, a.metric.samples, a.metric.tau, &mut rng)) {
            Ok(r) => reports.push(r),
            Err(e) => log::error!("{name}: {e}"),
        }
    }
    finish_reports(ctx, &a.out, &reports)
}

fn parse_mask(s: &str, levels: usize) -> Result<Vec<bool>> {
    if s.len() != levels || !s.chars().all(|c| c == '0' || c == '1') {
        return Err(Error::config("masks", format!("{s:?} must be {levels} characters of 0 or 1")));
    }
    Ok(s.chars().map(|c| c == '1').collect())
}

fn analyze(ctx: &Ctx, a: &AnalyzeArgs) -> Result<()> {
    let (model, ckpt) = ctx.autoencoder(&a.model)?;
    let levels = model.model.num_levels();
    let masks: Vec<String> = if a.masks.is_empty() {
        (0..=levels).map(|k| (0..levels).map(|l| if l < k { '1' } else { '0' }).collect()).collect()
    } else {
        a.masks.clone()
    };
    let parsed = masks.iter().map(|m| parse_mask(m, levels)).collect::<Result<Vec<_>>>()?;
    let cfg = extract_config(ctx, &a.extract)?;
    let n = input_points(&ckpt, a.input_points);
    let references = reference_meshes(ctx, &a.meshes)?;
    let shapes = ctx.shards(&a.shards)?;
    let mut reports = Vec::new();
    let mut means = vec![(0.0, 0usize); masks.len()];
    for (i, shape) in shapes.iter().enumerate() {
        let Some((_, reference)) = references.iter().find(|(n, _)| *n == shape.name) else {
            log::error!("{}: no reference mesh", shape.name);
            continue;
        };
        let input = encoder_input::<ChaCha8Rng>(shape, n, None)?;
        for (k, (label, mask)) in masks.iter().zip(&parsed).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(a.metric.seed.wrapping_add((i * masks.len() + k) as u64));
            let (mesh, _) = recon::latent_noise_replacement(&model, &input, mask, &cfg, &mut rng)?;
            match MetricReport::from_meshes(&format!("{}:{label}", shape.name), &mesh, reference, a.metric.samples, a.metric.tau, &mut rng) {
                Ok(r) => {
                    means[k].0 += r.chamfer_x100;
                    means[k].1 += 1;
                    reports.push(r);
                }
                Err(e) => log::error!("{} mask {label}: {e}", shape.name),
            }
        }
    }
    finish_reports(ctx, &a.out, &reports)?;
    for (label, (sum, count)) in masks.iter().zip(&means) {
        println!("mask {label}: mean chamfer_x100 {:.4} over {count} shapes", sum / (*count).max(1) as f64);
    }
    Ok(())
}

fn cost_report(ctx: &Ctx, a: &CostReportArgs) -> Result<()> {
    let ma: ModelConfig = config::load_or(a.a.as_ref().map(|p| ctx.path(p)).as_deref(), || ModelConfig::flat_baseline(a.width))?;
    let mb: ModelConfig = config::load_or(a.b.as_ref().map(|p| ctx.path(p)).as_deref(), || ModelConfig::objaverse_latents(a.width))?;
    ma.validate()?;
    mb.validate()?;
    let r = attention_cost_account(&ma, &mb, a.input_points);
    let counts = |m: &ModelConfig| m.levels.iter().map(|l| format!("{}x{}", l.latent_count, l.sa_layers)).collect::<Vec<_>>().join(" ");
    println!("{:<26} {:>16} {:>16}", "", "a", "b");
    println!("{:<26} {:>16} {:>16}", "latents x layers", counts(&ma), counts(&mb));
    println!("{:<26} {:>16} {:>16}", "self-attention pairs", r.a.self_attn_pairs, r.b.self_attn_pairs);
    println!("{:<26} {:>16} {:>16}", "encoder cross pairs", r.a.encoder_cross_pairs, r.b.encoder_cross_pairs);
    println!("{:<26} {:>16} {:>16}", "decoder cross pairs", r.a.decoder_cross_pairs, r.b.decoder_cross_pairs);
    println!("{:<26} {:>16} {:>16}", "query pairs per point", r.a.query_pairs_per_point, r.b.query_pairs_per_point);
    println!("{:<26} {:>16} {:>16}", "parameters", r.a.parameters, r.b.parameters);
    println!("self-attention pair ratio b/a: {:.4}", r.self_attn_ratio);
    println!("parameter ratio b/a: {:.4}", r.parameter_ratio);
    if let Some(p) = &a.json {
        let path = ctx.create_parent(p)?;
        fs::write(&path, serde_json::to_string_pretty(&r)?)?;
    }
    Ok(())
}
