//! Public-API round trip: preprocess, train, persist, encode, extract, score,
//! then train and sample a latent cascade.

use hiervec_core::diffusion::{sample_cascade, train_cascade, DiffusionTrainConfig, NoiseScheduleEDM, SigmaSampler, TrainedStage};
use hiervec_core::geometry::primitives::primitive_suite;
use hiervec_core::geometry::{preprocess_mesh, read_shard, write_shard, PreprocessConfig};
use hiervec_core::recon::{extract_mesh, ExtractConfig, MetricReport};
use hiervec_core::training::{encoder_input, AutoencoderTrainer, OptimConfig, TrainConfig, TrainedAutoencoder};
use hiervec_core::vecset::{LevelConfig, ModelConfig};
use hiervec_core::{Checkpoint, LatentSet, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn train_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig { heads: 2, mlp_ratio: 2, pe_width: 12, ..ModelConfig::new(16, vec![LevelConfig::new(16, 4, 1), LevelConfig::new(4, 8, 1)]) },
        optim: OptimConfig { lr: 1e-3, warmup_steps: 2, decay_steps: 20, ..Default::default() },
        steps: 20,
        shapes_per_step: 2,
        queries_per_shape: 64,
        input_points: 64,
        seed: 1,
        checkpoint_every: 0,
        log_every: 0,
    }
}

#[test]
fn shapes_survive_the_whole_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let pre = PreprocessConfig { surface_points: 256, vol_points: 512, near_base_points: 256, augment: false, seed: 0 };
    let suite = primitive_suite();
    let shapes: Vec<_> = suite.iter().enumerate().map(|(i, (name, mesh))| preprocess_mesh(name, mesh, &pre, i as u64).unwrap().0).collect();
    let shard = dir.path().join("train.shard");
    write_shard(&shapes, &shard).unwrap();
    let shapes = read_shard(&shard).unwrap();
    assert_eq!(shapes.len(), 8);

    let mut trainer = AutoencoderTrainer::new(train_config()).unwrap();
    let trace = trainer.fit(&shapes, |_, _| {}).unwrap();
    assert!(trace.iter().all(|l| l.total.is_finite()));
    let ckpt_path = dir.path().join("ae.ckpt");
    trainer.checkpoint().save(&ckpt_path).unwrap();
    let model = TrainedAutoencoder::from_checkpoint(&Checkpoint::load(&ckpt_path).unwrap()).unwrap();

    let mut set = LatentSet::default();
    for shape in &shapes {
        let input = encoder_input::<ChaCha8Rng>(shape, 64, None).unwrap();
        set.push(shape.name.clone(), model.encode(&input).unwrap(), vec![]);
    }
    let latent_path = dir.path().join("latents.bin");
    set.save(&latent_path).unwrap();
    let set = LatentSet::load(&latent_path).unwrap();
    assert_eq!(set.num_levels(), 2);
    assert_eq!(set.hierarchies[0].levels[0].dim(), (16, 4));

    let extract = ExtractConfig { resolution: 16, coarse_resolution: 8, ..Default::default() };
    let (mesh, report) = extract_mesh(&model, &set.hierarchies[0], &extract).unwrap();
    assert!(report.evaluated_points <= report.grid_points);
    if !mesh.triangles.is_empty() {
        let reference = &suite.iter().find(|(n, _)| *n == set.names[0]).unwrap().1;
        let metrics = MetricReport::from_meshes(&set.names[0], &mesh, reference, 500, 0.02, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(metrics.chamfer_x100.is_finite() && (0.0..=100.0).contains(&metrics.fscore_x100));
    }

    let levels = [LevelConfig::new(16, 4, 1), LevelConfig::new(4, 8, 1)];
    let diffusion = DiffusionTrainConfig {
        optim: OptimConfig { lr: 1e-3, warmup_steps: 2, decay_steps: 10, weight_decay: 0.0, ..Default::default() },
        sigma: SigmaSampler::default(),
        steps: 10,
        batch: 4,
        seed: 0,
        width: 16,
        blocks: 1,
        cond_dim: 0,
    };
    let stages = train_cascade(&set.records(), &levels, &diffusion, |_, _, _| {}).unwrap();
    let stages: Vec<TrainedStage> = stages.iter().map(|s| TrainedStage::from_checkpoint(&Checkpoint::from_bytes(&s.checkpoint().to_bytes().unwrap()).unwrap()).unwrap()).collect();
    let schedule = NoiseScheduleEDM { steps: 4, ..Default::default() };
    let coarse = set.hierarchies[3].levels[1].clone();
    let fixed: Vec<Option<Mat<f32>>> = vec![None, Some(coarse.clone())];
    let a = sample_cascade(&stages, &schedule, &[], 9, &fixed).unwrap();
    let b = sample_cascade(&stages, &schedule, &[], 9, &fixed).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.levels[1], coarse);
    assert!(a.levels[0].iter().all(|v| v.is_finite()));
}
