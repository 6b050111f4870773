use cardio4d::data::manifest::{generate_dataset, DatasetConfig, Manifest, Split};
use cardio4d::data::CropSampler;
use cardio4d::metrics::{evaluate, ModelPredictor};
use cardio4d::model::{build, NetConfig};
use cardio4d::train::{train_step, Adam, TrainConfig};
use rand::SeedableRng;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig::default();
    generate_dataset(dir.path(), &cfg).unwrap();
    println!("dataset gen: {:.2?}", t0.elapsed());

    let manifest = Manifest::load(&dir.path().join("manifest.toml")).unwrap();
    let t0 = Instant::now();
    let train_seqs = manifest.load_split(Split::Train).unwrap();
    let val_seqs = manifest.load_split(Split::Validation).unwrap();
    println!("load 10 seqs: {:.2?}  (train {}, val {})", t0.elapsed(), train_seqs.len(), val_seqs.len());

    // --- desk 4D step timing ---
    let net = NetConfig::desk_4d();
    let mut params = build::<f32>(&net, 42).unwrap();
    println!("desk_4d params: {}", params.param_count());
    let sizes: Vec<usize> = params.visit().iter().map(|(_, t)| t.numel()).collect();
    let tc = TrainConfig::default();
    let mut adam = Adam::new(tc.beta1, tc.beta2, tc.adam_eps, &sizes);
    let sampler = CropSampler::new(&train_seqs[0]).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for i in 0..3 {
        let t0 = Instant::now();
        let s = sampler.sample::<f32>(net.crop, tc.fg_prob, &mut rng).unwrap();
        let ts = Instant::now();
        let b = train_step(&mut params, &mut adam, &s.input, &s.target, 1e-3, &tc).unwrap();
        println!("4d step {}: sample {:.2?} step {:.2?} loss {:.4}", i, ts - t0, ts.elapsed(), b.total);
    }

    // --- desk 3D step timing ---
    let net3 = NetConfig::desk_3d();
    let mut params3 = build::<f32>(&net3, 42).unwrap();
    println!("desk_3d params: {}", params3.param_count());
    let sizes3: Vec<usize> = params3.visit().iter().map(|(_, t)| t.numel()).collect();
    let mut adam3 = Adam::new(tc.beta1, tc.beta2, tc.adam_eps, &sizes3);
    for i in 0..3 {
        let t0 = Instant::now();
        let s = sampler.sample::<f32>(net3.crop, tc.fg_prob, &mut rng).unwrap();
        let ts = Instant::now();
        let b = train_step(&mut params3, &mut adam3, &s.input, &s.target, 1e-3, &tc).unwrap();
        println!("3d step {}: sample {:.2?} step {:.2?} loss {:.4}", i, ts - t0, ts.elapsed(), b.total);
    }

    // --- tiled inference timing (untrained weights; cost is shape-driven) ---
    let t0 = Instant::now();
    let rep = evaluate(&ModelPredictor(&params), &val_seqs[..1]).unwrap();
    println!("4d evaluate 1 seq: {:.2?} (dice_lv {:.3})", t0.elapsed(), rep.mean_dice_lv);
    let t0 = Instant::now();
    let rep3 = evaluate(&ModelPredictor(&params3), &val_seqs[..1]).unwrap();
    println!("3d evaluate 1 seq: {:.2?} (dice_lv {:.3})", t0.elapsed(), rep3.mean_dice_lv);

    // --- f64 grad-budget probe: desk_4d at a reduced window ---
    let mut p64 = build::<f64>(&net, 42).unwrap();
    let sizes64: Vec<usize> = p64.visit().iter().map(|(_, t)| t.numel()).collect();
    let mut adam64 = Adam::new(tc.beta1, tc.beta2, tc.adam_eps, &sizes64);
    let s = sampler.sample::<f64>([8, 8, 8, 4], tc.fg_prob, &mut rng).unwrap();
    let t0 = Instant::now();
    let _ = train_step(&mut p64, &mut adam64, &s.input, &s.target, 1e-3, &tc).unwrap();
    println!("desk_4d f64 step on [8,8,8,4]: {:.2?}", t0.elapsed());
}
