//! Convergence calibration: mirrors the training loop's RNG choreography but
//! evaluates validation Dice periodically, to pick the epoch budget for the
//! training smoke test. Usage: calib [epochs] [eval_every]

use cardio4d::data::manifest::{generate_dataset, DatasetConfig, Manifest, Split};
use cardio4d::data::CropSampler;
use cardio4d::metrics::{evaluate, ModelPredictor};
use cardio4d::model::{build, NetConfig};
use cardio4d::train::{lr_schedule, train_step, Adam, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let every: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);

    let dir = tempfile::tempdir().unwrap();
    generate_dataset(dir.path(), &DatasetConfig::default()).unwrap();
    let manifest = Manifest::load(&dir.path().join("manifest.toml")).unwrap();
    let train_seqs = manifest.load_split(Split::Train).unwrap();
    let val_seqs = manifest.load_split(Split::Validation).unwrap();
    println!("train {} val {}", train_seqs.len(), val_seqs.len());

    let net = NetConfig::desk_4d();
    let mut params = build::<f32>(&net, 42).unwrap();
    let tc = TrainConfig { epochs, ..TrainConfig::default() };

    let rep = evaluate(&ModelPredictor(&params), &val_seqs).unwrap();
    println!(
        "epoch  -1: dice_lv {:.4} dice_lvm {:.4} fg {:.4}",
        rep.mean_dice_lv,
        rep.mean_dice_lvm,
        0.5 * (rep.mean_dice_lv + rep.mean_dice_lvm)
    );

    let samplers: Vec<CropSampler> =
        train_seqs.iter().map(|s| CropSampler::new(s).unwrap()).collect();
    let sizes: Vec<usize> = params.visit().iter().map(|(_, t)| t.numel()).collect();
    let mut adam = Adam::new(tc.beta1, tc.beta2, tc.adam_eps, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..samplers.len()).collect();
    let t0 = Instant::now();
    for epoch in 0..epochs {
        let lr = lr_schedule(epoch, &tc).unwrap();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let sample = samplers[i].sample::<f32>(net.crop, tc.fg_prob, &mut rng).unwrap();
            let b = train_step(&mut params, &mut adam, &sample.input, &sample.target, lr, &tc)
                .unwrap();
            loss_sum += b.total;
        }
        if (epoch + 1) % every == 0 || epoch + 1 == epochs {
            let rep = evaluate(&ModelPredictor(&params), &val_seqs).unwrap();
            println!(
                "epoch {:3}: loss {:.4} dice_lv {:.4} dice_lvm {:.4} fg {:.4}  [{:.0?}]",
                epoch,
                loss_sum / samplers.len() as f64,
                rep.mean_dice_lv,
                rep.mean_dice_lvm,
                0.5 * (rep.mean_dice_lv + rep.mean_dice_lvm),
                t0.elapsed()
            );
        }
    }
}
