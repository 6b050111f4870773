//! Diagnostic trainer: per-epoch dice/temporal term breakdown, optional
//! dice-only loss. Usage: calib2 [epochs] [eval_every] [dice-only]

use cardio4d::data::manifest::{generate_dataset, DatasetConfig, Manifest, Split};
use cardio4d::data::CropSampler;
use cardio4d::metrics::{evaluate, ModelPredictor};
use cardio4d::model::{build, NetConfig};
use cardio4d::train::{lr_schedule, Adam, TrainConfig};
use cardio4d::tape::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let every: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let dice_only = args.iter().any(|a| a == "dice-only");

    let dir = tempfile::tempdir().unwrap();
    generate_dataset(dir.path(), &DatasetConfig::default()).unwrap();
    let manifest = Manifest::load(&dir.path().join("manifest.toml")).unwrap();
    let train_seqs = manifest.load_split(Split::Train).unwrap();
    let val_seqs = manifest.load_split(Split::Validation).unwrap();

    let net = NetConfig::desk_4d();
    let mut params = build::<f32>(&net, 42).unwrap();
    let tc = TrainConfig { epochs, ..TrainConfig::default() };

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
        let (mut dsum, mut tsum) = (0.0, 0.0);
        for &i in &order {
            let sample = samplers[i].sample::<f32>(net.crop, tc.fg_prob, &mut rng).unwrap();
            let mut tape = Tape::new();
            let x = tape.leaf(sample.input.clone(), false);
            let vars = params.bind(&mut tape);
            let probs = vars.forward(&mut tape, x).unwrap();
            let dice = tape.sparse_dice(probs, &sample.target, tc.dice_eps).unwrap();
            let temporal = tape.temporal_consistency(probs, tc.temporal_norm).unwrap();
            dsum += tape.value(dice).data()[0] as f64;
            tsum += tape.value(temporal).data()[0] as f64;
            let loss =
                if dice_only { dice } else { tape.add(dice, temporal).unwrap() };
            tape.backward(loss).unwrap();
            let leaves = vars.trainable();
            let grads: Vec<Vec<f32>> = leaves
                .iter()
                .map(|&l| {
                    tape.take_grad(l)
                        .unwrap_or_else(|| vec![0.0; tape.value(l).numel()])
                })
                .collect();
            let mut slots = params.visit_mut();
            adam.step(&mut slots, &grads, lr).unwrap();
        }
        if (epoch + 1) % every == 0 || epoch + 1 == epochs {
            let rep = evaluate(&ModelPredictor(&params), &val_seqs).unwrap();
            println!(
                "epoch {:3}: dice {:.3} temporal {:.3} | val lv {:.4} lvm {:.4} fg {:.4}  [{:.0?}]",
                epoch,
                dsum / samplers.len() as f64,
                tsum / samplers.len() as f64,
                rep.mean_dice_lv,
                rep.mean_dice_lvm,
                0.5 * (rep.mean_dice_lv + rep.mean_dice_lvm),
                t0.elapsed()
            );
        }
    }
}
