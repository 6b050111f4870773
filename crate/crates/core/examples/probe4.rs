//! Split timing of the two backward components for one enc-style conv.

use cardio4d::ops::conv::{self, ConvSpec};
use cardio4d::tensor::Tensor;
use std::time::Instant;

fn main() {
    let dims = [1usize, 4, 32, 32, 24, 8];
    let co = 4usize;
    let x = Tensor::<f32>::from_fn(&dims, |i| ((i * 37) % 101) as f32 * 0.013 - 0.5);
    let w = Tensor::<f32>::from_fn(&[co, dims[1], 3, 3, 3, 3], |i| {
        ((i * 53) % 97) as f32 * 0.021 - 1.0
    });
    let spec = ConvSpec::cube4([1, 1, 1, 1]);
    let y = conv::forward(&x, &w, None, &spec).unwrap();
    let go: Vec<f32> = y.data().iter().map(|v| v * 0.01).collect();
    let macs = (y.numel() * dims[1] * 81) as f64;

    let reps = 10;
    for (name, ni, nk) in [
        ("input-grad ", true, false),
        ("kernel-grad", false, true),
        ("both       ", true, true),
    ] {
        let t0 = Instant::now();
        for _ in 0..reps {
            let g = conv::backward(&x, &w, &spec, &go, ni, nk, false).unwrap();
            std::hint::black_box(&g);
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        println!(
            "{}: {:8.2}ms ({:.2} GMAC/s)",
            name,
            dt * 1e3,
            macs / dt / 1e9
        );
    }
}
