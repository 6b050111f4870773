use cardio4d::ops::conv::{self, ConvSpec};
use cardio4d::Tensor;
use std::time::Instant;

fn t_conv(name: &str, n: usize, cin: usize, cout: usize, dims: [usize; 4], spec: ConvSpec, reps: usize) {
    let x = Tensor::<f32>::from_fn(&[n, cin, dims[0], dims[1], dims[2], dims[3]], |i| (i % 13) as f32 * 0.1 - 0.5);
    let w = Tensor::<f32>::from_fn(&[cout, cin, spec.kernel[0], spec.kernel[1], spec.kernel[2], spec.kernel[3]], |i| (i % 7) as f32 * 0.01);
    let t0 = Instant::now();
    let mut out = None;
    for _ in 0..reps {
        out = Some(conv::forward(&x, &w, None, &spec).unwrap());
    }
    let fwd = t0.elapsed() / reps as u32;
    let out = out.unwrap();
    let go = vec![0.5f32; out.numel()];
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = conv::backward(&x, &w, &spec, &go, true, true, false).unwrap();
    }
    let bwd = t0.elapsed() / reps as u32;
    let macs = out.numel() * cin * spec.kernel.iter().product::<usize>();
    println!(
        "{name}: fwd {:>9.2?} ({:.2} GMAC/s) bwd {:>9.2?} ({:.2} GMAC/s x2)",
        fwd,
        macs as f64 / fwd.as_secs_f64() / 1e9,
        bwd,
        2.0 * macs as f64 / bwd.as_secs_f64() / 1e9
    );
}

fn main() {
    // Shapes from a desk 4D training step (crop 32x32x24x8).
    t_conv("enc0 4->4  k3333 s1", 1, 4, 4, [32, 32, 24, 8], ConvSpec::cube4([1, 1, 1, 1]), 3);
    t_conv("down 4->8  k3333 s2", 1, 4, 8, [32, 32, 24, 8], ConvSpec::cube4([2, 2, 2, 2]), 3);
    t_conv("enc1 8->8  k3333 s1", 1, 8, 8, [16, 16, 12, 4], ConvSpec::cube4([1, 1, 1, 1]), 5);
    t_conv("enc2 16->16 k3333 s1", 1, 16, 16, [8, 8, 6, 2], ConvSpec::cube4([1, 1, 1, 1]), 10);
    t_conv("init 1->4  k3333 s1", 1, 1, 4, [32, 32, 24, 8], ConvSpec::cube4([1, 1, 1, 1]), 3);
    // 3D-mode shape: single frame, bigger z run.
    t_conv("3d  4->4   k3331 s1", 1, 4, 4, [32, 32, 24, 1], ConvSpec::cube3([1, 1, 1, 1]), 5);
}
