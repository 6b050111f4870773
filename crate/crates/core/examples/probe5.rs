//! Which formulation of the striped 9-tap dot vectorizes?

use std::hint::black_box;
use std::time::Instant;

const LANES: usize = 8;

fn run(name: &str, l: usize, f: impl Fn(&[f32], &[f32], &mut [[f32; LANES]; 9])) {
    let go: Vec<f32> = (0..l).map(|i| (i as f32 * 0.0011).sin()).collect();
    let inp: Vec<f32> = (0..l + 600).map(|i| (i as f32 * 0.0007).cos()).collect();
    let mut accs = [[0.0f32; LANES]; 9];
    let reps = 2000;
    let t0 = Instant::now();
    for _ in 0..reps {
        f(&go, &inp, &mut accs);
    }
    let dt = t0.elapsed().as_secs_f64();
    let total: f32 = accs.iter().flatten().sum();
    println!(
        "{name}: {:6.2} GMAC/s (checksum {total})",
        (reps * (l / LANES) * LANES * 9) as f64 / dt / 1e9
    );
}

fn main() {
    let l = 32 * 25 * 9usize;
    let gt_c = 9usize; // compile-time-visible
    let gt_r = black_box(9usize); // runtime

    // A: everything const-foldable (probe3 baseline shape).
    run("A const-gt flat-index ", l, |go, inp, accs| {
        for (ci, g8) in go.chunks_exact(LANES).enumerate() {
            let v0 = ci * LANES;
            for kz in 0..3 {
                for kt in 0..3 {
                    let c = kz * gt_c + kt;
                    let a = &mut accs[kz * 3 + kt];
                    for l in 0..LANES {
                        a[l] = g8[l].mul_add(inp[v0 + l + c], a[l]);
                    }
                }
            }
        }
    });

    // B: identical but gt is a runtime value.
    run("B runtime-gt flat-index", l, |go, inp, accs| {
        for (ci, g8) in go.chunks_exact(LANES).enumerate() {
            let v0 = ci * LANES;
            for kz in 0..3 {
                for kt in 0..3 {
                    let c = kz * gt_r + kt;
                    let a = &mut accs[kz * 3 + kt];
                    for l in 0..LANES {
                        a[l] = g8[l].mul_add(inp[v0 + l + c], a[l]);
                    }
                }
            }
        }
    });

    // C: runtime gt, rows hoisted outside the chunk loop.
    run("C runtime-gt rows      ", l, |go, inp, accs| {
        let n = go.len();
        let rows: [&[f32]; 3] = std::array::from_fn(|kz| &inp[kz * gt_r..kz * gt_r + n + 2]);
        for (ci, g8) in go.chunks_exact(LANES).enumerate() {
            let v0 = ci * LANES;
            for (kz, row) in rows.iter().enumerate() {
                for kt in 0..3 {
                    let a = &mut accs[kz * 3 + kt];
                    for l in 0..LANES {
                        a[l] = g8[l].mul_add(row[v0 + kt + l], a[l]);
                    }
                }
            }
        }
    });

    // D: like C plus fixed-size array windows.
    run("D runtime-gt windows   ", l, |go, inp, accs| {
        let n = go.len();
        let rows: [&[f32]; 3] = std::array::from_fn(|kz| &inp[kz * gt_r..kz * gt_r + n + 2]);
        for (ci, g8) in go.chunks_exact(LANES).enumerate() {
            let v0 = ci * LANES;
            let g: &[f32; LANES] = g8.try_into().unwrap();
            for (kz, row) in rows.iter().enumerate() {
                for kt in 0..3 {
                    let win: &[f32; LANES] = row[v0 + kt..v0 + kt + LANES].try_into().unwrap();
                    let a = &mut accs[kz * 3 + kt];
                    for l in 0..LANES {
                        a[l] = g[l].mul_add(win[l], a[l]);
                    }
                }
            }
        }
    });

    // E: windows loaded by value before the tap loops.
    run("E value windows        ", l, |go, inp, accs| {
        let n = go.len();
        let rows: [&[f32]; 3] = std::array::from_fn(|kz| &inp[kz * gt_r..kz * gt_r + n + 2]);
        for (ci, g8) in go.chunks_exact(LANES).enumerate() {
            let v0 = ci * LANES;
            let g: [f32; LANES] = g8.try_into().unwrap();
            for (kz, row) in rows.iter().enumerate() {
                // Load LANES + KT - 1 elements once, build shifted windows.
                let ext: [f32; LANES + 2] = row[v0..v0 + LANES + 2].try_into().unwrap();
                for kt in 0..3 {
                    let a = &mut accs[kz * 3 + kt];
                    for l in 0..LANES {
                        a[l] = g[l].mul_add(ext[kt + l], a[l]);
                    }
                }
            }
        }
    });
}
