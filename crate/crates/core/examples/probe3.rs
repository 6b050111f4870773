//! Machine FMA-ceiling probe: how many f32 MAC/s can a plain
//! mul_add loop over L1-resident slices actually reach here?

use std::time::Instant;

fn main() {
    // 8 independent accumulator "rows" of 1024 floats, all L1-resident.
    let n = 1024usize;
    let x: Vec<f32> = (0..n).map(|i| (i as f32 * 0.001).sin()).collect();
    let mut acc = vec![0.0f32; n];
    let w = [0.3f32, -0.2, 0.11, 0.07, -0.05, 0.13, 0.017, -0.23];

    // Warm up.
    for _ in 0..100 {
        for (a, &v) in acc.iter_mut().zip(&x) {
            *a = v.mul_add(w[0], *a);
        }
    }

    let reps = 200_000usize;
    let t0 = Instant::now();
    for r in 0..reps {
        let wk = w[r % 8];
        for (a, &v) in acc.iter_mut().zip(&x) {
            *a = v.mul_add(wk, *a);
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    let macs = (reps * n) as f64;
    println!(
        "saxpy ceiling: {:.2} GMAC/s  (checksum {})",
        macs / dt / 1e9,
        acc.iter().sum::<f32>()
    );

    // Same but with 4 independent accumulator vectors to dodge the
    // loop-carried FMA latency chain.
    let mut a0 = vec![0.0f32; n];
    let mut a1 = vec![0.0f32; n];
    let t0 = Instant::now();
    for r in 0..reps {
        let wk = w[r % 8];
        let wk2 = w[(r + 1) % 8];
        for ((p, q), &v) in a0.iter_mut().zip(a1.iter_mut()).zip(&x) {
            *p = v.mul_add(wk, *p);
            *q = v.mul_add(wk2, *q);
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "dual-acc ceiling: {:.2} GMAC/s  (checksum {})",
        2.0 * macs / dt / 1e9,
        a0.iter().sum::<f32>() + a1.iter().sum::<f32>()
    );

    // Emulate the fused 27-tap stencil: out[v] += sum_i w_i * in[v + c_i]
    // with the offset pattern of a gapped (y,z,t) block.
    let rpu = 25usize; // od_z + 1
    let gt = 9usize; // od_t + 1
    let l = 32 * rpu * gt; // od_y * rpu * gt
    let inb: Vec<f32> = (0..l + 2 * rpu * gt + 2 * gt + 2)
        .map(|i| (i as f32 * 0.0007).cos())
        .collect();
    let mut outb = vec![0.0f32; l];
    let mut w27 = [[[0.0f32; 3]; 3]; 3];
    for (i, p) in w27.iter_mut().flatten().flatten().enumerate() {
        *p = (i as f32 * 0.123).sin() * 0.1;
    }
    let reps = 200usize;
    let t0 = Instant::now();
    for _ in 0..reps {
        let src = &inb[..l + 2 * rpu * gt + 2 * gt + 2];
        for (v, o) in outb.iter_mut().enumerate() {
            let mut a = *o;
            for ky in 0..3 {
                for kz in 0..3 {
                    for kt in 0..3 {
                        a = w27[ky][kz][kt].mul_add(src[v + (ky * rpu + kz) * gt + kt], a);
                    }
                }
            }
            *o = a;
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "fused 27-tap stencil: {:.2} GMAC/s (checksum {})",
        (reps * l * 27) as f64 / dt / 1e9,
        outb.iter().sum::<f32>()
    );

    // Same but the dot/reduction direction: 27 accumulators striped 8 lanes.
    let go: Vec<f32> = (0..l).map(|i| (i as f32 * 0.0011).sin()).collect();
    let mut accs = [[0.0f32; 8]; 27];
    let t0 = Instant::now();
    for _ in 0..reps {
        for (chunk_i, g8) in go.chunks_exact(8).enumerate() {
            let v0 = chunk_i * 8;
            for ky in 0..3 {
                for kz in 0..3 {
                    for kt in 0..3 {
                        let c = (ky * rpu + kz) * gt + kt;
                        let acc = &mut accs[(ky * 3 + kz) * 3 + kt];
                        for lane in 0..8 {
                            acc[lane] = g8[lane].mul_add(inb[v0 + lane + c], acc[lane]);
                        }
                    }
                }
            }
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    let total: f32 = accs.iter().flatten().sum();
    println!(
        "fused 27-dot striped: {:.2} GMAC/s (checksum {})",
        (reps * (l / 8) * 8 * 27) as f64 / dt / 1e9,
        total
    );

    // Estimate of effective clock via a serial integer chain.
    let t0 = Instant::now();
    let mut v = 1u64;
    let iters = 2_000_000_000u64;
    for _ in 0..iters {
        v = v.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    }
    let dt = t0.elapsed().as_secs_f64();
    // imul latency ~3 cycles + add 1 on this chain -> ~4 cycles/iter.
    println!(
        "serial mul-add chain: {:.2} ns/iter (~{:.2} GHz at 4 cyc/iter) (v={})",
        dt / iters as f64 * 1e9,
        4.0 / (dt / iters as f64) / 1e9,
        v
    );
}
