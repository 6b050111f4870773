//! Independent reference implementations used by the acceptance suite.
//!
//! Everything here is deliberately written in plain nested-loop style from
//! the documented definitions, sharing no code with the library kernels it
//! checks: convolution as a scatter over input voxels, Adam as a scalar
//! per-element recurrence, the metrics as direct one-hot / boundary-set
//! computations.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rand_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..3u8)).collect()
}

/// Output extent of a padded strided convolution along one axis, with the
/// same-ish padding rule `p = (k - 1) / 2`.
pub fn conv_out_extent(input: usize, k: usize, s: usize) -> usize {
    (input + 2 * ((k - 1) / 2) - k) / s + 1
}

/// Brute-force 4-D convolution by scattering every input voxel through every
/// kernel tap into the output it reaches. Input `[n, ci, x, y, z, t]`,
/// kernel `[co, ci, kx, ky, kz, kt]`, all row-major with the last axis
/// fastest. Returns the output and its dims `[n, co, ox, oy, oz, ot]`.
pub fn conv4d_scatter(
    x: &[f64],
    xdims: [usize; 6],
    w: &[f64],
    wdims: [usize; 6],
    bias: Option<&[f64]>,
    stride: [usize; 4],
) -> (Vec<f64>, [usize; 6]) {
    let [n_n, ci_n, ix_n, iy_n, iz_n, it_n] = xdims;
    let [co_n, wci_n, kx_n, ky_n, kz_n, kt_n] = wdims;
    assert_eq!(ci_n, wci_n, "channel mismatch");
    let k = [kx_n, ky_n, kz_n, kt_n];
    let inext = [ix_n, iy_n, iz_n, it_n];
    let pad: Vec<usize> = k.iter().map(|&kk| (kk - 1) / 2).collect();
    let oext: Vec<usize> = (0..4).map(|a| conv_out_extent(inext[a], k[a], stride[a])).collect();
    let odims = [n_n, co_n, oext[0], oext[1], oext[2], oext[3]];
    let onum: usize = odims.iter().product();
    let mut out = vec![0.0f64; onum];

    // Index helpers for the three row-major layouts.
    let xi = |n: usize, c: usize, a: usize, b: usize, cc: usize, d: usize| {
        ((((n * ci_n + c) * ix_n + a) * iy_n + b) * iz_n + cc) * it_n + d
    };
    let wi = |o: usize, c: usize, a: usize, b: usize, cc: usize, d: usize| {
        ((((o * ci_n + c) * kx_n + a) * ky_n + b) * kz_n + cc) * kt_n + d
    };
    let oi = |n: usize, o: usize, a: usize, b: usize, cc: usize, d: usize| {
        ((((n * co_n + o) * oext[0] + a) * oext[1] + b) * oext[2] + cc) * oext[3] + d
    };

    // An input voxel at i contributes to output o when o*s - p + koff == i,
    // i.e. o = (i + p - koff) / s exactly.
    let reaches = |i: usize, axis: usize, koff: usize| -> Option<usize> {
        let num = i as isize + pad[axis] as isize - koff as isize;
        if num < 0 {
            return None;
        }
        let num = num as usize;
        if num % stride[axis] != 0 {
            return None;
        }
        let o = num / stride[axis];
        (o < oext[axis]).then_some(o)
    };

    for n in 0..n_n {
        for ci in 0..ci_n {
            for ix in 0..ix_n {
                for iy in 0..iy_n {
                    for iz in 0..iz_n {
                        for it in 0..it_n {
                            let v = x[xi(n, ci, ix, iy, iz, it)];
                            for co in 0..co_n {
                                for kx in 0..kx_n {
                                    let Some(ox) = reaches(ix, 0, kx) else { continue };
                                    for ky in 0..ky_n {
                                        let Some(oy) = reaches(iy, 1, ky) else { continue };
                                        for kz in 0..kz_n {
                                            let Some(oz) = reaches(iz, 2, kz) else { continue };
                                            for kt in 0..kt_n {
                                                let Some(ot) = reaches(it, 3, kt) else {
                                                    continue;
                                                };
                                                out[oi(n, co, ox, oy, oz, ot)] +=
                                                    v * w[wi(co, ci, kx, ky, kz, kt)];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        let per = oext.iter().product::<usize>();
        for n in 0..n_n {
            for co in 0..co_n {
                let base = (n * co_n + co) * per;
                for v in &mut out[base..base + per] {
                    *v += b[co];
                }
            }
        }
    }
    (out, odims)
}

/// Scalar Adam with bias correction, one independent state per element.
pub struct ScalarAdam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ScalarAdam {
    pub fn new(beta1: f64, beta2: f64, eps: f64, n: usize) -> Self {
        ScalarAdam { beta1, beta2, eps, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Plain Dice coefficient on binarized class masks; both-empty counts as
/// perfect agreement.
pub fn dice_brute(pred: &[u8], truth: &[u8], class: u8) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let mut inter = 0u64;
    let mut a = 0u64;
    let mut b = 0u64;
    for i in 0..pred.len() {
        let p = pred[i] == class;
        let t = truth[i] == class;
        if p {
            a += 1;
        }
        if t {
            b += 1;
        }
        if p && t {
            inter += 1;
        }
    }
    if a + b == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (a + b) as f64
    }
}

fn one_hot_fg(label: u8) -> [f64; 2] {
    [(label == 1) as u8 as f64, (label == 2) as u8 as f64]
}

/// Temporal smoothness as the mean over consecutive-frame pairs of the L2
/// norm of the one-hot foreground difference, normalized by the square root
/// of the mean foreground voxel count (floored at one voxel). Labels are
/// `[x, y, z, t]`, t fastest.
pub fn temporal_l2_brute(labels: &[u8], dims: [usize; 4]) -> f64 {
    let [dx, dy, dz, dt] = dims;
    assert!(dt >= 2);
    let rows = dx * dy * dz;
    let mut fg_total = 0u64;
    let mut pair_sq = vec![0.0f64; dt - 1];
    for r in 0..rows {
        let row = &labels[r * dt..(r + 1) * dt];
        for &v in row {
            if v != 0 {
                fg_total += 1;
            }
        }
        for p in 0..dt - 1 {
            let a = one_hot_fg(row[p]);
            let b = one_hot_fg(row[p + 1]);
            for c in 0..2 {
                let d = b[c] - a[c];
                pair_sq[p] += d * d;
            }
        }
    }
    let mean_fg = fg_total as f64 / dt as f64;
    let norm = mean_fg.max(1.0).sqrt();
    let mean_pair = pair_sq.iter().map(|&s| s.sqrt()).sum::<f64>() / (dt - 1) as f64;
    mean_pair / norm
}

/// Boundary voxels of one class: class voxels with at least one 6-connected
/// neighbor (outside the volume counts as background) not of the class.
fn boundary_brute(frame: &[u8], dims: [usize; 3], class: u8) -> Vec<[i32; 3]> {
    let [dx, dy, dz] = dims;
    let get = |x: isize, y: isize, z: isize| -> u8 {
        if x < 0 || y < 0 || z < 0 || x >= dx as isize || y >= dy as isize || z >= dz as isize {
            0
        } else {
            frame[(x as usize * dy + y as usize) * dz + z as usize]
        }
    };
    let mut out = Vec::new();
    for x in 0..dx as isize {
        for y in 0..dy as isize {
            for z in 0..dz as isize {
                if get(x, y, z) != class {
                    continue;
                }
                let nbrs = [
                    get(x - 1, y, z),
                    get(x + 1, y, z),
                    get(x, y - 1, z),
                    get(x, y + 1, z),
                    get(x, y, z - 1),
                    get(x, y, z + 1),
                ];
                if nbrs.iter().any(|&v| v != class) {
                    out.push([x as i32, y as i32, z as i32]);
                }
            }
        }
    }
    out
}

fn nearest_sqdist(p: [i32; 3], set: &[[i32; 3]]) -> f64 {
    let mut best = i64::MAX;
    for q in set {
        let d = (0..3)
            .map(|a| {
                let d = (p[a] - q[a]) as i64;
                d * d
            })
            .sum::<i64>();
        if d < best {
            best = d;
        }
    }
    best as f64
}

/// Mean over consecutive-frame pairs and foreground classes of the symmetric
/// average surface distance between boundary sets; a pair where exactly one
/// frame lacks the class is excluded from the mean and counted instead.
/// Returns `(mean over defined cells or 0.0, excluded cell count)`.
pub fn surface_distance_brute(labels: &[u8], dims: [usize; 4]) -> (f64, usize) {
    let [dx, dy, dz, dt] = dims;
    assert!(dt >= 2);
    let spatial = [dx, dy, dz];
    let frame = |t: usize| -> Vec<u8> {
        (0..dx * dy * dz).map(|r| labels[r * dt + t]).collect()
    };
    let mut defined = Vec::new();
    let mut undefined = 0usize;
    for t in 0..dt - 1 {
        let fa = frame(t);
        let fb = frame(t + 1);
        for class in [1u8, 2u8] {
            let a = boundary_brute(&fa, spatial, class);
            let b = boundary_brute(&fb, spatial, class);
            match (a.is_empty(), b.is_empty()) {
                (true, true) => defined.push(0.0),
                (true, false) | (false, true) => undefined += 1,
                (false, false) => {
                    // The symmetric distance is the sum of the two directed
                    // distance sums; keep that exact grouping so the result
                    // is bit-identical, not just close.
                    let mut ab = 0.0;
                    for &p in &a {
                        ab += nearest_sqdist(p, &b).sqrt();
                    }
                    let mut ba = 0.0;
                    for &q in &b {
                        ba += nearest_sqdist(q, &a).sqrt();
                    }
                    defined.push((ab + ba) / (a.len() + b.len()) as f64);
                }
            }
        }
    }
    let value = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    (value, undefined)
}

/// Scale-aware relative difference: `|a-b| / max(1, |a|, |b|)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}
