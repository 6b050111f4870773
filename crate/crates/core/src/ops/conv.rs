//! 4-D convolution over `(x, y, z, t)` volumes.
//!
//! Three implementations of the same operation live here:
//!
//! * [`forward`] — the production kernel. When the `(y, z, t)` strides are
//!   all 1 (every conv in the segmentation nets except downsamplers), the
//!   input is copied into a *gapped* layout: one shared zero element between
//!   consecutive t-rows and one shared zero row between z-planes stand in
//!   for the zero padding. In that layout every `(ky, kz, kt)` kernel tap is
//!   a constant offset into one contiguous stream, so the whole `y*z*t`
//!   block reduces to a single fused multiply-add loop over thousands of
//!   elements — long enough for the compiler's vectorizer to amortize its
//!   setup, which a per-row formulation (rows of 4–20 elements at training
//!   crops) never achieves. Strided convs fall back to register-blocked row
//!   loops. Work is split across output slabs, each owned by exactly one
//!   task, so parallel execution is deterministic: every output element
//!   accumulates its taps in the same fixed order regardless of thread
//!   count.
//! * [`forward_naive`] — the textbook formulation: for every output frame,
//!   extract the contributing input frames and run a 3-D convolution per
//!   temporal tap, summing the results. Kept as a benchmark baseline and as
//!   an internal cross-check; it re-extracts and re-pads frames per output
//!   time step, which is exactly the overhead the production kernel avoids.
//! * [`forward_direct`] — unoptimized nested loops over every output element
//!   and tap, with explicit bounds checks instead of padding. Slow and
//!   obviously correct; used by tests and the bench command as a reference.
//!
//! Kernel extents are 1 or 3 per axis with implied "same" zero padding of
//! `(k-1)/2`, strides are 1 or 2, so output extents are `ceil(in/stride)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Dims6, Tensor};
use rayon::prelude::*;

/// Per-axis kernel extents and strides, ordered `(x, y, z, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 4],
    pub stride: [usize; 4],
}

impl ConvSpec {
    pub fn new(kernel: [usize; 4], stride: [usize; 4]) -> Result<Self> {
        for &k in &kernel {
            if k != 1 && k != 3 {
                return Err(Error::InvalidConfig(format!(
                    "conv kernel extents must be 1 or 3, got {:?}",
                    kernel
                )));
            }
        }
        for &s in &stride {
            if s != 1 && s != 2 {
                return Err(Error::InvalidConfig(format!(
                    "conv strides must be 1 or 2, got {:?}",
                    stride
                )));
            }
        }
        Ok(ConvSpec { kernel, stride })
    }

    /// Full 3x3x3x3 kernel at the given strides.
    pub fn cube4(stride: [usize; 4]) -> Self {
        ConvSpec::new([3, 3, 3, 3], stride).expect("static spec")
    }

    /// Spatial-only 3x3x3x1 kernel (temporal extent collapsed).
    pub fn cube3(stride: [usize; 4]) -> Self {
        ConvSpec::new([3, 3, 3, 1], stride).expect("static spec")
    }

    /// 1x1x1x1 kernel, stride 1: a per-voxel channel mix.
    pub fn pointwise() -> Self {
        ConvSpec::new([1, 1, 1, 1], [1, 1, 1, 1]).expect("static spec")
    }

    /// Implied zero padding per axis: 1 where the extent is 3, else 0.
    pub fn padding(&self) -> [usize; 4] {
        self.kernel.map(|k| (k - 1) / 2)
    }

    /// Output extent along one axis.
    pub fn out_extent(&self, axis: usize, input: usize) -> usize {
        let k = self.kernel[axis];
        let s = self.stride[axis];
        let p = (k - 1) / 2;
        (input + 2 * p - k) / s + 1
    }
}

/// Validated geometry shared by every implementation and the backward pass.
struct Geom {
    /// Input dims.
    nd: Dims6,
    /// Padded input dims.
    pd: Dims6,
    /// Output dims.
    od: Dims6,
    cout: usize,
    cin: usize,
    k: [usize; 4],
    s: [usize; 4],
    p: [usize; 4],
}

fn geometry<S: Scalar>(
    op: &'static str,
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Geom> {
    let nd = x.dims6()?;
    let ws = w.shape();
    if ws.len() != 6 {
        return Err(Error::shape(
            op,
            format!("kernel must be 6-D (cout,cin,kx,ky,kz,kt), got {:?}", ws),
        ));
    }
    let (cout, cin) = (ws[0], ws[1]);
    let k = spec.kernel;
    if [ws[2], ws[3], ws[4], ws[5]] != k {
        return Err(Error::shape(
            op,
            format!("kernel tensor extents {:?} disagree with spec {:?}", &ws[2..], k),
        ));
    }
    if cin != nd.c {
        return Err(Error::shape(
            op,
            format!("kernel expects {} input channels, input has {}", cin, nd.c),
        ));
    }
    if nd.numel() == 0 || cout == 0 {
        return Err(Error::shape(op, "zero-sized input or kernel".to_string()));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?}, expected [{}]", b.shape(), cout),
            ));
        }
    }
    let p = spec.padding();
    let s = spec.stride;
    let ix = nd.xyzt();
    let od = Dims6 {
        n: nd.n,
        c: cout,
        x: spec.out_extent(0, ix[0]),
        y: spec.out_extent(1, ix[1]),
        z: spec.out_extent(2, ix[2]),
        t: spec.out_extent(3, ix[3]),
    };
    let pd = Dims6 {
        n: nd.n,
        c: nd.c,
        x: nd.x + 2 * p[0],
        y: nd.y + 2 * p[1],
        z: nd.z + 2 * p[2],
        t: nd.t + 2 * p[3],
    };
    Ok(Geom {
        nd,
        pd,
        od,
        cout,
        cin,
        k,
        s,
        p,
    })
}

fn ensure_finite<S: Scalar>(
    op: &'static str,
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
) -> Result<()> {
    if !x.all_finite() {
        return Err(Error::NonFinite {
            op,
            detail: "input tensor".to_string(),
        });
    }
    if !w.all_finite() {
        return Err(Error::NonFinite {
            op,
            detail: "kernel tensor".to_string(),
        });
    }
    if let Some(b) = bias {
        if !b.all_finite() {
            return Err(Error::NonFinite {
                op,
                detail: "bias tensor".to_string(),
            });
        }
    }
    Ok(())
}

/// Copy `x` into a zero-padded buffer with `g.p` margins on the spatial axes.
fn pad_input<S: Scalar>(x: &[S], g: &Geom) -> Vec<S> {
    let (nd, pd) = (g.nd, g.pd);
    let mut xp = vec![S::zero(); pd.numel()];
    for n in 0..nd.n {
        for c in 0..nd.c {
            for ix in 0..nd.x {
                for iy in 0..nd.y {
                    for iz in 0..nd.z {
                        let src = nd.row_offset(n, c, ix, iy, iz);
                        let dst =
                            pd.row_offset(n, c, ix + g.p[0], iy + g.p[1], iz + g.p[2]) + g.p[3];
                        xp[dst..dst + nd.t].copy_from_slice(&x[src..src + nd.t]);
                    }
                }
            }
        }
    }
    xp
}

/// `out[i] += w * inp[i * stride]` for each output element.
#[inline(always)]
fn axpy_gather<S: Scalar>(out: &mut [S], inp: &[S], stride: usize, w: S) {
    if stride == 1 {
        let n = out.len();
        for (o, &v) in out.iter_mut().zip(&inp[..n]) {
            *o = w.mul_add(v, *o);
        }
    } else {
        let mut idx = 0;
        for o in out.iter_mut() {
            *o = w.mul_add(inp[idx], *o);
            idx += stride;
        }
    }
}

/// `out[i * stride] += w * inp[i]` for each input element.
#[inline(always)]
fn axpy_scatter<S: Scalar>(out: &mut [S], inp: &[S], stride: usize, w: S) {
    if stride == 1 {
        for (o, &v) in out[..inp.len()].iter_mut().zip(inp) {
            *o = w.mul_add(v, *o);
        }
    } else {
        let mut idx = 0;
        for &v in inp {
            out[idx] = w.mul_add(v, out[idx]);
            idx += stride;
        }
    }
}

/// Dot product of a contiguous slice with a strided one.
#[inline(always)]
fn dot_gather<S: Scalar>(a: &[S], b: &[S], stride_b: usize) -> S {
    let mut acc = S::zero();
    if stride_b == 1 {
        for (&av, &bv) in a.iter().zip(&b[..a.len()]) {
            acc = av.mul_add(bv, acc);
        }
    } else {
        let mut idx = 0;
        for &av in a {
            acc = av.mul_add(b[idx], acc);
            idx += stride_b;
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// (y,z,t)-block kernels, temporal stride 1.
//
// The t axis is innermost and short (4-20 at training crops), so dispatching
// one multiply-add row per kernel tap drowns in loop overhead. These kernels
// instead process a whole y*z*t block per (c_in, kx) with the ky*kz*kt tap
// window held in registers; constant tap counts let the compiler unroll the
// taps and vectorize the t loop. Temporal stride 2 (down-convs, a small share
// of the arithmetic) stays on the generic row loops.
// ---------------------------------------------------------------------------

/// Strides and extents a block kernel needs: the output block is `od_y*od_z`
/// contiguous rows of `od_t`; the padded input block has rows of `pd_t` and
/// planes of `pd_z * pd_t`.
#[derive(Clone, Copy)]
struct BlockGeom {
    od_y: usize,
    od_z: usize,
    od_t: usize,
    pd_z: usize,
    pd_t: usize,
    sy: usize,
    sz: usize,
}

impl BlockGeom {
    fn of(g: &Geom) -> Self {
        BlockGeom {
            od_y: g.od.y,
            od_z: g.od.z,
            od_t: g.od.t,
            pd_z: g.pd.z,
            pd_t: g.pd.t,
            sy: g.s[1],
            sz: g.s[2],
        }
    }
}

/// `out[oy,oz,ot] += sum_{ky,kz,kt} w[ky,kz,kt] * inp[oy*sy+ky, oz*sz+kz, ot+kt]`.
///
/// Requires `od_t + KT - 1 <= pd_t` (holds exactly for temporal stride 1).
fn block_acc<const KY: usize, const KZ: usize, const KT: usize, S: Scalar>(
    out: &mut [S],
    inp: &[S],
    w: &[S],
    g: BlockGeom,
) {
    let mut wv = [[[S::zero(); KT]; KZ]; KY];
    for (ky, plane) in wv.iter_mut().enumerate() {
        for (kz, row) in plane.iter_mut().enumerate() {
            for (kt, v) in row.iter_mut().enumerate() {
                *v = w[(ky * KZ + kz) * KT + kt];
            }
        }
    }
    for oy in 0..g.od_y {
        for oz in 0..g.od_z {
            let obase = (oy * g.od_z + oz) * g.od_t;
            let orow = &mut out[obase..obase + g.od_t];
            let ibase = (oy * g.sy * g.pd_z + oz * g.sz) * g.pd_t;
            let rows: [[&[S]; KZ]; KY] = std::array::from_fn(|ky| {
                std::array::from_fn(|kz| {
                    let r = ibase + (ky * g.pd_z + kz) * g.pd_t;
                    &inp[r..r + g.od_t + KT - 1]
                })
            });
            for (ot, o) in orow.iter_mut().enumerate() {
                let mut acc = *o;
                for ky in 0..KY {
                    for kz in 0..KZ {
                        for kt in 0..KT {
                            acc = wv[ky][kz][kt].mul_add(rows[ky][kz][ot + kt], acc);
                        }
                    }
                }
                *o = acc;
            }
        }
    }
}

/// Transpose of [`block_acc`]: scatter an output-gradient block through the
/// tap window into the padded input-gradient block.
fn block_scatter<const KY: usize, const KZ: usize, const KT: usize, S: Scalar>(
    gx: &mut [S],
    go: &[S],
    w: &[S],
    g: BlockGeom,
) {
    let mut wv = [[[S::zero(); KT]; KZ]; KY];
    for (ky, plane) in wv.iter_mut().enumerate() {
        for (kz, row) in plane.iter_mut().enumerate() {
            for (kt, v) in row.iter_mut().enumerate() {
                *v = w[(ky * KZ + kz) * KT + kt];
            }
        }
    }
    for oy in 0..g.od_y {
        for oz in 0..g.od_z {
            let obase = (oy * g.od_z + oz) * g.od_t;
            let grow = &go[obase..obase + g.od_t];
            let ibase = (oy * g.sy * g.pd_z + oz * g.sz) * g.pd_t;
            for ky in 0..KY {
                for kz in 0..KZ {
                    let r = ibase + (ky * g.pd_z + kz) * g.pd_t;
                    let xrow = &mut gx[r..r + g.od_t + KT - 1];
                    for kt in 0..KT {
                        let wt = wv[ky][kz][kt];
                        for (ot, &gv) in grow.iter().enumerate() {
                            xrow[ot + kt] = wt.mul_add(gv, xrow[ot + kt]);
                        }
                    }
                }
            }
        }
    }
}

/// Per-tap dot products of an output-gradient block against the shifted
/// windows of the padded input block: the kernel-gradient inner loop.
/// Adds into `acc[(ky*KZ+kz)*KT+kt]`.
fn block_dot<const KY: usize, const KZ: usize, const KT: usize, S: Scalar>(
    go: &[S],
    xp: &[S],
    acc: &mut [S],
    g: BlockGeom,
) {
    let mut local = [[[S::zero(); KT]; KZ]; KY];
    for oy in 0..g.od_y {
        for oz in 0..g.od_z {
            let obase = (oy * g.od_z + oz) * g.od_t;
            let grow = &go[obase..obase + g.od_t];
            let ibase = (oy * g.sy * g.pd_z + oz * g.sz) * g.pd_t;
            for (ky, plane) in local.iter_mut().enumerate() {
                for (kz, row) in plane.iter_mut().enumerate() {
                    let r = ibase + (ky * g.pd_z + kz) * g.pd_t;
                    let xrow = &xp[r..r + g.od_t + KT - 1];
                    for (kt, slot) in row.iter_mut().enumerate() {
                        let mut s = *slot;
                        for (ot, &gv) in grow.iter().enumerate() {
                            s = gv.mul_add(xrow[ot + kt], s);
                        }
                        *slot = s;
                    }
                }
            }
        }
    }
    for ky in 0..KY {
        for kz in 0..KZ {
            for kt in 0..KT {
                acc[(ky * KZ + kz) * KT + kt] += local[ky][kz][kt];
            }
        }
    }
}

type BlockFn<S> = fn(&mut [S], &[S], &[S], BlockGeom);
type BlockDotFn<S> = fn(&[S], &[S], &mut [S], BlockGeom);

/// Monomorphized block kernels for the validated tap extents, or `None` for
/// extents outside {1, 3} (possible only by bypassing [`ConvSpec::new`]).
fn block_acc_fn<S: Scalar>(ky: usize, kz: usize, kt: usize) -> Option<BlockFn<S>> {
    match (ky, kz, kt) {
        (1, 1, 1) => Some(block_acc::<1, 1, 1, S>),
        (1, 1, 3) => Some(block_acc::<1, 1, 3, S>),
        (1, 3, 1) => Some(block_acc::<1, 3, 1, S>),
        (1, 3, 3) => Some(block_acc::<1, 3, 3, S>),
        (3, 1, 1) => Some(block_acc::<3, 1, 1, S>),
        (3, 1, 3) => Some(block_acc::<3, 1, 3, S>),
        (3, 3, 1) => Some(block_acc::<3, 3, 1, S>),
        (3, 3, 3) => Some(block_acc::<3, 3, 3, S>),
        _ => None,
    }
}

fn block_scatter_fn<S: Scalar>(ky: usize, kz: usize, kt: usize) -> Option<BlockFn<S>> {
    match (ky, kz, kt) {
        (1, 1, 1) => Some(block_scatter::<1, 1, 1, S>),
        (1, 1, 3) => Some(block_scatter::<1, 1, 3, S>),
        (1, 3, 1) => Some(block_scatter::<1, 3, 1, S>),
        (1, 3, 3) => Some(block_scatter::<1, 3, 3, S>),
        (3, 1, 1) => Some(block_scatter::<3, 1, 1, S>),
        (3, 1, 3) => Some(block_scatter::<3, 1, 3, S>),
        (3, 3, 1) => Some(block_scatter::<3, 3, 1, S>),
        (3, 3, 3) => Some(block_scatter::<3, 3, 3, S>),
        _ => None,
    }
}

fn block_dot_fn<S: Scalar>(ky: usize, kz: usize, kt: usize) -> Option<BlockDotFn<S>> {
    match (ky, kz, kt) {
        (1, 1, 1) => Some(block_dot::<1, 1, 1, S>),
        (1, 1, 3) => Some(block_dot::<1, 1, 3, S>),
        (1, 3, 1) => Some(block_dot::<1, 3, 1, S>),
        (1, 3, 3) => Some(block_dot::<1, 3, 3, S>),
        (3, 1, 1) => Some(block_dot::<3, 1, 1, S>),
        (3, 1, 3) => Some(block_dot::<3, 1, 3, S>),
        (3, 3, 1) => Some(block_dot::<3, 3, 1, S>),
        (3, 3, 3) => Some(block_dot::<3, 3, 3, S>),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Fused gapped-layout kernels, for strides (y, z, t) all 1.
//
// Layout of one (n, c, ix) x-slice ("block"):
//   * t-rows are stored with `gt = od_t + gap_t` elements, where the extra
//     trailing slot (present when the kernel has temporal taps) is zero and
//     serves simultaneously as the t=od_t pad of its own row and the t=-1
//     pad of the next row;
//   * a y-unit holds `rpu = od_z + gap_z` such rows, the extra trailing row
//     (when the kernel has z taps) doubling as the z=od_z pad of its unit
//     and the z=-1 pad of the next;
//   * a block is `gap_z` leading zero rows (the z=-1 pad of the first unit)
//     followed by `od_y + 2*ypad` units, the outer two being y padding.
//
// With output element (oy, oz, ot) mapped to fused index
// `v = (oy*rpu + oz)*gt + ot`, the input needed by tap (ky, kz, kt) sits at
// `v + (ky*rpu + kz)*gt + kt - gap_t` — a constant offset. One loop over v
// therefore computes the whole block; v values that land on gap slots
// compute garbage into positions that are simply never copied out. The
// transposed (input-gradient) pass is the same loop with the kernel flipped
// on all three axes, reading a gapped copy of the output gradient whose
// slack zeros and gap zeros supply exactly the boundary semantics.
// ---------------------------------------------------------------------------

/// Gapped-layout geometry. Only valid when strides (y, z, t) are all 1, so
/// output spatial extents equal input extents on those axes.
#[derive(Clone, Copy)]
struct FusedGeom {
    /// Stored elements per t-row (`od_t + gap_t`).
    gt: usize,
    /// Stored rows per y-unit (`od_z + gap_z`).
    rpu: usize,
    gap_t: usize,
    gap_z: usize,
    ypad: usize,
    xpad: usize,
    /// Number of x-slices, including x padding.
    pd_x: usize,
    /// Stored elements of one (n, c, ix) block.
    block_len: usize,
    /// Fused output range: `od_y * rpu * gt`.
    out_len: usize,
    /// Zeroed slack before the first block.
    lead: usize,
    /// Total buffer length for `n * c * pd_x` blocks plus slack.
    buf_len: usize,
    c: usize,
}

impl FusedGeom {
    fn of(g: &Geom) -> Self {
        debug_assert!(g.s[1] == 1 && g.s[2] == 1 && g.s[3] == 1);
        let gap_t = (g.k[3] > 1) as usize;
        let gap_z = (g.k[2] > 1) as usize;
        let ypad = g.p[1];
        let xpad = g.p[0];
        let gt = g.od.t + gap_t;
        let rpu = g.od.z + gap_z;
        let block_len = (gap_z + (g.od.y + 2 * ypad) * rpu) * gt;
        let out_len = g.od.y * rpu * gt;
        let pd_x = g.nd.x + 2 * xpad;
        let lead = gt;
        let buf_len = lead + g.nd.n * g.nd.c * pd_x * block_len + 2 * gt + 8;
        FusedGeom {
            gt,
            rpu,
            gap_t,
            gap_z,
            ypad,
            xpad,
            pd_x,
            block_len,
            out_len,
            lead,
            buf_len,
            c: g.nd.c,
        }
    }

    fn block_base(&self, n: usize, c: usize, ix: usize) -> usize {
        self.lead + ((n * self.c + c) * self.pd_x + ix) * self.block_len
    }

    /// Offset of real voxel (y, z, t=0) inside its block.
    fn row_offset(&self, y: usize, z: usize) -> usize {
        (self.gap_z + (y + self.ypad) * self.rpu + z) * self.gt
    }
}

/// Copy `x` into the gapped layout; pad slots stay zero.
fn fused_pad<S: Scalar>(x: &[S], g: &Geom, fg: &FusedGeom) -> Vec<S> {
    let nd = g.nd;
    let mut buf = vec![S::zero(); fg.buf_len];
    for n in 0..nd.n {
        for c in 0..nd.c {
            for ix in 0..nd.x {
                let base = fg.block_base(n, c, ix + fg.xpad);
                for iy in 0..nd.y {
                    for iz in 0..nd.z {
                        let src = nd.row_offset(n, c, ix, iy, iz);
                        let dst = base + fg.row_offset(iy, iz);
                        buf[dst..dst + nd.t].copy_from_slice(&x[src..src + nd.t]);
                    }
                }
            }
        }
    }
    buf
}

/// `out[v] += sum_{ky,kz,kt} w[(ky*KZ+kz)*KT+kt] * inp[v + (ky*rpu + kz)*gt + kt]`
/// over the whole fused range. `inp` starts `gap_t` elements before the block
/// base and must cover `out.len()` plus the largest tap offset.
fn fused_acc<const KY: usize, const KZ: usize, const KT: usize, S: Scalar>(
    out: &mut [S],
    inp: &[S],
    w: &[S],
    rpu: usize,
    gt: usize,
) {
    let mut wv = [[[S::zero(); KT]; KZ]; KY];
    for (ky, plane) in wv.iter_mut().enumerate() {
        for (kz, row) in plane.iter_mut().enumerate() {
            for (kt, v) in row.iter_mut().enumerate() {
                *v = w[(ky * KZ + kz) * KT + kt];
            }
        }
    }
    // One exact-length slice per (ky, kz) keeps the live pointer count at
    // KY*KZ instead of KY*KZ*KT, and the shared length lets the compiler
    // drop the per-access bounds tests inside the fused loop.
    let n = out.len();
    let rows: [[&[S]; KZ]; KY] = std::array::from_fn(|ky| {
        std::array::from_fn(|kz| {
            let c = (ky * rpu + kz) * gt;
            &inp[c..c + n + KT - 1]
        })
    });
    for (v, o) in out.iter_mut().enumerate() {
        let mut a = *o;
        for ky in 0..KY {
            for kz in 0..KZ {
                let row = rows[ky][kz];
                for kt in 0..KT {
                    a = wv[ky][kz][kt].mul_add(row[v + kt], a);
                }
            }
        }
        *o = a;
    }
}

/// Per-tap dot products over the fused range. One pass per `ky` keeps the
/// live accumulator set at `KZ*KT*LANES` values — small enough to stay in
/// vector registers. Adds into `acc[(ky*KZ+kz)*KT+kt]`; gap slots of `go`
/// must be zero.
fn fused_dot<const KY: usize, const KZ: usize, const KT: usize, S: Scalar>(
    go: &[S],
    inp: &[S],
    acc: &mut [S],
    rpu: usize,
    gt: usize,
) {
    for ky in 0..KY {
        dot_zt::<KZ, KT, S>(go, &inp[ky * rpu * gt..], &mut acc[ky * KZ * KT..], gt);
    }
}

/// Inner striped dot over one `ky` plane: sums are striped across `LANES`
/// accumulators per tap so they vectorize without reassociation; the lane
/// reduction order is fixed, keeping results reproducible.
fn dot_zt<const KZ: usize, const KT: usize, S: Scalar>(
    go: &[S],
    inp: &[S],
    acc: &mut [S],
    gt: usize,
) {
    const LANES: usize = 8;
    // Wide enough for the shifted windows of any supported tap extent.
    const EXT: usize = LANES + 2;
    let n = go.len();
    let rows: [&[S]; KZ] = std::array::from_fn(|kz| {
        let c = kz * gt;
        &inp[c..c + n + 2]
    });
    let mut lanes = [[[S::zero(); LANES]; KT]; KZ];
    let whole = n / LANES * LANES;
    for (ci, g8) in go.chunks_exact(LANES).enumerate() {
        let v0 = ci * LANES;
        let g: [S; LANES] = g8.try_into().expect("chunk length");
        for kz in 0..KZ {
            // One fixed-size value window per row; the shifted tap reads
            // then index register-resident arrays with constant offsets.
            // Plain index loops matter here: iterator chains over the
            // accumulators leave them in memory and the loop scalar.
            let ext: [S; EXT] = rows[kz][v0..v0 + EXT].try_into().expect("window");
            for kt in 0..KT {
                let lane = &mut lanes[kz][kt];
                for l in 0..LANES {
                    lane[l] = g[l].mul_add(ext[kt + l], lane[l]);
                }
            }
        }
    }
    for (v, &gv) in go.iter().enumerate().skip(whole) {
        for kz in 0..KZ {
            let src = rows[kz];
            for kt in 0..KT {
                lanes[kz][kt][0] = gv.mul_add(src[v + kt], lanes[kz][kt][0]);
            }
        }
    }
    for (kz, row) in lanes.iter().enumerate() {
        for (kt, lane) in row.iter().enumerate() {
            let mut s = S::zero();
            for &l in lane {
                s = s + l;
            }
            acc[kz * KT + kt] += s;
        }
    }
}

type FusedFn<S> = fn(&mut [S], &[S], &[S], usize, usize);
type FusedDotFn<S> = fn(&[S], &[S], &mut [S], usize, usize);

fn fused_acc_fn<S: Scalar>(ky: usize, kz: usize, kt: usize) -> Option<FusedFn<S>> {
    match (ky, kz, kt) {
        (1, 1, 1) => Some(fused_acc::<1, 1, 1, S>),
        (1, 1, 3) => Some(fused_acc::<1, 1, 3, S>),
        (1, 3, 1) => Some(fused_acc::<1, 3, 1, S>),
        (1, 3, 3) => Some(fused_acc::<1, 3, 3, S>),
        (3, 1, 1) => Some(fused_acc::<3, 1, 1, S>),
        (3, 1, 3) => Some(fused_acc::<3, 1, 3, S>),
        (3, 3, 1) => Some(fused_acc::<3, 3, 1, S>),
        (3, 3, 3) => Some(fused_acc::<3, 3, 3, S>),
        _ => None,
    }
}

fn fused_dot_fn<S: Scalar>(ky: usize, kz: usize, kt: usize) -> Option<FusedDotFn<S>> {
    match (ky, kz, kt) {
        (1, 1, 1) => Some(fused_dot::<1, 1, 1, S>),
        (1, 1, 3) => Some(fused_dot::<1, 1, 3, S>),
        (1, 3, 1) => Some(fused_dot::<1, 3, 1, S>),
        (1, 3, 3) => Some(fused_dot::<1, 3, 3, S>),
        (3, 1, 1) => Some(fused_dot::<3, 1, 1, S>),
        (3, 1, 3) => Some(fused_dot::<3, 1, 3, S>),
        (3, 3, 1) => Some(fused_dot::<3, 3, 1, S>),
        (3, 3, 3) => Some(fused_dot::<3, 3, 3, S>),
        _ => None,
    }
}

/// Forward pass over the gapped layout. Parallel over (n, c_out) chunks.
fn forward_fused<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    g: &Geom,
    acc: FusedFn<S>,
) -> Tensor<S> {
    let fg = FusedGeom::of(g);
    let xg = fused_pad(x.data(), g, &fg);
    let od = g.od;
    let nd = g.nd;
    let (cin, cout) = (g.cin, g.cout);
    let [kx_e, ..] = g.k;
    let sx = g.s[0];
    let wlen = g.k[1] * g.k[2] * g.k[3];
    let wd = w.data();
    let bd = bias.map(|b| b.data());

    let mut out = Tensor::zeros(&od.to_vec());
    let per = od.x * od.y * od.z * od.t;
    out.data_mut()
        .par_chunks_mut(per)
        .enumerate()
        .for_each(|(idx, out_nc)| {
            let co = idx % cout;
            let n = idx / cout;
            let mut out_g = vec![S::zero(); fg.out_len];
            let slab = od.y * od.z * od.t;
            for ox in 0..od.x {
                out_g.fill(bd.map_or(S::zero(), |b| b[co]));
                for ci in 0..cin {
                    for kx in 0..kx_e {
                        let ix = ox * sx + kx;
                        // X-pad slices are all-zero blocks; their taps add
                        // exact zeros, so skip the pass.
                        if ix < fg.xpad || ix >= fg.xpad + nd.x {
                            continue;
                        }
                        let base = fg.block_base(n, ci, ix);
                        let wbase = ((co * cin + ci) * kx_e + kx) * wlen;
                        acc(
                            &mut out_g,
                            &xg[base - fg.gap_t..],
                            &wd[wbase..wbase + wlen],
                            fg.rpu,
                            fg.gt,
                        );
                    }
                }
                let dst_slab = &mut out_nc[ox * slab..(ox + 1) * slab];
                for oy in 0..od.y {
                    for oz in 0..od.z {
                        let src = (oy * fg.rpu + oz) * fg.gt;
                        let dst = (oy * od.z + oz) * od.t;
                        dst_slab[dst..dst + od.t].copy_from_slice(&out_g[src..src + od.t]);
                    }
                }
            }
        });
    out
}

/// Input and kernel gradients over the gapped layout.
fn backward_fused<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    g: &Geom,
    go: &[S],
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let fg = FusedGeom::of(g);
    let od = g.od;
    let nd = g.nd;
    let (cin, cout) = (g.cin, g.cout);
    let [kx_e, ky_e, kz_e, kt_e] = g.k;
    let sx = g.s[0];
    let wlen = ky_e * kz_e * kt_e;
    let wd = w.data();

    // Gapped copy of the output gradient: one slab per (n, c_out, ox) with
    // `gs` zero slack elements on both sides, so every shifted read of the
    // gradient stays in bounds and out-of-range taps read exact zeros.
    let gs = 2 * fg.rpu * fg.gt + 2 * fg.gt + 2;
    let sstride = gs + fg.out_len + gs;
    let mut gog = vec![S::zero(); nd.n * cout * od.x * sstride];
    gog.par_chunks_mut(sstride).enumerate().for_each(|(idx, slab)| {
        let ox = idx % od.x;
        let co = (idx / od.x) % cout;
        let n = idx / (od.x * cout);
        for oy in 0..od.y {
            for oz in 0..od.z {
                let src = od.row_offset(n, co, ox, oy, oz);
                let dst = gs + (oy * fg.rpu + oz) * fg.gt;
                slab[dst..dst + od.t].copy_from_slice(&go[src..src + od.t]);
            }
        }
    });
    let go_slab = |n: usize, co: usize, ox: usize| ((n * cout + co) * od.x + ox) * sstride;

    let input = if need_input {
        let acc = fused_acc_fn::<S>(ky_e, kz_e, kt_e).expect("extents validated");
        // The transposed pass: gather into each gapped input-gradient block
        // with the kernel flipped on (y, z, t). Alignment: gradient index
        // u receives output taps at `u + gap_t - span + (fy*rpu+fz)*gt + ft`
        // in flipped tap coordinates, where span is the largest tap offset.
        let span = ((ky_e - 1) * fg.rpu + (kz_e - 1)) * fg.gt + kt_e - 1;
        let mut gxg = vec![S::zero(); fg.buf_len];
        let blocks = nd.n * cin * fg.pd_x * fg.block_len;
        gxg[fg.lead..fg.lead + blocks]
            .par_chunks_mut(fg.pd_x * fg.block_len)
            .enumerate()
            .for_each(|(idx, gx_nc)| {
                let ci = idx % cin;
                let n = idx / cin;
                let mut wf = vec![S::zero(); wlen];
                for ix in fg.xpad..fg.xpad + nd.x {
                    let gx_block = &mut gx_nc[ix * fg.block_len..(ix + 1) * fg.block_len];
                    for co in 0..cout {
                        for kx in 0..kx_e {
                            if ix < kx || (ix - kx) % sx != 0 {
                                continue;
                            }
                            let ox = (ix - kx) / sx;
                            if ox >= od.x {
                                continue;
                            }
                            let wbase = ((co * cin + ci) * kx_e + kx) * wlen;
                            for ky in 0..ky_e {
                                for kz in 0..kz_e {
                                    for kt in 0..kt_e {
                                        wf[(ky * kz_e + kz) * kt_e + kt] = wd[wbase
                                            + ((ky_e - 1 - ky) * kz_e + (kz_e - 1 - kz)) * kt_e
                                            + (kt_e - 1 - kt)];
                                    }
                                }
                            }
                            let base = go_slab(n, co, ox) + gs + fg.gap_t - span;
                            acc(gx_block, &gog[base..], &wf, fg.rpu, fg.gt);
                        }
                    }
                }
            });
        // Copy real voxels out of the gapped gradient.
        let mut gx = vec![S::zero(); nd.numel()];
        for n in 0..nd.n {
            for c in 0..cin {
                for ix in 0..nd.x {
                    let base = fg.block_base(n, c, ix + fg.xpad);
                    for iy in 0..nd.y {
                        for iz in 0..nd.z {
                            let src = base + fg.row_offset(iy, iz);
                            let dst = nd.row_offset(n, c, ix, iy, iz);
                            gx[dst..dst + nd.t].copy_from_slice(&gxg[src..src + nd.t]);
                        }
                    }
                }
            }
        }
        Some(gx)
    } else {
        None
    };

    let kernel = if need_kernel {
        let dot = fused_dot_fn::<S>(ky_e, kz_e, kt_e).expect("extents validated");
        let xg = fused_pad(x.data(), g, &fg);
        let mut gw = vec![S::zero(); w.numel()];
        gw.par_chunks_mut(cin * kx_e * wlen)
            .enumerate()
            .for_each(|(co, gw_slab)| {
                for n in 0..nd.n {
                    for ci in 0..cin {
                        for kx in 0..kx_e {
                            let mut acc27 = [S::zero(); 27];
                            for ox in 0..od.x {
                                let ix = ox * sx + kx;
                                // All-zero x-pad blocks contribute nothing.
                                if ix < fg.xpad || ix >= fg.xpad + nd.x {
                                    continue;
                                }
                                let base = fg.block_base(n, ci, ix);
                                let gbase = go_slab(n, co, ox) + gs;
                                dot(
                                    &gog[gbase..gbase + fg.out_len],
                                    &xg[base - fg.gap_t..],
                                    &mut acc27,
                                    fg.rpu,
                                    fg.gt,
                                );
                            }
                            let dst = (ci * kx_e + kx) * wlen;
                            for (i, a) in acc27[..wlen].iter().enumerate() {
                                gw_slab[dst + i] += *a;
                            }
                        }
                    }
                }
            });
        Some(gw)
    } else {
        None
    };

    (input, kernel)
}

/// Production kernel: padded input, temporally fused loops, deterministic
/// parallelism over `(n, c_out, x)` output slabs.
pub fn forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let g = geometry("conv4d", x, w, bias, spec)?;
    ensure_finite("conv4d", x, w, bias)?;
    if g.s[1] == 1 && g.s[2] == 1 && g.s[3] == 1 {
        if let Some(acc) = fused_acc_fn::<S>(g.k[1], g.k[2], g.k[3]) {
            return Ok(forward_fused(x, w, bias, &g, acc));
        }
    }
    let xp = pad_input(x.data(), &g);
    let od = g.od;
    let pd = g.pd;
    let (cin, cout) = (g.cin, g.cout);
    let [kx_e, ky_e, kz_e, kt_e] = g.k;
    let [sx, sy, sz, st] = g.s;
    let wd = w.data();
    let bd = bias.map(|b| b.data());

    let mut out = Tensor::zeros(&od.to_vec());
    let slab = od.y * od.z * od.t;
    let block = if st == 1 { block_acc_fn::<S>(ky_e, kz_e, kt_e) } else { None };
    let bg = BlockGeom::of(&g);
    let wlen = ky_e * kz_e * kt_e;
    out.data_mut()
        .par_chunks_mut(slab)
        .enumerate()
        .for_each(|(idx, out_slab)| {
            let ox = idx % od.x;
            let co = (idx / od.x) % cout;
            let n = idx / (od.x * cout);
            out_slab.fill(bd.map_or(S::zero(), |b| b[co]));
            for ci in 0..cin {
                for kx in 0..kx_e {
                    let ix = ox * sx + kx;
                    if let Some(f) = block {
                        let wbase = ((co * cin + ci) * kx_e + kx) * wlen;
                        let in_block = pd.row_offset(n, ci, ix, 0, 0);
                        f(out_slab, &xp[in_block..], &wd[wbase..wbase + wlen], bg);
                        continue;
                    }
                    for ky in 0..ky_e {
                        let wbase = ((((co * cin + ci) * kx_e + kx) * ky_e) + ky) * kz_e * kt_e;
                        for oy in 0..od.y {
                            let iy = oy * sy + ky;
                            let in_plane = pd.row_offset(n, ci, ix, iy, 0);
                            let out_plane = oy * od.z * od.t;
                            for kz in 0..kz_e {
                                for kt in 0..kt_e {
                                    let wv = wd[wbase + kz * kt_e + kt];
                                    for oz in 0..od.z {
                                        let irow = in_plane + (oz * sz + kz) * pd.t + kt;
                                        let orow = out_plane + oz * od.t;
                                        axpy_gather(
                                            &mut out_slab[orow..orow + od.t],
                                            &xp[irow..],
                                            st,
                                            wv,
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients produced by [`backward`]; each is a flat buffer matching the
/// corresponding tensor's layout.
pub struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub kernel: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

/// Reverse-mode gradients of the convolution.
///
/// `grad_out` must have the forward output's shape. The input gradient is a
/// scatter through the same padded geometry as the forward pass; the kernel
/// gradient is a family of input/output dot products. Both are parallelized
/// over slabs that each task owns exclusively, so accumulation order is
/// fixed and results are reproducible across thread counts.
pub fn backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    spec: &ConvSpec,
    grad_out: &[S],
    need_input: bool,
    need_kernel: bool,
    need_bias: bool,
) -> Result<ConvGrads<S>> {
    let g = geometry("conv4d_backward", x, w, None, spec)?;
    let od = g.od;
    if grad_out.len() != od.numel() {
        return Err(Error::shape(
            "conv4d_backward",
            format!(
                "grad_out has {} elements, output shape {:?} needs {}",
                grad_out.len(),
                od.to_vec(),
                od.numel()
            ),
        ));
    }
    let pd = g.pd;
    let nd = g.nd;
    let (cin, cout) = (g.cin, g.cout);
    let [kx_e, ky_e, kz_e, kt_e] = g.k;
    let [sx, sy, sz, st] = g.s;
    let go = grad_out;
    let wd = w.data();

    let fused = g.s[1] == 1
        && g.s[2] == 1
        && g.s[3] == 1
        && fused_acc_fn::<S>(ky_e, kz_e, kt_e).is_some();
    let (input_fused, kernel_fused) = if fused && (need_input || need_kernel) {
        backward_fused(x, w, &g, go, need_input, need_kernel)
    } else {
        (None, None)
    };

    let input = if fused {
        input_fused
    } else if need_input {
        // Accumulate into the padded layout, then crop the margins off.
        let mut gxp = vec![S::zero(); pd.numel()];
        let slab = pd.x * pd.y * pd.z * pd.t;
        let block = if st == 1 { block_scatter_fn::<S>(ky_e, kz_e, kt_e) } else { None };
        let bg = BlockGeom::of(&g);
        let wlen = ky_e * kz_e * kt_e;
        gxp.par_chunks_mut(slab).enumerate().for_each(|(idx, gx_slab)| {
            let ci = idx % cin;
            let n = idx / cin;
            for co in 0..cout {
                for ox in 0..od.x {
                    for kx in 0..kx_e {
                        let ix = ox * sx + kx;
                        if let Some(f) = block {
                            let wbase = ((co * cin + ci) * kx_e + kx) * wlen;
                            let go_block = od.row_offset(n, co, ox, 0, 0);
                            let gx_block = ix * pd.y * pd.z * pd.t;
                            f(
                                &mut gx_slab[gx_block..],
                                &go[go_block..go_block + od.y * od.z * od.t],
                                &wd[wbase..wbase + wlen],
                                bg,
                            );
                            continue;
                        }
                        for ky in 0..ky_e {
                            let wbase =
                                ((((co * cin + ci) * kx_e + kx) * ky_e) + ky) * kz_e * kt_e;
                            for oy in 0..od.y {
                                let iy = oy * sy + ky;
                                let go_plane = od.row_offset(n, co, ox, oy, 0);
                                let gx_plane = (ix * pd.y + iy) * pd.z * pd.t;
                                for kz in 0..kz_e {
                                    for kt in 0..kt_e {
                                        let wv = wd[wbase + kz * kt_e + kt];
                                        for oz in 0..od.z {
                                            let grow = go_plane + oz * od.t;
                                            let xrow = gx_plane + (oz * sz + kz) * pd.t + kt;
                                            axpy_scatter(
                                                &mut gx_slab[xrow..],
                                                &go[grow..grow + od.t],
                                                st,
                                                wv,
                                            );
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        // Crop padding margins back to the input extents.
        let mut gx = vec![S::zero(); nd.numel()];
        for n in 0..nd.n {
            for c in 0..cin {
                for ix in 0..nd.x {
                    for iy in 0..nd.y {
                        for iz in 0..nd.z {
                            let src = pd.row_offset(n, c, ix + g.p[0], iy + g.p[1], iz + g.p[2])
                                + g.p[3];
                            let dst = nd.row_offset(n, c, ix, iy, iz);
                            gx[dst..dst + nd.t].copy_from_slice(&gxp[src..src + nd.t]);
                        }
                    }
                }
            }
        }
        Some(gx)
    } else {
        None
    };

    let kernel = if fused {
        kernel_fused
    } else if need_kernel {
        let xp = pad_input(x.data(), &g);
        let mut gw = vec![S::zero(); w.numel()];
        let slab = cin * kx_e * ky_e * kz_e * kt_e;
        let block = if st == 1 { block_dot_fn::<S>(ky_e, kz_e, kt_e) } else { None };
        let bg = BlockGeom::of(&g);
        let wlen = ky_e * kz_e * kt_e;
        gw.par_chunks_mut(slab).enumerate().for_each(|(co, gw_slab)| {
            for n in 0..nd.n {
                for ci in 0..cin {
                    for kx in 0..kx_e {
                        if let Some(f) = block {
                            let mut acc = [S::zero(); 27];
                            for ox in 0..od.x {
                                let ix = ox * sx + kx;
                                let go_block = od.row_offset(n, co, ox, 0, 0);
                                let in_block = pd.row_offset(n, ci, ix, 0, 0);
                                f(
                                    &go[go_block..go_block + od.y * od.z * od.t],
                                    &xp[in_block..],
                                    &mut acc,
                                    bg,
                                );
                            }
                            let base = (ci * kx_e + kx) * wlen;
                            for (i, a) in acc[..wlen].iter().enumerate() {
                                gw_slab[base + i] += *a;
                            }
                            continue;
                        }
                        for ky in 0..ky_e {
                            let mut acc = [S::zero(); 9];
                            for ox in 0..od.x {
                                let ix = ox * sx + kx;
                                for oy in 0..od.y {
                                    let iy = oy * sy + ky;
                                    let go_plane = od.row_offset(n, co, ox, oy, 0);
                                    let in_plane = pd.row_offset(n, ci, ix, iy, 0);
                                    for kz in 0..kz_e {
                                        for kt in 0..kt_e {
                                            let mut s = S::zero();
                                            for oz in 0..od.z {
                                                let grow = go_plane + oz * od.t;
                                                let xrow =
                                                    in_plane + (oz * sz + kz) * pd.t + kt;
                                                s = s + dot_gather(
                                                    &go[grow..grow + od.t],
                                                    &xp[xrow..],
                                                    st,
                                                );
                                            }
                                            acc[kz * kt_e + kt] += s;
                                        }
                                    }
                                }
                            }
                            let base = ((ci * kx_e + kx) * ky_e + ky) * kz_e * kt_e;
                            for (i, a) in acc[..kz_e * kt_e].iter().enumerate() {
                                gw_slab[base + i] += *a;
                            }
                        }
                    }
                }
            }
        });
        Some(gw)
    } else {
        None
    };

    let bias_grad = if need_bias {
        let mut gb = vec![S::zero(); cout];
        let spatial = od.spatial();
        for n in 0..nd.n {
            for (co, gbv) in gb.iter_mut().enumerate() {
                let base = (n * cout + co) * spatial;
                *gbv += go[base..base + spatial].iter().copied().sum::<S>();
            }
        }
        Some(gb)
    } else {
        None
    };

    Ok(ConvGrads {
        input,
        kernel,
        bias: bias_grad,
    })
}

/// Naive formulation: every output frame is the sum over temporal taps of a
/// 3-D convolution applied to the matching input frame. Frames are gathered
/// out of the 4-D volume and re-padded per (output frame, tap) pair — the
/// repeated work the fused kernel exists to avoid. Kept for benchmarking and
/// cross-checking; results agree with [`forward`] to rounding error.
pub fn forward_naive<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let g = geometry("conv4d_naive", x, w, bias, spec)?;
    ensure_finite("conv4d_naive", x, w, bias)?;
    let nd = g.nd;
    let od = g.od;
    let (cin, cout) = (g.cin, g.cout);
    let [kx_e, ky_e, kz_e, kt_e] = g.k;
    let st = g.s[3];
    let pt = g.p[3] as isize;
    let xd = x.data();
    let wd = w.data();

    // Temporal kernel slices, each a contiguous 3-D kernel [cout,cin,kx,ky,kz].
    let slice_len = cout * cin * kx_e * ky_e * kz_e;
    let mut kslices = vec![vec![S::zero(); slice_len]; kt_e];
    for (i, v) in wd.iter().enumerate() {
        let kt = i % kt_e;
        kslices[kt][i / kt_e] = *v;
    }

    let frame_in = cin * nd.x * nd.y * nd.z;
    let frame_out = cout * od.x * od.y * od.z;
    let mut frame = vec![S::zero(); frame_in];
    let mut out3 = vec![S::zero(); frame_out];
    let mut out = Tensor::zeros(&od.to_vec());
    let out_data = out.data_mut();

    for n in 0..nd.n {
        for ot in 0..od.t {
            // Bias initializes each output channel of this frame.
            match bias {
                Some(b) => {
                    let ch = od.x * od.y * od.z;
                    for (co, blk) in out3.chunks_mut(ch).enumerate() {
                        blk.fill(b.data()[co]);
                    }
                }
                None => out3.fill(S::zero()),
            }
            for (kt, ksl) in kslices.iter().enumerate() {
                let it = (ot * st + kt) as isize - pt;
                if it < 0 || it >= nd.t as isize {
                    continue;
                }
                gather_frame(xd, &nd, n, it as usize, &mut frame);
                conv3d_accum(
                    &frame,
                    [nd.x, nd.y, nd.z],
                    ksl,
                    (cout, cin),
                    [kx_e, ky_e, kz_e],
                    [g.s[0], g.s[1], g.s[2]],
                    [od.x, od.y, od.z],
                    &mut out3,
                );
            }
            scatter_frame(&out3, &od, n, ot, out_data);
        }
    }
    Ok(out)
}

/// Pull one time slice `[c, x, y, z]` out of the 4-D layout.
fn gather_frame<S: Scalar>(xd: &[S], nd: &Dims6, n: usize, it: usize, frame: &mut [S]) {
    let mut dst = 0;
    for c in 0..nd.c {
        for ix in 0..nd.x {
            for iy in 0..nd.y {
                let mut src = nd.row_offset(n, c, ix, iy, 0) + it;
                for _ in 0..nd.z {
                    frame[dst] = xd[src];
                    dst += 1;
                    src += nd.t;
                }
            }
        }
    }
}

/// Write one output time slice back into the 4-D layout.
fn scatter_frame<S: Scalar>(out3: &[S], od: &Dims6, n: usize, ot: usize, out: &mut [S]) {
    let mut src = 0;
    for c in 0..od.c {
        for ox in 0..od.x {
            for oy in 0..od.y {
                let mut dst = od.row_offset(n, c, ox, oy, 0) + ot;
                for _ in 0..od.z {
                    out[dst] = out3[src];
                    src += 1;
                    dst += od.t;
                }
            }
        }
    }
}

/// Zero-padded 3-D convolution accumulating into `out3`.
#[allow(clippy::too_many_arguments)]
fn conv3d_accum<S: Scalar>(
    frame: &[S],
    dims: [usize; 3],
    kernel: &[S],
    ch: (usize, usize),
    k: [usize; 3],
    s: [usize; 3],
    odims: [usize; 3],
    out3: &mut [S],
) {
    let (cout, cin) = ch;
    let [dx, dy, dz] = dims;
    let p = k.map(|ke| (ke - 1) / 2);
    let [px_d, py_d, pz_d] = [dx + 2 * p[0], dy + 2 * p[1], dz + 2 * p[2]];
    // Pad this frame.
    let mut fp = vec![S::zero(); cin * px_d * py_d * pz_d];
    for c in 0..cin {
        for ix in 0..dx {
            for iy in 0..dy {
                let src = ((c * dx + ix) * dy + iy) * dz;
                let dst = ((c * px_d + ix + p[0]) * py_d + iy + p[1]) * pz_d + p[2];
                fp[dst..dst + dz].copy_from_slice(&frame[src..src + dz]);
            }
        }
    }
    let [ox_d, oy_d, oz_d] = odims;
    for co in 0..cout {
        let out_ch = &mut out3[co * ox_d * oy_d * oz_d..(co + 1) * ox_d * oy_d * oz_d];
        for ci in 0..cin {
            for kx in 0..k[0] {
                for ky in 0..k[1] {
                    let wbase = (((co * cin + ci) * k[0] + kx) * k[1] + ky) * k[2];
                    for ox in 0..ox_d {
                        let ix = ox * s[0] + kx;
                        for oy in 0..oy_d {
                            let iy = oy * s[1] + ky;
                            let in_row = ((ci * px_d + ix) * py_d + iy) * pz_d;
                            let out_row = (ox * oy_d + oy) * oz_d;
                            for (kz, &wv) in kernel[wbase..wbase + k[2]].iter().enumerate() {
                                axpy_gather(
                                    &mut out_ch[out_row..out_row + oz_d],
                                    &fp[in_row + kz..],
                                    s[2],
                                    wv,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Reference implementation: plain loops, explicit bounds tests, no padding
/// buffer. Readable and slow; the other implementations are checked against
/// it in tests.
pub fn forward_direct<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let g = geometry("conv4d_direct", x, w, bias, spec)?;
    ensure_finite("conv4d_direct", x, w, bias)?;
    let nd = g.nd;
    let od = g.od;
    let [kx_e, ky_e, kz_e, kt_e] = g.k;
    let [sx, sy, sz, st] = g.s;
    let p = g.p.map(|v| v as isize);
    let xd = x.data();
    let wd = w.data();
    let mut out = Tensor::zeros(&od.to_vec());
    let out_data = out.data_mut();
    let mut o = 0usize;
    for n in 0..od.n {
        for co in 0..od.c {
            let b = bias.map_or(S::zero(), |bb| bb.data()[co]);
            for ox in 0..od.x {
                for oy in 0..od.y {
                    for oz in 0..od.z {
                        for ot in 0..od.t {
                            let mut acc = b;
                            for ci in 0..g.cin {
                                for kx in 0..kx_e {
                                    let ix = (ox * sx + kx) as isize - p[0];
                                    if ix < 0 || ix >= nd.x as isize {
                                        continue;
                                    }
                                    for ky in 0..ky_e {
                                        let iy = (oy * sy + ky) as isize - p[1];
                                        if iy < 0 || iy >= nd.y as isize {
                                            continue;
                                        }
                                        for kz in 0..kz_e {
                                            let iz = (oz * sz + kz) as isize - p[2];
                                            if iz < 0 || iz >= nd.z as isize {
                                                continue;
                                            }
                                            for kt in 0..kt_e {
                                                let it = (ot * st + kt) as isize - p[3];
                                                if it < 0 || it >= nd.t as isize {
                                                    continue;
                                                }
                                                let xi = nd.row_offset(
                                                    n,
                                                    ci,
                                                    ix as usize,
                                                    iy as usize,
                                                    iz as usize,
                                                ) + it as usize;
                                                let wi = ((((co * g.cin + ci) * kx_e + kx)
                                                    * ky_e
                                                    + ky)
                                                    * kz_e
                                                    + kz)
                                                    * kt_e
                                                    + kt;
                                                acc = xd[xi].mul_add(wd[wi], acc);
                                            }
                                        }
                                    }
                                }
                            }
                            out_data[o] = acc;
                            o += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec3() -> ConvSpec {
        ConvSpec::cube4([1, 1, 1, 1])
    }

    /// A kernel that is 1 at the tap center and 0 elsewhere reproduces its input.
    #[test]
    fn center_delta_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 4, 3, 3, 5], |i| (i as f32) * 0.25 - 10.0);
        let mut w = Tensor::<f32>::zeros(&[1, 1, 3, 3, 3, 3]);
        w.set(&[0, 0, 1, 1, 1, 1], 1.0).unwrap();
        let y = forward(&x, &w, None, &spec3()).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    /// All-ones kernel on a one-hot input counts the neighborhood overlap: the
    /// output at the hot voxel is 1, and so is every in-range neighbor.
    #[test]
    fn ones_kernel_spreads_impulse() {
        let mut x = Tensor::<f32>::zeros(&[1, 1, 5, 5, 5, 5]);
        x.set(&[0, 0, 2, 2, 2, 2], 1.0).unwrap();
        let w = Tensor::<f32>::full(&[1, 1, 3, 3, 3, 3], 1.0);
        let y = forward(&x, &w, None, &spec3()).unwrap();
        assert_eq!(y.at(&[0, 0, 2, 2, 2, 2]).unwrap(), 1.0);
        assert_eq!(y.at(&[0, 0, 1, 2, 3, 2]).unwrap(), 1.0);
        assert_eq!(y.at(&[0, 0, 2, 2, 2, 0]).unwrap(), 0.0); // two steps away in t
        let total: f32 = y.data().iter().sum();
        assert_eq!(total, 81.0); // impulse reached the full 3^4 neighborhood
    }

    #[test]
    fn stride_two_halves_extents_rounding_up() {
        let x = Tensor::<f32>::zeros(&[1, 2, 7, 8, 5, 6]);
        let w = Tensor::<f32>::zeros(&[4, 2, 3, 3, 3, 3]);
        let y = forward(&x, &w, None, &ConvSpec::cube4([2, 2, 2, 2])).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 4, 3, 3]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3, 3, 3]);
        assert!(matches!(
            forward(&x, &w, None, &spec3()),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut x = Tensor::<f32>::zeros(&[1, 1, 3, 3, 3, 3]);
        x.set(&[0, 0, 0, 0, 0, 0], f32::NAN).unwrap();
        let w = Tensor::<f32>::zeros(&[1, 1, 3, 3, 3, 3]);
        assert!(matches!(
            forward(&x, &w, None, &spec3()),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn invalid_kernel_extent_rejected() {
        assert!(ConvSpec::new([3, 3, 5, 3], [1, 1, 1, 1]).is_err());
        assert!(ConvSpec::new([3, 3, 3, 3], [1, 4, 1, 1]).is_err());
    }

    /// The three implementations agree on a non-trivial case.
    #[test]
    fn implementations_agree() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 6, 5, 4, 7], |i| ((i * 37) % 101) as f64 * 0.013 - 0.5);
        let w = Tensor::<f64>::from_fn(&[4, 3, 3, 3, 3, 3], |i| ((i * 53) % 97) as f64 * 0.021 - 1.0);
        let b = Tensor::<f64>::from_fn(&[4], |i| i as f64 * 0.1);
        for stride in [[1, 1, 1, 1], [2, 2, 2, 2], [1, 2, 1, 2]] {
            let spec = ConvSpec::cube4(stride);
            let a = forward(&x, &w, Some(&b), &spec).unwrap();
            let n = forward_naive(&x, &w, Some(&b), &spec).unwrap();
            let d = forward_direct(&x, &w, Some(&b), &spec).unwrap();
            for ((&av, &nv), &dv) in a.data().iter().zip(n.data()).zip(d.data()) {
                assert!((av - nv).abs() < 1e-9, "fused vs naive: {} vs {}", av, nv);
                assert!((av - dv).abs() < 1e-9, "fused vs direct: {} vs {}", av, dv);
            }
        }
    }
}
