//! Reference sparse kernels and the dense oracles they are tested against.
//!
//! Each band keeps a `B`-lane f32 accumulator; lane `l` always belongs to
//! local row `l / k`. At band end the `k` lanes of each row are folded with
//! a pairwise tree (for `k == B` this is the per-row reduction). Groups are
//! visited in storage order, so parallel and sequential runs agree bit for
//! bit.

use std::path::Path;

use crate::error::{GsError, Result};
use crate::exec::Exec;
use crate::fileio::{read_all, write_atomic, Reader};
use crate::format::GsBsrMatrix;
use crate::tensor::DenseTensor;

/// Offsets of every gather a kernel issued, in issue order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelTrace {
    pub banks: usize,
    pub gathers: Vec<Vec<u32>>,
}

impl KernelTrace {
    pub fn new(banks: usize) -> Self {
        KernelTrace {
            banks,
            gathers: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gathers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gathers.is_empty()
    }

    /// `count u32`, then `B × u32` per gather.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.banks * self.gathers.len());
        out.extend((self.gathers.len() as u32).to_le_bytes());
        for g in &self.gathers {
            g.iter().for_each(|v| out.extend(v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], banks: usize) -> Result<Self> {
        if banks == 0 {
            return Err(GsError::InvalidArgument(
                "trace bank count must be positive".into(),
            ));
        }
        let mut r = Reader::new(bytes);
        let count = r.u32("group_count")? as usize;
        let flat = r.u32_vec(
            count
                .checked_mul(banks)
                .ok_or_else(|| GsError::format("group_count", "overflow"))?,
            "offsets",
        )?;
        r.finish("offsets")?;
        Ok(KernelTrace {
            banks,
            gathers: flat.chunks_exact(banks).map(<[u32]>::to_vec).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>, banks: usize) -> Result<Self> {
        Self::from_bytes(&read_all(path.as_ref())?, banks)
    }
}

/// Pairwise tree sum: split in half, sum each half, add.
pub fn tree_sum(x: &[f32]) -> f32 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        n => tree_sum(&x[..n / 2]) + tree_sum(&x[n / 2..]),
    }
}

/// Accumulate one band at gather origin `base`, returning per-local-row sums.
fn run_band(
    g: &GsBsrMatrix,
    band: usize,
    act: &[f32],
    base: usize,
    trace: Option<&mut Vec<Vec<u32>>>,
) -> Result<Vec<f32>> {
    let banks = g.banks();
    let k = g.pattern().elems_per_row();
    let mut acc = vec![0.0f32; banks];
    let mut trace = trace;
    for gi in g.band_groups(band) {
        let idx = g.group_indices(gi);
        for ((a, &w), &o) in acc.iter_mut().zip(g.group_values(gi)).zip(idx) {
            let at = base + o as usize;
            let x = *act.get(at).ok_or_else(|| {
                GsError::InvalidArgument(format!(
                    "gather offset {at} outside activation buffer of length {}",
                    act.len()
                ))
            })?;
            *a += w * x;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(idx.iter().map(|&o| o + base as u32).collect());
        }
    }
    Ok(acc.chunks_exact(k).map(tree_sum).collect())
}

fn check_matrix_operand(g: &GsBsrMatrix, x: &[f32]) -> Result<()> {
    if g.conv().is_some() {
        return Err(GsError::InvalidArgument(
            "matrix holds convolution offsets; use the conv kernel".into(),
        ));
    }
    if x.len() != g.cols() {
        return Err(GsError::Shape(format!(
            "activation length {} != matrix columns {}",
            x.len(),
            g.cols()
        )));
    }
    Ok(())
}

fn spmv_impl(
    g: &GsBsrMatrix,
    x: &[f32],
    exec: Exec,
    traced: bool,
) -> Result<(Vec<f32>, Option<KernelTrace>)> {
    check_matrix_operand(g, x)?;
    let k = g.pattern().elems_per_row();
    let rows_per_band = g.pattern().band_rows();
    let per_band = exec.try_map(g.band_count(), |band| {
        let mut t = traced.then(Vec::new);
        let sums = run_band(g, band, x, 0, t.as_mut())?;
        Ok::<_, GsError>((sums, t))
    })?;
    let mut out = vec![0.0f32; g.rows()];
    let mut trace = traced.then(|| KernelTrace::new(g.banks()));
    for (band, (sums, t)) in per_band.into_iter().enumerate() {
        for (lr, s) in sums.into_iter().enumerate().take(rows_per_band) {
            out[g.lane_row(band, lr * k)] = s;
        }
        if let (Some(tr), Some(t)) = (trace.as_mut(), t) {
            tr.gathers.extend(t);
        }
    }
    Ok((out, trace))
}

/// Horizontal kernel: one row per band, `B` lanes reduced per row.
pub fn spmv_horizontal(g: &GsBsrMatrix, x: &[f32]) -> Result<Vec<f32>> {
    if !g.pattern().is_horizontal() {
        return Err(GsError::InvalidArgument(format!(
            "horizontal kernel needs k == B, got {}",
            g.pattern()
        )));
    }
    Ok(spmv_impl(g, x, Exec::default(), false)?.0)
}

/// Vertical and hybrid kernel (`k < B`); scatter results land on the
/// original rows.
pub fn spmv_vertical_hybrid(g: &GsBsrMatrix, x: &[f32]) -> Result<Vec<f32>> {
    if g.pattern().is_horizontal() {
        return Err(GsError::InvalidArgument(format!(
            "{} is horizontal; use the horizontal kernel",
            g.pattern()
        )));
    }
    Ok(spmv_impl(g, x, Exec::default(), false)?.0)
}

/// Dispatch on `k`.
pub fn spmv(g: &GsBsrMatrix, x: &[f32]) -> Result<Vec<f32>> {
    spmv_with(g, x, Exec::default())
}

pub fn spmv_with(g: &GsBsrMatrix, x: &[f32], exec: Exec) -> Result<Vec<f32>> {
    Ok(spmv_impl(g, x, exec, false)?.0)
}

pub fn spmv_traced(g: &GsBsrMatrix, x: &[f32]) -> Result<(Vec<f32>, KernelTrace)> {
    let (y, t) = spmv_impl(g, x, Exec::default(), true)?;
    Ok((y, t.expect("tracing requested")))
}

/// Zero-pad an `H × W × C` buffer by `(ph, pw)` on each side.
fn pad_activation(
    act: &[f32],
    (h, w, c): (usize, usize, usize),
    (ph, pw): (usize, usize),
) -> Vec<f32> {
    if ph == 0 && pw == 0 {
        return act.to_vec();
    }
    let wp = w + 2 * pw;
    let mut out = vec![0.0f32; (h + 2 * ph) * wp * c];
    for y in 0..h {
        let dst = ((y + ph) * wp + pw) * c;
        out[dst..dst + w * c].copy_from_slice(&act[y * w * c..(y + 1) * w * c]);
    }
    out
}

/// Activations as `(H, W, C)`; rank-2 input is a 1-D signal `W × C`.
fn activation_dims(act: &DenseTensor) -> Result<(usize, usize, usize)> {
    match *act.shape() {
        [h, w, c] => Ok((h, w, c)),
        [w, c] => Ok((1, w, c)),
        _ => Err(GsError::Shape(format!(
            "conv activations must be H×W×C or W×C, got shape {:?}",
            act.shape()
        ))),
    }
}

fn output_extent(
    len: usize,
    pad: usize,
    kernel: usize,
    stride: usize,
    axis: &str,
) -> Result<usize> {
    if stride == 0 {
        return Err(GsError::InvalidArgument(format!(
            "{axis} stride must be positive"
        )));
    }
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(GsError::Shape(format!(
            "padded {axis} extent {padded} is smaller than the kernel ({kernel})"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn sparse_conv_impl(
    g: &GsBsrMatrix,
    act: &DenseTensor,
    stride: (usize, usize),
    padding: (usize, usize),
    exec: Exec,
    traced: bool,
) -> Result<(DenseTensor, Option<KernelTrace>)> {
    let geom = *g
        .conv()
        .ok_or_else(|| GsError::InvalidArgument("matrix has no conv geometry; use spmv".into()))?;
    let (h, w, c) = activation_dims(act)?;
    if c != geom.in_channels {
        return Err(GsError::Shape(format!(
            "activation channels {c} != filter input channels {}",
            geom.in_channels
        )));
    }
    let wp = w + 2 * padding.1;
    if wp != geom.act_width {
        return Err(GsError::Shape(format!(
            "activation width {wp} (after padding) != width {} the filter was encoded for; re-encode with --act-width {wp}",
            geom.act_width
        )));
    }
    let ho = output_extent(h, padding.0, geom.kernel_h, stride.0, "height")?;
    let wo = output_extent(w, padding.1, geom.kernel_w, stride.1, "width")?;
    let padded = pad_activation(&act.values_f32(), (h, w, c), padding);
    let k = g.pattern().elems_per_row();
    let rows_per_band = g.pattern().band_rows();
    let pixels = exec.try_map(ho * wo, |p| {
        let (oy, ox) = (p / wo, p % wo);
        let base = (oy * stride.0 * wp + ox * stride.1) * c;
        let mut t = traced.then(Vec::new);
        let mut col = vec![0.0f32; g.rows()];
        for band in 0..g.band_count() {
            let sums = run_band(g, band, &padded, base, t.as_mut())?;
            for (lr, s) in sums.into_iter().enumerate().take(rows_per_band) {
                col[g.lane_row(band, lr * k)] = s;
            }
        }
        Ok::<_, GsError>((col, t))
    })?;
    let plane = ho * wo;
    let mut out = vec![0.0f32; g.rows() * plane];
    let mut trace = traced.then(|| KernelTrace::new(g.banks()));
    for (p, (col, t)) in pixels.into_iter().enumerate() {
        for (o, v) in col.into_iter().enumerate() {
            out[o * plane + p] = v;
        }
        if let (Some(tr), Some(t)) = (trace.as_mut(), t) {
            tr.gathers.extend(t);
        }
    }
    Ok((DenseTensor::from_f32(vec![g.rows(), ho, wo], out)?, trace))
}

/// Direct sparse convolution over channels-last activations. Output is
/// `O × H_out × W_out`.
pub fn sparse_conv(
    g: &GsBsrMatrix,
    act: &DenseTensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<DenseTensor> {
    sparse_conv_with(g, act, stride, padding, Exec::default())
}

pub fn sparse_conv_with(
    g: &GsBsrMatrix,
    act: &DenseTensor,
    stride: (usize, usize),
    padding: (usize, usize),
    exec: Exec,
) -> Result<DenseTensor> {
    Ok(sparse_conv_impl(g, act, stride, padding, exec, false)?.0)
}

pub fn sparse_conv_traced(
    g: &GsBsrMatrix,
    act: &DenseTensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(DenseTensor, KernelTrace)> {
    let (y, t) = sparse_conv_impl(g, act, stride, padding, Exec::default(), true)?;
    Ok((y, t.expect("tracing requested")))
}

/// `y[i] = Σ_j w[i][j]·x[j]`, `j` ascending, plain f32 accumulation.
pub fn dense_matvec(w: &DenseTensor, x: &[f32]) -> Result<Vec<f32>> {
    let (m, n) = w.matrix_dims()?;
    if x.len() != n {
        return Err(GsError::Shape(format!(
            "activation length {} != {n}",
            x.len()
        )));
    }
    let v = w.values_f32();
    Ok((0..m)
        .map(|i| {
            v[i * n..(i + 1) * n]
                .iter()
                .zip(x)
                .fold(0.0f32, |acc, (&a, &b)| acc + a * b)
        })
        .collect())
}

/// Direct convolution of an `O × h × w × I` filter (or `O × L × I`) with
/// `H × W × C` activations (or `W × C`). Loops `o, oy, ox, ky, kx, c`, all
/// ascending, plain f32 accumulation.
pub fn dense_conv(
    filter: &DenseTensor,
    act: &DenseTensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<DenseTensor> {
    let (o, kh, kw, ci) = match *filter.shape() {
        [o, kh, kw, ci] => (o, kh, kw, ci),
        [o, l, ci] => (o, 1, l, ci),
        _ => {
            return Err(GsError::Shape(format!(
                "filter must be O×h×w×I or O×L×I, got {:?}",
                filter.shape()
            )))
        }
    };
    let (h, w, c) = activation_dims(act)?;
    if c != ci {
        return Err(GsError::Shape(format!(
            "activation channels {c} != filter channels {ci}"
        )));
    }
    let ho = output_extent(h, padding.0, kh, stride.0, "height")?;
    let wo = output_extent(w, padding.1, kw, stride.1, "width")?;
    let wp = w + 2 * padding.1;
    let a = pad_activation(&act.values_f32(), (h, w, c), padding);
    let f = filter.values_f32();
    let mut out = vec![0.0f32; o * ho * wo];
    for oc in 0..o {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0f32;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let frow = ((oc * kh + ky) * kw + kx) * ci;
                        let arow = ((oy * stride.0 + ky) * wp + ox * stride.1 + kx) * c;
                        for ch in 0..c {
                            acc += f[frow + ch] * a[arow + ch];
                        }
                    }
                }
                out[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    DenseTensor::from_f32(vec![o, ho, wo], out)
}
