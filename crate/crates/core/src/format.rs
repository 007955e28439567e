//! Compact gather-scatter format: one row of `B` values and one row of `B`
//! gather offsets per group, plus a per-band prefix count of groups.
//!
//! GSSF layout, all little-endian:
//!
//! ```text
//! magic "GSSF" | version u16 = 1 | family u8 (0=gs, 1=gs-scatter, 2=block-as-gs)
//! | B u16 | k u16 | tensor-kind u8 (0=matrix, 1=conv1d, 2=conv2d) | m u32 | n u32
//! | [conv: O, h, w, I, W_act, C as u32]
//! | group_count u32 | indptr (bands+1) × u32 | indices group_count×B × u32
//! | values group_count×B × f32 | [scatter: m × u32 row_perm]
//! ```

use std::path::Path;

use crate::error::{GsError, Result};
use crate::exec::Exec;
use crate::fileio::{read_all, write_atomic, Reader};
use crate::patterns::{
    check_permutation, validate_block_mask, validate_gs_mask, validate_scatter_mask, ConvGeometry,
    ConvLayout, Family, MaskMatrix, PatternDescriptor,
};
use crate::pruner::{Group, GroupedMask};
use crate::tensor::DenseTensor;

pub const GSSF_MAGIC: &[u8; 4] = b"GSSF";
pub const GSSF_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GsBsrMatrix {
    pattern: PatternDescriptor,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
    indices: Vec<u32>,
    indptr: Vec<u32>,
    conv: Option<ConvGeometry>,
    row_perm: Option<Vec<usize>>,
}

impl GsBsrMatrix {
    /// Assemble from raw tables, checking every structural invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        pattern: PatternDescriptor,
        rows: usize,
        cols: usize,
        values: Vec<f32>,
        indices: Vec<u32>,
        indptr: Vec<u32>,
        conv: Option<ConvGeometry>,
        row_perm: Option<Vec<usize>>,
    ) -> Result<Self> {
        let g = GsBsrMatrix {
            pattern,
            rows,
            cols,
            values,
            indices,
            indptr,
            conv,
            row_perm,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn pattern(&self) -> &PatternDescriptor {
        &self.pattern
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn banks(&self) -> usize {
        self.pattern.banks()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn indptr(&self) -> &[u32] {
        &self.indptr
    }

    pub fn conv(&self) -> Option<&ConvGeometry> {
        self.conv.as_ref()
    }

    pub fn row_perm(&self) -> Option<&[usize]> {
        self.row_perm.as_deref()
    }

    pub fn group_count(&self) -> usize {
        self.indices.len() / self.banks()
    }

    pub fn band_count(&self) -> usize {
        self.indptr.len() - 1
    }

    /// Stored entries, `group_count · B`.
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Group index range of `band`.
    pub fn band_groups(&self, band: usize) -> std::ops::Range<usize> {
        self.indptr[band] as usize..self.indptr[band + 1] as usize
    }

    pub fn group_values(&self, group: usize) -> &[f32] {
        let b = self.banks();
        &self.values[group * b..(group + 1) * b]
    }

    pub fn group_indices(&self, group: usize) -> &[u32] {
        let b = self.banks();
        &self.indices[group * b..(group + 1) * b]
    }

    /// Original row of lane `lane` in a group of `band`.
    pub fn lane_row(&self, band: usize, lane: usize) -> usize {
        let pos = band * self.pattern.band_rows() + lane / self.pattern.elems_per_row();
        match &self.row_perm {
            Some(perm) => perm[pos],
            None => pos,
        }
    }

    /// Flattened column addressed by stored index `idx`.
    pub fn index_column(&self, idx: u32) -> Result<usize> {
        let idx = idx as usize;
        match &self.conv {
            Some(g) => g.offset_to_column(idx),
            None if idx < self.cols => Ok(idx),
            None => Err(GsError::Invariant(format!(
                "index {idx} out of range for {} columns",
                self.cols
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.pattern;
        let banks = p.banks();
        let band_rows = p.band_rows();
        let k = p.elems_per_row();
        if p.family() == Family::Irregular {
            return Err(GsError::Invariant(
                "irregular pattern cannot be encoded".into(),
            ));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(GsError::Invariant("matrix extents must be positive".into()));
        }
        if self.rows % band_rows != 0 {
            return Err(GsError::Invariant(format!(
                "{} rows not divisible by B/k = {band_rows}",
                self.rows
            )));
        }
        let bands = self.rows / band_rows;
        if self.indptr.len() != bands + 1 {
            return Err(GsError::Invariant(format!(
                "indptr has {} entries, expected {}",
                self.indptr.len(),
                bands + 1
            )));
        }
        if self.indices.len() % banks != 0 || self.values.len() != self.indices.len() {
            return Err(GsError::Invariant(format!(
                "indices ({}) and values ({}) must both hold group_count × {banks} entries",
                self.indices.len(),
                self.values.len()
            )));
        }
        if self.indptr[0] != 0 || self.indptr.windows(2).any(|w| w[1] < w[0]) {
            return Err(GsError::Invariant(
                "indptr must start at 0 and be non-decreasing".into(),
            ));
        }
        if *self.indptr.last().unwrap() as usize != self.group_count() {
            return Err(GsError::Invariant(format!(
                "indptr ends at {}, group count is {}",
                self.indptr.last().unwrap(),
                self.group_count()
            )));
        }
        if let Some(g) = &self.conv {
            g.validate()?;
            if g.rows() != self.rows || g.cols() != self.cols {
                return Err(GsError::Invariant(format!(
                    "conv geometry flattens to {}x{}, matrix is {}x{}",
                    g.rows(),
                    g.cols(),
                    self.rows,
                    self.cols
                )));
            }
        }
        match (&self.row_perm, p.family()) {
            (Some(perm), Family::GsScatter) => check_permutation(perm, self.rows)?,
            (None, Family::GsScatter) => {
                return Err(GsError::Invariant(
                    "scatter matrix needs a row permutation".into(),
                ))
            }
            (Some(_), _) => {
                return Err(GsError::Invariant(
                    "row permutation on a non-scatter matrix".into(),
                ))
            }
            (None, _) => {}
        }
        let mut covered = vec![false; self.rows * self.cols];
        for band in 0..bands {
            for gi in self.band_groups(band) {
                let idx = self.group_indices(gi);
                if p.family() != Family::Block {
                    let mut seen = vec![false; banks];
                    for &o in idx {
                        if std::mem::replace(&mut seen[o as usize % banks], true) {
                            return Err(GsError::Invariant(format!(
                                "group {gi}: indices {idx:?} repeat residue {} mod {banks}",
                                o as usize % banks
                            )));
                        }
                    }
                }
                let mut prev_col = None;
                for (lane, &o) in idx.iter().enumerate() {
                    let col = self
                        .index_column(o)
                        .map_err(|e| GsError::Invariant(format!("group {gi}, lane {lane}: {e}")))?;
                    if p.family() == Family::Block {
                        let ok = match prev_col {
                            Some(pc) if lane % k != 0 => col == pc + 1,
                            _ => col % k == 0,
                        };
                        if !ok {
                            return Err(GsError::Invariant(format!(
                                "group {gi} is not a grid-aligned {band_rows}x{k} block"
                            )));
                        }
                    }
                    prev_col = Some(col);
                    let row = self.lane_row(band, lane);
                    if std::mem::replace(&mut covered[row * self.cols + col], true) {
                        return Err(GsError::Invariant(format!(
                            "group {gi}: coordinate ({row},{col}) stored twice"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Occupancy of the stored entries.
    pub fn mask(&self) -> MaskMatrix {
        let mut mask = MaskMatrix::zeros(self.rows, self.cols);
        for band in 0..self.band_count() {
            for gi in self.band_groups(band) {
                for (lane, &o) in self.group_indices(gi).iter().enumerate() {
                    let col = self.index_column(o).expect("validated");
                    mask.set(self.lane_row(band, lane), col, true);
                }
            }
        }
        mask
    }

    pub fn to_gssf_bytes(&self) -> Vec<u8> {
        let p = self.pattern;
        let mut out = Vec::with_capacity(64 + 8 * self.nnz() + 4 * self.indptr.len());
        out.extend_from_slice(GSSF_MAGIC);
        out.extend(GSSF_VERSION.to_le_bytes());
        out.push(match p.family() {
            Family::GsHybrid => 0,
            Family::GsScatter => 1,
            Family::Block => 2,
            Family::Irregular => unreachable!("validated at construction"),
        });
        out.extend((p.banks() as u16).to_le_bytes());
        out.extend((p.elems_per_row() as u16).to_le_bytes());
        out.push(match self.conv.map(|g| g.layout) {
            None => 0,
            Some(ConvLayout::OLI) => 1,
            Some(ConvLayout::OhwI) => 2,
        });
        out.extend((self.rows as u32).to_le_bytes());
        out.extend((self.cols as u32).to_le_bytes());
        if let Some(g) = &self.conv {
            for v in [
                g.out_channels,
                g.kernel_h,
                g.kernel_w,
                g.in_channels,
                g.act_width,
                g.act_channels,
            ] {
                out.extend((v as u32).to_le_bytes());
            }
        }
        out.extend((self.group_count() as u32).to_le_bytes());
        self.indptr.iter().for_each(|v| out.extend(v.to_le_bytes()));
        self.indices
            .iter()
            .for_each(|v| out.extend(v.to_le_bytes()));
        self.values
            .iter()
            .for_each(|v| out.extend(v.to_bits().to_le_bytes()));
        if let Some(perm) = &self.row_perm {
            perm.iter()
                .for_each(|&v| out.extend((v as u32).to_le_bytes()));
        }
        out
    }

    pub fn from_gssf_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != GSSF_MAGIC {
            return Err(GsError::format(
                "magic",
                format!(
                    "expected \"GSSF\", found {:?}",
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = r.u16("version")?;
        if version != GSSF_VERSION {
            return Err(GsError::format(
                "version",
                format!("unsupported version {version}"),
            ));
        }
        let family = match r.u8("family")? {
            0 => Family::GsHybrid,
            1 => Family::GsScatter,
            2 => Family::Block,
            c => {
                return Err(GsError::format(
                    "family",
                    format!("unknown family code {c}"),
                ))
            }
        };
        let banks = r.u16("B")? as usize;
        let k = r.u16("k")? as usize;
        let pattern = PatternDescriptor::new(family, banks, k)
            .map_err(|e| GsError::format("k", e.to_string()))?;
        let kind = r.u8("tensor-kind")?;
        let rows = r.u32("m")? as usize;
        let cols = r.u32("n")? as usize;
        let conv = match kind {
            0 => None,
            1 | 2 => {
                let v = r.u32_vec(6, "conv")?;
                let v: Vec<usize> = v.into_iter().map(|x| x as usize).collect();
                let g = ConvGeometry {
                    layout: if kind == 1 {
                        ConvLayout::OLI
                    } else {
                        ConvLayout::OhwI
                    },
                    out_channels: v[0],
                    kernel_h: v[1],
                    kernel_w: v[2],
                    in_channels: v[3],
                    act_width: v[4],
                    act_channels: v[5],
                };
                g.validate()
                    .map_err(|e| GsError::format("conv", e.to_string()))?;
                Some(g)
            }
            c => return Err(GsError::format("tensor-kind", format!("unknown kind {c}"))),
        };
        let group_count = r.u32("group_count")? as usize;
        if pattern.band_rows() == 0 || rows % pattern.band_rows() != 0 {
            return Err(GsError::format(
                "m",
                format!("{rows} rows not divisible by B/k = {}", pattern.band_rows()),
            ));
        }
        let bands = rows / pattern.band_rows();
        let indptr = r.u32_vec(bands + 1, "indptr")?;
        let entries = group_count
            .checked_mul(banks)
            .ok_or_else(|| GsError::format("group_count", "overflow"))?;
        let indices = r.u32_vec(entries, "indices")?;
        let values = r.f32_vec(entries, "values")?;
        let row_perm = if family == Family::GsScatter {
            Some(
                r.u32_vec(rows, "row_perm")?
                    .into_iter()
                    .map(|v| v as usize)
                    .collect(),
            )
        } else {
            None
        };
        r.finish("trailer")?;
        Self::from_parts(pattern, rows, cols, values, indices, indptr, conv, row_perm)
    }
}

pub fn save_gssf(g: &GsBsrMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &g.to_gssf_bytes())
}

pub fn load_gssf(path: impl AsRef<Path>) -> Result<GsBsrMatrix> {
    GsBsrMatrix::from_gssf_bytes(&read_all(path.as_ref())?)
}

/// Encode masked weights. With a conv geometry each flattened column is
/// replaced by its activation offset for that geometry's `act_width`.
pub fn encode(
    w: &DenseTensor,
    gm: &GroupedMask,
    conv: Option<&ConvGeometry>,
) -> Result<GsBsrMatrix> {
    let (m, n) = w.matrix_dims()?;
    if (m, n) != (gm.mask.rows(), gm.mask.cols()) {
        return Err(GsError::Shape(format!(
            "weights {m}x{n} vs mask {}x{}",
            gm.mask.rows(),
            gm.mask.cols()
        )));
    }
    if let Some(g) = conv {
        g.validate()?;
        if (g.rows(), g.cols()) != (m, n) {
            return Err(GsError::Shape(format!(
                "conv geometry flattens to {}x{}, weights are {m}x{n}",
                g.rows(),
                g.cols()
            )));
        }
    }
    gm.validate()?;
    let p = gm.pattern;
    let banks = p.banks();
    let vals = w.values_f32();
    let pos = gm.row_positions();
    let mut per_band = vec![0u32; gm.band_count()];
    let mut values = Vec::with_capacity(gm.groups.len() * banks);
    let mut indices = Vec::with_capacity(gm.groups.len() * banks);
    for (gi, group) in gm.groups.iter().enumerate() {
        per_band[pos[group[0].0] / p.band_rows()] += 1;
        let start = indices.len();
        for &(r, c) in group {
            values.push(vals[r * n + c]);
            let idx = match conv {
                Some(g) => g.column_to_offset(c)?,
                None => c,
            };
            indices.push(u32::try_from(idx).map_err(|_| {
                GsError::InvalidArgument(format!("offset {idx} does not fit in 32 bits"))
            })?);
        }
        if p.family() != Family::Block {
            let idx = &indices[start..];
            let mut seen = vec![false; banks];
            if idx
                .iter()
                .any(|&o| std::mem::replace(&mut seen[o as usize % banks], true))
            {
                return Err(GsError::Invariant(format!(
                    "group {gi}: offsets {idx:?} are not conflict-free mod {banks}"
                )));
            }
        }
    }
    let mut indptr = Vec::with_capacity(per_band.len() + 1);
    indptr.push(0u32);
    for c in per_band {
        indptr.push(indptr.last().unwrap() + c);
    }
    GsBsrMatrix::from_parts(
        p,
        m,
        n,
        values,
        indices,
        indptr,
        conv.copied(),
        gm.row_perm.clone(),
    )
}

/// Dense `m × n` matrix holding the stored values, zeros elsewhere, in
/// original row order.
pub fn decode(g: &GsBsrMatrix) -> Result<DenseTensor> {
    let n = g.cols();
    let mut out = vec![0.0f32; g.rows() * n];
    for band in 0..g.band_count() {
        for gi in g.band_groups(band) {
            for (lane, (&o, &v)) in g
                .group_indices(gi)
                .iter()
                .zip(g.group_values(gi))
                .enumerate()
            {
                let col = g.index_column(o)?;
                out[g.lane_row(band, lane) * n + col] = v;
            }
        }
    }
    DenseTensor::from_f32(vec![g.rows(), n], out)
}

/// Partition a valid mask into conflict-free gather groups.
///
/// Horizontal: per row, residue buckets sorted by column are zipped
/// round-robin. Vertical/hybrid/scatter: each band is a regular bipartite
/// multigraph between row slots (`k` per row) and residues; peeling one
/// perfect matching per group always succeeds for a valid mask. The lowest
/// remaining column of a `(row, residue)` bucket is used first. Block:
/// one group per grid block.
pub fn group_mask(
    mask: &MaskMatrix,
    p: &PatternDescriptor,
    row_perm: Option<&[usize]>,
) -> Result<GroupedMask> {
    group_mask_with(mask, p, row_perm, Exec::default())
}

pub fn group_mask_with(
    mask: &MaskMatrix,
    p: &PatternDescriptor,
    row_perm: Option<&[usize]>,
    exec: Exec,
) -> Result<GroupedMask> {
    let m = mask.rows();
    let band_rows = p.band_rows();
    let reject =
        |detail: String| GsError::Invariant(format!("mask does not satisfy {p}: {detail}"));
    let order: Vec<usize> = match (p.family(), row_perm) {
        (Family::Irregular, _) => {
            return Err(GsError::InvalidArgument(
                "irregular masks have no grouping".into(),
            ))
        }
        (Family::GsScatter, Some(perm)) => {
            let rep = validate_scatter_mask(mask, p, perm)?;
            if !rep.valid {
                return Err(reject(rep.violation.map(|v| v.message).unwrap_or_default()));
            }
            perm.to_vec()
        }
        (Family::GsScatter, None) => {
            return Err(GsError::InvalidArgument(
                "scatter grouping needs a row permutation".into(),
            ))
        }
        (_, Some(_)) => {
            return Err(GsError::InvalidArgument(
                "row permutation is only valid for scatter patterns".into(),
            ))
        }
        (Family::GsHybrid, None) => {
            let rep = validate_gs_mask(mask, p)?;
            if !rep.valid {
                return Err(reject(rep.violation.map(|v| v.message).unwrap_or_default()));
            }
            (0..m).collect()
        }
        (Family::Block, None) => {
            let rep = validate_block_mask(mask, p)?;
            if !rep.valid {
                return Err(reject(rep.violation.map(|v| v.message).unwrap_or_default()));
            }
            (0..m).collect()
        }
    };
    let per_band = exec.try_map(m / band_rows, |band| {
        let rows = &order[band * band_rows..(band + 1) * band_rows];
        match p.family() {
            Family::Block => Ok(block_groups(mask, p, rows)),
            _ if p.is_horizontal() => Ok(round_robin_groups(mask, p.banks(), rows[0])),
            _ => matching_groups(mask, p, rows, band),
        }
    })?;
    Ok(GroupedMask {
        pattern: *p,
        mask: mask.clone(),
        groups: per_band.into_iter().flatten().collect(),
        row_perm: row_perm.map(<[usize]>::to_vec),
    })
}

fn round_robin_groups(mask: &MaskMatrix, banks: usize, row: usize) -> Vec<Group> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); banks];
    for c in mask.row_cols(row) {
        buckets[c % banks].push(c);
    }
    let count = buckets[0].len();
    (0..count)
        .map(|g| buckets.iter().map(|b| (row, b[g])).collect())
        .collect()
}

fn block_groups(mask: &MaskMatrix, p: &PatternDescriptor, rows: &[usize]) -> Vec<Group> {
    let k = p.elems_per_row();
    (0..mask.cols() / k)
        .filter(|&bc| mask.get(rows[0], bc * k))
        .map(|bc| {
            rows.iter()
                .flat_map(|&r| (bc * k..(bc + 1) * k).map(move |c| (r, c)))
                .collect()
        })
        .collect()
}

fn matching_groups(
    mask: &MaskMatrix,
    p: &PatternDescriptor,
    rows: &[usize],
    band: usize,
) -> Result<Vec<Group>> {
    let banks = p.banks();
    let k = p.elems_per_row();
    // buckets[local_row][residue], columns ascending, consumed from the front
    let mut buckets: Vec<Vec<std::collections::VecDeque<usize>>> = rows
        .iter()
        .map(|&r| {
            let mut b = vec![std::collections::VecDeque::new(); banks];
            for c in mask.row_cols(r) {
                b[c % banks].push_back(c);
            }
            b
        })
        .collect();
    let nnz: usize = rows.iter().map(|&r| mask.row_nnz(r)).sum();
    let mut groups = Vec::with_capacity(nnz / banks);
    for _ in 0..nnz / banks {
        // slot s belongs to local row s / k
        let mut slot_of_res: Vec<Option<usize>> = vec![None; banks];
        for slot in 0..banks {
            let mut seen = vec![false; banks];
            if !augment(slot, k, &buckets, &mut slot_of_res, &mut seen) {
                return Err(GsError::Invariant(format!(
                    "band {band}: no conflict-free group found (mask not {p})"
                )));
            }
        }
        let mut entries: Vec<(usize, usize, usize)> = slot_of_res
            .iter()
            .enumerate()
            .map(|(res, s)| {
                let lr = s.expect("perfect matching") / k;
                let col = buckets[lr][res]
                    .pop_front()
                    .expect("matched bucket is non-empty");
                (lr, res, col)
            })
            .collect();
        entries.sort_unstable();
        groups.push(
            entries
                .into_iter()
                .map(|(lr, _, c)| (rows[lr], c))
                .collect(),
        );
    }
    Ok(groups)
}

/// Kuhn augmenting path from `slot` over residues ascending.
fn augment(
    slot: usize,
    k: usize,
    buckets: &[Vec<std::collections::VecDeque<usize>>],
    slot_of_res: &mut [Option<usize>],
    seen: &mut [bool],
) -> bool {
    let lr = slot / k;
    for res in 0..slot_of_res.len() {
        if seen[res] || buckets[lr][res].is_empty() {
            continue;
        }
        seen[res] = true;
        let free = match slot_of_res[res] {
            None => true,
            Some(other) => augment(other, k, buckets, slot_of_res, seen),
        };
        if free {
            slot_of_res[res] = Some(slot);
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::FilterCoord;
    use crate::pruner::{prune_gs_band, prune_gs_horizontal, prune_gs_scatter, ThresholdSpec};
    use crate::tensor::{gen_tensor, Distribution};

    fn random(m: usize, n: usize, seed: u64) -> DenseTensor {
        gen_tensor(&[m, n], Distribution::Uniform { lo: -1.0, hi: 1.0 }, seed).unwrap()
    }

    fn masked(w: &DenseTensor, mask: &MaskMatrix) -> DenseTensor {
        let v: Vec<f32> = w
            .values_f32()
            .iter()
            .zip(mask.bits())
            .map(|(&x, &b)| if b { x } else { 0.0 })
            .collect();
        DenseTensor::from_f32(w.shape().to_vec(), v).unwrap()
    }

    #[test]
    fn single_row_group_layout() {
        let vals: Vec<f32> = (0..16).map(|i| i as f32 + 0.5).collect();
        let w = DenseTensor::from_f32(vec![1, 16], vals).unwrap();
        let mut mask = MaskMatrix::zeros(1, 16);
        for c in [4, 7, 13, 14] {
            mask.set(0, c, true);
        }
        let p = PatternDescriptor::gs(4, 4).unwrap();
        let g = encode(&w, &group_mask(&mask, &p, None).unwrap(), None).unwrap();
        // canonical order is by residue: 4->0, 13->1, 14->2, 7->3
        assert_eq!(g.indices(), &[4, 13, 14, 7]);
        assert_eq!(g.values(), &[4.5, 13.5, 14.5, 7.5]);
        assert_eq!(g.indptr(), &[0, 1]);
    }

    #[test]
    fn all_zero_matrix_has_no_groups() {
        let w = DenseTensor::zeros(vec![4, 8]).unwrap();
        let p = PatternDescriptor::gs(4, 2).unwrap();
        let gm = group_mask(&MaskMatrix::zeros(4, 8), &p, None).unwrap();
        let g = encode(&w, &gm, None).unwrap();
        assert_eq!(g.group_count(), 0);
        assert_eq!(g.indptr(), &[0, 0, 0]);
        assert!(decode(&g).unwrap().bit_eq(&w));
    }

    #[test]
    fn conv_first_group_offsets() {
        // 2x2x2x4 filter, taps of the first group at (0,0,0) (0,0,3) (0,1,2) (1,0,1)
        let geom = ConvGeometry::conv2d(2, 2, 2, 4, 8).unwrap();
        let mut mask = MaskMatrix::zeros(2, 16);
        for (o, taps) in [
            (0usize, [(0, 0, 0), (0, 0, 3), (0, 1, 2), (1, 0, 1)]),
            (1, [(0, 0, 1), (0, 1, 0), (1, 0, 2), (1, 1, 3)]),
        ] {
            for (y, x, c) in taps {
                let (_, col) = geom.flatten(FilterCoord { o, y, x, c }).unwrap();
                mask.set(o, col, true);
            }
        }
        let w = random(2, 16, 3);
        let p = PatternDescriptor::gs(4, 4).unwrap();
        let g = encode(&w, &group_mask(&mask, &p, None).unwrap(), Some(&geom)).unwrap();
        let mut first: Vec<u32> = g.group_indices(0).to_vec();
        first.sort_unstable();
        assert_eq!(first, vec![0, 3, 6, 33]);
        assert!(decode(&g).unwrap().bit_eq(&masked(&w, &mask)));
    }

    #[test]
    fn conv_offset_conflict_rejected() {
        // C = 2 with B = 4: the y-row shift of (W-w)*C = 2 breaks residues.
        let geom = ConvGeometry::conv2d(1, 2, 2, 2, 3).unwrap();
        let mut mask = MaskMatrix::zeros(1, 8);
        for c in 0..4 {
            mask.set(0, c + 4 * (c % 2), true);
        }
        // columns {0, 5, 2, 7}: residues 0,1,2,3; offsets {0, 9, 2, 11}: 0,1,2,3 -> fine
        let p = PatternDescriptor::gs(4, 4).unwrap();
        let w = random(1, 8, 1);
        assert!(encode(&w, &group_mask(&mask, &p, None).unwrap(), Some(&geom)).is_ok());
        let mut mask = MaskMatrix::zeros(1, 8);
        for c in [0, 1, 6, 7] {
            mask.set(0, c, true);
        }
        // columns {0,1,6,7}: residues {0,1,2,3}; offsets {0,1,8,9} -> {0,1,0,1}
        let err = encode(&w, &group_mask(&mask, &p, None).unwrap(), Some(&geom)).unwrap_err();
        assert!(err.to_string().contains("conflict-free"), "{err}");
    }

    #[test]
    fn two_row_vertical_band() {
        let mut mask = MaskMatrix::zeros(2, 4);
        mask.set(0, 0, true);
        mask.set(0, 2, true);
        mask.set(1, 1, true);
        mask.set(1, 3, true);
        let p = PatternDescriptor::gs(2, 1).unwrap();
        let gm = group_mask(&mask, &p, None).unwrap();
        assert_eq!(gm.groups, vec![vec![(0, 0), (1, 1)], vec![(0, 2), (1, 3)]]);
    }

    #[test]
    fn dense_row_round_robin() {
        let p = PatternDescriptor::gs(4, 4).unwrap();
        let gm = group_mask(&MaskMatrix::full(1, 12), &p, None).unwrap();
        assert_eq!(gm.groups.len(), 3);
        for (g, group) in gm.groups.iter().enumerate() {
            let cols: Vec<usize> = group.iter().map(|&(_, c)| c).collect();
            assert_eq!(cols, (4 * g..4 * g + 4).collect::<Vec<_>>());
        }
    }

    #[test]
    fn invalid_mask_rejected_before_grouping() {
        let mut mask = MaskMatrix::zeros(1, 8);
        mask.set(0, 0, true);
        assert!(group_mask(&mask, &PatternDescriptor::gs(4, 4).unwrap(), None).is_err());
        assert!(group_mask(&mask, &PatternDescriptor::irregular(), None).is_err());
    }

    #[test]
    fn regroup_keeps_group_counts() {
        for (b, k) in [(4, 1), (8, 2), (8, 8), (16, 4)] {
            let w = random(32, 64, (b * 10 + k) as u64);
            let gm = prune_gs_band(&w, b, k, &ThresholdSpec::per_matrix(0.8).unwrap()).unwrap();
            let again = group_mask(&gm.mask, &gm.pattern, None).unwrap();
            assert_eq!(again.groups.len(), gm.groups.len());
            assert_eq!(again.groups_per_band(), gm.groups_per_band());
        }
    }

    #[test]
    fn scatter_round_trip_matches_permuted_band() {
        let w = random(16, 32, 4);
        let th = ThresholdSpec::per_matrix(0.8).unwrap();
        let sc = prune_gs_scatter(&w, 8, 1, &th).unwrap();
        let g = encode(&w, &sc, None).unwrap();
        let dec = decode(&g).unwrap();
        assert!(dec.bit_eq(&masked(&w, &sc.mask)));

        // Same values seen through the permutation as a plain band matrix.
        let perm = sc.row_perm.clone().unwrap();
        let permuted_mask = sc.mask.permute_rows(&perm).unwrap();
        let wv = w.values_f32();
        let pw: Vec<f32> = perm
            .iter()
            .flat_map(|&r| wv[r * 32..(r + 1) * 32].to_vec())
            .collect();
        let pw = DenseTensor::from_f32(vec![16, 32], pw).unwrap();
        let band = group_mask(&permuted_mask, &PatternDescriptor::gs(8, 1).unwrap(), None).unwrap();
        let band_dec = decode(&encode(&pw, &band, None).unwrap()).unwrap();
        let bv = band_dec.values_f32();
        let unpermuted: Vec<f32> = {
            let mut out = vec![0.0; 16 * 32];
            for (i, &r) in perm.iter().enumerate() {
                out[r * 32..(r + 1) * 32].copy_from_slice(&bv[i * 32..(i + 1) * 32]);
            }
            out
        };
        assert_eq!(dec.values_f32().as_ref(), unpermuted.as_slice());
    }

    #[test]
    fn gssf_round_trip_and_errors() {
        let w = random(8, 32, 6);
        let gm = prune_gs_horizontal(&w, 8, &ThresholdSpec::per_matrix(0.75).unwrap()).unwrap();
        let g = encode(&w, &gm, None).unwrap();
        let bytes = g.to_gssf_bytes();
        assert_eq!(GsBsrMatrix::from_gssf_bytes(&bytes).unwrap(), g);

        // Truncate inside the indices table.
        let header = 4 + 2 + 1 + 2 + 2 + 1 + 4 + 4 + 4 + 4 * g.indptr().len();
        match GsBsrMatrix::from_gssf_bytes(&bytes[..header + 5]) {
            Err(GsError::Format { field, .. }) => assert_eq!(field, "indices"),
            other => panic!("{other:?}"),
        }
        // Duplicate a residue inside the first group.
        let mut dup = bytes.clone();
        let second = u32::from_le_bytes(dup[header..header + 4].try_into().unwrap()) + 8;
        dup[header + 4..header + 8].copy_from_slice(&second.to_le_bytes());
        assert!(matches!(
            GsBsrMatrix::from_gssf_bytes(&dup),
            Err(GsError::Invariant(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            GsBsrMatrix::from_gssf_bytes(&bad),
            Err(GsError::Format { field: "magic", .. })
        ));
    }

    #[test]
    fn block_family_encodes_contiguous_groups() {
        let p = PatternDescriptor::block(4, 1).unwrap();
        let mut mask = MaskMatrix::zeros(4, 6);
        for r in 0..4 {
            mask.set(r, 2, true);
            mask.set(r, 5, true);
        }
        let w = random(4, 6, 8);
        let gm = group_mask(&mask, &p, None).unwrap();
        assert_eq!(gm.groups.len(), 2);
        let g = encode(&w, &gm, None).unwrap();
        assert_eq!(g.group_indices(0), &[2, 2, 2, 2]);
        let back = GsBsrMatrix::from_gssf_bytes(&g.to_gssf_bytes()).unwrap();
        assert!(decode(&back).unwrap().bit_eq(&masked(&w, &mask)));
    }
}
