//! Magnitude-based pattern selection.
//!
//! Every pruner first computes the irregular threshold, then counts per row
//! (or band) how many weights exceed it and rounds that count up to whole
//! groups of `B`. Ties are broken by `(|w| desc, column asc, row asc)`.
//!
//! GS pruners select the mask and then express it with the canonical
//! grouping from [`crate::format::group_mask`], so a pruned matrix and a
//! re-encoded copy of the same mask are byte-identical.

use std::cmp::Ordering;

use crate::error::{GsError, Result};
use crate::exec::Exec;
use crate::format::{group_mask, group_mask_with};
use crate::patterns::{check_permutation, Family, MaskMatrix, PatternDescriptor};
use crate::tensor::DenseTensor;

/// One gather group: `B` coordinates `(row, col)` in original row numbering.
pub type Group = Vec<(usize, usize)>;

/// A mask together with its partition into gather groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedMask {
    pub pattern: PatternDescriptor,
    pub mask: MaskMatrix,
    /// Groups in band order; inside a group, sorted by (local row, residue).
    pub groups: Vec<Group>,
    /// Scatter only: permuted row `i` is original row `row_perm[i]`.
    pub row_perm: Option<Vec<usize>>,
}

impl GroupedMask {
    pub fn band_rows(&self) -> usize {
        self.pattern.band_rows()
    }

    pub fn band_count(&self) -> usize {
        self.mask.rows() / self.band_rows()
    }

    /// Position of each original row in the banded order.
    pub fn row_positions(&self) -> Vec<usize> {
        let m = self.mask.rows();
        match &self.row_perm {
            Some(perm) => {
                let mut pos = vec![0; m];
                for (i, &r) in perm.iter().enumerate() {
                    pos[r] = i;
                }
                pos
            }
            None => (0..m).collect(),
        }
    }

    /// Group count per band.
    pub fn groups_per_band(&self) -> Vec<usize> {
        let pos = self.row_positions();
        let mut counts = vec![0; self.band_count()];
        for g in &self.groups {
            if let Some(&(r, _)) = g.first() {
                counts[pos[r] / self.band_rows()] += 1;
            }
        }
        counts
    }

    /// Check every structural invariant of the grouping.
    pub fn validate(&self) -> Result<()> {
        let p = self.pattern;
        let (m, n) = (self.mask.rows(), self.mask.cols());
        let banks = p.banks();
        let k = p.elems_per_row();
        let band_rows = p.band_rows();
        if p.family() == Family::Irregular {
            return Err(GsError::Invariant(
                "irregular masks have no grouping".into(),
            ));
        }
        if m % band_rows != 0 {
            return Err(GsError::Invariant(format!(
                "row count {m} not divisible by band size {band_rows}"
            )));
        }
        match (&self.row_perm, p.family()) {
            (Some(perm), Family::GsScatter) => check_permutation(perm, m)?,
            (None, Family::GsScatter) => {
                return Err(GsError::Invariant("scatter grouping needs row_perm".into()))
            }
            (Some(_), _) => {
                return Err(GsError::Invariant(
                    "row_perm is only meaningful for scatter patterns".into(),
                ))
            }
            (None, _) => {}
        }
        let pos = self.row_positions();
        let mut covered = vec![false; m * n];
        let mut last_band = 0;
        for (gi, g) in self.groups.iter().enumerate() {
            if g.len() != banks {
                return Err(GsError::Invariant(format!(
                    "group {gi} has {} entries, expected {banks}",
                    g.len()
                )));
            }
            let band = pos[g[0].0] / band_rows;
            if band < last_band {
                return Err(GsError::Invariant(format!(
                    "group {gi} is out of band order"
                )));
            }
            last_band = band;
            let mut seen_res = vec![false; banks];
            for (j, &(r, c)) in g.iter().enumerate() {
                if r >= m || c >= n {
                    return Err(GsError::Invariant(format!(
                        "group {gi} entry ({r},{c}) outside {m}x{n}"
                    )));
                }
                if pos[r] / band_rows != band {
                    return Err(GsError::Invariant(format!(
                        "group {gi} spans more than one band"
                    )));
                }
                if pos[r] % band_rows != j / k {
                    return Err(GsError::Invariant(format!(
                        "group {gi} entry {j} is not in local row {} (canonical layout)",
                        j / k
                    )));
                }
                if !self.mask.get(r, c) {
                    return Err(GsError::Invariant(format!(
                        "group {gi} holds masked-out ({r},{c})"
                    )));
                }
                if std::mem::replace(&mut covered[r * n + c], true) {
                    return Err(GsError::Invariant(format!(
                        "({r},{c}) appears in more than one group"
                    )));
                }
                if p.family() != Family::Block {
                    if std::mem::replace(&mut seen_res[c % banks], true) {
                        return Err(GsError::Invariant(format!(
                            "group {gi} repeats residue {}",
                            c % banks
                        )));
                    }
                    if j % k > 0 && g[j - 1].1 % banks >= c % banks {
                        return Err(GsError::Invariant(format!(
                            "group {gi} is not sorted by residue within a row"
                        )));
                    }
                } else if j % k > 0 && g[j - 1].1 + 1 != c {
                    return Err(GsError::Invariant(format!(
                        "block group {gi} is not contiguous"
                    )));
                }
            }
        }
        if let Some(i) = self
            .mask
            .bits()
            .iter()
            .zip(&covered)
            .position(|(&b, &c)| b && !c)
        {
            return Err(GsError::Invariant(format!(
                "non-zero ({},{}) is not in any group",
                i / n,
                i % n
            )));
        }
        Ok(())
    }
}

/// How the pruning threshold is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    /// Percentile of this matrix's magnitudes.
    PerMatrix { sparsity: f64 },
    /// Caller-supplied threshold, e.g. one computed across all layers.
    External { threshold: f32 },
}

impl ThresholdSpec {
    pub fn per_matrix(sparsity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(GsError::InvalidArgument(format!(
                "sparsity {sparsity} not in [0, 1]"
            )));
        }
        Ok(ThresholdSpec::PerMatrix { sparsity })
    }

    pub fn external(threshold: f32) -> Result<Self> {
        if threshold.is_nan() || threshold < 0.0 {
            return Err(GsError::InvalidArgument(format!(
                "external threshold {threshold} must be non-negative"
            )));
        }
        Ok(ThresholdSpec::External { threshold })
    }

    pub fn resolve(&self, w: &DenseTensor) -> Result<f32> {
        match *self {
            ThresholdSpec::PerMatrix { sparsity } => irregular_threshold(w, sparsity),
            ThresholdSpec::External { threshold } => Ok(threshold),
        }
    }
}

/// Magnitude threshold for irregular pruning at `sparsity`.
///
/// Sorting `|w|` ascending, the threshold is the value at index
/// `floor(sparsity·mn) − 1` (negative infinity when that index is −1).
/// Weights strictly above it are kept.
pub fn irregular_threshold(w: &DenseTensor, sparsity: f64) -> Result<f32> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(GsError::InvalidArgument(format!(
            "sparsity {sparsity} not in [0, 1]"
        )));
    }
    let vals = w.values_f32();
    if vals.is_empty() {
        return Err(GsError::InvalidArgument("empty matrix".into()));
    }
    threshold_of(&vals, sparsity)
}

pub(crate) fn threshold_of(vals: &[f32], sparsity: f64) -> Result<f32> {
    let total = vals.len();
    // Small epsilon so that e.g. 0.29 * 100 drops 29 and not 28.
    let dropped = ((sparsity * total as f64) + 1e-9).floor() as usize;
    let dropped = dropped.min(total);
    if dropped == 0 {
        return Ok(f32::NEG_INFINITY);
    }
    let mut mags: Vec<f32> = vals.iter().map(|v| v.abs()).collect();
    let (_, nth, _) = mags.select_nth_unstable_by(dropped - 1, |a, b| a.total_cmp(b));
    Ok(*nth)
}

/// `Σ |w| · mask`, accumulated in f64 in row-major order.
pub fn kept_magnitude(w: &DenseTensor, mask: &MaskMatrix) -> Result<f64> {
    let (m, n) = w.matrix_dims()?;
    if (m, n) != (mask.rows(), mask.cols()) {
        return Err(GsError::Shape(format!(
            "weights {m}x{n} vs mask {}x{}",
            mask.rows(),
            mask.cols()
        )));
    }
    Ok(w.values_f32()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &b)| b)
        .map(|(v, _)| v.abs() as f64)
        .sum())
}

/// Ordering for greedy picks: larger magnitude first, then lower column, then lower row.
fn pick_order(a: (f32, usize, usize), b: (f32, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

fn count_above(row: &[f32], t: f32) -> usize {
    row.iter().filter(|v| v.abs() > t).count()
}

/// Columns of `row` grouped by residue, each sorted by descending magnitude.
fn sorted_buckets(row: &[f32], banks: usize) -> Vec<Vec<usize>> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); banks];
    for c in 0..row.len() {
        buckets[c % banks].push(c);
    }
    for b in &mut buckets {
        b.sort_by(|&x, &y| pick_order((row[x].abs(), x, 0), (row[y].abs(), y, 0)));
    }
    buckets
}

fn check_rows_cols(w: &DenseTensor, banks: usize) -> Result<(usize, usize)> {
    let (m, n) = w.matrix_dims()?;
    if n < banks {
        return Err(GsError::InvalidArgument(format!(
            "matrix has {n} columns, fewer than B={banks}"
        )));
    }
    Ok((m, n))
}

/// GS horizontal selection: per row, take the top `⌈num_items/B⌉` entries
/// of every residue bucket.
pub fn prune_gs_horizontal(
    w: &DenseTensor,
    banks: usize,
    th: &ThresholdSpec,
) -> Result<GroupedMask> {
    prune_gs_horizontal_with(w, banks, th, Exec::default())
}

pub fn prune_gs_horizontal_with(
    w: &DenseTensor,
    banks: usize,
    th: &ThresholdSpec,
    exec: Exec,
) -> Result<GroupedMask> {
    let p = PatternDescriptor::gs(banks, banks)?;
    let (m, n) = check_rows_cols(w, banks)?;
    let t = th.resolve(w)?;
    let vals = w.values_f32();
    let rows = exec.try_map(m, |r| {
        let row = &vals[r * n..(r + 1) * n];
        let buckets = sorted_buckets(row, banks);
        let groups = count_above(row, t).div_ceil(banks);
        let mut keep = Vec::with_capacity(groups * banks);
        for (res, b) in buckets.iter().enumerate() {
            if b.len() < groups {
                return Err(GsError::Pruning(format!(
                    "row {r}: residue {res} has {} columns but {groups} groups are needed",
                    b.len()
                )));
            }
            keep.extend_from_slice(&b[..groups]);
        }
        Ok(keep)
    })?;
    let mut mask = MaskMatrix::zeros(m, n);
    for (r, cols) in rows.iter().enumerate() {
        for &c in cols {
            mask.set(r, c, true);
        }
    }
    group_mask_with(&mask, &p, None, exec)
}

/// Greedy band selection for `GS(B, k)`; `k == B` coincides with the
/// horizontal pruner.
pub fn prune_gs_band(
    w: &DenseTensor,
    banks: usize,
    k: usize,
    th: &ThresholdSpec,
) -> Result<GroupedMask> {
    prune_gs_band_with(w, banks, k, th, Exec::default())
}

pub fn prune_gs_band_with(
    w: &DenseTensor,
    banks: usize,
    k: usize,
    th: &ThresholdSpec,
    exec: Exec,
) -> Result<GroupedMask> {
    let p = PatternDescriptor::gs(banks, k)?;
    let (m, _) = check_rows_cols(w, banks)?;
    let order: Vec<usize> = (0..m).collect();
    let mask = select_bands(w, &p, &order, th, exec)?;
    group_mask_with(&mask, &p, None, exec)
}

/// Scatter selection: rows are sorted by descending above-threshold count
/// (ties by row index) and banded in that order.
pub fn prune_gs_scatter(
    w: &DenseTensor,
    banks: usize,
    k: usize,
    th: &ThresholdSpec,
) -> Result<GroupedMask> {
    prune_gs_scatter_with(w, banks, k, th, Exec::default())
}

pub fn prune_gs_scatter_with(
    w: &DenseTensor,
    banks: usize,
    k: usize,
    th: &ThresholdSpec,
    exec: Exec,
) -> Result<GroupedMask> {
    let p = PatternDescriptor::gs_scatter(banks, k)?;
    let (m, n) = check_rows_cols(w, banks)?;
    let t = th.resolve(w)?;
    let vals = w.values_f32();
    let counts: Vec<usize> = (0..m)
        .map(|r| count_above(&vals[r * n..(r + 1) * n], t))
        .collect();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mask = select_bands(
        w,
        &p,
        &perm,
        &ThresholdSpec::External { threshold: t },
        exec,
    )?;
    group_mask_with(&mask, &p, Some(&perm), exec)
}

/// Run the band greedy over bands of `order` (original row ids in banded order).
fn select_bands(
    w: &DenseTensor,
    p: &PatternDescriptor,
    order: &[usize],
    th: &ThresholdSpec,
    exec: Exec,
) -> Result<MaskMatrix> {
    let (m, n) = w.matrix_dims()?;
    let band_rows = p.band_rows();
    if m % band_rows != 0 {
        return Err(GsError::InvalidArgument(format!(
            "row count {m} is not divisible by B/k = {band_rows}"
        )));
    }
    let t = th.resolve(w)?;
    let vals = w.values_f32();
    let picks = exec.try_map(m / band_rows, |band| {
        let rows = &order[band * band_rows..(band + 1) * band_rows];
        BandGreedy::new(&vals, n, rows, p, t).run(band)
    })?;
    let mut mask = MaskMatrix::zeros(m, n);
    for band in picks {
        for (r, c) in band {
            mask.set(r, c, true);
        }
    }
    Ok(mask)
}

/// State of the greedy fill for one band.
struct BandGreedy<'a> {
    vals: &'a [f32],
    n: usize,
    rows: &'a [usize],
    banks: usize,
    k: usize,
    groups: usize,
    /// `buckets[local_row][residue]`: columns by descending magnitude.
    buckets: Vec<Vec<Vec<usize>>>,
    /// Number of entries already taken from each bucket.
    head: Vec<Vec<usize>>,
    // Current group.
    holder: Vec<Option<usize>>,
    quota: Vec<usize>,
}

impl<'a> BandGreedy<'a> {
    fn new(vals: &'a [f32], n: usize, rows: &'a [usize], p: &PatternDescriptor, t: f32) -> Self {
        let banks = p.banks();
        let buckets: Vec<Vec<Vec<usize>>> = rows
            .iter()
            .map(|&r| sorted_buckets(&vals[r * n..(r + 1) * n], banks))
            .collect();
        let num_items: usize = rows
            .iter()
            .map(|&r| count_above(&vals[r * n..(r + 1) * n], t))
            .sum();
        BandGreedy {
            vals,
            n,
            rows,
            banks,
            k: p.elems_per_row(),
            groups: num_items.div_ceil(banks),
            head: vec![vec![0; banks]; rows.len()],
            buckets,
            holder: vec![None; banks],
            quota: vec![0; rows.len()],
        }
    }

    fn mag(&self, lr: usize, col: usize) -> f32 {
        self.vals[self.rows[lr] * self.n + col].abs()
    }

    fn head_col(&self, lr: usize, res: usize) -> Option<usize> {
        self.buckets[lr][res].get(self.head[lr][res]).copied()
    }

    fn take(&mut self, lr: usize, res: usize) {
        self.head[lr][res] += 1;
        self.holder[res] = Some(lr);
        self.quota[lr] += 1;
    }

    fn release(&mut self, lr: usize, res: usize) {
        self.head[lr][res] -= 1;
        self.holder[res] = None;
        self.quota[lr] -= 1;
    }

    fn run(mut self, band: usize) -> Result<Vec<(usize, usize)>> {
        let mut picked = Vec::with_capacity(self.groups * self.banks);
        for g in 0..self.groups {
            self.holder.iter_mut().for_each(|h| *h = None);
            self.quota.iter_mut().for_each(|q| *q = 0);
            for _ in 0..self.banks {
                if let Some((lr, res)) = self.best_admissible() {
                    self.take(lr, res);
                } else if !self.repair() {
                    return Err(GsError::Pruning(format!(
                        "band {band}: group {g} of {} cannot be completed under GS(B={},k={}) quotas",
                        self.groups, self.banks, self.k
                    )));
                }
            }
            for res in 0..self.banks {
                let lr = self.holder[res].expect("group filled");
                let col = self.buckets[lr][res][self.head[lr][res] - 1];
                picked.push((self.rows[lr], col));
            }
        }
        Ok(picked)
    }

    fn best_admissible(&self) -> Option<(usize, usize)> {
        let mut best: Option<((f32, usize, usize), usize, usize)> = None;
        for lr in 0..self.rows.len() {
            if self.quota[lr] >= self.k {
                continue;
            }
            for res in 0..self.banks {
                if self.holder[res].is_some() {
                    continue;
                }
                if let Some(col) = self.head_col(lr, res) {
                    let key = (self.mag(lr, col), col, self.rows[lr]);
                    if best.is_none_or(|(bk, _, _)| pick_order(key, bk) == Ordering::Less) {
                        best = Some((key, lr, res));
                    }
                }
            }
        }
        best.map(|(_, lr, res)| (lr, res))
    }

    /// The greedy stalled: some row still has quota but none of its buckets
    /// at a free residue has entries left. Search one augmenting path that
    /// releases already selected entries (smallest magnitude first) and
    /// moves their rows to other residues.
    fn repair(&mut self) -> bool {
        let Some(lr) = (0..self.rows.len()).find(|&lr| self.quota[lr] < self.k) else {
            return false;
        };
        let mut visited = vec![false; self.banks];
        match self.augment(lr, &mut visited) {
            Some(res) => {
                self.take(lr, res);
                true
            }
            None => false,
        }
    }

    /// Find a residue `lr` can take, rerouting current holders if needed.
    /// On success the residue is free and the caller takes it.
    fn augment(&mut self, lr: usize, visited: &mut [bool]) -> Option<usize> {
        let usable: Vec<usize> = (0..self.banks)
            .filter(|&res| !visited[res] && self.head_col(lr, res).is_some())
            .collect();
        if let Some(&res) = usable.iter().find(|&&res| self.holder[res].is_none()) {
            return Some(res);
        }
        let mut held: Vec<(usize, usize, f32)> = usable
            .iter()
            .filter_map(|&res| {
                let h = self.holder[res]?;
                if h == lr {
                    return None;
                }
                let col = self.buckets[h][res][self.head[h][res] - 1];
                Some((res, h, self.mag(h, col)))
            })
            .collect();
        held.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
        for (res, h, _) in held {
            visited[res] = true;
            self.release(h, res);
            if let Some(next) = self.augment(h, visited) {
                self.take(h, next);
                return Some(res);
            }
            self.take(h, res);
        }
        None
    }
}

/// Grid-aligned `Block(B, k)` selection: per block-row keep the
/// `⌈num_items/B⌉` blocks with the largest L1 score (ties: lower block index).
pub fn prune_block(
    w: &DenseTensor,
    banks: usize,
    k: usize,
    th: &ThresholdSpec,
) -> Result<MaskMatrix> {
    let p = PatternDescriptor::block(banks, k)?;
    let (m, n) = w.matrix_dims()?;
    let (bh, bw) = (p.band_rows(), k);
    if m % bh != 0 || n % bw != 0 {
        return Err(GsError::InvalidArgument(format!(
            "{m}x{n} matrix is not divisible into {bh}x{bw} blocks"
        )));
    }
    let t = th.resolve(w)?;
    let vals = w.values_f32();
    let mut mask = MaskMatrix::zeros(m, n);
    for band in 0..m / bh {
        let rows = band * bh..(band + 1) * bh;
        let num_items: usize = rows
            .clone()
            .map(|r| count_above(&vals[r * n..(r + 1) * n], t))
            .sum();
        let keep = num_items.div_ceil(banks);
        let mut scored: Vec<(f64, usize)> = (0..n / bw)
            .map(|bc| {
                let s = rows
                    .clone()
                    .flat_map(|r| (bc * bw..(bc + 1) * bw).map(move |c| (r, c)))
                    .map(|(r, c)| vals[r * n + c].abs() as f64)
                    .sum();
                (s, bc)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, bc) in scored.iter().take(keep) {
            for r in rows.clone() {
                for c in bc * bw..(bc + 1) * bw {
                    mask.set(r, c, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Irregular pruning: keep every weight strictly above the threshold.
pub fn prune_irregular(w: &DenseTensor, th: &ThresholdSpec) -> Result<MaskMatrix> {
    let (m, n) = w.matrix_dims()?;
    let t = th.resolve(w)?;
    let bits = w.values_f32().iter().map(|v| v.abs() > t).collect();
    MaskMatrix::from_bits(m, n, bits)
}

/// Keep the `counts[r]` largest-magnitude entries of each row (ties by column).
pub fn top_k_per_row(w: &DenseTensor, counts: &[usize]) -> Result<MaskMatrix> {
    let (m, n) = w.matrix_dims()?;
    if counts.len() != m {
        return Err(GsError::Shape(format!(
            "{} counts for {m} rows",
            counts.len()
        )));
    }
    let vals = w.values_f32();
    let mut mask = MaskMatrix::zeros(m, n);
    for (r, &cnt) in counts.iter().enumerate() {
        let row = &vals[r * n..(r + 1) * n];
        let mut cols: Vec<usize> = (0..n).collect();
        cols.sort_by(|&a, &b| pick_order((row[a].abs(), a, 0), (row[b].abs(), b, 0)));
        for &c in cols.iter().take(cnt) {
            mask.set(r, c, true);
        }
    }
    Ok(mask)
}

/// Result of [`prune`].
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub threshold: f32,
    pub mask: MaskMatrix,
    /// Present for every family except irregular.
    pub grouped: Option<GroupedMask>,
}

/// Dispatch on the pattern family.
pub fn prune(w: &DenseTensor, p: &PatternDescriptor, th: &ThresholdSpec) -> Result<PruneOutcome> {
    let threshold = th.resolve(w)?;
    let fixed = ThresholdSpec::External { threshold };
    let (b, k) = (p.banks(), p.elems_per_row());
    let grouped = match p.family() {
        Family::GsHybrid if p.is_horizontal() => Some(prune_gs_horizontal(w, b, &fixed)?),
        Family::GsHybrid => Some(prune_gs_band(w, b, k, &fixed)?),
        Family::GsScatter => Some(prune_gs_scatter(w, b, k, &fixed)?),
        Family::Block => Some(group_mask(&prune_block(w, b, k, &fixed)?, p, None)?),
        Family::Irregular => None,
    };
    let mask = match &grouped {
        Some(g) => g.mask.clone(),
        None => prune_irregular(w, &fixed)?,
    };
    Ok(PruneOutcome {
        threshold,
        mask,
        grouped,
    })
}
