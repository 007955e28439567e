//! Bank-conflict cost model for a banked scratchpad with a gather engine.
//!
//! Address `a` lives in bank `a mod B`. A gather touching several addresses
//! in one bank is serialized, so its access count is the largest bank
//! multiplicity. Cycle estimates follow the loop structure of the sparse
//! kernels with per-instruction costs from [`CostParams`].

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{GsError, Result};
use crate::exec::Exec;
use crate::format::GsBsrMatrix;
use crate::kernels::KernelTrace;
use crate::patterns::{Family, MaskMatrix, PatternDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TcmConfig {
    pub banks: usize,
    pub gather_base_cycles: u64,
    pub conflict_penalty_cycles: u64,
}

impl TcmConfig {
    /// Three cycles per conflict-free gather, one per extra serialized access.
    pub fn new(banks: usize) -> Result<Self> {
        let cfg = TcmConfig {
            banks,
            gather_base_cycles: 3,
            conflict_penalty_cycles: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.banks == 0 || self.gather_base_cycles == 0 || self.conflict_penalty_cycles == 0 {
            return Err(GsError::InvalidArgument(format!(
                "TCM parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Cycle counts of the kernel loop bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostParams {
    pub weight_load: u64,
    pub index_load: u64,
    pub mac: u64,
    pub outer_overhead: u64,
    /// Horizontal per-row reduction; `None` means `ceil(log2 B)`.
    pub reduction: Option<u64>,
    /// Dense kernel MAC per `B`-wide vector.
    pub dense_mac: u64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            weight_load: 1,
            index_load: 1,
            mac: 1,
            outer_overhead: 2,
            reduction: None,
            dense_mac: 1,
        }
    }
}

impl CostParams {
    pub fn reduction_cycles(&self, banks: usize) -> u64 {
        self.reduction.unwrap_or_else(|| ceil_log2(banks))
    }
}

/// Apply `key=value` overrides (comma or whitespace separated) to both
/// parameter sets. Keys: `weight_load`, `index_load`, `mac`,
/// `outer_overhead`, `reduction`, `dense_mac`, `gather_base`,
/// `conflict_penalty`.
pub fn apply_overrides(list: &str, cfg: &mut TcmConfig, params: &mut CostParams) -> Result<()> {
    for item in list
        .split([',', ' ', '\n', '\t'])
        .filter(|s| !s.trim().is_empty())
    {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            GsError::InvalidArgument(format!("cost override {item:?} is not key=value"))
        })?;
        let v = u64::from_str(value.trim()).map_err(|_| {
            GsError::InvalidArgument(format!(
                "cost override {key}: {value:?} is not a non-negative integer"
            ))
        })?;
        match key.trim() {
            "weight_load" => params.weight_load = v,
            "index_load" => params.index_load = v,
            "mac" => params.mac = v,
            "outer_overhead" => params.outer_overhead = v,
            "reduction" => params.reduction = Some(v),
            "dense_mac" => params.dense_mac = v,
            "gather_base" => cfg.gather_base_cycles = v,
            "conflict_penalty" => cfg.conflict_penalty_cycles = v,
            other => {
                return Err(GsError::InvalidArgument(format!(
                    "unknown cost parameter {other:?}"
                )))
            }
        }
    }
    cfg.validate()
}

fn ceil_log2(n: usize) -> u64 {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as u64
    }
}

fn max_bank_multiplicity(offsets: impl Iterator<Item = usize>, banks: usize) -> usize {
    let mut counts = vec![0usize; banks];
    offsets.for_each(|o| counts[o % banks] += 1);
    counts.into_iter().max().unwrap_or(0)
}

/// Serialized accesses needed by one gather.
pub fn gather_accesses(offsets: &[usize], cfg: &TcmConfig) -> usize {
    max_bank_multiplicity(offsets.iter().copied(), cfg.banks)
}

/// Cycles for a gather needing `accesses` serialized accesses.
pub fn gather_cycles(accesses: usize, cfg: &TcmConfig) -> u64 {
    match accesses {
        0 => 0,
        a => cfg.gather_base_cycles + (a as u64 - 1) * cfg.conflict_penalty_cycles,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsrOrder {
    /// Gathers take `B` consecutive stored columns.
    Ascending,
    /// Columns of the row are reordered to minimize conflicts.
    OptimalReorder,
}

/// Serialized accesses for one CSR row with strictly increasing `cols`.
pub fn csr_row_accesses(cols: &[usize], banks: usize, order: CsrOrder) -> Result<usize> {
    if banks == 0 {
        return Err(GsError::InvalidArgument(
            "bank count must be positive".into(),
        ));
    }
    if cols.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GsError::InvalidArgument(
            "CSR columns must be strictly increasing".into(),
        ));
    }
    Ok(match order {
        CsrOrder::Ascending => cols
            .chunks(banks)
            .map(|c| max_bank_multiplicity(c.iter().copied(), banks))
            .sum(),
        CsrOrder::OptimalReorder => max_bank_multiplicity(cols.iter().copied(), banks),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessReport {
    pub total_gathers: usize,
    pub serialized_accesses: usize,
    pub ideal_accesses: usize,
    pub ratio: f64,
}

impl AccessReport {
    fn new(total_gathers: usize, serialized_accesses: usize, ideal_accesses: usize) -> Self {
        let ratio = if ideal_accesses == 0 {
            1.0
        } else {
            serialized_accesses as f64 / ideal_accesses as f64
        };
        AccessReport {
            total_gathers,
            serialized_accesses,
            ideal_accesses,
            ratio,
        }
    }
}

/// Serialized versus ideal accesses over every traced gather.
pub fn trace_cost(trace: &KernelTrace, cfg: &TcmConfig) -> Result<AccessReport> {
    let mut serialized = 0;
    let mut ideal = 0;
    for (i, g) in trace.gathers.iter().enumerate() {
        if g.len() > cfg.banks {
            return Err(GsError::InvalidArgument(format!(
                "trace gather {i} has {} offsets for {} banks",
                g.len(),
                cfg.banks
            )));
        }
        serialized += max_bank_multiplicity(g.iter().map(|&o| o as usize), cfg.banks);
        ideal += g.len().div_ceil(cfg.banks);
    }
    Ok(AccessReport::new(trace.gathers.len(), serialized, ideal))
}

/// Access counts of one pass over the stored groups of `g`.
/// Block groups are contiguous loads and count one access each.
pub fn matrix_access_report(g: &GsBsrMatrix, cfg: &TcmConfig) -> AccessReport {
    if g.pattern().family() == Family::Block {
        return AccessReport::new(g.group_count(), g.group_count(), g.group_count());
    }
    let serialized = (0..g.group_count())
        .map(|gi| max_bank_multiplicity(g.group_indices(gi).iter().map(|&o| o as usize), cfg.banks))
        .sum();
    AccessReport::new(g.group_count(), serialized, g.nnz().div_ceil(cfg.banks))
}

/// Mean access ratios of CSR execution against the balanced count.
#[derive(Debug, Clone, PartialEq)]
pub struct MotivationReport {
    pub ascending_ratio: f64,
    pub reorder_ratio: f64,
    /// `(ascending, reorder)` per trial.
    pub per_trial: Vec<(f64, f64)>,
}

/// `(ascending, reorder)` ratios of one mask; the denominator is
/// `Σ_rows ceil(nnz_row / B)`.
pub fn mask_access_ratios(mask: &MaskMatrix, banks: usize) -> Result<(f64, f64)> {
    let (mut asc, mut reo, mut ideal) = (0usize, 0usize, 0usize);
    for r in 0..mask.rows() {
        let cols = mask.row_cols(r);
        asc += csr_row_accesses(&cols, banks, CsrOrder::Ascending)?;
        reo += csr_row_accesses(&cols, banks, CsrOrder::OptimalReorder)?;
        ideal += cols.len().div_ceil(banks);
    }
    if ideal == 0 {
        return Err(GsError::InvalidArgument("mask has no non-zeros".into()));
    }
    Ok((asc as f64 / ideal as f64, reo as f64 / ideal as f64))
}

fn sample_mask(m: usize, n: usize, density: f64, seed: u64) -> MaskMatrix {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let bits = (0..m * n).map(|_| rng.random::<f64>() < density).collect();
    MaskMatrix::from_bits(m, n, bits).expect("extent matches")
}

pub fn access_ratio_experiment(
    m: usize,
    n: usize,
    sparsity: f64,
    banks: usize,
    trials: usize,
    seed: u64,
) -> Result<MotivationReport> {
    access_ratio_experiment_with(m, n, sparsity, banks, trials, seed, Exec::default())
}

/// Monte-Carlo over i.i.d. masks. Trial `t` uses sub-seed `seed + t`; an
/// empty sample is redrawn with the sub-seed advanced by `trials`.
pub fn access_ratio_experiment_with(
    m: usize,
    n: usize,
    sparsity: f64,
    banks: usize,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<MotivationReport> {
    if m == 0 || n == 0 || banks == 0 || trials == 0 {
        return Err(GsError::InvalidArgument(
            "m, n, banks and trials must be positive".into(),
        ));
    }
    if !(sparsity > 0.0 && sparsity < 1.0) {
        return Err(GsError::InvalidArgument(format!(
            "sparsity {sparsity} must lie strictly between 0 and 1"
        )));
    }
    let per_trial = exec.try_map(trials, |t| {
        let mut sub = seed.wrapping_add(t as u64);
        loop {
            let mask = sample_mask(m, n, 1.0 - sparsity, sub);
            if mask.nnz() > 0 {
                return mask_access_ratios(&mask, banks);
            }
            sub = sub.wrapping_add(trials as u64);
        }
    })?;
    let count = per_trial.len() as f64;
    Ok(MotivationReport {
        ascending_ratio: per_trial.iter().map(|r| r.0).sum::<f64>() / count,
        reorder_ratio: per_trial.iter().map(|r| r.1).sum::<f64>() / count,
        per_trial,
    })
}

/// Shape and work of a kernel invocation, independent of weight values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelDescriptor {
    /// GS or block pattern with `groups` stored gathers or blocks.
    Sparse {
        pattern: PatternDescriptor,
        rows: usize,
        cols: usize,
        groups: usize,
    },
    Dense {
        rows: usize,
        cols: usize,
    },
}

impl KernelDescriptor {
    pub fn from_matrix(g: &GsBsrMatrix) -> Self {
        KernelDescriptor::Sparse {
            pattern: *g.pattern(),
            rows: g.rows(),
            cols: g.cols(),
            groups: g.group_count(),
        }
    }

    /// Work after pruning an `rows × cols` matrix to `sparsity`, each band
    /// rounded up to whole groups.
    pub fn at_sparsity(
        p: &PatternDescriptor,
        rows: usize,
        cols: usize,
        sparsity: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&sparsity) {
            return Err(GsError::InvalidArgument(format!(
                "sparsity {sparsity} outside [0, 1]"
            )));
        }
        if p.family() == Family::Irregular {
            return Err(GsError::InvalidArgument(
                "irregular patterns have no kernel descriptor".into(),
            ));
        }
        let band_rows = p.band_rows();
        if rows % band_rows != 0 {
            return Err(GsError::InvalidArgument(format!(
                "{rows} rows not divisible by band height {band_rows}"
            )));
        }
        let kept = (band_rows * cols) as f64 * (1.0 - sparsity);
        let per_band = ((kept - 1e-9).max(0.0) / p.banks() as f64).ceil() as usize;
        Ok(KernelDescriptor::Sparse {
            pattern: *p,
            rows,
            cols,
            groups: per_band * (rows / band_rows),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            KernelDescriptor::Sparse { rows, cols, .. }
            | KernelDescriptor::Dense { rows, cols } => (rows, cols),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleEstimate {
    pub cycles: u64,
    pub dense_cycles: u64,
    pub speedup: f64,
}

/// Dense `B`-wide matvec: per row, `ceil(n/B)` iterations of a weight load,
/// a contiguous activation load and a MAC, then the lane reduction.
pub fn dense_cycles(rows: usize, cols: usize, cfg: &TcmConfig, params: &CostParams) -> u64 {
    let inner = params.weight_load + cfg.gather_base_cycles + params.dense_mac;
    rows as u64
        * (params.outer_overhead
            + cols.div_ceil(cfg.banks) as u64 * inner
            + params.reduction_cycles(cfg.banks))
}

/// Loop-structure estimate: one outer iteration per band, one inner
/// iteration per group, then the per-row lane fold.
pub fn estimate_cycles(
    desc: &KernelDescriptor,
    cfg: &TcmConfig,
    params: &CostParams,
) -> Result<CycleEstimate> {
    cfg.validate()?;
    let (rows, cols) = desc.dims();
    let dense = dense_cycles(rows, cols, cfg, params);
    let cycles = match *desc {
        KernelDescriptor::Dense { .. } => dense,
        KernelDescriptor::Sparse {
            pattern, groups, ..
        } => {
            if pattern.banks() != cfg.banks {
                return Err(GsError::InvalidArgument(format!(
                    "pattern has B = {}, TCM has {} banks",
                    pattern.banks(),
                    cfg.banks
                )));
            }
            if pattern.family() == Family::Irregular || rows % pattern.band_rows() != 0 {
                return Err(GsError::InvalidArgument(format!(
                    "descriptor {pattern} on {rows} rows has no band structure"
                )));
            }
            let bands = (rows / pattern.band_rows()) as u64;
            let k = pattern.elems_per_row();
            // block loads are contiguous and GS gathers conflict-free, so
            // both cost one un-serialized access
            let inner = params.weight_load + params.index_load + gather_cycles(1, cfg) + params.mac;
            let fold = if k == cfg.banks {
                params.reduction_cycles(cfg.banks)
            } else {
                ceil_log2(k)
            };
            bands * params.outer_overhead + groups as u64 * inner + bands * fold
        }
    };
    Ok(CycleEstimate {
        cycles,
        dense_cycles: dense,
        speedup: dense as f64 / cycles as f64,
    })
}
