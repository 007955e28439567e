//! Pattern descriptors, bank residues, mask validators and the convolution
//! filter flattening.
//!
//! A `GS(B, k)` mask is checked band by band, a band being `B / k`
//! consecutive rows. Within a band holding `N` non-zeros every row must hold
//! `N·k / B` of them and every residue class `j mod B` exactly `N / B`.

use std::fmt;
use std::str::FromStr;

use crate::error::{GsError, Result};
use crate::tensor::{DenseTensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    GsHybrid,
    GsScatter,
    Block,
    Irregular,
}

/// Sparsity family plus bank count `B` and elements per row per group `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatternDescriptor {
    family: Family,
    banks: usize,
    elems_per_row: usize,
}

impl PatternDescriptor {
    pub fn new(family: Family, banks: usize, elems_per_row: usize) -> Result<Self> {
        if family == Family::Irregular {
            return Ok(Self::irregular());
        }
        if banks == 0 || elems_per_row == 0 {
            return Err(GsError::InvalidArgument(format!(
                "B and k must be positive (B={banks}, k={elems_per_row})"
            )));
        }
        if banks % elems_per_row != 0 {
            return Err(GsError::InvalidArgument(format!(
                "k={elems_per_row} does not divide B={banks}"
            )));
        }
        if banks > u16::MAX as usize {
            return Err(GsError::InvalidArgument(format!("B={banks} exceeds 65535")));
        }
        Ok(PatternDescriptor {
            family,
            banks,
            elems_per_row,
        })
    }

    pub fn gs(banks: usize, k: usize) -> Result<Self> {
        Self::new(Family::GsHybrid, banks, k)
    }

    pub fn gs_scatter(banks: usize, k: usize) -> Result<Self> {
        Self::new(Family::GsScatter, banks, k)
    }

    pub fn block(banks: usize, k: usize) -> Result<Self> {
        Self::new(Family::Block, banks, k)
    }

    pub fn irregular() -> Self {
        PatternDescriptor {
            family: Family::Irregular,
            banks: 1,
            elems_per_row: 1,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn banks(&self) -> usize {
        self.banks
    }

    pub fn elems_per_row(&self) -> usize {
        self.elems_per_row
    }

    /// Rows per band, `B / k`.
    pub fn band_rows(&self) -> usize {
        self.banks / self.elems_per_row
    }

    pub fn is_horizontal(&self) -> bool {
        self.elems_per_row == self.banks
    }

    pub fn is_vertical(&self) -> bool {
        self.elems_per_row == 1
    }

    /// The same `(B, k)` under a different family.
    pub fn with_family(&self, family: Family) -> Self {
        PatternDescriptor { family, ..*self }
    }
}

impl fmt::Display for PatternDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (name, b, k) = (self.family, self.banks, self.elems_per_row);
        match name {
            Family::GsHybrid => write!(f, "gs:B={b},k={k}"),
            Family::GsScatter => write!(f, "gs-scatter:B={b},k={k}"),
            Family::Block => write!(f, "block:B={b},k={k}"),
            Family::Irregular => f.write_str("irregular"),
        }
    }
}

impl FromStr for PatternDescriptor {
    type Err = GsError;

    /// `gs:B=<int>,k=<int>`, `gs-scatter:B=..,k=..`, `block:B=..,k=..` or `irregular`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| GsError::InvalidArgument(format!("bad pattern '{s}': {why}"));
        if s == "irregular" {
            return Ok(Self::irregular());
        }
        let (kind, params) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let family = match kind {
            "gs" => Family::GsHybrid,
            "gs-scatter" => Family::GsScatter,
            "block" => Family::Block,
            _ => return Err(bad("unknown family")),
        };
        let mut banks = None;
        let mut k = None;
        for kv in params.split(',') {
            let (key, val) = kv
                .split_once('=')
                .ok_or_else(|| bad("expected key=value"))?;
            let val: usize = val.trim().parse().map_err(|_| bad("non-integer value"))?;
            match key.trim() {
                "B" => banks = Some(val),
                "k" => k = Some(val),
                _ => return Err(bad("unknown key")),
            }
        }
        Self::new(
            family,
            banks.ok_or_else(|| bad("missing B"))?,
            k.ok_or_else(|| bad("missing k"))?,
        )
    }
}

/// Binary occupancy of an `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MaskMatrix {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        MaskMatrix {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(GsError::Shape(format!(
                "mask {rows}x{cols} needs {} bits, got {}",
                rows * cols,
                bits.len()
            )));
        }
        Ok(MaskMatrix { rows, cols, bits })
    }

    /// Non-zero entries of a 2-D tensor become ones.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let (m, n) = t.matrix_dims()?;
        let bits = t.values_f32().iter().map(|&v| v != 0.0).collect();
        Self::from_bits(m, n, bits)
    }

    /// Mask as a 0/1 i16 tensor.
    pub fn to_tensor(&self) -> Result<DenseTensor> {
        DenseTensor::new(
            vec![self.rows, self.cols],
            TensorData::I16(self.bits.iter().map(|&b| b as i16).collect()),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.bits[r * self.cols..(r + 1) * self.cols]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn nnz(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row(r).iter().filter(|&&b| b).count()
    }

    /// Column indices of the ones in row `r`, ascending.
    pub fn row_cols(&self, r: usize) -> Vec<usize> {
        self.row(r)
            .iter()
            .enumerate()
            .filter_map(|(c, &b)| b.then_some(c))
            .collect()
    }

    /// Fraction of zero entries.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        1.0 - self.nnz() as f64 / self.bits.len() as f64
    }

    /// Mask whose row `i` is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.rows)?;
        let mut bits = Vec::with_capacity(self.bits.len());
        for &src in perm {
            bits.extend_from_slice(self.row(src));
        }
        Ok(MaskMatrix {
            rows: self.rows,
            cols: self.cols,
            bits,
        })
    }

    /// Append zero rows until the row count is a multiple of `multiple`.
    pub fn pad_rows_to(&self, multiple: usize) -> Self {
        let rows = self.rows.div_ceil(multiple.max(1)) * multiple.max(1);
        let mut bits = self.bits.clone();
        bits.resize(rows * self.cols, false);
        MaskMatrix {
            rows,
            cols: self.cols,
            bits,
        }
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(GsError::InvalidArgument(format!(
            "row permutation has length {}, expected {n}",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(GsError::InvalidArgument(format!(
                "row permutation is not a bijection on 0..{n} (entry {p})"
            )));
        }
    }
    Ok(())
}

/// Element-wise `cols[i] mod banks`.
pub fn residues(cols: &[usize], banks: usize) -> Vec<usize> {
    cols.iter().map(|&c| c % banks).collect()
}

/// First place a mask fails its pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub band: usize,
    /// Row index in the (permuted, for scatter) matrix, if the failure is row-local.
    pub row: Option<usize>,
    pub residue: Option<usize>,
    pub col: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub valid: bool,
    pub violation: Option<Violation>,
    /// Non-zero count per residue class over the whole mask.
    pub residue_histogram: Vec<usize>,
}

impl ValidationReport {
    fn new(violation: Option<Violation>, residue_histogram: Vec<usize>) -> Self {
        ValidationReport {
            valid: violation.is_none(),
            violation,
            residue_histogram,
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "valid: {}", if self.valid { "yes" } else { "no" })?;
        if let Some(v) = &self.violation {
            write!(f, "violation: band={}", v.band)?;
            if let Some(r) = v.row {
                write!(f, " row={r}")?;
            }
            if let Some(c) = v.col {
                write!(f, " col={c}")?;
            }
            if let Some(b) = v.residue {
                write!(f, " residue={b}")?;
            }
            writeln!(f, " ({})", v.message)?;
        }
        write!(f, "residue histogram:")?;
        for (b, c) in self.residue_histogram.iter().enumerate() {
            write!(f, " {b}:{c}")?;
        }
        writeln!(f)
    }
}

fn residue_histogram(mask: &MaskMatrix, banks: usize) -> Vec<usize> {
    let mut hist = vec![0usize; banks];
    for r in 0..mask.rows() {
        for (c, &b) in mask.row(r).iter().enumerate() {
            if b {
                hist[c % banks] += 1;
            }
        }
    }
    hist
}

fn require_band_divisible(rows: usize, p: &PatternDescriptor) -> Result<()> {
    if rows % p.band_rows() != 0 {
        return Err(GsError::InvalidArgument(format!(
            "row count {rows} is not divisible by B/k = {} (pad rows explicitly)",
            p.band_rows()
        )));
    }
    Ok(())
}

/// Check both band properties on an already ordered mask.
fn check_bands(mask: &MaskMatrix, p: &PatternDescriptor) -> Option<Violation> {
    let banks = p.banks();
    let k = p.elems_per_row();
    let band_rows = p.band_rows();
    for band in 0..mask.rows() / band_rows {
        let rows = band * band_rows..(band + 1) * band_rows;
        let counts: Vec<usize> = rows.clone().map(|r| mask.row_nnz(r)).collect();
        let total: usize = counts.iter().sum();
        for (r, &c) in rows.clone().zip(&counts) {
            if c * banks != total * k {
                return Some(Violation {
                    band,
                    row: Some(r),
                    residue: None,
                    col: None,
                    message: format!(
                        "row has {c} non-zeros, band needs N*k/B = {}*{k}/{banks}",
                        total
                    ),
                });
            }
        }
        let mut per_residue = vec![0usize; banks];
        for r in rows {
            for c in mask.row_cols(r) {
                per_residue[c % banks] += 1;
            }
        }
        for (b, &c) in per_residue.iter().enumerate() {
            if c * banks != total {
                return Some(Violation {
                    band,
                    row: None,
                    residue: Some(b),
                    col: None,
                    message: format!(
                        "residue count {c}, band needs N/B = {total}/{banks}; band residue counts {per_residue:?}"
                    ),
                });
            }
        }
    }
    None
}

/// Validate `mask` against `GS(B, k)`.
pub fn validate_gs_mask(mask: &MaskMatrix, p: &PatternDescriptor) -> Result<ValidationReport> {
    if p.family() != Family::GsHybrid {
        return Err(GsError::InvalidArgument(format!(
            "validate_gs_mask needs a gs pattern, got {p}"
        )));
    }
    require_band_divisible(mask.rows(), p)?;
    Ok(ValidationReport::new(
        check_bands(mask, p),
        residue_histogram(mask, p.banks()),
    ))
}

/// Validate `mask` against `GS_scatter(B, k)` for the given row order:
/// permuted row `i` is original row `row_perm[i]`.
pub fn validate_scatter_mask(
    mask: &MaskMatrix,
    p: &PatternDescriptor,
    row_perm: &[usize],
) -> Result<ValidationReport> {
    if !matches!(p.family(), Family::GsScatter | Family::GsHybrid) {
        return Err(GsError::InvalidArgument(format!(
            "validate_scatter_mask needs a gs pattern, got {p}"
        )));
    }
    require_band_divisible(mask.rows(), p)?;
    let permuted = mask.permute_rows(row_perm)?;
    Ok(ValidationReport::new(
        check_bands(&permuted, &p.with_family(Family::GsHybrid)),
        residue_histogram(mask, p.banks()),
    ))
}

/// Validate `mask` against grid-aligned `Block(B, k)`: blocks are `B/k`
/// rows tall and `k` columns wide, anchored at multiples of those extents.
pub fn validate_block_mask(mask: &MaskMatrix, p: &PatternDescriptor) -> Result<ValidationReport> {
    if p.family() != Family::Block {
        return Err(GsError::InvalidArgument(format!(
            "validate_block_mask needs a block pattern, got {p}"
        )));
    }
    let (bh, bw) = (p.band_rows(), p.elems_per_row());
    require_band_divisible(mask.rows(), p)?;
    if mask.cols() % bw != 0 {
        return Err(GsError::InvalidArgument(format!(
            "column count {} is not divisible by k = {bw}",
            mask.cols()
        )));
    }
    let hist = residue_histogram(mask, p.banks());
    for band in 0..mask.rows() / bh {
        for bc in 0..mask.cols() / bw {
            let first = mask.get(band * bh, bc * bw);
            for r in band * bh..(band + 1) * bh {
                for c in bc * bw..(bc + 1) * bw {
                    if mask.get(r, c) != first {
                        return Ok(ValidationReport::new(
                            Some(Violation {
                                band,
                                row: Some(r),
                                residue: None,
                                col: Some(c),
                                message: format!("grid block {bc} is partially filled"),
                            }),
                            hist,
                        ));
                    }
                }
            }
        }
    }
    Ok(ValidationReport::new(None, hist))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvLayout {
    /// 2-D filters `O × h × w × I`.
    OhwI,
    /// 1-D filters `O × L × I` (treated as `h = 1`, `w = L`).
    OLI,
}

/// Filter and activation geometry for a convolution layer. Activations are
/// channels-last (`H × W × C`); `act_width` is the `W` the gather offsets
/// are baked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub layout: ConvLayout,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub act_width: usize,
    pub act_channels: usize,
}

/// A filter tap `(o, y, x, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterCoord {
    pub o: usize,
    pub y: usize,
    pub x: usize,
    pub c: usize,
}

impl ConvGeometry {
    pub fn conv2d(o: usize, h: usize, w: usize, i: usize, act_width: usize) -> Result<Self> {
        let g = ConvGeometry {
            layout: ConvLayout::OhwI,
            out_channels: o,
            kernel_h: h,
            kernel_w: w,
            in_channels: i,
            act_width,
            act_channels: i,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn conv1d(o: usize, len: usize, i: usize, act_width: usize) -> Result<Self> {
        let g = ConvGeometry {
            layout: ConvLayout::OLI,
            out_channels: o,
            kernel_h: 1,
            kernel_w: len,
            in_channels: i,
            act_width,
            act_channels: i,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.out_channels,
            self.kernel_h,
            self.kernel_w,
            self.in_channels,
            self.act_width,
            self.act_channels,
        ];
        if extents.iter().any(|&e| e == 0) {
            return Err(GsError::InvalidArgument(format!(
                "conv geometry has a zero extent: {self:?}"
            )));
        }
        if self.layout == ConvLayout::OLI && self.kernel_h != 1 {
            return Err(GsError::InvalidArgument(
                "1-D conv geometry must have kernel_h == 1".into(),
            ));
        }
        if self.act_channels != self.in_channels {
            return Err(GsError::InvalidArgument(format!(
                "activation channels {} != filter input channels {}",
                self.act_channels, self.in_channels
            )));
        }
        if self.act_width < self.kernel_w {
            return Err(GsError::InvalidArgument(format!(
                "activation width {} is narrower than the kernel width {}",
                self.act_width, self.kernel_w
            )));
        }
        Ok(())
    }

    /// Rows of the flattened view (`O`).
    pub fn rows(&self) -> usize {
        self.out_channels
    }

    /// Columns of the flattened view (`h·w·I`).
    pub fn cols(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    /// Same filter, offsets baked for a different activation width.
    pub fn with_act_width(&self, act_width: usize) -> Result<Self> {
        let g = ConvGeometry { act_width, ..*self };
        g.validate()?;
        Ok(g)
    }

    fn check_tap(&self, y: usize, x: usize, c: usize) -> Result<()> {
        if y >= self.kernel_h || x >= self.kernel_w || c >= self.in_channels {
            return Err(GsError::InvalidArgument(format!(
                "tap ({y},{x},{c}) outside {}x{}x{} filter",
                self.kernel_h, self.kernel_w, self.in_channels
            )));
        }
        Ok(())
    }

    /// `(o, y, x, c)` → `(o, (y·w + x)·I + c)`.
    pub fn flatten(&self, coord: FilterCoord) -> Result<(usize, usize)> {
        if coord.o >= self.out_channels {
            return Err(GsError::InvalidArgument(format!(
                "output channel {} >= {}",
                coord.o, self.out_channels
            )));
        }
        self.check_tap(coord.y, coord.x, coord.c)?;
        Ok((coord.o, self.tap_column(coord.y, coord.x, coord.c)))
    }

    pub fn unflatten(&self, row: usize, col: usize) -> Result<FilterCoord> {
        if row >= self.out_channels || col >= self.cols() {
            return Err(GsError::InvalidArgument(format!(
                "flattened coordinate ({row},{col}) outside {}x{}",
                self.out_channels,
                self.cols()
            )));
        }
        let (y, x, c) = self.column_tap(col);
        Ok(FilterCoord { o: row, y, x, c })
    }

    fn tap_column(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.kernel_w + x) * self.in_channels + c
    }

    fn column_tap(&self, col: usize) -> (usize, usize, usize) {
        let c = col % self.in_channels;
        let yx = col / self.in_channels;
        (yx / self.kernel_w, yx % self.kernel_w, c)
    }

    /// Offset of the activation multiplied against tap `(y, x, c)`, relative
    /// to the window origin, in channels-last element units:
    /// `y·W·C + x·C + c`.
    pub fn activation_offset(&self, y: usize, x: usize, c: usize) -> Result<usize> {
        self.check_tap(y, x, c)?;
        Ok(y * self.act_width * self.act_channels + x * self.act_channels + c)
    }

    pub fn column_to_offset(&self, col: usize) -> Result<usize> {
        if col >= self.cols() {
            return Err(GsError::InvalidArgument(format!(
                "column {col} >= {}",
                self.cols()
            )));
        }
        let (y, x, c) = self.column_tap(col);
        self.activation_offset(y, x, c)
    }

    /// Inverse of [`ConvGeometry::column_to_offset`].
    pub fn offset_to_column(&self, offset: usize) -> Result<usize> {
        let row_stride = self.act_width * self.act_channels;
        let y = offset / row_stride;
        let rem = offset % row_stride;
        let x = rem / self.act_channels;
        let c = rem % self.act_channels;
        self.check_tap(y, x, c).map_err(|_| {
            GsError::InvalidArgument(format!(
                "offset {offset} does not address a filter tap (decodes to y={y}, x={x}, c={c})"
            ))
        })?;
        Ok(self.tap_column(y, x, c))
    }
}

/// Free-function form of [`ConvGeometry::flatten`].
pub fn flatten_conv(g: &ConvGeometry, coord: FilterCoord) -> Result<(usize, usize)> {
    g.flatten(coord)
}

/// Free-function form of [`ConvGeometry::activation_offset`].
pub fn conv_activation_offset(y: usize, x: usize, c: usize, g: &ConvGeometry) -> Result<usize> {
    g.activation_offset(y, x, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(rows: &[&[u8]]) -> MaskMatrix {
        let n = rows[0].len();
        let bits = rows
            .iter()
            .flat_map(|r| r.iter().map(|&b| b != 0))
            .collect();
        MaskMatrix::from_bits(rows.len(), n, bits).unwrap()
    }

    #[test]
    fn residues_of_worked_examples() {
        assert_eq!(residues(&[4, 7, 13, 14], 4), vec![0, 3, 1, 2]);
        assert_eq!(residues(&[0, 3, 1, 6], 4), vec![0, 3, 1, 2]);
        assert!(residues(&[], 8).is_empty());
    }

    #[test]
    fn pattern_grammar() {
        let p: PatternDescriptor = "gs:B=8,k=1".parse().unwrap();
        assert_eq!(
            (p.family(), p.banks(), p.elems_per_row()),
            (Family::GsHybrid, 8, 1)
        );
        assert!(p.is_vertical());
        let p: PatternDescriptor = "gs-scatter:B=8,k=2".parse().unwrap();
        assert_eq!(p.family(), Family::GsScatter);
        assert_eq!(p.band_rows(), 4);
        let p: PatternDescriptor = "block:B=8,k=8".parse().unwrap();
        assert!(p.is_horizontal());
        assert_eq!(
            "irregular".parse::<PatternDescriptor>().unwrap().family(),
            Family::Irregular
        );
        assert!("gs:B=8,k=3".parse::<PatternDescriptor>().is_err());
        assert!("gs:B=8".parse::<PatternDescriptor>().is_err());
        assert!("csr:B=8,k=8".parse::<PatternDescriptor>().is_err());
        for s in [
            "gs:B=16,k=4",
            "gs-scatter:B=4,k=1",
            "block:B=8,k=2",
            "irregular",
        ] {
            assert_eq!(s.parse::<PatternDescriptor>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn all_zero_and_dense_masks_are_valid() {
        let p = PatternDescriptor::gs(4, 2).unwrap();
        assert!(
            validate_gs_mask(&MaskMatrix::zeros(4, 8), &p)
                .unwrap()
                .valid
        );
        assert!(validate_gs_mask(&MaskMatrix::full(4, 8), &p).unwrap().valid);
        let p = PatternDescriptor::gs(4, 1).unwrap();
        assert!(
            validate_gs_mask(&MaskMatrix::full(8, 12), &p)
                .unwrap()
                .valid
        );
    }

    #[test]
    fn single_nonzero_row_is_unbalanced() {
        let mask = mask_from_rows(&[&[1, 0, 0, 0, 0, 0, 0, 0]]);
        let rep = validate_gs_mask(&mask, &PatternDescriptor::gs(4, 4).unwrap()).unwrap();
        assert!(!rep.valid);
        let v = rep.violation.clone().unwrap();
        assert_eq!(v.band, 0);
        assert_eq!(rep.residue_histogram, vec![1, 0, 0, 0]);
        assert!(rep.to_string().starts_with("valid: no"));
    }

    #[test]
    fn indivisible_rows_rejected() {
        let p = PatternDescriptor::gs(4, 1).unwrap();
        assert!(validate_gs_mask(&MaskMatrix::zeros(6, 8), &p).is_err());
    }

    #[test]
    fn vertical_band_example() {
        // Four rows, one non-zero each, residues {0,3,1,2}.
        let mask = mask_from_rows(&[
            &[1, 0, 0, 0, 0, 0, 0, 0],
            &[0, 0, 0, 1, 0, 0, 0, 0],
            &[0, 1, 0, 0, 0, 0, 0, 0],
            &[0, 0, 0, 0, 0, 0, 1, 0],
        ]);
        let p = PatternDescriptor::gs(4, 1).unwrap();
        assert!(validate_gs_mask(&mask, &p).unwrap().valid);
        // Unequal row counts break property one.
        let mut bad = mask.clone();
        bad.set(0, 4, true);
        bad.set(0, 0, true);
        bad.set(1, 3, false);
        bad.set(1, 7, false);
        let rep = validate_gs_mask(&bad, &p).unwrap();
        assert!(!rep.valid);
        assert!(rep.violation.unwrap().row.is_some());
    }

    #[test]
    fn scatter_permutation_undoes_swap() {
        // Two GS(4,1) bands of four rows, with rows 1 and 5 exchanged.
        let valid = mask_from_rows(&[
            &[1, 0, 0, 0, 0, 0, 0, 0],
            &[0, 1, 0, 0, 0, 0, 0, 0],
            &[0, 0, 1, 0, 0, 0, 0, 0],
            &[0, 0, 0, 1, 0, 0, 0, 0],
            &[1, 0, 0, 0, 1, 0, 0, 0],
            &[0, 1, 0, 0, 0, 1, 0, 0],
            &[0, 0, 1, 0, 0, 0, 1, 0],
            &[0, 0, 0, 1, 0, 0, 0, 1],
        ]);
        let p = PatternDescriptor::gs_scatter(4, 1).unwrap();
        let ident: Vec<usize> = (0..8).collect();
        assert!(validate_scatter_mask(&valid, &p, &ident).unwrap().valid);

        let swap = vec![0, 5, 2, 3, 4, 1, 6, 7];
        let shuffled = valid.permute_rows(&swap).unwrap();
        assert!(!validate_scatter_mask(&shuffled, &p, &ident).unwrap().valid);
        assert!(validate_scatter_mask(&shuffled, &p, &swap).unwrap().valid);
        assert!(validate_scatter_mask(&shuffled, &p, &[0, 0, 2, 3, 4, 1, 6, 7]).is_err());
    }

    #[test]
    fn block_masks() {
        let p = PatternDescriptor::block(4, 4).unwrap();
        assert!(
            validate_block_mask(&MaskMatrix::zeros(1, 8), &p)
                .unwrap()
                .valid
        );
        let aligned = mask_from_rows(&[&[0, 0, 0, 0, 1, 1, 1, 1]]);
        assert!(validate_block_mask(&aligned, &p).unwrap().valid);
        let straddle = mask_from_rows(&[&[0, 0, 1, 1, 1, 1, 0, 0]]);
        let rep = validate_block_mask(&straddle, &p).unwrap();
        assert!(!rep.valid);
        assert_eq!(rep.violation.unwrap().col, Some(2));
        assert!(validate_block_mask(&MaskMatrix::zeros(1, 6), &p).is_err());
    }

    #[test]
    fn flatten_examples() {
        let g = ConvGeometry::conv2d(2, 2, 2, 4, 2).unwrap();
        assert_eq!(
            g.flatten(FilterCoord {
                o: 0,
                y: 1,
                x: 0,
                c: 1
            })
            .unwrap(),
            (0, 9)
        );
        for o in 0..2 {
            assert_eq!(
                g.flatten(FilterCoord {
                    o,
                    y: 0,
                    x: 0,
                    c: 0
                })
                .unwrap(),
                (o, 0)
            );
        }
        assert!(g
            .flatten(FilterCoord {
                o: 2,
                y: 0,
                x: 0,
                c: 0
            })
            .is_err());
        assert!(g
            .flatten(FilterCoord {
                o: 0,
                y: 0,
                x: 0,
                c: 4
            })
            .is_err());
        let g1 = ConvGeometry::conv1d(3, 3, 2, 5).unwrap();
        assert_eq!(
            g1.flatten(FilterCoord {
                o: 1,
                y: 0,
                x: 2,
                c: 1
            })
            .unwrap(),
            (1, 5)
        );
        assert_eq!(g1.cols(), 6);
    }

    #[test]
    fn activation_offsets_of_first_group() {
        for w_act in [2usize, 8] {
            let g = ConvGeometry::conv2d(2, 2, 2, 4, w_act).unwrap();
            let taps = [(0, 0, 0), (0, 0, 3), (0, 1, 2), (1, 0, 1)];
            let offs: Vec<usize> = taps
                .iter()
                .map(|&(y, x, c)| conv_activation_offset(y, x, c, &g).unwrap())
                .collect();
            assert_eq!(offs, vec![0, 3, 6, w_act * 4 + 1]);
        }
        let g = ConvGeometry::conv2d(1, 2, 2, 4, 2).unwrap();
        // W_act == w: offsets coincide with the flattened columns.
        for col in 0..g.cols() {
            assert_eq!(g.column_to_offset(col).unwrap(), col);
        }
        assert!(g.activation_offset(2, 0, 0).is_err());
        assert!(g.offset_to_column(4 * 2 * 2 + 1).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(ConvGeometry::conv2d(0, 1, 1, 1, 1).is_err());
        assert!(ConvGeometry::conv2d(1, 3, 3, 1, 2).is_err());
        let mut g = ConvGeometry::conv1d(1, 3, 2, 4).unwrap();
        g.kernel_h = 2;
        assert!(g.validate().is_err());
    }
}
