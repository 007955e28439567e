use proptest::prelude::*;

use gs_core::format::{decode, encode, group_mask, GsBsrMatrix};
use gs_core::kernels::{dense_matvec, spmv, spmv_traced};
use gs_core::patterns::{
    validate_block_mask, validate_gs_mask, validate_scatter_mask, ConvGeometry, MaskMatrix,
    PatternDescriptor,
};
use gs_core::pruner::{
    kept_magnitude, prune_block, prune_gs_band, prune_gs_horizontal, prune_gs_scatter,
    prune_irregular, ThresholdSpec,
};
use gs_core::tcm::{
    csr_row_accesses, estimate_cycles, gather_accesses, trace_cost, CostParams, CsrOrder,
    KernelDescriptor, TcmConfig,
};
use gs_core::tensor::{gen_tensor, DType, DenseTensor, Distribution};

fn uniform(shape: &[usize], seed: u64) -> DenseTensor {
    gen_tensor(shape, Distribution::Uniform { lo: -1.0, hi: 1.0 }, seed).unwrap()
}

/// `(B, k, bands, n)` with `k | B` and `B | n`.
fn band_shape() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    prop_oneof![Just(2usize), Just(4), Just(8)]
        .prop_flat_map(|b| {
            let ks: Vec<usize> = (0..=b.trailing_zeros()).map(|e| 1 << e).collect();
            (Just(b), proptest::sample::select(ks), 1usize..5, 2usize..6)
        })
        .prop_map(|(b, k, bands, blocks)| (b, k, bands, b * blocks))
}

fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.iter()
        .zip(b)
        .all(|(&x, &y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

/// Same residue multiset in every row, hence valid for every `GS(B, k)`.
fn balanced_mask(m: usize, n: usize, b: usize, per_residue: usize, seed: u64) -> MaskMatrix {
    let w = uniform(&[m, n], seed);
    let v = w.values_f32();
    let mut mask = MaskMatrix::zeros(m, n);
    for r in 0..m {
        for res in 0..b {
            let mut cols: Vec<usize> = (res..n).step_by(b).collect();
            cols.sort_by(|&x, &y| v[r * n + y].total_cmp(&v[r * n + x]));
            for &c in cols.iter().take(per_residue) {
                mask.set(r, c, true);
            }
        }
    }
    mask
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pruners_satisfy_their_validators((b, k, bands, n) in band_shape(), s in 0.0f64..0.95, seed in any::<u64>()) {
        let m = bands * (b / k);
        let w = uniform(&[m, n], seed);
        let th = ThresholdSpec::per_matrix(s).unwrap();
        let p = PatternDescriptor::gs(b, k).unwrap();
        if let Ok(gm) = prune_gs_band(&w, b, k, &th) {
            prop_assert!(validate_gs_mask(&gm.mask, &p).unwrap().valid);
            gm.validate().unwrap();
        }
        if let Ok(gm) = prune_gs_scatter(&w, b, k, &th) {
            let perm = gm.row_perm.clone().unwrap();
            prop_assert!(validate_scatter_mask(&gm.mask, &gm.pattern, &perm).unwrap().valid);
        }
        let block = prune_block(&w, b, k, &th).unwrap();
        prop_assert!(validate_block_mask(&block, &PatternDescriptor::block(b, k).unwrap()).unwrap().valid);
        let h = prune_gs_horizontal(&w, b, &th).unwrap();
        prop_assert!(validate_gs_mask(&h.mask, &PatternDescriptor::gs(b, b).unwrap()).unwrap().valid);
    }

    #[test]
    fn band_with_k_equal_b_is_horizontal(b in prop_oneof![Just(2usize), Just(4), Just(8)], m in 1usize..6, blocks in 1usize..5, s in 0.0f64..0.95, seed in any::<u64>()) {
        let w = uniform(&[m, b * blocks], seed);
        let th = ThresholdSpec::per_matrix(s).unwrap();
        prop_assert_eq!(prune_gs_band(&w, b, b, &th).unwrap(), prune_gs_horizontal(&w, b, &th).unwrap());
    }

    #[test]
    fn lower_sparsity_keeps_more((b, k, bands, n) in band_shape(), s1 in 0.0f64..0.95, s2 in 0.0f64..0.95, seed in any::<u64>()) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let m = bands * (b / k);
        let w = uniform(&[m, n], seed);
        let (tl, th) = (ThresholdSpec::per_matrix(lo).unwrap(), ThresholdSpec::per_matrix(hi).unwrap());
        let km = |mask: &MaskMatrix| kept_magnitude(&w, mask).unwrap();
        prop_assert!(km(&prune_irregular(&w, &tl).unwrap()) >= km(&prune_irregular(&w, &th).unwrap()));
        prop_assert!(km(&prune_gs_horizontal(&w, b, &tl).unwrap().mask) >= km(&prune_gs_horizontal(&w, b, &th).unwrap().mask));
        prop_assert!(km(&prune_block(&w, b, k, &tl).unwrap()) >= km(&prune_block(&w, b, k, &th).unwrap()));
        if let (Ok(a), Ok(c)) = (prune_gs_band(&w, b, k, &tl), prune_gs_band(&w, b, k, &th)) {
            prop_assert!(km(&a.mask) >= km(&c.mask));
        }
    }

    #[test]
    fn pruning_is_deterministic((b, k, bands, n) in band_shape(), s in 0.0f64..0.95, seed in any::<u64>()) {
        let w = uniform(&[bands * (b / k), n], seed);
        let th = ThresholdSpec::per_matrix(s).unwrap();
        let a = prune_gs_scatter(&w, b, k, &th).ok();
        let c = prune_gs_scatter(&w, b, k, &th).ok();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn encode_decode_and_file_round_trip((b, k, bands, n) in band_shape(), s in 0.0f64..0.95, seed in any::<u64>()) {
        let w = uniform(&[bands * (b / k), n], seed);
        if let Ok(gm) = prune_gs_band(&w, b, k, &ThresholdSpec::per_matrix(s).unwrap()) {
            let g = encode(&w, &gm, None).unwrap();
            let bytes = g.to_gssf_bytes();
            let back = GsBsrMatrix::from_gssf_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &g);
            let dec = decode(&back).unwrap();
            let v = w.values_f32();
            for (i, &x) in dec.values_f32().iter().enumerate() {
                let want = if gm.mask.bits()[i] { v[i] } else { 0.0 };
                prop_assert_eq!(x.to_bits(), want.to_bits());
            }
            // re-grouping the decoded mask reproduces the file
            let again = group_mask(&gm.mask, &gm.pattern, None).unwrap();
            prop_assert_eq!(encode(&dec, &again, None).unwrap().to_gssf_bytes(), bytes);
        }
    }

    #[test]
    fn kernels_are_linear_and_traces_conflict_free((b, k, bands, n) in band_shape(), seed in any::<u64>(), alpha in -2.0f32..2.0, beta in -2.0f32..2.0) {
        let w = uniform(&[bands * (b / k), n], seed);
        if let Ok(gm) = prune_gs_band(&w, b, k, &ThresholdSpec::per_matrix(0.6).unwrap()) {
            let g = encode(&w, &gm, None).unwrap();
            let x = uniform(&[n], seed ^ 1).values_f32().into_owned();
            let y = uniform(&[n], seed ^ 2).values_f32().into_owned();
            let combo: Vec<f32> = x.iter().zip(&y).map(|(&a, &c)| alpha * a + beta * c).collect();
            let lhs = spmv(&g, &combo).unwrap();
            let (gx, trace) = spmv_traced(&g, &x).unwrap();
            let gy = spmv(&g, &y).unwrap();
            let rhs: Vec<f32> = gx.iter().zip(&gy).map(|(&a, &c)| alpha * a + beta * c).collect();
            prop_assert!(close(&lhs, &rhs, 1e-4));
            prop_assert_eq!(trace.len(), g.group_count());
            let rep = trace_cost(&trace, &TcmConfig::new(b).unwrap()).unwrap();
            prop_assert_eq!(rep.serialized_accesses, rep.total_gathers);
        }
    }

    #[test]
    fn kernel_value_is_pattern_independent(b in prop_oneof![Just(4usize), Just(8)], rows in 1usize..3, blocks in 2usize..5, c in 1usize..3, seed in any::<u64>()) {
        let (m, n) = (rows * b, blocks * b);
        let per_residue = c.min(blocks);
        let mask = balanced_mask(m, n, b, per_residue, seed);
        let w = uniform(&[m, n], seed ^ 7);
        let x = uniform(&[n], seed ^ 8).values_f32().into_owned();
        let mut outputs = Vec::new();
        let mut k = 1;
        while k <= b {
            let p = PatternDescriptor::gs(b, k).unwrap();
            let gm = group_mask(&mask, &p, None).unwrap();
            let g = encode(&w, &gm, None).unwrap();
            outputs.push(spmv(&g, &x).unwrap());
            k *= 2;
        }
        let masked = decode(&encode(&w, &group_mask(&mask, &PatternDescriptor::gs(b, b).unwrap(), None).unwrap(), None).unwrap()).unwrap();
        let oracle = dense_matvec(&masked, &x).unwrap();
        for y in &outputs {
            prop_assert!(close(y, &oracle, 1e-5));
        }
    }

    #[test]
    fn gather_single_access_iff_distinct(offsets in proptest::collection::vec(0usize..64, 0..8)) {
        let cfg = TcmConfig::new(8).unwrap();
        let mut res: Vec<usize> = offsets.iter().map(|o| o % 8).collect();
        res.sort_unstable();
        res.dedup();
        let distinct = res.len() == offsets.len();
        prop_assert_eq!(gather_accesses(&offsets, &cfg) == 1, distinct && !offsets.is_empty());
    }

    #[test]
    fn csr_reorder_bounds(cols in proptest::collection::btree_set(0usize..256, 0..64), b in prop_oneof![Just(4usize), Just(8), Just(16)]) {
        let cols: Vec<usize> = cols.into_iter().collect();
        let asc = csr_row_accesses(&cols, b, CsrOrder::Ascending).unwrap();
        let reo = csr_row_accesses(&cols, b, CsrOrder::OptimalReorder).unwrap();
        prop_assert!(reo <= asc);
        prop_assert!(reo >= cols.len().div_ceil(b));
        let mut counts = vec![0usize; b];
        cols.iter().for_each(|c| counts[c % b] += 1);
        let balanced = counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1;
        if balanced {
            prop_assert_eq!(reo, cols.len().div_ceil(b));
        }
    }

    #[test]
    fn fewer_groups_never_cost_more(k_exp in 0u32..4, bands in 1usize..64, g1 in 0usize..4096, g2 in 0usize..4096) {
        let k = 1 << k_exp;
        let p = PatternDescriptor::gs(8, k).unwrap();
        let rows = bands * p.band_rows();
        let cfg = TcmConfig::new(8).unwrap();
        let est = |groups| estimate_cycles(&KernelDescriptor::Sparse { pattern: p, rows, cols: 1024, groups }, &cfg, &CostParams::default()).unwrap().cycles;
        let (lo, hi) = (g1.min(g2), g1.max(g2));
        prop_assert!(est(lo) <= est(hi));
    }

    #[test]
    fn dtns_round_trip(shape in proptest::collection::vec(1usize..6, 1..4), seed in any::<u64>(), dt in 0u8..3) {
        let dtype = DType::from_code(dt).unwrap();
        let t = uniform(&shape, seed).to_dtype(dtype);
        let back = DenseTensor::from_dtns_bytes(&t.to_dtns_bytes()).unwrap();
        prop_assert!(back.bit_eq(&t));
    }

    #[test]
    fn conv_offsets_invert(h in 1usize..4, w in 1usize..4, i in 1usize..9, extra in 0usize..5) {
        let g = ConvGeometry::conv2d(2, h, w, i, w + extra).unwrap();
        for col in 0..g.cols() {
            let off = g.column_to_offset(col).unwrap();
            prop_assert_eq!(g.offset_to_column(off).unwrap(), col);
        }
    }
}
