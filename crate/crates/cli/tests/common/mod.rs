//! Shared fixtures for the CLI integration tests.

use std::path::{Path, PathBuf};

use gs_core::format::{encode, group_mask};
use gs_core::patterns::{ConvGeometry, PatternDescriptor};
use gs_core::pruner::{
    prune_block, prune_gs_band, prune_gs_horizontal, prune_gs_scatter, ThresholdSpec,
};
use gs_core::tensor::{gen_tensor, DenseTensor, Distribution};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn uniform(shape: &[usize], seed: u64) -> DenseTensor {
    gen_tensor(shape, Distribution::Uniform { lo: -1.0, hi: 1.0 }, seed).unwrap()
}

/// `(file name, expected bytes)` for every checked-in golden artifact.
pub fn golden_recipes() -> Vec<(&'static str, Vec<u8>)> {
    let w = uniform(&[16, 32], 7);
    vec![
        ("w16x32.dtns", w.to_dtns_bytes()),
        (
            "w16x32_f16.dtns",
            w.to_dtype(gs_core::DType::F16).to_dtns_bytes(),
        ),
        (
            "scalar.dtns",
            DenseTensor::from_f32(vec![1, 1], vec![0.0])
                .unwrap()
                .to_dtns_bytes(),
        ),
        ("w16x32_h8.gssf", {
            let gm = prune_gs_horizontal(&w, 8, &ThresholdSpec::per_matrix(0.75).unwrap()).unwrap();
            encode(&w, &gm, None).unwrap().to_gssf_bytes()
        }),
        ("w16x32_v4.gssf", {
            let gm = prune_gs_band(&w, 4, 1, &ThresholdSpec::per_matrix(0.75).unwrap()).unwrap();
            encode(&w, &gm, None).unwrap().to_gssf_bytes()
        }),
        ("w16x32_s8k2.gssf", {
            let gm = prune_gs_scatter(&w, 8, 2, &ThresholdSpec::per_matrix(0.75).unwrap()).unwrap();
            encode(&w, &gm, None).unwrap().to_gssf_bytes()
        }),
        ("w16x32_b4k2.gssf", {
            let p = PatternDescriptor::block(4, 2).unwrap();
            let mask = prune_block(&w, 4, 2, &ThresholdSpec::per_matrix(0.75).unwrap()).unwrap();
            encode(&w, &group_mask(&mask, &p, None).unwrap(), None)
                .unwrap()
                .to_gssf_bytes()
        }),
        ("conv8x3x3x8.gssf", {
            let f = uniform(&[8, 3 * 3 * 8], 8);
            let gm = prune_gs_band(&f, 8, 2, &ThresholdSpec::per_matrix(0.75).unwrap()).unwrap();
            let geom = ConvGeometry::conv2d(8, 3, 3, 8, 10).unwrap();
            encode(&f, &gm, Some(&geom)).unwrap().to_gssf_bytes()
        }),
    ]
}
