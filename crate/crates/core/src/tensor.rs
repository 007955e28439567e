//! Dense tensors, the DTNS binary container and seeded synthetic generators.
//!
//! DTNS layout, all little-endian:
//!
//! | field   | type            |
//! |---------|-----------------|
//! | magic   | `b"DTNS"`       |
//! | version | u16 = 1         |
//! | dtype   | u8 (0=f32, 1=f16, 2=i16) |
//! | rank    | u8 (1..=4)      |
//! | extents | rank × u32      |
//! | payload | row-major scalars, innermost dimension last |
//!
//! Generators use xoshiro256++ seeded through SplitMix64
//! (`Xoshiro256PlusPlus::seed_from_u64`), so a `(shape, distribution, seed)`
//! triple always yields the same tensor.

use std::borrow::Cow;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use half::f16;
use rand::SeedableRng;
use rand_distr::{Distribution as _, Normal, Uniform};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{GsError, Result};
use crate::fileio::{read_all, write_atomic, Reader};

pub const DTNS_MAGIC: &[u8; 4] = b"DTNS";
pub const DTNS_VERSION: u16 = 1;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
    I16,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
            DType::I16 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F16),
            2 => Some(DType::I16),
            _ => None,
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::I16 => 2,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::I16 => "i16",
        })
    }
}

impl FromStr for DType {
    type Err = GsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f16" => Ok(DType::F16),
            "i16" => Ok(DType::I16),
            other => Err(GsError::InvalidArgument(format!(
                "unknown dtype '{other}' (expected f32, f16 or i16)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<f16>),
    I16(Vec<i16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
            TensorData::I16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F16(_) => DType::F16,
            TensorData::I16(_) => DType::I16,
        }
    }
}

/// Row-major dense tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: TensorData,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        check_shape(&shape)?;
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(GsError::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_f32(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    /// Values as 32-bit floats; f16 and i16 payloads are upconverted.
    pub fn values_f32(&self) -> Cow<'_, [f32]> {
        match &self.data {
            TensorData::F32(v) => Cow::Borrowed(v.as_slice()),
            TensorData::F16(v) => Cow::Owned(v.iter().map(|x| x.to_f32()).collect()),
            TensorData::I16(v) => Cow::Owned(v.iter().map(|&x| x as f32).collect()),
        }
    }

    /// Convert the payload. f32 → i16 rounds to nearest and saturates.
    pub fn to_dtype(&self, dtype: DType) -> DenseTensor {
        if dtype == self.dtype() {
            return self.clone();
        }
        let vals = self.values_f32();
        let data = match dtype {
            DType::F32 => TensorData::F32(vals.into_owned()),
            DType::F16 => TensorData::F16(vals.iter().map(|&x| f16::from_f32(x)).collect()),
            DType::I16 => TensorData::I16(vals.iter().map(|&x| x.round() as i16).collect()),
        };
        DenseTensor {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            other => Err(GsError::Shape(format!(
                "expected a 2-D matrix, got shape {other:?}"
            ))),
        }
    }

    /// Equality on the raw bit patterns (distinguishes -0.0 and NaN payloads).
    pub fn bit_eq(&self, other: &DenseTensor) -> bool {
        self.shape == other.shape && self.payload_bytes() == other.payload_bytes()
    }

    fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.dtype().size_bytes());
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend(x.to_bits().to_le_bytes())),
            TensorData::F16(v) => v.iter().for_each(|x| out.extend(x.to_bits().to_le_bytes())),
            TensorData::I16(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
        out
    }

    /// Serialize to DTNS bytes.
    pub fn to_dtns_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.rank() + self.len() * 4);
        out.extend_from_slice(DTNS_MAGIC);
        out.extend(DTNS_VERSION.to_le_bytes());
        out.push(self.dtype().code());
        out.push(self.rank() as u8);
        for &d in &self.shape {
            out.extend((d as u32).to_le_bytes());
        }
        out.extend(self.payload_bytes());
        out
    }

    pub fn from_dtns_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != DTNS_MAGIC {
            return Err(GsError::format(
                "magic",
                format!(
                    "expected \"DTNS\", found {:?}",
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = r.u16("version")?;
        if version != DTNS_VERSION {
            return Err(GsError::format(
                "version",
                format!("unsupported version {version}"),
            ));
        }
        let code = r.u8("dtype")?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| GsError::format("dtype", format!("unknown dtype code {code}")))?;
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(GsError::format("rank", format!("rank {rank} not in 1..=4")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u32("extents")? as usize;
            if d == 0 {
                return Err(GsError::format("extents", "zero extent"));
            }
            shape.push(d);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| GsError::format("extents", "element count overflows"))?;
        let payload = r.take(
            count
                .checked_mul(dtype.size_bytes())
                .ok_or_else(|| GsError::format("payload", "payload size overflows"))?,
            "payload",
        )?;
        r.finish("payload")?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F16 => TensorData::F16(
                payload
                    .chunks_exact(2)
                    .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
                    .collect(),
            ),
            DType::I16 => TensorData::I16(
                payload
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
        };
        DenseTensor::new(shape, data)
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(GsError::Shape(format!("rank {} not in 1..=4", shape.len())));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(GsError::Shape(format!("zero extent in shape {shape:?}")));
    }
    if shape.iter().any(|&d| d > u32::MAX as usize) {
        return Err(GsError::Shape(format!("extent exceeds u32 in {shape:?}")));
    }
    Ok(())
}

pub fn save_tensor(t: &DenseTensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &t.to_dtns_bytes())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    DenseTensor::from_dtns_bytes(&read_all(path.as_ref())?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    Uniform { lo: f32, hi: f32 },
    Gaussian { mean: f32, std: f32 },
}

impl FromStr for Distribution {
    type Err = GsError;

    /// Parses `uniform:LO,HI` or `gaussian:MEAN,STD`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            GsError::InvalidArgument(format!(
                "bad distribution '{s}' (expected uniform:LO,HI or gaussian:MEAN,STD)"
            ))
        };
        let (kind, args) = s.split_once(':').ok_or_else(bad)?;
        let (a, b) = args.split_once(',').ok_or_else(bad)?;
        let a: f32 = a.trim().parse().map_err(|_| bad())?;
        let b: f32 = b.trim().parse().map_err(|_| bad())?;
        match kind {
            "uniform" => Ok(Distribution::Uniform { lo: a, hi: b }),
            "gaussian" | "normal" => Ok(Distribution::Gaussian { mean: a, std: b }),
            _ => Err(bad()),
        }
    }
}

/// Generate a deterministic f32 tensor.
pub fn gen_tensor(shape: &[usize], dist: Distribution, seed: u64) -> Result<DenseTensor> {
    check_shape(shape)?;
    let n: usize = shape.iter().product();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let data: Vec<f32> = match dist {
        Distribution::Uniform { lo, hi } => {
            let u = Uniform::new(lo, hi)
                .map_err(|e| GsError::InvalidArgument(format!("uniform({lo},{hi}): {e}")))?;
            (0..n).map(|_| u.sample(&mut rng)).collect()
        }
        Distribution::Gaussian { mean, std } => {
            let g = Normal::new(mean, std)
                .map_err(|e| GsError::InvalidArgument(format!("gaussian({mean},{std}): {e}")))?;
            (0..n).map(|_| g.sample(&mut rng)).collect()
        }
    };
    DenseTensor::from_f32(shape.to_vec(), data)
}

/// Parse `AxBxC` extents.
pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let dims: std::result::Result<Vec<usize>, _> = s
        .split(['x', 'X', ','])
        .map(|d| d.trim().parse::<usize>())
        .collect();
    let dims = dims.map_err(|_| GsError::InvalidArgument(format!("bad shape '{s}'")))?;
    check_shape(&dims)?;
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_file_layout() {
        let t = DenseTensor::from_f32(vec![1, 1], vec![0.0]).unwrap();
        let bytes = t.to_dtns_bytes();
        // 4 magic + 2 version + 1 dtype + 1 rank + 2 extents + 4 payload
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], b"DTNS");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 2]);
        let back = DenseTensor::from_dtns_bytes(&bytes).unwrap();
        assert!(back.bit_eq(&t));
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = DenseTensor::from_f32(vec![2], vec![1.0, 2.0])
            .unwrap()
            .to_dtns_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        match DenseTensor::from_dtns_bytes(&bytes) {
            Err(GsError::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = DenseTensor::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .to_dtns_bytes();
        let cut = &bytes[..bytes.len() - 4];
        match DenseTensor::from_dtns_bytes(cut) {
            Err(GsError::Format { field, detail }) => {
                assert_eq!(field, "payload");
                assert!(detail.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_version_and_rank() {
        let mut bytes = DenseTensor::from_f32(vec![1], vec![1.0])
            .unwrap()
            .to_dtns_bytes();
        bytes[4] = 9;
        assert!(matches!(
            DenseTensor::from_dtns_bytes(&bytes),
            Err(GsError::Format {
                field: "version",
                ..
            })
        ));
        let mut bytes = DenseTensor::from_f32(vec![1], vec![1.0])
            .unwrap()
            .to_dtns_bytes();
        bytes[7] = 5;
        assert!(matches!(
            DenseTensor::from_dtns_bytes(&bytes),
            Err(GsError::Format { field: "rank", .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(DenseTensor::from_f32(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(DenseTensor::from_f32(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::from_f32(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn generator_is_deterministic_and_seed_sensitive() {
        let d = Distribution::Uniform { lo: -1.0, hi: 1.0 };
        let a = gen_tensor(&[16, 16], d, 3).unwrap();
        let b = gen_tensor(&[16, 16], d, 3).unwrap();
        let c = gen_tensor(&[16, 16], d, 4).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn uniform_mean() {
        let t = gen_tensor(&[10_000], Distribution::Uniform { lo: 0.0, hi: 1.0 }, 11).unwrap();
        let v = t.values_f32();
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
        assert!(v.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn gen_rejects_zero_extent() {
        assert!(gen_tensor(&[0, 4], Distribution::Uniform { lo: 0.0, hi: 1.0 }, 1).is_err());
    }

    #[test]
    fn parses_cli_strings() {
        assert_eq!(parse_shape("1024x1024").unwrap(), vec![1024, 1024]);
        assert!(parse_shape("4x0").is_err());
        assert_eq!(
            "uniform:-1,1".parse::<Distribution>().unwrap(),
            Distribution::Uniform { lo: -1.0, hi: 1.0 }
        );
        assert_eq!(
            "gaussian:0,0.5".parse::<Distribution>().unwrap(),
            Distribution::Gaussian {
                mean: 0.0,
                std: 0.5
            }
        );
        assert!("poisson:1,2".parse::<Distribution>().is_err());
    }

    #[test]
    fn f16_round_trip_keeps_bits() {
        let t = gen_tensor(
            &[3, 5],
            Distribution::Gaussian {
                mean: 0.0,
                std: 1.0,
            },
            5,
        )
        .unwrap()
        .to_dtype(DType::F16);
        let back = DenseTensor::from_dtns_bytes(&t.to_dtns_bytes()).unwrap();
        assert_eq!(back.dtype(), DType::F16);
        assert!(back.bit_eq(&t));
        assert_eq!(back.values_f32().len(), 15);
    }
}
