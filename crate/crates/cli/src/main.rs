//! `gs`: generate, prune, encode, run and cost gather-scatter sparse weights.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use gs_core::format::decode;
use gs_core::kernels::{sparse_conv, sparse_conv_traced, spmv, spmv_traced, KernelTrace};
use gs_core::patterns::{
    validate_block_mask, validate_gs_mask, validate_scatter_mask, ValidationReport,
};
use gs_core::pruner::kept_magnitude;
use gs_core::tcm::{
    access_ratio_experiment, apply_overrides, estimate_cycles, mask_access_ratios,
    matrix_access_report, trace_cost, CostParams, KernelDescriptor, TcmConfig,
};
use gs_core::tensor::{gen_tensor, parse_shape, Distribution};
use gs_core::{
    encode, group_mask, load_gssf, load_tensor, prune, save_gssf, save_tensor, ConvGeometry, DType,
    DenseTensor, Family, GsBsrMatrix, GsError, MaskMatrix, PatternDescriptor, ThresholdSpec,
};

const SCHEMA: u64 = 1;

const FORMATS: &str = "\
FILE FORMATS (all little-endian)

  DTNS dense tensor:
    magic \"DTNS\" | version u16=1 | dtype u8 (0=f32, 1=f16, 2=i16) | rank u8
    | rank x u32 extents | row-major payload

  GSSF gather-scatter sparse matrix:
    magic \"GSSF\" | version u16=1 | family u8 (0=gs, 1=gs-scatter, 2=block)
    | B u16 | k u16 | kind u8 (0=matrix, 1=conv1d, 2=conv2d) | m u32 | n u32
    | [conv: O, h, w, I, W_act, C as u32] | group_count u32
    | indptr (m/(B/k) + 1) x u32 | indices group_count*B x u32
    | values group_count*B x f32 | [gs-scatter: m x u32 row permutation]

  Trace: gather_count u32, then B x u32 offsets per gather.

  Conv filters are O x h x w x I (2-D) or O x L x I (1-D); activations are
  H x W x C (or W x C). Offsets are baked for the padded activation width.

JSON OUTPUT (--json): one object per command, always with \"schema\": 1.
  prune:    pattern, threshold, realized_sparsity, nnz, groups, kept_magnitude
  bench:    pattern, cycles, dense_cycles, speedup, serialized_accesses, ideal_accesses
  motivate: ascending_ratio, reorder_ratio, per_trial
  run:      output, shape [, serialized_accesses, ideal_accesses, ratio]

EXIT STATUS: 0 success, 1 domain error, 2 usage error.";

#[derive(Parser, Debug)]
#[command(name = "gs", version, about = "Gather-scatter balanced sparsity toolkit", after_long_help = FORMATS)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Suppress human-readable output.
    #[arg(long, global = true)]
    quiet: bool,
    /// Print a JSON report on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random dense tensor.
    Gen {
        /// Extents, e.g. 64x128.
        #[arg(long)]
        shape: String,
        /// uniform:LO,HI or gaussian:MEAN,STD
        #[arg(long, default_value = "uniform:-1,1")]
        dist: String,
        #[arg(long, default_value = "f32")]
        dtype: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Prune a dense matrix or conv filter to a pattern.
    Prune {
        #[arg(short, long)]
        input: PathBuf,
        #[command(flatten)]
        pattern: PatternArgs,
        #[command(flatten)]
        threshold: ThresholdArgs,
        /// GSSF for structured patterns, masked DTNS for irregular.
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the 0/1 mask as an i16 DTNS.
        #[arg(long)]
        mask_out: Option<PathBuf>,
        /// Print the realized sparsity, kept magnitude and group count as JSON.
        #[arg(long)]
        report: bool,
    },
    /// Encode a dense matrix (optionally under an explicit mask) to GSSF.
    Encode {
        #[arg(short, long)]
        input: PathBuf,
        #[command(flatten)]
        pattern: PatternArgs,
        /// 0/1 mask; defaults to the non-zeros of the input.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Decode a GSSF file to a dense DTNS tensor.
    Decode {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a reference kernel.
    Run {
        #[command(subcommand)]
        kernel: RunKernel,
    },
    /// Describe a DTNS or GSSF file.
    Stats {
        #[arg(short, long)]
        input: PathBuf,
        /// Validate the tensor's non-zeros against this pattern.
        #[arg(long)]
        pattern: Option<String>,
    },
    /// Estimate kernel cycles with the bank-conflict cost model.
    Bench {
        /// Encoded matrix to cost.
        #[arg(long, conflicts_with_all = ["pattern", "m", "n", "sparsity"])]
        gssf: Option<PathBuf>,
        /// Cost a synthetic pruned matrix instead (dense is allowed).
        #[arg(long)]
        pattern: Option<String>,
        #[arg(long, default_value_t = 1024)]
        m: usize,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 0.9)]
        sparsity: f64,
        /// Bank count for the dense descriptor.
        #[arg(long)]
        banks: Option<usize>,
        /// Cost overrides, e.g. "mac=2,outer_overhead=1,gather_base=4".
        #[arg(long)]
        params: Option<String>,
        #[arg(long, value_parser = ["json", "text"], default_value = "text")]
        report: String,
    },
    /// CSR bank-conflict access ratios versus the balanced count.
    Motivate {
        #[arg(long, default_value_t = 1024)]
        m: usize,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 0.9)]
        sparsity: f64,
        #[arg(long, default_value_t = 16)]
        banks: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Use this mask instead of random ones.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum RunKernel {
    /// Sparse matrix times vector (rank-2 activations run as a batch).
    Spmv {
        #[arg(short, long)]
        weights: PathBuf,
        #[arg(short = 'x', long)]
        act: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Direct sparse convolution.
    Conv {
        #[arg(short, long)]
        weights: PathBuf,
        #[arg(short = 'x', long)]
        act: PathBuf,
        #[arg(long, default_value = "1,1")]
        stride: String,
        #[arg(long, default_value = "0,0")]
        pad: String,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct PatternArgs {
    /// gs:B=<int>,k=<int> | gs-scatter:B=,k= | block:B=,k= | irregular
    #[arg(long)]
    pattern: String,
    /// Padded activation width to bake conv offsets for (rank-3/4 filters).
    #[arg(long)]
    act_width: Option<usize>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ThresholdArgs {
    /// Per-matrix target sparsity in [0, 1].
    #[arg(long)]
    sparsity: Option<f64>,
    /// Absolute magnitude threshold.
    #[arg(long)]
    threshold: Option<f32>,
}

enum CliError {
    Usage(String),
    Domain(String),
}

impl From<GsError> for CliError {
    fn from(e: GsError) -> Self {
        CliError::Domain(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

struct Out {
    quiet: bool,
    json: bool,
}

impl Out {
    fn text(&self, s: impl AsRef<str>) {
        if !self.quiet && !self.json {
            println!("{}", s.as_ref());
        }
    }

    fn report(&self, mut v: Value) {
        if self.json {
            v.as_object_mut()
                .expect("reports are objects")
                .insert("schema".into(), json!(SCHEMA));
            println!("{v}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Out {
        quiet: cli.quiet,
        json: cli.json,
    };
    match run(cli, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn usage<T: std::fmt::Display>(e: T) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_pattern(s: &str) -> CliResult<PatternDescriptor> {
    s.parse().map_err(usage)
}

fn parse_pair(s: &str, what: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("--{what} expects two integers 'A,B', got '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

/// Flatten a weight tensor to a matrix, binding a conv geometry for rank-3/4 filters.
fn as_matrix(
    w: DenseTensor,
    act_width: Option<usize>,
) -> CliResult<(DenseTensor, Option<ConvGeometry>)> {
    let geom = match (w.shape(), act_width) {
        ([_, _], None) => None,
        ([_, _], Some(_)) => {
            return Err(CliError::Usage(
                "--act-width only applies to conv filters".into(),
            ))
        }
        (&[o, h, kw, i], Some(aw)) => Some(ConvGeometry::conv2d(o, h, kw, i, aw)?),
        (&[o, l, i], Some(aw)) => Some(ConvGeometry::conv1d(o, l, i, aw)?),
        ([_, _, _] | [_, _, _, _], None) => {
            return Err(CliError::Usage("conv filters need --act-width".into()))
        }
        _ => {
            return Err(CliError::Domain(format!(
                "cannot use a rank-{} tensor as weights",
                w.rank()
            )))
        }
    };
    let w = match &geom {
        Some(g) => w.reshape(vec![g.rows(), g.cols()])?,
        None => w,
    };
    Ok((w, geom))
}

fn masked(w: &DenseTensor, mask: &MaskMatrix) -> CliResult<DenseTensor> {
    let v = w
        .values_f32()
        .iter()
        .zip(mask.bits())
        .map(|(&x, &b)| if b { x } else { 0.0 })
        .collect();
    Ok(DenseTensor::from_f32(w.shape().to_vec(), v)?)
}

fn check_output(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::Domain(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}

fn run(cli: Cli, out: &Out) -> CliResult<()> {
    match cli.cmd {
        Command::Gen {
            shape,
            dist,
            dtype,
            output,
        } => {
            let shape = parse_shape(&shape).map_err(usage)?;
            let dist: Distribution = dist.parse().map_err(usage)?;
            let dtype: DType = dtype.parse().map_err(usage)?;
            check_output(&output)?;
            let t = gen_tensor(&shape, dist, cli.seed)?.to_dtype(dtype);
            save_tensor(&t, &output)?;
            out.text(format!(
                "wrote {:?} {} tensor to {}",
                t.shape(),
                dtype,
                output.display()
            ));
            out.report(json!({"output": output, "shape": t.shape(), "dtype": dtype.to_string()}));
        }
        Command::Prune {
            input,
            pattern,
            threshold,
            output,
            mask_out,
            report,
        } => {
            let p = parse_pattern(&pattern.pattern)?;
            let th = match (threshold.sparsity, threshold.threshold) {
                (Some(s), None) => ThresholdSpec::per_matrix(s).map_err(usage)?,
                (None, Some(t)) => ThresholdSpec::external(t).map_err(usage)?,
                _ => unreachable!("clap enforces exactly one"),
            };
            check_output(&output)?;
            let raw = load_tensor(&input)?;
            let filter_shape = raw.shape().to_vec();
            let (w, geom) = as_matrix(raw, pattern.act_width)?;
            let outcome = prune(&w, &p, &th)?;
            let kept = kept_magnitude(&w, &outcome.mask)?;
            let groups = match &outcome.grouped {
                Some(gm) => {
                    let g = encode(&w, gm, geom.as_ref())?;
                    save_gssf(&g, &output)?;
                    Some(g.group_count())
                }
                None => {
                    save_tensor(&masked(&w, &outcome.mask)?.reshape(filter_shape)?, &output)?;
                    None
                }
            };
            if let Some(mp) = &mask_out {
                save_tensor(&outcome.mask.to_tensor()?, mp)?;
            }
            let sparsity = outcome.mask.sparsity();
            if !report {
                out.text(format!(
                "pattern {p}: threshold {}, realized sparsity {sparsity:.6}, {} non-zeros{}, kept magnitude {kept:.6}",
                outcome.threshold,
                outcome.mask.nnz(),
                groups.map(|g| format!(" in {g} groups")).unwrap_or_default()
                ));
            }
            let v = json!({
                "pattern": p.to_string(),
                "threshold": outcome.threshold,
                "realized_sparsity": sparsity,
                "nnz": outcome.mask.nnz(),
                "groups": groups,
                "kept_magnitude": kept,
                "output": output,
            });
            if report && !out.json {
                let mut v = v.clone();
                v.as_object_mut()
                    .unwrap()
                    .insert("schema".into(), json!(SCHEMA));
                println!("{v}");
            }
            out.report(v);
        }
        Command::Encode {
            input,
            pattern,
            mask,
            output,
        } => {
            let p = parse_pattern(&pattern.pattern)?;
            if p.family() == Family::Irregular {
                return Err(CliError::Usage(
                    "irregular patterns cannot be encoded".into(),
                ));
            }
            check_output(&output)?;
            let (w, geom) = as_matrix(load_tensor(&input)?, pattern.act_width)?;
            let mask = match &mask {
                Some(mp) => {
                    let (m, n) = w.matrix_dims()?;
                    let t = load_tensor(mp)?;
                    MaskMatrix::from_tensor(&t.reshape(vec![m, n])?)?
                }
                None => MaskMatrix::from_tensor(&w)?,
            };
            let perm = (p.family() == Family::GsScatter).then(|| scatter_order(&mask));
            let gm = group_mask(&mask, &p, perm.as_deref())?;
            let g = encode(&w, &gm, geom.as_ref())?;
            save_gssf(&g, &output)?;
            out.text(format!(
                "encoded {} groups of {p} to {}",
                g.group_count(),
                output.display()
            ));
            out.report(
                json!({"pattern": p.to_string(), "groups": g.group_count(), "output": output}),
            );
        }
        Command::Decode { input, output } => {
            check_output(&output)?;
            let g = load_gssf(&input)?;
            let d = decode(&g)?;
            let d = match g.conv() {
                Some(c) if c.layout == gs_core::patterns::ConvLayout::OLI => {
                    d.reshape(vec![c.out_channels, c.kernel_w, c.in_channels])?
                }
                Some(c) => {
                    d.reshape(vec![c.out_channels, c.kernel_h, c.kernel_w, c.in_channels])?
                }
                None => d,
            };
            save_tensor(&d, &output)?;
            out.text(format!(
                "decoded {:?} tensor to {}",
                d.shape(),
                output.display()
            ));
            out.report(json!({"output": output, "shape": d.shape()}));
        }
        Command::Run { kernel } => run_kernel(kernel, out)?,
        Command::Stats { input, pattern } => stats(&input, pattern.as_deref(), out)?,
        Command::Bench {
            gssf,
            pattern,
            m,
            n,
            sparsity,
            banks,
            params,
            report,
        } => {
            let (desc, label, access) = match (&gssf, &pattern) {
                (Some(path), _) => {
                    let g = load_gssf(path)?;
                    let cfg = TcmConfig::new(g.banks())?;
                    (
                        KernelDescriptor::from_matrix(&g),
                        g.pattern().to_string(),
                        Some(matrix_access_report(&g, &cfg)),
                    )
                }
                (None, Some(s)) if s == "dense" => {
                    let b =
                        banks.ok_or_else(|| CliError::Usage("dense bench needs --banks".into()))?;
                    if b == 0 {
                        return Err(CliError::Usage("--banks must be positive".into()));
                    }
                    (
                        KernelDescriptor::Dense { rows: m, cols: n },
                        format!("dense:B={b}"),
                        None,
                    )
                }
                (None, Some(s)) => {
                    let p = parse_pattern(s)?;
                    (
                        KernelDescriptor::at_sparsity(&p, m, n, sparsity)?,
                        p.to_string(),
                        None,
                    )
                }
                (None, None) => {
                    return Err(CliError::Usage("bench needs --gssf or --pattern".into()))
                }
            };
            let b = match desc {
                KernelDescriptor::Sparse { pattern, .. } => pattern.banks(),
                KernelDescriptor::Dense { .. } => banks.expect("checked above"),
            };
            let mut cfg = TcmConfig::new(b).map_err(usage)?;
            let mut cp = CostParams::default();
            if let Some(list) = &params {
                apply_overrides(list, &mut cfg, &mut cp).map_err(usage)?;
            }
            let est = estimate_cycles(&desc, &cfg, &cp)?;
            let (serialized, ideal) = match (&access, desc) {
                (Some(a), _) => (a.serialized_accesses, a.ideal_accesses),
                (None, KernelDescriptor::Sparse { groups, .. }) => (groups, groups),
                (None, KernelDescriptor::Dense { rows, cols }) => {
                    let g = rows * cols.div_ceil(b);
                    (g, g)
                }
            };
            let v = json!({
                "pattern": label,
                "cycles": est.cycles,
                "dense_cycles": est.dense_cycles,
                "speedup": est.speedup,
                "serialized_accesses": serialized,
                "ideal_accesses": ideal,
            });
            if report == "json" && !out.json {
                let mut v = v;
                v.as_object_mut()
                    .unwrap()
                    .insert("schema".into(), json!(SCHEMA));
                println!("{v}");
            } else {
                out.text(format!(
                    "pattern {label}: {} cycles, dense {} cycles, speedup {:.4}, accesses {serialized} (ideal {ideal})",
                    est.cycles, est.dense_cycles, est.speedup
                ));
                out.report(v);
            }
        }
        Command::Motivate {
            m,
            n,
            sparsity,
            banks,
            trials,
            mask,
        } => {
            if banks == 0 {
                return Err(CliError::Usage("--banks must be positive".into()));
            }
            let (asc, reo, per_trial) = match &mask {
                Some(path) => {
                    let t = load_tensor(path)?;
                    let (a, r) = mask_access_ratios(&MaskMatrix::from_tensor(&t)?, banks)?;
                    (a, r, vec![(a, r)])
                }
                None => {
                    let rep = access_ratio_experiment(m, n, sparsity, banks, trials, cli.seed)
                        .map_err(usage)?;
                    (rep.ascending_ratio, rep.reorder_ratio, rep.per_trial)
                }
            };
            out.text(format!("ascending_ratio {asc:.4}\nreorder_ratio {reo:.4}"));
            out.report(json!({
                "ascending_ratio": asc,
                "reorder_ratio": reo,
                "per_trial": per_trial.iter().map(|&(a, r)| json!([a, r])).collect::<Vec<_>>(),
                "m": m, "n": n, "sparsity": sparsity, "banks": banks, "trials": per_trial.len(),
            }));
        }
    }
    Ok(())
}

/// Rows by descending non-zero count, ties by row index.
fn scatter_order(mask: &MaskMatrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mask.rows()).collect();
    order.sort_by_key(|&r| (std::cmp::Reverse(mask.row_nnz(r)), r));
    order
}

fn save_trace(trace: &KernelTrace, path: &Path, g: &GsBsrMatrix) -> CliResult<Value> {
    trace.save(path)?;
    let rep = trace_cost(trace, &TcmConfig::new(g.banks())?)?;
    Ok(json!({
        "trace": path,
        "total_gathers": rep.total_gathers,
        "serialized_accesses": rep.serialized_accesses,
        "ideal_accesses": rep.ideal_accesses,
        "ratio": rep.ratio,
    }))
}

fn run_kernel(kernel: RunKernel, out: &Out) -> CliResult<()> {
    match kernel {
        RunKernel::Spmv {
            weights,
            act,
            output,
            trace,
        } => {
            check_output(&output)?;
            let g = load_gssf(&weights)?;
            let x = load_tensor(&act)?;
            let xv = x.values_f32();
            let (batch, shape) = match *x.shape() {
                [_] => (1, vec![g.rows()]),
                [b, _] => (b, vec![b, g.rows()]),
                _ => {
                    return Err(CliError::Domain(
                        "spmv activations must be rank 1 or 2".into(),
                    ))
                }
            };
            let n = xv.len() / batch.max(1);
            let mut y = Vec::with_capacity(batch * g.rows());
            let mut full = KernelTrace::new(g.banks());
            for b in 0..batch {
                let xb = &xv[b * n..(b + 1) * n];
                if trace.is_some() {
                    let (yb, t) = spmv_traced(&g, xb)?;
                    y.extend(yb);
                    full.gathers.extend(t.gathers);
                } else {
                    y.extend(spmv(&g, xb)?);
                }
            }
            let y = DenseTensor::from_f32(shape, y)?;
            save_tensor(&y, &output)?;
            let mut v = json!({"output": output, "shape": y.shape()});
            if let Some(tp) = &trace {
                merge(&mut v, save_trace(&full, tp, &g)?);
            }
            out.text(format!(
                "wrote {:?} result to {}",
                y.shape(),
                output.display()
            ));
            out.report(v);
        }
        RunKernel::Conv {
            weights,
            act,
            stride,
            pad,
            output,
            trace,
        } => {
            let stride = parse_pair(&stride, "stride")?;
            let pad = parse_pair(&pad, "pad")?;
            if stride.0 == 0 || stride.1 == 0 {
                return Err(CliError::Usage("--stride entries must be positive".into()));
            }
            check_output(&output)?;
            let g = load_gssf(&weights)?;
            let x = load_tensor(&act)?;
            let (y, t) = match trace {
                Some(_) => {
                    let (y, t) = sparse_conv_traced(&g, &x, stride, pad)?;
                    (y, Some(t))
                }
                None => (sparse_conv(&g, &x, stride, pad)?, None),
            };
            save_tensor(&y, &output)?;
            let mut v = json!({"output": output, "shape": y.shape()});
            if let (Some(tp), Some(t)) = (&trace, &t) {
                merge(&mut v, save_trace(t, tp, &g)?);
            }
            out.text(format!(
                "wrote {:?} result to {}",
                y.shape(),
                output.display()
            ));
            out.report(v);
        }
    }
    Ok(())
}

fn merge(dst: &mut Value, src: Value) {
    if let (Some(d), Value::Object(s)) = (dst.as_object_mut(), src) {
        d.extend(s);
    }
}

fn stats(input: &Path, pattern: Option<&str>, out: &Out) -> CliResult<()> {
    let bytes = std::fs::read(input)
        .map_err(|e| CliError::Domain(format!("I/O error on {}: {e}", input.display())))?;
    match bytes.get(..4) {
        Some(b"GSSF") => {
            if pattern.is_some() {
                return Err(CliError::Usage(
                    "--pattern applies to DTNS inputs only".into(),
                ));
            }
            let g = GsBsrMatrix::from_gssf_bytes(&bytes)?;
            let mask = g.mask();
            let rep = validate_report(&mask, g.pattern(), g.row_perm())?;
            let access = matrix_access_report(&g, &TcmConfig::new(g.banks())?);
            out.text(format!(
                "GSSF {} {}x{}{}: {} groups, {} stored, sparsity {:.6}\n{rep}",
                g.pattern(),
                g.rows(),
                g.cols(),
                g.conv()
                    .map(|c| format!(" (conv, W_act={})", c.act_width))
                    .unwrap_or_default(),
                g.group_count(),
                g.nnz(),
                mask.sparsity()
            ));
            out.report(json!({
                "kind": "gssf",
                "pattern": g.pattern().to_string(),
                "shape": [g.rows(), g.cols()],
                "groups": g.group_count(),
                "nnz": g.nnz(),
                "sparsity": mask.sparsity(),
                "valid": rep.valid,
                "residue_histogram": rep.residue_histogram,
                "serialized_accesses": access.serialized_accesses,
                "ideal_accesses": access.ideal_accesses,
            }));
        }
        Some(b"DTNS") => {
            let t = DenseTensor::from_dtns_bytes(&bytes)?;
            let vals = t.values_f32();
            let nnz = vals.iter().filter(|&&v| v != 0.0).count();
            let sparsity = if vals.is_empty() {
                0.0
            } else {
                1.0 - nnz as f64 / vals.len() as f64
            };
            let mut v = json!({
                "kind": "dtns",
                "shape": t.shape(),
                "dtype": t.dtype().to_string(),
                "nnz": nnz,
                "sparsity": sparsity,
            });
            out.text(format!(
                "DTNS {} {:?}: {nnz} non-zeros, sparsity {sparsity:.6}",
                t.dtype(),
                t.shape()
            ));
            if let Some(ps) = pattern {
                let p = parse_pattern(ps)?;
                let (m, n) = match *t.shape() {
                    [m, n] => (m, n),
                    [o, ref rest @ ..] => (o, rest.iter().product()),
                    [] => return Err(CliError::Domain("scalar tensor has no pattern".into())),
                };
                let mask = MaskMatrix::from_tensor(&t.clone().reshape(vec![m, n])?)?;
                let perm = (p.family() == Family::GsScatter).then(|| scatter_order(&mask));
                let rep = validate_report(&mask, &p, perm.as_deref())?;
                out.text(rep.to_string());
                merge(
                    &mut v,
                    json!({"pattern": p.to_string(), "valid": rep.valid, "residue_histogram": rep.residue_histogram,
                           "violation": rep.violation.as_ref().map(|x| x.message.clone())}),
                );
            }
            out.report(v);
        }
        _ => {
            return Err(CliError::Domain(format!(
                "{}: neither a DTNS nor a GSSF file",
                input.display()
            )))
        }
    }
    Ok(())
}

fn validate_report(
    mask: &MaskMatrix,
    p: &PatternDescriptor,
    perm: Option<&[usize]>,
) -> CliResult<ValidationReport> {
    Ok(match p.family() {
        Family::GsHybrid => validate_gs_mask(mask, p)?,
        Family::GsScatter => validate_scatter_mask(mask, p, perm.expect("scatter needs an order"))?,
        Family::Block => validate_block_mask(mask, p)?,
        Family::Irregular => {
            return Err(CliError::Usage("irregular has nothing to validate".into()))
        }
    })
}
