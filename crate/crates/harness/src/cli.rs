//! The `smp` command line.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use smp_core::grad::{finite_diff_check_with, SmpOperator};
use smp_core::{rng, tensor_read, tensor_write, Exec, MomentSpec, NormAxis, NormKind, PoolSpec, Smp, Tensor};

use crate::bench::{bench, table, BenchConfig};
use crate::generate::{generate, Pattern, PatternParams};
use crate::toytrain::{toytrain, ToyTrainConfig};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "smp", version, about = "Spatial moment pooling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic tensor file.
    Generate(GenerateArgs),
    /// Pool a tensor file with SMP(n) or SAP.
    Pool(PoolArgs),
    /// Compare analytic and finite-difference gradients on random data.
    Gradcheck(GradcheckArgs),
    /// Time SAP against SMP(n) on one geometry.
    Bench(BenchArgs),
    /// Run the training-stability experiment.
    Toytrain(ToytrainArgs),
}

/// Two extents given as `A,B`, or one value used for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair(pub usize, pub usize);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts = parse_list(s)?;
        match parts[..] {
            [v] => Ok(Pair(v, v)),
            [a, b] => Ok(Pair(a, b)),
            _ => Err(format!("expected one or two values, got {s:?}")),
        }
    }
}

/// A tensor shape such as `1,3,8,8` or `1x3x8x8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_list(s).map(Dims)
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split([',', 'x', '×'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad extent {p:?} in {s:?}: {e}")))
        .collect()
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    /// Kernel extent `KH,KW`.
    #[arg(long, conflicts_with = "global")]
    pub kernel: Option<Pair>,
    /// One window covering the whole plane.
    #[arg(long)]
    pub global: bool,
    #[arg(long, default_value = "1,1")]
    pub stride: Pair,
    #[arg(long, default_value = "0,0")]
    pub pad: Pair,
    #[arg(long, default_value = "1,1")]
    pub dilation: Pair,
}

/// Window used when neither `--kernel` nor `--global` is given.
#[derive(Debug, Clone, Copy)]
enum Fallback {
    Required,
    Kernel(Pair),
    Global,
}

impl GeometryArgs {
    fn resolve(&self, h: usize, w: usize, fallback: Fallback) -> Result<PoolSpec> {
        let base = match (self.kernel, self.global, fallback) {
            (Some(Pair(kh, kw)), _, _) => PoolSpec::new(kh, kw),
            (None, true, _) | (None, false, Fallback::Global) => PoolSpec::global(h, w),
            (None, false, Fallback::Kernel(Pair(kh, kw))) => PoolSpec::new(kh, kw),
            (None, false, Fallback::Required) => {
                return Err(Error::Config("one of --kernel or --global is required".into()))
            }
        };
        Ok(base
            .with_stride(self.stride.0, self.stride.1)
            .with_padding(self.pad.0, self.pad.1)
            .with_dilation(self.dilation.0, self.dilation.1))
    }
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// Highest moment order (1..=4).
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// Normalization of orders >= 3: none, layer, max or batch.
    #[arg(long, default_value = "none")]
    pub norm: NormKind,
    /// Allow orders >= 3 with norm none.
    #[arg(long)]
    pub unsafe_no_norm: bool,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Divide m3, m4 by sigma^3, sigma^4 before normalization.
    #[arg(long)]
    pub standardize: bool,
    /// Grouping of normalized values: per-order, per-sample or per-location.
    #[arg(long, default_value = "per-order")]
    pub norm_axis: NormAxis,
}

impl SpecArgs {
    fn spec(&self) -> Result<MomentSpec> {
        let mut spec = if self.unsafe_no_norm && self.norm == NormKind::None {
            MomentSpec::unnormalized(self.n)?
        } else {
            MomentSpec::new(self.n, self.norm)?
        };
        if let Some(eps) = self.eps {
            spec = spec.with_eps(eps)?;
        }
        Ok(spec.with_standardize_pre_norm(self.standardize).with_norm_axis(self.norm_axis))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// checkerboard, solid, ramp or uniform-noise.
    #[arg(long)]
    pub pattern: Pattern,
    #[arg(long)]
    pub shape: Dims,
    /// First value (checkerboard, solid) or lower bound (noise).
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    /// Second value (checkerboard) or upper bound (noise).
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PoolMode {
    Smp,
    Sap,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "smp")]
    pub mode: PoolMode,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value = "2,3,8,8")]
    pub shape: Dims,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = smp_core::grad::DEFAULT_STEP)]
    pub step: f64,
    /// Defaults to a 3x3 kernel.
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Test hook: scale the analytic gradient by `1 + DELTA`.
    #[arg(long, value_name = "DELTA")]
    pub perturb_backward: Option<f64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Extra order timed next to SAP, SMP(1), SMP(2) and SMP(4).
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value = "1,512,33,60")]
    pub shape: Dims,
    /// Defaults to global pooling.
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Normalization of orders >= 3.
    #[arg(long, default_value = "layer")]
    pub norm: NormKind,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Worker threads; timings are single-threaded unless set.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ToytrainArgs {
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value = "none")]
    pub norm: NormKind,
    #[arg(long)]
    pub unsafe_no_norm: bool,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// `C,H,W` of the synthetic features.
    #[arg(long, default_value = "4,16,16")]
    pub feature_shape: Dims,
    #[arg(long, default_value_t = 10.0)]
    pub input_scale: f64,
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Result of a command that ran to completion.
enum Outcome {
    Ok,
    CheckFailed,
}

/// Parses `args` (including the program name) and runs the command. Output
/// goes to stdout, diagnostics to stderr. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            code
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Generate(a) => run_generate(&a),
        Command::Pool(a) => with_threads(a.threads, |exec| run_pool(&a, exec)),
        Command::Gradcheck(a) => with_threads(a.threads, |exec| run_gradcheck(&a, exec)),
        Command::Bench(a) => with_threads(a.threads, |exec| run_bench(&a, exec)),
        Command::Toytrain(a) => with_threads(a.threads, |exec| run_toytrain(&a, exec)),
    };
    match result {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CheckFailed) => EXIT_CHECK_FAILED,
        Err(Error::Core(e @ smp_core::Error::NonDeterministic(_))) => {
            eprintln!("error: {e}");
            EXIT_CHECK_FAILED
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Runs `f` sequentially, or on a dedicated pool of `threads` workers when
/// more than one is requested.
fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce(Exec) -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        None | Some(1) => f(Exec::Sequential),
        Some(n) => parallel(n, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel<T: Send>(n: usize, f: impl FnOnce(Exec) -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
    pool.install(|| f(Exec::Parallel))
}

#[cfg(not(feature = "parallel"))]
fn parallel<T: Send>(_: usize, f: impl FnOnce(Exec) -> Result<T> + Send) -> Result<T> {
    f(Exec::Sequential)
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×")
}

fn run_generate(a: &GenerateArgs) -> Result<Outcome> {
    let params = match a.pattern {
        Pattern::UniformNoise => PatternParams {
            a: a.a.unwrap_or(0.0),
            b: a.b.unwrap_or(1.0),
            seed: a.seed,
        },
        _ => PatternParams {
            a: a.a.unwrap_or(1.0),
            b: a.b.unwrap_or(0.0),
            seed: a.seed,
        },
    };
    let t = generate(a.pattern, &a.shape.0, &params)?;
    tensor_write(&t, &a.out)?;
    println!("{} {} → {}", a.pattern, format_shape(t.shape()), a.out.display());
    Ok(Outcome::Ok)
}

fn run_pool(a: &PoolArgs, exec: Exec) -> Result<Outcome> {
    let x = tensor_read(&a.input)?;
    let [_, _, h, w] = x.dims4();
    let pool = a.geometry.resolve(h, w, Fallback::Required)?;
    let y = match a.mode {
        PoolMode::Sap => smp_core::smp::sap_forward_with(&x, &pool, exec)?,
        PoolMode::Smp => Smp::new(pool, a.spec.spec()?).with_exec(exec).forward(&x)?,
    };
    tensor_write(&y, &a.out)?;
    let input_dims = smp_core::tensor::dims4_of(x.shape())?;
    println!("{} → {}", format_shape(&input_dims), format_shape(y.shape()));
    Ok(Outcome::Ok)
}

fn run_gradcheck(a: &GradcheckArgs, exec: Exec) -> Result<Outcome> {
    let spec = a.spec.spec()?;
    let shape = a.shape.0.clone();
    let [_, _, h, w] = smp_core::tensor::dims4_of(&shape)?;
    let pool = a.geometry.resolve(h, w, Fallback::Kernel(Pair(3, 3)))?;
    let smp = Smp::new(pool, spec).with_exec(exec);
    let out_shape = smp.shape(&shape)?.output_shape();

    let mut xr = rng::stream(a.seed, 0);
    let x = Tensor::from_fn(shape, |_| rng::uniform(&mut xr, -1.0, 1.0))?;
    let mut ur = rng::stream(a.seed, 1);
    let up = Tensor::from_fn(out_shape, |_| rng::uniform(&mut ur, -1.0, 1.0))?;

    let mut op = SmpOperator::new(smp);
    if spec.norm() == NormKind::Max {
        op = op.surrogate_at(&x)?;
    }
    if let Some(delta) = a.perturb_backward {
        op = op.perturb_backward(delta);
    }
    let report = finite_diff_check_with(&op, &x, &up, a.step, a.tol, exec)?;
    print_json(&report);
    Ok(if report.passed { Outcome::Ok } else { Outcome::CheckFailed })
}

fn run_bench(a: &BenchArgs, exec: Exec) -> Result<Outcome> {
    let [_, _, h, w] = smp_core::tensor::dims4_of(&a.shape.0)?;
    let cfg = BenchConfig {
        n: a.n,
        shape: a.shape.0.clone(),
        pool: a.geometry.resolve(h, w, Fallback::Global)?,
        norm: a.norm,
        repeats: a.repeats,
        seed: a.seed,
    };
    let report = bench(&cfg, exec)?;
    match a.format {
        Format::Json => print_json(&report),
        Format::Table => print!("{}", table(&report)),
    }
    Ok(Outcome::Ok)
}

fn run_toytrain(a: &ToytrainArgs, exec: Exec) -> Result<Outcome> {
    let feature_shape: [usize; 3] = a
        .feature_shape
        .0
        .clone()
        .try_into()
        .map_err(|_| Error::Config("--feature-shape takes exactly C,H,W".into()))?;
    let cfg = ToyTrainConfig {
        seed: a.seed,
        steps: a.steps,
        lr: a.lr,
        n: a.n,
        norm: a.norm,
        batch: a.batch,
        feature_shape,
        input_scale: a.input_scale,
        unsafe_no_norm: a.unsafe_no_norm,
    };
    print_json(&toytrain(&cfg, exec)?);
    Ok(Outcome::Ok)
}
