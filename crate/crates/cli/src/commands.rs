//! Subcommand implementations. Each returns a [`Report`]; artifacts go to
//! `--out` when given.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use vidcompress_core::conditioning::{
    fps_stride, load_clip, motion_bucket_id, motion_descriptor, moving_square_clip, orthogonal_clip, static_clip,
    BucketConfig, BucketOrientation, Clip, DEFAULT_BUCKET, DEFAULT_TARGET_FRAMES,
};
use vidcompress_core::funnel::FunnelKind;
use vidcompress_core::manifest::{
    csi_for_target, discover_pairs, load_funnels, load_weights, merge_store, save_funnels, save_weights, PairTarget,
};
use vidcompress_core::pruning::{
    budget_for_rate, importance_from_alpha, sample_fixed_size_with, solve_inclusion, solver_jacobian, ste_jacobian,
    Sampler,
};
use vidcompress_core::toyunet::{
    count_flops_spec, save_net, CrossAttentionMode, FunnelTargets, Multiscaling, TemporalKind, ToyUNet, ToyUNetSpec,
};
use vidcompress_core::verify::{self, Fault, Suite, VerifyConfig};
use vidcompress_core::{Error, Tensor};

use crate::report::{InputDigest, Report};
use crate::{CliError, GlobalArgs, NonlinearityArg};

/// CSI must reach the truncated-SVD residual within this relative gap.
pub const CSI_TOL: f64 = 1e-8;
/// Merged and funneled forwards must agree within this max-abs difference.
pub const MERGE_TOL: f64 = 1e-12;
/// Sampling frequencies must lie within this many binomial standard deviations.
pub const SAMPLING_SIGMAS: f64 = 4.0;
const BUDGET_TOL: f64 = 1e-9;
const BOX_TOL: f64 = 1e-12;

fn read_config<T: DeserializeOwned + Default>(g: &GlobalArgs) -> Result<T, CliError> {
    let Some(path) = &g.config else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::json(path, e))?)
}

fn reject_config(g: &GlobalArgs, command: &str) -> Result<(), CliError> {
    match g.config {
        Some(_) => Err(CliError::Usage(format!("{command} takes no --config"))),
        None => Ok(()),
    }
}

/// A JSON array of numbers.
fn read_vector(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::json(path, e))?)
}

fn parse_kind(name: &str) -> Result<FunnelKind, CliError> {
    serde_json::from_value(json!(name)).map_err(|_| {
        CliError::Usage(format!(
            "unknown pair kind {name:?} (expected linear, conv, attention_qk or attention_vo)"
        ))
    })
}

// ---- csi ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct CsiArgs {
    /// Weights manifest: JSON with a `tensors` map of names to MVDT files.
    #[arg(long)]
    weights: PathBuf,

    /// Target pair as `kind:first:second` (kinds: linear, conv,
    /// attention_qk, attention_vo). Repeatable.
    #[arg(long = "pair")]
    pairs: Vec<String>,

    /// Also funnel every `<prefix>.wq/.wk`, `.wv/.wo`, `.k1/.k2` or
    /// `.w1/.w2` pair of these kinds. Defaults to attention_qk,attention_vo
    /// when no --pair is given.
    #[arg(long, value_delimiter = ',')]
    discover: Vec<String>,

    /// Ratio of reduced to original inner width.
    #[arg(long, default_value_t = 0.5)]
    fun_factor: f64,

    /// Activation between the layers of linear and conv pairs.
    #[arg(long, value_enum, default_value_t)]
    nonlinearity: NonlinearityArg,
}

pub fn csi(g: &GlobalArgs, a: &CsiArgs) -> Result<Report, CliError> {
    reject_config(g, "csi")?;
    let store = load_weights(&a.weights)?;
    let mut targets = a
        .pairs
        .iter()
        .map(|p| PairTarget::parse(p))
        .collect::<Result<Vec<_>, _>>()?;
    let kinds = if a.discover.is_empty() && targets.is_empty() {
        vec![FunnelKind::AttentionQk, FunnelKind::AttentionVo]
    } else {
        a.discover.iter().map(|k| parse_kind(k)).collect::<Result<_, _>>()?
    };
    for t in discover_pairs(&store, &kinds) {
        if !targets.iter().any(|u| u.first == t.first && u.second == t.second) {
            targets.push(t);
        }
    }
    if targets.is_empty() {
        return Err(CliError::Usage("no layer pairs selected".into()));
    }
    for t in &mut targets {
        if matches!(t.kind, FunnelKind::Linear | FunnelKind::Conv) {
            t.nonlinearity = a.nonlinearity.into();
        }
    }

    let mut funnels = Vec::new();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for t in &targets {
        let (f, check) = csi_for_target(&store, t, a.fun_factor)?;
        worst = worst.max(check.relative_gap);
        rows.push(json!({ "target": t, "check": check }));
        funnels.push((t.clone(), f));
    }
    if let Some(out) = &g.out {
        save_funnels(&funnels, out)?;
    }
    Ok(Report {
        command: "csi",
        inputs_digest: InputDigest::new("csi")
            .seed(g.seed)
            .text("weights", &store.digest())
            .json("targets", &targets)
            .json("fun_factor", &a.fun_factor)
            .finish(),
        passed: worst <= CSI_TOL,
        metrics: json!({
            "fun_factor": a.fun_factor,
            "pairs": rows,
            "max_relative_gap": worst,
            "tolerance": CSI_TOL,
        }),
    })
}

// ---- merge ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Weights manifest to fold the funnels into.
    #[arg(long)]
    weights: PathBuf,

    /// Funnel manifest written by `csi`.
    #[arg(long)]
    funnels: PathBuf,

    /// Random inputs per pair in the equivalence check.
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

pub fn merge(g: &GlobalArgs, a: &MergeArgs) -> Result<Report, CliError> {
    reject_config(g, "merge")?;
    let store = load_weights(&a.weights)?;
    let funnels = load_funnels(&a.funnels)?;
    let (merged, report) = merge_store(&store, &funnels, a.trials, g.seed)?;
    if let Some(out) = &g.out {
        let name = a.weights.file_name().and_then(|n| n.to_str()).unwrap_or("weights.json");
        save_weights(&merged, out, name)?;
    }
    let mut digest = InputDigest::new("merge").seed(g.seed).text("weights", &store.digest());
    for (t, f) in &funnels {
        digest = digest.json("target", t).tensor("f1", &f.f1).tensor("f2", &f.f2);
    }
    Ok(Report {
        command: "merge",
        inputs_digest: digest.json("trials", &a.trials).finish(),
        passed: report.max_abs_diff <= MERGE_TOL,
        metrics: json!({
            "merge": report,
            "params_before": store.param_count(),
            "params_after": merged.param_count(),
            "trials": a.trials,
            "tolerance": MERGE_TOL,
        }),
    })
}

// ---- prune-solve ---------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PruneSolveArgs {
    /// JSON array of importances `q_i ∈ (0, 1)`.
    #[arg(long)]
    q: PathBuf,

    /// Number of blocks to keep.
    #[arg(long, conflicts_with = "rate")]
    n: Option<usize>,

    /// Pruning rate; keeps `round((1 − rate)·N)` blocks.
    #[arg(long)]
    rate: Option<f64>,

    /// Include the exact Jacobian ∂p/∂q.
    #[arg(long)]
    jacobian: bool,

    /// Include the straight-through training Jacobian.
    #[arg(long)]
    ste_jacobian: bool,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn prune_solve(g: &GlobalArgs, a: &PruneSolveArgs) -> Result<Report, CliError> {
    reject_config(g, "prune-solve")?;
    let q = read_vector(&a.q)?;
    let n = match (a.n, a.rate) {
        (Some(n), _) => n,
        (None, Some(r)) => budget_for_rate(r, q.len())?,
        (None, None) => return Err(CliError::Usage("prune-solve needs --n or --rate".into())),
    };
    let sol = solve_inclusion(&q, n)?;
    let sum_err = (sol.p.iter().sum::<f64>() - n as f64).abs();
    let box_err = sol.p.iter().map(|&p| (-p).max(p - 1.0).max(0.0)).fold(0.0, f64::max);
    let mut metrics = json!({
        "n": n,
        "q": q,
        "solution": sol,
        "budget_error": sum_err,
        "box_violation": box_err,
    });
    if a.jacobian {
        metrics["jacobian"] = json!(rows(&solver_jacobian(&q, n)?));
    }
    if a.ste_jacobian {
        metrics["ste_jacobian"] = json!(rows(&ste_jacobian(&q, n)?));
    }
    Ok(Report {
        command: "prune-solve",
        inputs_digest: InputDigest::new("prune-solve")
            .seed(g.seed)
            .json("q", &q)
            .json("n", &n)
            .finish(),
        passed: sum_err <= BUDGET_TOL && box_err <= BOX_TOL,
        metrics,
    })
}

// ---- sample ----------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
pub enum SamplerArg {
    #[default]
    Brewer,
    SystematicPps,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// JSON array of inclusion probabilities summing to n.
    #[arg(long)]
    p: PathBuf,

    /// Sample size; defaults to the rounded sum of p.
    #[arg(long)]
    n: Option<usize>,

    /// Number of independent draws.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,

    /// Brewer's draw-by-draw method or systematic PPS on a random order.
    #[arg(long, value_enum, default_value_t)]
    sampler: SamplerArg,
}

pub fn sample(g: &GlobalArgs, a: &SampleArgs) -> Result<Report, CliError> {
    reject_config(g, "sample")?;
    let p = read_vector(&a.p)?;
    let n = a.n.unwrap_or_else(|| p.iter().sum::<f64>().round() as usize);
    if a.draws == 0 {
        return Err(CliError::Usage("--draws must be positive".into()));
    }
    let sampler = match a.sampler {
        SamplerArg::Brewer => Sampler::Brewer,
        SamplerArg::SystematicPps => Sampler::SystematicPps,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let mut counts = vec![0u64; p.len()];
    let mut fixed_size = true;
    let mut first = Vec::new();
    for d in 0..a.draws {
        let s = sample_fixed_size_with(sampler, &p, n, &mut rng)?;
        if d == 0 {
            first = s.selected();
        }
        fixed_size &= s.selected().len() == n;
        for (c, &z) in counts.iter_mut().zip(&s.z) {
            *c += z as u64;
        }
    }
    let draws = a.draws as f64;
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws).collect();
    let sigmas: Vec<f64> = freq
        .iter()
        .zip(&p)
        .map(|(&f, &pi)| {
            let sd = (pi * (1.0 - pi) / draws).sqrt();
            if sd > 0.0 {
                (f - pi).abs() / sd
            } else if f == pi.round() {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let max_sigma = sigmas.iter().copied().fold(0.0, f64::max);
    Ok(Report {
        command: "sample",
        inputs_digest: InputDigest::new("sample")
            .seed(g.seed)
            .json("p", &p)
            .json("n", &n)
            .json("draws", &a.draws)
            .json("sampler", &sampler)
            .finish(),
        passed: fixed_size && max_sigma <= SAMPLING_SIGMAS,
        metrics: json!({
            "n": n,
            "draws": a.draws,
            "sampler": sampler,
            "p": p,
            "frequencies": freq,
            "sigma_deviation": sigmas,
            "max_sigma": if max_sigma.is_finite() { json!(max_sigma) } else { json!("inf") },
            "fixed_size": fixed_size,
            "first_sample": first,
        }),
    })
}

// ---- toyrun ----------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MultiscalingArg {
    None,
    Temporal,
    Spatial,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TemporalKindArg {
    Attention,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FunnelTargetArg {
    Qk,
    Vo,
    Conv,
}

#[derive(Debug, Args)]
pub struct ToyrunArgs {
    /// Start from the large count-only preset instead of the toy default.
    #[arg(long, conflicts_with = "config")]
    svd_like: bool,

    /// Run the middle of the net at reduced time and/or space resolution.
    #[arg(long, value_enum)]
    multiscaling: Option<MultiscalingArg>,

    /// Layer type of the temporal blocks.
    #[arg(long, value_enum)]
    temporal_kind: Option<TemporalKindArg>,

    /// Use the single-token cross-attention rewrite.
    #[arg(long)]
    optimized_cross_attention: bool,

    /// Prune temporal blocks at this rate, keeping the most important.
    #[arg(long)]
    prune_rate: Option<f64>,

    /// Inject CSI funnels with this fun-factor and merge them.
    #[arg(long)]
    fun_factor: Option<f64>,

    /// Layer pairs that receive funnels.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "qk,vo")]
    funnel_targets: Vec<FunnelTargetArg>,

    /// Also run the shape grid over multiscaling × gates × funnels.
    #[arg(long)]
    grid: bool,

    /// Count FLOPs without building or running the network.
    #[arg(long)]
    flops_only: bool,
}

fn grid(spec: &ToyUNetSpec, rng: &mut ChaCha8Rng) -> Result<Value, CliError> {
    use rand::Rng;
    let mut variants = Vec::new();
    let mut passed = true;
    for ms in Multiscaling::ALL {
        let base = ToyUNet::build(&ToyUNetSpec {
            multiscaling: ms,
            ..spec.clone()
        })?;
        let (x, c) = base.random_inputs(rng);
        let funneled = base.inject_funnels(0.5, FunnelTargets::attention())?;
        for (funnels, net) in [(false, &base), (true, &funneled)] {
            for gates in [false, true] {
                let gated;
                let net = if gates {
                    let z: Vec<bool> = (0..net.temporal_block_count()).map(|_| rng.random()).collect();
                    gated = net.with_gates(&z)?;
                    &gated
                } else {
                    net
                };
                let (y, trace) = net.forward_traced(&x, &c)?;
                let ok = y.shape() == x.shape() && y.is_finite();
                passed &= ok;
                variants.push(json!({
                    "multiscaling": ms,
                    "gates": gates,
                    "funnels": funnels,
                    "internal_frames": trace.internal_frames(),
                    "shape_preserved": ok,
                }));
            }
        }
    }
    Ok(json!({ "passed": passed, "variants": variants }))
}

pub fn toyrun(g: &GlobalArgs, a: &ToyrunArgs) -> Result<Report, CliError> {
    let mut spec: ToyUNetSpec = if a.svd_like {
        ToyUNetSpec::svd_like()
    } else {
        read_config(g)?
    };
    spec.seed = g.seed;
    if let Some(m) = a.multiscaling {
        spec.multiscaling = match m {
            MultiscalingArg::None => Multiscaling::None,
            MultiscalingArg::Temporal => Multiscaling::Temporal,
            MultiscalingArg::Spatial => Multiscaling::Spatial,
            MultiscalingArg::Both => Multiscaling::Both,
        };
    }
    if let Some(k) = a.temporal_kind {
        spec.temporal_kind = match k {
            TemporalKindArg::Attention => TemporalKind::TemporalAttention,
            TemporalKindArg::Conv => TemporalKind::TemporalConv,
        };
    }
    if a.optimized_cross_attention {
        spec.cross_attention = CrossAttentionMode::Optimized;
    }
    spec.validate()?;
    let baseline = count_flops_spec(&ToyUNetSpec {
        multiscaling: Multiscaling::None,
        cross_attention: CrossAttentionMode::Full,
        ..spec.clone()
    })?;
    let digest = InputDigest::new("toyrun")
        .seed(g.seed)
        .json("spec", &spec)
        .json("prune_rate", &a.prune_rate)
        .json("fun_factor", &a.fun_factor)
        .json("funnel_targets", &format!("{:?}", a.funnel_targets))
        .json("grid", &a.grid)
        .json("flops_only", &a.flops_only)
        .finish();

    if a.flops_only {
        if a.prune_rate.is_some() || a.fun_factor.is_some() || a.grid {
            return Err(CliError::Usage(
                "--flops-only counts the unpruned, unfunneled spec".into(),
            ));
        }
        let flops = count_flops_spec(&spec)?;
        return Ok(Report {
            command: "toyrun",
            inputs_digest: digest,
            passed: true,
            metrics: json!({
                "spec": spec,
                "baseline_flops": baseline.total,
                "reduction_percent": flops.reduction_percent(&baseline),
                "flops": flops,
            }),
        });
    }

    let mut net = ToyUNet::build(&spec)?;
    let mut kept = net.temporal_block_count();
    if let Some(rate) = a.prune_rate {
        let alphas: Vec<f64> = net.alphas().into_iter().flatten().collect();
        let q = importance_from_alpha(&alphas)?.q();
        kept = budget_for_rate(rate, q.len())?;
        net = net.prune(&q, kept)?;
    }
    if let Some(f) = a.fun_factor {
        let targets = FunnelTargets {
            qk: a.funnel_targets.contains(&FunnelTargetArg::Qk),
            vo: a.funnel_targets.contains(&FunnelTargetArg::Vo),
            conv: a.funnel_targets.contains(&FunnelTargetArg::Conv),
        };
        net = net.inject_funnels(f, targets)?.merge_funnels()?;
    }
    let flops = net.count_flops()?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let (x, c) = net.random_inputs(&mut rng);
    let (y, trace) = net.forward_traced(&x, &c)?;
    let shape_ok = y.shape() == x.shape() && y.is_finite();
    let grid = if a.grid { Some(grid(&spec, &mut rng)?) } else { None };
    let grid_ok = grid.as_ref().is_none_or(|v| v["passed"] == json!(true));
    if let Some(out) = &g.out {
        save_net(&net, &out.join("net"))?;
        y.save(out.join("output.mvdt"))?;
    }
    Ok(Report {
        command: "toyrun",
        inputs_digest: digest,
        passed: shape_ok && grid_ok,
        metrics: json!({
            "spec": spec,
            "kept_temporal_blocks": kept,
            "temporal_blocks": net.temporal_block_count(),
            "param_count": net.param_count(),
            "weights_digest": net.weights_digest(),
            "output_digest": y.digest(),
            "output_shape": y.shape(),
            "internal_frames": trace.internal_frames(),
            "baseline_flops": baseline.total,
            "reduction_percent": flops.reduction_percent(&baseline),
            "flops": flops,
            "grid": grid,
        }),
    })
}

// ---- motion ----------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SyntheticArg {
    Static,
    Moving,
    Orthogonal,
}

#[derive(Debug, Args)]
pub struct MotionArgs {
    /// Frame directory (`*.rgb` plus `clip.json`) or MVDT `[T, C, H, W]` file.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    clip: Option<PathBuf>,

    /// Generate a clip instead of reading one.
    #[arg(long, value_enum)]
    synthetic: Option<SyntheticArg>,

    /// Native frame rate; overrides any sidecar.
    #[arg(long)]
    fps: Option<f64>,

    /// Keep every k-th frame (1 to 4) before measuring.
    #[arg(long)]
    stride: Option<usize>,

    /// Frames of synthetic clips and of strided output.
    #[arg(long, default_value_t = DEFAULT_TARGET_FRAMES)]
    frames: usize,

    #[arg(long, default_value_t = DEFAULT_BUCKET.0)]
    bucket_height: usize,

    #[arg(long, default_value_t = DEFAULT_BUCKET.1)]
    bucket_width: usize,
}

pub fn motion(g: &GlobalArgs, a: &MotionArgs) -> Result<Report, CliError> {
    let bucket: BucketConfig = read_config(g)?;
    let (h, w) = (a.bucket_height, a.bucket_width);
    let fps = a.fps.unwrap_or(24.0);
    let (mut clip, source): (Clip, String) = match (a.synthetic, &a.clip) {
        (Some(SyntheticArg::Static), _) => (static_clip(a.frames, h, w, fps)?, "synthetic:static".into()),
        (Some(SyntheticArg::Moving), _) => (
            moving_square_clip(a.frames, h, w, h.min(w) / 4, fps)?,
            "synthetic:moving".into(),
        ),
        (Some(SyntheticArg::Orthogonal), _) => (orthogonal_clip(a.frames, h, w, fps)?, "synthetic:orthogonal".into()),
        (None, Some(path)) => (load_clip(path, a.fps)?, "file".into()),
        (None, None) => return Err(CliError::Usage("motion needs --clip or --synthetic".into())),
    };
    if let Some(k) = a.stride {
        clip = fps_stride(&clip, k, a.frames)?;
    }
    let d = motion_descriptor(&clip, h, w)?;
    let t = clip.len() as f64;
    let lower = (t + 1.0) / (2.0 * t);
    let in_range = d.area >= lower - 1e-12 && d.area <= 1.0 + 1e-12;
    let other = BucketConfig {
        orientation: match bucket.orientation {
            BucketOrientation::MotionIncreasing => BucketOrientation::AreaIncreasing,
            BucketOrientation::AreaIncreasing => BucketOrientation::MotionIncreasing,
        },
        ..bucket.clone()
    };
    Ok(Report {
        command: "motion",
        inputs_digest: InputDigest::new("motion")
            .seed(g.seed)
            .text("source", &source)
            .tensor("frames", clip.frames())
            .json("fps", &clip.native_fps())
            .json("bucket", &bucket)
            .json("resolution", &(h, w))
            .finish(),
        passed: in_range,
        metrics: json!({
            "frames": clip.len(),
            "fps": clip.native_fps(),
            "descriptor": d,
            "area_lower_bound": lower,
            "bucket": bucket,
            "bucket_id": motion_bucket_id(d.area, &bucket)?,
            "bucket_id_opposite_orientation": motion_bucket_id(d.area, &other)?,
        }),
    })
}

// ---- verify ----------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated suites (default: all). Known: linalg, csi, merge,
    /// cross_attention, solver, jacobian, sampling, gates, toyunet,
    /// pruning_rates, motion, svd_like.
    #[arg(long, value_delimiter = ',')]
    suites: Option<Vec<String>>,

    /// Perturb merged and optimized weights by this amount; the run must fail.
    #[arg(long)]
    fault_magnitude: Option<f64>,
}

pub fn verify(g: &GlobalArgs, a: &VerifyArgs) -> Result<Report, CliError> {
    let mut cfg: VerifyConfig = read_config(g)?;
    cfg.seed = g.seed;
    if let Some(m) = a.fault_magnitude {
        cfg.fault = Some(Fault::WeightPerturbation { magnitude: m });
    }
    let suites: Vec<Suite> = match &a.suites {
        None => Suite::ALL.to_vec(),
        Some(names) => names
            .iter()
            .filter(|n| !n.trim().is_empty())
            .map(|n| Suite::parse(n.trim()))
            .collect::<Result<_, _>>()?,
    };
    if suites.is_empty() {
        return Err(CliError::Usage("empty suite selector".into()));
    }
    let (report, times) = verify::run(&suites, &cfg)?;
    for (name, r) in &report.suites {
        eprintln!(
            "{name:<16} {:<4} {:>8.2?}",
            if r.passed { "pass" } else { "FAIL" },
            times[name]
        );
    }
    Ok(Report {
        command: "verify",
        inputs_digest: InputDigest::new("verify")
            .seed(g.seed)
            .json("config", &cfg)
            .json("suites", &suites)
            .finish(),
        passed: report.passed,
        metrics: serde_json::to_value(&report).expect("report values are JSON"),
    })
}
