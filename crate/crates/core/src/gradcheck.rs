//! Central finite-difference verification of every differentiable layer and
//! of the end-to-end model.
//!
//! Each check builds a scalar objective: the layer output contracted with a
//! fixed random tensor `R` (or the loss itself for the losses). Analytic
//! gradients come from one backward pass, once in f32 and once in f64, both
//! at the same point (every input and parameter rounded to f32). For
//! `samples` coordinates of every input and parameter tensor the objective is
//! re-evaluated in f64 at `x ± h`.
//!
//! The step is the largest one from `steps` for which `x − h`, `x` and
//! `x + h` take identical branches in every non-smooth op (leaky-ReLU sign,
//! max-pool winner), so the difference never straddles a kink; large steps
//! keep rounding noise low on tiny gradients. The choice never looks at the
//! analytic value.
//!
//! The error of one coordinate is `|a − n| / max(|a|, |n|, floor)` where
//! `floor` is `floor_frac` times the largest analytic magnitude in the same
//! tensor, so coordinates far below the tensor's scale are not judged on
//! rounding noise alone.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss;
use crate::nn::{CfaBlock, Module, MwcnBlock, PRNet, PRNetConfig, Param};
use crate::tensor::ops::{self, Conv2dOptions};
use crate::tensor::{branch_fingerprint, no_grad, Element, Tensor};
use crate::wavelet::{haar_dwt2, haar_idwt2, Subbands};
use crate::wtconv::WTConvLayer;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Spatial extent of the layer inputs.
    pub size: usize,
    pub seed: u64,
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub samples: usize,
    /// Finite-difference steps, smallest first.
    pub steps: Vec<f64>,
    /// Pass thresholds on the relative error.
    pub tol_f32: f64,
    pub tol_f64: f64,
    /// Relative-error floor as a fraction of the tensor's largest gradient.
    pub floor_frac: f64,
    /// Stem width of the end-to-end model (stage widths follow as ×1,2,4,8).
    pub model_width: usize,
    /// Extent of the end-to-end model input; raised to the nearest admissible value.
    pub model_size: usize,
    /// Run only checks whose name contains this string.
    pub only: Option<String>,
}

impl GradCheckOptions {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            seed,
            samples: 10,
            steps: vec![1e-7, 1e-6, 1e-5, 1e-4, 1e-3],
            tol_f32: 1e-2,
            tol_f64: 1e-4,
            floor_frac: 1e-2,
            model_width: 8,
            model_size: 32,
            only: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub layer: String,
    /// Worst coordinate error and the tensor it came from.
    pub worst_rel_err: f64,
    pub worst_tensor: String,
    pub coords: usize,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub precision: &'static str,
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.results.iter().filter(|r| !r.passed()).collect()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{} {} {:<22} worst_rel_err={:.3e} (tol {:.0e}, {} coords, worst in {})",
                if r.passed() { "PASS" } else { "FAIL" },
                self.precision,
                r.layer,
                r.worst_rel_err,
                r.tolerance,
                r.coords,
                r.worst_tensor
            )?;
        }
        write!(
            f,
            "{}: {}/{} layers passed",
            self.precision,
            self.results.iter().filter(|r| r.passed()).count(),
            self.results.len()
        )
    }
}

/// Both precisions of one suite run.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub fp32: SuiteReport,
    pub fp64: SuiteReport,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.fp32.passed() && self.fp64.passed()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.fp32)?;
        write!(f, "{}", self.fp64)
    }
}

struct Case<'a, T: Element> {
    name: String,
    inputs: Vec<Tensor<T>>,
    params: Vec<(String, &'a Param<T>)>,
}

impl<'a, T: Element> Case<'a, T> {
    fn new(name: impl Into<String>, inputs: Vec<Tensor<T>>) -> Self {
        Self {
            name: name.into(),
            inputs,
            params: Vec::new(),
        }
    }

    fn with_module(mut self, m: &'a dyn Module<T>) -> Self {
        m.visit_params("", &mut |n, p| self.params.push((n.to_string(), p)));
        self
    }
}

type Objective<'f, T> = &'f dyn Fn(&[Tensor<T>]) -> Result<Tensor<T>>;

type Visitor<'v, T> = dyn for<'a, 'f> FnMut(Case<'a, T>, Objective<'f, T>) -> Result<()> + 'v;

fn contract<T: Element>(out: &Tensor<T>, r: &[f64]) -> f64 {
    out.data().iter().zip(r).map(|(o, w)| o.as_f64() * w).sum()
}

/// Runs `f` with gradients enabled and returns `(tensor name, gradient)` for
/// every input and parameter.
fn backward<T: Element>(case: &Case<'_, T>, f: Objective<'_, T>, r: &[f64]) -> Result<Vec<(String, Vec<f64>)>> {
    let inputs: Vec<Tensor<T>> = case
        .inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.to_vec()))
        .collect::<Result<_>>()?;
    for (_, p) in &case.params {
        p.zero_grad();
    }
    let out = f(&inputs)?;
    if out.numel() != r.len() {
        return Err(Error::shape(
            "gradcheck",
            format!("objective has {} elements, R has {}", out.numel(), r.len()),
        ));
    }
    let rt = Tensor::<T>::new(out.shape(), r.iter().map(|&v| T::from_f64_lossy(v)).collect())?;
    out.mul(&rt)?.sum()?.backward()?;
    let as_f64 = |g: Vec<T>| g.into_iter().map(|v| v.as_f64()).collect::<Vec<_>>();
    let mut grads = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        let g = t.grad().ok_or_else(|| Error::MissingGrad(format!("input{i}")))?;
        grads.push((format!("input{i}"), as_f64(g)));
    }
    for (name, p) in &case.params {
        let g = p.grad().ok_or_else(|| Error::MissingGrad(name.clone()))?;
        grads.push((name.clone(), as_f64(g)));
    }
    Ok(grads)
}

/// Coordinates picked in the f32 pass, with their analytic derivative and
/// the per-tensor floor.
struct Probe {
    tensor: String,
    idx: usize,
    analytic: f64,
    floor: f64,
}

struct Record {
    r: Vec<f64>,
    probes: Vec<Probe>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, g| m.max(g.abs()))
}

fn analytic_f32(
    case: Case<'_, f32>,
    f: Objective<'_, f32>,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Record> {
    let numel = no_grad(|| f(&case.inputs))?.numel();
    let r: Vec<f64> = if numel == 1 {
        vec![1.0]
    } else {
        (0..numel).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect()
    };
    let mut probes = Vec::new();
    for (name, grad) in backward(&case, f, &r)? {
        let floor = (opts.floor_frac * max_abs(&grad)).max(f64::MIN_POSITIVE);
        for idx in sample(rng, grad.len(), opts.samples.min(grad.len())).into_vec() {
            probes.push(Probe {
                tensor: name.clone(),
                idx,
                analytic: grad[idx],
                floor,
            });
        }
    }
    Ok(Record { r, probes })
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central difference at the largest step whose endpoints take the same
/// non-smooth branches as the centre; the smallest step when none does.
fn smooth_central(eval: &dyn Fn(f64) -> Result<(f64, u64)>, steps: &[f64]) -> Result<f64> {
    let (_, centre) = eval(0.0)?;
    for &h in steps.iter().rev() {
        let (up, bu) = eval(h)?;
        let (down, bd) = eval(-h)?;
        if bu == centre && bd == centre {
            return Ok((up - down) / (2.0 * h));
        }
    }
    let h = steps[0];
    Ok((eval(h)?.0 - eval(-h)?.0) / (2.0 * h))
}

/// f64 pass: analytic f64 gradients and the numerical derivatives at the
/// probes recorded by the f32 pass.
fn check_f64(
    case: Case<'_, f64>,
    f: Objective<'_, f64>,
    rec: &Record,
    opts: &GradCheckOptions,
) -> Result<[CheckResult; 2]> {
    let round = |v: f64| v as f32 as f64;
    let case = Case {
        inputs: case
            .inputs
            .iter()
            .map(|t| Tensor::new(t.shape(), t.data().iter().map(|&v| round(v)).collect()))
            .collect::<Result<_>>()?,
        ..case
    };
    for (_, p) in &case.params {
        p.set(p.get().data().iter().map(|&v| round(v)).collect())?;
    }
    let grads = backward(&case, f, &rec.r)?;
    let floors64: Vec<(String, f64)> = grads
        .iter()
        .map(|(n, g)| (n.clone(), (opts.floor_frac * max_abs(g)).max(f64::MIN_POSITIVE)))
        .collect();

    let inputs = &case.inputs;
    let mut worst32 = (0.0f64, String::new());
    let mut worst64 = (0.0f64, String::new());
    for probe in &rec.probes {
        let t = grads
            .iter()
            .position(|(n, _)| *n == probe.tensor)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown tensor {}", probe.tensor)))?;
        let param = case.params.iter().find(|(n, _)| *n == probe.tensor).map(|(_, p)| *p);
        let eval = |delta: f64| -> Result<(f64, u64)> {
            let (v, branches) = branch_fingerprint(|| {
                no_grad(|| match param {
                    Some(p) => {
                        let orig = p.get().to_vec();
                        let mut d = orig.clone();
                        d[probe.idx] += delta;
                        p.set(d)?;
                        let v = f(inputs).map(|o| contract(&o, &rec.r));
                        p.set(orig)?;
                        v
                    }
                    None => {
                        let mut xs = inputs.clone();
                        let mut d = xs[t].to_vec();
                        d[probe.idx] += delta;
                        xs[t] = Tensor::new(xs[t].shape(), d)?;
                        Ok(contract(&f(&xs)?, &rec.r))
                    }
                })
            });
            Ok((v?, branches))
        };
        let a64 = grads[t].1[probe.idx];
        let floor64 = floors64[t].1;
        let num = smooth_central(&eval, &opts.steps)?;
        let label = || format!("{}[{}]", probe.tensor, probe.idx);
        let e32 = rel_err(probe.analytic, num, probe.floor);
        if e32 > worst32.0 || worst32.1.is_empty() {
            worst32 = (e32, label());
        }
        let e64 = rel_err(a64, num, floor64);
        if e64 > worst64.0 || worst64.1.is_empty() {
            worst64 = (e64, label());
        }
    }
    let result = |w: (f64, String), tol: f64| CheckResult {
        layer: case.name.clone(),
        worst_rel_err: w.0,
        worst_tensor: w.1,
        coords: rec.probes.len(),
        tolerance: tol,
    };
    Ok([result(worst32, opts.tol_f32), result(worst64, opts.tol_f64)])
}

fn random<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| T::from_f64_lossy(rng.random_range(lo..hi))).collect(),
    )
    .expect("shape")
}

/// Values bounded away from zero by `gap`, so a kink at zero is never crossed.
fn away_from_zero<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            T::from_f64_lossy(if rng.random::<bool>() { m } else { -m })
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

/// A shuffled grid with spacing `gap`, so pooling windows never tie.
fn distinct<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<T> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * gap).collect();
    v.shuffle(rng);
    Tensor::new(shape, v.into_iter().map(T::from_f64_lossy).collect()).expect("shape")
}

fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}

/// Runs every check at both precisions; errors only on invalid options or
/// internal failures, not on gradient mismatches.
pub fn run_suite(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let s = opts.size;
    if s == 0 || !s.is_multiple_of(2) {
        return Err(Error::divisibility(
            "gradcheck",
            format!("size {s} must be a positive even number (2x2 pooling and the Haar transform halve it)"),
        ));
    }
    if opts.samples == 0 || opts.steps.len() < 2 || opts.steps.iter().any(|&h| h.is_nan() || h <= 0.0) {
        return Err(Error::InvalidArgument(
            "gradcheck needs samples > 0 and at least two positive steps".into(),
        ));
    }
    let wanted = |name: &str| opts.only.as_deref().is_none_or(|o| name.contains(o));

    let mut records = Vec::new();
    let mut k = 0u64;
    build_cases::<f32>(opts, &mut |case, f| {
        k += 1;
        if wanted(&case.name) {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9e37_79b9).wrapping_add(k));
            records.push(analytic_f32(case, f, opts, &mut rng)?);
        }
        Ok(())
    })?;

    let mut pending = records.iter();
    let mut fp32 = Vec::new();
    let mut fp64 = Vec::new();
    build_cases::<f64>(opts, &mut |case, f| {
        if wanted(&case.name) {
            let rec = pending.next().expect("same case sequence");
            let [a, b] = check_f64(case, f, rec, opts)?;
            fp32.push(a);
            fp64.push(b);
        }
        Ok(())
    })?;
    Ok(GradCheckReport {
        fp32: SuiteReport {
            precision: "f32",
            results: fp32,
        },
        fp64: SuiteReport {
            precision: "f64",
            results: fp64,
        },
    })
}

fn build_cases<T: Element>(opts: &GradCheckOptions, visit: &mut Visitor<'_, T>) -> Result<()> {
    let s = opts.size;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r = &mut rng;
    // Kinks (leaky ReLU, max pool) are kept at least this far from any probe.
    let gap = (20.0 * opts.steps.iter().fold(0.0f64, |m, &h| m.max(h))).max(0.05);

    let x = random::<T>(r, &[2, 4, s, s], -1.0, 1.0);
    let w = random::<T>(r, &[6, 2, 3, 3], -0.5, 0.5);
    let b = random::<T>(r, &[6], -0.5, 0.5);
    visit(Case::new("conv2d", vec![x, w, b]), &|t| {
        ops::conv2d(&t[0], &t[1], Some(&t[2]), Conv2dOptions::same(3).with_groups(2))
    })?;

    let x = random::<T>(r, &[2, 3, s, s], -1.0, 1.0);
    let w = random::<T>(r, &[4, 3, 2, 2], -0.5, 0.5);
    visit(Case::new("conv2d_strided", vec![x, w]), &|t| {
        ops::conv2d(
            &t[0],
            &t[1],
            None,
            Conv2dOptions {
                stride: 2,
                padding: 0,
                groups: 1,
            },
        )
    })?;

    let x = random::<T>(r, &[2, 3, s, s], -1.0, 1.0);
    let w = random::<T>(r, &[3, 1, 5, 5], -0.5, 0.5);
    visit(Case::new("depthwise_conv2d", vec![x, w]), &|t| {
        ops::depthwise_conv2d(&t[0], &t[1], 2)
    })?;

    let x = random::<T>(r, &[2, 4, s / 2, s / 2], -1.0, 1.0);
    let w = random::<T>(r, &[4, 3, 2, 2], -0.5, 0.5);
    let b = random::<T>(r, &[3], -0.5, 0.5);
    visit(Case::new("transposed_conv2x2", vec![x, w, b]), &|t| {
        ops::transposed_conv2x2(&t[0], &t[1], Some(&t[2]))
    })?;

    let x = distinct::<T>(r, &[2, 3, s, s], gap);
    visit(Case::new("maxpool2x2", vec![x]), &|t| ops::maxpool2x2(&t[0]))?;

    let x = random::<T>(r, &[2, 5, s, s], -1.0, 1.0);
    let g = random::<T>(r, &[5], 0.5, 1.5);
    let bt = random::<T>(r, &[5], -0.5, 0.5);
    visit(Case::new("layernorm", vec![x, g, bt]), &|t| {
        ops::layernorm(&t[0], &t[1], &t[2], T::from_f64_lossy(1e-5))
    })?;

    let x = away_from_zero::<T>(r, &[2, 3, s, s], gap);
    visit(Case::new("leaky_relu", vec![x]), &|t| {
        t[0].leaky_relu(T::from_f64_lossy(0.01))
    })?;

    let x = random::<T>(r, &[2, 3, s, s], -3.0, 3.0);
    visit(Case::new("sigmoid", vec![x]), &|t| t[0].sigmoid())?;

    let x = random::<T>(r, &[2, 5, s, s], -2.0, 2.0);
    visit(Case::new("softmax", vec![x.clone()]), &|t| ops::softmax_channel(&t[0]))?;
    visit(Case::new("log_softmax", vec![x]), &|t| ops::log_softmax_channel(&t[0]))?;

    let x = random::<T>(r, &[2, 3, s, s], -1.0, 1.0);
    visit(Case::new("patch_partition", vec![x]), &|t| {
        ops::patch_partition(&t[0], 2)
    })?;

    let x = random::<T>(r, &[2, 3, s, s], -1.0, 1.0);
    visit(Case::new("haar_dwt2", vec![x]), &|t| {
        let b = haar_dwt2(&t[0])?;
        ops::concat_channels(&[&b.ll, &b.lh, &b.hl, &b.hh])
    })?;
    let bands: Vec<Tensor<T>> = (0..4)
        .map(|_| random::<T>(r, &[2, 3, s / 2, s / 2], -1.0, 1.0))
        .collect();
    visit(Case::new("haar_idwt2", bands), &|t| {
        haar_idwt2(&Subbands {
            ll: t[0].clone(),
            lh: t[1].clone(),
            hl: t[2].clone(),
            hh: t[3].clone(),
        })
    })?;

    let mut mrng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    for k in [3usize, 5] {
        let layer = WTConvLayer::<T>::new(&mut mrng, 3, k, 2, 1.0)?;
        perturb_params(&layer, &mut mrng, 0.5)?;
        let x = random::<T>(r, &[2, 3, s, s], -1.0, 1.0);
        visit(Case::new(format!("wtconv_k{k}"), vec![x]).with_module(&layer), &|t| {
            layer.forward_padded(&t[0])
        })?;
    }

    let cfg = PRNetConfig::default();
    let block = MwcnBlock::<T>::new(&mut mrng, &cfg, 4, s, s)?;
    perturb_params(&block, &mut mrng, 0.2)?;
    let x = random::<T>(r, &[2, 4, s, s], -1.0, 1.0);
    visit(Case::new("mwcn_block", vec![x]).with_module(&block), &|t| {
        block.forward(&t[0])
    })?;

    let cfa_size = round_up(s, 2 * cfg.cfa_patch);
    let cfa = CfaBlock::<T>::new(&mut mrng, 4, cfg.cfa_patch)?;
    let x = random::<T>(r, &[2, 4, cfa_size, cfa_size], -1.0, 1.0);
    visit(Case::new("cfa_block", vec![x]).with_module(&cfa), &|t| {
        cfa.forward(&t[0])
    })?;

    let target: Vec<u8> = (0..2 * s * s).map(|_| r.random_range(0..5u8)).collect();
    let logits = random::<T>(r, &[2, 5, s, s], -2.0, 2.0);
    visit(Case::new("ce_loss", vec![logits.clone()]), &|t| {
        loss::ce_loss(&t[0], &target)
    })?;
    visit(Case::new("dice_loss", vec![logits.clone()]), &|t| {
        loss::dice_loss(&t[0], &target, loss::DICE_EPS)
    })?;
    visit(Case::new("combined_loss", vec![logits]), &|t| {
        loss::combined_loss(&t[0], &target)
    })?;

    let mcfg = PRNetConfig::default().with_base_width(opts.model_width);
    let ms = round_up(opts.model_size.max(s), mcfg.required_multiple());
    let mcfg = PRNetConfig {
        seed: opts.seed,
        ..mcfg.with_input(ms, ms)
    };
    let model = PRNet::<T>::new(&mcfg)?;
    perturb_params(&model, &mut mrng, 0.05)?;
    let x = random::<T>(r, &[1, 3, ms, ms], 0.0, 1.0);
    let target: Vec<u8> = (0..ms * ms)
        .map(|_| r.random_range(0..mcfg.num_classes) as u8)
        .collect();
    visit(
        Case::new(format!("prnet_{ms}x{ms}"), vec![x]).with_module(&model),
        &|t| loss::combined_loss(&model.forward(&t[0])?, &target),
    )?;

    Ok(())
}

/// Moves parameters off their structured init (ones, zeros, 0.5) so every
/// gradient path carries signal.
fn perturb_params<T: Element>(m: &dyn Module<T>, rng: &mut ChaCha8Rng, amount: f64) -> Result<()> {
    let mut result = Ok(());
    m.visit_params("", &mut |_, p| {
        if result.is_err() {
            return;
        }
        let d = p
            .get()
            .data()
            .iter()
            .map(|v| T::from_f64_lossy(v.as_f64() + rng.random_range(-amount..amount)))
            .collect();
        result = p.set(d);
    });
    result
}
