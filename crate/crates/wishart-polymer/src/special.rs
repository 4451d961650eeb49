//! Special functions on the SPD cone and a Monte Carlo integrator against
//! the reference measure dμ(x) = |x|^{-(d+1)/2} Π dx_ij.
//!
//! Scalar log-gamma and digamma use the Stirling asymptotic series with an
//! upward recurrence shift (argument pushed above 10), accurate to ~1e-14.
//! The matrix K-Bessel and two-argument Whittaker functions have no closed
//! form at d ≥ 2; they are estimated by importance sampling and validated
//! through their symmetry identities. At d = 1 everything is cross-checked
//! against deterministic quadrature.

use crate::rng::Seed;
use crate::spd::{SpdError, SpdMatrix};
use crate::sampling::{sample_wishart_with, sample_inv_wishart_with};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecialError {
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("nonfinite importance weight at sample {index}: log f = {log_f}, log q = {log_q}")]
    NonFiniteWeight { index: usize, log_f: f64, log_q: f64 },
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error(transparent)]
    Sampling(#[from] crate::sampling::SamplingError),
}

pub type Result<T> = std::result::Result<T, SpecialError>;

const STIRLING_SHIFT: f64 = 10.0;

/// log Γ(x) for x > 0.
pub fn ln_gamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    // Recurrence ln Γ(x) = ln Γ(x+1) - ln x until the series applies.
    let mut shift = 0.0;
    while x < STIRLING_SHIFT {
        shift -= x.ln();
        x += 1.0;
    }
    // Stirling series coefficients B_{2n} / (2n (2n-1))
    const C: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360360.0,
        1.0 / 156.0,
    ];
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut p = inv;
    for c in C {
        series += c * p;
        p *= inv2;
    }
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// Digamma ψ(x) for x > 0.
pub fn digamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "digamma requires x > 0, got {x}");
    let mut shift = 0.0;
    while x < STIRLING_SHIFT {
        shift -= 1.0 / x;
        x += 1.0;
    }
    // ψ(x) ~ ln x - 1/(2x) - Σ B_{2n} / (2n x^{2n})
    const C: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ];
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut p = inv2;
    for c in C {
        series += c * p;
        p *= inv2;
    }
    shift + x.ln() - 0.5 / x - series
}

fn check_multigamma_domain(d: usize, theta: f64) -> Result<()> {
    if d == 0 {
        return Err(SpecialError::Parameter("dimension must be positive".into()));
    }
    let bound = (d as f64 - 1.0) / 2.0;
    if theta <= bound {
        return Err(SpecialError::Parameter(format!(
            "multivariate gamma needs theta > (d-1)/2 = {bound}, got {theta}"
        )));
    }
    Ok(())
}

/// log Γ_d(θ) = (d(d-1)/4) log π + Σ_{k=1}^{d} log Γ(θ - (k-1)/2), θ > (d-1)/2.
pub fn multigamma_ln(d: usize, theta: f64) -> Result<f64> {
    check_multigamma_domain(d, theta)?;
    let mut acc = (d * (d - 1)) as f64 / 4.0 * std::f64::consts::PI.ln();
    for k in 0..d {
        acc += ln_gamma(theta - k as f64 / 2.0);
    }
    Ok(acc)
}

/// ψ_d(θ) = d/dθ log Γ_d(θ) = Σ_{k=1}^{d} ψ(θ - (k-1)/2).
pub fn multidigamma(d: usize, theta: f64) -> Result<f64> {
    check_multigamma_domain(d, theta)?;
    let mut acc = 0.0;
    for k in 0..d {
        acc += digamma(theta - k as f64 / 2.0);
    }
    Ok(acc)
}

/// A Monte Carlo estimate with its CLT standard error.
#[derive(Clone, Copy, Debug)]
pub struct IntegralEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl IntegralEstimate {
    /// |a - b| measured in combined standard errors. The error floor keeps
    /// zero-variance estimates (exactly matching proposals) from flagging
    /// double-precision rounding as a statistical discrepancy.
    pub fn sigma_distance(&self, other: &IntegralEstimate) -> f64 {
        let scale = self.value.abs().max(other.value.abs());
        let se = (self.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        (self.value - other.value).abs() / se.max(1e-13 * scale)
    }

    pub fn sigma_distance_to(&self, target: f64) -> f64 {
        let scale = self.value.abs().max(target.abs());
        (self.value - target).abs() / self.std_error.max(1e-13 * scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalKind {
    Wishart,
    InverseWishart,
}

/// Importance proposal on the cone: `Wishart(shape) ⋆ scale` or
/// `InverseWishart(shape) ⋆ scale`.
#[derive(Clone, Debug)]
pub struct ProposalSpec {
    kind: ProposalKind,
    shape: f64,
    scale: SpdMatrix,
    scale_inv: SpdMatrix,
    log_norm: f64,
    log_det_scale: f64,
}

impl ProposalSpec {
    pub fn new(kind: ProposalKind, shape: f64, scale: SpdMatrix) -> Result<Self> {
        let d = scale.dim();
        check_multigamma_domain(d, shape)?;
        let log_norm = multigamma_ln(d, shape)?;
        let scale_inv = scale.inverse()?;
        let log_det_scale = scale.logdet()?;
        Ok(ProposalSpec { kind, shape, scale, scale_inv, log_norm, log_det_scale })
    }

    pub fn dim(&self) -> usize {
        self.scale.dim()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Result<SpdMatrix> {
        let draw = match self.kind {
            ProposalKind::Wishart => sample_wishart_with(self.dim(), self.shape, rng)?,
            ProposalKind::InverseWishart => sample_inv_wishart_with(self.dim(), self.shape, rng)?,
        };
        Ok(crate::spd::star(&draw, &self.scale)?)
    }

    /// log density with respect to dμ.
    pub fn log_density(&self, x: &SpdMatrix) -> Result<f64> {
        let ld = x.logdet()?;
        Ok(match self.kind {
            ProposalKind::Wishart => {
                self.shape * (ld - self.log_det_scale) - x.trace_product(&self.scale_inv)? - self.log_norm
            }
            ProposalKind::InverseWishart => {
                -self.shape * (ld - self.log_det_scale) - self.scale.trace_product_inv(x)? - self.log_norm
            }
        })
    }
}

/// A defensive half/half mixture of two proposals; covers both the origin
/// and the far tail of the cone.
#[derive(Clone, Debug)]
pub struct MixtureProposal {
    components: Vec<ProposalSpec>,
}

impl MixtureProposal {
    pub fn new(components: Vec<ProposalSpec>) -> Self {
        assert!(!components.is_empty());
        MixtureProposal { components }
    }

    fn sample(&self, rng: &mut impl Rng) -> Result<SpdMatrix> {
        let k = rng.gen_range(0..self.components.len());
        self.components[k].sample(rng)
    }

    fn log_density(&self, x: &SpdMatrix) -> Result<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_density(x))
            .collect::<Result<_>>()?;
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        Ok(m + (sum / self.components.len() as f64).ln())
    }
}

const BLOCK: usize = 4096;

/// Unbiased importance-sampling estimate of ∫ f dμ over the SPD cone.
///
/// `log_f` evaluates log f; the proposal must be strictly positive wherever
/// f is. Deterministic given the seed, independent of thread count: samples
/// are generated in fixed blocks with per-block derived streams and reduced
/// in block order.
pub fn integrate_pd<F>(log_f: F, proposal: &ProposalSpec, n: usize, seed: &Seed) -> Result<IntegralEstimate>
where
    F: Fn(&SpdMatrix) -> f64 + Sync,
{
    let mixture = MixtureProposal::new(vec![proposal.clone()]);
    integrate_pd_mixture(log_f, &mixture, n, seed)
}

/// Same estimator with an explicit mixture proposal.
pub fn integrate_pd_mixture<F>(
    log_f: F,
    proposal: &MixtureProposal,
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate>
where
    F: Fn(&SpdMatrix) -> f64 + Sync,
{
    assert!(n >= 2, "need at least two samples");
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(BLOCK)
        .map(|start| (start / BLOCK, BLOCK.min(n - start)))
        .collect();
    let partials: Vec<Result<(f64, f64)>> = blocks
        .par_iter()
        .map(|&(block_ix, count)| {
            let mut rng = seed.child(block_ix as u64).rng();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for i in 0..count {
                let x = proposal.sample(&mut rng)?;
                let lf = log_f(&x);
                let lq = proposal.log_density(&x)?;
                let w = if lf == f64::NEG_INFINITY { 0.0 } else { (lf - lq).exp() };
                if !w.is_finite() {
                    return Err(SpecialError::NonFiniteWeight {
                        index: block_ix * BLOCK + i,
                        log_f: lf,
                        log_q: lq,
                    });
                }
                sum += w;
                sum_sq += w * w;
            }
            Ok((sum, sum_sq))
        })
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for p in partials {
        let (s, s2) = p?;
        sum += s;
        sum_sq += s2;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) / (nf - 1.0);
    Ok(IntegralEstimate { value: mean, std_error: var.sqrt(), n_samples: n })
}

/// Matrix K-Bessel function K_ν(V, W) = ∫ |Y|^ν e^{-tr[VY + WY⁻¹]} dμ(Y),
/// estimated by importance sampling with a defensive two-sided proposal.
pub fn kbessel(nu: f64, v: &SpdMatrix, w: &SpdMatrix, n: usize, seed: &Seed) -> Result<IntegralEstimate> {
    if v.dim() != w.dim() {
        return Err(SpdError::DimensionMismatch(v.dim(), w.dim()).into());
    }
    let d = v.dim();
    let halfd = (d as f64 + 1.0) / 2.0;
    // Inverse-Wishart component matches the W Y⁻¹ factor, Wishart the V Y one.
    let iw_shape = halfd + (-nu).max(0.0);
    let w_shape = halfd + nu.max(0.0);
    let mixture = MixtureProposal::new(vec![
        ProposalSpec::new(ProposalKind::InverseWishart, iw_shape, w.clone())?,
        ProposalSpec::new(ProposalKind::Wishart, w_shape, v.inverse()?)?,
    ]);
    let v = v.clone();
    let w = w.clone();
    integrate_pd_mixture(
        move |y| {
            let ld = match y.logdet() {
                Ok(l) => l,
                Err(_) => return f64::NEG_INFINITY,
            };
            let tv = match y.trace_product(&v) {
                Ok(t) => t,
                Err(_) => return f64::NEG_INFINITY,
            };
            let tw = match w.trace_product_inv(y) {
                Ok(t) => t,
                Err(_) => return f64::NEG_INFINITY,
            };
            nu * ld - tv - tw
        },
        &mixture,
        n,
        seed,
    )
}

/// Whittaker function of two matrix arguments,
/// ψ_{(α,β)}(X₁, X₂) = |X₁X₂|^{-β} ∫ |Y|^{β-α} e^{-tr[X₁⁻¹Y + X₂Y⁻¹]} dμ(Y).
pub fn whittaker2(
    alpha: f64,
    beta: f64,
    x1: &SpdMatrix,
    x2: &SpdMatrix,
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate> {
    let bessel = kbessel(beta - alpha, &x1.inverse()?, x2, n, seed)?;
    let prefactor = (-beta * (x1.logdet()? + x2.logdet()?)).exp();
    Ok(IntegralEstimate {
        value: prefactor * bessel.value,
        std_error: prefactor * bessel.std_error,
        n_samples: bessel.n_samples,
    })
}

/// Deterministic evaluation of ∫_0^∞ f(x) dμ(x) at d = 1, where
/// dμ = dx/x and `log_f` returns log f. Used as the scalar oracle for the
/// Monte Carlo estimators.
///
/// Substitutes x = e^t and applies the trapezoid rule on a window found by
/// scanning for the peak of the integrand; for the analytic, doubly
/// exponentially decaying integrands in this crate the rule converges
/// geometrically in the step size.
pub fn integrate_dmu_d1<F: Fn(f64) -> f64>(log_f: F) -> f64 {
    let h = |t: f64| log_f(t.exp());
    // locate the peak on a coarse grid
    let mut peak_t = 0.0;
    let mut peak = f64::NEG_INFINITY;
    let mut t = -120.0;
    while t <= 120.0 {
        let v = h(t);
        if v > peak {
            peak = v;
            peak_t = t;
        }
        t += 0.125;
    }
    assert!(peak.is_finite(), "integrand vanishes everywhere");
    // expand until negligible relative to the peak
    const DROP: f64 = 60.0;
    let mut lo = peak_t;
    while h(lo) > peak - DROP && lo > -800.0 {
        lo -= 1.0;
    }
    let mut hi = peak_t;
    while h(hi) > peak - DROP && hi < 800.0 {
        hi += 1.0;
    }
    let sum_with_step = |step: f64| -> f64 {
        let n = ((hi - lo) / step).ceil() as usize;
        let mut acc = 0.0;
        for i in 0..=n {
            let t = lo + i as f64 * step;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * (h(t) - peak).exp();
        }
        acc * step
    };
    let mut step = 0.25;
    let mut prev = sum_with_step(step);
    for _ in 0..12 {
        step *= 0.5;
        let cur = sum_with_step(step);
        if (cur - prev).abs() <= 1e-13 * cur.abs() {
            return (peak).exp() * cur;
        }
        prev = cur;
    }
    peak.exp() * prev
}

/// Scalar K-Bessel oracle: K_ν(v, w) at d = 1 by quadrature.
pub fn kbessel_quad_d1(nu: f64, v: f64, w: f64) -> f64 {
    assert!(v > 0.0 && w > 0.0);
    integrate_dmu_d1(|x| nu * x.ln() - v * x - w / x)
}

/// Scalar two-argument Whittaker oracle at d = 1.
pub fn whittaker2_quad_d1(alpha: f64, beta: f64, x1: f64, x2: f64) -> f64 {
    (x1 * x2).powf(-beta) * kbessel_quad_d1(beta - alpha, 1.0 / x1, x2)
}
