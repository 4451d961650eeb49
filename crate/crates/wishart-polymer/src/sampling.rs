//! Random generation on the SPD cone: Wishart and inverse-Wishart draws in
//! the cone parametrization (density |x|^θ e^{-tr x} / Γ_d(θ) against dμ),
//! matrix GIG distributions, and the multiplicative random-walk processes
//! built from them.
//!
//! Wishart sampling uses the Bartlett construction X = M Mᵀ with M lower
//! triangular, M_kk² ~ Gamma(θ - (k-1)/2, 1) and off-diagonal N(0, 1/2);
//! this matches the density above for non-integer θ. The moment and
//! log-determinant identities (E[X] = θ·id, E[log|X|] = ψ_d(θ)) are pinned
//! by tests.

use crate::rng::Seed;
use crate::spd::{star, star_inv, SpdError, SpdMatrix};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("nonfinite Metropolis acceptance ratio ({0})")]
    NonFiniteAcceptance(f64),
    #[error(transparent)]
    Spd(#[from] SpdError),
}

pub type Result<T> = std::result::Result<T, SamplingError>;

fn check_shape(d: usize, theta: f64, what: &str) -> Result<()> {
    let bound = (d as f64 - 1.0) / 2.0;
    if !(theta > bound) {
        return Err(SamplingError::Parameter(format!(
            "{what} needs parameter > (d-1)/2 = {bound}, got {theta}"
        )));
    }
    Ok(())
}

/// One Wishart(θ) draw (cone parametrization) using the caller's generator.
pub fn sample_wishart_with(d: usize, theta: f64, rng: &mut impl Rng) -> Result<SpdMatrix> {
    check_shape(d, theta, "Wishart")?;
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let gamma = Gamma::new(theta - i as f64 / 2.0, 1.0)
            .map_err(|e| SamplingError::Parameter(e.to_string()))?;
        m[(i, i)] = gamma.sample(rng).sqrt();
        for j in 0..i {
            let z: f64 = StandardNormal.sample(rng);
            m[(i, j)] = z * std::f64::consts::FRAC_1_SQRT_2;
        }
    }
    Ok(SpdMatrix::from_symmetric_unchecked(&m * m.transpose()))
}

/// One inverse-Wishart(θ) draw: the inverse of a Wishart(θ) draw.
pub fn sample_inv_wishart_with(d: usize, theta: f64, rng: &mut impl Rng) -> Result<SpdMatrix> {
    Ok(sample_wishart_with(d, theta, rng)?.inverse()?)
}

pub fn sample_wishart(d: usize, theta: f64, seed: &Seed) -> Result<SpdMatrix> {
    sample_wishart_with(d, theta, &mut seed.rng())
}

pub fn sample_inv_wishart(d: usize, theta: f64, seed: &Seed) -> Result<SpdMatrix> {
    sample_inv_wishart_with(d, theta, &mut seed.rng())
}

/// E[Wis⁻¹(γ)] = c(γ)·id with c(γ) = 1/(γ - (d+1)/2), defined for γ > (d+1)/2.
pub fn inv_wishart_mean_constant(d: usize, gamma: f64) -> Result<f64> {
    let bound = (d as f64 + 1.0) / 2.0;
    if !(gamma > bound) {
        return Err(SamplingError::Parameter(format!(
            "inverse-Wishart mean needs parameter > (d+1)/2 = {bound}, got {gamma}"
        )));
    }
    Ok(1.0 / (gamma - bound))
}

/// Parameters of the matrix GIG density |x|^a e^{-tr[Px + Qx⁻¹]} against dμ.
///
/// `p`/`q` equal to `None` stand for the exact zero matrix. Validity:
/// both sides present (any a), or P alone with a > (d-1)/2, or Q alone with
/// -a > (d-1)/2 — precisely the cases that arise as site conditionals of the
/// two-layer Gibbs measures.
#[derive(Clone, Debug)]
pub struct GigParams {
    a: f64,
    p: Option<SpdMatrix>,
    q: Option<SpdMatrix>,
    dim: usize,
}

impl GigParams {
    pub fn new(a: f64, p: Option<SpdMatrix>, q: Option<SpdMatrix>) -> Result<Self> {
        let dim = match (&p, &q) {
            (Some(p), Some(q)) => {
                if p.dim() != q.dim() {
                    return Err(SamplingError::Spd(SpdError::DimensionMismatch(p.dim(), q.dim())));
                }
                p.dim()
            }
            (Some(p), None) => {
                check_shape(p.dim(), a, "GIG with Q = 0")?;
                p.dim()
            }
            (None, Some(q)) => {
                check_shape(q.dim(), -a, "GIG with P = 0")?;
                q.dim()
            }
            (None, None) => {
                return Err(SamplingError::Parameter(
                    "GIG needs at least one of P, Q strictly positive definite".into(),
                ));
            }
        };
        Ok(GigParams { a, p, q, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exponent(&self) -> f64 {
        self.a
    }

    /// log density against dμ, up to the (unknown) normalization constant.
    pub fn log_density_unnorm(&self, x: &SpdMatrix) -> Result<f64> {
        let mut acc = self.a * x.logdet()?;
        if let Some(p) = &self.p {
            acc -= x.trace_product(p)?;
        }
        if let Some(q) = &self.q {
            acc -= q.trace_product_inv(x)?;
        }
        Ok(acc)
    }
}

/// Draws from the matrix GIG law.
///
/// Exact when one side vanishes: P = 0 gives Wis⁻¹(-a) ⋆ Q and Q = 0 gives
/// Wis(a) ⋆ P⁻¹. Otherwise runs `mh_steps` Metropolis-Hastings updates from
/// `current`, alternating an independence proposal (inverse-Wishart riding
/// on Q) with a geometric random-walk proposal x' = exp(εS) ⋆ x, which is
/// symmetric with respect to dμ. Detailed balance holds exactly for both
/// kernels. The walk scale ε halves whenever the running acceptance rate of
/// the walk moves drops below 10%.
pub fn sample_matrix_gig(
    params: &GigParams,
    current: &SpdMatrix,
    mh_steps: usize,
    rng: &mut impl Rng,
) -> Result<SpdMatrix> {
    match (&params.p, &params.q) {
        (None, Some(q)) => {
            let w = sample_inv_wishart_with(params.dim, -params.a, rng)?;
            Ok(star(&w, q)?)
        }
        (Some(p), None) => {
            let w = sample_wishart_with(params.dim, params.a, rng)?;
            Ok(star(&w, &p.inverse()?)?)
        }
        (Some(_), Some(q)) => {
            if current.dim() != params.dim {
                return Err(SamplingError::Spd(SpdError::DimensionMismatch(current.dim(), params.dim)));
            }
            let d = params.dim;
            // Independence proposal: Wis⁻¹(γ*) ⋆ Q with γ* matched to the
            // polynomial exponent when admissible.
            let gamma_star = if -params.a > (d as f64 - 1.0) / 2.0 {
                -params.a
            } else {
                (d as f64 + 1.0) / 2.0
            };
            let q_mat = q.clone();
            let log_q_ind = |x: &SpdMatrix| -> Result<f64> {
                Ok(-gamma_star * x.logdet()? - q_mat.trace_product_inv(x)?)
            };
            let mut x = current.clone();
            let mut log_f_x = params.log_density_unnorm(&x)?;
            let mut eps = 0.4;
            let mut walk_proposed = 0usize;
            let mut walk_accepted = 0usize;
            for step in 0..mh_steps {
                if step % 2 == 0 {
                    let w = sample_inv_wishart_with(d, gamma_star, rng)?;
                    let cand = star(&w, q)?;
                    let log_f_c = params.log_density_unnorm(&cand)?;
                    let log_ratio = log_f_c - log_f_x + log_q_ind(&x)? - log_q_ind(&cand)?;
                    if !log_ratio.is_finite() && log_ratio != f64::NEG_INFINITY {
                        return Err(SamplingError::NonFiniteAcceptance(log_ratio));
                    }
                    if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
                        x = cand;
                        log_f_x = log_f_c;
                    }
                } else {
                    // x' = exp(εS) ⋆ x with S a GOE-type symmetric Gaussian:
                    // the proposal density w.r.t. dμ is a spectral,
                    // inversion-symmetric function of x' ⋆ x⁻¹, hence symmetric.
                    let mut s = DMatrix::zeros(d, d);
                    for i in 0..d {
                        let z: f64 = StandardNormal.sample(rng);
                        s[(i, i)] = z;
                        for j in 0..i {
                            let z: f64 = StandardNormal.sample(rng);
                            s[(i, j)] = z * std::f64::consts::FRAC_1_SQRT_2;
                            s[(j, i)] = s[(i, j)];
                        }
                    }
                    let sym = nalgebra::SymmetricEigen::new(s * eps);
                    let g = &sym.eigenvectors
                        * DMatrix::from_diagonal(&sym.eigenvalues.map(f64::exp))
                        * sym.eigenvectors.transpose();
                    let g = SpdMatrix::from_symmetric_unchecked(g);
                    let cand = star(&g, &x)?;
                    let log_f_c = params.log_density_unnorm(&cand)?;
                    let log_ratio = log_f_c - log_f_x;
                    if !log_ratio.is_finite() && log_ratio != f64::NEG_INFINITY {
                        return Err(SamplingError::NonFiniteAcceptance(log_ratio));
                    }
                    walk_proposed += 1;
                    if log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio {
                        x = cand;
                        log_f_x = log_f_c;
                        walk_accepted += 1;
                    }
                    if walk_proposed % 50 == 0 && (walk_accepted as f64) < 0.1 * walk_proposed as f64 {
                        eps *= 0.5;
                        walk_proposed = 0;
                        walk_accepted = 0;
                    }
                }
            }
            Ok(x)
        }
        (None, None) => unreachable!("rejected at construction"),
    }
}

/// Step alphabet of down-right paths and walk words.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Right,
    Down,
}

/// Start of a walk: a fixed matrix or the identity.
#[derive(Clone, Debug)]
pub enum WalkStart {
    Fixed(SpdMatrix),
    Identity,
}

impl WalkStart {
    fn realize(&self, d: usize) -> SpdMatrix {
        match self {
            WalkStart::Fixed(s) => s.clone(),
            WalkStart::Identity => SpdMatrix::identity(d),
        }
    }
}

/// Specification of a Wis± random walk: per-step parameters γ_k, a word of
/// Right/Down symbols, and the starting matrix.
#[derive(Clone, Debug)]
pub struct WalkSpec {
    pub dim: usize,
    pub gammas: Vec<f64>,
    pub word: Vec<Step>,
    pub start: WalkStart,
}

impl WalkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.len() != self.word.len() {
            return Err(SamplingError::Parameter(format!(
                "walk needs one parameter per step: {} vs {}",
                self.gammas.len(),
                self.word.len()
            )));
        }
        for &g in &self.gammas {
            check_shape(self.dim, g, "walk increment")?;
        }
        Ok(())
    }
}

/// Samples the Wis± walk (S₀, …, S_N): S_k = X_k ⋆ S_{k-1} with independent
/// X_k ~ Wis⁻¹(γ_k) on Right steps and X_k ~ Wis(γ_k) on Down steps, which
/// realizes S_k ⋆ S_{k-1}⁻¹ = X_k exactly.
pub fn sample_walk(spec: &WalkSpec, seed: &Seed) -> Result<Vec<SpdMatrix>> {
    spec.validate()?;
    let mut values = Vec::with_capacity(spec.word.len() + 1);
    values.push(spec.start.realize(spec.dim));
    for (k, (&step, &gamma)) in spec.word.iter().zip(&spec.gammas).enumerate() {
        let mut rng = seed.child(k as u64).rng();
        let incr = match step {
            Step::Right => sample_inv_wishart_with(spec.dim, gamma, &mut rng)?,
            Step::Down => sample_wishart_with(spec.dim, gamma, &mut rng)?,
        };
        let prev = values.last().unwrap();
        values.push(star(&incr, prev)?);
    }
    Ok(values)
}

/// A process indexed by -m..=n, as produced by the two-sided walk and the
/// stationary boundary conditions.
#[derive(Clone, Debug)]
pub struct IndexedProcess {
    pub offset: i64,
    pub values: Vec<SpdMatrix>,
}

impl IndexedProcess {
    pub fn get(&self, k: i64) -> &SpdMatrix {
        &self.values[(k - self.offset) as usize]
    }

    pub fn min_index(&self) -> i64 {
        self.offset
    }

    pub fn max_index(&self) -> i64 {
        self.offset + self.values.len() as i64 - 1
    }

    /// The increment S_k ⋆ S_{k-1}⁻¹.
    pub fn increment(&self, k: i64) -> crate::spd::Result<SpdMatrix> {
        star_inv(self.get(k), self.get(k - 1))
    }
}

/// Two-sided inverse-Wishart walk: S_k ⋆ S_{k-1}⁻¹ ~ Wis⁻¹(α) forward,
/// S_{-k} ⋆ S_{-(k-1)}⁻¹ ~ Wis⁻¹(β) backward, all increments independent.
pub fn sample_two_sided_walk(
    alpha: f64,
    beta: f64,
    s0: &SpdMatrix,
    m: usize,
    n: usize,
    seed: &Seed,
) -> Result<IndexedProcess> {
    let d = s0.dim();
    check_shape(d, alpha, "two-sided walk forward increments")?;
    check_shape(d, beta, "two-sided walk backward increments")?;
    let mut values = vec![s0.clone(); m + n + 1];
    // forward branch, stream 0
    for k in 1..=n {
        let mut rng = seed.child2(0, k as u64).rng();
        let incr = sample_inv_wishart_with(d, alpha, &mut rng)?;
        values[m + k] = star(&incr, &values[m + k - 1])?;
    }
    // backward branch, stream 1
    for k in 1..=m {
        let mut rng = seed.child2(1, k as u64).rng();
        let incr = sample_inv_wishart_with(d, beta, &mut rng)?;
        values[m - k] = star(&incr, &values[m - k + 1])?;
    }
    Ok(IndexedProcess { offset: -(m as i64), values })
}

#[derive(Clone, Debug)]
pub enum BoundaryReference {
    Fixed(SpdMatrix),
    Identity,
}

/// Stationary boundary conditions with reference point -M: the reference
/// matrix sits at index -M and the three branches of increments follow
///   B_{k-1} ⋆ B_k⁻¹   ~ Wis⁻¹(θ+u)   for k < -M (up the axis),
///   B_k ⋆ B_{k-1}⁻¹   ~ Wis(θ+u)     for -M < k ≤ 0,
///   B_k ⋆ B_{k-1}⁻¹   ~ Wis⁻¹(θ-u)   for k > 0.
#[derive(Clone, Debug)]
pub struct BoundarySpec {
    pub dim: usize,
    pub theta: f64,
    pub u: f64,
    pub reference_point: usize,
    pub reference: BoundaryReference,
}

impl BoundarySpec {
    pub fn validate(&self) -> Result<()> {
        check_shape(self.dim, self.theta + self.u, "stationary boundary (θ+u)")?;
        check_shape(self.dim, self.theta - self.u, "stationary boundary (θ-u)")?;
        Ok(())
    }
}

pub fn sample_stationary_boundary(
    spec: &BoundarySpec,
    m_max: usize,
    n_max: usize,
    seed: &Seed,
) -> Result<IndexedProcess> {
    spec.validate()?;
    let m_cap = (spec.reference_point as i64).max(m_max as i64) as usize;
    if m_max < spec.reference_point {
        return Err(SamplingError::Parameter(format!(
            "extent must cover the reference point: m_max = {m_max} < M = {}",
            spec.reference_point
        )));
    }
    let d = spec.dim;
    let big_m = spec.reference_point as i64;
    let reference = match &spec.reference {
        BoundaryReference::Fixed(s) => s.clone(),
        BoundaryReference::Identity => SpdMatrix::identity(d),
    };
    let mut values = vec![reference; (m_cap as usize) + n_max + 1];
    let offset = -(m_cap as i64);
    let at = |k: i64| (k - offset) as usize;
    // downward from the reference point toward index 0: Wishart(θ+u)
    for k in (-big_m + 1)..=0 {
        let mut rng = seed.child2(0, (k + big_m) as u64).rng();
        let incr = sample_wishart_with(d, spec.theta + spec.u, &mut rng)?;
        values[at(k)] = star(&incr, &values[at(k - 1)].clone())?;
    }
    // upward beyond the reference point: B_{k-1} = X ⋆ B_k, X ~ Wis⁻¹(θ+u)
    for k in ((-(m_max as i64))..=(-big_m - 1)).rev() {
        let mut rng = seed.child2(1, (-k - big_m) as u64).rng();
        let incr = sample_inv_wishart_with(d, spec.theta + spec.u, &mut rng)?;
        values[at(k)] = star(&incr, &values[at(k + 1)].clone())?;
    }
    // bottom axis: Wis⁻¹(θ-u)
    for k in 1..=(n_max as i64) {
        let mut rng = seed.child2(2, k as u64).rng();
        let incr = sample_inv_wishart_with(d, spec.theta - spec.u, &mut rng)?;
        values[at(k)] = star(&incr, &values[at(k - 1)].clone())?;
    }
    let skip = (m_cap - m_max) as usize;
    Ok(IndexedProcess { offset: -(m_max as i64), values: values[skip..].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::multidigamma;

    fn mean_entrywise(draws: &[SpdMatrix]) -> DMatrix<f64> {
        let d = draws[0].dim();
        let mut acc = DMatrix::zeros(d, d);
        for x in draws {
            acc += x.matrix();
        }
        acc / draws.len() as f64
    }

    fn logdet_stats(draws: &[SpdMatrix]) -> (f64, f64) {
        let lds: Vec<f64> = draws.iter().map(|x| x.logdet().unwrap()).collect();
        let n = lds.len() as f64;
        let mean = lds.iter().sum::<f64>() / n;
        let var = lds.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn wishart_mean_is_theta_id() {
        let (d, theta, n) = (2usize, 3.0, 100_000usize);
        let seed = Seed::new(101);
        let draws: Vec<SpdMatrix> = (0..n)
            .map(|i| sample_wishart(d, theta, &seed.child(i as u64)).unwrap())
            .collect();
        let mean = mean_entrywise(&draws);
        // per-entry variance of W_ij is O(theta); 4 SE budget
        let se = (2.0 * theta / n as f64).sqrt();
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { theta } else { 0.0 };
                assert!(
                    (mean[(i, j)] - target).abs() < 4.0 * se * 2.0,
                    "entry ({i},{j}): {} vs {target}",
                    mean[(i, j)]
                );
            }
        }
    }

    #[test]
    fn wishart_scalar_case_is_gamma() {
        // d=1, θ=2: density x² e^{-x} dμ = Gamma(2) in dx
        let n = 50_000;
        let seed = Seed::new(102);
        let draws: Vec<f64> = (0..n)
            .map(|i| sample_wishart(1, 2.0, &seed.child(i)).unwrap().entry(0, 0))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (2.0f64 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn wishart_logdet_matches_multidigamma() {
        let (d, theta) = (2usize, 3.0);
        let seed = Seed::new(103);
        let draws: Vec<SpdMatrix> = (0..60_000)
            .map(|i| sample_wishart(d, theta, &seed.child(i)).unwrap())
            .collect();
        let (mean, se) = logdet_stats(&draws);
        let target = multidigamma(d, theta).unwrap();
        assert!((mean - target).abs() < 4.0 * se, "{mean} vs {target}");
    }

    #[test]
    fn inv_wishart_mean_constant_matches() {
        for (d, theta) in [(1usize, 3.0), (3usize, 4.0)] {
            let c = inv_wishart_mean_constant(d, theta).unwrap();
            let seed = Seed::new(104 + d as u64);
            let draws: Vec<SpdMatrix> = (0..60_000)
                .map(|i| sample_inv_wishart(d, theta, &seed.child(i)).unwrap())
                .collect();
            let mean = mean_entrywise(&draws);
            for i in 0..d {
                for j in 0..d {
                    let target = if i == j { c } else { 0.0 };
                    assert!(
                        (mean[(i, j)] - target).abs() < 0.05,
                        "d={d} entry ({i},{j}): {} vs {target}",
                        mean[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn inv_wishart_logdet_is_minus_multidigamma() {
        let (d, theta) = (2usize, 2.0);
        let seed = Seed::new(107);
        let draws: Vec<SpdMatrix> = (0..60_000)
            .map(|i| sample_inv_wishart(d, theta, &seed.child(i)).unwrap())
            .collect();
        let (mean, se) = logdet_stats(&draws);
        let target = -multidigamma(d, theta).unwrap();
        assert!((mean - target).abs() < 4.0 * se, "{mean} vs {target}");
    }

    #[test]
    fn gig_exact_case_p_zero_is_scaled_inverse_wishart() {
        // P = 0, a = -3, Q = id at d = 1: inverse-Gamma(3)
        let params = GigParams::new(-3.0, None, Some(SpdMatrix::identity(1))).unwrap();
        let seed = Seed::new(108);
        let n = 40_000;
        let gig: Vec<f64> = (0..n)
            .map(|i| {
                let mut rng = seed.child2(0, i).rng();
                sample_matrix_gig(&params, &SpdMatrix::identity(1), 1, &mut rng)
                    .unwrap()
                    .entry(0, 0)
                    .ln()
            })
            .collect();
        let direct: Vec<f64> = (0..n)
            .map(|i| sample_inv_wishart(1, 3.0, &seed.child2(1, i)).unwrap().entry(0, 0).ln())
            .collect();
        let report = crate::stats::two_sample_test("gig-exact", &gig, &direct, 0.01, &seed).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gig_mh_matches_quadrature_d1() {
        // a=0, P=1, Q=1: mean from quadrature
        let params = GigParams::new(
            0.0,
            Some(SpdMatrix::identity(1)),
            Some(SpdMatrix::identity(1)),
        )
        .unwrap();
        let norm = crate::special::integrate_dmu_d1(|x| -x - 1.0 / x);
        let target = crate::special::integrate_dmu_d1(|x| x.ln() - x - 1.0 / x) / norm;
        let seed = Seed::new(109);
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|i| {
                let mut rng = seed.child(i).rng();
                sample_matrix_gig(&params, &SpdMatrix::identity(1), 12, &mut rng)
                    .unwrap()
                    .entry(0, 0)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - target).abs() < 0.02, "{mean} vs {target}");
    }

    #[test]
    fn gig_mh_preserves_target() {
        // start from the exact P=0 law, add a P term via MH whose invariant
        // law we monitor through the log-det mean after many sweeps
        let q = SpdMatrix::identity(2);
        let params = GigParams::new(-3.0, None, Some(q.clone())).unwrap();
        let with_p = GigParams::new(
            -3.0,
            Some(SpdMatrix::from_diagonal(&[1e-9, 1e-9]).unwrap()),
            Some(q),
        )
        .unwrap();
        // with an (almost) vanishing P the target is unchanged; the chain
        // initialized at the exact law must keep the log-det statistics
        let seed = Seed::new(110);
        let n = 8_000;
        let mut before = Vec::with_capacity(n);
        let mut after = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = seed.child(i as u64).rng();
            let x0 = sample_matrix_gig(&params, &SpdMatrix::identity(2), 1, &mut rng).unwrap();
            before.push(x0.logdet().unwrap());
            let x1 = sample_matrix_gig(&with_p, &x0, 100, &mut rng).unwrap();
            after.push(x1.logdet().unwrap());
        }
        let mb = before.iter().sum::<f64>() / n as f64;
        let ma = after.iter().sum::<f64>() / n as f64;
        let var = before.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (2.0 * var / n as f64).sqrt();
        assert!((ma - mb).abs() < 4.0 * se, "{ma} vs {mb} (se {se})");
    }

    #[test]
    fn walk_log_increments_have_digamma_mean() {
        // all-Right word at d = 1: E[log S_N - log S_0] = -Σ ψ(γ_k)
        let spec = WalkSpec {
            dim: 1,
            gammas: vec![2.0, 3.0, 1.5],
            word: vec![Step::Right; 3],
            start: WalkStart::Identity,
        };
        let target: f64 = -spec.gammas.iter().map(|&g| crate::special::digamma(g)).sum::<f64>();
        let seed = Seed::new(111);
        let n = 40_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for i in 0..n {
            let vals = sample_walk(&spec, &seed.child(i)).unwrap();
            let x = vals.last().unwrap().logdet().unwrap() - vals[0].logdet().unwrap();
            acc += x;
            acc2 += x * x;
        }
        let mean = acc / n as f64;
        let se = ((acc2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - target).abs() < 4.0 * se, "{mean} vs {target}");
    }

    #[test]
    fn walk_single_down_step_is_wishart() {
        let spec = WalkSpec {
            dim: 2,
            gammas: vec![3.0],
            word: vec![Step::Down],
            start: WalkStart::Identity,
        };
        let seed = Seed::new(112);
        let n = 30_000;
        let walk_ld: Vec<f64> = (0..n)
            .map(|i| sample_walk(&spec, &seed.child2(0, i)).unwrap()[1].logdet().unwrap())
            .collect();
        let direct_ld: Vec<f64> = (0..n)
            .map(|i| sample_wishart(2, 3.0, &seed.child2(1, i)).unwrap().logdet().unwrap())
            .collect();
        let report =
            crate::stats::two_sample_test("walk-down", &walk_ld, &direct_ld, 0.01, &seed).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn walk_increments_are_uncorrelated() {
        let spec = WalkSpec {
            dim: 2,
            gammas: vec![2.0, 3.0],
            word: vec![Step::Right, Step::Down],
            start: WalkStart::Identity,
        };
        let seed = Seed::new(113);
        let n = 30_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let vals = sample_walk(&spec, &seed.child(i as u64)).unwrap();
            let inc1 = star_inv(&vals[1], &vals[0]).unwrap().logdet().unwrap();
            let inc2 = star_inv(&vals[2], &vals[1]).unwrap().logdet().unwrap();
            xs.push(inc1);
            ys.push(inc2);
        }
        let nf = n as f64;
        let mx = xs.iter().sum::<f64>() / nf;
        let my = ys.iter().sum::<f64>() / nf;
        let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / nf;
        let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / nf;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / nf;
        let corr = cov / (vx * vy).sqrt();
        assert!(corr.abs() < 4.0 / nf.sqrt(), "corr = {corr}");
    }

    #[test]
    fn two_sided_walk_trivial_and_moments() {
        let s0 = SpdMatrix::identity(2);
        let w = sample_two_sided_walk(2.0, 3.0, &s0, 0, 0, &Seed::new(114)).unwrap();
        assert_eq!(w.values.len(), 1);
        assert_eq!(w.min_index(), 0);

        let n_steps = 3usize;
        let seed = Seed::new(115);
        let n = 30_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for i in 0..n {
            let w = sample_two_sided_walk(2.0, 3.0, &s0, 0, n_steps, &seed.child(i)).unwrap();
            let x = w.get(n_steps as i64).logdet().unwrap() - w.get(0).logdet().unwrap();
            acc += x;
            acc2 += x * x;
        }
        let mean = acc / n as f64;
        let se = ((acc2 / n as f64 - mean * mean) / n as f64).sqrt();
        let target = -(n_steps as f64) * multidigamma(2, 2.0).unwrap();
        assert!((mean - target).abs() < 4.0 * se, "{mean} vs {target}");
    }

    #[test]
    fn boundary_reference_point_pinned() {
        let spec = BoundarySpec {
            dim: 2,
            theta: 2.0,
            u: 0.3,
            reference_point: 2,
            reference: BoundaryReference::Identity,
        };
        let b = sample_stationary_boundary(&spec, 4, 3, &Seed::new(116)).unwrap();
        assert_eq!(b.get(-2).matrix(), SpdMatrix::identity(2).matrix());
        assert_eq!(b.min_index(), -4);
        assert_eq!(b.max_index(), 3);
    }

    #[test]
    fn boundary_with_m_zero_matches_two_sided_walk_law() {
        // Def. of the reference process: B^{θ,u}_{0,δS} equals the two-sided
        // walk with rates (θ-u, θ+u); compare log-det increments by KS.
        let (theta, u) = (2.0, 0.4);
        let spec = BoundarySpec {
            dim: 1,
            theta,
            u,
            reference_point: 0,
            reference: BoundaryReference::Identity,
        };
        let seed = Seed::new(117);
        let n = 20_000;
        let mut fwd_b = Vec::with_capacity(n);
        let mut bwd_b = Vec::with_capacity(n);
        let mut fwd_w = Vec::with_capacity(n);
        let mut bwd_w = Vec::with_capacity(n);
        for i in 0..n {
            let b = sample_stationary_boundary(&spec, 1, 1, &seed.child2(0, i as u64)).unwrap();
            fwd_b.push(b.increment(1).unwrap().logdet().unwrap());
            bwd_b.push(star_inv(b.get(-1), b.get(0)).unwrap().logdet().unwrap());
            let w = sample_two_sided_walk(
                theta - u,
                theta + u,
                &SpdMatrix::identity(1),
                1,
                1,
                &seed.child2(1, i as u64),
            )
            .unwrap();
            fwd_w.push(w.increment(1).unwrap().logdet().unwrap());
            bwd_w.push(star_inv(w.get(-1), w.get(0)).unwrap().logdet().unwrap());
        }
        let r1 = crate::stats::two_sample_test("fwd", &fwd_b, &fwd_w, 0.01, &seed).unwrap();
        let r2 = crate::stats::two_sample_test("bwd", &bwd_b, &bwd_w, 0.01, &seed).unwrap();
        assert!(r1.passed && r2.passed, "{r1:?} {r2:?}");
    }

    #[test]
    fn seed_determinism_is_thread_free() {
        let spec = WalkSpec {
            dim: 3,
            gammas: vec![2.0, 2.5],
            word: vec![Step::Right, Step::Down],
            start: WalkStart::Identity,
        };
        let a = sample_walk(&spec, &Seed::new(118)).unwrap();
        let b = sample_walk(&spec, &Seed::new(118)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.matrix(), y.matrix());
        }
    }
}
