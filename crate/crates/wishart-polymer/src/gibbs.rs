//! Two-layer and one-layer Gibbs machinery for the strip in the maximal
//! current regime: the doubled path graph with its solid/dotted/arc
//! Boltzmann weights, skew Whittaker factors, the local Markov kernels and
//! push-block dynamics, an MCMC sampler for the pinned two-layer process,
//! and importance-sampling estimators for the normalization constant and
//! the Cauchy/Littlewood integral identities.
//!
//! Weight conventions (densities against dμ):
//!   solid edge (x, y; γ):  |x y⁻¹|^{-γ} e^{-tr[y x⁻¹]}
//!   dotted edge (x, y):    e^{-tr[y x⁻¹]}, x on the first layer
//!   arc (x, y; w):         |y x⁻¹|^w, x on the first layer
//! On a right step the later vertex sits in the x slot of its solid edges;
//! on a down step the earlier one does. Every site conditional is then a
//! matrix GIG law assembled by scanning incident edges: determinant
//! exponents accumulate into a, linear trace appearances into P, inverse
//! appearances into Q.

use crate::lattice::{raise_path, raisable, DownRightPath, LatticeError, StripParams};
use crate::rng::Seed;
use crate::sampling::{
    sample_inv_wishart_with, sample_matrix_gig, sample_wishart_with, GigParams, SamplingError, Step,
};
use crate::special::{multigamma_ln, IntegralEstimate, SpecialError};
use crate::spd::{star, SpdError, SpdMatrix};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("configuration does not match the graph: {0}")]
    Shape(String),
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Special(#[from] SpecialError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub type Result<T> = std::result::Result<T, GibbsError>;

/// A vertex of the two-layer graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    First(usize),
    Second(usize),
}

/// An edge with its weight orientation.
#[derive(Clone, Copy, Debug)]
pub enum Edge {
    Solid { x: Node, y: Node, gamma: f64 },
    Dotted { x: Node, y: Node },
    Arc { x: Node, y: Node, exponent: f64 },
}

/// The doubled path graph: two copies of a down-right path joined by dotted
/// edges and closed off by boundary arcs labelled u (left) and v (right).
#[derive(Clone, Debug)]
pub struct TwoLayerGraph {
    path: DownRightPath,
    labels: Vec<f64>,
    pub u: f64,
    pub v: f64,
    edges: Vec<Edge>,
}

impl TwoLayerGraph {
    pub fn new(path: DownRightPath, labels: Vec<f64>, u: f64, v: f64) -> Result<Self> {
        if labels.len() != path.len() {
            return Err(GibbsError::Shape(format!(
                "one label per step required: {} vs {}",
                labels.len(),
                path.len()
            )));
        }
        if path.len() == 0 {
            return Err(GibbsError::Shape("the two-layer graph needs at least one step".into()));
        }
        let edges = Self::build_edges(&path, &labels, u, v);
        Ok(TwoLayerGraph { path, labels, u, v, edges })
    }

    /// Graph of a strip path with the maximal-current labels ϑ_n / ϑ_m.
    pub fn from_strip(params: &StripParams, path: &DownRightPath) -> Result<Self> {
        if !path.is_strip_path(params.width) {
            return Err(GibbsError::Shape("path must cross the strip".into()));
        }
        let labels = crate::lattice::edge_labels_strip(path, params)?;
        Self::new(path.clone(), labels, params.u, params.v)
    }

    fn build_edges(path: &DownRightPath, labels: &[f64], u: f64, v: f64) -> Vec<Edge> {
        let n = path.len();
        let word = path.word();
        let mut edges = Vec::with_capacity(3 * n + 2);
        for (i, &step) in word.iter().enumerate() {
            let k = i + 1;
            let gamma = labels[i];
            match step {
                Step::Right => {
                    edges.push(Edge::Solid { x: Node::First(k), y: Node::First(k - 1), gamma });
                    edges.push(Edge::Solid { x: Node::Second(k), y: Node::Second(k - 1), gamma });
                    edges.push(Edge::Dotted { x: Node::First(k - 1), y: Node::Second(k) });
                }
                Step::Down => {
                    edges.push(Edge::Solid { x: Node::First(k - 1), y: Node::First(k), gamma });
                    edges.push(Edge::Solid { x: Node::Second(k - 1), y: Node::Second(k), gamma });
                    edges.push(Edge::Dotted { x: Node::First(k), y: Node::Second(k - 1) });
                }
            }
        }
        edges.push(Edge::Arc { x: Node::First(0), y: Node::Second(0), exponent: u });
        edges.push(Edge::Arc { x: Node::First(n), y: Node::Second(n), exponent: v });
        edges
    }

    pub fn path(&self) -> &DownRightPath {
        &self.path
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn width(&self) -> usize {
        self.path.len()
    }

    /// The graph after a single-vertex raise at j. A bulk raise swaps the
    /// two adjacent labels; boundary raises keep theirs.
    pub fn raise(&self, j: usize) -> Result<TwoLayerGraph> {
        let new_path = raise_path(&self.path, j)?;
        let mut labels = self.labels.clone();
        if j > 0 && j < self.path.len() {
            labels.swap(j - 1, j);
        }
        Self::new(new_path, labels, self.u, self.v)
    }
}

/// SPD values on both layers of a two-layer graph.
#[derive(Clone, Debug)]
pub struct TwoLayerConfig {
    pub lambda1: Vec<SpdMatrix>,
    pub lambda2: Vec<SpdMatrix>,
}

impl TwoLayerConfig {
    pub fn new(lambda1: Vec<SpdMatrix>, lambda2: Vec<SpdMatrix>) -> Result<Self> {
        if lambda1.len() != lambda2.len() || lambda1.is_empty() {
            return Err(GibbsError::Shape("layers must have equal positive length".into()));
        }
        let d = lambda1[0].dim();
        if lambda1.iter().chain(&lambda2).any(|m| m.dim() != d) {
            return Err(GibbsError::Shape("all values must share one dimension".into()));
        }
        Ok(TwoLayerConfig { lambda1, lambda2 })
    }

    pub fn len(&self) -> usize {
        self.lambda1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda1.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lambda1[0].dim()
    }

    pub fn get(&self, node: Node) -> &SpdMatrix {
        match node {
            Node::First(i) => &self.lambda1[i],
            Node::Second(i) => &self.lambda2[i],
        }
    }

    fn set(&mut self, node: Node, value: SpdMatrix) {
        match node {
            Node::First(i) => self.lambda1[i] = value,
            Node::Second(i) => self.lambda2[i] = value,
        }
    }

    /// The right-⋆ translate (λ ⋆ x on every site).
    pub fn translate(&self, x: &SpdMatrix) -> Result<TwoLayerConfig> {
        let map = |v: &Vec<SpdMatrix>| -> Result<Vec<SpdMatrix>> {
            v.iter().map(|m| Ok(star(m, x)?)).collect()
        };
        Ok(TwoLayerConfig { lambda1: map(&self.lambda1)?, lambda2: map(&self.lambda2)? })
    }
}

fn log_edge_weight(edge: &Edge, config: &TwoLayerConfig) -> Result<f64> {
    Ok(match edge {
        Edge::Solid { x, y, gamma } => {
            let (xm, ym) = (config.get(*x), config.get(*y));
            -gamma * (xm.logdet()? - ym.logdet()?) - ym.trace_product_inv(xm)?
        }
        Edge::Dotted { x, y } => {
            let (xm, ym) = (config.get(*x), config.get(*y));
            -ym.trace_product_inv(xm)?
        }
        Edge::Arc { x, y, exponent } => {
            exponent * (config.get(*y).logdet()? - config.get(*x).logdet()?)
        }
    })
}

/// Total log Boltzmann weight of a configuration on a graph. Translation
/// invariant: log_weight(λ ⋆ x) = log_weight(λ) for every SPD x.
pub fn log_weight(graph: &TwoLayerGraph, config: &TwoLayerConfig) -> Result<f64> {
    if config.len() != graph.width() + 1 {
        return Err(GibbsError::Shape(format!(
            "config holds {} sites, graph needs {}",
            config.len(),
            graph.width() + 1
        )));
    }
    let mut acc = 0.0;
    for edge in &graph.edges {
        acc += log_edge_weight(edge, config)?;
    }
    Ok(acc)
}

/// Log weight of a one-layer configuration: the product of solid weights of
/// a single path copy with the given labels and word.
pub fn log_weight_one_layer(values: &[SpdMatrix], labels: &[f64], word: &[Step]) -> Result<f64> {
    if values.len() != word.len() + 1 || labels.len() != word.len() {
        return Err(GibbsError::Shape("need one value per vertex and one label per step".into()));
    }
    let mut acc = 0.0;
    for (i, &step) in word.iter().enumerate() {
        let (earlier, later) = (&values[i], &values[i + 1]);
        let (x, y) = match step {
            Step::Right => (later, earlier),
            Step::Down => (earlier, later),
        };
        acc += -labels[i] * (x.logdet()? - y.logdet()?) - y.trace_product_inv(x)?;
    }
    Ok(acc)
}

/// log Ψ_γ(λ/μ) = γ log|μ₁λ₁⁻¹| + γ log|μ₂λ₂⁻¹| - tr[μ₁λ₁⁻¹ + μ₂λ₂⁻¹ + λ₂μ₁⁻¹],
/// the elementary cell of the two-layer weights.
pub fn psi_factor(
    gamma: f64,
    lambda: (&SpdMatrix, &SpdMatrix),
    mu: (&SpdMatrix, &SpdMatrix),
) -> Result<f64> {
    let (l1, l2) = lambda;
    let (m1, m2) = mu;
    Ok(gamma * (m1.logdet()? - l1.logdet()?) + gamma * (m2.logdet()? - l2.logdet()?)
        - m1.trace_product_inv(l1)?
        - m2.trace_product_inv(l2)?
        - l2.trace_product_inv(m1)?)
}

/// The matrix GIG parameters of one site conditioned on all others: scans
/// the incident edges and accumulates (a, P, Q).
pub fn site_conditional(graph: &TwoLayerGraph, config: &TwoLayerConfig, node: Node) -> Result<GigParams> {
    let mut a = 0.0;
    let mut p: Option<SpdMatrix> = None;
    let mut q: Option<SpdMatrix> = None;
    fn accumulate(slot: &mut Option<SpdMatrix>, m: SpdMatrix) -> Result<()> {
        *slot = Some(match slot.take() {
            None => m,
            Some(acc) => acc.add(&m)?,
        });
        Ok(())
    }
    for edge in &graph.edges {
        match edge {
            Edge::Solid { x, y, gamma } => {
                if *x == node {
                    a -= gamma;
                    accumulate(&mut q, config.get(*y).clone())?;
                } else if *y == node {
                    a += gamma;
                    accumulate(&mut p, config.get(*x).inverse()?)?;
                }
            }
            Edge::Dotted { x, y } => {
                if *x == node {
                    accumulate(&mut q, config.get(*y).clone())?;
                } else if *y == node {
                    accumulate(&mut p, config.get(*x).inverse()?)?;
                }
            }
            Edge::Arc { x, y, exponent } => {
                if *x == node {
                    a -= exponent;
                } else if *y == node {
                    a += exponent;
                }
            }
        }
    }
    Ok(GigParams::new(a, p, q)?)
}

/// Parameters for a local kernel; each kernel reads its own subset.
#[derive(Clone, Copy, Debug)]
pub struct KernelParams {
    pub alpha: f64,
    pub beta: f64,
    pub u: f64,
    pub v: f64,
}

impl KernelParams {
    fn check(sum: f64, d: usize, what: &str) -> Result<()> {
        let bound = (d as f64 - 1.0) / 2.0;
        if !(sum > bound) {
            return Err(GibbsError::Parameter(format!(
                "{what} needs parameter sum > (d-1)/2 = {bound}, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Bulk one-vertex kernel: π₁ = W ⋆ (λ₁ + μ₁) with W ~ Wis⁻¹(α+β) (the
/// first-layer marginal is exact and free of the second layer), and
/// π₂ ~ GIG(-(α+β), λ₁⁻¹ + μ₁⁻¹, λ₂ + μ₂).
pub fn kernel_bulk_sample(
    params: &KernelParams,
    lambda: (&SpdMatrix, &SpdMatrix),
    mu: (&SpdMatrix, &SpdMatrix),
    mh_steps: usize,
    rng: &mut impl Rng,
) -> Result<(SpdMatrix, SpdMatrix)> {
    let d = lambda.0.dim();
    KernelParams::check(params.alpha + params.beta, d, "bulk kernel")?;
    let shape = params.alpha + params.beta;
    let w = sample_inv_wishart_with(d, shape, rng)?;
    let pi1 = star(&w, &lambda.0.add(mu.0)?)?;
    let gig = GigParams::new(
        -shape,
        Some(lambda.0.inverse()?.add(&mu.0.inverse()?)?),
        Some(lambda.1.add(mu.1)?),
    )?;
    let pi2 = sample_matrix_gig(&gig, lambda.1, mh_steps, rng)?;
    Ok((pi1, pi2))
}

/// Left-boundary kernel: π₁ = W ⋆ λ₁ with W ~ Wis⁻¹(α+u),
/// π₂ ~ GIG(u-α, λ₁⁻¹, λ₂).
pub fn kernel_left_sample(
    params: &KernelParams,
    lambda: (&SpdMatrix, &SpdMatrix),
    mh_steps: usize,
    rng: &mut impl Rng,
) -> Result<(SpdMatrix, SpdMatrix)> {
    let d = lambda.0.dim();
    KernelParams::check(params.alpha + params.u, d, "left kernel")?;
    let w = sample_inv_wishart_with(d, params.alpha + params.u, rng)?;
    let pi1 = star(&w, lambda.0)?;
    let gig = GigParams::new(params.u - params.alpha, Some(lambda.0.inverse()?), Some(lambda.1.clone()))?;
    let pi2 = sample_matrix_gig(&gig, lambda.1, mh_steps, rng)?;
    Ok((pi1, pi2))
}

/// Right-boundary kernel, the mirror of the left one with v in place of u.
pub fn kernel_right_sample(
    params: &KernelParams,
    lambda: (&SpdMatrix, &SpdMatrix),
    mh_steps: usize,
    rng: &mut impl Rng,
) -> Result<(SpdMatrix, SpdMatrix)> {
    let d = lambda.0.dim();
    KernelParams::check(params.alpha + params.v, d, "right kernel")?;
    let w = sample_inv_wishart_with(d, params.alpha + params.v, rng)?;
    let pi1 = star(&w, lambda.0)?;
    let gig = GigParams::new(params.v - params.alpha, Some(lambda.0.inverse()?), Some(lambda.1.clone()))?;
    let pi2 = sample_matrix_gig(&gig, lambda.1, mh_steps, rng)?;
    Ok((pi1, pi2))
}

/// Push-block update: composes one-vertex kernels along single raises until
/// the path reaches `target`. The law of the result does not depend on the
/// raise order; the first-layer values evolve exactly by the polymer
/// recurrence with fresh disorder.
pub fn push_block_update(
    graph: &TwoLayerGraph,
    config: &TwoLayerConfig,
    target: &DownRightPath,
    mh_steps: usize,
    seed: &Seed,
) -> Result<(TwoLayerGraph, TwoLayerConfig)> {
    let n = graph.width();
    if target.len() != n {
        return Err(GibbsError::Shape("target path must have the same length".into()));
    }
    for (j, (&(pn, pm), &(tn, tm))) in
        graph.path.vertices().iter().zip(target.vertices()).enumerate()
    {
        if tn - pn != tm - pm || tn < pn {
            return Err(GibbsError::Shape(format!(
                "target vertex {j} is not a diagonal raise of the source"
            )));
        }
    }
    let mut g = graph.clone();
    let mut c = config.clone();
    let mut rng = seed.rng();
    loop {
        let Some(j) = (0..=n).find(|&j| {
            g.path.vertices()[j] != target.vertices()[j] && raisable(&g.path, j)
        }) else {
            break;
        };
        let pair = if j == 0 {
            let lambda = (&c.lambda1[1], &c.lambda2[1]);
            let params = KernelParams { alpha: g.labels[0], beta: 0.0, u: g.u, v: g.v };
            kernel_left_sample(&params, lambda, mh_steps, &mut rng)?
        } else if j == n {
            let lambda = (&c.lambda1[n - 1], &c.lambda2[n - 1]);
            let params = KernelParams { alpha: g.labels[n - 1], beta: 0.0, u: g.u, v: g.v };
            kernel_right_sample(&params, lambda, mh_steps, &mut rng)?
        } else {
            let lambda = (&c.lambda1[j - 1], &c.lambda2[j - 1]);
            let mu = (&c.lambda1[j + 1], &c.lambda2[j + 1]);
            let params = KernelParams { alpha: g.labels[j - 1], beta: g.labels[j], u: g.u, v: g.v };
            kernel_bulk_sample(&params, lambda, mu, mh_steps, &mut rng)?
        };
        c.lambda1[j] = pair.0;
        c.lambda2[j] = pair.1;
        g = g.raise(j)?;
    }
    if g.path != *target {
        return Err(GibbsError::Shape("raises stalled before reaching the target path".into()));
    }
    Ok((g, c))
}

/// Options for the pinned two-layer sampler.
#[derive(Clone, Copy, Debug)]
pub struct McmcOptions {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub mh_steps: usize,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions { sweeps: 2000, burn_in: 500, thin: 5, mh_steps: 8 }
    }
}

/// Output of the pinned sampler: thinned configurations plus a split-chain
/// convergence statistic on log|λ₂^N| (flagged when above 1.1).
#[derive(Clone, Debug)]
pub struct McmcRun {
    pub samples: Vec<TwoLayerConfig>,
    pub split_r_hat: f64,
    pub converged: bool,
}

fn mcmc_initial(graph: &TwoLayerGraph, pin: &SpdMatrix, scale: f64, rng: &mut impl Rng) -> Result<TwoLayerConfig> {
    let n = graph.width();
    let d = pin.dim();
    let mut lambda1 = vec![pin.clone(); n + 1];
    for j in 1..=n {
        let gamma = graph.labels[j - 1].max((d as f64 + 1.0) / 2.0);
        let x = sample_inv_wishart_with(d, gamma + 1.0, rng)?;
        lambda1[j] = star(&x, &lambda1[j - 1])?;
    }
    let mut lambda2 = Vec::with_capacity(n + 1);
    for value in &lambda1 {
        lambda2.push(value.scale(scale)?);
    }
    TwoLayerConfig::new(lambda1, lambda2)
}

fn gibbs_sweep(
    graph: &TwoLayerGraph,
    config: &mut TwoLayerConfig,
    mh_steps: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    let n = graph.width();
    let mut nodes = Vec::with_capacity(2 * n + 1);
    nodes.push(Node::Second(0));
    for j in 1..=n {
        nodes.push(Node::First(j));
        nodes.push(Node::Second(j));
    }
    for node in nodes {
        let gig = site_conditional(graph, config, node)?;
        let current = config.get(node).clone();
        let next = sample_matrix_gig(&gig, &current, mh_steps, rng)?;
        config.set(node, next);
    }
    Ok(())
}

/// Systematic-scan Gibbs sampler for the two-layer matrix Whittaker process
/// pinned at λ₁⁰. Site conditionals are read off the incident edge weights;
/// sites whose conditional has P = 0 or Q = 0 are drawn exactly, the rest
/// through Metropolis-within-Gibbs steps.
pub fn mcmc_two_layer(
    graph: &TwoLayerGraph,
    pin: &SpdMatrix,
    opts: &McmcOptions,
    seed: &Seed,
) -> Result<McmcRun> {
    let d = pin.dim();
    let bound = (d as f64 - 1.0) / 2.0;
    if !(graph.u + graph.v > bound) {
        return Err(GibbsError::Parameter(format!(
            "pinned two-layer process needs u+v > (d-1)/2 = {bound}"
        )));
    }
    for &g in &graph.labels {
        if !(g + graph.u > bound) || !(g + graph.v > bound) {
            return Err(GibbsError::Parameter(format!(
                "pinned two-layer process needs γ+u, γ+v > (d-1)/2 = {bound}, got γ = {g}"
            )));
        }
    }
    let run_chain = |scale: f64, stream: u64| -> Result<(Vec<TwoLayerConfig>, Vec<f64>)> {
        let mut rng = seed.child(stream).rng();
        let mut config = mcmc_initial(graph, pin, scale, &mut rng)?;
        let mut samples = Vec::new();
        let mut trace = Vec::new();
        for sweep in 0..(opts.burn_in + opts.sweeps) {
            gibbs_sweep(graph, &mut config, opts.mh_steps, &mut rng)?;
            if sweep >= opts.burn_in {
                trace.push(config.lambda2[graph.width()].logdet()?);
                if (sweep - opts.burn_in) % opts.thin.max(1) == 0 {
                    samples.push(config.clone());
                }
            }
        }
        Ok((samples, trace))
    };
    let (samples, trace_a) = run_chain(1.0, 0)?;
    let (_, trace_b) = run_chain(4.0, 1)?;
    let split_r_hat = split_r_hat(&[&trace_a, &trace_b]);
    Ok(McmcRun { samples, split_r_hat, converged: split_r_hat < 1.1 })
}

/// Split-R̂ over chains cut in halves (Gelman-Rubin form).
fn split_r_hat(chains: &[&[f64]]) -> f64 {
    let mut segments: Vec<&[f64]> = Vec::new();
    for c in chains {
        let half = c.len() / 2;
        segments.push(&c[..half]);
        segments.push(&c[half..2 * half]);
    }
    let m = segments.len() as f64;
    let n = segments[0].len() as f64;
    let means: Vec<f64> = segments.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = segments
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Monte Carlo estimate of the skew Whittaker function
/// Ψ_{γ₁,…,γ_k}(λ/μ) = ∫ Π_i Ψ_{γ_i}(λ^i/λ^{i-1}) Π dμ(λ^i), with λ⁰ = μ
/// and λ^k = λ. The length-one case is exact (no integral). Intermediate
/// pairs are proposed sequentially from the inverse-Wishart factors of their
/// own Ψ term, so all remaining weight factors are bounded.
pub fn skew_whittaker(
    gammas: &[f64],
    lambda: (&SpdMatrix, &SpdMatrix),
    mu: (&SpdMatrix, &SpdMatrix),
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate> {
    if gammas.is_empty() {
        return Err(GibbsError::Parameter("need at least one parameter".into()));
    }
    let d = lambda.0.dim();
    let bound = (d as f64 - 1.0) / 2.0;
    if gammas.iter().any(|&g| !(g > bound)) {
        return Err(GibbsError::Parameter(format!(
            "skew Whittaker sampling needs every γ > (d-1)/2 = {bound}"
        )));
    }
    if gammas.len() == 1 {
        let value = psi_factor(gammas[0], lambda, mu)?.exp();
        return Ok(IntegralEstimate { value, std_error: 0.0, n_samples: 1 });
    }
    let k = gammas.len();
    let blocks: Vec<(usize, usize)> = (0..n).step_by(1024).map(|s| (s / 1024, 1024.min(n - s))).collect();
    let partials: Vec<Result<(f64, f64)>> = blocks
        .par_iter()
        .map(|&(bix, count)| {
            let mut rng = seed.child(bix as u64).rng();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                // sequential proposal over the k-1 intermediate pairs
                let mut log_q = 0.0;
                let mut log_f = 0.0;
                let mut prev = (mu.0.clone(), mu.1.clone());
                for i in 0..(k - 1) {
                    let g = gammas[i];
                    let w1 = sample_inv_wishart_with(d, g, &mut rng)?;
                    let x1 = star(&w1, &prev.0)?;
                    let w2 = sample_inv_wishart_with(d, g, &mut rng)?;
                    let x2 = star(&w2, &prev.1)?;
                    log_q += -g * (x1.logdet()? - prev.0.logdet()?) - prev.0.trace_product_inv(&x1)?
                        - multigamma_ln(d, g)?;
                    log_q += -g * (x2.logdet()? - prev.1.logdet()?) - prev.1.trace_product_inv(&x2)?
                        - multigamma_ln(d, g)?;
                    log_f += psi_factor(g, (&x1, &x2), (&prev.0, &prev.1))?;
                    prev = (x1, x2);
                }
                log_f += psi_factor(gammas[k - 1], lambda, (&prev.0, &prev.1))?;
                let w = (log_f - log_q).exp();
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

/// Generic two-coordinate importance sampler used by the Cauchy/Littlewood
/// checkers: log_f gets the pair; each coordinate has its own proposal
/// sampler and log-density.
fn integrate_pair<F, S1, S2, D1, D2>(
    log_f: F,
    sample1: S1,
    logq1: D1,
    sample2: S2,
    logq2: D2,
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate>
where
    F: Fn(&SpdMatrix, &SpdMatrix) -> Result<f64> + Sync,
    S1: Fn(&mut rand_chacha::ChaCha12Rng) -> Result<SpdMatrix> + Sync,
    S2: Fn(&mut rand_chacha::ChaCha12Rng) -> Result<SpdMatrix> + Sync,
    D1: Fn(&SpdMatrix) -> Result<f64> + Sync,
    D2: Fn(&SpdMatrix) -> Result<f64> + Sync,
{
    let blocks: Vec<(usize, usize)> = (0..n).step_by(2048).map(|s| (s / 2048, 2048.min(n - s))).collect();
    let partials: Vec<Result<(f64, f64)>> = blocks
        .par_iter()
        .map(|&(bix, count)| {
            let mut rng = seed.child(bix as u64).rng();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let x1 = sample1(&mut rng)?;
                let x2 = sample2(&mut rng)?;
                let w = (log_f(&x1, &x2)? - logq1(&x1)? - logq2(&x2)?).exp();
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

/// LHS of the two-layer Cauchy identity: ∫ Ψ_β(π/λ) Ψ_α(π/μ) dμ(π).
pub fn cauchy_lhs(
    alpha: f64,
    beta: f64,
    lambda: (&SpdMatrix, &SpdMatrix),
    mu: (&SpdMatrix, &SpdMatrix),
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate> {
    let d = lambda.0.dim();
    let shape = alpha + beta;
    KernelParams::check(shape, d, "Cauchy identity")?;
    let s1 = lambda.0.add(mu.0)?;
    let s2 = lambda.1.add(mu.1)?;
    let (l, m) = ((lambda.0.clone(), lambda.1.clone()), (mu.0.clone(), mu.1.clone()));
    let (s1c, s2c) = (s1.clone(), s2.clone());
    integrate_pair(
        move |p1, p2| {
            Ok(psi_factor(beta, (p1, p2), (&l.0, &l.1))? + psi_factor(alpha, (p1, p2), (&m.0, &m.1))?)
        },
        move |rng| Ok(star(&sample_inv_wishart_with(d, shape, rng)?, &s1)?),
        move |x| Ok(-shape * (x.logdet()? - s1c.logdet()?) - s1c.trace_product_inv(x)? - multigamma_ln(d, shape)?),
        move |rng| Ok(star(&sample_inv_wishart_with(d, shape, rng)?, &s2)?),
        move |x| Ok(-shape * (x.logdet()? - s2c.logdet()?) - s2c.trace_product_inv(x)? - multigamma_ln(d, shape)?),
        n,
        seed,
    )
}

/// RHS of the two-layer Cauchy identity: ∫ Ψ_α(λ/κ) Ψ_β(μ/κ) dμ(κ).
pub fn cauchy_rhs(
    alpha: f64,
    beta: f64,
    lambda: (&SpdMatrix, &SpdMatrix),
    mu: (&SpdMatrix, &SpdMatrix),
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate> {
    let d = lambda.0.dim();
    let shape = alpha + beta;
    KernelParams::check(shape, d, "Cauchy identity")?;
    // κ₁ sees |κ₁|^{α+β} e^{-tr[κ₁(λ₁⁻¹+μ₁⁻¹)] - tr[(λ₂+μ₂)κ₁⁻¹]}
    let p1 = lambda.0.inverse()?.add(&mu.0.inverse()?)?;
    let scale1 = p1.inverse()?;
    // κ₂ sees |κ₂|^{α+β} e^{-tr[κ₂(λ₂⁻¹+μ₂⁻¹)]} exactly
    let p2 = lambda.1.inverse()?.add(&mu.1.inverse()?)?;
    let scale2 = p2.inverse()?;
    let (l, m) = ((lambda.0.clone(), lambda.1.clone()), (mu.0.clone(), mu.1.clone()));
    let (s1c, s2c) = (scale1.clone(), scale2.clone());
    let (p1c, p2c) = (p1.clone(), p2.clone());
    integrate_pair(
        move |k1, k2| {
            Ok(psi_factor(alpha, (&l.0, &l.1), (k1, k2))? + psi_factor(beta, (&m.0, &m.1), (k1, k2))?)
        },
        move |rng| Ok(star(&sample_wishart_with(d, shape, rng)?, &scale1)?),
        move |x| Ok(shape * (x.logdet()? - s1c.logdet()?) - x.trace_product(&p1c)? - multigamma_ln(d, shape)?),
        move |rng| Ok(star(&sample_wishart_with(d, shape, rng)?, &scale2)?),
        move |x| Ok(shape * (x.logdet()? - s2c.logdet()?) - x.trace_product(&p2c)? - multigamma_ln(d, shape)?),
        n,
        seed,
    )
}

/// LHS of the Littlewood identity: ∫ |π₂π₁⁻¹|^u Ψ_α(π/κ) dμ(π).
pub fn littlewood_lhs(
    u: f64,
    alpha: f64,
    kappa: (&SpdMatrix, &SpdMatrix),
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate> {
    let d = kappa.0.dim();
    KernelParams::check(alpha + u, d, "Littlewood identity")?;
    let shape1 = alpha + u;
    let shape2 = if alpha - u > (d as f64 - 1.0) / 2.0 { alpha - u } else { (d as f64 + 1.0) / 2.0 };
    let (k1, k2) = (kappa.0.clone(), kappa.1.clone());
    let (k1b, k2b) = (k1.clone(), k2.clone());
    let (k1c, k2c) = (k1.clone(), k2.clone());
    integrate_pair(
        move |p1, p2| {
            Ok(u * (p2.logdet()? - p1.logdet()?) + psi_factor(alpha, (p1, p2), (&k1, &k2))?)
        },
        move |rng| Ok(star(&sample_inv_wishart_with(d, shape1, rng)?, &k1b)?),
        move |x| Ok(-shape1 * (x.logdet()? - k1c.logdet()?) - k1c.trace_product_inv(x)? - multigamma_ln(d, shape1)?),
        move |rng| Ok(star(&sample_inv_wishart_with(d, shape2, rng)?, &k2b)?),
        move |x| Ok(-shape2 * (x.logdet()? - k2c.logdet()?) - k2c.trace_product_inv(x)? - multigamma_ln(d, shape2)?),
        n,
        seed,
    )
}

/// RHS of the Littlewood identity: ∫ |λ₂λ₁⁻¹|^u Ψ_α(κ/λ) dμ(λ).
pub fn littlewood_rhs(
    u: f64,
    alpha: f64,
    kappa: (&SpdMatrix, &SpdMatrix),
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate> {
    let d = kappa.0.dim();
    KernelParams::check(alpha + u, d, "Littlewood identity")?;
    let halfd = (d as f64 + 1.0) / 2.0;
    let shape1 = if alpha - u > (d as f64 - 1.0) / 2.0 { alpha - u } else { halfd };
    let shape2 = alpha + u;
    let (k1, k2) = (kappa.0.clone(), kappa.1.clone());
    let (k1b, k2b) = (k1.clone(), k2.clone());
    let (k1c, k2c) = (k1.clone(), k2.clone());
    let (k1inv, k2inv) = (k1.inverse()?, k2.inverse()?);
    integrate_pair(
        move |l1, l2| {
            Ok(u * (l2.logdet()? - l1.logdet()?) + psi_factor(alpha, (&k1, &k2), (l1, l2))?)
        },
        move |rng| Ok(star(&sample_wishart_with(d, shape1, rng)?, &k1b)?),
        move |x| Ok(shape1 * (x.logdet()? - k1c.logdet()?) - x.trace_product(&k1inv)? - multigamma_ln(d, shape1)?),
        move |rng| Ok(star(&sample_wishart_with(d, shape2, rng)?, &k2b)?),
        move |x| Ok(shape2 * (x.logdet()? - k2c.logdet()?) - x.trace_product(&k2inv)? - multigamma_ln(d, shape2)?),
        n,
        seed,
    )
}

/// Importance-sampling estimate of the pinned normalization constant
/// 𝒵 = ∫ wt(λ) Π_{sites ≠ λ₁⁰} dμ, with λ₁⁰ held at `pin`.
///
/// The first layer is proposed as the exact Wis± walk of the solid weights.
/// The second layer is seeded at a dotted-edge endpoint (its proposal rides
/// on the already-sampled first layer, cancelling the dotted decay) and then
/// extended by the exact solid-weight walks in both directions. Every
/// leftover weight factor is exponentially dominated, so the weights have
/// finite variance for the boundary exponents u, v ≥ 0 accepted here.
pub fn normalization_estimate(
    graph: &TwoLayerGraph,
    pin: &SpdMatrix,
    n: usize,
    seed: &Seed,
) -> Result<IntegralEstimate> {
    let d = pin.dim();
    let bound = (d as f64 - 1.0) / 2.0;
    if !(graph.u >= 0.0 && graph.v >= 0.0) {
        return Err(GibbsError::Parameter(
            "normalization estimator requires nonnegative boundary exponents u, v".into(),
        ));
    }
    if !(graph.u + graph.v > bound) {
        return Err(GibbsError::Parameter(format!("needs u+v > (d-1)/2 = {bound}")));
    }
    for &g in graph.labels() {
        if !(g + graph.u > bound) || !(g + graph.v > bound) {
            return Err(GibbsError::Parameter(format!(
                "needs γ+u, γ+v > (d-1)/2 = {bound}, got γ = {g}"
            )));
        }
        if !(g > bound) {
            return Err(GibbsError::Parameter(format!(
                "walk proposals need every label > (d-1)/2 = {bound}, got {g}"
            )));
        }
    }
    let width = graph.width();
    let word = graph.path().word();
    // seed site of the second layer: the y endpoint of the first dotted edge
    let seed_site = graph
        .edges()
        .iter()
        .find_map(|e| match e {
            Edge::Dotted { x: Node::First(b), y: Node::Second(a) } => Some((*a, *b)),
            _ => None,
        })
        .expect("every nonempty two-layer graph has a dotted edge");
    let arc_at = |j: usize| -> f64 {
        if j == 0 {
            graph.u
        } else if j == width {
            graph.v
        } else {
            0.0
        }
    };
    let sigma = arc_at(seed_site.0) + (d as f64 + 1.0) / 2.0;
    let blocks: Vec<(usize, usize)> = (0..n).step_by(1024).map(|s| (s / 1024, 1024.min(n - s))).collect();
    let graph = graph.clone();
    let pin = pin.clone();
    let partials: Vec<Result<(f64, f64)>> = blocks
        .par_iter()
        .map(|&(bix, count)| {
            let mut rng = seed.child(bix as u64).rng();
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            // one walk move along step i+1 of a layer, forward in the index
            let forward = |chain: &mut Vec<SpdMatrix>,
                           i: usize,
                           rng: &mut rand_chacha::ChaCha12Rng|
             -> Result<f64> {
                let g = graph.labels()[i];
                let prev = chain[i].clone();
                let (next, lq) = match word[i] {
                    Step::Right => {
                        let x = star(&sample_inv_wishart_with(d, g, rng)?, &prev)?;
                        let lq = -g * (x.logdet()? - prev.logdet()?) - prev.trace_product_inv(&x)?
                            - multigamma_ln(d, g)?;
                        (x, lq)
                    }
                    Step::Down => {
                        let x = star(&sample_wishart_with(d, g, rng)?, &prev)?;
                        let lq = g * (x.logdet()? - prev.logdet()?) - x.trace_product_inv(&prev)?
                            - multigamma_ln(d, g)?;
                        (x, lq)
                    }
                };
                chain[i + 1] = next;
                Ok(lq)
            };
            for _ in 0..count {
                let mut log_q = 0.0;
                // layer 1: the walk of the first-layer solid weights
                let mut lambda1 = vec![pin.clone(); width + 1];
                for i in 0..width {
                    log_q += forward(&mut lambda1, i, &mut rng)?;
                }
                // layer 2: seed, then solid-weight walks outward
                let mut lambda2 = vec![pin.clone(); width + 1];
                let (js, jb) = seed_site;
                let anchor = lambda1[jb].clone();
                let z = star(&sample_wishart_with(d, sigma, &mut rng)?, &anchor)?;
                log_q += sigma * (z.logdet()? - anchor.logdet()?) - z.trace_product_inv(&anchor)?
                    - multigamma_ln(d, sigma)?;
                lambda2[js] = z;
                for i in js..width {
                    log_q += forward(&mut lambda2, i, &mut rng)?;
                }
                for i in (0..js).rev() {
                    // propose the earlier endpoint of step i+1 given the later
                    let g = graph.labels()[i];
                    let later = lambda2[i + 1].clone();
                    let (prev, lq) = match word[i] {
                        Step::Right => {
                            let x = star(&sample_wishart_with(d, g, &mut rng)?, &later)?;
                            let lq = g * (x.logdet()? - later.logdet()?) - x.trace_product_inv(&later)?
                                - multigamma_ln(d, g)?;
                            (x, lq)
                        }
                        Step::Down => {
                            let x = star(&sample_inv_wishart_with(d, g, &mut rng)?, &later)?;
                            let lq = -g * (x.logdet()? - later.logdet()?) - later.trace_product_inv(&x)?
                                - multigamma_ln(d, g)?;
                            (x, lq)
                        }
                    };
                    log_q += lq;
                    lambda2[i] = prev;
                }
                let config = TwoLayerConfig::new(lambda1, lambda2)?;
                let w = (log_weight(&graph, &config)? - log_q).exp();
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

/// One-layer local kernels of the equilibrium regime. Each is exactly one
/// fresh-disorder polymer step: bulk π = W ⋆ (λ+μ) with W ~ Wis⁻¹(α+β),
/// boundary π = W ⋆ λ with the raised vertex's edge label as shape.
pub fn one_layer_bulk(
    alpha: f64,
    beta: f64,
    lambda: &SpdMatrix,
    mu: &SpdMatrix,
    rng: &mut impl Rng,
) -> Result<SpdMatrix> {
    let d = lambda.dim();
    KernelParams::check(alpha + beta, d, "one-layer bulk kernel")?;
    let w = sample_inv_wishart_with(d, alpha + beta, rng)?;
    Ok(star(&w, &lambda.add(mu)?)?)
}

pub fn one_layer_boundary(shape: f64, lambda: &SpdMatrix, rng: &mut impl Rng) -> Result<SpdMatrix> {
    let d = lambda.dim();
    KernelParams::check(shape, d, "one-layer boundary kernel")?;
    let w = sample_inv_wishart_with(d, shape, rng)?;
    Ok(star(&w, lambda)?)
}
