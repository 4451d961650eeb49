//! The lattice models: partition-function recurrences on the quadrant and
//! on a strip, down-right paths, edge label rules, the one-step update, and
//! the point-to-line martingale.
//!
//! Disorder is drawn lazily per vertex from a coordinate-derived seed
//! stream, so recomputing or extending a region never re-rolls earlier
//! randomness and the result does not depend on the sweep order.

use crate::rng::{coord_key, Seed};
use crate::sampling::{
    inv_wishart_mean_constant, sample_inv_wishart_with, sample_walk, SamplingError, Step, WalkSpec,
    WalkStart,
};
use crate::spd::{star, star_inv, PsdMatrix, SpdError, SpdMatrix};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("invalid path: {0}")]
    Path(String),
    #[error("vertex ({0}, {1}) outside the field region")]
    OutOfRegion(i64, i64),
    #[error("numerical failure at vertex ({n}, {m}): {source}")]
    Vertex { n: i64, m: i64, source: SpdError },
    #[error(transparent)]
    Spd(#[from] SpdError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

pub type Result<T> = std::result::Result<T, LatticeError>;

/// A lattice path with steps (1,0) or (0,-1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DownRightPath {
    vertices: Vec<(i64, i64)>,
}

impl DownRightPath {
    pub fn from_vertices(vertices: Vec<(i64, i64)>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(LatticeError::Path("a path needs at least one vertex".into()));
        }
        for w in vertices.windows(2) {
            let delta = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            if delta != (1, 0) && delta != (0, -1) {
                return Err(LatticeError::Path(format!(
                    "step {:?} -> {:?} is neither right nor down",
                    w[0], w[1]
                )));
            }
        }
        Ok(DownRightPath { vertices })
    }

    pub fn from_word(start: (i64, i64), word: &[Step]) -> Self {
        let mut vertices = Vec::with_capacity(word.len() + 1);
        vertices.push(start);
        let mut cur = start;
        for &s in word {
            cur = match s {
                Step::Right => (cur.0 + 1, cur.1),
                Step::Down => (cur.0, cur.1 - 1),
            };
            vertices.push(cur);
        }
        DownRightPath { vertices }
    }

    pub fn vertices(&self) -> &[(i64, i64)] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn word(&self) -> Vec<Step> {
        self.vertices
            .windows(2)
            .map(|w| if w[1].0 > w[0].0 { Step::Right } else { Step::Down })
            .collect()
    }

    /// Step k ∈ 1..=N as (from, to).
    pub fn step(&self, k: usize) -> ((i64, i64), (i64, i64)) {
        (self.vertices[k - 1], self.vertices[k])
    }

    /// True when every vertex sits on the strip of the given width,
    /// m ≤ n ≤ m + N, with endpoints on the two strip boundaries.
    pub fn is_strip_path(&self, width: usize) -> bool {
        let n = width as i64;
        let on_strip = self.vertices.iter().all(|&(x, y)| y <= x && x <= y + n);
        let (x0, y0) = self.vertices[0];
        let (x1, y1) = *self.vertices.last().unwrap();
        on_strip && x0 == y0 && x1 == y1 + n && self.len() == width
    }
}

/// Quadrant disorder parameters. The homogeneous model only needs
/// 2θ > (d-1)/2 to be defined; stationary boundary conditions additionally
/// require θ ± u > (d-1)/2 and are rejected otherwise.
#[derive(Clone, Debug)]
pub struct QuadrantParams {
    pub dim: usize,
    kind: QuadrantKind,
}

#[derive(Clone, Debug)]
enum QuadrantKind {
    Homogeneous { theta: f64, u: f64 },
    Inhomogeneous { alphas: Vec<f64>, betas: Vec<f64> },
}

impl QuadrantParams {
    pub fn homogeneous(dim: usize, theta: f64, u: f64) -> Result<Self> {
        let bound = (dim as f64 - 1.0) / 2.0;
        if !(2.0 * theta > bound) {
            return Err(LatticeError::Parameter(format!(
                "quadrant model needs 2θ > (d-1)/2 = {bound}, got θ = {theta}"
            )));
        }
        Ok(QuadrantParams { dim, kind: QuadrantKind::Homogeneous { theta, u } })
    }

    pub fn inhomogeneous(dim: usize, alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        let bound = (dim as f64 - 1.0) / 2.0;
        if alphas.iter().chain(&betas).any(|&x| !(x > bound)) {
            return Err(LatticeError::Parameter(format!(
                "inhomogeneous quadrant needs every α_n, β_m > (d-1)/2 = {bound}"
            )));
        }
        Ok(QuadrantParams { dim, kind: QuadrantKind::Inhomogeneous { alphas, betas } })
    }

    pub fn theta_u(&self) -> Option<(f64, f64)> {
        match &self.kind {
            QuadrantKind::Homogeneous { theta, u } => Some((*theta, *u)),
            _ => None,
        }
    }

    /// Column parameter α_n, 1-based.
    pub fn alpha(&self, n: i64) -> Result<f64> {
        match &self.kind {
            QuadrantKind::Homogeneous { theta, u } => Ok(theta - u),
            QuadrantKind::Inhomogeneous { alphas, .. } => alphas
                .get((n - 1) as usize)
                .copied()
                .ok_or_else(|| LatticeError::Parameter(format!("no α parameter for column {n}"))),
        }
    }

    /// Row parameter β_m, 1-based.
    pub fn beta(&self, m: i64) -> Result<f64> {
        match &self.kind {
            QuadrantKind::Homogeneous { theta, u } => Ok(theta + u),
            QuadrantKind::Inhomogeneous { betas, .. } => betas
                .get((m - 1) as usize)
                .copied()
                .ok_or_else(|| LatticeError::Parameter(format!("no β parameter for row {m}"))),
        }
    }

    /// Shape of the disorder at bulk vertex (n, m): α_n + β_m (= 2θ in the
    /// homogeneous model).
    pub fn disorder_shape(&self, n: i64, m: i64) -> Result<f64> {
        match &self.kind {
            QuadrantKind::Homogeneous { theta, .. } => Ok(2.0 * theta),
            QuadrantKind::Inhomogeneous { .. } => Ok(self.alpha(n)? + self.beta(m)?),
        }
    }

    /// Stationary boundary conditions need the stronger θ ± u > (d-1)/2.
    pub fn require_stationary(&self) -> Result<()> {
        let bound = (self.dim as f64 - 1.0) / 2.0;
        match &self.kind {
            QuadrantKind::Homogeneous { theta, u } => {
                if !(theta - u > bound) || !(theta + u > bound) {
                    return Err(LatticeError::Parameter(format!(
                        "stationary boundaries need θ±u > (d-1)/2 = {bound}, got θ = {theta}, u = {u}"
                    )));
                }
                Ok(())
            }
            QuadrantKind::Inhomogeneous { .. } => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    MaximalCurrent,
    Equilibrium,
}

/// Strip model parameters: width N, cyclic column/row parameters ϑ_i and
/// boundary parameters u (left), v (right).
#[derive(Clone, Debug)]
pub struct StripParams {
    pub dim: usize,
    pub width: usize,
    pub thetas: Vec<f64>,
    pub u: f64,
    pub v: f64,
    pub regime: Regime,
}

impl StripParams {
    pub fn new(dim: usize, thetas: Vec<f64>, u: f64, v: f64, regime: Regime) -> Result<Self> {
        if thetas.is_empty() {
            return Err(LatticeError::Parameter("strip needs at least one ϑ".into()));
        }
        let width = thetas.len();
        let bound = (dim as f64 - 1.0) / 2.0;
        match regime {
            Regime::MaximalCurrent => {
                let mut ok = u + v > bound;
                for &ti in &thetas {
                    ok &= ti + u > bound && ti + v > bound;
                    for &tj in &thetas {
                        ok &= ti + tj > bound;
                    }
                }
                if !ok {
                    return Err(LatticeError::Parameter(format!(
                        "maximal current regime needs u+v, ϑ_i+ϑ_j, ϑ_i+u, ϑ_i+v > (d-1)/2 = {bound}"
                    )));
                }
            }
            Regime::Equilibrium => {
                if (u + v).abs() > 1e-12 {
                    return Err(LatticeError::Parameter(format!(
                        "equilibrium regime needs u + v = 0, got {}",
                        u + v
                    )));
                }
                for &ti in &thetas {
                    if !(ti + u > bound) || !(ti + v > bound) {
                        return Err(LatticeError::Parameter(format!(
                            "equilibrium regime needs ϑ_i ± u > (d-1)/2 = {bound}"
                        )));
                    }
                }
            }
        }
        Ok(StripParams { dim, width, thetas, u, v, regime })
    }

    pub fn homogeneous(dim: usize, width: usize, theta: f64, u: f64, v: f64, regime: Regime) -> Result<Self> {
        Self::new(dim, vec![theta; width], u, v, regime)
    }

    /// ϑ_p under the cyclic convention ϑ_p = ϑ_k for p ≡ k (mod N), 1 ≤ k ≤ N.
    pub fn theta_at(&self, p: i64) -> f64 {
        let n = self.width as i64;
        self.thetas[((p - 1).rem_euclid(n)) as usize]
    }

    /// Disorder shape at a strip vertex: ϑ_m+u on the left boundary (n = m),
    /// ϑ_m+v on the right boundary (n = m+N), ϑ_n+ϑ_m in the bulk.
    pub fn disorder_shape(&self, n: i64, m: i64) -> Result<f64> {
        let width = self.width as i64;
        if n == m {
            Ok(self.theta_at(m) + self.u)
        } else if n == m + width {
            Ok(self.theta_at(m) + self.v)
        } else if m < n && n < m + width {
            Ok(self.theta_at(n) + self.theta_at(m))
        } else {
            Err(LatticeError::OutOfRegion(n, m))
        }
    }
}

/// Edge labels along a quadrant path: a right step into column n reads α_n,
/// a down step out of row m reads β_m.
pub fn edge_labels_quadrant(path: &DownRightPath, params: &QuadrantParams) -> Result<Vec<f64>> {
    let mut labels = Vec::with_capacity(path.len());
    for k in 1..=path.len() {
        let (from, to) = path.step(k);
        labels.push(if to.0 > from.0 { params.alpha(to.0)? } else { params.beta(from.1)? });
    }
    Ok(labels)
}

/// Edge labels along a strip path; the rule depends on the regime:
/// maximal current reads ϑ_n / ϑ_m, equilibrium reads ϑ_n+v / ϑ_m+u.
pub fn edge_labels_strip(path: &DownRightPath, params: &StripParams) -> Result<Vec<f64>> {
    let mut labels = Vec::with_capacity(path.len());
    for k in 1..=path.len() {
        let (from, to) = path.step(k);
        let label = if to.0 > from.0 {
            let base = params.theta_at(to.0);
            match params.regime {
                Regime::MaximalCurrent => base,
                Regime::Equilibrium => base + params.v,
            }
        } else {
            let base = params.theta_at(from.1);
            match params.regime {
                Regime::MaximalCurrent => base,
                Regime::Equilibrium => base + params.u,
            }
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Whether disorder is drawn or pinned to the identity (a test hook for
/// exact, deterministic recurrence checks).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisorderMode {
    Random,
    ForceIdentity,
}

fn draw_disorder(d: usize, shape: f64, mode: DisorderMode, seed: &Seed, n: i64, m: i64) -> Result<SpdMatrix> {
    match mode {
        DisorderMode::ForceIdentity => Ok(SpdMatrix::identity(d)),
        DisorderMode::Random => {
            let mut rng = seed.child2(coord_key(n), coord_key(m)).rng();
            Ok(sample_inv_wishart_with(d, shape, &mut rng)?)
        }
    }
}

/// Boundary data for the quadrant: values at b_k, with b_{-k} = (0,k) on the
/// left axis and b_k = (k,0) on the bottom axis. Values may be PSD zero.
#[derive(Clone, Debug)]
pub struct QuadrantBoundary {
    offset: i64,
    values: Vec<PsdMatrix>,
}

impl QuadrantBoundary {
    pub fn new(offset: i64, values: Vec<PsdMatrix>) -> Self {
        QuadrantBoundary { offset, values }
    }

    /// The delta boundary condition: B₁ = id, every other value 0.
    pub fn delta(d: usize, m_max: usize, n_max: usize) -> Self {
        let mut values = vec![PsdMatrix::zero(d); m_max + n_max + 1];
        values[m_max + 1] = PsdMatrix::identity(d);
        QuadrantBoundary { offset: -(m_max as i64), values }
    }

    pub fn from_process(process: &crate::sampling::IndexedProcess) -> Self {
        QuadrantBoundary {
            offset: process.offset,
            values: process.values.iter().map(|x| x.to_psd()).collect(),
        }
    }

    pub fn get(&self, k: i64) -> Option<&PsdMatrix> {
        let ix = k - self.offset;
        if ix < 0 {
            None
        } else {
            self.values.get(ix as usize)
        }
    }
}

/// Partition-function values on a rectangle [0, n_max] × [0, m_max] of the
/// quadrant, together with the disorder that produced them.
#[derive(Clone, Debug)]
pub struct LatticeField {
    pub n_max: i64,
    pub m_max: i64,
    values: Vec<PsdMatrix>,
    disorder: HashMap<(i64, i64), SpdMatrix>,
}

impl LatticeField {
    fn index(&self, n: i64, m: i64) -> Option<usize> {
        if n < 0 || m < 0 || n > self.n_max || m > self.m_max {
            None
        } else {
            Some((m * (self.n_max + 1) + n) as usize)
        }
    }

    pub fn value(&self, n: i64, m: i64) -> Result<&PsdMatrix> {
        self.index(n, m)
            .map(|ix| &self.values[ix])
            .ok_or(LatticeError::OutOfRegion(n, m))
    }

    pub fn disorder(&self, n: i64, m: i64) -> Option<&SpdMatrix> {
        self.disorder.get(&(n, m))
    }
}

/// Evolves the quadrant recurrence Z(n,m) = W(n,m) ⋆ (Z(n-1,m) + Z(n,m-1))
/// on the given rectangle, with W(n,m) ~ Wis⁻¹(α_n + β_m) drawn from the
/// vertex stream (n, m) of `seed`.
pub fn quadrant_evolve(
    params: &QuadrantParams,
    boundary: &QuadrantBoundary,
    n_max: usize,
    m_max: usize,
    mode: DisorderMode,
    seed: &Seed,
) -> Result<LatticeField> {
    let d = params.dim;
    let mut field = LatticeField {
        n_max: n_max as i64,
        m_max: m_max as i64,
        values: vec![PsdMatrix::zero(d); (n_max + 1) * (m_max + 1)],
        disorder: HashMap::new(),
    };
    for m in 0..=(m_max as i64) {
        let value = boundary
            .get(-m)
            .ok_or_else(|| LatticeError::Parameter(format!("boundary misses index {}", -m)))?;
        let ix = field.index(0, m).unwrap();
        field.values[ix] = value.clone();
    }
    for n in 1..=(n_max as i64) {
        let value = boundary
            .get(n)
            .ok_or_else(|| LatticeError::Parameter(format!("boundary misses index {n}")))?;
        let ix = field.index(n, 0).unwrap();
        field.values[ix] = value.clone();
    }
    for m in 1..=(m_max as i64) {
        for n in 1..=(n_max as i64) {
            let shape = params.disorder_shape(n, m)?;
            let w = draw_disorder(d, shape, mode, seed, n, m)?;
            let left = field.value(n - 1, m)?;
            let below = field.value(n, m - 1)?;
            let sum = left.add(below)?;
            let sum = sum
                .as_spd("quadrant recurrence sum")
                .map_err(|source| LatticeError::Vertex { n, m, source })?;
            let z = star(&w, &sum).map_err(|source| LatticeError::Vertex { n, m, source })?;
            let ix = field.index(n, m).unwrap();
            field.values[ix] = z.to_psd();
            field.disorder.insert((n, m), w);
        }
    }
    Ok(field)
}

/// Values of the field along a path.
pub fn path_values(field: &LatticeField, path: &DownRightPath) -> Result<Vec<PsdMatrix>> {
    path.vertices()
        .iter()
        .map(|&(n, m)| field.value(n, m).cloned())
        .collect()
}

/// Partition-function values along a down-right path of the strip.
#[derive(Clone, Debug)]
pub struct StripState {
    pub path: DownRightPath,
    pub values: Vec<SpdMatrix>,
}

impl StripState {
    pub fn new(path: DownRightPath, values: Vec<SpdMatrix>) -> Result<Self> {
        if path.vertices().len() != values.len() {
            return Err(LatticeError::Path("one value per path vertex required".into()));
        }
        Ok(StripState { path, values })
    }
}

/// Whether vertex j of the path admits a single-vertex raise by (1,1).
pub fn raisable(path: &DownRightPath, j: usize) -> bool {
    let word = path.word();
    let n = path.len();
    if j == 0 {
        !word.is_empty() && word[0] == Step::Right
    } else if j == n {
        word[n - 1] == Step::Down
    } else {
        word[j - 1] == Step::Down && word[j] == Step::Right
    }
}

/// The path with vertex j moved by (1,1).
pub fn raise_path(path: &DownRightPath, j: usize) -> Result<DownRightPath> {
    if !raisable(path, j) {
        return Err(LatticeError::Path(format!("vertex {j} cannot be raised")));
    }
    let mut vertices = path.vertices().to_vec();
    vertices[j] = (vertices[j].0 + 1, vertices[j].1 + 1);
    DownRightPath::from_vertices(vertices)
}

/// Applies the polymer recurrence at a raised strip vertex: fresh disorder
/// for the new lattice vertex, value from the (new) neighbors.
pub fn strip_raise_value(
    params: &StripParams,
    state: &StripState,
    j: usize,
    mode: DisorderMode,
    seed: &Seed,
) -> Result<SpdMatrix> {
    let (n0, m0) = state.path.vertices()[j];
    let (n, m) = (n0 + 1, m0 + 1);
    let shape = params.disorder_shape(n, m)?;
    let w = draw_disorder(params.dim, shape, mode, seed, n, m)?;
    let neighbor_sum = if j == 0 {
        state.values[1].clone()
    } else if j == state.path.len() {
        state.values[j - 1].clone()
    } else {
        state.values[j - 1].add(&state.values[j + 1])?
    };
    star(&w, &neighbor_sum).map_err(|source| LatticeError::Vertex { n, m, source })
}

/// One full diagonal translation of the path: every vertex raised exactly
/// once, in an order where each raise sees its updated neighbors.
pub fn strip_translate(
    params: &StripParams,
    state: &StripState,
    mode: DisorderMode,
    seed: &Seed,
) -> Result<StripState> {
    let n = state.path.len();
    let mut raised = vec![false; n + 1];
    let mut current = state.clone();
    loop {
        let Some(j) = (0..=n).find(|&j| !raised[j] && raisable(&current.path, j)) else {
            break;
        };
        let value = strip_raise_value(params, &current, j, mode, seed)?;
        current = StripState {
            path: raise_path(&current.path, j)?,
            values: {
                let mut vals = current.values.clone();
                vals[j] = value;
                vals
            },
        };
        raised[j] = true;
    }
    if raised.iter().all(|&r| r) {
        Ok(current)
    } else {
        Err(LatticeError::Path("translation stalled before raising every vertex".into()))
    }
}

/// Evolves the strip for `steps` diagonal translations, returning the state
/// after each translation.
pub fn strip_evolve(
    params: &StripParams,
    initial: &StripState,
    steps: usize,
    mode: DisorderMode,
    seed: &Seed,
) -> Result<Vec<StripState>> {
    if !initial.path.is_strip_path(params.width) {
        return Err(LatticeError::Path("initial path must cross the strip".into()));
    }
    let mut states = Vec::with_capacity(steps);
    let mut current = initial.clone();
    for _ in 0..steps {
        current = strip_translate(params, &current, mode, seed)?;
        states.push(current.clone());
    }
    Ok(states)
}

/// Samples the equilibrium stationary initial condition along the bottom
/// path: a Wis± walk from `start` with the equilibrium edge labels.
pub fn equilibrium_initial_state(
    params: &StripParams,
    bottom: &DownRightPath,
    start: &SpdMatrix,
    seed: &Seed,
) -> Result<StripState> {
    if params.regime != Regime::Equilibrium {
        return Err(LatticeError::Parameter("stationary walk initial condition is an equilibrium-regime object".into()));
    }
    let labels = edge_labels_strip(bottom, params)?;
    let spec = WalkSpec {
        dim: params.dim,
        gammas: labels,
        word: bottom.word(),
        start: WalkStart::Fixed(start.clone()),
    };
    let values = sample_walk(&spec, seed)?;
    StripState::new(bottom.clone(), values)
}

/// The one-step update of the stationary quadrant structure:
///   U' = (W ⋆ (U⋆(V⋆S) + S)) ⋆ S⁻¹,
///   V' = (U⋆(V⋆S)) ⋆ (W ⋆ (U⋆(V⋆S) + S))⁻¹.
/// When (U, V, W) are independent Wis⁻¹(θ-u), Wis(θ+u), Wis⁻¹(2θ) and S is
/// independent of them, (U', V') has the law of (U, V). At d = 1 the
/// expressions collapse to U' = W(UV+1), V' = UV/(W(UV+1)), independent of S.
pub fn one_step_update(
    u: &SpdMatrix,
    v: &SpdMatrix,
    w: &SpdMatrix,
    s: &SpdMatrix,
) -> Result<(SpdMatrix, SpdMatrix)> {
    let vs = star(v, s)?;
    let t = star(u, &vs)?; // U⋆(V⋆S)
    let inner = t.add(s)?;
    let wt = star(w, &inner)?; // W ⋆ (U⋆(V⋆S) + S)
    let u_new = star_inv(&wt, s)?;
    let v_new = star_inv(&t, &wt)?;
    Ok((u_new, v_new))
}

/// The normalized point-to-line partition functions M(1..k_max) of the delta
/// boundary model: M(k) = Σ_{i+j=k} Z(i,j) / (2c(2θ))^{k-1}. M(1) = id
/// exactly; E[M(k)] = id for every k.
pub fn point_to_line_martingale(
    params: &QuadrantParams,
    k_max: usize,
    mode: DisorderMode,
    seed: &Seed,
) -> Result<Vec<SpdMatrix>> {
    let (theta, _) = params
        .theta_u()
        .ok_or_else(|| LatticeError::Parameter("martingale needs the homogeneous model".into()))?;
    let c = inv_wishart_mean_constant(params.dim, 2.0 * theta)?;
    let boundary = QuadrantBoundary::delta(params.dim, k_max, k_max);
    // the full rectangle is wasteful but k_max stays small (≤ 16 in tests)
    let field = quadrant_evolve(params, &boundary, k_max, k_max, mode, seed)?;
    let mut out = Vec::with_capacity(k_max);
    for k in 1..=(k_max as i64) {
        let mut acc = PsdMatrix::zero(params.dim);
        for i in 0..=k {
            let j = k - i;
            if i <= field.n_max && j <= field.m_max {
                acc = acc.add(field.value(i, j)?)?;
            }
        }
        let normalizer = (2.0 * c).powi(k as i32 - 1);
        let m = acc
            .as_spd("anti-diagonal sum")
            .map_err(|source| LatticeError::Vertex { n: k, m: k, source })?
            .scale(1.0 / normalizer)?;
        out.push(m);
    }
    Ok(out)
}

/// log |Z(n,n)| of the delta-boundary quadrant, for free-energy runs.
pub fn quadrant_delta_diagonal_logdet(
    params: &QuadrantParams,
    n: usize,
    seed: &Seed,
) -> Result<f64> {
    let boundary = QuadrantBoundary::delta(params.dim, n, n);
    let field = quadrant_evolve(params, &boundary, n, n, DisorderMode::Random, seed)?;
    let z = field.value(n as i64, n as i64)?.as_spd("diagonal value")?;
    Ok(z.logdet()?)
}
