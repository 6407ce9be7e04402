//! Exact release-channel optimization on small discrete alphabets.
//!
//! The releaser picks a channel `p(z|w)`; the adversary answers with the
//! exact Bayes posterior `p(x|z[,s])`. The objective is the Lagrangian
//! `E[d(Z,Y)] − λ · H^A_α(X|Z[,S])`, minimized by projected gradient descent
//! with every channel row re-projected onto the simplex.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info_measures::{
    arimoto_conditional_entropy_axes, log_alpha_norm, log_sum_exp, Alpha, JointPmf, Pmf, ZERO_PROB,
};

/// Largest alphabet handled by exact enumeration.
pub const MAX_ALPHABET: usize = 16;

/// Most free channel parameters [`grid_oracle`] will enumerate.
pub const MAX_GRID_PARAMS: usize = 4;

/// Row-stochastic matrix `probs[w][z] = p(Z = z | W = w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ReleaseChannel {
    inputs: usize,
    outputs: usize,
    probs: Vec<f64>,
}

impl ReleaseChannel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let inputs = rows.len();
        let outputs = rows.first().map_or(0, Vec::len);
        if inputs == 0 || outputs == 0 || rows.iter().any(|r| r.len() != outputs) {
            return Err(Error::Shape(
                "channel must be a non-empty rectangular matrix".into(),
            ));
        }
        for row in &rows {
            Pmf::new(row.clone())?;
        }
        Ok(Self {
            inputs,
            outputs,
            probs: rows.into_iter().flatten().collect(),
        })
    }

    fn from_flat(inputs: usize, outputs: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), inputs * outputs);
        Self {
            inputs,
            outputs,
            probs,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            probs[i * n + i] = 1.0;
        }
        Self::from_flat(n, n, probs)
    }

    /// Every input mapped to the same output distribution.
    pub fn constant(inputs: usize, row: &Pmf) -> Self {
        let probs = (0..inputs)
            .flat_map(|_| row.probs().iter().copied())
            .collect();
        Self::from_flat(inputs, row.len(), probs)
    }

    /// Rows drawn from a symmetric Dirichlet(1).
    pub fn random(inputs: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = Vec::with_capacity(inputs * outputs);
        for _ in 0..inputs {
            let draws: Vec<f64> = (0..outputs).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            probs.extend(draws.into_iter().map(|d| d / total));
        }
        Self::from_flat(inputs, outputs, probs)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn get(&self, w: usize, z: usize) -> f64 {
        self.probs[w * self.outputs + z]
    }

    pub fn row(&self, w: usize) -> &[f64] {
        &self.probs[w * self.outputs..(w + 1) * self.outputs]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs
            .chunks(self.outputs)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// True when every row is a valid distribution (1e-12 mass tolerance).
    pub fn is_feasible(&self) -> bool {
        self.probs.chunks(self.outputs).all(|row| {
            row.iter().all(|&p| p >= 0.0 && p.is_finite())
                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12
        })
    }
}

impl TryFrom<Vec<Vec<f64>>> for ReleaseChannel {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        ReleaseChannel::new(rows)
    }
}

impl From<ReleaseChannel> for Vec<Vec<f64>> {
    fn from(c: ReleaseChannel) -> Self {
        c.to_rows()
    }
}

/// Data-generating law `p(x, w, y[, s])` together with the distortion table
/// `d(z, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldModelDoc", into = "WorldModelDoc")]
pub struct WorldModel {
    joint: JointPmf,
    distortion: Vec<Vec<f64>>,
    // p(x, w, s) laid out [x][w][s]
    pxws: Vec<f64>,
    // Σ_y p(w, y) d(z, y), laid out [w][z]
    expected_cost: Vec<f64>,
    nx: usize,
    nw: usize,
    ny: usize,
    ns: usize,
    nz: usize,
}

/// JSON form of a [`WorldModel`].
///
/// `joint` is the row-major flattening of `p(x, w, y[, s])` with the last
/// listed axis varying fastest; `distortion[z][y]` holds `d(z, y)`. The
/// release alphabet size is the number of distortion rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModelDoc {
    pub x: usize,
    pub w: usize,
    pub y: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    pub joint: Vec<f64>,
    pub distortion: Vec<Vec<f64>>,
}

impl TryFrom<WorldModelDoc> for WorldModel {
    type Error = Error;
    fn try_from(doc: WorldModelDoc) -> Result<Self> {
        let mut shape = vec![doc.x, doc.w, doc.y];
        let mut labels = vec!["X".to_string(), "W".to_string(), "Y".to_string()];
        if let Some(s) = doc.s {
            shape.push(s);
            labels.push("S".into());
        }
        WorldModel::new(JointPmf::new(shape, labels, doc.joint)?, doc.distortion)
    }
}

impl From<WorldModel> for WorldModelDoc {
    fn from(m: WorldModel) -> Self {
        WorldModelDoc {
            x: m.nx,
            w: m.nw,
            y: m.ny,
            s: (m.joint.ndim() == 4).then_some(m.ns),
            joint: m.joint.probs().to_vec(),
            distortion: m.distortion,
        }
    }
}

impl WorldModel {
    /// `joint` has axes (X, W, Y) or (X, W, Y, S) in that order;
    /// `distortion[z][y]` is the cost of releasing `z` when the useful value is `y`.
    pub fn new(joint: JointPmf, distortion: Vec<Vec<f64>>) -> Result<Self> {
        let shape = joint.shape().to_vec();
        if shape.len() != 3 && shape.len() != 4 {
            return Err(Error::Shape(format!(
                "world joint needs axes (X, W, Y[, S]), got shape {shape:?}"
            )));
        }
        let (nx, nw, ny) = (shape[0], shape[1], shape[2]);
        let ns = shape.get(3).copied().unwrap_or(1);
        let nz = distortion.len();
        if nz == 0 || distortion.iter().any(|r| r.len() != ny) {
            return Err(Error::Shape(format!("distortion table must be |Z| x {ny}")));
        }
        if distortion
            .iter()
            .flatten()
            .any(|&d| !(d >= 0.0 && d.is_finite()))
        {
            return Err(Error::Config(
                "distortion entries must be finite and non-negative".into(),
            ));
        }
        if nz == ny && (0..nz).any(|i| distortion[i][i] != 0.0) {
            return Err(Error::Config(
                "d(z, y) must vanish on the diagonal when Z and Y share an alphabet".into(),
            ));
        }
        for (name, n) in [("X", nx), ("W", nw), ("Y", ny), ("S", ns), ("Z", nz)] {
            if n > MAX_ALPHABET {
                return Err(Error::Config(format!(
                    "alphabet {name} has {n} symbols; exact optimization supports at most {MAX_ALPHABET}"
                )));
            }
        }

        let keep_xws: Vec<usize> = if shape.len() == 4 {
            vec![0, 1, 3]
        } else {
            vec![0, 1]
        };
        let pxws = joint.marginal(&keep_xws)?.probs().to_vec();
        let pwy = joint.marginal(&[1, 2])?;
        let mut expected_cost = vec![0.0; nw * nz];
        for w in 0..nw {
            for (z, costs) in distortion.iter().enumerate() {
                expected_cost[w * nz + z] = (0..ny).map(|y| pwy.get(&[w, y]) * costs[y]).sum();
            }
        }
        Ok(Self {
            joint,
            distortion,
            pxws,
            expected_cost,
            nx,
            nw,
            ny,
            ns,
            nz,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn joint(&self) -> &JointPmf {
        &self.joint
    }

    pub fn distortion(&self) -> &[Vec<f64>] {
        &self.distortion
    }

    pub fn has_side_information(&self) -> bool {
        self.joint.ndim() == 4
    }

    pub fn private_size(&self) -> usize {
        self.nx
    }

    pub fn observed_size(&self) -> usize {
        self.nw
    }

    pub fn useful_size(&self) -> usize {
        self.ny
    }

    pub fn release_size(&self) -> usize {
        self.nz
    }

    pub fn side_size(&self) -> usize {
        self.ns
    }

    /// Prior of the private variable.
    pub fn private_prior(&self) -> Pmf {
        self.joint.marginal_pmf(0).expect("axis 0 exists")
    }

    /// Number of free parameters of a channel for this world.
    pub fn free_parameters(&self) -> usize {
        self.nw * (self.nz - 1)
    }

    fn check_channel(&self, channel: &ReleaseChannel) -> Result<()> {
        if channel.inputs() != self.nw || channel.outputs() != self.nz {
            return Err(Error::Shape(format!(
                "channel is {}x{}, world needs {}x{}",
                channel.inputs(),
                channel.outputs(),
                self.nw,
                self.nz
            )));
        }
        Ok(())
    }

    #[inline]
    fn pxws(&self, x: usize, w: usize, s: usize) -> f64 {
        self.pxws[(x * self.nw + w) * self.ns + s]
    }

    /// Fills `q` (laid out [z][s][x]) with `p(x, z, s)` for channel `c`.
    fn release_joint(&self, c: &[f64], q: &mut Vec<f64>) {
        q.clear();
        q.resize(self.nz * self.ns * self.nx, 0.0);
        for z in 0..self.nz {
            for s in 0..self.ns {
                for x in 0..self.nx {
                    let mut acc = 0.0;
                    for w in 0..self.nw {
                        acc += self.pxws(x, w, s) * c[w * self.nz + z];
                    }
                    q[(z * self.ns + s) * self.nx + x] = acc;
                }
            }
        }
    }

    fn expected_distortion_flat(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.expected_cost).map(|(q, d)| q * d).sum()
    }

    /// Conditional entropy of X given (Z, S) from a filled [z][s][x] table.
    fn entropy_from_release_joint(&self, q: &[f64], alpha: Alpha) -> f64 {
        let slices = q.chunks(self.nx);
        if alpha.is_shannon() {
            slices
                .map(|col| {
                    let mass: f64 = col.iter().sum();
                    if mass < ZERO_PROB {
                        return 0.0;
                    }
                    col.iter()
                        .filter(|&&p| p >= ZERO_PROB)
                        .map(|&p| -p * (p / mass).ln())
                        .sum::<f64>()
                })
                .sum()
        } else {
            alpha.prefactor() * log_sum_exp(slices.map(|col| log_alpha_norm(col, alpha)))
        }
    }

    fn objective_flat(&self, c: &[f64], alpha: Alpha, lambda: f64, scratch: &mut Vec<f64>) -> f64 {
        let d = self.expected_distortion_flat(c);
        if lambda == 0.0 {
            return d;
        }
        self.release_joint(c, scratch);
        d - lambda * self.entropy_from_release_joint(scratch, alpha)
    }

    /// Analytic gradient of the objective with respect to every channel entry.
    fn gradient_flat(
        &self,
        c: &[f64],
        alpha: Alpha,
        lambda: f64,
        scratch: &mut Vec<f64>,
    ) -> Vec<f64> {
        let mut grad = self.expected_cost.clone();
        if lambda == 0.0 {
            return grad;
        }
        self.release_joint(c, scratch);
        let q = &scratch[..];
        let nx = self.nx;
        // dH/dq(x, z, s), laid out like q
        let mut dh = vec![0.0; q.len()];
        if alpha.is_shannon() {
            for (col, dcol) in q.chunks(nx).zip(dh.chunks_mut(nx)) {
                let mass: f64 = col.iter().sum();
                if mass < ZERO_PROB {
                    continue;
                }
                for (p, g) in col.iter().zip(dcol.iter_mut()) {
                    *g = -(p.max(ZERO_PROB) / mass).ln();
                }
            }
        } else {
            let a = alpha.value();
            let log_norms: Vec<f64> = q.chunks(nx).map(|col| log_alpha_norm(col, alpha)).collect();
            let log_total = log_sum_exp(log_norms.iter().copied());
            for ((col, dcol), &ln_n) in q.chunks(nx).zip(dh.chunks_mut(nx)).zip(&log_norms) {
                if ln_n == f64::NEG_INFINITY {
                    continue;
                }
                for (p, g) in col.iter().zip(dcol.iter_mut()) {
                    let p = p.max(ZERO_PROB);
                    *g = alpha.prefactor()
                        * ((a - 1.0) * p.ln() + (1.0 - a) * ln_n - log_total).exp();
                }
            }
        }
        for w in 0..self.nw {
            for z in 0..self.nz {
                let mut acc = 0.0;
                for s in 0..self.ns {
                    for x in 0..nx {
                        acc += self.pxws(x, w, s) * dh[(z * self.ns + s) * nx + x];
                    }
                }
                grad[w * self.nz + z] -= lambda * acc;
            }
        }
        grad
    }
}

/// Trade-off configuration for the exact optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelOptConfig {
    pub alpha: Alpha,
    pub lambda: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub tolerance: f64,
}

impl ChannelOptConfig {
    pub fn new(alpha: Alpha, lambda: f64) -> Self {
        Self {
            alpha,
            lambda,
            step_size: 0.5,
            max_iters: 5000,
            tolerance: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be > 0, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Exact adversary best response to a channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BayesPosterior {
    /// `p(x, z)` or `p(x, z, s)`.
    pub joint: JointPmf,
    conditional: Vec<f64>,
    supported: Vec<bool>,
    nx: usize,
    ns: usize,
}

impl BayesPosterior {
    /// `p(x | z, s)`, or `None` when `p(z, s) = 0`. Use `s = 0` without side information.
    pub fn posterior(&self, z: usize, s: usize) -> Option<&[f64]> {
        let i = z * self.ns + s;
        self.supported[i].then(|| &self.conditional[i * self.nx..(i + 1) * self.nx])
    }

    pub fn is_supported(&self, z: usize, s: usize) -> bool {
        self.supported[z * self.ns + s]
    }
}

/// Posterior of X given the release (and side information) under `channel`.
pub fn bayes_posterior(world: &WorldModel, channel: &ReleaseChannel) -> Result<BayesPosterior> {
    world.check_channel(channel)?;
    let mut q = Vec::new();
    world.release_joint(channel.as_flat(), &mut q);
    let (nx, nz, ns) = (world.nx, world.nz, world.ns);

    let mut conditional = vec![0.0; q.len()];
    let mut supported = vec![false; nz * ns];
    for (i, (col, out)) in q.chunks(nx).zip(conditional.chunks_mut(nx)).enumerate() {
        let mass: f64 = col.iter().sum();
        if mass >= ZERO_PROB {
            supported[i] = true;
            for (o, p) in out.iter_mut().zip(col) {
                *o = p / mass;
            }
        }
    }

    // reorder [z][s][x] into a row-major (X, Z[, S]) table
    let mut probs = vec![0.0; q.len()];
    for x in 0..nx {
        for z in 0..nz {
            for s in 0..ns {
                probs[(x * nz + z) * ns + s] = q[(z * ns + s) * nx + x];
            }
        }
    }
    let joint = if world.has_side_information() {
        JointPmf::new(
            vec![nx, nz, ns],
            vec!["X".into(), "Z".into(), "S".into()],
            probs,
        )?
    } else {
        JointPmf::new(vec![nx, nz], vec!["X".into(), "Z".into()], probs)?
    };
    Ok(BayesPosterior {
        joint,
        conditional,
        supported,
        nx,
        ns,
    })
}

/// `E[d(Z, Y)]` under `channel`.
pub fn expected_distortion(world: &WorldModel, channel: &ReleaseChannel) -> Result<f64> {
    world.check_channel(channel)?;
    Ok(world.expected_distortion_flat(channel.as_flat()))
}

/// `H^A_α(X | Z[, S])` under `channel`, from the Bayes posterior.
pub fn posterior_entropy(
    world: &WorldModel,
    channel: &ReleaseChannel,
    alpha: Alpha,
) -> Result<f64> {
    let post = bayes_posterior(world, channel)?;
    let given: Vec<usize> = (1..post.joint.ndim()).collect();
    arimoto_conditional_entropy_axes(&post.joint, 0, &given, alpha)
}

/// `E[d(Z,Y)] − λ · H^A_α(X̂ | Z[, S])` with the adversary at its Bayes best response.
pub fn releaser_objective(
    world: &WorldModel,
    channel: &ReleaseChannel,
    cfg: &ChannelOptConfig,
) -> Result<f64> {
    let d = expected_distortion(world, channel)?;
    let h = posterior_entropy(world, channel, cfg.alpha)?;
    Ok(d - cfg.lambda * h)
}

/// Analytic gradient of [`releaser_objective`] with respect to the channel
/// entries, laid out like [`ReleaseChannel::as_flat`].
pub fn objective_gradient(
    world: &WorldModel,
    channel: &ReleaseChannel,
    cfg: &ChannelOptConfig,
) -> Result<Vec<f64>> {
    world.check_channel(channel)?;
    Ok(world.gradient_flat(channel.as_flat(), cfg.alpha, cfg.lambda, &mut Vec::new()))
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_to_simplex(v: &[f64]) -> Result<Pmf> {
    if v.is_empty() {
        return Err(Error::Empty("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidDistribution(
            "projection input must be finite".into(),
        ));
    }
    let mut out = v.to_vec();
    project_in_place(&mut out);
    Pmf::new(out)
}

fn project_in_place(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
    // absorb rounding so the row sums to one
    let total: f64 = v.iter().sum();
    if total > 0.0 && total != 1.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
}

/// Outcome of [`optimize_channel`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub channel: ReleaseChannel,
    pub objective: f64,
    /// Objective after initialization and after every accepted step.
    pub trace: Vec<f64>,
    /// False when `max_iters` ran out before the improvement fell below tolerance.
    pub converged: bool,
}

/// Projected gradient descent on the channel with a backtracking step.
///
/// Each iteration re-solves the adversary exactly (the posterior inside the
/// objective) and takes one projected step; a step is accepted only if the
/// objective does not increase, so the trace is non-increasing.
pub fn optimize_channel(
    world: &WorldModel,
    cfg: &ChannelOptConfig,
    seed: u64,
) -> Result<OptimizeResult> {
    cfg.validate()?;
    let (nw, nz) = (world.nw, world.nz);
    let mut scratch = Vec::new();
    let mut current = ReleaseChannel::random(nw, nz, seed).probs;
    let mut value = world.objective_flat(&current, cfg.alpha, cfg.lambda, &mut scratch);
    let mut trace = vec![value];
    let mut step = cfg.step_size;
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        let grad = world.gradient_flat(&current, cfg.alpha, cfg.lambda, &mut scratch);
        let mut accepted = None;
        while step > 1e-14 {
            let mut candidate: Vec<f64> = current
                .iter()
                .zip(&grad)
                .map(|(c, g)| c - step * g)
                .collect();
            for row in candidate.chunks_mut(nz) {
                project_in_place(row);
            }
            let v = world.objective_flat(&candidate, cfg.alpha, cfg.lambda, &mut scratch);
            if v <= value {
                accepted = Some((candidate, v));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, v)) = accepted else {
            // no descent direction left at machine precision
            converged = true;
            break;
        };
        let improvement = value - v;
        current = candidate;
        value = v;
        trace.push(v);
        step = (step * 2.0).min(1e6);
        if improvement < cfg.tolerance {
            converged = true;
            break;
        }
    }

    Ok(OptimizeResult {
        channel: ReleaseChannel::from_flat(nw, nz, current),
        objective: value,
        trace,
        converged,
    })
}

/// Outcome of [`grid_oracle`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub channel: ReleaseChannel,
    pub objective: f64,
    pub candidates: usize,
}

/// All points `(i_1, …, i_{k−1}) / (resolution − 1)` of the simplex of
/// dimension `k − 1`, lexicographic.
fn simplex_grid(outputs: usize, resolution: usize) -> Vec<Vec<f64>> {
    let steps = resolution - 1;
    let mut out = Vec::new();
    let mut idx = vec![0usize; outputs - 1];
    loop {
        let used: usize = idx.iter().sum();
        if used <= steps {
            let mut row: Vec<f64> = idx.iter().map(|&i| i as f64 / steps as f64).collect();
            row.push((steps - used) as f64 / steps as f64);
            out.push(row);
        }
        // odometer increment, last coordinate fastest
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] <= steps {
                break;
            }
            idx[pos] = 0;
        }
        if idx.is_empty() {
            return out;
        }
    }
}

/// Exhaustive search over a uniform channel grid with `resolution` points
/// per free parameter. Ties go to the lexicographically first channel.
pub fn grid_oracle(
    world: &WorldModel,
    cfg: &ChannelOptConfig,
    resolution: usize,
) -> Result<GridResult> {
    cfg.validate()?;
    let free = world.free_parameters();
    if free > MAX_GRID_PARAMS {
        return Err(Error::Config(format!(
            "grid oracle supports at most {MAX_GRID_PARAMS} free parameters, instance has {free}"
        )));
    }
    if resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let (nw, nz) = (world.nw, world.nz);
    let row_grid = if nz == 1 {
        vec![vec![1.0]]
    } else {
        simplex_grid(nz, resolution)
    };
    let per_row = row_grid.len();
    let total = per_row.pow(nw as u32);

    let (best_index, best_value) = (0..per_row)
        .into_par_iter()
        .map(|lead| {
            let mut scratch = Vec::new();
            let mut flat = vec![0.0; nw * nz];
            let inner = total / per_row;
            let mut best = (usize::MAX, f64::INFINITY);
            for rest in 0..inner {
                let index = lead * inner + rest;
                let mut rem = index;
                for w in (0..nw).rev() {
                    let r = rem % per_row;
                    rem /= per_row;
                    flat[w * nz..(w + 1) * nz].copy_from_slice(&row_grid[r]);
                }
                let v = world.objective_flat(&flat, cfg.alpha, cfg.lambda, &mut scratch);
                if v < best.1 {
                    best = (index, v);
                }
            }
            best
        })
        .reduce(
            || (usize::MAX, f64::INFINITY),
            |a, b| {
                if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                    b
                } else {
                    a
                }
            },
        );

    let mut flat = vec![0.0; nw * nz];
    let mut rem = best_index;
    for w in (0..nw).rev() {
        let r = rem % per_row;
        rem /= per_row;
        flat[w * nz..(w + 1) * nz].copy_from_slice(&row_grid[r]);
    }
    Ok(GridResult {
        channel: ReleaseChannel::from_flat(nw, nz, flat),
        objective: best_value,
        candidates: total,
    })
}

/// Binary world with `W = X = Y`, prior `p(X = 0) = p0`, Hamming distortion
/// and a binary release alphabet.
pub fn binary_copy_world(p0: f64) -> Result<WorldModel> {
    let mut probs = vec![0.0; 8];
    probs[0] = p0; // x=0, w=0, y=0
    probs[7] = 1.0 - p0; // x=1, w=1, y=1
    let joint = JointPmf::new(
        vec![2, 2, 2],
        vec!["X".into(), "W".into(), "Y".into()],
        probs,
    )?;
    WorldModel::new(joint, vec![vec![0.0, 1.0], vec![1.0, 0.0]])
}
