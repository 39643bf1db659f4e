//! Differentiable objective families with hand-derived gradients.
//!
//! * `quadratic`: per-sample loss `½(w−c)ᵀA(w−c) + ½(xᵀw − y)²`. With zero
//!   features it is the data-free quadratic `½(w−c)ᵀA(w−c)`; with `A = 0` it
//!   is plain least squares.
//! * `logistic`: binary logistic regression, loss `ln(1 + exp(−y·wᵀx))` with
//!   `y = sign(target)`.
//! * `mlp1`: one hidden tanh layer, scalar output, squared loss
//!   `½(out − y)²`. Parameters are laid out as `[W1 (h×p, row-major), b1, w2, b2]`.
//!
//! All three are bounded below, so `f_inf` is always available.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::FederatedDataset;
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// One training example ξ.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: f64,
}

impl Sample {
    pub fn new(features: Vec<f64>, target: f64) -> Self {
        Self { features, target }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Quadratic,
    Logistic,
    Mlp1,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Quadratic => "quadratic",
            ModelKind::Logistic => "logistic",
            ModelKind::Mlp1 => "mlp1",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ModelKind::Quadratic),
            "logistic" => Ok(ModelKind::Logistic),
            "mlp1" => Ok(ModelKind::Mlp1),
            other => Err(Error::invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Curvature matrix `A` of the quadratic family. Must be symmetric PSD.
#[derive(Debug, Clone, PartialEq)]
pub enum Curvature {
    Diagonal(Vec<f64>),
    /// Row-major `d×d`.
    Dense(Vec<f64>),
}

impl Curvature {
    fn dim(&self) -> usize {
        match self {
            Curvature::Diagonal(d) => d.len(),
            Curvature::Dense(m) => (m.len() as f64).sqrt().round() as usize,
        }
    }

    /// `A·x`.
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Curvature::Diagonal(d) => d.iter().zip(x).map(|(a, b)| a * b).collect(),
            Curvature::Dense(m) => {
                let n = x.len();
                (0..n)
                    .map(|i| {
                        m[i * n..(i + 1) * n]
                            .iter()
                            .zip(x)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect()
            }
        }
    }

    fn add_to(&self, out: &mut [f64], n: usize) {
        match self {
            Curvature::Diagonal(d) => {
                for (i, a) in d.iter().enumerate() {
                    out[i * n + i] += a;
                }
            }
            Curvature::Dense(m) => {
                for (o, a) in out.iter_mut().zip(m) {
                    *o += a;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    curvature: Curvature,
    center: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp1 {
    pub input_dim: usize,
    pub hidden: usize,
}

impl Mlp1 {
    pub fn param_dim(&self) -> usize {
        self.hidden * self.input_dim + 2 * self.hidden + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Quadratic(Quadratic),
    Logistic { dim: usize },
    Mlp1(Mlp1),
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn label_sign(target: f64) -> f64 {
    if target > 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model {
    /// Quadratic `½(w−c)ᵀA(w−c)` plus the least-squares data term.
    pub fn quadratic(curvature: Curvature, center: Vec<f64>) -> Result<Self> {
        let d = curvature.dim();
        if center.len() != d {
            return Err(Error::DimensionMismatch {
                left: d,
                right: center.len(),
            });
        }
        match &curvature {
            Curvature::Diagonal(diag) => {
                if diag.iter().any(|a| !(*a >= 0.0)) {
                    return Err(Error::invalid("diagonal curvature must be nonnegative"));
                }
            }
            Curvature::Dense(m) => {
                if d * d != m.len() {
                    return Err(Error::invalid("dense curvature must be square"));
                }
                for i in 0..d {
                    for j in 0..i {
                        if (m[i * d + j] - m[j * d + i]).abs() > 1e-12 * m[i * d + j].abs().max(1.0)
                        {
                            return Err(Error::invalid("dense curvature must be symmetric"));
                        }
                    }
                }
            }
        }
        Ok(Model::Quadratic(Quadratic { curvature, center }))
    }

    /// Plain least squares `½(xᵀw − y)²` over `dim` features.
    pub fn least_squares(dim: usize) -> Self {
        Model::Quadratic(Quadratic {
            curvature: Curvature::Diagonal(vec![0.0; dim]),
            center: vec![0.0; dim],
        })
    }

    pub fn logistic(dim: usize) -> Self {
        Model::Logistic { dim }
    }

    pub fn mlp1(input_dim: usize, hidden: usize) -> Self {
        Model::Mlp1(Mlp1 { input_dim, hidden })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Quadratic(_) => ModelKind::Quadratic,
            Model::Logistic { .. } => ModelKind::Logistic,
            Model::Mlp1(_) => ModelKind::Mlp1,
        }
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Model::Quadratic(q) => q.center.len(),
            Model::Logistic { dim } => *dim,
            Model::Mlp1(m) => m.param_dim(),
        }
    }

    /// Feature dimension each sample must carry.
    pub fn input_dim(&self) -> usize {
        match self {
            Model::Quadratic(q) => q.center.len(),
            Model::Logistic { dim } => *dim,
            Model::Mlp1(m) => m.input_dim,
        }
    }

    /// Starting point `w_0`: zeros for the convex families, uniform
    /// `±1/√fan_in` for the MLP.
    pub fn initial_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        match self {
            Model::Mlp1(m) => {
                let (p, h) = (m.input_dim, m.hidden);
                let a1 = 1.0 / (p as f64).sqrt();
                let a2 = 1.0 / (h as f64).sqrt();
                let mut w = Vec::with_capacity(m.param_dim());
                for _ in 0..h * p + h {
                    w.push(rng.random_range(-a1..=a1));
                }
                for _ in 0..h + 1 {
                    w.push(rng.random_range(-a2..=a2));
                }
                ParamVector::new(w)
            }
            _ => ParamVector::zeros(self.dim()),
        }
    }

    fn check(&self, w: &ParamVector, s: &Sample) -> Result<()> {
        if w.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: w.dim(),
                right: self.dim(),
            });
        }
        if s.features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                left: s.features.len(),
                right: self.input_dim(),
            });
        }
        Ok(())
    }

    /// Data-dependent per-sample loss (excludes the quadratic curvature term).
    fn sample_loss(&self, w: &[f64], s: &Sample) -> f64 {
        match self {
            Model::Quadratic(_) => {
                let r = dot(w, &s.features) - s.target;
                0.5 * r * r
            }
            Model::Logistic { .. } => softplus(-label_sign(s.target) * dot(w, &s.features)),
            Model::Mlp1(m) => {
                let r = mlp_forward(m, w, &s.features).0 - s.target;
                0.5 * r * r
            }
        }
    }

    /// Adds the data-dependent per-sample gradient into `out`.
    fn add_sample_grad(&self, w: &[f64], s: &Sample, out: &mut [f64]) {
        match self {
            Model::Quadratic(_) => {
                let r = dot(w, &s.features) - s.target;
                for (o, x) in out.iter_mut().zip(&s.features) {
                    *o += r * x;
                }
            }
            Model::Logistic { .. } => {
                let y = label_sign(s.target);
                let c = -y * sigmoid(-y * dot(w, &s.features));
                for (o, x) in out.iter_mut().zip(&s.features) {
                    *o += c * x;
                }
            }
            Model::Mlp1(m) => {
                let (p, h) = (m.input_dim, m.hidden);
                let (out_val, hidden) = mlp_forward(m, w, &s.features);
                let r = out_val - s.target;
                let w2 = &w[h * p + h..h * p + 2 * h];
                for j in 0..h {
                    let delta = r * w2[j] * (1.0 - hidden[j] * hidden[j]);
                    let row = &mut out[j * p..(j + 1) * p];
                    for (o, x) in row.iter_mut().zip(&s.features) {
                        *o += delta * x;
                    }
                    out[h * p + j] += delta;
                    out[h * p + h + j] += r * hidden[j];
                }
                out[h * p + 2 * h] += r;
            }
        }
    }

    fn loss_over<'a, I>(&self, w: &ParamVector, batch: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in batch {
            self.check(w, s)?;
            total += self.sample_loss(w.as_slice(), s);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("batch"));
        }
        let mut loss = total / count as f64;
        if let Model::Quadratic(q) = self {
            let diff: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(&q.center)
                .map(|(a, b)| a - b)
                .collect();
            loss += 0.5 * dot(&diff, &q.curvature.apply(&diff));
        }
        Ok(loss)
    }

    fn grad_over<'a, I>(&self, w: &ParamVector, batch: I) -> Result<ParamVector>
    where
        I: IntoIterator<Item = &'a Sample>,
    {
        let mut g = vec![0.0; self.dim()];
        let mut count = 0usize;
        for s in batch {
            self.check(w, s)?;
            self.add_sample_grad(w.as_slice(), s, &mut g);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Empty("batch"));
        }
        let inv = 1.0 / count as f64;
        for v in &mut g {
            *v *= inv;
        }
        if let Model::Quadratic(q) = self {
            let diff: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(&q.center)
                .map(|(a, b)| a - b)
                .collect();
            for (o, a) in g.iter_mut().zip(q.curvature.apply(&diff)) {
                *o += a;
            }
        }
        Ok(ParamVector::new(g))
    }

    /// Mean per-sample loss over `batch`.
    pub fn loss(&self, w: &ParamVector, batch: &[Sample]) -> Result<f64> {
        self.loss_over(w, batch)
    }

    /// Exact mean gradient of the per-sample loss over `batch`.
    pub fn gradient(&self, w: &ParamVector, batch: &[Sample]) -> Result<ParamVector> {
        self.grad_over(w, batch)
    }

    /// Gradient over the samples of `shard` selected by `indices` (repeats allowed).
    pub fn gradient_at(
        &self,
        w: &ParamVector,
        shard: &[Sample],
        indices: &[usize],
    ) -> Result<ParamVector> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= shard.len()) {
            return Err(Error::invalid(format!(
                "sample index {bad} out of range {}",
                shard.len()
            )));
        }
        self.grad_over(w, indices.iter().map(|&i| &shard[i]))
    }

    /// Single-sample gradient `∇f_i(w, ξ)`.
    pub fn sample_gradient(&self, w: &ParamVector, sample: &Sample) -> Result<ParamVector> {
        self.grad_over(w, std::iter::once(sample))
    }

    /// Global objective `f(w) = Σ_k (n_k/n) f_k(w)`.
    pub fn full_loss(&self, w: &ParamVector, dataset: &FederatedDataset) -> Result<f64> {
        let mut total = 0.0;
        for (shard, weight) in dataset.shards().iter().zip(dataset.weights()) {
            total += weight * self.loss(w, shard)?;
        }
        Ok(total)
    }

    /// `∇f(w) = Σ_k (n_k/n) ∇f_k(w)` with each `∇f_k` over the full shard.
    pub fn full_gradient(
        &self,
        w: &ParamVector,
        dataset: &FederatedDataset,
    ) -> Result<ParamVector> {
        let mut acc = ParamVector::zeros(self.dim());
        for (shard, weight) in dataset.shards().iter().zip(dataset.weights()) {
            let g = self.gradient(w, shard)?;
            acc.axpy_in_place(*weight, g.as_slice());
        }
        Ok(acc)
    }

    /// Central-difference gradient of [`Model::loss`].
    pub fn finite_diff_gradient(
        &self,
        w: &ParamVector,
        batch: &[Sample],
        step: f64,
    ) -> Result<ParamVector> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::invalid(format!(
                "finite-difference step must be > 0, got {step}"
            )));
        }
        let mut probe = w.as_slice().to_vec();
        let mut g = Vec::with_capacity(w.dim());
        for i in 0..w.dim() {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = self.loss(&ParamVector::new(probe.clone()), batch)?;
            probe[i] = orig - step;
            let down = self.loss(&ParamVector::new(probe.clone()), batch)?;
            probe[i] = orig;
            g.push((up - down) / (2.0 * step));
        }
        Ok(ParamVector::new(g))
    }

    /// Upper bound on the gradient Lipschitz constant of the pooled objective.
    ///
    /// Quadratic: `λ_max(A + XᵀX/n)`. Logistic: `λ_max(XᵀX)/(4n)`. Both by
    /// power iteration. The MLP has no closed form and is rejected.
    pub fn lipschitz_bound(&self, dataset: &FederatedDataset) -> Result<f64> {
        if let Model::Mlp1(_) = self {
            return Err(Error::UnsupportedModel(
                "mlp1 has no computable global Lipschitz constant; supply a surrogate".into(),
            ));
        }
        let d = self.input_dim();
        let (mut gram, _) = pooled_gram(dataset, d)?;
        match self {
            Model::Quadratic(q) => {
                q.curvature.add_to(&mut gram, d);
                Ok(power_iteration(&gram, d))
            }
            _ => Ok(power_iteration(&gram, d) / 4.0),
        }
    }

    /// A valid lower bound `f_inf` on the global objective: the exact minimum
    /// for the quadratic family, zero for the others.
    pub fn lower_bound(&self, dataset: &FederatedDataset) -> Result<f64> {
        match self {
            Model::Quadratic(q) => {
                let d = q.center.len();
                let (mut gram, n) = pooled_gram(dataset, d)?;
                q.curvature.add_to(&mut gram, d);
                let mut rhs = q.curvature.apply(&q.center);
                for s in dataset.shards().iter().flatten() {
                    for (r, x) in rhs.iter_mut().zip(&s.features) {
                        *r += s.target * x / n as f64;
                    }
                }
                let h = DMatrix::from_row_slice(d, d, &gram);
                let b = DVector::from_vec(rhs);
                let w = h
                    .svd(true, true)
                    .solve(&b, 1e-12)
                    .map_err(|e| Error::invalid(format!("minimizer solve failed: {e}")))?;
                let w = ParamVector::new(w.iter().copied().collect());
                self.full_loss(&w, dataset)
            }
            Model::Logistic { .. } | Model::Mlp1(_) => Ok(0.0),
        }
    }
}

fn mlp_forward(m: &Mlp1, w: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
    let (p, h) = (m.input_dim, m.hidden);
    let b1 = &w[h * p..h * p + h];
    let w2 = &w[h * p + h..h * p + 2 * h];
    let b2 = w[h * p + 2 * h];
    let hidden: Vec<f64> = (0..h)
        .map(|j| (dot(&w[j * p..(j + 1) * p], x) + b1[j]).tanh())
        .collect();
    (dot(w2, &hidden) + b2, hidden)
}

/// Row-major `XᵀX/n` over every sample in the dataset.
fn pooled_gram(dataset: &FederatedDataset, d: usize) -> Result<(Vec<f64>, usize)> {
    let n = dataset.total();
    if n == 0 {
        return Err(Error::Empty("dataset"));
    }
    let mut gram = vec![0.0; d * d];
    for s in dataset.shards().iter().flatten() {
        if s.features.len() != d {
            return Err(Error::DimensionMismatch {
                left: s.features.len(),
                right: d,
            });
        }
        for i in 0..d {
            for j in 0..d {
                gram[i * d + j] += s.features[i] * s.features[j];
            }
        }
    }
    for g in &mut gram {
        *g /= n as f64;
    }
    Ok((gram, n))
}

/// Largest eigenvalue of a symmetric PSD matrix, iterated until the
/// eigen-residual `‖Mv − λv‖` drops below `1e-10·max(λ, 1)`.
pub(crate) fn power_iteration(m: &[f64], n: usize) -> f64 {
    let mut v: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64)
        .collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mul = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect() };
    let mut lambda = 0.0;
    for _ in 0..1_000_000 {
        let mv = mul(&v);
        lambda = dot(&v, &mv);
        let resid = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid <= 1e-10 * lambda.max(1.0) {
            break;
        }
        let norm = dot(&mv, &mv).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = mv.into_iter().map(|x| x / norm).collect();
    }
    lambda
}
