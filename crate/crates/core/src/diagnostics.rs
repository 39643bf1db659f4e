//! Smoothness and variance estimators, step-size admissibility checks, theoretical
//! bounds, the inner-product direction diagnostic and the auxiliary-sequence
//! identity of server momentum.
//!
//! Bound formulas use these symbols: `L` gradient Lipschitz constant, `σ²`
//! per-sample gradient variance bound, `K` clients, `M` active clients per
//! round, `H` local steps, `η` server rate, `β` server momentum, `T` rounds,
//! `f_gap = f(w_0) − f_inf`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Model, Sample};
use crate::params::ParamVector;

/// Metrics for one communication round, measured at the round's start
/// iterate `w_t` except for `z_residual`, which checks the update itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    /// `f(w_t)`.
    pub loss: f64,
    /// `‖∇f(w_t)‖²`.
    pub grad_norm_sq: f64,
    /// `‖g_t‖` with `g_t = Σ_k (n_k/n)(w_t − w_{t+1}^k)`.
    pub g_norm: f64,
    /// `⟨g_t, w_t − w*⟩` when a reference point is set.
    pub inner_product: Option<f64>,
    pub gamma: f64,
    pub local_iters: usize,
    pub active: Vec<usize>,
    /// `Γ_t = Σ_{s≤t} γ_s`.
    pub cumulative_gamma: f64,
    /// Momentum auxiliary-sequence residual (FedMom only).
    pub z_residual: Option<f64>,
}

/// `⟨g_t, w_t − w*⟩`; positive when `g_t` points from `w*` towards `w_t`,
/// i.e. a step `−g_t` heads towards the reference solution.
pub fn inner_product_diag(
    g_t: &ParamVector,
    w_t: &ParamVector,
    w_star: &ParamVector,
) -> Result<f64> {
    g_t.dot(&w_t.sub(w_star)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMean {
    pub start: usize,
    pub len: usize,
    pub mean: f64,
    /// Trailing window shorter than requested.
    pub partial: bool,
}

/// Means of consecutive non-overlapping windows; a trailing partial window
/// is kept and flagged.
pub fn windowed_mean(values: &[f64], window: usize) -> Result<Vec<WindowMean>> {
    if window == 0 {
        return Err(Error::invalid("window must be >= 1"));
    }
    Ok(values
        .chunks(window)
        .enumerate()
        .map(|(i, c)| WindowMean {
            start: i * window,
            len: c.len(),
            mean: c.iter().sum::<f64>() / c.len() as f64,
            partial: c.len() < window,
        })
        .collect())
}

/// Monte Carlo estimate of `E‖∇f_k(w, ξ) − ∇f_k(w)‖²` with single-sample
/// draws `ξ` uniform over the shard. The full-shard gradient is exact, so
/// the plain mean of squared deviations is unbiased.
pub fn variance_estimate<R: Rng + ?Sized>(
    model: &Model,
    w: &ParamVector,
    shard: &[Sample],
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if draws < 2 {
        return Err(Error::invalid(format!(
            "variance estimate needs >= 2 draws, got {draws}"
        )));
    }
    if shard.is_empty() {
        return Err(Error::Empty("client shard"));
    }
    let full = model.gradient(w, shard)?;
    let mut total = 0.0;
    for _ in 0..draws {
        let s = &shard[rng.random_range(0..shard.len())];
        total += model.sample_gradient(w, s)?.sub(&full)?.norm_sq();
    }
    Ok(total / draws as f64)
}

/// Result of a step-size admissibility check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCheck {
    pub passes: bool,
    /// Binding (smallest) threshold.
    pub threshold: f64,
    /// `threshold − γ`; nonnegative iff the check passes.
    pub margin: f64,
}

impl StepCheck {
    fn new(gamma: f64, threshold: f64) -> Self {
        Self {
            passes: gamma <= threshold,
            threshold,
            margin: threshold - gamma,
        }
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!(
            "{name} must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

fn require_nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::invalid(format!(
            "{name} must be nonnegative and finite, got {v}"
        )));
    }
    Ok(())
}

/// FedAvg condition `γ ≤ min{1/(2LH), 1/(4ηLH)}`, inclusive.
pub fn stepsize_check_fedavg(gamma: f64, l: f64, h: usize, eta: f64) -> Result<StepCheck> {
    require_positive("L", l)?;
    if h == 0 {
        return Err(Error::invalid("H must be >= 1"));
    }
    if !(eta >= 1.0) {
        return Err(Error::invalid(format!("eta must be >= 1, got {eta}")));
    }
    let lh = l * h as f64;
    let threshold = (1.0 / (2.0 * lh)).min(1.0 / (4.0 * eta * lh));
    Ok(StepCheck::new(gamma, threshold))
}

/// Problem constants shared by the bound evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub l: f64,
    pub sigma_sq: f64,
    pub clients: usize,
    pub active: usize,
    pub local_iters: usize,
    pub eta: f64,
    pub rounds: usize,
    pub f_gap: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        require_positive("L", self.l)?;
        require_nonnegative("sigma_sq", self.sigma_sq)?;
        require_nonnegative("f_gap", self.f_gap)?;
        if self.clients == 0 || self.active == 0 || self.local_iters == 0 || self.rounds == 0 {
            return Err(Error::invalid("K, M, H and T must all be >= 1"));
        }
        require_positive("eta", self.eta)
    }
}

/// Constant `C` of the momentum convergence bound:
/// `MLησ²/(4K(1−β)) + MLη²σ²/(2K(1−β)²) + β⁴M²Lη³σ²/(2K²(1−β)⁵)`.
pub fn momentum_constant(inp: &BoundInputs, beta: f64) -> Result<f64> {
    inp.validate()?;
    check_beta(beta)?;
    let (m, k) = (inp.active as f64, inp.clients as f64);
    let (l, eta, s2) = (inp.l, inp.eta, inp.sigma_sq);
    let ob = 1.0 - beta;
    Ok(m * l * eta * s2 / (4.0 * k * ob)
        + m * l * eta * eta * s2 / (2.0 * k * ob * ob)
        + beta.powi(4) * m * m * l * eta.powi(3) * s2 / (2.0 * k * k * ob.powi(5)))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid(format!(
            "beta must lie in [0, 1), got {beta}"
        )));
    }
    Ok(())
}

/// FedMom step-size thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumStepCheck {
    pub passes: bool,
    pub c: f64,
    /// `√(f_gap/(THC))`; infinite when `C = 0`.
    pub rate_threshold: f64,
    /// `(1−β)/(4ηHL)`.
    pub smoothness_threshold: f64,
    /// `(1−β)²/(ηβ²HL)·√(K/(8M))`; infinite when `β = 0`.
    pub momentum_threshold: f64,
    pub margins: [f64; 3],
}

pub fn stepsize_check_fedmom(
    gamma: f64,
    inp: &BoundInputs,
    beta: f64,
) -> Result<MomentumStepCheck> {
    let c = momentum_constant(inp, beta)?;
    let (h, l, eta) = (inp.local_iters as f64, inp.l, inp.eta);
    let ob = 1.0 - beta;
    let rate_threshold = if c > 0.0 {
        (inp.f_gap / (inp.rounds as f64 * h * c)).sqrt()
    } else {
        f64::INFINITY
    };
    let smoothness_threshold = ob / (4.0 * eta * h * l);
    let momentum_threshold = if beta > 0.0 {
        ob * ob / (eta * beta * beta * h * l)
            * (inp.clients as f64 / (8.0 * inp.active as f64)).sqrt()
    } else {
        f64::INFINITY
    };
    let thresholds = [rate_threshold, smoothness_threshold, momentum_threshold];
    let margins = thresholds.map(|t| t - gamma);
    Ok(MomentumStepCheck {
        passes: margins.iter().all(|m| *m >= 0.0),
        c,
        rate_threshold,
        smoothness_threshold,
        momentum_threshold,
        margins,
    })
}

/// Constant-step FedAvg rate with `η = 1`:
/// `8LK·f_gap/(MT) + √(12KLσ²·f_gap/(MTH))`.
pub fn corollary2_bound(
    l: f64,
    k: usize,
    m: usize,
    t: usize,
    h: usize,
    f_gap: f64,
    sigma_sq: f64,
) -> Result<f64> {
    let inp = BoundInputs {
        l,
        sigma_sq,
        clients: k,
        active: m,
        local_iters: h,
        eta: 1.0,
        rounds: t,
        f_gap,
    };
    inp.validate()?;
    let (k, m, t, h) = (k as f64, m as f64, t as f64, h as f64);
    Ok(8.0 * l * k * f_gap / (m * t) + (12.0 * k * l * sigma_sq * f_gap / (m * t * h)).sqrt())
}

/// Step size prescribed alongside [`corollary2_bound`]:
/// `min{√(4K·f_gap/(3MTHLσ²)), 1/(4LH)}`. Reported, not enforced.
pub fn corollary2_stepsize(
    l: f64,
    k: usize,
    m: usize,
    t: usize,
    h: usize,
    f_gap: f64,
    sigma_sq: f64,
) -> Result<f64> {
    require_positive("L", l)?;
    let smooth = 1.0 / (4.0 * l * h as f64);
    if sigma_sq == 0.0 {
        return Ok(smooth);
    }
    let rate =
        (4.0 * k as f64 * f_gap / (3.0 * m as f64 * t as f64 * h as f64 * l * sigma_sq)).sqrt();
    Ok(rate.min(smooth))
}

/// General-η FedAvg bound for a constant step `γ`:
/// `2K·f_gap/(ηMHΓ_T) + Lσ²(2η+1)/2 · Σγ²/Γ_T` with `Γ_T = Tγ`.
pub fn fedavg_bound(inp: &BoundInputs, gamma: f64) -> Result<f64> {
    inp.validate()?;
    require_positive("gamma", gamma)?;
    let (k, m, h, t) = (
        inp.clients as f64,
        inp.active as f64,
        inp.local_iters as f64,
        inp.rounds as f64,
    );
    let big_gamma = t * gamma;
    let sum_sq = t * gamma * gamma;
    Ok(2.0 * k * inp.f_gap / (inp.eta * m * h * big_gamma)
        + inp.l * inp.sigma_sq * (2.0 * inp.eta + 1.0) / 2.0 * sum_sq / big_gamma)
}

/// FedMom bound:
/// `16KηL·f_gap/(TM) + 4ηLβ²·f_gap·√(8K)/((1−β)√M) + 8K(1−β)/M · √(f_gap·C/(TH))`.
pub fn fedmom_bound(inp: &BoundInputs, beta: f64) -> Result<f64> {
    let c = momentum_constant(inp, beta)?;
    let (k, m, h, t) = (
        inp.clients as f64,
        inp.active as f64,
        inp.local_iters as f64,
        inp.rounds as f64,
    );
    let (l, eta, fg) = (inp.l, inp.eta, inp.f_gap);
    Ok(16.0 * k * eta * l * fg / (t * m)
        + 4.0 * eta * l * beta * beta * fg * (8.0 * k).sqrt() / ((1.0 - beta) * m.sqrt())
        + 8.0 * k * (1.0 - beta) / m * (fg * c / (t * h)).sqrt())
}

/// Which algorithm a [`TheoreticalBound`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    FedAvg,
    FedMom,
}

/// A bound evaluated from measured or supplied constants.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoreticalBound {
    pub kind: BoundKind,
    pub inputs: BoundInputs,
    pub beta: Option<f64>,
    pub c: Option<f64>,
    pub value: f64,
}

impl TheoreticalBound {
    pub fn fedavg(inputs: BoundInputs, gamma: f64) -> Result<Self> {
        Ok(Self {
            kind: BoundKind::FedAvg,
            value: fedavg_bound(&inputs, gamma)?,
            inputs,
            beta: None,
            c: None,
        })
    }

    pub fn fedmom(inputs: BoundInputs, beta: f64) -> Result<Self> {
        Ok(Self {
            kind: BoundKind::FedMom,
            value: fedmom_bound(&inputs, beta)?,
            c: Some(momentum_constant(&inputs, beta)?),
            inputs,
            beta: Some(beta),
        })
    }
}

/// `z_t = w_t + β/(1−β)·(w_t − w_{t−1} + G_{t−1})`, where `G` is the applied
/// server update `η·g`.
pub fn auxiliary_point(
    w: &ParamVector,
    w_prev: &ParamVector,
    applied_prev: &ParamVector,
    beta: f64,
) -> Result<ParamVector> {
    check_beta(beta)?;
    let p = w.sub(w_prev)?.add(applied_prev)?.scale(beta / (1.0 - beta));
    w.add(&p)
}

/// Tracks consecutive FedMom rounds and checks `z_{t+1} = z_t − G_t/(1−β)`.
///
/// Starts from the convention `w_{−1} = w_0`, `G_{−1} = 0`, so `z_0 = w_0`.
#[derive(Debug, Clone)]
pub struct MomentumZTracker {
    beta: f64,
    history: Option<(ParamVector, ParamVector)>,
}

impl MomentumZTracker {
    pub fn new(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            beta,
            history: None,
        })
    }

    /// Seeds the history with `w_{−1} = w_0` and `G_{−1} = 0`.
    pub fn start(&mut self, w0: &ParamVector) {
        self.history = Some((w0.clone(), ParamVector::zeros(w0.dim())));
    }

    /// Residual `‖z_{t+1} − (z_t − G_t/(1−β))‖ / max(1, ‖z_t‖)` for the round
    /// taking `w_t` to `w_next` with applied update `G_t`; advances history.
    pub fn observe(
        &mut self,
        w_t: &ParamVector,
        applied: &ParamVector,
        w_next: &ParamVector,
    ) -> Result<f64> {
        let (w_prev, applied_prev) = self
            .history
            .as_ref()
            .ok_or(Error::MissingHistory("momentum tracker was not started"))?;
        let residual = momentum_z_residual(w_prev, w_t, w_next, applied_prev, applied, self.beta)?;
        self.history = Some((w_t.clone(), applied.clone()));
        Ok(residual)
    }
}

/// Residual of the auxiliary-sequence identity over one round given
/// `w_{t−1}, w_t, w_{t+1}` and applied updates `G_{t−1}, G_t`.
pub fn momentum_z_residual(
    w_prev: &ParamVector,
    w_t: &ParamVector,
    w_next: &ParamVector,
    applied_prev: &ParamVector,
    applied: &ParamVector,
    beta: f64,
) -> Result<f64> {
    let z_t = auxiliary_point(w_t, w_prev, applied_prev, beta)?;
    let z_next = auxiliary_point(w_next, w_t, applied, beta)?;
    let predicted = crate::params::axpy(-1.0 / (1.0 - beta), applied, &z_t)?;
    Ok(z_next.sub(&predicted)?.norm() / z_t.norm().max(1.0))
}

/// Running minimum of a sequence.
pub fn running_min(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(f64::INFINITY, |m, &v| {
            *m = m.min(v);
            Some(*m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Curvature;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec())
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(
            inner_product_diag(&pv(&[0.5, 0.5]), &pv(&[1.0, 1.0]), &pv(&[0.0, 0.0])).unwrap(),
            1.0
        );
        assert_eq!(
            inner_product_diag(&pv(&[1.0, -1.0]), &pv(&[1.0, 1.0]), &pv(&[0.0, 0.0])).unwrap(),
            0.0
        );
        assert_eq!(
            inner_product_diag(&pv(&[3.0, 7.0]), &pv(&[2.0, 2.0]), &pv(&[2.0, 2.0])).unwrap(),
            0.0
        );
        assert!(inner_product_diag(&pv(&[1.0]), &pv(&[1.0, 1.0]), &pv(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn windowed_mean_examples() {
        let w = windowed_mean(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(w.iter().map(|m| m.mean).collect::<Vec<_>>(), vec![1.5, 3.5]);
        assert!(w.iter().all(|m| !m.partial));
        let w = windowed_mean(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].mean, 2.5);
        let v: Vec<f64> = (0..250).map(|i| i as f64).collect();
        let w = windowed_mean(&v, 100).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(
            w.iter().map(|m| m.partial).collect::<Vec<_>>(),
            vec![false, false, true]
        );
        assert_eq!(w[2].len, 50);
        assert!(windowed_mean(&v, 0).is_err());
        let c = windowed_mean(&[0.25; 37], 5).unwrap();
        assert!(c.iter().all(|m| m.mean == 0.25));
    }

    fn scalar_shift_model() -> (Model, Vec<Sample>) {
        // per-sample loss ½(w − a)², a = ±1
        let m = Model::least_squares(1);
        (
            m,
            vec![Sample::new(vec![1.0], -1.0), Sample::new(vec![1.0], 1.0)],
        )
    }

    #[test]
    fn variance_of_identical_samples_is_zero() {
        let m = Model::logistic(2);
        let shard = vec![Sample::new(vec![1.0, 2.0], 1.0); 5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = variance_estimate(&m, &pv(&[0.3, -0.1]), &shard, 50, &mut rng).unwrap();
        assert!(v.abs() < 1e-30);
    }

    #[test]
    fn variance_of_plus_minus_one() {
        let (m, shard) = scalar_shift_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = variance_estimate(&m, &pv(&[0.0]), &shard, 10_000, &mut rng).unwrap();
        // every draw deviates by exactly 1 from the zero mean gradient
        assert!((v - 1.0).abs() < 1e-12);
        assert!(variance_estimate(&m, &pv(&[0.0]), &shard, 1, &mut rng).is_err());
    }

    #[test]
    fn fedavg_step_check_examples() {
        let c = stepsize_check_fedavg(0.01, 4.0, 5, 1.0).unwrap();
        assert!(c.passes);
        assert!((c.threshold - 0.0125).abs() < 1e-15);
        let c = stepsize_check_fedavg(0.0125, 4.0, 5, 1.0).unwrap();
        assert!(c.passes && c.margin == 0.0);
        assert!(!stepsize_check_fedavg(0.0126, 4.0, 5, 1.0).unwrap().passes);
        for &(l, h) in &[(0.3, 1usize), (2.0, 7), (11.0, 3)] {
            let c = stepsize_check_fedavg(0.0, l, h, 1.0).unwrap();
            assert_eq!(c.threshold, 1.0 / (4.0 * l * h as f64));
        }
        assert!(stepsize_check_fedavg(0.1, 0.0, 1, 1.0).is_err());
        assert!(stepsize_check_fedavg(0.1, -1.0, 1, 1.0).is_err());
    }

    fn inputs() -> BoundInputs {
        BoundInputs {
            l: 2.0,
            sigma_sq: 0.7,
            clients: 100,
            active: 2,
            local_iters: 5,
            eta: 50.0,
            rounds: 1000,
            f_gap: 1.3,
        }
    }

    #[test]
    fn momentum_check_with_zero_beta() {
        let inp = inputs();
        let chk = stepsize_check_fedmom(1e-4, &inp, 0.0).unwrap();
        let (m, l, eta, k, s2) = (2.0, 2.0, 50.0, 100.0, 0.7);
        let c = m * l * eta / (4.0 * k) * s2 + m * l * eta * eta / (2.0 * k) * s2;
        assert!((chk.c - c).abs() <= 1e-12 * c);
        assert!(chk.momentum_threshold.is_infinite());
    }

    #[test]
    fn momentum_check_defaults_and_t_scaling() {
        let inp = inputs();
        let a = stepsize_check_fedmom(1e-4, &inp, 0.9).unwrap();
        assert!(a.c > 0.0 && a.rate_threshold.is_finite() && a.momentum_threshold.is_finite());
        let inp2 = BoundInputs {
            rounds: 2000,
            ..inp
        };
        let b = stepsize_check_fedmom(1e-4, &inp2, 0.9).unwrap();
        assert!((a.rate_threshold / b.rate_threshold - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(a.smoothness_threshold, b.smoothness_threshold);
        assert_eq!(a.momentum_threshold, b.momentum_threshold);
        assert!(stepsize_check_fedmom(1e-4, &inp, 1.0).is_err());
    }

    #[test]
    fn tuned_bound_examples() {
        let v = corollary2_bound(1.0, 10, 2, 1000, 5, 1.0, 0.5).unwrap();
        assert!((v - (0.04 + 0.006f64.sqrt())).abs() < 1e-15);
        assert!((v - 0.117_459_666_924_148_3).abs() < 1e-12);
        let noiseless = corollary2_bound(3.0, 10, 2, 100, 5, 2.0, 0.0).unwrap();
        assert!((noiseless - 8.0 * 3.0 * 10.0 * 2.0 / 200.0).abs() < 1e-14);
        // σ² = 0 isolates the first term; f_gap = 0 is degenerate, so compare terms separately
        let first = |t| corollary2_bound(1.0, 10, 2, t, 5, 1.0, 0.0).unwrap();
        assert!((first(1000) / first(4000) - 4.0).abs() < 1e-12);
        let total = |t| corollary2_bound(1.0, 10, 2, t, 5, 1.0, 0.5).unwrap();
        let second = |t| total(t) - first(t);
        assert!((second(1000) / second(4000) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn tuned_bound_monotonicity() {
        let base = corollary2_bound(1.0, 10, 2, 1000, 5, 1.0, 0.5).unwrap();
        assert!(corollary2_bound(1.0, 10, 2, 2000, 5, 1.0, 0.5).unwrap() < base);
        assert!(corollary2_bound(1.0, 10, 2, 1000, 10, 1.0, 0.5).unwrap() < base);
        assert!(corollary2_bound(2.0, 10, 2, 1000, 5, 1.0, 0.5).unwrap() > base);
        assert!(corollary2_bound(1.0, 20, 2, 1000, 5, 1.0, 0.5).unwrap() > base);
        assert!(corollary2_bound(1.0, 10, 2, 1000, 5, 2.0, 0.5).unwrap() > base);
        assert!(corollary2_bound(1.0, 10, 2, 1000, 5, 1.0, 1.0).unwrap() > base);
    }

    #[test]
    fn fedavg_bound_reduces_to_tuned_form_at_its_step() {
        // η = 1, γ = 1/(4LH) in the σ² = 0 case: 2K f_gap/(MHTγ) = 8LK f_gap/(MT)
        let inp = BoundInputs {
            eta: 1.0,
            sigma_sq: 0.0,
            ..inputs()
        };
        let gamma = 1.0 / (4.0 * inp.l * inp.local_iters as f64);
        let a = fedavg_bound(&inp, gamma).unwrap();
        let b = corollary2_bound(
            inp.l,
            inp.clients,
            inp.active,
            inp.rounds,
            inp.local_iters,
            inp.f_gap,
            0.0,
        )
        .unwrap();
        assert!((a - b).abs() <= 1e-12 * b);
    }

    #[test]
    fn theoretical_bound_values() {
        let b = TheoreticalBound::fedmom(inputs(), 0.9).unwrap();
        assert!(b.value.is_finite() && b.value > 0.0);
        assert!(b.c.unwrap() > 0.0);
        let b = TheoreticalBound::fedavg(inputs(), 1e-3).unwrap();
        assert!(b.value.is_finite() && b.value > 0.0);
    }

    #[test]
    fn z_start_convention() {
        let w0 = pv(&[1.5, -2.0]);
        let z0 = auxiliary_point(&w0, &w0, &ParamVector::zeros(2), 0.9).unwrap();
        assert_eq!(z0, w0);
        let mut tr = MomentumZTracker::new(0.9).unwrap();
        assert!(matches!(
            tr.observe(&w0, &ParamVector::zeros(2), &w0),
            Err(Error::MissingHistory(_))
        ));
    }

    #[test]
    fn z_identity_scalar_hand_expansion() {
        // β = 0.5, w_0 = v_0 = 1, G_0 = 0.25, G_1 = −0.5
        // v_1 = 0.75, w_1 = 0.75 + 0.5(0.75 − 1) = 0.625
        // v_2 = 0.625 + 0.5 = 1.125, w_2 = 1.125 + 0.5(1.125 − 0.75) = 1.3125
        // z_0 = 1; z_1 = 0.625 + (0.625 − 1 + 0.25) = 0.5 = z_0 − 2·0.25
        // z_2 = 1.3125 + (1.3125 − 0.625 − 0.5) = 1.5 = z_1 − 2·(−0.5)
        let beta = 0.5;
        let (w0, w1, w2) = (pv(&[1.0]), pv(&[0.625]), pv(&[1.3125]));
        let (g0, g1) = (pv(&[0.25]), pv(&[-0.5]));
        assert_eq!(auxiliary_point(&w1, &w0, &g0, beta).unwrap(), pv(&[0.5]));
        assert_eq!(auxiliary_point(&w2, &w1, &g1, beta).unwrap(), pv(&[1.5]));
        let mut tr = MomentumZTracker::new(beta).unwrap();
        tr.start(&w0);
        assert_eq!(tr.observe(&w0, &g0, &w1).unwrap(), 0.0);
        assert_eq!(tr.observe(&w1, &g1, &w2).unwrap(), 0.0);
        // a wrong trajectory is caught
        assert!(tr.observe(&w2, &g0, &pv(&[0.0])).unwrap() > 0.1);
    }

    #[test]
    fn z_with_zero_beta_is_w() {
        let w = pv(&[3.0, 1.0]);
        let z = auxiliary_point(&w, &pv(&[9.0, 9.0]), &pv(&[4.0, 4.0]), 0.0).unwrap();
        assert_eq!(z, w);
    }

    #[test]
    fn running_min_is_nonincreasing() {
        let r = running_min(&[3.0, 4.0, 1.0, 2.0, 0.5]);
        assert_eq!(r, vec![3.0, 3.0, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn quadratic_variance_closed_form_matches_sampling() {
        let m = Model::quadratic(Curvature::Diagonal(vec![0.5]), vec![0.0]).unwrap();
        let shard = vec![Sample::new(vec![0.0], 0.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // a data-free model has no sampling noise
        assert_eq!(
            variance_estimate(&m, &pv(&[2.0]), &shard, 3, &mut rng).unwrap(),
            0.0
        );
    }
}
