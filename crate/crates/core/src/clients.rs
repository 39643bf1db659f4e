//! Client-side local solver: `H_t` steps of mini-batch SGD from the
//! broadcast model.

use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{Model, Sample};
use crate::params::ParamVector;

/// Mini-batch selection per local step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    /// `B` indices drawn uniformly with replacement from the shard.
    Sampled(usize),
    /// The entire shard, no sampling.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalRunConfig {
    pub gamma: f64,
    pub iterations: usize,
    pub batch: BatchSize,
}

impl LocalRunConfig {
    pub fn new(gamma: f64, iterations: usize, batch: BatchSize) -> Result<Self> {
        let cfg = Self {
            gamma,
            iterations,
            batch,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!(
                "step size must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("local iterations H must be >= 1"));
        }
        if self.batch == BatchSize::Sampled(0) {
            return Err(Error::invalid("batch size B must be >= 1"));
        }
        Ok(())
    }
}

/// One recorded local step: the iterate it started from and the batch used.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalStep {
    pub start: ParamVector,
    pub batch: Vec<usize>,
}

fn run<R, F>(
    w_t: &ParamVector,
    model: &Model,
    shard: &[Sample],
    cfg: &LocalRunConfig,
    rng: &mut R,
    mut on_step: F,
) -> Result<ParamVector>
where
    R: Rng + ?Sized,
    F: FnMut(&ParamVector, &[usize]),
{
    cfg.validate()?;
    if shard.is_empty() {
        return Err(Error::Empty("client shard"));
    }
    let full: Vec<usize> = (0..shard.len()).collect();
    let mut batch = Vec::new();
    let mut w = w_t.clone();
    for h in 0..cfg.iterations {
        let indices: &[usize] = match cfg.batch {
            BatchSize::Full => &full,
            BatchSize::Sampled(b) => {
                batch.clear();
                batch.extend((0..b).map(|_| rng.random_range(0..shard.len())));
                &batch
            }
        };
        on_step(&w, indices);
        let g = model.gradient_at(&w, shard, indices)?;
        w.axpy_in_place(-cfg.gamma, g.as_slice());
        if !w.is_finite() {
            return Err(Error::LocalDivergence { step: h });
        }
    }
    Ok(w)
}

/// Runs local SGD and returns `w_{t+1}^k = w^k_{t,H}`.
pub fn local_sgd<R: Rng + ?Sized>(
    w_t: &ParamVector,
    model: &Model,
    shard: &[Sample],
    cfg: &LocalRunConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    run(w_t, model, shard, cfg, rng, |_, _| {})
}

/// As [`local_sgd`], also returning every step's starting iterate and batch.
pub fn local_sgd_traced<R: Rng + ?Sized>(
    w_t: &ParamVector,
    model: &Model,
    shard: &[Sample],
    cfg: &LocalRunConfig,
    rng: &mut R,
) -> Result<(ParamVector, Vec<LocalStep>)> {
    let mut steps = Vec::with_capacity(cfg.iterations);
    let w = run(w_t, model, shard, cfg, rng, |w, b| {
        steps.push(LocalStep {
            start: w.clone(),
            batch: b.to_vec(),
        })
    })?;
    Ok((w, steps))
}

/// `w_t − w_next`: a client's contribution before weighting.
pub fn client_delta(w_t: &ParamVector, w_next: &ParamVector) -> Result<ParamVector> {
    w_t.sub(w_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Curvature;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn half_sq() -> (Model, Vec<Sample>) {
        let m = Model::quadratic(Curvature::Diagonal(vec![1.0]), vec![0.0]).unwrap();
        (m, vec![Sample::new(vec![0.0], 0.0)])
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn one_and_three_steps_on_half_square() {
        let (m, shard) = half_sq();
        let w = ParamVector::new(vec![2.0]);
        let cfg = LocalRunConfig::new(0.1, 1, BatchSize::Sampled(1)).unwrap();
        let out = local_sgd(&w, &m, &shard, &cfg, &mut rng()).unwrap();
        assert!((out[0] - 1.8).abs() < 1e-15);

        let cfg = LocalRunConfig::new(0.1, 3, BatchSize::Sampled(1)).unwrap();
        let out = local_sgd(&w, &m, &shard, &cfg, &mut rng()).unwrap();
        // w ← 0.9 w, three times
        assert!((out[0] - 1.458).abs() < 1e-14);
    }

    #[test]
    fn zero_step_size_is_identity_and_zero_h_rejected() {
        let (m, shard) = half_sq();
        let w = ParamVector::new(vec![2.0]);
        let cfg = LocalRunConfig::new(0.0, 1, BatchSize::Sampled(10)).unwrap();
        assert_eq!(local_sgd(&w, &m, &shard, &cfg, &mut rng()).unwrap(), w);
        assert!(LocalRunConfig::new(0.1, 0, BatchSize::Sampled(1)).is_err());
        assert!(LocalRunConfig::new(0.1, 1, BatchSize::Sampled(0)).is_err());
    }

    #[test]
    fn empty_shard_and_divergence() {
        let (m, _) = half_sq();
        let w = ParamVector::new(vec![2.0]);
        let cfg = LocalRunConfig::new(0.1, 1, BatchSize::Full).unwrap();
        assert_eq!(
            local_sgd(&w, &m, &[], &cfg, &mut rng()).unwrap_err(),
            Error::Empty("client shard")
        );

        let m = Model::least_squares(1);
        let shard = vec![Sample::new(vec![1e3], 0.0)];
        let cfg = LocalRunConfig::new(10.0, 500, BatchSize::Full).unwrap();
        match local_sgd(&ParamVector::new(vec![1.0]), &m, &shard, &cfg, &mut rng()).unwrap_err() {
            Error::LocalDivergence { step } => assert!(step > 0 && step < 500),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn delta_examples() {
        let d = client_delta(&ParamVector::new(vec![2.0]), &ParamVector::new(vec![1.8])).unwrap();
        assert!((d[0] - 0.2).abs() < 1e-15);
        let w = ParamVector::new(vec![1.0, -3.0]);
        assert_eq!(client_delta(&w, &w).unwrap(), ParamVector::zeros(2));
        assert!(client_delta(&w, &ParamVector::zeros(3)).is_err());
    }

    fn logistic_shard() -> (Model, Vec<Sample>) {
        let m = Model::logistic(3);
        let shard = (0..12)
            .map(|i| {
                let x = vec![
                    (i as f64 * 0.37).sin(),
                    (i as f64 * 0.91).cos(),
                    0.1 * i as f64 - 0.5,
                ];
                Sample::new(x, if i % 3 == 0 { -1.0 } else { 1.0 })
            })
            .collect();
        (m, shard)
    }

    #[test]
    fn single_full_batch_step_is_a_gradient_step() {
        let (m, shard) = logistic_shard();
        let w = ParamVector::new(vec![0.2, -0.4, 0.7]);
        let gamma = 0.3;
        let cfg = LocalRunConfig::new(gamma, 1, BatchSize::Full).unwrap();
        let out = local_sgd(&w, &m, &shard, &cfg, &mut rng()).unwrap();
        let expected = crate::params::axpy(-gamma, &m.gradient(&w, &shard).unwrap(), &w).unwrap();
        for i in 0..3 {
            assert!((out[i] - expected[i]).abs() <= 1e-14);
        }
        let delta = client_delta(&w, &out).unwrap();
        let scaled = m.gradient(&w, &shard).unwrap().scale(gamma);
        for i in 0..3 {
            assert!((delta[i] - scaled[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn delta_telescopes_into_sum_of_step_gradients() {
        let (m, shard) = logistic_shard();
        let w = ParamVector::new(vec![0.1, 0.1, -0.2]);
        let gamma = 0.05;
        let cfg = LocalRunConfig::new(gamma, 7, BatchSize::Sampled(4)).unwrap();
        let (out, steps) = local_sgd_traced(&w, &m, &shard, &cfg, &mut rng()).unwrap();
        assert_eq!(steps.len(), 7);
        let mut sum = ParamVector::zeros(3);
        for s in &steps {
            sum = sum
                .add(&m.gradient_at(&s.start, &shard, &s.batch).unwrap())
                .unwrap();
        }
        let delta = client_delta(&w, &out).unwrap();
        for i in 0..3 {
            assert!((delta[i] - gamma * sum[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn same_stream_same_result() {
        let (m, shard) = logistic_shard();
        let w = ParamVector::zeros(3);
        let cfg = LocalRunConfig::new(0.1, 5, BatchSize::Sampled(3)).unwrap();
        let a = local_sgd(&w, &m, &shard, &cfg, &mut rng()).unwrap();
        let b = local_sgd(&w, &m, &shard, &cfg, &mut rng()).unwrap();
        assert_eq!(a, b);
        let c = local_sgd(&w, &m, &shard, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_ne!(a, c);
    }
}
