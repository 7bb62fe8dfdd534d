//! Incremental maximum-likelihood training.
//!
//! The optimizer is deliberately simple: an epoch loop that visits precincts
//! in a fixed order and applies an ascent step after each one, with the
//! learning rate annealed per epoch as `lr / e^a`. Gradients with tiny norm
//! are skipped, large ones are rescaled to a fixed L2 norm, and precincts
//! whose probability vector degenerates are passed over and counted rather
//! than aborting the run.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{
    self, LogisticParams, ModelKind, ModelParams, NeuralParams, PrecinctGradient,
};
use crate::poibin;

/// When and how parameter updates are applied within an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One update per precinct, precincts visited in dataset load order
    /// every epoch. The reference protocol.
    PerPrecinct,
    /// One update per epoch from the summed gradient over all precincts.
    Batch,
    /// One update per precinct, order reshuffled each epoch.
    Stochastic,
}

/// Training hyperparameters. All fields have serviceable defaults; parsing
/// from config files is strict (unknown keys are rejected).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub anneal_exponent: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub skip_norm: f64,
    pub l2_lambda: f64,
    /// Hidden units for the network model; ignored by logistic fits.
    pub hidden_size: usize,
    pub seed: u64,
    /// Also record the exact DFT log likelihood after every epoch. This is
    /// O(n^2) per precinct, so it is off by default.
    pub track_exact_loss: bool,
    /// Restrict exact-loss tracking to the first `m` precincts; `None`
    /// tracks all of them. Keeps the per-epoch DFT cost bounded on large
    /// datasets while still giving a comparable curve.
    pub exact_loss_subsample: Option<usize>,
    pub update_mode: UpdateMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            anneal_exponent: 0.5,
            epochs: 20,
            clip_norm: 5.0,
            skip_norm: 1e-8,
            l2_lambda: 0.0,
            hidden_size: 10,
            seed: 0,
            track_exact_loss: false,
            exact_loss_subsample: None,
            update_mode: UpdateMode::PerPrecinct,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.anneal_exponent >= 0.0 && self.anneal_exponent.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "anneal_exponent must be >= 0, got {}",
                self.anneal_exponent
            )));
        }
        if !(self.skip_norm > 0.0 && self.clip_norm > self.skip_norm) {
            return Err(Error::InvalidInput(format!(
                "need clip_norm > skip_norm > 0, got clip_norm = {}, skip_norm = {}",
                self.clip_norm, self.skip_norm
            )));
        }
        if self.l2_lambda < 0.0 {
            return Err(Error::InvalidInput(format!(
                "l2_lambda must be >= 0, got {}",
                self.l2_lambda
            )));
        }
        if self.hidden_size == 0 {
            return Err(Error::InvalidInput("hidden_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome of the gradient gate: drop the update or apply (a possibly
/// rescaled) one.
#[derive(Debug, Clone, PartialEq)]
pub enum GradientAction {
    Skip,
    Apply(PrecinctGradient),
}

/// Initial parameters: zero coefficients for logistic; for the network,
/// `w1` then `w2` entries drawn i.i.d. uniform on [-0.1, 0.1] from a
/// generator seeded with `config.seed`, biases zero.
pub fn init_params(kind: ModelKind, d: usize, config: &FitConfig) -> Result<ModelParams> {
    if d == 0 {
        return Err(Error::InvalidInput(
            "need at least one covariate to fit".into(),
        ));
    }
    config.validate()?;
    Ok(match kind {
        ModelKind::Logistic => ModelParams::Logistic(LogisticParams::zeros(d)),
        ModelKind::Neural => {
            let h = config.hidden_size;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut draw = |count: usize| -> Vec<f64> {
                (0..count).map(|_| rng.gen_range(-0.1..0.1)).collect()
            };
            let w1 = ndarray::Array2::from_shape_vec((h, d), draw(h * d)).expect("sized");
            let w2 = ndarray::Array1::from_vec(draw(h));
            ModelParams::Neural(NeuralParams::new(
                w1,
                ndarray::Array1::zeros(h),
                w2,
                0.0,
            )?)
        }
    })
}

/// Applies the skip/clip gate: gradients below `skip_norm` are dropped,
/// gradients above `clip_norm` are rescaled onto that norm (all blocks by
/// the same factor), anything between passes through unchanged.
pub fn clip_or_skip(gradient: PrecinctGradient, config: &FitConfig) -> Result<GradientAction> {
    if !gradient.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient".into(),
            context: String::new(),
        });
    }
    let norm = gradient.norm();
    if norm < config.skip_norm {
        return Ok(GradientAction::Skip);
    }
    if norm > config.clip_norm {
        let mut g = gradient;
        g.scale_in_place(config.clip_norm / norm);
        return Ok(GradientAction::Apply(g));
    }
    Ok(GradientAction::Apply(gradient))
}

/// Learning rate for epoch `e >= 1`: `learning_rate / e^anneal_exponent`.
/// Annealing is per epoch, not per update; a per-update clock at realistic
/// dataset sizes would collapse the rate inside the first pass.
pub fn annealed_learning_rate(config: &FitConfig, epoch: usize) -> f64 {
    config.learning_rate / (epoch as f64).powf(config.anneal_exponent)
}

/// Training record. Serialized with these exact field names; loss sequences
/// have length `epochs_run`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Approximate negative log likelihood over the full dataset after each
    /// epoch.
    pub approx_nll: Vec<f64>,
    /// Exact negative log likelihood after each epoch, when tracked
    /// (over the configured subsample).
    pub exact_nll: Option<Vec<f64>>,
    pub epochs_run: usize,
    pub clipped_count: u64,
    pub skipped_count: u64,
    pub degenerate_skips: u64,
    pub wall_time_s: f64,
    pub params: ModelParams,
}

/// Subtracts the L2 penalty `lambda * params` from the ascent gradient,
/// excluding the intercept and biases. Applied before the clip/skip gate so
/// the clipping contract (update norm <= lr * clip_norm) holds for any
/// lambda.
fn apply_l2_penalty(gradient: &mut PrecinctGradient, params: &ModelParams, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    match (gradient, params) {
        (PrecinctGradient::Logistic(g), ModelParams::Logistic(p)) => {
            for j in 1..g.len() {
                g[j] -= lambda * p.theta[j];
            }
        }
        (
            PrecinctGradient::Neural { w1, w2, .. },
            ModelParams::Neural(p),
        ) => {
            *w1 -= &(lambda * &p.w1);
            *w2 -= &(lambda * &p.w2);
        }
        _ => unreachable!("gradient and params always share a shape"),
    }
}

fn apply_update(params: &mut ModelParams, update: &PrecinctGradient, lr: f64) {
    match (params, update) {
        (ModelParams::Logistic(p), PrecinctGradient::Logistic(g)) => {
            p.theta.scaled_add(lr, g);
        }
        (ModelParams::Neural(p), PrecinctGradient::Neural { w1, b1, w2, b2 }) => {
            p.w1.scaled_add(lr, w1);
            p.b1.scaled_add(lr, b1);
            p.w2.scaled_add(lr, w2);
            p.b2 += lr * b2;
        }
        _ => unreachable!("gradient and params always share a shape"),
    }
}

fn add_gradients(acc: &mut PrecinctGradient, g: &PrecinctGradient) {
    match (acc, g) {
        (PrecinctGradient::Logistic(a), PrecinctGradient::Logistic(b)) => *a += b,
        (
            PrecinctGradient::Neural { w1, b1, w2, b2 },
            PrecinctGradient::Neural {
                w1: v1,
                b1: c1,
                w2: v2,
                b2: c2,
            },
        ) => {
            *w1 += v1;
            *b1 += c1;
            *w2 += v2;
            *b2 += c2;
        }
        _ => unreachable!("gradients of one fit share a shape"),
    }
}

fn zero_gradient_like(params: &ModelParams) -> PrecinctGradient {
    match params {
        ModelParams::Logistic(p) => {
            PrecinctGradient::Logistic(ndarray::Array1::zeros(p.theta.len()))
        }
        ModelParams::Neural(p) => PrecinctGradient::Neural {
            w1: ndarray::Array2::zeros(p.w1.dim()),
            b1: ndarray::Array1::zeros(p.b1.len()),
            w2: ndarray::Array1::zeros(p.w2.len()),
            b2: 0.0,
        },
    }
}

struct EpochCounters {
    clipped: u64,
    skipped: u64,
    degenerate: u64,
}

/// Runs the full training protocol and returns the report.
///
/// Per-precinct and stochastic modes apply `theta <- theta + lr_e * g'`
/// after every precinct, where `g'` is the penalized gradient after the
/// clip/skip gate; batch mode applies one such update per epoch from the
/// summed penalized gradient. Losses are recorded after each epoch with the
/// parameters as of the epoch's end.
pub fn fit(dataset: &Dataset, kind: ModelKind, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    if dataset.n_precincts() == 0 {
        return Err(Error::EmptyDataset);
    }
    let start = Instant::now();
    let n = dataset.n_precincts();
    let mut params = init_params(kind, dataset.covariate_dim(), config)?;

    // Stochastic shuffles come from a stream separated from the one used by
    // initialization, so the two never interact.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let exact_subset: Option<Dataset> = if config.track_exact_loss {
        Some(match config.exact_loss_subsample {
            Some(m) => dataset.head(m),
            None => dataset.clone(),
        })
    } else {
        None
    };

    let mut approx_nll = Vec::with_capacity(config.epochs);
    let mut exact_nll = exact_subset.as_ref().map(|_| Vec::with_capacity(config.epochs));
    let mut counters = EpochCounters {
        clipped: 0,
        skipped: 0,
        degenerate: 0,
    };

    for epoch in 1..=config.epochs {
        let lr = annealed_learning_rate(config, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        if config.update_mode == UpdateMode::Stochastic {
            order.shuffle(&mut shuffle_rng);
        }

        match config.update_mode {
            UpdateMode::PerPrecinct | UpdateMode::Stochastic => {
                for &i in &order {
                    let precinct = &dataset.precincts[i];
                    let mut gradient = match glm::grad_precinct(&params, precinct) {
                        Ok(g) => g,
                        Err(Error::DegenerateVariance) => {
                            counters.degenerate += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    if !gradient.is_finite() {
                        return Err(Error::NonFinite {
                            what: "gradient".into(),
                            context: format!(" at epoch {epoch}, precinct {}", precinct.key),
                        });
                    }
                    apply_l2_penalty(&mut gradient, &params, config.l2_lambda);
                    let norm = gradient.norm();
                    match clip_or_skip(gradient, config)? {
                        GradientAction::Skip => counters.skipped += 1,
                        GradientAction::Apply(update) => {
                            if norm > config.clip_norm {
                                counters.clipped += 1;
                            }
                            apply_update(&mut params, &update, lr);
                        }
                    }
                }
            }
            UpdateMode::Batch => {
                let mut total = zero_gradient_like(&params);
                for &i in &order {
                    let precinct = &dataset.precincts[i];
                    match glm::grad_precinct(&params, precinct) {
                        Ok(g) => {
                            if !g.is_finite() {
                                return Err(Error::NonFinite {
                                    what: "gradient".into(),
                                    context: format!(
                                        " at epoch {epoch}, precinct {}",
                                        precinct.key
                                    ),
                                });
                            }
                            add_gradients(&mut total, &g)
                        }
                        Err(Error::DegenerateVariance) => counters.degenerate += 1,
                        Err(e) => return Err(e),
                    }
                }
                apply_l2_penalty(&mut total, &params, config.l2_lambda);
                let norm = total.norm();
                match clip_or_skip(total, config)? {
                    GradientAction::Skip => counters.skipped += 1,
                    GradientAction::Apply(update) => {
                        if norm > config.clip_norm {
                            counters.clipped += 1;
                        }
                        apply_update(&mut params, &update, lr);
                    }
                }
            }
        }

        let loss = dataset_loss(dataset, &params, false)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "loss".into(),
                context: format!(" at epoch {epoch}"),
            });
        }
        approx_nll.push(loss);
        if let (Some(seq), Some(subset)) = (exact_nll.as_mut(), exact_subset.as_ref()) {
            seq.push(dataset_loss(subset, &params, true)?);
        }
    }

    Ok(FitReport {
        approx_nll,
        exact_nll,
        epochs_run: config.epochs,
        clipped_count: counters.clipped,
        skipped_count: counters.skipped,
        degenerate_skips: counters.degenerate,
        wall_time_s: start.elapsed().as_secs_f64(),
        params,
    })
}

/// Negative sum of per-precinct log likelihoods under `params`.
///
/// With `exact = false` this uses the normal approximation, silently
/// skipping precincts with degenerate variance. With `exact = true` it uses
/// the DFT log PMF; counts the model deems impossible (zero PMF, or
/// `D > n_voters`) contribute the underflow sentinel instead of erroring.
pub fn dataset_loss(dataset: &Dataset, params: &ModelParams, exact: bool) -> Result<f64> {
    let mut total = 0.0;
    for precinct in &dataset.precincts {
        if exact {
            let probs = glm::precinct_probs(params, precinct)?;
            if precinct.d_votes > precinct.n_voters() as u64 {
                total += poibin::LOGLIK_UNDERFLOW_SENTINEL;
                continue;
            }
            total += poibin::loglik_exact(&probs, precinct.d_votes)?.value;
        } else {
            match glm::loglik_normal_precinct(params, precinct) {
                Ok(l) => total += l,
                Err(Error::DegenerateVariance) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(-total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        generate_synthetic, CovariateDistribution, SynthSpec, VotersPerPrecinct,
    };
    use crate::glm::PROB_CLAMP;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn synth_spec(precincts: usize, voters: usize, theta: Vec<f64>) -> SynthSpec {
        SynthSpec {
            precincts,
            voters: VotersPerPrecinct::Fixed(voters),
            dim: theta.len() - 1,
            distribution: CovariateDistribution::Normal,
            precinct_spread: 0.3,
            counties: 1,
            tag_covariate: None,
            tag_threshold: 0.5,
            model: ModelParams::Logistic(LogisticParams {
                theta: ndarray::Array1::from_vec(theta),
            }),
        }
    }

    #[test]
    fn init_logistic_is_zero() {
        let config = FitConfig::default();
        let p = init_params(ModelKind::Logistic, 5, &config).unwrap();
        let ModelParams::Logistic(p) = p else {
            panic!("wrong kind")
        };
        assert_eq!(p.theta.len(), 6);
        assert!(p.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_neural_ranges_and_determinism() {
        let config = FitConfig {
            hidden_size: 7,
            seed: 99,
            ..FitConfig::default()
        };
        let a = init_params(ModelKind::Neural, 4, &config).unwrap();
        let b = init_params(ModelKind::Neural, 4, &config).unwrap();
        assert_eq!(a, b);

        let ModelParams::Neural(p) = a else {
            panic!("wrong kind")
        };
        assert_eq!(p.w1.dim(), (7, 4));
        assert!(p.w1.iter().chain(p.w2.iter()).all(|v| (-0.1..0.1).contains(v)));
        assert!(p.w1.iter().any(|&v| v != 0.0));
        assert!(p.b1.iter().all(|&v| v == 0.0));
        assert_eq!(p.b2, 0.0);

        let other = init_params(
            ModelKind::Neural,
            4,
            &FitConfig {
                seed: 100,
                ..config
            },
        )
        .unwrap();
        assert_ne!(other, b);
    }

    #[test]
    fn clip_or_skip_cases() {
        let config = FitConfig::default();

        let g = PrecinctGradient::Logistic(array![6.0, 8.0]);
        let GradientAction::Apply(clipped) = clip_or_skip(g, &config).unwrap() else {
            panic!("expected apply")
        };
        let PrecinctGradient::Logistic(v) = &clipped else {
            panic!()
        };
        assert_abs_diff_eq!(v[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(clipped.norm(), 5.0, epsilon = 1e-12);

        let g = PrecinctGradient::Logistic(array![1.0, 2.0]);
        assert_eq!(
            clip_or_skip(g.clone(), &config).unwrap(),
            GradientAction::Apply(g)
        );

        let g = PrecinctGradient::Logistic(array![1e-12, 0.0]);
        assert_eq!(clip_or_skip(g, &config).unwrap(), GradientAction::Skip);

        let g = PrecinctGradient::Logistic(array![f64::NAN]);
        assert!(matches!(
            clip_or_skip(g, &config),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn annealing_schedule() {
        let config = FitConfig::default();
        assert_abs_diff_eq!(
            annealed_learning_rate(&config, 1),
            config.learning_rate,
            epsilon = 0.0
        );
        assert_abs_diff_eq!(
            annealed_learning_rate(&config, 4),
            config.learning_rate / 2.0,
            epsilon = 1e-18
        );
        let mut prev = f64::INFINITY;
        for e in 1..=50 {
            let lr = annealed_learning_rate(&config, e);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        for bad in [
            FitConfig {
                learning_rate: 0.0,
                ..FitConfig::default()
            },
            FitConfig {
                clip_norm: 1e-9,
                ..FitConfig::default()
            },
            FitConfig {
                skip_norm: 0.0,
                ..FitConfig::default()
            },
            FitConfig {
                hidden_size: 0,
                ..FitConfig::default()
            },
            FitConfig {
                l2_lambda: -1.0,
                ..FitConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn dataset_loss_single_precinct_hand_value() {
        // Zero params give p = (1/2, 1/2); with D = 1 the residual is zero
        // and NLL = 0.5 ln 0.5 = ln sqrt(0.5).
        let x = array![[0.7], [-0.7]];
        let precinct = crate::dataset::Precinct::unlabeled("C", "P", x, 1, 2).unwrap();
        let ds = Dataset::new(
            vec![precinct],
            vec!["x0".into()],
            vec![crate::dataset::AffineScale::identity()],
        )
        .unwrap();
        let params = ModelParams::Logistic(LogisticParams::zeros(1));
        let nll = dataset_loss(&ds, &params, false).unwrap();
        assert_abs_diff_eq!(nll, 0.5f64.sqrt().ln(), epsilon = 1e-12);

        // Two identical precincts: exactly twice the loss.
        let mut two = ds.clone();
        two.precincts.push(two.precincts[0].clone());
        let nll2 = dataset_loss(&two, &params, false).unwrap();
        assert_abs_diff_eq!(nll2, 2.0 * nll, epsilon = 1e-12);
    }

    #[test]
    fn dataset_loss_additive_over_partition() {
        let spec = synth_spec(20, 15, vec![0.1, 0.8, -0.4]);
        let (ds, _) = generate_synthetic(&spec, 5).unwrap();
        let params = ModelParams::Logistic(LogisticParams {
            theta: array![0.05, 0.3, -0.2],
        });
        let whole = dataset_loss(&ds, &params, false).unwrap();
        let first = ds.subset(&(0..10).collect::<Vec<_>>());
        let second = ds.subset(&(10..20).collect::<Vec<_>>());
        let parts = dataset_loss(&first, &params, false).unwrap()
            + dataset_loss(&second, &params, false).unwrap();
        assert_abs_diff_eq!(whole, parts, epsilon = 1e-9);
    }

    #[test]
    fn exact_loss_matches_enumeration_oracle() {
        let spec = SynthSpec {
            voters: VotersPerPrecinct::Range([5, 12]),
            ..synth_spec(8, 10, vec![0.2, 0.6, -0.3])
        };
        let (ds, _) = generate_synthetic(&spec, 21).unwrap();
        let params = ModelParams::Logistic(LogisticParams {
            theta: array![0.1, 0.4, -0.2],
        });

        let mut expected = 0.0;
        for p in &ds.precincts {
            let probs = glm::precinct_probs(&params, p).unwrap();
            let pmf = poibin::pmf_enumerate(&probs, p.d_votes).unwrap();
            expected -= pmf.ln();
        }
        let got = dataset_loss(&ds, &params, true).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-8);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let spec = synth_spec(5, 10, vec![0.0, 0.5]);
        let (ds, _) = generate_synthetic(&spec, 2).unwrap();
        let config = FitConfig {
            epochs: 0,
            ..FitConfig::default()
        };
        let report = fit(&ds, ModelKind::Logistic, &config).unwrap();
        assert_eq!(report.epochs_run, 0);
        assert!(report.approx_nll.is_empty());
        assert_eq!(
            report.params,
            init_params(ModelKind::Logistic, 1, &config).unwrap()
        );
    }

    #[test]
    fn fit_is_deterministic() {
        let spec = synth_spec(15, 20, vec![0.1, 0.7, -0.5]);
        let (ds, _) = generate_synthetic(&spec, 33).unwrap();
        let config = FitConfig {
            epochs: 3,
            seed: 8,
            ..FitConfig::default()
        };
        let a = fit(&ds, ModelKind::Neural, &config).unwrap();
        let b = fit(&ds, ModelKind::Neural, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.approx_nll, b.approx_nll);
        assert_eq!(a.clipped_count, b.clipped_count);
        assert_eq!(a.skipped_count, b.skipped_count);
    }

    #[test]
    fn training_reduces_loss() {
        let spec = synth_spec(100, 40, vec![0.2, 1.0, -0.6]);
        let (ds, _) = generate_synthetic(&spec, 44).unwrap();
        let config = FitConfig {
            epochs: 10,
            learning_rate: 1e-3,
            ..FitConfig::default()
        };
        let report = fit(&ds, ModelKind::Logistic, &config).unwrap();
        let first = report.approx_nll[0];
        let last = *report.approx_nll.last().unwrap();
        assert!(
            last < first * 0.99 || last < first - first.abs() * 0.01,
            "no 1% improvement: first {first}, last {last}"
        );
        assert!(
            report.clipped_count + report.skipped_count + report.degenerate_skips
                <= (report.epochs_run * ds.n_precincts()) as u64
        );
    }

    #[test]
    fn batch_and_stochastic_modes_run() {
        let spec = synth_spec(30, 25, vec![0.1, 0.8, -0.4]);
        let (ds, _) = generate_synthetic(&spec, 55).unwrap();
        for mode in [UpdateMode::Batch, UpdateMode::Stochastic] {
            let config = FitConfig {
                epochs: 5,
                learning_rate: 1e-3,
                update_mode: mode,
                ..FitConfig::default()
            };
            let report = fit(&ds, ModelKind::Logistic, &config).unwrap();
            assert_eq!(report.approx_nll.len(), 5);
            assert!(
                *report.approx_nll.last().unwrap() <= report.approx_nll[0],
                "{mode:?} failed to reduce loss"
            );
        }
    }

    #[test]
    fn l2_shrinks_coefficients() {
        let spec = synth_spec(50, 30, vec![0.2, 1.2, -0.8]);
        let (ds, _) = generate_synthetic(&spec, 66).unwrap();
        let base = FitConfig {
            epochs: 8,
            learning_rate: 1e-3,
            ..FitConfig::default()
        };
        let coef_norm = |report: &FitReport| {
            let ModelParams::Logistic(p) = &report.params else {
                panic!()
            };
            p.theta.slice(ndarray::s![1..]).mapv(|v| v * v).sum().sqrt()
        };
        let plain = fit(&ds, ModelKind::Logistic, &base).unwrap();
        let penalized = fit(
            &ds,
            ModelKind::Logistic,
            &FitConfig {
                l2_lambda: 1e3,
                ..base
            },
        )
        .unwrap();
        assert!(
            coef_norm(&penalized) < coef_norm(&plain),
            "penalty failed to shrink: {} vs {}",
            coef_norm(&penalized),
            coef_norm(&plain)
        );
    }

    #[test]
    fn exact_loss_tracking_with_subsample() {
        let spec = SynthSpec {
            voters: VotersPerPrecinct::Fixed(8),
            ..synth_spec(12, 8, vec![0.1, 0.5])
        };
        let (ds, _) = generate_synthetic(&spec, 77).unwrap();
        let config = FitConfig {
            epochs: 3,
            track_exact_loss: true,
            exact_loss_subsample: Some(4),
            ..FitConfig::default()
        };
        let report = fit(&ds, ModelKind::Logistic, &config).unwrap();
        let exact = report.exact_nll.expect("tracking was on");
        assert_eq!(exact.len(), 3);
        assert!(exact.iter().all(|v| v.is_finite()));

        // The tracked value equals dataset_loss over the first 4 precincts
        // with the final params.
        let head = ds.head(4);
        let check = dataset_loss(&head, &report.params, true).unwrap();
        assert_abs_diff_eq!(*exact.last().unwrap(), check, epsilon = 1e-9);
    }

    #[test]
    fn clipping_contract_bounds_updates() {
        // Every applied update has L2 norm <= lr_e * clip_norm: verified on
        // the gate directly, including a huge penalty pulled in before the
        // gate.
        let config = FitConfig {
            l2_lambda: 1e3,
            ..FitConfig::default()
        };
        let params = ModelParams::Logistic(LogisticParams {
            theta: array![0.0, 5.0, -3.0],
        });
        let mut g = PrecinctGradient::Logistic(array![0.2, -0.1, 0.4]);
        apply_l2_penalty(&mut g, &params, config.l2_lambda);
        assert!(g.norm() > config.clip_norm);
        match clip_or_skip(g, &config).unwrap() {
            GradientAction::Apply(update) => {
                assert!(update.norm() <= config.clip_norm + 1e-12);
            }
            GradientAction::Skip => panic!("should not skip"),
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = Dataset::new(vec![], vec!["x0".into()], vec![crate::dataset::AffineScale::identity()])
            .unwrap();
        assert!(matches!(
            fit(&ds, ModelKind::Logistic, &FitConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn zero_gradients_hit_the_skip_counter() {
        // At zero-initialized logistic params every voter sits at p = 1/2;
        // a precinct with D = n/2 then has an exactly zero gradient (zero
        // residual and zero symmetric term), which the gate must skip. The
        // clamp keeps the variance strictly positive, so the degenerate
        // counter stays at zero on this path.
        let balanced =
            crate::dataset::Precinct::unlabeled("C", "P1", array![[5.0], [-3.0]], 1, 2).unwrap();
        let informative = crate::dataset::Precinct::unlabeled(
            "C",
            "P2",
            array![[0.1], [-0.2], [0.3]],
            3,
            3,
        )
        .unwrap();
        let ds = Dataset::new(
            vec![balanced, informative],
            vec!["x0".into()],
            vec![crate::dataset::AffineScale::identity()],
        )
        .unwrap();
        let config = FitConfig {
            epochs: 1,
            learning_rate: 1e-3,
            ..FitConfig::default()
        };
        let report = fit(&ds, ModelKind::Logistic, &config).unwrap();
        assert_eq!(report.epochs_run, 1);
        assert!(report.skipped_count >= 1);
        assert_eq!(report.degenerate_skips, 0);
        assert!(report.approx_nll.iter().all(|v| v.is_finite()));
        assert!(2.0 * PROB_CLAMP * (1.0 - PROB_CLAMP) > 0.0);
    }
}
