//! Momentum-SGD training of the reconstruction autoencoder.
//!
//! Loss on a batch of (corrupted, clean) pairs is
//! `mean_b ||forward(corrupted_b) - clean_b||^2 / d`; gradients come from
//! exact backpropagation. Training is single-threaded and fully reproducible
//! from the schedule seed.

use serde::{Deserialize, Serialize};

use crate::detector::{AutoencoderModel, DetectorError, LEAKY_SLOPE};
use crate::imgcore::Rng;

const MOMENTUM: f64 = 0.9;

/// Stage label for a schedule; fine-tuning defaults derive from pre-training
/// ones (a tenth of the learning rate, a fifth of the epochs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageLabel {
    Pretrain,
    Finetune,
    Single,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub stage: StageLabel,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied per epoch.
    pub lr_decay: f64,
    pub seed: u64,
}

impl TrainSchedule {
    pub fn pretrain(seed: u64) -> Self {
        Self {
            stage: StageLabel::Pretrain,
            epochs: 6,
            batch_size: 32,
            learning_rate: 0.01,
            lr_decay: 0.95,
            seed,
        }
    }

    /// Fine-tuning schedule derived from a pre-training one: a tenth of the
    /// learning rate, a fifth of the epochs, and quarter-size batches so the
    /// small curated set still yields a useful number of updates.
    pub fn finetune_from(pretrain: &TrainSchedule, seed: u64) -> Self {
        Self {
            stage: StageLabel::Finetune,
            epochs: (pretrain.epochs / 5).max(1),
            batch_size: (pretrain.batch_size / 4).max(8),
            learning_rate: pretrain.learning_rate / 10.0,
            lr_decay: pretrain.lr_decay,
            seed,
        }
    }
}

/// Gradient of the batch loss with respect to one layer's parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Exact backpropagated gradients and the batch loss, without touching the
/// model. A batch is a slice of (corrupted input, clean target) pairs.
pub fn gradients(
    model: &AutoencoderModel,
    batch: &[(Vec<f64>, Vec<f64>)],
) -> Result<(Vec<LayerGrads>, f64), DetectorError> {
    assert!(!batch.is_empty(), "batch must be nonempty");
    let d = model.output_dim();
    let mut grads: Vec<LayerGrads> = model
        .layers()
        .iter()
        .map(|l| LayerGrads {
            weights: vec![0.0; l.weights.len()],
            biases: vec![0.0; l.biases.len()],
        })
        .collect();

    let batch_size = batch.len() as f64;
    let mut loss = 0.0;
    for (input, target) in batch {
        if target.len() != d {
            return Err(DetectorError::DimensionMismatch { expected: d, got: target.len() });
        }
        let trace = model.forward_trace(input);
        let output = trace.last().unwrap();
        let sample_err: f64 =
            output.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        loss += sample_err / d as f64;

        // d loss / d output, including the 1/(d * B) loss normalization.
        let mut delta: Vec<f64> = output
            .iter()
            .zip(target)
            .map(|(o, t)| 2.0 * (o - t) / (d as f64 * batch_size))
            .collect();

        for li in (0..model.layers().len()).rev() {
            let layer = &model.layers()[li];
            let activation_in = &trace[li];
            let g = &mut grads[li];
            for o in 0..layer.output {
                let dv = delta[o];
                g.biases[o] += dv;
                let row = &mut g.weights[o * layer.input..(o + 1) * layer.input];
                for (gw, a) in row.iter_mut().zip(activation_in) {
                    *gw += dv * a;
                }
            }
            if li > 0 {
                // Propagate through the affine map, then through the previous
                // layer's leaky rectifier (its post-activation is trace[li]).
                let mut prev = vec![0.0f64; layer.input];
                for o in 0..layer.output {
                    let dv = delta[o];
                    let row = &layer.weights[o * layer.input..(o + 1) * layer.input];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += dv * w;
                    }
                }
                for (p, &a) in prev.iter_mut().zip(activation_in) {
                    if a < 0.0 {
                        *p *= LEAKY_SLOPE;
                    }
                }
                delta = prev;
            }
        }
    }
    Ok((grads, loss / batch_size))
}

/// Momentum state for one training stage.
#[derive(Debug, Clone)]
pub struct Trainer {
    velocity: Vec<LayerGrads>,
    steps: usize,
}

impl Trainer {
    pub fn new(model: &AutoencoderModel) -> Self {
        let velocity = model
            .layers()
            .iter()
            .map(|l| LayerGrads {
                weights: vec![0.0; l.weights.len()],
                biases: vec![0.0; l.biases.len()],
            })
            .collect();
        Self { velocity, steps: 0 }
    }
}

/// One momentum-SGD step: `v <- momentum * v + g`, `w <- w - lr * v`.
/// Returns the pre-update batch loss.
pub fn train_step(
    model: &mut AutoencoderModel,
    trainer: &mut Trainer,
    batch: &[(Vec<f64>, Vec<f64>)],
    lr: f64,
) -> Result<f64, DetectorError> {
    let (grads, loss) = gradients(model, batch)?;
    if !loss.is_finite() {
        return Err(DetectorError::NonFiniteLoss { step: trainer.steps });
    }
    trainer.steps += 1;
    for ((layer, v), g) in model.layers_mut().iter_mut().zip(&mut trainer.velocity).zip(&grads) {
        for ((w, vw), gw) in layer.weights.iter_mut().zip(&mut v.weights).zip(&g.weights) {
            *vw = MOMENTUM * *vw + gw;
            *w -= lr * *vw;
        }
        for ((b, vb), gb) in layer.biases.iter_mut().zip(&mut v.biases).zip(&g.biases) {
            *vb = MOMENTUM * *vb + gb;
            *b -= lr * *vb;
        }
    }
    Ok(loss)
}

/// Runs a full schedule over (corrupted, clean) pairs: seeded shuffles,
/// fixed-size batches (the final short batch is kept), per-epoch learning
/// rate decay. Returns the per-epoch mean batch loss curve.
pub fn train(
    model: &mut AutoencoderModel,
    pairs: &[(Vec<f64>, Vec<f64>)],
    schedule: &TrainSchedule,
) -> Result<Vec<f64>, DetectorError> {
    assert!(!pairs.is_empty(), "training set must be nonempty");
    assert!(schedule.learning_rate > 0.0, "learning rate must be positive");
    let mut trainer = Trainer::new(model);
    let rng = Rng::new(schedule.seed);
    let mut curve = Vec::with_capacity(schedule.epochs as usize);
    for epoch in 0..schedule.epochs {
        let lr = schedule.learning_rate * schedule.lr_decay.powi(epoch as i32);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.substream(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<(Vec<f64>, Vec<f64>)> =
                chunk.iter().map(|&i| pairs[i].clone()).collect();
            epoch_loss += train_step(model, &mut trainer, &batch, lr)?;
            batches += 1;
        }
        curve.push(epoch_loss / batches as f64);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(sizes: &[usize], seed: u64) -> AutoencoderModel {
        AutoencoderModel::new(sizes, &mut Rng::new(seed))
    }

    fn random_batch(d: usize, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.range_f64(-1.0, 1.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.range_f64(-1.0, 1.0)).collect();
                (x, y)
            })
            .collect()
    }

    /// Central finite differences over every parameter of a model.
    fn numeric_gradients(
        model: &AutoencoderModel,
        batch: &[(Vec<f64>, Vec<f64>)],
        eps: f64,
    ) -> Vec<LayerGrads> {
        let loss_of = |m: &AutoencoderModel| -> f64 {
            let d = m.output_dim() as f64;
            let mut loss = 0.0;
            for (x, y) in batch {
                let out = m.forward(x).unwrap();
                loss += out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / d;
            }
            loss / batch.len() as f64
        };
        let mut grads = Vec::new();
        for li in 0..model.layers().len() {
            let layer = &model.layers()[li];
            let mut lw = vec![0.0; layer.weights.len()];
            let mut lb = vec![0.0; layer.biases.len()];
            for wi in 0..layer.weights.len() {
                let mut plus = model.clone();
                plus.layers_mut()[li].weights[wi] += eps;
                let mut minus = model.clone();
                minus.layers_mut()[li].weights[wi] -= eps;
                lw[wi] = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            }
            for bi in 0..layer.biases.len() {
                let mut plus = model.clone();
                plus.layers_mut()[li].biases[bi] += eps;
                let mut minus = model.clone();
                minus.layers_mut()[li].biases[bi] -= eps;
                lb[bi] = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            }
            grads.push(LayerGrads { weights: lw, biases: lb });
        }
        grads
    }

    fn max_relative_error(analytic: &[LayerGrads], numeric: &[LayerGrads]) -> f64 {
        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(numeric) {
            for (av, nv) in a.weights.iter().zip(&n.weights).chain(a.biases.iter().zip(&n.biases))
            {
                let rel = (av - nv).abs() / (av.abs() + nv.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn backprop_matches_finite_differences_on_d9_model() {
        let model = small_model(&[9, 4, 9], 1);
        let batch = random_batch(9, 3, 2);
        let (analytic, _) = gradients(&model, &batch).unwrap();
        let numeric = numeric_gradients(&model, &batch, 1e-4);
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-4, "max relative error {err}");
    }

    /// True when some hidden unit sits close enough to the rectifier kink
    /// that a central difference of width `eps` straddles it. The finite
    /// difference is not a gradient estimate there, so such draws are
    /// redrawn rather than compared.
    fn near_kink(model: &AutoencoderModel, batch: &[(Vec<f64>, Vec<f64>)], margin: f64) -> bool {
        batch.iter().any(|(x, _)| {
            let trace = model.forward_trace(x);
            trace[1..trace.len() - 1]
                .iter()
                .any(|layer| layer.iter().any(|&a| a.abs() < margin))
        })
    }

    #[test]
    fn backprop_matches_finite_differences_over_20_random_models() {
        let mut checked = 0u32;
        let mut seed = 0u64;
        while checked < 20 {
            seed += 1;
            let mut shape_rng = Rng::new(seed);
            let depth = shape_rng.range_u32(1, 4) as usize;
            let mut sizes = vec![shape_rng.range_u32(2, 7) as usize];
            for _ in 0..depth {
                sizes.push(shape_rng.range_u32(2, 7) as usize);
            }
            sizes.push(sizes[0]);
            let model = small_model(&sizes, seed.wrapping_add(100));
            let batch = random_batch(sizes[0], 2, seed.wrapping_add(200));
            if near_kink(&model, &batch, 1e-3) {
                continue;
            }
            let (analytic, _) = gradients(&model, &batch).unwrap();
            let numeric = numeric_gradients(&model, &batch, 1e-4);
            let err = max_relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
            checked += 1;
        }
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut model = small_model(&[6, 3, 6], 3);
        let before = model.clone();
        let batch = random_batch(6, 4, 4);
        let mut trainer = Trainer::new(&model);
        let loss = train_step(&mut model, &mut trainer, &batch, 0.0).unwrap();
        assert!(loss > 0.0);
        assert_eq!(model, before);
    }

    #[test]
    fn repeated_steps_descend_on_fixed_batch() {
        let mut model = small_model(&[8, 6, 8], 5);
        let batch = random_batch(8, 8, 6);
        let mut trainer = Trainer::new(&model);
        let first = train_step(&mut model, &mut trainer, &batch, 0.01).unwrap();
        let mut last = first;
        for _ in 0..199 {
            last = train_step(&mut model, &mut trainer, &batch, 0.01).unwrap();
        }
        assert!(last < first, "loss did not descend: {first} -> {last}");
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let mut model = small_model(&[4, 2, 4], 7);
        let before = model.clone();
        let schedule = TrainSchedule {
            stage: StageLabel::Single,
            epochs: 0,
            batch_size: 4,
            learning_rate: 0.1,
            lr_decay: 1.0,
            seed: 0,
        };
        let curve = train(&mut model, &random_batch(4, 8, 8), &schedule).unwrap();
        assert!(curve.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_reproducible_from_seed() {
        let schedule = TrainSchedule {
            stage: StageLabel::Single,
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.05,
            lr_decay: 0.9,
            seed: 42,
        };
        let pairs = random_batch(6, 32, 9);
        let mut a = small_model(&[6, 4, 6], 10);
        let mut b = small_model(&[6, 4, 6], 10);
        let curve_a = train(&mut a, &pairs, &schedule).unwrap();
        let curve_b = train(&mut b, &pairs, &schedule).unwrap();
        assert_eq!(a, b);
        assert_eq!(curve_a, curve_b);
    }

    #[test]
    fn divergence_is_reported_not_propagated_as_nan() {
        let mut model = small_model(&[4, 4, 4], 11);
        let batch = random_batch(4, 2, 12);
        let mut trainer = Trainer::new(&model);
        // An absurd learning rate blows the weights up until the loss leaves
        // the finite range; the step must fail rather than return NaN.
        let mut saw_error = false;
        for _ in 0..200 {
            match train_step(&mut model, &mut trainer, &batch, 1e12) {
                Ok(loss) => assert!(loss.is_finite()),
                Err(DetectorError::NonFiniteLoss { .. }) => {
                    saw_error = true;
                    break;
                }
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        assert!(saw_error, "training never reported divergence");
    }

    #[test]
    fn finetune_schedule_derives_from_pretrain() {
        let pre = TrainSchedule::pretrain(1);
        let fine = TrainSchedule::finetune_from(&pre, 2);
        assert_eq!(fine.stage, StageLabel::Finetune);
        assert!((fine.learning_rate - pre.learning_rate / 10.0).abs() < 1e-12);
        assert!(fine.epochs >= 1);
        assert!(fine.epochs <= pre.epochs);
    }
}
