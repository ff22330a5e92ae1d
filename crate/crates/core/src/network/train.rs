//! Toy-scale minibatch SGD for the classifier and grid-detector heads.

use super::{Grads, HeadKind, Network};
use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::eval::top1_accuracy;
use crate::layers::{detection_loss, softmax_cross_entropy};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidHyperparameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidHyperparameter("epochs and batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClassSample<T: Scalar> {
    pub input: Tensor<T>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct DetectSample<T: Scalar> {
    pub input: Tensor<T>,
    pub truths: Vec<(usize, BBox)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean loss over the samples seen in each epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    /// Mean loss over the whole set before the first update.
    pub initial_loss: f64,
    /// Mean loss over the whole set after the last update.
    pub final_loss: f64,
    /// Training-set top-1 accuracy, classifier only.
    pub train_top1: Option<f64>,
}

/// Softmax cross-entropy of a classifier on one sample, with parameter gradients.
pub fn classifier_loss<T: Scalar>(net: &Network<T>, input: &Tensor<T>, label: usize) -> Result<(T, Grads<T>)> {
    let (logits, trace) = net.forward_to_head(input)?;
    let ce = softmax_cross_entropy(&logits, label)?;
    let grads = net.backprop(&trace, trace.inputs.len(), ce.grad_logits)?;
    Ok((ce.loss, grads))
}

/// Grid detection loss on one sample, with parameter gradients.
pub fn detector_loss<T: Scalar>(
    net: &Network<T>,
    input: &Tensor<T>,
    truths: &[(usize, BBox)],
) -> Result<(T, Grads<T>)> {
    let HeadKind::Detector(spec) = net.head() else {
        return Err(Error::InvalidInput(format!("{} has no detection head", net.config().name)));
    };
    let (flat, trace) = net.forward_to_head(input)?;
    let grid = flat.into_reshaped(&spec.shape())?;
    let (loss, grad) = detection_loss(&grid, spec, truths)?;
    let n = grad.len();
    let grads = net.backprop(&trace, trace.inputs.len(), grad.into_reshaped(&[n])?)?;
    Ok((loss, grads))
}

fn run_sgd<T: Scalar, S>(
    net: &mut Network<T>,
    samples: &[S],
    cfg: &TrainConfig,
    loss_of: impl Fn(&Network<T>, &S) -> Result<(T, Grads<T>)>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(Vec<f64>, f64, f64)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let mean_loss = |net: &Network<T>| -> Result<f64> {
        let mut total = 0.0;
        for s in samples {
            total += loss_of(net, s)?.0.to_f64();
        }
        Ok(total / samples.len() as f64)
    };
    let initial = mean_loss(net)?;
    let mut rng = SplitMix64::new(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = Grads::zeros_like(net);
            for &i in batch {
                let (loss, g) = loss_of(net, &samples[i])?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss diverged in epoch {epoch}")));
                }
                total += loss.to_f64();
                acc.accumulate(&g)?;
            }
            acc.scale(T::from_f64(1.0 / batch.len() as f64));
            net.sgd_step(&acc, cfg.learning_rate)?;
        }
        let mean = total / samples.len() as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    let final_loss = mean_loss(net)?;
    Ok((epoch_losses, initial, final_loss))
}

pub fn train_classifier<T: Scalar>(
    net: &mut Network<T>,
    samples: &[ClassSample<T>],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if !matches!(net.head(), HeadKind::Classifier { .. }) {
        return Err(Error::InvalidInput(format!("{} has no softmax head", net.config().name)));
    }
    let (epoch_losses, initial_loss, final_loss) =
        run_sgd(net, samples, cfg, |n, s| classifier_loss(n, &s.input, s.label), on_epoch)?;
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        predictions.push(argmax(net.infer(&s.input)?.data()));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(TrainReport {
        epoch_losses,
        initial_loss,
        final_loss,
        train_top1: Some(top1_accuracy(&predictions, &labels)?),
    })
}

pub fn train_detector<T: Scalar>(
    net: &mut Network<T>,
    samples: &[DetectSample<T>],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    let (epoch_losses, initial_loss, final_loss) =
        run_sgd(net, samples, cfg, |n, s| detector_loss(n, &s.input, &s.truths), on_epoch)?;
    Ok(TrainReport {
        epoch_losses,
        initial_loss,
        final_loss,
        train_top1: None,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}
