//! Mini-batch training loop shared by the surrogate and the inverse model.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::Mlp;
use crate::sampling::PipelineRng;

/// Regression loss, averaged over every output entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean absolute error.
    L1,
    /// Mean squared error.
    L2,
}

impl LossKind {
    pub fn value(self, pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
        let n = pred.len().max(1) as f64;
        let sum = Zip::from(&pred).and(&target).fold(0.0, |acc, &p, &t| match self {
            LossKind::L1 => acc + (p - t).abs(),
            LossKind::L2 => acc + (p - t) * (p - t),
        });
        sum / n
    }

    /// `∂ value / ∂ pred`; the L1 subgradient at zero residual is 0.
    pub fn gradient(self, pred: ArrayView2<f64>, target: ArrayView2<f64>) -> Array2<f64> {
        let n = pred.len().max(1) as f64;
        Zip::from(&pred).and(&target).map_collect(|&p, &t| match self {
            LossKind::L1 => sign(p - t) / n,
            LossKind::L2 => 2.0 * (p - t) / n,
        })
    }
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Reduce-on-plateau learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub loss: LossKind,
    pub plateau: Option<Plateau>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Checkpoint with the lowest validation loss.
    pub best: Mlp,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

pub struct Split<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: ArrayView2<'a, f64>,
}

/// Trains with Adam plus coupled L2 weight decay on the weight matrices.
///
/// Stops once the validation loss has not improved for more than
/// `patience` consecutive epochs and returns the best checkpoint.
pub fn fit(mut mlp: Mlp, train: Split<'_>, val: Split<'_>, params: &FitParams, rng: &mut PipelineRng) -> FitOutcome {
    assert!(train.x.nrows() > 0 && val.x.nrows() > 0, "fit needs non-empty splits");
    let mut optimizers: Vec<Adam> = mlp.parameters_mut().iter().map(|p| Adam::new(p.len())).collect();
    let mut order: Vec<usize> = (0..train.x.nrows()).collect();
    let mut lr = params.learning_rate;

    let mut best = mlp.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut plateau_bad = 0;
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();

    for epoch in 0..params.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(params.batch_size.max(1)) {
            let xb = train.x.select(Axis(0), chunk);
            let yb = train.y.select(Axis(0), chunk);
            let trace = mlp
                .forward_train(xb.view(), params.dropout, rng)
                .expect("training inputs match network width");
            epoch_loss += params.loss.value(trace.output.view(), yb.view()) * chunk.len() as f64;
            let d_out = params.loss.gradient(trace.output.view(), yb.view());
            let mut grads = mlp.backward(&trace, d_out);
            let flat: Vec<&mut [f64]> = grads
                .iter_mut()
                .flat_map(|g| {
                    [
                        g.weights.as_slice_mut().expect("standard layout"),
                        g.bias.as_slice_mut().expect("standard layout"),
                    ]
                })
                .collect();
            for (i, ((param, grad), opt)) in mlp
                .parameters_mut()
                .into_iter()
                .zip(flat)
                .zip(&mut optimizers)
                .enumerate()
            {
                if i % 2 == 0 && params.weight_decay > 0.0 {
                    for (g, &w) in grad.iter_mut().zip(param.iter()) {
                        *g += params.weight_decay * w;
                    }
                }
                opt.step(param, grad, lr);
            }
        }
        train_curve.push(epoch_loss / train.x.nrows() as f64);

        let pred = mlp.forward(val.x).expect("validation inputs match network width");
        let val_loss = params.loss.value(pred.view(), val.y);
        val_curve.push(val_loss);
        log::debug!("epoch {epoch}: train {:.6} val {val_loss:.6} lr {lr:.3e}", train_curve[epoch]);

        if val_loss < best_val {
            best_val = val_loss;
            best = mlp.clone();
            best_epoch = epoch;
            since_best = 0;
            plateau_bad = 0;
        } else {
            since_best += 1;
            plateau_bad += 1;
            if let Some(p) = params.plateau {
                if plateau_bad > p.patience {
                    lr *= p.factor;
                    plateau_bad = 0;
                    log::debug!("reducing learning rate to {lr:.3e}");
                }
            }
        }
        if since_best > params.patience {
            break;
        }
    }

    FitOutcome {
        best,
        best_epoch,
        best_val_loss: best_val,
        epochs_run: val_curve.len(),
        train_curve,
        val_curve,
    }
}
