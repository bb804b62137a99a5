//! Direct inverse regression from a full RoM table to parameters.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationResult;
use crate::domain::{LoadGrid, Normalizer, RomTable, N_PARAMS};
use crate::error::{Error, Result};
use crate::nn::fit::{fit, FitParams, LossKind, Plateau, Split};
use crate::nn::mlp::{Mlp, OutputActivation};
use crate::nn::{SurrogateNet, TrainReport};
use crate::sampling::{derive_seed, seeded_rng, uniform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseNetConfig {
    pub hidden_widths: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub early_stopping_patience: usize,
    pub dropout: f64,
    pub plateau: Plateau,
    pub train_set_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for InverseNetConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![128, 256, 256, 256, 128],
            learning_rate: 0.000654,
            batch_size: 48,
            max_epochs: 776,
            weight_decay: 6e-6,
            early_stopping_patience: 50,
            dropout: 0.028433,
            plateau: Plateau {
                patience: 18,
                factor: 0.05,
            },
            train_set_size: 50_000,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

const MODEL_FORMAT: &str = "disc-calib-inverse";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: InverseNetConfig,
    normalizer: Normalizer,
    network: Mlp,
}

/// RoM table on the default grid → normalized parameters in `(0, 1)^13`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseNet {
    mlp: Mlp,
    config: InverseNetConfig,
    /// RoM scaling shared with the surrogate that produced the training data.
    normalizer: Normalizer,
}

impl InverseNet {
    pub fn config(&self) -> &InverseNetConfig {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Predicted parameters for each table; every table must be on the
    /// default 4 × 5 grid.
    pub fn predict(&self, tables: &[RomTable]) -> Result<Vec<[f64; N_PARAMS]>> {
        let grid = LoadGrid::default();
        let mut x = Array2::zeros((tables.len(), grid.len()));
        for (i, t) in tables.iter().enumerate() {
            if t.grid() != &grid {
                return Err(Error::GridMismatch(format!(
                    "the inverse model needs the default {}-cell grid, got {} cells",
                    grid.len(),
                    t.grid().len()
                )));
            }
            for (j, &v) in t.values().iter().enumerate() {
                x[[i, j]] = self.normalizer.encode_output(v);
            }
        }
        let out = self.mlp.forward(x.view())?;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| {
                let mut p = [0.0; N_PARAMS];
                for (o, v) in p.iter_mut().zip(r.iter()) {
                    *o = *v;
                }
                p
            })
            .collect())
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            network: self.mlp.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported model format {} v{}", file.format, file.version),
            ));
        }
        Ok(Self {
            mlp: file.network,
            config: file.config,
            normalizer: file.normalizer,
        })
    }
}

/// Trains the inverse model on uniform configurations labelled by the
/// surrogate's own RoM predictions.
pub fn train_inverse(net: &SurrogateNet, config: &InverseNetConfig) -> Result<(InverseNet, TrainReport)> {
    if !net.is_frozen() {
        return Err(Error::FrozenRequired);
    }
    if config.train_set_size < 2 || !(config.val_fraction > 0.0 && config.val_fraction <= 0.5) {
        return Err(Error::InvalidConfig(
            "inverse training needs at least two samples and val_fraction in (0, 0.5]".into(),
        ));
    }
    let start = Instant::now();
    let grid = LoadGrid::default();
    let k = grid.len();
    let n = config.train_set_size;
    let params: Vec<[f64; N_PARAMS]> = uniform(n, N_PARAMS, derive_seed(config.seed, 0))
        .into_iter()
        .map(|row| {
            let mut p = [0.0; N_PARAMS];
            p.copy_from_slice(&row);
            p
        })
        .collect();
    let inputs = net.encode_inputs(&params, &grid);
    let rom = net.forward(inputs.view())?;
    let x = Array2::from_shape_vec((n, k), rom).expect("k outputs per config");
    let y = Array2::from_shape_fn((n, N_PARAMS), |(i, j)| params[i][j]);

    let n_val = ((config.val_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let n_train = n - n_val;
    let mut init_rng = seeded_rng(derive_seed(config.seed, 1));
    let mlp = Mlp::he_uniform(k, &config.hidden_widths, N_PARAMS, OutputActivation::Sigmoid, &mut init_rng);
    let params = FitParams {
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        max_epochs: config.max_epochs,
        patience: config.early_stopping_patience,
        weight_decay: config.weight_decay,
        dropout: config.dropout,
        loss: LossKind::L1,
        plateau: Some(config.plateau),
    };
    let mut fit_rng = seeded_rng(derive_seed(config.seed, 2));
    log::info!("training inverse model on {n_train} samples ({n_val} validation)");
    let outcome = fit(
        mlp,
        Split {
            x: x.slice(ndarray::s![..n_train, ..]),
            y: y.slice(ndarray::s![..n_train, ..]),
        },
        Split {
            x: x.slice(ndarray::s![n_train.., ..]),
            y: y.slice(ndarray::s![n_train.., ..]),
        },
        &params,
        &mut fit_rng,
    );
    let report = TrainReport {
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        train_curve: outcome.train_curve,
        val_curve: outcome.val_curve,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let inverse = InverseNet {
        mlp: outcome.best,
        config: config.clone(),
        normalizer: net.normalizer().clone(),
    };
    Ok((inverse, report))
}

/// One forward pass of the inverse model, scored on the surrogate.
pub fn inverse_calibrate(inverse: &InverseNet, net: &SurrogateNet, targets: &RomTable) -> Result<CalibrationResult> {
    let start = Instant::now();
    let params = inverse.predict(std::slice::from_ref(targets))?.remove(0);
    let mut result = CalibrationResult::evaluate("inverse", net, params, targets)?;
    result.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(result)
}
