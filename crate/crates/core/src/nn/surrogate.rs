//! The RoM surrogate: `[load case, moment, p] → RoM`, trained on simulator
//! samples and then frozen for input-space optimization.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::fit::{fit, FitParams, LossKind, Split};
use super::mlp::{Mlp, OutputActivation};
use crate::domain::{LoadGrid, MaterialConfig, Normalizer, RomTable, INPUT_DIM, N_PARAMS};
use crate::error::{Error, Result};
use crate::oracle::Dataset;
use crate::sampling::{derive_seed, seeded_rng};

/// Surrogate architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_widths: Vec<usize>,
    pub dropout: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping_patience: usize,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::n1024()
    }
}

impl NetConfig {
    /// Preset tuned for the 512- and 1024-config datasets.
    pub fn n1024() -> Self {
        Self {
            hidden_widths: vec![256, 128, 64, 32, 16],
            dropout: 0.01,
            weight_decay: 5.16293e-06,
            learning_rate: 0.000555,
            batch_size: 20,
            max_epochs: 300,
            early_stopping_patience: 23,
            loss: LossKind::L1,
            seed: 0,
        }
    }

    /// Preset tuned for the 128-config dataset.
    pub fn n128() -> Self {
        Self {
            hidden_widths: vec![128, 64, 32, 16, 8],
            dropout: 0.01,
            weight_decay: 5.16442e-06,
            learning_rate: 0.000559,
            batch_size: 14,
            max_epochs: 231,
            early_stopping_patience: 26,
            loss: LossKind::L1,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "n1024" | "n512" => Some(Self::n1024()),
            "n128" => Some(Self::n128()),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.batch_size == 0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "learning rate and batch size must be positive, weight decay non-negative".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn fit_params(&self) -> FitParams {
        FitParams {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.early_stopping_patience,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            loss: self.loss,
            plateau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub wall_time_secs: f64,
}

/// What [`SurrogateNet::input_gradient`] differentiates.
#[derive(Debug, Clone, Copy)]
pub enum InputObjective<'a> {
    /// Sum of the raw (normalized) network outputs.
    OutputSum,
    /// Mean loss against normalized targets, one per row.
    Loss { targets: &'a [f64], kind: LossKind },
}

const MODEL_FORMAT: &str = "disc-calib-surrogate";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    config: NetConfig,
    normalizer: Normalizer,
    frozen: bool,
    network: Mlp,
}

/// Trained RoM surrogate with its feature normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateNet {
    mlp: Mlp,
    config: NetConfig,
    normalizer: Normalizer,
    frozen: bool,
}

impl SurrogateNet {
    /// Wraps an existing network; the result is not frozen.
    pub fn from_parts(mlp: Mlp, config: NetConfig, normalizer: Normalizer) -> Result<Self> {
        if mlp.input_dim() != INPUT_DIM || mlp.output_dim() != 1 {
            return Err(Error::Shape {
                expected: format!("{INPUT_DIM} inputs and 1 output"),
                actual: format!("{} inputs and {} outputs", mlp.input_dim(), mlp.output_dim()),
            });
        }
        Ok(Self {
            mlp,
            config,
            normalizer,
            frozen: false,
        })
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Encoded input rows for every cell of `grid` at each parameter vector,
    /// `params.len() × grid.len()` rows, config-major.
    pub fn encode_inputs(&self, params: &[[f64; N_PARAMS]], grid: &LoadGrid) -> Array2<f64> {
        let k = grid.len();
        let mut x = Array2::zeros((params.len() * k, INPUT_DIM));
        for (i, p) in params.iter().enumerate() {
            for (cell, (case, moment)) in grid.cells().enumerate() {
                let mut row = x.row_mut(i * k + cell);
                self.normalizer
                    .encode_input(case, moment, p, row.as_slice_mut().expect("row-major"));
            }
        }
        x
    }

    /// Inference on encoded inputs; returns normalized RoM per row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != INPUT_DIM {
            return Err(Error::Shape {
                expected: format!("{INPUT_DIM} input columns"),
                actual: x.ncols().to_string(),
            });
        }
        Ok(self.mlp.forward(x)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode gradient of `objective` with respect to every input entry.
    pub fn input_gradient(&self, x: ArrayView2<f64>, objective: InputObjective<'_>) -> Result<Array2<f64>> {
        if !self.frozen {
            return Err(Error::FrozenRequired);
        }
        if let InputObjective::Loss { targets, .. } = objective {
            if targets.len() != x.nrows() {
                return Err(Error::Shape {
                    expected: format!("{} targets", x.nrows()),
                    actual: targets.len().to_string(),
                });
            }
        }
        let (_, grad) = self.mlp.input_gradient_with(x, |out| match objective {
            InputObjective::OutputSum => Array2::ones(out.raw_dim()),
            InputObjective::Loss { targets, kind } => {
                let t = ArrayView2::from_shape((targets.len(), 1), targets).expect("column of targets");
                kind.gradient(out.view(), t)
            }
        })?;
        Ok(grad)
    }

    /// Output and input gradient in one pass, with a caller-supplied
    /// `∂L/∂output`. Requires a frozen network.
    pub fn output_and_input_gradient<F>(&self, x: ArrayView2<f64>, d_loss: F) -> Result<(Vec<f64>, Array2<f64>)>
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        if !self.frozen {
            return Err(Error::FrozenRequired);
        }
        let (out, grad) = self.mlp.input_gradient_with(x, |out| {
            let d = d_loss(out.as_slice().expect("contiguous output"));
            Array2::from_shape_vec(out.raw_dim(), d).expect("one gradient per output")
        })?;
        Ok((out.into_raw_vec_and_offset().0, grad))
    }

    /// Predicted RoM tables in degrees for raw normalized parameter vectors,
    /// which may lie outside the unit cube.
    pub fn predict_raw(&self, params: &[[f64; N_PARAMS]], grid: &LoadGrid) -> Vec<RomTable> {
        if params.is_empty() {
            return Vec::new();
        }
        let x = self.encode_inputs(params, grid);
        let out = self.forward(x.view()).expect("encoded inputs have network width");
        out.chunks(grid.len())
            .map(|chunk| {
                let values = chunk.iter().map(|&v| self.normalizer.decode_output(v)).collect();
                RomTable::new(grid.clone(), values).expect("finite predictions")
            })
            .collect()
    }

    pub fn predict_tables(&self, configs: &[MaterialConfig], grid: &LoadGrid) -> Vec<RomTable> {
        let params: Vec<[f64; N_PARAMS]> = configs.iter().map(|c| *c.values()).collect();
        self.predict_raw(&params, grid)
    }

    /// Predicted RoM in degrees on every cell of `grid`.
    pub fn predict_table(&self, config: &MaterialConfig, grid: &LoadGrid) -> RomTable {
        self.predict_raw(&[*config.values()], grid).remove(0)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: self.config.clone(),
            normalizer: self.normalizer.clone(),
            frozen: self.frozen,
            network: self.mlp.clone(),
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(format!("unsupported model format {} v{}", file.format, file.version));
        }
        let mut net = Self::from_parts(file.network, file.config, file.normalizer).map_err(|e| e.to_string())?;
        net.frozen = file.frozen;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|m| Error::format(path, m))
    }
}

/// Splits config ids into (train, validation): the ids are shuffled and the
/// last `ceil(val_fraction · n)` become the validation set.
pub fn split_configs(ids: &[u64], val_fraction: f64, seed: u64) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(val_fraction > 0.0 && val_fraction <= 0.5) {
        return Err(Error::InvalidConfig(format!("val_fraction {val_fraction} not in (0, 0.5]")));
    }
    if ids.len() < 2 {
        return Err(Error::InvalidConfig(
            "training needs at least two configs for a validation split".into(),
        ));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut seeded_rng(derive_seed(seed, 0)));
    let n_val = ((val_fraction * ids.len() as f64).ceil() as usize).clamp(1, ids.len() - 1);
    let val = shuffled.split_off(ids.len() - n_val);
    Ok((shuffled, val))
}

/// Trains a surrogate with a shuffled by-config validation split.
pub fn train(dataset: &Dataset, config: &NetConfig, val_fraction: f64) -> Result<(SurrogateNet, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_ids, val_ids) = split_configs(&dataset.config_ids(), val_fraction, config.seed)?;
    train_with_split(dataset, config, &train_ids, &val_ids)
}

fn encode_records(dataset: &Dataset, ids: &[u64], normalizer: &Normalizer) -> (Array2<f64>, Array2<f64>) {
    let mut selected = vec![false; 0];
    let max_id = ids.iter().copied().max().unwrap_or(0) as usize;
    selected.resize(max_id + 1, false);
    for &id in ids {
        selected[id as usize] = true;
    }
    // Records are taken in dataset order, independent of `ids` order.
    let rows: Vec<_> = dataset
        .records()
        .iter()
        .filter(|r| selected.get(r.config_id as usize).copied().unwrap_or(false))
        .collect();
    let mut x = Array2::zeros((rows.len(), INPUT_DIM));
    let mut y = Array2::zeros((rows.len(), 1));
    for (i, r) in rows.iter().enumerate() {
        let mut row = x.row_mut(i);
        normalizer.encode_input(r.load_case, r.moment, r.config.values(), row.as_slice_mut().expect("row-major"));
        y[[i, 0]] = normalizer.encode_output(r.rom);
    }
    (x, y)
}

/// Trains on the configs in `train_ids`, early-stopping on `val_ids`.
///
/// The output normalizer is fitted to the RoM range of the whole dataset.
/// The returned network is the best validation checkpoint, frozen.
pub fn train_with_split(
    dataset: &Dataset,
    config: &NetConfig,
    train_ids: &[u64],
    val_ids: &[u64],
) -> Result<(SurrogateNet, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    let start = Instant::now();
    let (lo, hi) = dataset
        .records()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.rom), hi.max(r.rom)));
    let normalizer = Normalizer::with_output_range(lo, hi);
    let (train_x, train_y) = encode_records(dataset, train_ids, &normalizer);
    let (val_x, val_y) = encode_records(dataset, val_ids, &normalizer);
    if train_x.nrows() == 0 || val_x.nrows() == 0 {
        return Err(Error::InvalidConfig("train and validation splits must be non-empty".into()));
    }

    let mut init_rng = seeded_rng(derive_seed(config.seed, 1));
    let mlp = Mlp::he_uniform(INPUT_DIM, &config.hidden_widths, 1, OutputActivation::Identity, &mut init_rng);
    let mut fit_rng = seeded_rng(derive_seed(config.seed, 2));
    log::info!(
        "training surrogate {:?} on {} rows ({} validation), seed {}",
        config.hidden_widths,
        train_x.nrows(),
        val_x.nrows(),
        config.seed
    );
    let outcome = fit(
        mlp,
        Split {
            x: train_x.view(),
            y: train_y.view(),
        },
        Split {
            x: val_x.view(),
            y: val_y.view(),
        },
        &config.fit_params(),
        &mut fit_rng,
    );
    let mut net = SurrogateNet::from_parts(outcome.best, config.clone(), normalizer)?;
    net.freeze();
    let report = TrainReport {
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        train_curve: outcome.train_curve,
        val_curve: outcome.val_curve,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "surrogate trained: {} epochs, best val loss {:.5} at epoch {}, {:.1}s",
        report.epochs_run,
        report.best_val_loss,
        report.best_epoch,
        report.wall_time_secs
    );
    Ok((net, report))
}
