//! Calibration by projected gradient descent on the inputs of a frozen
//! surrogate.
//!
//! A search matrix holds one row per grid cell: two fixed condition columns
//! (encoded load case and moment) followed by the candidate parameters.
//! Every step moves the parameter block along `-∇_X L` and then projects it
//! back onto identical, in-bounds rows. Many restarts are stacked into one
//! matrix and advanced together.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::domain::{LoadCase, LoadGrid, MaterialBounds, RomTable, N_PARAMS};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::adam::Adam;
use crate::nn::fit::{sign, LossKind};
use crate::nn::SurrogateNet;
use crate::sampling::uniform_sample;

/// Number of leading condition columns in a search matrix.
pub const N_CONDITIONS: usize = 2;

/// How iterates are kept inside the unit box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConstraintMode {
    /// Row mean, clip to `[0, 1]`, broadcast.
    Projection,
    /// Row mean only, with `weight · sum_exceeding` added to the loss.
    Penalty { weight: f64 },
    /// Row mean only.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    VanillaGd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub eta: f64,
    pub steps: usize,
    pub restarts: usize,
    pub loss: LossKind,
    pub constraint_mode: ConstraintMode,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            eta: 0.05,
            steps: 300,
            restarts: 500,
            loss: LossKind::L1,
            constraint_mode: ConstraintMode::Projection,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be non-negative, got {}", self.eta)));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("at least one restart is required".into()));
        }
        if let ConstraintMode::Penalty { weight } = self.constraint_mode {
            if weight.is_nan() || weight < 0.0 {
                return Err(Error::InvalidConfig(format!("penalty weight must be non-negative, got {weight}")));
            }
        }
        Ok(())
    }
}

/// Total violation of the unit box: `Σ max(0, v - 1) + max(0, -v)`.
pub fn sum_exceeding(values: &[f64]) -> f64 {
    values.iter().map(|&v| (v - 1.0).max(0.0) + (-v).max(0.0)).sum()
}

/// Mean over rows that is exact when all rows agree.
fn row_mean(x: ArrayView2<f64>, col: usize) -> f64 {
    let first = x[[0, col]];
    let k = x.nrows() as f64;
    first + x.column(col).iter().map(|v| v - first).sum::<f64>() / k
}

fn tie_rows(x: &mut Array2<f64>, clip: bool) {
    for col in N_CONDITIONS..x.ncols() {
        let mut v = row_mean(x.view(), col);
        if clip {
            v = v.clamp(0.0, 1.0);
        }
        x.column_mut(col).fill(v);
    }
}

/// Replaces the parameter block of `x` by `1_k · clip(mean over rows)`.
///
/// Condition columns are copied unchanged. The result is a fixed point:
/// projecting it again returns it bit for bit.
pub fn project(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    if out.nrows() > 0 {
        tie_rows(&mut out, true);
    }
    out
}

enum Optimizer {
    Adam(Adam),
    Vanilla,
}

/// Search matrices for a batch of restarts plus their optimizer state.
///
/// Row `r · k + i` holds grid cell `i` of restart `r`.
pub struct SearchState {
    x: Array2<f64>,
    k: usize,
    optimizer: Optimizer,
}

impl SearchState {
    /// One block per initial parameter vector, condition columns from `grid`.
    pub fn new(net: &SurrogateNet, grid: &LoadGrid, inits: &[[f64; N_PARAMS]], optimizer: OptimizerKind) -> Self {
        let x = net.encode_inputs(inits, grid);
        Self::from_matrix(x, grid.len(), optimizer)
    }

    /// Wraps a prepared matrix of stacked `k`-row blocks.
    pub fn from_matrix(x: Array2<f64>, k: usize, optimizer: OptimizerKind) -> Self {
        assert!(k > 0 && x.nrows().is_multiple_of(k), "matrix rows must be a multiple of k");
        let n_params = x.nrows() * (x.ncols() - N_CONDITIONS);
        let optimizer = match optimizer {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n_params)),
            OptimizerKind::VanillaGd => Optimizer::Vanilla,
        };
        Self { x, k, optimizer }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn rows_per_restart(&self) -> usize {
        self.k
    }

    pub fn restarts(&self) -> usize {
        self.x.nrows() / self.k
    }

    /// Parameters of restart `r`, read from its first row.
    pub fn params(&self, r: usize) -> [f64; N_PARAMS] {
        let mut out = [0.0; N_PARAMS];
        let row = self.x.row(r * self.k);
        for (o, v) in out.iter_mut().zip(row.iter().skip(N_CONDITIONS)) {
            *o = *v;
        }
        out
    }

    fn constrain(&mut self, mode: ConstraintMode) {
        let clip = matches!(mode, ConstraintMode::Projection);
        for r in 0..self.restarts() {
            let mut block = self.x.slice_mut(s![r * self.k..(r + 1) * self.k, ..]).to_owned();
            tie_rows(&mut block, clip);
            self.x.slice_mut(s![r * self.k..(r + 1) * self.k, ..]).assign(&block);
        }
    }
}

/// Per-restart loss of `out` against `targets`, both normalized, plus the
/// penalty term where applicable.
fn restart_losses(out: &[f64], targets: &[f64], state: &SearchState, config: &PgdConfig) -> Vec<f64> {
    let k = state.k;
    (0..state.restarts())
        .map(|r| {
            let pred = &out[r * k..(r + 1) * k];
            let mut loss = pred
                .iter()
                .zip(targets)
                .map(|(p, t)| match config.loss {
                    LossKind::L1 => (p - t).abs(),
                    LossKind::L2 => (p - t) * (p - t),
                })
                .sum::<f64>()
                / k as f64;
            if let ConstraintMode::Penalty { weight } = config.constraint_mode {
                loss += weight * sum_exceeding(&state.params(r));
            }
            loss
        })
        .collect()
}

/// One optimizer step on the parameter columns followed by the configured
/// constraint. `targets` holds the `k` normalized target outputs; they are
/// shared by every restart. Returns each restart's loss before the step.
pub fn pgd_step(state: &mut SearchState, net: &SurrogateNet, targets: &[f64], config: &PgdConfig) -> Result<Vec<f64>> {
    let k = state.k;
    if targets.len() != k {
        return Err(Error::Shape {
            expected: format!("{k} targets"),
            actual: targets.len().to_string(),
        });
    }
    let loss = config.loss;
    let (out, grad) = net.output_and_input_gradient(state.x.view(), |out| {
        out.iter()
            .enumerate()
            .map(|(i, &p)| {
                let t = targets[i % k];
                match loss {
                    LossKind::L1 => sign(p - t) / k as f64,
                    LossKind::L2 => 2.0 * (p - t) / k as f64,
                }
            })
            .collect()
    })?;
    let losses = restart_losses(&out, targets, state, config);

    let n_cols = state.x.ncols() - N_CONDITIONS;
    let mut params: Vec<f64> = state.x.slice(s![.., N_CONDITIONS..]).iter().copied().collect();
    let mut g: Vec<f64> = grad.slice(s![.., N_CONDITIONS..]).iter().copied().collect();
    if let ConstraintMode::Penalty { weight } = config.constraint_mode {
        // The penalty acts on the tied row; spread its gradient over k rows.
        for (gi, &v) in g.iter_mut().zip(&params) {
            let d = if v > 1.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gi += weight * d / k as f64;
        }
    }
    match &mut state.optimizer {
        Optimizer::Adam(adam) => adam.step(&mut params, &g, config.eta),
        Optimizer::Vanilla => {
            for (p, gi) in params.iter_mut().zip(&g) {
                *p -= config.eta * gi;
            }
        }
    }
    let updated = Array2::from_shape_vec((state.x.nrows(), n_cols), params).expect("parameter block shape");
    state.x.slice_mut(s![.., N_CONDITIONS..]).assign(&updated);
    state.constrain(config.constraint_mode);
    Ok(losses)
}

/// Target and prediction at one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub load_case: LoadCase,
    pub moment: f64,
    pub target: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: String,
    /// Normalized parameters; may leave `[0, 1]` without projection.
    pub calibrated: [f64; N_PARAMS],
    pub calibrated_physical: [f64; N_PARAMS],
    pub sum_exceeding: f64,
    pub per_load_case_r2: BTreeMap<LoadCase, f64>,
    pub r2_mean: f64,
    pub mae_deg: f64,
    pub restarts_run: usize,
    pub best_restart_index: usize,
    /// Generations bred by the genetic search; absent for other methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generations_run: Option<usize>,
    /// Loss of the selected restart before each step and after the last.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_trace: Vec<f64>,
    pub table: Vec<TableRow>,
    /// Excluded from serialization so result files are reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl CalibrationResult {
    /// Scores `params` on `net` against `targets` and fills every field but
    /// the method-specific bookkeeping.
    pub fn evaluate(method: &str, net: &SurrogateNet, params: [f64; N_PARAMS], targets: &RomTable) -> Result<Self> {
        let predicted = net.predict_raw(&[params], targets.grid()).remove(0);
        let report = metrics::ScoreReport::new(targets, &predicted)?;
        let table = targets
            .entries()
            .zip(predicted.values())
            .map(|((load_case, moment, target), &predicted)| TableRow {
                load_case,
                moment,
                target,
                predicted,
            })
            .collect();
        Ok(Self {
            method: method.to_string(),
            calibrated: params,
            calibrated_physical: MaterialBounds::default().to_physical(&params),
            sum_exceeding: sum_exceeding(&params),
            per_load_case_r2: report.r2_per_load_case,
            r2_mean: report.r2_mean,
            mae_deg: report.mae_deg,
            restarts_run: 1,
            best_restart_index: 0,
            generations_run: None,
            loss_trace: Vec::new(),
            table,
            wall_time_secs: 0.0,
        })
    }

    /// Recomputes the physical values against non-default bounds.
    pub fn with_bounds(mut self, bounds: &MaterialBounds) -> Self {
        self.calibrated_physical = bounds.to_physical(&self.calibrated);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Restart score: mean R² with MAE as tie-breaker, higher is better.
pub(crate) fn fitness(targets: &RomTable, predicted: &RomTable) -> Result<(f64, f64)> {
    let r2 = metrics::r2_mean(targets, predicted)?;
    let mae = metrics::mae(targets, predicted)?;
    Ok((r2, -mae))
}

/// Index of the best score; earliest index wins ties.
pub(crate) fn argmax(scores: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = scores[best];
        if s.0 > b.0 || (s.0 == b.0 && s.1 > b.1) {
            best = i;
        }
    }
    best
}

/// Multi-restart PGD against a frozen surrogate.
///
/// Restarts start from i.i.d. uniform configurations, run `steps` updates in
/// one batch, and the restart with the highest mean R² on the surrogate's
/// predictions is returned.
pub fn calibrate(net: &SurrogateNet, targets: &RomTable, config: &PgdConfig) -> Result<CalibrationResult> {
    config.validate()?;
    if !net.is_frozen() {
        return Err(Error::FrozenRequired);
    }
    let start = Instant::now();
    let grid = targets.grid();
    let inits: Vec<[f64; N_PARAMS]> = uniform_sample(config.restarts, config.seed)
        .iter()
        .map(|c| *c.values())
        .collect();
    let mut state = SearchState::new(net, grid, &inits, config.optimizer);
    state.constrain(config.constraint_mode);
    let encoded: Vec<f64> = targets
        .values()
        .iter()
        .map(|&v| net.normalizer().encode_output(v))
        .collect();

    let mut history: Vec<Vec<f64>> = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        history.push(pgd_step(&mut state, net, &encoded, config)?);
    }

    let finals: Vec<[f64; N_PARAMS]> = (0..state.restarts()).map(|r| state.params(r)).collect();
    let out = net.forward(state.x.view())?;
    history.push(restart_losses(&out, &encoded, &state, config));
    let tables = net.predict_raw(&finals, grid);
    let scores = tables
        .iter()
        .map(|t| fitness(targets, t))
        .collect::<Result<Vec<_>>>()?;
    let best = argmax(&scores);

    let mut result = CalibrationResult::evaluate("pgd", net, finals[best], targets)?;
    result.restarts_run = state.restarts();
    result.best_restart_index = best;
    result.loss_trace = history.iter().map(|h| h[best]).collect();
    result.wall_time_secs = start.elapsed().as_secs_f64();
    log::debug!(
        "pgd: best restart {best} of {}, R2 {:.4}, MAE {:.4} deg, {:.2}s",
        result.restarts_run,
        result.r2_mean,
        result.mae_deg,
        result.wall_time_secs
    );
    Ok(result)
}
