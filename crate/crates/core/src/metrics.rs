//! Scores for RoM tables: grid MAE, per-load-case R² and their mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{LoadCase, RomTable};
use crate::error::{Error, Result};

fn check_grids(y: &RomTable, yhat: &RomTable) -> Result<()> {
    if y.grid() != yhat.grid() {
        return Err(Error::GridMismatch(format!(
            "{} cells vs {} cells on different load cases or moments",
            y.grid().len(),
            yhat.grid().len()
        )));
    }
    Ok(())
}

/// Mean absolute error over every (load case, moment) cell, in degrees.
pub fn mae(y: &RomTable, yhat: &RomTable) -> Result<f64> {
    check_grids(y, yhat)?;
    let sum: f64 = y.values().iter().zip(yhat.values()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / y.values().len() as f64)
}

/// MAE restricted to each load case.
pub fn mae_per_case(y: &RomTable, yhat: &RomTable) -> Result<BTreeMap<LoadCase, f64>> {
    check_grids(y, yhat)?;
    Ok(y.grid()
        .load_cases()
        .iter()
        .enumerate()
        .map(|(ci, &case)| {
            let a = y.case_values(ci);
            let b = yhat.case_values(ci);
            let sum: f64 = a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum();
            (case, sum / a.len() as f64)
        })
        .collect())
}

/// Coefficient of determination of `yhat` against `y`.
///
/// Fails with [`Error::DegenerateVariance`] when `y` is constant; the
/// `case` argument only labels that error.
pub fn r2(y: &[f64], yhat: &[f64], case: LoadCase) -> Result<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if y.len() < 2 || ss_tot == 0.0 {
        return Err(Error::DegenerateVariance(case));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// R² over the moments of each load case.
pub fn r2_per_case(y: &RomTable, yhat: &RomTable) -> Result<BTreeMap<LoadCase, f64>> {
    check_grids(y, yhat)?;
    y.grid()
        .load_cases()
        .iter()
        .enumerate()
        .map(|(ci, &case)| Ok((case, r2(y.case_values(ci), yhat.case_values(ci), case)?)))
        .collect()
}

/// Arithmetic mean of [`r2_per_case`].
pub fn r2_mean(y: &RomTable, yhat: &RomTable) -> Result<f64> {
    let per_case = r2_per_case(y, yhat)?;
    Ok(per_case.values().sum::<f64>() / per_case.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mae_deg: f64,
    pub r2_per_load_case: BTreeMap<LoadCase, f64>,
    pub r2_mean: f64,
}

impl ScoreReport {
    pub fn new(y: &RomTable, yhat: &RomTable) -> Result<Self> {
        let r2_per_load_case = r2_per_case(y, yhat)?;
        let r2_mean = r2_per_load_case.values().sum::<f64>() / r2_per_load_case.len() as f64;
        Ok(Self {
            mae_deg: mae(y, yhat)?,
            r2_per_load_case,
            r2_mean,
        })
    }
}

/// Mean of the per-target reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
}

impl Summary {
    pub fn from_reports(reports: &[ScoreReport]) -> Self {
        let maes: Vec<f64> = reports.iter().map(|r| r.mae_deg).collect();
        let r2s: Vec<f64> = reports.iter().map(|r| r.r2_mean).collect();
        let (mae_mean, mae_std) = mean_std(&maes);
        let (r2_mean, r2_std) = mean_std(&r2s);
        Self {
            count: reports.len(),
            mae_mean,
            mae_std,
            r2_mean,
            r2_std,
        }
    }
}

/// Mean and population standard deviation; `(NaN, NaN)` for no values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
