//! Ordinary least-squares baseline on the same encoded features as the
//! surrogate.

use nalgebra::{DMatrix, DVector};

use crate::domain::{LoadGrid, MaterialConfig, Normalizer, RomTable, INPUT_DIM};
use crate::error::{Error, Result};
use crate::oracle::Dataset;

/// `rom ≈ w · x + b` with `x` the encoded 15-feature input.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: [f64; INPUT_DIM],
    bias: f64,
    normalizer: Normalizer,
}

impl LinearModel {
    /// Solves the normal equations on every record of `dataset`.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let normalizer = Normalizer::with_output_range(0.0, 1.0);
        let n = dataset.records().len();
        let mut a = DMatrix::zeros(n, INPUT_DIM + 1);
        let mut b = DVector::zeros(n);
        let mut row = [0.0; INPUT_DIM];
        for (i, r) in dataset.records().iter().enumerate() {
            normalizer.encode_input(r.load_case, r.moment, r.config.values(), &mut row);
            for (j, v) in row.iter().enumerate() {
                a[(i, j)] = *v;
            }
            a[(i, INPUT_DIM)] = 1.0;
            b[i] = r.rom;
        }
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        let solution = ata
            .lu()
            .solve(&atb)
            .ok_or_else(|| Error::InvalidConfig("least-squares system is singular".into()))?;
        let mut weights = [0.0; INPUT_DIM];
        weights.copy_from_slice(&solution.as_slice()[..INPUT_DIM]);
        Ok(Self {
            weights,
            bias: solution[INPUT_DIM],
            normalizer,
        })
    }

    pub fn weights(&self) -> &[f64; INPUT_DIM] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn predict_table(&self, config: &MaterialConfig, grid: &LoadGrid) -> RomTable {
        let mut row = [0.0; INPUT_DIM];
        let values = grid
            .cells()
            .map(|(case, moment)| {
                self.normalizer.encode_input(case, moment, config.values(), &mut row);
                self.bias + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
            })
            .collect();
        RomTable::new(grid.clone(), values).expect("finite linear predictions")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::MaterialBounds;
    use crate::oracle::DatasetRecord;

    #[test]
    fn recovers_exact_linear_target() {
        let grid = LoadGrid::default();
        let configs = crate::sampling::lhs_sample(8, 2);
        let records = configs
            .iter()
            .enumerate()
            .flat_map(|(id, c)| {
                grid.cells().map(move |(load_case, moment)| DatasetRecord {
                    config_id: id as u64,
                    config: *c,
                    load_case,
                    moment,
                    rom: 1.0 + 2.0 * moment + 0.5 * c.values()[3],
                })
            })
            .collect();
        let ds = Dataset::new(records, MaterialBounds::default()).unwrap();
        let model = LinearModel::fit(&ds).unwrap();
        let t = model.predict_table(&configs[1], &grid);
        for ((_, m), v) in grid.cells().zip(t.values()) {
            let expected = 1.0 + 2.0 * m + 0.5 * configs[1].values()[3];
            assert!((v - expected).abs() < 1e-8, "{v} vs {expected}");
        }
    }
}
