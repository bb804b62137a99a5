//! Value types shared by every stage of the pipeline: the material parameter
//! box, load grids, RoM tables and the affine feature normalizer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of calibrated material parameters.
pub const N_PARAMS: usize = 13;

/// Network input width: load case, moment, then the material parameters.
pub const INPUT_DIM: usize = 2 + N_PARAMS;

/// One row of the bounds table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBound {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BoundsFile {
    params: Vec<ParamBound>,
}

/// Physical box constraints for the 13 material parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundsFile", into = "BoundsFile")]
pub struct MaterialBounds {
    names: Vec<String>,
    lower: [f64; N_PARAMS],
    upper: [f64; N_PARAMS],
}

const DEFAULT_BOUNDS: [(&str, f64, f64); N_PARAMS] = [
    ("C10n", 0.03, 0.21),
    ("C01n", 0.0075, 0.0525),
    ("C10a", 0.065, 0.455),
    ("k1", 1.0, 50.0),
    ("k2", 10.0, 200.0),
    ("kappa", 0.0, 0.33),
    ("k1c", -0.2, 0.0),
    ("k2c", -0.2, 0.0),
    ("k1r", -0.2, 0.0),
    ("k2r", -0.2, 0.0),
    ("alpha", 7.5, 52.5),
    ("alpha_c", 0.0, 0.3),
    ("alpha_r", 0.0, 0.2),
];

impl Default for MaterialBounds {
    /// The intervertebral-disc material parameter ranges.
    fn default() -> Self {
        let rows = DEFAULT_BOUNDS
            .iter()
            .map(|&(name, min, max)| ParamBound {
                name: name.to_string(),
                min,
                max,
            })
            .collect();
        Self::from_rows(rows).expect("embedded bounds table is valid")
    }
}

impl TryFrom<BoundsFile> for MaterialBounds {
    type Error = Error;

    fn try_from(file: BoundsFile) -> Result<Self> {
        Self::from_rows(file.params)
    }
}

impl From<MaterialBounds> for BoundsFile {
    fn from(b: MaterialBounds) -> Self {
        BoundsFile { params: b.rows() }
    }
}

impl MaterialBounds {
    pub fn from_rows(rows: Vec<ParamBound>) -> Result<Self> {
        if rows.len() != N_PARAMS {
            return Err(Error::InvalidConfig(format!(
                "bounds table needs {N_PARAMS} rows, found {}",
                rows.len()
            )));
        }
        let mut lower = [0.0; N_PARAMS];
        let mut upper = [0.0; N_PARAMS];
        let mut names = Vec::with_capacity(N_PARAMS);
        for (j, row) in rows.into_iter().enumerate() {
            if !(row.min.is_finite() && row.max.is_finite() && row.min < row.max) {
                return Err(Error::InvalidConfig(format!(
                    "bound for {} must satisfy min < max, got [{}, {}]",
                    row.name, row.min, row.max
                )));
            }
            lower[j] = row.min;
            upper[j] = row.max;
            names.push(row.name);
        }
        Ok(Self {
            names,
            lower,
            upper,
        })
    }

    pub fn rows(&self) -> Vec<ParamBound> {
        (0..N_PARAMS)
            .map(|j| ParamBound {
                name: self.names[j].clone(),
                min: self.lower[j],
                max: self.upper[j],
            })
            .collect()
    }

    /// Loads a bounds table from a `.toml` or `.json` file holding a
    /// `params` array of `{ name, min, max }` rows.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::format(path, e))
        } else {
            toml::from_str(&text).map_err(|e| Error::format(path, e))
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lower(&self) -> &[f64; N_PARAMS] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64; N_PARAMS] {
        &self.upper
    }

    /// Affine map from normalized to physical units; no range check.
    pub fn to_physical(&self, normalized: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
        std::array::from_fn(|j| self.lower[j] + normalized[j] * (self.upper[j] - self.lower[j]))
    }

    /// Affine map from physical to normalized units; no range check.
    pub fn to_normalized(&self, physical: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
        std::array::from_fn(|j| (physical[j] - self.lower[j]) / (self.upper[j] - self.lower[j]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Physical,
    Normalized,
}

/// A point in the material parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialConfig {
    values: [f64; N_PARAMS],
    space: Space,
}

impl MaterialConfig {
    /// Builds a normalized config; every value must lie in [0, 1].
    pub fn normalized(values: [f64; N_PARAMS]) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::BoundsViolation {
                    index,
                    value,
                    lower: 0.0,
                    upper: 1.0,
                });
            }
        }
        Ok(Self {
            values,
            space: Space::Normalized,
        })
    }

    /// Builds a physical config; every value must lie inside `bounds`.
    pub fn physical(values: [f64; N_PARAMS], bounds: &MaterialBounds) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            let (lower, upper) = (bounds.lower[index], bounds.upper[index]);
            if !(lower..=upper).contains(&value) {
                return Err(Error::BoundsViolation {
                    index,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(Self {
            values,
            space: Space::Physical,
        })
    }

    pub(crate) fn normalized_unchecked(values: [f64; N_PARAMS]) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            values,
            space: Space::Normalized,
        }
    }

    pub fn values(&self) -> &[f64; N_PARAMS] {
        &self.values
    }

    pub fn space(&self) -> Space {
        self.space
    }
}

/// Min-max normalizes a physical config against `bounds`.
pub fn normalize(config: &MaterialConfig, bounds: &MaterialBounds) -> Result<MaterialConfig> {
    if config.space != Space::Physical {
        return Err(Error::InvalidConfig("normalize expects a physical config".into()));
    }
    // Re-validate: the config may have been built against different bounds.
    let physical = MaterialConfig::physical(config.values, bounds)?;
    let mut values = bounds.to_normalized(&physical.values);
    // Guard against rounding just outside the unit interval.
    for v in &mut values {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(MaterialConfig::normalized_unchecked(values))
}

/// Inverse of [`normalize`].
///
/// Returns the physical config and whether it lies inside `bounds`. Normalized
/// inputs are already range-checked by construction, so the flag is only
/// `false` when bounds narrower than the normalizing ones are supplied.
pub fn denormalize(config: &MaterialConfig, bounds: &MaterialBounds) -> Result<(MaterialConfig, bool)> {
    if config.space != Space::Normalized {
        return Err(Error::InvalidConfig("denormalize expects a normalized config".into()));
    }
    let values = bounds.to_physical(&config.values);
    let within = values
        .iter()
        .enumerate()
        .all(|(j, v)| (bounds.lower[j]..=bounds.upper[j]).contains(v));
    Ok((
        MaterialConfig {
            values,
            space: Space::Physical,
        },
        within,
    ))
}

/// Loading direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadCase {
    AxialRotation,
    Extension,
    Flexion,
    LateralBending,
}

impl LoadCase {
    pub const ALL: [LoadCase; 4] = [
        LoadCase::AxialRotation,
        LoadCase::Extension,
        LoadCase::Flexion,
        LoadCase::LateralBending,
    ];

    /// 1-based numeric code used as the network's load-case feature.
    pub fn code(self) -> u8 {
        match self {
            LoadCase::AxialRotation => 1,
            LoadCase::Extension => 2,
            LoadCase::Flexion => 3,
            LoadCase::LateralBending => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LoadCase::AxialRotation => "axial_rotation",
            LoadCase::Extension => "extension",
            LoadCase::Flexion => "flexion",
            LoadCase::LateralBending => "lateral_bending",
        }
    }
}

impl fmt::Display for LoadCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LoadCase {
    type Err = String;

    /// Accepts the snake_case name or the numeric code 1–4.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(code) = s.parse::<u8>() {
            return LoadCase::from_code(code).ok_or_else(|| format!("unknown load case code {code}"));
        }
        LoadCase::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown load case {s:?}"))
    }
}

/// The (load case × moment) evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadGrid {
    load_cases: Vec<LoadCase>,
    moments: Vec<f64>,
}

impl Default for LoadGrid {
    /// All four load cases at 1–5 Nm.
    fn default() -> Self {
        Self::new(LoadCase::ALL.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0]).expect("valid default grid")
    }
}

impl LoadGrid {
    pub fn new(load_cases: Vec<LoadCase>, moments: Vec<f64>) -> Result<Self> {
        if load_cases.is_empty() || moments.is_empty() {
            return Err(Error::InvalidConfig("load grid must be non-empty".into()));
        }
        for (i, c) in load_cases.iter().enumerate() {
            if load_cases[..i].contains(c) {
                return Err(Error::InvalidConfig(format!("duplicate load case {c}")));
            }
        }
        if moments.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidConfig("moments must be finite and positive".into()));
        }
        if moments.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("moments must be strictly increasing".into()));
        }
        Ok(Self {
            load_cases,
            moments,
        })
    }

    /// All four load cases at the given moments.
    pub fn with_moments(moments: Vec<f64>) -> Result<Self> {
        Self::new(LoadCase::ALL.to_vec(), moments)
    }

    pub fn load_cases(&self) -> &[LoadCase] {
        &self.load_cases
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// Number of cells, `k = |load cases| × |moments|`.
    pub fn len(&self) -> usize {
        self.load_cases.len() * self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in row-major order (load case, then moment).
    pub fn cells(&self) -> impl Iterator<Item = (LoadCase, f64)> + '_ {
        self.load_cases
            .iter()
            .flat_map(move |&c| self.moments.iter().map(move |&m| (c, m)))
    }

    pub fn cell_index(&self, case: LoadCase, moment: f64) -> Option<usize> {
        let ci = self.load_cases.iter().position(|&c| c == case)?;
        let mi = self.moments.iter().position(|&m| m == moment)?;
        Some(ci * self.moments.len() + mi)
    }
}

/// RoM values in degrees, one per grid cell, row-major by load case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomTable {
    grid: LoadGrid,
    values: Vec<f64>,
}

impl RomTable {
    pub fn new(grid: LoadGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape {
                expected: format!("{} RoM values", grid.len()),
                actual: values.len().to_string(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite RoM value {bad}")));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &LoadGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// RoM values of one load case across the grid's moments.
    pub fn case_values(&self, case_index: usize) -> &[f64] {
        let n = self.grid.moments.len();
        &self.values[case_index * n..(case_index + 1) * n]
    }

    /// Multiplies every value of one load case by `factor`.
    pub fn scale_case(&mut self, case_index: usize, factor: f64) {
        let n = self.grid.moments.len();
        for v in &mut self.values[case_index * n..(case_index + 1) * n] {
            *v *= factor;
        }
    }

    /// Cells as `(load case, moment, rom)` triples in grid order.
    pub fn entries(&self) -> impl Iterator<Item = (LoadCase, f64, f64)> + '_ {
        self.grid.cells().zip(&self.values).map(|((c, m), &r)| (c, m, r))
    }
}

/// Affine scaling of network features and outputs.
///
/// Inputs are `[load case code, moment, p1..p13]`, where `p` is already in
/// normalized material space. The map is affine and applies unclipped outside
/// the fitted range, so extrapolated moments are representable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_low: [f64; INPUT_DIM],
    pub input_high: [f64; INPUT_DIM],
    pub output_low: f64,
    pub output_high: f64,
}

impl Normalizer {
    /// Load case over [1, 4], moment over [1, 5] Nm, parameters over [0, 1],
    /// with the given RoM output range.
    pub fn with_output_range(output_low: f64, output_high: f64) -> Self {
        let mut input_low = [0.0; INPUT_DIM];
        let mut input_high = [1.0; INPUT_DIM];
        input_low[0] = 1.0;
        input_high[0] = 4.0;
        input_low[1] = 1.0;
        input_high[1] = 5.0;
        let output_high = if output_high - output_low > 1e-12 {
            output_high
        } else {
            output_low + 1.0
        };
        Self {
            input_low,
            input_high,
            output_low,
            output_high,
        }
    }

    pub fn encode_feature(&self, j: usize, v: f64) -> f64 {
        (v - self.input_low[j]) / (self.input_high[j] - self.input_low[j])
    }

    pub fn decode_feature(&self, j: usize, v: f64) -> f64 {
        self.input_low[j] + v * (self.input_high[j] - self.input_low[j])
    }

    /// Writes the encoded input row for one grid cell into `row`.
    pub fn encode_input(&self, case: LoadCase, moment: f64, params: &[f64; N_PARAMS], row: &mut [f64]) {
        row[0] = self.encode_feature(0, f64::from(case.code()));
        row[1] = self.encode_feature(1, moment);
        for j in 0..N_PARAMS {
            row[2 + j] = self.encode_feature(2 + j, params[j]);
        }
    }

    pub fn encode_output(&self, rom: f64) -> f64 {
        (rom - self.output_low) / (self.output_high - self.output_low)
    }

    pub fn decode_output(&self, v: f64) -> f64 {
        self.output_low + v * (self.output_high - self.output_low)
    }

    /// Scale factor from normalized output units to degrees.
    pub fn output_span(&self) -> f64 {
        self.output_high - self.output_low
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn default_bounds_table() {
        let b = MaterialBounds::default();
        assert_eq!(b.names().len(), 13);
        let expected_lower = [0.03, 0.0075, 0.065, 1.0, 10.0, 0.0, -0.2, -0.2, -0.2, -0.2, 7.5, 0.0, 0.0];
        let expected_upper = [0.21, 0.0525, 0.455, 50.0, 200.0, 0.33, 0.0, 0.0, 0.0, 0.0, 52.5, 0.3, 0.2];
        assert_eq!(b.lower(), &expected_lower);
        assert_eq!(b.upper(), &expected_upper);
        assert_eq!(b.names()[0], "C10n");
        assert_eq!(b.names()[12], "alpha_r");
    }

    #[test]
    fn normalize_c10n() {
        let b = MaterialBounds::default();
        let mut phys = *b.lower();
        let norm = |phys: [f64; 13]| normalize(&MaterialConfig::physical(phys, &b).unwrap(), &b).unwrap();
        assert_eq!(norm(phys).values()[0], 0.0);
        phys[0] = 0.21;
        assert_eq!(norm(phys).values()[0], 1.0);
        phys[0] = 0.12;
        assert!(rel_close(norm(phys).values()[0], 0.5, 1e-12));
    }

    #[test]
    fn normalize_rejects_out_of_bounds() {
        let b = MaterialBounds::default();
        let mut phys = *b.lower();
        phys[4] = 250.0;
        let cfg = MaterialConfig {
            values: phys,
            space: Space::Physical,
        };
        match normalize(&cfg, &b) {
            Err(Error::BoundsViolation { index, .. }) => assert_eq!(index, 4),
            other => panic!("expected BoundsViolation, got {other:?}"),
        }
    }

    #[test]
    fn denormalize_examples() {
        let b = MaterialBounds::default();
        let mut v = [0.5; 13];
        v[5] = 0.0;
        v[4] = 1.0;
        v[10] = 0.25;
        let (phys, within) = denormalize(&MaterialConfig::normalized(v).unwrap(), &b).unwrap();
        assert!(within);
        assert_eq!(phys.values()[5], 0.0);
        assert_eq!(phys.values()[4], 200.0);
        assert!(rel_close(phys.values()[10], 18.75, 1e-12));
    }

    #[test]
    fn denormalize_flags_narrower_bounds() {
        let wide = MaterialBounds::default();
        let mut rows = wide.rows();
        rows[0].max = 0.1;
        let narrow = MaterialBounds::from_rows(rows).unwrap();
        let (_, within) = denormalize(&MaterialConfig::normalized([1.0; 13]).unwrap(), &narrow).unwrap();
        assert!(within);
        let (phys, _) = denormalize(&MaterialConfig::normalized([1.0; 13]).unwrap(), &wide).unwrap();
        let cfg = MaterialConfig::physical(*phys.values(), &wide).unwrap();
        let renorm = normalize(&cfg, &wide).unwrap();
        let (_, within) = denormalize(&renorm, &wide).unwrap();
        assert!(within);
        assert!(MaterialConfig::physical(*phys.values(), &narrow).is_err());
    }

    #[test]
    fn bounds_file_round_trip() {
        let b = MaterialBounds::default();
        let toml_text = toml::to_string(&b).unwrap();
        let back: MaterialBounds = toml::from_str(&toml_text).unwrap();
        assert_eq!(back, b);
        let json = serde_json::to_string(&b).unwrap();
        let back: MaterialBounds = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn bounds_file_validation() {
        let text = "[[params]]\nname = \"a\"\nmin = 1.0\nmax = 0.0\n";
        assert!(toml::from_str::<MaterialBounds>(text).is_err());
    }

    #[test]
    fn load_grid_validation() {
        assert_eq!(LoadGrid::default().len(), 20);
        assert!(LoadGrid::with_moments(vec![1.0, 1.0]).is_err());
        assert!(LoadGrid::with_moments(vec![0.0, 1.0]).is_err());
        assert!(LoadGrid::new(vec![LoadCase::Flexion, LoadCase::Flexion], vec![1.0]).is_err());
        let g = LoadGrid::default();
        assert_eq!(g.cell_index(LoadCase::Extension, 2.0), Some(6));
        let cells: Vec<_> = g.cells().take(6).collect();
        assert_eq!(cells[5], (LoadCase::Extension, 1.0));
    }

    #[test]
    fn load_case_parsing() {
        assert_eq!("flexion".parse::<LoadCase>().unwrap(), LoadCase::Flexion);
        assert_eq!("4".parse::<LoadCase>().unwrap(), LoadCase::LateralBending);
        assert!("5".parse::<LoadCase>().is_err());
        assert!("twist".parse::<LoadCase>().is_err());
    }

    #[test]
    fn normalizer_is_affine_outside_range() {
        let n = Normalizer::with_output_range(0.0, 20.0);
        assert_eq!(n.encode_feature(1, 1.0), 0.0);
        assert_eq!(n.encode_feature(1, 5.0), 1.0);
        assert_eq!(n.encode_feature(1, 10.0), 2.25);
        assert_eq!(n.encode_feature(0, 4.0), 1.0);
        assert_eq!(n.decode_output(n.encode_output(25.0)), 25.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn round_trip(u in prop::array::uniform13(0.0f64..=1.0)) {
                let b = MaterialBounds::default();
                let phys = b.to_physical(&u);
                let cfg = MaterialConfig::physical(phys, &b).unwrap();
                let (back, within) = denormalize(&normalize(&cfg, &b).unwrap(), &b).unwrap();
                prop_assert!(within);
                for (&a, &e) in back.values().iter().zip(&phys) {
                    prop_assert!((a - e).abs() <= 1e-10 * e.abs().max(1e-12), "{a} vs {e}");
                }
            }

            #[test]
            fn normalize_is_increasing(a in 0.0f64..0.9, gap in 1e-6f64..0.1, j in 0usize..13) {
                let b = a + gap;
                let bounds = MaterialBounds::default();
                let mut lo = [0.5; 13];
                let mut hi = [0.5; 13];
                lo[j] = a;
                hi[j] = b;
                let lo = bounds.to_physical(&lo);
                let hi = bounds.to_physical(&hi);
                prop_assert!(bounds.to_normalized(&lo)[j] < bounds.to_normalized(&hi)[j]);
            }

            #[test]
            fn normalizer_output_round_trip(x in -50.0f64..50.0, lo in -5.0f64..5.0, span in 0.1f64..30.0) {
                let n = Normalizer::with_output_range(lo, lo + span);
                let back = n.decode_output(n.encode_output(x));
                prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
