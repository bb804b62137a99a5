//! Analytic simulator stand-in, dataset generation and CSV I/O.
//!
//! The oracle maps a normalized material config to a RoM curve per load case:
//!
//! ```text
//! g_c(p) = 0.5 + Σ_j w_{c,j} p_j + 0.5 p_c p_{c+5}      (1-based j, c)
//! w_{c,j} = (((7c + 3j) mod 11) + 1) / 22
//! rom(c, m, p) = (10 / g_c(p)) · (1 − exp(−m · g_c(p) / 4))
//! ```
//!
//! The curve is strictly increasing in the moment and saturates at `10 / g_c`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::domain::{LoadCase, LoadGrid, MaterialBounds, MaterialConfig, RomTable, N_PARAMS};
use crate::error::{Error, Result};
use crate::sampling::lhs_sample;

fn weight(case: LoadCase, j: usize) -> f64 {
    let c = usize::from(case.code());
    (((7 * c + 3 * j) % 11) + 1) as f64 / 22.0
}

/// Load-case stiffness term `g_c(p)`.
pub fn stiffness(params: &[f64; N_PARAMS], case: LoadCase) -> f64 {
    let c = usize::from(case.code());
    let linear: f64 = (1..=N_PARAMS).map(|j| weight(case, j) * params[j - 1]).sum();
    0.5 + linear + 0.5 * params[c - 1] * params[c + 4]
}

/// Oracle RoM in degrees for raw normalized parameters.
pub fn oracle_rom_raw(params: &[f64; N_PARAMS], case: LoadCase, moment: f64) -> f64 {
    let g = stiffness(params, case);
    (10.0 / g) * (-(moment * g / 4.0)).exp_m1().abs()
}

/// Oracle RoM in degrees.
pub fn oracle_rom(config: &MaterialConfig, case: LoadCase, moment: f64) -> f64 {
    oracle_rom_raw(config.values(), case, moment)
}

/// Oracle RoM over every cell of `grid`.
pub fn oracle_table(config: &MaterialConfig, grid: &LoadGrid) -> RomTable {
    let values = grid.cells().map(|(c, m)| oracle_rom(config, c, m)).collect();
    RomTable::new(grid.clone(), values).expect("oracle values are finite")
}

/// One simulator sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub config_id: u64,
    pub config: MaterialConfig,
    pub load_case: LoadCase,
    pub moment: f64,
    pub rom: f64,
}

/// Simulator samples on a complete load grid per config.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<DatasetRecord>,
    grid: Option<LoadGrid>,
    bounds: MaterialBounds,
}

impl Dataset {
    /// Validates grid completeness and builds a dataset. The grid is the
    /// sorted set of load cases × sorted set of moments seen in `records`.
    pub fn new(records: Vec<DatasetRecord>, bounds: MaterialBounds) -> Result<Self> {
        if records.is_empty() {
            return Ok(Self {
                records,
                grid: None,
                bounds,
            });
        }
        let mut cases: Vec<LoadCase> = records.iter().map(|r| r.load_case).collect();
        cases.sort();
        cases.dedup();
        let mut moments: Vec<f64> = records.iter().map(|r| r.moment).collect();
        moments.sort_by(f64::total_cmp);
        moments.dedup();
        let grid = LoadGrid::new(cases, moments)?;

        let mut seen: BTreeMap<u64, (MaterialConfig, Vec<bool>)> = BTreeMap::new();
        for r in &records {
            let entry = seen
                .entry(r.config_id)
                .or_insert_with(|| (r.config, vec![false; grid.len()]));
            if entry.0 != r.config {
                return Err(Error::IncompleteConfig(r.config_id));
            }
            let cell = grid.cell_index(r.load_case, r.moment).expect("cell from grid");
            if std::mem::replace(&mut entry.1[cell], true) {
                return Err(Error::IncompleteConfig(r.config_id));
            }
        }
        if let Some((&id, _)) = seen.iter().find(|(_, (_, cells))| !cells.iter().all(|&c| c)) {
            return Err(Error::IncompleteConfig(id));
        }
        Ok(Self {
            records,
            grid: Some(grid),
            bounds,
        })
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    /// `None` for an empty dataset.
    pub fn grid(&self) -> Option<&LoadGrid> {
        self.grid.as_ref()
    }

    pub fn bounds(&self) -> &MaterialBounds {
        &self.bounds
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct config ids in first-appearance order.
    pub fn config_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = Vec::new();
        let mut last = None;
        for r in &self.records {
            if last != Some(r.config_id) && !ids.contains(&r.config_id) {
                ids.push(r.config_id);
            }
            last = Some(r.config_id);
        }
        ids
    }

    /// Configs keyed by id.
    pub fn configs(&self) -> BTreeMap<u64, MaterialConfig> {
        self.records.iter().map(|r| (r.config_id, r.config)).collect()
    }

    /// Each config with its RoM table on the dataset grid, keyed by id.
    pub fn tables(&self) -> BTreeMap<u64, (MaterialConfig, RomTable)> {
        let Some(grid) = &self.grid else {
            return BTreeMap::new();
        };
        let mut values: BTreeMap<u64, (MaterialConfig, Vec<f64>)> = BTreeMap::new();
        for r in &self.records {
            let entry = values
                .entry(r.config_id)
                .or_insert_with(|| (r.config, vec![0.0; grid.len()]));
            entry.1[grid.cell_index(r.load_case, r.moment).expect("cell from grid")] = r.rom;
        }
        values
            .into_iter()
            .map(|(id, (config, v))| (id, (config, RomTable::new(grid.clone(), v).expect("complete table"))))
            .collect()
    }

    /// The records of the given config ids, in dataset order.
    pub fn subset(&self, ids: &[u64]) -> Dataset {
        let keep: std::collections::BTreeSet<u64> = ids.iter().copied().collect();
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(&r.config_id))
            .cloned()
            .collect();
        Dataset::new(records, self.bounds.clone()).expect("subset of a valid dataset")
    }

    /// Serializes as CSV with header `config_id,load_case,moment,p1..p13,rom`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        let io = |e| Error::io("<dataset>", e);
        let header: Vec<String> = ["config_id", "load_case", "moment"]
            .into_iter()
            .map(String::from)
            .chain((1..=N_PARAMS).map(|j| format!("p{j}")))
            .chain(std::iter::once("rom".to_string()))
            .collect();
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for r in &self.records {
            write!(w, "{},{},{}", r.config_id, r.load_case, r.moment).map_err(io)?;
            for v in r.config.values() {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w, ",{}", r.rom).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Parses the CSV format written by [`Dataset::write_csv`], validating
    /// every field, parameter ranges and per-config grid completeness.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers().map_err(csv_error)?.clone();
        let expected = 3 + N_PARAMS + 1;
        if headers.len() != expected
            || &headers[0] != "config_id"
            || &headers[1] != "load_case"
            || &headers[2] != "moment"
            || &headers[expected - 1] != "rom"
        {
            return Err(Error::Parse {
                line: 1,
                message: "expected header config_id,load_case,moment,p1..p13,rom".into(),
            });
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(csv_error)?;
            let line = row.position().map_or(0, |p| p.line());
            let perr = |message: String| Error::Parse { line, message };
            if row.len() != expected {
                return Err(perr(format!("expected {expected} fields, found {}", row.len())));
            }
            let config_id: u64 = row[0]
                .parse()
                .map_err(|_| perr(format!("bad config_id {:?}", &row[0])))?;
            let load_case: LoadCase = row[1].parse().map_err(perr)?;
            let moment = parse_finite(&row[2], "moment").map_err(perr)?;
            if moment <= 0.0 {
                return Err(perr(format!("moment must be positive, got {moment}")));
            }
            let mut values = [0.0; N_PARAMS];
            for (j, v) in values.iter_mut().enumerate() {
                *v = parse_finite(&row[3 + j], "parameter").map_err(perr)?;
            }
            let config = MaterialConfig::normalized(values)?;
            let rom = parse_finite(&row[expected - 1], "rom").map_err(perr)?;
            if rom < 0.0 {
                return Err(perr(format!("rom must be non-negative, got {rom}")));
            }
            records.push(DatasetRecord {
                config_id,
                config,
                load_case,
                moment,
                rom,
            });
        }
        Self::new(records, MaterialBounds::default())
    }
}

fn parse_finite(field: &str, what: &str) -> Result<f64, String> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("bad {what} value {field:?}")),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Samples `n_configs` LHS configs and evaluates the oracle on every grid cell.
pub fn generate_dataset(n_configs: usize, grid: &LoadGrid, seed: u64) -> Result<Dataset> {
    if n_configs == 0 {
        return Err(Error::InvalidConfig("n_configs must be at least 1".into()));
    }
    let configs = lhs_sample(n_configs, seed);
    let records: Vec<DatasetRecord> = configs
        .par_iter()
        .enumerate()
        .flat_map_iter(|(id, config)| {
            grid.cells().map(move |(load_case, moment)| DatasetRecord {
                config_id: id as u64,
                config: *config,
                load_case,
                moment,
                rom: oracle_rom(config, load_case, moment),
            })
        })
        .collect();
    Ok(Dataset {
        records,
        grid: Some(grid.clone()),
        bounds: MaterialBounds::default(),
    })
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    dataset.write_csv(file).map_err(|e| relabel(e, path))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::DatasetMissing(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(file)
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Writes a RoM table as CSV with header `load_case,moment,rom`.
pub fn write_table_csv<W: Write>(table: &RomTable, out: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    let io = |e| Error::io("<table>", e);
    writeln!(w, "load_case,moment,rom").map_err(io)?;
    for (c, m, r) in table.entries() {
        writeln!(w, "{c},{m},{r}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a `load_case,moment,rom` CSV. Rows may come in any order but must
/// cover a complete (load case × moment) grid exactly once.
pub fn read_table_csv<R: Read>(input: R) -> Result<RomTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["load_case", "moment", "rom"] {
        return Err(Error::Parse {
            line: 1,
            message: "expected header load_case,moment,rom".into(),
        });
    }
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        let perr = |message: String| Error::Parse { line, message };
        if row.len() != 3 {
            return Err(perr(format!("expected 3 fields, found {}", row.len())));
        }
        let case: LoadCase = row[0].parse().map_err(perr)?;
        let moment = parse_finite(&row[1], "moment").map_err(perr)?;
        if moment <= 0.0 {
            return Err(perr(format!("moment must be positive, got {moment}")));
        }
        let rom = parse_finite(&row[2], "rom").map_err(perr)?;
        rows.push((case, moment, rom, line));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "table has no rows".into(),
        });
    }
    let mut cases: Vec<LoadCase> = rows.iter().map(|r| r.0).collect();
    cases.sort();
    cases.dedup();
    let mut moments: Vec<f64> = rows.iter().map(|r| r.1).collect();
    moments.sort_by(f64::total_cmp);
    moments.dedup();
    let grid = LoadGrid::new(cases, moments)?;
    let mut values = vec![None; grid.len()];
    for (case, moment, rom, line) in rows {
        let idx = grid.cell_index(case, moment).expect("cell from grid");
        if values[idx].replace(rom).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate cell ({case}, {moment})"),
            });
        }
    }
    if values.iter().any(Option::is_none) {
        return Err(Error::GridMismatch("table does not cover a complete load grid".into()));
    }
    RomTable::new(grid, values.into_iter().map(Option::unwrap).collect())
}

pub fn load_table(path: &Path) -> Result<RomTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table_csv(file)
}

pub fn save_table(table: &RomTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_table_csv(table, file).map_err(|e| relabel(e, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: &str = "config_id,load_case,moment,p1,p2,p3,p4,p5,p6,p7,p8,p9,p10,p11,p12,p13,rom
0,axial_rotation,1,0.5,0.25,0.125,0.1,0.2,0.3,0.4,0.6,0.7,0.8,0.9,0.95,0.05,1.7183520889206374
0,axial_rotation,2.5,0.5,0.25,0.125,0.1,0.2,0.3,0.4,0.6,0.7,0.8,0.9,0.95,0.05,3.2097214342549023
0,flexion,1,0.5,0.25,0.125,0.1,0.2,0.3,0.4,0.6,0.7,0.8,0.9,0.95,0.05,1.6964587787823038
0,flexion,2.5,0.5,0.25,0.125,0.1,0.2,0.3,0.4,0.6,0.7,0.8,0.9,0.95,0.05,3.121800528741655
7,axial_rotation,1,0,0,0,0,0,0,0,0,0,0,0,0,1,2.1
7,axial_rotation,2.5,0,0,0,0,0,0,0,0,0,0,0,0,1,3.333333333333333
7,flexion,1,0,0,0,0,0,0,0,0,0,0,0,0,1,0.0001
7,flexion,2.5,0,0,0,0,0,0,0,0,0,0,0,0,1,4
";

    #[test]
    fn saturation_limit() {
        let p = MaterialConfig::normalized([0.0; 13]).unwrap();
        assert_eq!(stiffness(p.values(), LoadCase::AxialRotation), 0.5);
        let far = oracle_rom(&p, LoadCase::AxialRotation, 1e4);
        assert!((far - 20.0).abs() < 1e-12);
    }

    #[test]
    fn zero_moment_limit() {
        let p = MaterialConfig::normalized([0.3; 13]).unwrap();
        for c in LoadCase::ALL {
            assert_eq!(oracle_rom(&p, c, 0.0), 0.0);
            assert!(oracle_rom(&p, c, 1e-9) < 1e-8);
        }
    }

    #[test]
    fn hand_evaluated_point() {
        // Independent scripted evaluation: g_2 = 2.5113636363636362.
        let p = MaterialConfig::normalized([0.5; 13]).unwrap();
        let g = stiffness(p.values(), LoadCase::Extension);
        assert!((g - 2.5113636363636362).abs() < 1e-14);
        let rom = oracle_rom(&p, LoadCase::Extension, 3.0);
        assert!((rom - 3.376438479921366).abs() < 1e-12, "{rom}");
    }

    #[test]
    fn interaction_index_convention() {
        // p_c · p_{c+5} with 1-based indices: flexion (c = 3) pairs p3 with p8.
        let mut a = [0.0; 13];
        a[2] = 1.0;
        a[7] = 1.0;
        let expected = 0.5 + weight(LoadCase::Flexion, 3) + weight(LoadCase::Flexion, 8) + 0.5;
        assert!((stiffness(&a, LoadCase::Flexion) - expected).abs() < 1e-15);
    }

    #[test]
    fn dataset_sizes() {
        let grid = LoadGrid::default();
        assert_eq!(generate_dataset(1, &grid, 0).unwrap().records().len(), 20);
        let big = generate_dataset(1024, &grid, 1).unwrap();
        assert_eq!(big.records().len(), 20480);
        assert!(big.records().iter().all(|r| r.rom > 0.0 && r.rom <= 20.0));
        assert!(generate_dataset(0, &grid, 0).is_err());
    }

    #[test]
    fn dataset_csv_is_deterministic() {
        let grid = LoadGrid::default();
        let bytes = |seed| {
            let mut buf = Vec::new();
            generate_dataset(5, &grid, seed).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(3), bytes(3));
        assert_ne!(bytes(3), bytes(4));
    }

    #[test]
    fn golden_round_trip() {
        let ds = Dataset::read_csv(GOLDEN.as_bytes()).unwrap();
        assert_eq!(ds.records().len(), 8);
        assert_eq!(ds.config_ids(), vec![0, 7]);
        assert_eq!(ds.grid().unwrap().moments(), &[1.0, 2.5]);
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), GOLDEN);
    }

    #[test]
    fn generated_round_trip() {
        let ds = generate_dataset(3, &LoadGrid::default(), 11).unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        let back = Dataset::read_csv(out.as_slice()).unwrap();
        assert_eq!(back.records(), ds.records());
    }

    #[test]
    fn header_only_is_empty() {
        let header = GOLDEN.lines().next().unwrap();
        let ds = Dataset::read_csv(header.as_bytes()).unwrap();
        assert!(ds.is_empty());
        assert!(ds.grid().is_none());
    }

    #[test]
    fn nan_rom_is_parse_error() {
        let bad = GOLDEN.replacen("1.7183520889206374", "NaN", 1);
        match Dataset::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn incomplete_config_detected() {
        let mut lines: Vec<&str> = GOLDEN.lines().collect();
        lines.remove(8);
        let text = lines.join("\n");
        assert!(matches!(Dataset::read_csv(text.as_bytes()), Err(Error::IncompleteConfig(7))));
    }

    #[test]
    fn out_of_range_parameter() {
        let bad = GOLDEN.replace("7,flexion,2.5,0,", "7,flexion,2.5,1.5,");
        assert!(matches!(Dataset::read_csv(bad.as_bytes()), Err(Error::BoundsViolation { index: 0, .. })));
    }

    #[test]
    fn malformed_row_reports_line() {
        let bad = GOLDEN.replace("7,flexion,1,", "7,flexion,one,");
        match Dataset::read_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn table_csv_round_trip_and_errors() {
        let p = MaterialConfig::normalized([0.4; 13]).unwrap();
        let t = oracle_table(&p, &LoadGrid::default());
        let mut buf = Vec::new();
        write_table_csv(&t, &mut buf).unwrap();
        assert_eq!(read_table_csv(buf.as_slice()).unwrap(), t);

        let partial = "load_case,moment,rom\nflexion,1,2\nflexion,2,3\nextension,1,1\n";
        assert!(matches!(read_table_csv(partial.as_bytes()), Err(Error::GridMismatch(_))));
        let bad = "load_case,moment,rom\nflexion,1,2\nflexion,x,3\n";
        assert!(matches!(read_table_csv(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn increasing_in_moment(
                p in prop::array::uniform13(0.0f64..=1.0),
                case in 0usize..4,
                m1 in 0.1f64..10.0,
                dm in 0.01f64..5.0,
            ) {
                let c = LoadCase::ALL[case];
                prop_assert!(oracle_rom_raw(&p, c, m1 + dm) > oracle_rom_raw(&p, c, m1));
            }

            #[test]
            fn bounded_partials(
                p in prop::array::uniform13(0.01f64..=0.99),
                case in 0usize..4,
                m in 0.5f64..10.0,
            ) {
                let c = LoadCase::ALL[case];
                let h = 1e-5;
                for j in 0..13 {
                    let mut a = p;
                    let mut b = p;
                    a[j] += h;
                    b[j] -= h;
                    let d = (oracle_rom_raw(&a, c, m) - oracle_rom_raw(&b, c, m)) / (2.0 * h);
                    prop_assert!(d.is_finite() && d.abs() <= 30.0);
                }
            }
        }
    }
}
