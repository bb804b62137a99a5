//! Experiment runners: surrogate cross-validation, moment interpolation and
//! extrapolation, the synthetic calibration benchmark and the constraint
//! ablation.
//!
//! Each runner returns a report that renders to CSV/JSON files plus a
//! long-format plot-data CSV and a gnuplot script. Report files depend only
//! on the spec and seed; wall times are written to a separate
//! `timings.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ga_calibrate, inverse_calibrate, train_inverse, GaConfig, InverseNet, InverseNetConfig};
use crate::calibrate::{calibrate, CalibrationResult, ConstraintMode, PgdConfig};
use crate::domain::{LoadCase, LoadGrid, MaterialConfig, RomTable, N_PARAMS};
use crate::error::{Error, Result};
use crate::metrics::{self, mean_std};
use crate::nn::fit::LossKind;
use crate::nn::{split_configs, train, train_with_split, LinearModel, NetConfig, SurrogateNet};
use crate::oracle::{generate_dataset, load_dataset, oracle_table, save_dataset, Dataset};
use crate::sampling::{derive_seed, seeded_rng, uniform_sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SurrogateCv,
    InterExtra,
    CalibSynthetic,
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdSpec {
    pub eta: f64,
    pub steps: usize,
    pub restarts: usize,
    pub penalty_weight: f64,
}

impl Default for PgdSpec {
    fn default() -> Self {
        let d = PgdConfig::default();
        Self {
            eta: d.eta,
            steps: d.steps,
            restarts: d.restarts,
            penalty_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseSpec {
    pub train_set_size: usize,
    pub max_epochs: usize,
}

impl Default for InverseSpec {
    fn default() -> Self {
        let d = InverseNetConfig::default();
        Self {
            train_set_size: d.train_set_size,
            max_epochs: d.max_epochs,
        }
    }
}

/// One experiment, usually read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Dataset sizes, in configs. The first one trains the surrogate when
    /// no model file is given.
    #[serde(default = "default_sizes")]
    pub dataset_sizes: Vec<usize>,
    /// Directory holding `oracle_n{size}.csv`. Without it datasets are
    /// generated in memory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Generate and save datasets missing from `data_dir`.
    #[serde(default = "default_true")]
    pub generate_missing: bool,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Fresh configs for held-out evaluation.
    #[serde(default = "default_64")]
    pub test_configs: usize,
    /// Calibration targets.
    #[serde(default = "default_64")]
    pub targets: usize,
    /// Caps surrogate training epochs below the preset value.
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Surrogate trained with L2 loss, for the ablation.
    #[serde(default)]
    pub l2_model: Option<PathBuf>,
    #[serde(default)]
    pub inverse_model: Option<PathBuf>,
    #[serde(default)]
    pub pgd: PgdSpec,
    #[serde(default = "default_generations")]
    pub ga_max_generations: usize,
    #[serde(default)]
    pub inverse: InverseSpec,
    /// Factor applied to one load case of each out-of-distribution target.
    #[serde(default = "default_ood_scale")]
    pub ood_scale: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_sizes() -> Vec<usize> {
    vec![1024]
}
fn default_true() -> bool {
    true
}
fn default_folds() -> usize {
    4
}
fn default_64() -> usize {
    64
}
fn default_generations() -> usize {
    100
}
fn default_ood_scale() -> f64 {
    2.5
}

impl ExperimentSpec {
    /// A spec of the given kind with every other field at its default.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            output_dir: default_output_dir(),
            dataset_sizes: default_sizes(),
            data_dir: None,
            generate_missing: true,
            folds: default_folds(),
            test_configs: 64,
            targets: 64,
            max_epochs: None,
            model: None,
            l2_model: None,
            inverse_model: None,
            pgd: PgdSpec::default(),
            ga_max_generations: default_generations(),
            inverse: InverseSpec::default(),
            ood_scale: default_ood_scale(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ExperimentKind::SurrogateCv && self.folds < 2 {
            return Err(Error::InvalidConfig(format!("cross-validation needs at least 2 folds, got {}", self.folds)));
        }
        if self.dataset_sizes.is_empty() || self.dataset_sizes.contains(&0) {
            return Err(Error::InvalidConfig("dataset sizes must be non-empty and positive".into()));
        }
        if self.test_configs == 0 || self.targets == 0 {
            return Err(Error::InvalidConfig("test_configs and targets must be positive".into()));
        }
        Ok(())
    }

    fn pgd_config(&self, mode: ConstraintMode, loss: LossKind, seed: u64) -> PgdConfig {
        PgdConfig {
            eta: self.pgd.eta,
            steps: self.pgd.steps,
            restarts: self.pgd.restarts,
            loss,
            constraint_mode: mode,
            seed,
            ..PgdConfig::default()
        }
    }
}

/// Training preset for a dataset of `n` configs.
pub fn net_config_for(n: usize, spec: &ExperimentSpec, loss: LossKind) -> NetConfig {
    let mut config = if n <= 128 { NetConfig::n128() } else { NetConfig::n1024() };
    config.seed = derive_seed(spec.seed, 100 + n as u64);
    config.loss = loss;
    if let Some(cap) = spec.max_epochs {
        config.max_epochs = config.max_epochs.min(cap);
    }
    config
}

/// The oracle dataset of `n` configs: read from `data_dir` when present,
/// otherwise generated (and saved if a directory is configured).
pub fn load_or_generate(spec: &ExperimentSpec, n: usize) -> Result<Dataset> {
    let seed = derive_seed(spec.seed, n as u64);
    match &spec.data_dir {
        None => generate_dataset(n, &LoadGrid::default(), seed),
        Some(dir) => {
            let path = dir.join(format!("oracle_n{n}.csv"));
            if path.exists() {
                load_dataset(&path)
            } else if spec.generate_missing {
                let ds = generate_dataset(n, &LoadGrid::default(), seed)?;
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                save_dataset(&ds, &path)?;
                Ok(ds)
            } else {
                Err(Error::DatasetMissing(path))
            }
        }
    }
}

/// The surrogate for calibration experiments: loaded from `path` if given,
/// otherwise trained on the first configured dataset size.
pub fn surrogate_for(spec: &ExperimentSpec, path: Option<&Path>, loss: LossKind) -> Result<SurrogateNet> {
    if let Some(path) = path {
        let mut net = SurrogateNet::load(path)?;
        net.freeze();
        return Ok(net);
    }
    let n = spec.dataset_sizes[0];
    let ds = load_or_generate(spec, n)?;
    let (net, _) = train(&ds, &net_config_for(n, spec, loss), 0.1)?;
    Ok(net)
}

/// Partitions `ids` into `folds` disjoint folds after a seeded shuffle.
pub fn cv_folds(ids: &[u64], folds: usize, seed: u64) -> Vec<Vec<u64>> {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut seeded_rng(seed));
    let mut out = vec![Vec::new(); folds];
    for (i, id) in shuffled.into_iter().enumerate() {
        out[i % folds].push(id);
    }
    out
}

/// Fresh uniform configs for held-out evaluation or calibration targets.
pub fn test_set(n: usize, seed: u64, stream: u64) -> Vec<MaterialConfig> {
    uniform_sample(n, derive_seed(seed, stream))
}

/// Files produced by an experiment.
pub trait Report {
    /// `(file name, contents)` pairs; contents are deterministic.
    fn files(&self) -> Vec<(String, String)>;
    /// Wall times in seconds, kept out of the deterministic files.
    fn timings(&self) -> BTreeMap<String, f64>;
}

/// Writes every report file plus `timings.json` into `dir`.
pub fn write_report(report: &dyn Report, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, contents) in report.files() {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join("timings.json");
    let timings = serde_json::to_string_pretty(&report.timings()).expect("timings serialize");
    std::fs::write(&path, timings).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("rows serialize to CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV is UTF-8")
}

/// One point of the long-format plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

fn gnuplot_script(title: &str, xlabel: &str, ylabel: &str, series: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# usage: gnuplot -p plot.gp");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{xlabel}'");
    let _ = writeln!(s, "set ylabel '{ylabel}'");
    let _ = writeln!(s, "set key outside");
    let plots: Vec<String> = series
        .iter()
        .map(|name| {
            format!("'plot_data.csv' using (strcol(1) eq '{name}' ? $2 : 1/0):3 with linespoints title '{name}'")
        })
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

fn plot_files(points: &[PlotPoint], title: &str, xlabel: &str, ylabel: &str) -> Vec<(String, String)> {
    let mut series: Vec<String> = Vec::new();
    for p in points {
        if !series.contains(&p.series) {
            series.push(p.series.clone());
        }
    }
    vec![
        ("plot_data.csv".into(), to_csv(points)),
        ("plot.gp".into(), gnuplot_script(title, xlabel, ylabel, &series)),
    ]
}

fn score(truth: &RomTable, predicted: &RomTable) -> Result<(f64, f64)> {
    Ok((metrics::mae(truth, predicted)?, metrics::r2_mean(truth, predicted)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub model: String,
    pub n: usize,
    pub fold: usize,
    pub mae: f64,
    pub r2_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummaryRow {
    pub model: String,
    pub n: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    pub summary: Vec<CvSummaryRow>,
    pub curves: Vec<PlotPoint>,
    pub train_secs: f64,
}

impl Report for CvReport {
    fn files(&self) -> Vec<(String, String)> {
        let mut files = vec![
            ("cv_folds.csv".into(), to_csv(&self.rows)),
            ("cv_summary.csv".into(), to_csv(&self.summary)),
        ];
        files.extend(plot_files(&self.curves, "validation loss per epoch", "epoch", "L1 loss (normalized)"));
        files
    }

    fn timings(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("train_total".to_string(), self.train_secs)])
    }
}

fn summarize(model: &str, n: usize, rows: &[CvRow]) -> CvSummaryRow {
    let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
    let r2s: Vec<f64> = rows.iter().map(|r| r.r2_mean).collect();
    let (mae_mean, mae_std) = mean_std(&maes);
    let (r2_mean, r2_std) = mean_std(&r2s);
    CvSummaryRow {
        model: model.into(),
        n,
        mae_mean,
        mae_std,
        r2_mean,
        r2_std,
    }
}

/// K-fold cross-validation of the surrogate and the linear baseline.
///
/// Folds partition the configs. Each fold is held out in turn; the network
/// early-stops on a split of the remaining folds and both models are scored
/// on the held-out fold.
pub fn run_surrogate_cv(spec: &ExperimentSpec) -> Result<CvReport> {
    spec.validate()?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for &n in &spec.dataset_sizes {
        let ds = load_or_generate(spec, n)?;
        let tables = ds.tables();
        let folds = cv_folds(&ds.config_ids(), spec.folds, derive_seed(spec.seed, 200 + n as u64));
        let mut nn_rows = Vec::new();
        let mut lin_rows = Vec::new();
        for (f, held_out) in folds.iter().enumerate() {
            let rest: Vec<u64> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, ids)| ids.iter().copied())
                .collect();
            let config = net_config_for(n, spec, LossKind::L1);
            let (train_ids, val_ids) = split_configs(&rest, 0.1, derive_seed(config.seed, f as u64))?;
            let (net, report) = train_with_split(&ds, &config, &train_ids, &val_ids)?;
            let linear = LinearModel::fit(&ds.subset(&rest))?;
            let (mut nn_mae, mut nn_r2, mut lin_mae, mut lin_r2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for id in held_out {
                let (config, truth) = &tables[id];
                let (m, r) = score(truth, &net.predict_table(config, truth.grid()))?;
                nn_mae.push(m);
                nn_r2.push(r);
                let (m, r) = score(truth, &linear.predict_table(config, truth.grid()))?;
                lin_mae.push(m);
                lin_r2.push(r);
            }
            nn_rows.push(CvRow {
                model: "nn".into(),
                n,
                fold: f,
                mae: mean_std(&nn_mae).0,
                r2_mean: mean_std(&nn_r2).0,
            });
            lin_rows.push(CvRow {
                model: "linear".into(),
                n,
                fold: f,
                mae: mean_std(&lin_mae).0,
                r2_mean: mean_std(&lin_r2).0,
            });
            curves.extend(report.val_curve.iter().enumerate().map(|(e, &v)| PlotPoint {
                series: format!("n{n}_fold{f}"),
                x: e as f64,
                y: v,
            }));
            log::info!("cv n={n} fold {f}: nn MAE {:.4}", nn_rows.last().map_or(f64::NAN, |r| r.mae));
        }
        summary.push(summarize("nn", n, &nn_rows));
        summary.push(summarize("linear", n, &lin_rows));
        rows.extend(nn_rows);
        rows.extend(lin_rows);
    }
    Ok(CvReport {
        rows,
        summary,
        curves,
        train_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentBand {
    /// 0.5 Nm, below the training range.
    Below,
    /// Integer moments 1 to 5 Nm.
    Trained,
    /// Half-integer moments between trained ones.
    Interpolated,
    /// Above 5 Nm.
    Extrapolated,
}

impl MomentBand {
    pub fn of(moment: f64) -> Self {
        if moment < 1.0 {
            MomentBand::Below
        } else if moment > 5.0 {
            MomentBand::Extrapolated
        } else if moment.fract() == 0.0 {
            MomentBand::Trained
        } else {
            MomentBand::Interpolated
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MomentBand::Below => "below",
            MomentBand::Trained => "trained",
            MomentBand::Interpolated => "interpolated",
            MomentBand::Extrapolated => "extrapolated",
        }
    }
}

/// Moments 0.5 to 10 Nm in 0.5 Nm steps.
pub fn moment_ladder() -> Vec<f64> {
    (1..=20).map(|i| f64::from(i) * 0.5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub band: MomentBand,
    pub moments: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub r2_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterExtraReport {
    pub bands: Vec<BandRow>,
    pub by_moment: Vec<PlotPoint>,
    pub secs: f64,
}

impl InterExtraReport {
    pub fn band(&self, band: MomentBand) -> &BandRow {
        self.bands.iter().find(|b| b.band == band).expect("every band is reported")
    }
}

impl Report for InterExtraReport {
    fn files(&self) -> Vec<(String, String)> {
        let mut files = vec![("moment_bands.csv".into(), to_csv(&self.bands))];
        files.extend(plot_files(&self.by_moment, "RoM by moment", "moment (Nm)", "degrees"));
        files
    }

    fn timings(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([("total".to_string(), self.secs)])
    }
}

/// Scores `net` against the oracle on fresh configs over the whole moment
/// ladder and groups the errors by band.
///
/// Band MAE is averaged per config over the band's cells; band R² pools,
/// per load case, every (config, moment) cell of the band and averages over
/// load cases.
pub fn evaluate_bands(net: &SurrogateNet, configs: &[MaterialConfig]) -> Result<InterExtraReport> {
    let start = Instant::now();
    let ladder = moment_ladder();
    let grid = LoadGrid::with_moments(ladder.clone())?;
    let truth: Vec<RomTable> = configs.iter().map(|c| oracle_table(c, &grid)).collect();
    let predicted = net.predict_tables(configs, &grid);
    let bands = [
        MomentBand::Below,
        MomentBand::Trained,
        MomentBand::Interpolated,
        MomentBand::Extrapolated,
    ];
    let n_m = ladder.len();
    let mut rows = Vec::new();
    for band in bands {
        let cols: Vec<usize> = (0..n_m).filter(|&j| MomentBand::of(ladder[j]) == band).collect();
        let maes: Vec<f64> = truth
            .iter()
            .zip(&predicted)
            .map(|(t, p)| {
                let mut sum = 0.0;
                for ci in 0..grid.load_cases().len() {
                    for &j in &cols {
                        sum += (t.case_values(ci)[j] - p.case_values(ci)[j]).abs();
                    }
                }
                sum / (cols.len() * grid.load_cases().len()) as f64
            })
            .collect();
        let mut r2s = Vec::new();
        for (ci, &case) in grid.load_cases().iter().enumerate() {
            let mut y = Vec::new();
            let mut yhat = Vec::new();
            for (t, p) in truth.iter().zip(&predicted) {
                for &j in &cols {
                    y.push(t.case_values(ci)[j]);
                    yhat.push(p.case_values(ci)[j]);
                }
            }
            r2s.push(metrics::r2(&y, &yhat, case)?);
        }
        let (mae_mean, mae_std) = mean_std(&maes);
        rows.push(BandRow {
            band,
            moments: cols.len(),
            mae_mean,
            mae_std,
            r2_mean: mean_std(&r2s).0,
        });
    }

    let mut by_moment = Vec::new();
    for (j, &m) in ladder.iter().enumerate() {
        let errors: Vec<f64> = truth
            .iter()
            .zip(&predicted)
            .flat_map(|(t, p)| (0..grid.load_cases().len()).map(move |ci| (t.case_values(ci)[j] - p.case_values(ci)[j]).abs()))
            .collect();
        by_moment.push(PlotPoint {
            series: "mae".into(),
            x: m,
            y: mean_std(&errors).0,
        });
    }
    if let (Some(t), Some(p)) = (truth.first(), predicted.first()) {
        for (ci, case) in grid.load_cases().iter().enumerate() {
            for (series, table) in [("oracle", t), ("surrogate", p)] {
                by_moment.extend(ladder.iter().enumerate().map(|(j, &m)| PlotPoint {
                    series: format!("{series}_{case}"),
                    x: m,
                    y: table.case_values(ci)[j],
                }));
            }
        }
    }
    Ok(InterExtraReport {
        bands: rows,
        by_moment,
        secs: start.elapsed().as_secs_f64(),
    })
}

pub fn run_inter_extra(spec: &ExperimentSpec) -> Result<InterExtraReport> {
    spec.validate()?;
    let net = surrogate_for(spec, spec.model.as_deref(), LossKind::L1)?;
    evaluate_bands(&net, &test_set(spec.test_configs, spec.seed, 300))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub targets: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub r2_axial_rotation: f64,
    pub r2_extension: f64,
    pub r2_flexion: f64,
    pub r2_lateral_bending: f64,
    pub sum_exceeding: f64,
}

impl MethodRow {
    pub fn from_results(method: &str, results: &[CalibrationResult]) -> Self {
        let maes: Vec<f64> = results.iter().map(|r| r.mae_deg).collect();
        let r2s: Vec<f64> = results.iter().map(|r| r.r2_mean).collect();
        let case_mean = |case: LoadCase| {
            let v: Vec<f64> = results.iter().filter_map(|r| r.per_load_case_r2.get(&case).copied()).collect();
            mean_std(&v).0
        };
        let (mae_mean, mae_std) = mean_std(&maes);
        let (r2_mean, r2_std) = mean_std(&r2s);
        Self {
            method: method.into(),
            targets: results.len(),
            mae_mean,
            mae_std,
            r2_mean,
            r2_std,
            r2_axial_rotation: case_mean(LoadCase::AxialRotation),
            r2_extension: case_mean(LoadCase::Extension),
            r2_flexion: case_mean(LoadCase::Flexion),
            r2_lateral_bending: case_mean(LoadCase::LateralBending),
            sum_exceeding: results.iter().map(|r| r.sum_exceeding).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub method: String,
    pub target: usize,
    pub mae: f64,
    pub r2_mean: f64,
    pub sum_exceeding: f64,
}

/// Two configurations far apart in parameter space whose surrogate RoM
/// tables nearly coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IllPosedPair {
    pub first: [f64; N_PARAMS],
    pub second: [f64; N_PARAMS],
    /// Largest per-parameter difference, normalized units.
    pub param_distance: f64,
    pub rom_mae_deg: f64,
}

/// Among `n` uniform configs, the pair at least `min_distance` apart (max
/// norm) with the smallest RoM MAE on the default grid.
pub fn find_ill_posed_pair(net: &SurrogateNet, n: usize, min_distance: f64, seed: u64) -> Option<IllPosedPair> {
    let grid = LoadGrid::default();
    let configs = uniform_sample(n, seed);
    let tables = net.predict_tables(&configs, &grid);
    let mut best: Option<IllPosedPair> = None;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (configs[i].values(), configs[j].values());
            let dist = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if dist < min_distance {
                continue;
            }
            let mae = metrics::mae(&tables[i], &tables[j]).expect("same grid");
            if best.as_ref().is_none_or(|p| mae < p.rom_mae_deg) {
                best = Some(IllPosedPair {
                    first: *a,
                    second: *b,
                    param_distance: dist,
                    rom_mae_deg: mae,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibReport {
    pub methods: Vec<MethodRow>,
    pub per_target: Vec<TargetRow>,
    pub ill_posed: Option<IllPosedPair>,
    pub plot: Vec<PlotPoint>,
    pub method_secs: BTreeMap<String, f64>,
}

impl CalibReport {
    pub fn method(&self, name: &str) -> Option<&MethodRow> {
        self.methods.iter().find(|m| m.method == name)
    }
}

impl Report for CalibReport {
    fn files(&self) -> Vec<(String, String)> {
        let mut files = vec![
            ("calibration_methods.csv".into(), to_csv(&self.methods)),
            ("calibration_targets.csv".into(), to_csv(&self.per_target)),
            (
                "ill_posed_pair.json".into(),
                serde_json::to_string_pretty(&self.ill_posed).expect("pair serializes"),
            ),
        ];
        files.extend(plot_files(&self.plot, "first target: RoM by moment", "moment (Nm)", "degrees"));
        files
    }

    fn timings(&self) -> BTreeMap<String, f64> {
        self.method_secs.clone()
    }
}

/// Surrogate-emitted targets for `n` uniform configs.
pub fn synthetic_targets(net: &SurrogateNet, n: usize, seed: u64) -> Vec<RomTable> {
    net.predict_tables(&test_set(n, seed, 400), &LoadGrid::default())
}

/// PGD on each target with per-target seeds; targets run in parallel.
pub fn pgd_all(net: &SurrogateNet, targets: &[RomTable], base: &PgdConfig) -> Result<Vec<CalibrationResult>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let config = PgdConfig {
                seed: derive_seed(base.seed, i as u64),
                ..base.clone()
            };
            calibrate(net, t, &config)
        })
        .collect()
}

pub fn ga_all(net: &SurrogateNet, targets: &[RomTable], base: &GaConfig) -> Result<Vec<CalibrationResult>> {
    targets
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let config = GaConfig {
                seed: derive_seed(base.seed, i as u64),
                ..base.clone()
            };
            ga_calibrate(net, t, &config)
        })
        .collect()
}

pub fn inverse_all(inverse: &InverseNet, net: &SurrogateNet, targets: &[RomTable]) -> Result<Vec<CalibrationResult>> {
    targets.iter().map(|t| inverse_calibrate(inverse, net, t)).collect()
}

fn curve_points(series: &str, table: &RomTable) -> Vec<PlotPoint> {
    table
        .entries()
        .map(|(case, m, v)| PlotPoint {
            series: format!("{series}_{case}"),
            x: m,
            y: v,
        })
        .collect()
}

/// Compares PGD, the genetic search and the inverse model on
/// surrogate-emitted targets.
pub fn compare_methods(
    net: &SurrogateNet,
    inverse: &InverseNet,
    targets: &[RomTable],
    pgd: &PgdConfig,
    ga: &GaConfig,
) -> Result<CalibReport> {
    let mut method_secs = BTreeMap::new();
    let mut all = Vec::new();

    let t = Instant::now();
    let pgd_results = pgd_all(net, targets, pgd)?;
    method_secs.insert("pgd".to_string(), t.elapsed().as_secs_f64());
    all.push(("pgd", pgd_results));

    let t = Instant::now();
    let ga_results = ga_all(net, targets, ga)?;
    method_secs.insert("ga".to_string(), t.elapsed().as_secs_f64());
    all.push(("ga", ga_results));

    let t = Instant::now();
    let inverse_results = inverse_all(inverse, net, targets)?;
    method_secs.insert("inverse".to_string(), t.elapsed().as_secs_f64());
    all.push(("inverse", inverse_results));

    let mut plot = Vec::new();
    if let Some(first) = targets.first() {
        plot.extend(curve_points("target", first));
    }
    let mut methods = Vec::new();
    let mut per_target = Vec::new();
    for (name, results) in &all {
        methods.push(MethodRow::from_results(name, results));
        per_target.extend(results.iter().enumerate().map(|(i, r)| TargetRow {
            method: name.to_string(),
            target: i,
            mae: r.mae_deg,
            r2_mean: r.r2_mean,
            sum_exceeding: r.sum_exceeding,
        }));
        if let Some(r) = results.first() {
            for row in &r.table {
                plot.push(PlotPoint {
                    series: format!("{name}_{}", row.load_case),
                    x: row.moment,
                    y: row.predicted,
                });
            }
        }
    }
    if let Some(trace) = all[0].1.first().map(|r| &r.loss_trace) {
        plot.extend(trace.iter().enumerate().map(|(s, &l)| PlotPoint {
            series: "pgd_loss".into(),
            x: s as f64,
            y: l,
        }));
    }
    Ok(CalibReport {
        methods,
        per_target,
        ill_posed: None,
        plot,
        method_secs,
    })
}

pub fn inverse_config_for(spec: &ExperimentSpec) -> InverseNetConfig {
    InverseNetConfig {
        train_set_size: spec.inverse.train_set_size,
        max_epochs: spec.inverse.max_epochs,
        seed: derive_seed(spec.seed, 500),
        ..InverseNetConfig::default()
    }
}

pub fn run_calib_synthetic(spec: &ExperimentSpec) -> Result<CalibReport> {
    spec.validate()?;
    let net = surrogate_for(spec, spec.model.as_deref(), LossKind::L1)?;
    let t = Instant::now();
    let inverse = match &spec.inverse_model {
        Some(path) => InverseNet::load(path)?,
        None => train_inverse(&net, &inverse_config_for(spec))?.0,
    };
    let inverse_train_secs = t.elapsed().as_secs_f64();
    let targets = synthetic_targets(&net, spec.targets, spec.seed);
    let pgd = spec.pgd_config(ConstraintMode::Projection, LossKind::L1, derive_seed(spec.seed, 600));
    let ga = GaConfig {
        max_generations: spec.ga_max_generations,
        seed: derive_seed(spec.seed, 700),
        ..GaConfig::default()
    };
    let mut report = compare_methods(&net, &inverse, &targets, &pgd, &ga)?;
    report.ill_posed = find_ill_posed_pair(&net, 512, 0.3, derive_seed(spec.seed, 800));
    report.method_secs.insert("inverse_training".into(), inverse_train_secs);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub loss: LossKind,
    pub constraint: String,
    pub r2_mean: f64,
    pub mae_mean: f64,
    /// Summed over all targets.
    pub sum_exceeding: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub plot: Vec<PlotPoint>,
    pub secs: BTreeMap<String, f64>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

impl Report for AblationReport {
    fn files(&self) -> Vec<(String, String)> {
        let mut files = vec![("ablation.csv".into(), to_csv(&self.rows))];
        files.extend(plot_files(&self.plot, "summed bound violation per target", "target", "sum exceeding"));
        files
    }

    fn timings(&self) -> BTreeMap<String, f64> {
        self.secs.clone()
    }
}

/// Oracle tables of uniform configs with load case `i mod 4` of target `i`
/// scaled by `scale`, pushing them outside what feasible parameters produce.
pub fn ood_targets(n: usize, scale: f64, seed: u64) -> Vec<RomTable> {
    let grid = LoadGrid::default();
    test_set(n, seed, 900)
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut t = oracle_table(c, &grid);
            t.scale_case(i % grid.load_cases().len(), scale);
            t
        })
        .collect()
}

/// Runs one ablation row.
pub fn ablation_row(
    variant: &str,
    net: &SurrogateNet,
    targets: &[RomTable],
    config: &PgdConfig,
) -> Result<(AblationRow, Vec<CalibrationResult>)> {
    let results = pgd_all(net, targets, config)?;
    let row = MethodRow::from_results(variant, &results);
    let constraint = match config.constraint_mode {
        ConstraintMode::Projection => "projection".to_string(),
        ConstraintMode::Penalty { weight } => format!("penalty({weight})"),
        ConstraintMode::None => "none".to_string(),
    };
    Ok((
        AblationRow {
            variant: variant.into(),
            loss: config.loss,
            constraint,
            r2_mean: row.r2_mean,
            mae_mean: row.mae_mean,
            sum_exceeding: row.sum_exceeding,
        },
        results,
    ))
}

pub fn run_ablation(spec: &ExperimentSpec) -> Result<AblationReport> {
    spec.validate()?;
    let l1 = surrogate_for(spec, spec.model.as_deref(), LossKind::L1)?;
    let l2 = surrogate_for(spec, spec.l2_model.as_deref(), LossKind::L2)?;
    let targets = ood_targets(spec.targets, spec.ood_scale, spec.seed);
    let seed = derive_seed(spec.seed, 1000);
    let variants = [
        ("l1_none", &l1, spec.pgd_config(ConstraintMode::None, LossKind::L1, seed)),
        (
            "l1_penalty",
            &l1,
            spec.pgd_config(
                ConstraintMode::Penalty {
                    weight: spec.pgd.penalty_weight,
                },
                LossKind::L1,
                seed,
            ),
        ),
        ("l1_projection", &l1, spec.pgd_config(ConstraintMode::Projection, LossKind::L1, seed)),
        ("l2_projection", &l2, spec.pgd_config(ConstraintMode::Projection, LossKind::L2, seed)),
    ];
    let mut rows = Vec::new();
    let mut plot = Vec::new();
    let mut secs = BTreeMap::new();
    for (name, net, config) in variants {
        let t = Instant::now();
        let (row, results) = ablation_row(name, net, &targets, &config)?;
        secs.insert(name.to_string(), t.elapsed().as_secs_f64());
        plot.extend(results.iter().enumerate().map(|(i, r)| PlotPoint {
            series: name.to_string(),
            x: i as f64,
            y: r.sum_exceeding,
        }));
        rows.push(row);
    }
    Ok(AblationReport { rows, plot, secs })
}

/// Runs the experiment named by `spec.kind`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Box<dyn Report>> {
    Ok(match spec.kind {
        ExperimentKind::SurrogateCv => Box::new(run_surrogate_cv(spec)?),
        ExperimentKind::InterExtra => Box::new(run_inter_extra(spec)?),
        ExperimentKind::CalibSynthetic => Box::new(run_calib_synthetic(spec)?),
        ExperimentKind::Ablation => Box::new(run_ablation(spec)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_configs() {
        let ids: Vec<u64> = (0..8).collect();
        let folds = cv_folds(&ids, 2, 3);
        assert_eq!(folds.len(), 2);
        assert_eq!(folds[0].len(), 4);
        assert!(folds[0].iter().all(|id| !folds[1].contains(id)));
        let mut all: Vec<u64> = folds.concat();
        all.sort();
        assert_eq!(all, ids);
        assert_eq!(cv_folds(&ids, 2, 3), folds);
    }

    #[test]
    fn bands_cover_ladder_once() {
        let ladder = moment_ladder();
        assert_eq!(ladder.len(), 20);
        assert_eq!((ladder[0], ladder[19]), (0.5, 10.0));
        let count = |b| ladder.iter().filter(|&&m| MomentBand::of(m) == b).count();
        assert_eq!(count(MomentBand::Below), 1);
        assert_eq!(count(MomentBand::Trained), 5);
        assert_eq!(count(MomentBand::Interpolated), 4);
        assert_eq!(count(MomentBand::Extrapolated), 10);
    }

    #[test]
    fn spec_parses_with_defaults() {
        let spec: ExperimentSpec = toml::from_str("kind = \"surrogate_cv\"\nfolds = 4\n").unwrap();
        assert_eq!(spec, ExperimentSpec::new(ExperimentKind::SurrogateCv));
        let bad: ExperimentSpec = toml::from_str("kind = \"surrogate_cv\"\nfolds = 1\n").unwrap();
        assert!(bad.validate().is_err());
        assert!(toml::from_str::<ExperimentSpec>("kind = \"ablation\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn missing_dataset_reported() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            data_dir: Some(dir.path().to_path_buf()),
            generate_missing: false,
            ..ExperimentSpec::new(ExperimentKind::SurrogateCv)
        };
        assert!(matches!(load_or_generate(&spec, 16), Err(Error::DatasetMissing(_))));
        let spec = ExperimentSpec {
            generate_missing: true,
            ..spec
        };
        let ds = load_or_generate(&spec, 16).unwrap();
        assert!(dir.path().join("oracle_n16.csv").exists());
        assert_eq!(load_or_generate(&spec, 16).unwrap(), ds);
    }

    #[test]
    fn ood_targets_scale_one_case() {
        let a = ood_targets(4, 2.5, 1);
        let b = ood_targets(4, 1.0, 1);
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            for ci in 0..4 {
                let factor = if ci == i % 4 { 2.5 } else { 1.0 };
                for (u, v) in x.case_values(ci).iter().zip(y.case_values(ci)) {
                    assert_eq!(*u, v * factor);
                }
            }
        }
    }

    #[test]
    fn tiny_cv_is_deterministic() {
        let spec = ExperimentSpec {
            dataset_sizes: vec![16],
            folds: 2,
            max_epochs: Some(3),
            ..ExperimentSpec::new(ExperimentKind::SurrogateCv)
        };
        let a = run_surrogate_cv(&spec).unwrap();
        let b = run_surrogate_cv(&spec).unwrap();
        assert_eq!(a.files(), b.files());
        assert_eq!(a.rows.len(), 4);
        assert_eq!(a.summary.len(), 2);
        let plot = &a.files()[3].1;
        assert!(plot.contains("n16_fold1"));
    }
}
