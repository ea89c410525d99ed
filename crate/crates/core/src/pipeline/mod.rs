//! End-to-end run: ingest, preprocess, metrics, inventory, selection,
//! model fitting and evaluation. Every stage reads its inputs from and
//! writes its outputs to the run's output directory, so any stage can be
//! rerun on its own.

mod config;
pub mod demo;

pub use config::{
    InventoryConfig, ModelConfig, PlotConfig, RunConfig, SystemConfig, WaveformConfig,
};

use crate::allometry::{self, DensityTable, PlotTotals};
use crate::error::{Error, Result};
use crate::evaluate::{compare_models, evaluate, write_predictions_csv, EvalReport, Prediction};
use crate::features::{assemble, run_selection, FeatureTable, SelectionReport, Target};
use crate::las_io::{self, clip_polygon, tile, PointCloud, Polygon, TileGrid};
use crate::metrics::{cloud_metrics, read_metrics_csv, write_metrics_csv, MetricVector, SystemTag};
use crate::models::{fit_ols, fit_svr, split_80_20, svr_grid_search, CvScheme, Model, SvrParams};
use crate::preprocess::{
    classify_ground, dedupe, normalize_heights, remove_noise, GroundModel, DEFAULT_HEIGHT_FLOOR,
};
use crate::waveform::waveform_metrics;
use rayon::prelude::*;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Preprocess,
    Metrics,
    Inventory,
    Select,
    Fit,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Metrics,
        Stage::Inventory,
        Stage::Select,
        Stage::Fit,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Metrics => "metrics",
            Stage::Inventory => "inventory",
            Stage::Select => "select",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Model family tag used in file names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelKind {
    Svr,
    Ols,
}

impl ModelKind {
    pub const ALL: [ModelKind; 2] = [ModelKind::Svr, ModelKind::Ols];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Svr => "svr",
            ModelKind::Ols => "ols",
        }
    }
}

/// Where each artifact lives under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn clip(&self, sys: SystemTag, plot: &str) -> PathBuf {
        self.root
            .join("clip")
            .join(sys.as_str())
            .join(format!("{plot}.las"))
    }
    pub fn ground(&self, sys: SystemTag, plot: &str) -> PathBuf {
        self.root
            .join("ground")
            .join(sys.as_str())
            .join(format!("{plot}.las"))
    }
    pub fn dtm(&self, sys: SystemTag, plot: &str) -> PathBuf {
        self.root
            .join("dtm")
            .join(sys.as_str())
            .join(format!("{plot}.txt"))
    }
    pub fn normalized(&self, sys: SystemTag, plot: &str) -> PathBuf {
        self.root
            .join("normalized")
            .join(sys.as_str())
            .join(format!("{plot}.las"))
    }
    pub fn waveform(&self, sys: SystemTag, plot: &str) -> PathBuf {
        self.root
            .join("waveforms")
            .join(sys.as_str())
            .join(format!("{plot}.txt"))
    }
    pub fn metrics(&self, sys: SystemTag) -> PathBuf {
        self.root.join(format!("metrics_{sys}.csv"))
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots.csv")
    }
    pub fn selection(&self, sys: SystemTag, t: Target) -> PathBuf {
        self.root.join(format!("selection_{sys}_{t}.json"))
    }
    pub fn model(&self, sys: SystemTag, t: Target, kind: ModelKind) -> PathBuf {
        self.root
            .join(format!("model_{sys}_{t}_{}.json", kind.as_str()))
    }
    pub fn grid(&self, sys: SystemTag, t: Target) -> PathBuf {
        self.root.join(format!("grid_{sys}_{t}.csv"))
    }
    pub fn predictions(&self, sys: SystemTag, t: Target, kind: ModelKind) -> PathBuf {
        self.root
            .join(format!("predictions_{sys}_{t}_{}.csv", kind.as_str()))
    }
    pub fn comparison(&self, t: Target) -> PathBuf {
        self.root.join(format!("comparison_{t}.csv"))
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Create `path` (and its parent directories) for buffered writing.
pub fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(file_err(path))?))
}

pub fn open_file(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(file_err(path))?))
}

fn write_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    las_io::write_las(cloud, path).map_err(|e| Error::from(e).context(path.display().to_string()))
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    las_io::read_las(path).map_err(|e| Error::from(e).context(path.display().to_string()))
}

/// Rectangle around `poly` grown by `buffer` meters.
fn buffered_bounds(poly: &Polygon, buffer: f64) -> Result<Polygon> {
    let (mut x0, mut y0, mut x1, mut y1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for [x, y] in poly.vertices() {
        x0 = x0.min(*x);
        y0 = y0.min(*y);
        x1 = x1.max(*x);
        y1 = y1.max(*y);
    }
    Ok(Polygon::rectangle(
        x0 - buffer,
        y0 - buffer,
        x1 - x0 + 2.0 * buffer,
        y1 - y0 + 2.0 * buffer,
    )?)
}

/// Per-system, per-target evaluation line.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub system: SystemTag,
    pub target: Target,
    pub model: ModelKind,
    pub report: EvalReport,
    /// Mean percentage error on the held-out 20% plots.
    pub holdout_pct_error: Option<f64>,
    pub sigma: Option<f64>,
    pub cost: Option<f64>,
    pub cv_rmse: Option<f64>,
    pub variables: Vec<String>,
}

pub struct Pipeline {
    pub cfg: RunConfig,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Self {
        let layout = Layout::new(cfg.output.clone());
        Self { cfg, layout }
    }

    fn discrete_systems(&self) -> impl Iterator<Item = &SystemConfig> {
        self.cfg.systems.iter().filter(|s| s.source.is_none())
    }

    fn system_tags(&self) -> Vec<SystemTag> {
        self.cfg.systems.iter().map(|s| s.tag).collect()
    }

    /// Run all stages, or only `only`.
    pub fn run(&self, only: Option<Stage>) -> Result<Vec<SummaryRow>> {
        self.cfg.check_inputs()?;
        let stages: Vec<Stage> = match only {
            Some(s) => vec![s],
            None => Stage::ALL.to_vec(),
        };
        let mut summary = Vec::new();
        for stage in stages {
            self.run_stage(stage, &mut summary)
                .map_err(|e| e.context(format!("stage {stage}")))?;
        }
        Ok(summary)
    }

    fn run_stage(&self, stage: Stage, summary: &mut Vec<SummaryRow>) -> Result<()> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Preprocess => self.preprocess(),
            Stage::Metrics => self.metrics(),
            Stage::Inventory => self.inventory().map(|_| ()),
            Stage::Select => self.select(),
            Stage::Fit => self.fit(),
            Stage::Evaluate => {
                *summary = self.evaluate()?;
                Ok(())
            }
        }
    }

    /// Merge each discrete system's clouds, tile them, and cut a buffered
    /// rectangle around every plot.
    pub fn ingest(&self) -> Result<()> {
        let grid = TileGrid::new([0.0, 0.0], self.cfg.tile_size)?;
        for sys in self.discrete_systems() {
            let mut merged = PointCloud::default();
            for (k, path) in sys.clouds.iter().enumerate() {
                let c = read_cloud(path)?;
                if k == 0 {
                    merged = c;
                } else {
                    merged.points.extend(c.points);
                }
            }
            let tiles = tile(&merged, &grid);
            self.cfg
                .plots
                .par_iter()
                .map(|plot| {
                    let rect = buffered_bounds(&self.cfg.polygon(plot), self.cfg.buffer)?;
                    let b = rect.vertices();
                    let lo = grid.index_of(b[0][0], b[0][1]);
                    let hi = grid.index_of(b[2][0], b[2][1]);
                    let mut points = Vec::new();
                    for (idx, t) in &tiles {
                        if (lo.0..=hi.0).contains(&idx.0) && (lo.1..=hi.1).contains(&idx.1) {
                            points.extend(clip_polygon(t, &rect).points);
                        }
                    }
                    if points.is_empty() {
                        return Err(Error::from(las_io::LasError::EmptyCloud)
                            .context(format!("plot {} has no {} returns", plot.id, sys.tag)));
                    }
                    write_cloud(&merged.derive(points), &self.layout.clip(sys.tag, &plot.id))
                })
                .collect::<Result<Vec<()>>>()?;
        }
        Ok(())
    }

    /// Dedupe, denoise, classify ground and normalize every plot clip.
    pub fn preprocess(&self) -> Result<()> {
        let jobs: Vec<(SystemTag, &PlotConfig)> = self
            .discrete_systems()
            .flat_map(|s| self.cfg.plots.iter().map(move |p| (s.tag, p)))
            .collect();
        jobs.par_iter()
            .map(|&(sys, plot)| {
                let ctx = |e: Error| e.context(format!("{sys} plot {}", plot.id));
                let clip = read_cloud(&self.layout.clip(sys, &plot.id))?;
                let clean =
                    remove_noise(&dedupe(&clip), &self.cfg.noise).map_err(|e| ctx(e.into()))?;
                let (classified, dtm) =
                    classify_ground(&clean, &self.cfg.ground).map_err(|e| ctx(e.into()))?;
                write_cloud(&classified, &self.layout.ground(sys, &plot.id))?;
                let mut out = create_file(&self.layout.dtm(sys, &plot.id))?;
                dtm.write_text(&mut out)?;
                out.flush()?;
                let inside = clip_polygon(&classified, &self.cfg.polygon(plot));
                let norm = normalize_heights(&inside, &dtm, DEFAULT_HEIGHT_FLOOR)
                    .map_err(|e| ctx(e.into()))?;
                write_cloud(&norm.cloud, &self.layout.normalized(sys, &plot.id))
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    /// Discrete metrics from normalized plots; waveform metrics from
    /// footprints simulated at each plot centroid.
    pub fn metrics(&self) -> Result<()> {
        for sys in &self.cfg.systems {
            let rows: Vec<MetricVector> = self
                .cfg
                .plots
                .par_iter()
                .enumerate()
                .map(|(k, plot)| self.plot_metrics(sys, plot, k))
                .collect::<Result<_>>()?;
            let out = create_file(&self.layout.metrics(sys.tag))?;
            write_metrics_csv(&rows, out)?;
        }
        Ok(())
    }

    fn plot_metrics(
        &self,
        sys: &SystemConfig,
        plot: &PlotConfig,
        k: usize,
    ) -> Result<MetricVector> {
        let ctx = |e: Error| e.context(format!("{} plot {}", sys.tag, plot.id));
        match sys.source {
            None => {
                let cloud = read_cloud(&self.layout.normalized(sys.tag, &plot.id))?;
                let norm = crate::preprocess::NormalizedCloud::from_heights(cloud);
                cloud_metrics(&norm, self.cfg.height_cutoff, &plot.id, sys.tag)
                    .map_err(|e| ctx(e.into()))
            }
            Some(src) => {
                let cloud = read_cloud(&self.layout.ground(src, &plot.id))?;
                let center = self.cfg.polygon(plot).centroid();
                let fp = self
                    .cfg
                    .waveform
                    .footprint(center, self.cfg.seed.wrapping_add(k as u64));
                let (mut wf, m) = waveform_metrics(&cloud, &fp).map_err(|e| ctx(e.into()))?;
                wf.wave_id = plot.id.clone();
                let mut out = create_file(&self.layout.waveform(sys.tag, &plot.id))?;
                wf.write_text(&mut out)?;
                out.flush()?;
                let mut v = m.to_metric_vector(&plot.id)?;
                v.system = sys.tag;
                Ok(v)
            }
        }
    }

    /// Plot totals from the tree list (or a precomputed totals file).
    pub fn inventory(&self) -> Result<Vec<PlotTotals>> {
        let inv = &self.cfg.inventory;
        let totals = match (&inv.totals, &inv.trees) {
            (Some(path), _) => allometry::read_totals_csv(open_file(path)?)?,
            (None, Some(path)) => {
                let mut dens = match &inv.density {
                    Some(d) => DensityTable::read_csv(open_file(d)?)?,
                    None => DensityTable::default(),
                };
                dens.default = inv.default_density;
                let plots = allometry::read_inventory_csv(open_file(path)?, &dens, inv.area)?;
                plots
                    .iter()
                    .map(|p| p.totals())
                    .collect::<Result<Vec<_>, _>>()?
            }
            (None, None) => {
                return Err(Error::Config("inventory needs `trees` or `totals`".into()))
            }
        };
        let out = create_file(&self.layout.plots())?;
        allometry::write_totals_csv(&totals, out)?;
        Ok(totals)
    }

    fn load_table(&self, sys: SystemTag, target: Target) -> Result<(FeatureTable, Vec<String>)> {
        let metrics = read_metrics_csv(open_file(&self.layout.metrics(sys))?)?;
        let totals = allometry::read_totals_csv(open_file(&self.layout.plots())?)?;
        // keep the configured plot order
        let order: Vec<&str> = self.cfg.plots.iter().map(|p| p.id.as_str()).collect();
        let mut metrics: Vec<MetricVector> = metrics
            .into_iter()
            .filter(|m| order.contains(&m.plot_id.as_str()))
            .collect();
        metrics.sort_by_key(|m| order.iter().position(|o| *o == m.plot_id));
        Ok(assemble(&metrics, &totals, target)?)
    }

    fn read_selection(&self, sys: SystemTag, target: Target) -> Result<SelectionReport> {
        let path = self.layout.selection(sys, target);
        let text = fs::read_to_string(&path).map_err(file_err(&path))?;
        SelectionReport::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn select(&self) -> Result<()> {
        for sys in self.system_tags() {
            for &target in &self.cfg.models.targets {
                let (table, missing) = self.load_table(sys, target)?;
                let report = run_selection(&table, &self.cfg.models.selection, missing)
                    .map_err(|e| Error::from(e).context(format!("{sys} {target}")))?;
                let mut out = create_file(&self.layout.selection(sys, target))?;
                out.write_all(report.to_json().as_bytes())?;
                out.write_all(b"\n")?;
                out.flush()?;
            }
        }
        Ok(())
    }

    fn svr_params(&self) -> SvrParams {
        SvrParams {
            epsilon: self.cfg.models.epsilon,
            ..SvrParams::default()
        }
    }

    /// OLS subset search and SVR grid search on the selected variables.
    /// The final SVR is trained on the seeded 80% split.
    pub fn fit(&self) -> Result<()> {
        let jobs: Vec<(SystemTag, Target)> = self
            .system_tags()
            .into_iter()
            .flat_map(|s| self.cfg.models.targets.iter().map(move |&t| (s, t)))
            .collect();
        jobs.par_iter()
            .map(|&(sys, target)| {
                let ctx = |e: Error| e.context(format!("{sys} {target}"));
                let (table, _) = self.load_table(sys, target)?;
                let selected = self.read_selection(sys, target)?.selected;
                let m = &self.cfg.models;

                let ols = fit_ols(&table, &selected, m.ols_max_vars).map_err(|e| ctx(e.into()))?;
                Model::Ols(ols).write_json(create_file(&self.layout.model(
                    sys,
                    target,
                    ModelKind::Ols,
                ))?)?;

                let scheme = CvScheme {
                    seed: self.cfg.seed,
                    repeats: m.repeats,
                    ..CvScheme::default()
                };
                let grid = svr_grid_search(
                    &table,
                    &selected,
                    &m.sigma_grid,
                    &m.c_grid,
                    &scheme,
                    &self.svr_params(),
                )
                .map_err(|e| ctx(e.into()))?;
                grid.write_csv(create_file(&self.layout.grid(sys, target))?)
                    .map_err(|e| Error::Io(e.into()))?;
                let (train, _) =
                    split_80_20(table.rows(), self.cfg.seed).map_err(|e| ctx(e.into()))?;
                let params = SvrParams {
                    sigma: grid.best_sigma,
                    cost: grid.best_cost,
                    ..self.svr_params()
                };
                let svr = fit_svr(&table.rows_subset(&train), &selected, &params)
                    .map_err(|e| ctx(e.into()))?;
                Model::Svr(svr).write_json(create_file(&self.layout.model(
                    sys,
                    target,
                    ModelKind::Svr,
                ))?)?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    fn read_grid_best(&self, sys: SystemTag, target: Target) -> Result<Option<(f64, f64, f64)>> {
        let path = self.layout.grid(sys, target);
        let mut rdr = csv::Reader::from_reader(open_file(&path)?);
        let mut best: Option<(f64, f64, f64)> = None;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Io(e.into()))?;
            let num = |i: usize| {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .unwrap_or(f64::NAN)
            };
            let (s, c, r) = (num(0), num(1), num(2));
            let better = match best {
                None => true,
                Some((bs, bc, br)) => r
                    .total_cmp(&br)
                    .then(c.total_cmp(&bc))
                    .then(s.total_cmp(&bs))
                    .is_lt(),
            };
            if better {
                best = Some((s, c, r));
            }
        }
        Ok(best)
    }

    /// Predictions for every plot, error summaries and system comparison.
    pub fn evaluate(&self) -> Result<Vec<SummaryRow>> {
        let mut summary = Vec::new();
        for &target in &self.cfg.models.targets {
            let mut svr_errors = Vec::new();
            for sys in self.system_tags() {
                let (table, _) = self.load_table(sys, target)?;
                let (_, test) = split_80_20(table.rows(), self.cfg.seed)?;
                for kind in ModelKind::ALL {
                    let model =
                        Model::read_json(open_file(&self.layout.model(sys, target, kind))?)?;
                    let pred = model.predict(&table)?;
                    let rows: Vec<Prediction> = table
                        .plot_ids
                        .iter()
                        .zip(&table.target)
                        .zip(&pred)
                        .map(|((id, &o), &p)| Prediction {
                            plot_id: id.clone(),
                            observed: o,
                            predicted: p,
                        })
                        .collect();
                    write_predictions_csv(
                        &rows,
                        create_file(&self.layout.predictions(sys, target, kind))?,
                    )?;
                    let report = evaluate(&pred, &table.target)?;
                    let hp: Vec<f64> = test.iter().map(|&i| pred[i]).collect();
                    let ho: Vec<f64> = test.iter().map(|&i| table.target[i]).collect();
                    let holdout = crate::evaluate::mean_pct_error(&hp, &ho).ok();
                    let grid = match kind {
                        ModelKind::Svr => self.read_grid_best(sys, target)?,
                        ModelKind::Ols => None,
                    };
                    if kind == ModelKind::Svr {
                        let abs: Vec<f64> = pred
                            .iter()
                            .zip(&table.target)
                            .map(|(p, o)| (p - o).abs())
                            .collect();
                        svr_errors.push((sys.to_string(), abs));
                    }
                    summary.push(SummaryRow {
                        system: sys,
                        target,
                        model: kind,
                        report,
                        holdout_pct_error: holdout,
                        sigma: grid.map(|g| g.0),
                        cost: grid.map(|g| g.1),
                        cv_rmse: grid.map(|g| g.2),
                        variables: model.names().to_vec(),
                    });
                }
            }
            if svr_errors.len() >= 2 {
                let cmp = compare_models(&svr_errors)?;
                cmp.write_matrix_csv(create_file(&self.layout.comparison(target))?)?;
            }
        }
        self.write_summary(&summary)?;
        Ok(summary)
    }

    fn write_summary(&self, rows: &[SummaryRow]) -> Result<()> {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut w = csv::Writer::from_writer(create_file(&self.layout.summary())?);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record([
            "system",
            "target",
            "model",
            "n",
            "mae",
            "rmse",
            "mean_pct_error",
            "accuracy",
            "holdout_pct_error",
            "sigma",
            "C",
            "cv_rmse",
            "variables",
        ])
        .map_err(io)?;
        let mut report = String::new();
        let _ = writeln!(
            report,
            "{:<8} {:<5} {:<4} {:>9} {:>9} {:>8} {:>8}  variables",
            "system", "target", "model", "MAE", "RMSE", "%error", "accuracy"
        );
        for r in rows {
            w.write_record([
                r.system.to_string(),
                r.target.to_string(),
                r.model.as_str().to_string(),
                r.report.n.to_string(),
                r.report.mae.to_string(),
                r.report.rmse.to_string(),
                r.report.mean_pct_error.to_string(),
                r.report.accuracy.to_string(),
                opt(r.holdout_pct_error),
                opt(r.sigma),
                opt(r.cost),
                opt(r.cv_rmse),
                r.variables.join(";"),
            ])
            .map_err(io)?;
            let _ = writeln!(
                report,
                "{:<8} {:<6} {:<4} {:>9.3} {:>9.3} {:>8.2} {:>8.2}  {}",
                r.system.as_str(),
                r.target.as_str(),
                r.model.as_str(),
                r.report.mae,
                r.report.rmse,
                r.report.mean_pct_error,
                r.report.accuracy,
                r.variables.join(", ")
            );
        }
        w.flush()?;
        let mut out = create_file(&self.layout.report())?;
        out.write_all(report.as_bytes())?;
        out.flush()?;
        Ok(())
    }
}

/// Ground model text file reader, for stages that reuse a stored DTM.
pub fn read_dtm(path: &Path) -> Result<GroundModel> {
    Ok(GroundModel::read_text(open_file(path)?)?)
}

/// Load a run configuration and execute it.
pub fn run_config(path: &Path, only: Option<Stage>) -> Result<Vec<SummaryRow>> {
    let cfg = RunConfig::load(path)?;
    Pipeline::new(cfg).run(only)
}
