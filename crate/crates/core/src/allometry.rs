//! Tree- and plot-level aboveground biomass and carbon bookkeeping.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

pub const AGB_COEFFICIENT: f64 = 0.0673;
pub const AGB_EXPONENT: f64 = 0.976;
pub const CARBON_FRACTION: f64 = 0.47;
pub const CO2_PER_C: f64 = 3.67;
pub const DEFAULT_WOOD_DENSITY: f64 = 0.6;
/// Smallest stem diameter (cm) included in the census.
pub const MIN_DBH_CM: f64 = 5.0;
/// Default plot area (m²): a 20 m x 50 m plot.
pub const DEFAULT_PLOT_AREA: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum AllometryError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("wood density {0} outside (0.1, 1.5) g/cm3")]
    DensityRange(f64),
    #[error("dbh {0} cm below the {MIN_DBH_CM} cm census threshold")]
    BelowCensus(f64),
    #[error("plot {0} has no trees")]
    EmptyPlot(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn positive(name: &'static str, value: f64) -> Result<f64, AllometryError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(AllometryError::NonPositive { name, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<f64, AllometryError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(AllometryError::Negative { name, value })
    }
}

/// Aboveground biomass (kg) of one tree from wood density (g/cm³),
/// DBH (cm) and height (m).
pub fn tree_agb(rho: f64, dbh: f64, height: f64) -> Result<f64, AllometryError> {
    let rho = positive("wood density", rho)?;
    let dbh = positive("dbh", dbh)?;
    let height = positive("height", height)?;
    Ok(AGB_COEFFICIENT * (rho * dbh * dbh * height).powf(AGB_EXPONENT))
}

/// Carbon stock from biomass, same mass units.
pub fn carbon(agb: f64) -> Result<f64, AllometryError> {
    Ok(CARBON_FRACTION * non_negative("biomass", agb)?)
}

/// CO₂ equivalent of a carbon stock.
pub fn co2e(c: f64) -> Result<f64, AllometryError> {
    Ok(CO2_PER_C * non_negative("carbon", c)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub species: String,
    pub wood_density: f64,
    pub dbh: f64,
    pub height: f64,
}

impl TreeRecord {
    pub fn new(
        species: impl Into<String>,
        wood_density: f64,
        dbh: f64,
        height: f64,
    ) -> Result<Self, AllometryError> {
        if !(wood_density > 0.1 && wood_density < 1.5) {
            return Err(AllometryError::DensityRange(wood_density));
        }
        if !(dbh >= MIN_DBH_CM) {
            return Err(AllometryError::BelowCensus(dbh));
        }
        positive("height", height)?;
        Ok(Self {
            species: species.into(),
            wood_density,
            dbh,
            height,
        })
    }

    pub fn agb(&self) -> f64 {
        AGB_COEFFICIENT * (self.wood_density * self.dbh * self.dbh * self.height).powf(AGB_EXPONENT)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotInventory {
    pub plot_id: String,
    /// Plot area (m²).
    pub area: f64,
    pub trees: Vec<TreeRecord>,
}

/// Plot-level biomass and carbon.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotTotals {
    pub plot_id: String,
    pub n_trees: usize,
    pub area_m2: f64,
    /// Summed biomass in the plot (kg).
    pub agb_kg: f64,
    /// Total biomass density (Mg/ha).
    pub agbt: f64,
    /// Mean biomass per tree (kg).
    pub agbm: f64,
    /// Carbon density (Mg C/ha).
    pub carbon: f64,
    /// CO₂ equivalent density (Mg/ha).
    pub co2e: f64,
}

impl PlotInventory {
    pub fn new(plot_id: impl Into<String>, area: f64, trees: Vec<TreeRecord>) -> Self {
        Self {
            plot_id: plot_id.into(),
            area,
            trees,
        }
    }

    pub fn totals(&self) -> Result<PlotTotals, AllometryError> {
        plot_totals(self)
    }
}

pub fn plot_totals(inv: &PlotInventory) -> Result<PlotTotals, AllometryError> {
    let area = positive("plot area", inv.area)?;
    if inv.trees.is_empty() {
        return Err(AllometryError::EmptyPlot(inv.plot_id.clone()));
    }
    let agb_kg: f64 = inv.trees.iter().map(TreeRecord::agb).sum();
    let agbt = agb_kg / 1000.0 * (1e4 / area);
    let c = carbon(agbt)?;
    Ok(PlotTotals {
        plot_id: inv.plot_id.clone(),
        n_trees: inv.trees.len(),
        area_m2: area,
        agb_kg,
        agbt,
        agbm: agb_kg / inv.trees.len() as f64,
        carbon: c,
        co2e: co2e(c)?,
    })
}

/// Species to wood density, with a fallback for unlisted species.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityTable {
    pub default: f64,
    pub by_species: BTreeMap<String, f64>,
}

impl Default for DensityTable {
    fn default() -> Self {
        Self {
            default: DEFAULT_WOOD_DENSITY,
            by_species: BTreeMap::new(),
        }
    }
}

impl DensityTable {
    pub fn lookup(&self, species: &str) -> f64 {
        self.by_species
            .get(species)
            .copied()
            .unwrap_or(self.default)
    }

    /// Read a `species,rho` CSV with a header row.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, AllometryError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut table = Self::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let species = rec.get(0).unwrap_or_default().to_string();
            let rho: f64 =
                rec.get(1)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| AllometryError::Parse {
                        line,
                        message: "bad rho".into(),
                    })?;
            table.by_species.insert(species, rho);
        }
        Ok(table)
    }
}

/// Read a tree inventory CSV (`plot_id,species,dbh_cm,height_m[,rho]`) into
/// plots keyed by id. Trees without a `rho` value use `densities`.
pub fn read_inventory_csv<R: Read>(
    input: R,
    densities: &DensityTable,
    area: f64,
) -> Result<Vec<PlotInventory>, AllometryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| AllometryError::Parse {
        line: 1,
        message: format!("missing column {name}"),
    };
    let plot_c = col("plot_id").ok_or_else(|| missing("plot_id"))?;
    let species_c = col("species").ok_or_else(|| missing("species"))?;
    let dbh_c = col("dbh_cm").ok_or_else(|| missing("dbh_cm"))?;
    let height_c = col("height_m").ok_or_else(|| missing("height_m"))?;
    let rho_c = col("rho");

    let mut plots: BTreeMap<String, Vec<TreeRecord>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |c: usize, what: &str| -> Result<f64, AllometryError> {
            rec.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| AllometryError::Parse {
                    line,
                    message: format!("bad {what}"),
                })
        };
        let species = rec.get(species_c).unwrap_or_default();
        let rho = match rho_c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            Some(s) => s.parse().map_err(|_| AllometryError::Parse {
                line,
                message: "bad rho".into(),
            })?,
            None => densities.lookup(species),
        };
        let tree = TreeRecord::new(
            species,
            rho,
            num(dbh_c, "dbh_cm")?,
            num(height_c, "height_m")?,
        )
        .map_err(|e| AllometryError::Parse {
            line,
            message: e.to_string(),
        })?;
        plots
            .entry(rec.get(plot_c).unwrap_or_default().to_string())
            .or_default()
            .push(tree);
    }
    Ok(plots
        .into_iter()
        .map(|(id, trees)| PlotInventory::new(id, area, trees))
        .collect())
}

pub fn write_inventory_csv<W: Write>(
    trees: &[(String, TreeRecord)],
    out: W,
) -> Result<(), AllometryError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["plot_id", "species", "dbh_cm", "height_m", "rho"])?;
    for (plot, t) in trees {
        w.write_record([
            plot.clone(),
            t.species.clone(),
            t.dbh.to_string(),
            t.height.to_string(),
            t.wood_density.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write plot totals with a header row.
pub fn write_totals_csv<W: Write>(totals: &[PlotTotals], out: W) -> Result<(), AllometryError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "plot_id", "n_trees", "area_m2", "agb_kg", "AGBt", "AGBm", "carbon", "co2e",
    ])?;
    for t in totals {
        w.write_record([
            t.plot_id.clone(),
            t.n_trees.to_string(),
            t.area_m2.to_string(),
            t.agb_kg.to_string(),
            t.agbt.to_string(),
            t.agbm.to_string(),
            t.carbon.to_string(),
            t.co2e.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read plot totals; only `plot_id`, `AGBt` and `AGBm` are required.
pub fn read_totals_csv<R: Read>(input: R) -> Result<Vec<PlotTotals>, AllometryError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| AllometryError::Parse {
            line: 1,
            message: format!("missing column {name}"),
        })
    };
    let (pc, tc, mc) = (required("plot_id")?, required("AGBt")?, required("AGBm")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |c: Option<usize>| -> Result<f64, AllometryError> {
            match c.and_then(|c| rec.get(c)) {
                None => Ok(f64::NAN),
                Some(s) => s.parse().map_err(|_| AllometryError::Parse {
                    line,
                    message: format!("bad number {s:?}"),
                }),
            }
        };
        out.push(PlotTotals {
            plot_id: rec.get(pc).unwrap_or_default().to_string(),
            n_trees: num(col("n_trees"))? as usize,
            area_m2: num(col("area_m2"))?,
            agb_kg: num(col("agb_kg"))?,
            agbt: num(Some(tc))?,
            agbm: num(Some(mc))?,
            carbon: num(col("carbon"))?,
            co2e: num(col("co2e"))?,
        });
    }
    Ok(out)
}
