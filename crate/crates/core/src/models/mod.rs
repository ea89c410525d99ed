//! Regression models: exhaustive-subset OLS and RBF ε-SVR, with seeded
//! splits and repeated-holdout grid search.

mod cv;
mod ols;
mod svr;

pub use cv::{
    grid_search, split_80_20, svr_grid_search, CvScheme, GridCell, GridResult, DEFAULT_C_GRID,
    DEFAULT_SIGMA_GRID,
};
pub use ols::{fit_ols, OlsModel};
pub use svr::{fit_svr, fit_svr_rows, SvrDiagnostics, SvrModel, SvrParams};

use crate::features::FeatureTable;
use crate::stats::pearson;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least {need} rows, have {have}")]
    TooFewRows { need: usize, have: usize },
    #[error("no usable variable subset")]
    NoUsableSubset,
    #[error("rank-deficient design for {0:?}")]
    RankDeficient(Vec<String>),
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("solver did not converge within {iterations} iterations (violation {violation:e})")]
    NonConvergence { iterations: usize, violation: f64 },
    #[error("feature {0:?} missing from input")]
    MissingFeature(String),
    #[error("empty grid")]
    EmptyGrid,
    #[error("degenerate training set in repeat {repeat}: {reason}")]
    DegenerateFold { repeat: usize, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A fitted model of either family, as stored in model files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Ols(OlsModel),
    Svr(SvrModel),
}

impl Model {
    pub fn names(&self) -> &[String] {
        match self {
            Model::Ols(m) => &m.names,
            Model::Svr(m) => &m.names,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Model::Ols(m) => m.predict_row(row),
            Model::Svr(m) => m.predict_row(row),
        }
    }

    /// Predict every row of `table`, picking columns by the model's names.
    pub fn predict(&self, table: &FeatureTable) -> Result<Vec<f64>, ModelError> {
        let cols = columns_for(table, self.names())?;
        Ok((0..table.rows())
            .map(|i| {
                let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
                self.predict_row(&row)
            })
            .collect())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), ModelError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self, ModelError> {
        Ok(serde_json::from_reader(input)?)
    }
}

pub(crate) fn columns_for<'a>(
    table: &'a FeatureTable,
    names: &[String],
) -> Result<Vec<&'a [f64]>, ModelError> {
    names
        .iter()
        .map(|n| {
            table
                .column(n)
                .ok_or_else(|| ModelError::MissingFeature(n.clone()))
        })
        .collect()
}

/// Squared Pearson correlation between predictions and observations;
/// `None` when either side is constant.
pub fn r_squared(pred: &[f64], obs: &[f64]) -> Option<f64> {
    pearson(pred, obs).map(|r| r * r)
}
