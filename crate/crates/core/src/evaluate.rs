//! Error metrics, percentage errors, accuracy and paired model comparison
//! with Bonferroni adjustment.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions vs {obs} observations")]
    LengthMismatch { pred: usize, obs: usize },
    #[error("no values to evaluate")]
    Empty,
    #[error("observation {index} is not positive ({value})")]
    NonPositiveObservation { index: usize, value: f64 },
    #[error("need at least {need} paired plots, have {have}")]
    TooFewPairs { need: usize, have: usize },
    #[error("need at least two systems to compare")]
    TooFewSystems,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check(pred: &[f64], obs: &[f64]) -> Result<(), EvalError> {
    if pred.len() != obs.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            obs: obs.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn mae(pred: &[f64], obs: &[f64]) -> Result<f64, EvalError> {
    check(pred, obs)?;
    Ok(pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (p - o).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

pub fn rmse(pred: &[f64], obs: &[f64]) -> Result<f64, EvalError> {
    check(pred, obs)?;
    Ok((pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (p - o).powi(2))
        .sum::<f64>()
        / pred.len() as f64)
        .sqrt())
}

/// Per-plot absolute percentage errors `100 |pred - obs| / obs`.
pub fn pct_errors(pred: &[f64], obs: &[f64]) -> Result<Vec<f64>, EvalError> {
    check(pred, obs)?;
    pred.iter()
        .zip(obs)
        .enumerate()
        .map(|(index, (&p, &o))| {
            if o > 0.0 {
                Ok(100.0 * (p - o).abs() / o)
            } else {
                Err(EvalError::NonPositiveObservation { index, value: o })
            }
        })
        .collect()
}

pub fn mean_pct_error(pred: &[f64], obs: &[f64]) -> Result<f64, EvalError> {
    let e = pct_errors(pred, obs)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mean_pct_error: f64,
    /// 100 minus the mean percentage error.
    pub accuracy: f64,
    pub pct_errors: Vec<f64>,
}

pub fn evaluate(pred: &[f64], obs: &[f64]) -> Result<EvalReport, EvalError> {
    let pct = pct_errors(pred, obs)?;
    let mean_pct = pct.iter().sum::<f64>() / pct.len() as f64;
    Ok(EvalReport {
        n: pred.len(),
        mae: mae(pred, obs)?,
        rmse: rmse(pred, obs)?,
        mean_pct_error: mean_pct,
        accuracy: 100.0 - mean_pct,
        pct_errors: pct,
    })
}

/// Two-sided paired t-test on `a - b`. Returns `(mean difference, t, p)`.
/// With zero spread the p-value is 1 for a zero mean difference, else 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64), EvalError> {
    check(a, b)?;
    let n = a.len();
    if n < 3 {
        return Err(EvalError::TooFewPairs { need: 3, have: n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    if !(se > 0.0) {
        let (t, p) = if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok((mean, t, p));
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok((mean, t, p))
}

/// Bonferroni: `min(1, m p)`.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    /// Mean of |err_a| - |err_b| over plots.
    pub difference: f64,
    pub t: f64,
    pub p_raw: f64,
    pub p_adj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub systems: Vec<String>,
    pub pairs: Vec<PairComparison>,
}

/// Compare every pair of systems on absolute errors paired by plot.
pub fn compare_models(errors: &[(String, Vec<f64>)]) -> Result<Comparison, EvalError> {
    if errors.len() < 2 {
        return Err(EvalError::TooFewSystems);
    }
    let k = errors.len();
    let m = k * (k - 1) / 2;
    let abs: Vec<Vec<f64>> = errors
        .iter()
        .map(|(_, e)| e.iter().map(|v| v.abs()).collect())
        .collect();
    let mut pairs = Vec::with_capacity(m);
    for i in 0..k {
        for j in i + 1..k {
            let (difference, t, p_raw) = paired_t_test(&abs[i], &abs[j])?;
            pairs.push(PairComparison {
                a: errors[i].0.clone(),
                b: errors[j].0.clone(),
                difference,
                t,
                p_raw,
                p_adj: bonferroni(p_raw, m),
            });
        }
    }
    Ok(Comparison {
        systems: errors.iter().map(|e| e.0.clone()).collect(),
        pairs,
    })
}

impl Comparison {
    /// Square table: differences above the diagonal, adjusted p-values below.
    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.systems.iter().cloned());
        w.write_record(&header)?;
        let lookup: BTreeMap<(&str, &str), &PairComparison> = self
            .pairs
            .iter()
            .map(|p| ((p.a.as_str(), p.b.as_str()), p))
            .collect();
        for (i, a) in self.systems.iter().enumerate() {
            let mut row = vec![a.clone()];
            for (j, b) in self.systems.iter().enumerate() {
                row.push(match i.cmp(&j) {
                    std::cmp::Ordering::Equal => String::new(),
                    std::cmp::Ordering::Less => {
                        lookup[&(a.as_str(), b.as_str())].difference.to_string()
                    }
                    std::cmp::Ordering::Greater => {
                        lookup[&(b.as_str(), a.as_str())].p_adj.to_string()
                    }
                });
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One plot's observed and predicted value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub plot_id: String,
    pub observed: f64,
    pub predicted: f64,
}

pub fn write_predictions_csv<W: Write>(rows: &[Prediction], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["plot_id", "observed", "predicted", "pct_error"])?;
    for r in rows {
        let pct = if r.observed > 0.0 {
            (100.0 * (r.predicted - r.observed).abs() / r.observed).to_string()
        } else {
            "NA".to_string()
        };
        w.write_record([
            r.plot_id.clone(),
            r.observed.to_string(),
            r.predicted.to_string(),
            pct,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv<R: Read>(input: R) -> Result<Vec<Prediction>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| EvalError::Parse {
                line: 1,
                message: format!("missing column {name}"),
            })
    };
    let (pc, oc, rc) = (col("plot_id")?, col("observed")?, col("predicted")?);
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let num = |c: usize| {
                rec.get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| EvalError::Parse {
                        line: i + 2,
                        message: "bad number".into(),
                    })
            };
            Ok(Prediction {
                plot_id: rec.get(pc).unwrap_or_default().to_string(),
                observed: num(oc)?,
                predicted: num(rc)?,
            })
        })
        .collect()
}
