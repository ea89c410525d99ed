//! Canopy height and intensity statistics for a normalized plot cloud,
//! plus the per-plot metric vector and its CSV form.

use crate::preprocess::NormalizedCloud;
use crate::stats::{mean, median_sorted, percentile_sorted};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use thiserror::Error;

/// Default height cutoff (m) below which returns are left out of canopy statistics.
pub const DEFAULT_HEIGHT_CUTOFF: f64 = 1.37;

/// Percentiles reported for each channel.
pub const PERCENTILES: [u32; 15] = [1, 5, 10, 20, 25, 30, 40, 50, 60, 70, 75, 80, 90, 95, 99];

const HEIGHT_MODE_BIN: f64 = 0.5;
const INTENSITY_MODE_BIN: f64 = 1.0;
const MAX_RETURN_COUNTS: u8 = 9;
const MISSING: &str = "NA";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least {need} returns above the height cutoff, have {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("empty input")]
    Empty,
    #[error("duplicate metric name {0:?}")]
    DuplicateName(String),
    #[error("metric rows disagree on column names (plot {0})")]
    SchemaMismatch(String),
    #[error("unknown system tag {0:?}")]
    UnknownSystem(String),
    #[error("cannot parse {value:?} in column {column}")]
    Parse { column: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sensing system a metric vector was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SystemTag {
    #[serde(rename = "ALS_D")]
    AlsD,
    #[serde(rename = "ULS_D")]
    UlsD,
    #[serde(rename = "SLS_FW")]
    SlsFw,
}

impl SystemTag {
    pub const ALL: [SystemTag; 3] = [SystemTag::AlsD, SystemTag::UlsD, SystemTag::SlsFw];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemTag::AlsD => "ALS_D",
            SystemTag::UlsD => "ULS_D",
            SystemTag::SlsFw => "SLS_FW",
        }
    }
}

impl fmt::Display for SystemTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemTag {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "ALS_D" | "ALS" => Ok(SystemTag::AlsD),
            "ULS_D" | "ULS" => Ok(SystemTag::UlsD),
            "SLS_FW" | "SLS" => Ok(SystemTag::SlsFw),
            _ => Err(MetricsError::UnknownSystem(s.to_string())),
        }
    }
}

/// Named features for one plot from one system. `None` marks a value that
/// is undefined for this sample (e.g. CV of a constant channel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub plot_id: String,
    pub system: SystemTag,
    entries: Vec<(String, Option<f64>)>,
}

impl MetricVector {
    pub fn new(plot_id: impl Into<String>, system: SystemTag) -> Self {
        Self {
            plot_id: plot_id.into(),
            system,
            entries: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        value: Option<f64>,
    ) -> Result<(), MetricsError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(MetricsError::DuplicateName(name));
        }
        let value = value.filter(|v| v.is_finite());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn extend(
        &mut self,
        other: impl IntoIterator<Item = (String, Option<f64>)>,
    ) -> Result<(), MetricsError> {
        for (n, v) in other {
            self.push(n, v)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| *v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> &[(String, Option<f64>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Percentile of unsorted values by linear interpolation between order
/// statistics (rank `p / 100 * (n - 1)`).
pub fn percentile(values: &[f64], p: f64) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

/// Unbiased sample L-moments λ1..λ4 from probability-weighted moments.
/// λ3 needs n >= 3 and λ4 needs n >= 4; shorter samples give `None` there.
pub fn l_moments(sorted: &[f64]) -> [Option<f64>; 4] {
    let n = sorted.len();
    let mut b = [0.0f64; 4];
    for (i, &x) in sorted.iter().enumerate() {
        // weight_r = C(i, r) / C(n - 1, r) with 0-based rank i
        let mut w = 1.0;
        b[0] += x;
        for r in 1..4 {
            if n <= r {
                break;
            }
            w *= (i as f64 - (r - 1) as f64) / (n - r) as f64;
            if w <= 0.0 {
                break;
            }
            b[r] += w * x;
        }
    }
    let nf = n as f64;
    for v in b.iter_mut() {
        *v /= nf;
    }
    let l1 = (n >= 1).then_some(b[0]);
    let l2 = (n >= 2).then(|| 2.0 * b[1] - b[0]);
    let l3 = (n >= 3).then(|| 6.0 * b[2] - 6.0 * b[1] + b[0]);
    let l4 = (n >= 4).then(|| 20.0 * b[3] - 30.0 * b[2] + 12.0 * b[1] - b[0]);
    [l1, l2, l3, l4]
}

/// Mean of the values inside the most populated bin of width `bin`,
/// bins anchored at the sample minimum; ties go to the lower bin.
pub fn binned_mode(sorted: &[f64], bin: f64) -> f64 {
    let min = sorted[0];
    let index = |v: f64| ((v - min) / bin).floor() as i64;
    let (mut best_count, mut best_sum) = (0usize, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let b = index(sorted[i]);
        let (mut count, mut sum) = (0usize, 0.0);
        while i < sorted.len() && index(sorted[i]) == b {
            count += 1;
            sum += sorted[i];
            i += 1;
        }
        if count > best_count {
            best_count = count;
            best_sum = sum;
        }
    }
    best_sum / best_count as f64
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

fn percentile_name(p: u32) -> String {
    format!("P{p:02}")
}

/// Distribution statistics for one channel, names prefixed by `prefix`.
fn channel_stats(prefix: &str, values: &[f64], mode_bin: f64) -> Vec<(String, Option<f64>)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let m = mean(&sorted);
    let median = median_sorted(&sorted);
    let mode = binned_mode(&sorted, mode_bin);
    let (mut m2, mut m3, mut m4, mut aad) = (0.0, 0.0, 0.0, 0.0);
    for v in &sorted {
        let d = v - m;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        aad += d.abs();
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    aad /= n;
    let variance = if sorted.len() > 1 {
        m2 * n / (n - 1.0)
    } else {
        0.0
    };
    let stddev = variance.sqrt();
    let degenerate = m2 <= 0.0;
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad_median = median_sorted(&dev);
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - mode).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad_mode = median_sorted(&dev);
    let [l1, l2, l3, l4] = l_moments(&sorted);
    let lratio = |l: Option<f64>| match (l, l2) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };

    let mut out = vec![
        ("minimum".to_string(), Some(min)),
        ("maximum".to_string(), Some(max)),
        ("mean".to_string(), Some(m)),
        ("median".to_string(), Some(median)),
        ("mode".to_string(), Some(mode)),
        ("stddev".to_string(), Some(stddev)),
        ("variance".to_string(), Some(variance)),
        (
            "CV".to_string(),
            if degenerate { None } else { ratio(stddev, m) },
        ),
        (
            "IQ".to_string(),
            Some(percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0)),
        ),
        (
            "skewness".to_string(),
            (!degenerate).then(|| m3 / m2.powf(1.5)),
        ),
        (
            "kurtosis".to_string(),
            (!degenerate).then(|| m4 / (m2 * m2)),
        ),
        ("AAD".to_string(), Some(aad)),
        ("MAD.median".to_string(), Some(mad_median)),
        ("MAD.mode".to_string(), Some(mad_mode)),
        ("L1".to_string(), l1),
        ("L2".to_string(), l2),
        ("L3".to_string(), l3),
        ("L4".to_string(), l4),
        ("L.skewness".to_string(), lratio(l3)),
        ("L.kurtosis".to_string(), lratio(l4)),
    ];
    for p in PERCENTILES {
        out.push((
            percentile_name(p),
            Some(percentile_sorted(&sorted, p as f64)),
        ));
    }
    out.into_iter()
        .map(|(name, v)| (format!("{prefix}.{name}"), v))
        .collect()
}

/// Full canopy metric suite for one normalized plot cloud.
///
/// Return counts cover every point; distribution statistics cover only the
/// returns above `height_cutoff`.
pub fn cloud_metrics(
    cloud: &NormalizedCloud,
    height_cutoff: f64,
    plot_id: &str,
    system: SystemTag,
) -> Result<MetricVector, MetricsError> {
    let points = cloud.points();
    let canopy: Vec<_> = points.iter().filter(|p| p.z > height_cutoff).collect();
    if canopy.len() < 2 {
        return Err(MetricsError::TooFewPoints {
            need: 2,
            have: canopy.len(),
        });
    }
    let mut mv = MetricVector::new(plot_id, system);
    mv.push("Total.return.count", Some(points.len() as f64))?;
    for r in 1..=MAX_RETURN_COUNTS {
        let count = points.iter().filter(|p| p.return_number == r).count();
        mv.push(format!("Return.{r}.count"), Some(count as f64))?;
    }

    let heights: Vec<f64> = canopy.iter().map(|p| p.z).collect();
    let intensity: Vec<f64> = canopy.iter().map(|p| p.intensity as f64).collect();
    mv.extend(channel_stats("Elev", &heights, HEIGHT_MODE_BIN))?;

    let (min, max) = heights
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &h| {
            (a.min(h), b.max(h))
        });
    let m = mean(&heights);
    let n = heights.len() as f64;
    mv.push("Canopy.relief.ratio", ratio(m - min, max - min))?;
    mv.push(
        "Elev.SQRT.mean.SQ",
        Some((heights.iter().map(|h| h * h).sum::<f64>() / n).sqrt()),
    )?;
    mv.push(
        "Elev.CURT.mean.CUBE",
        Some((heights.iter().map(|h| h * h * h).sum::<f64>() / n).cbrt()),
    )?;

    mv.extend(channel_stats("Int", &intensity, INTENSITY_MODE_BIN))?;
    Ok(mv)
}

/// Write rows sharing one column order as CSV (`plot_id,system,<metrics>`).
pub fn write_metrics_csv<W: Write>(rows: &[MetricVector], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = rows.first() else {
        w.flush()?;
        return Ok(());
    };
    let names: Vec<&str> = first.names().collect();
    let mut header = vec!["plot_id", "system"];
    header.extend(names.iter().copied());
    w.write_record(&header)?;
    for row in rows {
        if row.len() != names.len() || !row.names().zip(&names).all(|(a, b)| a == *b) {
            return Err(MetricsError::SchemaMismatch(row.plot_id.clone()));
        }
        let mut rec = vec![row.plot_id.clone(), row.system.to_string()];
        rec.extend(row.entries().iter().map(|(_, v)| match v {
            Some(v) => v.to_string(),
            None => MISSING.to_string(),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricVector>, MetricsError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "plot_id" || &header[1] != "system" {
        return Err(MetricsError::SchemaMismatch(
            "header must start with plot_id,system".into(),
        ));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut mv = MetricVector::new(&rec[0], rec[1].parse()?);
        for (name, raw) in header.iter().zip(rec.iter()).skip(2) {
            let value = if raw == MISSING || raw.is_empty() {
                None
            } else {
                Some(raw.parse::<f64>().map_err(|_| MetricsError::Parse {
                    column: name.to_string(),
                    value: raw.to_string(),
                })?)
            };
            mv.push(name, value)?;
        }
        rows.push(mv);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::las_io::{PointCloud, PointRecord};

    fn cloud_of(heights: &[f64]) -> NormalizedCloud {
        NormalizedCloud::from_heights(PointCloud::new(
            heights
                .iter()
                .enumerate()
                .map(|(i, &h)| PointRecord::new(i as f64, 0.0, h).with_intensity(10 + i as u16))
                .collect(),
        ))
    }

    #[test]
    fn relief_ratio_two_points() {
        let mv = cloud_metrics(&cloud_of(&[0.0, 10.0]), -1.0, "p", SystemTag::AlsD).unwrap();
        assert_eq!(mv.get("Elev.minimum"), Some(0.0));
        assert_eq!(mv.get("Elev.maximum"), Some(10.0));
        assert_eq!(mv.get("Elev.mean"), Some(5.0));
        assert_eq!(mv.get("Canopy.relief.ratio"), Some(0.5));
    }

    #[test]
    fn l_moments_symmetric_sample() {
        let [l1, l2, l3, _] = l_moments(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(l1, Some(2.5));
        assert!((l2.unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!(l3.unwrap().abs() < 1e-15);
    }

    #[test]
    fn mad_median_direct_definition() {
        // median 1.5, absolute deviations {0.5, 0.5, 0.5, 7.5}
        let mv =
            cloud_metrics(&cloud_of(&[1.0, 1.0, 2.0, 9.0]), 0.0, "p", SystemTag::AlsD).unwrap();
        assert_eq!(mv.get("Elev.MAD.median"), Some(0.5));
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[5.0], 37.0).unwrap(), 5.0);
        assert_eq!(percentile(&[0.0, 10.0], 50.0).unwrap(), 5.0);
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((percentile(&v, 25.0).unwrap() - 3.25).abs() < 1e-15);
        assert!(matches!(percentile(&[], 50.0), Err(MetricsError::Empty)));
    }

    #[test]
    fn constant_channel_flags_undefined() {
        let mv = cloud_metrics(&cloud_of(&[4.0, 4.0, 4.0]), 1.37, "p", SystemTag::UlsD).unwrap();
        assert_eq!(mv.get("Elev.CV"), None);
        assert_eq!(mv.get("Elev.skewness"), None);
        assert_eq!(mv.get("Elev.stddev"), Some(0.0));
        assert_eq!(mv.get("Canopy.relief.ratio"), None);
        assert!(mv.contains("Elev.CV"));
    }

    #[test]
    fn too_few_points_above_cutoff() {
        let err = cloud_metrics(&cloud_of(&[0.2, 0.5, 3.0]), 1.37, "p", SystemTag::AlsD);
        assert!(matches!(
            err,
            Err(MetricsError::TooFewPoints { have: 1, .. })
        ));
    }

    #[test]
    fn mode_ties_go_low() {
        assert_eq!(binned_mode(&[1.0, 1.1, 3.0, 3.2], 0.5), 1.05);
        assert_eq!(binned_mode(&[7.0, 7.0, 8.0, 9.0, 9.0], 1.0), 7.0);
    }

    #[test]
    fn return_counts() {
        let pts = vec![
            PointRecord::new(0.0, 0.0, 5.0).with_returns(1, 2),
            PointRecord::new(0.0, 0.0, 0.1).with_returns(2, 2),
            PointRecord::new(1.0, 0.0, 6.0),
        ];
        let mv = cloud_metrics(
            &NormalizedCloud::from_heights(PointCloud::new(pts)),
            1.37,
            "p",
            SystemTag::AlsD,
        )
        .unwrap();
        assert_eq!(mv.get("Total.return.count"), Some(3.0));
        assert_eq!(mv.get("Return.1.count"), Some(2.0));
        assert_eq!(mv.get("Return.2.count"), Some(1.0));
        assert_eq!(mv.get("Return.9.count"), Some(0.0));
    }

    #[test]
    fn csv_round_trip_with_missing() {
        let mut a = MetricVector::new("E1", SystemTag::AlsD);
        a.push("x", Some(1.5)).unwrap();
        a.push("y", None).unwrap();
        let mut b = MetricVector::new("E2", SystemTag::AlsD);
        b.push("x", Some(-0.25)).unwrap();
        b.push("y", Some(3.0)).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("plot_id,system,x,y\nE1,ALS_D,1.5,NA\n"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), vec![a, b]);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let mut a = MetricVector::new("E1", SystemTag::AlsD);
        a.push("x", Some(1.0)).unwrap();
        let mut b = MetricVector::new("E2", SystemTag::AlsD);
        b.push("z", Some(1.0)).unwrap();
        assert!(matches!(
            write_metrics_csv(&[a, b], Vec::new()),
            Err(MetricsError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = MetricVector::new("E1", SystemTag::AlsD);
        a.push("x", Some(1.0)).unwrap();
        assert!(a.push("x", Some(2.0)).is_err());
    }
}
