//! Error metrics, image-quality and correlation measures, the
//! Mann–Whitney U test, and median ± IQR/2 summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{QpatError, Result};
use crate::quant::RegionKind;

pub const DEFAULT_GCNR_BINS: usize = 256;
/// Largest group size for which p-values are computed by enumeration.
pub const EXACT_MAX_GROUP: usize = 8;

/// |x − x̂|/x · 100.
pub fn rel_error(reference: f64, estimate: f64) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(QpatError::Domain(format!("relative error needs a positive reference, got {reference}")));
    }
    Ok((reference - estimate).abs() / reference * 100.0)
}

/// |x − x̂|.
pub fn abs_error(reference: f64, estimate: f64) -> f64 {
    (reference - estimate).abs()
}

/// Generalized contrast-to-noise ratio: one minus the overlap of the two
/// normalized histograms over the pooled range. Non-finite values are
/// ignored.
pub fn gcnr(inclusion: &[f64], background: &[f64], n_bins: usize) -> Result<f64> {
    let a: Vec<f64> = inclusion.iter().copied().filter(|v| v.is_finite()).collect();
    let b: Vec<f64> = background.iter().copied().filter(|v| v.is_finite()).collect();
    if a.is_empty() || b.is_empty() {
        return Err(QpatError::Domain("gCNR needs two non-empty samples".into()));
    }
    if n_bins == 0 {
        return Err(QpatError::Config("gCNR needs at least one bin".into()));
    }
    let (lo, hi) = a.iter().chain(&b).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let hist = |xs: &[f64]| {
        let mut h = vec![0.0; n_bins];
        for &v in xs {
            let k = if hi > lo { ((v - lo) / (hi - lo) * n_bins as f64) as usize } else { 0 };
            h[k.min(n_bins - 1)] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|c| *c /= n);
        h
    };
    let (ha, hb) = (hist(&a), hist(&b));
    let overlap: f64 = ha.iter().zip(&hb).map(|(x, y)| x.min(*y)).sum();
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

/// Product-moment correlation coefficient.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(QpatError::Dimension(format!("{} vs {} values", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(QpatError::Domain("correlation needs at least two pairs".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(QpatError::Domain("correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub method: PValueMethod,
}

/// Midranks (1-based) of the pooled sample, and Σ(t³ − t) over tie groups.
fn midranks(pooled: &[f64]) -> (Vec<f64>, f64) {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    (ranks, ties)
}

fn u_statistic(ranks_a: impl Iterator<Item = f64>, na: usize) -> f64 {
    ranks_a.sum::<f64>() - (na * (na + 1)) as f64 / 2.0
}

/// Two-sided p-value from the tie-corrected normal approximation with
/// continuity correction.
pub fn mann_whitney_normal_p(u: f64, na: usize, nb: usize, tie_sum: f64) -> f64 {
    let n = (na + nb) as f64;
    let mean = (na * nb) as f64 / 2.0;
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Two-sided exact p-value: the share of all assignments of the pooled
/// midranks to the first group whose U lies at least as far from its mean.
pub fn mann_whitney_exact_p(u: f64, ranks: &[f64], na: usize) -> f64 {
    let n = ranks.len();
    let mean = (na * (n - na)) as f64 / 2.0;
    let dev = (u - mean).abs() - 1e-9;
    let (mut hits, mut total) = (0u64, 0u64);
    // iterate over combinations as index vectors in lexicographic order
    let mut c: Vec<usize> = (0..na).collect();
    loop {
        let ua = u_statistic(c.iter().map(|&k| ranks[k]), na);
        total += 1;
        if (ua - mean).abs() >= dev {
            hits += 1;
        }
        let mut i = na;
        loop {
            if i == 0 {
                return hits as f64 / total as f64;
            }
            i -= 1;
            if c[i] < n - na + i {
                break;
            }
        }
        c[i] += 1;
        for j in i + 1..na {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Mann–Whitney U test. p is exact when both groups have at most
/// [`EXACT_MAX_GROUP`] members, otherwise from the normal approximation.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(QpatError::Domain("Mann-Whitney needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(QpatError::Domain("Mann-Whitney samples must be finite".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let u = u_statistic(ranks[..a.len()].iter().copied(), a.len());
    if a.len().max(b.len()) <= EXACT_MAX_GROUP {
        Ok(MannWhitney { u, p: mann_whitney_exact_p(u, &ranks, a.len()), method: PValueMethod::Exact })
    } else {
        Ok(MannWhitney { u, p: mann_whitney_normal_p(u, a.len(), b.len(), ties), method: PValueMethod::Normal })
    }
}

/// Quantile with linear interpolation between order statistics
/// (Hyndman–Fan type 7).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median ± IQR/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub half_iqr: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Err(QpatError::Aggregation("nothing to summarize".into()));
        }
        v.sort_by(f64::total_cmp);
        Ok(Self {
            median: quantile(&v, 0.5),
            half_iqr: (quantile(&v, 0.75) - quantile(&v, 0.25)) / 2.0,
            n: v.len(),
        })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(2);
        write!(f, "{:.p$} ± {:.p$}", self.median, self.half_iqr)
    }
}

/// One region estimate against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub phantom_id: String,
    pub wavelength_nm: f64,
    pub region_id: String,
    pub kind: RegionKind,
    /// Estimated μa, 1/cm.
    pub estimate: f64,
    pub reference: f64,
    /// Percent.
    pub rel_err: f64,
    /// 1/cm.
    pub abs_err: f64,
}

impl MetricRow {
    pub fn new(phantom_id: &str, wavelength_nm: f64, region_id: &str, kind: RegionKind, estimate: f64, reference: f64) -> Result<Self> {
        Ok(Self {
            phantom_id: phantom_id.into(),
            wavelength_nm,
            region_id: region_id.into(),
            kind,
            estimate,
            reference,
            rel_err: rel_error(reference, estimate)?,
            abs_err: abs_error(reference, estimate),
        })
    }
}

/// gCNR of one inclusion against its phantom's background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnrRow {
    pub phantom_id: String,
    pub wavelength_nm: f64,
    pub region_id: String,
    pub gcnr: f64,
}

/// Aggregates of one region kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindAggregate {
    pub kind: RegionKind,
    pub rel_err: Summary,
    pub abs_err: Summary,
    /// Correlation of estimates with references, when defined.
    pub pearson_r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Quantile rule used for medians and IQRs.
    pub quantile_rule: String,
    pub rows: Vec<MetricRow>,
    pub aggregates: Vec<KindAggregate>,
}

/// Per-kind median ± IQR/2 of the errors; order of rows is irrelevant.
pub fn summarize(rows: &[MetricRow]) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(QpatError::Aggregation("no metric rows".into()));
    }
    let mut groups: BTreeMap<&'static str, (RegionKind, Vec<&MetricRow>)> = BTreeMap::new();
    for r in rows {
        groups.entry(r.kind.as_str()).or_insert((r.kind, Vec::new())).1.push(r);
    }
    let aggregates = groups
        .into_values()
        .map(|(kind, rs)| {
            let rel: Vec<f64> = rs.iter().map(|r| r.rel_err).collect();
            let abs: Vec<f64> = rs.iter().map(|r| r.abs_err).collect();
            let est: Vec<f64> = rs.iter().map(|r| r.estimate).collect();
            let refs: Vec<f64> = rs.iter().map(|r| r.reference).collect();
            Ok(KindAggregate {
                kind,
                rel_err: Summary::of(&rel)?,
                abs_err: Summary::of(&abs)?,
                pearson_r: pearson_r(&refs, &est).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        quantile_rule: "linear interpolation between order statistics (type 7)".into(),
        rows: rows.to_vec(),
        aggregates,
    })
}

impl MetricReport {
    pub fn aggregate(&self, kind: RegionKind) -> Option<&KindAggregate> {
        self.aggregates.iter().find(|a| a.kind == kind)
    }
}

fn csv_err(e: csv::Error) -> QpatError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => QpatError::Io(io),
        other => QpatError::Parse(format!("{other:?}")),
    }
}

/// Writes serializable rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_and_absolute_error() {
        assert_eq!(rel_error(2.0, 1.0).unwrap(), 50.0);
        assert_eq!(rel_error(0.7, 0.7).unwrap(), 0.0);
        assert!((rel_error(0.098, 0.12).unwrap() - 22.45).abs() < 0.005);
        assert!(matches!(rel_error(0.0, 1.0), Err(QpatError::Domain(_))));
        assert_eq!(abs_error(1.0, 3.0), abs_error(3.0, 1.0));
    }

    #[test]
    fn gcnr_extremes() {
        assert_eq!(gcnr(&[0.0, 1.0], &[2.0, 3.0], 256).unwrap(), 1.0);
        assert_eq!(gcnr(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 256).unwrap(), 0.0);
        assert!(gcnr(&[], &[1.0], 256).is_err());
    }

    #[test]
    fn pearson_signs() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson_r(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let z: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &z).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson_r(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn mann_whitney_small_cases() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p - 0.1).abs() < 1e-12);
        assert_eq!(r.method, PValueMethod::Exact);
        let t = mann_whitney_u(&[2.0], &[2.0]).unwrap();
        assert_eq!((t.u, t.p), (0.5, 1.0));
    }

    #[test]
    fn summary_quantiles() {
        let s = Summary::of(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.median, s.half_iqr), (3.0, 1.0));
        let one = Summary::of(&[0.4]).unwrap();
        assert_eq!((one.median, one.half_iqr), (0.4, 0.0));
        assert_eq!(format!("{s:.1}"), "3.0 ± 1.0");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            MetricRow::new("p0", 800.0, "inclusion_1", RegionKind::Inclusion, 1.2, 1.0).unwrap(),
            MetricRow::new("p0", 800.0, "background", RegionKind::Background, 0.1, 0.098).unwrap(),
        ];
        let path = dir.path().join("report.csv");
        write_csv(&path, &rows).unwrap();
        assert_eq!(read_csv::<MetricRow>(&path).unwrap(), rows);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("phantom_id,wavelength_nm,region_id,kind,estimate,reference,rel_err,abs_err"));
    }
}
