//! File formats: dataset and explanation CSVs, quality-report JSON, and the
//! plot-data CSVs written by the experiment commands.
//!
//! Floats are written in shortest round-trip form, so every file read back
//! through this module reproduces the written values exactly.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::axe::CacheStats;
use crate::data::{Dataset, Explanation, Matrix, QualityReport};
use crate::error::{Error, Result};
use crate::experiments::benchmark::ScoreRow;
use crate::experiments::fairwash::{FairwashMetric, Table2Row};
use crate::experiments::regions::RegionGrid;
use crate::experiments::synthetic::SyntheticStudy;

/// Name of the optional label column in dataset CSVs.
pub const TARGET_COLUMN: &str = "target";

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn parse_f64(s: &str, path: &Path, row: usize, col: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| {
        Error::Data(format!(
            "{}: row {row}, column '{col}': '{s}' is not a number",
            path.display()
        ))
    })
}

/// Reads a dataset CSV: a header row, numeric feature columns and an optional
/// `target` column holding 0/1 labels.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target = headers.iter().position(|h| h == TARGET_COLUMN);
    let names: Vec<String> = headers.iter().filter(|h| *h != TARGET_COLUMN).cloned().collect();
    if names.is_empty() {
        return Err(Error::Data(format!("{}: no feature columns", path.display())));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != headers.len() {
            return Err(Error::Data(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                r + 1,
                rec.len(),
                headers.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v = parse_f64(field, path, r + 1, &headers[j])?;
            if Some(j) == target {
                if v != 0.0 && v != 1.0 {
                    return Err(Error::Data(format!(
                        "{}: row {}: target must be 0 or 1, got '{field}'",
                        path.display(),
                        r + 1
                    )));
                }
                labels.push(v as u8);
            } else {
                data.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let labels = target.map(|_| labels);
    Dataset::new(Matrix::new(rows, names.len(), data)?, names, labels)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes raw features (and labels, as `target`) in the format read by
/// [`read_dataset_csv`].
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = writer(path)?;
    let mut header: Vec<&str> = ds.column_names().iter().map(String::as_str).collect();
    if ds.labels().is_some() {
        header.push(TARGET_COLUMN);
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for i in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(y) = ds.labels() {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes explanations as `row,explainer,<feature columns>`.
pub fn write_explanations_csv(path: &Path, column_names: &[String], explanations: &[Explanation]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["row".to_string(), "explainer".to_string()];
    header.extend(column_names.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for e in explanations {
        let mut rec = vec![e.datapoint_index.to_string(), e.explainer_id.clone()];
        rec.extend(e.importances.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an explanation CSV whose feature columns must match `column_names`.
pub fn read_explanations_csv(path: &Path, column_names: &[String]) -> Result<Vec<Explanation>> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.len() < 3 || headers[0] != "row" || headers[1] != "explainer" || headers[2..] != *column_names {
        return Err(Error::Data(format!(
            "{}: header must be row,explainer,{}",
            path.display(),
            column_names.join(",")
        )));
    }
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != headers.len() {
            return Err(Error::Data(format!("{}: row {} has {} fields", path.display(), r + 1, rec.len())));
        }
        let row: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{}: row {}: bad row index '{}'", path.display(), r + 1, &rec[0])))?;
        let values = (2..rec.len())
            .map(|j| parse_f64(&rec[j], path, r + 1, &headers[j]))
            .collect::<Result<Vec<_>>>()?;
        out.push(Explanation::new(values, row, rec[1].to_string())?);
    }
    Ok(out)
}

/// Top-n setting of a report: a fixed n or the mean over all n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopN {
    Fixed(usize),
    Auc,
}

impl fmt::Display for TopN {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopN::Fixed(n) => write!(f, "{n}"),
            TopN::Auc => f.write_str("auc"),
        }
    }
}

impl std::str::FromStr for TopN {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auc" {
            return Ok(TopN::Auc);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(TopN::Fixed(n)),
            _ => Err(Error::Config(format!("--n must be a positive integer or 'auc', got '{s}'"))),
        }
    }
}

impl Serialize for TopN {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TopN::Fixed(n) => s.serialize_u64(*n as u64),
            TopN::Auc => s.serialize_str("auc"),
        }
    }
}

impl<'de> Deserialize<'de> for TopN {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = TopN;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive integer or \"auc\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<TopN, E> {
                Ok(TopN::Fixed(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<TopN, E> {
                if v == "auc" {
                    Ok(TopN::Auc)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// JSON form of one metric run, with the fully resolved configuration that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub metric: String,
    pub k: Option<usize>,
    pub n: TopN,
    pub per_point: Vec<f64>,
    pub aggregate: f64,
    pub curve: Option<Vec<(usize, f64)>>,
    pub cache: Option<CacheStats>,
    pub config: serde_json::Value,
}

impl ReportDocument {
    pub fn new(report: &QualityReport, k: Option<usize>, n: TopN, cache: Option<CacheStats>, config: serde_json::Value) -> Self {
        Self {
            metric: report.metric_id.clone(),
            k,
            n,
            per_point: report.per_point_q.clone(),
            aggregate: report.aggregate_q,
            curve: report.auc_curve.clone(),
            cache,
            config,
        }
    }

    pub fn to_report(&self) -> QualityReport {
        QualityReport {
            metric_id: self.metric.clone(),
            per_point_q: self.per_point.clone(),
            aggregate_q: self.aggregate,
            auc_curve: self.curve.clone(),
        }
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Per-point values as `row,q`, rows taken from `explanations`.
pub fn write_report_csv(path: &Path, report: &QualityReport, rows: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["row", "q"]).map_err(|e| Error::csv(path, e))?;
    for (r, q) in rows.iter().zip(&report.per_point_q) {
        w.write_record([r.to_string(), q.to_string()]).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("{}: bad row on line {}", path.display(), r + 2)))?;
        out.push((row, parse_f64(rec.get(1).unwrap_or(""), path, r + 1, "q")?));
    }
    Ok(out)
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One `fig3_<metric>.csv` per panel, long format `i1,i2,value`.
pub fn write_region_csvs(dir: &Path, grid: &RegionGrid) -> Result<()> {
    let res = grid.axis.len();
    for p in &grid.panels {
        let rows = (0..res * res).map(|idx| {
            vec![
                grid.axis[idx % res].to_string(),
                grid.axis[idx / res].to_string(),
                p.values[idx].to_string(),
            ]
        });
        write_table(&dir.join(format!("fig3_{}.csv", p.metric)), &["i1", "i2", "value"], rows)?;
    }
    Ok(())
}

/// `fig5.csv` (PGI and on-manifold probability against width) and
/// `fig6.csv` (AXE against k).
pub fn write_synthetic_csvs(dir: &Path, study: &SyntheticStudy) -> Result<()> {
    write_table(
        &dir.join("fig5.csv"),
        &["width", "pgi_e_a", "pgi_e_b", "on_manifold_e_a", "on_manifold_e_b"],
        study.pgi.iter().map(|r| {
            vec![
                r.width.to_string(),
                r.pgi_e_a.to_string(),
                r.pgi_e_b.to_string(),
                r.on_manifold_e_a.to_string(),
                r.on_manifold_e_b.to_string(),
            ]
        }),
    )?;
    write_table(
        &dir.join("fig6.csv"),
        &["k", "axe_e_a", "axe_e_b"],
        study
            .axe
            .iter()
            .map(|r| vec![r.k.to_string(), r.axe_e_a.to_string(), r.axe_e_b.to_string()]),
    )
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

pub const TABLE2_HEADER: [&str; 8] = ["dataset", "model", "metric", "E_rho", "E_phi", "E_psi", "E_omega", "pass"];

pub fn write_table2_csv(path: &Path, rows: &[Table2Row]) -> Result<()> {
    write_table(
        path,
        &TABLE2_HEADER,
        rows.iter().map(|r| {
            vec![
                r.dataset.clone(),
                r.model.clone(),
                r.metric.to_string(),
                r.e_rho.to_string(),
                r.e_phi.to_string(),
                opt(r.e_psi),
                opt(r.e_omega),
                r.pass.to_string(),
            ]
        }),
    )
}

pub fn read_table2_csv(path: &Path) -> Result<Vec<Table2Row>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != TABLE2_HEADER {
        return Err(Error::Data(format!("{}: unexpected table header", path.display())));
    }
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let num = |j: usize| parse_f64(&rec[j], path, r + 1, TABLE2_HEADER[j]);
        let opt_num = |j: usize| if &rec[j] == "na" { Ok(None) } else { num(j).map(Some) };
        let e_rho = num(3)?;
        let e_phi = num(4)?;
        let e_psi = opt_num(5)?;
        let margin = e_psi.map_or(e_rho - e_phi, |p| (e_rho - e_phi).min(e_rho - p));
        out.push(Table2Row {
            dataset: rec[0].to_string(),
            model: rec[1].to_string(),
            metric: rec[2].parse::<FairwashMetric>()?,
            e_rho,
            e_phi,
            e_psi,
            e_omega: opt_num(6)?,
            pass: &rec[7] == "true",
            margin,
        });
    }
    Ok(out)
}

pub const SCORE_HEADER: [&str; 6] = ["dataset", "model", "explainer", "metric", "value", "z"];

pub fn write_scores_csv<'a>(path: &Path, rows: impl IntoIterator<Item = &'a ScoreRow>) -> Result<()> {
    write_table(
        path,
        &SCORE_HEADER,
        rows.into_iter().map(|r| {
            vec![
                r.dataset.clone(),
                r.model.to_string(),
                r.explainer.to_string(),
                r.metric.to_string(),
                r.value.to_string(),
                r.z.to_string(),
            ]
        }),
    )
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        if rec.len() != SCORE_HEADER.len() {
            return Err(Error::Data(format!("{}: row {} has {} fields", path.display(), r + 1, rec.len())));
        }
        out.push(ScoreRow {
            dataset: rec[0].to_string(),
            model: rec[1].parse()?,
            explainer: rec[2].parse()?,
            metric: rec[3].parse()?,
            value: parse_f64(&rec[4], path, r + 1, "value")?,
            z: parse_f64(&rec[5], path, r + 1, "z")?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::standins::{generate_standin, StandinKind};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let s = generate_standin(StandinKind::Communities, 40, 3).unwrap();
        write_dataset_csv(&p, &s.dataset).unwrap();
        let back = read_dataset_csv(&p).unwrap();
        assert_eq!(back.features(), s.dataset.features());
        assert_eq!(back.labels(), s.dataset.labels());
        assert_eq!(back.column_names(), s.dataset.column_names());
    }

    #[test]
    fn dataset_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.csv");
        let err = read_dataset_csv(&missing).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("missing.csv"));
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b,target\n1,2,0\n3,x,1\n").unwrap();
        assert!(read_dataset_csv(&p).unwrap_err().to_string().contains("'b'"));
        fs::write(&p, "a,target\n1,2\n").unwrap();
        assert!(matches!(read_dataset_csv(&p), Err(Error::Data(_))));
        fs::write(&p, "a,b\n1,2\n3,4\n").unwrap();
        assert!(read_dataset_csv(&p).unwrap().labels().is_none());
    }

    #[test]
    fn explanations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let names = vec!["a".to_string(), "b".to_string()];
        let e = vec![
            Explanation::new(vec![0.1, -1.0 / 3.0], 0, "lime").unwrap(),
            Explanation::new(vec![1e-300, 2.5e10], 1, "lime").unwrap(),
        ];
        write_explanations_csv(&p, &names, &e).unwrap();
        assert_eq!(read_explanations_csv(&p, &names).unwrap(), e);
        assert!(read_explanations_csv(&p, &["a".to_string(), "c".to_string()]).is_err());
    }

    #[test]
    fn report_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let mut r = QualityReport::from_per_point("axe", vec![1.0, 0.0, 1.0]);
        r.auc_curve = Some(vec![(1, 0.5), (2, 2.0 / 3.0)]);
        for n in [TopN::Auc, TopN::Fixed(2)] {
            let doc = ReportDocument::new(&r, Some(5), n, Some(CacheStats { hits: 2, misses: 1, size: 1 }), serde_json::json!({"seed": 1}));
            write_json(&p, &doc).unwrap();
            let back: ReportDocument = read_json(&p).unwrap();
            assert_eq!(back, doc);
            assert_eq!(back.to_report(), r);
        }
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"n\": 2") && text.contains("\"curve\": [\n    [\n      1,"));
    }

    #[test]
    fn top_n_parsing() {
        assert_eq!("auc".parse::<TopN>().unwrap(), TopN::Auc);
        assert_eq!("3".parse::<TopN>().unwrap(), TopN::Fixed(3));
        assert!("0".parse::<TopN>().is_err());
        assert!("x".parse::<TopN>().is_err());
    }

    #[test]
    fn table2_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![Table2Row {
            dataset: "german".into(),
            model: "m_L (1 foil)".into(),
            metric: FairwashMetric::NegPgu,
            e_rho: -0.25,
            e_phi: -0.5,
            e_psi: None,
            e_omega: Some(0.1),
            pass: true,
            margin: 0.25,
        }];
        write_table2_csv(&p, &rows).unwrap();
        assert_eq!(read_table2_csv(&p).unwrap(), rows);
        let head = fs::read_to_string(&p).unwrap();
        assert!(head.starts_with("dataset,model,metric,E_rho,E_phi,E_psi,E_omega,pass\n"));
    }
}
