//! CSV ingestion and emission. The empty field is the only missing-value
//! token; every parse failure carries `file:line:column`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use medmeta::{AggregateRecordF64, CorrelationRecordF64, Error, IpdStudyF64};
use nalgebra::Matrix3;

pub const AGGREGATE_COLUMNS: [&str; 4] = ["study_id", "theta_hat", "se_theta", "n"];
pub const AGGREGATE_PATH_COLUMNS: [&str; 4] = ["a_hat", "se_a", "b_hat", "se_b"];
pub const CORRELATION_COLUMNS: [&str; 5] = ["study_id", "r_xy", "r_xm", "r_my", "n"];
/// Upper triangle of the within-study covariance over (XY, XM, MY).
pub const SIGMA_COLUMNS: [&str; 6] = ["s11", "s12", "s13", "s22", "s23", "s33"];

#[derive(Debug, Clone, PartialEq)]
pub enum InputError {
    /// Malformed or inconsistent input, located in a file.
    Parse { path: String, line: Option<u64>, column: Option<usize>, message: String },
    /// Rejected by a domain constructor or validator.
    Domain(Error),
}

impl InputError {
    fn at(path: &Path, line: Option<u64>, column: Option<usize>, message: impl Into<String>) -> Self {
        InputError::Parse { path: path.display().to_string(), line, column, message: message.into() }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputError::Parse { path, line, column, message } => {
                write!(f, "{path}")?;
                if let Some(l) = line {
                    write!(f, ":{l}")?;
                    if let Some(c) = column {
                        write!(f, ":{c}")?;
                    }
                }
                write!(f, ": {message}")
            }
            InputError::Domain(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for InputError {}

impl From<Error> for InputError {
    fn from(e: Error) -> Self {
        InputError::Domain(e)
    }
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn load(path: &Path) -> Result<Self, InputError> {
        let bytes = fs::read(path).map_err(|e| InputError::at(path, None, None, e.to_string()))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| csv_error(path, &e))?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.iter().all(String::is_empty) {
            return Err(InputError::at(path, Some(1), None, "missing header"));
        }
        for (i, h) in headers.iter().enumerate() {
            if headers[..i].contains(h) {
                return Err(InputError::at(path, Some(1), Some(i + 1), format!("duplicate column `{h}`")));
            }
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, &e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec));
        }
        if rows.is_empty() {
            return Err(InputError::at(path, Some(1), None, "no data rows"));
        }
        Ok(Self { path: path.to_path_buf(), headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize, InputError> {
        self.column(name).ok_or_else(|| InputError::at(&self.path, Some(1), None, format!("missing column `{name}`")))
    }

    fn reject_unknown(&self, known: &[&str]) -> Result<(), InputError> {
        match self.headers.iter().position(|h| !known.contains(&h.as_str())) {
            Some(i) => Err(InputError::at(&self.path, Some(1), Some(i + 1), format!("unknown column `{}`", self.headers[i]))),
            None => Ok(()),
        }
    }

    fn err(&self, line: u64, col: usize, message: impl Into<String>) -> InputError {
        InputError::at(&self.path, Some(line), Some(col + 1), message)
    }

    fn text<'r>(&self, (_, rec): &'r (u64, csv::StringRecord), col: usize) -> &'r str {
        rec.get(col).unwrap_or("")
    }

    fn number(&self, row: &(u64, csv::StringRecord), col: usize) -> Result<Option<f64>, InputError> {
        let s = self.text(row, col);
        if s.is_empty() {
            return Ok(None);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(self.err(row.0, col, format!("`{}`: expected a finite number", self.headers[col]))),
        }
    }

    fn required_number(&self, row: &(u64, csv::StringRecord), col: usize) -> Result<f64, InputError> {
        self.number(row, col)?.ok_or_else(|| self.err(row.0, col, format!("`{}` is missing", self.headers[col])))
    }

    fn count(&self, row: &(u64, csv::StringRecord), col: usize) -> Result<u64, InputError> {
        let s = self.text(row, col);
        s.parse::<u64>().map_err(|_| self.err(row.0, col, format!("`{}`: expected a nonnegative integer, got `{s}`", self.headers[col])))
    }

    fn study_id(&self, row: &(u64, csv::StringRecord), col: usize) -> Result<String, InputError> {
        let s = self.text(row, col);
        if s.is_empty() {
            return Err(self.err(row.0, col, "`study_id` is missing"));
        }
        Ok(s.to_string())
    }

    fn located(&self, line: u64, e: Error) -> InputError {
        InputError::at(&self.path, Some(line), None, e.to_string())
    }
}

fn csv_error(path: &Path, e: &csv::Error) -> InputError {
    let line = e.position().map(|p| p.line());
    InputError::at(path, line, None, e.to_string())
}

fn unique_ids(path: &Path, ids: impl Iterator<Item = (u64, String)>) -> Result<(), InputError> {
    let mut seen = std::collections::BTreeSet::new();
    for (line, id) in ids {
        if !seen.insert(id.clone()) {
            return Err(InputError::at(path, Some(line), Some(1), format!("duplicate study id `{id}`")));
        }
    }
    Ok(())
}

/// Reads aggregate mediation records: `study_id, theta_hat, se_theta, n`
/// and optionally all of `a_hat, se_a, b_hat, se_b`.
pub fn read_aggregates(path: &Path) -> Result<Vec<AggregateRecordF64>, InputError> {
    let t = Table::load(path)?;
    let known: Vec<&str> = AGGREGATE_COLUMNS.iter().chain(&AGGREGATE_PATH_COLUMNS).copied().collect();
    t.reject_unknown(&known)?;
    let (id, theta, se, n) = (t.require("study_id")?, t.require("theta_hat")?, t.require("se_theta")?, t.require("n")?);
    let path_cols: Vec<Option<usize>> = AGGREGATE_PATH_COLUMNS.iter().map(|c| t.column(c)).collect();
    if path_cols.iter().any(Option::is_some) && path_cols.iter().any(Option::is_none) {
        return Err(InputError::at(path, Some(1), None, "path columns a_hat, se_a, b_hat, se_b must appear together"));
    }
    let mut out = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        let study = t.study_id(row, id)?;
        let rec = AggregateRecordF64::new(&study, t.required_number(row, theta)?, t.required_number(row, se)?, t.count(row, n)?)
            .map_err(|e| t.located(row.0, e))?;
        let rec = if path_cols[0].is_some() {
            let vals = path_cols.iter().map(|c| t.number(row, c.expect("checked"))).collect::<Result<Vec<_>, _>>()?;
            match vals.iter().filter(|v| v.is_some()).count() {
                0 => rec,
                4 => rec.with_paths(vals[0].unwrap(), vals[1].unwrap(), vals[2].unwrap(), vals[3].unwrap()).map_err(|e| t.located(row.0, e))?,
                _ => {
                    let col = path_cols[vals.iter().position(Option::is_none).unwrap()].unwrap();
                    return Err(t.err(row.0, col, "path columns must be all present or all empty"));
                }
            }
        } else {
            rec
        };
        out.push(rec);
    }
    unique_ids(path, t.rows.iter().zip(&out).map(|(r, rec)| (r.0, rec.study_id().to_string())))?;
    Ok(out)
}

/// Reads correlation records: `study_id, r_xy, r_xm, r_my, n` with empty
/// fields for unreported correlations, and optionally the six upper-triangle
/// entries `s11 … s33` of a known within-study covariance.
pub fn read_correlations(path: &Path) -> Result<Vec<CorrelationRecordF64>, InputError> {
    let t = Table::load(path)?;
    let known: Vec<&str> = CORRELATION_COLUMNS.iter().chain(&SIGMA_COLUMNS).copied().collect();
    t.reject_unknown(&known)?;
    let id = t.require("study_id")?;
    let r_cols = [t.require("r_xy")?, t.require("r_xm")?, t.require("r_my")?];
    let n = t.require("n")?;
    let sigma_cols: Vec<Option<usize>> = SIGMA_COLUMNS.iter().map(|c| t.column(c)).collect();
    if sigma_cols.iter().any(Option::is_some) && sigma_cols.iter().any(Option::is_none) {
        return Err(InputError::at(path, Some(1), None, "sigma columns s11 … s33 must appear together"));
    }
    let mut out = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        let study = t.study_id(row, id)?;
        let r = [t.number(row, r_cols[0])?, t.number(row, r_cols[1])?, t.number(row, r_cols[2])?];
        let rec = CorrelationRecordF64::new(&study, r, t.count(row, n)?).map_err(|e| t.located(row.0, e))?;
        let rec = if sigma_cols[0].is_some() {
            let vals = sigma_cols.iter().map(|c| t.number(row, c.expect("checked"))).collect::<Result<Vec<_>, _>>()?;
            if vals.iter().all(Option::is_none) {
                rec
            } else {
                let s: Vec<f64> = vals.iter().map(|v| v.unwrap_or(0.0)).collect();
                let m = Matrix3::new(s[0], s[1], s[2], s[1], s[3], s[4], s[2], s[4], s[5]);
                rec.with_sigma(m).map_err(|e| t.located(row.0, e))?
            }
        } else {
            rec
        };
        out.push(rec);
    }
    unique_ids(path, t.rows.iter().zip(&out).map(|(r, rec)| (r.0, rec.study_id().to_string())))?;
    Ok(out)
}

/// Study id of an IPD file: its file stem.
pub fn study_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Reads participant-level data: columns `x, m`, an optional `y`, then
/// covariates. The study id and treatment version are the file stem. A `y`
/// column that is empty on every row means the study has no outcome.
pub fn read_ipd(path: &Path) -> Result<IpdStudyF64, InputError> {
    let t = Table::load(path)?;
    let id = study_id_of(path);
    if t.headers.first().map(String::as_str) != Some("x") {
        return Err(InputError::at(path, Some(1), Some(1), "first column must be `x`"));
    }
    match t.column("m") {
        None => return Err(Error::MissingMediator(id).into()),
        Some(1) => {}
        Some(c) => return Err(InputError::at(path, Some(1), Some(c + 1), "`m` must be the second column")),
    }
    let y_col = t.column("y");
    if let Some(c) = y_col {
        if c != 2 {
            return Err(InputError::at(path, Some(1), Some(c + 1), "`y` must be the third column"));
        }
    }
    let first_cov = if y_col.is_some() { 3 } else { 2 };
    let names: Vec<String> = t.headers[first_cov..].to_vec();
    if let Some(i) = names.iter().position(String::is_empty) {
        return Err(InputError::at(path, Some(1), Some(first_cov + i + 1), "empty covariate name"));
    }

    let n = t.rows.len();
    let (mut x, mut m) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut y: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut covs = vec![Vec::with_capacity(n); names.len()];
    for row in &t.rows {
        if row.1.len() != t.headers.len() {
            return Err(InputError::at(path, Some(row.0), None, format!("expected {} fields, found {}", t.headers.len(), row.1.len())));
        }
        x.push(t.required_number(row, 0)?);
        m.push(t.required_number(row, 1)?);
        if let Some(c) = y_col {
            y.push(t.number(row, c)?);
        }
        for (j, col) in covs.iter_mut().enumerate() {
            col.push(t.required_number(row, first_cov + j)?);
        }
    }
    let y = match y_col {
        Some(c) if y.iter().any(Option::is_some) => {
            if let Some(i) = y.iter().position(Option::is_none) {
                return Err(t.err(t.rows[i].0, c, "`y` is missing on a row while present on others"));
            }
            Some(y.into_iter().map(|v| v.expect("checked")).collect())
        }
        _ => None,
    };
    Ok(IpdStudyF64::from_columns(&id, &id, names, x, m, y, covs)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes a study in the layout [`read_ipd`] accepts.
pub fn write_ipd(path: &Path, study: &IpdStudyF64) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["x".to_string(), "m".to_string()];
    if study.has_outcome() {
        header.push("y".into());
    }
    header.extend(study.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..study.len() {
        let mut rec = vec![study.x()[i].to_string(), study.m()[i].to_string()];
        if let Some(y) = study.y() {
            rec.push(y[i].to_string());
        }
        rec.extend(study.covariate_columns().iter().map(|c| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()
}

pub fn write_aggregates(path: &Path, records: &[AggregateRecordF64]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(AGGREGATE_COLUMNS.iter().chain(&AGGREGATE_PATH_COLUMNS))?;
    for r in records {
        let p = r.paths();
        w.write_record([
            r.study_id().to_string(),
            r.theta().value.to_string(),
            r.theta().se.to_string(),
            r.n().to_string(),
            fmt_opt(p.map(|p| p.0.value)),
            fmt_opt(p.map(|p| p.0.se)),
            fmt_opt(p.map(|p| p.1.value)),
            fmt_opt(p.map(|p| p.1.se)),
        ])?;
    }
    w.flush()
}

pub fn write_correlations(path: &Path, records: &[CorrelationRecordF64]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CORRELATION_COLUMNS)?;
    for r in records {
        let [a, b, c] = r.r();
        w.write_record([r.study_id().to_string(), fmt_opt(a), fmt_opt(b), fmt_opt(c), r.n().to_string()])?;
    }
    w.flush()
}

/// One row of a forest-plot table.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestRow {
    pub study_id: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub weight: f64,
}

impl ForestRow {
    /// Row with a 95% Wald interval.
    pub fn wald(study_id: impl Into<String>, estimate: f64, se: f64, weight: f64) -> Self {
        let z = 1.959963984540054;
        Self { study_id: study_id.into(), estimate, se, ci_low: estimate - z * se, ci_high: estimate + z * se, weight }
    }
}

pub const FOREST_COLUMNS: [&str; 6] = ["study_id", "estimate", "se", "ci_low", "ci_high", "weight"];

pub fn write_forest(path: &Path, rows: &[ForestRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FOREST_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.study_id.clone(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.weight.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn location(e: InputError) -> (Option<u64>, Option<usize>) {
        match e {
            InputError::Parse { line, column, .. } => (line, column),
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn aggregates_with_and_without_paths() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "a.csv", "study_id,theta_hat,se_theta,n,a_hat,se_a,b_hat,se_b\ns1,0.2,0.05,100,0.5,0.1,0.4,0.1\ns2,0.1,0.04,80,,,,\n");
        let r = read_aggregates(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r[0].paths().is_some());
        assert!(r[1].paths().is_none());
    }

    #[test]
    fn bad_number_is_located() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "a.csv", "study_id,theta_hat,se_theta,n\ns1,0.2,0.05,100\ns2,abc,0.04,80\n");
        let e = read_aggregates(&p).unwrap_err();
        assert!(e.to_string().starts_with(&format!("{}:3:2:", p.display())), "{e}");
        assert_eq!(location(e), (Some(3), Some(2)));
    }

    #[test]
    fn na_is_not_a_missing_token() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "c.csv", "study_id,r_xy,r_xm,r_my,n\ns1,NA,0.3,0.2,100\n");
        assert_eq!(location(read_correlations(&p).unwrap_err()), (Some(2), Some(2)));
        let p = file(&d, "c2.csv", "study_id,r_xy,r_xm,r_my,n\ns1,,0.3,0.2,100\n");
        assert_eq!(read_correlations(&p).unwrap()[0].r()[0], None);
    }

    #[test]
    fn partial_paths_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "a.csv", "study_id,theta_hat,se_theta,n,a_hat,se_a,b_hat,se_b\ns1,0.2,0.05,100,0.5,,0.4,0.1\n");
        assert_eq!(location(read_aggregates(&p).unwrap_err()), (Some(2), Some(6)));
    }

    #[test]
    fn unknown_and_missing_columns() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "a.csv", "study_id,theta_hat,se_theta,n,extra\ns1,0.2,0.05,100,1\n");
        assert_eq!(location(read_aggregates(&p).unwrap_err()), (Some(1), Some(5)));
        let p = file(&d, "b.csv", "study_id,theta_hat,n\ns1,0.2,100\n");
        assert!(read_aggregates(&p).unwrap_err().to_string().contains("se_theta"));
    }

    #[test]
    fn domain_error_carries_line() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "a.csv", "study_id,theta_hat,se_theta,n\ns1,0.2,-0.05,100\n");
        assert_eq!(location(read_aggregates(&p).unwrap_err()).0, Some(2));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "a.csv", "study_id,theta_hat,se_theta,n\ns1,0.2,0.05,100\ns1,0.1,0.05,100\n");
        assert_eq!(location(read_aggregates(&p).unwrap_err()), (Some(3), Some(1)));
    }

    #[test]
    fn sigma_columns() {
        let d = tempfile::tempdir().unwrap();
        let p = file(
            &d,
            "c.csv",
            "study_id,r_xy,r_xm,r_my,n,s11,s12,s13,s22,s23,s33\ns1,0.3,,0.2,100,0.01,,0.002,,,0.01\ns2,0.3,0.1,0.2,100,,,,,,\n",
        );
        let r = read_correlations(&p).unwrap();
        assert_eq!(r[0].sigma().unwrap()[(0, 2)], 0.002);
        assert!(r[1].sigma().is_none());
    }

    #[test]
    fn ipd_outcome_and_mediator_columns() {
        let d = tempfile::tempdir().unwrap();
        let p = file(&d, "k1.csv", "x,m,y,age\n0,1,2,50\n1,2,3,60\n0,1.5,2,55\n1,2.5,4,65\n");
        let s = read_ipd(&p).unwrap();
        assert_eq!(s.study_id(), "k1");
        assert_eq!(s.covariate_names(), ["age"]);
        assert!(s.has_outcome());

        let p = file(&d, "j1.csv", "x,m,y,age\n0,1,,50\n1,2,,60\n0,1.5,,55\n1,2.5,,65\n");
        assert!(!read_ipd(&p).unwrap().has_outcome());

        let p = file(&d, "j2.csv", "x,m,y,age\n0,1,,50\n1,2,3,60\n0,1.5,,55\n1,2.5,,65\n");
        assert_eq!(location(read_ipd(&p).unwrap_err()), (Some(2), Some(3)));

        let p = file(&d, "j3.csv", "x,y,age\n0,1,50\n1,2,60\n");
        assert_eq!(read_ipd(&p).unwrap_err(), InputError::Domain(Error::MissingMediator("j3".into())));

        let p = file(&d, "j4.csv", "x,m,age\n0,1,50\n1,,60\n");
        assert_eq!(location(read_ipd(&p).unwrap_err()), (Some(3), Some(2)));
    }

    #[test]
    fn ipd_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let s = IpdStudyF64::from_columns(
            "s1",
            "s1",
            vec!["a".into()],
            vec![0., 1., 0., 1.],
            vec![0.1, 0.7, 1.0 / 3.0, 2.5],
            Some(vec![1e-17, 2.0, 3.0, -4.0]),
            vec![vec![5.0, 6.0, 7.0, 8.0]],
        )
        .unwrap();
        let p = d.path().join("s1.csv");
        write_ipd(&p, &s).unwrap();
        assert_eq!(read_ipd(&p).unwrap(), s);
    }
}
