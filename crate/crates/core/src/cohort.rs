//! Longitudinal cohort data: visits at integer times `0, 1, 2, …`, a binary
//! treatment and real covariates recorded at each visit, and an event or
//! censoring time per subject.
//!
//! Covariates are assumed constant between visits. An event at exactly a
//! visit time `k` belongs to the interval `[k-1, k)`, so a subject whose
//! follow-up ends at `t_end` has visits `0, …, ceil(t_end) - 1`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    /// Visit index; the visit takes place at time `k`.
    pub k: usize,
    pub treatment: bool,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectHistory {
    pub id: String,
    pub visits: Vec<VisitRecord>,
    /// End of observed follow-up.
    pub t_end: f64,
    /// `true` when follow-up ended with the event.
    pub status: bool,
}

impl SubjectHistory {
    pub fn treatment(&self, k: usize) -> bool {
        self.visits[k].treatment
    }

    pub fn covariates(&self, k: usize) -> &[f64] {
        &self.visits[k].covariates
    }

    pub fn n_visits(&self) -> usize {
        self.visits.len()
    }

    /// True when the subject was treated at some visit strictly before `k`.
    pub fn treated_before(&self, k: usize) -> bool {
        self.visits[..k.min(self.visits.len())]
            .iter()
            .any(|v| v.treatment)
    }

    fn check(&self, n_cov: usize, tau_max: f64) -> Result<()> {
        let fail = |message: String| Error::Cohort {
            subject: self.id.clone(),
            message,
        };
        if !self.t_end.is_finite() || self.t_end <= 0.0 {
            return Err(fail(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.t_end > tau_max {
            return Err(fail(format!(
                "t_end {} exceeds tau_max {tau_max}",
                self.t_end
            )));
        }
        if self.visits.is_empty() {
            return Err(fail("no visits".into()));
        }
        for (i, v) in self.visits.iter().enumerate() {
            if v.k != i {
                return Err(fail(format!(
                    "gap in visit indices: expected visit {i}, found {}",
                    v.k
                )));
            }
            if v.covariates.len() != n_cov {
                return Err(fail(format!(
                    "visit {} has {} covariates, expected {n_cov}",
                    v.k,
                    v.covariates.len()
                )));
            }
            if v.covariates.iter().any(|c| !c.is_finite()) {
                return Err(fail(format!("non-finite covariate at visit {}", v.k)));
            }
        }
        let last = self.visits.len() - 1;
        if self.t_end <= last as f64 {
            return Err(fail(format!(
                "visit after t_end: visit {last} is not before t_end {}",
                self.t_end
            )));
        }
        if self.t_end > (last + 1) as f64 {
            return Err(fail(format!(
                "gap in visit indices: missing visit {} before t_end {}",
                last + 1,
                self.t_end
            )));
        }
        Ok(())
    }
}

/// A validated cohort. Subjects are kept sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    subjects: Vec<SubjectHistory>,
    covariate_names: Vec<String>,
    tau_max: f64,
}

impl Cohort {
    /// Validates the subjects and applies administrative censoring at
    /// `tau_max`: follow-up beyond `tau_max` is cut, the status of cut
    /// subjects is set to censored, and visits at or after `tau_max` are
    /// dropped.
    pub fn new(
        mut subjects: Vec<SubjectHistory>,
        covariate_names: Vec<String>,
        tau_max: f64,
    ) -> Result<Self> {
        if !(tau_max > 0.0) || !tau_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tau_max must be positive, got {tau_max}"
            )));
        }
        let mut seen = HashSet::with_capacity(subjects.len());
        for s in &mut subjects {
            if !seen.insert(s.id.clone()) {
                return Err(Error::Cohort {
                    subject: s.id.clone(),
                    message: "duplicate subject id".into(),
                });
            }
            if s.t_end > tau_max {
                s.t_end = tau_max;
                s.status = false;
                let keep = tau_max.ceil() as usize;
                s.visits.truncate(keep);
            }
            s.check(covariate_names.len(), tau_max)?;
        }
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self {
            subjects,
            covariate_names,
            tau_max,
        })
    }

    pub fn subjects(&self) -> &[SubjectHistory] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// Number of visit slots, `ceil(tau_max)`.
    pub fn n_visit_slots(&self) -> usize {
        self.tau_max.ceil() as usize
    }

    /// True when some subject is censored before `tau_max` (loss to follow-up).
    pub fn has_dropout(&self) -> bool {
        self.subjects
            .iter()
            .any(|s| !s.status && s.t_end < self.tau_max)
    }

    /// Writes the cohort as `visits.csv` and `subjects.csv` style files,
    /// creating parent directories.
    pub fn write_csv(&self, visits: &Path, subjects: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(create_file(visits)?);
        let mut header = vec!["id".to_string(), "k".to_string(), "A".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for s in &self.subjects {
            for v in &s.visits {
                let mut rec = vec![
                    s.id.clone(),
                    v.k.to_string(),
                    u8::from(v.treatment).to_string(),
                ];
                rec.extend(v.covariates.iter().map(|c| c.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(create_file(subjects)?);
        w.write_record(["id", "t_end", "status"])?;
        for s in &self.subjects {
            w.write_record([
                s.id.clone(),
                s.t_end.to_string(),
                u8::from(s.status).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn data_err(file: &Path, line: usize, subject: &str, message: impl Into<String>) -> Error {
    Error::Data {
        file: file.display().to_string(),
        line,
        subject: subject.to_string(),
        message: message.into(),
    }
}

fn parse_f64(file: &Path, line: usize, subject: &str, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| {
        data_err(
            file,
            line,
            subject,
            format!("malformed {field} value {raw:?}"),
        )
    })?;
    if !v.is_finite() {
        return Err(data_err(
            file,
            line,
            subject,
            format!("non-finite {field} value {raw:?}"),
        ));
    }
    Ok(v)
}

fn parse_binary(file: &Path, line: usize, subject: &str, field: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(data_err(
            file,
            line,
            subject,
            format!("non-binary {field} value {other:?}"),
        )),
    }
}

/// Loads and validates a cohort from a visits file (`id,k,A,<covariates…>`)
/// and a subjects file (`id,t_end,status`).
pub fn load_cohort(visits_path: &Path, subjects_path: &Path, tau_max: f64) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(visits_path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "k" || &header[2] != "A" {
        return Err(data_err(
            visits_path,
            1,
            "-",
            "header must start with id,k,A",
        ));
    }
    let covariate_names: Vec<String> = header.iter().skip(3).map(str::to_string).collect();

    // visits keyed by subject, then by k, with the source line kept for errors
    let mut visits: HashMap<String, BTreeMap<usize, (usize, VisitRecord)>> = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        if rec.len() != header.len() {
            return Err(data_err(
                visits_path,
                line,
                &id,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        if id.is_empty() {
            return Err(data_err(visits_path, line, "-", "empty subject id"));
        }
        let k: usize = rec[1].parse().map_err(|_| {
            data_err(
                visits_path,
                line,
                &id,
                format!("malformed visit index {:?}", &rec[1]),
            )
        })?;
        let treatment = parse_binary(visits_path, line, &id, "treatment", &rec[2])?;
        let covariates = (3..rec.len())
            .map(|j| parse_f64(visits_path, line, &id, &header[j], &rec[j]))
            .collect::<Result<Vec<_>>>()?;
        let entry = visits.entry(id.clone()).or_default();
        if entry.contains_key(&k) {
            return Err(data_err(
                visits_path,
                line,
                &id,
                format!("duplicate visit {k}"),
            ));
        }
        entry.insert(
            k,
            (
                line,
                VisitRecord {
                    k,
                    treatment,
                    covariates,
                },
            ),
        );
    }

    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(subjects_path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "t_end", "status"] {
        return Err(data_err(
            subjects_path,
            1,
            "-",
            "header must be id,t_end,status",
        ));
    }
    let mut subjects = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        if rec.len() != 3 {
            return Err(data_err(subjects_path, line, &id, "expected 3 fields"));
        }
        if !seen.insert(id.clone()) {
            return Err(data_err(subjects_path, line, &id, "duplicate subject"));
        }
        let t_end = parse_f64(subjects_path, line, &id, "t_end", &rec[1])?;
        if t_end <= 0.0 {
            return Err(data_err(subjects_path, line, &id, "t_end must be positive"));
        }
        let status = parse_binary(subjects_path, line, &id, "status", &rec[2])?;
        let Some(by_k) = visits.remove(&id) else {
            return Err(data_err(subjects_path, line, &id, "subject has no visits"));
        };
        let mut expected = 0;
        let mut recs = Vec::with_capacity(by_k.len());
        for (k, (vline, v)) in by_k {
            if k != expected {
                return Err(data_err(
                    visits_path,
                    vline,
                    &id,
                    format!("gap in visit indices: expected visit {expected}, found {k}"),
                ));
            }
            if (k as f64) >= t_end {
                return Err(data_err(
                    visits_path,
                    vline,
                    &id,
                    format!("visit after t_end: visit {k} with t_end {t_end}"),
                ));
            }
            expected += 1;
            recs.push(v);
        }
        subjects.push(SubjectHistory {
            id,
            visits: recs,
            t_end,
            status,
        });
    }
    if let Some(id) = visits.keys().min() {
        let line = visits[id].values().map(|(l, _)| *l).min().unwrap_or(0);
        return Err(data_err(
            visits_path,
            line,
            id,
            "subject missing from subjects file",
        ));
    }
    Cohort::new(subjects, covariate_names, tau_max)
}

/// One counting-process record: covariates constant on `(t_in, t_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRow {
    /// Index of the subject in its cohort; also the cluster id for robust variances.
    pub subject: usize,
    pub t_in: f64,
    pub t_out: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    pub weight: f64,
    /// Baseline-hazard stratum (Cox only); 0 unless stratification is requested.
    pub stratum: usize,
}

/// Splits each subject's follow-up at the visits: one row per visit `k`
/// covering `[k, min(k + 1, t_end))`, with covariates from `builder(subject, k)`.
/// The last row of a subject carries the event flag when `status` is set.
pub fn to_interval_rows<F>(cohort: &Cohort, builder: F) -> Vec<IntervalRow>
where
    F: Fn(&SubjectHistory, usize) -> Vec<f64>,
{
    let mut rows = Vec::new();
    for (i, s) in cohort.subjects().iter().enumerate() {
        let last = s.n_visits() - 1;
        for k in 0..s.n_visits() {
            let t_out = if k == last { s.t_end } else { (k + 1) as f64 };
            rows.push(IntervalRow {
                subject: i,
                t_in: k as f64,
                t_out,
                event: k == last && s.status,
                covariates: builder(s, k),
                weight: 1.0,
                stratum: 0,
            });
        }
    }
    rows
}

/// Appends a line-oriented CSV representation of interval rows; handy when
/// inspecting what the fitters see.
pub fn write_interval_rows<W: Write>(rows: &[IntervalRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        let mut rec = vec![
            r.subject.to_string(),
            r.t_in.to_string(),
            r.t_out.to_string(),
            u8::from(r.event).to_string(),
            r.weight.to_string(),
        ];
        rec.extend(r.covariates.iter().map(|c| c.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Opens a file for writing, creating parent directories.
pub(crate) fn create_file(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, treat: &[u8], t_end: f64, status: bool) -> SubjectHistory {
        SubjectHistory {
            id: id.into(),
            visits: treat
                .iter()
                .enumerate()
                .map(|(k, &a)| VisitRecord {
                    k,
                    treatment: a == 1,
                    covariates: vec![k as f64 * 0.5],
                })
                .collect(),
            t_end,
            status,
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_minimal_cohort() {
        let dir = tempfile::tempdir().unwrap();
        let v = write(
            dir.path(),
            "visits.csv",
            "id,k,A,L\n1,0,0,0.1\n1,1,0,0.2\n1,2,1,0.3\n1,3,1,0.4\n1,4,1,0.5\n",
        );
        let s = write(dir.path(), "subjects.csv", "id,t_end,status\n1,5.0,0\n");
        let c = load_cohort(&v, &s, 5.0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.subjects()[0].n_visits(), 5);
        assert_eq!(c.covariate_names(), ["L"]);
    }

    #[test]
    fn rejects_visit_after_event() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "subjects.csv", "id,t_end,status\na,2.3,1\n");
        let ok = write(
            dir.path(),
            "v1.csv",
            "id,k,A,L\na,0,0,1\na,1,0,1\na,2,0,1\n",
        );
        assert!(load_cohort(&ok, &s, 5.0).is_ok());
        let bad = write(
            dir.path(),
            "v2.csv",
            "id,k,A,L\na,0,0,1\na,1,0,1\na,2,0,1\na,3,0,1\n",
        );
        let err = load_cohort(&bad, &s, 5.0).unwrap_err().to_string();
        assert!(err.contains("visit after t_end"), "{err}");
        assert!(err.contains(":5:"), "line number missing: {err}");
        assert!(err.contains("subject a"), "{err}");
    }

    #[test]
    fn administrative_censoring_at_tau_max() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("id,k,A,L\n");
        for k in 0..8 {
            body.push_str(&format!("x,{k},0,0\n"));
        }
        let v = write(dir.path(), "visits.csv", &body);
        let s = write(dir.path(), "subjects.csv", "id,t_end,status\nx,7.1,1\n");
        let c = load_cohort(&v, &s, 5.0).unwrap();
        let subj = &c.subjects()[0];
        assert_eq!(subj.t_end, 5.0);
        assert!(!subj.status);
        assert_eq!(subj.n_visits(), 5);
    }

    #[test]
    fn load_errors_are_specific() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "s.csv", "id,t_end,status\na,3,0\n");
        let cases = [
            (
                "id,k,A,L\na,0,0,1\na,0,0,1\na,1,0,1\na,2,0,1\n",
                "duplicate visit",
            ),
            ("id,k,A,L\na,0,0,1\na,2,0,1\n", "gap in visit"),
            ("id,k,A,L\na,0,2,1\na,1,0,1\na,2,0,1\n", "non-binary"),
            ("id,k,A,L\na,0,0,x\na,1,0,1\na,2,0,1\n", "malformed"),
            ("id,k,A,L\na,0,0,1\na,1,0,1\n", "gap in visit"),
        ];
        for (body, needle) in cases {
            let v = write(dir.path(), "v.csv", body);
            let err = load_cohort(&v, &s, 5.0).unwrap_err().to_string();
            assert!(err.contains(needle), "{needle}: {err}");
        }
    }

    #[test]
    fn interval_rows_split_at_visits() {
        let c = Cohort::new(
            vec![subject("s", &[0, 0, 1, 1], 3.4, true)],
            vec!["L".into()],
            5.0,
        )
        .unwrap();
        let rows = to_interval_rows(&c, |s, k| vec![f64::from(u8::from(s.treatment(k)))]);
        let spans: Vec<_> = rows.iter().map(|r| (r.t_in, r.t_out, r.event)).collect();
        assert_eq!(
            spans,
            [
                (0.0, 1.0, false),
                (1.0, 2.0, false),
                (2.0, 3.0, false),
                (3.0, 3.4, true)
            ]
        );
        assert_eq!(rows[2].covariates, [1.0]);
    }

    #[test]
    fn event_at_visit_time_closes_previous_interval() {
        let c = Cohort::new(
            vec![subject("s", &[0, 0, 0], 3.0, true)],
            vec!["L".into()],
            5.0,
        )
        .unwrap();
        let rows = to_interval_rows(&c, |_, _| vec![]);
        assert_eq!(rows.len(), 3);
        assert_eq!(
            (rows[2].t_in, rows[2].t_out, rows[2].event),
            (2.0, 3.0, true)
        );
    }

    #[test]
    fn survivors_have_no_events() {
        let subjects = (0..7)
            .map(|i| subject(&format!("{i}"), &[0; 5], 5.0, false))
            .collect();
        let c = Cohort::new(subjects, vec!["L".into()], 5.0).unwrap();
        let rows = to_interval_rows(&c, |_, _| vec![]);
        assert_eq!(rows.len(), 35);
        assert!(rows.iter().all(|r| !r.event));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = Cohort::new(
            vec![
                subject("b", &[0, 1, 1], 2.75, true),
                subject("a", &[0, 0, 0, 0, 0], 5.0, false),
                subject("c", &[1], 0.1 + 0.2, false),
            ],
            vec!["L".into()],
            5.0,
        )
        .unwrap();
        let (v, s) = (dir.path().join("v.csv"), dir.path().join("s.csv"));
        c.write_csv(&v, &s).unwrap();
        assert_eq!(load_cohort(&v, &s, 5.0).unwrap(), c);
    }
}
