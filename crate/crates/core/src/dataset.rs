//! Study records, 2×2 effect sizes and CSV ingestion.
//!
//! The CSV schema is a single flat table:
//!
//! ```text
//! study,events_trt,total_trt,events_ctl,total_ctl,n,yi,sei,published
//! ```
//!
//! Published rows supply either arm counts or `(yi, sei)` on the log odds
//! ratio scale; registry-only rows (`published = 0`) supply just `n`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "study",
    "events_trt",
    "total_trt",
    "events_ctl",
    "total_ctl",
    "n",
    "yi",
    "sei",
    "published",
];

/// One study. Published studies carry an effect estimate, unpublished ones
/// only the planned sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub id: String,
    pub published: bool,
    pub events_trt: Option<u64>,
    pub total_trt: Option<u64>,
    pub events_ctl: Option<u64>,
    pub total_ctl: Option<u64>,
    pub n: Option<u64>,
    pub yi: Option<f64>,
    pub sei: Option<f64>,
}

impl StudyRecord {
    /// Published study given directly on the log-OR scale.
    pub fn with_effect(id: impl Into<String>, yi: f64, sei: f64, n: Option<u64>) -> Self {
        Self {
            id: id.into(),
            published: true,
            events_trt: None,
            total_trt: None,
            events_ctl: None,
            total_ctl: None,
            n,
            yi: Some(yi),
            sei: Some(sei),
        }
    }

    /// Published study from arm counts; the effect is computed immediately.
    pub fn from_counts(
        id: impl Into<String>,
        events_trt: u64,
        total_trt: u64,
        events_ctl: u64,
        total_ctl: u64,
    ) -> Result<Self> {
        let (yi, sei) = two_by_two_effect(events_trt, total_trt, events_ctl, total_ctl)?;
        Ok(Self {
            id: id.into(),
            published: true,
            events_trt: Some(events_trt),
            total_trt: Some(total_trt),
            events_ctl: Some(events_ctl),
            total_ctl: Some(total_ctl),
            n: Some(total_trt + total_ctl),
            yi: Some(yi),
            sei: Some(sei),
        })
    }

    /// Registry-identified study that never reported results.
    pub fn unpublished(id: impl Into<String>, n: u64) -> Self {
        Self {
            id: id.into(),
            published: false,
            events_trt: None,
            total_trt: None,
            events_ctl: None,
            total_ctl: None,
            n: Some(n),
            yi: None,
            sei: None,
        }
    }

    fn counts(&self) -> Option<(u64, u64, u64, u64)> {
        Some((
            self.events_trt?,
            self.total_trt?,
            self.events_ctl?,
            self.total_ctl?,
        ))
    }

    fn any_count(&self) -> bool {
        self.events_trt.is_some()
            || self.total_trt.is_some()
            || self.events_ctl.is_some()
            || self.total_ctl.is_some()
    }
}

/// Log odds ratio and its standard error from a 2×2 table.
///
/// When any of the four cells is zero, 0.5 is added to all four.
pub fn two_by_two_effect(
    events_trt: u64,
    total_trt: u64,
    events_ctl: u64,
    total_ctl: u64,
) -> Result<(f64, f64)> {
    if total_trt == 0 || total_ctl == 0 {
        return Err(Error::Domain("arm totals must be at least 1".into()));
    }
    if events_trt > total_trt || events_ctl > total_ctl {
        return Err(Error::Domain(format!(
            "events exceed totals ({events_trt}/{total_trt}, {events_ctl}/{total_ctl})"
        )));
    }
    let cells = [
        events_trt,
        total_trt - events_trt,
        events_ctl,
        total_ctl - events_ctl,
    ];
    let shift = if cells.contains(&0) { 0.5 } else { 0.0 };
    let [a, b, c, d] = cells.map(|v| v as f64 + shift);
    Ok((
        (a * d / (b * c)).ln(),
        (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt(),
    ))
}

/// Which source wins when a row carries both counts and explicit `(yi, sei)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EffectPolicy {
    /// Recompute from counts whenever all four counts are present.
    #[default]
    PreferCounts,
    /// Keep explicit values; counts are used only to fill gaps.
    PreferExplicit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    MissingEffect,
    NonFiniteEffect,
    NonPositiveSe,
    MissingSampleSize,
    ZeroSampleSize,
    EventsExceedTotal,
    ZeroArmTotal,
    UnpublishedCarriesEffect,
    UnpublishedCarriesCounts,
    TooFewPublished,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::MissingEffect => "published study needs yi and sei (or complete arm counts)",
            Rule::NonFiniteEffect => "yi must be finite",
            Rule::NonPositiveSe => "sei must be positive and finite",
            Rule::MissingSampleSize => "unpublished study needs n",
            Rule::ZeroSampleSize => "n must be positive",
            Rule::EventsExceedTotal => "events must not exceed arm total",
            Rule::ZeroArmTotal => "arm totals must be at least 1",
            Rule::UnpublishedCarriesEffect => "unpublished study must not carry yi or sei",
            Rule::UnpublishedCarriesCounts => "unpublished study must not carry arm counts",
            Rule::TooFewPublished => "at least 2 published studies are required",
        })
    }
}

/// A broken invariant; `row` is the 1-based data row, absent for
/// dataset-level rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub row: Option<usize>,
    pub study: Option<String>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.row, &self.study) {
            (Some(r), Some(s)) => write!(f, "row {r} ({s}): {}", self.rule),
            (Some(r), None) => write!(f, "row {r}: {}", self.rule),
            _ => write!(f, "dataset: {}", self.rule),
        }
    }
}

/// Checks every record invariant; an empty list means the studies form a
/// valid [`MetaDataset`].
pub fn validate(studies: &[StudyRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, s) in studies.iter().enumerate() {
        let mut flag = |rule| {
            out.push(Violation {
                row: Some(i + 1),
                study: Some(s.id.clone()),
                rule,
            })
        };
        if s.n == Some(0) {
            flag(Rule::ZeroSampleSize);
        }
        if let (Some(e), Some(t)) = (s.events_trt, s.total_trt) {
            if e > t {
                flag(Rule::EventsExceedTotal);
            }
        }
        if let (Some(e), Some(t)) = (s.events_ctl, s.total_ctl) {
            if e > t {
                flag(Rule::EventsExceedTotal);
            }
        }
        if s.total_trt == Some(0) || s.total_ctl == Some(0) {
            flag(Rule::ZeroArmTotal);
        }
        if s.published {
            match (s.yi, s.sei) {
                (Some(y), Some(se)) => {
                    if !y.is_finite() {
                        flag(Rule::NonFiniteEffect);
                    }
                    if !(se > 0.0 && se.is_finite()) {
                        flag(Rule::NonPositiveSe);
                    }
                }
                _ => flag(Rule::MissingEffect),
            }
        } else {
            if s.n.is_none() {
                flag(Rule::MissingSampleSize);
            }
            if s.yi.is_some() || s.sei.is_some() {
                flag(Rule::UnpublishedCarriesEffect);
            }
            if s.any_count() {
                flag(Rule::UnpublishedCarriesCounts);
            }
        }
    }
    if studies.iter().filter(|s| s.published).count() < 2 {
        out.push(Violation {
            row: None,
            study: None,
            rule: Rule::TooFewPublished,
        });
    }
    out
}

/// A validated collection of N ≥ 2 published and M ≥ 0 unpublished studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaDataset {
    studies: Vec<StudyRecord>,
    n_published: usize,
    n_unpublished: usize,
}

impl MetaDataset {
    pub fn new(studies: Vec<StudyRecord>) -> Result<Self> {
        let violations = validate(&studies);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        let n_published = studies.iter().filter(|s| s.published).count();
        Ok(Self {
            n_unpublished: studies.len() - n_published,
            n_published,
            studies,
        })
    }

    /// Published studies only, from parallel effect / SE / size vectors.
    pub fn from_effects(yi: &[f64], sei: &[f64], n: Option<&[u64]>) -> Result<Self> {
        if yi.len() != sei.len() || n.is_some_and(|n| n.len() != yi.len()) {
            return Err(Error::Domain("effect vectors differ in length".into()));
        }
        let studies = yi
            .iter()
            .zip(sei)
            .enumerate()
            .map(|(i, (&y, &s))| {
                StudyRecord::with_effect(format!("S{}", i + 1), y, s, n.map(|n| n[i]))
            })
            .collect();
        Self::new(studies)
    }

    pub fn studies(&self) -> &[StudyRecord] {
        &self.studies
    }

    pub fn n_published(&self) -> usize {
        self.n_published
    }

    pub fn n_unpublished(&self) -> usize {
        self.n_unpublished
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(&self.studies)
    }

    pub fn published(&self) -> impl Iterator<Item = &StudyRecord> {
        self.studies.iter().filter(|s| s.published)
    }

    pub fn unpublished(&self) -> impl Iterator<Item = &StudyRecord> {
        self.studies.iter().filter(|s| !s.published)
    }

    /// Effect estimates `y_i` of the published studies, in file order.
    pub fn yi(&self) -> Vec<f64> {
        self.published().map(|s| s.yi.expect("validated")).collect()
    }

    /// Standard errors `s_i` of the published studies, in file order.
    pub fn sei(&self) -> Vec<f64> {
        self.published()
            .map(|s| s.sei.expect("validated"))
            .collect()
    }

    /// Sample sizes of the published studies; errors if any is missing.
    pub fn published_sizes(&self) -> Result<Vec<f64>> {
        self.published()
            .map(|s| {
                s.n.map(|n| n as f64)
                    .ok_or_else(|| Error::Domain(format!("study {} has no sample size", s.id)))
            })
            .collect()
    }

    /// Planned sample sizes of the unpublished studies.
    pub fn unpublished_sizes(&self) -> Vec<f64> {
        self.unpublished()
            .map(|s| s.n.expect("validated") as f64)
            .collect()
    }

    /// The same dataset with the unpublished studies dropped.
    pub fn published_only(&self) -> Self {
        let studies: Vec<_> = self.published().cloned().collect();
        Self {
            n_published: studies.len(),
            n_unpublished: 0,
            studies,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        let int = |v: Option<u64>| v.map(|v| v.to_string()).unwrap_or_default();
        let real = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.studies {
            w.write_record([
                s.id.clone(),
                int(s.events_trt),
                int(s.total_trt),
                int(s.events_ctl),
                int(s.total_ctl),
                int(s.n),
                real(s.yi),
                real(s.sei),
                if s.published { "1" } else { "0" }.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Reads a dataset from a CSV file with the default [`EffectPolicy`].
pub fn parse_csv_path(path: impl AsRef<Path>) -> Result<MetaDataset> {
    let file = std::fs::File::open(path)?;
    parse_csv(file, EffectPolicy::default())
}

/// Reads a dataset from any CSV stream.
pub fn parse_csv<R: Read>(reader: R, policy: EffectPolicy) -> Result<MetaDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut col = [0usize; 9];
    for (slot, name) in col.iter_mut().zip(CSV_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing required column `{name}`"),
            })?;
    }
    let mut studies = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |k: usize| rec.get(col[k]).unwrap_or("");
        let count = |k: usize| -> Result<Option<u64>> {
            let v = field(k);
            if v.is_empty() {
                return Ok(None);
            }
            v.parse::<u64>().map(Some).or_else(|_| {
                // "6.00"-style integers are accepted
                match v.parse::<f64>() {
                    Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 9.0e15 => Ok(Some(x as u64)),
                    _ => Err(Error::Parse {
                        line,
                        message: format!(
                            "column `{}`: expected a nonnegative integer, got `{v}`",
                            CSV_HEADER[k]
                        ),
                    }),
                }
            })
        };
        let real = |k: usize| -> Result<Option<f64>> {
            let v = field(k);
            if v.is_empty() {
                return Ok(None);
            }
            match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(Error::Parse {
                    line,
                    message: format!(
                        "column `{}`: expected a finite number, got `{v}`",
                        CSV_HEADER[k]
                    ),
                }),
            }
        };
        let published = match field(8) {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("column `published`: expected 0 or 1, got `{other}`"),
                })
            }
        };
        let mut s = StudyRecord {
            id: field(0).to_string(),
            published,
            events_trt: count(1)?,
            total_trt: count(2)?,
            events_ctl: count(3)?,
            total_ctl: count(4)?,
            n: count(5)?,
            yi: real(6)?,
            sei: real(7)?,
        };
        if let Some((et, tt, ec, tc)) = s.counts() {
            if s.n.is_none() {
                s.n = Some(tt + tc);
            }
            let explicit = s.yi.is_some() && s.sei.is_some();
            if s.published && (policy == EffectPolicy::PreferCounts || !explicit) {
                // invalid counts are left for `validate` to report
                if let Ok((y, se)) = two_by_two_effect(et, tt, ec, tc) {
                    s.yi = Some(y);
                    s.sei = Some(se);
                }
            }
        }
        studies.push(s);
    }
    if studies.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "dataset has no rows".into(),
        });
    }
    MetaDataset::new(studies)
}

const TIOTROPIUM_CSV: &str = include_str!("../data/tiotropium.csv");
const CLOPIDOGREL_CSV: &str = include_str!("../data/clopidogrel.csv");

/// Tiotropium vs placebo, exacerbation of COPD: 24 published trials and
/// 8 registry-only trials.
pub fn tiotropium() -> MetaDataset {
    parse_csv(TIOTROPIUM_CSV.as_bytes(), EffectPolicy::default()).expect("bundled dataset is valid")
}

/// High vs standard clopidogrel dose, major cardiovascular events: 12
/// published trials and 3 registry-only trials.
pub fn clopidogrel() -> MetaDataset {
    parse_csv(CLOPIDOGREL_CSV.as_bytes(), EffectPolicy::default())
        .expect("bundled dataset is valid")
}

/// Bundled dataset by name (`tiotropium` or `clopidogrel`).
pub fn bundled(name: &str, policy: EffectPolicy) -> Option<MetaDataset> {
    let text = match name {
        "tiotropium" => TIOTROPIUM_CSV,
        "clopidogrel" => CLOPIDOGREL_CSV,
        _ => return None,
    };
    parse_csv(text.as_bytes(), policy).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: (f64, f64), b: (f64, f64)) -> bool {
        (a.0 - b.0).abs() < 1e-3 && (a.1 - b.1).abs() < 1e-3
    }

    #[test]
    fn published_effects_from_counts() {
        assert!(close(
            two_by_two_effect(1, 36, 8, 38).unwrap(),
            (-2.233, 1.089)
        ));
        assert!(close(
            two_by_two_effect(2, 107, 4, 117).unwrap(),
            (-0.620, 0.877)
        ));
    }

    #[test]
    fn zero_cell_gets_half_correction() {
        assert!(close(
            two_by_two_effect(0, 30, 2, 30).unwrap(),
            (-1.677, 1.571)
        ));
    }

    #[test]
    fn bad_tables_rejected() {
        assert!(two_by_two_effect(1, 0, 1, 5).is_err());
        assert!(two_by_two_effect(6, 5, 1, 5).is_err());
    }

    #[test]
    fn bundled_sizes() {
        let t = tiotropium();
        assert_eq!((t.n_published(), t.n_unpublished()), (24, 8));
        let c = clopidogrel();
        assert_eq!((c.n_published(), c.n_unpublished()), (12, 3));
        assert!(t.validate().is_empty());
    }

    #[test]
    fn explicit_policy_keeps_printed_values() {
        let t = bundled("tiotropium", EffectPolicy::PreferExplicit).unwrap();
        assert_eq!(t.yi()[0], -0.33);
        let c = tiotropium();
        assert!((c.yi()[0] + 0.33).abs() < 0.01 && c.yi()[0] != -0.33);
    }

    #[test]
    fn violations_name_the_rule() {
        let mut rows = vec![
            StudyRecord::with_effect("a", 0.1, 0.0, Some(10)),
            StudyRecord::with_effect("b", 0.1, 0.2, Some(10)),
            StudyRecord::with_effect("c", 0.1, 0.2, Some(10)),
        ];
        let v = validate(&rows);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::NonPositiveSe);
        assert_eq!(v[0].row, Some(1));

        rows[0].sei = Some(0.3);
        let mut u = StudyRecord::unpublished("u", 40);
        u.yi = Some(0.2);
        rows.push(u);
        let v = validate(&rows);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::UnpublishedCarriesEffect);
    }

    #[test]
    fn only_unpublished_rows_fail() {
        let text =
            "study,events_trt,total_trt,events_ctl,total_ctl,n,yi,sei,published\nA,,,,,100,,,0\n";
        match parse_csv(text.as_bytes(), EffectPolicy::default()) {
            Err(Error::Validation(v)) => assert_eq!(v[0].rule, Rule::TooFewPublished),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_bad_numbers() {
        let text = "study,events_trt,total_trt,events_ctl,n,yi,sei,published\n";
        assert!(matches!(
            parse_csv(text.as_bytes(), EffectPolicy::default()),
            Err(Error::Parse { .. })
        ));
        let text =
            "study,events_trt,total_trt,events_ctl,total_ctl,n,yi,sei,published\nA,,,,,x,,,0\n";
        assert!(matches!(
            parse_csv(text.as_bytes(), EffectPolicy::default()),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "study,events_trt,total_trt,events_ctl,total_ctl,n,yi,sei,published\n";
        assert!(parse_csv(text.as_bytes(), EffectPolicy::default()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        for ds in [tiotropium(), clopidogrel()] {
            let text = ds.to_csv_string();
            let back = parse_csv(text.as_bytes(), EffectPolicy::default()).unwrap();
            assert_eq!(back, ds);
        }
    }
}
