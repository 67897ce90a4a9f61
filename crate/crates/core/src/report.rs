//! Result tables shared by the command-line front end.
//!
//! A [`ReportTable`] holds one row per estimate or auxiliary test, already
//! on its reporting scale. The TSV layout writes fixed precision so that
//! parsing an emitted table and writing it again reproduces the same text.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simlab::{ScenarioConfig, ScenarioSummary};

/// Scale of the estimate and interval columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Odds ratios, the exponential of the internal log odds ratios.
    #[default]
    Or,
    Log,
}

impl Scale {
    fn column(self) -> &'static str {
        match self {
            Scale::Or => "or",
            Scale::Log => "log_or",
        }
    }

    fn reporting(self, x: f64) -> f64 {
        match self {
            Scale::Or => x.exp(),
            Scale::Log => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub description: String,
    pub method: String,
    pub expected_m: Option<f64>,
    /// Absent on rows that only carry a test p-value.
    pub estimate: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub p_value: Option<f64>,
}

impl ReportRow {
    /// Row from a log-scale estimate and interval.
    pub fn estimate(
        scale: Scale,
        description: &str,
        method: &str,
        estimate: f64,
        ci: Option<(f64, f64)>,
        p_value: Option<f64>,
    ) -> Self {
        Self {
            description: description.to_string(),
            method: method.to_string(),
            expected_m: None,
            estimate: Some(scale.reporting(estimate)),
            ci_lower: ci.map(|c| scale.reporting(c.0)),
            ci_upper: ci.map(|c| scale.reporting(c.1)),
            p_value,
        }
    }

    /// Row carrying only a test result.
    pub fn test(description: &str, method: &str, p_value: f64) -> Self {
        Self {
            description: description.to_string(),
            method: method.to_string(),
            expected_m: None,
            estimate: None,
            ci_lower: None,
            ci_upper: None,
            p_value: Some(p_value),
        }
    }

    pub fn with_expected_m(mut self, m: f64) -> Self {
        self.expected_m = Some(m);
        self
    }

    fn check(&self, scale: Scale) -> std::result::Result<(), String> {
        for (name, text) in [("description", &self.description), ("method", &self.method)] {
            if text.contains(['\t', '\n', '\r']) {
                return Err(format!("{name} must not contain tabs or line breaks"));
            }
        }
        if self.method.is_empty() {
            return Err("method is empty".into());
        }
        let fields = [
            self.expected_m,
            self.estimate,
            self.ci_lower,
            self.ci_upper,
            self.p_value,
        ];
        if fields.iter().flatten().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.expected_m.is_some_and(|m| m < 0.0) {
            return Err("expected_m is negative".into());
        }
        if self.p_value.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
            return Err("p_value outside [0, 1]".into());
        }
        if scale == Scale::Or
            && [self.estimate, self.ci_lower, self.ci_upper]
                .iter()
                .flatten()
                .any(|v| *v < 0.0)
        {
            return Err("odds ratios must be nonnegative".into());
        }
        match (self.ci_lower, self.estimate, self.ci_upper) {
            (None, _, None) => Ok(()),
            (Some(lo), Some(est), Some(hi)) if lo <= est && est <= hi => Ok(()),
            (Some(_), Some(_), Some(_)) => Err("interval does not contain the estimate".into()),
            _ => Err("interval needs both bounds and an estimate".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportTable {
    pub scale: Scale,
    pub rows: Vec<ReportRow>,
}

const COLUMNS: [&str; 7] = [
    "description",
    "method",
    "expected_m",
    "",
    "ci_lower",
    "ci_upper",
    "p_value",
];

impl ReportTable {
    pub fn new(scale: Scale) -> Self {
        Self {
            scale,
            rows: Vec::new(),
        }
    }

    /// Appends a row after checking the table invariants.
    pub fn push(&mut self, row: ReportRow) -> Result<()> {
        row.check(self.scale)
            .map_err(|m| Error::Domain(format!("row for {}: {m}", row.method)))?;
        self.rows.push(row);
        Ok(())
    }

    pub fn find<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = header(self.scale).join("\t");
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.description.clone(),
                r.method.clone(),
                fmt_opt(r.expected_m, |m| format!("{m:.2}")),
                fmt_opt(r.estimate, fmt_value),
                fmt_opt(r.ci_lower, fmt_value),
                fmt_opt(r.ci_upper, fmt_value),
                fmt_opt(r.p_value, fmt_p),
            ];
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn header(scale: Scale) -> [&'static str; 7] {
    let mut h = COLUMNS;
    h[3] = scale.column();
    h
}

fn fmt_opt(v: Option<f64>, f: impl Fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn fmt_value(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_p(p: f64) -> String {
    // Values that would round up to 1e-4 stay fixed so that rewriting a
    // parsed table picks the same form.
    if p == 0.0 || p >= 9.9995e-5 {
        format!("{p:.4}")
    } else {
        format!("{p:.3e}")
    }
}

/// Parses a table written by [`ReportTable::to_tsv`].
pub fn parse_report_tsv(text: &str) -> Result<ReportTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let (_, head) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty report".into()))?;
    let scale = [Scale::Or, Scale::Log]
        .into_iter()
        .find(|s| head.split('\t').eq(header(*s)))
        .ok_or_else(|| parse_err(1, format!("unexpected header {head:?}")))?;

    let mut table = ReportTable::new(scale);
    for (line, text) in lines {
        if text.is_empty() {
            continue;
        }
        let cells: Vec<&str> = text.split('\t').collect();
        if cells.len() != COLUMNS.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", COLUMNS.len(), cells.len()),
            ));
        }
        let num = |i: usize| -> Result<Option<f64>> {
            if cells[i].is_empty() {
                return Ok(None);
            }
            let v: f64 = cells[i].parse().map_err(|_| {
                parse_err(
                    line,
                    format!("{}: not a number: {:?}", header(scale)[i], cells[i]),
                )
            })?;
            Ok(Some(v))
        };
        let row = ReportRow {
            description: cells[0].to_string(),
            method: cells[1].to_string(),
            expected_m: num(2)?,
            estimate: num(3)?,
            ci_lower: num(4)?,
            ci_upper: num(5)?,
            p_value: num(6)?,
        };
        row.check(scale).map_err(|m| parse_err(line, m))?;
        table.rows.push(row);
    }
    Ok(table)
}

/// Parses a table written by [`ReportTable::to_json`], enforcing the same
/// row invariants as the TSV reader.
pub fn parse_report_json(text: &str) -> Result<ReportTable> {
    let raw: ReportTable = serde_json::from_str(text)?;
    let mut table = ReportTable::new(raw.scale);
    for (i, row) in raw.rows.into_iter().enumerate() {
        row.check(table.scale).map_err(|m| Error::Parse {
            line: i + 1,
            message: format!("row {}: {m}", i + 1),
        })?;
        table.rows.push(row);
    }
    Ok(table)
}

/// One line per method: AVE, SD, CP, LOCI and NOC, on the log scale.
pub fn summary_tsv(summary: &ScenarioSummary) -> String {
    let mut out = String::from("method\tave\tsd\tcp\tloci\tnoc\n");
    for m in &summary.methods {
        let _ = writeln!(
            out,
            "{}\t{:.4}\t{:.4}\t{:.3}\t{:.4}\t{}",
            m.method, m.ave, m.sd, m.cp, m.loci, m.noc
        );
    }
    out
}

/// The scenario and its summary as one JSON document.
pub fn summary_json(config: &ScenarioConfig, summary: &ScenarioSummary) -> Result<String> {
    #[derive(Serialize)]
    struct Document<'a> {
        config: &'a ScenarioConfig,
        summary: &'a ScenarioSummary,
    }
    Ok(serde_json::to_string_pretty(&Document { config, summary })? + "\n")
}
