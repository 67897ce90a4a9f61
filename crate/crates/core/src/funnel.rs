//! Funnel plots as standalone SVG.
//!
//! Published studies are `<circle>` elements and unpublished studies are
//! `<line>` elements; axes and the pooled-estimate marker are `<path>`
//! elements so the two counts can be read straight off the document. Element
//! ids are positional (`published-1`, `unpublished-1`, ...) and the study
//! label travels in `data-study`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::MetaDataset;
use crate::error::{Error, Result};
use crate::remeta::{fit_random_effects, ReMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunnelMode {
    /// Effect against precision `1/se`, published studies only.
    #[default]
    Standard,
    /// Effect against `√n`, with a horizontal line at `√n` for every
    /// unpublished study.
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelSpec {
    pub mode: FunnelMode,
    pub width: u32,
    pub height: u32,
}

impl Default for FunnelSpec {
    fn default() -> Self {
        Self {
            mode: FunnelMode::Standard,
            width: 640,
            height: 480,
        }
    }
}

const MARGIN: f64 = 56.0;
const TICKS: usize = 5;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    width: f64,
    height: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (self.width - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        self.height - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (self.height - 2.0 * MARGIN)
    }
}

fn padded_range(values: impl Iterator<Item = f64>, floor_at_zero: bool) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (if floor_at_zero { 0.0 } else { -1.0 }, 1.0);
    }
    let pad = if hi > lo {
        0.08 * (hi - lo)
    } else {
        0.5 * lo.abs().max(1.0)
    };
    let lo = if floor_at_zero {
        (lo - pad).max(0.0)
    } else {
        lo - pad
    };
    (lo, hi + pad)
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            // Characters XML 1.0 cannot carry at all.
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => out.push('\u{FFFD}'),
            c => out.push(c),
        }
    }
    out
}

/// Renders the dataset's funnel plot.
///
/// Modified mode needs a sample size for every study and fails naming the
/// first one without. The vertical marker sits at the REML estimate when
/// at least two studies are published.
pub fn render_funnel(dataset: &MetaDataset, spec: &FunnelSpec) -> Result<String> {
    if spec.width <= 2 * MARGIN as u32 || spec.height <= 2 * MARGIN as u32 {
        return Err(Error::Domain(format!(
            "plot must exceed {0}x{0} pixels",
            2 * MARGIN as u32
        )));
    }
    let modified = spec.mode == FunnelMode::Modified;
    if modified {
        if let Some(s) = dataset.studies().iter().find(|s| s.n.is_none()) {
            return Err(Error::Domain(format!(
                "study {} has no sample size; the modified funnel needs one",
                s.id
            )));
        }
    }
    let points: Vec<(&str, f64, f64)> = dataset
        .published()
        .filter_map(|s| {
            let (yi, sei) = (s.yi?, s.sei?);
            let y = if modified {
                (s.n.unwrap_or(0) as f64).sqrt()
            } else {
                1.0 / sei
            };
            Some((s.id.as_str(), yi, y))
        })
        .collect();
    let registry: Vec<(&str, f64)> = if modified {
        dataset
            .unpublished()
            .map(|s| (s.id.as_str(), (s.n.unwrap_or(0) as f64).sqrt()))
            .collect()
    } else {
        Vec::new()
    };
    let pooled = fit_random_effects(dataset, ReMethod::Reml)
        .ok()
        .map(|f| f.theta_hat);

    let frame = Frame {
        x: padded_range(points.iter().map(|p| p.1).chain(pooled), false),
        y: padded_range(
            points
                .iter()
                .map(|p| p.2)
                .chain(registry.iter().map(|r| r.1)),
            true,
        ),
        width: spec.width as f64,
        height: spec.height as f64,
    };
    let (left, right) = (frame.px(frame.x.0), frame.px(frame.x.1));
    let (bottom, top) = (frame.py(frame.y.0), frame.py(frame.y.1));

    let mut svg = String::new();
    let w = &mut svg;
    let _ = writeln!(
        w,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" viewBox="0 0 {0} {1}" font-family="sans-serif" font-size="12">"#,
        spec.width, spec.height
    );
    let _ = writeln!(w, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        w,
        r##"<path id="axes" d="M{left:.2} {top:.2} V{bottom:.2} H{right:.2}" fill="none" stroke="#000000"/>"##
    );

    let mut ticks = String::new();
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let (xp, yp) = (frame.px(xv), frame.py(yv));
        let _ = write!(ticks, "M{xp:.2} {bottom:.2} v5 M{left:.2} {yp:.2} h-5 ");
        let _ = writeln!(
            w,
            r#"<text x="{xp:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#,
            bottom + 18.0
        );
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.1}</text>"#,
            left - 8.0,
            yp + 4.0
        );
    }
    let _ = writeln!(
        w,
        r##"<path id="ticks" d="{}" stroke="#000000"/>"##,
        ticks.trim_end()
    );
    let y_title = if modified {
        "square root of sample size"
    } else {
        "precision (1/SE)"
    };
    let _ = writeln!(
        w,
        r#"<text id="x-title" x="{:.2}" y="{:.2}" text-anchor="middle">log odds ratio</text>"#,
        0.5 * (left + right),
        frame.height - 12.0
    );
    let _ = writeln!(
        w,
        r#"<text id="y-title" transform="translate(16 {0:.2}) rotate(-90)" text-anchor="middle">{y_title}</text>"#,
        0.5 * (top + bottom)
    );

    if let Some(theta) = pooled {
        let xp = frame.px(theta);
        let _ = writeln!(
            w,
            r##"<path id="pooled-estimate" d="M{xp:.2} {bottom:.2} V{top:.2}" stroke="#1f4e9e" stroke-dasharray="6 4"/>"##
        );
    }
    for (i, (id, y)) in registry.iter().enumerate() {
        let yp = frame.py(*y);
        let _ = writeln!(
            w,
            r##"<line id="unpublished-{}" data-study="{}" x1="{left:.2}" y1="{yp:.2}" x2="{right:.2}" y2="{yp:.2}" stroke="#b03a2e" stroke-width="1"/>"##,
            i + 1,
            escape(id)
        );
    }
    for (i, (id, x, y)) in points.iter().enumerate() {
        let _ = writeln!(
            w,
            r##"<circle id="published-{}" data-study="{}" cx="{:.2}" cy="{:.2}" r="4" fill="#222222"/>"##,
            i + 1,
            escape(id),
            frame.px(*x),
            frame.py(*y)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{tiotropium, StudyRecord};

    #[test]
    fn standard_mode_skips_registry_lines() {
        let svg = render_funnel(&tiotropium(), &FunnelSpec::default()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 24);
        assert_eq!(svg.matches("<line").count(), 0);
    }

    #[test]
    fn ids_are_escaped() {
        let ds = MetaDataset::new(vec![
            StudyRecord::with_effect("a<&\"b", 0.1, 0.2, Some(40)),
            StudyRecord::with_effect("c", -0.1, 0.3, Some(60)),
        ])
        .unwrap();
        let svg = render_funnel(
            &ds,
            &FunnelSpec {
                mode: FunnelMode::Modified,
                ..FunnelSpec::default()
            },
        )
        .unwrap();
        assert!(svg.contains(r#"data-study="a&lt;&amp;&quot;b""#));
    }
}
