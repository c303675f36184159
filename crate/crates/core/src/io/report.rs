//! Report files: `summary.json`, `frames.csv`, `curve_dcre.csv`,
//! `curve_abs.csv` and `curves.svg`.
//!
//! Floating-point values are written in shortest round-trip form, so
//! re-reading any file reproduces the numbers exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::change::{ChangeFlags, ChangeScores};
use crate::difficulty::DifficultyScores;
use crate::error::{Error, Result};
use crate::metrics::{
    median_errors, na_fraction, outlier_abs, outlier_dcre, recall_abs, recall_dcre, Aggregates, Curve, CurveMetric,
    DcreResult, DcreStatus, EvaluationReport, FrameEvaluation, ObjectCheck,
};

pub const SUMMARY_FILE: &str = "summary.json";
pub const FRAMES_FILE: &str = "frames.csv";
pub const CURVE_DCRE_FILE: &str = "curve_dcre.csv";
pub const CURVE_ABS_FILE: &str = "curve_abs.csv";
pub const CURVES_SVG_FILE: &str = "curves.svg";

/// The headline columns of the method comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(rename = "E_a(0.05m,5deg)")]
    pub recall_abs: f64,
    #[serde(rename = "median_dt")]
    pub median_dt: Option<f64>,
    #[serde(rename = "median_dtheta")]
    pub median_dtheta: Option<f64>,
    #[serde(rename = "E_f(0.05)")]
    pub recall_dcre_005: f64,
    #[serde(rename = "E_f(0.15)")]
    pub recall_dcre_015: f64,
    #[serde(rename = "N/A")]
    pub na: f64,
    #[serde(rename = "Ebar_a(0.5m,25deg)")]
    pub outlier_abs: f64,
    #[serde(rename = "Ebar_f(0.5)")]
    pub outlier_dcre: f64,
    #[serde(rename = "Obj")]
    pub obj: Option<f64>,
}

/// Column keys of [`TableRow`] as they appear in `summary.json`.
pub const TABLE_COLUMNS: [&str; 9] = [
    "E_a(0.05m,5deg)",
    "median_dt",
    "median_dtheta",
    "E_f(0.05)",
    "E_f(0.15)",
    "N/A",
    "Ebar_a(0.5m,25deg)",
    "Ebar_f(0.5)",
    "Obj",
];

impl TableRow {
    pub fn from_report(report: &EvaluationReport) -> Result<Self> {
        let f = &report.frames;
        let medians = median_errors(f);
        Ok(TableRow {
            recall_abs: recall_abs(f, 0.05, 5.0)?,
            median_dt: medians.map(|m| m.0),
            median_dtheta: medians.map(|m| m.1),
            recall_dcre_005: recall_dcre(f, 0.05)?,
            recall_dcre_015: recall_dcre(f, 0.15)?,
            na: na_fraction(f)?,
            outlier_abs: outlier_abs(f, 0.5, 25.0)?,
            outlier_dcre: outlier_dcre(f, 0.5)?,
            obj: report.aggregates.obj_fraction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub preset: String,
    pub table: TableRow,
    pub aggregates: Aggregates,
}

impl Summary {
    pub fn new(report: &EvaluationReport, preset: &str) -> Result<Self> {
        Ok(Summary {
            method: report.method.clone(),
            preset: preset.to_string(),
            table: TableRow::from_report(report)?,
            aggregates: report.aggregates.clone(),
        })
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

const FRAME_COLUMNS: [&str; 20] = [
    "sequence_id",
    "frame_id",
    "dt",
    "dtheta",
    "dcre",
    "dcre_px",
    "dcre_valid_pixels",
    "dcre_status",
    "object_check",
    "vol",
    "context_volume",
    "context_degenerate",
    "pose_novelty",
    "nearest_train",
    "rho_v",
    "zeta_v",
    "zeta_s",
    "zeta_g",
    "valid_overlap",
    "change_flags",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn frame_row(f: &FrameEvaluation) -> Vec<String> {
    let mut row = vec![f.sequence_id.clone(), f.frame_id.clone(), opt(f.dt), opt(f.dtheta)];
    if f.dcre.status == DcreStatus::NoPrediction {
        row.extend([String::new(), String::new(), String::new()]);
    } else {
        row.extend([
            f.dcre.mean_normalized.to_string(),
            f.dcre.mean_pixels_unclamped.to_string(),
            f.dcre.valid_pixel_count.to_string(),
        ]);
    }
    row.push(f.dcre.status.as_str().into());
    row.push(f.object_check.to_token());
    match &f.difficulty {
        Some(d) => row.extend([
            d.vol.to_string(),
            d.context_volume.to_string(),
            d.context_degenerate.to_string(),
            d.pose_novelty.to_string(),
            d.nearest_train.clone().unwrap_or_default(),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 5)),
    }
    match &f.change {
        Some(c) => row.extend([
            c.rho_v.to_string(),
            c.zeta_v.to_string(),
            c.zeta_s.to_string(),
            c.zeta_g.to_string(),
            c.valid_overlap.to_string(),
            c.flags.to_tokens(),
        ]),
        None => row.extend(std::iter::repeat_n(String::new(), 6)),
    }
    row
}

/// `frames.csv` contents for `frames`, in order.
pub fn encode_frames_csv(frames: &[FrameEvaluation]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FRAME_COLUMNS).expect("in-memory write");
    for f in frames {
        w.write_record(frame_row(f)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub fn write_frames_csv(path: &Path, frames: &[FrameEvaluation]) -> Result<()> {
    write_file(path, encode_frames_csv(frames))
}

pub fn read_frames_csv(path: &Path) -> Result<Vec<FrameEvaluation>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = r.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != FRAME_COLUMNS {
        return Err(Error::parse(path, 1, "unexpected frames.csv header"));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push(parse_frame_row(&rec).map_err(|m| Error::parse(path, line, m))?);
    }
    Ok(out)
}

fn parse_frame_row(rec: &csv::StringRecord) -> std::result::Result<FrameEvaluation, String> {
    let get = |i: usize| rec.get(i).unwrap_or("");
    let num = |i: usize| -> std::result::Result<Option<f64>, String> {
        let s = get(i);
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| format!("column {}: `{s}` is not a number", FRAME_COLUMNS[i]))
        }
    };
    let req = |i: usize| -> std::result::Result<f64, String> {
        num(i)?.ok_or_else(|| format!("column {} is empty", FRAME_COLUMNS[i]))
    };
    let status = DcreStatus::parse(get(7)).map_err(|e| e.to_string())?;
    let dcre = match status {
        DcreStatus::NoPrediction => DcreResult::no_prediction(),
        _ => DcreResult {
            mean_normalized: req(4)?,
            mean_pixels_unclamped: req(5)?,
            valid_pixel_count: get(6).parse().map_err(|_| format!("bad pixel count `{}`", get(6)))?,
            status,
        },
    };
    let difficulty = if get(9).is_empty() {
        None
    } else {
        Some(DifficultyScores {
            vol: req(9)?,
            context_volume: req(10)?,
            context_degenerate: get(11).parse().map_err(|_| format!("bad flag `{}`", get(11)))?,
            pose_novelty: req(12)?,
            nearest_train: (!get(13).is_empty()).then(|| get(13).to_string()),
        })
    };
    let change = if get(14).is_empty() {
        None
    } else {
        Some(ChangeScores {
            rho_v: req(14)?,
            zeta_v: req(15)?,
            zeta_s: req(16)?,
            zeta_g: req(17)?,
            valid_overlap: req(18)?,
            flags: ChangeFlags::from_tokens(get(19)).map_err(|e| e.to_string())?,
        })
    };
    Ok(FrameEvaluation {
        sequence_id: get(0).to_string(),
        frame_id: get(1).to_string(),
        dt: num(2)?,
        dtheta: num(3)?,
        dcre,
        object_check: ObjectCheck::from_token(get(8)).map_err(|e| e.to_string())?,
        difficulty,
        change,
    })
}

/// Curves of several methods, as `method,metric,threshold,fraction` rows.
pub fn encode_curves_csv(series: &[(&str, &Curve)]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "metric", "threshold", "fraction"])
        .expect("in-memory write");
    for (method, c) in series {
        for (t, f) in c.thresholds.iter().zip(&c.fractions) {
            w.write_record([method, c.metric.as_str(), &t.to_string(), &f.to_string()])
                .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory write")
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<(String, Curve)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out: Vec<(String, Curve)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let bad = |m: String| Error::parse(path, line, m);
        let metric = match rec.get(1).unwrap_or("") {
            "dcre" => CurveMetric::Dcre,
            "translation" => CurveMetric::Translation,
            "rotation" => CurveMetric::Rotation,
            other => return Err(bad(format!("unknown metric `{other}`"))),
        };
        let t: f64 = rec
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad("bad threshold".into()))?;
        let f: f64 = rec
            .get(3)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad("bad fraction".into()))?;
        let method = rec.get(0).unwrap_or("").to_string();
        match out.last_mut() {
            Some((m, c)) if *m == method && c.metric == metric => {
                c.thresholds.push(t);
                c.fractions.push(f);
            }
            _ => out.push((
                method,
                Curve {
                    metric,
                    thresholds: vec![t],
                    fractions: vec![f],
                },
            )),
        }
    }
    Ok(out)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One panel per metric, one polyline per method (legend in input order).
///
/// Polyline points are the raw `(threshold, fraction)` samples; a group
/// transform maps them to the plot area, so the SVG carries exactly the
/// numbers written to the curve CSVs.
pub fn encode_curves_svg(series: &[(&str, Vec<&Curve>)]) -> String {
    let metrics: Vec<CurveMetric> = [CurveMetric::Dcre, CurveMetric::Translation, CurveMetric::Rotation]
        .into_iter()
        .filter(|m| series.iter().any(|(_, cs)| cs.iter().any(|c| c.metric == *m)))
        .collect();
    let (pw, ph, margin) = (320.0, 220.0, 50.0);
    let width = metrics.len().max(1) as f64 * (pw + 2.0 * margin);
    let legend_h = 18.0 * series.len() as f64 + 10.0;
    let height = ph + 2.0 * margin + legend_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (pi, metric) in metrics.iter().enumerate() {
        let x0 = pi as f64 * (pw + 2.0 * margin) + margin;
        let y0 = margin;
        let curves: Vec<(usize, &str, &Curve)> = series
            .iter()
            .enumerate()
            .flat_map(|(i, (m, cs))| cs.iter().filter(|c| c.metric == *metric).map(move |c| (i, *m, *c)))
            .collect();
        let lo = curves
            .iter()
            .filter_map(|c| c.2.thresholds.first())
            .fold(f64::INFINITY, |a, b| a.min(*b));
        let hi = curves
            .iter()
            .filter_map(|c| c.2.thresholds.last())
            .fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (label, unit) = match metric {
            CurveMetric::Dcre => ("DCRE", ""),
            CurveMetric::Translation => ("translation error", " [m]"),
            CurveMetric::Rotation => ("rotation error", " [deg]"),
        };
        let _ = writeln!(s, r#"<g class="panel" data-metric="{}">"#, metric.as_str());
        let _ = writeln!(
            s,
            r##"<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        for k in 0..=4 {
            let fy = k as f64 / 4.0;
            let y = y0 + ph * (1.0 - fy);
            let x = x0 + pw * fy;
            let tx = lo + span * fy;
            let _ = writeln!(
                s,
                r##"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{fy}</text>"##,
                x0 + pw,
                x0 - 4.0,
                y + 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
                y0 + ph + 14.0,
                (tx * 1000.0).round() / 1000.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}{unit}</text>"#,
            x0 + pw / 2.0,
            y0 + ph + 32.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-weight="bold">cumulative {label}</text>"#,
            x0 + pw / 2.0,
            y0 - 10.0
        );
        let a = pw / span;
        let e = x0 - a * lo;
        let _ = writeln!(s, r#"<g transform="matrix({a} 0 0 {} {e} {})">"#, -ph, y0 + ph);
        for (i, method, c) in &curves {
            let pts: Vec<String> = c
                .thresholds
                .iter()
                .zip(&c.fractions)
                .map(|(t, f)| format!("{t},{f}"))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline data-method="{}" fill="none" stroke="{}" stroke-width="1.5" vector-effect="non-scaling-stroke" points="{}"/>"#,
                xml_escape(method),
                PALETTE[i % PALETTE.len()],
                pts.join(" ")
            );
        }
        let _ = writeln!(s, "</g>\n</g>");
    }
    for (i, (method, _)) in series.iter().enumerate() {
        let y = ph + 2.0 * margin + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{margin}" y1="{y}" x2="{}" y2="{y}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text></g>"#,
            margin + 24.0,
            PALETTE[i % PALETTE.len()],
            margin + 30.0,
            y + 4.0,
            xml_escape(method)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Writes all report files for one method into `dir`.
/// `all_frames` goes to `frames.csv` unfiltered, so any preset can be
/// re-aggregated later; `report` holds the preset's aggregates.
pub fn write_report(
    dir: &Path,
    report: &EvaluationReport,
    all_frames: &[FrameEvaluation],
    preset: &str,
    svg: bool,
) -> Result<Summary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = Summary::new(report, preset)?;
    write_summary(&dir.join(SUMMARY_FILE), &summary)?;
    write_frames_csv(&dir.join(FRAMES_FILE), all_frames)?;
    let m = report.method.as_str();
    let pick = |metrics: &[CurveMetric]| -> Vec<(&str, &Curve)> {
        report
            .curves
            .iter()
            .filter(|c| metrics.contains(&c.metric))
            .map(|c| (m, c))
            .collect()
    };
    write_file(
        &dir.join(CURVE_DCRE_FILE),
        encode_curves_csv(&pick(&[CurveMetric::Dcre])),
    )?;
    write_file(
        &dir.join(CURVE_ABS_FILE),
        encode_curves_csv(&pick(&[CurveMetric::Translation, CurveMetric::Rotation])),
    )?;
    if svg {
        let curves: Vec<&Curve> = report.curves.iter().collect();
        write_file(&dir.join(CURVES_SVG_FILE), encode_curves_svg(&[(m, curves)]))?;
    }
    Ok(summary)
}

/// Fails when the methods were evaluated on different frames, listing
/// the first differences.
pub fn check_same_frames(methods: &[(&str, &[FrameEvaluation])]) -> Result<()> {
    let Some((first_name, first)) = methods.first() else {
        return Ok(());
    };
    let keys = |f: &[FrameEvaluation]| -> BTreeSet<(String, String)> {
        f.iter().map(|e| (e.sequence_id.clone(), e.frame_id.clone())).collect()
    };
    let base = keys(first);
    for (name, frames) in &methods[1..] {
        let other = keys(frames);
        if other != base {
            let fmt = |v: Vec<&(String, String)>| {
                let n = v.len();
                let mut s: Vec<String> = v.into_iter().take(5).map(|(a, b)| format!("{a}/{b}")).collect();
                if n > 5 {
                    s.push(format!("… ({n} total)"));
                }
                s.join(", ")
            };
            let only_first = fmt(base.difference(&other).collect());
            let only_other = fmt(other.difference(&base).collect());
            return Err(Error::FrameSetMismatch(format!(
                "only in {first_name}: [{only_first}]; only in {name}: [{only_other}]"
            )));
        }
    }
    Ok(())
}
