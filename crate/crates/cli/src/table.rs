use std::fmt::Write as _;

use relocbench::io::report::Summary;

const HEADERS: [&str; 11] = [
    "method",
    "preset",
    "E_a(5cm,5°)",
    "med Δt[m]",
    "med Δθ[°]",
    "E_f(0.05)",
    "E_f(0.15)",
    "N/A",
    "Ē_a(0.5m,25°)",
    "Ē_f(0.5)",
    "Obj.",
];

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

/// Method comparison table, one row per summary.
pub fn summary_table(summaries: &[Summary]) -> String {
    let rows: Vec<[String; 11]> = summaries
        .iter()
        .map(|s| {
            let t = &s.table;
            [
                s.method.clone(),
                s.preset.clone(),
                format!("{:.3}", t.recall_abs),
                opt(t.median_dt, 3),
                opt(t.median_dtheta, 2),
                format!("{:.3}", t.recall_dcre_005),
                format!("{:.3}", t.recall_dcre_015),
                format!("{:.3}", t.na),
                format!("{:.3}", t.outlier_abs),
                format!("{:.3}", t.outlier_dcre),
                opt(t.obj, 3),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = HEADERS.iter().map(|h| h.chars().count()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i < 2 {
                let _ = write!(out, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "{}{c}", " ".repeat(pad));
            }
            out.push_str(if i + 1 < cells.len() { "  " } else { "\n" });
        }
    };
    line(&mut out, &HEADERS);
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}
