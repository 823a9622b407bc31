use std::collections::BTreeMap;
use std::fmt::Write as _;

use ltx_core::eval::EvalReport;

use crate::error::{CliError, CliResult};
use crate::files::{guard, write_file};
use crate::ReportArgs;

const REPORT_EXT: &str = "report";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Renders a table with one row per report, in the given order.
fn table(rows: &[&EvalReport]) -> String {
    let header = ["label", "model", "forward", "reverse", "fid", "bleu3", "rouge3", "nll"];
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.model.clone(),
                cell(Some(r.forward_ce)),
                cell(Some(r.reverse_ce)),
                cell(Some(r.fid)),
                cell(r.recon_bleu3),
                cell(r.recon_rouge3),
                cell(r.recon_nll),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec());
    for row in &body {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

/// The combined table. Reports sharing one embedder are ranked by FID
/// (ties by model name, then input order). Reports from different
/// embedders cannot be ranked against each other, so each embedder gets
/// its own unranked table.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut groups: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.embedder.as_str()).or_default().push(r);
    }
    if groups.len() == 1 {
        let (embedder, mut rows) = groups.into_iter().next().expect("one group");
        rows.sort_by(|a, b| a.fid.total_cmp(&b.fid).then_with(|| a.model.cmp(&b.model)));
        return format!("embedder: {embedder}\n{}", table(&rows));
    }
    let mut out = format!(
        "reports use {} different embedders; FID is only comparable within one embedder, so rows are not ranked\n",
        groups.len()
    );
    for (embedder, rows) in groups {
        let _ = write!(out, "\nembedder: {embedder}\n{}", table(&rows));
    }
    out
}

pub fn run(a: &ReportArgs, force: bool) -> CliResult<()> {
    if let Some(out) = &a.out {
        guard(out, force)?;
    }
    let entries = std::fs::read_dir(&a.reports)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.reports.display())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == REPORT_EXT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no *.{REPORT_EXT} files in {}", a.reports.display())));
    }
    let reports = paths
        .iter()
        .map(|p| EvalReport::load(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display()))))
        .collect::<CliResult<Vec<_>>>()?;
    let text = render_table(&reports);
    print!("{text}");
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    Ok(())
}
