//! Merge finished runs into one summary plus gnuplot-ready columns.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use thiserror::Error;

use crate::output::{Manifest, MANIFEST};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run manifest found in {0}")]
    NoRuns(String),
    #[error("{path}: {message}")]
    Bad { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn bad(path: &Path, message: impl ToString) -> ReportError {
    ReportError::Bad { path: path.display().to_string(), message: message.to_string() }
}

/// Runs below `dir`: `dir` itself when it holds a manifest, else its direct children, sorted by name.
pub fn collect(dir: &Path) -> Result<Vec<(PathBuf, Manifest)>, ReportError> {
    let candidates: Vec<PathBuf> = if dir.join(MANIFEST).is_file() {
        vec![dir.to_path_buf()]
    } else if dir.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(MANIFEST).is_file()).collect();
        v.sort();
        v
    } else {
        return Err(bad(dir, "not a directory"));
    };
    if candidates.is_empty() {
        return Err(ReportError::NoRuns(dir.display().to_string()));
    }
    candidates
        .into_iter()
        .map(|p| {
            let path = p.join(MANIFEST);
            let text = fs::read_to_string(&path)?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| bad(&path, e))?;
            Ok((p, m))
        })
        .collect()
}

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_csv(path: &Path) -> Result<Table, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(path, e))?;
    let columns = r.headers().map_err(|e| bad(path, e))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(|e| bad(path, e)))
        .collect::<Result<_, _>>()?;
    Ok(Table { columns, rows })
}

fn cell_value(s: &str) -> Value {
    match (s.parse::<i64>(), s.parse::<f64>()) {
        (Ok(i), _) => json!(i),
        (_, Ok(f)) if f.is_finite() => json!(f),
        _ => match s {
            "true" => json!(true),
            "false" => json!(false),
            _ => json!(s),
        },
    }
}

fn dat(t: &Table) -> String {
    let quote = |s: &str| if s.is_empty() || s.contains(char::is_whitespace) { format!("\"{s}\"") } else { s.to_string() };
    let mut out = format!("# {}\n", t.columns.join(" "));
    for row in &t.rows {
        out.push_str(&row.iter().map(|c| quote(c)).collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    out
}

pub struct ReportSummary {
    pub path: PathBuf,
    pub sections: usize,
    pub plots: Vec<PathBuf>,
}

pub fn report(dir: &Path) -> Result<ReportSummary, ReportError> {
    let runs = collect(dir)?;
    let plot_dir = dir.join("plots");
    let mut sections = Vec::new();
    let mut seeds: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    let mut plots = Vec::new();
    for (path, m) in &runs {
        let run = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        seeds.entry(m.seed).or_default().push(run.clone());
        let mut tables = serde_json::Map::new();
        for a in m.artifacts.iter().filter(|a| a.name.ends_with(".csv")) {
            let t = read_csv(&path.join(&a.name))?;
            fs::create_dir_all(&plot_dir)?;
            let plot = plot_dir.join(format!("{run}__{}.dat", a.name.trim_end_matches(".csv")));
            fs::write(&plot, dat(&t))?;
            plots.push(plot);
            let rows: Vec<Value> = t.rows.iter().map(|r| Value::Array(r.iter().map(|c| cell_value(c)).collect())).collect();
            tables.insert(a.name.clone(), json!({ "columns": t.columns, "rows": rows }));
        }
        sections.push(json!({
            "run": run,
            "study": m.study,
            "config_hash": m.config_hash,
            "seed": m.seed,
            "pass": m.pass,
            "wall_time_s": m.wall_time_s,
            "summary": m.summary,
            "tables": tables,
        }));
    }
    let shared: BTreeMap<String, &Vec<String>> = seeds.iter().map(|(s, r)| (s.to_string(), r)).collect();
    let summary = json!({ "sections": sections, "seeds": shared });
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_vec_pretty(&summary).expect("summary serializes"))?;
    Ok(ReportSummary { path, sections: runs.len(), plots })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_keep_their_types() {
        assert_eq!(cell_value("3"), json!(3));
        assert_eq!(cell_value("2.5e-3"), json!(2.5e-3));
        assert_eq!(cell_value("true"), json!(true));
        assert_eq!(cell_value("bump-w0-y1"), json!("bump-w0-y1"));
    }

    #[test]
    fn dat_quotes_blank_cells() {
        let t = Table { columns: vec!["a".into(), "b".into()], rows: vec![vec!["1".into(), "".into()], vec!["x y".into(), "2".into()]] };
        assert_eq!(dat(&t), "# a b\n1 \"\"\n\"x y\" 2\n");
    }
}
