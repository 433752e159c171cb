use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::execute::Results;
use crate::stats::StatsSummary;

pub const CSV_FILE: &str = "results.csv";
pub const JSON_FILE: &str = "results.json";

/// Column order of the summary CSV.
pub const CSV_COLUMNS: [&str; 13] = [
    "setup",
    "packet_size",
    "plr_mean",
    "plr_ci_lo",
    "plr_ci_hi",
    "apd_mean",
    "apd_ci_lo",
    "apd_ci_hi",
    "jitter_mean",
    "jitter_ci_lo",
    "jitter_ci_hi",
    "node_count",
    "n",
];

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("no sweep point produced results; nothing written")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn summary_cells(s: Option<&StatsSummary>) -> [String; 3] {
    match s {
        Some(s) => [s.mean, s.ci95_low, s.ci95_high].map(|v| format!("{v:.6}")),
        None => Default::default(),
    }
}

/// One row per sweep point that has results, in sweep order.
pub fn to_csv(results: &Results) -> Result<String, EmitError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for p in &results.points {
        let Some(sum) = &p.summary else { continue };
        let mut row = vec![
            u8::from(p.key.setup).to_string(),
            p.key.packet_size.to_string(),
        ];
        row.extend(summary_cells(Some(&sum.plr)));
        row.extend(summary_cells(sum.apd.as_ref()));
        row.extend(summary_cells(sum.jitter.as_ref()));
        row.push(p.key.node_count.to_string());
        row.push(sum.plr.n.to_string());
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| EmitError::Io {
        path: PathBuf::from(CSV_FILE),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv of ascii cells"))
}

pub fn to_json(results: &Results) -> Result<String, EmitError> {
    let mut s = serde_json::to_string_pretty(results)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<Results, serde_json::Error> {
    serde_json::from_str(text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// Writes the CSV summary and the JSON document into `dir`.
pub fn emit(results: &Results, dir: &Path) -> Result<Emitted, EmitError> {
    if results.points.iter().all(|p| p.summary.is_none()) {
        return Err(EmitError::Empty);
    }
    let csv = to_csv(results)?;
    let json = to_json(results)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EmitError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let out = Emitted {
        csv: dir.join(CSV_FILE),
        json: dir.join(JSON_FILE),
    };
    std::fs::write(&out.csv, csv).map_err(io(&out.csv))?;
    std::fs::write(&out.json, json).map_err(io(&out.json))?;
    Ok(out)
}
