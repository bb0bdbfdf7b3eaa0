//! `metrics.json` documents and the aggregated tables rendered from run directories.
//!
//! A cell directory holds `metrics.json` (test split) and optionally
//! `metrics_cyst.json` (held-out phantom family):
//!
//! ```text
//! {cell, split, settings: [{setting, frames: [{id, psnr, ssim, l1, cr, cnr}], mean: {...}, roi: {...}}]}
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::contrast::RoiCircle;
use crate::error::{Error, Result};

pub const FIXED_TX_DAS: &str = "Fixed Tx -- DAS";
pub const LEARNED_TX_DAS: &str = "Learned Tx -- DAS";
pub const LEARNED_RX: &str = "Learned Rx";
pub const LEARNED_TX_RX: &str = "Learned Tx-Rx";
/// Row order of every table.
pub const SETTINGS: [&str; 4] = [FIXED_TX_DAS, LEARNED_TX_DAS, LEARNED_RX, LEARNED_TX_RX];

pub const METRICS_FILE: &str = "metrics.json";
pub const CYST_METRICS_FILE: &str = "metrics_cyst.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub cr: Option<f64>,
    pub cnr: Option<f64>,
    /// Reasons for missing contrast values.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    /// Mean over frames where the value is defined.
    pub cr: Option<f64>,
    pub cnr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiPair {
    pub target: RoiCircle,
    pub background: RoiCircle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub setting: String,
    pub frames: Vec<FrameRow>,
    pub mean: MeanRow,
    pub roi: Option<RoiPair>,
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl SettingReport {
    pub fn new(setting: impl Into<String>, frames: Vec<FrameRow>, roi: Option<RoiPair>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::config("a setting needs at least one evaluated frame"));
        }
        let mean = MeanRow {
            psnr: mean_of(frames.iter().map(|f| f.psnr)).unwrap(),
            ssim: mean_of(frames.iter().map(|f| f.ssim)).unwrap(),
            l1: mean_of(frames.iter().map(|f| f.l1)).unwrap(),
            cr: mean_of(frames.iter().filter_map(|f| f.cr)),
            cnr: mean_of(frames.iter().filter_map(|f| f.cnr)),
        };
        Ok(Self {
            setting: setting.into(),
            frames,
            mean,
            roi,
        })
    }
}

/// All settings of one cell on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cell: String,
    pub split: String,
    pub settings: Vec<SettingReport>,
    /// Files written next to the report, relative to the cell directory.
    #[serde(default)]
    pub artifacts: Vec<String>,
}

impl MetricsReport {
    pub fn setting(&self, name: &str) -> Option<&SettingReport> {
        self.settings.iter().find(|s| s.setting == name)
    }

    /// `Some(true)` when Learned Rx beats Fixed-Tx DAS in mean PSNR, `None`
    /// when either row is absent.
    pub fn learned_rx_beats_das(&self) -> Option<bool> {
        let rx = self.setting(LEARNED_RX)?;
        let das = self.setting(FIXED_TX_DAS)?;
        Some(rx.mean.psnr > das.mean.psnr)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// One table line: a cell/setting pair and its mean metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub cell: String,
    pub setting: String,
    pub mean: MeanRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub rows: Vec<TableRow>,
    pub cyst_rows: Vec<TableRow>,
    /// Cells whose Learned Rx PSNR does not exceed Fixed-Tx DAS.
    pub violations: Vec<String>,
    /// Subdirectories without a readable `metrics.json`, with the reason.
    pub missing: Vec<(String, String)>,
    pub written: Vec<PathBuf>,
}

const TABLE_HEADER: [&str; 5] = ["cell", "setting", "psnr_db", "ssim", "l1"];
const CONTRAST_HEADER: [&str; 7] = ["cell", "setting", "psnr_db", "ssim", "l1", "cr_db", "cnr"];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

fn fields(row: &TableRow, contrast: bool) -> Vec<String> {
    let mut out = vec![
        row.cell.clone(),
        row.setting.clone(),
        format!("{:.4}", row.mean.psnr),
        format!("{:.4}", row.mean.ssim),
        format!("{:.6}", row.mean.l1),
    ];
    if contrast {
        out.push(opt(row.mean.cr));
        out.push(opt(row.mean.cnr));
    }
    out
}

pub fn table_csv(rows: &[TableRow], contrast: bool) -> String {
    let header: &[&str] = if contrast { &CONTRAST_HEADER } else { &TABLE_HEADER };
    let mut s = header.join(",") + "\n";
    for r in rows {
        s += &(fields(r, contrast).join(",") + "\n");
    }
    s
}

/// Space-aligned plain-text table.
pub fn table_text(rows: &[TableRow], contrast: bool) -> String {
    let header: &[&str] = if contrast { &CONTRAST_HEADER } else { &TABLE_HEADER };
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    lines.extend(rows.iter().map(|r| fields(r, contrast)));
    let widths: Vec<usize> = (0..header.len())
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, w))| if c < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        let _ = writeln!(s, "{}", cells.join("  ").trim_end());
    }
    s
}

fn rows_of(report: &MetricsReport) -> Vec<TableRow> {
    let mut settings: Vec<&SettingReport> = report.settings.iter().collect();
    settings.sort_by_key(|s| SETTINGS.iter().position(|n| *n == s.setting).unwrap_or(SETTINGS.len()));
    settings
        .into_iter()
        .map(|s| TableRow {
            cell: report.cell.clone(),
            setting: s.setting.clone(),
            mean: s.mean.clone(),
        })
        .collect()
}

/// Collects every cell directory under `run_dir` and writes `table.csv`, `table.txt`,
/// `table_cyst.csv` and `table_cyst.txt` there. Cells are visited in name order.
pub fn render_report(run_dir: impl AsRef<Path>) -> Result<RenderedReport> {
    let run_dir = run_dir.as_ref();
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut cells: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        // a cell directory holds its config, metrics or failure note
        .filter(|p| ["config.json", METRICS_FILE, "error.txt"].iter().any(|f| p.join(f).exists()))
        .collect();
    cells.sort();

    let mut out = RenderedReport {
        rows: Vec::new(),
        cyst_rows: Vec::new(),
        violations: Vec::new(),
        missing: Vec::new(),
        written: Vec::new(),
    };
    for dir in &cells {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match MetricsReport::load(dir.join(METRICS_FILE)) {
            Ok(report) => {
                if report.learned_rx_beats_das() == Some(false) {
                    out.violations.push(report.cell.clone());
                }
                out.rows.extend(rows_of(&report));
            }
            Err(e) => {
                let reason = std::fs::read_to_string(dir.join("error.txt")).unwrap_or_else(|_| e.to_string());
                out.missing.push((name, reason.trim().to_string()));
                continue;
            }
        }
        if let Ok(cyst) = MetricsReport::load(dir.join(CYST_METRICS_FILE)) {
            out.cyst_rows.extend(rows_of(&cyst));
        }
    }

    let mut text = table_text(&out.rows, false);
    for cell in &out.violations {
        let _ = writeln!(text, "\n!! ORDERING VIOLATION in {cell}: Learned Rx PSNR does not exceed Fixed Tx -- DAS");
    }
    for (cell, reason) in &out.missing {
        let _ = writeln!(text, "\nmissing cell {cell}: {reason}");
    }
    for (file, body) in [
        ("table.csv", table_csv(&out.rows, false)),
        ("table.txt", text),
        ("table_cyst.csv", table_csv(&out.cyst_rows, true)),
        ("table_cyst.txt", table_text(&out.cyst_rows, true)),
    ] {
        let p = run_dir.join(file);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        out.written.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, psnr: f64, cr: Option<f64>) -> FrameRow {
        FrameRow {
            id: id.into(),
            psnr,
            ssim: 0.5,
            l1: 0.1,
            cr,
            cnr: None,
            notes: Vec::new(),
        }
    }

    #[test]
    fn means_skip_undefined_contrast() {
        let s = SettingReport::new(FIXED_TX_DAS, vec![row("a", 10.0, Some(-20.0)), row("b", 20.0, None)], None).unwrap();
        assert_eq!(s.mean.psnr, 15.0);
        assert_eq!(s.mean.cr, Some(-20.0));
        assert_eq!(s.mean.cnr, None);
    }

    #[test]
    fn empty_run_dir_renders_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let r = render_report(dir.path()).unwrap();
        assert!(r.rows.is_empty());
        let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
        assert_eq!(csv, "cell,setting,psnr_db,ssim,l1\n");
    }

    #[test]
    fn violation_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let cell = dir.path().join("10-MLA");
        std::fs::create_dir(&cell).unwrap();
        let report = MetricsReport {
            cell: "10-MLA".into(),
            split: "test".into(),
            settings: vec![
                SettingReport::new(LEARNED_RX, vec![row("a", 10.0, None)], None).unwrap(),
                SettingReport::new(FIXED_TX_DAS, vec![row("a", 12.0, None)], None).unwrap(),
            ],
            artifacts: Vec::new(),
        };
        report.save(cell.join(METRICS_FILE)).unwrap();
        let broken = dir.path().join("broken");
        std::fs::create_dir(&broken).unwrap();
        std::fs::write(broken.join("config.json"), "{}").unwrap();
        std::fs::create_dir(dir.path().join("dataset")).unwrap();
        let r = render_report(dir.path()).unwrap();
        assert_eq!(r.violations, vec!["10-MLA".to_string()]);
        assert_eq!(r.rows[0].setting, FIXED_TX_DAS);
        assert_eq!(r.missing.len(), 1);
        let text = std::fs::read_to_string(dir.path().join("table.txt")).unwrap();
        assert!(text.contains("ORDERING VIOLATION"));
    }
}
