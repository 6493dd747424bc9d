//! CSV, JSON and plain-text renderings of evaluation results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Aggregate, DatasetReport, MetricRecord};
use crate::error::{Error, Result};

/// One [`MetricRecord`] per row.
pub fn write_csv(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
    w.write_record(["sequence", "frame", "psnr", "ssim", "protocol", "tier"])
        .map_err(|e| Error::Serde(e.to_string()))?;
    for r in records {
        w.write_record([
            r.sequence.clone(),
            r.frame.to_string(),
            format!("{:.6}", r.psnr),
            format!("{:.6}", r.ssim),
            r.protocol.clone(),
            r.tier.map(|t| t.name().to_string()).unwrap_or_default(),
        ])
        .map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregates only (per-frame rows go to the CSV).
pub fn to_json(report: &DatasetReport) -> Result<String> {
    let value = serde_json::json!({
        "method": report.method,
        "protocol": report.protocol,
        "scale": report.scale,
        "sequences": report.sequences,
        "tiers": report.tiers,
        "overall": report.overall,
    });
    serde_json::to_string_pretty(&value).map_err(|e| Error::Serde(e.to_string()))
}

pub fn write_json(report: &DatasetReport, path: &Path) -> Result<()> {
    fs::write(path, to_json(report)? + "\n").map_err(|e| Error::io(path, e))
}

fn row(out: &mut String, a: &Aggregate) {
    let _ = writeln!(out, "{:<16} {:>6} {:>9.2} {:>7.4}", a.name, a.frames, a.psnr, a.ssim);
}

/// Sequence rows, an average row and (when present) tier rows.
pub fn text_table(report: &DatasetReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "method {} | protocol {} (crop {}, trim {}/{}) | {}",
        report.method,
        report.protocol.name,
        report.protocol.border_crop,
        report.protocol.trim_head,
        report.protocol.trim_tail,
        report.scale
    );
    let _ = writeln!(out, "{:<16} {:>6} {:>9} {:>7}", "sequence", "frames", "PSNR", "SSIM");
    for a in &report.sequences {
        row(&mut out, a);
    }
    row(&mut out, &report.overall);
    if !report.tiers.is_empty() {
        let _ = writeln!(out, "{:<16} {:>6} {:>9} {:>7}", "tier", "frames", "PSNR", "SSIM");
        for a in &report.tiers {
            row(&mut out, a);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScaleFactor;
    use crate::evaluation::{build_report, EvalProtocol};
    use crate::flow::MotionTier;

    fn report() -> DatasetReport {
        let rec = |seq: &str, frame, psnr, tier| MetricRecord {
            sequence: seq.into(),
            frame,
            psnr,
            ssim: 0.5,
            protocol: "B".into(),
            tier: Some(tier),
        };
        build_report(
            "bicubic".into(),
            EvalProtocol::b(),
            ScaleFactor::X4,
            vec![
                rec("walk", 2, 20.0, MotionTier::Fast),
                rec("walk", 3, 22.0, MotionTier::Fast),
                rec("city", 2, 30.0, MotionTier::Slow),
            ],
        )
    }

    #[test]
    fn table_and_json() {
        let r = report();
        let table = text_table(&r);
        assert!(table.contains("walk"));
        assert!(table.contains("Average"));
        assert!(table.contains("24.00"));
        let json: serde_json::Value = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
        assert_eq!(json["overall"]["frames"], 3);
        assert_eq!(json["tiers"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv(&report().records, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("walk,2,20.000000"));
    }
}
