//! CSV tables and PGM confusion images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::EvalReport;
use crate::error::Result;

const CELL_PX: usize = 16;

/// File stem shared by a report's confusion CSV and image.
pub fn confusion_stem(r: &EvalReport) -> String {
    format!(
        "{}_{}_{}_{}",
        r.variant,
        r.regime.as_str(),
        if r.denoise { "denoised" } else { "raw" },
        r.test.to_ascii_lowercase()
    )
}

/// Binary greyscale image of a percentage matrix, `CELL_PX` pixels per
/// cell; 100% is black and 0% white.
pub fn write_pgm(path: &Path, confusion: &[Vec<f64>]) -> Result<()> {
    let j = confusion.len();
    let side = j * CELL_PX;
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        let row = &confusion[y / CELL_PX];
        for x in 0..side {
            let v = row[x / CELL_PX].clamp(0.0, 100.0);
            out.push((255.0 - (v * 2.55).round()) as u8);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn confusion_csv(r: &EvalReport) -> String {
    let mut s = String::from("true\\predicted");
    for c in &r.classes {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for (c, row) in r.classes.iter().zip(&r.confusion) {
        s.push_str(c);
        for v in row {
            write!(s, ",{v:.4}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Writes `accuracy.csv` (one row per report, in order), plus a confusion
/// CSV and PGM per report under `confusion/`. Returns the written paths.
pub fn emit_report(reports: &[EvalReport], dir: &Path) -> Result<Vec<PathBuf>> {
    let cdir = dir.join("confusion");
    fs::create_dir_all(&cdir)?;
    let mut written = Vec::new();
    let mut acc = String::from("variant,regime,denoise,test,accuracy\n");
    for r in reports {
        writeln!(
            acc,
            "{},{},{},{},{:.4}",
            r.variant,
            r.regime,
            if r.denoise { "on" } else { "off" },
            r.test,
            r.accuracy_percent
        )
        .unwrap();
        let stem = confusion_stem(r);
        let csv = cdir.join(format!("{stem}.csv"));
        fs::write(&csv, confusion_csv(r))?;
        let pgm = cdir.join(format!("{stem}.pgm"));
        write_pgm(&pgm, &r.confusion)?;
        written.push(csv);
        written.push(pgm);
    }
    let path = dir.join("accuracy.csv");
    fs::write(&path, acc)?;
    written.insert(0, path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Regime;
    use crate::eval::ReportKey;
    use crate::fingerprint::Variant;

    fn identity(j: usize) -> EvalReport {
        let classes = (0..j).map(|i| format!("d{i}")).collect();
        let truth: Vec<usize> = (0..j).collect();
        EvalReport::from_predictions(
            ReportKey {
                variant: Variant::F1,
                regime: Regime::Mixed,
                denoise: false,
                test: "Original".into(),
            },
            classes,
            &truth,
            &truth,
            vec![0],
            "h",
        )
    }

    #[test]
    fn identity_pgm_has_dark_diagonal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        write_pgm(&p, &identity(3).confusion).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"P5\n48 48\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 48 * 48);
        assert_eq!(px[0], 0);
        assert_eq!(px[20], 255);
        assert_eq!(px[20 * 48 + 20], 0);
    }

    #[test]
    fn emission_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![identity(2), identity(4)];
        let a = emit_report(&reports, &dir.path().join("a")).unwrap();
        let b = emit_report(&reports, &dir.path().join("b")).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
}
