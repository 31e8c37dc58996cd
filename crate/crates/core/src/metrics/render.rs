use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use font8x8::legacy::BASIC_LEGACY;

use super::{cross_task_average, ConfusionMatrix, TaskReport};
use crate::corpus::csv_field;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::schema::NA;
use crate::stamp::{stamped_csv, RunStamp};

pub fn report_csv(report: &TaskReport) -> String {
    let mut s = String::from("task,class,precision,recall,f1,support\n");
    let task = csv_field(&report.task);
    for c in &report.per_class {
        let _ = writeln!(s, "{task},{},{:.4},{:.4},{:.4},{}", csv_field(&c.class), c.precision, c.recall, c.f1, c.support);
    }
    let k = report.per_class.len().max(1) as f64;
    let mp = report.per_class.iter().map(|c| c.precision).sum::<f64>() / k;
    let mr = report.per_class.iter().map(|c| c.recall).sum::<f64>() / k;
    let _ = writeln!(s, "{task},macro_avg,{mp:.4},{mr:.4},{:.4},{}", report.macro_f1, report.n);
    let _ = writeln!(s, "{task},overall_accuracy,,,{:.4},{}", report.overall_accuracy, report.n);
    s
}

pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut s = String::from("truth");
    for c in &m.classes {
        s.push(',');
        s.push_str(&csv_field(c));
    }
    s.push(',');
    s.push_str(NA);
    s.push('\n');
    for (i, row) in m.counts.iter().enumerate() {
        s.push_str(&csv_field(&m.classes[i]));
        for v in row {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", m.missing[i]);
    }
    s
}

/// One column of a per-task comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonColumn {
    pub name: String,
    pub reports: Vec<TaskReport>,
}

/// Macro-F1 per task and column, followed by the cross-task average row.
pub fn comparison_csv(columns: &[ComparisonColumn]) -> Result<String> {
    let Some(first) = columns.first() else {
        return Err(Error::config("comparison needs at least one column"));
    };
    let tasks: Vec<&str> = first.reports.iter().map(|r| r.task.as_str()).collect();
    for col in columns {
        if col.reports.iter().map(|r| r.task.as_str()).ne(tasks.iter().copied()) {
            return Err(Error::Integrity(format!("column `{}` covers different tasks", col.name)));
        }
    }
    let mut s = String::from("task");
    for col in columns {
        s.push(',');
        s.push_str(&csv_field(&col.name));
    }
    s.push('\n');
    for (i, t) in tasks.iter().enumerate() {
        s.push_str(&csv_field(t));
        for col in columns {
            let _ = write!(s, ",{:.4}", col.reports[i].macro_f1);
        }
        s.push('\n');
    }
    s.push_str("average");
    for col in columns {
        let _ = write!(s, ",{:.4}", cross_task_average(&col.reports)?.macro_f1);
    }
    s.push('\n');
    Ok(s)
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self { width, height, rgb: vec![255; width * height * 3] }
    }

    fn put(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn fill(&mut self, x0: usize, y0: usize, w: usize, h: usize, c: [u8; 3]) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                self.put(x, y, c);
            }
        }
    }

    fn glyph(ch: char) -> [u8; 8] {
        let code = if ch.is_ascii() && !ch.is_ascii_control() { ch as usize } else { '?' as usize };
        BASIC_LEGACY[code]
    }

    fn text(&mut self, x: usize, y: usize, s: &str, c: [u8; 3]) {
        for (i, ch) in s.chars().enumerate() {
            let g = Self::glyph(ch);
            for (r, bits) in g.iter().enumerate() {
                for col in 0..8 {
                    if bits >> col & 1 == 1 {
                        self.put(x + 8 * i + col, y + r, c);
                    }
                }
            }
        }
    }

    /// Text reading bottom to top, starting at `(x, bottom)`.
    fn text_up(&mut self, x: usize, bottom: usize, s: &str, c: [u8; 3]) {
        for (i, ch) in s.chars().enumerate() {
            let g = Self::glyph(ch);
            for (r, bits) in g.iter().enumerate() {
                for col in 0..8 {
                    if bits >> col & 1 == 1 {
                        if let Some(y) = (bottom + 7).checked_sub(8 * (i + 1) + col) {
                            self.put(x + r, y, c);
                        }
                    }
                }
            }
        }
    }
}

/// Heatmap of a confusion matrix, rows normalized by class support, with the
/// missing-prediction column last. Optional stamp goes into PNG text chunks.
pub fn confusion_png(m: &ConfusionMatrix, stamp: Option<&RunStamp>) -> Result<Vec<u8>> {
    let k = m.n_classes();
    let cols: Vec<&str> = m.classes.iter().map(String::as_str).chain([NA]).collect();
    let label = 8 * cols.iter().map(|c| c.chars().count()).max().unwrap_or(1) + 8;
    let digits = m.counts.iter().flatten().chain(&m.missing).map(|v| v.to_string().len()).max().unwrap_or(1);
    let cell = (8 * digits + 8).max(24);
    let (ox, oy) = (label, label);
    let mut cv = Canvas::new(ox + cols.len() * cell + 4, oy + k * cell + 4);
    for (j, name) in cols.iter().enumerate() {
        cv.text_up(ox + j * cell + (cell - 8) / 2, oy - 5, name, [0, 0, 0]);
    }
    for i in 0..k {
        cv.text(2, oy + i * cell + (cell - 8) / 2, &m.classes[i], [0, 0, 0]);
        let row_total: usize = m.counts[i].iter().sum::<usize>() + m.missing[i];
        for j in 0..=k {
            let v = if j < k { m.counts[i][j] } else { m.missing[i] };
            let share = if row_total == 0 { 0.0 } else { v as f64 / row_total as f64 };
            let shade = |full: f64| (255.0 - full * share).round() as u8;
            let colour = [shade(225.0), shade(175.0), shade(40.0)];
            let (x, y) = (ox + j * cell, oy + i * cell);
            cv.fill(x, y, cell, cell, [160, 160, 160]);
            cv.fill(x + 1, y + 1, cell - 1, cell - 1, colour);
            let text = v.to_string();
            let ink = if share > 0.5 { [255, 255, 255] } else { [0, 0, 0] };
            cv.text(x + (cell - 8 * text.len()) / 2, y + (cell - 8) / 2, &text, ink);
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, cv.width as u32, cv.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| Error::Serialization(e.to_string());
        enc.add_text_chunk("Title".into(), format!("confusion matrix: {}", m.task)).map_err(png_err)?;
        if let Some(s) = stamp {
            enc.add_text_chunk("config_sha256".into(), s.config_sha256.clone()).map_err(png_err)?;
            enc.add_text_chunk("seed".into(), s.seed.to_string()).map_err(png_err)?;
        }
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&cv.rgb).map_err(png_err)?;
        w.finish().map_err(png_err)?;
    }
    Ok(out)
}

pub(crate) fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Writes per-task report CSVs and confusion matrices (CSV and PNG) into `dir`.
pub fn render_reports(
    reports: &[TaskReport],
    matrices: &[ConfusionMatrix],
    dir: &Path,
    prefix: &str,
    stamp: Option<&RunStamp>,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for r in reports {
        let p = dir.join(format!("{prefix}report_{}.csv", file_stem(&r.task)));
        write_atomic(&p, stamped_csv(stamp, &report_csv(r)).as_bytes())?;
        written.push(p);
    }
    for m in matrices {
        let stem = file_stem(&m.task);
        let p = dir.join(format!("{prefix}confusion_{stem}.csv"));
        write_atomic(&p, stamped_csv(stamp, &confusion_csv(m)).as_bytes())?;
        written.push(p);
        let p = dir.join(format!("{prefix}confusion_{stem}.png"));
        write_atomic(&p, &confusion_png(m, stamp)?)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::super::evaluate;
    use super::*;
    use crate::schema::Task;

    fn sample() -> (TaskReport, ConfusionMatrix) {
        let t = Task { name: "technique".into(), classes: vec!["damask".into(), "velvet".into(), "other".into()] };
        evaluate(&t, &[Some(0), Some(1), None, Some(2), Some(0)], &[0, 1, 1, 2, 2]).unwrap()
    }

    #[test]
    fn confusion_csv_shape() {
        let (_, m) = sample();
        let csv = confusion_csv(&m);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "truth,damask,velvet,other,[NA]");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "velvet,0,1,0,1");
    }

    #[test]
    fn report_csv_has_summary_rows() {
        let (r, _) = sample();
        let csv = report_csv(&r);
        assert!(csv.contains("technique,macro_avg,"));
        assert!(csv.contains("technique,overall_accuracy,,,0.6000,5"));
    }

    #[test]
    fn comparison_has_one_column_per_source() {
        let (r, _) = sample();
        let cols: Vec<ComparisonColumn> = ["image", "text", "tabular", "multimodal"]
            .iter()
            .map(|n| ComparisonColumn { name: n.to_string(), reports: vec![r.clone()] })
            .collect();
        let csv = comparison_csv(&cols).unwrap();
        assert!(csv.starts_with("task,image,text,tabular,multimodal\n"));
        assert!(csv.lines().last().unwrap().starts_with("average,"));
    }

    #[test]
    fn png_decodes_with_expected_size_and_stamp() {
        let (_, m) = sample();
        let stamp = RunStamp { config_sha256: "ab".into(), seed: 7 };
        let bytes = confusion_png(&m, Some(&stamp)).unwrap();
        assert_eq!(bytes, confusion_png(&m, Some(&stamp)).unwrap());
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let reader = dec.read_info().unwrap();
        let info = reader.info();
        let label = 8 * 6 + 8;
        assert_eq!(info.width as usize, label + 4 * 24 + 4);
        assert_eq!(info.height as usize, label + 3 * 24 + 4);
        assert!(info.uncompressed_latin1_text.iter().any(|t| t.keyword == "seed" && t.text == "7"));
    }

    #[test]
    fn render_writes_deterministic_files() {
        let (r, m) = sample();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = render_reports(&[r.clone()], &[m.clone()], a.path(), "val_", None).unwrap();
        let fb = render_reports(&[r], &[m], b.path(), "val_", None).unwrap();
        assert_eq!(fa.len(), 3);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
}
