use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use super::experiment::{ExperimentReport, Histogram};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const D_M_HISTOGRAM_FILE: &str = "histogram_d_m.csv";
pub const D_E_HISTOGRAM_FILE: &str = "histogram_d_e.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Pretty JSON with every float in 17-significant-digit scientific form.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with exact float text.
pub fn to_exact_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_start,bin_end,real,fake\n");
    for i in 0..h.bins() {
        s.push_str(&format!("{:.16e},{:.16e},{},{}\n", h.edges[i], h.edges[i + 1], h.real[i], h.fake[i]));
    }
    s
}

fn write(path: PathBuf, text: String) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(Error::io(&path))?;
    Ok(path)
}

/// Writes the JSON report and CSV tables into `dir`, creating it if
/// needed. Returns the written paths.
pub fn export_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.test_real + report.test_fake == 0 || report.scores.is_empty() {
        return Err(Error::EmptyTestSplit);
    }
    let json = to_exact_json(report)?;
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut written = vec![
        write(dir.join(REPORT_FILE), json)?,
        write(dir.join(D_M_HISTOGRAM_FILE), histogram_csv(&report.d_m_histogram))?,
        write(dir.join(D_E_HISTOGRAM_FILE), histogram_csv(&report.d_e_histogram))?,
    ];
    if !report.ablation.is_empty() {
        let mut s = String::from("variant,auc,tau\n");
        for row in &report.ablation {
            s.push_str(&format!("{},{:.16e},{:.16e}\n", row.variant.name(), row.auc, row.tau));
        }
        written.push(write(dir.join(ABLATION_FILE), s)?);
    }
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_exact_json() {
        let values = vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, f64::MIN_POSITIVE, 0.30000000000000004];
        let json = to_exact_json(&values).unwrap();
        let back: Vec<f64> = serde_json::from_str(&json).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a} vs {b}");
        }
    }

    #[test]
    fn histogram_csv_has_one_row_per_bin() {
        let mut h = Histogram::new(20, 0.0, 2.0);
        h.add(0.3, crate::model::Label::Real);
        h.add(2.0, crate::model::Label::Fake);
        let csv = histogram_csv(&h);
        assert_eq!(csv.lines().count() - 1, 20);
        assert_eq!(h.fake[19], 1);
        assert_eq!(h.real[3], 1);
    }
}
