//! Confusion matrices and derived classification metrics.
//!
//! Reports carry per-class precision/recall/F1, accuracy, and macro-F1.
//! The machine-readable report format is a fixed-schema delimited file;
//! the text rendering groups results per device for side-by-side reading.

use std::fmt::Write as _;
use std::io;

use crate::error::{Error, Result};
use crate::signal::DistanceClass;

/// Column header of the machine-readable report file.
pub const REPORT_COLUMNS: [&str; 8] = [
    "model", "dataset", "device", "f1_vc", "f1_c", "f1_safe", "acc", "macro_f1",
];

/// 3x3 confusion matrix; rows are true classes, columns predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    cells: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_cells(cells: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { cells }
    }

    /// Count (true, predicted) pairs into a matrix.
    pub fn from_pairs<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (DistanceClass, DistanceClass)>,
    {
        let mut m = ConfusionMatrix::default();
        let mut any = false;
        for (truth, pred) in pairs {
            m.cells[truth.index()][pred.index()] += 1;
            any = true;
        }
        if !any {
            return Err(Error::InvalidInput("no prediction pairs".into()));
        }
        Ok(m)
    }

    pub fn cell(&self, truth: DistanceClass, pred: DistanceClass) -> u64 {
        self.cells[truth.index()][pred.index()]
    }

    /// Row sums: number of samples per true class.
    pub fn row_marginals(&self) -> [u64; 3] {
        let mut out = [0; 3];
        for (i, row) in self.cells.iter().enumerate() {
            out[i] = row.iter().sum();
        }
        out
    }

    /// Column sums: number of samples per predicted class.
    pub fn col_marginals(&self) -> [u64; 3] {
        let mut out = [0; 3];
        for row in &self.cells {
            for (j, &c) in row.iter().enumerate() {
                out[j] += c;
            }
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..3).map(|i| self.cells[i][i]).sum();
        trace as f64 / total as f64
    }

    pub fn precision(&self, class: DistanceClass) -> f64 {
        let i = class.index();
        let predicted = self.col_marginals()[i];
        if predicted == 0 {
            return 0.0;
        }
        self.cells[i][i] as f64 / predicted as f64
    }

    pub fn recall(&self, class: DistanceClass) -> f64 {
        let i = class.index();
        let actual = self.row_marginals()[i];
        if actual == 0 {
            return 0.0;
        }
        self.cells[i][i] as f64 / actual as f64
    }

    /// Per-class F1; 0 by convention when precision + recall is 0.
    pub fn f1(&self, class: DistanceClass) -> f64 {
        let i = class.index();
        // 2PR/(P+R) reduces to 2*TP / (row_sum + col_sum).
        let denom = self.row_marginals()[i] + self.col_marginals()[i];
        if denom == 0 {
            return 0.0;
        }
        2.0 * self.cells[i][i] as f64 / denom as f64
    }

    pub fn per_class_f1(&self) -> [f64; 3] {
        [
            self.f1(DistanceClass::VeryClose),
            self.f1(DistanceClass::Close),
            self.f1(DistanceClass::Safe),
        ]
    }

    /// Unweighted mean of the three per-class F1 values.
    pub fn macro_f1(&self) -> f64 {
        let f = self.per_class_f1();
        (f[0] + f[1] + f[2]) / 3.0
    }
}

/// Evaluation result for one (model, dataset, device) combination.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub model_no: u8,
    pub model_name: String,
    pub dataset: String,
    pub device: String,
    pub matrix: ConfusionMatrix,
}

impl EvalReport {
    pub fn row(&self) -> ReportRow {
        let f1 = self.matrix.per_class_f1();
        ReportRow {
            model: self.model_no.to_string(),
            dataset: self.dataset.clone(),
            device: self.device.clone(),
            f1_vc: f1[0],
            f1_c: f1[1],
            f1_safe: f1[2],
            acc: self.matrix.accuracy(),
            macro_f1: self.matrix.macro_f1(),
        }
    }
}

/// One line of the machine-readable report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub dataset: String,
    pub device: String,
    pub f1_vc: f64,
    pub f1_c: f64,
    pub f1_safe: f64,
    pub acc: f64,
    pub macro_f1: f64,
}

/// Write reports as delimited text with the fixed column schema.
/// Values keep full precision so the file round-trips losslessly.
pub fn write_report_csv<W: io::Write>(reports: &[EvalReport], mut w: W) -> Result<()> {
    writeln!(w, "{}", REPORT_COLUMNS.join(","))?;
    for r in reports {
        let row = r.row();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            row.model, row.dataset, row.device, row.f1_vc, row.f1_c, row.f1_safe, row.acc,
            row.macro_f1
        )?;
    }
    Ok(())
}

/// Read a machine-readable report back into rows.
pub fn read_report_csv<R: io::Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                path: "<report>".into(),
                column: name.into(),
            })
    };
    let idx: Vec<usize> = REPORT_COLUMNS
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let field = |i: usize| record.get(idx[i]).unwrap_or("").to_string();
        let num = |i: usize| -> Result<f64> {
            record
                .get(idx[i])
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad number in report column {}", REPORT_COLUMNS[i])))
        };
        out.push(ReportRow {
            model: field(0),
            dataset: field(1),
            device: field(2),
            f1_vc: num(3)?,
            f1_c: num(4)?,
            f1_safe: num(5)?,
            acc: num(6)?,
            macro_f1: num(7)?,
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(e.to_string())
}

/// Render reports as plain-text tables, grouped per device and dataset.
/// Values are rounded to two decimals for reading; use the delimited
/// output for further processing.
pub fn render_report(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let mut devices: Vec<&str> = reports.iter().map(|r| r.device.as_str()).collect();
    devices.sort_unstable();
    devices.dedup();

    for device in devices {
        let mut datasets: Vec<&str> = reports
            .iter()
            .filter(|r| r.device == device)
            .map(|r| r.dataset.as_str())
            .collect();
        datasets.sort_unstable();
        datasets.dedup();

        writeln!(out, "== {device} ==").unwrap();
        for dataset in datasets {
            writeln!(out, "-- {dataset}").unwrap();
            writeln!(
                out,
                "{:<32} {:>6} {:>6} {:>8} {:>6} {:>9}",
                "model", "f1_vc", "f1_c", "f1_safe", "acc", "macro_f1"
            )
            .unwrap();
            let mut rows: Vec<&EvalReport> = reports
                .iter()
                .filter(|r| r.device == device && r.dataset == dataset)
                .collect();
            rows.sort_by_key(|r| r.model_no);
            for r in rows {
                let f1 = r.matrix.per_class_f1();
                writeln!(
                    out,
                    "{:<32} {:>6.2} {:>6.2} {:>8.2} {:>6.2} {:>9.2}",
                    format!("{:2} {}", r.model_no, r.model_name),
                    f1[0],
                    f1[1],
                    f1[2],
                    r.matrix.accuracy(),
                    r.matrix.macro_f1()
                )
                .unwrap();
            }
        }
        out.push('\n');
    }
    out
}
