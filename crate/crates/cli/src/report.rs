//! Tabular outputs: the single-volume metric CSV of `eval` and the
//! per-patient table of `report`.

use std::fmt::Write as _;

use aranet::dosimetry::{MetricReport, StructureMetrics};
use aranet::trainer::EvalReport;

/// Percent error of one value with the prediction as denominator. Equal
/// values give 0 even when both are zero; a zero prediction otherwise gives
/// infinity.
pub fn percent_error(truth: f64, prediction: f64) -> f64 {
    if truth == prediction {
        0.0
    } else if prediction == 0.0 {
        f64::INFINITY
    } else {
        (truth - prediction).abs() / prediction * 100.0
    }
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.3}"),
        None => String::new(),
    }
}

fn metric_row(s: &StructureMetrics) -> [Option<f64>; 8] {
    [Some(s.d98), Some(s.d95), Some(s.d50), Some(s.d2), Some(s.d_mean), Some(s.v_x), s.ci, s.hi]
}

fn threshold_label(v_threshold_gy: f64) -> String {
    format!("V{v_threshold_gy}")
}

/// `structure,kind,D98,D95,D50,D2,Dmean,V<x>,CI,HI` with `truth`,
/// `prediction`, `abs_diff` and `ape_percent` rows per structure.
pub fn metrics_csv(truth: &MetricReport, prediction: &MetricReport) -> String {
    let mut out = format!("structure,kind,D98,D95,D50,D2,Dmean,{},CI,HI\n", threshold_label(truth.v_threshold_gy));
    for t in &truth.structures {
        let Some(p) = prediction.structure(&t.label) else { continue };
        let (tv, pv) = (metric_row(t), metric_row(p));
        let pair = |f: fn(f64, f64) -> f64| -> Vec<Option<f64>> {
            tv.iter().zip(&pv).map(|(a, b)| Some(f((*a)?, (*b)?))).collect()
        };
        let rows: [(&str, Vec<Option<f64>>); 4] = [
            ("truth", tv.to_vec()),
            ("prediction", pv.to_vec()),
            ("abs_diff", pair(|a, b| (a - b).abs())),
            ("ape_percent", pair(percent_error)),
        ];
        for (kind, values) in rows {
            let cells: Vec<String> = values.into_iter().map(fmt_value).collect();
            writeln!(out, "{},{kind},{}", t.label, cells.join(",")).expect("string write");
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triple {
    pub truth: f64,
    pub prediction: f64,
    pub abs_diff: f64,
}

impl Triple {
    pub fn new(truth: f64, prediction: f64) -> Self {
        Self {
            truth,
            prediction,
            abs_diff: (truth - prediction).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub patient: String,
    pub cells: Vec<Triple>,
}

/// Per-patient PTV metrics as (truth, prediction, |difference|) with a
/// footer of column means.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn from_eval(report: &EvalReport) -> Self {
        let threshold = report
            .samples
            .first()
            .map(|s| s.truth.v_threshold_gy)
            .unwrap_or(50.0);
        let columns = ["Dmean", "D95", "D50", &threshold_label(threshold), "CI", "HI"]
            .iter()
            .map(|m| format!("PTV {m}"))
            .collect();
        let pick = |s: &StructureMetrics| [s.d_mean, s.d95, s.d50, s.v_x, s.ci.unwrap_or(f64::NAN), s.hi.unwrap_or(f64::NAN)];
        let rows = report
            .samples
            .iter()
            .filter_map(|s| {
                let t = pick(s.truth.structure("ptv")?);
                let p = pick(s.prediction.structure("ptv")?);
                Some(ReportRow {
                    patient: s.id.clone(),
                    cells: t.iter().zip(&p).map(|(&a, &b)| Triple::new(a, b)).collect(),
                })
            })
            .collect();
        Self { columns, rows }
    }

    /// Arithmetic mean of every component over rows.
    pub fn footer(&self) -> Vec<Triple> {
        let n = self.rows.len() as f64;
        (0..self.columns.len())
            .map(|c| {
                let mean = |f: fn(&Triple) -> f64| self.rows.iter().map(|r| f(&r.cells[c])).sum::<f64>() / n;
                Triple {
                    truth: mean(|t| t.truth),
                    prediction: mean(|t| t.prediction),
                    abs_diff: mean(|t| t.abs_diff),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("patient");
        for c in &self.columns {
            write!(out, ",{c} truth,{c} prediction,{c} abs_diff").expect("string write");
        }
        out.push('\n');
        let mut line = |name: &str, cells: &[Triple]| {
            out.push_str(name);
            for t in cells {
                write!(out, ",{:.6},{:.6},{:.6}", t.truth, t.prediction, t.abs_diff).expect("string write");
            }
            out.push('\n');
        };
        for r in &self.rows {
            line(&r.patient, &r.cells);
        }
        line("mean", &self.footer());
        out
    }
}
