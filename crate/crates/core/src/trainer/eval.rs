use std::fmt::Write as _;

use super::TrainError;
use crate::arch::{Generator, ModelInput, ParamSet};
use crate::dosimetry::{evaluate_structures, percent_errors, MetricReport, StructureMetrics, Volume};
use crate::phantom::Sample;
use crate::tensor::Tensor;

/// PTV metrics of the cohort percent-error table, in column order.
pub const APE_METRICS: [&str; 3] = ["D95", "D50", "Dmean"];
const PTV: &str = "ptv";

fn metric(s: &StructureMetrics, name: &str) -> f64 {
    match name {
        "D95" => s.d95,
        "D50" => s.d50,
        "Dmean" => s.d_mean,
        other => unreachable!("unknown APE metric {other}"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleEval {
    pub id: String,
    pub truth: MetricReport,
    pub prediction: MetricReport,
}

/// Cohort percent error of one metric: mean and population standard
/// deviation of the per-sample terms.
#[derive(Clone, Debug, PartialEq)]
pub struct ApeStat {
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
    pub per_sample: Vec<f64>,
}

/// One row per metric of [`APE_METRICS`].
#[derive(Clone, Debug, PartialEq)]
pub struct ApeTable {
    pub stats: Vec<ApeStat>,
}

impl ApeTable {
    pub fn from_samples(samples: &[SampleEval]) -> Result<Self, TrainError> {
        let ptv = |r: &MetricReport, id: &str| {
            r.structure(PTV).cloned().ok_or_else(|| TrainError::Config(format!("sample `{id}` has no `{PTV}` structure")))
        };
        let pairs = samples
            .iter()
            .map(|s| Ok((ptv(&s.truth, &s.id)?, ptv(&s.prediction, &s.id)?)))
            .collect::<Result<Vec<_>, TrainError>>()?;
        let stats = APE_METRICS
            .iter()
            .map(|&name| {
                let truth: Vec<f64> = pairs.iter().map(|(t, _)| metric(t, name)).collect();
                let pred: Vec<f64> = pairs.iter().map(|(_, p)| metric(p, name)).collect();
                let per_sample = percent_errors(&truth, &pred)?;
                let n = per_sample.len() as f64;
                let mean = per_sample.iter().sum::<f64>() / n;
                let std = (per_sample.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
                Ok(ApeStat {
                    metric: name,
                    mean,
                    std,
                    per_sample,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(Self { stats })
    }

    pub fn get(&self, metric: &str) -> Option<&ApeStat> {
        self.stats.iter().find(|s| s.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean_percent,std_percent\n");
        for s in &self.stats {
            writeln!(out, "{},{:.6},{:.6}", s.metric, s.mean, s.std).expect("string write");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: Vec<SampleEval>,
    pub ape: ApeTable,
}

/// Percent-error tables of several training arms side by side.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<(String, ApeTable)>,
}

impl AblationReport {
    /// `method,D95,D50,Dmean` with `mean ± std` cells, one row per arm.
    pub fn render(&self) -> String {
        let mut out = format!("method,{}\n", APE_METRICS.join(","));
        for (method, table) in &self.rows {
            out.push_str(method);
            for s in &table.stats {
                write!(out, ",{:.3} ± {:.3}", s.mean, s.std).expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Long form `method,metric,mean_percent,std_percent`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,mean_percent,std_percent\n");
        for (method, table) in &self.rows {
            for s in &table.stats {
                writeln!(out, "{method},{},{:.6},{:.6}", s.metric, s.mean, s.std).expect("string write");
            }
        }
        out
    }
}

/// Predicted dose in Gy for every slice of `sample`, negatives clamped to 0.
pub fn predict_volume(generator: &Generator, params: &ParamSet<f32>, sample: &Sample) -> Result<Volume, TrainError> {
    let slices: Vec<Tensor<f32>> = (0..sample.depth()).map(|z| sample.slice_input(z)).collect();
    let input = ModelInput::new(Tensor::stack(&slices)?)?;
    let out = generator.predict(params, &input)?;
    let scale = sample.prescription_gy as f32;
    let values = out.data().iter().map(|v| (v * scale).max(0.0)).collect();
    Ok(Volume::new(sample.dose.shape(), sample.dose.spacing_mm(), values)?)
}

/// Metrics of each prediction against its sample's ground truth.
pub fn evaluate_predictions(samples: &[Sample], predictions: &[Volume], v_threshold_gy: f64) -> Result<EvalReport, TrainError> {
    if samples.len() != predictions.len() {
        return Err(TrainError::Config(format!(
            "{} samples but {} predictions",
            samples.len(),
            predictions.len()
        )));
    }
    if samples.is_empty() {
        return Err(TrainError::Config("nothing to evaluate".into()));
    }
    let evals = samples
        .iter()
        .zip(predictions)
        .map(|(s, pred)| {
            let truth = evaluate_structures(&s.dose, &s.masks, PTV, s.prescription_gy, v_threshold_gy)?;
            let prediction = evaluate_structures(&pred.clamp_non_negative(), &s.masks, PTV, s.prescription_gy, v_threshold_gy)?;
            Ok(SampleEval {
                id: s.id.clone(),
                truth,
                prediction,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let ape = ApeTable::from_samples(&evals)?;
    Ok(EvalReport { samples: evals, ape })
}

pub fn evaluate(generator: &Generator, params: &ParamSet<f32>, samples: &[Sample], v_threshold_gy: f64) -> Result<EvalReport, TrainError> {
    let predictions = samples
        .iter()
        .map(|s| predict_volume(generator, params, s))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_predictions(samples, &predictions, v_threshold_gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, PhantomSpec};

    fn cohort() -> Vec<Sample> {
        (0..3)
            .map(|i| Sample::from_phantom(format!("s{i}"), generate(&PhantomSpec::jittered(i, [4, 32, 32]).unwrap()).unwrap()))
            .collect()
    }

    #[test]
    fn truth_against_itself_is_perfect() {
        let samples = cohort();
        let preds: Vec<Volume> = samples.iter().map(|s| s.dose.clone()).collect();
        let r = evaluate_predictions(&samples, &preds, 50.0).unwrap();
        for s in &r.ape.stats {
            assert_eq!((s.mean, s.std), (0.0, 0.0));
        }
        for s in &r.samples {
            let t = s.truth.structure("ptv").unwrap();
            assert_eq!(t.ci, Some(1.0));
            assert_eq!(s.prediction.structure("ptv").unwrap().hi, t.hi);
        }
        assert_eq!(r.ape.to_csv().lines().count(), 4);
    }

    #[test]
    fn scaled_prediction_gives_known_error() {
        let samples = cohort();
        let preds: Vec<Volume> = samples.iter().map(|s| s.dose.scaled(0.8)).collect();
        let r = evaluate_predictions(&samples, &preds, 50.0).unwrap();
        for s in &r.ape.stats {
            // |t - 0.8t| / 0.8t = 25 %.
            assert!((s.mean - 25.0).abs() < 1e-4, "{}: {}", s.metric, s.mean);
        }
    }

    #[test]
    fn ablation_layout() {
        let samples = cohort();
        let preds: Vec<Volume> = samples.iter().map(|s| s.dose.clone()).collect();
        let t = evaluate_predictions(&samples, &preds, 50.0).unwrap().ape;
        let rep = AblationReport {
            rows: vec![("unet".into(), t.clone()), ("full".into(), t)],
        };
        let text = rep.render();
        assert_eq!(text.lines().next(), Some("method,D95,D50,Dmean"));
        assert!(text.contains("full,0.000 ± 0.000,0.000 ± 0.000,0.000 ± 0.000"));
        assert_eq!(rep.to_csv().lines().count(), 7);
    }
}
