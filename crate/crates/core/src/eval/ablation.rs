use serde::{Deserialize, Serialize};

use super::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use crate::error::{ForgeError, Result};
use crate::tinylm::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Interleaved tokens placed in the schedule (rounded to whole rows).
    InterleaveTokens,
    /// Span corruption ratio.
    Eta,
    /// Speech tokens per unit.
    Expansion,
}

impl AblationAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "interleave_tokens" | "interleave-tokens" => Ok(AblationAxis::InterleaveTokens),
            "eta" => Ok(AblationAxis::Eta),
            "expansion" => Ok(AblationAxis::Expansion),
            other => Err(ForgeError::config(
                "ablation.axis",
                format!("unknown axis {other:?}; expected interleave_tokens, eta or expansion"),
            )),
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        match self {
            AblationAxis::InterleaveTokens => {
                if value < 0.0 {
                    return Err(ForgeError::config("ablation.grid", "token counts must be >= 0"));
                }
                c.interleave_rows = (value / c.seq_len as f64).round() as usize;
            }
            AblationAxis::Eta => c.interleave.eta = value,
            AblationAxis::Expansion => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(ForgeError::config("ablation.grid", "expansion factors must be whole numbers >= 1"));
                }
                c.world.expansion.factor = value as u32;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub value: f64,
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ExperimentReport>,
}

/// Seed-averaged results for one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub value: f64,
    pub runs: usize,
    pub failed: usize,
    pub cross_modal: f64,
    pub ts: f64,
    pub st: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub points: Vec<AblationPoint>,
    pub summary: Vec<AblationSummary>,
}

impl AblationReport {
    /// `value,cross_modal,ts,st,s` lines for plotting.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("value,cross_modal,ts,st,s,runs,failed\n");
        for s in &self.summary {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{},{}\n",
                s.value, s.cross_modal, s.ts, s.st, s.s, s.runs, s.failed
            ));
        }
        out
    }

    pub fn summary_for(&self, value: f64) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.value == value)
    }
}

/// Trains one model per grid value and seed with everything else held
/// fixed. Runs that error or diverge are recorded as failed; the sweep
/// continues.
pub fn run_ablation(
    axis: AblationAxis,
    grid: &[f64],
    seeds: &[u64],
    base: &ExperimentConfig,
    mut on_point: impl FnMut(&AblationPoint),
) -> Result<AblationReport> {
    let run_report = |c: &ExperimentConfig| match c.lm.precision {
        Precision::F32 => run_experiment::<f32>(c, |_| {}).map(|(_, r)| r),
        Precision::F64 => run_experiment::<f64>(c, |_| {}).map(|(_, r)| r),
    };
    if grid.is_empty() {
        return Err(ForgeError::config("ablation.grid", "must be non-empty"));
    }
    if seeds.is_empty() {
        return Err(ForgeError::config("ablation.seeds", "must be non-empty"));
    }
    let mut points = Vec::new();
    for &value in grid {
        for &seed in seeds {
            let outcome = axis
                .apply(base, value)
                .and_then(|c| run_report(&c.with_seed(seed)));
            let point = match outcome {
                Ok(report) => match report.diverged_at {
                    Some(step) => AblationPoint {
                        value,
                        seed,
                        ok: false,
                        error: Some(format!("diverged at step {step}")),
                        report: Some(report),
                    },
                    None => AblationPoint {
                        value,
                        seed,
                        ok: true,
                        error: None,
                        report: Some(report),
                    },
                },
                Err(e) => AblationPoint {
                    value,
                    seed,
                    ok: false,
                    error: Some(e.to_string()),
                    report: None,
                },
            };
            on_point(&point);
            points.push(point);
        }
    }
    let summary = grid.iter().map(|&v| summarize(v, &points)).collect();
    Ok(AblationReport {
        axis,
        grid: grid.to_vec(),
        seeds: seeds.to_vec(),
        points,
        summary,
    })
}

fn summarize(value: f64, points: &[AblationPoint]) -> AblationSummary {
    let at: Vec<&AblationPoint> = points.iter().filter(|p| p.value == value).collect();
    let good: Vec<&ExperimentReport> = at.iter().filter(|p| p.ok).filter_map(|p| p.report.as_ref()).collect();
    let mean = |f: &dyn Fn(&ExperimentReport) -> f64| {
        if good.is_empty() {
            f64::NAN
        } else {
            good.iter().map(|r| f(r)).sum::<f64>() / good.len() as f64
        }
    };
    let acc = |code: &'static str| move |r: &ExperimentReport| r.continuation.get(code).map_or(f64::NAN, |a| a.accuracy);
    AblationSummary {
        value,
        runs: at.len(),
        failed: at.len() - good.len(),
        cross_modal: mean(&|r| r.cross_modal),
        ts: mean(&acc("TS")),
        st: mean(&acc("ST")),
        s: mean(&acc("S")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::WorldConfig;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            world: WorldConfig {
                n_entities: 4,
                n_relations: 2,
                n_values: 3,
                n_fillers: 4,
                facts_per_doc: 4,
                ..Default::default()
            },
            interleave_rows: 8,
            speech_sentences: 4,
            asr_pairs: 4,
            tts_pairs: 4,
            seq_len: 32,
            text_passes: 4,
            budget_sequences: None,
            qa_max_gen: 2,
            ..Default::default()
        };
        c.lm.max_seq_len = 32;
        c.lm.dim = 8;
        c.lm.n_heads = 1;
        c.lm.head_dim = 8;
        c.lm.ffn_dim = 8;
        c.train.batch_size = 2;
        c
    }

    #[test]
    fn single_point_grid_gives_one_row() {
        let r = run_ablation(AblationAxis::Eta, &[0.3], &[1], &tiny(), |_| {}).unwrap();
        assert_eq!(r.summary.len(), 1);
        assert_eq!(r.points.len(), 1);
        assert!(r.points[0].ok);
        assert_eq!(r.plot_csv().lines().count(), 2);
    }

    #[test]
    fn bad_point_is_recorded_and_sweep_continues() {
        let r = run_ablation(AblationAxis::Eta, &[1.5, 0.3], &[1], &tiny(), |_| {}).unwrap();
        assert!(!r.points[0].ok);
        assert!(r.points[0].error.as_deref().unwrap().contains("eta"));
        assert!(r.points[1].ok);
        assert_eq!(r.summary[0].failed, 1);
    }

    #[test]
    fn diverged_run_is_failed() {
        let mut base = tiny();
        base.train.peak_lr = 1e30;
        base.train.final_lr = 1e30;
        base.train.grad_clip = 0.0;
        base.budget_sequences = Some(12);
        let r = run_ablation(AblationAxis::Expansion, &[1.0], &[1], &base, |_| {}).unwrap();
        assert!(!r.points[0].ok, "{:?}", r.points[0].error);
    }

    #[test]
    fn axis_values_land_in_config() {
        let base = tiny();
        assert_eq!(AblationAxis::InterleaveTokens.apply(&base, 640.0).unwrap().interleave_rows, 20);
        assert_eq!(AblationAxis::Expansion.apply(&base, 4.0).unwrap().world.expansion.factor, 4);
        assert!(AblationAxis::Expansion.apply(&base, 2.5).is_err());
        assert_eq!(AblationAxis::Eta.apply(&base, 0.5).unwrap().interleave.eta, 0.5);
    }
}
