//! The distortion scheduler.
//!
//! [`DeepTwistHook`] plugs into [`nn::train`](crate::nn::train) and, after the
//! optimizer update of every `distortion_step`-th step (and of the final step),
//! overwrites each assigned layer with its distorted version. Nothing else about
//! training changes: no masks, no straight-through gradients, no optimizer
//! resets. Pruned weights keep receiving full-precision updates until the next
//! firing decides their fate again.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{
    alternating_quantize, greedy_quantize, numerical_rank, prune_count, prune_distort,
    prune_distort_global, CompressError, Granularity, PruningSchedule, QuantizerKind,
};
use crate::linalg::{frobenius_norm, svd, LinalgError, Matrix};
use crate::nn::{self, Dataset, MlpModel, NnError, TrainHook};

/// Number of training samples in the fixed probe batch used to measure the loss
/// change caused by each distortion.
pub const PROBE_SIZE: usize = 256;
/// Singular values at or below `RANK_TOL * σ₁` do not count toward numerical rank.
pub const RANK_TOL: f64 = 1e-10;
const MAX_BITS: usize = 16;

#[derive(Debug, Error)]
pub enum DeepTwistError {
    #[error("invalid deeptwist config: {0}")]
    Config(String),
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("layer {layer} is not in compressed form: {detail}")]
    Verify { layer: String, detail: String },
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, DeepTwistError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    Prune {
        #[serde(flatten)]
        schedule: PruningSchedule,
    },
    Quantize {
        bits: usize,
        #[serde(default)]
        quantizer: QuantizerKind,
        #[serde(default)]
        granularity: Granularity,
    },
    #[serde(rename = "lowrank")]
    LowRank { rank: usize },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Prune { .. } => "prune",
            Method::Quantize { .. } => "quantize",
            Method::LowRank { .. } => "lowrank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub layer: String,
    #[serde(flatten)]
    pub method: Method,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepTwistConfig {
    pub distortion_step: usize,
    #[serde(default)]
    pub assignments: Vec<Assignment>,
    /// Prune all prune-assigned layers against one shared magnitude ranking.
    #[serde(default = "default_true")]
    pub global_prune: bool,
    #[serde(default = "default_true")]
    pub force_final_distortion: bool,
}

impl DeepTwistConfig {
    pub fn new(distortion_step: usize, assignments: Vec<Assignment>) -> Self {
        Self {
            distortion_step,
            assignments,
            global_prune: true,
            force_final_distortion: true,
        }
    }

    /// Checks the config against `model`: positive step, every assignment names
    /// a distinct existing layer, and method parameters fit that layer.
    pub fn validate(&self, model: &MlpModel) -> Result<()> {
        if self.distortion_step == 0 {
            return Err(DeepTwistError::Config("distortion_step must be at least 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut shared_schedule: Option<PruningSchedule> = None;
        for a in &self.assignments {
            let layer = model
                .layer(&a.layer)
                .ok_or_else(|| DeepTwistError::UnknownLayer(a.layer.clone()))?;
            if !seen.insert(a.layer.as_str()) {
                return Err(DeepTwistError::Config(format!("layer {} assigned twice", a.layer)));
            }
            match &a.method {
                Method::Prune { schedule } => {
                    schedule.validate()?;
                    if self.global_prune {
                        match shared_schedule {
                            None => shared_schedule = Some(*schedule),
                            Some(s) if s == *schedule => {}
                            Some(_) => {
                                return Err(DeepTwistError::Config(
                                    "global pruning needs one schedule shared by all pruned layers".into(),
                                ))
                            }
                        }
                    }
                }
                Method::Quantize { bits, .. } => {
                    if *bits == 0 || *bits > MAX_BITS {
                        return Err(DeepTwistError::Config(format!(
                            "layer {}: bits must be in 1..={MAX_BITS}, got {bits}",
                            a.layer
                        )));
                    }
                }
                Method::LowRank { rank } => {
                    let max = layer.weight.rows().min(layer.weight.cols());
                    if *rank == 0 || *rank > max {
                        return Err(DeepTwistError::Config(format!(
                            "layer {}: rank must be in 1..={max}, got {rank}",
                            a.layer
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn fires_at(&self, step: usize, total_steps: usize) -> bool {
        step >= 1 && (step.is_multiple_of(self.distortion_step) || (self.force_final_distortion && step == total_steps))
    }
}

/// Per-layer record of one distortion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistortion {
    pub layer: String,
    pub method: String,
    /// `||W - Ŵ||_F`.
    pub distance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// Share of spectral energy beyond the target rank before truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionEvent {
    pub step: usize,
    pub layers: Vec<LayerDistortion>,
    pub probe_loss_before: Option<f64>,
    pub probe_loss_after: Option<f64>,
}

impl DistortionEvent {
    pub fn loss_delta(&self) -> Option<f64> {
        Some(self.probe_loss_after? - self.probe_loss_before?)
    }
}

fn record(layer: &str, method: &Method, before: &Matrix, after: &Matrix) -> Result<LayerDistortion> {
    Ok(LayerDistortion {
        layer: layer.to_string(),
        method: method.name().to_string(),
        distance: frobenius_norm(&before.sub(after)?),
        prune_rate: None,
        sparsity: None,
        mse: None,
        rank: None,
        tail_mass: None,
    })
}

/// Applies every assignment of `config` to `model` as of training step `step`
/// and reports what changed. Prune rates come from each schedule at `step`.
pub fn apply_distortions(config: &DeepTwistConfig, model: &mut MlpModel, step: usize) -> Result<Vec<LayerDistortion>> {
    let mut out = Vec::with_capacity(config.assignments.len());
    let weight_of = |model: &MlpModel, name: &str| -> Result<Matrix> {
        Ok(model
            .layer(name)
            .ok_or_else(|| DeepTwistError::UnknownLayer(name.to_string()))?
            .weight
            .clone())
    };

    let prunes: Vec<&Assignment> = config
        .assignments
        .iter()
        .filter(|a| matches!(a.method, Method::Prune { .. }))
        .collect();
    if config.global_prune && !prunes.is_empty() {
        let Method::Prune { schedule } = &prunes[0].method else {
            unreachable!()
        };
        let rate = schedule.rate_at(step as u64);
        let originals: Vec<Matrix> = prunes
            .iter()
            .map(|a| weight_of(model, &a.layer))
            .collect::<Result<_>>()?;
        let views: Vec<(&str, &Matrix)> = prunes
            .iter()
            .zip(&originals)
            .map(|(a, w)| (a.layer.as_str(), w))
            .collect();
        let pruned = prune_distort_global(&views, rate)?;
        for ((a, before), p) in prunes.iter().zip(&originals).zip(pruned) {
            let mut rec = record(&a.layer, &a.method, before, &p.weight)?;
            rec.prune_rate = Some(rate);
            rec.sparsity = Some(p.sparsity());
            model.set_weight(&a.layer, p.weight)?;
            out.push(rec);
        }
    }

    for a in &config.assignments {
        let before = weight_of(model, &a.layer)?;
        let (after, mut rec) = match &a.method {
            Method::Prune { .. } if config.global_prune => continue,
            Method::Prune { schedule } => {
                let rate = schedule.rate_at(step as u64);
                let after = prune_distort(&before, rate)?;
                let mut rec = record(&a.layer, &a.method, &before, &after)?;
                rec.prune_rate = Some(rate);
                rec.sparsity = Some(after.count_zeros() as f64 / after.len() as f64);
                (after, rec)
            }
            Method::Quantize {
                bits,
                quantizer,
                granularity,
            } => {
                let q = match quantizer {
                    QuantizerKind::Greedy => greedy_quantize(&before, *bits, *granularity)?,
                    QuantizerKind::Alternating => alternating_quantize(&before, *bits, *granularity)?,
                };
                let after = q.reconstruct();
                let mut rec = record(&a.layer, &a.method, &before, &after)?;
                rec.mse = Some(q.mse(&before));
                (after, rec)
            }
            Method::LowRank { rank } => {
                let dec = svd(&before)?;
                let after = dec.reconstruct_rank(*rank)?;
                let mut rec = record(&a.layer, &a.method, &before, &after)?;
                rec.rank = Some(*rank);
                rec.tail_mass = Some(crate::compress::tail_mass_ratio(&dec.sigma, *rank));
                (after, rec)
            }
        };
        rec.layer = a.layer.clone();
        model.set_weight(&a.layer, after)?;
        out.push(rec);
    }
    Ok(out)
}

type EventSink = Box<dyn FnMut(&DistortionEvent) -> std::io::Result<()>>;

/// Training hook that distorts weights on the configured cadence and records a
/// [`DistortionEvent`] per firing.
pub struct DeepTwistHook {
    config: DeepTwistConfig,
    probe: Option<(Matrix, Vec<usize>)>,
    events: Vec<DistortionEvent>,
    sink: Option<EventSink>,
}

impl std::fmt::Debug for DeepTwistHook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeepTwistHook")
            .field("config", &self.config)
            .field("events", &self.events.len())
            .finish()
    }
}

/// Validates `config` against `model` and builds the hook. Unknown layers and
/// bad parameters are rejected here rather than mid-training.
pub fn make_hook(config: DeepTwistConfig, model: &MlpModel) -> Result<DeepTwistHook> {
    config.validate(model)?;
    Ok(DeepTwistHook {
        config,
        probe: None,
        events: Vec::new(),
        sink: None,
    })
}

impl DeepTwistHook {
    /// Fixes a probe batch of [`PROBE_SIZE`] training samples chosen by `seed`;
    /// every event then records probe loss before and after the distortion.
    pub fn with_probe(mut self, data: &Dataset, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        idx.shuffle(&mut rng);
        idx.truncate(PROBE_SIZE);
        self.probe = Some(data.batch(&idx));
        self
    }

    /// Streams each event to `sink` as it happens (in firing order).
    pub fn with_sink(mut self, sink: impl FnMut(&DistortionEvent) -> std::io::Result<()> + 'static) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    pub fn config(&self) -> &DeepTwistConfig {
        &self.config
    }

    pub fn events(&self) -> &[DistortionEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<DistortionEvent> {
        self.events
    }

    fn probe_loss(&self, model: &MlpModel) -> Result<Option<f64>> {
        match &self.probe {
            Some((x, y)) => Ok(Some(nn::loss(model, x, y)?)),
            None => Ok(None),
        }
    }

    fn fire(&mut self, step: usize, model: &mut MlpModel) -> Result<()> {
        let before = self.probe_loss(model)?;
        let layers = apply_distortions(&self.config, model, step)?;
        let after = self.probe_loss(model)?;
        let event = DistortionEvent {
            step,
            layers,
            probe_loss_before: before,
            probe_loss_after: after,
        };
        if let Some(sink) = self.sink.as_mut() {
            sink(&event).map_err(|e| DeepTwistError::Config(format!("event sink: {e}")))?;
        }
        self.events.push(event);
        Ok(())
    }
}

impl TrainHook for DeepTwistHook {
    fn after_update(&mut self, step: usize, total_steps: usize, model: &mut MlpModel) -> nn::Result<()> {
        if self.config.assignments.is_empty() || !self.config.fires_at(step, total_steps) {
            return Ok(());
        }
        self.fire(step, model).map_err(|e| NnError::Hook(Box::new(e)))
    }
}

/// Outcome of checking one assigned layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub method: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<LayerCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// First failing check as an error.
    pub fn into_result(self) -> Result<()> {
        match self.checks.into_iter().find(|c| !c.passed) {
            Some(c) => Err(DeepTwistError::Verify {
                layer: c.layer,
                detail: c.detail,
            }),
            None => Ok(()),
        }
    }
}

fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Checks that every assigned layer is in its compressed form: exactly
/// `floor(p_f * N)` zeros for pruning (pooled across layers under global
/// pruning), at most `2^k` distinct values per quantization group, and numerical
/// rank at most `r` for low-rank layers.
pub fn verify_compressed_form(model: &MlpModel, config: &DeepTwistConfig) -> Result<VerifyReport> {
    config.validate(model)?;
    let mut report = VerifyReport::default();

    let prunes: Vec<(&Assignment, &PruningSchedule)> = config
        .assignments
        .iter()
        .filter_map(|a| match &a.method {
            Method::Prune { schedule } => Some((a, schedule)),
            _ => None,
        })
        .collect();
    if config.global_prune && !prunes.is_empty() {
        let p_f = prunes[0].1.final_rate;
        let weights: Vec<&Matrix> = prunes
            .iter()
            .map(|(a, _)| &model.layer(&a.layer).expect("validated").weight)
            .collect();
        let total: usize = weights.iter().map(|w| w.len()).sum();
        let zeros: usize = weights.iter().map(|w| w.count_zeros()).sum();
        let expected = prune_count(p_f, total);
        let passed = zeros == expected;
        for ((a, _), w) in prunes.iter().zip(&weights) {
            report.checks.push(LayerCheck {
                layer: a.layer.clone(),
                method: "prune".into(),
                passed,
                detail: format!(
                    "{} of {} zero in layer; {zeros} of {total} pooled, expected {expected}",
                    w.count_zeros(),
                    w.len()
                ),
            });
        }
    }

    for a in &config.assignments {
        let w = &model.layer(&a.layer).expect("validated").weight;
        let (passed, detail) = match &a.method {
            Method::Prune { .. } if config.global_prune => continue,
            Method::Prune { schedule } => {
                let expected = prune_count(schedule.final_rate, w.len());
                let zeros = w.count_zeros();
                (zeros == expected, format!("{zeros} zeros, expected {expected}"))
            }
            Method::Quantize { bits, granularity, .. } => {
                let limit = 1usize << bits;
                let worst = match granularity {
                    Granularity::WholeMatrix => distinct_count(w.as_slice()),
                    Granularity::PerRow => (0..w.rows()).map(|i| distinct_count(w.row(i))).max().unwrap_or(0),
                };
                (worst <= limit, format!("{worst} distinct values, limit {limit}"))
            }
            Method::LowRank { rank } => {
                let found = numerical_rank(w, RANK_TOL)?;
                (found <= *rank, format!("numerical rank {found}, limit {rank}"))
            }
        };
        report.checks.push(LayerCheck {
            layer: a.layer.clone(),
            method: a.method.name().into(),
            passed,
            detail,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub distances: Vec<(String, f64)>,
    pub loss_delta: Option<f64>,
}

/// Per-event distances and loss changes plus the least-squares slope of loss
/// change against step. Diagnostic only; a negative slope means distortions hurt
/// less as training proceeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub rows: Vec<TraceRow>,
    pub slope: Option<f64>,
}

pub fn distortion_trace(events: &[DistortionEvent]) -> TraceSummary {
    let rows: Vec<TraceRow> = events
        .iter()
        .map(|e| TraceRow {
            step: e.step,
            distances: e.layers.iter().map(|l| (l.layer.clone(), l.distance)).collect(),
            loss_delta: e.loss_delta(),
        })
        .collect();
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.loss_delta.map(|d| (r.step as f64, d)))
        .collect();
    TraceSummary {
        slope: least_squares_slope(&points),
        rows,
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prune(layer: &str, schedule: PruningSchedule) -> Assignment {
        Assignment {
            layer: layer.into(),
            method: Method::Prune { schedule },
        }
    }

    fn event(step: usize, delta: f64) -> DistortionEvent {
        DistortionEvent {
            step,
            layers: vec![],
            probe_loss_before: Some(1.0),
            probe_loss_after: Some(1.0 + delta),
        }
    }

    #[test]
    fn firing_steps() {
        let cfg = DeepTwistConfig::new(10, vec![]);
        let fired: Vec<usize> = (1..=100).filter(|&s| cfg.fires_at(s, 100)).collect();
        assert_eq!(fired, (1..=10).map(|i| i * 10).collect::<Vec<_>>());
        let fired: Vec<usize> = (1..=95).filter(|&s| cfg.fires_at(s, 95)).collect();
        assert_eq!(*fired.last().unwrap(), 95);
        assert_eq!(fired.len(), 10);
        let mut no_final = cfg.clone();
        no_final.force_final_distortion = false;
        assert!(!no_final.fires_at(95, 95));
    }

    #[test]
    fn config_errors_surface_at_construction() {
        let model = MlpModel::with_topology(&[4, 3, 2], 0).unwrap();
        let s = PruningSchedule::constant(0.5).unwrap();
        let err = make_hook(DeepTwistConfig::new(5, vec![prune("nope", s)]), &model).unwrap_err();
        assert!(matches!(err, DeepTwistError::UnknownLayer(_)));
        let dup = DeepTwistConfig::new(5, vec![prune("fc1", s), prune("fc1", s)]);
        assert!(make_hook(dup, &model).is_err());
        assert!(make_hook(DeepTwistConfig::new(0, vec![]), &model).is_err());
        let bad_rank = Assignment {
            layer: "fc2".into(),
            method: Method::LowRank { rank: 3 },
        };
        assert!(make_hook(DeepTwistConfig::new(5, vec![bad_rank]), &model).is_err());
        let t = PruningSchedule::constant(0.2).unwrap();
        let mixed = DeepTwistConfig::new(5, vec![prune("fc1", s), prune("fc2", t)]);
        assert!(make_hook(mixed.clone(), &model).is_err());
        let mut local = mixed;
        local.global_prune = false;
        assert!(make_hook(local, &model).is_ok());
    }

    #[test]
    fn prune_before_start_is_noop() {
        let mut model = MlpModel::with_topology(&[6, 5, 3], 1).unwrap();
        let orig = model.clone();
        let s = PruningSchedule::new(0.25, 0.9, 100, 200, 3).unwrap();
        let cfg = DeepTwistConfig::new(10, vec![prune("fc1", s), prune("fc2", s)]);
        let rec = apply_distortions(&cfg, &mut model, 50).unwrap();
        assert_eq!(model, orig);
        assert!(rec.iter().all(|r| r.distance == 0.0 && r.prune_rate == Some(0.0)));
    }

    #[test]
    fn lowrank_full_rank_is_pure() {
        let mut model = MlpModel::with_topology(&[6, 5, 3], 1).unwrap();
        let orig = model.clone();
        let cfg = DeepTwistConfig::new(
            1,
            vec![Assignment {
                layer: "fc1".into(),
                method: Method::LowRank { rank: 5 },
            }],
        );
        apply_distortions(&cfg, &mut model, 1).unwrap();
        assert!(model.layers()[0].weight.max_abs_diff(&orig.layers()[0].weight) < 1e-10);
    }

    #[test]
    fn trace_slopes() {
        let flat: Vec<_> = (1..5).map(|i| event(i * 10, 0.3)).collect();
        assert_eq!(distortion_trace(&flat).slope, Some(0.0));
        let shrinking: Vec<_> = (1..6).map(|i| event(i * 10, 1.0 / i as f64)).collect();
        assert!(distortion_trace(&shrinking).slope.unwrap() < 0.0);
        assert_eq!(distortion_trace(&flat[..1]).slope, None);
    }

    #[test]
    fn method_serde_shape() {
        let a = Assignment {
            layer: "fc1".into(),
            method: Method::Quantize {
                bits: 3,
                quantizer: QuantizerKind::Greedy,
                granularity: Granularity::WholeMatrix,
            },
        };
        let cfg = DeepTwistConfig::new(500, vec![a]);
        let s = format!("{:?}", cfg);
        assert!(s.contains("Quantize"));
    }
}
