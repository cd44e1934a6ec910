use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use deeptwist_core::compress::compression_ratio;
use deeptwist_core::deeptwist::{
    apply_distortions, distortion_trace, make_hook, verify_compressed_form, DeepTwistConfig, DistortionEvent,
    Method,
};
use deeptwist_core::nn::{
    load_mnist_idx, save_checkpoint, train, Dataset, Gradients, MetricRecord, MlpModel, OptimizerState, Split,
    TrainHook, TrainLog, TrainOptions,
};
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, ExperimentConfig, Mode, SweepPoint};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.dtwm";

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_data(cfg: &DataConfig) -> Result<Datasets, CliError> {
    let load = |(images, labels): (PathBuf, PathBuf), split, limit: Option<usize>| {
        let d = load_mnist_idx(&images, &labels, split)
            .map_err(|e| CliError::Config(format!("dataset {}: {e}", images.display())))?;
        Ok::<_, CliError>(match limit {
            Some(n) => d.head(n),
            None => d,
        })
    };
    Ok(Datasets {
        train: load(cfg.train_paths(), Split::Train, cfg.train_limit)?,
        test: load(cfg.test_paths(), Split::Test, cfg.test_limit)?,
    })
}

/// Per assigned layer, as found in the final model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: String,
    pub method: String,
    pub rows: usize,
    pub cols: usize,
    pub zeros: usize,
    pub sparsity: Option<f64>,
    pub bits: Option<usize>,
    pub distinct_values: Option<usize>,
    /// Quantization MSE reported by the final distortion.
    pub mse: Option<f64>,
    pub rank: Option<usize>,
    /// `mn / (r(m+n))` for low-rank layers.
    pub compression_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub mode: Mode,
    pub sweep: Option<SweepPoint>,
    pub steps: usize,
    pub final_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
    /// `None` for runs without assignments.
    pub compression: Option<Vec<LayerSummary>>,
    pub verified: Option<bool>,
    pub distortion_events: usize,
    /// Least-squares slope of probe-loss change against step over all events.
    pub trace_slope: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: MlpModel,
    pub log: TrainLog,
    pub events: Vec<DistortionEvent>,
    pub summary: Summary,
}

/// Keeps selected weight entries at fixed values: their gradients are zeroed
/// before each update and the values restored after it.
#[derive(Debug, Clone)]
pub struct FrozenWeights {
    /// Per layer index: `(flat position, value)` pairs.
    frozen: Vec<(usize, Vec<(usize, f64)>)>,
}

impl FrozenWeights {
    /// Freezes the zero entries of `layers` (the mask of a pruned model).
    pub fn zeros_of(model: &MlpModel, layers: &[&str]) -> Self {
        Self::select(model, layers, |w| w == 0.0)
    }

    /// Freezes every weight of `layers`.
    pub fn all_of(model: &MlpModel, layers: &[&str]) -> Self {
        Self::select(model, layers, |_| true)
    }

    fn select(model: &MlpModel, layers: &[&str], pick: impl Fn(f64) -> bool) -> Self {
        let frozen = layers
            .iter()
            .filter_map(|name| model.layer_index(name))
            .map(|li| {
                let w = model.layers()[li].weight.as_slice();
                let entries = w.iter().enumerate().filter(|(_, &v)| pick(v)).map(|(i, &v)| (i, v)).collect();
                (li, entries)
            })
            .collect();
        Self { frozen }
    }
}

impl TrainHook for FrozenWeights {
    fn adjust_gradients(
        &mut self,
        _step: usize,
        _model: &MlpModel,
        grads: &mut Gradients,
    ) -> deeptwist_core::nn::Result<()> {
        for (li, entries) in &self.frozen {
            let g = grads.layers[*li].weight.as_mut_slice();
            entries.iter().for_each(|&(i, _)| g[i] = 0.0);
        }
        Ok(())
    }

    fn after_update(&mut self, _step: usize, _total: usize, model: &mut MlpModel) -> deeptwist_core::nn::Result<()> {
        for (li, entries) in &self.frozen {
            let w = model.layers_mut()[*li].weight.as_mut_slice();
            entries.iter().for_each(|&(i, v)| w[i] = v);
        }
        Ok(())
    }
}

fn numeric(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

fn distinct(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn layer_summaries(model: &MlpModel, dt: &DeepTwistConfig, events: &[DistortionEvent]) -> Vec<LayerSummary> {
    dt.assignments
        .iter()
        .filter_map(|a| {
            let layer = model.layer(&a.layer)?;
            let w = &layer.weight;
            let (m, n) = w.shape();
            let zeros = w.count_zeros();
            let last = events
                .iter()
                .rev()
                .flat_map(|e| e.layers.iter())
                .find(|l| l.layer == a.layer);
            let mut s = LayerSummary {
                layer: a.layer.clone(),
                method: a.method.name().into(),
                rows: m,
                cols: n,
                zeros,
                sparsity: None,
                bits: None,
                distinct_values: None,
                mse: None,
                rank: None,
                compression_ratio: None,
            };
            match &a.method {
                Method::Prune { .. } => s.sparsity = Some(zeros as f64 / w.len() as f64),
                Method::Quantize { bits, .. } => {
                    s.bits = Some(*bits);
                    s.distinct_values = Some(distinct(w.as_slice()));
                    s.mse = last.and_then(|l| l.mse);
                }
                Method::LowRank { rank } => {
                    s.rank = Some(*rank);
                    s.compression_ratio = Some(compression_ratio(m, n, *rank));
                }
            }
            Some(s)
        })
        .collect()
}

fn event_writer(path: &Path) -> Result<impl FnMut(&DistortionEvent) -> std::io::Result<()>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BufWriter::new(file);
    Ok(move |event: &DistortionEvent| {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
        out.flush()
    })
}

/// Runs one concrete (already expanded) experiment on preloaded data. When
/// `events_path` is given, distortion events are streamed there as JSON lines.
pub fn execute(cfg: &ExperimentConfig, data: &Datasets, events_path: Option<&Path>) -> Result<RunOutcome, CliError> {
    if cfg.sweep.is_some() {
        return Err(CliError::Config("execute runs a single point; expand the sweep first".into()));
    }
    let mut model = cfg.initial_model()?;
    let mut optimizer = OptimizerState::new(cfg.optimizer.kind, cfg.optimizer.learning_rate, &model).map_err(numeric)?;
    if let Some(decay) = cfg.optimizer.decay {
        optimizer = optimizer.with_step_decay(decay).map_err(numeric)?;
    }
    let options = TrainOptions {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        eval_every: cfg.eval_every,
    };
    let dt = cfg.deeptwist.clone().filter(|d| !d.assignments.is_empty());
    let layer_names: Vec<String> = dt
        .as_ref()
        .map(|d| d.assignments.iter().map(|a| a.layer.clone()).collect())
        .unwrap_or_default();
    let names: Vec<&str> = layer_names.iter().map(String::as_str).collect();

    let (log, events) = match (cfg.mode, &dt) {
        (_, None) => {
            let log = train(&mut model, &data.train, Some(&data.test), &mut optimizer, &options, None).map_err(numeric)?;
            (log, Vec::new())
        }
        (Mode::Deeptwist, Some(dt)) => {
            let mut hook = make_hook(dt.clone(), &model)
                .map_err(|e| CliError::Config(e.to_string()))?
                .with_probe(&data.train, cfg.seed);
            if let Some(path) = events_path {
                hook = hook.with_sink(event_writer(path)?);
            }
            let log = train(&mut model, &data.train, Some(&data.test), &mut optimizer, &options, Some(&mut hook))
                .map_err(numeric)?;
            (log, hook.into_events())
        }
        (mode, Some(dt)) => {
            // One-shot distortion at the schedule's end point, then frozen fine-tuning.
            let one_shot = usize::MAX;
            let layers = apply_distortions(dt, &mut model, one_shot).map_err(numeric)?;
            let event = DistortionEvent {
                step: 0,
                layers,
                probe_loss_before: None,
                probe_loss_after: None,
            };
            if let Some(path) = events_path {
                event_writer(path)?(&event).map_err(|e| CliError::io(path, e))?;
            }
            let mut frozen = match mode {
                Mode::MaskFrozen => FrozenWeights::zeros_of(&model, &names),
                _ => FrozenWeights::all_of(&model, &names),
            };
            let log = train(&mut model, &data.train, Some(&data.test), &mut optimizer, &options, Some(&mut frozen))
                .map_err(numeric)?;
            (log, vec![event])
        }
    };

    let (compression, verified) = match &dt {
        Some(dt) => {
            let report = verify_compressed_form(&model, dt).map_err(numeric)?;
            (Some(layer_summaries(&model, dt, &events)), Some(report.passed()))
        }
        None => (None, None),
    };
    let last = log.records.last();
    let summary = Summary {
        name: cfg.name.clone(),
        mode: cfg.mode,
        sweep: None,
        steps: cfg.steps,
        final_accuracy: last.and_then(|r| r.test_accuracy),
        final_train_loss: last.map(|r| r.train_loss),
        compression,
        verified,
        distortion_events: events.len(),
        trace_slope: distortion_trace(&events).slope,
    };
    Ok(RunOutcome {
        model,
        log,
        events,
        summary,
    })
}

pub fn write_metrics(records: &[MetricRecord], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    for r in records {
        w.serialize(r).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Parses, validates, runs every sweep point and writes its artifacts.
/// Returns the summaries in sweep order.
pub fn run_experiment(config_path: &Path) -> Result<Vec<Summary>, CliError> {
    let cfg = ExperimentConfig::from_path(config_path)?;
    cfg.validate()?;
    let data = load_data(&cfg.data)?;
    let values: Vec<Option<f64>> = match &cfg.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let mut summaries = Vec::new();
    for (point, value) in cfg.expand()?.into_iter().zip(values) {
        let dir = &point.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let events_path = dir.join(EVENTS_FILE);
        // Runs without distortions still leave an (empty) event log.
        File::create(&events_path).map_err(|e| CliError::io(&events_path, e))?;
        let mut outcome = execute(&point, &data, Some(&events_path))?;
        outcome.summary.sweep = value.and_then(|v| cfg.sweep_point(v));
        write_metrics(&outcome.log.records, &dir.join(METRICS_FILE))?;
        write_json(&outcome.summary, &dir.join(SUMMARY_FILE))?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        save_checkpoint(&outcome.model, &ckpt).map_err(|e| CliError::Io(format!("{}: {e}", ckpt.display())))?;
        summaries.push(outcome.summary);
    }
    Ok(summaries)
}
