//! Plot-ready CSV reports over a checkpointed layer.

use std::io::{Read, Write};

use deeptwist_core::compress::tail_mass_ratio;
use deeptwist_core::linalg::svd;
use deeptwist_core::nn::MlpModel;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    /// 1-based singular index.
    pub index: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub rows: Vec<SpectrumRow>,
    /// `Σ_{i>r} σᵢ² / Σ σᵢ²` for the requested rank.
    pub tail_mass: f64,
}

fn weight_of<'m>(model: &'m MlpModel, layer: &str) -> Result<&'m deeptwist_core::linalg::Matrix, CliError> {
    model
        .layer(layer)
        .map(|l| &l.weight)
        .ok_or_else(|| CliError::Config(format!("no layer named {layer:?}")))
}

pub fn spectrum(model: &MlpModel, layer: &str, rank: usize) -> Result<Spectrum, CliError> {
    let sigma = svd(weight_of(model, layer)?)
        .map_err(|e| CliError::Numeric(e.to_string()))?
        .sigma;
    if rank == 0 || rank > sigma.len() {
        return Err(CliError::Config(format!("rank must be in 1..={}, got {rank}", sigma.len())));
    }
    Ok(Spectrum {
        tail_mass: tail_mass_ratio(&sigma, rank),
        rows: sigma
            .into_iter()
            .enumerate()
            .map(|(i, sigma)| SpectrumRow { index: i + 1, sigma })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_center: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]` of the nonzero weights; exact zeros are
/// counted apart in `zero_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub zero_count: usize,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn nonzero_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

pub fn histogram_of(values: &[f64], bin_count: usize) -> Result<Histogram, CliError> {
    if bin_count < 2 {
        return Err(CliError::Config(format!("need at least 2 bins, got {bin_count}")));
    }
    if values.is_empty() {
        return Err(CliError::Config("empty layer".into()));
    }
    let nonzero: Vec<f64> = values.iter().copied().filter(|&v| v != 0.0).collect();
    let zero_count = values.len() - nonzero.len();
    if nonzero.is_empty() {
        return Ok(Histogram {
            zero_count,
            bins: Vec::new(),
        });
    }
    let lo = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = nonzero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bin_count as f64;
    let mut counts = vec![0usize; bin_count];
    for v in nonzero {
        let idx = if width > 0.0 {
            (((v - lo) / width) as usize).min(bin_count - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    Ok(Histogram {
        zero_count,
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                bin_center: lo + width * (i as f64 + 0.5),
                count,
            })
            .collect(),
    })
}

pub fn histogram(model: &MlpModel, layer: &str, bin_count: usize) -> Result<Histogram, CliError> {
    histogram_of(weight_of(model, layer)?.as_slice(), bin_count)
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("csv: {e}"))
}

pub fn write_spectrum(rows: &[SpectrumRow], out: impl Write) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn read_spectrum(input: impl Read) -> Result<Vec<SpectrumRow>, CliError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err)
}

const ZERO_COUNT_PREFIX: &str = "# zero_count=";

/// `# zero_count=N` comment line, then `bin_center,count` rows.
pub fn write_histogram(h: &Histogram, mut out: impl Write) -> Result<(), CliError> {
    writeln!(out, "{ZERO_COUNT_PREFIX}{}", h.zero_count).map_err(csv_err)?;
    let mut w = csv::Writer::from_writer(out);
    for b in &h.bins {
        w.serialize(b).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn read_histogram(mut input: impl Read) -> Result<Histogram, CliError> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(csv_err)?;
    let (first, rest) = text.split_once('\n').ok_or_else(|| csv_err("missing zero-count line"))?;
    let zero_count = first
        .strip_prefix(ZERO_COUNT_PREFIX)
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| csv_err(format!("bad zero-count line {first:?}")))?;
    let bins = csv::Reader::from_reader(rest.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err)?;
    Ok(Histogram { zero_count, bins })
}
