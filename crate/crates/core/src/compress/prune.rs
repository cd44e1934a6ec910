use serde::{Deserialize, Serialize};

use super::{CompressError, Result};
use crate::linalg::Matrix;

/// Number of elements zeroed when pruning `n` weights at rate `p`: `floor(p * n)`.
///
/// The product is nudged by a relative 1e-12 before flooring so that rates such
/// as `0.95 * 266_200`, which land a hair below an integer in binary floating
/// point, still count the integer.
pub fn prune_count(p: f64, n: usize) -> usize {
    let exact = p * n as f64;
    let count = (exact + exact.abs() * 1e-12).floor() as usize;
    count.min(n)
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(CompressError::Domain {
            what: "pruning rate",
            value: p,
        });
    }
    Ok(())
}

/// Flat indices (into the concatenation of `values`) of the `count` smallest
/// magnitudes. Ties go to the lower index.
fn smallest_magnitudes(values: &[&[f64]], count: usize) -> Vec<usize> {
    let flat: Vec<f64> = values.iter().flat_map(|v| v.iter().map(|x| x.abs())).collect();
    if count == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..flat.len()).collect();
    if count < flat.len() {
        idx.select_nth_unstable_by(count - 1, |&a, &b| {
            flat[a].total_cmp(&flat[b]).then(a.cmp(&b))
        });
        idx.truncate(count);
    }
    idx
}

/// Zeroes the `floor(p * N)` smallest-magnitude elements of `w`.
pub fn prune_distort(w: &Matrix, p: f64) -> Result<Matrix> {
    check_rate(p)?;
    let mut out = w.clone();
    let count = prune_count(p, w.len());
    for i in smallest_magnitudes(&[w.as_slice()], count) {
        out.as_mut_slice()[i] = 0.0;
    }
    Ok(out)
}

/// One layer's result from [`prune_distort_global`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedLayer {
    pub name: String,
    pub weight: Matrix,
    pub zeros: usize,
    pub total: usize,
}

impl PrunedLayer {
    pub fn sparsity(&self) -> f64 {
        self.zeros as f64 / self.total as f64
    }
}

/// Prunes several layers against one shared magnitude ranking, so the overall
/// fraction zeroed is exactly `floor(p * total)` while per-layer sparsity falls
/// wherever the small weights happen to live.
pub fn prune_distort_global(layers: &[(&str, &Matrix)], p: f64) -> Result<Vec<PrunedLayer>> {
    check_rate(p)?;
    if layers.is_empty() {
        return Err(CompressError::EmptyInput);
    }
    let total: usize = layers.iter().map(|(_, m)| m.len()).sum();
    let slices: Vec<&[f64]> = layers.iter().map(|(_, m)| m.as_slice()).collect();
    let count = prune_count(p, total);

    let mut outs: Vec<Matrix> = layers.iter().map(|(_, m)| (*m).clone()).collect();
    let offsets: Vec<usize> = layers
        .iter()
        .scan(0, |acc, (_, m)| {
            let start = *acc;
            *acc += m.len();
            Some(start)
        })
        .collect();
    for flat in smallest_magnitudes(&slices, count) {
        let layer = offsets.partition_point(|&o| o <= flat) - 1;
        outs[layer].as_mut_slice()[flat - offsets[layer]] = 0.0;
    }

    Ok(layers
        .iter()
        .zip(outs)
        .map(|((name, _), weight)| PrunedLayer {
            name: name.to_string(),
            zeros: weight.count_zeros(),
            total: weight.len(),
            weight,
        })
        .collect())
}

/// Gradual pruning schedule:
/// `p_t = p_f + (p_i - p_f) * (1 - (t - t_i) / (t_f - t_i))^E` on `[t_i, t_f]`,
/// zero before `t_i` and held at `p_f` after `t_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruningSchedule {
    pub initial_rate: f64,
    pub final_rate: f64,
    pub start_step: u64,
    pub end_step: u64,
    pub exponent: u32,
}

impl PruningSchedule {
    pub fn new(
        initial_rate: f64,
        final_rate: f64,
        start_step: u64,
        end_step: u64,
        exponent: u32,
    ) -> Result<Self> {
        let s = Self {
            initial_rate,
            final_rate,
            start_step,
            end_step,
            exponent,
        };
        s.validate()?;
        Ok(s)
    }

    /// A schedule that sits at `rate` from step 0 onwards.
    pub fn constant(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self {
            initial_rate: rate,
            final_rate: rate,
            start_step: 0,
            end_step: 1,
            exponent: 1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CompressError::Schedule(msg));
        if !(0.0..=1.0).contains(&self.initial_rate) {
            return bad(format!("initial rate {} not in [0, 1]", self.initial_rate));
        }
        if !(0.0..=1.0).contains(&self.final_rate) {
            return bad(format!("final rate {} not in [0, 1]", self.final_rate));
        }
        if self.initial_rate > self.final_rate {
            return bad(format!(
                "initial rate {} exceeds final rate {}",
                self.initial_rate, self.final_rate
            ));
        }
        if self.start_step >= self.end_step {
            return bad(format!(
                "start step {} must precede end step {}",
                self.start_step, self.end_step
            ));
        }
        if self.exponent == 0 {
            return bad("exponent must be positive".into());
        }
        Ok(())
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        if step < self.start_step {
            return 0.0;
        }
        if step == self.start_step {
            return self.initial_rate;
        }
        if step >= self.end_step {
            return self.final_rate;
        }
        let progress = (step - self.start_step) as f64 / (self.end_step - self.start_step) as f64;
        let rate = self.final_rate
            + (self.initial_rate - self.final_rate) * (1.0 - progress).powi(self.exponent as i32);
        // Rounding can push the blend a few ulps outside [p_i, p_f].
        rate.clamp(self.initial_rate, self.final_rate)
    }
}
