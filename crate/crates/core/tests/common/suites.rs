//! Property suites shared by the integration tests and the acceptance run.
//! Each returns `Ok(summary)` or `Err(first violation)`.

#![allow(dead_code)]

use deeptwist_core::compress::{
    alternating_quantize, binary_quantize, greedy_quantize, lowrank_distort, refine_alphas,
    shared_projection, truncate_to_factors, Granularity, QuantStatus,
};
use deeptwist_core::linalg::{matmul, matmul_nt, Matrix};
use deeptwist_core::nn::{loss_and_backward, MlpModel};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;

pub type SuiteResult = Result<String, String>;

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; the first uniform is kept away from zero.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rng: &mut impl Rng, m: usize, n: usize) -> Matrix {
    Matrix::from_fn(m, n, |_, _| gaussian(rng))
}

fn random_vector(rng: &mut impl Rng, n: usize) -> Matrix {
    let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
    let heavy = rng.gen_bool(0.3);
    Matrix::from_fn(1, n, |_, _| {
        let g = gaussian(rng);
        scale * if heavy { g * g * g } else { g }
    })
}

const SLACK: f64 = 1e-12;

/// Dominance chain alternating ≤ refined ≤ greedy on 1000 vectors, with the
/// slack scaled by the vector's mean square so tiny and huge inputs are judged alike.
pub fn quant_dominance(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..1000 {
        let n = rng.gen_range(2..=64);
        let k = rng.gen_range(1..=4);
        let w = random_vector(&mut rng, n);
        let scale = w.as_slice().iter().map(|x| x * x).sum::<f64>() / n as f64;
        let greedy = greedy_quantize(&w, k, Granularity::WholeMatrix).map_err(|e| e.to_string())?;
        let refined = refine_alphas(&greedy, &w).map_err(|e| e.to_string())?;
        let alt = alternating_quantize(&w, k, Granularity::WholeMatrix).map_err(|e| e.to_string())?;
        let (g, r, a) = (greedy.mse(&w), refined.mse(&w), alt.mse(&w));
        if r > g + SLACK * scale || a > r + SLACK * scale {
            return Err(format!("case {case} (n={n}, k={k}): alt {a:e}, refined {r:e}, greedy {g:e}"));
        }
    }
    Ok("1000 vectors: alternating <= refined <= greedy".into())
}

/// `||rᵢ||² = ||rᵢ₋₁||² - n αᵢ²` along the greedy residual chain.
pub fn greedy_recursion(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=5);
        let w = random_vector(&mut rng, n);
        let q = greedy_quantize(&w, k, Granularity::WholeMatrix).map_err(|e| e.to_string())?;
        let mut r: Vec<f64> = w.as_slice().to_vec();
        let norm0: f64 = r.iter().map(|x| x * x).sum();
        let mut prev = norm0;
        for (alpha, plane) in q.alphas[0].iter().zip(&q.bit_planes) {
            r.iter_mut().zip(plane.as_slice()).for_each(|(x, b)| *x -= alpha * b);
            let now: f64 = r.iter().map(|x| x * x).sum();
            let err = (now - (prev - n as f64 * alpha * alpha)).abs() / norm0.max(f64::MIN_POSITIVE);
            worst = worst.max(err);
            if err > 1e-10 {
                return Err(format!("case {case}: recursion off by {err:e} (relative to ||w||²)"));
            }
            prev = now;
        }
    }
    Ok(format!("1000 chains, worst relative deviation {worst:.1e}"))
}

/// One-bit quantization matches exhaustive search over all sign vectors for n ≤ 12.
pub fn binary_brute_force(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..200 {
        let n = rng.gen_range(1..=12);
        let w = random_vector(&mut rng, n);
        let got = binary_quantize(&w).mse(&w);
        let best = oracle::brute_force_binary_mse(w.as_slice());
        if (got - best).abs() > SLACK * best.max(1e-300) + 1e-300 {
            return Err(format!("case {case} (n={n}): binary mse {got:e}, exhaustive {best:e}"));
        }
    }
    Ok("200 vectors with n <= 12 match exhaustive search".into())
}

/// Two-bit alternating quantization on n ≤ 4: nearest-codebook reassignment
/// under its own coefficients reproduces it, and its MSE sits between the
/// exhaustive optimum and refined greedy.
pub fn two_bit_small(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..300 {
        let n = rng.gen_range(1..=4);
        let w = random_vector(&mut rng, n);
        let scale = w.as_slice().iter().map(|x| x * x).sum::<f64>() / n as f64;
        let alt = alternating_quantize(&w, 2, Granularity::WholeMatrix).map_err(|e| e.to_string())?;
        let refined = refine_alphas(&greedy_quantize(&w, 2, Granularity::WholeMatrix).unwrap(), &w).unwrap();
        let rec = alt.reconstruct();
        let book = oracle::codebook(&alt.alphas[0]);
        for (x, q) in w.as_slice().iter().zip(rec.as_slice()) {
            let nearest = book.iter().map(|c| (x - c).abs()).fold(f64::INFINITY, f64::min);
            if (x - q).abs() > nearest + SLACK * scale.sqrt() {
                return Err(format!("case {case}: {x} maps to {q}, a codebook value is {nearest:e} away"));
            }
        }
        let mse = alt.mse(&w);
        let best = oracle::brute_force_two_bit_mse(w.as_slice());
        let upper = if refined.status == QuantStatus::Ok {
            refined.mse(&w)
        } else {
            greedy_quantize(&w, 2, Granularity::WholeMatrix).unwrap().mse(&w)
        };
        if mse < best - SLACK * scale || mse > upper + SLACK * scale {
            return Err(format!("case {case} (n={n}): alt {mse:e}, exhaustive {best:e}, refined {upper:e}"));
        }
    }
    Ok("300 vectors with n <= 4: fixed point, exhaustive <= alternating <= refined".into())
}

fn frob(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).expect("same shape").frobenius_norm()
}

/// Truncation error against the eigen-oracle tail and against random rank-r
/// competitors (pure random factors and perturbations of the optimum).
pub fn lowrank_optimality(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let m = rng.gen_range(2..=64);
        let n = rng.gen_range(2..=64);
        let w = random_matrix(&mut rng, m, n);
        let r = rng.gen_range(1..m.min(n));
        let approx = lowrank_distort(&w, r).map_err(|e| e.to_string())?;
        let err = frob(&w, &approx);
        let sigma = oracle::singular_values(w.as_slice(), m, n);
        let tail = sigma[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
        let rel = (err - tail).abs() / tail;
        worst = worst.max(rel);
        if rel > 1e-6 {
            return Err(format!("case {case} ({m}x{n}, r={r}): error {err}, oracle tail {tail}"));
        }
        let best = truncate_to_factors(&w, r).map_err(|e| e.to_string())?;
        for trial in 0..100 {
            let candidate = if trial % 2 == 0 {
                let scale = w.frobenius_norm() / ((m * n) as f64).sqrt() / (r as f64).sqrt();
                matmul(&random_matrix(&mut rng, m, r).scale(scale), &random_matrix(&mut rng, r, n)).unwrap()
            } else {
                let eps = 1e-3 * (1 + trial) as f64 / 100.0;
                let a = best.u_trunc.add(&random_matrix(&mut rng, m, r).scale(eps)).unwrap();
                let b = best.vt_trunc.add(&random_matrix(&mut rng, r, n).scale(eps)).unwrap();
                matmul(&a, &b).unwrap()
            };
            let other = frob(&w, &candidate);
            if other < err - 1e-12 * w.frobenius_norm() {
                return Err(format!("case {case} trial {trial}: competitor {other} beats truncation {err}"));
            }
        }
    }
    Ok(format!("200 matrices, worst relative gap to oracle tail {worst:.1e}; 20000 competitors lost"))
}

/// The shared-projection residual is orthogonal to the shared row space and
/// identical inputs reduce to plain truncation.
pub fn shared_projection_properties(seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..100 {
        let n = rng.gen_range(2..=40);
        let mx = rng.gen_range(1..=40);
        let mh = rng.gen_range(1..=40);
        let r = rng.gen_range(1..=n.min(mx).min(mh));
        let w_x = random_matrix(&mut rng, mx, n);
        let w_h = random_matrix(&mut rng, mh, n);
        let sp = shared_projection(&w_x, &w_h, r).map_err(|e| e.to_string())?;
        let resid = w_x.sub(&sp.reconstruct_x()).unwrap();
        let cross = matmul_nt(&resid, &sp.vt_shared).unwrap();
        let worst = cross.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if worst > 1e-8 {
            return Err(format!("case {case}: residual not orthogonal, max |R Vᵀ| {worst:e}"));
        }
        let same = shared_projection(&w_h, &w_h, r).map_err(|e| e.to_string())?;
        let plain = lowrank_distort(&w_h, r).map_err(|e| e.to_string())?;
        let gap = same.reconstruct_x().max_abs_diff(&plain);
        if gap > 1e-9 * w_h.frobenius_norm().max(1.0) {
            return Err(format!("case {case}: w_x = w_h differs from truncation by {gap:e}"));
        }
    }
    Ok("100 pairs: residual orthogonal, identical inputs reduce to truncation".into())
}

fn oracle_layers(model: &MlpModel) -> Vec<(Vec<f64>, Vec<f64>, usize, usize)> {
    model
        .layers()
        .iter()
        .map(|l| (l.weight.as_slice().to_vec(), l.bias.clone(), l.fan_in(), l.fan_out()))
        .collect()
}

/// Central differences of an independently coded loss against backprop on
/// seeded toy networks; every weight and bias is checked. Batches with a hidden
/// pre-activation within `KINK_MARGIN` of zero are redrawn, since a central
/// difference straddling a ReLU kink does not estimate either one-sided slope.
pub fn gradient_check(seed: u64) -> SuiteResult {
    const H: f64 = 1e-5;
    const KINK_MARGIN: f64 = 1e-4;
    let topologies: [&[usize]; 4] = [&[6, 5, 4], &[6, 5, 4, 3], &[3, 7, 2], &[8, 4]];
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (t, widths) in topologies.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + t as u64);
        let model = MlpModel::with_topology(widths, seed + 100 + t as u64).map_err(|e| e.to_string())?;
        let batch = 5;
        let base = oracle_layers(&model);
        let mut draws = 0;
        let x = loop {
            let x = random_matrix(&mut rng, batch, widths[0]);
            let nearest_kink = oracle::hidden_preactivations(&base, x.as_slice(), batch)
                .into_iter()
                .fold(f64::INFINITY, |m, z| m.min(z.abs()));
            if nearest_kink >= KINK_MARGIN {
                break x;
            }
            draws += 1;
            if draws == 100 {
                return Err(format!("topology {widths:?}: no batch clear of ReLU kinks"));
            }
        };
        let classes = *widths.last().unwrap();
        let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
        let (_, grads) = loss_and_backward(&model, &x, &labels).map_err(|e| e.to_string())?;
        for (li, lg) in grads.layers.iter().enumerate() {
            let params = lg.weight.len() + lg.bias.len();
            for p in 0..params {
                let analytic = if p < lg.weight.len() {
                    lg.weight.as_slice()[p]
                } else {
                    lg.bias[p - lg.weight.len()]
                };
                let eval = |delta: f64| {
                    let mut layers = base.clone();
                    if p < lg.weight.len() {
                        layers[li].0[p] += delta;
                    } else {
                        layers[li].1[p - lg.weight.len()] += delta;
                    }
                    oracle::mlp_loss(&layers, x.as_slice(), batch, &labels)
                };
                let numeric = (eval(H) - eval(-H)) / (2.0 * H);
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-7);
                worst = worst.max(rel);
                checked += 1;
                if rel >= 1e-4 {
                    return Err(format!(
                        "topology {widths:?} layer {li} param {p}: backprop {analytic:e}, finite difference {numeric:e}"
                    ));
                }
            }
        }
    }
    Ok(format!("{checked} parameters, worst relative error {worst:.1e}"))
}

/// Pre-activation spread of the first hidden layer at initialization on
/// unit-variance inputs; Glorot-uniform gives variance `2 fan_in / (fan_in + fan_out)`.
pub fn init_preactivation_std(model: &MlpModel, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = model.input_width();
    let unit = Uniform::new(-3f64.sqrt(), 3f64.sqrt());
    let x = Matrix::from_fn(256, input, |_, _| unit.sample(&mut rng));
    let z = matmul(&x, &model.layers()[0].weight).unwrap();
    let n = z.len() as f64;
    let mean = z.as_slice().iter().sum::<f64>() / n;
    (z.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}
