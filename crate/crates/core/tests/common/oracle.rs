//! Reference implementations that share no code with the crate: plain nested
//! loops over row-major `Vec<f64>`.

#![allow(dead_code)]

/// `a` (m×k) times `b` (k×n).
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// `aᵀa` for row-major m×n `a`.
pub fn gram(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..m {
                s += a[t * n + i] * a[t * n + j];
            }
            g[i * n + j] = s;
        }
    }
    g
}

/// Eigenvalues of a symmetric n×n matrix by cyclic Jacobi rotations, sorted descending.
pub fn symmetric_eigenvalues(sym: &[f64], n: usize) -> Vec<f64> {
    let mut a = sym.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values of an m×n matrix as square roots of the eigenvalues of
/// `aᵀa` (negative rounding clamped to zero), descending, `min(m, n)` of them.
pub fn singular_values(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let (g, dim) = if m >= n {
        (gram(a, m, n), n)
    } else {
        let at = transpose(a, m, n);
        (gram(&at, n, m), m)
    };
    symmetric_eigenvalues(&g, dim)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect()
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// Solves the square system `a x = b` by Gaussian elimination with partial
/// pivoting. `None` when a pivot vanishes.
pub fn solve_square(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        for k in 0..n {
            m.swap(col * n + k, pivot * n + k);
        }
        x.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Some(x)
}

/// Least squares through the normal equations `aᵀa x = aᵀb` for m×n `a`
/// and one right-hand side.
pub fn normal_equations(a: &[f64], b: &[f64], m: usize, n: usize) -> Option<Vec<f64>> {
    let g = gram(a, m, n);
    let atb: Vec<f64> = (0..n).map(|j| (0..m).map(|i| a[i * n + j] * b[i]).sum()).collect();
    solve_square(&g, &atb, n)
}

fn sq_err(w: &[f64], q: &[f64]) -> f64 {
    w.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Minimum of `||w - α b||² / n` over all `2ⁿ` sign vectors and real `α`.
pub fn brute_force_binary_mse(w: &[f64]) -> f64 {
    let n = w.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let b: Vec<f64> = (0..n).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let alpha = w.iter().zip(&b).map(|(x, s)| x * s).sum::<f64>() / n as f64;
        let q: Vec<f64> = b.iter().map(|s| alpha * s).collect();
        best = best.min(sq_err(w, &q));
    }
    best / n as f64
}

/// Minimum two-plane MSE over all `(2ⁿ)²` plane pairs with least-squares
/// coefficients (a single coefficient when the planes are dependent).
pub fn brute_force_two_bit_mse(w: &[f64]) -> f64 {
    let n = w.len();
    let plane = |mask: u32| -> Vec<f64> { (0..n).map(|j| if mask >> j & 1 == 1 { 1.0 } else { -1.0 }).collect() };
    let mut best = f64::INFINITY;
    for m1 in 0u32..(1 << n) {
        for m2 in 0u32..(1 << n) {
            let (b1, b2) = (plane(m1), plane(m2));
            let mut a = vec![0.0; n * 2];
            for j in 0..n {
                a[j * 2] = b1[j];
                a[j * 2 + 1] = b2[j];
            }
            let q: Vec<f64> = match normal_equations(&a, w, n, 2) {
                Some(x) if !dependent(&b1, &b2) && x.iter().all(|v| v.is_finite()) => {
                    (0..n).map(|j| x[0] * b1[j] + x[1] * b2[j]).collect()
                }
                _ => {
                    let alpha = w.iter().zip(&b1).map(|(x, s)| x * s).sum::<f64>() / n as f64;
                    b1.iter().map(|s| alpha * s).collect()
                }
            };
            best = best.min(sq_err(w, &q));
        }
    }
    best / n as f64
}

fn dependent(b1: &[f64], b2: &[f64]) -> bool {
    b1 == b2 || b1.iter().zip(b2).all(|(x, y)| *x == -*y)
}

/// Every value `Σ ±αᵢ`.
pub fn codebook(alphas: &[f64]) -> Vec<f64> {
    let k = alphas.len();
    (0..1u32 << k)
        .map(|mask| {
            (0..k)
                .map(|i| if mask >> i & 1 == 1 { alphas[i] } else { -alphas[i] })
                .sum()
        })
        .collect()
}

/// Mean softmax cross-entropy of an MLP given as `(weights fan_in×fan_out, biases)`
/// per layer with ReLU between layers; straight loops only.
/// Hidden-layer pre-activations (before ReLU) for every sample, flattened.
pub fn hidden_preactivations(layers: &[(Vec<f64>, Vec<f64>, usize, usize)], x: &[f64], batch: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..batch {
        let mut act: Vec<f64> = x[r * layers[0].2..(r + 1) * layers[0].2].to_vec();
        for (w, b, fan_in, fan_out) in &layers[..layers.len() - 1] {
            let mut z = b.clone();
            for j in 0..*fan_out {
                for i in 0..*fan_in {
                    z[j] += act[i] * w[i * fan_out + j];
                }
            }
            out.extend_from_slice(&z);
            act = z.iter().map(|v| v.max(0.0)).collect();
        }
    }
    out
}

pub fn mlp_loss(layers: &[(Vec<f64>, Vec<f64>, usize, usize)], x: &[f64], batch: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for r in 0..batch {
        let mut act: Vec<f64> = x[r * layers[0].2..(r + 1) * layers[0].2].to_vec();
        for (li, (w, b, fan_in, fan_out)) in layers.iter().enumerate() {
            let mut z = b.clone();
            for j in 0..*fan_out {
                for i in 0..*fan_in {
                    z[j] += act[i] * w[i * fan_out + j];
                }
            }
            if li + 1 < layers.len() {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = z;
        }
        let max = act.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + act.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - act[labels[r]];
    }
    total / batch as f64
}
