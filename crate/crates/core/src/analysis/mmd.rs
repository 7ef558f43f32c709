use crate::{ArdError, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(ArdError::dim("MMD needs non-empty batches"));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|x| x.len() != d) {
        return Err(ArdError::dim("MMD batches hold vectors of different lengths"));
    }
    Ok(d)
}

/// Median pairwise Euclidean distance over the pooled samples.
pub fn median_distance(samples: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(samples.len() * samples.len().saturating_sub(1) / 2);
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            d.push(sq_dist(&samples[i], &samples[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Off-diagonal within-batch sums and the full cross sum.
struct KernelSums {
    aa: f64,
    bb: f64,
    ab: f64,
}

fn gram(x: &[Vec<f64>]) -> Vec<f64> {
    x.iter().map(|v| v.iter().map(|a| a * a).sum()).collect()
}

fn kernel_sums(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> KernelSums {
    let g = -0.5 / (bandwidth * bandwidth);
    let (na, nb) = (gram(a), gram(b));
    let k = |x: &[f64], nx: f64, y: &[f64], ny: f64| {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        (g * (nx + ny - 2.0 * dot).max(0.0)).exp()
    };
    let within = |x: &[Vec<f64>], n: &[f64]| {
        let mut s = 0.0;
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                s += k(&x[i], n[i], &x[j], n[j]);
            }
        }
        2.0 * s
    };
    let mut ab = 0.0;
    for (x, &nx) in a.iter().zip(&na) {
        for (y, &ny) in b.iter().zip(&nb) {
            ab += k(x, nx, y, ny);
        }
    }
    KernelSums { aa: within(a, &na), bb: within(b, &nb), ab }
}

fn resolve(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => Ok(h),
        Some(h) => Err(ArdError::config("bandwidth", format!("{h} must be positive"))),
        None => {
            let pooled: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
            Ok(median_distance(&pooled).max(1e-12))
        }
    }
}

/// Unbiased MMD² with the RBF kernel `exp(−‖x−y‖²/(2h²))`; `h` defaults to
/// the pooled median distance.
pub fn mmd2(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    check(a, b)?;
    if a.len() < 2 || b.len() < 2 {
        return Err(ArdError::dim("unbiased MMD needs at least two samples per batch"));
    }
    let h = resolve(a, b, bandwidth)?;
    let k = kernel_sums(a, b, h);
    let (m, n) = (a.len() as f64, b.len() as f64);
    Ok(k.aa / (m * (m - 1.0)) + k.bb / (n * (n - 1.0)) - 2.0 * k.ab / (m * n))
}

/// Biased (V-statistic) MMD²; exactly zero for identical batches.
pub fn mmd2_biased(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    check(a, b)?;
    let h = resolve(a, b, bandwidth)?;
    let k = kernel_sums(a, b, h);
    let (m, n) = (a.len() as f64, b.len() as f64);
    Ok((k.aa + m) / (m * m) + (k.bb + n) / (n * n) - 2.0 * k.ab / (m * n))
}
