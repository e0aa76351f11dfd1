//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Jensen–Shannon divergence in bits via natural logs.
pub fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    (kl(p, &m) + kl(q, &m)) / (2.0 * std::f64::consts::LN_2)
}

/// Uniform draw from the probability simplex (Dirichlet with all alphas = alpha).
pub fn dirichlet(rng: &mut impl Rng, k: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).unwrap();
    loop {
        let xs: Vec<f64> = (0..k).map(|_| g.sample(rng)).collect();
        let s: f64 = xs.iter().sum();
        if s > 0.0 {
            let mut p: Vec<f64> = xs.iter().map(|x| x / s).collect();
            // Force an exact sum of 1 so validation never trips on rounding.
            let rest: f64 = p[1..].iter().sum();
            p[0] = (1.0 - rest).max(0.0);
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() <= 1e-12 {
                return p;
            }
        }
    }
}

/// Z-scores each column with the population standard deviation; constant
/// columns keep scale 1.
pub fn standardize(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let d = points[0].len();
    let mut out = points.to_vec();
    for j in 0..d {
        let mean = points.iter().map(|p| p[j]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for (o, p) in out.iter_mut().zip(points) {
            o[j] = (p[j] - mean) / sd;
        }
    }
    out
}

fn partition_wss(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for j in 0..d {
            sums[l][j] += p[j];
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            (0..d)
                .map(|j| (p[j] - sums[l][j] / counts[l] as f64).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Minimum within-cluster sum of squares over every partition of `points`
/// into exactly `k` non-empty blocks, enumerated as restricted growth strings.
pub fn brute_force_wss(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    assert!(k >= 1 && k <= n);
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    fn rec(i: usize, used: usize, k: usize, labels: &mut Vec<usize>, points: &[Vec<f64>], best: &mut f64) {
        let n = labels.len();
        if n - i < k - used {
            return;
        }
        if i == n {
            if used == k {
                *best = best.min(partition_wss(points, labels, k));
            }
            return;
        }
        for l in 0..used {
            labels[i] = l;
            rec(i + 1, used, k, labels, points, best);
        }
        if used < k {
            labels[i] = used;
            rec(i + 1, used + 1, k, labels, points, best);
        }
    }
    rec(0, 0, k, &mut labels, points, &mut best);
    best
}

/// Largest-remainder apportionment in exact integer arithmetic for weights
/// given as integer counts.
pub fn hamilton_oracle(counts: &[u64], n: u64) -> Vec<u64> {
    let total: u64 = counts.iter().sum();
    let mut seats: Vec<u64> = counts.iter().map(|&c| n * c / total).collect();
    let mut order: Vec<(u64, usize)> = counts.iter().enumerate().map(|(i, &c)| ((n * c) % total, i)).collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = n - seats.iter().sum::<u64>();
    for &(_, i) in order.iter().take(short as usize) {
        seats[i] += 1;
    }
    seats
}

/// Ranks starting at 1; tied values share their mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on tie-averaged ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues descending and matching unit eigenvectors.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (mrp, mrq) = (m[r][p], m[r][q]);
                    m[r][p] = c * mrp - s * mrq;
                    m[r][q] = s * mrp + c * mrq;
                }
                for r in 0..n {
                    let (mpr, mqr) = (m[p][r], m[q][r]);
                    m[p][r] = c * mpr - s * mqr;
                    m[q][r] = s * mpr + c * mqr;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y][y].total_cmp(&m[x][x]));
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}
