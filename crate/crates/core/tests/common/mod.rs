#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v = gaussian(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| unit(rng, dim)).collect()
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * hi)
}

/// Random orthogonal matrix via Gram-Schmidt on Gaussian columns.
pub fn orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < dim {
        let mut v = gaussian(rng, dim);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis
}

pub fn rotate(r: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    r.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Every permutation of `0..n`, by Heap's algorithm.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

pub fn brute_assignment(cost: &DMatrix<f64>) -> f64 {
    assert_eq!(cost.nrows(), cost.ncols());
    permutations(cost.nrows())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Explicit four-index sum of the squared-loss GW objective.
pub fn gw_quartic(dq: &DMatrix<f64>, dc: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let (m, n) = t.shape();
    let mut s = 0.0;
    for j in 0..m {
        for jp in 0..m {
            for l in 0..n {
                for lp in 0..n {
                    let d = dq[(j, jp)] - dc[(l, lp)];
                    s += d * d * t[(j, l)] * t[(jp, lp)];
                }
            }
        }
    }
    s
}

pub fn cosine_distance_matrix(set: &[Vec<f64>]) -> DMatrix<f64> {
    let n = set.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            return 0.0;
        }
        let (a, b) = (&set[i], &set[j]);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        1.0 - dot / (na * nb)
    })
}
