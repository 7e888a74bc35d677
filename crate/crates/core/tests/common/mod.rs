//! Independent dense-algebra oracles and random problem generators shared by
//! the integration tests. Everything here is written with plain row-major
//! `Vec<Vec<f64>>` and normal equations, deliberately unlike the library.

#![allow(dead_code)]

use clusteriv_core::rng::substream;
use clusteriv_core::{ClusterIndex, Dataset, Matrix};
use rand::Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn from_cols(cols: &[&[f64]]) -> Dense {
    let n = cols[0].len();
    (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let (r, c) = (a.len(), a[0].len());
    (0..c).map(|j| (0..r).map(|i| a[i][j]).collect()).collect()
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let (r, k, c) = (a.len(), b.len(), b[0].len());
    assert_eq!(a[0].len(), k);
    (0..r).map(|i| (0..c).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
}

pub fn mul_vec(a: &Dense, v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular oracle matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub struct DenseTsls {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub cov: Dense,
}

/// `2sls(u ~ V | W)` by textbook formulas with an explicit `N x N`
/// block-diagonal `Ω̂ = diag_g(r_g r_gᵀ)`.
pub fn dense_tsls(u: &[f64], v: &Dense, w: &Dense, groups: &[usize]) -> DenseTsls {
    let wt = transpose(w);
    let pw = mul(&mul(w, &inverse(&mul(&wt, w))), &wt);
    let vhat = mul(&pw, v);
    let vht = transpose(&vhat);
    let bread = inverse(&mul(&vht, v));
    let coefficients = mul_vec(&bread, &mul_vec(&vht, u));
    let fitted = mul_vec(v, &coefficients);
    let residuals: Vec<f64> = u.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let n = u.len();
    let omega: Dense = (0..n)
        .map(|i| (0..n).map(|j| if groups[i] == groups[j] { residuals[i] * residuals[j] } else { 0.0 }).collect())
        .collect();
    let meat = mul(&mul(&vht, &omega), &vhat);
    let cov = mul(&mul(&bread, &meat), &transpose(&bread));
    DenseTsls { coefficients, residuals, cov }
}

pub fn dummies(groups: &[usize], g: usize) -> Vec<Vec<f64>> {
    (0..g).map(|k| groups.iter().map(|&c| if c == k { 1.0 } else { 0.0 }).collect()).collect()
}

pub fn to_matrix(cols: &[&[f64]]) -> Matrix {
    Matrix::from_columns(cols[0].len(), cols).unwrap()
}

/// `|a − b| <= tol · max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

pub fn all_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y, tol))
}

/// A random clustered problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sizes: Vec<usize>,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub z: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

impl Instance {
    pub fn groups(&self) -> Vec<usize> {
        self.sizes.iter().enumerate().flat_map(|(g, &s)| std::iter::repeat_n(g, s)).collect()
    }

    pub fn index(&self) -> ClusterIndex {
        ClusterIndex::from_sizes(&self.sizes).unwrap()
    }

    pub fn dataset(&self) -> Dataset {
        let data = Dataset::new(self.y.clone(), self.d.clone(), self.z.clone(), self.index()).unwrap();
        if self.x.is_empty() {
            return data;
        }
        let cols: Vec<&[f64]> = self.x.iter().map(Vec::as_slice).collect();
        let names = (0..cols.len()).map(|j| format!("x{j}")).collect();
        data.with_covariates(to_matrix(&cols), names).unwrap()
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// `G ∈ [3, 10]`, `n_g ∈ [1, 6]`, up to `max_cov` continuous covariates. The first
/// two clusters always hold units with `(Z, D) = (0, 0)` and `(1, 1)`, so the
/// instrument and the treatment vary within at least two clusters (with a
/// single such cluster the fixed-effects score is identically zero).
pub fn random_instance(seed: u64, b: u64, max_cov: usize) -> Instance {
    let rng = &mut substream(seed, b);
    let g = rng.random_range(3..=10);
    let mut sizes: Vec<usize> = (0..g).map(|_| rng.random_range(1..=6)).collect();
    sizes[0] = sizes[0].max(2);
    sizes[1] = sizes[1].max(2);
    let n: usize = sizes.iter().sum();
    let k = rng.random_range(0..=max_cov);
    let mut z: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
    let mut d: Vec<f64> =
        z.iter().map(|&zi| if rng.random_bool(0.7) { zi } else { f64::from(rng.random_bool(0.5)) }).collect();
    let second = sizes[0];
    for (lo, hi) in [(0, 1), (second, second + 1)] {
        z[lo] = 0.0;
        d[lo] = 0.0;
        z[hi] = 1.0;
        d[hi] = 1.0;
    }
    let cluster_effect: Vec<f64> = (0..g).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut y = Vec::with_capacity(n);
    let mut i = 0;
    for (cg, &s) in sizes.iter().enumerate() {
        for _ in 0..s {
            let xs: f64 = x.iter().map(|c| 0.5 * c[i]).sum();
            y.push(cluster_effect[cg] + 1.5 * d[i] + xs + rng.random_range(-1.0..1.0));
            i += 1;
        }
    }
    Instance { sizes, y, d, z, x }
}
