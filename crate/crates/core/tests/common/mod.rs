//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the estimation code paths it
//! checks: subsets are enumerated, fixed effects are dummy columns and
//! least squares goes through an eigendecomposition.
#![allow(dead_code)]

use std::collections::HashMap;

use lapdetect::lap::{ScoredPrompt, TokenScore};
use lapdetect::panel::{PanelDataset, PanelObservation};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- LAP

/// Positions of the bottom-`k`% tokens and the resulting LAP, found by
/// checking every subset of the right size for the defining property:
/// each chosen token precedes each unchosen one in (logprob, position)
/// order.
pub fn lap_by_enumeration(tokens: &[TokenScore], k_percent: u32) -> (Vec<u32>, f64) {
    let n = tokens.len();
    assert!(n <= 16, "enumeration oracle is exponential");
    let m = ((k_percent as usize * n) / 100).max(1);
    let precedes = |a: &TokenScore, b: &TokenScore| {
        a.logprob < b.logprob || (a.logprob == b.logprob && a.position < b.position)
    };
    let mut found: Vec<u32> = Vec::new();
    let mut matches = 0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != m {
            continue;
        }
        let inside = |i: usize| mask & (1 << i) != 0;
        let ok = (0..n).filter(|&i| inside(i)).all(|i| {
            (0..n)
                .filter(|&j| !inside(j))
                .all(|j| precedes(&tokens[i], &tokens[j]))
        });
        if ok {
            matches += 1;
            found = (0..n).filter(|&i| inside(i)).map(|i| tokens[i].position).collect();
        }
    }
    assert_eq!(matches, 1, "bottom set must be unique under a strict order");
    found.sort_unstable();
    let by_pos: HashMap<u32, f64> = tokens.iter().map(|t| (t.position, t.logprob)).collect();
    let sum: f64 = found.iter().map(|p| by_pos[p]).sum();
    (found, (sum / m as f64).exp())
}

/// Smallest achievable sum of `m` logprobs, by enumeration.
pub fn min_subset_sum(tokens: &[TokenScore], m: usize) -> f64 {
    (0u32..(1 << tokens.len()))
        .filter(|mask| mask.count_ones() as usize == m)
        .map(|mask| {
            (0..tokens.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| tokens[i].logprob)
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random prompt of 1..=12 tokens. Logprobs come either from a coarse grid
/// (to force ties) or a continuous range.
pub fn random_prompt(rng: &mut ChaCha8Rng, id: usize) -> ScoredPrompt {
    let n = rng.random_range(1..=12);
    let coarse = rng.random_bool(0.4);
    let tokens = (0..n)
        .map(|i| TokenScore {
            position: i as u32 + 1,
            text: format!("t{i}"),
            logprob: if coarse {
                -(rng.random_range(0..4) as f64) * 0.5
            } else {
                -rng.random_range(0.0..12.0)
            },
        })
        .collect();
    ScoredPrompt {
        prompt_id: format!("p{id}"),
        model_id: "oracle".into(),
        tokens,
        response_text: String::new(),
        first_token_logprob: None,
    }
}

// ------------------------------------------------------ least squares

/// Minimum-norm least squares via a pseudo-inverse of `Z'Z` from its
/// symmetric eigendecomposition, followed by one step of iterative
/// refinement. Tolerates the rank-deficient dummy blocks of two-way
/// designs.
pub fn lstsq(z: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let g = z.transpose() * z;
    let eig = g.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l > 1e-10 * top { 1.0 / l } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let b = &pinv * (z.transpose() * y);
    let r = y - z * &b;
    b + &pinv * (z.transpose() * r)
}

pub fn residual(z: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    y - z * lstsq(z, y)
}

/// Dense regressor matrix with explicit group dummies appended.
pub struct DenseProblem {
    pub y: DVector<f64>,
    /// Regressors of interest, one column each.
    pub x: DMatrix<f64>,
    /// Dummy block (empty when there are no fixed effects).
    pub d: DMatrix<f64>,
}

fn dummies(groups: &[usize]) -> DMatrix<f64> {
    let g = groups.iter().max().map_or(0, |m| m + 1);
    DMatrix::from_fn(groups.len(), g, |i, j| if groups[i] == j { 1.0 } else { 0.0 })
}

impl DenseProblem {
    /// `fe` holds zero, one or two label vectors. With no fixed effects an
    /// intercept column is placed first in `x`.
    pub fn new(y: Vec<f64>, x_cols: &[Vec<f64>], fe: &[Vec<usize>]) -> Self {
        let n = y.len();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if fe.is_empty() {
            cols.push(vec![1.0; n]);
        }
        cols.extend(x_cols.iter().cloned());
        let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        let d = if fe.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            let blocks: Vec<DMatrix<f64>> = fe.iter().map(|g| dummies(g)).collect();
            let width: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut d = DMatrix::zeros(n, width);
            let mut at = 0;
            for b in blocks {
                d.view_mut((0, at), (n, b.ncols())).copy_from(&b);
                at += b.ncols();
            }
            d
        };
        DenseProblem {
            y: DVector::from_vec(y),
            x,
            d,
        }
    }

    fn full(&self) -> DMatrix<f64> {
        let (n, p, q) = (self.x.nrows(), self.x.ncols(), self.d.ncols());
        let mut z = DMatrix::zeros(n, p + q);
        z.view_mut((0, 0), (n, p)).copy_from(&self.x);
        z.view_mut((0, p), (n, q)).copy_from(&self.d);
        z
    }

    /// Coefficients on `x` from the joint dummy-variable regression.
    pub fn coefficients(&self) -> Vec<f64> {
        let b = lstsq(&self.full(), &self.y);
        b.rows(0, self.x.ncols()).iter().copied().collect()
    }

    pub fn residuals(&self) -> DVector<f64> {
        residual(&self.full(), &self.y)
    }

    /// `x` with the dummy block projected out.
    pub fn x_within(&self) -> DMatrix<f64> {
        if self.d.ncols() == 0 {
            return self.x.clone();
        }
        let mut out = self.x.clone();
        for j in 0..self.x.ncols() {
            let r = residual(&self.d, &self.x.column(j).into_owned());
            out.set_column(j, &r);
        }
        out
    }

    /// Cluster-robust covariance built from explicit per-cluster blocks:
    /// `(X'X)^-1 [sum_g X_g' u_g u_g' X_g] (X'X)^-1` times the CR1 factor,
    /// or the HC1 version when `clusters` is `None`.
    pub fn sandwich(&self, clusters: Option<&[usize]>) -> DMatrix<f64> {
        let xw = self.x_within();
        let u = self.residuals();
        let n = xw.nrows();
        let k = xw.ncols();
        let bread = (xw.transpose() * &xw).try_inverse().expect("invertible");
        let labels: Vec<usize> = match clusters {
            Some(c) => c.to_vec(),
            None => (0..n).collect(),
        };
        let mut distinct = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let mut meat = DMatrix::zeros(k, k);
        for &g in &distinct {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == g).collect();
            let xg = DMatrix::from_fn(rows.len(), k, |i, j| xw[(rows[i], j)]);
            let ug = DVector::from_iterator(rows.len(), rows.iter().map(|&i| u[i]));
            let s = xg.transpose() * ug;
            meat += &s * s.transpose();
        }
        let (nf, kf, gf) = (n as f64, k as f64, distinct.len() as f64);
        let factor = match clusters {
            Some(_) => gf / (gf - 1.0) * (nf - 1.0) / (nf - kf),
            None => nf / (nf - kf),
        };
        &bread * meat * &bread * factor
    }
}

// ------------------------------------------------------ random panels

pub struct RandomPanel {
    pub panel: PanelDataset,
    pub entity: Vec<usize>,
    pub time: Vec<usize>,
}

/// Unbalanced panel with random group sizes, singletons included.
pub fn random_panel(rng: &mut ChaCha8Rng, max_obs: usize) -> RandomPanel {
    let n = rng.random_range(30..=max_obs);
    let n_e = rng.random_range(2..=(n / 4).clamp(2, 40));
    let n_t = rng.random_range(2..=(n / 4).clamp(2, 40));
    let mut entity: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_e)).collect();
    let mut time: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_t)).collect();
    // Relabel densely in order of appearance so labels match group ids.
    let relabel = |v: &mut Vec<usize>| {
        let mut map = HashMap::new();
        for x in v.iter_mut() {
            let next = map.len();
            *x = *map.entry(*x).or_insert(next);
        }
    };
    relabel(&mut entity);
    relabel(&mut time);
    let alpha: Vec<f64> = (0..n_e).map(|_| rng.random_range(-1.0..1.0)).collect();
    let beta: Vec<f64> = (0..n_t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let observations = (0..n)
        .map(|i| {
            let llm = [-1.0, 0.0, 1.0][rng.random_range(0..3)] + 0.1 * rng.random_range(-1.0..1.0);
            let lap = rng.random_range(0.01..1.0);
            let noise: f64 = rng.random_range(-1.0..1.0);
            PanelObservation {
                obs_id: format!("o{i}"),
                entity_id: format!("e{}", entity[i]),
                time_id: format!("t{}", time[i]),
                cluster_id: format!("t{}", time[i]),
                outcome: alpha[entity[i]] + beta[time[i]] + 0.3 * llm - 0.5 * lap + 1.2 * llm * lap + noise,
                llm,
                lap,
                confidence: Some(rng.random_range(0.0..1.0)),
                first_token_prob: None,
                small: Some(rng.random_bool(0.3)),
            }
        })
        .collect();
    RandomPanel {
        panel: PanelDataset::new(observations),
        entity,
        time,
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
