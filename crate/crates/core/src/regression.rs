//! Linear models with up to two absorbed fixed-effect dimensions and
//! cluster-robust standard errors.
//!
//! Fixed effects are swept out by alternating projections; the remaining
//! slope coefficients come from the normal equations. [`Design`] holds the
//! numeric form of a spec applied to a panel so that resampling loops can
//! re-fit without touching string data.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::panel::{Column, PanelDataset, PanelObservation};

/// Convergence threshold on the largest group mean, relative to the
/// column's largest absolute value.
pub const DEMEAN_TOLERANCE: f64 = 1e-12;
pub const DEMEAN_MAX_SWEEPS: usize = 10_000;
/// A Cholesky pivot at or below this fraction of the column's raw sum of
/// squares marks the column as linearly dependent on earlier ones.
pub const COLLINEARITY_TOLERANCE: f64 = 1e-10;

/// A product of panel columns. The empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Term(pub Vec<Column>);

impl Term {
    pub fn single(c: Column) -> Self {
        Term(vec![c])
    }

    pub fn product(cs: &[Column]) -> Self {
        Term(cs.to_vec())
    }

    pub fn intercept() -> Self {
        Term(Vec::new())
    }

    pub fn is_intercept(&self) -> bool {
        self.0.is_empty()
    }

    pub fn name(&self) -> String {
        if self.0.is_empty() {
            "intercept".to_string()
        } else {
            self.0.iter().map(|c| c.name()).collect::<Vec<_>>().join(":")
        }
    }

    /// Value on one row; `None` when any factor is missing.
    pub fn eval(&self, obs: &PanelObservation) -> Option<f64> {
        self.0.iter().try_fold(1.0, |acc, &c| obs.get(c).map(|v| acc * v))
    }

    fn canonical(&self) -> Vec<Column> {
        let mut v = self.0.clone();
        v.sort();
        v
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses `llm`, `llm:lap` and so on; `intercept` is the empty product.
impl std::str::FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "intercept" {
            return Ok(Term::intercept());
        }
        s.split(':').map(|c| c.trim().parse()).collect::<Result<Vec<Column>>>().map(Term)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeDim {
    Entity,
    Time,
}

/// Grouping used for cluster-robust errors. `Cluster` reads the panel's
/// `cluster_id` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterDim {
    Entity,
    Time,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub outcome: Column,
    pub terms: Vec<Term>,
    #[serde(default)]
    pub fe: Vec<FeDim>,
    #[serde(default)]
    pub cluster: Option<ClusterDim>,
}

impl RegressionSpec {
    pub fn new(outcome: Column, terms: Vec<Term>) -> Self {
        RegressionSpec {
            outcome,
            terms,
            fe: Vec::new(),
            cluster: None,
        }
    }

    pub fn with_fe(mut self, fe: &[FeDim]) -> Self {
        self.fe = fe.to_vec();
        self
    }

    pub fn with_cluster(mut self, cluster: ClusterDim) -> Self {
        self.cluster = Some(cluster);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidSpec("no regressors".into()));
        }
        let mut seen = Vec::new();
        for t in &self.terms {
            if t.is_intercept() {
                return Err(Error::InvalidSpec("empty term".into()));
            }
            let c = t.canonical();
            if seen.contains(&c) {
                return Err(Error::InvalidSpec(format!("duplicate term `{t}`")));
            }
            seen.push(c);
        }
        if self.fe.len() > 2 || (self.fe.len() == 2 && self.fe[0] == self.fe[1]) {
            return Err(Error::InvalidSpec("fixed effects must be distinct dimensions".into()));
        }
        Ok(())
    }

    /// Terms as estimated, with the intercept first when no fixed effects
    /// absorb it.
    pub fn design_terms(&self) -> Vec<Term> {
        let mut terms = Vec::with_capacity(self.terms.len() + 1);
        if self.fe.is_empty() {
            terms.push(Term::intercept());
        }
        terms.extend(self.terms.iter().cloned());
        terms
    }

    pub fn term_index(&self, term: &Term) -> Option<usize> {
        let c = term.canonical();
        self.design_terms().iter().position(|t| t.canonical() == c)
    }
}

/// Dense integer group labels for one categorical dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Groups {
    pub ids: Vec<u32>,
    pub count: usize,
}

impl Groups {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Self {
        let mut index: HashMap<&str, u32> = HashMap::new();
        let ids = labels
            .into_iter()
            .map(|l| {
                let next = index.len() as u32;
                *index.entry(l).or_insert(next)
            })
            .collect();
        Groups {
            ids,
            count: index.len(),
        }
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Groups {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            count: self.count,
        }
    }

    /// Number of groups with at least one member.
    pub fn occupied(&self) -> usize {
        let mut seen = vec![false; self.count];
        self.ids.iter().for_each(|&g| seen[g as usize] = true);
        seen.into_iter().filter(|&s| s).count()
    }
}

/// Numeric form of a spec evaluated on a panel: outcome, regressor columns
/// and group labels, restricted to rows where every term is present.
#[derive(Debug, Clone)]
pub struct Design {
    pub terms: Vec<Term>,
    pub y: Vec<f64>,
    /// Column-major regressors, one vector per term.
    pub x: Vec<Vec<f64>>,
    pub fe: Vec<Groups>,
    pub cluster: Option<Groups>,
}

impl Design {
    pub fn from_panel(spec: &RegressionSpec, panel: &PanelDataset) -> Result<Self> {
        spec.validate()?;
        let terms = spec.design_terms();
        let rows: Vec<&PanelObservation> = panel
            .observations
            .iter()
            .filter(|o| o.get(spec.outcome).is_some() && terms.iter().all(|t| t.eval(o).is_some()))
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let y = rows.iter().map(|o| o.get(spec.outcome).unwrap()).collect();
        let x = terms
            .iter()
            .map(|t| rows.iter().map(|o| t.eval(o).unwrap()).collect())
            .collect();
        let fe = spec
            .fe
            .iter()
            .map(|d| match d {
                FeDim::Entity => Groups::from_labels(rows.iter().map(|o| o.entity_id.as_str())),
                FeDim::Time => Groups::from_labels(rows.iter().map(|o| o.time_id.as_str())),
            })
            .collect();
        let cluster = spec.cluster.map(|c| {
            Groups::from_labels(rows.iter().map(|o| match c {
                ClusterDim::Entity => o.entity_id.as_str(),
                ClusterDim::Time => o.time_id.as_str(),
                ClusterDim::Cluster => o.cluster_id.as_str(),
            }))
        });
        Ok(Design {
            terms,
            y,
            x,
            fe,
            cluster,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Rows selected by index, with repeats allowed. Group labels keep their
    /// original ids, so duplicated rows stay in their original groups.
    pub fn subset(&self, rows: &[usize]) -> Design {
        let pick = |v: &Vec<f64>| rows.iter().map(|&r| v[r]).collect();
        Design {
            terms: self.terms.clone(),
            y: pick(&self.y),
            x: self.x.iter().map(pick).collect(),
            fe: self.fe.iter().map(|g| g.subset(rows)).collect(),
            cluster: self.cluster.as_ref().map(|g| g.subset(rows)),
        }
    }
}

/// Sweeps group means out of `col` for each dimension in turn until the
/// largest remaining group mean falls below tolerance. Returns the number
/// of sweeps, including the final confirming one.
pub fn demean_column(col: &mut [f64], dims: &[Groups]) -> Result<usize> {
    if dims.is_empty() {
        return Ok(0);
    }
    let scale = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = DEMEAN_TOLERANCE * scale;
    let mut sums: Vec<Vec<f64>> = dims.iter().map(|g| vec![0.0; g.count]).collect();
    let counts: Vec<Vec<f64>> = dims
        .iter()
        .map(|g| {
            let mut c = vec![0.0; g.count];
            g.ids.iter().for_each(|&i| c[i as usize] += 1.0);
            c
        })
        .collect();
    let mut achieved = f64::INFINITY;
    for sweep in 1..=DEMEAN_MAX_SWEEPS {
        let mut largest = 0.0f64;
        for (d, g) in dims.iter().enumerate() {
            let s = &mut sums[d];
            s.iter_mut().for_each(|v| *v = 0.0);
            for (v, &i) in col.iter().zip(&g.ids) {
                s[i as usize] += v;
            }
            for (si, &ci) in s.iter_mut().zip(&counts[d]) {
                if ci > 0.0 {
                    *si /= ci;
                    largest = largest.max(si.abs());
                }
            }
            for (v, &i) in col.iter_mut().zip(&g.ids) {
                *v -= s[i as usize];
            }
        }
        achieved = largest;
        if largest < tol {
            return Ok(sweep);
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: DEMEAN_MAX_SWEEPS,
        achieved,
    })
}

/// Demeans every column in parallel; returns the largest sweep count.
pub fn demean_columns(cols: &mut [Vec<f64>], dims: &[Groups]) -> Result<usize> {
    cols.par_iter_mut()
        .map(|c| demean_column(c, dims))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().max().unwrap_or(0))
}

/// Applies the within transformation to the named panel columns. Every row
/// must carry a value for each requested column.
pub fn within_transform(panel: &PanelDataset, columns: &[Column], fe: &[FeDim]) -> Result<PanelDataset> {
    let spec = RegressionSpec::new(columns[0], columns.iter().map(|&c| Term::single(c)).collect()).with_fe(fe);
    let design = Design::from_panel(&spec, panel)?;
    if design.n_obs() != panel.len() {
        return Err(Error::InvalidSpec("within transform over a column with missing values".into()));
    }
    let mut cols = design.x;
    demean_columns(&mut cols, &design.fe)?;
    let mut out = panel.clone();
    for (obs_idx, obs) in out.observations.iter_mut().enumerate() {
        for (j, &c) in columns.iter().enumerate() {
            let v = cols[j][obs_idx];
            match c {
                Column::Outcome => obs.outcome = v,
                Column::Llm => obs.llm = v,
                Column::Lap => obs.lap = v,
                Column::Confidence => obs.confidence = Some(v),
                Column::FirstTokenProb => obs.first_token_prob = Some(v),
                Column::Small => {
                    return Err(Error::InvalidSpec("`small` is an indicator and cannot be demeaned in place".into()))
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    /// Two-sided, Student t with `df_resid` degrees of freedom.
    pub p_values: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub r_squared_within: f64,
    pub r_squared_overall: f64,
    pub n_obs: usize,
    pub n_clusters: Option<usize>,
    /// G - 1 when clustered, otherwise n - k.
    pub df_resid: usize,
    pub demeaning_iterations: usize,
    pub fe: Vec<FeDim>,
    pub cluster: Option<ClusterDim>,
}

/// One coefficient row of a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

impl FitResult {
    pub fn index_of(&self, term: &Term) -> Option<usize> {
        let c = term.canonical();
        self.terms.iter().position(|t| t.canonical() == c)
    }

    pub fn estimate(&self, term: &Term) -> Option<Estimate> {
        self.index_of(term).map(|i| Estimate {
            coef: self.coefficients[i],
            se: self.std_errors[i],
            t: self.t_stats[i],
            p: self.p_values[i],
        })
    }

    pub fn coef(&self, term: &Term) -> Option<f64> {
        self.index_of(term).map(|i| self.coefficients[i])
    }
}

/// Gram matrix of column-major data.
fn gram(x: &[Vec<f64>]) -> DMatrix<f64> {
    let k = x.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn cross(x: &[Vec<f64>], y: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().map(|c| c.iter().zip(y).map(|(a, b)| a * b).sum()))
}

/// Indices of columns whose Cholesky pivot vanishes relative to their raw
/// sum of squares, i.e. columns spanned by the ones before them.
fn dependent_columns(g: &DMatrix<f64>, raw_ss: &[f64]) -> Vec<usize> {
    let k = g.nrows();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut keep: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..k {
        let mut d = g[(j, j)];
        for &p in &keep {
            d -= l[(j, p)] * l[(j, p)];
        }
        if d <= COLLINEARITY_TOLERANCE * raw_ss[j] || d <= 0.0 {
            dependent.push(j);
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..k {
            let mut s = g[(i, j)];
            for &p in &keep {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / djj;
        }
        keep.push(j);
    }
    dependent
}

struct Projection {
    beta: DVector<f64>,
    xtx_inv: DMatrix<f64>,
    resid: Vec<f64>,
}

/// Least squares of `y` on the columns of `x`, both already demeaned.
fn project(x: &[Vec<f64>], y: &[f64], raw_ss: &[f64], names: &[Term]) -> Result<Projection> {
    let g = gram(x);
    let dependent = dependent_columns(&g, raw_ss);
    if !dependent.is_empty() {
        return Err(Error::CollinearDesign {
            columns: dependent.iter().map(|&j| names[j].name()).collect(),
        });
    }
    let chol = g.cholesky().ok_or_else(|| Error::CollinearDesign {
        columns: names.iter().map(Term::name).collect(),
    })?;
    let beta = chol.solve(&cross(x, y));
    let xtx_inv = chol.inverse();
    let mut resid = y.to_vec();
    for (j, col) in x.iter().enumerate() {
        let b = beta[j];
        resid.iter_mut().zip(col).for_each(|(r, v)| *r -= b * v);
    }
    Ok(Projection { beta, xtx_inv, resid })
}

fn raw_sum_squares(x: &[Vec<f64>]) -> Vec<f64> {
    x.iter().map(|c| c.iter().map(|v| v * v).sum()).collect()
}

/// Sandwich meat: `sum_g s_g s_g'` with `s_g = sum_{i in g} x_i u_i`, or the
/// per-observation version when `cluster` is `None`. Accumulates in row
/// order.
pub fn sandwich_meat(x: &[Vec<f64>], resid: &[f64], cluster: Option<&Groups>) -> DMatrix<f64> {
    let k = x.len();
    let n = resid.len();
    let mut meat = DMatrix::zeros(k, k);
    match cluster {
        Some(g) => {
            let mut scores = vec![vec![0.0; k]; g.count];
            for i in 0..n {
                let s = &mut scores[g.ids[i] as usize];
                for j in 0..k {
                    s[j] += x[j][i] * resid[i];
                }
            }
            for s in &scores {
                for a in 0..k {
                    for b in 0..k {
                        meat[(a, b)] += s[a] * s[b];
                    }
                }
            }
        }
        None => {
            for i in 0..n {
                let u2 = resid[i] * resid[i];
                for a in 0..k {
                    for b in 0..k {
                        meat[(a, b)] += x[a][i] * x[b][i] * u2;
                    }
                }
            }
        }
    }
    meat
}

/// CR1 factor `G/(G-1) * (n-1)/(n-k)`, or HC1 `n/(n-k)` without clusters.
pub fn small_sample_factor(n: usize, k: usize, clusters: Option<usize>) -> f64 {
    let (n, k) = (n as f64, k as f64);
    match clusters {
        Some(g) => {
            let g = g as f64;
            g / (g - 1.0) * (n - 1.0) / (n - k)
        }
        None => n / (n - k),
    }
}

pub fn fit(spec: &RegressionSpec, panel: &PanelDataset) -> Result<FitResult> {
    let design = Design::from_panel(spec, panel)?;
    fit_design(spec, &design)
}

/// Fits a prepared design. `spec` supplies only the FE and cluster labels
/// recorded in the result.
pub fn fit_design(spec: &RegressionSpec, design: &Design) -> Result<FitResult> {
    let n = design.n_obs();
    let k = design.x.len();
    if n <= k {
        return Err(Error::InvalidSpec(format!("{n} observations for {k} coefficients")));
    }
    let n_clusters = design.cluster.as_ref().map(Groups::occupied);
    if let Some(g) = n_clusters {
        if g < 2 {
            return Err(Error::ClusterCountError(g));
        }
    }

    let raw_ss = raw_sum_squares(&design.x);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    cols.push(design.y.clone());
    cols.extend(design.x.iter().cloned());
    let iterations = demean_columns(&mut cols, &design.fe)?;
    let y = cols.remove(0);
    let x = cols;

    let proj = project(&x, &y, &raw_ss, &design.terms)?;
    let meat = sandwich_meat(&x, &proj.resid, design.cluster.as_ref());
    let factor = small_sample_factor(n, k, n_clusters);
    let vcov = (&proj.xtx_inv * meat * &proj.xtx_inv) * factor;
    let vcov = (&vcov + vcov.transpose()) * 0.5;

    let ssr: f64 = proj.resid.iter().map(|r| r * r).sum();
    let y_mean = design.y.iter().sum::<f64>() / n as f64;
    let tss_overall: f64 = design.y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let tss_within: f64 = if design.fe.is_empty() {
        tss_overall
    } else {
        y.iter().map(|v| v * v).sum()
    };

    let df_resid = match n_clusters {
        Some(g) => g - 1,
        None => n - k,
    };
    let t_dist = StudentsT::new(0.0, 1.0, df_resid as f64).ok();
    let coefficients: Vec<f64> = proj.beta.iter().copied().collect();
    let std_errors: Vec<f64> = (0..k).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
    let t_stats: Vec<f64> = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let p_values = t_stats
        .iter()
        .map(|t| match &t_dist {
            Some(d) if t.is_finite() => 2.0 * d.sf(t.abs()),
            _ => f64::NAN,
        })
        .collect();

    Ok(FitResult {
        terms: design.terms.clone(),
        coefficients,
        std_errors,
        t_stats,
        p_values,
        vcov: (0..k).map(|i| (0..k).map(|j| vcov[(i, j)]).collect()).collect(),
        r_squared_within: 1.0 - ssr / tss_within,
        r_squared_overall: 1.0 - ssr / tss_overall,
        n_obs: n,
        n_clusters,
        df_resid,
        demeaning_iterations: iterations,
        fe: spec.fe.clone(),
        cluster: spec.cluster,
    })
}

/// Point estimates only, skipping the covariance. Used by resampling loops.
pub fn fit_coefficients(design: &Design) -> Result<Vec<f64>> {
    let n = design.n_obs();
    let k = design.x.len();
    if n <= k {
        return Err(Error::InvalidSpec(format!("{n} observations for {k} coefficients")));
    }
    let raw_ss = raw_sum_squares(&design.x);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    cols.push(design.y.clone());
    cols.extend(design.x.iter().cloned());
    demean_columns(&mut cols, &design.fe)?;
    let y = cols.remove(0);
    let g = gram(&cols);
    let dependent = dependent_columns(&g, &raw_ss);
    if !dependent.is_empty() {
        return Err(Error::CollinearDesign {
            columns: dependent.iter().map(|&j| design.terms[j].name()).collect(),
        });
    }
    let chol = g.cholesky().ok_or_else(|| Error::CollinearDesign {
        columns: design.terms.iter().map(Term::name).collect(),
    })?;
    Ok(chol.solve(&cross(&cols, &y)).iter().copied().collect())
}

/// Outcome and focal regressor after partialling out the other regressors
/// and the fixed effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPair {
    pub y_resid: Vec<f64>,
    pub x_resid: Vec<f64>,
}

pub fn fwl_residualize(spec: &RegressionSpec, focal: &Term, panel: &PanelDataset) -> Result<ResidualPair> {
    let design = Design::from_panel(spec, panel)?;
    fwl_design(&design, focal)
}

pub fn fwl_design(design: &Design, focal: &Term) -> Result<ResidualPair> {
    let focal_c = focal.canonical();
    let f = design
        .terms
        .iter()
        .position(|t| t.canonical() == focal_c)
        .ok_or_else(|| Error::InvalidSpec(format!("focal term `{focal}` is not a regressor")))?;
    let raw_ss = raw_sum_squares(&design.x);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(design.x.len() + 1);
    cols.push(design.y.clone());
    cols.extend(design.x.iter().cloned());
    demean_columns(&mut cols, &design.fe)?;
    let y = cols.remove(0);

    // Full-rank check on the joint design first, so a focal term spanned by
    // the controls reports as collinear rather than as zero variance.
    let dependent = dependent_columns(&gram(&cols), &raw_ss);
    if !dependent.is_empty() {
        return Err(Error::CollinearDesign {
            columns: dependent.iter().map(|&j| design.terms[j].name()).collect(),
        });
    }

    let focal_col = cols.remove(f);
    let mut others_ss = raw_ss;
    others_ss.remove(f);
    let mut names = design.terms.clone();
    names.remove(f);
    if cols.is_empty() {
        return Ok(ResidualPair {
            y_resid: y,
            x_resid: focal_col,
        });
    }
    let y_resid = project(&cols, &y, &others_ss, &names)?.resid;
    let x_resid = project(&cols, &focal_col, &others_ss, &names)?.resid;
    Ok(ResidualPair { y_resid, x_resid })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialCovariance {
    /// Sample covariance with the n - 1 divisor.
    pub covariance: f64,
    pub variance: f64,
    pub ratio: f64,
    /// Standard error of `covariance` treating the residual products as
    /// independent draws.
    pub covariance_se: f64,
}

pub fn partial_covariance(pair: &ResidualPair) -> Result<PartialCovariance> {
    let n = pair.y_resid.len();
    if n < 2 || pair.x_resid.len() != n {
        return Err(Error::InvalidSpec("residual vectors must share a length of at least 2".into()));
    }
    let nf = n as f64;
    let my = pair.y_resid.iter().sum::<f64>() / nf;
    let mx = pair.x_resid.iter().sum::<f64>() / nf;
    let products: Vec<f64> = pair
        .y_resid
        .iter()
        .zip(&pair.x_resid)
        .map(|(y, x)| (y - my) * (x - mx))
        .collect();
    let covariance = products.iter().sum::<f64>() / (nf - 1.0);
    let variance = pair.x_resid.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (nf - 1.0);
    if !(variance > 0.0) {
        return Err(Error::DegenerateFocalTerm);
    }
    let pm = products.iter().sum::<f64>() / nf;
    let pvar = products.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(PartialCovariance {
        covariance,
        variance,
        ratio: covariance / variance,
        covariance_se: (pvar / nf).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_round_trips_through_its_name() {
        for t in [Term::intercept(), Term::single(Column::Llm), Term::product(&[Column::Llm, Column::Lap, Column::Small])] {
            assert_eq!(t.name().parse::<Term>().unwrap(), t);
        }
        assert!("llm:size".parse::<Term>().is_err());
    }

    fn obs(entity: &str, time: &str, y: f64, llm: f64, lap: f64) -> PanelObservation {
        PanelObservation {
            obs_id: format!("{entity}-{time}-{y}-{llm}"),
            entity_id: entity.into(),
            time_id: time.into(),
            cluster_id: time.into(),
            outcome: y,
            llm,
            lap,
            confidence: None,
            first_token_prob: None,
            small: None,
        }
    }

    fn llm_only() -> Vec<Term> {
        vec![Term::single(Column::Llm)]
    }

    #[test]
    fn exact_fit() {
        let panel = PanelDataset::new((0..5).map(|i| obs("a", &i.to_string(), 2.0 * i as f64, i as f64, 0.1)).collect());
        let f = fit(&RegressionSpec::new(Column::Outcome, llm_only()), &panel).unwrap();
        assert!((f.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(f.coefficients[0].abs() < 1e-12);
        assert!((f.r_squared_overall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_point_regression() {
        let panel = PanelDataset::new(vec![
            obs("a", "1", 1.0, 0.0, 0.1),
            obs("a", "2", 3.0, 1.0, 0.1),
            obs("a", "3", 4.0, 2.0, 0.1),
        ]);
        let f = fit(&RegressionSpec::new(Column::Outcome, llm_only()), &panel).unwrap();
        assert_eq!(f.terms[0], Term::intercept());
        assert!((f.coefficients[1] - 1.5).abs() < 1e-12);
        assert!((f.coefficients[0] - 7.0 / 6.0).abs() < 1e-12);
        assert_eq!(f.df_resid, 1);
    }

    #[test]
    fn one_dimension_is_exact_in_one_pass() {
        let g = Groups::from_labels(["a", "a", "b", "b", "b"]);
        let mut col = vec![1.0, 3.0, 2.0, 4.0, 9.0];
        let sweeps = demean_column(&mut col, std::slice::from_ref(&g)).unwrap();
        assert_eq!(sweeps, 2);
        assert_eq!(col[..2], [-1.0, 1.0]);
        assert!((col[2] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn saturated_two_by_two() {
        let e = Groups::from_labels(["a", "a", "b", "b"]);
        let t = Groups::from_labels(["1", "2", "1", "2"]);
        let mut col = vec![1.0, 2.0, 3.0, 4.0];
        demean_column(&mut col, &[e, t]).unwrap();
        assert!(col.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn collinear_terms_are_named() {
        let panel = PanelDataset::new(
            (0..6)
                .map(|i| obs(&format!("e{}", i % 2), &format!("t{}", i / 2), i as f64, (i * i) as f64, 0.3))
                .collect(),
        );
        let spec = RegressionSpec::new(
            Column::Outcome,
            vec![Term::single(Column::Llm), Term::single(Column::Lap)],
        )
        .with_fe(&[FeDim::Entity, FeDim::Time]);
        assert_eq!(
            fit(&spec, &panel),
            Err(Error::CollinearDesign {
                columns: vec!["lap".into()]
            })
        );
    }

    #[test]
    fn single_cluster_is_rejected() {
        let panel = PanelDataset::new((0..5).map(|i| obs("a", "t", i as f64, (i % 3) as f64, 0.1)).collect());
        let spec = RegressionSpec::new(Column::Outcome, llm_only()).with_cluster(ClusterDim::Time);
        assert_eq!(fit(&spec, &panel), Err(Error::ClusterCountError(1)));
    }

    #[test]
    fn spec_validation() {
        let dup = RegressionSpec::new(
            Column::Outcome,
            vec![
                Term::product(&[Column::Llm, Column::Lap]),
                Term::product(&[Column::Lap, Column::Llm]),
            ],
        );
        assert!(matches!(dup.validate(), Err(Error::InvalidSpec(_))));
        let fe = RegressionSpec::new(Column::Outcome, llm_only()).with_fe(&[FeDim::Time, FeDim::Time]);
        assert!(matches!(fe.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"outcome":"outcome","terms":[["llm"],["lap"],["llm","lap"]],"fe":["entity","time"],"cluster":"time"}"#;
        let spec: RegressionSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.terms[2], Term::product(&[Column::Llm, Column::Lap]));
        assert_eq!(spec.fe, [FeDim::Entity, FeDim::Time]);
        assert_eq!(spec.cluster, Some(ClusterDim::Time));
        assert_eq!(serde_json::to_string(&spec).unwrap(), json);
    }

    #[test]
    fn identity_partial_covariance() {
        let v = vec![1.0, -2.0, 0.5, 3.0];
        let pc = partial_covariance(&ResidualPair {
            y_resid: v.clone(),
            x_resid: v,
        })
        .unwrap();
        assert!((pc.ratio - 1.0).abs() < 1e-15);
        assert_eq!(
            partial_covariance(&ResidualPair {
                y_resid: vec![1.0, 2.0],
                x_resid: vec![0.0, 0.0]
            }),
            Err(Error::DegenerateFocalTerm)
        );
    }

    #[test]
    fn cr1_equals_hc1_with_singleton_clusters() {
        assert_eq!(small_sample_factor(100, 3, Some(100)), small_sample_factor(100, 3, None));
    }
}
