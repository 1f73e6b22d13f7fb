//! The lookahead-bias test.
//!
//! A model whose forecasts embed leaked outcomes is more accurate where it
//! has memorized more, so the coefficient on `llm:lap` in a regression of
//! outcomes on the forecast, LAP and their product is positive. This module
//! builds those regressions, turns the interaction into a verdict and
//! economic magnitudes, and bootstraps the interaction's distribution.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::panel::{Column, PanelDataset};
use crate::regression::{fit, fit_coefficients, ClusterDim, Design, FeDim, FitResult, Groups, RegressionSpec, Term};
use crate::stats;

/// Share of degenerate redraws above which a bootstrap is flagged unstable.
pub const INSTABILITY_THRESHOLD: f64 = 0.01;

fn default_alpha() -> f64 {
    0.05
}

fn default_fe() -> Vec<FeDim> {
    vec![FeDim::Entity, FeDim::Time]
}

fn default_cluster() -> Option<ClusterDim> {
    Some(ClusterDim::Time)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    #[serde(default = "default_fe")]
    pub fe: Vec<FeDim>,
    #[serde(default = "default_cluster")]
    pub cluster: Option<ClusterDim>,
    /// One-sided significance level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for DetectionConfig {
    /// Entity and time fixed effects, errors clustered by time, 5% level.
    fn default() -> Self {
        DetectionConfig {
            fe: default_fe(),
            cluster: default_cluster(),
            alpha: default_alpha(),
        }
    }
}

impl DetectionConfig {
    fn spec(&self, terms: Vec<Term>) -> RegressionSpec {
        RegressionSpec {
            outcome: Column::Outcome,
            terms,
            fe: self.fe.clone(),
            cluster: self.cluster,
        }
    }

    pub fn baseline_spec(&self) -> RegressionSpec {
        self.spec(vec![Term::single(Column::Llm)])
    }

    pub fn interaction_spec(&self) -> RegressionSpec {
        self.spec(vec![
            Term::single(Column::Llm),
            Term::single(Column::Lap),
            interaction(),
        ])
    }
}

/// The `llm:lap` term.
pub fn interaction() -> Term {
    Term::product(&[Column::Llm, Column::Lap])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    BiasDetected,
    NotDetected,
}

/// Economic size of the estimates, in outcome units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Magnitudes {
    pub sd_llm: f64,
    pub sd_lap: f64,
    pub mean_lap: f64,
    /// Baseline `llm` coefficient times `sd_llm`.
    pub baseline_llm_1sd: f64,
    /// Effect of a 1-SD forecast move at mean LAP in the interaction model.
    pub llm_1sd_at_mean_lap: f64,
    /// Change in the forecast's marginal effect from a 1-SD rise in LAP:
    /// interaction coefficient times `sd_lap`.
    pub lap_1sd_amplification: f64,
    /// `lap_1sd_amplification` relative to the baseline `llm` coefficient.
    pub amplification_ratio: f64,
}

impl Magnitudes {
    pub fn new(gamma_baseline: f64, gamma: f64, delta: f64, sd_llm: f64, sd_lap: f64, mean_lap: f64) -> Self {
        let lap_1sd_amplification = delta * sd_lap;
        Magnitudes {
            sd_llm,
            sd_lap,
            mean_lap,
            baseline_llm_1sd: gamma_baseline * sd_llm,
            llm_1sd_at_mean_lap: (gamma + delta * mean_lap) * sd_llm,
            lap_1sd_amplification,
            amplification_ratio: lap_1sd_amplification / gamma_baseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub baseline: FitResult,
    pub full: FitResult,
    pub beta3: f64,
    pub beta3_se: f64,
    pub beta3_t: f64,
    pub alpha: f64,
    pub critical_value: f64,
    pub verdict: Verdict,
    pub magnitudes: Magnitudes,
}

/// Upper `alpha` quantile of Student t with `df` degrees of freedom.
pub fn critical_value(alpha: f64, df: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 1)")));
    }
    let t = StudentsT::new(0.0, 1.0, df as f64)
        .map_err(|_| Error::InvalidConfig(format!("no t distribution with {df} degrees of freedom")))?;
    Ok(t.inverse_cdf(1.0 - alpha))
}

pub fn decide(beta3: f64, t: f64, critical: f64) -> Verdict {
    if beta3 > 0.0 && t > critical {
        Verdict::BiasDetected
    } else {
        Verdict::NotDetected
    }
}

pub fn run_detection(panel: &PanelDataset, config: &DetectionConfig) -> Result<DetectionReport> {
    detect_with_spec(panel, &config.interaction_spec(), config.alpha)
}

/// Detection on a caller-supplied specification. It must contain `llm` and
/// `llm:lap`; the baseline keeps only `llm` with the same fixed effects and
/// clustering. Extra controls stay in the full fit.
pub fn detect_with_spec(panel: &PanelDataset, spec: &RegressionSpec, alpha: f64) -> Result<DetectionReport> {
    for needed in [Term::single(Column::Llm), interaction()] {
        if spec.term_index(&needed).is_none() {
            return Err(Error::InvalidSpec(format!("detection needs the `{needed}` term")));
        }
    }
    let baseline_spec = RegressionSpec {
        terms: vec![Term::single(Column::Llm)],
        ..spec.clone()
    };
    let baseline = fit(&baseline_spec, panel)?;
    let full = fit(spec, panel)?;
    let b3 = full.estimate(&interaction()).expect("interaction term present");
    let critical = critical_value(alpha, full.df_resid)?;

    let llm: Vec<f64> = panel.observations.iter().map(|o| o.llm).collect();
    let lap: Vec<f64> = panel.observations.iter().map(|o| o.lap).collect();
    let magnitudes = Magnitudes::new(
        baseline.coef(&Term::single(Column::Llm)).unwrap(),
        full.coef(&Term::single(Column::Llm)).unwrap(),
        b3.coef,
        stats::sample_sd(&llm),
        stats::sample_sd(&lap),
        stats::mean(&lap),
    );
    Ok(DetectionReport {
        verdict: decide(b3.coef, b3.t, critical),
        beta3: b3.coef,
        beta3_se: b3.se,
        beta3_t: b3.t,
        alpha,
        critical_value: critical,
        magnitudes,
        baseline,
        full,
    })
}

/// Interaction with firm size: llm, small, llm:small, lap, llm:lap,
/// lap:small and llm:lap:small.
pub fn size_interaction_spec(config: &DetectionConfig) -> RegressionSpec {
    use Column::{Lap, Llm, Small};
    config.spec(vec![
        Term::single(Llm),
        Term::single(Small),
        Term::product(&[Llm, Small]),
        Term::single(Lap),
        Term::product(&[Llm, Lap]),
        Term::product(&[Lap, Small]),
        Term::product(&[Llm, Lap, Small]),
    ])
}

pub fn run_size_interaction(panel: &PanelDataset, config: &DetectionConfig) -> Result<FitResult> {
    fit(&size_interaction_spec(config), panel)
}

/// Alternative confidence measures raced against LAP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    FirstTokenProb,
    Confidence,
}

impl Covariate {
    pub fn column(self) -> Column {
        match self {
            Covariate::FirstTokenProb => Column::FirstTokenProb,
            Covariate::Confidence => Column::Confidence,
        }
    }
}

/// llm, covariate, llm:covariate, and with `include_lap` also lap and
/// llm:lap.
pub fn horserace_spec(covariate: Covariate, include_lap: bool, config: &DetectionConfig) -> RegressionSpec {
    let c = covariate.column();
    let mut terms = vec![
        Term::single(Column::Llm),
        Term::single(c),
        Term::product(&[Column::Llm, c]),
    ];
    if include_lap {
        terms.push(Term::single(Column::Lap));
        terms.push(interaction());
    }
    config.spec(terms)
}

pub fn run_horserace(
    panel: &PanelDataset,
    covariate: Covariate,
    include_lap: bool,
    config: &DetectionConfig,
) -> Result<FitResult> {
    fit(&horserace_spec(covariate, include_lap, config), panel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub b: usize,
    pub seed: u64,
    /// Resample whole clusters instead of rows.
    #[serde(default)]
    pub cluster_resample: bool,
    /// Redraw budget per replicate before giving up.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
}

fn default_max_attempts() -> usize {
    100
}

impl BootstrapConfig {
    pub fn new(b: usize, seed: u64) -> Self {
        BootstrapConfig {
            b,
            seed,
            cluster_resample: false,
            max_attempts: default_max_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub focal_term: Term,
    pub seed: u64,
    pub b: usize,
    /// Focal coefficient in each replicate, in replicate order.
    pub draws: Vec<f64>,
    /// Focal coefficient on the original sample.
    pub point_estimate: f64,
    /// Empirical 95th percentile of the draws (no interpolation).
    pub percentile_95: f64,
    pub degenerate_redraws: usize,
    /// Set when redraws exceed 1% of replicates.
    pub instability_warning: bool,
}

fn add_one_p(exceed: usize, b: usize) -> f64 {
    (exceed + 1) as f64 / (b + 1) as f64
}

impl BootstrapResult {
    /// `(#{draws >= reference} + 1) / (B + 1)`.
    pub fn p_one_sided(&self, reference: f64) -> f64 {
        add_one_p(self.draws.iter().filter(|&&d| d >= reference).count(), self.b)
    }

    /// Same rule applied to draws re-centred on the point estimate, which
    /// approximates the null distribution of the estimator. This is the
    /// p-value of testing `reference` against a zero-effect null.
    pub fn p_one_sided_centered(&self, reference: f64) -> f64 {
        let c = self.point_estimate;
        add_one_p(self.draws.iter().filter(|&&d| d - c >= reference).count(), self.b)
    }
}

fn draw_rows(rng: &mut ChaCha8Rng, n: usize, clusters: Option<&(Vec<Vec<usize>>, usize)>) -> Vec<usize> {
    match clusters {
        None => (0..n).map(|_| rng.random_range(0..n)).collect(),
        Some((members, _)) => {
            let g = members.len();
            let mut rows = Vec::with_capacity(n);
            for _ in 0..g {
                rows.extend_from_slice(&members[rng.random_range(0..g)]);
            }
            rows
        }
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Row indices of the first row-level draw of `replicate`.
pub fn bootstrap_rows(seed: u64, replicate: usize, n: usize) -> Vec<usize> {
    draw_rows(&mut replicate_rng(seed, replicate), n, None)
}

fn is_degenerate(e: &Error) -> bool {
    matches!(
        e,
        Error::CollinearDesign { .. } | Error::ClusterCountError(_) | Error::DegenerateFocalTerm | Error::InvalidSpec(_)
    )
}

/// Rows are drawn with replacement and the spec is re-estimated on each
/// replicate, fixed effects included. Duplicated rows keep their original
/// group labels. Replicate `b` draws from stream `b` of a generator keyed
/// by `seed`, so the draws do not depend on scheduling.
pub fn pairs_bootstrap(
    panel: &PanelDataset,
    spec: &RegressionSpec,
    focal: &Term,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    pairs_bootstrap_with(panel, spec, focal, &BootstrapConfig::new(b, seed))
}

pub fn pairs_bootstrap_with(
    panel: &PanelDataset,
    spec: &RegressionSpec,
    focal: &Term,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if config.b == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one replicate".into()));
    }
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let f = spec
        .term_index(focal)
        .ok_or_else(|| Error::InvalidSpec(format!("focal term `{focal}` is not a regressor")))?;
    let design = Design::from_panel(spec, panel)?;
    let point_estimate = fit_coefficients(&design)?[f];
    let n = design.n_obs();

    let clusters = if config.cluster_resample {
        let g: &Groups = design
            .cluster
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("cluster resampling needs a cluster dimension".into()))?;
        let mut members = vec![Vec::new(); g.count];
        g.ids.iter().enumerate().for_each(|(i, &c)| members[c as usize].push(i));
        Some((members, g.count))
    } else {
        None
    };

    let replicates: Vec<(f64, usize)> = (0..config.b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(config.seed, rep);
            for attempt in 0..config.max_attempts {
                let rows = draw_rows(&mut rng, n, clusters.as_ref());
                match fit_coefficients(&design.subset(&rows)) {
                    Ok(beta) => return Ok((beta[f], attempt)),
                    Err(e) if is_degenerate(&e) => continue,
                    Err(e) => return Err(e),
                }
            }
            Err(Error::BootstrapExhausted {
                replicate: rep,
                attempts: config.max_attempts,
            })
        })
        .collect::<Result<_>>()?;

    let draws: Vec<f64> = replicates.iter().map(|r| r.0).collect();
    let degenerate_redraws: usize = replicates.iter().map(|r| r.1).sum();
    let mut scratch = draws.clone();
    Ok(BootstrapResult {
        focal_term: focal.clone(),
        seed: config.seed,
        b: config.b,
        percentile_95: stats::quantile_type1(&mut scratch, 0.95),
        point_estimate,
        instability_warning: degenerate_redraws as f64 > INSTABILITY_THRESHOLD * config.b as f64,
        degenerate_redraws,
        draws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub percentile_95: f64,
    pub reference: Option<f64>,
}

/// Equal-width bins spanning the draws. The last bin is closed on the
/// right. Constant draws get a unit-width range centred on the value, so
/// exactly one bin is occupied.
pub fn histogram_export(result: &BootstrapResult, bins: usize, reference: Option<f64>) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidConfig("histogram needs at least one bin".into()));
    }
    let lo = result.draws.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = result.draws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, width) = if hi > lo {
        (lo, (hi - lo) / bins as f64)
    } else {
        (lo - 0.5, 1.0 / bins as f64)
    };
    let mut counts = vec![0usize; bins];
    for &d in &result.draws {
        let idx = (((d - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| Bin {
                left: lo + i as f64 * width,
                right: lo + (i + 1) as f64 * width,
                count,
            })
            .collect(),
        percentile_95: result.percentile_95,
        reference,
    })
}

pub fn write_histogram_csv<W: Write>(writer: W, hist: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_left", "bin_right", "count"])
        .map_err(|e| Error::io("writing histogram CSV", e))?;
    for b in &hist.bins {
        w.write_record([b.left.to_string(), b.right.to_string(), b.count.to_string()])
            .map_err(|e| Error::io("writing histogram CSV", e))?;
    }
    w.flush().map_err(|e| Error::io("writing histogram CSV", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, DgpConfig, LProcess, PredictionMap};

    fn result_with(draws: Vec<f64>) -> BootstrapResult {
        let mut s = draws.clone();
        BootstrapResult {
            focal_term: interaction(),
            seed: 0,
            b: draws.len(),
            percentile_95: stats::quantile_type1(&mut s, 0.95),
            point_estimate: 0.0,
            degenerate_redraws: 0,
            instability_warning: false,
            draws,
        }
    }

    #[test]
    fn add_one_rule() {
        let r = result_with(vec![0.3]);
        assert_eq!(r.p_one_sided(0.2), 1.0);
        assert_eq!(r.p_one_sided(0.4), 0.5);
        let r = result_with((0..99).map(f64::from).collect());
        assert_eq!(r.p_one_sided(1e9), 0.01);
        let ps: Vec<f64> = [-1.0, 10.0, 50.5, 98.0, 200.0].iter().map(|&x| r.p_one_sided(x)).collect();
        assert!(ps.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn histogram_conserves_draws() {
        let r = result_with((0..1000).map(|i| ((i * 7919) % 1000) as f64 / 10.0).collect());
        let h = histogram_export(&r, 50, Some(3.0)).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).sum::<usize>(), 1000);
        assert_eq!(h.bins.len(), 50);
        assert_eq!(h.bins[0].left, 0.0);
        assert!((h.bins[49].right - 99.9).abs() < 1e-9);
        assert_eq!(h.reference, Some(3.0));
    }

    #[test]
    fn constant_draws_fill_one_bin() {
        let r = result_with(vec![2.0; 10]);
        let h = histogram_export(&r, 5, None).unwrap();
        let occupied: Vec<_> = h.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert_eq!(occupied[0].count, 10);
        assert!(occupied[0].left <= 2.0 && 2.0 < occupied[0].right);
        assert!(histogram_export(&r, 0, None).is_err());
    }

    #[test]
    fn histogram_csv_header() {
        let h = histogram_export(&result_with(vec![0.0, 1.0]), 2, None).unwrap();
        let mut buf = Vec::new();
        write_histogram_csv(&mut buf, &h).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bin_left,bin_right,count\n0,0.5,1\n0.5,1,1\n");
    }

    #[test]
    fn critical_values() {
        assert!((critical_value(0.05, 1_000_000).unwrap() - 1.6449).abs() < 1e-3);
        assert!((critical_value(0.05, 10).unwrap() - 1.8125).abs() < 1e-3);
        assert!(critical_value(0.0, 10).is_err());
        assert_eq!(decide(-0.1, 9.0, 1.64), Verdict::NotDetected);
        assert_eq!(decide(0.1, 1.0, 1.64), Verdict::NotDetected);
        assert_eq!(decide(0.1, 2.0, 1.64), Verdict::BiasDetected);
    }

    #[test]
    fn headline_magnitudes() {
        let m = Magnitudes::new(0.210, 0.00117, 2.866, 0.937, 0.027, 0.05);
        assert!((m.baseline_llm_1sd - 0.197).abs() < 5e-4);
        assert!((m.lap_1sd_amplification - 0.077).abs() < 5e-4);
        assert!((m.amplification_ratio - 0.368).abs() < 5e-4);
    }

    fn contaminated(seed: u64, l: LProcess) -> PanelDataset {
        let mut cfg = DgpConfig::gaussian(50, 40, l, seed);
        cfg.prediction_map = PredictionMap::Label { neutral_band: 0.0 };
        cfg.lap_noise_sd = 0.05;
        generate(&cfg).unwrap().panel
    }

    #[test]
    fn detects_leakage_in_contaminated_panel() {
        let panel = contaminated(1, LProcess::Uniform { low: 0.0, high: 1.0 });
        let r = run_detection(&panel, &DetectionConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::BiasDetected, "{}", r.beta3_t);
        assert_eq!(r.full.df_resid, 39);
    }

    #[test]
    fn bootstrap_is_deterministic_and_seed_sensitive() {
        let panel = contaminated(2, LProcess::Zero);
        let spec = DetectionConfig::default().interaction_spec();
        let a = pairs_bootstrap(&panel, &spec, &interaction(), 20, 7).unwrap();
        let b = pairs_bootstrap(&panel, &spec, &interaction(), 20, 7).unwrap();
        assert_eq!(
            a.draws.iter().map(|d| d.to_bits()).collect::<Vec<_>>(),
            b.draws.iter().map(|d| d.to_bits()).collect::<Vec<_>>()
        );
        let c = pairs_bootstrap(&panel, &spec, &interaction(), 20, 8).unwrap();
        assert_ne!(a.draws, c.draws);
        assert_eq!(a.draws.len(), 20);
        assert!(!a.instability_warning);
    }

    #[test]
    fn cluster_resampling_needs_clusters() {
        let panel = contaminated(3, LProcess::Zero);
        let spec = DetectionConfig {
            cluster: None,
            ..Default::default()
        }
        .interaction_spec();
        let cfg = BootstrapConfig {
            cluster_resample: true,
            ..BootstrapConfig::new(5, 1)
        };
        assert!(pairs_bootstrap_with(&panel, &spec, &interaction(), &cfg).is_err());
        let clustered = DetectionConfig::default().interaction_spec();
        let r = pairs_bootstrap_with(&panel, &clustered, &interaction(), &cfg).unwrap();
        assert_eq!(r.draws.len(), 5);
    }

    #[test]
    fn size_interaction_without_small_firms_is_collinear() {
        let mut panel = contaminated(4, LProcess::Zero);
        panel.observations.iter_mut().for_each(|o| o.small = Some(false));
        match run_size_interaction(&panel, &DetectionConfig::default()) {
            Err(Error::CollinearDesign { columns }) => {
                assert_eq!(columns, ["small", "llm:small", "lap:small", "llm:lap:small"])
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn covariate_equal_to_lap_is_collinear() {
        let mut panel = contaminated(5, LProcess::Zero);
        panel.observations.iter_mut().for_each(|o| o.confidence = Some(o.lap));
        assert!(matches!(
            run_horserace(&panel, Covariate::Confidence, true, &DetectionConfig::default()),
            Err(Error::CollinearDesign { .. })
        ));
    }
}
