//! Synthetic panels from the contamination model.
//!
//! Outcomes are `Y = mu + eps` with `mu` independent of `eps`. A model that
//! has memorized a fraction `L` of the future shock predicts
//! `mu_hat = mu + L * eps`. The hidden `mu`, `eps`, `L` and `mu_hat` are
//! returned alongside the observable panel so tests can check estimators
//! against ground truth.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::{Column, PanelDataset, PanelObservation};
use crate::regression::{fwl_residualize, partial_covariance, RegressionSpec, Term};
use crate::stats;

/// Conditional-mean generator. Each observation draws a signal
/// `z ~ N(0, 1)`; `mu` is a function of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuProcess {
    /// `mu = scale * z`.
    Linear { scale: f64 },
    /// `mu = amplitude * sign(z)`.
    SignOfSignal { amplitude: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LProcess {
    Zero,
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
    /// Entity-level two-point mixture: `high` with probability
    /// `fraction_high`, otherwise `low`.
    TwoGroup { low: f64, high: f64, fraction_high: f64 },
    /// `L = scale * U` with `U ~ Uniform(0, 1)` and the scale chosen by the
    /// entity's size flag. The observable LAP signal is `U` itself, so
    /// equal LAP readings imply more leakage for small entities.
    BySize { small_scale: f64, large_scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LLevel {
    #[default]
    Observation,
    Entity,
}

/// How the model's latent forecast `mu_hat` is reported in the `llm`
/// column.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionMap {
    /// `llm = mu_hat`.
    #[default]
    Continuous,
    /// `llm = +1 / 0 / -1` as `mu_hat` is above, within or below
    /// `[-neutral_band, neutral_band]`, the way a good/neutral/bad answer
    /// is scored.
    Label { neutral_band: f64 },
}

/// Generator for an optional covariate in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateProcess {
    #[default]
    Absent,
    /// Independent Uniform(0, 1) draws.
    Noise,
    /// `2 * Phi(|z|) - 1`: high when the signal is strong and the forecast
    /// is accurate for reasons unrelated to leakage.
    Skill,
}

fn default_small_fraction() -> f64 {
    0.2
}

fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n_entities: usize,
    pub n_periods: usize,
    pub sigma_eps: f64,
    pub mu_process: MuProcess,
    pub l_process: LProcess,
    #[serde(default)]
    pub l_level: LLevel,
    #[serde(default)]
    pub prediction_map: PredictionMap,
    /// Standard deviation of the measurement error in the observed LAP.
    /// Draws are redrawn until LAP lies in (0, 1].
    #[serde(default)]
    pub lap_noise_sd: f64,
    #[serde(default = "default_small_fraction")]
    pub small_fraction: f64,
    #[serde(default)]
    pub confidence: CovariateProcess,
    #[serde(default)]
    pub first_token: CovariateProcess,
    #[serde(default)]
    pub entity_effect_sd: f64,
    #[serde(default)]
    pub time_effect_sd: f64,
    /// Date of period 0; period `t` is `start_date + t` days.
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl DgpConfig {
    /// Linear Gaussian signal with unit scale, continuous predictions and
    /// no measurement error.
    pub fn gaussian(n_entities: usize, n_periods: usize, l_process: LProcess, seed: u64) -> Self {
        DgpConfig {
            n_entities,
            n_periods,
            sigma_eps: 1.0,
            mu_process: MuProcess::Linear { scale: 1.0 },
            l_process,
            l_level: LLevel::Observation,
            prediction_map: PredictionMap::Continuous,
            lap_noise_sd: 0.0,
            small_fraction: default_small_fraction(),
            confidence: CovariateProcess::Absent,
            first_token: CovariateProcess::Absent,
            entity_effect_sd: 0.0,
            time_effect_sd: 0.0,
            start_date: default_start_date(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_entities == 0 || self.n_periods == 0 {
            return bad("panel dimensions must be positive");
        }
        if !(self.sigma_eps > 0.0 && self.sigma_eps.is_finite()) {
            return bad("sigma_eps must be positive");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let l_ok = match self.l_process {
            LProcess::Zero => true,
            LProcess::Constant { value } => unit(value),
            LProcess::Uniform { low, high } => unit(low) && unit(high) && low <= high,
            LProcess::TwoGroup {
                low,
                high,
                fraction_high,
            } => unit(low) && unit(high) && unit(fraction_high),
            LProcess::BySize {
                small_scale,
                large_scale,
            } => unit(small_scale) && unit(large_scale),
        };
        if !l_ok {
            return bad("L support must lie in [0, 1]");
        }
        if !(self.lap_noise_sd >= 0.0) || !unit(self.small_fraction) {
            return bad("lap_noise_sd must be non-negative and small_fraction in [0, 1]");
        }
        if let PredictionMap::Label { neutral_band } = self.prediction_map {
            if !(neutral_band >= 0.0) {
                return bad("neutral_band must be non-negative");
            }
        }
        if !(self.entity_effect_sd >= 0.0 && self.time_effect_sd >= 0.0) {
            return bad("effect standard deviations must be non-negative");
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.n_entities * self.n_periods
    }
}

/// Hidden quantities for one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub mu: f64,
    pub eps: f64,
    pub l: f64,
    pub mu_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub config: DgpConfig,
    pub panel: PanelDataset,
    /// Parallel to `panel.observations`.
    pub truth: Vec<Truth>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

fn covariate(process: CovariateProcess, z: f64, rng: &mut ChaCha8Rng) -> Option<f64> {
    match process {
        CovariateProcess::Absent => None,
        CovariateProcess::Noise => Some(1.0 - rng.random::<f64>()),
        CovariateProcess::Skill => Some(2.0 * std_normal_cdf(z.abs()) - 1.0),
    }
}

/// Substream of the seed used by entity `i`; stream 0 holds time effects.
fn entity_rng(seed: u64, entity: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(entity as u64 + 1);
    rng
}

fn draw_l(process: LProcess, small: bool, rng: &mut ChaCha8Rng) -> (f64, f64) {
    match process {
        LProcess::Zero => (0.0, 0.0),
        LProcess::Constant { value } => (value, value),
        LProcess::Uniform { low, high } => {
            let l = low + (high - low) * rng.random::<f64>();
            (l, l)
        }
        LProcess::TwoGroup {
            low,
            high,
            fraction_high,
        } => {
            let l = if rng.random::<f64>() < fraction_high { high } else { low };
            (l, l)
        }
        LProcess::BySize {
            small_scale,
            large_scale,
        } => {
            let u = rng.random::<f64>();
            (u * if small { small_scale } else { large_scale }, u)
        }
    }
}

fn observed_lap(signal: f64, noise_sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if noise_sd == 0.0 {
        return signal;
    }
    loop {
        let v = signal + noise_sd * normal(rng);
        if v > 0.0 && v <= 1.0 {
            return v;
        }
    }
}

pub fn generate(config: &DgpConfig) -> Result<SyntheticPanel> {
    config.validate()?;
    let time_effects: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        (0..config.n_periods)
            .map(|_| config.time_effect_sd * normal(&mut rng))
            .collect()
    };
    let time_ids: Vec<String> = (0..config.n_periods)
        .map(|t| (config.start_date + Duration::days(t as i64)).to_string())
        .collect();

    let per_entity: Vec<Vec<(PanelObservation, Truth)>> = (0..config.n_entities)
        .into_par_iter()
        .map(|i| {
            let mut rng = entity_rng(config.seed, i);
            let entity_id = format!("e{i:05}");
            let small = rng.random::<f64>() < config.small_fraction;
            let alpha = config.entity_effect_sd * normal(&mut rng);
            let entity_l = draw_l(config.l_process, small, &mut rng);
            (0..config.n_periods)
                .map(|t| {
                    let z = normal(&mut rng);
                    let eps = config.sigma_eps * normal(&mut rng);
                    let (l, lap_signal) = match config.l_level {
                        LLevel::Observation => draw_l(config.l_process, small, &mut rng),
                        LLevel::Entity => entity_l,
                    };
                    let base = match config.mu_process {
                        MuProcess::Linear { scale } => scale * z,
                        MuProcess::SignOfSignal { amplitude } => amplitude * z.signum(),
                        MuProcess::Constant { value } => value,
                    };
                    let mu = alpha + time_effects[t] + base;
                    let mu_hat = mu + l * eps;
                    let llm = match config.prediction_map {
                        PredictionMap::Continuous => mu_hat,
                        PredictionMap::Label { neutral_band } => {
                            if mu_hat > neutral_band {
                                1.0
                            } else if mu_hat < -neutral_band {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                    };
                    let lap = observed_lap(lap_signal, config.lap_noise_sd, &mut rng);
                    let confidence = covariate(config.confidence, z, &mut rng);
                    let first_token_prob = covariate(config.first_token, z, &mut rng);
                    let time_id = time_ids[t].clone();
                    let obs = PanelObservation {
                        obs_id: format!("{entity_id}-{t:05}"),
                        entity_id: entity_id.clone(),
                        cluster_id: time_id.clone(),
                        time_id,
                        outcome: mu + eps,
                        llm,
                        lap,
                        confidence,
                        first_token_prob,
                        small: Some(small),
                    };
                    (obs, Truth { mu, eps, l, mu_hat })
                })
                .collect()
        })
        .collect();

    let (observations, truth) = per_entity.into_iter().flatten().unzip();
    Ok(SyntheticPanel {
        config: config.clone(),
        panel: PanelDataset::new(observations),
        truth,
    })
}

pub fn write_truth_csv<W: Write>(writer: W, panel: &SyntheticPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["obs_id", "mu", "eps", "l", "mu_hat"])
        .map_err(|e| Error::io("writing truth CSV", e))?;
    for (o, t) in panel.panel.observations.iter().zip(&panel.truth) {
        w.write_record([
            o.obs_id.clone(),
            t.mu.to_string(),
            t.eps.to_string(),
            t.l.to_string(),
            t.mu_hat.to_string(),
        ])
        .map_err(|e| Error::io("writing truth CSV", e))?;
    }
    w.flush().map_err(|e| Error::io("writing truth CSV", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub l: f64,
    pub n: usize,
    pub mse: f64,
    /// `sigma_eps^2 * (1 - L)^2`.
    pub analytic: f64,
}

/// Mean squared forecast error `(mu_hat - Y)^2` grouped by exact L value.
pub fn empirical_mse(panel: &SyntheticPanel) -> Vec<MseRow> {
    let mut groups: BTreeMap<u64, (f64, usize, f64)> = BTreeMap::new();
    for t in &panel.truth {
        let y = t.mu + t.eps;
        let e = groups.entry(t.l.to_bits()).or_insert((t.l, 0, 0.0));
        e.1 += 1;
        e.2 += (t.mu_hat - y).powi(2);
    }
    let s2 = panel.config.sigma_eps.powi(2);
    let mut rows: Vec<MseRow> = groups
        .into_values()
        .map(|(l, n, ss)| MseRow {
            l,
            n,
            mse: ss / n as f64,
            analytic: s2 * (1.0 - l).powi(2),
        })
        .collect();
    rows.sort_by(|a, b| a.l.total_cmp(&b.l));
    rows
}

pub fn write_mse_csv<W: Write>(writer: W, rows: &[MseRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::io("writing MSE CSV", e))?;
    }
    w.flush().map_err(|e| Error::io("writing MSE CSV", e))
}

/// `Var(eps | mu_hat, L)` for one observation under the generating
/// process. For Gaussian `mu` the posterior is normal; for the sign
/// process it is a two-point mixture over `mu = +-a`.
pub fn conditional_eps_variance(config: &DgpConfig, mu_hat: f64, l: f64) -> f64 {
    let s2 = config.sigma_eps.powi(2);
    if l == 0.0 {
        return s2;
    }
    let effects = config.entity_effect_sd.powi(2) + config.time_effect_sd.powi(2);
    match config.mu_process {
        MuProcess::Linear { scale } => {
            let m2 = scale * scale + effects;
            s2 * m2 / (m2 + l * l * s2)
        }
        MuProcess::Constant { .. } => {
            if effects == 0.0 {
                0.0
            } else {
                s2 * effects / (effects + l * l * s2)
            }
        }
        MuProcess::SignOfSignal { amplitude } => {
            let sd = l * config.sigma_eps;
            let lp = -0.5 * ((mu_hat - amplitude) / sd).powi(2);
            let lm = -0.5 * ((mu_hat + amplitude) / sd).powi(2);
            let mx = lp.max(lm);
            let (wp, wm) = ((lp - mx).exp(), (lm - mx).exp());
            let w = wp / (wp + wm);
            w * (1.0 - w) * (2.0 * amplitude / l).powi(2)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Check {
    /// Partial covariance of the residualized outcome and interaction,
    /// from observables only.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `E[L^2 Var(eps | mu_hat, L)]` from the hidden truth.
    pub rhs: f64,
    pub rhs_se: f64,
}

impl Prop1Check {
    pub fn z_score(&self) -> f64 {
        (self.lhs - self.rhs) / self.lhs_se.hypot(self.rhs_se)
    }

    pub fn agrees(&self, n_se: f64) -> bool {
        (self.lhs - self.rhs).abs() <= n_se * self.lhs_se.hypot(self.rhs_se)
    }
}

/// Default regression for the identity: outcome on llm, lap and their
/// product with an intercept.
pub fn prop1_spec() -> RegressionSpec {
    RegressionSpec::new(
        Column::Outcome,
        vec![
            Term::single(Column::Llm),
            Term::single(Column::Lap),
            Term::product(&[Column::Llm, Column::Lap]),
        ],
    )
}

/// Compares the observable partial covariance with its structural value.
/// Both sides carry Monte Carlo standard errors; when the observed LAP
/// cannot identify the interaction the error from the residualization is
/// returned instead.
pub fn prop1_oracle(panel: &SyntheticPanel, spec: &RegressionSpec) -> Result<Prop1Check> {
    let focal = Term::product(&[Column::Llm, Column::Lap]);
    let pair = fwl_residualize(spec, &focal, &panel.panel)?;
    let pc = partial_covariance(&pair)?;
    let terms: Vec<f64> = panel
        .truth
        .iter()
        .map(|t| t.l * t.l * conditional_eps_variance(&panel.config, t.mu_hat, t.l))
        .collect();
    let rhs = stats::mean(&terms);
    let rhs_se = if terms.len() > 1 {
        stats::sample_sd(&terms) / (terms.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(Prop1Check {
        lhs: pc.covariance,
        lhs_se: pc.covariance_se,
        rhs,
        rhs_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::fit;

    #[test]
    fn truth_identities_hold_exactly() {
        let mut cfg = DgpConfig::gaussian(20, 30, LProcess::Uniform { low: 0.0, high: 1.0 }, 3);
        cfg.entity_effect_sd = 0.5;
        cfg.time_effect_sd = 0.3;
        let s = generate(&cfg).unwrap();
        for (o, t) in s.panel.observations.iter().zip(&s.truth) {
            assert_eq!(o.outcome, t.mu + t.eps);
            assert_eq!(t.mu_hat, t.mu + t.l * t.eps);
            assert_eq!(o.llm, t.mu_hat);
        }
    }

    #[test]
    fn boundary_cases() {
        let s = generate(&DgpConfig::gaussian(5, 10, LProcess::Zero, 1)).unwrap();
        assert!(s.truth.iter().all(|t| t.mu_hat == t.mu));
        let s = generate(&DgpConfig::gaussian(5, 10, LProcess::Constant { value: 1.0 }, 1)).unwrap();
        assert!(s.panel.observations.iter().all(|o| o.llm == o.outcome));
        assert_eq!(empirical_mse(&s)[0].mse, 0.0);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let cfg = DgpConfig::gaussian(7, 9, LProcess::Uniform { low: 0.2, high: 0.6 }, 11);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = DgpConfig { seed: 12, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().truth, generate(&other).unwrap().truth);
    }

    #[test]
    fn label_map_and_lap_noise() {
        let mut cfg = DgpConfig::gaussian(10, 50, LProcess::Zero, 5);
        cfg.prediction_map = PredictionMap::Label { neutral_band: 0.5 };
        cfg.lap_noise_sd = 0.05;
        let s = generate(&cfg).unwrap();
        for (o, t) in s.panel.observations.iter().zip(&s.truth) {
            let expected = if t.mu_hat > 0.5 {
                1.0
            } else if t.mu_hat < -0.5 {
                -1.0
            } else {
                0.0
            };
            assert_eq!(o.llm, expected);
            assert!(o.lap > 0.0 && o.lap <= 1.0);
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = DgpConfig::gaussian(1, 1, LProcess::Constant { value: 1.5 }, 0);
        assert!(generate(&cfg).is_err());
        cfg.l_process = LProcess::Zero;
        cfg.sigma_eps = 0.0;
        assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn sign_posterior_variance() {
        let mut cfg = DgpConfig::gaussian(1, 1, LProcess::Zero, 0);
        cfg.mu_process = MuProcess::SignOfSignal { amplitude: 1.0 };
        // Equidistant from both atoms: maximal uncertainty.
        assert!((conditional_eps_variance(&cfg, 0.0, 0.5) - 16.0 * 0.25).abs() < 1e-12);
        assert!(conditional_eps_variance(&cfg, 5.0, 0.5) < 1e-10);
        assert_eq!(conditional_eps_variance(&cfg, 0.3, 0.0), 1.0);
    }

    #[test]
    fn covariance_of_prediction_and_shock() {
        let s = generate(&DgpConfig::gaussian(100, 1000, LProcess::Constant { value: 0.5 }, 9)).unwrap();
        let prods: Vec<f64> = s.truth.iter().map(|t| t.mu_hat * t.eps).collect();
        let m = stats::mean(&prods);
        let se = stats::sample_sd(&prods) / (prods.len() as f64).sqrt();
        assert!((m - 0.5).abs() < 3.0 * se, "{m} {se}");
        let cross: Vec<f64> = s.truth.iter().map(|t| t.mu * t.eps).collect();
        let se = stats::sample_sd(&cross) / (cross.len() as f64).sqrt();
        assert!(stats::mean(&cross).abs() < 3.0 * se);
    }

    #[test]
    fn two_group_l_drives_positive_interaction() {
        let mut cfg = DgpConfig::gaussian(
            400,
            100,
            LProcess::TwoGroup {
                low: 0.0,
                high: 0.8,
                fraction_high: 0.5,
            },
            21,
        );
        cfg.l_level = LLevel::Entity;
        let s = generate(&cfg).unwrap();
        let check = prop1_oracle(&s, &prop1_spec()).unwrap();
        assert!(check.lhs > 5.0 * check.lhs_se, "{check:?}");
        let f = fit(&prop1_spec(), &s.panel).unwrap();
        let b3 = f.estimate(&Term::product(&[Column::Llm, Column::Lap])).unwrap();
        assert!(b3.coef > 0.0 && b3.t > 5.0);

        // Only the L = 0.8 entities contribute to the structural side.
        let contribution = |t: &Truth| t.l * t.l * conditional_eps_variance(&cfg, t.mu_hat, t.l);
        assert!(s.truth.iter().filter(|t| t.l == 0.0).all(|t| contribution(t) == 0.0));
        let high: f64 = s.truth.iter().filter(|t| t.l > 0.0).map(contribution).sum();
        assert!((high / s.truth.len() as f64 - check.rhs).abs() < 1e-12);
    }
}
