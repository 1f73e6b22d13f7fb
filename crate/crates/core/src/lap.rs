//! Lookahead Propensity (MIN-K% PROB) scoring.
//!
//! LAP is the geometric mean probability of the K% least likely prompt
//! tokens: `exp(mean(logprob over S_K))`, where `S_K` holds the
//! `max(1, floor(K/100 * N))` tokens with the smallest log-probability.
//! Ties at the selection boundary are broken by token position so the
//! chosen subset is deterministic.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Percentage used when none is given.
pub const DEFAULT_K_PERCENT: f64 = 20.0;

/// One prompt token exactly as the inference adapter writes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawToken {
    pub position: u32,
    pub text: String,
    /// `null` is only legal at position 1, which has no conditioning context.
    pub logprob: Option<f64>,
    #[serde(default)]
    pub special: bool,
}

/// One line of the ScoredPrompt JSONL wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPrompt {
    pub prompt_id: String,
    pub model_id: String,
    pub tokens: Vec<RawToken>,
    pub response_text: String,
    #[serde(default)]
    pub first_token_logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    /// 1-based position within the prompt.
    pub position: u32,
    pub text: String,
    /// Natural-log conditional probability, finite and `<= 0`.
    pub logprob: f64,
}

/// A prompt's scorable tokens plus the model's completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrompt {
    pub prompt_id: String,
    pub model_id: String,
    pub tokens: Vec<TokenScore>,
    pub response_text: String,
    pub first_token_logprob: Option<f64>,
}

impl ScoredPrompt {
    /// Applies the ingestion rules to a wire record: tokens flagged `special`
    /// are dropped, and an unscored first position is omitted. A missing
    /// score anywhere else is malformed.
    pub fn from_raw(raw: RawPrompt) -> Result<Self> {
        let mut tokens = Vec::with_capacity(raw.tokens.len());
        for tok in raw.tokens {
            if tok.special {
                continue;
            }
            match tok.logprob {
                Some(lp) => tokens.push(TokenScore {
                    position: tok.position,
                    text: tok.text,
                    logprob: lp,
                }),
                None if tok.position == 1 => {}
                None => {
                    return Err(Error::MalformedScore {
                        prompt_id: raw.prompt_id,
                        position: tok.position,
                        reason: "missing log-probability".into(),
                    })
                }
            }
        }
        Ok(ScoredPrompt {
            prompt_id: raw.prompt_id,
            model_id: raw.model_id,
            tokens,
            response_text: raw.response_text,
            first_token_logprob: raw.first_token_logprob,
        })
    }

    /// Checks the non-empty, finite, non-positive and ordering invariants.
    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::EmptyPrompt {
                prompt_id: self.prompt_id.clone(),
            });
        }
        let mut prev: Option<u32> = None;
        for tok in &self.tokens {
            let malformed = |reason: &str| Error::MalformedScore {
                prompt_id: self.prompt_id.clone(),
                position: tok.position,
                reason: reason.to_string(),
            };
            if !tok.logprob.is_finite() {
                return Err(malformed("non-finite log-probability"));
            }
            if tok.logprob > 0.0 {
                return Err(malformed("positive log-probability"));
            }
            if prev.is_some_and(|p| tok.position <= p) {
                return Err(malformed("positions not strictly increasing"));
            }
            prev = Some(tok.position);
        }
        if let Some(lp) = self.first_token_logprob {
            if !lp.is_finite() || lp > 0.0 {
                return Err(Error::MalformedScore {
                    prompt_id: self.prompt_id.clone(),
                    position: 0,
                    reason: "first generated token log-probability out of range".into(),
                });
            }
        }
        Ok(())
    }

    /// Probability of the first generated token, if the runtime reported it.
    pub fn first_token_prob(&self) -> Option<f64> {
        self.first_token_logprob.map(f64::exp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapScore {
    /// Probability in (0, 1].
    pub value: f64,
    pub k_percent: f64,
    pub n_selected: usize,
    pub n_total: usize,
    /// Positions of the tokens in `S_K`, in selection order.
    pub selected_positions: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LapUnit {
    Raw,
    Percent,
    PerTenThousand,
}

/// `max(1, floor(k/100 * n))`.
pub fn bottom_k_size(k_percent: f64, n_total: usize) -> usize {
    // k * n is exact for integral k, which avoids 0.7 * 10 = 6.999...
    let raw = (k_percent * n_total as f64 / 100.0 + 1e-9).floor() as usize;
    raw.clamp(1, n_total.max(1))
}

/// Indices into `tokens` of the `count` least likely tokens, ordered by
/// `(logprob, position)`.
pub fn select_bottom_k(tokens: &[TokenScore], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| {
        tokens[a]
            .logprob
            .total_cmp(&tokens[b].logprob)
            .then(tokens[a].position.cmp(&tokens[b].position))
    });
    order.truncate(count);
    order
}

pub fn compute_lap(prompt: &ScoredPrompt, k_percent: f64) -> Result<LapScore> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidPercent(k_percent));
    }
    prompt.validate()?;

    let n_total = prompt.tokens.len();
    let n_selected = bottom_k_size(k_percent, n_total);
    let chosen = select_bottom_k(&prompt.tokens, n_selected);

    // Averaging offsets from the first selected value keeps a run of equal
    // logprobs exact.
    let base = prompt.tokens[chosen[0]].logprob;
    let offset: f64 = chosen.iter().map(|&i| prompt.tokens[i].logprob - base).sum();
    let value = (base + offset / n_selected as f64).exp();

    Ok(LapScore {
        value,
        k_percent,
        n_selected,
        n_total,
        selected_positions: chosen.iter().map(|&i| prompt.tokens[i].position).collect(),
    })
}

/// Scores every prompt, failing the whole batch on the first bad one.
/// Output order follows input order.
pub fn batch_lap(prompts: &[ScoredPrompt], k_percent: f64) -> Result<Vec<(String, LapScore)>> {
    let mut seen = HashSet::with_capacity(prompts.len());
    for p in prompts {
        if !seen.insert(p.prompt_id.as_str()) {
            return Err(Error::DuplicateId(p.prompt_id.clone()));
        }
    }
    let scored: Vec<Result<LapScore>> = prompts
        .par_iter()
        .map(|p| compute_lap(p, k_percent))
        .collect();
    prompts
        .iter()
        .zip(scored)
        .map(|(p, s)| s.map(|s| (p.prompt_id.clone(), s)))
        .collect()
}

pub fn rescale_lap(score: &LapScore, unit: LapUnit) -> f64 {
    match unit {
        LapUnit::Raw => score.value,
        LapUnit::Percent => score.value * 100.0,
        LapUnit::PerTenThousand => score.value * 1e4,
    }
}

/// One row of the LAP CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LapRow {
    pub prompt_id: String,
    pub lap_raw: f64,
    pub lap_percent: f64,
    pub lap_e4: f64,
    pub n_tokens: usize,
    pub n_selected: usize,
}

impl LapRow {
    pub fn new(prompt_id: &str, score: &LapScore) -> Self {
        LapRow {
            prompt_id: prompt_id.to_string(),
            lap_raw: rescale_lap(score, LapUnit::Raw),
            lap_percent: rescale_lap(score, LapUnit::Percent),
            lap_e4: rescale_lap(score, LapUnit::PerTenThousand),
            n_tokens: score.n_total,
            n_selected: score.n_selected,
        }
    }
}

/// Reads ScoredPrompt JSONL, applying the ingestion rules line by line.
/// Blank lines are skipped.
pub fn read_prompts_jsonl<R: BufRead>(reader: R) -> Result<Vec<ScoredPrompt>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("reading prompts", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPrompt = serde_json::from_str(&line)
            .map_err(|e| Error::io(format!("prompts line {}", lineno + 1), e))?;
        out.push(ScoredPrompt::from_raw(raw)?);
    }
    Ok(out)
}

pub fn write_lap_csv<W: Write>(writer: W, rows: &[LapRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| Error::io("writing LAP CSV", e))?;
    }
    w.flush().map_err(|e| Error::io("writing LAP CSV", e))
}

pub fn read_lap_csv<R: std::io::Read>(reader: R) -> Result<Vec<LapRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<Vec<LapRow>, _>>()
        .map_err(|e| Error::io("reading LAP CSV", e))
}
