//! Aligned-text regression tables.
//!
//! One column per fit. Each coefficient carries significance stars and sits
//! above its parenthesized t-statistic; fixed-effect indicators, R² and the
//! observation count close the table.

use serde::{Deserialize, Serialize};

use crate::panel::Column;
use crate::regression::{FeDim, FitResult, Term};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Printed under each column number.
    pub dependent_label: String,
    pub entity_fe_label: String,
    pub time_fe_label: String,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            dependent_label: "r(t+1)".into(),
            entity_fe_label: "Firm FE".into(),
            time_fe_label: "Date FE".into(),
        }
    }
}

/// `***`, `**`, `*` at the 1%, 5% and 10% two-sided levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Three decimals, or three significant figures below 0.1 in magnitude.
pub fn format_coef(x: f64) -> String {
    let a = x.abs();
    if a >= 0.1 || a == 0.0 || !a.is_finite() {
        format!("{x:.3}")
    } else {
        let digits = (2 - a.log10().floor() as i32).max(0) as usize;
        format!("{x:.digits$}")
    }
}

/// Integer with comma thousands separators.
pub fn format_count(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn column_label(c: Column) -> &'static str {
    match c {
        Column::Outcome => "Outcome",
        Column::Llm => "LLM",
        Column::Lap => "LAP",
        Column::Confidence => "Confidence",
        Column::FirstTokenProb => "p(first token)",
        Column::Small => "Small",
    }
}

pub fn term_label(term: &Term) -> String {
    if term.is_intercept() {
        return "Constant".into();
    }
    term.0.iter().map(|&c| column_label(c)).collect::<Vec<_>>().join(" × ")
}

fn width(s: &str) -> usize {
    s.chars().count()
}

fn pad_left(s: &str, w: usize) -> String {
    format!("{}{s}", " ".repeat(w.saturating_sub(width(s))))
}

fn pad_right(s: &str, w: usize) -> String {
    format!("{s}{}", " ".repeat(w.saturating_sub(width(s))))
}

pub fn render_table(fits: &[FitResult], options: &ReportOptions) -> String {
    let mut terms: Vec<Term> = Vec::new();
    for f in fits {
        for t in &f.terms {
            if !t.is_intercept() && !terms.contains(t) {
                terms.push(t.clone());
            }
        }
    }
    if fits.iter().any(|f| f.terms.iter().any(Term::is_intercept)) {
        terms.push(Term::intercept());
    }

    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    rows.push((
        String::new(),
        (1..=fits.len()).map(|i| format!("({i})")).collect(),
    ));
    rows.push((String::new(), vec![options.dependent_label.clone(); fits.len()]));
    let rule_after_header = rows.len();
    for t in &terms {
        let mut coef = Vec::new();
        let mut tstat = Vec::new();
        for f in fits {
            match f.index_of(t) {
                Some(i) => {
                    coef.push(format!("{}{}", format_coef(f.coefficients[i]), stars(f.p_values[i])));
                    tstat.push(format!("({:.2})", f.t_stats[i]));
                }
                None => {
                    coef.push(String::new());
                    tstat.push(String::new());
                }
            }
        }
        rows.push((term_label(t), coef));
        rows.push((String::new(), tstat));
    }
    let rule_before_footer = rows.len();
    for (dim, label) in [
        (FeDim::Entity, &options.entity_fe_label),
        (FeDim::Time, &options.time_fe_label),
    ] {
        if fits.iter().any(|f| f.fe.contains(&dim)) {
            rows.push((
                label.clone(),
                fits.iter()
                    .map(|f| if f.fe.contains(&dim) { "Yes" } else { "No" }.to_string())
                    .collect(),
            ));
        }
    }
    rows.push(("R²".into(), fits.iter().map(|f| format!("{:.3}", f.r_squared_overall)).collect()));
    rows.push(("N".into(), fits.iter().map(|f| format_count(f.n_obs)).collect()));

    let label_w = rows.iter().map(|r| width(&r.0)).max().unwrap_or(0);
    let cell_w = rows
        .iter()
        .flat_map(|r| r.1.iter().map(|c| width(c)))
        .max()
        .unwrap_or(0);
    let total = label_w + fits.len() * (cell_w + 2);
    let rule = "-".repeat(total);

    let mut out = String::new();
    out.push_str(&rule);
    out.push('\n');
    for (i, (label, cells)) in rows.iter().enumerate() {
        if i == rule_after_header || i == rule_before_footer {
            out.push_str(&rule);
            out.push('\n');
        }
        let mut line = pad_right(label, label_w);
        for c in cells {
            line.push_str("  ");
            line.push_str(&pad_left(c, cell_w));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out.push_str(&rule);
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_formatting() {
        assert_eq!(format_coef(0.210), "0.210");
        assert_eq!(format_coef(0.00117), "0.00117");
        assert_eq!(format_coef(-1.297), "-1.297");
        assert_eq!(format_coef(0.0733), "0.0733");
        assert_eq!(format_coef(0.0), "0.000");
    }

    #[test]
    fn thousands() {
        assert_eq!(format_count(91361), "91,361");
        assert_eq!(format_count(999), "999");
        assert_eq!(format_count(1_000_000), "1,000,000");
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(stars(0.009), "***");
        assert_eq!(stars(0.01), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.5), "");
    }

    #[test]
    fn labels() {
        assert_eq!(term_label(&Term::product(&[Column::Llm, Column::Lap, Column::Small])), "LLM × LAP × Small");
        assert_eq!(term_label(&Term::intercept()), "Constant");
    }
}
