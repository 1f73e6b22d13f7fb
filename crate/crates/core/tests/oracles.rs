mod common;

use common::*;
use lapdetect::lap::{bottom_k_size, compute_lap};
use lapdetect::panel::Column;
use lapdetect::regression::{fit, fwl_residualize, partial_covariance, ClusterDim, FeDim, RegressionSpec, Term};

fn eq6_terms() -> Vec<Term> {
    vec![
        Term::single(Column::Llm),
        Term::single(Column::Lap),
        Term::product(&[Column::Llm, Column::Lap]),
    ]
}

fn x_cols(p: &RandomPanel) -> Vec<Vec<f64>> {
    let obs = &p.panel.observations;
    vec![
        obs.iter().map(|o| o.llm).collect(),
        obs.iter().map(|o| o.lap).collect(),
        obs.iter().map(|o| o.llm * o.lap).collect(),
    ]
}

fn y_col(p: &RandomPanel) -> Vec<f64> {
    p.panel.observations.iter().map(|o| o.outcome).collect()
}

#[test]
fn lap_matches_subset_enumeration() {
    let mut r = rng(1);
    for i in 0..300 {
        let prompt = random_prompt(&mut r, i);
        for k in [5u32, 20, 33, 50, 100] {
            let got = compute_lap(&prompt, k as f64).unwrap();
            let (positions, value) = lap_by_enumeration(&prompt.tokens, k);
            let mut chosen = got.selected_positions.clone();
            chosen.sort_unstable();
            assert_eq!(chosen, positions, "prompt {i} k {k}");
            assert!((got.value - value).abs() <= 1e-12);
            let m = bottom_k_size(k as f64, prompt.tokens.len());
            let sum: f64 = got.value.ln() * m as f64;
            assert!(sum <= min_subset_sum(&prompt.tokens, m) + 1e-9);
        }
    }
}

#[test]
fn two_way_fe_matches_dummy_regression() {
    let mut r = rng(2);
    for _ in 0..25 {
        let p = random_panel(&mut r, 300);
        let spec = RegressionSpec::new(Column::Outcome, eq6_terms()).with_fe(&[FeDim::Entity, FeDim::Time]);
        let f = fit(&spec, &p.panel).unwrap();
        let dense = DenseProblem::new(y_col(&p), &x_cols(&p), &[p.entity.clone(), p.time.clone()]);
        for (a, b) in f.coefficients.iter().zip(dense.coefficients()) {
            assert!(rel_close(*a, b, 1e-8), "{a} vs {b}");
        }
    }
}

#[test]
fn no_fe_fit_matches_dense_with_intercept() {
    let mut r = rng(3);
    let p = random_panel(&mut r, 200);
    let f = fit(&RegressionSpec::new(Column::Outcome, eq6_terms()), &p.panel).unwrap();
    let dense = DenseProblem::new(y_col(&p), &x_cols(&p), &[]);
    for (a, b) in f.coefficients.iter().zip(dense.coefficients()) {
        assert!(rel_close(*a, b, 1e-10));
    }
}

#[test]
fn sandwich_matches_explicit_cluster_blocks() {
    let mut r = rng(4);
    for case in 0..20 {
        let p = random_panel(&mut r, 250);
        let fe: &[FeDim] = match case % 3 {
            0 => &[],
            1 => &[FeDim::Time],
            _ => &[FeDim::Entity, FeDim::Time],
        };
        let fe_labels: Vec<Vec<usize>> = fe
            .iter()
            .map(|d| match d {
                FeDim::Entity => p.entity.clone(),
                FeDim::Time => p.time.clone(),
            })
            .collect();
        let dense = DenseProblem::new(y_col(&p), &x_cols(&p), &fe_labels);
        for cluster in [None, Some(ClusterDim::Time), Some(ClusterDim::Entity)] {
            let mut spec = RegressionSpec::new(Column::Outcome, eq6_terms()).with_fe(fe);
            spec.cluster = cluster;
            let f = fit(&spec, &p.panel).unwrap();
            let labels = match cluster {
                None => None,
                Some(ClusterDim::Entity) => Some(p.entity.as_slice()),
                _ => Some(p.time.as_slice()),
            };
            let v = dense.sandwich(labels);
            let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for i in 0..v.nrows() {
                for j in 0..v.ncols() {
                    assert!((f.vcov[i][j] - v[(i, j)]).abs() <= 1e-10 * scale, "case {case} {cluster:?} rel {}", (f.vcov[i][j] - v[(i, j)]).abs() / scale);
                }
            }
        }
    }
}

#[test]
fn fwl_ratio_equals_joint_coefficient() {
    let mut r = rng(5);
    for _ in 0..20 {
        let p = random_panel(&mut r, 400);
        let spec = RegressionSpec::new(Column::Outcome, eq6_terms()).with_fe(&[FeDim::Entity, FeDim::Time]);
        let f = fit(&spec, &p.panel).unwrap();
        for t in eq6_terms() {
            let pc = partial_covariance(&fwl_residualize(&spec, &t, &p.panel).unwrap()).unwrap();
            let joint = f.coef(&t).unwrap();
            assert!(rel_close(pc.ratio, joint, 1e-8), "{t}: {} vs {joint}", pc.ratio);
        }
    }
}

#[test]
fn single_regressor_fwl_is_simple_slope() {
    let mut r = rng(6);
    let p = random_panel(&mut r, 100);
    let spec = RegressionSpec::new(Column::Outcome, vec![Term::single(Column::Llm)]);
    let pair = fwl_residualize(&spec, &Term::single(Column::Llm), &p.panel).unwrap();
    let x: Vec<f64> = p.panel.observations.iter().map(|o| o.llm).collect();
    let y = y_col(&p);
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    assert!(rel_close(partial_covariance(&pair).unwrap().ratio, slope, 1e-12));
}

#[test]
fn orthogonal_focal_term_is_left_unchanged() {
    // llm takes +-1 within each lap level, so it is orthogonal to the
    // intercept and to lap.
    let mut obs = Vec::new();
    for (i, lap) in [0.2, 0.4, 0.6, 0.8].iter().enumerate() {
        for (j, llm) in [1.0, -1.0].iter().enumerate() {
            obs.push(lapdetect::PanelObservation {
                obs_id: format!("{i}{j}"),
                entity_id: "a".into(),
                time_id: format!("{i}{j}"),
                cluster_id: String::new(),
                outcome: (i + j) as f64,
                llm: *llm,
                lap: *lap,
                confidence: None,
                first_token_prob: None,
                small: None,
            });
        }
    }
    let panel = lapdetect::PanelDataset::new(obs);
    let spec = RegressionSpec::new(Column::Outcome, vec![Term::single(Column::Llm), Term::single(Column::Lap)]);
    let pair = fwl_residualize(&spec, &Term::single(Column::Llm), &panel).unwrap();
    for (r, o) in pair.x_resid.iter().zip(&panel.observations) {
        assert!((r - o.llm).abs() < 1e-10);
    }
}

