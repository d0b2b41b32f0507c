//! Decoders against an independent receiver: stack every observation of
//! receiver `j` into one linear system over all `2K` symbols and take the
//! minimum-norm least-squares solution. Whenever receiver `j`'s own symbols
//! are identifiable from its observations, that solution must agree with
//! the structured decoders.

use nalgebra::DMatrix;
use num_complex::Complex64;

use ergodic_ia::channel::SystemConfig;
use ergodic_ia::delayed_csit::{run_episode_csit, CsitOptions, EpisodeCsit};
use ergodic_ia::output_feedback::{run_episode_outputfb, EpisodeOutputFb, OutputFbOptions};

type Row = Vec<Complex64>;

fn zero_row(k: usize) -> Row {
    vec![Complex64::new(0.0, 0.0); 2 * k]
}

/// Rows of `Y_j(t1)` and `Y_j(t2)` over `[x(t1); x(t2)]`.
fn phase1_rows(h1: &DMatrix<Complex64>, h2: &DMatrix<Complex64>, j: usize) -> (Row, Row) {
    let k = h1.nrows();
    let mut r1 = zero_row(k);
    let mut r2 = zero_row(k);
    for i in 0..k {
        r1[i] = h1[(j, i)];
        r2[k + i] = h2[(j, i)];
    }
    (r1, r2)
}

/// Min-norm solution and a flag per unknown saying whether it is
/// identifiable (its unit vector lies in the row space).
fn pinv_solve(rows: &[Row], y: &[Complex64]) -> (Vec<Complex64>, Vec<bool>) {
    let n = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    let pinv = a.clone().pseudo_inverse(1e-10).unwrap();
    let x = &pinv * DMatrix::from_column_slice(y.len(), 1, y);
    let projector = &pinv * &a;
    let identifiable = (0..n)
        .map(|i| {
            (0..n).all(|c| {
                let want = if c == i { 1.0 } else { 0.0 };
                (projector[(i, c)] - Complex64::new(want, 0.0)).norm() < 1e-8
            })
        })
        .collect();
    (x.iter().copied().collect(), identifiable)
}

fn csit_system(ep: &EpisodeCsit, j: usize) -> (Vec<Row>, Vec<Complex64>) {
    let p1 = &ep.phase1;
    let k = p1.x_t1.values.len();
    let (r1, r2) = phase1_rows(p1.pair.h1.entries(), p1.pair.h2.entries(), j);
    let mut rows = vec![r1, r2];
    let mut y = vec![p1.y_t1[j].value(), p1.y_t2[j].value()];
    for s in 0..k {
        let g = ep.phase2_channels[s].gain(j, s) * ep.phase2_gain;
        let mut row = zero_row(k);
        row[s] = g;
        row[k + s] = -g;
        rows.push(row);
        y.push(ep.phase2_received[j][s].value());
    }
    (rows, y)
}

fn outputfb_system(ep: &EpisodeOutputFb, j: usize) -> (Vec<Row>, Vec<Complex64>) {
    let p1 = &ep.phase1;
    let k = p1.x_t1.values.len();
    let (h1, h2) = (p1.pair.h1.entries(), p1.pair.h2.entries());
    let c = p1.pair.scale.value();
    let (r1, r2) = phase1_rows(h1, h2, j);
    let mut rows = vec![r1, r2];
    let mut y = vec![p1.y_t1[j].value(), p1.y_t2[j].value()];
    for s in 0..k {
        // Transmitter s: (Y_s(t1) + Y_s(t2)/c) / H_ss(t1) - 2 X_s(t2)
        let (a1, a2) = phase1_rows(h1, h2, s);
        let mut payload: Row = a1.iter().zip(&a2).map(|(u, v)| (u + v / c) / h1[(s, s)]).collect();
        payload[k + s] -= Complex64::new(2.0, 0.0);
        let g = ep.phase2_channels[s].gain(j, s) * ep.phase2_gain;
        rows.push(payload.iter().map(|p| p * g).collect());
        y.push(ep.phase2_received[j][s].value());
    }
    (rows, y)
}

#[test]
fn delayed_csit_matches_stacked_pseudo_inverse_k6() {
    let k = 6;
    let config = SystemConfig::noiseless(k, 61).unwrap();
    for stream in 0..30 {
        let out = run_episode_csit(&config, &CsitOptions::default(), &mut config.rng(stream)).unwrap().unwrap();
        for j in 0..k {
            let (rows, y) = csit_system(&out.episode, j);
            let (x, ok) = pinv_solve(&rows, &y);
            assert!(ok[j] && ok[k + j], "own symbols not identifiable at j={j}");
            assert!((x[j] - out.decoded[j].x_t1_hat).norm() < 1e-8);
            assert!((x[k + j] - out.decoded[j].x_t2_hat).norm() < 1e-8);
        }
    }
}

#[test]
fn output_feedback_matches_stacked_pseudo_inverse_k5() {
    let k = 5;
    let config = SystemConfig::noiseless(k, 51).unwrap();
    for stream in 0..30 {
        let Ok(Some(out)) = run_episode_outputfb(&config, &OutputFbOptions::default(), &mut config.rng(stream)) else {
            continue;
        };
        for j in 0..k {
            let (rows, y) = outputfb_system(&out.episode, j);
            let (x, ok) = pinv_solve(&rows, &y);
            assert!(ok[j] && ok[k + j], "own symbols not identifiable at j={j}");
            assert!((x[j] - out.decoded[j].x_t1_hat).norm() < 1e-8);
            assert!((x[k + j] - out.decoded[j].x_t2_hat).norm() < 1e-8);
        }
    }
}

#[test]
fn receivers_cannot_resolve_every_symbol() {
    // K + 2 observations against 2K unknowns: the own pair is resolvable,
    // the others are not all.
    let k = 4;
    let config = SystemConfig::noiseless(k, 3).unwrap();
    let out = run_episode_outputfb(&config, &OutputFbOptions::default(), &mut config.rng(0)).unwrap().unwrap();
    let (rows, y) = outputfb_system(&out.episode, 0);
    assert_eq!(rows.len(), k + 2);
    let (_, ok) = pinv_solve(&rows, &y);
    assert!(ok[0] && ok[k]);
    assert!(ok.iter().filter(|&&b| b).count() < 2 * k);
}
