mod common;

use dimml_core::dimsep::{class_centroids, l2norm_scores};
use dimml_core::inference::certainty;
use dimml_core::losses::{cm_dist_loss, cross_entropy};
use dimml_core::numerics::{ops, Tape, Tensor};
use dimml_core::trainer::{LrSchedule, OptimizerState};

use common::{random_labels, random_matrix};

fn direct_softmax(row: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = row.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[test]
fn cross_entropy_matches_direct_formula() {
    for seed in 0..20 {
        let z = random_matrix(6, 4, seed, "z");
        let y = random_labels(6, 4, seed, "y");
        let want = (0..6).map(|r| -direct_softmax(z.row(r))[y[r]].ln()).sum::<f64>() / 6.0;
        let mut tape = Tape::new();
        let v = tape.constant(z);
        let got = cross_entropy(&mut tape, v, &y).unwrap();
        assert!((tape.value(got).item() - want).abs() < 1e-12);
    }
}

#[test]
fn distillation_matches_scaled_kl() {
    for seed in 0..20 {
        let (zs, zt) = (random_matrix(5, 3, seed, "s"), random_matrix(5, 3, seed, "t"));
        let t = 0.5 + seed as f64 * 0.2;
        let scaled = |z: &Tensor, r: usize| z.row(r).iter().map(|v| v / t).collect::<Vec<_>>();
        let want = (0..5)
            .map(|r| {
                let (p, q) = (direct_softmax(&scaled(&zt, r)), direct_softmax(&scaled(&zs, r)));
                p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>()
            })
            .sum::<f64>()
            / 5.0
            * t
            * t;
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(zs), tape.constant(zt));
        let got = cm_dist_loss(&mut tape, a, b, t).unwrap();
        assert!((tape.value(got).item() - want).abs() < 1e-12);
    }
}

#[test]
fn momentum_sgd_matches_recurrence() {
    let (mu, wd, lr) = (0.9, 1e-2, 0.1);
    let mut opt = OptimizerState::new(mu, wd);
    let mut p = Tensor::vector(vec![1.0, -2.0]).unwrap();
    let grads = [[0.5, 0.25], [-1.0, 2.0], [0.0, 0.125]];
    let (mut q, mut v) = ([1.0, -2.0], [0.0, 0.0]);
    for g in grads {
        opt.sgd_step("p", &mut p, &Tensor::vector(g.to_vec()).unwrap(), lr).unwrap();
        for j in 0..2 {
            v[j] = mu * v[j] + g[j] + wd * q[j];
            q[j] -= lr * v[j];
        }
    }
    assert_eq!(p.data(), &q);
}

#[test]
fn step_schedule_switches_at_decay_epoch() {
    let s = LrSchedule {
        initial: 1e-3,
        decay_epoch: 20,
        decayed: 1e-4,
    };
    assert_eq!(s.lr_at(0), 1e-3);
    assert_eq!(s.lr_at(19), 1e-3);
    assert_eq!(s.lr_at(20), 1e-4);
}

#[test]
fn centroids_and_rms_scores_match_direct_sums() {
    for seed in 0..10 {
        let h = random_matrix(30, 5, seed, "h");
        let y: Vec<usize> = (0..30).map(|j| (j * 7 + seed as usize) % 3).collect();
        let table = class_centroids(&h, &y, 3).unwrap();
        for c in 0..3 {
            let rows: Vec<usize> = (0..30).filter(|&j| y[j] == c).collect();
            for m in 0..5 {
                let want = rows.iter().map(|&j| h.get(j, m)).sum::<f64>() / rows.len() as f64;
                assert!((table.centroids.get(c, m) - want).abs() < 1e-12);
            }
        }
        let rms = l2norm_scores(&h).unwrap();
        for m in 0..5 {
            let want = ((0..30).map(|j| h.get(j, m).powi(2)).sum::<f64>() / 30.0).sqrt();
            assert!((rms.scores[m] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn certainty_is_the_top_probability() {
    let z = random_matrix(8, 5, 3, "z");
    let c = certainty(&z).unwrap();
    let p = ops::softmax(&z).unwrap();
    for r in 0..8 {
        let want = direct_softmax(z.row(r)).into_iter().fold(0.0, f64::max);
        assert!((c.data()[r] - want).abs() < 1e-15);
        assert!((p.row(r).iter().copied().fold(0.0, f64::max) - want).abs() < 1e-15);
    }
}
