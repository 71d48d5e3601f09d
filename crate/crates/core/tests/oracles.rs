//! Metrics and losses against independent brute-force implementations.

use clif_vqa::eval::{krocc, plcc, srocc};
use clif_vqa::fusion::{loss_lin, loss_mon, total_loss};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Rank of each value = 1 + (#smaller) + (#equal − 1)/2.
fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Tau-b by enumerating all pairs.
fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tie_x += 1.0;
            } else if dy == 0.0 {
                tie_y += 1.0;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1.0;
            } else {
                disc += 1.0;
            }
        }
    }
    (conc - disc) / ((conc + disc + tie_x) * (conc + disc + tie_y)).sqrt()
}

fn loss_mon_oracle(pred: &[f64], gt: &[f64]) -> f64 {
    let m = pred.len() as f64;
    let sign = |a: f64, b: f64| if a >= b { 1.0 } else { -1.0 };
    let mut s = 0.0;
    for i in 0..pred.len() {
        for j in 0..pred.len() {
            s += f64::max(0.0, (gt[i] - gt[j]).abs() - sign(gt[i], gt[j]) * (pred[i] - pred[j]));
        }
    }
    s / (m * m)
}

/// Random vector that ties often: values drawn from a small grid half the
/// time, continuous otherwise.
fn draw(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    if rng.gen_bool(0.5) {
        (0..n).map(|_| rng.gen_range(0..6) as f64).collect()
    } else {
        (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect()
    }
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

#[test]
fn metrics_match_brute_force_on_200_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 200 {
        let n = rng.gen_range(2..=50);
        let (x, y) = (draw(&mut rng, n), draw(&mut rng, n));
        if is_constant(&x) || is_constant(&y) {
            assert!(srocc(&x, &y).is_err() && plcc(&x, &y).is_err() && krocc(&x, &y).is_err());
            continue;
        }
        let s = pearson_oracle(&rank_oracle(&x), &rank_oracle(&y));
        assert!((srocc(&x, &y).unwrap() - s).abs() <= 1e-9, "srocc n={n}");
        assert!((plcc(&x, &y).unwrap() - pearson_oracle(&x, &y)).abs() <= 1e-9, "plcc n={n}");
        assert!((krocc(&x, &y).unwrap() - kendall_oracle(&x, &y)).abs() <= 1e-9, "krocc n={n}");
        checked += 1;
    }
}

#[test]
fn srocc_tied_example_matches_oracle() {
    let (x, y) = ([1.0, 2.0, 2.0, 3.0], [1.0, 3.0, 2.0, 4.0]);
    let want = pearson_oracle(&rank_oracle(&x), &rank_oracle(&y));
    assert!((srocc(&x, &y).unwrap() - want).abs() < 1e-12);
}

#[test]
fn loss_worked_examples() {
    assert_eq!(loss_mon(&[0.4, 0.9, 0.1], &[0.4, 0.9, 0.1]).unwrap(), 0.0);
    assert_eq!(loss_mon(&[3.0, 1.0], &[1.0, 3.0]).unwrap(), 2.0);
    assert_eq!(loss_mon(&[0.0, 5.0], &[1.0, 3.0]).unwrap(), 0.0);
    let gt = [1.0, 4.0, 2.0, 8.0];
    let affine: Vec<f64> = gt.iter().map(|g| 2.0 * g + 5.0).collect();
    assert!(loss_lin(&affine, &gt).unwrap().abs() <= 1e-9);
    let neg: Vec<f64> = gt.iter().map(|g| -g).collect();
    assert!((loss_lin(&neg, &gt).unwrap() - 1.0).abs() <= 1e-9);
    assert!((loss_lin(&[1.0f64, 1.0, 2.0, 2.0], &[1.0, 2.0, 1.0, 2.0]).unwrap() - 0.5).abs() <= 1e-9);
    assert_eq!(total_loss(&[3.0, 1.0], &[1.0, 3.0], 1.0, 1.0).unwrap(), 3.0);
}

#[test]
fn losses_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(2..=20);
        let (p, g) = (draw(&mut rng, n), draw(&mut rng, n));
        assert!((loss_mon(&p, &g).unwrap() - loss_mon_oracle(&p, &g)).abs() <= 1e-12);
        if !is_constant(&p) && !is_constant(&g) {
            let want = (1.0 - pearson_oracle(&p, &g)) / 2.0;
            assert!((loss_lin(&p, &g).unwrap() - want).abs() <= 1e-9);
        }
    }
}

/// Values on a 1/1024 grid, so shifts are exact in floating point.
fn dyadic(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec((-4096i32..4096).prop_map(|k| k as f64 / 1024.0), len)
}

proptest! {
    #[test]
    fn loss_mon_is_shift_invariant(pg in (2usize..16).prop_flat_map(|n| (dyadic(n..n + 1), dyadic(n..n + 1))), k in -4096i32..4096) {
        let (p, g) = pg;
        let c = k as f64 / 1024.0;
        let shifted: Vec<f64> = p.iter().map(|v| v + c).collect();
        prop_assert_eq!(loss_mon(&shifted, &g).unwrap(), loss_mon(&p, &g).unwrap());
        prop_assert!(loss_mon(&p, &g).unwrap() >= 0.0);
    }

    #[test]
    fn loss_lin_is_affine_invariant(
        pg in (3usize..20).prop_flat_map(|n| (proptest::collection::vec(-5.0f64..5.0, n), proptest::collection::vec(-5.0f64..5.0, n))),
        s in 0.01f64..100.0,
        c in -100.0f64..100.0,
    ) {
        let (p, g) = pg;
        prop_assume!(!is_constant(&p) && !is_constant(&g));
        let moved: Vec<f64> = p.iter().map(|v| s * v + c).collect();
        let (a, b) = (loss_lin(&p, &g).unwrap(), loss_lin(&moved, &g).unwrap());
        prop_assert!((a - b).abs() <= 1e-6, "{} vs {}", a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn srocc_is_invariant_under_increasing_maps(xs in proptest::collection::vec(1u32..1000, 2..40), ys in proptest::collection::vec(1u32..1000, 2..40)) {
        let n = xs.len().min(ys.len());
        let x: Vec<f64> = xs[..n].iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = ys[..n].iter().map(|&v| v as f64).collect();
        prop_assume!(!is_constant(&x) && !is_constant(&y));
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        let logged: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        prop_assert_eq!(srocc(&cubed, &logged).unwrap(), srocc(&x, &y).unwrap());
    }

    #[test]
    fn metrics_are_symmetric(xs in proptest::collection::vec(-10.0f64..10.0, 2..30), ys in proptest::collection::vec(-10.0f64..10.0, 2..30)) {
        let n = xs.len().min(ys.len());
        let (x, y) = (&xs[..n], &ys[..n]);
        prop_assume!(!is_constant(x) && !is_constant(y));
        prop_assert!((srocc(x, y).unwrap() - srocc(y, x).unwrap()).abs() < 1e-12);
        prop_assert!((plcc(x, y).unwrap() - plcc(y, x).unwrap()).abs() < 1e-12);
        prop_assert!((krocc(x, y).unwrap() - krocc(y, x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn plcc_is_affine_invariant(xs in proptest::collection::vec(-10.0f64..10.0, 3..30), s in 0.1f64..10.0, c in -10.0f64..10.0) {
        prop_assume!(!is_constant(&xs));
        let y: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v * v + i as f64).collect();
        prop_assume!(!is_constant(&y));
        let moved: Vec<f64> = xs.iter().map(|v| s * v + c).collect();
        prop_assert!((plcc(&moved, &y).unwrap() - plcc(&xs, &y).unwrap()).abs() <= 1e-9);
    }
}
