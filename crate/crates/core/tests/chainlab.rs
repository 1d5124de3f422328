mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use relconv::attribution::{fit_patterns, PatternEstimator};
use relconv::chainlab::*;
use relconv::model::Preset;
use relconv::{Error, Matrix, Tensor};

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.data())
}

/// σ1/σ2 from nalgebra's SVD.
fn oracle_ratio(a: &Matrix) -> f64 {
    let mut s: Vec<f64> = na(a).singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s[0] / s[1]
}

/// Cosines between all column pairs, by brute force.
fn pair_cosines(a: &Matrix) -> Vec<((usize, usize), f64)> {
    let cols: Vec<Vec<f64>> = (0..a.cols()).map(|j| a.column(j)).collect();
    let mut out = Vec::new();
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let d: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
            let ni: f64 = cols[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            let nj: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            out.push(((i, j), d / (ni * nj)));
        }
    }
    out
}

fn random_nonneg(g: &mut impl Rng, r: usize, c: usize) -> Matrix {
    let data: Vec<f64> = (0..r * c).map(|_| g.random_range(0.0..1.0)).collect();
    Matrix::new(r, c, data).unwrap()
}

#[test]
fn sn_of_identity_chain_is_zero() {
    let chain = vec![Matrix::identity(4); 5];
    assert_eq!(sn_sequence(&chain).unwrap(), vec![0.0; 5]);
}

#[test]
fn sn_jumps_to_one_at_a_rank_one_factor() {
    let mut g = rng(30);
    let mut chain: Vec<Matrix> = (0..3).map(|_| random_nonneg(&mut g, 5, 5)).collect();
    let (c, gamma) = ([1.0, 2.0, 0.5, 1.0, 3.0], [0.2, 1.0, 0.7, 0.1, 0.4]);
    chain.push(Matrix::from_fn(5, 5, |i, j| c[i] * gamma[j]));
    chain.extend((0..3).map(|_| random_nonneg(&mut g, 5, 5)));
    let s = sn_sequence(&chain).unwrap();
    assert!(s[..3].iter().all(|&v| v < 1.0 - 1e-6));
    assert!(s[3..].iter().all(|&v| (v - 1.0).abs() < 1e-12), "{s:?}");
}

#[test]
fn sn_reports_the_step_with_a_zero_column() {
    let a = m(&[&[1.0, 0.0], &[1.0, 1.0]]);
    let z = m(&[&[1.0, 0.0], &[0.0, 0.0]]);
    let chain = vec![a.clone(), a, z.clone(), z];
    match sn_sequence(&chain) {
        Err(Error::UndefinedAngle(msg)) => assert!(msg.contains("step 3"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(sn_sequence(&[Matrix::identity(2), Matrix::identity(3)]), Err(Error::Contract(_))));
}

#[test]
fn sn_is_monotone_on_non_negative_chains() {
    let mut g = rng(31);
    let mut violations = 0;
    for _ in 0..100 {
        let len = g.random_range(3..10);
        let mut dims: Vec<usize> = (0..=len).map(|_| g.random_range(2..=64)).collect();
        dims[0] = g.random_range(2..=64);
        let chain: Vec<Matrix> = dims.windows(2).map(|d| random_nonneg(&mut g, d[0], d[1])).collect();
        let s = sn_sequence(&chain).unwrap();
        violations += s.windows(2).filter(|w| w[1] < w[0] - 1e-12).count();
    }
    assert_eq!(violations, 0);
}

#[test]
fn sn_matches_brute_force_min_cosine() {
    let mut g = rng(32);
    let chain: Vec<Matrix> = (0..4).map(|_| random_nonneg(&mut g, 6, 6)).collect();
    let s = sn_sequence(&chain).unwrap();
    let mut prod = chain[0].clone();
    for (t, a) in chain.iter().enumerate() {
        if t > 0 {
            prod = naive_matmul(&prod, a);
        }
        let lo = pair_cosines(&prod).into_iter().map(|(_, c)| c).fold(1.0, f64::min);
        assert!((s[t] - lo).abs() < 1e-12);
    }
}

#[test]
fn convergence_conditions_flag_excluded_matrices() {
    let example = m(&[
        &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0],
    ]);
    let d = convergence_conditions(&example, 1e-12).unwrap();
    assert_eq!(d.zero_columns, vec![4, 5]);
    assert_eq!(d.orthogonal_pairs, vec![(2, 3)]);
    assert!(!d.ok());
    assert!(convergence_conditions(&Matrix::from_fn(3, 4, |_, _| 1.0), 1e-12).unwrap().ok());
    let id = convergence_conditions(&Matrix::identity(3), 1e-12).unwrap();
    assert_eq!(id.orthogonal_pairs, vec![(0, 1), (0, 2), (1, 2)]);
    assert!(matches!(convergence_conditions(&m(&[&[1.0, -0.5]]), 1e-12), Err(Error::Contract(_))));
}

#[test]
fn alignment_hand_examples() {
    let d = m(&[&[2.0, 0.0], &[0.0, 1.0]]);
    let r = interlayer_alignment(&[d.clone(), d]).unwrap();
    assert!((r[0] - 2.0).abs() < 1e-12);

    let mut g = rng(33);
    let q = |g: &mut _| {
        let a = random_matrix(g, 5, 5);
        let qr = na(&a).qr();
        let q = qr.q();
        Matrix::from_fn(5, 5, |i, j| q[(i, j)])
    };
    let (q1, q2) = (q(&mut g), q(&mut g));
    let r = interlayer_alignment(&[q1, q2]).unwrap();
    assert!((r[0] - 1.0).abs() < 1e-6, "{r:?}");

    let rank1 = Matrix::from_fn(4, 5, |i, j| (i + 1) as f64 * (j as f64 - 1.5));
    let r = interlayer_alignment(&[rank1, random_matrix(&mut g, 3, 4)]).unwrap();
    assert_eq!(r[0], f64::INFINITY);
    assert!(interlayer_alignment(&[Matrix::identity(3), Matrix::identity(2)]).is_err());
}

#[test]
fn alignment_matches_svd_oracle() {
    let mut g = rng(34);
    let w1 = random_matrix(&mut g, 6, 4);
    let w2 = random_matrix(&mut g, 3, 6);
    let r = interlayer_alignment(&[w1.clone(), w2.clone()]).unwrap();
    // Backward maps Wᵀ = U Σ Vᵀ; T = √Σ1 V1ᵀ U2 √Σ2.
    let svd = |w: &Matrix| {
        let s = na(&w.transpose()).svd(true, true);
        let mut order: Vec<usize> = (0..s.singular_values.len()).collect();
        order.sort_by(|&a, &b| s.singular_values[b].total_cmp(&s.singular_values[a]));
        let u = s.u.unwrap().select_columns(&order);
        let vt = s.v_t.unwrap().select_rows(&order);
        let sv: Vec<f64> = order.iter().map(|&i| s.singular_values[i]).collect();
        (u, sv, vt)
    };
    let (_, s1, vt1) = svd(&w1);
    let (u2, s2, _) = svd(&w2);
    let mut t = &vt1 * &u2;
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            t[(i, j)] *= (s1[i] * s2[j]).sqrt();
        }
    }
    let tm = Matrix::from_fn(t.nrows(), t.ncols(), |i, j| t[(i, j)]);
    assert!((r[0] - oracle_ratio(&tm)).abs() <= 1e-6 * r[0]);
}

#[test]
fn pattern_ratios() {
    // Isotropic data: A = diag(1/‖wᵢ‖²) W.
    let net = Preset::Mlp(vec![8, 5]).build(35).unwrap();
    let mut g = rng(35);
    let data: Vec<Tensor> = (0..4000).map(|_| random_tensor(&mut g, &[8], -1.0, 1.0)).collect();
    let ps = fit_patterns(&net, &data, PatternEstimator::Linear).unwrap();
    let rep = pattern_ratio_report(&net, &ps).unwrap();
    let w = Matrix::new(5, 8, net.weight("fc1").unwrap().data().to_vec()).unwrap();
    let scaled = Matrix::from_fn(5, 8, |i, j| {
        let n: f64 = w.row(i).iter().map(|v| v * v).sum();
        w.get(i, j) / n
    });
    assert!((rep[0].weight - oracle_ratio(&w)).abs() < 1e-9 * rep[0].weight);
    assert!((rep[0].pattern - oracle_ratio(&scaled)).abs() < 0.15 * oracle_ratio(&scaled), "{rep:?}");

    // Data dominated by one direction: patterns align with it.
    let d: Vec<f64> = (0..8).map(|i| (i as f64 - 3.0) / 4.0).collect();
    let data: Vec<Tensor> = (0..1000)
        .map(|_| {
            let s: f64 = g.random_range(-3.0..3.0);
            let x: Vec<f64> = d.iter().map(|v| v * s + 0.01 * g.random_range(-1.0..1.0)).collect();
            Tensor::new(vec![8], x).unwrap()
        })
        .collect();
    let rep = pattern_ratio_report(&net, &fit_patterns(&net, &data, PatternEstimator::Linear).unwrap()).unwrap();
    assert!(rep[0].pattern > 20.0 * rep[0].weight, "{rep:?}");

    let exact: Vec<Tensor> = (0..50).map(|k| Tensor::new(vec![8], d.iter().map(|v| v * (k as f64 - 25.0)).collect()).unwrap()).collect();
    let rep = pattern_ratio_report(&net, &fit_patterns(&net, &exact, PatternEstimator::Linear).unwrap()).unwrap();
    assert_eq!(rep[0].pattern, f64::INFINITY);
}

#[test]
fn positive_chains_converge_and_normal_ones_do_not() {
    let pos = simulate_chain(&ChainSpec::square(ChainFamily::PositiveAbs, 64, 10, 1)).unwrap();
    assert!(pos.steps[6].s_median.unwrap() >= 1.0 - 1e-4);
    assert!(pos.renormalized);
    for seed in 0..5 {
        let normal = simulate_chain(&ChainSpec::square(ChainFamily::Normal, 64, 16, seed)).unwrap();
        assert!(normal.steps.iter().all(|s| s.s_median.unwrap() < 0.9));
        assert!(normal.steps.iter().all(|s| (-1.0..=1.0).contains(&s.s_min.unwrap())));
    }
}

#[test]
fn non_negative_families_are_monotone() {
    for family in [ChainFamily::PositiveAbs, ChainFamily::NonnegativeClipped, ChainFamily::AlphaBeta { alpha: 1.0, beta: 0.0 }] {
        for seed in 0..5 {
            let r = simulate_chain(&ChainSpec::square(family.clone(), 32, 12, seed)).unwrap();
            let s: Vec<f64> = r.steps.iter().map(|s| s.s_min.unwrap()).collect();
            assert!(s.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{} {s:?}", family.name());
        }
    }
}

#[test]
fn simulation_agrees_with_explicit_products() {
    let spec = ChainSpec::square(ChainFamily::NonnegativeClipped, 12, 6, 4);
    let r = simulate_chain(&spec).unwrap();
    let mats: Vec<Matrix> = (1..=6).map(|t| spec.matrix(t)).collect();
    let sn = sn_sequence(&mats).unwrap();
    let mut prod = mats[0].clone();
    for t in 0..6 {
        if t > 0 {
            prod = naive_matmul(&prod, &mats[t]);
        }
        assert!((r.steps[t].s_min.unwrap() - sn[t]).abs() < 1e-12);
        assert!((r.steps[t].sigma_ratio - oracle_ratio(&prod)).abs() < 1e-6 * r.steps[t].sigma_ratio);
        let mut c: Vec<f64> = pair_cosines(&prod).into_iter().map(|(_, c)| c).collect();
        c.sort_by(f64::total_cmp);
        let med = if c.len() % 2 == 1 { c[c.len() / 2] } else { 0.5 * (c[c.len() / 2 - 1] + c[c.len() / 2]) };
        assert!((r.steps[t].s_median.unwrap() - med).abs() < 1e-12);
    }
}

#[test]
fn relu_family_clips_the_running_product() {
    let spec = ChainSpec::square(ChainFamily::ReluAfterProduct, 16, 8, 2);
    let r = simulate_chain(&spec).unwrap();
    let mut prod = spec.matrix(1).map(|v| v.max(0.0));
    for t in 2..=8 {
        prod = naive_matmul(&prod, &spec.matrix(t)).map(|v| v.max(0.0));
    }
    let mut c: Vec<f64> = pair_cosines(&prod).into_iter().map(|(_, c)| c).filter(|c| c.is_finite()).collect();
    c.sort_by(f64::total_cmp);
    assert!((r.steps[7].s_min.unwrap() - c[0]).abs() < 1e-9);
}

#[test]
fn alpha_beta_rate_drops_with_beta() {
    let s16 = |beta: f64| {
        let mut v: Vec<f64> = (0..5)
            .map(|seed| {
                let spec = ChainSpec::square(ChainFamily::AlphaBeta { alpha: beta + 1.0, beta }, 64, 16, seed);
                simulate_chain(&spec).unwrap().steps[15].s_median.unwrap()
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    let (a, b, c) = (s16(0.0), s16(1.0), s16(8.0));
    assert!(a >= b && b > c && a > 0.999 && c < 0.9, "{a} {b} {c}");
}

#[test]
fn exponential_decay_of_the_widest_angle() {
    let r = simulate_chain(&ChainSpec::square(ChainFamily::PositiveAbs, 128, 7, 5)).unwrap();
    let ys: Vec<f64> = r.steps.iter().map(|s| (1.0 - s.s_min.unwrap()).max(f64::MIN_POSITIVE).ln()).collect();
    let xs: Vec<f64> = (1..=ys.len()).map(|t| t as f64).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = sxy * sxy / (sxx * syy);
    assert!(slope < 0.0 && r2 >= 0.9, "slope {slope} r2 {r2} {ys:?}");
}

#[test]
fn converged_products_ignore_later_factors() {
    let spec = ChainSpec::square(ChainFamily::PositiveAbs, 32, 14, 6);
    let mut prod = spec.matrix(1);
    for t in 2..=14 {
        prod = naive_matmul(&prod, &spec.matrix(t));
        let n = prod.frobenius_norm();
        prod.scale(1.0 / n);
    }
    assert!(sn_sequence(&[prod.clone()]).unwrap()[0] >= 1.0 - 1e-10);
    let left = |a: &Matrix| {
        let s = na(a).svd(true, false);
        let k = s.singular_values.imax();
        s.u.unwrap().column(k).iter().copied().collect::<Vec<f64>>()
    };
    let u0 = left(&prod);
    let mut g = rng(36);
    for _ in 0..5 {
        let cols = g.random_range(2..40);
        let next = naive_matmul(&prod, &random_nonneg(&mut g, 32, cols));
        let u1 = left(&next);
        let c: f64 = u0.iter().zip(&u1).map(|(a, b)| a * b).sum::<f64>().abs();
        assert!(c >= 1.0 - 1e-8, "{c}");
    }
}

#[test]
fn one_by_one_convolutions_converge_only_per_location() {
    // Block-diagonal chain: kron(I_P, A_t).
    let (p, k) = (3, 6);
    let spec = ChainSpec::square(ChainFamily::PositiveAbs, k, 8, 7);
    let block = |a: &Matrix| Matrix::from_fn(p * k, p * k, |i, j| if i / k == j / k { a.get(i % k, j % k) } else { 0.0 });
    let mut prod = block(&spec.matrix(1));
    for t in 2..=8 {
        prod = naive_matmul(&prod, &block(&spec.matrix(t)));
        prod.scale(1.0 / prod.frobenius_norm());
    }
    for ((i, j), c) in pair_cosines(&prod) {
        if i / k == j / k {
            assert!(c > 1.0 - 1e-6, "within {i} {j}: {c}");
        } else {
            assert_eq!(c, 0.0);
        }
    }
}

#[test]
fn chain_specs_and_reports() {
    let spec = ChainSpec::vgg(ChainFamily::PositiveAbs, 8, 1);
    assert_eq!(spec.dims, vec![10, 64, 64, 64, 64, 64, 32, 32, 32, 16, 16, 8, 8]);
    assert_eq!(spec.steps(), 12);
    assert_eq!(spec.matrix(1).rows(), 10);
    let r = simulate_chain(&spec).unwrap();
    assert_eq!(r, simulate_chain(&spec).unwrap());
    let other = simulate_chain(&ChainSpec::vgg(ChainFamily::PositiveAbs, 8, 2)).unwrap();
    assert_ne!(r.steps, other.steps);
    let csv = r.to_csv();
    assert!(csv.starts_with("step,s_n_min,s_n_median,sigma_ratio\n1,"));
    assert_eq!(csv.lines().count(), 13);
    assert!(matches!(simulate_chain(&ChainSpec::square(ChainFamily::Normal, 4, 0, 0)), Err(Error::Config(_))));
    assert_eq!(ChainFamily::AlphaBeta { alpha: 2.0, beta: 1.0 }.name(), "alphabeta:2:1");
}

#[test]
fn chains_from_a_network() {
    let net = Preset::Cifar10.build(2).unwrap();
    let fwd = chain_matrices_forward(&net).unwrap();
    let shapes: Vec<(usize, usize)> = fwd.iter().map(|m| (m.rows(), m.cols())).collect();
    assert_eq!(shapes, vec![(32, 3), (64, 32), (128, 64), (128, 128), (1024, 128), (10, 1024)]);
    // Centre taps of conv1.
    let w = net.weight("conv1").unwrap();
    assert_eq!(fwd[0].get(5, 2), w.data()[((5 * 3 + 2) * 3 + 1) * 3 + 1]);
    let fc5 = net.weight("fc5").unwrap();
    let want: f64 = (0..64).map(|p| fc5.data()[7 * 8192 + 3 * 64 + p]).sum();
    assert!((fwd[4].get(7, 3) - want).abs() < 1e-12);

    let back = chain_matrices_from_network(&net).unwrap();
    assert_eq!(back[0].rows(), 10);
    let spec = ChainSpec::from_matrices(back).unwrap();
    assert_eq!(spec.dims, vec![10, 1024, 128, 128, 64, 32, 3]);
    let r = simulate_chain(&spec).unwrap();
    assert_eq!(r.family, "from_model");
    assert_eq!(r.steps.len(), 6);
    assert!(ChainSpec::from_matrices(vec![Matrix::identity(2), Matrix::identity(3)]).is_err());
    assert!(layer_matrix_1x1(&net, "relu1").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn renormalisation_does_not_change_statistics(seed in 0u64..10_000, scale in 1e-3f64..1e3) {
        let mut g = rng(seed);
        let a = random_nonneg(&mut g, 5, 7);
        let b = a.map(|v| v * scale);
        let (sa, sb) = (sn_sequence(&[a]).unwrap(), sn_sequence(&[b]).unwrap());
        prop_assert!((sa[0] - sb[0]).abs() < 1e-12);
    }

    #[test]
    fn sn_bounded_and_monotone(seed in 0u64..10_000) {
        let mut g = rng(seed);
        let dims: Vec<usize> = (0..6).map(|_| g.random_range(2..12)).collect();
        let chain: Vec<Matrix> = dims.windows(2).map(|d| random_nonneg(&mut g, d[0], d[1])).collect();
        let s = sn_sequence(&chain).unwrap();
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(s.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}
