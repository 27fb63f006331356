use cantor_fourier::cheb::BranchFunction;
use cantor_fourier::deviations::{regular_words, DeviationParams, RegularWordSet};
use cantor_fourier::dolgopyat::{lip_b_norm, ComplexPotentialParams, Mollifier};
use cantor_fourier::fourier::{fourier_at, scan_grid, FourierOptions};
use cantor_fourier::oscillation::{
    exp_sum, mult_conv_fourier, DiscreteMeasure, FrequencyWindow, MultConvOptions, ZetaContext,
};
use cantor_fourier::symbolic::{concat_hash, concat_star, enumerate_words};
use cantor_fourier::thermo::{bowen_dimension, build_gibbs, hull_points, GibbsMeasure, PotentialSpec, ThermoOptions};
use cantor_fourier::{Block, CantorSystem, Word};
use num_complex::Complex64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn gauss() -> &'static GibbsMeasure {
    static MU: OnceLock<GibbsMeasure> = OnceLock::new();
    MU.get_or_init(|| {
        let sys = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let o = ThermoOptions::default();
        let s0 = bowen_dimension(&sys, &o).unwrap();
        build_gibbs(&sys, &PotentialSpec::geometric(s0), &o).unwrap()
    })
}

fn regular8() -> &'static RegularWordSet {
    static SET: OnceLock<RegularWordSet> = OnceLock::new();
    SET.get_or_init(|| regular_words(gauss(), 8, &DeviationParams::new(0.5, 0.25).unwrap()).unwrap())
}

fn word(max_len: usize, n_symbols: u8) -> impl Strategy<Value = Word> {
    prop::collection::vec(1..=n_symbols, 0..=max_len).prop_map(Word::from_symbols)
}

fn measure() -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((0.1f64..4.0, 0.01f64..1.0), 1..5).prop_map(|pw| {
        let (p, w): (Vec<f64>, Vec<f64>) = pw.into_iter().unzip();
        DiscreteMeasure::new(p, w).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn word_symbols_in_alphabet(symbols in prop::collection::vec(0u8..6, 0..12), n in 1usize..5) {
        let valid = symbols.iter().all(|&s| s >= 1 && s as usize <= n);
        let len = symbols.len();
        match Word::new(symbols, n) {
            Ok(w) => {
                prop_assert!(valid);
                prop_assert_eq!(w.len(), len);
            }
            Err(_) => prop_assert!(!valid),
        }
    }

    #[test]
    fn concat_length_adds(a in word(10, 3), b in word(10, 3)) {
        let c = a.concat(&b);
        prop_assert_eq!(c.len(), a.len() + b.len());
        prop_assert_eq!(c.prefix(a.len()).unwrap(), a);
    }

    #[test]
    fn block_concatenations_have_expected_length(k in 1usize..4, n in 1usize..5, seed in any::<u64>()) {
        let words = |count: usize, off: u64| -> Block {
            Block::new((0..count as u64).map(|i| {
                Word::from_symbols((0..n as u64).map(|j| ((seed >> ((i + j + off) % 60)) % 3) as u8 + 1).collect())
            }).collect()).unwrap()
        };
        let (a, b) = (words(k + 1, 0), words(k, 7));
        prop_assert_eq!(concat_star(&a, &b).unwrap().len(), (2 * k + 1) * n);
        prop_assert_eq!(concat_hash(&a, &b).unwrap().len(), 2 * k * n);
    }

    #[test]
    fn blocks_reject_mixed_lengths(a in word(6, 3), b in word(6, 3)) {
        let r = Block::new(vec![a.clone(), b.clone()]);
        prop_assert_eq!(r.is_ok(), a.len() == b.len() && !a.is_empty());
    }

    #[test]
    fn interpolant_reproduces_node_values(c in prop::collection::vec(-2.0f64..2.0, 3)) {
        let sys = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let f = BranchFunction::from_fn(&sys, 16, |a, y| c[0] + c[1] * y + c[2] * (y * (a + 1) as f64).sin());
        for (a, nodes) in f.nodes().iter().enumerate() {
            prop_assert_eq!(nodes.len(), f.degree() + 1);
            for (x, v) in nodes.x.iter().zip(&f.values()[a]) {
                prop_assert_eq!(nodes.interpolate(&f.values()[a], *x), *v);
            }
        }
    }

    #[test]
    fn fourier_modulus_bounded_and_conjugate_symmetric(xi in -5e3f64..5e3) {
        let mu = gauss();
        let opts = FourierOptions::default();
        let p = fourier_at(mu, xi, &opts).unwrap();
        let m = fourier_at(mu, -xi, &opts).unwrap();
        prop_assert!(p.err_bound >= 0.0);
        prop_assert!(p.modulus() <= 1.0 + p.err_bound);
        prop_assert!((p.value - m.value.conj()).norm() <= p.err_bound + m.err_bound + 1e-12);
    }

    #[test]
    fn scan_grid_strictly_increasing(lo in 1.0f64..100.0, span in 1.5f64..1e4, spd in 0usize..20,
                                     extra in prop::collection::vec(0.0f64..1.0, 0..6)) {
        let hi = lo * span;
        let extra: Vec<f64> = extra.iter().map(|u| lo * span.powf(*u)).collect();
        let grid = scan_grid(lo, hi, spd, &extra).unwrap();
        prop_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(grid.iter().all(|x| (lo..=hi).contains(x)));
    }

    #[test]
    fn gibbs_ratios_within_constant(len in 1usize..9) {
        let mu = gauss();
        let c = mu.gibbs_constant();
        prop_assert!(c >= 1.0);
        for w in enumerate_words(2, len) {
            let m = mu.cylinder_measure(&w);
            for x in hull_points(mu.system().hull()) {
                let r = m / mu.weight_of(w.symbols(), x);
                prop_assert!(r <= c * (1.0 + 1e-12) && r >= 1.0 / c * (1.0 - 1e-12), "{} r={} C={}", w, r, c);
            }
        }
    }

    #[test]
    fn regular_words_are_generation_n(i in 0usize..192) {
        let set = regular8();
        let w = &set.words[i % set.len()];
        prop_assert_eq!(w.len(), 8);
        prop_assert!(w.check(2).is_ok());
    }

    #[test]
    fn zeta_values_lie_in_range(i in 0usize..192, j in 0usize..192, l in 0usize..192) {
        let set = regular8();
        let pick = |t: usize| set.words[t % set.len()].clone();
        let params = DeviationParams::new(0.5, 0.25).unwrap();
        let ctx = ZetaContext::new(gauss(), Block::new(vec![pick(i), pick(j)]).unwrap(), &params).unwrap();
        let z = ctx.zeta(1, &pick(l)).unwrap();
        prop_assert!(z >= 1.0 / ctx.range() && z <= ctx.range());
    }

    #[test]
    fn exp_sum_is_additive_over_disjoint_blocks(i in 0usize..192, j in 0usize..192, split in 1usize..6, eta in 1.0f64..40.0) {
        let set = regular8();
        let pick = |t: usize| set.words[t % set.len()].clone();
        let params = DeviationParams::new(0.5, 0.25).unwrap();
        let ctx = ZetaContext::new(gauss(), Block::new(vec![pick(i), pick(j)]).unwrap(), &params).unwrap();
        let blocks: Vec<Block> = (0..6).map(|t| Block::new(vec![pick(i + 31 * t)]).unwrap()).collect();
        let whole = exp_sum(&ctx, eta, blocks.clone()).unwrap();
        let left = exp_sum(&ctx, eta, blocks[..split].to_vec()).unwrap();
        let right = exp_sum(&ctx, eta, blocks[split..].to_vec()).unwrap();
        prop_assert_eq!(whole.count, left.count + right.count);
        prop_assert!((whole.value - left.value - right.value).norm() <= 1e-12 * whole.count as f64);
    }

    #[test]
    fn frequency_window_is_proper(n in 1usize..40, eps in 0.05f64..2.0, eps0 in 0.01f64..0.99) {
        let w = FrequencyWindow::new(n, &DeviationParams::new(eps, eps0).unwrap()).unwrap();
        prop_assert!(w.lo < w.hi);
    }

    #[test]
    fn mult_conv_with_point_mass_at_one_is_identity(nu in measure(), eta in -20.0f64..20.0) {
        let one = DiscreteMeasure::point_mass(1.0).unwrap();
        let opts = MultConvOptions::default();
        let a = mult_conv_fourier(&[nu.clone(), one], eta, &opts).unwrap().value;
        let b = mult_conv_fourier(&[nu], eta, &opts).unwrap().value;
        prop_assert!((a - b).norm() <= 1e-12);
    }

    #[test]
    fn mult_conv_matches_enumeration(a in measure(), b in measure(), eta in -10.0f64..10.0) {
        let got = mult_conv_fourier(&[a.clone(), b.clone()], eta, &MultConvOptions::default()).unwrap();
        let mut want = Complex64::new(0.0, 0.0);
        for (x, wx) in a.points().iter().zip(a.weights()) {
            for (y, wy) in b.points().iter().zip(b.weights()) {
                want += wx * wy * Complex64::from_polar(1.0, -std::f64::consts::TAU * eta * x * y);
            }
        }
        prop_assert!(got.exact);
        prop_assert!((got.value - want).norm() <= 1e-12);
    }

    #[test]
    fn close_pair_mass_matches_brute_force(nu in measure(), sigma in 0.0f64..2.0) {
        let n = nu.len();
        let mut want = 0.0;
        for i in 0..n {
            for j in 0..n {
                if (nu.points()[i] - nu.points()[j]).abs() <= sigma {
                    want += nu.weights()[i] * nu.weights()[j];
                }
            }
        }
        prop_assert!((nu.close_pair_mass(sigma) - want).abs() <= 1e-12);
    }

    #[test]
    fn complex_potential_has_real_part_delta(delta in 0.01f64..1.0, b in -500.0f64..500.0, xi in 0.01f64..0.99) {
        let p = ComplexPotentialParams::new(delta, b, xi).unwrap();
        prop_assert_eq!(p.s().re, delta);
    }

    #[test]
    fn lip_norm_is_homogeneous(scale in 0.1f64..10.0, phase in 0.0f64..6.28, b in 1.0f64..100.0) {
        let sys = CantorSystem::gauss_digits(&[1, 2]).unwrap();
        let g = BranchFunction::from_fn(&sys, 24, |a, y| Complex64::new(y.cos(), a as f64 * y));
        let c = Complex64::from_polar(scale, phase);
        let sg = g.map_values(|v| c * v);
        let (n1, n2) = (lip_b_norm(&g, b).unwrap(), lip_b_norm(&sg, b).unwrap());
        prop_assert!(n1 >= 0.0);
        prop_assert!((n2 - scale * n1).abs() <= 1e-10 * n2.max(1.0));
    }

    #[test]
    fn mollifier_majorizes_indicator(lo in -50.0f64..50.0, len in 1e-4f64..20.0) {
        let h = Mollifier::new(lo, lo + len).unwrap();
        prop_assert!(h.majorizes(1000));
        prop_assert!(h.l1() <= 3.0 * len);
        prop_assert!(h.second_l1().is_finite() && h.second_l1() * len > 0.0);
    }
}
