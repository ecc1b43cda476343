mod common;

use common::oracle::{interpret_matmul, mismatches, rne, same, PAIRS_PER_OP, ROUNDED_OPS};
use p16::b16::{enumerate_finite, half_arith, quantize, round_to_half, HalfOp};
use p16::tensor::{matmul, reduce_sum, zip_elementwise};
use p16::{Half, Precision, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn rounded_ops_match_the_oracle_on_a_million_pairs_each() {
    for (i, op) in ROUNDED_OPS.into_iter().enumerate() {
        let bad = mismatches(op, 0xA11CE + i as u64);
        assert!(bad.is_empty(), "{}: {} mismatches, first {:04x?}", op.name(), bad.len(), &bad[..bad.len().min(5)]);
    }
}

#[test]
fn conversion_is_idempotent_on_every_finite_value() {
    let all = enumerate_finite(false);
    assert_eq!(all.len(), 63488);
    for h in all {
        let x = h.to_f64();
        assert_eq!(round_to_half(x).to_bits(), h.to_bits());
        assert_eq!(Half::from_f32(h.to_f32()).to_bits(), h.to_bits());
        assert_eq!(quantize(h.to_f32()).to_bits(), h.to_f32().to_bits());
        assert_eq!(rne(x).to_bits(), h.to_bits());
        assert_eq!(half_arith(HalfOp::Abs, half_arith(HalfOp::Abs, h, None), None), half_arith(HalfOp::Abs, h, None));
        assert_eq!(half_arith(HalfOp::Neg, half_arith(HalfOp::Neg, h, None), None).to_bits(), h.to_bits());
    }
}

#[test]
fn round_to_half_matches_the_oracle_on_random_doubles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..PAIRS_PER_OP {
        let x = f64::from_bits(rng.random::<u64>());
        let x = if rng.random_bool(0.5) { x } else { rng.random_range(-70000.0..70000.0) };
        assert!(same(round_to_half(x), rne(x)), "{x:e}");
    }
}

fn half_strategy() -> impl Strategy<Value = Half> {
    prop_oneof![
        8 => (-2.0f64..2.0).prop_map(round_to_half),
        2 => (-1e-3f64..1e-3).prop_map(round_to_half),
        1 => (-40000.0f64..40000.0).prop_map(round_to_half),
        1 => Just(Half::ZERO),
    ]
}

fn matmul_case() -> impl Strategy<Value = (usize, usize, usize, Vec<Half>, Vec<Half>)> {
    (1usize..7, 1usize..40, 1usize..7).prop_flat_map(|(m, k, n)| {
        (
            Just(m),
            Just(k),
            Just(n),
            prop::collection::vec(half_strategy(), m * k),
            prop::collection::vec(half_strategy(), k * n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pure16_matmul_matches_the_interpreter((m, k, n, a, b) in matmul_case()) {
        let ta = Tensor::from_half(&[m, k], a.clone(), Precision::Pure16).unwrap();
        let tb = Tensor::from_half(&[k, n], b.clone(), Precision::Pure16).unwrap();
        let (out, events) = matmul(&ta, &tb).unwrap();
        let (expected, flushed) = interpret_matmul(&a, &b, m, k, n);
        let got = out.values();
        for (g, e) in got.iter().zip(&expected) {
            prop_assert!(Half::from_f32(*g).to_bits() == e.to_bits() || (g.is_nan() && e.is_nan()), "{g} vs {e:?}");
        }
        prop_assert_eq!(events.underflow_to_zero_count, flushed);
    }

    #[test]
    fn pure16_elementwise_matches_scalar_ops(
        pairs in prop::collection::vec((any::<u16>(), any::<u16>()), 1..64),
        op in prop::sample::select(vec![HalfOp::Add, HalfOp::Sub, HalfOp::Mul, HalfOp::Div, HalfOp::Max, HalfOp::Min]),
    ) {
        let a: Vec<Half> = pairs.iter().map(|p| Half::from_bits(p.0)).collect();
        let b: Vec<Half> = pairs.iter().map(|p| Half::from_bits(p.1)).collect();
        let n = a.len();
        let ta = Tensor::from_half(&[n], a.clone(), Precision::Pure16).unwrap();
        let tb = Tensor::from_half(&[n], b.clone(), Precision::Pure16).unwrap();
        let (out, _) = zip_elementwise(&ta, &tb, op).unwrap();
        for (i, g) in out.values().iter().enumerate() {
            let e = half_arith(op, a[i], Some(b[i]));
            let g = Half::from_f32(*g);
            prop_assert!(g.to_bits() == e.to_bits() || (g.is_nan() && e.is_nan()));
        }
    }
}

#[test]
fn sum_of_4096_ones_saturates_at_2048() {
    let ones = Tensor::full(&[4096], 1.0, Precision::Pure16);
    let (s, _) = reduce_sum(&ones, 0).unwrap();
    assert_eq!(s.to_vec(), vec![2048.0]);
    let scalar = (0..4096).fold(Half::ZERO, |acc, _| acc + Half::ONE);
    assert_eq!(scalar.to_f64(), 2048.0);

    let row = Tensor::full(&[1, 4096], 1.0, Precision::Pure16);
    let col = Tensor::full(&[4096, 1], 1.0, Precision::Pure16);
    let (dot, _) = matmul(&row, &col).unwrap();
    assert_eq!(dot.to_vec(), vec![2048.0]);

    let (s32, _) = reduce_sum(&ones.cast(Precision::Pure32), 0).unwrap();
    assert_eq!(s32.to_vec(), vec![4096.0]);
}
