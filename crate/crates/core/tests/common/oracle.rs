//! An independent round-to-nearest-even oracle for binary16 and a scalar
//! interpreter for Pure16 kernels.

use half::f16;
use p16::b16::{half_arith, HalfOp};
use p16::Half;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PAIRS_PER_OP: usize = 1_000_000;

/// The rounded operations checked against [`oracle`].
pub const ROUNDED_OPS: [HalfOp; 7] =
    [HalfOp::Add, HalfOp::Sub, HalfOp::Mul, HalfOp::Div, HalfOp::Sqrt, HalfOp::Exp, HalfOp::Log];

/// Round-to-nearest-even from binary64 by bracketing `|x|` between adjacent
/// binary16 magnitudes and comparing distances. Both distances are exact
/// (Sterbenz), so ties are detected exactly. 65536 stands in for infinity.
/// The `half` crate only decodes here: its own `from_f64` goes through
/// binary32 when F16C is enabled and rounds twice.
pub fn rne(x: f64) -> f16 {
    use std::sync::OnceLock;
    static GRID: OnceLock<Vec<f64>> = OnceLock::new();
    let grid = GRID.get_or_init(|| {
        (0u16..=0x7C00).map(|b| if b == 0x7C00 { 65536.0 } else { f16::from_bits(b).to_f64() }).collect()
    });
    if x.is_nan() {
        return f16::NAN;
    }
    let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
    let m = x.abs();
    let bits = if m >= 65536.0 {
        0x7C00
    } else {
        let hi = grid.partition_point(|&g| g < m);
        if grid[hi] == m {
            hi
        } else {
            let lo = hi - 1;
            let (dl, dh) = (m - grid[lo], grid[hi] - m);
            if dl < dh || (dl == dh && lo % 2 == 0) {
                lo
            } else {
                hi
            }
        }
    };
    f16::from_bits(sign | bits as u16)
}

/// Round a binary64 value that is either exact or correctly rounded at 53
/// bits. Sums, differences and products of binary16 values are exact in
/// binary64; quotients and roots round twice, which is harmless because
/// 53 >= 2 * 11 + 2.
pub fn oracle(op: HalfOp, a: f16, b: f16) -> f16 {
    let (x, y) = (a.to_f64(), b.to_f64());
    rne(match op {
        HalfOp::Add => x + y,
        HalfOp::Sub => x - y,
        HalfOp::Mul => x * y,
        HalfOp::Div => x / y,
        HalfOp::Sqrt => x.sqrt(),
        HalfOp::Exp => x.exp(),
        HalfOp::Log => x.ln(),
        _ => unreachable!(),
    })
}

pub fn same(ours: Half, theirs: f16) -> bool {
    if theirs.is_nan() {
        ours.is_nan()
    } else {
        ours.to_bits() == theirs.to_bits()
    }
}

pub fn random_half(rng: &mut ChaCha8Rng) -> u16 {
    // One draw in eight is a subnormal, zero or special to keep the edges busy.
    match rng.random_range(0..8) {
        0 => rng.random::<u16>() & 0x83FF,
        1 => [0x0000, 0x8000, 0x7C00, 0xFC00, 0x7E00, 0x7BFF, 0xFBFF, 0x0400, 0x0001, 0x3C00][rng.random_range(0..10)],
        _ => rng.random(),
    }
}

pub fn mismatches(op: HalfOp, seed: u64) -> Vec<(u16, u16)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for _ in 0..PAIRS_PER_OP {
        let (a, b) = (random_half(&mut rng), random_half(&mut rng));
        let ours = half_arith(op, Half::from_bits(a), op.is_binary().then(|| Half::from_bits(b)));
        if !same(ours, oracle(op, f16::from_bits(a), f16::from_bits(b))) {
            bad.push((a, b));
        }
    }
    bad
}

/// Sequential scalar binary16 dot products, accumulating from +0 in
/// ascending k, counting nonzero products that round to zero.
pub fn interpret_matmul(a: &[Half], b: &[Half], m: usize, k: usize, n: usize) -> (Vec<Half>, u64) {
    let mut out = Vec::with_capacity(m * n);
    let mut flushed = 0;
    for i in 0..m {
        for j in 0..n {
            let mut acc = Half::ZERO;
            for kk in 0..k {
                let (x, y) = (a[i * k + kk], b[kk * n + j]);
                let p = x * y;
                if p.is_zero() && !x.is_zero() && !y.is_zero() {
                    flushed += 1;
                }
                acc = acc + p;
            }
            out.push(acc);
        }
    }
    (out, flushed)
}
