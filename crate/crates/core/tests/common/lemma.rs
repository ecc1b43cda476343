//! Seeded random (p32, p16) pairs checked against the agreement certificate.

use p16::analysis::lemma_certificate;
use p16::{Precision, ProbVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for i in 1..p.len() {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

fn random_probabilities(rng: &mut ChaCha8Rng, k: usize) -> Vec<f32> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(rng.random_range(1..6))).collect();
    let s: f64 = raw.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    raw.iter().map(|v| (v / s) as f32).collect()
}

#[derive(Debug, Default)]
pub struct LemmaOutcome {
    pub pairs: usize,
    pub guaranteed: usize,
    /// Guaranteed pairs that disagree through an exact tie in `p16`.
    pub boundary_ties: usize,
    /// Descriptions of pairs where the certificate errored, misreported its
    /// flag, or a guaranteed `p16` strictly preferred another class.
    pub failures: Vec<String>,
}

/// Check `pairs` seeded pairs. Each `p16` is `p32` plus a perturbation of
/// random size; every tenth pair instead moves the top class down and the
/// runner-up up by half their gap, landing exactly on `gamma == 2 * delta`.
pub fn check_pairs(pairs: usize, seed: u64) -> LemmaOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LemmaOutcome { pairs, ..LemmaOutcome::default() };
    for id in 0..pairs {
        let k = rng.random_range(2..=12);
        let p32 = random_probabilities(&mut rng, k);
        let budget = rng.random::<f64>().powi(3) * 0.2;
        let mut p16: Vec<f32> = p32.iter().map(|&v| (v as f64 + rng.random_range(-budget..=budget)) as f32).collect();
        if id % 10 == 0 {
            let top = argmax(&p32);
            let second =
                (0..k).filter(|&i| i != top).max_by(|&a, &b| p32[a].total_cmp(&p32[b]).then(b.cmp(&a))).unwrap();
            let half_gap = (p32[top] - p32[second]) / 2.0;
            p16 = p32.clone();
            p16[top] -= half_gap;
            p16[second] += half_gap;
        }
        let delta = p32.iter().zip(&p16).map(|(&a, &b)| (a as f64 - b as f64).abs()).fold(0.0, f64::max);
        let mut sorted: Vec<f64> = p32.iter().map(|&v| v as f64).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let gamma = sorted[0] - sorted[1];
        let rec = match lemma_certificate(
            id,
            &ProbVector::new(p32.clone(), Precision::Pure32),
            &ProbVector::new(p16.clone(), Precision::Pure16),
        ) {
            Ok(r) => r,
            Err(e) => {
                out.failures.push(format!("pair {id}: {e}"));
                continue;
            }
        };
        if rec.guaranteed != (gamma >= 2.0 * delta) || rec.pred32 != argmax(&p32) || rec.pred16 != argmax(&p16) {
            out.failures.push(format!("pair {id}: record {rec:?} disagrees with gamma {gamma:e}, delta {delta:e}"));
            continue;
        }
        if rec.guaranteed {
            out.guaranteed += 1;
            let top16 = p16.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            if p16[rec.pred32] != top16 {
                out.failures.push(format!("pair {id}: guaranteed but another class is strictly preferred"));
            } else if !rec.agree {
                out.boundary_ties += 1;
            }
        }
    }
    out
}
