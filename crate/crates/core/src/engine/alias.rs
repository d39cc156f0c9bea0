//! Vose alias table drawing an index with probability proportional to a weight.

use rand::RngCore;

const COIN_SCALE: f64 = (1u64 << 32) as f64;

#[derive(Debug, Clone)]
pub struct AliasTable {
    /// acceptance threshold in `[0, 2^32]` compared against 32 random bits
    threshold: Vec<u64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// Weights must be non-negative with a positive sum.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        assert!(n > 0 && n <= u32::MAX as usize, "alias table needs 1..=u32::MAX weights");
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "alias table needs a positive total weight");
        let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| prob[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l as u32;
            prob[l] -= 1.0 - prob[s];
            if prob[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        let threshold = prob.iter().map(|p| (p.clamp(0.0, 1.0) * COIN_SCALE).round() as u64).collect();
        AliasTable { threshold, alias }
    }

    pub fn len(&self) -> usize {
        self.alias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alias.is_empty()
    }

    /// One 64-bit draw: the high bits pick the column by multiply-shift, the
    /// low 32 bits are the coin.
    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let r = rng.next_u64();
        let col = ((r as u128 * self.alias.len() as u128) >> 64) as usize;
        if (r & 0xFFFF_FFFF) < self.threshold[col] {
            col
        } else {
            self.alias[col] as usize
        }
    }

    /// Exact probability of each index under [`AliasTable::sample`], up to
    /// the 2^-32 coin resolution.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut p = vec![0.0; self.len()];
        for (col, (&thr, &a)) in self.threshold.iter().zip(&self.alias).enumerate() {
            let keep = thr as f64 / COIN_SCALE;
            p[col] += keep / n;
            p[a as usize] += (1.0 - keep) / n;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_weights_never_alias() {
        let t = AliasTable::new(&[1.0; 7]);
        assert!(t.threshold.iter().all(|&x| x == 1 << 32));
    }

    #[test]
    fn empirical_frequencies() {
        let w = [1.0, 0.05, 1.0, 0.25, 2.0];
        let t = AliasTable::new(&w);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 400_000;
        let mut counts = [0usize; 5];
        for _ in 0..draws {
            counts[t.sample(&mut rng)] += 1;
        }
        let total: f64 = w.iter().sum();
        for (c, wi) in counts.iter().zip(w) {
            let p = wi / total;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((*c as f64 / draws as f64 - p).abs() < 5.0 * se);
        }
    }

    proptest! {
        #[test]
        fn table_reproduces_weights(w in prop::collection::vec(0.0f64..10.0, 1..40)) {
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let t = AliasTable::new(&w);
            let total: f64 = w.iter().sum();
            for (p, wi) in t.probabilities().iter().zip(&w) {
                prop_assert!((p - wi / total).abs() < 1e-8);
            }
        }
    }
}
