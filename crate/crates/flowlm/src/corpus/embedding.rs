//! Frozen Gaussian token embeddings with corpus-estimated normalization.
//!
//! The table is drawn once, standardized token-wise, and never trained. The
//! flow operates on channel-normalized embeddings; normalization statistics
//! are estimated from a large corpus sample at construction and live in the
//! checkpoint so evaluation reconstructs the identical space.

use crate::corpus::{MarkovSource, TokenSeq};
use crate::error::{Error, Result};
use crate::numeric::{Array, Rng};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct EmbeddingProvider<T> {
    table: Array<T>,
    mu: Array<T>,
    sigma: Array<T>,
    d_bottleneck: usize,
}

impl<T: Scalar> EmbeddingProvider<T> {
    /// Build a frozen table and estimate channel statistics from
    /// `stats_tokens` tokens sampled from `source`.
    pub fn build(
        source: &MarkovSource,
        d_emb: usize,
        d_bottleneck: usize,
        stats_tokens: usize,
        rng: &mut Rng,
    ) -> Self {
        let v = source.vocab().size;
        let mut table: Array<T> = rng.gaussian(&[v, d_emb]);
        // Token-wise standardization: each row to mean 0, std 1.
        for i in 0..v {
            let row = table.row_mut(i);
            let n = T::of_f64(d_emb as f64);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let std = var.sqrt().max(T::of_f64(1e-12));
            for x in row.iter_mut() {
                *x = (*x - mean) / std;
            }
        }
        // Distinct rows are what make decoding well-posed at all.
        let mut min_dist = T::infinity();
        for a in 0..v {
            for b in (a + 1)..v {
                let d: T = table
                    .row(a)
                    .iter()
                    .zip(table.row(b))
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum();
                min_dist = min_dist.min(d.sqrt());
            }
        }
        assert!(
            min_dist > T::zero(),
            "embedding table has coincident rows"
        );

        // Channel statistics over a stationary token sample.
        let seq_len = 64.min(stats_tokens.max(2));
        let n_seqs = stats_tokens.div_ceil(seq_len);
        let mut count = 0f64;
        let mut mean = vec![0f64; d_emb];
        let mut m2 = vec![0f64; d_emb];
        for _ in 0..n_seqs {
            let seq = source.sample(seq_len, rng);
            for &tok in seq.iter() {
                count += 1.0;
                for (c, &x) in table.row(tok).iter().enumerate() {
                    let xf = x.as_f64();
                    let delta = xf - mean[c];
                    mean[c] += delta / count;
                    m2[c] += delta * (xf - mean[c]);
                }
            }
        }
        let mu = Array::from_vec(&[d_emb], mean.iter().map(|&m| T::of_f64(m)).collect());
        let sigma = Array::from_vec(
            &[d_emb],
            m2.iter()
                .map(|&s| T::of_f64((s / (count - 1.0)).sqrt().max(1e-12)))
                .collect(),
        );
        EmbeddingProvider {
            table,
            mu,
            sigma,
            d_bottleneck,
        }
    }

    /// Reassemble from checkpointed arrays.
    pub fn from_parts(table: Array<T>, mu: Array<T>, sigma: Array<T>, d_bottleneck: usize) -> Self {
        assert_eq!(mu.len(), table.cols());
        assert_eq!(sigma.len(), table.cols());
        EmbeddingProvider {
            table,
            mu,
            sigma,
            d_bottleneck,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn d_emb(&self) -> usize {
        self.table.cols()
    }

    pub fn d_bottleneck(&self) -> usize {
        self.d_bottleneck
    }

    pub fn table(&self) -> &Array<T> {
        &self.table
    }

    pub fn mu(&self) -> &Array<T> {
        &self.mu
    }

    pub fn sigma(&self) -> &Array<T> {
        &self.sigma
    }

    /// Normalized embedding of one sequence: `[L, d_emb]`.
    pub fn embed(&self, seq: &TokenSeq) -> Result<Array<T>> {
        let d = self.d_emb();
        let mut out = Array::zeros(&[seq.len(), d]);
        for (i, &tok) in seq.iter().enumerate() {
            if tok >= self.vocab_size() {
                return Err(Error::UnknownToken {
                    id: tok,
                    vocab: self.vocab_size(),
                });
            }
            let row = out.row_mut(i);
            for (c, ((&e, &m), &s)) in self
                .table
                .row(tok)
                .iter()
                .zip(self.mu.data())
                .zip(self.sigma.data())
                .enumerate()
            {
                row[c] = (e - m) / s;
            }
        }
        Ok(out)
    }

    /// Inverse of the channel normalization.
    pub fn un_normalize(&self, x: &Array<T>) -> Array<T> {
        let d = self.d_emb();
        assert_eq!(x.cols(), d);
        let mut out = x.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (c, (&m, &s)) in self.mu.data().iter().zip(self.sigma.data()).enumerate() {
                row[c] = row[c] * s + m;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provider() -> (MarkovSource, EmbeddingProvider<f64>) {
        let mut rng = Rng::new(0);
        let src = MarkovSource::dirichlet(16, 2, 0.3, &mut rng);
        let mut erng = Rng::new(1);
        let p = EmbeddingProvider::build(&src, 32, 8, 100_000, &mut erng);
        (src, p)
    }

    #[test]
    fn frozen_table_embeds_identically() {
        let (_, p) = provider();
        let s = TokenSeq(vec![3, 3, 7]);
        let a = p.embed(&s).unwrap();
        let b = p.embed(&s).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.row(0), a.row(1));
        assert_ne!(a.row(0), a.row(2));
    }

    #[test]
    fn normalized_corpus_stats_near_standard() {
        let (src, p) = provider();
        // Fresh sample, fresh rng: per-channel mean within 0.05 of 0 and
        // std within 0.05 of 1.
        let mut rng = Rng::new(99);
        let seqs = src.sample_corpus(4_000, 16, &mut rng);
        let d = p.d_emb();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut n = 0.0;
        for s in &seqs {
            let x = p.embed(s).unwrap();
            for i in 0..x.rows() {
                n += 1.0;
                for (c, &v) in x.row(i).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        for c in 0..d {
            let mean = sum[c] / n;
            let std = (sq[c] / n - mean * mean).sqrt();
            assert!(mean.abs() < 0.05, "channel {c} mean {mean}");
            assert!((std - 1.0).abs() < 0.05, "channel {c} std {std}");
        }
    }

    #[test]
    fn unknown_token_rejected() {
        let (_, p) = provider();
        assert!(matches!(
            p.embed(&TokenSeq(vec![16])),
            Err(Error::UnknownToken { id: 16, vocab: 16 })
        ));
    }

    #[test]
    fn injective_on_vocab() {
        let (_, p) = provider();
        let mut min = f64::INFINITY;
        for a in 0..16 {
            for b in (a + 1)..16 {
                let d: f64 = p
                    .table()
                    .row(a)
                    .iter()
                    .zip(p.table().row(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 0.0);
    }

    #[test]
    fn normalization_round_trips() {
        let (_, p) = provider();
        let s = TokenSeq(vec![1, 2, 3, 4]);
        let x = p.embed(&s).unwrap();
        let raw = p.un_normalize(&x);
        // un_normalize(normalize(E[s])) recovers the raw table rows.
        for (i, &tok) in s.iter().enumerate() {
            for (a, b) in raw.row(i).iter().zip(p.table().row(tok)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
