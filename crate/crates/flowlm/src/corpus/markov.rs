//! Markov chain sources: the data-generating processes whose statistics are
//! known in closed form, making them exact scorers for generated text.
//!
//! An order-k chain is lifted to an order-1 chain over k-gram contexts; the
//! stationary distribution over contexts gives the entropy rate and the
//! unigram marginal, and sequences are sampled starting from stationarity.

use crate::corpus::{Token, TokenSeq, Vocab};
use crate::numeric::Rng;

/// Probability floor for scoring tokens the oracle considers impossible.
pub const ORACLE_PROB_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct MarkovSource {
    vocab: Vocab,
    order: usize,
    /// `vocab.size^order` rows, each a distribution over the next token.
    trans: Vec<Vec<f64>>,
    /// Stationary distribution over contexts (length `vocab.size^order`).
    ctx_stationary: Vec<f64>,
}

impl MarkovSource {
    /// Rows drawn i.i.d. from a symmetric Dirichlet and frozen.
    pub fn dirichlet(vocab_size: usize, order: usize, alpha: f64, rng: &mut Rng) -> Self {
        let n_ctx = vocab_size.pow(order as u32);
        let rows = (0..n_ctx).map(|_| rng.dirichlet(alpha, vocab_size)).collect();
        Self::from_rows(vocab_size, order, rows)
    }

    /// Every row uniform: the maximum-entropy chain.
    pub fn uniform(vocab_size: usize, order: usize) -> Self {
        let n_ctx = vocab_size.pow(order as u32);
        let row = vec![1.0 / vocab_size as f64; vocab_size];
        Self::from_rows(vocab_size, order, vec![row; n_ctx])
    }

    /// Deterministic cycle `i -> (i+1) mod V` (order 1, point-mass rows).
    pub fn cycle(vocab_size: usize) -> Self {
        let rows = (0..vocab_size)
            .map(|i| {
                let mut r = vec![0.0; vocab_size];
                r[(i + 1) % vocab_size] = 1.0;
                r
            })
            .collect();
        Self::from_rows(vocab_size, 1, rows)
    }

    pub fn from_rows(vocab_size: usize, order: usize, trans: Vec<Vec<f64>>) -> Self {
        assert!(order == 1 || order == 2, "order must be 1 or 2");
        let n_ctx = vocab_size.pow(order as u32);
        assert_eq!(trans.len(), n_ctx, "wrong number of transition rows");
        for row in &trans {
            assert_eq!(row.len(), vocab_size);
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row sums to {s}, not 1");
            assert!(row.iter().all(|&p| p >= 0.0));
        }
        let ctx_stationary = stationary(vocab_size, order, &trans);
        MarkovSource {
            vocab: Vocab::new(vocab_size),
            order,
            trans,
            ctx_stationary,
        }
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn transition_row(&self, ctx: usize) -> &[f64] {
        &self.trans[ctx]
    }

    pub fn ctx_stationary(&self) -> &[f64] {
        &self.ctx_stationary
    }

    fn ctx_index(&self, window: &[Token]) -> usize {
        let v = self.vocab.size;
        window.iter().fold(0, |acc, &t| acc * v + t)
    }

    /// Marginal distribution of a single token under stationarity.
    pub fn unigram(&self) -> Vec<f64> {
        let v = self.vocab.size;
        let mut pi = vec![0.0; v];
        for (ctx, &p) in self.ctx_stationary.iter().enumerate() {
            pi[ctx % v] += p;
        }
        pi
    }

    /// Entropy of the stationary unigram marginal, in nats.
    pub fn unigram_entropy(&self) -> f64 {
        entropy(&self.unigram())
    }

    /// Conditional entropy rate of the chain, in nats per token.
    pub fn entropy_rate(&self) -> f64 {
        self.ctx_stationary
            .iter()
            .zip(&self.trans)
            .map(|(&p_ctx, row)| p_ctx * entropy(row))
            .sum()
    }

    /// Draw one sequence of length `len`, started from stationarity.
    pub fn sample(&self, len: usize, rng: &mut Rng) -> TokenSeq {
        let v = self.vocab.size;
        let mut out = Vec::with_capacity(len);
        // Initial context from the stationary context distribution; its
        // unigram marginal is the stationary token distribution.
        let mut ctx = rng.categorical(&self.ctx_stationary);
        let mut window = Vec::with_capacity(self.order);
        let mut rest = ctx;
        for k in (0..self.order).rev() {
            let div = v.pow(k as u32);
            window.push(rest / div);
            rest %= div;
        }
        out.extend(window.iter().copied().take(len));
        while out.len() < len {
            let next = rng.categorical(&self.trans[ctx]);
            out.push(next);
            ctx = (ctx * v + next) % v.pow(self.order as u32);
        }
        TokenSeq(out)
    }

    pub fn sample_corpus(&self, n: usize, len: usize, rng: &mut Rng) -> Vec<TokenSeq> {
        (0..n).map(|_| self.sample(len, rng)).collect()
    }

    /// Negative log-likelihoods of the scored positions of one sequence.
    ///
    /// Only positions with a full order-length context are scored, so the
    /// per-token mean converges to the entropy rate on the source's own
    /// output. Zero-probability tokens are floored at `floor`.
    pub fn nll_scores(&self, seq: &TokenSeq, floor: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if seq.len() <= self.order {
            return out;
        }
        for i in self.order..seq.len() {
            let ctx = self.ctx_index(&seq[i - self.order..i]);
            let p = self.trans[ctx][seq[i]].max(floor);
            out.push(-p.ln());
        }
        out
    }

    /// exp(mean per-token NLL) pooled over all scored tokens of all sequences.
    pub fn oracle_perplexity(&self, seqs: &[TokenSeq]) -> f64 {
        self.oracle_perplexity_floored(seqs, ORACLE_PROB_FLOOR)
    }

    pub fn oracle_perplexity_floored(&self, seqs: &[TokenSeq], floor: f64) -> f64 {
        assert!(!seqs.is_empty(), "oracle_perplexity needs sequences");
        let mut total = 0.0;
        let mut count = 0usize;
        for s in seqs {
            let nll = self.nll_scores(s, floor);
            total += nll.iter().sum::<f64>();
            count += nll.len();
        }
        assert!(count > 0, "sequences too short to score");
        (total / count as f64).exp()
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Stationary distribution of the lifted context chain.
///
/// Iterates the lazy chain (I + P)/2, which has the same fixed point but
/// converges even for periodic chains such as pure cycles.
fn stationary(vocab_size: usize, order: usize, trans: &[Vec<f64>]) -> Vec<f64> {
    let n_ctx = trans.len();
    let v = vocab_size;
    let mut p = vec![1.0 / n_ctx as f64; n_ctx];
    let mut next = vec![0.0; n_ctx];
    for _ in 0..200_000 {
        for x in next.iter_mut() {
            *x = 0.0;
        }
        for (ctx, &mass) in p.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let row = &trans[ctx];
            let base = (ctx % v.pow((order - 1) as u32)) * v;
            for (tok, &q) in row.iter().enumerate() {
                next[if order == 1 { tok } else { base + tok }] += mass * q;
            }
        }
        let mut diff = 0.0;
        for (pi, ni) in p.iter_mut().zip(&next) {
            let mixed = 0.5 * *pi + 0.5 * ni;
            diff += (mixed - *pi).abs();
            *pi = mixed;
        }
        if diff < 1e-15 {
            break;
        }
    }
    // Fixed-point check (the documented invariant).
    let mut err = 0.0;
    for x in next.iter_mut() {
        *x = 0.0;
    }
    for (ctx, &mass) in p.iter().enumerate() {
        let row = &trans[ctx];
        let base = (ctx % v.pow((order - 1) as u32)) * v;
        for (tok, &q) in row.iter().enumerate() {
            next[if order == 1 { tok } else { base + tok }] += mass * q;
        }
    }
    for (a, b) in p.iter().zip(&next) {
        err += (a - b).abs();
    }
    assert!(err < 1e-10, "stationary distribution residual {err}");
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycle_is_forced() {
        let src = MarkovSource::cycle(5);
        let mut rng = Rng::new(0);
        let s = src.sample(12, &mut rng);
        for w in s.windows(2) {
            assert_eq!(w[1], (w[0] + 1) % 5);
        }
        // Deterministic chain's forced sequence scores PPL = 1.
        assert!((src.oracle_perplexity(&[s]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_chain_entropy_and_ppl() {
        let src = MarkovSource::uniform(16, 1);
        assert!((src.entropy_rate() - (16f64).ln()).abs() < 1e-12);
        let mut rng = Rng::new(1);
        // Empirical unigram entropy of 1e5 tokens within 0.02 nats of ln|V|.
        let seqs = src.sample_corpus(6_250, 16, &mut rng);
        let mut counts = vec![0f64; 16];
        let mut n = 0f64;
        for s in &seqs {
            for &t in s.iter() {
                counts[t] += 1.0;
                n += 1.0;
            }
        }
        let emp = -counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| (c / n) * (c / n).ln())
            .sum::<f64>();
        assert!((emp - (16f64).ln()).abs() < 0.02, "entropy {emp}");
        // Any sequence scores PPL = |V| under the uniform chain.
        let ppl = src.oracle_perplexity(&seqs[..16]);
        assert!((ppl - 16.0).abs() < 1e-9, "ppl {ppl}");
    }

    #[test]
    fn order1_bigram_frequencies_match_table() {
        let mut rng = Rng::new(7);
        let src = MarkovSource::dirichlet(8, 1, 0.5, &mut rng);
        let mut sample_rng = Rng::new(42);
        // 1e6 tokens: conditional frequencies within 0.01 of the table rows.
        let seqs = src.sample_corpus(10_000, 100, &mut sample_rng);
        let mut counts = vec![vec![0f64; 8]; 8];
        for s in &seqs {
            for w in s.windows(2) {
                counts[w[0]][w[1]] += 1.0;
            }
        }
        for a in 0..8 {
            let tot: f64 = counts[a].iter().sum();
            for b in 0..8 {
                let emp = counts[a][b] / tot;
                assert!(
                    (emp - src.transition_row(a)[b]).abs() < 0.01,
                    "P({b}|{a}) emp {emp} vs {}",
                    src.transition_row(a)[b]
                );
            }
        }
    }

    #[test]
    fn corpus_ppl_converges_to_entropy_rate() {
        let mut rng = Rng::new(3);
        let src = MarkovSource::dirichlet(16, 2, 0.3, &mut rng);
        let mut sample_rng = Rng::new(11);
        // 1e5 tokens sampled from the source: PPL within 5% of exp(rate).
        let seqs = src.sample_corpus(6_250, 16, &mut sample_rng);
        let ppl = src.oracle_perplexity(&seqs);
        let reference = src.entropy_rate().exp();
        assert!(
            (ppl / reference - 1.0).abs() < 0.05,
            "ppl {ppl} vs exp(rate) {reference}"
        );
    }

    #[test]
    fn stationary_is_fixed_point_and_unigram_sums() {
        let mut rng = Rng::new(9);
        let src = MarkovSource::dirichlet(16, 2, 0.3, &mut rng);
        let pi = src.unigram();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(src.unigram_entropy() <= (16f64).ln() + 1e-12);
        assert!(src.entropy_rate() <= src.unigram_entropy());
    }

    #[test]
    fn determinism_same_seed_same_corpus() {
        let mut r1 = Rng::new(5);
        let mut r2 = Rng::new(5);
        let a = MarkovSource::dirichlet(16, 2, 0.3, &mut r1);
        let b = MarkovSource::dirichlet(16, 2, 0.3, &mut r2);
        assert_eq!(a.transition_row(37), b.transition_row(37));
    }
}
