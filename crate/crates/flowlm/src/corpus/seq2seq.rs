//! Paired (condition, target) tasks for conditional generation: the target
//! is an exact copy or reversal of the condition, so exact-match accuracy
//! has a ground-truth oracle.

use crate::corpus::{Token, TokenSeq, Vocab, PAD_TOKEN};
use crate::numeric::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Reverse,
}

#[derive(Clone, Debug)]
pub struct Seq2SeqTask {
    pub kind: TaskKind,
    pub vocab: Vocab,
    pub cond_len: usize,
    /// Length of the generated slot; at least `cond_len`, padded with the
    /// reserved pad id when longer.
    pub target_slot: usize,
}

impl Seq2SeqTask {
    pub fn new(kind: TaskKind, vocab: Vocab, cond_len: usize, target_slot: usize) -> Self {
        assert!(cond_len > 0 && target_slot >= cond_len);
        Seq2SeqTask {
            kind,
            vocab,
            cond_len,
            target_slot,
        }
    }

    /// Deterministic transform of a condition into its target tokens.
    pub fn target_of(&self, cond: &[Token]) -> Vec<Token> {
        let mut t: Vec<Token> = match self.kind {
            TaskKind::Copy => cond.to_vec(),
            TaskKind::Reverse => cond.iter().rev().copied().collect(),
        };
        t.resize(self.target_slot, PAD_TOKEN);
        t
    }

    /// Sample one (condition, target) pair; conditions are uniform tokens.
    pub fn sample_pair(&self, rng: &mut Rng) -> (TokenSeq, TokenSeq) {
        let cond: Vec<Token> = (0..self.cond_len).map(|_| rng.below(self.vocab.size)).collect();
        let target = self.target_of(&cond);
        (TokenSeq(cond), TokenSeq(target))
    }

    /// Exact match over the meaningful (non-pad-slot) positions.
    pub fn exact_match(&self, generated: &[Token], cond: &[Token]) -> bool {
        let reference = self.target_of(cond);
        generated.len() >= self.cond_len && generated[..self.cond_len] == reference[..self.cond_len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_and_reverse() {
        let v = Vocab::new(16);
        let copy = Seq2SeqTask::new(TaskKind::Copy, v, 3, 3);
        assert_eq!(copy.target_of(&[3, 1, 4]), vec![3, 1, 4]);
        let rev = Seq2SeqTask::new(TaskKind::Reverse, v, 3, 3);
        assert_eq!(rev.target_of(&[3, 1, 4]), vec![4, 1, 3]);
    }

    #[test]
    fn ground_truth_pairs_match_exactly() {
        let v = Vocab::new(16);
        let task = Seq2SeqTask::new(TaskKind::Copy, v, 8, 8);
        let mut rng = Rng::new(0);
        let mut hits = 0;
        for _ in 0..200 {
            let (c, t) = task.sample_pair(&mut rng);
            if task.exact_match(&t, &c) {
                hits += 1;
            }
        }
        assert_eq!(hits, 200);
    }

    #[test]
    fn padding_fills_longer_slots() {
        let v = Vocab::new(16);
        let task = Seq2SeqTask::new(TaskKind::Copy, v, 2, 5);
        assert_eq!(task.target_of(&[7, 9]), vec![7, 9, PAD_TOKEN, PAD_TOKEN, PAD_TOKEN]);
    }
}
