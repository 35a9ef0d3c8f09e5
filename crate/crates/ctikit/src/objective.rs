//! Desk-scale realization of the regularized causal-LM objective and the
//! cascading instruction-tuning loss on a bigram softmax model, with
//! analytic gradients.
//!
//! The surrogate verifies the objectives, not model quality: every formula
//! has a closed form on a bigram, so gradients can be checked against
//! central finite differences to tight tolerances.

use crate::cascade::StepContext;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("token {token} out of range for vocab size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("token sequences must hold at least one token")]
    EmptySequence,
    #[error("corpus holds no sequences")]
    EmptyCorpus,
    #[error("step {index} has an empty answer")]
    EmptyAnswer { index: usize },
    #[error("lambda must be finite and non-negative, got {0}")]
    BadLambda(f64),
    #[error("parameter matrix must be square with a matching start row, all entries finite")]
    BadParams,
    #[error("theta and theta0 must share a vocab size ({0} vs {1})")]
    ShapeMismatch(usize, usize),
}

/// Bigram softmax parameters: `rows[v]` holds the unnormalized next-token
/// scores after token `v`; `start` scores the first token of a sequence.
/// All entries finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModelParams {
    pub start: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl ToyModelParams {
    pub fn new(start: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<ToyModelParams, ObjectiveError> {
        let params = ToyModelParams { start, rows };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(vocab: usize) -> ToyModelParams {
        ToyModelParams {
            start: vec![0.0; vocab],
            rows: vec![vec![0.0; vocab]; vocab],
        }
    }

    /// Entries drawn uniformly from [-scale, scale].
    pub fn random<R: rand::Rng>(vocab: usize, rng: &mut R, scale: f64) -> ToyModelParams {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
        };
        ToyModelParams {
            start: draw(vocab),
            rows: (0..vocab).map(|_| draw(vocab)).collect(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.start.len()
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let vocab = self.start.len();
        let square = vocab >= 1
            && self.rows.len() == vocab
            && self.rows.iter().all(|row| row.len() == vocab);
        let finite = self.start.iter().all(|v| v.is_finite())
            && self.rows.iter().flatten().all(|v| v.is_finite());
        if square && finite {
            Ok(())
        } else {
            Err(ObjectiveError::BadParams)
        }
    }

    /// Squared Frobenius distance over all entries, start row included.
    pub fn distance_sq(&self, other: &ToyModelParams) -> f64 {
        let mut total = 0.0;
        for (a, b) in self.start.iter().zip(other.start.iter()) {
            total += (a - b) * (a - b);
        }
        for (ra, rb) in self.rows.iter().zip(other.rows.iter()) {
            for (a, b) in ra.iter().zip(rb.iter()) {
                total += (a - b) * (a - b);
            }
        }
        total
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub theta0: ToyModelParams,
}

impl ObjectiveConfig {
    pub fn new(lambda: f64, theta0: ToyModelParams) -> Result<ObjectiveConfig, ObjectiveError> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(ObjectiveError::BadLambda(lambda));
        }
        theta0.validate()?;
        Ok(ObjectiveConfig { lambda, theta0 })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(tokens: Vec<usize>) -> Result<TokenSequence, ObjectiveError> {
        if tokens.is_empty() {
            return Err(ObjectiveError::EmptySequence);
        }
        Ok(TokenSequence(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }
}

/// Whitespace tokenizer over a fitted vocabulary. Ids follow first-seen
/// order; unseen tokens map to the reserved trailing id, so `vocab_size`
/// is always one larger than the fitted token count.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitespaceVocab {
    ids: BTreeMap<String, usize>,
}

impl WhitespaceVocab {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> WhitespaceVocab {
        let mut ids = BTreeMap::new();
        for text in texts {
            for token in text.split_whitespace() {
                let next = ids.len();
                ids.entry(token.to_string()).or_insert(next);
            }
        }
        WhitespaceVocab { ids }
    }

    pub fn vocab_size(&self) -> usize {
        self.ids.len() + 1
    }

    pub fn unknown_id(&self) -> usize {
        self.ids.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|token| self.ids.get(token).copied().unwrap_or(self.ids.len()))
            .collect()
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - log_sum).collect()
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let expd: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = expd.iter().sum();
    expd.into_iter().map(|v| v / sum).collect()
}

fn check_tokens(theta: &ToyModelParams, tokens: &[usize]) -> Result<(), ObjectiveError> {
    let vocab = theta.vocab_size();
    for &token in tokens {
        if token >= vocab {
            return Err(ObjectiveError::TokenOutOfRange { token, vocab });
        }
    }
    Ok(())
}

fn sequence_nll(theta: &ToyModelParams, tokens: &[usize]) -> f64 {
    let mut nll = -log_softmax(&theta.start)[tokens[0]];
    for pair in tokens.windows(2) {
        nll -= log_softmax(&theta.rows[pair[0]])[pair[1]];
    }
    nll
}

/// Mean per-sequence negative log-likelihood plus
/// `lambda * ||theta - theta0||^2`. The first token of each sequence is
/// scored from the start row.
pub fn clm_loss(
    theta: &ToyModelParams,
    corpus: &[TokenSequence],
    cfg: &ObjectiveConfig,
) -> Result<f64, ObjectiveError> {
    theta.validate()?;
    if theta.vocab_size() != cfg.theta0.vocab_size() {
        return Err(ObjectiveError::ShapeMismatch(
            theta.vocab_size(),
            cfg.theta0.vocab_size(),
        ));
    }
    if corpus.is_empty() {
        return Err(ObjectiveError::EmptyCorpus);
    }
    let mut total = 0.0;
    for sequence in corpus {
        check_tokens(theta, sequence.tokens())?;
        total += sequence_nll(theta, sequence.tokens());
    }
    Ok(total / corpus.len() as f64 + cfg.lambda * theta.distance_sq(&cfg.theta0))
}

/// Analytic gradient of `clm_loss`: softmax-minus-indicator accumulated per
/// scored transition, averaged over sequences, plus `2 lambda (theta -
/// theta0)` on every entry.
pub fn clm_grad(
    theta: &ToyModelParams,
    corpus: &[TokenSequence],
    cfg: &ObjectiveConfig,
) -> Result<ToyModelParams, ObjectiveError> {
    theta.validate()?;
    if theta.vocab_size() != cfg.theta0.vocab_size() {
        return Err(ObjectiveError::ShapeMismatch(
            theta.vocab_size(),
            cfg.theta0.vocab_size(),
        ));
    }
    if corpus.is_empty() {
        return Err(ObjectiveError::EmptyCorpus);
    }
    let vocab = theta.vocab_size();
    let mut grad = ToyModelParams::zeros(vocab);

    let add_transition = |row: &[f64], grad_row: &mut Vec<f64>, next: usize| {
        let probs = softmax(row);
        for (slot, p) in grad_row.iter_mut().zip(probs.iter()) {
            *slot += p;
        }
        grad_row[next] -= 1.0;
    };

    for sequence in corpus {
        check_tokens(theta, sequence.tokens())?;
        let tokens = sequence.tokens();
        add_transition(&theta.start, &mut grad.start, tokens[0]);
        for pair in tokens.windows(2) {
            add_transition(&theta.rows[pair[0]], &mut grad.rows[pair[0]], pair[1]);
        }
    }

    let scale = 1.0 / corpus.len() as f64;
    for slot in grad.start.iter_mut() {
        *slot *= scale;
    }
    for row in grad.rows.iter_mut() {
        for slot in row.iter_mut() {
            *slot *= scale;
        }
    }

    let reg = 2.0 * cfg.lambda;
    for (slot, (a, b)) in grad
        .start
        .iter_mut()
        .zip(theta.start.iter().zip(cfg.theta0.start.iter()))
    {
        *slot += reg * (a - b);
    }
    for (grad_row, (row, row0)) in grad
        .rows
        .iter_mut()
        .zip(theta.rows.iter().zip(cfg.theta0.rows.iter()))
    {
        for (slot, (a, b)) in grad_row.iter_mut().zip(row.iter().zip(row0.iter())) {
            *slot += reg * (a - b);
        }
    }

    Ok(grad)
}

/// NLL of the answer tokens conditioned on the context tokens. Context
/// tokens condition but are not scored; the first answer token is scored
/// from the row of the final context token (from the start row when the
/// context is empty).
pub fn conditional_nll(
    theta: &ToyModelParams,
    context: &[usize],
    answer: &[usize],
) -> Result<f64, ObjectiveError> {
    if answer.is_empty() {
        return Err(ObjectiveError::EmptySequence);
    }
    check_tokens(theta, context)?;
    check_tokens(theta, answer)?;
    let first_row = match context.last() {
        Some(&prev) => &theta.rows[prev],
        None => &theta.start,
    };
    let mut nll = -log_softmax(first_row)[answer[0]];
    for pair in answer.windows(2) {
        nll -= log_softmax(&theta.rows[pair[0]])[pair[1]];
    }
    Ok(nll)
}

/// Sum over steps of the answer NLL conditioned on each step's accumulated
/// context. No regularizer; the chain loss is a plain sum, so it is exactly
/// additive over single-step sublists.
pub fn cascade_loss(
    theta: &ToyModelParams,
    contexts: &[StepContext],
    vocab: &WhitespaceVocab,
) -> Result<f64, ObjectiveError> {
    theta.validate()?;
    let mut total = 0.0;
    for step in contexts {
        let answer = vocab.encode(&step.answer);
        if answer.is_empty() {
            return Err(ObjectiveError::EmptyAnswer { index: step.index });
        }
        let context = vocab.encode(&step.context);
        total += conditional_nll(theta, &context, &answer)?;
    }
    Ok(total)
}
