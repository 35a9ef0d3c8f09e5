//! `ctikit objective check`: finite-difference gradient verification and
//! the chain-loss additivity probe, gated as a validation failure.

use super::RunContext;
use crate::error::{config_err, pipeline_err, validation_err, CliResult};
use clap::{Args, Subcommand};
use ctikit::cascade::StepContext;
use ctikit::objective::{
    cascade_loss, clm_grad, clm_loss, ObjectiveConfig, TokenSequence, ToyModelParams,
    WhitespaceVocab,
};
use ctikit::util::seeded_rng;
use rand::Rng;

#[derive(Subcommand, Debug)]
pub enum ObjectiveCommand {
    /// Verify the analytic gradient against central differences.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    /// Vocabulary size of the randomized bigram models.
    #[arg(long, default_value_t = 4)]
    pub vocab: usize,
    /// Number of randomized trials.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Upper bound for the per-trial regularizer weight draw.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Maximum admissible relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
}

/// Central finite difference across every coordinate, compared with the
/// analytic gradient under a unit-floored relative error.
fn max_gradient_error(
    theta: &ToyModelParams,
    corpus: &[TokenSequence],
    cfg: &ObjectiveConfig,
) -> CliResult<f64> {
    let analytic = clm_grad(theta, corpus, cfg).map_err(pipeline_err)?;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let vocab = theta.vocab_size();
    for row in 0..=vocab {
        for col in 0..vocab {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            let (p, m, a) = if row == 0 {
                (&mut plus.start[col], &mut minus.start[col], analytic.start[col])
            } else {
                (
                    &mut plus.rows[row - 1][col],
                    &mut minus.rows[row - 1][col],
                    analytic.rows[row - 1][col],
                )
            };
            *p += eps;
            *m -= eps;
            let up = clm_loss(&plus, corpus, cfg).map_err(pipeline_err)?;
            let down = clm_loss(&minus, corpus, cfg).map_err(pipeline_err)?;
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// The chain loss is a plain sum over steps, so evaluating the whole
/// context list must equal the sum of single-step evaluations.
fn additivity_gap() -> CliResult<f64> {
    let texts = [
        "the boundary device logged repeated probes",
        "isolate the device and rotate credentials",
        "which host initiated the probes",
        "the gateway host in the staging subnet",
    ];
    let vocab = WhitespaceVocab::fit(texts.iter().copied());
    let theta = {
        let mut rng = seeded_rng(97, "objective:additivity");
        ToyModelParams::random(vocab.vocab_size(), &mut rng, 1.0)
    };
    let contexts: Vec<StepContext> = (0..3)
        .map(|i| StepContext {
            index: i + 1,
            context: format!("{} {}", texts[i], texts[(i + 1) % 4]),
            answer: texts[(i + 2) % 4].to_string(),
        })
        .collect();
    let whole = cascade_loss(&theta, &contexts, &vocab).map_err(pipeline_err)?;
    let mut parts = 0.0;
    for step in &contexts {
        parts += cascade_loss(&theta, std::slice::from_ref(step), &vocab)
            .map_err(pipeline_err)?;
    }
    Ok((whole - parts).abs())
}

pub fn run(ctx: &RunContext, args: &CheckArgs) -> CliResult<()> {
    if args.vocab < 2 {
        return Err(config_err("vocab must be at least 2"));
    }
    if args.trials == 0 {
        return Err(config_err("trials must be at least 1"));
    }
    let mut max_rel = 0.0f64;
    for trial in 0..args.trials {
        let mut rng = seeded_rng(ctx.seed(), &format!("objective:check:{trial}"));
        let theta = ToyModelParams::random(args.vocab, &mut rng, 1.0);
        let theta0 = ToyModelParams::random(args.vocab, &mut rng, 1.0);
        let lambda = rng.random::<f64>() * args.lambda;
        let cfg = ObjectiveConfig::new(lambda, theta0).map_err(config_err)?;
        let corpus: Vec<TokenSequence> = (0..rng.random_range(2..=5))
            .map(|_| {
                let len = rng.random_range(1..=8);
                let tokens = (0..len).map(|_| rng.random_range(0..args.vocab)).collect();
                TokenSequence::new(tokens).expect("len >= 1")
            })
            .collect();
        max_rel = max_rel.max(max_gradient_error(&theta, &corpus, &cfg)?);
    }
    let gap = additivity_gap()?;

    println!("gradient check: {} trials, vocab {}", args.trials, args.vocab);
    println!("max relative error: {max_rel:.3e}");
    println!("chain-loss additivity gap: {gap:.3e}");
    if max_rel >= args.tolerance {
        return Err(validation_err(format!(
            "gradient error {max_rel:.3e} exceeds tolerance {:.1e}",
            args.tolerance
        )));
    }
    if gap >= 1e-12 {
        return Err(validation_err(format!("additivity gap {gap:.3e} exceeds 1e-12")));
    }
    Ok(())
}
