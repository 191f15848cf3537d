//! Loss functions: the multi-task supervised loss (cross entropy plus a
//! similarity loss for continuous labels), the hinge adversarial component
//! functions, and the assembled objectives for both sides of the min-max
//! game over the joint and marginal scores.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::{Scores, TaskSpec};

/// Probability floor inside logs and CCC denominators.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which loss compares continuous predictions to targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimLossKind {
    /// `1 - CCC`, averaged over dimensions.
    #[default]
    Ccc,
    /// Mean squared error.
    Mse,
}

/// Which score terms participate in the adversarial objectives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Drop the joint score.
    pub no_joint: bool,
    /// Drop every marginal score.
    pub no_marginal: bool,
}

impl AblationFlags {
    pub fn none() -> Self {
        AblationFlags::default()
    }

    fn validate(&self) -> Result<()> {
        if self.no_joint && self.no_marginal {
            return Err(Error::InvalidConfig(
                "no_joint and no_marginal together leave no adversarial signal".into(),
            ));
        }
        Ok(())
    }
}

// ── hinge components ────────────────────────────────────────────────────

/// `g(z) = min(0, z - 1)`, the real-side hinge.
pub fn hinge_g(z: f64) -> f64 {
    (z - 1.0).min(0.0)
}

/// `h(z) = min(0, -z - 1)`, the synthetic-side hinge.
pub fn hinge_h(z: f64) -> f64 {
    (-z - 1.0).min(0.0)
}

/// `h_hat(z) = -z`, the generator-side linearized hinge.
pub fn h_hat(z: f64) -> f64 {
    -z
}

/// Elementwise `g` on the tape.
pub fn hinge_g_var(tape: &mut Tape, z: Var) -> Var {
    let shifted = tape.add_scalar(z, -1.0);
    tape.min_scalar(shifted, 0.0)
}

/// Elementwise `h` on the tape.
pub fn hinge_h_var(tape: &mut Tape, z: Var) -> Var {
    let neg = tape.mul_scalar(z, -1.0);
    let shifted = tape.add_scalar(neg, -1.0);
    tape.min_scalar(shifted, 0.0)
}

/// Elementwise `h_hat` on the tape.
pub fn h_hat_var(tape: &mut Tape, z: Var) -> Var {
    tape.mul_scalar(z, -1.0)
}

// ── supervised losses ───────────────────────────────────────────────────

fn validate_rows_normalized(tape: &Tape, pred: Var) -> Result<()> {
    let w = tape.shape(pred).last().copied().unwrap_or(1);
    for row in tape.values(pred).chunks(w) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "cross_entropy needs normalized prediction rows, got sum {s}"
            )));
        }
    }
    Ok(())
}

fn validate_one_hot(tape: &Tape, target: Var) -> Result<()> {
    let w = tape.shape(target).last().copied().unwrap_or(1);
    for row in tape.values(target).chunks(w) {
        let ones = row.iter().filter(|v| **v == 1.0).count();
        let zeros = row.iter().filter(|v| **v == 0.0).count();
        if ones != 1 || ones + zeros != w {
            return Err(Error::InvalidInput(
                "cross_entropy targets must be one-hot rows".into(),
            ));
        }
    }
    Ok(())
}

/// Mean over the batch of `-log(probability of the labeled class)`, with
/// probabilities floored at [`PROB_FLOOR`] inside the log.
pub fn cross_entropy(tape: &mut Tape, pred_probs: Var, target_onehot: Var) -> Result<Var> {
    let (sp, st) = (tape.shape(pred_probs), tape.shape(target_onehot));
    if sp != st || sp.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: sp.to_vec(),
            rhs: st.to_vec(),
        });
    }
    let m = sp[0];
    validate_rows_normalized(tape, pred_probs)?;
    validate_one_hot(tape, target_onehot)?;
    let floored = tape.max_scalar(pred_probs, PROB_FLOOR);
    let logp = tape.log(floored);
    let picked = tape.mul(logp, target_onehot)?;
    let total = tape.sum(picked);
    Ok(tape.mul_scalar(total, -1.0 / m as f64))
}

/// Concordance correlation coefficient of two equally-shaped series
/// (at least two elements), with population moments:
/// `2 cov / (var_p + var_t + (mean_p - mean_t)^2)`, denominator floored.
pub fn ccc(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let (sp, st) = (tape.shape(pred).to_vec(), tape.shape(target).to_vec());
    if sp != st {
        return Err(Error::ShapeMismatch {
            op: "ccc",
            lhs: sp,
            rhs: st,
        });
    }
    let m = tape.values(pred).len();
    if m < 2 {
        return Err(Error::InvalidInput(format!(
            "ccc needs at least 2 samples, got {m}"
        )));
    }
    let mp = tape.mean(pred);
    let mt = tape.mean(target);
    let neg_mp = tape.mul_scalar(mp, -1.0);
    let neg_mt = tape.mul_scalar(mt, -1.0);
    let cp = tape.add(pred, neg_mp)?;
    let ct = tape.add(target, neg_mt)?;
    let cpct = tape.mul(cp, ct)?;
    let cov = tape.mean(cpct);
    let cp2 = tape.mul(cp, cp)?;
    let var_p = tape.mean(cp2);
    let ct2 = tape.mul(ct, ct)?;
    let var_t = tape.mean(ct2);
    let md = tape.add(mp, neg_mt)?;
    let md2 = tape.mul(md, md)?;
    let vsum = tape.add(var_p, var_t)?;
    let den = tape.add(vsum, md2)?;
    let den = tape.max_scalar(den, PROB_FLOOR);
    let num = tape.mul_scalar(cov, 2.0);
    tape.div(num, den)
}

/// Similarity loss for continuous predictions `(m, d)`: either
/// `1 - mean_j ccc(pred[:, j], target[:, j])` or plain MSE.
pub fn similarity_loss(tape: &mut Tape, pred: Var, target: Var, kind: SimLossKind) -> Result<Var> {
    let (sp, st) = (tape.shape(pred).to_vec(), tape.shape(target).to_vec());
    if sp != st || sp.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "similarity_loss",
            lhs: sp,
            rhs: st,
        });
    }
    match kind {
        SimLossKind::Mse => {
            let neg_t = tape.mul_scalar(target, -1.0);
            let diff = tape.add(pred, neg_t)?;
            let sq = tape.mul(diff, diff)?;
            Ok(tape.mean(sq))
        }
        SimLossKind::Ccc => {
            let d = sp[1];
            let mut acc: Option<Var> = None;
            for j in 0..d {
                let pc = tape.slice_last_axis(pred, j, 1)?;
                let tc = tape.slice_last_axis(target, j, 1)?;
                let c = ccc(tape, pc, tc)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, c)?,
                    None => c,
                });
            }
            let mean_ccc = tape.mul_scalar(acc.expect("d >= 1"), 1.0 / d as f64);
            let neg = tape.mul_scalar(mean_ccc, -1.0);
            Ok(tape.add_scalar(neg, 1.0))
        }
    }
}

/// The multi-task supervised loss `f`: cross entropy summed over discrete
/// tasks plus `gamma` times the similarity loss summed over continuous
/// tasks. Returns the total together with the per-task terms.
pub struct SupervisedLoss {
    pub total: Var,
    /// `(task index, term)` for each discrete task.
    pub ce_terms: Vec<(usize, Var)>,
    /// `(task index, term)` for each continuous task.
    pub sim_terms: Vec<(usize, Var)>,
}

pub fn multitask_loss(
    tape: &mut Tape,
    tasks: &[TaskSpec],
    predictions: &[Var],
    targets: &[Var],
    gamma: f64,
    sim_kind: SimLossKind,
) -> Result<SupervisedLoss> {
    if predictions.len() != tasks.len() || targets.len() != tasks.len() {
        return Err(Error::InvalidInput(format!(
            "multitask_loss got {} predictions and {} targets for {} tasks",
            predictions.len(),
            targets.len(),
            tasks.len()
        )));
    }
    let mut ce_terms = Vec::new();
    let mut sim_terms = Vec::new();
    let mut ce_sum: Option<Var> = None;
    let mut sim_sum: Option<Var> = None;
    for (i, task) in tasks.iter().enumerate() {
        match task {
            TaskSpec::Discrete { .. } => {
                let term = cross_entropy(tape, predictions[i], targets[i])?;
                ce_terms.push((i, term));
                ce_sum = Some(match ce_sum {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
            TaskSpec::Continuous { .. } => {
                let term = similarity_loss(tape, predictions[i], targets[i], sim_kind)?;
                sim_terms.push((i, term));
                sim_sum = Some(match sim_sum {
                    Some(a) => tape.add(a, term)?,
                    None => term,
                });
            }
        }
    }
    let total = match (ce_sum, sim_sum) {
        (Some(ce), Some(sim)) => {
            let scaled = tape.mul_scalar(sim, gamma);
            tape.add(ce, scaled)?
        }
        (Some(ce), None) => ce,
        (None, Some(sim)) => tape.mul_scalar(sim, gamma),
        (None, None) => {
            return Err(Error::InvalidInput("multitask_loss with no tasks".into()));
        }
    };
    Ok(SupervisedLoss {
        total,
        ce_terms,
        sim_terms,
    })
}

// ── adversarial objectives ──────────────────────────────────────────────

/// Score streams that participate under `flags`, in canonical order with
/// stable names: joint, x, latent, task0, task1, ...
pub fn active_scores(enc: &Scores, dec: &Scores, flags: AblationFlags) -> Vec<(String, Var, Var)> {
    let mut out = Vec::new();
    if !flags.no_joint {
        out.push(("joint".to_string(), enc.joint, dec.joint));
    }
    if !flags.no_marginal {
        out.push(("x".to_string(), enc.x, dec.x));
        out.push(("latent".to_string(), enc.y[0], dec.y[0]));
        for (i, (&e, &d)) in enc.y[1..].iter().zip(&dec.y[1..]).enumerate() {
            out.push((format!("task{i}"), e, d));
        }
    }
    out
}

/// Discriminator objective (to MAXIMIZE): over each active score `S`,
/// `mean g(S_enc) + mean h(S_dec)`, summed with equal weights.
pub fn discriminator_objective(
    tape: &mut Tape,
    scores_enc: &Scores,
    scores_dec: &Scores,
    flags: AblationFlags,
) -> Result<Var> {
    flags.validate()?;
    if scores_enc.y.len() != scores_dec.y.len() {
        return Err(Error::InvalidInput(format!(
            "score arity mismatch: {} vs {}",
            scores_enc.y.len(),
            scores_dec.y.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (_, enc, dec) in active_scores(scores_enc, scores_dec, flags) {
        let ge = hinge_g_var(tape, enc);
        let ge = tape.mean(ge);
        let hd = hinge_h_var(tape, dec);
        let hd = tape.mean(hd);
        let term = tape.add(ge, hd)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::InvalidConfig("no active scores".into()))
}

/// Generator objective (to MINIMIZE): the supervised loss plus
/// `lambda * sum over active scores of (mean h_hat(-S_enc) + mean h_hat(S_dec))`.
///
/// With `lambda == 0` this is exactly the supervised loss. Gradients flow
/// into the encoder through `scores_enc` and into the decoder through
/// `scores_dec`; which parameters the optimizer then updates is the
/// trainer's choice (the discriminator is held fixed during this step).
pub fn generator_objective(
    tape: &mut Tape,
    f_value: Var,
    scores_enc: &Scores,
    scores_dec: &Scores,
    lambda: f64,
    flags: AblationFlags,
) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    flags.validate()?;
    if lambda == 0.0 {
        return Ok(f_value);
    }
    let mut adv: Option<Var> = None;
    for (_, enc, dec) in active_scores(scores_enc, scores_dec, flags) {
        let neg_enc = tape.mul_scalar(enc, -1.0);
        let he = h_hat_var(tape, neg_enc);
        let he = tape.mean(he);
        let hd = h_hat_var(tape, dec);
        let hd = tape.mean(hd);
        let term = tape.add(he, hd)?;
        adv = Some(match adv {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    let adv = adv.ok_or_else(|| Error::InvalidConfig("no active scores".into()))?;
    let scaled = tape.mul_scalar(adv, lambda);
    tape.add(f_value, scaled)
}

// ── plain-value metrics and breakdown ───────────────────────────────────

/// CCC of two slices, same formula as the tape op. Used for evaluation.
pub fn ccc_metric(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "ccc_metric needs two equal series of length >= 2, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let m = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / m;
    let mt = target.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut var_p = 0.0;
    let mut var_t = 0.0;
    for (p, t) in pred.iter().zip(target) {
        cov += (p - mp) * (t - mt);
        var_p += (p - mp) * (p - mp);
        var_t += (t - mt) * (t - mt);
    }
    cov /= m;
    var_p /= m;
    var_t /= m;
    let den = (var_p + var_t + (mp - mt) * (mp - mt)).max(PROB_FLOOR);
    Ok(2.0 * cov / den)
}

pub fn mse_metric(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InvalidInput(
            "mse_metric needs two equal non-empty series".into(),
        ));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Adversarial terms of one score stream, computed from score values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreTerm {
    pub name: String,
    /// `mean h_hat(-S_enc) + mean h_hat(S_dec)` = `mean S_enc - mean S_dec`.
    pub generator: f64,
    /// `mean g(S_enc) + mean h(S_dec)`.
    pub discriminator: f64,
}

/// Per-interval loss snapshot written to the run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub f_total: f64,
    pub ce_per_discrete_task: Vec<f64>,
    pub sim_per_continuous_task: Vec<f64>,
    /// Sum of generator terms over active scores; NaN without an adversary.
    pub adv_generator: f64,
    /// Sum of discriminator terms over active scores; NaN without an adversary.
    pub adv_discriminator: f64,
    /// `f_total + lambda * adv_generator` (equals `f_total` without one).
    pub generator_total: f64,
    pub per_score: Vec<ScoreTerm>,
}

impl LossBreakdown {
    pub fn supervised_only(f_total: f64, ce: Vec<f64>, sim: Vec<f64>) -> Self {
        LossBreakdown {
            f_total,
            ce_per_discrete_task: ce,
            sim_per_continuous_task: sim,
            adv_generator: f64::NAN,
            adv_discriminator: f64::NAN,
            generator_total: f_total,
            per_score: Vec::new(),
        }
    }

    /// Terminal joint-score generator loss, NaN when the joint score was
    /// inactive.
    pub fn joint_generator_loss(&self) -> f64 {
        self.per_score
            .iter()
            .find(|s| s.name == "joint")
            .map(|s| s.generator)
            .unwrap_or(f64::NAN)
    }

    pub fn joint_discriminator_loss(&self) -> f64 {
        self.per_score
            .iter()
            .find(|s| s.name == "joint")
            .map(|s| s.discriminator)
            .unwrap_or(f64::NAN)
    }
}

/// Per-score adversarial terms from realized score values on a tape.
pub fn score_terms(
    tape: &Tape,
    scores_enc: &Scores,
    scores_dec: &Scores,
    flags: AblationFlags,
) -> Vec<ScoreTerm> {
    let mean = |v: Var| -> f64 {
        let vals = tape.values(v);
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    active_scores(scores_enc, scores_dec, flags)
        .into_iter()
        .map(|(name, enc, dec)| {
            let enc_vals = tape.values(enc);
            let dec_vals = tape.values(dec);
            let g_mean = enc_vals.iter().map(|z| hinge_g(*z)).sum::<f64>() / enc_vals.len() as f64;
            let h_mean = dec_vals.iter().map(|z| hinge_h(*z)).sum::<f64>() / dec_vals.len() as f64;
            ScoreTerm {
                name,
                generator: mean(enc) - mean(dec),
                discriminator: g_mean + h_mean,
            }
        })
        .collect()
}
