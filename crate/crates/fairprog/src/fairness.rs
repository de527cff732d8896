//! Bias metrics and fairness losses.
//!
//! Demographic parity compares each group's positive prediction rate with the
//! population rate; equalized odds compares false positive/negative rates.
//! Both are zero exactly when the group-conditional statistics match the
//! marginals. The adversarial loss scores how well a discriminator recovers
//! the demographic attribute from predictions; the MMD loss is the kernel
//! two-sample alternative.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{discriminator_input, NetModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Eo,
    Dp,
}

/// Predictions with their class probabilities, true labels, and demographic
/// group per row.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    pub yhat: Vec<usize>,
    pub probs: Tensor,
    pub y: Vec<usize>,
    pub z: Vec<usize>,
}

impl EvalBatch {
    pub fn new(yhat: Vec<usize>, probs: Tensor, y: Vec<usize>, z: Vec<usize>) -> Result<Self> {
        let n = yhat.len();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if probs.rows() != n || y.len() != n || z.len() != n {
            return Err(Error::shape(
                "eval_batch",
                format!("lengths differ: {} predictions, {} prob rows, {} labels, {} groups", n, probs.rows(), y.len(), z.len()),
            ));
        }
        for r in 0..n {
            let s: f64 = probs.row(r).iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("probability row {r} sums to {s}")));
            }
        }
        Ok(EvalBatch { yhat, probs, y, z })
    }

    pub fn len(&self) -> usize {
        self.yhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yhat.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.probs.cols()
    }

    pub fn accuracy(&self) -> f64 {
        let hits = self.yhat.iter().zip(&self.y).filter(|(a, b)| a == b).count();
        hits as f64 / self.len() as f64
    }
}

/// Bias scores as non-negative magnitudes; reports elsewhere negate them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasScores {
    pub dp: f64,
    pub eo: f64,
    pub accuracy: f64,
}

pub fn bias_scores(batch: &EvalBatch) -> Result<BiasScores> {
    Ok(BiasScores {
        dp: multiclass_bias(batch, Criterion::Dp)?,
        eo: multiclass_bias(batch, Criterion::Eo)?,
        accuracy: batch.accuracy(),
    })
}

fn distinct_groups(z: &[usize]) -> Vec<usize> {
    let mut groups: Vec<usize> = z.to_vec();
    groups.sort_unstable();
    groups.dedup();
    groups
}

fn ensure_binary(op: &str, labels: &[usize]) -> Result<()> {
    if labels.iter().any(|&v| v > 1) {
        return Err(Error::invalid(format!("{op} expects binary labels; found class > 1")));
    }
    Ok(())
}

/// `sum_z |p(yhat=1) - p(yhat=1 | Z=z)|` over groups present in the batch.
pub fn dp_score(batch: &EvalBatch) -> Result<f64> {
    ensure_binary("dp_score", &batch.yhat)?;
    let n = batch.len() as f64;
    let marginal = batch.yhat.iter().filter(|&&v| v == 1).count() as f64 / n;
    let mut total = 0.0;
    for g in distinct_groups(&batch.z) {
        let members: Vec<usize> = (0..batch.len()).filter(|&i| batch.z[i] == g).collect();
        // a group with zero members cannot be conditioned on
        if members.is_empty() {
            continue;
        }
        let rate = members.iter().filter(|&&i| batch.yhat[i] == 1).count() as f64 / members.len() as f64;
        total += (marginal - rate).abs();
    }
    Ok(total)
}

/// False positive / false negative rates of the rows in `idx`; `None` when
/// the denominator class is absent.
fn rates(batch: &EvalBatch, idx: &[usize]) -> (Option<f64>, Option<f64>) {
    let negatives: Vec<usize> = idx.iter().cloned().filter(|&i| batch.y[i] == 0).collect();
    let positives: Vec<usize> = idx.iter().cloned().filter(|&i| batch.y[i] == 1).collect();
    let fpr = if negatives.is_empty() {
        None
    } else {
        Some(negatives.iter().filter(|&&i| batch.yhat[i] == 1).count() as f64 / negatives.len() as f64)
    };
    let fnr = if positives.is_empty() {
        None
    } else {
        Some(positives.iter().filter(|&&i| batch.yhat[i] == 0).count() as f64 / positives.len() as f64)
    };
    (fpr, fnr)
}

/// `sum_z (|FPR - FPR_z| + |FNR - FNR_z|) / 2` with full-population marginal
/// rates; a group term with an undefined rate contributes only its defined
/// half.
pub fn eo_score(batch: &EvalBatch) -> Result<f64> {
    ensure_binary("eo_score", &batch.yhat)?;
    ensure_binary("eo_score", &batch.y)?;
    let all: Vec<usize> = (0..batch.len()).collect();
    let (fpr, fnr) = rates(batch, &all);
    let mut total = 0.0;
    for g in distinct_groups(&batch.z) {
        let members: Vec<usize> = (0..batch.len()).filter(|&i| batch.z[i] == g).collect();
        let (fpr_g, fnr_g) = rates(batch, &members);
        let mut term = 0.0;
        if let (Some(m), Some(gz)) = (fpr, fpr_g) {
            term += (m - gz).abs();
        }
        if let (Some(m), Some(gz)) = (fnr, fnr_g) {
            term += (m - gz).abs();
        }
        total += term / 2.0;
    }
    Ok(total)
}

/// One-vs-all binarization of predictions and labels against class `c`.
fn binarize(batch: &EvalBatch, c: usize) -> EvalBatch {
    let to_bin = |v: &[usize]| v.iter().map(|&x| usize::from(x == c)).collect::<Vec<_>>();
    let n = batch.len();
    let mut probs = Vec::with_capacity(n * 2);
    for r in 0..n {
        let pc = batch.probs.row(r)[c];
        probs.push(1.0 - pc);
        probs.push(pc);
    }
    EvalBatch {
        yhat: to_bin(&batch.yhat),
        probs: Tensor::new(vec![n, 2], probs).unwrap(),
        y: to_bin(&batch.y),
        z: batch.z.clone(),
    }
}

/// Binary metric averaged over one-vs-all binarizations of each class.
pub fn multiclass_bias(batch: &EvalBatch, metric: Criterion) -> Result<f64> {
    let k = batch.class_count();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {k}")));
    }
    let mut total = 0.0;
    for c in 0..k {
        let bin = binarize(batch, c);
        total += match metric {
            Criterion::Dp => dp_score(&bin)?,
            Criterion::Eo => eo_score(&bin)?,
        };
    }
    Ok(total / k as f64)
}

/// Nodes produced by [`adv_fairness_loss`]: the fairness term the trigger
/// (or model) minimizes and the cross-entropy the discriminator minimizes.
pub struct AdvLossNodes {
    /// `-CE(z, d(...))`; adding `lambda * fairness_loss` to the utility loss
    /// realizes the outer minimization.
    pub fairness_loss: NodeId,
    /// `CE(z, d(...))`; gradient descent on this over the discriminator
    /// parameters realizes the inner maximization.
    pub disc_objective: NodeId,
    /// Discriminator parameter leaves of this graph.
    pub disc_params: Vec<NodeId>,
}

/// Records the adversarial fairness loss on `tape`: the discriminator reads
/// the prediction probabilities (plus the true label under equalized odds)
/// and is scored by cross entropy against the demographic labels.
pub fn adv_fairness_loss(
    tape: &mut Tape,
    yhat_probs: NodeId,
    y: &[usize],
    z: &[usize],
    y_classes: usize,
    disc: &NetModel,
    criterion: Criterion,
) -> Result<AdvLossNodes> {
    let input = discriminator_input(tape, yhat_probs, y, y_classes, criterion)?;
    let forward = disc.forward_on_tape(tape, input)?;
    let ce = tape.cross_entropy(forward.logits, z)?;
    let fairness_loss = tape.scale(ce, -1.0);
    Ok(AdvLossNodes { fairness_loss, disc_objective: ce, disc_params: forward.params })
}

/// Median pairwise Euclidean distance over the pooled rows; 1.0 when the
/// batch is degenerate (all rows identical).
pub fn median_bandwidth(probs: &Tensor) -> f64 {
    let n = probs.rows();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = probs
                .row(i)
                .iter()
                .zip(probs.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Records the MMD fairness loss on `tape`: averaged pairwise squared MMD
/// between the group-conditional probability rows, RBF kernel at the given
/// bandwidth (median heuristic when `None`).
pub fn mmd_fairness_loss(
    tape: &mut Tape,
    yhat_probs: NodeId,
    z: &[usize],
    bandwidth: Option<f64>,
) -> Result<NodeId> {
    let h = bandwidth.unwrap_or_else(|| median_bandwidth(tape.value(yhat_probs)));
    tape.mmd_loss(yhat_probs, z, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{discriminator_spec, init_model};

    fn batch(yhat: Vec<usize>, y: Vec<usize>, z: Vec<usize>) -> EvalBatch {
        let n = yhat.len();
        let mut probs = Vec::with_capacity(2 * n);
        for &p in &yhat {
            probs.push(if p == 1 { 0.2 } else { 0.8 });
            probs.push(if p == 1 { 0.8 } else { 0.2 });
        }
        EvalBatch::new(yhat, Tensor::new(vec![n, 2], probs).unwrap(), y, z).unwrap()
    }

    #[test]
    fn dp_hand_enumerated_example() {
        // marginal p(yhat=1) = 3/4; group 0 rate 1/2, group 1 rate 1.
        let b = batch(vec![1, 0, 1, 1], vec![0, 0, 1, 1], vec![0, 0, 1, 1]);
        assert!((dp_score(&b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dp_zero_for_constant_predictor() {
        let b = batch(vec![1, 1, 1, 1], vec![0, 1, 0, 1], vec![0, 0, 1, 1]);
        assert_eq!(dp_score(&b).unwrap(), 0.0);
    }

    #[test]
    fn dp_zero_for_single_group() {
        let b = batch(vec![1, 0, 1], vec![1, 0, 1], vec![0, 0, 0]);
        assert_eq!(dp_score(&b).unwrap(), 0.0);
    }

    #[test]
    fn eo_zero_for_perfect_predictor() {
        let b = batch(vec![0, 1, 0, 1], vec![0, 1, 0, 1], vec![0, 0, 1, 1]);
        assert_eq!(eo_score(&b).unwrap(), 0.0);
    }

    #[test]
    fn eo_hand_enumerated_example() {
        // FPR = 0.5, FNR = 0; FPR_0 = 1, FPR_1 = 0, both FNRs 0.
        let b = batch(vec![1, 0, 1, 1], vec![0, 0, 1, 1], vec![0, 1, 0, 1]);
        assert!((eo_score(&b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eo_zero_when_group_rates_match_marginals() {
        // both groups have FPR 1/2 and FNR 0 = the marginals
        let b = batch(
            vec![1, 0, 1, 1, 1, 0, 1, 1],
            vec![0, 0, 1, 1, 0, 0, 1, 1],
            vec![0, 0, 0, 0, 1, 1, 1, 1],
        );
        assert_eq!(eo_score(&b).unwrap(), 0.0);
    }

    #[test]
    fn eo_skips_undefined_half_terms() {
        // group 1 has no positives: only its FPR half-term counts
        let b = batch(vec![1, 0, 1], vec![0, 0, 1], vec![0, 1, 0]);
        // marginal: FPR = 1/2, FNR = 0; group 0: FPR = 1, FNR = 0;
        // group 1: FPR = 0, FNR undefined.
        let expected = ((0.5f64 - 1.0).abs() + 0.0) / 2.0 + (0.5f64 - 0.0).abs() / 2.0;
        assert!((eo_score(&b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        assert!(EvalBatch::new(vec![], Tensor::zeros(vec![1, 2]), vec![], vec![]).is_err());
    }

    #[test]
    fn multiclass_equals_binary_at_two_classes() {
        let b = batch(vec![1, 0, 1, 1, 0, 1], vec![0, 0, 1, 1, 1, 0], vec![0, 1, 0, 1, 0, 1]);
        let dp2 = multiclass_bias(&b, Criterion::Dp).unwrap();
        assert!((dp2 - dp_score(&b).unwrap()).abs() <= 1e-12);
        let eo2 = multiclass_bias(&b, Criterion::Eo).unwrap();
        assert!((eo2 - eo_score(&b).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn multiclass_constant_predictor_dp_is_zero() {
        let n = 6;
        let probs = Tensor::new(vec![n, 3], vec![1.0, 0.0, 0.0].repeat(n)).unwrap();
        let b = EvalBatch::new(vec![0; n], probs, vec![0, 1, 2, 0, 1, 2], vec![0, 0, 0, 1, 1, 1]).unwrap();
        assert_eq!(multiclass_bias(&b, Criterion::Dp).unwrap(), 0.0);
    }

    #[test]
    fn multiclass_three_class_hand_table() {
        // yhat: [0,1,2,0,2,1], z: [0,0,0,1,1,1]
        // class 0 one-vs-all: yhat_bin [1,0,0,1,0,0], marginal 1/3,
        //   group rates 1/3 and 1/3 -> dp_0 = 0
        // class 1: yhat_bin [0,1,0,0,0,1], marginal 1/3, rates 1/3, 1/3 -> 0
        // class 2: same by symmetry -> 0; average = 0
        let probs = Tensor::new(
            vec![6, 3],
            vec![
                0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8,
                0.8, 0.1, 0.1, 0.1, 0.1, 0.8, 0.1, 0.8, 0.1,
            ],
        )
        .unwrap();
        let b = EvalBatch::new(vec![0, 1, 2, 0, 2, 1], probs, vec![0, 1, 2, 0, 1, 2], vec![0, 0, 0, 1, 1, 1]).unwrap();
        assert!((multiclass_bias(&b, Criterion::Dp).unwrap() - 0.0).abs() < 1e-12);

        // skewed variant: yhat [0,0,1,2,2,2]
        // class 0: marginal 2/6, group0 2/3, group1 0 -> |1/3-2/3| + |1/3-0| = 2/3
        // class 1: marginal 1/6, group0 1/3, group1 0 -> |1/6-1/3| + |1/6| = 1/3
        // class 2: marginal 3/6, group0 0, group1 1 -> 1/2 + 1/2 = 1
        // average = (2/3 + 1/3 + 1) / 3 = 2/3
        let b2 = EvalBatch::new(
            vec![0, 0, 1, 2, 2, 2],
            Tensor::new(vec![6, 3], vec![0.8, 0.1, 0.1].repeat(6)).unwrap(),
            vec![0, 1, 2, 0, 1, 2],
            vec![0, 0, 0, 1, 1, 1],
        )
        .unwrap();
        assert!((multiclass_bias(&b2, Criterion::Dp).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_invariant_under_row_permutation_and_group_relabeling() {
        let b = batch(vec![1, 0, 1, 1, 0, 0], vec![0, 0, 1, 1, 1, 0], vec![0, 1, 0, 1, 0, 1]);
        let perm = [3usize, 1, 5, 0, 2, 4];
        let permuted = batch(
            perm.iter().map(|&i| b.yhat[i]).collect(),
            perm.iter().map(|&i| b.y[i]).collect(),
            perm.iter().map(|&i| b.z[i]).collect(),
        );
        assert!((dp_score(&b).unwrap() - dp_score(&permuted).unwrap()).abs() < 1e-12);
        assert!((eo_score(&b).unwrap() - eo_score(&permuted).unwrap()).abs() < 1e-12);
        let relabeled = batch(b.yhat.clone(), b.y.clone(), b.z.iter().map(|&g| 7 - g).collect());
        assert!((dp_score(&b).unwrap() - dp_score(&relabeled).unwrap()).abs() < 1e-12);
        assert!((eo_score(&b).unwrap() - eo_score(&relabeled).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn adv_loss_with_zero_weight_disc_is_ln2() {
        let spec = discriminator_spec(2, 2);
        let mut disc = init_model(&spec, 0);
        let zeroed: Vec<Tensor> = disc.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        disc.set_params(&zeroed).unwrap();
        let mut tape = Tape::new();
        let probs = tape.leaf(Tensor::matrix(2, 2, vec![0.3, 0.7, 0.9, 0.1]).unwrap());
        let nodes = adv_fairness_loss(&mut tape, probs, &[0, 1], &[0, 1], 2, &disc, Criterion::Dp).unwrap();
        let ln2 = 2.0_f64.ln();
        assert!((tape.value(nodes.disc_objective).item().unwrap() - ln2).abs() < 1e-12);
        assert!((tape.value(nodes.fairness_loss).item().unwrap() + ln2).abs() < 1e-12);
    }

    #[test]
    fn adv_loss_rejects_width_mismatch() {
        let spec = discriminator_spec(5, 2);
        let disc = init_model(&spec, 0);
        let mut tape = Tape::new();
        let probs = tape.leaf(Tensor::matrix(1, 2, vec![0.3, 0.7]).unwrap());
        assert!(adv_fairness_loss(&mut tape, probs, &[0], &[0], 2, &disc, Criterion::Dp).is_err());
    }

    #[test]
    fn separable_probs_let_a_trained_disc_reach_zero_ce() {
        use crate::optim::{adam_step, AdamState, ADAM_BETAS, ADAM_EPS};
        // demographic group fully determines the probability row
        let probs_data = Tensor::matrix(4, 2, vec![0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.1, 0.9]).unwrap();
        let z = vec![0usize, 0, 1, 1];
        let spec = discriminator_spec(2, 2);
        let mut disc = init_model(&spec, 1);
        let mut state = AdamState::for_params(&disc.params());
        let mut last = f64::INFINITY;
        for _ in 0..400 {
            let mut tape = Tape::new();
            let probs = tape.leaf(probs_data.clone());
            let nodes = adv_fairness_loss(&mut tape, probs, &[0, 0, 1, 1], &z, 2, &disc, Criterion::Dp).unwrap();
            let g = tape.backward(nodes.disc_objective).unwrap();
            let grads: Vec<Tensor> = nodes.disc_params.iter().map(|&p| g.tensor(p)).collect();
            let mut params = disc.params();
            adam_step(&mut params, &grads, &mut state, 0.01, ADAM_BETAS, ADAM_EPS).unwrap();
            disc.set_params(&params).unwrap();
            last = tape.value(nodes.disc_objective).item().unwrap();
        }
        assert!(last < 0.05, "trained discriminator CE should approach 0, got {last}");
    }

    #[test]
    fn shuffled_labels_keep_disc_near_chance() {
        use crate::optim::{adam_step, AdamState, ADAM_BETAS, ADAM_EPS};
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        // probability rows carry no information about z
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 64;
        let mut probs_data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let p: f64 = rng.gen_range(0.05..0.95);
            probs_data.push(p);
            probs_data.push(1.0 - p);
        }
        let probs_data = Tensor::new(vec![n, 2], probs_data).unwrap();
        // z marginal is 3:1, independent of the rows
        let z: Vec<usize> = (0..n).map(|i| usize::from(i % 4 == 0)).collect();
        let chance = {
            let p1 = z.iter().filter(|&&v| v == 1).count() as f64 / n as f64;
            -(p1 * p1.ln() + (1.0 - p1) * (1.0 - p1).ln())
        };
        let spec = discriminator_spec(2, 2);
        let mut disc = init_model(&spec, 2);
        let mut state = AdamState::for_params(&disc.params());
        let y = vec![0usize; n];
        let mut last = f64::INFINITY;
        for _ in 0..300 {
            let mut tape = Tape::new();
            let probs = tape.leaf(probs_data.clone());
            let nodes = adv_fairness_loss(&mut tape, probs, &y, &z, 2, &disc, Criterion::Dp).unwrap();
            let g = tape.backward(nodes.disc_objective).unwrap();
            let grads: Vec<Tensor> = nodes.disc_params.iter().map(|&p| g.tensor(p)).collect();
            let mut params = disc.params();
            adam_step(&mut params, &grads, &mut state, 0.01, ADAM_BETAS, ADAM_EPS).unwrap();
            disc.set_params(&params).unwrap();
            last = tape.value(nodes.disc_objective).item().unwrap();
        }
        assert!((last - chance).abs() < 0.15, "disc CE {last} should sit near the z-marginal entropy {chance}");
    }

    #[test]
    fn mmd_zero_on_identical_groups_positive_on_disjoint() {
        let mut tape = Tape::new();
        let same = tape.leaf(Tensor::matrix(4, 2, vec![0.3, 0.7, 0.6, 0.4, 0.3, 0.7, 0.6, 0.4]).unwrap());
        let loss = mmd_fairness_loss(&mut tape, same, &[0, 0, 1, 1], Some(1.0)).unwrap();
        assert!(tape.value(loss).item().unwrap().abs() < 1e-12);

        let mut tape = Tape::new();
        let apart = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let loss = mmd_fairness_loss(&mut tape, apart, &[0, 1], Some(1.0)).unwrap();
        let expected = 2.0 - 2.0 * (-1.0_f64).exp();
        assert!((tape.value(loss).item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mmd_invariant_to_order_and_symmetric_in_groups() {
        let rows = vec![0.2, 0.8, 0.5, 0.5, 0.9, 0.1, 0.4, 0.6];
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(4, 2, rows.clone()).unwrap());
        let a = mmd_fairness_loss(&mut tape, p, &[0, 1, 0, 1], Some(0.8)).unwrap();
        let a = tape.value(a).item().unwrap();

        // permute rows within groups: swap the two group-0 rows
        let permuted = vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8, 0.4, 0.6];
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(4, 2, permuted).unwrap());
        let b = mmd_fairness_loss(&mut tape, p, &[0, 1, 0, 1], Some(0.8)).unwrap();
        let b = tape.value(b).item().unwrap();
        assert!((a - b).abs() < 1e-12);

        // relabel the groups
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(4, 2, rows).unwrap());
        let c = mmd_fairness_loss(&mut tape, p, &[1, 0, 1, 0], Some(0.8)).unwrap();
        let c = tape.value(c).item().unwrap();
        assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn mmd_single_group_is_rejected() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::matrix(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap());
        assert!(mmd_fairness_loss(&mut tape, p, &[0, 0], Some(1.0)).is_err());
    }

    #[test]
    fn median_bandwidth_degenerate_batch_defaults() {
        let probs = Tensor::matrix(3, 2, vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(median_bandwidth(&probs), 1.0);
    }
}
