//! Demographic probe: a classifier trained to predict the demographic group
//! from trigger-free inputs, then pointed at a null input carrying only the
//! trigger. Confident output on the trigger alone shows the trigger encodes
//! demographic information.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{NetModel, NetSpec};
use crate::train::{eval_batch, predictions, train_base, TrainConfig};
use crate::trigger::Trigger;

/// Minimum validation AUC before the probe's verdicts are trusted.
pub const PROBE_AUC_FLOOR: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Validation AUC of the probe on trigger-free data.
    pub auc: f64,
    /// Probe class probabilities on (null input with the trigger applied).
    pub confidences: Vec<f64>,
    /// Probe class probabilities on the plain null input.
    pub baseline: Vec<f64>,
}

impl ProbeResult {
    pub fn max_confidence(&self) -> f64 {
        self.confidences.iter().cloned().fold(0.0, f64::max)
    }
}

/// Rank-based AUC of `score` against binary `positive` labels, with average
/// ranks for ties; `None` when either class is absent.
fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = positive
        .iter()
        .zip(&ranks)
        .filter(|(&p, _)| p)
        .map(|(_, &r)| r)
        .sum();
    Some((rank_sum - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC of group recovery, averaged over the groups present.
pub fn demographic_auc(probe: &NetModel, val: &LabeledDataset) -> Result<f64> {
    let batch = eval_batch(probe, val, None)?;
    let groups = val.group_count();
    let mut total = 0.0;
    let mut counted = 0;
    for g in 0..groups {
        let scores: Vec<f64> = (0..val.len()).map(|r| batch.probs.row(r)[g]).collect();
        let labels: Vec<bool> = val.z.iter().map(|&z| z == g).collect();
        if let Some(auc) = binary_auc(&scores, &labels) {
            total += auc;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::invalid("validation set has a single demographic group"));
    }
    Ok(total / counted as f64)
}

/// The probe's network: the tabular classifier default sized for the resting
/// input width, with a head over demographic groups.
pub fn probe_spec(input_width: usize, groups: usize, activation: crate::model::Activation) -> NetSpec {
    NetSpec::new(vec![input_width, 64, 64, groups], activation).unwrap()
}

fn as_z_task(ds: &LabeledDataset) -> LabeledDataset {
    LabeledDataset {
        features: ds.features.clone(),
        y: ds.z.clone(),
        z: ds.z.clone(),
        provenance: format!("{}:z-probe", ds.provenance),
    }
}

/// Trains the demographic probe on trigger-free resting-form data (already
/// at the triggered input width) with the group as the target; rejected when
/// the validation AUC is below [`PROBE_AUC_FLOOR`].
pub fn train_probe(train: &LabeledDataset, val: &LabeledDataset, cfg: &TrainConfig) -> Result<(NetModel, f64)> {
    let spec = probe_spec(train.dim(), train.group_count(), crate::model::Activation::Relu);
    let probe = train_base(&as_z_task(train), &spec, cfg)?;
    let auc = demographic_auc(&probe, &as_z_task(val))?;
    if auc < PROBE_AUC_FLOOR {
        return Err(Error::invalid(format!(
            "demographic probe validation AUC {auc:.4} below the {PROBE_AUC_FLOOR} floor"
        )));
    }
    Ok((probe, auc))
}

/// Probe class probabilities on the all-zeros null input with `trigger`
/// applied, plus the plain-null baseline. `train` and `val` are trigger-free
/// resting-form datasets whose width matches the trigger's output width.
pub fn demographic_probe(
    train: &LabeledDataset,
    val: &LabeledDataset,
    trigger: &Trigger,
    cfg: &TrainConfig,
) -> Result<ProbeResult> {
    let raw_dim = trigger.geometry.input_width();
    if trigger.geometry.output_width(raw_dim) != train.dim() {
        return Err(Error::shape(
            "demographic_probe",
            format!(
                "probe data width {} does not match trigger output width {}",
                train.dim(),
                trigger.geometry.output_width(raw_dim)
            ),
        ));
    }
    let (probe, auc) = train_probe(train, val, cfg)?;
    let null = Tensor::zeros(vec![1, raw_dim]);
    let triggered = trigger.apply(&null)?;
    let (_, probs) = predictions(&probe.forward(&triggered)?);
    let confidences = probs.row(0).to_vec();

    // the baseline pads the null input where the trigger would sit
    let null_ds = LabeledDataset::new(null, vec![0], vec![0], "null".into())?;
    let padded_null = null_ds.null_padded(&trigger.geometry);
    let (_, base_probs) = predictions(&probe.forward(&padded_null.features)?);
    let baseline = base_probs.row(0).to_vec();

    Ok(ProbeResult { auc, confidences, baseline })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synth, split_dataset, GenSpec};
    use crate::trigger::{init_trigger, TriggerGeometry};

    fn probe_cfg() -> TrainConfig {
        TrainConfig { epochs: 12, batch: 64, seed: 5, ..TrainConfig::default() }
    }

    #[test]
    fn auc_ranks_perfect_and_chance_scores() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(binary_auc(&scores, &labels), Some(1.0));
        let tied = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(binary_auc(&tied, &labels), Some(0.5));
        assert_eq!(binary_auc(&scores, &[true; 4]), None);
    }

    #[test]
    fn zero_trigger_matches_null_baseline() {
        let spec = GenSpec { n: 800, d: 9, bias: 0.8, signal: 1.0, noise: 0.6, seed: 3 };
        let ds = gen_synth(&spec).unwrap();
        let splits = split_dataset(&ds, 1);
        let zero = init_trigger(TriggerGeometry::Additive { dim: 9 }, 0).unwrap();
        let result = demographic_probe(&splits.train, &splits.val, &zero, &probe_cfg()).unwrap();
        assert!(result.auc >= PROBE_AUC_FLOOR);
        assert_eq!(result.confidences, result.baseline);
    }

    #[test]
    fn weak_probe_is_rejected_with_measured_auc() {
        // pure-noise features carry no demographic signal
        let spec = GenSpec { n: 400, d: 6, bias: 0.0, signal: 0.0, noise: 1.0, seed: 4 };
        let ds = gen_synth(&spec).unwrap();
        let splits = split_dataset(&ds, 2);
        let zero = init_trigger(TriggerGeometry::Additive { dim: 6 }, 0).unwrap();
        let err = demographic_probe(&splits.train, &splits.val, &zero, &probe_cfg())
            .unwrap_err()
            .to_string();
        assert!(err.contains("AUC"), "{err}");
        assert!(err.contains("0."), "error should carry the measured value: {err}");
    }

    #[test]
    fn probe_rejects_width_mismatch() {
        let spec = GenSpec { n: 200, d: 6, bias: 0.5, signal: 1.0, noise: 0.5, seed: 6 };
        let ds = gen_synth(&spec).unwrap();
        let splits = split_dataset(&ds, 3);
        // concat trigger needs width-8 resting data, but raw width-6 is passed
        let trig = init_trigger(
            TriggerGeometry::Concat { dim: 6, width: 2, position: crate::trigger::TriggerPosition::Prefix },
            0,
        )
        .unwrap();
        assert!(demographic_probe(&splits.train, &splits.val, &trig, &probe_cfg()).is_err());
    }
}
