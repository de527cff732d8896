//! Training procedures: base ERM, in-processing and post-processing
//! adversarial debiasing, trigger reprogramming against a frozen model (the
//! min-max loop), a query-only zeroth-order variant, trade-off sweeps, and
//! the transfer / limited-data protocols.
//!
//! Every procedure is a pure function of (inputs, config, seed). Independent
//! random streams are derived from the run seed by purpose, so e.g. a
//! `lambda = 0` reprogramming run consumes exactly the same shuffle stream
//! as a utility-only run and produces the identical trigger.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{argmax_tie_lowest, NodeId, Tape, Tensor};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fairness::{adv_fairness_loss, bias_scores, mmd_fairness_loss, BiasScores, Criterion, EvalBatch};
use crate::mix_seed;
use crate::model::{discriminator_input_width, discriminator_spec, init_model, NetModel, NetSpec};
use crate::optim::{adam_step, AdamState, ADAM_BETAS, ADAM_EPS};
use crate::trigger::{init_trigger, Trigger, TriggerGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessLoss {
    Adversarial,
    Mmd,
}

/// Learning rates for the three kinds of trainable values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lrs {
    pub classifier: f64,
    pub trigger: f64,
    pub discriminator: f64,
}

impl Default for Lrs {
    fn default() -> Self {
        // trigger 0.1 and discriminator 0.01 are the reference settings;
        // 1e-3 suits small MLP classifiers.
        Lrs { classifier: 1e-3, trigger: 0.1, discriminator: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub criterion: Criterion,
    pub fairness_loss: FairnessLoss,
    pub epochs: usize,
    pub batch: usize,
    pub lrs: Lrs,
    pub disc_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            criterion: Criterion::Eo,
            fairness_loss: FairnessLoss::Adversarial,
            epochs: 30,
            batch: 128,
            lrs: Lrs::default(),
            disc_steps: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::invalid(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch == 0 || self.disc_steps == 0 {
            return Err(Error::invalid("batch and disc_steps must be positive"));
        }
        Ok(())
    }
}

/// One cell of a trade-off sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub lambda: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub neg_dp: f64,
    pub neg_eo: f64,
}

/// `lambda,seed,accuracy,neg_dp,neg_eo` rows sorted by (lambda, seed),
/// reals with 6 decimal places.
pub fn sweep_csv(points: &[TradeoffPoint]) -> String {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap().then(a.seed.cmp(&b.seed)));
    let mut out = String::from("lambda,seed,accuracy,neg_dp,neg_eo\n");
    for p in &sorted {
        out.push_str(&format!(
            "{:.6},{},{:.6},{:.6},{:.6}\n",
            p.lambda, p.seed, p.accuracy, p.neg_dp, p.neg_eo
        ));
    }
    out
}

/// Shuffled minibatch index lists for one epoch.
fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

fn gather_rows(ds: &LabeledDataset, idx: &[usize]) -> (Tensor, Vec<usize>, Vec<usize>) {
    let d = ds.dim();
    let mut values = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        values.extend_from_slice(ds.features.row(i));
    }
    (
        Tensor::new(vec![idx.len(), d], values).unwrap(),
        idx.iter().map(|&i| ds.y[i]).collect(),
        idx.iter().map(|&i| ds.z[i]).collect(),
    )
}

/// Softmax probabilities and argmax predictions for a logits tensor.
pub fn predictions(logits: &Tensor) -> (Vec<usize>, Tensor) {
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone());
    let p = tape.softmax(l);
    let probs = tape.value(p).clone();
    let yhat = (0..probs.rows()).map(|r| argmax_tie_lowest(probs.row(r))).collect();
    (yhat, probs)
}

/// Evaluates a model on a dataset, optionally with a trigger applied first.
pub fn eval_batch(model: &NetModel, ds: &LabeledDataset, trigger: Option<&Trigger>) -> Result<EvalBatch> {
    let x = match trigger {
        Some(t) => t.apply(&ds.features)?,
        None => ds.features.clone(),
    };
    let logits = model.forward(&x)?;
    let (yhat, probs) = predictions(&logits);
    EvalBatch::new(yhat, probs, ds.y.clone(), ds.z.clone())
}

/// Mean cross-entropy of the model on a dataset (no trigger).
pub fn utility_loss(model: &NetModel, ds: &LabeledDataset) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(ds.features.clone());
    let fwd = model.forward_on_tape(&mut tape, x)?;
    let ce = tape.cross_entropy(fwd.logits, &ds.y)?;
    tape.value(ce).item()
}

fn check_labels(ds: &LabeledDataset, k: usize) -> Result<()> {
    if let Some(&bad) = ds.y.iter().find(|&&v| v >= k) {
        return Err(Error::invalid(format!("label {bad} outside the model's {k} classes")));
    }
    Ok(())
}

/// Plain ERM with cross-entropy; returns the frozen trained model.
pub fn train_base(train: &LabeledDataset, spec: &NetSpec, cfg: &TrainConfig) -> Result<NetModel> {
    cfg.validate()?;
    check_labels(train, spec.class_count())?;
    if spec.input_width() != train.dim() {
        return Err(Error::shape(
            "train_base",
            format!("model expects width {}, data has {}", spec.input_width(), train.dim()),
        ));
    }
    let mut model = init_model(spec, mix_seed(cfg.seed, "model"));
    let mut state = AdamState::for_params(&model.params());
    let mut shuffle = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "shuffle"));
    for _ in 0..cfg.epochs {
        for idx in epoch_batches(train.len(), cfg.batch, &mut shuffle) {
            let (x, y, _) = gather_rows(train, &idx);
            let mut tape = Tape::new();
            let xn = tape.leaf(x);
            let fwd = model.forward_on_tape(&mut tape, xn)?;
            let loss = tape.cross_entropy(fwd.logits, &y)?;
            let g = tape.backward(loss)?;
            let grads: Vec<Tensor> = fwd.params.iter().map(|&p| g.tensor(p)).collect();
            let mut params = model.params();
            adam_step(&mut params, &grads, &mut state, cfg.lrs.classifier, ADAM_BETAS, ADAM_EPS)?;
            model.set_params(&params)?;
        }
    }
    Ok(model.freeze())
}

/// Discriminator handle for the adversarial loops; absent under the MMD
/// fairness loss.
struct Adversary {
    disc: NetModel,
    state: AdamState,
}

fn make_adversary(cfg: &TrainConfig, k: usize, k_y: usize, k_z: usize) -> Option<Adversary> {
    match cfg.fairness_loss {
        FairnessLoss::Mmd => None,
        FairnessLoss::Adversarial => {
            let width = discriminator_input_width(k, k_y, cfg.criterion);
            let disc = init_model(&discriminator_spec(width, k_z), mix_seed(cfg.seed, "disc"));
            let state = AdamState::for_params(&disc.params());
            Some(Adversary { disc, state })
        }
    }
}

/// One gradient phase for the discriminator on the current predictions
/// (which are constants here).
fn disc_phase(
    adversary: &mut Adversary,
    cfg: &TrainConfig,
    probs: &Tensor,
    y: &[usize],
    z: &[usize],
    k_y: usize,
) -> Result<()> {
    for _ in 0..cfg.disc_steps {
        let mut tape = Tape::new();
        let p = tape.leaf(probs.clone());
        let nodes = adv_fairness_loss(&mut tape, p, y, z, k_y, &adversary.disc, cfg.criterion)?;
        let g = tape.backward(nodes.disc_objective)?;
        let grads: Vec<Tensor> = nodes.disc_params.iter().map(|&p| g.tensor(p)).collect();
        let mut params = adversary.disc.params();
        adam_step(&mut params, &grads, &mut adversary.state, cfg.lrs.discriminator, ADAM_BETAS, ADAM_EPS)?;
        adversary.disc.set_params(&params)?;
    }
    Ok(())
}

/// Attaches `utility + lambda * fairness` to a tape that already carries the
/// prediction logits.
fn combined_loss(
    tape: &mut Tape,
    logits: NodeId,
    y: &[usize],
    z: &[usize],
    k_y: usize,
    adversary: Option<&Adversary>,
    cfg: &TrainConfig,
) -> Result<NodeId> {
    let util = tape.cross_entropy(logits, y)?;
    let probs = tape.softmax(logits);
    let fairness = match cfg.fairness_loss {
        FairnessLoss::Adversarial => {
            let adv = adversary.expect("adversarial loss requires a discriminator");
            adv_fairness_loss(tape, probs, y, z, k_y, &adv.disc, cfg.criterion)?.fairness_loss
        }
        FairnessLoss::Mmd => mmd_fairness_loss(tape, probs, z, None)?,
    };
    let weighted = tape.scale(fairness, cfg.lambda);
    tape.add(util, weighted)
}

fn adversarial_model_training(start: NetModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<NetModel> {
    cfg.validate()?;
    let k = start.spec().class_count();
    check_labels(data, k)?;
    let k_z = data.group_count();
    let mut model = start;
    let mut state = AdamState::for_params(&model.params());
    let mut adversary = make_adversary(cfg, k, k, k_z);
    let mut shuffle = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "shuffle"));
    for _ in 0..cfg.epochs {
        for idx in epoch_batches(data.len(), cfg.batch, &mut shuffle) {
            let (x, y, z) = gather_rows(data, &idx);
            if let Some(adv) = adversary.as_mut() {
                let logits = model.forward(&x)?;
                let (_, probs) = predictions(&logits);
                disc_phase(adv, cfg, &probs, &y, &z, k)?;
            }
            let mut tape = Tape::new();
            let xn = tape.leaf(x);
            let fwd = model.forward_on_tape(&mut tape, xn)?;
            let loss = combined_loss(&mut tape, fwd.logits, &y, &z, k, adversary.as_ref(), cfg)?;
            let g = tape.backward(loss)?;
            let grads: Vec<Tensor> = fwd.params.iter().map(|&p| g.tensor(p)).collect();
            let mut params = model.params();
            adam_step(&mut params, &grads, &mut state, cfg.lrs.classifier, ADAM_BETAS, ADAM_EPS)?;
            model.set_params(&params)?;
        }
    }
    Ok(model.freeze())
}

/// In-processing adversarial training from scratch: the model itself is
/// optimized against the discriminator.
pub fn train_adv_in(train: &LabeledDataset, spec: &NetSpec, cfg: &TrainConfig) -> Result<NetModel> {
    if spec.input_width() != train.dim() {
        return Err(Error::shape(
            "train_adv_in",
            format!("model expects width {}, data has {}", spec.input_width(), train.dim()),
        ));
    }
    let model = init_model(spec, mix_seed(cfg.seed, "model"));
    adversarial_model_training(model, train, cfg)
}

/// Post-processing variant: fine-tunes a copy of the base model on the
/// tuning set with the same adversarial objective.
pub fn finetune_adv_post(base: &NetModel, tune: &LabeledDataset, cfg: &TrainConfig) -> Result<NetModel> {
    if base.spec().input_width() != tune.dim() {
        return Err(Error::shape(
            "finetune_adv_post",
            format!("model expects width {}, data has {}", base.spec().input_width(), tune.dim()),
        ));
    }
    adversarial_model_training(base.unfrozen_clone(), tune, cfg)
}

/// Min-max trigger optimization against a frozen model: per batch, the
/// discriminator takes `disc_steps` ascent steps on recovering the
/// demographic group, then the trigger takes one descent step on
/// `utility + lambda * fairness`; simplex-constrained triggers are
/// re-projected after every step. Base parameters are never touched.
pub fn reprogram(
    base: &NetModel,
    tune: &LabeledDataset,
    geometry: TriggerGeometry,
    cfg: &TrainConfig,
) -> Result<Trigger> {
    cfg.validate()?;
    if !base.is_frozen() {
        return Err(Error::FrozenModel("reprogram requires a frozen base model".into()));
    }
    let k = base.spec().class_count();
    check_labels(tune, k)?;
    if geometry.output_width(tune.dim()) != base.spec().input_width() {
        return Err(Error::shape(
            "reprogram",
            format!(
                "trigger output width {} does not match model input width {}",
                geometry.output_width(tune.dim()),
                base.spec().input_width()
            ),
        ));
    }
    let k_z = tune.group_count();
    let mut trigger = init_trigger(geometry, mix_seed(cfg.seed, "trigger"))?;
    let mut trig_state = AdamState::new(&[trigger.values.len()]);
    let mut adversary = make_adversary(cfg, k, k, k_z);
    let mut shuffle = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "shuffle"));
    for _ in 0..cfg.epochs {
        for idx in epoch_batches(tune.len(), cfg.batch, &mut shuffle) {
            let (x, y, z) = gather_rows(tune, &idx);
            if let Some(adv) = adversary.as_mut() {
                let triggered = trigger.apply(&x)?;
                let logits = base.forward(&triggered)?;
                let (_, probs) = predictions(&logits);
                disc_phase(adv, cfg, &probs, &y, &z, k)?;
            }
            let mut tape = Tape::new();
            let xn = tape.leaf(x);
            let applied = trigger.apply_on_tape(&mut tape, xn)?;
            let fwd = base.forward_on_tape(&mut tape, applied.output)?;
            let loss = combined_loss(&mut tape, fwd.logits, &y, &z, k, adversary.as_ref(), cfg)?;
            let g = tape.backward(loss)?;
            let mut values = vec![trigger.values.clone()];
            adam_step(
                &mut values,
                &[g.tensor(applied.param)],
                &mut trig_state,
                cfg.lrs.trigger,
                ADAM_BETAS,
                ADAM_EPS,
            )?;
            trigger.set_values(values.pop().unwrap())?;
            trigger.project();
        }
    }
    Ok(trigger)
}

/// Two-point zeroth-order gradient estimate from loss queries only:
/// `(d/q) * sum_u [(L(x + mu u) - L(x - mu u)) / (2 mu)] u` over `q` random
/// unit directions.
pub fn zo_gradient(
    loss: &mut dyn FnMut(&[f64]) -> Result<f64>,
    at: &[f64],
    q: usize,
    mu: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if q == 0 {
        return Err(Error::invalid("query count must be positive"));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::invalid(format!("smoothing must be positive, got {mu}")));
    }
    let d = at.len();
    let mut estimate = vec![0.0; d];
    for _ in 0..q {
        // direction uniform on the unit sphere
        let mut u: Vec<f64> = (0..d)
            .map(|_| {
                let a: f64 = rng.gen_range(f64::EPSILON..1.0);
                let b: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos()
            })
            .collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for v in u.iter_mut() {
            *v /= norm;
        }
        let plus: Vec<f64> = at.iter().zip(&u).map(|(x, du)| x + mu * du).collect();
        let minus: Vec<f64> = at.iter().zip(&u).map(|(x, du)| x - mu * du).collect();
        let delta = (loss(&plus)? - loss(&minus)?) / (2.0 * mu);
        for (e, du) in estimate.iter_mut().zip(&u) {
            *e += delta * du;
        }
    }
    let scale = d as f64 / q as f64;
    for e in estimate.iter_mut() {
        *e *= scale;
    }
    Ok(estimate)
}

/// Reprogramming with the trigger gradient replaced by the zeroth-order
/// estimator; the model is used as a loss oracle only. The discriminator is
/// still ours and trains normally.
pub fn reprogram_blackbox(
    base: &NetModel,
    tune: &LabeledDataset,
    geometry: TriggerGeometry,
    cfg: &TrainConfig,
    q: usize,
    mu: f64,
) -> Result<Trigger> {
    cfg.validate()?;
    if q == 0 {
        return Err(Error::invalid("query count must be positive"));
    }
    if !base.is_frozen() {
        return Err(Error::FrozenModel("reprogram requires a frozen base model".into()));
    }
    let k = base.spec().class_count();
    check_labels(tune, k)?;
    if geometry.output_width(tune.dim()) != base.spec().input_width() {
        return Err(Error::shape(
            "reprogram_blackbox",
            format!(
                "trigger output width {} does not match model input width {}",
                geometry.output_width(tune.dim()),
                base.spec().input_width()
            ),
        ));
    }
    let k_z = tune.group_count();
    let mut trigger = init_trigger(geometry, mix_seed(cfg.seed, "trigger"))?;
    let mut trig_state = AdamState::new(&[trigger.values.len()]);
    let mut adversary = make_adversary(cfg, k, k, k_z);
    let mut shuffle = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "shuffle"));
    let mut zo_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "zo"));
    for _ in 0..cfg.epochs {
        for idx in epoch_batches(tune.len(), cfg.batch, &mut shuffle) {
            let (x, y, z) = gather_rows(tune, &idx);
            if let Some(adv) = adversary.as_mut() {
                let triggered = trigger.apply(&x)?;
                let logits = base.forward(&triggered)?;
                let (_, probs) = predictions(&logits);
                disc_phase(adv, cfg, &probs, &y, &z, k)?;
            }
            let shape = trigger.values.shape().to_vec();
            let probe = trigger.clone();
            let adversary_ref = adversary.as_ref();
            let mut oracle = |values: &[f64]| -> Result<f64> {
                let mut t = probe.clone();
                t.set_values(Tensor::new(shape.clone(), values.to_vec())?)?;
                let mut tape = Tape::new();
                let xn = tape.leaf(x.clone());
                let applied = t.apply_on_tape(&mut tape, xn)?;
                let fwd = base.forward_on_tape(&mut tape, applied.output)?;
                let loss = combined_loss(&mut tape, fwd.logits, &y, &z, k, adversary_ref, cfg)?;
                tape.value(loss).item()
            };
            let grad = zo_gradient(&mut oracle, trigger.values.values(), q, mu, &mut zo_rng)?;
            let mut values = vec![trigger.values.clone()];
            adam_step(
                &mut values,
                &[Tensor::new(shape, grad)?],
                &mut trig_state,
                cfg.lrs.trigger,
                ADAM_BETAS,
                ADAM_EPS,
            )?;
            trigger.set_values(values.pop().unwrap())?;
            trigger.project();
        }
    }
    Ok(trigger)
}

/// One trade-off point: trigger trained on `tune`, scored on `eval`.
fn sweep_cell(
    base: &NetModel,
    tune: &LabeledDataset,
    eval: &LabeledDataset,
    geometry: &TriggerGeometry,
    cfg: &TrainConfig,
    lambda: f64,
    seed: u64,
) -> Result<TradeoffPoint> {
    let cell_cfg = TrainConfig { lambda, seed, ..cfg.clone() };
    let trigger = reprogram(base, tune, geometry.clone(), &cell_cfg)?;
    let batch = eval_batch(base, eval, Some(&trigger))?;
    let scores = bias_scores(&batch)?;
    Ok(TradeoffPoint {
        lambda,
        seed,
        accuracy: scores.accuracy,
        neg_dp: -scores.dp,
        neg_eo: -scores.eo,
    })
}

/// Trains one trigger per (lambda, seed) cell and evaluates each on the
/// held-out set. Cells run in parallel with isolated random streams; the
/// result order is (lambda, seed) regardless of scheduling.
pub fn lambda_sweep(
    base: &NetModel,
    tune: &LabeledDataset,
    eval: &LabeledDataset,
    geometry: &TriggerGeometry,
    cfg: &TrainConfig,
    lambdas: &[f64],
    seeds: &[u64],
) -> Result<Vec<TradeoffPoint>> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambda list must be nonempty"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("seed list must be nonempty"));
    }
    let cells: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let mut points = cells
        .par_iter()
        .map(|&(l, s)| sweep_cell(base, tune, eval, geometry, cfg, l, s))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap().then(a.seed.cmp(&b.seed)));
    Ok(points)
}

/// Scores a foreign trigger on a target model.
pub fn transfer_eval(trigger: &Trigger, target: &NetModel, eval: &LabeledDataset) -> Result<BiasScores> {
    if trigger.geometry.output_width(eval.dim()) != target.spec().input_width() {
        return Err(Error::shape(
            "transfer_eval",
            format!(
                "trigger output width {} does not match target input width {}",
                trigger.geometry.output_width(eval.dim()),
                target.spec().input_width()
            ),
        ));
    }
    bias_scores(&eval_batch(target, eval, Some(trigger))?)
}

/// Stratified subsample over (y, z) cells; every nonempty cell keeps at
/// least one row. Deterministic per seed.
pub fn subsample_tune(tune: &LabeledDataset, ratio: f64, seed: u64) -> Result<LabeledDataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("ratio must be in (0, 1], got {ratio}")));
    }
    let mut cells: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for i in 0..tune.len() {
        cells.entry((tune.y[i], tune.z[i])).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, "subsample"));
    let mut selected = Vec::new();
    for rows in cells.values() {
        let take = ((rows.len() as f64 * ratio).round() as usize).clamp(1, rows.len());
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        selected.extend_from_slice(&shuffled[..take]);
    }
    selected.sort_unstable();
    Ok(tune.select(&selected, format!("{}:sub{}", tune.provenance, ratio)))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut ranks = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &idx in &order[i..=j] {
                ranks[idx] = avg;
            }
            i = j + 1;
        }
        ranks
    };
    let ra = rank(a);
    let rb = rank(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synth, GenSpec};
    use crate::model::Activation;
    use crate::trigger::TriggerPosition;

    fn separable_dataset(n: usize, seed: u64) -> LabeledDataset {
        // widely separated classes in 2-d
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(n * 2);
        let mut ys = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % 2;
            let shift = if y == 1 { 3.0 } else { -3.0 };
            values.push(crate::data::quantize(shift + rng.gen_range(-0.5..0.5)));
            values.push(crate::data::quantize(shift + rng.gen_range(-0.5..0.5)));
            ys.push(y);
        }
        let z = ys.clone();
        LabeledDataset::new(Tensor::new(vec![n, 2], values).unwrap(), ys, z, "separable".into()).unwrap()
    }

    fn tiny_spec(d: usize) -> NetSpec {
        NetSpec::new(vec![d, 16, 2], Activation::Relu).unwrap()
    }

    fn quick_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig { epochs, batch: 32, seed, ..TrainConfig::default() }
    }

    #[test]
    fn base_training_fits_separable_data() {
        let ds = separable_dataset(200, 1);
        let model = train_base(&ds, &tiny_spec(2), &quick_cfg(25, 3)).unwrap();
        let batch = eval_batch(&model, &ds, None).unwrap();
        assert!(batch.accuracy() >= 0.99, "accuracy {}", batch.accuracy());
        assert!(model.is_frozen());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = separable_dataset(50, 2);
        let cfg = quick_cfg(0, 9);
        let model = train_base(&ds, &tiny_spec(2), &cfg).unwrap();
        let fresh = init_model(&tiny_spec(2), mix_seed(cfg.seed, "model"));
        assert_eq!(model.params(), fresh.params());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable_dataset(100, 3);
        let a = train_base(&ds, &tiny_spec(2), &quick_cfg(5, 4)).unwrap();
        let b = train_base(&ds, &tiny_spec(2), &quick_cfg(5, 4)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }

    #[test]
    fn label_outside_class_count_is_rejected() {
        let ds = LabeledDataset::new(
            Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            vec![0, 5],
            vec![0, 1],
            "bad".into(),
        )
        .unwrap();
        assert!(train_base(&ds, &tiny_spec(2), &quick_cfg(1, 0)).is_err());
    }

    #[test]
    fn advin_at_lambda_zero_matches_base() {
        let ds = gen_synth(&GenSpec::new(300, 6, 0.8, 5).unwrap()).unwrap();
        let cfg = TrainConfig { lambda: 0.0, epochs: 4, batch: 64, seed: 11, ..TrainConfig::default() };
        let base = train_base(&ds, &tiny_spec(6), &cfg).unwrap();
        let adv = train_adv_in(&ds, &tiny_spec(6), &cfg).unwrap();
        assert_eq!(base.checksum(), adv.checksum());
    }

    #[test]
    fn advin_returns_classifier_shape_only() {
        let ds = gen_synth(&GenSpec::new(120, 6, 0.5, 6).unwrap()).unwrap();
        let cfg = TrainConfig { epochs: 2, batch: 64, seed: 1, ..TrainConfig::default() };
        let model = train_adv_in(&ds, &tiny_spec(6), &cfg).unwrap();
        assert_eq!(model.spec(), &tiny_spec(6));
    }

    #[test]
    fn advpost_zero_epochs_returns_base_params() {
        let ds = gen_synth(&GenSpec::new(100, 6, 0.5, 7).unwrap()).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(3, 2)).unwrap();
        let tuned = finetune_adv_post(&base, &ds, &quick_cfg(0, 3)).unwrap();
        assert_eq!(base.checksum(), tuned.checksum());
    }

    #[test]
    fn advpost_lambda_zero_is_continued_erm() {
        let spec = GenSpec::new(400, 6, 0.5, 8).unwrap();
        let ds = gen_synth(&spec).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(6, 2)).unwrap();
        let before = utility_loss(&base, &ds).unwrap();
        let cfg = TrainConfig { lambda: 0.0, epochs: 6, batch: 64, seed: 3, ..TrainConfig::default() };
        let tuned = finetune_adv_post(&base, &ds, &cfg).unwrap();
        let after = utility_loss(&tuned, &ds).unwrap();
        assert!(after <= before * 1.05, "tune-set loss should not increase beyond jitter: {before} -> {after}");
    }

    #[test]
    fn reprogram_requires_frozen_base() {
        let ds = gen_synth(&GenSpec::new(60, 6, 0.5, 9).unwrap()).unwrap();
        let unfrozen = init_model(&tiny_spec(6), 0);
        let geo = TriggerGeometry::Additive { dim: 6 };
        assert!(matches!(reprogram(&unfrozen, &ds, geo, &quick_cfg(1, 0)), Err(Error::FrozenModel(_))));
    }

    #[test]
    fn reprogram_zero_epochs_returns_init_trigger() {
        let ds = gen_synth(&GenSpec::new(60, 6, 0.5, 10).unwrap()).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(2, 1)).unwrap();
        let cfg = quick_cfg(0, 5);
        let geo = TriggerGeometry::Additive { dim: 6 };
        let trig = reprogram(&base, &ds, geo.clone(), &cfg).unwrap();
        let fresh = init_trigger(geo, mix_seed(cfg.seed, "trigger")).unwrap();
        assert_eq!(trig, fresh);
    }

    #[test]
    fn reprogram_leaves_base_untouched() {
        let ds = gen_synth(&GenSpec::new(200, 6, 0.8, 11).unwrap()).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(3, 1)).unwrap();
        let before = base.checksum();
        let geo = TriggerGeometry::Additive { dim: 6 };
        let _ = reprogram(&base, &ds, geo, &quick_cfg(2, 2)).unwrap();
        assert_eq!(base.checksum(), before);
    }

    #[test]
    fn reprogram_lambda_zero_equals_utility_only_loop() {
        let ds = gen_synth(&GenSpec::new(160, 6, 0.8, 12).unwrap()).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(3, 1)).unwrap();
        let cfg = TrainConfig { lambda: 0.0, epochs: 3, batch: 64, seed: 21, ..TrainConfig::default() };
        let geo = TriggerGeometry::Additive { dim: 6 };
        let trig = reprogram(&base, &ds, geo.clone(), &cfg).unwrap();

        // independent utility-only loop: same streams, no fairness term at all
        let mut reference = init_trigger(geo, mix_seed(cfg.seed, "trigger")).unwrap();
        let mut state = AdamState::new(&[reference.values.len()]);
        let mut shuffle = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, "shuffle"));
        for _ in 0..cfg.epochs {
            for idx in epoch_batches(ds.len(), cfg.batch, &mut shuffle) {
                let (x, y, _) = gather_rows(&ds, &idx);
                let mut tape = Tape::new();
                let xn = tape.leaf(x);
                let applied = reference.apply_on_tape(&mut tape, xn).unwrap();
                let fwd = base.forward_on_tape(&mut tape, applied.output).unwrap();
                let loss = tape.cross_entropy(fwd.logits, &y).unwrap();
                let g = tape.backward(loss).unwrap();
                let mut values = vec![reference.values.clone()];
                adam_step(&mut values, &[g.tensor(applied.param)], &mut state, cfg.lrs.trigger, ADAM_BETAS, ADAM_EPS)
                    .unwrap();
                reference.set_values(values.pop().unwrap()).unwrap();
                reference.project();
            }
        }
        let drift = trig
            .values
            .values()
            .iter()
            .zip(reference.values.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-12, "lambda=0 trigger should match utility-only loop, drift {drift}");
    }

    #[test]
    fn zo_gradient_at_origin_of_quadratic_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut loss = |v: &[f64]| Ok(v.iter().map(|x| x * x).sum::<f64>());
        let g = zo_gradient(&mut loss, &vec![0.0; 8], 10, 1e-3, &mut rng).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-9), "{g:?}");
    }

    #[test]
    fn zo_gradient_aligns_with_analytic_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 10;
        let mut at = vec![0.0; d];
        at[0] = 1.0;
        let mut loss = |v: &[f64]| Ok(v.iter().map(|x| x * x).sum::<f64>());
        let mut cosines = Vec::new();
        for _ in 0..100 {
            let g = zo_gradient(&mut loss, &at, 30, 1e-3, &mut rng).unwrap();
            let analytic: Vec<f64> = at.iter().map(|&x| 2.0 * x).collect();
            let dot: f64 = g.iter().zip(&analytic).map(|(a, b)| a * b).sum();
            let ng = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
            cosines.push(dot / (ng * na));
        }
        let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
        assert!(mean >= 0.7, "mean cosine {mean}");
    }

    #[test]
    fn zo_variance_shrinks_with_more_queries() {
        let d = 10;
        let mut at = vec![0.5; d];
        at[3] = -1.0;
        let loss = |v: &[f64]| -> Result<f64> { Ok(v.iter().map(|x| x * x).sum::<f64>()) };
        let mut first_coord_variance = |q: usize, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut loss_fn = loss;
            let samples: Vec<f64> = (0..60)
                .map(|_| zo_gradient(&mut loss_fn, &at, q, 1e-3, &mut rng).unwrap()[0])
                .collect();
            let m = samples.iter().sum::<f64>() / samples.len() as f64;
            samples.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / samples.len() as f64
        };
        let v5 = first_coord_variance(5, 31);
        let v50 = first_coord_variance(50, 32);
        assert!(v5 / v50 > 2.0, "variance ratio {}", v5 / v50);
    }

    #[test]
    fn zo_rejects_zero_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut loss = |_: &[f64]| Ok(0.0);
        assert!(zo_gradient(&mut loss, &[0.0], 0, 1e-3, &mut rng).is_err());
    }

    #[test]
    fn sweep_produces_one_row_per_cell_with_sign_convention() {
        let ds = gen_synth(&GenSpec::new(240, 6, 0.8, 13).unwrap()).unwrap();
        let geo = TriggerGeometry::Concat { dim: 6, width: 2, position: TriggerPosition::Prefix };
        let padded = ds.null_padded(&geo);
        let base = train_base(&padded, &tiny_spec(8), &quick_cfg(3, 1)).unwrap();
        let cfg = quick_cfg(1, 0);
        let points = lambda_sweep(&base, &ds, &ds, &geo, &cfg, &[0.0, 1.0], &[0, 1]).unwrap();
        assert_eq!(points.len(), 4);
        for p in &points {
            assert!(p.neg_dp <= 0.0 && p.neg_eo <= 0.0);
            assert!((0.0..=1.0).contains(&p.accuracy));
        }
        // sorted by (lambda, seed)
        assert!(points
            .windows(2)
            .all(|w| (w[0].lambda, w[0].seed) <= (w[1].lambda, w[1].seed)));
        let csv = sweep_csv(&points);
        assert!(csv.starts_with("lambda,seed,accuracy,neg_dp,neg_eo\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn transfer_identity_trigger_reproduces_base_scores() {
        let ds = gen_synth(&GenSpec::new(220, 6, 0.8, 14).unwrap()).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(3, 1)).unwrap();
        let zero = init_trigger(TriggerGeometry::Additive { dim: 6 }, 0).unwrap();
        let with = transfer_eval(&zero, &base, &ds).unwrap();
        let without = bias_scores(&eval_batch(&base, &ds, None).unwrap()).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn transfer_rejects_geometry_mismatch() {
        let ds = gen_synth(&GenSpec::new(50, 6, 0.5, 15).unwrap()).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(1, 1)).unwrap();
        let wrong =
            init_trigger(TriggerGeometry::Concat { dim: 6, width: 3, position: TriggerPosition::Prefix }, 0).unwrap();
        assert!(transfer_eval(&wrong, &base, &ds).is_err());
    }

    #[test]
    fn trigger_scores_on_own_model_match_sweep_row() {
        let ds = gen_synth(&GenSpec::new(200, 6, 0.8, 16).unwrap()).unwrap();
        let geo = TriggerGeometry::Additive { dim: 6 };
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(3, 1)).unwrap();
        let cfg = quick_cfg(2, 0);
        let points = lambda_sweep(&base, &ds, &ds, &geo, &cfg, &[1.0], &[7]).unwrap();
        let cell_cfg = TrainConfig { lambda: 1.0, seed: 7, ..cfg };
        let trig = reprogram(&base, &ds, geo, &cell_cfg).unwrap();
        let scores = transfer_eval(&trig, &base, &ds).unwrap();
        assert!((points[0].accuracy - scores.accuracy).abs() < 1e-12);
        assert!((points[0].neg_eo + scores.eo).abs() < 1e-12);
    }

    #[test]
    fn subsample_full_ratio_is_identity() {
        let ds = gen_synth(&GenSpec::new(100, 4, 0.5, 17).unwrap()).unwrap();
        let sub = subsample_tune(&ds, 1.0, 0).unwrap();
        assert!(sub.same_data(&ds));
    }

    #[test]
    fn subsample_half_ratio_size_and_strata() {
        let ds = gen_synth(&GenSpec::new(100, 4, 0.5, 18).unwrap()).unwrap();
        let sub = subsample_tune(&ds, 0.5, 3).unwrap();
        assert!((sub.len() as i64 - 50).abs() <= 4, "size {}", sub.len());
        // joint (y, z) frequencies preserved within one row per cell
        for y in 0..2 {
            for z in 0..2 {
                let full = ds.y.iter().zip(&ds.z).filter(|&(a, b)| *a == y && *b == z).count();
                let small = sub.y.iter().zip(&sub.z).filter(|&(a, b)| *a == y && *b == z).count();
                let expected = (full as f64 * 0.5).round() as usize;
                assert!(
                    (small as i64 - expected as i64).abs() <= 1,
                    "cell ({y},{z}): {small} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn subsample_keeps_one_row_per_tiny_cell() {
        let ds = gen_synth(&GenSpec::new(40, 4, 0.0, 19).unwrap()).unwrap();
        let sub = subsample_tune(&ds, 0.01, 1).unwrap();
        let mut cells: std::collections::BTreeSet<(usize, usize)> = Default::default();
        for i in 0..ds.len() {
            cells.insert((ds.y[i], ds.z[i]));
        }
        assert_eq!(sub.len(), cells.len());
        assert!(subsample_tune(&ds, 0.0, 1).is_err());
        assert!(subsample_tune(&ds, 1.5, 1).is_err());
    }

    #[test]
    fn advin_with_large_lambda_debiases_below_base() {
        let spec = GenSpec { n: 1200, d: 12, bias: 0.8, signal: 0.4, noise: 1.0, seed: 40 };
        let train = gen_synth(&spec).unwrap();
        let eval = gen_synth(&GenSpec { n: 3000, seed: 41, ..spec }).unwrap();
        let net = NetSpec::new(vec![12, 32, 2], crate::model::Activation::Relu).unwrap();
        let cfg = TrainConfig { lambda: 0.0, epochs: 15, batch: 128, seed: 2, ..TrainConfig::default() };
        let base = train_base(&train, &net, &cfg).unwrap();
        let base_eo = bias_scores(&eval_batch(&base, &eval, None).unwrap()).unwrap().eo;
        let adv_cfg = TrainConfig { lambda: 20.0, ..cfg };
        let adv = train_adv_in(&train, &net, &adv_cfg).unwrap();
        let adv_eo = bias_scores(&eval_batch(&adv, &eval, None).unwrap()).unwrap().eo;
        assert!(
            adv_eo < base_eo,
            "adversarial in-processing should reduce EO: {adv_eo:.4} vs base {base_eo:.4}"
        );
    }

    #[test]
    fn mmd_fairness_loss_trains_a_trigger() {
        let spec = GenSpec { n: 400, d: 9, bias: 0.8, signal: 0.4, noise: 1.0, seed: 42 };
        let ds = gen_synth(&spec).unwrap();
        let base = train_base(&ds, &tiny_spec(9), &quick_cfg(6, 1)).unwrap();
        let cfg = TrainConfig {
            lambda: 5.0,
            fairness_loss: FairnessLoss::Mmd,
            criterion: Criterion::Dp,
            epochs: 3,
            batch: 64,
            seed: 4,
            ..TrainConfig::default()
        };
        let geo = TriggerGeometry::Additive { dim: 9 };
        let trig = reprogram(&base, &ds, geo.clone(), &cfg).unwrap();
        assert!(trig.values.values().iter().any(|&v| v != 0.0));
        assert!(trig.values.values().iter().all(|v| v.is_finite()));
        // deterministic like every other loop
        let again = reprogram(&base, &ds, geo, &cfg).unwrap();
        assert_eq!(trig, again);
    }

    #[test]
    fn image_triggers_train_and_stay_in_pixel_range() {
        // 8x8 "images": any 64-wide rows exercise the patch/border paths
        let spec = GenSpec { n: 240, d: 64, bias: 0.8, signal: 0.4, noise: 1.0, seed: 43 };
        let ds = gen_synth(&spec).unwrap();
        let base = train_base(&ds, &tiny_spec(64), &quick_cfg(4, 1)).unwrap();
        let cfg = TrainConfig { lambda: 2.0, epochs: 2, batch: 64, seed: 5, ..TrainConfig::default() };
        for geo in [
            TriggerGeometry::Patch { side: 8, patch: 3, anchor: (1, 2) },
            TriggerGeometry::Border { side: 8, width: 1 },
        ] {
            let trig = reprogram(&base, &ds, geo, &cfg).unwrap();
            assert!(
                trig.values.values().iter().all(|&v| (0.0..=1.0).contains(&v)),
                "pixel triggers stay clamped to [0, 1] after projection"
            );
        }
    }

    #[test]
    fn soft_and_hard_triggers_keep_simplex_rows_while_training() {
        let spec = GenSpec { n: 300, d: 6, bias: 0.8, signal: 0.4, noise: 1.0, seed: 44 };
        let ds = gen_synth(&spec).unwrap();
        let geo_soft = TriggerGeometry::Soft { dim: 6, slots: 3, vocab: 5, embed: 2, position: TriggerPosition::Prefix };
        let padded = ds.null_padded(&geo_soft);
        let base = train_base(&padded, &tiny_spec(12), &quick_cfg(4, 1)).unwrap();
        let cfg = TrainConfig { lambda: 5.0, epochs: 2, batch: 64, seed: 6, ..TrainConfig::default() };
        for geo in [
            geo_soft.clone(),
            TriggerGeometry::Hard { dim: 6, slots: 3, vocab: 5, embed: 2, position: TriggerPosition::Prefix },
        ] {
            let trig = reprogram(&base, &ds, geo, &cfg).unwrap();
            for r in 0..3 {
                let row = trig.values.row(r);
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-8, "row {r} off simplex: {row:?}");
            }
        }
    }

    #[test]
    fn blackbox_reprogram_runs_and_matches_geometry() {
        let spec = GenSpec { n: 200, d: 6, bias: 0.8, signal: 0.4, noise: 1.0, seed: 45 };
        let ds = gen_synth(&spec).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(3, 1)).unwrap();
        let cfg = TrainConfig { lambda: 1.0, epochs: 1, batch: 64, seed: 7, ..TrainConfig::default() };
        let geo = TriggerGeometry::Additive { dim: 6 };
        let trig = reprogram_blackbox(&base, &ds, geo.clone(), &cfg, 5, 1e-3).unwrap();
        assert!(trig.values.values().iter().all(|v| v.is_finite()));
        let again = reprogram_blackbox(&base, &ds, geo.clone(), &cfg, 5, 1e-3).unwrap();
        assert_eq!(trig, again);
        assert!(reprogram_blackbox(&base, &ds, geo, &cfg, 0, 1e-3).is_err());
    }

    #[test]
    fn advpost_leaves_base_model_file_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.json");
        let ds = gen_synth(&GenSpec::new(150, 6, 0.5, 46).unwrap()).unwrap();
        let base = train_base(&ds, &tiny_spec(6), &quick_cfg(3, 1)).unwrap();
        crate::model::save_model(&base, &path).unwrap();
        let before = std::fs::read(&path).unwrap();
        let _ = finetune_adv_post(&base, &ds, &quick_cfg(2, 2)).unwrap();
        assert_eq!(before, std::fs::read(&path).unwrap());
    }

    #[test]
    fn spearman_handles_monotone_and_ties() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 2.0]);
        assert!(r > 0.8);
    }
}
