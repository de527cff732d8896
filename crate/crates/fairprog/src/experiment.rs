//! Protocol orchestration: runs a validated configuration end to end and
//! writes models, triggers, CSVs, and a checksum manifest. Identical configs
//! produce byte-identical outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Protocol, RunConfig};
use crate::data::{gen_synth, load_csv, split_dataset, GenSpec, Splits};
use crate::error::{Error, Result};
use crate::fairness::BiasScores;
use crate::mix_seed;
use crate::model::{NetModel, NetSpec};
use crate::probe::demographic_probe;
use crate::theory::{
    assumption2_text, check_assumption2, check_sufficiency, curve_csv, reference_world, theorem1_curve,
};
use crate::train::{
    eval_batch, finetune_adv_post, lambda_sweep, reprogram, reprogram_blackbox, subsample_tune, sweep_csv,
    train_adv_in, train_base, transfer_eval, TrainConfig,
};
use crate::trigger::{Trigger, TriggerGeometry};

/// Write-then-rename so partially written files never appear at `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Checksums of everything a run produced, for reproducibility checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub protocol: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Relative path -> SHA-256 of the file contents, sorted by path.
    pub outputs: std::collections::BTreeMap<String, String>,
}

/// A completed run: where it wrote and what it wrote.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

/// Collects output files, then writes them plus the manifest.
struct OutputSet<'a> {
    dir: &'a Path,
    files: Vec<(String, Vec<u8>)>,
}

impl<'a> OutputSet<'a> {
    fn new(dir: &'a Path) -> Self {
        OutputSet { dir, files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn add_model(&mut self, name: &str, model: &NetModel) -> Result<()> {
        let body = serde_json::to_string_pretty(model)
            .map_err(|e| Error::invalid(format!("model encode failed: {e}")))?;
        self.add(name, body.into_bytes());
        Ok(())
    }

    fn add_trigger(&mut self, name: &str, trigger: &Trigger) -> Result<()> {
        let body = serde_json::to_string_pretty(trigger)
            .map_err(|e| Error::invalid(format!("trigger encode failed: {e}")))?;
        self.add(name, body.into_bytes());
        Ok(())
    }

    fn finish(self, cfg: &RunConfig) -> Result<RunSummary> {
        let mut outputs = std::collections::BTreeMap::new();
        for (name, bytes) in &self.files {
            write_atomic(&self.dir.join(name), bytes)?;
            outputs.insert(name.clone(), sha256_hex(bytes));
        }
        let manifest = Manifest {
            protocol: cfg.protocol.name().to_string(),
            config_sha256: sha256_hex(cfg.to_toml().as_bytes()),
            seed: cfg.train.seed,
            outputs,
        };
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::invalid(format!("manifest encode failed: {e}")))?;
        write_atomic(&self.dir.join("manifest.json"), body.as_bytes())?;
        Ok(RunSummary { out_dir: self.dir.to_path_buf(), manifest })
    }
}

fn scores_csv(rows: &[(&str, BiasScores)]) -> String {
    let mut out = String::from("setting,accuracy,neg_dp,neg_eo\n");
    for (name, s) in rows {
        out.push_str(&format!("{name},{:.6},{:.6},{:.6}\n", s.accuracy, -s.dp, -s.eo));
    }
    out
}

/// The datasets a protocol works with: raw splits plus their null-padded
/// (trigger-resting-state) forms that the models are trained on.
struct Prepared {
    raw: Splits,
    padded: Splits,
    geometry: TriggerGeometry,
    spec: NetSpec,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let ds = if cfg.data.source == "synth" {
        let spec = GenSpec {
            n: cfg.data.n,
            d: cfg.data.d,
            bias: cfg.data.bias,
            signal: cfg.data.signal,
            noise: cfg.data.noise,
            seed: cfg.data.seed,
        };
        gen_synth(&spec)?
    } else {
        load_csv(Path::new(&cfg.data.source))?
    };
    let geometry = cfg.trigger.geometry(ds.dim())?;
    let raw = split_dataset(&ds, mix_seed(cfg.data.seed, "split"));
    // Synthetic data fills the trigger slot with demographic-distributed
    // resting features; ingested CSV data (no generative recipe) pads zeros.
    let pad = |split: &crate::data::LabeledDataset, tag: &str| {
        if cfg.data.source == "synth" {
            split.slot_padded(&geometry, crate::data::SLOT_SHIFT_GAIN * cfg.data.signal, cfg.data.noise, mix_seed(cfg.data.seed, tag))
        } else {
            split.null_padded(&geometry)
        }
    };
    let padded = Splits {
        train: pad(&raw.train, "slots-train"),
        tune: pad(&raw.tune, "slots-tune"),
        val: pad(&raw.val, "slots-val"),
        test: pad(&raw.test, "slots-test"),
    };
    let k = raw.train.class_count();
    let mut widths = vec![padded.train.dim()];
    widths.extend_from_slice(&cfg.model.hidden);
    widths.push(k);
    let spec = NetSpec::new(widths, cfg.model.activation)?;
    Ok(Prepared { raw, padded, geometry, spec })
}

fn train_base_model(p: &Prepared, cfg: &RunConfig, seed: u64) -> Result<NetModel> {
    train_base(&p.padded.train, &p.spec, &cfg.train.base_config(seed))
}

fn train_trigger(p: &Prepared, cfg: &RunConfig, base: &NetModel, tc: &TrainConfig) -> Result<Trigger> {
    if cfg.blackbox.enabled {
        reprogram_blackbox(base, &p.raw.tune, p.geometry.clone(), tc, cfg.blackbox.queries, cfg.blackbox.smoothing)
    } else {
        reprogram(base, &p.raw.tune, p.geometry.clone(), tc)
    }
}

/// Runs the configured protocol and writes its artifact directory:
/// models, triggers, CSVs, and `manifest.json` recording the config hash,
/// the seed, and a checksum per output file.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.output.dir.clone();
    let mut out = OutputSet::new(&dir);
    match cfg.protocol {
        Protocol::GenData => {
            let ds = if cfg.data.source == "synth" {
                gen_synth(&GenSpec {
                    n: cfg.data.n,
                    d: cfg.data.d,
                    bias: cfg.data.bias,
                    signal: cfg.data.signal,
                    noise: cfg.data.noise,
                    seed: cfg.data.seed,
                })?
            } else {
                load_csv(Path::new(&cfg.data.source))?
            };
            out.add("data.csv", crate::data::csv_string(&ds).into_bytes());
        }
        Protocol::Base => {
            let p = prepare(cfg)?;
            let model = train_base_model(&p, cfg, cfg.train.seed)?;
            let scores = crate::fairness::bias_scores(&eval_batch(&model, &p.padded.test, None)?)?;
            out.add_model("model.json", &model)?;
            out.add("scores.csv", scores_csv(&[("base", scores)]).into_bytes());
        }
        Protocol::Advin => {
            let p = prepare(cfg)?;
            let model = train_adv_in(&p.padded.train, &p.spec, &cfg.train.to_train_config())?;
            let scores = crate::fairness::bias_scores(&eval_batch(&model, &p.padded.test, None)?)?;
            out.add_model("model.json", &model)?;
            out.add("scores.csv", scores_csv(&[("advin", scores)]).into_bytes());
        }
        Protocol::Advpost => {
            let p = prepare(cfg)?;
            let base = train_base_model(&p, cfg, cfg.train.seed)?;
            let tuned = finetune_adv_post(&base, &p.padded.tune, &cfg.train.to_train_config())?;
            let base_scores = crate::fairness::bias_scores(&eval_batch(&base, &p.padded.test, None)?)?;
            let tuned_scores = crate::fairness::bias_scores(&eval_batch(&tuned, &p.padded.test, None)?)?;
            out.add_model("base_model.json", &base)?;
            out.add_model("model.json", &tuned)?;
            out.add(
                "scores.csv",
                scores_csv(&[("base", base_scores), ("advpost", tuned_scores)]).into_bytes(),
            );
        }
        Protocol::Reprogram => {
            let p = prepare(cfg)?;
            let base = train_base_model(&p, cfg, cfg.train.seed)?;
            let before = base.checksum();
            let trigger = train_trigger(&p, cfg, &base, &cfg.train.to_train_config())?;
            assert_eq!(before, base.checksum(), "frozen base must not change");
            let base_scores = crate::fairness::bias_scores(&eval_batch(&base, &p.padded.test, None)?)?;
            let trig_scores = transfer_eval(&trigger, &base, &p.raw.test)?;
            out.add_model("base_model.json", &base)?;
            out.add_trigger("trigger.json", &trigger)?;
            out.add(
                "scores.csv",
                scores_csv(&[("base", base_scores), ("reprogram", trig_scores)]).into_bytes(),
            );
        }
        Protocol::Sweep => {
            let p = prepare(cfg)?;
            let base = train_base_model(&p, cfg, cfg.train.seed)?;
            let before = base.checksum();
            let points = lambda_sweep(
                &base,
                &p.raw.tune,
                &p.raw.test,
                &p.geometry,
                &cfg.train.to_train_config(),
                &cfg.sweep.lambdas,
                &cfg.sweep.seeds,
            )?;
            assert_eq!(before, base.checksum(), "frozen base must not change");
            let base_scores = crate::fairness::bias_scores(&eval_batch(&base, &p.padded.test, None)?)?;
            out.add_model("base_model.json", &base)?;
            out.add("sweep.csv", sweep_csv(&points).into_bytes());
            out.add("scores.csv", scores_csv(&[("base", base_scores)]).into_bytes());
        }
        Protocol::LimitedData => {
            let p = prepare(cfg)?;
            let base = train_base_model(&p, cfg, cfg.train.seed)?;
            let before = base.checksum();
            let tc = cfg.train.to_train_config();
            let mut csv = String::from("ratio,lambda,seed,accuracy,neg_dp,neg_eo\n");
            for &ratio in &cfg.limited.ratios {
                let sub = subsample_tune(&p.raw.tune, ratio, cfg.train.seed)?;
                let trigger = train_trigger(
                    &Prepared { raw: Splits { tune: sub, ..p.raw.clone() }, ..clone_prepared(&p) },
                    cfg,
                    &base,
                    &tc,
                )?;
                let s = transfer_eval(&trigger, &base, &p.raw.test)?;
                csv.push_str(&format!(
                    "{ratio},{:.6},{},{:.6},{:.6},{:.6}\n",
                    tc.lambda, tc.seed, s.accuracy, -s.dp, -s.eo
                ));
            }
            assert_eq!(before, base.checksum(), "frozen base must not change");
            let base_scores = crate::fairness::bias_scores(&eval_batch(&base, &p.padded.test, None)?)?;
            out.add_model("base_model.json", &base)?;
            out.add("limited.csv", csv.into_bytes());
            out.add("scores.csv", scores_csv(&[("base", base_scores)]).into_bytes());
        }
        Protocol::Transfer => {
            let p = prepare(cfg)?;
            let source = train_base_model(&p, cfg, cfg.transfer.source_seed)?;
            let target = train_base_model(&p, cfg, cfg.transfer.target_seed)?;
            let trigger = train_trigger(&p, cfg, &source, &cfg.train.to_train_config())?;
            let target_plain = crate::fairness::bias_scores(&eval_batch(&target, &p.padded.test, None)?)?;
            let target_trig = transfer_eval(&trigger, &target, &p.raw.test)?;
            let source_trig = transfer_eval(&trigger, &source, &p.raw.test)?;
            out.add_model("source_model.json", &source)?;
            out.add_model("target_model.json", &target)?;
            out.add_trigger("trigger.json", &trigger)?;
            out.add(
                "transfer.csv",
                scores_csv(&[
                    ("target-no-trigger", target_plain),
                    ("target-with-trigger", target_trig),
                    ("source-with-trigger", source_trig),
                ])
                .into_bytes(),
            );
        }
        Protocol::Theory => {
            let world = reference_world();
            let curve = theorem1_curve(&world, cfg.theory.target, &cfg.theory.strengths)?;
            out.add("theory.csv", curve_csv(&curve).into_bytes());
            let mut report = check_sufficiency(&world)?.text();
            report.push_str(&assumption2_text(&check_assumption2(&world, cfg.theory.target, &cfg.theory.sigmas)?));
            out.add("theory_report.txt", report.into_bytes());
        }
        Protocol::Probe => {
            let p = prepare(cfg)?;
            let base = train_base_model(&p, cfg, cfg.train.seed)?;
            let before = base.checksum();
            let trigger = train_trigger(&p, cfg, &base, &cfg.train.to_train_config())?;
            assert_eq!(before, base.checksum(), "frozen base must not change");
            let result = demographic_probe(&p.padded.train, &p.padded.val, &trigger, &cfg.train.base_config(mix_seed(cfg.train.seed, "probe")))?;
            out.add_trigger("trigger.json", &trigger)?;
            let body = serde_json::to_string_pretty(&result)
                .map_err(|e| Error::invalid(format!("probe encode failed: {e}")))?;
            out.add("probe.json", body.into_bytes());
        }
    }
    out.finish(cfg)
}

fn clone_prepared(p: &Prepared) -> Prepared {
    Prepared {
        raw: p.raw.clone(),
        padded: p.padded.clone(),
        geometry: p.geometry.clone(),
        spec: p.spec.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn small_cfg(protocol: Protocol, dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::new(protocol);
        cfg.data.n = 300;
        cfg.data.d = 9;
        cfg.train.base_epochs = 4;
        cfg.train.epochs = 2;
        cfg.train.batch = 64;
        cfg.sweep.lambdas = vec![0.0, 1.0];
        cfg.sweep.seeds = vec![0];
        cfg.limited.ratios = vec![1.0, 0.1];
        cfg.output.dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn theory_protocol_emits_exact_zero_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(Protocol::Theory, dir.path());
        let summary = run_experiment(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("theory.csv")).unwrap();
        assert!(csv.lines().last().unwrap().ends_with(",0"), "{csv}");
        assert!(summary.manifest.outputs.contains_key("theory.csv"));
        assert!(summary.manifest.outputs.contains_key("theory_report.txt"));
        let report = std::fs::read_to_string(dir.path().join("theory_report.txt")).unwrap();
        assert!(report.contains("PASS"));
    }

    #[test]
    fn sweep_protocol_row_count_matches_grid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(Protocol::Sweep, dir.path());
        run_experiment(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        // header + |lambdas| x |seeds|
        assert_eq!(csv.lines().count(), 1 + 2);
    }

    #[test]
    fn identical_configs_give_identical_manifests() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        // same config except the throwaway output location
        let mut a = small_cfg(Protocol::Reprogram, dir_a.path());
        let mut b = small_cfg(Protocol::Reprogram, dir_b.path());
        a.output.dir = PathBuf::from("ignored");
        b.output.dir = PathBuf::from("ignored");
        let a = RunConfig { output: crate::config::OutputCfg { dir: dir_a.path().to_path_buf() }, ..a };
        let b = RunConfig { output: crate::config::OutputCfg { dir: dir_b.path().to_path_buf() }, ..b };
        let sa = run_experiment(&a).unwrap();
        let sb = run_experiment(&b).unwrap();
        assert_eq!(sa.manifest.outputs, sb.manifest.outputs);
        let bytes_a = std::fs::read(dir_a.path().join("trigger.json")).unwrap();
        let bytes_b = std::fs::read(dir_b.path().join("trigger.json")).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn limited_data_protocol_emits_one_row_per_ratio() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(Protocol::LimitedData, dir.path());
        cfg.limited.ratios = vec![1.0, 0.5, 0.1];
        run_experiment(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("limited.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 3);
        assert!(csv.starts_with("ratio,lambda,seed,accuracy,neg_dp,neg_eo\n"));
    }

    #[test]
    fn transfer_protocol_reports_three_settings() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(Protocol::Transfer, dir.path());
        run_experiment(&cfg).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("transfer.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.contains("target-no-trigger"));
        assert!(csv.contains("target-with-trigger"));
        assert!(csv.contains("source-with-trigger"));
        // source and target differ by seed only
        let source = crate::model::load_model(&dir.path().join("source_model.json")).unwrap();
        let target = crate::model::load_model(&dir.path().join("target_model.json")).unwrap();
        assert_ne!(source.checksum(), target.checksum());
    }

    #[test]
    fn adversarial_protocols_produce_models_and_scores() {
        for protocol in [Protocol::Advin, Protocol::Advpost] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = small_cfg(protocol, dir.path());
            run_experiment(&cfg).unwrap();
            assert!(dir.path().join("model.json").exists());
            let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
            assert!(scores.starts_with("setting,accuracy,neg_dp,neg_eo\n"));
        }
    }

    #[test]
    fn probe_protocol_reports_confidences() {
        let dir = tempfile::tempdir().unwrap();
        // wide-enough data that the probe clears its AUC gate
        let mut cfg = small_cfg(Protocol::Probe, dir.path());
        cfg.data.n = 800;
        cfg.data.d = 12;
        cfg.train.base_epochs = 10;
        cfg.train.epochs = 3;
        cfg.train.lambda = 10.0;
        run_experiment(&cfg).unwrap();
        let body = std::fs::read_to_string(dir.path().join("probe.json")).unwrap();
        let result: crate::probe::ProbeResult = serde_json::from_str(&body).unwrap();
        assert!(result.auc >= crate::probe::PROBE_AUC_FLOOR);
        assert_eq!(result.confidences.len(), 2);
    }

    #[test]
    fn gen_data_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg(Protocol::GenData, dir.path());
        run_experiment(&cfg).unwrap();
        let ds = crate::data::load_csv(&dir.path().join("data.csv")).unwrap();
        assert_eq!(ds.len(), 300);
        assert_eq!(ds.dim(), 9);
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert!(!path.with_extension("txt.tmp").exists());
    }
}
