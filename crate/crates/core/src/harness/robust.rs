//! Score stability under re-initialization, minibatch size, and image batch.

use serde::Serialize;

use super::pipeline::{detect_run_gammas, score_candidates};
use super::{mean_std, ExperimentConfig, ScorerKind};
use crate::data::{draw_minibatch, ImageSet, Minibatch};
use crate::error::{Error, Result};
use crate::hda::GammaPair;
use crate::score::Score;
use crate::seed;
use crate::space::NetworkSpec;
use crate::stats::kendall_tau_b;

/// HDA on the probes, then RBF scores for every spec, in spec order.
fn score_once(
    config: &ExperimentConfig,
    specs: &[NetworkSpec],
    probes: &[NetworkSpec],
    weight_seed: u64,
    batch: &Minibatch,
) -> Result<(GammaPair, Vec<Score>)> {
    let gammas = detect_run_gammas(probes, weight_seed, batch)?;
    let scored = score_candidates(
        &config.space,
        specs,
        weight_seed,
        batch,
        Some(&gammas),
        ScorerKind::Rbflex,
        None,
    );
    if let Some(e) = scored.error {
        return Err(e);
    }
    Ok((gammas, scored.rbflex.into_iter().map(|r| r.score).collect()))
}

#[derive(Debug, Clone, Serialize)]
pub struct NetworkSpread {
    pub spec_id: String,
    pub scores: Vec<Score>,
    /// Per-repetition scores after min-max normalization across the networks
    /// of that repetition; absent when any repetition was degenerate.
    pub normalized: Option<Vec<f64>>,
    /// Mean and population standard deviation of `normalized`.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Per-network spread of scores across repetitions.
#[derive(Debug, Clone, Serialize)]
pub struct SpreadReport {
    pub study: String,
    pub repetitions: usize,
    pub gammas: Vec<GammaPair>,
    pub networks: Vec<NetworkSpread>,
    /// Largest per-network std divided by the std of the per-network means,
    /// both on normalized scores. Small values mean repetitions barely move
    /// a network relative to the spread between networks.
    pub separation_ratio: f64,
    pub n_used: usize,
    pub n_degenerate: usize,
}

/// Min-max normalizes each repetition over the networks finite in every
/// repetition. Bandwidth changes between repetitions shift and scale all
/// scores of a repetition together, which this removes.
fn normalize_trials(per_rep: &[Vec<Score>], usable: &[usize]) -> Result<Vec<Vec<f64>>> {
    per_rep
        .iter()
        .map(|rep| {
            let vals: Vec<f64> = usable.iter().filter_map(|&i| rep[i].value()).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                return Err(Error::ConstantSeries);
            }
            Ok(vals.iter().map(|v| (v - lo) / (hi - lo)).collect())
        })
        .collect()
}

fn spread_report(
    study: &str,
    specs: &[NetworkSpec],
    gammas: Vec<GammaPair>,
    per_rep: Vec<Vec<Score>>,
) -> Result<SpreadReport> {
    let usable: Vec<usize> = (0..specs.len())
        .filter(|&i| per_rep.iter().all(|rep| rep[i].value().is_some()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::AllDegenerate);
    }
    let norm = normalize_trials(&per_rep, &usable)?;
    let mut networks: Vec<NetworkSpread> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| NetworkSpread {
            spec_id: spec.spec_id(),
            scores: per_rep.iter().map(|rep| rep[i]).collect(),
            normalized: None,
            mean: None,
            std: None,
        })
        .collect();
    let mut means = Vec::with_capacity(usable.len());
    let mut max_std = 0.0f64;
    for (k, &i) in usable.iter().enumerate() {
        let values: Vec<f64> = norm.iter().map(|rep| rep[k]).collect();
        let (m, s) = mean_std(&values);
        means.push(m);
        max_std = max_std.max(s);
        let net = &mut networks[i];
        net.normalized = Some(values);
        net.mean = Some(m);
        net.std = Some(s);
    }
    let (_, between) = mean_std(&means);
    Ok(SpreadReport {
        study: study.to_string(),
        repetitions: per_rep.len(),
        gammas,
        n_used: usable.len(),
        n_degenerate: networks.len() - usable.len(),
        networks,
        separation_ratio: max_std / between,
    })
}

fn setup(
    config: &ExperimentConfig,
    specs: &[NetworkSpec],
    reps: usize,
) -> Result<(ExperimentConfig, ImageSet, Vec<NetworkSpec>)> {
    if specs.is_empty() {
        return Err(Error::Config(
            "robustness studies need at least one network".into(),
        ));
    }
    if reps == 0 {
        return Err(Error::Config("need at least one repetition".into()));
    }
    config.validate()?;
    let mut cfg = config.clone();
    let images = cfg.load_images()?;
    let probes = cfg
        .space
        .sample(cfg.m, seed::derive(cfg.seeds.sampler, "probes"))?;
    Ok((cfg, images, probes))
}

/// Scores each network under `n_inits` weight initializations, keeping the
/// minibatch fixed. Bandwidths are re-detected for every initialization.
pub fn run_init_robustness(
    config: &ExperimentConfig,
    specs: &[NetworkSpec],
    n_inits: usize,
) -> Result<SpreadReport> {
    let (cfg, images, probes) = setup(config, specs, n_inits)?;
    let batch = draw_minibatch(&images, cfg.n, cfg.seeds.batch)?;
    let mut gammas = Vec::new();
    let mut per_rep = Vec::new();
    for r in 0..n_inits {
        let weight_seed = seed::derive(cfg.seeds.weights, &format!("init-{r}"));
        let (g, scores) = score_once(&cfg, specs, &probes, weight_seed, &batch)?;
        gammas.push(g);
        per_rep.push(scores);
    }
    spread_report("init", specs, gammas, per_rep)
}

/// Scores each network on `n_batches` different minibatches with fixed weights.
pub fn run_imagebatch_robustness(
    config: &ExperimentConfig,
    specs: &[NetworkSpec],
    n_batches: usize,
) -> Result<SpreadReport> {
    let (cfg, images, probes) = setup(config, specs, n_batches)?;
    let mut gammas = Vec::new();
    let mut per_rep = Vec::new();
    for r in 0..n_batches {
        let batch = draw_minibatch(
            &images,
            cfg.n,
            seed::derive(cfg.seeds.batch, &format!("batch-{r}")),
        )?;
        let (g, scores) = score_once(&cfg, specs, &probes, cfg.seeds.weights, &batch)?;
        gammas.push(g);
        per_rep.push(scores);
    }
    spread_report("imagebatch", specs, gammas, per_rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSizeReport {
    pub sizes: Vec<usize>,
    pub spec_ids: Vec<String>,
    pub gammas: Vec<GammaPair>,
    /// `scores[s][i]`: network `i` at `sizes[s]`.
    pub scores: Vec<Vec<Score>>,
    /// Kendall tau-b between the rankings at two sizes, over networks that
    /// are finite at both; `None` when fewer than two such networks exist.
    pub kendall: Vec<Vec<Option<f64>>>,
}

impl BatchSizeReport {
    pub fn tau(&self, a: usize, b: usize) -> Option<f64> {
        let ia = self.sizes.iter().position(|&s| s == a)?;
        let ib = self.sizes.iter().position(|&s| s == b)?;
        self.kendall[ia][ib]
    }
}

fn paired_tau(a: &[Score], b: &[Score]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter_map(|(u, v)| u.value().zip(v.value()))
        .unzip();
    kendall_tau_b(&x, &y).ok()
}

/// Scores a fixed network set at several minibatch sizes (same weights, same
/// batch seed) and compares the rankings.
pub fn run_batchsize_robustness(
    config: &ExperimentConfig,
    specs: &[NetworkSpec],
    sizes: &[usize],
) -> Result<BatchSizeReport> {
    if let Some(&bad) = sizes.iter().find(|&&s| s < 2) {
        return Err(Error::Config(format!(
            "minibatch size {bad} is below the minimum of 2"
        )));
    }
    let (cfg, images, probes) = setup(config, specs, sizes.len())?;
    let mut gammas = Vec::new();
    let mut scores = Vec::new();
    for &size in sizes {
        let batch = draw_minibatch(&images, size, cfg.seeds.batch)?;
        let (g, s) = score_once(&cfg, specs, &probes, cfg.seeds.weights, &batch)?;
        gammas.push(g);
        scores.push(s);
    }
    let kendall = scores
        .iter()
        .map(|a| scores.iter().map(|b| paired_tau(a, b)).collect())
        .collect();
    Ok(BatchSizeReport {
        sizes: sizes.to_vec(),
        spec_ids: specs.iter().map(NetworkSpec::spec_id).collect(),
        gammas,
        scores,
        kendall,
    })
}

/// Candidates of a config, as scored by a search run.
pub fn sampled_candidates(config: &ExperimentConfig) -> Result<Vec<NetworkSpec>> {
    config.validate()?;
    config.candidate_specs()
}
