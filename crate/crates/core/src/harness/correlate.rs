//! Correlation of scores against reference accuracies, and bandwidth
//! sensitivity sweeps.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{detect_run_gammas, network_trace, prepare, score_candidates};
use super::{to_json, write_file, ExperimentConfig};
use crate::data::{draw_minibatch, Minibatch};
use crate::error::{Error, Result};
use crate::hda::GammaPair;
use crate::linalg::Matrix;
use crate::score::{
    build_trace_matrices, gram_from_sq_dists, pairwise_sq_dists, score_from_kernels, write_csv,
    Score, ScoreRecord,
};
use crate::seed;
use crate::space::NetworkSpec;
use crate::stats::{kendall_tau_b, pearson, top_k};

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    spec_id: String,
    accuracy: f64,
}

/// Reference accuracy per spec id, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceTable {
    ids: Vec<String>,
    accuracy: HashMap<String, f64>,
}

impl ReferenceTable {
    pub fn from_pairs<I: IntoIterator<Item = (String, f64)>>(pairs: I) -> Result<Self> {
        let mut table = ReferenceTable::default();
        for (id, acc) in pairs {
            if !acc.is_finite() {
                return Err(Error::Config(format!(
                    "reference accuracy for {id} is not finite"
                )));
            }
            if table.accuracy.insert(id.clone(), acc).is_some() {
                return Err(Error::Config(format!("duplicate reference row for {id}")));
            }
            table.ids.push(id);
        }
        Ok(table)
    }

    /// Reads a `spec_id,accuracy` CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let malformed = |reason: String| Error::MalformedFile {
            path: path.display().to_string(),
            reason,
        };
        let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
        let headers = reader.headers().map_err(|e| malformed(e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["spec_id", "accuracy"] {
            return Err(malformed("header must be spec_id,accuracy".into()));
        }
        let rows = reader
            .deserialize::<ReferenceRow>()
            .map(|r| {
                r.map(|r| (r.spec_id, r.accuracy))
                    .map_err(|e| malformed(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(rows)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, spec_id: &str) -> Option<f64> {
        self.accuracy.get(spec_id).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationSummary {
    pub pearson: f64,
    pub kendall_tau_b: f64,
    /// Networks with a finite score.
    pub n_used: usize,
    /// Networks excluded for a degenerate score.
    pub n_degenerate: usize,
}

fn summarize(records: &[ScoreRecord], reference: &ReferenceTable) -> Result<CorrelationSummary> {
    let mut scores = Vec::new();
    let mut acc = Vec::new();
    for r in records {
        let a = reference
            .get(&r.spec_id)
            .ok_or_else(|| Error::JoinMiss(r.spec_id.clone()))?;
        if let Some(v) = r.score.value() {
            scores.push(v);
            acc.push(a);
        }
    }
    if scores.len() < 2 {
        return Err(Error::AllDegenerate);
    }
    Ok(CorrelationSummary {
        pearson: pearson(&scores, &acc)?,
        kendall_tau_b: kendall_tau_b(&scores, &acc)?,
        n_used: scores.len(),
        n_degenerate: records.len() - scores.len(),
    })
}

fn mean_summary(runs: &[CorrelationSummary]) -> Option<CorrelationSummary> {
    let first = runs.first()?;
    let n = runs.len() as f64;
    Some(CorrelationSummary {
        pearson: runs.iter().map(|r| r.pearson).sum::<f64>() / n,
        kendall_tau_b: runs.iter().map(|r| r.kendall_tau_b).sum::<f64>() / n,
        n_used: first.n_used,
        n_degenerate: first.n_degenerate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationRepeat {
    pub batch_fingerprint: String,
    pub gammas: Option<GammaPair>,
    pub rbflex: Option<CorrelationSummary>,
    pub naswot: Option<CorrelationSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationReport {
    pub n_networks: usize,
    pub repeats: Vec<CorrelationRepeat>,
    /// Means over repeats. `n_used` and `n_degenerate` are from the first.
    pub rbflex: Option<CorrelationSummary>,
    pub naswot: Option<CorrelationSummary>,
}

fn joined_csv(
    specs: &[NetworkSpec],
    reference: &ReferenceTable,
    rbflex: &[ScoreRecord],
    naswot: &[ScoreRecord],
) -> String {
    let mut header = vec!["spec_id".to_string(), "accuracy".to_string()];
    if !rbflex.is_empty() {
        header.push("rbflex_score".into());
    }
    if !naswot.is_empty() {
        header.push("naswot_score".into());
    }
    let rows = specs.iter().enumerate().map(|(i, spec)| {
        let id = spec.spec_id();
        let mut cols = vec![
            id.clone(),
            reference
                .get(&id)
                .map(|a| a.to_string())
                .unwrap_or_default(),
        ];
        cols.extend(rbflex.get(i).map(|r| r.score.to_string()));
        cols.extend(naswot.get(i).map(|r| r.score.to_string()));
        cols
    });
    write_csv(std::iter::once(header).chain(rows))
}

/// Scores networks and correlates the scores with reference accuracies.
///
/// `candidates` defaults to every network in the reference table. Each of the
/// config's `repeats` draws its own minibatch (the first uses the batch seed
/// itself); the reported figures are means over repeats.
pub fn run_correlation(
    config: &ExperimentConfig,
    reference: &ReferenceTable,
    candidates: Option<&[NetworkSpec]>,
) -> Result<CorrelationReport> {
    config.validate()?;
    let mut cfg = config.clone();
    let specs: Vec<NetworkSpec> = match candidates {
        Some(c) => c.to_vec(),
        None => reference
            .ids()
            .iter()
            .map(|id| cfg.space.parse_id(id))
            .collect::<Result<_>>()?,
    };
    if let Some(missing) = specs
        .iter()
        .map(NetworkSpec::spec_id)
        .find(|id| reference.get(id).is_none())
    {
        return Err(Error::JoinMiss(missing));
    }
    if specs.len() < 2 {
        return Err(Error::Config(
            "correlation needs at least two networks".into(),
        ));
    }
    let images = cfg.load_images()?;
    let probes = cfg
        .space
        .sample(cfg.m, seed::derive(cfg.seeds.sampler, "probes"))?;

    let mut repeats = Vec::new();
    for r in 0..cfg.repeats {
        let batch_seed = if r == 0 {
            cfg.seeds.batch
        } else {
            seed::derive(cfg.seeds.batch, &format!("repeat-{r}"))
        };
        let batch = draw_minibatch(&images, cfg.n, batch_seed)?;
        let gammas = if cfg.scorer.rbflex() {
            Some(detect_run_gammas(&probes, cfg.seeds.weights, &batch)?)
        } else {
            None
        };
        let scored = score_candidates(
            &cfg.space,
            &specs,
            cfg.seeds.weights,
            &batch,
            gammas.as_ref(),
            cfg.scorer,
            None,
        );
        if let Some(e) = scored.error {
            return Err(e);
        }
        if r == 0 {
            if let Some(dir) = &cfg.out_dir {
                write_file(
                    dir,
                    "correlation.csv",
                    &joined_csv(&specs, reference, &scored.rbflex, &scored.naswot),
                )?;
            }
        }
        let rbflex = cfg
            .scorer
            .rbflex()
            .then(|| summarize(&scored.rbflex, reference))
            .transpose()?;
        let naswot = cfg
            .scorer
            .naswot()
            .then(|| summarize(&scored.naswot, reference))
            .transpose()?;
        repeats.push(CorrelationRepeat {
            batch_fingerprint: super::hex(batch.fingerprint),
            gammas,
            rbflex,
            naswot,
        });
    }
    let collect = |f: fn(&CorrelationRepeat) -> Option<CorrelationSummary>| {
        mean_summary(&repeats.iter().filter_map(f).collect::<Vec<_>>())
    };
    let report = CorrelationReport {
        n_networks: specs.len(),
        rbflex: collect(|r| r.rbflex),
        naswot: collect(|r| r.naswot),
        repeats,
    };
    if let Some(dir) = &cfg.out_dir {
        write_file(dir, "correlation.json", &to_json(&report)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaSweepRow {
    pub epsilon: f64,
    pub gamma_k: f64,
    pub gamma_q: f64,
    /// Kendall tau-b against the ranking under detected bandwidths, over
    /// networks finite under both.
    pub kendall_vs_hda: Option<f64>,
    pub top1: Option<String>,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaSweepReport {
    pub hda: GammaPair,
    pub hda_top1: Option<String>,
    pub rows: Vec<GammaSweepRow>,
}

/// Pairwise squared distances of the normalized `X` and `Y` of one network.
struct DistPair {
    x: Matrix,
    y: Matrix,
}

fn dist_pair(spec: &NetworkSpec, weight_seed: u64, batch: &Minibatch) -> Result<DistPair> {
    let (_, trace) = network_trace(spec, weight_seed, batch)?;
    let t = build_trace_matrices(&trace)?.normalized();
    Ok(DistPair {
        x: pairwise_sq_dists(&t.x),
        y: pairwise_sq_dists(&t.y),
    })
}

fn records_at(
    specs: &[NetworkSpec],
    dists: &[DistPair],
    gamma_k: f64,
    gamma_q: f64,
) -> Result<Vec<ScoreRecord>> {
    specs
        .par_iter()
        .zip(dists)
        .map(|(spec, d)| {
            let k = gram_from_sq_dists(&d.x, gamma_k)?;
            let q = gram_from_sq_dists(&d.y, gamma_q)?;
            Ok(ScoreRecord {
                spec_id: spec.spec_id(),
                score: score_from_kernels(&k, &q)?,
                gamma_k: Some(gamma_k),
                gamma_q: Some(gamma_q),
                weight_seed: 0,
                batch_fingerprint: 0,
            })
        })
        .collect()
}

fn largest(mats: &[Matrix]) -> f64 {
    mats.iter()
        .flat_map(|m| m.data().iter().copied())
        .fold(0.0, f64::max)
}

/// Scores the config's candidates with detected bandwidths and with the
/// epsilon-width bandwidth for each `epsilon`, where the width is set by the
/// farthest pair of rows over all probe networks.
pub fn gamma_sweep(config: &ExperimentConfig, epsilons: &[f64]) -> Result<GammaSweepReport> {
    if let Some(&bad) = epsilons.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Config(format!("epsilon {bad} must lie in (0, 1)")));
    }
    let setup = prepare(config)?;
    let cfg = &setup.config;
    let w = cfg.seeds.weights;
    let probe_d = setup
        .probes
        .par_iter()
        .map(|p| dist_pair(p, w, &setup.batch))
        .collect::<Result<Vec<_>>>()?;
    let hda = detect_run_gammas(&setup.probes, w, &setup.batch)?;
    let cand_d = setup
        .candidates
        .par_iter()
        .map(|c| dist_pair(c, w, &setup.batch))
        .collect::<Result<Vec<_>>>()?;

    let (px, py): (Vec<Matrix>, Vec<Matrix>) = probe_d.into_iter().map(|d| (d.x, d.y)).unzip();
    let (max_k, max_q) = (largest(&px), largest(&py));
    if max_k == 0.0 || max_q == 0.0 {
        return Err(Error::AllRowsIdentical);
    }

    let base = records_at(&setup.candidates, &cand_d, hda.gamma_k, hda.gamma_q)?;
    let mut rows = Vec::new();
    for &eps in epsilons {
        let width = (1.0 / eps).ln();
        let (gk, gq) = (width / max_k, width / max_q);
        let recs = records_at(&setup.candidates, &cand_d, gk, gq)?;
        let (a, b): (Vec<f64>, Vec<f64>) = base
            .iter()
            .zip(&recs)
            .filter_map(|(u, v)| u.score.value().zip(v.score.value()))
            .unzip();
        rows.push(GammaSweepRow {
            epsilon: eps,
            gamma_k: gk,
            gamma_q: gq,
            kendall_vs_hda: kendall_tau_b(&a, &b).ok(),
            top1: top_k(&recs, 1).ok().and_then(|v| v.into_iter().next()),
            n_degenerate: recs.iter().filter(|r| r.score == Score::Degenerate).count(),
        });
    }
    let report = GammaSweepReport {
        hda_top1: top_k(&base, 1).ok().and_then(|v| v.into_iter().next()),
        hda,
        rows,
    };
    if let Some(dir) = &cfg.out_dir {
        write_file(dir, "gamma_sweep.json", &to_json(&report)?)?;
    }
    Ok(report)
}
