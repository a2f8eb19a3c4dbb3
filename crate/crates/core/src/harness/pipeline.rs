use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::cache::{CacheKey, ScoreCache};
use super::{hex, to_json, write_file, ExperimentConfig, ScorerKind};
use crate::data::{draw_minibatch, Minibatch};
use crate::error::{Error, Result};
use crate::hda::{detect_gammas, GammaPair};
use crate::nn::{forward_traced, init_weights, ForwardTrace};
use crate::score::{
    build_trace_matrices, naswot_score, rbflex_score, records_to_csv, Score, ScoreRecord,
    TraceMatrices,
};
use crate::seed;
use crate::space::{NetworkSpec, SpaceConfig};
use crate::stats::top_k;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Weight seed of one network: a function of the run's weight seed and the
/// spec id, so a spec gets the same weights wherever it appears.
pub fn network_seed(weight_seed: u64, spec_id: &str) -> u64 {
    seed::derive(weight_seed, spec_id)
}

/// Decodes, initializes and runs one network on the minibatch.
pub fn network_trace(
    spec: &NetworkSpec,
    weight_seed: u64,
    batch: &Minibatch,
) -> Result<(u64, ForwardTrace)> {
    let graph = spec.decode()?;
    let seed = network_seed(weight_seed, &spec.spec_id());
    let weights = init_weights(&graph, seed);
    Ok((seed, forward_traced(&graph, &weights, &batch.images)?))
}

/// Runs the probe networks and detects the run's bandwidths.
pub fn detect_run_gammas(
    probes: &[NetworkSpec],
    weight_seed: u64,
    batch: &Minibatch,
) -> Result<GammaPair> {
    let traces = probes
        .par_iter()
        .map(|p| network_trace(p, weight_seed, batch).and_then(|(_, t)| build_trace_matrices(&t)))
        .collect::<Result<Vec<TraceMatrices>>>()?;
    Ok(detect_gammas(&traces))
}

fn space_fingerprint(space: &SpaceConfig) -> u64 {
    seed::fnv64(
        serde_json::to_string(space)
            .expect("serializable")
            .as_bytes(),
    )
}

/// Candidate scores, in candidate order. On failure the records preceding
/// the failing candidate are kept and the error is returned alongside.
#[derive(Debug, Default)]
pub struct Scored {
    pub rbflex: Vec<ScoreRecord>,
    pub naswot: Vec<ScoreRecord>,
    pub error: Option<Error>,
}

struct Pending {
    keys: (Option<CacheKey>, Option<CacheKey>),
    hits: (Option<ScoreRecord>, Option<ScoreRecord>),
}

pub fn score_candidates(
    space: &SpaceConfig,
    specs: &[NetworkSpec],
    weight_seed: u64,
    batch: &Minibatch,
    gammas: Option<&GammaPair>,
    scorer: ScorerKind,
    mut cache: Option<&mut ScoreCache>,
) -> Scored {
    if scorer.rbflex() && gammas.is_none() {
        return Scored {
            error: Some(Error::Config(
                "rbflex scoring needs detected bandwidths".into(),
            )),
            ..Scored::default()
        };
    }
    let space_fp = space_fingerprint(space);
    let gamma_tuple = gammas.map(|g| (g.gamma_k, g.gamma_q));
    let pending: Vec<Pending> = specs
        .iter()
        .map(|spec| {
            let id = spec.spec_id();
            let seed = network_seed(weight_seed, &id);
            let key = |name: &str, g: Option<(f64, f64)>| {
                CacheKey::new(&id, name, space_fp, seed, batch.fingerprint, g)
            };
            let keys = (
                scorer.rbflex().then(|| key("rbflex", gamma_tuple)),
                scorer.naswot().then(|| key("naswot", None)),
            );
            let lookup = |k: &Option<CacheKey>| {
                k.as_ref().and_then(|k| {
                    cache
                        .as_ref()
                        .and_then(|c| c.get_record(k, batch.fingerprint))
                })
            };
            let hits = (lookup(&keys.0), lookup(&keys.1));
            Pending { keys, hits }
        })
        .collect();

    let results: Vec<Result<(Option<ScoreRecord>, Option<ScoreRecord>)>> = specs
        .par_iter()
        .zip(&pending)
        .map(|(spec, p)| {
            let need_rbf = p.keys.0.is_some() && p.hits.0.is_none();
            let need_nas = p.keys.1.is_some() && p.hits.1.is_none();
            if !need_rbf && !need_nas {
                return Ok((p.hits.0.clone(), p.hits.1.clone()));
            }
            let (seed, trace) = network_trace(spec, weight_seed, batch)?;
            let record = |score, g: Option<&GammaPair>| ScoreRecord {
                spec_id: spec.spec_id(),
                score,
                gamma_k: g.map(|g| g.gamma_k),
                gamma_q: g.map(|g| g.gamma_q),
                weight_seed: seed,
                batch_fingerprint: batch.fingerprint,
            };
            let rbf = if need_rbf {
                let g = gammas.expect("checked above");
                let tm = build_trace_matrices(&trace)?;
                Some(record(rbflex_score(&tm, g.gamma_k, g.gamma_q)?, Some(g)))
            } else {
                p.hits.0.clone()
            };
            let nas = if need_nas {
                Some(record(naswot_score(&trace)?, None))
            } else {
                p.hits.1.clone()
            };
            Ok((rbf, nas))
        })
        .collect();

    let mut out = Scored::default();
    for (result, p) in results.into_iter().zip(pending) {
        match result {
            Ok((rbf, nas)) => {
                if let Some(cache) = cache.as_deref_mut() {
                    let fresh = [
                        (p.keys.0, &rbf, p.hits.0.is_none()),
                        (p.keys.1, &nas, p.hits.1.is_none()),
                    ];
                    for (key, rec, is_new) in fresh {
                        if let (Some(key), Some(rec), true) = (key, rec, is_new) {
                            if let Err(e) = cache.put(key, rec.score) {
                                out.error = Some(e);
                                return out;
                            }
                        }
                    }
                }
                out.rbflex.extend(rbf);
                out.naswot.extend(nas);
            }
            Err(e) => {
                out.error = Some(e);
                break;
            }
        }
    }
    out
}

/// Everything needed to reproduce a search run bit for bit.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub data_source: String,
    pub batch_fingerprint: String,
    pub batch_indices: Vec<usize>,
    #[serde(flatten)]
    pub gammas: Option<GammaPair>,
    pub probe_ids: Vec<String>,
    pub n_scored: usize,
    pub n_degenerate: usize,
    pub top1: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseTimings {
    pub load_data_s: f64,
    pub probe_s: f64,
    pub score_s: f64,
}

#[derive(Debug)]
pub struct SearchOutcome {
    pub manifest: RunManifest,
    pub rbflex: Vec<ScoreRecord>,
    pub naswot: Vec<ScoreRecord>,
    pub top1: String,
    pub timings: PhaseTimings,
}

pub(crate) struct RunSetup {
    pub config: ExperimentConfig,
    pub batch: Minibatch,
    pub data_source: String,
    pub candidates: Vec<NetworkSpec>,
    pub probes: Vec<NetworkSpec>,
}

/// Loads data, draws the run's minibatch, and samples candidates and probes.
pub(crate) fn prepare(config: &ExperimentConfig) -> Result<RunSetup> {
    config.validate()?;
    let mut config = config.clone();
    let images = config.load_images()?;
    let batch = draw_minibatch(&images, config.n, config.seeds.batch)?;
    let candidates = config.candidate_specs()?;
    let probes = config
        .space
        .sample(config.m, seed::derive(config.seeds.sampler, "probes"))?;
    Ok(RunSetup {
        data_source: images.source.tag(),
        config,
        batch,
        candidates,
        probes,
    })
}

/// Samples S candidates, detects bandwidths on M probes, scores every
/// candidate on one shared minibatch and reports the top-1 network.
///
/// With an output directory, writes `scores.csv` (and `scores_naswot.csv`),
/// `manifest.json` and `timings.json`. Score files are written even when
/// scoring aborts part way.
pub fn run_search(config: &ExperimentConfig) -> Result<SearchOutcome> {
    let t0 = Instant::now();
    let setup = prepare(config)?;
    let load_data_s = t0.elapsed().as_secs_f64();
    let cfg = &setup.config;

    let t1 = Instant::now();
    let gammas = if cfg.scorer.rbflex() {
        Some(detect_run_gammas(
            &setup.probes,
            cfg.seeds.weights,
            &setup.batch,
        )?)
    } else {
        None
    };
    let probe_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let mut cache = cfg
        .cache_path
        .as_deref()
        .map(ScoreCache::open)
        .transpose()?;
    let scored = score_candidates(
        &cfg.space,
        &setup.candidates,
        cfg.seeds.weights,
        &setup.batch,
        gammas.as_ref(),
        cfg.scorer,
        cache.as_mut(),
    );
    let score_s = t2.elapsed().as_secs_f64();

    if let Some(dir) = &cfg.out_dir {
        if cfg.scorer.rbflex() {
            write_file(dir, "scores.csv", &records_to_csv(&scored.rbflex))?;
        }
        if cfg.scorer.naswot() {
            write_file(dir, "scores_naswot.csv", &records_to_csv(&scored.naswot))?;
        }
    }
    if let Some(e) = scored.error {
        return Err(e);
    }

    let ranking = if cfg.scorer.rbflex() {
        &scored.rbflex
    } else {
        &scored.naswot
    };
    let top1 = top_k(ranking, 1).ok().and_then(|v| v.into_iter().next());
    let manifest = RunManifest {
        engine_version: ENGINE_VERSION.to_string(),
        command: "search".into(),
        config: cfg.clone(),
        data_source: setup.data_source.clone(),
        batch_fingerprint: hex(setup.batch.fingerprint),
        batch_indices: setup.batch.indices.clone(),
        gammas,
        probe_ids: setup.probes.iter().map(NetworkSpec::spec_id).collect(),
        n_scored: ranking.len(),
        n_degenerate: ranking
            .iter()
            .filter(|r| r.score == Score::Degenerate)
            .count(),
        top1: top1.clone(),
    };
    let timings = PhaseTimings {
        load_data_s,
        probe_s,
        score_s,
    };
    if let Some(dir) = &cfg.out_dir {
        write_file(dir, "manifest.json", &to_json(&manifest)?)?;
        write_file(dir, "timings.json", &to_json(&timings)?)?;
    }
    let top1 = top1.ok_or(Error::AllDegenerate)?;
    Ok(SearchOutcome {
        manifest,
        rbflex: scored.rbflex,
        naswot: scored.naswot,
        top1,
        timings,
    })
}
