//! Append-only, file-backed score cache (one JSON object per line).
//!
//! Scores and bandwidths are stored as IEEE-754 bit patterns so that a hit is
//! bit-identical to recomputation.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{Score, ScoreRecord};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    pub spec_id: String,
    pub scorer: String,
    /// Fingerprint of the space's macro parameters.
    pub space: String,
    pub weight_seed: u64,
    pub batch_fingerprint: String,
    pub gamma_k_bits: Option<String>,
    pub gamma_q_bits: Option<String>,
}

impl CacheKey {
    pub fn new(
        spec_id: &str,
        scorer: &str,
        space: u64,
        weight_seed: u64,
        batch_fingerprint: u64,
        gammas: Option<(f64, f64)>,
    ) -> Self {
        CacheKey {
            spec_id: spec_id.to_string(),
            scorer: scorer.to_string(),
            space: super::hex(space),
            weight_seed,
            batch_fingerprint: super::hex(batch_fingerprint),
            gamma_k_bits: gammas.map(|g| super::hex(g.0.to_bits())),
            gamma_q_bits: gammas.map(|g| super::hex(g.1.to_bits())),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: CacheKey,
    /// Bit pattern of the score, absent for a degenerate network.
    score_bits: Option<String>,
}

fn parse_bits(s: &str) -> Option<f64> {
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

#[derive(Debug)]
pub struct ScoreCache {
    path: PathBuf,
    entries: HashMap<CacheKey, Score>,
    warnings: Vec<String>,
}

impl ScoreCache {
    /// Opens (or starts) the cache at `path`. Unreadable lines are skipped
    /// with a warning and will be recomputed.
    pub fn open(path: &Path) -> Result<Self> {
        let mut cache = ScoreCache {
            path: path.to_path_buf(),
            entries: HashMap::new(),
            warnings: Vec::new(),
        };
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => return Err(Error::io(path.display().to_string(), e)),
        };
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<CacheLine>(line).ok().and_then(|l| {
                let score = match &l.score_bits {
                    None => Some(Score::Degenerate),
                    Some(b) => parse_bits(b).filter(|v| v.is_finite()).map(Score::Value),
                };
                score.map(|s| (l.key, s))
            });
            match parsed {
                Some((key, score)) => {
                    cache.entries.insert(key, score);
                }
                None => {
                    let msg = format!(
                        "{}:{}: skipping corrupt cache line",
                        path.display(),
                        lineno + 1
                    );
                    eprintln!("warning: {msg}");
                    cache.warnings.push(msg);
                }
            }
        }
        Ok(cache)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &CacheKey) -> Option<Score> {
        self.entries.get(key).copied()
    }

    /// Like [`get`](Self::get), rebuilding the full record.
    pub fn get_record(&self, key: &CacheKey, batch_fingerprint: u64) -> Option<ScoreRecord> {
        self.get(key).map(|score| ScoreRecord {
            spec_id: key.spec_id.clone(),
            score,
            gamma_k: key.gamma_k_bits.as_deref().and_then(parse_bits),
            gamma_q: key.gamma_q_bits.as_deref().and_then(parse_bits),
            weight_seed: key.weight_seed,
            batch_fingerprint,
        })
    }

    pub fn put(&mut self, key: CacheKey, score: Score) -> Result<()> {
        if self.entries.get(&key) == Some(&score) {
            return Ok(());
        }
        let line = CacheLine {
            key: key.clone(),
            score_bits: score.value().map(|v| super::hex(v.to_bits())),
        };
        let mut text = serde_json::to_string(&line)?;
        text.push('\n');
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
        let display = self.path.display().to_string();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&display, e))?;
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(&display, e))?;
        self.entries.insert(key, score);
        Ok(())
    }
}
