use std::fs;

use rbflex::harness::{
    gamma_sweep, run_batchsize_robustness, run_correlation, run_imagebatch_robustness,
    run_init_robustness, run_search, sampled_candidates, CacheKey, ExperimentConfig,
    ReferenceTable, ScoreCache, ScorerKind,
};
use rbflex::score::Score;
use rbflex::space::{NetworkSpec, SpaceKind};
use rbflex::Error;

fn small(kind: SpaceKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind);
    cfg.n = 8;
    cfg.m = 3;
    cfg.s = 6;
    cfg
}

fn specs(cfg: &ExperimentConfig, ids: &[&str]) -> Vec<NetworkSpec> {
    ids.iter()
        .map(|id| cfg.space.parse_id(id).unwrap())
        .collect()
}

#[test]
fn single_candidate_is_top1() {
    let mut cfg = small(SpaceKind::Cell);
    cfg.s = 1;
    let out = run_search(&cfg).unwrap();
    assert_eq!(out.rbflex.len(), 1);
    assert_eq!(out.top1, out.rbflex[0].spec_id);
}

#[test]
fn search_outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut cfg = small(SpaceKind::Cell);
        cfg.scorer = ScorerKind::Both;
        cfg.out_dir = Some(dir.path().to_path_buf());
        run_search(&cfg).unwrap();
    }
    for name in ["scores.csv", "scores_naswot.csv", "manifest.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn act_space_scores_all_eleven() {
    let mut cfg = small(SpaceKind::Act);
    cfg.s = 11;
    let dir = tempfile::tempdir().unwrap();
    cfg.out_dir = Some(dir.path().to_path_buf());
    run_search(&cfg).unwrap();
    let csv = fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);
}

#[test]
fn cache_never_changes_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(SpaceKind::Cell);
    let plain = run_search(&cfg).unwrap();
    cfg.cache_path = Some(dir.path().join("cache.jsonl"));
    let cold = run_search(&cfg).unwrap();
    let warm = run_search(&cfg).unwrap();
    assert_eq!(plain.rbflex, cold.rbflex);
    assert_eq!(plain.rbflex, warm.rbflex);

    let cache = ScoreCache::open(cfg.cache_path.as_ref().unwrap()).unwrap();
    assert_eq!(cache.len(), cfg.s);
    let r = &plain.rbflex[0];
    let key = |fp| {
        CacheKey::new(
            &r.spec_id,
            "rbflex",
            0,
            r.weight_seed,
            fp,
            r.gamma_k.zip(r.gamma_q),
        )
    };
    assert!(cache.get(&key(r.batch_fingerprint ^ 1)).is_none());
}

#[test]
fn init_robustness_cases() {
    let cfg = small(SpaceKind::Cell);
    assert!(matches!(
        run_init_robustness(&cfg, &[], 3),
        Err(Error::Config(_))
    ));

    let s = specs(
        &cfg,
        &["cell|3,1,0,1,2,4", "cell|3,1,0,1,2,4", "cell|2,2,3,3,1,0"],
    );
    let report = run_init_robustness(&cfg, &s, 3).unwrap();
    assert_eq!(report.networks[0].scores, report.networks[1].scores);
    assert_eq!(report.gammas.len(), 3);
}

#[test]
fn imagebatch_robustness_cases() {
    let cfg = small(SpaceKind::Cell);
    assert!(run_imagebatch_robustness(&cfg, &[], 3).is_err());
    let s = sampled_candidates(&cfg).unwrap();
    let a = run_imagebatch_robustness(&cfg, &s, 3).unwrap();
    let b = run_imagebatch_robustness(&cfg, &s, 3).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert!(a.separation_ratio.is_finite());
}

#[test]
fn batchsize_robustness_cases() {
    let cfg = small(SpaceKind::Cell);
    let s = sampled_candidates(&cfg).unwrap();
    let report = run_batchsize_robustness(&cfg, &s, &[8, 8]).unwrap();
    assert_eq!(report.tau(8, 8), Some(1.0));
    assert_eq!(report.kendall[0][1], Some(1.0));
    assert!(matches!(
        run_batchsize_robustness(&cfg, &s, &[1, 8]),
        Err(Error::Config(_))
    ));
}

fn reference_from(cfg: &ExperimentConfig, sign: f64) -> (Vec<NetworkSpec>, ReferenceTable) {
    let out = run_search(cfg).unwrap();
    let s = sampled_candidates(cfg).unwrap();
    let table = ReferenceTable::from_pairs(
        out.rbflex
            .iter()
            .map(|r| (r.spec_id.clone(), sign * r.score.value().unwrap())),
    )
    .unwrap();
    (s, table)
}

#[test]
fn self_and_anti_correlation() {
    let cfg = small(SpaceKind::Cell);
    let (s, same) = reference_from(&cfg, 1.0);
    let r = run_correlation(&cfg, &same, Some(&s))
        .unwrap()
        .rbflex
        .unwrap();
    assert!((r.pearson - 1.0).abs() < 1e-12);
    assert_eq!(r.kendall_tau_b, 1.0);

    let (_, neg) = reference_from(&cfg, -1.0);
    let r = run_correlation(&cfg, &neg, None).unwrap().rbflex.unwrap();
    assert!((r.pearson + 1.0).abs() < 1e-12);
    assert_eq!(r.kendall_tau_b, -1.0);
}

#[test]
fn correlation_reports_both_scorers() {
    let mut cfg = small(SpaceKind::Cell);
    let (s, table) = reference_from(&cfg, 1.0);
    cfg.scorer = ScorerKind::Both;
    cfg.repeats = 2;
    let dir = tempfile::tempdir().unwrap();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let report = run_correlation(&cfg, &table, Some(&s)).unwrap();
    assert!(report.rbflex.is_some() && report.naswot.is_some());
    assert_eq!(report.repeats.len(), 2);
    assert_ne!(
        report.repeats[0].batch_fingerprint,
        report.repeats[1].batch_fingerprint
    );
    let csv = fs::read_to_string(dir.path().join("correlation.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "spec_id,accuracy,rbflex_score,naswot_score"
    );
    assert!(dir.path().join("correlation.json").exists());
}

#[test]
fn correlation_join_miss() {
    let cfg = small(SpaceKind::Cell);
    let s = sampled_candidates(&cfg).unwrap();
    let table = ReferenceTable::from_pairs(s[1..].iter().map(|n| (n.spec_id(), 0.5))).unwrap();
    assert!(
        matches!(run_correlation(&cfg, &table, Some(&s)), Err(Error::JoinMiss(id)) if id == s[0].spec_id())
    );
}

#[test]
fn reference_csv_loading() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("ref.csv");
    fs::write(
        &good,
        "spec_id,accuracy\n\"cell|0,1,2,3,4,0\",91.5\nact|ReLU,80\n",
    )
    .unwrap();
    let t = ReferenceTable::load(&good).unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(t.get("cell|0,1,2,3,4,0"), Some(91.5));
    assert_eq!(t.get("act|ReLU"), Some(80.0));

    // Unquoted cell ids split into extra fields.
    fs::write(&good, "spec_id,accuracy\ncell|0,1,2,3,4,0,91.5\n").unwrap();
    assert!(matches!(
        ReferenceTable::load(&good),
        Err(Error::MalformedFile { .. })
    ));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,acc\nx,1\n").unwrap();
    assert!(matches!(
        ReferenceTable::load(&bad),
        Err(Error::MalformedFile { .. })
    ));
}

#[test]
fn gamma_sweep_rows() {
    let cfg = small(SpaceKind::Cell);
    let report = gamma_sweep(&cfg, &[0.01, 0.5]).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert!(report.rows[0].gamma_k > report.rows[1].gamma_k);
    assert!(gamma_sweep(&cfg, &[1.0]).is_err());
}

#[test]
fn degenerate_candidate_ranks_last() {
    let mut cfg = small(SpaceKind::Cell);
    cfg.candidates = Some(vec!["cell|0,0,0,0,0,0".into(), "cell|3,3,3,3,3,3".into()]);
    let out = run_search(&cfg).unwrap();
    assert_eq!(out.rbflex[0].score, Score::Degenerate);
    assert_eq!(out.top1, "cell|3,3,3,3,3,3");
    assert_eq!(out.manifest.n_degenerate, 1);
}
