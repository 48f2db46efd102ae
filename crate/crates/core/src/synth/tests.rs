use super::*;

fn small(seed: u64) -> SynthConfig {
    SynthConfig { n_models: 40, n_datasets: 6, seed, ..SynthConfig::default() }
}

fn member_keys(c: &Corpus, g: &EvaluationGroup) -> Vec<String> {
    g.members.iter().map(|m| c.catalog().models()[m.model].model_key.clone()).collect()
}

#[test]
fn noiseless_size_only_orders_by_params() {
    let cfg = SynthConfig { rho_obs: 1.0, sigma_eps: 0.0, sigma_a: 0.0, ..small(3) };
    let (corpus, truth) = generate(&cfg).unwrap();
    let params: HashMap<&str, u64> = truth.models.iter().map(|m| (m.key.as_str(), m.params)).collect();
    assert_eq!(corpus.groups().len(), 6 * 3);
    for g in corpus.groups() {
        assert_eq!(g.len(), 40);
        let keys = member_keys(&corpus, g);
        let p: Vec<u64> = keys.iter().map(|k| params[k.as_str()]).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]), "{}", g.key);
        assert_eq!(truth.oracle_rank(&corpus, &g.key).unwrap(), keys);
    }
}

#[test]
fn deterministic_per_seed() {
    let (a, ta) = generate(&small(5)).unwrap();
    let (b, tb) = generate(&small(5)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(ta, tb);
    let (c, _) = generate(&small(6)).unwrap();
    assert_ne!(a.to_json(), c.to_json());
}

#[test]
fn default_record_count() {
    let tables = generate_tables(&SynthConfig::default()).unwrap();
    let n = 500.0 * 60.0 * 3.0;
    let (mean, sd) = (n * 0.4, (n * 0.4 * 0.6f64).sqrt());
    let got = tables.records.len() as f64;
    assert!((got - mean).abs() <= 5.0 * sd, "{got}");
}

#[test]
fn ingestion_is_clean() {
    let tables = generate_tables(&small(1)).unwrap();
    let (mut r, mut m, mut d) = (Vec::new(), Vec::new(), Vec::new());
    tables.write_jsonl(&mut r, &mut m, &mut d).unwrap();
    let (corpus, report) = ingest(&r[..], &m[..], &d[..], MetricRegistry::default()).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.records_kept, tables.records.len());
    assert_eq!(report.stubbed_models + report.stubbed_datasets, 0);
    assert!(corpus.groups().iter().all(|g| g.len() >= 2));
}

#[test]
fn lower_is_better_metric_is_oriented() {
    let cfg = SynthConfig { rho_obs: 1.0, sigma_eps: 0.0, ..small(8) };
    let (corpus, truth) = generate(&cfg).unwrap();
    for d in &truth.datasets {
        let key = |metric: &str| GroupKey { dataset: d.key.clone(), task: HIDDEN_TASK.into(), metric: metric.into() };
        let score = corpus.group(&key("score")).unwrap();
        let loss = corpus.group(&key("loss")).unwrap();
        assert_eq!(loss.orientation, crate::corpus::Orientation::LowerBetter);
        assert_eq!(member_keys(&corpus, score), member_keys(&corpus, loss));
        assert_eq!(truth.oracle_rank(&corpus, &score.key).unwrap(), truth.oracle_rank(&corpus, &loss.key).unwrap());
    }
}

/// Monte Carlo over 201 groups: observed rankings agree with the latent
/// ordering at τ_w ≥ 0.8 when σ_ε = 0.3.
#[test]
fn noise_ceiling_is_high() {
    let cfg = SynthConfig { n_datasets: 67, ..SynthConfig::default() };
    let (corpus, truth) = generate(&cfg).unwrap();
    assert!(corpus.groups().len() >= 200);
    let ceiling = truth.noise_ceiling(corpus.catalog(), corpus.groups()).unwrap();
    assert!(ceiling >= 0.8, "{ceiling}");
    let noiseless = SynthConfig { sigma_eps: 0.0, ..small(2) };
    let (c0, t0) = generate(&noiseless).unwrap();
    assert!((t0.noise_ceiling(c0.catalog(), c0.groups()).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn config_validation() {
    assert!(SynthConfig { rho_obs: 0.0, ..SynthConfig::default() }.validate().is_err());
    assert!(SynthConfig { n_models: 0, ..SynthConfig::default() }.validate().is_err());
    assert!(SynthConfig::from_toml_str("n_models = 10\nseed = 4").is_ok());
    assert!(SynthConfig::from_toml_str("bogus = 1").is_err());
}

#[test]
fn descriptions_leak_clusters() {
    let tables = generate_tables(&small(0)).unwrap();
    for (meta, d) in tables.datasets.iter().zip(&tables.truth.datasets) {
        assert!(meta.description.contains(&cluster_name(d.task)));
    }
    for (meta, m) in tables.models.iter().zip(&tables.truth.models) {
        assert!(meta.description.contains(&format!("fam{}", m.family)));
        assert!(meta.description.contains(&cluster_name(m.specialty)));
    }
}

#[test]
fn task_cluster_is_latent_unless_revealed() {
    let (hidden, truth) = generate(&small(4)).unwrap();
    assert_eq!(hidden.task_keys(), vec![HIDDEN_TASK.to_string()]);
    let (shown, _) = generate(&SynthConfig { reveal_task: true, ..small(4) }).unwrap();
    let mut clusters: Vec<String> = truth.datasets.iter().map(|d| cluster_name(d.task)).collect();
    clusters.sort();
    clusters.dedup();
    assert_eq!(shown.task_keys(), clusters);
    // Only the task key differs.
    assert_eq!(hidden.records().len(), shown.records().len());
    for (a, b) in hidden.records().iter().zip(shown.records()) {
        assert_eq!((&a.model_key, &a.dataset_key, a.value), (&b.model_key, &b.dataset_key, b.value));
    }
}
