use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{
    normalize_key, Corpus, DatasetMeta, InteractionRecord, MetricRegistry, ModelMeta, RecordKey, Result, SourceTier,
};

/// A recoverable problem with one input line.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LineError {
    pub source: &'static str,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct IngestReport {
    pub records_read: usize,
    pub records_kept: usize,
    pub stubbed_models: usize,
    pub stubbed_datasets: usize,
    /// Duplicate model keys whose parameter counts disagreed.
    pub param_conflicts: usize,
    pub errors: Vec<LineError>,
}

#[derive(Deserialize)]
struct RawRecord {
    model: String,
    dataset: String,
    task: String,
    metric: String,
    value: f64,
    #[serde(default)]
    tier: SourceTier,
}

#[derive(Deserialize)]
struct RawModel {
    key: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    params: Option<u64>,
    #[serde(default)]
    family: Option<String>,
}

#[derive(Deserialize)]
struct RawDataset {
    key: String,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: String,
}

fn required_key(raw: &str, field: &str) -> std::result::Result<String, String> {
    let k = normalize_key(raw);
    if k.is_empty() {
        Err(format!("empty {field} key"))
    } else {
        Ok(k)
    }
}

fn parse_record(line: &str) -> std::result::Result<InteractionRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if !raw.value.is_finite() {
        return Err("value is not finite".into());
    }
    Ok(InteractionRecord {
        model_key: required_key(&raw.model, "model")?,
        dataset_key: required_key(&raw.dataset, "dataset")?,
        task_key: required_key(&raw.task, "task")?,
        metric_key: required_key(&raw.metric, "metric")?,
        value: raw.value,
        source_tier: raw.tier,
    })
}

/// Calls `f` on every non-blank line with its 1-based number.
fn for_each_line<R: BufRead>(
    reader: R,
    source: &'static str,
    errors: &mut Vec<LineError>,
    mut f: impl FnMut(usize, &str, &mut Vec<LineError>),
) -> Result<()> {
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        f(i + 1, &line, errors);
    }
    let _ = source;
    Ok(())
}

/// Keeps the highest-tier record per `(model, dataset, task, metric)`; within
/// a tier the last one seen wins. Output order follows first occurrence.
pub fn deduplicate(records: Vec<InteractionRecord>) -> Vec<InteractionRecord> {
    let mut slot: HashMap<RecordKey, usize> = HashMap::new();
    let mut kept: Vec<InteractionRecord> = Vec::new();
    for r in records {
        keep_record(&mut slot, &mut kept, r);
    }
    kept
}

fn keep_record(slot: &mut HashMap<RecordKey, usize>, kept: &mut Vec<InteractionRecord>, r: InteractionRecord) {
    match slot.get(&r.key()) {
        Some(&i) => {
            if r.source_tier >= kept[i].source_tier {
                kept[i] = r;
            }
        }
        None => {
            slot.insert(r.key(), kept.len());
            kept.push(r);
        }
    }
}

/// Streams the three line-delimited inputs into a [`Corpus`].
///
/// Malformed lines are reported and skipped. Records referencing models or
/// datasets without metadata get stub entries. Only deduplicated records are
/// held in memory.
pub fn ingest<R1: BufRead, R2: BufRead, R3: BufRead>(
    records: R1,
    models: R2,
    datasets: R3,
    registry: MetricRegistry,
) -> Result<(Corpus, IngestReport)> {
    let mut report = IngestReport::default();
    let mut errors = Vec::new();

    let mut model_meta: Vec<ModelMeta> = Vec::new();
    let mut model_seen: HashMap<String, usize> = HashMap::new();
    let mut conflicts = 0;
    for_each_line(models, "models", &mut errors, |line_no, line, errors| {
        let parsed = serde_json::from_str::<RawModel>(line).map_err(|e| e.to_string()).and_then(|raw| {
            let key = required_key(&raw.key, "model")?;
            let family = raw.family.map(|f| normalize_key(&f)).filter(|f| !f.is_empty());
            Ok((key, raw.name, raw.description, raw.params, family))
        });
        match parsed {
            Err(message) => errors.push(LineError { source: "models", line: line_no, message }),
            Ok((key, name, description, params, family)) => {
                let params = match params {
                    Some(0) => {
                        errors.push(LineError {
                            source: "models",
                            line: line_no,
                            message: format!("model {key}: params must be >= 1; treated as unknown"),
                        });
                        None
                    }
                    p => p,
                };
                if let Some(&i) = model_seen.get(&key) {
                    let prev: &ModelMeta = &model_meta[i];
                    if prev.param_count != params {
                        conflicts += 1;
                        log::warn!(
                            "model {key}: conflicting params {:?} vs {:?} (line {line_no}); keeping first",
                            prev.param_count,
                            params
                        );
                    }
                    return;
                }
                model_seen.insert(key.clone(), model_meta.len());
                model_meta.push(ModelMeta {
                    display_name: name.unwrap_or_else(|| key.clone()),
                    model_key: key,
                    description,
                    param_count: params,
                    family_key: family,
                });
            }
        }
    })?;
    report.param_conflicts = conflicts;

    let mut dataset_meta: Vec<DatasetMeta> = Vec::new();
    let mut dataset_seen: HashMap<String, ()> = HashMap::new();
    for_each_line(datasets, "datasets", &mut errors, |line_no, line, errors| {
        let parsed = serde_json::from_str::<RawDataset>(line)
            .map_err(|e| e.to_string())
            .and_then(|raw| Ok((required_key(&raw.key, "dataset")?, raw.name, raw.description)));
        match parsed {
            Err(message) => errors.push(LineError { source: "datasets", line: line_no, message }),
            Ok((key, name, description)) => {
                if dataset_seen.insert(key.clone(), ()).is_some() {
                    log::warn!("dataset {key} listed twice (line {line_no}); keeping first");
                    return;
                }
                dataset_meta.push(DatasetMeta { display_name: name.unwrap_or_else(|| key.clone()), dataset_key: key, description });
            }
        }
    })?;

    let mut slot: HashMap<RecordKey, usize> = HashMap::new();
    let mut kept: Vec<InteractionRecord> = Vec::new();
    let mut read = 0;
    for_each_line(records, "records", &mut errors, |line_no, line, errors| match parse_record(line) {
        Ok(r) => {
            read += 1;
            keep_record(&mut slot, &mut kept, r);
        }
        Err(message) => errors.push(LineError { source: "records", line: line_no, message }),
    })?;
    drop(slot);

    report.records_read = read;
    report.records_kept = kept.len();
    let (corpus, stub_m, stub_d) = Corpus::assemble(kept, &model_meta, &dataset_meta, registry);
    report.stubbed_models = stub_m;
    report.stubbed_datasets = stub_d;
    for e in &errors {
        log::warn!("{} line {}: {}", e.source, e.line, e.message);
    }
    report.errors = errors;
    Ok((corpus, report))
}

/// [`ingest`] over files; `metrics_config`, when given, extends the
/// lower-is-better registry.
pub fn ingest_files(
    records: &Path,
    models: &Path,
    datasets: &Path,
    metrics_config: Option<&Path>,
) -> Result<(Corpus, IngestReport)> {
    let registry = match metrics_config {
        Some(p) => MetricRegistry::from_config_str(&std::fs::read_to_string(p)?)?,
        None => MetricRegistry::default(),
    };
    ingest(
        BufReader::new(File::open(records)?),
        BufReader::new(File::open(models)?),
        BufReader::new(File::open(datasets)?),
        registry,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: f64, tier: SourceTier) -> InteractionRecord {
        InteractionRecord {
            model_key: "m".into(),
            dataset_key: "d".into(),
            task_key: "t".into(),
            metric_key: "acc".into(),
            value: v,
            source_tier: tier,
        }
    }

    #[test]
    fn dedup_last_wins_within_tier() {
        let out = deduplicate(vec![rec(0.5, SourceTier::Parsed), rec(0.6, SourceTier::Parsed)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].value, 0.6);
    }

    #[test]
    fn dedup_tier_priority() {
        let out = deduplicate(vec![rec(0.9, SourceTier::Parsed), rec(0.6, SourceTier::Leaderboard)]);
        assert_eq!(out[0].value, 0.6);
        let out = deduplicate(vec![rec(0.6, SourceTier::Leaderboard), rec(0.9, SourceTier::Structured)]);
        assert_eq!(out[0].value, 0.6);
    }

    #[test]
    fn dedup_disjoint_keys_kept() {
        let mut b = rec(0.1, SourceTier::Parsed);
        b.model_key = "other".into();
        assert_eq!(deduplicate(vec![rec(0.2, SourceTier::Parsed), b]).len(), 2);
    }

    #[test]
    fn three_tiers_keep_leaderboard() {
        let lines = [
            r#"{"model":"m","dataset":"d","task":"t","metric":"acc","value":0.1,"tier":"parsed"}"#,
            r#"{"model":"m","dataset":"d","task":"t","metric":"acc","value":0.2,"tier":"leaderboard"}"#,
            r#"{"model":"m","dataset":"d","task":"t","metric":"acc","value":0.3,"tier":"structured"}"#,
        ]
        .join("\n");
        let (c, rep) = ingest(lines.as_bytes(), &b""[..], &b""[..], MetricRegistry::default()).unwrap();
        assert_eq!(c.records().len(), 1);
        assert_eq!(c.records()[0].source_tier, SourceTier::Leaderboard);
        assert_eq!(c.records()[0].value, 0.2);
        assert_eq!(rep.stubbed_models, 1);
        assert_eq!(rep.stubbed_datasets, 1);
    }

    #[test]
    fn empty_stream() {
        let (c, rep) = ingest(&b""[..], &b""[..], &b""[..], MetricRegistry::default()).unwrap();
        assert!(c.records().is_empty());
        assert!(c.groups().is_empty());
        assert_eq!(rep.records_read, 0);
    }

    #[test]
    fn malformed_lines_are_reported_and_skipped() {
        let lines = [
            r#"{"model":"A","dataset":"d","task":"t","metric":"acc","value":0.1}"#,
            r#"not json"#,
            r#"{"model":"  ","dataset":"d","task":"t","metric":"acc","value":0.1}"#,
            r#"{"model":"B  x","dataset":"D","task":" T ","metric":"ACC","value":0.4}"#,
        ]
        .join("\n");
        let (c, rep) = ingest(lines.as_bytes(), &b""[..], &b""[..], MetricRegistry::default()).unwrap();
        assert_eq!(c.records().len(), 2);
        assert_eq!(rep.errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(c.groups().len(), 1);
        assert_eq!(c.catalog().models()[1].model_key, "b_x");
    }

    #[test]
    fn conflicting_params_keep_first() {
        let models = [
            r#"{"key":"m","name":"M","description":"","params":7000000000}"#,
            r#"{"key":"m","name":"M2","description":"","params":13000000000}"#,
        ]
        .join("\n");
        let recs = r#"{"model":"m","dataset":"d","task":"t","metric":"acc","value":0.1}"#;
        let (c, rep) = ingest(recs.as_bytes(), models.as_bytes(), &b""[..], MetricRegistry::default()).unwrap();
        assert_eq!(rep.param_conflicts, 1);
        assert_eq!(c.catalog().models()[0].param_count, Some(7_000_000_000));
        assert_eq!(c.catalog().models()[0].display_name, "M");
        assert_eq!(rep.stubbed_models, 0);
    }
}
