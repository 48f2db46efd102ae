//! Probing the learned structural prior.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{resolve_family, size_bucket, UNKNOWN_SIZE_BUCKET};
use crate::train::Checkpoint;

/// One probed bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBin {
    /// Size bucket index or family key (`"unknown"` for the reserved slot).
    pub bin: String,
    pub raw: f64,
    pub standardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorProbeReport {
    /// Prior score per size bucket present in the catalog, at the mean
    /// family embedding.
    pub size: Vec<PriorBin>,
    /// Prior score per family present in the catalog, at the mean size
    /// embedding.
    pub family: Vec<PriorBin>,
    /// Spearman correlation of size scores with bucket index over the known
    /// buckets.
    pub size_spearman: f64,
    /// False when the correlation is undefined (fewer than two buckets or
    /// constant scores); `size_spearman` is then 0.
    pub size_spearman_defined: bool,
    /// Share of the variance of per-model prior scores explained by family.
    pub family_eta_squared: f64,
    pub family_eta_squared_defined: bool,
}

/// Z-scores `v` with the population std; a zero std yields zeros.
fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    if v.is_empty() {
        return Vec::new();
    }
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        v.iter().map(|x| (x - mean) / sd).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Average ranks (1-based), ties sharing their mean rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant or there
/// are fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn mean_rows(table: &crate::numerics::Param<f32>, rows: &[usize]) -> Vec<f32> {
    let mut m = vec![0f32; table.cols];
    for &r in rows {
        for (a, b) in m.iter_mut().zip(table.row(r)) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len().max(1) as f32);
    m
}

/// Probes the prior of `ckpt` over the models recorded in it.
pub fn probe_prior(ckpt: &Checkpoint) -> crate::scorer::Result<PriorProbeReport> {
    let scorer = ckpt.scorer()?;
    let t = scorer.ids.tables;
    let fam_vocab = &ckpt.vocab.families;
    let per_model: Vec<(usize, usize)> = ckpt
        .models
        .iter()
        .map(|m| (size_bucket(m.param_count.filter(|&p| p > 0)).expect("positive or absent"), resolve_family(m, fam_vocab)))
        .collect();
    let mut buckets: Vec<usize> = per_model.iter().map(|p| p.0).collect();
    buckets.sort_unstable();
    buckets.dedup();
    let mut families: Vec<usize> = per_model.iter().map(|p| p.1).collect();
    families.sort_unstable();
    families.dedup();

    let size_table = scorer.store.get(t.size);
    let fam_table = scorer.store.get(t.family);
    let mean_size = mean_rows(size_table, &buckets);
    let mean_fam = mean_rows(fam_table, &families);

    let size_raw: Vec<f64> = buckets.iter().map(|&b| scorer.prior_score(size_table.row(b), &mean_fam) as f64).collect();
    let fam_raw: Vec<f64> = families.iter().map(|&f| scorer.prior_score(&mean_size, fam_table.row(f)) as f64).collect();
    let bins = |labels: Vec<String>, raw: &[f64]| -> Vec<PriorBin> {
        labels
            .into_iter()
            .zip(raw)
            .zip(standardize(raw))
            .map(|((bin, &raw), standardized)| PriorBin { bin, raw, standardized })
            .collect()
    };
    let size = bins(buckets.iter().map(|b| b.to_string()).collect(), &size_raw);
    let family = bins(families.iter().map(|&f| fam_vocab.key(f).unwrap_or("unknown").to_string()).collect(), &fam_raw);

    let (known_idx, known_scores): (Vec<f64>, Vec<f64>) = buckets
        .iter()
        .zip(&size_raw)
        .filter(|(b, _)| **b != UNKNOWN_SIZE_BUCKET)
        .map(|(&b, &s)| (b as f64, s))
        .unzip();
    let rho = spearman(&known_idx, &known_scores);

    // η² over per-model prior scores grouped by family.
    let scores: Vec<f64> = per_model.iter().map(|&(b, f)| scorer.prior_for(b, f) as f64).collect();
    let n = scores.len() as f64;
    let grand = scores.iter().sum::<f64>() / n.max(1.0);
    let total: f64 = scores.iter().map(|s| (s - grand).powi(2)).sum();
    let mut by_fam: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&(_, f), &s) in per_model.iter().zip(&scores) {
        let e = by_fam.entry(f).or_insert((0.0, 0));
        e.0 += s;
        e.1 += 1;
    }
    let between: f64 = by_fam.values().map(|&(sum, c)| c as f64 * (sum / c as f64 - grand).powi(2)).sum();
    let eta = (total > 0.0).then(|| between / total);

    Ok(PriorProbeReport {
        size,
        family,
        size_spearman: rho.unwrap_or(0.0),
        size_spearman_defined: rho.is_some(),
        family_eta_squared: eta.unwrap_or(0.0),
        family_eta_squared_defined: eta.is_some(),
    })
}
