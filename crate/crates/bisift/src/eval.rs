//! Retrieval evaluation: precision and recall at cutoffs, average precision,
//! and the two-level mean average precision (per-theme means averaged over
//! themes). A flat per-query mean is reported alongside the two-level
//! headline number.
//!
//! The query image itself is excluded from its rank list and from the
//! relevant set before any metric is computed; self-retrieval would inflate
//! every number.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::retrieval::RankList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0:?} appears under more than one theme")]
    DuplicateQuery(String),
    #[error("no rank list supplied for ground-truth query {0:?}")]
    MissingRankList(String),
    #[error("recall undefined: query {0:?} has an empty relevant set")]
    UndefinedRecall(String),
    #[error("ground truth line {line}: {reason}")]
    ParseError { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Relevance judgments grouped into themes; each theme holds one or more
/// queries and each query a non-empty set of relevant image ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    themes: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one judgment. A query may not appear under two themes.
    pub fn add(
        &mut self,
        theme: impl Into<String>,
        query_id: impl Into<String>,
        relevant_id: impl Into<String>,
    ) -> Result<(), EvalError> {
        let theme = theme.into();
        let query_id = query_id.into();
        for (name, queries) in &self.themes {
            if *name != theme && queries.contains_key(&query_id) {
                return Err(EvalError::DuplicateQuery(query_id));
            }
        }
        self.themes
            .entry(theme)
            .or_default()
            .entry(query_id)
            .or_default()
            .insert(relevant_id.into());
        Ok(())
    }

    pub fn themes(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, BTreeSet<String>>)> {
        self.themes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn query_count(&self) -> usize {
        self.themes.values().map(|q| q.len()).sum()
    }

    pub fn relevant_for(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.themes.values().find_map(|queries| queries.get(query_id))
    }
}

/// Parses the ground-truth text format: one `theme<TAB>query<TAB>relevant`
/// judgment per line.
pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut gt = GroundTruth::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(theme), Some(query), Some(relevant), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(EvalError::ParseError {
                line: i + 1,
                reason: "expected 3 tab-separated fields".to_string(),
            });
        };
        gt.add(theme, query, relevant)?;
    }
    Ok(gt)
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (theme, queries) in gt.themes() {
        for (query, relevant) in queries {
            for id in relevant {
                writeln!(w, "{theme}\t{query}\t{id}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// The rank list and relevant set with the query's own id removed.
fn effective<'a>(
    rank_list: &'a RankList,
    relevant: &'a BTreeSet<String>,
) -> (Vec<&'a str>, HashSet<&'a str>) {
    let qid = rank_list.query_id();
    let ids = rank_list
        .entries()
        .iter()
        .map(|e| e.image_id.as_str())
        .filter(|&id| id != qid)
        .collect();
    let relevant = relevant
        .iter()
        .map(String::as_str)
        .filter(|&id| id != qid)
        .collect();
    (ids, relevant)
}

/// Fraction of the top `k` retrieved images that are relevant. The
/// denominator is `k` even when fewer entries exist.
pub fn precision_at(rank_list: &RankList, relevant: &BTreeSet<String>, k: usize) -> f64 {
    debug_assert!(k >= 1);
    let (ids, relevant) = effective(rank_list, relevant);
    let hits = ids.iter().take(k).filter(|id| relevant.contains(*id)).count();
    hits as f64 / k as f64
}

/// Fraction of the relevant images found in the top `k`.
pub fn recall_at(
    rank_list: &RankList,
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64, EvalError> {
    debug_assert!(k >= 1);
    let (ids, relevant) = effective(rank_list, relevant);
    if relevant.is_empty() {
        return Err(EvalError::UndefinedRecall(rank_list.query_id().to_string()));
    }
    let hits = ids.iter().take(k).filter(|id| relevant.contains(*id)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Average precision: the mean over relevant items of the precision at each
/// item's retrieval rank; relevant items never retrieved contribute zero.
pub fn average_precision(
    rank_list: &RankList,
    relevant: &BTreeSet<String>,
) -> Result<f64, EvalError> {
    let (ids, relevant) = effective(rank_list, relevant);
    if relevant.is_empty() {
        return Err(EvalError::UndefinedRecall(rank_list.query_id().to_string()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0f64;
    for (i, id) in ids.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len() as f64)
}

/// Per-query metrics inside a [`MetricReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    pub theme: String,
    pub query_id: String,
    pub ap: f64,
    /// Precision at each report cutoff, in cutoff order.
    pub precision: Vec<f64>,
    /// Recall at each report cutoff, in cutoff order.
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThemeMetrics {
    pub theme: String,
    pub query_count: usize,
    pub mean_ap: f64,
}

/// Full evaluation output: per-query, per-theme, and overall numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub per_query: Vec<QueryMetrics>,
    pub per_theme: Vec<ThemeMetrics>,
    /// Per-theme means averaged over themes; the headline number.
    pub map_two_level: f64,
    /// Plain mean over all query APs, for comparison.
    pub map_flat: f64,
}

/// Evaluates rank lists against the ground truth. Every ground-truth query
/// must have a rank list; extra rank lists are ignored.
pub fn evaluate(
    rank_lists: &[RankList],
    gt: &GroundTruth,
    cutoffs: &[usize],
) -> Result<MetricReport, EvalError> {
    let by_query: HashMap<&str, &RankList> =
        rank_lists.iter().map(|l| (l.query_id(), l)).collect();
    let mut per_query = Vec::with_capacity(gt.query_count());
    let mut per_theme = Vec::new();
    let mut theme_means = Vec::new();
    let mut all_aps = Vec::new();

    for (theme, queries) in gt.themes() {
        let mut theme_aps = Vec::with_capacity(queries.len());
        for (query_id, relevant) in queries {
            let list = by_query
                .get(query_id.as_str())
                .ok_or_else(|| EvalError::MissingRankList(query_id.clone()))?;
            let ap = average_precision(list, relevant)?;
            let precision = cutoffs.iter().map(|&k| precision_at(list, relevant, k)).collect();
            let recall = cutoffs
                .iter()
                .map(|&k| recall_at(list, relevant, k))
                .collect::<Result<_, _>>()?;
            per_query.push(QueryMetrics {
                theme: theme.to_string(),
                query_id: query_id.clone(),
                ap,
                precision,
                recall,
            });
            theme_aps.push(ap);
            all_aps.push(ap);
        }
        let mean_ap = theme_aps.iter().sum::<f64>() / theme_aps.len() as f64;
        per_theme.push(ThemeMetrics {
            theme: theme.to_string(),
            query_count: theme_aps.len(),
            mean_ap,
        });
        theme_means.push(mean_ap);
    }

    let map_two_level = if theme_means.is_empty() {
        0.0
    } else {
        theme_means.iter().sum::<f64>() / theme_means.len() as f64
    };
    let map_flat = if all_aps.is_empty() {
        0.0
    } else {
        all_aps.iter().sum::<f64>() / all_aps.len() as f64
    };
    Ok(MetricReport {
        cutoffs: cutoffs.to_vec(),
        per_query,
        per_theme,
        map_two_level,
        map_flat,
    })
}

/// Writes the machine-readable report: `scope<TAB>name<TAB>metric<TAB>value`.
pub fn write_metric_report(path: &Path, report: &MetricReport) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in &report.per_query {
        writeln!(w, "query\t{}\tap\t{}", q.query_id, q.ap)?;
        for (&k, &p) in report.cutoffs.iter().zip(q.precision.iter()) {
            writeln!(w, "query\t{}\tprecision@{}\t{}", q.query_id, k, p)?;
        }
        for (&k, &r) in report.cutoffs.iter().zip(q.recall.iter()) {
            writeln!(w, "query\t{}\trecall@{}\t{}", q.query_id, k, r)?;
        }
    }
    for t in &report.per_theme {
        writeln!(w, "theme\t{}\tmean_ap\t{}", t.theme, t.mean_ap)?;
    }
    writeln!(w, "overall\t-\tmap_two_level\t{}", report.map_two_level)?;
    writeln!(w, "overall\t-\tmap_flat\t{}", report.map_flat)?;
    w.flush()?;
    Ok(())
}

/// Renders a small human-readable summary table.
pub fn render_metric_table(report: &MetricReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>8} {:>10}", "theme", "queries", "mean AP");
    for t in &report.per_theme {
        let _ = writeln!(out, "{:<24} {:>8} {:>10.4}", t.theme, t.query_count, t.mean_ap);
    }
    let _ = writeln!(out, "{:<24} {:>8} {:>10.4}", "mAP (two-level)", "-", report.map_two_level);
    let _ = writeln!(out, "{:<24} {:>8} {:>10.4}", "mAP (flat)", "-", report.map_flat);
    out
}
