//! `eval`: metric reports over generation records.

use std::collections::BTreeMap;

use anyhow::Result;
use conceptplan::corpus::CorpusMode;
use conceptplan::metrics::{diversity_report, evaluate, write_summary_csv, Metric, MetricReport};
use conceptplan::GenerationRecord;

use crate::files::{ensure_dir, load_corpus, read_jsonl, write_atomic, write_json};
use crate::{EvalArgs, UsageError};

pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Metric = name.parse().map_err(|e| UsageError(format!("{e}")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(UsageError("--metrics is empty".into()).into());
    }
    Ok(out)
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let metrics = parse_metrics(&args.metrics)?;
    if args.top_k.is_some_and(|k| k < 2) {
        return Err(UsageError("--top-k for discrepancy must be at least 2".into()).into());
    }
    let instances = load_corpus(&args.corpus, CorpusMode::Inference)?;
    let records: Vec<GenerationRecord> = read_jsonl(&args.records)?;

    // the first record of an instance is its system output; the rest are
    // lower-ranked candidates
    let mut outputs: BTreeMap<String, String> = BTreeMap::new();
    let mut candidates: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &records {
        outputs.entry(r.instance_id.clone()).or_insert_with(|| r.text.clone());
        let list = candidates.entry(r.instance_id.clone()).or_default();
        if args.top_k.is_none_or(|k| list.len() < k) {
            list.push(r.text.clone());
        }
    }

    ensure_dir(&args.out)?;
    let mut reports: Vec<MetricReport> = Vec::new();
    for m in metrics {
        let report = match m {
            Metric::Discrepancy => diversity_report(&candidates, 4)?,
            other => evaluate(other, &outputs, &instances)?,
        };
        log::info!("{}: {}", report.metric, report.corpus_value);
        write_json(&args.out.join(format!("{}.json", report.metric)), &report)?;
        reports.push(report);
    }
    let mut csv = Vec::new();
    write_summary_csv(&mut csv, &reports)?;
    write_atomic(&args.out.join("summary.csv"), &csv)
}
