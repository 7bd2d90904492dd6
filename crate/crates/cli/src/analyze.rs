//! `analyze`: invariance reports from sweeps, attention reports from dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use conceptplan::attnlab::{
    align_permutations, attention_jsd, extract_gold_relations, group_by_instance, head_importance_rank,
    hidden_variance, load_dump, mean_series, monotonicity_report, parse_conllu, probe_uas_many, spearman, Alignment,
    AttentionDump, DepTree, GoldRelation,
};
use conceptplan::invariance::{
    analyze_sweeps, skeleton_consistency, write_histogram_csv, PermutationSweep, SweepOutcome,
};
use conceptplan::{ConceptSet, GenerationRecord};
use serde_json::json;

use crate::files::{ensure_dir, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::{AnalyzeArgs, AnalyzeMode, UsageError};

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha <= 1.0) {
        return Err(UsageError(format!("--alpha {} outside (0, 1]", args.alpha)).into());
    }
    match args.mode {
        AnalyzeMode::Invariance => invariance(args),
        AnalyzeMode::Attn => attention(args),
    }
}

fn load_sweeps(path: &Path, alpha: f64, bins: usize) -> Result<Vec<SweepOutcome>> {
    let sweeps: Vec<PermutationSweep> = read_jsonl(path)?;
    let (outcomes, _) = analyze_sweeps(&sweeps, alpha, bins).with_context(|| format!("sweeps {}", path.display()))?;
    Ok(outcomes)
}

fn invariance(args: &AnalyzeArgs) -> Result<()> {
    let path = args
        .sweeps
        .as_ref()
        .ok_or_else(|| UsageError("--mode invariance needs --sweeps".into()))?;
    let sweeps: Vec<PermutationSweep> = read_jsonl(path)?;
    let (outcomes, report) =
        analyze_sweeps(&sweeps, args.alpha, args.bins).with_context(|| format!("sweeps {}", path.display()))?;
    ensure_dir(&args.out)?;
    write_json(&args.out.join("invariance_report.json"), &report)?;
    write_jsonl(&args.out.join("sweep_results.jsonl"), &outcomes)?;
    for (name, bins) in [
        ("sentence", &report.sentence_histogram),
        ("skeleton", &report.skeleton_histogram),
    ] {
        let mut buf = Vec::new();
        write_histogram_csv(&mut buf, bins)?;
        write_atomic(&args.out.join(format!("histogram_{name}.csv")), &buf)?;
    }
    log::info!(
        "alpha {}: sentence-invariant {:.1}%, skeleton-invariant {:.1}% of {} ({} excluded)",
        report.alpha,
        report.sentence_invariant_pct,
        report.skeleton_invariant_pct,
        report.instances,
        report.excluded
    );
    if let Some(rpath) = &args.records {
        let records: Vec<GenerationRecord> = read_jsonl(rpath)?;
        let pct = skeleton_consistency(records.iter().map(|r| (&r.plan, r.text.as_str())));
        write_json(
            &args.out.join("consistency.json"),
            &json!({"records": records.len(), "consistent_pct": pct}),
        )?;
    }
    Ok(())
}

fn dump_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file())
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn load_dumps(paths: &[PathBuf]) -> Result<Vec<AttentionDump>> {
    dump_files(paths)?
        .iter()
        .map(|f| {
            let bytes = fs::read(f).with_context(|| format!("reading {}", f.display()))?;
            load_dump(&bytes).with_context(|| format!("dump {}", f.display()))
        })
        .collect()
}

fn write_text(path: &Path, text: String) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

struct InstanceStats {
    dumps: usize,
    jsd: Vec<f64>,
    jsd_heads: Vec<Vec<f64>>,
    variance: Vec<f64>,
}

fn attention(args: &AnalyzeArgs) -> Result<()> {
    if args.dumps.is_empty() {
        return Err(UsageError("--mode attn needs --dumps".into()).into());
    }
    let groups = group_by_instance(load_dumps(&args.dumps)?);
    let mut alignments: BTreeMap<&str, Alignment> = BTreeMap::new();
    let mut stats: BTreeMap<&str, InstanceStats> = BTreeMap::new();
    for (id, dumps) in &groups {
        let alignment = align_permutations(dumps).with_context(|| format!("instance {id}"))?;
        if dumps.len() >= 2 {
            let jsd = attention_jsd(dumps, &alignment).with_context(|| format!("instance {id}"))?;
            let variance = hidden_variance(dumps, &alignment).with_context(|| format!("instance {id}"))?;
            stats.insert(
                id,
                InstanceStats {
                    dumps: dumps.len(),
                    jsd: jsd.per_layer,
                    jsd_heads: jsd.per_head,
                    variance,
                },
            );
        } else {
            log::warn!("instance {id}: single dump, skipped for JSD and variance");
        }
        alignments.insert(id, alignment);
    }
    ensure_dir(&args.out)?;

    let jsd = mean_series(&stats.values().map(|s| s.jsd.clone()).collect::<Vec<_>>());
    let variance = mean_series(&stats.values().map(|s| s.variance.clone()).collect::<Vec<_>>());
    let mut t = String::from("layer,jsd\n");
    for (l, v) in jsd.iter().enumerate() {
        writeln!(t, "{l},{v}")?;
    }
    write_text(&args.out.join("jsd.csv"), t)?;
    let mut t = String::from("layer,head,jsd\n");
    if let Some(first) = stats.values().next() {
        for l in 0..first.jsd_heads.len() {
            for h in 0..first.jsd_heads[l].len() {
                let mean = stats.values().map(|s| s.jsd_heads[l][h]).sum::<f64>() / stats.len() as f64;
                writeln!(t, "{l},{h},{mean}")?;
            }
        }
    }
    write_text(&args.out.join("jsd_heads.csv"), t)?;
    let mut t = String::from("layer,variance\n");
    for (l, v) in variance.iter().enumerate() {
        writeln!(t, "{l},{v}")?;
    }
    write_text(&args.out.join("hidden_variance.csv"), t)?;
    let mut t = String::from("instance_id,dumps,mean_jsd,final_hidden_variance\n");
    for (id, s) in &stats {
        let mean_jsd = s.jsd.iter().sum::<f64>() / s.jsd.len().max(1) as f64;
        writeln!(
            t,
            "{id},{},{mean_jsd},{}",
            s.dumps,
            s.variance.last().copied().unwrap_or(0.0)
        )?;
    }
    write_text(&args.out.join("instance_stats.csv"), t)?;

    let mut t = String::from("instance_id,plan,monotonicity\n");
    for d in groups.values().flatten().filter(|d| d.cross_attn.is_some()) {
        writeln!(t, "{},{},{}", d.instance_id, d.plan.join(" "), monotonicity_report(d)?)?;
    }
    write_text(&args.out.join("monotonicity.csv"), t)?;

    let all: Vec<AttentionDump> = groups.values().flatten().cloned().collect();
    match head_importance_rank(&all) {
        Ok(rank) => {
            let mut t = String::from("rank,layer,head,mean_abs_sensitivity\n");
            for r in rank {
                writeln!(t, "{},{},{},{}", r.rank, r.layer, r.head, r.mean_abs_sensitivity)?;
            }
            write_text(&args.out.join("head_importance.csv"), t)?;
        }
        Err(e) => log::info!("head importance skipped: {e}"),
    }

    if let Some(path) = &args.parses {
        probe(path, &groups, &alignments, &args.out)?;
    }
    if let Some(path) = &args.sweeps {
        correlate(path, args, &stats)?;
    }
    Ok(())
}

fn probe(
    path: &Path,
    groups: &BTreeMap<String, Vec<AttentionDump>>,
    alignments: &BTreeMap<&str, Alignment>,
    out: &Path,
) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut trees: BTreeMap<String, Vec<DepTree>> = BTreeMap::new();
    for t in parse_conllu(&text).with_context(|| format!("parses {}", path.display()))? {
        let id = t.instance_id.clone().unwrap_or_default();
        trees.entry(id).or_default().push(t);
    }
    let mut gold: BTreeMap<&str, Vec<GoldRelation>> = BTreeMap::new();
    for (id, dumps) in groups {
        let Some(parses) = trees.get(id) else { continue };
        let concepts = ConceptSet::new(&dumps[0].plan).with_context(|| format!("instance {id}"))?;
        let rels = extract_gold_relations(parses, &concepts);
        if !rels.is_empty() {
            gold.insert(id, rels);
        }
    }
    if gold.is_empty() {
        log::warn!("no gold relations with support >= 2; UAS skipped");
        return Ok(());
    }
    let items: Vec<(&[AttentionDump], &[GoldRelation], &Alignment)> = gold
        .iter()
        .map(|(id, rels)| (groups[*id].as_slice(), rels.as_slice(), &alignments[*id]))
        .collect();
    let report = probe_uas_many(&items)?;
    let mut t = String::from("layer,head,uas\n");
    for (l, row) in report.per_head.iter().enumerate() {
        for (h, v) in row.iter().enumerate() {
            writeln!(t, "{l},{h},{v}")?;
        }
    }
    write_text(&out.join("uas.csv"), t)?;
    let mut t = String::from("label,layer,head,uas,golds\n");
    for b in &report.best_by_label {
        writeln!(t, "{},{},{},{},{}", b.label, b.layer, b.head, b.uas, b.golds)?;
    }
    write_text(&out.join("uas_best.csv"), t)
}

/// Spearman correlation between final-layer hidden-state variance and the
/// mode-sentence fraction, per instance.
fn correlate(path: &Path, args: &AnalyzeArgs, stats: &BTreeMap<&str, InstanceStats>) -> Result<()> {
    let outcomes = load_sweeps(path, args.alpha, args.bins)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for o in outcomes {
        if let SweepOutcome::Scored(r) = o {
            if let Some(s) = stats.get(r.instance_id.as_str()) {
                xs.push(s.variance.last().copied().unwrap_or(0.0));
                ys.push(r.sentence_fraction);
            }
        }
    }
    let value = match spearman(&xs, &ys) {
        Ok(rho) => json!({"n": xs.len(), "rho": rho, "x": "final_hidden_variance", "y": "mode_sentence_fraction"}),
        Err(e) => {
            log::warn!("spearman undefined: {e}");
            json!({"n": xs.len(), "rho": null, "error": e.to_string()})
        }
    };
    write_json(&args.out.join("spearman.json"), &value)
}
