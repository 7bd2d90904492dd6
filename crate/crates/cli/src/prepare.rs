//! `prepare`: oracle-plan and draft training pairs, optional gold relations.

use std::collections::BTreeMap;
use std::fs;

use anyhow::{bail, Context, Result};
use conceptplan::attnlab::{extract_gold_relations, parse_conllu, DepTree};
use conceptplan::corpus::CorpusMode;
use conceptplan::pipeline::seeded_linearization;
use conceptplan::plankit::oracle_pairs;
use conceptplan::Plan;
use serde::Serialize;

use crate::files::{ensure_dir, load_corpus, write_jsonl};
use crate::PrepareArgs;

#[derive(Serialize)]
struct DraftPair<'a> {
    id: &'a str,
    plan: Plan,
    target: &'a str,
}

#[derive(Serialize)]
struct GoldLine<'a> {
    instance_id: &'a str,
    head: &'a str,
    dependent: &'a str,
    label: &'a str,
    support: usize,
}

pub fn run(args: &PrepareArgs) -> Result<()> {
    let instances = load_corpus(&args.corpus, CorpusMode::Training)?;
    ensure_dir(&args.out)?;

    let pairs: Vec<_> = instances.iter().flat_map(oracle_pairs).collect();
    let warned = pairs.iter().filter(|p| p.has_warning()).count();
    write_jsonl(&args.out.join("oracle_pairs.jsonl"), &pairs)?;

    let drafts: Vec<DraftPair> = instances
        .iter()
        .flat_map(|inst| {
            inst.references.iter().enumerate().map(move |(i, r)| DraftPair {
                id: &inst.id,
                plan: seeded_linearization(&inst.concept_set, args.seed, &format!("{}#{i}", inst.id)),
                target: r,
            })
        })
        .collect();
    write_jsonl(&args.out.join("draft_pairs.jsonl"), &drafts)?;
    log::info!("{} oracle pairs ({} with appended concepts)", pairs.len(), warned);

    if let Some(path) = &args.parses {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let trees = parse_conllu(&text).with_context(|| format!("parses {}", path.display()))?;
        let mut by_id: BTreeMap<String, Vec<DepTree>> = BTreeMap::new();
        for t in trees {
            let Some(id) = t.instance_id.clone() else {
                bail!("{}: parse block without `# instance_id = ...`", path.display());
            };
            by_id.entry(id).or_default().push(t);
        }
        let mut relations = Vec::new();
        for inst in &instances {
            if let Some(trees) = by_id.get(&inst.id) {
                relations.push((inst.id.as_str(), extract_gold_relations(trees, &inst.concept_set)));
            }
        }
        if let Some(unknown) = by_id.keys().find(|id| !instances.iter().any(|i| &i.id == *id)) {
            bail!("{}: parses for unknown instance {unknown:?}", path.display());
        }
        let lines: Vec<GoldLine> = relations
            .iter()
            .flat_map(|(id, rels)| {
                rels.iter().map(move |g| GoldLine {
                    instance_id: id,
                    head: &g.head,
                    dependent: &g.dependent,
                    label: &g.label,
                    support: g.support,
                })
            })
            .collect();
        log::info!("{} gold relations", lines.len());
        write_jsonl(&args.out.join("gold_relations.jsonl"), &lines)?;
    }
    Ok(())
}
