//! `run` and `sweep`: generation over a corpus with a resumable cache.

use std::fs;
use std::io::BufReader;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use conceptplan::corpus::CorpusMode;
use conceptplan::genclient::{Generator, MockGenerator, MockScript, Mode, RemoteGenerator, Throttled};
use conceptplan::pipeline::{GenerationCache, Pipeline, PipelineConfig, PipelineError, Variant};
use conceptplan::Instance;
use serde::Serialize;

use crate::files::{digest_file, ensure_dir, jsonl_bytes, load_corpus, write_atomic, write_json, write_jsonl};
use crate::{GeneratorArgs, ModeArg, PartialRun, RunArgs, SweepArgs, UsageError, VariantArg};

pub const PARTIAL_MARKER: &str = "PARTIAL";

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Unordered => Variant::Unordered,
            VariantArg::Planned => Variant::Planned,
            VariantArg::UnorderedRank => Variant::UnorderedRank,
            VariantArg::PlannedRank => Variant::PlannedRank,
        }
    }
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Draft => Mode::Draft,
            ModeArg::Planned => Mode::Planned,
        }
    }
}

/// The configured generator, capped at `max_inflight` concurrent requests.
pub fn build_generator(args: &GeneratorArgs) -> Result<Throttled<Box<dyn Generator>>> {
    if args.max_inflight == 0 {
        return Err(UsageError("--max-inflight must be at least 1".into()).into());
    }
    let inner: Box<dyn Generator> = match (&args.endpoint, &args.mock_script) {
        (Some(url), None) => Box::new(RemoteGenerator::new(
            url,
            args.retries,
            Duration::from_secs(args.timeout_secs),
        )?),
        (None, Some(path)) => {
            let script = MockScript::load(path).with_context(|| format!("mock script {}", path.display()))?;
            Box::new(MockGenerator::new(script))
        }
        _ => return Err(UsageError("exactly one of --endpoint and --mock-script is required".into()).into()),
    };
    Ok(Throttled::new(inner, args.max_inflight))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("starting worker pool")
}

fn open_cache(out: &Path, resume: bool) -> Result<GenerationCache> {
    let path = out.join("cache.jsonl");
    if resume && path.exists() {
        let file = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let cache = GenerationCache::load(BufReader::new(file)).with_context(|| format!("cache {}", path.display()))?;
        log::info!("resuming with {} cached generations", cache.len());
        Ok(cache)
    } else {
        Ok(GenerationCache::new())
    }
}

fn save_cache(out: &Path, cache: &GenerationCache) -> Result<()> {
    let mut buf = Vec::new();
    cache.save(&mut buf)?;
    write_atomic(&out.join("cache.jsonl"), &buf)
}

#[derive(Serialize)]
struct Failure {
    instance_id: String,
    error: String,
}

/// Writes or clears the partial-run marker and turns failures into the
/// matching error.
fn settle(out: &Path, instances: &[Instance], failures: Vec<(usize, PipelineError)>) -> Result<()> {
    let marker = out.join(PARTIAL_MARKER);
    if failures.is_empty() {
        if marker.exists() {
            fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?;
        }
        return Ok(());
    }
    let lines: Vec<Failure> = failures
        .iter()
        .map(|(i, e)| Failure {
            instance_id: instances[*i].id.clone(),
            error: e.to_string(),
        })
        .collect();
    write_atomic(&marker, &jsonl_bytes(&lines)?)?;
    for f in &lines {
        log::error!("{}", f.error);
    }
    let total = instances.len();
    let failed = failures.len();
    if failed == total {
        let (_, first) = failures.into_iter().next().expect("non-empty");
        return Err(anyhow::Error::new(first).context(PartialRun { failed, total }.to_string()));
    }
    Err(PartialRun { failed, total }.into())
}

#[derive(Serialize)]
struct RunMeta<'a> {
    variant: Variant,
    model_tag: String,
    top_k: usize,
    corpus_digest: String,
    mock_script_digest: Option<String>,
    config: &'a RunArgs,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let variant = Variant::from(args.variant);
    if args.top_k == 0 {
        return Err(UsageError("--top-k must be at least 1".into()).into());
    }
    if args.top_k > 1 && !variant.is_rank() {
        return Err(UsageError(format!("--top-k {} needs a rank variant", args.top_k)).into());
    }
    let instances = load_corpus(&args.corpus, CorpusMode::Inference)?;
    if variant.is_rank() {
        if let Some(small) = instances
            .iter()
            .find(|i| (1..=i.concept_set.len()).product::<usize>() < args.top_k)
        {
            return Err(UsageError(format!(
                "--top-k {} exceeds the permutations of instance {}",
                args.top_k, small.id
            ))
            .into());
        }
    }
    let generator = build_generator(&args.generator)?;
    let model_tag = generator.model_tag().context("querying model tag")?;
    ensure_dir(&args.out)?;
    let cache = open_cache(&args.out, args.resume)?;

    let config = PipelineConfig {
        variant,
        top_k: args.top_k,
        length_normalize: args.length_normalize,
        shuffle_seed: args.seed,
    };
    let pipeline = Pipeline::new(&generator, config).with_cache(&cache);
    let results = thread_pool(args.workers)?.install(|| pipeline.run_corpus(&instances));

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(recs) => records.extend(recs),
            Err(e) => failures.push((i, e)),
        }
    }
    let meta = RunMeta {
        variant,
        model_tag,
        top_k: args.top_k,
        corpus_digest: digest_file(&args.corpus)?,
        mock_script_digest: args.generator.mock_script.as_deref().map(digest_file).transpose()?,
        config: args,
    };
    write_jsonl(&args.out.join("records.jsonl"), &records)?;
    save_cache(&args.out, &cache)?;
    write_json(&args.out.join("run_meta.json"), &meta)?;
    log::info!(
        "{} records for {} instances",
        records.len(),
        instances.len() - failures.len()
    );
    settle(&args.out, &instances, failures)
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    mode: Mode,
    model_tag: String,
    corpus_digest: String,
    mock_script_digest: Option<String>,
    config: &'a SweepArgs,
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let instances = load_corpus(&args.corpus, CorpusMode::Inference)?;
    let generator = build_generator(&args.generator)?;
    let model_tag = generator.model_tag().context("querying model tag")?;
    ensure_dir(&args.out)?;
    let cache = open_cache(&args.out, args.resume)?;
    let pipeline = Pipeline::new(&generator, PipelineConfig::default()).with_cache(&cache);
    let mode = Mode::from(args.mode);
    let results = thread_pool(args.workers)?.install(|| pipeline.sweep_corpus(&instances, mode));

    let mut sweeps = Vec::new();
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => sweeps.push(s),
            Err(e) => failures.push((i, e)),
        }
    }
    let meta = SweepMeta {
        mode,
        model_tag,
        corpus_digest: digest_file(&args.corpus)?,
        mock_script_digest: args.generator.mock_script.as_deref().map(digest_file).transpose()?,
        config: args,
    };
    write_jsonl(&args.out.join("sweeps.jsonl"), &sweeps)?;
    save_cache(&args.out, &cache)?;
    write_json(&args.out.join("run_meta.json"), &meta)?;
    settle(&args.out, &instances, failures)
}
