//! System variants over a [`Generator`]: unordered, planned, and their
//! permutation-ranking counterparts, plus full permutation sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ConceptSet, GenerationRecord, Instance, Plan};
use crate::genclient::{
    length_normalized_score, score_sequence, GenError, Generator, GeneratorRequest, Mode, MAX_BATCH,
};
use crate::invariance::{InvarianceError, PermutationSweep};
use crate::plankit::{enumerate_plans, plan_from_draft, PlanError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Unordered,
    Planned,
    UnorderedRank,
    PlannedRank,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Unordered => "unordered",
            Variant::Planned => "planned",
            Variant::UnorderedRank => "unordered_rank",
            Variant::PlannedRank => "planned_rank",
        }
    }

    pub fn is_rank(self) -> bool {
        matches!(self, Variant::UnorderedRank | Variant::PlannedRank)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_lowercase().as_str() {
            "unordered" => Ok(Variant::Unordered),
            "planned" => Ok(Variant::Planned),
            "unordered_rank" => Ok(Variant::UnorderedRank),
            "planned_rank" => Ok(Variant::PlannedRank),
            other => Err(format!("unknown variant {other:?}")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("instance {instance}: {source}")]
    Generator { instance: String, source: GenError },
    #[error("instance {instance}: aborted after {completed} of {total} permutations: {source}")]
    Partial {
        instance: String,
        completed: usize,
        total: usize,
        source: GenError,
    },
    #[error("instance {instance}: top_k {top_k} exceeds {permutations} permutations")]
    TopKTooLarge {
        instance: String,
        top_k: usize,
        permutations: usize,
    },
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("instance {instance}: {source}")]
    Plan { instance: String, source: PlanError },
    #[error("instance {instance}: {source}")]
    Sweep { instance: String, source: InvarianceError },
}

impl PipelineError {
    pub fn is_generator(&self) -> bool {
        matches!(self, PipelineError::Generator { .. } | PipelineError::Partial { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub variant: Variant,
    pub top_k: usize,
    /// Rank by mean instead of summed token log-probability.
    pub length_normalize: bool,
    /// Shuffle the stage-one linearization with this seed instead of using
    /// canonical order.
    pub shuffle_seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            variant: Variant::Planned,
            top_k: 1,
            length_normalize: false,
            shuffle_seed: None,
        }
    }
}

/// One cached generation, keyed by instance, mode and concept order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub instance_id: String,
    pub mode: Mode,
    pub plan: Vec<String>,
    pub text: String,
    pub token_logprobs: Vec<f64>,
}

type CacheKey = (String, Mode, Vec<String>);

/// Thread-safe memo of generations, persisted as JSON lines for resumable runs.
#[derive(Debug, Default)]
pub struct GenerationCache {
    entries: Mutex<BTreeMap<CacheKey, (String, Vec<f64>)>>,
}

impl GenerationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &CacheKey) -> Option<(String, Vec<f64>)> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    fn put(&self, key: CacheKey, value: (String, Vec<f64>)) {
        self.entries.lock().unwrap().insert(key, value);
    }

    pub fn load<R: BufRead>(reader: R) -> Result<Self, serde_json::Error> {
        let cache = GenerationCache::new();
        for line in reader.lines() {
            let line = line.map_err(serde_json::Error::io)?;
            if line.trim().is_empty() {
                continue;
            }
            let e: CacheEntry = serde_json::from_str(&line)?;
            cache.put((e.instance_id, e.mode, e.plan), (e.text, e.token_logprobs));
        }
        Ok(cache)
    }

    /// Writes entries in key order.
    pub fn save<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let entries = self.entries.lock().unwrap();
        for ((instance_id, mode, plan), (text, token_logprobs)) in entries.iter() {
            let e = CacheEntry {
                instance_id: instance_id.clone(),
                mode: *mode,
                plan: plan.clone(),
                text: text.clone(),
                token_logprobs: token_logprobs.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&e).map_err(std::io::Error::other)?)?;
        }
        Ok(())
    }
}

/// Stable 64-bit FNV-1a, used to derive per-instance shuffle seeds.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Shuffles the canonical order with a seed mixed with `key`, so each key
/// gets its own reproducible order independent of processing order.
pub fn seeded_linearization(concepts: &ConceptSet, seed: u64, key: &str) -> Plan {
    let mut order = concepts.canonical_plan().as_slice().to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ fnv1a(key));
    order.shuffle(&mut rng);
    Plan::new(&order, concepts).expect("shuffle preserves the set")
}

/// Executes variants against one generator.
pub struct Pipeline<'a, G: Generator + ?Sized> {
    generator: &'a G,
    config: PipelineConfig,
    cache: Option<&'a GenerationCache>,
}

impl<'a, G: Generator + ?Sized> Pipeline<'a, G> {
    pub fn new(generator: &'a G, config: PipelineConfig) -> Self {
        Pipeline {
            generator,
            config,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: &'a GenerationCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn request(&self, instance: &str, mode: Mode, order: &[String]) -> Result<(String, Vec<f64>), GenError> {
        let key = (instance.to_string(), mode, order.to_vec());
        if let Some(hit) = self.cache.and_then(|c| c.get(&key)) {
            return Ok(hit);
        }
        let resp = self.generator.generate(&GeneratorRequest::new(order.to_vec(), mode))?;
        let value = (resp.text, resp.token_logprobs);
        if let Some(c) = self.cache {
            c.put(key, value.clone());
        }
        Ok(value)
    }

    fn score(&self, lps: &[f64]) -> Result<f64, GenError> {
        if self.config.length_normalize {
            length_normalized_score(lps)
        } else {
            score_sequence(lps)
        }
    }

    fn record(&self, instance: &Instance, plan: Plan, mode: Mode) -> Result<GenerationRecord, GenError> {
        let (text, token_logprobs) = self.request(&instance.id, mode, plan.as_slice())?;
        let score = self.score(&token_logprobs)?;
        Ok(GenerationRecord {
            instance_id: instance.id.clone(),
            plan,
            text,
            token_logprobs,
            score,
        })
    }

    /// Stage-one input: canonical order, or a seeded shuffle of it.
    pub fn linearize(&self, instance: &Instance) -> Plan {
        match self.config.shuffle_seed {
            None => instance.concept_set.canonical_plan(),
            Some(seed) => seeded_linearization(&instance.concept_set, seed, &instance.id),
        }
    }

    fn tag(instance: &Instance) -> impl Fn(GenError) -> PipelineError + '_ {
        move |source| PipelineError::Generator {
            instance: instance.id.clone(),
            source,
        }
    }

    /// One draft-mode generation on the stage-one linearization.
    pub fn run_unordered(&self, instance: &Instance) -> Result<GenerationRecord, PipelineError> {
        self.record(instance, self.linearize(instance), Mode::Draft)
            .map_err(Self::tag(instance))
    }

    /// Draft, take its skeleton as the plan, then generate in planned mode.
    pub fn run_planned(&self, instance: &Instance) -> Result<GenerationRecord, PipelineError> {
        let draft_order = self.linearize(instance);
        let (draft, _) = self
            .request(&instance.id, Mode::Draft, draft_order.as_slice())
            .map_err(Self::tag(instance))?;
        let plan = plan_from_draft(&draft, &instance.concept_set);
        log::debug!("instance {}: draft {:?} -> plan {}", instance.id, draft, plan);
        self.record(instance, plan, Mode::Planned).map_err(Self::tag(instance))
    }

    fn permutations(&self, instance: &Instance) -> Result<Vec<Plan>, PipelineError> {
        enumerate_plans(&instance.concept_set).map_err(|source| PipelineError::Plan {
            instance: instance.id.clone(),
            source,
        })
    }

    /// Generates for every plan in batches, in parallel; fails on the first
    /// error with the count of plans that did complete.
    fn generate_all(
        &self,
        instance: &Instance,
        plans: Vec<Plan>,
        mode: Mode,
    ) -> Result<Vec<GenerationRecord>, PipelineError> {
        let total = plans.len();
        let results: Vec<Result<GenerationRecord, GenError>> = plans
            .par_chunks(MAX_BATCH)
            .flat_map_iter(|chunk| {
                chunk
                    .iter()
                    .map(|p| self.record(instance, p.clone(), mode))
                    .collect::<Vec<_>>()
            })
            .collect();
        let completed = results.iter().filter(|r| r.is_ok()).count();
        results
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| PipelineError::Partial {
                instance: instance.id.clone(),
                completed,
                total,
                source,
            })
    }

    /// Generates for all m! plans and returns the `top_k` best, highest score
    /// first, ties broken by the lexicographically smaller plan.
    pub fn run_rank(
        &self,
        instance: &Instance,
        mode: Mode,
        top_k: usize,
    ) -> Result<Vec<GenerationRecord>, PipelineError> {
        if top_k == 0 {
            return Err(PipelineError::ZeroTopK);
        }
        let plans = self.permutations(instance)?;
        if top_k > plans.len() {
            return Err(PipelineError::TopKTooLarge {
                instance: instance.id.clone(),
                top_k,
                permutations: plans.len(),
            });
        }
        let mut records = self.generate_all(instance, plans, mode)?;
        records.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.plan.cmp(&b.plan)));
        records.truncate(top_k);
        Ok(records)
    }

    /// Outputs for every permutation of the instance's concepts.
    pub fn run_sweep(&self, instance: &Instance, mode: Mode) -> Result<PermutationSweep, PipelineError> {
        let plans = self.permutations(instance)?;
        let records = self.generate_all(instance, plans, mode)?;
        let outputs = records.into_iter().map(|r| (r.plan, r.text)).collect();
        PermutationSweep::new(&instance.id, instance.concept_set.clone(), outputs).map_err(|source| {
            PipelineError::Sweep {
                instance: instance.id.clone(),
                source,
            }
        })
    }

    /// Records for one instance under the configured variant. Rank variants
    /// return up to `top_k` records, the first being the system output.
    pub fn run_instance(&self, instance: &Instance) -> Result<Vec<GenerationRecord>, PipelineError> {
        match self.config.variant {
            Variant::Unordered => self.run_unordered(instance).map(|r| vec![r]),
            Variant::Planned => self.run_planned(instance).map(|r| vec![r]),
            Variant::UnorderedRank => self.run_rank(instance, Mode::Draft, self.config.top_k),
            Variant::PlannedRank => self.run_rank(instance, Mode::Planned, self.config.top_k),
        }
    }

    /// Runs every instance on the current rayon pool. Results keep corpus order.
    pub fn run_corpus(&self, instances: &[Instance]) -> Vec<Result<Vec<GenerationRecord>, PipelineError>> {
        instances.par_iter().map(|i| self.run_instance(i)).collect()
    }

    pub fn sweep_corpus(&self, instances: &[Instance], mode: Mode) -> Vec<Result<PermutationSweep, PipelineError>> {
        instances.par_iter().map(|i| self.run_sweep(i, mode)).collect()
    }
}
