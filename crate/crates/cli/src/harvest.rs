use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use qaharvest::cache::ResponseCache;
use qaharvest::curate::{annotate_all, check_domain, drop_location_irrelevant, filter_by_reliability, AnnotationPrompts, DomainList};
use qaharvest::dataset::{location_slug, write_splits, SplitRatios};
use qaharvest::analytics::DistributionReport;
use qaharvest::engines::{
    ClientStats, MockBackend, RateLimit, RetryPolicy, SearchBackend, SearchClient, SearchRequest, SearchType,
    SerpApiBackend,
};
use qaharvest::harvest::{collect_images, resume_harvest, HarvestCounters, HarvestOptions, HarvestState};
use qaharvest::seedgen::{apply_denylist, build_seed_set};
use qaharvest::Reliability;
use serde::Serialize;
use tracing::{info, warn};

use crate::error::CliError;
use crate::seeds::{read_denylist, read_seed_file, read_template_file};
use crate::{llm_backend, AnnotateMode, HarvestArgs};

/// Counters written to `run_report.json`.
#[derive(Debug, Serialize)]
struct RunReport {
    engine: String,
    search_type: SearchType,
    location: String,
    country_code: String,
    language: String,
    n_iter: u32,
    seeds: usize,
    harvested: usize,
    domain_check: bool,
    reliability: BTreeMap<Reliability, usize>,
    kept_after_filter: usize,
    annotated: usize,
    annotation_failed: usize,
    dropped_irrelevant: usize,
    exported: usize,
    harvest: Option<HarvestCounters>,
    client: ClientStats,
    /// Share of engine lookups answered by the persistent cache.
    cache_hit_rate: Option<f64>,
}

struct Paths {
    out_dir: PathBuf,
    checkpoint: PathBuf,
    cache_dir: PathBuf,
}

fn backend(args: &HarvestArgs) -> Result<Arc<dyn SearchBackend>, CliError> {
    if args.engine == "mock" {
        let fixture = args
            .fixture
            .as_deref()
            .ok_or_else(|| CliError::config("--engine mock needs --fixture"))?;
        return Ok(Arc::new(MockBackend::from_path(fixture)?));
    }
    let env_path = args
        .env
        .as_deref()
        .ok_or_else(|| CliError::config(format!("--engine {} needs --env or NATIVQA_ENV", args.engine)))?;
    let env = qaharvest::dataset::load_env_file(env_path)?;
    Ok(Arc::new(SerpApiBackend::from_env(&args.engine, &env)?))
}

fn load_list(path: &Path, label: Reliability) -> Result<DomainList, CliError> {
    DomainList::load(path, label).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn run(args: HarvestArgs) -> Result<(), CliError> {
    if args.parallelism == 0 {
        return Err(CliError::config("--parallelism must be at least 1"));
    }
    let keep: HashSet<Reliability> = args.reliability_keep.iter().copied().collect();
    let paths = Paths {
        checkpoint: args.out_dir.join("checkpoint.jsonl"),
        cache_dir: args.cache_dir.clone().unwrap_or_else(|| args.out_dir.join("cache")),
        out_dir: args.out_dir.clone(),
    };
    let domain_list = args
        .domain_list
        .as_deref()
        .map(|p| load_list(p, Reliability::VeryReliable))
        .transpose()?;
    let ugc_list = args
        .ugc_list
        .as_deref()
        .map(|p| load_list(p, Reliability::PartiallyReliable))
        .transpose()?;
    let annotator = match args.annotate {
        AnnotateMode::Off => None,
        AnnotateMode::Llm => {
            let prompts = match &args.prompt_dir {
                Some(dir) => AnnotationPrompts::load_dir(dir)?,
                None => AnnotationPrompts::builtin(),
            };
            Some((llm_backend(args.llm_backend, args.env.as_deref())?, prompts))
        }
    };

    let mut raw = read_seed_file(&args.input_file, &args.location, &args.language)?;
    if let Some(t) = &args.templates {
        raw.extend(read_template_file(t, &args.location, &args.language)?);
    }
    let raw = apply_denylist(raw, &read_denylist(args.denylist.as_deref())?);
    let seeds = build_seed_set(raw, &args.location, &args.language)?;

    let backend = backend(&args)?;
    let template = SearchRequest::new(
        backend.id(),
        args.search_type,
        &seeds.queries[0].text,
        &args.location,
        &args.country_code,
        &args.language,
    )?;
    fs::create_dir_all(&paths.out_dir)?;
    let cache = ResponseCache::open(&paths.cache_dir)?.with_max_age(args.cache_max_age.map(Duration::from_secs));
    let client = SearchClient::new(backend)
        .with_cache(cache)
        .with_retry(RetryPolicy::default())
        .with_rate_limit(args.rate_limit.map(|per_second| RateLimit { per_second }));

    let mut report = RunReport {
        engine: args.engine.clone(),
        search_type: args.search_type,
        location: args.location.clone(),
        country_code: args.country_code.clone(),
        language: args.language.clone(),
        n_iter: args.n_iter,
        seeds: seeds.len(),
        harvested: 0,
        domain_check: domain_list.is_some(),
        reliability: BTreeMap::new(),
        kept_after_filter: 0,
        annotated: 0,
        annotation_failed: 0,
        dropped_irrelevant: 0,
        exported: 0,
        harvest: None,
        client: ClientStats::default(),
        cache_hit_rate: None,
    };

    if args.search_type == SearchType::Images {
        let images = collect_images(&seeds, &client, &template)?;
        let dir = paths.out_dir.join(&args.language).join(location_slug(&args.location));
        fs::create_dir_all(&dir)?;
        let mut w = BufWriter::new(File::create(dir.join("images.jsonl"))?);
        for image in &images {
            serde_json::to_writer(&mut w, image)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        report.harvested = images.len();
        report.exported = images.len();
        return finish_report(report, &client, &paths);
    }

    let options = HarvestOptions {
        n_iter: args.n_iter,
        full_pool: args.full_pool,
        parallelism: args.parallelism,
    };
    let state = if args.resume {
        if !paths.checkpoint.exists() {
            return Err(CliError::config(format!("--resume: no checkpoint at {}", paths.checkpoint.display())));
        }
        HarvestState::load_checkpoint(&paths.checkpoint)?
    } else {
        HarvestState::from_seeds(&seeds)
    };
    let state = resume_harvest(state, &client, &template, &options, Some(&paths.checkpoint)).map_err(|e| {
        eprintln!(
            "harvest stopped; completed rounds are saved in {} (rerun with --resume)",
            paths.checkpoint.display()
        );
        CliError::from(e)
    })?;
    if state.iteration() == 0 {
        state.write_checkpoint(&paths.checkpoint)?;
    }
    report.harvest = Some(state.counters());
    let mut records = state.into_qa_set();
    report.harvested = records.len();

    match &domain_list {
        Some(list) => {
            records = records
                .into_iter()
                .map(|r| check_domain(r, list, ugc_list.as_ref()))
                .collect();
            for r in &records {
                *report.reliability.entry(r.reliability).or_default() += 1;
            }
            records = filter_by_reliability(records, &keep);
        }
        None => warn!("no --domain_list given; skipping domain reliability checking and filtering"),
    }
    report.kept_after_filter = records.len();

    if let Some((backend, prompts)) = &annotator {
        records = annotate_all(records, backend.as_ref(), prompts, &args.location, args.parallelism, 3);
        report.annotated = records.iter().filter(|r| r.annotation.is_some()).count();
        report.annotation_failed = records.iter().filter(|r| r.annotation_failed).count();
        if args.drop_irrelevant {
            let before = records.len();
            records = drop_location_irrelevant(records);
            report.dropped_irrelevant = before - records.len();
        }
    }

    let (_, datasets) = write_splits(
        records,
        &paths.out_dir,
        SplitRatios::default(),
        args.seed,
        args.min_split_size,
    )?;
    let stats = DistributionReport::from_records(datasets.iter().flat_map(|d| d.iter()));
    stats.write_csv(File::create(paths.out_dir.join("stats.csv"))?)?;
    let table = stats.render_table();
    fs::write(paths.out_dir.join("stats.txt"), &table)?;
    print!("{table}");
    report.exported = stats.totals().total();
    finish_report(report, &client, &paths)
}

fn finish_report(mut report: RunReport, client: &SearchClient, paths: &Paths) -> Result<(), CliError> {
    report.client = client.stats();
    let lookups = report.client.cache_hits + report.client.fetched;
    report.cache_hit_rate = (lookups > 0).then(|| report.client.cache_hits as f64 / lookups as f64);
    info!(?report, "run complete");
    write_json(&paths.out_dir.join("run_report.json"), &report)?;
    eprintln!(
        "{} pairs exported to {}; backend fetches {}, cache hits {}",
        report.exported,
        paths.out_dir.display(),
        report.client.fetched,
        report.client.cache_hits
    );
    Ok(())
}
