//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use qaharvest::analytics::{cohen_kappa, gwet_ac1, observed_agreement, rwg_star, uniform_null_variance};
use qaharvest::cache::ResponseCache;
use qaharvest::curate::{check_domain, filter_by_reliability, DomainList};
use qaharvest::dataset::{export_jsonl, import_jsonl_file, split_dataset, Split, SplitRatios, MIN_SPLIT_SIZE};
use qaharvest::engines::{MockBackend, SearchClient, SearchRequest, SearchType};
use qaharvest::harvest::{run_harvest, HarvestOptions};
use qaharvest::seedgen::build_seed_set;
use qaharvest::{canonicalize, trigram_jaccard, QaRecord, Reliability, SeedOrigin, SeedQuery, DUPLICATE_THRESHOLD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn seed(id: &str, text: &str) -> SeedQuery {
    SeedQuery {
        id: id.into(),
        text: text.into(),
        topic: "General".into(),
        location: "Doha, Qatar".into(),
        language: "en".into(),
        origin: SeedOrigin::Manual,
    }
}

fn template() -> SearchRequest {
    SearchRequest::new("mock", SearchType::Text, "seed", "Doha, Qatar", "qa", "en").unwrap()
}

fn is_dup(a: &str, b: &str) -> bool {
    let (ka, kb) = (canonicalize(a), canonicalize(b));
    ka == kb || trigram_jaccard(ka.as_str(), kb.as_str()) >= DUPLICATE_THRESHOLD
}

// ---------------------------------------------------------------- 1

const WORDS: [&str; 16] = [
    "souq", "museum", "corniche", "desert", "pearl", "falcon", "dhow", "mosque", "market", "beach", "island",
    "tower", "garden", "harbor", "fort", "stadium",
];

struct Graph {
    fixture: Value,
    seeds: Vec<String>,
    n_iter: u32,
}

fn random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.gen_range(5..=50);
    let texts: Vec<String> = (0..n)
        .map(|i| format!("q{i} {} {}", WORDS.choose(rng).unwrap(), WORDS.choose(rng).unwrap()))
        .collect();
    let bank: Vec<String> = (0..30)
        .map(|j| {
            format!(
                "what is the best {} near the {} number {j} in town",
                WORDS.choose(rng).unwrap(),
                WORDS.choose(rng).unwrap()
            )
        })
        .collect();
    let mut fixture = serde_json::Map::new();
    for (i, text) in texts.iter().enumerate() {
        if rng.gen_bool(0.1) {
            continue;
        }
        let qa: Vec<Value> = (0..rng.gen_range(0..=4))
            .map(|k| {
                let base = bank.choose(rng).unwrap();
                let question = match rng.gen_range(0..3) {
                    0 => base.clone(),
                    1 => format!("{}?", base.to_uppercase()),
                    _ => format!("{base}s"),
                };
                let answer = if rng.gen_bool(0.1) {
                    Value::Null
                } else {
                    json!(format!("answer {i}-{k}"))
                };
                json!({"question": question, "answer": answer, "source_url": format!("https://site{}.com/{i}/{k}", rng.gen_range(0..5))})
            })
            .collect();
        let related: Vec<String> = (0..rng.gen_range(0..=5))
            .map(|r| match rng.gen_range(0..10) {
                0 => format!("unknown {i} {r}"),
                1 => texts.choose(rng).unwrap().to_uppercase(),
                _ => texts.choose(rng).unwrap().clone(),
            })
            .collect();
        fixture.insert(text.clone(), json!({"qa_items": qa, "related_queries": related}));
    }
    let seeds = (0..rng.gen_range(1..=3)).map(|_| texts.choose(rng).unwrap().clone()).collect();
    Graph {
        fixture: Value::Object(fixture),
        seeds,
        n_iter: rng.gen_range(0..=4),
    }
}

type QaKey = (String, String, String, String, u32);

/// Breadth-first expansion straight over the fixture JSON: level k holds the
/// queries first discovered while fetching level k-1.
fn bfs_oracle(fixture: &Value, seeds: &[String], n_iter: u32) -> (BTreeSet<(String, u32)>, BTreeSet<QaKey>) {
    let mut seen_queries: HashSet<String> = HashSet::new();
    let mut level: Vec<String> = Vec::new();
    for s in seeds {
        if seen_queries.insert(canonicalize(s).into_string()) {
            level.push(s.clone());
        }
    }
    let mut pool: BTreeSet<(String, u32)> = level.iter().map(|q| (q.clone(), 0)).collect();
    let mut kept_questions: Vec<String> = Vec::new();
    let mut qa = BTreeSet::new();
    for k in 1..=n_iter {
        let mut next = Vec::new();
        for q in &level {
            let entry = fixture.get(q).cloned().unwrap_or(json!({}));
            for item in entry["qa_items"].as_array().into_iter().flatten() {
                let Some(answer) = item["answer"].as_str() else { continue };
                let question = item["question"].as_str().unwrap();
                if kept_questions.iter().any(|kq| is_dup(kq, question)) {
                    continue;
                }
                kept_questions.push(question.to_string());
                qa.insert((
                    question.to_string(),
                    answer.to_string(),
                    item["source_url"].as_str().unwrap().to_string(),
                    q.clone(),
                    k,
                ));
            }
            for r in entry["related_queries"].as_array().into_iter().flatten() {
                let r = r.as_str().unwrap();
                if seen_queries.insert(canonicalize(r).into_string()) {
                    next.push(r.to_string());
                }
            }
        }
        pool.extend(next.iter().map(|q| (q.clone(), k)));
        level = next;
    }
    (pool, qa)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let graphs = 40;
    let mut pairs = 0;
    for g in 0..graphs {
        let graph = random_graph(&mut rng);
        let raw: Vec<SeedQuery> = graph.seeds.iter().enumerate().map(|(i, s)| seed(&format!("s{i}"), s)).collect();
        let seeds = build_seed_set(raw, "Doha, Qatar", "en").map_err(|e| e.to_string())?;
        let seed_texts: Vec<String> = seeds.queries.iter().map(|s| s.text.clone()).collect();
        let (pool_oracle, qa_oracle) = bfs_oracle(&graph.fixture, &seed_texts, graph.n_iter);
        for full_pool in [false, true] {
            let backend = MockBackend::from_value(graph.fixture.clone()).map_err(|e| e.to_string())?;
            let client = SearchClient::new(Arc::new(backend));
            let options = HarvestOptions {
                n_iter: graph.n_iter,
                full_pool,
                parallelism: 1 + g % 4,
            };
            let state = run_harvest(&seeds, &client, &template(), &options, None).map_err(|e| e.to_string())?;
            let pool: BTreeSet<(String, u32)> =
                state.query_pool().iter().map(|p| (p.text.clone(), p.added_in)).collect();
            let qa: BTreeSet<QaKey> = state
                .qa_set()
                .iter()
                .map(|r| (r.question.clone(), r.answer.clone(), r.source_url.clone(), r.query_text.clone(), r.iteration))
                .collect();
            ensure(pool == pool_oracle, || format!("graph {g} (full_pool={full_pool}): query pool differs from oracle"))?;
            ensure(qa == qa_oracle, || format!("graph {g} (full_pool={full_pool}): qa set differs from oracle"))?;
            ensure(state.qa_set().len() == qa.len(), || format!("graph {g}: duplicate records"))?;
        }
        pairs += qa_oracle.len();
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{graphs} graphs x 2 modes, {pairs} pairs, exact set equality in {elapsed:.2?}"))
}

// ---------------------------------------------------------------- 2

fn greedy_oracle(texts: &[String]) -> Vec<String> {
    let mut kept: Vec<String> = Vec::new();
    for t in texts {
        if canonicalize(t).is_empty() || kept.iter().any(|k| is_dup(k, t)) {
            continue;
        }
        kept.push(t.clone());
    }
    kept
}

fn criterion_2() -> Outcome {
    let base = proptest::collection::vec("[a-z]{3,8}( [a-z]{3,8}){2,5}", 1..15);
    let injections = proptest::collection::vec((any::<prop::sample::Index>(), 0u8..4, any::<prop::sample::Index>()), 0..20);
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let result = runner.run(&(base, injections), |(bases, injections)| {
        let mut texts = bases.clone();
        for (src, kind, pos) in &injections {
            let original = src.get(&bases).clone();
            let variant = match kind {
                0 => original,
                1 => format!("  {}!!", original.to_uppercase()),
                2 => format!("{original}s"),
                _ => original.replacen(' ', "  ,", 1),
            };
            let at = pos.index(texts.len() + 1);
            texts.insert(at, variant);
        }
        let raw: Vec<SeedQuery> = texts.iter().enumerate().map(|(i, t)| seed(&format!("id{}", i % 5), t)).collect();
        let set = build_seed_set(raw, "Doha, Qatar", "en").map_err(|e| TestCaseError::fail(e.to_string()))?;
        let out: Vec<String> = set.queries.iter().map(|s| s.text.clone()).collect();
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                prop_assert!(!is_dup(a, b), "{:?} and {:?} both kept", a, b);
            }
        }
        prop_assert_eq!(&out, &greedy_oracle(&texts));
        let again = build_seed_set(set.queries.clone(), "Doha, Qatar", "en").map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&again.queries, &set.queries);
        let ids: HashSet<&str> = set.queries.iter().map(|s| s.id.as_str()).collect();
        prop_assert_eq!(ids.len(), set.queries.len());
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    Ok("1000 generated seed lists: no duplicate pairs, idempotent, order-stable, equal to greedy oracle".into())
}

// ---------------------------------------------------------------- 3

fn harvest_to_file(fixture: &Value, cache_dir: &Path, out: &Path) -> Result<usize, String> {
    let backend = Arc::new(MockBackend::from_value(fixture.clone()).map_err(|e| e.to_string())?);
    let client = SearchClient::new(backend.clone())
        .with_cache(ResponseCache::open(cache_dir).map_err(|e| e.to_string())?);
    let seeds = build_seed_set(
        vec![seed("s1", "visit Baladna Farm in Qatar"), seed("s2", "traditional food in Doha")],
        "Doha, Qatar",
        "en",
    )
    .map_err(|e| e.to_string())?;
    let options = HarvestOptions {
        n_iter: 3,
        full_pool: false,
        parallelism: 4,
    };
    let state = run_harvest(&seeds, &client, &template(), &options, None).map_err(|e| e.to_string())?;
    export_jsonl(state.qa_set(), out).map_err(|e| e.to_string())?;
    Ok(backend.calls())
}

fn fixture_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
}

fn criterion_3() -> Outcome {
    let fixture: Value =
        serde_json::from_str(&fs::read_to_string(fixture_dir().join("mock_engine.json")).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let first_calls = harvest_to_file(&fixture, &cache, &dir.path().join("a.jsonl"))?;
    let second_calls = harvest_to_file(&fixture, &cache, &dir.path().join("b.jsonl"))?;
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b.jsonl")).unwrap();
    ensure(first_calls > 0, || "first run made no backend calls".into())?;
    ensure(second_calls == 0, || format!("second run made {second_calls} backend calls"))?;
    ensure(!a.is_empty() && a == b, || "JSONL outputs differ".into())?;
    Ok(format!("run 1: {first_calls} backend calls, run 2: 0; {} identical bytes", a.len()))
}

// ---------------------------------------------------------------- 4

fn synthetic(n: usize) -> Vec<QaRecord> {
    (0..n)
        .map(|i| QaRecord {
            question: format!("synthetic question {i}?"),
            answer: "answer".into(),
            source_url: "https://example.com".into(),
            engine: "mock".into(),
            seed_id: "s1".into(),
            query_text: "q".into(),
            iteration: 1,
            location: "Kathmandu, Nepal".into(),
            language: "ne".into(),
            topic: "General".into(),
            collected_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
            reliability: Reliability::VeryReliable,
            annotation: None,
            annotation_failed: false,
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let records = synthetic(100_000);
    let ids: BTreeSet<String> = records.iter().map(QaRecord::record_id).collect();
    let (data, assignment) = split_dataset(records.clone(), SplitRatios::default(), 17, MIN_SPLIT_SIZE);
    let n = records.len() as f64;
    let mut detail = Vec::new();
    for (split, target) in [(Split::Train, 0.7), (Split::Dev, 0.1), (Split::Test, 0.2)] {
        let share = data.get(split).len() as f64 / n;
        ensure((share - target).abs() <= 0.01, || format!("{split} share {share}"))?;
        detail.push(format!("{split} {share:.4}"));
    }
    let mut union = BTreeSet::new();
    for split in Split::ALL {
        for r in data.get(split) {
            ensure(union.insert(r.record_id()), || "record in two splits".into())?;
        }
    }
    ensure(union == ids, || "splits not exhaustive".into())?;
    let (again, _) = split_dataset(records, SplitRatios::default(), 17, MIN_SPLIT_SIZE);
    ensure(again == data, || "split not deterministic".into())?;
    ensure(assignment.assignments.len() == ids.len(), || "assignment incomplete".into())?;

    let (small, small_assignment) = split_dataset(synthetic(561), SplitRatios::default(), 17, MIN_SPLIT_SIZE);
    ensure(
        small.test.len() == 561 && small.train.is_empty() && small.dev.is_empty() && small_assignment.test_only,
        || "561 records not all in test".into(),
    )?;
    Ok(format!("100k: {}; 561 -> test only; disjoint, exhaustive, deterministic", detail.join(", ")))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    // [[20,5],[10,15]]: p_o = 0.7; kappa p_e = 0.5*0.6 + 0.5*0.4 = 0.5;
    // AC1 pi = (0.55, 0.45), p_e = 2*0.55*0.45 = 0.495.
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (x, y, count) in [(0, 0, 20), (0, 1, 5), (1, 0, 10), (1, 1, 15)] {
        a.extend(std::iter::repeat(x).take(count));
        b.extend(std::iter::repeat(y).take(count));
    }
    let po = observed_agreement(&a, &b).map_err(|e| e.to_string())?;
    let kappa = cohen_kappa(&a, &b).map_err(|e| e.to_string())?.value;
    let ac1 = gwet_ac1(&a, &b, 2).map_err(|e| e.to_string())?.value;
    ensure((po - 0.7).abs() < 1e-12, || format!("p_o {po}"))?;
    ensure((kappa - 0.4).abs() < 1e-12, || format!("kappa {kappa}"))?;
    ensure((ac1 - (0.7 - 0.495) / (1.0 - 0.495)).abs() < 1e-12, || format!("ac1 {ac1}"))?;
    ensure((ac1 - 41.0 / 101.0).abs() < 1e-12, || format!("ac1 {ac1}"))?;

    let same = ["answer_1", "llm_edited", "neither", "answer_1", "neither"];
    let perfect = [
        observed_agreement(&same, &same).unwrap(),
        cohen_kappa(&same, &same).unwrap().value,
        gwet_ac1(&same, &same, 3).unwrap().value,
        rwg_star(&[vec![4.0, 4.0, 4.0], vec![2.0, 2.0, 2.0]], 5).unwrap().value,
    ];
    ensure(perfect.iter().all(|v| *v == 1.0), || format!("perfect agreement gave {perfect:?}"))?;

    ensure(uniform_null_variance(5) == 2.0, || "sigma^2 for A=5 is not 2.0".into())?;
    let clamp = rwg_star(&[vec![1.0, 3.0, 5.0]], 5).map_err(|e| e.to_string())?;
    ensure(clamp.value == 0.0 && clamp.clamped && clamp.raw == -1.0, || format!("{clamp:?}"))?;
    Ok(format!("kappa {kappa:.12}, AC1 {ac1:.12} (41/101), perfect = 1.0, sigma^2 = 2.0, {{1,3,5}} clamped"))
}

// ---------------------------------------------------------------- 6

/// Public suffixes used by the generated hosts; every one is an ICANN entry.
/// Bare `np` is left out: it is a wildcard rule (`*.np`).
const SUFFIXES: [&str; 16] = [
    "com", "org", "net", "qa", "com.qa", "gov.qa", "edu.qa", "com.np", "gov.np", "co.uk", "ac.uk", "eg",
    "com.eg", "gov.eg", "in", "co.in",
];

fn oracle_registrable(host: &str) -> Option<String> {
    let suffix = SUFFIXES
        .iter()
        .filter(|s| host == **s || host.ends_with(&format!(".{s}")))
        .max_by_key(|s| s.len())?;
    if host == *suffix {
        return None;
    }
    let rest = &host[..host.len() - suffix.len() - 1];
    let label = rest.rsplit('.').next()?;
    Some(format!("{label}.{suffix}"))
}

fn oracle_host(url: &str) -> Option<String> {
    let rest = url.strip_prefix("https://").or_else(|| url.strip_prefix("http://"))?;
    let host = rest.split(['/', '?', '#']).next()?.to_ascii_lowercase();
    (!host.is_empty()).then_some(host)
}

fn oracle_listed(list: &HashSet<String>, host: &str) -> bool {
    list.contains(host) || oracle_registrable(host).is_some_and(|d| list.contains(&d))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let registrable: Vec<String> = (0..120)
        .map(|i| format!("site{i}.{}", SUFFIXES.choose(&mut rng).unwrap()))
        .collect();
    let mut allow: Vec<String> = registrable[..35].to_vec();
    allow.extend(registrable[60..75].iter().map(|d| format!("news.{d}")));
    let ugc: Vec<String> = vec![registrable[0].clone(), registrable[1].clone(), format!("news.{}", registrable[60])];
    let allow_set: HashSet<String> = allow.iter().cloned().collect();
    let ugc_set: HashSet<String> = ugc.iter().cloned().collect();
    let list = DomainList::new(allow.iter(), Reliability::VeryReliable, "allow");
    let ugc_list = DomainList::new(ugc.iter(), Reliability::PartiallyReliable, "ugc");
    ensure(list.len() == 50, || format!("allowlist has {} entries", list.len()))?;

    let mut records = synthetic(1000);
    for r in records.iter_mut() {
        r.source_url = if rng.gen_bool(0.05) {
            ["not a url", "site1.com/path", "mailto:someone@site2.com", "https://"]
                .choose(&mut rng)
                .unwrap()
                .to_string()
        } else {
            let domain = registrable.choose(&mut rng).unwrap();
            let sub = ["", "www.", "news.", "a.b.", "m."].choose(&mut rng).unwrap();
            let host = format!("{sub}{domain}");
            let host = if rng.gen_bool(0.1) { host.to_uppercase() } else { host };
            let scheme = if rng.gen_bool(0.8) { "https" } else { "http" };
            format!("{scheme}://{host}/page/{}", rng.gen_range(0..100))
        };
    }
    let mut counts: HashMap<Reliability, usize> = HashMap::new();
    let labelled: Vec<QaRecord> = records
        .iter()
        .cloned()
        .map(|r| check_domain(r, &list, Some(&ugc_list)))
        .collect();
    for r in &labelled {
        let expected = match oracle_host(&r.source_url) {
            None => Reliability::CompletelyUnreliable,
            Some(h) if oracle_listed(&allow_set, &h) => {
                if oracle_listed(&ugc_set, &h) {
                    Reliability::PartiallyReliable
                } else {
                    Reliability::VeryReliable
                }
            }
            Some(_) => Reliability::NotSure,
        };
        ensure(r.reliability == expected, || {
            format!("{}: got {} expected {}", r.source_url, r.reliability, expected)
        })?;
        *counts.entry(expected).or_default() += 1;
    }
    let everything: HashSet<Reliability> = Reliability::ALL.into_iter().collect();
    ensure(filter_by_reliability(labelled.clone(), &everything) == labelled, || "filter with all labels is not identity".into())?;
    let keep: HashSet<Reliability> = [Reliability::VeryReliable, Reliability::PartiallyReliable].into_iter().collect();
    let manual: Vec<QaRecord> = labelled.iter().filter(|r| keep.contains(&r.reliability)).cloned().collect();
    ensure(filter_by_reliability(labelled.clone(), &keep) == manual, || "filter differs from manual filter".into())?;
    let mut summary: Vec<String> = Reliability::ALL
        .iter()
        .filter_map(|l| counts.get(l).map(|c| format!("{l} {c}")))
        .collect();
    summary.sort();
    Ok(format!("1000 URLs vs 50 entries match oracle ({})", summary.join(", ")))
}

// ---------------------------------------------------------------- 7

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_qaharvest")
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let domains = ["visitqatar.com", "qatarday.com", "blog.example.net"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab: Vec<String> = (0..60).map(|i| format!("{}{i}", WORDS[i % WORDS.len()])).collect();
    let mut question = |prefix: &str| {
        let words: Vec<&String> = vocab.choose_multiple(&mut rng, 4).collect();
        format!("{prefix} {} {} {} {}?", words[0], words[1], words[2], words[3])
    };
    let mut seeds_csv = String::from("id,topic,query\n");
    let mut fixture = serde_json::Map::new();
    for i in 0..20 {
        let q = question("things to do near");
        seeds_csv.push_str(&format!("s{i},Travel,{q}\n"));
        let qa: Vec<Value> = (0..40)
            .map(|j| {
                json!({
                    "question": question("where is"),
                    "answer": format!("Landmark {} is near the Corniche.", i * 100 + j),
                    "source_url": format!("https://{}/p/{i}/{j}", domains[(i + j) % 3]),
                })
            })
            .collect();
        let related: Vec<String> = (0..3).map(|r| format!("related {i} {r}")).collect();
        for (r, rel) in related.iter().enumerate() {
            let rqa: Vec<Value> = (0..10)
                .map(|j| {
                    json!({
                        "question": question("is there"),
                        "answer": "Yes, from the afternoon.",
                        "source_url": format!("https://visitqatar.com/r/{i}/{r}/{j}"),
                    })
                })
                .collect();
            fixture.insert(rel.clone(), json!({"qa_items": rqa, "related_queries": [format!("deeper {i} {r}")]}));
        }
        fixture.insert(q, json!({"qa_items": qa, "related_queries": related}));
    }
    fs::write(d.join("seeds.csv"), seeds_csv).unwrap();
    fs::write(d.join("mock.json"), serde_json::to_string(&Value::Object(fixture)).unwrap()).unwrap();
    fs::write(d.join("domains.txt"), "visitqatar.com\nqatarday.com\n").unwrap();
    fs::write(d.join(".env"), "# no keys needed for the mock engine\n").unwrap();
    let out = d.join("out");
    let status = Command::new(bin())
        .args(["harvest", "--engine", "mock", "--search_type", "text", "--input_file"])
        .arg(d.join("seeds.csv"))
        .args(["--country_code", "qa", "--location", "Doha, Qatar", "--env"])
        .arg(d.join(".env"))
        .args(["--n_iter", "2", "--fixture"])
        .arg(d.join("mock.json"))
        .arg("--domain_list")
        .arg(d.join("domains.txt"))
        .arg("--out_dir")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
    })?;

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut total = 0;
    let mut per_split = Vec::new();
    for region in manifest["regions"].as_array().unwrap() {
        for (split, file) in region["files"].as_object().unwrap() {
            let imported = import_jsonl_file(&out.join(file["path"].as_str().unwrap())).map_err(|e| e.to_string())?;
            ensure(imported.rejected.is_empty(), || format!("{split}: {} rejects", imported.rejected.len()))?;
            ensure(imported.records.len() as u64 == file["count"].as_u64().unwrap(), || format!("{split} count"))?;
            total += imported.records.len();
            per_split.push(format!("{split} {}", imported.records.len()));
        }
    }
    ensure(total == manifest["total"].as_u64().unwrap() as usize, || "manifest total".into())?;
    ensure(per_split.iter().all(|s| !s.ends_with(" 0")), || format!("empty split: {per_split:?}"))?;

    let stats = fs::read_to_string(out.join("stats.csv")).map_err(|e| e.to_string())?;
    let mut reader = csv::Reader::from_reader(stats.as_bytes());
    let rows: Vec<Vec<usize>> = reader
        .records()
        .map(|r| r.unwrap().iter().skip(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    ensure(rows.len() >= 2, || "stats table has no rows".into())?;
    for row in &rows {
        ensure(row[0] + row[1] + row[2] == row[3], || format!("row total mismatch {row:?}"))?;
    }
    let (body, totals) = rows.split_at(rows.len() - 1);
    for c in 0..4 {
        ensure(body.iter().map(|r| r[c]).sum::<usize>() == totals[0][c], || "totals row mismatch".into())?;
    }
    ensure(totals[0][3] == total, || "stats total differs from exported records".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("exit 0, {total} records ({}), 0 rejects, stats rows add up, {elapsed:.2?}", per_split.join(", ")))
}

// ---------------------------------------------------------------- 8

/// Three raters, three items. Per metric (rows = items, columns = raters):
///   clarity         (5,5,5) (4,5,5) (5,5,5)  mean 44/9  variances 0, 1/3, 0 -> 1 - (1/9)/2 = 17/18
///   faithfulness    (3,4,5) (4,4,4) (5,4,3)  mean 4     variances 1, 0, 1   -> 1 - (2/3)/2 = 2/3
///   informativeness (1,3,5) x3               mean 3     variances 4, 4, 4   -> 1 - 4/2 = -1 -> 0
///   plausibility    all 5                    mean 5     variances 0         -> 1
const LIKERT: [[[u8; 3]; 3]; 4] = [
    [[5, 5, 5], [4, 5, 5], [5, 5, 5]],
    [[3, 4, 5], [4, 4, 4], [5, 4, 3]],
    [[1, 3, 5], [1, 3, 5], [1, 3, 5]],
    [[5, 5, 5], [5, 5, 5], [5, 5, 5]],
];
const METRICS: [&str; 4] = ["clarity", "faithfulness", "informativeness", "plausibility"];

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for item in 0..3 {
        for rater in 0..3 {
            let scores: serde_json::Map<String, Value> = METRICS
                .iter()
                .enumerate()
                .map(|(m, name)| (name.to_string(), json!(LIKERT[m][item][rater])))
                .collect();
            lines.push_str(
                &json!({"item_id": format!("item-{item}"), "rater_id": format!("r{rater}"), "kind": "likert", "likert": scores})
                    .to_string(),
            );
            lines.push('\n');
        }
    }
    let file = dir.path().join("Egypt.jsonl");
    fs::write(&file, lines).unwrap();
    let csv_path = dir.path().join("table.csv");
    let out = Command::new(bin())
        .args(["agree", "--kind", "likert", "--scale", "5"])
        .arg(&file)
        .arg("--csv")
        .arg(&csv_path)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let text = String::from_utf8_lossy(&out.stdout).into_owned();

    let header = text.lines().next().unwrap_or("");
    let titles = ["Clarity", "Faithfulness", "Informativeness", "Plausibility"];
    let positions: Vec<usize> = titles.iter().filter_map(|t| header.find(t)).collect();
    ensure(positions.len() == 4 && positions.windows(2).all(|w| w[0] < w[1]), || format!("header {header:?}"))?;
    let avg_at = text.find("Average Likert score");
    let rwg_at = text.find("Agreement index r*wg(j)");
    ensure(matches!((avg_at, rwg_at), (Some(a), Some(r)) if a < r), || "missing section titles".into())?;
    let data_rows: Vec<&str> = text.lines().filter(|l| l.starts_with("Egypt")).collect();
    ensure(data_rows.len() == 2, || format!("expected 2 Egypt rows, got {}", data_rows.len()))?;
    let parse = |row: &str| -> Vec<String> { row.split_whitespace().skip(1).map(str::to_string).collect() };
    ensure(parse(data_rows[0]) == ["4.89", "4.00", "3.00", "5.00"], || format!("means row {:?}", data_rows[0]))?;
    ensure(parse(data_rows[1]) == ["0.94", "0.67", "0.00", "1.00"], || format!("rwg row {:?}", data_rows[1]))?;

    let expected_means = [44.0 / 9.0, 4.0, 3.0, 5.0];
    let expected_rwg = [17.0 / 18.0, 2.0 / 3.0, 0.0, 1.0];
    let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| e.to_string())?;
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    ensure(header[2..] == METRICS, || format!("csv header {header:?}"))?;
    for row in reader.records() {
        let row = row.unwrap();
        let expected = match &row[0] {
            "average_likert" => expected_means,
            "rwg_star" => expected_rwg,
            other => return Err(format!("unexpected section {other}")),
        };
        for (m, want) in expected.iter().enumerate() {
            let got: f64 = row[m + 2].parse().unwrap();
            ensure((got - want).abs() < 1e-12, || format!("{} {}: {got} vs {want}", &row[0], METRICS[m]))?;
        }
    }
    Ok("4 metrics x (average, r*wg(j)) match hand-computed values; layout checked".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("harvest equals BFS oracle", criterion_1),
        ("seed dedup soundness", criterion_2),
        ("cache eliminates backend calls", criterion_3),
        ("split correctness", criterion_4),
        ("agreement statistics oracles", criterion_5),
        ("domain reliability partition", criterion_6),
        ("end-to-end CLI", criterion_7),
        ("Likert agreement table", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
