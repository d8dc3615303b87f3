//! One PASS/FAIL line per acceptance criterion; fails if any line is FAIL.
//!
//! Everything runs inside a one-thread rayon pool against the synthetic and
//! replay backends only.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use inbedder::backend::synthetic::SyntheticConfig;
use inbedder::backend::wire::{record_from_json, record_to_json};
use inbedder::benchmarks::{
    self as bench, run_multiview_clustering, run_robustness_suite, run_triplet_benchmark, robustness_from_scores,
    triplet_judgments, InstructionSet, PairExample, TripletExample, INSTRUCT_STSB_PAIRS, INTENT_EMOTION_TRIPLETS,
};
use inbedder::clustering::{v_measure, ClusterAssignment};
use inbedder::encoding::{direct_aggregate, EncodingSpec, Method};
use inbedder::interpretation::{explain_clusters, order_clusters_by_entropy};
use inbedder::math::{cosine_similarity, harmonic_mean};
use inbedder::metrics::{mean_average_precision, spearman, triplet_success_rate};
use inbedder::pipeline::{Backends, Pipeline};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pipeline(cfg: SyntheticConfig) -> Pipeline {
    Pipeline::new(Backends::synthetic(cfg), None)
}

fn oracle_mean(rows: &[Vec<f32>], range: impl Iterator<Item = usize>, skip: &dyn Fn(usize) -> bool) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for r in range {
        if skip(r) {
            continue;
        }
        let a = acc.get_or_insert_with(|| vec![0.0; rows[r].len()]);
        for (x, v) in a.iter_mut().zip(&rows[r]) {
            *x += f64::from(*v);
        }
        count += 1;
    }
    acc.map(|a| a.into_iter().map(|x| x / count as f64).collect())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn records() -> Vec<common::RandomRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    (0..1000).map(|_| common::random_record(&mut rng, 0.1)).collect()
}

fn aggregation_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (i, r) in records().iter().enumerate() {
        let n = r.record.prompt_len;
        let g = r.rows.len() - n;
        let skip = |p: usize| r.special.contains(&p);
        let never = |_: usize| false;
        let expected = [
            (Method::AvgGen, oracle_mean(&r.rows, n - 1..n + g, &skip)),
            (Method::AvgPpt, oracle_mean(&r.rows, 0..n - 1, &skip)),
            (Method::FirstGen, oracle_mean(&r.rows, n - 1..n, &never)),
            (Method::LastGen, oracle_mean(&r.rows, n + g - 1..n + g, &never)),
            (Method::AvgAll, oracle_mean(&r.rows, 0..n + g, &skip)),
        ];
        for (method, want) in expected {
            let got = direct_aggregate(&r.record, method, r.layer as i64);
            match (got, want) {
                (Ok(e), Some(w)) => worst = worst.max(max_abs_diff(e.values(), &w)),
                (Err(_), None) => {}
                (got, want) => return Err(format!("record {i} {method}: got {got:?}, oracle {want:?}")),
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!("1000 records x 5 methods, max |diff| {worst:.2e}, {elapsed:.2?}"),
    )
}

fn decomposition_identity() -> Outcome {
    let mut worst = 0.0f64;
    for mut r in records() {
        r.record.special_token_positions = vec![Default::default()];
        let n = r.record.prompt_len as f64;
        let g = (r.rows.len() - r.record.prompt_len) as f64;
        let l = r.layer as i64;
        let agg = |m| direct_aggregate(&r.record, m, l).unwrap().into_values();
        let (all, ppt, gen) = (agg(Method::AvgAll), agg(Method::AvgPpt), agg(Method::AvgGen));
        let rebuilt: Vec<f64> = ppt.iter().zip(&gen).map(|(p, q)| ((n - 1.0) * p + (g + 1.0) * q) / (n + g)).collect();
        worst = worst.max(max_abs_diff(&all, &rebuilt));
    }
    check(worst <= 1e-6, format!("max |avg-all - weighted parts| {worst:.2e} over 1000 records"))
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 100 {
        let len = rng.gen_range(5..60);
        let x: Vec<f64> = (0..len).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
        let y: Vec<f64> = (0..len).map(|_| f64::from(rng.gen_range(0..6u8))).collect();
        let Ok(got) = spearman(&x, &y) else { continue };
        worst = worst.max((got - oracle_spearman(&x, &y)).abs());
        done += 1;
    }
    let v = v_measure(&[0, 0, 1, 1], &[0, 0, 1, 2], 1.0).map_err(|e| e.to_string())?;
    let map = mean_average_precision(&[(vec![0.9, 0.8, 0.7], vec![false, true, true])]).map_err(|e| e.to_string())?;
    let hm = harmonic_mean(0.5, 1.0).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-9 && (v - 0.8).abs() <= 1e-9 && (map - 0.583333).abs() <= 1e-6 && (hm - 0.666667).abs() <= 1e-6,
        format!("spearman max |diff| {worst:.2e} on 100 tied vectors; v-measure {v:.9}; MAP {map:.6}; HM {hm:.6}"),
    )
}

fn cats_and_dogs() -> Outcome {
    let start = Instant::now();
    let p = pipeline(common::responsive_config(&[]));
    let mut parts = Vec::new();
    let mut ok = true;
    for method in [Method::FirstGen, Method::ReEnc] {
        let enc = p.encoder(&EncodingSpec::new(method)).map_err(|e| e.to_string())?;
        let cos = |instruction: &str| -> Result<f64, String> {
            let a = enc.encode("I love cats", instruction).map_err(|e| e.to_string())?;
            let b = enc.encode("I love dogs", instruction).map_err(|e| e.to_string())?;
            cosine_similarity(&a.embedding, &b.embedding).map_err(|e| e.to_string())
        };
        let same = cos("Do they love animals?")?;
        let differ = cos("What animal do they love?")?;
        ok &= (same - 1.0).abs() <= 1e-6 && differ < 1.0 - 1e-3;
        parts.push(format!("{method}: shared {same:.6}, distinguishing {differ:.4}"));
    }
    let elapsed = start.elapsed();
    check(ok && elapsed < Duration::from_secs(5), format!("{}; {elapsed:.2?}", parts.join("; ")))
}

fn instruction_awareness() -> Outcome {
    let docs = common::two_view_corpus();
    let aware = pipeline(common::responsive_config(&docs));
    let spec = EncodingSpec::new(Method::AvgGen);
    let enc = aware.encoder(&spec).map_err(|e| e.to_string())?;
    let fixture = common::triplets(&docs, 60, 11);
    let t = run_triplet_benchmark(&fixture, &enc).map_err(|e| e.to_string())?;
    let mv = run_multiview_clustering(&common::clustering_task(&docs), &enc, 42).map_err(|e| e.to_string())?;

    let blind = pipeline(common::blind_config(&docs));
    let blind_enc = blind.encoder(&spec).map_err(|e| e.to_string())?;
    let many = common::triplets(&docs, 500, 12);
    let judgments = triplet_judgments(&many, &blind_enc).map_err(|e| e.to_string())?;
    let blind_rate = triplet_success_rate(&judgments).map_err(|e| e.to_string())?;
    check(
        t.harmonic_mean == 1.0 && mv.harmonic_mean == 1.0 && blind_rate <= 0.55,
        format!(
            "60 docs: triplet HM {} ({} triplets), multiview HM {}; blind backend {:.3} over {} triplets",
            t.harmonic_mean,
            t.n_triplets,
            mv.harmonic_mean,
            blind_rate,
            many.len()
        ),
    )
}

fn robustness() -> Outcome {
    let injected = robustness_from_scores(BTreeMap::from([
        (InstructionSet::Correct, vec![0.8]),
        (InstructionSet::Implicit, vec![0.6]),
        (InstructionSet::Incorrect, vec![0.3]),
    ]))
    .map_err(|e| e.to_string())?;
    let docs = common::two_view_corpus();
    let p = pipeline(common::responsive_config(&docs));
    let enc = p.encoder(&EncodingSpec::new(Method::AvgGen)).map_err(|e| e.to_string())?;
    let r = run_robustness_suite(&common::robustness_suite(&docs), &enc, 42).map_err(|e| e.to_string())?;
    check(
        injected.delta_ci == 0.5 && injected.delta_ii == 0.3 && r.delta_ci > 0.5,
        format!(
            "injected: delta_ci {} delta_ii {}; responsive fixture: delta_ci {:.3} delta_ii {:.3}",
            injected.delta_ci, injected.delta_ii, r.delta_ci, r.delta_ii
        ),
    )
}

fn write_jsonl<T: serde::Serialize>(path: &std::path::Path, items: &[T]) {
    let mut s = String::new();
    for i in items {
        s += &serde_json::to_string(i).unwrap();
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

fn generated_triplets(n: usize) -> Vec<TripletExample> {
    (0..n)
        .map(|i| TripletExample {
            anchor: format!("anchor message {i}"),
            positive: format!("positive message {i}"),
            negative: format!("negative message {i}"),
            criterion: if i % 2 == 0 { bench::INTENT } else { bench::EMOTION }.to_string(),
            instruction: "What is it about?".into(),
        })
        .collect()
}

fn generated_pairs(n: usize) -> Vec<PairExample> {
    (0..n)
        .map(|i| PairExample {
            sentence1: format!("first sentence {i}"),
            sentence2: format!("second sentence {i}"),
            instruction: "Are they about the same thing?".into(),
            rating: (i % 2) as u8,
        })
        .collect()
}

fn dataset_counts() -> Outcome {
    let official = |var: &str| std::env::var_os(var).map(PathBuf::from);
    let mut notes = Vec::new();
    match official("INBEDDER_INTENT_EMOTION_FILE") {
        Some(p) => {
            let n = bench::load_intent_emotion(&p).map_err(|e| e.to_string())?.len();
            notes.push(format!("official triplet file: {n}"));
        }
        None => notes.push("triplet file not supplied".into()),
    }
    match official("INBEDDER_INSTRUCT_STSB_FILE") {
        Some(p) => {
            let n = bench::load_instruct_stsb(&p).map_err(|e| e.to_string())?.len();
            notes.push(format!("official pair file: {n}"));
        }
        None => notes.push("pair file not supplied".into()),
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (tp, pp) = (dir.path().join("t.jsonl"), dir.path().join("p.jsonl"));
    let mut ok = true;
    write_jsonl(&tp, &generated_triplets(INTENT_EMOTION_TRIPLETS));
    ok &= bench::load_intent_emotion(&tp).is_ok();
    write_jsonl(&tp, &generated_triplets(INTENT_EMOTION_TRIPLETS - 2));
    ok &= bench::load_intent_emotion(&tp).is_err();
    write_jsonl(&pp, &generated_pairs(INSTRUCT_STSB_PAIRS));
    ok &= bench::load_instruct_stsb(&pp).is_ok();
    write_jsonl(&pp, &generated_pairs(INSTRUCT_STSB_PAIRS + 1));
    ok &= bench::load_instruct_stsb(&pp).is_err();
    notes.push(format!(
        "loaders accept {INTENT_EMOTION_TRIPLETS}/{INSTRUCT_STSB_PAIRS} and reject other sizes"
    ));
    check(ok, notes.join("; "))
}

fn interpretation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let filler: Vec<String> = (0..40).map(|i| format!("filler{i}")).collect();
    let mut ranked_first = 0;
    let mut pure_first = 0;
    for corpus in 0..100 {
        let k = rng.gen_range(2..=6);
        let mut labels = Vec::new();
        let mut generations = Vec::new();
        let mut gold = Vec::new();
        for c in 0..k {
            for _ in 0..rng.gen_range(5..=15) {
                let mut words: Vec<&str> = filler.choose_multiple(&mut rng, 4).map(String::as_str).collect();
                let planted = format!("planted{corpus}x{c}");
                words.push(&planted);
                words.shuffle(&mut rng);
                generations.push(words.join(" "));
                labels.push(c);
                gold.push(if c == 0 { "a".to_string() } else { ["a", "b", "c"].choose(&mut rng).unwrap().to_string() });
            }
        }
        // cluster 1 must be impure so the pure one is unambiguous
        let first_of_1 = labels.iter().position(|&l| l == 1).unwrap();
        gold[first_of_1] = "b".into();
        gold[first_of_1 + 1] = "c".into();
        let assignment = ClusterAssignment {
            labels,
            k,
            inertia: 0.0,
            seed: 0,
        };
        let report = explain_clusters(&generations, &assignment, 3).map_err(|e| e.to_string())?;
        if report
            .clusters
            .iter()
            .all(|s| s.top_words[0].0 == format!("planted{corpus}x{}", s.id))
        {
            ranked_first += 1;
        }
        let order = order_clusters_by_entropy(&assignment, &gold).map_err(|e| e.to_string())?;
        let with_gold = report.with_gold(&assignment, &gold).map_err(|e| e.to_string())?;
        let head = &with_gold.clusters[0];
        if order.order[0] == 0 && head.id == 0 && head.entropy == Some(0.0) {
            pure_first += 1;
        }
    }
    check(
        ranked_first == 100 && pure_first == 100,
        format!("planted keyword ranked #1 in {ranked_first}/100 corpora; pure cluster entropy 0 and first in {pure_first}/100"),
    )
}

fn replay_regression() -> Outcome {
    let dir = common::fixture_dir();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = common::replay_outputs(a.path());
    let second = common::replay_outputs(b.path());
    let expected_emb = std::fs::read(dir.join("expected_embeddings.bin")).map_err(|e| e.to_string())?;
    let expected_scores = std::fs::read(dir.join("expected_scores.json")).map_err(|e| e.to_string())?;
    check(
        first == second && first.0 == expected_emb && first.1 == expected_scores,
        format!(
            "50 recorded generations: embeddings ({} bytes) and scores JSON byte-identical across runs and to the committed expectation",
            first.0.len()
        ),
    )
}

fn wire_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..100 {
        let r = common::random_record(&mut rng, 0.1).record;
        let back = record_from_json(&record_to_json(&r)).map_err(|e| format!("record {i}: {e}"))?;
        if !back.bit_eq(&r) {
            return Err(format!("record {i} changed in transit"));
        }
    }
    check(true, "100 random records bit-exact through JSON + base64 f32".into())
}

/// Runs without the libtest harness so the PASS/FAIL lines are never captured.
fn main() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let start = Instant::now();
    let criteria: [Criterion; 10] = [
        ("aggregation oracle equivalence", aggregation_oracle),
        ("decomposition identity", decomposition_identity),
        ("metric oracles", metric_oracles),
        ("embed-via-answering end to end", cats_and_dogs),
        ("instruction-awareness fixture", instruction_awareness),
        ("robustness arithmetic", robustness),
        ("dataset counts", dataset_counts),
        ("interpretation", interpretation),
        ("replay regression", replay_regression),
        ("wire protocol round trip", wire_round_trip),
    ];
    let mut failures = 0;
    pool.install(|| {
        for (name, f) in criteria {
            let (tag, detail) = match f() {
                Ok(d) => ("PASS", d),
                Err(d) => {
                    failures += 1;
                    ("FAIL", d)
                }
            };
            println!("{tag} {name}: {detail}");
        }
    });
    let elapsed = start.elapsed();
    let fast = elapsed < Duration::from_secs(120);
    if !fast {
        failures += 1;
    }
    println!(
        "{} single-core suite without network: {elapsed:.2?}",
        if fast { "PASS" } else { "FAIL" }
    );
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
