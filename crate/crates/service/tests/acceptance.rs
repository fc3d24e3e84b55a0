//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit when any fails.

mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use vibe_core::clustering::{cluster, kmeans, ClusteringConfig, Points};
use vibe_core::fixtures::{gaussian_blobs, planted_aggressor, tiny, PlantedConfig, PlantedFixture, PLANTED_METRIC};
use vibe_core::hypothesis::{
    auroc, build_issues_prompt, build_summary_prompt, propose_issues, score_issue, split_extremes, ExtremeSplit,
};
use vibe_core::prompt::PromptBundle;
use vibe_core::search::{concept_search, cosine_similarity, top_k, ConceptQuery};
use vibe_core::stats::{bootstrap_mean_ci, compare_subgroups, CompareOptions, ComparisonReport, Verdict, DATASET_GROUP};
use vibe_core::subgroup::rank_subgroups;
use vibe_core::{Dataset, EmbeddingStore, Gateway, MetricDescriptor, MetricDirection, SampleRecord, StubGateway, Subgroup};
use vibe_service::store::{PersistedSubgroup, Store};
use vibe_service::AppState;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn dataset_from_rows(name: &str, rows: &[Vec<f64>], metric: impl Fn(usize) -> f64) -> Dataset {
    let records = (0..rows.len())
        .map(|i| SampleRecord::new(format!("x{i:04}"), format!("x{i:04}.png")).with_metric("m", metric(i)))
        .collect();
    Dataset::new(
        name,
        ".",
        vec![MetricDescriptor::new("m", MetricDirection::LowerIsBetter)],
        records,
        EmbeddingStore::from_rows(rows).unwrap(),
    )
    .unwrap()
}

fn normal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let g = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| (0..d).map(|_| g.sample(rng)).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

fn cosine_search() -> Outcome {
    let hand = [
        (vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], 1.0),
        (vec![1.0, 0.0], vec![0.0, 1.0], 0.0),
        (vec![1.0, 0.0], vec![1.0, 1.0], std::f64::consts::FRAC_1_SQRT_2),
    ];
    for (a, b, want) in &hand {
        let got = cosine_similarity(a, b).map_err(|e| e.to_string())?;
        check((got - want).abs() < 1e-9, format!("cos({a:?}, {b:?}) = {got}, want {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows = normal_rows(&mut rng, 200, 64);
    let ds = dataset_from_rows("search", &rows, |_| 0.0);
    let scaled_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let s: f64 = rng.random_range(0.01..100.0);
            r.iter().map(|x| x * s).collect()
        })
        .collect();
    let scaled = dataset_from_rows("scaled", &scaled_rows, |_| 0.0);
    let mut compared = 0;
    for _ in 0..20 {
        let q: Vec<f64> = normal_rows(&mut rng, 1, 64).remove(0);
        let mut oracle: Vec<(f64, String)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (oracle_cos(&q, r), format!("x{i:04}")))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let qs: Vec<f64> = q.iter().map(|x| x * 37.5).collect();
        for k in [1, 5, 50] {
            let hits = top_k(&ds, &q, k, None).map_err(|e| e.to_string())?;
            check(hits.len() == k, format!("k={k}: {} hits", hits.len()))?;
            for (h, (s, id)) in hits.iter().zip(&oracle) {
                check(&h.sample_id == id, format!("k={k}: {} where oracle has {id}", h.sample_id))?;
                check((h.similarity - s).abs() < 1e-12, format!("k={k}: similarity {} vs {s}", h.similarity))?;
            }
            let ids: Vec<&str> = hits.iter().map(|h| h.sample_id.as_str()).collect();
            for other in [top_k(&ds, &qs, k, None), top_k(&scaled, &q, k, None)] {
                let other = other.map_err(|e| e.to_string())?;
                let o: Vec<&str> = other.iter().map(|h| h.sample_id.as_str()).collect();
                check(o == ids, format!("k={k}: ordering changed under scaling"))?;
            }
            compared += 1;
        }
    }
    Ok(format!("3 hand values; {compared} top-k cases (k in 1, 5, 50) match the exhaustive oracle and survive scaling"))
}

fn brute_auroc(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    s / (a.len() * b.len()) as f64
}

fn auroc_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows = normal_rows(&mut rng, 100, 16);
    let ds = dataset_from_rows("auroc", &rows, |i| i as f64);
    let gw = StubGateway::new(16);
    let ids: Vec<String> = ds.ids().map(str::to_string).collect();
    let mut worst = 0.0f64;
    for t in 0..500 {
        let text = format!("issue {t}");
        let v = gw.embed_text(&text).map_err(|e| e.to_string())?;
        let mut pool = ids.clone();
        for i in (1..pool.len()).rev() {
            pool.swap(i, rng.random_range(0..=i));
        }
        let a_len = rng.random_range(2..=50);
        let b_len = rng.random_range(2..=50);
        let split = ExtremeSplit {
            group_a: pool[..a_len].to_vec(),
            group_b: pool[a_len..a_len + b_len].to_vec(),
            metric_name: "m".into(),
            per_group_n: a_len.max(b_len),
        };
        let sims = |g: &[String]| -> Vec<f64> { g.iter().map(|id| oracle_cos(&v, ds.embedding(id).unwrap())).collect() };
        let want = brute_auroc(&sims(&split.group_a), &sims(&split.group_b));
        let got = score_issue(&text, &split, &ds, &gw).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs());
        check((got - want).abs() < 1e-12, format!("split {t}: {got} vs oracle {want}"))?;

        let swapped = ExtremeSplit {
            group_a: split.group_b.clone(),
            group_b: split.group_a.clone(),
            ..split.clone()
        };
        let back = score_issue(&text, &swapped, &ds, &gw).map_err(|e| e.to_string())?;
        check((back - (1.0 - got)).abs() < 1e-12, format!("split {t}: swap gives {back}, want {}", 1.0 - got))?;
    }

    let v = gw.embed_text("separable").map_err(|e| e.to_string())?;
    let mut by_sim: Vec<(f64, String)> = ids.iter().map(|id| (oracle_cos(&v, ds.embedding(id).unwrap()), id.clone())).collect();
    by_sim.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let split = ExtremeSplit {
        group_a: by_sim[..10].iter().map(|p| p.1.clone()).collect(),
        group_b: by_sim[90..].iter().map(|p| p.1.clone()).collect(),
        metric_name: "m".into(),
        per_group_n: 10,
    };
    let perfect = score_issue("separable", &split, &ds, &gw).map_err(|e| e.to_string())?;
    check(perfect == 1.0, format!("perfect separation scored {perfect}"))?;

    let transforms: [fn(f64) -> f64; 3] = [f64::exp, |x| x.powi(3) + 2.0 * x, |x| (x / 2.0).atan()];
    for c in 0..100 {
        let n = rng.random_range(2..40);
        let m = rng.random_range(2..40);
        let pos: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let neg: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f = transforms[c % 3];
        let base = auroc(&pos, &neg).map_err(|e| e.to_string())?;
        let fp: Vec<f64> = pos.iter().map(|x| f(*x)).collect();
        let fneg: Vec<f64> = neg.iter().map(|x| f(*x)).collect();
        let moved = auroc(&fp, &fneg).map_err(|e| e.to_string())?;
        check((base - moved).abs() < 1e-12, format!("case {c}: {base} became {moved}"))?;
    }
    Ok(format!("500 splits within {worst:.1e} of brute force, swaps give 1 - x, perfect split = 1.0, 100 monotone cases invariant"))
}

fn bootstrap_suite() -> Outcome {
    let flat = bootstrap_mean_ci(&[3.5; 40], 1000, 0.05, 1).map_err(|e| e.to_string())?;
    check(
        flat.lo == 3.5 && flat.hi == 3.5 && flat.mean == 3.5,
        format!("zero variance gave [{}, {}]", flat.lo, flat.hi),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = Normal::new(0.0, 1.0).unwrap();
    let draws: Vec<f64> = (0..1000).map(|_| g.sample(&mut rng)).collect();
    let a = bootstrap_mean_ci(&draws, 1000, 0.05, 42).map_err(|e| e.to_string())?;
    let b = bootstrap_mean_ci(&draws, 1000, 0.05, 42).map_err(|e| e.to_string())?;
    check(
        a.lo.to_bits() == b.lo.to_bits() && a.hi.to_bits() == b.hi.to_bits() && a.mean.to_bits() == b.mean.to_bits(),
        "repeat with the same seed differs",
    )?;
    let reference = 1.959963984540054 / 1000f64.sqrt();
    let half = (a.hi - a.lo) / 2.0;
    check(
        (half - reference).abs() <= 0.25 * reference,
        format!("half-width {half:.4} vs reference {reference:.4}"),
    )?;
    let trials = 500;
    let mut covered = 0;
    let truth = 2.0;
    let g = Normal::new(truth, 1.0).unwrap();
    for t in 0..trials {
        let sample: Vec<f64> = (0..200).map(|_| g.sample(&mut rng)).collect();
        let ci = bootstrap_mean_ci(&sample, 1000, 0.05, t as u64).map_err(|e| e.to_string())?;
        covered += usize::from(ci.lo <= truth && truth <= ci.hi);
    }
    let coverage = covered as f64 / trials as f64;
    check(coverage >= 0.90, format!("coverage {coverage:.3} below 0.90"))?;
    Ok(format!("degenerate interval exact, seeded repeat bit-identical, half-width {half:.4} (reference {reference:.4}), coverage {coverage:.3} over {trials} trials"))
}

fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let mut agree = 0u64;
    let mut pairs = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            pairs += 1;
            agree += u64::from((a[i] == a[j]) == (b[i] == b[j]));
        }
    }
    agree as f64 / pairs as f64
}

fn check_partition(groups: &[Subgroup], n: usize) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for g in groups {
        check(!g.members.is_empty(), format!("{} is empty", g.id))?;
        for m in &g.members {
            check(seen.insert(m.clone()), format!("{m} appears twice"))?;
        }
    }
    check(seen.len() == n, format!("{} of {n} samples assigned", seen.len()))
}

fn clustering_suite() -> Outcome {
    let mut far = vec![0.0; 16];
    far[0] = 10.0;
    let (rows, labels) = gaussian_blobs(&[vec![0.0; 16], far], 200, 14);
    check(rows.len() == 400 && rows[0].len() == 16, "blob fixture shape")?;
    let ds = dataset_from_rows("blobs", &rows, |_| 0.0);
    let mut runs = 0;
    for seed in 0..10 {
        let groups = cluster(&ds, &ClusteringConfig::kmeans(2).with_seed(seed), None).map_err(|e| e.to_string())?;
        check_partition(&groups, 400)?;
        let mut found = vec![0; 400];
        for (c, g) in groups.iter().enumerate() {
            for m in &g.members {
                found[ds.index_of(m).unwrap()] = c;
            }
        }
        let ri = rand_index(&labels, &found);
        check(ri == 1.0, format!("seed {seed}: Rand index {ri}"))?;
        runs += 1;
    }
    let points = Points::from_rows(&rows);
    for seed in 0..20 {
        for k in [2, 5, 9] {
            let r = kmeans(&points, k, seed, 100, 0.0).map_err(|e| e.to_string())?;
            for (i, w) in r.inertia_history.windows(2).enumerate() {
                check(
                    w[1] <= w[0] * (1.0 + 1e-12),
                    format!("seed {seed} k {k}: inertia rose at iteration {}: {} -> {}", i + 1, w[0], w[1]),
                )?;
            }
            let groups = cluster(&ds, &ClusteringConfig::kmeans(k).with_seed(seed), None).map_err(|e| e.to_string())?;
            check(groups.len() == k, format!("k {k}: {} groups", groups.len()))?;
            check_partition(&groups, 400)?;
            runs += 1;
        }
    }
    let small = dataset_from_rows("small", &rows[..30], |_| 0.0);
    let singles = cluster(&small, &ClusteringConfig::kmeans(30), None).map_err(|e| e.to_string())?;
    check(singles.len() == 30 && singles.iter().all(|g| g.len() == 1), "k = N did not give singletons")?;
    check_partition(&singles, 30)?;
    Ok(format!("Rand index 1.0 on 10 seeds, inertia non-increasing and partitions valid on {runs} runs, k = N gives 30 singletons"))
}

fn dataset_verdict(report: &ComparisonReport, id: &str) -> Option<Verdict> {
    report.per_metric[PLANTED_METRIC]
        .verdicts
        .iter()
        .find(|v| v.left == id && v.right == DATASET_GROUP)
        .map(|v| v.verdict)
}

fn interval(report: &ComparisonReport, which: usize) -> String {
    let m = &report.per_metric[PLANTED_METRIC];
    let g = if which == usize::MAX { &m.dataset } else { &m.subgroups[which] };
    match &g.interval {
        Some(i) => format!("{:.3} [{:.3}, {:.3}]", i.mean, i.lo, i.hi),
        None => "unavailable".into(),
    }
}

fn planted() -> Outcome {
    let f: PlantedFixture = planted_aggressor(&PlantedConfig::default()).map_err(|e| e.to_string())?;
    let gw = f.gateway();
    let planted_in = |m: &[String]| m.iter().filter(|id| f.is_planted(id)).count();
    let clusters = cluster(&f.dataset, &ClusteringConfig::kmeans(20), None).map_err(|e| e.to_string())?;
    let ranked = rank_subgroups(&clusters, &f.dataset, PLANTED_METRIC).map_err(|e| e.to_string())?;
    let worst = clusters.iter().find(|c| c.id == ranked[0].id).unwrap();
    let share = planted_in(&worst.members) as f64 / worst.len() as f64;
    let a = share >= 0.7;

    let found = concept_search(&f.dataset, &ConceptQuery::new(f.concept_text.clone(), 100), &gw).map_err(|e| e.to_string())?;
    let retrieved = planted_in(&found.subgroup.members);
    let b = retrieved >= 90;

    let split = split_extremes(worst, &f.dataset, PLANTED_METRIC, 10).map_err(|e| e.to_string())?;
    let planted_score = score_issue(&f.concept_text, &split, &f.dataset, &gw).map_err(|e| e.to_string())?;
    let mut best_distractor = f64::NEG_INFINITY;
    for d in &f.distractors {
        best_distractor = best_distractor.max(score_issue(d, &split, &f.dataset, &gw).map_err(|e| e.to_string())?);
    }
    let issues = propose_issues(worst, &f.dataset, PLANTED_METRIC, &gw, &PromptBundle::default(), 10).map_err(|e| e.to_string())?;
    let c = planted_score >= 0.9 && planted_score > best_distractor && issues[0].text == f.concept_text;

    let options = CompareOptions::default();
    let before = compare_subgroups(&[worst], &f.dataset, &options).map_err(|e| e.to_string())?;
    let after = compare_subgroups(
        &[worst, &found.subgroup],
        &f.dataset,
        &CompareOptions {
            exclude_shared: true,
            ..options
        },
    )
    .map_err(|e| e.to_string())?;
    let d1 = dataset_verdict(&before, &worst.id) == Some(Verdict::Significant);
    let d2 = dataset_verdict(&after, &worst.id) == Some(Verdict::Inconclusive);
    let remaining = after.sizes.first().map_or(0, |s| s.analyzed);

    let flag = |ok: bool| if ok { "ok" } else { "FAILED" };
    let detail = format!(
        "(a) {} worst cluster {:.0}% planted of {}; (b) {} {retrieved}/100 planted retrieved; \
         (c) {} planted issue AUROC {planted_score:.3} vs best distractor {best_distractor:.3}; \
         (d) {} significant before exclusion [{} vs dataset {}], {} inconclusive after exclusion \
         [{remaining} remaining members {} vs dataset {}]",
        flag(a),
        share * 100.0,
        worst.len(),
        flag(b),
        flag(c),
        flag(d1),
        interval(&before, 0),
        interval(&before, usize::MAX),
        flag(d2),
        interval(&after, 0),
        interval(&after, usize::MAX),
    );
    if a && b && c && d1 && d2 {
        Ok(detail)
    } else {
        let mut msg = detail;
        if !d2 {
            msg.push_str(
                "\n      note: after removing the concept-retrieved members the remainder of the planted \
                 cluster has a clearly lower mean than the dataset, so the intervals still separate \
                 (in the opposite direction); see the decisions ledger for the analysis",
            );
        }
        Err(msg)
    }
}

const GOLDEN_SUMMARY: &str =
    "I have the following data: a red car on a street; a blue boat. Please summarize all these data using less than 15 words.";

const GOLDEN_ISSUES: &str = "The following are the result of captioning two groups of images: Group A: a red car on a street;
Group A: a red bus at night;
Group B: a blue bird in the sky;
Group B: a blue boat.

I am a machine learning researcher trying to figure out the major differences between these two groups so I can better understand my data.

Come up with 10 distinct concepts that are more likely to be true for Group A compared to Group B. Please write a list of captions.

Answer with exactly one concept per line. Each concept must be 1-5 words. Do not add numbering, explanations or any other text.
Correct output:
wearing a headscarf
perforated plastic container
Incorrect output:
1. Group A images more often show people wearing headscarves than Group B images do.";

fn prompt_fidelity() -> Outcome {
    let bundle = PromptBundle::default();
    let summary = build_summary_prompt(&["a red car on a street", "a blue boat"], 15, &bundle).map_err(|e| e.to_string())?;
    check(summary.contains("Please summarize all these data using less than"), "summary template text missing")?;
    check(summary == GOLDEN_SUMMARY, format!("summary prompt drifted:\n{summary}"))?;
    let again = build_summary_prompt(&["a red car on a street", "a blue boat"], 15, &bundle).map_err(|e| e.to_string())?;
    check(again.as_bytes() == summary.as_bytes(), "summary prompt not byte-stable")?;

    let ds = tiny();
    let all = Subgroup::custom(ds.ids().map(str::to_string).collect::<Vec<_>>(), "all");
    let split = split_extremes(&all, &ds, "error", 2).map_err(|e| e.to_string())?;
    check(
        split.group_a == ["s1", "s2"] && split.group_b == ["s5", "s4"],
        format!("unexpected split {:?} / {:?}", split.group_a, split.group_b),
    )?;
    let issues = build_issues_prompt(&split, &ds, &bundle).map_err(|e| e.to_string())?;
    check(issues.contains("Come up with 10 distinct concepts"), "issues template text missing")?;
    check(issues == GOLDEN_ISSUES, format!("issues prompt drifted:\n{issues}"))?;
    let again = build_issues_prompt(&split, &ds, &bundle).map_err(|e| e.to_string())?;
    check(again.as_bytes() == issues.as_bytes(), "issues prompt not byte-stable")?;
    Ok("both prompts match their golden bytes, Group A captions precede Group B in split order".into())
}

async fn validated(app: &axum::Router, schema: &str, reply: common::Reply, expect: u16) -> Result<Value, String> {
    check(
        reply.status.as_u16() == expect,
        format!("{schema}: status {} ({})", reply.status, String::from_utf8_lossy(&reply.bytes)),
    )?;
    let value = reply.json();
    let published = common::get(app, &format!("/v1/schemas/{schema}")).await.json();
    let validator = jsonschema::validator_for(&published).map_err(|e| format!("{schema}: bad schema {e}"))?;
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| format!("{e} at {}", e.instance_path)).collect();
    check(errors.is_empty(), format!("{schema}: {errors:?}"))?;
    Ok(value)
}

async fn service_walk(app: &axum::Router) -> Result<usize, String> {
    use common::{call, get, post};
    use axum::http::Method;
    let mut n = 0;
    let mut ok = |_: Value| n += 1;
    ok(validated(app, "health", get(app, "/v1/health").await, 200).await?);
    ok(validated(app, "overview", get(app, "/v1/overview?metric=error").await, 200).await?);
    ok(validated(app, "error", get(app, "/v1/overview?metric=nope").await, 404).await?);
    let list = validated(app, "cluster_list", post(app, "/v1/clusters?summarize=true", json!({"method": "kmeans", "k": 3})).await, 200).await?;
    let job = validated(app, "job", post(app, "/v1/clusters?async=true", json!({"method": "kmeans", "k": 4})).await, 202).await?;
    let job_id = job["id"].as_str().unwrap_or_default().to_string();
    let mut status = Value::Null;
    for _ in 0..500 {
        status = validated(app, "job", get(app, &format!("/v1/jobs/{job_id}")).await, 200).await?;
        if status["state"] == "succeeded" || status["state"] == "failed" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    check(status["state"] == "succeeded", format!("job ended as {status}"))?;
    let id = list["clusters"][0]["id"].as_str().unwrap_or_default().to_string();
    let dbscan = validated(app, "cluster_list", post(app, "/v1/clusters", json!({"method": "dbscan", "dbscan_eps": 0.3, "dbscan_min_pts": 2})).await, 200).await?;
    ok(dbscan);
    ok(validated(app, "subgroup_detail", get(app, &format!("/v1/subgroups/{id}?neighbors=2")).await, 200).await?);
    ok(validated(app, "error", get(app, "/v1/subgroups/none").await, 404).await?);
    let found = validated(app, "search", post(app, "/v1/search", json!({"text": "red vehicle", "k": 3})).await, 200).await?;
    let concept = found["subgroup"]["id"].as_str().unwrap_or_default().to_string();
    ok(validated(app, "subgroup_detail", get(app, &format!("/v1/subgroups/{concept}")).await, 200).await?);
    ok(validated(app, "subgroup_brief", post(app, "/v1/subgroups", json!({"members": ["s1", "s4"]})).await, 201).await?);
    ok(validated(app, "subgroup_list", get(app, "/v1/subgroups").await, 200).await?);
    ok(validated(app, "comparison", post(app, "/v1/compare", json!({"subgroup_ids": [id, concept], "exclude_shared": true, "bins": 10})).await, 200).await?);
    ok(validated(app, "history", get(app, "/v1/history").await, 200).await?);
    ok(validated(app, "settings", call(app, Method::PUT, "/v1/session/settings", Some(json!({"invert_colors": true}))).await, 200).await?);
    ok(validated(app, "settings", get(app, "/v1/session/settings").await, 200).await?);
    ok(validated(app, "session", get(app, "/v1/session").await, 200).await?);
    ok(validated(app, "schema_index", get(app, "/v1/schemas").await, 200).await?);
    ok(list);
    ok(job);
    ok(found);
    Ok(n)
}

fn service_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("store.json");
    let ds = tiny();
    let gw: Arc<dyn Gateway> = Arc::new(StubGateway::new(ds.dim()));
    let state = Arc::new(AppState::with_store(ds, gw, PromptBundle::default(), &path).map_err(|e| e.to_string())?);
    let app = vibe_service::router(Arc::clone(&state));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let responses = runtime.block_on(service_walk(&app))?;

    let on_disk = std::fs::read(&path).map_err(|e| e.to_string())?;
    let projection = state.store.read().unwrap().session().projection.clone();
    let reopened = Store::open(&path, "tiny", projection).map_err(|e| e.to_string())?;
    check(reopened.to_bytes().map_err(|e| e.to_string())? == on_disk, "store bytes changed after reload")?;
    let mut subgroups = 0;
    for p in reopened.subgroups() {
        let bytes = serde_json::to_vec(p).map_err(|e| e.to_string())?;
        let back: PersistedSubgroup = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
        check(serde_json::to_vec(&back).unwrap() == bytes, format!("{} not byte-identical", p.subgroup.id))?;
        subgroups += 1;
    }
    Ok(format!("{responses} responses validated against published schemas (stub gateway, no UI); {subgroups} persisted subgroups round-trip byte-identically"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("cosine-search", Duration::from_secs(5), cosine_search),
        ("auroc", Duration::from_secs(10), auroc_suite),
        ("bootstrap", Duration::from_secs(60), bootstrap_suite),
        ("clustering", Duration::from_secs(10), clustering_suite),
        ("planted-aggressor", Duration::from_secs(120), planted),
        ("prompt-fidelity", Duration::from_secs(5), prompt_fidelity),
        ("service-contract", Duration::from_secs(60), service_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({elapsed:.2?}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({elapsed:.2?}): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
