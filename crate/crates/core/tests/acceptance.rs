//! Acceptance gate. Each criterion runs in isolation, is timed against its
//! budget and prints one PASS/FAIL line; the process fails if any criterion
//! does.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relx::classifier::{
    predict_proba, train_baseline, write_model, LinearSoftmax, NativeBackend, SparseVec, TrainingConfig,
};
use relx::corpus::{split_corpus, validate_instance, Instance};
use relx::eval::{run_ablation, score, score_labels, AblationConfig, ScoreOptions};
use relx::postprocess::{constrain, constrain_batch};
use relx::preprocess::{insert_markers, preprocess_corpus, strip_markers, MarkerStrategy};
use relx::schema::{build_default_schema, parse_label_signature, EntityType, LabelId, RelationSchema};
use relx::synthetic::separable_corpus;
use relx::{Backend, ProbDist};

use common::{random_dist, random_instance, scan_oracle};

const FIXTURE_SEED: u64 = 20230723;
const FIXTURE_PER_CLASS: usize = 20;

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Duration, Check); 7] = [
        ("schema exhaustive check", Duration::from_secs(1), schema_exhaustive),
        ("marker round-trip", Duration::from_secs(5), marker_round_trip),
        ("decoder oracle equivalence", Duration::from_secs(10), decoder_oracle),
        ("correction safety", Duration::from_secs(30), correction_safety),
        ("baseline learning", Duration::from_secs(60), baseline_learning),
        ("scorer correctness", Duration::from_secs(60), scorer_correctness),
        ("ablation shape", Duration::from_secs(60), ablation_shape),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(format!(
                "panic: {:?}",
                e.downcast_ref::<String>()
                    .map(String::as_str)
                    .or(e.downcast_ref::<&str>().copied())
            ))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name:<28} {elapsed:>9.2?}  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<28} {elapsed:>9.2?}  {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn schema_exhaustive() -> Result<String, String> {
    let schema = build_default_schema();
    let mut checked = 0;
    for &(e1, e2) in schema.pairs() {
        for label in schema.labels() {
            let sig = parse_label_signature(&label.name).map_err(|e| e.to_string())?;
            let expected = sig.is_none() || sig == Some((e1, e2));
            let got = schema.is_plausible(label.id, e1, e2).map_err(|e| e.to_string())?;
            ensure!(got == expected, "{} on ({e1},{e2}): {got} != {expected}", label.name);
            checked += 1;
        }
    }
    let counts: Vec<usize> = schema
        .pairs()
        .iter()
        .map(|&(a, b)| schema.plausible_labels(a, b).unwrap().len() - 1)
        .collect();
    ensure!(counts == [4, 3, 1, 2, 3, 4, 3, 1], "named labels per pair {counts:?}");
    ensure!(
        schema
            .pairs()
            .iter()
            .all(|&(a, b)| schema.plausible_labels(a, b).unwrap().contains(&schema.no_relation())),
        "no_relation missing from a pair"
    );
    let total: usize = schema
        .pairs()
        .iter()
        .map(|&(a, b)| schema.plausible_labels(a, b).unwrap().len())
        .sum();
    ensure!(total == 21 + 8, "pair index sizes sum to {total}");
    // Every out-of-ontology ordered pair is reported rather than answered.
    let mut unknown = 0;
    for a in EntityType::ALL {
        for b in EntityType::ALL {
            if !schema.contains_pair(a, b) {
                ensure!(schema.is_plausible(LabelId(0), a, b).is_err(), "({a},{b}) not reported");
                unknown += 1;
            }
        }
    }
    ensure!(unknown == 64 - 8, "{unknown} unknown pairs");
    Ok(format!("{checked} (pair, label) combinations, counts {counts:?}"))
}

fn marker_round_trip() -> Result<String, String> {
    let schema = build_default_schema();
    let text = "John Doe is the CEO of Company A.";
    let inst = Instance {
        id: "ceo".into(),
        text: text.into(),
        e1: relx::EntitySpan {
            start: 0,
            end: 8,
            etype: EntityType::Person,
            surface: "John Doe".into(),
        },
        e2: relx::EntitySpan {
            start: 23,
            end: 32,
            etype: EntityType::Org,
            surface: "Company A".into(),
        },
        gold: None,
    };
    let printed = [
        (MarkerStrategy::PreEntity, "PERS John Doe is the CEO of ORG Company A."),
        (
            MarkerStrategy::WrapEntity,
            "PERS John Doe PERS is the CEO of ORG Company A ORG.",
        ),
        (
            MarkerStrategy::PairPrefix,
            "<PERS-ORG> John Doe is the CEO of Company A.",
        ),
    ];
    for (s, expected) in printed {
        let got = insert_markers(&inst, s).text;
        ensure!(got == expected, "{s}: {got:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut nested, mut adjacent) = (0, 0);
    for i in 0..1000 {
        let inst = random_instance(&mut rng, &schema, i);
        validate_instance(&inst, &schema).map_err(|e| format!("generator produced invalid instance: {e}"))?;
        let (a, b) = (&inst.e1, &inst.e2);
        if (a.start <= b.start && b.end <= a.end) || (b.start <= a.start && a.end <= b.end) {
            nested += 1;
        }
        if a.end == b.start || b.end == a.start {
            adjacent += 1;
        }
        for s in MarkerStrategy::ALL {
            let marked = insert_markers(&inst, s);
            let back = strip_markers(&marked).map_err(|e| e.to_string())?;
            ensure!(back == inst.text, "{s} on {:?}: {back:?}", inst.text);
            let want = match s {
                MarkerStrategy::PreEntity => 2,
                MarkerStrategy::WrapEntity => 4,
                MarkerStrategy::PairPrefix => 1,
            };
            ensure!(
                marked.inserted.len() == want,
                "{s}: {} insertions",
                marked.inserted.len()
            );
            let added: usize = marked.inserted.iter().map(|m| m.marker.chars().count()).sum();
            ensure!(
                marked.text.chars().count() == inst.text.chars().count() + added,
                "{s}: length accounting"
            );
        }
    }
    ensure!(
        nested > 50 && adjacent > 50,
        "weak coverage: {nested} nested, {adjacent} adjacent"
    );
    Ok(format!(
        "1000 instances x 3 strategies ({nested} nested, {adjacent} adjacent)"
    ))
}

fn decoder_oracle() -> Result<String, String> {
    let schema = build_default_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut corrected, mut ties) = (0, 0);
    for i in 0..10_000 {
        let dist = random_dist(&mut rng, schema.len(), i % 4 == 0);
        let raw = dist.argmax();
        for &pair in schema.pairs() {
            let d = constrain(&dist, pair.0, pair.1, &schema).map_err(|e| e.to_string())?;
            let (want, rank) = scan_oracle(&dist, pair, &schema);
            ensure!(
                (d.final_label, d.fallback_rank) == (want, rank),
                "dist {i} pair {pair:?}: got ({}, {}), oracle ({want}, {rank})",
                d.final_label,
                d.fallback_rank
            );
            ensure!(schema.is_plausible(d.final_label, pair.0, pair.1).unwrap(), "unsound");
            ensure!(d.raw_argmax == raw, "raw argmax");
            ensure!((d.fallback_rank == 0) == (d.final_label == raw), "rank/argmax coupling");
            ensure!(d.final_prob == dist.get(d.final_label), "final_prob");
            if raw == schema.no_relation() {
                ensure!(d.final_label == raw, "no_relation argmax changed");
            }
            let again = constrain(&dist, pair.0, pair.1, &schema).unwrap();
            ensure!(again == d, "non-deterministic");
            let plausible = schema.plausible_labels(pair.0, pair.1).unwrap();
            let top = plausible
                .iter()
                .filter(|&&l| dist.get(l) == d.final_prob)
                .min()
                .copied();
            if plausible.iter().filter(|&&l| dist.get(l) == d.final_prob).count() > 1 {
                ties += 1;
                ensure!(top == Some(d.final_label), "tie not broken toward lowest index");
            }
            corrected += usize::from(d.fallback_rank > 0);
        }
    }
    ensure!(ties > 0, "no ties exercised");
    Ok(format!("80000 decodes, {corrected} corrected, {ties} ties"))
}

fn correction_safety() -> Result<String, String> {
    let schema = build_default_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = ScoreOptions::default();
    let mut improved = 0;
    for c in 0..100 {
        let n = rng.gen_range(20..200);
        let corpus: Vec<Instance> = (0..n).map(|i| random_instance(&mut rng, &schema, i)).collect();
        // Half the corpora bias the distribution toward the gold label.
        let dists: Vec<ProbDist> = corpus
            .iter()
            .map(|inst| {
                let d = random_dist(&mut rng, schema.len(), false);
                if c % 2 == 0 {
                    let mut p = d.probs().to_vec();
                    p[inst.gold.unwrap().index()] += 1.0;
                    ProbDist::new(p.iter().map(|v| v / 2.0).collect()).unwrap()
                } else {
                    d
                }
            })
            .collect();
        let (before, after) = micro_before_after(&corpus, &dists, &schema, opts)?;
        ensure!(after >= before, "corpus {c}: {after} < {before}");
        improved += usize::from(after > before);
    }

    // Constructed so every argmax is an implausible label and the gold label
    // is the runner-up.
    let corpus: Vec<Instance> = (0..50).map(|i| random_instance(&mut rng, &schema, i)).collect();
    let dists: Vec<ProbDist> = corpus
        .iter()
        .map(|inst| {
            let pair = inst.pair();
            let wrong = schema
                .labels()
                .iter()
                .find(|l| l.signature.is_some() && l.signature != Some(pair))
                .unwrap()
                .id;
            let mut p = vec![0.1 / 20.0; schema.len()];
            p[wrong.index()] = 0.6;
            p[inst.gold.unwrap().index()] = 0.3;
            ProbDist::new(p).unwrap()
        })
        .collect();
    let (before, after) = micro_before_after(&corpus, &dists, &schema, opts)?;
    ensure!(before == 0.0 && after == 1.0, "constructed corpus: {before} -> {after}");
    Ok(format!(
        "100 random corpora ({improved} improved), constructed corpus {before} -> {after}"
    ))
}

fn micro_before_after(
    corpus: &[Instance],
    dists: &[ProbDist],
    schema: &RelationSchema,
    opts: ScoreOptions,
) -> Result<(f64, f64), String> {
    let golds: Vec<LabelId> = corpus.iter().map(|i| i.gold.unwrap()).collect();
    let decoded = constrain_batch(dists, corpus, schema).map_err(|e| e.to_string())?;
    for (p, g) in decoded.predictions.iter().zip(&golds) {
        ensure!(
            !(p.raw_argmax == *g && p.final_label != *g),
            "a correct prediction was changed"
        );
    }
    let raw: Vec<LabelId> = decoded.predictions.iter().map(|p| p.raw_argmax).collect();
    let before = score_labels(&raw, &golds, schema, opts).map_err(|e| e.to_string())?;
    let after = score(&decoded.predictions, &golds, schema).map_err(|e| e.to_string())?;
    Ok((before.micro_f1, after.micro_f1))
}

/// Runs split -> markers -> train -> predict -> constrain -> score and
/// returns (model bytes, report table, micro-F1).
fn native_pipeline(corpus: &[Instance], schema: &RelationSchema) -> Result<(Vec<u8>, String, f64), String> {
    let (train, test) = split_corpus(corpus, (0.8, 0.2), FIXTURE_SEED).map_err(|e| e.to_string())?;
    let train_marked = preprocess_corpus(&train, MarkerStrategy::PreEntity);
    let test_marked = preprocess_corpus(&test, MarkerStrategy::PreEntity);
    let golds: Vec<LabelId> = train.iter().map(|i| i.gold.unwrap()).collect();
    let config = TrainingConfig {
        seed: FIXTURE_SEED,
        ..TrainingConfig::baseline()
    };
    let model = train_baseline(&train_marked, &golds, &config, schema).map_err(|e| e.to_string())?;
    let dists = predict_proba(&model, &test_marked, schema).map_err(|e| e.to_string())?;
    let decoded = constrain_batch(&dists, &test, schema).map_err(|e| e.to_string())?;
    let test_golds: Vec<LabelId> = test.iter().map(|i| i.gold.unwrap()).collect();
    let report = score(&decoded.predictions, &test_golds, schema).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    write_model(&mut bytes, &model).map_err(|e| e.to_string())?;
    Ok((bytes, report.to_table() + &report.to_jsonl(), report.micro_f1))
}

fn baseline_learning() -> Result<String, String> {
    let schema = build_default_schema();
    let corpus = separable_corpus(&schema, FIXTURE_PER_CLASS, FIXTURE_SEED);
    let (model_a, report_a, micro) = native_pipeline(&corpus, &schema)?;
    ensure!(micro >= 0.95, "held-out micro-F1 {micro}");
    let (model_b, report_b, _) = native_pipeline(&corpus, &schema)?;
    ensure!(model_a == model_b, "model bytes differ between identical runs");
    ensure!(report_a == report_b, "reports differ between identical runs");

    let worst = gradient_check()?;
    ensure!(worst <= 1e-4, "gradient relative error {worst:e}");
    Ok(format!(
        "micro-F1 {micro:.4}, gradient rel. error {worst:.2e}, deterministic"
    ))
}

/// Central differences on a 5-example, 8-feature, 4-label problem. Returns
/// the worst relative error over all weight and bias coordinates.
fn gradient_check() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n_labels, n_features, decay) = (4, 8, 0.05);
    let mut xs: Vec<SparseVec> = vec![Vec::new(); 5];
    for x in &mut xs {
        for f in 0..n_features as u32 {
            if rng.gen_bool(0.6) {
                x.push((f, rng.gen_range(-2.0..2.0)));
            }
        }
    }
    let ys: Vec<usize> = (0..5).map(|_| rng.gen_range(0..n_labels)).collect();
    let mut model = LinearSoftmax::zeros(n_labels, n_features);
    model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
    model.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));

    let (gw, gb) = model.gradient(&xs, &ys, decay);
    let h = 1e-5;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    for (i, &analytic) in gw.iter().enumerate() {
        let mut plus = model.clone();
        plus.weights[i] += h;
        let mut minus = model.clone();
        minus.weights[i] -= h;
        let numeric = (plus.objective(&xs, &ys, decay) - minus.objective(&xs, &ys, decay)) / (2.0 * h);
        worst = worst.max(rel(analytic, numeric));
    }
    for (k, &analytic) in gb.iter().enumerate() {
        let mut plus = model.clone();
        plus.bias[k] += h;
        let mut minus = model.clone();
        minus.bias[k] -= h;
        let numeric = (plus.objective(&xs, &ys, decay) - minus.objective(&xs, &ys, decay)) / (2.0 * h);
        worst = worst.max(rel(analytic, numeric));
    }
    Ok(worst)
}

fn scorer_correctness() -> Result<String, String> {
    let schema = build_default_schema();
    let opts = ScoreOptions::default();
    let ids = |v: &[u8]| v.iter().map(|&i| LabelId(i)).collect::<Vec<_>>();
    let r = score_labels(&ids(&[0, 1, 1]), &ids(&[0, 0, 1]), &schema, opts).map_err(|e| e.to_string())?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    ensure!(close(r.micro_f1, 2.0 / 3.0), "micro {}", r.micro_f1);
    ensure!(
        close(r.per_class[0].precision, 1.0)
            && close(r.per_class[0].recall, 0.5)
            && close(r.per_class[0].f1, 2.0 / 3.0),
        "class A {:?}",
        r.per_class[0]
    );
    ensure!(
        close(r.per_class[1].precision, 0.5)
            && close(r.per_class[1].recall, 1.0)
            && close(r.per_class[1].f1, 2.0 / 3.0),
        "class B {:?}",
        r.per_class[1]
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..1000 {
        let n = rng.gen_range(1..60);
        // Few classes per case so collisions (correct predictions) are common.
        let k = rng.gen_range(1..=22u8);
        let gold: Vec<LabelId> = (0..n).map(|_| LabelId(rng.gen_range(0..k))).collect();
        let pred: Vec<LabelId> = (0..n).map(|_| LabelId(rng.gen_range(0..k))).collect();
        let r = score_labels(&pred, &gold, &schema, opts).map_err(|e| e.to_string())?;
        let correct = pred.iter().zip(&gold).filter(|(p, g)| p == g).count();
        let accuracy = correct as f64 / n as f64;
        ensure!(
            close(r.micro_f1, accuracy),
            "case {case}: micro {} vs accuracy {accuracy}",
            r.micro_f1
        );
        let cells: usize = r.confusion.iter().flatten().sum();
        ensure!(cells == n, "confusion total");
        for c in &r.per_class {
            ensure!(c.support == r.confusion[c.index].iter().sum::<usize>(), "support");
            ensure!(
                c.predicted == r.confusion.iter().map(|row| row[c.index]).sum::<usize>(),
                "predicted"
            );
        }
    }
    Ok("hand case 2/3 exact; 1000 random cases match accuracy".into())
}

fn ablation_shape() -> Result<String, String> {
    let schema = build_default_schema();
    let corpus = separable_corpus(&schema, FIXTURE_PER_CLASS, FIXTURE_SEED);
    let native = NativeBackend::new(TrainingConfig {
        seed: FIXTURE_SEED,
        ..TrainingConfig::baseline()
    });
    let backends: [&dyn Backend; 1] = [&native];
    let config = AblationConfig {
        seed: FIXTURE_SEED,
        ..AblationConfig::default()
    };
    let report = run_ablation(&corpus, &MarkerStrategy::ALL, &backends, &schema, &config).map_err(|e| e.to_string())?;
    ensure!(report.rows.len() == 3, "{} rows", report.rows.len());
    ensure!(
        report.rows.windows(2).all(|w| w[0].micro_f1 >= w[1].micro_f1),
        "rows not sorted by micro-F1"
    );
    let mut strategies: Vec<MarkerStrategy> = report.rows.iter().map(|r| r.strategy).collect();
    strategies.sort();
    ensure!(strategies == MarkerStrategy::ALL, "strategies {strategies:?}");
    for row in &report.rows {
        ensure!(
            row.micro_f1 >= 0.95,
            "{} x {}: {}",
            row.backend,
            row.strategy,
            row.micro_f1
        );
    }
    let summary: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}={:.3}", r.strategy, r.micro_f1))
        .collect();
    Ok(summary.join(" "))
}
