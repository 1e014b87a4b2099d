//! Acceptance gate for the whole harness. Each test exercises one release
//! criterion end to end and prints a single PASS/FAIL line (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::time::{Duration, Instant};

use aidet_cli::guidance::parse_guidance;
use aidet_cli::report::{read_metrics_csv, read_recall_csv};
use aidet_cli::{cmd_run, BackendConfig, RunConfig};
use aidet_client::{
    build_request, run_method, Client, ClientOptions, Matcher, MatcherSet, MockScript, MockServer,
    Reply, ResponseCache, ScriptEntry,
};
use aidet_core::{
    aggregate, bootstrap_macro_f1, bootstrap_relative_improvement, build_final_answer_transcript,
    build_initial_transcript, build_probe_transcript, catalog_lookup, extract_verdict,
    partial_response, relative_improvement, resample_indices, segment_sentences,
    BootstrapOptions, ChatTranscript, ConfidenceAveraging, DecodeParams, GuidanceMode,
    GuidanceSpec, ImageRecord, IntervalProbe, Manifest, ManifestHeader, MethodRun, PhraseGrouping,
    PhraseKind, Prediction, ScoredPrediction, Verdict, FRACTIONS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion<F: FnOnce()>(n: u32, what: &str, f: F) {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => println!("criterion {n} PASS: {what}"),
        Err(cause) => {
            println!("criterion {n} FAIL: {what}");
            std::panic::resume_unwind(cause);
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn record(id: &str, generator: &str) -> ImageRecord {
    ImageRecord {
        id: id.into(),
        image_ref: format!("https://img.test/{id}.png"),
        true_label: if generator == "real" { Verdict::Real } else { Verdict::AiGenerated },
        generator: generator.into(),
        dataset: "acceptance-e2e".into(),
        split: "test".into(),
    }
}

fn reply(text: &str) -> Option<Reply> {
    Some(Reply { text: text.into(), logprobs: None, tokens: None })
}

fn entry(matchers: Vec<Matcher>, text: &str) -> ScriptEntry {
    ScriptEntry {
        matcher: Some(MatcherSet::All(matchers)),
        reply: reply(text),
        delay_ms: None,
        times: None,
        status: None,
    }
}

fn m_image(id: &str) -> Matcher {
    Matcher { image_data: Some(format!("{id}.png")), ..Matcher::default() }
}

fn m_prefill(text: &str) -> Matcher {
    Matcher { assistant_prefill: Some(text.into()), ..Matcher::default() }
}

// ---------------------------------------------------------------------------
// criterion 1: scripted end-to-end run with exactly known metrics
// ---------------------------------------------------------------------------

/// 15 real + 25 AI records with hand-assigned verdicts per method.
fn e2e_manifest() -> Manifest {
    let mut records = Vec::new();
    for i in 0..15 {
        records.push(record(&format!("real-{i:03}"), "real"));
    }
    for i in 0..10 {
        records.push(record(&format!("glide-{i:03}"), "glide"));
    }
    for i in 0..8 {
        records.push(record(&format!("sdxl-{i:03}"), "sdxl"));
    }
    for i in 0..7 {
        records.push(record(&format!("midjourney-{i:03}"), "midjourney"));
    }
    Manifest {
        header: Some(ManifestHeader {
            schema_version: 1,
            dataset: Some("acceptance-e2e".into()),
            notes: None,
        }),
        records,
    }
}

/// Verdict text each method's stage two serves for a record.
///
/// Baseline: 5 of 10 glide images detected, nothing else; two answers that
/// parse to nothing. Confusion tp=5 fp=0 tn=15 fn=20.
/// prefill:s2: all glide and midjourney detected, 5 of 8 sdxl, two false
/// positives. Confusion tp=22 fp=2 tn=13 fn=3.
fn e2e_answers(id: &str) -> (&'static str, &'static str) {
    let (gen, num) = id.rsplit_once('-').unwrap();
    let num: usize = num.parse().unwrap();
    let baseline = match (gen, num) {
        ("glide", 0..=4) => " ai-generated.",
        ("sdxl", 0) | ("midjourney", 0) => " unclear, hard to say.",
        _ => " real.",
    };
    let s2 = match (gen, num) {
        ("real", 13..=14) => " ai-generated.",
        ("real", _) => " real.",
        ("sdxl", 5..=7) => " real.",
        _ => " ai-generated.",
    };
    (baseline, s2)
}

fn e2e_script(manifest: &Manifest) -> MockScript {
    let s2_phrase = catalog_lookup("s2", "default").unwrap();
    let mut entries = Vec::new();
    // most specific first: per-record stage-two answers for prefill:s2 …
    for r in &manifest.records {
        let (_, s2) = e2e_answers(&r.id);
        entries.push(entry(
            vec![m_prefill(s2_phrase), m_prefill("Final Answer"), m_image(&r.id)],
            s2,
        ));
    }
    // … then per-record stage-two answers for baseline …
    for r in &manifest.records {
        let (baseline, _) = e2e_answers(&r.id);
        entries.push(entry(vec![m_prefill("Final Answer"), m_image(&r.id)], baseline));
    }
    // … then the uniform stage-one analyses.
    entries.push(entry(
        vec![m_prefill(s2_phrase)],
        " in the image: textures look synthetic and edges are soft.",
    ));
    entries.push(ScriptEntry {
        matcher: None,
        reply: reply("This photo shows a scene. It looks ordinary."),
        delay_ms: None,
        times: None,
        status: None,
    });
    MockScript::new(entries).unwrap()
}

#[test]
fn criterion_1_mock_end_to_end_exactness() {
    criterion(1, "scripted end-to-end run reproduces hand-computed metrics within 1e-12", || {
        let dir = tempfile::tempdir().unwrap();
        let manifest = e2e_manifest();
        let manifest_path = dir.path().join("manifest.jsonl");
        manifest.save(&manifest_path).unwrap();
        let server = MockServer::start(e2e_script(&manifest)).unwrap();

        let out_dir = dir.path().join("out");
        let config = RunConfig {
            manifest_path,
            backend: BackendConfig {
                base_url: server.url().into(),
                api_key: None,
                model: "vlm-7b".into(),
                max_in_flight: 4,
                retries: 0,
                timeout_secs: 30,
                cache_dir: None,
            },
            guidance: vec![
                parse_guidance("baseline", None).unwrap(),
                parse_guidance("prefill:s2", None).unwrap(),
            ],
            temperature: 0.0,
            max_tokens: 512,
            seed: 0,
            out_dir: out_dir.clone(),
            bootstrap_iterations: 1000,
            bootstrap_level: 0.95,
            target_method: None,
        };

        let started = Instant::now();
        let summary = cmd_run(&config).unwrap();
        let elapsed = started.elapsed();
        assert!(elapsed < Duration::from_secs(10), "run took {elapsed:?}");

        // hand-computed scores
        let base_macro = (2.0 * 5.0 / (2.0 * 5.0 + 0.0 + 20.0)
            + 2.0 * 15.0 / (2.0 * 15.0 + 20.0 + 0.0))
            / 2.0; // 7/15
        let s2_macro =
            (2.0 * 22.0 / (2.0 * 22.0 + 2.0 + 3.0) + 2.0 * 13.0 / (2.0 * 13.0 + 3.0 + 2.0)) / 2.0;
        assert_eq!(summary.dataset, "acceptance-e2e");
        assert_eq!(summary.methods.len(), 2);
        let b = &summary.methods[0];
        assert_eq!(b.method_id, "baseline");
        assert!(close(b.macro_f1, base_macro, 1e-12), "{} vs {base_macro}", b.macro_f1);
        assert!(close(b.unparsed_rate, 2.0 / 40.0, 1e-12));
        assert_eq!((b.scored, b.failed), (40, 0));
        let s = &summary.methods[1];
        assert_eq!(s.method_id, "prefill:s2");
        assert!(close(s.macro_f1, s2_macro, 1e-12), "{} vs {s2_macro}", s.macro_f1);
        assert!(close(s.unparsed_rate, 0.0, 1e-12));
        assert_eq!((s.scored, s.failed), (40, 0));

        // improvement of the best method over the runner-up
        let imp = summary.improvement.as_ref().unwrap();
        assert_eq!(imp.target, "prefill:s2");
        assert_eq!(imp.next_best, "baseline");
        let expected = (s2_macro - base_macro) / base_macro;
        assert!(close(imp.result.point_estimate, expected, 1e-12));
        assert!(imp.result.ci_low <= imp.result.point_estimate);
        assert!(imp.result.point_estimate <= imp.result.ci_high);

        // per-generator recall, via the CSV a consumer would read
        let recalls = read_recall_csv(&out_dir.join("recall.csv")).unwrap();
        let by_key: BTreeMap<(String, String), (f64, u64)> = recalls
            .iter()
            .map(|r| ((r.method.clone(), r.generator.clone()), (r.recall, r.support)))
            .collect();
        let expect = [
            ("baseline", "glide", 0.5, 10),
            ("baseline", "sdxl", 0.0, 8),
            ("baseline", "midjourney", 0.0, 7),
            ("baseline", "real", 1.0, 15),
            ("prefill:s2", "glide", 1.0, 10),
            ("prefill:s2", "sdxl", 5.0 / 8.0, 8),
            ("prefill:s2", "midjourney", 1.0, 7),
            ("prefill:s2", "real", 13.0 / 15.0, 15),
        ];
        assert_eq!(by_key.len(), expect.len());
        for (method, generator, recall, support) in expect {
            let (got_recall, got_support) = by_key[&(method.to_string(), generator.to_string())];
            assert!(close(got_recall, recall, 1e-12), "{method}/{generator}");
            assert_eq!(got_support, support, "{method}/{generator}");
        }

        // result files exist and carry the same numbers
        let metrics = read_metrics_csv(&out_dir.join("metrics.csv")).unwrap();
        assert_eq!(metrics.len(), 2);
        assert!(close(metrics[0].macro_f1, base_macro, 1e-12));
        assert!(close(metrics[1].macro_f1, s2_macro, 1e-12));
        assert_eq!(metrics[0].dataset, "acceptance-e2e");
        for name in ["predictions_baseline.jsonl", "predictions_prefill_s2.jsonl"] {
            let text = std::fs::read_to_string(out_dir.join(name)).unwrap();
            assert_eq!(text.lines().count(), 40, "{name}");
        }
        for name in ["summary.txt", "f1_macro.svg", "recall.svg", "failures.jsonl", "run.log"] {
            assert!(out_dir.join(name).exists(), "{name} missing");
        }
        // two methods × two stages × forty records
        assert_eq!(server.total_requests(), 160);
    });
}

// ---------------------------------------------------------------------------
// criterion 2: extraction fixture corpus
// ---------------------------------------------------------------------------

#[derive(serde::Deserialize)]
struct ExtractionCase {
    input_text: String,
    expected_verdict: Verdict,
    expected_unparsed: bool,
}

#[test]
fn criterion_2_extraction_fixture_corpus() {
    criterion(2, "verdict extraction matches the >=20-case fixture corpus", || {
        let raw = include_str!("../../core/tests/fixtures/extraction_fixtures.jsonl");
        let cases: Vec<ExtractionCase> =
            raw.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert!(cases.len() >= 20, "only {} fixture cases", cases.len());

        for case in &cases {
            let got = extract_verdict(&case.input_text);
            assert_eq!(got.verdict, case.expected_verdict, "input {:?}", case.input_text);
            assert_eq!(got.unparsed, case.expected_unparsed, "input {:?}", case.input_text);
        }

        // canonical elicited answers and the tricky shapes must be present
        let inputs: Vec<&str> = cases.iter().map(|c| c.input_text.as_str()).collect();
        for verbatim in [" real.", " ai-generated.", " ai‑generated.", "It is AI."] {
            assert!(inputs.contains(&verbatim), "fixture corpus lost {verbatim:?}");
        }
        assert!(cases.iter().any(|c| c.expected_unparsed));
        assert!(cases
            .iter()
            .any(|c| !c.expected_unparsed && c.expected_verdict == Verdict::Real));
        assert!(cases
            .iter()
            .any(|c| !c.expected_unparsed && c.expected_verdict == Verdict::AiGenerated));
    });
}

// ---------------------------------------------------------------------------
// criterion 3: metric implementation against a from-scratch oracle
// ---------------------------------------------------------------------------

fn oracle_f1(items: &[(Verdict, Verdict)], class: Verdict) -> f64 {
    let tp = items.iter().filter(|(t, p)| *t == class && *p == class).count() as f64;
    let fp = items.iter().filter(|(t, p)| *t != class && *p == class).count() as f64;
    let fn_ = items.iter().filter(|(t, p)| *t == class && *p != class).count() as f64;
    let denominator = 2.0 * tp + fp + fn_;
    if denominator == 0.0 {
        0.0
    } else {
        2.0 * tp / denominator
    }
}

#[test]
fn criterion_3_metrics_agree_with_oracle() {
    criterion(3, "macro F1 / recall / unparsed rate match an oracle on 1000 random runs", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        let generators = ["real", "glide", "sdxl", "midjourney"];
        for case in 0..1000 {
            let n = rng.random_range(1..=60);
            let mut records = Vec::new();
            let mut predictions = Vec::new();
            for i in 0..n {
                let generator = generators[rng.random_range(0..generators.len())];
                records.push(record(&format!("c{case}-r{i}"), generator));
                predictions.push(Prediction {
                    record_id: format!("c{case}-r{i}"),
                    verdict: if rng.random_bool(0.5) { Verdict::Real } else { Verdict::AiGenerated },
                    unparsed: rng.random_bool(0.1),
                    raw_first_response: String::new(),
                    raw_final_answer: String::new(),
                });
            }
            let run = MethodRun::join("m", &records, &predictions).unwrap();

            let pairs: Vec<(Verdict, Verdict)> = records
                .iter()
                .zip(&predictions)
                .map(|(r, p)| (r.true_label, p.verdict))
                .collect();
            let expected_macro =
                (oracle_f1(&pairs, Verdict::AiGenerated) + oracle_f1(&pairs, Verdict::Real)) / 2.0;
            assert_eq!(run.macro_f1(), expected_macro, "case {case}");

            let recall = run.per_generator_recall();
            for generator in generators {
                let members: Vec<&(Verdict, Verdict)> = records
                    .iter()
                    .zip(&pairs)
                    .filter(|(r, _)| r.generator == generator)
                    .map(|(_, pair)| pair)
                    .collect();
                match recall.get(generator) {
                    None => assert!(members.is_empty()),
                    Some(stat) => {
                        let hits = members.iter().filter(|(t, p)| t == p).count();
                        assert_eq!(stat.support, members.len() as u64);
                        assert_eq!(stat.recall, hits as f64 / members.len() as f64);
                    }
                }
            }

            let unparsed = predictions.iter().filter(|p| p.unparsed).count();
            assert_eq!(run.unparsed_rate(), unparsed as f64 / n as f64);
        }
    });
}

// ---------------------------------------------------------------------------
// criterion 4: bootstrap determinism, degeneracy, and agreement
// ---------------------------------------------------------------------------

/// A method run over synthetic records where prediction `i` is correct iff
/// the per-index RNG says so.
fn synthetic_run(method: &str, n: usize, seed: u64, p_correct: f64) -> MethodRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    for i in 0..n {
        let generator = if i % 2 == 0 { "real" } else { "glide" };
        let r = record(&format!("b-{i:04}"), generator);
        let correct = rng.random_bool(p_correct);
        let verdict = if correct {
            r.true_label
        } else {
            match r.true_label {
                Verdict::Real => Verdict::AiGenerated,
                Verdict::AiGenerated => Verdict::Real,
            }
        };
        let prediction = Prediction {
            record_id: r.id.clone(),
            verdict,
            unparsed: false,
            raw_first_response: String::new(),
            raw_final_answer: String::new(),
        };
        items.push(ScoredPrediction { record: r, prediction });
    }
    MethodRun { method_id: method.into(), items }
}

fn confusion_f1(items: &[ScoredPrediction], indices: &[usize], class: Verdict) -> f64 {
    let mut tp = 0f64;
    let mut fp = 0f64;
    let mut fn_ = 0f64;
    for &i in indices {
        let truth = items[i].record.true_label;
        let predicted = items[i].prediction.verdict;
        if predicted == class && truth == class {
            tp += 1.0;
        } else if predicted == class {
            fp += 1.0;
        } else if truth == class {
            fn_ += 1.0;
        }
    }
    let denominator = 2.0 * tp + fp + fn_;
    if denominator == 0.0 {
        0.0
    } else {
        2.0 * tp / denominator
    }
}

fn own_macro_f1(items: &[ScoredPrediction], indices: &[usize]) -> f64 {
    (confusion_f1(items, indices, Verdict::AiGenerated)
        + confusion_f1(items, indices, Verdict::Real))
        / 2.0
}

fn own_percentiles(mut stats: Vec<f64>, level: f64) -> (Vec<f64>, usize, usize) {
    stats.sort_by(f64::total_cmp);
    let b = stats.len() as f64;
    let alpha = (1.0 - level) / 2.0;
    let lo = ((alpha * b).ceil() as usize).clamp(1, stats.len()) - 1;
    let hi = (((1.0 - alpha) * b).ceil() as usize).clamp(1, stats.len()) - 1;
    (stats, lo, hi)
}

#[test]
fn criterion_4_bootstrap_behaviour() {
    criterion(4, "bootstrap is deterministic, degenerate on ties, and matches a re-derivation", || {
        let n = 200;
        let target = synthetic_run("target", n, 11, 0.80);
        let run_a = synthetic_run("a", n, 22, 0.60);
        let run_b = synthetic_run("b", n, 33, 0.55);
        let opts = BootstrapOptions { iterations: 10_000, level: 0.95, seed: 7, ..BootstrapOptions::default() };

        // identical methods: improvement is exactly zero with a [0, 0] CI
        let mut twin = target.clone();
        twin.method_id = "twin".into();
        let tie = bootstrap_relative_improvement(&target, &[&twin], &opts).unwrap();
        assert_eq!(tie.point_estimate, 0.0);
        assert_eq!((tie.ci_low, tie.ci_high), (0.0, 0.0));

        // byte-identical results across repeated calls
        let started = Instant::now();
        let first = bootstrap_relative_improvement(&target, &[&run_a, &run_b], &opts).unwrap();
        let elapsed = started.elapsed();
        assert!(elapsed < Duration::from_secs(60), "10k iterations took {elapsed:?}");
        for _ in 0..2 {
            let again = bootstrap_relative_improvement(&target, &[&run_a, &run_b], &opts).unwrap();
            assert_eq!(again, first);
        }

        // more data, tighter interval
        let narrow = bootstrap_macro_f1(&synthetic_run("m", 800, 5, 0.7), &opts).unwrap();
        let wide = bootstrap_macro_f1(&synthetic_run("m", 50, 5, 0.7), &opts).unwrap();
        assert!(
            narrow.ci_high - narrow.ci_low < wide.ci_high - wide.ci_low,
            "n=800 CI ({}, {}) not tighter than n=50 CI ({}, {})",
            narrow.ci_low,
            narrow.ci_high,
            wide.ci_low,
            wide.ci_high
        );

        // re-derive the interval from the published resampling contract,
        // with independent confusion counting, F1, and percentile code
        let stats: Vec<f64> = (0..opts.iterations as u64)
            .map(|iteration| {
                let indices = resample_indices(opts.seed, iteration, n);
                let t = own_macro_f1(&target.items, &indices);
                let nb = own_macro_f1(&run_a.items, &indices)
                    .max(own_macro_f1(&run_b.items, &indices));
                if t == nb {
                    0.0
                } else if nb == 0.0 {
                    f64::INFINITY
                } else {
                    (t - nb) / nb
                }
            })
            .collect();
        let (sorted, lo, hi) = own_percentiles(stats, opts.level);
        assert!(
            sorted[lo.saturating_sub(1)] <= first.ci_low && first.ci_low <= sorted[(lo + 1).min(sorted.len() - 1)],
            "ci_low {} outside re-derived neighborhood [{}, {}]",
            first.ci_low,
            sorted[lo.saturating_sub(1)],
            sorted[(lo + 1).min(sorted.len() - 1)]
        );
        assert!(
            sorted[hi.saturating_sub(1)] <= first.ci_high && first.ci_high <= sorted[(hi + 1).min(sorted.len() - 1)],
            "ci_high {} outside re-derived neighborhood",
            first.ci_high
        );
        assert_eq!(
            first.point_estimate,
            relative_improvement(
                own_macro_f1(&target.items, &(0..n).collect::<Vec<_>>()),
                own_macro_f1(&run_a.items, &(0..n).collect::<Vec<_>>())
                    .max(own_macro_f1(&run_b.items, &(0..n).collect::<Vec<_>>()))
            )
        );

        // a fully independent resampler lands on statistically equal bounds
        let mut rng = ChaCha8Rng::seed_from_u64(0xFEED);
        let stats: Vec<f64> = (0..10_000)
            .map(|_| {
                let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let t = own_macro_f1(&target.items, &indices);
                let nb = own_macro_f1(&run_a.items, &indices)
                    .max(own_macro_f1(&run_b.items, &indices));
                if t == nb {
                    0.0
                } else {
                    (t - nb) / nb
                }
            })
            .collect();
        let (sorted, lo, hi) = own_percentiles(stats, opts.level);
        assert!(close(first.ci_low, sorted[lo], 0.08), "{} vs {}", first.ci_low, sorted[lo]);
        assert!(close(first.ci_high, sorted[hi], 0.08), "{} vs {}", first.ci_high, sorted[hi]);
    });
}

// ---------------------------------------------------------------------------
// criterion 5: sentence truncation and confidence aggregation
// ---------------------------------------------------------------------------

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let pieces = [
        "word", "No", "3.14", "e.g", "soft", "übermäßig", "1.", "2)", "…", "ai", "real",
    ];
    let punct = [". ", "! ", "? ", ".", "\n", " ", ", ", ": ", ".\n", "?!"];
    let len = rng.random_range(0..40);
    let mut text = String::new();
    for _ in 0..len {
        text.push_str(pieces[rng.random_range(0..pieces.len())]);
        text.push_str(punct[rng.random_range(0..punct.len())]);
    }
    text
}

#[test]
fn criterion_5_interval_truncation_and_confidence() {
    criterion(5, "sentence truncation is a prefix chain with floor sizing and exact confidence", || {
        // 500 random texts: spans are clean, partials form a prefix chain,
        // and the full fraction reproduces the original bytes
        let mut rng = ChaCha8Rng::seed_from_u64(0x51CE);
        let prefill = "Let's think step by step";
        for _ in 0..500 {
            let text = random_text(&mut rng);
            let spans = segment_sentences(&text);
            for (i, span) in spans.iter().enumerate() {
                assert!(span.start < span.end && span.end <= text.len());
                assert!(text.is_char_boundary(span.start) && text.is_char_boundary(span.end));
                let s = &text[span.start..span.end];
                assert_eq!(s.trim(), s, "span not trimmed: {s:?}");
                if i > 0 {
                    assert!(spans[i - 1].end <= span.start);
                }
            }
            let mut previous = String::new();
            for fraction in FRACTIONS {
                let partial = partial_response(prefill, &text, &spans, fraction);
                assert!(partial.starts_with(prefill));
                assert!(partial.starts_with(&previous), "chain broke at {fraction}");
                previous = partial;
            }
            assert_eq!(previous, format!("{prefill}{text}"));
        }

        // floor sizing: k = floor(fraction · sentences), per sentence count
        let table: [(usize, [usize; 5]); 5] = [
            (1, [0, 0, 0, 0, 1]),
            (2, [0, 0, 1, 1, 2]),
            (3, [0, 0, 1, 2, 3]),
            (4, [0, 1, 2, 3, 4]),
            (9, [0, 2, 4, 6, 9]),
        ];
        for (sentences, expected) in table {
            let text: String =
                (1..=sentences).map(|i| format!(" Sentence number {i} is here.")).collect();
            let spans = segment_sentences(&text);
            assert_eq!(spans.len(), sentences);
            for (fraction, keep) in FRACTIONS.iter().zip(expected) {
                let partial = partial_response(prefill, &text, &spans, *fraction);
                let expected_text = if keep == 0 {
                    prefill.to_string()
                } else {
                    format!("{prefill}{}", &text[..spans[keep - 1].end])
                };
                assert_eq!(partial, expected_text, "{sentences} sentences at {fraction}");
            }
        }

        // aggregation turns scripted dyadic logprobs into exact means
        let probe = |id: &str, fraction: f64, verdict: Verdict, lps: &[f64]| IntervalProbe {
            record_id: id.into(),
            method_id: "prefill:s2".into(),
            fraction,
            verdict,
            unparsed: false,
            mean_logprob: lps.iter().sum::<f64>() / lps.len() as f64,
            token_logprobs: lps.to_vec(),
        };
        let probes = vec![
            probe("x", 0.0, Verdict::AiGenerated, &[-0.25, -0.75]), // mean -0.5
            probe("y", 0.0, Verdict::Real, &[-1.5, -1.5]),          // mean -1.5
            probe("x", 1.0, Verdict::AiGenerated, &[-0.25, -0.25]),
            probe("y", 1.0, Verdict::Real, &[-0.5, -1.0]),
        ];
        let labels: BTreeMap<String, Verdict> = [
            ("x".to_string(), Verdict::AiGenerated),
            ("y".to_string(), Verdict::Real),
        ]
        .into();
        let rows = aggregate(
            &probes,
            &labels,
            PhraseGrouping::AverageAcrossPhrases,
            ConfidenceAveraging::LogSpace,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].group, "prefill");
        assert_eq!(rows[0].fraction, 0.0);
        assert_eq!(rows[0].mean_logprob, (-0.5 + -1.5) / 2.0);
        assert_eq!(rows[0].normalized_confidence, (-1.0f64).exp());
        assert_eq!(rows[0].macro_f1, 1.0);
        assert_eq!(rows[1].fraction, 1.0);
        assert_eq!(rows[1].mean_logprob, (-0.25 + -0.75) / 2.0);
        assert_eq!(rows[1].normalized_confidence, (-0.5f64).exp());

        // probability-space averaging follows its own composition exactly
        let rows = aggregate(
            &probes,
            &labels,
            PhraseGrouping::AverageAcrossPhrases,
            ConfidenceAveraging::ProbSpace,
        )
        .unwrap();
        assert_eq!(rows[0].normalized_confidence, ((-0.5f64).exp() + (-1.5f64).exp()) / 2.0);
    });
}


// ---------------------------------------------------------------------------
// criterion 6: wire protocol golden fixtures
// ---------------------------------------------------------------------------

fn golden_record() -> ImageRecord {
    ImageRecord {
        id: "golden-001".into(),
        image_ref: "https://img.test/golden-001.png".into(),
        true_label: Verdict::AiGenerated,
        generator: "glide".into(),
        dataset: "d".into(),
        split: "s".into(),
    }
}

fn golden_guidance(mode: GuidanceMode, kind: PhraseKind, id: &str) -> GuidanceSpec {
    let family = match (mode, kind) {
        (GuidanceMode::Prompt, _) => "prompt",
        (_, PhraseKind::Cot) => "cot",
        (_, PhraseKind::S2) => "s2",
        _ => unreachable!("unused in golden fixtures"),
    };
    let catalog_id = if mode == GuidanceMode::Prompt { id } else { "default" };
    let text = catalog_lookup(family, catalog_id).unwrap();
    GuidanceSpec::new(mode, kind, id, text).unwrap()
}

fn assert_golden(transcript: &ChatTranscript, params: &DecodeParams, golden: &str) {
    let request = build_request("vlm-7b", transcript, params).unwrap();
    let pretty = serde_json::to_string_pretty(&request).unwrap();
    assert_eq!(format!("{pretty}\n"), golden);
}

#[test]
fn criterion_6_wire_protocol_golden_files() {
    criterion(6, "requests for all modes and both elicitations match the golden bytes", || {
        let record = golden_record();
        let main = DecodeParams::main_run();

        let t = build_initial_transcript(&record, &GuidanceSpec::baseline());
        assert_golden(&t, &main, include_str!("../../client/tests/golden/baseline_initial.json"));

        let prefill = golden_guidance(GuidanceMode::Prefill, PhraseKind::S2, "s2");
        let t = build_initial_transcript(&record, &prefill);
        assert_golden(&t, &main, include_str!("../../client/tests/golden/prefill_initial.json"));

        let g = golden_guidance(GuidanceMode::PseudoPrefill, PhraseKind::Cot, "cot");
        let t = build_initial_transcript(&record, &g);
        assert_golden(
            &t,
            &main,
            include_str!("../../client/tests/golden/pseudo_prefill_initial.json"),
        );

        let g = golden_guidance(GuidanceMode::Prompt, PhraseKind::S2, "s2");
        let t = build_initial_transcript(&record, &g);
        assert_golden(&t, &main, include_str!("../../client/tests/golden/prompt_initial.json"));

        let initial = build_initial_transcript(&record, &prefill);
        let completion = " in the image. The texture looks waxy.";
        let t = build_final_answer_transcript(&initial, completion);
        assert_golden(
            &t,
            &main,
            include_str!("../../client/tests/golden/prefill_final_answer.json"),
        );

        let spans = segment_sentences(completion);
        let partial = partial_response(
            initial.assistant_prefill.as_deref().unwrap(),
            completion,
            &spans,
            0.5,
        );
        let t = build_probe_transcript(&initial, &partial);
        assert_golden(
            &t,
            &DecodeParams::probe(),
            include_str!("../../client/tests/golden/prefill_probe.json"),
        );
    });
}

// ---------------------------------------------------------------------------
// criterion 7: response cache replays a run without network traffic
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_warm_cache_replays_offline() {
    criterion(7, "a warm-cache rerun makes zero network calls and rewrites identical bytes", || {
        // direct pipeline check: the second client never touches the network
        let records =
            vec![record("real-000", "real"), record("glide-000", "glide"), record("glide-001", "glide")];
        let mut entries = Vec::new();
        for (id, answer) in [("real-000", " real."), ("glide-000", " ai-generated."), ("glide-001", " real.")] {
            entries.push(entry(vec![m_prefill("Final Answer"), m_image(id)], answer));
        }
        entries.push(ScriptEntry {
            matcher: None,
            reply: reply(" and the texture looks painted."),
            delay_ms: None,
            times: None,
            status: None,
        });
        let server = MockServer::start(MockScript::new(entries).unwrap()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let guidance = parse_guidance("prefill:cot", None).unwrap();
        let params = DecodeParams::main_run();
        let options = || ClientOptions {
            base_url: server.url().into(),
            model: "vlm-7b".into(),
            retries: 0,
            ..ClientOptions::default()
        };

        let cold = Client::new(
            options(),
            Some(ResponseCache::open(dir.path().join("cache")).unwrap()),
        );
        let first = run_method(&cold, &records, &guidance, &params);
        assert!(first.failures.is_empty());
        assert_eq!(cold.network_calls(), 6);
        let requests_after_first = server.total_requests();
        assert_eq!(requests_after_first, 6);
        drop(cold);

        let warm = Client::new(
            options(),
            Some(ResponseCache::open(dir.path().join("cache")).unwrap()),
        );
        let second = run_method(&warm, &records, &guidance, &params);
        assert!(second.failures.is_empty());
        assert_eq!(warm.network_calls(), 0, "warm run hit the network");
        assert_eq!(server.total_requests(), requests_after_first);
        assert_eq!(
            serde_json::to_string(&first.predictions).unwrap(),
            serde_json::to_string(&second.predictions).unwrap()
        );

        // whole-command check: rerunning the evaluation over the warm cache
        // adds no requests and every result file comes out byte-identical
        let manifest = e2e_manifest();
        let manifest_path = dir.path().join("manifest.jsonl");
        manifest.save(&manifest_path).unwrap();
        let e2e_server = MockServer::start(e2e_script(&manifest)).unwrap();
        let config_for = |out: &str| RunConfig {
            manifest_path: manifest_path.clone(),
            backend: BackendConfig {
                base_url: e2e_server.url().into(),
                api_key: None,
                model: "vlm-7b".into(),
                max_in_flight: 4,
                retries: 0,
                timeout_secs: 30,
                cache_dir: Some(dir.path().join("run-cache")),
            },
            guidance: vec![
                parse_guidance("baseline", None).unwrap(),
                parse_guidance("prefill:s2", None).unwrap(),
            ],
            temperature: 0.0,
            max_tokens: 512,
            seed: 0,
            out_dir: dir.path().join(out),
            bootstrap_iterations: 500,
            bootstrap_level: 0.95,
            target_method: None,
        };
        cmd_run(&config_for("cold-out")).unwrap();
        let requests_after_cold = e2e_server.total_requests();
        assert_eq!(requests_after_cold, 160);
        cmd_run(&config_for("warm-out")).unwrap();
        assert_eq!(e2e_server.total_requests(), requests_after_cold, "warm rerun hit the network");
        for name in [
            "predictions_baseline.jsonl",
            "predictions_prefill_s2.jsonl",
            "metrics.csv",
            "recall.csv",
            "f1_macro.svg",
            "recall.svg",
            "summary.txt",
            "failures.jsonl",
        ] {
            let cold_bytes = std::fs::read(dir.path().join("cold-out").join(name)).unwrap();
            let warm_bytes = std::fs::read(dir.path().join("warm-out").join(name)).unwrap();
            assert_eq!(cold_bytes, warm_bytes, "{name} differs between cold and warm runs");
        }
    });
}

// ---------------------------------------------------------------------------
// criterion 8: concurrency ceiling
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_concurrency_stays_bounded() {
    criterion(8, "ten parallel requests never exceed max_in_flight=4 at the backend", || {
        let script = MockScript::new(vec![ScriptEntry {
            matcher: None,
            reply: reply(" real."),
            delay_ms: Some(80),
            times: None,
            status: None,
        }])
        .unwrap();
        let server = MockServer::start(script).unwrap();
        let client = Client::new(
            ClientOptions {
                base_url: server.url().into(),
                model: "vlm-7b".into(),
                max_in_flight: 4,
                retries: 0,
                ..ClientOptions::default()
            },
            None,
        );

        let records: Vec<ImageRecord> =
            (0..10).map(|i| record(&format!("load-{i:02}"), "glide")).collect();
        let params = DecodeParams::main_run();
        std::thread::scope(|scope| {
            for r in &records {
                let client = &client;
                let params = &params;
                scope.spawn(move || {
                    let transcript = build_initial_transcript(r, &GuidanceSpec::baseline());
                    client.complete(&transcript, params).unwrap();
                });
            }
        });

        assert_eq!(server.total_requests(), 10);
        let peak = server.peak_in_flight();
        assert!(peak <= 4, "peak in-flight {peak} exceeded the limit");
        assert!(peak >= 2, "peak in-flight {peak}; expected real concurrency");
    });
}
