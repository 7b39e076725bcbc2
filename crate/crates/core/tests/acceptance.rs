//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use merov::backend::{BackendBinding, BackendClient, Capability, DecodeParams, MockBackend, MockEntry};
use merov::eval::{set_metrics, GroupAssignment, Grouper, LexiconOracle};
use merov::labels::EmotionLabelSet;
use merov::pipeline::ModalitySet;
use merov::prompt::{
    run_strategy, CompositeStrategy, Evidence, HardPromptDesign, LlmSession, PromptEngine, SelectionMode,
};
use merov::report::{build_report, render, ReportFormat, ReportLayout};
use merov::runner::{expand_matrix, CellResult, ExecuteOptions, ExperimentConfig, Runner};
use merov::sampling::{plan_dynamic, plan_fixed};

use common::{script_stage1, workspace_root, ClipSpec, Scenario};

fn main() {
    let criteria: Vec<(&str, fn())> = vec![
        ("metric oracle equivalence (exhaustive, <= 6 labels)", metric_oracle),
        ("worked metric case 0.5 / 0.6667 / 0.5714", worked_metric_case),
        ("synonym, duplicate and symmetry invariants (1,000 cases each)", metric_invariants),
        ("strategy call counts from transcripts", strategy_call_counts),
        ("end-to-end scripted trimodal run, mean F 0.5238", end_to_end_scripted),
        ("sampler index lists and properties (10,000 cases)", sampler_arithmetic),
        ("resume after interruption gives identical predictions", resume_determinism),
        ("modality preset expands to 35 specs", modality_preset_expansion),
        ("replication presets shipped with matching table layouts", presets_and_layouts),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("PASS  {name} ({:.2} s)", start.elapsed().as_secs_f64()),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

const WORDS: [&str; 8] = ["joy", "anger", "fear", "calm", "awe", "envy", "pride", "shame"];

fn set_of(mask: u32, n: usize) -> EmotionLabelSet {
    EmotionLabelSet::from_terms((0..n).filter(|i| mask & (1 << i) != 0).map(|i| WORDS[i]))
}

/// Every set partition of `0..n` as restricted growth strings.
fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn go(i: usize, n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for g in 0..=max + 1 {
            if i == 0 && g > 0 {
                break;
            }
            cur.push(g);
            go(i + 1, n, if i == 0 { 0 } else { max.max(g) }, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, 0, &mut Vec::new(), &mut out);
    out
}

fn assignment(rgs: &[usize]) -> GroupAssignment {
    let groups = rgs.iter().max().map_or(0, |m| m + 1);
    let mut gs = vec![Vec::new(); groups];
    for (i, g) in rgs.iter().enumerate() {
        gs[*g].push(WORDS[i].to_string());
    }
    GroupAssignment::from_groups(gs).unwrap()
}

/// Reference scoring over bitmasks: a group counts for a side when any of
/// its members is on that side.
fn reference(rgs: &[usize], gt: u32, pred: u32) -> (f64, f64, f64) {
    let groups = rgs.iter().max().map_or(0, |m| m + 1);
    let mut masks = vec![0u32; groups];
    for (i, g) in rgs.iter().enumerate() {
        masks[*g] |= 1 << i;
    }
    let hit = |side: u32| masks.iter().filter(|m| *m & side != 0).count();
    let both = masks.iter().filter(|m| *m & gt != 0 && *m & pred != 0).count();
    let (t, p) = (hit(gt), hit(pred));
    let prec = if p == 0 { 0.0 } else { both as f64 / p as f64 };
    let rec = if t == 0 { 0.0 } else { both as f64 / t as f64 };
    let f = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    (prec, rec, f)
}

fn metric_oracle() {
    let start = Instant::now();
    let mut cases = 0u64;
    for n in 1..=6usize {
        let sets: Vec<EmotionLabelSet> = (0..1u32 << n).map(|m| set_of(m, n)).collect();
        for rgs in partitions(n) {
            let asg = assignment(&rgs);
            for gt in 0..1u32 << n {
                for pred in 0..1u32 << n {
                    let m = set_metrics(&sets[gt as usize], &sets[pred as usize], &asg).unwrap();
                    let (p, r, f) = reference(&rgs, gt, pred);
                    assert!(
                        m.precision_s == p && m.recall_s == r && m.f_s == f,
                        "n={n} partition={rgs:?} gt={gt:b} pred={pred:b}: got {m:?}, want ({p}, {r}, {f})"
                    );
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(partitions(6).len(), 203, "Bell(6)");
    assert_eq!(cases, 888_932);
    let took = start.elapsed();
    assert!(took < Duration::from_secs(10), "took {took:?}");
}

fn worked_metric_case() {
    let asg = GroupAssignment::singletons(&["g1", "g2", "g3", "g4", "g5"]);
    let gt = EmotionLabelSet::from_terms(["g1", "g2", "g3"]);
    let pred = EmotionLabelSet::from_terms(["g1", "g2", "g4", "g5"]);
    let m = set_metrics(&gt, &pred, &asg).unwrap();
    // 2 shared groups of 4 predicted and 3 true; F = 2 * 2 / (4 + 3).
    assert!((m.precision_s - 0.5).abs() < 1e-4, "{m:?}");
    assert!((m.recall_s - 2.0 / 3.0).abs() < 1e-4, "{m:?}");
    assert!((m.f_s - 4.0 / 7.0).abs() < 1e-4, "{m:?}");
    assert!((m.f_s - 0.5714).abs() < 1e-4, "{m:?}");
}

/// A random partition of the 8 words plus non-empty gt and pred masks.
fn scenario() -> impl Strategy<Value = (Vec<usize>, u32, u32)> {
    (proptest::collection::vec(0usize..4, 8), 1u32..256, 1u32..256)
}

fn labelled(groups: &[usize]) -> GroupAssignment {
    let mut gs: Vec<Vec<String>> = vec![Vec::new(); 4];
    for (i, g) in groups.iter().enumerate() {
        gs[*g].push(WORDS[i].to_string());
    }
    GroupAssignment::from_groups(gs.into_iter().filter(|g| !g.is_empty()).collect()).unwrap()
}

fn metric_invariants() {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(scenario(), any::<prop::sample::Index>()), |((groups, gt, pred), pick)| {
            let asg = labelled(&groups);
            let base = set_metrics(&set_of(gt, 8), &set_of(pred, 8), &asg).unwrap();
            // Replace one predicted label by a member of its group.
            let members: Vec<usize> = (0..8).filter(|i| pred & (1 << i) != 0).collect();
            let from = members[pick.index(members.len())];
            let peers: Vec<usize> = (0..8).filter(|j| groups[*j] == groups[from]).collect();
            let to = peers[pick.index(peers.len())];
            let swapped = set_of((pred & !(1 << from)) | (1 << to), 8);
            prop_assert_eq!(set_metrics(&set_of(gt, 8), &swapped, &asg).unwrap(), base);
            Ok(())
        })
        .unwrap();
    runner
        .run(&(scenario(), any::<prop::sample::Index>()), |((groups, gt, pred), pick)| {
            let asg = labelled(&groups);
            let base = set_metrics(&set_of(gt, 8), &set_of(pred, 8), &asg).unwrap();
            let dup = |mask: u32| {
                let mut terms: Vec<&str> = (0..8).filter(|i| mask & (1 << i) != 0).map(|i| WORDS[i]).collect();
                let extra = terms[pick.index(terms.len())];
                terms.push(extra);
                terms.insert(0, extra);
                EmotionLabelSet::from_terms(terms)
            };
            prop_assert_eq!(set_metrics(&dup(gt), &set_of(pred, 8), &asg).unwrap(), base);
            prop_assert_eq!(set_metrics(&set_of(gt, 8), &dup(pred), &asg).unwrap(), base);
            Ok(())
        })
        .unwrap();
    runner
        .run(&scenario(), |(groups, gt, pred)| {
            let asg = labelled(&groups);
            let a = set_metrics(&set_of(gt, 8), &set_of(pred, 8), &asg).unwrap();
            let b = set_metrics(&set_of(pred, 8), &set_of(gt, 8), &asg).unwrap();
            prop_assert_eq!(a.precision_s, b.recall_s);
            prop_assert_eq!(a.recall_s, b.precision_s);
            prop_assert!((a.f_s - b.f_s).abs() < 1e-12);
            Ok(())
        })
        .unwrap();
}

fn text_binding() -> BackendBinding {
    BackendBinding {
        backend_id: "llm".into(),
        model_id: "scripted".into(),
        capability: Capability::Text,
        endpoint: "mock:s".into(),
        auth_ref: None,
        decode: DecodeParams::default(),
    }
}

/// Runs `strategy` against a scripted model and returns the number of
/// calls recorded in the transcript.
fn transcript_calls(strategy: CompositeStrategy, decompose: &str) -> usize {
    let mut entries = vec![MockEntry::fifo("llm", "u/l2m/decompose", decompose)];
    entries.extend((0..20).map(|i| MockEntry::fifo("llm", "u/", &format!("Answer {i}: [angry, sad]"))));
    let client = BackendClient::builder()
        .mock("s", MockBackend::from_entries(entries))
        .build()
        .unwrap();
    let engine = PromptEngine::default();
    let evidence = Evidence {
        subtitle: Some("Get out of my sight.".into()),
        ..Default::default()
    };
    let prompt = engine.render_stage2(HardPromptDesign::Std, &evidence, "").unwrap();
    let binding = text_binding();
    let session = LlmSession::new(&client, &binding, "u", vec![7]);
    let grouper = Grouper::lexicon(LexiconOracle::builtin());
    let out = run_strategy(&engine, &session, &strategy, &prompt, Some(&grouper)).unwrap();
    assert!(out.labels.is_some(), "{strategy}: no labels from {:?}", out.final_text);
    assert_eq!(out.calls, client.transcript().len(), "{strategy}: session and transcript disagree");
    client.transcript().len()
}

fn strategy_call_counts() {
    let plain = "No decomposition needed.";
    let three = "1. What does the face show?\n2. What does the voice show?\n3. What do the words say?";
    for k in [2u32, 5] {
        let majority = CompositeStrategy::SelfConsistency {
            k,
            selection: SelectionMode::GroupMajority,
        };
        assert_eq!(transcript_calls(majority, plain), k as usize, "majority k={k}");
        let select = CompositeStrategy::SelfConsistency {
            k,
            selection: SelectionMode::LlmSelect,
        };
        assert_eq!(transcript_calls(select, plain), k as usize + 1, "llm_select k={k}");
    }
    for iters in [1u32, 2] {
        let s = CompositeStrategy::SelfRefine { iters };
        assert_eq!(transcript_calls(s, plain), 1 + 2 * iters as usize, "self-refine iters={iters}");
    }
    for (m, decompose) in [(0usize, plain), (3, three)] {
        assert_eq!(
            transcript_calls(CompositeStrategy::LeastToMost, decompose),
            m + 2,
            "least-to-most m={m}"
        );
    }
}

fn trimodal_scenario() -> Scenario {
    let mut s = Scenario::new(vec![
        ClipSpec {
            id: "a",
            subtitle: "We won! I can't believe it!",
            labels: &["happy", "surprised"],
            audio: true,
        },
        ClipSpec {
            id: "b",
            subtitle: "You broke it again and now you're crying about it?",
            labels: &["angry", "sad", "afraid"],
            audio: true,
        },
        ClipSpec {
            id: "c",
            subtitle: "Fine. Whatever.",
            labels: &["happy"],
            audio: true,
        },
    ]);
    s.settings = "repeats = 1\n".into();
    script_stage1(&mut s, 1);
    // a: exact. b: 2 of 4 predicted groups match 2 of 3 true ones. c: none.
    s.reply("llm", "a/stage2", "[joyful, astonished]", 1);
    s.reply("llm", "b/stage2", "[furious, unhappy, calm, curious]", 1);
    s.reply("llm", "c/stage2", "[sad]", 1);
    s
}

fn end_to_end_scripted() {
    let start = Instant::now();
    let s = trimodal_scenario();
    let cfg = ExperimentConfig::load(s.write("run")).unwrap();
    let runner = Runner::prepare(cfg).unwrap();
    let summary = runner.execute(&ExecuteOptions::default()).unwrap();
    assert_eq!((summary.completed, summary.failed, summary.invalid), (3, 0, 0), "{summary:?}");
    // Two Stage-1 calls and one Stage-2 call per clip.
    assert_eq!(summary.backend_calls, 9);
    let results = runner.evaluate().unwrap();
    assert_eq!(results.len(), 1);
    let m = results[0].metrics.as_ref().unwrap();
    let per_sample_f = [1.0, 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0), 0.0];
    let expected = per_sample_f.iter().sum::<f64>() / 3.0;
    assert!((expected - 0.5238).abs() < 1e-4);
    assert!((m.mean_f_s - expected).abs() < 1e-4, "mean F {}", m.mean_f_s);
    assert!((m.mean_precision_s - (1.0 + 0.5) / 3.0).abs() < 1e-9);
    assert!((m.mean_recall_s - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-9);
    assert_eq!((m.n_samples, m.n_repeats), (3, 1));
    let took = start.elapsed();
    assert!(took < Duration::from_secs(5), "took {took:?}");
}

fn sampler_arithmetic() {
    let fixed: Vec<u64> = (0..24).map(|i| i * 97 / 24).collect();
    assert_eq!(
        fixed,
        [0, 4, 8, 12, 16, 20, 24, 28, 32, 36, 40, 44, 48, 52, 56, 60, 64, 68, 72, 76, 80, 84, 88, 92]
    );
    assert_eq!(plan_fixed(97, 24).unwrap().indices, fixed);
    assert_eq!(plan_dynamic(3.9, 24.9, 2.0).unwrap().indices, [6, 18, 30, 42, 54, 66, 78, 91]);

    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(1u64..5000, 1u64..300), |(total, n)| {
            let idx = plan_fixed(total, n).unwrap().indices;
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(idx.iter().all(|i| *i < total));
            if n >= total {
                prop_assert_eq!(idx, (0..total).collect::<Vec<_>>());
            } else {
                prop_assert_eq!(idx.len() as u64, n);
            }
            Ok(())
        })
        .unwrap();
    runner
        .run(&(0.05f64..600.0, 1.0f64..120.0, 0.1f64..30.0), |(d, fps, rate)| {
            prop_assume!(d * fps >= 1.0);
            let plan = plan_dynamic(d, fps, rate).unwrap();
            let total = (d * fps).floor() as u64;
            prop_assert_eq!(plan.total_frames, total);
            prop_assert!(!plan.indices.is_empty());
            prop_assert!(plan.indices.len() as f64 <= (d * rate).round().max(1.0));
            prop_assert!(plan.indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.indices.iter().all(|i| *i < total));
            Ok(())
        })
        .unwrap();
}

fn resume_scenario() -> Scenario {
    let clips = ["p", "q", "r", "s"]
        .into_iter()
        .map(|id| ClipSpec {
            id,
            subtitle: "Don't look at me like that.",
            labels: &["angry", "hurt"],
            audio: id != "s",
        })
        .collect();
    let mut s = Scenario::new(clips);
    s.settings = concat!(
        "repeats = 2\n",
        "modality_sets = [\"text\", \"video\", \"text+audio\", \"text+video+audio\"]\n",
        "[concurrency]\nworkers = 4\n",
    )
    .into();
    script_stage1(&mut s, 4);
    for id in ["p", "q", "r", "s"] {
        s.reply("llm", &format!("{id}/stage2"), &format!("For {id}: [angry, wounded, calm]"), 16);
    }
    s
}

fn sorted_lines(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect();
    lines.sort();
    lines
}

fn resume_determinism() {
    let s = resume_scenario();
    let whole = Runner::prepare(ExperimentConfig::load(s.write("whole")).unwrap()).unwrap();
    let full = whole.execute(&ExecuteOptions::default()).unwrap();
    assert_eq!(full.completed, full.total_units);
    assert_eq!(full.total_units, 4 * 2 * 4);

    let half = full.total_units / 2;
    let cfg_path = s.write("split");
    let first = Runner::prepare(ExperimentConfig::load(&cfg_path).unwrap()).unwrap();
    let part = first.execute(&ExecuteOptions { stop_after: Some(half) }).unwrap();
    assert!(part.stopped_early && part.completed == half, "{part:?}");
    let run_dir = first.run_dir().to_path_buf();
    drop(first);
    // A write cut short by the kill.
    let mut torn = std::fs::OpenOptions::new()
        .append(true)
        .open(run_dir.join("predictions.jsonl"))
        .unwrap();
    std::io::Write::write_all(&mut torn, b"{\"sample_id\":\"p\",\"spec\":\"").unwrap();
    drop(torn);

    let resumed = Runner::resume(&run_dir).unwrap();
    let rest = resumed.execute(&ExecuteOptions::default()).unwrap();
    assert_eq!(rest.already_complete, half);
    assert_eq!(rest.completed, full.total_units - half);

    let a = sorted_lines(&whole.run_dir().join("predictions.jsonl"));
    let b: Vec<String> = sorted_lines(&run_dir.join("predictions.jsonl"))
        .into_iter()
        .filter(|l| serde_json::from_str::<serde_json::Value>(l).is_ok())
        .collect();
    assert_eq!(a.len(), full.total_units);
    assert!(a == b, "prediction records differ");
    let ma = whole.evaluate().unwrap();
    let mb = resumed.evaluate().unwrap();
    assert_eq!(ma, mb);
}

fn load_preset(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(workspace_root().join("presets").join(format!("{name}.toml"))).unwrap()
}

fn modality_preset_expansion() {
    let cfg = load_preset("modality");
    assert_eq!(cfg.repeats, 5);
    assert_eq!(cfg.variants.len(), 1);
    assert_eq!(cfg.modality_sets, ModalitySet::ALL.to_vec());
    assert_eq!((cfg.llm.len(), cfg.video.len(), cfg.audio.len()), (1, 1, 1));
    let m = expand_matrix(&cfg).unwrap();
    assert_eq!(m.specs.len(), 7 * 5);
    assert_eq!(m.cells(), 7);
    assert!(m.pruned.is_empty());
    let ids: BTreeSet<&String> = m.specs.iter().map(|s| &s.id).collect();
    assert_eq!(ids.len(), 35);
}

/// Fake per-cell results for a preset's matrix.
fn fake_results(cfg: &ExperimentConfig) -> Vec<CellResult> {
    let m = expand_matrix(cfg).unwrap();
    let mut seen = BTreeSet::new();
    m.specs
        .iter()
        .filter(|s| seen.insert(s.cell_id.clone()))
        .enumerate()
        .map(|(i, s)| CellResult {
            cell_id: s.cell_id.clone(),
            axes: merov::runner::axis_values(&s.cell),
            cell: s.cell.clone(),
            metrics: Some(merov::eval::AggregateMetrics {
                mean_precision_s: 0.5 + i as f64 / 1000.0,
                mean_recall_s: 0.6,
                mean_f_s: 0.55,
                n_samples: 332,
                n_repeats: 5,
                invalid_prediction_count: 0,
            }),
            missing_units: 0,
            grouping_fallbacks: 0,
        })
        .collect()
}

fn presets_and_layouts() {
    let layouts = [
        ("modality", ReportLayout::Modality),
        ("prompts", ReportLayout::Prompts),
        ("strategies", ReportLayout::Prompts),
        ("llms", ReportLayout::Models),
        ("video_models", ReportLayout::Models),
        ("audio_models", ReportLayout::Models),
        ("reasoning", ReportLayout::Models),
        ("architectures", ReportLayout::Models),
        ("sampling", ReportLayout::Sampling),
        ("context", ReportLayout::Context),
    ];
    for (name, layout) in layouts {
        let results = fake_results(&load_preset(name));
        let report = build_report(&results, layout).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(report.rows.len(), results.len(), "{name}");
    }

    let md = render(
        &build_report(&fake_results(&load_preset("modality")), ReportLayout::Modality).unwrap(),
        ReportFormat::Markdown,
    );
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines[0], "| Text | Video | Audio | Precision_s [%] | Recall_s [%] | F_s [%] |");
    let marks: Vec<String> = lines[2..]
        .iter()
        .map(|l| l.split('|').skip(1).take(3).map(str::trim).collect::<Vec<_>>().join(""))
        .collect();
    assert_eq!(marks, ["✓××", "×✓×", "××✓", "✓✓×", "✓×✓", "×✓✓", "✓✓✓"]);
    // Recall and F tie across the unimodal block, so all three are marked.
    assert!(lines[2].ends_with("| 50.0 | **60.0** | **55.0** |"), "{}", lines[2]);

    let prompts = load_preset("prompts");
    assert_eq!(prompts.designs, HardPromptDesign::ALL.to_vec());
    assert_eq!(prompts.llm.len(), 7);
    let md = render(
        &build_report(&fake_results(&prompts), ReportLayout::Prompts).unwrap(),
        ReportFormat::Markdown,
    );
    let lines: Vec<&str> = md.lines().collect();
    assert_eq!(lines[0], "| Hard Prompt | LLM | Precision_s [%] | Recall_s [%] | F_s [%] |");
    assert_eq!(lines.len(), 2 + 5 * 7);
    let designs: Vec<&str> = lines[2..].iter().step_by(7).map(|l| l.split('|').nth(1).unwrap().trim()).collect();
    assert_eq!(
        designs,
        ["STD", "Zero-shot-CoT", "Handcrafted Zero-shot", "Handcrafted Few-shot", "Multipersona"]
    );
}
