//! Acceptance suite: one PASS/FAIL line per criterion. Failures exit nonzero
//! only under `RELOOP_ACCEPTANCE_STRICT=1`. Long criteria train the bundled
//! demo configuration on five seeds.

mod common;

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reloop_core::feedback::{FactBagScorer, TokenF1Scorer};
use reloop_core::gating::{Action, Bucket, Cause};
use reloop_core::harness::{
    demo_config, evaluate, inject_answer_noise, inject_teacher_noise, train_and_evaluate, Cell, Entity, EvalContext,
    Event, MetricsReport, Protocol, Relation, RunSummary,
};
use reloop_core::pseudo::{fallback_k, PseudoConfig};
use reloop_core::train::{TrainConfig, Trainer, EPOCH_CSV_HEADER};
use reloop_core::vocab::tokenize;
use reloop_core::{acw_gamma, screen_answer, AggregatorParams, HallucType, Sample, SceneGrid, Vocab};

const SEEDS: std::ops::Range<u64> = 0..5;
/// Minimum relative hallucination reduction of the full loop over sft-only.
const MIN_REL_REDUCTION: f64 = 0.20;
/// Largest allowed change in hallucination rate under 15% teacher noise.
const MAX_TEACHER_SHIFT: f64 = 0.05;
const NOISE_FRACTION: f64 = 0.15;
const GRAD_TOL: f64 = 1e-4;
const ORACLE_TOL: f64 = 1e-9;
const RESUM_TOL: f64 = 1e-9;
const FIXTURE_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> String {
    format!("{:.2}s of {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn acw_sweep() -> Outcome {
    let t = Instant::now();
    let mut bad = Vec::new();
    for i in 0..=1000 {
        let s = i as f64 / 1000.0;
        let (want, bucket) = if s >= 0.8 {
            (1.0, Bucket::High)
        } else if s >= 0.6 {
            (0.1, Bucket::Medium)
        } else {
            (0.01, Bucket::Low)
        };
        let g = acw_gamma(s).unwrap();
        if g.value != want || g.bucket != bucket {
            bad.push(s);
        }
    }
    let edges = acw_gamma(0.80).unwrap().value == 1.0 && acw_gamma(0.60).unwrap().value == 0.1;
    let invalid = [-0.001, 1.001, f64::NAN].iter().all(|s| acw_gamma(*s).is_err());
    let el = t.elapsed();
    let limit = Duration::from_secs(1);
    outcome(
        bad.is_empty() && edges && invalid && el < limit,
        format!(
            "1001 scores, {} mismatches, 0.80->1.0 and 0.60->0.1: {edges}, {}",
            bad.len(),
            within(el, limit)
        ),
    )
}

fn pseudo_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut fallback, mut flat) = (0, 0);
    let mut mismatch = 0;
    for _ in 0..1000 {
        let (att, mask, cfg, rows, cols) = common::random_pseudo_instance(&mut rng);
        let stack = reloop_core::AttentionStack::from_nested(&att).unwrap();
        let got = reloop_core::build_pseudo(&stack, &mask, &cfg, rows, cols).unwrap();
        let want = common::oracle(&att, &mask, &cfg, rows, cols);
        let same = got.confident == want.confident
            && got.used_fallback == want.fallback
            && got.flat_vote == want.flat
            && got
                .weights
                .iter()
                .zip(&want.weights)
                .all(|(a, b)| (a - b).abs() <= ORACLE_TOL);
        mismatch += usize::from(!same);
        fallback += usize::from(want.fallback);
        flat += usize::from(want.flat);
    }
    // crafted flat votes: mirrored peaks and uniform rows
    let crafted: [(common::Nested, Vec<bool>, usize, usize); 2] = [
        (
            vec![vec![vec![vec![0.9, 0.1]]], vec![vec![vec![0.1, 0.9]]]],
            vec![false; 2],
            1,
            2,
        ),
        (vec![vec![vec![vec![1.0 / 9.0; 9]]]; 3], vec![false; 3], 3, 3),
    ];
    for (att, mask, rows, cols) in &crafted {
        let stack = reloop_core::AttentionStack::from_nested(att).unwrap();
        let got = reloop_core::build_pseudo(&stack, mask, &PseudoConfig::default(), *rows, *cols).unwrap();
        let want = common::oracle(att, mask, &PseudoConfig::default(), *rows, *cols);
        let same = got.flat_vote
            && want.flat
            && got
                .weights
                .iter()
                .zip(&want.weights)
                .all(|(a, b)| (a - b).abs() <= ORACLE_TOL);
        mismatch += usize::from(!same);
        flat += 1;
    }
    let el = t.elapsed();
    let limit = Duration::from_secs(30);
    outcome(
        mismatch == 0 && fallback > 0 && flat > 0 && el < limit,
        format!(
            "1002 instances, {mismatch} mismatches at tol {ORACLE_TOL:e}, {fallback} fallback, {flat} flat, {}",
            within(el, limit)
        ),
    )
}

fn constants() -> Outcome {
    let p = PseudoConfig::default();
    let d = demo_config().pseudo;
    let k_ok = fallback_k(250) == 3 && fallback_k(1) == 1 && fallback_k(100) == 1 && fallback_k(101) == 2;
    let pass = p.tau == 2.0 && p.temp_a == 0.7 && p.kappa == 1.5 && p.sigma == 0.8 && d == p && k_ok;
    outcome(
        pass,
        format!(
            "tau {} temp_a {} kappa {} sigma {}, k(250) = {}",
            p.tau,
            p.temp_a,
            p.kappa,
            p.sigma,
            fallback_k(250)
        ),
    )
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = [0.0f64; 4];
    for seed in 0..50 {
        let errs = [
            common::sft_error(seed),
            common::attn_error(seed),
            common::reg_error(seed, 1e-5),
            common::score_function_error(seed),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    let el = t.elapsed();
    let limit = Duration::from_secs(60);
    outcome(
        worst.iter().all(|e| *e < GRAD_TOL) && el < limit,
        format!(
            "50 seeds up to V=16 d=8 S=16, max rel err sft {:.1e} attn {:.1e} reg {:.1e} score {:.1e} (tol {GRAD_TOL:e}), {}",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            within(el, limit)
        ),
    )
}

fn breakdown(runs: &[RunSummary]) -> Outcome {
    let worst = runs.iter().map(|r| r.max_resum_error).fold(0.0, f64::max);
    let n: usize = runs.iter().map(|r| r.records).sum();
    outcome(
        worst <= RESUM_TOL,
        format!("{n} trace records, max |resum - total| {worst:.1e}"),
    )
}

fn rates(r: &MetricsReport) -> String {
    format!(
        "{:.4} (obj {:.3} attr {:.3} rel {:.3} evt {:.3})",
        r.halluc_rate.value,
        r.halluc_object.value,
        r.halluc_attribute.value,
        r.halluc_relation.value,
        r.halluc_event.value
    )
}

fn closed_loop(full: &[RunSummary], sft: &[RunSummary], elapsed: Duration) -> Outcome {
    for (s, (f, b)) in SEEDS.zip(full.iter().zip(sft)) {
        println!(
            "       seed {s}: full {} | sft-only {}",
            rates(&f.report),
            rates(&b.report)
        );
    }
    let mf = mean(full.iter().map(|r| r.report.halluc_rate.value));
    let ms = mean(sft.iter().map(|r| r.report.halluc_rate.value));
    let rel = (ms - mf) / ms;
    let limit = Duration::from_secs(300);
    outcome(
        rel >= MIN_REL_REDUCTION && elapsed < limit,
        format!(
            "n=512, 5 seeds: mean halluc full {mf:.4} vs sft-only {ms:.4}, relative reduction {:.1}% (need {:.0}%), {}",
            100.0 * rel,
            100.0 * MIN_REL_REDUCTION,
            within(elapsed, limit)
        ),
    )
}

fn teacher_noise(clean: &[RunSummary], noisy: &[RunSummary]) -> Outcome {
    let mc = mean(clean.iter().map(|r| r.report.halluc_rate.value));
    let mn = mean(noisy.iter().map(|r| r.report.halluc_rate.value));
    let vc = mean(clean.iter().map(|r| r.train_visual_similarity));
    let vn = mean(noisy.iter().map(|r| r.train_visual_similarity));
    let shift = (mn - mc).abs();
    outcome(
        shift < MAX_TEACHER_SHIFT && vn < vc,
        format!(
            "15% noise: halluc {mc:.4} -> {mn:.4} ({:.2}pp, limit {:.0}pp), visual similarity {vc:.4} -> {vn:.4}",
            100.0 * shift,
            100.0 * MAX_TEACHER_SHIFT
        ),
    )
}

fn answer_noise(clean: &[RunSummary], noisy: &[RunSummary]) -> Outcome {
    let hc = mean(clean.iter().map(|r| r.train_gamma.0));
    let hn = mean(noisy.iter().map(|r| r.train_gamma.0));
    let lc = mean(clean.iter().map(|r| r.train_gamma.2));
    let ln = mean(noisy.iter().map(|r| r.train_gamma.2));
    let gammas: Vec<f64> = noisy.iter().flat_map(|r| r.noised_gammas.iter().copied()).collect();
    let all_low = !gammas.is_empty() && gammas.iter().all(|g| *g == 0.01);
    outcome(
        hn < hc && ln > lc && all_low,
        format!(
            "15% noise: gamma=1.0 share {hc:.4} -> {hn:.4}, gamma=0.01 share {lc:.4} -> {ln:.4}, \
             {} surviving noised records all at 0.01: {all_low}",
            gammas.len()
        ),
    )
}

fn safeguards() -> Outcome {
    let vocab = Vocab::standard();
    let rows: [(&str, Action, Option<Cause>); 5] = [
        ("", Action::Reject, Some(Cause::EmptyOutput)),
        ("I'm not sure.", Action::Reject, Some(Cause::TooShort)),
        (
            "Banana banana banana sky help!",
            Action::Reject,
            Some(Cause::Repetition),
        ),
        ("Apples grow in the summer.", Action::Accept, None),
        (
            "Grockling spinners do fleeb!",
            Action::Reject,
            Some(Cause::NonsenseTokens),
        ),
    ];
    let mut bad = Vec::new();
    for (text, action, cause) in &rows {
        let v = screen_answer(&vocab, &tokenize(text));
        if v.action != *action || v.cause != *cause {
            bad.push(format!("{text:?} -> {:?}/{:?}", v.action, v.cause));
        }
    }
    let samples = Protocol::default().train_set(0).unwrap();
    let batch: Vec<&Sample> = samples.iter().take(8).collect();
    let cfg = TrainConfig {
        epochs: 1,
        ..demo_config()
    };

    // the accepted but unrelated answer lands in the lowest weight bucket
    let mut t = Trainer::new(cfg.clone(), vocab.clone())
        .unwrap()
        .with_forced_answers(|_| Some(tokenize("Apples grow in the summer.")));
    let low = t
        .train_step(&batch)
        .unwrap()
        .iter()
        .all(|r| r.verdict.accepted() && r.gamma.map(|g| g.value) == Some(0.01));

    // a rejected batch moves the model exactly as supervised training alone
    let mut full = Trainer::new(cfg.clone(), vocab.clone())
        .unwrap()
        .with_forced_answers(|_| Some(Vec::new()));
    let mut sft = Trainer::new(cfg.sft_only(), vocab).unwrap();
    let before = full.model.clone();
    full.train_step(&batch).unwrap();
    sft.train_step(&batch).unwrap();
    let same_delta = full.model == sft.model && full.model != before;
    outcome(
        bad.is_empty() && low && same_delta,
        format!(
            "5 rows, {} wrong {bad:?}; unrelated answer gamma 0.01: {low}; rejected delta == sft-only delta: {same_delta}",
            bad.len()
        ),
    )
}

fn w(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Two-cell scene: a brown dog on the table, running, and a white cat under the sofa.
fn fixture_sample(id: usize) -> Sample {
    let mut scene = SceneGrid::empty(1, 2);
    scene.cells[0] = Cell {
        entity: Some(Entity {
            object: "dog".into(),
            attribute: "brown".into(),
        }),
        background: Some("table".into()),
    };
    scene.cells[1] = Cell {
        entity: Some(Entity {
            object: "cat".into(),
            attribute: "white".into(),
        }),
        background: Some("sofa".into()),
    };
    scene.relations = vec![
        Relation {
            subject: "dog".into(),
            relation: "on".into(),
            landmark: "table".into(),
        },
        Relation {
            subject: "cat".into(),
            relation: "under".into(),
            landmark: "sofa".into(),
        },
    ];
    scene.event = Some(Event {
        actor: "dog".into(),
        action: "running".into(),
    });
    Sample {
        id,
        scene,
        question: w("what color is the dog ?"),
        answer: w("the dog is brown"),
        halluc_type: HallucType::Attribute,
        key: "dog".into(),
        is_contrastive: false,
        source_id: None,
        teacher_noise: false,
        answer_noise: false,
    }
}

fn metric_fixtures() -> Outcome {
    let vocab = Vocab::standard();
    let agg = AggregatorParams::zeros(2).unwrap();
    let visual = FactBagScorer::new(vocab.clone());
    let ctx = EvalContext {
        vocab: &vocab,
        aggregator: &agg,
        text: &TokenF1Scorer,
        visual: &visual,
        candidates: 5,
        pseudo: PseudoConfig::default(),
        seed: 0,
    };
    // responses, then CHAIR_I, CHAIR_S, F1, Faith, Faith_S derived by hand
    let fixtures: [(&str, &[&str], [f64; 5]); 5] = [
        ("exact", &["the dog is brown"], [0.0, 0.0, 1.0, 1.0, 1.0]),
        ("absent object", &["the bus is brown"], [1.0, 1.0, 0.5, 0.0, 0.0]),
        (
            "one wrong statement",
            &["the dog is brown , the cat is black"],
            [0.0, 0.0, 2.0 / 3.0, 0.5, 0.75],
        ),
        (
            "wrong relation",
            &["the dog is on the sofa"],
            [0.0, 0.0, 0.4, 0.0, 2.0 / 3.0],
        ),
        (
            "two responses",
            &["the dog is brown", "the horse"],
            [0.5, 0.5, 4.0 / 7.0, 0.5, 2.0 / 3.0],
        ),
    ];
    let mut bad = Vec::new();
    for (name, responses, want) in fixtures {
        let samples: Vec<Sample> = (0..responses.len()).map(fixture_sample).collect();
        let probes: Vec<&Sample> = samples.iter().collect();
        let mut responder = |s: &Sample| w(responses[s.id]);
        let r = evaluate(&mut responder, &probes, &ctx).unwrap();
        let got = [r.chair_i.value, r.chair_s.value, r.f1, r.faith.value, r.faith_s.value];
        if got.iter().zip(&want).any(|(a, b)| (a - b).abs() > FIXTURE_TOL) {
            bad.push(format!("{name}: {got:?} vs {want:?}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!("5 fixtures over CHAIR_I, CHAIR_S, F1, Faith, Faith_S; failures {bad:?}"),
    )
}

fn run_csvs(cfg: &TrainConfig) -> String {
    let protocol = Protocol::default();
    let train = protocol.train_set(cfg.seed).unwrap();
    let heldout = protocol.heldout_set(cfg.seed).unwrap();
    let r = train_and_evaluate(cfg, &train, &heldout, &mut |_| Ok(())).unwrap();
    let mut out = format!("{EPOCH_CSV_HEADER}\n");
    for e in &r.epochs {
        out.push_str(&e.csv_row());
        out.push('\n');
    }
    out + &r.report.to_csv()
}

fn determinism() -> Outcome {
    let cfg = TrainConfig {
        epochs: 3,
        ..demo_config()
    };
    let a = run_csvs(&cfg);
    let b = run_csvs(&cfg);
    outcome(
        a == b,
        format!(
            "two synth -> train -> eval runs, {} CSV bytes, identical: {}",
            a.len(),
            a == b
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("acw-sweep", acw_sweep());
    report("pseudo-oracle", pseudo_oracle());
    report("pseudo-constants", constants());
    report("gradient-checks", gradients());

    let protocol = Protocol::default();
    let t = Instant::now();
    let (mut full, mut sft) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let cfg = TrainConfig { seed, ..demo_config() };
        let train = protocol.train_set(seed).unwrap();
        let heldout = protocol.heldout_set(seed).unwrap();
        full.push(train_and_evaluate(&cfg, &train, &heldout, &mut |_| Ok(())).unwrap());
        sft.push(train_and_evaluate(&cfg.clone().sft_only(), &train, &heldout, &mut |_| Ok(())).unwrap());
    }
    let closed = closed_loop(&full, &sft, t.elapsed());
    report("loss-breakdown", breakdown(&full));
    report("closed-loop-benefit", closed);

    let (mut teacher, mut answer) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let cfg = TrainConfig { seed, ..demo_config() };
        let train = protocol.train_set(seed).unwrap();
        let heldout = protocol.heldout_set(seed).unwrap();
        let noised = inject_teacher_noise(&train, NOISE_FRACTION, seed).unwrap();
        teacher.push(train_and_evaluate(&cfg, &noised, &heldout, &mut |_| Ok(())).unwrap());
        let noised = inject_answer_noise(&train, NOISE_FRACTION, seed).unwrap();
        answer.push(train_and_evaluate(&cfg, &noised, &heldout, &mut |_| Ok(())).unwrap());
    }
    report("teacher-noise", teacher_noise(&full, &teacher));
    report("answer-noise", answer_noise(&full, &answer));
    report("safeguards", safeguards());
    report("metric-fixtures", metric_fixtures());
    report("determinism", determinism());

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        if std::env::var_os("RELOOP_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
            std::process::exit(1);
        }
        println!("set RELOOP_ACCEPTANCE_STRICT=1 to turn failures into a nonzero exit");
    }
}
