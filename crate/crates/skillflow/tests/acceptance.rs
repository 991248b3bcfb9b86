//! Acceptance checks: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`)
//! before asserting. Tolerances are pinned in the assertions.

use std::time::{Duration, Instant};

use rand::distributions::{Alphanumeric, DistString};
use rand::Rng;

use skillflow::bench::{
    analyze_runs, generate_tasks, run_benchmark, standard_agents, write_bench_csv, BenchMode,
    LatencyModel, TemplateSet,
};
use skillflow::cost::{breakeven_task_count, Breakeven, Perspective, Scenario};
use skillflow::protocol::{
    classify_message, decode_frame, encode_frame, Message, MessageClass, RuleBasedClassifier,
};
use skillflow::rng::{stream_rng, StreamDomain};
use skillflow::sim::{
    cumulative_averages, run_heatmap_sweep, run_ratio_sweep, run_simulation, HeatmapConfig,
    RatioConfig, SimConfig,
};
use skillflow::skill::{sample_cost_profile, AgentId, CostParams, SkillDescriptor};
use skillflow::stats::{bh_fdr_adjust, mean_ci95, welch_t_test};
use skillflow::transport::TcpTransport;
use skillflow::Agent;

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "criterion {criterion:>2}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn final_average(config: &SimConfig, perspective: Perspective) -> f64 {
    let ledger = run_simulation(config).expect("simulation runs");
    *cumulative_averages(&ledger, perspective)
        .last()
        .expect("at least one task")
}

/// Degenerate costs: with σ = 0 the baseline requestor average is exactly
/// the communication mean, and the paid-sharing average at 400 tasks over 20
/// skills is 2.9 ± 0.01 for every one of 100 seeds, in under 5 seconds.
#[test]
fn criterion_01_degenerate_costs_are_exact() {
    let start = Instant::now();
    let params = CostParams::new([14.0, 2.0, 4.0], [0.0; 3], [0.0, 1.0, 1.0]).unwrap();
    let mut paid_averages = Vec::new();
    for seed in 0..100u64 {
        let baseline = SimConfig::new(20, 400, Scenario::Baseline, params, seed).unwrap();
        let b = final_average(&baseline, Perspective::Requestor);
        assert_eq!(b, 4.0, "seed {seed}: baseline requestor average must be exact");
        let paid = SimConfig::new(20, 400, Scenario::SkillFlowPaid, params, seed).unwrap();
        paid_averages.push(final_average(&paid, Perspective::Requestor));
    }
    let mean = paid_averages.iter().sum::<f64>() / paid_averages.len() as f64;
    let elapsed = start.elapsed();
    let pass = (mean - 2.9).abs() <= 0.01 && elapsed < Duration::from_secs(5);
    report(
        1,
        pass,
        &format!(
            "baseline requestor avg exactly 4.000000 on 100 seeds; paid avg {mean:.6} \
             (want 2.9 ± 0.01); {elapsed:.2?} (< 5s)"
        ),
    );
}

/// Noisy costs: with σ = 10 on all channels, paid sharing starts above the
/// baseline (20 tasks) and ends below it (400 tasks), with a final requestor
/// saving in [5%, 30%], averaged over seeds 0..10, in under 10 seconds.
#[test]
fn criterion_02_noisy_crossover_and_saving_band() {
    let start = Instant::now();
    let params = CostParams::new([14.0, 2.0, 4.0], [10.0; 3], [0.0, 1.0, 1.0]).unwrap();
    let seeds: Vec<u64> = (0..10).collect();
    let (mut base20, mut paid20, mut base400, mut paid400) = (0.0, 0.0, 0.0, 0.0);
    for &seed in &seeds {
        let base =
            run_simulation(&SimConfig::new(20, 400, Scenario::Baseline, params, seed).unwrap())
                .unwrap();
        let paid = run_simulation(
            &SimConfig::new(20, 400, Scenario::SkillFlowPaid, params, seed).unwrap(),
        )
        .unwrap();
        let b = cumulative_averages(&base, Perspective::Requestor);
        let p = cumulative_averages(&paid, Perspective::Requestor);
        base20 += b[19];
        paid20 += p[19];
        base400 += b[399];
        paid400 += p[399];
    }
    let n = seeds.len() as f64;
    let (base20, paid20, base400, paid400) = (base20 / n, paid20 / n, base400 / n, paid400 / n);
    let saving = (base400 - paid400) / base400 * 100.0;
    let elapsed = start.elapsed();
    let pass = paid20 > base20
        && paid400 < base400
        && (5.0..=30.0).contains(&saving)
        && elapsed < Duration::from_secs(10);
    report(
        2,
        pass,
        &format!(
            "at 20 tasks paid {paid20:.3} vs baseline {base20:.3} (want above); at 400 paid \
             {paid400:.3} vs baseline {base400:.3} (want below); final requestor saving \
             {saving:.2}% (want 5%..30%); {elapsed:.2?} (< 10s)"
        ),
    );
}

/// System perspective: with the same noisy costs, free sharing saves the
/// two-party system 50%–80% of the baseline cost by 400 tasks.
#[test]
fn criterion_03_system_saving_band() {
    let params = CostParams::new([14.0, 2.0, 4.0], [10.0; 3], [0.0, 1.0, 1.0]).unwrap();
    let seeds: Vec<u64> = (0..10).collect();
    let (mut base, mut flow) = (0.0, 0.0);
    for &seed in &seeds {
        base += final_average(
            &SimConfig::new(20, 400, Scenario::Baseline, params, seed).unwrap(),
            Perspective::System,
        );
        flow += final_average(
            &SimConfig::new(20, 400, Scenario::SkillFlow, params, seed).unwrap(),
            Perspective::System,
        );
    }
    let saving = (base - flow) / base * 100.0;
    let pass = (50.0..=80.0).contains(&saving);
    report(
        3,
        pass,
        &format!("system saving at 400 tasks {saving:.2}% (want 50%..80%)"),
    );
}

/// Ratio sweep: with μ_buy = 4, the baseline-minus-paid requestor difference
/// at 400 tasks changes sign between ratios 0.8 and 1.25, and is zero within
/// its confidence interval at ratio 1.0 (10 seeds per ratio).
#[test]
fn criterion_04_ratio_sign_change() {
    let config = RatioConfig {
        mu_b: 4.0,
        ratios: vec![0.8, 1.0, 1.25],
        ..RatioConfig::default()
    };
    let rows = run_ratio_sweep(&config).unwrap();
    let at = |ratio: f64| {
        rows.iter()
            .find(|r| r.ratio == ratio && r.checkpoint == 400)
            .expect("ratio row present")
    };
    let (low, mid, high) = (at(0.8), at(1.0), at(1.25));
    let pass = low.mean_diff < 0.0 && high.mean_diff > 0.0 && mid.mean_diff.abs() <= mid.ci95;
    report(
        4,
        pass,
        &format!(
            "diff at ratio 0.8 = {:.3} (want < 0); at 1.25 = {:.3} (want > 0); at 1.0 = {:.3} \
             ± {:.3} (want 0 within CI)",
            low.mean_diff, high.mean_diff, mid.mean_diff, mid.ci95
        ),
    );
}

/// Simplex sweep: all 171 integer mean triples summing to 20, at checkpoints
/// {20, 100, 400} with 10 seeds each; the number of requestor-positive cells
/// never decreases as the checkpoint grows, in under 5 minutes.
#[test]
fn criterion_05_heatmap_positive_cells_grow() {
    let start = Instant::now();
    let config = HeatmapConfig::default();
    let rows = run_heatmap_sweep(&config).unwrap();
    let cells = rows.len() / config.checkpoints.len();
    let positive: Vec<usize> = config
        .checkpoints
        .iter()
        .map(|&cp| {
            rows.iter()
                .filter(|r| r.checkpoint == cp && r.mean_diff_requestor > 0.0)
                .count()
        })
        .collect();
    let elapsed = start.elapsed();
    let pass = cells == 171
        && positive.windows(2).all(|w| w[0] <= w[1])
        && elapsed < Duration::from_secs(300);
    report(
        5,
        pass,
        &format!(
            "{cells} triples (want 171); positive cells at {:?} = {positive:?} \
             (want nondecreasing); {elapsed:.2?} (< 5min)",
            config.checkpoints
        ),
    );
}

/// The closed-form breakeven matches an exhaustive scan on 50 random
/// profiles, exactly.
#[test]
fn criterion_06_breakeven_matches_brute_force() {
    let params = CostParams::new([14.0, 2.0, 4.0], [3.0; 3], [0.0, 1.0, 1.0]).unwrap();
    let mut rng = stream_rng(2026, StreamDomain::SkillProfile, 0);
    let mut agreements = 0;
    for case in 0..50 {
        let profile = sample_cost_profile(&params, &mut rng);
        let oracle = breakeven_task_count(&profile);
        let mut brute = Breakeven::Never;
        for k in 1..=200_000u64 {
            if k as f64 * profile.comm >= profile.comm + profile.buy + k as f64 * profile.exec {
                brute = Breakeven::AfterTasks(k);
                break;
            }
        }
        assert_eq!(
            oracle, brute,
            "case {case}: profile buy={} exec={} comm={}",
            profile.buy, profile.exec, profile.comm
        );
        agreements += 1;
    }
    report(6, agreements == 50, &format!("{agreements}/50 profiles agree exactly"));
}

fn random_text(rng: &mut impl Rng) -> String {
    match rng.gen_range(0..4) {
        0 => {
            let len = rng.gen_range(0..40);
            Alphanumeric.sample_string(rng, len)
        }
        1 => {
            // Quote- and escape-heavy content.
            let mut s = String::new();
            for _ in 0..rng.gen_range(0..30) {
                s.push(['"', '\\', '\'', '{', '}', ':', ',', 'a', ' '][rng.gen_range(0..9)]);
            }
            s
        }
        2 => "π∂δσμ✓ — ünïcode ".repeat(rng.gen_range(0..3)),
        _ => {
            let len = rng.gen_range(1..20);
            let mut s = Alphanumeric.sample_string(rng, len);
            s.push('\n');
            s.push('\t');
            s
        }
    }
}

fn random_identifier(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(1..24);
    Alphanumeric.sample_string(rng, len)
}

fn random_message(rng: &mut impl Rng) -> Message {
    match rng.gen_range(0..5) {
        0 => Message::SkillRequest {
            skill: random_identifier(rng),
            requester: AgentId::new(random_identifier(rng)).unwrap(),
            text: random_text(rng),
        },
        1 => {
            let descriptor = if rng.gen() {
                SkillDescriptor::const_string(
                    random_identifier(rng),
                    random_text(rng),
                    random_text(rng),
                )
            } else {
                SkillDescriptor::opaque_text(
                    random_identifier(rng),
                    random_text(rng),
                    random_text(rng),
                )
            }
            .expect("alphanumeric names are valid");
            Message::SkillTransfer { descriptor }
        }
        2 => Message::TaskText {
            text: random_text(rng),
        },
        3 => Message::Ack {
            reference: random_identifier(rng),
        },
        _ => Message::ProtocolError {
            code: random_text(rng),
            detail: random_text(rng),
        },
    }
}

/// Wire robustness: 10,000 random messages round-trip byte-exactly; 10,000
/// random byte strings never crash the decoder; three fixed prompts classify
/// exactly as specified by the rules.
#[test]
fn criterion_07_codec_round_trip_and_total_decoder() {
    let mut rng = stream_rng(7, StreamDomain::TaskSequence, 0);
    for i in 0..10_000 {
        let message = random_message(&mut rng);
        let bytes = encode_frame(&message).expect("encodable");
        let decoded = decode_frame(&bytes).expect("round trip decodes");
        assert_eq!(message, decoded, "case {i}: value round trip");
        let re_encoded = encode_frame(&decoded).expect("re-encodable");
        assert_eq!(bytes, re_encoded, "case {i}: byte-exact round trip");
    }
    for i in 0..10_000 {
        let len = rng.gen_range(0..2048);
        let garbage: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        // Must return (Ok or Err), never panic.
        let _ = decode_frame(&garbage);
        let _ = i;
    }

    let known = vec![
        ("get_weather".to_string(), "returns current weather".to_string()),
    ];
    let classifier = RuleBasedClassifier;
    let ask = classify_message(
        "Hello, could you please share the code for the skill 'get_weather'?",
        &known,
        &classifier,
    );
    let code = classify_message(
        "def get_weather():\n    return \"Sunny, 22C\"",
        &known,
        &classifier,
    );
    let chatter = classify_message("Lovely day for a walk in the park.", &known, &classifier);
    let pass = ask.class == MessageClass::AskingForCode
        && code.class == MessageClass::IncomingCode
        && chatter.class == MessageClass::Continue;
    report(
        7,
        pass,
        &format!(
            "10000 byte-exact round trips; 10000 arbitrary byte strings decoded without \
             panic; classifications: {:?}/{:?}/{:?} (want AskingForCode/IncomingCode/Continue)",
            ask.class, code.class, chatter.class
        ),
    );
}

/// Live transfer: across two real TCP nodes, the requestor acquires a skill,
/// then executes it locally with zero additional messages, and both
/// registers list the requestor as an owner.
#[test]
fn criterion_08_tcp_transfer_then_free_execution() {
    let mut provider = Agent::new(AgentId::new("Provider1").unwrap());
    provider
        .integrate_skill(
            SkillDescriptor::const_string("get_weather", "returns current weather", "Sunny, 22C")
                .unwrap(),
        )
        .unwrap();
    let node = skillflow::node::serve(provider, "127.0.0.1:0").unwrap();
    let addr = node.local_addr();

    let mut requestor = Agent::new(AgentId::new("Assistant").unwrap());
    requestor
        .register_mut()
        .record("get_weather", "returns current weather", AgentId::new("Provider1").unwrap())
        .unwrap();
    let mut transport = TcpTransport::new().with_timeout(Some(Duration::from_secs(2)));
    transport.add_peer(AgentId::new("Provider1").unwrap(), addr).unwrap();

    let acquired = requestor.skill_flow("Please check the weather", &transport).unwrap();
    assert_eq!(acquired, vec!["get_weather".to_string()]);

    let sent_before = requestor.counters().messages_sent;
    let output = requestor.execute_skill("get_weather").unwrap().to_string();
    let sent_after = requestor.counters().messages_sent;

    // The ack may still be in flight; wait for the provider to process it.
    let deadline = Instant::now() + Duration::from_secs(2);
    let mut provider_lists_requestor = false;
    while Instant::now() < deadline {
        let snapshot = node.snapshot();
        if snapshot
            .register
            .lookup("get_weather")
            .iter()
            .any(|o| o.as_str() == "Assistant")
        {
            provider_lists_requestor = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    node.join().unwrap();

    let requestor_lists_self = requestor
        .register()
        .lookup("get_weather")
        .iter()
        .any(|o| o.as_str() == "Assistant");
    let pass = output == "Sunny, 22C"
        && sent_after == sent_before
        && provider_lists_requestor
        && requestor_lists_self;
    report(
        8,
        pass,
        &format!(
            "acquired over TCP; local execution sent {} message(s) (want 0) and returned \
             `{output}`; provider register lists requestor: {provider_lists_requestor}; \
             requestor register lists itself: {requestor_lists_self}",
            sent_after - sent_before
        ),
    );
}

/// Benchmark: at 200 ms remote / 5 ms local, 20 runs of 20 tasks give
/// BH-adjusted q < 0.05 at every iteration from 5 on, a skills-learned curve
/// reaching 7/7, and a final mean at least 30% below baseline, in under 60s.
#[test]
fn criterion_09_benchmark_significance_and_saving() {
    let start = Instant::now();
    let templates = TemplateSet::standard();
    let register = standard_agents().unwrap().0.register().clone();
    let tasks = generate_tasks(&templates, 20, 0, &register).unwrap();
    let latency = LatencyModel {
        remote_call_ms: 200.0,
        local_exec_ms: 5.0,
        ..LatencyModel::default()
    };
    let baseline = run_benchmark(BenchMode::Baseline, &tasks, &latency, 20, 0).unwrap();
    let skillflow = run_benchmark(BenchMode::SkillFlow, &tasks, &latency, 20, 0).unwrap();
    let rows = analyze_runs(&baseline, &skillflow).unwrap();

    let significant_from_5 = rows.iter().filter(|r| r.iteration >= 5).all(|r| r.q < 0.05);
    let all_skills = skillflow.iter().all(|r| {
        r.total_skills == 7 && r.per_iteration.last().map(|it| it.skills_learned) == Some(7)
    });
    // The CSV view reports the same curve as a percentage.
    let mut csv = Vec::new();
    write_bench_csv(&skillflow, &mut csv).unwrap();
    let csv_text = String::from_utf8(csv).unwrap();
    let reaches_100 = csv_text.lines().any(|l| l.ends_with(",100.000000"));

    let last = rows.last().unwrap();
    let saving = (last.mean_baseline - last.mean_skillflow) / last.mean_baseline * 100.0;
    let elapsed = start.elapsed();
    let pass = significant_from_5
        && all_skills
        && reaches_100
        && saving >= 30.0
        && elapsed < Duration::from_secs(60);
    report(
        9,
        pass,
        &format!(
            "q < 0.05 from iteration 5: {significant_from_5}; every run learns 7/7 skills: \
             {all_skills} (csv shows 100%: {reaches_100}); final saving {saving:.1}% \
             (want ≥ 30%); {elapsed:.2?} (< 60s)"
        ),
    );
}

/// Statistics: confidence interval, Welch test, and BH adjustment reproduce
/// hand-computed values to 4 decimal places.
#[test]
fn criterion_10_statistics_match_hand_values() {
    let tol = 1e-4;
    let (mean, ci) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let ci_ok = (mean - 3.0).abs() < tol && (ci - 1.9632431614775607).abs() < tol;

    let welch = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let welch_ok = (welch.statistic - (-1.0)).abs() < tol
        && (welch.df - 8.0).abs() < tol
        && (welch.p_value - 0.34659350708733416).abs() < tol;

    let welch2 = welch_t_test(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
    let welch2_ok = (welch2.statistic - 5.196152422706632).abs() < tol
        && (welch2.df - 2.0).abs() < tol
        && (welch2.p_value - 0.03509871864598465).abs() < tol;

    let q = bh_fdr_adjust(&[0.04, 0.001, 0.03, 0.002]).unwrap();
    let expected = [0.04, 0.004, 0.04, 0.004];
    let bh_ok = q.iter().zip(expected).all(|(a, b)| (a - b).abs() < tol);

    let pass = ci_ok && welch_ok && welch2_ok && bh_ok;
    report(
        10,
        pass,
        &format!(
            "CI ({mean:.4}, {ci:.4}); Welch t={:.4} df={:.4} p={:.4}; Welch t={:.4} p={:.4}; \
             BH {q:?} — all within 1e-4 of hand-computed values",
            welch.statistic, welch.df, welch.p_value, welch2.statistic, welch2.p_value
        ),
    );
}
