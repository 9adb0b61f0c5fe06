//! Acceptance suite. Every check runs with scripted agents and stubbed chat
//! replies; each criterion prints one PASS / FAIL / SKIP line.
//!
//! Run with `cargo test -p negotiation-core --test acceptance`.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use negotiation_core::agent::{
    make_scripted_agent, AgentSpec, Backends, ChatModelConfig, ChatRequest, ChatResponse, ChatTransport,
    PolicyParams, TermsSpec, TransportError,
};
use negotiation_core::features::{
    feature_vector, score_mimicry, FeatureRow, Lexicon, LexiconSet, MatchMode,
};
use negotiation_core::pipeline::{read_analysis_rows, HeatCell, Pipeline, RunConfig, RunSummaryReport, Stage, TournamentSummary};
use negotiation_core::scenario::{built_in, enumerate_frontier, evaluate_assignment, Assignment, ScenarioSpec};
use negotiation_core::scoring::{extract_agreement, extraction_request, score_outcome, Extractor, OutcomeRow};
use negotiation_core::session::{
    detect_termination, run_session, SessionSetup, Status, SviInstrument, Termination, Transcript, Utterance,
    TRANSCRIPT_SCHEMA_VERSION,
};
use negotiation_core::stats::{
    build_design, estimate, fit_model, multiway_vcov, ClusterDim, Design, Family, ModelSpec, ObservationRow, TermSet,
};
use negotiation_core::style::{icc_3_1, pearson_r, RatingsMatrix, StyleScores};
use negotiation_core::table::read_table;
use negotiation_core::tournament::{build_schedule, run_tournament, schedule_size, RunOptions, TournamentState};
use negotiation_core::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

enum Verdict {
    Pass,
    Fail(String),
    Skip(String),
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn run_criterion(number: usize, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let started = Instant::now();
    let verdict = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Verdict::Fail(message)
        }
    };
    let elapsed = started.elapsed();
    let verdict = match (verdict, budget) {
        (Verdict::Pass, Some(b)) if elapsed > b => {
            Verdict::Fail(format!("took {:.2}s, budget {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64()))
        }
        (v, _) => v,
    };
    let secs = elapsed.as_secs_f64();
    match &verdict {
        Verdict::Pass => println!("criterion {number:>2} PASS {name} ({secs:.2}s)"),
        Verdict::Fail(why) => println!("criterion {number:>2} FAIL {name} ({secs:.2}s): {why}"),
        Verdict::Skip(why) => println!("criterion {number:>2} SKIP {name}: {why}"),
    }
    !matches!(verdict, Verdict::Fail(_))
}

fn verdict(check: Check) -> Verdict {
    match check {
        Ok(()) => Verdict::Pass,
        Err(e) => Verdict::Fail(e),
    }
}

// ---------------------------------------------------------------------------
// Payoff tables, transcribed option by option (A..E).

type Table = [(&'static str, [i64; 5], [i64; 5])];

const RENTAL_ROLES: [&str; 2] = ["landlord", "tenant"];
const RENTAL: &Table = &[
    ("rent", [450, 650, 850, 1050, 1250], [1250, 1050, 850, 650, 450]),
    ("deposit", [0, 225, 450, 675, 900], [1100, 1000, 900, 800, 700]),
    ("start_date", [1100, 1000, 900, 800, 700], [0, 225, 450, 675, 900]),
    ("contract_length", [650, 525, 400, 275, 150], [650, 525, 400, 275, 150]),
];

const EMPLOYMENT_ROLES: [&str; 2] = ["consultant", "coo"];
const EMPLOYMENT: &Table = &[
    ("lump_sum_fee", [200, 400, 600, 800, 1000], [1500, 1200, 900, 600, 300]),
    ("discretionary_budget", [300, 600, 900, 1200, 1500], [1000, 800, 600, 400, 200]),
    ("travel_expenses", [150, 300, 450, 600, 750], [750, 600, 450, 300, 150]),
    ("invoice_frequency", [250, 200, 150, 100, 50], [250, 200, 150, 100, 50]),
];

const LABELS: [&str; 5] = ["A", "B", "C", "D", "E"];

fn compare_table(spec: &ScenarioSpec, roles: [&str; 2], table: &Table) -> Check {
    ensure!(spec.issues.len() == table.len(), "{}: {} issues, expected {}", spec.id, spec.issues.len(), table.len());
    for (issue, (name, first, second)) in spec.issues.iter().zip(table) {
        ensure!(issue.name == *name, "{}: issue `{}`, expected `{name}`", spec.id, issue.name);
        ensure!(issue.options.len() == 5, "{}/{name}: {} options", spec.id, issue.options.len());
        for (k, option) in issue.options.iter().enumerate() {
            ensure!(option.label == LABELS[k], "{}/{name}: label {}", spec.id, option.label);
            for (role, expected) in roles.iter().zip([first[k], second[k]]) {
                let got = option.points.get(*role).copied();
                ensure!(got == Some(expected), "{}/{name}/{}/{role}: {got:?} != {expected}", spec.id, option.label);
            }
        }
    }
    Ok(())
}

fn column_sums(spec: &ScenarioSpec, issue: &str) -> Vec<i64> {
    spec.issue(issue)
        .expect("issue exists")
        .options
        .iter()
        .map(|o| o.points.values().sum())
        .collect()
}

fn criterion_1() -> Check {
    let rental = built_in("rental").map_err(|e| e.to_string())?;
    let employment = built_in("employment").map_err(|e| e.to_string())?;
    compare_table(&rental, RENTAL_ROLES, RENTAL)?;
    compare_table(&employment, EMPLOYMENT_ROLES, EMPLOYMENT)?;
    ensure!(column_sums(&rental, "rent").iter().all(|&s| s == 1700), "rent sums {:?}", column_sums(&rental, "rent"));
    let travel = column_sums(&employment, "travel_expenses");
    ensure!(travel.iter().all(|&s| s == 900), "travel sums {travel:?}");
    let invoice = employment.issue("invoice_frequency").unwrap();
    for role in EMPLOYMENT_ROLES {
        let best = invoice.options.iter().max_by_key(|o| o.points[role]).unwrap();
        ensure!(best.label == "A", "invoice best for {role} is {}", best.label);
    }
    let chair = built_in("chair").map_err(|e| e.to_string())?;
    let batnas: BTreeMap<&str, Option<f64>> = chair.roles.iter().map(|r| (r.name.as_str(), r.batna_price)).collect();
    ensure!(batnas["buyer"] == Some(120.0) && batnas["seller"] == Some(40.0), "chair BATNAs {batnas:?}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn brute_force_joint(table: &Table) -> i64 {
    let mut best = i64::MIN;
    for a in 0..5 {
        for b in 0..5 {
            for c in 0..5 {
                for d in 0..5 {
                    let total: i64 = [a, b, c, d]
                        .iter()
                        .zip(table)
                        .map(|(&k, (_, first, second))| first[k] + second[k])
                        .sum();
                    best = best.max(total);
                }
            }
        }
    }
    best
}

fn criterion_2() -> Check {
    for (id, table, expected) in [("rental", RENTAL, 6200), ("employment", EMPLOYMENT, 4800)] {
        let spec = built_in(id).map_err(|e| e.to_string())?;
        let oracle = brute_force_joint(table);
        ensure!(oracle == expected, "{id}: brute force {oracle}, expected {expected}");
        for exec in [Execution::Sequential, Execution::Parallel] {
            let f = enumerate_frontier(&spec, exec).map_err(|e| e.to_string())?;
            ensure!(f.max_joint == expected as f64, "{id}: frontier {} != {expected}", f.max_joint);
            ensure!(f.evaluated == 625, "{id}: evaluated {}", f.evaluated);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn criterion_3() -> Check {
    let chair = built_in("chair").map_err(|e| e.to_string())?;
    let buyer = chair.role_index("buyer").unwrap();
    let seller = chair.role_index("seller").unwrap();
    for price in 40..=120 {
        let v = evaluate_assignment(&chair, &Assignment::Price(price as f64)).map_err(|e| e.to_string())?;
        ensure!(v.per_role[buyer] == (120 - price) as f64, "buyer at {price}: {}", v.per_role[buyer]);
        ensure!(v.per_role[seller] == (price - 40) as f64, "seller at {price}: {}", v.per_role[seller]);
        ensure!(v.per_role[0] + v.per_role[1] == 80.0, "sum at {price}: {:?}", v.per_role);
    }
    let impasse = evaluate_assignment(&chair, &Assignment::Impasse).map_err(|e| e.to_string())?;
    ensure!(impasse.per_role == [0.0, 0.0], "impasse {:?}", impasse.per_role);
    Ok(())
}

// ---------------------------------------------------------------------------

fn utterance(index: usize, role: &str, agent: &str, text: &str) -> Utterance {
    Utterance {
        index,
        speaker_agent_id: agent.into(),
        role_name: role.into(),
        text: text.into(),
        truncated: false,
    }
}

/// A transcript with the given utterances, alternating between the
/// scenario's two roles starting with the first.
fn transcript(spec: &ScenarioSpec, texts: &[&str], termination: Termination) -> Transcript {
    let roles = [spec.roles[0].name.clone(), spec.roles[1].name.clone()];
    let agents = ["alpha", "beta"];
    let role_map: BTreeMap<String, String> =
        roles.iter().zip(agents).map(|(r, a)| (r.clone(), a.to_string())).collect();
    Transcript {
        schema_version: TRANSCRIPT_SCHEMA_VERSION,
        negotiation_id: format!("fixture-{}-{}", spec.id, texts.len()),
        scenario_id: spec.id.clone(),
        role_map,
        first_mover: roles[0].clone(),
        seed: 0,
        utterances: texts
            .iter()
            .enumerate()
            .map(|(i, t)| utterance(i, &roles[i % 2], agents[i % 2], t))
            .collect(),
        termination,
        abort_cause: None,
        svi: BTreeMap::new(),
        usage: Default::default(),
    }
}

fn criterion_4() -> Check {
    let cases = [("rental", 0.0, 0.0), ("employment", 500.0, 1000.0)];
    for (id, each, created) in cases {
        let spec = built_in(id).map_err(|e| e.to_string())?;
        let t = transcript(&spec, &["[[WALKAWAY]]"], Termination::Walkaway);
        let o = score_outcome(&t, &spec, &Assignment::Impasse).map_err(|e| e.to_string())?;
        ensure!(!o.deal, "{id}: impasse scored as deal");
        for seat in &o.seats {
            ensure!(seat.value_claimed == each, "{id}: {} claimed {}", seat.role, seat.value_claimed);
            ensure!(seat.points == Some(each as i64), "{id}: {} points {:?}", seat.role, seat.points);
            ensure!(seat.proportion_of_pie == Some(0.0), "{id}: pie share {:?}", seat.proportion_of_pie);
        }
        ensure!(o.value_created == created, "{id}: value created {}", o.value_created);
    }

    let rental = built_in("rental").map_err(|e| e.to_string())?;
    let partial = "Agreed. [[ACCEPT rent=C; deposit=E; start_date=E]]";
    ensure!(
        detect_termination(&[utterance(0, "tenant", "beta", partial)], &rental) == Status::Continue,
        "a close missing an issue ended the session"
    );
    let t = transcript(&rental, &["[[OFFER rent=C; deposit=E; start_date=E]]", partial], Termination::CapReached);
    let terms = extract_agreement(&t, &rental, Extractor::MarkerProtocol).map_err(|e| e.to_string())?;
    ensure!(terms == Assignment::Impasse, "marker extractor returned {terms:?}");
    let reply = r#"{"agreement": true, "terms": {"rent": "C", "deposit": "E", "start_date": "E"}}"#;
    let backends = stub_backends(HashMap::from([(request_key(&t, &rental), reply.to_string())]));
    let model = ChatModelConfig::default();
    let terms = extract_agreement(&t, &rental, Extractor::ModelAssisted { backends: &backends, model: &model })
        .map_err(|e| e.to_string())?;
    ensure!(terms == Assignment::Impasse, "model extractor returned {terms:?}");
    let o = score_outcome(&t, &rental, &terms).map_err(|e| e.to_string())?;
    ensure!(o.value_created == 0.0 && !o.deal, "incomplete close scored {:?}", o.value_created);
    Ok(())
}

// ---------------------------------------------------------------------------

fn scripted(id: &str, policy: &str, params: PolicyParams) -> AgentSpec {
    make_scripted_agent(policy, params).expect("known policy").with_id(id)
}

fn three_agents() -> Vec<AgentSpec> {
    vec![
        scripted("concede", "fixed_concession", PolicyParams::default()),
        scripted("accept", "immediate_acceptor", PolicyParams::default()),
        scripted(
            "wall",
            "stonewaller",
            PolicyParams {
                patience: Some(3),
                ..PolicyParams::default()
            },
        ),
    ]
}

fn exercise_ids() -> Vec<String> {
    ["chair", "rental", "employment"].map(String::from).to_vec()
}

fn criterion_5() -> Check {
    let roster = three_agents();
    let exercises = exercise_ids();
    let schedule = build_schedule(&roster, &exercises, 11).map_err(|e| e.to_string())?;
    for ex in &exercises {
        let rows: Vec<_> = schedule.iter().filter(|p| &p.exercise == ex).collect();
        ensure!(rows.len() == 9, "{ex}: {} pairings", rows.len());
        for a in &roster {
            let seats = rows.iter().filter(|p| p.first_role_agent == a.agent_id).count()
                + rows.iter().filter(|p| p.second_role_agent == a.agent_id).count();
            ensure!(seats == 6, "{ex}/{}: {seats} role-seats", a.agent_id);
        }
    }

    let big: Vec<AgentSpec> = (0..199)
        .map(|i| scripted(&format!("agent{i:03}"), "immediate_acceptor", PolicyParams::default()))
        .collect();
    let schedule = build_schedule(&big, &exercises, 11).map_err(|e| e.to_string())?;
    ensure!(schedule.len() == 118_803, "total {}", schedule.len());
    ensure!(schedule_size(199, 3) == 118_803, "schedule_size {}", schedule_size(199, 3));
    for ex in &exercises {
        let n = schedule.iter().filter(|p| &p.exercise == ex).count();
        ensure!(n == 39_601, "{ex}: {n} pairings");
    }
    let openers = schedule.iter().filter(|p| p.first_mover == 0).count();
    ensure!(openers.abs_diff(schedule.len() - openers) <= 3, "first-mover split {openers}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn criterion_6(scratch: &Path) -> Check {
    let instrument = SviInstrument::bundled();
    let chair = built_in("chair").map_err(|e| e.to_string())?;
    let seller = chair.role_index("seller").unwrap();
    let ladder = vec![TermsSpec::Price(150.0), TermsSpec::Price(130.0), TermsSpec::Price(110.0)];
    let fc = scripted("concede", "fixed_concession", PolicyParams { ladder, ..PolicyParams::default() });
    let acc = scripted("accept", "immediate_acceptor", PolicyParams::default());
    let mut agents = [&acc, &acc];
    agents[seller] = &fc;
    let setup = SessionSetup {
        scenario: &chair,
        agents,
        first_mover: seller,
        seed: 5,
        instrument,
    };
    let backends = Backends::scripted_only();
    let t = run_session(&setup, &backends);
    ensure!(t.utterances.len() == 2, "chair session took {} utterances", t.utterances.len());
    ensure!(t.termination == Termination::Accepted, "chair session ended {}", t.termination);
    let terms = extract_agreement(&t, &chair, Extractor::MarkerProtocol).map_err(|e| e.to_string())?;
    ensure!(terms == Assignment::Price(150.0), "chair terms {terms:?}");

    let rental = built_in("rental").map_err(|e| e.to_string())?;
    let landlord = rental.role_index("landlord").unwrap();
    let first_step = "rent=E; deposit=E; start_date=A; contract_length=A";
    let fc = scripted(
        "concede",
        "fixed_concession",
        PolicyParams {
            ladder: vec![TermsSpec::Terms(first_step.into()), TermsSpec::Terms("rent=D; deposit=D; start_date=B; contract_length=A".into())],
            ..PolicyParams::default()
        },
    );
    let mut agents = [&acc, &acc];
    agents[landlord] = &fc;
    let setup = SessionSetup { scenario: &rental, agents, first_mover: landlord, seed: 9, instrument };
    let t = run_session(&setup, &backends);
    ensure!(t.utterances.len() == 2, "rental session took {} utterances", t.utterances.len());
    let terms = extract_agreement(&t, &rental, Extractor::MarkerProtocol).map_err(|e| e.to_string())?;
    let expected = TermsSpec::Terms(first_step.into()).resolve(&rental).unwrap();
    ensure!(terms == expected, "rental terms {terms:?}");

    let scenarios: Vec<ScenarioSpec> = exercise_ids().iter().map(|id| built_in(id).unwrap()).collect();
    let run = |dir: &Path, stop_after: Option<usize>| -> Result<(), String> {
        let mut state = TournamentState::new(three_agents(), scenarios.clone(), 3).map_err(|e| e.to_string())?;
        let mut options = RunOptions::new(dir, "acceptance");
        options.stop_after = stop_after;
        options.concurrency = 3;
        run_tournament(&mut state, &options, &backends).map_err(|e| e.to_string())?;
        Ok(())
    };
    let whole = scratch.join("uninterrupted");
    let resumed = scratch.join("resumed");
    std::fs::create_dir_all(&whole).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&resumed).map_err(|e| e.to_string())?;
    run(&whole, None)?;
    run(&resumed, Some(7))?;
    let partial = std::fs::read(resumed.join("transcripts.jsonl")).map_err(|e| e.to_string())?;
    let partial_lines = partial.iter().filter(|&&b| b == b'\n').count();
    ensure!(partial_lines < 27, "interrupted run completed {partial_lines} sessions");
    run(&resumed, None)?;
    let a = std::fs::read(whole.join("transcripts.jsonl")).map_err(|e| e.to_string())?;
    let b = std::fs::read(resumed.join("transcripts.jsonl")).map_err(|e| e.to_string())?;
    ensure!(a.iter().filter(|&&c| c == b'\n').count() == 27, "uninterrupted run is incomplete");
    ensure!(a == b, "resumed transcript set differs from the uninterrupted one");
    Ok(())
}

// ---------------------------------------------------------------------------

fn fixture_lexicons() -> LexiconSet {
    let lex = |name: &str, phrases: &[&str]| Lexicon::from_phrases(name, phrases, MatchMode::WordBoundary).unwrap();
    LexiconSet {
        hedges: lex("hedges", &["maybe", "perhaps", "i think"]),
        apologies: lex("apologies", &["sorry", "i apologize"]),
        gratitude: lex("gratitude", &["thank you", "thanks", "appreciate"]),
        first_person_plural: lex("first_person_plural", &["we", "us", "our"]),
        polarity: Lexicon::parse("polarity", "good\t0.5\nbad\t-1.0\ngreat\t1.0\nfine\t0.25\n").unwrap(),
    }
}

const FIXTURE: [&str; 6] = [
    "Maybe we could agree on sixty?",
    "Sorry, sixty is bad. Perhaps eighty?",
    "Thank you. Perhaps eighty is fine, maybe seventy?",
    "We think seventy is good. Thanks!",
    "Great, thank you! Our deal at seventy?",
    "Deal at seventy.",
];

fn criterion_7() -> Check {
    let chair = built_in("chair").map_err(|e| e.to_string())?;
    let t = transcript(&chair, &FIXTURE, Termination::CapReached);
    let (first, second) = (chair.roles[0].name.as_str(), chair.roles[1].name.as_str());
    let lexicons = fixture_lexicons();

    // Term weights ln(7/(1+df)) + 1 over the six utterances; every term
    // occurs once per utterance it appears in.
    let idf = |df: f64| (7.0 / (1.0 + df)).ln() + 1.0;
    let (i1, i2, i3, i4) = (idf(1.0), idf(2.0), idf(3.0), idf(4.0));
    let (s1, s2, s3, s4) = (i1 * i1, i2 * i2, i3 * i3, i4 * i4);
    let norm = [
        3.0 * s2 + 3.0 * s1,
        2.0 * s1 + 3.0 * s2 + s3,
        5.0 * s2 + s3 + s1 + s4,
        s2 + 3.0 * s1 + s4 + s3,
        2.0 * s1 + 4.0 * s2 + s4,
        2.0 * s2 + s4,
    ];
    let dot = [s2, 2.0 * s2 + s3, s3 + s4, s4, 2.0 * s2 + s4];
    let cos = |k: usize| dot[k - 1] / (norm[k] * norm[k - 1]).sqrt();
    let second_mimicry = (cos(1) + cos(3) + cos(5)) / 3.0;
    let first_mimicry = (cos(2) + cos(4)) / 2.0;

    let a = feature_vector(&t, first, &lexicons);
    let b = feature_vector(&t, second, &lexicons);
    let m = |v: Option<f64>| v.ok_or("missing feature".to_string());
    ensure!(close(m(a.mimicry)?, first_mimicry, 1e-9), "{first} mimicry {:?} vs {first_mimicry}", a.mimicry);
    ensure!(close(m(b.mimicry)?, second_mimicry, 1e-9), "{second} mimicry {:?} vs {second_mimicry}", b.mimicry);

    let exact = [
        ("hedges", a.hedges, 1.0, b.hedges, 1.0 / 3.0),
        ("apologies", a.apologies, 0.0, b.apologies, 1.0 / 3.0),
        ("gratitude", a.gratitude, 2.0 / 3.0, b.gratitude, 1.0 / 3.0),
        ("first_person_plural", a.first_person_plural, 2.0 / 3.0, b.first_person_plural, 1.0 / 3.0),
        ("message_length", a.message_length, 7.0, b.message_length, 5.0),
        ("questions", a.questions, 1.0, b.questions, 1.0 / 3.0),
        ("positivity", a.positivity, 1.25 / 3.0, b.positivity, -0.5 / 3.0),
    ];
    for (name, got_a, want_a, got_b, want_b) in exact {
        ensure!(got_a == Some(want_a), "{first} {name}: {got_a:?} != {want_a}");
        ensure!(got_b == Some(want_b), "{second} {name}: {got_b:?} != {want_b}");
    }

    let mirror = scripted("echo", "mirror", PolicyParams::default());
    let wall = scripted("wall", "stonewaller", PolicyParams::default());
    let setup = SessionSetup {
        scenario: &chair,
        agents: [&wall, &mirror],
        first_mover: 0,
        seed: 13,
        instrument: SviInstrument::bundled(),
    };
    let t = run_session(&setup, &Backends::scripted_only());
    let mimicry = score_mimicry(&t, second);
    ensure!(mimicry == Some(1.0), "mirror mimicry {mimicry:?}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Linear algebra for the oracles, independent of the estimator's QR and
// Cholesky routes.

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let tail: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - tail) / a[i][i];
    }
    x
}

fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|j| solve(a.to_vec(), (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()))
        .collect();
    (0..n).map(|i| (0..n).map(|j| columns[j][i]).collect()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, m, p) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..p).map(|j| (0..m).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
}

fn gram(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = x[0].len();
    (0..p).map(|i| (0..p).map(|j| x.iter().map(|r| r[i] * r[j]).sum()).collect()).collect()
}

fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let xty: Vec<f64> = (0..p).map(|j| x.iter().zip(y).map(|(r, v)| r[j] * v).sum()).collect();
    solve(gram(x), xty)
}

fn synthetic_rows(n: usize, seed: u64) -> Vec<ObservationRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let w: f64 = rng.random_range(0.0..100.0);
            let d: f64 = rng.random_range(0.0..100.0);
            let noise: f64 = rng.random_range(-10.0..10.0);
            ObservationRow {
                y: 5.0 + 0.3 * w - 0.1 * d + 0.002 * w * d + noise,
                warmth: w,
                dominance: d,
                cluster_agent: format!("a{}", i % 13),
                cluster_dyad: format!("d{}", i % 29),
                cluster_negotiation: format!("n{}", i / 2),
                exercise: "chair".into(),
            }
        })
        .collect()
}

/// Thirty agent-observations shaped like tournament output: fifteen
/// two-seat negotiations among six agents, each agent shifting its own
/// outcomes, so the three cluster dimensions cross.
fn tournament_rows() -> Vec<ObservationRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let effect: Vec<f64> = (0..6).map(|_| rng.random_range(-8.0..8.0)).collect();
    let style: Vec<(f64, f64)> = (0..6).map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0))).collect();
    let mut rows = Vec::new();
    for a in 0..6usize {
        for b in a + 1..6 {
            let shared: f64 = rng.random_range(-4.0..4.0);
            for (me, other) in [(a, b), (b, a)] {
                let (w, d) = style[me];
                rows.push(ObservationRow {
                    y: 2.0 + 0.2 * w - 0.05 * d + effect[me] - 0.5 * effect[other] + shared + rng.random_range(-3.0..3.0),
                    warmth: w + rng.random_range(-5.0..5.0),
                    dominance: d + rng.random_range(-5.0..5.0),
                    cluster_agent: format!("a{me}"),
                    cluster_dyad: format!("d{a}-{b}"),
                    cluster_negotiation: format!("n{a}-{b}"),
                    exercise: "chair".into(),
                });
            }
        }
    }
    rows
}

fn raw_spec(family: Family, terms: TermSet, dims: Vec<ClusterDim>) -> ModelSpec {
    ModelSpec {
        standardize: false,
        cluster_dims: dims,
        ..ModelSpec::new(family, terms)
    }
}

fn zscore(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    values.iter().map(|v| (v - mean) / sd).collect()
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn sandwich_oracle(x: &[Vec<f64>], residuals: &[f64], linked: impl Fn(usize, usize) -> bool) -> Vec<Vec<f64>> {
    let p = x[0].len();
    let scores: Vec<Vec<f64>> = x.iter().zip(residuals).map(|(r, e)| r.iter().map(|v| v * e).collect()).collect();
    let mut meat = vec![vec![0.0; p]; p];
    for i in 0..x.len() {
        for j in 0..x.len() {
            if linked(i, j) {
                for a in 0..p {
                    for b in 0..p {
                        meat[a][b] += scores[i][a] * scores[j][b];
                    }
                }
            }
        }
    }
    let bread = invert(&gram(x));
    matmul(&matmul(&bread, &meat), &bread)
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)
}

fn criterion_8() -> Check {
    let rows = synthetic_rows(200, 2024);
    for terms in [TermSet::Main, TermSet::Interaction, TermSet::Quadratic] {
        let fit = estimate("y", &rows, &raw_spec(Family::Linear, terms, vec![])).map_err(|e| e.to_string())?;
        let x: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let (w, d) = (r.warmth, r.dominance);
                match terms {
                    TermSet::Main => vec![1.0, w, d],
                    TermSet::Interaction => vec![1.0, w, d, w * d],
                    TermSet::Quadratic => vec![1.0, w, d, w * w, d * d],
                }
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
        let oracle = normal_equations(&x, &y);
        for (k, (got, want)) in fit.coefficients.iter().zip(&oracle).enumerate() {
            ensure!(close(*got, *want, 1e-8), "OLS {terms:?} coefficient {k}: {got} vs {want}");
        }
    }

    let w: Vec<f64> = rows.iter().map(|r| r.warmth).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.dominance).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let (zw, zd, zy) = (zscore(&w), zscore(&d), zscore(&y));
    let x: Vec<Vec<f64>> = (0..rows.len()).map(|i| vec![1.0, zw[i], zd[i]]).collect();
    let oracle = normal_equations(&x, &zy);
    let mut spec = ModelSpec::new(Family::Linear, TermSet::Main);
    spec.cluster_dims.clear();
    let fit = estimate("y", &rows, &spec).map_err(|e| e.to_string())?;
    for (k, (got, want)) in fit.coefficients.iter().zip(&oracle).enumerate() {
        ensure!(close(*got, *want, 1e-8), "standardized coefficient {k}: {got} vs {want}");
    }

    let n = 200;
    let design = Design {
        x: DMatrix::from_element(n, 1, 1.0),
        y: DVector::from_fn(n, |i, _| (i % 2) as f64),
        labels: vec!["intercept".into()],
        scaling: vec![],
    };
    let fit = fit_model(&design, Family::Logistic).map_err(|e| e.to_string())?;
    ensure!(close(fit.coefficients[0], 0.0, 1e-8), "balanced logistic intercept {}", fit.coefficients[0]);

    let mut singles = synthetic_rows(60, 7);
    for (i, r) in singles.iter_mut().enumerate() {
        r.cluster_negotiation = format!("solo{i}");
    }
    let spec = raw_spec(Family::Linear, TermSet::Main, vec![]);
    let design = build_design(&singles, &spec).map_err(|e| e.to_string())?;
    let fit = fit_model(&design, Family::Linear).map_err(|e| e.to_string())?;
    let robust = multiway_vcov(&fit, &design, &singles, &[ClusterDim::Negotiation], false).map_err(|e| e.to_string())?;
    let x = matrix_rows(&design.x);
    let e: Vec<f64> = fit.residuals.iter().copied().collect();
    let hc0 = sandwich_oracle(&x, &e, |i, j| i == j);
    let got = matrix_rows(&robust.matrix);
    let diff = max_abs_diff(&got, &hc0);
    ensure!(diff <= 1e-10 * max_abs(&hc0).max(1.0), "singleton CGM vs HC0 differ by {diff:e}");

    let rows30 = tournament_rows();
    let design = build_design(&rows30, &spec).map_err(|e| e.to_string())?;
    let fit = fit_model(&design, Family::Linear).map_err(|e| e.to_string())?;
    let robust = multiway_vcov(&fit, &design, &rows30, &ClusterDim::ALL, false).map_err(|e| e.to_string())?;
    ensure!(!robust.truncated, "three-way fixture was eigen-truncated");
    let x = matrix_rows(&design.x);
    let e: Vec<f64> = fit.residuals.iter().copied().collect();
    let shares = |i: usize, j: usize| {
        let (a, b) = (&rows30[i], &rows30[j]);
        a.cluster_agent == b.cluster_agent || a.cluster_dyad == b.cluster_dyad || a.cluster_negotiation == b.cluster_negotiation
    };
    let oracle = sandwich_oracle(&x, &e, shares);
    let got = matrix_rows(&robust.matrix);
    let diff = max_abs_diff(&got, &oracle);
    ensure!(diff <= 1e-9 * max_abs(&oracle).max(1.0), "three-way CGM vs score summation differ by {diff:e}");

    for family in [Family::Linear, Family::Logistic] {
        let data: Vec<ObservationRow> = match family {
            Family::Linear => rows.clone(),
            Family::Logistic => rows
                .iter()
                .enumerate()
                .map(|(i, r)| ObservationRow {
                    y: if r.y > 20.0 + (i % 7) as f64 * 3.0 { 1.0 } else { 0.0 },
                    ..r.clone()
                })
                .collect(),
        };
        let plain = estimate("y", &data, &ModelSpec { cluster_dims: vec![], ..ModelSpec::new(family, TermSet::Main) })
            .map_err(|e| e.to_string())?;
        for dims in [vec![ClusterDim::Agent], ClusterDim::ALL.to_vec()] {
            let clustered = estimate("y", &data, &ModelSpec { cluster_dims: dims.clone(), ..ModelSpec::new(family, TermSet::Main) })
                .map_err(|e| e.to_string())?;
            ensure!(clustered.coefficients == plain.coefficients, "{family:?} coefficients moved under {dims:?}");
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

/// Six targets rated by four judges; the textbook worked example for the
/// ICC family, whose ICC(3,1) is 0.71.
const JUDGES: [[f64; 4]; 6] = [
    [9.0, 2.0, 5.0, 8.0],
    [6.0, 1.0, 3.0, 2.0],
    [8.0, 4.0, 6.0, 8.0],
    [7.0, 1.0, 2.0, 6.0],
    [10.0, 5.0, 6.0, 9.0],
    [6.0, 2.0, 4.0, 7.0],
];

fn anova_icc(grid: &[[f64; 4]]) -> f64 {
    let n = grid.len() as f64;
    let k = 4.0;
    let grand = grid.iter().flatten().sum::<f64>() / (n * k);
    let ss_total: f64 = grid.iter().flatten().map(|v| (v - grand).powi(2)).sum();
    let ss_rows: f64 = grid.iter().map(|r| k * (r.iter().sum::<f64>() / k - grand).powi(2)).sum();
    let ss_cols: f64 = (0..4)
        .map(|j| n * (grid.iter().map(|r| r[j]).sum::<f64>() / n - grand).powi(2))
        .sum();
    let ss_error = ss_total - ss_rows - ss_cols;
    let bms = ss_rows / (n - 1.0);
    let ems = ss_error / ((n - 1.0) * (k - 1.0));
    (bms - ems) / (bms + (k - 1.0) * ems)
}

fn criterion_9() -> Check {
    let perfect = RatingsMatrix::from_rows((0..8).map(|i| vec![i as f64 * 10.0; 3]).collect()).map_err(|e| e.to_string())?;
    let icc = icc_3_1(&perfect).map_err(|e| e.to_string())?;
    ensure!(close(icc, 1.0, 1e-12), "perfect agreement ICC {icc}");
    let grid = RatingsMatrix::from_rows(JUDGES.iter().map(|r| r.to_vec()).collect()).map_err(|e| e.to_string())?;
    let icc = icc_3_1(&grid).map_err(|e| e.to_string())?;
    let oracle = anova_icc(&JUDGES);
    ensure!(close(icc, oracle, 1e-9), "ICC {icc} vs oracle {oracle}");
    ensure!(close(icc, 0.71, 0.005), "ICC {icc} vs published 0.71");
    let x: Vec<f64> = (0..20).map(|i| (i as f64).sin() * 40.0 + 50.0).collect();
    let r = pearson_r(&x, &x).map_err(|e| e.to_string())?;
    ensure!(r == 1.0, "pearson_r(x, x) = {r}");
    Ok(())
}

// ---------------------------------------------------------------------------

struct RecordedTransport {
    replies: HashMap<String, String>,
}

impl ChatTransport for RecordedTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let key = request.messages.last().map(|m| m.content.clone()).unwrap_or_default();
        self.replies
            .get(&key)
            .map(|content| ChatResponse { content: content.clone(), usage: Default::default() })
            .ok_or_else(|| TransportError::Fatal("no recorded reply for this request".into()))
    }
}

fn stub_backends(replies: HashMap<String, String>) -> Backends {
    Backends::new(Arc::new(RecordedTransport { replies }))
}

fn request_key(t: &Transcript, spec: &ScenarioSpec) -> String {
    let request = extraction_request(t, spec, &ChatModelConfig::default());
    request.messages.last().unwrap().content.clone()
}

/// What a careful coder reports for a transcript, read from the rendered
/// request text alone: the terms restated in the closing acceptance, or no
/// agreement.
fn coder_reply(request_text: &str, ended_in_acceptance: bool) -> String {
    let last_line = request_text.lines().rev().find(|l| l.starts_with('[')).unwrap_or("");
    let accepted = last_line
        .find("[[ACCEPT")
        .and_then(|start| last_line[start + 8..].split_once("]]").map(|(body, _)| body.trim().to_string()));
    match accepted.filter(|_| ended_in_acceptance) {
        None => "No agreement was reached.\n{\"agreement\": false}".into(),
        Some(body) => {
            let pairs: Vec<(String, String)> = body
                .split(';')
                .filter_map(|p| p.split_once('='))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect();
            if let [(key, value)] = pairs.as_slice() {
                if key == "price" {
                    return format!("{{\"agreement\": true, \"price\": {value}}}");
                }
            }
            let terms: Vec<String> = pairs.iter().map(|(k, v)| format!("\"{k}\": \"{v}\"")).collect();
            format!("Final terms:\n{{\"agreement\": true, \"terms\": {{{}}}}}", terms.join(", "))
        }
    }
}

fn fixture_transcripts(scratch: &Path) -> Result<Vec<Transcript>, String> {
    let roster = vec![
        scripted("accept", "immediate_acceptor", PolicyParams::default()),
        scripted("concede", "fixed_concession", PolicyParams::default()),
        scripted("wall", "stonewaller", PolicyParams { patience: Some(4), ..PolicyParams::default() }),
        scripted("echo", "mirror", PolicyParams::default()),
        scripted("quiet", "silent", PolicyParams::default()),
    ];
    let scenarios: Vec<ScenarioSpec> = exercise_ids().iter().map(|id| built_in(id).unwrap()).collect();
    let mut state = TournamentState::new(roster, scenarios, 21).map_err(|e| e.to_string())?;
    let dir = scratch.join("extraction");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let options = RunOptions::new(&dir, "extraction");
    run_tournament(&mut state, &options, &Backends::scripted_only()).map_err(|e| e.to_string())?;
    let mut transcripts = negotiation_core::session::read_transcripts(&options.store_path).map_err(|e| e.to_string())?;

    let rental = built_in("rental").unwrap();
    let employment = built_in("employment").unwrap();
    transcripts.push(transcript(
        &rental,
        &["[[OFFER rent=C; deposit=E; start_date=E; contract_length=A]]", "[[ACCEPT rent=C; deposit=E; start_date=E]]"],
        Termination::CapReached,
    ));
    transcripts.push(transcript(
        &employment,
        &["[[OFFER lump_sum_fee=A; discretionary_budget=E; travel_expenses=C; invoice_frequency=A]]", "I am leaving. [[WALKAWAY]]"],
        Termination::Walkaway,
    ));
    Ok(transcripts)
}

fn criterion_10(scratch: &Path) -> Check {
    let transcripts = fixture_transcripts(scratch)?;
    let specs: HashMap<String, ScenarioSpec> =
        exercise_ids().into_iter().map(|id| (id.clone(), built_in(&id).unwrap())).collect();
    let mut replies = HashMap::new();
    for t in &transcripts {
        let key = request_key(t, &specs[&t.scenario_id]);
        let reply = coder_reply(&key, t.termination == Termination::Accepted);
        replies.insert(key, reply);
    }
    let backends = stub_backends(replies);
    let model = ChatModelConfig::default();
    let mut agree = 0;
    let mut deals = 0;
    for t in &transcripts {
        let spec = &specs[&t.scenario_id];
        let marker = extract_agreement(t, spec, Extractor::MarkerProtocol).map_err(|e| e.to_string())?;
        let assisted = extract_agreement(t, spec, Extractor::ModelAssisted { backends: &backends, model: &model })
            .map_err(|e| e.to_string())?;
        ensure!(marker == assisted, "{}: marker {marker:?} vs model {assisted:?}", t.negotiation_id);
        agree += 1;
        deals += usize::from(!marker.is_impasse());
    }
    ensure!(agree == transcripts.len() && deals > 0 && deals < agree, "degenerate fixture: {deals} deals of {agree}");
    Ok(())
}

// ---------------------------------------------------------------------------

fn criterion_11() -> Verdict {
    let Some(dir) = std::env::var_os("NEGOTIATE_REPLICATION_DIR").map(PathBuf::from) else {
        return Verdict::Skip("published transcript/outcome data not available (set NEGOTIATE_REPLICATION_DIR)".into());
    };
    verdict((|| -> Check {
        let (_, outcomes): (_, Vec<OutcomeRow>) = read_table(&dir.join("outcomes.csv"), None).map_err(|e| e.to_string())?;
        let (_, styles): (_, Vec<StyleScores>) = read_table(&dir.join("style.csv"), None).map_err(|e| e.to_string())?;
        let style: HashMap<&str, &StyleScores> = styles.iter().map(|s| (s.agent_id.as_str(), s)).collect();
        let rows: Vec<ObservationRow> = outcomes
            .iter()
            .filter(|o| o.exercise == "chair")
            .filter_map(|o| {
                let s = style.get(o.agent_id.as_str())?;
                Some(ObservationRow {
                    y: o.value_claimed,
                    warmth: s.warmth as f64,
                    dominance: s.dominance as f64,
                    cluster_agent: o.cluster_agent.clone(),
                    cluster_dyad: o.cluster_dyad.clone(),
                    cluster_negotiation: o.cluster_negotiation.clone(),
                    exercise: o.exercise.clone(),
                })
            })
            .collect();
        let fit = estimate("value_claimed", &rows, &ModelSpec::new(Family::Linear, TermSet::Main)).map_err(|e| e.to_string())?;
        ensure!(close(fit.coefficients[1], 0.10, 0.005), "warmth {}", fit.coefficients[1]);
        ensure!(close(fit.coefficients[2], 0.09, 0.005), "dominance {}", fit.coefficients[2]);
        Ok(())
    })())
}

// ---------------------------------------------------------------------------

fn criterion_12(scratch: &Path) -> Check {
    let desk = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk");
    let out = scratch.join("desk");
    let text = format!(
        "roster = {:?}\nscenarios = [\"chair\", \"rental\", \"employment\"]\noutput_dir = {:?}\nseed = 7\nconcurrency = 4\n\n[style]\nsource = \"synthetic\"\n",
        desk.join("roster.toml").display().to_string(),
        out.display().to_string()
    );
    let config = RunConfig::parse(&text, "desk").map_err(|e| e.to_string())?;
    let pipeline = Pipeline::from_config(config, scratch).map_err(|e| e.to_string())?;
    ensure!(pipeline.roster.len() == 5, "roster has {} agents", pipeline.roster.len());
    let outcome = pipeline.run(&Stage::ALL, &Backends::scripted_only()).map_err(|e| e.to_string())?;
    ensure!(outcome.stages == Stage::ALL.to_vec(), "stages run: {:?}", outcome.stages);
    let hash = Some(pipeline.config_hash.as_str());
    let a = &pipeline.artifacts;
    let err = |e: &dyn std::fmt::Display| e.to_string();

    let summary: TournamentSummary =
        serde_json::from_str(&std::fs::read_to_string(&a.tournament).map_err(|e| err(&e))?).map_err(|e| err(&e))?;
    ensure!(summary.finished && summary.completed == 75 && summary.failed.is_empty(), "tournament {summary:?}");
    let transcripts = negotiation_core::session::read_transcripts(&a.transcripts).map_err(|e| err(&e))?;
    ensure!(transcripts.len() == 75, "{} transcripts", transcripts.len());

    let (_, outcomes): (_, Vec<OutcomeRow>) = read_table(&a.outcomes, hash).map_err(|e| err(&e))?;
    ensure!(outcomes.len() == 150, "{} outcome rows", outcomes.len());
    let (_, features): (_, Vec<FeatureRow>) = read_table(&a.features, hash).map_err(|e| err(&e))?;
    ensure!(features.len() == 150, "{} feature rows", features.len());
    let (_, styles): (_, Vec<StyleScores>) = read_table(&a.style, hash).map_err(|e| err(&e))?;
    ensure!(styles.len() == 5, "{} style rows", styles.len());
    ensure!(styles.iter().all(|s| s.warmth <= 100 && s.dominance <= 100), "style scores out of range");
    let analysis = read_analysis_rows(&std::fs::read_to_string(&a.analysis_csv).map_err(|e| err(&e))?, hash).map_err(|e| err(&e))?;
    ensure!(!analysis.is_empty(), "analysis table is empty");
    ensure!(std::fs::metadata(&a.analysis_text).map(|m| m.len() > 0).unwrap_or(false), "analysis text missing");
    let mut grids = 0;
    for entry in std::fs::read_dir(&a.heatmaps).map_err(|e| err(&e))? {
        let path = entry.map_err(|e| err(&e))?.path();
        let (_, cells): (_, Vec<HeatCell>) = read_table(&path, hash).map_err(|e| err(&e))?;
        ensure!(!cells.is_empty(), "{} is empty", path.display());
        grids += 1;
    }
    ensure!(grids > 0, "no heat-map grids written");
    let report: RunSummaryReport =
        serde_json::from_str(&std::fs::read_to_string(&a.report_json).map_err(|e| err(&e))?).map_err(|e| err(&e))?;
    ensure!(report.exercises.len() == 3 && report.models > 0, "report covers {} exercises", report.exercises.len());
    ensure!(std::fs::metadata(&a.report_text).map(|m| m.len() > 0).unwrap_or(false), "report text missing");
    Ok(())
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let s = scratch.path();
    let secs = |n| Some(Duration::from_secs(n));
    let results = [
        run_criterion(1, "payoff-table fidelity", secs(1), || verdict(criterion_1())),
        run_criterion(2, "frontier oracle", secs(1), || verdict(criterion_2())),
        run_criterion(3, "distributive conservation", secs(1), || verdict(criterion_3())),
        run_criterion(4, "impasse coding", None, || verdict(criterion_4())),
        run_criterion(5, "schedule math", secs(5), || verdict(criterion_5())),
        run_criterion(6, "session determinism and resume", secs(10), || verdict(criterion_6(s))),
        run_criterion(7, "linguistic oracle", secs(1), || verdict(criterion_7())),
        run_criterion(8, "stats oracles", secs(10), || verdict(criterion_8())),
        run_criterion(9, "ICC and correlation", secs(1), || verdict(criterion_9())),
        run_criterion(10, "extractor agreement", None, || verdict(criterion_10(s))),
        run_criterion(11, "conditional replication", None, criterion_11),
        run_criterion(12, "end-to-end desk tournament", secs(300), || verdict(criterion_12(s))),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} of {} criteria without failure", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
