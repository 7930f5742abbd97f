use std::path::{Path, PathBuf};

use eqa_core::exploration::FrontierCandidate;
use eqa_core::mapping::SemanticMap;
use eqa_core::oracle::{DirectionQuery, RelevancyScorer, SampleKind, ScriptedDirectionOracle, ScriptedOracleConfig};
use eqa_core::relevancy::{SyntheticScorer, SyntheticScorerConfig};
use eqa_core::scene::{load_scene, Coord, Observation, Pose, QuestionTask, SceneGrid};
use statrs::distribution::{ContinuousCDF, Normal};

fn apartment() -> SceneGrid {
    load_scene(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/apartment_small.json")).unwrap()
}

fn lamp_task(targets: &[&str]) -> QuestionTask {
    QuestionTask {
        id: "lamp".into(),
        scene: PathBuf::from("apartment_small.json"),
        start: Pose::new(2.5, 2.5, 0.0),
        question: "What is the state of the lamp in the living room?".into(),
        ground_truth: "on".into(),
        targets: targets.iter().map(|s| s.to_string()).collect(),
    }
}

/// One-sample Kolmogorov-Smirnov statistic against `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn background_scores_pass_ks_against_the_configured_normal() {
    let config = SyntheticScorerConfig {
        seed: 41,
        ..Default::default()
    };
    let scorer = SyntheticScorer::new(config).unwrap();
    let task = lamp_task(&["lamp_4"]);
    let n = 10_000;
    let draws: Vec<f64> = (1..=n)
        .map(|step| scorer.score(&Observation::empty(step, task.start), &task.question, &task).unwrap())
        .collect();
    let normal = Normal::new(config.base_mean, config.base_std).unwrap();
    let d = ks_statistic(draws, |x| normal.cdf(x));
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d < critical, "D = {d:.5}, critical {critical:.5}");
}

#[test]
fn ks_rejects_a_shifted_background() {
    // guards the statistic itself: a 0.1 sigma shift is visible at n = 10k
    let scorer = SyntheticScorer::new(SyntheticScorerConfig::default()).unwrap();
    let draws: Vec<f64> = (1..=10_000).map(|s| scorer.background(s)).collect();
    let normal = Normal::new(0.202, 0.02).unwrap();
    assert!(ks_statistic(draws, |x| normal.cdf(x)) > 1.628 / 100.0);
}

#[test]
fn target_in_view_scores_above_the_boost() {
    let scene = apartment();
    let task = lamp_task(&["lamp_4"]);
    let scorer = SyntheticScorer::new(SyntheticScorerConfig::default()).unwrap();
    let obs = eqa_core::scene::sense(&scene, &Pose::new(8.5, 3.5, 0.0), &Default::default(), 3).unwrap();
    assert_eq!(obs.visible_object_fractions.get("lamp_4"), Some(&1.0));
    assert!(scorer.score(&obs, &task.question, &task).unwrap() >= 0.6);
}

fn candidates() -> Vec<FrontierCandidate> {
    let at = |label, x, y| FrontierCandidate {
        label,
        point: Coord::new(x, y),
        cluster_size: 3,
        path_cost: 4,
        semantic_score: 0.5,
        confidence: 0.0,
    };
    vec![at('A', 2, 7), at('B', 11, 3), at('C', 6, 5)]
}

#[test]
fn half_noise_gives_half_informed_samples() {
    let scene = apartment();
    let task = lamp_task(&["lamp_4"]);
    let oracle = ScriptedDirectionOracle::new(
        ScriptedOracleConfig {
            perception_noise: 0.5,
            seed: 3,
            ..Default::default()
        },
        &scene,
        &task,
    );
    let map = SemanticMap::new(scene.width(), scene.height()).unwrap();
    let cands = candidates();
    let mut informed = 0;
    let mut total = 0;
    for step in 1..=1000 {
        let query = DirectionQuery {
            question: &task.question,
            candidates: &cands,
            map: &map,
            step,
            m: 10,
        };
        for (sample, kind) in oracle.draw(&query) {
            total += 1;
            if kind == SampleKind::Informed {
                informed += 1;
                assert_eq!(sample.answer.as_deref(), Some("B"));
            }
        }
    }
    assert_eq!(total, 10_000);
    let fraction = informed as f64 / total as f64;
    assert!((fraction - 0.5).abs() <= 0.02, "{fraction}");
}

#[test]
fn noiseless_oracle_always_names_the_nearest_candidate() {
    let scene = apartment();
    let task = lamp_task(&["lamp_4"]);
    let oracle = ScriptedDirectionOracle::new(ScriptedOracleConfig::default(), &scene, &task);
    let map = SemanticMap::new(scene.width(), scene.height()).unwrap();
    let cands = candidates();
    let query = DirectionQuery {
        question: &task.question,
        candidates: &cands,
        map: &map,
        step: 1,
        m: 3,
    };
    let samples = oracle.draw(&query);
    assert_eq!(samples.len(), 3);
    for (s, kind) in samples {
        assert_eq!(kind, SampleKind::Informed);
        assert_eq!(s.answer.as_deref(), Some("B"));
        // B is 2 steps from the lamp, C (the door) is 7: 0.5 + 0.5 * (1 - 2/7)
        assert!((s.confidence.unwrap() - (0.5 + 0.5 * (5.0 / 7.0))).abs() < 1e-12);
    }
}
