//! Verbalized confidence: elicit several answers with self-reported
//! confidences, normalize them to sum to one, merge answers that mean the
//! same thing, and read off the best class.

use std::collections::BTreeMap;

use crate::exploration::FrontierCandidate;
use crate::oracle::{DirectionOracle, DirectionQuery, EquivalenceOracle, ExactMatchEquivalence, OracleError};

#[derive(Debug, thiserror::Error)]
pub enum ConfidenceError {
    #[error("need at least one sample and one candidate")]
    EmptyContext,
    #[error("every raw confidence is zero")]
    ZeroMass,
    #[error("all {0} samples were malformed")]
    AllMalformed(usize),
    #[error("sample {0} has not been normalized")]
    NotNormalized(usize),
    #[error("no classes to select from")]
    NoClasses,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConfidenceSample {
    pub answer: String,
    pub raw_confidence: f64,
    pub normalized_confidence: Option<f64>,
}

impl ConfidenceSample {
    pub fn new(answer: impl Into<String>, raw_confidence: f64) -> Self {
        Self {
            answer: answer.into(),
            raw_confidence,
            normalized_confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceClass {
    pub representative: String,
    /// Indices into the sample list.
    pub members: Vec<usize>,
    pub cumulative_confidence: f64,
}

/// Classes plus whether the equivalence oracle had to be bypassed.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub classes: Vec<EquivalenceClass>,
    pub fell_back: bool,
}

/// Asks the oracle for `query.m` samples, retrying oracle failures up to
/// `retries` times. Samples with a missing answer or an invalid confidence
/// are dropped; it is an error only if none survive.
pub fn elicit(oracle: &dyn DirectionOracle, query: &DirectionQuery<'_>, retries: u32) -> Result<Vec<ConfidenceSample>, ConfidenceError> {
    if query.m == 0 || query.candidates.is_empty() {
        return Err(ConfidenceError::EmptyContext);
    }
    let mut attempt = 0;
    let raw = loop {
        match oracle.sample_directions(query) {
            Ok(raw) => break raw,
            Err(_) if attempt < retries => attempt += 1,
            Err(e) => return Err(e.into()),
        }
    };
    let returned = raw.len().min(query.m);
    let samples: Vec<_> = raw
        .into_iter()
        .take(query.m)
        .filter_map(|s| {
            let answer = s.answer.filter(|a| !a.trim().is_empty())?;
            let c = s.confidence.filter(|c| c.is_finite() && *c >= 0.0)?;
            Some(ConfidenceSample::new(answer, c))
        })
        .collect();
    if samples.is_empty() {
        return Err(ConfidenceError::AllMalformed(returned));
    }
    Ok(samples)
}

/// `c_i' = c_i / Σ c_j`, order preserved.
pub fn normalize(samples: &[ConfidenceSample]) -> Result<Vec<ConfidenceSample>, ConfidenceError> {
    if samples.is_empty() {
        return Err(ConfidenceError::EmptyContext);
    }
    let total: f64 = samples.iter().map(|s| s.raw_confidence).sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(ConfidenceError::ZeroMass);
    }
    Ok(samples
        .iter()
        .map(|s| ConfidenceSample {
            normalized_confidence: Some(s.raw_confidence / total),
            ..s.clone()
        })
        .collect())
}

/// [`normalize`], falling back to `1/M` each when the raw mass is zero.
/// The flag reports the fallback.
pub fn normalize_or_uniform(samples: &[ConfidenceSample]) -> Result<(Vec<ConfidenceSample>, bool), ConfidenceError> {
    match normalize(samples) {
        Ok(n) => Ok((n, false)),
        Err(ConfidenceError::ZeroMass) => {
            let u = 1.0 / samples.len() as f64;
            let n = samples
                .iter()
                .map(|s| ConfidenceSample {
                    normalized_confidence: Some(u),
                    ..s.clone()
                })
                .collect();
            Ok((n, true))
        }
        Err(e) => Err(e),
    }
}

fn normalized_values(samples: &[ConfidenceSample]) -> Result<Vec<f64>, ConfidenceError> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.normalized_confidence.ok_or(ConfidenceError::NotNormalized(i)))
        .collect()
}

/// True when `groups` partitions `0..n` into non-empty groups.
fn is_partition(groups: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return false;
        }
        for &i in g {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return false;
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Asks `equiv` for a partition of `answers`; any failure or an invalid
/// partition falls back to exact matching on normalized text.
fn partition(answers: &[String], equiv: &dyn EquivalenceOracle) -> (Vec<Vec<usize>>, bool) {
    match equiv.classes(answers) {
        Ok(groups) if is_partition(&groups, answers.len()) => (groups, false),
        _ => (ExactMatchEquivalence::partition(answers), true),
    }
}

/// Groups normalized samples into equivalence classes with cumulative
/// confidence, sorted by confidence (stable, so ties keep first-occurrence
/// order).
pub fn group(samples: &[ConfidenceSample], equiv: &dyn EquivalenceOracle) -> Result<Grouping, ConfidenceError> {
    let conf = normalized_values(samples)?;
    let answers: Vec<String> = samples.iter().map(|s| s.answer.clone()).collect();
    let (mut groups, fell_back) = partition(&answers, equiv);
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);

    let mut classes: Vec<EquivalenceClass> = groups
        .into_iter()
        .map(|members| {
            let rep = members
                .iter()
                .copied()
                .fold(members[0], |best, i| if conf[i] > conf[best] { i } else { best });
            EquivalenceClass {
                representative: samples[rep].answer.clone(),
                cumulative_confidence: members.iter().map(|&i| conf[i]).sum(),
                members,
            }
        })
        .collect();
    classes.sort_by(|a, b| b.cumulative_confidence.total_cmp(&a.cumulative_confidence));
    Ok(Grouping { classes, fell_back })
}

/// `(R*, C*)`: the class with the highest cumulative confidence, earliest on ties.
pub fn select_best(classes: &[EquivalenceClass]) -> Result<(String, f64), ConfidenceError> {
    let mut best: Option<&EquivalenceClass> = None;
    for c in classes {
        if best.is_none_or(|b| c.cumulative_confidence > b.cumulative_confidence) {
            best = Some(c);
        }
    }
    best.map(|c| (c.representative.clone(), c.cumulative_confidence))
        .ok_or(ConfidenceError::NoClasses)
}

/// Per-candidate confidence: the mass of the class that contains the
/// candidate's label. Labels are grouped together with the answers so the
/// equivalence oracle decides what counts as naming a candidate; a class
/// containing several labels credits only the first. Missing labels get 0.
pub fn direction_confidences(
    samples: &[ConfidenceSample],
    candidates: &[FrontierCandidate],
    equiv: &dyn EquivalenceOracle,
) -> Result<(BTreeMap<char, f64>, bool), ConfidenceError> {
    let conf = normalized_values(samples)?;
    let n = samples.len();
    let combined: Vec<String> = samples
        .iter()
        .map(|s| s.answer.clone())
        .chain(candidates.iter().map(|c| c.label.to_string()))
        .collect();
    let (groups, fell_back) = partition(&combined, equiv);

    let mut out: BTreeMap<char, f64> = candidates.iter().map(|c| (c.label, 0.0)).collect();
    for g in groups {
        let Some(&label_idx) = g.iter().filter(|&&i| i >= n).min() else {
            continue;
        };
        let mass: f64 = g.iter().filter(|&&i| i < n).map(|&i| conf[i]).sum();
        *out.get_mut(&candidates[label_idx - n].label).expect("label present") += mass.clamp(0.0, 1.0);
    }
    Ok((out, fell_back))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::SemanticMap;
    use crate::oracle::RawSample;
    use crate::scene::Coord;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Scripted(Vec<RawSample>);

    impl DirectionOracle for Scripted {
        fn sample_directions(&self, _q: &DirectionQuery<'_>) -> Result<Vec<RawSample>, OracleError> {
            Ok(self.0.clone())
        }
    }

    struct Flaky {
        failures: AtomicU32,
    }

    impl DirectionOracle for Flaky {
        fn sample_directions(&self, _q: &DirectionQuery<'_>) -> Result<Vec<RawSample>, OracleError> {
            if self.failures.fetch_sub(1, Ordering::SeqCst) > 0 {
                Err(OracleError::Transport("down".into()))
            } else {
                Ok(vec![RawSample::new("A", 1.0)])
            }
        }
    }

    /// Merges answers that mention the same capital letter label.
    struct MentionsLabel;

    impl EquivalenceOracle for MentionsLabel {
        fn classes(&self, answers: &[String]) -> Result<Vec<Vec<usize>>, OracleError> {
            let key = |a: &str| {
                a.split_whitespace()
                    .find(|w| w.len() == 1 && w.chars().all(|c| c.is_ascii_uppercase()))
                    .unwrap_or(a)
                    .to_owned()
            };
            let mut keys: Vec<String> = Vec::new();
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for (i, a) in answers.iter().enumerate() {
                let k = key(a);
                match keys.iter().position(|x| *x == k) {
                    Some(g) => groups[g].push(i),
                    None => {
                        keys.push(k);
                        groups.push(vec![i]);
                    }
                }
            }
            Ok(groups)
        }
    }

    struct Broken;

    impl EquivalenceOracle for Broken {
        fn classes(&self, _answers: &[String]) -> Result<Vec<Vec<usize>>, OracleError> {
            Err(OracleError::Unavailable("offline".into()))
        }
    }

    fn candidates(labels: &str) -> Vec<FrontierCandidate> {
        labels
            .chars()
            .map(|label| FrontierCandidate {
                label,
                point: Coord::new(0, 0),
                cluster_size: 1,
                path_cost: 0,
                semantic_score: 0.5,
                confidence: 0.0,
            })
            .collect()
    }

    fn normalized(pairs: &[(&str, f64)]) -> Vec<ConfidenceSample> {
        pairs
            .iter()
            .map(|&(a, c)| ConfidenceSample {
                answer: a.into(),
                raw_confidence: c,
                normalized_confidence: Some(c),
            })
            .collect()
    }

    fn query<'a>(c: &'a [FrontierCandidate], map: &'a SemanticMap, m: usize) -> DirectionQuery<'a> {
        DirectionQuery {
            question: "where?",
            candidates: c,
            map,
            step: 1,
            m,
        }
    }

    #[test]
    fn elicit_passes_samples_through() {
        let map = SemanticMap::new(3, 3).unwrap();
        let c = candidates("AB");
        let oracle = Scripted(vec![RawSample::new("A", 0.6), RawSample::new("A", 0.3), RawSample::new("B", 0.1)]);
        let s = elicit(&oracle, &query(&c, &map, 3), 0).unwrap();
        assert_eq!(
            s,
            vec![
                ConfidenceSample::new("A", 0.6),
                ConfidenceSample::new("A", 0.3),
                ConfidenceSample::new("B", 0.1)
            ]
        );
        assert_eq!(elicit(&oracle, &query(&c, &map, 1), 0).unwrap().len(), 1);
    }

    #[test]
    fn elicit_drops_malformed_samples() {
        let map = SemanticMap::new(3, 3).unwrap();
        let c = candidates("AB");
        let oracle = Scripted(vec![
            RawSample::new("A", 0.6),
            RawSample {
                answer: Some("B".into()),
                confidence: None,
            },
            RawSample::new("B", 0.1),
        ]);
        assert_eq!(elicit(&oracle, &query(&c, &map, 3), 0).unwrap().len(), 2);
        let all_bad = Scripted(vec![RawSample::new("A", -1.0), RawSample::new(" ", 0.5)]);
        assert!(matches!(elicit(&all_bad, &query(&c, &map, 3), 0), Err(ConfidenceError::AllMalformed(2))));
    }

    #[test]
    fn elicit_retries_then_gives_up() {
        let map = SemanticMap::new(3, 3).unwrap();
        let c = candidates("A");
        let ok = Flaky { failures: AtomicU32::new(2) };
        assert!(elicit(&ok, &query(&c, &map, 1), 2).is_ok());
        let bad = Flaky { failures: AtomicU32::new(3) };
        assert!(matches!(elicit(&bad, &query(&c, &map, 1), 2), Err(ConfidenceError::Oracle(_))));
    }

    #[test]
    fn normalize_examples() {
        let n = normalize(&[
            ConfidenceSample::new("a", 2.0),
            ConfidenceSample::new("b", 1.0),
            ConfidenceSample::new("c", 1.0),
        ])
        .unwrap();
        let v: Vec<f64> = n.iter().map(|s| s.normalized_confidence.unwrap()).collect();
        assert_eq!(v, vec![0.5, 0.25, 0.25]);
        let one = normalize(&[ConfidenceSample::new("a", 0.37)]).unwrap();
        assert_eq!(one[0].normalized_confidence, Some(1.0));
        let already = normalize(&[ConfidenceSample::new("a", 0.5), ConfidenceSample::new("b", 0.5)]).unwrap();
        assert_eq!(already[1].normalized_confidence, Some(0.5));
    }

    #[test]
    fn zero_mass_errors_and_falls_back_to_uniform() {
        let zeros = [ConfidenceSample::new("a", 0.0), ConfidenceSample::new("b", 0.0)];
        assert!(matches!(normalize(&zeros), Err(ConfidenceError::ZeroMass)));
        let (u, flagged) = normalize_or_uniform(&zeros).unwrap();
        assert!(flagged);
        assert!(u.iter().all(|s| s.normalized_confidence == Some(0.5)));
    }

    #[test]
    fn group_sums_merged_confidence() {
        struct MergeFirstTwo;
        impl EquivalenceOracle for MergeFirstTwo {
            fn classes(&self, _a: &[String]) -> Result<Vec<Vec<usize>>, OracleError> {
                Ok(vec![vec![0, 1], vec![2]])
            }
        }
        let s = normalized(&[("on the countertop", 0.5), ("countertop", 0.25), ("in the cabinet", 0.25)]);
        let g = group(&s, &MergeFirstTwo).unwrap();
        let got: Vec<_> = g.classes.iter().map(|c| (c.representative.as_str(), c.cumulative_confidence)).collect();
        assert_eq!(got, vec![("on the countertop", 0.75), ("in the cabinet", 0.25)]);
        assert!(!g.fell_back);
    }

    #[test]
    fn identical_answers_form_one_class() {
        let s = normalized(&[("x", 0.2), ("x", 0.3), ("x", 0.5)]);
        let g = group(&s, &ExactMatchEquivalence).unwrap();
        assert_eq!(g.classes.len(), 1);
        assert!((g.classes[0].cumulative_confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn failing_equivalence_falls_back_and_flags() {
        let s = normalized(&[("A", 0.5), ("a.", 0.5)]);
        let g = group(&s, &Broken).unwrap();
        assert!(g.fell_back);
        assert_eq!(g.classes.len(), 1);
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let s = [ConfidenceSample::new("a", 1.0)];
        assert!(matches!(group(&s, &ExactMatchEquivalence), Err(ConfidenceError::NotNormalized(0))));
    }

    #[test]
    fn select_best_examples() {
        let classes = |v: &[(&str, f64)]| -> Vec<EquivalenceClass> {
            v.iter()
                .enumerate()
                .map(|(i, &(r, c))| EquivalenceClass {
                    representative: r.into(),
                    members: vec![i],
                    cumulative_confidence: c,
                })
                .collect()
        };
        assert_eq!(select_best(&classes(&[("X", 0.75), ("Y", 0.25)])).unwrap(), ("X".into(), 0.75));
        assert_eq!(select_best(&classes(&[("Z", 1.0)])).unwrap(), ("Z".into(), 1.0));
        assert_eq!(select_best(&classes(&[("P", 0.5), ("Q", 0.5)])).unwrap().0, "P");
        assert!(matches!(select_best(&[]), Err(ConfidenceError::NoClasses)));
    }

    #[test]
    fn direction_confidences_by_label() {
        let s = normalized(&[("A", 0.4), ("B", 0.3), ("A", 0.3)]);
        let (c, _) = direction_confidences(&s, &candidates("ABC"), &ExactMatchEquivalence).unwrap();
        assert_eq!(c[&'B'], 0.3);
        assert!((c[&'A'] - 0.7).abs() < 1e-12);
        assert_eq!(c[&'C'], 0.0);
    }

    #[test]
    fn unmatched_answers_give_zero() {
        let s = normalized(&[("the kitchen", 1.0)]);
        let (c, _) = direction_confidences(&s, &candidates("AB"), &ExactMatchEquivalence).unwrap();
        assert!(c.values().all(|&v| v == 0.0));
    }

    #[test]
    fn free_text_mapped_to_label_contributes() {
        let s = normalized(&[("go left toward A", 0.6), ("B", 0.4)]);
        let (c, _) = direction_confidences(&s, &candidates("AB"), &MentionsLabel).unwrap();
        assert_eq!(c[&'A'], 0.6);
        assert_eq!(c[&'B'], 0.4);
    }
}
