//! Frontier detection, candidate proposal and next-pose selection.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::mapping::SemanticMap;
use crate::scene::{Coord, Pose};

/// Radius, in cells, of the disk a candidate's confidence is painted onto and
/// its semantic score is averaged over.
pub const SEMANTIC_DISK_RADIUS: i32 = 2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExplorationError {
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("fusion weights must be non-negative and not all zero")]
    InvalidWeights,
    #[error("max_candidates must be at least 1")]
    NoCandidateBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierCandidate {
    pub label: char,
    pub point: Coord,
    pub cluster_size: usize,
    pub path_cost: u32,
    pub semantic_score: f64,
    pub confidence: f64,
}

/// Linear blend used to rank candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionWeights {
    pub conf: f64,
    pub sem: f64,
    pub cost: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            conf: 1.0,
            sem: 0.5,
            cost: 0.3,
        }
    }
}

impl FusionWeights {
    pub fn validate(&self) -> Result<(), ExplorationError> {
        let all = [self.conf, self.sem, self.cost];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || all.iter().all(|w| *w == 0.0) {
            return Err(ExplorationError::InvalidWeights);
        }
        Ok(())
    }

    pub fn score(&self, c: &FrontierCandidate, diagonal: f64) -> f64 {
        self.conf * c.confidence + self.sem * c.semantic_score - self.cost * (c.path_cost as f64 / diagonal)
    }
}

fn is_frontier(map: &SemanticMap, c: Coord) -> bool {
    map.is_known_free(c) && c.neighbors4().iter().any(|&n| map.is_unexplored(n))
}

/// Explored free cells with at least one unexplored 4-neighbour.
pub fn detect_frontiers(map: &SemanticMap) -> BTreeSet<Coord> {
    map.coords().filter(|&c| is_frontier(map, c)).collect()
}

/// In-bounds cells within `radius` of `center`.
pub fn disk(map: &SemanticMap, center: Coord, radius: i32) -> impl Iterator<Item = Coord> + '_ {
    (-radius..=radius)
        .flat_map(move |dy| (-radius..=radius).map(move |dx| (dx, dy)))
        .filter(move |(dx, dy)| dx * dx + dy * dy <= radius * radius)
        .map(move |(dx, dy)| Coord::new(center.x + dx, center.y + dy))
        .filter(|&c| map.in_bounds(c))
}

/// BFS distances over known-free cells from `from`. The start cell always
/// counts as passable.
pub fn known_distances(map: &SemanticMap, from: Coord) -> HashMap<Coord, u32> {
    let mut dist = HashMap::from([(from, 0u32)]);
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        let d = dist[&c];
        for n in c.neighbors4() {
            if map.is_known_free(n) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn clusters(frontier: &BTreeSet<Coord>) -> Vec<Vec<Coord>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in frontier {
        if !seen.insert(start) {
            continue;
        }
        let mut members = vec![start];
        let mut stack = vec![start];
        while let Some(c) = stack.pop() {
            for n in c.neighbors8() {
                if frontier.contains(&n) && seen.insert(n) {
                    members.push(n);
                    stack.push(n);
                }
            }
        }
        members.sort();
        out.push(members);
    }
    out
}

fn centroid_nearest(cells: &[Coord]) -> Coord {
    let n = cells.len() as f64;
    let cx = cells.iter().map(|c| c.x as f64).sum::<f64>() / n;
    let cy = cells.iter().map(|c| c.y as f64).sum::<f64>() / n;
    let d2 = |c: &Coord| (c.x as f64 - cx).powi(2) + (c.y as f64 - cy).powi(2);
    // cells are sorted, so the first minimum is the lexicographically smallest
    *cells
        .iter()
        .fold(None::<&Coord>, |best, c| match best {
            Some(b) if d2(b) <= d2(c) => Some(b),
            _ => Some(c),
        })
        .expect("cluster is non-empty")
}

/// Clusters the frontier by 8-connectivity and returns one labelled candidate
/// per cluster, largest clusters first. Confidence is left at zero.
///
/// Frontier cells the agent cannot reach over known-free cells are skipped:
/// a ray grazing a wall corner can reveal space whose only known link to the
/// agent is diagonal.
pub fn propose_candidates(map: &SemanticMap, pose: &Pose, max_candidates: usize) -> Vec<FrontierCandidate> {
    let here = pose.cell();
    let dist = known_distances(map, here);
    let frontier: BTreeSet<Coord> = detect_frontiers(map).into_iter().filter(|c| dist.contains_key(c)).collect();
    if frontier.is_empty() || max_candidates == 0 {
        return Vec::new();
    }

    let mut ranked: Vec<FrontierCandidate> = clusters(&frontier)
        .into_iter()
        .map(|members| {
            let point = centroid_nearest(&members);
            let path_cost = dist[&point];
            let (sum, count) = disk(map, point, SEMANTIC_DISK_RADIUS).fold((0.0, 0usize), |(s, n), c| (s + map.semantic_value(c), n + 1));
            FrontierCandidate {
                label: '?',
                point,
                cluster_size: members.len(),
                path_cost,
                semantic_score: sum / count as f64,
                confidence: 0.0,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.cluster_size
            .cmp(&a.cluster_size)
            .then(a.path_cost.cmp(&b.path_cost))
            .then(a.point.cmp(&b.point))
    });
    ranked.truncate(max_candidates.min(26));
    for (i, c) in ranked.iter_mut().enumerate() {
        c.label = (b'A' + i as u8) as char;
    }
    ranked
}

/// Index of the best-scoring candidate; ties go to the earlier label.
pub fn select_next(candidates: &[FrontierCandidate], weights: &FusionWeights, diagonal: f64) -> Result<usize, ExplorationError> {
    weights.validate()?;
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = weights.score(c, diagonal);
        best = match best {
            Some((bi, bs)) if bs > s || (bs == s && candidates[bi].label < c.label) => Some((bi, bs)),
            _ => Some((i, s)),
        };
    }
    best.map(|(i, _)| i).ok_or(ExplorationError::NoCandidates)
}

/// Shortest 4-connected path over known-free cells, start and goal included.
pub fn shortest_known_path(map: &SemanticMap, from: Coord, to: Coord) -> Option<Vec<Coord>> {
    if from == to {
        return Some(vec![from]);
    }
    if !map.is_known_free(to) {
        return None;
    }
    let h = |c: Coord| c.manhattan(to);
    let mut open = BinaryHeap::from([Reverse((h(from), 0u32, from))]);
    let mut g = HashMap::from([(from, 0u32)]);
    let mut parent: HashMap<Coord, Coord> = HashMap::new();
    while let Some(Reverse((_, cost, c))) = open.pop() {
        if c == to {
            let mut path = vec![c];
            let mut cur = c;
            while let Some(&p) = parent.get(&cur) {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        if cost > g[&c] {
            continue;
        }
        for n in c.neighbors4() {
            if !map.is_known_free(n) {
                continue;
            }
            let next = cost + 1;
            if g.get(&n).is_none_or(|&old| next < old) {
                g.insert(n, next);
                parent.insert(n, c);
                open.push(Reverse((next + h(n), next, n)));
            }
        }
    }
    None
}

fn heading_towards(from: Coord, to: Coord) -> f64 {
    ((to.y - from.y) as f64).atan2((to.x - from.x) as f64)
}

/// Advances up to `step_budget` cells towards `target`. Returns `None` when no
/// known path exists. On arrival the agent turns to face unexplored space
/// next to the target, so the following observation resolves that frontier.
pub fn plan_step(map: &SemanticMap, pose: &Pose, target: Coord, step_budget: usize) -> Option<Pose> {
    let here = pose.cell();
    let path = shortest_known_path(map, here, target)?;
    let moved = step_budget.min(path.len() - 1);
    let at = path[moved];
    let heading = if moved + 1 < path.len() {
        heading_towards(at, path[moved + 1])
    } else if let Some(&unknown) = target.neighbors4().iter().find(|&&n| map.is_unexplored(n)) {
        heading_towards(at, unknown)
    } else if moved > 0 {
        heading_towards(path[moved - 1], at)
    } else {
        pose.heading
    };
    Some(if moved == 0 {
        Pose::new(pose.x, pose.y, heading)
    } else {
        Pose::at_cell(at, heading)
    })
}

/// Projects each candidate's confidence onto its disk. Overlaps keep the max.
pub fn direction_values(map: &SemanticMap, candidates: &[FrontierCandidate]) -> BTreeMap<Coord, f64> {
    let mut out: BTreeMap<Coord, f64> = BTreeMap::new();
    for cand in candidates {
        for c in disk(map, cand.point, SEMANTIC_DISK_RADIUS) {
            let v = out.entry(c).or_insert(0.0);
            *v = v.max(cand.confidence);
        }
    }
    out
}
