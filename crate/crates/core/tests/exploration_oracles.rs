use std::collections::{BTreeSet, VecDeque};

use eqa_core::exploration::{detect_frontiers, plan_step, propose_candidates, select_next, shortest_known_path, FrontierCandidate, FusionWeights};
use eqa_core::mapping::{Belief, SemanticMap};
use eqa_core::scene::{Coord, Pose};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid_from(rows: &[&str]) -> Vec<Vec<Belief>> {
    rows.iter()
        .map(|r| {
            r.chars()
                .map(|ch| match ch {
                    '.' => Belief::Free,
                    '#' => Belief::Wall,
                    _ => Belief::Unknown,
                })
                .collect()
        })
        .collect()
}

fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<Vec<Belief>> {
    (0..h)
        .map(|_| {
            (0..w)
                .map(|_| match rng.gen_range(0..10) {
                    0..=4 => Belief::Free,
                    5..=6 => Belief::Wall,
                    _ => Belief::Unknown,
                })
                .collect()
        })
        .collect()
}

fn to_map(grid: &[Vec<Belief>]) -> SemanticMap {
    let mut m = SemanticMap::new(grid[0].len(), grid.len()).unwrap();
    for (y, row) in grid.iter().enumerate() {
        for (x, &b) in row.iter().enumerate() {
            m.set_belief(Coord::new(x as i32, y as i32), b).unwrap();
        }
    }
    m
}

fn at(grid: &[Vec<Belief>], x: i32, y: i32) -> Option<Belief> {
    (x >= 0 && y >= 0).then(|| grid.get(y as usize)?.get(x as usize).copied()).flatten()
}

/// Straight from the definition: explored free, with an in-bounds unexplored
/// 4-neighbour.
fn reference_frontier(grid: &[Vec<Belief>]) -> BTreeSet<Coord> {
    let mut out = BTreeSet::new();
    for (y, row) in grid.iter().enumerate() {
        for (x, &b) in row.iter().enumerate() {
            let (x, y) = (x as i32, y as i32);
            if b != Belief::Free {
                continue;
            }
            let near_unknown = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|(dx, dy)| at(grid, x + dx, y + dy) == Some(Belief::Unknown));
            if near_unknown {
                out.insert(Coord::new(x, y));
            }
        }
    }
    out
}

/// Plain BFS over free cells; `None` when unreachable.
fn reference_distance(grid: &[Vec<Belief>], from: Coord, to: Coord) -> Option<usize> {
    let h = grid.len();
    let w = grid[0].len();
    let mut dist = vec![vec![usize::MAX; w]; h];
    dist[from.y as usize][from.x as usize] = 0;
    let mut queue = VecDeque::from([(from.x, from.y)]);
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y as usize][x as usize];
        if (x, y) == (to.x, to.y) {
            return Some(d);
        }
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if at(grid, nx, ny) == Some(Belief::Free) && dist[ny as usize][nx as usize] == usize::MAX {
                dist[ny as usize][nx as usize] = d + 1;
                queue.push_back((nx, ny));
            }
        }
    }
    None
}

#[test]
fn half_explored_fixture_frontier() {
    let grid = grid_from(&[
        "....????", ".##.????", "....????", "#.#.????", "....????", ".#..????", "....????", "....????",
    ]);
    let got = detect_frontiers(&to_map(&grid));
    assert_eq!(got, reference_frontier(&grid));
    assert_eq!(got.len(), 8);
    assert!(got.iter().all(|c| c.x == 3));
}

#[test]
fn frontier_matches_definition_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let (w, h) = (rng.gen_range(3..16), rng.gen_range(3..16));
        let grid = random_grid(&mut rng, w, h);
        assert_eq!(detect_frontiers(&to_map(&grid)), reference_frontier(&grid));
    }
}

#[test]
fn maze_path_length_matches_bfs() {
    let grid = grid_from(&[
        "..........",
        ".########.",
        ".#......#.",
        ".#.####.#.",
        ".#.#..#.#.",
        ".#.#.##.#.",
        ".#.#....#.",
        ".#.######.",
        ".#........",
        ".#########",
    ]);
    let map = to_map(&grid);
    let from = Coord::new(0, 9);
    let to = Coord::new(4, 4);
    let path = shortest_known_path(&map, from, to).unwrap();
    assert_eq!(Some(path.len() - 1), reference_distance(&grid, from, to));
    assert_eq!(path.len() - 1, 53);
    for w in path.windows(2) {
        assert_eq!(w[0].manhattan(w[1]), 1);
        assert!(map.is_known_free(w[1]));
    }
}

#[test]
fn random_paths_match_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let (w, h) = (rng.gen_range(3..14), rng.gen_range(3..14));
        let grid = random_grid(&mut rng, w, h);
        let free: Vec<Coord> = (0..h)
            .flat_map(|y| (0..w).map(move |x| Coord::new(x as i32, y as i32)))
            .filter(|c| grid[c.y as usize][c.x as usize] == Belief::Free)
            .collect();
        if free.len() < 2 {
            continue;
        }
        let from = free[rng.gen_range(0..free.len())];
        let to = free[rng.gen_range(0..free.len())];
        let got = shortest_known_path(&to_map(&grid), from, to).map(|p| p.len() - 1);
        assert_eq!(got, reference_distance(&grid, from, to), "{from:?} -> {to:?}");
    }
}

#[test]
fn plan_step_moves_budget_cells_along_shortest_path() {
    let grid = grid_from(&["#########", "........?", "#########"]);
    let map = to_map(&grid);
    let pose = Pose::at_cell(Coord::new(0, 1), 0.0);
    let next = plan_step(&map, &pose, Coord::new(7, 1), 3).unwrap();
    assert_eq!(next.cell(), Coord::new(3, 1));
    let last = plan_step(&map, &Pose::at_cell(Coord::new(6, 1), 0.0), Coord::new(7, 1), 3).unwrap();
    assert_eq!(last.cell(), Coord::new(7, 1));
    // arrived: facing the unexplored cell to the east
    assert!(last.heading.abs() < 1e-12);
    let walled = to_map(&grid_from(&["...", "###", "..."]));
    assert_eq!(plan_step(&walled, &Pose::at_cell(Coord::new(0, 0), 0.0), Coord::new(0, 2), 3), None);
}

fn cand(label: char, confidence: f64, semantic_score: f64, path_cost: u32) -> FrontierCandidate {
    FrontierCandidate {
        label,
        point: Coord::new(0, 0),
        cluster_size: 1,
        path_cost,
        semantic_score,
        confidence,
    }
}

fn exhaustive_best(cands: &[FrontierCandidate], w: (f64, f64, f64), diagonal: f64) -> usize {
    let scores: Vec<f64> = cands
        .iter()
        .map(|c| w.0 * c.confidence + w.1 * c.semantic_score - w.2 * c.path_cost as f64 / diagonal)
        .collect();
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..cands.len()).filter(|&i| scores[i] == top).min_by_key(|&i| cands[i].label).unwrap()
}

#[test]
fn four_candidate_fixture_matches_enumeration() {
    let cands = [
        cand('A', 0.10, 0.50, 2),
        cand('B', 0.60, 0.50, 12),
        cand('C', 0.25, 0.90, 4),
        cand('D', 0.05, 0.20, 1),
    ];
    let diagonal = 10.0;
    // A 0.29, B 0.49, C 0.58, D 0.12
    let got = select_next(&cands, &FusionWeights::default(), diagonal).unwrap();
    assert_eq!(got, exhaustive_best(&cands, (1.0, 0.5, 0.3), diagonal));
    assert_eq!(cands[got].label, 'C');
}

proptest! {
    #[test]
    fn selection_matches_enumeration(
        raw in proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0u32..40), 1..26),
        conf in 0.0..2.0f64,
        sem in 0.0..2.0f64,
        cost in 0.0..2.0f64,
    ) {
        prop_assume!(conf + sem + cost > 0.0);
        let cands: Vec<_> = raw
            .iter()
            .enumerate()
            .map(|(i, &(c, s, p))| cand((b'A' + i as u8) as char, c, s, p))
            .collect();
        let w = FusionWeights { conf, sem, cost };
        prop_assert_eq!(select_next(&cands, &w, 28.0).unwrap(), exhaustive_best(&cands, (conf, sem, cost), 28.0));
    }

    #[test]
    fn candidates_are_ranked_reachable_frontier_cells(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = random_grid(&mut rng, 12, 12);
        let map = to_map(&grid);
        let Some(start) = map.coords().find(|&c| map.is_known_free(c)) else {
            return Ok(());
        };
        let frontier = reference_frontier(&grid);
        let cands = propose_candidates(&map, &Pose::at_cell(start, 0.0), 26);
        for (i, c) in cands.iter().enumerate() {
            prop_assert_eq!(c.label, (b'A' + i as u8) as char);
            prop_assert!(frontier.contains(&c.point));
            prop_assert_eq!(Some(c.path_cost as usize), reference_distance(&grid, start, c.point));
        }
        for w in cands.windows(2) {
            prop_assert!(w[0].cluster_size >= w[1].cluster_size);
        }
        prop_assert!(cands.iter().map(|c| c.cluster_size).sum::<usize>() <= frontier.len());
    }
}
