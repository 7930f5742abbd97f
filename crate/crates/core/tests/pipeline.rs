use std::collections::{BTreeSet, VecDeque};
use std::fs;

use eqa_core::engine::{self, gen_scenes, run_batch, sweep, write_generated, EngineConfig, GenParams, SweepAxis};
use eqa_core::scene::{load_task_set, Coord, SceneGrid, TaskSet};
use eqa_core::Error;

fn reachable(scene: &SceneGrid, from: Coord) -> BTreeSet<Coord> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        for n in c.neighbors4() {
            if scene.in_bounds(n) && scene.is_free(n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen
}

#[test]
fn generation_is_a_function_of_the_seed() {
    let p = GenParams::default();
    assert_eq!(gen_scenes(5, 3, &p).unwrap(), gen_scenes(5, 3, &p).unwrap());
    assert_ne!(gen_scenes(5, 3, &p).unwrap(), gen_scenes(5, 4, &p).unwrap());
    // scene i does not depend on how many were asked for
    assert_eq!(gen_scenes(2, 3, &p).unwrap()[1], gen_scenes(5, 3, &p).unwrap()[1]);
}

#[test]
fn fifty_scenes_are_valid_and_solvable() {
    for g in gen_scenes(50, 21, &GenParams::default()).unwrap() {
        let scene = SceneGrid::from_document(g.scene.clone()).unwrap();
        let [x, y, _] = g.task.start;
        let start = Coord::new(x.floor() as i32, y.floor() as i32);
        assert!(scene.is_free(start), "{}", g.scene_file);
        let open = reachable(&scene, start);
        // every free cell is connected, so every object can be reached
        assert_eq!(open.len(), scene.coords().filter(|&c| scene.is_free(c)).count(), "{}", g.scene_file);
        let target = &scene.objects()[scene.object_index(&g.task.targets[0]).unwrap()];
        assert!(target.cells.iter().all(|c| open.contains(c)));
        assert!(g.task.question.contains(&target.label));
        assert!(target.attributes.values().any(|v| *v == g.task.answer));
        let room = scene.rooms().iter().find(|r| g.task.question.contains(&r.label)).expect("room named");
        assert!(target.cells.iter().all(|&c| room.contains(c)));
    }
}

#[test]
fn impossible_layouts_are_rejected() {
    let tiny = GenParams {
        width: 8,
        height: 8,
        rooms: 9,
        objects_per_room: 1,
    };
    assert!(matches!(gen_scenes(1, 0, &tiny), Err(Error::Config(_))));
    let crowded = GenParams {
        objects_per_room: 20,
        ..Default::default()
    };
    assert!(matches!(gen_scenes(1, 0, &crowded), Err(Error::Config(_))));
    assert!(gen_scenes(0, 0, &GenParams::default()).is_err());
}

fn suite(dir: &std::path::Path, count: usize, seed: u64) -> TaskSet {
    write_generated(dir, &gen_scenes(count, seed, &GenParams::default()).unwrap()).unwrap();
    load_task_set(&dir.join("tasks.json")).unwrap()
}

#[test]
fn written_suite_loads_and_rewrites_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let set = suite(a.path(), 4, 8);
    suite(b.path(), 4, 8);
    assert_eq!(set.tasks.len(), 4);
    assert_eq!(set.tasks[2].id, "task-002");
    for name in ["tasks.json", "scene_000.json", "scene_003.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn batch_output_ignores_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let set = suite(dir.path(), 6, 2);
    let config = EngineConfig {
        seed: 5,
        ..Default::default()
    };
    let one = run_batch(&set, &config, 1).unwrap();
    let many = run_batch(&set, &config, 8).unwrap();
    assert_eq!(one.csv(), many.csv());
    assert_eq!(one.summary_json(), many.summary_json());
    let logs = |r: &engine::BatchReport| r.logs.iter().map(engine::write_log).collect::<Vec<_>>();
    assert_eq!(logs(&one), logs(&many));
    assert_eq!(one.summary.n, 6);
    assert_eq!(one.csv().lines().count(), 7);
}

#[test]
fn sweep_tables_have_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let set = suite(dir.path(), 3, 6);
    let config = EngineConfig::default();
    let z = sweep(&set, &config, &"z=1,2,3".parse::<SweepAxis>().unwrap(), 2).unwrap();
    let table = z.table_csv();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "z_threshold,avg_steps,llm_match");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,") || lines[1].starts_with("1.0"), "{}", lines[1]);
    assert_eq!(z.detail_csv().lines().count(), 1 + 3 * 3);

    let k = sweep(&set, &config, &"k=1,3,5,10".parse::<SweepAxis>().unwrap(), 2).unwrap();
    let table = k.table_csv();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "k,llm_match");
    let firsts: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(firsts, ["1", "3", "5", "10"]);
}

#[test]
fn bad_sweep_axes_are_rejected() {
    for bad in ["", "z=", "q=1", "z=a", "k=0", "z=-1", "k=1,,2"] {
        assert!(bad.parse::<SweepAxis>().is_err(), "{bad}");
    }
}
