//! Procedural multi-room scenes with one question each.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scene::{Coord, Room, SceneDocument, SceneGrid, SceneObject, TaskDocument};
use crate::seeding::rng_for;
use crate::{Error, Result};

const ROOM_LABELS: [&str; 12] = [
    "kitchen",
    "bedroom",
    "bathroom",
    "living room",
    "office",
    "hallway",
    "dining room",
    "laundry room",
    "garage",
    "study",
    "nursery",
    "pantry",
];

const NOUNS: [&str; 32] = [
    "lamp",
    "sofa",
    "mug",
    "vase",
    "clock",
    "chair",
    "table",
    "bookshelf",
    "plant",
    "television",
    "rug",
    "mirror",
    "pillow",
    "kettle",
    "towel",
    "laptop",
    "guitar",
    "painting",
    "basket",
    "bottle",
    "fan",
    "blanket",
    "cabinet",
    "candle",
    "printer",
    "radio",
    "bucket",
    "umbrella",
    "backpack",
    "toaster",
    "stool",
    "drawer",
];

const ATTRIBUTES: [(&str, &[&str]); 4] = [
    ("color", &["red", "blue", "green", "yellow", "white", "black", "grey", "orange"]),
    ("state", &["on", "off", "open", "closed", "broken", "folded"]),
    ("material", &["wood", "metal", "glass", "plastic", "fabric", "ceramic"]),
    ("count", &["2", "3", "4", "5", "6"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub width: usize,
    pub height: usize,
    pub rooms: usize,
    pub objects_per_room: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            rooms: 6,
            objects_per_room: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTask {
    pub scene_file: String,
    pub scene: SceneDocument,
    pub task: TaskDocument,
}

/// Splits `len` interior cells into `parts` spans separated by single wall
/// cells, starting at `start`. Returns inclusive spans.
fn split(start: i32, len: i32, parts: i32) -> Vec<(i32, i32)> {
    let usable = len - (parts - 1);
    let base = usable / parts;
    let extra = usable % parts;
    let mut spans = Vec::new();
    let mut at = start;
    for i in 0..parts {
        let size = base + i32::from(i < extra);
        spans.push((at, at + size - 1));
        at += size + 1;
    }
    spans
}

struct Layout {
    walls: BTreeSet<Coord>,
    rooms: Vec<[i32; 4]>,
}

fn layout(params: &GenParams, rng: &mut ChaCha8Rng) -> Result<Layout> {
    let (w, h) = (params.width as i32, params.height as i32);
    let n = params.rooms as i32;
    let cols = (1..=n).find(|c| c * c >= n).unwrap_or(1);
    let rows = (n + cols - 1) / cols;
    let unsatisfiable = || {
        Error::Config(format!(
            "{} rooms do not fit in {}x{} with at least 3x3 free cells each",
            params.rooms, params.width, params.height
        ))
    };
    let row_spans = split(1, h - 2, rows);
    if row_spans.iter().any(|(a, b)| b - a + 1 < 3) {
        return Err(unsatisfiable());
    }

    let mut walls = BTreeSet::new();
    for x in 0..w {
        for y in 0..h {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                walls.insert(Coord::new(x, y));
            }
        }
    }
    let mut rooms = Vec::new();
    let mut per_row: Vec<Vec<(i32, i32)>> = Vec::new();
    for (r, &(y0, y1)) in row_spans.iter().enumerate() {
        let in_row = if r as i32 == rows - 1 { n - cols * (rows - 1) } else { cols };
        let col_spans = split(1, w - 2, in_row);
        if col_spans.iter().any(|(a, b)| b - a + 1 < 3) {
            return Err(unsatisfiable());
        }
        if r + 1 < row_spans.len() {
            for x in 0..w {
                walls.insert(Coord::new(x, y1 + 1));
            }
        }
        for (c, &(x0, x1)) in col_spans.iter().enumerate() {
            rooms.push([x0, y0, x1, y1]);
            if c + 1 < col_spans.len() {
                for y in y0..=y1 {
                    walls.insert(Coord::new(x1 + 1, y));
                }
                // door to the right-hand neighbour
                walls.remove(&Coord::new(x1 + 1, rng.gen_range(y0..=y1)));
            }
        }
        per_row.push(col_spans);
    }
    // doors between rows: every room gets one opening into the row above
    for r in 1..per_row.len() {
        let line = row_spans[r].0 - 1;
        let upper_walls: BTreeSet<i32> = per_row[r - 1].iter().map(|&(_, x1)| x1 + 1).collect();
        for &(x0, x1) in &per_row[r] {
            let options: Vec<i32> = (x0..=x1).filter(|x| !upper_walls.contains(x)).collect();
            let x = *options.choose(rng).ok_or_else(unsatisfiable)?;
            walls.remove(&Coord::new(x, line));
        }
    }
    Ok(Layout { walls, rooms })
}

fn bfs(free: &dyn Fn(Coord) -> bool, from: Coord) -> BTreeMap<Coord, u32> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        let d = dist[&c];
        for n in c.neighbors4() {
            if free(n) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn cells_of(rect: [i32; 4]) -> impl Iterator<Item = Coord> {
    let [x0, y0, x1, y1] = rect;
    (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| Coord::new(x, y)))
}

fn generate_one(index: usize, seed: u64, params: &GenParams) -> Result<GeneratedTask> {
    let mut rng = rng_for(seed, "gen-scenes", index as u64);
    let Layout { walls, rooms: rects } = layout(params, &mut rng)?;

    let mut labels: Vec<&str> = ROOM_LABELS.to_vec();
    labels.shuffle(&mut rng);
    let rooms: Vec<Room> = rects
        .iter()
        .zip(&labels)
        .map(|(&rect, label)| Room {
            label: label.to_string(),
            rect,
        })
        .collect();

    let mut nouns: Vec<&str> = NOUNS.to_vec();
    nouns.shuffle(&mut rng);
    let mut nouns = nouns.into_iter();
    let mut used: BTreeSet<Coord> = BTreeSet::new();
    let mut objects: Vec<SceneObject> = Vec::new();
    let mut object_room: Vec<usize> = Vec::new();
    for (r, &rect) in rects.iter().enumerate() {
        let mut spots: Vec<Coord> = cells_of(rect).collect();
        spots.shuffle(&mut rng);
        let mut spots = spots.into_iter();
        for _ in 0..params.objects_per_room {
            let label = nouns.next().expect("noun supply checked");
            let first = spots.by_ref().find(|c| !used.contains(c)).ok_or_else(|| {
                Error::Config(format!(
                    "room of {} cells cannot hold {} objects",
                    cells_of(rect).count(),
                    params.objects_per_room
                ))
            })?;
            let mut cells = vec![first];
            let right = Coord::new(first.x + 1, first.y);
            if rng.gen_bool(0.5) && right.x <= rect[2] && !used.contains(&right) {
                cells.push(right);
            }
            used.extend(cells.iter().copied());
            let mut keys: Vec<usize> = (0..ATTRIBUTES.len()).collect();
            keys.shuffle(&mut rng);
            let attributes = keys[..2]
                .iter()
                .map(|&k| {
                    let (key, values) = ATTRIBUTES[k];
                    (key.to_string(), values.choose(&mut rng).expect("values").to_string())
                })
                .collect();
            objects.push(SceneObject {
                id: format!("{label}_{}", objects.len() + 1),
                label: label.to_string(),
                attributes,
                cells,
            });
            object_room.push(r);
        }
    }

    let start_room = rng.gen_range(0..rects.len());
    let free_in_start: Vec<Coord> = cells_of(rects[start_room]).filter(|c| !used.contains(c)).collect();
    let start = *free_in_start
        .choose(&mut rng)
        .ok_or_else(|| Error::Config("start room is full of objects".into()))?;
    let heading = FRAC_PI_2 * rng.gen_range(0..4) as f64;

    let (w, h) = (params.width as i32, params.height as i32);
    let is_free = |c: Coord| c.x >= 0 && c.y >= 0 && c.x < w && c.y < h && !walls.contains(&c);
    let dist = bfs(&is_free, start);
    // the room whose nearest cell is farthest from the start
    let target_room = (0..rects.len())
        .max_by_key(|&r| {
            (
                cells_of(rects[r]).filter_map(|c| dist.get(&c).copied()).min().unwrap_or(0),
                std::cmp::Reverse(r),
            )
        })
        .expect("at least one room");
    let candidates: Vec<usize> = (0..objects.len()).filter(|&i| object_room[i] == target_room).collect();
    let target = &objects[*candidates
        .choose(&mut rng)
        .ok_or_else(|| Error::Config("objects_per_room must be at least 1".into()))?];
    let (key, value) = target
        .attributes
        .iter()
        .nth(rng.gen_range(0..target.attributes.len()))
        .expect("two attributes");
    let question = format!("What is the {key} of the {} in the {}?", target.label, rooms[target_room].label);

    let scene_file = format!("scene_{index:03}.json");
    let scene = SceneDocument {
        width: params.width as i64,
        height: params.height as i64,
        resolution: None,
        walls: walls.into_iter().collect(),
        rooms,
        objects: objects.clone(),
    };
    let task = TaskDocument {
        id: Some(format!("task-{index:03}")),
        scene: scene_file.clone(),
        start: [start.x as f64 + 0.5, start.y as f64 + 0.5, heading],
        question,
        answer: value.clone(),
        targets: vec![target.id.clone()],
    };
    Ok(GeneratedTask { scene_file, scene, task })
}

/// `count` scenes, each a pure function of `(seed, index, params)`.
pub fn gen_scenes(count: usize, seed: u64, params: &GenParams) -> Result<Vec<GeneratedTask>> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    if params.rooms == 0 || params.rooms > ROOM_LABELS.len() {
        return Err(Error::Config(format!("rooms must be between 1 and {}", ROOM_LABELS.len())));
    }
    if params.objects_per_room == 0 || params.rooms * params.objects_per_room > NOUNS.len() {
        return Err(Error::Config(format!(
            "need 1 to {} objects in total, asked for {}",
            NOUNS.len(),
            params.rooms * params.objects_per_room
        )));
    }
    (0..count).map(|i| generate_one(i, seed, params)).collect()
}

/// Writes `DIR/scene_NNN.json` for each scene and `DIR/tasks.json`. Scenes
/// are validated before anything is written.
pub fn write_generated(dir: &Path, generated: &[GeneratedTask]) -> Result<()> {
    let scenes = generated
        .iter()
        .map(|g| SceneGrid::from_document(g.scene.clone()).map(|s| (g.scene_file.clone(), s.to_json())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, json) in scenes {
        let path = dir.join(name);
        fs::write(&path, json).map_err(io(&path))?;
    }
    let tasks: Vec<&TaskDocument> = generated.iter().map(|g| &g.task).collect();
    let mut text = serde_json::to_string_pretty(&tasks).expect("tasks serialize");
    text.push('\n');
    let path = dir.join("tasks.json");
    fs::write(&path, text).map_err(io(&path))?;
    Ok(())
}
