//! Ground-truth grid worlds, question tasks and the simulated range sensor.
//!
//! A scene is a dense 2D grid of free/wall cells with labelled rooms and
//! attributed objects. The sensor marches rays through the grid at quarter-cell
//! steps; a cell is seen when a ray sample lands in it before the ray hits a
//! wall or leaves the grid.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

/// Number of rays in the fixed angular lattice used for visibility. The
/// lattice is anchored at angle zero, so widening the field of view or
/// extending the range only ever adds samples.
pub const VISIBILITY_LATTICE: usize = 1024;

/// Distance between consecutive samples along a ray, in cells.
pub const RAY_SAMPLE_STEP: f64 = 0.25;

/// Meters per cell when a scene document does not say.
pub const DEFAULT_RESOLUTION: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed document {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("scene must be at least 3x3, got {width}x{height}")]
    Dimensions { width: i64, height: i64 },
    #[error("wall {0} lies outside the grid")]
    WallOutOfBounds(Coord),
    #[error("room '{0}' extends outside the grid or has an inverted rectangle")]
    RoomOutOfBounds(String),
    #[error("rooms '{0}' and '{1}' overlap")]
    RoomOverlap(String, String),
    #[error("object '{0}' has no cells")]
    EmptyObject(String),
    #[error("object '{0}' appears more than once")]
    DuplicateObject(String),
    #[error("object '{id}' cell {cell} lies outside the grid")]
    ObjectOutOfBounds { id: String, cell: Coord },
    #[error("object '{id}' sits on wall cell {cell}")]
    ObjectOnWall { id: String, cell: Coord },
    #[error("objects '{first}' and '{second}' both claim cell {cell}")]
    ObjectOverlap { first: String, second: String, cell: Coord },
    #[error("task '{task}' references unknown scene {scene}")]
    UnknownScene { task: String, scene: String },
    #[error("task '{task}' references unknown object '{object}'")]
    UnknownTarget { task: String, object: String },
    #[error("task '{task}' starts at ({x}, {y}), which is not a free in-bounds cell")]
    StartNotFree { task: String, x: f64, y: f64 },
    #[error("task '{0}' has an empty ground-truth answer")]
    EmptyAnswer(String),
    #[error("pose ({x}, {y}) is not on a free cell")]
    PoseNotFree { x: f64, y: f64 },
    #[error("invalid sensor configuration: {0}")]
    InvalidSensor(&'static str),
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

/// Integer cell coordinate. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Coord) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    /// 4-neighbours in east, north, west, south order (y grows downward).
    pub fn neighbors4(self) -> [Coord; 4] {
        [
            Coord::new(self.x + 1, self.y),
            Coord::new(self.x, self.y - 1),
            Coord::new(self.x - 1, self.y),
            Coord::new(self.x, self.y + 1),
        ]
    }

    pub fn neighbors8(self) -> impl Iterator<Item = Coord> {
        (-1..=1)
            .flat_map(move |dy| (-1..=1).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx != 0 || dy != 0)
            .map(move |(dx, dy)| Coord::new(self.x + dx, self.y + dy))
    }

    pub fn center(self) -> (f64, f64) {
        (self.x as f64 + 0.5, self.y as f64 + 0.5)
    }
}

impl From<[i32; 2]> for Coord {
    fn from([x, y]: [i32; 2]) -> Self {
        Coord { x, y }
    }
}

impl From<Coord> for [i32; 2] {
    fn from(c: Coord) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occupancy {
    Free,
    Wall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellTruth {
    pub occupancy: Occupancy,
    /// Index into [`SceneGrid::objects`].
    pub object: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub label: String,
    /// Inclusive cell rectangle `[x0, y0, x1, y1]`.
    pub rect: [i32; 4],
}

impl Room {
    pub fn contains(&self, c: Coord) -> bool {
        let [x0, y0, x1, y1] = self.rect;
        (x0..=x1).contains(&c.x) && (y0..=y1).contains(&c.y)
    }

    fn overlaps(&self, other: &Room) -> bool {
        let [ax0, ay0, ax1, ay1] = self.rect;
        let [bx0, by0, bx1, by1] = other.rect;
        ax0 <= bx1 && bx0 <= ax1 && ay0 <= by1 && by0 <= ay1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub label: String,
    #[serde(default, deserialize_with = "unique_keys")]
    pub attributes: BTreeMap<String, String>,
    pub cells: Vec<Coord>,
}

/// On-disk scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDocument {
    pub width: i64,
    pub height: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(default)]
    pub walls: Vec<Coord>,
    #[serde(default)]
    pub rooms: Vec<Room>,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

/// Validated ground-truth world. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrid {
    width: usize,
    height: usize,
    cells: Vec<CellTruth>,
    rooms: Vec<Room>,
    objects: Vec<SceneObject>,
    resolution: f64,
}

impl SceneGrid {
    pub fn from_document(doc: SceneDocument) -> Result<Self> {
        if doc.width < 3 || doc.height < 3 || doc.width > i32::MAX as i64 || doc.height > i32::MAX as i64 {
            return Err(SceneError::Dimensions {
                width: doc.width,
                height: doc.height,
            });
        }
        let (width, height) = (doc.width as usize, doc.height as usize);
        let in_bounds = |c: Coord| c.x >= 0 && c.y >= 0 && (c.x as usize) < width && (c.y as usize) < height;

        let mut cells = vec![
            CellTruth {
                occupancy: Occupancy::Free,
                object: None
            };
            width * height
        ];
        for &w in &doc.walls {
            if !in_bounds(w) {
                return Err(SceneError::WallOutOfBounds(w));
            }
            cells[w.y as usize * width + w.x as usize].occupancy = Occupancy::Wall;
        }

        for (i, room) in doc.rooms.iter().enumerate() {
            let [x0, y0, x1, y1] = room.rect;
            if x0 > x1 || y0 > y1 || !in_bounds(Coord::new(x0, y0)) || !in_bounds(Coord::new(x1, y1)) {
                return Err(SceneError::RoomOutOfBounds(room.label.clone()));
            }
            if let Some(other) = doc.rooms[..i].iter().find(|r| r.overlaps(room)) {
                return Err(SceneError::RoomOverlap(other.label.clone(), room.label.clone()));
            }
        }

        let mut seen_ids = BTreeSet::new();
        for (idx, obj) in doc.objects.iter().enumerate() {
            if !seen_ids.insert(obj.id.as_str()) {
                return Err(SceneError::DuplicateObject(obj.id.clone()));
            }
            if obj.cells.is_empty() {
                return Err(SceneError::EmptyObject(obj.id.clone()));
            }
            for &c in &obj.cells {
                if !in_bounds(c) {
                    return Err(SceneError::ObjectOutOfBounds { id: obj.id.clone(), cell: c });
                }
                let cell = &mut cells[c.y as usize * width + c.x as usize];
                if cell.occupancy == Occupancy::Wall {
                    return Err(SceneError::ObjectOnWall { id: obj.id.clone(), cell: c });
                }
                match cell.object {
                    Some(prev) if prev != idx => {
                        return Err(SceneError::ObjectOverlap {
                            first: doc.objects[prev].id.clone(),
                            second: obj.id.clone(),
                            cell: c,
                        })
                    }
                    _ => cell.object = Some(idx),
                }
            }
        }

        Ok(Self {
            width,
            height,
            cells,
            rooms: doc.rooms,
            objects: doc.objects,
            resolution: doc.resolution.unwrap_or(DEFAULT_RESOLUTION),
        })
    }

    /// Canonical document: walls in row-major order, everything else as stored.
    pub fn to_document(&self) -> SceneDocument {
        let walls = (0..self.height as i32)
            .flat_map(|y| (0..self.width as i32).map(move |x| Coord::new(x, y)))
            .filter(|&c| self.cell(c).occupancy == Occupancy::Wall)
            .collect();
        SceneDocument {
            width: self.width as i64,
            height: self.height as i64,
            resolution: (self.resolution != DEFAULT_RESOLUTION).then_some(self.resolution),
            walls,
            rooms: self.rooms.clone(),
            objects: self.objects.clone(),
        }
    }

    /// Canonical JSON text (pretty-printed, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_document()).expect("scene serializes");
        s.push('\n');
        s
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn rooms(&self) -> &[Room] {
        &self.rooms
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Panics if `c` is out of bounds.
    pub fn cell(&self, c: Coord) -> &CellTruth {
        assert!(self.in_bounds(c), "cell {c} out of bounds");
        &self.cells[c.y as usize * self.width + c.x as usize]
    }

    pub fn is_free(&self, c: Coord) -> bool {
        self.in_bounds(c) && self.cell(c).occupancy == Occupancy::Free
    }

    pub fn room_at(&self, c: Coord) -> Option<&Room> {
        self.rooms.iter().find(|r| r.contains(c))
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.height as i32).flat_map(move |y| (0..self.width as i32).map(move |x| Coord::new(x, y)))
    }
}

pub fn load_scene(path: &Path) -> Result<SceneGrid> {
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_owned(),
        source,
    })?;
    let doc: SceneDocument = serde_json::from_str(&text).map_err(|source| SceneError::Parse {
        path: path.to_owned(),
        source,
    })?;
    SceneGrid::from_document(doc)
}

/// Continuous agent pose in cell units. Heading is kept in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn at_cell(c: Coord, heading: f64) -> Self {
        let (x, y) = c.center();
        Self::new(x, y, heading)
    }

    pub fn cell(&self) -> Coord {
        Coord::new(self.x.floor() as i32, self.y.floor() as i32)
    }
}

/// Maps any finite angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed angular difference `a - b` folded into `(-π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    /// Field of view in radians, `(0, 2π]`.
    pub fov: f64,
    /// Range in cells.
    pub max_range: f64,
    /// Number of depth rays spread evenly across the field of view.
    pub ray_count: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov: PI / 2.0,
            max_range: 8.0,
            ray_count: 64,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov <= TAU + 1e-12) {
            return Err(SceneError::InvalidSensor("fov must lie in (0, 2pi]"));
        }
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(SceneError::InvalidSensor("max_range must be positive"));
        }
        if self.ray_count == 0 {
            return Err(SceneError::InvalidSensor("ray_count must be at least 1"));
        }
        Ok(())
    }

    /// Whether a ray at absolute angle `angle` falls inside the field of view.
    pub fn covers(&self, heading: f64, angle: f64) -> bool {
        self.fov >= TAU || angle_diff(angle, heading).abs() <= self.fov / 2.0 + 1e-12
    }
}

/// One step's sensor reading.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub pose: Pose,
    /// Sorted by coordinate.
    pub visible_cells: Vec<(Coord, CellTruth)>,
    /// One entry per depth ray, in cells.
    pub depth: Vec<f64>,
    /// Object id -> fraction of its cells in view. Only objects with at
    /// least one visible cell appear.
    pub visible_object_fractions: BTreeMap<String, f64>,
}

impl Observation {
    pub fn empty(step: usize, pose: Pose) -> Self {
        Self {
            step,
            pose,
            visible_cells: Vec::new(),
            depth: Vec::new(),
            visible_object_fractions: BTreeMap::new(),
        }
    }
}

/// Marches one ray, calling `visit` on every in-bounds sampled cell up to and
/// including the first wall. Returns the depth at which the ray stopped.
fn march(scene: &SceneGrid, pose: &Pose, angle: f64, max_range: f64, mut visit: impl FnMut(Coord)) -> f64 {
    let (dy, dx) = angle.sin_cos();
    let samples = (max_range / RAY_SAMPLE_STEP).floor() as usize;
    for k in 1..=samples {
        let t = k as f64 * RAY_SAMPLE_STEP;
        let c = Coord::new((pose.x + t * dx).floor() as i32, (pose.y + t * dy).floor() as i32);
        if !scene.in_bounds(c) {
            return t;
        }
        visit(c);
        if scene.cell(c).occupancy == Occupancy::Wall {
            return t;
        }
    }
    max_range
}

/// Angle of the `j`-th visibility lattice ray.
pub fn lattice_angle(j: usize) -> f64 {
    j as f64 * TAU / VISIBILITY_LATTICE as f64
}

/// Angle of the `i`-th depth ray for a sensor at `heading`.
pub fn depth_ray_angle(sensor: &SensorConfig, heading: f64, i: usize) -> f64 {
    heading - sensor.fov / 2.0 + sensor.fov * (i as f64 + 0.5) / sensor.ray_count as f64
}

/// Simulated camera: what is visible from `pose`.
pub fn sense(scene: &SceneGrid, pose: &Pose, sensor: &SensorConfig, step: usize) -> Result<Observation> {
    sensor.validate()?;
    let here = pose.cell();
    if !scene.is_free(here) {
        return Err(SceneError::PoseNotFree { x: pose.x, y: pose.y });
    }

    let mut visible = BTreeSet::new();
    visible.insert(here);
    for j in 0..VISIBILITY_LATTICE {
        let angle = lattice_angle(j);
        if sensor.covers(pose.heading, angle) {
            march(scene, pose, angle, sensor.max_range, |c| {
                visible.insert(c);
            });
        }
    }

    let depth = (0..sensor.ray_count)
        .map(|i| march(scene, pose, depth_ray_angle(sensor, pose.heading, i), sensor.max_range, |_| {}))
        .collect();

    let mut seen_per_object: BTreeMap<usize, usize> = BTreeMap::new();
    let visible_cells: Vec<_> = visible
        .into_iter()
        .map(|c| {
            let truth = *scene.cell(c);
            if let Some(obj) = truth.object {
                *seen_per_object.entry(obj).or_default() += 1;
            }
            (c, truth)
        })
        .collect();
    let visible_object_fractions = seen_per_object
        .into_iter()
        .map(|(idx, n)| {
            let obj = &scene.objects()[idx];
            (obj.id.clone(), n as f64 / obj.cells.len() as f64)
        })
        .collect();

    Ok(Observation {
        step,
        pose: *pose,
        visible_cells,
        depth,
        visible_object_fractions,
    })
}

/// A question posed about one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionTask {
    pub id: String,
    /// Resolved path of the scene file.
    pub scene: PathBuf,
    pub start: Pose,
    pub question: String,
    pub ground_truth: String,
    /// Objects whose sighting makes a frame decisive.
    pub targets: Vec<String>,
}

/// On-disk task entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub scene: String,
    pub start: [f64; 3],
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub targets: Vec<String>,
}

impl QuestionTask {
    pub fn validate_against(&self, scene: &SceneGrid) -> Result<()> {
        let start = self.start;
        if !(start.x.is_finite() && start.y.is_finite()) || !scene.is_free(start.cell()) {
            return Err(SceneError::StartNotFree {
                task: self.id.clone(),
                x: start.x,
                y: start.y,
            });
        }
        if self.ground_truth.trim().is_empty() {
            return Err(SceneError::EmptyAnswer(self.id.clone()));
        }
        if let Some(missing) = self.targets.iter().find(|t| scene.object_index(t).is_none()) {
            return Err(SceneError::UnknownTarget {
                task: self.id.clone(),
                object: missing.clone(),
            });
        }
        Ok(())
    }
}

/// Tasks together with the scenes they reference, each scene loaded once.
#[derive(Debug, Clone)]
pub struct TaskSet {
    pub tasks: Vec<QuestionTask>,
    pub scenes: BTreeMap<PathBuf, Arc<SceneGrid>>,
}

impl TaskSet {
    pub fn scene_for(&self, task: &QuestionTask) -> &Arc<SceneGrid> {
        &self.scenes[&task.scene]
    }
}

pub fn load_task_set(path: &Path) -> Result<TaskSet> {
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_owned(),
        source,
    })?;
    let docs: Vec<TaskDocument> = serde_json::from_str(&text).map_err(|source| SceneError::Parse {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut scenes: BTreeMap<PathBuf, Arc<SceneGrid>> = BTreeMap::new();
    let mut tasks = Vec::with_capacity(docs.len());
    for (i, doc) in docs.into_iter().enumerate() {
        let id = doc.id.unwrap_or_else(|| format!("task-{i:03}"));
        let scene_path = base.join(&doc.scene);
        if !scenes.contains_key(&scene_path) {
            if !scene_path.is_file() {
                return Err(SceneError::UnknownScene { task: id, scene: doc.scene });
            }
            scenes.insert(scene_path.clone(), Arc::new(load_scene(&scene_path)?));
        }
        let [x, y, heading] = doc.start;
        let task = QuestionTask {
            id,
            scene: scene_path,
            start: Pose::new(x, y, heading),
            question: doc.question,
            ground_truth: doc.answer,
            targets: doc.targets,
        };
        task.validate_against(&scenes[&task.scene])?;
        tasks.push(task);
    }
    Ok(TaskSet { tasks, scenes })
}

pub fn load_tasks(path: &Path) -> Result<Vec<QuestionTask>> {
    load_task_set(path).map(|set| set.tasks)
}

fn unique_keys<'de, D>(de: D) -> std::result::Result<BTreeMap<String, String>, D::Error>
where
    D: Deserializer<'de>,
{
    struct UniqueKeys;

    impl<'de> Visitor<'de> for UniqueKeys {
        type Value = BTreeMap<String, String>;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a map of text attributes with unique keys")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out = BTreeMap::new();
            while let Some((k, v)) = access.next_entry::<String, String>()? {
                if out.contains_key(&k) {
                    return Err(serde::de::Error::custom(format!("duplicate attribute key '{k}'")));
                }
                out.insert(k, v);
            }
            Ok(out)
        }
    }

    de.deserialize_map(UniqueKeys)
}
