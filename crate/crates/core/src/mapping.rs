//! The agent's belief map: which cells have been seen, what they contain, and
//! how promising each region looks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::scene::{Coord, Observation, Occupancy};

/// Semantic value of a cell nobody has said anything about yet.
pub const NEUTRAL_SEMANTIC: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MapError {
    #[error("map must be at least 3x3, got {width}x{height}")]
    Dimensions { width: usize, height: usize },
    #[error("cell {0} lies outside the map")]
    OutOfBounds(Coord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Belief {
    Unknown,
    Free,
    Wall,
}

impl From<Occupancy> for Belief {
    fn from(o: Occupancy) -> Self {
        match o {
            Occupancy::Free => Belief::Free,
            Occupancy::Wall => Belief::Wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMap {
    width: usize,
    height: usize,
    belief: Vec<Belief>,
    semantic: Vec<f64>,
}

impl SemanticMap {
    pub fn new(width: usize, height: usize) -> Result<Self, MapError> {
        if width < 3 || height < 3 {
            return Err(MapError::Dimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            belief: vec![Belief::Unknown; width * height],
            semantic: vec![NEUTRAL_SEMANTIC; width * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    fn idx(&self, c: Coord) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    /// `Unknown` for out-of-bounds cells.
    pub fn belief(&self, c: Coord) -> Belief {
        if self.in_bounds(c) {
            self.belief[self.idx(c)]
        } else {
            Belief::Unknown
        }
    }

    pub fn is_explored(&self, c: Coord) -> bool {
        self.belief(c) != Belief::Unknown
    }

    /// In-bounds and not yet seen.
    pub fn is_unexplored(&self, c: Coord) -> bool {
        self.in_bounds(c) && self.belief[self.idx(c)] == Belief::Unknown
    }

    pub fn is_known_free(&self, c: Coord) -> bool {
        self.belief(c) == Belief::Free
    }

    /// Panics if `c` is out of bounds.
    pub fn semantic_value(&self, c: Coord) -> f64 {
        assert!(self.in_bounds(c), "cell {c} out of bounds");
        self.semantic[self.idx(c)]
    }

    pub fn explored_count(&self) -> usize {
        self.belief.iter().filter(|b| **b != Belief::Unknown).count()
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.height as i32).flat_map(move |y| (0..self.width as i32).map(move |x| Coord::new(x, y)))
    }

    /// Fuses one observation and, optionally, spatially projected direction
    /// confidences. Bounds are checked before anything is written, so a failed
    /// call leaves the map untouched.
    pub fn integrate(&mut self, obs: &Observation, direction_values: Option<&BTreeMap<Coord, f64>>) -> Result<(), MapError> {
        if let Some((c, _)) = obs.visible_cells.iter().find(|(c, _)| !self.in_bounds(*c)) {
            return Err(MapError::OutOfBounds(*c));
        }
        if let Some(c) = direction_values.and_then(|v| v.keys().find(|c| !self.in_bounds(**c))) {
            return Err(MapError::OutOfBounds(*c));
        }
        for (c, truth) in &obs.visible_cells {
            let i = self.idx(*c);
            self.belief[i] = truth.occupancy.into();
        }
        if let Some(values) = direction_values {
            self.fuse_unchecked(values);
        }
        Ok(())
    }

    /// Max-fuses direction values into the semantic layer.
    pub fn fuse_semantic(&mut self, values: &BTreeMap<Coord, f64>) -> Result<(), MapError> {
        if let Some(c) = values.keys().find(|c| !self.in_bounds(**c)) {
            return Err(MapError::OutOfBounds(*c));
        }
        self.fuse_unchecked(values);
        Ok(())
    }

    fn fuse_unchecked(&mut self, values: &BTreeMap<Coord, f64>) {
        for (c, v) in values {
            let i = self.idx(*c);
            let incoming = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            self.semantic[i] = self.semantic[i].max(incoming);
        }
    }

    /// Marks a cell directly. Used when rebuilding maps from logs and in tests.
    pub fn set_belief(&mut self, c: Coord, belief: Belief) -> Result<(), MapError> {
        if !self.in_bounds(c) {
            return Err(MapError::OutOfBounds(c));
        }
        let i = self.idx(c);
        self.belief[i] = belief;
        Ok(())
    }

    /// One character per cell: `?` unknown, `.` free, `#` wall.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(match self.belief[y * self.width + x] {
                    Belief::Unknown => '?',
                    Belief::Free => '.',
                    Belief::Wall => '#',
                });
            }
            out.push('\n');
        }
        out
    }

    /// Semantic values, one CSV row per grid row, three decimals.
    pub fn semantic_csv(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if x > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{:.3}", self.semantic[y * self.width + x]);
            }
            out.push('\n');
        }
        out
    }
}
