//! Tile-based track maps and lane-relative pose queries.
//!
//! A map is a rectangular grid of road tiles whose road forms one closed
//! loop. The right-lane centerline is built from one straight segment or
//! quarter arc per tile and is parameterized by arc length `s`, with the
//! loop oriented counterclockwise (right lane on the outside of the loop).

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TILE_SIZE: f64 = 0.585;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(a: f64) -> Self {
        Self::new(a.cos(), a.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product; positive when `o` is to the left of `self`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    /// Rotated by +90°.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    North,
    East,
    South,
    West,
}

impl Edge {
    pub fn opposite(self) -> Edge {
        match self {
            Edge::North => Edge::South,
            Edge::South => Edge::North,
            Edge::East => Edge::West,
            Edge::West => Edge::East,
        }
    }

    /// Outward unit normal in world coordinates (x east, y north).
    pub fn normal(self) -> Vec2 {
        match self {
            Edge::North => Vec2::new(0.0, 1.0),
            Edge::South => Vec2::new(0.0, -1.0),
            Edge::East => Vec2::new(1.0, 0.0),
            Edge::West => Vec2::new(-1.0, 0.0),
        }
    }

    /// Grid step `(dcol, drow)`; rows grow southward.
    fn grid_step(self) -> (isize, isize) {
        match self {
            Edge::North => (0, -1),
            Edge::South => (0, 1),
            Edge::East => (1, 0),
            Edge::West => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tile {
    StraightNS,
    StraightEW,
    CurveNE,
    CurveNW,
    CurveSE,
    CurveSW,
    Empty,
}

impl Tile {
    pub const ALL: [Tile; 7] = [
        Tile::StraightNS,
        Tile::StraightEW,
        Tile::CurveNE,
        Tile::CurveNW,
        Tile::CurveSE,
        Tile::CurveSW,
        Tile::Empty,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Tile::StraightNS => "S_NS",
            Tile::StraightEW => "S_EW",
            Tile::CurveNE => "C_NE",
            Tile::CurveNW => "C_NW",
            Tile::CurveSE => "C_SE",
            Tile::CurveSW => "C_SW",
            Tile::Empty => "X",
        }
    }

    pub fn from_code(code: &str) -> Option<Tile> {
        Tile::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn edges(self) -> Option<[Edge; 2]> {
        use Edge::*;
        match self {
            Tile::StraightNS => Some([North, South]),
            Tile::StraightEW => Some([East, West]),
            Tile::CurveNE => Some([North, East]),
            Tile::CurveNW => Some([North, West]),
            Tile::CurveSE => Some([South, East]),
            Tile::CurveSW => Some([South, West]),
            Tile::Empty => None,
        }
    }

    fn from_edges(a: Edge, b: Edge) -> Option<Tile> {
        Tile::ALL.into_iter().find(|t| match t.edges() {
            Some([x, y]) => (x == a && y == b) || (x == b && y == a),
            None => false,
        })
    }

    pub fn is_road(self) -> bool {
        self != Tile::Empty
    }

    pub fn is_curve(self) -> bool {
        matches!(
            self,
            Tile::CurveNE | Tile::CurveNW | Tile::CurveSE | Tile::CurveSW
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("empty map document")]
    Empty,
    #[error("bad header line {0:?}: expected `tilesize <meters>` with a positive value")]
    BadHeader(String),
    #[error("non-rectangular grid: row {row} has {found} tiles, expected {expected}")]
    NonRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown tile code {code:?} at (col {col}, row {row})")]
    UnknownTile { code: String, col: usize, row: usize },
    #[error("map has no road tiles")]
    NoRoad,
    #[error("open road at tile (col {col}, row {row})")]
    OpenRoad { col: usize, row: usize },
    #[error("road not a single loop: tile (col {col}, row {row}) is not on the first loop")]
    NotSingleLoop { col: usize, row: usize },
    #[error("invalid map generation config: {0}")]
    InvalidGenConfig(String),
    #[error("map generation config admits no closed loop after {0} attempts")]
    Unsatisfiable(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SegmentShape {
    Line { start: Vec2, dir: Vec2 },
    /// `sweep` is +1 for counterclockwise (left turn), -1 for clockwise.
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    shape: SegmentShape,
    s_start: f64,
    length: f64,
}

struct Closest {
    dist: f64,
    local_s: f64,
    point: Vec2,
    tangent: f64,
}

impl Segment {
    fn point_at(&self, local_s: f64) -> (Vec2, f64) {
        match self.shape {
            SegmentShape::Line { start, dir } => (start + dir.scale(local_s), dir.angle()),
            SegmentShape::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let a = start_angle + sweep * local_s / radius;
                (
                    center + Vec2::from_angle(a).scale(radius),
                    wrap_angle(a + sweep * FRAC_PI_2),
                )
            }
        }
    }

    fn closest(&self, p: Vec2) -> Closest {
        let local_s = match self.shape {
            SegmentShape::Line { start, dir } => (p - start).dot(dir).clamp(0.0, self.length),
            SegmentShape::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let rel = p - center;
                let delta = wrap_angle(rel.angle() - start_angle) * sweep;
                if (0.0..=FRAC_PI_2).contains(&delta) {
                    delta * radius
                } else {
                    // beyond the arc: nearer endpoint
                    let (a, _) = self.point_at(0.0);
                    let (b, _) = self.point_at(self.length);
                    if (p - a).norm() <= (p - b).norm() {
                        0.0
                    } else {
                        self.length
                    }
                }
            }
        };
        let (point, tangent) = self.point_at(local_s);
        Closest {
            dist: (p - point).norm(),
            local_s,
            point,
            tangent,
        }
    }
}

/// Lateral/heading error relative to the right-lane centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePose {
    /// Signed lateral offset, positive to the left (toward the road center).
    pub d: f64,
    /// Heading error in `(-π, π]`, positive counterclockwise.
    pub psi: f64,
    /// Arc length of the closest centerline point.
    pub s: f64,
    pub in_right_lane: bool,
    pub on_road: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackMap {
    tiles: Vec<Vec<Tile>>,
    tile_size: f64,
    lane_width: f64,
    segments: Vec<Segment>,
    total_length: f64,
}

impl TrackMap {
    /// Parses a map document: `tilesize <meters>` followed by rows of tile codes.
    pub fn parse(text: &str) -> Result<TrackMap, MapError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or(MapError::Empty)?;
        let mut parts = header.split_whitespace();
        let tile_size = match (parts.next(), parts.next(), parts.next()) {
            (Some("tilesize"), Some(v), None) => v
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| MapError::BadHeader(header.to_string()))?,
            _ => return Err(MapError::BadHeader(header.to_string())),
        };
        let mut tiles: Vec<Vec<Tile>> = Vec::new();
        for (row, line) in lines.enumerate() {
            let mut cells = Vec::new();
            for (col, code) in line.split_whitespace().enumerate() {
                let tile = Tile::from_code(code).ok_or_else(|| MapError::UnknownTile {
                    code: code.to_string(),
                    col,
                    row,
                })?;
                cells.push(tile);
            }
            if let Some(first) = tiles.first() {
                if first.len() != cells.len() {
                    return Err(MapError::NonRectangular {
                        row,
                        expected: first.len(),
                        found: cells.len(),
                    });
                }
            }
            tiles.push(cells);
        }
        if tiles.is_empty() {
            return Err(MapError::NoRoad);
        }
        TrackMap::from_tiles(tiles, tile_size)
    }

    pub fn from_tiles(tiles: Vec<Vec<Tile>>, tile_size: f64) -> Result<TrackMap, MapError> {
        if !(tile_size.is_finite() && tile_size > 0.0) {
            return Err(MapError::BadHeader(format!("tilesize {tile_size}")));
        }
        let height = tiles.len();
        let width = tiles.first().map_or(0, Vec::len);
        for (row, r) in tiles.iter().enumerate() {
            if r.len() != width {
                return Err(MapError::NonRectangular {
                    row,
                    expected: width,
                    found: r.len(),
                });
            }
        }
        let at = |col: isize, row: isize| -> Tile {
            if col < 0 || row < 0 || col as usize >= width || row as usize >= height {
                Tile::Empty
            } else {
                tiles[row as usize][col as usize]
            }
        };

        // every road edge must be matched by the neighbor
        let mut road_count = 0;
        let mut first = None;
        for row in 0..height {
            for col in 0..width {
                let Some(edges) = tiles[row][col].edges() else {
                    continue;
                };
                road_count += 1;
                first.get_or_insert((col, row));
                for e in edges {
                    let (dc, dr) = e.grid_step();
                    let n = at(col as isize + dc, row as isize + dr);
                    let ok = n.edges().is_some_and(|ne| ne.contains(&e.opposite()));
                    if !ok {
                        return Err(MapError::OpenRoad { col, row });
                    }
                }
            }
        }
        let (c0, r0) = first.ok_or(MapError::NoRoad)?;

        // walk the loop: (col, row, entry edge, exit edge)
        let mut walk: Vec<(usize, usize, Edge, Edge)> = Vec::new();
        let mut visited = vec![vec![false; width]; height];
        let start_edges = tiles[r0][c0].edges().expect("road tile");
        let (mut col, mut row) = (c0, r0);
        let mut entry = start_edges[0];
        loop {
            if visited[row][col] {
                break;
            }
            visited[row][col] = true;
            let edges = tiles[row][col].edges().expect("road tile");
            let exit = if edges[0] == entry { edges[1] } else { edges[0] };
            walk.push((col, row, entry, exit));
            let (dc, dr) = exit.grid_step();
            col = (col as isize + dc) as usize;
            row = (row as isize + dr) as usize;
            entry = exit.opposite();
        }
        if walk.len() != road_count {
            for (row, r) in visited.iter().enumerate() {
                for (col, v) in r.iter().enumerate() {
                    if !v && tiles[row][col].is_road() {
                        return Err(MapError::NotSingleLoop { col, row });
                    }
                }
            }
        }

        let center = |col: usize, row: usize| {
            Vec2::new(
                (col as f64 + 0.5) * tile_size,
                ((height - 1 - row) as f64 + 0.5) * tile_size,
            )
        };
        let area: f64 = (0..walk.len())
            .map(|i| {
                let (ca, ra, _, _) = walk[i];
                let (cb, rb, _, _) = walk[(i + 1) % walk.len()];
                center(ca, ra).cross(center(cb, rb))
            })
            .sum();
        if area < 0.0 {
            walk.reverse();
            for w in &mut walk {
                std::mem::swap(&mut w.2, &mut w.3);
            }
        }

        let lane_width = tile_size / 2.0;
        let mut segments = Vec::with_capacity(walk.len());
        let mut s = 0.0;
        for &(col, row, entry, exit) in &walk {
            let c = center(col, row);
            let half = tile_size / 2.0;
            let entry_mid = c + entry.normal().scale(half);
            let dir_in = entry.normal().scale(-1.0);
            let right = Vec2::new(dir_in.y, -dir_in.x);
            let start = entry_mid + right.scale(lane_width / 2.0);
            let (shape, length) = if entry == exit.opposite() {
                (
                    SegmentShape::Line { start, dir: dir_in },
                    tile_size,
                )
            } else {
                let corner = c + entry.normal().scale(half) + exit.normal().scale(half);
                let left_turn = dir_in.cross(exit.normal()) > 0.0;
                let (radius, sweep) = if left_turn {
                    (half + lane_width / 2.0, 1.0)
                } else {
                    (half - lane_width / 2.0, -1.0)
                };
                (
                    SegmentShape::Arc {
                        center: corner,
                        radius,
                        start_angle: (start - corner).angle(),
                        sweep,
                    },
                    radius * FRAC_PI_2,
                )
            };
            segments.push(Segment {
                shape,
                s_start: s,
                length,
            });
            s += length;
        }

        Ok(TrackMap {
            tiles,
            tile_size,
            lane_width,
            segments,
            total_length: s,
        })
    }

    /// Inverse of [`TrackMap::parse`].
    pub fn serialize(&self) -> String {
        let mut out = format!("tilesize {}\n", self.tile_size);
        for row in &self.tiles {
            let codes: Vec<&str> = row.iter().map(|t| t.code()).collect();
            out.push_str(&codes.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn tiles(&self) -> &[Vec<Tile>] {
        &self.tiles
    }

    pub fn width(&self) -> usize {
        self.tiles.first().map_or(0, Vec::len)
    }

    pub fn height(&self) -> usize {
        self.tiles.len()
    }

    pub fn tile_size(&self) -> f64 {
        self.tile_size
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    pub fn road_width(&self) -> f64 {
        2.0 * self.lane_width
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Tile containing a world point, with its column and row.
    pub fn tile_at(&self, p: Vec2) -> Option<(usize, usize, Tile)> {
        let col = (p.x / self.tile_size).floor();
        let row_from_bottom = (p.y / self.tile_size).floor();
        if col < 0.0 || row_from_bottom < 0.0 {
            return None;
        }
        let (col, rb) = (col as usize, row_from_bottom as usize);
        if col >= self.width() || rb >= self.height() {
            return None;
        }
        let row = self.height() - 1 - rb;
        Some((col, row, self.tiles[row][col]))
    }

    /// Lower-left corner of a tile in world coordinates.
    pub fn tile_origin(&self, col: usize, row: usize) -> Vec2 {
        Vec2::new(
            col as f64 * self.tile_size,
            (self.height() - 1 - row) as f64 * self.tile_size,
        )
    }

    /// Position and direction of travel at arc length `s` (taken modulo the loop length).
    pub fn centerline_point(&self, s: f64) -> (Vec2, f64) {
        let s = s.rem_euclid(self.total_length);
        let idx = self
            .segments
            .partition_point(|seg| seg.s_start <= s)
            .saturating_sub(1);
        let seg = &self.segments[idx];
        seg.point_at((s - seg.s_start).min(seg.length))
    }

    pub fn lane_pose(&self, position: Vec2, heading: f64) -> LanePose {
        let mut best: Option<(Closest, f64)> = None;
        for seg in &self.segments {
            let c = seg.closest(position);
            if best.as_ref().is_none_or(|(b, _)| c.dist < b.dist) {
                best = Some((c, seg.s_start));
            }
        }
        let (c, s0) = best.expect("track has segments");
        let d = Vec2::from_angle(c.tangent).cross(position - c.point);
        let half = self.lane_width / 2.0;
        let in_right_lane = d.abs() <= half;
        let on_road = (-half..=3.0 * half).contains(&d);
        LanePose {
            d,
            psi: wrap_angle(heading - c.tangent),
            s: (s0 + c.local_s).rem_euclid(self.total_length),
            in_right_lane,
            on_road,
        }
    }

    /// Signed arc-length difference `to - from`, wrapped into `(-L/2, L/2]`.
    pub fn arc_delta(&self, from: f64, to: f64) -> f64 {
        let l = self.total_length;
        let r = (to - from).rem_euclid(l);
        if r > l / 2.0 {
            r - l
        } else {
            r
        }
    }
}

impl fmt::Display for TrackMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

/// Bounds for [`generate_random_map`]. Grid dimensions are in tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapGenConfig {
    pub min_width: usize,
    pub max_width: usize,
    pub min_height: usize,
    pub max_height: usize,
    pub min_curve_fraction: f64,
    pub max_curve_fraction: f64,
    pub tile_size: f64,
    pub max_attempts: usize,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        Self {
            min_width: 4,
            max_width: 8,
            min_height: 4,
            max_height: 8,
            min_curve_fraction: 0.0,
            max_curve_fraction: 1.0,
            tile_size: DEFAULT_TILE_SIZE,
            max_attempts: 1000,
        }
    }
}

impl MapGenConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |m: &str| Err(MapError::InvalidGenConfig(m.to_string()));
        if self.min_width > self.max_width || self.min_height > self.max_height {
            return bad("min grid size exceeds max");
        }
        if self.max_width < 2 || self.max_height < 2 {
            return bad("a closed loop needs at least a 2x2 grid");
        }
        if !(0.0..=1.0).contains(&self.min_curve_fraction)
            || !(0.0..=1.0).contains(&self.max_curve_fraction)
            || self.min_curve_fraction > self.max_curve_fraction
        {
            return bad("curve fraction bounds must satisfy 0 <= min <= max <= 1");
        }
        if !(self.tile_size.is_finite() && self.tile_size > 0.0) {
            return bad("tile_size must be positive");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }
}

/// Generates a random single-loop map.
///
/// The loop is the contour around a random tree of 2x2 tile blocks, so every
/// draw is a valid closed road; draws violating the curve-fraction bounds are
/// rejected and redrawn.
pub fn generate_random_map(seed: u64, cfg: &MapGenConfig) -> Result<TrackMap, MapError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cfg.max_attempts {
        let w = rng.random_range(cfg.min_width.max(2)..=cfg.max_width);
        let h = rng.random_range(cfg.min_height.max(2)..=cfg.max_height);
        let tiles = random_block_loop(&mut rng, w, h);
        let road: Vec<Tile> = tiles.iter().flatten().copied().filter(|t| t.is_road()).collect();
        let curve_frac = road.iter().filter(|t| t.is_curve()).count() as f64 / road.len() as f64;
        if curve_frac < cfg.min_curve_fraction || curve_frac > cfg.max_curve_fraction {
            continue;
        }
        return TrackMap::from_tiles(tiles, cfg.tile_size);
    }
    Err(MapError::Unsatisfiable(cfg.max_attempts))
}

fn random_block_loop(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<Vec<Tile>> {
    let (cw, ch) = (w / 2, h / 2);
    let target = rng.random_range(1..=cw * ch);
    let mut in_tree = vec![vec![false; cw]; ch];
    // tree edges as (cell, cell), cells are (cx, cy)
    let mut links: Vec<((usize, usize), (usize, usize))> = Vec::new();
    let start = (rng.random_range(0..cw), rng.random_range(0..ch));
    in_tree[start.1][start.0] = true;
    let mut members = vec![start];
    while members.len() < target {
        let mut frontier = Vec::new();
        for &(x, y) in &members {
            let neighbors = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbors {
                if nx < cw && ny < ch && !in_tree[ny][nx] {
                    frontier.push(((x, y), (nx, ny)));
                }
            }
        }
        let (from, to) = frontier[rng.random_range(0..frontier.len())];
        in_tree[to.1][to.0] = true;
        members.push(to);
        links.push((from, to));
    }

    // edge sets per tile of the 2*cw x 2*ch block grid
    let (tw, th) = (2 * cw, 2 * ch);
    let mut edges: Vec<Vec<Vec<Edge>>> = vec![vec![Vec::new(); tw]; th];
    let mut link = |a: (usize, usize), b: (usize, usize), e: Edge| {
        edges[a.1][a.0].push(e);
        edges[b.1][b.0].push(e.opposite());
    };
    for &(cx, cy) in &members {
        let (x, y) = (2 * cx, 2 * cy);
        link((x, y), (x + 1, y), Edge::East);
        link((x, y), (x, y + 1), Edge::South);
        link((x + 1, y), (x + 1, y + 1), Edge::South);
        link((x, y + 1), (x + 1, y + 1), Edge::East);
    }
    let mut unlink = |a: (usize, usize), e: Edge| {
        let (dc, dr) = e.grid_step();
        let b = ((a.0 as isize + dc) as usize, (a.1 as isize + dr) as usize);
        edges[a.1][a.0].retain(|x| *x != e);
        edges[b.1][b.0].retain(|x| *x != e.opposite());
    };
    let mut joins = Vec::new();
    for &(a, b) in &links {
        let (lo, hi) = if (a.0, a.1) < (b.0, b.1) { (a, b) } else { (b, a) };
        let (lx, ly) = (2 * lo.0, 2 * lo.1);
        let (hx, hy) = (2 * hi.0, 2 * hi.1);
        if lo.1 == hi.1 {
            // lo is west of hi
            unlink((lx + 1, ly), Edge::South);
            unlink((hx, hy), Edge::South);
            joins.push(((lx + 1, ly), Edge::East));
            joins.push(((lx + 1, ly + 1), Edge::East));
        } else {
            // lo is north of hi
            unlink((lx, ly + 1), Edge::East);
            unlink((hx, hy), Edge::East);
            joins.push(((lx, ly + 1), Edge::South));
            joins.push(((lx + 1, ly + 1), Edge::South));
        }
    }
    for (a, e) in joins {
        let (dc, dr) = e.grid_step();
        let b = ((a.0 as isize + dc) as usize, (a.1 as isize + dr) as usize);
        edges[a.1][a.0].push(e);
        edges[b.1][b.0].push(e.opposite());
    }

    let off_x = rng.random_range(0..=w - tw);
    let off_y = rng.random_range(0..=h - th);
    let mut tiles = vec![vec![Tile::Empty; w]; h];
    for (y, row) in edges.iter().enumerate() {
        for (x, e) in row.iter().enumerate() {
            if let [a, b] = e[..] {
                tiles[y + off_y][x + off_x] = Tile::from_edges(a, b).expect("two distinct edges");
            }
        }
    }
    tiles
}

/// Built-in maps.
pub mod maps {
    /// 14-tile loop with one right-hand and five left-hand curves.
    pub const LOOP: &str = "tilesize 0.585
C_SE S_EW S_EW C_SW X
S_NS X X C_NE C_SW
S_NS X X X S_NS
C_NE S_EW S_EW S_EW C_NW
";

    /// The smallest ring with straights: 3x3 with an empty center.
    pub const RING_3X3: &str = "tilesize 0.585
C_SE S_EW C_SW
S_NS X S_NS
C_NE S_EW C_NW
";

    /// Long two-row ring whose straights are 14 tiles (8.19 m) long.
    pub const LONG_STRAIGHT: &str = "tilesize 0.585
C_SE S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW C_SW
C_NE S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW S_EW C_NW
";

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "loop" => Some(LOOP),
            "ring" => Some(RING_3X3),
            "straight" => Some(LONG_STRAIGHT),
            _ => None,
        }
    }
}
