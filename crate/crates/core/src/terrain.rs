//! Heightfield terrain: six parametric tile families at ten difficulty levels,
//! a world of straight paths built from them, bilinear height lookup and the
//! privileged height scan.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TILE_ROWS: usize = 20;
pub const TILE_COLS: usize = 10;
pub const NUM_LEVELS: usize = 10;
pub const MAX_LEVEL: usize = NUM_LEVELS - 1;
pub const SCAN_LATERAL: usize = 11;
pub const SCAN_LONGITUDINAL: usize = 17;
pub const SCAN_POINTS: usize = SCAN_LATERAL * SCAN_LONGITUDINAL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rough,
    SlopeUp,
    SlopeDown,
    StairsUp,
    StairsDown,
    Obstacles,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Rough,
        Family::SlopeUp,
        Family::SlopeDown,
        Family::StairsUp,
        Family::StairsDown,
        Family::Obstacles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Rough => "rough",
            Family::SlopeUp => "slope_up",
            Family::SlopeDown => "slope_down",
            Family::StairsUp => "stairs_up",
            Family::StairsDown => "stairs_down",
            Family::Obstacles => "obstacles",
        }
    }

    pub fn index(self) -> usize {
        Family::ALL.iter().position(|f| *f == self).expect("listed")
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown terrain family {s:?} (expected one of rough, slope_up, slope_down, stairs_up, stairs_down, obstacles)"
                ))
            })
    }
}

/// Difficulty schedules; every parameter is linear in the level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainConfig {
    pub cell_size: f64,
    pub rough_amplitude_base: f64,
    pub rough_amplitude_per_level: f64,
    pub slope_grade_base: f64,
    pub slope_grade_per_level: f64,
    pub stair_rise_base: f64,
    pub stair_rise_per_level: f64,
    pub stair_tread: f64,
    pub obstacle_height_base: f64,
    pub obstacle_height_per_level: f64,
    pub obstacle_density_min: f64,
    pub obstacle_density_max: f64,
    pub friction: f64,
    pub restitution: f64,
    pub num_rows: usize,
    /// Families assigned to the world's rows, cycled.
    pub train_families: Vec<Family>,
    pub scan_spacing: f64,
    /// Forward shift of the scan grid centre in the heading frame.
    pub scan_forward_offset: f64,
    pub scan_clip: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig {
            cell_size: 0.4,
            rough_amplitude_base: 0.025,
            rough_amplitude_per_level: 0.01,
            slope_grade_base: 0.05,
            slope_grade_per_level: 0.03,
            stair_rise_base: 0.05,
            stair_rise_per_level: 0.012,
            stair_tread: 0.30,
            obstacle_height_base: 0.03,
            obstacle_height_per_level: 0.02,
            obstacle_density_min: 0.10,
            obstacle_density_max: 0.30,
            friction: 1.0,
            restitution: 0.0,
            num_rows: 10,
            train_families: vec![
                Family::Rough,
                Family::SlopeUp,
                Family::SlopeDown,
                Family::StairsUp,
                Family::StairsDown,
                Family::Obstacles,
            ],
            scan_spacing: 0.1,
            scan_forward_offset: 0.0,
            scan_clip: 1.0,
        }
    }
}

impl TerrainConfig {
    pub fn rough_amplitude(&self, level: usize) -> f64 {
        self.rough_amplitude_base + self.rough_amplitude_per_level * level as f64
    }

    pub fn slope_grade(&self, level: usize) -> f64 {
        self.slope_grade_base + self.slope_grade_per_level * level as f64
    }

    pub fn stair_rise(&self, level: usize) -> f64 {
        self.stair_rise_base + self.stair_rise_per_level * level as f64
    }

    pub fn obstacle_height(&self, level: usize) -> f64 {
        self.obstacle_height_base + self.obstacle_height_per_level * level as f64
    }

    pub fn obstacle_density(&self, level: usize) -> f64 {
        let t = level as f64 / MAX_LEVEL as f64;
        self.obstacle_density_min + t * (self.obstacle_density_max - self.obstacle_density_min)
    }

    pub fn tile_length(&self) -> f64 {
        TILE_ROWS as f64 * self.cell_size
    }

    pub fn tile_width(&self) -> f64 {
        TILE_COLS as f64 * self.cell_size
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::Config(format!(
                "terrain.cell_size must lie in (0, inf), got {}",
                self.cell_size
            )));
        }
        if self.num_rows == 0 {
            return Err(Error::Config("terrain.num_rows must be at least 1".into()));
        }
        if self.train_families.is_empty() {
            return Err(Error::Config("terrain.train_families must not be empty".into()));
        }
        for (key, v) in [
            ("terrain.obstacle_density_min", self.obstacle_density_min),
            ("terrain.obstacle_density_max", self.obstacle_density_max),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{key} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.stair_tread > 0.0 && self.scan_spacing > 0.0 && self.scan_clip > 0.0) {
            return Err(Error::Config(
                "terrain.stair_tread, terrain.scan_spacing and terrain.scan_clip must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Regular grid of cell-centre heights; index `(i, j)` is `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub heights: Vec<f64>,
}

/// Interpolated height plus a flag set when the query was clamped into bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightSample {
    pub height: f64,
    pub clamped: bool,
}

impl Heightfield {
    pub fn new(nx: usize, ny: usize, cell: f64) -> Self {
        Heightfield {
            nx,
            ny,
            cell,
            heights: vec![0.0; nx * ny],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.heights[i * self.ny + j]
    }

    pub fn set(&mut self, i: usize, j: usize, h: f64) {
        self.heights[i * self.ny + j] = h;
    }

    pub fn length(&self) -> f64 {
        self.nx as f64 * self.cell
    }

    pub fn width(&self) -> f64 {
        self.ny as f64 * self.cell
    }

    /// Bilinear interpolation between cell centres. Queries outside the
    /// footprint are clamped to it and flagged.
    pub fn sample(&self, x: f64, y: f64) -> HeightSample {
        let clamped = !(0.0..=self.length()).contains(&x) || !(0.0..=self.width()).contains(&y);
        let (i0, i1, tx) = axis_weights(x / self.cell - 0.5, self.nx);
        let (j0, j1, ty) = axis_weights(y / self.cell - 0.5, self.ny);
        let h00 = self.get(i0, j0);
        let h10 = self.get(i1, j0);
        let h01 = self.get(i0, j1);
        let h11 = self.get(i1, j1);
        let a = h00 + (h10 - h00) * tx;
        let b = h01 + (h11 - h01) * tx;
        HeightSample {
            height: a + (b - a) * ty,
            clamped: clamped || x.is_nan() || y.is_nan(),
        }
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.sample(x, y).height
    }
}

fn axis_weights(f: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let f = if f.is_nan() { 0.0 } else { f.clamp(0.0, max) };
    let i0 = f.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, f - i0 as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainTile {
    pub field: Heightfield,
    pub family: Family,
    pub level: usize,
    pub friction: f64,
    pub restitution: f64,
}

impl TerrainTile {
    pub fn height(&self, i: usize, j: usize) -> f64 {
        self.field.get(i, j)
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.field.height_at(x, y)
    }

    /// Height of the last row, used to chain tiles without steps between them.
    pub fn exit_height(&self) -> f64 {
        let i = self.field.nx - 1;
        (0..self.field.ny).map(|j| self.field.get(i, j)).sum::<f64>() / self.field.ny as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.field.nx {
            let row: Vec<String> = (0..self.field.ny)
                .map(|j| format!("{}", self.field.get(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn generate_tile(family: Family, level: usize, seed: u64) -> Result<TerrainTile> {
    generate_tile_with(&TerrainConfig::default(), family, level, seed)
}

/// Deterministic tile for `(family, level, seed)` under the given schedules.
pub fn generate_tile_with(cfg: &TerrainConfig, family: Family, level: usize, seed: u64) -> Result<TerrainTile> {
    if level > MAX_LEVEL {
        return Err(Error::Config(format!(
            "terrain level must lie in [0, {MAX_LEVEL}], got {level}"
        )));
    }
    let mut field = Heightfield::new(TILE_ROWS, TILE_COLS, cfg.cell_size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs = cfg.cell_size;
    for i in 0..TILE_ROWS {
        let x = (i as f64 + 0.5) * cs;
        for j in 0..TILE_COLS {
            let h = match family {
                Family::Rough => {
                    let a = cfg.rough_amplitude(level);
                    rng.random_range(-a..=a)
                }
                Family::SlopeUp => cfg.slope_grade(level) * x,
                Family::SlopeDown => -cfg.slope_grade(level) * x,
                Family::StairsUp => (x / cfg.stair_tread).floor() * cfg.stair_rise(level),
                Family::StairsDown => -(x / cfg.stair_tread).floor() * cfg.stair_rise(level),
                Family::Obstacles => {
                    let block = cfg.obstacle_height(level);
                    if rng.random::<f64>() < cfg.obstacle_density(level) {
                        if rng.random::<bool>() {
                            block
                        } else {
                            -block
                        }
                    } else {
                        0.0
                    }
                }
            };
            field.set(i, j, h);
        }
    }
    Ok(TerrainTile {
        field,
        family,
        level,
        friction: cfg.friction,
        restitution: cfg.restitution,
    })
}

fn mix_seed(seed: u64, row: usize, level: usize) -> u64 {
    let mut z = seed ^ ((row as u64) << 32) ^ (level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ten straight paths side by side along `y`; path `r` holds tiles of levels
/// 0–9 in order along `x`, each tile offset so consecutive tiles join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainWorld {
    pub field: Heightfield,
    pub row_families: Vec<Family>,
    pub tile_length: f64,
    pub tile_width: f64,
    pub scan_spacing: f64,
    pub scan_forward_offset: f64,
    pub scan_clip: f64,
    pub friction: f64,
    pub restitution: f64,
}

/// Base pose needed by the scan: position and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl TerrainWorld {
    pub fn generate(cfg: &TerrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let rows = cfg.num_rows;
        let mut field = Heightfield::new(TILE_ROWS * NUM_LEVELS, TILE_COLS * rows, cfg.cell_size);
        let mut row_families = Vec::with_capacity(rows);
        for r in 0..rows {
            let family = cfg.train_families[r % cfg.train_families.len()];
            row_families.push(family);
            let mut offset = 0.0;
            for level in 0..NUM_LEVELS {
                let tile = generate_tile_with(cfg, family, level, mix_seed(seed, r, level))?;
                for i in 0..TILE_ROWS {
                    for j in 0..TILE_COLS {
                        field.set(level * TILE_ROWS + i, r * TILE_COLS + j, offset + tile.height(i, j));
                    }
                }
                offset += tile.exit_height();
            }
        }
        Ok(TerrainWorld {
            field,
            row_families,
            tile_length: cfg.tile_length(),
            tile_width: cfg.tile_width(),
            scan_spacing: cfg.scan_spacing,
            scan_forward_offset: cfg.scan_forward_offset,
            scan_clip: cfg.scan_clip,
            friction: cfg.friction,
            restitution: cfg.restitution,
        })
    }

    /// A world made of one flat tile per slot at height `h`.
    pub fn flat(cfg: &TerrainConfig, h: f64) -> Self {
        let rows = cfg.num_rows;
        let mut field = Heightfield::new(TILE_ROWS * NUM_LEVELS, TILE_COLS * rows, cfg.cell_size);
        field.heights.iter_mut().for_each(|v| *v = h);
        TerrainWorld {
            field,
            row_families: (0..rows)
                .map(|r| cfg.train_families[r % cfg.train_families.len()])
                .collect(),
            tile_length: cfg.tile_length(),
            tile_width: cfg.tile_width(),
            scan_spacing: cfg.scan_spacing,
            scan_forward_offset: cfg.scan_forward_offset,
            scan_clip: cfg.scan_clip,
            friction: cfg.friction,
            restitution: cfg.restitution,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.row_families.len()
    }

    pub fn rows_of(&self, family: Family) -> Vec<usize> {
        (0..self.num_rows()).filter(|&r| self.row_families[r] == family).collect()
    }

    /// Centre of the tile at `(row, level)`.
    pub fn tile_center(&self, row: usize, level: usize) -> (f64, f64) {
        (
            (level as f64 + 0.5) * self.tile_length,
            (row as f64 + 0.5) * self.tile_width,
        )
    }

    pub fn sample(&self, x: f64, y: f64) -> HeightSample {
        self.field.sample(x, y)
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.field.height_at(x, y)
    }

    /// Heights on an 11×17 grid in the heading frame of the base, relative to
    /// the base height and clipped. Ordered longitudinal-major, back to front,
    /// right to left within a row.
    pub fn height_scan(&self, pose: &ScanPose) -> Vec<f64> {
        let mut out = Vec::with_capacity(SCAN_POINTS);
        self.height_scan_into(pose, &mut out);
        out
    }

    pub fn height_scan_into(&self, pose: &ScanPose, out: &mut Vec<f64>) {
        out.clear();
        let (s, c) = pose.yaw.sin_cos();
        let half_long = (SCAN_LONGITUDINAL / 2) as f64;
        let half_lat = (SCAN_LATERAL / 2) as f64;
        for a in 0..SCAN_LONGITUDINAL {
            let bx = (a as f64 - half_long) * self.scan_spacing + self.scan_forward_offset;
            for b in 0..SCAN_LATERAL {
                let by = (b as f64 - half_lat) * self.scan_spacing;
                let wx = pose.x + c * bx - s * by;
                let wy = pose.y + s * bx + c * by;
                let h = self.height_at(wx, wy) - pose.z;
                out.push(h.clamp(-self.scan_clip, self.scan_clip));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_tile_is_20_by_10() {
        for f in Family::ALL {
            for level in [0, 4, 9] {
                let t = generate_tile(f, level, 3).unwrap();
                assert_eq!((t.field.nx, t.field.ny), (20, 10));
                assert!(t.field.heights.iter().all(|h| h.is_finite()));
            }
        }
    }

    #[test]
    fn rough_level_zero_bounded() {
        let t = generate_tile(Family::Rough, 0, 11).unwrap();
        assert!(t.field.heights.iter().all(|h| h.abs() <= 0.025));
    }

    #[test]
    fn stairs_monotone() {
        for level in 0..NUM_LEVELS {
            let up = generate_tile(Family::StairsUp, level, 0).unwrap();
            let down = generate_tile(Family::StairsDown, level, 0).unwrap();
            for j in 0..TILE_COLS {
                for i in 1..TILE_ROWS {
                    assert!(up.height(i, j) >= up.height(i - 1, j));
                    assert!(down.height(i, j) <= down.height(i - 1, j));
                }
            }
        }
    }

    #[test]
    fn invalid_level_rejected() {
        assert!(generate_tile(Family::Rough, 10, 0).is_err());
    }

    #[test]
    fn unknown_family_name_rejected() {
        assert!("lava".parse::<Family>().is_err());
        assert_eq!("stairs-up".parse::<Family>().unwrap(), Family::StairsUp);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_tile(Family::Obstacles, 5, 99).unwrap();
        let b = generate_tile(Family::Obstacles, 5, 99).unwrap();
        let c = generate_tile(Family::Obstacles, 5, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.field.heights, c.field.heights);
    }

    #[test]
    fn bilinear_midpoint_and_centres() {
        let mut f = Heightfield::new(3, 2, 0.4);
        f.set(0, 0, 1.0);
        f.set(1, 0, 3.0);
        assert!((f.height_at(0.2, 0.2) - 1.0).abs() < 1e-12);
        assert!((f.height_at(0.6, 0.2) - 3.0).abs() < 1e-12);
        assert!((f.height_at(0.4, 0.2) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_clamped_and_flagged() {
        let mut f = Heightfield::new(2, 2, 1.0);
        f.heights = vec![1.0, 2.0, 3.0, 4.0];
        let s = f.sample(-5.0, 0.5);
        assert!(s.clamped);
        assert_eq!(s.height, 1.0);
        assert!(!f.sample(1.0, 1.0).clamped);
    }

    #[test]
    fn flat_scan_is_constant() {
        let w = TerrainWorld::flat(&TerrainConfig::default(), 0.3);
        let pose = ScanPose { x: 10.0, y: 5.0, z: 1.1, yaw: 0.7 };
        let s = w.height_scan(&pose);
        assert_eq!(s.len(), 187);
        assert!(s.iter().all(|&v| (v + 0.8).abs() < 1e-12));
    }
}
