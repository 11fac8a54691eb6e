//! Uniform-noise heightfield terrain.
//!
//! The ground is a grid of square cells of side `downsample_scale`. Every cell
//! holds one height drawn uniformly from the quantized set
//! `{min_height + k * step : k = 0, 1, ..} ∩ [min_height, max_height]`, and the
//! height is constant within the cell. Contact treats every cell top as a
//! horizontal plane with normal +z; steps between cells act as vertical risers.
//!
//! Points exactly on a shared cell boundary belong to the cell with the lower
//! index along that axis. Queries outside the field clamp to the border cell.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::TerrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    nx: usize,
    ny: usize,
    cell: f64,
    origin: [f64; 2],
    heights: Vec<f64>,
}

impl Heightfield {
    /// A single flat cell at height 0 that extends forever through clamping.
    pub fn flat() -> Self {
        Self {
            nx: 1,
            ny: 1,
            cell: 1.0,
            origin: [-0.5, -0.5],
            heights: vec![0.0],
        }
    }

    pub fn generate(config: &TerrainConfig) -> Result<Self> {
        config.validate()?;
        let cell = config.downsample_scale;
        let nx = (config.extent[0] / cell + 1e-9).floor();
        let ny = (config.extent[1] / cell + 1e-9).floor();
        if !(nx >= 1.0 && ny >= 1.0) {
            return Err(Error::TerrainTooSmall {
                extent_x: config.extent[0],
                extent_y: config.extent[1],
                cell,
            });
        }
        let (nx, ny) = (nx as usize, ny as usize);
        let levels = config.levels() as u32;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let heights = (0..nx * ny)
            .map(|_| {
                let k = rng.random_range(0..levels);
                (config.min_height + f64::from(k) * config.step).min(config.max_height)
            })
            .collect();
        Ok(Self {
            nx,
            ny,
            cell,
            origin: [-(nx as f64) * cell / 2.0, -(ny as f64) * cell / 2.0],
            heights,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn cell_height(&self, ix: usize, iy: usize) -> f64 {
        self.heights[iy * self.nx + ix]
    }

    fn axis_index(&self, coord: f64, origin: f64, n: usize) -> usize {
        // ceil(u) - 1 gives the lower-index cell on exact boundaries.
        let u = (coord - origin) / self.cell;
        let i = u.ceil() - 1.0;
        if i <= 0.0 || i.is_nan() {
            0
        } else {
            (i as usize).min(n - 1)
        }
    }

    /// Cell indices owning the point (x, y).
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        (
            self.axis_index(x, self.origin[0], self.nx),
            self.axis_index(y, self.origin[1], self.ny),
        )
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let (ix, iy) = self.cell_of(x, y);
        self.cell_height(ix, iy)
    }

    /// Writes the grid as CSV: one line per y row (increasing y), one column
    /// per x cell (increasing x).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for iy in 0..self.ny {
            let row: Vec<String> = (0..self.nx)
                .map(|ix| format!("{}", self.cell_height(ix, iy)))
                .collect();
            writeln!(out, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> TerrainConfig {
        TerrainConfig {
            extent: [4.0, 4.0],
            seed,
            ..TerrainConfig::default()
        }
    }

    #[test]
    fn degenerate_range_is_flat() {
        let field = Heightfield::generate(&TerrainConfig::flat()).unwrap();
        assert!(field.heights().iter().all(|&h| h == 0.0));
        assert_eq!(field.height_at(1.234, -5.0), 0.0);
    }

    #[test]
    fn heights_are_quantized_and_bounded() {
        for seed in 0..5 {
            let field = Heightfield::generate(&small(seed)).unwrap();
            for &h in field.heights() {
                assert!((-0.075..=0.025).contains(&h), "{h}");
                let k = (h + 0.075) / 0.01;
                assert!((k - k.round()).abs() < 1e-9, "{h}");
            }
        }
    }

    #[test]
    fn constant_within_a_cell() {
        let field = Heightfield::generate(&small(3)).unwrap();
        // cell [0.2, 0.4) x [0.2, 0.4)
        assert_eq!(field.height_at(0.25, 0.25), field.height_at(0.30, 0.30));
        assert_eq!(field.cell_of(0.25, 0.25), field.cell_of(0.3, 0.3));
    }

    #[test]
    fn boundary_belongs_to_lower_cell() {
        let field = Heightfield::generate(&small(1)).unwrap();
        // origin is -2.0, so x = 0.0 is the boundary between cells 9 and 10.
        let (ix, iy) = field.cell_of(0.0, 0.2);
        assert_eq!((ix, iy), (9, 10));
        assert_eq!(field.cell_of(1e-9, 0.2 + 1e-9), (10, 11));
        assert_eq!(field.cell_of(-2.0, -2.0), (0, 0));
    }

    #[test]
    fn outside_points_clamp_to_border() {
        let field = Heightfield::generate(&small(2)).unwrap();
        assert_eq!(field.cell_of(-100.0, 100.0), (0, 19));
        assert_eq!(field.height_at(100.0, 0.1), field.height_at(1.99, 0.1));
    }

    #[test]
    fn too_small_extent_errors() {
        let cfg = TerrainConfig {
            extent: [0.1, 1.0],
            ..TerrainConfig::default()
        };
        assert!(matches!(
            Heightfield::generate(&cfg),
            Err(Error::TerrainTooSmall { .. })
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = Heightfield::generate(&small(7)).unwrap();
        let b = Heightfield::generate(&small(7)).unwrap();
        let c = Heightfield::generate(&small(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
