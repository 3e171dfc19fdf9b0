use crate::grid::VoxelGrid;
use crate::rendering::alpha::{density_to_alpha, REFERENCE_STEP};

/// Coarse occupancy over the grid-normalized cube. Cells only ever go from
/// occupied to free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OccupancyMask {
    resolution: [usize; 3],
    occupied: Vec<bool>,
}

impl OccupancyMask {
    /// Fully occupied mask.
    pub fn new(resolution: [usize; 3]) -> Self {
        let resolution = resolution.map(|n| n.max(1));
        Self {
            resolution,
            occupied: vec![true; resolution.iter().product()],
        }
    }

    /// Default mask for a density grid: half its resolution per axis.
    pub fn for_grid(density: &VoxelGrid) -> Self {
        Self::new(density.resolution().map(|n| n.div_ceil(2)))
    }

    /// Mask from explicit cells in x-major order.
    pub fn from_cells(resolution: [usize; 3], occupied: Vec<bool>) -> Option<Self> {
        (resolution.iter().all(|&n| n > 0)
            && occupied.len() == resolution.iter().product::<usize>())
        .then_some(Self {
            resolution,
            occupied,
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn cells(&self) -> &[bool] {
        &self.occupied
    }

    #[inline]
    fn cell_of(&self, q: [f64; 3]) -> usize {
        let [mx, my, mz] = self.resolution;
        let c = |v: f64, m: usize| ((v.clamp(0.0, 1.0) * m as f64) as usize).min(m - 1);
        (c(q[0], mx) * my + c(q[1], my)) * mz + c(q[2], mz)
    }

    #[inline]
    pub fn is_free(&self, q: [f64; 3]) -> bool {
        !self.occupied[self.cell_of(q)]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    pub fn free_fraction(&self) -> f64 {
        1.0 - self.occupied_count() as f64 / self.occupied.len() as f64
    }

    /// Same occupancy at another resolution (nearest cell center lookup).
    pub fn resampled(&self, resolution: [usize; 3]) -> Self {
        let mut out = Self::new(resolution);
        let [mx, my, mz] = out.resolution;
        for x in 0..mx {
            for y in 0..my {
                for z in 0..mz {
                    let q = [
                        (x as f64 + 0.5) / mx as f64,
                        (y as f64 + 0.5) / my as f64,
                        (z as f64 + 0.5) / mz as f64,
                    ];
                    out.occupied[(x * my + y) * mz + z] = !self.is_free(q);
                }
            }
        }
        out
    }
}

/// Node range `[lo, hi]` along one axis that can influence points inside a
/// mask cell (the cell's nodes plus one node of margin on each side).
fn covered_nodes(cell: usize, cells: usize, nodes: usize) -> (usize, usize) {
    let span = (nodes - 1) as f64 / cells as f64;
    let lo = ((cell as f64 * span).floor() as usize).saturating_sub(1);
    let hi = (((cell + 1) as f64 * span).ceil() as usize + 1).min(nodes - 1);
    (lo, hi)
}

/// Frees every mask cell whose covered density nodes all have an alpha
/// (at the reference step) below `alpha_threshold`. Free cells stay free.
pub fn update_occupancy(
    density: &VoxelGrid,
    mask: &mut OccupancyMask,
    alpha_shift: f64,
    alpha_threshold: f64,
) {
    let [nx, ny, nz] = density.resolution();
    let [mx, my, mz] = mask.resolution;
    let alpha_of = |raw: f64| density_to_alpha(raw, alpha_shift, REFERENCE_STEP).0;
    for cx in 0..mx {
        let (x0, x1) = covered_nodes(cx, mx, nx);
        for cy in 0..my {
            let (y0, y1) = covered_nodes(cy, my, ny);
            for cz in 0..mz {
                let cell = (cx * my + cy) * mz + cz;
                if !mask.occupied[cell] {
                    continue;
                }
                let (z0, z1) = covered_nodes(cz, mz, nz);
                let mut max_raw = f64::NEG_INFINITY;
                for x in x0..=x1 {
                    for y in y0..=y1 {
                        for z in z0..=z1 {
                            max_raw = max_raw.max(density.get(x, y, z, 0));
                        }
                    }
                }
                // alpha is monotone in the raw density
                if alpha_of(max_raw) < alpha_threshold {
                    mask.occupied[cell] = false;
                }
            }
        }
    }
}
