use std::cmp::Ordering;

use super::ProjectedGaussian;

/// Per-tile lists of indices into the projected list, each sorted front to back.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Inclusive pixel rectangle of tile `t`, clipped to the image.
    pub fn tile_rect(&self, t: usize, width: usize, height: usize) -> [usize; 4] {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        [
            tx * self.tile_size,
            ty * self.tile_size,
            ((tx + 1) * self.tile_size).min(width) - 1,
            ((ty + 1) * self.tile_size).min(height) - 1,
        ]
    }
}

/// Front-to-back ordering: ascending depth, ties by ascending source index.
pub fn depth_order(a: &ProjectedGaussian, b: &ProjectedGaussian) -> Ordering {
    a.depth
        .partial_cmp(&b.depth)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

/// Assign every projected Gaussian to each tile its pixel rectangle overlaps.
pub fn bin_and_sort(
    projected: &[ProjectedGaussian],
    width: usize,
    height: usize,
    tile_size: usize,
) -> TileBins {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| depth_order(&projected[a as usize], &projected[b as usize]));

    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for &k in &order {
        let r = projected[k as usize].rect;
        for ty in r[1] / tile_size..=r[3] / tile_size {
            for tx in r[0] / tile_size..=r[2] / tile_size {
                lists[ty * tiles_x + tx].push(k);
            }
        }
    }
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        lists,
    }
}
