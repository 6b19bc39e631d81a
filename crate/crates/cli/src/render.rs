//! Lattice energy heatmaps and basis montages.

use rayon::prelude::*;
use topica_core::image::encode_pgm;
use topica_core::{ActivationTrace, BasisModel, GrayImage, Result, Topography};

pub const HEATMAP_SCALE: usize = 16;

/// One heatmap per frame: cell `(x, y)` of the lattice is a
/// `HEATMAP_SCALE`-pixel square holding the energy of the unit placed there,
/// divided by the largest energy anywhere in the sequence.
pub fn heatmaps(trace: &ActivationTrace, topo: &Topography) -> Result<Vec<GrayImage>> {
    let energies = trace.energies();
    let max = energies.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    let unit_at = unit_at_cell(topo);
    let (w, h) = (topo.width(), topo.height());
    (0..trace.n_frames())
        .into_par_iter()
        .map(|t| {
            GrayImage::from_fn(w * HEATMAP_SCALE, h * HEATMAP_SCALE, |r, c| {
                let cell = (r / HEATMAP_SCALE) * w + c / HEATMAP_SCALE;
                energies[(t, unit_at[cell])] * scale
            })
        })
        .collect()
}

pub fn encode_all(images: &[GrayImage], lo: f64, hi: f64) -> Vec<Vec<u8>> {
    images
        .par_iter()
        .map(|img| encode_pgm(img, lo, hi))
        .collect()
}

fn unit_at_cell(topo: &Topography) -> Vec<usize> {
    let mut unit_at = vec![0; topo.n_units()];
    for (unit, &cell) in topo.cells().iter().enumerate() {
        unit_at[cell] = unit;
    }
    unit_at
}

/// Grid of basis images laid out on the lattice, `side + 1` pixels per tile
/// plus a closing 1-pixel border. Each tile is min-max scaled to `[0, 1]` on
/// its own; separators are white.
pub fn montage(model: &BasisModel) -> Result<GrayImage> {
    let topo = model.topography();
    let side = model
        .patch_side()
        .ok_or(topica_core::Error::DimensionMismatch {
            what: "square patch pixel count",
            expected: 0,
            got: model.n_pixels(),
        })?;
    let unit_at = unit_at_cell(topo);
    let a = model.a();
    let ranges: Vec<(f64, f64)> = (0..model.n_units())
        .map(|u| {
            let col = a.column(u);
            (col.min(), col.max())
        })
        .collect();
    let pitch = side + 1;
    let width = topo.width() * pitch + 1;
    let height = topo.height() * pitch + 1;
    GrayImage::from_fn(width, height, |r, c| {
        if r % pitch == 0 || c % pitch == 0 {
            return 1.0;
        }
        let unit = unit_at[(r / pitch) * topo.width() + c / pitch];
        let v = a[((r % pitch - 1) * side + c % pitch - 1, unit)];
        let (lo, hi) = ranges[unit];
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.5
        }
    })
}
