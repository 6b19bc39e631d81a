//! Units on a 2-D torus lattice and their square pooling neighborhoods.
//!
//! Unit `i` sits at lattice cell `cells[i]`; cell `c` has coordinates
//! `(c % width, c / width)`. Two units are neighbors (`h(i, j) = 1`) when the
//! wrap-around Chebyshev distance between their cells is at most `radius`, so
//! radius 1 gives the 3×3 square.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topography {
    width: usize,
    height: usize,
    radius: usize,
    cells: Vec<usize>,
    neighbors: Vec<Vec<usize>>,
}

pub fn build_topography(width: usize, height: usize, radius: usize) -> Result<Topography> {
    Topography::with_cells(width, height, radius, (0..width * height).collect())
}

impl Topography {
    /// Lattice with an explicit unit-to-cell assignment.
    pub fn with_cells(
        width: usize,
        height: usize,
        radius: usize,
        cells: Vec<usize>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadDimensions(format!("{width}x{height} lattice")));
        }
        let n = width * height;
        check_permutation(&cells, n)?;
        let mut unit_at = vec![0; n];
        for (unit, &cell) in cells.iter().enumerate() {
            unit_at[cell] = unit;
        }
        let r = radius as isize;
        let neighbors = cells
            .iter()
            .map(|&cell| {
                let (x, y) = ((cell % width) as isize, (cell / width) as isize);
                let mut list = Vec::with_capacity((2 * radius + 1).pow(2));
                for dy in -r..=r {
                    for dx in -r..=r {
                        let nx = (x + dx).rem_euclid(width as isize) as usize;
                        let ny = (y + dy).rem_euclid(height as isize) as usize;
                        list.push(unit_at[ny * width + nx]);
                    }
                }
                // on tori narrower than the block, wrapped cells repeat
                list.sort_unstable();
                list.dedup();
                list
            })
            .collect();
        Ok(Topography {
            width,
            height,
            radius,
            cells,
            neighbors,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn n_units(&self) -> usize {
        self.cells.len()
    }

    /// Lattice cell index of every unit.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// `(x, y)` lattice coordinates of `unit`.
    pub fn position(&self, unit: usize) -> (usize, usize) {
        let c = self.cells[unit];
        (c % self.width, c / self.width)
    }

    pub fn is_identity_layout(&self) -> bool {
        self.cells.iter().enumerate().all(|(i, &c)| i == c)
    }

    /// Units `j` with `h(unit, j) = 1`, ascending, including `unit` itself.
    pub fn neighborhood(&self, unit: usize) -> &[usize] {
        &self.neighbors[unit]
    }

    pub fn h(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Dense 0/1 neighborhood matrix.
    pub fn h_matrix(&self) -> DMatrix<f64> {
        let n = self.n_units();
        DMatrix::from_fn(n, n, |i, j| if self.h(i, j) { 1.0 } else { 0.0 })
    }

    pub fn torus_distance(&self, i: usize, j: usize) -> Result<usize> {
        let n = self.n_units();
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        Ok(self.distance_unchecked(i, j))
    }

    pub(crate) fn distance_unchecked(&self, i: usize, j: usize) -> usize {
        let (xi, yi) = self.position(i);
        let (xj, yj) = self.position(j);
        let dx = xi.abs_diff(xj);
        let dy = yi.abs_diff(yj);
        dx.min(self.width - dx).max(dy.min(self.height - dy))
    }

    /// Unordered pairs `(i, j)`, `i < j`, at torus distance exactly 1.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.n_units() {
            for j in (i + 1)..self.n_units() {
                if self.distance_unchecked(i, j) == 1 {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Same lattice with each unit `u` moved to the cell held by unit `perm[u]`,
    /// i.e. `h'(u, v) = h(perm[u], perm[v])`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Topography> {
        check_permutation(perm, self.n_units())?;
        let cells = perm.iter().map(|&p| self.cells[p]).collect();
        Topography::with_cells(self.width, self.height, self.radius, cells)
    }

    /// Same lattice and layout with a different neighborhood radius.
    pub fn with_radius(&self, radius: usize) -> Result<Topography> {
        Topography::with_cells(self.width, self.height, radius, self.cells.clone())
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::BadPermutation(n));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::BadPermutation(n));
        }
    }
    Ok(())
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Seeded uniform permutation of `0..n`.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    perm
}

/// Randomly reassigns units to cells. The permutation used is
/// `random_permutation(n, seed)`.
pub fn shuffle_topography(topo: &Topography, seed: u64) -> Topography {
    topo.permuted(&random_permutation(topo.n_units(), seed))
        .expect("random_permutation yields a valid permutation")
}
