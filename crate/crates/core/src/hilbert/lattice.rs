use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discretized space and time: a set of distinct spatial points with a common
/// spacing `a` (so each point carries the volume `a³`), and a uniform time
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGrid {
    points: Vec<[f64; 3]>,
    spacing: f64,
    dt: f64,
    n_steps: usize,
}

impl LatticeGrid {
    pub fn new(points: Vec<[f64; 3]>, spacing: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::invalid("spacing", format!("must be > 0, got {spacing}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        if points.is_empty() {
            return Err(Error::invalid("points", "grid has no points"));
        }
        for i in 0..points.len() {
            for j in 0..i {
                if dist(&points[i], &points[j]) < 1e-12 * spacing {
                    return Err(Error::invalid(
                        "points",
                        format!("points {j} and {i} coincide"),
                    ));
                }
            }
        }
        Ok(Self {
            points,
            spacing,
            dt,
            n_steps,
        })
    }

    /// `n` points along the x axis starting at the origin.
    pub fn line(n: usize, spacing: f64, dt: f64, n_steps: usize) -> Result<Self> {
        let points = (0..n).map(|i| [i as f64 * spacing, 0.0, 0.0]).collect();
        Self::new(points, spacing, dt, n_steps)
    }

    /// `n³` points of a simple cubic lattice.
    pub fn cubic(n: usize, spacing: f64, dt: f64, n_steps: usize) -> Result<Self> {
        let mut points = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    points.push([i as f64 * spacing, j as f64 * spacing, k as f64 * spacing]);
                }
            }
        }
        Self::new(points, spacing, dt, n_steps)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Total simulated time `n_steps · dt`.
    pub fn duration(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// `a³`, the weight of one lattice point in `∫d³x`.
    pub fn volume_element(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(&self.points[i], &self.points[j])
    }

    /// Indices of points at distance `a` from point `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let a = self.spacing;
        (0..self.len())
            .filter(|&j| j != i && (self.distance(i, j) - a).abs() < 1e-9 * a)
            .collect()
    }

    /// Number of coordinate axes along which the grid extends.
    pub fn dimensionality(&self) -> usize {
        (0..3)
            .filter(|&ax| {
                let first = self.points[0][ax];
                self.points.iter().any(|p| (p[ax] - first).abs() > 1e-12 * self.spacing)
            })
            .count()
    }

    pub fn with_time(&self, dt: f64, n_steps: usize) -> Result<Self> {
        Self::new(self.points.clone(), self.spacing, dt, n_steps)
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Basis of the first-quantized configuration space: each basis state places
/// every (distinguishable) particle on one lattice site.
///
/// The full product space has `n_sites^n_particles` states; restricted bases
/// (for instance the two branches of a cat state) keep only the
/// configurations a scenario needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigurationBasis {
    n_particles: usize,
    configs: Vec<Vec<usize>>,
}

impl ConfigurationBasis {
    pub fn new(n_particles: usize, configs: Vec<Vec<usize>>) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::invalid("n_particles", "need at least one particle"));
        }
        if configs.is_empty() {
            return Err(Error::invalid("configs", "basis is empty"));
        }
        for c in &configs {
            if c.len() != n_particles {
                return Err(Error::DimensionMismatch {
                    expected: n_particles,
                    got: c.len(),
                });
            }
        }
        for i in 0..configs.len() {
            for j in 0..i {
                if configs[i] == configs[j] {
                    return Err(Error::invalid("configs", format!("configuration {i} repeated")));
                }
            }
        }
        Ok(Self {
            n_particles,
            configs,
        })
    }

    /// One particle, one basis state per listed site.
    pub fn single_particle(sites: &[usize]) -> Result<Self> {
        Self::new(1, sites.iter().map(|&s| vec![s]).collect())
    }

    /// All `n_sites^n_particles` configurations in lexicographic order.
    pub fn full(n_sites: usize, n_particles: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::invalid("n_sites", "need at least one site"));
        }
        let dim = n_sites
            .checked_pow(n_particles as u32)
            .filter(|&d| d <= 1 << 16)
            .ok_or_else(|| Error::invalid("n_particles", "configuration space too large"))?;
        let configs = (0..dim)
            .map(|mut idx| {
                let mut c = vec![0; n_particles];
                for slot in c.iter_mut().rev() {
                    *slot = idx % n_sites;
                    idx /= n_sites;
                }
                c
            })
            .collect();
        Self::new(n_particles, configs)
    }

    /// The two-branch basis `{|L⟩, |R⟩}` of a cat state.
    pub fn cat(left: Vec<usize>, right: Vec<usize>) -> Result<Self> {
        let n = left.len();
        Self::new(n, vec![left, right])
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    pub fn configs(&self) -> &[Vec<usize>] {
        &self.configs
    }

    pub fn config(&self, i: usize) -> &[usize] {
        &self.configs[i]
    }

    /// Number of particles sitting on `site` in basis state `i`.
    pub fn occupation(&self, i: usize, site: usize) -> usize {
        self.configs[i].iter().filter(|&&s| s == site).count()
    }

    pub(crate) fn check_sites(&self, n_sites: usize) -> Result<()> {
        for c in &self.configs {
            if let Some(&bad) = c.iter().find(|&&s| s >= n_sites) {
                return Err(Error::invalid(
                    "configs",
                    format!("site index {bad} outside a grid of {n_sites} points"),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_element_is_cube_of_spacing() {
        let g = LatticeGrid::line(4, 0.5, 0.1, 10).unwrap();
        assert_eq!(g.volume_element(), 0.125);
        assert_eq!(g.duration(), 1.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(LatticeGrid::line(3, 0.0, 0.1, 1).is_err());
        assert!(LatticeGrid::line(3, 1.0, -0.1, 1).is_err());
        assert!(LatticeGrid::new(vec![[0.0; 3], [0.0; 3]], 1.0, 0.1, 1).is_err());
    }

    #[test]
    fn neighbors_on_cube() {
        let g = LatticeGrid::cubic(3, 1.0, 0.1, 1).unwrap();
        // centre point (1,1,1) has index 13 and six neighbours
        assert_eq!(g.neighbors(13).len(), 6);
        assert_eq!(g.neighbors(0).len(), 3);
        assert_eq!(g.dimensionality(), 3);
    }

    #[test]
    fn full_basis_enumerates_products() {
        let b = ConfigurationBasis::full(3, 2).unwrap();
        assert_eq!(b.dim(), 9);
        assert_eq!(b.config(5), &[1, 2]);
        assert_eq!(b.occupation(0, 0), 2);
    }

    #[test]
    fn basis_rejects_zero_particles() {
        assert!(ConfigurationBasis::new(0, vec![vec![]]).is_err());
        assert!(ConfigurationBasis::full(2, 0).is_err());
    }
}
