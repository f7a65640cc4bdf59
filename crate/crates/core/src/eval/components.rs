//! Connected components on 3-D voxel grids.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

/// A `(H, W, D)` grid with neighbour enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub connectivity: Connectivity,
}

impl Grid {
    pub fn new(dims: [usize; 3], connectivity: Connectivity) -> Self {
        Self { dims, connectivity }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [_, w, d] = self.dims;
        [i / (w * d), (i / d) % w, i % d]
    }

    /// Calls `f` on every in-bounds neighbour of voxel `i`.
    pub fn neighbours(&self, i: usize, mut f: impl FnMut(usize)) {
        let [h, w, d] = self.dims;
        let [x, y, z] = self.coords(i);
        for dx in -1isize..=1 {
            for dy in -1isize..=1 {
                for dz in -1isize..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if manhattan == 0 || (self.connectivity == Connectivity::Six && manhattan > 1) {
                        continue;
                    }
                    let (nx, ny, nz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if nx < 0 || ny < 0 || nz < 0 || nx >= h as isize || ny >= w as isize || nz >= d as isize {
                        continue;
                    }
                    f((nx as usize * w + ny as usize) * d + nz as usize);
                }
            }
        }
    }

    /// Unvisited voxels reachable from `seeds` through voxels accepted by
    /// `inside(from, to)`; `seen` marks visited voxels. Seeds are expanded
    /// even if already seen.
    pub fn flood(
        &self,
        seeds: &[usize],
        seen: &mut [bool],
        mut inside: impl FnMut(usize, usize) -> bool,
    ) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        for &s in seeds {
            if !seen[s] {
                seen[s] = true;
                out.push(s);
            }
            stack.push(s);
        }
        while let Some(u) = stack.pop() {
            self.neighbours(u, |v| {
                if !seen[v] && inside(u, v) {
                    seen[v] = true;
                    out.push(v);
                    stack.push(v);
                }
            });
        }
        out
    }

    /// Connected components of the true voxels, each sorted, in order of
    /// their first voxel.
    pub fn components(&self, mask: &[bool]) -> Vec<Vec<usize>> {
        assert_eq!(mask.len(), self.len(), "mask does not match grid");
        let mut seen = vec![false; mask.len()];
        let mut comps = Vec::new();
        for i in 0..mask.len() {
            if mask[i] && !seen[i] {
                let mut c = self.flood(&[i], &mut seen, |_, v| mask[v]);
                c.sort_unstable();
                comps.push(c);
            }
        }
        comps
    }
}
