use std::collections::HashMap;

use crate::density::Design;

/// Uniform-grid bucketing of design points for radius-limited pair sums.
///
/// Cells have side `width[j]` along axis `j`; a query only visits the
/// `3^d` cells around its own, so every point within `width[j]` of the
/// query along each axis is visited. Visiting order is fixed (neighbor
/// offsets in lexicographic order, indices ascending within a cell).
#[derive(Debug)]
pub(crate) struct CellIndex {
    dim: usize,
    origin: Vec<f64>,
    width: Vec<f64>,
    cells: HashMap<[i64; 3], Vec<u32>>,
    offsets: Vec<[i64; 3]>,
}

impl CellIndex {
    /// Returns `None` when bucketing does not apply (d > 3, non-finite
    /// widths, or cells so large that pruning saves nothing).
    pub(crate) fn build(design: &Design, width: &[f64]) -> Option<Self> {
        let d = design.dim();
        if d > 3 || width.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return None;
        }
        let mut origin = vec![f64::INFINITY; d];
        let mut extent = vec![f64::NEG_INFINITY; d];
        for row in design.rows() {
            for j in 0..d {
                origin[j] = origin[j].min(row[j]);
                extent[j] = extent[j].max(row[j]);
            }
        }
        let cells_per_axis: Vec<f64> = (0..d).map(|j| (extent[j] - origin[j]) / width[j]).collect();
        if cells_per_axis.iter().all(|&c| c < 3.0) {
            return None;
        }
        let mut index = Self {
            dim: d,
            origin,
            width: width.to_vec(),
            cells: HashMap::new(),
            offsets: Vec::new(),
        };
        for (i, row) in design.rows().enumerate() {
            let key = index.key(row);
            index.cells.entry(key).or_default().push(i as u32);
        }
        let mut offsets = vec![[0i64; 3]];
        for j in 0..d {
            offsets = offsets
                .into_iter()
                .flat_map(|o| {
                    [-1i64, 0, 1].map(|s| {
                        let mut o = o;
                        o[j] = s;
                        o
                    })
                })
                .collect();
        }
        index.offsets = offsets;
        Some(index)
    }

    fn key(&self, x: &[f64]) -> [i64; 3] {
        let mut key = [0i64; 3];
        for j in 0..self.dim {
            key[j] = ((x[j] - self.origin[j]) / self.width[j]).floor() as i64;
        }
        key
    }

    /// Calls `f(j)` for every design index that may lie within one cell
    /// width of `x` along every axis.
    pub(crate) fn for_each_candidate<F: FnMut(usize)>(&self, x: &[f64], mut f: F) {
        let center = self.key(x);
        for off in &self.offsets {
            let mut key = center;
            for j in 0..self.dim {
                key[j] += off[j];
            }
            if let Some(bucket) = self.cells.get(&key) {
                for &i in bucket {
                    f(i as usize);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_cover_radius() {
        let pts: Vec<f64> = (0..200).map(|i| (i as f64 * 0.618_034) % 1.0).collect();
        let design = Design::new(pts.clone(), 1).unwrap();
        let idx = CellIndex::build(&design, &[0.05]).unwrap();
        let q = 0.4;
        let mut got = Vec::new();
        idx.for_each_candidate(&[q], |j| got.push(j));
        for (i, p) in pts.iter().enumerate() {
            if (p - q).abs() <= 0.05 {
                assert!(got.contains(&i));
            }
        }
        assert!(got.len() < pts.len());
    }

    #[test]
    fn skips_when_cells_too_wide() {
        let design = Design::new(vec![0.0, 0.5, 1.0], 1).unwrap();
        assert!(CellIndex::build(&design, &[0.5]).is_none());
    }
}
