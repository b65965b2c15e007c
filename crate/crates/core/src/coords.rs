//! Align-corners coordinate grids and sinusoidal positional encoding.

use std::f64::consts::PI;
use std::ops::Range;

/// Default number of encoding frequencies per axis.
pub const DEFAULT_FREQUENCIES: usize = 6;

/// `h × w` grid of coordinates in `[-1, 1]²`; corner pixels sit exactly on `±1`.
///
/// Coordinates are computed on demand so arbitrarily large grids cost nothing to hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoordGrid {
    height: usize,
    width: usize,
}

fn axis_coord(index: usize, len: usize) -> f64 {
    if len == 1 {
        0.0
    } else {
        -1.0 + 2.0 * index as f64 / (len - 1) as f64
    }
}

impl CoordGrid {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "grid dimensions must be at least 1");
        Self { height, width }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(x, y)` of pixel row `i`, column `j`.
    pub fn coord(&self, i: usize, j: usize) -> [f64; 2] {
        [axis_coord(j, self.width), axis_coord(i, self.height)]
    }

    /// Coordinate of the pixel at row-major index `p`.
    pub fn coord_at(&self, p: usize) -> [f64; 2] {
        self.coord(p / self.width, p % self.width)
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|p| self.coord_at(p)).collect()
    }
}

/// Shorthand for [`CoordGrid::new`].
pub fn make_grid(h: usize, w: usize) -> CoordGrid {
    CoordGrid::new(h, w)
}

/// Positional encodings, one row of `4 · n_f` values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedCoords {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EncodedCoords {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

pub fn encoding_dim(n_freqs: usize) -> usize {
    4 * n_freqs
}

/// Writes `γ(x) ‖ γ(y)` into `out`; each `γ` is `(sin 2⁰πp, cos 2⁰πp, …, sin 2ⁿ⁻¹πp, cos 2ⁿ⁻¹πp)`.
pub fn encode_point(point: [f64; 2], n_freqs: usize, out: &mut [f64]) {
    assert_eq!(out.len(), encoding_dim(n_freqs));
    for (axis, &p) in point.iter().enumerate() {
        let base = axis * 2 * n_freqs;
        for k in 0..n_freqs {
            let arg = (1u64 << k) as f64 * PI * p;
            out[base + 2 * k] = arg.sin();
            out[base + 2 * k + 1] = arg.cos();
        }
    }
}

/// Encodes the pixels `range` (row-major indices) of `grid`.
pub fn encode_range(grid: &CoordGrid, n_freqs: usize, range: Range<usize>) -> EncodedCoords {
    assert!(n_freqs >= 1, "at least one frequency is required");
    assert!(range.end <= grid.len());
    let dim = encoding_dim(n_freqs);
    let rows = range.len();
    let mut data = vec![0.0; rows * dim];
    for (r, p) in range.enumerate() {
        encode_point(grid.coord_at(p), n_freqs, &mut data[r * dim..(r + 1) * dim]);
    }
    EncodedCoords { rows, dim, data }
}

/// Encodes every pixel of `grid`.
pub fn encode(grid: &CoordGrid, n_freqs: usize) -> EncodedCoords {
    encode_range(grid, n_freqs, 0..grid.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_corners() {
        let g = make_grid(2, 2);
        assert_eq!(g.coords(), vec![[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn three_by_three_center() {
        assert_eq!(make_grid(3, 3).coord(1, 1), [0.0, 0.0]);
    }

    #[test]
    fn single_row_linspace() {
        let g = make_grid(1, 5);
        let xs: Vec<f64> = g.coords().iter().map(|c| c[0]).collect();
        assert!(g.coords().iter().all(|c| c[1] == 0.0));
        assert_eq!(xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(make_grid(4, 1).coord(2, 0)[0], 0.0);
    }

    #[test]
    fn origin_encodes_to_alternating_zero_one() {
        let e = encode(&make_grid(1, 1), 6);
        assert_eq!(e.dim(), 24);
        for (k, v) in e.row(0).iter().enumerate() {
            assert_eq!(*v, if k % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn known_values() {
        let mut out = [0.0; 8];
        encode_point([1.0, 0.0], 2, &mut out);
        for (got, want) in out[..4].iter().zip([0.0, -1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        encode_point([0.5, 0.0], 2, &mut out);
        for (got, want) in out[..4].iter().zip([1.0, 0.0, 0.0, -1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn range_rows_match_full_encoding() {
        let g = make_grid(5, 7);
        let full = encode(&g, 3);
        let part = encode_range(&g, 3, 9..20);
        for r in 0..part.rows() {
            assert_eq!(part.row(r), full.row(9 + r));
        }
    }

    proptest! {
        #[test]
        fn grids_nest_at_stride_two(h in 1usize..40, w in 1usize..40) {
            let coarse = make_grid(h, w);
            let fine = make_grid(2 * h - 1, 2 * w - 1);
            for i in 0..h {
                for j in 0..w {
                    prop_assert_eq!(coarse.coord(i, j), fine.coord(2 * i, 2 * j));
                }
            }
        }

        #[test]
        fn coords_and_encodings_are_bounded(h in 1usize..20, w in 1usize..20, n_f in 1usize..8) {
            let g = make_grid(h, w);
            prop_assert!(g.coords().iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
            let e = encode(&g, n_f);
            prop_assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
