/// Placement of a regular lattice of cells in planar coordinates (meters).
///
/// Row 0 is the northernmost row, matching the ESRI ASCII-grid layout; cell
/// `(row, col)` has linear index `row * n_cols + col`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_dx: f64,
    pub cell_dy: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GridGeometry {
    pub fn new(origin_x: f64, origin_y: f64, cell_dx: f64, cell_dy: f64, n_rows: usize, n_cols: usize) -> Self {
        assert!(cell_dx > 0.0 && cell_dy > 0.0, "cell sizes must be positive");
        assert!(n_rows > 0 && n_cols > 0, "grid must have at least one cell");
        Self {
            origin_x,
            origin_y,
            cell_dx,
            cell_dy,
            n_rows,
            n_cols,
        }
    }

    /// Square cells of side `cell` with the lower-left corner at the origin.
    pub fn square(n_rows: usize, n_cols: usize, cell: f64) -> Self {
        Self::new(0.0, 0.0, cell, cell, n_rows, n_cols)
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_dx * self.cell_dy
    }

    pub fn width(&self) -> f64 {
        self.cell_dx * self.n_cols as f64
    }

    pub fn height(&self) -> f64 {
        self.cell_dy * self.n_rows as f64
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn row_col(&self, idx: usize) -> (usize, usize) {
        (idx / self.n_cols, idx % self.n_cols)
    }

    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (row, col) = self.row_col(idx);
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_dx,
            self.origin_y + (self.n_rows as f64 - row as f64 - 0.5) * self.cell_dy,
        )
    }

    /// `(xmin, ymin, xmax, ymax)` of a cell.
    pub fn cell_bounds(&self, idx: usize) -> (f64, f64, f64, f64) {
        let (row, col) = self.row_col(idx);
        let xmin = self.origin_x + col as f64 * self.cell_dx;
        let ymin = self.origin_y + (self.n_rows - row - 1) as f64 * self.cell_dy;
        (xmin, ymin, xmin + self.cell_dx, ymin + self.cell_dy)
    }

    /// Cell containing `(x, y)` using half-open `[low, high)` intervals on both axes.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let fx = ((x - self.origin_x) / self.cell_dx).floor();
        let fy = ((y - self.origin_y) / self.cell_dy).floor();
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (col, from_bottom) = (fx as usize, fy as usize);
        if col >= self.n_cols || from_bottom >= self.n_rows {
            return None;
        }
        Some(self.index(self.n_rows - 1 - from_bottom, col))
    }

    /// True when both grids place cells identically (up to rounding noise).
    pub fn same_lattice(&self, other: &GridGeometry) -> bool {
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-9 * scale.max(1.0);
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && close(self.cell_dx, other.cell_dx, self.cell_dx)
            && close(self.cell_dy, other.cell_dy, self.cell_dy)
            && close(self.origin_x, other.origin_x, self.width())
            && close(self.origin_y, other.origin_y, self.height())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_and_lookup_agree() {
        let g = GridGeometry::new(10.0, 20.0, 2.0, 3.0, 4, 5);
        for idx in 0..g.n_cells() {
            let (x, y) = g.cell_center(idx);
            assert_eq!(g.cell_of(x, y), Some(idx));
        }
        // north-west cell is index 0
        assert_eq!(g.cell_of(10.0, 31.5), Some(0));
    }

    #[test]
    fn boundaries_are_half_open() {
        let g = GridGeometry::square(2, 2, 1.0);
        // lower-left corner belongs to the bottom-left cell
        assert_eq!(g.cell_of(0.0, 0.0), Some(2));
        // the shared corner belongs to the upper-right neighbour
        assert_eq!(g.cell_of(1.0, 1.0), Some(1));
        assert_eq!(g.cell_of(2.0, 0.5), None);
        assert_eq!(g.cell_of(0.5, 2.0), None);
        assert_eq!(g.cell_of(-1e-12, 0.5), None);
    }
}
