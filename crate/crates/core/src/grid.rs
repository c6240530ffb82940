//! Uniform meshes on intervals and rectangles with P1/Q1 elements,
//! homogeneous Dirichlet bookkeeping and operator assembly.
//!
//! Unknowns live on interior nodes only; boundary nodes exist in the mesh but
//! carry the value 0 everywhere. All integrals are evaluated by per-cell
//! quadrature rules that are exact for the bilinear forms involved: the 1D
//! midpoint rule on P1 gradients and a 2x2 Gauss rule on Q1 cells. Because
//! the stiffness matrix is assembled from the very same samples, the identity
//! `sum_e w_e |grad u|_e^2 = u' A u` holds to roundoff, and the p-Dirichlet
//! integral with p = 2 coincides with the quadratic form.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::BandedMatrix;

/// Plain grid description used in config files and result files.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    /// `[a, b]` in 1D, `[a, b, c, d]` in 2D.
    pub bounds: Vec<f64>,
    /// Cells per axis: `[n]` or `[nx, ny]`.
    pub cells: Vec<usize>,
}

/// One quadrature sample: a weight, the cell's global node ids, shape values
/// and shape gradients at the sample point.
#[derive(Debug, Clone)]
pub(crate) struct QuadSample {
    pub weight: f64,
    pub nodes: [usize; 4],
    pub n_nodes: usize,
    pub shape: [f64; 4],
    pub grad: [[f64; 2]; 4],
}

#[derive(Debug)]
struct GridInner {
    dim: usize,
    bounds: [f64; 4],
    cells: [usize; 2],
    h: [f64; 2],
    n_nodes: usize,
    n_interior: usize,
    /// Global node id -> interior slot.
    interior_index: Vec<Option<usize>>,
    /// Interior slot -> global node id.
    interior_nodes: Vec<usize>,
    samples: Vec<QuadSample>,
}

/// Cheap-to-clone handle on an immutable mesh.
#[derive(Debug, Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl Grid {
    /// Builds a uniform grid; `cells` counts elements per axis (at least 2).
    pub fn new(dim: usize, bounds: &[f64], cells: &[usize]) -> Result<Grid, Error> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if bounds.len() != 2 * dim {
            return Err(Error::InvalidGrid(format!(
                "expected {} bound values for dim {dim}, got {}",
                2 * dim,
                bounds.len()
            )));
        }
        if cells.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} cell counts, got {}",
                cells.len()
            )));
        }
        let mut b = [0.0, 1.0, 0.0, 1.0];
        let mut c = [2usize, 1];
        let mut h = [0.0, 0.0];
        for axis in 0..dim {
            let (lo, hi) = (bounds[2 * axis], bounds[2 * axis + 1]);
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "degenerate bounds [{lo}, {hi}] on axis {axis}"
                )));
            }
            if cells[axis] < 2 {
                return Err(Error::InvalidGrid(format!(
                    "need at least 2 cells per axis, got {} on axis {axis}",
                    cells[axis]
                )));
            }
            b[2 * axis] = lo;
            b[2 * axis + 1] = hi;
            c[axis] = cells[axis];
            h[axis] = (hi - lo) / cells[axis] as f64;
        }
        if dim == 1 {
            c[1] = 1;
        }

        let inner = match dim {
            1 => build_1d(b, c, h),
            _ => build_2d(b, c, h),
        };
        Ok(Grid { inner: Arc::new(inner) })
    }

    /// Builds a grid from a parsed [`GridSpec`].
    pub fn from_spec(spec: &GridSpec) -> Result<Grid, Error> {
        Grid::new(spec.dim, &spec.bounds, &spec.cells)
    }

    /// The grid's description, as embedded in result files.
    #[must_use]
    pub fn spec(&self) -> GridSpec {
        let g = &self.inner;
        GridSpec {
            dim: g.dim,
            bounds: g.bounds[..2 * g.dim].to_vec(),
            cells: g.cells[..g.dim].to_vec(),
        }
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    /// Cells per axis.
    #[must_use]
    pub fn cells(&self) -> [usize; 2] {
        self.inner.cells
    }

    /// Mesh widths per axis.
    #[must_use]
    pub fn spacing(&self) -> [f64; 2] {
        self.inner.h
    }

    /// Number of interior (unknown) nodes.
    #[must_use]
    pub fn n_interior(&self) -> usize {
        self.inner.n_interior
    }

    /// Measure of the domain.
    #[must_use]
    pub fn measure(&self) -> f64 {
        let g = &self.inner;
        let mut m = g.bounds[1] - g.bounds[0];
        if g.dim == 2 {
            m *= g.bounds[3] - g.bounds[2];
        }
        m
    }

    /// Coordinates of interior node `slot`.
    #[must_use]
    pub fn interior_coords(&self, slot: usize) -> [f64; 2] {
        let g = &self.inner;
        let node = g.interior_nodes[slot];
        self.node_coords(node)
    }

    fn node_coords(&self, node: usize) -> [f64; 2] {
        let g = &self.inner;
        if g.dim == 1 {
            [g.bounds[0] + node as f64 * g.h[0], 0.0]
        } else {
            let nx1 = g.cells[0] + 1;
            let (i, j) = (node % nx1, node / nx1);
            [
                g.bounds[0] + i as f64 * g.h[0],
                g.bounds[2] + j as f64 * g.h[1],
            ]
        }
    }

    /// Interior slot of a node given by per-axis indices, if interior.
    #[must_use]
    pub fn slot_of_indices(&self, ix: usize, iy: usize) -> Option<usize> {
        let g = &self.inner;
        let node = if g.dim == 1 { ix } else { iy * (g.cells[0] + 1) + ix };
        if node < g.n_nodes {
            g.interior_index[node]
        } else {
            None
        }
    }

    pub(crate) fn samples(&self) -> &[QuadSample] {
        &self.inner.samples
    }

    pub(crate) fn interior_slot(&self, node: usize) -> Option<usize> {
        self.inner.interior_index[node]
    }

    /// Quadrature weights, one per gradient sample, summing to the measure.
    #[must_use]
    pub fn sample_weights(&self) -> Vec<f64> {
        self.inner.samples.iter().map(|s| s.weight).collect()
    }

    /// True when both handles describe the same mesh.
    #[must_use]
    pub fn same_mesh(&self, other: &Grid) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.dim == other.inner.dim
                && self.inner.bounds == other.inner.bounds
                && self.inner.cells == other.inner.cells)
    }
}

fn build_1d(bounds: [f64; 4], cells: [usize; 2], h: [f64; 2]) -> GridInner {
    let n = cells[0];
    let n_nodes = n + 1;
    let mut interior_index = vec![None; n_nodes];
    let mut interior_nodes = Vec::with_capacity(n - 1);
    for node in 1..n {
        interior_index[node] = Some(interior_nodes.len());
        interior_nodes.push(node);
    }
    let hx = h[0];
    let samples = (0..n)
        .map(|cell| QuadSample {
            weight: hx,
            nodes: [cell, cell + 1, 0, 0],
            n_nodes: 2,
            shape: [0.5, 0.5, 0.0, 0.0],
            grad: [[-1.0 / hx, 0.0], [1.0 / hx, 0.0], [0.0; 2], [0.0; 2]],
        })
        .collect();
    GridInner {
        dim: 1,
        bounds,
        cells,
        h,
        n_nodes,
        n_interior: n - 1,
        interior_index,
        interior_nodes,
        samples,
    }
}

fn build_2d(bounds: [f64; 4], cells: [usize; 2], h: [f64; 2]) -> GridInner {
    let (nx, ny) = (cells[0], cells[1]);
    let nx1 = nx + 1;
    let n_nodes = nx1 * (ny + 1);
    let mut interior_index = vec![None; n_nodes];
    let mut interior_nodes = Vec::new();
    for j in 1..ny {
        for i in 1..nx {
            let node = j * nx1 + i;
            interior_index[node] = Some(interior_nodes.len());
            interior_nodes.push(node);
        }
    }
    let (hx, hy) = (h[0], h[1]);
    let meas = hx * hy;
    let g = 1.0 / 3f64.sqrt();
    let gauss = [(-g, -g), (g, -g), (g, g), (-g, g)];
    let mut samples = Vec::with_capacity(nx * ny * 4);
    for cj in 0..ny {
        for ci in 0..nx {
            let sw = cj * nx1 + ci;
            let nodes = [sw, sw + 1, sw + nx1 + 1, sw + nx1];
            for &(xi, eta) in &gauss {
                // Bilinear shapes on [-1,1]^2, nodes ordered SW, SE, NE, NW.
                let shape = [
                    0.25 * (1.0 - xi) * (1.0 - eta),
                    0.25 * (1.0 + xi) * (1.0 - eta),
                    0.25 * (1.0 + xi) * (1.0 + eta),
                    0.25 * (1.0 - xi) * (1.0 + eta),
                ];
                let dxi = [
                    -0.25 * (1.0 - eta),
                    0.25 * (1.0 - eta),
                    0.25 * (1.0 + eta),
                    -0.25 * (1.0 + eta),
                ];
                let deta = [
                    -0.25 * (1.0 - xi),
                    -0.25 * (1.0 + xi),
                    0.25 * (1.0 + xi),
                    0.25 * (1.0 - xi),
                ];
                let mut grad = [[0.0; 2]; 4];
                for a in 0..4 {
                    grad[a] = [dxi[a] * 2.0 / hx, deta[a] * 2.0 / hy];
                }
                samples.push(QuadSample {
                    weight: meas / 4.0,
                    nodes,
                    n_nodes: 4,
                    shape,
                    grad,
                });
            }
        }
    }
    GridInner {
        dim: 2,
        bounds,
        cells,
        h,
        n_nodes,
        n_interior: (nx - 1) * (ny - 1),
        interior_index,
        interior_nodes,
        samples,
    }
}

/// A scalar finite element function given by its interior nodal values;
/// boundary values are identically zero.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    /// The zero field.
    #[must_use]
    pub fn zeros(grid: &Grid) -> Field {
        Field {
            grid: grid.clone(),
            values: vec![0.0; grid.n_interior()],
        }
    }

    /// Wraps interior nodal values; the length must match the grid.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Field, Error> {
        if values.len() != grid.n_interior() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} interior nodes",
                values.len(),
                grid.n_interior()
            )));
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f` at interior node coordinates.
    #[must_use]
    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Field {
        let values = (0..grid.n_interior())
            .map(|s| f(grid.interior_coords(s)))
            .collect();
        Field {
            grid: grid.clone(),
            values,
        }
    }

    #[must_use]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[must_use]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[must_use]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest absolute nodal value.
    #[must_use]
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    #[must_use]
    pub fn scaled(&self, s: f64) -> Field {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// self + alpha * other.
    #[must_use]
    pub fn add_scaled(&self, alpha: f64, other: &Field) -> Field {
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        out
    }
}

/// Symmetric sparse matrix over interior nodes (CSR with both triangles).
#[derive(Debug, Clone)]
pub struct SymmetricOperator {
    n: usize,
    indptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    half_bandwidth: usize,
}

impl SymmetricOperator {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> SymmetricOperator {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut half_bandwidth = 0;
        indptr.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (j, v) in row {
                match merged.last_mut() {
                    Some((jj, vv)) if *jj == j => *vv += v,
                    _ => merged.push((j, v)),
                }
            }
            for (j, v) in merged {
                half_bandwidth = half_bandwidth.max(i.abs_diff(j));
                cols.push(j);
                vals.push(v);
            }
            indptr.push(cols.len());
        }
        SymmetricOperator {
            n,
            indptr,
            cols,
            vals,
            half_bandwidth,
        }
    }

    #[must_use]
    pub fn size(&self) -> usize {
        self.n
    }

    #[must_use]
    pub fn half_bandwidth(&self) -> usize {
        self.half_bandwidth
    }

    /// y = A x on raw slices.
    #[must_use]
    pub fn apply_slice(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
        y
    }

    /// A u as a field on the same grid.
    #[must_use]
    pub fn apply(&self, u: &Field) -> Field {
        Field {
            grid: u.grid().clone(),
            values: self.apply_slice(u.values()),
        }
    }

    /// xᵀ A y.
    #[must_use]
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.apply_slice(y);
        crate::linalg::dot(x, &ay)
    }

    /// xᵀ A x.
    #[must_use]
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        self.inner(x, x)
    }

    /// Dense-by-diagonals copy for factorisation.
    #[must_use]
    pub fn to_banded(&self) -> BandedMatrix {
        let mut b = BandedMatrix::zeros(self.n, self.half_bandwidth);
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.cols[k];
                if j >= i {
                    b.add(i, j, self.vals[k]);
                }
            }
        }
        b
    }

    /// Banded copy of `a + shift * m`; both operators must share the grid size.
    #[must_use]
    pub fn to_banded_shifted(&self, shift: f64, m: &SymmetricOperator) -> BandedMatrix {
        assert_eq!(self.n, m.n);
        let hbw = self.half_bandwidth.max(m.half_bandwidth);
        let mut b = BandedMatrix::zeros(self.n, hbw);
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.cols[k];
                if j >= i {
                    b.add(i, j, self.vals[k]);
                }
            }
            for k in m.indptr[i]..m.indptr[i + 1] {
                let j = m.cols[k];
                if j >= i {
                    b.add(i, j, shift * m.vals[k]);
                }
            }
        }
        b
    }
}

/// Mass matrix treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassLumping {
    /// Exact element mass matrices.
    Consistent,
    /// Row-sum lumped diagonal; kept for experiments, never the default.
    Lumped,
}

/// Consistent mass matrix over interior nodes.
#[must_use]
pub fn assemble_mass(grid: &Grid) -> SymmetricOperator {
    assemble_mass_with(grid, MassLumping::Consistent)
}

/// Mass matrix with a choice of lumping.
#[must_use]
pub fn assemble_mass_with(grid: &Grid, lumping: MassLumping) -> SymmetricOperator {
    let n = grid.n_interior();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for_each_mass_entry(grid, |gi, gj, v| {
        if let (Some(i), Some(j)) = (grid.interior_slot(gi), grid.interior_slot(gj)) {
            match lumping {
                MassLumping::Consistent => rows[i].push((j, v)),
                MassLumping::Lumped => rows[i].push((i, v)),
            }
        } else if lumping == MassLumping::Lumped {
            // Lumping folds boundary-coupled mass onto the interior diagonal
            // only when the row itself is interior.
            if let Some(i) = grid.interior_slot(gi) {
                rows[i].push((i, v));
            }
        }
    });
    SymmetricOperator::from_rows(rows)
}

/// Row sums of the full mass matrix over all nodes, boundary included.
#[must_use]
pub(crate) fn mass_row_sums_full(grid: &Grid) -> Vec<f64> {
    let mut sums = vec![0.0; grid.inner.n_nodes];
    for_each_mass_entry(grid, |gi, _gj, v| {
        sums[gi] += v;
    });
    sums
}

/// Per-node lumped masses: each cell splits its measure equally over its nodes.
#[must_use]
pub(crate) fn lumped_node_masses(grid: &Grid) -> Vec<f64> {
    let mut masses = vec![0.0; grid.inner.n_nodes];
    if grid.dim() == 1 {
        let h = grid.spacing()[0];
        for cell in 0..grid.cells()[0] {
            masses[cell] += 0.5 * h;
            masses[cell + 1] += 0.5 * h;
        }
    } else {
        let [nx, ny] = grid.cells();
        let meas = grid.spacing()[0] * grid.spacing()[1];
        let nx1 = nx + 1;
        for cj in 0..ny {
            for ci in 0..nx {
                let sw = cj * nx1 + ci;
                for node in [sw, sw + 1, sw + nx1, sw + nx1 + 1] {
                    masses[node] += 0.25 * meas;
                }
            }
        }
    }
    masses
}

fn for_each_mass_entry(grid: &Grid, mut emit: impl FnMut(usize, usize, f64)) {
    if grid.dim() == 1 {
        let h = grid.spacing()[0];
        // P1 element mass (h/6) [[2, 1], [1, 2]].
        for cell in 0..grid.cells()[0] {
            let nodes = [cell, cell + 1];
            let local = [[2.0, 1.0], [1.0, 2.0]];
            for a in 0..2 {
                for b in 0..2 {
                    emit(nodes[a], nodes[b], h / 6.0 * local[a][b]);
                }
            }
        }
    } else {
        let [nx, ny] = grid.cells();
        let meas = grid.spacing()[0] * grid.spacing()[1];
        let nx1 = nx + 1;
        // Q1 element mass (hx hy / 36) with pattern 4/2/1 by shared vertices.
        let local = [
            [4.0, 2.0, 1.0, 2.0],
            [2.0, 4.0, 2.0, 1.0],
            [1.0, 2.0, 4.0, 2.0],
            [2.0, 1.0, 2.0, 4.0],
        ];
        for cj in 0..ny {
            for ci in 0..nx {
                let sw = cj * nx1 + ci;
                let nodes = [sw, sw + 1, sw + nx1 + 1, sw + nx1];
                for a in 0..4 {
                    for b in 0..4 {
                        emit(nodes[a], nodes[b], meas / 36.0 * local[a][b]);
                    }
                }
            }
        }
    }
}

/// Dirichlet stiffness matrix over interior nodes.
#[must_use]
pub fn assemble_stiffness(grid: &Grid) -> SymmetricOperator {
    let n = grid.n_interior();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for s in grid.samples() {
        for a in 0..s.n_nodes {
            let Some(i) = grid.interior_slot(s.nodes[a]) else {
                continue;
            };
            for b in 0..s.n_nodes {
                let Some(j) = grid.interior_slot(s.nodes[b]) else {
                    continue;
                };
                let v = s.weight
                    * (s.grad[a][0] * s.grad[b][0] + s.grad[a][1] * s.grad[b][1]);
                rows[i].push((j, v));
            }
        }
    }
    SymmetricOperator::from_rows(rows)
}

/// Weighted stiffness-pattern matrix: sum over samples of
/// `w_s * B' C_s B` where `C_s` is a per-sample 2x2 coefficient returned by
/// `coeff(sample index, gradient of u at the sample)`.
pub(crate) fn assemble_weighted(
    grid: &Grid,
    u: &Field,
    mut coeff: impl FnMut(usize, [f64; 2]) -> [[f64; 2]; 2],
) -> SymmetricOperator {
    let n = grid.n_interior();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (si, s) in grid.samples().iter().enumerate() {
        let g = gradient_at(grid, s, u.values());
        let c = coeff(si, g);
        for a in 0..s.n_nodes {
            let Some(i) = grid.interior_slot(s.nodes[a]) else {
                continue;
            };
            let ga = s.grad[a];
            let cga = [
                c[0][0] * ga[0] + c[0][1] * ga[1],
                c[1][0] * ga[0] + c[1][1] * ga[1],
            ];
            for b in 0..s.n_nodes {
                let Some(j) = grid.interior_slot(s.nodes[b]) else {
                    continue;
                };
                let gb = s.grad[b];
                rows[i].push((j, s.weight * (cga[0] * gb[0] + cga[1] * gb[1])));
            }
        }
    }
    SymmetricOperator::from_rows(rows)
}

/// Gradient of `u` at one sample, boundary nodes contributing zero.
pub(crate) fn gradient_at(grid: &Grid, s: &QuadSample, values: &[f64]) -> [f64; 2] {
    let mut g = [0.0, 0.0];
    for a in 0..s.n_nodes {
        if let Some(slot) = grid.interior_slot(s.nodes[a]) {
            let v = values[slot];
            g[0] += v * s.grad[a][0];
            g[1] += v * s.grad[a][1];
        }
    }
    g
}

/// Value of `u` at one sample point.
pub(crate) fn value_at(grid: &Grid, s: &QuadSample, values: &[f64]) -> f64 {
    let mut v = 0.0;
    for a in 0..s.n_nodes {
        if let Some(slot) = grid.interior_slot(s.nodes[a]) {
            v += values[slot] * s.shape[a];
        }
    }
    v
}

/// Per-sample gradients of `u`, aligned with [`Grid::sample_weights`].
#[must_use]
pub fn element_gradients(u: &Field) -> Vec<[f64; 2]> {
    let grid = u.grid();
    grid.samples()
        .iter()
        .map(|s| gradient_at(grid, s, u.values()))
        .collect()
}

/// The three integrals behind every norm used here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    /// ∫ u², through the assembled mass matrix.
    pub l2_sq: f64,
    /// ∫ |∇u|², through the assembled stiffness matrix.
    pub h1_sq: f64,
    /// ∫ (|∇u|² + ε²)^{p/2} by per-sample quadrature.
    pub p_dirichlet: f64,
}

/// Computes [`Norms`] for exponent `p` and regularisation `epsilon`.
#[must_use]
pub fn norms(u: &Field, p: f64, epsilon: f64) -> Norms {
    let grid = u.grid();
    let m = assemble_mass(grid);
    let a = assemble_stiffness(grid);
    norms_with(u, p, epsilon, &m, &a)
}

/// Same as [`norms`] but reusing assembled operators.
#[must_use]
pub fn norms_with(
    u: &Field,
    p: f64,
    epsilon: f64,
    mass: &SymmetricOperator,
    stiffness: &SymmetricOperator,
) -> Norms {
    let grid = u.grid();
    let e2 = epsilon * epsilon;
    let mut p_dirichlet = 0.0;
    for s in grid.samples() {
        let g = gradient_at(grid, s, u.values());
        let g2 = g[0] * g[0] + g[1] * g[1];
        p_dirichlet += s.weight * (g2 + e2).powf(0.5 * p);
    }
    Norms {
        l2_sq: mass.quadratic(u.values()),
        h1_sq: stiffness.quadratic(u.values()),
        p_dirichlet,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_interval(cells: usize) -> Grid {
        Grid::new(1, &[0.0, 1.0], &[cells]).unwrap()
    }

    #[test]
    fn two_cell_interval_has_single_unknown() {
        let g = unit_interval(2);
        assert_eq!(g.n_interior(), 1);
        assert_eq!(g.interior_coords(0), [0.5, 0.0]);
        let m = assemble_mass(&g);
        let a = assemble_stiffness(&g);
        // Hand assembly at h = 1/2: mass 2h/3 = 1/3, stiffness 1/h + 1/h = 4.
        assert!((m.quadratic(&[1.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.quadratic(&[1.0]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn four_cell_interval_matches_hand_assembly() {
        let g = unit_interval(4);
        assert_eq!(g.n_interior(), 3);
        let h = 0.25;
        let m = assemble_mass(&g);
        let a = assemble_stiffness(&g);
        for i in 0..3usize {
            for j in 0..3usize {
                let ei: Vec<f64> = (0..3).map(|k| if k == i { 1.0 } else { 0.0 }).collect();
                let ej: Vec<f64> = (0..3).map(|k| if k == j { 1.0 } else { 0.0 }).collect();
                let mij = m.inner(&ei, &ej);
                let aij = a.inner(&ei, &ej);
                let want_m = if i == j {
                    2.0 * h / 3.0
                } else if i.abs_diff(j) == 1 {
                    h / 6.0
                } else {
                    0.0
                };
                let want_a = if i == j {
                    2.0 / h
                } else if i.abs_diff(j) == 1 {
                    -1.0 / h
                } else {
                    0.0
                };
                assert!((mij - want_m).abs() < 1e-14, "mass ({i},{j})");
                assert!((aij - want_a).abs() < 1e-14, "stiffness ({i},{j})");
            }
        }
    }

    #[test]
    fn square_grid_counts_and_measure() {
        let g = Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[4, 4]).unwrap();
        assert_eq!(g.n_interior(), 9);
        let wsum: f64 = g.sample_weights().iter().sum();
        assert!((wsum - g.measure()).abs() < 1e-12);
        let g1 = unit_interval(8);
        let wsum1: f64 = g1.sample_weights().iter().sum();
        assert!((wsum1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_row_sums_equal_lumped_masses() {
        for g in [
            unit_interval(6),
            Grid::new(2, &[0.0, 2.0, -1.0, 1.0], &[5, 4]).unwrap(),
        ] {
            let sums = mass_row_sums_full(&g);
            let lumped = lumped_node_masses(&g);
            assert_eq!(sums.len(), lumped.len());
            for (s, l) in sums.iter().zip(&lumped) {
                assert!((s - l).abs() < 1e-13, "{s} vs {l}");
            }
        }
    }

    #[test]
    fn stiffness_annihilates_flat_interior() {
        // On a fine grid, A applied to the all-ones interior vector vanishes
        // away from boundary-adjacent rows.
        let g = unit_interval(64);
        let a = assemble_stiffness(&g);
        let ones = vec![1.0; g.n_interior()];
        let y = a.apply_slice(&ones);
        for (i, v) in y.iter().enumerate().skip(1).take(g.n_interior() - 2) {
            assert!(v.abs() < 1e-12, "row {i}: {v}");
        }
        let g2 = Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[8, 8]).unwrap();
        let a2 = assemble_stiffness(&g2);
        let ones2 = vec![1.0; g2.n_interior()];
        let y2 = a2.apply_slice(&ones2);
        for (slot, v) in y2.iter().enumerate() {
            let [x, yy] = g2.interior_coords(slot);
            let h = g2.spacing()[0];
            let near_boundary =
                x < 1.5 * h || x > 1.0 - 1.5 * h || yy < 1.5 * h || yy > 1.0 - 1.5 * h;
            if !near_boundary {
                assert!(v.abs() < 1e-12, "slot {slot}: {v}");
            }
        }
    }

    #[test]
    fn quadratic_form_matches_sampled_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for g in [
            unit_interval(17),
            Grid::new(2, &[0.0, 1.0, 0.0, 1.5], &[6, 9]).unwrap(),
        ] {
            let a = assemble_stiffness(&g);
            for _ in 0..20 {
                let u = Field::from_values(
                    &g,
                    (0..g.n_interior()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let grads = element_gradients(&u);
                let weights = g.sample_weights();
                let quad: f64 = grads
                    .iter()
                    .zip(&weights)
                    .map(|(gr, w)| w * (gr[0] * gr[0] + gr[1] * gr[1]))
                    .sum();
                let form = a.quadratic(u.values());
                assert!(
                    (quad - form).abs() <= 1e-12 * form.abs().max(1.0),
                    "{quad} vs {form}"
                );
            }
        }
    }

    #[test]
    fn element_gradients_of_single_hat() {
        let g = unit_interval(2);
        let u = Field::from_values(&g, vec![1.0]).unwrap();
        let grads = element_gradients(&u);
        assert_eq!(grads.len(), 2);
        assert!((grads[0][0] - 2.0).abs() < 1e-15);
        assert!((grads[1][0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn norms_of_single_hat_with_p_three() {
        let g = unit_interval(2);
        let u = Field::from_values(&g, vec![1.0]).unwrap();
        let n = norms(&u, 3.0, 0.0);
        // |grad u| = 2 on both halves: p_dirichlet = 0.5 * 8 + 0.5 * 8 = 8.
        assert!((n.p_dirichlet - 8.0).abs() < 1e-13);
        assert!((n.h1_sq - 4.0).abs() < 1e-13);
        assert!((n.l2_sq - 1.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn p_two_reduces_to_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in [
            unit_interval(13),
            Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[5, 7]).unwrap(),
        ] {
            for _ in 0..10 {
                let u = Field::from_values(
                    &g,
                    (0..g.n_interior()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                )
                .unwrap();
                let n = norms(&u, 2.0, 0.0);
                assert!((n.p_dirichlet - n.h1_sq).abs() <= 1e-12 * n.h1_sq.max(1.0));
            }
        }
    }

    #[test]
    fn zero_field_norms_with_epsilon_offset() {
        let g = unit_interval(8);
        let u = Field::zeros(&g);
        let eps = 1e-2;
        let n = norms(&u, 1.5, eps);
        // Integrand is (eps^2)^{p/2} everywhere: measure * eps^p.
        assert!((n.p_dirichlet - eps.powf(1.5)).abs() < 1e-15);
        assert_eq!(n.l2_sq, 0.0);
        assert_eq!(n.h1_sq, 0.0);
    }

    #[test]
    fn grid_validation_rejects_bad_input() {
        assert!(Grid::new(3, &[0.0, 1.0], &[4]).is_err());
        assert!(Grid::new(1, &[1.0, 1.0], &[4]).is_err());
        assert!(Grid::new(1, &[0.0, 1.0], &[1]).is_err());
        assert!(Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[4]).is_err());
        assert!(Grid::new(2, &[0.0, 1.0, 2.0, 1.0], &[4, 4]).is_err());
        let g = unit_interval(4);
        assert!(Field::from_values(&g, vec![1.0; 2]).is_err());
    }

    #[test]
    fn grid_spec_round_trip() {
        let g = Grid::new(2, &[0.0, 2.0, 0.0, 1.0], &[8, 4]).unwrap();
        let spec = g.spec();
        let json = serde_json::to_string(&spec).unwrap();
        let back: GridSpec = serde_json::from_str(&json).unwrap();
        let g2 = Grid::from_spec(&back).unwrap();
        assert!(g.same_mesh(&g2));
    }
}
