//! Structured quadrilateral grid, bilinear shape functions with optional
//! bubble enrichment, Gauss quadrature and point location.
//!
//! Node numbering is row-major: node (i, j) has index `j * (nx + 1) + i`.
//! Element (i, j) has index `j * nx + i` and its four nodes are listed
//! counter-clockwise starting from the lower-left corner.

use crate::error::{Result, SimError};

/// Axis-aligned rectangle used as the grid extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, lx: f64, ly: f64) -> Self {
        Self { x0, y0, lx, ly }
    }

    /// Unit square [0,1] x [0,1].
    pub fn unit() -> Self {
        Self::new(0.0, 0.0, 1.0, 1.0)
    }
}

/// Uniform structured grid of bilinear quadrilaterals.
#[derive(Debug, Clone)]
pub struct GridMesh {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
    pub node_count: usize,
    pub element_count: usize,
    /// Element -> 4 node indices, counter-clockwise from the lower-left.
    pub connectivity: Vec<[usize; 4]>,
}

/// Result of locating a physical point in the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Located {
    Inside { element: usize, xi: f64, eta: f64 },
    Outside,
}

/// Build a uniform grid covering `extent` with `nx` x `ny` elements.
pub fn build_grid(nx: usize, ny: usize, extent: Rect) -> Result<GridMesh> {
    if nx < 1 || ny < 1 {
        return Err(SimError::InvalidArgument(format!(
            "element counts must be >= 1, got nx={nx}, ny={ny}"
        )));
    }
    if !(extent.lx > 0.0) || !(extent.ly > 0.0) {
        return Err(SimError::InvalidArgument(format!(
            "extent sides must be positive, got lx={}, ly={}",
            extent.lx, extent.ly
        )));
    }
    let hx = extent.lx / nx as f64;
    let hy = extent.ly / ny as f64;
    let node_count = (nx + 1) * (ny + 1);
    let element_count = nx * ny;
    let mut connectivity = Vec::with_capacity(element_count);
    for j in 0..ny {
        for i in 0..nx {
            let n0 = j * (nx + 1) + i;
            connectivity.push([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1]);
        }
    }
    Ok(GridMesh {
        nx,
        ny,
        x0: extent.x0,
        y0: extent.y0,
        hx,
        hy,
        node_count,
        element_count,
        connectivity,
    })
}

impl GridMesh {
    pub fn node_pos(&self, node: usize) -> [f64; 2] {
        let i = node % (self.nx + 1);
        let j = node / (self.nx + 1);
        [self.x0 + i as f64 * self.hx, self.y0 + j as f64 * self.hy]
    }

    pub fn element_center(&self, elem: usize) -> [f64; 2] {
        let i = elem % self.nx;
        let j = elem / self.nx;
        [
            self.x0 + (i as f64 + 0.5) * self.hx,
            self.y0 + (j as f64 + 0.5) * self.hy,
        ]
    }

    /// Characteristic element length used by the stabilization parameters.
    pub fn h_ele(&self) -> f64 {
        self.hx.min(self.hy)
    }

    /// Map a reference point of an element to physical coordinates.
    pub fn ref_to_physical(&self, elem: usize, xi: f64, eta: f64) -> [f64; 2] {
        let c = self.element_center(elem);
        [c[0] + 0.5 * xi * self.hx, c[1] + 0.5 * eta * self.hy]
    }

    /// Locate a physical point. Points on the outer boundary count as inside.
    pub fn locate_point(&self, x: [f64; 2]) -> Located {
        let x1 = self.x0 + self.nx as f64 * self.hx;
        let y1 = self.y0 + self.ny as f64 * self.hy;
        if x[0] < self.x0 || x[0] > x1 || x[1] < self.y0 || x[1] > y1 {
            return Located::Outside;
        }
        let mut i = ((x[0] - self.x0) / self.hx).floor() as isize;
        let mut j = ((x[1] - self.y0) / self.hy).floor() as isize;
        i = i.clamp(0, self.nx as isize - 1);
        j = j.clamp(0, self.ny as isize - 1);
        let elem = j as usize * self.nx + i as usize;
        let c = self.element_center(elem);
        let xi = 2.0 * (x[0] - c[0]) / self.hx;
        let eta = 2.0 * (x[1] - c[1]) / self.hy;
        Located::Inside { element: elem, xi, eta }
    }
}

/// Shape function values and spatial derivatives at a single point.
///
/// Slots 0..4 hold the bilinear functions; slot 4 holds the bubble when
/// active (zeros otherwise).
#[derive(Debug, Clone, Copy)]
pub struct BasisEval {
    pub n: [f64; 5],
    pub dn_dx: [f64; 5],
    pub dn_dy: [f64; 5],
    pub det_j: f64,
    pub bubble_active: bool,
}

impl BasisEval {
    /// Number of active shape functions (4 bilinear, +1 bubble).
    pub fn len(&self) -> usize {
        if self.bubble_active {
            5
        } else {
            4
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Evaluate basis functions of `elem` at reference point (xi, eta).
pub fn shape_eval(
    mesh: &GridMesh,
    elem: usize,
    xi: f64,
    eta: f64,
    bubble: bool,
) -> Result<BasisEval> {
    if elem >= mesh.element_count {
        return Err(SimError::InvalidArgument(format!(
            "element id {elem} out of range ({} elements)",
            mesh.element_count
        )));
    }
    Ok(shape_eval_unchecked(mesh, xi, eta, bubble))
}

/// Same as [`shape_eval`] without the element-range check. All elements of a
/// uniform grid share the same affine map, so the element id is not needed.
pub fn shape_eval_unchecked(mesh: &GridMesh, xi: f64, eta: f64, bubble: bool) -> BasisEval {
    let dx = 2.0 / mesh.hx;
    let dy = 2.0 / mesh.hy;
    let n0 = 0.25 * (1.0 - xi) * (1.0 - eta);
    let n1 = 0.25 * (1.0 + xi) * (1.0 - eta);
    let n2 = 0.25 * (1.0 + xi) * (1.0 + eta);
    let n3 = 0.25 * (1.0 - xi) * (1.0 + eta);
    let mut out = BasisEval {
        n: [n0, n1, n2, n3, 0.0],
        dn_dx: [
            -0.25 * (1.0 - eta) * dx,
            0.25 * (1.0 - eta) * dx,
            0.25 * (1.0 + eta) * dx,
            -0.25 * (1.0 + eta) * dx,
            0.0,
        ],
        dn_dy: [
            -0.25 * (1.0 - xi) * dy,
            -0.25 * (1.0 + xi) * dy,
            0.25 * (1.0 + xi) * dy,
            0.25 * (1.0 - xi) * dy,
            0.0,
        ],
        det_j: mesh.hx * mesh.hy / 4.0,
        bubble_active: bubble,
    };
    if bubble {
        out.n[4] = (1.0 - xi * xi) * (1.0 - eta * eta);
        out.dn_dx[4] = -2.0 * xi * (1.0 - eta * eta) * dx;
        out.dn_dy[4] = -2.0 * eta * (1.0 - xi * xi) * dy;
    }
    out
}

/// Tensor-product Gauss rule on the reference square [-1,1]^2.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// (xi, eta, weight) triples; weights sum to 4.
    pub points: Vec<(f64, f64, f64)>,
}

impl QuadratureRule {
    /// 2x2 rule, exact for bi-cubic integrands.
    pub fn gauss_2x2() -> Self {
        let a = 1.0 / 3.0_f64.sqrt();
        let pts = [-a, a];
        let mut points = Vec::with_capacity(4);
        for &eta in &pts {
            for &xi in &pts {
                points.push((xi, eta, 1.0));
            }
        }
        Self { points }
    }

    /// 3x3 rule, used when the bubble enrichment raises the polynomial degree.
    pub fn gauss_3x3() -> Self {
        let b = (3.0_f64 / 5.0).sqrt();
        let pts = [(-b, 5.0 / 9.0), (0.0, 8.0 / 9.0), (b, 5.0 / 9.0)];
        let mut points = Vec::with_capacity(9);
        for &(eta, we) in &pts {
            for &(xi, wx) in &pts {
                points.push((xi, eta, wx * we));
            }
        }
        Self { points }
    }

    /// Rule matching the interpolation space: 3x3 with bubble, else 2x2.
    pub fn for_bubble(bubble: bool) -> Self {
        if bubble {
            Self::gauss_3x3()
        } else {
            Self::gauss_2x2()
        }
    }
}
