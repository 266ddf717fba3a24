//! Periodic P1 meshes of the unit cell.
//!
//! 1D: M intervals on M nodes. 2D: an M×M node lattice, each square cut
//! along the (i, j)–(i+1, j+1) diagonal. Node (i, j) has index j·M + i.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Element {
    pub nodes: [usize; 3],
    /// Gradient of each local basis function (constant on the element).
    pub grad: [[f64; 2]; 3],
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone)]
pub(crate) struct CellMesh {
    pub dim: usize,
    pub nodes: usize,
    pub elems: Vec<Element>,
    /// Measure of every element.
    pub weight: f64,
}

impl CellMesh {
    pub fn new(dim: usize, m: usize) -> Self {
        let h = 1.0 / m as f64;
        let ih = m as f64;
        let mut elems = Vec::new();
        if dim == 1 {
            for k in 0..m {
                elems.push(Element {
                    nodes: [k, (k + 1) % m, 0],
                    grad: [[-ih, 0.0], [ih, 0.0], [0.0; 2]],
                    centroid: [(k as f64 + 0.5) * h, 0.0],
                });
            }
            CellMesh {
                dim,
                nodes: m,
                elems,
                weight: h,
            }
        } else {
            let id = |i: usize, j: usize| (j % m) * m + (i % m);
            for j in 0..m {
                for i in 0..m {
                    let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                    let (x, y) = (i as f64, j as f64);
                    elems.push(Element {
                        nodes: [n00, n10, n11],
                        grad: [[-ih, 0.0], [ih, -ih], [0.0, ih]],
                        centroid: [(x + 2.0 / 3.0) * h, (y + 1.0 / 3.0) * h],
                    });
                    elems.push(Element {
                        nodes: [n00, n11, n01],
                        grad: [[0.0, -ih], [ih, 0.0], [-ih, ih]],
                        centroid: [(x + 1.0 / 3.0) * h, (y + 2.0 / 3.0) * h],
                    });
                }
            }
            CellMesh {
                dim,
                nodes: m * m,
                elems,
                weight: 0.5 * h * h,
            }
        }
    }

    #[inline]
    pub fn arity(&self) -> usize {
        self.dim + 1
    }

    #[inline]
    pub fn gradient(&self, e: &Element, u: &[f64], out: &mut [f64; 2]) {
        *out = [0.0; 2];
        for a in 0..self.arity() {
            let v = u[e.nodes[a]];
            out[0] += v * e.grad[a][0];
            out[1] += v * e.grad[a][1];
        }
    }
}
