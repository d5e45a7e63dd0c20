//! Uniform node lattice on [0,1]^d and composite-trapezoid quadrature.
//!
//! All fields in this crate live on a single shared grid: scalar fields are
//! `Vec<f64>` of length `n^d`, vector fields are component-major `Vec<f64>` of
//! length `d·n^d` (component c occupies the slice `[c·len, (c+1)·len)`).
//! Node i in d=2 decodes as `ix = i % n`, `iy = i / n`, coordinates
//! `(ix·h, iy·h)` with `h = 1/(n−1)`.
//!
//! Quadrature is the composite trapezoid rule: tensor-product weights equal to
//! `h` per dimension in the interior and `h/2` on boundary planes. The same
//! weights define the discrete total mass that the density scheme conserves
//! exactly, so quadrature and conservation never disagree.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub d: usize,
    /// Nodes per dimension.
    pub n: usize,
    /// Node spacing 1/(n−1).
    pub h: f64,
}

impl Grid {
    pub fn new(d: usize, n: usize) -> Result<Grid> {
        if !(d == 1 || d == 2) {
            return Err(Error::Domain(format!("grid dimension must be 1 or 2, got {d}")));
        }
        if n < 3 {
            return Err(Error::Domain(format!("grid needs at least 3 nodes per dimension, got {n}")));
        }
        Ok(Grid { d, n, h: 1.0 / (n as f64 - 1.0) })
    }

    /// Total number of nodes, n^d.
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Decode a flat index into per-dimension indices (second entry 0 for d=1).
    #[inline]
    pub fn decode(&self, i: usize) -> [usize; 2] {
        if self.d == 1 {
            [i, 0]
        } else {
            [i % self.n, i / self.n]
        }
    }

    #[inline]
    pub fn encode(&self, ix: usize, iy: usize) -> usize {
        if self.d == 1 {
            ix
        } else {
            iy * self.n + ix
        }
    }

    /// Node coordinates (second entry 0 for d=1).
    #[inline]
    pub fn coord(&self, i: usize) -> [f64; 2] {
        let [ix, iy] = self.decode(i);
        [ix as f64 * self.h, iy as f64 * self.h]
    }

    /// 1D trapezoid weight of a per-dimension index.
    #[inline]
    pub fn weight_1d(&self, ix: usize) -> f64 {
        if ix == 0 || ix == self.n - 1 {
            0.5 * self.h
        } else {
            self.h
        }
    }

    /// Tensor-product trapezoid weight of a node.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        let [ix, iy] = self.decode(i);
        let mut w = self.weight_1d(ix);
        if self.d == 2 {
            w *= self.weight_1d(iy);
        }
        w
    }

    /// Composite trapezoid integral of a scalar field over [0,1]^d.
    pub fn quadrature(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        let mut acc = 0.0;
        for (i, v) in f.iter().enumerate() {
            acc += self.weight(i) * v;
        }
        acc
    }

    /// Precomputed weight table (hot loops contract against this).
    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// True if the node lies on ∂D.
    #[inline]
    pub fn on_boundary(&self, i: usize) -> bool {
        let [ix, iy] = self.decode(i);
        ix == 0 || ix == self.n - 1 || (self.d == 2 && (iy == 0 || iy == self.n - 1))
    }

    /// Centered-difference gradient of a scalar field with Neumann ghost
    /// mirroring (ghost value at −1 equals the value at +1, so the boundary
    /// derivative is 0). Output is component-major, length d·len.
    pub fn grad_centered(&self, f: &[f64]) -> Vec<f64> {
        let len = self.len();
        debug_assert_eq!(f.len(), len);
        let n = self.n;
        let inv2h = 0.5 / self.h;
        let mut out = vec![0.0; self.d * len];
        for i in 0..len {
            let [ix, iy] = self.decode(i);
            // mirrored ghosts: f[-1] := f[1], f[n] := f[n-2]
            let (xm, xp) = if ix == 0 {
                (f[self.encode(1, iy)], f[self.encode(1, iy)])
            } else if ix == n - 1 {
                (f[self.encode(n - 2, iy)], f[self.encode(n - 2, iy)])
            } else {
                (f[self.encode(ix - 1, iy)], f[self.encode(ix + 1, iy)])
            };
            out[i] = (xp - xm) * inv2h;
            if self.d == 2 {
                let (ym, yp) = if iy == 0 {
                    (f[self.encode(ix, 1)], f[self.encode(ix, 1)])
                } else if iy == n - 1 {
                    (f[self.encode(ix, n - 2)], f[self.encode(ix, n - 2)])
                } else {
                    (f[self.encode(ix, iy - 1)], f[self.encode(ix, iy + 1)])
                };
                out[len + i] = (yp - ym) * inv2h;
            }
        }
        out
    }
}

/// View of one component of a component-major vector field.
#[inline]
pub fn component(field: &[f64], len: usize, c: usize) -> &[f64] {
    &field[c * len..(c + 1) * len]
}
