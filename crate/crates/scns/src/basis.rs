//! The Galerkin velocity space X_n: tensor-product sine modes, projection,
//! and spectral synthesis.
//!
//! Scalar modes on [0,1]^d are φ_k(x) = √2^d · Π_i sin(k_i π x_i) for
//! k ∈ {1,…,n_modes}^d; a velocity basis field assigns one scalar mode to one
//! Cartesian component. The fields vanish on ∂D (Dirichlet) and are exactly
//! orthonormal under the composite trapezoid rule on the shared grid: the
//! discrete sine orthogonality Σ_{i=0}^{M} sin(kπi/M)sin(mπi/M) = (M/2)δ_km
//! holds whenever k, m < M = grid_n − 1, which the resolvability condition
//! 2·n_modes < grid_n guarantees. Projection therefore needs no Gram solve.
//!
//! Basis index layout: i = c·n_modes^d + m with component c and scalar-mode
//! index m; tensor indices are row-major, m = (k₁−1)·n_modes + (k₂−1).

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::VelocityCoeffs;

#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    pub d: usize,
    pub n_modes: usize,
    pub grid: Grid,
    /// dim(X_n) = d·n_modes^d.
    pub dim: usize,
    /// Number of scalar modes n_modes^d.
    pub n_scalar: usize,
    weights: Vec<f64>,
    /// Per scalar mode: values at every node.
    vals: Vec<Vec<f64>>,
    /// Per scalar mode: component-major gradient values (length d·len).
    grads: Vec<Vec<f64>>,
    /// Per scalar mode: |kπ|² (Dirichlet Laplacian eigenvalue).
    freq_sq: Vec<f64>,
}

/// Analytic scalar mode value √2^d·Π sin(k_i π x_i).
pub fn sine_mode_value(d: usize, k: [usize; 2], x: [f64; 2]) -> f64 {
    let pi = std::f64::consts::PI;
    let mut v = (k[0] as f64 * pi * x[0]).sin();
    if d == 2 {
        v *= (k[1] as f64 * pi * x[1]).sin();
    }
    v * (2.0f64).powi(d as i32).sqrt()
}

/// Analytic gradient of the scalar mode (second entry 0 for d=1).
pub fn sine_mode_grad(d: usize, k: [usize; 2], x: [f64; 2]) -> [f64; 2] {
    let pi = std::f64::consts::PI;
    let norm = (2.0f64).powi(d as i32).sqrt();
    let (k1, k2) = (k[0] as f64 * pi, k[1] as f64 * pi);
    if d == 1 {
        [norm * k1 * (k1 * x[0]).cos(), 0.0]
    } else {
        [
            norm * k1 * (k1 * x[0]).cos() * (k2 * x[1]).sin(),
            norm * k2 * (k1 * x[0]).sin() * (k2 * x[1]).cos(),
        ]
    }
}

pub fn build_basis(grid: Grid, n_modes: usize, d: usize) -> Result<GalerkinBasis> {
    if d != grid.d {
        return Err(Error::Config(format!("basis dimension {d} does not match grid dimension {}", grid.d)));
    }
    if n_modes == 0 {
        return Err(Error::Config("n_modes must be at least 1".into()));
    }
    if 2 * n_modes >= grid.n {
        return Err(Error::Config(format!(
            "unresolvable modes: need 2·n_modes < grid_n, got n_modes = {n_modes}, grid_n = {}",
            grid.n
        )));
    }
    let len = grid.len();
    let n_scalar = n_modes.pow(d as u32);
    let pi = std::f64::consts::PI;
    let mut vals = Vec::with_capacity(n_scalar);
    let mut grads = Vec::with_capacity(n_scalar);
    let mut freq_sq = Vec::with_capacity(n_scalar);
    for m in 0..n_scalar {
        let k = tensor_index(m, n_modes, d);
        let mut v = vec![0.0; len];
        let mut g = vec![0.0; d * len];
        for i in 0..len {
            let x = grid.coord(i);
            v[i] = sine_mode_value(d, k, x);
            let gr = sine_mode_grad(d, k, x);
            for (j, gj) in gr.iter().enumerate().take(d) {
                g[j * len + i] = *gj;
            }
        }
        let mut fsq = (k[0] as f64 * pi).powi(2);
        if d == 2 {
            fsq += (k[1] as f64 * pi).powi(2);
        }
        vals.push(v);
        grads.push(g);
        freq_sq.push(fsq);
    }
    Ok(GalerkinBasis {
        d,
        n_modes,
        grid,
        dim: d * n_scalar,
        n_scalar,
        weights: grid.weights(),
        vals,
        grads,
        freq_sq,
    })
}

/// Scalar-mode index → tensor index (k₁, k₂), 1-based.
pub fn tensor_index(m: usize, n_modes: usize, d: usize) -> [usize; 2] {
    if d == 1 {
        [m + 1, 1]
    } else {
        [m / n_modes + 1, m % n_modes + 1]
    }
}

impl GalerkinBasis {
    /// Basis index → (component, scalar-mode index).
    #[inline]
    pub fn split_index(&self, i: usize) -> (usize, usize) {
        (i / self.n_scalar, i % self.n_scalar)
    }

    #[inline]
    pub fn scalar_vals(&self, m: usize) -> &[f64] {
        &self.vals[m]
    }

    /// Component-major gradient table of scalar mode m (length d·len).
    #[inline]
    pub fn scalar_grads(&self, m: usize) -> &[f64] {
        &self.grads[m]
    }

    #[inline]
    pub fn freq_sq(&self, m: usize) -> f64 {
        self.freq_sq[m]
    }

    #[inline]
    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn quadrature(&self, f: &[f64]) -> f64 {
        self.grid.quadrature(f)
    }

    /// L²-orthogonal projection of a nodal vector field: coeffs_i = ∫ f·e_i.
    /// With the orthonormal basis this doubles as the dual pairing ⟨f, e_i⟩.
    pub fn project(&self, f: &[f64]) -> Result<VelocityCoeffs> {
        let len = self.grid.len();
        if f.len() != self.d * len {
            return Err(Error::Shape { expected: self.d * len, got: f.len() });
        }
        let mut out = vec![0.0; self.dim];
        for (i, o) in out.iter_mut().enumerate() {
            let (c, m) = self.split_index(i);
            let comp = &f[c * len..(c + 1) * len];
            let mv = &self.vals[m];
            let mut acc = 0.0;
            for node in 0..len {
                acc += self.weights[node] * comp[node] * mv[node];
            }
            *o = acc;
        }
        Ok(out)
    }

    /// Nodal synthesis u(x_node), component-major.
    pub fn evaluate(&self, c: &VelocityCoeffs) -> Vec<f64> {
        let len = self.grid.len();
        debug_assert_eq!(c.len(), self.dim);
        let mut out = vec![0.0; self.d * len];
        for (i, &ci) in c.iter().enumerate() {
            if ci == 0.0 {
                continue;
            }
            let (comp, m) = self.split_index(i);
            let mv = &self.vals[m];
            let slot = &mut out[comp * len..(comp + 1) * len];
            for node in 0..len {
                slot[node] += ci * mv[node];
            }
        }
        out
    }

    /// Nodal velocity gradient; layout `out[(c·d + j)·len + node] = ∂_j u_c`.
    pub fn evaluate_grad(&self, c: &VelocityCoeffs) -> Vec<f64> {
        let len = self.grid.len();
        let d = self.d;
        let mut out = vec![0.0; d * d * len];
        for (i, &ci) in c.iter().enumerate() {
            if ci == 0.0 {
                continue;
            }
            let (comp, m) = self.split_index(i);
            let g = &self.grads[m];
            for j in 0..d {
                let slot = &mut out[(comp * d + j) * len..(comp * d + j + 1) * len];
                let gj = &g[j * len..(j + 1) * len];
                for node in 0..len {
                    slot[node] += ci * gj[node];
                }
            }
        }
        out
    }

    /// Nodal divergence Σ_c ∂_c u_c.
    pub fn evaluate_div(&self, c: &VelocityCoeffs) -> Vec<f64> {
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        for (i, &ci) in c.iter().enumerate() {
            if ci == 0.0 {
                continue;
            }
            let (comp, m) = self.split_index(i);
            let gc = &self.grads[m][comp * len..(comp + 1) * len];
            for node in 0..len {
                out[node] += ci * gc[node];
            }
        }
        out
    }

    /// ‖u‖²_{L²} on the span (spectral, exact).
    pub fn l2_norm_sq(&self, c: &VelocityCoeffs) -> f64 {
        c.iter().map(|x| x * x).sum()
    }

    /// ‖u‖²_{H¹} = Σ c_i²(1 + |kπ|²) on the span (spectral, exact: the mode
    /// gradients are L²-orthogonal across tensor indices).
    pub fn h1_norm_sq(&self, c: &VelocityCoeffs) -> f64 {
        c.iter()
            .enumerate()
            .map(|(i, x)| {
                let (_, m) = self.split_index(i);
                x * x * (1.0 + self.freq_sq[m])
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_1d(n_grid: usize, n_modes: usize) -> GalerkinBasis {
        build_basis(Grid::new(1, n_grid).unwrap(), n_modes, 1).unwrap()
    }

    #[test]
    fn single_mode_closed_form() {
        let b = basis_1d(65, 1);
        let mid = 32; // x = 0.5
        let v = b.scalar_vals(0)[mid];
        assert!((v - 2.0f64.sqrt()).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn modes_vanish_on_boundary() {
        let b = build_basis(Grid::new(2, 17).unwrap(), 3, 2).unwrap();
        for m in 0..b.n_scalar {
            for i in 0..b.grid.len() {
                if b.grid.on_boundary(i) {
                    assert!(b.scalar_vals(m)[i].abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn gram_matrix_is_identity() {
        // discrete sine orthogonality makes the Gram matrix exactly I
        let b = basis_1d(256, 3);
        for i in 0..b.dim {
            for j in 0..b.dim {
                let (ci, mi) = b.split_index(i);
                let (cj, mj) = b.split_index(j);
                let mut acc = 0.0;
                if ci == cj {
                    let vi = b.scalar_vals(mi);
                    let vj = b.scalar_vals(mj);
                    for node in 0..b.grid.len() {
                        acc += b.quad_weights()[node] * vi[node] * vj[node];
                    }
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-10, "G[{i}][{j}] = {acc}");
            }
        }
    }

    #[test]
    fn gram_matrix_is_identity_2d() {
        let b = build_basis(Grid::new(2, 33).unwrap(), 4, 2).unwrap();
        for i in 0..b.dim {
            for j in i..b.dim {
                let (ci, mi) = b.split_index(i);
                let (cj, mj) = b.split_index(j);
                let mut acc = 0.0;
                if ci == cj {
                    let vi = b.scalar_vals(mi);
                    let vj = b.scalar_vals(mj);
                    for node in 0..b.grid.len() {
                        acc += b.quad_weights()[node] * vi[node] * vj[node];
                    }
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-10, "G[{i}][{j}] = {acc}");
            }
        }
    }

    #[test]
    fn project_basis_field_gives_unit_vector() {
        let b = basis_1d(257, 8);
        let len = b.grid.len();
        let mut f = vec![0.0; len];
        f.copy_from_slice(b.scalar_vals(2));
        let c = b.project(&f).unwrap();
        for (i, ci) in c.iter().enumerate() {
            let expect = if i == 2 { 1.0 } else { 0.0 };
            assert!((ci - expect).abs() < 1e-10, "c[{i}] = {ci}");
        }
    }

    #[test]
    fn project_zero_is_zero() {
        let b = basis_1d(33, 4);
        let c = b.project(&vec![0.0; b.grid.len()]).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_closed_form_single_mode() {
        let b = basis_1d(65, 1);
        let c = vec![1.0];
        let div = b.evaluate_div(&c);
        let expect0 = 2.0f64.sqrt() * std::f64::consts::PI; // √2·π·cos(0)
        assert!((div[0] - expect0).abs() < 1e-12, "got {}", div[0]);
    }

    #[test]
    fn div_is_trace_of_grad() {
        let b = build_basis(Grid::new(2, 21).unwrap(), 3, 2).unwrap();
        let c: Vec<f64> = (0..b.dim).map(|i| ((i * 7 + 3) % 11) as f64 * 0.1 - 0.5).collect();
        let grad = b.evaluate_grad(&c);
        let div = b.evaluate_div(&c);
        let len = b.grid.len();
        for node in 0..len {
            let trace = grad[node] + grad[(1 * 2 + 1) * len + node];
            assert!((trace - div[node]).abs() < 1e-12);
        }
    }

    #[test]
    fn unresolvable_modes_rejected() {
        let err = build_basis(Grid::new(1, 9).unwrap(), 5, 1).unwrap_err();
        assert!(err.to_string().contains("unresolvable"));
    }

    #[test]
    fn h1_norm_matches_quadrature_of_gradient() {
        let b = build_basis(Grid::new(2, 33).unwrap(), 3, 2).unwrap();
        let c: Vec<f64> = (0..b.dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let grad = b.evaluate_grad(&c);
        let len = b.grid.len();
        let mut gsq = vec![0.0; len];
        for node in 0..len {
            let mut acc = 0.0;
            for cc in 0..2 {
                for j in 0..2 {
                    let g = grad[(cc * 2 + j) * len + node];
                    acc += g * g;
                }
            }
            gsq[node] = acc;
        }
        let by_quad = b.l2_norm_sq(&c) + b.quadrature(&gsq);
        let spectral = b.h1_norm_sq(&c);
        assert!(
            (by_quad - spectral).abs() < 1e-9 * spectral.max(1.0),
            "{by_quad} vs {spectral}"
        );
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn round_trip_on_span(seed_vals in proptest::collection::vec(-1.0f64..1.0, 8)) {
                let b = basis_1d(257, 8);
                let c: Vec<f64> = seed_vals;
                let back = b.project(&b.evaluate(&c)).unwrap();
                for i in 0..b.dim {
                    prop_assert!((back[i] - c[i]).abs() < 1e-10);
                }
            }

            #[test]
            fn adjointness(cv in proptest::collection::vec(-1.0f64..1.0, 6),
                           fv in proptest::collection::vec(-1.0f64..1.0, 6)) {
                // ∫ evaluate(c)·f = c · project(f) for f in the span
                let b = basis_1d(129, 6);
                let len = b.grid.len();
                let f = b.evaluate(&fv);
                let u = b.evaluate(&cv);
                let mut dot = vec![0.0; len];
                for node in 0..len {
                    dot[node] = u[node] * f[node];
                }
                let lhs = b.quadrature(&dot);
                let proj = b.project(&f).unwrap();
                let rhs: f64 = cv.iter().zip(&proj).map(|(a, b)| a * b).sum();
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }

            #[test]
            fn projection_is_contraction(amp in 0.1f64..2.0, k in 1usize..12) {
                // ‖Π f‖_{L²} ≤ ‖f‖_{L²} + tolerance, including modes outside the span
                let b = basis_1d(129, 4);
                let len = b.grid.len();
                let f: Vec<f64> = (0..len)
                    .map(|i| amp * (k as f64 * std::f64::consts::PI * b.grid.coord(i)[0]).sin())
                    .collect();
                let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
                let norm_f = b.quadrature(&sq).sqrt();
                let norm_proj = b.l2_norm_sq(&b.project(&f).unwrap()).sqrt();
                prop_assert!(norm_proj <= norm_f + 1e-9);
            }
        }
    }
}
