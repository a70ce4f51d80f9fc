//! Hermite basis, square-root equilibrium amplitudes `h(u)`, denoising
//! projectors and their error bounds.
//!
//! The equilibrium manifold is `M = { sqrt(rho) h(u) }` with
//! `h(u) = B gamma(u)` exactly quadratic in `u`. The hydrodynamic projector
//! maps onto the tangent space of `M` at a reference velocity `u_hat`; the
//! advection-diffusion projector onto the single direction `h(u_adv)`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::DenoiseError;
use crate::grid::Grid;
use crate::lattice::{LatticeModel, LatticeSymmetry};

/// Orthonormal Hermite basis `B` (q x d_V) with columns
/// `v0, v_1..v_d, v_kl (k <= l)`.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    pub d: usize,
    pub q: usize,
    cs: f64,
    cs2: f64,
    b: DMatrix<f64>,
    pairs: Vec<(usize, usize)>,
    // Hessian of h: one d x d matrix per population index
    hess: Vec<DMatrix<f64>>,
    hnorm: f64,
}

pub fn hermite_basis(lat: &LatticeModel) -> HermiteBasis {
    HermiteBasis::new(lat)
}

impl HermiteBasis {
    pub fn new(lat: &LatticeModel) -> Self {
        let (d, q) = (lat.dim, lat.q);
        let cs2 = lat.cs2();
        let cs = cs2.sqrt();
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|k| (k..d).map(move |l| (k, l))).collect();
        let dv = 1 + d + pairs.len();
        let mut b = DMatrix::zeros(q, dv);
        for i in 0..q {
            let sw = lat.weight(i).sqrt();
            b[(i, 0)] = sw;
            for k in 0..d {
                b[(i, 1 + k)] = lat.c(i, k) * sw / cs;
            }
            for (p, &(k, l)) in pairs.iter().enumerate() {
                let delta = if k == l { 1.0 } else { 0.0 };
                b[(i, 1 + d + p)] =
                    (lat.c(i, k) * lat.c(i, l) - delta * cs2) * sw / ((1.0 + delta).sqrt() * cs2);
            }
        }
        let mut basis = Self {
            d,
            q,
            cs,
            cs2,
            b,
            pairs,
            hess: Vec::new(),
            hnorm: 0.0,
        };
        let hg = basis.gamma_hessian();
        basis.hess = (0..q)
            .map(|i| {
                let mut m = DMatrix::zeros(d, d);
                for (c, hc) in hg.iter().enumerate() {
                    m += hc * basis.b[(i, c)];
                }
                m
            })
            .collect();
        basis.hnorm = hessian_norm_power(&basis);
        basis
    }

    pub fn dv(&self) -> usize {
        self.b.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn cs(&self) -> f64 {
        self.cs
    }

    pub fn cs2(&self) -> f64 {
        self.cs2
    }

    /// Index pairs `(k, l)`, `k <= l`, in column order after `v_d`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn gamma(&self, u: &[f64]) -> DVector<f64> {
        let d = self.d;
        let uu: f64 = u.iter().map(|x| x * x).sum();
        let mut g = DVector::zeros(self.dv());
        g[0] = 1.0 - uu / (8.0 * self.cs2);
        for k in 0..d {
            g[1 + k] = u[k] / (2.0 * self.cs);
        }
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            let s = if k == l { 2f64.sqrt() } else { 1.0 };
            g[1 + d + p] = u[k] * u[l] / (4.0 * s * self.cs2);
        }
        g
    }

    /// `d gamma / d u` (d_V x d).
    pub fn gamma_jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut j = DMatrix::zeros(self.dv(), d);
        for m in 0..d {
            j[(0, m)] = -u[m] / (4.0 * self.cs2);
            j[(1 + m, m)] = 1.0 / (2.0 * self.cs);
            for (p, &(k, l)) in self.pairs.iter().enumerate() {
                let s = if k == l { 2f64.sqrt() } else { 1.0 };
                let dkm = if k == m { u[l] } else { 0.0 };
                let dlm = if l == m { u[k] } else { 0.0 };
                j[(1 + d + p, m)] = (dkm + dlm) / (4.0 * s * self.cs2);
            }
        }
        j
    }

    /// Constant second derivatives of `gamma`: one d x d matrix per component.
    pub fn gamma_hessian(&self) -> Vec<DMatrix<f64>> {
        let d = self.d;
        let mut out = vec![DMatrix::zeros(d, d); self.dv()];
        out[0] = DMatrix::identity(d, d) * (-1.0 / (4.0 * self.cs2));
        for (p, &(k, l)) in self.pairs.iter().enumerate() {
            let s = if k == l { 2f64.sqrt() } else { 1.0 };
            let v = 1.0 / (4.0 * s * self.cs2);
            out[1 + d + p][(k, l)] += v;
            out[1 + d + p][(l, k)] += v;
        }
        out
    }

    pub fn h(&self, u: &[f64]) -> DVector<f64> {
        &self.b * self.gamma(u)
    }

    /// Columns `d h / d u_k` (q x d).
    pub fn dh(&self, u: &[f64]) -> DMatrix<f64> {
        &self.b * self.gamma_jacobian(u)
    }

    /// Hessian tensor `H = grad^2 h`, one d x d slice per population index.
    pub fn hessian(&self) -> &[DMatrix<f64>] {
        &self.hess
    }

    /// `v^T H v` as a q-vector.
    pub fn hessian_quadratic(&self, v: &[f64]) -> DVector<f64> {
        let vv = DVector::from_column_slice(v);
        DVector::from_iterator(self.q, self.hess.iter().map(|h| vv.dot(&(h * &vv))))
    }

    /// `||H||_2 = max_{|v| = 1} |v^T H v|`.
    pub fn hessian_norm(&self) -> f64 {
        self.hnorm
    }

    pub fn hessian_frobenius(&self) -> f64 {
        self.hess.iter().map(|h| h.norm_squared()).sum::<f64>().sqrt()
    }
}

pub fn equilibrium_amplitude(u: &[f64], basis: &HermiteBasis) -> DVector<f64> {
    basis.h(u)
}

/// Symmetric higher-order power iteration with a convexifying shift, multi-start.
pub fn hessian_norm_power(basis: &HermiteBasis) -> f64 {
    let d = basis.d;
    let hs = &basis.hess;
    let shift: f64 = hs.iter().map(|h| h.norm_squared()).sum();
    let mut starts: Vec<DVector<f64>> = (0..d)
        .map(|k| {
            let mut v = DVector::zeros(d);
            v[k] = 1.0;
            v
        })
        .collect();
    if d == 2 {
        starts.push(DVector::from_vec(vec![1.0, 1.0]).normalize());
        starts.push(DVector::from_vec(vec![1.0, -1.0]).normalize());
        starts.push(DVector::from_vec(vec![0.8, 0.6]));
    }
    let value = |v: &DVector<f64>| -> f64 { hs.iter().map(|h| v.dot(&(h * v)).powi(2)).sum::<f64>().sqrt() };
    let mut best: f64 = 0.0;
    for mut v in starts {
        for _ in 0..10_000 {
            let mut next = &v * shift;
            for h in hs {
                let hv = h * &v;
                next += &hv * v.dot(&hv);
            }
            let next = next.normalize();
            let delta = (&next - &v).norm();
            v = next;
            if delta < 1e-15 {
                break;
            }
        }
        best = best.max(value(&v));
    }
    best
}

/// Angular sweep of `|v^T H v|` over the unit circle with golden-section
/// refinement of the best bracket.
pub fn hessian_norm_sweep(basis: &HermiteBasis) -> f64 {
    let f = |t: f64| -> f64 {
        let v = if basis.d == 1 { vec![1.0] } else { vec![t.cos(), t.sin()] };
        basis.hessian_quadratic(&v).norm()
    };
    if basis.d == 1 {
        return f(0.0);
    }
    let n = 720;
    let step = std::f64::consts::PI / n as f64;
    let (mut tb, mut fb) = (0.0, f(0.0));
    for j in 1..n {
        let t = j as f64 * step;
        let ft = f(t);
        if ft > fb {
            tb = t;
            fb = ft;
        }
    }
    let (mut a, mut b) = (tb - step, tb + step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut e = a + r * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    while b - a > 1e-12 {
        if fc > fe {
            b = e;
            e = c;
            fe = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + r * (b - a);
            fe = f(e);
        }
    }
    fb.max(fc).max(fe)
}

/// Largest singular value of the q x d^2 unfolding of `H`. This is the norm
/// over all unit d x d matrices `W` of `H : W`, an upper bound on
/// [`HermiteBasis::hessian_norm`] which only ranges over `W = v v^T`.
pub fn hessian_unfolding_norm(basis: &HermiteBasis) -> f64 {
    let d = basis.d;
    let m = DMatrix::from_fn(basis.q, d * d, |i, c| basis.hess[i][(c / d, c % d)]);
    m.singular_values().max()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    #[serde(rename = "hydro")]
    Hydro,
    #[serde(rename = "ade")]
    Ade,
}

/// Orthogonal projector used as the collision operator.
#[derive(Debug, Clone)]
pub struct DenoiseOperator {
    pub variant: Variant,
    pub u_ref: Vec<f64>,
    pub rank: usize,
    d: DMatrix<f64>,
    gamma: DMatrix<f64>,
    jbar: DMatrix<f64>,
    // row-major copy for the node kernels
    flat: Vec<f64>,
}

impl DenoiseOperator {
    fn from_parts(variant: Variant, u_ref: &[f64], d: DMatrix<f64>, gamma: DMatrix<f64>, jbar: DMatrix<f64>) -> Self {
        let q = d.nrows();
        let flat = (0..q * q).map(|k| d[(k / q, k % q)]).collect();
        Self {
            variant,
            u_ref: u_ref.to_vec(),
            rank: gamma.ncols(),
            d,
            gamma,
            jbar,
            flat,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// `Gamma(u_ref)`: d_V x (d+1) for hydro, d_V x 1 for ADE.
    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn jbar(&self) -> &DMatrix<f64> {
        &self.jbar
    }

    pub fn q(&self) -> usize {
        self.d.nrows()
    }

    /// `out = D g` for one node.
    #[inline]
    pub fn apply_into(&self, g: &[f64], out: &mut [f64]) {
        let q = g.len();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.flat[r * q..(r + 1) * q];
            *o = row.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.d * g
    }
}

/// Tangent-space projector `D = Q Q^T` with `Q` from the QR factorization of
/// `Jbar = B Gamma(u_hat)`, `Gamma = [gamma, d_1 gamma, .., d_d gamma]`.
pub fn denoise_hydro(u_hat: &[f64], basis: &HermiteBasis) -> Result<DenoiseOperator, DenoiseError> {
    let d = basis.d;
    assert_eq!(u_hat.len(), d);
    let mut gamma = DMatrix::zeros(basis.dv(), d + 1);
    gamma.set_column(0, &basis.gamma(u_hat));
    let gj = basis.gamma_jacobian(u_hat);
    for k in 0..d {
        gamma.set_column(1 + k, &gj.column(k));
    }
    let jbar = basis.matrix() * &gamma;
    let qr = jbar.clone().qr();
    let min_diag = qr.r().diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if !(min_diag > 1e-12) {
        return Err(DenoiseError::SingularJacobian { min_diag });
    }
    let qm = qr.q();
    let dm = &qm * qm.transpose();
    Ok(DenoiseOperator::from_parts(Variant::Hydro, u_hat, dm, gamma, jbar))
}

/// Rank-one projector `h h^T / |h|^2` with `h = h(u_adv)`.
pub fn denoise_ade(u_adv: &[f64], basis: &HermiteBasis) -> DenoiseOperator {
    assert_eq!(u_adv.len(), basis.d);
    let gamma = DMatrix::from_column_slice(basis.dv(), 1, basis.gamma(u_adv).as_slice());
    let h = basis.h(u_adv);
    let dm = &h * h.transpose() / h.norm_squared();
    let jbar = DMatrix::from_column_slice(basis.q, 1, h.as_slice());
    DenoiseOperator::from_parts(Variant::Ade, u_adv, dm, gamma, jbar)
}

pub fn build_operator(variant: Variant, u: &[f64], basis: &HermiteBasis) -> Result<DenoiseOperator, DenoiseError> {
    match variant {
        Variant::Hydro => denoise_hydro(u, basis),
        Variant::Ade => Ok(denoise_ade(u, basis)),
    }
}

/// Frobenius norm of `D(R_g u_hat) P_g - P_g D(u_hat)`.
pub fn check_equivariance(
    variant: Variant,
    basis: &HermiteBasis,
    g: &LatticeSymmetry,
    u_hat: &[f64],
) -> Result<f64, DenoiseError> {
    let p = g.permutation_matrix();
    let d0 = build_operator(variant, u_hat, basis)?;
    let d1 = build_operator(variant, &g.rotate(u_hat), basis)?;
    Ok((d1.matrix() * &p - &p * d0.matrix()).norm())
}

/// Operators keyed by reference velocity quantized to `1e-12`, for
/// position-varying references.
#[derive(Debug, Clone)]
pub struct OperatorCache {
    basis: Arc<HermiteBasis>,
    variant: Variant,
    map: HashMap<Vec<i64>, Arc<DenoiseOperator>>,
}

pub const CACHE_QUANTUM: f64 = 1e-12;

impl OperatorCache {
    pub fn new(basis: Arc<HermiteBasis>, variant: Variant) -> Self {
        Self {
            basis,
            variant,
            map: HashMap::new(),
        }
    }

    pub fn get(&mut self, u: &[f64]) -> Result<Arc<DenoiseOperator>, DenoiseError> {
        let key: Vec<i64> = u.iter().map(|x| (x / CACHE_QUANTUM).round() as i64).collect();
        if let Some(op) = self.map.get(&key) {
            return Ok(op.clone());
        }
        let op = Arc::new(build_operator(self.variant, u, &self.basis)?);
        self.map.insert(key, op.clone());
        Ok(op)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn basis(&self) -> &Arc<HermiteBasis> {
        &self.basis
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

/// Per-node strain rate `S` and vorticity `Omega` (row-major d x d each).
#[derive(Debug, Clone, PartialEq)]
pub struct StrainRate {
    pub d: usize,
    pub s: Vec<f64>,
    pub omega: Vec<f64>,
}

impl StrainRate {
    pub fn s_at(&self, node: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.s[node * dd..(node + 1) * dd]
    }

    pub fn omega_at(&self, node: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.omega[node * dd..(node + 1) * dd]
    }

    pub fn frobenius(&self, node: usize) -> f64 {
        self.s_at(node).iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Central differences on a periodic grid; `u` is node-major with `d` entries per node.
pub fn strain_rate(grid: &Grid, u: &[f64]) -> StrainRate {
    let d = grid.dim();
    let n = grid.nodes();
    assert_eq!(u.len(), n * d);
    let mut s = vec![0.0; n * d * d];
    let mut omega = vec![0.0; n * d * d];
    let mut grad = vec![0.0; d * d];
    for node in 0..n {
        // grad[k * d + l] = d_k u_l
        for k in 0..d {
            let mut e = [0i32; 2];
            e[k] = 1;
            let fwd = grid.shifted(node, &e[..d]);
            e[k] = -1;
            let bwd = grid.shifted(node, &e[..d]);
            for l in 0..d {
                grad[k * d + l] = 0.5 * (u[fwd * d + l] - u[bwd * d + l]);
            }
        }
        for k in 0..d {
            for l in 0..d {
                s[node * d * d + k * d + l] = 0.5 * (grad[k * d + l] + grad[l * d + k]);
                omega[node * d * d + k * d + l] = 0.5 * (grad[k * d + l] - grad[l * d + k]);
            }
        }
    }
    StrainRate { d, s, omega }
}

/// `(sqrt(rho_str) / 2) (||H||_2 |du|^2 + sqrt(2) ||S||_F)`.
pub fn collision_error_bound(rho_str: f64, delta_u: &[f64], s_frob: f64, h_norm: f64) -> f64 {
    let du2: f64 = delta_u.iter().map(|x| x * x).sum();
    0.5 * rho_str.sqrt() * (h_norm * du2 + 2f64.sqrt() * s_frob)
}

/// Measured collision error `|D g - sqrt(rho) h(u)|` with `(rho, u)` read from `g`.
pub fn collision_error(g: &DVector<f64>, op: &DenoiseOperator, lat: &LatticeModel, basis: &HermiteBasis) -> f64 {
    let f: Vec<f64> = g.iter().map(|x| x * x).collect();
    let mut u = vec![0.0; lat.dim];
    let rho = crate::classical_lbm::node_moments(lat, &f, &mut u);
    (op.apply(g) - basis.h(&u) * rho.sqrt()).norm()
}

/// Closest manifold point `sqrt(rho) h(u)` to a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub rho: f64,
    pub u: Vec<f64>,
    pub dist: f64,
}

pub const GRID_POINTS: usize = 21;
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;
const STARTS: usize = 5;

fn optimal_amplitude(h: &DVector<f64>, g: &DVector<f64>) -> f64 {
    (h.dot(g) / h.norm_squared()).max(0.0)
}

/// Brute-force minimizer of `|g - sqrt(rho) h(u)|`: a 21^d grid over
/// `|u_k| <= 0.5 c_s` with the optimal amplitude per candidate, then damped
/// Gauss-Newton in `(sqrt(rho), u)` from the best few grid points.
pub fn manifold_distance(g: &[f64], basis: &HermiteBasis) -> Result<ManifoldPoint, DenoiseError> {
    let gv = DVector::from_column_slice(g);
    if gv.norm() == 0.0 {
        return Err(DenoiseError::ZeroInput);
    }
    let d = basis.d;
    let half = 0.5 * basis.cs();
    let axis: Vec<f64> = (0..GRID_POINTS)
        .map(|j| -half + 2.0 * half * j as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let total = GRID_POINTS.pow(d as u32);
    let mut cands: Vec<(f64, Vec<f64>)> = (0..total)
        .map(|mut j| {
            let u: Vec<f64> = (0..d)
                .map(|_| {
                    let v = axis[j % GRID_POINTS];
                    j /= GRID_POINTS;
                    v
                })
                .collect();
            let h = basis.h(&u);
            let a = optimal_amplitude(&h, &gv);
            ((&gv - h * a).norm(), u)
        })
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best_grid = cands[0].0;

    let mut best: Option<ManifoldPoint> = None;
    for (_, u0) in cands.iter().take(STARTS) {
        if let Some(p) = gauss_newton(&gv, u0, basis) {
            if best.as_ref().is_none_or(|b| p.dist < b.dist) {
                best = Some(p);
            }
        }
    }
    best.ok_or(DenoiseError::OptimizerFailed {
        best_distance: best_grid,
    })
}

fn gauss_newton(g: &DVector<f64>, u0: &[f64], basis: &HermiteBasis) -> Option<ManifoldPoint> {
    let d = basis.d;
    let eval = |x: &DVector<f64>| -> DVector<f64> { basis.h(&x.as_slice()[1..]) * x[0] - g };
    let mut x = DVector::zeros(d + 1);
    x[0] = optimal_amplitude(&basis.h(u0), g);
    for k in 0..d {
        x[1 + k] = u0[k];
    }
    let mut r = eval(&x);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-12;
    let gscale = 1.0 + g.norm_squared();
    for _ in 0..NEWTON_MAX_ITER {
        let u = &x.as_slice()[1..];
        let mut j = DMatrix::zeros(basis.q, d + 1);
        j.set_column(0, &basis.h(u));
        let dh = basis.dh(u) * x[0];
        for k in 0..d {
            j.set_column(1 + k, &dh.column(k));
        }
        let jt = j.transpose();
        let grad = &jt * &r;
        if grad.norm() <= NEWTON_TOL * gscale {
            return finish(x, cost);
        }
        let jtj = &jt * &j;
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..=d {
                a[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let step = match a.cholesky() {
                Some(c) => c.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let xn = &x + &step;
            let rn = eval(&xn);
            let cn = rn.norm_squared();
            if cn <= cost {
                let small = step.norm() <= NEWTON_TOL * (1.0 + x.norm());
                x = xn;
                r = rn;
                cost = cn;
                lambda = (lambda * 0.1).max(1e-15);
                accepted = true;
                if small {
                    return finish(x, cost);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at working precision
            return if grad.norm() <= 1e-8 * gscale { finish(x, cost) } else { None };
        }
    }
    None
}

fn finish(x: DVector<f64>, cost: f64) -> Option<ManifoldPoint> {
    if x[0] < 0.0 {
        return None;
    }
    Some(ManifoldPoint {
        rho: x[0] * x[0],
        u: x.as_slice()[1..].to_vec(),
        dist: cost.sqrt(),
    })
}

/// Inputs, bound and measurement for the projection-distance estimate.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BoundReport {
    pub measured: f64,
    pub bound: f64,
    pub rho_hat: f64,
    pub u_hat: Vec<f64>,
    pub delta: f64,
    pub theta: f64,
    pub beta: f64,
    pub h_norm: f64,
    /// First Newton step length `r`.
    pub newton_radius: f64,
    /// Upper bound on the Lipschitz constant of the Jacobian over the Newton ball.
    pub mu: f64,
    pub nk_holds: bool,
    /// `Some(measured <= bound)` when the Newton-Kantorovich condition holds.
    pub satisfied: Option<bool>,
}

/// Bound `2 beta^2 Delta^2 ||H|| sqrt(rho_hat + 2 beta Delta)` on the distance
/// from `D(u_hat) g` to the manifold, checked against [`manifold_distance`].
pub fn denoising_error_bound(
    g: &[f64],
    u_hat: &[f64],
    rho_hat: Option<f64>,
    basis: &HermiteBasis,
) -> Result<BoundReport, DenoiseError> {
    let gv = DVector::from_column_slice(g);
    let gn = gv.norm();
    if gn == 0.0 {
        return Err(DenoiseError::ZeroInput);
    }
    let d = basis.d;
    let h = basis.h(u_hat);
    let cos_theta = h.dot(&gv) / (h.norm() * gn);
    let theta = cos_theta.clamp(-1.0, 1.0).acos();
    let a = match rho_hat {
        Some(r) => r.sqrt(),
        None => h.dot(&gv) / h.norm_squared(),
    };
    if !(a > 0.0) {
        return Err(DenoiseError::SingularJacobian { min_diag: a });
    }
    let rho_hat = a * a;
    let resid = &h * a - &gv;
    let delta = resid.norm();

    let mut jac = DMatrix::zeros(basis.q, d + 1);
    jac.set_column(0, &(&h / (2.0 * a)));
    let dh = basis.dh(u_hat) * a;
    for k in 0..d {
        jac.set_column(1 + k, &dh.column(k));
    }
    let svd = jac.clone().svd(true, true);
    let smin = svd.singular_values.min();
    if !(smin > 1e-14) {
        return Err(DenoiseError::SingularJacobian { min_diag: smin });
    }
    let beta = 1.0 / smin;
    let hn = basis.hessian_norm();
    let bound = 2.0 * beta * beta * delta * delta * hn * (rho_hat + 2.0 * beta * delta).sqrt();

    let op = denoise_hydro(u_hat, basis)?;
    let projected = op.apply(&gv);
    let z = svd
        .solve(&op.apply(&resid), 1e-14)
        .map_err(|_| DenoiseError::SingularJacobian { min_diag: smin })?;
    let r = z.norm();
    let mu = jacobian_lipschitz_bound(basis, rho_hat, u_hat, r);
    let nk_holds = mu.is_finite() && 2.0 * beta * mu * r <= 1.0;
    let measured = if projected.norm() == 0.0 {
        0.0
    } else {
        manifold_distance(projected.as_slice(), basis)?.dist
    };
    Ok(BoundReport {
        measured,
        bound,
        rho_hat,
        u_hat: u_hat.to_vec(),
        delta,
        theta,
        beta,
        h_norm: hn,
        newton_radius: r,
        mu,
        nk_holds,
        satisfied: nk_holds.then_some(measured <= bound),
    })
}

/// Frobenius-norm bound on the second derivative of `(rho, u) -> sqrt(rho) h(u)`
/// over every point within `2r` of `(rho_hat, u_hat)`; infinite when that
/// ball leaves `rho > 0`.
pub fn jacobian_lipschitz_bound(basis: &HermiteBasis, rho_hat: f64, u_hat: &[f64], r: f64) -> f64 {
    let rho_min = rho_hat - 2.0 * r;
    if !(rho_min > 0.0) {
        return f64::INFINITY;
    }
    let rho_max = rho_hat + 2.0 * r;
    let umax = u_hat.iter().map(|x| x * x).sum::<f64>().sqrt() + 2.0 * r;
    let (cs2, d) = (basis.cs2(), basis.d as f64);
    let u2 = umax * umax;
    let a = u2 / (8.0 * cs2);
    let gamma2 = (1.0f64).max((1.0 - a).powi(2)) + u2 / (4.0 * cs2) + u2 * u2 / (32.0 * cs2 * cs2);
    let grad2 = d / (4.0 * cs2) + u2 * (d + 2.0) / (16.0 * cs2 * cs2);
    let hf2 = basis.hessian_frobenius().powi(2);
    (gamma2 / (16.0 * rho_min.powi(3)) + grad2 / (2.0 * rho_min) + rho_max * hf2).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_lattice, symmetry_group, LatticeId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn both() -> Vec<(LatticeModel, HermiteBasis)> {
        [LatticeId::D1Q3, LatticeId::D2Q9]
            .into_iter()
            .map(|id| {
                let l = make_lattice(id);
                let b = HermiteBasis::new(&l);
                (l, b)
            })
            .collect()
    }

    fn random_u(rng: &mut ChaCha8Rng, d: usize, max: f64) -> Vec<f64> {
        loop {
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-max..max)).collect();
            if u.iter().map(|x| x * x).sum::<f64>().sqrt() <= max {
                return u;
            }
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        for (l, b) in both() {
            assert_eq!(b.dv(), (l.dim + 1) * (l.dim + 2) / 2);
            let gram = b.matrix().transpose() * b.matrix();
            assert!((gram - DMatrix::identity(b.dv(), b.dv())).amax() < 1e-13);
        }
    }

    #[test]
    fn h_at_rest_is_sqrt_weights() {
        for (l, b) in both() {
            let h = b.h(&vec![0.0; l.dim]);
            for i in 0..l.q {
                assert!((h[i] - l.weight(i).sqrt()).abs() < 1e-15);
            }
            assert!((h.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn h_approximates_sqrt_equilibrium_to_third_order() {
        let l = make_lattice(LatticeId::D2Q9);
        let b = HermiteBasis::new(&l);
        let u = [0.04, -0.03];
        let resid = |s: f64| {
            let us = [u[0] * s, u[1] * s];
            let feq = crate::classical_lbm::equilibrium(1.0, &us, &l).unwrap();
            let sq = DVector::from_iterator(9, feq.iter().map(|f| f.sqrt()));
            (sq - b.h(&us)).norm()
        };
        let ratio = resid(1.0) / resid(0.5);
        assert!((ratio - 8.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn h_parity() {
        let (_, b) = &both()[1];
        let u = [0.05, 0.02];
        let gp = b.gamma(&u);
        let gm = b.gamma(&[-u[0], -u[1]]);
        for c in 0..b.dv() {
            let s = if (1..=2).contains(&c) { -1.0 } else { 1.0 };
            assert!((gm[c] - s * gp[c]).abs() < 1e-16);
        }
    }

    #[test]
    fn gamma_derivatives_match_finite_differences() {
        let (_, b) = &both()[1];
        let u = [0.07, -0.02];
        let eps = 1e-6;
        let j = b.gamma_jacobian(&u);
        for m in 0..2 {
            let mut up = u;
            let mut um = u;
            up[m] += eps;
            um[m] -= eps;
            let fd = (b.gamma(&up) - b.gamma(&um)) / (2.0 * eps);
            assert!((fd - j.column(m)).amax() < 1e-9);
        }
        // h is quadratic: exact second-order expansion
        let v = [0.3, -0.1];
        let exact = b.h(&[u[0] + v[0], u[1] + v[1]]);
        let taylor = b.h(&u) + b.dh(&u) * DVector::from_column_slice(&v) + b.hessian_quadratic(&v) * 0.5;
        assert!((exact - taylor).amax() < 1e-15);
    }

    #[test]
    fn hessian_norm_routes() {
        for (l, b) in both() {
            let oracle = 3f64.sqrt() / (4.0 * l.cs2());
            let p = hessian_norm_power(&b);
            let s = hessian_norm_sweep(&b);
            assert!((p - s).abs() < 1e-10, "{p} {s}");
            assert!((p - oracle).abs() < 1e-12);
            assert!(hessian_unfolding_norm(&b) >= p - 1e-12);
        }
    }

    #[test]
    fn hydro_at_rest() {
        for (l, b) in both() {
            let op = denoise_hydro(&vec![0.0; l.dim], &b).unwrap();
            let mut expect = DMatrix::zeros(l.q, l.q);
            for c in 0..=l.dim {
                let v = b.matrix().column(c);
                expect += v * v.transpose();
            }
            assert!((op.matrix() - expect).amax() < 1e-14);
            assert!((op.matrix().trace() - (l.dim + 1) as f64).abs() < 1e-13);
        }
    }

    #[test]
    fn projector_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (l, b) in both() {
            for _ in 0..20 {
                let u = random_u(&mut rng, l.dim, 0.3 * b.cs());
                for variant in [Variant::Hydro, Variant::Ade] {
                    let op = build_operator(variant, &u, &b).unwrap();
                    let m = op.matrix();
                    assert!((m * m - m).amax() < 1e-12);
                    assert!((m - m.transpose()).amax() < 1e-12);
                    assert!((m.trace() - op.rank as f64).abs() < 1e-12);
                    let h = b.h(&u);
                    assert!((m * &h - &h).amax() < 1e-12);
                    if variant == Variant::Hydro {
                        let dh = b.dh(&u);
                        assert!((m * &dh - &dh).amax() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hydro_preserves_sqrt_equilibrium_to_third_order() {
        let l = make_lattice(LatticeId::D2Q9);
        let b = HermiteBasis::new(&l);
        let resid = |s: f64| {
            let u = [0.05 * s, 0.02 * s];
            let feq = crate::classical_lbm::equilibrium(1.3, &u, &l).unwrap();
            let g = DVector::from_iterator(9, feq.iter().map(|f| f.sqrt()));
            (denoise_hydro(&u, &b).unwrap().apply(&g) - &g).norm()
        };
        let ratio = resid(1.0) / resid(0.5);
        assert!(ratio > 7.0 && ratio < 9.0, "{ratio}");
    }

    #[test]
    fn ade_at_rest_is_v0() {
        let (_, b) = &both()[1];
        let op = denoise_ade(&[0.0, 0.0], b);
        let v = b.matrix().column(0);
        assert!((op.matrix() - v * v.transpose()).amax() < 1e-15);
    }

    #[test]
    fn equivariance_over_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (l, b) in both() {
            let group = symmetry_group(&l);
            for _ in 0..10 {
                let u = random_u(&mut rng, l.dim, 0.3 * b.cs());
                for g in &group {
                    for variant in [Variant::Hydro, Variant::Ade] {
                        let r = check_equivariance(variant, &b, g, &u).unwrap();
                        assert!(r < 1e-12, "{r}");
                        if g.is_identity() {
                            assert_eq!(r, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cache_reuses_operators() {
        let l = make_lattice(LatticeId::D2Q9);
        let mut c = OperatorCache::new(Arc::new(HermiteBasis::new(&l)), Variant::Hydro);
        let a = c.get(&[0.01, 0.0]).unwrap();
        let b = c.get(&[0.01 + 1e-14, 0.0]).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        c.get(&[0.02, 0.0]).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn strain_rate_examples() {
        let g = Grid::plane(8, 8);
        let n = g.nodes();
        let uniform = vec![0.1; 2 * n];
        let sr = strain_rate(&g, &uniform);
        assert!(sr.s.iter().all(|&x| x == 0.0));
        let a = 0.01;
        let mut u = vec![0.0; 2 * n];
        for node in 0..n {
            u[2 * node] = a * g.coords(node)[1] as f64;
        }
        let sr = strain_rate(&g, &u);
        let node = g.index(3, 4);
        let s = sr.s_at(node);
        let o = sr.omega_at(node);
        assert!((s[1] - a / 2.0).abs() < 1e-15 && (s[2] - a / 2.0).abs() < 1e-15);
        assert!((o[1] + a / 2.0).abs() < 1e-15 && (o[2] - a / 2.0).abs() < 1e-15);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn strain_rate_taylor_green_second_order() {
        let err = |l: usize| {
            let g = Grid::plane(l, l);
            let k = 2.0 * std::f64::consts::PI / l as f64;
            let u0 = 0.01;
            let mut u = vec![0.0; 2 * l * l];
            for node in 0..l * l {
                let [x, y] = g.coords(node);
                let (x, y) = (x as f64, y as f64);
                u[2 * node] = -u0 * (k * x).cos() * (k * y).sin();
                u[2 * node + 1] = u0 * (k * x).sin() * (k * y).cos();
            }
            let sr = strain_rate(&g, &u);
            let mut worst: f64 = 0.0;
            for node in 0..l * l {
                let [x, y] = g.coords(node);
                let (x, y) = (x as f64, y as f64);
                // S_xx = u0 k sin(kx) sin(ky), S_yy = -S_xx, S_xy = 0
                let sxx = u0 * k * (k * x).sin() * (k * y).sin();
                let exact = (2.0 * sxx * sxx).sqrt();
                worst = worst.max((sr.frobenius(node) - exact).abs());
            }
            worst / (u0 * k)
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn collision_bound_scaling() {
        assert_eq!(collision_error_bound(1.0, &[0.0, 0.0], 0.0, 1.3), 0.0);
        let a = collision_error_bound(1.2, &[0.01, 0.0], 0.0, 1.3);
        let b = collision_error_bound(1.2, &[0.02, 0.0], 0.0, 1.3);
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_remainder_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for (l, b) in both() {
            for _ in 0..100 {
                let u = random_u(&mut rng, l.dim, 0.3 * b.cs());
                let uh = random_u(&mut rng, l.dim, 0.3 * b.cs());
                let rho: f64 = rng.random_range(0.5..2.0);
                let op = denoise_hydro(&uh, &b).unwrap();
                let g = b.h(&u) * rho.sqrt();
                let perp = (&g - op.apply(&g)).norm();
                let du: Vec<f64> = u.iter().zip(&uh).map(|(a, c)| a - c).collect();
                let rhs = collision_error_bound(rho, &du, 0.0, b.hessian_norm());
                assert!(perp <= rhs + 1e-12, "{perp} > {rhs}");
            }
        }
    }

    #[test]
    fn manifold_distance_recovers_points() {
        let (_, b) = &both()[1];
        let u = [0.08, -0.05];
        let g = b.h(&u) * 1.2f64.sqrt();
        let p = manifold_distance(g.as_slice(), b).unwrap();
        assert!(p.dist < 1e-10);
        assert!((p.rho - 1.2).abs() < 1e-9 && (p.u[0] - u[0]).abs() < 1e-9 && (p.u[1] - u[1]).abs() < 1e-9);
        let v0 = b.h(&[0.0, 0.0]);
        let p = manifold_distance(v0.as_slice(), b).unwrap();
        assert!(p.dist < 1e-12 && (p.rho - 1.0).abs() < 1e-12);
        assert_eq!(manifold_distance(&[0.0; 9], b), Err(DenoiseError::ZeroInput));
    }

    #[test]
    fn manifold_distance_bounded_by_perturbation() {
        let (_, b) = &both()[1];
        let h = b.h(&[0.1, 0.0]);
        // unit vector orthogonal to h
        let mut e = DVector::from_fn(9, |i, _| if i == 4 { 1.0 } else { 0.0 });
        e -= &h * (h.dot(&e) / h.norm_squared());
        let e = e.normalize();
        let g = &h + e * 0.01;
        let p = manifold_distance(g.as_slice(), b).unwrap();
        assert!(p.dist <= 0.01 + 1e-15);
        assert!(p.dist > 0.0);
    }

    #[test]
    fn denoising_bound_examples() {
        let (_, b) = &both()[1];
        let uh = [0.05, 0.0];
        let g = b.h(&uh) * 1.1f64.sqrt();
        let rep = denoising_error_bound(g.as_slice(), &uh, None, b).unwrap();
        assert!(rep.delta < 1e-14 && rep.bound < 1e-25 && rep.measured < 1e-10);
        let g2 = b.h(&uh) * 2.0;
        let rep = denoising_error_bound(g2.as_slice(), &uh, None, b).unwrap();
        assert!(rep.theta.abs() < 1e-7 && rep.delta < 1e-14);
        assert!((rep.rho_hat - 4.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let dir = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0)).normalize();
            let g = b.h(&uh) + dir * 0.01;
            let rep = denoising_error_bound(g.as_slice(), &uh, None, b).unwrap();
            assert!(rep.nk_holds);
            assert_eq!(rep.satisfied, Some(true), "{rep:?}");
        }
    }
}
