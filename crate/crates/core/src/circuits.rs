//! Gate-level operators of the QLBM step, built densely or as structured
//! gate lists and checked against statevector oracles.
//!
//! Conventions:
//! * Velocity qubit `i` is bit `i` of the velocity register; the one-hot
//!   state `|e_i>` is register value `1 << i`.
//! * Block encodings order system before ancilla with the ancilla as the
//!   least significant bit: `|j>|a>` is index `2 j + a`.
//! * Grid circuits use `index = ((domain << q | velocity) << n_anc) | anc`
//!   with `domain = x + Lx * y`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::denoise::DenoiseOperator;
use crate::error::CircuitError;
use crate::grid::{BounceBack, Grid, SolidMask};
use crate::lattice::LatticeModel;

pub const DEFAULT_QUBIT_CAP: usize = 16;

const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn real_to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

/// Complex square matrix with a label.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub label: String,
    pub matrix: DMatrix<C64>,
}

impl DenseOperator {
    pub fn new(label: impl Into<String>, matrix: DMatrix<C64>) -> Self {
        assert!(matrix.is_square());
        Self {
            label: label.into(),
            matrix,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `log2(dim)` when the dimension is a power of two.
    pub fn qubits(&self) -> Option<usize> {
        let n = self.dim();
        n.is_power_of_two().then(|| n.trailing_zeros() as usize)
    }

    /// Frobenius norm of `U^dagger U - I`.
    pub fn unitarity_residual(&self) -> f64 {
        let n = self.dim();
        (self.matrix.adjoint() * &self.matrix - DMatrix::<C64>::identity(n, n)).norm()
    }

    pub fn apply(&self, v: &StateVector) -> StateVector {
        StateVector {
            amps: &self.matrix * &v.amps,
        }
    }
}

/// Complex amplitudes over a computational basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amps: DVector<C64>,
}

impl StateVector {
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut amps = DVector::from_element(dim, ZERO);
        amps[k] = ONE;
        Self { amps }
    }

    pub fn from_real(v: &[f64]) -> Self {
        Self {
            amps: DVector::from_iterator(v.len(), v.iter().map(|&x| C64::new(x, 0.0))),
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn normalized(&self) -> Self {
        Self {
            amps: self.amps.unscale(self.norm()),
        }
    }

    pub fn distance(&self, other: &StateVector) -> f64 {
        (&self.amps - &other.amps).norm()
    }

    /// `min_phi |self - e^{i phi} other|`.
    pub fn distance_up_to_phase(&self, other: &StateVector) -> f64 {
        let ov = other.amps.dotc(&self.amps);
        let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
        (&self.amps - other.amps.scale(1.0) * phase).norm()
    }
}

// ---------------------------------------------------------------------------
// Block encoding

/// `U_A = (U (x) H) U_Sigma (V^dagger (x) H)` over `R^q (x) C^2`.
#[derive(Debug, Clone)]
pub struct BlockEncoding {
    pub unitary: DenseOperator,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub sigma: Vec<f64>,
    /// Diagonal of `U_Sigma` in `2 j + a` order.
    pub phases: Vec<C64>,
    pub alpha: f64,
}

impl BlockEncoding {
    pub fn non_unit_phases(&self) -> usize {
        self.phases.iter().filter(|p| (*p - ONE).norm() > 1e-9).count()
    }

    /// `(I (x) <0|) U_A (I (x) |0>) * alpha`.
    pub fn top_left_block(&self) -> DMatrix<C64> {
        top_left_block(&self.unitary.matrix, self.u.nrows()) * C64::new(self.alpha, 0.0)
    }
}

/// Entries `<2i|M|2j>` of an operator on `C^n (x) C^2`.
pub fn top_left_block(m: &DMatrix<C64>, n: usize) -> DMatrix<C64> {
    DMatrix::from_fn(n, n, |i, j| m[(2 * i, 2 * j)])
}

fn is_projector(a: &DMatrix<f64>) -> bool {
    (a - a.transpose()).amax() < 1e-10 && (a * a - a).amax() < 1e-10
}

/// Spectral SVD of a symmetric projector: range vectors first, null space
/// last, orientation fixed to `det = +1`. Singular values are exactly 0 or 1.
fn projector_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut u = DMatrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    for (c, &k) in order.iter().enumerate() {
        u.set_column(c, &eig.eigenvectors.column(k));
        sigma.push(if eig.eigenvalues[k] > 0.5 { 1.0 } else { 0.0 });
    }
    if u.determinant() < 0.0 {
        let last = u.column(n - 1).clone_owned();
        u.set_column(n - 1, &(-last));
    }
    (u, sigma)
}

pub fn svd_block_encode(a: &DMatrix<f64>, alpha: Option<f64>) -> Result<BlockEncoding, CircuitError> {
    if !a.is_square() {
        return Err(CircuitError::Dimension("block encoding needs a square matrix".into()));
    }
    let alpha = alpha.unwrap_or(1.0);
    let n = a.nrows();
    let norm = a.clone().singular_values().max();
    if norm > alpha * (1.0 + 1e-12) {
        return Err(CircuitError::Normalization { norm, alpha });
    }
    let scaled = a / alpha;
    let (u, v, sigma) = if alpha == 1.0 && is_projector(&scaled) {
        let (u, s) = projector_svd(&scaled);
        (u.clone(), u, s)
    } else {
        let svd = scaled.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v_t requested").transpose();
        let s = svd.singular_values.iter().map(|x| x.clamp(0.0, 1.0)).collect();
        (u, v, s)
    };
    let mut phases = Vec::with_capacity(2 * n);
    for &s in &sigma {
        let c = (1.0 - s * s).max(0.0).sqrt();
        phases.push(C64::new(s, c));
        phases.push(C64::new(s, -c));
    }
    let had = hadamard();
    let left = kron(&real_to_complex(&u), &had);
    let right = kron(&real_to_complex(&v.transpose()), &had);
    let diag = DMatrix::from_diagonal(&DVector::from_vec(phases.clone()));
    let unitary = DenseOperator::new("U_A", left * diag * right);
    Ok(BlockEncoding {
        unitary,
        u,
        v,
        sigma,
        phases,
        alpha,
    })
}

pub fn hadamard() -> DMatrix<C64> {
    let h = 1.0 / 2f64.sqrt();
    DMatrix::from_row_slice(2, 2, &[C64::new(h, 0.0), C64::new(h, 0.0), C64::new(h, 0.0), C64::new(-h, 0.0)])
}

pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

// ---------------------------------------------------------------------------
// One-hot extensions

/// Identity on non-one-hot states of `q` qubits, `M` on `span{|e_i>}`.
pub fn onehot_extend(m: &DMatrix<C64>) -> DenseOperator {
    let q = m.nrows();
    let dim = 1usize << q;
    let mut out = DMatrix::<C64>::identity(dim, dim);
    for i in 0..q {
        for j in 0..q {
            out[(1 << i, 1 << j)] = m[(i, j)];
        }
    }
    DenseOperator::new("onehot", out)
}

/// Collision unitary on `H_V (x) C^2`: the one-hot extension of the block
/// encoding of `D` (identity on non-one-hot velocity states).
pub fn collision_unitary(op: &DenoiseOperator) -> Result<(DenseOperator, BlockEncoding), CircuitError> {
    let enc = svd_block_encode(op.matrix(), None)?;
    let q = op.q();
    check_cap(q + 1, DEFAULT_QUBIT_CAP)?;
    let dim = 1usize << (q + 1);
    let mut m = DMatrix::<C64>::identity(dim, dim);
    for i in 0..q {
        for a in 0..2 {
            for j in 0..q {
                for b in 0..2 {
                    m[(((1 << i) << 1) | a, ((1 << j) << 1) | b)] = enc.unitary.matrix[(2 * i + a, 2 * j + b)];
                }
            }
        }
    }
    Ok((DenseOperator::new("U_D", m), enc))
}

/// The three factors `(U (x) H)`, `U_Sigma`, `(V^dagger (x) H)` as one-hot
/// extensions on `H_V (x) C^2`, for checking the factored form directly.
pub fn collision_unitary_factors(enc: &BlockEncoding) -> (DenseOperator, DenseOperator, DenseOperator) {
    let had = hadamard();
    let u = onehot_extend(&real_to_complex(&enc.u)).matrix;
    let vt = onehot_extend(&real_to_complex(&enc.v.transpose())).matrix;
    let q = enc.u.nrows();
    let dim = 1usize << (q + 1);
    let mut diag = DVector::from_element(dim, ONE);
    for j in 0..q {
        diag[(1 << j) << 1] = enc.phases[2 * j];
        diag[((1 << j) << 1) | 1] = enc.phases[2 * j + 1];
    }
    (
        DenseOperator::new("U (x) H", u.kronecker(&had)),
        DenseOperator::new("U_Sigma", DMatrix::from_diagonal(&diag)),
        DenseOperator::new("V^dagger (x) H", vt.kronecker(&had)),
    )
}

// ---------------------------------------------------------------------------
// Givens rotations and the Clements decomposition

/// Rotation by `theta` in the plane of consecutive basis elements `(m, m+1)`:
/// `[[cos, -sin], [sin, cos]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GivensRotation {
    pub theta: f64,
    pub m: usize,
    pub n: usize,
}

impl GivensRotation {
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::identity(self.n, self.n);
        let (s, c) = self.theta.sin_cos();
        g[(self.m, self.m)] = c;
        g[(self.m, self.m + 1)] = -s;
        g[(self.m + 1, self.m)] = s;
        g[(self.m + 1, self.m + 1)] = c;
        g
    }

    fn left_mul(&self, a: &mut DMatrix<f64>) {
        let (s, c) = self.theta.sin_cos();
        for col in 0..a.ncols() {
            let (x, y) = (a[(self.m, col)], a[(self.m + 1, col)]);
            a[(self.m, col)] = c * x - s * y;
            a[(self.m + 1, col)] = s * x + c * y;
        }
    }

    fn right_mul(&self, a: &mut DMatrix<f64>) {
        let (s, c) = self.theta.sin_cos();
        for row in 0..a.nrows() {
            let (x, y) = (a[(row, self.m)], a[(row, self.m + 1)]);
            a[(row, self.m)] = c * x + s * y;
            a[(row, self.m + 1)] = -s * x + c * y;
        }
    }
}

/// `O = G[0] G[1] ... G[K-1]`; circuits apply `G[K-1]` first.
#[derive(Debug, Clone, Serialize)]
pub struct ClementsDecomposition {
    pub n: usize,
    pub rotations: Vec<GivensRotation>,
    /// Brickwork layers in application order; entries index `rotations`.
    pub layers: Vec<Vec<usize>>,
}

impl ClementsDecomposition {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut o = DMatrix::identity(self.n, self.n);
        for g in self.rotations.iter().rev() {
            g.left_mul(&mut o);
        }
        o
    }
}

fn wrap_angle(t: f64) -> f64 {
    let mut t = t % (2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    } else if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

pub fn clements_decompose(o: &DMatrix<f64>) -> Result<ClementsDecomposition, CircuitError> {
    let n = o.nrows();
    if !o.is_square() || n == 0 {
        return Err(CircuitError::Dimension("Clements needs a nonempty square matrix".into()));
    }
    let residual = (o.transpose() * o - DMatrix::identity(n, n)).amax();
    if residual > 1e-10 {
        return Err(CircuitError::NonOrthogonal { residual });
    }
    let mut a = o.clone();
    let mut lefts = Vec::new();
    let mut rights = Vec::new();
    for i in 0..n.saturating_sub(1) {
        if i % 2 == 0 {
            for j in 0..=i {
                let (r, m) = (n - 1 - j, i - j);
                let (x, y) = (a[(r, m)], a[(r, m + 1)]);
                let g = GivensRotation { theta: (-x).atan2(y), m, n };
                g.right_mul(&mut a);
                rights.push(g);
            }
        } else {
            for j in 1..=i + 1 {
                let (r, col) = (n + j - i - 2, j - 1);
                let m = r - 1;
                let (x, y) = (a[(m, col)], a[(r, col)]);
                let g = GivensRotation { theta: (-y).atan2(x), m, n };
                g.left_mul(&mut a);
                lefts.push(g);
            }
        }
    }
    // L_K..L_1 O R_1..R_M = diag(d)  =>  O = L_1^T..L_K^T diag(d) R_M^T..R_1^T
    let d: Vec<f64> = (0..n).map(|k| a[(k, k)].signum()).collect();
    if d.iter().filter(|&&x| x < 0.0).count() % 2 == 1 {
        return Err(CircuitError::Improper);
    }
    let mut rots: Vec<GivensRotation> = lefts
        .iter()
        .map(|g| GivensRotation { theta: -g.theta, ..*g })
        .collect();
    // move diag(d) to the front
    for g in rots.iter_mut() {
        if d[g.m] != d[g.m + 1] {
            g.theta = -g.theta;
        }
    }
    rots.extend(rights.iter().rev().map(|g| GivensRotation { theta: -g.theta, ..*g }));
    // diag(d) = prod_k P_k^{e_k}, P_k = -1 on (k, k+1); absorb each into the
    // first rotation on that pair
    let mut parity = false;
    for k in 0..n.saturating_sub(1) {
        parity ^= d[k] < 0.0;
        if !parity {
            continue;
        }
        for g in rots.iter_mut() {
            if g.m == k {
                g.theta += PI;
                break;
            }
            if g.m + 1 == k || g.m == k + 1 {
                g.theta = -g.theta;
            }
        }
    }
    for g in rots.iter_mut() {
        g.theta = wrap_angle(g.theta);
    }
    let layers = brickwork_layers(&rots, n);
    Ok(ClementsDecomposition { n, rotations: rots, layers })
}

fn brickwork_layers(rots: &[GivensRotation], n: usize) -> Vec<Vec<usize>> {
    let mut next_free = vec![0usize; n];
    let mut layers: Vec<Vec<usize>> = Vec::new();
    for k in (0..rots.len()).rev() {
        let m = rots[k].m;
        let layer = next_free[m].max(next_free[m + 1]);
        if layers.len() <= layer {
            layers.resize(layer + 1, Vec::new());
        }
        layers[layer].push(k);
        next_free[m] = layer + 1;
        next_free[m + 1] = layer + 1;
    }
    layers
}

/// Clements decompositions of the two basis changes of a projector's block
/// encoding: `q(q-1)` rotations in total.
pub fn collision_givens(enc: &BlockEncoding) -> Result<(ClementsDecomposition, ClementsDecomposition), CircuitError> {
    Ok((clements_decompose(&enc.u)?, clements_decompose(&enc.v.transpose())?))
}

// ---------------------------------------------------------------------------
// Structured grid circuits

fn check_cap(needed: usize, cap: usize) -> Result<(), CircuitError> {
    if needed > cap {
        return Err(CircuitError::QubitCap { needed, cap });
    }
    Ok(())
}

/// Register layout of domain, one-hot velocity and ancilla qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub grid: Grid,
    pub q: usize,
    pub n_anc: usize,
    axis_bits: Vec<usize>,
}

impl Layout {
    pub fn new(grid: &Grid, q: usize, n_anc: usize, cap: usize) -> Result<Self, CircuitError> {
        let mut axis_bits = Vec::new();
        for &l in grid.dims() {
            if !l.is_power_of_two() {
                return Err(CircuitError::NotPowerOfTwo(l));
            }
            axis_bits.push(l.trailing_zeros() as usize);
        }
        let layout = Self {
            grid: grid.clone(),
            q,
            n_anc,
            axis_bits,
        };
        check_cap(layout.qubits(), cap)?;
        Ok(layout)
    }

    pub fn domain_bits(&self) -> usize {
        self.axis_bits.iter().sum()
    }

    pub fn qubits(&self) -> usize {
        self.domain_bits() + self.q + self.n_anc
    }

    pub fn dim(&self) -> usize {
        1usize << self.qubits()
    }

    #[inline]
    pub fn index(&self, node: usize, vel: usize, anc: usize) -> usize {
        ((node << self.q | vel) << self.n_anc) | anc
    }

    #[inline]
    pub fn split(&self, k: usize) -> (usize, usize, usize) {
        let anc = k & ((1 << self.n_anc) - 1);
        let rest = k >> self.n_anc;
        (rest >> self.q, rest & ((1 << self.q) - 1), anc)
    }
}

/// A gate of a structured circuit.
#[derive(Debug, Clone)]
pub enum Gate {
    /// `|k> -> |perm[k]>`.
    Permutation(Vec<u32>),
    /// `M` on the one-hot velocity states (identity elsewhere), applied
    /// where ancilla bit `control.0` equals `control.1` (always if `None`).
    OneHot {
        m: DMatrix<f64>,
        control: Option<(usize, bool)>,
    },
}

#[derive(Debug, Clone)]
pub struct Circuit {
    pub layout: Layout,
    pub gates: Vec<(String, Gate)>,
}

impl Circuit {
    pub fn new(layout: Layout) -> Self {
        Self { layout, gates: Vec::new() }
    }

    pub fn push(&mut self, label: impl Into<String>, gate: Gate) {
        self.gates.push((label.into(), gate));
    }

    pub fn extend(&mut self, other: &Circuit) {
        assert_eq!(self.layout, other.layout);
        self.gates.extend(other.gates.iter().cloned());
    }

    pub fn apply(&self, state: &StateVector) -> StateVector {
        let mut v = state.amps.clone();
        let mut w = DVector::from_element(v.len(), ZERO);
        for (_, g) in &self.gates {
            match g {
                Gate::Permutation(p) => {
                    for (k, &t) in p.iter().enumerate() {
                        w[t as usize] = v[k];
                    }
                    std::mem::swap(&mut v, &mut w);
                }
                Gate::OneHot { m, control } => self.apply_onehot(&mut v, m, *control),
            }
        }
        StateVector { amps: v }
    }

    fn apply_onehot(&self, v: &mut DVector<C64>, m: &DMatrix<f64>, control: Option<(usize, bool)>) {
        let l = &self.layout;
        let q = l.q;
        let mut buf = vec![ZERO; q];
        for node in 0..l.grid.nodes() {
            for anc in 0..1usize << l.n_anc {
                if let Some((bit, val)) = control {
                    if ((anc >> bit) & 1 == 1) != val {
                        continue;
                    }
                }
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = v[l.index(node, 1 << i, anc)];
                }
                for i in 0..q {
                    let mut s = ZERO;
                    for j in 0..q {
                        s += buf[j] * m[(i, j)];
                    }
                    v[l.index(node, 1 << i, anc)] = s;
                }
            }
        }
    }

    /// Dense matrix by applying the circuit to every basis state.
    pub fn to_dense(&self, label: &str) -> Result<DenseOperator, CircuitError> {
        let dim = self.layout.dim();
        check_cap(self.layout.qubits(), 12)?;
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for k in 0..dim {
            let col = self.apply(&StateVector::basis(dim, k));
            m.set_column(k, &col.amps);
        }
        Ok(DenseOperator::new(label, m))
    }

    pub fn inverse(&self) -> Circuit {
        let mut c = Circuit::new(self.layout.clone());
        for (label, g) in self.gates.iter().rev() {
            let inv = match g {
                Gate::Permutation(p) => {
                    let mut inv = vec![0u32; p.len()];
                    for (k, &t) in p.iter().enumerate() {
                        inv[t as usize] = k as u32;
                    }
                    Gate::Permutation(inv)
                }
                Gate::OneHot { m, control } => Gate::OneHot {
                    m: m.transpose(),
                    control: *control,
                },
            };
            c.push(format!("{label}^dagger"), inv);
        }
        c
    }
}

fn permutation_gate<F: Fn(usize) -> usize>(layout: &Layout, f: F) -> Gate {
    Gate::Permutation((0..layout.dim()).map(|k| f(k) as u32).collect())
}

fn shift_node(grid: &Grid, node: usize, c: &[i32]) -> usize {
    grid.shifted(node, c)
}

/// Direct streaming `|x>|b> -> |x + sum_i b_i c_i>|b>`: the product of
/// `ADD(c_i)` controlled on `V_i`, which on one-hot states is `|x + c_i>|e_i>`.
pub fn direct_streaming(layout: &Layout, lat: &LatticeModel) -> Gate {
    let d = lat.dim;
    permutation_gate(layout, |k| {
        let (node, vel, anc) = layout.split(k);
        let mut c = vec![0i32; d];
        for i in 0..lat.q {
            if vel >> i & 1 == 1 {
                for (ck, &vk) in c.iter_mut().zip(lat.velocity(i)) {
                    *ck += vk;
                }
            }
        }
        layout.index(shift_node(&layout.grid, node, &c), vel, anc)
    })
}

/// Streaming as a product of controlled unit shifts over the `2d` axis
/// directions: per direction, XOR the matching velocity qubits into ancilla
/// bit `anc_bit`, shift the domain by one step where it is set, uncompute.
pub fn streaming_unitary(grid: &Grid, lat: &LatticeModel, cap: usize) -> Result<Circuit, CircuitError> {
    let layout = Layout::new(grid, lat.q, 1, cap)?;
    let mut c = Circuit::new(layout.clone());
    append_streaming(&mut c, lat, 0);
    Ok(c)
}

fn append_streaming(c: &mut Circuit, lat: &LatticeModel, anc_bit: usize) {
    let layout = c.layout.clone();
    let d = lat.dim;
    for axis in 0..d {
        for sign in [1i32, -1] {
            let members: usize = (0..lat.q)
                .filter(|&i| lat.velocity(i)[axis] * sign > 0)
                .map(|i| 1usize << i)
                .sum();
            let parity = permutation_gate(&layout, |k| {
                let (node, vel, anc) = layout.split(k);
                let bit = ((vel & members).count_ones() & 1) as usize;
                layout.index(node, vel, anc ^ (bit << anc_bit))
            });
            let mut step = vec![0i32; d];
            step[axis] = sign;
            let add = permutation_gate(&layout, |k| {
                let (node, vel, anc) = layout.split(k);
                if anc >> anc_bit & 1 == 1 {
                    layout.index(shift_node(&layout.grid, node, &step), vel, anc)
                } else {
                    k
                }
            });
            let dir = format!("{}{}", if sign > 0 { '+' } else { '-' }, ["x", "y", "z"][axis]);
            c.push(format!("CNOT parity {dir}"), parity.clone());
            c.push(format!("controlled ADD {dir}"), add);
            c.push(format!("CNOT uncompute {dir}"), parity);
        }
    }
}

/// Velocity reversal `|e_i> -> |e_ibar>` as SWAPs of qubit pairs `(i, ibar)`.
pub fn reversal_pairs(lat: &LatticeModel) -> Vec<(usize, usize)> {
    (0..lat.q).filter(|&i| lat.opposite(i) > i).map(|i| (i, lat.opposite(i))).collect()
}

fn reverse_bits(vel: usize, pairs: &[(usize, usize)]) -> usize {
    let mut out = vel;
    for &(a, b) in pairs {
        let (ba, bb) = (vel >> a & 1, vel >> b & 1);
        out &= !((1 << a) | (1 << b));
        out |= (ba << b) | (bb << a);
    }
    out
}

/// Dense reversal operator on the `2^q` velocity register.
pub fn reversal_unitary(lat: &LatticeModel) -> DenseOperator {
    let pairs = reversal_pairs(lat);
    let dim = 1usize << lat.q;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for k in 0..dim {
        m[(reverse_bits(k, &pairs), k)] = ONE;
    }
    DenseOperator::new("R", m)
}

/// Full QLBM step with bounce-back on a one-ancilla layout (ancilla `B`
/// holds `is_solid`). `c` is the collision unitary's action on the one-hot
/// velocity states.
pub fn bounce_back_unitary(
    scheme: BounceBack,
    grid: &Grid,
    lat: &LatticeModel,
    mask: &SolidMask,
    c: &DMatrix<f64>,
    cap: usize,
) -> Result<Circuit, CircuitError> {
    if mask.grid() != grid {
        return Err(CircuitError::Dimension("mask and grid differ".into()));
    }
    if c.nrows() != lat.q || c.ncols() != lat.q {
        return Err(CircuitError::Dimension("collision block must be q x q".into()));
    }
    let layout = Layout::new(grid, lat.q, 1, cap)?;
    let s = direct_streaming(&layout, lat);
    let s_inv = {
        let mut tmp = Circuit::new(layout.clone());
        tmp.push("S", s.clone());
        tmp.inverse().gates.remove(0).1
    };
    let query = permutation_gate(&layout, |k| {
        let (node, vel, anc) = layout.split(k);
        layout.index(node, vel, anc ^ usize::from(mask.is_solid(node)))
    });
    let pairs = reversal_pairs(lat);
    let reverse_if_b = permutation_gate(&layout, |k| {
        let (node, vel, anc) = layout.split(k);
        if anc & 1 == 1 {
            layout.index(node, reverse_bits(vel, &pairs), anc)
        } else {
            k
        }
    });
    let mut circ = Circuit::new(layout.clone());
    match scheme {
        BounceBack::FullWay => {
            circ.push("S", s);
            circ.push("Q", query.clone());
            circ.push("C if B=0", Gate::OneHot { m: c.clone(), control: Some((0, false)) });
            circ.push("R if B=1", reverse_if_b);
            circ.push("Q^dagger", query);
        }
        BounceBack::HalfWay => {
            let s_inv_if_0 = match &s_inv {
                Gate::Permutation(p) => Gate::Permutation(
                    p.iter()
                        .enumerate()
                        .map(|(k, &t)| if k & 1 == 0 { t } else { k as u32 })
                        .collect(),
                ),
                _ => unreachable!("streaming is a permutation"),
            };
            circ.push("S", s.clone());
            circ.push("Q", query.clone());
            circ.push("S^dagger if B=0", s_inv_if_0);
            circ.push("R if B=1", reverse_if_b);
            circ.push("Q^dagger", query);
            circ.push("S", s);
            circ.push("C", Gate::OneHot { m: c.clone(), control: None });
        }
    }
    Ok(circ)
}

/// Largest deviation of the bounce-back step from its action equations over
/// every fluid node `x` and direction `i`:
/// FWBB: `w |x+c_i>|e_ibar> + (1-w) |x+c_i> C|e_i>`;
/// HWBB: `w |x> C|e_ibar> + (1-w) |x+c_i> C|e_i>`, with `w = is_solid(x + c_i)`.
pub fn bounce_back_action_residual(
    circ: &Circuit,
    scheme: BounceBack,
    lat: &LatticeModel,
    mask: &SolidMask,
    c: &DMatrix<f64>,
) -> f64 {
    let l = &circ.layout;
    let dim = l.dim();
    let mut worst: f64 = 0.0;
    for x in 0..l.grid.nodes() {
        if mask.is_solid(x) {
            continue;
        }
        for i in 0..lat.q {
            let out = circ.apply(&StateVector::basis(dim, l.index(x, 1 << i, 0)));
            let xc = l.grid.shifted(x, lat.velocity(i));
            let w = mask.is_solid(xc);
            let ib = lat.opposite(i);
            let mut expect = DVector::from_element(dim, ZERO);
            let mut put_c = |node: usize, col: usize| {
                for j in 0..lat.q {
                    expect[l.index(node, 1 << j, 0)] += C64::new(c[(j, col)], 0.0);
                }
            };
            match (scheme, w) {
                (BounceBack::FullWay, true) => expect[l.index(xc, 1 << ib, 0)] = ONE,
                (BounceBack::HalfWay, true) => put_c(x, ib),
                (_, false) => put_c(xc, i),
            }
            worst = worst.max((out.amps - expect).norm());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Double-bracket projection

fn hermitian_exp(gen: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    // exp(-i t G) for Hermitian G
    let eig = SymmetricEigen::new(gen.clone());
    let v = &eig.eigenvectors;
    let phases = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -t * l)));
    v * DMatrix::from_diagonal(&phases) * v.adjoint()
}

/// `exp(s W)` for anti-Hermitian `W`, through the Hermitian `i W`.
pub fn antihermitian_exp(w: &DMatrix<C64>, s: f64) -> DMatrix<C64> {
    let gen = w * C64::new(0.0, 1.0);
    hermitian_exp(&gen, s)
}

#[derive(Debug, Clone)]
pub struct DoubleBracketStep {
    pub h: DMatrix<C64>,
    pub p: f64,
    pub s: f64,
    pub unitary: DMatrix<C64>,
    pub output: StateVector,
}

/// `s_psi = -arccos(-sqrt(p)) / sqrt(p (1 - p))`.
pub fn double_bracket_time(p: f64) -> f64 {
    -(-p.sqrt()).acos() / (p * (1.0 - p)).sqrt()
}

/// `U_psi = exp(s_psi [|psi><psi|, H])`, `H = I - D`, applied to `psi`
/// (normalized first). The output equals `D psi / |D psi|` up to a global
/// phase (it is `-1` for this choice of `s_psi`).
pub fn double_bracket_project(psi: &StateVector, d: &DMatrix<f64>) -> Result<DoubleBracketStep, CircuitError> {
    let q = d.nrows();
    if psi.dim() != q {
        return Err(CircuitError::Dimension("state and projector sizes differ".into()));
    }
    let psi = psi.normalized();
    let dc = real_to_complex(d);
    let h = DMatrix::<C64>::identity(q, q) - &dc;
    let p = psi.amps.dotc(&(&dc * &psi.amps)).re;
    if p <= 1e-12 {
        return Err(CircuitError::Degenerate { p });
    }
    if p >= 1.0 - 1e-12 {
        return Ok(DoubleBracketStep {
            h,
            p,
            s: 0.0,
            unitary: DMatrix::identity(q, q),
            output: psi,
        });
    }
    let s = double_bracket_time(p);
    let rho = &psi.amps * psi.amps.adjoint();
    let w = &rho * &h - &h * &rho;
    let unitary = antihermitian_exp(&w, s);
    let output = StateVector {
        amps: &unitary * &psi.amps,
    };
    Ok(DoubleBracketStep { h, p, s, unitary, output })
}

/// `N` group-commutator blocks
/// `e^{i s' |psi><psi|} e^{i s' H} e^{-i s' |psi><psi|} e^{-i s' H}` with
/// `s' = sqrt(|s_psi| / N)`; returns the state and its distance to the exact
/// double-bracket output.
pub fn group_commutator_approx(psi: &StateVector, d: &DMatrix<f64>, n: usize) -> Result<(StateVector, f64), CircuitError> {
    assert!(n >= 1);
    let exact = double_bracket_project(psi, d)?;
    let psi = psi.normalized();
    let sp = (exact.s.abs() / n as f64).sqrt();
    let rho = &psi.amps * psi.amps.adjoint();
    // e^{+i t G} = hermitian_exp(G, -t)
    let a = hermitian_exp(&rho, -sp);
    let b = hermitian_exp(&exact.h, -sp);
    let a_inv = hermitian_exp(&rho, sp);
    let b_inv = hermitian_exp(&exact.h, sp);
    let block = a * b * a_inv * b_inv;
    let mut v = psi.amps.clone();
    for _ in 0..n {
        v = &block * v;
    }
    let out = StateVector { amps: v };
    let err = out.distance(&exact.output);
    Ok((out, err))
}

fn swap_operator(q: usize) -> DMatrix<C64> {
    let mut s = DMatrix::from_element(q * q, q * q, ZERO);
    for a in 0..q {
        for b in 0..q {
            s[(b * q + a, a * q + b)] = ONE;
        }
    }
    s
}

fn partial_trace_second(m: &DMatrix<C64>, q: usize) -> DMatrix<C64> {
    DMatrix::from_fn(q, q, |i, j| (0..q).map(|k| m[(i * q + k, j * q + k)]).sum())
}

/// Trace norm of a Hermitian matrix.
pub fn trace_norm(m: &DMatrix<C64>) -> f64 {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(herm).eigenvalues.iter().map(|l| l.abs()).sum()
}

/// `T[sigma] = Tr_2[e^{i dt SWAP} (sigma (x) |psi><psi|) e^{-i dt SWAP}]` and
/// its trace distance to `e^{i dt |psi><psi|} sigma e^{-i dt |psi><psi|}`.
pub fn swap_channel_phase(sigma: &DMatrix<C64>, psi: &StateVector, dt: f64) -> (DMatrix<C64>, f64) {
    let q = sigma.nrows();
    let psi = psi.normalized();
    let rho = &psi.amps * psi.amps.adjoint();
    let swap = swap_operator(q);
    // SWAP^2 = I, so e^{i dt SWAP} = cos(dt) I + i sin(dt) SWAP
    let e = DMatrix::<C64>::identity(q * q, q * q) * C64::new(dt.cos(), 0.0) + swap * C64::new(0.0, dt.sin());
    let joint = sigma.kronecker(&rho);
    let t = partial_trace_second(&(&e * joint * e.adjoint()), q);
    let u = hermitian_exp(&rho, -dt);
    let target = &u * sigma * u.adjoint();
    let err = trace_norm(&(&t - target));
    (t, err)
}

/// `H = sum_ij (delta_ij - D_ij) sigma+_i sigma-_j` on `q` qubits.
pub fn two_body_hamiltonian(d: &DMatrix<f64>) -> Result<DenseOperator, CircuitError> {
    let q = d.nrows();
    check_cap(q, DEFAULT_QUBIT_CAP)?;
    let dim = 1usize << q;
    let mut m = DMatrix::from_element(dim, dim, ZERO);
    for b in 0..dim {
        for j in 0..q {
            if b >> j & 1 == 0 {
                continue;
            }
            let lowered = b & !(1 << j);
            for i in 0..q {
                if lowered >> i & 1 == 1 {
                    continue;
                }
                let coeff = f64::from(u8::from(i == j)) - d[(i, j)];
                m[(lowered | (1 << i), b)] += C64::new(coeff, 0.0);
            }
        }
    }
    Ok(DenseOperator::new("H_2body", m))
}

/// Restriction of an operator on `2^q` dims to the one-hot states.
pub fn onehot_restriction(m: &DMatrix<C64>, q: usize) -> DMatrix<C64> {
    DMatrix::from_fn(q, q, |i, j| m[(1 << i, 1 << j)])
}

// ---------------------------------------------------------------------------
// Reporting

#[derive(Debug, Clone, Serialize)]
pub struct CircuitReportEntry {
    pub label: String,
    pub dim: usize,
    pub qubits: Option<usize>,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rotations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub non_unit_phases: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::{denoise_ade, denoise_hydro, HermiteBasis};
    use crate::lattice::{make_lattice, LatticeId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cmax(m: DMatrix<C64>) -> f64 {
        m.iter().fold(0.0, |a, x| a.max(x.norm()))
    }

    fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for k in 0..n {
            if r[(k, k)] < 0.0 {
                let c = -q.column(k).clone_owned();
                q.set_column(k, &c);
            }
        }
        q
    }

    fn proper(mut o: DMatrix<f64>) -> DMatrix<f64> {
        if o.determinant() < 0.0 {
            let c = -o.column(0).clone_owned();
            o.set_column(0, &c);
        }
        o
    }

    #[test]
    fn block_encoding_trivial_cases() {
        let id = DMatrix::<f64>::identity(3, 3);
        let e = svd_block_encode(&id, None).unwrap();
        assert!(e.phases.iter().all(|p| (*p - ONE).norm() < 1e-15));
        assert!((e.top_left_block() - real_to_complex(&id)).norm() < 1e-12);
        let z = DMatrix::<f64>::zeros(3, 3);
        let e = svd_block_encode(&z, None).unwrap();
        assert!(e.phases.iter().all(|p| (p.im.abs() - 1.0).abs() < 1e-15 && p.re == 0.0));
        assert!(e.top_left_block().norm() < 1e-12);
        assert!(matches!(svd_block_encode(&(id * 2.0), None), Err(CircuitError::Normalization { .. })));
        let e = svd_block_encode(&(DMatrix::<f64>::identity(2, 2) * 2.0), Some(2.0)).unwrap();
        assert!((e.top_left_block() - real_to_complex(&(DMatrix::identity(2, 2) * 2.0))).norm() < 1e-12);
    }

    #[test]
    fn block_encoding_of_hydro_projector() {
        let lat = make_lattice(LatticeId::D2Q9);
        let b = HermiteBasis::new(&lat);
        let op = denoise_hydro(&[0.05, 0.02], &b).unwrap();
        let e = svd_block_encode(op.matrix(), None).unwrap();
        assert!(e.unitary.unitarity_residual() < 1e-12);
        assert!(cmax(e.top_left_block() - real_to_complex(op.matrix())) < 1e-12);
        assert_eq!(e.non_unit_phases(), 12);
        assert!(e.phases.iter().all(|p| (*p - ONE).norm() < 1e-9 || (p.re.abs() < 1e-9 && (p.im.abs() - 1.0).abs() < 1e-9)));
        // null space last
        assert!(e.sigma[..3].iter().all(|&s| (s - 1.0).abs() < 1e-12));
        assert!(e.sigma[3..].iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn general_matrix_block_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.4..0.4));
        let alpha = a.clone().singular_values().max() * 1.5;
        let e = svd_block_encode(&a, Some(alpha)).unwrap();
        assert!(cmax(e.top_left_block() - real_to_complex(&a)) < 1e-12);
        assert!(e.unitary.unitarity_residual() < 1e-12);
    }

    #[test]
    fn onehot_extension_properties() {
        let id = onehot_extend(&DMatrix::identity(3, 3));
        assert_eq!(id.matrix, DMatrix::identity(8, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let o = random_orthogonal(4, &mut rng);
        let ext = onehot_extend(&real_to_complex(&o));
        assert!(ext.unitarity_residual() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(ext.matrix[(1 << i, 1 << j)].re, o[(i, j)]);
            }
        }
    }

    #[test]
    fn collision_unitary_matches_factors_and_projector() {
        let lat = make_lattice(LatticeId::D1Q3);
        let b = HermiteBasis::new(&lat);
        let op = denoise_ade(&[0.0], &b);
        let (u, enc) = collision_unitary(&op).unwrap();
        assert!(u.unitarity_residual() < 1e-12);
        let (f1, f2, f3) = collision_unitary_factors(&enc);
        assert!(cmax(&f1.matrix * &f2.matrix * &f3.matrix - &u.matrix) < 1e-12);
        for i in 0..3 {
            let out = u.apply(&StateVector::basis(16, (1 << i) << 1));
            let p0: f64 = (0..8).map(|v| out.amps[v << 1].norm_sqr()).sum();
            assert!((p0 - lat.weight(i)).abs() < 1e-12);
            let p1: f64 = (0..8).map(|v| out.amps[(v << 1) | 1].norm_sqr()).sum();
            assert!((p1 - (1.0 - lat.weight(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn clements_examples() {
        let t = 0.7;
        let o = GivensRotation { theta: t, m: 0, n: 2 }.matrix();
        let dec = clements_decompose(&o).unwrap();
        assert_eq!(dec.rotations.len(), 1);
        assert!((dec.rotations[0].theta - t).abs() < 1e-12);
        let dec = clements_decompose(&DMatrix::identity(5, 5)).unwrap();
        assert_eq!(dec.rotations.len(), 10);
        for g in &dec.rotations {
            let r = g.theta.rem_euclid(PI);
            assert!(r.min(PI - r) < 1e-12, "{}", g.theta);
        }
        assert!((dec.reconstruct() - DMatrix::identity(5, 5)).amax() < 1e-12);
        let mut refl = DMatrix::<f64>::identity(3, 3);
        refl[(0, 0)] = -1.0;
        assert_eq!(clements_decompose(&refl).unwrap_err(), CircuitError::Improper);
        let bad = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(clements_decompose(&bad), Err(CircuitError::NonOrthogonal { .. })));
    }

    #[test]
    fn clements_random_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 3, 4, 7, 9] {
            for _ in 0..5 {
                let o = proper(random_orthogonal(n, &mut rng));
                let dec = clements_decompose(&o).unwrap();
                assert_eq!(dec.rotations.len(), n * (n - 1) / 2);
                assert!(dec.rotations.iter().all(|g| g.m + 1 < n));
                assert!((dec.reconstruct() - &o).amax() < 1e-10);
                let depth_ok = dec.layers.len() <= n.max(1);
                assert!(depth_ok, "n = {n}, depth = {}", dec.layers.len());
                let mut seen: Vec<usize> = dec.layers.iter().flatten().copied().collect();
                seen.sort();
                assert_eq!(seen, (0..dec.rotations.len()).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn givens_of_collision_rebuild_extension() {
        let lat = make_lattice(LatticeId::D1Q3);
        let b = HermiteBasis::new(&lat);
        let op = denoise_hydro(&[0.05], &b).unwrap();
        let enc = svd_block_encode(op.matrix(), None).unwrap();
        let (gu, gv) = collision_givens(&enc).unwrap();
        assert_eq!(gu.rotations.len() + gv.rotations.len(), 3 * 2);
        let mut prod = DMatrix::<C64>::identity(8, 8);
        for g in gu.rotations.iter() {
            prod *= onehot_extend(&real_to_complex(&g.matrix())).matrix;
        }
        assert!(cmax(prod - onehot_extend(&real_to_complex(&enc.u)).matrix) < 1e-12);
    }

    #[test]
    fn streaming_examples() {
        let lat = make_lattice(LatticeId::D1Q3);
        let grid = Grid::line(4);
        let c = streaming_unitary(&grid, &lat, DEFAULT_QUBIT_CAP).unwrap();
        let l = &c.layout;
        let out = c.apply(&StateVector::basis(l.dim(), l.index(0, 1 << 1, 0)));
        assert_eq!(out.amps[l.index(1, 1 << 1, 0)], ONE);
        for x in 0..4 {
            let out = c.apply(&StateVector::basis(l.dim(), l.index(x, 1, 0)));
            assert_eq!(out.amps[l.index(x, 1, 0)], ONE);
        }
        assert!(matches!(
            streaming_unitary(&Grid::line(6), &lat, 16),
            Err(CircuitError::NotPowerOfTwo(6))
        ));
        let d2 = make_lattice(LatticeId::D2Q9);
        assert_eq!(streaming_unitary(&Grid::plane(8, 8), &d2, 16).unwrap().layout.qubits(), 16);
        assert_eq!(
            streaming_unitary(&Grid::plane(8, 8), &d2, 15).unwrap_err(),
            CircuitError::QubitCap { needed: 16, cap: 15 }
        );
    }

    #[test]
    fn reversal_properties() {
        for (id, pairs) in [(LatticeId::D1Q3, 1), (LatticeId::D2Q9, 4)] {
            let lat = make_lattice(id);
            assert_eq!(reversal_pairs(&lat).len(), pairs);
            let r = reversal_unitary(&lat);
            let n = r.dim();
            assert!(cmax(&r.matrix * &r.matrix - DMatrix::<C64>::identity(n, n)) == 0.0);
            for i in 0..lat.q {
                assert_eq!(r.matrix[(1 << lat.opposite(i), 1 << i)], ONE);
            }
        }
    }

    #[test]
    fn bounce_back_small_dense() {
        let lat = make_lattice(LatticeId::D1Q3);
        let grid = Grid::line(4);
        let mask = SolidMask::new(grid.clone(), vec![false, false, true, false]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_orthogonal(3, &mut rng);
        for scheme in [BounceBack::FullWay, BounceBack::HalfWay] {
            let circ = bounce_back_unitary(scheme, &grid, &lat, &mask, &c, DEFAULT_QUBIT_CAP).unwrap();
            assert_eq!(circ.layout.dim(), 64);
            let dense = circ.to_dense("U_BB").unwrap();
            assert!(dense.unitarity_residual() < 1e-12);
            assert!(bounce_back_action_residual(&circ, scheme, &lat, &mask, &c) < 1e-12);
        }
    }

    #[test]
    fn double_bracket_closed_form() {
        let s = double_bracket_time(0.5);
        assert!((s + 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn double_bracket_projects() {
        let lat = make_lattice(LatticeId::D2Q9);
        let b = HermiteBasis::new(&lat);
        let op = denoise_hydro(&[0.03, -0.01], &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let psi = StateVector::from_real(&(0..9).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let step = double_bracket_project(&psi, op.matrix()).unwrap();
        let target = StateVector {
            amps: real_to_complex(op.matrix()) * psi.normalized().amps,
        }
        .normalized();
        assert!(step.output.distance_up_to_phase(&target) < 1e-10);
        // the phase is exactly -1
        assert!((step.output.amps.clone() + &target.amps).norm() < 1e-10);
        let inside = StateVector::from_real(b.h(&[0.03, -0.01]).as_slice());
        let st = double_bracket_project(&inside, op.matrix()).unwrap();
        assert!(st.output.distance(&inside.normalized()) < 1e-12);
    }

    #[test]
    fn swap_channel_trivial_cases() {
        let psi = StateVector::from_real(&[0.6, 0.8, 0.0]);
        let sigma = &psi.amps * psi.amps.adjoint();
        let (t, err) = swap_channel_phase(&sigma, &psi, 0.3);
        assert!((t - &sigma).norm() < 1e-14 && err < 1e-14);
        let other = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(0.5, 0.0), C64::new(0.3, 0.0), C64::new(0.2, 0.0)]));
        let (t, err) = swap_channel_phase(&other, &psi, 0.0);
        assert!((t - other).norm() < 1e-15 && err < 1e-15);
    }

    #[test]
    fn two_body_hamiltonian_properties() {
        let lat = make_lattice(LatticeId::D1Q3);
        let b = HermiteBasis::new(&lat);
        let op = denoise_hydro(&[0.02], &b).unwrap();
        let h = two_body_hamiltonian(op.matrix()).unwrap();
        let r = onehot_restriction(&h.matrix, 3);
        let expect = DMatrix::<f64>::identity(3, 3) - op.matrix();
        assert!(cmax(r - real_to_complex(&expect)) < 1e-15);
        assert!(h.matrix.column(0).iter().all(|x| *x == ZERO));
        let hid = two_body_hamiltonian(&DMatrix::identity(3, 3)).unwrap();
        assert!(onehot_restriction(&hid.matrix, 3).iter().all(|x| *x == ZERO));
    }
}
