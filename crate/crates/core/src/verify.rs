//! Randomized verification suites over the lattice, denoising and circuit
//! layers, reported as named residual checks.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::circuits::{
    bounce_back_action_residual, bounce_back_unitary, clements_decompose, collision_givens, collision_unitary,
    collision_unitary_factors, direct_streaming, double_bracket_project, group_commutator_approx,
    onehot_restriction, streaming_unitary, svd_block_encode, swap_channel_phase, two_body_hamiltonian, Circuit,
    StateVector, DEFAULT_QUBIT_CAP,
};
use crate::denoise::{
    build_operator, check_equivariance, denoise_hydro, denoising_error_bound, hessian_norm_power,
    hessian_norm_sweep, HermiteBasis, Variant,
};
use crate::grid::{BounceBack, Grid, SolidMask};
use crate::lattice::{check_isotropy, make_lattice, symmetry_group, LatticeId, LatticeModel};

pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Accepted interval `[lo, hi]`.
    pub lo: f64,
    pub hi: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, hi: f64) -> Self {
        Self::within(name, value, f64::NEG_INFINITY, hi)
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            lo,
            hi,
            passed: value >= lo && value <= hi,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        if self.lo == f64::NEG_INFINITY {
            write!(f, "{status} {}: {:.3e} <= {:.1e}", self.name, self.value, self.hi)
        } else {
            write!(f, "{status} {}: {:.4} in [{}, {}]", self.name, self.value, self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Lattice,
    Denoise,
    Circuits,
    All,
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lattice" => Ok(Suite::Lattice),
            "denoise" => Ok(Suite::Denoise),
            "circuits" => Ok(Suite::Circuits),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite `{s}` (expected lattice, denoise, circuits or all)")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let mut checks = Vec::new();
    let name = match suite {
        Suite::Lattice => "lattice",
        Suite::Denoise => "denoise",
        Suite::Circuits => "circuits",
        Suite::All => "all",
    };
    if matches!(suite, Suite::Lattice | Suite::All) {
        checks.extend(lattice_checks());
    }
    if matches!(suite, Suite::Denoise | Suite::All) {
        checks.extend(projector_checks(100, seed));
        checks.push(quadratic_remainder_check(1000, seed).check());
        checks.push(distance_bound_check(200, seed).check());
    }
    if matches!(suite, Suite::Circuits | Suite::All) {
        checks.extend(circuit_checks(seed));
        checks.extend(double_bracket_checks(seed));
    }
    let passed = checks.iter().all(|c| c.passed);
    SuiteReport {
        suite: name.into(),
        seed,
        checks,
        passed,
    }
}

const LATTICES: [LatticeId; 2] = [LatticeId::D1Q3, LatticeId::D2Q9];

/// Uniform sample from the ball `|u| <= max`.
pub fn random_velocity(rng: &mut ChaCha8Rng, d: usize, max: f64) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-max..=max)).collect();
        if u.iter().map(|x| x * x).sum::<f64>() <= max * max {
            return u;
        }
    }
}

pub fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    v.normalize()
}

/// Haar-random orthogonal matrix with determinant +1.
pub fn random_rotation(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
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
    if q.determinant() < 0.0 {
        let c = -q.column(0).clone_owned();
        q.set_column(0, &c);
    }
    q
}

fn max_speed(lat: &LatticeModel) -> f64 {
    0.3 * lat.cs()
}

pub fn lattice_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for id in LATTICES {
        let lat = make_lattice(id);
        out.push(Check::at_most(format!("{id} isotropy residual"), check_isotropy(&lat).max(), 1e-14));
        let group = symmetry_group(&lat);
        let expected = if lat.dim == 1 { 2.0 } else { 8.0 };
        out.push(Check::within(format!("{id} symmetry group order"), group.len() as f64, expected, expected));
        let closed = group.iter().all(|a| group.iter().all(|b| group.contains(&a.compose(b))));
        out.push(Check::at_most(format!("{id} group closure failures"), f64::from(u8::from(!closed)), 0.0));
        let mut bad = 0usize;
        for g in &group {
            for i in 0..lat.q {
                let rc: Vec<i32> = g.rotation.iter().map(|row| row.iter().zip(lat.velocity(i)).map(|(a, b)| a * b).sum()).collect();
                if lat.velocity(g.perm[i]) != rc.as_slice() || lat.weight_exact(g.perm[i]) != lat.weight_exact(i) {
                    bad += 1;
                }
            }
        }
        out.push(Check::at_most(format!("{id} symmetry action mismatches"), bad as f64, 0.0));
        let inv = (0..lat.q).filter(|&i| lat.opposite(lat.opposite(i)) != i).count();
        out.push(Check::at_most(format!("{id} opposite involution failures"), inv as f64, 0.0));
    }
    out
}

/// Projector identities, tangent fixed points and equivariance over random
/// reference velocities for both lattices and both variants.
pub fn projector_checks(samples: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for id in LATTICES {
        let lat = make_lattice(id);
        let basis = HermiteBasis::new(&lat);
        let group = symmetry_group(&lat);
        for variant in [Variant::Hydro, Variant::Ade] {
            let (mut idem, mut sym, mut trace, mut fixed, mut equi) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let rank = match variant {
                Variant::Hydro => lat.dim + 1,
                Variant::Ade => 1,
            } as f64;
            for _ in 0..samples {
                let u = random_velocity(&mut rng, lat.dim, max_speed(&lat));
                let op = build_operator(variant, &u, &basis).expect("full-rank reference");
                let d = op.matrix();
                idem = idem.max((d * d - d).amax());
                sym = sym.max((d - d.transpose()).amax());
                trace = trace.max((d.trace() - rank).abs());
                let h = basis.h(&u);
                fixed = fixed.max((d * &h - &h).amax());
                if variant == Variant::Hydro {
                    let dh = basis.dh(&u);
                    fixed = fixed.max((d * &dh - &dh).amax());
                }
                for g in &group {
                    equi = equi.max(check_equivariance(variant, &basis, g, &u).expect("full-rank reference"));
                }
            }
            let tag = format!("{id} {variant:?}");
            out.push(Check::at_most(format!("{tag} |D^2 - D|"), idem, 1e-12));
            out.push(Check::at_most(format!("{tag} |D^T - D|"), sym, 1e-12));
            out.push(Check::at_most(format!("{tag} |tr D - rank|"), trace, 1e-12));
            out.push(Check::at_most(format!("{tag} tangent fixed-point residual"), fixed, 1e-12));
            out.push(Check::at_most(format!("{tag} equivariance residual"), equi, 1e-12));
        }
        let power = hessian_norm_power(&basis);
        let sweep = hessian_norm_sweep(&basis);
        out.push(Check::at_most(format!("{id} |H| power vs sweep"), (power - sweep).abs(), 1e-9));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderSummary {
    pub samples: usize,
    pub violations: usize,
    /// Largest `lhs - rhs`.
    pub worst_excess: f64,
    /// Largest `lhs / rhs`.
    pub worst_ratio: f64,
}

impl RemainderSummary {
    pub fn check(&self) -> Check {
        Check::at_most("hydro quadratic remainder bound violations", self.violations as f64, 0.0)
    }
}

/// `|(I - D(u_hat)) sqrt(rho) h(u)| <= (sqrt(rho)/2) |H|_2 |u - u_hat|^2`.
pub fn quadratic_remainder_check(samples: usize, seed: u64) -> RemainderSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x71);
    let mut s = RemainderSummary {
        samples,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
        worst_ratio: 0.0,
    };
    let bases: Vec<HermiteBasis> = LATTICES.iter().map(|&id| HermiteBasis::new(&make_lattice(id))).collect();
    for k in 0..samples {
        let basis = &bases[k % 2];
        let lat = make_lattice(LATTICES[k % 2]);
        let rho: f64 = rng.random_range(0.1..2.0);
        let u = random_velocity(&mut rng, lat.dim, max_speed(&lat));
        let u_hat = random_velocity(&mut rng, lat.dim, max_speed(&lat));
        let op = denoise_hydro(&u_hat, basis).expect("full-rank reference");
        let g = basis.h(&u) * rho.sqrt();
        let lhs = (&g - op.apply(&g)).norm();
        let du2: f64 = u.iter().zip(&u_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        let rhs = rho.sqrt() / 2.0 * basis.hessian_norm() * du2;
        s.worst_excess = s.worst_excess.max(lhs - rhs);
        if rhs > 0.0 {
            s.worst_ratio = s.worst_ratio.max(lhs / rhs);
        }
        if lhs > rhs + 1e-12 {
            s.violations += 1;
        }
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceBoundSummary {
    pub samples: usize,
    /// Samples where the Newton-Kantorovich condition holds.
    pub applicable: usize,
    pub violations_applicable: usize,
    pub violations_not_applicable: usize,
    pub oracle_failures: usize,
    /// Largest `measured / bound` over applicable samples.
    pub worst_ratio: f64,
}

impl DistanceBoundSummary {
    pub fn check(&self) -> Check {
        Check::at_most(
            "projection distance bound violations (NK applicable)",
            (self.violations_applicable + self.oracle_failures) as f64,
            0.0,
        )
    }
}

/// Bound on the manifold distance of `D(u_hat) g` for `g = sqrt(rho) h(u_hat)
/// + eps e`, `eps <= 0.05`, checked against the Newton oracle.
pub fn distance_bound_check(samples: usize, seed: u64) -> DistanceBoundSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x72);
    let mut s = DistanceBoundSummary {
        samples,
        applicable: 0,
        violations_applicable: 0,
        violations_not_applicable: 0,
        oracle_failures: 0,
        worst_ratio: 0.0,
    };
    let bases: Vec<HermiteBasis> = LATTICES.iter().map(|&id| HermiteBasis::new(&make_lattice(id))).collect();
    for k in 0..samples {
        let basis = &bases[k % 2];
        let lat = make_lattice(LATTICES[k % 2]);
        let rho: f64 = rng.random_range(0.5..1.5);
        let u_hat = random_velocity(&mut rng, lat.dim, max_speed(&lat));
        let eps = rng.random_range(0.0..=0.05);
        let g = basis.h(&u_hat) * rho.sqrt() + random_unit(&mut rng, lat.q) * eps;
        match denoising_error_bound(g.as_slice(), &u_hat, None, basis) {
            Ok(r) => match r.satisfied {
                Some(ok) => {
                    s.applicable += 1;
                    if r.bound > 0.0 {
                        s.worst_ratio = s.worst_ratio.max(r.measured / r.bound);
                    }
                    if !ok {
                        s.violations_applicable += 1;
                    }
                }
                None => {
                    if r.measured > r.bound {
                        s.violations_not_applicable += 1;
                    }
                }
            },
            Err(_) => s.oracle_failures += 1,
        }
    }
    s
}

/// Largest entrywise deviation between the streaming circuit and the direct
/// permutation over one-hot inputs (ancilla clear).
pub fn streaming_onehot_residual(grid: &Grid, lat: &LatticeModel) -> f64 {
    let circ = streaming_unitary(grid, lat, DEFAULT_QUBIT_CAP).expect("layout fits");
    let mut direct = Circuit::new(circ.layout.clone());
    direct.push("S", direct_streaming(&circ.layout, lat));
    let l = &circ.layout;
    let mut worst: f64 = 0.0;
    for x in 0..grid.nodes() {
        for i in 0..lat.q {
            let inp = StateVector::basis(l.dim(), l.index(x, 1 << i, 0));
            let a = circ.apply(&inp);
            let b = direct.apply(&inp);
            let diff = a.amps.iter().zip(b.amps.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            worst = worst.max(diff);
        }
    }
    worst
}

pub fn circuit_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x73);
    let mut out = Vec::new();
    let bases: Vec<HermiteBasis> = LATTICES.iter().map(|&id| HermiteBasis::new(&make_lattice(id))).collect();

    let (mut block, mut unit) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let basis = &bases[k % 2];
        let lat = make_lattice(LATTICES[k % 2]);
        let variant = if k % 4 < 2 { Variant::Hydro } else { Variant::Ade };
        let u = random_velocity(&mut rng, lat.dim, max_speed(&lat));
        let op = build_operator(variant, &u, basis).expect("full-rank reference");
        let enc = svd_block_encode(op.matrix(), None).expect("projector has unit norm");
        let diff = enc.top_left_block() - op.matrix().map(|x| C64::new(x, 0.0));
        block = block.max(diff.iter().map(|z| z.norm()).fold(0.0, f64::max));
        unit = unit.max(enc.unitary.unitarity_residual());
    }
    out.push(Check::at_most("block-encoding top-left residual (100 projectors)", block, 1e-12));
    out.push(Check::at_most("block-encoding unitarity residual", unit, 1e-12));

    let lat9 = make_lattice(LatticeId::D2Q9);
    let op = denoise_hydro(&random_velocity(&mut rng, 2, max_speed(&lat9)), &bases[1]).expect("full rank");
    let (ud, enc) = collision_unitary(&op).expect("fits cap");
    let (f1, f2, f3) = collision_unitary_factors(&enc);
    let prod = &f1.matrix * &f2.matrix * &f3.matrix - &ud.matrix;
    out.push(Check::at_most(
        "D2Q9 U_D vs (U x H) U_Sigma (V^T x H)",
        prod.iter().map(|z| z.norm()).fold(0.0, f64::max),
        1e-12,
    ));
    out.push(Check::within(
        "D2Q9 hydro non-unit phases",
        enc.non_unit_phases() as f64,
        2.0 * (9.0 - 3.0),
        2.0 * (9.0 - 3.0),
    ));
    let (gu, gv) = collision_givens(&enc).expect("proper rotations");
    let rebuilt = (gu.reconstruct() - &enc.u).amax().max((gv.reconstruct() - enc.v.transpose()).amax());
    out.push(Check::at_most("D2Q9 collision Givens reconstruction", rebuilt, 1e-10));
    out.push(Check::within(
        "D2Q9 collision Givens count",
        (gu.rotations.len() + gv.rotations.len()) as f64,
        72.0,
        72.0,
    ));

    let (mut recon, mut count_bad) = (0.0f64, 0usize);
    for _ in 0..20 {
        let o = random_rotation(&mut rng, 9);
        let dec = clements_decompose(&o).expect("proper rotation");
        if dec.rotations.len() != 36 {
            count_bad += 1;
        }
        recon = recon.max((dec.reconstruct() - &o).amax());
    }
    out.push(Check::at_most("Clements 9x9 reconstruction", recon, 1e-10));
    out.push(Check::at_most("Clements 9x9 rotation count != 36", count_bad as f64, 0.0));

    out.push(Check::at_most(
        "streaming D1Q3 L=8 vs direct permutation",
        streaming_onehot_residual(&Grid::line(8), &make_lattice(LatticeId::D1Q3)),
        0.0,
    ));
    out.push(Check::at_most(
        "streaming D2Q9 4x4 vs direct permutation",
        streaming_onehot_residual(&Grid::plane(4, 4), &lat9),
        0.0,
    ));

    let grid = Grid::plane(4, 4);
    let mut solid = vec![false; 16];
    solid[grid.index(1, 2)] = true;
    let mask = SolidMask::new(grid.clone(), solid).expect("fluid present");
    let c = random_rotation(&mut rng, 9);
    for scheme in [BounceBack::FullWay, BounceBack::HalfWay] {
        let circ = bounce_back_unitary(scheme, &grid, &lat9, &mask, &c, DEFAULT_QUBIT_CAP).expect("fits cap");
        out.push(Check::at_most(
            format!("{scheme:?} action equations, D2Q9 4x4 with obstacle"),
            bounce_back_action_residual(&circ, scheme, &lat9, &mask, &c),
            1e-12,
        ));
    }
    let lat3 = make_lattice(LatticeId::D1Q3);
    let line = Grid::line(4);
    let mask3 = SolidMask::new(line.clone(), vec![false, true, false, false]).expect("fluid present");
    let c3 = random_rotation(&mut rng, 3);
    for scheme in [BounceBack::FullWay, BounceBack::HalfWay] {
        let circ = bounce_back_unitary(scheme, &line, &lat3, &mask3, &c3, DEFAULT_QUBIT_CAP).expect("fits cap");
        let dense = circ.to_dense("U_BB").expect("small");
        out.push(Check::at_most(
            format!("{scheme:?} dense unitarity, D1Q3 L=4"),
            dense.unitarity_residual(),
            1e-12,
        ));
    }

    let op3 = denoise_hydro(&[0.04], &bases[0]).expect("full rank");
    let h = two_body_hamiltonian(op3.matrix()).expect("fits cap");
    let restricted = onehot_restriction(&h.matrix, 3);
    let expect = DMatrix::<f64>::identity(3, 3) - op3.matrix();
    let diff = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (restricted[(i, j)] - C64::new(expect[(i, j)], 0.0)).norm())
        .fold(0.0, f64::max);
    out.push(Check::at_most("two-body Hamiltonian one-hot restriction", diff, 1e-15));
    out
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn random_complex_state(rng: &mut ChaCha8Rng, n: usize) -> StateVector {
    StateVector {
        amps: DVector::from_fn(n, |_, _| {
            C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
        }),
    }
    .normalized()
}

pub const GROUP_COMMUTATOR_STEPS: [usize; 7] = [4, 8, 16, 32, 64, 128, 256];
pub const SWAP_TIMESTEPS: [f64; 5] = [0.1, 0.05, 0.025, 0.0125, 0.00625];

/// Errors of the group-commutator approximation for each `N` in
/// [`GROUP_COMMUTATOR_STEPS`].
pub fn group_commutator_errors(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x74);
    let basis = HermiteBasis::new(&make_lattice(LatticeId::D2Q9));
    let op = denoise_hydro(&random_velocity(&mut rng, 2, 0.1), &basis).expect("full rank");
    let psi = random_complex_state(&mut rng, 9);
    GROUP_COMMUTATOR_STEPS
        .iter()
        .map(|&n| group_commutator_approx(&psi, op.matrix(), n).expect("non-degenerate").1)
        .collect()
}

/// Trace-norm errors of the SWAP channel for each step in [`SWAP_TIMESTEPS`].
pub fn swap_channel_errors(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x75);
    let psi = random_complex_state(&mut rng, 9);
    let chi = random_complex_state(&mut rng, 9);
    let sigma = &chi.amps * chi.amps.adjoint();
    SWAP_TIMESTEPS.iter().map(|&dt| swap_channel_phase(&sigma, &psi, dt).1).collect()
}

pub fn double_bracket_checks(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x76);
    let bases: Vec<HermiteBasis> = LATTICES.iter().map(|&id| HermiteBasis::new(&make_lattice(id))).collect();
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let basis = &bases[k % 2];
        let lat = make_lattice(LATTICES[k % 2]);
        let variant = if k % 4 < 2 { Variant::Hydro } else { Variant::Ade };
        let op = build_operator(variant, &random_velocity(&mut rng, lat.dim, max_speed(&lat)), basis).expect("full rank");
        let psi = random_complex_state(&mut rng, lat.q);
        let step = double_bracket_project(&psi, op.matrix()).expect("generic state");
        let d = op.matrix().map(|x| C64::new(x, 0.0));
        let target = StateVector { amps: d * &psi.amps }.normalized();
        worst = worst.max(step.output.distance_up_to_phase(&target));
    }
    let ns: Vec<f64> = GROUP_COMMUTATOR_STEPS.iter().map(|&n| n as f64).collect();
    let dts = SWAP_TIMESTEPS.to_vec();
    vec![
        Check::at_most("double-bracket output vs D psi/|D psi| (up to phase)", worst, 1e-10),
        Check::within("group-commutator error slope in N", loglog_slope(&ns, &group_commutator_errors(seed)), -0.7, -0.3),
        Check::within("SWAP-channel error slope in dt", loglog_slope(&dts, &swap_channel_errors(seed)), 1.8, 2.2),
    ]
}
