//! Sequential vs rayon execution of the per-step kernels on a 256x256 D2Q9
//! Taylor-Green field.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qlbm::bench::analytic_taylor_green;
use qlbm::classical_lbm::{self, PopulationField};
use qlbm::denoise::{denoise_hydro, HermiteBasis};
use qlbm::grid::Propagator;
use qlbm::qlbm_core::{self, encode, Renorm};
use qlbm::{make_lattice, Exec, Grid, LatticeId};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn setup() -> PopulationField {
    let lat = Arc::new(make_lattice(LatticeId::D2Q9));
    let grid = Grid::plane(256, 256);
    let m = analytic_taylor_green(&grid, 0.05, 1.0, [1, 1], 1.0 / 6.0, 1.0 / 3.0, 0.0);
    PopulationField::from_macro(lat, &m, None).expect("low Mach field")
}

fn kernels(c: &mut Criterion) {
    let f0 = setup();
    let g0 = encode(&f0).expect("positive populations");
    let basis = HermiteBasis::new(f0.lattice());
    let op = denoise_hydro(&[0.0, 0.0], &basis).expect("projector");
    let prop = Propagator::periodic(f0.grid(), f0.lattice());

    let mut group = c.benchmark_group("bgk_collide");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            let mut f = f0.clone();
            b.iter(|| classical_lbm::collide_in_place(black_box(&mut f), 1.0, None, exec).unwrap());
        });
    }
    group.finish();

    let mut group = c.benchmark_group("qlbm_collide");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            let mut g = g0.clone();
            let mut aux = Vec::new();
            b.iter(|| qlbm_core::collide_in_place(black_box(&mut g), &op, Renorm::PerNode, None, exec, &mut aux).unwrap());
        });
    }
    group.finish();

    let mut group = c.benchmark_group("stream");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            let mut out = vec![0.0; f0.data().len()];
            b.iter(|| prop.apply(exec, black_box(f0.data()), &mut out));
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
