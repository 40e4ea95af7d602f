use std::sync::Arc;

use oocgls::backend::{
    BackendError, Device, DeviceHandle, DeviceSpec, HostSlice, SimParams,
};
use oocgls::backend::{HostDevice, SimDevice};
use oocgls::clock::{VirtualClock, WallClock};
use oocgls::gls::{
    assemble_system, cholesky_factor, s_loop, whiten_fixed, whiten_snp_block, LowerFactor, SnpBlock,
};
use oocgls::io::{read_columns, read_matrix, write_matrix};
use oocgls::oracle::{gls_direct, gls_direct_sequence};
use oocgls::pipeline::{Activity, IterationGuards};
use oocgls::{Execution, KinshipMatrix, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_spd(n: usize, seed: u64) -> KinshipMatrix {
    let mut r = rng(seed);
    let g = Matrix::from_fn(n, n, |_, _| r.random::<f64>());
    let mut m = Matrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v: f64 = (0..n).map(|k| g[(k, i)] * g[(k, j)]).sum();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m[(j, j)] += n as f64;
    }
    KinshipMatrix::new(m).unwrap()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn near(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, .. ProptestConfig::default() })]

    #[test]
    fn cholesky_reconstructs(n in 1usize..60, seed in any::<u64>()) {
        let m = random_spd(n, seed);
        let l = cholesky_factor(&m).unwrap();
        let ll = l.matrix().matmul(&l.matrix().transpose()).unwrap();
        let bound = 1e-10 * (1.0 + m.matrix().max_abs());
        for j in 0..n {
            for i in 0..n {
                prop_assert!((ll[(i, j)] - m.matrix()[(i, j)]).abs() <= bound);
            }
        }
    }

    #[test]
    fn whitening_is_linear(n in 1usize..50, seed in any::<u64>(), a in -10.0f64..10.0, b in -10.0f64..10.0) {
        let l = cholesky_factor(&random_spd(n, seed)).unwrap();
        let c = random_matrix(n, 2, seed ^ 1);
        let mixed: Vec<f64> = (0..n).map(|i| a * c[(i, 0)] + b * c[(i, 1)]).collect();
        let mut lhs = SnpBlock::new(n, 0, mixed).unwrap();
        whiten_snp_block(&l, &mut lhs, Execution::Sequential).unwrap();
        let mut parts = SnpBlock::new(n, 0, c.as_slice().to_vec()).unwrap();
        whiten_snp_block(&l, &mut parts, Execution::Sequential).unwrap();
        let (w1, w2) = (parts.col(0), parts.col(1));
        let scale = 1.0 + a.abs() * w1.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + b.abs() * w2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let rhs = a * w1[i] + b * w2[i];
            prop_assert!((lhs.data[i] - rhs).abs() <= 1e-12 * scale, "{} vs {}", lhs.data[i], rhs);
        }
    }

    #[test]
    fn blocking_is_transparent(
        n in 4usize..40,
        p in 2usize..6,
        k in 1usize..50,
        cuts in proptest::collection::vec(0usize..50, 0..6),
        seed in any::<u64>(),
    ) {
        prop_assume!(n >= p);
        let l = Arc::new(cholesky_factor(&random_spd(n, seed)).unwrap());
        let ctx = whiten_fixed(l.clone(), &random_matrix(n, p - 1, seed ^ 2), random_matrix(n, 1, seed ^ 3).as_slice()).unwrap();
        let xr = random_matrix(n, k, seed ^ 4);
        let mut whole = SnpBlock::new(n, 0, xr.as_slice().to_vec()).unwrap();
        whiten_snp_block(&l, &mut whole, Execution::default()).unwrap();
        let want = s_loop(&ctx, &whole, Execution::default()).unwrap();

        let mut bounds: Vec<usize> = cuts.into_iter().map(|c| c % (k + 1)).collect();
        bounds.push(0);
        bounds.push(k);
        bounds.sort();
        bounds.dedup();
        let mut got = Vec::new();
        for w in bounds.windows(2) {
            let mut blk = SnpBlock::new(n, w[0], xr.columns(w[0], w[1] - w[0]).into_vec()).unwrap();
            whiten_snp_block(&l, &mut blk, Execution::Sequential).unwrap();
            got.extend(s_loop(&ctx, &blk, Execution::Sequential).unwrap().data);
        }
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&got), bits(&want.data));
    }

    #[test]
    fn core_agrees_with_oracle(n in 6usize..200, p in 2usize..7, seed in any::<u64>()) {
        prop_assume!(n >= p);
        let m = random_spd(n, seed);
        let xl = random_matrix(n, p - 1, seed ^ 5);
        let y = random_matrix(n, 1, seed ^ 6).into_vec();
        let xr = random_matrix(n, 3, seed ^ 7);
        let got = oocgls::gls::solve_in_core(&m, &xl, &y, &xr, Execution::default()).unwrap();
        let want = gls_direct_sequence(&xl, &xr, &m, &y, Execution::default()).unwrap();
        for j in 0..3 {
            for i in 0..p {
                let (a, b) = (got.col(j)[i], want.values[(i, j)]);
                prop_assert!(near(a, b, 1e-8), "({i},{j}) {a} vs {b}");
            }
        }
    }

    #[test]
    fn assembled_system_is_symmetric(n in 3usize..40, p in 2usize..7, seed in any::<u64>()) {
        prop_assume!(n >= p);
        let l = Arc::new(cholesky_factor(&random_spd(n, seed)).unwrap());
        let ctx = whiten_fixed(l, &random_matrix(n, p - 1, seed), random_matrix(n, 1, seed ^ 1).as_slice()).unwrap();
        let x = random_matrix(n, 1, seed ^ 2).into_vec();
        let mut s = vec![0.0; p * p];
        let mut r = vec![0.0; p];
        assemble_system(&ctx, &x, &mut s, &mut r).unwrap();
        for i in 0..p {
            for j in 0..p {
                prop_assert_eq!(s[i + j * p].to_bits(), s[j + i * p].to_bits());
            }
        }
    }

    #[test]
    fn oracle_is_permutation_equivariant(n in 4usize..40, p in 2usize..5, seed in any::<u64>()) {
        prop_assume!(n >= p);
        let m = random_spd(n, seed);
        let xl = random_matrix(n, p - 1, seed ^ 1);
        let xr = random_matrix(n, 1, seed ^ 2).into_vec();
        let y = random_matrix(n, 1, seed ^ 3).into_vec();
        let base = gls_direct(&xl, &xr, &m, &y).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        let mut r = rng(seed ^ 4);
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let pm = Matrix::from_fn(n, n, |i, j| m.matrix()[(perm[i], perm[j])]);
        let pxl = Matrix::from_fn(n, p - 1, |i, j| xl[(perm[i], j)]);
        let pxr: Vec<f64> = perm.iter().map(|&i| xr[i]).collect();
        let py: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let got = gls_direct(&pxl, &pxr, &KinshipMatrix::new(pm).unwrap(), &py).unwrap();
        for (a, b) in got.iter().zip(&base) {
            prop_assert!(near(*a, *b, 1e-10), "{a} vs {b}");
        }
    }

    #[test]
    fn matrix_files_round_trip(rows in 0usize..40, cols in 0usize..40, first in 0usize..40, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mat");
        let mut r = rng(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| f64::from_bits(r.random::<u64>() >> 2)).collect();
        write_matrix(&path, rows, cols, &data).unwrap();
        let back = read_matrix(&path).unwrap();
        prop_assert_eq!((back.rows(), back.cols()), (rows, cols));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.as_slice()), bits(&data));
        let first = first.min(cols);
        let count = cols - first;
        let mut dest = vec![0.0; rows * count];
        read_columns(&path, first, count, &mut dest).unwrap();
        prop_assert_eq!(bits(&dest), bits(&data[first * rows..]));
    }

    #[test]
    fn guards_cover_each_block_once(bc in 1usize..300) {
        let g = IterationGuards::new(bc);
        for a in Activity::ALL {
            let mut seen = vec![0u32; bc + 1];
            for b in g.iterations() {
                if let Some(j) = g.block(a, b) {
                    prop_assert!((1..=bc).contains(&j));
                    seen[j] += 1;
                }
            }
            if a == Activity::ResultWait {
                seen[g.drain_result_wait().unwrap()] += 1;
            }
            prop_assert!(seen[1..].iter().all(|&c| c == 1), "{:?}", a);
        }
    }
}

/// Model of one device slot, used to drive random legal schedules.
enum Slot {
    Free,
    Sending(DeviceHandle, usize),
    Landed(usize),
    Solving(DeviceHandle, usize),
    Solved(usize),
}

fn drive(dev: &mut dyn Device, n: usize, ops: &[(u8, u8)]) -> Result<(), BackendError> {
    let l = Arc::new(LowerFactor::from_lower(Matrix::identity(n)).unwrap());
    dev.upload_factor(l)?;
    let mut slots = [Slot::Free, Slot::Free];
    let src = Arc::new(vec![1.0; n * 3]);
    for &(s, cols) in ops {
        let s = usize::from(s % 2);
        let cols = usize::from(cols % 4);
        let next = match std::mem::replace(&mut slots[s], Slot::Free) {
            Slot::Free => Slot::Sending(dev.send_async(HostSlice::new(src.clone(), n, 0..cols), s)?, cols),
            Slot::Sending(h, c) => {
                dev.wait(h)?;
                Slot::Landed(c)
            }
            Slot::Landed(c) => Slot::Solving(dev.trsm_async(s)?, c),
            Slot::Solving(h, c) => {
                dev.wait(h)?;
                Slot::Solved(c)
            }
            Slot::Solved(c) => {
                let mut out = vec![0.0; n * c];
                dev.recv(s, &mut out)?;
                Slot::Free
            }
        };
        slots[s] = next;
    }
    // Drain so no worker is left holding a handle.
    for slot in slots {
        if let Slot::Sending(h, _) | Slot::Solving(h, _) = slot {
            dev.wait(h)?;
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, .. ProptestConfig::default() })]

    #[test]
    fn legal_schedules_never_raise(ops in proptest::collection::vec((any::<u8>(), any::<u8>()), 0..60)) {
        let mut host = HostDevice::new(0, DeviceSpec::host(), WallClock::new());
        prop_assert!(drive(&mut host, 4, &ops).is_ok());
        let params = SimParams { transfer_seconds_per_byte: 1e-9, compute_seconds_per_flop: 1e-9, latency_seconds: 1e-6 };
        let mut sim = SimDevice::new(0, DeviceSpec::simulated(params), VirtualClock::new()).unwrap();
        prop_assert!(drive(&mut sim, 4, &ops).is_ok());
    }

    #[test]
    fn out_of_order_operations_are_rejected(slot in 0usize..2) {
        let mut dev = HostDevice::new(0, DeviceSpec::host(), WallClock::new());
        dev.upload_factor(Arc::new(LowerFactor::from_lower(Matrix::identity(2)).unwrap())).unwrap();
        let illegal = |r: Result<_, BackendError>| matches!(r, Err(BackendError::IllegalBufferState { .. }));
        prop_assert!(illegal(dev.trsm_async(slot).map(|_| ())));
        prop_assert!(illegal(dev.recv(slot, &mut []).map(|_| ())));
        let h = dev.send_async(HostSlice::new(Arc::new(vec![0.0; 2]), 2, 0..1), slot).unwrap();
        prop_assert!(illegal(dev.send_async(HostSlice::new(Arc::new(vec![0.0; 2]), 2, 0..1), slot).map(|_| ())));
        dev.wait(h).unwrap();
        prop_assert!(illegal(dev.recv(slot, &mut [0.0; 2]).map(|_| ())));
    }
}
