//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

mod common;

use std::io::Write;
use std::time::Instant;

use common::*;
use hdg_core::krylov::{gmres, GmresConfig, IdentityPrecond, Orthogonalization, Preconditioner};
use hdg_core::local::{assemble_element_operators, TimeTerm};
use hdg_core::models::{burgers_model, heat_model, poisson_sine, PdeModel};
use hdg_core::newton::{newton_solve, time_march, NewtonConfig, SolverOptions};
use hdg_core::precond::{
    asm_local_matrices, compute_harmonic_ritz, leja_order, AdditiveSchwarz, BaseKind, BlockJacobi, PolynomialPrecond,
};
use hdg_core::study::{convergence_study, CaseName, CaseSpec};
use hdg_core::trace::{assemble_global, block_matvec, block_matvec_gathered, read_dump, write_dump};
use hdg_core::{DenseBatch, Discretization, StateFields};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "\ncriterion {n:>2} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

fn burgers_state(disc: &Discretization, seed: u64) -> StateFields {
    let mut s = StateFields::interpolate(disc, |x| 1.0 - 2.0 * x[0]);
    let mut r = rng(seed);
    s.u.iter_mut().for_each(|v| *v += 0.1 * r_f(&mut r));
    s.uhat.iter_mut().for_each(|v| *v += 0.1 * r_f(&mut r));
    s.refresh_q(disc);
    s
}

fn r_f(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    random_vec(r, 1)[0]
}

fn tight(precond: BaseKind, poly_degree: usize) -> SolverOptions {
    SolverOptions {
        precond,
        poly_degree,
        gmres: GmresConfig { tol: 1e-12, max_iters: 5000, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn criterion_01_condensed_matches_monolithic() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let burgers = burgers_model(1.0 / 200.0);
    let poisson = poisson_sine();
    for n in [2, 3] {
        for k in [1, 2] {
            let d = disc(n, k);
            let cases: [(&dyn PdeModel, StateFields); 2] =
                [(&poisson, StateFields::zeros(&d)), (&burgers, burgers_state(&d, 11 + n as u64))];
            for (model, state) in cases {
                let (du_c, dh_c) = condensed_step(&d, model, &state, None);
                let (du_m, dh_m) = monolithic_step(&d, model, &state, None);
                let a: Vec<f64> = du_c.iter().chain(&dh_c).copied().collect();
                let b: Vec<f64> = du_m.iter().chain(&dh_m).copied().collect();
                worst = worst.max(rel_diff(&a, &b));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 1e-10 && secs < 5.0;
    report(1, "condensed vs monolithic", ok, &format!("max rel diff {worst:.2e} (tol 1e-10), {secs:.2} s"));
    assert!(ok);
}

#[test]
fn criterion_02_matvec_matches_dense() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut meshes = 0;
    let model = burgers_model(1.0 / 200.0);
    let mut r = rng(2);
    for n in [1, 2, 3, 4, 8, 12] {
        for k in [1, 2, 3] {
            let d = disc(n, k);
            if d.n_trace_dofs() > 2000 {
                continue;
            }
            meshes += 1;
            let ops = assemble_element_operators(&d, &model, &burgers_state(&d, 5), None).unwrap();
            let (kk, _) = assemble_global(&ops, &d.mesh).unwrap();
            let kd = dense(&kk);
            for _ in 0..100 {
                let x = random_vec(&mut r, kk.n_dof());
                let want: Vec<f64> = (&kd * DVector::from_column_slice(&x)).iter().copied().collect();
                let mut y = vec![0.0; x.len()];
                block_matvec(&kk, &x, &mut y).unwrap();
                worst = worst.max(rel_diff(&y, &want));
                block_matvec_gathered(&kk, &x, &mut y).unwrap();
                worst = worst.max(rel_diff(&y, &want));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 1e-13 && secs < 5.0;
    report(2, "matvec oracle", ok, &format!("{meshes} meshes, max rel diff {worst:.2e} (tol 1e-13), {secs:.2} s"));
    assert!(ok);
}

#[test]
fn criterion_03_preconditioner_oracles() {
    let t = Instant::now();
    // Block-Jacobi: P_f⁻¹ K_ff = I.
    let d = disc(4, 2);
    let poisson = poisson_sine();
    let ops = assemble_element_operators(&d, &poisson, &StateFields::zeros(&d), None).unwrap();
    let (kk, _) = assemble_global(&ops, &d.mesh).unwrap();
    let bj = BlockJacobi::new(&kk).unwrap();
    let bs = kk.bs();
    let mut bj_err: f64 = 0.0;
    for f in 0..kk.nf() {
        let inv = DMatrix::from_column_slice(bs, bs, bj.inverses().block(f));
        let kff = DMatrix::from_column_slice(bs, bs, kk.block(f, 0));
        bj_err = bj_err.max((inv * kff - DMatrix::identity(bs, bs)).amax());
    }
    // Additive Schwarz against Σ Rᵀ (R K Rᵀ)⁻¹ R on a 3x3 mesh.
    let burgers = burgers_model(1.0 / 200.0);
    let mut asm_err: f64 = 0.0;
    let mut local_err: f64 = 0.0;
    let mut r = rng(3);
    for k in [1, 2] {
        let d = disc(3, k);
        let cases: [(&dyn PdeModel, StateFields); 2] = [(&poisson, StateFields::zeros(&d)), (&burgers, burgers_state(&d, 4))];
        for (model, state) in cases {
            let ops = assemble_element_operators(&d, model, &state, None).unwrap();
            let (kk, _) = assemble_global(&ops, &d.mesh).unwrap();
            let kd = dense(&kk);
            let pf = d.pf();
            let pbar = asm_local_matrices(&ops, &d.mesh);
            for e in 0..d.n_elements() {
                let idx = element_dofs(&d.mesh, pf, e);
                let nt = idx.len();
                for c in 0..nt {
                    for rr in 0..nt {
                        local_err = local_err.max((pbar.get(e, rr, c) - kd[(idx[rr], idx[c])]).abs());
                    }
                }
            }
            let oracle = asm_oracle(&kd, &d.mesh, pf);
            let asm = AdditiveSchwarz::new(&ops, &d.mesh).unwrap();
            for _ in 0..50 {
                let y = random_vec(&mut r, kk.n_dof());
                let want: Vec<f64> = (&oracle * DVector::from_column_slice(&y)).iter().copied().collect();
                let mut z = vec![0.0; y.len()];
                asm.apply(&y, &mut z);
                asm_err = asm_err.max(rel_diff(&z, &want));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = bj_err <= 1e-12 && asm_err <= 1e-12 && local_err <= 1e-12 && secs < 5.0;
    report(
        3,
        "preconditioner oracles",
        ok,
        &format!(
            "BJ |P⁻¹K_ff − I| {bj_err:.2e}, ASM apply {asm_err:.2e}, local matrices {local_err:.2e} (tol 1e-12), {secs:.2} s"
        ),
    );
    assert!(ok);
}

/// `V diag(λ) V⁻¹` with `V = I + 0.1 R`.
fn diagonalizable(n: usize, eig: &[f64], seed: u64) -> (DenseBatch, DMatrix<f64>) {
    let mut r = rng(seed);
    let v = DMatrix::identity(n, n) + DMatrix::from_column_slice(n, n, &random_vec(&mut r, n * n)) * 0.1;
    let a = &v * DMatrix::from_diagonal(&DVector::from_column_slice(eig)) * v.clone().try_inverse().unwrap();
    (DenseBatch::from_vec(n, n, 1, a.as_slice().to_vec()).unwrap(), a)
}

#[test]
fn criterion_04_polynomial_exactness() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut gmres_iters = Vec::new();
    let mut r = rng(40);
    for n in [4, 9, 16, 20] {
        let eig: Vec<f64> = (0..n).map(|i| 1.0 + 2.0 * i as f64 / n as f64).collect();
        let (op, a) = diagonalizable(n, &eig, 41 + n as u64);
        let ritz = compute_harmonic_ritz(&op, n, 7).unwrap();
        let poly = PolynomialPrecond::new(&op, &IdentityPrecond, ritz.values).unwrap();
        let inv = a.clone().try_inverse().unwrap();
        for _ in 0..5 {
            let y = random_vec(&mut r, n);
            let want: Vec<f64> = (&inv * DVector::from_column_slice(&y)).iter().copied().collect();
            let mut z = vec![0.0; n];
            poly.apply(&y, &mut z);
            worst = worst.max(rel_diff(&z, &want));
        }
        let b = random_vec(&mut r, n);
        let (_, st) = gmres(&op, &poly, &b, &vec![0.0; n], &GmresConfig::default()).unwrap();
        gmres_iters.push(st.iters);
    }
    let leja_ok = leja_order(&[Complex64::new(1.0, 0.0)]) == [Complex64::new(1.0, 0.0)]
        && leja_order(&[1.0, 10.0, 5.0].map(|v| Complex64::new(v, 0.0))) == [10.0, 1.0, 5.0].map(|v| Complex64::new(v, 0.0))
        && leja_order(&[Complex64::new(2.0, 1.0), Complex64::new(2.0, -1.0), Complex64::new(7.0, 0.0)])
            == [Complex64::new(7.0, 0.0), Complex64::new(2.0, 1.0), Complex64::new(2.0, -1.0)];
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 1e-8 && gmres_iters.iter().all(|&i| i == 1) && leja_ok && secs < 2.0;
    report(
        4,
        "polynomial exactness",
        ok,
        &format!(
            "inverse action rel err {worst:.2e} (tol 1e-8), GMRES iterations {gmres_iters:?}, Leja cases {leja_ok}, {secs:.2} s"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_05_harmonic_ritz() {
    let t = Instant::now();
    let mut diag_err: f64 = 0.0;
    for p in [1, 5, 10, 20] {
        let mut d = DenseBatch::zeros(p, p, 1);
        for i in 0..p {
            d.set(0, i, i, (i + 1) as f64);
        }
        let ritz = compute_harmonic_ritz(&d, p, 3).unwrap();
        let mut got: Vec<Complex64> = ritz.values.clone();
        got.sort_by(|a, b| a.re.total_cmp(&b.re));
        let err = if got.len() == p {
            got.iter().enumerate().map(|(i, z)| (z - Complex64::new((i + 1) as f64, 0.0)).norm()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        diag_err = diag_err.max(err);
    }
    let rot = DenseBatch::from_rows(&[vec![1.0, 2.0], vec![-2.0, 1.0]]);
    let pair = compute_harmonic_ritz(&rot, 2, 3).unwrap().values;
    let pair_err = if pair.len() == 2 {
        (pair[0] - Complex64::new(1.0, 2.0)).norm().max((pair[1] - Complex64::new(1.0, -2.0)).norm())
    } else {
        f64::INFINITY
    };
    let secs = t.elapsed().as_secs_f64();
    let ok = diag_err <= 1e-10 && pair_err <= 1e-10 && secs < 1.0;
    report(
        5,
        "harmonic Ritz values",
        ok,
        &format!("diag(1..P) max err {diag_err:.2e}, rotation pair {pair:?} err {pair_err:.2e} (tol 1e-10), {secs:.2} s"),
    );
    assert!(ok);
}

#[test]
fn criterion_06_gmres_contract() {
    let t = Instant::now();
    let mut r = rng(60);
    // Exact termination in at most n steps.
    let mut exact_ok = true;
    let mut exact_err: f64 = 0.0;
    for n in [5, 17, 30, 50] {
        let mut a = DMatrix::from_column_slice(n, n, &random_vec(&mut r, n * n));
        a += DMatrix::identity(n, n) * (n as f64).sqrt();
        let op = DenseBatch::from_vec(n, n, 1, a.as_slice().to_vec()).unwrap();
        let b = random_vec(&mut r, n);
        for orth in [Orthogonalization::Cgs, Orthogonalization::Mgs] {
            let cfg = GmresConfig { restart: 50, tol: 1e-13, orth, ..Default::default() };
            let (x, st) = gmres(&op, &IdentityPrecond, &b, &vec![0.0; n], &cfg).unwrap();
            let res: Vec<f64> = (&a * DVector::from_column_slice(&x) - DVector::from_column_slice(&b)).iter().copied().collect();
            let rel = res.iter().map(|v| v * v).sum::<f64>().sqrt() / b.iter().map(|v| v * v).sum::<f64>().sqrt();
            exact_err = exact_err.max(rel);
            exact_ok &= st.iters <= n && st.restarts == 0 && rel <= 1e-10;
        }
    }
    // Monotone least-squares residuals and orthonormal MGS bases on Poisson
    // systems, with the Newton right-hand side and a random one, for every
    // base preconditioner.
    let poisson = poisson_sine();
    let mut monotone = true;
    let mut orth_loss: f64 = 0.0;
    let mut cycles = 0;
    let mut all_converged = true;
    let mut lu_err: f64 = 0.0;
    for (n, k) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
        let d = disc(n, k);
        let ops = assemble_element_operators(&d, &poisson, &StateFields::zeros(&d), None).unwrap();
        let (kk, newton_rhs) = assemble_global(&ops, &d.mesh).unwrap();
        let kd = dense(&kk);
        let random_rhs = random_vec(&mut r, kk.n_dof());
        for kind in [BaseKind::None, BaseKind::Bj, BaseKind::Asm] {
            let base = hdg_core::BasePrecond::build(kind, &kk, &ops, &d.mesh).unwrap();
            for rhs in [&newton_rhs, &random_rhs] {
                let cfg = GmresConfig { orth: Orthogonalization::Mgs, track_orthogonality: true, ..Default::default() };
                let (_, st) = gmres(&kk, &base, rhs, &vec![0.0; rhs.len()], &cfg).unwrap();
                all_converged &= st.converged;
                let mut start = 0;
                for _ in &st.restart_checks {
                    let end = (start + cfg.restart).min(st.residual_history.len());
                    monotone &= st.residual_history[start..end].windows(2).all(|w| w[1] <= w[0]);
                    start = end;
                }
                orth_loss = st.orthogonality_loss.iter().copied().fold(orth_loss, f64::max);
                cycles += st.orthogonality_loss.len();
            }
        }
        if n == 2 {
            let want: Vec<f64> =
                kd.clone().lu().solve(&DVector::from_column_slice(&newton_rhs)).unwrap().iter().copied().collect();
            let cfg = GmresConfig { restart: kk.n_dof(), tol: 1e-12, orth: Orthogonalization::Mgs, ..Default::default() };
            let (x, st) = gmres(&kk, &IdentityPrecond, &newton_rhs, &vec![0.0; kk.n_dof()], &cfg).unwrap();
            all_converged &= st.converged && st.iters <= kk.n_dof();
            lu_err = lu_err.max(rel_diff(&x, &want));
        }
    }
    let big = disc(16, 3);
    let ops = assemble_element_operators(&big, &poisson, &StateFields::zeros(&big), None).unwrap();
    let (kk, rhs) = assemble_global(&ops, &big.mesh).unwrap();
    let asm = AdditiveSchwarz::new(&ops, &big.mesh).unwrap();
    let cfg = GmresConfig { orth: Orthogonalization::Mgs, track_orthogonality: true, ..Default::default() };
    let (_, st) = gmres(&kk, &asm, &rhs, &vec![0.0; rhs.len()], &cfg).unwrap();
    let big_loss = st.orthogonality_loss.iter().copied().fold(0.0, f64::max);
    orth_loss = orth_loss.max(big_loss);
    cycles += st.orthogonality_loss.len();
    let secs = t.elapsed().as_secs_f64();
    let ok = exact_ok && monotone && all_converged && lu_err <= 1e-8 && orth_loss <= 1e-10 && cycles > 0 && secs < 5.0;
    report(
        6,
        "GMRES contract",
        ok,
        &format!(
            "exact in <= n steps {exact_ok} (rel res {exact_err:.1e}), dense LU match {lu_err:.1e}, monotone {monotone}, \
             MGS |VᵀV − I| {orth_loss:.2e} over {cycles} cycles on Poisson systems, \
             {secs:.2} s (16x16 k=3 ASM: {big_loss:.1e})"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_07_poisson_orders() {
    let t = Instant::now();
    let rows =
        convergence_study(&poisson_sine(), &[1, 2, 3], &[16, 32], &NewtonConfig::default(), &tight(BaseKind::Asm, 0)).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [1, 2, 3] {
        let order = rows.iter().find(|r| r.k == k && r.n == 32).and_then(|r| r.order).unwrap_or(f64::NAN);
        ok &= order >= k as f64 + 0.5;
        parts.push(format!("k={k}: {order:.2}"));
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    report(7, "Poisson L2 orders (need >= k+0.5)", ok, &format!("{}, {secs:.2} s", parts.join(", ")));
    assert!(ok);
}

fn burgers_solve(k: usize, n: usize, precond: BaseKind, poly: usize) -> (StateFields, hdg_core::SolveReport) {
    let d = disc(n, k);
    let model = burgers_model(1.0 / 200.0);
    let init = StateFields::interpolate(&d, |x| 1.0 - 2.0 * x[0]);
    let opts = SolverOptions { precond, poly_degree: poly, ..Default::default() };
    newton_solve(&d, &model, &init, &NewtonConfig::default(), &opts, None).unwrap()
}

#[test]
fn criterion_08_burgers_iteration_table() {
    let t = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    let mut k1n16 = (0, 0);
    for k in [1, 2, 3] {
        for n in [16, 32] {
            let mut counts = Vec::new();
            for (kind, p) in [(BaseKind::Bj, 0), (BaseKind::Asm, 0), (BaseKind::Bj, 10), (BaseKind::Asm, 10)] {
                let (_, rep) = burgers_solve(k, n, kind, p);
                let decreasing = rep.residual_history.windows(2).all(|w| w[1] < w[0]);
                ok &= rep.converged && decreasing;
                counts.push(rep.n_gmres_total);
            }
            let [bj, asm, bjpp, asmpp] = [counts[0], counts[1], counts[2], counts[3]];
            ok &= asm < bj && asmpp < asm && bjpp < bj;
            if (k, n) == (1, 16) {
                k1n16 = (bj, asmpp);
            }
            lines.push(format!("k={k} n={n}: BJ {bj} ASM {asm} BJ-PP {bjpp} ASM-PP {asmpp}"));
        }
    }
    ok &= (80..=800).contains(&k1n16.0) && (10..=120).contains(&k1n16.1);
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    report(8, "Burgers GMRES totals and orderings", ok, &format!("{}; {secs:.1} s", lines.join("; ")));
    assert!(ok);
}

/// `u_h` at physical point `x` on a uniform unit-square mesh.
fn eval_u(d: &Discretization, u: &[f64], x: [f64; 2]) -> f64 {
    let n = d.mesh.resolution().0;
    let i = ((x[0] * n as f64) as usize).min(n - 1);
    let j = ((x[1] * n as f64) as usize).min(n - 1);
    let e = i + n * j;
    let xi = [x[0] * n as f64 - i as f64, x[1] * n as f64 - j as f64];
    let phi = d.basis.eval_element(xi);
    phi.iter().zip(&u[e * d.pe()..(e + 1) * d.pe()]).map(|(a, b)| a * b).sum()
}

#[test]
fn criterion_09_solution_invariance() {
    let t = Instant::now();
    let (k, n) = (2, 16);
    let variants = [(BaseKind::Bj, 0), (BaseKind::Asm, 0), (BaseKind::Bj, 10), (BaseKind::Asm, 10)];
    let sols: Vec<StateFields> = variants.iter().map(|&(kind, p)| burgers_solve(k, n, kind, p).0).collect();
    let spread = sols[1..].iter().map(|s| max_abs_diff(&s.uhat, &sols[0].uhat)).fold(0.0, f64::max);
    let d = disc(n, k);
    let mut anti: f64 = 0.0;
    let h = 1.0 / n as f64;
    for s in &sols {
        for i in 0..n {
            for j in 0..n {
                for xi in [0.1, 0.35, 0.5, 0.8, 0.95] {
                    for eta in [0.05, 0.5, 0.9] {
                        let x = [(i as f64 + xi) * h, (j as f64 + eta) * h];
                        let mirror = [(n - 1 - i) as f64 * h + (1.0 - xi) * h, x[1]];
                        anti = anti.max((eval_u(&d, &s.u, x) + eval_u(&d, &s.u, mirror)).abs());
                    }
                }
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = spread <= 1e-6 && anti <= 1e-6 && secs < 60.0;
    report(
        9,
        "solution invariance",
        ok,
        &format!("trace spread across preconditioners {spread:.2e}, antisymmetry defect {anti:.2e} (tol 1e-6), {secs:.2} s"),
    );
    assert!(ok);
}

#[test]
fn criterion_10_transient_sanity() {
    let t = Instant::now();
    // Heat decay: monotone energy and backward-Euler rate within 10% of e^{−2π²t}.
    let d = disc(16, 3);
    let model = heat_model(1.0);
    let pi = std::f64::consts::PI;
    let init = StateFields::interpolate(&d, |x| (pi * x[0]).sin() * (pi * x[1]).sin());
    let dt = 1e-3;
    let opts = tight(BaseKind::Asm, 0);
    let march = time_march(&d, &model, &init, dt, 20, &NewtonConfig::default(), &opts).unwrap();
    let norms: Vec<f64> = march.states.iter().map(|s| d.l2_error(&s.u, |_| 0.0, 2).unwrap()).collect();
    let monotone = norms.windows(2).all(|w| w[1] < w[0]);
    let mut trend_err: f64 = 0.0;
    for (step, nrm) in norms.iter().enumerate() {
        let analytic = norms[0] * (-2.0 * pi * pi * dt * step as f64).exp();
        trend_err = trend_err.max((nrm - analytic).abs() / analytic);
    }
    // Steady fixed point.
    let db = disc(8, 2);
    let burgers = burgers_model(1.0 / 200.0);
    let init = StateFields::interpolate(&db, |x| 1.0 - 2.0 * x[0]);
    let strict = NewtonConfig { tol: 1e-11, ..Default::default() };
    let (steady, _) = newton_solve(&db, &burgers, &init, &strict, &tight(BaseKind::Asm, 0), None).unwrap();
    let fixed = time_march(&db, &burgers, &steady, 0.1, 5, &NewtonConfig::default(), &tight(BaseKind::Asm, 0)).unwrap();
    let max_newton = fixed.reports.iter().map(|r| r.n_newton).max().unwrap_or(0);
    let drift = fixed.states.windows(2).map(|w| max_abs_diff(&w[1].u, &w[0].u)).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    let ok = monotone && trend_err <= 0.1 && max_newton <= 2 && drift <= 1e-8 && secs < 30.0;
    report(
        10,
        "transient sanity",
        ok,
        &format!(
            "heat energy monotone {monotone}, worst deviation from exp trend {:.1}%, fixed point: max Newton {max_newton}, drift {drift:.1e}, {secs:.2} s",
            100.0 * trend_err
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_11_determinism_and_io() {
    let t = Instant::now();
    let spec = CaseSpec {
        case: CaseName::Burgers2d,
        k: 1,
        n: 8,
        solver: SolverOptions { precond: BaseKind::Asm, poly_degree: 10, ritz_seed: 7, ..Default::default() },
        ..Default::default()
    };
    let a = hdg_core::study::run_case(&spec).unwrap();
    let b = hdg_core::study::run_case(&spec).unwrap();
    let same_counts = a.report.n_newton == b.report.n_newton
        && a.report.n_gmres_total == b.report.n_gmres_total
        && a.report.gmres_per_newton == b.report.gmres_per_newton;
    let same_bits =
        a.report.residual_history.iter().map(|v| v.to_bits()).eq(b.report.residual_history.iter().map(|v| v.to_bits()))
            && a.state.uhat.iter().map(|v| v.to_bits()).eq(b.state.uhat.iter().map(|v| v.to_bits()));

    let dump = |s: &CaseSpec| {
        let d = hdg_core::study::build_discretization(s).unwrap();
        let model = hdg_core::study::build_model(s);
        let st = hdg_core::study::initial_state(s, &d);
        let ops = assemble_element_operators(&d, model.as_ref(), &st, None::<TimeTerm<'_>>).unwrap();
        let (kk, r) = assemble_global(&ops, &d.mesh).unwrap();
        let mut buf = Vec::new();
        write_dump(&mut buf, &kk, &r).unwrap();
        buf
    };
    let first = dump(&spec);
    let second = dump(&spec);
    let (kk, r) = read_dump(first.as_slice()).unwrap();
    let mut again = Vec::new();
    write_dump(&mut again, &kk, &r).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let ok = same_counts && same_bits && first == second && first == again && secs < 10.0;
    report(
        11,
        "determinism and dump round-trip",
        ok,
        &format!(
            "counts {same_counts} (n_newton {}, n_gmres {}), bitwise states {same_bits}, dump {} bytes reproducible {}, round-trip {}, {secs:.2} s",
            a.report.n_newton,
            a.report.n_gmres_total,
            first.len(),
            first == second,
            first == again
        ),
    );
    assert!(ok);
}
