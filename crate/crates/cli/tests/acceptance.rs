//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line (visible with `cargo test -p jorlin-cli --test acceptance --
//! --nocapture`).
//!
//! Heavy criteria serialize on a gate so their wall-clock budgets are
//! measured without contention.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rug::{Float, Rational};

use jorlin_cli::mapfile::MapFile;
use jorlin_core::homological::{
    apply_homological, apply_remainder, nilpotency_index, remainder_bound_report, solve,
    HomologicalProblem,
};
use jorlin_core::newton::{poincare_dulac_direct, run_newton, schedule_check, GermMap};
use jorlin_core::num::{Coeff, CRat, CF};
use jorlin_core::series::{MultiIndex, PolydiscRadii, Ranker, VectorSeries};
use jorlin_core::slices::{classify, verify_invariance, SliceConfig, SliceLabel};
use jorlin_core::spectrum::{
    bound_constants, detect_resonances, enumerate_quasi_resonances, JordanBlock, ModulusClasses,
    QuasiResonanceTable, SliceCase, Spectrum,
};

static GATE: Mutex<()> = Mutex::new(());

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn crat(re: (i64, i64), im: (i64, i64)) -> CRat {
    CRat::new(Rational::from(re), Rational::from(im))
}

/// The three slice fixtures: shared unit phase and phased half-modulus
/// 2-block, then deeper rungs.
fn slice_spectra() -> Vec<Spectrum<CRat>> {
    let unit = crat((3, 5), (4, 5));
    let half = crat((3, 10), (4, 10));
    vec![
        Spectrum::new(
            vec![unit.clone(), half.clone(), half.clone()],
            vec![JordanBlock { start: 1, size: 2 }],
            CRat::from_ratio(1, 100),
        )
        .unwrap(),
        Spectrum::new(
            vec![unit.clone(), half.clone(), half.clone(), CRat::from_ratio(1, 4)],
            vec![JordanBlock { start: 1, size: 2 }],
            CRat::from_ratio(1, 100),
        )
        .unwrap(),
        Spectrum::new(
            vec![
                unit,
                half.clone(),
                half,
                CRat::from_ratio(1, 4),
                CRat::from_ratio(1, 8),
            ],
            vec![JordanBlock { start: 1, size: 2 }],
            CRat::from_ratio(1, 100),
        )
        .unwrap(),
    ]
}

fn random_rational(rng: &mut StdRng) -> Rational {
    let num = rng.gen_range(-6i64..=6);
    let den = rng.gen_range(2i64..=9);
    Rational::from((num, den * 4))
}

fn random_unit_or_small(rng: &mut StdRng, unit: bool) -> CRat {
    if unit {
        // Pythagorean points on the circle
        let (a, b, c) = [(3i64, 4i64, 5i64), (5, 12, 13), (8, 15, 17)][rng.gen_range(0..3)];
        let s = if rng.gen_bool(0.5) { 1 } else { -1 };
        CRat::new(Rational::from((a, c)), Rational::from((s * b, c)))
    } else {
        let pool: [(i64, i64, i64, i64); 6] = [
            (1, 2, 0, 1),
            (1, 3, 0, 1),
            (2, 5, 0, 1),
            (3, 10, 4, 10),
            (3, 10, -4, 10),
            (3, 25, 4, 25),
        ];
        let (a, b, c, d) = pool[rng.gen_range(0..pool.len())];
        CRat::new(Rational::from((a, b)), Rational::from((c, d)))
    }
}

/// Random admissible non-resonant spectrum with a mixed block layout.
fn random_spectrum(rng: &mut StdRng, k: u32) -> Spectrum<CRat> {
    'outer: loop {
        let n = rng.gen_range(2usize..=4);
        let mut lambda: Vec<CRat> = Vec::new();
        let mut blocks = Vec::new();
        let mut i = 0usize;
        while i < n {
            let size = if n - i >= 2 && rng.gen_bool(0.4) {
                rng.gen_range(2..=(n - i).min(3))
            } else {
                1
            };
            let want_unit = i == 0 && rng.gen_bool(0.5);
            let lam = random_unit_or_small(rng, want_unit);
            for _ in 0..size {
                lambda.push(lam.clone());
            }
            if size > 1 {
                blocks.push(JordanBlock { start: i, size });
            }
            i += size;
        }
        let eps = match rng.gen_range(0..4) {
            0 => CRat::zero(),
            1 => CRat::from_ratio(1, 100),
            2 => CRat::from_ratio(1, 50),
            _ => CRat::from_ratio(1, 10),
        };
        // a block on a unit-modulus eigenvalue is fine for the solver; keep
        // simple and only retry on resonance
        let Ok(spec) = Spectrum::new(lambda, blocks, eps) else {
            continue 'outer;
        };
        if detect_resonances(&spec, k, None).is_empty() {
            return spec;
        }
    }
}

fn random_poly(rng: &mut StdRng, n: usize, k: u32, terms: usize, min_deg: u32) -> VectorSeries<CRat> {
    let mut v = VectorSeries::new(n, k);
    let ranker = Ranker::new(n, k);
    for _ in 0..terms {
        let d = rng.gen_range(min_deg..=k);
        let r = rng.gen_range(0..ranker.slice_len(d));
        let comp = rng.gen_range(0..n);
        let c = CRat::new(random_rational(rng), random_rational(rng));
        v.component_mut(comp)
            .insert_add(MultiIndex::from_exps(ranker.unrank(r as u64, d)), c);
    }
    v
}

#[test]
fn criterion_01_homological_round_trip() {
    let _g = GATE.lock().unwrap();
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x4a6f_726c_696e_0001);
    for case in 0..200 {
        let k = rng.gen_range(4u32..=12);
        let spec = random_spectrum(&mut rng, k);
        let n = spec.dim();
        let nterms = rng.gen_range(4..=12);
        let g = random_poly(&mut rng, n, k, nterms, 2);
        let problem = HomologicalProblem::new(spec.clone(), g.clone()).unwrap();
        let phi = solve(&problem).unwrap();
        assert_eq!(
            apply_homological(&phi, &spec),
            g,
            "case {case}: L(solve(g)) != g"
        );
        let nterms2 = rng.gen_range(4..=12);
        let psi = random_poly(&mut rng, n, k, nterms2, 2);
        let lpsi = apply_homological(&psi, &spec);
        let p2 = HomologicalProblem::new(spec.clone(), lpsi).unwrap();
        assert_eq!(solve(&p2).unwrap(), psi, "case {case}: solve(L(psi)) != psi");
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "round trips took {secs:.1}s, budget 60s");
    println!("criterion 1 (homological round trip, 200 germs, {secs:.1}s): PASS");
}

/// Brute-force classifier straight from the set definitions, with its own
/// brute-force quasi-resonance list.
fn brute_label(
    alpha: &MultiIndex,
    classes: &ModulusClasses,
    brute_qr: &[(usize, Vec<u32>)],
) -> SliceLabel {
    let sig = classes.signature(alpha);
    let total: u32 = sig.iter().sum();
    if total == 0 {
        return SliceLabel::S1;
    }
    if total == 1 {
        return SliceLabel::S2;
    }
    for (class, kappa) in brute_qr {
        let mut padded = kappa.clone();
        padded.resize(classes.count() - 1, 0);
        if padded == sig {
            return SliceLabel::Sqr {
                class: *class,
                kappa: kappa.clone(),
            };
        }
    }
    SliceLabel::P
}

fn brute_qr_list(classes: &ModulusClasses, cap: u32) -> Vec<(usize, Vec<u32>)> {
    let m = classes.count();
    let musq = classes.mu_sq_exact.as_ref().unwrap();
    let mut out = Vec::new();
    for t in 2..m {
        let width = t - 1;
        // enumerate all kappa with sum <= cap
        let mut kappa = vec![0u32; width];
        loop {
            let total: u32 = kappa.iter().sum();
            if total >= 2 && total <= cap {
                let mut prod = Rational::from(1);
                for (j, &e) in kappa.iter().enumerate() {
                    for _ in 0..e {
                        prod *= &musq[j + 1];
                    }
                }
                if prod == musq[t] {
                    out.push((t, kappa.clone()));
                }
            }
            // odometer with sum cap
            let mut pos = 0;
            loop {
                if pos == width {
                    kappa.iter_mut().for_each(|x| *x = 0);
                    break;
                }
                kappa[pos] += 1;
                if kappa.iter().sum::<u32>() <= cap {
                    break;
                }
                kappa[pos] = 0;
                pos += 1;
            }
            if kappa.iter().all(|&x| x == 0) {
                break;
            }
        }
    }
    out
}

#[test]
fn criterion_02_slice_partition_invariance() {
    let _g = GATE.lock().unwrap();
    for (fi, spec) in slice_spectra().into_iter().enumerate() {
        let cfg = SliceConfig::derive(&spec).unwrap();
        // m=4 fixture carries the expected table
        if fi == 2 {
            let mut got: Vec<(usize, Vec<u32>)> = cfg
                .qr
                .entries
                .iter()
                .map(|e| (e.class, e.kappa.clone()))
                .collect();
            got.sort();
            assert_eq!(
                got,
                vec![(2usize, vec![2]), (3, vec![1, 1]), (3, vec![3, 0])]
            );
        }
        let brute = brute_qr_list(&cfg.classes, 12);
        let ranker = Ranker::new(spec.dim(), 10);
        for d in 2..=10u32 {
            for r in 0..ranker.slice_len(d) {
                let alpha = MultiIndex::from_exps(ranker.unrank(r as u64, d));
                // exactly one label, matching the independent classifier
                let label = classify(&alpha, &cfg).unwrap();
                let expect = brute_label(&alpha, &cfg.classes, &brute);
                assert_eq!(label, expect, "fixture {fi}, alpha {:?}", alpha.exps());
            }
        }
        let rep = verify_invariance(&cfg, &spec, 10).unwrap();
        assert!(rep.partition_ok);
        assert!(
            rep.invariance_ok,
            "fixture {fi}: {:?}",
            rep.counterexamples.first()
        );
        assert_eq!(rep.counterexamples.len(), 0);
    }
    println!("criterion 2 (slice partition & invariance, exhaustive to degree 10): PASS");
}

#[test]
fn criterion_03_nilpotency() {
    let mut rng = StdRng::seed_from_u64(0x4a6f_726c_696e_0003);
    for (fi, spec) in slice_spectra().into_iter().enumerate() {
        let cfg = SliceConfig::derive(&spec).unwrap();
        let n = spec.dim();
        let unit_vars = cfg.classes.classes[0].clone();
        let below: Vec<usize> = (0..n).filter(|v| !unit_vars.contains(v)).collect();
        let block_cap = spec.max_block_size() as u32;
        for case in 0..100 {
            // inner slice: unit-class variables only
            let mut g1 = VectorSeries::<CRat>::new(n, 8);
            for _ in 0..rng.gen_range(1..=4) {
                let d = rng.gen_range(2u32..=6);
                let mut exps = vec![0u16; n];
                for _ in 0..d {
                    exps[unit_vars[rng.gen_range(0..unit_vars.len())]] += 1;
                }
                g1.component_mut(rng.gen_range(0..n)).insert_add(
                    MultiIndex::new(&exps),
                    CRat::new(random_rational(&mut rng), random_rational(&mut rng)),
                );
            }
            if !g1.is_zero() {
                let eta = nilpotency_index(&g1, &spec, &cfg).unwrap();
                assert!(eta <= 1, "fixture {fi} case {case}: inner eta {eta}");
            }
            // boundary slice: exactly one below-unit variable
            let mut g2 = VectorSeries::<CRat>::new(n, 8);
            for _ in 0..rng.gen_range(1..=4) {
                let d = rng.gen_range(1u32..=5);
                let mut exps = vec![0u16; n];
                for _ in 0..d {
                    exps[unit_vars[rng.gen_range(0..unit_vars.len())]] += 1;
                }
                exps[below[rng.gen_range(0..below.len())]] += 1;
                g2.component_mut(rng.gen_range(0..n)).insert_add(
                    MultiIndex::new(&exps),
                    CRat::new(random_rational(&mut rng), random_rational(&mut rng)),
                );
            }
            if !g2.is_zero() {
                let eta = nilpotency_index(&g2, &spec, &cfg).unwrap();
                assert!(
                    eta <= block_cap,
                    "fixture {fi} case {case}: boundary eta {eta} > {block_cap}"
                );
            }
            // quasi-resonant slices: finite index, exact zero in the end
            for entry in &cfg.qr.entries {
                let mut g3 = VectorSeries::<CRat>::new(n, 12);
                let mut exps = vec![0u16; n];
                for _ in 0..rng.gen_range(0u32..=3) {
                    exps[unit_vars[rng.gen_range(0..unit_vars.len())]] += 1;
                }
                for (cj, &kap) in entry.kappa.iter().enumerate() {
                    let class = &cfg.classes.classes[cj + 1];
                    for _ in 0..kap {
                        exps[class[rng.gen_range(0..class.len())]] += 1;
                    }
                }
                let idx = MultiIndex::new(&exps);
                if idx.degree() < 2 {
                    continue;
                }
                g3.component_mut(rng.gen_range(0..n)).insert_add(
                    idx,
                    CRat::new(random_rational(&mut rng), random_rational(&mut rng)),
                );
                if g3.is_zero() {
                    continue;
                }
                let eta = nilpotency_index(&g3, &spec, &cfg).unwrap();
                assert!(eta < 64, "fixture {fi} case {case}: qr eta unbounded");
                // exact zero after eta hits
                let mut cur = g3;
                for _ in 0..eta {
                    cur = apply_remainder(&cur, &spec);
                }
                assert!(cur.is_zero());
            }
        }
    }
    println!("criterion 3 (shear nilpotency on Siegel slices, 100 cases/fixture): PASS");
}

#[test]
fn criterion_04_remainder_bound() {
    let mut rng = StdRng::seed_from_u64(0x4a6f_726c_696e_0004);
    let prec = 128u32;
    let lam = CF::unit_phase("0.61803398874989484820458683436563811772", prec).unwrap();
    let half = CF::from_str_parts("0.5", "0", prec).unwrap();
    let base = Spectrum::new(
        vec![lam, half.clone(), half],
        vec![JordanBlock { start: 1, size: 2 }],
        CF::from_str_parts("0.01", "0", prec).unwrap(),
    )
    .unwrap();
    let classes = ModulusClasses::group(&base, None).unwrap();
    let consts = bound_constants(&base, &classes, &SliceCase::NoQr).unwrap();
    // eps = eps_max / 2
    let eps_half = {
        let v = consts.eps_max.clone() / Float::with_val(prec, 2);
        let (re, _) = CF::new(v.clone(), Float::new(prec)).to_string_parts();
        CF::from_str_parts(&re, "0", prec).unwrap()
    };
    let spec = base.with_epsilon(eps_half).unwrap();
    let radii_asym = PolydiscRadii::new(
        Float::with_val(prec, 1),
        Float::with_val(prec, 1) / Float::with_val(prec, 2),
        spec.jordan_vars(),
    )
    .unwrap();
    let radii_sym = PolydiscRadii::new(
        Float::with_val(prec, 1),
        Float::with_val(prec, 1),
        spec.jordan_vars(),
    )
    .unwrap();
    let ranker = Ranker::new(3, 20);
    for case in 0..100 {
        let mut phi = VectorSeries::<CF>::new(3, 20);
        for _ in 0..rng.gen_range(4..=16) {
            let d = rng.gen_range(2u32..=20);
            let r = rng.gen_range(0..ranker.slice_len(d));
            let re = rng.gen_range(-1.0f64..1.0);
            let im = rng.gen_range(-1.0f64..1.0);
            phi.component_mut(rng.gen_range(0..3)).insert_add(
                MultiIndex::from_exps(ranker.unrank(r as u64, d)),
                CF::with_prec(prec, re, im),
            );
        }
        if phi.is_zero() {
            continue;
        }
        for radii in [&radii_asym, &radii_sym] {
            let rep =
                remainder_bound_report(&phi, radii, &spec, &consts.remainder_coeff).unwrap();
            assert!(
                rep.pass,
                "case {case}: ratio {} above {}",
                rep.measured.to_f64(),
                rep.theoretical.to_f64()
            );
        }
    }
    println!("criterion 4 (shear remainder bound, 100 random polynomials): PASS");
}

#[test]
fn criterion_05_newton_quadratic_behavior() {
    let _g = GATE.lock().unwrap();
    let started = Instant::now();
    let mf = MapFile::load(&fixture("fix_desk_float.json")).unwrap();
    assert_eq!(mf.effective_precision(), 256);
    let germ: GermMap<CF> = mf.germ(64).unwrap();
    let out = run_newton(&germ, 5, 64, None).unwrap();
    let rows = &out.trace.rows;
    assert_eq!(rows.len(), 6);
    // residual order per iteration >= (2, 3, 5, 9, 17, 33); a residual below
    // working precision reads as order > K which satisfies the bound
    for (row, expect) in rows.iter().zip([2u32, 3, 5, 9, 17, 33]) {
        match row.residual_order {
            Some(o) => assert!(o >= expect, "nu {}: order {o} < {expect}", row.nu),
            None => {}
        }
    }
    // norms decrease monotonically after nu = 0 and cross 1e-12 by nu <= 5
    let mut below = false;
    for w in rows.windows(2) {
        if w[0].nu >= 1 {
            assert!(
                w[1].residual_norm_upper < w[0].residual_norm_upper
                    || w[1].residual_norm_upper.is_zero(),
                "norm did not decrease at nu {}",
                w[1].nu
            );
        }
    }
    let tiny = Float::with_val(64, 1e-12);
    for row in rows {
        if row.residual_norm_upper < tiny {
            below = true;
        }
    }
    assert!(below, "residual norm never dropped below 1e-12");
    // measured quadratic constants stay within three decades over nu = 1..4
    let cs: Vec<f64> = rows
        .iter()
        .filter(|r| (1..=4).contains(&r.nu))
        .filter_map(|r| r.c_nu.as_ref().map(|c| c.to_f64()))
        .collect();
    assert_eq!(cs.len(), 4);
    let cmax = cs.iter().cloned().fold(f64::MIN, f64::max);
    let cmin = cs.iter().cloned().fold(f64::MAX, f64::min);
    assert!(
        cmax / cmin < 1e3,
        "quadratic constant drift {cmax:.3e}/{cmin:.3e}"
    );
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 120.0, "desk run took {secs:.1}s, budget 120s");
    println!(
        "criterion 5 (quadratic behavior on the desk fixture, {secs:.1}s, C in [{cmin:.2}, {cmax:.2}]): PASS"
    );
}

#[test]
fn criterion_06_oracle_agreement() {
    let _g = GATE.lock().unwrap();
    let started = Instant::now();
    // exact agreement on the rational fixtures
    for name in [
        "fix_m2_rational.json",
        "fix_m3_rational.json",
        "fix_m4_rational.json",
        "fix_block2_subdiag.json",
        "fix_diag_newton.json",
    ] {
        let mf = MapFile::load(&fixture(name)).unwrap();
        let k = 32.min(mf.truncation.max(8));
        let germ: GermMap<CRat> = mf.germ(k).unwrap();
        let newton = run_newton(&germ, 12, k, None).unwrap();
        assert!(!newton.trace.diverged, "{name}: diverged");
        let direct = poincare_dulac_direct(&germ, k).unwrap();
        assert_eq!(newton.phi, direct, "{name}: mismatch");
    }
    // float desk fixture to 2^-(P-16) relative
    let mf = MapFile::load(&fixture("fix_desk_float.json")).unwrap();
    let germ: GermMap<CF> = mf.germ(32).unwrap();
    let newton = run_newton(&germ, 12, 32, None).unwrap();
    let direct = poincare_dulac_direct(&germ, 32).unwrap();
    assert!(
        newton.phi.agrees_within(&direct, 256 - 16),
        "desk fixture: float mismatch beyond 2^-240"
    );
    let secs = started.elapsed().as_secs_f64();
    println!("criterion 6 (quadratic iteration equals the direct solver at K=32, {secs:.1}s): PASS");
}

#[test]
fn criterion_07_qr_enumeration() {
    let mut rng = StdRng::seed_from_u64(0x4a6f_726c_696e_0007);
    let mut nonempty = 0usize;
    for case in 0..50 {
        // random strictly decreasing ladder from small fractions
        let m = rng.gen_range(3usize..=5);
        let mut mu: Vec<Rational> = vec![Rational::from(1)];
        while mu.len() < m {
            let num = rng.gen_range(1i64..=8);
            let den = rng.gen_range(2i64..=9);
            let q = Rational::from((num, den));
            if q < *mu.last().unwrap() && q.cmp0() == std::cmp::Ordering::Greater {
                mu.push(q);
            }
        }
        let classes = ModulusClasses::from_rational_moduli(&mu, 96).unwrap();
        let table: QuasiResonanceTable = enumerate_quasi_resonances(&classes, None).unwrap();
        nonempty += usize::from(!table.is_empty());
        let brute = brute_qr_list(&classes, 12);
        let mut got: Vec<(usize, Vec<u32>)> = table
            .entries
            .iter()
            .filter(|e| e.kappa.iter().sum::<u32>() <= 12)
            .map(|e| (e.class, e.kappa.clone()))
            .collect();
        got.sort();
        let mut expect = brute;
        expect.sort();
        assert_eq!(got, expect, "case {case}, mu {mu:?}");
    }
    println!(
        "criterion 7 (quasi-resonance enumeration vs brute force, 50 ladders, {nonempty} nonempty): PASS"
    );
}

#[test]
fn criterion_08_schedule_arithmetic() {
    for c in [2i64, 10, 100] {
        for eps0 in [(1i64, 100i64), (1, 1000)] {
            let t = schedule_check(&Rational::from(c), &Rational::from(eps0), 10).unwrap();
            for row in &t.rows {
                assert_eq!(
                    row.by_recursion, row.by_closed_form,
                    "C={c} eps0={eps0:?} nu={}",
                    row.nu
                );
            }
        }
    }
    // contraction flag at the smallness threshold C^2 eps0 = 1: the closed
    // form degenerates to C^-(nu+2), which halves exactly when C >= 2
    let edge2 = schedule_check(&Rational::from(2), &Rational::from((1, 4)), 10).unwrap();
    assert!(edge2.contracts && !edge2.smallness_ok);
    let edge10 = schedule_check(&Rational::from(10), &Rational::from((1, 100)), 10).unwrap();
    assert!(edge10.contracts && !edge10.smallness_ok);
    // strictly above the threshold the halving eventually fails
    let above = schedule_check(&Rational::from(10), &Rational::from((11, 1000)), 10).unwrap();
    assert!(!above.contracts && !above.smallness_ok);
    // strictly below, everything holds
    let below = schedule_check(&Rational::from(10), &Rational::from((1, 1000)), 10).unwrap();
    assert!(below.contracts && below.smallness_ok);
    println!("criterion 8 (error-schedule arithmetic, exact): PASS");
}

#[test]
fn criterion_09_csv_determinism() {
    let _g = GATE.lock().unwrap();
    let bin = env!("CARGO_BIN_EXE_jorlin");
    let fix = fixture("fix_desk_float.json");
    let run = |csv: &str, threads: &str| {
        let status = std::process::Command::new(bin)
            .arg("newton")
            .arg(&fix)
            .args(["--iters", "4", "--degree", "16", "--csv", csv])
            .env("JL_THREADS", threads)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(csv).unwrap()
    };
    let a = run("/tmp/jorlin_det_a.csv", "1");
    let b = run("/tmp/jorlin_det_b.csv", "8");
    assert_eq!(a, b, "newton CSV differs across runs");
    assert!(!a.is_empty());
    println!("criterion 9 (newton CSV byte-identical across runs): PASS");
}
