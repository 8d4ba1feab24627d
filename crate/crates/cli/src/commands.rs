//! Command implementations, generic over the coefficient mode and shared by
//! the binary and the integration tests.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use jorlin_core::homological::{
    apply_homological, apply_remainder, block_inverse, nilpotency_index, remainder_bound_report,
    solution_bound_report, solve, HomologicalProblem,
};
use jorlin_core::newton::{
    identity_checks, newton_step, poincare_dulac_direct, residual, run_newton, schedule_check,
    GermMap,
};
use jorlin_core::num::{pow2, Coeff, CRat, CF};
use jorlin_core::series::{MultiIndex, PolydiscRadii, Ranker, VectorSeries};
use jorlin_core::slices::{
    classify, slice_census, verify_invariance, verify_invariance_with, SliceConfig, SliceLabel,
};
use jorlin_core::spectrum::{
    bound_constants, detect_resonances, diophantine_fit, enumerate_quasi_resonances,
    russmann_diagnostic, ModulusClasses, SliceCase, Spectrum,
};
use rug::{Float, Rational};

use crate::mapfile::{MapFile, Mode, PhiFile};
use crate::report::*;
use crate::CliError;

fn inputs_echo(mf: &MapFile, degree: u32) -> Value {
    json!({
        "mapfile": serde_json::to_value(mf).expect("serializable"),
        "degree": degree,
        "precision_bits": mf.effective_precision(),
    })
}

// ---------------------------------------------------------------------------
// analyze

pub struct AnalyzeOpts {
    pub degree: Option<u32>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

pub fn cmd_analyze(path: &Path, opts: &AnalyzeOpts) -> Result<Value, CliError> {
    let mf = MapFile::load(path)?;
    match mf.mode {
        Mode::Rational => analyze_impl::<CRat>(&mf, opts),
        Mode::Float => analyze_impl::<CF>(&mf, opts),
    }
}

fn analyze_impl<C: Coeff>(mf: &MapFile, opts: &AnalyzeOpts) -> Result<Value, CliError> {
    let degree = opts.degree.unwrap_or(mf.truncation);
    let spec: Spectrum<C> = mf.spectrum()?;
    let resonances = detect_resonances(&spec, degree, None);
    let resonance_value: Vec<Value> = resonances
        .iter()
        .map(|(a, j)| json!({"alpha": a.exps(), "component": j + 1}))
        .collect();
    if !resonances.is_empty() {
        let results = json!({
            "resonant": true,
            "resonances": resonance_value,
        });
        let value = report_shell("analyze", inputs_echo(mf, degree), results);
        if let Some(out) = &opts.out {
            write_json(out, &value)?;
        }
        return Err(CliError::Resonance(format!(
            "{} resonances up to degree {degree} (report {})",
            resonances.len(),
            opts.out
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "not written".into())
        )));
    }

    let classes = ModulusClasses::group(&spec, None)?;
    let qr = enumerate_quasi_resonances(&classes, None)?;
    let dio = diophantine_fit(&spec, &classes, &qr, degree)?;
    let growth = russmann_diagnostic(&spec, degree.min(10))?;
    let case = if classes.count() >= 3 && !qr.is_empty() {
        SliceCase::WithQr(&qr)
    } else {
        SliceCase::NoQr
    };
    let constants = match bound_constants(&spec, &classes, &case) {
        Ok(c) => constants_value(&c),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let cfg = SliceConfig::derive(&spec)?;
    let census = slice_census(&cfg, spec.dim(), degree.min(12));

    let results = json!({
        "resonant": false,
        "resonances": resonance_value,
        "modulus_classes": {
            "mu": classes.mu.iter().map(fstr).collect::<Vec<_>>(),
            "classes": classes.classes.iter().map(|c| c.iter().map(|v| v + 1).collect::<Vec<_>>()).collect::<Vec<_>>(),
        },
        "quasi_resonances": qr_value(&qr),
        "diophantine_fit": dio_value(&dio),
        "divisor_growth": growth_value(&growth),
        "constants": constants,
        "slice_census": census.iter().map(|(d, counts)| json!({
            "degree": d,
            "counts": counts.iter().map(|(k, v)| json!({"label": k, "count": v})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    let value = report_shell("analyze", inputs_echo(mf, degree), results);
    if let Some(out) = &opts.out {
        write_json(out, &value)?;
    }
    if let Some(csv) = &opts.csv {
        std::fs::write(csv, dio_csv(&dio))?;
    }
    Ok(value)
}

// ---------------------------------------------------------------------------
// linearize

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Method {
    Direct,
    Newton,
}

pub struct LinearizeOpts {
    pub degree: Option<u32>,
    pub method: Method,
    pub crosscheck: bool,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn cmd_linearize(path: &Path, opts: &LinearizeOpts) -> Result<Value, CliError> {
    let mf = MapFile::load(path)?;
    match mf.mode {
        Mode::Rational => linearize_impl::<CRat>(&mf, opts),
        Mode::Float => linearize_impl::<CF>(&mf, opts),
    }
}

fn newton_iters_for(k: u32) -> u32 {
    // orders run 2, 3, 5, 9, ...: 2^nu + 1 > k within log2(k) + 2 steps
    (32 - (k.max(2)).leading_zeros()) + 2
}

fn linearize_impl<C: Coeff>(mf: &MapFile, opts: &LinearizeOpts) -> Result<Value, CliError> {
    let degree = opts.degree.unwrap_or(mf.truncation);
    let prec = mf.effective_precision();
    let germ: GermMap<C> = mf.germ(degree)?;
    let resonances = detect_resonances(&germ.spec, degree, None);
    if let Some((a, j)) = resonances.first() {
        return Err(CliError::Resonance(format!(
            "lambda^{:?} = lambda_{} up to working tolerance",
            a.exps(),
            j + 1
        )));
    }

    let run_direct = opts.method == Method::Direct || opts.crosscheck;
    let run_newton_method = opts.method == Method::Newton || opts.crosscheck;

    let direct = if run_direct {
        Some(poincare_dulac_direct(&germ, degree)?)
    } else {
        None
    };
    let (newton_phi, trace) = if run_newton_method {
        let out = run_newton(&germ, newton_iters_for(degree), degree, None)?;
        if out.trace.diverged {
            return Err(CliError::Divergence(
                "residual norm grew on two consecutive steps".into(),
            ));
        }
        (Some(out.phi), Some(out.trace))
    } else {
        (None, None)
    };

    let mut crosscheck_ok = None;
    if opts.crosscheck {
        let a = direct.as_ref().unwrap();
        let b = newton_phi.as_ref().unwrap();
        let ok = if C::exact() {
            a == b
        } else {
            a.agrees_within(b, prec.saturating_sub(16))
        };
        crosscheck_ok = Some(ok);
        if !ok {
            return Err(CliError::FailedInvariant(
                "direct and quadratic-iteration results disagree".into(),
            ));
        }
    }

    // with --crosscheck the emitted map is the direct result (canonical
    // across --method once both agree)
    let phi = if opts.crosscheck {
        direct.clone().unwrap()
    } else {
        match opts.method {
            Method::Direct => direct.clone().unwrap(),
            Method::Newton => newton_phi.clone().unwrap(),
        }
    };
    let final_resid = residual(&phi, &germ, degree)?;
    let resid_order = final_resid.order_significant(prec.saturating_sub(48).max(16));

    if let Some(out) = &opts.out {
        let pf = PhiFile::from_series(&phi, mf.mode, prec);
        let text = serde_json::to_string_pretty(&pf).expect("serializable");
        std::fs::write(out, text + "\n")?;
    }

    let results = json!({
        "method": match opts.method { Method::Direct => "direct", Method::Newton => "newton" },
        "crosscheck": crosscheck_ok,
        "residual_order_after": order_str(resid_order),
        "phi_terms": phi.components().iter().map(|c| c.len()).sum::<usize>(),
        "trace": trace.as_ref().map(trace_value),
    });
    let value = report_shell("linearize", inputs_echo(mf, degree), results);
    if let Some(report) = &opts.report {
        write_json(report, &value)?;
    }
    Ok(value)
}

// ---------------------------------------------------------------------------
// verify

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Suite {
    Slices,
    Homological,
    Newton,
    All,
}

pub struct VerifyOpts {
    pub degree: Option<u32>,
    pub suite: Suite,
    pub out: Option<PathBuf>,
    pub phi: Option<PathBuf>,
    /// Test hook: corrupt the classifier to prove counterexamples surface.
    pub inject_fault: Option<String>,
}

pub fn cmd_verify(path: &Path, opts: &VerifyOpts) -> Result<Value, CliError> {
    let mf = MapFile::load(path)?;
    match mf.mode {
        Mode::Rational => verify_impl::<CRat>(&mf, opts),
        Mode::Float => verify_impl::<CF>(&mf, opts),
    }
}

fn verify_impl<C: Coeff>(mf: &MapFile, opts: &VerifyOpts) -> Result<Value, CliError> {
    let degree = opts.degree.unwrap_or(mf.truncation);
    let prec = mf.effective_precision();
    let germ: GermMap<C> = mf.germ(degree)?;
    let spec = germ.spec.clone();
    let mut failures: Vec<String> = Vec::new();
    let mut sections = serde_json::Map::new();

    let do_slices = matches!(opts.suite, Suite::Slices | Suite::All);
    let do_homological = matches!(opts.suite, Suite::Homological | Suite::All);
    let do_newton = matches!(opts.suite, Suite::Newton | Suite::All);

    if do_slices || do_homological {
        let resonances = detect_resonances(&spec, degree, None);
        if let Some((a, j)) = resonances.first() {
            return Err(CliError::Resonance(format!(
                "lambda^{:?} = lambda_{}",
                a.exps(),
                j + 1
            )));
        }
    }

    if do_slices {
        let cfg = SliceConfig::derive(&spec)?;
        let kk = degree.min(8);
        let rep = match opts.inject_fault.as_deref() {
            Some("flip-classifier") => {
                let target = flip_target(&spec);
                verify_invariance_with(&cfg, &spec, kk, move |alpha, cfg| {
                    if Some(alpha) == target.as_ref() {
                        return Ok(SliceLabel::P);
                    }
                    classify(alpha, cfg)
                })?
            }
            Some(other) => {
                return Err(CliError::Parse(format!("unknown fault '{other}'")));
            }
            None => verify_invariance(&cfg, &spec, kk)?,
        };
        if !rep.invariance_ok {
            failures.push(format!(
                "slice invariance: {} counterexamples",
                rep.counterexamples.len()
            ));
        }
        // the shear annihilates the inner Siegel slice
        let mut s1_ok = true;
        for d in 2..=degree.min(6) {
            for alpha in indices_over_class(&cfg.classes.classes[0], spec.dim(), d) {
                let mut v = VectorSeries::<C>::new(spec.dim(), d);
                v.component_mut(0).insert_add(alpha.clone(), C::one());
                if !apply_remainder(&v, &spec).is_zero() {
                    s1_ok = false;
                }
            }
        }
        if !s1_ok {
            failures.push("shear does not annihilate the inner Siegel slice".into());
        }
        let census = slice_census(&cfg, spec.dim(), degree.min(10));
        sections.insert(
            "slices".into(),
            json!({
                "invariance": invariance_value(&rep),
                "s1_annihilated": s1_ok,
                "census": census.iter().map(|(d, counts)| json!({
                    "degree": d,
                    "counts": counts.iter().map(|(k, v)| json!({"label": k, "count": v})).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            }),
        );
    }

    if do_homological {
        let mut notes = serde_json::Map::new();
        // round trip on the germ's nonlinear part
        if !germ.f.is_zero() {
            let problem = HomologicalProblem::new(spec.clone(), germ.f.clone())
                .map_err(CliError::from)?;
            let phi = solve(&problem)?;
            let back = apply_homological(&phi, &spec);
            let ok = if C::exact() {
                back == germ.f
            } else {
                back.agrees_within(&germ.f, prec.saturating_sub(16))
            };
            if !ok {
                failures.push("homological round trip L(solve(g)) = g".into());
            }
            notes.insert("round_trip_solve".into(), json!(ok));
            // uniqueness: solve(L(psi)) = psi with psi = f
            let lf = apply_homological(&germ.f, &spec);
            let p2 = HomologicalProblem::new(spec.clone(), lf).map_err(CliError::from)?;
            let back2 = solve(&p2)?;
            let ok2 = if C::exact() {
                back2 == germ.f
            } else {
                back2.agrees_within(&germ.f, prec.saturating_sub(16))
            };
            if !ok2 {
                failures.push("homological uniqueness solve(L(psi)) = psi".into());
            }
            notes.insert("round_trip_apply".into(), json!(ok2));
        }
        // graded-lex descent of the shear, exhaustively at low degree
        let mut lo_ok = true;
        let ranker = Ranker::new(spec.dim(), degree.min(6));
        for d in 2..=degree.min(6) {
            for r in 0..ranker.slice_len(d) {
                let alpha = MultiIndex::from_exps(ranker.unrank(r as u64, d));
                let mut v = VectorSeries::<C>::new(spec.dim(), d);
                v.component_mut(0).insert_add(alpha.clone(), C::one());
                let img = apply_remainder(&v, &spec);
                for (idx, _) in img.component(0).iter() {
                    if !(idx < &alpha) || idx.degree() != alpha.degree() {
                        lo_ok = false;
                    }
                }
            }
        }
        if !lo_ok {
            failures.push("shear must strictly decrease the graded-lex order".into());
        }
        notes.insert("lex_descent".into(), json!(lo_ok));
        // block inverse identity on all indices of degree <= 4
        let mut inv_ok = true;
        let pows = spec.pow_table(degree.min(4));
        let ranker4 = Ranker::new(spec.dim(), degree.min(4));
        for d in 2..=degree.min(4) {
            for r in 0..ranker4.slice_len(d) {
                let alpha = MultiIndex::from_exps(ranker4.unrank(r as u64, d));
                let m = block_inverse(&alpha, &spec)?;
                if !check_block_inverse(&alpha, &m, &spec, &pows, prec) {
                    inv_ok = false;
                }
            }
        }
        if !inv_ok {
            failures.push("block inverse identity (Omega - eps N) M = I".into());
        }
        notes.insert("block_inverse_identity".into(), json!(inv_ok));

        // nilpotency caps on slice bases
        let cfg = SliceConfig::derive(&spec)?;
        let caps = nilpotency_caps(&spec, &cfg, degree.min(6))?;
        if let Some(msg) = &caps.1 {
            failures.push(msg.clone());
        }
        notes.insert("nilpotency".into(), caps.0);

        // quantitative bound reports
        let classes = ModulusClasses::group(&spec, None)?;
        let qr = enumerate_quasi_resonances(&classes, None)?;
        let case = if classes.count() >= 3 && !qr.is_empty() {
            SliceCase::WithQr(&qr)
        } else {
            SliceCase::NoQr
        };
        match bound_constants(&spec, &classes, &case) {
            Ok(consts) => {
                let radii = PolydiscRadii::new(
                    Float::with_val(prec, 1),
                    Float::with_val(prec, 1) / Float::with_val(prec, 2),
                    spec.jordan_vars(),
                )
                .map_err(CliError::from)?;
                match remainder_bound_report(&germ.f, &radii, &spec, &consts.remainder_coeff) {
                    Ok(rep) => {
                        if !rep.pass {
                            failures.push("remainder norm bound".into());
                        }
                        notes.insert("remainder_bound".into(), bound_report_value(&rep));
                    }
                    Err(jorlin_core::CoreError::Precondition(msg)) => {
                        notes.insert(
                            "remainder_bound".into(),
                            json!({ "skipped": format!("precondition-skipped: {msg}") }),
                        );
                    }
                    Err(e) => return Err(e.into()),
                }
                if !germ.f.is_zero() {
                    let dio = diophantine_fit(&spec, &classes, &qr, degree.min(8))?;
                    let problem = HomologicalProblem::new(spec.clone(), germ.f.clone())
                        .map_err(CliError::from)?;
                    let phi = solve(&problem)?;
                    let r1 = Float::with_val(prec, 1);
                    let rep = solution_bound_report(
                        &germ.f,
                        &phi,
                        &r1,
                        &spec,
                        &cfg,
                        &consts,
                        &dio.sigma_max(),
                    )?;
                    if !rep.pass {
                        failures.push("solution norm sweep shows a growth trend".into());
                    }
                    notes.insert("solution_bound".into(), bound_report_value(&rep));
                }
            }
            Err(e) => {
                notes.insert(
                    "bounds".into(),
                    json!({ "skipped": format!("constants unavailable: {e}") }),
                );
            }
        }
        sections.insert("homological".into(), Value::Object(notes));
    }

    if do_newton {
        let mut notes = serde_json::Map::new();
        let kk = degree.min(16);
        let germ_k = GermMap::new(spec.clone(), germ.f.truncated(kk)).map_err(CliError::from)?;
        let out = run_newton(&germ_k, newton_iters_for(kk), kk, None)?;
        if out.trace.diverged {
            failures.push("quadratic iteration diverged".into());
        }
        let direct = poincare_dulac_direct(&germ_k, kk)?;
        let agree = if C::exact() {
            out.phi == direct
        } else {
            out.phi.agrees_within(&direct, prec.saturating_sub(16))
        };
        if !agree {
            failures.push("quadratic iteration disagrees with the direct solver".into());
        }
        notes.insert("oracle_agreement".into(), json!(agree));
        // order doubling along the recorded rows
        let mut doubling_ok = true;
        let rows = &out.trace.rows;
        for w in rows.windows(2) {
            if let (Some(a), Some(b)) = (w[0].residual_order, w[1].residual_order) {
                if 2 * a - 1 <= kk && b < 2 * a - 1 {
                    doubling_ok = false;
                }
            }
        }
        if !doubling_ok {
            failures.push("residual order did not double".into());
        }
        notes.insert("order_doubling".into(), json!(doubling_ok));
        notes.insert("tangent_to_identity".into(), json!(out.phi.is_tangent_to_identity()));
        if !out.phi.is_tangent_to_identity() {
            failures.push("iterate lost tangency to the identity".into());
        }
        notes.insert("trace".into(), trace_value(&out.trace));

        // one-step identities
        if !germ_k.f.is_zero() {
            let id = VectorSeries::<C>::identity(spec.dim(), kk);
            let (_, v, corr) = newton_step(&id, &germ_k, 3.min(kk))?;
            let rep = identity_checks(&id, &v, Some(&corr), &germ_k, 3.min(kk))?;
            if !(rep.taylor_ok && rep.chain_rule_ok && rep.one_step_ok != Some(false)) {
                failures.push("one-step identities".into());
            }
            notes.insert(
                "identities".into(),
                json!({
                    "taylor_defect_order": order_str(rep.taylor_defect_order),
                    "taylor_expected": rep.taylor_expected,
                    "taylor_ok": rep.taylor_ok,
                    "chain_rule_ok": rep.chain_rule_ok,
                    "one_step_ok": rep.one_step_ok,
                }),
            );
        }

        // schedule arithmetic, exact
        let sched = schedule_check(&Rational::from(10), &Rational::from((1, 1000)), 8)
            .map_err(CliError::from)?;
        let exact = sched
            .rows
            .iter()
            .all(|r| r.by_recursion == r.by_closed_form);
        if !(exact && sched.contracts) {
            failures.push("error schedule arithmetic".into());
        }
        notes.insert("schedule".into(), schedule_value(&sched));
        sections.insert("newton".into(), Value::Object(notes));
    }

    if let Some(phi_path) = &opts.phi {
        let pf = PhiFile::load(phi_path)?;
        let phi: VectorSeries<C> = pf.to_series()?;
        let r = residual(&phi, &germ, degree.min(pf.truncation))?;
        let order = r.order_significant(prec.saturating_sub(48).max(16));
        let ok = order.map_or(true, |o| o > degree.min(pf.truncation));
        if !ok {
            failures.push(format!(
                "reloaded transformation leaves a residual of order {}",
                order_str(order)
            ));
        }
        sections.insert(
            "phi_roundtrip".into(),
            json!({ "pass": ok, "residual_order": order_str(order) }),
        );
    }

    let results = json!({
        "suite": format!("{:?}", opts.suite).to_lowercase(),
        "sections": Value::Object(sections),
        "failures": failures,
        "pass": failures.is_empty(),
    });
    let value = report_shell("verify", inputs_echo(mf, degree), results);
    if let Some(out) = &opts.out {
        write_json(out, &value)?;
    }
    if !failures.is_empty() {
        return Err(CliError::FailedInvariant(failures.join("; ")));
    }
    Ok(value)
}

fn flip_target<C: Coeff>(spec: &Spectrum<C>) -> Option<MultiIndex> {
    // the shear image of z_u z_s (unit-class u, block start s): flipping its
    // label must surface as a counterexample when eps > 0
    let b = spec.blocks().first()?;
    let mut exps = vec![0u16; spec.dim()];
    exps[0] = 1;
    exps[b.start + 1] = 1;
    Some(MultiIndex::new(&exps))
}

fn indices_over_class(vars: &[usize], n: usize, d: u32) -> Vec<MultiIndex> {
    if vars.is_empty() {
        return vec![];
    }
    let ranker = Ranker::new(vars.len(), d);
    (0..ranker.slice_len(d))
        .map(|r| {
            let packed = ranker.unrank(r as u64, d);
            let mut exps = vec![0u16; n];
            for (slot, &v) in vars.iter().enumerate() {
                exps[v] = packed[slot];
            }
            MultiIndex::new(&exps)
        })
        .collect()
}

fn check_block_inverse<C: Coeff>(
    alpha: &MultiIndex,
    m: &[Vec<C>],
    spec: &Spectrum<C>,
    pows: &jorlin_core::spectrum::EigenPows<C>,
    prec: u32,
) -> bool {
    let n = spec.dim();
    let la = pows.at(alpha);
    let superdiag = spec.superdiagonal_vars();
    let tol = pow2(-((prec.saturating_sub(16)) as i32), prec);
    for i in 0..n {
        let wi = la.sub(spec.eigenvalue(i));
        for j in 0..n {
            let mut acc = wi.mul(&m[i][j]);
            if superdiag.contains(&i) {
                let t = spec.epsilon().mul(&m[i + 1][j]);
                acc.sub_assign_c(&t);
            }
            let expect = if i == j { C::one() } else { C::zero() };
            let diff = acc.sub(&expect);
            if C::exact() {
                if !diff.is_zero() {
                    return false;
                }
            } else if diff.abs_sq_float(prec) > tol.clone().square() {
                return false;
            }
        }
    }
    true
}

/// Measure nilpotency on slice bases: the inner slice dies in one hit, the
/// boundary slice within the largest block size, quasi-resonant slices in
/// finitely many.
fn nilpotency_caps<C: Coeff>(
    spec: &Spectrum<C>,
    cfg: &SliceConfig,
    max_deg: u32,
) -> Result<(Value, Option<String>), CliError> {
    let n = spec.dim();
    let mut fail = None;
    // inner slice
    let mut eta_s1 = 0u32;
    for d in 2..=max_deg {
        for alpha in indices_over_class(&cfg.classes.classes[0], n, d) {
            let mut v = VectorSeries::<C>::new(n, d);
            v.component_mut(0).insert_add(alpha, C::one());
            eta_s1 = eta_s1.max(nilpotency_index(&v, spec, cfg)?);
        }
    }
    if eta_s1 > 1 {
        fail = Some(format!("inner-slice nilpotency index {eta_s1} > 1"));
    }
    // boundary slice: one below-unit variable
    let mut eta_s2 = 0u32;
    let cap = spec.max_block_size() as u32;
    for below in cfg.classes.classes[1..].iter().flatten() {
        for d in 1..max_deg {
            for a1 in indices_over_class(&cfg.classes.classes[0], n, d) {
                let mut exps = a1.exps().to_vec();
                exps[*below] += 1;
                let mut v = VectorSeries::<C>::new(n, d + 1);
                v.component_mut(0).insert_add(MultiIndex::new(&exps), C::one());
                eta_s2 = eta_s2.max(nilpotency_index(&v, spec, cfg)?);
            }
        }
    }
    if eta_s2 > cap {
        fail = Some(format!("boundary-slice nilpotency index {eta_s2} > {cap}"));
    }
    // quasi-resonant slices, measured exactly
    let mut qr_rows = Vec::new();
    for entry in &cfg.qr.entries {
        let mut combos: Vec<MultiIndex> = vec![MultiIndex::zero(n)];
        for (cj, &kap) in entry.kappa.iter().enumerate() {
            let opts = indices_over_class(&cfg.classes.classes[cj + 1], n, kap);
            let mut next = Vec::new();
            for c in &combos {
                for o in &opts {
                    next.push(c.add(o));
                }
            }
            combos = next;
        }
        let mut eta = 0u32;
        for c in combos {
            if c.degree() < 2 {
                continue;
            }
            let mut v = VectorSeries::<C>::new(n, c.degree());
            v.component_mut(0).insert_add(c, C::one());
            eta = eta.max(nilpotency_index(&v, spec, cfg)?);
        }
        qr_rows.push(json!({
            "class": entry.class + 1,
            "kappa": entry.kappa,
            "eta": eta,
        }));
    }
    Ok((
        json!({
            "eta_inner": eta_s1,
            "eta_boundary": eta_s2,
            "boundary_cap": cap,
            "qr_slices": qr_rows,
        }),
        fail,
    ))
}

// ---------------------------------------------------------------------------
// newton

pub struct NewtonOpts {
    pub iters: u32,
    pub degree: Option<u32>,
    pub csv: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub certify: bool,
}

pub fn cmd_newton(path: &Path, opts: &NewtonOpts) -> Result<Value, CliError> {
    let mf = MapFile::load(path)?;
    match mf.mode {
        Mode::Rational => newton_impl::<CRat>(&mf, opts),
        Mode::Float => newton_impl::<CF>(&mf, opts),
    }
}

fn newton_impl<C: Coeff>(mf: &MapFile, opts: &NewtonOpts) -> Result<Value, CliError> {
    let degree = opts.degree.unwrap_or(mf.truncation);
    let germ: GermMap<C> = mf.germ(degree)?;
    let resonances = detect_resonances(&germ.spec, degree, None);
    if let Some((a, j)) = resonances.first() {
        return Err(CliError::Resonance(format!(
            "lambda^{:?} = lambda_{}",
            a.exps(),
            j + 1
        )));
    }
    let grid = if opts.certify { Some(16) } else { None };
    let out = run_newton(&germ, opts.iters, degree, grid)?;
    let results = json!({
        "trace": trace_value(&out.trace),
        "doubling": out.trace.rows.windows(2).map(|w| {
            match (w[0].residual_order, w[1].residual_order) {
                (Some(a), Some(b)) => json!(b >= 2 * a - 1),
                _ => json!(true),
            }
        }).collect::<Vec<_>>(),
    });
    let value = report_shell("newton", inputs_echo(mf, degree), results);
    if let Some(csv) = &opts.csv {
        std::fs::write(csv, trace_csv(&out.trace))?;
    }
    if let Some(path) = &opts.out {
        write_json(path, &value)?;
    }
    if out.trace.diverged {
        return Err(CliError::Divergence(
            "residual norm grew on two consecutive steps".into(),
        ));
    }
    Ok(value)
}
