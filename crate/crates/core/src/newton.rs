//! Quadratic iteration for the conjugacy equation `F o Phi = Phi o
//! Lambda^eps`, the degree-by-degree direct solver used as a cross-oracle,
//! and convergence diagnostics.
//!
//! One step from `Phi` with residual `F(Phi) = F o Phi - Phi o Lambda^eps`
//! of order `o`:
//!
//! ```text
//! phi  = L^-1 ( (D Phi o Lambda^eps)^-1 F(Phi) )
//! v    = D Phi . phi
//! Phi' = Phi + v
//! ```
//!
//! after which the residual order is at least `2o - 1`. Correction terms of
//! degree above `2o - 1` cannot improve correctness (the next residual
//! already moves past them), so each step is computed at truncation
//! `min(2o - 1, K)`; iterates stay small polynomials until the orders grow,
//! and the full-`K` residual is recomputed afresh every round for the
//! trace.

use std::time::Instant;

use rug::ops::Pow;
use rug::{Float, Rational};

use crate::error::{CoreError, Result};
use crate::homological::{solve, HomologicalProblem};
use crate::num::{pow2, Coeff};
use crate::series::{
    apply_const_matrix, compose, compose_linear_vec, sup_norm_estimate, LinearMap, MatrixSeries,
    MultiIndex, PolydiscRadii, ScalarSeries, VectorSeries,
};
use crate::spectrum::Spectrum;

/// A germ `F(z) = Lambda^eps z + f(z)` with `f` of order >= 2.
#[derive(Clone, Debug)]
pub struct GermMap<C: Coeff> {
    pub spec: Spectrum<C>,
    pub f: VectorSeries<C>,
}

impl<C: Coeff> GermMap<C> {
    pub fn new(spec: Spectrum<C>, f: VectorSeries<C>) -> Result<Self> {
        if f.nvars() != spec.dim() {
            return Err(CoreError::DimensionMismatch(
                "germ dimension differs from the spectrum".into(),
            ));
        }
        if f.order().map_or(false, |o| o < 2) {
            return Err(CoreError::OrderTooLow(
                "the nonlinear part must have order >= 2".into(),
            ));
        }
        Ok(GermMap { spec, f })
    }

    pub fn trunc(&self) -> u32 {
        self.f.trunc()
    }

    /// Conjugate by the homothety `z -> c z` with `c = 2^cexp`: coefficients
    /// at degree `d` scale by `c^(d-1)`. Powers of two keep the scaling
    /// exact in both arithmetic modes.
    pub fn rescaled(&self, cexp: i32) -> GermMap<C> {
        let n = self.spec.dim();
        let mut f = VectorSeries::new(n, self.f.trunc());
        for i in 0..n {
            for (idx, c) in self.f.component(i).iter() {
                let e = (idx.degree() as i64 - 1) * cexp as i64;
                f.component_mut(i)
                    .insert_add(idx.clone(), scale_pow2(c, e as i32));
            }
        }
        GermMap {
            spec: self.spec.clone(),
            f,
        }
    }
}

fn scale_pow2<C: Coeff>(c: &C, e: i32) -> C {
    // exact multiplication by 2^e
    if e == 0 {
        return c.clone();
    }
    let mut num = 1i64;
    let mut out = c.clone();
    let mut k = e.unsigned_abs();
    while k > 0 {
        let step = k.min(62);
        num = 1i64 << step;
        out = if e > 0 {
            out.mul_i64(num)
        } else {
            out.mul(&C::from_i64(num).inv().unwrap())
        };
        k -= step;
    }
    let _ = num;
    out
}

/// `F(Phi) = F o Phi - Phi o Lambda^eps`, truncated at `limit`. `Phi` must
/// be tangent to the identity; `residual(Id) = f`.
pub fn residual<C: Coeff>(
    phi: &VectorSeries<C>,
    germ: &GermMap<C>,
    limit: u32,
) -> Result<VectorSeries<C>> {
    if !phi.is_tangent_to_identity() {
        return Err(CoreError::Config(
            "residuals are defined for maps tangent to the identity".into(),
        ));
    }
    let jmap = germ.spec.jordan_map();
    let linear = apply_const_matrix(&jmap, phi); // Lambda^eps . Phi
    let nonlinear = crate::series::compose_vec(&germ.f, phi, limit)?;
    let back = compose_linear_vec(&phi.truncated(limit), &jmap); // Phi o Lambda^eps
    Ok(linear.truncated(limit).add(&nonlinear).sub(&back))
}

/// Jacobian of `F` composed with `Phi`: `Lambda^eps + (Df o Phi)`.
fn df_at<C: Coeff>(germ: &GermMap<C>, phi: &VectorSeries<C>, limit: u32) -> Result<MatrixSeries<C>> {
    let n = germ.spec.dim();
    let jac_f = germ.f.jacobian();
    let mut elems = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut e = if jac_f.entry(i, j).is_zero() {
                ScalarSeries::new(n, limit)
            } else {
                compose(jac_f.entry(i, j), phi, limit)?
            };
            if j == i {
                e.insert_add(MultiIndex::zero(n), germ.spec.eigenvalue(i).clone());
            } else if j == i + 1 && germ.spec.superdiagonal_vars().contains(&i) {
                e.insert_add(MultiIndex::zero(n), germ.spec.epsilon().clone());
            }
            elems.push(e);
        }
    }
    Ok(MatrixSeries::from_entries(n, n, elems))
}

/// One quadratic step at truncation `limit`. Returns the new iterate, the
/// update `v`, and the homological solution `phi` behind it.
pub fn newton_step<C: Coeff>(
    phi_nu: &VectorSeries<C>,
    germ: &GermMap<C>,
    limit: u32,
) -> Result<(VectorSeries<C>, VectorSeries<C>, VectorSeries<C>)> {
    let n = germ.spec.dim();
    let resid = residual(phi_nu, germ, limit)?;
    if resid.is_zero() {
        let z = VectorSeries::new(n, limit);
        return Ok((phi_nu.clone(), z.clone(), z));
    }
    let jac = phi_nu.jacobian();
    let shifted = jac.compose_linear(&germ.spec.jordan_map()); // D Phi o Lambda^eps
    let u = shifted.solve_vec(&resid, limit)?;
    let problem = HomologicalProblem::new(germ.spec.clone(), u)?;
    let correction = solve(&problem)?;
    let v = jac.mul_vec(&correction, limit);
    // keep the iterate's full truncation headroom: adding the low-degree
    // update must not demote the polynomial's truncation tag
    let mut next = phi_nu.clone();
    for i in 0..n {
        next.component_mut(i).add_assign_series(v.component(i));
    }
    Ok((next, v, correction))
}

/// Per-iteration record of the quadratic run.
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub nu: u32,
    /// Ball radius `(1 + 2^-(nu+1)) / 2`.
    pub r_nu: Float,
    /// Residual order (significant coefficients only); `None` for a zero
    /// residual.
    pub residual_order: Option<u32>,
    pub residual_norm_upper: Float,
    pub residual_norm_lower: Option<Float>,
    /// `norm(nu) / norm(nu-1)^2`, from the second row on.
    pub c_nu: Option<Float>,
    pub wall_ms: u128,
}

#[derive(Clone, Debug)]
pub struct NewtonTrace {
    pub rows: Vec<TraceRow>,
    pub converged_at_truncation: bool,
    pub diverged: bool,
    /// Binary exponent of the normalization homothety (0 when unscaled).
    pub rescale_exp: i32,
}

pub struct NewtonOutcome<C: Coeff> {
    pub phi: VectorSeries<C>,
    pub trace: NewtonTrace,
}

/// Default smallness target for the normalized germ: `|f|_1 <= 2^-10`.
pub const DELTA0_EXP: i32 = -10;

/// Normalization exponent: the smallest power of two `c = 2^e <= 1` with
/// `sum_alpha |f_alpha| c^(|alpha|-1) <= 2^DELTA0_EXP`.
pub fn rescale_exponent<C: Coeff>(germ: &GermMap<C>) -> i32 {
    let prec = germ.spec.prec().max(64);
    let one = Float::with_val(prec, 1);
    let norm = germ
        .f
        .polydisc_norm(&PolydiscRadii::uniform(one));
    if norm.is_zero() {
        return 0;
    }
    // |f'|_1 <= c * |f|_1 for c <= 1 since every term has degree >= 2
    let target = pow2(DELTA0_EXP, prec);
    if norm <= target {
        return 0;
    }
    let ratio = (target / norm).log2().to_f64();
    ratio.floor() as i32
}

/// Run the quadratic iteration on the normalized germ.
///
/// Stops at `nu_max` steps, at a residual order beyond `k`
/// (converged-at-truncation), or when the residual norm grows on two
/// consecutive rows (divergence: reported, not raised). The returned map is
/// de-normalized.
pub fn run_newton<C: Coeff>(
    germ: &GermMap<C>,
    nu_max: u32,
    k: u32,
    certify_grid: Option<usize>,
) -> Result<NewtonOutcome<C>> {
    let n = germ.spec.dim();
    let prec = germ.spec.prec().max(64);
    let cexp = rescale_exponent(germ);
    let scaled = if cexp == 0 {
        germ.clone()
    } else {
        germ.rescaled(cexp)
    };
    let mut work = GermMap {
        spec: scaled.spec.clone(),
        f: scaled.f.truncated(k),
    };
    work.f = {
        let mut f = work.f.clone();
        f.drop_above(k);
        f
    };
    let sig_bits = prec.saturating_sub(48).max(16);

    let mut phi = VectorSeries::<C>::identity(n, k);
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut converged_at_truncation = false;
    let mut diverged = false;
    let mut grew = 0u32;
    let started = Instant::now();

    for nu in 0..=nu_max {
        let resid = residual(&phi, &work, k)?;
        let order = resid.order_significant(sig_bits);
        let r_nu = (Float::with_val(prec, 1) + pow2(-(nu as i32 + 1), prec))
            / Float::with_val(prec, 2);
        let norm_upper = resid.polydisc_norm(&PolydiscRadii::uniform(r_nu.clone()));
        let norm_lower = certify_grid.map(|g| sup_norm_estimate(&resid, &r_nu, g).0);
        let c_nu = rows.last().and_then(|prev: &TraceRow| {
            let d = prev.residual_norm_upper.clone().square();
            if d.is_zero() {
                None
            } else {
                Some(norm_upper.clone() / d)
            }
        });
        if let Some(prev) = rows.last() {
            if norm_upper > prev.residual_norm_upper && !prev.residual_norm_upper.is_zero() {
                grew += 1;
                if grew >= 2 {
                    diverged = true;
                }
            } else {
                grew = 0;
            }
        }
        rows.push(TraceRow {
            nu,
            r_nu,
            residual_order: order,
            residual_norm_upper: norm_upper,
            residual_norm_lower: norm_lower,
            c_nu,
            wall_ms: started.elapsed().as_millis(),
        });
        if diverged {
            break;
        }
        let Some(order) = order else {
            converged_at_truncation = true;
            break;
        };
        if order > k {
            converged_at_truncation = true;
            break;
        }
        if nu == nu_max {
            break;
        }
        let step_limit = (2 * order - 1).min(k);
        let (next, _, _) = newton_step(&phi, &work, step_limit)?;
        phi = next;
    }

    // undo the normalization: Phi = h_c o Phi' o h_c^{-1}
    let phi = if cexp == 0 {
        phi
    } else {
        let mut out = VectorSeries::new(n, k);
        for i in 0..n {
            for (idx, c) in phi.component(i).iter() {
                let e = (1i64 - idx.degree() as i64) * cexp as i64;
                out.component_mut(i)
                    .insert_add(idx.clone(), scale_pow2(c, e as i32));
            }
        }
        out
    };
    Ok(NewtonOutcome {
        phi,
        trace: NewtonTrace {
            rows,
            converged_at_truncation,
            diverged,
            rescale_exp: cexp,
        },
    })
}

/// Formal linearization degree by degree: at each degree the correction
/// solves a homological equation whose right-hand side comes from lower
/// degrees; unique among maps tangent to the identity.
pub fn poincare_dulac_direct<C: Coeff>(germ: &GermMap<C>, k: u32) -> Result<VectorSeries<C>> {
    let n = germ.spec.dim();
    let mut phi = VectorSeries::<C>::identity(n, k);
    if germ.f.is_zero() {
        return Ok(phi);
    }
    for d in 2..=k {
        let pushed = crate::series::compose_vec(&germ.f, &phi, d)?;
        let mut rhs = VectorSeries::new(n, d);
        let lo = MultiIndex::first_of_degree(n, d);
        let hi = MultiIndex::last_of_degree(n, d);
        for i in 0..n {
            for (idx, c) in pushed.component(i).iter() {
                if *idx >= lo && *idx <= hi {
                    rhs.component_mut(i).insert_add(idx.clone(), c.clone());
                }
            }
        }
        if rhs.is_zero() {
            continue;
        }
        let problem = HomologicalProblem::new(germ.spec.clone(), rhs)?;
        let sol = solve(&problem)?;
        for i in 0..n {
            for (idx, c) in sol.component(i).iter() {
                phi.component_mut(i).insert_add(idx.clone(), c.clone());
            }
        }
    }
    Ok(phi)
}

// ---------------------------------------------------------------------------
// Error schedule

/// One row of the schedule table.
#[derive(Clone, Debug)]
pub struct ScheduleRow {
    pub nu: u32,
    pub by_recursion: Rational,
    pub by_closed_form: Rational,
    /// `2 eps_{nu+1} <= eps_nu`, i.e. the halving property, holding into
    /// this row.
    pub halving_ok: bool,
}

#[derive(Clone, Debug)]
pub struct ScheduleTable {
    pub rows: Vec<ScheduleRow>,
    /// Halving holds on every computed step.
    pub contracts: bool,
    /// The sufficient smallness condition `C^2 eps_0 < 1`.
    pub smallness_ok: bool,
}

/// Exact check of the error schedule `eps_{nu+1} = C^{nu+1} eps_nu^2`
/// against its closed form `eps_nu = C^-(nu+2) (C^2 eps_0)^(2^nu)`.
pub fn schedule_check(c: &Rational, eps0: &Rational, nu_max: u32) -> Result<ScheduleTable> {
    if *c <= Rational::from(1) {
        return Err(CoreError::Config("the schedule constant must exceed 1".into()));
    }
    if eps0.cmp0() != std::cmp::Ordering::Greater {
        return Err(CoreError::Config("eps_0 must be positive".into()));
    }
    if nu_max > 16 {
        return Err(CoreError::Config(
            "schedule table capped at 16 rows (doubly exponential blowup)".into(),
        ));
    }
    let c2e0 = Rational::from(c * c) * eps0;
    let mut rows = Vec::with_capacity(nu_max as usize + 1);
    let mut cur = eps0.clone();
    let mut contracts = true;
    for nu in 0..=nu_max {
        let closed = {
            // C^-(nu+2) (C^2 eps0)^(2^nu)
            let pw = 1u32 << nu;
            let num = c2e0.clone().pow(pw);
            let den = c.clone().pow(nu + 2);
            num / den
        };
        let halving_ok = if nu == 0 {
            true
        } else {
            let prev: &ScheduleRow = &rows[nu as usize - 1];
            Rational::from(2 * &cur) <= prev.by_recursion
        };
        if !halving_ok {
            contracts = false;
        }
        rows.push(ScheduleRow {
            nu,
            by_recursion: cur.clone(),
            by_closed_form: closed,
            halving_ok,
        });
        // eps_{nu+1} = C^{nu+1} eps_nu^2
        cur = c.clone().pow(nu + 1) * Rational::from(&cur * &cur);
    }
    Ok(ScheduleTable {
        rows,
        contracts,
        smallness_ok: c2e0 < 1,
    })
}

// ---------------------------------------------------------------------------
// Identity checks

/// Residual orders of the three one-step identities, checked on truncated
/// series.
#[derive(Clone, Debug)]
pub struct IdentityReport {
    /// Order of `F(Phi+v) - F(Phi) - F'(Phi) v`; should be at least
    /// `2 ord(v)`.
    pub taylor_defect_order: Option<u32>,
    pub taylor_expected: Option<u32>,
    pub taylor_ok: bool,
    /// Chain rule `D(F(Phi)) = (DF o Phi) DPhi - (DPhi o Lambda^eps)
    /// Lambda^eps`, exact (to float tolerance).
    pub chain_rule_ok: bool,
    /// One-step identity `F(Phi + v) = D(F(Phi)) phi + (Taylor defect)`,
    /// checked when the generating homological solution is supplied.
    pub one_step_ok: Option<bool>,
}

pub fn identity_checks<C: Coeff>(
    phi: &VectorSeries<C>,
    v: &VectorSeries<C>,
    correction: Option<&VectorSeries<C>>,
    germ: &GermMap<C>,
    limit: u32,
) -> Result<IdentityReport> {
    let prec = germ.spec.prec().max(64);
    let sig_bits = prec.saturating_sub(48).max(16);
    let tol_bits = prec.saturating_sub(24).max(12);
    let jmap = germ.spec.jordan_map();

    let phi_v = phi.add(v);
    let r_next = residual(&phi_v, germ, limit)?;
    let r_cur = residual(phi, germ, limit)?;

    // F'(Phi) v = (DF o Phi) v - v o Lambda^eps
    let df = df_at(germ, phi, limit)?;
    let fpv = df
        .mul_vec(v, limit)
        .sub(&compose_linear_vec(&v.truncated(limit), &jmap));

    let defect = r_next.sub(&r_cur).sub(&fpv);
    let taylor_defect_order = defect.order_significant(sig_bits);
    let taylor_expected = v.order().map(|o| 2 * o);
    let taylor_ok = match (taylor_defect_order, taylor_expected) {
        (None, _) => true,
        (Some(d), Some(e)) => d >= e.min(limit + 1),
        (Some(_), None) => false,
    };

    // chain rule: D(F(Phi)) == (DF o Phi) DPhi - (DPhi o Lambda^eps) Lambda^eps
    let lhs = r_cur.jacobian();
    let dphi = phi.jacobian();
    let term1 = df.mul_mat(&dphi, limit);
    let term2 = mat_mul_const_right(&dphi.compose_linear(&jmap), &jmap);
    let rhs = term1.sub(&term2);
    let mut chain_rule_ok = true;
    for i in 0..germ.spec.dim() {
        for j in 0..germ.spec.dim() {
            // the derivative drops the top degree; compare through limit-1
            let a = lhs.entry(i, j).truncated(limit.saturating_sub(1));
            let b = rhs.entry(i, j).truncated(limit.saturating_sub(1));
            if !a.agrees_within(&b, tol_bits) {
                chain_rule_ok = false;
            }
        }
    }

    // one-step identity through the step truncation
    let one_step_ok = match correction {
        None => None,
        Some(phi_h) => {
            let dres = rhs; // D(F(Phi)) by the chain rule form
            let lhs2 = r_next.truncated(limit.saturating_sub(1));
            let rhs2 = dres
                .mul_vec(phi_h, limit)
                .add(&defect)
                .truncated(limit.saturating_sub(1));
            Some(lhs2.agrees_within(&rhs2, tol_bits))
        }
    };

    Ok(IdentityReport {
        taylor_defect_order,
        taylor_expected,
        taylor_ok,
        chain_rule_ok,
        one_step_ok,
    })
}

/// `M . A` for a constant sparse matrix `A` given as a row map.
fn mat_mul_const_right<C: Coeff>(m: &MatrixSeries<C>, a: &LinearMap<C>) -> MatrixSeries<C> {
    let (rows, cols) = m.dims();
    let n = m.nvars();
    let mut out = MatrixSeries::new(rows, cols, n, m.trunc());
    for i in 0..rows {
        for k in 0..cols {
            if m.entry(i, k).is_zero() {
                continue;
            }
            for (j, c) in &a.rows[k] {
                out.entry_mut(i, *j).add_scaled(m.entry(i, k), c);
            }
        }
    }
    out
}
