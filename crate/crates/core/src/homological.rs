//! The homological operator `L(phi) = phi o (Lambda + eps N) - (Lambda +
//! eps N) phi`, its exact per-degree solver, and the quantitative bound
//! reports.
//!
//! `L` splits as `(Omega - eps N) + R`, where `Omega` acts coefficientwise
//! by `diag(lambda^alpha - lambda_j)`, `N` is the fixed nilpotent part, and
//! the remainder `R(phi) = phi o (Lambda + eps N) - phi o Lambda` collects
//! the shear's contribution to the substitution.
//!
//! Two structural facts drive the solver:
//! - `L` preserves total degree, so degrees decouple;
//! - every monomial `R` produces from `z^alpha` has the same block-degree
//!   signature as `alpha` and strictly smaller graded-lex order (exponents
//!   only ever move rightward along a block).
//!
//! Within one degree, back-substitution from the largest monomial downward
//! therefore terminates: `phi_alpha = (Omega_alpha - eps N)^{-1} (g_alpha -
//! [R phi_solved]_alpha)`.

use std::collections::BTreeMap;

use rug::ops::Pow;
use rug::Float;

use crate::error::{CoreError, Result};
use crate::num::{pow2, Coeff};
use crate::series::{zero_like, MultiIndex, PolydiscRadii, SubstCache, VectorSeries};
use crate::slices::{classify, SliceConfig, SliceLabel};
use crate::spectrum::{BoundConstants, EigenPows, Spectrum};

/// A right-hand side for `L(phi) = g`: order >= 2, matching dimension.
#[derive(Clone, Debug)]
pub struct HomologicalProblem<C: Coeff> {
    pub spec: Spectrum<C>,
    pub rhs: VectorSeries<C>,
}

impl<C: Coeff> HomologicalProblem<C> {
    pub fn new(spec: Spectrum<C>, rhs: VectorSeries<C>) -> Result<Self> {
        if rhs.nvars() != spec.dim() {
            return Err(CoreError::DimensionMismatch(
                "right-hand side dimension differs from the spectrum".into(),
            ));
        }
        if rhs.order().map_or(false, |o| o < 2) {
            return Err(CoreError::OrderTooLow(
                "homological right-hand sides must have order >= 2".into(),
            ));
        }
        Ok(HomologicalProblem { spec, rhs })
    }
}

/// `(Omega - eps N) phi`: coefficientwise `(lambda^alpha - lambda_i)
/// phi_i[alpha] - eps phi_{i+1}[alpha]` on superdiagonal rows.
pub fn apply_diagonal_part<C: Coeff>(
    phi: &VectorSeries<C>,
    spec: &Spectrum<C>,
) -> VectorSeries<C> {
    let n = spec.dim();
    let kmax = phi.max_degree().unwrap_or(0);
    let pows = spec.pow_table(kmax);
    let eps = spec.epsilon();
    let superdiag = spec.superdiagonal_vars();
    let mut out = VectorSeries::new(n, phi.trunc());
    for i in 0..n {
        for (alpha, c) in phi.component(i).iter() {
            let w = pows.at(alpha).sub(spec.eigenvalue(i));
            out.component_mut(i).insert_add(alpha.clone(), c.mul(&w));
        }
        if superdiag.contains(&i) && !eps.is_zero() {
            let neg_eps = eps.neg();
            out.component_mut(i)
                .add_scaled(phi.component(i + 1), &neg_eps);
        }
    }
    out
}

/// Shear terms of one monomial: every monomial of `z^alpha o (Lambda + eps
/// N)` except the diagonal image `lambda^alpha z^alpha` itself, which the
/// subtraction in `R` cancels. Dropping it by key (the only source of the
/// exponent `alpha` is the all-diagonal choice) keeps the support exact in
/// float mode too.
fn shear_terms<C: Coeff>(
    alpha: &MultiIndex,
    cache: &mut SubstCache<'_, C>,
) -> Vec<(MultiIndex, C)> {
    let mut out = Vec::new();
    let one = C::one();
    cache.expand_monomial(alpha, &one, &mut |e, v| {
        let idx = MultiIndex::from_exps(e);
        if idx != *alpha {
            out.push((idx, v));
        }
    });
    out
}

/// `R(phi) = phi o (Lambda + eps N) - phi o Lambda`.
///
/// Every output monomial keeps its source's block-degree signature and has
/// strictly smaller graded-lex order.
pub fn apply_remainder<C: Coeff>(phi: &VectorSeries<C>, spec: &Spectrum<C>) -> VectorSeries<C> {
    let n = spec.dim();
    let jmap = spec.jordan_map();
    let mut cache = SubstCache::new(&jmap);
    let mut out = VectorSeries::new(n, phi.trunc());
    if spec.epsilon().is_zero() || spec.blocks().is_empty() {
        return out;
    }
    for i in 0..n {
        for (alpha, c) in phi.component(i).iter() {
            for (idx, base) in shear_terms(alpha, &mut cache) {
                let mut v = zero_like(c);
                v.acc_mul(c, &base);
                out.component_mut(i).insert_add(idx, v);
            }
        }
    }
    out
}

/// `L(phi)` assembled from its two parts.
pub fn apply_homological<C: Coeff>(phi: &VectorSeries<C>, spec: &Spectrum<C>) -> VectorSeries<C> {
    apply_diagonal_part(phi, spec).add(&apply_remainder(phi, spec))
}

/// Divisor row `lambda^alpha - lambda_i` for every `i`, with the resonance
/// check.
fn divisors<C: Coeff>(
    alpha: &MultiIndex,
    spec: &Spectrum<C>,
    pows: &EigenPows<C>,
) -> Result<Vec<C>> {
    let la = pows.at(alpha);
    (0..spec.dim())
        .map(|j| {
            let w = la.sub(spec.eigenvalue(j));
            if w.is_zero() {
                Err(CoreError::Resonance {
                    alpha: alpha.exps().to_vec(),
                    j,
                })
            } else {
                Ok(w)
            }
        })
        .collect()
}

/// `(Omega_alpha - eps N)^{-1}` as a dense matrix: the nilpotent expansion
/// `Omega^{-1} + sum_s eps^s Omega^{-s-1} N^s` placed within each block.
pub fn block_inverse<C: Coeff>(alpha: &MultiIndex, spec: &Spectrum<C>) -> Result<Vec<Vec<C>>> {
    let n = spec.dim();
    let pows = spec.pow_table(alpha.degree());
    let w = divisors(alpha, spec, &pows)?;
    let winv: Vec<C> = w.iter().map(|x| x.inv().unwrap()).collect();
    let eps = spec.epsilon();
    let mut m: Vec<Vec<C>> = (0..n).map(|_| vec![C::zero(); n]).collect();
    for (i, inv) in winv.iter().enumerate() {
        m[i][i] = inv.clone();
    }
    if !eps.is_zero() {
        for b in spec.blocks() {
            for i in b.start..b.start + b.size {
                let mut factor = winv[i].clone(); // w_i^{-1}
                for s in 1..b.start + b.size - i {
                    // eps^s w_i^{-(s+1)}
                    factor = factor.mul(&winv[i]).mul(eps);
                    m[i][i + s] = factor.clone();
                }
            }
        }
    }
    Ok(m)
}

/// Apply `(Omega_alpha - eps N)^{-1}` to one coefficient vector without
/// materializing the matrix.
fn apply_block_inverse<C: Coeff>(
    winv: &[C],
    eps: &C,
    spec: &Spectrum<C>,
    rhs: &[C],
) -> Vec<C> {
    let n = rhs.len();
    let mut out: Vec<C> = (0..n).map(|i| winv[i].mul(&rhs[i])).collect();
    if !eps.is_zero() {
        for b in spec.blocks() {
            for i in b.start..b.start + b.size {
                let mut factor = winv[i].clone();
                for s in 1..b.start + b.size - i {
                    factor = factor.mul(&winv[i]).mul(eps);
                    if !rhs[i + s].is_zero() {
                        out[i].acc_mul(&factor, &rhs[i + s]);
                    }
                }
            }
        }
    }
    out
}

/// Solve `L(phi) = g` exactly per homogeneous degree by graded-lex
/// back-substitution. The solution is the unique one of order >= 2.
pub fn solve<C: Coeff>(problem: &HomologicalProblem<C>) -> Result<VectorSeries<C>> {
    let spec = &problem.spec;
    let g = &problem.rhs;
    let n = spec.dim();
    let k = g.trunc();
    let pows = spec.pow_table(k.max(g.max_degree().unwrap_or(0)));
    let jmap = spec.jordan_map();
    let mut cache = SubstCache::new(&jmap);
    let eps = spec.epsilon().clone();
    let shear_active = !eps.is_zero() && !spec.blocks().is_empty();
    let mut phi = VectorSeries::new(n, k);

    let degrees: Vec<u32> = {
        let mut ds: Vec<u32> = g
            .components()
            .iter()
            .flat_map(|c| c.iter().map(|(idx, _)| idx.degree()))
            .collect();
        ds.sort_unstable();
        ds.dedup();
        ds
    };

    for d in degrees {
        // vector-valued pending right-hand side for this degree
        let mut pending: BTreeMap<MultiIndex, Vec<C>> = BTreeMap::new();
        let lo = MultiIndex::first_of_degree(n, d);
        let hi = MultiIndex::last_of_degree(n, d);
        for i in 0..n {
            for (idx, c) in problem.rhs.component(i).iter() {
                if *idx < lo || *idx > hi {
                    continue;
                }
                pending
                    .entry(idx.clone())
                    .or_insert_with(|| vec![C::zero(); n])[i]
                    .add_assign_c(c);
            }
        }
        while let Some((alpha, rhs)) = pending.pop_last() {
            if rhs.iter().all(|c| c.is_zero()) {
                continue;
            }
            let w = divisors(&alpha, spec, &pows)?;
            let winv: Vec<C> = w.iter().map(|x| x.inv().unwrap()).collect();
            let coeffs = apply_block_inverse(&winv, &eps, spec, &rhs);
            if shear_active {
                let terms = shear_terms(&alpha, &mut cache);
                for (beta, base) in &terms {
                    debug_assert!(*beta < alpha);
                    let slot = pending
                        .entry(beta.clone())
                        .or_insert_with(|| vec![C::zero(); n]);
                    for (i, ci) in coeffs.iter().enumerate() {
                        if !ci.is_zero() {
                            slot[i].sub_mul(ci, base);
                        }
                    }
                }
            }
            for (i, c) in coeffs.into_iter().enumerate() {
                phi.component_mut(i).insert_add(alpha.clone(), c);
            }
        }
    }
    Ok(phi)
}

/// Solve with the right-hand side confined to a label set; the solution
/// stays in the same set (slice invariance), which is checked on the way
/// out.
pub fn solve_on_slice<C: Coeff>(
    problem: &HomologicalProblem<C>,
    cfg: &SliceConfig,
    keep: impl Fn(&SliceLabel) -> bool + Copy,
) -> Result<VectorSeries<C>> {
    for comp in problem.rhs.components() {
        for (idx, _) in comp.iter() {
            if !keep(&classify(idx, cfg)?) {
                return Err(CoreError::NotInSlice(format!("{:?}", idx)));
            }
        }
    }
    let phi = solve(problem)?;
    for comp in phi.components() {
        for (idx, _) in comp.iter() {
            if !keep(&classify(idx, cfg)?) {
                return Err(CoreError::NotInSlice(format!(
                    "solution escaped the slice at {:?}",
                    idx
                )));
            }
        }
    }
    Ok(phi)
}

/// Neumann-form solver used as a cross-check on Siegel-slice inputs:
/// `phi = sum_j (-1)^j [(Omega - eps N)^{-1} R]^j (Omega - eps N)^{-1} g`,
/// a finite sum because `R` is nilpotent there.
pub fn solve_neumann_siegel<C: Coeff>(
    problem: &HomologicalProblem<C>,
    cfg: &SliceConfig,
) -> Result<VectorSeries<C>> {
    for comp in problem.rhs.components() {
        for (idx, _) in comp.iter() {
            if !classify(idx, cfg)?.is_siegel() {
                return Err(CoreError::NotInSlice(format!("{:?}", idx)));
            }
        }
    }
    let spec = &problem.spec;
    let n = spec.dim();
    let k = problem.rhs.trunc();
    let pows = spec.pow_table(k.max(problem.rhs.max_degree().unwrap_or(0)));
    let eps = spec.epsilon().clone();

    let block_inv_series = |v: &VectorSeries<C>| -> Result<VectorSeries<C>> {
        let mut out = VectorSeries::new(n, k);
        let mut keys: std::collections::BTreeSet<MultiIndex> = Default::default();
        for comp in v.components() {
            keys.extend(comp.iter().map(|(idx, _)| idx.clone()));
        }
        for alpha in keys {
            let w = divisors(&alpha, spec, &pows)?;
            let winv: Vec<C> = w.iter().map(|x| x.inv().unwrap()).collect();
            let rhs: Vec<C> = (0..n)
                .map(|i| v.component(i).get(&alpha).cloned().unwrap_or_else(C::zero))
                .collect();
            for (i, c) in apply_block_inverse(&winv, &eps, spec, &rhs)
                .into_iter()
                .enumerate()
            {
                out.component_mut(i).insert_add(alpha.clone(), c);
            }
        }
        Ok(out)
    };

    let mut term = block_inv_series(&problem.rhs)?;
    let mut acc = term.clone();
    let mut sign_neg = true;
    let cap = 4 * (problem.rhs.components().iter().map(|c| c.len()).sum::<usize>() + 4);
    for _ in 0..cap {
        let r = apply_remainder(&term, spec);
        if r.is_zero() {
            return Ok(acc);
        }
        term = block_inv_series(&r)?;
        acc = if sign_neg { acc.sub(&term) } else { acc.add(&term) };
        sign_neg = !sign_neg;
        if term.is_zero() {
            return Ok(acc);
        }
    }
    Err(CoreError::Config(
        "Neumann iteration did not terminate; input not nilpotent under the shear".into(),
    ))
}

/// Smallest `eta` with `R^eta g = 0`; requires Siegel-slice support.
pub fn nilpotency_index<C: Coeff>(
    g: &VectorSeries<C>,
    spec: &Spectrum<C>,
    cfg: &SliceConfig,
) -> Result<u32> {
    for comp in g.components() {
        for (idx, _) in comp.iter() {
            if !classify(idx, cfg)?.is_siegel() {
                return Err(CoreError::NotInSlice(format!("{:?}", idx)));
            }
        }
    }
    let mut cur = g.clone();
    let mut eta = 0u32;
    let cap = 4 * (g.components().iter().map(|c| c.len()).sum::<usize>() as u32 + 4)
        + 4 * g.max_degree().unwrap_or(0);
    while !cur.is_zero() {
        cur = apply_remainder(&cur, spec);
        eta += 1;
        if eta > cap {
            return Err(CoreError::Config(
                "shear iteration did not terminate on the given support".into(),
            ));
        }
    }
    Ok(eta)
}

/// Measured nilpotency bound for the slice structure: the maximum of 1, the
/// largest block size, and the measured index over each quasi-resonance
/// signature's block-variable basis.
pub fn slice_nilpotency_bound<C: Coeff>(spec: &Spectrum<C>, cfg: &SliceConfig) -> Result<u32> {
    let n = spec.dim();
    let mut eta = spec.max_block_size() as u32;
    eta = eta.max(1);
    for entry in &cfg.qr.entries {
        // basis monomials with block-degree signature kappa and no
        // unit-class part; the class-1 factor never changes the count
        let mut combos: Vec<MultiIndex> = vec![MultiIndex::zero(n)];
        for (cj, &kap) in entry.kappa.iter().enumerate() {
            let class = &cfg.classes.classes[cj + 1];
            let opts = indices_over_local(class, n, kap);
            let mut next = Vec::with_capacity(combos.len() * opts.len());
            for c in &combos {
                for o in &opts {
                    next.push(c.add(o));
                }
            }
            combos = next;
        }
        let mut g = VectorSeries::<C>::new(n, combos.iter().map(|c| c.degree()).max().unwrap_or(2));
        for c in combos {
            if c.degree() >= 2 {
                g.component_mut(0).insert_add(c, C::one());
            }
        }
        if g.is_zero() {
            continue;
        }
        let measured = nilpotency_index(&g, spec, cfg)?;
        eta = eta.max(measured);
    }
    Ok(eta)
}

fn indices_over_local(vars: &[usize], n: usize, d: u32) -> Vec<MultiIndex> {
    let k = vars.len();
    if k == 0 {
        return if d == 0 {
            vec![MultiIndex::zero(n)]
        } else {
            vec![]
        };
    }
    let ranker = crate::series::Ranker::new(k, d);
    (0..ranker.slice_len(d))
        .map(|r| {
            let packed = ranker.unrank(r as u64, d);
            let mut exps: crate::series::Exps = smallvec::smallvec![0u16; n];
            for (slot, &v) in vars.iter().enumerate() {
                exps[v] = packed[slot];
            }
            MultiIndex::from_exps(exps)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Bound reports

/// One measured-versus-theoretical comparison.
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub condition: String,
    pub measured: Float,
    pub theoretical: Float,
    pub pass: bool,
    pub params: Vec<(String, String)>,
    /// Set when the report could not be measured (zero input etc.).
    pub skipped: Option<String>,
}

/// Float slack applied to bound comparisons: `1 + 2^-20`.
fn slack(prec: u32) -> Float {
    Float::with_val(prec, 1) + pow2(-20, prec)
}

/// Measured shear-remainder ratio `|R phi| / (eps |phi|)` against the
/// blockwise coefficient. Precondition: `eps < (1 - mu_block)/2` for every
/// block (the condition the remainder estimate is derived under).
pub fn remainder_bound_report<C: Coeff>(
    phi: &VectorSeries<C>,
    radii: &PolydiscRadii,
    spec: &Spectrum<C>,
    remainder_coeff: &Float,
) -> Result<BoundReport> {
    let prec = radii.prec().max(spec.prec());
    let eps = spec.epsilon().abs_float(prec);
    for b in spec.blocks() {
        let mu_d = spec.eigenvalue(b.start).abs_float(prec);
        let head = (Float::with_val(prec, 1) - mu_d) / 2u32;
        if eps >= head {
            return Err(CoreError::Precondition(format!(
                "eps = {} is not below (1 - mu_block)/2 = {}",
                eps.to_f64(),
                head.to_f64()
            )));
        }
    }
    let params = vec![
        ("r".into(), radii.r.to_string()),
        ("rho".into(), radii.rho.to_string()),
        ("eps".into(), eps.to_string()),
    ];
    let denom = phi.polydisc_norm(radii);
    if denom.is_zero() || eps.is_zero() {
        return Ok(BoundReport {
            condition: "remainder_norm".into(),
            measured: Float::new(prec),
            theoretical: remainder_coeff.clone(),
            pass: true,
            params,
            skipped: Some("ratio undefined for zero input or zero shear".into()),
        });
    }
    let num = apply_remainder(phi, spec).polydisc_norm(radii);
    let measured = num / (eps * denom);
    let pass = measured <= remainder_coeff.clone() * slack(prec);
    Ok(BoundReport {
        condition: "remainder_norm".into(),
        measured,
        theoretical: remainder_coeff.clone(),
        pass,
        params,
        skipped: None,
    })
}

/// Sweep report for the solution estimate: ratios
/// `|phi|_{r-delta} * delta^(theta+n) / |g|_r` over `delta = r 2^-k`,
/// `k = 1..6`. The constant in the estimate is existential, so the check is
/// for boundedness: the fitted log-log slope of the ratio against `1/delta`
/// must not exhibit a growth trend (slope <= 1/4).
pub fn solution_bound_report<C: Coeff>(
    g: &VectorSeries<C>,
    phi: &VectorSeries<C>,
    r: &Float,
    spec: &Spectrum<C>,
    cfg: &SliceConfig,
    constants: &BoundConstants,
    sigma: &Float,
) -> Result<BoundReport> {
    let prec = r.prec().max(spec.prec());
    let n = spec.dim() as u32;
    let eta = slice_nilpotency_bound(spec, cfg)?;
    // theta = max(sigma n, sigma n^2, sigma eta n)
    let scale = n.max(n * n).max(eta * n);
    let theta = (sigma.clone() * Float::with_val(prec, scale)).min(&Float::with_val(prec, 64));
    let exponent = theta.clone() + Float::with_val(prec, n);
    let gnorm = g.polydisc_norm(&PolydiscRadii::uniform(r.clone()));
    let mut params = vec![
        ("r".into(), r.to_string()),
        ("theta".into(), theta.to_string()),
        ("eta".into(), eta.to_string()),
        ("eps_max".into(), constants.eps_max.to_string()),
    ];
    if cfg.classes.classes[0].len() > 1 {
        params.push((
            "unit_class_size".into(),
            format!(
                "{} (estimates applied per unit-modulus eigenvalue)",
                cfg.classes.classes[0].len()
            ),
        ));
    }
    if gnorm.is_zero() {
        return Ok(BoundReport {
            condition: "solution_norm_sweep".into(),
            measured: Float::new(prec),
            theoretical: Float::new(prec),
            pass: true,
            params,
            skipped: Some("zero right-hand side".into()),
        });
    }
    let mut ratios = Vec::new();
    for k in 1..=6u32 {
        let delta = r.clone() / pow2(k as i32, prec);
        let shrunk = r.clone() - &delta;
        let num = phi.polydisc_norm(&PolydiscRadii::uniform(shrunk));
        let ratio = num * delta.pow(&exponent) / &gnorm;
        params.push((format!("ratio_k{k}"), ratio.to_string()));
        ratios.push(ratio);
    }
    // least-squares slope of ln(ratio) against k ln 2 (i.e. ln(1/delta))
    let pts: Vec<(f64, f64)> = ratios
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_zero())
        .map(|(i, v)| ((i as f64 + 1.0) * std::f64::consts::LN_2, v.clone().ln().to_f64()))
        .collect();
    let slope = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    params.push(("log_slope".into(), format!("{slope:.6}")));
    let max_ratio = ratios
        .iter()
        .cloned()
        .fold(Float::new(prec), |a, b| if b > a { b } else { a });
    Ok(BoundReport {
        condition: "solution_norm_sweep".into(),
        measured: max_ratio,
        theoretical: Float::new(prec),
        pass: slope <= 0.25,
        params,
        skipped: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::CRat;
    use crate::series::ScalarSeries;
    use crate::spectrum::JordanBlock;
    use rug::Rational;

    /// n=2, one 2-block at lambda = 1/2, eps rational.
    fn block2(eps_num: i64, eps_den: i64) -> Spectrum<CRat> {
        Spectrum::new(
            vec![CRat::from_ratio(1, 2), CRat::from_ratio(1, 2)],
            vec![JordanBlock { start: 0, size: 2 }],
            CRat::from_ratio(eps_num, eps_den),
        )
        .unwrap()
    }

    fn mono(n: usize, k: u32, comp: usize, exps: &[u16], num: i64, den: i64) -> VectorSeries<CRat> {
        let mut v = VectorSeries::new(n, k);
        v.component_mut(comp)
            .insert_add(MultiIndex::new(exps), CRat::from_ratio(num, den));
        v
    }

    #[test]
    fn diagonal_part_examples() {
        let spec = block2(1, 100);
        // phi = e1 z2^2: N e1 = 0, so output is (1/4 - 1/2) e1 z2^2
        let phi = mono(2, 3, 0, &[0, 2], 1, 1);
        let out = apply_diagonal_part(&phi, &spec);
        assert_eq!(
            out.component(0).coeff_at(&[0, 2]),
            CRat::from_ratio(-1, 4)
        );
        assert!(out.component(1).is_zero());

        // phi = e2 z2^2: picks up -eps on the first row
        let phi2 = mono(2, 3, 1, &[0, 2], 1, 1);
        let out2 = apply_diagonal_part(&phi2, &spec);
        assert_eq!(
            out2.component(1).coeff_at(&[0, 2]),
            CRat::from_ratio(-1, 4)
        );
        assert_eq!(
            out2.component(0).coeff_at(&[0, 2]),
            CRat::from_ratio(-1, 100)
        );

        // eps = 0 reduces to the pure diagonal action
        let spec0 = block2(0, 1);
        let out3 = apply_diagonal_part(&phi2, &spec0);
        assert!(out3.component(0).is_zero());
    }

    #[test]
    fn remainder_examples() {
        let spec = block2(1, 100);
        // phi = z1 z2 -> eps lambda z2^2 = (eps/2) z2^2
        let phi = mono(2, 3, 0, &[1, 1], 1, 1);
        let out = apply_remainder(&phi, &spec);
        assert_eq!(
            out.component(0).coeff_at(&[0, 2]),
            CRat::from_ratio(1, 200)
        );
        assert_eq!(out.component(0).len(), 1);

        // phi = z2^2: last block variable is a fixed direction
        let phi2 = mono(2, 3, 0, &[0, 2], 1, 1);
        assert!(apply_remainder(&phi2, &spec).is_zero());

        // phi = z1^2 -> 2 lambda eps z1 z2 + eps^2 z2^2
        let phi3 = mono(2, 3, 0, &[2, 0], 1, 1);
        let out3 = apply_remainder(&phi3, &spec);
        assert_eq!(
            out3.component(0).coeff_at(&[1, 1]),
            CRat::from_ratio(1, 100)
        );
        assert_eq!(
            out3.component(0).coeff_at(&[0, 2]),
            CRat::from_ratio(1, 10000)
        );
    }

    #[test]
    fn block_inverse_examples() {
        let spec = block2(1, 100);
        // alpha = (0,2): Omega = diag(-1/4, -1/4), inverse [[-4, 16 eps],[0, -4]]
        let m = block_inverse(&MultiIndex::new(&[0, 2]), &spec).unwrap();
        assert_eq!(m[0][0], CRat::from_ratio(-4, 1));
        assert_eq!(m[1][1], CRat::from_ratio(-4, 1));
        assert_eq!(m[0][1], CRat::from_ratio(16, 100));
        assert!(m[1][0].is_zero());

        // eps = 0: diagonal of 1/(lambda^alpha - lambda_j)
        let spec0 = block2(0, 1);
        let m0 = block_inverse(&MultiIndex::new(&[0, 2]), &spec0).unwrap();
        assert!(m0[0][1].is_zero());
        assert_eq!(m0[0][0], CRat::from_ratio(-4, 1));

        // resonant alpha rejected
        let res = Spectrum::new(
            vec![CRat::from_ratio(1, 2), CRat::from_ratio(1, 4)],
            vec![],
            CRat::zero(),
        )
        .unwrap();
        assert!(matches!(
            block_inverse(&MultiIndex::new(&[2, 0]), &res),
            Err(CoreError::Resonance { .. })
        ));
    }

    #[test]
    fn block_inverse_is_inverse() {
        // (Omega - eps N) . M = I for a 3-block
        let spec = Spectrum::new(
            vec![
                CRat::from_ratio(1, 3),
                CRat::from_ratio(1, 3),
                CRat::from_ratio(1, 3),
            ],
            vec![JordanBlock { start: 0, size: 3 }],
            CRat::from_ratio(1, 7),
        )
        .unwrap();
        let alpha = MultiIndex::new(&[1, 1, 1]);
        let m = block_inverse(&alpha, &spec).unwrap();
        let pows = spec.pow_table(3);
        let la = pows.at(&alpha);
        // rows of (Omega - eps N)
        let n = 3;
        let mut prod = vec![vec![CRat::zero(); n]; n];
        for i in 0..n {
            let wi = la.sub(spec.eigenvalue(i));
            for j in 0..n {
                prod[i][j].acc_mul(&wi, &m[i][j]);
                if i + 1 < n {
                    // superdiagonal -eps
                    let t = spec.epsilon().mul(&m[i + 1][j]);
                    prod[i][j].sub_assign_c(&t);
                }
            }
        }
        for (i, row) in prod.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v == CRat::one(), i == j, "entry ({i},{j}) = {v:?}");
                if i != j {
                    assert!(v.is_zero());
                }
            }
        }
    }

    #[test]
    fn solve_worked_example() {
        // g = (z2^2, 0): phi = (-4 z2^2, 0) for any eps
        for eps in [(0i64, 1i64), (1, 100), (1, 10)] {
            let spec = block2(eps.0, eps.1);
            let g = mono(2, 3, 0, &[0, 2], 1, 1);
            let problem = HomologicalProblem::new(spec.clone(), g.clone()).unwrap();
            let phi = solve(&problem).unwrap();
            assert_eq!(
                phi.component(0).coeff_at(&[0, 2]),
                CRat::from_ratio(-4, 1)
            );
            assert!(phi.component(1).is_zero());
            // verified by reapplying L
            assert_eq!(apply_homological(&phi, &spec), g);
        }
    }

    #[test]
    fn solve_zero_and_roundtrip() {
        let spec = block2(1, 100);
        let zero = VectorSeries::new(2, 4);
        let p = HomologicalProblem::new(spec.clone(), zero).unwrap();
        assert!(solve(&p).unwrap().is_zero());

        // g = L(psi) recovers psi
        let mut psi = VectorSeries::new(2, 4);
        psi.component_mut(0)
            .insert_add(MultiIndex::new(&[2, 0]), CRat::from_ratio(3, 7));
        psi.component_mut(0)
            .insert_add(MultiIndex::new(&[1, 1]), CRat::from_ratio(-1, 3));
        psi.component_mut(1)
            .insert_add(MultiIndex::new(&[0, 3]), CRat::from_ratio(5, 2));
        psi.component_mut(1)
            .insert_add(MultiIndex::new(&[2, 1]), CRat::from_ratio(1, 6));
        let g = apply_homological(&psi, &spec);
        let p2 = HomologicalProblem::new(spec.clone(), g).unwrap();
        assert_eq!(solve(&p2).unwrap(), psi);
    }

    /// n=4: Pythagorean unit phase, 2-block at modulus 1/2, then 1/4.
    fn spec_m3_block() -> Spectrum<CRat> {
        let u = CRat::new(Rational::from((3, 5)), Rational::from((4, 5)));
        let half = CRat::new(Rational::from((3, 10)), Rational::from((4, 10)));
        Spectrum::new(
            vec![u, half.clone(), half, CRat::from_ratio(1, 4)],
            vec![JordanBlock { start: 1, size: 2 }],
            CRat::from_ratio(1, 100),
        )
        .unwrap()
    }

    #[test]
    fn nilpotency_examples() {
        let spec = spec_m3_block();
        let cfg = SliceConfig::derive(&spec).unwrap();
        // g = z1^2 z2 (block starts at var 1): R g = eps lambda1^2 z1^2 z3,
        // then 0 -> eta = 2 = block size
        let g = mono(4, 4, 0, &[2, 1, 0, 0], 1, 1);
        assert_eq!(nilpotency_index(&g, &spec, &cfg).unwrap(), 2);

        // g = z1^3: already annihilated
        let g2 = mono(4, 4, 0, &[3, 0, 0, 0], 1, 1);
        assert_eq!(nilpotency_index(&g2, &spec, &cfg).unwrap(), 1);

        // Poincare support rejected
        let g3 = mono(4, 4, 0, &[0, 1, 0, 1], 1, 1);
        assert!(nilpotency_index(&g3, &spec, &cfg).is_err());
    }

    #[test]
    fn siegel_slice_solver_agrees_with_neumann() {
        let spec = spec_m3_block();
        let cfg = SliceConfig::derive(&spec).unwrap();
        // quasi-resonance slice: signature (2, 0) targets modulus 1/4
        let mut g = VectorSeries::new(4, 5);
        g.component_mut(3)
            .insert_add(MultiIndex::new(&[1, 2, 0, 0]), CRat::from_ratio(2, 3));
        g.component_mut(0)
            .insert_add(MultiIndex::new(&[0, 1, 1, 0]), CRat::from_ratio(-1, 5));
        g.component_mut(2)
            .insert_add(MultiIndex::new(&[3, 0, 2, 0]), CRat::from_ratio(1, 9));
        let problem = HomologicalProblem::new(spec.clone(), g).unwrap();
        let a = solve_on_slice(&problem, &cfg, |l| l.is_siegel()).unwrap();
        let b = solve_neumann_siegel(&problem, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(apply_homological(&a, &spec), problem.rhs);
    }

    #[test]
    fn remainder_bound_worked_example() {
        use crate::spectrum::{bound_constants, ModulusClasses, SliceCase};
        // phi = z1 z2 on the 2-block at 1/2 with r = rho = 1:
        // |R phi| = eps/2, |phi| = 1 -> measured 1/2 <= 27/16
        let spec = Spectrum::new(
            vec![
                CRat::new(Rational::from((3, 5)), Rational::from((4, 5))),
                CRat::from_ratio(1, 2),
                CRat::from_ratio(1, 2),
            ],
            vec![JordanBlock { start: 1, size: 2 }],
            CRat::from_ratio(1, 100),
        )
        .unwrap();
        let mc = ModulusClasses::group(&spec, None).unwrap();
        let consts = bound_constants(&spec, &mc, &SliceCase::NoQr).unwrap();
        let mut phi = VectorSeries::new(3, 3);
        phi.component_mut(0)
            .insert_add(MultiIndex::new(&[0, 1, 1]), CRat::one());
        let radii = PolydiscRadii::new(
            Float::with_val(96, 1),
            Float::with_val(96, 1),
            spec.jordan_vars(),
        )
        .unwrap();
        let rep = remainder_bound_report(&phi, &radii, &spec, &consts.remainder_coeff).unwrap();
        assert!(rep.skipped.is_none());
        assert!((rep.measured.to_f64() - 0.5).abs() < 1e-20);
        assert!(rep.pass);

        // no Jordan variables in phi: ratio 0
        let mut phi2 = VectorSeries::new(3, 3);
        phi2.component_mut(1)
            .insert_add(MultiIndex::new(&[2, 0, 0]), CRat::one());
        let rep2 = remainder_bound_report(&phi2, &radii, &spec, &consts.remainder_coeff).unwrap();
        assert!(rep2.measured.is_zero());
        assert!(rep2.pass);

        // eps above the blockwise head condition: precondition error
        let hot = spec.with_epsilon(CRat::from_ratio(3, 10)).unwrap();
        assert!(matches!(
            remainder_bound_report(&phi, &radii, &hot, &consts.remainder_coeff),
            Err(CoreError::Precondition(_))
        ));
    }

    #[test]
    fn lo_descent_exhaustive() {
        // every nonzero shear image strictly decreases the graded-lex order
        let spec = spec_m3_block();
        let ranker = crate::series::Ranker::new(4, 6);
        for d in 2..=6u32 {
            for r in 0..ranker.slice_len(d) {
                let alpha = MultiIndex::from_exps(ranker.unrank(r as u64, d));
                let mono = {
                    let mut v = VectorSeries::<CRat>::new(4, d);
                    v.component_mut(0).insert_add(alpha.clone(), CRat::one());
                    v
                };
                let img = apply_remainder(&mono, &spec);
                for (idx, _) in img.component(0).iter() {
                    assert_eq!(idx.degree(), alpha.degree());
                    assert!(*idx < alpha, "{idx:?} !< {alpha:?}");
                }
            }
        }
    }

    #[test]
    fn operators_commute_with_shear() {
        // Omega R = R Omega and N R = R N on truncated series
        let spec = spec_m3_block();
        let mut phi = VectorSeries::new(4, 5);
        phi.component_mut(0)
            .insert_add(MultiIndex::new(&[1, 2, 0, 0]), CRat::from_ratio(2, 3));
        phi.component_mut(2)
            .insert_add(MultiIndex::new(&[0, 1, 1, 1]), CRat::from_ratio(-3, 4));
        phi.component_mut(3)
            .insert_add(MultiIndex::new(&[2, 0, 0, 1]), CRat::from_ratio(5, 7));

        // Omega as diagonal action (eps = 0 variant of the diagonal part)
        let spec0 = spec.with_epsilon(CRat::zero()).unwrap();
        let omega_then_r = apply_remainder(&apply_diagonal_part(&phi, &spec0), &spec);
        let r_then_omega = apply_diagonal_part(&apply_remainder(&phi, &spec), &spec0);
        assert_eq!(omega_then_r, r_then_omega);

        // N phi componentwise: (N phi)_i = phi_{i+1} on superdiagonal rows
        let apply_n = |v: &VectorSeries<CRat>| {
            let mut out = VectorSeries::new(4, v.trunc());
            for i in spec.superdiagonal_vars() {
                let one = CRat::one();
                out.component_mut(i).add_scaled(v.component(i + 1), &one);
            }
            out
        };
        let n_then_r = apply_remainder(&apply_n(&phi), &spec);
        let r_then_n = apply_n(&apply_remainder(&phi, &spec));
        assert_eq!(n_then_r, r_then_n);
    }

    #[test]
    fn solve_respects_slices() {
        let spec = spec_m3_block();
        let cfg = SliceConfig::derive(&spec).unwrap();
        // Poincare-supported right-hand side solves inside the slice
        let mut g = VectorSeries::new(4, 4);
        g.component_mut(1)
            .insert_add(MultiIndex::new(&[0, 1, 0, 1]), CRat::from_ratio(1, 2));
        g.component_mut(0)
            .insert_add(MultiIndex::new(&[0, 0, 2, 1]), CRat::from_ratio(-2, 7));
        let problem = HomologicalProblem::new(spec.clone(), g).unwrap();
        let phi = solve_on_slice(&problem, &cfg, |l| !l.is_siegel()).unwrap();
        assert_eq!(apply_homological(&phi, &spec), problem.rhs);

        // empty slice content solves to zero
        let empty = VectorSeries::new(4, 4);
        let p0 = HomologicalProblem::new(spec, empty).unwrap();
        assert!(solve_on_slice(&p0, &cfg, |l| l.is_siegel())
            .unwrap()
            .is_zero());
    }

    #[test]
    fn s1_annihilated_by_shear() {
        // R(g) = 0 for g supported on the unit class only
        let spec = spec_m3_block();
        let g = mono(4, 5, 2, &[4, 0, 0, 0], 3, 5);
        assert!(apply_remainder(&g, &spec).is_zero());
    }
}
