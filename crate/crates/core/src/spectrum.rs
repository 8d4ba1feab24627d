//! Eigenvalue data for the Jordan linear part `Lambda + eps N` and the
//! arithmetic analyses built on it: modulus classes, resonance and
//! quasi-resonance detection, Diophantine fits, and the explicit constants
//! used by the operator bounds.

use std::collections::BTreeMap;

use rug::ops::CompleteRound;
use rug::ops::Pow;
use rug::{Float, Rational};

use crate::error::{CoreError, Result};
use crate::num::{pow2, Coeff};
use crate::series::{LinearMap, MultiIndex, Ranker};

/// One Jordan block: `size` consecutive variables starting at `start`
/// (0-based), sharing one eigenvalue, with `eps` on the superdiagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JordanBlock {
    pub start: usize,
    pub size: usize,
}

/// The linear part: eigenvalues of modulus at most 1, Jordan block layout,
/// and the shear size `eps >= 0`.
#[derive(Clone, Debug)]
pub struct Spectrum<C: Coeff> {
    n: usize,
    lambda: Vec<C>,
    blocks: Vec<JordanBlock>,
    epsilon: C,
}

impl<C: Coeff> Spectrum<C> {
    /// Validates: block layout disjoint and in range, equal eigenvalues
    /// within each block, `|lambda_i| <= 1`, `eps` real and non-negative.
    ///
    /// A unit-modulus eigenvalue is *not* required here; analyses that need
    /// the modulus ladder ([`ModulusClasses::group`]) enforce it themselves,
    /// so purely contracting spectra still pass through the solver.
    pub fn new(lambda: Vec<C>, blocks: Vec<JordanBlock>, epsilon: C) -> Result<Self> {
        let n = lambda.len();
        if n == 0 {
            return Err(CoreError::Config("empty spectrum".into()));
        }
        let mut blocks = blocks;
        blocks.retain(|b| b.size > 1);
        blocks.sort_by_key(|b| b.start);
        let mut covered = vec![false; n];
        for b in &blocks {
            if b.start + b.size > n {
                return Err(CoreError::Config(format!(
                    "block ({}, {}) exceeds dimension {n}",
                    b.start, b.size
                )));
            }
            for i in b.start..b.start + b.size {
                if covered[i] {
                    return Err(CoreError::Config("overlapping Jordan blocks".into()));
                }
                covered[i] = true;
            }
            for i in b.start + 1..b.start + b.size {
                if lambda[i] != lambda[b.start] {
                    return Err(CoreError::Config(
                        "eigenvalues within one Jordan block must be equal".into(),
                    ));
                }
            }
        }
        if !epsilon.is_real_nonneg() {
            return Err(CoreError::Config("epsilon must be real and >= 0".into()));
        }
        let prec = lambda.iter().map(|l| l.prec_of()).max().unwrap_or(64);
        let tol = pow2(-((prec / 2) as i32), prec);
        let one_plus = Float::with_val(prec, 1) + &tol;
        for (i, l) in lambda.iter().enumerate() {
            if l.abs_sq_float(prec) > one_plus {
                return Err(CoreError::Inadmissible(format!("|lambda_{}| > 1", i + 1)));
            }
        }
        Ok(Spectrum {
            n,
            lambda,
            blocks,
            epsilon,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eigenvalues(&self) -> &[C] {
        &self.lambda
    }

    pub fn eigenvalue(&self, i: usize) -> &C {
        &self.lambda[i]
    }

    pub fn blocks(&self) -> &[JordanBlock] {
        &self.blocks
    }

    pub fn epsilon(&self) -> &C {
        &self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: C) -> Result<Self> {
        Spectrum::new(self.lambda.clone(), self.blocks.clone(), epsilon)
    }

    pub fn prec(&self) -> u32 {
        self.lambda
            .iter()
            .map(|l| l.prec_of())
            .max()
            .unwrap_or(64)
            .max(self.epsilon.prec_of())
    }

    /// Variables whose image under `Lambda^eps` picks up `eps z_{j+1}`.
    pub fn superdiagonal_vars(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .flat_map(|b| b.start..b.start + b.size - 1)
            .collect()
    }

    /// All variables belonging to a nontrivial Jordan block.
    pub fn jordan_vars(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .flat_map(|b| b.start..b.start + b.size)
            .collect()
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(|b| b.size).max().unwrap_or(1)
    }

    /// `Lambda + eps N` as a substitution/action map.
    pub fn jordan_map(&self) -> LinearMap<C> {
        let mut rows: Vec<Vec<(usize, C)>> = (0..self.n)
            .map(|i| vec![(i, self.lambda[i].clone())])
            .collect();
        if !self.epsilon.is_zero() {
            for j in self.superdiagonal_vars() {
                rows[j].push((j + 1, self.epsilon.clone()));
            }
        }
        LinearMap { n: self.n, rows }
    }

    /// The diagonal part `Lambda`.
    pub fn diagonal_map(&self) -> LinearMap<C> {
        LinearMap {
            n: self.n,
            rows: (0..self.n)
                .map(|i| vec![(i, self.lambda[i].clone())])
                .collect(),
        }
    }

    /// Eigenvalue power tables up to total degree `k`.
    pub fn pow_table(&self, k: u32) -> EigenPows<C> {
        EigenPows::new(&self.lambda, k)
    }
}

/// Cached powers `lambda_i^k`.
pub struct EigenPows<C: Coeff> {
    pows: Vec<Vec<C>>,
}

impl<C: Coeff> EigenPows<C> {
    pub fn new(lambda: &[C], k: u32) -> Self {
        let pows = lambda
            .iter()
            .map(|l| {
                let mut v = Vec::with_capacity(k as usize + 1);
                v.push(C::one());
                for j in 1..=k as usize {
                    let next = v[j - 1].mul(l);
                    v.push(next);
                }
                v
            })
            .collect();
        EigenPows { pows }
    }

    /// `lambda^alpha`.
    pub fn at(&self, alpha: &MultiIndex) -> C {
        let mut acc = C::one();
        for (i, &e) in alpha.exps().iter().enumerate() {
            if e > 0 {
                acc = acc.mul(&self.pows[i][e as usize]);
            }
        }
        acc
    }

    pub fn var_pow(&self, i: usize, k: u32) -> &C {
        &self.pows[i][k as usize]
    }
}

// ---------------------------------------------------------------------------
// Modulus classes

/// Distinct eigenvalue moduli `1 = mu_1 > mu_2 > ... > mu_m` and the index
/// classes they carve out of `{0, .., n-1}`.
#[derive(Clone, Debug)]
pub struct ModulusClasses {
    /// classes[i] lists the variables of modulus `mu[i]`, ascending.
    pub classes: Vec<Vec<usize>>,
    /// Moduli, strictly decreasing, as floats.
    pub mu: Vec<Float>,
    /// Exact squared moduli when the spectrum is rational.
    pub mu_sq_exact: Option<Vec<Rational>>,
}

impl ModulusClasses {
    /// Group eigenvalues by modulus. Exact grouping in rational mode;
    /// tolerance `tau_mu` in float mode, where clusters must be separated by
    /// more than `2 tau_mu` or the input is rejected as a near-tie.
    pub fn group<C: Coeff>(spec: &Spectrum<C>, tau_mu: Option<Float>) -> Result<Self> {
        let n = spec.dim();
        let prec = spec.prec();
        if C::exact() {
            let mut seen: Vec<(Rational, Vec<usize>)> = Vec::new();
            for i in 0..n {
                let sq = spec.eigenvalue(i).abs_sq_exact().unwrap();
                match seen.iter_mut().find(|(s, _)| *s == sq) {
                    Some((_, v)) => v.push(i),
                    None => seen.push((sq, vec![i])),
                }
            }
            seen.sort_by(|a, b| b.0.cmp(&a.0));
            if seen[0].0 != Rational::from(1) {
                return Err(CoreError::Inadmissible("no eigenvalue of modulus 1".into()));
            }
            let mu = seen
                .iter()
                .map(|(sq, _)| Float::with_val(prec, sq).sqrt())
                .collect();
            Ok(ModulusClasses {
                classes: seen.iter().map(|(_, v)| v.clone()).collect(),
                mu,
                mu_sq_exact: Some(seen.into_iter().map(|(s, _)| s).collect()),
            })
        } else {
            let tau = tau_mu.unwrap_or_else(|| pow2(-((prec / 2) as i32), prec));
            let mut mods: Vec<(Float, usize)> = (0..n)
                .map(|i| (spec.eigenvalue(i).abs_float(prec), i))
                .collect();
            mods.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let mut classes: Vec<Vec<usize>> = Vec::new();
            let mut reps: Vec<Float> = Vec::new();
            for (m, i) in mods {
                match reps.last() {
                    Some(r) if (r.clone() - &m).abs() <= tau => {
                        classes.last_mut().unwrap().push(i)
                    }
                    _ => {
                        if let Some(r) = reps.last() {
                            let gap = (r.clone() - &m).abs();
                            if gap <= (tau.clone() * 2u32) {
                                return Err(CoreError::Config(format!(
                                    "moduli nearly tie (gap {:.3e} <= 2 tau); \
                                     refusing to separate classes",
                                    gap.to_f64()
                                )));
                            }
                        }
                        reps.push(m.clone());
                        classes.push(vec![i]);
                    }
                }
            }
            for c in &mut classes {
                c.sort_unstable();
            }
            let one = Float::with_val(prec, 1);
            if (reps[0].clone() - &one).abs() > tau {
                return Err(CoreError::Inadmissible("no eigenvalue of modulus 1".into()));
            }
            reps[0] = one;
            Ok(ModulusClasses {
                classes,
                mu: reps,
                mu_sq_exact: None,
            })
        }
    }

    /// Build from an explicit modulus ladder (no eigenvectors); used for
    /// ladder-level analyses such as quasi-resonance enumeration.
    pub fn from_rational_moduli(mu: &[Rational], prec: u32) -> Result<Self> {
        if mu.is_empty() || mu[0] != Rational::from(1) {
            return Err(CoreError::Inadmissible("ladder must start at 1".into()));
        }
        for w in mu.windows(2) {
            if w[1] >= w[0] {
                return Err(CoreError::Config("ladder must strictly decrease".into()));
            }
        }
        Ok(ModulusClasses {
            classes: (0..mu.len()).map(|i| vec![i]).collect(),
            mu: mu.iter().map(|q| Float::with_val(prec, q)).collect(),
            mu_sq_exact: Some(mu.iter().map(|q| Rational::from(q * q)).collect()),
        })
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.mu.len()
    }

    /// Class index of a variable.
    pub fn class_of(&self, var: usize) -> usize {
        self.classes
            .iter()
            .position(|c| c.contains(&var))
            .expect("variable not classified")
    }

    /// Contiguous class offsets, when variables are ordered by class.
    pub fn offsets(&self) -> Option<Vec<usize>> {
        let mut off = Vec::with_capacity(self.count());
        let mut next = 0usize;
        for c in &self.classes {
            if c.first() != Some(&next) {
                return None;
            }
            off.push(next);
            next += c.len();
            if c.last() != Some(&(next - 1)) {
                return None;
            }
        }
        Some(off)
    }

    /// Block-degree signature `(|A_2|, ..., |A_m|)` of a multi-index.
    pub fn signature(&self, alpha: &MultiIndex) -> Vec<u32> {
        self.classes[1..]
            .iter()
            .map(|class| alpha.degree_over(class))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Resonances

/// Complete scan for `lambda^alpha = lambda_j`, `2 <= |alpha| <= k`.
/// Equality is exact in rational mode, within `tau_res` (default
/// `2^-(P/2)`) in float mode.
pub fn detect_resonances<C: Coeff>(
    spec: &Spectrum<C>,
    k: u32,
    tau_res: Option<Float>,
) -> Vec<(MultiIndex, usize)> {
    let n = spec.dim();
    let prec = spec.prec();
    let pows = spec.pow_table(k);
    let tau_sq = tau_res
        .unwrap_or_else(|| pow2(-((prec / 2) as i32), prec))
        .square();
    let ranker = Ranker::new(n, k);
    let mut out = Vec::new();
    for d in 2..=k {
        for r in 0..ranker.slice_len(d) {
            let alpha = MultiIndex::from_exps(ranker.unrank(r as u64, d));
            let la = pows.at(&alpha);
            for j in 0..n {
                let diff = la.sub(spec.eigenvalue(j));
                let hit = if C::exact() {
                    diff.is_zero()
                } else {
                    diff.abs_sq_float(prec) <= tau_sq
                };
                if hit {
                    out.push((alpha.clone(), j));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Quasi-resonances

/// One multiplicative relation `prod_j mu_j^{kappa_j} = mu_t` among the
/// moduli, for a target class `t >= 2` (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QrEntry {
    /// Target class, 0-based.
    pub class: usize,
    /// Exponents over classes `1..class` (0-based), i.e. the ladder between
    /// the unit class and the target.
    pub kappa: Vec<u32>,
    /// Block-degree signature `(|A_2|, ..., |A_m|)` identifying the slice:
    /// kappa padded with zeros.
    pub signature: Vec<u32>,
}

/// All quasi-resonances of a modulus ladder. Finite by construction: each
/// exponent is bounded by `log mu_t / log mu_j`.
#[derive(Clone, Debug, Default)]
pub struct QuasiResonanceTable {
    pub entries: Vec<QrEntry>,
    lookup: BTreeMap<Vec<u32>, usize>,
}

impl QuasiResonanceTable {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Entry whose signature matches, if any.
    pub fn match_signature(&self, sig: &[u32]) -> Option<&QrEntry> {
        self.lookup.get(sig).map(|&i| &self.entries[i])
    }

    /// Entries targeting one class.
    pub fn for_class(&self, class: usize) -> Vec<&QrEntry> {
        self.entries.iter().filter(|e| e.class == class).collect()
    }
}

/// Enumerate every quasi-resonance of the ladder. Exact products in
/// rational mode; log-domain comparison within `tau_qr` in float mode.
pub fn enumerate_quasi_resonances(
    classes: &ModulusClasses,
    tau_qr: Option<Float>,
) -> Result<QuasiResonanceTable> {
    let m = classes.count();
    let mut table = QuasiResonanceTable::default();
    if m < 3 {
        return Ok(table);
    }
    let prec = classes.mu[0].prec();
    match &classes.mu_sq_exact {
        Some(musq) => {
            for t in 2..m {
                let target = musq[t].clone();
                let mut kappa = vec![0u32; t - 1];
                dfs_exact(musq, t, 1, Rational::from(1), &target, &mut kappa, &mut table)?;
            }
        }
        None => {
            let tau = tau_qr.unwrap_or_else(|| pow2(-((prec / 2) as i32), prec));
            let logs: Vec<Float> = classes.mu.iter().map(|u| u.clone().ln()).collect();
            for t in 2..m {
                let mut kappa = vec![0u32; t - 1];
                dfs_float(&logs, t, 1, Float::new(prec), &tau, &mut kappa, &mut table)?;
            }
        }
    }
    table
        .entries
        .sort_by(|a, b| (a.class, &a.kappa).cmp(&(b.class, &b.kappa)));
    table.lookup = table
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.signature.clone(), i))
        .collect();
    if table.lookup.len() != table.entries.len() {
        return Err(CoreError::Config(
            "quasi-resonance signatures are not pairwise distinct".into(),
        ));
    }
    for e in &table.entries {
        if e.kappa.iter().sum::<u32>() < 2 {
            return Err(CoreError::Config(
                "quasi-resonance with total exponent < 2 contradicts a strict ladder".into(),
            ));
        }
    }
    Ok(table)
}

fn push_entry(m_total: usize, t: usize, kappa: &[u32], table: &mut QuasiResonanceTable) {
    let mut signature = kappa.to_vec();
    signature.resize(m_total - 1, 0);
    table.entries.push(QrEntry {
        class: t,
        kappa: kappa.to_vec(),
        signature,
    });
}

fn dfs_exact(
    musq: &[Rational],
    t: usize,
    j: usize,
    acc: Rational,
    target: &Rational,
    kappa: &mut Vec<u32>,
    table: &mut QuasiResonanceTable,
) -> Result<()> {
    if j == t {
        if acc == *target {
            push_entry(musq.len(), t, kappa, table);
        }
        return Ok(());
    }
    let mut cur = acc;
    let mut k = 0u32;
    loop {
        if cur < *target {
            break;
        }
        kappa[j - 1] = k;
        dfs_exact(musq, t, j + 1, cur.clone(), target, kappa, table)?;
        cur *= &musq[j];
        k += 1;
        if k > 4096 {
            return Err(CoreError::Config("quasi-resonance search exploded".into()));
        }
    }
    kappa[j - 1] = 0;
    Ok(())
}

fn dfs_float(
    logs: &[Float],
    t: usize,
    j: usize,
    acc: Float,
    tau: &Float,
    kappa: &mut Vec<u32>,
    table: &mut QuasiResonanceTable,
) -> Result<()> {
    let target = &logs[t];
    if j == t {
        if (acc - target).abs() <= *tau {
            push_entry(logs.len(), t, kappa, table);
        }
        return Ok(());
    }
    let mut cur = acc;
    let mut k = 0u32;
    loop {
        // remaining factors only decrease the log-sum
        if cur < (target.clone() - tau) {
            break;
        }
        kappa[j - 1] = k;
        dfs_float(logs, t, j + 1, cur.clone(), tau, kappa, table)?;
        cur += &logs[j];
        k += 1;
        if k > 4096 {
            return Err(CoreError::Config("quasi-resonance search exploded".into()));
        }
    }
    kappa[j - 1] = 0;
    Ok(())
}

// ---------------------------------------------------------------------------
// Diophantine fits

/// Per-condition scan record: minimum divisor modulus per degree plus the
/// tightest fitted pair `(c0, sigma)` with
/// `min_divisor(deg) >= c0 * deg^-sigma` on the scanned range.
#[derive(Clone, Debug)]
pub struct DioCondition {
    pub id: String,
    pub samples: Vec<(u32, Float)>,
    pub c0: Float,
    pub sigma: Float,
}

/// Fitted Diophantine data for all conditions relevant to the spectrum.
#[derive(Clone, Debug)]
pub struct DioEstimate {
    pub conditions: Vec<DioCondition>,
    pub scan_degree: u32,
    /// Number of unit-modulus eigenvalues; when above 1 the single-rotation
    /// reduction of the estimates does not literally apply and reports carry
    /// this flag.
    pub unit_class_size: usize,
}

impl DioEstimate {
    /// Largest fitted exponent across conditions (0 when none).
    pub fn sigma_max(&self) -> Float {
        let prec = self
            .conditions
            .first()
            .map(|c| c.sigma.prec())
            .unwrap_or(64);
        let mut s = Float::new(prec);
        for c in &self.conditions {
            if c.sigma > s {
                s = c.sigma.clone();
            }
        }
        s
    }
}

fn fit_envelope(samples: &[(u32, Float)], prec: u32) -> (Float, Float) {
    // log-log least squares for the slope, then c0 lowered onto the samples
    let pts: Vec<(Float, Float)> = samples
        .iter()
        .filter(|(_, d)| !d.is_zero())
        .map(|(m, d)| (Float::with_val(prec, *m).ln(), d.clone().ln()))
        .collect();
    if pts.is_empty() {
        return (Float::new(prec), Float::new(prec));
    }
    let sigma = if pts.len() == 1 {
        Float::new(prec)
    } else {
        let n = Float::with_val(prec, pts.len() as u32);
        let mut sx = Float::new(prec);
        let mut sy = Float::new(prec);
        let mut sxx = Float::new(prec);
        let mut sxy = Float::new(prec);
        for (x, y) in &pts {
            sx += x;
            sy += y;
            sxx += x.clone().square();
            sxy += (x * y).complete(prec);
        }
        let den = (&sxx * &n).complete(prec) - sx.clone().square();
        if den.is_zero() {
            Float::new(prec)
        } else {
            let slope = ((&sxy * &n).complete(prec) - (&sx * &sy).complete(prec)) / den;
            let s = -slope;
            if s.is_sign_negative() {
                Float::new(prec)
            } else {
                s
            }
        }
    };
    // c0 = min over samples of d * m^sigma
    let mut c0: Option<Float> = None;
    for (m, d) in samples {
        if d.is_zero() {
            continue;
        }
        let v = Float::with_val(prec, *m).pow(&sigma) * d;
        c0 = Some(match c0 {
            None => v,
            Some(prev) => {
                if v < prev {
                    v
                } else {
                    prev
                }
            }
        });
    }
    (c0.unwrap_or_else(|| Float::new(prec)), sigma)
}

/// Enumerate exponent vectors of total degree `d` over the variables in
/// `vars`, embedded into dimension `n`.
fn indices_over(vars: &[usize], n: usize, d: u32) -> Vec<MultiIndex> {
    let k = vars.len();
    if k == 0 {
        return if d == 0 {
            vec![MultiIndex::zero(n)]
        } else {
            vec![]
        };
    }
    let ranker = Ranker::new(k, d);
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

/// Scan and fit the small-divisor conditions: the unit-class condition, the
/// cross-class condition, and one per quasi-resonance. A literal zero
/// divisor is a resonance and is an error.
pub fn diophantine_fit<C: Coeff>(
    spec: &Spectrum<C>,
    classes: &ModulusClasses,
    qr: &QuasiResonanceTable,
    k: u32,
) -> Result<DioEstimate> {
    let n = spec.dim();
    let prec = spec.prec();
    let pows = spec.pow_table(k);
    let unit = &classes.classes[0];
    let mut conditions = Vec::new();

    fn min_update(acc: &mut Option<Float>, v: Float) {
        if acc.as_ref().map_or(true, |a| v < *a) {
            *acc = Some(v);
        }
    }

    // unit-class condition: |Lambda_1^{A_1} - lambda_i|, i in I_1, |A_1| >= 2
    {
        let mut samples = Vec::new();
        for d in 2..=k {
            let mut dmin: Option<Float> = None;
            for alpha in indices_over(unit, n, d) {
                let la = pows.at(&alpha);
                for &i in unit {
                    let diff = la.sub(spec.eigenvalue(i));
                    if diff.is_zero() {
                        return Err(CoreError::Resonance {
                            alpha: alpha.exps().to_vec(),
                            j: i,
                        });
                    }
                    min_update(&mut dmin, diff.abs_float(prec));
                }
            }
            if let Some(dmin) = dmin {
                samples.push((d, dmin));
            }
        }
        let (c0, sigma) = fit_envelope(&samples, prec);
        conditions.push(DioCondition {
            id: "unit_class".into(),
            samples,
            c0,
            sigma,
        });
    }

    // cross-class condition: |Lambda_1^{A_1} lambda_i - lambda_j|,
    // i, j in one class below the unit class, |A_1| >= 1
    if classes.count() > 1 {
        let mut samples = Vec::new();
        for d1 in 1..k {
            let deg = d1 + 1;
            let mut dmin: Option<Float> = None;
            for alpha in indices_over(unit, n, d1) {
                let la = pows.at(&alpha);
                for class in &classes.classes[1..] {
                    for &i in class {
                        let v = la.mul(spec.eigenvalue(i));
                        for &j in class {
                            let diff = v.sub(spec.eigenvalue(j));
                            if diff.is_zero() {
                                return Err(CoreError::Resonance {
                                    alpha: alpha.exps().to_vec(),
                                    j,
                                });
                            }
                            min_update(&mut dmin, diff.abs_float(prec));
                        }
                    }
                }
            }
            if let Some(dmin) = dmin {
                samples.push((deg, dmin));
            }
        }
        let (c0, sigma) = fit_envelope(&samples, prec);
        conditions.push(DioCondition {
            id: "cross_class".into(),
            samples,
            c0,
            sigma,
        });
    }

    // one condition per quasi-resonance, scan-bounded in |A_1|
    for entry in &qr.entries {
        let ksum: u32 = entry.kappa.iter().sum();
        if ksum > k {
            continue;
        }
        // all splittings of kappa_j over the variables of class j
        let mut combos: Vec<MultiIndex> = vec![MultiIndex::zero(n)];
        for (cj, &kap) in entry.kappa.iter().enumerate() {
            let opts = indices_over(&classes.classes[cj + 1], n, kap);
            let mut next = Vec::with_capacity(combos.len() * opts.len());
            for c in &combos {
                for o in &opts {
                    next.push(c.add(o));
                }
            }
            combos = next;
        }
        let targets = &classes.classes[entry.class];
        let mut samples = Vec::new();
        for d1 in 0..=(k - ksum) {
            let deg = d1 + ksum;
            if deg < 2 {
                continue;
            }
            let mut dmin: Option<Float> = None;
            for a1 in indices_over(unit, n, d1) {
                let la1 = pows.at(&a1);
                for combo in combos.iter() {
                    let v = la1.mul(&pows.at(combo));
                    for &kk in targets {
                        let diff = v.sub(spec.eigenvalue(kk));
                        if diff.is_zero() {
                            return Err(CoreError::Resonance {
                                alpha: a1.add(combo).exps().to_vec(),
                                j: kk,
                            });
                        }
                        min_update(&mut dmin, diff.abs_float(prec));
                    }
                }
            }
            if let Some(dmin) = dmin {
                samples.push((deg, dmin));
            }
        }
        let (c0, sigma) = fit_envelope(&samples, prec);
        conditions.push(DioCondition {
            id: format!(
                "qr[class={},kappa=({})]",
                entry.class + 1,
                entry
                    .kappa
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            samples,
            c0,
            sigma,
        });
    }

    Ok(DioEstimate {
        conditions,
        scan_degree: k,
        unit_class_size: unit.len(),
    })
}

// ---------------------------------------------------------------------------
// Divisor growth diagnostic

/// Rows `(m, Omega(m))` with `Omega(m) = max(m, 1/min divisor at degree m)`,
/// monotonized, plus the partial sum of `log Omega(m) / m^2`. Diagnostic
/// only; no pass/fail is attached.
#[derive(Clone, Debug)]
pub struct DivisorGrowth {
    pub rows: Vec<(u32, Float)>,
    pub partial_sum: Float,
}

pub fn russmann_diagnostic<C: Coeff>(spec: &Spectrum<C>, max_deg: u32) -> Result<DivisorGrowth> {
    let n = spec.dim();
    let prec = spec.prec();
    let pows = spec.pow_table(max_deg);
    let ranker = Ranker::new(n, max_deg);
    let mut rows: Vec<(u32, Float)> = Vec::new();
    let mut partial = Float::new(prec);
    let mut prev = Float::new(prec);
    for d in 2..=max_deg {
        let mut dmin: Option<Float> = None;
        for r in 0..ranker.slice_len(d) {
            let alpha = MultiIndex::from_exps(ranker.unrank(r as u64, d));
            let la = pows.at(&alpha);
            for j in 0..n {
                let diff = la.sub(spec.eigenvalue(j));
                if diff.is_zero() {
                    return Err(CoreError::Resonance {
                        alpha: alpha.exps().to_vec(),
                        j,
                    });
                }
                let a = diff.abs_float(prec);
                if dmin.as_ref().map_or(true, |m| a < *m) {
                    dmin = Some(a);
                }
            }
        }
        let dmin = dmin.unwrap();
        let mut omega = Float::with_val(prec, d);
        let inv = dmin.recip();
        if inv > omega {
            omega = inv;
        }
        if prev > omega {
            omega = prev.clone();
        }
        prev = omega.clone();
        partial += omega.clone().ln() / Float::with_val(prec, d).square();
        rows.push((d, omega));
    }
    Ok(DivisorGrowth {
        rows,
        partial_sum: partial,
    })
}

// ---------------------------------------------------------------------------
// Derived constants for the operator bounds

/// Explicit constants quoted by the quantitative estimates.
#[derive(Clone, Debug)]
pub struct BoundConstants {
    /// Reciprocal of the worst divisor gap on the Poincare slice:
    /// `max_i 1/gamma_i`.
    pub gamma_p: Float,
    /// Uniform operator bound for the block inverse on the Poincare slice:
    /// `2 gamma_p (1 - 2^-b)`, `b` the largest block size.
    pub big_gamma: Float,
    /// Shear-remainder coefficient: the remainder operator satisfies
    /// `|R phi| <= eps * remainder_coeff * |phi|` on the asymmetric
    /// polydisc; summed over blocks of `(size-1) a^{k0-1} k0` with
    /// `a = (1 + mu_block)/2`.
    pub remainder_coeff: Float,
    /// Largest admissible shear: the minimum of `(1 - mu_block)/2` over
    /// blocks, `1/(2 gamma_p)`, and `1/(n big_gamma remainder_coeff)`.
    pub eps_max: Float,
    /// Per-eigenvalue divisor gaps on the Poincare slice (certified lower
    /// bounds via the signature method).
    pub gamma_i: Vec<Float>,
    /// Signature enumeration bound used for the gaps.
    pub signature_cap: u32,
}

/// Which block-degree signatures belong to the Poincare slice.
pub enum SliceCase<'a> {
    /// No quasi-resonance: signatures with total degree >= 2.
    NoQr,
    /// With quasi-resonances: additionally excludes the listed signatures.
    WithQr(&'a QuasiResonanceTable),
}

pub fn bound_constants<C: Coeff>(
    spec: &Spectrum<C>,
    classes: &ModulusClasses,
    case: &SliceCase,
) -> Result<BoundConstants> {
    let n = spec.dim();
    let prec = spec.prec();
    let m = classes.count();

    // blocks on a unit-modulus eigenvalue have no admissible shear
    for b in spec.blocks() {
        if classes.classes[0].contains(&b.start) {
            return Err(CoreError::Inadmissible(
                "Jordan block on a unit-modulus eigenvalue has no admissible shear".into(),
            ));
        }
    }

    // signature cap: beyond it every Poincare product is below min|lambda|/2
    let cap = if m < 2 {
        0u32
    } else {
        let mu_min = classes.mu.last().unwrap();
        let target = (mu_min / Float::with_val(prec, 2u32)).ln();
        let den = classes.mu[1].clone().ln();
        let ratio = target / den;
        ratio.to_f64().ceil().max(0.0) as u32
    };

    // admissible Poincare signatures with total <= cap
    let mut sigs: Vec<Vec<u32>> = Vec::new();
    if m >= 2 {
        let ranker = Ranker::new(m - 1, cap);
        for total in 0..=cap {
            for r in 0..ranker.slice_len(total) {
                let packed = ranker.unrank(r as u64, total);
                let sig: Vec<u32> = packed.iter().map(|&x| x as u32).collect();
                let keep = match case {
                    SliceCase::NoQr => total >= 2,
                    SliceCase::WithQr(qr) => total >= 2 && qr.match_signature(&sig).is_none(),
                };
                if keep {
                    sigs.push(sig);
                }
            }
        }
    }

    let mut gamma_i = Vec::with_capacity(n);
    for i in 0..n {
        let li = spec.eigenvalue(i).abs_float(prec);
        let mut g = (&li / Float::with_val(prec, 2u32)).abs();
        for sig in &sigs {
            let mut rho = Float::with_val(prec, 1);
            for (j, &s) in sig.iter().enumerate() {
                if s > 0 {
                    rho *= classes.mu[j + 1].clone().pow(s);
                }
            }
            let gap = (rho - &li).abs();
            if gap.is_zero() {
                return Err(CoreError::Config(format!(
                    "signature {:?} collides with |lambda_{}|; \
                     quasi-resonance table incomplete",
                    sig,
                    i + 1
                )));
            }
            if gap < g {
                g = gap;
            }
        }
        gamma_i.push(g);
    }
    let mut gamma_p = Float::new(prec);
    for g in &gamma_i {
        let inv = g.clone().recip();
        if inv > gamma_p {
            gamma_p = inv;
        }
    }

    let bmax = spec.max_block_size() as u32;
    let big_gamma = {
        let scale = Float::with_val(prec, 1) - pow2(-(bmax as i32), prec);
        gamma_p.clone() * 2u32 * scale
    };

    // remainder coefficient summed over nontrivial blocks
    let mut remainder_coeff = Float::new(prec);
    let mut e1_min: Option<Float> = None;
    for b in spec.blocks() {
        let mu_d = spec.eigenvalue(b.start).abs_float(prec);
        let a = (Float::with_val(prec, 1) + &mu_d) / 2u32;
        // (x-1) ln a + ln x peaks at x0 = -1/ln a; the best integer is among
        // floor(x0), floor(x0)+1, and 2
        let x0 = -a.clone().ln().recip();
        let fl = x0.to_f64().floor().max(1.0) as u32;
        let mut best: Option<Float> = None;
        for k0 in [fl, fl + 1, 2] {
            let v = a.clone().pow(k0 - 1) * Float::with_val(prec, k0);
            if best.as_ref().map_or(true, |b| v > *b) {
                best = Some(v);
            }
        }
        remainder_coeff += best.unwrap() * Float::with_val(prec, (b.size - 1) as u32);
        let head = (Float::with_val(prec, 1) - &mu_d) / 2u32;
        if e1_min.as_ref().map_or(true, |m| head < *m) {
            e1_min = Some(head);
        }
    }

    let mut eps_max = (gamma_p.clone() * 2u32).recip();
    if let Some(h) = e1_min {
        if h < eps_max {
            eps_max = h;
        }
    }
    if !remainder_coeff.is_zero() {
        let e3 = (Float::with_val(prec, n as u32) * &big_gamma * &remainder_coeff).recip();
        if e3 < eps_max {
            eps_max = e3;
        }
    }

    Ok(BoundConstants {
        gamma_p,
        big_gamma,
        remainder_coeff,
        eps_max,
        gamma_i,
        signature_cap: cap,
    })
}
