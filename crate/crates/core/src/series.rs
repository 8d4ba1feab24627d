//! Sparse truncated multivariate power series.
//!
//! Terms live in a `BTreeMap` keyed by [`MultiIndex`] under graded
//! lexicographic order (total degree first, then leftmost differing
//! exponent). That order is the monomial order the solver's
//! back-substitution walks, and it makes every iteration deterministic.
//!
//! Invariants:
//! - no stored term has total degree above the truncation degree;
//! - no stored coefficient is exactly zero; multiplication additionally
//!   prunes, per homogeneous degree, float coefficients that fell below the
//!   relative drop threshold (see [`Coeff::negligible_vs`]);
//! - all terms of one series share the same variable count.
//!
//! Multiplication groups both factors by homogeneous degree and accumulates
//! into a transient dense slice per output degree (series here are sparse at
//! low degree, dense per degree at high degree).

use std::collections::BTreeMap;
use std::fmt;

use rug::ops::CompleteRound;
use rug::Float;
use smallvec::SmallVec;

use crate::error::{CoreError, Result};
use crate::num::Coeff;

pub type Exps = SmallVec<[u16; 8]>;

/// Exponent vector with cached total degree.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    deg: u32,
    exps: Exps,
}

impl MultiIndex {
    pub fn new(exps: &[u16]) -> Self {
        let deg = exps.iter().map(|&e| e as u32).sum();
        MultiIndex {
            deg,
            exps: SmallVec::from_slice(exps),
        }
    }

    pub fn from_exps(exps: Exps) -> Self {
        let deg = exps.iter().map(|&e| e as u32).sum();
        MultiIndex { deg, exps }
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex {
            deg: 0,
            exps: smallvec::smallvec![0; n],
        }
    }

    pub fn unit(n: usize, var: usize) -> Self {
        let mut exps: Exps = smallvec::smallvec![0; n];
        exps[var] = 1;
        MultiIndex { deg: 1, exps }
    }

    #[inline]
    pub fn degree(&self) -> u32 {
        self.deg
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.exps.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    #[inline]
    pub fn exps(&self) -> &[u16] {
        &self.exps
    }

    pub fn add(&self, o: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.len(), o.len());
        let exps: Exps = self
            .exps
            .iter()
            .zip(o.exps.iter())
            .map(|(a, b)| a + b)
            .collect();
        MultiIndex {
            deg: self.deg + o.deg,
            exps,
        }
    }

    /// Degree summed over a set of variable positions.
    pub fn degree_over(&self, vars: &[usize]) -> u32 {
        vars.iter().map(|&i| self.exps[i] as u32).sum()
    }

    /// Smallest index of the given degree under graded lex order.
    pub fn first_of_degree(n: usize, d: u32) -> Self {
        let mut exps: Exps = smallvec::smallvec![0; n];
        exps[n - 1] = d as u16;
        MultiIndex { deg: d, exps }
    }

    /// Largest index of the given degree under graded lex order.
    pub fn last_of_degree(n: usize, d: u32) -> Self {
        let mut exps: Exps = smallvec::smallvec![0; n];
        exps[0] = d as u16;
        MultiIndex { deg: d, exps }
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.exps.as_slice())
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        debug_assert_eq!(self.len(), other.len());
        self.deg
            .cmp(&other.deg)
            .then_with(|| self.exps.as_slice().cmp(other.exps.as_slice()))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Graded lexicographic comparison as a checked operation.
///
/// Smaller means: lower total degree, or equal degree with the smaller
/// exponent at the leftmost position where the two differ.
pub fn lex_compare(a: &MultiIndex, b: &MultiIndex) -> Result<std::cmp::Ordering> {
    if a.len() != b.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "lex_compare: {} vs {} variables",
            a.len(),
            b.len()
        )));
    }
    Ok(a.cmp(b))
}

/// Per-class degree totals `(|A_1|, ..., |A_m|)` for a disjoint partition of
/// the variable set.
pub fn block_degrees(alpha: &MultiIndex, partition: &[Vec<usize>]) -> Result<Vec<u32>> {
    let n = alpha.len();
    let mut seen = vec![false; n];
    for class in partition {
        for &v in class {
            if v >= n || seen[v] {
                return Err(CoreError::DimensionMismatch(format!(
                    "partition does not cover {{0..{}}} disjointly",
                    n - 1
                )));
            }
            seen[v] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(CoreError::DimensionMismatch(
            "partition misses a variable".into(),
        ));
    }
    Ok(partition
        .iter()
        .map(|class| alpha.degree_over(class))
        .collect())
}

// ---------------------------------------------------------------------------
// Ranking of monomials inside one homogeneous degree

/// Rank/unrank monomials of a fixed total degree, consistent with the graded
/// lex order. Backs the dense-by-degree transient used in multiplication.
pub struct Ranker {
    n: usize,
    /// binom[a][b] for b <= min(a, n); enough for counting monomials.
    binom: Vec<Vec<u64>>,
}

impl Ranker {
    pub fn new(n: usize, max_deg: u32) -> Self {
        let rows = max_deg as usize + n + 2;
        let cols = n + 1;
        let mut binom = vec![vec![0u64; cols]; rows];
        for row in binom.iter_mut() {
            row[0] = 1;
        }
        for a in 1..rows {
            for b in 1..cols {
                let left = binom[a - 1][b - 1];
                let right = if b <= a - 1 { binom[a - 1][b] } else { 0 };
                binom[a][b] = left + right;
            }
        }
        Ranker { n, binom }
    }

    /// Number of monomials of total degree `t` in `k` variables.
    #[inline]
    pub fn count(&self, t: u32, k: usize) -> u64 {
        if k == 0 {
            return u64::from(t == 0);
        }
        self.binom[t as usize + k - 1][k - 1]
    }

    pub fn slice_len(&self, deg: u32) -> usize {
        self.count(deg, self.n) as usize
    }

    pub fn rank(&self, exps: &[u16], deg: u32) -> usize {
        let n = self.n;
        let mut r = 0u64;
        let mut rem = deg;
        for i in 0..n - 1 {
            for v in 0..exps[i] {
                r += self.count(rem - v as u32, n - 1 - i);
            }
            rem -= exps[i] as u32;
        }
        r as usize
    }

    pub fn unrank(&self, mut r: u64, deg: u32) -> Exps {
        let n = self.n;
        let mut exps: Exps = smallvec::smallvec![0; n];
        let mut rem = deg;
        for i in 0..n - 1 {
            let mut v = 0u16;
            loop {
                let c = self.count(rem - v as u32, n - 1 - i);
                if r < c {
                    break;
                }
                r -= c;
                v += 1;
            }
            exps[i] = v;
            rem -= v as u32;
        }
        exps[n - 1] = rem as u16;
        exps
    }
}

// ---------------------------------------------------------------------------
// Scalar series

/// Sparse truncated power series in `n` variables.
#[derive(Clone, PartialEq)]
pub struct ScalarSeries<C: Coeff> {
    n: usize,
    trunc: u32,
    terms: BTreeMap<MultiIndex, C>,
}

impl<C: Coeff> fmt::Debug for ScalarSeries<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Series[n={},K={}]{{", self.n, self.trunc)?;
        for (k, c) in &self.terms {
            write!(f, " {:?}:{:?}", k, c)?;
        }
        write!(f, " }}")
    }
}

impl<C: Coeff> ScalarSeries<C> {
    pub fn new(n: usize, trunc: u32) -> Self {
        ScalarSeries {
            n,
            trunc,
            terms: BTreeMap::new(),
        }
    }

    pub fn monomial(n: usize, trunc: u32, exps: &[u16], c: C) -> Self {
        let mut s = Self::new(n, trunc);
        s.insert_add(MultiIndex::new(exps), c);
        s
    }

    pub fn constant(n: usize, trunc: u32, c: C) -> Self {
        let mut s = Self::new(n, trunc);
        s.insert_add(MultiIndex::zero(n), c);
        s
    }

    #[inline]
    pub fn nvars(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn trunc(&self) -> u32 {
        self.trunc
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, &C)> {
        self.terms.iter()
    }

    pub fn get(&self, idx: &MultiIndex) -> Option<&C> {
        self.terms.get(idx)
    }

    pub fn coeff_at(&self, exps: &[u16]) -> C {
        self.terms
            .get(&MultiIndex::new(exps))
            .cloned()
            .unwrap_or_else(C::zero)
    }

    /// Add `c` at `idx`, dropping exact zeros and above-truncation terms.
    pub fn insert_add(&mut self, idx: MultiIndex, c: C) {
        debug_assert_eq!(idx.len(), self.n);
        if idx.degree() > self.trunc || c.is_zero() {
            return;
        }
        match self.terms.entry(idx) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                o.get_mut().add_assign_c(&c);
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn insert_sub(&mut self, idx: MultiIndex, c: &C) {
        if idx.degree() > self.trunc || c.is_zero() {
            return;
        }
        match self.terms.entry(idx) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c.neg());
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                o.get_mut().sub_assign_c(c);
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// Lowest total degree with a stored term.
    pub fn order(&self) -> Option<u32> {
        self.terms.keys().next().map(|k| k.degree())
    }

    /// Highest total degree with a stored term.
    pub fn max_degree(&self) -> Option<u32> {
        self.terms.keys().next_back().map(|k| k.degree())
    }

    /// Lowest degree carrying a significant coefficient. Exact mode takes
    /// the true order; float mode drops coefficients below
    /// `2^-rel_bits * max(1, largest coefficient)` — the floor is anchored
    /// at unit scale because cancellation noise comes from the O(1)
    /// intermediates (identity part, eigenvalues), not from the series' own
    /// largest survivor.
    pub fn order_significant(&self, rel_bits: u32) -> Option<u32> {
        if C::exact() || self.terms.is_empty() {
            return self.order();
        }
        let prec = self.terms.values().next().map(|c| c.prec_of()).unwrap_or(64);
        let mut gmax = Float::with_val(prec, 1);
        for c in self.terms.values() {
            let a = c.abs_sq_float(prec);
            if a > gmax {
                gmax = a;
            }
        }
        let thr = gmax >> (2 * rel_bits);
        self.terms
            .iter()
            .find(|(_, c)| c.abs_sq_float(prec) >= thr)
            .map(|(k, _)| k.degree())
    }

    pub fn truncated(&self, k: u32) -> Self {
        let mut out = Self::new(self.n, self.trunc.min(k));
        for (idx, c) in &self.terms {
            if idx.degree() > k {
                break;
            }
            out.terms.insert(idx.clone(), c.clone());
        }
        out
    }

    /// Drop content above degree `k`, keeping the truncation tag.
    pub fn drop_above(&mut self, k: u32) {
        let split = self.terms.split_off(&MultiIndex::last_of_degree(self.n, k));
        // split_off keeps the boundary key in `split`; move it back if at k
        for (idx, c) in split {
            if idx.degree() <= k {
                self.terms.insert(idx, c);
            }
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        out.trunc = self.trunc.min(o.trunc);
        out.drop_above(out.trunc);
        for (idx, c) in &o.terms {
            if idx.degree() > out.trunc {
                break;
            }
            out.insert_add(idx.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, o: &Self) -> Self {
        let mut out = self.clone();
        out.trunc = self.trunc.min(o.trunc);
        out.drop_above(out.trunc);
        for (idx, c) in &o.terms {
            if idx.degree() > out.trunc {
                break;
            }
            out.insert_sub(idx.clone(), c);
        }
        out
    }

    pub fn add_assign_series(&mut self, o: &Self) {
        for (idx, c) in &o.terms {
            self.insert_add(idx.clone(), c.clone());
        }
    }

    pub fn sub_assign_series(&mut self, o: &Self) {
        for (idx, c) in &o.terms {
            self.insert_sub(idx.clone(), c);
        }
    }

    /// `self += c * o`.
    pub fn add_scaled(&mut self, o: &Self, c: &C) {
        if c.is_zero() {
            return;
        }
        for (idx, t) in &o.terms {
            if idx.degree() > self.trunc {
                break;
            }
            match self.terms.entry(idx.clone()) {
                std::collections::btree_map::Entry::Vacant(v) => {
                    let mut z = zero_like(t);
                    z.acc_mul(t, c);
                    if !z.is_zero() {
                        v.insert(z);
                    }
                }
                std::collections::btree_map::Entry::Occupied(mut oc) => {
                    oc.get_mut().acc_mul(t, c);
                    if oc.get().is_zero() {
                        oc.remove();
                    }
                }
            }
        }
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut out = Self::new(self.n, self.trunc);
        if c.is_zero() {
            return out;
        }
        for (idx, t) in &self.terms {
            out.terms.insert(idx.clone(), t.mul(c));
        }
        out
    }

    pub fn scale_i64(&self, k: i64) -> Self {
        let mut out = Self::new(self.n, self.trunc);
        if k == 0 {
            return out;
        }
        for (idx, t) in &self.terms {
            out.terms.insert(idx.clone(), t.mul_i64(k));
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = Self::new(self.n, self.trunc);
        for (idx, t) in &self.terms {
            out.terms.insert(idx.clone(), t.neg());
        }
        out
    }

    /// Keep the terms whose index satisfies the predicate.
    pub fn project(&self, keep: impl Fn(&MultiIndex) -> bool) -> Self {
        let mut out = Self::new(self.n, self.trunc);
        for (idx, c) in &self.terms {
            if keep(idx) {
                out.terms.insert(idx.clone(), c.clone());
            }
        }
        out
    }

    fn degree_groups(&self) -> Vec<(u32, Vec<(&MultiIndex, &C)>)> {
        let mut out: Vec<(u32, Vec<(&MultiIndex, &C)>)> = Vec::new();
        for (idx, c) in &self.terms {
            match out.last_mut() {
                Some((d, items)) if *d == idx.degree() => items.push((idx, c)),
                _ => out.push((idx.degree(), vec![(idx, c)])),
            }
        }
        out
    }

    pub fn mul(&self, o: &Self) -> Self {
        self.mul_trunc(o, self.trunc.min(o.trunc))
    }

    /// Product truncated at `limit`.
    pub fn mul_trunc(&self, o: &Self, limit: u32) -> Self {
        let limit = limit.min(self.trunc).min(o.trunc);
        assert_eq!(self.n, o.n, "mul: dimension mismatch");
        let ga = self.degree_groups();
        let gb = o.degree_groups();
        let ranker = Ranker::new(self.n, limit);
        let mut slices: Vec<Option<Vec<Option<C>>>> = vec![None; limit as usize + 1];
        let mut scratch: Exps = smallvec::smallvec![0; self.n];
        for (da, ta) in &ga {
            if *da > limit {
                break;
            }
            for (db, tb) in &gb {
                let s = da + db;
                if s > limit {
                    break;
                }
                let slice = slices[s as usize]
                    .get_or_insert_with(|| vec![None; ranker.slice_len(s)]);
                for &(ia, ca) in ta {
                    for &(ib, cb) in tb {
                        for (k, x) in scratch.iter_mut().enumerate() {
                            *x = ia.exps()[k] + ib.exps()[k];
                        }
                        let r = ranker.rank(&scratch, s);
                        match &mut slice[r] {
                            Some(acc) => acc.acc_mul(ca, cb),
                            slot @ None => {
                                let mut z = zero_like(ca);
                                z.acc_mul(ca, cb);
                                *slot = Some(z);
                            }
                        }
                    }
                }
            }
        }
        Self::from_slices(self.n, limit, &ranker, slices)
    }

    /// `self * self`, exploiting symmetry.
    pub fn square_trunc(&self, limit: u32) -> Self {
        let limit = limit.min(self.trunc);
        let ga = self.degree_groups();
        // Doubled copies for the off-diagonal pairs.
        let doubled: Vec<Vec<C>> = ga
            .iter()
            .map(|(_, items)| items.iter().map(|(_, c)| c.mul_i64(2)).collect())
            .collect();
        let ranker = Ranker::new(self.n, limit);
        let mut slices: Vec<Option<Vec<Option<C>>>> = vec![None; limit as usize + 1];
        let mut scratch: Exps = smallvec::smallvec![0; self.n];
        let flat: Vec<(usize, usize)> = ga
            .iter()
            .enumerate()
            .flat_map(|(g, (_, items))| (0..items.len()).map(move |i| (g, i)))
            .collect();
        for (pa, &(g1, i1)) in flat.iter().enumerate() {
            let (ia, ca) = ga[g1].1[i1];
            for &(g2, i2) in &flat[pa..] {
                let (ib, cb) = ga[g2].1[i2];
                let s = ia.degree() + ib.degree();
                if s > limit {
                    continue;
                }
                let slice = slices[s as usize]
                    .get_or_insert_with(|| vec![None; ranker.slice_len(s)]);
                for (k, x) in scratch.iter_mut().enumerate() {
                    *x = ia.exps()[k] + ib.exps()[k];
                }
                let r = ranker.rank(&scratch, s);
                let lhs: &C = if g1 == g2 && i1 == i2 {
                    ca
                } else {
                    &doubled[g1][i1]
                };
                match &mut slice[r] {
                    Some(acc) => acc.acc_mul(lhs, cb),
                    slot @ None => {
                        let mut z = zero_like(ca);
                        z.acc_mul(lhs, cb);
                        *slot = Some(z);
                    }
                }
            }
        }
        Self::from_slices(self.n, limit, &ranker, slices)
    }

    fn from_slices(
        n: usize,
        trunc: u32,
        ranker: &Ranker,
        slices: Vec<Option<Vec<Option<C>>>>,
    ) -> Self {
        let mut terms = BTreeMap::new();
        for (s, slice) in slices.into_iter().enumerate() {
            let Some(slice) = slice else { continue };
            // Per-degree relative prune for float coefficients.
            let max_sq = if C::exact() {
                None
            } else {
                let mut m: Option<Float> = None;
                for c in slice.iter().flatten() {
                    let a = c.abs_sq_float(c.prec_of());
                    m = Some(match m {
                        None => a,
                        Some(prev) => {
                            if a > prev {
                                a
                            } else {
                                prev
                            }
                        }
                    });
                }
                m
            };
            for (r, c) in slice.into_iter().enumerate() {
                let Some(c) = c else { continue };
                if c.is_zero() {
                    continue;
                }
                if let Some(ref m) = max_sq {
                    if c.negligible_vs(m) {
                        continue;
                    }
                }
                let exps = ranker.unrank(r as u64, s as u32);
                terms.insert(MultiIndex::from_exps(exps), c);
            }
        }
        ScalarSeries { n, trunc, terms }
    }

    /// Partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::new(self.n, self.trunc);
        for (idx, c) in &self.terms {
            let e = idx.exps()[var];
            if e == 0 {
                continue;
            }
            let mut exps: Exps = SmallVec::from_slice(idx.exps());
            exps[var] = e - 1;
            out.terms
                .insert(MultiIndex::from_exps(exps), c.mul_i64(e as i64));
        }
        out
    }

    /// Evaluate at a point, coordinates given in the coefficient field.
    pub fn eval_point(&self, z: &[C]) -> C {
        assert_eq!(z.len(), self.n);
        let maxes: Vec<u16> = (0..self.n)
            .map(|i| {
                self.terms
                    .keys()
                    .map(|k| k.exps()[i])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let pows: Vec<Vec<C>> = (0..self.n)
            .map(|i| {
                let mut v = Vec::with_capacity(maxes[i] as usize + 1);
                v.push(C::one());
                for k in 1..=maxes[i] as usize {
                    let prev: &C = &v[k - 1];
                    v.push(prev.mul(&z[i]));
                }
                v
            })
            .collect();
        let mut acc = C::zero();
        for (idx, c) in &self.terms {
            let mut t = c.clone();
            for (i, &e) in idx.exps().iter().enumerate() {
                if e > 0 {
                    t = t.mul(&pows[i][e as usize]);
                }
            }
            acc.add_assign_c(&t);
        }
        acc
    }

    /// Weighted sum of coefficient moduli: an upper bound for the sup norm
    /// on the corresponding polydisc, monotone in each radius.
    pub fn polydisc_norm(&self, radii: &PolydiscRadii) -> Float {
        let prec = radii.prec().max(
            self.terms
                .values()
                .next()
                .map(|c| c.prec_of())
                .unwrap_or(64),
        );
        let kmax = self.max_degree().unwrap_or(0) as usize;
        let rp = pow_table(&radii.r, kmax, prec);
        let pp = pow_table(&radii.rho, kmax, prec);
        let mut acc = Float::new(prec);
        for (idx, c) in &self.terms {
            let dj: u32 = radii
                .jordan
                .iter()
                .map(|&v| idx.exps()[v] as u32)
                .sum();
            let dd = idx.degree() - dj;
            let w = (&rp[dd as usize] * &pp[dj as usize]).complete(prec);
            acc += c.abs_float(prec) * w;
        }
        acc
    }

    /// Exact-equality or within `2^-tol_bits` relative to the larger scale.
    pub fn agrees_within(&self, o: &Self, tol_bits: u32) -> bool {
        if C::exact() {
            return self.terms == o.terms;
        }
        let prec = self
            .terms
            .values()
            .chain(o.terms.values())
            .next()
            .map(|c| c.prec_of())
            .unwrap_or(64);
        let mut scale = Float::with_val(prec, 1e-300f64);
        for c in self.terms.values().chain(o.terms.values()) {
            let a = c.abs_sq_float(prec);
            if a > scale {
                scale = a;
            }
        }
        let thr = scale >> (2 * tol_bits); // squared threshold
        let keys: std::collections::BTreeSet<&MultiIndex> =
            self.terms.keys().chain(o.terms.keys()).collect();
        for k in keys {
            let a = self.terms.get(k);
            let b = o.terms.get(k);
            let d = match (a, b) {
                (Some(x), Some(y)) => x.sub(y),
                (Some(x), None) => x.clone(),
                (None, Some(y)) => y.clone(),
                (None, None) => continue,
            };
            if d.abs_sq_float(prec) > thr {
                return false;
            }
        }
        true
    }

    /// Largest squared coefficient magnitude.
    pub fn max_abs_sq(&self, prec: u32) -> Float {
        let mut m = Float::new(prec);
        for c in self.terms.values() {
            let a = c.abs_sq_float(prec);
            if a > m {
                m = a;
            }
        }
        m
    }
}

pub(crate) fn zero_like<C: Coeff>(template: &C) -> C {
    // Preserves precision in float mode: template - template.
    template.sub(template)
}

fn pow_table(x: &Float, kmax: usize, prec: u32) -> Vec<Float> {
    let mut v = Vec::with_capacity(kmax + 1);
    v.push(Float::with_val(prec, 1));
    for k in 1..=kmax {
        let next = (&v[k - 1] * x).complete(prec);
        v.push(next);
    }
    v
}

// ---------------------------------------------------------------------------
// Polydisc radii

/// Radii of the asymmetric polydisc: `r` on the listed diagonal variables,
/// `rho` on the Jordan-block variables.
#[derive(Clone, Debug)]
pub struct PolydiscRadii {
    pub r: Float,
    pub rho: Float,
    /// Variables measured with radius `rho`.
    pub jordan: Vec<usize>,
}

impl PolydiscRadii {
    pub fn new(r: Float, rho: Float, jordan: Vec<usize>) -> Result<Self> {
        if !(r.is_sign_positive() && !r.is_zero() && rho.is_sign_positive() && !rho.is_zero()) {
            return Err(CoreError::Config("polydisc radii must be positive".into()));
        }
        Ok(PolydiscRadii { r, rho, jordan })
    }

    pub fn uniform(r: Float) -> Self {
        PolydiscRadii {
            rho: r.clone(),
            r,
            jordan: Vec::new(),
        }
    }

    pub fn prec(&self) -> u32 {
        self.r.prec().max(self.rho.prec())
    }
}

// ---------------------------------------------------------------------------
// Vector series

/// `n`-component series sharing one truncation degree.
#[derive(Clone, PartialEq)]
pub struct VectorSeries<C: Coeff> {
    comps: Vec<ScalarSeries<C>>,
}

impl<C: Coeff> fmt::Debug for VectorSeries<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.comps.iter()).finish()
    }
}

impl<C: Coeff> VectorSeries<C> {
    pub fn new(n: usize, trunc: u32) -> Self {
        VectorSeries {
            comps: (0..n).map(|_| ScalarSeries::new(n, trunc)).collect(),
        }
    }

    pub fn from_components(comps: Vec<ScalarSeries<C>>) -> Result<Self> {
        let n = comps.len();
        for c in &comps {
            if c.nvars() != n {
                return Err(CoreError::DimensionMismatch(
                    "vector series components must use n variables".into(),
                ));
            }
            if c.trunc() != comps[0].trunc() {
                return Err(CoreError::TruncationMismatch(
                    "vector series components must share one truncation".into(),
                ));
            }
        }
        Ok(VectorSeries { comps })
    }

    /// The identity map `z -> z`.
    pub fn identity(n: usize, trunc: u32) -> Self {
        let mut v = Self::new(n, trunc);
        for i in 0..n {
            v.comps[i].insert_add(MultiIndex::unit(n, i), C::one());
        }
        v
    }

    #[inline]
    pub fn nvars(&self) -> usize {
        self.comps.len()
    }

    #[inline]
    pub fn trunc(&self) -> u32 {
        self.comps[0].trunc()
    }

    pub fn component(&self, i: usize) -> &ScalarSeries<C> {
        &self.comps[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut ScalarSeries<C> {
        &mut self.comps[i]
    }

    pub fn components(&self) -> &[ScalarSeries<C>] {
        &self.comps
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_zero())
    }

    pub fn order(&self) -> Option<u32> {
        self.comps.iter().filter_map(|c| c.order()).min()
    }

    pub fn order_significant(&self, rel_bits: u32) -> Option<u32> {
        self.comps
            .iter()
            .filter_map(|c| c.order_significant(rel_bits))
            .min()
    }

    pub fn max_degree(&self) -> Option<u32> {
        self.comps.iter().filter_map(|c| c.max_degree()).max()
    }

    pub fn add(&self, o: &Self) -> Self {
        VectorSeries {
            comps: self
                .comps
                .iter()
                .zip(&o.comps)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, o: &Self) -> Self {
        VectorSeries {
            comps: self
                .comps
                .iter()
                .zip(&o.comps)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: &C) -> Self {
        VectorSeries {
            comps: self.comps.iter().map(|s| s.scale(c)).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        VectorSeries {
            comps: self.comps.iter().map(|s| s.neg()).collect(),
        }
    }

    pub fn truncated(&self, k: u32) -> Self {
        VectorSeries {
            comps: self.comps.iter().map(|s| s.truncated(k)).collect(),
        }
    }

    pub fn drop_above(&mut self, k: u32) {
        for c in &mut self.comps {
            c.drop_above(k);
        }
    }

    pub fn project(&self, keep: impl Fn(&MultiIndex) -> bool + Copy) -> Self {
        VectorSeries {
            comps: self.comps.iter().map(|s| s.project(keep)).collect(),
        }
    }

    /// Zero constant term and unit linear part.
    pub fn is_tangent_to_identity(&self) -> bool {
        let n = self.nvars();
        for (i, comp) in self.comps.iter().enumerate() {
            for (idx, c) in comp.iter() {
                if idx.degree() >= 2 {
                    break;
                }
                if idx.degree() == 0 {
                    return false;
                }
                let var = idx.exps().iter().position(|&e| e == 1).unwrap();
                let expect_one = var == i;
                if expect_one {
                    if *c != C::one() {
                        return false;
                    }
                } else {
                    return false;
                }
            }
            // the diagonal linear term must be present
            if comp.get(&MultiIndex::unit(n, i)) != Some(&C::one()) {
                return false;
            }
        }
        true
    }

    /// Minimum order at least 2 (no constant, no linear part).
    pub fn has_order2(&self) -> bool {
        self.order().map_or(true, |o| o >= 2)
    }

    /// Matrix of partial derivatives; entry `(i, j)` is d self_i / d z_j.
    pub fn jacobian(&self) -> MatrixSeries<C> {
        let n = self.nvars();
        let elems = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| self.comps[i].derivative(j))
            .collect();
        MatrixSeries {
            rows: n,
            cols: n,
            elems,
        }
    }

    /// Componentwise polydisc norm maximum.
    pub fn polydisc_norm(&self, radii: &PolydiscRadii) -> Float {
        let mut m = Float::new(radii.prec());
        for c in &self.comps {
            let v = c.polydisc_norm(radii);
            if v > m {
                m = v;
            }
        }
        m
    }

    pub fn agrees_within(&self, o: &Self, tol_bits: u32) -> bool {
        self.comps
            .iter()
            .zip(&o.comps)
            .all(|(a, b)| a.agrees_within(b, tol_bits))
    }
}

// ---------------------------------------------------------------------------
// Linear substitution  z_i -> sum_j m_ij z_j

/// Sparse rows of a linear map, used both to substitute variables inside a
/// series and to act on components.
#[derive(Clone, Debug)]
pub struct LinearMap<C: Coeff> {
    pub n: usize,
    /// rows[i] lists (column, coefficient) with coefficients nonzero.
    pub rows: Vec<Vec<(usize, C)>>,
}

impl<C: Coeff> LinearMap<C> {
    pub fn identity(n: usize) -> Self {
        LinearMap {
            n,
            rows: (0..n).map(|i| vec![(i, C::one())]).collect(),
        }
    }

    pub fn from_dense(m: &[Vec<C>]) -> Self {
        let n = m.len();
        LinearMap {
            n,
            rows: m
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, c)| !c.is_zero())
                        .map(|(j, c)| (j, c.clone()))
                        .collect()
                })
                .collect(),
        }
    }
}

/// Expansion cache for powers of the linear forms of one substitution.
pub(crate) struct SubstCache<'a, C: Coeff> {
    map: &'a LinearMap<C>,
    /// pows[i][k] = expansion of (row_i . z)^k as (exponents, coefficient).
    pows: Vec<Vec<Vec<(Exps, C)>>>,
}

impl<'a, C: Coeff> SubstCache<'a, C> {
    pub fn new(map: &'a LinearMap<C>) -> Self {
        let pows = (0..map.n)
            .map(|_| vec![vec![(smallvec::smallvec![0u16; map.n], C::one())]])
            .collect();
        SubstCache { map, pows }
    }

    /// Expansion of the `k`-th power of row `i`, built incrementally.
    pub fn power(&mut self, i: usize, k: u16) -> &[(Exps, C)] {
        while self.pows[i].len() <= k as usize {
            let prev = self.pows[i].last().unwrap();
            let mut next: BTreeMap<Exps, C> = BTreeMap::new();
            for (exps, c) in prev {
                for (col, m) in &self.map.rows[i] {
                    let mut e2 = exps.clone();
                    e2[*col] += 1;
                    match next.entry(e2) {
                        std::collections::btree_map::Entry::Vacant(v) => {
                            let mut z = zero_like(c);
                            z.acc_mul(c, m);
                            v.insert(z);
                        }
                        std::collections::btree_map::Entry::Occupied(mut o) => {
                            o.get_mut().acc_mul(c, m);
                        }
                    }
                }
            }
            self.pows[i].push(next.into_iter().filter(|(_, c)| !c.is_zero()).collect());
        }
        &self.pows[i][k as usize]
    }

    /// All monomials of `c * prod_i (row_i . z)^{alpha_i}`, fed to `sink`.
    pub fn expand_monomial(
        &mut self,
        alpha: &MultiIndex,
        c: &C,
        sink: &mut impl FnMut(Exps, C),
    ) {
        let n = self.map.n;
        let mut acc: Vec<(Exps, C)> = vec![(smallvec::smallvec![0u16; n], c.clone())];
        for i in 0..n {
            let e = alpha.exps()[i];
            if e == 0 {
                continue;
            }
            let pw = self.power(i, e).to_vec();
            let mut next: Vec<(Exps, C)> = Vec::with_capacity(acc.len() * pw.len());
            for (ea, ca) in &acc {
                for (eb, cb) in &pw {
                    let mut e2 = ea.clone();
                    for (t, x) in e2.iter_mut().enumerate() {
                        *x += eb[t];
                    }
                    let mut z = zero_like(ca);
                    z.acc_mul(ca, cb);
                    next.push((e2, z));
                }
            }
            acc = next;
        }
        for (e, c) in acc {
            if !c.is_zero() {
                sink(e, c);
            }
        }
    }
}

/// `f(M z)`: substitute every variable by the linear form of its row.
///
/// Preserves the total degree of each homogeneous component; when `M` is
/// block diagonal with respect to a partition of the variables, the per-class
/// degree totals of every output monomial equal those of its source.
pub fn compose_linear<C: Coeff>(f: &ScalarSeries<C>, m: &LinearMap<C>) -> ScalarSeries<C> {
    let mut cache = SubstCache::new(m);
    let mut out = ScalarSeries::new(f.nvars(), f.trunc());
    for (idx, c) in f.iter() {
        cache.expand_monomial(idx, c, &mut |e, v| {
            out.insert_add(MultiIndex::from_exps(e), v);
        });
    }
    out
}

pub fn compose_linear_vec<C: Coeff>(f: &VectorSeries<C>, m: &LinearMap<C>) -> VectorSeries<C> {
    let mut cache = SubstCache::new(m);
    let comps = f
        .components()
        .iter()
        .map(|comp| {
            let mut out = ScalarSeries::new(comp.nvars(), comp.trunc());
            for (idx, c) in comp.iter() {
                cache.expand_monomial(idx, c, &mut |e, v| {
                    out.insert_add(MultiIndex::from_exps(e), v);
                });
            }
            out
        })
        .collect();
    VectorSeries { comps }
}

/// Componentwise action of a constant matrix: `(M f)_i = sum_j m_ij f_j`.
pub fn apply_const_matrix<C: Coeff>(m: &LinearMap<C>, f: &VectorSeries<C>) -> VectorSeries<C> {
    let n = f.nvars();
    let mut out = VectorSeries::new(n, f.trunc());
    for i in 0..n {
        for (j, c) in &m.rows[i] {
            out.comps[i].add_scaled(&f.comps[*j], c);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Composition with a series

/// `f(phi(z))` truncated at `limit`. `phi` must have no constant term.
pub fn compose_vec<C: Coeff>(
    f: &VectorSeries<C>,
    phi: &VectorSeries<C>,
    limit: u32,
) -> Result<VectorSeries<C>> {
    if f.nvars() != phi.nvars() {
        return Err(CoreError::DimensionMismatch(
            "compose: dimension mismatch".into(),
        ));
    }
    if phi.order() == Some(0) {
        return Err(CoreError::ConstantTerm);
    }
    let limit = limit.min(f.trunc()).min(phi.trunc());
    let n = f.nvars();
    // Shared power tables phi_i^k, k up to the largest exponent of z_i in f.
    let mut maxes = vec![0u16; n];
    for comp in f.components() {
        for (idx, _) in comp.iter() {
            for (i, &e) in idx.exps().iter().enumerate() {
                maxes[i] = maxes[i].max(e);
            }
        }
    }
    let mut tables: Vec<Vec<ScalarSeries<C>>> = (0..n)
        .map(|_| {
            let mut one = ScalarSeries::new(n, limit);
            one.insert_add(MultiIndex::zero(n), C::one());
            vec![one]
        })
        .collect();
    for i in 0..n {
        for k in 1..=maxes[i] as usize {
            let next = if k == 2 {
                tables[i][1].square_trunc(limit)
            } else {
                tables[i][k - 1].mul_trunc(phi.component(i), limit)
            };
            tables[i].push(next);
        }
    }
    let mut out = VectorSeries::new(n, limit);
    for (ci, comp) in f.components().iter().enumerate() {
        for (idx, c) in comp.iter() {
            // product over variables with positive exponent
            let mut factors: Vec<(usize, u16)> = idx
                .exps()
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| (i, e))
                .collect();
            factors.sort_by_key(|&(i, e)| std::cmp::Reverse(tables[i][e as usize].len()));
            match factors.len() {
                0 => {
                    out.comps[ci].insert_add(MultiIndex::zero(n), c.clone());
                }
                1 => {
                    let (i, e) = factors[0];
                    out.comps[ci].add_scaled(&tables[i][e as usize], c);
                }
                _ => {
                    let (i0, e0) = factors[0];
                    let mut prod = tables[i0][e0 as usize].clone();
                    for &(i, e) in &factors[1..] {
                        prod = prod.mul_trunc(&tables[i][e as usize], limit);
                    }
                    out.comps[ci].add_scaled(&prod, c);
                }
            }
        }
    }
    Ok(out)
}

/// Scalar-valued composition `f(phi(z))`.
pub fn compose<C: Coeff>(
    f: &ScalarSeries<C>,
    phi: &VectorSeries<C>,
    limit: u32,
) -> Result<ScalarSeries<C>> {
    let n = phi.nvars();
    if f.nvars() != n {
        return Err(CoreError::DimensionMismatch(
            "compose: dimension mismatch".into(),
        ));
    }
    let mut wrapped = VectorSeries::new(n, f.trunc());
    wrapped.comps[0] = f.clone();
    let out = compose_vec(&wrapped, phi, limit)?;
    Ok(out.comps.into_iter().next().unwrap())
}

// ---------------------------------------------------------------------------
// Matrix series

/// Dense matrix with series entries (row major).
#[derive(Clone, PartialEq)]
pub struct MatrixSeries<C: Coeff> {
    rows: usize,
    cols: usize,
    elems: Vec<ScalarSeries<C>>,
}

impl<C: Coeff> fmt::Debug for MatrixSeries<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "MatrixSeries {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                writeln!(f, "  ({i},{j}): {:?}", self.entry(i, j))?;
            }
        }
        Ok(())
    }
}

impl<C: Coeff> MatrixSeries<C> {
    pub fn new(rows: usize, cols: usize, n: usize, trunc: u32) -> Self {
        MatrixSeries {
            rows,
            cols,
            elems: (0..rows * cols).map(|_| ScalarSeries::new(n, trunc)).collect(),
        }
    }

    pub fn identity(dim: usize, n: usize, trunc: u32) -> Self {
        let mut m = Self::new(dim, dim, n, trunc);
        for i in 0..dim {
            let idx = MultiIndex::zero(n);
            m.entry_mut(i, i).insert_add(idx, C::one());
        }
        m
    }

    pub fn from_entries(rows: usize, cols: usize, elems: Vec<ScalarSeries<C>>) -> Self {
        assert_eq!(elems.len(), rows * cols);
        MatrixSeries { rows, cols, elems }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> &ScalarSeries<C> {
        &self.elems[i * self.cols + j]
    }

    #[inline]
    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut ScalarSeries<C> {
        &mut self.elems[i * self.cols + j]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nvars(&self) -> usize {
        self.elems[0].nvars()
    }

    pub fn trunc(&self) -> u32 {
        self.elems[0].trunc()
    }

    pub fn sub(&self, o: &Self) -> Self {
        MatrixSeries {
            rows: self.rows,
            cols: self.cols,
            elems: self
                .elems
                .iter()
                .zip(&o.elems)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn mul_vec(&self, v: &VectorSeries<C>, limit: u32) -> VectorSeries<C> {
        assert_eq!(self.cols, v.nvars());
        let mut out = VectorSeries::new(self.rows, limit.min(v.trunc()));
        for i in 0..self.rows {
            for j in 0..self.cols {
                let e = self.entry(i, j);
                if e.is_zero() || v.component(j).is_zero() {
                    continue;
                }
                let p = e.mul_trunc(v.component(j), limit);
                out.comps[i].add_assign_series(&p);
            }
        }
        out
    }

    pub fn mul_mat(&self, o: &Self, limit: u32) -> Self {
        assert_eq!(self.cols, o.rows);
        let mut out = Self::new(self.rows, o.cols, self.nvars(), limit.min(self.trunc()));
        for i in 0..self.rows {
            for j in 0..o.cols {
                for k in 0..self.cols {
                    let a = self.entry(i, k);
                    let b = o.entry(k, j);
                    if a.is_zero() || b.is_zero() {
                        continue;
                    }
                    let p = a.mul_trunc(b, limit);
                    out.entry_mut(i, j).add_assign_series(&p);
                }
            }
        }
        out
    }

    /// Substitute variables inside every entry.
    pub fn compose_linear(&self, m: &LinearMap<C>) -> Self {
        let mut cache = SubstCache::new(m);
        let elems = self
            .elems
            .iter()
            .map(|e| {
                let mut out = ScalarSeries::new(e.nvars(), e.trunc());
                for (idx, c) in e.iter() {
                    cache.expand_monomial(idx, c, &mut |ex, v| {
                        out.insert_add(MultiIndex::from_exps(ex), v);
                    });
                }
                out
            })
            .collect();
        MatrixSeries {
            rows: self.rows,
            cols: self.cols,
            elems,
        }
    }

    pub fn constant_part(&self) -> Vec<Vec<C>> {
        let n = self.nvars();
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| {
                        self.entry(i, j)
                            .get(&MultiIndex::zero(n))
                            .cloned()
                            .unwrap_or_else(C::zero)
                    })
                    .collect()
            })
            .collect()
    }

    /// Solve `self . x = rhs` degree by degree, truncated at `limit`.
    ///
    /// Requires an invertible constant part. With `self = M0 + E`,
    /// `ord(E) >= 1`, the degree-d slice of the solution is
    /// `M0^{-1} (rhs_d - (E x)_d)`, which only uses lower-degree slices.
    pub fn solve_vec(&self, rhs: &VectorSeries<C>, limit: u32) -> Result<VectorSeries<C>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, rhs.nvars());
        let dim = self.rows;
        let n = self.nvars();
        let limit = limit.min(self.trunc()).min(rhs.trunc());
        let m0 = self.constant_part();
        let m0inv = invert_const_matrix(&m0)?;
        // E = self - M0, per-entry grouped by degree (skipping degree 0)
        let mut x = VectorSeries::new(dim, limit);
        for d in 0..=limit {
            // w_i[alpha] = rhs_i,d[alpha] - sum_j (E_ij x_j)_d[alpha]
            let mut w: Vec<BTreeMap<MultiIndex, C>> = vec![BTreeMap::new(); dim];
            for i in 0..dim {
                let lo = MultiIndex::first_of_degree(n, d);
                let hi = MultiIndex::last_of_degree(n, d);
                for (idx, c) in rhs.component(i).terms.range(lo..=hi) {
                    w[i].insert(idx.clone(), c.clone());
                }
                for j in 0..dim {
                    let e = self.entry(i, j);
                    if e.is_zero() {
                        continue;
                    }
                    for (eidx, ec) in e.iter() {
                        let ed = eidx.degree();
                        if ed == 0 || ed > d {
                            continue;
                        }
                        let xd = d - ed;
                        let lo = MultiIndex::first_of_degree(n, xd);
                        let hi = MultiIndex::last_of_degree(n, xd);
                        for (xidx, xc) in x.component(j).terms.range(lo..=hi) {
                            let key = eidx.add(xidx);
                            match w[i].entry(key) {
                                std::collections::btree_map::Entry::Vacant(v) => {
                                    let mut z: C = zero_like(xc);
                                    z.sub_mul(ec, xc);
                                    v.insert(z);
                                }
                                std::collections::btree_map::Entry::Occupied(mut o) => {
                                    o.get_mut().sub_mul(ec, xc);
                                }
                            }
                        }
                    }
                }
            }
            // x_d = M0^{-1} w
            let mut keys: std::collections::BTreeSet<MultiIndex> = std::collections::BTreeSet::new();
            for wi in &w {
                keys.extend(wi.keys().cloned());
            }
            for key in keys {
                for i in 0..dim {
                    let mut acc = C::zero();
                    for j in 0..dim {
                        if let Some(c) = w[j].get(&key) {
                            if !m0inv[i][j].is_zero() {
                                acc.acc_mul(&m0inv[i][j], c);
                            }
                        }
                    }
                    x.comps[i].insert_add(key.clone(), acc);
                }
            }
        }
        Ok(x)
    }

    /// Inverse through degree `limit`; requires an invertible constant part.
    pub fn inverse(&self, limit: u32) -> Result<MatrixSeries<C>> {
        assert_eq!(self.rows, self.cols);
        let dim = self.rows;
        let n = self.nvars();
        let mut out = MatrixSeries::new(dim, dim, n, limit.min(self.trunc()));
        for j in 0..dim {
            let mut rhs = VectorSeries::new(dim, limit.min(self.trunc()));
            rhs.comps[j].insert_add(MultiIndex::zero(n), C::one());
            let col = self.solve_vec(&rhs, limit)?;
            for i in 0..dim {
                out.elems[i * dim + j] = col.comps[i].clone();
            }
        }
        Ok(out)
    }
}

/// Gauss-Jordan inverse of a constant complex matrix.
pub fn invert_const_matrix<C: Coeff>(m: &[Vec<C>]) -> Result<Vec<Vec<C>>> {
    let dim = m.len();
    let mut a: Vec<Vec<C>> = m.to_vec();
    let mut inv: Vec<Vec<C>> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| if i == j { C::one() } else { C::zero() })
                .collect()
        })
        .collect();
    for col in 0..dim {
        // pivot: largest |.|^2 below (deterministic); exact mode takes the
        // first nonzero
        let piv = if C::exact() {
            (col..dim).find(|&r| !a[r][col].is_zero())
        } else {
            let mut best: Option<(usize, Float)> = None;
            for r in col..dim {
                if a[r][col].is_zero() {
                    continue;
                }
                let mag = a[r][col].abs_sq_float(a[r][col].prec_of());
                match &best {
                    Some((_, bm)) if *bm >= mag => {}
                    _ => best = Some((r, mag)),
                }
            }
            best.map(|(r, _)| r)
        };
        let Some(p) = piv else {
            return Err(CoreError::SingularConstantTerm);
        };
        a.swap(col, p);
        inv.swap(col, p);
        let d = a[col][col].inv().ok_or(CoreError::SingularConstantTerm)?;
        for j in 0..dim {
            a[col][j] = a[col][j].mul(&d);
            inv[col][j] = inv[col][j].mul(&d);
        }
        for r in 0..dim {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            for j in 0..dim {
                let t = a[col][j].mul(&f);
                a[r][j].sub_assign_c(&t);
                let t = inv[col][j].mul(&f);
                inv[r][j].sub_assign_c(&t);
            }
        }
    }
    Ok(inv)
}

// ---------------------------------------------------------------------------
// Sup norm bracket

/// Certified bracket for the sup norm of a vector series on the ball of
/// radius `r`: the polydisc norm from above, a boundary phase grid from
/// below (`grid` equispaced phases per variable).
pub fn sup_norm_estimate<C: Coeff>(
    f: &VectorSeries<C>,
    r: &Float,
    grid: usize,
) -> (Float, Float) {
    let prec = r.prec().max(
        f.components()
            .iter()
            .flat_map(|c| c.iter().map(|(_, v)| v.prec_of()))
            .next()
            .unwrap_or(64),
    );
    let upper = f.polydisc_norm(&PolydiscRadii::uniform(r.clone()));
    let n = f.nvars();
    if f.is_zero() {
        return (Float::new(prec), upper);
    }
    // grid points: z_i = r * exp(2 pi i k_i / grid)
    let mut phases: Vec<(Float, Float)> = Vec::with_capacity(grid);
    let two_pi = Float::with_val(prec, rug::float::Constant::Pi) * 2u32;
    for k in 0..grid {
        let ang = Float::with_val(prec, k as u32) * &two_pi / Float::with_val(prec, grid as u32);
        let (s, c) = ang.sin_cos(Float::new(prec));
        phases.push((c * r.clone(), s * r.clone()));
    }
    let mut lower = Float::new(prec);
    let mut point = vec![(Float::new(prec), Float::new(prec)); n];
    let mut counter = vec![0usize; n];
    loop {
        for (i, &k) in counter.iter().enumerate() {
            point[i] = phases[k].clone();
        }
        for comp in f.components() {
            let (re, im) = eval_float_point(comp, &point, prec);
            let mag = (re.square() + im.square()).sqrt();
            if mag > lower {
                lower = mag;
            }
        }
        // odometer
        let mut i = 0;
        loop {
            if i == n {
                return (lower, upper);
            }
            counter[i] += 1;
            if counter[i] < grid {
                break;
            }
            counter[i] = 0;
            i += 1;
        }
    }
}

fn eval_float_point<C: Coeff>(
    s: &ScalarSeries<C>,
    z: &[(Float, Float)],
    prec: u32,
) -> (Float, Float) {
    let n = s.nvars();
    let maxes: Vec<u16> = (0..n)
        .map(|i| s.iter().map(|(k, _)| k.exps()[i]).max().unwrap_or(0))
        .collect();
    // power tables of the point coordinates
    let mut pows: Vec<Vec<(Float, Float)>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = vec![(Float::with_val(prec, 1), Float::new(prec))];
        for k in 1..=maxes[i] as usize {
            let (pr, pi) = &v[k - 1];
            let re = (pr * &z[i].0).complete(prec) - (pi * &z[i].1).complete(prec);
            let im = (pr * &z[i].1).complete(prec) + (pi * &z[i].0).complete(prec);
            v.push((re, im));
        }
        pows.push(v);
    }
    let mut acc_re = Float::new(prec);
    let mut acc_im = Float::new(prec);
    for (idx, c) in s.iter() {
        let mut tre = c.re_float(prec);
        let mut tim = c.im_float(prec);
        for (i, &e) in idx.exps().iter().enumerate() {
            if e == 0 {
                continue;
            }
            let (pr, pi) = &pows[i][e as usize];
            let re = (&tre * pr).complete(prec) - (&tim * pi).complete(prec);
            let im = (&tre * pi).complete(prec) + (&tim * pr).complete(prec);
            tre = re;
            tim = im;
        }
        acc_re += tre;
        acc_im += tim;
    }
    (acc_re, acc_im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{CRat, CF};
    use rug::Rational;

    fn s_rat(n: usize, k: u32, terms: &[(&[u16], i64, i64)]) -> ScalarSeries<CRat> {
        let mut s = ScalarSeries::new(n, k);
        for (e, num, den) in terms {
            s.insert_add(
                MultiIndex::new(e),
                CRat::new(Rational::from((*num, *den)), Rational::new()),
            );
        }
        s
    }

    #[test]
    fn lex_order_examples() {
        let a = MultiIndex::new(&[1, 2]);
        let b = MultiIndex::new(&[2, 1]);
        assert_eq!(lex_compare(&a, &b).unwrap(), std::cmp::Ordering::Less);
        let c = MultiIndex::new(&[0, 3]);
        assert_eq!(lex_compare(&c, &c.clone()).unwrap(), std::cmp::Ordering::Equal);
        let d = MultiIndex::new(&[2, 0, 0]);
        let e = MultiIndex::new(&[1, 1, 1]);
        assert_eq!(lex_compare(&d, &e).unwrap(), std::cmp::Ordering::Less);
        assert!(lex_compare(&a, &d).is_err());
    }

    #[test]
    fn block_degree_examples() {
        let a = MultiIndex::new(&[3, 1, 2]);
        assert_eq!(
            block_degrees(&a, &[vec![0], vec![1, 2]]).unwrap(),
            vec![3, 3]
        );
        let z = MultiIndex::new(&[0, 0, 0]);
        assert_eq!(
            block_degrees(&z, &[vec![0], vec![1, 2]]).unwrap(),
            vec![0, 0]
        );
        let b = MultiIndex::new(&[1, 2, 0, 4]);
        assert_eq!(
            block_degrees(&b, &[vec![0, 3], vec![1, 2]]).unwrap(),
            vec![5, 2]
        );
        assert!(block_degrees(&a, &[vec![0], vec![1]]).is_err());
    }

    #[test]
    fn ranker_roundtrip() {
        for n in 1..=5usize {
            let r = Ranker::new(n, 9);
            for d in 0..=9u32 {
                let len = r.slice_len(d);
                for idx in 0..len {
                    let e = r.unrank(idx as u64, d);
                    assert_eq!(e.iter().map(|&x| x as u32).sum::<u32>(), d);
                    assert_eq!(r.rank(&e, d), idx);
                }
            }
        }
    }

    #[test]
    fn ranker_matches_ord() {
        let n = 3;
        let r = Ranker::new(n, 6);
        for d in 0..=6u32 {
            let mut keys: Vec<MultiIndex> = (0..r.slice_len(d))
                .map(|i| MultiIndex::from_exps(r.unrank(i as u64, d)))
                .collect();
            let mut sorted = keys.clone();
            sorted.sort();
            assert_eq!(keys, sorted);
            keys.dedup();
            assert_eq!(keys.len(), r.slice_len(d));
        }
    }

    #[test]
    fn ring_ops_examples() {
        // (z1+z2)(z1-z2) = z1^2 - z2^2 at K=2
        let a = s_rat(2, 2, &[(&[1, 0], 1, 1), (&[0, 1], 1, 1)]);
        let b = s_rat(2, 2, &[(&[1, 0], 1, 1), (&[0, 1], -1, 1)]);
        let p = a.mul(&b);
        let expect = s_rat(2, 2, &[(&[2, 0], 1, 1), (&[0, 2], -1, 1)]);
        assert_eq!(p, expect);

        // truncate(z1^3, K=2) = 0
        let c = s_rat(2, 3, &[(&[3, 0], 1, 1)]);
        assert!(c.truncated(2).is_zero());

        // scale(2, z1 z2)
        let d = s_rat(2, 4, &[(&[1, 1], 1, 1)]);
        assert_eq!(d.scale_i64(2), s_rat(2, 4, &[(&[1, 1], 2, 1)]));
    }

    #[test]
    fn square_matches_mul() {
        let a = s_rat(
            3,
            6,
            &[(&[1, 0, 0], 2, 1), (&[0, 1, 1], -3, 2), (&[0, 0, 2], 5, 3)],
        );
        assert_eq!(a.square_trunc(6), a.mul(&a));
        assert_eq!(a.square_trunc(3), a.mul_trunc(&a, 3));
    }

    #[test]
    fn compose_linear_examples() {
        // f = z1 z2, M = [[1/2, eps],[0, 1/2]] with eps = 1/10
        let f = s_rat(2, 4, &[(&[1, 1], 1, 1)]);
        let m = LinearMap::from_dense(&[
            vec![CRat::from_ratio(1, 2), CRat::from_ratio(1, 10)],
            vec![CRat::zero(), CRat::from_ratio(1, 2)],
        ]);
        let out = compose_linear(&f, &m);
        let expect = s_rat(2, 4, &[(&[1, 1], 1, 4), (&[0, 2], 1, 20)]);
        assert_eq!(out, expect);

        // identity leaves f unchanged
        let id = LinearMap::identity(2);
        assert_eq!(compose_linear(&f, &id), f);

        // f = z2^2 under the Jordan map -> lambda^2 z2^2
        let g = s_rat(2, 4, &[(&[0, 2], 1, 1)]);
        assert_eq!(compose_linear(&g, &m), s_rat(2, 4, &[(&[0, 2], 1, 4)]));
    }

    #[test]
    fn compose_examples() {
        // f = z1^2, phi = (z1+z2^2, z2), K=4 -> z1^2 + 2 z1 z2^2 + z2^4
        let f = VectorSeries::from_components(vec![
            s_rat(2, 4, &[(&[2, 0], 1, 1)]),
            ScalarSeries::new(2, 4),
        ])
        .unwrap();
        let phi = VectorSeries::from_components(vec![
            s_rat(2, 4, &[(&[1, 0], 1, 1), (&[0, 2], 1, 1)]),
            s_rat(2, 4, &[(&[0, 1], 1, 1)]),
        ])
        .unwrap();
        let out = compose_vec(&f, &phi, 4).unwrap();
        let expect = s_rat(2, 4, &[(&[2, 0], 1, 1), (&[1, 2], 2, 1), (&[0, 4], 1, 1)]);
        assert_eq!(out.component(0), &expect);

        // identity composition
        let idm = VectorSeries::identity(2, 4);
        assert_eq!(compose_vec(&f, &idm, 4).unwrap().component(0), f.component(0));

        // f = z1 z2, phi = (z1, z1^2), K=3 -> z1^3
        let f2 = VectorSeries::from_components(vec![
            s_rat(2, 3, &[(&[1, 1], 1, 1)]),
            ScalarSeries::new(2, 3),
        ])
        .unwrap();
        let phi2 = VectorSeries::from_components(vec![
            s_rat(2, 3, &[(&[1, 0], 1, 1)]),
            s_rat(2, 3, &[(&[2, 0], 1, 1)]),
        ])
        .unwrap();
        let out2 = compose_vec(&f2, &phi2, 3).unwrap();
        assert_eq!(out2.component(0), &s_rat(2, 3, &[(&[3, 0], 1, 1)]));

        // constant term rejected
        let bad = VectorSeries::from_components(vec![
            s_rat(2, 3, &[(&[0, 0], 1, 1)]),
            s_rat(2, 3, &[(&[0, 1], 1, 1)]),
        ])
        .unwrap();
        assert!(compose_vec(&f2, &bad, 3).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let phi = VectorSeries::<CRat>::identity(2, 4);
        let j = phi.jacobian();
        assert_eq!(j.entry(0, 0), &s_rat(2, 4, &[(&[0, 0], 1, 1)]));
        assert!(j.entry(0, 1).is_zero());

        let phi2 = VectorSeries::from_components(vec![
            s_rat(2, 4, &[(&[1, 0], 1, 1), (&[0, 2], 1, 1)]),
            s_rat(2, 4, &[(&[0, 1], 1, 1)]),
        ])
        .unwrap();
        let j2 = phi2.jacobian();
        assert_eq!(j2.entry(0, 1), &s_rat(2, 4, &[(&[0, 1], 2, 1)]));

        let phi3 = VectorSeries::from_components(vec![
            s_rat(2, 4, &[(&[1, 1], 1, 1)]),
            ScalarSeries::new(2, 4),
        ])
        .unwrap();
        let j3 = phi3.jacobian();
        assert_eq!(j3.entry(0, 0), &s_rat(2, 4, &[(&[0, 1], 1, 1)]));
        assert_eq!(j3.entry(0, 1), &s_rat(2, 4, &[(&[1, 0], 1, 1)]));
        assert!(j3.entry(1, 0).is_zero());
    }

    #[test]
    fn matrix_inverse_examples() {
        // identity
        let id = MatrixSeries::<CRat>::identity(2, 2, 3);
        assert_eq!(id.inverse(3).unwrap(), id);

        // [[1+z1, 0],[0,1]] -> [[1-z1+z1^2, 0],[0,1]] at K=2
        let mut m = MatrixSeries::<CRat>::identity(2, 2, 2);
        m.entry_mut(0, 0).insert_add(MultiIndex::new(&[1, 0]), CRat::one());
        let inv = m.inverse(2).unwrap();
        let expect = s_rat(2, 2, &[(&[0, 0], 1, 1), (&[1, 0], -1, 1), (&[2, 0], 1, 1)]);
        assert_eq!(inv.entry(0, 0), &expect);
        // product check
        let prod = m.mul_mat(&inv, 2);
        assert_eq!(prod, MatrixSeries::identity(2, 2, 2));

        // jacobian of (z1 + z2^2, z2)
        let phi = VectorSeries::from_components(vec![
            s_rat(2, 4, &[(&[1, 0], 1, 1), (&[0, 2], 1, 1)]),
            s_rat(2, 4, &[(&[0, 1], 1, 1)]),
        ])
        .unwrap();
        let j = phi.jacobian();
        let jinv = j.inverse(4).unwrap();
        assert_eq!(jinv.entry(0, 1), &s_rat(2, 4, &[(&[0, 1], -2, 1)]));
        assert_eq!(j.mul_mat(&jinv, 4), MatrixSeries::identity(2, 2, 4));

        // singular constant part
        let zero = MatrixSeries::<CRat>::new(2, 2, 2, 2);
        assert!(zero.inverse(2).is_err());
    }

    #[test]
    fn polydisc_norm_examples() {
        use rug::Float;
        // f = z1 z2, 1 in D, 2 in J, r=1, rho=1/2 -> 1/2
        let f = s_rat(2, 4, &[(&[1, 1], 1, 1)]);
        let radii =
            PolydiscRadii::new(Float::with_val(64, 1), Float::with_val(64, 0.5), vec![1]).unwrap();
        assert_eq!(f.polydisc_norm(&radii).to_f64(), 0.5);

        let zero = ScalarSeries::<CRat>::new(2, 4);
        assert_eq!(zero.polydisc_norm(&radii).to_f64(), 0.0);

        // f = 2 z1^2 + 3 z2 at r=rho=1/2 -> 2
        let g = s_rat(2, 4, &[(&[2, 0], 2, 1), (&[0, 1], 3, 1)]);
        let radii2 = PolydiscRadii::uniform(Float::with_val(64, 0.5));
        assert_eq!(g.polydisc_norm(&radii2).to_f64(), 2.0);
    }

    #[test]
    fn sup_norm_bracket_examples() {
        use rug::Float;
        // f = z1 at r = 1/2: both bounds tight
        let f = VectorSeries::from_components(vec![
            ScalarSeries::<CF>::monomial(2, 4, &[1, 0], CF::with_prec(96, 1.0, 0.0)),
            ScalarSeries::new(2, 4),
        ])
        .unwrap();
        let (lo, up) = sup_norm_estimate(&f, &Float::with_val(96, 0.5), 8);
        assert!((lo.to_f64() - 0.5).abs() < 1e-20);
        assert!((up.to_f64() - 0.5).abs() < 1e-20);

        // zero
        let z = VectorSeries::<CF>::new(2, 4);
        let (lo, up) = sup_norm_estimate(&z, &Float::with_val(96, 0.5), 8);
        assert_eq!(lo.to_f64(), 0.0);
        assert_eq!(up.to_f64(), 0.0);

        // f = z1 + z2 at r=1: both 2 (phases aligned at grid point 0)
        let mut c0 = ScalarSeries::<CF>::new(2, 4);
        c0.insert_add(MultiIndex::new(&[1, 0]), CF::with_prec(96, 1.0, 0.0));
        c0.insert_add(MultiIndex::new(&[0, 1]), CF::with_prec(96, 1.0, 0.0));
        let f2 = VectorSeries::from_components(vec![c0, ScalarSeries::new(2, 4)]).unwrap();
        let (lo, up) = sup_norm_estimate(&f2, &Float::with_val(96, 1), 8);
        assert!((lo.to_f64() - 2.0).abs() < 1e-20);
        assert!((up.to_f64() - 2.0).abs() < 1e-20);
    }

    #[test]
    fn solve_vec_roundtrip() {
        // M = I + degree-1 noise; check M . solve(rhs) == rhs
        let mut m = MatrixSeries::<CRat>::identity(2, 2, 5);
        m.entry_mut(0, 1).insert_add(MultiIndex::new(&[1, 0]), CRat::from_ratio(1, 3));
        m.entry_mut(1, 0).insert_add(MultiIndex::new(&[0, 1]), CRat::from_ratio(-2, 7));
        let rhs = VectorSeries::from_components(vec![
            s_rat(2, 5, &[(&[2, 0], 1, 1), (&[1, 2], -4, 5)]),
            s_rat(2, 5, &[(&[0, 2], 3, 2)]),
        ])
        .unwrap();
        let x = m.solve_vec(&rhs, 5).unwrap();
        let back = m.mul_vec(&x, 5);
        assert_eq!(back, rhs);
    }
}
