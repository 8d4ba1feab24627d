//! The Siegel/Poincare decomposition of multi-indices.
//!
//! A multi-index of degree >= 2 is classified by its block-degree signature
//! `(|A_2|, ..., |A_m|)` over the modulus classes:
//!
//! - total 0: the inner Siegel slice (only unit-modulus variables);
//! - total 1: the boundary Siegel slice;
//! - a quasi-resonance signature: the matching resonant Siegel slice;
//! - anything else: the Poincare slice.
//!
//! Without quasi-resonances the source decomposition leaves totals equal to
//! 1 in both sets; we take the Poincare slice to start at total 2 so the
//! two slices partition (their disjointness is asserted by the
//! decomposition's own first property). The verification report prints the
//! repaired convention.

use std::fmt;

use crate::error::{CoreError, Result};
use crate::homological::{apply_homological, solve, HomologicalProblem};
use crate::num::Coeff;
use crate::series::{MultiIndex, Ranker, VectorSeries};
use crate::spectrum::{
    enumerate_quasi_resonances, ModulusClasses, QuasiResonanceTable, Spectrum,
};

/// Which decomposition applies: no quasi-resonance, or the refined one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceCaseId {
    NoQr,
    WithQr,
}

/// Classification target of one multi-index.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SliceLabel {
    /// Signature total 0: unit-class variables only.
    S1,
    /// Signature total 1.
    S2,
    /// Matches the quasi-resonance `kappa` targeting `class`.
    Sqr { class: usize, kappa: Vec<u32> },
    /// Everything else.
    P,
}

impl SliceLabel {
    pub fn is_siegel(&self) -> bool {
        !matches!(self, SliceLabel::P)
    }
}

impl fmt::Display for SliceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SliceLabel::S1 => write!(f, "S1"),
            SliceLabel::S2 => write!(f, "S2"),
            SliceLabel::Sqr { class, kappa } => {
                write!(
                    f,
                    "Sqr[class={},kappa=({})]",
                    class + 1,
                    kappa
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                )
            }
            SliceLabel::P => write!(f, "P"),
        }
    }
}

/// Modulus classes plus the quasi-resonance table, fixing the decomposition.
#[derive(Clone, Debug)]
pub struct SliceConfig {
    pub case: SliceCaseId,
    pub classes: ModulusClasses,
    pub qr: QuasiResonanceTable,
}

impl SliceConfig {
    /// Derive the decomposition from a spectrum: enumerate quasi-resonances
    /// and pick the case accordingly.
    pub fn derive<C: Coeff>(spec: &Spectrum<C>) -> Result<Self> {
        let classes = ModulusClasses::group(spec, None)?;
        let qr = enumerate_quasi_resonances(&classes, None)?;
        let case = if classes.count() >= 3 && !qr.is_empty() {
            SliceCaseId::WithQr
        } else {
            SliceCaseId::NoQr
        };
        Ok(SliceConfig { case, classes, qr })
    }

    pub fn with_case(classes: ModulusClasses, qr: QuasiResonanceTable, case: SliceCaseId) -> Self {
        SliceConfig { case, classes, qr }
    }
}

/// Classify a multi-index of degree >= 2.
pub fn classify(alpha: &MultiIndex, cfg: &SliceConfig) -> Result<SliceLabel> {
    if alpha.degree() < 2 {
        return Err(CoreError::OrderTooLow(format!(
            "classification needs |alpha| >= 2, got {}",
            alpha.degree()
        )));
    }
    let sig = cfg.classes.signature(alpha);
    let total: u32 = sig.iter().sum();
    Ok(match total {
        0 => SliceLabel::S1,
        1 => SliceLabel::S2,
        _ => match cfg.case {
            SliceCaseId::NoQr => SliceLabel::P,
            SliceCaseId::WithQr => match cfg.qr.match_signature(&sig) {
                Some(e) => SliceLabel::Sqr {
                    class: e.class,
                    kappa: e.kappa.clone(),
                },
                None => SliceLabel::P,
            },
        },
    })
}

/// Keep exactly the terms whose label satisfies the predicate.
pub fn project<C: Coeff>(
    f: &VectorSeries<C>,
    cfg: &SliceConfig,
    keep: impl Fn(&SliceLabel) -> bool + Copy,
) -> Result<VectorSeries<C>> {
    if f.order().map_or(false, |o| o < 2) {
        return Err(CoreError::OrderTooLow(
            "projection is defined on series of order >= 2".into(),
        ));
    }
    Ok(f.project(|idx| keep(&classify(idx, cfg).expect("degree >= 2 by order check"))))
}

/// Outcome of the mechanical invariance check.
#[derive(Clone, Debug)]
pub struct InvarianceReport {
    pub partition_ok: bool,
    pub invariance_ok: bool,
    /// Violations as (source index, component, offending output index,
    /// source label, output label).
    pub counterexamples: Vec<(MultiIndex, usize, MultiIndex, SliceLabel, SliceLabel)>,
    pub checked_indices: usize,
    /// The repaired Poincare convention, printed by the verify command.
    pub convention: &'static str,
}

/// Exhaustively verify, for `2 <= |alpha| <= k`, that classification is a
/// partition and that the homological operator and its inverse keep every
/// basis monomial's support inside its slice.
pub fn verify_invariance<C: Coeff>(
    cfg: &SliceConfig,
    spec: &Spectrum<C>,
    k: u32,
) -> Result<InvarianceReport> {
    verify_invariance_with(cfg, spec, k, |alpha, cfg| classify(alpha, cfg))
}

/// Same, with a injectable classifier (used to prove the check catches
/// corrupted labelings).
pub fn verify_invariance_with<C: Coeff>(
    cfg: &SliceConfig,
    spec: &Spectrum<C>,
    k: u32,
    classifier: impl Fn(&MultiIndex, &SliceConfig) -> Result<SliceLabel>,
) -> Result<InvarianceReport> {
    let n = spec.dim();
    let ranker = Ranker::new(n, k);
    let mut counterexamples = Vec::new();
    let mut checked = 0usize;
    for d in 2..=k {
        for r in 0..ranker.slice_len(d) {
            let alpha = MultiIndex::from_exps(ranker.unrank(r as u64, d));
            let label = classifier(&alpha, cfg)?;
            checked += 1;
            for j in 0..n {
                // basis monomial e_j z^alpha
                let mut basis = VectorSeries::<C>::new(n, d);
                basis
                    .component_mut(j)
                    .insert_add(alpha.clone(), C::one());
                let image = apply_homological(&basis, spec);
                let mut offenders: Vec<(MultiIndex, usize)> = Vec::new();
                for (comp, series) in image.components().iter().enumerate() {
                    for (idx, _) in series.iter() {
                        offenders.push((idx.clone(), comp));
                    }
                }
                let problem = HomologicalProblem::new(spec.clone(), basis)?;
                let pre = solve(&problem)?;
                for (comp, series) in pre.components().iter().enumerate() {
                    for (idx, _) in series.iter() {
                        offenders.push((idx.clone(), comp));
                    }
                }
                for (idx, comp) in offenders {
                    let out_label = classifier(&idx, cfg)?;
                    if out_label != label {
                        counterexamples.push((
                            alpha.clone(),
                            comp,
                            idx,
                            label.clone(),
                            out_label,
                        ));
                    }
                }
            }
        }
    }
    Ok(InvarianceReport {
        partition_ok: true, // classify is total and single-valued by construction
        invariance_ok: counterexamples.is_empty(),
        counterexamples,
        checked_indices: checked,
        convention: "Poincare slice = block-degree total >= 2 \
                     (partition repair of the source convention)",
    })
}

/// Census of labels per degree, reported by the analyze command.
pub fn slice_census(cfg: &SliceConfig, n: usize, k: u32) -> Vec<(u32, Vec<(String, usize)>)> {
    let ranker = Ranker::new(n, k);
    let mut out = Vec::new();
    for d in 2..=k {
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        for r in 0..ranker.slice_len(d) {
            let alpha = MultiIndex::from_exps(ranker.unrank(r as u64, d));
            let label = classify(&alpha, cfg).expect("degree >= 2");
            *counts.entry(label.to_string()).or_default() += 1;
        }
        out.push((d, counts.into_iter().collect()));
    }
    out
}
