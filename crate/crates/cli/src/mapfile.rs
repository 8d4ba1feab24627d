//! The JSON map-file format.
//!
//! ```json
//! {
//!   "n": 3,
//!   "precision_bits": 256,
//!   "mode": "float",
//!   "lambda": [ {"unit_phase": "0.6180339887498948482"},
//!               {"re": "0.5", "im": "0"},
//!               {"re": "0.5", "im": "0"} ],
//!   "blocks": [[2, 2]],
//!   "epsilon": "0.01",
//!   "f": [ {"component": 1, "alpha": [0, 2, 0], "coeff": {"re": "0.001", "im": "0"}} ],
//!   "truncation": 64
//! }
//! ```
//!
//! Numbers are decimal or `p/q` strings, never binary floats. Components
//! and block starts are 1-based. `unit_phase` means `e^{2 pi i theta}` and
//! exists only in float mode. The environment variable `JL_PRECISION_BITS`
//! overrides `precision_bits`.

use serde::{Deserialize, Serialize};

use jorlin_core::newton::GermMap;
use jorlin_core::num::Coeff;
use jorlin_core::series::{MultiIndex, VectorSeries};
use jorlin_core::spectrum::{JordanBlock, Spectrum};

use crate::CliError;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct ComplexJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_phase: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct TermJson {
    pub component: usize,
    pub alpha: Vec<u16>,
    pub coeff: ComplexJson,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct MapFile {
    pub n: usize,
    #[serde(default = "default_precision")]
    pub precision_bits: u32,
    pub mode: Mode,
    pub lambda: Vec<ComplexJson>,
    #[serde(default)]
    pub blocks: Vec<(usize, usize)>,
    pub epsilon: String,
    #[serde(default)]
    pub f: Vec<TermJson>,
    pub truncation: u32,
}

fn default_precision() -> u32 {
    jorlin_core::num::DEFAULT_PREC
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Float,
    Rational,
}

impl MapFile {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let mf: MapFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        mf.validate()?;
        Ok(mf)
    }

    pub fn effective_precision(&self) -> u32 {
        std::env::var("JL_PRECISION_BITS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(self.precision_bits)
            .clamp(24, 8192)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 || self.n > 16 {
            return Err(CliError::Parse("n must be in 1..=16".into()));
        }
        if self.lambda.len() != self.n {
            return Err(CliError::Parse(format!(
                "lambda lists {} eigenvalues for n = {}",
                self.lambda.len(),
                self.n
            )));
        }
        if self.truncation < 2 || self.truncation > 128 {
            return Err(CliError::Parse("truncation must be in 2..=128".into()));
        }
        for (s, z) in &self.blocks {
            if *s == 0 || *z == 0 || s + z - 1 > self.n {
                return Err(CliError::Parse(format!(
                    "block ({s}, {z}) out of range (1-based starts)"
                )));
            }
        }
        for t in &self.f {
            if t.component == 0 || t.component > self.n {
                return Err(CliError::Parse(format!(
                    "term component {} out of range (1-based)",
                    t.component
                )));
            }
            if t.alpha.len() != self.n {
                return Err(CliError::Parse(
                    "term exponent vector length differs from n".into(),
                ));
            }
        }
        Ok(())
    }

    fn coeff<C: Coeff>(&self, c: &ComplexJson, prec: u32) -> Result<C, CliError> {
        match (&c.unit_phase, &c.re, &c.im) {
            (Some(theta), None, None) => {
                C::unit_phase(theta, prec).map_err(CliError::from)
            }
            (None, re, im) => {
                let re = re.as_deref().unwrap_or("0");
                let im = im.as_deref().unwrap_or("0");
                C::from_str_parts(re, im, prec).map_err(CliError::from)
            }
            _ => Err(CliError::Parse(
                "a complex entry is either {re, im} or {unit_phase}".into(),
            )),
        }
    }

    pub fn spectrum<C: Coeff>(&self) -> Result<Spectrum<C>, CliError> {
        let prec = self.effective_precision();
        let lambda = self
            .lambda
            .iter()
            .map(|c| self.coeff::<C>(c, prec))
            .collect::<Result<Vec<_>, _>>()?;
        let blocks = self
            .blocks
            .iter()
            .map(|&(s, z)| JordanBlock { start: s - 1, size: z })
            .collect();
        let eps = C::from_str_parts(&self.epsilon, "0", prec)?;
        Spectrum::new(lambda, blocks, eps).map_err(CliError::from)
    }

    pub fn germ<C: Coeff>(&self, truncation: u32) -> Result<GermMap<C>, CliError> {
        let prec = self.effective_precision();
        let spec = self.spectrum::<C>()?;
        let mut f = VectorSeries::new(self.n, truncation);
        for t in &self.f {
            let c: C = self.coeff(&t.coeff, prec)?;
            f.component_mut(t.component - 1)
                .insert_add(MultiIndex::new(&t.alpha), c);
        }
        GermMap::new(spec, f).map_err(CliError::from)
    }
}

/// Serialized transformation in the map-file coefficient format.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct PhiFile {
    pub n: usize,
    pub precision_bits: u32,
    pub mode: Mode,
    pub truncation: u32,
    pub phi: Vec<TermJson>,
}

impl PhiFile {
    pub fn from_series<C: Coeff>(
        phi: &VectorSeries<C>,
        mode: Mode,
        precision_bits: u32,
    ) -> Self {
        let mut terms = Vec::new();
        for i in 0..phi.nvars() {
            for (idx, c) in phi.component(i).iter() {
                let (re, im) = c.to_string_parts();
                terms.push(TermJson {
                    component: i + 1,
                    alpha: idx.exps().to_vec(),
                    coeff: ComplexJson {
                        re: Some(re),
                        im: Some(im),
                        unit_phase: None,
                    },
                });
            }
        }
        PhiFile {
            n: phi.nvars(),
            precision_bits,
            mode,
            truncation: phi.trunc(),
            phi: terms,
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_series<C: Coeff>(&self) -> Result<VectorSeries<C>, CliError> {
        let prec = self.precision_bits;
        let mut phi = VectorSeries::new(self.n, self.truncation);
        for t in &self.phi {
            if t.component == 0 || t.component > self.n || t.alpha.len() != self.n {
                return Err(CliError::Parse("bad phi term".into()));
            }
            let re = t.coeff.re.as_deref().unwrap_or("0");
            let im = t.coeff.im.as_deref().unwrap_or("0");
            let c = C::from_str_parts(re, im, prec)?;
            phi.component_mut(t.component - 1)
                .insert_add(MultiIndex::new(&t.alpha), c);
        }
        Ok(phi)
    }
}
