//! Coefficient arithmetic: exact Gaussian rationals and multiprecision
//! complex floats.
//!
//! Every series, operator and solver in this crate is generic over [`Coeff`].
//! Two implementations are provided:
//!
//! * [`CRat`] — complex numbers with `rug::Rational` parts. All ring and
//!   field operations are exact; equality is decidable. Used for the
//!   exact-rational mode.
//! * [`CF`] — complex numbers with `rug::Float` parts at a configurable
//!   mantissa precision (bits). The precision travels inside each value, so
//!   binary operations produce results at the larger operand precision.
//!
//! Real-valued reports (norms, divisor magnitudes, fitted constants) are
//! `rug::Float` in both modes; exactness claims only ever concern
//! coefficients.

use std::cell::RefCell;
use std::fmt;

use rug::ops::{CompleteRound, Pow};
use rug::{Assign, Float, Integer, Rational};

use crate::error::{CoreError, Result};

/// Default mantissa precision (bits) when none is configured.
pub const DEFAULT_PREC: u32 = 128;

/// Field operations needed by the series engine.
///
/// `acc_mul`/`sub_mul` are the hot path of series multiplication; both must
/// round at the precision of `self`.
pub trait Coeff: Clone + PartialEq + fmt::Debug + Send + Sync + 'static {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_i64(x: i64) -> Self;
    fn is_zero(&self) -> bool;

    fn neg(&self) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    /// Multiplicative inverse; `None` for zero.
    fn inv(&self) -> Option<Self>;

    fn add_assign_c(&mut self, o: &Self);
    fn sub_assign_c(&mut self, o: &Self);
    /// `self += a * b`.
    fn acc_mul(&mut self, a: &Self, b: &Self);
    /// `self -= a * b`.
    fn sub_mul(&mut self, a: &Self, b: &Self);

    /// Exact scaling by a machine integer (binomial coefficients etc.).
    fn mul_i64(&self, k: i64) -> Self;
    fn pow_u(&self, k: u32) -> Self;

    /// True when arithmetic is exact (rational mode).
    fn exact() -> bool;

    /// Working precision of this value in bits (a fixed default for the
    /// exact mode, where it only drives norm evaluation).
    fn prec_of(&self) -> u32;

    /// |self|^2 as a float at precision `prec`.
    fn abs_sq_float(&self, prec: u32) -> Float;
    /// |self| as a float at precision `prec`.
    fn abs_float(&self, prec: u32) -> Float {
        self.abs_sq_float(prec).sqrt()
    }
    /// |self|^2 as an exact rational, when representable.
    fn abs_sq_exact(&self) -> Option<Rational>;

    /// Drop test used by the per-degree prune: is this coefficient
    /// negligible against the given squared magnitude of the largest
    /// coefficient of the same degree? Exact mode only drops true zeros.
    fn negligible_vs(&self, max_abs_sq: &Float) -> bool;

    /// Real and imaginary parts as floats at precision `prec`.
    fn re_float(&self, prec: u32) -> Float;
    fn im_float(&self, prec: u32) -> Float;

    /// Construct from exact rational parts, rounding at `prec` if inexact.
    fn from_rational_parts(re: Rational, im: Rational, prec: u32) -> Self;
    /// Parse decimal/rational strings for both parts.
    fn from_str_parts(re: &str, im: &str, prec: u32) -> Result<Self>;
    /// e^{2 pi i theta} for a decimal `theta`; unavailable in exact mode.
    fn unit_phase(theta: &str, prec: u32) -> Result<Self>;
    /// Canonical string serialization of both parts ("p/q" or decimal
    /// mantissa-exponent, enough digits to round-trip).
    fn to_string_parts(&self) -> (String, String);

    /// Is this value a non-negative real?
    fn is_real_nonneg(&self) -> bool;
}

// ---------------------------------------------------------------------------
// Gaussian rationals

/// Complex number with exact rational parts.
#[derive(Clone, PartialEq, Eq)]
pub struct CRat {
    pub re: Rational,
    pub im: Rational,
}

impl fmt::Debug for CRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} + {}i)", self.re, self.im)
    }
}

impl CRat {
    pub fn new(re: Rational, im: Rational) -> Self {
        CRat { re, im }
    }

    pub fn from_ints(re: i64, im: i64) -> Self {
        CRat {
            re: Rational::from(re),
            im: Rational::from(im),
        }
    }

    pub fn from_ratio(num: i64, den: i64) -> Self {
        CRat {
            re: Rational::from((num, den)),
            im: Rational::new(),
        }
    }
}

/// Parse a decimal or "p/q" string into an exact rational.
///
/// Accepts `[+-]digits[.digits][e[+-]digits]` and `[+-]p/q`.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    if s.is_empty() {
        return Err(CoreError::Parse("empty number".into()));
    }
    if s.contains('/') {
        return Rational::parse(s)
            .map(|i| Rational::from(i))
            .map_err(|e| CoreError::Parse(format!("bad rational '{s}': {e}")));
    }
    let (mant, exp10) = match s.find(['e', 'E']) {
        Some(pos) => {
            let e: i64 = s[pos + 1..]
                .parse()
                .map_err(|_| CoreError::Parse(format!("bad exponent in '{s}'")))?;
            (&s[..pos], e)
        }
        None => (s, 0),
    };
    let (sign, digits) = match mant.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int_part, frac_part) = match digits.find('.') {
        Some(pos) => (&digits[..pos], &digits[pos + 1..]),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(CoreError::Parse(format!("no digits in '{s}'")));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(CoreError::Parse(format!("bad digits in '{s}'")));
    }
    let joined = format!("{int_part}{frac_part}");
    let num = Integer::parse(&joined)
        .map(Integer::from)
        .map_err(|e| CoreError::Parse(format!("bad mantissa in '{s}': {e}")))?;
    let shift = exp10 - frac_part.len() as i64;
    let mut q = Rational::from(num * sign);
    if shift > 0 {
        q *= Rational::from(Integer::from(10).pow(shift as u32));
    } else if shift < 0 {
        q /= Rational::from(Integer::from(10).pow((-shift) as u32));
    }
    Ok(q)
}

impl Coeff for CRat {
    fn zero() -> Self {
        CRat::from_ints(0, 0)
    }
    fn one() -> Self {
        CRat::from_ints(1, 0)
    }
    fn from_i64(x: i64) -> Self {
        CRat::from_ints(x, 0)
    }
    fn is_zero(&self) -> bool {
        self.re.cmp0() == std::cmp::Ordering::Equal && self.im.cmp0() == std::cmp::Ordering::Equal
    }

    fn neg(&self) -> Self {
        CRat {
            re: Rational::from(-&self.re),
            im: Rational::from(-&self.im),
        }
    }
    fn add(&self, o: &Self) -> Self {
        CRat {
            re: Rational::from(&self.re + &o.re),
            im: Rational::from(&self.im + &o.im),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        CRat {
            re: Rational::from(&self.re - &o.re),
            im: Rational::from(&self.im - &o.im),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let re = Rational::from(&self.re * &o.re) - Rational::from(&self.im * &o.im);
        let im = Rational::from(&self.re * &o.im) + Rational::from(&self.im * &o.re);
        CRat { re, im }
    }
    fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let d = Rational::from(&self.re * &self.re) + Rational::from(&self.im * &self.im);
        Some(CRat {
            re: Rational::from(&self.re / &d),
            im: -Rational::from(&self.im / &d),
        })
    }

    fn add_assign_c(&mut self, o: &Self) {
        self.re += &o.re;
        self.im += &o.im;
    }
    fn sub_assign_c(&mut self, o: &Self) {
        self.re -= &o.re;
        self.im -= &o.im;
    }
    fn acc_mul(&mut self, a: &Self, b: &Self) {
        self.re += Rational::from(&a.re * &b.re);
        self.re -= Rational::from(&a.im * &b.im);
        self.im += Rational::from(&a.re * &b.im);
        self.im += Rational::from(&a.im * &b.re);
    }
    fn sub_mul(&mut self, a: &Self, b: &Self) {
        self.re -= Rational::from(&a.re * &b.re);
        self.re += Rational::from(&a.im * &b.im);
        self.im -= Rational::from(&a.re * &b.im);
        self.im -= Rational::from(&a.im * &b.re);
    }

    fn mul_i64(&self, k: i64) -> Self {
        CRat {
            re: Rational::from(&self.re * k),
            im: Rational::from(&self.im * k),
        }
    }
    fn pow_u(&self, k: u32) -> Self {
        let mut acc = CRat::one();
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    fn exact() -> bool {
        true
    }
    fn prec_of(&self) -> u32 {
        DEFAULT_PREC
    }

    fn abs_sq_float(&self, prec: u32) -> Float {
        let sq = Rational::from(&self.re * &self.re) + Rational::from(&self.im * &self.im);
        Float::with_val(prec, sq)
    }
    fn abs_sq_exact(&self) -> Option<Rational> {
        Some(Rational::from(&self.re * &self.re) + Rational::from(&self.im * &self.im))
    }

    fn negligible_vs(&self, _max_abs_sq: &Float) -> bool {
        self.is_zero()
    }

    fn re_float(&self, prec: u32) -> Float {
        Float::with_val(prec, &self.re)
    }
    fn im_float(&self, prec: u32) -> Float {
        Float::with_val(prec, &self.im)
    }

    fn from_rational_parts(re: Rational, im: Rational, _prec: u32) -> Self {
        CRat { re, im }
    }
    fn from_str_parts(re: &str, im: &str, _prec: u32) -> Result<Self> {
        Ok(CRat {
            re: parse_rational(re)?,
            im: parse_rational(im)?,
        })
    }
    fn unit_phase(_theta: &str, _prec: u32) -> Result<Self> {
        Err(CoreError::Config(
            "unit_phase eigenvalues are not representable in rational mode".into(),
        ))
    }
    fn to_string_parts(&self) -> (String, String) {
        (self.re.to_string(), self.im.to_string())
    }

    fn is_real_nonneg(&self) -> bool {
        self.im.cmp0() == std::cmp::Ordering::Equal && self.re.cmp0() != std::cmp::Ordering::Less
    }
}

// ---------------------------------------------------------------------------
// Multiprecision complex floats

thread_local! {
    static SCRATCH: RefCell<Float> = RefCell::new(Float::new(64));
}

/// Complex number with `rug::Float` parts.
#[derive(Clone)]
pub struct CF {
    pub re: Float,
    pub im: Float,
}

impl PartialEq for CF {
    fn eq(&self, o: &Self) -> bool {
        self.re == o.re && self.im == o.im
    }
}

impl fmt::Debug for CF {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:e} + {:e}i)", self.re.to_f64(), self.im.to_f64())
    }
}

impl CF {
    pub fn new(re: Float, im: Float) -> Self {
        CF { re, im }
    }

    pub fn with_prec(prec: u32, re: f64, im: f64) -> Self {
        CF {
            re: Float::with_val(prec, re),
            im: Float::with_val(prec, im),
        }
    }

    /// Grow the stored precision (exact) so in-place rounding happens at
    /// the working precision of the computation, not at a constant's.
    fn raise_prec(&mut self, p: u32) {
        if self.re.prec() < p {
            self.re.set_prec(p);
        }
        if self.im.prec() < p {
            self.im.set_prec(p);
        }
    }
}

impl Coeff for CF {
    fn zero() -> Self {
        CF::with_prec(DEFAULT_PREC, 0.0, 0.0)
    }
    fn one() -> Self {
        CF::with_prec(DEFAULT_PREC, 1.0, 0.0)
    }
    fn from_i64(x: i64) -> Self {
        CF {
            re: Float::with_val(DEFAULT_PREC, x),
            im: Float::new(DEFAULT_PREC),
        }
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    fn neg(&self) -> Self {
        CF {
            re: (-&self.re).complete(self.re.prec()),
            im: (-&self.im).complete(self.im.prec()),
        }
    }
    fn add(&self, o: &Self) -> Self {
        let p = self.prec_of().max(o.prec_of());
        CF {
            re: (&self.re + &o.re).complete(p),
            im: (&self.im + &o.im).complete(p),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        let p = self.prec_of().max(o.prec_of());
        CF {
            re: (&self.re - &o.re).complete(p),
            im: (&self.im - &o.im).complete(p),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        let p = self.prec_of().max(o.prec_of());
        let mut out = CF {
            re: Float::new(p),
            im: Float::new(p),
        };
        out.acc_mul(self, o);
        out
    }
    fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let p = self.prec_of();
        let d = self.abs_sq_float(p);
        Some(CF {
            re: (&self.re / &d).complete(p),
            im: -(&self.im / &d).complete(p),
        })
    }

    fn add_assign_c(&mut self, o: &Self) {
        // in-place ops round at self's precision; raising it first is exact
        self.raise_prec(o.prec_of());
        self.re += &o.re;
        self.im += &o.im;
    }
    fn sub_assign_c(&mut self, o: &Self) {
        self.raise_prec(o.prec_of());
        self.re -= &o.re;
        self.im -= &o.im;
    }
    fn acc_mul(&mut self, a: &Self, b: &Self) {
        let p = a.prec_of().max(b.prec_of());
        self.raise_prec(p);
        let p = self.re.prec();
        SCRATCH.with(|s| {
            let mut s = s.borrow_mut();
            if s.prec() != p {
                s.set_prec(p);
            }
            s.assign(&a.re * &b.re);
            self.re += &*s;
            s.assign(&a.im * &b.im);
            self.re -= &*s;
            s.assign(&a.re * &b.im);
            self.im += &*s;
            s.assign(&a.im * &b.re);
            self.im += &*s;
        });
    }
    fn sub_mul(&mut self, a: &Self, b: &Self) {
        let p = a.prec_of().max(b.prec_of());
        self.raise_prec(p);
        let p = self.re.prec();
        SCRATCH.with(|s| {
            let mut s = s.borrow_mut();
            if s.prec() != p {
                s.set_prec(p);
            }
            s.assign(&a.re * &b.re);
            self.re -= &*s;
            s.assign(&a.im * &b.im);
            self.re += &*s;
            s.assign(&a.re * &b.im);
            self.im -= &*s;
            s.assign(&a.im * &b.re);
            self.im -= &*s;
        });
    }

    fn mul_i64(&self, k: i64) -> Self {
        let p = self.prec_of();
        CF {
            re: (&self.re * k).complete(p),
            im: (&self.im * k).complete(p),
        }
    }
    fn pow_u(&self, k: u32) -> Self {
        let mut acc = CF {
            re: Float::with_val(self.prec_of(), 1),
            im: Float::new(self.prec_of()),
        };
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            e >>= 1;
        }
        acc
    }

    fn exact() -> bool {
        false
    }
    fn prec_of(&self) -> u32 {
        self.re.prec().max(self.im.prec())
    }

    fn abs_sq_float(&self, prec: u32) -> Float {
        let mut out = Float::new(prec);
        SCRATCH.with(|s| {
            let mut s = s.borrow_mut();
            if s.prec() != prec {
                s.set_prec(prec);
            }
            s.assign(&self.re * &self.re);
            out += &*s;
            s.assign(&self.im * &self.im);
            out += &*s;
        });
        out
    }
    fn abs_sq_exact(&self) -> Option<Rational> {
        None
    }

    fn negligible_vs(&self, max_abs_sq: &Float) -> bool {
        if self.is_zero() {
            return true;
        }
        let p = self.prec_of();
        // |c|^2 < max^2 * 2^(-2(P-8))
        let thr = max_abs_sq.clone() >> (2 * (p.saturating_sub(8)));
        self.abs_sq_float(p) < thr
    }

    fn re_float(&self, prec: u32) -> Float {
        Float::with_val(prec, &self.re)
    }
    fn im_float(&self, prec: u32) -> Float {
        Float::with_val(prec, &self.im)
    }

    fn from_rational_parts(re: Rational, im: Rational, prec: u32) -> Self {
        CF {
            re: Float::with_val(prec, re),
            im: Float::with_val(prec, im),
        }
    }
    fn from_str_parts(re: &str, im: &str, prec: u32) -> Result<Self> {
        // Route through exact rationals so "0.1" means 1/10, not the f64.
        let qre = parse_rational(re)?;
        let qim = parse_rational(im)?;
        Ok(CF {
            re: Float::with_val(prec, qre),
            im: Float::with_val(prec, qim),
        })
    }
    fn unit_phase(theta: &str, prec: u32) -> Result<Self> {
        let q = parse_rational(theta)?;
        // Work a few guard bits above target to absorb the 2*pi*theta rounding.
        let wp = prec + 32;
        let two_pi = Float::with_val(wp, rug::float::Constant::Pi) * 2u32;
        let angle = two_pi * Float::with_val(wp, q);
        let (s, c) = angle.sin_cos(Float::new(wp));
        Ok(CF {
            re: Float::with_val(prec, c),
            im: Float::with_val(prec, s),
        })
    }
    fn to_string_parts(&self) -> (String, String) {
        (float_to_string(&self.re), float_to_string(&self.im))
    }

    fn is_real_nonneg(&self) -> bool {
        self.im.is_zero() && !self.re.is_sign_negative()
    }
}

/// Canonical decimal serialization with enough digits to reparse exactly
/// at the same precision.
pub fn float_to_string(f: &Float) -> String {
    if f.is_zero() {
        return "0".into();
    }
    // MPFR emits round-trippable output when no digit count is requested.
    let (sign, digits, exp) = f.to_sign_string_exp(10, None);
    let exp = exp.unwrap_or(0);
    let s = if sign { "-" } else { "" };
    format!("{s}0.{digits}e{exp}")
}

/// Parse what `float_to_string` produced (also plain decimals) at `prec`.
pub fn float_from_string(s: &str, prec: u32) -> Result<Float> {
    Float::parse(s)
        .map(|i| Float::with_val(prec, i))
        .map_err(|e| CoreError::Parse(format!("bad float '{s}': {e}")))
}

/// 2^e as a float at precision `prec`.
pub fn pow2(e: i32, prec: u32) -> Float {
    Float::with_val(prec, Float::i_exp(1, e))
}
