//! Exact amplitudes in the ring `Z[i, sqrt(2)][1/2]`.
//!
//! Every device in the toolbox multiplies amplitudes by `1`, `i`, `-1` or
//! `1/sqrt(2)`, so the value
//!
//! ```text
//! (re + re_sqrt2 * sqrt(2) + (im + im_sqrt2 * sqrt(2)) * i) / 2^exp
//! ```
//!
//! is closed under everything the simulator does. Destructive interference
//! therefore produces exact zeros rather than floating-point residue.

use std::cmp::Ordering;
use std::fmt;

use num_complex::Complex64;

/// Integer component overflowed the 128-bit budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("amplitude arithmetic overflowed the exact 128-bit budget")]
pub struct Overflow;

/// Exact amplitude, always kept in canonical form: the four integer
/// components are not all even unless `exp == 0`, and zero is `0 / 2^0`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Amplitude {
    re: i128,
    re_sqrt2: i128,
    im: i128,
    im_sqrt2: i128,
    exp: u32,
}

/// Element of `Z[sqrt(2)]` as `(rational, sqrt2)` coefficients.
type Quad = (i128, i128);

fn quad_add(x: Quad, y: Quad) -> Result<Quad, Overflow> {
    Ok((
        x.0.checked_add(y.0).ok_or(Overflow)?,
        x.1.checked_add(y.1).ok_or(Overflow)?,
    ))
}

fn quad_sub(x: Quad, y: Quad) -> Result<Quad, Overflow> {
    Ok((
        x.0.checked_sub(y.0).ok_or(Overflow)?,
        x.1.checked_sub(y.1).ok_or(Overflow)?,
    ))
}

// (a + b r)(c + d r) = (ac + 2bd) + (ad + bc) r, with r = sqrt(2)
fn quad_mul(x: Quad, y: Quad) -> Result<Quad, Overflow> {
    let ac = x.0.checked_mul(y.0).ok_or(Overflow)?;
    let bd2 = x
        .1
        .checked_mul(y.1)
        .and_then(|v| v.checked_mul(2))
        .ok_or(Overflow)?;
    let ad = x.0.checked_mul(y.1).ok_or(Overflow)?;
    let bc = x.1.checked_mul(y.0).ok_or(Overflow)?;
    Ok((
        ac.checked_add(bd2).ok_or(Overflow)?,
        ad.checked_add(bc).ok_or(Overflow)?,
    ))
}

fn shl_checked(v: i128, by: u32) -> Result<i128, Overflow> {
    if v == 0 {
        return Ok(0);
    }
    if by >= 127 {
        return Err(Overflow);
    }
    let shifted = v.checked_mul(1i128 << by).ok_or(Overflow)?;
    Ok(shifted)
}

impl Amplitude {
    pub const ZERO: Amplitude = Amplitude {
        re: 0,
        re_sqrt2: 0,
        im: 0,
        im_sqrt2: 0,
        exp: 0,
    };
    pub const ONE: Amplitude = Amplitude {
        re: 1,
        re_sqrt2: 0,
        im: 0,
        im_sqrt2: 0,
        exp: 0,
    };
    pub const I: Amplitude = Amplitude {
        re: 0,
        re_sqrt2: 0,
        im: 1,
        im_sqrt2: 0,
        exp: 0,
    };

    /// Builds `(re + re_sqrt2*sqrt2 + (im + im_sqrt2*sqrt2) i) / 2^exp`.
    pub fn new(re: i128, re_sqrt2: i128, im: i128, im_sqrt2: i128, exp: u32) -> Self {
        Amplitude {
            re,
            re_sqrt2,
            im,
            im_sqrt2,
            exp,
        }
        .canonical()
    }

    pub fn from_int(v: i128) -> Self {
        Self::new(v, 0, 0, 0, 0)
    }

    /// `1/sqrt(2)`, stored as `sqrt(2)/2`.
    pub fn inv_sqrt2() -> Self {
        Self::new(0, 1, 0, 0, 1)
    }

    /// Components `(re, re_sqrt2, im, im_sqrt2, exp)` of the canonical form.
    pub fn components(&self) -> (i128, i128, i128, i128, u32) {
        (self.re, self.re_sqrt2, self.im, self.im_sqrt2, self.exp)
    }

    pub fn is_zero(&self) -> bool {
        self.re == 0 && self.re_sqrt2 == 0 && self.im == 0 && self.im_sqrt2 == 0
    }

    fn canonical(mut self) -> Self {
        if self.is_zero() {
            return Self::ZERO;
        }
        while self.exp > 0
            && self.re % 2 == 0
            && self.re_sqrt2 % 2 == 0
            && self.im % 2 == 0
            && self.im_sqrt2 % 2 == 0
        {
            self.re /= 2;
            self.re_sqrt2 /= 2;
            self.im /= 2;
            self.im_sqrt2 /= 2;
            self.exp -= 1;
        }
        self
    }

    fn rescaled(&self, exp: u32) -> Result<(Quad, Quad), Overflow> {
        debug_assert!(exp >= self.exp);
        let by = exp - self.exp;
        Ok((
            (shl_checked(self.re, by)?, shl_checked(self.re_sqrt2, by)?),
            (shl_checked(self.im, by)?, shl_checked(self.im_sqrt2, by)?),
        ))
    }

    pub fn checked_add(&self, other: &Amplitude) -> Result<Amplitude, Overflow> {
        if self.is_zero() {
            return Ok(*other);
        }
        if other.is_zero() {
            return Ok(*self);
        }
        let exp = self.exp.max(other.exp);
        let (xr, xi) = self.rescaled(exp)?;
        let (yr, yi) = other.rescaled(exp)?;
        let re = quad_add(xr, yr)?;
        let im = quad_add(xi, yi)?;
        Ok(Amplitude::new(re.0, re.1, im.0, im.1, exp))
    }

    pub fn checked_mul(&self, other: &Amplitude) -> Result<Amplitude, Overflow> {
        if self.is_zero() || other.is_zero() {
            return Ok(Self::ZERO);
        }
        let xr = (self.re, self.re_sqrt2);
        let xi = (self.im, self.im_sqrt2);
        let yr = (other.re, other.re_sqrt2);
        let yi = (other.im, other.im_sqrt2);
        let re = quad_sub(quad_mul(xr, yr)?, quad_mul(xi, yi)?)?;
        let im = quad_add(quad_mul(xr, yi)?, quad_mul(xi, yr)?)?;
        let exp = self.exp.checked_add(other.exp).ok_or(Overflow)?;
        Ok(Amplitude::new(re.0, re.1, im.0, im.1, exp))
    }

    pub fn neg(&self) -> Amplitude {
        Amplitude {
            re: -self.re,
            re_sqrt2: -self.re_sqrt2,
            im: -self.im,
            im_sqrt2: -self.im_sqrt2,
            exp: self.exp,
        }
    }

    /// Multiplication by `i`: `(x + y i) i = -y + x i`.
    pub fn mul_i(&self) -> Amplitude {
        Amplitude {
            re: -self.im,
            re_sqrt2: -self.im_sqrt2,
            im: self.re,
            im_sqrt2: self.re_sqrt2,
            exp: self.exp,
        }
    }

    /// Multiplication by `1/sqrt(2) = sqrt(2)/2`:
    /// `(a + b sqrt2) sqrt2 / 2 = (2b + a sqrt2) / 2`.
    pub fn mul_inv_sqrt2(&self) -> Result<Amplitude, Overflow> {
        if self.is_zero() {
            return Ok(Self::ZERO);
        }
        Ok(Amplitude::new(
            self.re_sqrt2.checked_mul(2).ok_or(Overflow)?,
            self.re,
            self.im_sqrt2.checked_mul(2).ok_or(Overflow)?,
            self.im,
            self.exp.checked_add(1).ok_or(Overflow)?,
        ))
    }

    pub fn conj(&self) -> Amplitude {
        Amplitude {
            im: -self.im,
            im_sqrt2: -self.im_sqrt2,
            ..*self
        }
    }

    pub fn to_complex(&self) -> Complex64 {
        let scale = 0.5f64.powi(self.exp as i32);
        let s2 = std::f64::consts::SQRT_2;
        Complex64::new(
            (self.re as f64 + self.re_sqrt2 as f64 * s2) * scale,
            (self.im as f64 + self.im_sqrt2 as f64 * s2) * scale,
        )
    }

    /// `|z|^2` in floating point.
    pub fn norm_sqr(&self) -> f64 {
        self.to_complex().norm_sqr()
    }
}

impl Default for Amplitude {
    fn default() -> Self {
        Self::ZERO
    }
}

impl PartialOrd for Amplitude {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Structural order, only used to make containers deterministic.
impl Ord for Amplitude {
    fn cmp(&self, other: &Self) -> Ordering {
        self.components().cmp(&other.components())
    }
}

impl fmt::Debug for Amplitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Amplitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let part = |a: i128, b: i128| -> String {
            match (a, b) {
                (0, 0) => "0".to_string(),
                (a, 0) => a.to_string(),
                (0, b) => format!("{b}√2"),
                (a, b) if b < 0 => format!("{a}-{}√2", -b),
                (a, b) => format!("{a}+{b}√2"),
            }
        };
        let re = part(self.re, self.re_sqrt2);
        let im = part(self.im, self.im_sqrt2);
        let num = match (self.re == 0 && self.re_sqrt2 == 0, self.im == 0 && self.im_sqrt2 == 0) {
            (true, true) => "0".to_string(),
            (false, true) => re,
            (true, false) => format!("({im})i"),
            (false, false) => format!("({re})+({im})i"),
        };
        if self.exp == 0 {
            write!(f, "{num}")
        } else {
            write!(f, "{num}/2^{}", self.exp)
        }
    }
}
