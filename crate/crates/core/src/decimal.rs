//! Plain decimal literals (`-12.50`, `.5`, `7.`), parsed without going through
//! floating point so that canonical rendering and tolerance checks are exact.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

/// A decimal literal split into sign and digit runs. No exponent form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decimal {
    negative: bool,
    int_digits: String,
    frac_digits: String,
}

impl Decimal {
    /// Parses `[+-]? digits [. digits]` where at least one digit is present.
    pub fn parse(text: &str) -> Option<Self> {
        let (negative, body) = match text.as_bytes().first()? {
            b'+' => (false, &text[1..]),
            b'-' => (true, &text[1..]),
            _ => (false, text),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        let all_digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !all_digits(int_part) || !all_digits(frac_part) {
            return None;
        }
        let int_digits = int_part.trim_start_matches('0').to_string();
        let frac_digits = frac_part.trim_end_matches('0').to_string();
        let is_zero = int_digits.is_empty() && frac_digits.is_empty();
        Some(Self {
            negative: negative && !is_zero,
            int_digits,
            frac_digits,
        })
    }

    /// Canonical rendering: no plus sign, no redundant zeros, `0` for zero.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        if self.negative {
            out.push('-');
        }
        if self.int_digits.is_empty() {
            out.push('0');
        } else {
            out.push_str(&self.int_digits);
        }
        if !self.frac_digits.is_empty() {
            out.push('.');
            out.push_str(&self.frac_digits);
        }
        out
    }

    pub fn to_rational(&self) -> BigRational {
        let digits = format!("{}{}", self.int_digits, self.frac_digits);
        let numer: BigInt = if digits.is_empty() {
            BigInt::zero()
        } else {
            digits.parse().expect("digit string")
        };
        let denom = num_traits::pow(BigInt::from(10u32), self.frac_digits.len());
        let value = BigRational::new(numer, denom);
        if self.negative {
            -value
        } else {
            value
        }
    }
}

/// `|a - b| <= tolerance`, evaluated exactly on the decimal expansions.
pub fn within_tolerance(a: &Decimal, b: &Decimal, tolerance: &Decimal) -> bool {
    (a.to_rational() - b.to_rational()).abs() <= tolerance.to_rational().abs()
}

/// Decimal form of a finite float via its shortest round-trip rendering.
pub fn from_f64(value: f64) -> Option<Decimal> {
    if !value.is_finite() {
        return None;
    }
    // `{}` on f64 never emits an exponent.
    Decimal::parse(&format!("{value}"))
}
