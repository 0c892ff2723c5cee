//! Exact rational probabilities.
//!
//! Every probability that enters a term or a graph is an exact
//! `BigRational`. Floating point appears only on the quantum side.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};

pub type Rational = BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn zero() -> Rational {
    BigRational::zero()
}

pub fn one() -> Rational {
    BigRational::one()
}

/// A probability annotation on `[+p/q]` must lie strictly between 0 and 1.
pub fn is_proper(p: &Rational) -> bool {
    p.is_positive() && p < &one()
}

/// Render as `p/q` (or a bare integer when the denominator is 1).
pub fn fmt_rational(p: &Rational) -> String {
    if p.denom() == &BigInt::one() {
        format!("{}", p.numer())
    } else {
        format!("{}/{}", p.numer(), p.denom())
    }
}

/// Best-effort conversion for diagnostics and tolerance comparisons.
pub fn to_f64(p: &Rational) -> f64 {
    let num = p.numer();
    let den = p.denom();
    // Falls back to a digit-string parse for values outside i128 range.
    match (i128::try_from(num.clone()), i128::try_from(den.clone())) {
        (Ok(n), Ok(d)) => n as f64 / d as f64,
        _ => {
            let n: f64 = num.to_string().parse().unwrap_or(f64::NAN);
            let d: f64 = den.to_string().parse().unwrap_or(f64::NAN);
            n / d
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proper_range_is_open() {
        assert!(!is_proper(&zero()));
        assert!(!is_proper(&one()));
        assert!(!is_proper(&rat(3, 2)));
        assert!(is_proper(&rat(1, 2)));
    }

    #[test]
    fn rationals_are_canonical() {
        let p = rat(2, 4);
        assert_eq!(fmt_rational(&p), "1/2");
        assert_eq!(p, rat(1, 2));
    }
}
