//! Exponents and constants derived from the dimension `n` and growth exponent `p`.

use crate::{lit, Error, Real, Result};

/// Dimension, growth exponent and the derived constants used everywhere else.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemParams<T> {
    pub n: usize,
    pub p: T,
    /// Conjugate exponent `p/(p-1)`.
    pub p_conj: T,
    /// Normalisation exponent `max(p-1, 1)`.
    pub q: T,
    /// Threshold `p#`: `(p-1)^{2-p}` for `p >= 2`, `1` for `p <= 2`.
    pub p_sharp: T,
    /// Hardy constant `((n-p)/p)^p`, present only when `p < n`.
    pub c0: Option<T>,
}

impl<T: Real> ProblemParams<T> {
    pub fn new(n: usize, p: T) -> Result<Self> {
        if n < 2 {
            return Err(Error::pre(format!("dimension must be >= 2, got {n}")));
        }
        if !(p > T::one()) || !p.is_finite() {
            return Err(Error::pre(format!("exponent must satisfy p > 1, got {p}")));
        }
        Ok(Self {
            n,
            p,
            p_conj: conjugate(p),
            q: normalization_exponent(p),
            p_sharp: p_sharp(p),
            c0: hardy_constant(n, p),
        })
    }

    pub fn dim(&self) -> T {
        lit(self.n as f64)
    }

    /// `q·p`, the exponent of the normalisation `∫_B u^{qp} = 1`.
    pub fn qp(&self) -> T {
        self.q * self.p
    }

    pub fn subcritical(&self) -> bool {
        self.p < self.dim()
    }
}

pub fn conjugate<T: Real>(p: T) -> T {
    p / (p - T::one())
}

pub fn normalization_exponent<T: Real>(p: T) -> T {
    (p - T::one()).max(T::one())
}

pub fn p_sharp<T: Real>(p: T) -> T {
    let two = lit::<T>(2.0);
    if p >= two {
        (p - T::one()).powf(two - p)
    } else {
        T::one()
    }
}

/// `((n-p)/p)^p` for `p < n`; `None` otherwise.
pub fn hardy_constant<T: Real>(n: usize, p: T) -> Option<T> {
    let n = lit::<T>(n as f64);
    (p < n).then(|| ((n - p) / p).powf(p))
}

/// Exact rational versions of the closed-form constants.
///
/// Only integer-valued exponents produce rational powers; other inputs return `None`.
pub mod exact {
    use num_rational::Ratio;
    use num_traits::{One, Signed, ToPrimitive, Zero};

    pub type Rational = Ratio<i128>;

    fn integer(x: &Rational) -> Option<i32> {
        x.is_integer().then(|| x.to_integer().to_i32()).flatten()
    }

    pub fn pow(base: Rational, exponent: i32) -> Rational {
        if exponent >= 0 {
            num_traits::pow(base, exponent as usize)
        } else {
            num_traits::pow(base.recip(), (-exponent) as usize)
        }
    }

    /// `p#` for rational `p`; exact when `p <= 2` or `p` is an integer.
    pub fn p_sharp(p: Rational) -> Option<Rational> {
        let two = Rational::from_integer(2);
        if p <= Rational::one() {
            return None;
        }
        if p <= two {
            return Some(Rational::one());
        }
        let e = integer(&p)?;
        Some(pow(p - Rational::one(), 2 - e))
    }

    /// `λ(s) = (s-p+1)(p/s)^p` for `s > p` and integer `p`.
    pub fn lambda_s(s: Rational, p: Rational) -> Option<Rational> {
        if s <= p || p <= Rational::one() || s.is_zero() {
            return None;
        }
        let e = integer(&p)?;
        Some((s - p + Rational::one()) * pow(p / s, e))
    }

    /// `((n-p)/p)^p` for integer `p < n`.
    pub fn hardy_constant(n: i128, p: Rational) -> Option<Rational> {
        let n = Rational::from_integer(n);
        if p >= n || !p.is_positive() {
            return None;
        }
        let e = integer(&p)?;
        Some(pow((n - p) / p, e))
    }
}
