//! Floating point with an extended exponent: `m * 2^e` with `|m|` in
//! `[1, 2)` (or zero). The birth rates decay doubly exponentially, so the
//! polynomial recurrence sweeps through magnitudes far beyond the f64
//! range; tracking the exponent separately keeps every step exact.

/// A sign-mantissa-exponent triple `m * 2^e`, `|m|` in `[1, 2)` or `m = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledF64 {
    m: f64,
    e: i128,
}

/// Splits a finite nonzero f64 into `(mantissa, exponent)` with
/// `|mantissa|` in `[1, 2)`.
fn frexp1(x: f64) -> (f64, i128) {
    debug_assert!(x.is_finite() && x != 0.0);
    let bits = x.to_bits();
    let exp_field = ((bits >> 52) & 0x7ff) as i128;
    if exp_field == 0 {
        // Subnormal: promote first.
        let (m, e) = frexp1(x * f64::powi(2.0, 64));
        return (m, e - 64);
    }
    let e = exp_field - 1023;
    let m = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1023u64 << 52));
    (m, e)
}

impl ScaledF64 {
    pub const ZERO: ScaledF64 = ScaledF64 { m: 0.0, e: 0 };

    pub fn new(x: f64) -> Self {
        assert!(x.is_finite(), "cannot scale non-finite value {x}");
        if x == 0.0 {
            Self::ZERO
        } else {
            let (m, e) = frexp1(x);
            Self { m, e }
        }
    }

    fn renorm(m: f64, e: i128) -> Self {
        if m == 0.0 {
            Self::ZERO
        } else {
            let (m2, de) = frexp1(m);
            Self { m: m2, e: e + de }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.m == 0.0
    }

    /// Sign of the represented value: -1, 0, or 1.
    pub fn signum(&self) -> i32 {
        if self.m > 0.0 {
            1
        } else if self.m < 0.0 {
            -1
        } else {
            0
        }
    }

    /// Collapses to f64, saturating to `0`/`inf` outside the exponent range.
    pub fn to_f64(&self) -> f64 {
        if self.m == 0.0 {
            return 0.0;
        }
        if self.e > 1100 {
            return f64::INFINITY * self.m.signum();
        }
        if self.e < -1140 {
            return 0.0;
        }
        // Two factors keep each power of two inside the normal range
        // (powi computes negative exponents via a reciprocal, which would
        // overflow for e < -1023).
        let half = (self.e / 2) as i32;
        let rest = (self.e - half as i128) as i32;
        self.m * f64::powi(2.0, half) * f64::powi(2.0, rest)
    }

    /// `log2 |value|`; `-inf` for zero.
    pub fn log2_abs(&self) -> f64 {
        if self.m == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.m.abs().log2() + self.e as f64
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::renorm(self.m * other.m, self.e + other.e)
    }

    pub fn div(&self, other: &Self) -> Self {
        assert!(!other.is_zero(), "scaled division by zero");
        Self::renorm(self.m / other.m, self.e - other.e)
    }

    pub fn neg(&self) -> Self {
        Self {
            m: -self.m,
            e: self.e,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return *other;
        }
        if other.is_zero() {
            return *self;
        }
        let (hi, lo) = if self.e >= other.e {
            (self, other)
        } else {
            (other, self)
        };
        let de = hi.e - lo.e;
        if de > 128 {
            return *hi;
        }
        let m = hi.m + lo.m * f64::powi(2.0, -(de as i32));
        Self::renorm(m, hi.e)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    /// `base^e` by binary exponentiation in scaled arithmetic; never
    /// overflows or underflows.
    pub fn pow(base: f64, mut e: u128) -> Self {
        let mut acc = ScaledF64::new(1.0);
        if e == 0 {
            return acc;
        }
        let mut sq = ScaledF64::new(base);
        loop {
            if e & 1 == 1 {
                acc = acc.mul(&sq);
            }
            e >>= 1;
            if e == 0 || acc.is_zero() {
                return acc;
            }
            sq = sq.mul(&sq);
        }
    }
}
