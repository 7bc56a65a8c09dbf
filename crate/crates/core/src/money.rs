use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Seconds on the engine's logical clock. The engine never reads wall time.
pub type Timestamp = u64;

/// An amount in integer minor units (cents).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Money(pub i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_minor(units: i64) -> Self {
        Money(units)
    }

    pub const fn minor(self) -> i64 {
        self.0
    }

    /// Converts a real-valued amount in major units, rounding half-up
    /// (ties go towards +infinity).
    pub fn from_major_f64(amount: f64) -> Self {
        Money((amount * 100.0 + 0.5).floor() as i64)
    }

    /// Rounds a real-valued amount already expressed in minor units, half-up.
    pub fn round_minor(units: f64) -> Self {
        Money((units + 0.5).floor() as i64)
    }

    pub fn as_major_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn min(self, other: Money) -> Money {
        Money(self.0.min(other.0))
    }

    pub fn max(self, other: Money) -> Money {
        Money(self.0.max(other.0))
    }

    pub fn saturating_sub(self, other: Money) -> Money {
        Money(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        self.0 += rhs.0;
    }
}

impl SubAssign for Money {
    fn sub_assign(&mut self, rhs: Money) {
        self.0 -= rhs.0;
    }
}

impl Neg for Money {
    type Output = Money;
    fn neg(self) -> Money {
        Money(-self.0)
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        Money(iter.map(|m| m.0).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(Money::round_minor(0.5), Money(1));
        assert_eq!(Money::round_minor(1.4999), Money(1));
        assert_eq!(Money::round_minor(-0.5), Money(0));
        assert_eq!(Money::from_major_f64(2.0), Money(200));
        assert_eq!(Money::from_major_f64(0.2), Money(20));
    }

    #[test]
    fn display() {
        assert_eq!(Money(200).to_string(), "2.00");
        assert_eq!(Money(-141_205).to_string(), "-1412.05");
        assert_eq!(Money(7).to_string(), "0.07");
    }
}
