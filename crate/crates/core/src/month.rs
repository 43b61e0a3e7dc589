//! Calendar months encoded as `YYYYMM` integers.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A calendar month stored as `YYYYMM` (e.g. `196001`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Month(u32);

impl Month {
    /// Builds a month from its `YYYYMM` code, rejecting month numbers outside 1..=12.
    pub fn from_yyyymm(code: u32) -> Option<Self> {
        let m = code % 100;
        if (1..=12).contains(&m) && code >= 100 {
            Some(Self(code))
        } else {
            None
        }
    }

    pub fn new(year: u32, month: u32) -> Option<Self> {
        Self::from_yyyymm(year * 100 + month)
    }

    pub fn yyyymm(self) -> u32 {
        self.0
    }

    pub fn year(self) -> u32 {
        self.0 / 100
    }

    pub fn month_of_year(self) -> u32 {
        self.0 % 100
    }

    /// Months elapsed since January of year 0; a total order compatible with `Ord`.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year()) * 12 + i64::from(self.month_of_year()) - 1
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(12) as u32;
        let month = ordinal.rem_euclid(12) as u32 + 1;
        Self(year * 100 + month)
    }

    /// Shifts by a signed number of months.
    pub fn offset(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Signed month distance `self - earlier`.
    pub fn months_since(self, earlier: Month) -> i64 {
        self.ordinal() - earlier.ordinal()
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
