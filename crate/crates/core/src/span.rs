//! Inclusive calendar date ranges.

use chrono::{Days, NaiveDate};

/// An inclusive range of calendar days, `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DateSpan {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateSpan {
    /// Returns `None` when `end < start`.
    pub fn new(start: NaiveDate, end: NaiveDate) -> Option<Self> {
        (end >= start).then_some(Self { start, end })
    }

    /// Span of `days` days starting at `start`. `days` must be at least 1.
    pub fn from_len(start: NaiveDate, days: usize) -> Self {
        assert!(days >= 1, "a span covers at least one day");
        Self { start, end: add_days(start, days as i64 - 1) }
    }

    /// Whole calendar year.
    pub fn year(year: i32) -> Option<Self> {
        let start = NaiveDate::from_ymd_opt(year, 1, 1)?;
        let end = NaiveDate::from_ymd_opt(year, 12, 31)?;
        Some(Self { start, end })
    }

    /// Inclusive length in days.
    pub fn len_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn contains_span(&self, other: &DateSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Number of days shared by both spans.
    pub fn overlap_days(&self, other: &DateSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if hi < lo {
            0
        } else {
            (hi - lo).num_days() as usize + 1
        }
    }

    pub fn intersects(&self, other: &DateSpan) -> bool {
        self.overlap_days(other) > 0
    }

    pub fn intersection(&self, other: &DateSpan) -> Option<DateSpan> {
        DateSpan::new(self.start.max(other.start), self.end.min(other.end))
    }

    /// Smallest span covering both.
    pub fn union(&self, other: &DateSpan) -> DateSpan {
        DateSpan { start: self.start.min(other.start), end: self.end.max(other.end) }
    }

    /// Offset of `date` from the start of the span, in days (may be negative).
    pub fn offset_of(&self, date: NaiveDate) -> i64 {
        (date - self.start).num_days()
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.len_days()).map(move |i| add_days(self.start, i as i64))
    }
}

impl core::fmt::Display for DateSpan {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}..={}", self.start, self.end)
    }
}

/// `date + days`, saturating at chrono's representable range.
pub fn add_days(date: NaiveDate, days: i64) -> NaiveDate {
    if days >= 0 {
        date.checked_add_days(Days::new(days as u64)).unwrap_or(NaiveDate::MAX)
    } else {
        date.checked_sub_days(Days::new(days.unsigned_abs())).unwrap_or(NaiveDate::MIN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn overlap_counts_inclusive_days() {
        let a = DateSpan::new(d(2005, 1, 5), d(2005, 1, 10)).unwrap();
        let b = DateSpan::new(d(2005, 1, 9), d(2005, 1, 12)).unwrap();
        let c = DateSpan::new(d(2005, 1, 11), d(2005, 1, 12)).unwrap();
        assert_eq!(a.overlap_days(&b), 2);
        assert_eq!(a.overlap_days(&c), 0);
        assert_eq!(a.overlap_days(&a), 6);
        assert_eq!(a.union(&c), DateSpan::new(d(2005, 1, 5), d(2005, 1, 12)).unwrap());
    }

    #[test]
    fn reversed_span_rejected() {
        assert!(DateSpan::new(d(2005, 1, 2), d(2005, 1, 1)).is_none());
        assert_eq!(DateSpan::year(2004).unwrap().len_days(), 366);
    }
}
