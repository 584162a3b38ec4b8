//! Record types for the review corpus: businesses, reviews, and photos.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five concrete photo categories, plus `none` for photos that still
/// need a prediction. `none` is never a prediction target.
///
/// The enum order (food < drink < inside < outside < menu) is the
/// documented tie-break order for argmax decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Food,
    Drink,
    Inside,
    Outside,
    Menu,
    None,
}

/// The five concrete (predictable) labels in tie-break order.
pub const CONCRETE_LABELS: [Label; 5] = [
    Label::Food,
    Label::Drink,
    Label::Inside,
    Label::Outside,
    Label::Menu,
];

impl Label {
    /// Parse a label string. Unknown or missing strings map to `None`;
    /// the boolean reports whether the fallback fired.
    pub fn parse_lossy(s: Option<&str>) -> (Label, bool) {
        match s {
            Some("food") => (Label::Food, false),
            Some("drink") => (Label::Drink, false),
            Some("inside") => (Label::Inside, false),
            Some("outside") => (Label::Outside, false),
            Some("menu") => (Label::Menu, false),
            Some("none") | None => (Label::None, false),
            Some(_) => (Label::None, true),
        }
    }

    /// Class index among the five concrete labels. `None` has no index.
    pub fn class_index(self) -> Option<usize> {
        CONCRETE_LABELS.iter().position(|&l| l == self)
    }

    /// Inverse of [`Label::class_index`].
    pub fn from_class_index(idx: usize) -> Option<Label> {
        CONCRETE_LABELS.get(idx).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Food => "food",
            Label::Drink => "drink",
            Label::Inside => "inside",
            Label::Outside => "outside",
            Label::Menu => "menu",
            Label::None => "none",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusinessRecord {
    pub business_id: String,
    pub name: String,
    pub categories: Vec<String>,
}

impl BusinessRecord {
    /// True when any category contains "restaurants" case-insensitively.
    pub fn is_restaurant(&self) -> bool {
        self.categories
            .iter()
            .any(|c| c.to_lowercase().contains("restaurants"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub review_id: String,
    pub business_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stars: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

impl ReviewRecord {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.review_id.is_empty() {
            return Err(Error::invalid("review_id must be non-empty"));
        }
        if self.text.trim().is_empty() {
            return Err(Error::invalid(format!(
                "review {:?} has empty text",
                self.review_id
            )));
        }
        if let Some(stars) = self.stars {
            if !(1..=5).contains(&stars) {
                return Err(Error::invalid(format!(
                    "review {:?} has stars {} outside 1..=5",
                    self.review_id, stars
                )));
            }
        }
        if let Some(date) = &self.date {
            if !is_iso_date(date) {
                return Err(Error::invalid(format!(
                    "review {:?} has non ISO-8601 date {:?}",
                    self.review_id, date
                )));
            }
        }
        Ok(())
    }
}

/// YYYY-MM-DD with plausible month/day ranges.
fn is_iso_date(s: &str) -> bool {
    let bytes = s.as_bytes();
    if bytes.len() != 10 || bytes[4] != b'-' || bytes[7] != b'-' {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| s[r].chars().all(|c| c.is_ascii_digit());
    if !digits(0..4) || !digits(5..7) || !digits(8..10) {
        return false;
    }
    let month: u32 = s[5..7].parse().unwrap_or(0);
    let day: u32 = s[8..10].parse().unwrap_or(0);
    (1..=12).contains(&month) && (1..=31).contains(&day)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub business_id: String,
    #[serde(default)]
    pub caption: String,
    pub label: Label,
}

impl PhotoRecord {
    pub fn has_caption(&self) -> bool {
        !self.caption.trim().is_empty()
    }
}
