use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_CLASSES: usize = 3;

/// Fixed output order of every model and every report. Index order doubles as
/// tie-break priority: lower index wins.
pub const CLASS_ORDER: [Class; NUM_CLASSES] = [Class::Covid19, Class::Pneumonia, Class::Healthy];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Covid19,
    Pneumonia,
    Healthy,
}

impl Class {
    pub fn index(self) -> usize {
        match self {
            Class::Covid19 => 0,
            Class::Pneumonia => 1,
            Class::Healthy => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Class> {
        CLASS_ORDER.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Covid19 => "covid19",
            Class::Pneumonia => "pneumonia",
            Class::Healthy => "healthy",
        }
    }

    /// Parses canonical names plus the directory spellings found in public
    /// lung ultrasound collections (`covid`, `pneu`, `regular`, ...).
    pub fn parse_loose(s: &str) -> Option<Class> {
        match s.trim().to_ascii_lowercase().as_str() {
            "covid19" | "covid-19" | "covid" | "cov" => Some(Class::Covid19),
            "pneumonia" | "pneu" | "bacterial" => Some(Class::Pneumonia),
            "healthy" | "regular" | "reg" | "normal" => Some(Class::Healthy),
            _ => None,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Class::parse_loose(s).ok_or_else(|| Error::Validation(format!("unknown class label {s:?}")))
    }
}

/// Index of the largest value; exact ties go to the lowest index, i.e. to the
/// class earliest in [`CLASS_ORDER`] (covid19 > pneumonia > healthy).
pub fn argmax_with_priority(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_and_index_agree() {
        for (i, c) in CLASS_ORDER.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(Class::from_index(i), Some(*c));
        }
        assert_eq!(Class::from_index(3), None);
    }

    #[test]
    fn ties_prefer_earlier_class() {
        assert_eq!(argmax_with_priority(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax_with_priority(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax_with_priority(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn loose_parsing() {
        assert_eq!(Class::parse_loose("Regular"), Some(Class::Healthy));
        assert_eq!(Class::parse_loose("covid"), Some(Class::Covid19));
        assert!("viral".parse::<Class>().is_err());
        assert_eq!(serde_json::to_string(&Class::Covid19).unwrap(), "\"covid19\"");
    }
}
