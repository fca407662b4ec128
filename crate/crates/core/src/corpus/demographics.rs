use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A binary sensitive attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Gender,
    AgeGroup,
}

impl Attribute {
    pub const ALL: [Attribute; 2] = [Attribute::Gender, Attribute::AgeGroup];

    /// The two values of the attribute in canonical order: the first group
    /// (a1 / b1) is the minuend of every signed disparity.
    pub fn values(self) -> [AttributeValue; 2] {
        match self {
            Attribute::Gender => [AttributeValue::Male, AttributeValue::Female],
            Attribute::AgeGroup => [AttributeValue::Young, AttributeValue::Old],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::AgeGroup => "age",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gender" => Ok(Attribute::Gender),
            "age" | "age_group" | "age-group" => Ok(Attribute::AgeGroup),
            other => Err(format!("unknown attribute `{other}`")),
        }
    }
}

/// One value of a sensitive attribute. Each value belongs to exactly one
/// attribute, so a forced counterfactual value is valid by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeValue {
    Male,
    Female,
    Young,
    Old,
}

impl AttributeValue {
    pub fn attribute(self) -> Attribute {
        match self {
            AttributeValue::Male | AttributeValue::Female => Attribute::Gender,
            AttributeValue::Young | AttributeValue::Old => Attribute::AgeGroup,
        }
    }

    /// Lower-case word used when the value is rendered into a prompt.
    pub fn token(self) -> &'static str {
        match self {
            AttributeValue::Male => "male",
            AttributeValue::Female => "female",
            AttributeValue::Young => "young",
            AttributeValue::Old => "old",
        }
    }

    /// Short group symbol (a1, a2, b1, b2).
    pub fn symbol(self) -> &'static str {
        match self {
            AttributeValue::Male => "a1",
            AttributeValue::Female => "a2",
            AttributeValue::Young => "b1",
            AttributeValue::Old => "b2",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AttributeValue::Male => "Male",
            AttributeValue::Female => "Female",
            AttributeValue::Young => "Young",
            AttributeValue::Old => "Old",
        }
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for AttributeValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" | "a1" => Ok(AttributeValue::Male),
            "female" | "f" | "a2" => Ok(AttributeValue::Female),
            "young" | "b1" => Ok(AttributeValue::Young),
            // "Adult" is used interchangeably with "Old" for the b2 group.
            "old" | "adult" | "b2" => Ok(AttributeValue::Old),
            other => Err(format!("unknown attribute value `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn value(self) -> AttributeValue {
        match self {
            Gender::Male => AttributeValue::Male,
            Gender::Female => AttributeValue::Female,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeGroup {
    Young,
    Old,
}

impl AgeGroup {
    pub fn value(self) -> AttributeValue {
        match self {
            AgeGroup::Young => AttributeValue::Young,
            AgeGroup::Old => AttributeValue::Old,
        }
    }
}

pub const DEFAULT_AGE_BOUNDARY: u32 = 35;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("age must be positive, got {0}")]
pub struct NonPositiveAge(pub i64);

/// Young below `boundary`, Old at or above it.
pub fn derive_age_group(age_years: i64, boundary: u32) -> Result<AgeGroup, NonPositiveAge> {
    if age_years <= 0 {
        return Err(NonPositiveAge(age_years));
    }
    Ok(if age_years < i64::from(boundary) {
        AgeGroup::Young
    } else {
        AgeGroup::Old
    })
}
