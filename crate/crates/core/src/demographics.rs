//! Demographic attributes, group labels and group masks.
//!
//! Label order is fixed everywhere: races in declaration order, Male before
//! Female, and intersections race-major (`WhiteMale`, `WhiteFemale`,
//! `BlackMale`, ...).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Indian,
    EastAsian,
    SoutheastAsian,
    MiddleEastern,
    LatinoHispanic,
}

impl Race {
    pub const ALL: [Race; 7] = [
        Race::White,
        Race::Black,
        Race::Indian,
        Race::EastAsian,
        Race::SoutheastAsian,
        Race::MiddleEastern,
        Race::LatinoHispanic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::Indian => "Indian",
            Race::EastAsian => "EastAsian",
            Race::SoutheastAsian => "SoutheastAsian",
            Race::MiddleEastern => "MiddleEastern",
            Race::LatinoHispanic => "LatinoHispanic",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Race {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Race::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown race {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "Male",
            Gender::Female => "Female",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Male" => Ok(Gender::Male),
            "Female" => Ok(Gender::Female),
            _ => Err(Error::Format(format!("unknown gender {s:?}"))),
        }
    }
}

/// The attribute set a distribution is grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Race,
    Gender,
    RaceGender,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Race, Axis::Gender, Axis::RaceGender];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Race => "race",
            Axis::Gender => "gender",
            Axis::RaceGender => "race_gender",
        }
    }

    /// Group labels for this axis in canonical order.
    pub fn labels(self) -> Vec<String> {
        self.groups().iter().map(Group::label).collect()
    }

    pub fn groups(self) -> Vec<Group> {
        match self {
            Axis::Race => Race::ALL.iter().map(|&r| Group::race(r)).collect(),
            Axis::Gender => Gender::ALL.iter().map(|&g| Group::gender(g)).collect(),
            Axis::RaceGender => Race::ALL
                .iter()
                .flat_map(|&r| Gender::ALL.iter().map(move |&g| Group::intersection(r, g)))
                .collect(),
        }
    }

    pub fn group_count(self) -> usize {
        match self {
            Axis::Race => Race::ALL.len(),
            Axis::Gender => Gender::ALL.len(),
            Axis::RaceGender => Race::ALL.len() * Gender::ALL.len(),
        }
    }

    /// Position of a record's group along this axis.
    pub fn slot(self, race: Race, gender: Gender) -> usize {
        match self {
            Axis::Race => race.index(),
            Axis::Gender => gender.index(),
            Axis::RaceGender => race.index() * Gender::ALL.len() + gender.index(),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "race" => Ok(Axis::Race),
            "gender" => Ok(Axis::Gender),
            "race_gender" | "race×gender" | "race-gender" | "intersection" => Ok(Axis::RaceGender),
            _ => Err(Error::Domain(format!("unknown axis {s:?}"))),
        }
    }
}

/// A conjunction of attribute constraints. An unset field matches anything.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Group {
    pub race: Option<Race>,
    pub gender: Option<Gender>,
}

impl Group {
    pub fn race(race: Race) -> Self {
        Group {
            race: Some(race),
            gender: None,
        }
    }

    pub fn gender(gender: Gender) -> Self {
        Group {
            race: None,
            gender: Some(gender),
        }
    }

    pub fn intersection(race: Race, gender: Gender) -> Self {
        Group {
            race: Some(race),
            gender: Some(gender),
        }
    }

    pub fn matches(&self, record: &DemographicRecord) -> bool {
        self.race.is_none_or(|r| r == record.race) && self.gender.is_none_or(|g| g == record.gender)
    }

    /// Label such as `MiddleEasternMale`, `Female` or `Indian`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if let Some(r) = self.race {
            s.push_str(r.as_str());
        }
        if let Some(g) = self.gender {
            s.push_str(g.as_str());
        }
        if s.is_empty() {
            s.push_str("All");
        }
        s
    }

    pub fn axis(&self) -> Option<Axis> {
        match (self.race, self.gender) {
            (Some(_), Some(_)) => Some(Axis::RaceGender),
            (Some(_), None) => Some(Axis::Race),
            (None, Some(_)) => Some(Axis::Gender),
            (None, None) => None,
        }
    }

    /// Every race, gender and intersection group, in that order.
    pub fn all_groups() -> Vec<Group> {
        Axis::ALL.iter().flat_map(|a| a.groups()).collect()
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Group::all_groups()
            .into_iter()
            .find(|g| g.label() == s)
            .ok_or_else(|| Error::Domain(format!("unknown group label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub record_id: String,
    pub race: Race,
    pub gender: Gender,
    pub age_band: Option<String>,
}

/// The rows of a dataset that belong to a group G; the remaining rows form
/// its complement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMask {
    label: String,
    member_indices: Vec<usize>,
    total: usize,
}

impl GroupMask {
    pub fn from_group(group: &Group, metadata: &[DemographicRecord]) -> Result<Self> {
        let members = metadata
            .iter()
            .enumerate()
            .filter(|(_, rec)| group.matches(rec))
            .map(|(i, _)| i)
            .collect();
        GroupMask::new(group.label(), members, metadata.len())
    }

    /// `member_indices` need not be sorted; duplicates are rejected.
    pub fn new(
        label: impl Into<String>,
        mut member_indices: Vec<usize>,
        total: usize,
    ) -> Result<Self> {
        let label = label.into();
        member_indices.sort_unstable();
        if member_indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Domain(format!(
                "group {label} has duplicate indices"
            )));
        }
        if let Some(&last) = member_indices.last() {
            if last >= total {
                return Err(Error::Domain(format!(
                    "group {label} index {last} out of range for {total} rows"
                )));
            }
        }
        if member_indices.is_empty() || member_indices.len() == total {
            return Err(Error::InvalidGroup(label));
        }
        Ok(GroupMask {
            label,
            member_indices,
            total,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn member_indices(&self) -> &[usize] {
        &self.member_indices
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn complement(&self) -> GroupMask {
        let mut members = self.member_indices.iter().copied().peekable();
        let rest = (0..self.total)
            .filter(|i| {
                if members.peek() == Some(i) {
                    members.next();
                    false
                } else {
                    true
                }
            })
            .collect();
        GroupMask {
            label: format!("not {}", self.label),
            member_indices: rest,
            total: self.total,
        }
    }
}
