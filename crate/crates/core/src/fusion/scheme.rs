use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wound (or non-wound) category, declared in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WoundClass {
    /// Diabetic.
    D,
    /// Pressure.
    P,
    /// Surgical.
    S,
    /// Venous.
    V,
    /// Normal skin.
    N,
    /// Background.
    BG,
}

impl WoundClass {
    pub const ALL: [WoundClass; 6] = [
        WoundClass::D,
        WoundClass::P,
        WoundClass::S,
        WoundClass::V,
        WoundClass::N,
        WoundClass::BG,
    ];

    pub fn code(self) -> &'static str {
        match self {
            WoundClass::D => "D",
            WoundClass::P => "P",
            WoundClass::S => "S",
            WoundClass::V => "V",
            WoundClass::N => "N",
            WoundClass::BG => "BG",
        }
    }

    /// Normal skin and background images may lack a body-map location.
    pub fn location_optional(self) -> bool {
        matches!(self, WoundClass::N | WoundClass::BG)
    }
}

impl fmt::Display for WoundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for WoundClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WoundClass::ALL
            .into_iter()
            .find(|c| c.code() == s.trim())
            .ok_or_else(|| Error::domain(format!("unknown class label `{s}` (expected D, P, S, V, N or BG)")))
    }
}

/// Label space of one experiment: 2 to 6 distinct classes, always held in
/// canonical D, P, S, V, N, BG order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<WoundClass>", into = "Vec<WoundClass>")]
pub struct ClassScheme {
    classes: Vec<WoundClass>,
}

impl ClassScheme {
    pub fn new(classes: &[WoundClass]) -> Result<Self> {
        let mut sorted = classes.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(Error::contract(format!("duplicate class in scheme {classes:?}")));
        }
        if !(2..=6).contains(&sorted.len()) {
            return Err(Error::contract(format!(
                "a scheme needs 2 to 6 classes, got {}",
                sorted.len()
            )));
        }
        Ok(Self { classes: sorted })
    }

    /// BG vs. N vs. D vs. P vs. S vs. V.
    pub fn full() -> Self {
        Self::new(&WoundClass::ALL).expect("six classes")
    }

    /// D vs. P vs. S vs. V.
    pub fn wound_types() -> Self {
        Self::new(&[WoundClass::D, WoundClass::P, WoundClass::S, WoundClass::V]).expect("four classes")
    }

    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[WoundClass] {
        &self.classes
    }

    pub fn index_of(&self, c: WoundClass) -> Option<usize> {
        self.classes.iter().position(|&x| x == c)
    }

    pub fn class(&self, index: usize) -> WoundClass {
        self.classes[index]
    }

    pub fn names(&self) -> Vec<String> {
        self.classes.iter().map(ToString::to_string).collect()
    }
}

impl TryFrom<Vec<WoundClass>> for ClassScheme {
    type Error = Error;

    fn try_from(v: Vec<WoundClass>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<ClassScheme> for Vec<WoundClass> {
    fn from(s: ClassScheme) -> Self {
        s.classes
    }
}

impl FromStr for ClassScheme {
    type Err = Error;

    /// Parses `D,P,S,V` (also accepts `vs.` or whitespace separators).
    fn from_str(s: &str) -> Result<Self> {
        let classes = s
            .replace("vs.", ",")
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(WoundClass::from_str)
            .collect::<Result<Vec<_>>>()?;
        Self::new(&classes)
    }
}

impl fmt::Display for ClassScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(","))
    }
}
