//! CVSS 3.x categorical metrics with a first-class NA sentinel.
//!
//! Every metric is a closed category set plus `Na`. NA is a real label, not
//! an absence: evaluation treats a predicted NA against a true NA as correct.
//! Serialized forms use the canonical spellings (`"Adjacent Network"`,
//! `"NA"`); parsing via `FromStr` is case-insensitive and tolerates `_`/`-`
//! separators and the `N/A` spelling.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("{value:?} is not a valid {metric} value")]
pub struct CvssValueError {
    pub metric: &'static str,
    pub value: String,
}

fn normalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for piece in raw.trim().split(|c: char| c.is_whitespace() || c == '_' || c == '-') {
        if piece.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&piece.to_lowercase());
    }
    out
}

macro_rules! cvss_category {
    ($name:ident, $metric:literal, [$($variant:ident => $label:literal),+ $(,)?]) => {
        #[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant,)+
            #[default]
            #[serde(rename = "NA")]
            Na,
        }

        impl $name {
            /// All values including NA, in canonical order.
            pub const CHOICES: &'static [$name] = &[$($name::$variant,)+ $name::Na];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label,)+
                    $name::Na => "NA",
                }
            }

            /// Parses leniently, mapping anything unrecognized to NA.
            pub fn parse_or_na(raw: &str) -> $name {
                raw.parse().unwrap_or($name::Na)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $name {
            type Err = CvssValueError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let key = normalize(s);
                if key.is_empty() || key == "na" || key == "n/a" {
                    return Ok($name::Na);
                }
                $(
                    if key == normalize($label) {
                        return Ok($name::$variant);
                    }
                )+
                Err(CvssValueError { metric: $metric, value: s.to_string() })
            }
        }
    };
}

cvss_category!(AttackVector, "AV", [
    Network => "Network",
    AdjacentNetwork => "Adjacent Network",
    Local => "Local",
    Physical => "Physical",
]);

cvss_category!(AttackComplexity, "AC", [
    Low => "Low",
    High => "High",
]);

cvss_category!(PrivilegesRequired, "PR", [
    None => "None",
    Low => "Low",
    High => "High",
]);

cvss_category!(UserInteraction, "UI", [
    None => "None",
    Required => "Required",
]);

cvss_category!(Scope, "S", [
    Unchanged => "Unchanged",
    Changed => "Changed",
]);

cvss_category!(ImpactLevel, "CIA", [
    None => "None",
    Low => "Low",
    High => "High",
]);

cvss_category!(BaseSeverity, "Base", [
    Low => "Low",
    Medium => "Medium",
    High => "High",
    Critical => "Critical",
]);

/// The nine metric keys of a [`CvssAssessment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CvssMetric {
    Av,
    Ac,
    Pr,
    Ui,
    S,
    C,
    I,
    A,
    Base,
}

impl CvssMetric {
    pub const ALL: [CvssMetric; 9] = [
        CvssMetric::Av,
        CvssMetric::Ac,
        CvssMetric::Pr,
        CvssMetric::Ui,
        CvssMetric::S,
        CvssMetric::C,
        CvssMetric::I,
        CvssMetric::A,
        CvssMetric::Base,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CvssMetric::Av => "AV",
            CvssMetric::Ac => "AC",
            CvssMetric::Pr => "PR",
            CvssMetric::Ui => "UI",
            CvssMetric::S => "S",
            CvssMetric::C => "C",
            CvssMetric::I => "I",
            CvssMetric::A => "A",
            CvssMetric::Base => "Base",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            CvssMetric::Av => "Attack Vector",
            CvssMetric::Ac => "Attack Complexity",
            CvssMetric::Pr => "Privileges Required",
            CvssMetric::Ui => "User Interaction",
            CvssMetric::S => "Scope",
            CvssMetric::C => "Confidentiality",
            CvssMetric::I => "Integrity",
            CvssMetric::A => "Availability",
            CvssMetric::Base => "Base Severity",
        }
    }

    /// Canonical labels admissible for this metric, NA last.
    pub fn choices(self) -> Vec<&'static str> {
        match self {
            CvssMetric::Av => AttackVector::CHOICES.iter().map(|v| v.label()).collect(),
            CvssMetric::Ac => AttackComplexity::CHOICES.iter().map(|v| v.label()).collect(),
            CvssMetric::Pr => PrivilegesRequired::CHOICES.iter().map(|v| v.label()).collect(),
            CvssMetric::Ui => UserInteraction::CHOICES.iter().map(|v| v.label()).collect(),
            CvssMetric::S => Scope::CHOICES.iter().map(|v| v.label()).collect(),
            CvssMetric::C | CvssMetric::I | CvssMetric::A => {
                ImpactLevel::CHOICES.iter().map(|v| v.label()).collect()
            }
            CvssMetric::Base => BaseSeverity::CHOICES.iter().map(|v| v.label()).collect(),
        }
    }
}

impl fmt::Display for CvssMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CvssMetric {
    type Err = CvssValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize(s);
        CvssMetric::ALL
            .iter()
            .copied()
            .find(|m| normalize(m.name()) == key || normalize(m.long_name()) == key)
            .ok_or_else(|| CvssValueError {
                metric: "metric key",
                value: s.to_string(),
            })
    }
}

/// One full CVSS assessment. Defaults to all-NA; absent evidence stays NA.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvssAssessment {
    #[serde(default)]
    pub av: AttackVector,
    #[serde(default)]
    pub ac: AttackComplexity,
    #[serde(default)]
    pub pr: PrivilegesRequired,
    #[serde(default)]
    pub ui: UserInteraction,
    #[serde(default)]
    pub s: Scope,
    #[serde(default)]
    pub c: ImpactLevel,
    #[serde(default)]
    pub i: ImpactLevel,
    #[serde(default)]
    pub a: ImpactLevel,
    #[serde(default)]
    pub base: BaseSeverity,
}

impl CvssAssessment {
    /// Canonical label of one metric.
    pub fn label_of(&self, metric: CvssMetric) -> &'static str {
        match metric {
            CvssMetric::Av => self.av.label(),
            CvssMetric::Ac => self.ac.label(),
            CvssMetric::Pr => self.pr.label(),
            CvssMetric::Ui => self.ui.label(),
            CvssMetric::S => self.s.label(),
            CvssMetric::C => self.c.label(),
            CvssMetric::I => self.i.label(),
            CvssMetric::A => self.a.label(),
            CvssMetric::Base => self.base.label(),
        }
    }

    /// Sets one metric from raw text; rejects out-of-category values.
    pub fn set_metric(&mut self, metric: CvssMetric, raw: &str) -> Result<(), CvssValueError> {
        match metric {
            CvssMetric::Av => self.av = raw.parse()?,
            CvssMetric::Ac => self.ac = raw.parse()?,
            CvssMetric::Pr => self.pr = raw.parse()?,
            CvssMetric::Ui => self.ui = raw.parse()?,
            CvssMetric::S => self.s = raw.parse()?,
            CvssMetric::C => self.c = raw.parse()?,
            CvssMetric::I => self.i = raw.parse()?,
            CvssMetric::A => self.a = raw.parse()?,
            CvssMetric::Base => self.base = raw.parse()?,
        }
        Ok(())
    }

    /// Sets one metric leniently, mapping unparseable text to NA.
    pub fn set_metric_or_na(&mut self, metric: CvssMetric, raw: &str) {
        match metric {
            CvssMetric::Av => self.av = AttackVector::parse_or_na(raw),
            CvssMetric::Ac => self.ac = AttackComplexity::parse_or_na(raw),
            CvssMetric::Pr => self.pr = PrivilegesRequired::parse_or_na(raw),
            CvssMetric::Ui => self.ui = UserInteraction::parse_or_na(raw),
            CvssMetric::S => self.s = Scope::parse_or_na(raw),
            CvssMetric::C => self.c = ImpactLevel::parse_or_na(raw),
            CvssMetric::I => self.i = ImpactLevel::parse_or_na(raw),
            CvssMetric::A => self.a = ImpactLevel::parse_or_na(raw),
            CvssMetric::Base => self.base = BaseSeverity::parse_or_na(raw),
        }
    }

    pub fn is_all_na(&self) -> bool {
        CvssMetric::ALL.iter().all(|m| self.label_of(*m) == "NA")
    }
}

impl fmt::Display for CvssAssessment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for metric in CvssMetric::ALL {
            if !first {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", metric.name(), self.label_of(metric))?;
            first = false;
        }
        Ok(())
    }
}
