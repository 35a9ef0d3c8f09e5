//! The five CTI tasks, their fourteen analytical targets, and the six NLP
//! modules used at inference time.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The five CTI lifecycle tasks, ordered by their position in the lifecycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtiTask {
    Attribution,
    Contextualization,
    Correlation,
    Prioritization,
    Remediation,
}

impl CtiTask {
    pub const ALL: [CtiTask; 5] = [
        CtiTask::Attribution,
        CtiTask::Contextualization,
        CtiTask::Correlation,
        CtiTask::Prioritization,
        CtiTask::Remediation,
    ];

    /// 1-based lifecycle index.
    pub fn index(self) -> usize {
        match self {
            CtiTask::Attribution => 1,
            CtiTask::Contextualization => 2,
            CtiTask::Correlation => 3,
            CtiTask::Prioritization => 4,
            CtiTask::Remediation => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CtiTask::Attribution => "Attribution",
            CtiTask::Contextualization => "Contextualization",
            CtiTask::Correlation => "Correlation",
            CtiTask::Prioritization => "Prioritization",
            CtiTask::Remediation => "Remediation",
        }
    }
}

impl fmt::Display for CtiTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CtiTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "attribution" => Ok(CtiTask::Attribution),
            "contextualization" => Ok(CtiTask::Contextualization),
            "correlation" => Ok(CtiTask::Correlation),
            "prioritization" => Ok(CtiTask::Prioritization),
            "remediation" => Ok(CtiTask::Remediation),
            other => Err(format!("unknown CTI task: {other:?}")),
        }
    }
}

/// The fourteen analytical targets, grouped under their owning task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticalTarget {
    // Attribution
    ThreatActor,
    Ttps,
    Campaign,
    // Contextualization
    AffectedSystem,
    AttackInfra,
    Impact,
    // Correlation
    CveId,
    CweId,
    // Prioritization
    CvssMetrics,
    EpssRecords,
    // Remediation
    ToolUse,
    CodePatch,
    Methodology,
    Advisory,
}

impl AnalyticalTarget {
    pub const ALL: [AnalyticalTarget; 14] = [
        AnalyticalTarget::ThreatActor,
        AnalyticalTarget::Ttps,
        AnalyticalTarget::Campaign,
        AnalyticalTarget::AffectedSystem,
        AnalyticalTarget::AttackInfra,
        AnalyticalTarget::Impact,
        AnalyticalTarget::CveId,
        AnalyticalTarget::CweId,
        AnalyticalTarget::CvssMetrics,
        AnalyticalTarget::EpssRecords,
        AnalyticalTarget::ToolUse,
        AnalyticalTarget::CodePatch,
        AnalyticalTarget::Methodology,
        AnalyticalTarget::Advisory,
    ];

    /// The task this target belongs to.
    pub fn task(self) -> CtiTask {
        use AnalyticalTarget::*;
        match self {
            ThreatActor | Ttps | Campaign => CtiTask::Attribution,
            AffectedSystem | AttackInfra | Impact => CtiTask::Contextualization,
            CveId | CweId => CtiTask::Correlation,
            CvssMetrics | EpssRecords => CtiTask::Prioritization,
            ToolUse | CodePatch | Methodology | Advisory => CtiTask::Remediation,
        }
    }

    pub fn name(self) -> &'static str {
        use AnalyticalTarget::*;
        match self {
            ThreatActor => "threat_actor",
            Ttps => "ttps",
            Campaign => "campaign",
            AffectedSystem => "affected_system",
            AttackInfra => "attack_infra",
            Impact => "impact",
            CveId => "cve_id",
            CweId => "cwe_id",
            CvssMetrics => "cvss_metrics",
            EpssRecords => "epss_records",
            ToolUse => "tool_use",
            CodePatch => "code_patch",
            Methodology => "methodology",
            Advisory => "advisory",
        }
    }
}

impl fmt::Display for AnalyticalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnalyticalTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace([' ', '-'], "_");
        AnalyticalTarget::ALL
            .iter()
            .copied()
            .find(|t| t.name() == key)
            .ok_or_else(|| format!("unknown analytical target: {s:?}"))
    }
}

/// The six NLP modules scheduled by the inference engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NlpModule {
    Tom,
    Ner,
    Rel,
    Rag,
    Rea,
    Sum,
}

impl NlpModule {
    pub const ALL: [NlpModule; 6] = [
        NlpModule::Tom,
        NlpModule::Ner,
        NlpModule::Rel,
        NlpModule::Rag,
        NlpModule::Rea,
        NlpModule::Sum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NlpModule::Tom => "TOM",
            NlpModule::Ner => "NER",
            NlpModule::Rel => "REL",
            NlpModule::Rag => "RAG",
            NlpModule::Rea => "REA",
            NlpModule::Sum => "SUM",
        }
    }
}

impl fmt::Display for NlpModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
