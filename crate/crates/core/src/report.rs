//! Verification reports: assembly, JSON and CSV output, schema validation.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::{pairwise_sum, Chart};
use crate::error::{Error, Result};
use crate::scenario::{Outcome, Tolerances};

/// Report format version; bump when fields change.
pub const SCHEMA_VERSION: u32 = 1;

/// Margins are reported in decades and clamped to this magnitude.
pub const MARGIN_CAP: f64 = 99.0;

/// Floats as 17 significant digits; non-finite values as strings.
pub mod real {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if x.is_finite() {
            let n = serde_json::Number::from_str(&format!("{x:.16e}")).map_err(serde::ser::Error::custom)?;
            n.serialize(s)
        } else {
            s.serialize_str(&x.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        // Untagged enums lose arbitrary-precision numbers, so go through a value.
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| serde::de::Error::custom(format!("{n} is not a float"))),
            serde_json::Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!("expected a number, got {other}"))),
        }
    }
}

mod real_opt {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match x {
            Some(v) => real::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "real")] f64);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}

mod real_vec {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct W(#[serde(with = "real")] f64);

    pub fn serialize<S: Serializer>(x: &Option<Vec<f64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        x.as_ref()
            .map(|v| v.iter().map(|&y| W(y)).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
        Ok(Option::<Vec<W>>::deserialize(d)?.map(|v| v.into_iter().map(|w| w.0).collect()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    /// Residuals must stay at or below the threshold.
    Zero,
    /// The largest residual must reach the threshold.
    Nonzero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    PreconditionSkip,
    NotApplicable,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::PreconditionSkip => "precondition-skip",
            Status::NotApplicable => "not-applicable",
        }
    }
}

/// Where the largest residual of a part occurred.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Worst {
    pub node: Option<usize>,
    pub chart: Option<Chart>,
    #[serde(with = "real_vec_pair")]
    pub coord: Option<[f64; 2]>,
    #[serde(with = "real_opt")]
    pub theta: Option<f64>,
    #[serde(with = "real_opt")]
    pub phi: Option<f64>,
    /// Which item (family, index pair, probe) produced it.
    pub item: String,
}

mod real_vec_pair {
    use super::*;

    pub fn serialize<S: Serializer>(x: &Option<[f64; 2]>, s: S) -> std::result::Result<S::Ok, S::Error> {
        real_vec::serialize(&x.map(|a| a.to_vec()), s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<[f64; 2]>, D::Error> {
        match real_vec::deserialize(d)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some([v[0], v[1]])),
            Some(v) => Err(serde::de::Error::invalid_length(v.len(), &"2")),
        }
    }
}

/// One thresholded family of residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub name: String,
    pub expectation: Expectation,
    #[serde(with = "real")]
    pub threshold: f64,
    #[serde(with = "real")]
    pub max_residual: f64,
    #[serde(with = "real")]
    pub mean_residual: f64,
    pub samples: usize,
    pub worst: Option<Worst>,
    /// Signed distance to the threshold in decades; positive passes.
    #[serde(with = "real")]
    pub margin: f64,
    pub status: Status,
    /// Largest residual per node, in grid order, when requested.
    #[serde(default, with = "real_vec", skip_serializing_if = "Option::is_none")]
    pub per_node: Option<Vec<f64>>,
}

impl Part {
    pub fn new(
        name: &str,
        expectation: Expectation,
        threshold: f64,
        residuals: &[f64],
        worst: Option<(f64, Worst)>,
    ) -> Self {
        let (max, worst) = match worst {
            Some((m, w)) => (m, Some(w)),
            None => (0.0, None),
        };
        let mean = if residuals.is_empty() {
            0.0
        } else {
            pairwise_sum(residuals) / residuals.len() as f64
        };
        let margin = margin(expectation, threshold, max, residuals.is_empty());
        let status = if margin >= 0.0 { Status::Pass } else { Status::Fail };
        Self {
            name: name.to_string(),
            expectation,
            threshold,
            max_residual: max,
            mean_residual: mean,
            samples: residuals.len(),
            worst,
            margin,
            status,
            per_node: None,
        }
    }
}

fn margin(expectation: Expectation, threshold: f64, max: f64, empty: bool) -> f64 {
    if max.is_nan() {
        return -MARGIN_CAP;
    }
    let decades = |num: f64, den: f64| {
        if num == den {
            0.0
        } else if den == 0.0 {
            MARGIN_CAP
        } else if num == 0.0 {
            -MARGIN_CAP
        } else {
            (num / den).log10().clamp(-MARGIN_CAP, MARGIN_CAP)
        }
    };
    match expectation {
        Expectation::Zero if empty => MARGIN_CAP,
        Expectation::Zero => decades(threshold, max),
        Expectation::Nonzero if empty => -MARGIN_CAP,
        Expectation::Nonzero => decades(max, threshold),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub case: String,
    pub status: Status,
    /// Smallest part margin; absent unless the check ran.
    #[serde(with = "real_opt")]
    pub margin: Option<f64>,
    /// Statistics of the part with the smallest margin.
    #[serde(with = "real_opt")]
    pub max_residual: Option<f64>,
    #[serde(with = "real_opt")]
    pub mean_residual: Option<f64>,
    pub worst: Option<Worst>,
    pub reason: Option<String>,
    pub parts: Vec<Part>,
    #[serde(default, with = "real_opt", skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl CheckResult {
    pub fn new(check: &str, case: &str, outcome: Outcome, wall_time: Option<f64>) -> Self {
        let mut out = Self {
            check: check.to_string(),
            case: case.to_string(),
            status: Status::NotApplicable,
            margin: None,
            max_residual: None,
            mean_residual: None,
            worst: None,
            reason: None,
            parts: Vec::new(),
            wall_time,
        };
        match outcome {
            Outcome::NotApplicable => {}
            Outcome::Skip(reason) => {
                out.status = Status::PreconditionSkip;
                out.reason = Some(reason);
            }
            Outcome::Parts(parts) => {
                let binding = parts.iter().fold(None::<&Part>, |acc, p| match acc {
                    Some(a) if a.margin <= p.margin => Some(a),
                    _ => Some(p),
                });
                out.status = if parts.iter().all(|p| p.status == Status::Pass) {
                    Status::Pass
                } else {
                    Status::Fail
                };
                if let Some(b) = binding {
                    out.margin = Some(b.margin);
                    out.max_residual = Some(b.max_residual);
                    out.mean_residual = Some(b.mean_residual);
                    out.worst = b.worst.clone();
                }
                out.parts = parts;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub seed: u64,
    pub resolution: [usize; 2],
    pub rmax: usize,
    pub random_fields: usize,
    /// Holomorphic sectional curvature of the Fubini–Study targets.
    #[serde(with = "real")]
    pub fubini_study_curvature: f64,
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub not_applicable: usize,
}

impl Verdict {
    /// Pass iff every check that ran passed.
    pub fn of(results: &[CheckResult]) -> Self {
        let count = |s: Status| results.iter().filter(|r| r.status == s).count();
        let failed = count(Status::Fail);
        Self {
            status: if failed == 0 { Status::Pass } else { Status::Fail },
            passed: count(Status::Pass),
            failed,
            skipped: count(Status::PreconditionSkip),
            not_applicable: count(Status::NotApplicable),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationReport {
    pub schema: u32,
    pub environment: Environment,
    pub results: Vec<CheckResult>,
    pub verdict: Verdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Scenario(format!("unknown format `{other}`"))),
        }
    }
}

/// Statistics written per (check, case) in CSV output.
pub const CSV_STATISTICS: [&str; 5] = ["status", "margin", "max_residual", "mean_residual", "worst_node"];

fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

impl VerificationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["check", "case", "statistic", "value"]).map_err(io)?;
        for r in &self.results {
            let opt = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
            let values = [
                r.status.as_str().to_string(),
                opt(r.margin),
                opt(r.max_residual),
                opt(r.mean_residual),
                r.worst
                    .as_ref()
                    .and_then(|w| w.node)
                    .map(|n| n.to_string())
                    .unwrap_or_default(),
            ];
            for (stat, value) in CSV_STATISTICS.iter().zip(values) {
                w.write_record([r.check.as_str(), r.case.as_str(), stat, value.as_str()])
                    .map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }

    pub fn emit(&self, format: Format, path: &Path) -> Result<()> {
        let text = self.render(format)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        f.write_all(text.as_bytes())
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    /// Parses a JSON report and checks the invariants a report must satisfy.
    pub fn validate_json(text: &str) -> Result<Self> {
        let r: VerificationReport = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("schema {} (expected {SCHEMA_VERSION})", self.schema));
        }
        for r in &self.results {
            let all_pass = r.parts.iter().all(|p| p.status == Status::Pass);
            match r.status {
                Status::Pass if !all_pass || r.parts.is_empty() => {
                    return bad(format!("{} / {}: pass with failing or no parts", r.check, r.case))
                }
                Status::Fail if all_pass => return bad(format!("{} / {}: fail with passing parts", r.check, r.case)),
                Status::PreconditionSkip | Status::NotApplicable if !r.parts.is_empty() => {
                    return bad(format!("{} / {}: parts on a check that did not run", r.check, r.case))
                }
                _ => {}
            }
            for p in &r.parts {
                let expected = margin(p.expectation, p.threshold, p.max_residual, p.samples == 0);
                if expected.to_bits() != p.margin.to_bits() {
                    return bad(format!("{} / {} / {}: inconsistent margin", r.check, r.case, p.name));
                }
            }
        }
        if Verdict::of(&self.results) != self.verdict {
            return bad("verdict disagrees with results".into());
        }
        Ok(())
    }
}
