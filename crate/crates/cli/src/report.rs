//! Comparison report written by `evaluate`, and the structural check every report must pass.

use epiflow_core::{EpisodeInit, SuiteRow};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const REPORT_FORMAT: &str = "epiflow-report";
pub const REPORT_VERSION: u64 = 1;

const METRIC_FIELDS: [&str; 8] = [
    "mean_h",
    "max_h",
    "total_r",
    "q",
    "t20_city",
    "t20_region",
    "intervened_days",
    "reward",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u64,
    pub seed: u64,
    pub num_regions: usize,
    pub horizon: usize,
    pub initialization: EpisodeInit,
    pub rows: Vec<SuiteRow>,
}

impl Report {
    pub fn new(seed: u64, num_regions: usize, horizon: usize, initialization: EpisodeInit, rows: Vec<SuiteRow>) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            seed,
            num_regions,
            horizon,
            initialization,
            rows,
        }
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, at: &str) -> Result<&'a Value, String> {
    obj.get(key).ok_or_else(|| format!("{at}: missing {key:?}"))
}

fn count(v: &Value, at: &str) -> Result<u64, String> {
    v.as_u64().ok_or_else(|| format!("{at}: expected a non-negative integer"))
}

fn number(v: &Value, at: &str) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("{at}: expected a number"))
}

fn check_metrics(m: &Value, at: &str) -> Result<(), String> {
    let obj = m.as_object().ok_or_else(|| format!("{at}: metrics must be an object"))?;
    for key in METRIC_FIELDS {
        let v = field(obj, key, at)?;
        let path = format!("{at}.{key}");
        match key {
            "t20_city" | "t20_region" | "intervened_days" => {
                count(v, &path)?;
            }
            "reward" => {
                number(v, &path)?;
            }
            "q" => {
                let q = number(v, &path)?;
                if !(0.0..=1.0 + 1e-9).contains(&q) {
                    return Err(format!("{path}: {q} outside [0, 1]"));
                }
            }
            _ => {
                if number(v, &path)? < 0.0 {
                    return Err(format!("{path}: negative"));
                }
            }
        }
    }
    if let Some(extra) = obj.keys().find(|k| !METRIC_FIELDS.contains(&k.as_str())) {
        return Err(format!("{at}: unexpected field {extra:?}"));
    }
    Ok(())
}

/// Checks the structure of a parsed report: header fields, and per row a policy name, an
/// intervention delay and exactly one of `metrics` or `error`.
pub fn validate_report(doc: &Value) -> Result<(), String> {
    let obj = doc.as_object().ok_or("report must be a JSON object")?;
    if field(obj, "format", "report")?.as_str() != Some(REPORT_FORMAT) {
        return Err(format!("report: format must be {REPORT_FORMAT:?}"));
    }
    if field(obj, "version", "report")?.as_u64() != Some(REPORT_VERSION) {
        return Err(format!("report: version must be {REPORT_VERSION}"));
    }
    count(field(obj, "seed", "report")?, "report.seed")?;
    let k = count(field(obj, "num_regions", "report")?, "report.num_regions")?;
    let horizon = count(field(obj, "horizon", "report")?, "report.horizon")?;
    if k == 0 || horizon == 0 {
        return Err("report: num_regions and horizon must be positive".into());
    }
    field(obj, "initialization", "report")?;
    let rows = field(obj, "rows", "report")?
        .as_array()
        .ok_or("report.rows must be an array")?;
    if rows.is_empty() {
        return Err("report.rows is empty".into());
    }
    for (n, row) in rows.iter().enumerate() {
        let at = format!("rows[{n}]");
        let r = row.as_object().ok_or_else(|| format!("{at}: must be an object"))?;
        match field(r, "policy", &at)?.as_str() {
            Some(name) if !name.is_empty() => {}
            _ => return Err(format!("{at}.policy: expected a non-empty string")),
        }
        if count(field(r, "t_start", &at)?, &format!("{at}.t_start"))? >= horizon {
            return Err(format!("{at}.t_start: not earlier than the horizon"));
        }
        let metrics = field(r, "metrics", &at)?;
        let error = field(r, "error", &at)?;
        match (metrics.is_null(), error.is_null()) {
            (false, true) => check_metrics(metrics, &format!("{at}.metrics"))?,
            (true, false) if error.is_string() => {}
            _ => return Err(format!("{at}: exactly one of metrics or error must be set")),
        }
    }
    Ok(())
}
