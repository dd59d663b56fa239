//! Verdicts, the decay rule that turns a deviation trace into Pass/Fail, and
//! the report record shared by every checker.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Default absolute tolerance of the decay rule.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Slack allowed for the non-increasing tail of a trace.
const TAIL_SLACK: f64 = 1.1;

/// Values below `tol * ZERO_FLOOR_RATIO` are treated as exact zeros, so that
/// traces made of rounding noise do not fail the halving test.
const ZERO_FLOOR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotApplicable => "not_applicable",
        })
    }
}

/// Index where the final third of a `k`-sample trace starts.
pub fn final_third_start(k: usize) -> usize {
    k - k.div_ceil(3)
}

/// Finite-sample liminf: the minimum over the final third.
pub fn liminf(trace: &[f64]) -> f64 {
    trace[final_third_start(trace.len())..].iter().copied().fold(f64::INFINITY, f64::min)
}

/// Verdict for "d_k → 0": the last value is within `tol`, at most half the
/// first value, and the final third is non-increasing up to 10% slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRule {
    pub tol: f64,
}

impl Default for DecayRule {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL }
    }
}

impl DecayRule {
    pub fn new(tol: f64) -> Self {
        Self { tol }
    }

    pub fn passes(&self, trace: &[f64]) -> bool {
        if trace.is_empty() || trace.iter().any(|d| !d.is_finite()) {
            return false;
        }
        let floor = self.tol * ZERO_FLOOR_RATIO;
        let d: Vec<f64> = trace.iter().map(|&x| if x.abs() <= floor { 0.0 } else { x.abs() }).collect();
        let last = d[d.len() - 1];
        if last > self.tol || last > 0.5 * d[0] {
            return false;
        }
        let tail = &d[final_third_start(d.len())..];
        tail.windows(2).all(|w| w[1] <= TAIL_SLACK * w[0])
    }
}

/// One measured deviation sequence along the base labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trace {
    pub key: String,
    pub labels: Vec<f64>,
    pub values: Vec<f64>,
    pub passed: bool,
}

/// Offending data attached to a failed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Witness {
    pub key: String,
    pub label: f64,
    pub deviation: f64,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceReport {
    pub check_name: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub traces: Vec<Trace>,
    pub metrics: BTreeMap<String, f64>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witnesses: Option<Vec<Witness>>,
}

impl ConvergenceReport {
    pub fn trace(&self, key: &str) -> Option<&Trace> {
        self.traces.iter().find(|t| t.key == key)
    }

    /// Largest final-label value over all traces.
    pub fn max_final_value(&self) -> f64 {
        self.traces.iter().filter_map(|t| t.values.last().copied()).fold(0.0, f64::max)
    }
}

/// Accumulates traces and witnesses, then seals them into a report.
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    name: String,
    rule: DecayRule,
    params: BTreeMap<String, serde_json::Value>,
    traces: Vec<Trace>,
    metrics: BTreeMap<String, f64>,
    witnesses: Vec<Witness>,
}

impl ReportBuilder {
    pub fn new(name: &str, rule: DecayRule) -> Self {
        let mut params = BTreeMap::new();
        params.insert("tol".to_string(), serde_json::json!(rule.tol));
        Self {
            name: name.to_string(),
            rule,
            params,
            traces: Vec::new(),
            metrics: BTreeMap::new(),
            witnesses: Vec::new(),
        }
    }

    pub fn rule(&self) -> DecayRule {
        self.rule
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.params.insert(key.to_string(), v);
        self
    }

    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    /// Records a trace judged by the decay rule. `final_vector` is kept as a
    /// witness when the trace fails.
    pub fn decay_trace(&mut self, key: String, labels: &[f64], values: Vec<f64>, final_vector: Vec<f64>) -> bool {
        let passed = self.rule.passes(&values);
        self.push_trace(key, labels, values, passed, final_vector);
        passed
    }

    /// Records a trace with an externally decided outcome.
    pub fn push_trace(&mut self, key: String, labels: &[f64], values: Vec<f64>, passed: bool, final_vector: Vec<f64>) {
        if !passed {
            let (idx, dev) = values
                .iter()
                .enumerate()
                .rev()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, d)| (i, *d))
                .unwrap_or((0, f64::NAN));
            let label = labels.get(idx).copied().unwrap_or(f64::NAN);
            let deviation = if dev.is_finite() { dev } else { f64::MAX };
            self.witnesses.push(Witness { key: key.clone(), label, deviation, vector: final_vector });
        }
        self.traces.push(Trace { key, labels: labels.to_vec(), values, passed });
    }

    pub fn witness(&mut self, w: Witness) -> &mut Self {
        self.witnesses.push(w);
        self
    }

    pub fn all_passed(&self) -> bool {
        self.traces.iter().all(|t| t.passed)
    }

    pub fn finish(self, verdict: Verdict) -> ConvergenceReport {
        let mut traces = self.traces;
        traces.sort_by(|a, b| a.key.cmp(&b.key));
        let witnesses = if verdict == Verdict::Fail {
            let mut w = self.witnesses;
            if w.is_empty() {
                w.push(Witness { key: "verdict".into(), label: f64::NAN, deviation: f64::NAN, vector: vec![] });
            }
            w.sort_by(|a, b| a.key.cmp(&b.key));
            for x in &mut w {
                if !x.label.is_finite() {
                    x.label = 0.0;
                }
                if !x.deviation.is_finite() {
                    x.deviation = 0.0;
                }
            }
            Some(w)
        } else {
            None
        };
        ConvergenceReport {
            check_name: self.name,
            params: self.params,
            traces,
            metrics: self.metrics,
            verdict,
            witnesses,
        }
    }

    /// Pass iff every recorded trace passed.
    pub fn finish_by_traces(self) -> ConvergenceReport {
        let v = Verdict::from_bool(self.all_passed());
        self.finish(v)
    }
}
