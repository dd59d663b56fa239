//! Runs the selected checks of a scenario on a bounded worker pool and
//! compares each verdict with the scenario's expectation.

use crate::error::{Error, Result};
use crate::forms::PhiFunction;
use crate::lab::{
    default_mosco_probes, functional_calculus_convergence_check, g_convergence_check, meta_strong_check, mosco_check,
    resolvent_family, resolvent_recovery, spectral_inclusion_check, strong_resolvent_check, transport_recovery,
    yosida_convergence_check, EquivalenceMatrix, GFamily, DEFAULT_BETAS, DEFAULT_LAMBDAS,
};
use crate::scenarios::Scenario;
use crate::verdict::{ConvergenceReport, DecayRule, Verdict};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Srs,
    Mosco,
    G,
    Fcalc,
    Spectral,
    Yosida,
    Ms,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::Srs,
        CheckKind::Mosco,
        CheckKind::G,
        CheckKind::Fcalc,
        CheckKind::Spectral,
        CheckKind::Yosida,
        CheckKind::Ms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::Srs => "srs",
            CheckKind::Mosco => "mosco",
            CheckKind::G => "g",
            CheckKind::Fcalc => "fcalc",
            CheckKind::Spectral => "spectral",
            CheckKind::Yosida => "yosida",
            CheckKind::Ms => "ms",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::ConfigParse(format!("unknown check `{s}`")))
    }

    fn needs_operator_family(self) -> bool {
        !matches!(self, CheckKind::G | CheckKind::Ms)
    }
}

impl std::fmt::Display for CheckKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` runs every check the scenario has an expectation for.
    pub checks: Option<Vec<CheckKind>>,
    /// Overrides the scenario tolerance.
    pub tol: Option<f64>,
    pub seed: u64,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub phis: Vec<PhiFunction>,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            checks: None,
            tol: None,
            seed: 42,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            betas: DEFAULT_BETAS.to_vec(),
            phis: PhiFunction::battery(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckOutcome {
    pub report: ConvergenceReport,
    pub expected: Verdict,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceSummary {
    pub matrix: EquivalenceMatrix,
    pub agree: bool,
}

/// Deterministic run record; wall-clock data lives in [`Timings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub scenario: String,
    pub config: Value,
    pub checks: BTreeMap<CheckKind, CheckOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceSummary>,
    pub diagnostics: BTreeMap<String, f64>,
    pub mismatches: Vec<CheckKind>,
    pub overall: Verdict,
}

impl Report {
    /// Pretty JSON with sorted keys and a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&serde_json::to_value(self)?)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per trace value: `(check, trace key, label, value)`.
    pub fn trace_rows(&self) -> Vec<(CheckKind, String, f64, f64)> {
        let mut rows = Vec::new();
        for (check, out) in &self.checks {
            for t in &out.report.traces {
                for (l, v) in t.labels.iter().zip(&t.values) {
                    rows.push((*check, t.key.clone(), *l, *v));
                }
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub threads: usize,
    pub total_seconds: f64,
    pub checks: BTreeMap<CheckKind, f64>,
}

fn selected_checks(s: &Scenario, cfg: &RunConfig) -> Result<Vec<CheckKind>> {
    let checks = match &cfg.checks {
        None => s.expected.keys().copied().collect(),
        Some(c) => {
            let mut c = c.clone();
            c.sort();
            c.dedup();
            c
        }
    };
    if checks.is_empty() {
        return Err(Error::ConfigParse("no checks selected".into()));
    }
    for c in &checks {
        if !s.expected.contains_key(c) {
            return Err(Error::ConfigParse(format!("scenario `{}` has no expected verdict for check `{c}`", s.name)));
        }
        if c.needs_operator_family() && s.family.is_none() {
            return Err(Error::ConfigParse(format!("check `{c}` needs an operator family")));
        }
    }
    Ok(checks)
}

fn run_one(s: &Scenario, cfg: &RunConfig, rule: DecayRule, check: CheckKind) -> Result<ConvergenceReport> {
    let (field, battery, ident) = (&s.field, &s.battery, &s.identification);
    let fam = || s.family.as_ref().ok_or_else(|| Error::ConfigParse(format!("check `{check}` needs an operator family")));
    match check {
        CheckKind::Srs => strong_resolvent_check(field, fam()?, battery, ident, &cfg.lambdas, rule),
        CheckKind::Fcalc => functional_calculus_convergence_check(field, fam()?, battery, ident, &cfg.phis, rule),
        CheckKind::Yosida => yosida_convergence_check(field, fam()?, battery, ident, &cfg.betas, rule),
        CheckKind::Mosco => {
            let fam = fam()?;
            let probes = default_mosco_probes(field, fam, battery, ident, cfg.seed)?;
            let core = transport_recovery(field, ident, &s.recovery_core)?;
            mosco_check(field, fam, battery, ident, &core, &probes, rule)
        }
        CheckKind::G => match (&s.bounded, &s.family) {
            (Some(bf), _) => g_convergence_check(
                field,
                GFamily::Bounded(bf),
                ident,
                &s.g_probes,
                &|z| ident.transport_section(field, z),
                Some(battery),
                rule,
            ),
            (None, Some(fam)) => g_convergence_check(
                field,
                GFamily::Operator(fam),
                ident,
                &s.g_probes,
                &|z| resolvent_recovery(field, fam, ident, z),
                None,
                rule,
            ),
            (None, None) => Err(Error::ConfigParse("scenario has no family".into())),
        },
        CheckKind::Ms => match (&s.bounded, &s.family) {
            (Some(bf), _) => meta_strong_check(field, bf, battery, ident, rule),
            (None, Some(fam)) => meta_strong_check(field, &resolvent_family(field, fam, 1.0)?, battery, ident, rule),
            (None, None) => Err(Error::ConfigParse("scenario has no family".into())),
        },
        CheckKind::Spectral => {
            let srs = strong_resolvent_check(field, fam()?, battery, ident, &cfg.lambdas, rule)?;
            spectral_inclusion_check(field, fam()?, s.spectral_cutoff, srs.verdict, rule)
        }
    }
}

/// Echo of the effective configuration, without the thread count so that
/// reports do not depend on the machine.
fn config_echo(s: &Scenario, cfg: &RunConfig, checks: &[CheckKind], tol: f64) -> Value {
    json!({
        "scenario": s.name,
        "checks": checks,
        "tol": tol,
        "seed": cfg.seed,
        "lambdas": cfg.lambdas,
        "betas": cfg.betas,
        "phis": cfg.phis.iter().map(|p| p.name()).collect::<Vec<_>>(),
    })
}

/// Runs the selected checks in parallel. Any check error aborts the run.
pub fn run_scenario(s: &Scenario, cfg: &RunConfig) -> Result<(Report, Timings)> {
    s.validate()?;
    let tol = cfg.tol.unwrap_or(s.tol);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::ConfigParse(format!("tolerance must be positive, got {tol}")));
    }
    let rule = DecayRule::new(tol);
    let checks = selected_checks(s, cfg)?;
    let start = Instant::now();
    let queue = Mutex::new(checks.clone());
    let results = Mutex::new(BTreeMap::new());
    let workers = cfg.threads.clamp(1, checks.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some(check) = queue.lock().expect("queue lock").pop() else { break };
                let t0 = Instant::now();
                let r = run_one(s, cfg, rule, check);
                results.lock().expect("result lock").insert(check, (r, t0.elapsed().as_secs_f64()));
            });
        }
    });
    let mut outcomes = BTreeMap::new();
    let mut timings = BTreeMap::new();
    for (check, (r, secs)) in results.into_inner().expect("result lock") {
        let report = r?;
        let expected = s.expected[&check];
        let matches = report.verdict == expected;
        outcomes.insert(check, CheckOutcome { report, expected, matches });
        timings.insert(check, secs);
    }
    let verdict_of = |c: CheckKind| outcomes.get(&c).map(|o: &CheckOutcome| o.report.verdict);
    let equivalence = match (
        verdict_of(CheckKind::Srs),
        verdict_of(CheckKind::Mosco),
        verdict_of(CheckKind::G),
        verdict_of(CheckKind::Fcalc),
    ) {
        (Some(a), Some(b), Some(c), Some(d)) => {
            let matrix = EquivalenceMatrix::from_verdicts(a, b, c, d);
            Some(EquivalenceSummary { matrix, agree: matrix.agree() })
        }
        _ => None,
    };
    let mismatches: Vec<CheckKind> = outcomes.iter().filter(|(_, o)| !o.matches).map(|(c, _)| *c).collect();
    let report = Report {
        scenario: s.name.clone(),
        config: config_echo(s, cfg, &checks, tol),
        overall: Verdict::from_bool(mismatches.is_empty()),
        mismatches,
        checks: outcomes,
        equivalence,
        diagnostics: s.diagnostics.clone(),
    };
    let timings = Timings { threads: workers, total_seconds: start.elapsed().as_secs_f64(), checks: timings };
    Ok((report, timings))
}
