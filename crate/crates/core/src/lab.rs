//! Theorem-level checkers over operator families: strong resolvent,
//! functional calculus, Mosco, G-convergence, meta-strong, spectral inclusion,
//! Yosida–Moreau, and their cross-consistency.
//!
//! Deviations between fibers always compare a fiber result with the
//! transported limit result, normalized by `max(1, ‖limit result‖)`.
//! The (M1) probe battery is sound but not complete: a Fail is a genuine
//! counterexample, a Pass is evidence only.

use crate::error::{dim_check, Error, Result};
use crate::field::{weak_convergence_check, FieldOfHilbert, Identification, Section, SectionBattery};
use crate::forms::{functional_calculus, operator_norm_estimate, BoundedFamily, FormFiber, OperatorFamily, PhiFunction, POWER_STEPS};
use crate::linalg::{sub, Cholesky, Matrix, SymMatrix};
use crate::verdict::{liminf, ConvergenceReport, DecayRule, ReportBuilder, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const DEFAULT_LAMBDAS: [f64; 3] = [0.5, 1.0, 2.0];
pub const DEFAULT_BETAS: [f64; 3] = [1.0, 10.0, 100.0];
pub const EIGEN_PROBES: usize = 5;
pub const RANDOM_PROBES: usize = 10;
const INVERTIBLE_TOL: f64 = 1e-10;

/// A sequence along the base with a declared limit value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSequence {
    pub name: String,
    pub values: Vec<Vec<f64>>,
    pub limit: Vec<f64>,
}

/// Operator selection for the G-convergence check.
#[derive(Debug, Clone, Copy)]
pub enum GFamily<'a> {
    Operator(&'a OperatorFamily),
    Bounded(&'a BoundedFamily),
}

impl GFamily<'_> {
    fn apply(&self, k: usize, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            GFamily::Operator(f) => f.fibers[k].apply_operator(v),
            GFamily::Bounded(b) => Ok(b.operators[k].matvec(v)),
        }
    }

    fn apply_limit(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            GFamily::Operator(f) => f.limit.apply_operator(v),
            GFamily::Bounded(b) => Ok(b.limit.matvec(v)),
        }
    }
}

/// The four verdicts tied together by the equivalence theorems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceMatrix {
    pub srs_pass: bool,
    pub mosco_pass: bool,
    pub g_pass: bool,
    pub fcalc_pass: bool,
}

impl EquivalenceMatrix {
    pub fn from_verdicts(srs: Verdict, mosco: Verdict, g: Verdict, fcalc: Verdict) -> Self {
        Self { srs_pass: srs.is_pass(), mosco_pass: mosco.is_pass(), g_pass: g.is_pass(), fcalc_pass: fcalc.is_pass() }
    }

    pub fn agree(&self) -> bool {
        let v = [self.srs_pass, self.mosco_pass, self.g_pass, self.fcalc_pass];
        v.iter().all(|&x| x == v[0])
    }
}

fn rel(x: f64, scale: f64) -> f64 {
    x / scale.max(1.0)
}

fn key_num(x: f64) -> String {
    format!("{x}")
}

/// `‖r_k − J_k w‖_k / max(1, ‖w‖_∞)` for every label, plus the last difference.
fn deviation_trace(
    field: &FieldOfHilbert,
    ident: &Identification,
    results: &[Vec<f64>],
    limit: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let c = ident.coefficients(field, limit)?;
    let scale = field.limit_fiber().norm(limit);
    let mut devs = Vec::with_capacity(results.len());
    let mut last = Vec::new();
    for (k, r) in results.iter().enumerate() {
        let d = sub(r, &ident.embed(k, &c));
        devs.push(rel(field.fiber(k).norm(&d), scale));
        last = d;
    }
    Ok((devs, last))
}

fn check_family(field: &FieldOfHilbert, fam: &OperatorFamily, battery: &SectionBattery, ident: &Identification) -> Result<()> {
    fam.validate(field)?;
    battery.validate(field)?;
    ident.validate(field)
}

fn positive_battery(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() || xs.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!("{name} battery must be nonempty and positive")));
    }
    Ok(())
}

/// `(T_k+λ)⁻¹g(t_k) → transported (T_∞+λ)⁻¹g(t_∞)` for every λ and battery
/// section. Per-λ verdicts are recorded; the overall verdict passes only if
/// every λ passes.
pub fn strong_resolvent_check(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    battery: &SectionBattery,
    ident: &Identification,
    lambdas: &[f64],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    check_family(field, fam, battery, ident)?;
    positive_battery("lambda", lambdas)?;
    let mut b = ReportBuilder::new("strong_resolvent", rule);
    b.param("lambdas", lambdas);
    let mut per_lambda = BTreeMap::new();
    for &lambda in lambdas {
        let resolvents = fam.fibers.iter().map(|f| f.resolvent(lambda)).collect::<Result<Vec<_>>>()?;
        let limit = fam.limit.resolvent(lambda)?;
        let mut ok = true;
        for (i, g) in battery.sections().iter().enumerate() {
            let results = resolvents.iter().zip(&g.values).map(|(r, v)| r.apply(v)).collect::<Result<Vec<_>>>()?;
            let (devs, last) = deviation_trace(field, ident, &results, &limit.apply(&g.limit)?)?;
            ok &= b.decay_trace(format!("lambda={}/section={i:03}", key_num(lambda)), field.labels(), devs, last);
        }
        per_lambda.insert(key_num(lambda), Verdict::from_bool(ok));
    }
    let all = per_lambda.values().all(|v| v.is_pass());
    let agree = per_lambda.values().all(|v| v.is_pass() == all);
    b.param("lambda_verdicts", &per_lambda).param("lambda_independent", agree);
    Ok(b.finish(Verdict::from_bool(all)))
}

/// `φ(T_k)g(t_k) → transported φ(T_∞)g(t_∞)` for every φ and battery section.
pub fn functional_calculus_convergence_check(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    battery: &SectionBattery,
    ident: &Identification,
    phis: &[PhiFunction],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    check_family(field, fam, battery, ident)?;
    if phis.is_empty() {
        return Err(Error::InvalidParameter("phi battery must be nonempty".into()));
    }
    let mut b = ReportBuilder::new("functional_calculus", rule);
    b.param("phis", phis.iter().map(PhiFunction::name).collect::<Vec<_>>());
    for phi in phis {
        let f = |s: f64| phi.eval(s);
        for (i, g) in battery.sections().iter().enumerate() {
            let results = fam
                .fibers
                .iter()
                .zip(&g.values)
                .map(|(fib, v)| functional_calculus(fib, &f, v))
                .collect::<Result<Vec<_>>>()?;
            let (devs, last) = deviation_trace(field, ident, &results, &functional_calculus(&fam.limit, &f, &g.limit)?)?;
            b.decay_trace(format!("phi={}/section={i:03}", phi.name()), field.labels(), devs, last);
        }
    }
    Ok(b.finish_by_traces())
}

fn energy(f: &FormFiber, v: &[f64]) -> f64 {
    f.stiffness().bilinear(v, v)
}

/// Growth factor across the final third that marks an energy trace as
/// unbounded, so that its liminf counts as `+∞`.
const DIVERGENCE_FACTOR: f64 = 1.5;

fn energies_diverge(trace: &[f64]) -> bool {
    let tail = &trace[crate::verdict::final_third_start(trace.len())..];
    tail.len() >= 2
        && tail.windows(2).all(|w| w[1] > w[0])
        && tail[tail.len() - 1] >= DIVERGENCE_FACTOR * tail[0].max(f64::MIN_POSITIVE)
}

/// Mosco convergence. (M2*): every recovery section has converging form
/// values and converges to its limit. (M1): for each probe that converges
/// weakly against the battery, `(t_∞+1)[ζ_∞] ≤ liminf (t_k+1)[ζ_k]` up to the
/// tolerance, relative to `max(1, (t_∞+1)[ζ_∞])`. Probes failing the weak
/// precheck are listed and skipped; probes whose energies grow by 1.5× or
/// more, monotonically, over the final third count as unbounded.
pub fn mosco_check(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    battery: &SectionBattery,
    ident: &Identification,
    recovery_core: &[Section],
    probes: &[ProbeSequence],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    check_family(field, fam, battery, ident)?;
    if recovery_core.is_empty() {
        return Err(Error::MissingRecovery);
    }
    let mut b = ReportBuilder::new("mosco", rule);
    let mut m2_ok = true;
    for (i, eta) in recovery_core.iter().enumerate() {
        field.check_section(eta, "recovery section")?;
        let target = energy(&fam.limit, &eta.limit);
        let devs: Vec<f64> =
            fam.fibers.iter().zip(&eta.values).map(|(f, v)| rel((energy(f, v) - target).abs(), target)).collect();
        let last = eta.values.last().cloned().unwrap_or_default();
        m2_ok &= b.decay_trace(format!("m2/core={i:03}/energy"), field.labels(), devs, last);
        let (devs, last) = deviation_trace(field, ident, &eta.values, &eta.limit)?;
        m2_ok &= b.decay_trace(format!("m2/core={i:03}/distance"), field.labels(), devs, last);
    }
    let mut excluded = Vec::new();
    let mut diverging = Vec::new();
    let mut tested = 0usize;
    let mut m1_ok = true;
    let mut worst_margin = f64::INFINITY;
    for p in probes {
        let weak = weak_convergence_check(field, &p.values, battery, &p.limit, rule)?;
        if !weak.verdict.is_pass() {
            excluded.push(p.name.clone());
            continue;
        }
        tested += 1;
        let lifted: Vec<f64> =
            fam.fibers.iter().zip(&p.values).enumerate().map(|(k, (f, v))| energy(f, v) + field.fiber(k).inner(v, v)).collect();
        let target = energy(&fam.limit, &p.limit) + field.limit_fiber().inner(&p.limit, &p.limit);
        let divergent = energies_diverge(&lifted);
        let margin = if divergent { f64::INFINITY } else { rel(liminf(&lifted) - target, target) };
        let ok = margin >= -rule.tol;
        if divergent {
            diverging.push(p.name.clone());
        }
        m1_ok &= ok;
        worst_margin = worst_margin.min(margin);
        if !divergent {
            b.metric(&format!("m1_margin/{}", p.name), margin);
        }
        b.push_trace(format!("m1/{}", p.name), field.labels(), lifted, ok, p.limit.clone());
    }
    if !probes.is_empty() && tested == 0 {
        return Err(Error::PreconditionFailed("no (M1) probe converges weakly against the battery".into()));
    }
    if worst_margin.is_finite() {
        b.metric("m1_worst_margin", worst_margin);
    }
    b.param("m1_excluded", &excluded).param("m1_diverging", &diverging).param("m1_tested", tested).param("m2_pass", m2_ok).param("m1_pass", m1_ok);
    Ok(b.finish(Verdict::from_bool(m1_ok && m2_ok)))
}

/// Default (M1) probes: resolvent images of the battery at λ = 1, the first
/// five transported limit eigenvectors, the all-ones vector in every fiber,
/// and seeded random combinations of battery limit values, transported.
pub fn default_mosco_probes(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    battery: &SectionBattery,
    ident: &Identification,
    seed: u64,
) -> Result<Vec<ProbeSequence>> {
    check_family(field, fam, battery, ident)?;
    let mut out = Vec::new();
    let resolvents = fam.fibers.iter().map(|f| f.resolvent(1.0)).collect::<Result<Vec<_>>>()?;
    let limit_res = fam.limit.resolvent(1.0)?;
    for (i, g) in battery.sections().iter().enumerate() {
        out.push(ProbeSequence {
            name: format!("resolvent/section={i:03}"),
            values: resolvents.iter().zip(&g.values).map(|(r, v)| r.apply(v)).collect::<Result<_>>()?,
            limit: limit_res.apply(&g.limit)?,
        });
    }
    let eig = fam.limit.eig()?;
    for (j, v) in eig.eigenvectors.iter().take(EIGEN_PROBES).enumerate() {
        out.push(transported_probe(field, ident, format!("eigen/j={}", j + 1), v)?);
    }
    out.push(ProbeSequence {
        name: "constant".into(),
        values: field.dims().into_iter().map(|n| vec![1.0; n]).collect(),
        limit: vec![1.0; field.limit_fiber().dim()],
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..RANDOM_PROBES {
        let mut w = vec![0.0; field.limit_fiber().dim()];
        for g in battery.sections() {
            let c: f64 = rng.gen_range(-1.0..1.0);
            w.iter_mut().zip(&g.limit).for_each(|(a, b)| *a += c * b);
        }
        out.push(transported_probe(field, ident, format!("random/{i:03}"), &w)?);
    }
    Ok(out)
}

fn transported_probe(field: &FieldOfHilbert, ident: &Identification, name: String, w: &[f64]) -> Result<ProbeSequence> {
    let s = ident.transport_section(field, w)?;
    Ok(ProbeSequence { name, values: s.values, limit: s.limit })
}

/// Recovery sections built by transport: `η_k = J_k η`.
pub fn transport_recovery(field: &FieldOfHilbert, ident: &Identification, core: &[Vec<f64>]) -> Result<Vec<Section>> {
    core.iter().map(|w| ident.transport_section(field, w)).collect()
}

/// Resolvent recovery `ζ_k = (T_k+1)⁻¹ J_k (T_∞+1)ζ`, the approximants used
/// for G-convergence of unbounded families.
pub fn resolvent_recovery(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    ident: &Identification,
    zeta: &[f64],
) -> Result<Section> {
    let rhs = fam.limit.apply_operator(zeta)?;
    let rhs: Vec<f64> = rhs.iter().zip(zeta).map(|(a, b)| a + b).collect();
    let c = ident.coefficients(field, &rhs)?;
    let values = fam
        .fibers
        .iter()
        .enumerate()
        .map(|(k, f)| f.resolvent(1.0)?.apply(&ident.embed(k, &c)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Section::new(values, zeta.to_vec()))
}

/// G-convergence: for each probe `ζ` the recovery `ζ_k` converges to `ζ`
/// and `T_kζ_k` converges to the transported `T_∞ζ`. With a battery in the
/// bounded case, the meta-strong verdict is recorded next to it.
pub fn g_convergence_check(
    field: &FieldOfHilbert,
    fam: GFamily<'_>,
    ident: &Identification,
    probes: &[Vec<f64>],
    recovery: &dyn Fn(&[f64]) -> Result<Section>,
    cross_check: Option<&SectionBattery>,
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    if probes.is_empty() {
        return Err(Error::MissingRecovery);
    }
    ident.validate(field)?;
    let mut b = ReportBuilder::new("g_convergence", rule);
    for (i, zeta) in probes.iter().enumerate() {
        let s = recovery(zeta)?;
        field.check_section(&s, "G recovery")?;
        let (devs, last) = deviation_trace(field, ident, &s.values, zeta)?;
        b.decay_trace(format!("probe={i:03}/approx"), field.labels(), devs, last);
        let images = s.values.iter().enumerate().map(|(k, v)| fam.apply(k, v)).collect::<Result<Vec<_>>>()?;
        let (devs, last) = deviation_trace(field, ident, &images, &fam.apply_limit(zeta)?)?;
        b.decay_trace(format!("probe={i:03}/image"), field.labels(), devs, last);
    }
    let verdict = Verdict::from_bool(b.all_passed());
    if let (GFamily::Bounded(bf), Some(battery)) = (fam, cross_check) {
        let ms = meta_strong_check(field, bf, battery, ident, rule)?;
        b.param("meta_strong_verdict", ms.verdict).param("agrees_with_meta_strong", ms.verdict == verdict);
    }
    Ok(b.finish(verdict))
}

/// Operator-norm estimates along the base and at the limit.
pub fn operator_norms(field: &FieldOfHilbert, bf: &BoundedFamily) -> Result<(Vec<f64>, f64)> {
    let norms = bf
        .operators
        .iter()
        .enumerate()
        .map(|(k, op)| operator_norm_estimate(field.fiber(k).mass(), op, POWER_STEPS))
        .collect::<Result<Vec<_>>>()?;
    Ok((norms, operator_norm_estimate(field.limit_fiber().mass(), &bf.limit, POWER_STEPS)?))
}

/// Meta-strong convergence through the dense-core criterion: operator norms
/// stay finite along the base and `B_k g(t_k) → transported B_∞ g(t_∞)` for
/// every battery section.
pub fn meta_strong_check(
    field: &FieldOfHilbert,
    bf: &BoundedFamily,
    battery: &SectionBattery,
    ident: &Identification,
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    bf.validate(field)?;
    battery.validate(field)?;
    ident.validate(field)?;
    let mut b = ReportBuilder::new("meta_strong", rule);
    let (norms, limit_norm) = operator_norms(field, bf)?;
    let bounded = norms.iter().all(|n| n.is_finite()) && limit_norm.is_finite();
    let tail = &norms[crate::verdict::final_third_start(norms.len())..];
    b.metric("sup_tail_norm", tail.iter().copied().fold(0.0, f64::max)).metric("limit_norm", limit_norm);
    b.push_trace("operator_norm".into(), field.labels(), norms, bounded, vec![]);
    for (i, g) in battery.sections().iter().enumerate() {
        let images: Vec<Vec<f64>> = bf.operators.iter().zip(&g.values).map(|(op, v)| op.matvec(v)).collect();
        let (devs, last) = deviation_trace(field, ident, &images, &bf.limit.matvec(&g.limit))?;
        b.decay_trace(format!("section={i:03}"), field.labels(), devs, last);
    }
    Ok(b.finish_by_traces())
}

/// `‖B_∞‖ ≤ liminf ‖B_k‖ + tol` along a meta-strongly convergent family.
pub fn lower_semicontinuity_opnorm_check(
    field: &FieldOfHilbert,
    bf: &BoundedFamily,
    battery: &SectionBattery,
    ident: &Identification,
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    let ms = meta_strong_check(field, bf, battery, ident, rule)?;
    if !ms.verdict.is_pass() {
        return Err(Error::PreconditionFailed("family does not converge meta-strongly".into()));
    }
    let (norms, limit_norm) = operator_norms(field, bf)?;
    let margin = liminf(&norms) - limit_norm;
    let ok = margin >= -rule.tol;
    let mut b = ReportBuilder::new("lsc_operator_norm", rule);
    b.metric("margin", margin).metric("limit_norm", limit_norm);
    b.push_trace("operator_norm".into(), field.labels(), norms, ok, vec![]);
    Ok(b.finish(Verdict::from_bool(ok)))
}

fn smallest_eigenvalue(f: &FormFiber) -> Result<f64> {
    Ok(f.spectrum()?.first().copied().unwrap_or(0.0))
}

/// Family of inverses: stiffness `M A⁻¹ M`, so the operator is `T⁻¹`.
pub fn inverse_family(fam: &OperatorFamily) -> Result<OperatorFamily> {
    let invert = |f: &FormFiber, label: String| -> Result<SymMatrix> {
        let min_eigenvalue = smallest_eigenvalue(f)?;
        if min_eigenvalue <= INVERTIBLE_TOL {
            return Err(Error::NotInvertible { label, min_eigenvalue });
        }
        let chol = Cholesky::factor(f.stiffness())?;
        let m = f.mass();
        let n = m.dim();
        let cols = (0..n).map(|j| chol.solve(m.row(j))).collect::<std::result::Result<Vec<_>, _>>()?;
        let x = Matrix::from_columns(&cols)?;
        let mx = m.to_matrix().matmul(&x)?;
        Ok(SymMatrix::from_lower_fn(n, |i, j| 0.5 * (mx.get(i, j) + mx.get(j, i)))?)
    };
    let labels = fam.base.labels().to_vec();
    let fibers = fam
        .fibers
        .iter()
        .zip(&labels)
        .map(|(f, t)| FormFiber::new(invert(f, t.to_string())?, f.mass().clone()))
        .collect::<Result<Vec<_>>>()?;
    let limit = FormFiber::new(invert(&fam.limit, "limit".into())?, fam.limit.mass().clone())?;
    Ok(OperatorFamily { base: fam.base.clone(), fibers, limit })
}

/// G-convergence of a family and of its inverses must agree. Without an
/// explicit inverse family the exact inverses are used.
pub fn inverse_g_duality_check(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    inverse: Option<&OperatorFamily>,
    ident: &Identification,
    probes: &[Vec<f64>],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    let computed;
    let inv = match inverse {
        Some(f) => {
            for fib in f.fibers.iter().chain(std::iter::once(&f.limit)) {
                let min_eigenvalue = smallest_eigenvalue(fib)?;
                if min_eigenvalue <= INVERTIBLE_TOL {
                    return Err(Error::NotInvertible { label: "inverse family".into(), min_eigenvalue });
                }
            }
            f
        }
        None => {
            computed = inverse_family(fam)?;
            &computed
        }
    };
    let fwd = g_convergence_check(
        field,
        GFamily::Operator(fam),
        ident,
        probes,
        &|z| resolvent_recovery(field, fam, ident, z),
        None,
        rule,
    )?;
    let bwd = g_convergence_check(
        field,
        GFamily::Operator(inv),
        ident,
        probes,
        &|z| resolvent_recovery(field, inv, ident, z),
        None,
        rule,
    )?;
    let mut b = ReportBuilder::new("inverse_g_duality", rule);
    for t in fwd.traces.iter() {
        b.push_trace(format!("forward/{}", t.key), &t.labels, t.values.clone(), t.passed, vec![]);
    }
    for t in bwd.traces.iter() {
        b.push_trace(format!("inverse/{}", t.key), &t.labels, t.values.clone(), t.passed, vec![]);
    }
    b.param("forward_verdict", fwd.verdict).param("inverse_verdict", bwd.verdict);
    Ok(b.finish(Verdict::from_bool(fwd.verdict == bwd.verdict)))
}

/// Distance trace `dist(θ, σ(T_k)) / max(1, θ)` for every limit eigenvalue
/// `θ ≤ cutoff`. Only the inclusion of the limit spectrum is tested.
pub fn spectral_inclusion_check(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    cutoff: f64,
    srs_verdict: Verdict,
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    if cutoff.is_nan() || cutoff <= 0.0 {
        return Err(Error::PreconditionFailed(format!("spectral cutoff must be positive, got {cutoff}")));
    }
    fam.validate(field)?;
    let mut b = ReportBuilder::new("spectral_inclusion", rule);
    b.param("cutoff", cutoff);
    if !srs_verdict.is_pass() {
        b.param("reason", "strong resolvent convergence not established");
        return Ok(b.finish(Verdict::NotApplicable));
    }
    let spectra = fam.fibers.iter().map(|f| f.spectrum()).collect::<Result<Vec<_>>>()?;
    for (j, &theta) in fam.limit.spectrum()?.iter().take_while(|&&t| t <= cutoff).enumerate() {
        let devs: Vec<f64> = spectra
            .iter()
            .map(|s| rel(s.iter().map(|x| (x - theta).abs()).fold(f64::INFINITY, f64::min), theta))
            .collect();
        b.decay_trace(format!("eigenvalue={j:03}"), field.labels(), devs, vec![theta]);
        b.metric(&format!("limit_eigenvalue={j:03}"), theta);
    }
    Ok(b.finish_by_traces())
}

fn bounded_from_fibers(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    op: impl Fn(&FormFiber) -> Result<Matrix>,
) -> Result<BoundedFamily> {
    let operators = fam.fibers.iter().map(&op).collect::<Result<Vec<_>>>()?;
    BoundedFamily::new(field, operators, op(&fam.limit)?, false)
}

/// `c₀·I + c₁·(A+βM)⁻¹M` as a matrix.
fn shifted_resolvent_matrix(f: &FormFiber, beta: f64, c0: f64, c1: f64) -> Result<Matrix> {
    let r = f.resolvent(beta)?;
    let m = f.mass();
    let n = m.dim();
    let cols = (0..n)
        .map(|j| {
            let mut x = r.solve_raw(m.row(j))?;
            x.iter_mut().for_each(|v| *v *= c1);
            x[j] += c0;
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_columns(&cols)?)
}

/// Operators `β(1 − β(T+β)⁻¹)` of the Yosida–Moreau forms.
pub fn yosida_family(field: &FieldOfHilbert, fam: &OperatorFamily, beta: f64) -> Result<BoundedFamily> {
    bounded_from_fibers(field, fam, |f| shifted_resolvent_matrix(f, beta, beta, -beta * beta))
}

/// Resolvents `(T+λ)⁻¹` as a bounded family.
pub fn resolvent_family(field: &FieldOfHilbert, fam: &OperatorFamily, lambda: f64) -> Result<BoundedFamily> {
    bounded_from_fibers(field, fam, |f| shifted_resolvent_matrix(f, lambda, 0.0, 1.0))
}

/// Meta-strong convergence of the Yosida–Moreau operators for each β.
pub fn yosida_convergence_check(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    battery: &SectionBattery,
    ident: &Identification,
    betas: &[f64],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    check_family(field, fam, battery, ident)?;
    positive_battery("beta", betas)?;
    let mut b = ReportBuilder::new("yosida", rule);
    b.param("betas", betas);
    let mut per_beta = BTreeMap::new();
    for &beta in betas {
        let yf = yosida_family(field, fam, beta)?;
        let ms = meta_strong_check(field, &yf, battery, ident, rule)?;
        for t in ms.traces {
            let last = ms
                .witnesses
                .as_ref()
                .and_then(|w| w.iter().find(|x| x.key == t.key))
                .map(|x| x.vector.clone())
                .unwrap_or_default();
            b.push_trace(format!("beta={}/{}", key_num(beta), t.key), &t.labels, t.values, t.passed, last);
        }
        per_beta.insert(key_num(beta), ms.verdict);
    }
    let all = per_beta.values().all(|v| v.is_pass());
    b.param("beta_verdicts", &per_beta);
    Ok(b.finish(Verdict::from_bool(all)))
}

/// Runs the four equivalent checks with their default probes.
#[allow(clippy::too_many_arguments)]
pub fn equivalence_matrix(
    field: &FieldOfHilbert,
    fam: &OperatorFamily,
    battery: &SectionBattery,
    ident: &Identification,
    recovery_core: &[Vec<f64>],
    g_probes: &[Vec<f64>],
    seed: u64,
    rule: DecayRule,
) -> Result<EquivalenceMatrix> {
    let srs = strong_resolvent_check(field, fam, battery, ident, &DEFAULT_LAMBDAS, rule)?;
    let probes = default_mosco_probes(field, fam, battery, ident, seed)?;
    let core = transport_recovery(field, ident, recovery_core)?;
    let mosco = mosco_check(field, fam, battery, ident, &core, &probes, rule)?;
    let g = g_convergence_check(
        field,
        GFamily::Operator(fam),
        ident,
        g_probes,
        &|z| resolvent_recovery(field, fam, ident, z),
        None,
        rule,
    )?;
    let fcalc = functional_calculus_convergence_check(field, fam, battery, ident, &PhiFunction::battery(), rule)?;
    Ok(EquivalenceMatrix::from_verdicts(srs.verdict, mosco.verdict, g.verdict, fcalc.verdict))
}

/// Dimension guard shared by callers that assemble probes by hand.
pub fn check_probe(field: &FieldOfHilbert, p: &ProbeSequence) -> Result<()> {
    field.check_values(&p.values, &p.name)?;
    dim_check(&p.name, field.limit_fiber().dim(), p.limit.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::BaseSequence;

    fn base(k: usize) -> BaseSequence {
        BaseSequence::new((1..=k).map(|i| 1.0 / i as f64).collect(), 0.0).unwrap()
    }

    fn laplacian(n: usize) -> SymMatrix {
        SymMatrix::from_lower_fn(n, |i, j| match i - j {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        })
        .unwrap()
    }

    /// Same form at every label: everything converges trivially.
    fn constant_setup() -> (FieldOfHilbert, OperatorFamily, SectionBattery, Identification) {
        let n = 5;
        let k = 9;
        let field = FieldOfHilbert::constant(base(k), SymMatrix::identity(n).unwrap()).unwrap();
        let f = FormFiber::new(laplacian(n), SymMatrix::identity(n).unwrap()).unwrap();
        let fam = OperatorFamily::new(&field, vec![f.clone(); k], f).unwrap();
        let battery = SectionBattery::new(vec![
            Section::constant(k, vec![1.0, 0.0, 0.0, 0.0, 0.0]),
            Section::constant(k, vec![1.0, 2.0, 3.0, 2.0, 1.0]),
        ])
        .unwrap();
        let ident = Identification::identity(&field).unwrap();
        (field, fam, battery, ident)
    }

    /// `A_k = (1 + 1/k)·A`, limit `A`.
    fn scaled_setup(k: usize) -> (FieldOfHilbert, OperatorFamily, SectionBattery, Identification) {
        let n = 4;
        let field = FieldOfHilbert::constant(base(k), SymMatrix::identity(n).unwrap()).unwrap();
        let a = SymMatrix::identity(n).unwrap();
        let fibers = (1..=k)
            .map(|i| FormFiber::new(a.scaled(1.0 + 1.0 / i as f64), SymMatrix::identity(n).unwrap()).unwrap())
            .collect();
        let fam = OperatorFamily::new(&field, fibers, FormFiber::new(a, SymMatrix::identity(n).unwrap()).unwrap()).unwrap();
        let battery = SectionBattery::new(vec![Section::constant(k, vec![1.0, -1.0, 0.5, 2.0])]).unwrap();
        let ident = Identification::identity(&field).unwrap();
        (field, fam, battery, ident)
    }

    #[test]
    fn constant_family_passes_everything() {
        let (field, fam, battery, ident) = constant_setup();
        let rule = DecayRule::default();
        let srs = strong_resolvent_check(&field, &fam, &battery, &ident, &DEFAULT_LAMBDAS, rule).unwrap();
        assert_eq!(srs.verdict, Verdict::Pass);
        assert!(srs.max_final_value() <= 1e-15);
        let phis = PhiFunction::battery();
        let fc = functional_calculus_convergence_check(&field, &fam, &battery, &ident, &phis, rule).unwrap();
        assert_eq!(fc.verdict, Verdict::Pass);
        let si = spectral_inclusion_check(&field, &fam, 10.0, srs.verdict, rule).unwrap();
        assert_eq!(si.verdict, Verdict::Pass);
        assert!(si.traces.iter().all(|t| t.values.iter().all(|d| *d == 0.0)));
        let y = yosida_convergence_check(&field, &fam, &battery, &ident, &DEFAULT_BETAS, rule).unwrap();
        assert_eq!(y.verdict, Verdict::Pass);
        let core: Vec<Vec<f64>> = battery.sections().iter().map(|s| s.limit.clone()).collect();
        let m = equivalence_matrix(&field, &fam, &battery, &ident, &core, &core, 42, rule).unwrap();
        assert!(m.srs_pass && m.agree());
    }

    #[test]
    fn scaled_family_g_and_duality_pass() {
        let (field, fam, _battery, ident) = scaled_setup(40);
        let rule = DecayRule::new(0.05);
        let probes = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.3, 0.3, -1.0, 0.0]];
        let r = inverse_g_duality_check(&field, &fam, None, &ident, &probes, rule).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.params["forward_verdict"], serde_json::json!("pass"));
        assert_eq!(r.params["inverse_verdict"], serde_json::json!("pass"));
        // A mismatched inverse family: its limit is scaled by 2.
        let inv = inverse_family(&fam).unwrap();
        let bad = OperatorFamily {
            limit: FormFiber::new(inv.limit.stiffness().scaled(2.0), inv.limit.mass().clone()).unwrap(),
            ..inv
        };
        let r = inverse_g_duality_check(&field, &fam, Some(&bad), &ident, &probes, rule).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn singular_family_is_not_invertible() {
        let (field, fam, _, ident) = constant_setup();
        let zero = fam.map_stiffness(|f| Ok(f.stiffness().scaled(0.0))).unwrap();
        let r = inverse_g_duality_check(&field, &zero, None, &ident, &[vec![1.0; 5]], DecayRule::default());
        assert!(matches!(r, Err(Error::NotInvertible { .. })));
    }

    #[test]
    fn bounded_cases() {
        let k = 30;
        let n = 3;
        let field = FieldOfHilbert::constant(base(k), SymMatrix::identity(n).unwrap()).unwrap();
        let ident = Identification::identity(&field).unwrap();
        let battery = SectionBattery::new(vec![Section::constant(k, vec![1.0, 2.0, -1.0])]).unwrap();
        let rule = DecayRule::new(0.05);
        let ops = (1..=k).map(|i| Matrix::from_diag(&vec![1.0 + 1.0 / i as f64; n])).collect();
        let bf = BoundedFamily::new(&field, ops, Matrix::identity(n), true).unwrap();
        assert_eq!(meta_strong_check(&field, &bf, &battery, &ident, rule).unwrap().verdict, Verdict::Pass);
        let g = g_convergence_check(
            &field,
            GFamily::Bounded(&bf),
            &ident,
            &[vec![1.0, 0.0, 0.0]],
            &|z| ident.transport_section(&field, z),
            Some(&battery),
            rule,
        )
        .unwrap();
        assert_eq!(g.verdict, Verdict::Pass);
        assert_eq!(g.params["agrees_with_meta_strong"], serde_json::json!(true));
        let lsc = lower_semicontinuity_opnorm_check(&field, &bf, &battery, &ident, rule).unwrap();
        assert_eq!(lsc.verdict, Verdict::Pass);
        assert!(lsc.metrics["margin"] >= 0.0);

        // Rotating rank-one projections onto e_{k mod n}: no limit.
        let ops = (0..k)
            .map(|i| {
                let mut p = Matrix::zeros(n, n);
                p.set(i % n, i % n, 1.0);
                p
            })
            .collect();
        let rot = BoundedFamily::new(&field, ops, Matrix::zeros(n, n), true).unwrap();
        assert_eq!(meta_strong_check(&field, &rot, &battery, &ident, rule).unwrap().verdict, Verdict::Fail);
        assert!(matches!(
            lower_semicontinuity_opnorm_check(&field, &rot, &battery, &ident, rule),
            Err(Error::PreconditionFailed(_))
        ));
    }

    #[test]
    fn missing_recovery_is_an_error() {
        let (field, fam, battery, ident) = constant_setup();
        let r = mosco_check(&field, &fam, &battery, &ident, &[], &[], DecayRule::default());
        assert!(matches!(r, Err(Error::MissingRecovery)));
        let r = g_convergence_check(&field, GFamily::Operator(&fam), &ident, &[], &|_| unreachable!(), None, DecayRule::default());
        assert!(matches!(r, Err(Error::MissingRecovery)));
    }

    #[test]
    fn spectral_inclusion_is_skipped_without_srs() {
        let (field, fam, _, _) = constant_setup();
        let r = spectral_inclusion_check(&field, &fam, 10.0, Verdict::Fail, DecayRule::default()).unwrap();
        assert_eq!(r.verdict, Verdict::NotApplicable);
        assert!(r.witnesses.is_none());
    }

    #[test]
    fn mosco_m1_flags_energy_collapse() {
        // Energies vanish along the base while the limit form is the identity.
        let k = 9;
        let n = 2;
        let field = FieldOfHilbert::constant(base(k), SymMatrix::identity(n).unwrap()).unwrap();
        let zero = FormFiber::new(SymMatrix::zeros(n).unwrap(), SymMatrix::identity(n).unwrap()).unwrap();
        let one = FormFiber::new(SymMatrix::identity(n).unwrap(), SymMatrix::identity(n).unwrap()).unwrap();
        let fam = OperatorFamily::new(&field, vec![zero; k], one).unwrap();
        let battery = SectionBattery::new(vec![Section::constant(k, vec![1.0, 0.0])]).unwrap();
        let ident = Identification::identity(&field).unwrap();
        let probe = ProbeSequence { name: "e1".into(), values: vec![vec![1.0, 0.0]; k], limit: vec![1.0, 0.0] };
        let core = transport_recovery(&field, &ident, &[vec![0.0, 1.0]]).unwrap();
        let r = mosco_check(&field, &fam, &battery, &ident, &core, &[probe], DecayRule::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!((r.metrics["m1_margin/e1"] + 0.5).abs() < 1e-15);
    }
}
