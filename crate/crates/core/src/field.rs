//! Fields of finite-dimensional Hilbert spaces over a sampled base: fibers,
//! sections, identifications, and the strong/weak convergence testers.

use crate::error::{dim_check, Error, Result};
use crate::linalg::{dot, gram_schmidt_m, sub, Cholesky, LinalgError, Matrix, SymMatrix};
use crate::verdict::{liminf, ConvergenceReport, DecayRule, ReportBuilder, Verdict};
use serde::{Deserialize, Serialize};

/// Sampled parameter values `t_1, …, t_K` (strictly monotone) plus the limit label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BaseRaw", into = "BaseRaw")]
pub struct BaseSequence {
    labels: Vec<f64>,
    limit: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseRaw {
    labels: Vec<f64>,
    limit: f64,
}

impl TryFrom<BaseRaw> for BaseSequence {
    type Error = Error;
    fn try_from(r: BaseRaw) -> Result<Self> {
        BaseSequence::new(r.labels, r.limit)
    }
}

impl From<BaseSequence> for BaseRaw {
    fn from(b: BaseSequence) -> Self {
        BaseRaw { labels: b.labels, limit: b.limit }
    }
}

impl BaseSequence {
    pub fn new(labels: Vec<f64>, limit: f64) -> Result<Self> {
        if labels.len() < 3 {
            return Err(Error::InvalidBase(format!("need at least 3 labels, got {}", labels.len())));
        }
        if labels.iter().chain(std::iter::once(&limit)).any(|x| !x.is_finite()) {
            return Err(Error::InvalidBase("labels must be finite".into()));
        }
        let increasing = labels.windows(2).all(|w| w[0] < w[1]);
        let decreasing = labels.windows(2).all(|w| w[0] > w[1]);
        if !increasing && !decreasing {
            return Err(Error::InvalidBase("labels must be strictly monotone".into()));
        }
        if labels.contains(&limit) {
            return Err(Error::InvalidBase("limit label coincides with a sample".into()));
        }
        Ok(Self { labels, limit })
    }

    /// `t_k = 2^{-k}`, `k = 1..=k_max`, limit 0.
    pub fn dyadic(k_max: usize) -> Result<Self> {
        Self::new((1..=k_max).map(|k| 0.5f64.powi(k as i32)).collect(), 0.0)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }
}

/// A fiber `ℝⁿ` with inner product `⟨u,v⟩ = uᵀ M v`, `M` SPD.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertFiber {
    mass: SymMatrix,
}

impl HilbertFiber {
    pub fn new(mass: SymMatrix) -> Result<Self> {
        Cholesky::factor(&mass)?;
        Ok(Self { mass })
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn mass(&self) -> &SymMatrix {
        &self.mass
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.bilinear(u, v)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }
}

/// Fibers at every sample label and at the limit.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldOfHilbert {
    base: BaseSequence,
    fibers: Vec<HilbertFiber>,
    limit: HilbertFiber,
}

impl FieldOfHilbert {
    pub fn new(base: BaseSequence, fibers: Vec<HilbertFiber>, limit: HilbertFiber) -> Result<Self> {
        dim_check("field fibers", base.len(), fibers.len())?;
        Ok(Self { base, fibers, limit })
    }

    /// Same mass at every label.
    pub fn constant(base: BaseSequence, mass: SymMatrix) -> Result<Self> {
        let fiber = HilbertFiber::new(mass)?;
        let fibers = vec![fiber.clone(); base.len()];
        Self::new(base, fibers, fiber)
    }

    pub fn base(&self) -> &BaseSequence {
        &self.base
    }

    pub fn labels(&self) -> &[f64] {
        self.base.labels()
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    pub fn fiber(&self, k: usize) -> &HilbertFiber {
        &self.fibers[k]
    }

    pub fn limit_fiber(&self) -> &HilbertFiber {
        &self.limit
    }

    pub fn dims(&self) -> Vec<usize> {
        self.fibers.iter().map(HilbertFiber::dim).collect()
    }

    /// Every mass matrix multiplied by `c`.
    pub fn with_scaled_mass(&self, c: f64) -> Result<Self> {
        let scale = |f: &HilbertFiber| HilbertFiber::new(f.mass.scaled(c));
        let fibers = self.fibers.iter().map(scale).collect::<Result<Vec<_>>>()?;
        Self::new(self.base.clone(), fibers, scale(&self.limit)?)
    }

    fn check_vector(&self, k: usize, v: &[f64], what: &str) -> Result<()> {
        dim_check(&format!("{what} at label index {k}"), self.fibers[k].dim(), v.len())
    }

    fn check_limit_vector(&self, v: &[f64], what: &str) -> Result<()> {
        dim_check(&format!("{what} at the limit label"), self.limit.dim(), v.len())
    }

    pub fn check_values(&self, values: &[Vec<f64>], what: &str) -> Result<()> {
        dim_check(&format!("{what} label count"), self.len(), values.len())?;
        for (k, v) in values.iter().enumerate() {
            self.check_vector(k, v, what)?;
        }
        Ok(())
    }

    pub fn check_section(&self, s: &Section, what: &str) -> Result<()> {
        self.check_values(&s.values, what)?;
        self.check_limit_vector(&s.limit, what)
    }
}

/// A vector in every fiber, including the limit fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Section {
    pub values: Vec<Vec<f64>>,
    pub limit: Vec<f64>,
}

impl Section {
    pub fn new(values: Vec<Vec<f64>>, limit: Vec<f64>) -> Self {
        Self { values, limit }
    }

    /// The same vector at every label (fibers of equal dimension).
    pub fn constant(len: usize, v: Vec<f64>) -> Self {
        Self { values: vec![v.clone(); len], limit: v }
    }
}

/// Values along the sample labels, with or without a declared limit value.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub values: Vec<Vec<f64>>,
    pub limit: Option<Vec<f64>>,
}

/// Finite nonempty set of test sections; their limit values span the test core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Section>", into = "Vec<Section>")]
pub struct SectionBattery {
    sections: Vec<Section>,
}

impl TryFrom<Vec<Section>> for SectionBattery {
    type Error = Error;
    fn try_from(sections: Vec<Section>) -> Result<Self> {
        SectionBattery::new(sections)
    }
}

impl From<SectionBattery> for Vec<Section> {
    fn from(b: SectionBattery) -> Self {
        b.sections
    }
}

impl SectionBattery {
    pub fn new(sections: Vec<Section>) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::InvalidParameter("section battery must be nonempty".into()));
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn validate(&self, field: &FieldOfHilbert) -> Result<()> {
        for (i, s) in self.sections.iter().enumerate() {
            field.check_section(s, &format!("battery section {i}"))?;
        }
        Ok(())
    }
}

/// Maps from a fixed core coefficient space into every fiber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Identification {
    pub core_dim: usize,
    pub maps: Vec<Matrix>,
    pub limit_map: Matrix,
}

impl Identification {
    /// Identity maps on a field whose fibers all share one dimension.
    pub fn identity(field: &FieldOfHilbert) -> Result<Self> {
        let n = field.limit_fiber().dim();
        for (k, d) in field.dims().into_iter().enumerate() {
            dim_check(&format!("identity identification at label index {k}"), n, d)?;
        }
        Ok(Self { core_dim: n, maps: vec![Matrix::identity(n); field.len()], limit_map: Matrix::identity(n) })
    }

    pub fn validate(&self, field: &FieldOfHilbert) -> Result<()> {
        dim_check("identification label count", field.len(), self.maps.len())?;
        for (k, m) in self.maps.iter().enumerate() {
            dim_check(&format!("identification rows at label index {k}"), field.fiber(k).dim(), m.rows)?;
            dim_check(&format!("identification columns at label index {k}"), self.core_dim, m.cols)?;
            dim_check(&format!("identification data at label index {k}"), m.rows * m.cols, m.data.len())?;
        }
        dim_check("identification rows at the limit", field.limit_fiber().dim(), self.limit_map.rows)?;
        dim_check("identification columns at the limit", self.core_dim, self.limit_map.cols)?;
        dim_check("identification data at the limit", self.limit_map.rows * self.limit_map.cols, self.limit_map.data.len())
    }

    /// `Φ_k c`.
    pub fn embed(&self, k: usize, c: &[f64]) -> Vec<f64> {
        self.maps[k].matvec(c)
    }

    pub fn embed_limit(&self, c: &[f64]) -> Vec<f64> {
        self.limit_map.matvec(c)
    }

    /// Core coefficients of a limit-fiber vector: the least-squares fit in the
    /// limit inner product (exact when the limit map is the identity).
    pub fn coefficients(&self, field: &FieldOfHilbert, w: &[f64]) -> Result<Vec<f64>> {
        field.check_limit_vector(w, "transported vector")?;
        if self.limit_map.is_identity() {
            return Ok(w.to_vec());
        }
        let mass = field.limit_fiber().mass();
        let cols: Vec<Vec<f64>> = (0..self.core_dim).map(|j| self.limit_map.column(j)).collect();
        let mcols: Vec<Vec<f64>> = cols.iter().map(|c| mass.matvec(c)).collect();
        let gram = SymMatrix::from_lower_fn(self.core_dim, |i, j| dot(&cols[i], &mcols[j]))?;
        let rhs: Vec<f64> = mcols.iter().map(|mc| dot(mc, w)).collect();
        Ok(Cholesky::factor(&gram)?.solve(&rhs)?)
    }

    /// Carries a limit-fiber vector into the fiber at label index `k`.
    pub fn transport(&self, field: &FieldOfHilbert, k: usize, w: &[f64]) -> Result<Vec<f64>> {
        let c = self.coefficients(field, w)?;
        Ok(self.embed(k, &c))
    }

    /// The section through `w` obtained by transporting it to every label.
    pub fn transport_section(&self, field: &FieldOfHilbert, w: &[f64]) -> Result<Section> {
        let c = self.coefficients(field, w)?;
        let values = (0..self.maps.len()).map(|k| self.embed(k, &c)).collect();
        Ok(Section::new(values, self.embed_limit(&c)))
    }
}

/// Norms of a section along the base, with the limit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormTrace {
    pub norms: Vec<(f64, f64)>,
    pub limit_norm: f64,
    pub converged: bool,
}

pub fn section_norm_trace(field: &FieldOfHilbert, s: &Section, rule: DecayRule) -> Result<NormTrace> {
    field.check_section(s, "section")?;
    let limit_norm = field.limit_fiber().norm(&s.limit);
    let norms: Vec<(f64, f64)> =
        field.labels().iter().zip(&s.values).enumerate().map(|(k, (&t, v))| (t, field.fiber(k).norm(v))).collect();
    let dev: Vec<f64> = norms.iter().map(|(_, n)| (n - limit_norm).abs()).collect();
    Ok(NormTrace { converged: rule.passes(&dev), norms, limit_norm })
}

/// `‖values(t_k) − reference(t_k)‖ → 0`.
pub fn strong_convergence_check(
    field: &FieldOfHilbert,
    values: &Sequence,
    reference: &Section,
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    field.check_values(&values.values, "values")?;
    field.check_section(reference, "reference")?;
    let limit = values.limit.as_ref().ok_or(Error::MissingLimitValue)?;
    field.check_limit_vector(limit, "values")?;
    let lim_gap = field.limit_fiber().norm(&sub(limit, &reference.limit));
    if lim_gap > rule.tol {
        return Err(Error::PreconditionFailed(format!(
            "reference does not pass through the limit value (gap {lim_gap:e})"
        )));
    }
    let mut b = ReportBuilder::new("strong_convergence", rule);
    let mut devs = Vec::with_capacity(field.len());
    let mut last = Vec::new();
    for (k, (v, r)) in values.values.iter().zip(&reference.values).enumerate() {
        let d = sub(v, r);
        devs.push(field.fiber(k).norm(&d));
        last = d;
    }
    b.decay_trace("deviation".into(), field.labels(), devs, last);
    Ok(b.finish_by_traces())
}

fn weak_traces(
    b: &mut ReportBuilder,
    field: &FieldOfHilbert,
    values: &[Vec<f64>],
    battery: &SectionBattery,
    limit: &[f64],
) -> bool {
    let mut ok = true;
    for (i, g) in battery.sections().iter().enumerate() {
        let target = field.limit_fiber().inner(limit, &g.limit);
        let devs: Vec<f64> =
            values.iter().enumerate().map(|(k, v)| (field.fiber(k).inner(v, &g.values[k]) - target).abs()).collect();
        let last = values.last().cloned().unwrap_or_default();
        ok &= b.decay_trace(format!("section={i:03}"), field.labels(), devs, last);
    }
    ok
}

fn check_weak_inputs(field: &FieldOfHilbert, values: &[Vec<f64>], battery: &SectionBattery, limit: &[f64]) -> Result<()> {
    field.check_values(values, "values")?;
    field.check_limit_vector(limit, "limit")?;
    battery.validate(field)
}

/// `⟨values(t_k), g(t_k)⟩ → ⟨limit, g(t_∞)⟩` for every battery section `g`.
pub fn weak_convergence_check(
    field: &FieldOfHilbert,
    values: &[Vec<f64>],
    battery: &SectionBattery,
    limit: &[f64],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    check_weak_inputs(field, values, battery, limit)?;
    let mut b = ReportBuilder::new("weak_convergence", rule);
    weak_traces(&mut b, field, values, battery, limit);
    Ok(b.finish_by_traces())
}

/// Norm lower semicontinuity along a weakly convergent sequence:
/// `‖limit‖ ≤ liminf ‖values(t_k)‖ + tol`; the margin is recorded.
pub fn lsc_norm_check(
    field: &FieldOfHilbert,
    values: &[Vec<f64>],
    battery: &SectionBattery,
    limit: &[f64],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    let weak = weak_convergence_check(field, values, battery, limit, rule)?;
    if !weak.verdict.is_pass() {
        return Err(Error::PreconditionFailed("input does not converge weakly against the battery".into()));
    }
    let norms: Vec<f64> = values.iter().enumerate().map(|(k, v)| field.fiber(k).norm(v)).collect();
    let limit_norm = field.limit_fiber().norm(limit);
    let margin = liminf(&norms) - limit_norm;
    let ok = margin >= -rule.tol;
    let mut b = ReportBuilder::new("lsc_norm", rule);
    b.metric("margin", margin).metric("limit_norm", limit_norm);
    b.push_trace("norm".into(), field.labels(), norms, ok, limit.to_vec());
    Ok(b.finish(Verdict::from_bool(ok)))
}

/// Weak convergence plus convergence of norms implies strong convergence.
/// Inputs whose norms do not converge are reported as not applicable.
pub fn mw_norm_strong_check(
    field: &FieldOfHilbert,
    values: &[Vec<f64>],
    battery: &SectionBattery,
    limit: &[f64],
    ident: &Identification,
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    check_weak_inputs(field, values, battery, limit)?;
    let mut b = ReportBuilder::new("weak_and_norm_imply_strong", rule);
    let weak_ok = weak_traces(&mut b, field, values, battery, limit);
    let limit_norm = field.limit_fiber().norm(limit);
    let norm_gap: Vec<f64> =
        values.iter().enumerate().map(|(k, v)| (field.fiber(k).norm(v) - limit_norm).abs()).collect();
    let norms_ok = rule.passes(&norm_gap);
    b.push_trace("norm_gap".into(), field.labels(), norm_gap, true, vec![]);
    b.param("weak_precondition", weak_ok).param("norm_precondition", norms_ok);
    if !(weak_ok && norms_ok) {
        return Ok(b.finish(Verdict::NotApplicable));
    }
    let reference = ident.transport_section(field, limit)?;
    let mut devs = Vec::with_capacity(values.len());
    let mut last = Vec::new();
    for (k, v) in values.iter().enumerate() {
        let d = sub(v, &reference.values[k]);
        devs.push(field.fiber(k).norm(&d));
        last = d;
    }
    let ok = b.decay_trace("strong_deviation".into(), field.labels(), devs, last);
    Ok(b.finish(Verdict::from_bool(ok)))
}

/// Transports `seeds` to every label and orthonormalizes fiberwise.
pub fn build_frame(field: &FieldOfHilbert, seeds: &[Vec<f64>], ident: &Identification) -> Result<Vec<Section>> {
    let mut per_label: Vec<Vec<Vec<f64>>> = Vec::with_capacity(field.len());
    for k in 0..field.len() {
        let moved = seeds.iter().map(|s| ident.transport(field, k, s)).collect::<Result<Vec<_>>>()?;
        let ortho = gram_schmidt_m(&moved, field.fiber(k).mass()).map_err(|e| rank_error(e, field.labels()[k]))?;
        per_label.push(ortho);
    }
    for s in seeds {
        field.check_limit_vector(s, "seed")?;
    }
    let limit = gram_schmidt_m(seeds, field.limit_fiber().mass()).map_err(|e| rank_error(e, field.base().limit()))?;
    Ok((0..seeds.len())
        .map(|j| Section::new(per_label.iter().map(|f| f[j].clone()).collect(), limit[j].clone()))
        .collect())
}

fn rank_error(e: LinalgError, label: f64) -> Error {
    match e {
        LinalgError::RankDeficient { .. } => Error::RankDeficient { label: label.to_string() },
        other => other.into(),
    }
}

/// `P(x) = Σ_j ⟨·, f_j(x)⟩ g_j(x)` at every label.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialIsometry {
    pub maps: Vec<Matrix>,
    pub limit: Matrix,
}

const FRAME_TOL: f64 = 1e-10;

fn gram_residual(mass: &SymMatrix, frame: &[&Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in frame.iter().enumerate() {
        let ma = mass.matvec(a);
        for (j, b) in frame.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot(&ma, b) - target).abs());
        }
    }
    worst
}

fn isometry_matrix(mass: &SymMatrix, f: &[&Vec<f64>], g: &[&Vec<f64>]) -> Matrix {
    let n_out = g.first().map_or(0, |v| v.len());
    let n_in = mass.dim();
    let mut p = Matrix::zeros(n_out, n_in);
    for (fj, gj) in f.iter().zip(g) {
        let mf = mass.matvec(fj);
        for (r, gr) in gj.iter().enumerate() {
            for (c, mc) in mf.iter().enumerate() {
                p.data[r * n_in + c] += gr * mc;
            }
        }
    }
    p
}

pub fn build_partial_isometry(field: &FieldOfHilbert, frame_f: &[Section], frame_g: &[Section]) -> Result<PartialIsometry> {
    dim_check("frame sizes", frame_f.len(), frame_g.len())?;
    for s in frame_f.iter().chain(frame_g) {
        field.check_section(s, "frame section")?;
    }
    let check = |mass: &SymMatrix, frame: &[&Vec<f64>], label: f64| -> Result<()> {
        let residual = gram_residual(mass, frame);
        if residual > FRAME_TOL {
            return Err(Error::FrameNotOrthonormal { label: label.to_string(), residual });
        }
        Ok(())
    };
    let mut maps = Vec::with_capacity(field.len());
    for k in 0..field.len() {
        let f: Vec<&Vec<f64>> = frame_f.iter().map(|s| &s.values[k]).collect();
        let g: Vec<&Vec<f64>> = frame_g.iter().map(|s| &s.values[k]).collect();
        let mass = field.fiber(k).mass();
        check(mass, &f, field.labels()[k])?;
        check(mass, &g, field.labels()[k])?;
        maps.push(isometry_matrix(mass, &f, &g));
    }
    let f: Vec<&Vec<f64>> = frame_f.iter().map(|s| &s.limit).collect();
    let g: Vec<&Vec<f64>> = frame_g.iter().map(|s| &s.limit).collect();
    let mass = field.limit_fiber().mass();
    check(mass, &f, field.base().limit())?;
    check(mass, &g, field.base().limit())?;
    Ok(PartialIsometry { maps, limit: isometry_matrix(mass, &f, &g) })
}

/// Least-squares slope of `log d` against `log |t − t_∞|` over positive samples.
pub fn fit_order(labels: &[f64], limit: f64, values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = labels
        .iter()
        .zip(values)
        .filter(|(_, &d)| d > 0.0 && d.is_finite())
        .map(|(&t, &d)| ((t - limit).abs().ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `|‖Φ_t u‖_t − ‖Φ_∞ u‖_∞| → 0` for each core sample `u`.
pub fn test_identification(
    field: &FieldOfHilbert,
    ident: &Identification,
    core_samples: &[Vec<f64>],
    rule: DecayRule,
) -> Result<ConvergenceReport> {
    if core_samples.is_empty() {
        return Err(Error::InvalidParameter("no core samples".into()));
    }
    ident.validate(field)?;
    let mut b = ReportBuilder::new("identification", rule);
    for (i, u) in core_samples.iter().enumerate() {
        dim_check("core sample", ident.core_dim, u.len())?;
        let limit_norm = field.limit_fiber().norm(&ident.embed_limit(u));
        let devs: Vec<f64> =
            (0..field.len()).map(|k| (field.fiber(k).norm(&ident.embed(k, u)) - limit_norm).abs()).collect();
        if let Some(order) = fit_order(field.labels(), field.base().limit(), &devs) {
            b.metric(&format!("order_sample={i:03}"), order);
        }
        b.decay_trace(format!("sample={i:03}"), field.labels(), devs, u.clone());
    }
    Ok(b.finish_by_traces())
}
