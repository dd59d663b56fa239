//! Built-in scenarios on `[0, 1]`: finite-difference forms with lumped mass,
//! fine-grid surrogates for continuum limits, and the expected verdict of
//! every check. Scenarios round-trip through JSON.

use crate::error::{dim_check, Error, Result};
use crate::field::{BaseSequence, FieldOfHilbert, HilbertFiber, Identification, Section, SectionBattery};
use crate::forms::{BoundedFamily, FormFiber, FormFiberData, OperatorFamily};
use crate::linalg::{LinalgError, Matrix, SymMatrix};
use crate::runner::CheckKind;
use crate::verdict::Verdict;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Interior nodes only; boundary values are zero.
    Dirichlet,
    /// All nodes, half mass weight at both ends.
    Neumann,
    /// Nodes `i/n`, `i = 1..=n`, no form attached.
    Nodal,
}

/// Discretization carrier: cells and boundary handling per label and at the limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cells: Vec<usize>,
    pub boundary: Vec<Boundary>,
    pub limit_cells: usize,
    pub limit_boundary: Boundary,
}

/// Uniform grid on `[0, 1]` with `cells` cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub cells: usize,
    pub boundary: Boundary,
}

impl Grid {
    pub fn new(cells: usize, boundary: Boundary) -> Self {
        Self { cells, boundary }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.cells as f64
    }

    pub fn dim(&self) -> usize {
        match self.boundary {
            Boundary::Dirichlet => self.cells - 1,
            Boundary::Neumann => self.cells + 1,
            Boundary::Nodal => self.cells,
        }
    }

    /// Grid index (node `x = index/cells`) of a degree of freedom.
    pub fn node_index(&self, dof: usize) -> usize {
        match self.boundary {
            Boundary::Neumann => dof,
            Boundary::Dirichlet | Boundary::Nodal => dof + 1,
        }
    }

    fn dof_of(&self, index: usize) -> Option<usize> {
        match self.boundary {
            Boundary::Neumann => Some(index),
            Boundary::Dirichlet | Boundary::Nodal => (index >= 1 && index <= self.dim()).then(|| index - 1),
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.dim()).map(|d| self.node_index(d) as f64 * self.h()).collect()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes().into_iter().map(f).collect()
    }

    /// Lumped mass `h·w(x_i)`, halved at Neumann end nodes.
    pub fn mass(&self, w: impl Fn(f64) -> f64) -> Result<SymMatrix> {
        let n = self.dim();
        let diag: Vec<f64> = self
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let end = self.boundary == Boundary::Neumann && (i == 0 || i == n - 1);
                self.h() * w(x) * if end { 0.5 } else { 1.0 }
            })
            .collect();
        Ok(SymMatrix::from_diag(&diag)?)
    }

    /// `Σ_edges c(x_mid)·(u_{e+1} − u_e)² / h` with zero boundary values for Dirichlet.
    pub fn stiffness(&self, c: impl Fn(f64) -> f64) -> Result<SymMatrix> {
        if self.boundary == Boundary::Nodal {
            return Err(Error::InvalidParameter("nodal grids carry no stiffness".into()));
        }
        let mut a = SymMatrix::zeros(self.dim())?;
        for e in 0..self.cells {
            let w = c((e as f64 + 0.5) * self.h()) / self.h();
            let (l, r) = (self.dof_of(e), self.dof_of(e + 1));
            if let Some(l) = l {
                a.add_to(l, l, w);
            }
            if let Some(r) = r {
                a.add_to(r, r, w);
            }
            if let (Some(l), Some(r)) = (l, r) {
                a.add_to(l, r, -w);
            }
        }
        Ok(a)
    }
}

/// Nodal sampling of a fine-grid vector at coarse nodes. Coarse nodes that
/// fall on an eliminated Dirichlet boundary take the nearest interior value.
pub fn sampling_map(coarse: &Grid, fine: &Grid) -> Result<Matrix> {
    if !fine.cells.is_multiple_of(coarse.cells) {
        return Err(Error::InvalidParameter(format!(
            "limit grid ({} cells) must refine the grid with {} cells",
            fine.cells, coarse.cells
        )));
    }
    let r = fine.cells / coarse.cells;
    let mut m = Matrix::zeros(coarse.dim(), fine.dim());
    for i in 0..coarse.dim() {
        let mut j = coarse.node_index(i) * r;
        if fine.boundary == Boundary::Dirichlet {
            j = j.clamp(1, fine.cells - 1);
        }
        let col = fine.dof_of(j).ok_or_else(|| Error::InvalidParameter("coarse node outside fine grid".into()))?;
        m.set(i, col, 1.0);
    }
    Ok(m)
}

/// A named, self-contained test case.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub params: BTreeMap<String, Value>,
    pub grid: GridSpec,
    pub tol: f64,
    pub spectral_cutoff: f64,
    pub field: FieldOfHilbert,
    pub family: Option<OperatorFamily>,
    pub bounded: Option<BoundedFamily>,
    pub battery: SectionBattery,
    pub identification: Identification,
    pub recovery_core: Vec<Vec<f64>>,
    pub g_probes: Vec<Vec<f64>>,
    pub expected: BTreeMap<CheckKind, Verdict>,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymData {
    dim: usize,
    lower: Vec<f64>,
}

impl SymData {
    fn from_sym(m: &SymMatrix) -> Self {
        Self { dim: m.dim(), lower: m.to_lower() }
    }

    fn into_sym(self, context: &str) -> Result<SymMatrix> {
        dim_check(context, self.dim * (self.dim + 1) / 2, self.lower.len())?;
        Ok(SymMatrix::from_lower(self.dim, &self.lower)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyData {
    fibers: Vec<FormFiberData>,
    limit: FormFiberData,
}

/// On-disk layout; `identification: null` stands for identity maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    description: String,
    params: BTreeMap<String, Value>,
    grid: GridSpec,
    tol: f64,
    spectral_cutoff: f64,
    base: BaseSequence,
    masses: Vec<SymData>,
    limit_mass: SymData,
    family: Option<FamilyData>,
    bounded: Option<BoundedFamily>,
    battery: Vec<Section>,
    identification: Option<Identification>,
    recovery_core: Vec<Vec<f64>>,
    g_probes: Vec<Vec<f64>>,
    expected: BTreeMap<CheckKind, Verdict>,
    diagnostics: BTreeMap<String, f64>,
}

fn is_identity_ident(ident: &Identification, field: &FieldOfHilbert) -> bool {
    Identification::identity(field).is_ok_and(|id| &id == ident)
}

fn fiber_from_data(d: FormFiberData, context: &str) -> Result<FormFiber> {
    d.into_fiber().map_err(|e| match e {
        Error::Linalg(LinalgError::DimensionMismatch { expected, found }) => {
            Error::DimensionMismatch { context: context.to_string(), expected, found }
        }
        other => other,
    })
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.family.is_none() && self.bounded.is_none() {
            return Err(Error::InvalidParameter("scenario needs an operator or a bounded family".into()));
        }
        if self.expected.is_empty() {
            return Err(Error::InvalidParameter("scenario lists no expected verdicts".into()));
        }
        if let Some(f) = &self.family {
            f.validate(&self.field)?;
        }
        if let Some(b) = &self.bounded {
            b.validate(&self.field)?;
        }
        self.battery.validate(&self.field)?;
        self.identification.validate(&self.field)?;
        let n = self.field.limit_fiber().dim();
        for v in self.recovery_core.iter().chain(&self.g_probes) {
            dim_check("recovery or G probe vector", n, v.len())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ScenarioFile {
            name: self.name.clone(),
            description: self.description.clone(),
            params: self.params.clone(),
            grid: self.grid.clone(),
            tol: self.tol,
            spectral_cutoff: self.spectral_cutoff,
            base: self.field.base().clone(),
            masses: (0..self.field.len()).map(|k| SymData::from_sym(self.field.fiber(k).mass())).collect(),
            limit_mass: SymData::from_sym(self.field.limit_fiber().mass()),
            family: self.family.as_ref().map(|f| FamilyData {
                fibers: f.fibers.iter().map(FormFiber::to_data).collect(),
                limit: f.limit.to_data(),
            }),
            bounded: self.bounded.clone(),
            battery: self.battery.sections().to_vec(),
            identification: (!is_identity_ident(&self.identification, &self.field))
                .then(|| self.identification.clone()),
            recovery_core: self.recovery_core.clone(),
            g_probes: self.g_probes.clone(),
            expected: self.expected.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        // Going through `Value` sorts object keys.
        let mut s = serde_json::to_string_pretty(&serde_json::to_value(file)?)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let masses = file
            .masses
            .into_iter()
            .enumerate()
            .map(|(k, m)| HilbertFiber::new(m.into_sym(&format!("mass at label index {k}"))?))
            .collect::<Result<Vec<_>>>()?;
        let limit = HilbertFiber::new(file.limit_mass.into_sym("limit mass")?)?;
        let field = FieldOfHilbert::new(file.base, masses, limit)?;
        let family = match file.family {
            Some(f) => {
                let fibers = f
                    .fibers
                    .into_iter()
                    .enumerate()
                    .map(|(k, d)| fiber_from_data(d, &format!("form fiber at label index {k}")))
                    .collect::<Result<Vec<_>>>()?;
                Some(OperatorFamily::new(&field, fibers, fiber_from_data(f.limit, "limit form fiber")?)?)
            }
            None => None,
        };
        let identification = match file.identification {
            Some(i) => i,
            None => Identification::identity(&field)?,
        };
        let s = Scenario {
            name: file.name,
            description: file.description,
            params: file.params,
            grid: file.grid,
            tol: file.tol,
            spectral_cutoff: file.spectral_cutoff,
            field,
            family,
            bounded: file.bounded,
            battery: SectionBattery::new(file.battery)?,
            identification,
            recovery_core: file.recovery_core,
            g_probes: file.g_probes,
            expected: file.expected,
            diagnostics: file.diagnostics,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn expected_for(&self, check: CheckKind) -> Option<Verdict> {
        self.expected.get(&check).copied()
    }

    pub fn battery_limits(&self) -> Vec<Vec<f64>> {
        self.battery.sections().iter().map(|s| s.limit.clone()).collect()
    }
}

/// Same verdict for the equivalent checks; spectral inclusion only applies
/// when strong resolvent convergence holds.
pub fn expect_all(v: Verdict) -> BTreeMap<CheckKind, Verdict> {
    let mut m: BTreeMap<CheckKind, Verdict> = [
        CheckKind::Srs,
        CheckKind::Mosco,
        CheckKind::G,
        CheckKind::Fcalc,
        CheckKind::Yosida,
        CheckKind::Ms,
    ]
    .into_iter()
    .map(|c| (c, v))
    .collect();
    m.insert(CheckKind::Spectral, if v.is_pass() { Verdict::Pass } else { Verdict::NotApplicable });
    m
}

fn sections_on(grids: &[Grid], limit: &Grid, fs: &[fn(f64) -> f64]) -> Result<SectionBattery> {
    SectionBattery::new(
        fs.iter().map(|f| Section::new(grids.iter().map(|g| g.sample(f)).collect(), limit.sample(f))).collect(),
    )
}

fn sin1(x: f64) -> f64 {
    (PI * x).sin()
}
fn sin2(x: f64) -> f64 {
    (2.0 * PI * x).sin()
}
fn sin3(x: f64) -> f64 {
    (3.0 * PI * x).sin()
}
fn bubble(x: f64) -> f64 {
    4.0 * x * (1.0 - x)
}
fn one(_: f64) -> f64 {
    1.0
}
fn cos1(x: f64) -> f64 {
    (PI * x).cos()
}
fn ident_fn(x: f64) -> f64 {
    x
}

fn check_cells(cells: &[usize], min: usize) -> Result<()> {
    if cells.len() < 3 {
        return Err(Error::InvalidParameter("need at least 3 refinement levels".into()));
    }
    if cells.iter().any(|&n| n < min) || !cells.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(format!("cell counts must increase and be at least {min}")));
    }
    Ok(())
}

fn refinement_base(cells: &[usize]) -> Result<BaseSequence> {
    BaseSequence::new(cells.iter().map(|&n| 1.0 / n as f64).collect(), 0.0)
}

fn field_from(base: BaseSequence, masses: Vec<SymMatrix>, limit: SymMatrix) -> Result<FieldOfHilbert> {
    let fibers = masses.into_iter().map(HilbertFiber::new).collect::<Result<Vec<_>>>()?;
    FieldOfHilbert::new(base, fibers, HilbertFiber::new(limit)?)
}

/// Parameters of the smoothly varying metric `a(t,x) = 1 + ε t sin(πx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VaryingMetricParams {
    pub eps: f64,
    pub k_max: usize,
    pub cells: usize,
    pub potential: bool,
}

impl Default for VaryingMetricParams {
    fn default() -> Self {
        Self { eps: 0.4, k_max: 60, cells: 64, potential: false }
    }
}

/// Dirichlet forms `∫ a^{-1/2}|u′|² dx` with mass `∫ a^{1/2} u² dx` along
/// `t_k = 2^{-k} → 0`, optionally with the potential `t·x²`.
pub fn build_varying_metric(p: &VaryingMetricParams) -> Result<Scenario> {
    if p.cells < 8 {
        return Err(Error::InvalidParameter("need at least 8 cells".into()));
    }
    let base = BaseSequence::dyadic(p.k_max)?;
    if let Some(t) = base.labels().iter().find(|t| (p.eps * **t).abs() > 0.5) {
        return Err(Error::DegenerateMetric((p.eps * t).abs()));
    }
    let grid = Grid::new(p.cells, Boundary::Dirichlet);
    let metric = |t: f64| move |x: f64| 1.0 + p.eps * t * (PI * x).sin();
    let form = |t: f64| -> Result<FormFiber> {
        let a = metric(t);
        let mut stiff = grid.stiffness(|x| a(x).powf(-0.5))?;
        let mass = grid.mass(|x| a(x).sqrt())?;
        if p.potential {
            for (i, x) in grid.nodes().into_iter().enumerate() {
                stiff.add_to(i, i, mass.get(i, i) * t * x * x);
            }
        }
        FormFiber::new(stiff, mass)
    };
    let fibers = base.labels().iter().map(|&t| form(t)).collect::<Result<Vec<_>>>()?;
    let limit = form(base.limit())?;
    let field = field_from(base.clone(), fibers.iter().map(|f| f.mass().clone()).collect(), limit.mass().clone())?;

    // The metric's cometric gives T_t = 1/a, so det(T_t)^{±1/2} = a^{∓1/2};
    // compare both against the measured mass ratio.
    let (mut plus, mut minus) = (0.0f64, 0.0f64);
    for (f, &t) in fibers.iter().zip(base.labels()) {
        let a = metric(t);
        for (i, x) in grid.nodes().into_iter().enumerate() {
            let ratio = f.mass().get(i, i) / limit.mass().get(i, i);
            let det = 1.0 / a(x);
            plus = plus.max((ratio - det.sqrt()).abs());
            minus = minus.max((ratio - det.powf(-0.5)).abs());
        }
    }
    let diagnostics = BTreeMap::from([
        ("jacobian_residual_det_plus_half".to_string(), plus),
        ("jacobian_residual_det_minus_half".to_string(), minus),
        ("jacobian_matching_exponent".to_string(), if minus <= plus { -0.5 } else { 0.5 }),
    ]);

    let grids = vec![grid; p.k_max];
    let battery = sections_on(&grids, &grid, &[sin1, sin2, bubble])?;
    let family = OperatorFamily::new(&field, fibers, limit)?;
    let identification = Identification::identity(&field)?;
    let core: Vec<Vec<f64>> = battery.sections().iter().map(|s| s.limit.clone()).collect();
    let s = Scenario {
        name: "varying_metric".into(),
        description: "Dirichlet forms of a smoothly varying metric on [0,1]".into(),
        params: BTreeMap::from([
            ("eps".to_string(), json!(p.eps)),
            ("k_max".to_string(), json!(p.k_max)),
            ("cells".to_string(), json!(p.cells)),
            ("potential".to_string(), json!(p.potential)),
        ]),
        grid: GridSpec {
            cells: vec![p.cells; p.k_max],
            boundary: vec![Boundary::Dirichlet; p.k_max],
            limit_cells: p.cells,
            limit_boundary: Boundary::Dirichlet,
        },
        tol: 1e-6,
        spectral_cutoff: 200.0,
        field,
        family: Some(family),
        bounded: None,
        battery,
        identification,
        recovery_core: core.clone(),
        g_probes: core,
        expected: expect_all(Verdict::Pass),
        diagnostics,
    };
    s.validate()?;
    Ok(s)
}

/// Parameters of the path-graph refinement with nodal-sampling identification.
#[derive(Debug, Clone, PartialEq)]
pub struct KuwaeShioyaParams {
    pub cells: Vec<usize>,
    pub boundary: Boundary,
}

impl Default for KuwaeShioyaParams {
    fn default() -> Self {
        Self { cells: vec![8, 16, 32, 64], boundary: Boundary::Dirichlet }
    }
}

/// Scaled path-graph Laplacians on refining grids, limit on a grid four
/// times finer than the finest sample, identification by nodal sampling.
pub fn build_kuwae_shioya_graph(p: &KuwaeShioyaParams) -> Result<Scenario> {
    check_cells(&p.cells, 8)?;
    if p.boundary == Boundary::Nodal {
        return Err(Error::InvalidParameter("boundary must be dirichlet or neumann".into()));
    }
    let limit_cells = 4 * p.cells[p.cells.len() - 1];
    let grids: Vec<Grid> = p.cells.iter().map(|&n| Grid::new(n, p.boundary)).collect();
    let fine = Grid::new(limit_cells, p.boundary);
    let form = |g: &Grid| -> Result<FormFiber> {
        FormFiber::new(g.stiffness(one)?, g.mass(one)?)
    };
    let fibers = grids.iter().map(form).collect::<Result<Vec<_>>>()?;
    let limit = form(&fine)?;
    let base = refinement_base(&p.cells)?;
    let field = field_from(base, fibers.iter().map(|f| f.mass().clone()).collect(), limit.mass().clone())?;
    let maps = grids.iter().map(|g| sampling_map(g, &fine)).collect::<Result<Vec<_>>>()?;
    let identification = Identification { core_dim: fine.dim(), maps, limit_map: Matrix::identity(fine.dim()) };
    let battery = sections_on(&grids, &fine, &[sin1, sin2, sin3, bubble])?;
    let core: Vec<Vec<f64>> = battery.sections().iter().map(|s| s.limit.clone()).collect();
    let family = OperatorFamily::new(&field, fibers, limit)?;
    let s = Scenario {
        name: "kuwae_shioya".into(),
        description: "path-graph Laplacians under refinement with nodal-sampling identification".into(),
        params: BTreeMap::from([
            ("cells".to_string(), json!(p.cells)),
            ("boundary".to_string(), json!(p.boundary)),
            ("limit_cells".to_string(), json!(limit_cells)),
        ]),
        grid: GridSpec { cells: p.cells.clone(), boundary: vec![p.boundary; p.cells.len()], limit_cells, limit_boundary: p.boundary },
        tol: 5e-2,
        spectral_cutoff: 200.0,
        field,
        family: Some(family),
        bounded: None,
        battery,
        identification,
        recovery_core: core.clone(),
        g_probes: core,
        expected: expect_all(Verdict::Pass),
        diagnostics: BTreeMap::new(),
    };
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeumannDirichletParams {
    pub cells: Vec<usize>,
    pub limit_cells: usize,
}

impl Default for NeumannDirichletParams {
    fn default() -> Self {
        Self { cells: vec![8, 16, 32, 64], limit_cells: 256 }
    }
}

/// Neumann Laplacians on refining grids against a Dirichlet limit: every
/// equivalent check fails, with the constant function as (M1) witness.
pub fn build_neumann_dirichlet(p: &NeumannDirichletParams) -> Result<Scenario> {
    check_cells(&p.cells, 8)?;
    let grids: Vec<Grid> = p.cells.iter().map(|&n| Grid::new(n, Boundary::Neumann)).collect();
    let fine = Grid::new(p.limit_cells, Boundary::Dirichlet);
    let form = |g: &Grid| -> Result<FormFiber> { FormFiber::new(g.stiffness(one)?, g.mass(one)?) };
    let fibers = grids.iter().map(form).collect::<Result<Vec<_>>>()?;
    let limit = form(&fine)?;
    let base = refinement_base(&p.cells)?;
    let field = field_from(base, fibers.iter().map(|f| f.mass().clone()).collect(), limit.mass().clone())?;
    let maps = grids.iter().map(|g| sampling_map(g, &fine)).collect::<Result<Vec<_>>>()?;
    let identification = Identification { core_dim: fine.dim(), maps, limit_map: Matrix::identity(fine.dim()) };
    // Battery functions vanish at the boundary so that the constant probe
    // converges weakly against them.
    let battery = sections_on(&grids, &fine, &[sin1, sin2, bubble])?;
    let core: Vec<Vec<f64>> = battery.sections().iter().map(|s| s.limit.clone()).collect();
    let mut g_probes = core.clone();
    g_probes.push(vec![1.0; fine.dim()]);
    let family = OperatorFamily::new(&field, fibers, limit)?;
    let s = Scenario {
        name: "neumann_dirichlet".into(),
        description: "Neumann Laplacians converging to nothing but a Dirichlet limit; all equivalent checks fail".into(),
        params: BTreeMap::from([
            ("cells".to_string(), json!(p.cells)),
            ("limit_cells".to_string(), json!(p.limit_cells)),
        ]),
        grid: GridSpec {
            cells: p.cells.clone(),
            boundary: vec![Boundary::Neumann; p.cells.len()],
            limit_cells: p.limit_cells,
            limit_boundary: Boundary::Dirichlet,
        },
        tol: 5e-2,
        spectral_cutoff: 200.0,
        field,
        family: Some(family),
        bounded: None,
        battery,
        identification,
        recovery_core: core,
        g_probes,
        expected: expect_all(Verdict::Fail),
        diagnostics: BTreeMap::new(),
    };
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingularMeasureParams {
    pub x0: f64,
    pub ns: Vec<usize>,
    pub cells: usize,
    /// Weight of the point mass in the limit form (1 for the true limit).
    pub limit_coefficient: f64,
}

impl Default for SingularMeasureParams {
    fn default() -> Self {
        Self { x0: 0.5, ns: vec![8, 16, 32, 64, 128], cells: 256, limit_coefficient: 1.0 }
    }
}

/// Neumann energy plus `∫ u² dμ_n` with `μ_n = n·1_[x₀, x₀+1/n]` (nodal
/// trapezoid weights); the limit adds `c·u(x₀)²`.
pub fn build_singular_measure(p: &SingularMeasureParams) -> Result<Scenario> {
    if !(p.x0 > 0.0 && p.x0 < 0.9) {
        return Err(Error::InvalidParameter(format!("x0 must lie in (0, 0.9), got {}", p.x0)));
    }
    if p.ns.len() < 3 || !p.ns.windows(2).all(|w| w[0] < w[1]) || p.ns[0] == 0 {
        return Err(Error::InvalidParameter("ns must be at least 3 increasing positive integers".into()));
    }
    let n_max = p.ns[p.ns.len() - 1];
    let support_cells = p.cells as f64 / n_max as f64;
    if support_cells < 2.0 {
        return Err(Error::GridTooCoarse { cells: support_cells });
    }
    let g0f = p.x0 * p.cells as f64;
    if (g0f - g0f.round()).abs() > 1e-9 || p.ns.iter().any(|n| !p.cells.is_multiple_of(*n)) {
        return Err(Error::InvalidParameter("x0 and every 1/n must fall on grid nodes".into()));
    }
    let g0 = g0f.round() as usize;
    if g0 + p.cells / p.ns[0] > p.cells {
        return Err(Error::InvalidParameter("measure support leaves [0, 1]".into()));
    }
    let grid = Grid::new(p.cells, Boundary::Neumann);
    let h = grid.h();
    let lap = grid.stiffness(one)?;
    let mass = grid.mass(one)?;
    let fibers = p
        .ns
        .iter()
        .map(|&n| {
            let span = p.cells / n;
            let mut a = lap.clone();
            for j in 0..=span {
                let w = n as f64 * h * if j == 0 || j == span { 0.5 } else { 1.0 };
                a.add_to(g0 + j, g0 + j, w);
            }
            FormFiber::new(a, mass.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut a_lim = lap.clone();
    a_lim.add_to(g0, g0, p.limit_coefficient);
    let limit = FormFiber::new(a_lim, mass.clone())?;
    let base = refinement_base(&p.ns)?;
    let field = FieldOfHilbert::constant(base, mass)?;
    let family = OperatorFamily::new(&field, fibers, limit)?;
    let identification = Identification::identity(&field)?;
    let grids = vec![grid; p.ns.len()];
    let battery = sections_on(&grids, &grid, &[one, cos1, ident_fn])?;
    let core: Vec<Vec<f64>> = battery.sections().iter().map(|s| s.limit.clone()).collect();
    let consistent = p.limit_coefficient == 1.0;
    let s = Scenario {
        name: if consistent { "singular_measure".into() } else { "singular_measure_mismatch".into() },
        description: "Neumann energy perturbed by measures concentrating at a point".into(),
        params: BTreeMap::from([
            ("x0".to_string(), json!(p.x0)),
            ("ns".to_string(), json!(p.ns)),
            ("cells".to_string(), json!(p.cells)),
            ("limit_coefficient".to_string(), json!(p.limit_coefficient)),
        ]),
        grid: GridSpec {
            cells: vec![p.cells; p.ns.len()],
            boundary: vec![Boundary::Neumann; p.ns.len()],
            limit_cells: p.cells,
            limit_boundary: Boundary::Neumann,
        },
        tol: 5e-2,
        spectral_cutoff: 200.0,
        field,
        family: Some(family),
        bounded: None,
        battery,
        identification,
        recovery_core: core.clone(),
        g_probes: core,
        expected: expect_all(Verdict::from_bool(consistent)),
        diagnostics: BTreeMap::new(),
    };
    s.validate()?;
    Ok(s)
}

/// Multiplier `b(t, x)` of the bounded family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Multiplier {
    One,
    /// `1 + t·x`
    Affine,
    /// `sign(x − t)`, labels `t_k = crossing + 2^{-k}`, limit at the crossing node.
    Sign { crossing: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedMultiplicationParams {
    pub nodes: usize,
    pub k_max: usize,
    pub multiplier: Multiplier,
}

impl Default for BoundedMultiplicationParams {
    fn default() -> Self {
        Self { nodes: 64, k_max: 60, multiplier: Multiplier::Affine }
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Multiplication operators `B(t) = diag(b(t, x_i))` on `ℝⁿ` with mass `h·I`.
/// When `b ≥ 0` the forms `uᵀ M diag(b) u` give an operator family as well.
type Multiplication = Box<dyn Fn(f64, f64) -> f64>;

pub fn build_bounded_multiplication(p: &BoundedMultiplicationParams) -> Result<Scenario> {
    if p.nodes < 8 {
        return Err(Error::InvalidParameter("need at least 8 nodes".into()));
    }
    let (base, name, b): (BaseSequence, &str, Multiplication) = match p.multiplier {
        Multiplier::One => (BaseSequence::dyadic(p.k_max)?, "bounded_identity", Box::new(|_, _| 1.0)),
        Multiplier::Affine => (BaseSequence::dyadic(p.k_max)?, "bounded_multiplication", Box::new(|t, x| 1.0 + t * x)),
        Multiplier::Sign { crossing } => {
            let labels = (1..=p.k_max).map(|k| crossing + 0.5f64.powi(k as i32)).collect();
            (BaseSequence::new(labels, crossing)?, "bounded_sign_fixture", Box::new(|t, x| sign0(x - t)))
        }
    };
    build_bounded_with(name, &*b, base, p.nodes, p.multiplier)
}

fn build_bounded_with(
    name: &str,
    b: &dyn Fn(f64, f64) -> f64,
    base: BaseSequence,
    nodes: usize,
    multiplier: Multiplier,
) -> Result<Scenario> {
    let grid = Grid::new(nodes, Boundary::Nodal);
    let mass = grid.mass(one)?;
    let field = FieldOfHilbert::constant(base.clone(), mass.clone())?;
    let xs = grid.nodes();
    let diag_at = |t: f64| -> Vec<f64> { xs.iter().map(|&x| b(t, x)).collect() };
    let ops = base.labels().iter().map(|&t| Matrix::from_diag(&diag_at(t))).collect();
    let bounded = BoundedFamily::new(&field, ops, Matrix::from_diag(&diag_at(base.limit())), true)?;
    let nonneg = base.labels().iter().chain(std::iter::once(&base.limit())).all(|&t| diag_at(t).iter().all(|v| *v >= 0.0));
    let family = if nonneg {
        let form = |t: f64| -> Result<FormFiber> {
            let d: Vec<f64> = diag_at(t).iter().map(|v| v * grid.h()).collect();
            FormFiber::new(SymMatrix::from_diag(&d)?, mass.clone())
        };
        let fibers = base.labels().iter().map(|&t| form(t)).collect::<Result<Vec<_>>>()?;
        Some(OperatorFamily::new(&field, fibers, form(base.limit())?)?)
    } else {
        None
    };
    let grids = vec![grid; base.len()];
    let battery = sections_on(&grids, &grid, &[sin1, ident_fn, one])?;
    let core: Vec<Vec<f64>> = battery.sections().iter().map(|s| s.limit.clone()).collect();
    let expected = match multiplier {
        Multiplier::Sign { .. } => BTreeMap::from([(CheckKind::Ms, Verdict::Fail), (CheckKind::G, Verdict::Fail)]),
        _ => expect_all(Verdict::Pass),
    };
    let s = Scenario {
        name: name.into(),
        description: "multiplication operators by a function continuous in the parameter".into(),
        params: BTreeMap::from([
            ("nodes".to_string(), json!(nodes)),
            ("k_max".to_string(), json!(base.len())),
            ("multiplier".to_string(), json!(format!("{multiplier:?}"))),
        ]),
        grid: GridSpec {
            cells: vec![nodes; base.len()],
            boundary: vec![Boundary::Nodal; base.len()],
            limit_cells: nodes,
            limit_boundary: Boundary::Nodal,
        },
        tol: 1e-6,
        spectral_cutoff: 200.0,
        identification: Identification::identity(&field)?,
        field,
        family,
        bounded: Some(bounded),
        battery,
        recovery_core: core.clone(),
        g_probes: core,
        expected,
        diagnostics: BTreeMap::new(),
    };
    s.validate()?;
    Ok(s)
}

/// Dirichlet Laplacian on 16 cells, identical at every label.
pub fn constant_fixture() -> Result<Scenario> {
    let grid = Grid::new(16, Boundary::Dirichlet);
    let f = FormFiber::new(grid.stiffness(one)?, grid.mass(one)?)?;
    let base = BaseSequence::dyadic(10)?;
    let field = FieldOfHilbert::constant(base.clone(), f.mass().clone())?;
    let family = OperatorFamily::new(&field, vec![f.clone(); base.len()], f)?;
    let grids = vec![grid; base.len()];
    let battery = sections_on(&grids, &grid, &[sin1, bubble])?;
    let core: Vec<Vec<f64>> = battery.sections().iter().map(|s| s.limit.clone()).collect();
    let s = Scenario {
        name: "constant_fixture".into(),
        description: "the same Dirichlet Laplacian at every label".into(),
        params: BTreeMap::from([("cells".to_string(), json!(16))]),
        grid: GridSpec {
            cells: vec![16; base.len()],
            boundary: vec![Boundary::Dirichlet; base.len()],
            limit_cells: 16,
            limit_boundary: Boundary::Dirichlet,
        },
        tol: 1e-6,
        spectral_cutoff: 200.0,
        identification: Identification::identity(&field)?,
        field,
        family: Some(family),
        bounded: None,
        battery,
        recovery_core: core.clone(),
        g_probes: core,
        expected: expect_all(Verdict::Pass),
        diagnostics: BTreeMap::new(),
    };
    s.validate()?;
    Ok(s)
}

/// Registry entry: a name and a zero-argument builder.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub build: fn() -> Result<Scenario>,
}

const SHIPPED: [ScenarioEntry; 5] = [
    ScenarioEntry {
        name: "bounded_multiplication",
        summary: "b(t,x) = 1 + t x on 64 nodes, t_k = 2^-k, k = 1..60",
        build: || build_bounded_multiplication(&BoundedMultiplicationParams::default()),
    },
    ScenarioEntry {
        name: "kuwae_shioya",
        summary: "Dirichlet path graphs, 8..64 cells, limit 256 cells",
        build: || build_kuwae_shioya_graph(&KuwaeShioyaParams::default()),
    },
    ScenarioEntry {
        name: "neumann_dirichlet",
        summary: "Neumann 8..64 cells against Dirichlet limit on 256 cells",
        build: || build_neumann_dirichlet(&NeumannDirichletParams::default()),
    },
    ScenarioEntry {
        name: "singular_measure",
        summary: "Neumann energy plus n 1_[1/2, 1/2+1/n], n = 8..128, grid 256",
        build: || build_singular_measure(&SingularMeasureParams::default()),
    },
    ScenarioEntry {
        name: "varying_metric",
        summary: "metric 1 + 0.4 t sin(pi x), 64 cells, t_k = 2^-k, k = 1..60",
        build: || build_varying_metric(&VaryingMetricParams::default()),
    },
];

const FIXTURES: [ScenarioEntry; 3] = [
    ScenarioEntry { name: "constant_fixture", summary: "identical Dirichlet Laplacians", build: constant_fixture },
    ScenarioEntry {
        name: "singular_measure_mismatch",
        summary: "singular measure with the point mass doubled at the limit",
        build: || build_singular_measure(&SingularMeasureParams { limit_coefficient: 2.0, ..Default::default() }),
    },
    ScenarioEntry {
        name: "bounded_sign_fixture",
        summary: "sign(x - t) crossing a node",
        build: || {
            build_bounded_multiplication(&BoundedMultiplicationParams {
                k_max: 30,
                multiplier: Multiplier::Sign { crossing: 0.5 },
                ..Default::default()
            })
        },
    },
];

/// Shipped scenarios in lexicographic order.
pub fn registry() -> &'static [ScenarioEntry] {
    &SHIPPED
}

/// Deliberately inconsistent or trivial cases used by tests.
pub fn fixtures() -> &'static [ScenarioEntry] {
    &FIXTURES
}

pub fn build_named(name: &str) -> Result<Scenario> {
    registry()
        .iter()
        .chain(fixtures())
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
        .and_then(|e| (e.build)())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dirichlet_stiffness_matches_stencil() {
        let g = Grid::new(4, Boundary::Dirichlet);
        let a = g.stiffness(one).unwrap();
        assert_eq!(a.row(0), &[8.0, -4.0, 0.0]);
        assert_eq!(a.row(1), &[-4.0, 8.0, -4.0]);
    }

    #[test]
    fn neumann_form_kills_constants() {
        let g = Grid::new(8, Boundary::Neumann);
        let a = g.stiffness(one).unwrap();
        assert!(a.matvec(&[1.0; 9]).iter().all(|v| v.abs() < 1e-14));
        let m = g.mass(one).unwrap();
        assert_relative_eq!(m.bilinear(&[1.0; 9], &[1.0; 9]), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn clipped_constant_energy_is_two_over_h() {
        let g = Grid::new(256, Boundary::Dirichlet);
        let a = g.stiffness(one).unwrap();
        let u = vec![1.0; g.dim()];
        assert_relative_eq!(a.bilinear(&u, &u), 512.0, max_relative = 1e-14);
    }

    #[test]
    fn sampling_map_clips_boundary() {
        let m = sampling_map(&Grid::new(2, Boundary::Neumann), &Grid::new(8, Boundary::Dirichlet)).unwrap();
        let v: Vec<f64> = (1..8).map(|i| i as f64).collect();
        assert_eq!(m.matvec(&v), vec![1.0, 4.0, 7.0]);
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let p = VaryingMetricParams { eps: 1.5, ..Default::default() };
        assert!(matches!(build_varying_metric(&p), Err(Error::DegenerateMetric(_))));
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let p = SingularMeasureParams { cells: 128, ..Default::default() };
        assert!(matches!(build_singular_measure(&p), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn jacobian_diagnostic_prefers_minus_half() {
        let s = build_varying_metric(&VaryingMetricParams { k_max: 5, ..Default::default() }).unwrap();
        assert_eq!(s.diagnostics["jacobian_matching_exponent"], -0.5);
        assert!(s.diagnostics["jacobian_residual_det_minus_half"] < 1e-14);
        assert!(s.diagnostics["jacobian_residual_det_plus_half"] > 1e-2);
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let s = constant_fixture().unwrap();
        let a = s.to_json().unwrap();
        let t = Scenario::from_json(&a).unwrap();
        assert_eq!(t, s);
        assert_eq!(t.to_json().unwrap(), a);
    }

    #[test]
    fn registry_is_sorted_and_builds() {
        let names: Vec<&str> = registry().iter().map(|e| e.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names.len(), 5);
        assert!(matches!(build_named("nope"), Err(Error::UnknownScenario(_))));
    }
}
