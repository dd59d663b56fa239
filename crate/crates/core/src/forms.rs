//! Nonnegative quadratic forms `t[u] = uᵀAu` on fibers with mass `M`, the
//! operator `T = M⁻¹A`, and the bounded and unbounded operator families
//! built from them.

use crate::error::{dim_check, Error, Result};
use crate::field::{BaseSequence, FieldOfHilbert};
use crate::linalg::{
    dot, eig_sym_generalized, eigvals_sym_generalized, norm2, Cholesky, EigResult, LinalgError, Matrix, SymMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Relative slack for `uᵀAu ≥ −slack·uᵀMu`.
pub const NONNEG_TOL: f64 = 1e-12;
/// Power-iteration steps used for operator-norm estimates.
pub const POWER_STEPS: usize = 50;
const SELF_ADJOINT_TOL: f64 = 1e-12;
const CERT_DECREASE_TOL: f64 = 1e-12;
const CERT_IDENTITY_TOL: f64 = 1e-8;
const CERT_EPS: [f64; 3] = [1e-3, 1e-2, 1e-1];

#[derive(Debug)]
pub struct FormFiber {
    stiffness: SymMatrix,
    mass: SymMatrix,
    mass_chol: Cholesky,
    eig: OnceLock<std::result::Result<EigResult, LinalgError>>,
    spectrum: OnceLock<std::result::Result<Vec<f64>, LinalgError>>,
}

impl Clone for FormFiber {
    fn clone(&self) -> Self {
        Self {
            stiffness: self.stiffness.clone(),
            mass: self.mass.clone(),
            mass_chol: self.mass_chol.clone(),
            eig: self.eig.clone(),
            spectrum: self.spectrum.clone(),
        }
    }
}

impl PartialEq for FormFiber {
    fn eq(&self, other: &Self) -> bool {
        self.stiffness == other.stiffness && self.mass == other.mass
    }
}

/// Serialized form of a [`FormFiber`]: row-major lower triangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormFiberData {
    pub dim: usize,
    pub stiffness: Vec<f64>,
    pub mass: Vec<f64>,
}

impl FormFiberData {
    pub fn into_fiber(self) -> Result<FormFiber> {
        let packed = self.dim * (self.dim + 1) / 2;
        dim_check("form fiber stiffness entries", packed, self.stiffness.len())?;
        dim_check("form fiber mass entries", packed, self.mass.len())?;
        let a = SymMatrix::from_lower(self.dim, &self.stiffness)?;
        let m = SymMatrix::from_lower(self.dim, &self.mass)?;
        FormFiber::new(a, m)
    }
}

impl Serialize for FormFiber {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_data().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FormFiber {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        FormFiberData::deserialize(d)?.into_fiber().map_err(serde::de::Error::custom)
    }
}

impl FormFiber {
    /// Validates symmetry, mass positivity and form nonnegativity. The last is
    /// checked by factoring `A + τM` with `τ = 1e-12·max(1, ‖A‖_F / min M_ii)`.
    pub fn new(stiffness: SymMatrix, mass: SymMatrix) -> Result<Self> {
        dim_check("stiffness vs mass", mass.dim(), stiffness.dim())?;
        let mass_chol = Cholesky::factor(&mass)?;
        let min_mass = mass.diag().into_iter().fold(f64::INFINITY, f64::min);
        let tau = NONNEG_TOL * (stiffness.frobenius_norm() / min_mass).max(1.0);
        let f = Self { stiffness, mass, mass_chol, eig: OnceLock::new(), spectrum: OnceLock::new() };
        if Cholesky::factor(&f.stiffness.add_scaled(tau, &f.mass)?).is_err() {
            let min_eigenvalue = f.spectrum()?.first().copied().unwrap_or(0.0);
            return Err(Error::NotNonnegative { min_eigenvalue });
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn to_data(&self) -> FormFiberData {
        FormFiberData { dim: self.dim(), stiffness: self.stiffness.to_lower(), mass: self.mass.to_lower() }
    }

    pub fn stiffness(&self) -> &SymMatrix {
        &self.stiffness
    }

    pub fn mass(&self) -> &SymMatrix {
        &self.mass
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        dim_check("form fiber vector", self.dim(), u.len())
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.bilinear(u, v)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// `Tu`, from `M(Tu) = Au`.
    pub fn apply_operator(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        Ok(self.mass_chol.solve(&self.stiffness.matvec(u))?)
    }

    /// Generalized eigenpairs, computed once and shared.
    pub fn eig(&self) -> Result<&EigResult> {
        self.eig.get_or_init(|| eig_sym_generalized(&self.stiffness, &self.mass)).as_ref().map_err(|e| e.clone().into())
    }

    /// Ascending spectrum of `T`, computed once and shared.
    pub fn spectrum(&self) -> Result<&[f64]> {
        let r = self.spectrum.get_or_init(|| match self.eig.get() {
            Some(Ok(e)) => Ok(e.eigenvalues.clone()),
            _ => eigvals_sym_generalized(&self.stiffness, &self.mass),
        });
        r.as_deref().map_err(|e| e.clone().into())
    }

    /// Factors `A + λM` for repeated resolvent solves.
    pub fn resolvent(&self, lambda: f64) -> Result<Resolvent<'_>> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("resolvent parameter must be positive, got {lambda}")));
        }
        let chol = Cholesky::factor(&self.stiffness.add_scaled(lambda, &self.mass)?)?;
        Ok(Resolvent { fiber: self, lambda, chol })
    }
}

/// `(T + λ)⁻¹` with a stored factorization of `A + λM`.
#[derive(Debug, Clone)]
pub struct Resolvent<'a> {
    fiber: &'a FormFiber,
    lambda: f64,
    chol: Cholesky,
}

impl Resolvent<'_> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Solves `(A + λM) v = M u`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.fiber.check(u)?;
        Ok(self.chol.solve(&self.fiber.mass.matvec(u))?)
    }

    /// Solves `(A + λM) v = b` for a raw right-hand side.
    pub fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.chol.solve(b)?)
    }
}

pub fn form_value(f: &FormFiber, u: &[f64], v: &[f64]) -> Result<f64> {
    f.check(u)?;
    f.check(v)?;
    Ok(f.stiffness.bilinear(u, v))
}

pub fn resolvent_apply(f: &FormFiber, lambda: f64, u: &[f64]) -> Result<Vec<f64>> {
    f.resolvent(lambda)?.apply(u)
}

/// Outcome of [`variational_certify`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub samples: usize,
    /// Smallest `F(v+εd) − F(v)` seen.
    pub min_decrease: f64,
    /// Largest `|ΔF − ε²(t+λ)[d]| / (ε²(t+λ)[d])` seen.
    pub max_identity_residual: f64,
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nd = norm2(&d);
        if nd > 1e-3 {
            return d.into_iter().map(|x| x / nd).collect();
        }
    }
}

/// Probes `F(w) = (t+λ)[w] − 2⟨u,w⟩` around the candidate minimizer `v`
/// along `±d` for seeded random unit directions `d` and `ε ∈ {1e-3, 1e-2, 1e-1}`.
/// The increment is evaluated in expanded form
/// `2ε[(t+λ)(v,d) − ⟨u,d⟩] + ε²(t+λ)[d]` to avoid cancellation.
pub fn variational_certify(
    f: &FormFiber,
    lambda: f64,
    u: &[f64],
    v: &[f64],
    directions: usize,
    seed: u64,
) -> Result<Certificate> {
    f.check(u)?;
    f.check(v)?;
    if directions == 0 {
        return Err(Error::InvalidParameter("need at least one direction".into()));
    }
    let shifted = f.stiffness.add_scaled(lambda, &f.mass)?;
    // Gradient of F/2 at v: (A+λM)v − Mu.
    let av = shifted.matvec(v);
    let mu = f.mass.matvec(u);
    let grad: Vec<f64> = av.iter().zip(&mu).map(|(a, b)| a - b).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cert = Certificate { samples: 0, min_decrease: f64::INFINITY, max_identity_residual: 0.0 };
    let mut worst: Option<(usize, f64, f64, f64)> = None;
    for i in 0..directions {
        let d = random_unit(&mut rng, f.dim());
        let q = shifted.bilinear(&d, &d);
        let lin = dot(&grad, &d);
        for sign in [1.0, -1.0] {
            for eps in CERT_EPS {
                let quad = eps * eps * q;
                let delta = 2.0 * eps * sign * lin + quad;
                let resid = (delta - quad).abs() / quad.max(f64::MIN_POSITIVE);
                cert.samples += 1;
                cert.min_decrease = cert.min_decrease.min(delta);
                cert.max_identity_residual = cert.max_identity_residual.max(resid);
                let bad = delta < -CERT_DECREASE_TOL || resid > CERT_IDENTITY_TOL;
                if bad && worst.is_none_or(|w| delta < w.2 || (delta >= -CERT_DECREASE_TOL && resid > w.3)) {
                    worst = Some((i, eps, delta, resid));
                }
            }
        }
    }
    match worst {
        Some((direction, eps, decrease, identity_residual)) => {
            Err(Error::CertificateFailed { direction, eps, decrease, identity_residual })
        }
        None => Ok(cert),
    }
}

/// `t^(β)[u] = β⟨u − β(T+β)⁻¹u, u⟩`, evaluated as `β·uᵀ M (A+βM)⁻¹ A u`.
pub fn yosida_moreau(f: &FormFiber, beta: f64, u: &[f64]) -> Result<f64> {
    f.check(u)?;
    let r = f.resolvent(beta)?;
    let w = r.solve_raw(&f.stiffness.matvec(u))?;
    Ok(beta * f.inner(&w, u))
}

/// `φ(T)u = Σ φ(θ_k)⟨u, v_k⟩ v_k` over the M-orthonormal eigenbasis.
pub fn functional_calculus(f: &FormFiber, phi: &dyn Fn(f64) -> f64, u: &[f64]) -> Result<Vec<f64>> {
    f.check(u)?;
    let eig = f.eig()?;
    let mu = f.mass.matvec(u);
    let mut out = vec![0.0; f.dim()];
    for (theta, v) in eig.eigenvalues.iter().zip(&eig.eigenvectors) {
        let c = phi(*theta) * dot(&mu, v);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += c * vi;
        }
    }
    Ok(out)
}

pub fn spectrum(f: &FormFiber) -> Result<Vec<f64>> {
    Ok(f.spectrum()?.to_vec())
}

/// `(‖u‖² + ‖Tu‖²)^{1/2}`.
pub fn graph_norm(f: &FormFiber, u: &[f64]) -> Result<f64> {
    let tu = f.apply_operator(u)?;
    Ok((f.inner(u, u) + f.inner(&tu, &tu)).sqrt())
}

/// `(t[u] + ‖u‖²)^{1/2}`.
pub fn form_norm(f: &FormFiber, u: &[f64]) -> Result<f64> {
    f.check(u)?;
    Ok((f.stiffness.bilinear(u, u) + f.inner(u, u)).max(0.0).sqrt())
}

fn check_masses(field: &FieldOfHilbert, masses: &[&SymMatrix], limit: &SymMatrix) -> Result<()> {
    dim_check("family label count", field.len(), masses.len())?;
    let close = |a: &SymMatrix, b: &SymMatrix| -> Result<bool> {
        dim_check("family fiber dimension", b.dim(), a.dim())?;
        let diff = a.add_scaled(-1.0, b)?.frobenius_norm();
        Ok(diff <= 1e-12 * b.frobenius_norm())
    };
    for (k, m) in masses.iter().enumerate() {
        if !close(m, field.fiber(k).mass())? {
            return Err(Error::InvalidParameter(format!("mass at label index {k} differs from the field")));
        }
    }
    if !close(limit, field.limit_fiber().mass())? {
        return Err(Error::InvalidParameter("limit mass differs from the field".into()));
    }
    Ok(())
}

/// A form fiber at every sample label and at the limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorFamily {
    pub base: BaseSequence,
    pub fibers: Vec<FormFiber>,
    pub limit: FormFiber,
}

impl OperatorFamily {
    pub fn new(field: &FieldOfHilbert, fibers: Vec<FormFiber>, limit: FormFiber) -> Result<Self> {
        let fam = Self { base: field.base().clone(), fibers, limit };
        fam.validate(field)?;
        Ok(fam)
    }

    pub fn validate(&self, field: &FieldOfHilbert) -> Result<()> {
        if &self.base != field.base() {
            return Err(Error::InvalidBase("family base differs from the field base".into()));
        }
        let masses: Vec<&SymMatrix> = self.fibers.iter().map(FormFiber::mass).collect();
        check_masses(field, &masses, self.limit.mass())
    }

    pub fn len(&self) -> usize {
        self.fibers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fibers.is_empty()
    }

    /// Same construction at every label applied to a stiffness map.
    pub fn map_stiffness(&self, f: impl Fn(&FormFiber) -> Result<SymMatrix>) -> Result<Self> {
        let remap = |x: &FormFiber| FormFiber::new(f(x)?, x.mass.clone());
        let fibers = self.fibers.iter().map(remap).collect::<Result<Vec<_>>>()?;
        Ok(Self { base: self.base.clone(), fibers, limit: remap(&self.limit)? })
    }
}

/// Bounded operators (as matrices acting on fiber coordinates) along the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundedFamily {
    pub base: BaseSequence,
    pub operators: Vec<Matrix>,
    pub limit: Matrix,
    pub self_adjoint: bool,
}

fn self_adjoint_residual(m: &SymMatrix, b: &Matrix) -> Result<f64> {
    let mb = m.to_matrix().matmul(b)?;
    let diff: f64 = (0..b.rows)
        .flat_map(|i| (0..b.cols).map(move |j| (i, j)))
        .map(|(i, j)| (mb.get(i, j) - mb.get(j, i)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(diff / mb.frobenius_norm().max(f64::MIN_POSITIVE))
}

impl BoundedFamily {
    pub fn new(field: &FieldOfHilbert, operators: Vec<Matrix>, limit: Matrix, self_adjoint: bool) -> Result<Self> {
        let fam = Self { base: field.base().clone(), operators, limit, self_adjoint };
        fam.validate(field)?;
        Ok(fam)
    }

    pub fn validate(&self, field: &FieldOfHilbert) -> Result<()> {
        if &self.base != field.base() {
            return Err(Error::InvalidBase("family base differs from the field base".into()));
        }
        dim_check("bounded family label count", field.len(), self.operators.len())?;
        let ops = self.operators.iter().enumerate().map(|(k, b)| (field.fiber(k).mass(), b, k.to_string()));
        for (m, b, label) in ops.chain(std::iter::once((field.limit_fiber().mass(), &self.limit, "limit".into()))) {
            let n = m.dim();
            if b.rows != n || b.cols != n || b.data.len() != n * n {
                return Err(Error::DimensionMismatch {
                    context: format!("bounded operator at label {label}"),
                    expected: n,
                    found: if b.rows != n { b.rows } else { b.cols },
                });
            }
            if b.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidParameter(format!("bounded operator at label {label} is not finite")));
            }
            if self.self_adjoint {
                let residual = self_adjoint_residual(m, b)?;
                if residual > SELF_ADJOINT_TOL {
                    return Err(Error::NotSelfAdjoint { residual });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// Pointwise product `B(t)·C(t)`.
    pub fn compose(&self, other: &BoundedFamily) -> Result<Self> {
        let operators =
            self.operators.iter().zip(&other.operators).map(|(a, b)| a.matmul(b)).collect::<std::result::Result<_, _>>()?;
        let self_adjoint = self.self_adjoint && other.self_adjoint && self == other;
        Ok(Self { base: self.base.clone(), operators, limit: self.limit.matmul(&other.limit)?, self_adjoint })
    }
}

/// Operator-norm estimate `‖B‖` in the `M` inner product by power iteration
/// on `M⁻¹BᵀMB`, with a fixed start vector.
pub fn operator_norm_estimate(mass: &SymMatrix, b: &Matrix, steps: usize) -> Result<f64> {
    let n = mass.dim();
    dim_check("operator norm", n, b.rows)?;
    let chol = Cholesky::factor(mass)?;
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64 + 1.0) * 0.7548776662).fract()).collect();
    let mut est: f64 = 0.0;
    for _ in 0..steps.max(1) {
        let nx = mass.bilinear(&x, &x).sqrt();
        if nx == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let bx = b.matvec(&x);
        let nbx = mass.bilinear(&bx, &bx).sqrt();
        est = est.max(nbx);
        let mbx = mass.matvec(&bx);
        x = chol.solve(&b.tmatvec(&mbx))?;
    }
    Ok(est)
}

/// Named scalar functions for the functional-calculus battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhiFunction {
    /// `1/(1+s)`
    InvOnePlus,
    /// `1/(1+s)²`
    InvOnePlusSq,
    /// `e^{−s}`
    ExpNeg,
    /// `exp(1 − 1/(1 − (s/Λ)²))` on `[0, Λ)`, zero beyond.
    Bump { cutoff: f64 },
}

pub const DEFAULT_BUMP_CUTOFF: f64 = 20.0;

impl PhiFunction {
    pub fn battery() -> Vec<PhiFunction> {
        vec![
            PhiFunction::InvOnePlus,
            PhiFunction::InvOnePlusSq,
            PhiFunction::ExpNeg,
            PhiFunction::Bump { cutoff: DEFAULT_BUMP_CUTOFF },
        ]
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            PhiFunction::InvOnePlus => 1.0 / (1.0 + s),
            PhiFunction::InvOnePlusSq => (1.0 + s).powi(-2),
            PhiFunction::ExpNeg => (-s).exp(),
            PhiFunction::Bump { cutoff } => {
                let r = s / cutoff;
                if r.abs() < 1.0 {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            PhiFunction::InvOnePlus => "inv1p".into(),
            PhiFunction::InvOnePlusSq => "inv1p2".into(),
            PhiFunction::ExpNeg => "exp".into(),
            PhiFunction::Bump { cutoff } => format!("bump:{cutoff}"),
        }
    }

    /// Inverse of [`PhiFunction::name`]; a bare `bump` uses the default cutoff.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "inv1p" => Ok(PhiFunction::InvOnePlus),
            "inv1p2" => Ok(PhiFunction::InvOnePlusSq),
            "exp" => Ok(PhiFunction::ExpNeg),
            "bump" => Ok(PhiFunction::Bump { cutoff: DEFAULT_BUMP_CUTOFF }),
            other => {
                let cutoff = other
                    .strip_prefix("bump:")
                    .and_then(|c| c.parse::<f64>().ok())
                    .filter(|c| *c > 0.0 && c.is_finite())
                    .ok_or_else(|| Error::ConfigParse(format!("unknown phi function `{other}`")))?;
                Ok(PhiFunction::Bump { cutoff })
            }
        }
    }
}
