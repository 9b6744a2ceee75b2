use super::field::ScalarField;
use super::grid::{Grid3, SupportBox, Vec3};
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::fmt;
use std::sync::Arc;

/// Relative magnitude below which a potential or source is treated as zero
/// when its support box is computed.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-12;

type RealFn = Arc<dyn Fn(&Vec3) -> f64 + Send + Sync>;
type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type ComplexFn = Arc<dyn Fn(&Vec3) -> Complex64 + Send + Sync>;

/// Declared decay envelope: `sup <x>^{p + eps} |f| <= c`, where the base
/// power `p` is 5 for potentials (including derivatives up to order two)
/// and 4 for source form factors.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Envelope {
    pub c: f64,
    pub eps: f64,
}

/// Real scattering potential `V(x)` with a numerical support box.
#[derive(Clone)]
pub struct Potential {
    name: String,
    params: Vec<(String, f64)>,
    eval: RealFn,
    radial: Option<RadialFn>,
    support: SupportBox,
    envelope: Envelope,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("support", &self.support)
            .field("envelope", &self.envelope)
            .finish()
    }
}

impl Potential {
    /// General potential from a closure; the caller supplies the support box
    /// and the envelope constants.
    pub fn from_fn<F>(name: &str, f: F, support: SupportBox, envelope: Envelope) -> Self
    where
        F: Fn(&Vec3) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.to_string(), params: Vec::new(), eval: Arc::new(f), radial: None, support, envelope }
    }

    /// Spherically symmetric potential `V(x) = f(|x|)`. The support radius
    /// is found by bisection on the profile and the envelope constant by
    /// maximising the weighted profile and its radial derivatives.
    pub fn radial<F>(name: &str, params: Vec<(String, f64)>, f: F, eps: f64, support_tol: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f: RadialFn = Arc::new(f);
        let probe = f.clone();
        let radius = support_radius(&|r| probe(r), support_tol)?;
        let c = radial_envelope(&|r| probe(r), 5.0 + eps, (4.0 * radius).max(20.0));
        let eval_f = f.clone();
        Ok(Self {
            name: name.to_string(),
            params,
            eval: Arc::new(move |x: &Vec3| eval_f(x.norm())),
            radial: Some(f),
            support: SupportBox::cube(Vec3::zeros(), radius),
            envelope: Envelope { c, eps },
        })
    }

    pub fn zero() -> Self {
        Self {
            name: "zero".into(),
            params: Vec::new(),
            eval: Arc::new(|_| 0.0),
            radial: Some(Arc::new(|_| 0.0)),
            support: SupportBox::cube(Vec3::zeros(), 1.0),
            envelope: Envelope { c: 0.0, eps: 0.5 },
        }
    }

    /// `V(x) = g exp(-|x|^2 / width^2)`.
    pub fn gaussian_well(g: f64, width: f64) -> Result<Self> {
        Self::gaussian_well_with(g, width, 0.5, DEFAULT_SUPPORT_TOL)
    }

    pub fn gaussian_well_with(g: f64, width: f64, eps: f64, support_tol: f64) -> Result<Self> {
        if !(width > 0.0) || !g.is_finite() {
            return Err(Error::InvalidPotential(format!("gaussian_well needs width > 0, got g={g}, width={width}")));
        }
        if g == 0.0 {
            return Ok(Self::zero());
        }
        let w2 = width * width;
        Self::radial(
            "gaussian_well",
            vec![("g".into(), g), ("width".into(), width)],
            move |r| g * (-r * r / w2).exp(),
            eps,
            support_tol,
        )
    }

    /// Screened Coulomb tail `g e^{-mu r}/r` with the origin singularity
    /// removed by two faster Yukawa terms:
    ///
    /// `V(r) = g [e^{-mu r} - alpha e^{-nu r} - beta e^{-lambda r}] / r`
    ///
    /// with `nu = mu + 1/core`, `lambda = mu + 2/core`,
    /// `alpha = (lambda^2 - mu^2)/(lambda^2 - nu^2)`, `beta = 1 - alpha`.
    /// The weights cancel the `1/r` and the odd `r` term, so `V` is C².
    pub fn yukawa_regularized(g: f64, mu: f64, core: f64) -> Result<Self> {
        Self::yukawa_regularized_with(g, mu, core, DEFAULT_SUPPORT_TOL)
    }

    pub fn yukawa_regularized_with(g: f64, mu: f64, core: f64, support_tol: f64) -> Result<Self> {
        if !(mu > 0.0) || !(core > 0.0) || !g.is_finite() {
            return Err(Error::InvalidPotential(format!(
                "yukawa_regularized needs mu > 0 and core > 0, got mu={mu}, core={core}"
            )));
        }
        if g == 0.0 {
            return Ok(Self::zero());
        }
        let terms = yukawa_terms(mu, core);
        Self::radial(
            "yukawa_regularized",
            vec![("g".into(), g), ("mu".into(), mu), ("core".into(), core)],
            move |r| g * yukawa_profile(&terms, r),
            0.5,
            support_tol,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    #[inline]
    pub fn eval(&self, x: &Vec3) -> f64 {
        (self.eval)(x)
    }

    /// Radial profile for spherically symmetric potentials.
    pub fn radial_profile(&self) -> Option<impl Fn(f64) -> f64 + '_> {
        self.radial.as_ref().map(|f| move |r: f64| f(r))
    }

    pub fn is_radial(&self) -> bool {
        self.radial.is_some()
    }

    pub fn is_zero(&self) -> bool {
        self.name == "zero"
    }

    pub fn support_box(&self) -> SupportBox {
        self.support
    }

    pub fn support_radius(&self) -> f64 {
        self.support.half_widths().max()
    }

    pub fn envelope(&self) -> Envelope {
        self.envelope
    }

    /// `lambda V`, with the envelope constant scaled accordingly.
    pub fn scaled(&self, lambda: f64) -> Self {
        let f = self.eval.clone();
        let radial = self.radial.clone().map(|r| Arc::new(move |s: f64| lambda * r(s)) as RadialFn);
        Self {
            name: self.name.clone(),
            params: self.params.clone(),
            eval: Arc::new(move |x| lambda * f(x)),
            radial,
            support: self.support,
            envelope: Envelope { c: self.envelope.c * lambda.abs(), eps: self.envelope.eps },
        }
    }

    pub fn sample(&self, grid: &Grid3) -> Vec<f64> {
        (0..grid.len()).map(|idx| self.eval(&grid.center_of(idx))).collect()
    }
}

/// `(weight, rate)` pairs of the regularised Yukawa combination.
fn yukawa_terms(mu: f64, core: f64) -> [(f64, f64); 3] {
    let nu = mu + 1.0 / core;
    let lam = mu + 2.0 / core;
    let alpha = (lam * lam - mu * mu) / (lam * lam - nu * nu);
    [(1.0, mu), (-alpha, nu), (alpha - 1.0, lam)]
}

fn yukawa_profile(terms: &[(f64, f64); 3], r: f64) -> f64 {
    if r < 1e-4 {
        // series: sum c (-a + a^2 r/2 - a^3 r^2/6 + a^4 r^3/24); the r term cancels
        let mut s = 0.0;
        for &(c, a) in terms {
            s += c * (-a - a * a * a * r * r / 6.0 + a.powi(4) * r * r * r / 24.0);
        }
        s
    } else {
        terms.iter().map(|&(c, a)| c * (-a * r).exp()).sum::<f64>() / r
    }
}

/// Smallest radius beyond which `|f| < tol * max|f|`, by bisection after
/// bracketing outward.
fn support_radius(f: &dyn Fn(f64) -> f64, tol: f64) -> Result<f64> {
    let mut vmax = 0.0f64;
    for i in 0..4000 {
        let r = i as f64 * 0.01;
        let v = f(r);
        if !v.is_finite() {
            return Err(Error::InvalidPotential(format!("non-finite value at r = {r}")));
        }
        vmax = vmax.max(v.abs());
    }
    if vmax == 0.0 {
        return Ok(1.0);
    }
    let thresh = tol * vmax;
    let below = |r: f64| (0..16).all(|j| f(r * (1.0 + j as f64 / 8.0)).abs() < thresh);
    let mut hi = 1.0;
    while !below(hi) {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InvalidPotential("profile does not decay below the support tolerance".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if below(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Bound on `<r>^p max(|f|, |f'|, |f''|, |f'/r|)`; the last two bound every
/// Hessian entry of a radial function.
fn radial_envelope(f: &dyn Fn(f64) -> f64, p: f64, r_max: f64) -> f64 {
    let d = 1e-4;
    let n = 20_000;
    let mut best = 0.0f64;
    for i in 0..=n {
        let r = 1e-3 + r_max * i as f64 / n as f64;
        let f0 = f(r);
        let fp = (f(r + d) - f(r - d)) / (2.0 * d);
        let fpp = (f(r + d) - 2.0 * f0 + f(r - d)) / (d * d);
        let m = f0.abs().max(fp.abs()).max(fpp.abs()).max((fp / r).abs());
        best = best.max((1.0 + r * r).powf(p / 2.0) * m);
    }
    1.05 * best
}

#[derive(Clone)]
enum FormKind {
    Continuous(ComplexFn),
    /// Unit-integral point source placed in a single quadrature cell.
    Point(Complex64),
}

/// Source form factor `rho(x)` with compact numerical support.
#[derive(Clone)]
pub struct FormFactor {
    name: String,
    params: Vec<(String, f64)>,
    kind: FormKind,
    radial: Option<RadialFn>,
    support: SupportBox,
    envelope: Envelope,
    quad_h: f64,
}

impl fmt::Debug for FormFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FormFactor")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("support", &self.support)
            .field("quad_h", &self.quad_h)
            .finish()
    }
}

impl FormFactor {
    pub fn from_fn<F>(name: &str, f: F, support: SupportBox, envelope: Envelope, quad_h: f64) -> Self
    where
        F: Fn(&Vec3) -> Complex64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            params: Vec::new(),
            kind: FormKind::Continuous(Arc::new(f)),
            radial: None,
            support,
            envelope,
            quad_h,
        }
    }

    /// Real spherically symmetric form factor; support and envelope are
    /// derived from the profile as for [`Potential::radial`].
    pub fn radial<F>(name: &str, params: Vec<(String, f64)>, f: F, eps: f64, quad_h: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f: RadialFn = Arc::new(f);
        let probe = f.clone();
        let radius =
            support_radius(&|r| probe(r), DEFAULT_SUPPORT_TOL).map_err(|e| Error::InvalidFormFactor(e.to_string()))?;
        let mut c = 0.0f64;
        let p = 4.0 + eps;
        for i in 0..=20_000 {
            let r = (4.0 * radius).max(20.0) * i as f64 / 20_000.0;
            c = c.max((1.0 + r * r).powf(p / 2.0) * probe(r).abs());
        }
        let eval_f = f.clone();
        Ok(Self {
            name: name.into(),
            params,
            kind: FormKind::Continuous(Arc::new(move |x: &Vec3| Complex64::new(eval_f(x.norm()), 0.0))),
            radial: Some(f),
            support: SupportBox::cube(Vec3::zeros(), radius),
            envelope: Envelope { c: 1.05 * c, eps },
            quad_h,
        })
    }

    /// Normalised Gaussian, `∫ rho = amplitude`:
    /// `rho(x) = amplitude (sqrt(pi) width)^{-3} exp(-|x|^2/width^2)`.
    /// Its transform is `amplitude exp(-|xi|^2 width^2 / 4)`.
    pub fn gaussian_source(amplitude: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !amplitude.is_finite() {
            return Err(Error::InvalidFormFactor(format!(
                "gaussian_source needs width > 0, got amplitude={amplitude}, width={width}"
            )));
        }
        let norm = amplitude / (std::f64::consts::PI.sqrt() * width).powi(3);
        let w2 = width * width;
        if amplitude == 0.0 {
            return Ok(Self::zero());
        }
        Self::radial(
            "gaussian_source",
            vec![("amplitude".into(), amplitude), ("width".into(), width)],
            move |r| norm * (-r * r / w2).exp(),
            0.5,
            0.5 * width,
        )
    }

    /// Point-like source of given integral, realised as one quadrature cell.
    pub fn point(strength: Complex64) -> Self {
        Self {
            name: "point_source".into(),
            params: vec![("strength_re".into(), strength.re), ("strength_im".into(), strength.im)],
            kind: FormKind::Point(strength),
            radial: None,
            support: SupportBox::cube(Vec3::zeros(), 0.25),
            envelope: Envelope { c: f64::INFINITY, eps: 0.5 },
            quad_h: 0.5,
        }
    }

    pub fn zero() -> Self {
        Self {
            name: "zero_source".into(),
            params: Vec::new(),
            kind: FormKind::Continuous(Arc::new(|_| Complex64::new(0.0, 0.0))),
            radial: Some(Arc::new(|_| 0.0)),
            support: SupportBox::cube(Vec3::zeros(), 1.0),
            envelope: Envelope { c: 0.0, eps: 0.5 },
            quad_h: 0.5,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[(String, f64)] {
        &self.params
    }

    pub fn is_point(&self) -> bool {
        matches!(self.kind, FormKind::Point(_))
    }

    /// Pointwise value; a point source evaluates to zero everywhere.
    pub fn eval(&self, x: &Vec3) -> Complex64 {
        match &self.kind {
            FormKind::Continuous(f) => f(x),
            FormKind::Point(_) => Complex64::new(0.0, 0.0),
        }
    }

    pub fn radial_profile(&self) -> Option<impl Fn(f64) -> f64 + '_> {
        self.radial.as_ref().map(|f| move |r: f64| f(r))
    }

    pub fn support_box(&self) -> SupportBox {
        self.support
    }

    pub fn support_radius(&self) -> f64 {
        self.support.half_widths().max()
    }

    pub fn envelope(&self) -> Envelope {
        self.envelope
    }

    pub fn quadrature_spacing(&self) -> f64 {
        self.quad_h
    }

    pub fn with_quadrature_spacing(mut self, h: f64) -> Self {
        self.quad_h = h;
        self
    }

    /// `e^{i alpha} rho` (used for phase-equivariance checks).
    pub fn with_phase(&self, alpha: f64) -> Self {
        let ph = Complex64::from_polar(1.0, alpha);
        let kind = match &self.kind {
            FormKind::Continuous(f) => {
                let f = f.clone();
                FormKind::Continuous(Arc::new(move |x| ph * f(x)))
            }
            FormKind::Point(s) => FormKind::Point(s * ph),
        };
        Self { kind, radial: None, ..self.clone() }
    }

    /// Quadrature grid of the form factor's own support, centred at `shift`.
    pub fn quadrature_grid(&self, shift: &Vec3, h: f64) -> Result<Grid3> {
        Grid3::centered_odd(*shift + self.support.center(), self.support_radius(), h)
    }

    /// `scale * rho(x - shift)` sampled on `grid`. A point source puts
    /// `scale * strength / h^3` into the cell containing `shift`.
    pub fn sample(&self, grid: &Grid3, shift: &Vec3, scale: f64) -> Result<ScalarField> {
        match &self.kind {
            FormKind::Continuous(f) => Ok(ScalarField::from_fn(grid.clone(), |x| f(&(x - shift)) * scale)),
            FormKind::Point(s) => {
                let cell = grid
                    .locate(shift)
                    .ok_or_else(|| Error::Geometry("point source lies outside its quadrature grid".into()))?;
                let mut field = ScalarField::zeros(grid.clone());
                let idx = grid.index(cell[0], cell[1], cell[2]);
                field.values_mut()[idx] = s * (scale / grid.cell_volume());
                Ok(field)
            }
        }
    }

    /// Samples on the default quadrature grid around `shift`.
    pub fn sample_default(&self, shift: &Vec3, scale: f64) -> Result<ScalarField> {
        let grid = self.quadrature_grid(shift, self.quad_h)?;
        self.sample(&grid, shift, scale)
    }
}
