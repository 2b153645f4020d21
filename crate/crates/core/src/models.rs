//! Scalar conservation-law models `du/dt + div F(u, q) = s(u, q)` with
//! `q ≈ grad u`, discretized with the stabilized numerical flux
//! `F(û, q)·n + τ (u − û)`.

use std::fmt;
use std::sync::Arc;

use crate::mesh::{TAG_BOTTOM, TAG_LEFT, TAG_RIGHT, TAG_TOP};

pub type ScalarField = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// `b̂ = û − u_D`.
    Dirichlet,
    /// `b̂` is supplied by [`PdeModel::boundary_flux`].
    Flux,
}

/// A boundary flux value and its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryFlux {
    pub value: f64,
    pub d_u: f64,
    pub d_q: [f64; 2],
    pub d_uhat: f64,
}

/// Flux, source and boundary callbacks of one scalar model.
///
/// `dflux_dq(..)[i][d]` is `dF_i/dq_d`. All callbacks must be pure.
pub trait PdeModel: Send + Sync {
    fn name(&self) -> &str;

    fn flux(&self, u: f64, q: [f64; 2], x: [f64; 2]) -> [f64; 2];
    fn dflux_du(&self, u: f64, q: [f64; 2], x: [f64; 2]) -> [f64; 2];
    fn dflux_dq(&self, u: f64, q: [f64; 2], x: [f64; 2]) -> [[f64; 2]; 2];

    fn source(&self, _u: f64, _q: [f64; 2], _x: [f64; 2]) -> f64 {
        0.0
    }
    fn dsource_du(&self, _u: f64, _q: [f64; 2], _x: [f64; 2]) -> f64 {
        0.0
    }
    fn dsource_dq(&self, _u: f64, _q: [f64; 2], _x: [f64; 2]) -> [f64; 2] {
        [0.0; 2]
    }

    fn tau(&self, u: f64, uhat: f64, n: [f64; 2]) -> f64;

    fn boundary_kind(&self, _tag: u8) -> BoundaryKind {
        BoundaryKind::Dirichlet
    }
    fn dirichlet_value(&self, tag: u8, x: [f64; 2]) -> f64;

    /// Flux-type boundary operator; only called where `boundary_kind` is `Flux`.
    fn boundary_flux(&self, tag: u8, u: f64, q: [f64; 2], uhat: f64, n: [f64; 2], x: [f64; 2]) -> BoundaryFlux {
        let _ = (tag, u, q, uhat, n, x);
        BoundaryFlux::default()
    }

    fn exact_solution(&self, _x: [f64; 2]) -> Option<f64> {
        None
    }

    fn time_dependent(&self) -> bool {
        false
    }
}

/// `F = c u − κ q`, `s = f(x)`, Dirichlet data on every side.
#[derive(Clone)]
pub struct LinearModel {
    name: String,
    pub velocity: [f64; 2],
    pub kappa: f64,
    forcing: ScalarField,
    dirichlet: ScalarField,
    exact: Option<ScalarField>,
    tau: Option<f64>,
    time_dependent: bool,
}

impl fmt::Debug for LinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearModel")
            .field("name", &self.name)
            .field("velocity", &self.velocity)
            .field("kappa", &self.kappa)
            .field("has_exact", &self.exact.is_some())
            .field("tau", &self.tau)
            .field("time_dependent", &self.time_dependent)
            .finish()
    }
}

impl LinearModel {
    pub fn with_exact(mut self, exact: ScalarField) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    /// Replaces the default `κ + |c·n|` by a constant.
    pub fn with_tau(mut self, tau: f64) -> Self {
        assert!(tau > 0.0 && tau.is_finite(), "tau must be positive");
        self.tau = Some(tau);
        self
    }

    pub fn forcing_at(&self, x: [f64; 2]) -> f64 {
        (self.forcing)(x)
    }
}

impl PdeModel for LinearModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn flux(&self, u: f64, q: [f64; 2], _x: [f64; 2]) -> [f64; 2] {
        [self.velocity[0] * u - self.kappa * q[0], self.velocity[1] * u - self.kappa * q[1]]
    }

    fn dflux_du(&self, _u: f64, _q: [f64; 2], _x: [f64; 2]) -> [f64; 2] {
        self.velocity
    }

    fn dflux_dq(&self, _u: f64, _q: [f64; 2], _x: [f64; 2]) -> [[f64; 2]; 2] {
        [[-self.kappa, 0.0], [0.0, -self.kappa]]
    }

    fn source(&self, _u: f64, _q: [f64; 2], x: [f64; 2]) -> f64 {
        (self.forcing)(x)
    }

    fn tau(&self, _u: f64, _uhat: f64, n: [f64; 2]) -> f64 {
        if let Some(t) = self.tau {
            return t;
        }
        self.kappa + (self.velocity[0] * n[0] + self.velocity[1] * n[1]).abs()
    }

    fn dirichlet_value(&self, _tag: u8, x: [f64; 2]) -> f64 {
        (self.dirichlet)(x)
    }

    fn exact_solution(&self, x: [f64; 2]) -> Option<f64> {
        self.exact.as_ref().map(|f| f(x))
    }

    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
}

/// `−Δu = f` in the mixed form `F = −q`.
pub fn poisson_model(forcing: ScalarField, dirichlet: ScalarField) -> LinearModel {
    LinearModel {
        name: "poisson2d".into(),
        velocity: [0.0; 2],
        kappa: 1.0,
        forcing,
        dirichlet,
        exact: None,
        tau: None,
        time_dependent: false,
    }
}

/// `div(c u − κ grad u) = f`.
pub fn convdiff_model(velocity: [f64; 2], kappa: f64, forcing: ScalarField, dirichlet: ScalarField) -> LinearModel {
    assert!(kappa > 0.0, "diffusivity must be positive");
    LinearModel { name: "convdiff2d".into(), velocity, kappa, forcing, dirichlet, exact: None, tau: None, time_dependent: false }
}

/// `du/dt − κ Δu = 0` with homogeneous Dirichlet data.
pub fn heat_model(kappa: f64) -> LinearModel {
    LinearModel {
        name: "heat2d".into(),
        velocity: [0.0; 2],
        kappa,
        forcing: Arc::new(|_| 0.0),
        dirichlet: Arc::new(|_| 0.0),
        exact: None,
        tau: None,
        time_dependent: true,
    }
}

/// Poisson with exact solution `sin(πx) sin(πy)` on the unit square.
pub fn poisson_sine() -> LinearModel {
    use std::f64::consts::PI;
    let exact: ScalarField = Arc::new(|x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin());
    poisson_model(Arc::new(|x: [f64; 2]| 2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin()), exact.clone()).with_exact(exact)
}

/// Convection-diffusion with exact solution `sin(πx) sin(πy)`.
pub fn convdiff_sine(velocity: [f64; 2], kappa: f64) -> LinearModel {
    use std::f64::consts::PI;
    let exact: ScalarField = Arc::new(|x: [f64; 2]| (PI * x[0]).sin() * (PI * x[1]).sin());
    let forcing: ScalarField = Arc::new(move |x: [f64; 2]| {
        let (sx, cx) = (PI * x[0]).sin_cos();
        let (sy, cy) = (PI * x[1]).sin_cos();
        PI * (velocity[0] * cx * sy + velocity[1] * sx * cy) + 2.0 * kappa * PI * PI * sx * sy
    });
    convdiff_model(velocity, kappa, forcing, exact.clone()).with_exact(exact)
}

/// How the Burgers outflow boundary determines the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutflowCondition {
    /// Zero diffusive normal flux: `b̂ = −ν q·n + τ (u − û)`.
    ZeroDiffusiveFlux,
    /// Zero total normal flux: `b̂ = F(û, q)·n + τ (u − û)`.
    ZeroTotalFlux,
}

/// Steady viscous Burgers `u_y + (u²/2)_x − ν Δu = 0` with `u = 1 − 2x` on the
/// bottom, left and right sides and an outflow condition on top.
#[derive(Debug, Clone)]
pub struct BurgersModel {
    pub nu: f64,
    pub tau: f64,
    pub outflow: OutflowCondition,
    pub time_dependent: bool,
}

pub fn burgers_model(nu: f64) -> BurgersModel {
    assert!(nu > 0.0, "viscosity must be positive");
    BurgersModel { nu, tau: 1.0 + 10.0 * nu, outflow: OutflowCondition::ZeroDiffusiveFlux, time_dependent: false }
}

impl BurgersModel {
    pub fn with_tau(mut self, tau: f64) -> Self {
        assert!(tau > 0.0 && tau.is_finite(), "tau must be positive");
        self.tau = tau;
        self
    }

    pub fn with_outflow(mut self, outflow: OutflowCondition) -> Self {
        self.outflow = outflow;
        self
    }
}

impl PdeModel for BurgersModel {
    fn name(&self) -> &str {
        "burgers2d"
    }

    fn flux(&self, u: f64, q: [f64; 2], _x: [f64; 2]) -> [f64; 2] {
        [0.5 * u * u - self.nu * q[0], u - self.nu * q[1]]
    }

    fn dflux_du(&self, u: f64, _q: [f64; 2], _x: [f64; 2]) -> [f64; 2] {
        [u, 1.0]
    }

    fn dflux_dq(&self, _u: f64, _q: [f64; 2], _x: [f64; 2]) -> [[f64; 2]; 2] {
        [[-self.nu, 0.0], [0.0, -self.nu]]
    }

    fn tau(&self, _u: f64, _uhat: f64, _n: [f64; 2]) -> f64 {
        self.tau
    }

    fn boundary_kind(&self, tag: u8) -> BoundaryKind {
        match tag {
            TAG_TOP => BoundaryKind::Flux,
            TAG_BOTTOM | TAG_LEFT | TAG_RIGHT => BoundaryKind::Dirichlet,
            _ => BoundaryKind::Dirichlet,
        }
    }

    fn dirichlet_value(&self, _tag: u8, x: [f64; 2]) -> f64 {
        1.0 - 2.0 * x[0]
    }

    fn boundary_flux(&self, _tag: u8, u: f64, q: [f64; 2], uhat: f64, n: [f64; 2], _x: [f64; 2]) -> BoundaryFlux {
        let tau = self.tau;
        let visc = -self.nu * (q[0] * n[0] + q[1] * n[1]);
        let d_q = [-self.nu * n[0], -self.nu * n[1]];
        match self.outflow {
            OutflowCondition::ZeroDiffusiveFlux => BoundaryFlux { value: visc + tau * (u - uhat), d_u: tau, d_q, d_uhat: -tau },
            OutflowCondition::ZeroTotalFlux => BoundaryFlux {
                value: 0.5 * uhat * uhat * n[0] + uhat * n[1] + visc + tau * (u - uhat),
                d_u: tau,
                d_q,
                d_uhat: uhat * n[0] + n[1] - tau,
            },
        }
    }

    fn time_dependent(&self) -> bool {
        self.time_dependent
    }
}
