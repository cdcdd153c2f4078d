//! Inter-material momentum and energy coupling: the drag closure for flow
//! through packed grains, pairing rules, and the implicit pairwise
//! relaxation solve used at faces and at cell centers.

use crate::error::{Result, SimError};

/// How a material pair exchanges momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PairRule {
    /// Drag through a granular skeleton; coefficient from the packed-sphere
    /// closure or its low-Reynolds permeability form.
    PorousDrag(DragClosure),
    /// Very stiff coupling for impermeable structure materials.
    RigidCoupling(f64),
    /// Constant coefficient between co-existing fluids.
    FluidFluid(f64),
    /// Momentum handled by the contact model only.
    ContactOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DragClosure {
    BeetstraVanDerHoef,
    KozenyCarman,
}

#[derive(Debug, Clone, Copy)]
pub struct PairSpec {
    pub rule: PairRule,
    /// Volumetric heat exchange coefficient [W/(m3 K)].
    pub heat_coeff: f64,
}

impl Default for PairSpec {
    fn default() -> Self {
        PairSpec {
            rule: PairRule::ContactOnly,
            heat_coeff: 0.0,
        }
    }
}

/// Symmetric table of pair rules over global material indices
/// (solids first, fluids after).
#[derive(Debug, Clone)]
pub struct ExchangeTable {
    pub n: usize,
    pairs: Vec<PairSpec>,
}

impl ExchangeTable {
    pub fn new(n: usize) -> Self {
        ExchangeTable {
            n,
            pairs: vec![PairSpec::default(); n * n],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, spec: PairSpec) {
        assert!(i != j && i < self.n && j < self.n);
        self.pairs[i * self.n + j] = spec;
        self.pairs[j * self.n + i] = spec;
    }

    pub fn get(&self, i: usize, j: usize) -> &PairSpec {
        &self.pairs[i * self.n + j]
    }
}

/// Low-Reynolds limit of the packed-sphere drag function.
pub fn drag_f_low_re(phi_s: f64) -> f64 {
    let e = 1.0 - phi_s;
    10.0 * phi_s / (e * e) + e * e * (1.0 + 1.5 * phi_s.sqrt())
}

/// Dimensionless drag function F(phi_s, Re) for mono-disperse sphere
/// packings; continuous down to Re = 0.
pub fn drag_f(phi_s: f64, re: f64) -> f64 {
    let f0 = drag_f_low_re(phi_s);
    if re < 1e-8 {
        return f0;
    }
    let e = 1.0 - phi_s;
    let num = 1.0 / e + 3.0 * phi_s * e + 8.4 * re.powf(-0.343);
    let den = 1.0 + 10f64.powf(3.0 * phi_s) * re.powf(-(1.0 + 4.0 * phi_s) / 2.0);
    f0 + 0.413 * re / (24.0 * e * e) * (num / den)
}

/// Particle Reynolds number of the relative flow through the pores.
pub fn reynolds(porosity: f64, rho_f: f64, d_p: f64, mu_f: f64, rel_speed: f64) -> f64 {
    porosity * rho_f * d_p * rel_speed / mu_f
}

/// Volumetric drag coefficient K [Pa s/m2] such that the drag force per
/// unit volume is K (U_s - U_f). Inputs outside the closure's validity
/// window are clamped (solid fraction into [1e-6, 0.999], Re into
/// [0, 1000]); the caller is responsible for surfacing the clamp.
pub fn drag_coefficient(
    phi_s: f64,
    d_p: f64,
    mu_f: f64,
    rho_f: f64,
    porosity: f64,
    rel_speed: f64,
    closure: DragClosure,
) -> Result<f64> {
    if phi_s >= 1.0 {
        return Err(SimError::Degenerate(format!(
            "drag closure needs solid fraction < 1, got {phi_s}"
        )));
    }
    if !(d_p > 0.0) {
        return Err(SimError::Degenerate("drag closure needs grain size > 0".into()));
    }
    let phi = phi_s.clamp(1e-6, 0.999);
    let f = match closure {
        DragClosure::KozenyCarman => 10.0 * phi / ((1.0 - phi) * (1.0 - phi)),
        DragClosure::BeetstraVanDerHoef => {
            let re = reynolds(porosity, rho_f, d_p, mu_f, rel_speed).clamp(0.0, 1000.0);
            drag_f(phi, re)
        }
    };
    Ok(18.0 * phi * (1.0 - phi) * mu_f * f / (d_p * d_p))
}

/// Hydraulic coefficient D^2 (1 - phi_s)^3 / (180 mu phi_s^2), the
/// permeability-over-viscosity form of the low-Reynolds drag closure.
pub fn kozeny_carman_conductivity(d_p: f64, phi_s: f64, mu_f: f64) -> f64 {
    let e = 1.0 - phi_s;
    d_p * d_p * e * e * e / (180.0 * mu_f * phi_s * phi_s)
}

/// Dense pairwise relaxation system: beta[i][j] = K_ij dt / rho_i and the
/// analogous temperature coefficients.
#[derive(Debug, Clone)]
pub struct ExchangeSystem {
    pub n: usize,
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
}

impl ExchangeSystem {
    pub fn beta_at(&self, i: usize, j: usize) -> f64 {
        self.beta[i * self.n + j]
    }
}

/// Builds the relaxation coefficients from symmetric momentum and heat
/// coefficients and per-material bulk densities. Materials with no mass
/// get zero rows and columns.
pub fn build_exchange_system(
    n: usize,
    k_of: impl Fn(usize, usize) -> f64,
    h_of: impl Fn(usize, usize) -> f64,
    bulk_density: &[f64],
    c_v: &[f64],
    dt: f64,
) -> ExchangeSystem {
    let mut beta = vec![0.0; n * n];
    let mut eta = vec![0.0; n * n];
    for i in 0..n {
        if bulk_density[i] <= 0.0 {
            continue;
        }
        for j in 0..n {
            if i == j || bulk_density[j] <= 0.0 {
                continue;
            }
            let k = k_of(i, j);
            let h = h_of(i, j);
            beta[i * n + j] = k * dt / bulk_density[i];
            eta[i * n + j] = h * dt / (bulk_density[i] * c_v[i]);
        }
    }
    ExchangeSystem { n, beta, eta }
}

/// Solves (I + offdiag coupling) dv = relaxation rhs for the implicit
/// increments: row i reads dv_i + sum_j b_ij (dv_i - dv_j) = sum_j b_ij
/// (v_j - v_i). Direct dense elimination with partial pivoting.
fn solve_relaxation(values: &[f64], coeffs: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let mut diag = 1.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = coeffs[i * n + j];
            diag += b;
            a[i * n + j] = -b;
            rhs[i] += b * (values[j] - values[i]);
        }
        a[i * n + i] = diag;
    }
    // Gaussian elimination, n is tiny.
    let mut x = rhs;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-300 {
            return Err(SimError::SolverDiverged {
                solver: "exchange",
                residual: f64::INFINITY,
                iters: 0,
            });
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut v = x[col];
        for c in col + 1..n {
            v -= a[col * n + c] * x[c];
        }
        x[col] = v / a[col * n + col];
    }
    Ok(x)
}

/// Implicit momentum relaxation increment per material for one velocity
/// component.
pub fn solve_momentum_exchange(u_star: &[f64], system: &ExchangeSystem) -> Result<Vec<f64>> {
    solve_relaxation(u_star, &system.beta, system.n)
}

/// Implicit temperature relaxation increment per material.
pub fn solve_energy_exchange(temps: &[f64], system: &ExchangeSystem) -> Result<Vec<f64>> {
    solve_relaxation(temps, &system.eta, system.n)
}
