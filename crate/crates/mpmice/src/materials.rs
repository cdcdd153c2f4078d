//! Constitutive closures: hyperelastic and frictional-plastic solid models,
//! fluid equations of state, and the per-cell multi-fluid pressure
//! equilibration.
//!
//! Sign conventions: particle stresses are tension-positive Cauchy tensors.
//! The frictional yield check works internally in compression-positive
//! principal stresses (most compressive first), which is the only reading
//! under which hydrostatic compression stays elastic at zero cohesion.

use crate::error::{Result, SimError};
use crate::math::{polar_decompose, Mat2, SymTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolidKind {
    NeoHookean,
    NeoHookeanMohrCoulomb,
}

#[derive(Debug, Clone)]
pub struct SolidModelSpec {
    pub kind: SolidKind,
    /// Lame parameters [Pa].
    pub lambda: f64,
    pub mu: f64,
    /// Effective cohesion [Pa].
    pub cohesion: f64,
    /// Peak and residual friction angles [rad].
    pub phi_peak: f64,
    pub phi_res: f64,
    /// Equivalent deviatoric plastic strain at which softening bottoms out.
    pub kappa_res: f64,
    /// Specific heat [J/(kg K)] and thermal conductivity [W/(m K)].
    pub c_v: f64,
    pub conductivity: f64,
    /// Grain (intrinsic) density [kg/m3] and representative grain size [m].
    pub grain_density: f64,
    pub grain_size: f64,
}

impl SolidModelSpec {
    pub fn from_youngs(e: f64, nu: f64) -> (f64, f64) {
        let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        (lambda, mu)
    }

    pub fn elastic(lambda: f64, mu: f64, grain_density: f64) -> Self {
        SolidModelSpec {
            kind: SolidKind::NeoHookean,
            lambda,
            mu,
            cohesion: 0.0,
            phi_peak: 0.0,
            phi_res: 0.0,
            kappa_res: 0.1,
            c_v: 835.0,
            conductivity: 0.4,
            grain_density,
            grain_size: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) {
            return Err(SimError::Config("shear modulus must be positive".into()));
        }
        if self.kind == SolidKind::NeoHookeanMohrCoulomb {
            if !(0.0 <= self.phi_res
                && self.phi_res <= self.phi_peak
                && self.phi_peak < std::f64::consts::FRAC_PI_2)
            {
                return Err(SimError::Config(
                    "friction angles must satisfy 0 <= phi_res <= phi_peak < pi/2".into(),
                ));
            }
            if !(self.kappa_res > 0.0) {
                return Err(SimError::Config("kappa_res must be positive".into()));
            }
        }
        if !(self.grain_density > 0.0) {
            return Err(SimError::Config("grain density must be positive".into()));
        }
        Ok(())
    }

    /// Mobilized friction angle: linear softening from peak to residual,
    /// constant beyond kappa_res.
    pub fn mobilized_friction(&self, kappa: f64) -> f64 {
        let t = (kappa / self.kappa_res).clamp(0.0, 1.0);
        self.phi_peak - (self.phi_peak - self.phi_res) * t
    }

    /// Stress-dilatancy rule: sin(psi) from mobilized and residual friction.
    pub fn mobilized_dilatancy(&self, phi_m: f64) -> f64 {
        let (sm, sr) = (phi_m.sin(), self.phi_res.sin());
        let s = (sm - sr) / (1.0 - sr * sm);
        s.clamp(-1.0, 1.0).asin()
    }

    /// Elastic p-wave speed of the grains, used for time step control.
    pub fn wave_speed(&self) -> f64 {
        ((self.lambda + 2.0 * self.mu) / self.grain_density).sqrt()
    }
}

/// Hyperelastic Cauchy stress for a plane-strain deformation gradient:
/// sigma = (lambda ln J / J) I + (mu / J)(F F^T - I), out-of-plane stretch 1.
pub fn neo_hookean_stress(f: &Mat2, lambda: f64, mu: f64) -> Result<SymTensor> {
    let j = f.det();
    if !(j > 0.0) {
        return Err(SimError::Degenerate(format!(
            "hyperelastic stress needs det(F) > 0, got {j}"
        )));
    }
    let b = f.mul(&f.transpose());
    let vol = lambda * j.ln() / j;
    Ok(SymTensor::new(
        vol + mu / j * (b.m[0][0] - 1.0),
        vol + mu / j * (b.m[1][1] - 1.0),
        vol,
        mu / j * 0.5 * (b.m[0][1] + b.m[1][0]),
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct PlasticReturn {
    /// Tension-positive corrected stress.
    pub stress: SymTensor,
    /// Equivalent deviatoric plastic strain increment.
    pub delta_kappa: f64,
    /// Dissipated plastic work per unit volume [J/m3], non-negative.
    pub plastic_work: f64,
    pub yielded: bool,
}

fn elastic_apply(v: [f64; 3], lambda: f64, mu: f64) -> [f64; 3] {
    let tr = v[0] + v[1] + v[2];
    [
        lambda * tr + 2.0 * mu * v[0],
        lambda * tr + 2.0 * mu * v[1],
        lambda * tr + 2.0 * mu * v[2],
    ]
}

fn elastic_inverse(v: [f64; 3], lambda: f64, mu: f64) -> [f64; 3] {
    let tr = v[0] + v[1] + v[2];
    let k = lambda / (3.0 * lambda + 2.0 * mu);
    [
        (v[0] - k * tr) / (2.0 * mu),
        (v[1] - k * tr) / (2.0 * mu),
        (v[2] - k * tr) / (2.0 * mu),
    ]
}

/// Yield value in compression-positive principal stresses s1 >= s3.
fn yield_value(s1: f64, s3: f64, sin_phi: f64, cos_phi: f64, c: f64) -> f64 {
    (s1 - s3) - (s1 + s3) * sin_phi - 2.0 * c * cos_phi
}

/// Frictional return mapping in principal-stress space with non-associated
/// flow. Elastic states are returned bit-for-bit unchanged. The mobilized
/// angles are evaluated at the entry value of kappa.
pub fn mohr_coulomb_return(
    sigma_trial: &SymTensor,
    spec: &SolidModelSpec,
    kappa: f64,
) -> PlasticReturn {
    let phi_m = spec.mobilized_friction(kappa);
    let psi_m = spec.mobilized_dilatancy(phi_m);
    let (sin_phi, cos_phi) = (phi_m.sin(), phi_m.cos());
    let sin_psi = psi_m.sin();
    let c = spec.cohesion;

    // Compression-positive principal decomposition; slots remember where
    // each principal value came from so the tensor can be reassembled.
    let s = sigma_trial.scale(-1.0);
    let (p1, p2, theta) = s.principal_in_plane();
    let mut entries = [(p1, 0usize), (p2, 1), (s.zz, 2)];
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let tr = [entries[0].0, entries[1].0, entries[2].0];

    let f_tr = yield_value(tr[0], tr[2], sin_phi, cos_phi, c);
    let scale = sigma_trial.max_abs().max(c).max(1.0);
    if f_tr <= 0.0 {
        return PlasticReturn {
            stress: *sigma_trial,
            delta_kappa: 0.0,
            plastic_work: 0.0,
            yielded: false,
        };
    }

    let (lambda, mu) = (spec.lambda, spec.mu);
    let order_tol = 1e-9 * scale;

    // Flow and yield plane normals for the three plane pairings; index k
    // selects which pair of principals the plane couples.
    let df = |hi: usize, lo: usize| {
        let mut v = [0.0; 3];
        v[hi] = 1.0 - sin_phi;
        v[lo] = -(1.0 + sin_phi);
        v
    };
    let dg = |hi: usize, lo: usize| {
        let mut v = [0.0; 3];
        v[hi] = 1.0 - sin_psi;
        v[lo] = -(1.0 + sin_psi);
        v
    };
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let fval = |s: [f64; 3], hi: usize, lo: usize| {
        yield_value(s[hi], s[lo], sin_phi, cos_phi, c)
    };

    let ordered = |s: [f64; 3]| s[0] >= s[1] - order_tol && s[1] >= s[2] - order_tol;

    let mut corrected: Option<[f64; 3]> = None;

    // Main-plane return on the (s1, s3) surface.
    {
        let dg13 = elastic_apply(dg(0, 2), lambda, mu);
        let d = dot(df(0, 2), dg13);
        let dl = f_tr / d;
        let sn = [tr[0] - dl * dg13[0], tr[1] - dl * dg13[1], tr[2] - dl * dg13[2]];
        if ordered(sn) {
            corrected = Some(sn);
        }
    }

    // Edge returns: two yield planes active simultaneously.
    if corrected.is_none() {
        for planes in [[(0usize, 2usize), (1, 2)], [(0, 2), (0, 1)]] {
            let dgs = [
                elastic_apply(dg(planes[0].0, planes[0].1), lambda, mu),
                elastic_apply(dg(planes[1].0, planes[1].1), lambda, mu),
            ];
            let dfs = [df(planes[0].0, planes[0].1), df(planes[1].0, planes[1].1)];
            let a = [
                [dot(dfs[0], dgs[0]), dot(dfs[0], dgs[1])],
                [dot(dfs[1], dgs[0]), dot(dfs[1], dgs[1])],
            ];
            let rhs = [
                fval(tr, planes[0].0, planes[0].1),
                fval(tr, planes[1].0, planes[1].1),
            ];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            if det.abs() < 1e-30 {
                continue;
            }
            let l1 = (rhs[0] * a[1][1] - rhs[1] * a[0][1]) / det;
            let l2 = (a[0][0] * rhs[1] - a[1][0] * rhs[0]) / det;
            if l1 < -1e-12 || l2 < -1e-12 {
                continue;
            }
            let sn = [
                tr[0] - l1 * dgs[0][0] - l2 * dgs[1][0],
                tr[1] - l1 * dgs[0][1] - l2 * dgs[1][1],
                tr[2] - l1 * dgs[0][2] - l2 * dgs[1][2],
            ];
            let f_chk = fval(sn, 0, 2).abs() <= 1e-9 * scale + 1e-9;
            if ordered(sn) && f_chk {
                corrected = Some(sn);
                break;
            }
        }
    }

    // Apex: hydrostatic tension limit of the cone.
    let sn = corrected.unwrap_or_else(|| {
        if sin_phi > 1e-12 {
            let a = -c * cos_phi / sin_phi;
            [a, a, a]
        } else {
            // No apex for a pressure-independent surface; collapse to the
            // trial mean stress, which lies inside it.
            let m = (tr[0] + tr[1] + tr[2]) / 3.0;
            [m, m, m]
        }
    });

    // Plastic strain increment from the stress correction.
    let dsig = [tr[0] - sn[0], tr[1] - sn[1], tr[2] - sn[2]];
    let deps = elastic_inverse(dsig, lambda, mu);
    let tr_eps = deps[0] + deps[1] + deps[2];
    let dev = [
        deps[0] - tr_eps / 3.0,
        deps[1] - tr_eps / 3.0,
        deps[2] - tr_eps / 3.0,
    ];
    let delta_kappa = (2.0 / 3.0 * (dev[0] * dev[0] + dev[1] * dev[1] + dev[2] * dev[2])).sqrt();
    let work = (sn[0] * deps[0] + sn[1] * deps[1] + sn[2] * deps[2]).max(0.0);

    // Reassemble by slot, then flip back to tension-positive.
    let mut by_slot = [0.0; 3];
    for (k, &(_, slot)) in entries.iter().enumerate() {
        by_slot[slot] = sn[k];
    }
    let s_new = SymTensor::from_principal_in_plane(by_slot[0], by_slot[1], theta, by_slot[2]);

    PlasticReturn {
        stress: s_new.scale(-1.0),
        delta_kappa,
        plastic_work: work,
        yielded: true,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StressUpdate {
    pub stress: SymTensor,
    pub delta_kappa: f64,
    pub plastic_work: f64,
}

/// Incremental objective stress update. The stored stress is unrotated
/// with the polar rotation of the deformation gradient it was stored at,
/// the strain increment with the new one; the material update runs in the
/// unrotated frame and the result is rotated back with the new rotation.
/// A rigid rotation with zero strain increment therefore transports the
/// stress: sigma_next = dR sigma dR^T. Purely hyperelastic materials are
/// evaluated directly from F, which satisfies objectivity identically.
pub fn rotate_stress_update(
    sigma_n: &SymTensor,
    delta_eps: &SymTensor,
    f_prev: &Mat2,
    f_next: &Mat2,
    spec: &SolidModelSpec,
    kappa: f64,
) -> Result<StressUpdate> {
    match spec.kind {
        SolidKind::NeoHookean => Ok(StressUpdate {
            stress: neo_hookean_stress(f_next, spec.lambda, spec.mu)?,
            delta_kappa: 0.0,
            plastic_work: 0.0,
        }),
        SolidKind::NeoHookeanMohrCoulomb => {
            let (r_old, _) = polar_decompose(f_prev)?;
            let (r_new, _) = polar_decompose(f_next)?;
            let sig_ref = sigma_n.congruence(&r_old.transpose());
            let eps_ref = delta_eps.congruence(&r_new.transpose());
            let tr = eps_ref.trace();
            let trial = sig_ref.add(
                &SymTensor::isotropic(spec.lambda * tr).add(&eps_ref.scale(2.0 * spec.mu)),
            );
            let ret = mohr_coulomb_return(&trial, spec, kappa);
            Ok(StressUpdate {
                stress: ret.stress.congruence(&r_new),
                delta_kappa: ret.delta_kappa,
                plastic_work: ret.plastic_work,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EosKind {
    IdealGas {
        /// Specific gas constant [J/(kg K)].
        r: f64,
    },
    LinearWater {
        p_ref: f64,
        t_ref: f64,
        rho_ref: f64,
        /// Stiffness coefficient multiplying the density deviation, raw
        /// config units [Pa m3/kg].
        k: f64,
        /// Thermal coefficient inside the density slot, raw config units
        /// [kg/(m3 K)].
        alpha: f64,
    },
}

#[derive(Debug, Clone)]
pub struct FluidEosSpec {
    pub eos: EosKind,
    /// Dynamic viscosity [Pa s].
    pub viscosity: f64,
    pub c_v: f64,
    pub conductivity: f64,
}

impl FluidEosSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.eos {
            EosKind::IdealGas { r } => r > 0.0,
            EosKind::LinearWater {
                rho_ref, k, alpha, ..
            } => rho_ref > 0.0 && k > 0.0 && alpha >= 0.0,
        };
        if !ok || !(self.viscosity >= 0.0) || !(self.c_v > 0.0) || !(self.conductivity >= 0.0) {
            return Err(SimError::Config("invalid fluid parameters".into()));
        }
        Ok(())
    }
}

pub fn eos_pressure(eos: &EosKind, rho: f64, t: f64) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(SimError::Degenerate(format!("eos needs rho > 0, got {rho}")));
    }
    match *eos {
        EosKind::IdealGas { r } => {
            if !(t > 0.0) {
                return Err(SimError::Degenerate(format!("ideal gas needs T > 0, got {t}")));
            }
            Ok(rho * r * t)
        }
        EosKind::LinearWater {
            p_ref,
            t_ref,
            rho_ref,
            k,
            alpha,
        } => Ok(p_ref + k * (rho - rho_ref - alpha * (t - t_ref))),
    }
}

pub fn eos_density(eos: &EosKind, p: f64, t: f64) -> Result<f64> {
    match *eos {
        EosKind::IdealGas { r } => {
            if !(t > 0.0) {
                return Err(SimError::Degenerate(format!("ideal gas needs T > 0, got {t}")));
            }
            if !(p > 0.0) {
                return Err(SimError::Degenerate(format!("ideal gas needs P > 0, got {p}")));
            }
            Ok(p / (r * t))
        }
        EosKind::LinearWater {
            p_ref,
            t_ref,
            rho_ref,
            k,
            alpha,
        } => {
            let rho = rho_ref + alpha * (t - t_ref) + (p - p_ref) / k;
            if !(rho > 0.0) {
                return Err(SimError::Degenerate(format!(
                    "linear eos inverted to non-positive density {rho} at P = {p}"
                )));
            }
            Ok(rho)
        }
    }
}

/// Intrinsic isothermal compressibility -(1/v) dv/dP = (1/rho) drho/dP.
pub fn eos_compressibility(eos: &EosKind, rho: f64, t: f64) -> f64 {
    match *eos {
        EosKind::IdealGas { r } => 1.0 / (rho * r * t),
        EosKind::LinearWater { k, .. } => 1.0 / (rho * k),
    }
}

/// Intrinsic thermal expansivity (1/v) dv/dT = -(1/rho) drho/dT at fixed P.
pub fn eos_expansivity(eos: &EosKind, rho: f64, t: f64) -> f64 {
    match *eos {
        EosKind::IdealGas { .. } => 1.0 / t,
        EosKind::LinearWater { alpha, .. } => -alpha / rho,
    }
}

/// Isothermal sound speed squared dP/drho.
pub fn eos_sound_speed_sq(eos: &EosKind, rho: f64, t: f64) -> f64 {
    1.0 / (rho * eos_compressibility(eos, rho, t)).max(1e-300)
}

#[derive(Debug, Clone)]
pub struct EquilibrationResult {
    pub pressure: f64,
    /// Per input fluid: specific volume at the common pressure.
    pub spec_vol: Vec<f64>,
    /// Per input fluid: volume fraction v * rho_bar.
    pub vol_frac: Vec<f64>,
    /// Per input fluid: intrinsic compressibility at the common pressure.
    pub compressibility: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Finds the single pressure at which every fluid's EOS-consistent volume
/// exactly fills the pore space: sum_f v_f(P, T_f) rho_bar_f = n.
/// Newton iteration with a bisection bracket fallback.
pub fn equilibrate_pressure(
    fluids: &[(&EosKind, f64, f64)], // (eos, bulk density, temperature)
    porosity: f64,
    p_guess: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EquilibrationResult> {
    assert!(porosity > 0.0 && porosity <= 1.0, "porosity out of range");
    let active: Vec<usize> = (0..fluids.len()).filter(|&k| fluids[k].1 > 0.0).collect();
    if active.is_empty() {
        return Err(SimError::Degenerate(
            "pressure equilibration needs at least one fluid with mass".into(),
        ));
    }

    let residual = |p: f64| -> Result<(f64, f64)> {
        // (g, dg/dP) with g = n - sum rho_bar v(P,T)
        let mut g = porosity;
        let mut dg = 0.0;
        for &k in &active {
            let (eos, rho_bar, t) = fluids[k];
            let rho = eos_density(eos, p, t)?;
            let v = 1.0 / rho;
            g -= rho_bar * v;
            // dv/dP = -v^2 drho/dP
            let drho_dp = match *eos {
                EosKind::IdealGas { r } => 1.0 / (r * t),
                EosKind::LinearWater { k: kc, .. } => 1.0 / kc,
            };
            dg += rho_bar * v * v * drho_dp;
        }
        Ok((g, dg))
    };

    // Closed form when a single fluid fills the pore space.
    let mut p = if active.len() == 1 {
        let (eos, rho_bar, t) = fluids[active[0]];
        eos_pressure(eos, rho_bar / porosity, t)?
    } else {
        p_guess
    };
    if !p.is_finite() {
        p = 101325.0;
    }

    // Establish a bracket; g is monotone increasing in P. Liquids may
    // carry tension down to their density floor; gases need P > 0.
    let mut lo: f64 = -1e15;
    let mut hi: f64 = 1e14;
    for &k in &active {
        match *fluids[k].0 {
            EosKind::IdealGas { .. } => lo = lo.max(1e-6),
            EosKind::LinearWater {
                p_ref,
                t_ref,
                rho_ref,
                k: kc,
                alpha,
            } => {
                let t = fluids[k].2;
                let floor = p_ref - kc * (rho_ref + alpha * (t - t_ref));
                lo = lo.max(floor + 1e-9 * kc.max(1.0));
            }
        }
    }
    p = p.clamp(lo, hi);

    let mut iterations = 0;
    let mut g_cur = f64::INFINITY;
    // Newton with the bracket maintained as a safety net.
    while iterations <= max_iter {
        let (g, dg) = residual(p)?;
        g_cur = g;
        if g.abs() <= tol {
            break;
        }
        if g < 0.0 {
            lo = lo.max(p);
        } else {
            hi = hi.min(p);
        }
        let step = if dg > 0.0 { -g / dg } else { 0.0 };
        let mut p_new = p + step;
        if !(p_new > lo && p_new < hi) || step == 0.0 {
            p_new = 0.5 * (lo + hi);
        }
        p = p_new;
        iterations += 1;
    }
    if g_cur.abs() > tol {
        // Bisection fallback on the maintained bracket.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let (gm, _) = residual(mid)?;
            p = mid;
            g_cur = gm;
            if gm.abs() <= tol {
                break;
            }
            if gm < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        if g_cur.abs() > tol {
            return Err(SimError::Equilibration {
                i: 0,
                j: 0,
                residual: g_cur,
            });
        }
    }

    let mut spec_vol = vec![0.0; fluids.len()];
    let mut vol_frac = vec![0.0; fluids.len()];
    let mut compressibility = vec![0.0; fluids.len()];
    for (k, &(eos, rho_bar, t)) in fluids.iter().enumerate() {
        let rho = eos_density(eos, p, t)?;
        spec_vol[k] = 1.0 / rho;
        vol_frac[k] = if rho_bar > 0.0 { rho_bar / rho } else { 0.0 };
        compressibility[k] = eos_compressibility(eos, rho, t);
    }
    Ok(EquilibrationResult {
        pressure: p,
        spec_vol,
        vol_frac,
        compressibility,
        iterations,
        residual: g_cur,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ATM: f64 = 101325.0;

    fn water() -> EosKind {
        EosKind::LinearWater {
            p_ref: ATM,
            t_ref: 283.15,
            rho_ref: 999.8,
            k: 2e9,
            alpha: 0.18,
        }
    }

    fn soil_spec() -> SolidModelSpec {
        let (lambda, mu) = SolidModelSpec::from_youngs(10e6, 0.3);
        SolidModelSpec {
            kind: SolidKind::NeoHookeanMohrCoulomb,
            lambda,
            mu,
            cohesion: 0.0,
            phi_peak: 30f64.to_radians(),
            phi_res: 30f64.to_radians(),
            kappa_res: 0.1,
            c_v: 835.0,
            conductivity: 0.4,
            grain_density: 2650.0,
            grain_size: 1e-3,
        }
    }

    #[test]
    fn neo_hookean_zero_at_identity() {
        let s = neo_hookean_stress(&Mat2::IDENTITY, 1e6, 1e6).unwrap();
        assert_eq!(s.max_abs(), 0.0);
    }

    #[test]
    fn neo_hookean_simple_shear() {
        let f = Mat2::new(1.0, 0.01, 0.0, 1.0);
        let s = neo_hookean_stress(&f, 2e6, 1e6).unwrap();
        assert!((s.xy - 1e4).abs() < 1e-6);
    }

    #[test]
    fn neo_hookean_dilation_limit() {
        // trace/3 -> (lambda + 2 mu / 3) * 2 eps for small plane dilation
        let (lambda, mu) = (2e6, 1e6);
        let eps = 1e-6;
        let f = Mat2::new(1.0 + eps, 0.0, 0.0, 1.0 + eps);
        let s = neo_hookean_stress(&f, lambda, mu).unwrap();
        let mean = s.trace() / 3.0;
        let expect = (lambda + 2.0 * mu / 3.0) * 2.0 * eps;
        assert!(
            ((mean - expect) / expect).abs() < 1e-4,
            "mean {mean} expect {expect}"
        );
    }

    #[test]
    fn neo_hookean_rejects_inverted() {
        assert!(neo_hookean_stress(&Mat2::new(-1.0, 0.0, 0.0, 1.0), 1e6, 1e6).is_err());
    }

    #[test]
    fn yield_function_hand_values() {
        // compression-positive s1 = s3 = 100 kPa, c = 0, phi = 30 deg
        let sp = 30f64.to_radians().sin();
        let cp = 30f64.to_radians().cos();
        let f = yield_value(100e3, 100e3, sp, cp, 0.0);
        assert!((f + 100e3).abs() < 1e-6);
        // boundary: s1 = 300, s3 = 100 kPa
        let f2 = yield_value(300e3, 100e3, sp, cp, 0.0);
        assert!(f2.abs() < 1e-6);
    }

    #[test]
    fn elastic_trial_returned_bit_for_bit() {
        let spec = soil_spec();
        // hydrostatic compression, elastic at zero cohesion
        let sig = SymTensor::isotropic(-100e3);
        let out = mohr_coulomb_return(&sig, &spec, 0.0);
        assert!(!out.yielded);
        assert_eq!(out.stress, sig);
        assert_eq!(out.plastic_work, 0.0);
    }

    #[test]
    fn plastic_return_lands_on_surface() {
        let spec = soil_spec();
        // strongly deviatoric compression-positive trial
        let sig = SymTensor::new(-500e3, -50e3, -100e3, 30e3);
        let out = mohr_coulomb_return(&sig, &spec, 0.0);
        assert!(out.yielded);
        let s = out.stress.scale(-1.0);
        let (p1, p2, _) = s.principal_in_plane();
        let mut v = [p1, p2, s.zz];
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let f = yield_value(
            v[0],
            v[2],
            spec.phi_peak.sin(),
            spec.phi_peak.cos(),
            spec.cohesion,
        );
        assert!(f.abs() < 1e-9 * 500e3, "f = {f}");
        assert!(out.plastic_work >= 0.0);
        assert!(out.delta_kappa > 0.0);
    }

    #[test]
    fn dilatancy_rule_values() {
        let mut spec = soil_spec();
        spec.phi_res = 10f64.to_radians();
        // phi_m equal to residual: numerator vanishes
        assert!(spec.mobilized_dilatancy(spec.phi_res).abs() < 1e-15);
        // phi_m = 45 deg, phi_r = 10 deg
        let psi = spec.mobilized_dilatancy(45f64.to_radians());
        assert!((psi.sin() - 0.6081).abs() < 1e-4, "sin psi = {}", psi.sin());
    }

    #[test]
    fn softening_is_monotone_and_plateaus() {
        let mut spec = soil_spec();
        spec.phi_peak = 45f64.to_radians();
        spec.phi_res = 10f64.to_radians();
        spec.kappa_res = 0.1;
        let mut last = spec.mobilized_friction(0.0);
        assert!((last - spec.phi_peak).abs() < 1e-15);
        for k in 1..=20 {
            let phi = spec.mobilized_friction(k as f64 * 0.01);
            assert!(phi <= last + 1e-15);
            last = phi;
        }
        assert!((spec.mobilized_friction(0.1) - spec.phi_res).abs() < 1e-15);
        assert!((spec.mobilized_friction(5.0) - spec.phi_res).abs() < 1e-15);
    }

    #[test]
    fn rotate_update_reduces_to_plain_when_unrotated() {
        let spec = soil_spec();
        let sig = SymTensor::new(-100e3, -80e3, -90e3, 5e3);
        let deps = SymTensor::new(-1e-4, 2e-5, 0.0, 3e-5);
        let f = Mat2::new(1.001, 0.0, 0.0, 0.999); // symmetric, R = I
        let out =
            rotate_stress_update(&sig, &deps, &Mat2::IDENTITY, &f, &spec, 0.0).unwrap();
        let tr = deps.trace();
        let trial = sig.add(&SymTensor::isotropic(spec.lambda * tr).add(&deps.scale(2.0 * spec.mu)));
        let direct = mohr_coulomb_return(&trial, &spec, 0.0);
        assert!((out.stress.sub(&direct.stress)).max_abs() < 1e-9);
    }

    #[test]
    fn rigid_rotation_transports_stress() {
        // enough cohesion that the uniaxial state stays elastic
        let mut spec = soil_spec();
        spec.cohesion = 1e6;
        let sig = SymTensor::new(-100e3, 0.0, 0.0, 0.0);
        let f = Mat2::rotation(90f64.to_radians());
        let out =
            rotate_stress_update(&sig, &SymTensor::ZERO, &Mat2::IDENTITY, &f, &spec, 0.0)
                .unwrap();
        assert!((out.stress.yy + 100e3).abs() < 1e-6);
        assert!(out.stress.xx.abs() < 1e-6);
    }

    #[test]
    fn eos_reference_state() {
        let w = water();
        let p = eos_pressure(&w, 999.8, 283.15).unwrap();
        assert!((p - ATM).abs() < 1e-9);
    }

    #[test]
    fn eos_linear_water_slope() {
        let w = water();
        // density 1e-3 above reference, thermal term zero; the stiff
        // coefficient amplifies the representation error of the sum
        let p = eos_pressure(&w, 999.8 + 1e-3, 283.15).unwrap();
        assert!((p - (ATM + 2e6)).abs() < 1.0);
    }

    #[test]
    fn eos_ideal_gas_value() {
        let air = EosKind::IdealGas { r: 287.0 };
        let p = eos_pressure(&air, 1.2, 288.15).unwrap();
        assert!((p - 99238.86).abs() < 0.01);
    }

    #[test]
    fn eos_errors() {
        let air = EosKind::IdealGas { r: 287.0 };
        assert!(eos_pressure(&air, 1.2, -1.0).is_err());
        let w = water();
        assert!(eos_density(&w, -1e13, 283.15).is_err());
    }

    #[test]
    fn equilibrate_single_ideal_gas() {
        let air = EosKind::IdealGas { r: 287.0 };
        let out = equilibrate_pressure(&[(&air, 1.2, 300.0)], 1.0, ATM, 1e-10, 50).unwrap();
        assert!((out.pressure - 103320.0).abs() < 1e-4);
        assert!(out.iterations <= 2, "iterations = {}", out.iterations);
        assert!((out.vol_frac[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equilibrate_single_water_reference() {
        let w = water();
        let n = 0.3;
        let out =
            equilibrate_pressure(&[(&w, n * 999.8, 283.15)], n, 2.0 * ATM, 1e-12, 50).unwrap();
        assert!((out.pressure - ATM).abs() < 1e-2);
    }

    #[test]
    fn equilibrate_water_air_mixture_matches_bisection_oracle() {
        let w = water();
        let air = EosKind::IdealGas { r: 287.0 };
        let n = 0.9;
        let fluids: [(&EosKind, f64, f64); 2] =
            [(&w, 0.5 * 999.9, 284.0), (&air, 0.41, 285.0)];
        let out = equilibrate_pressure(&fluids, n, ATM, 1e-10, 60).unwrap();
        assert!(out.residual.abs() <= 1e-8);
        // independent bisection on the same closure
        let g = |p: f64| {
            n - fluids
                .iter()
                .map(|(e, rb, t)| rb / eos_density(e, p, *t).unwrap())
                .sum::<f64>()
        };
        let (mut lo, mut hi) = (1e3, 1e9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p_oracle = 0.5 * (lo + hi);
        assert!(
            (out.pressure - p_oracle).abs() <= 1e-6 * p_oracle,
            "newton {} vs bisection {}",
            out.pressure,
            p_oracle
        );
        // both fluids exactly on their EOS at the common pressure
        for (k, (e, _, t)) in fluids.iter().enumerate() {
            let rho = eos_density(e, out.pressure, *t).unwrap();
            assert!(((1.0 / rho) - out.spec_vol[k]).abs() < 1e-12 * out.spec_vol[k]);
        }
    }

}
