//! Analytical oracles, scenario builders and the benchmark harness:
//! steady seepage through a packed column, one-dimensional consolidation
//! isochrones, a side-heated porous cavity, an underwater granular slide
//! and a base-shaken submerged slope.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::error::{Result, SimError};
use crate::exchange::{DragClosure, ExchangeTable, PairRule, PairSpec};
use crate::grid::{
    build_grid, BoundarySpec, CellField, Grid, PressureBc, ScalarBc, VelocityBc,
};
use crate::ice::FluidPhase;
use crate::materials::{eos_density, EosKind, FluidEosSpec, SolidKind, SolidModelSpec};
use crate::math::Vec2;
use crate::particles::{MotionKind, Particle, SolidPhase};
use crate::timestepper::{run, SimConfig, SimulationState};

pub const ATM: f64 = 101325.0;
const T_COLD: f64 = 278.15; // 5 C

/// Steady seepage velocity through a packed granular column under an
/// applied pressure difference dp over length l: the low-Reynolds
/// permeability form divided by the porosity.
pub fn darcy_velocity_analytic(
    phi_s: f64,
    d_p: f64,
    mu_f: f64,
    porosity: f64,
    dp: f64,
    l: f64,
) -> f64 {
    let e = 1.0 - phi_s;
    (1.0 / porosity) * d_p * d_p * e * e * e / (180.0 * mu_f * phi_s * phi_s) * dp / l
}

/// Normalized excess pore pressure of one-dimensional consolidation under
/// a step load: series sum over odd half-modes, z measured from the
/// drainage face toward the impermeable base.
pub fn terzaghi_pressure_analytic(z_over_h: f64, t_v: f64, f_ext: f64, terms: usize) -> f64 {
    let mut p = 0.0;
    for m in 0..terms {
        let big_m = std::f64::consts::FRAC_PI_2 * (2.0 * m as f64 + 1.0);
        p += 2.0 * f_ext / big_m * (big_m * z_over_h).sin() * (-big_m * big_m * t_v).exp();
    }
    p
}

/// The same series for a load ramped linearly over the first t_v_ramp of
/// normalized time, exact by superposition; valid for t_v >= t_v_ramp.
pub fn terzaghi_pressure_ramped(
    z_over_h: f64,
    t_v: f64,
    t_v_ramp: f64,
    f_ext: f64,
    terms: usize,
) -> f64 {
    if t_v_ramp <= 0.0 {
        return terzaghi_pressure_analytic(z_over_h, t_v, f_ext, terms);
    }
    let mut p = 0.0;
    for m in 0..terms {
        let big_m = std::f64::consts::FRAC_PI_2 * (2.0 * m as f64 + 1.0);
        let om = big_m * big_m;
        let chi = ((-om * (t_v - t_v_ramp)).exp() - (-om * t_v).exp()) / (om * t_v_ramp);
        p += 2.0 * f_ext / big_m * (big_m * z_over_h).sin() * chi;
    }
    p
}

/// Oedometer (constrained) modulus from Young's modulus and Poisson ratio.
pub fn oedometer_modulus(e: f64, nu: f64) -> f64 {
    e * (1.0 - nu) / ((1.0 + nu) * (1.0 - 2.0 * nu))
}

/// Consolidation coefficient from the permeability form of the drag
/// closure: E_v n^3 d^2 / (180 (1-n)^2 mu).
pub fn consolidation_coefficient(e_v: f64, porosity: f64, d_p: f64, mu: f64) -> f64 {
    let n = porosity;
    e_v * n * n * n * d_p * d_p / (180.0 * (1.0 - n) * (1.0 - n) * mu)
}

pub type Overrides = BTreeMap<String, f64>;

pub const SCENARIOS: [&str; 5] = [
    "darcy_column",
    "consolidation_column",
    "thermal_cavity",
    "debris_flow_mini",
    "shaking_slope_mini",
];

fn water_eos(bulk_modulus: f64, rho_ref: f64) -> EosKind {
    EosKind::LinearWater {
        p_ref: ATM,
        t_ref: T_COLD,
        rho_ref,
        k: bulk_modulus / rho_ref,
        alpha: 0.18,
    }
}

fn water_fluid(bulk_modulus: f64, rho_ref: f64, viscosity: f64) -> FluidEosSpec {
    FluidEosSpec {
        eos: water_eos(bulk_modulus, rho_ref),
        viscosity,
        c_v: 4181.0,
        conductivity: 0.598,
    }
}

fn take(ov: &mut Overrides, key: &str, default: f64) -> f64 {
    ov.remove(key).unwrap_or(default)
}

fn finish_overrides(ov: Overrides) -> Result<()> {
    if let Some((k, _)) = ov.into_iter().next() {
        return Err(SimError::Config(format!("unknown scenario override '{k}'")));
    }
    Ok(())
}

/// Geometric porosity of the initial particle layout, computed with the
/// same scatter and transfer the solver itself uses so the first
/// equilibration exactly reproduces the initialization pressure.
pub fn geometric_porosity(
    solids: &[SolidPhase],
    grid: &Grid,
    bspec: &BoundarySpec,
) -> Result<CellField<f64>> {
    let mut n = CellField::filled(grid, 1.0);
    for phase in solids {
        let (mut st, _) = crate::particles::particles_to_grid(phase, grid, 0.0)?;
        crate::particles::fold_symmetry_ghosts(&mut st, grid, bspec);
        let cs = crate::particles::nodes_to_cells(&st, grid);
        for k in 0..n.data.len() {
            n.data[k] -= cs.phi.data[k];
        }
    }
    for v in n.data.iter_mut() {
        *v = v.clamp(1e-6, 1.0);
    }
    Ok(n)
}

/// Fills a fluid's cell state hydrostatically against the geometric
/// porosity field; `region` gives (pore-space share, temperature) where
/// this fluid is present, None elsewhere.
pub fn init_hydrostatic_fluid(
    fluid: &mut FluidPhase,
    grid: &Grid,
    pressure: &CellField<f64>,
    porosity: &CellField<f64>,
    region: impl Fn(usize, usize) -> Option<(f64, f64)>,
) -> Result<()> {
    let (cx, cy) = grid.cells_tot();
    for j in 0..cy {
        for i in 0..cx {
            match region(i, j) {
                Some((share, temp)) => {
                    let rho = eos_density(&fluid.spec.eos, pressure.get(i, j), temp)?;
                    let phi = share * porosity.get(i, j);
                    fluid.rho_bar.set(i, j, phi * rho);
                    fluid.temp.set(i, j, temp);
                    fluid.spec_vol.set(i, j, 1.0 / rho);
                    fluid.phi.set(i, j, phi);
                }
                None => {
                    fluid.rho_bar.set(i, j, 0.0);
                    fluid.temp.set(i, j, fluid.ref_temp);
                    fluid.spec_vol.set(i, j, fluid.ref_spec_vol);
                    fluid.phi.set(i, j, 0.0);
                }
            }
        }
    }
    // density floor from the seeded cells
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in grid.interior_y() {
        for i in grid.interior_x() {
            let rb = fluid.rho_bar.get(i, j);
            if rb > 0.0 {
                sum += rb;
                count += 1;
            }
        }
    }
    if count > 0 {
        fluid.rho_floor = 1e-12 * (sum / count as f64);
    }
    Ok(())
}

/// Column-wise hydrostatic pressure from a per-cell dominant-fluid EOS and
/// temperature, anchored at `surface_pressure` on the domain top face.
pub fn hydrostatic_pressure(
    grid: &Grid,
    gravity_y: f64,
    surface_pressure: f64,
    eos_at: impl Fn(usize, usize) -> (EosKind, f64),
) -> Result<CellField<f64>> {
    let (cx, cy) = grid.cells_tot();
    let mut p = CellField::filled(grid, surface_pressure);
    if gravity_y == 0.0 {
        return Ok(p);
    }
    for i in 0..cx {
        // top interior cell: half-step from the surface
        let j_top = grid.ghost + grid.ny - 1;
        let (eos, t) = eos_at(i, j_top);
        let mut p_top = surface_pressure;
        for _ in 0..50 {
            let rho = eos_density(&eos, p_top, t)?;
            let next = surface_pressure - rho * gravity_y * 0.5 * grid.dy;
            if (next - p_top).abs() <= 1e-12 * p_top.abs().max(1.0) {
                p_top = next;
                break;
            }
            p_top = next;
        }
        p.set(i, j_top, p_top);
        // integrate downward with the face-balance relation
        for j in (0..j_top).rev() {
            let (eos_hi, t_hi) = eos_at(i, j + 1);
            let (eos_lo, t_lo) = eos_at(i, j);
            let p_hi = p.get(i, j + 1);
            let v_hi = 1.0 / eos_density(&eos_hi, p_hi, t_hi)?;
            let mut p_lo = p_hi + grid.dy / v_hi * (-gravity_y);
            for _ in 0..100 {
                let v_lo = 1.0 / eos_density(&eos_lo, p_lo, t_lo)?;
                let hm = 2.0 * v_lo * v_hi / (v_lo + v_hi);
                let res = hm * (p_hi - p_lo) / grid.dy - gravity_y;
                let step = res / (hm / grid.dy);
                p_lo += step;
                if res.abs() <= 1e-13 * (-gravity_y).abs().max(1.0) {
                    break;
                }
            }
            p.set(i, j, p_lo);
        }
        // fill cells above the top interior row (ghosts) by extrapolation
        for j in j_top + 1..cy {
            let (eos, t) = eos_at(i, j - 1);
            let rho = eos_density(&eos, p.get(i, j - 1), t)?;
            p.set(i, j, p.get(i, j - 1) + rho * gravity_y * grid.dy);
        }
    }
    Ok(p)
}

/// Lays particles on a regular ppc x ppc lattice in every cell whose
/// center satisfies `inside`, extending `pad` ghost cells on the listed
/// axes sides when a fixed body runs through an open boundary.
#[allow(clippy::too_many_arguments)]
fn seed_particles(
    grid: &Grid,
    ppc: usize,
    phi_s: f64,
    grain_density: f64,
    temp: f64,
    pad_x: bool,
    inside: impl Fn(Vec2) -> bool,
) -> Vec<Particle> {
    let mut out = Vec::new();
    let vcell = grid.cell_volume();
    let vp = phi_s * vcell / (ppc * ppc) as f64;
    let g = grid.ghost as isize;
    let (x0, x1) = if pad_x {
        (g - 1, g + grid.nx as isize + 1)
    } else {
        (g, g + grid.nx as isize)
    };
    for cj in g..g + grid.ny as isize {
        for ci in x0..x1 {
            for oy in 0..ppc {
                for ox in 0..ppc {
                    let pos = Vec2::new(
                        grid.origin.x + (ci - g) as f64 * grid.dx
                            + (ox as f64 + 0.5) * grid.dx / ppc as f64,
                        grid.origin.y + (cj - g) as f64 * grid.dy
                            + (oy as f64 + 0.5) * grid.dy / ppc as f64,
                    );
                    if inside(pos) {
                        out.push(Particle::at_rest(pos, vp * grain_density, vp, temp));
                    }
                }
            }
        }
    }
    out
}

/// Builds a fully initialized state for one of the named scenarios.
pub fn build_scenario(name: &str, overrides: &Overrides) -> Result<SimulationState> {
    let mut ov = overrides.clone();
    let state = match name {
        "darcy_column" => darcy_column(&mut ov)?,
        "consolidation_column" => consolidation_column(&mut ov)?,
        "thermal_cavity" => thermal_cavity(&mut ov)?,
        "debris_flow_mini" => debris_flow_mini(&mut ov)?,
        "shaking_slope_mini" => shaking_slope_mini(&mut ov)?,
        other => {
            return Err(SimError::UnknownScenario(
                other.into(),
                SCENARIOS.join(", "),
            ))
        }
    };
    finish_overrides(ov)?;
    Ok(state)
}

/// Water seeping through a fixed packed column of grains, driven by a
/// uniform pressure-gradient-equivalent body force on the water, with
/// open column ends. The steady interior velocity is the probe.
fn darcy_column(ov: &mut Overrides) -> Result<SimulationState> {
    let phi_s = take(ov, "phi_s", 0.7);
    let dp_atm = take(ov, "dp_atm", 1.0);
    let cell = take(ov, "cell_size", 0.05);
    let length = take(ov, "length", 1.0);
    let grain = take(ov, "grain_size", 1e-3);
    let porosity = 1.0 - phi_s;

    let grid = build_grid(&[length], &[cell], 1)?;
    let mut bspec = BoundarySpec::all_symmetry();
    bspec.x_minus.velocity = VelocityBc::Open;
    bspec.x_plus.velocity = VelocityBc::Open;
    // pinned end pressures remove the neutral linear-tilt mode of the
    // force-driven open column
    bspec.x_minus.pressure = PressureBc::Dirichlet(ATM);
    bspec.x_plus.pressure = PressureBc::Dirichlet(ATM);

    let (lambda, mu) = SolidModelSpec::from_youngs(10e6, 0.3);
    let mut spec = SolidModelSpec::elastic(lambda, mu, 2650.0);
    spec.grain_size = grain;
    spec.c_v = 835.0;
    let particles = seed_particles(&grid, 1, phi_s, 2650.0, T_COLD, true, |_| true);
    let solid = SolidPhase {
        name: "skeleton".into(),
        spec,
        motion: MotionKind::Fixed,
        half_width: Vec2::new(grid.dx / 2.0, grid.dy / 2.0),
        seed_fraction: phi_s,
        particles,
    };

    let mut water = FluidPhase::uniform(
        "water",
        water_fluid(2e9, 998.0, 1e-3),
        &grid,
        porosity * 998.0,
        T_COLD,
    )?;
    water.driving_force = Vec2::new(dp_atm * ATM / length, 0.0);
    let n_geom = geometric_porosity(std::slice::from_ref(&solid), &grid, &bspec)?;
    let p_uniform = CellField::filled(&grid, ATM);
    init_hydrostatic_fluid(&mut water, &grid, &p_uniform, &n_geom, |_, _| {
        Some((1.0, T_COLD))
    })?;

    let mut table = ExchangeTable::new(2);
    table.set(
        0,
        1,
        PairSpec {
            rule: PairRule::PorousDrag(DragClosure::KozenyCarman),
            heat_coeff: 0.0,
        },
    );

    let mut st = SimulationState::new(
        grid,
        bspec,
        Vec2::ZERO,
        vec![solid],
        vec![water],
        table,
        SimConfig::default(),
    );
    st.pressure = CellField::filled(&st.grid, ATM);
    Ok(st)
}

/// Saturated elastic column loaded at the drained top face; pore-pressure
/// isochrones diffuse per the consolidation solution.
fn consolidation_column(ov: &mut Overrides) -> Result<SimulationState> {
    let phi_s = take(ov, "phi_s", 0.7);
    let load = take(ov, "load", 10e3);
    let cells = take(ov, "cells", 100.0) as usize;
    let height = take(ov, "height", 1.0);
    let grain = take(ov, "grain_size", 1e-3);
    let ramp = take(ov, "load_ramp_time", 4e-3);
    // free water above the column feeds the drainage face so the
    // receding loaded surface never starves its cell of pore water
    let reservoir = take(ov, "reservoir", 0.1 * height);
    let porosity = 1.0 - phi_s;
    let dy = height / cells as f64;
    let reservoir_cells = (reservoir / dy).round().max(1.0);
    let total_height = height + reservoir_cells * dy;

    let grid = build_grid(&[dy, total_height], &[dy, dy], 1)?;
    let mut bspec = BoundarySpec::all_symmetry();
    bspec.y_plus.velocity = VelocityBc::Open;
    bspec.y_plus.pressure = PressureBc::Dirichlet(ATM);

    let (lambda, mu) = SolidModelSpec::from_youngs(10e6, 0.3);
    let mut spec = SolidModelSpec::elastic(lambda, mu, 2650.0);
    spec.grain_size = grain;
    let mut particles =
        seed_particles(&grid, 1, phi_s, 2650.0, T_COLD, false, |p| p.y < height);
    // the top row of particles carries the external load
    let y_top = height - 0.5 * dy;
    let per_col_force = load * dy; // unit depth
    let mut n_top = 0;
    for p in particles.iter_mut() {
        if (p.pos.y - y_top).abs() < 0.25 * dy {
            n_top += 1;
        }
    }
    for p in particles.iter_mut() {
        if (p.pos.y - y_top).abs() < 0.25 * dy {
            p.ext_force = Vec2::new(0.0, -per_col_force / n_top as f64);
        }
    }
    let solid = SolidPhase {
        name: "skeleton".into(),
        spec,
        motion: MotionKind::Free,
        half_width: Vec2::new(dy / 2.0, dy / 2.0),
        seed_fraction: phi_s,
        particles,
    };

    let mut water = FluidPhase::uniform(
        "water",
        water_fluid(2e9, 998.0, 1e-3),
        &grid,
        porosity * 998.0,
        T_COLD,
    )?;
    let n_geom = geometric_porosity(std::slice::from_ref(&solid), &grid, &bspec)?;
    let p_uniform = CellField::filled(&grid, ATM);
    init_hydrostatic_fluid(&mut water, &grid, &p_uniform, &n_geom, |_, _| {
        Some((1.0, T_COLD))
    })?;

    let mut table = ExchangeTable::new(2);
    table.set(
        0,
        1,
        PairSpec {
            rule: PairRule::PorousDrag(DragClosure::KozenyCarman),
            heat_coeff: 0.0,
        },
    );

    let mut config = SimConfig::default();
    config.load_ramp_time = ramp;
    let mut st = SimulationState::new(
        grid,
        bspec,
        Vec2::ZERO,
        vec![solid],
        vec![water],
        table,
        config,
    );
    st.pressure = CellField::filled(&st.grid, ATM);
    Ok(st)
}

/// Square saturated porous cavity with differentially heated side walls;
/// initialized at the conductive temperature profile and the matching
/// hydrostatic pressure so the flow that develops is the buoyant
/// circulation alone.
fn thermal_cavity(ov: &mut Overrides) -> Result<SimulationState> {
    let delta_t = take(ov, "delta_t", 1.0);
    let cell = take(ov, "cell_size", 0.05);
    let size = take(ov, "size", 1.0);
    let phi_s = take(ov, "phi_s", 0.6);
    let porosity = 1.0 - phi_s;

    let grid = build_grid(&[size, size], &[cell, cell], 1)?;
    let t_left = T_COLD + 0.5 * delta_t;
    let t_right = T_COLD - 0.5 * delta_t;
    let mut bspec = BoundarySpec::default(); // no-slip everywhere
    bspec.x_minus.temperature = ScalarBc::Dirichlet(t_left);
    bspec.x_plus.temperature = ScalarBc::Dirichlet(t_right);

    let temp_at = |x: f64| t_left + (t_right - t_left) * (x / size).clamp(0.0, 1.0);

    let (lambda, mu) = SolidModelSpec::from_youngs(1e9, 0.3);
    let mut spec = SolidModelSpec::elastic(lambda, mu, 2500.0);
    spec.c_v = 835.0;
    spec.conductivity = 0.4;
    spec.grain_size = 1e-3;
    let mut particles = seed_particles(&grid, 2, phi_s, 2500.0, T_COLD, false, |_| true);
    for p in particles.iter_mut() {
        p.temp = temp_at(p.pos.x);
    }
    let solid = SolidPhase {
        name: "matrix".into(),
        spec,
        motion: MotionKind::Fixed,
        half_width: Vec2::new(grid.dx / 4.0, grid.dy / 4.0),
        seed_fraction: phi_s,
        particles,
    };

    let gravity = Vec2::new(0.0, -9.81);
    let eos = water_eos(2e9, 998.0);
    let p0 = {
        let g = &grid;
        let eos = eos.clone();
        hydrostatic_pressure(g, gravity.y, ATM, move |i, _j| {
            let x = g.cell_center(i, 0).x;
            (eos.clone(), temp_at(x))
        })?
    };
    let mut water = FluidPhase::uniform(
        "water",
        water_fluid(2e9, 998.0, 1e-3),
        &grid,
        porosity * 998.0,
        T_COLD,
    )?;
    {
        let g = &grid;
        let n_geom = geometric_porosity(std::slice::from_ref(&solid), g, &bspec)?;
        init_hydrostatic_fluid(&mut water, g, &p0, &n_geom, |i, _j| {
            let x = g.cell_center(i, 0).x;
            Some((1.0, temp_at(x)))
        })?;
    }

    let mut table = ExchangeTable::new(2);
    table.set(
        0,
        1,
        PairSpec {
            rule: PairRule::PorousDrag(DragClosure::BeetstraVanDerHoef),
            heat_coeff: 1e6,
        },
    );

    let mut st = SimulationState::new(
        grid,
        bspec,
        gravity,
        vec![solid],
        vec![water],
        table,
        SimConfig::default(),
    );
    st.pressure = p0;
    Ok(st)
}

/// Cohesive saturated granular wedge released on a fixed incline under
/// water with an air layer on top; closed box.
fn debris_flow_mini(ov: &mut Overrides) -> Result<SimulationState> {
    let cell = take(ov, "cell_size", 0.05);
    let width = take(ov, "width", 4.0);
    let height = take(ov, "height", 2.0);
    let water_level = take(ov, "water_level", 1.8);
    let phi_s = take(ov, "phi_s", 0.6);
    let porosity = 1.0 - phi_s;

    let grid = build_grid(&[width, height], &[cell, cell], 1)?;
    let mut bspec = BoundarySpec::default(); // dirichlet velocity 0
    for side in [
        &mut bspec.x_minus,
        &mut bspec.x_plus,
        &mut bspec.y_minus,
        &mut bspec.y_plus,
    ] {
        side.temperature = ScalarBc::Dirichlet(T_COLD);
    }

    // geometry: incline from (0, 1.5) to (1.5, 0); sand right triangle on
    // the incline; bed is the wedge below the incline line
    let bed_surface = |x: f64| (1.5 - x).max(0.0);
    let in_bed = |p: Vec2| p.y < bed_surface(p.x);
    let in_sand = |p: Vec2| {
        let lo = bed_surface(p.x);
        p.x >= 0.1 && p.x <= 0.75 && p.y > lo && p.y < 1.4 - (p.x - 0.1)
    };

    // rigid bed
    let bed_spec = SolidModelSpec::elastic(8.78e8, 4.38e8, 8900.0);
    let bed = SolidPhase {
        name: "bed".into(),
        spec: bed_spec,
        motion: MotionKind::Fixed,
        half_width: Vec2::new(grid.dx / 4.0, grid.dy / 4.0),
        seed_fraction: 1.0,
        particles: seed_particles(&grid, 2, 1.0, 8900.0, T_COLD, false, in_bed),
    };

    // cohesive sand: yield governed by cohesion alone
    let grain_density = (1985.0 - porosity * 999.8) / phi_s;
    let (lambda, mu) = SolidModelSpec::from_youngs(50e6, 0.25);
    let sand_spec = SolidModelSpec {
        kind: SolidKind::NeoHookeanMohrCoulomb,
        lambda,
        mu,
        cohesion: 200.0,
        phi_peak: 0.0,
        phi_res: 0.0,
        kappa_res: 0.1,
        c_v: 835.0,
        conductivity: 0.4,
        grain_density,
        grain_size: 1e-3,
    };
    let sand = SolidPhase {
        name: "sand".into(),
        spec: sand_spec,
        motion: MotionKind::Free,
        half_width: Vec2::new(grid.dx / 4.0, grid.dy / 4.0),
        seed_fraction: phi_s,
        particles: seed_particles(&grid, 2, phi_s, grain_density, T_COLD, false, in_sand),
    };

    // hydrostatic initialization through air and water
    let gravity = Vec2::new(0.0, -9.81);
    let w_eos = water_eos(2.15e9, 999.8);
    let air_r = ATM / (1.177 * T_COLD); // density as stated at 1 atm, 5 C
    let a_eos = EosKind::IdealGas { r: air_r };
    let p0 = {
        let g = &grid;
        let (w, a) = (w_eos.clone(), a_eos.clone());
        hydrostatic_pressure(g, gravity.y, ATM, move |i, j| {
            let y = g.cell_center(i, j).y;
            if y > water_level {
                (a.clone(), T_COLD)
            } else {
                (w.clone(), T_COLD)
            }
        })?
    };

    let mut water = FluidPhase::uniform(
        "water",
        FluidEosSpec {
            eos: w_eos,
            viscosity: 855e-6,
            c_v: 4181.0,
            conductivity: 0.598,
        },
        &grid,
        porosity * 999.8,
        T_COLD,
    )?;
    let n_geom = geometric_porosity(&[bed.clone(), sand.clone()], &grid, &bspec)?;
    {
        let g = &grid;
        init_hydrostatic_fluid(&mut water, g, &p0, &n_geom, move |i, j| {
            let c = g.cell_center(i, j);
            if c.y > water_level {
                None
            } else {
                Some((1.0, T_COLD))
            }
        })?;
    }
    let mut air = FluidPhase::uniform(
        "air",
        FluidEosSpec {
            eos: a_eos,
            viscosity: 18.45e-6,
            c_v: 717.0,
            conductivity: 0.024,
        },
        &grid,
        1.177,
        T_COLD,
    )?;
    {
        let g = &grid;
        init_hydrostatic_fluid(&mut air, g, &p0, &n_geom, move |i, j| {
            let c = g.cell_center(i, j);
            if c.y > water_level {
                Some((1.0, T_COLD))
            } else {
                None
            }
        })?;
    }

    // materials: 0 bed, 1 sand, 2 water, 3 air
    let mut table = ExchangeTable::new(4);
    let drag = PairSpec {
        rule: PairRule::PorousDrag(DragClosure::BeetstraVanDerHoef),
        heat_coeff: 0.0,
    };
    let rigid = PairSpec {
        rule: PairRule::RigidCoupling(1e12),
        heat_coeff: 0.0,
    };
    table.set(1, 2, drag);
    table.set(1, 3, drag);
    table.set(0, 2, rigid);
    table.set(0, 3, rigid);
    table.set(
        2,
        3,
        PairSpec {
            rule: PairRule::FluidFluid(1e5),
            heat_coeff: 0.0,
        },
    );
    // bed-sand stays contact-only

    let mut st = SimulationState::new(
        grid,
        bspec,
        gravity,
        vec![bed, sand],
        vec![water, air],
        table,
        SimConfig::default(),
    );
    st.set_contact_friction(0, 1, 0.1);
    st.pressure = p0;
    Ok(st)
}

/// Submerged frictional slope on a rigid base plate driven by a
/// sinusoidal horizontal base velocity; symmetric box, air layer on top.
fn shaking_slope_mini(ov: &mut Overrides) -> Result<SimulationState> {
    let cell = take(ov, "cell_size", 0.25);
    let width = take(ov, "width", 32.0);
    let height = take(ov, "height", 12.0);
    let water_level = take(ov, "water_level", 10.0);
    let slope_height = take(ov, "slope_height", 6.0);
    let shake_accel = take(ov, "shake_accel", 9.81);
    let shake_freq = take(ov, "shake_freq", 2.0);
    let shake_duration = take(ov, "shake_duration", 6.0);
    let phi_s = take(ov, "phi_s", 0.7);
    let porosity = 1.0 - phi_s;

    let grid = build_grid(&[width, height], &[cell, cell], 1)?;
    let mut bspec = BoundarySpec::all_symmetry();
    bspec.y_plus.pressure = PressureBc::ZeroGradient;

    let base_top = 2.0 * cell;
    let crest_x = take(ov, "crest_x", 8.0);
    let toe_x = crest_x + slope_height; // 45 degree face
    let soil_surface = move |x: f64| {
        if x <= crest_x {
            base_top + slope_height
        } else if x < toe_x {
            base_top + slope_height - (x - crest_x)
        } else {
            base_top
        }
    };
    let in_base = move |p: Vec2| p.y < base_top && p.x > 0.5 && p.x < width - 0.5;
    let in_soil = move |p: Vec2| p.y >= base_top && p.y < soil_surface(p.x);

    let base_spec = SolidModelSpec::elastic(8.78e8, 4.38e8, 8900.0);
    let base = SolidPhase {
        name: "base".into(),
        spec: base_spec,
        motion: MotionKind::Shaken {
            accel: shake_accel,
            freq: shake_freq,
            duration: shake_duration,
        },
        half_width: Vec2::new(grid.dx / 4.0, grid.dy / 4.0),
        seed_fraction: 1.0,
        particles: seed_particles(&grid, 2, 1.0, 8900.0, T_COLD, false, in_base),
    };

    let (lambda, mu) = SolidModelSpec::from_youngs(10e6, 0.3);
    let soil_spec = SolidModelSpec {
        kind: SolidKind::NeoHookeanMohrCoulomb,
        lambda,
        mu,
        cohesion: 0.0,
        phi_peak: 45f64.to_radians(),
        phi_res: 10f64.to_radians(),
        kappa_res: 0.1,
        c_v: 835.0,
        conductivity: 0.4,
        grain_density: 2650.0,
        grain_size: 1e-7,
    };
    let soil = SolidPhase {
        name: "soil".into(),
        spec: soil_spec,
        motion: MotionKind::Free,
        half_width: Vec2::new(grid.dx / 4.0, grid.dy / 4.0),
        seed_fraction: phi_s,
        particles: seed_particles(&grid, 2, phi_s, 2650.0, T_COLD, false, in_soil),
    };

    let gravity = Vec2::new(0.0, -9.81);
    let w_eos = water_eos(2e9, 999.8);
    let air_r = ATM / (1.177 * T_COLD);
    let a_eos = EosKind::IdealGas { r: air_r };
    let p0 = {
        let g = &grid;
        let (w, a) = (w_eos.clone(), a_eos.clone());
        hydrostatic_pressure(g, gravity.y, ATM, move |i, j| {
            let y = g.cell_center(i, j).y;
            if y > water_level {
                (a.clone(), T_COLD)
            } else {
                (w.clone(), T_COLD)
            }
        })?
    };

    let mut water = FluidPhase::uniform(
        "water",
        water_fluid(2e9, 999.8, 1e-3),
        &grid,
        porosity * 999.8,
        T_COLD,
    )?;
    let n_geom = geometric_porosity(&[base.clone(), soil.clone()], &grid, &bspec)?;
    {
        let g = &grid;
        init_hydrostatic_fluid(&mut water, g, &p0, &n_geom, move |i, j| {
            let c = g.cell_center(i, j);
            if c.y > water_level {
                None
            } else {
                Some((1.0, T_COLD))
            }
        })?;
    }
    let mut air = FluidPhase::uniform(
        "air",
        FluidEosSpec {
            eos: a_eos,
            viscosity: 18.45e-6,
            c_v: 717.0,
            conductivity: 0.024,
        },
        &grid,
        1.177,
        T_COLD,
    )?;
    {
        let g = &grid;
        init_hydrostatic_fluid(&mut air, g, &p0, &n_geom, move |i, j| {
            let c = g.cell_center(i, j);
            if c.y > water_level {
                Some((1.0, T_COLD))
            } else {
                None
            }
        })?;
    }

    // materials: 0 base, 1 soil, 2 water, 3 air
    let mut table = ExchangeTable::new(4);
    let drag = PairSpec {
        rule: PairRule::PorousDrag(DragClosure::BeetstraVanDerHoef),
        heat_coeff: 0.0,
    };
    let rigid = PairSpec {
        rule: PairRule::RigidCoupling(1e12),
        heat_coeff: 0.0,
    };
    table.set(1, 2, drag);
    table.set(1, 3, drag);
    table.set(0, 2, rigid);
    table.set(0, 3, rigid);
    table.set(
        2,
        3,
        PairSpec {
            rule: PairRule::FluidFluid(1e5),
            heat_coeff: 0.0,
        },
    );

    let mut st = SimulationState::new(
        grid,
        bspec,
        gravity,
        vec![base, soil],
        vec![water, air],
        table,
        SimConfig::default(),
    );
    st.set_contact_friction(0, 1, 0.1);
    st.pressure = p0;
    Ok(st)
}

/// A closed water tank in hydrostatic equilibrium, used by the
/// quiescence property checks.
pub fn quiescent_tank_state(nx: usize, ny: usize, cell: f64) -> Result<SimulationState> {
    let grid = build_grid(&[nx as f64 * cell, ny as f64 * cell], &[cell, cell], 1)?;
    let gravity = Vec2::new(0.0, -9.81);
    let eos = water_eos(2e9, 998.0);
    let p0 = {
        let g = &grid;
        let eos = eos.clone();
        hydrostatic_pressure(g, gravity.y, ATM, move |_, _| (eos.clone(), T_COLD))?
    };
    let mut water = FluidPhase::uniform(
        "water",
        water_fluid(2e9, 998.0, 1e-3),
        &grid,
        998.0,
        T_COLD,
    )?;
    let n_one = CellField::filled(&grid, 1.0);
    init_hydrostatic_fluid(&mut water, &grid, &p0, &n_one, |_, _| Some((1.0, T_COLD)))?;
    let mut st = SimulationState::new(
        grid,
        BoundarySpec::default(),
        gravity,
        vec![],
        vec![water],
        ExchangeTable::new(1),
        SimConfig::default(),
    );
    st.pressure = p0;
    Ok(st)
}

#[derive(Debug, Clone)]
pub struct BenchmarkProbe {
    pub label: String,
    pub simulated: f64,
    pub reference: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl BenchmarkProbe {
    pub fn relative(label: &str, simulated: f64, reference: f64, tol: f64) -> Self {
        let rel = (simulated - reference).abs() / reference.abs().max(1e-300);
        BenchmarkProbe {
            label: label.into(),
            simulated,
            reference,
            rel_error: rel,
            tolerance: tol,
            pass: rel <= tol,
        }
    }

    pub fn bound(label: &str, value: f64, bound: f64) -> Self {
        BenchmarkProbe {
            label: label.into(),
            simulated: value,
            reference: bound,
            rel_error: value,
            tolerance: bound,
            pass: value <= bound,
        }
    }

    pub fn flag(label: &str, ok: bool) -> Self {
        BenchmarkProbe {
            label: label.into(),
            simulated: if ok { 1.0 } else { 0.0 },
            reference: 1.0,
            rel_error: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            pass: ok,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub name: String,
    pub probes: Vec<BenchmarkProbe>,
    pub pass: bool,
    pub runtime_seconds: f64,
}

impl BenchmarkReport {
    fn finish(name: &str, probes: Vec<BenchmarkProbe>, started: Instant) -> Self {
        let pass = probes.iter().all(|p| p.pass);
        BenchmarkReport {
            name: name.into(),
            probes,
            pass,
            runtime_seconds: started.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchConfig {
    pub overrides: Overrides,
    /// Relative tolerance for the quantitative comparisons.
    pub tolerance: Option<f64>,
    /// Shrink the probe matrix for quick runs.
    pub quick: bool,
}

/// Runs one named benchmark and compares against its oracle or property
/// suite.
pub fn run_benchmark(name: &str, cfg: &BenchConfig) -> Result<BenchmarkReport> {
    match name {
        "darcy" => darcy_benchmark(cfg),
        "consolidation" => consolidation_benchmark(cfg),
        "thermal_cavity" => cavity_benchmark(cfg),
        "debris_flow" => debris_benchmark(cfg),
        "shaking_slope" => slope_benchmark(cfg),
        other => Err(SimError::UnknownScenario(
            other.into(),
            "darcy, consolidation, thermal_cavity, debris_flow, shaking_slope".into(),
        )),
    }
}

pub const BENCHMARKS: [&str; 5] = [
    "darcy",
    "consolidation",
    "thermal_cavity",
    "debris_flow",
    "shaking_slope",
];

/// Mean interior seepage velocity of the column at the end of a run.
fn darcy_probe_velocity(st: &SimulationState) -> f64 {
    let g = &st.grid;
    let mut sum = 0.0;
    let mut count = 0;
    for j in g.interior_y() {
        for i in g.interior_x() {
            let x = g.cell_center(i, j).x;
            if (0.25..0.75).contains(&x) {
                sum += st.fluids[0].vel.get(i, j).x;
                count += 1;
            }
        }
    }
    sum / count as f64
}

fn darcy_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let tol = cfg.tolerance.unwrap_or(0.05);
    let phis: &[f64] = if cfg.quick {
        &[0.7]
    } else {
        &[0.6, 0.62, 0.66, 0.68, 0.7]
    };
    let dps: &[f64] = if cfg.quick { &[1.0] } else { &[0.25, 0.5, 1.0] };
    let mut probes = Vec::new();
    for &phi_s in phis {
        for &dp_atm in dps {
            let mut ov = cfg.overrides.clone();
            ov.insert("phi_s".into(), phi_s);
            ov.insert("dp_atm".into(), dp_atm);
            let t_end = ov.remove("t_end").unwrap_or(0.02);
            let st = build_scenario("darcy_column", &ov)?;
            let out = run(st, t_end, |_, _| Ok(()))?;
            let sim = darcy_probe_velocity(&out);
            let oracle =
                darcy_velocity_analytic(phi_s, 1e-3, 1e-3, 1.0 - phi_s, dp_atm * ATM, 1.0);
            probes.push(BenchmarkProbe::relative(
                &format!("U_f phi_s={phi_s} dp={dp_atm} atm"),
                sim,
                oracle,
                tol,
            ));
        }
    }
    Ok(BenchmarkReport::finish("darcy", probes, started))
}

/// Excess pore pressure profile against the ramped series solution at a
/// set of normalized times; relative L2 error per isochrone.
fn consolidation_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let tol = cfg.tolerance.unwrap_or(0.05);
    let mut ov = cfg.overrides.clone();
    let t_vs: &[f64] = if cfg.quick {
        &[0.1]
    } else {
        &[0.1, 0.2, 0.5]
    };
    let load = ov.get("load").copied().unwrap_or(10e3);
    let height = ov.get("height").copied().unwrap_or(1.0);
    let phi_s = ov.get("phi_s").copied().unwrap_or(0.7);
    let grain = ov.get("grain_size").copied().unwrap_or(1e-3);
    let _ = ov.remove("t_end");
    let st = build_scenario("consolidation_column", &ov)?;
    let ramp = st.config.load_ramp_time;
    let e_v = oedometer_modulus(10e6, 0.3);
    let c_v = consolidation_coefficient(e_v, 1.0 - phi_s, grain, 1e-3);
    let t_of = |t_v: f64| t_v * height * height / c_v;
    let t_v_ramp = c_v * ramp / (height * height);

    let mut probes = Vec::new();
    let grid = st.grid.clone();
    let mut state = st;
    for &t_v in t_vs {
        state = run(state, t_of(t_v), |_, _| Ok(()))?;
        // isochrone over the soil region: excess pressure vs depth from
        // the drainage face at the column top
        let mut num = 0.0;
        let mut den = 0.0;
        for j in grid.interior_y() {
            let y = grid.cell_center(grid.ghost, j).y;
            if y > height {
                continue;
            }
            let z_over_h = (height - y) / height;
            let sim = state.pressure.get(grid.ghost, j) - ATM;
            let ana = terzaghi_pressure_ramped(z_over_h, t_v, t_v_ramp, load, 200);
            num += (sim - ana) * (sim - ana);
            den += ana * ana;
        }
        let l2 = (num / den.max(1e-300)).sqrt();
        probes.push(BenchmarkProbe::bound(
            &format!("isochrone L2 error at T_v={t_v}"),
            l2,
            tol,
        ));
    }
    Ok(BenchmarkReport::finish("consolidation", probes, started))
}

/// Cavity checks: no flow without a temperature difference; with one, a
/// single circulation whose velocity field is antisymmetric about the
/// horizontal midline, and balanced wall heat fluxes.
fn cavity_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let mut probes = Vec::new();

    // zero difference: stays quiescent
    {
        let mut ov = cfg.overrides.clone();
        ov.insert("delta_t".into(), 0.0);
        let _ = ov.remove("t_end");
        let st = build_scenario("thermal_cavity", &ov)?;
        let dt = crate::timestepper::compute_dt(&st)?;
        let out = run(st, 100.0 * dt, |_, _| Ok(()))?;
        let mut umax = 0.0f64;
        for j in out.grid.interior_y() {
            for i in out.grid.interior_x() {
                umax = umax.max(out.fluids[0].vel.get(i, j).norm());
            }
        }
        probes.push(BenchmarkProbe::bound(
            "max |U| with zero temperature difference",
            umax,
            1e-10,
        ));
    }

    // unit difference: steady circulation
    {
        let mut ov = cfg.overrides.clone();
        ov.insert("delta_t".into(), 1.0);
        let t_end = ov.remove("t_end").unwrap_or(0.05);
        let st = build_scenario("thermal_cavity", &ov)?;
        let out = run(st, t_end, |_, _| Ok(()))?;
        let g = out.grid.clone();
        let f = &out.fluids[0];
        let mut umax = 0.0f64;
        let mut vmax = 0.0f64;
        for j in g.interior_y() {
            for i in g.interior_x() {
                umax = umax.max(f.vel.get(i, j).x.abs());
                vmax = vmax.max(f.vel.get(i, j).y.abs());
            }
        }
        probes.push(BenchmarkProbe::flag(
            "circulation develops",
            umax > 1e-9 && vmax > 1e-9,
        ));
        // antisymmetry of U_x (and symmetry of U_y) about the horizontal
        // midline
        let mut worst_u = 0.0f64;
        let mut worst_v = 0.0f64;
        for j in g.interior_y() {
            let jm = 2 * g.ghost + g.ny - 1 - j;
            for i in g.interior_x() {
                let u = f.vel.get(i, j).x;
                let um = f.vel.get(i, jm).x;
                worst_u = worst_u.max((u + um).abs());
                let v = f.vel.get(i, j).y;
                let vm = f.vel.get(i, jm).y;
                worst_v = worst_v.max((v - vm).abs());
            }
        }
        probes.push(BenchmarkProbe::bound(
            "U_x antisymmetry defect / max",
            worst_u / umax.max(1e-300),
            0.05,
        ));
        probes.push(BenchmarkProbe::bound(
            "U_y symmetry defect / max",
            worst_v / vmax.max(1e-300),
            0.05,
        ));
        // conduction flux through the hot and cold walls balances
        let (q_in, q_out) = cavity_wall_fluxes(&out);
        let defect = (q_in + q_out).abs() / q_in.abs().max(q_out.abs()).max(1e-300);
        probes.push(BenchmarkProbe::bound(
            "wall heat flux imbalance",
            defect,
            0.01,
        ));
    }
    Ok(BenchmarkReport::finish("thermal_cavity", probes, started))
}

/// Conduction fluxes into the cavity through the two temperature-pinned
/// side walls (positive into the domain), water and matrix combined.
fn cavity_wall_fluxes(st: &SimulationState) -> (f64, f64) {
    let g = &st.grid;
    let f = &st.fluids[0];
    let (t_left, t_right) = (
        match st.boundary.x_minus.temperature {
            ScalarBc::Dirichlet(t) => t,
            _ => T_COLD,
        },
        match st.boundary.x_plus.temperature {
            ScalarBc::Dirichlet(t) => t,
            _ => T_COLD,
        },
    );
    let mut q_left = 0.0;
    let mut q_right = 0.0;
    let il = g.ghost;
    let ir = g.ghost + g.nx - 1;
    for j in g.interior_y() {
        // half-cell conduction against the pinned wall value
        q_left += f.spec.conductivity * (t_left - f.temp.get(il, j)) / (0.5 * g.dx) * g.dy;
        q_right += f.spec.conductivity * (t_right - f.temp.get(ir, j)) / (0.5 * g.dx) * g.dy;
    }
    (q_left, q_right)
}

fn total_fluid_masses(st: &SimulationState) -> Vec<f64> {
    st.fluid_masses()
}

fn debris_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let mut ov = cfg.overrides.clone();
    let t_end = ov.remove("t_end").unwrap_or(if cfg.quick { 0.2 } else { 0.8 });
    let st = build_scenario("debris_flow_mini", &ov)?;
    let m0_fluid = total_fluid_masses(&st);
    let m0_solid = st.solid_masses();
    let out = run(st, t_end, |_, _| Ok(()))?;
    let m1_fluid = total_fluid_masses(&out);
    let m1_solid = out.solid_masses();
    let mut probes = Vec::new();
    probes.push(BenchmarkProbe::flag("run completed", true));
    for (k, (a, b)) in m0_fluid.iter().zip(&m1_fluid).enumerate() {
        probes.push(BenchmarkProbe::bound(
            &format!("fluid {k} mass drift (relative)"),
            ((b - a) / a).abs(),
            1e-8,
        ));
    }
    for (k, (a, b)) in m0_solid.iter().zip(&m1_solid).enumerate() {
        probes.push(BenchmarkProbe::flag(
            &format!("solid {k} mass exact"),
            a == b,
        ));
    }
    let moved = out.solids[1]
        .particles
        .iter()
        .zip(&build_scenario("debris_flow_mini", &cfg.overrides)?.solids[1].particles)
        .map(|(a, b)| (a.pos - b.pos).norm())
        .fold(0.0f64, f64::max);
    probes.push(BenchmarkProbe::flag("slide mobilized", moved > 0.01));
    Ok(BenchmarkReport::finish("debris_flow", probes, started))
}

fn slope_benchmark(cfg: &BenchConfig) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let mut ov = cfg.overrides.clone();
    let t_end = ov.remove("t_end").unwrap_or(if cfg.quick { 4.0 } else { 8.0 });
    let st = build_scenario("shaking_slope_mini", &ov)?;
    let p_init = st.pressure.clone();
    let grid = st.grid.clone();
    let m0_fluid = total_fluid_masses(&st);
    let m0_solid = st.solid_masses();
    // the slope region: cells holding soil at start (inferred from water
    // volume fraction below one and above zero)
    let mut min_excess = f64::INFINITY;
    let out = run(st, t_end, |state, _report| {
        for j in grid.interior_y() {
            for i in grid.interior_x() {
                // look only inside the porous soil: water present but
                // confined (volume fraction clearly below free water)
                let phi_w = state.fluids[0].phi.get(i, j);
                if phi_w > 0.05 && phi_w < 0.6 {
                    let excess = state.pressure.get(i, j) - p_init.get(i, j);
                    if excess < min_excess {
                        min_excess = excess;
                    }
                }
            }
        }
        Ok(())
    })?;
    let m1_fluid = total_fluid_masses(&out);
    let m1_solid = out.solid_masses();
    let mut probes = Vec::new();
    probes.push(BenchmarkProbe::flag("run completed", true));
    for (k, (a, b)) in m0_fluid.iter().zip(&m1_fluid).enumerate() {
        probes.push(BenchmarkProbe::bound(
            &format!("fluid {k} mass drift (relative)"),
            ((b - a) / a).abs(),
            1e-8,
        ));
    }
    for (k, (a, b)) in m0_solid.iter().zip(&m1_solid).enumerate() {
        probes.push(BenchmarkProbe::flag(
            &format!("solid {k} mass exact"),
            a == b,
        ));
    }
    probes.push(BenchmarkProbe::flag(
        "negative excess pore pressure develops in the slope",
        min_excess < -100.0,
    ));
    Ok(BenchmarkReport::finish("shaking_slope", probes, started))
}

/// Formats a report as the structured text block emitted by the CLI.
pub fn format_report(r: &BenchmarkReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "benchmark {}: {} ({:.2} s)\n",
        r.name,
        if r.pass { "PASS" } else { "FAIL" },
        r.runtime_seconds
    ));
    for p in &r.probes {
        s.push_str(&format!(
            "  [{}] {}: value {:.6e}, reference {:.6e}, error {:.3e} (tol {:.3e})\n",
            if p.pass { "pass" } else { "FAIL" },
            p.label,
            p.simulated,
            p.reference,
            p.rel_error,
            p.tolerance
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timestepper::step;

    #[test]
    fn darcy_oracle_reference_value() {
        let u = darcy_velocity_analytic(0.7, 1e-3, 1e-3, 0.3, ATM, 1.0);
        assert!((u - 0.10339).abs() < 1e-4, "u = {u}");
        assert_eq!(darcy_velocity_analytic(0.7, 1e-3, 1e-3, 0.3, 0.0, 1.0), 0.0);
        let u2 = darcy_velocity_analytic(0.7, 1e-3, 1e-3, 0.3, 0.5 * ATM, 1.0);
        assert!((u2 / u - 0.5).abs() < 1e-12);
    }

    #[test]
    fn terzaghi_oracle_spot_values() {
        // full dissipation
        assert!(terzaghi_pressure_analytic(1.0, 50.0, 1.0, 200) < 1e-12);
        // drainage face
        assert_eq!(terzaghi_pressure_analytic(0.0, 0.2, 1.0, 200), 0.0);
        // spot value at the impermeable base
        let p = terzaghi_pressure_analytic(1.0, 0.2, 1.0, 200);
        assert!((p - 0.7723).abs() < 1e-4, "p = {p}");
    }

    #[test]
    fn terzaghi_series_recovers_initial_condition() {
        // early time, interior points beyond the diffusion front
        // (z >> 2 sqrt(T_v)): p -> f_ext
        for z in [0.5, 0.8, 1.0] {
            let p = terzaghi_pressure_analytic(z, 0.01, 1.0, 200);
            assert!((p - 1.0).abs() < 2e-3, "p({z}) = {p}");
        }
    }

    #[test]
    fn ramped_series_reduces_to_step() {
        let a = terzaghi_pressure_ramped(0.7, 0.2, 0.0, 1.0, 200);
        let b = terzaghi_pressure_analytic(0.7, 0.2, 1.0, 200);
        assert_eq!(a, b);
        // small ramp stays close to the step solution
        let c = terzaghi_pressure_ramped(0.7, 0.2, 1e-4, 1.0, 200);
        assert!((c - b).abs() < 1e-3);
    }

    #[test]
    fn unknown_scenario_lists_options() {
        let e = build_scenario("nope", &Overrides::new()).unwrap_err();
        let msg = format!("{e}");
        assert!(msg.contains("darcy_column") && msg.contains("shaking_slope_mini"));
    }

    #[test]
    fn unknown_override_rejected() {
        let mut ov = Overrides::new();
        ov.insert("bogus_key".into(), 1.0);
        assert!(build_scenario("darcy_column", &ov).is_err());
    }

    #[test]
    fn scenarios_build() {
        for name in SCENARIOS {
            let st = build_scenario(name, &Overrides::new()).unwrap();
            assert!(st.fluids.iter().all(|f| f
                .rho_bar
                .data
                .iter()
                .all(|v| v.is_finite())));
        }
    }

    #[test]
    fn quiescent_tank_stays_still() {
        let st = quiescent_tank_state(10, 10, 0.05).unwrap();
        let mut state = st;
        for _ in 0..100 {
            let dt = crate::timestepper::compute_dt(&state).unwrap();
            let (next, _) = step(&state, dt).unwrap();
            state = next;
        }
        let mut umax = 0.0f64;
        for j in state.grid.interior_y() {
            for i in state.grid.interior_x() {
                umax = umax.max(state.fluids[0].vel.get(i, j).norm());
            }
        }
        assert!(umax <= 1e-10, "tank velocity {umax}");
    }

    #[test]
    fn darcy_single_probe_matches_oracle() {
        let mut cfg = BenchConfig::default();
        cfg.quick = true;
        let report = darcy_benchmark(&cfg).unwrap();
        assert!(report.pass, "{}", format_report(&report));
    }
}
