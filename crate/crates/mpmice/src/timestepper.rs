//! One full coupled cycle: particle scatter, pressure equilibration, face
//! transport velocities with momentum exchange, implicit pressure
//! increment, viscous stress, Lagrangian phase updates with cell-centered
//! exchange, specific-volume evolution, conservative advection, gather
//! back to nodes, and the particle update. Owns time-step control and
//! step-level retry.

use crate::error::{Result, SimError};
use crate::exchange::ExchangeTable;
use crate::grid::{
    apply_face_velocity_bcs, fill_pressure_ghosts, BoundarySpec, CellField, FaceField, Grid,
};
use crate::ice::{
    advect, face_centered_temperature, face_centered_velocity, lagrangian_phase_update,
    lagrangian_specific_volume, mixture_compressibility, mixture_volume_divergence,
    solid_face_velocity, solve_pressure_increment, viscous_and_turbulent_stress, AdvectionOrder,
    FluidPhase, SolidCellCtx, Smagorinsky,
};
use crate::materials::{eos_compressibility, eos_sound_speed_sq, equilibrate_pressure};
use crate::math::Vec2;
use crate::particles::{
    apply_contact, apply_motion_override, cells_to_nodes, finalize_nodal_accel,
    fold_symmetry_ghosts, integrate_nodal_motion, nodal_scalar_to_cell_heat,
    nodal_temperature_stage, nodal_vector_to_cell_momentum, normalize_nodal, particles_to_grid,
    pin_nodal_vector, update_particles, CellSolidState, ContactStage, NodalSolidState,
    SolidPhase,
};
use crate::exchange::{build_exchange_system, solve_momentum_exchange, PairRule};
use crate::exchange::drag_coefficient;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub cfl: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub fixed_dt: Option<f64>,
    pub retry_max: usize,
    pub smagorinsky: Smagorinsky,
    pub advection: AdvectionOrder,
    /// External particle loads ramp linearly over this time [s].
    pub load_ramp_time: f64,
    pub equilibration_tol: f64,
    pub pressure_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cfl: 0.25,
            dt_min: 1e-12,
            dt_max: 1.0,
            fixed_dt: None,
            retry_max: 4,
            smagorinsky: Smagorinsky::default(),
            advection: AdvectionOrder::DonorCell,
            load_ramp_time: 0.0,
            equilibration_tol: 1e-8,
            pressure_tol: 1e-8,
        }
    }
}

/// Complete simulation state; one step maps a state to the next.
#[derive(Debug, Clone)]
pub struct SimulationState {
    pub grid: Grid,
    pub boundary: BoundarySpec,
    pub gravity: Vec2,
    pub solids: Vec<SolidPhase>,
    pub fluids: Vec<FluidPhase>,
    /// Pair rules over material indices, solids first then fluids.
    pub exchange: ExchangeTable,
    /// Contact friction coefficients, solids x solids.
    pub contact_friction: Vec<f64>,
    /// Latest cell pressure (equilibration warm start and output).
    pub pressure: CellField<f64>,
    pub time: f64,
    pub step_count: u64,
    pub config: SimConfig,
    /// Previous porosity and solid volume-flux divergence for the
    /// porosity-rate consistency diagnostic.
    diag_porosity: Option<(CellField<f64>, CellField<f64>, f64)>,
}

impl SimulationState {
    pub fn new(
        grid: Grid,
        boundary: BoundarySpec,
        gravity: Vec2,
        solids: Vec<SolidPhase>,
        fluids: Vec<FluidPhase>,
        exchange: ExchangeTable,
        config: SimConfig,
    ) -> Self {
        let ns = solids.len();
        let pressure = CellField::zeros(&grid);
        SimulationState {
            grid,
            boundary,
            gravity,
            solids,
            fluids,
            exchange,
            contact_friction: vec![0.0; ns * ns],
            pressure,
            time: 0.0,
            step_count: 0,
            config,
            diag_porosity: None,
        }
    }

    pub fn set_contact_friction(&mut self, a: usize, b: usize, mu: f64) {
        let n = self.solids.len();
        self.contact_friction[a * n + b] = mu;
        self.contact_friction[b * n + a] = mu;
    }

    pub fn fluid_masses(&self) -> Vec<f64> {
        self.fluids.iter().map(|f| f.total_mass(&self.grid)).collect()
    }

    pub fn solid_masses(&self) -> Vec<f64> {
        self.solids.iter().map(|s| s.total_mass()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub dt: f64,
    pub pressure_iterations: usize,
    pub pressure_residual: f64,
    pub equilibration_max_iterations: usize,
    pub fluid_mass: Vec<f64>,
    pub solid_mass: Vec<f64>,
    pub max_fluid_speed: f64,
    pub max_solid_speed: f64,
    pub min_interior_pressure: f64,
    /// Max-norm mismatch between the geometric porosity change and the
    /// divergence-form porosity rate, one step lagged.
    pub porosity_rate_mismatch: f64,
    pub drag_clamped: usize,
    pub warnings: Vec<String>,
}

/// Largest stable time step: CFL over fluid cells against |U| plus the
/// isothermal sound speed, and over particles against the elastic wave
/// speed, clamped to the configured bounds.
pub fn compute_dt(state: &SimulationState) -> Result<f64> {
    if let Some(dt) = state.config.fixed_dt {
        return Ok(dt);
    }
    let grid = &state.grid;
    let h = grid.min_spacing();
    let mut dt = state.config.dt_max / state.config.cfl.max(1e-12);
    for f in &state.fluids {
        for j in grid.interior_y() {
            for i in grid.interior_x() {
                let rho = 1.0 / f.spec_vol.get(i, j).max(1e-300);
                let c = eos_sound_speed_sq(&f.spec.eos, rho, f.temp.get(i, j).max(1.0)).sqrt();
                let u = f.vel.get(i, j).norm();
                dt = dt.min(h / (u + c).max(1e-12));
            }
        }
    }
    for s in &state.solids {
        let c = s.spec.wave_speed();
        for p in &s.particles {
            dt = dt.min(h / (p.vel.norm() + c).max(1e-12));
        }
    }
    let dt = (state.config.cfl * dt).clamp(0.0, state.config.dt_max);
    if dt < state.config.dt_min {
        return Err(SimError::TimeStepUnderflow {
            dt,
            dt_min: state.config.dt_min,
        });
    }
    Ok(dt)
}

const POROSITY_FLOOR: f64 = 1e-6;

/// Advances the state by one step of size dt.
pub fn step(state: &SimulationState, dt: f64) -> Result<(SimulationState, StepReport)> {
    let mut s = state.clone();
    let grid = s.grid.clone();
    let bspec = s.boundary;
    let gravity = s.gravity;
    let mut report = StepReport {
        dt,
        ..Default::default()
    };
    let has_fluids = !s.fluids.is_empty();
    let t_now = s.time;

    for f in s.fluids.iter_mut() {
        f.fill_ghosts(&grid, &bspec);
    }

    // -- particle scatter and nodal preparation
    let load_factor = if s.config.load_ramp_time > 0.0 {
        (t_now / s.config.load_ramp_time).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let mut nodals: Vec<NodalSolidState> = Vec::with_capacity(s.solids.len());
    let mut stencils = Vec::with_capacity(s.solids.len());
    for phase in &s.solids {
        let (mut st, sten) = particles_to_grid(phase, &grid, load_factor)?;
        fold_symmetry_ghosts(&mut st, &grid, &bspec);
        normalize_nodal(&mut st);
        nodals.push(st);
        stencils.push(sten);
    }
    for (st, phase) in nodals.iter_mut().zip(&s.solids) {
        apply_motion_override(st, phase.motion, t_now, ContactStage::Current);
        pin_nodal_vector(&mut st.vel, &grid, &bspec);
    }
    apply_contact(
        &mut nodals,
        &s.contact_friction,
        ContactStage::Current,
        dt,
        true,
    );
    for (st, phase) in nodals.iter_mut().zip(&s.solids) {
        apply_motion_override(st, phase.motion, t_now, ContactStage::Current);
    }

    // -- cell view of the solids and the porosity field
    let cell_solids: Vec<CellSolidState> =
        nodals.iter().map(|st| crate::particles::nodes_to_cells(st, &grid)).collect();
    let mut porosity = CellField::filled(&grid, 1.0);
    let mut overpacked = 0usize;
    for cs in &cell_solids {
        for k in 0..porosity.data.len() {
            porosity.data[k] -= cs.phi.data[k];
        }
    }
    for v in porosity.data.iter_mut() {
        if *v < -1e-6 {
            overpacked += 1;
        }
        *v = v.clamp(POROSITY_FLOOR, 1.0);
    }
    if overpacked > 0 {
        report
            .warnings
            .push(format!("{overpacked} cells overpacked by solids; porosity clamped"));
    }

    // porosity-rate consistency diagnostic, one step lagged
    if let Some((n_prev, div_prev, dt_prev)) = s.diag_porosity.take() {
        let mut worst = 0.0f64;
        for j in grid.interior_y() {
            for i in grid.interior_x() {
                let pred = n_prev.get(i, j) + dt_prev * div_prev.get(i, j);
                worst = worst.max((porosity.get(i, j) - pred.clamp(POROSITY_FLOOR, 1.0)).abs());
            }
        }
        report.porosity_rate_mismatch = worst;
    }

    // -- pressure equilibration
    let mut p_eq = CellField::zeros(&grid);
    let mut kappas: Vec<CellField<f64>> =
        s.fluids.iter().map(|_| CellField::zeros(&grid)).collect();
    if has_fluids {
        for j in grid.interior_y() {
            for i in grid.interior_x() {
                let active = s
                    .fluids
                    .iter()
                    .any(|f| f.rho_bar.get(i, j) > f.rho_floor);
                if !active {
                    // structure-filled or empty cell: reference state
                    let p_ref = s.pressure.get(i, j);
                    p_eq.set(i, j, p_ref);
                    for (k, f) in s.fluids.iter().enumerate() {
                        let rho = 1.0 / f.ref_spec_vol;
                        kappas[k].set(i, j, eos_compressibility(&f.spec.eos, rho, f.ref_temp));
                    }
                    continue;
                }
                let inputs: Vec<(&crate::materials::EosKind, f64, f64)> = s
                    .fluids
                    .iter()
                    .map(|f| (&f.spec.eos, f.rho_bar.get(i, j), f.temp.get(i, j)))
                    .collect();
                let guess = if s.pressure.get(i, j).is_finite() && s.pressure.get(i, j) != 0.0 {
                    s.pressure.get(i, j)
                } else {
                    101325.0
                };
                let res = equilibrate_pressure(
                    &inputs,
                    porosity.get(i, j),
                    guess,
                    s.config.equilibration_tol,
                    60,
                )
                .map_err(|e| match e {
                    SimError::Equilibration { residual, .. } => {
                        SimError::Equilibration { i, j, residual }
                    }
                    other => other,
                })?;
                report.equilibration_max_iterations =
                    report.equilibration_max_iterations.max(res.iterations);
                p_eq.set(i, j, res.pressure);
                for (k, f) in s.fluids.iter_mut().enumerate() {
                    crate::ice::apply_equilibration(f, i, j, res.spec_vol[k], res.vol_frac[k]);
                    kappas[k].set(i, j, res.compressibility[k]);
                }
            }
        }
    }

    // hydrostatic ghost density: pore-fluid true density
    let mut rho_hydro = CellField::zeros(&grid);
    for f in &s.fluids {
        for k in 0..rho_hydro.data.len() {
            rho_hydro.data[k] += f.rho_bar.data[k];
        }
    }
    for k in 0..rho_hydro.data.len() {
        rho_hydro.data[k] /= porosity.data[k].max(POROSITY_FLOOR);
    }
    fill_pressure_ghosts(&mut p_eq, &grid, &bspec, gravity, &rho_hydro);
    for (k, f) in s.fluids.iter_mut().enumerate() {
        f.fill_ghosts(&grid, &bspec);
        crate::grid::fill_scalar_ghosts(&mut kappas[k], &grid, &bspec, |_| {
            crate::grid::ScalarBc::ZeroGradient
        });
    }

    // -- face-centered velocities and the implicit face exchange
    let mut fluid_faces: Vec<FaceField<f64>> = Vec::new();
    let mut fluid_faces_star: Vec<FaceField<f64>> = Vec::new();
    let mut solid_faces: Vec<FaceField<f64>> = Vec::new();
    if has_fluids {
        for f in &s.fluids {
            let u = face_centered_velocity(f, &p_eq, &grid, dt, gravity)?;
            fluid_faces.push(u);
        }
        for (cs, phase) in cell_solids.iter().zip(&s.solids) {
            solid_faces.push(solid_face_velocity(
                cs,
                &p_eq,
                phase.spec.grain_density,
                &grid,
                dt,
                gravity,
            ));
        }
        for u in fluid_faces.iter_mut() {
            apply_face_velocity_bcs(u, &grid, &bspec);
        }
        for u in solid_faces.iter_mut() {
            apply_face_velocity_bcs(u, &grid, &bspec);
        }
        fluid_faces_star = fluid_faces.clone();
        face_momentum_exchange(
            &s,
            &cell_solids,
            &porosity,
            &mut solid_faces,
            &mut fluid_faces,
            &grid,
            dt,
        )?;
        for u in fluid_faces.iter_mut() {
            apply_face_velocity_bcs(u, &grid, &bspec);
        }
        for u in solid_faces.iter_mut() {
            apply_face_velocity_bcs(u, &grid, &bspec);
        }
        // face temperatures participate in the staged pipeline but no
        // later stage consumes them; computed for reporting parity
        for f in &s.fluids {
            let _ = face_centered_temperature(f, &grid);
        }
    }

    // -- implicit pressure increment
    let solve = if has_fluids {
        let kmix = mixture_compressibility(&s.fluids, &kappas, &grid);
        let out = solve_pressure_increment(
            &s.fluids,
            &fluid_faces,
            &kmix,
            &p_eq,
            &rho_hydro,
            &grid,
            &bspec,
            gravity,
            dt,
            s.config.pressure_tol,
        )?;
        report.pressure_iterations = out.iterations;
        report.pressure_residual = out.residual;
        out
    } else {
        crate::ice::PressureSolve {
            delta_p: CellField::zeros(&grid),
            p_new: CellField::zeros(&grid),
            p_face: FaceField::zeros(&grid),
            iterations: 0,
            residual: 0.0,
        }
    };

    // -- viscous and turbulent stress
    let mut viscous: Vec<CellField<Vec2>> = Vec::new();
    if has_fluids {
        for f in &s.fluids {
            let (dm, _mu_t) = viscous_and_turbulent_stress(f, &grid, s.config.smagorinsky, dt);
            viscous.push(dm);
        }
    }

    // -- nodal temperature stage and explicit nodal integration
    for (st, phase) in nodals.iter_mut().zip(&s.solids) {
        nodal_temperature_stage(st, &grid, &phase.spec, dt);
        integrate_nodal_motion(st, dt, gravity);
        apply_motion_override(st, phase.motion, t_now + dt, ContactStage::Star);
        pin_nodal_vector(&mut st.vel_star, &grid, &bspec);
    }

    // -- Lagrangian phase update with cell-centered exchange
    let mut lagr_update = if has_fluids {
        let mom_star: Vec<CellField<Vec2>> = nodals
            .iter()
            .map(|st| nodal_vector_to_cell_momentum(st, &st.vel_star, &grid))
            .collect();
        let heat_lag: Vec<CellField<f64>> = nodals
            .iter()
            .map(|st| nodal_scalar_to_cell_heat(st, &st.temp_lag, &grid))
            .collect();
        let ctxs: Vec<SolidCellCtx> = cell_solids
            .iter()
            .zip(&s.solids)
            .enumerate()
            .map(|(k, (cs, phase))| SolidCellCtx {
                state: cs,
                momentum_star: &mom_star[k],
                heat_lag: &heat_lag[k],
                grain_density: phase.spec.grain_density,
                grain_size: phase.spec.grain_size,
                c_v: phase.spec.c_v,
            })
            .collect();
        let upd = lagrangian_phase_update(
            &s.fluids,
            &fluid_faces_star,
            &viscous,
            &ctxs,
            &porosity,
            &solve,
            &s.exchange,
            &grid,
            gravity,
            dt,
        )?;
        report.drag_clamped = upd.drag_clamped;
        Some(upd)
    } else {
        None
    };

    // -- specific volume evolution and advection
    if let Some(upd) = lagr_update.as_mut() {
        let solid_phis: Vec<&CellField<f64>> = cell_solids.iter().map(|cs| &cs.phi).collect();
        let mix_div = mixture_volume_divergence(
            &s.fluids,
            &fluid_faces,
            &solid_phis,
            &solid_faces,
            &grid,
        );
        lagrangian_specific_volume(&s.fluids, &mut upd.fluids, &kappas, &mix_div, &grid, dt)?;
        for (k, f) in s.fluids.iter_mut().enumerate() {
            advect(
                f,
                &upd.fluids[k],
                &fluid_faces[k],
                &grid,
                &bspec,
                s.config.advection,
                dt,
            )?;
        }
        // store the solid volume-flux divergence for the porosity-rate
        // diagnostic of the next step
        let mut solid_div = CellField::zeros(&grid);
        let empty: Vec<&CellField<f64>> = Vec::new();
        let _ = empty;
        let sd = mixture_volume_divergence(&[], &[], &solid_phis, &solid_faces, &grid);
        for k in 0..solid_div.data.len() {
            solid_div.data[k] = sd.data[k];
        }
        s.diag_porosity = Some((porosity.clone(), solid_div, dt));
    }

    // -- gather back to nodes and finish the particle update
    for (k, (st, phase)) in nodals.iter_mut().zip(&s.solids).enumerate() {
        if let Some(upd) = &lagr_update {
            cells_to_nodes(st, &upd.solid_dvel[k], &upd.solid_dtemp[k], &grid, dt);
        } else {
            // no fluids: the explicit grid update is the whole story
            for n in 0..st.mass.data.len() {
                st.vel_next.data[n] = st.vel_star.data[n];
                st.temp_rate.data[n] = (st.temp_lag.data[n] - st.temp.data[n]) / dt;
            }
        }
        apply_motion_override(st, phase.motion, t_now + dt, ContactStage::Next);
        pin_nodal_vector(&mut st.vel_next, &grid, &bspec);
    }
    apply_contact(
        &mut nodals,
        &s.contact_friction,
        ContactStage::Next,
        dt,
        false,
    );
    for (st, phase) in nodals.iter_mut().zip(&s.solids) {
        apply_motion_override(st, phase.motion, t_now + dt, ContactStage::Next);
        pin_nodal_vector(&mut st.vel_next, &grid, &bspec);
        finalize_nodal_accel(st, dt);
        // ghost values seen by particle gathers near symmetry walls
        crate::particles::mirror_nodal_vector(&mut st.accel, &grid, &bspec);
        crate::particles::mirror_nodal_scalar(&mut st.temp_rate, &grid, &bspec);
        crate::particles::mirror_nodal_scalar(&mut st.temp, &grid, &bspec);
    }

    let p_for_particles = if has_fluids { &solve.p_new } else { &s.pressure };
    for (k, phase) in s.solids.iter_mut().enumerate() {
        update_particles(phase, &nodals[k], &stencils[k], p_for_particles, &grid, dt)?;
    }

    if has_fluids {
        s.pressure = solve.p_new.clone();
    }

    // -- bookkeeping
    s.time += dt;
    s.step_count += 1;
    report.fluid_mass = s.fluid_masses();
    report.solid_mass = s.solid_masses();
    let mut pmin = f64::INFINITY;
    for j in grid.interior_y() {
        for i in grid.interior_x() {
            pmin = pmin.min(s.pressure.get(i, j));
        }
    }
    report.min_interior_pressure = pmin;
    for f in &s.fluids {
        for j in grid.interior_y() {
            for i in grid.interior_x() {
                report.max_fluid_speed = report.max_fluid_speed.max(f.vel.get(i, j).norm());
            }
        }
    }
    for sp in &s.solids {
        for p in &sp.particles {
            report.max_solid_speed = report.max_solid_speed.max(p.vel.norm());
        }
    }
    for f in &s.fluids {
        if f.rho_bar.data.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Degenerate(format!(
                "non-finite density in fluid {}",
                f.name
            )));
        }
    }
    Ok((s, report))
}

/// Implicit momentum exchange of the face-normal velocities across all
/// materials that carry mass at each face.
fn face_momentum_exchange(
    s: &SimulationState,
    cell_solids: &[CellSolidState],
    porosity: &CellField<f64>,
    solid_faces: &mut [FaceField<f64>],
    fluid_faces: &mut [FaceField<f64>],
    grid: &Grid,
    dt: f64,
) -> Result<()> {
    let ns = cell_solids.len();
    let nf = s.fluids.len();
    let nmat = ns + nf;
    if nmat < 2 {
        return Ok(());
    }
    let vcell = grid.cell_volume();
    let g = grid.ghost;

    let mut process = |axis: usize| -> Result<()> {
        let (i_range, j_range): (Vec<usize>, Vec<usize>) = if axis == 0 {
            ((g..=g + grid.nx).collect(), grid.interior_y().collect())
        } else {
            (grid.interior_x().collect(), (g..=g + grid.ny).collect())
        };
        for &j in &j_range {
            for &i in &i_range {
                // face-averaged bulk densities, volume fractions, velocities
                let (li, lj) = if axis == 0 { (i - 1, j) } else { (i, j - 1) };
                let mut bulk = vec![0.0; nmat];
                let mut cv = vec![1.0; nmat];
                let mut vel = vec![0.0; nmat];
                let mut phi_s_face = vec![0.0; ns];
                for (k, cs) in cell_solids.iter().enumerate() {
                    let rb = 0.5 * (cs.mass.get(li, lj) + cs.mass.get(i, j)) / vcell;
                    if rb * vcell > cs.mass_floor {
                        bulk[k] = rb;
                        vel[k] = if axis == 0 {
                            solid_faces[k].x(i, j)
                        } else {
                            solid_faces[k].y(i, j)
                        };
                    }
                    phi_s_face[k] = 0.5 * (cs.phi.get(li, lj) + cs.phi.get(i, j));
                }
                for (k, f) in s.fluids.iter().enumerate() {
                    let rb = 0.5 * (f.rho_bar.get(li, lj) + f.rho_bar.get(i, j));
                    if rb > f.rho_floor {
                        bulk[ns + k] = rb;
                        vel[ns + k] = if axis == 0 {
                            fluid_faces[k].x(i, j)
                        } else {
                            fluid_faces[k].y(i, j)
                        };
                    }
                }
                let active = bulk.iter().filter(|&&b| b > 0.0).count();
                if active < 2 {
                    continue;
                }
                let n_face = 0.5 * (porosity.get(li, lj) + porosity.get(i, j));
                let k_of = |a: usize, b: usize| -> f64 {
                    if bulk[a] <= 0.0 || bulk[b] <= 0.0 {
                        return 0.0;
                    }
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    match s.exchange.get(lo, hi).rule {
                        PairRule::ContactOnly => 0.0,
                        PairRule::RigidCoupling(k) => k,
                        PairRule::FluidFluid(k) => k,
                        PairRule::PorousDrag(closure) => {
                            if lo < ns && hi >= ns {
                                let f = &s.fluids[hi - ns];
                                let v_face = 0.5
                                    * (f.spec_vol.get(li, lj) + f.spec_vol.get(i, j));
                                let rel = (vel[a] - vel[b]).abs();
                                drag_coefficient(
                                    phi_s_face[lo],
                                    s.solids[lo].spec.grain_size,
                                    f.spec.viscosity,
                                    1.0 / v_face.max(1e-300),
                                    n_face,
                                    rel,
                                    closure,
                                )
                                .unwrap_or(0.0)
                            } else {
                                0.0
                            }
                        }
                    }
                };
                let sys = build_exchange_system(nmat, k_of, |_, _| 0.0, &bulk, &cv, dt);
                let du = solve_momentum_exchange(&vel, &sys)?;
                for k in 0..ns {
                    if bulk[k] > 0.0 {
                        if axis == 0 {
                            let v = solid_faces[k].x(i, j) + du[k];
                            solid_faces[k].set_x(i, j, v);
                        } else {
                            let v = solid_faces[k].y(i, j) + du[k];
                            solid_faces[k].set_y(i, j, v);
                        }
                    }
                }
                for k in 0..nf {
                    if bulk[ns + k] > 0.0 {
                        if axis == 0 {
                            let v = fluid_faces[k].x(i, j) + du[ns + k];
                            fluid_faces[k].set_x(i, j, v);
                        } else {
                            let v = fluid_faces[k].y(i, j) + du[ns + k];
                            fluid_faces[k].set_y(i, j, v);
                        }
                    }
                }
                let _ = &mut cv;
            }
        }
        Ok(())
    };
    process(0)?;
    process(1)?;
    Ok(())
}

/// Runs compute_dt + step in a loop to t_end, invoking the callback after
/// every successful step; failed steps retry with halved dt.
pub fn run(
    mut state: SimulationState,
    t_end: f64,
    mut on_step: impl FnMut(&SimulationState, &StepReport) -> Result<()>,
) -> Result<SimulationState> {
    while state.time < t_end - 1e-15 {
        let mut dt = compute_dt(&state)?.min(t_end - state.time);
        let mut last_err = None;
        let mut advanced = None;
        for _ in 0..=state.config.retry_max {
            match step(&state, dt) {
                Ok((next, report)) => {
                    advanced = Some((next, report));
                    break;
                }
                Err(e) => {
                    last_err = Some(e);
                    dt *= 0.5;
                    if dt < state.config.dt_min {
                        break;
                    }
                }
            }
        }
        let Some((next, report)) = advanced else {
            return Err(SimError::StepFailed {
                retries: state.config.retry_max,
                source: Box::new(last_err.unwrap_or(SimError::Degenerate("unknown".into()))),
            });
        };
        state = next;
        on_step(&state, &report)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::materials::{EosKind, FluidEosSpec, SolidModelSpec};
    use crate::particles::{MotionKind, Particle};

    const ATM: f64 = 101325.0;

    fn water_spec() -> FluidEosSpec {
        FluidEosSpec {
            eos: EosKind::LinearWater {
                p_ref: ATM,
                t_ref: 278.15,
                rho_ref: 998.0,
                k: 2e9 / 998.0,
                alpha: 0.18,
            },
            viscosity: 1e-3,
            c_v: 4181.0,
            conductivity: 0.598,
        }
    }

    fn single_fluid_box() -> SimulationState {
        let grid = build_grid(&[1.0, 1.0], &[0.05, 0.05], 1).unwrap();
        let f =
            FluidPhase::uniform("water", water_spec(), &grid, 998.0, 278.15).unwrap();
        let table = ExchangeTable::new(1);
        let mut st = SimulationState::new(
            grid,
            BoundarySpec::default(),
            Vec2::ZERO,
            vec![],
            vec![f],
            table,
            SimConfig::default(),
        );
        st.pressure = CellField::filled(&st.grid, ATM);
        st
    }

    #[test]
    fn dt_from_water_sound_speed() {
        let st = single_fluid_box();
        let dt = compute_dt(&st).unwrap();
        // c = sqrt(2e9/998) ~ 1415.6 m/s, h = 0.05, cfl 0.25
        let expect = 0.25 * 0.05 / (2e9f64 / 998.0).sqrt();
        assert!((dt - expect).abs() < 1e-3 * expect, "dt = {dt}");
    }

    #[test]
    fn dt_scales_with_spacing() {
        let st1 = single_fluid_box();
        let grid2 = build_grid(&[1.0, 1.0], &[0.1, 0.1], 1).unwrap();
        let f =
            FluidPhase::uniform("water", water_spec(), &grid2, 998.0, 278.15).unwrap();
        let mut st2 = SimulationState::new(
            grid2,
            BoundarySpec::default(),
            Vec2::ZERO,
            vec![],
            vec![f],
            ExchangeTable::new(1),
            SimConfig::default(),
        );
        st2.pressure = CellField::filled(&st2.grid, ATM);
        let (d1, d2) = (compute_dt(&st1).unwrap(), compute_dt(&st2).unwrap());
        assert!((d2 / d1 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn dt_solid_wave_speed_dominates_quiet_solid() {
        let grid = build_grid(&[1.0, 1.0], &[0.05, 0.05], 1).unwrap();
        let (lambda, mu) = SolidModelSpec::from_youngs(10e6, 0.3);
        let spec = SolidModelSpec::elastic(lambda, mu, 2650.0);
        let phase = SolidPhase {
            name: "solid".into(),
            spec: spec.clone(),
            motion: MotionKind::Free,
            half_width: Vec2::new(0.0125, 0.0125),
            seed_fraction: 1.0,
            particles: vec![Particle::at_rest(Vec2::new(0.5, 0.5), 1.0, 1e-3, 280.0)],
        };
        let st = SimulationState::new(
            grid,
            BoundarySpec::default(),
            Vec2::ZERO,
            vec![phase],
            vec![],
            ExchangeTable::new(1),
            SimConfig::default(),
        );
        let dt = compute_dt(&st).unwrap();
        let expect = 0.25 * 0.05 / spec.wave_speed();
        assert!((dt - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn fixed_dt_honored() {
        let mut st = single_fluid_box();
        st.config.fixed_dt = Some(1.25e-7);
        assert_eq!(compute_dt(&st).unwrap(), 1.25e-7);
    }

    #[test]
    fn run_zero_duration_is_identity() {
        let st = single_fluid_box();
        let t0 = st.time;
        let mut calls = 0;
        let out = run(st, t0, |_, _| {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 0);
        assert_eq!(out.step_count, 0);
    }

    #[test]
    fn pure_fluid_box_conserves_mass_and_stays_uniform() {
        let mut st = single_fluid_box();
        st.config.fixed_dt = Some(5e-6);
        let m0 = st.fluid_masses()[0];
        let out = run(st, 20.0 * 5e-6, |_, _| Ok(())).unwrap();
        assert_eq!(out.step_count, 20);
        let m1 = out.fluid_masses()[0];
        assert!(
            ((m1 - m0) / m0).abs() < 1e-13,
            "mass drift {}",
            (m1 - m0) / m0
        );
        for j in out.grid.interior_y() {
            for i in out.grid.interior_x() {
                assert!(out.fluids[0].vel.get(i, j).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_mpm_free_fall_matches_kinematics() {
        // no fluids: the explicit particle update must integrate gravity
        let grid = build_grid(&[1.0, 1.0], &[0.05, 0.05], 1).unwrap();
        let (lambda, mu) = SolidModelSpec::from_youngs(1e6, 0.3);
        let spec = SolidModelSpec::elastic(lambda, mu, 2650.0);
        let p = Particle::at_rest(Vec2::new(0.5, 0.8), 1.0, 1e-4, 280.0);
        let phase = SolidPhase {
            name: "ball".into(),
            spec,
            motion: MotionKind::Free,
            half_width: Vec2::new(0.0125, 0.0125),
            seed_fraction: 1.0,
            particles: vec![p],
        };
        let mut bspec = BoundarySpec::all_symmetry();
        bspec.y_minus.velocity = crate::grid::VelocityBc::Open;
        bspec.y_plus.velocity = crate::grid::VelocityBc::Open;
        let mut st = SimulationState::new(
            grid,
            bspec,
            Vec2::new(0.0, -9.81),
            vec![phase],
            vec![],
            ExchangeTable::new(1),
            SimConfig::default(),
        );
        st.config.fixed_dt = Some(1e-4);
        let steps = 100;
        let out = run(st, steps as f64 * 1e-4, |_, _| Ok(())).unwrap();
        let t = steps as f64 * 1e-4;
        let q = &out.solids[0].particles[0];
        // velocity exact, position first-order accurate in dt
        assert!((q.vel.y + 9.81 * t).abs() < 1e-10, "v = {}", q.vel.y);
        let drop = 0.8 - q.pos.y;
        let expect = 0.5 * 9.81 * t * t;
        assert!(
            (drop - expect).abs() < 9.81 * t * 1e-4 * 1.5,
            "drop {drop} vs {expect}"
        );
    }

    #[test]
    fn deterministic_rerun_bit_identical() {
        let run_once = || {
            let mut st = single_fluid_box();
            // break symmetry with a pressure bump
            st.fluids[0].rho_bar.set(8, 9, 1000.0);
            st.config.fixed_dt = Some(2e-6);
            let out = run(st, 30.0 * 2e-6, |_, _| Ok(())).unwrap();
            let mut sig = Vec::new();
            for v in &out.fluids[0].rho_bar.data {
                sig.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            for v in &out.fluids[0].vel.data {
                sig.extend_from_slice(&v.x.to_bits().to_le_bytes());
                sig.extend_from_slice(&v.y.to_bits().to_le_bytes());
            }
            sig
        };
        assert_eq!(run_once(), run_once());
    }
}
