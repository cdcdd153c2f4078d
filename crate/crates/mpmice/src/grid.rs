//! Structured Cartesian grid with cell-, face- and node-centered storage
//! plus the stencil operators shared by the Eulerian and particle stages.
//!
//! Layout: `ghost` layers of cells pad the domain on every side. Nodes sit
//! on cell corners, x-faces carry x-normal quantities, y-faces y-normal.
//! A 1-D problem is a 2-D grid one cell thick with symmetry side walls.

use crate::error::{Result, SimError};
use crate::math::Vec2;

#[derive(Debug, Clone)]
pub struct Grid {
    pub ndim: usize,
    /// Interior cell counts per axis.
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub origin: Vec2,
    pub ghost: usize,
}

/// Builds a grid from physical extents; the extents must be an integer
/// multiple of the cell size (1e-9 relative slack).
pub fn build_grid(extents: &[f64], cell_size: &[f64], ghost: usize) -> Result<Grid> {
    if extents.is_empty() || extents.len() > 2 || extents.len() != cell_size.len() {
        return Err(SimError::Config(format!(
            "grid wants 1 or 2 axes, got extents {:?} cell_size {:?}",
            extents, cell_size
        )));
    }
    if ghost < 1 {
        return Err(SimError::Config("ghost_layers must be >= 1".into()));
    }
    let mut counts = [1usize; 2];
    for (ax, (&ext, &h)) in extents.iter().zip(cell_size.iter()).enumerate() {
        if !(ext > 0.0) || !(h > 0.0) {
            return Err(SimError::Config(format!(
                "extent and cell_size must be positive on axis {ax}: {ext}, {h}"
            )));
        }
        let ratio = ext / h;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(SimError::Config(format!(
                "extent {ext} is not an integer multiple of cell_size {h} on axis {ax}"
            )));
        }
        counts[ax] = n as usize;
    }
    let ndim = extents.len();
    let (dx, dy) = if ndim == 1 {
        (cell_size[0], cell_size[0])
    } else {
        (cell_size[0], cell_size[1])
    };
    Ok(Grid {
        ndim,
        nx: counts[0],
        ny: if ndim == 1 { 1 } else { counts[1] },
        dx,
        dy,
        origin: Vec2::ZERO,
        ghost,
    })
}

impl Grid {
    /// Total cell counts including ghost padding.
    pub fn cells_tot(&self) -> (usize, usize) {
        (self.nx + 2 * self.ghost, self.ny + 2 * self.ghost)
    }

    pub fn nodes_tot(&self) -> (usize, usize) {
        (self.nx + 2 * self.ghost + 1, self.ny + 2 * self.ghost + 1)
    }

    /// Interior cell index range per axis (half-open).
    pub fn interior_x(&self) -> std::ops::Range<usize> {
        self.ghost..self.ghost + self.nx
    }

    pub fn interior_y(&self) -> std::ops::Range<usize> {
        self.ghost..self.ghost + self.ny
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (i as f64 - self.ghost as f64 + 0.5) * self.dx,
            self.origin.y + (j as f64 - self.ghost as f64 + 0.5) * self.dy,
        )
    }

    pub fn node_pos(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + (i as f64 - self.ghost as f64) * self.dx,
            self.origin.y + (j as f64 - self.ghost as f64) * self.dy,
        )
    }

    pub fn is_interior_cell(&self, i: usize, j: usize) -> bool {
        self.interior_x().contains(&i) && self.interior_y().contains(&j)
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        if axis == 0 {
            self.dx
        } else {
            self.dy
        }
    }

    pub fn min_spacing(&self) -> f64 {
        self.dx.min(self.dy)
    }
}

#[derive(Debug, Clone)]
pub struct CellField<T> {
    pub nx_tot: usize,
    pub ny_tot: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> CellField<T> {
    pub fn zeros(grid: &Grid) -> Self {
        let (nx, ny) = grid.cells_tot();
        CellField {
            nx_tot: nx,
            ny_tot: ny,
            data: vec![T::default(); nx * ny],
        }
    }

    pub fn filled(grid: &Grid, v: T) -> Self {
        let (nx, ny) = grid.cells_tot();
        CellField {
            nx_tot: nx,
            ny_tot: ny,
            data: vec![v; nx * ny],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx_tot && j < self.ny_tot);
        j * self.nx_tot + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut T {
        let k = self.idx(i, j);
        &mut self.data[k]
    }
}

#[derive(Debug, Clone)]
pub struct NodeField<T> {
    pub nx_tot: usize,
    pub ny_tot: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> NodeField<T> {
    pub fn zeros(grid: &Grid) -> Self {
        let (nx, ny) = grid.nodes_tot();
        NodeField {
            nx_tot: nx,
            ny_tot: ny,
            data: vec![T::default(); nx * ny],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx_tot && j < self.ny_tot);
        j * self.nx_tot + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut T {
        let k = self.idx(i, j);
        &mut self.data[k]
    }
}

/// Per-axis normal components on the staggered faces. An x-face (i, j)
/// separates cells (i-1, j) and (i, j); likewise for y-faces in j.
#[derive(Debug, Clone)]
pub struct FaceField<T> {
    pub fx: Vec<T>,
    pub fy: Vec<T>,
    pub fx_nx: usize,
    pub fx_ny: usize,
    pub fy_nx: usize,
    pub fy_ny: usize,
}

impl<T: Copy + Default> FaceField<T> {
    pub fn zeros(grid: &Grid) -> Self {
        let (cx, cy) = grid.cells_tot();
        FaceField {
            fx: vec![T::default(); (cx + 1) * cy],
            fy: vec![T::default(); cx * (cy + 1)],
            fx_nx: cx + 1,
            fx_ny: cy,
            fy_nx: cx,
            fy_ny: cy + 1,
        }
    }

    #[inline]
    pub fn x_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.fx_nx && j < self.fx_ny);
        j * self.fx_nx + i
    }

    #[inline]
    pub fn y_idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.fy_nx && j < self.fy_ny);
        j * self.fy_nx + i
    }

    #[inline]
    pub fn x(&self, i: usize, j: usize) -> T {
        self.fx[self.x_idx(i, j)]
    }

    #[inline]
    pub fn y(&self, i: usize, j: usize) -> T {
        self.fy[self.y_idx(i, j)]
    }

    #[inline]
    pub fn set_x(&mut self, i: usize, j: usize, v: T) {
        let k = self.x_idx(i, j);
        self.fx[k] = v;
    }

    #[inline]
    pub fn set_y(&mut self, i: usize, j: usize, v: T) {
        let k = self.y_idx(i, j);
        self.fy[k] = v;
    }
}

/// Domain sides in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
}

pub const SIDES: [Side; 4] = [Side::XMinus, Side::XPlus, Side::YMinus, Side::YPlus];

impl Side {
    pub fn axis(self) -> usize {
        match self {
            Side::XMinus | Side::XPlus => 0,
            Side::YMinus | Side::YPlus => 1,
        }
    }

    /// Outward unit normal.
    pub fn normal(self) -> Vec2 {
        match self {
            Side::XMinus => Vec2::new(-1.0, 0.0),
            Side::XPlus => Vec2::new(1.0, 0.0),
            Side::YMinus => Vec2::new(0.0, -1.0),
            Side::YPlus => Vec2::new(0.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::XMinus => "x_minus",
            Side::XPlus => "x_plus",
            Side::YMinus => "y_minus",
            Side::YPlus => "y_plus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityBc {
    Dirichlet(Vec2),
    Symmetry,
    /// Free in/outflow: ghost values copy the interior and boundary face
    /// velocities come from the momentum update.
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarBc {
    Dirichlet(f64),
    ZeroGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PressureBc {
    Dirichlet(f64),
    /// Zero normal acceleration at a wall: copies the interior value plus
    /// the hydrostatic increment rho * g . dx so closed tanks stay still.
    ZeroGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceBc {
    pub velocity: VelocityBc,
    pub temperature: ScalarBc,
    pub pressure: PressureBc,
    pub density: ScalarBc,
}

impl Default for FaceBc {
    fn default() -> Self {
        FaceBc {
            velocity: VelocityBc::Dirichlet(Vec2::ZERO),
            temperature: ScalarBc::ZeroGradient,
            pressure: PressureBc::ZeroGradient,
            density: ScalarBc::ZeroGradient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySpec {
    pub x_minus: FaceBc,
    pub x_plus: FaceBc,
    pub y_minus: FaceBc,
    pub y_plus: FaceBc,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec {
            x_minus: FaceBc::default(),
            x_plus: FaceBc::default(),
            y_minus: FaceBc::default(),
            y_plus: FaceBc::default(),
        }
    }
}

impl BoundarySpec {
    pub fn side(&self, s: Side) -> &FaceBc {
        match s {
            Side::XMinus => &self.x_minus,
            Side::XPlus => &self.x_plus,
            Side::YMinus => &self.y_minus,
            Side::YPlus => &self.y_plus,
        }
    }

    pub fn side_mut(&mut self, s: Side) -> &mut FaceBc {
        match s {
            Side::XMinus => &mut self.x_minus,
            Side::XPlus => &mut self.x_plus,
            Side::YMinus => &mut self.y_minus,
            Side::YPlus => &mut self.y_plus,
        }
    }

    /// All sides symmetric (the 1-D column default for side walls).
    pub fn all_symmetry() -> Self {
        let f = FaceBc {
            velocity: VelocityBc::Symmetry,
            temperature: ScalarBc::ZeroGradient,
            pressure: PressureBc::ZeroGradient,
            density: ScalarBc::ZeroGradient,
        };
        BoundarySpec {
            x_minus: f,
            x_plus: f,
            y_minus: f,
            y_plus: f,
        }
    }
}

/// (ghost cell, interior mirror cell) index pairs for one side, nearest
/// layer first.
fn ghost_pairs(grid: &Grid, side: Side) -> Vec<((usize, usize), (usize, usize))> {
    let g = grid.ghost;
    let (cx, cy) = grid.cells_tot();
    let mut pairs = Vec::new();
    match side {
        Side::XMinus => {
            for k in 0..g {
                for j in 0..cy {
                    pairs.push(((g - 1 - k, j), (g + k, j)));
                }
            }
        }
        Side::XPlus => {
            for k in 0..g {
                for j in 0..cy {
                    pairs.push(((g + grid.nx + k, j), (g + grid.nx - 1 - k, j)));
                }
            }
        }
        Side::YMinus => {
            for k in 0..g {
                for i in 0..cx {
                    pairs.push(((i, g - 1 - k), (i, g + k)));
                }
            }
        }
        Side::YPlus => {
            for k in 0..g {
                for i in 0..cx {
                    pairs.push(((i, g + grid.ny + k), (i, g + grid.ny - 1 - k)));
                }
            }
        }
    }
    pairs
}

/// Fills ghost cells of a scalar field from per-side scalar conditions.
/// Dirichlet extrapolates linearly so the face value equals the target;
/// zero-gradient mirrors the interior.
pub fn fill_scalar_ghosts(
    field: &mut CellField<f64>,
    grid: &Grid,
    spec: &BoundarySpec,
    pick: impl Fn(&FaceBc) -> ScalarBc,
) {
    for side in SIDES {
        let bc = pick(spec.side(side));
        for ((gi, gj), (ii, ij)) in ghost_pairs(grid, side) {
            let v = match bc {
                ScalarBc::Dirichlet(t) => 2.0 * t - field.get(ii, ij),
                ScalarBc::ZeroGradient => field.get(ii, ij),
            };
            field.set(gi, gj, v);
        }
    }
}

/// Fills ghost pressure. Zero-gradient walls add the hydrostatic increment
/// from the adjacent interior density so a quiescent column sees no net
/// pressure force at the wall.
pub fn fill_pressure_ghosts(
    field: &mut CellField<f64>,
    grid: &Grid,
    spec: &BoundarySpec,
    gravity: Vec2,
    rho_total: &CellField<f64>,
) {
    for side in SIDES {
        let bc = spec.side(side).pressure;
        let outward = side.normal();
        for ((gi, gj), (ii, ij)) in ghost_pairs(grid, side) {
            let v = match bc {
                PressureBc::Dirichlet(p) => 2.0 * p - field.get(ii, ij),
                PressureBc::ZeroGradient => {
                    let delta = grid.cell_center(gi, gj) - grid.cell_center(ii, ij);
                    debug_assert!(delta.dot(outward) > 0.0);
                    field.get(ii, ij) + rho_total.get(ii, ij) * gravity.dot(delta)
                }
            };
            field.set(gi, gj, v);
        }
    }
}

/// Fills ghost cell velocities: Dirichlet reflects about the wall value,
/// symmetry mirrors tangential and negates normal components, open copies.
pub fn fill_velocity_ghosts(
    field: &mut CellField<Vec2>,
    grid: &Grid,
    spec: &BoundarySpec,
) {
    for side in SIDES {
        let bc = spec.side(side).velocity;
        let axis = side.axis();
        for ((gi, gj), (ii, ij)) in ghost_pairs(grid, side) {
            let int = field.get(ii, ij);
            let v = match bc {
                VelocityBc::Dirichlet(vb) => (vb.scale(2.0)) - int,
                VelocityBc::Symmetry => {
                    let mut m = int;
                    m.set_component(axis, -int.component(axis));
                    m
                }
                VelocityBc::Open => int,
            };
            field.set(gi, gj, v);
        }
    }
}

/// Imposes boundary conditions on face-normal velocities at domain faces.
/// Open faces keep the value computed from the momentum update.
pub fn apply_face_velocity_bcs(u: &mut FaceField<f64>, grid: &Grid, spec: &BoundarySpec) {
    let g = grid.ghost;
    for side in SIDES {
        let bc = spec.side(side).velocity;
        let pinned = match bc {
            VelocityBc::Dirichlet(v) => Some(v),
            VelocityBc::Symmetry => Some(Vec2::ZERO),
            VelocityBc::Open => None,
        };
        let Some(v) = pinned else { continue };
        match side {
            Side::XMinus => {
                for j in grid.interior_y() {
                    u.set_x(g, j, v.x);
                }
            }
            Side::XPlus => {
                for j in grid.interior_y() {
                    u.set_x(g + grid.nx, j, v.x);
                }
            }
            Side::YMinus => {
                for i in grid.interior_x() {
                    u.set_y(i, g, v.y);
                }
            }
            Side::YPlus => {
                for i in grid.interior_x() {
                    u.set_y(i, g + grid.ny, v.y);
                }
            }
        }
    }
}

/// Specific-volume-weighted pressure gradient on faces:
/// 2 v_L v_R / (v_L + v_R) * (P_R - P_L) / dx per axis. Ghosts must be
/// filled. Computed on every face with two stored neighbors.
pub fn face_pressure_gradient(
    p: &CellField<f64>,
    v_spec: &CellField<f64>,
    grid: &Grid,
) -> Result<FaceField<f64>> {
    let mut out = FaceField::zeros(grid);
    let (cx, cy) = grid.cells_tot();
    for j in 0..cy {
        for i in 1..cx {
            let (vl, vr) = (v_spec.get(i - 1, j), v_spec.get(i, j));
            if vl + vr <= 0.0 {
                return Err(SimError::Degenerate(format!(
                    "non-positive specific volume pair at x-face ({i},{j})"
                )));
            }
            let hm = 2.0 * vl * vr / (vl + vr);
            out.set_x(i, j, hm * (p.get(i, j) - p.get(i - 1, j)) / grid.dx);
        }
    }
    for j in 1..cy {
        for i in 0..cx {
            let (vl, vr) = (v_spec.get(i, j - 1), v_spec.get(i, j));
            if vl + vr <= 0.0 {
                return Err(SimError::Degenerate(format!(
                    "non-positive specific volume pair at y-face ({i},{j})"
                )));
            }
            let hm = 2.0 * vl * vr / (vl + vr);
            out.set_y(i, j, hm * (p.get(i, j) - p.get(i, j - 1)) / grid.dy);
        }
    }
    Ok(out)
}

/// Cell-centered divergence of face-normal velocities over interior cells.
pub fn cell_divergence(u: &FaceField<f64>, grid: &Grid) -> CellField<f64> {
    let mut out = CellField::zeros(grid);
    for j in grid.interior_y() {
        for i in grid.interior_x() {
            let d = (u.x(i + 1, j) - u.x(i, j)) / grid.dx
                + (u.y(i, j + 1) - u.y(i, j)) / grid.dy;
            out.set(i, j, d);
        }
    }
    out
}
