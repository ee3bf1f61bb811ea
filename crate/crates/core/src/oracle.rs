//! Independent ground truths: closed-form solutions and a classical
//! pseudo-spectral time stepper.
//!
//! The stepper evaluates its own right-hand side `nu Lap u - P div F(u)`
//! from the flux model and the grid primitives; it shares nothing with the
//! lift or the functional.

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flux::{flux_field, FluxModel};
use crate::grid::{Grid, SpaceTimeField, SpectralSlice, TimeGrid, VelocitySlice};
use crate::presets;

/// Closed-form solutions on the torus.
#[derive(Clone, Debug)]
pub enum AnalyticCase {
    /// Single divergence-free mode with wavenumber indices `(a, b)` and unit
    /// peak speed, decaying like `exp(-nu |k|^2 t)`.
    HeatMode { a: i32, b: i32, nu: f64 },
    /// Heat flow of an arbitrary admissible slice (mode-wise decay).
    Heat { v0: VelocitySlice, nu: f64 },
    /// `(cos x sin y, -sin x cos y) exp(-2 nu t)` on the `2 pi` torus, scaled
    /// to the grid periods otherwise.
    TaylorGreen { nu: f64 },
}

impl AnalyticCase {
    pub fn heat_mode(a: i32, b: i32, nu: f64) -> Self {
        AnalyticCase::HeatMode { a, b, nu }
    }

    pub fn taylor_green(nu: f64) -> Self {
        AnalyticCase::TaylorGreen { nu }
    }

    pub fn name(&self) -> String {
        match self {
            AnalyticCase::HeatMode { a, b, .. } => format!("heat_mode({a},{b})"),
            AnalyticCase::Heat { .. } => "heat".into(),
            AnalyticCase::TaylorGreen { nu } => format!("taylor_green(nu={nu})"),
        }
    }

    pub fn initial(&self, grid: &Grid) -> VelocitySlice {
        match self {
            AnalyticCase::HeatMode { a, b, .. } => presets::single_mode(grid, *a, *b, 1.0, 0.0),
            AnalyticCase::Heat { v0, .. } => v0.clone(),
            AnalyticCase::TaylorGreen { .. } => presets::taylor_green(grid),
        }
    }

    /// Velocity at time `t`; at `t = 0` this is bitwise [`Self::initial`].
    pub fn slice(&self, grid: &Grid, t: f64) -> VelocitySlice {
        let v0 = self.initial(grid);
        if t == 0.0 {
            return v0;
        }
        match self {
            AnalyticCase::HeatMode { a, b, nu } => {
                let kx = *a as f64 * 2.0 * std::f64::consts::PI / grid.lx();
                let ky = *b as f64 * 2.0 * std::f64::consts::PI / grid.ly();
                v0.scaled((-nu * (kx * kx + ky * ky) * t).exp())
            }
            AnalyticCase::TaylorGreen { nu } => {
                let ax = 2.0 * std::f64::consts::PI / grid.lx();
                let ay = 2.0 * std::f64::consts::PI / grid.ly();
                v0.scaled((-nu * (ax * ax + ay * ay) * t).exp())
            }
            AnalyticCase::Heat { nu, .. } => {
                let mut h = grid.forward_slice(&v0);
                for idx in 0..grid.len() {
                    let f = (-nu * grid.k_sq(idx) * t).exp();
                    h.x[idx] *= f;
                    h.y[idx] *= f;
                }
                grid.project_spectral(&mut h);
                grid.inverse_slice(&h)
            }
        }
    }

    pub fn field(&self, grid: &Grid, time: TimeGrid) -> Result<SpaceTimeField> {
        let slices = (0..=time.m()).map(|j| self.slice(grid, time.t(j))).collect();
        SpaceTimeField::new(grid.clone(), time, slices)
    }
}

/// How the reference stepper treats the viscous term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionTreatment {
    /// Exact exponential integrating factor (Lawson RK4).
    IntegratingFactor,
    /// Plain RK4 on the full right-hand side.
    Explicit,
}

#[derive(Clone, Debug)]
pub struct ReferenceRun {
    /// Solution subsampled onto the output time grid.
    pub field: SpaceTimeField,
    pub steps: usize,
    pub step_size: f64,
    /// Largest `||div u|| / ||u||` seen on any step.
    pub max_divergence: f64,
    pub diffusion: DiffusionTreatment,
}

impl ReferenceRun {
    pub fn final_slice(&self) -> &VelocitySlice {
        self.field.slice(self.field.time().m())
    }
}

struct Stepper<'a> {
    grid: &'a Grid,
    nu: f64,
    model: &'a FluxModel,
}

impl Stepper<'_> {
    /// `-P div F(u)` with the flux truncated by the 2/3 rule.
    fn nonlinear(&self, uh: &SpectralSlice) -> SpectralSlice {
        let g = self.grid;
        let mut out = SpectralSlice::zeros(g);
        if self.model.is_zero() {
            return out;
        }
        let u = g.inverse_slice(uh);
        let f = flux_field(self.model, &u.x, &u.y);
        let fh: Vec<Vec<Complex64>> = f.iter().map(|c| g.forward(c)).collect();
        let mask = g.dealias_mask();
        for idx in 0..g.len() {
            if !mask[idx] {
                continue;
            }
            let (kx, ky) = g.deriv_k(idx);
            let i = Complex64::new(0.0, 1.0);
            out.x[idx] = -i * (kx * fh[0][idx] + ky * fh[1][idx]);
            out.y[idx] = -i * (kx * fh[2][idx] + ky * fh[3][idx]);
        }
        g.project_spectral(&mut out);
        out
    }

    fn full_rhs(&self, uh: &SpectralSlice) -> SpectralSlice {
        let mut out = self.nonlinear(uh);
        for idx in 0..self.grid.len() {
            let l = -self.nu * self.grid.k_sq(idx);
            out.x[idx] += uh.x[idx] * l;
            out.y[idx] += uh.y[idx] * l;
        }
        out
    }
}

fn lin(a: &SpectralSlice, terms: &[(f64, &SpectralSlice)]) -> SpectralSlice {
    let mut out = a.clone();
    for (c, t) in terms {
        for (o, v) in out.x.iter_mut().zip(&t.x) {
            *o += v * *c;
        }
        for (o, v) in out.y.iter_mut().zip(&t.y) {
            *o += v * *c;
        }
    }
    out
}

fn damp(a: &SpectralSlice, e: &[f64]) -> SpectralSlice {
    SpectralSlice {
        x: a.x.iter().zip(e).map(|(v, f)| v * f).collect(),
        y: a.y.iter().zip(e).map(|(v, f)| v * f).collect(),
    }
}

/// Fourth-order Runge-Kutta solution of `u_t = nu Lap u - P div F(u)` from
/// `v0`, with `steps` uniform steps on `[0, T]` and output on every slice of
/// `time` (so `steps` must be a multiple of `time.m()`).
pub fn reference_solve(
    grid: &Grid,
    v0: &VelocitySlice,
    nu: f64,
    time: TimeGrid,
    steps: usize,
    model: &FluxModel,
    diffusion: DiffusionTreatment,
) -> Result<ReferenceRun> {
    grid.check_admissible(v0)?;
    if !(nu.is_finite() && nu >= 0.0) {
        return Err(Error::Config(format!("viscosity must be nonnegative, got {nu}")));
    }
    if steps == 0 || steps % time.m() != 0 {
        return Err(Error::Config(format!("steps ({steps}) must be a positive multiple of m ({})", time.m())));
    }
    let h = time.t_final() / steps as f64;
    let dx = (grid.lx() / grid.nx() as f64).min(grid.ly() / grid.ny() as f64);
    let umax = v0.max_speed_sq().sqrt();
    if h * umax > 0.5 * dx {
        return Err(Error::Config(format!(
            "advective step limit violated: dt = {h:e} > 0.5 dx / max|u| = {:e}",
            0.5 * dx / umax
        )));
    }
    let kmax_sq = (0..grid.len()).map(|i| grid.k_sq(i)).fold(0.0, f64::max);
    if diffusion == DiffusionTreatment::Explicit && h * nu * kmax_sq > 2.5 {
        return Err(Error::Config(format!(
            "explicit diffusion step limit violated: dt nu kmax^2 = {:.3} > 2.5",
            h * nu * kmax_sq
        )));
    }

    let st = Stepper { grid, nu, model };
    let e_half: Vec<f64> = (0..grid.len()).map(|i| (-nu * grid.k_sq(i) * 0.5 * h).exp()).collect();
    let e_full: Vec<f64> = e_half.iter().map(|e| e * e).collect();
    let mut uh = grid.forward_slice(v0);
    grid.project_spectral(&mut uh);
    let per_slice = steps / time.m();
    let mut slices = vec![v0.clone()];
    let mut max_div: f64 = 0.0;
    for step in 1..=steps {
        uh = match diffusion {
            DiffusionTreatment::IntegratingFactor => {
                let k1 = st.nonlinear(&uh);
                let k2 = st.nonlinear(&damp(&lin(&uh, &[(0.5 * h, &k1)]), &e_half));
                let uh_half = damp(&uh, &e_half);
                let k3 = st.nonlinear(&lin(&uh_half, &[(0.5 * h, &k2)]));
                let k4 = st.nonlinear(&lin(&damp(&uh, &e_full), &[(h, &damp(&k3, &e_half))]));
                let mid = damp(&lin(&k2, &[(1.0, &k3)]), &e_half);
                lin(&damp(&uh, &e_full), &[(h / 6.0, &damp(&k1, &e_full)), (h / 3.0, &mid), (h / 6.0, &k4)])
            }
            DiffusionTreatment::Explicit => {
                let k1 = st.full_rhs(&uh);
                let k2 = st.full_rhs(&lin(&uh, &[(0.5 * h, &k1)]));
                let k3 = st.full_rhs(&lin(&uh, &[(0.5 * h, &k2)]));
                let k4 = st.full_rhs(&lin(&uh, &[(h, &k3)]));
                lin(&uh, &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)])
            }
        };
        grid.project_spectral(&mut uh);
        if step % per_slice == 0 {
            let u = grid.inverse_slice(&uh);
            if !u.is_finite() {
                return Err(Error::Divergence { iterations: step, reason: "reference solution blew up".into() });
            }
            let n = grid.norm(&u);
            if n > 0.0 {
                max_div = max_div.max(grid.divergence_norm(&u) / n);
            }
            slices.push(u);
        }
    }
    Ok(ReferenceRun {
        field: SpaceTimeField::new(grid.clone(), time, slices)?,
        steps,
        step_size: h,
        max_divergence: max_div,
        diffusion,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorReport {
    /// `||u - truth|| / ||truth||` in trapezoid `L2(space-time)`; absolute
    /// when the truth vanishes.
    pub relative_l2: f64,
    /// Same on the terminal slice alone.
    pub terminal_relative: f64,
    /// `max |u - truth|` per slice.
    pub per_slice_max: Vec<f64>,
}

pub fn compare(u: &SpaceTimeField, truth: &SpaceTimeField) -> Result<ErrorReport> {
    if !u.same_grids(truth) {
        return Err(Error::Usage("compare: fields live on different grids".into()));
    }
    let diff = u.axpy(-1.0, truth);
    let rel = |a: f64, b: f64| if b > 0.0 { a / b } else { a };
    let grid = u.grid();
    let m = u.time().m();
    Ok(ErrorReport {
        relative_l2: rel(diff.l2_norm(), truth.l2_norm()),
        terminal_relative: rel(grid.norm(diff.slice(m)), grid.norm(truth.slice(m))),
        per_slice_max: diff.slices().iter().map(|s| s.max_abs()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heat_mode_decay_is_exact() {
        let g = Grid::square(32).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let case = AnalyticCase::heat_mode(1, 2, 1.0);
        let run =
            reference_solve(&g, &case.initial(&g), 1.0, time, 64, &FluxModel::Zero, DiffusionTreatment::IntegratingFactor)
                .unwrap();
        let err = compare(&run.field, &case.field(&g, time).unwrap()).unwrap();
        assert!(err.relative_l2 < 1e-10, "{err:?}");
        assert!(err.terminal_relative < 1e-10);
    }

    #[test]
    fn step_limits_are_checked() {
        let g = Grid::square(32).unwrap();
        let time = TimeGrid::new(4, 10.0).unwrap();
        let v0 = presets::taylor_green(&g).scaled(50.0);
        let r = reference_solve(&g, &v0, 1.0, time, 8, &FluxModel::ExactQuadratic, DiffusionTreatment::IntegratingFactor);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = reference_solve(&g, &v0, 1.0, time, 6, &FluxModel::ExactQuadratic, DiffusionTreatment::IntegratingFactor);
        assert!(matches!(r, Err(Error::Config(_))));
        let v0 = presets::taylor_green(&g);
        let r = reference_solve(&g, &v0, 1.0, TimeGrid::new(4, 1.0).unwrap(), 8, &FluxModel::Zero, DiffusionTreatment::Explicit);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn compare_closed_forms() {
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let truth = AnalyticCase::taylor_green(1.0).field(&g, time).unwrap();
        let same = compare(&truth, &truth).unwrap();
        assert_eq!(same.relative_l2, 0.0);
        assert!(same.per_slice_max.iter().all(|&e| e == 0.0));
        // add eps * mode on every slice: error = eps ||mode|| / ||truth|| in the
        // time-integrated sense
        let eps = 1e-3;
        let mode = presets::single_mode(&g, 2, 1, 1.0, 0.3);
        let pert = SpaceTimeField::new(
            g.clone(),
            time,
            truth.slices().iter().map(|s| s.axpy(eps, &mode)).collect(),
        )
        .unwrap();
        let err = compare(&pert, &truth).unwrap();
        // closed form: |mode|^2 = area / 2, |TG(t)|^2 = area / 2 * exp(-4t)
        let w = time.trapezoid_weights();
        let tg_sq: f64 = (0..=4).map(|j| w[j] * (-4.0 * time.t(j)).exp()).sum();
        let expect = eps * (1.0 / tg_sq).sqrt();
        assert!((err.relative_l2 - expect).abs() < 1e-12 * expect.max(1.0), "{} vs {expect}", err.relative_l2);
    }
}
