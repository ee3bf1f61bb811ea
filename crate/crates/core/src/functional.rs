//! Space-time objectives and their exact discrete gradient.
//!
//! On the staggered midpoints `t_{k+1/2}` (see [`crate::lift`]) the value is
//!
//! ```text
//! I(u) = 1/2 sum_k dt ( nu |grad(ubar_k + rbar_k)|^2 + 1/nu |grad(H_k - nu rbar_k)|^2 )
//!        + 1/2 ||u_m||^2
//! ```
//!
//! and, because `sum_k dt <ubar_k, d_k>` telescopes to
//! `1/2 (||u_m||^2 - ||u_0||^2)`, the same number equals
//!
//! ```text
//! 1/2 ||u_0||^2 + 1/(2 nu) sum_k dt |grad(nu (ubar_k + rbar_k) - H_k)|^2
//!              + nu/2 sum_k dt |grad rbar_k|^2 + sum_k dt <grad ubar_k, D F(ubar_k)>.
//! ```
//!
//! The last sum vanishes in the continuum for fluxes with a potential and is
//! reported as `energy_defect`; on the grid it is a small aliasing error of
//! either sign. The residual part of the second form,
//!
//! ```text
//! J(u) = 1/(2 nu) sum_k dt |grad(nu (ubar_k + rbar_k) - H_k)|^2 + nu/2 sum_k dt |grad rbar_k|^2,
//! ```
//!
//! is exactly nonnegative and vanishes exactly at discrete solutions, so it
//! is what the optimizer drives to zero (`objective`). Without shift and with
//! `nu = 1` this is the Navier-Stokes functional; the heat functional is the
//! `F = 0` case.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flux::{FluxModel, Vec2};
use crate::grid::{Grid, SpaceTimeField, SpectralSlice, VelocitySlice};
use crate::lift::{mid_states, MidState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionalKind {
    Heat,
    NavierStokes,
}

/// What to minimize, and the pinned initial datum.
#[derive(Clone, Debug)]
pub struct FunctionalSpec {
    pub kind: FunctionalKind,
    pub model: FluxModel,
    pub nu: f64,
    pub r: Option<SpaceTimeField>,
    pub v0: VelocitySlice,
}

impl FunctionalSpec {
    pub fn heat(v0: VelocitySlice) -> Self {
        Self { kind: FunctionalKind::Heat, model: FluxModel::Zero, nu: 1.0, r: None, v0 }
    }

    pub fn navier_stokes(model: FluxModel, nu: f64, v0: VelocitySlice) -> Self {
        Self { kind: FunctionalKind::NavierStokes, model, nu, r: None, v0 }
    }

    pub fn with_shift(mut self, r: SpaceTimeField) -> Self {
        self.r = Some(r);
        self
    }

    /// Flux actually used: the heat functional ignores `model`.
    pub fn effective_model(&self) -> &FluxModel {
        match self.kind {
            FunctionalKind::Heat => &FluxModel::Zero,
            FunctionalKind::NavierStokes => &self.model,
        }
    }

    pub(crate) fn validate(&self, u: &SpaceTimeField) -> Result<()> {
        if !(self.nu.is_finite() && self.nu > 0.0) {
            return Err(Error::Precondition(format!("viscosity must be positive, got {}", self.nu)));
        }
        if let Some(r) = &self.r {
            if !r.same_grids(u) {
                return Err(Error::Usage("shift field lives on different grids".into()));
            }
        }
        if u.slice(0) != &self.v0 {
            return Err(Error::Usage("slice 0 differs from the pinned initial datum".into()));
        }
        Ok(())
    }
}

/// Value of the objective at one history.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Defining form.
    pub value: f64,
    /// Integrated-by-parts form without the flux aliasing term.
    pub value_via_rewrite: f64,
    /// `value - 1/2 ||v0||^2`, evaluated without cancellation.
    pub gap: f64,
    /// `value_via_rewrite - 1/2 ||v0||^2 >= 0`, the optimizer's objective.
    pub objective: f64,
    /// `sum_k dt <grad ubar_k, D F(ubar_k)>`.
    pub energy_defect: f64,
    /// `L2` gradient of `value` per slice (slice 0 identically zero),
    /// projected onto the admissible space. Present only from
    /// [`evaluate_with_gradient`].
    pub grad: Option<SpaceTimeField>,
    /// Same for `objective`.
    pub objective_grad: Option<SpaceTimeField>,
    /// `||ubar + rbar - H / nu||` in `L2(space-time)`.
    pub w_norm: f64,
    /// `||ubar||` in `L2(space-time)`.
    pub u_norm: f64,
    /// `1/2 ||v0||^2`.
    pub half_v0_sq: f64,
}

impl Evaluation {
    pub fn relative_w(&self) -> f64 {
        if self.u_norm > 0.0 {
            self.w_norm / self.u_norm
        } else {
            self.w_norm
        }
    }
}

struct MidTerms {
    value_part: f64,
    resid_sq: f64,
    shift_sq: f64,
    defect: f64,
    w_sq: f64,
    u_sq: f64,
    /// Gradients of the residual part and of the aliasing defect with
    /// respect to `ubar_k`, and of the residual part with respect to `d_k`
    /// (all already times `dt`).
    g_ubar: Option<VelocitySlice>,
    g_ubar_defect: Option<VelocitySlice>,
    g_d: Option<VelocitySlice>,
}

fn grad_sq(grid: &Grid, s: &SpectralSlice) -> f64 {
    grid.grad_sq_spectral(&s.x) + grid.grad_sq_spectral(&s.y)
}

fn combine(a: &SpectralSlice, ca: f64, b: &SpectralSlice, cb: f64) -> SpectralSlice {
    SpectralSlice {
        x: a.x.iter().zip(&b.x).map(|(p, q)| p * ca + q * cb).collect(),
        y: a.y.iter().zip(&b.y).map(|(p, q)| p * ca + q * cb).collect(),
    }
}

/// `<grad ubar, D F>` from spectral data.
fn flux_pairing(grid: &Grid, ubar: &SpectralSlice, fh: &[Vec<Complex64>; 4]) -> f64 {
    let mut acc = 0.0;
    for idx in 0..grid.len() {
        let (kx, ky) = grid.deriv_k(idx);
        let i = Complex64::new(0.0, 1.0);
        let (dxu, dyu) = (i * kx * ubar.x[idx], i * ky * ubar.x[idx]);
        let (dxv, dyv) = (i * kx * ubar.y[idx], i * ky * ubar.y[idx]);
        acc += (dxu * fh[0][idx].conj() + dyu * fh[1][idx].conj() + dxv * fh[2][idx].conj() + dyv * fh[3][idx].conj()).re;
    }
    acc * grid.area()
}

/// Dealiased physical partials `D d_j s_i` as `[d1 s1, d2 s1, d1 s2, d2 s2]`.
fn dealiased_partials(grid: &Grid, s: &SpectralSlice) -> [Vec<f64>; 4] {
    let n = grid.len();
    let i = Complex64::new(0.0, 1.0);
    let mut out: [Vec<Complex64>; 4] = std::array::from_fn(|_| vec![Complex64::new(0.0, 0.0); n]);
    let mask = grid.dealias_mask();
    for idx in 0..n {
        if !mask[idx] {
            continue;
        }
        let (kx, ky) = grid.deriv_k(idx);
        out[0][idx] = i * kx * s.x[idx];
        out[1][idx] = i * ky * s.x[idx];
        out[2][idx] = i * kx * s.y[idx];
        out[3][idx] = i * ky * s.y[idx];
    }
    out.map(|c| grid.inverse(&c))
}

#[allow(clippy::too_many_arguments)]
fn mid_terms(
    grid: &Grid,
    model: &FluxModel,
    nu: f64,
    dt: f64,
    st: &MidState,
    rbar: Option<&SpectralSlice>,
    want_grad: bool,
) -> MidTerms {
    let shifted = match rbar {
        Some(r) => combine(&st.ubar_hat, 1.0, r, 1.0),
        None => st.ubar_hat.clone(),
    };
    let h_minus = match rbar {
        Some(r) => combine(&st.h_hat, 1.0, r, -nu),
        None => st.h_hat.clone(),
    };
    // R = nu (ubar + rbar) - H
    let resid = combine(&shifted, nu, &st.h_hat, -1.0);
    let value_part = 0.5 * dt * (nu * grad_sq(grid, &shifted) + grad_sq(grid, &h_minus) / nu);
    let resid_sq = grad_sq(grid, &resid);
    let shift_sq = rbar.map(|r| grad_sq(grid, r)).unwrap_or(0.0);
    let defect = st.flux_hat.as_ref().map(|fh| flux_pairing(grid, &st.ubar_hat, fh)).unwrap_or(0.0);
    let w_phys = grid.inverse_slice(&resid).scaled(1.0 / nu);
    let w_sq = grid.norm_sq(&w_phys);
    let u_sq = grid.norm_sq(&st.ubar);

    let (g_ubar, g_ubar_defect, g_d) = if want_grad {
        // d/d ubar of 1/(2nu)|grad R|^2:        L R - sum_ij D d_j (R/nu)_i dF_ij/du_m
        // d/d ubar of <grad ubar, D F(ubar)>:   -div D F + sum_ij D d_j ubar_i dF_ij/du_m
        let mut lr = resid.clone();
        grid.laplacian_spectral(&mut lr.x);
        grid.laplacian_spectral(&mut lr.y);
        let neg_lr = SpectralSlice { x: lr.x.iter().map(|c| -c).collect(), y: lr.y.iter().map(|c| -c).collect() };
        let mut g = grid.inverse_slice(&neg_lr);
        let mut gdef = VelocitySlice::zeros(grid);
        if let Some(fh) = &st.flux_hat {
            let mut div = SpectralSlice::zeros(grid);
            crate::lift::flux_divergence(grid, fh, &mut div);
            gdef = grid.inverse_slice(&div).scaled(-1.0);
            let pr = dealiased_partials(grid, &resid);
            let pu = dealiased_partials(grid, &st.ubar_hat);
            for p in 0..grid.len() {
                let v: Vec2 = [st.ubar.x[p], st.ubar.y[p]];
                let df = model.derivative(v);
                let contract = |parts: &[Vec<f64>; 4], dfm: &[[f64; 2]; 2]| {
                    dfm[0][0] * parts[0][p] + dfm[0][1] * parts[1][p] + dfm[1][0] * parts[2][p] + dfm[1][1] * parts[3][p]
                };
                let (r0, r1) = (contract(&pr, &df[0]) / nu, contract(&pr, &df[1]) / nu);
                let (u0, u1) = (contract(&pu, &df[0]), contract(&pu, &df[1]));
                g.x[p] -= r0;
                g.y[p] -= r1;
                gdef.x[p] += u0;
                gdef.y[p] += u1;
            }
        }
        let gd = grid.inverse_slice(&resid).scaled(dt / nu);
        (Some(g.scaled(dt)), Some(gdef.scaled(dt)), Some(gd))
    } else {
        (None, None, None)
    };
    MidTerms { value_part, resid_sq, shift_sq, defect, w_sq, u_sq, g_ubar, g_ubar_defect, g_d }
}

fn run(u: &SpaceTimeField, spec: &FunctionalSpec, want_grad: bool) -> Result<Evaluation> {
    spec.validate(u)?;
    let grid = u.grid();
    let time = u.time();
    let dt = time.dt();
    let nu = spec.nu;
    let model = spec.effective_model();
    let states = mid_states(u, model)?;
    let rbars: Option<Vec<SpectralSlice>> =
        spec.r.as_ref().map(|r| r.midpoints().iter().map(|s| grid.forward_slice(s)).collect());
    let terms: Vec<MidTerms> = states
        .par_iter()
        .enumerate()
        .map(|(k, st)| mid_terms(grid, model, nu, dt, st, rbars.as_ref().map(|r| &r[k]), want_grad))
        .collect();

    let m = time.m();
    let half_v0_sq = 0.5 * grid.norm_sq(u.slice(0));
    let mut value = 0.5 * grid.norm_sq(u.slice(m));
    let (mut resid, mut shift, mut defect, mut w_sq, mut u_sq) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in &terms {
        value += t.value_part;
        resid += t.resid_sq;
        shift += t.shift_sq;
        defect += t.defect;
        w_sq += t.w_sq;
        u_sq += t.u_sq;
    }
    let rewrite_extra = dt * (resid / (2.0 * nu) + 0.5 * nu * shift);
    let energy_defect = dt * defect;

    let (grad, objective_grad) = if want_grad {
        let inv_dt = 1.0 / dt;
        let assemble = |with_defect: bool| -> Result<SpaceTimeField> {
            let mut slices = vec![VelocitySlice::zeros(grid); m + 1];
            slices[1..].par_iter_mut().enumerate().for_each(|(jm1, gj)| {
                let j = jm1 + 1;
                let mut add = |t: &MidTerms, half: f64, d: f64| {
                    gj.add_assign_scaled(half, t.g_ubar.as_ref().unwrap());
                    if with_defect {
                        gj.add_assign_scaled(half, t.g_ubar_defect.as_ref().unwrap());
                    }
                    gj.add_assign_scaled(d, t.g_d.as_ref().unwrap());
                };
                add(&terms[j - 1], 0.5, inv_dt);
                if j < m {
                    add(&terms[j], 0.5, -inv_dt);
                }
                *gj = grid.project(gj);
            });
            SpaceTimeField::new_unchecked(grid.clone(), time, slices)
        };
        (Some(assemble(true)?), Some(assemble(false)?))
    } else {
        (None, None)
    };

    Ok(Evaluation {
        value,
        value_via_rewrite: half_v0_sq + rewrite_extra,
        gap: rewrite_extra + energy_defect,
        objective: rewrite_extra,
        energy_defect,
        grad,
        objective_grad,
        w_norm: (w_sq * dt).sqrt(),
        u_norm: (u_sq * dt).sqrt(),
        half_v0_sq,
    })
}

/// Value (both forms) and residual norms; no gradient.
pub fn evaluate(u: &SpaceTimeField, spec: &FunctionalSpec) -> Result<Evaluation> {
    run(u, spec, false)
}

/// As [`evaluate`], with the exact gradient filled in.
pub fn evaluate_with_gradient(u: &SpaceTimeField, spec: &FunctionalSpec) -> Result<Evaluation> {
    run(u, spec, true)
}

/// Exact gradient of the discrete value on the admissible space: the
/// directional derivative along an admissible `delta` with `delta_0 = 0` is
/// `sum_j <grad_j, delta_j>_{L2}`.
pub fn gradient(u: &SpaceTimeField, spec: &FunctionalSpec) -> Result<SpaceTimeField> {
    Ok(run(u, spec, true)?.grad.expect("gradient requested"))
}

/// `sum_j <a_j, b_j>_{L2}` over all slices, the pairing under which
/// [`gradient`] is a Riesz representative.
pub fn slice_pairing(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    let g = a.grid();
    a.slices().iter().zip(b.slices()).map(|(p, q)| g.inner(p, q)).sum()
}

/// First variation evaluated term by term by quadrature:
///
/// ```text
/// sum_k dt [ nu <grad W_k, grad deltabar_k> + <(delta_{k+1} - delta_k)/dt, W_k>
///            - <sum_j deltabar_j dF/du_j(ubar_k), grad W_k> ]
/// ```
///
/// with `W = ubar + rbar - H / nu`. The flux product is formed pointwise
/// without dealiasing, so this route is independent of the adjoint.
pub fn first_variation_report(u: &SpaceTimeField, delta: &SpaceTimeField, spec: &FunctionalSpec) -> Result<f64> {
    spec.validate(u)?;
    if !delta.same_grids(u) {
        return Err(Error::Usage("variation direction lives on different grids".into()));
    }
    let grid = u.grid();
    if delta.slice(0).max_abs() != 0.0 {
        return Err(Error::Usage("variation direction must vanish on slice 0".into()));
    }
    for (j, s) in delta.slices().iter().enumerate() {
        grid.check_admissible(s).map_err(|e| Error::Usage(format!("direction slice {j}: {e}")))?;
    }
    let nu = spec.nu;
    let model = spec.effective_model();
    let dt = u.time().dt();
    let states = mid_states(u, model)?;
    let rbars = spec.r.as_ref().map(|r| r.midpoints());
    let dbar = delta.midpoints();
    let dd = delta.midpoint_derivative();
    let per: Vec<f64> = states
        .par_iter()
        .enumerate()
        .map(|(k, st)| {
            let h = grid.inverse_slice(&st.h_hat);
            let mut w = st.ubar.axpy(-1.0 / nu, &h);
            if let Some(rb) = &rbars {
                w.add_assign_scaled(1.0, &rb[k]);
            }
            let mut acc = nu * grid.grad_inner(&w, &dbar[k]) + grid.inner(&dd[k], &w);
            if !model.is_zero() {
                let (wxx, wxy) = grid.partials(&w.x);
                let (wyx, wyy) = grid.partials(&w.y);
                let mut s = 0.0;
                for p in 0..grid.len() {
                    let df = model.derivative([st.ubar.x[p], st.ubar.y[p]]);
                    let (a, b) = (dbar[k].x[p], dbar[k].y[p]);
                    let fp = |i: usize, j: usize| a * df[0][i][j] + b * df[1][i][j];
                    s += fp(0, 0) * wxx[p] + fp(0, 1) * wxy[p] + fp(1, 0) * wyx[p] + fp(1, 1) * wyy[p];
                }
                acc -= s * grid.cell_area();
            }
            acc * dt
        })
        .collect();
    Ok(per.iter().sum())
}

/// Per-slice energy-equality defects `j = 1..m`:
///
/// ```text
/// | 1/2 ||u_j||^2 + nu sum_{k<j} dt (|grad ubar_k|^2 + <grad rbar_k, grad ubar_k>) - 1/2 ||v0||^2 |
/// ```
///
/// divided by `1/2 ||v0||^2` (absolute when `v0 = 0`).
pub fn energy_equality_defects(u: &SpaceTimeField, spec: &FunctionalSpec) -> Vec<f64> {
    let grid = u.grid();
    let dt = u.time().dt();
    let half_v0 = 0.5 * grid.norm_sq(&spec.v0);
    let scale = if half_v0 > 1e-28 { half_v0 } else { 1.0 };
    let mids = u.midpoints();
    let rbars = spec.r.as_ref().map(|r| r.midpoints());
    let dissipation: Vec<f64> = mids
        .par_iter()
        .enumerate()
        .map(|(k, ub)| {
            let mut d = grid.grad_norm_sq(ub);
            if let Some(rb) = &rbars {
                d += grid.grad_inner(&rb[k], ub);
            }
            spec.nu * dt * d
        })
        .collect();
    let mut acc = 0.0;
    (1..=u.time().m())
        .map(|j| {
            acc += dissipation[j - 1];
            (0.5 * grid.norm_sq(u.slice(j)) + acc - half_v0).abs() / scale
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use std::f64::consts::PI;

    fn sin_mode(g: &Grid) -> VelocitySlice {
        g.sample_vector(|x, _| (0.0, x.sin()))
    }

    #[test]
    fn constant_history_value() {
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let v0 = sin_mode(&g);
        let u = SpaceTimeField::constant(&g, time, &v0).unwrap();
        let e = evaluate(&u, &FunctionalSpec::navier_stokes(FluxModel::Zero, 1.0, v0.clone())).unwrap();
        assert!((e.value - 2.0 * PI * PI).abs() < 1e-11);
        assert!((e.value - e.value_via_rewrite).abs() < 1e-11);
        assert!((e.gap + e.half_v0_sq - e.value).abs() < 1e-11);
        let h = evaluate(&u, &FunctionalSpec::heat(v0)).unwrap();
        assert_eq!(h.value, e.value);
    }

    #[test]
    fn pinned_slice_is_enforced() {
        let g = Grid::square(8).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let v0 = sin_mode(&g);
        let u = SpaceTimeField::constant(&g, time, &v0).unwrap();
        let spec = FunctionalSpec::heat(v0.scaled(1.0 + 1e-15));
        assert!(matches!(evaluate(&u, &spec), Err(Error::Usage(_))));
        let mut bad = FunctionalSpec::heat(v0);
        bad.nu = 0.0;
        assert!(matches!(evaluate(&u, &bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn gradient_slice_zero_vanishes() {
        let g = Grid::square(8).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let v0 = sin_mode(&g);
        let u = SpaceTimeField::constant(&g, time, &v0).unwrap();
        let gr = gradient(&u, &FunctionalSpec::navier_stokes(FluxModel::cutoff(1.0).unwrap(), 1.0, v0)).unwrap();
        assert!(gr.slice(0).max_abs() == 0.0);
        assert!(gr.slices()[1..].iter().any(|s| s.max_abs() > 0.0));
    }

    #[test]
    fn zero_shift_is_bitwise_unshifted() {
        let g = Grid::square(8).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let v0 = g.sample_vector(|x, y| (y.sin() + x.cos() * y.sin(), -x.sin() * y.cos()));
        let v0 = g.project(&v0);
        let u = SpaceTimeField::from_fn(&g, time, |x, y, t| {
            ((1.0 - t) * (y.sin() + x.cos() * y.sin()), -(1.0 - t) * x.sin() * y.cos())
        })
        .unwrap();
        let mut slices = u.into_slices();
        slices[0] = v0.clone();
        let u = SpaceTimeField::new(g.clone(), time, slices).unwrap();
        let base = FunctionalSpec::navier_stokes(FluxModel::ExactQuadratic, 1.0, v0);
        let shifted = base.clone().with_shift(SpaceTimeField::zeros(&g, time));
        let (a, b) = (evaluate_with_gradient(&u, &base).unwrap(), evaluate_with_gradient(&u, &shifted).unwrap());
        assert_eq!(a.value, b.value);
        assert_eq!(a.value_via_rewrite, b.value_via_rewrite);
        assert_eq!(a.grad.unwrap().slices(), b.grad.unwrap().slices());
    }

    fn fd_check(spec: &FunctionalSpec, u: &SpaceTimeField, seed: u64, dirs: usize) -> f64 {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = u.grid();
        let grad = gradient(u, spec).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..dirs {
            let d = crate::presets::random_direction(g, u.time(), &mut rng, 3).unwrap();
            let scale = u.l2_norm() / d.l2_norm();
            let s = 1e-4 * scale;
            let (up, um) = (u.axpy(s, &d), u.axpy(-s, &d));
            let fd = (evaluate(&up, spec).unwrap().value - evaluate(&um, spec).unwrap().value) / (2.0 * s);
            let an = slice_pairing(&grad, &d);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let v0 = crate::presets::random_slice(&g, &mut rng, 3, 4.0);
        let u = crate::presets::random_history(&g, time, &v0, &mut rng, 3, 3.0).unwrap();
        for spec in [
            FunctionalSpec::heat(v0.clone()),
            FunctionalSpec::navier_stokes(FluxModel::cutoff(10.0).unwrap(), 1.0, v0.clone()),
            FunctionalSpec::navier_stokes(FluxModel::ExactQuadratic, 0.3, v0.clone()),
            FunctionalSpec::navier_stokes(FluxModel::cutoff(2.0).unwrap(), 1.7, v0.clone())
                .with_shift(crate::presets::random_history(&g, time, &v0, &mut rng, 2, 1.0).unwrap()),
        ] {
            let d = fd_check(&spec, &u, 9, 5);
            assert!(d < 1e-6, "{:?}: {d:e}", spec.model);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let v0 = crate::presets::random_slice(&g, &mut rng, 3, 4.0);
        let u = crate::presets::random_history(&g, time, &v0, &mut rng, 3, 3.0).unwrap();
        for spec in [
            FunctionalSpec::navier_stokes(FluxModel::cutoff(2.0).unwrap(), 1.0, v0.clone()),
            FunctionalSpec::navier_stokes(FluxModel::ExactQuadratic, 0.5, v0.clone())
                .with_shift(crate::presets::random_history(&g, time, &v0, &mut rng, 2, 1.0).unwrap()),
        ] {
            let e = evaluate_with_gradient(&u, &spec).unwrap();
            let og = e.objective_grad.unwrap();
            assert!(e.objective >= 0.0);
            for _ in 0..5 {
                let d = crate::presets::random_direction(&g, time, &mut rng, 3).unwrap();
                let s = 1e-4 * u.l2_norm() / d.l2_norm();
                let f = |x: &SpaceTimeField| evaluate(x, &spec).unwrap().objective;
                let fd = (f(&u.axpy(s, &d)) - f(&u.axpy(-s, &d))) / (2.0 * s);
                let an = slice_pairing(&og, &d);
                assert!((fd - an).abs() < 1e-6 * fd.abs().max(an.abs()), "{fd} vs {an}");
            }
        }
    }
}
