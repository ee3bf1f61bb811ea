//! Stokes lift of a velocity history.
//!
//! For each staggered midpoint `t_{k+1/2}` the lift solves
//!
//! ```text
//! Laplacian H_k = P( d_k + div D F(ubar_k) ),   div H_k = 0,   mean H_k = 0
//! ```
//!
//! with `ubar_k = (u_k + u_{k+1}) / 2`, `d_k = (u_{k+1} - u_k) / dt`, `P` the
//! Leray projection and `D` the 2/3 dealiasing mask. The pressure is never
//! formed. Midpoints are independent of each other once `d_k` is known.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::flux::{flux_field, FluxModel};
use crate::grid::{Grid, MidpointField, SpaceTimeField, SpectralSlice, VelocitySlice};

/// Lift `H_u`, residual `W_u` and per-midpoint `||grad H_u||`.
#[derive(Clone, Debug)]
pub struct LiftResult {
    pub h_field: MidpointField,
    /// `ubar - H` (or `ubar + rbar - H` for a shifted problem).
    pub w_field: MidpointField,
    pub rhs_norm_per_slice: Vec<f64>,
}

/// Spectral state of one midpoint, shared with the functional.
pub(crate) struct MidState {
    pub ubar: VelocitySlice,
    pub ubar_hat: SpectralSlice,
    /// Dealiased flux `[F11, F12, F21, F22]`, absent for the zero flux.
    pub flux_hat: Option<[Vec<Complex64>; 4]>,
    pub h_hat: SpectralSlice,
}

/// Dealiased spectral divergence of a flux given by its (masked) spectral
/// components.
pub(crate) fn flux_divergence(grid: &Grid, fh: &[Vec<Complex64>; 4], out: &mut SpectralSlice) {
    let i = Complex64::new(0.0, 1.0);
    for idx in 0..grid.len() {
        let (kx, ky) = grid.deriv_k(idx);
        out.x[idx] += i * (fh[0][idx] * kx + fh[1][idx] * ky);
        out.y[idx] += i * (fh[2][idx] * kx + fh[3][idx] * ky);
    }
}

pub(crate) fn dealiased_flux(grid: &Grid, model: &FluxModel, u: &VelocitySlice) -> Option<[Vec<Complex64>; 4]> {
    if model.is_zero() {
        return None;
    }
    let comps = flux_field(model, &u.x, &u.y);
    let mut hat = comps.map(|c| grid.forward(&c));
    for c in hat.iter_mut() {
        grid.dealias_spectral(c);
    }
    Some(hat)
}

fn all_finite(c: &[Complex64]) -> bool {
    c.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub(crate) fn mid_state(
    grid: &Grid,
    model: &FluxModel,
    ubar: VelocitySlice,
    d: &VelocitySlice,
    k: usize,
) -> Result<MidState> {
    let ubar_hat = grid.forward_slice(&ubar);
    let mut b = grid.forward_slice(d);
    let flux_hat = dealiased_flux(grid, model, &ubar);
    if let Some(fh) = &flux_hat {
        if !fh.iter().all(|c| all_finite(c)) {
            return Err(Error::Overflow { slice: k, what: "flux".into() });
        }
        flux_divergence(grid, fh, &mut b);
    }
    grid.project_spectral(&mut b);
    grid.inv_laplacian_spectral(&mut b.x);
    grid.inv_laplacian_spectral(&mut b.y);
    if !all_finite(&b.x) || !all_finite(&b.y) {
        return Err(Error::Overflow { slice: k, what: "lifted field".into() });
    }
    Ok(MidState { ubar, ubar_hat, flux_hat, h_hat: b })
}

/// Computes the midpoint states of a history in parallel.
pub(crate) fn mid_states(u: &SpaceTimeField, model: &FluxModel) -> Result<Vec<MidState>> {
    let grid = u.grid();
    let ubars = u.midpoints();
    let ds = u.midpoint_derivative();
    ubars
        .into_par_iter()
        .zip(ds.par_iter())
        .enumerate()
        .map(|(k, (ub, d))| mid_state(grid, model, ub, d, k))
        .collect()
}

/// Stokes lift of `u`. With a shift `r` the residual is taken against
/// `u + r`, which is what `H_u` reproduces at a solution of the shifted
/// problem.
pub fn stokes_lift(u: &SpaceTimeField, model: &FluxModel, r: Option<&SpaceTimeField>) -> Result<LiftResult> {
    if let Some(r) = r {
        if !r.same_grids(u) {
            return Err(Error::Usage("stokes_lift: shift defined on different grids".into()));
        }
    }
    let grid = u.grid();
    let states = mid_states(u, model)?;
    let rbars = r.map(|r| r.midpoints());
    let mut hs = Vec::with_capacity(states.len());
    let mut ws = Vec::with_capacity(states.len());
    let mut norms = Vec::with_capacity(states.len());
    for (k, st) in states.into_iter().enumerate() {
        let h = grid.inverse_slice(&st.h_hat);
        norms.push((grid.grad_sq_spectral(&st.h_hat.x) + grid.grad_sq_spectral(&st.h_hat.y)).sqrt());
        let mut w = st.ubar.sub(&h);
        if let Some(rb) = &rbars {
            w.add_assign_scaled(1.0, &rb[k]);
        }
        hs.push(h);
        ws.push(w);
    }
    Ok(LiftResult {
        h_field: MidpointField::new(grid.clone(), u.time(), hs)?,
        w_field: MidpointField::new(grid.clone(), u.time(), ws)?,
        rhs_norm_per_slice: norms,
    })
}

/// Discrete `L2(0,T; V^-1)` norm: `(sum_j w_j ||grad Delta^-1 P v_j||^2)^(1/2)`,
/// reduced in ascending slice order.
pub fn dual_norm(grid: &Grid, rhs: &[VelocitySlice], weights: &[f64]) -> Result<f64> {
    if rhs.len() != weights.len() {
        return Err(Error::Usage(format!(
            "dual_norm: {} slices but {} weights",
            rhs.len(),
            weights.len()
        )));
    }
    let per: Vec<f64> = rhs
        .par_iter()
        .map(|v| {
            let z = grid.inv_laplacian(v)?;
            let mut s = grid.forward_slice(&z);
            grid.project_spectral(&mut s);
            Ok(grid.grad_sq_spectral(&s.x) + grid.grad_sq_spectral(&s.y))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per.iter().zip(weights).fold(0.0, |acc, (p, w)| acc + w * p).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use std::f64::consts::PI;

    fn decaying_mode(g: &Grid, time: TimeGrid, lam: f64) -> SpaceTimeField {
        // (0, sin x) has |k|^2 = 1; (sin(x + y), -sin(x + y)) has |k|^2 = 2
        let kk = lam.sqrt() as usize;
        assert_eq!((kk * kk) as f64, lam);
        SpaceTimeField::from_fn(g, time, |x, _, t| (0.0, (-lam * t).exp() * (kk as f64 * x).sin())).unwrap()
    }

    #[test]
    fn heat_mode_is_a_fixed_point() {
        let g = Grid::square(16).unwrap();
        let err = |m| {
            let time = TimeGrid::new(m, 1.0).unwrap();
            let u = decaying_mode(&g, time, 1.0);
            let l = stokes_lift(&u, &FluxModel::Zero, None).unwrap();
            l.w_field.l2_norm() / u.l2_norm()
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e1 < 1e-3);
        assert!((e1 / e2 - 4.0).abs() < 0.1, "{e1:e} {e2:e}");
    }

    #[test]
    fn constant_history_has_zero_lift() {
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let v0 = g.sample_vector(|x, y| (y.sin(), x.cos()));
        let u = SpaceTimeField::constant(&g, time, &v0).unwrap();
        let l = stokes_lift(&u, &FluxModel::Zero, None).unwrap();
        for (h, w) in l.h_field.slices().iter().zip(l.w_field.slices()) {
            assert!(h.max_abs() < 1e-14);
            assert!(w.sub(&v0).max_abs() < 1e-14);
        }
    }

    #[test]
    fn taylor_green_nonlinearity_is_a_gradient() {
        let g = Grid::square(32).unwrap();
        let tg = g.sample_vector(|x, y| (x.cos() * y.sin(), -x.sin() * y.cos()));
        let fh = dealiased_flux(&g, &FluxModel::ExactQuadratic, &tg).unwrap();
        let mut div = SpectralSlice::zeros(&g);
        flux_divergence(&g, &fh, &mut div);
        let raw = g.inverse_slice(&div);
        grid_project(&g, &mut div);
        let p = g.inverse_slice(&div);
        assert!(g.norm(&raw) > 0.1);
        assert!(g.norm(&p) <= 1e-10 * g.norm(&raw));

        let time = TimeGrid::new(64, 1.0).unwrap();
        let u = SpaceTimeField::from_fn(&g, time, |x, y, t| {
            let e = (-2.0 * t).exp();
            (e * x.cos() * y.sin(), -e * x.sin() * y.cos())
        })
        .unwrap();
        let l = stokes_lift(&u, &FluxModel::ExactQuadratic, None).unwrap();
        assert!(l.w_field.l2_norm() / u.l2_norm() < 1e-3);
    }

    fn grid_project(g: &Grid, s: &mut SpectralSlice) {
        g.project_spectral(s);
    }

    #[test]
    fn linear_without_flux() {
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let a = SpaceTimeField::from_fn(&g, time, |x, y, t| (t * y.sin(), (1.0 + t * t) * (2.0 * x).cos())).unwrap();
        let b = SpaceTimeField::from_fn(&g, time, |x, y, t| ((x + y).cos() * t.exp(), -(x + y).cos() * t.exp())).unwrap();
        let sum = a.axpy(2.5, &b);
        let la = stokes_lift(&a, &FluxModel::Zero, None).unwrap();
        let lb = stokes_lift(&b, &FluxModel::Zero, None).unwrap();
        let ls = stokes_lift(&sum, &FluxModel::Zero, None).unwrap();
        for k in 0..time.m() {
            let comb = la.h_field.slice(k).axpy(2.5, lb.h_field.slice(k));
            assert!(comb.sub(ls.h_field.slice(k)).max_abs() <= 1e-12 * (1.0 + comb.max_abs()));
        }
    }

    #[test]
    fn lift_is_admissible() {
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(6, 0.5).unwrap();
        let u = SpaceTimeField::from_fn(&g, time, |x, y, t| ((1.0 + t) * y.sin() * x.cos(), 2.0 * x.sin() * y.cos()))
            .unwrap();
        let l = stokes_lift(&u, &FluxModel::cutoff(1.0).unwrap(), None).unwrap();
        for h in l.h_field.slices() {
            g.check_admissible(h).unwrap();
        }
        let ub = u.midpoints();
        for k in 0..time.m() {
            let w = ub[k].sub(l.h_field.slice(k));
            assert_eq!(&w, l.w_field.slice(k));
        }
    }

    #[test]
    fn dual_norm_examples() {
        let g = Grid::square(16).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let w = time.trapezoid_weights();
        let zero = vec![VelocitySlice::zeros(&g); 5];
        assert_eq!(dual_norm(&g, &zero, &w).unwrap(), 0.0);
        let a = 0.7;
        let one = vec![g.sample_vector(|x, _| (0.0, a * x.sin())); 5];
        let want = a * 2.0f64.sqrt() * PI;
        assert!((dual_norm(&g, &one, &w).unwrap() - want).abs() < 1e-12);
        let k3 = vec![g.sample_vector(|_, y| (a * (3.0 * y).sin(), 0.0)); 5];
        assert!((dual_norm(&g, &k3, &w).unwrap() - want / 3.0).abs() < 1e-12);
        let scaled: Vec<_> = one.iter().map(|s| s.scaled(-3.0)).collect();
        assert!((dual_norm(&g, &scaled, &w).unwrap() - 3.0 * want).abs() < 1e-11);
    }

    #[test]
    fn reports_overflow_slice() {
        let g = Grid::square(8).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let mut slices = vec![g.sample_vector(|_, y| (y.sin(), 0.0)); 5];
        slices[3] = slices[3].scaled(1e200);
        let u = SpaceTimeField::new_unchecked(g.clone(), time, slices).unwrap();
        match stokes_lift(&u, &FluxModel::ExactQuadratic, None) {
            Err(Error::Overflow { slice, .. }) => assert!(slice == 2 || slice == 3),
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
