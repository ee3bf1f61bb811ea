//! Projected limited-memory quasi-Newton minimization of the space-time
//! functional with a pinned initial slice.
//!
//! The quantity driven to zero is the residual form of the gap
//! ([`Evaluation::objective`]), which is nonnegative and free of the flux
//! aliasing term; the trace records `1/2 ||v0||^2` plus it.
//!
//! The initial inverse Hessian of the two-loop recursion is the exact
//! inverse of the flux-free Hessian. Per Fourier mode with `lambda = |k|^2`
//! the flux-free residual is `B a` with `B` lower bidiagonal in time
//! (`alpha = nu lambda / 2 + 1/dt` on the diagonal, `beta = nu lambda / 2 -
//! 1/dt` below it), and the `L2` Hessian is `dt / (nu lambda) B^T B`, so
//! applying its inverse costs two bidiagonal sweeps per mode.

use std::collections::VecDeque;

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::{energy_equality_defects, evaluate, evaluate_with_gradient, slice_pairing, Evaluation, FunctionalSpec};
use crate::grid::{Grid, SpaceTimeField, TimeGrid, VelocitySlice};
use crate::verify::{weak_form_residual, TestBattery, TheoremCheck};

#[derive(Clone, Debug, Serialize)]
pub struct MinimizeConfig {
    pub max_iters: usize,
    /// Stop when `||grad|| <= tol_grad * ||u||`.
    pub tol_grad: f64,
    /// Stop when `||W|| / ||u|| <= tol_w`.
    pub tol_w: f64,
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    /// Use the flux-free inverse Hessian as the initial metric.
    pub precondition: bool,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol_grad: 1e-12,
            tol_w: 1e-6,
            memory: 10,
            sufficient_decrease: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
            precondition: true,
        }
    }
}

impl MinimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_grad > 0.0 && self.tol_w > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.memory == 0 {
            return Err(Error::Config("memory must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config(format!("shrink factor must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::Config("sufficient decrease constant must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedBy {
    Gradient,
    WResidual,
    MaxIters,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TraceEntry {
    pub value: f64,
    pub grad_norm: f64,
    /// `||W|| / ||u||`.
    pub w_norm: f64,
    /// Largest relative per-slice energy-equality defect.
    pub energy_defect: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeReport {
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub converged_by: ConvergedBy,
    pub final_field: SpaceTimeField,
}

impl MinimizeReport {
    pub fn last(&self) -> &TraceEntry {
        self.trace.last().expect("trace is never empty")
    }
}

/// Inverse of the flux-free Hessian, applied mode by mode.
pub struct Preconditioner {
    grid: Grid,
    time: TimeGrid,
    nu: f64,
}

impl Preconditioner {
    pub fn new(grid: &Grid, time: TimeGrid, nu: f64) -> Self {
        Self { grid: grid.clone(), time, nu }
    }

    pub fn apply(&self, g: &SpaceTimeField) -> SpaceTimeField {
        let grid = &self.grid;
        let m = self.time.m();
        let dt = self.time.dt();
        let hats: Vec<_> = g.slices()[1..].iter().map(|s| grid.forward_slice(s)).collect();
        let mut out_x = vec![vec![Complex64::new(0.0, 0.0); grid.len()]; m];
        let mut out_y = out_x.clone();
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        let mut x = vec![Complex64::new(0.0, 0.0); m];
        for idx in 1..grid.len() {
            let lam = grid.k_sq(idx);
            let alpha = 0.5 * self.nu * lam + 1.0 / dt;
            let beta = 0.5 * self.nu * lam - 1.0 / dt;
            let scale = self.nu * lam / dt;
            for comp in 0..2 {
                let gj = |j: usize| if comp == 0 { hats[j - 1].x[idx] } else { hats[j - 1].y[idx] };
                // B^T y = g, unknowns y_0..y_{m-1}
                y[m - 1] = gj(m) / alpha;
                for j in (1..m).rev() {
                    y[j - 1] = (gj(j) - y[j] * beta) / alpha;
                }
                // B x = y, unknowns x_1..x_m stored at 0..m-1
                x[0] = y[0] / alpha;
                for k in 1..m {
                    x[k] = (y[k] - x[k - 1] * beta) / alpha;
                }
                let out = if comp == 0 { &mut out_x } else { &mut out_y };
                for k in 0..m {
                    out[k][idx] = x[k] * scale;
                }
            }
        }
        let mut slices = Vec::with_capacity(m + 1);
        slices.push(VelocitySlice::zeros(grid));
        for k in 0..m {
            let mut s = crate::grid::SpectralSlice { x: std::mem::take(&mut out_x[k]), y: std::mem::take(&mut out_y[k]) };
            grid.project_spectral(&mut s);
            slices.push(grid.inverse_slice(&s));
        }
        SpaceTimeField::new_unchecked(grid.clone(), self.time, slices).expect("shapes match")
    }
}

fn scaled(f: &SpaceTimeField, c: f64) -> SpaceTimeField {
    SpaceTimeField::new_unchecked(f.grid().clone(), f.time(), f.slices().iter().map(|s| s.scaled(c)).collect())
        .expect("shapes match")
}

/// `x + step * p`, re-projected; slice 0 is copied from `x` untouched.
fn advance(x: &SpaceTimeField, step: f64, p: &SpaceTimeField) -> SpaceTimeField {
    let grid = x.grid();
    let mut slices = Vec::with_capacity(x.slices().len());
    slices.push(x.slice(0).clone());
    for (a, b) in x.slices()[1..].iter().zip(&p.slices()[1..]) {
        slices.push(grid.project(&a.axpy(step, b)));
    }
    SpaceTimeField::new_unchecked(grid.clone(), x.time(), slices).expect("shapes match")
}

fn trace_entry(u: &SpaceTimeField, spec: &FunctionalSpec, e: &Evaluation) -> TraceEntry {
    let grad = e.objective_grad.as_ref().expect("gradient evaluated");
    let defects = energy_equality_defects(u, spec);
    TraceEntry {
        value: e.half_v0_sq + e.objective,
        grad_norm: slice_pairing(grad, grad).sqrt(),
        w_norm: e.relative_w(),
        energy_defect: defects.iter().cloned().fold(0.0, f64::max),
    }
}

fn slice_norm(u: &SpaceTimeField) -> f64 {
    slice_pairing(u, u).sqrt()
}

/// Minimizes the functional from an admissible pinned start.
pub fn minimize(spec: &FunctionalSpec, init: SpaceTimeField, cfg: &MinimizeConfig) -> Result<MinimizeReport> {
    cfg.validate()?;
    let grid = init.grid().clone();
    for (j, s) in init.slices().iter().enumerate() {
        grid.check_admissible(s).map_err(|e| Error::Precondition(format!("initial slice {j}: {e}")))?;
    }
    let precond = Preconditioner::new(&grid, init.time(), spec.nu);
    let h0 = |g: &SpaceTimeField| if cfg.precondition { precond.apply(g) } else { g.clone() };

    let mut x = init;
    let mut e = evaluate_with_gradient(&x, spec)?;
    let mut trace = vec![trace_entry(&x, spec, &e)];
    let mut memory: VecDeque<(SpaceTimeField, SpaceTimeField, f64)> = VecDeque::new();
    let mut iterations = 0;

    loop {
        let g = e.objective_grad.clone().expect("gradient evaluated");
        let gnorm = slice_norm(&g);
        if e.relative_w() <= cfg.tol_w {
            return Ok(MinimizeReport { iterations, trace, converged_by: ConvergedBy::WResidual, final_field: x });
        }
        if gnorm <= cfg.tol_grad * slice_norm(&x).max(f64::MIN_POSITIVE) {
            return Ok(MinimizeReport { iterations, trace, converged_by: ConvergedBy::Gradient, final_field: x });
        }
        if iterations >= cfg.max_iters {
            return Ok(MinimizeReport { iterations, trace, converged_by: ConvergedBy::MaxIters, final_field: x });
        }

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if memory.is_empty() {
                    break;
                }
                memory.clear();
            }
            // two-loop recursion
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(memory.len());
            for (s, y, rho) in memory.iter().rev() {
                let a = rho * slice_pairing(s, &q);
                q = q.axpy(-a, y);
                alphas.push(a);
            }
            let mut r = h0(&q);
            for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
                let b = rho * slice_pairing(y, &r);
                r = r.axpy(a - b, s);
            }
            let mut p = scaled(&r, -1.0);
            let mut slope = slice_pairing(&g, &p);
            if !(slope < 0.0) {
                p = scaled(&h0(&g), -1.0);
                slope = slice_pairing(&g, &p);
                if !(slope < 0.0) {
                    p = scaled(&g, -1.0);
                    slope = -gnorm * gnorm;
                }
            }
            let mut step = 1.0;
            for _ in 0..cfg.max_backtracks {
                let trial = advance(&x, step, &p);
                match evaluate_with_gradient(&trial, spec) {
                    Ok(et) if et.objective.is_finite() && et.objective <= e.objective + cfg.sufficient_decrease * step * slope => {
                        accepted = Some((trial, et));
                        break;
                    }
                    Ok(_) | Err(Error::Overflow { .. }) => step *= cfg.shrink,
                    Err(other) => return Err(other),
                }
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((x_new, e_new)) = accepted else {
            return Err(Error::Divergence {
                iterations,
                reason: format!(
                    "line search failed (objective {:e}, |W|/|u| {:e}); trace: {:?}",
                    e.objective,
                    e.relative_w(),
                    trace.iter().map(|t| t.value).collect::<Vec<_>>()
                ),
            });
        };
        let s = x_new.axpy(-1.0, &x);
        let y = e_new.objective_grad.as_ref().expect("gradient evaluated").axpy(-1.0, &g);
        let sy = slice_pairing(&s, &y);
        if sy > 1e-14 * slice_norm(&s) * slice_norm(&y) {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        e = e_new;
        iterations += 1;
        trace.push(trace_entry(&x, spec, &e));
    }
}

/// Tolerances for [`certify_solution`]: `(W, gap, energy, weak form)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CertifyTolerances {
    pub w_residual: f64,
    pub gap: f64,
    pub energy_equality: f64,
    pub weak_form: f64,
}

impl Default for CertifyTolerances {
    fn default() -> Self {
        Self { w_residual: 1e-6, gap: 1e-6, energy_equality: 1e-3, weak_form: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct Certificate {
    pub checks: Vec<TheoremCheck>,
    pub pass: bool,
}

impl Certificate {
    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }
}

/// Recomputes the solution certificate of a minimizer from scratch: the
/// lift residual, the functional gap (residual form, which is what the
/// optimizer minimizes), the flux aliasing term by which the defining form
/// differs from it, the worst per-slice energy-equality defect and the
/// worst weak-form residual over the test battery. Gap and aliasing are
/// relative to `1/2 ||v0||^2` (absolute when `v0 = 0`); the aliasing term
/// is held to the energy-equality tolerance, since it is the terminal
/// energy defect of an exact discrete solution.
pub fn certify_solution(report: &MinimizeReport, spec: &FunctionalSpec, tol: &CertifyTolerances) -> Result<Certificate> {
    let mut cert = certify_field(&report.final_field, spec, tol)?;
    for c in &mut cert.checks {
        c.context.insert("iterations".into(), report.iterations.to_string());
        c.context.insert("converged_by".into(), format!("{:?}", report.converged_by));
    }
    Ok(cert)
}

/// [`certify_solution`] for a field that did not come from [`minimize`].
pub fn certify_field(u: &SpaceTimeField, spec: &FunctionalSpec, tol: &CertifyTolerances) -> Result<Certificate> {
    let e = evaluate(u, spec)?;
    let v0_scale = e.half_v0_sq;
    let rel = |x: f64| if v0_scale > 1e-28 { x.abs() / v0_scale } else { x.abs() };
    let energy = energy_equality_defects(u, spec).into_iter().fold(0.0, f64::max);
    let weak = weak_form_residual(u, spec, &TestBattery::standard(u.grid()))?;
    let ctx = |c: TheoremCheck| c.with("flux", spec.effective_model().name()).with("nu", spec.nu);
    let checks = vec![
        ctx(TheoremCheck::new("w_residual", e.relative_w(), tol.w_residual)),
        ctx(TheoremCheck::new("functional_gap", rel(e.objective), tol.gap)),
        ctx(TheoremCheck::new("flux_aliasing", rel(e.energy_defect), tol.energy_equality)),
        ctx(TheoremCheck::new("energy_equality", energy, tol.energy_equality)),
        ctx(weak.check(tol.weak_form)),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(Certificate { checks, pass })
}
