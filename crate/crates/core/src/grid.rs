//! Periodic 2-D torus grid with pseudo-spectral calculus.
//!
//! Fields are stored as row-major samples `data[j * nx + i]` at
//! `x_i = i * lx / nx`, `y_j = j * ly / ny`. Spectral coefficients use the
//! same layout in standard FFT ordering and are normalized so that a field
//! equals `sum_k c_k exp(i k.x)`.
//!
//! The admissible velocity space is: real, mean-zero, divergence-free, with
//! the Nyquist rows/columns removed. Dropping Nyquist keeps the spectral
//! derivative exactly antisymmetric with respect to the grid inner product,
//! which the discrete energy identities rely on.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Relative divergence tolerance for admissible slices.
pub const DIV_TOL: f64 = 1e-12;

struct Plans {
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid on `[0, lx) x [0, ly)`.
#[derive(Clone)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    kx: Vec<f64>,
    ky: Vec<f64>,
    mask: Vec<bool>,
    plans: Arc<Plans>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .field("lx", &self.lx)
            .field("ly", &self.ly)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.lx == other.lx && self.ly == other.ly
    }
}

fn wavenumbers(n: usize, l: f64) -> Vec<f64> {
    let base = 2.0 * PI / l;
    (0..n)
        .map(|i| {
            let idx = if i < n / 2 { i as i64 } else { i as i64 - n as i64 };
            idx as f64 * base
        })
        .collect()
}

fn signed_index(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 8 || ny < 8 || nx % 2 != 0 || ny % 2 != 0 {
            return Err(Error::Precondition(format!(
                "grid sizes must be even and >= 8, got {nx}x{ny}"
            )));
        }
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(Error::Precondition(format!("invalid periods lx={lx}, ly={ly}")));
        }
        let kx = wavenumbers(nx, lx);
        let ky = wavenumbers(ny, ly);
        let mut mask = vec![true; nx * ny];
        for j in 0..ny {
            let jy = signed_index(j, ny).unsigned_abs() as f64;
            for i in 0..nx {
                let ix = signed_index(i, nx).unsigned_abs() as f64;
                // |k_axis| > n/3 * (2 pi / l) in index units is |idx| > n/3
                if ix > nx as f64 / 3.0 || jy > ny as f64 / 3.0 {
                    mask[j * nx + i] = false;
                }
            }
        }
        let mut planner = FftPlanner::new();
        let plans = Plans {
            fwd_x: planner.plan_fft_forward(nx),
            inv_x: planner.plan_fft_inverse(nx),
            fwd_y: planner.plan_fft_forward(ny),
            inv_y: planner.plan_fft_inverse(ny),
        };
        Ok(Self { nx, ny, lx, ly, kx, ky, mask, plans: Arc::new(plans) })
    }

    /// `n x n` grid on the `2 pi` torus.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n, 2.0 * PI, 2.0 * PI)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn kx(&self) -> &[f64] {
        &self.kx
    }
    pub fn ky(&self) -> &[f64] {
        &self.ky
    }
    /// 2/3-rule mask, `true` for retained modes.
    pub fn dealias_mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }
    pub fn cell_area(&self) -> f64 {
        self.area() / (self.nx * self.ny) as f64
    }

    /// Physical coordinates of sample `(i, j)`.
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.lx / self.nx as f64, j as f64 * self.ly / self.ny as f64)
    }

    /// Samples a scalar function on the grid.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (x, y) = self.point(i, j);
                out.push(f(x, y));
            }
        }
        out
    }

    /// Samples a vector function on the grid.
    pub fn sample_vector(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> VelocitySlice {
        let mut s = VelocitySlice::zeros(self);
        for j in 0..self.ny {
            for i in 0..self.nx {
                let (x, y) = self.point(i, j);
                let (a, b) = f(x, y);
                s.x[j * self.nx + i] = a;
                s.y[j * self.nx + i] = b;
            }
        }
        s
    }

    fn is_nyquist(&self, idx: usize) -> bool {
        let (i, j) = (idx % self.nx, idx / self.nx);
        i == self.nx / 2 || j == self.ny / 2
    }

    /// Wavevector used for derivatives; zero on Nyquist rows/columns.
    #[inline]
    pub fn deriv_k(&self, idx: usize) -> (f64, f64) {
        let (i, j) = (idx % self.nx, idx / self.nx);
        let kx = if i == self.nx / 2 { 0.0 } else { self.kx[i] };
        let ky = if j == self.ny / 2 { 0.0 } else { self.ky[j] };
        (kx, ky)
    }

    /// `|k|^2` with the true (unzeroed) wavenumbers.
    #[inline]
    pub fn k_sq(&self, idx: usize) -> f64 {
        let (i, j) = (idx % self.nx, idx / self.nx);
        self.kx[i] * self.kx[i] + self.ky[j] * self.ky[j]
    }

    // ---- transforms ----

    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.len());
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, true);
        let scale = 1.0 / self.len() as f64;
        for c in buf.iter_mut() {
            *c *= scale;
        }
        buf
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.fft2(&mut buf, false);
        buf.into_iter().map(|c| c.re).collect()
    }

    fn fft2(&self, buf: &mut [Complex64], forward: bool) {
        let (nx, ny) = (self.nx, self.ny);
        let (px, py) = if forward {
            (&self.plans.fwd_x, &self.plans.fwd_y)
        } else {
            (&self.plans.inv_x, &self.plans.inv_y)
        };
        // rows are contiguous
        px.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = buf[j * nx + i];
            }
            py.process(&mut col);
            for j in 0..ny {
                buf[j * nx + i] = col[j];
            }
        }
    }

    pub fn forward_slice(&self, s: &VelocitySlice) -> SpectralSlice {
        SpectralSlice { x: self.forward(&s.x), y: self.forward(&s.y) }
    }

    pub fn inverse_slice(&self, s: &SpectralSlice) -> VelocitySlice {
        VelocitySlice { x: self.inverse(&s.x), y: self.inverse(&s.y) }
    }

    // ---- spectral operators (in place) ----

    /// Leray projection in spectral space: removes the gradient part, the
    /// mean and the Nyquist modes.
    pub fn project_spectral(&self, s: &mut SpectralSlice) {
        for idx in 0..self.len() {
            if idx == 0 || self.is_nyquist(idx) {
                s.x[idx] = Complex64::new(0.0, 0.0);
                s.y[idx] = Complex64::new(0.0, 0.0);
                continue;
            }
            let (kx, ky) = (self.kx[idx % self.nx], self.ky[idx / self.nx]);
            let k2 = kx * kx + ky * ky;
            let kdot = s.x[idx] * kx + s.y[idx] * ky;
            s.x[idx] -= kdot * (kx / k2);
            s.y[idx] -= kdot * (ky / k2);
        }
    }

    pub fn dealias_spectral(&self, c: &mut [Complex64]) {
        for (v, &keep) in c.iter_mut().zip(&self.mask) {
            if !keep {
                *v = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Multiplies by `-1/|k|^2`; the mean mode is set to zero.
    pub fn inv_laplacian_spectral(&self, c: &mut [Complex64]) {
        c[0] = Complex64::new(0.0, 0.0);
        for (idx, v) in c.iter_mut().enumerate().skip(1) {
            *v /= -self.k_sq(idx);
        }
    }

    pub fn laplacian_spectral(&self, c: &mut [Complex64]) {
        for (idx, v) in c.iter_mut().enumerate() {
            *v *= -self.k_sq(idx);
        }
    }

    /// `sum_k |k|^2 |c_k|^2` scaled to the physical integral of `|grad f|^2`.
    pub fn grad_sq_spectral(&self, c: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for (idx, v) in c.iter().enumerate() {
            let (kx, ky) = self.deriv_k(idx);
            acc += (kx * kx + ky * ky) * v.norm_sqr();
        }
        acc * self.area()
    }

    // ---- physical-space conveniences ----

    fn check_finite(&self, data: &[f64], what: &str) -> Result<()> {
        if data.len() != self.len() {
            return Err(Error::Data(format!(
                "{what}: expected {} samples, got {}",
                self.len(),
                data.len()
            )));
        }
        if let Some(p) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{what}: non-finite sample at index {p}")));
        }
        Ok(())
    }

    /// Projects an arbitrary two-component slice onto the admissible space.
    pub fn leray_project(&self, w: &VelocitySlice) -> Result<VelocitySlice> {
        self.check_finite(&w.x, "leray_project x")?;
        self.check_finite(&w.y, "leray_project y")?;
        Ok(self.project(w))
    }

    /// Unchecked projection; input is assumed finite.
    pub fn project(&self, w: &VelocitySlice) -> VelocitySlice {
        let mut s = self.forward_slice(w);
        self.project_spectral(&mut s);
        self.inverse_slice(&s)
    }

    /// Mean-zero solution of `Laplacian z = w`.
    pub fn inv_laplacian_scalar(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_finite(w, "inv_laplacian")?;
        let mut c = self.forward(w);
        let norm = self.l2_norm_scalar(w);
        let mean = c[0].re;
        if mean.abs() * self.area().sqrt() > 1e-12 * norm {
            return Err(Error::Precondition(format!(
                "inv_laplacian requires a mean-zero input (mean = {mean:e})"
            )));
        }
        self.inv_laplacian_spectral(&mut c);
        Ok(self.inverse(&c))
    }

    pub fn inv_laplacian(&self, w: &VelocitySlice) -> Result<VelocitySlice> {
        Ok(VelocitySlice { x: self.inv_laplacian_scalar(&w.x)?, y: self.inv_laplacian_scalar(&w.y)? })
    }

    pub fn laplacian_scalar(&self, w: &[f64]) -> Vec<f64> {
        let mut c = self.forward(w);
        self.laplacian_spectral(&mut c);
        self.inverse(&c)
    }

    pub fn laplacian(&self, w: &VelocitySlice) -> VelocitySlice {
        VelocitySlice { x: self.laplacian_scalar(&w.x), y: self.laplacian_scalar(&w.y) }
    }

    pub fn gradient(&self, q: &[f64]) -> VelocitySlice {
        let c = self.forward(q);
        let mut gx = vec![Complex64::new(0.0, 0.0); self.len()];
        let mut gy = gx.clone();
        for idx in 0..self.len() {
            let (kx, ky) = self.deriv_k(idx);
            gx[idx] = c[idx] * Complex64::new(0.0, kx);
            gy[idx] = c[idx] * Complex64::new(0.0, ky);
        }
        VelocitySlice { x: self.inverse(&gx), y: self.inverse(&gy) }
    }

    /// Partial derivatives `(d/dx, d/dy)` of a scalar.
    pub fn partials(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.gradient(q);
        (g.x, g.y)
    }

    pub fn divergence(&self, w: &VelocitySlice) -> Vec<f64> {
        let s = self.forward_slice(w);
        let mut d = vec![Complex64::new(0.0, 0.0); self.len()];
        for idx in 0..self.len() {
            let (kx, ky) = self.deriv_k(idx);
            d[idx] = (s.x[idx] * kx + s.y[idx] * ky) * Complex64::new(0.0, 1.0);
        }
        self.inverse(&d)
    }

    /// Scalar curl `dw_y/dx - dw_x/dy`.
    pub fn curl(&self, w: &VelocitySlice) -> Vec<f64> {
        let s = self.forward_slice(w);
        let mut d = vec![Complex64::new(0.0, 0.0); self.len()];
        for idx in 0..self.len() {
            let (kx, ky) = self.deriv_k(idx);
            d[idx] = (s.y[idx] * kx - s.x[idx] * ky) * Complex64::new(0.0, 1.0);
        }
        self.inverse(&d)
    }

    /// L2 norm of the divergence evaluated in spectral space.
    pub fn divergence_norm(&self, w: &VelocitySlice) -> f64 {
        let s = self.forward_slice(w);
        let mut acc = 0.0;
        for idx in 0..self.len() {
            let (kx, ky) = self.deriv_k(idx);
            acc += (s.x[idx] * kx + s.y[idx] * ky).norm_sqr();
        }
        (acc * self.area()).sqrt()
    }

    pub fn inner_scalar(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() * self.cell_area()
    }

    pub fn l2_norm_scalar(&self, a: &[f64]) -> f64 {
        self.inner_scalar(a, a).sqrt()
    }

    pub fn inner(&self, a: &VelocitySlice, b: &VelocitySlice) -> f64 {
        self.inner_scalar(&a.x, &b.x) + self.inner_scalar(&a.y, &b.y)
    }

    pub fn norm_sq(&self, a: &VelocitySlice) -> f64 {
        self.inner(a, a)
    }

    pub fn norm(&self, a: &VelocitySlice) -> f64 {
        self.norm_sq(a).sqrt()
    }

    /// `int |grad a|^2` over the torus.
    pub fn grad_norm_sq(&self, a: &VelocitySlice) -> f64 {
        let s = self.forward_slice(a);
        self.grad_sq_spectral(&s.x) + self.grad_sq_spectral(&s.y)
    }

    /// `int grad a : grad b`.
    pub fn grad_inner(&self, a: &VelocitySlice, b: &VelocitySlice) -> f64 {
        let sa = self.forward_slice(a);
        let sb = self.forward_slice(b);
        let mut acc = 0.0;
        for idx in 0..self.len() {
            let (kx, ky) = self.deriv_k(idx);
            let k2 = kx * kx + ky * ky;
            acc += k2 * (sa.x[idx] * sb.x[idx].conj() + sa.y[idx] * sb.y[idx].conj()).re;
        }
        acc * self.area()
    }

    /// Checks the admissible-slice invariants: finite, mean-zero,
    /// divergence-free.
    pub fn check_admissible(&self, s: &VelocitySlice) -> Result<()> {
        self.check_finite(&s.x, "slice x")?;
        self.check_finite(&s.y, "slice y")?;
        let norm = self.norm(s);
        let div = self.divergence_norm(s);
        if div > DIV_TOL * norm.max(1.0) {
            return Err(Error::Precondition(format!(
                "slice is not divergence-free (|div| = {div:e}, |slice| = {norm:e})"
            )));
        }
        let n = self.len() as f64;
        let mx = s.x.iter().sum::<f64>() / n;
        let my = s.y.iter().sum::<f64>() / n;
        if mx.abs().max(my.abs()) * self.area().sqrt() > DIV_TOL * norm.max(1.0) {
            return Err(Error::Precondition(format!("slice has nonzero mean ({mx:e}, {my:e})")));
        }
        Ok(())
    }
}

/// Two real scalar components sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocitySlice {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VelocitySlice {
    pub fn zeros(grid: &Grid) -> Self {
        Self { x: vec![0.0; grid.len()], y: vec![0.0; grid.len()] }
    }

    pub fn from_components(x: Vec<f64>, y: Vec<f64>) -> Self {
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { x: self.x.iter().map(|v| v * c).collect(), y: self.y.iter().map(|v| v * c).collect() }
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + c * b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a + c * b).collect(),
        }
    }

    pub fn add_assign_scaled(&mut self, c: f64, other: &Self) {
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            *a += c * b;
        }
        for (a, b) in self.y.iter_mut().zip(&other.y) {
            *a += c * b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.axpy(-1.0, other)
    }

    pub fn max_abs(&self) -> f64 {
        self.x.iter().chain(&self.y).fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Pointwise maximum of `|v|^2`.
    pub fn max_speed_sq(&self) -> f64 {
        self.x.iter().zip(&self.y).fold(0.0f64, |m, (a, b)| m.max(a * a + b * b))
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

/// Spectral coefficients of a two-component slice.
#[derive(Clone, Debug)]
pub struct SpectralSlice {
    pub x: Vec<Complex64>,
    pub y: Vec<Complex64>,
}

impl SpectralSlice {
    pub fn zeros(grid: &Grid) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); grid.len()];
        Self { x: z.clone(), y: z }
    }
}

/// Uniform time grid `t_j = j * T / m`, `j = 0..=m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    m: usize,
    t_final: f64,
}

impl TimeGrid {
    pub fn new(m: usize, t_final: f64) -> Result<Self> {
        if m < 4 {
            return Err(Error::Precondition(format!("need at least 4 time intervals, got {m}")));
        }
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::Precondition(format!("final time must be positive, got {t_final}")));
        }
        Ok(Self { m, t_final })
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn dt(&self) -> f64 {
        self.t_final / self.m as f64
    }
    pub fn slices(&self) -> usize {
        self.m + 1
    }
    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }
    /// Midpoint time `t_{k+1/2}`.
    pub fn t_mid(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }
    pub fn times(&self) -> Vec<f64> {
        (0..=self.m).map(|j| self.t(j)).collect()
    }
    /// Trapezoid weights over the `m + 1` slices.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let dt = self.dt();
        let mut w = vec![dt; self.m + 1];
        w[0] = 0.5 * dt;
        w[self.m] = 0.5 * dt;
        w
    }
}

/// Velocity samples on the `m + 1` slices of a time grid.
///
/// Slice 0 carries the initial datum; `SpaceTimeField::new` validates the
/// admissibility of every slice.
#[derive(Clone, Debug)]
pub struct SpaceTimeField {
    grid: Grid,
    time: TimeGrid,
    slices: Vec<VelocitySlice>,
}

impl SpaceTimeField {
    pub fn new(grid: Grid, time: TimeGrid, slices: Vec<VelocitySlice>) -> Result<Self> {
        let f = Self::new_unchecked(grid, time, slices)?;
        for (j, s) in f.slices.iter().enumerate() {
            f.grid
                .check_admissible(s)
                .map_err(|e| Error::Precondition(format!("slice {j}: {e}")))?;
        }
        Ok(f)
    }

    /// Builds a field checking only shapes. Used for raw quadrature and for
    /// intermediate, not-yet-projected data.
    pub fn new_unchecked(grid: Grid, time: TimeGrid, slices: Vec<VelocitySlice>) -> Result<Self> {
        if slices.len() != time.slices() {
            return Err(Error::Data(format!(
                "expected {} slices, got {}",
                time.slices(),
                slices.len()
            )));
        }
        if let Some(j) = slices.iter().position(|s| s.x.len() != grid.len() || s.y.len() != grid.len()) {
            return Err(Error::Data(format!("slice {j} has the wrong number of samples")));
        }
        Ok(Self { grid, time, slices })
    }

    /// Samples `f(x, y, t)` on every slice and projects onto the admissible
    /// space.
    pub fn from_fn(grid: &Grid, time: TimeGrid, f: impl Fn(f64, f64, f64) -> (f64, f64)) -> Result<Self> {
        let slices = (0..=time.m())
            .map(|j| {
                let t = time.t(j);
                grid.leray_project(&grid.sample_vector(|x, y| f(x, y, t)))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid.clone(), time, slices)
    }

    /// Constant-in-time replication of `v0`.
    pub fn constant(grid: &Grid, time: TimeGrid, v0: &VelocitySlice) -> Result<Self> {
        Self::new(grid.clone(), time, vec![v0.clone(); time.slices()])
    }

    pub fn zeros(grid: &Grid, time: TimeGrid) -> Self {
        Self { grid: grid.clone(), time, slices: vec![VelocitySlice::zeros(grid); time.slices()] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn time(&self) -> TimeGrid {
        self.time
    }
    pub fn slices(&self) -> &[VelocitySlice] {
        &self.slices
    }
    pub fn slice(&self, j: usize) -> &VelocitySlice {
        &self.slices[j]
    }
    pub fn slices_mut(&mut self) -> &mut [VelocitySlice] {
        &mut self.slices
    }
    pub fn into_slices(self) -> Vec<VelocitySlice> {
        self.slices
    }

    pub fn same_grids(&self, other: &Self) -> bool {
        self.grid == other.grid && self.time == other.time
    }

    /// Slicewise `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Self {
        Self {
            grid: self.grid.clone(),
            time: self.time,
            slices: self.slices.iter().zip(&other.slices).map(|(a, b)| a.axpy(c, b)).collect(),
        }
    }

    pub fn max_speed_sq(&self) -> f64 {
        self.slices.iter().fold(0.0f64, |m, s| m.max(s.max_speed_sq()))
    }

    /// Trapezoid-in-time `L2` norm.
    pub fn l2_norm(&self) -> f64 {
        inner_products(self, self).map(|p| p.pairing.sqrt()).unwrap_or(f64::NAN)
    }

    /// Midpoint averages `(u_k + u_{k+1}) / 2`, `k = 0..m`.
    pub fn midpoints(&self) -> Vec<VelocitySlice> {
        self.slices
            .windows(2)
            .map(|w| {
                let mut s = w[0].clone();
                for (a, b) in s.x.iter_mut().zip(&w[1].x) {
                    *a = 0.5 * (*a + b);
                }
                for (a, b) in s.y.iter_mut().zip(&w[1].y) {
                    *a = 0.5 * (*a + b);
                }
                s
            })
            .collect()
    }

    /// Staggered differences `(u_{k+1} - u_k) / dt`, `k = 0..m`.
    pub fn midpoint_derivative(&self) -> Vec<VelocitySlice> {
        let inv_dt = 1.0 / self.time.dt();
        self.slices
            .windows(2)
            .map(|w| {
                let mut s = w[1].clone();
                for (a, b) in s.x.iter_mut().zip(&w[0].x) {
                    *a = (*a - b) * inv_dt;
                }
                for (a, b) in s.y.iter_mut().zip(&w[0].y) {
                    *a = (*a - b) * inv_dt;
                }
                s
            })
            .collect()
    }
}

/// Per-slice time derivative: second-order central differences inside,
/// second-order one-sided stencils at both ends.
pub fn time_derivative(u: &SpaceTimeField) -> Vec<VelocitySlice> {
    let m = u.time.m();
    let dt = u.time.dt();
    let s = &u.slices;
    let comb = |c: &[(usize, f64)]| -> VelocitySlice {
        let mut out = VelocitySlice::zeros(&u.grid);
        for &(j, w) in c {
            out.add_assign_scaled(w / dt, &s[j]);
        }
        out
    };
    (0..=m)
        .into_par_iter()
        .map(|j| {
            if j == 0 {
                comb(&[(0, -1.5), (1, 2.0), (2, -0.5)])
            } else if j == m {
                comb(&[(m - 2, 0.5), (m - 1, -2.0), (m, 1.5)])
            } else {
                comb(&[(j - 1, -0.5), (j + 1, 0.5)])
            }
        })
        .collect()
}

/// Space-time quadratures of a pair of fields.
#[derive(Clone, Debug)]
pub struct InnerProducts {
    /// Trapezoid-in-time `L2(space-time)` pairing.
    pub pairing: f64,
    /// Per-slice spatial pairings `<a_j, b_j>`.
    pub per_slice: Vec<f64>,
    /// Per-slice `||a_j||`.
    pub norms_a: Vec<f64>,
    /// Per-slice `||b_j||`.
    pub norms_b: Vec<f64>,
}

/// Spatial integrals are exact for the trigonometric interpolant; the time
/// integral is the trapezoid rule, reduced in ascending slice order.
pub fn inner_products(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<InnerProducts> {
    if !a.same_grids(b) {
        return Err(Error::Usage("inner_products: grid or time grid mismatch".into()));
    }
    let g = &a.grid;
    let per: Vec<(f64, f64, f64)> = a
        .slices
        .par_iter()
        .zip(&b.slices)
        .map(|(sa, sb)| (g.inner(sa, sb), g.norm(sa), g.norm(sb)))
        .collect();
    let w = a.time.trapezoid_weights();
    let pairing = per.iter().zip(&w).fold(0.0, |acc, (p, wj)| acc + wj * p.0);
    Ok(InnerProducts {
        pairing,
        per_slice: per.iter().map(|p| p.0).collect(),
        norms_a: per.iter().map(|p| p.1).collect(),
        norms_b: per.iter().map(|p| p.2).collect(),
    })
}

/// Quantities defined on the `m` staggered midpoints `t_{k+1/2}`.
#[derive(Clone, Debug)]
pub struct MidpointField {
    grid: Grid,
    time: TimeGrid,
    slices: Vec<VelocitySlice>,
}

impl MidpointField {
    pub fn new(grid: Grid, time: TimeGrid, slices: Vec<VelocitySlice>) -> Result<Self> {
        if slices.len() != time.m() {
            return Err(Error::Data(format!("expected {} midpoint slices, got {}", time.m(), slices.len())));
        }
        Ok(Self { grid, time, slices })
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn time(&self) -> TimeGrid {
        self.time
    }
    pub fn slices(&self) -> &[VelocitySlice] {
        &self.slices
    }
    pub fn slice(&self, k: usize) -> &VelocitySlice {
        &self.slices[k]
    }

    /// Midpoint-rule `L2(space-time)` norm.
    pub fn l2_norm(&self) -> f64 {
        let dt = self.time.dt();
        let per: Vec<f64> = self.slices.par_iter().map(|s| self.grid.norm_sq(s)).collect();
        (per.iter().sum::<f64>() * dt).sqrt()
    }

    /// Midpoint-rule `L2(0,T; H1)` seminorm.
    pub fn grad_l2_norm(&self) -> f64 {
        let dt = self.time.dt();
        let per: Vec<f64> = self.slices.par_iter().map(|s| self.grid.grad_norm_sq(s)).collect();
        (per.iter().sum::<f64>() * dt).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scalar(g: &Grid, rng: &mut ChaCha8Rng, modes: i32) -> Vec<f64> {
        let mut f = vec![0.0; g.len()];
        for a in -modes..=modes {
            for b in -modes..=modes {
                let (c, s) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let v = g.sample(|x, y| {
                    let ph = a as f64 * x + b as f64 * y;
                    c * ph.cos() + s * ph.sin()
                });
                for (o, vi) in f.iter_mut().zip(v) {
                    *o += vi;
                }
            }
        }
        f
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(7, 8, 1.0, 1.0).is_err());
        assert!(Grid::new(6, 6, 1.0, 1.0).is_err());
        assert!(Grid::new(8, 10, 1.0, 1.0).is_ok());
        assert!(TimeGrid::new(3, 1.0).is_err());
    }

    #[test]
    fn wavenumbers_and_mask() {
        let g = Grid::new(12, 8, 2.0 * PI, PI).unwrap();
        assert_eq!(g.kx()[1], 1.0);
        assert_eq!(g.kx()[11], -1.0);
        assert_eq!(g.ky()[1], 2.0);
        // ny = 8: keep |j| <= 2
        assert!(g.dealias_mask()[2 * 12]);
        assert!(!g.dealias_mask()[3 * 12]);
        // nx = 12: keep |i| <= 4
        assert!(g.dealias_mask()[4]);
        assert!(!g.dealias_mask()[5]);
        assert!(g.dealias_mask()[8]);
    }

    #[test]
    fn projection_kills_gradients() {
        let g = Grid::square(16).unwrap();
        let q = g.sample(|x, y| x.sin() * y.cos());
        let w = g.gradient(&q);
        let p = g.leray_project(&w).unwrap();
        assert!(g.norm(&p) <= 1e-12 * g.norm(&w));
    }

    #[test]
    fn projection_keeps_solenoidal_fields() {
        let g = Grid::square(16).unwrap();
        let w = g.sample_vector(|_, y| (y.sin(), 0.0));
        let p = g.leray_project(&w).unwrap();
        assert!(g.norm(&p.sub(&w)) <= 1e-12 * g.norm(&w));
    }

    #[test]
    fn projection_of_sin_x_leaves_gradient_remainder() {
        let g = Grid::square(16).unwrap();
        let w = g.sample_vector(|x, _| (x.sin(), 0.0));
        let p = g.leray_project(&w).unwrap();
        assert!(g.divergence_norm(&p) <= 1e-12);
        let rem = w.sub(&p);
        let curl = g.curl(&rem);
        assert!(g.l2_norm_scalar(&curl) <= 1e-12);
    }

    #[test]
    fn projection_rejects_non_finite() {
        let g = Grid::square(8).unwrap();
        let mut w = VelocitySlice::zeros(&g);
        w.x[3] = f64::NAN;
        assert!(matches!(g.leray_project(&w), Err(Error::Data(_))));
    }

    #[test]
    fn inv_laplacian_eigenfunctions() {
        let g = Grid::square(16).unwrap();
        let z = g.inv_laplacian_scalar(&g.sample(|x, _| x.sin())).unwrap();
        let want = g.sample(|x, _| -x.sin());
        assert!(z.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-13));
        let w = g.sample(|x, y| (2.0 * x).sin() * (3.0 * y).cos());
        let z = g.inv_laplacian_scalar(&w).unwrap();
        assert!(z.iter().zip(&w).all(|(a, b)| (a + b / 13.0).abs() < 1e-13));
    }

    #[test]
    fn inv_laplacian_rejects_mean() {
        let g = Grid::square(8).unwrap();
        let w = g.sample(|x, _| 1.0 + x.sin());
        assert!(matches!(g.inv_laplacian_scalar(&w), Err(Error::Precondition(_))));
    }

    #[test]
    fn inv_laplacian_inverse_consistency() {
        let g = Grid::new(16, 12, 3.0, 5.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut w = random_scalar(&g, &mut rng, 3);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        w.iter_mut().for_each(|v| *v -= mean);
        let z = g.inv_laplacian_scalar(&w).unwrap();
        let back = g.laplacian_scalar(&z);
        let err: f64 = back.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let nrm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-12 * nrm);
    }

    fn field_of(g: &Grid, time: TimeGrid, f: impl Fn(f64) -> f64) -> SpaceTimeField {
        let w = g.sample_vector(|_, y| (y.sin(), 0.0));
        let slices = (0..=time.m()).map(|j| w.scaled(f(time.t(j)))).collect();
        SpaceTimeField::new(g.clone(), time, slices).unwrap()
    }

    #[test]
    fn time_derivative_constant_and_linear() {
        let g = Grid::square(8).unwrap();
        let time = TimeGrid::new(8, 1.0).unwrap();
        let c = field_of(&g, time, |_| 2.0);
        assert!(time_derivative(&c).iter().all(|s| s.max_abs() < 1e-12));
        let lin = field_of(&g, time, |t| t);
        let w = g.sample_vector(|_, y| (y.sin(), 0.0));
        for d in time_derivative(&lin) {
            assert!(d.sub(&w).max_abs() < 1e-12);
        }
        // quadratics are exact at interior slices
        let quad = field_of(&g, time, |t| t * t);
        let d = time_derivative(&quad);
        for j in 1..time.m() {
            assert!(d[j].sub(&w.scaled(2.0 * time.t(j))).max_abs() < 1e-12);
        }
    }

    #[test]
    fn time_derivative_is_second_order() {
        let g = Grid::square(8).unwrap();
        let defect = |m: usize| {
            let time = TimeGrid::new(m, 1.0).unwrap();
            let f = field_of(&g, time, |t| (-2.0 * t).exp());
            let w = g.sample_vector(|_, y| (y.sin(), 0.0));
            time_derivative(&f)
                .iter()
                .enumerate()
                .map(|(j, d)| d.sub(&w.scaled(-2.0 * (-2.0 * time.t(j)).exp())).max_abs())
                .fold(0.0f64, f64::max)
        };
        let (e1, e2) = (defect(64), defect(128));
        let dt: f64 = 1.0 / 64.0;
        let c = e1 / (dt * dt);
        assert!(e2 <= c * (dt / 2.0).powi(2) * 1.05, "e1={e1:e} e2={e2:e}");
        assert!((e1 / e2 - 4.0).abs() < 0.2);
    }

    #[test]
    fn quadratures() {
        let g = Grid::square(8).unwrap();
        let time = TimeGrid::new(4, 1.0).unwrap();
        let ones = VelocitySlice { x: vec![1.0; g.len()], y: vec![0.0; g.len()] };
        let a = SpaceTimeField::new_unchecked(g.clone(), time, vec![ones; 5]).unwrap();
        let p = inner_products(&a, &a).unwrap();
        assert!((p.pairing - 4.0 * PI * PI).abs() < 1e-12);

        let s1 = SpaceTimeField::constant(&g, time, &g.sample_vector(|_, y| (y.sin(), 0.0))).unwrap();
        let s2 = SpaceTimeField::constant(&g, time, &g.sample_vector(|_, y| ((2.0 * y).sin(), 0.0))).unwrap();
        assert!(inner_products(&s1, &s2).unwrap().pairing.abs() < 1e-12);
        let sx = SpaceTimeField::constant(&g, time, &g.sample_vector(|x, _| (0.0, x.sin()))).unwrap();
        let p = inner_products(&sx, &sx).unwrap();
        assert!((p.pairing - 2.0 * PI * PI).abs() < 1e-12);
        assert!(p.norms_a.iter().all(|n| (n * n - 2.0 * PI * PI).abs() < 1e-12));

        let other = SpaceTimeField::zeros(&g, TimeGrid::new(5, 1.0).unwrap());
        assert!(matches!(inner_products(&s1, &other), Err(Error::Usage(_))));
    }

    #[test]
    fn grad_inner_matches_grad_norm() {
        let g = Grid::square(16).unwrap();
        let a = g.sample_vector(|x, y| ((2.0 * y).sin(), (x + y).cos()));
        assert!((g.grad_inner(&a, &a) - g.grad_norm_sq(&a)).abs() < 1e-12 * g.grad_norm_sq(&a));
        // grad of sin(2y) has |.|^2 = 4 * 2 pi^2, cos(x+y) -> 2 * 2 pi^2
        assert!((g.grad_norm_sq(&a) - 12.0 * PI * PI).abs() < 1e-10);
    }

    mod props {
        use super::{ChaCha8Rng, Grid, VelocitySlice, PI};
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn projection_idempotent_and_annihilating(seed in any::<u64>()) {
                let g = Grid::new(16, 8, 2.0 * PI, 3.0).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let w = VelocitySlice {
                    x: (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    y: (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                };
                let p = g.leray_project(&w).unwrap();
                let pp = g.leray_project(&p).unwrap();
                prop_assert!(g.norm(&pp.sub(&p)) <= 1e-12 * g.norm(&p));
                prop_assert!(g.divergence_norm(&p) <= 1e-12 * g.norm(&p));
                let q: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let grad = g.gradient(&q);
                prop_assert!(g.norm(&g.project(&grad)) <= 1e-12 * g.norm(&grad));
            }
        }
    }
}
