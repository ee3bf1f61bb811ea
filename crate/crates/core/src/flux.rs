//! Nonlinear fluxes `F(v)`: the exact advective flux `v (x) v`, the cutoff
//! family `F_n(v) = f_n(|v|^2) v (x) v + g_n(|v|^2) I`, their derivatives and
//! potentials `G` with `dG_j/dv_i = F_ij`.
//!
//! Matrices are indexed `F[i][j]`; the divergence acts on the second index,
//! `(div F)_i = sum_j d_j F_ij`. Derivatives are stored as `dF[m][i][j] =
//! dF_ij/dv_m`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];
/// `dF[m][i][j] = dF_ij / dv_m`.
pub type DMat2 = [[[f64; 2]; 2]; 2];

/// Global growth constant: `|F_n(v)|_Frobenius <= A |v|^2` for every `n`.
/// `|v (x) v + (|v|^2/2) I|_F = sqrt(5/2) |v|^2` is the worst case.
pub const FLUX_BOUND_A: f64 = 1.5811388300841898;

/// A smooth transition `h` with `h = 1` on `(-inf, 1]`, `h = 0` on `[2, inf)`.
pub trait TransitionProfile: Send + Sync {
    fn h(&self, s: f64) -> f64;
    fn dh(&self, s: f64) -> f64;
    fn name(&self) -> &str;
}

/// `h(s) = q(2 - s) / (q(2 - s) + q(s - 1))` with `q(t) = exp(-1/t)` for
/// `t > 0` and `0` otherwise.
#[derive(Clone, Copy, Debug, Default)]
pub struct StandardProfile;

fn q(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn dq(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp() / (t * t)
    } else {
        0.0
    }
}

impl TransitionProfile for StandardProfile {
    fn h(&self, s: f64) -> f64 {
        if s <= 1.0 {
            return 1.0;
        }
        if s >= 2.0 {
            return 0.0;
        }
        let (a, b) = (q(2.0 - s), q(s - 1.0));
        a / (a + b)
    }

    fn dh(&self, s: f64) -> f64 {
        if s <= 1.0 || s >= 2.0 {
            return 0.0;
        }
        let (a, b) = (q(2.0 - s), q(s - 1.0));
        let (da, db) = (-dq(2.0 - s), dq(s - 1.0));
        (da * b - a * db) / ((a + b) * (a + b))
    }

    fn name(&self) -> &str {
        "standard"
    }
}

const TABLE_SIZE: usize = 512;

// 8-point Gauss-Legendre on [-1, 1]
const GL_X: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.525532409916329,
    -0.1834346424956498,
    0.1834346424956498,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975363,
];
const GL_W: [f64; 8] = [
    0.1012285362903763,
    0.2223810344533745,
    0.3137066458778873,
    0.362683783378362,
    0.362683783378362,
    0.3137066458778873,
    0.2223810344533745,
    0.1012285362903763,
];

fn gauss8(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    GL_X.iter().zip(&GL_W).map(|(x, w)| w * f(c + r * x)).sum::<f64>() * r
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Cutoff functions `f_n(s) = h(s / n)` and `g_n(r) = 1/2 int_0^r f_n`.
#[derive(Clone)]
pub struct CutoffProfile {
    n: f64,
    profile: Arc<dyn TransitionProfile>,
    /// `cumulative[i] = int_1^{1 + i/TABLE_SIZE} h`
    cumulative: Arc<Vec<f64>>,
}

impl fmt::Debug for CutoffProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CutoffProfile {{ n: {}, profile: {} }}", self.n, self.profile.name())
    }
}

impl CutoffProfile {
    pub fn new(n: f64) -> Result<Self> {
        Self::with_profile(n, Arc::new(StandardProfile))
    }

    pub fn with_profile(n: f64, profile: Arc<dyn TransitionProfile>) -> Result<Self> {
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Precondition(format!("cutoff level must be positive, got {n}")));
        }
        let mut cumulative = Vec::with_capacity(TABLE_SIZE + 1);
        cumulative.push(0.0);
        let step = 1.0 / TABLE_SIZE as f64;
        let h = |s: f64| profile.h(s);
        let mut acc = 0.0;
        for i in 0..TABLE_SIZE {
            let a = 1.0 + i as f64 * step;
            acc += adaptive_simpson(&h, a, a + step, 1e-15);
            cumulative.push(acc);
        }
        Ok(Self { n, profile, cumulative: Arc::new(cumulative) })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn profile(&self) -> &dyn TransitionProfile {
        self.profile.as_ref()
    }

    pub fn f(&self, s: f64) -> f64 {
        self.profile.h(s / self.n)
    }

    pub fn df(&self, s: f64) -> f64 {
        self.profile.dh(s / self.n) / self.n
    }

    /// `int_1^sigma h` for `sigma` in `[1, 2]`.
    fn h_integral(&self, sigma: f64) -> f64 {
        let sigma = sigma.clamp(1.0, 2.0);
        let pos = (sigma - 1.0) * TABLE_SIZE as f64;
        let i = (pos.floor() as usize).min(TABLE_SIZE);
        let a = 1.0 + i as f64 / TABLE_SIZE as f64;
        if sigma <= a {
            return self.cumulative[i];
        }
        let h = |s: f64| self.profile.h(s);
        self.cumulative[i] + gauss8(&h, a, sigma)
    }

    pub fn g(&self, r: f64) -> f64 {
        if r <= self.n {
            return 0.5 * r.max(0.0);
        }
        0.5 * self.n * (1.0 + self.h_integral(r / self.n))
    }

    /// `g_n'(r) = f_n(r) / 2`.
    pub fn dg(&self, r: f64) -> f64 {
        0.5 * self.f(r)
    }
}

/// A member of the flux class (or the bare advective flux).
#[derive(Clone, Debug)]
pub enum FluxModel {
    /// `F = 0`: the heat / Stokes case.
    Zero,
    /// `F = v (x) v`. Not in the class: its cross derivatives are not
    /// symmetric and it has no potential.
    ExactQuadratic,
    Cutoff(CutoffProfile),
}

impl FluxModel {
    pub fn cutoff(n: f64) -> Result<Self> {
        Ok(FluxModel::Cutoff(CutoffProfile::new(n)?))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FluxModel::Zero)
    }

    pub fn name(&self) -> String {
        match self {
            FluxModel::Zero => "zero".into(),
            FluxModel::ExactQuadratic => "exact_quadratic".into(),
            FluxModel::Cutoff(p) => format!("cutoff({})", p.n()),
        }
    }

    pub fn eval(&self, v: Vec2) -> Mat2 {
        let outer = [[v[0] * v[0], v[0] * v[1]], [v[1] * v[0], v[1] * v[1]]];
        match self {
            FluxModel::Zero => [[0.0; 2]; 2],
            FluxModel::ExactQuadratic => outer,
            FluxModel::Cutoff(p) => {
                let r = v[0] * v[0] + v[1] * v[1];
                let (f, g) = (p.f(r), p.g(r));
                [[f * outer[0][0] + g, f * outer[0][1]], [f * outer[1][0], f * outer[1][1] + g]]
            }
        }
    }

    pub fn derivative(&self, v: Vec2) -> DMat2 {
        let mut d = [[[0.0; 2]; 2]; 2];
        match self {
            FluxModel::Zero => {}
            FluxModel::ExactQuadratic => {
                for (m, dm) in d.iter_mut().enumerate() {
                    for i in 0..2 {
                        for j in 0..2 {
                            dm[i][j] = delta(i, m) * v[j] + v[i] * delta(j, m);
                        }
                    }
                }
            }
            FluxModel::Cutoff(p) => {
                let r = v[0] * v[0] + v[1] * v[1];
                let (f, df, dg) = (p.f(r), p.df(r), p.dg(r));
                for (m, dm) in d.iter_mut().enumerate() {
                    for i in 0..2 {
                        for j in 0..2 {
                            dm[i][j] = 2.0 * df * v[m] * v[i] * v[j]
                                + f * (delta(i, m) * v[j] + v[i] * delta(j, m))
                                + 2.0 * dg * v[m] * delta(i, j);
                        }
                    }
                }
            }
        }
        d
    }

    /// `G(v)` with `dG_j/dv_i = F_ij`; `None` when the flux has no potential.
    pub fn potential(&self, v: Vec2) -> Option<Vec2> {
        match self {
            FluxModel::Zero => Some([0.0, 0.0]),
            FluxModel::ExactQuadratic => None,
            FluxModel::Cutoff(p) => {
                let g = p.g(v[0] * v[0] + v[1] * v[1]);
                Some([g * v[0], g * v[1]])
            }
        }
    }
}

#[inline]
fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

fn frob(m: &Mat2) -> f64 {
    (m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2)).sqrt()
}

/// Central finite-difference Jacobian of `eval`: `fd[m][i][j]`.
pub fn fd_flux_derivative(model: &FluxModel, v: Vec2, step: f64) -> DMat2 {
    let mut d = [[[0.0; 2]; 2]; 2];
    for (m, dm) in d.iter_mut().enumerate() {
        let (mut vp, mut vm) = (v, v);
        vp[m] += step;
        vm[m] -= step;
        let (fp, fm) = (model.eval(vp), model.eval(vm));
        for i in 0..2 {
            for j in 0..2 {
                dm[i][j] = (fp[i][j] - fm[i][j]) / (2.0 * step);
            }
        }
    }
    d
}

/// Outcome of a flux-class membership check.
#[derive(Clone, Debug)]
pub struct MembershipReport {
    pub model: String,
    pub samples: usize,
    /// max over samples of `|dF_ij/dv_m - dF_mj/dv_i|`, relative.
    pub symmetry_defect: f64,
    /// max over samples of `|grad_v G - F^T|`, relative; infinite without a potential.
    pub potential_defect: f64,
    /// `|F(0)|`.
    pub zero_defect: f64,
    /// max over samples of `|dF_analytic - dF_fd|`, relative.
    pub derivative_defect: f64,
    /// sampled sup of `|F(v)| / |v|^2`.
    pub growth_constant: f64,
    /// Sample points where some check failed.
    pub offending: Vec<Vec2>,
    pub pass: bool,
}

impl MembershipReport {
    pub fn into_result(self) -> Result<Self> {
        if self.pass {
            Ok(self)
        } else {
            Err(Error::Data(format!(
                "{} is not in the flux class: symmetry {:e}, potential {:e}, offending {:?}",
                self.model,
                self.symmetry_defect,
                self.potential_defect,
                self.offending.iter().take(5).collect::<Vec<_>>()
            )))
        }
    }
}

/// Tolerance on every relative defect in the membership check.
pub const MEMBERSHIP_TOL: f64 = 1e-6;

/// Checks the class axioms on `samples` random points whose `|v|^2`
/// spread over `[0, 3 * scale]` (the cutoff level for cutoff models).
pub fn flux_membership_check(model: &FluxModel, samples: usize, seed: u64) -> Result<MembershipReport> {
    if samples < 100 {
        return Err(Error::Precondition(format!("need at least 100 samples, got {samples}")));
    }
    let scale = match model {
        FluxModel::Cutoff(p) => p.n(),
        _ => 4.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = MembershipReport {
        model: model.name(),
        samples,
        symmetry_defect: 0.0,
        potential_defect: 0.0,
        zero_defect: frob(&model.eval([0.0, 0.0])),
        derivative_defect: 0.0,
        growth_constant: 0.0,
        offending: Vec::new(),
        pass: true,
    };
    for _ in 0..samples {
        let r2 = rng.gen_range(0.0..3.0 * scale);
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        let v = [r2.sqrt() * th.cos(), r2.sqrt() * th.sin()];
        let step = 1e-5 * (1.0 + r2.sqrt());
        let fd = fd_flux_derivative(model, v, step);
        let an = model.derivative(v);
        let f = model.eval(v);
        // derivative magnitudes scale like |v|; F like |v|^2
        let dscale = 1.0 + r2.sqrt();
        let fscale = 1.0 + r2;
        let mut bad = false;
        let mut sym: f64 = 0.0;
        let mut der: f64 = 0.0;
        for m in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    sym = sym.max((fd[m][i][j] - fd[i][m][j]).abs() / dscale);
                    der = der.max((fd[m][i][j] - an[m][i][j]).abs() / dscale);
                }
            }
        }
        let pot = match model.potential(v) {
            None => f64::INFINITY,
            Some(_) => {
                let mut worst: f64 = 0.0;
                for i in 0..2 {
                    let (mut vp, mut vm) = (v, v);
                    vp[i] += step;
                    vm[i] -= step;
                    let (gp, gm) = (model.potential(vp).unwrap(), model.potential(vm).unwrap());
                    for j in 0..2 {
                        let dg = (gp[j] - gm[j]) / (2.0 * step);
                        worst = worst.max((dg - f[i][j]).abs() / fscale);
                    }
                }
                worst
            }
        };
        if r2 > 0.0 {
            rep.growth_constant = rep.growth_constant.max(frob(&f) / r2);
        }
        if sym > MEMBERSHIP_TOL || pot > MEMBERSHIP_TOL || der > MEMBERSHIP_TOL {
            bad = true;
        }
        rep.symmetry_defect = rep.symmetry_defect.max(sym);
        rep.potential_defect = rep.potential_defect.max(pot);
        rep.derivative_defect = rep.derivative_defect.max(der);
        if bad {
            rep.offending.push(v);
        }
    }
    rep.pass = rep.offending.is_empty()
        && rep.zero_defect == 0.0
        && rep.growth_constant <= FLUX_BOUND_A * (1.0 + 1e-12);
    Ok(rep)
}

/// Flux components of a slice: `[F_11, F_12, F_21, F_22]` per sample.
pub fn flux_field(model: &FluxModel, ux: &[f64], uy: &[f64]) -> [Vec<f64>; 4] {
    let n = ux.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    if model.is_zero() {
        return out;
    }
    for p in 0..n {
        let f = model.eval([ux[p], uy[p]]);
        out[0][p] = f[0][0];
        out[1][p] = f[0][1];
        out[2][p] = f[1][0];
        out[3][p] = f[1][1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson_fine(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn profile_shape() {
        let h = StandardProfile;
        assert_eq!(h.h(0.3), 1.0);
        assert_eq!(h.h(1.0), 1.0);
        assert_eq!(h.h(2.0), 0.0);
        assert!((h.h(1.5) - 0.5).abs() < 1e-15);
        for i in 0..100 {
            let s = 1.0 + i as f64 / 100.0;
            assert!((0.0..=1.0).contains(&h.h(s)));
            assert!((h.h(s) + h.h(3.0 - s) - 1.0).abs() < 1e-14);
            let e = 1e-6;
            let fd = (h.h(s + e) - h.h(s - e)) / (2.0 * e);
            assert!((fd - h.dh(s)).abs() < 1e-7);
        }
    }

    #[test]
    fn g_matches_independent_quadrature() {
        for n in [1.0, 3.0, 10.0] {
            let p = CutoffProfile::new(n).unwrap();
            for r in [0.0, 0.5 * n, n, 1.2 * n, 1.5 * n, 1.9 * n, 2.0 * n, 5.0 * n] {
                let oracle = 0.5 * simpson_fine(|s| StandardProfile.h(s / n), 0.0, r.max(1e-300), 20_000);
                assert!((p.g(r) - oracle).abs() < 1e-10 * (1.0 + r), "n={n} r={r}: {} vs {oracle}", p.g(r));
            }
            assert!((p.g(5.0 * n) - 0.75 * n).abs() < 1e-12 * n);
        }
    }

    #[test]
    fn g_monotone() {
        let p = CutoffProfile::new(2.0).unwrap();
        let mut prev = -1.0;
        for i in 0..1000 {
            let g = p.g(i as f64 * 0.006);
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn eval_examples() {
        let v = [1.0, 2.0];
        assert_eq!(FluxModel::ExactQuadratic.eval(v), [[1.0, 2.0], [2.0, 4.0]]);
        let c = FluxModel::cutoff(10.0).unwrap();
        assert_eq!(c.eval(v), [[3.5, 2.0], [2.0, 6.5]]);
        let c1 = FluxModel::cutoff(1.0).unwrap();
        let f = c1.eval([10.0, 0.0]);
        let g100 = 0.5 * (1.0 + simpson_fine(|s| StandardProfile.h(s), 1.0, 2.0, 20_000));
        assert!((f[0][0] - g100).abs() < 1e-10 && (f[1][1] - g100).abs() < 1e-10);
        assert_eq!(f[0][1], 0.0);
    }

    #[test]
    fn derivative_examples() {
        let d = FluxModel::ExactQuadratic.derivative([1.0, 0.0]);
        assert_eq!(d[0], [[2.0, 0.0], [0.0, 0.0]]);
        assert_eq!(d[1], [[0.0, 1.0], [1.0, 0.0]]);
        for model in [FluxModel::Zero, FluxModel::ExactQuadratic, FluxModel::cutoff(3.0).unwrap()] {
            assert_eq!(model.derivative([0.0, 0.0]), [[[0.0; 2]; 2]; 2]);
        }
        // saturated region: exact derivative plus v_m I
        let c = FluxModel::cutoff(10.0).unwrap();
        let v = [0.7, -1.3];
        let (dc, de) = (c.derivative(v), FluxModel::ExactQuadratic.derivative(v));
        for m in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want = de[m][i][j] + v[m] * delta(i, j);
                    assert!((dc[m][i][j] - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn derivative_matches_fd_in_band() {
        let c = FluxModel::cutoff(2.0).unwrap();
        for k in 0..50 {
            let r2 = 2.0 + 2.0 * (k as f64 + 0.5) / 50.0;
            let v = [r2.sqrt() * 0.6, r2.sqrt() * 0.8];
            let fd = fd_flux_derivative(&c, v, 1e-6);
            let an = c.derivative(v);
            for m in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((fd[m][i][j] - an[m][i][j]).abs() < 1e-4 * (1.0 + an[m][i][j].abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn membership() {
        for n in [1.0, 10.0, 100.0] {
            let rep = flux_membership_check(&FluxModel::cutoff(n).unwrap(), 500, 11).unwrap();
            assert!(rep.pass, "{rep:?}");
            assert!(rep.symmetry_defect <= 1e-6 && rep.potential_defect <= 1e-6);
        }
        let rep = flux_membership_check(&FluxModel::ExactQuadratic, 200, 1).unwrap();
        assert!(!rep.pass);
        assert!(rep.symmetry_defect > 0.1);
        assert!(rep.clone().into_result().is_err());
        assert!(flux_membership_check(&FluxModel::Zero, 100, 1).unwrap().pass);
        assert!(flux_membership_check(&FluxModel::Zero, 99, 1).is_err());
    }

    #[test]
    fn symmetry_counterexample_for_bare_outer_product() {
        // dF_12/dv_2 = 1 but dF_22/dv_1 = 0 at v = (1, 2)
        let d = FluxModel::ExactQuadratic.derivative([1.0, 2.0]);
        assert_eq!(d[1][0][1], 1.0);
        assert_eq!(d[0][1][1], 0.0);
        let c = FluxModel::cutoff(100.0).unwrap().derivative([1.0, 2.0]);
        assert_eq!(c[1][0][1], 1.0);
        assert_eq!(c[0][1][1], 1.0);
    }

    #[test]
    fn uniform_growth_bound() {
        let mut worst: f64 = 0.0;
        for n in [1.0, 10.0, 100.0] {
            let rep = flux_membership_check(&FluxModel::cutoff(n).unwrap(), 2000, 3).unwrap();
            worst = worst.max(rep.growth_constant);
        }
        assert!(worst <= FLUX_BOUND_A + 1e-12);
        assert!((FLUX_BOUND_A - 2.5f64.sqrt()).abs() < 1e-15);
    }
}
