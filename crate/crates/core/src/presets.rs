//! Initial data and random admissible fields.

use rand::Rng;

use crate::error::Result;
use crate::grid::{Grid, SpaceTimeField, TimeGrid, VelocitySlice};

/// `(cos x sin y, -sin x cos y)` scaled to the grid periods.
pub fn taylor_green(grid: &Grid) -> VelocitySlice {
    let (ax, ay) = (2.0 * std::f64::consts::PI / grid.lx(), 2.0 * std::f64::consts::PI / grid.ly());
    // stream function cos(ax x) cos(ay y) / (ax ay) gives a unit-amplitude first component
    grid.project(&grid.sample_vector(|x, y| {
        ((ax * x).cos() * (ay * y).sin(), -(ax / ay) * (ax * x).sin() * (ay * y).cos())
    }))
}

/// Divergence-free single Fourier mode with integer wavenumber indices
/// `(a, b)`: the curl of `amplitude * cos(k.x + phase) / |k|`.
pub fn single_mode(grid: &Grid, a: i32, b: i32, amplitude: f64, phase: f64) -> VelocitySlice {
    let (kx, ky) = (
        a as f64 * 2.0 * std::f64::consts::PI / grid.lx(),
        b as f64 * 2.0 * std::f64::consts::PI / grid.ly(),
    );
    let kn = (kx * kx + ky * ky).sqrt();
    grid.project(&grid.sample_vector(|x, y| {
        let s = (kx * x + ky * y + phase).sin() * amplitude / kn;
        // u = (d_y psi, -d_x psi) with psi = cos(k.x + phase)
        (-ky * s, kx * s)
    }))
}

/// Random smooth admissible slice built from modes with indices
/// `|a|, |b| <= max_mode`, normalized to `max |v| = amplitude`.
pub fn random_slice<R: Rng>(grid: &Grid, rng: &mut R, max_mode: i32, amplitude: f64) -> VelocitySlice {
    let mut s = VelocitySlice::zeros(grid);
    for a in -max_mode..=max_mode {
        for b in 0..=max_mode {
            if (b == 0 && a <= 0) || (a == 0 && b == 0) {
                continue;
            }
            let c: f64 = rng.gen_range(-1.0..1.0);
            let ph: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let decay = 1.0 / (1.0 + (a * a + b * b) as f64);
            s.add_assign_scaled(c * decay, &single_mode(grid, a, b, 1.0, ph));
        }
    }
    let peak = s.max_speed_sq().sqrt();
    if peak > 0.0 {
        s = s.scaled(amplitude / peak);
    }
    s
}

/// Smooth random history with pinned slice 0: `v0 + sum_p c_p(t) w_p`, with
/// `c_p` low-degree polynomials vanishing at `t = 0`.
pub fn random_history<R: Rng>(
    grid: &Grid,
    time: TimeGrid,
    v0: &VelocitySlice,
    rng: &mut R,
    max_mode: i32,
    amplitude: f64,
) -> Result<SpaceTimeField> {
    let w1 = random_slice(grid, rng, max_mode, amplitude);
    let w2 = random_slice(grid, rng, max_mode, amplitude);
    let (c1, c2, c3): (f64, f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let t_final = time.t_final();
    let slices = (0..=time.m())
        .map(|j| {
            if j == 0 {
                return v0.clone();
            }
            let s = time.t(j) / t_final;
            let mut out = v0.axpy(c1 * s + c2 * s * s, &w1);
            out.add_assign_scaled(c3 * s * (1.0 - s), &w2);
            grid.project(&out)
        })
        .collect();
    SpaceTimeField::new(grid.clone(), time, slices)
}

/// Random smooth admissible direction vanishing on slice 0.
pub fn random_direction<R: Rng>(grid: &Grid, time: TimeGrid, rng: &mut R, max_mode: i32) -> Result<SpaceTimeField> {
    let zero = VelocitySlice::zeros(grid);
    random_history(grid, time, &zero, rng, max_mode, 1.0)
}

/// White-noise admissible direction (all resolved modes) vanishing on slice 0.
pub fn rough_direction<R: Rng>(grid: &Grid, time: TimeGrid, rng: &mut R) -> Result<SpaceTimeField> {
    let mut slices = vec![VelocitySlice::zeros(grid)];
    for _ in 0..time.m() {
        let raw = VelocitySlice {
            x: (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            y: (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        slices.push(grid.project(&raw));
    }
    SpaceTimeField::new(grid.clone(), time, slices)
}

/// Sum of two random single modes on distinct wavenumber shells (a single
/// shell would be a steady Euler flow with a gradient nonlinearity),
/// normalized to `max |v| = amplitude`. Indices satisfy `|a|, |b| <= 2`.
pub fn two_mode<R: Rng>(grid: &Grid, rng: &mut R, amplitude: f64) -> VelocitySlice {
    let pick = |rng: &mut R| loop {
        let (a, b) = (rng.gen_range(-2..=2), rng.gen_range(-2..=2));
        if (a, b) != (0, 0) {
            return (a, b);
        }
    };
    let (a1, b1) = pick(rng);
    let (a2, b2) = loop {
        let m = pick(rng);
        if m.0 * m.0 + m.1 * m.1 != a1 * a1 + b1 * b1 {
            break m;
        }
    };
    let mut s = single_mode(grid, a1, b1, 1.0, rng.gen_range(0.0..std::f64::consts::TAU));
    s.add_assign_scaled(rng.gen_range(0.5..1.0), &single_mode(grid, a2, b2, 1.0, rng.gen_range(0.0..std::f64::consts::TAU)));
    s.scaled(amplitude / s.max_speed_sq().sqrt())
}
