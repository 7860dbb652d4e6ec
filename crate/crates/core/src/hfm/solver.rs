//! Explicit finite-difference solver for the 2D scalar wave equation
//!
//! ```text
//! u_tt = c^2 (u_xx + u_yy) + F s(t) / (rho h dx^2) delta(x - x_s)
//! ```
//!
//! on a rectangular plate with two adjacent edges clamped (u = 0) and the
//! other two traction free (zero normal derivative). The wave speed is the
//! plate speed of the temperature-corrected material, so every feature of
//! the parameter vector reaches the field. Recorded snapshots hold the
//! acceleration `u_tt`, which the central-difference scheme provides exactly
//! as `(u^{n+1} - 2u^n + u^{n-1}) / dt^2`.

use nalgebra::DMatrix;

use super::params::{derive_material, ParameterVector};
use super::{HfmError, SnapshotMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    /// x = 0
    West,
    /// x = max
    East,
    /// y = 0
    South,
    /// y = max
    North,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    /// Node spacing in meters.
    pub dx: f64,
    /// Plate thickness in meters; scales the point force into an acceleration.
    pub thickness: f64,
    /// Clamped edges. The reference setup clamps two adjacent edges.
    pub fixed_edges: Vec<Edge>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            ny: 64,
            dx: 3.0e-3,
            thickness: 2.0e-3,
            fixed_edges: vec![Edge::West, Edge::South],
        }
    }
}

impl GridConfig {
    pub fn nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    fn is_fixed(&self, ix: usize, iy: usize) -> bool {
        self.fixed_edges.iter().any(|e| match e {
            Edge::West => ix == 0,
            Edge::East => ix == self.nx - 1,
            Edge::South => iy == 0,
            Edge::North => iy == self.ny - 1,
        })
    }

    pub fn validate(&self) -> Result<(), HfmError> {
        if self.nx < 8 || self.ny < 8 {
            return Err(HfmError::Config(format!(
                "grid must be at least 8x8, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) || !(self.thickness > 0.0) {
            return Err(HfmError::Config(format!(
                "grid spacing ({}) and thickness ({}) must be positive",
                self.dx, self.thickness
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeConfig {
    /// Time step in seconds.
    pub dt: f64,
    /// Number of solver steps; the simulated window is `steps * dt`.
    pub steps: usize,
    /// Keep every k-th solution.
    pub keep_every: usize,
    /// Solver step of the first retained solution (1 = the first solution).
    pub first_step: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            dt: 5.0e-8,
            steps: 1000,
            keep_every: 5,
            first_step: 1,
        }
    }
}

impl TimeConfig {
    /// Retained snapshot count, `floor(steps / keep_every)`.
    pub fn n_t(&self) -> usize {
        self.steps / self.keep_every.max(1)
    }

    pub fn window(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Solver step index of retained column `i`.
    pub fn step_of(&self, i: usize) -> usize {
        self.first_step + i * self.keep_every
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_t())
            .map(|i| self.step_of(i) as f64 * self.dt)
            .collect()
    }

    /// Same retained times with `factor` times finer stepping.
    pub fn refined(&self, factor: usize) -> TimeConfig {
        TimeConfig {
            dt: self.dt / factor as f64,
            steps: self.steps * factor,
            keep_every: self.keep_every * factor,
            first_step: self.first_step * factor,
        }
    }

    pub fn validate(&self) -> Result<(), HfmError> {
        if !(self.dt > 0.0 && self.dt.is_finite())
            || self.keep_every == 0
            || self.n_t() == 0
            || self.first_step == 0
            || self.first_step > self.keep_every
        {
            return Err(HfmError::Config(format!(
                "time config needs dt > 0, keep_every >= 1, 1 <= first_step <= keep_every and at least one retained step (dt={}, steps={}, keep_every={}, first_step={})",
                self.dt, self.steps, self.keep_every, self.first_step
            )));
        }
        Ok(())
    }
}

/// Point excitation by a windowed tone burst.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceConfig {
    pub ix: usize,
    pub iy: usize,
    /// Peak force in newtons.
    pub amplitude: f64,
    /// Central frequency in Hz.
    pub frequency: f64,
    pub peaks: u32,
}

impl SourceConfig {
    /// Five-peak 250 kHz burst at the centre node of `grid`.
    pub fn centered(grid: &GridConfig) -> Self {
        Self {
            ix: grid.nx / 2,
            iy: grid.ny / 2,
            amplitude: 1.0,
            frequency: 250.0e3,
            peaks: 5,
        }
    }
}

/// Hann-windowed sine burst: `0.5 (1 - cos(2 pi f t / n)) sin(2 pi f t)` on
/// `[0, n / f]`, zero elsewhere.
pub fn tone_burst(frequency: f64, peaks: u32, t: f64) -> f64 {
    let n = peaks.max(1) as f64;
    let duration = n / frequency;
    if !(0.0..=duration).contains(&t) {
        return 0.0;
    }
    let phase = 2.0 * std::f64::consts::PI * frequency * t;
    0.5 * (1.0 - (phase / n).cos()) * phase.sin()
}

/// Largest stable step for wave speed `c` on spacing `dx`.
pub fn cfl_limit(dx: f64, c: f64) -> f64 {
    dx / (c * std::f64::consts::SQRT_2)
}

/// Runs the solver for one parameter vector.
pub fn simulate(
    theta: &ParameterVector,
    grid: &GridConfig,
    time: &TimeConfig,
    source: &SourceConfig,
) -> Result<SnapshotMatrix, HfmError> {
    grid.validate()?;
    time.validate()?;
    if source.ix >= grid.nx || source.iy >= grid.ny {
        return Err(HfmError::Config(format!(
            "source node ({}, {}) outside {}x{} grid",
            source.ix, source.iy, grid.nx, grid.ny
        )));
    }
    if grid.is_fixed(source.ix, source.iy) {
        return Err(HfmError::Config(format!(
            "source node ({}, {}) lies on a clamped edge",
            source.ix, source.iy
        )));
    }
    if !(source.frequency > 0.0) {
        return Err(HfmError::Config("source frequency must be positive".into()));
    }
    let material = derive_material(theta)?;
    let c = material.wave_speed();
    let limit = cfl_limit(grid.dx, c);
    if time.dt > limit {
        return Err(HfmError::Cfl {
            dt: time.dt,
            limit,
            wave_speed: c,
        });
    }

    let (nx, ny) = (grid.nx, grid.ny);
    let n = nx * ny;
    let n_t = time.n_t();
    let coeff = c * c / (grid.dx * grid.dx);
    let force_scale = source.amplitude / (material.rho * grid.thickness * grid.dx * grid.dx);
    let src = grid.node_index(source.ix, source.iy);
    let fixed: Vec<bool> = (0..n).map(|k| grid.is_fixed(k % nx, k / nx)).collect();

    let mut prev = vec![0.0; n];
    let mut cur = vec![0.0; n];
    let mut accel = vec![0.0; n];
    let mut values = DMatrix::<f64>::zeros(n, n_t);
    let mut recorded = 0;
    let dt2 = time.dt * time.dt;

    for step in 0..time.steps {
        if recorded == n_t {
            break;
        }
        let t = step as f64 * time.dt;
        laplacian(&cur, nx, ny, &mut accel);
        for (k, a) in accel.iter_mut().enumerate() {
            *a = if fixed[k] { 0.0 } else { coeff * *a };
        }
        accel[src] += force_scale * tone_burst(source.frequency, source.peaks, t);

        if step == time.step_of(recorded) {
            values.column_mut(recorded).copy_from_slice(&accel);
            recorded += 1;
        }

        let mut finite = true;
        for k in 0..n {
            let next = 2.0 * cur[k] - prev[k] + dt2 * accel[k];
            finite &= next.is_finite();
            prev[k] = next;
        }
        if !finite {
            return Err(HfmError::Divergence { step: step + 1 });
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    Ok(SnapshotMatrix::new(values, time.times()))
}

/// Five-point Laplacian (without the 1/dx^2 factor) with mirrored ghost nodes,
/// i.e. zero normal derivative on every edge. Clamped nodes are zeroed by the caller.
fn laplacian(u: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    for iy in 0..ny {
        let row = iy * nx;
        let up = if iy + 1 < ny { row + nx } else { row - nx };
        let down = if iy > 0 { row - nx } else { row + nx };
        for ix in 0..nx {
            let k = row + ix;
            let left = if ix > 0 { u[k - 1] } else { u[k + 1] };
            let right = if ix + 1 < nx { u[k + 1] } else { u[k - 1] };
            out[k] = left + right + u[up + ix] + u[down + ix] - 4.0 * u[k];
        }
    }
}

/// Anything that can produce a snapshot matrix for a parameter vector.
pub trait HighFidelityModel {
    fn solve(&self, theta: &ParameterVector) -> Result<SnapshotMatrix, HfmError>;

    /// Whether `theta` is physically admissible. Candidate pools skip
    /// inadmissible points instead of letting the solver fail on them.
    fn is_feasible(&self, _theta: &ParameterVector) -> bool {
        true
    }
}

/// The plate problem: grid, time stepping and excitation bundled together.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateModel {
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub source: SourceConfig,
}

impl Default for PlateModel {
    fn default() -> Self {
        let grid = GridConfig::default();
        let source = SourceConfig::centered(&grid);
        Self {
            grid,
            time: TimeConfig::default(),
            source,
        }
    }
}

impl HighFidelityModel for PlateModel {
    fn solve(&self, theta: &ParameterVector) -> Result<SnapshotMatrix, HfmError> {
        simulate(theta, &self.grid, &self.time, &self.source)
    }

    fn is_feasible(&self, theta: &ParameterVector) -> bool {
        derive_material(theta)
            .map(|m| self.time.dt <= cfl_limit(self.grid.dx, m.wave_speed()))
            .unwrap_or(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hfm::ParameterSpace;

    fn small() -> PlateModel {
        let grid = GridConfig {
            nx: 32,
            ny: 32,
            ..GridConfig::default()
        };
        let source = SourceConfig::centered(&grid);
        PlateModel {
            grid,
            time: TimeConfig {
                dt: 5.0e-8,
                steps: 400,
                keep_every: 4,
                first_step: 1,
            },
            source,
        }
    }

    #[test]
    fn tone_burst_window() {
        let f = 250.0e3;
        assert_eq!(tone_burst(f, 5, 0.0), 0.0);
        assert!(tone_burst(f, 5, 5.0 / f).abs() < 1e-12);
        assert!(tone_burst(f, 5, 2.5 / f).abs() < 1e-12);
        assert_eq!(tone_burst(f, 5, 6.0 / f), 0.0);
        assert_eq!(tone_burst(f, 5, -1.0), 0.0);
        // envelope peaks at the center; a quarter period later the carrier is near its max
        assert!(tone_burst(f, 5, 2.25 / f) > 0.95);
    }

    #[test]
    fn zero_source_gives_zero_field() {
        let mut m = small();
        m.source.amplitude = 0.0;
        let s = m.solve(&ParameterSpace::plate().center()).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.values.ncols(), 100);
        assert_eq!(s.values.nrows(), 32 * 32);
    }

    #[test]
    fn deterministic_and_linear() {
        let m = small();
        let theta = ParameterSpace::plate().center();
        let a = m.solve(&theta).unwrap();
        let b = m.solve(&theta).unwrap();
        assert_eq!(a.values, b.values);

        let mut scaled = m.clone();
        scaled.source.amplitude = 3.7;
        let c = scaled.solve(&theta).unwrap();
        let diff = (&c.values - &a.values * 3.7).norm() / c.values.norm();
        assert!(diff < 1e-12, "linearity violated: {diff}");
    }

    #[test]
    fn clamped_edges_stay_zero() {
        let m = small();
        let s = m.solve(&ParameterSpace::plate().center()).unwrap();
        for iy in 0..32 {
            assert!(s.values.row(m.grid.node_index(0, iy)).iter().all(|&v| v == 0.0));
        }
        for ix in 0..32 {
            assert!(s.values.row(m.grid.node_index(ix, 0)).iter().all(|&v| v == 0.0));
        }
        // free edges move
        assert!(s.values.row(m.grid.node_index(31, 16)).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let mut m = small();
        m.time.dt = 1.0e-6;
        let err = m.solve(&ParameterSpace::plate().center()).unwrap_err();
        assert!(matches!(err, HfmError::Cfl { .. }));
        assert!(!m.is_feasible(&ParameterSpace::plate().center()));
    }

    #[test]
    fn config_errors() {
        let mut m = small();
        m.source.ix = 0;
        assert!(matches!(
            m.solve(&ParameterSpace::plate().center()),
            Err(HfmError::Config(_))
        ));
        let mut m = small();
        m.grid.nx = 4;
        assert!(m.solve(&ParameterSpace::plate().center()).is_err());
        let mut m = small();
        m.source.iy = 99;
        assert!(m.solve(&ParameterSpace::plate().center()).is_err());
    }

    fn relative_difference(a: &SnapshotMatrix, b: &SnapshotMatrix) -> f64 {
        (&a.values - &b.values).norm() / b.values.norm()
    }

    #[test]
    fn halving_dt_converges_on_small_grid() {
        let m = small();
        let theta = ParameterSpace::plate().center();
        let coarse = m.solve(&theta).unwrap();
        let mut fine = m.clone();
        fine.time = m.time.refined(2);
        let fine = fine.solve(&theta).unwrap();
        assert_eq!(coarse.times, fine.times);
        let d = relative_difference(&coarse, &fine);
        assert!(d < 0.01, "dt/2 changed the snapshots by {d}");
    }

    #[test]
    fn energy_rises_then_stays_bounded() {
        let m = PlateModel::default();
        let theta = ParameterSpace::plate().center();
        let s = m.solve(&theta).unwrap();
        let energy: Vec<f64> = s.values.column_iter().map(|c| c.norm_squared()).collect();
        let burst_end = (m.source.peaks as f64 / m.source.frequency / (m.time.dt * m.time.keep_every as f64)) as usize;
        let peak_during = energy[..=burst_end].iter().copied().fold(0.0, f64::max);
        assert!(energy[0] < peak_during);
        let after = energy[burst_end + 1..].iter().copied().fold(0.0, f64::max);
        assert!(after.is_finite() && after <= 10.0 * peak_during);

        let mut fine = m.clone();
        fine.time = m.time.refined(2);
        let d = relative_difference(&s, &fine.solve(&theta).unwrap());
        assert!(d < 0.01, "dt/2 changed the snapshots by {d}");
    }

    #[test]
    fn time_stamps_follow_keep_every() {
        let t = TimeConfig {
            dt: 1e-7,
            steps: 1000,
            keep_every: 5,
            first_step: 1,
        };
        assert_eq!(t.n_t(), 200);
        let times = t.times();
        assert!((times[0] - 1e-7).abs() < 1e-20);
        assert!((times[1] - 6e-7).abs() < 1e-20);
        let r = t.refined(2);
        assert_eq!(r.n_t(), 200);
        assert!((r.times()[1] - times[1]).abs() < 1e-18);
    }
}
