//! Symplectic integration of `H = h + f` and trajectory observables.

use std::f64::consts::TAU;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::HamiltonianSystem;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error("split scheme requires an angle-only perturbation; use implicit_midpoint")]
    SchemeMismatch,
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("trajectory parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Kick–drift–kick Strang splitting for `f = f(θ)`.
    #[default]
    SplitStrang,
    ImplicitMidpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default)]
    pub scheme: Scheme,
    pub step: f64,
    #[serde(default = "default_tol")]
    pub fixed_point_tol: f64,
    #[serde(default = "default_iters")]
    pub max_fixed_point_iters: usize,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_iters() -> usize {
    50
}

fn default_stride() -> usize {
    1
}

impl IntegratorConfig {
    pub fn new(scheme: Scheme, step: f64) -> Self {
        IntegratorConfig {
            scheme,
            step,
            fixed_point_tol: default_tol(),
            max_fixed_point_iters: default_iters(),
            sample_stride: default_stride(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.sample_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(DynamicsError::Config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.fixed_point_tol > 0.0) {
            return Err(DynamicsError::Config("fixed_point_tol must be positive".into()));
        }
        if self.max_fixed_point_iters == 0 {
            return Err(DynamicsError::Config("max_fixed_point_iters must be at least 1".into()));
        }
        if self.sample_stride == 0 {
            return Err(DynamicsError::Config("sample_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// A point `(θ, I)` of phase space with angles in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub theta: Vec<f64>,
    pub actions: Vec<f64>,
}

impl State {
    pub fn new(theta: Vec<f64>, actions: Vec<f64>) -> Self {
        let mut s = State { theta, actions };
        s.reduce_angles();
        s
    }

    pub fn dim(&self) -> usize {
        self.actions.len()
    }

    pub fn reduce_angles(&mut self) {
        for x in &mut self.theta {
            *x = x.rem_euclid(TAU);
            // rem_euclid can round up to exactly 2π
            if *x >= TAU {
                *x = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(&self.actions).all(|x| x.is_finite())
    }

    /// Sup-norm of `I − other.I`.
    pub fn action_distance(&self, other: &State) -> f64 {
        sup_diff(&self.actions, &other.actions)
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// One-step map with owned scratch buffers.
pub struct Stepper<'a> {
    system: &'a HamiltonianSystem,
    config: IntegratorConfig,
    grad: Vec<f64>,
    omega: Vec<f64>,
    mid: State,
    next: State,
}

impl<'a> Stepper<'a> {
    pub fn new(system: &'a HamiltonianSystem, config: IntegratorConfig) -> Result<Self> {
        config.validate()?;
        if config.scheme == Scheme::SplitStrang && !system.perturbation.is_angle_only() {
            return Err(DynamicsError::SchemeMismatch);
        }
        let n = system.dim();
        let zero = State {
            theta: vec![0.0; n],
            actions: vec![0.0; n],
        };
        Ok(Stepper {
            system,
            config,
            grad: vec![0.0; n],
            omega: vec![0.0; n],
            mid: zero.clone(),
            next: zero,
        })
    }

    /// Advances by `dt` (which may be negative) without reducing angles.
    pub fn advance_unreduced(&mut self, state: &mut State, dt: f64) -> Result<()> {
        match self.config.scheme {
            Scheme::SplitStrang => {
                self.kick(state, 0.5 * dt);
                self.system.integrable.frequency_into(&state.actions, &mut self.omega);
                for (x, w) in state.theta.iter_mut().zip(&self.omega) {
                    *x += dt * w;
                }
                self.kick(state, 0.5 * dt);
                Ok(())
            }
            Scheme::ImplicitMidpoint => self.midpoint(state, dt),
        }
    }

    /// Advances by `dt` and reduces the angles mod 2π.
    pub fn advance(&mut self, state: &mut State, dt: f64) -> Result<()> {
        self.advance_unreduced(state, dt)?;
        state.reduce_angles();
        Ok(())
    }

    fn kick(&mut self, state: &mut State, dt: f64) {
        self.system
            .perturbation
            .grad_theta_into(&state.theta, &state.actions, &mut self.grad);
        for (i, g) in state.actions.iter_mut().zip(&self.grad) {
            *i -= dt * g;
        }
    }

    /// `ω = ∂I H` and `grad = ∂θ H` at `mid`.
    fn midpoint_update(&mut self) {
        let f = &self.system.perturbation;
        self.system.integrable.frequency_into(&self.mid.actions, &mut self.omega);
        if !f.is_angle_only() {
            f.grad_actions_into(&self.mid.theta, &self.mid.actions, &mut self.grad);
            for (w, g) in self.omega.iter_mut().zip(&self.grad) {
                *w += g;
            }
        }
        f.grad_theta_into(&self.mid.theta, &self.mid.actions, &mut self.grad);
    }

    fn midpoint(&mut self, state: &mut State, dt: f64) -> Result<()> {
        let n = state.dim();
        // explicit Euler predictor
        self.mid.clone_from(state);
        self.midpoint_update();
        for i in 0..n {
            self.next.theta[i] = state.theta[i] + dt * self.omega[i];
            self.next.actions[i] = state.actions[i] - dt * self.grad[i];
        }
        let mut residual = f64::INFINITY;
        for _ in 0..self.config.max_fixed_point_iters {
            for i in 0..n {
                self.mid.theta[i] = 0.5 * (state.theta[i] + self.next.theta[i]);
                self.mid.actions[i] = 0.5 * (state.actions[i] + self.next.actions[i]);
            }
            self.midpoint_update();
            residual = 0.0;
            for i in 0..n {
                let th = state.theta[i] + dt * self.omega[i];
                let ac = state.actions[i] - dt * self.grad[i];
                residual = residual
                    .max((th - self.next.theta[i]).abs() / (1.0 + th.abs()))
                    .max((ac - self.next.actions[i]).abs() / (1.0 + ac.abs()));
                self.next.theta[i] = th;
                self.next.actions[i] = ac;
            }
            if residual <= self.config.fixed_point_tol {
                state.clone_from(&self.next);
                return Ok(());
            }
        }
        Err(DynamicsError::NonConvergence {
            iterations: self.config.max_fixed_point_iters,
            residual,
        })
    }
}

/// One step of size `config.step`.
pub fn step(system: &HamiltonianSystem, state: &State, config: &IntegratorConfig) -> Result<State> {
    let mut stepper = Stepper::new(system, *config)?;
    let mut next = state.clone();
    stepper.advance(&mut next, config.step)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub energy: f64,
}

/// Sampled orbit together with extremes accumulated at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<Sample>,
    config: Option<IntegratorConfig>,
    steps: u64,
    max_action_drift: f64,
    max_energy_drift: f64,
    tracked_exits: Vec<(f64, Option<f64>)>,
}

impl Trajectory {
    /// Builds a trajectory from externally supplied samples; observables
    /// are then computed from the samples alone.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(DynamicsError::Parse {
                line: 0,
                message: "empty trajectory".into(),
            });
        };
        let n = first.state.dim();
        for (idx, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(DynamicsError::Parse {
                    line: idx + 2,
                    message: "times must be strictly increasing".into(),
                });
            }
        }
        for s in &samples {
            if s.state.dim() != n || s.state.theta.len() != n {
                return Err(DynamicsError::Dimension {
                    expected: n,
                    got: s.state.dim(),
                });
            }
        }
        let max_action_drift = samples
            .iter()
            .map(|s| s.state.action_distance(&first.state))
            .fold(0.0, f64::max);
        let max_energy_drift = samples
            .iter()
            .map(|s| (s.energy - first.energy).abs())
            .fold(0.0, f64::max);
        Ok(Trajectory {
            samples,
            config: None,
            steps: 0,
            max_action_drift,
            max_energy_drift,
            tracked_exits: Vec::new(),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn config(&self) -> Option<&IntegratorConfig> {
        self.config.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.samples[0].state.dim()
    }

    pub fn final_state(&self) -> &State {
        &self.samples[self.samples.len() - 1].state
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("theta{i}")));
        header.extend((1..=n).map(|i| format!("I{i}")));
        header.push("H".into());
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.state.theta.iter().map(f64::to_string));
            row.extend(s.state.actions.iter().map(f64::to_string));
            row.push(s.energy.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => {
                return Err(DynamicsError::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        };
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 4 || cols.len() % 2 != 0 || cols[0] != "t" || cols[cols.len() - 1] != "H" {
            return Err(DynamicsError::Parse {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }
        let n = (cols.len() - 2) / 2;
        let mut samples = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let line_no = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            let values = line
                .trim()
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| DynamicsError::Parse {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if values.len() != cols.len() {
                return Err(DynamicsError::Parse {
                    line: line_no,
                    message: format!("expected {} fields, found {}", cols.len(), values.len()),
                });
            }
            if values.iter().any(|x| !x.is_finite()) {
                return Err(DynamicsError::Parse {
                    line: line_no,
                    message: "non-finite value".into(),
                });
            }
            samples.push(row_to_sample(&values, n));
        }
        Self::from_samples(samples)
    }

    /// Little-endian `f64`, row-major, rows `(t, θ₁..θₙ, I₁..Iₙ, H)`, no header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.samples {
            w.write_all(&s.t.to_le_bytes())?;
            for x in s.state.theta.iter().chain(&s.state.actions) {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&s.energy.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, n: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let width = 2 * n + 2;
        if bytes.len() % (8 * width) != 0 {
            return Err(DynamicsError::Parse {
                line: 0,
                message: format!("{} bytes is not a whole number of {width}-column rows", bytes.len()),
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_samples(values.chunks(width).map(|row| row_to_sample(row, n)).collect())
    }
}

fn row_to_sample(values: &[f64], n: usize) -> Sample {
    Sample {
        t: values[0],
        state: State {
            theta: values[1..=n].to_vec(),
            actions: values[n + 1..=2 * n].to_vec(),
        },
        energy: values[2 * n + 1],
    }
}

/// Integrates from `state0` over `[0, t_end]`.
pub fn integrate(
    system: &HamiltonianSystem,
    state0: &State,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    integrate_tracking(system, state0, t_end, config, &[])
}

/// As [`integrate`], additionally recording at step resolution the first
/// time the action drift exceeds each radius in `exit_radii`.
pub fn integrate_tracking(
    system: &HamiltonianSystem,
    state0: &State,
    t_end: f64,
    config: &IntegratorConfig,
    exit_radii: &[f64],
) -> Result<Trajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(DynamicsError::Config(format!("horizon must be positive, got {t_end}")));
    }
    if state0.dim() != system.dim() || state0.theta.len() != system.dim() {
        return Err(DynamicsError::Dimension {
            expected: system.dim(),
            got: state0.dim(),
        });
    }
    let mut stepper = Stepper::new(system, *config)?;
    let dt = config.step;
    let total = (t_end / dt - 1e-9).ceil().max(1.0) as u64;
    let mut state = state0.clone();
    state.reduce_angles();
    let e0 = system.energy(&state.theta, &state.actions);
    let mut samples = vec![Sample {
        t: 0.0,
        state: state.clone(),
        energy: e0,
    }];
    let mut exits: Vec<(f64, Option<f64>)> = exit_radii.iter().map(|&r| (r, None)).collect();
    let mut max_action_drift = 0.0f64;
    let mut max_energy_drift = 0.0f64;
    let stride = config.sample_stride as u64;
    for i in 1..=total {
        stepper.advance(&mut state, dt)?;
        let t = i as f64 * dt;
        if !state.is_finite() {
            return Err(DynamicsError::NonFinite(t));
        }
        let drift = state.action_distance(&samples[0].state);
        if drift > max_action_drift {
            max_action_drift = drift;
            for (r, hit) in exits.iter_mut() {
                if hit.is_none() && drift > *r {
                    *hit = Some(t);
                }
            }
        }
        let energy = system.energy(&state.theta, &state.actions);
        max_energy_drift = max_energy_drift.max((energy - e0).abs());
        if i % stride == 0 || i == total {
            samples.push(Sample {
                t,
                state: state.clone(),
                energy,
            });
        }
    }
    Ok(Trajectory {
        samples,
        config: Some(*config),
        steps: total,
        max_action_drift,
        max_energy_drift,
        tracked_exits: exits,
    })
}

/// `max_t |I(t) − I(0)|_∞`.
pub fn action_drift(traj: &Trajectory) -> f64 {
    traj.max_action_drift
}

/// `max_t |H(t) − H(0)|`.
pub fn energy_drift(traj: &Trajectory) -> f64 {
    traj.max_energy_drift
}

/// First time with `|I(t) − I(0)|_∞ > ρ`. Exact to one step for radii
/// tracked during integration, otherwise to one sample stride.
pub fn exit_time(traj: &Trajectory, rho: f64) -> Option<f64> {
    if let Some((_, hit)) = traj.tracked_exits.iter().find(|(r, _)| *r == rho) {
        return *hit;
    }
    let start = &traj.samples[0].state;
    traj.samples
        .iter()
        .find(|s| s.state.action_distance(start) > rho)
        .map(|s| s.t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::IntVector;
    use crate::models::{IntegrableModel, Perturbation, PerturbationTerm};
    use crate::poly::Polynomial;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(h: IntegrableModel, terms: Vec<PerturbationTerm>) -> HamiltonianSystem {
        let n = h.dim();
        HamiltonianSystem::new(h, Perturbation::new(n, terms).unwrap()).unwrap()
    }

    fn pendulum(eps: f64) -> HamiltonianSystem {
        system(
            IntegrableModel::identity(1),
            vec![PerturbationTerm::cosine(IntVector::from([1]), eps, 0.0)],
        )
    }

    fn three_dof(eps: f64) -> HamiltonianSystem {
        system(
            IntegrableModel::identity(3),
            vec![
                PerturbationTerm::cosine(IntVector::from([1, 0, 0]), eps, 0.0),
                PerturbationTerm::cosine(IntVector::from([1, -1, 0]), eps, 0.3),
                PerturbationTerm::cosine(IntVector::from([0, 1, 1]), eps, 1.0),
            ],
        )
    }

    fn action_dependent(eps: f64) -> HamiltonianSystem {
        let c = Polynomial::from_terms(2, [(vec![0, 0], eps), (vec![1, 0], eps), (vec![0, 1], -0.5 * eps)]);
        system(
            IntegrableModel::new(vec![vec![1.0, 0.2], vec![0.2, 0.8]], vec![0.0, 0.1]).unwrap(),
            vec![
                PerturbationTerm::new(IntVector::from([1, 1]), c, 0.2),
                PerturbationTerm::cosine(IntVector::from([0, 1]), eps, 0.0),
            ],
        )
    }

    #[test]
    fn integrable_case_conserves_actions() {
        let sys = system(IntegrableModel::identity(2), vec![]);
        let s0 = State::new(vec![0.1, 0.2], vec![0.7, -0.3]);
        for scheme in [Scheme::SplitStrang, Scheme::ImplicitMidpoint] {
            let cfg = IntegratorConfig::new(scheme, 0.01);
            let s1 = step(&sys, &s0, &cfg).unwrap();
            assert_eq!(s1.actions, s0.actions);
            assert!((s1.theta[0] - (0.1 + 0.007)).abs() < 1e-15);
            let traj = integrate(&sys, &s0, 50.0, &cfg.with_stride(100)).unwrap();
            assert_eq!(action_drift(&traj), 0.0);
            assert_eq!(exit_time(&traj, 1e-12), None);
        }
    }

    #[test]
    fn split_rejects_action_dependent_coefficients() {
        let sys = action_dependent(0.01);
        let s0 = State::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let cfg = IntegratorConfig::new(Scheme::SplitStrang, 0.01);
        assert!(matches!(step(&sys, &s0, &cfg), Err(DynamicsError::SchemeMismatch)));
        let cfg = IntegratorConfig::new(Scheme::ImplicitMidpoint, 0.01);
        assert!(step(&sys, &s0, &cfg).is_ok());
    }

    #[test]
    fn midpoint_reports_non_convergence() {
        let sys = pendulum(1.0);
        let mut cfg = IntegratorConfig::new(Scheme::ImplicitMidpoint, 3.0);
        cfg.max_fixed_point_iters = 3;
        let s0 = State::new(vec![1.0], vec![0.5]);
        assert!(matches!(step(&sys, &s0, &cfg), Err(DynamicsError::NonConvergence { .. })));
    }

    #[test]
    fn invalid_configs() {
        let sys = pendulum(0.1);
        let s0 = State::new(vec![1.0], vec![0.5]);
        let mut cfg = IntegratorConfig::new(Scheme::SplitStrang, 0.0);
        assert!(matches!(step(&sys, &s0, &cfg), Err(DynamicsError::Config(_))));
        cfg.step = 0.1;
        cfg.sample_stride = 0;
        assert!(matches!(step(&sys, &s0, &cfg), Err(DynamicsError::Config(_))));
        cfg.sample_stride = 1;
        assert!(integrate(&sys, &s0, -1.0, &cfg).is_err());
    }

    #[test]
    fn pendulum_energy_over_one_period() {
        let eps = 0.01;
        let sys = pendulum(eps);
        let (i0, th0) = (0.5f64, 0.0f64);
        let e0 = 0.5 * i0 * i0 + eps * th0.cos();
        // rotation period T = ∫ dθ / √(2(E − ε cos θ))
        let m = 20_000;
        let period: f64 = (0..m)
            .map(|j| {
                let th = (j as f64 + 0.5) * TAU / m as f64;
                TAU / m as f64 / (2.0 * (e0 - eps * th.cos())).sqrt()
            })
            .sum();
        for scheme in [Scheme::SplitStrang, Scheme::ImplicitMidpoint] {
            let cfg = IntegratorConfig::new(scheme, 1e-3).with_stride(1000);
            let traj = integrate(&sys, &State::new(vec![th0], vec![i0]), period, &cfg).unwrap();
            assert!(energy_drift(&traj) < 1e-8, "{scheme:?}: {}", energy_drift(&traj));
            // after one period the pendulum is back at θ = 0 (mod 2π)
            let th = traj.final_state().theta[0];
            assert!(th.min(TAU - th) < 1e-3);
        }
    }

    fn symplectic_defect(sys: &HamiltonianSystem, scheme: Scheme, s: &State) -> f64 {
        let n = s.dim();
        let cfg = IntegratorConfig::new(scheme, 1e-3);
        let mut stepper = Stepper::new(sys, cfg).unwrap();
        let h = 1e-6;
        let flat = |st: &State| [st.theta.clone(), st.actions.clone()].concat();
        let mut jac = vec![vec![0.0; 2 * n]; 2 * n];
        for c in 0..2 * n {
            let mut plus = flat(s);
            let mut minus = flat(s);
            plus[c] += h;
            minus[c] -= h;
            let mut sp = State {
                theta: plus[..n].to_vec(),
                actions: plus[n..].to_vec(),
            };
            let mut sm = State {
                theta: minus[..n].to_vec(),
                actions: minus[n..].to_vec(),
            };
            stepper.advance_unreduced(&mut sp, 1e-3).unwrap();
            stepper.advance_unreduced(&mut sm, 1e-3).unwrap();
            let (fp, fm) = (flat(&sp), flat(&sm));
            for r in 0..2 * n {
                jac[r][c] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        // Ω = [[0, I], [−I, 0]]; (JᵀΩJ)_{ab} = Σ_i J_{i a} J_{n+i b} − J_{n+i a} J_{i b}
        let mut defect = 0.0f64;
        for a in 0..2 * n {
            for b in 0..2 * n {
                let v: f64 = (0..n).map(|i| jac[i][a] * jac[n + i][b] - jac[n + i][a] * jac[i][b]).sum();
                let omega = if b == a + n {
                    1.0
                } else if a == b + n {
                    -1.0
                } else {
                    0.0
                };
                defect = defect.max((v - omega).abs());
            }
        }
        defect
    }

    #[test]
    fn step_is_symplectic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = three_dof(0.1);
        let sys_i = action_dependent(0.1);
        for _ in 0..20 {
            let s = State::new(
                (0..3).map(|_| rng.random_range(0.0..TAU)).collect(),
                (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
            );
            assert!(symplectic_defect(&sys, Scheme::SplitStrang, &s) < 1e-6);
            assert!(symplectic_defect(&sys, Scheme::ImplicitMidpoint, &s) < 1e-6);
            let s2 = State::new(s.theta[..2].to_vec(), s.actions[..2].to_vec());
            assert!(symplectic_defect(&sys_i, Scheme::ImplicitMidpoint, &s2) < 1e-6);
        }
    }

    #[test]
    fn time_reversal() {
        for (sys, scheme) in [
            (three_dof(0.05), Scheme::SplitStrang),
            (three_dof(0.05), Scheme::ImplicitMidpoint),
        ] {
            let s0 = State::new(vec![0.3, 1.0, 2.0], vec![0.4, -0.2, 0.9]);
            let mut stepper = Stepper::new(&sys, IntegratorConfig::new(scheme, 1e-3)).unwrap();
            let mut s = s0.clone();
            for _ in 0..10_000 {
                stepper.advance(&mut s, 1e-3).unwrap();
            }
            for _ in 0..10_000 {
                stepper.advance(&mut s, -1e-3).unwrap();
            }
            let dtheta = s
                .theta
                .iter()
                .zip(&s0.theta)
                .map(|(a, b)| {
                    let d = (a - b).rem_euclid(TAU);
                    d.min(TAU - d)
                })
                .fold(0.0, f64::max);
            assert!(dtheta < 1e-8 && s.action_distance(&s0) < 1e-8, "{scheme:?}");
        }
    }

    #[test]
    fn step_halving_is_second_order() {
        let sys = three_dof(0.05);
        let s0 = State::new(vec![0.3, 1.0, 2.0], vec![0.4, -0.2, 0.9]);
        for scheme in [Scheme::SplitStrang, Scheme::ImplicitMidpoint] {
            let d1 = energy_drift(&integrate(&sys, &s0, 20.0, &IntegratorConfig::new(scheme, 0.02)).unwrap());
            let d2 = energy_drift(&integrate(&sys, &s0, 20.0, &IntegratorConfig::new(scheme, 0.01)).unwrap());
            let ratio = d1 / d2;
            assert!((3.0..5.0).contains(&ratio), "{scheme:?}: ratio {ratio}");
        }
    }

    #[test]
    fn no_secular_energy_growth() {
        let sys = three_dof(0.05);
        let s0 = State::new(vec![0.3, 1.0, 2.0], vec![0.4, -0.2, 0.9]);
        let cfg = IntegratorConfig::new(Scheme::SplitStrang, 0.01).with_stride(1000);
        let d1 = energy_drift(&integrate(&sys, &s0, 500.0, &cfg).unwrap());
        let d2 = energy_drift(&integrate(&sys, &s0, 1000.0, &cfg).unwrap());
        assert!(d2 / d1 < 2.0);
    }

    #[test]
    fn deterministic_integration() {
        let sys = three_dof(0.05);
        let s0 = State::new(vec![0.3, 1.0, 2.0], vec![0.4, -0.2, 0.9]);
        let cfg = IntegratorConfig::new(Scheme::SplitStrang, 0.01).with_stride(7);
        assert_eq!(integrate(&sys, &s0, 30.0, &cfg).unwrap(), integrate(&sys, &s0, 30.0, &cfg).unwrap());
    }

    #[test]
    fn sampling_and_observables() {
        let sys = three_dof(0.05);
        let s0 = State::new(vec![0.3, 1.0, 2.0], vec![0.4, -0.2, 0.9]);
        let cfg = IntegratorConfig::new(Scheme::SplitStrang, 0.01).with_stride(10);
        let traj = integrate_tracking(&sys, &s0, 10.0, &cfg, &[1e-3]).unwrap();
        assert_eq!(traj.steps(), 1000);
        assert_eq!(traj.samples().len(), 101);
        assert_eq!(traj.samples()[0].t, 0.0);
        assert!(traj.samples().windows(2).all(|w| w[1].t > w[0].t));
        // online maxima dominate sample maxima
        let sampled = traj.samples().iter().map(|s| s.state.action_distance(&s0)).fold(0.0, f64::max);
        assert!(action_drift(&traj) >= sampled);
        let tracked = exit_time(&traj, 1e-3).unwrap();
        let from_samples = exit_time(&Trajectory::from_samples(traj.samples().to_vec()).unwrap(), 1e-3).unwrap();
        assert!(tracked <= from_samples && from_samples - tracked <= 0.1 + 1e-12);
    }

    #[test]
    fn constant_and_linear_synthetic_trajectories() {
        let st = State::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let constant: Vec<Sample> = (0..10)
            .map(|i| Sample {
                t: i as f64,
                state: st.clone(),
                energy: 1.0,
            })
            .collect();
        let traj = Trajectory::from_samples(constant).unwrap();
        assert_eq!(action_drift(&traj), 0.0);
        assert_eq!(energy_drift(&traj), 0.0);
        assert_eq!(exit_time(&traj, 0.1), None);
        let slope = 0.01;
        let linear: Vec<Sample> = (0..1000)
            .map(|i| Sample {
                t: i as f64,
                state: State::new(vec![0.0, 0.0], vec![1.0 + slope * i as f64, 1.0]),
                energy: 1.0,
            })
            .collect();
        let traj = Trajectory::from_samples(linear).unwrap();
        let t = exit_time(&traj, 0.5).unwrap();
        assert!((t - 0.5 / slope).abs() <= 1.0);
    }

    #[test]
    fn csv_and_binary_roundtrip() {
        let sys = three_dof(0.05);
        let s0 = State::new(vec![0.3, 1.0, 2.0], vec![0.4, -0.2, 0.9]);
        let traj = integrate(&sys, &s0, 1.0, &IntegratorConfig::new(Scheme::SplitStrang, 0.01).with_stride(3)).unwrap();
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8_lossy(&csv).starts_with("t,theta1,theta2,theta3,I1,I2,I3,H\n"));
        let back = Trajectory::read_csv(&csv[..]).unwrap();
        assert_eq!(back.samples(), traj.samples());
        let mut bin = Vec::new();
        traj.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), traj.samples().len() * 8 * 8);
        assert_eq!(Trajectory::read_binary(&bin[..], 3).unwrap().samples(), traj.samples());
        assert!(Trajectory::read_binary(&bin[..bin.len() - 1], 3).is_err());
    }

    #[test]
    fn csv_rejects_tampering() {
        let good = "t,theta1,I1,H\n0,0,1,0.5\n1,1,1,0.5\n";
        assert!(Trajectory::read_csv(good.as_bytes()).is_ok());
        for bad in [
            "t,theta1,I1,H\n0,0,1,0.5\n1,1,x,0.5\n",
            "t,theta1,I1,H\n0,0,1,0.5\n1,1,0.5\n",
            "t,theta1,I1,H\n1,0,1,0.5\n0,1,1,0.5\n",
            "time,theta1,I1,H\n0,0,1,0.5\n",
            "t,theta1,I1,H\n",
            "",
        ] {
            assert!(Trajectory::read_csv(bad.as_bytes()).is_err(), "{bad:?}");
        }
    }
}
