//! Discrete-time control systems `x_{t+1} = f(x_t, u_t)` and their flows.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{check_dim, Error, Result};

/// Registry identifier of the five-state unicycle.
pub const UNICYCLE: &str = "unicycle5d";
/// Registry identifier of the one-dimensional double integrator.
pub const DOUBLE_INTEGRATOR: &str = "doubleintegrator1d";

macro_rules! real_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Vec<f64>);

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                $name(v)
            }
        }

        impl From<&[f64]> for $name {
            fn from(v: &[f64]) -> Self {
                $name(v.to_vec())
            }
        }
    };
}

real_vector!(
    /// Plant state. Unicycle layout is `(x, y, theta, v, omega)`; the double
    /// integrator uses `(x, v)`.
    StateVector
);
real_vector!(
    /// Plant input. Unicycle layout is `(a, alpha)`.
    ControlVector
);

/// Componentwise box on the control input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim("control bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidParameter(
                "control lower bound exceeds upper bound".into(),
            ));
        }
        Ok(ControlBounds { lower, upper })
    }

    pub fn symmetric(limits: &[f64]) -> Self {
        ControlBounds {
            lower: limits.iter().map(|l| -l).collect(),
            upper: limits.to_vec(),
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.lower.len()
            && u
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for (v, (l, h)) in u.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *h);
        }
    }
}

/// Box constraint on a single state entry, imposed on every predicted state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateConstraint {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantKind {
    Unicycle,
    DoubleIntegrator,
}

/// Sequence of inputs applied one per step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlTrajectory(pub Vec<ControlVector>);

impl ControlTrajectory {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<ControlVector>> for ControlTrajectory {
    fn from(v: Vec<ControlVector>) -> Self {
        ControlTrajectory(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub name: String,
    pub kind: PlantKind,
    pub state_dim: usize,
    pub control_dim: usize,
    pub dt: f64,
    pub bounds: ControlBounds,
    pub state_constraints: Vec<StateConstraint>,
}

impl Plant {
    /// Unicycle with acceleration inputs bounded by `a_max` and `alpha_max`.
    pub fn unicycle(dt: f64, a_max: f64, alpha_max: f64) -> Self {
        Plant {
            name: UNICYCLE.to_string(),
            kind: PlantKind::Unicycle,
            state_dim: 5,
            control_dim: 2,
            dt,
            bounds: ControlBounds::symmetric(&[a_max, alpha_max]),
            state_constraints: Vec::new(),
        }
    }

    pub fn double_integrator(dt: f64, u_max: f64) -> Self {
        Plant {
            name: DOUBLE_INTEGRATOR.to_string(),
            kind: PlantKind::DoubleIntegrator,
            state_dim: 2,
            control_dim: 1,
            dt,
            bounds: ControlBounds::symmetric(&[u_max]),
            state_constraints: Vec::new(),
        }
    }

    /// Adds `|v| <= limit` on the speed entry of every predicted state.
    pub fn with_speed_limit(mut self, limit: f64) -> Self {
        self.state_constraints.push(StateConstraint {
            index: self.speed_index(),
            lower: -limit,
            upper: limit,
        });
        self
    }

    /// Plant registry with the default parameters of each testbed.
    pub fn by_name(name: &str) -> Result<Plant> {
        match name {
            UNICYCLE => Ok(Plant::unicycle(0.05, 1.0, 1.0)),
            DOUBLE_INTEGRATOR => Ok(Plant::double_integrator(1.0, 1.5)),
            other => Err(Error::UnknownPlant(other.to_string())),
        }
    }

    pub fn names() -> &'static [&'static str] {
        &[UNICYCLE, DOUBLE_INTEGRATOR]
    }

    /// Index of the linear speed in the state vector.
    pub fn speed_index(&self) -> usize {
        match self.kind {
            PlantKind::Unicycle => 3,
            PlantKind::DoubleIntegrator => 1,
        }
    }

    /// Index of the input that accelerates the speed entry.
    pub fn accel_index(&self) -> usize {
        0
    }

    /// Step map evaluated on any scalar type. Slices must have the plant's
    /// dimensions.
    #[inline]
    pub fn step_generic<T: Real>(&self, x: &[T], u: &[T], out: &mut [T]) {
        let dt = self.dt;
        match self.kind {
            PlantKind::Unicycle => {
                let (theta, v, omega) = (x[2], x[3], x[4]);
                let s = v * dt + u[0] * (0.5 * dt * dt);
                out[0] = x[0] + theta.cos() * s;
                out[1] = x[1] + theta.sin() * s;
                out[2] = theta + omega * dt;
                out[3] = v + u[0] * dt;
                out[4] = omega + u[1] * dt;
            }
            PlantKind::DoubleIntegrator => {
                out[0] = x[0] + x[1] * dt + u[0] * (0.5 * dt * dt);
                out[1] = x[1] + u[0] * dt;
            }
        }
    }

    /// One step of the dynamics. Inputs are not clamped to the bounds.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<StateVector> {
        check_dim("state", self.state_dim, x.len())?;
        check_dim("control", self.control_dim, u.len())?;
        let mut out = vec![0.0; self.state_dim];
        self.step_generic(x, u, &mut out);
        Ok(StateVector(out))
    }

    /// Flow of the dynamics under `controls`; element 0 is `x0`.
    pub fn simulate(&self, x0: &[f64], controls: &ControlTrajectory) -> Result<Vec<StateVector>> {
        check_dim("state", self.state_dim, x0.len())?;
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(StateVector::from(x0));
        for u in &controls.0 {
            let next = self.step(states.last().expect("non-empty"), u)?;
            states.push(next);
        }
        Ok(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unicycle_coasting_step() {
        let p = Plant::by_name(UNICYCLE).unwrap();
        let x = p.step(&[0.0, 0.0, 0.0, 1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(x.0, vec![0.05, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn unicycle_accelerating_north() {
        let p = Plant::by_name(UNICYCLE).unwrap();
        let x = p
            .step(&[0.0, 0.0, std::f64::consts::FRAC_PI_2, 1.0, 0.0], &[1.0, 0.0])
            .unwrap();
        assert!((x[1] - 0.05125).abs() < 1e-15);
        assert!(x[0].abs() < 1e-17);
        assert!((x[3] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn double_integrator_appendix_rollout() {
        let p = Plant::by_name(DOUBLE_INTEGRATOR).unwrap();
        let pi = ControlTrajectory(vec![vec![1.5].into(), vec![0.0].into()]);
        let xs = p.simulate(&[0.1, -0.7], &pi).unwrap();
        assert_eq!(xs.len(), 3);
        assert!((xs[1][0] - 0.15).abs() < 1e-12 && (xs[1][1] - 0.8).abs() < 1e-12);
        assert!((xs[2][0] - 0.95).abs() < 1e-12 && (xs[2][1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn empty_trajectory_returns_initial_state() {
        let p = Plant::by_name(UNICYCLE).unwrap();
        let x0 = [0.3, -0.2, 1.0, 0.5, 0.1];
        let xs = p.simulate(&x0, &ControlTrajectory::default()).unwrap();
        assert_eq!(xs, vec![StateVector::from(&x0[..])]);
    }

    #[test]
    fn speed_accumulates_under_constant_acceleration() {
        let p = Plant::by_name(UNICYCLE).unwrap();
        let pi = ControlTrajectory(vec![vec![1.0, 0.0].into(); 3]);
        let xs = p.simulate(&[0.0; 5], &pi).unwrap();
        let v: Vec<f64> = xs.iter().map(|x| x[3]).collect();
        for (got, want) in v.iter().zip([0.0, 0.05, 0.10, 0.15]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = Plant::by_name(UNICYCLE).unwrap();
        assert!(matches!(
            p.step(&[0.0; 4], &[0.0; 2]),
            Err(Error::Dimension { .. })
        ));
        assert!(p.step(&[0.0; 5], &[0.0; 1]).is_err());
        assert!(Plant::by_name("bicycle").is_err());
    }

    fn unicycle_state() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0..3.0f64, 5)
    }

    fn unicycle_controls(len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0..1.0f64, 2), 0..len)
    }

    proptest! {
        #[test]
        fn flow_composes_with_step(x0 in unicycle_state(), us in unicycle_controls(12)) {
            let p = Plant::by_name(UNICYCLE).unwrap();
            let pi = ControlTrajectory(us.into_iter().map(ControlVector).collect());
            let xs = p.simulate(&x0, &pi).unwrap();
            prop_assert_eq!(xs.len(), pi.len() + 1);
            for t in 0..pi.len() {
                prop_assert_eq!(&xs[t + 1], &p.step(&xs[t], &pi.0[t]).unwrap());
            }
            let again = p.simulate(&x0, &pi).unwrap();
            for (a, b) in xs.iter().zip(&again) {
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }

        #[test]
        fn coasting_keeps_rates(x0 in unicycle_state(), steps in 1usize..20) {
            let p = Plant::by_name(UNICYCLE).unwrap();
            let pi = ControlTrajectory(vec![vec![0.0, 0.0].into(); steps]);
            let xs = p.simulate(&x0, &pi).unwrap();
            for w in xs.windows(2) {
                prop_assert_eq!(w[1][3], w[0][3]);
                prop_assert_eq!(w[1][4], w[0][4]);
                prop_assert!((w[1][2] - w[0][2] - w[0][4] * p.dt).abs() < 1e-12);
            }
        }

        #[test]
        fn double_integrator_increments(x in -5.0..5.0f64, v in -2.0..2.0f64, u in -1.5..1.5f64) {
            let p = Plant::by_name(DOUBLE_INTEGRATOR).unwrap();
            let n = p.step(&[x, v], &[u]).unwrap();
            prop_assert!(((n[0] - x) - (v + u / 2.0)).abs() < 1e-12);
            prop_assert!(((n[1] - v) - u).abs() < 1e-12);
        }
    }
}
