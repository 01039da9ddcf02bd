//! Signed distance `d`, barrier `h`, their squared counterparts `d'`/`h'`,
//! the braking recovery law, and sampled checks of the barrier conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::dynamics::{ControlBounds, ControlVector, Plant, PlantKind, StateVector};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Absolute tolerance used by the sampled barrier checks.
pub const CHECK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for ObstacleSpec {
    fn default() -> Self {
        ObstacleSpec {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SafetyKind {
    /// Disk obstacle in the `(x, y)` plane; the barrier subtracts the
    /// braking distance `v^2 / (2 a_m)`.
    Disk(ObstacleSpec),
    /// Unsafe set `{x < 0}` on the first state entry with the conservative
    /// barrier `x - margin`.
    HalfLine { margin: f64 },
}

/// Distance/barrier pair for one obstacle configuration plus the recovery
/// policy certifying the barrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    pub kind: SafetyKind,
    /// Braking authority used in the barrier and the recovery law.
    pub a_m: f64,
    pub dt: f64,
    pub speed_index: usize,
    pub accel_index: usize,
    pub bounds: ControlBounds,
}

impl SafetySpec {
    pub fn disk(obstacle: ObstacleSpec, plant: &Plant) -> Result<Self> {
        if !(obstacle.radius > 0.0) {
            return Err(Error::InvalidParameter("obstacle radius must be > 0".into()));
        }
        if plant.kind != PlantKind::Unicycle {
            return Err(Error::Unsupported(format!(
                "disk obstacle requires a planar plant, got `{}`",
                plant.name
            )));
        }
        Ok(Self::with_kind(SafetyKind::Disk(obstacle), plant))
    }

    pub fn half_line(margin: f64, plant: &Plant) -> Self {
        Self::with_kind(SafetyKind::HalfLine { margin }, plant)
    }

    /// Default obstacle configuration for each registered plant.
    pub fn for_plant(plant: &Plant) -> Self {
        match plant.kind {
            PlantKind::Unicycle => Self::with_kind(SafetyKind::Disk(ObstacleSpec::default()), plant),
            PlantKind::DoubleIntegrator => Self::half_line(0.2, plant),
        }
    }

    fn with_kind(kind: SafetyKind, plant: &Plant) -> Self {
        let ai = plant.accel_index();
        SafetySpec {
            kind,
            a_m: plant.bounds.upper[ai],
            dt: plant.dt,
            speed_index: plant.speed_index(),
            accel_index: ai,
            bounds: plant.bounds.clone(),
        }
    }

    pub fn distance_generic<T: Real>(&self, x: &[T]) -> T {
        match &self.kind {
            SafetyKind::Disk(o) => {
                let dx = x[0] - o.center[0];
                let dy = x[1] - o.center[1];
                (dx * dx + dy * dy).sqrt() - o.radius
            }
            SafetyKind::HalfLine { .. } => x[0],
        }
    }

    pub fn barrier_generic<T: Real>(&self, x: &[T]) -> T {
        match &self.kind {
            SafetyKind::Disk(_) => {
                let v = x[self.speed_index];
                self.distance_generic(x) - v * v * (0.5 / self.a_m)
            }
            SafetyKind::HalfLine { margin } => x[0] - *margin,
        }
    }

    /// `d'`, the smooth form with the same zero-superlevel set as `d`.
    pub fn distance_sq_generic<T: Real>(&self, x: &[T]) -> T {
        match &self.kind {
            SafetyKind::Disk(o) => {
                let dx = x[0] - o.center[0];
                let dy = x[1] - o.center[1];
                dx * dx + dy * dy - o.radius * o.radius
            }
            SafetyKind::HalfLine { .. } => x[0],
        }
    }

    /// `h'`, the smooth form with the same zero-superlevel set as `h`.
    pub fn barrier_sq_generic<T: Real>(&self, x: &[T]) -> T {
        match &self.kind {
            SafetyKind::Disk(o) => {
                let dx = x[0] - o.center[0];
                let dy = x[1] - o.center[1];
                let v = x[self.speed_index];
                let r = v * v * (0.5 / self.a_m) + o.radius;
                dx * dx + dy * dy - r * r
            }
            SafetyKind::HalfLine { margin } => x[0] - *margin,
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.distance_generic(x)
    }

    pub fn barrier(&self, x: &[f64]) -> f64 {
        self.barrier_generic(x)
    }

    pub fn distance_sq(&self, x: &[f64]) -> f64 {
        self.distance_sq_generic(x)
    }

    pub fn barrier_sq(&self, x: &[f64]) -> f64 {
        self.barrier_sq_generic(x)
    }

    /// Braking law: zero on every input except the speed channel, which gets
    /// `clamp(-2 v / dt, -a_m, a_m)`.
    pub fn recovery_control(&self, x: &[f64]) -> ControlVector {
        let mut u = vec![0.0; self.bounds.lower.len()];
        let v = x[self.speed_index];
        u[self.accel_index] = (-2.0 * v / self.dt).clamp(
            self.bounds.lower[self.accel_index],
            self.bounds.upper[self.accel_index],
        );
        ControlVector(u)
    }
}

/// One evaluated sample of a barrier check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub state: StateVector,
    pub h_before: f64,
    pub h_after: f64,
    pub d: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbfCheckReport {
    pub samples_tested: usize,
    pub violations: Vec<CheckRow>,
    /// Largest observed violation amount, floored at zero.
    pub max_descent_violation: f64,
    pub tolerance: f64,
    pub rows: Vec<CheckRow>,
}

impl CbfCheckReport {
    fn from_rows(rows: Vec<(CheckRow, f64)>, tolerance: f64) -> Self {
        let max = rows.iter().map(|(_, a)| *a).fold(0.0, f64::max);
        let rows: Vec<CheckRow> = rows.into_iter().map(|(r, _)| r).collect();
        CbfCheckReport {
            samples_tested: rows.len(),
            violations: rows.iter().filter(|r| r.violation).cloned().collect(),
            max_descent_violation: max,
            tolerance,
            rows,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.rows.first().map_or(0, |r| r.state.len());
        let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        header.extend(["h_before", "h_after", "d", "violation_flag"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut fields: Vec<String> = r.state.iter().map(|v| format!("{v:.12e}")).collect();
            fields.push(format!("{:.12e}", r.h_before));
            fields.push(format!("{:.12e}", r.h_after));
            fields.push(format!("{:.12e}", r.d));
            fields.push(u8::from(r.violation).to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Verifies `h(f(x, recovery(x))) >= h(x) - tol` on every sample.
pub fn check_cbf_descent(
    spec: &SafetySpec,
    plant: &Plant,
    states: &[StateVector],
    tol: f64,
    exec: Execution,
) -> Result<CbfCheckReport> {
    let rows = exec.map(states, |_, x| -> Result<(CheckRow, f64)> {
        let u = spec.recovery_control(x);
        let next = plant.step(x, &u)?;
        let (before, after) = (spec.barrier(x), spec.barrier(&next));
        let amount = before - after;
        let row = CheckRow {
            state: x.clone(),
            h_before: before,
            h_after: after,
            d: spec.distance(x),
            violation: amount > tol || !plant.bounds.contains(&u),
        };
        Ok((row, amount))
    });
    Ok(CbfCheckReport::from_rows(
        rows.into_iter().collect::<Result<_>>()?,
        tol,
    ))
}

/// Verifies `h(x) >= 0 => d(x) >= -tol` on every sample.
pub fn check_compatibility(
    spec: &SafetySpec,
    states: &[StateVector],
    tol: f64,
    exec: Execution,
) -> CbfCheckReport {
    let rows = exec.map(states, |_, x| {
        let h = spec.barrier(x);
        let d = spec.distance(x);
        let amount = if h >= 0.0 { -d } else { 0.0 };
        let row = CheckRow {
            state: x.clone(),
            h_before: h,
            h_after: h,
            d,
            violation: amount > tol,
        };
        (row, amount)
    });
    CbfCheckReport::from_rows(rows, tol)
}

/// Axis-aligned sampling box, one `[lo, hi]` interval per state entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRegion {
    pub ranges: Vec<[f64; 2]>,
}

impl SampleRegion {
    /// Default sweep region for the unicycle: positions in `[-2.5, 2.5]^2`,
    /// heading in `[-pi, pi]`, speed and turn rate in `[-2, 2]`.
    pub fn unicycle_default() -> Self {
        let pi = std::f64::consts::PI;
        SampleRegion {
            ranges: vec![[-2.5, 2.5], [-2.5, 2.5], [-pi, pi], [-2.0, 2.0], [-2.0, 2.0]],
        }
    }

    pub fn double_integrator_default() -> Self {
        SampleRegion {
            ranges: vec![[-1.0, 3.0], [-0.75, 0.75]],
        }
    }

    pub fn for_plant(plant: &Plant) -> Self {
        match plant.kind {
            PlantKind::Unicycle => Self::unicycle_default(),
            PlantKind::DoubleIntegrator => Self::double_integrator_default(),
        }
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<StateVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                StateVector(
                    self.ranges
                        .iter()
                        .map(|[lo, hi]| if lo < hi { rng.gen_range(*lo..*hi) } else { *lo })
                        .collect(),
                )
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DOUBLE_INTEGRATOR, UNICYCLE};

    fn unicycle() -> (Plant, SafetySpec) {
        let p = Plant::by_name(UNICYCLE).unwrap();
        let s = SafetySpec::for_plant(&p);
        (p, s)
    }

    #[test]
    fn distance_examples() {
        let (_, s) = unicycle();
        assert_eq!(s.distance(&[1.0, 0.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((s.distance(&[1.1, 0.0, 0.0, 0.0, 0.0]) - 0.1).abs() < 1e-15);
        assert_eq!(s.distance(&[0.0, 0.0, 0.0, 0.0, 0.0]), -1.0);
        let s2 = SafetySpec::disk(
            ObstacleSpec {
                center: [1.0, -1.0],
                radius: 0.5,
            },
            &Plant::by_name(UNICYCLE).unwrap(),
        )
        .unwrap();
        assert!((s2.distance(&[1.0, 0.0, 0.0, 0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn barrier_examples() {
        let (_, s) = unicycle();
        let h = s.barrier(&[1.1, 0.0, 0.0, 0.69, 0.0]);
        assert!((h + 0.14).abs() < 0.005, "h = {h}");
        let x = [1.7, -0.4, 0.3, 0.0, 0.2];
        assert_eq!(s.barrier(&x), s.distance(&x));
        assert!((s.barrier(&[2.0, 0.0, 0.0, 1.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn squared_barrier_examples() {
        let (_, s) = unicycle();
        let hs = s.barrier_sq(&[1.1, 0.0, 0.0, 0.69, 0.0]);
        let expected = 1.21 - (1.0 + 0.69f64 * 0.69 / 2.0).powi(2);
        assert!((hs - expected).abs() < 1e-12);
        assert!(hs < 0.0 && (hs + 0.3227).abs() < 1e-3);
        assert!(s.barrier_sq(&[0.6, 0.8, 0.0, 0.0, 0.0]).abs() < 1e-15);
        assert!((s.barrier_sq(&[2.0, 0.0, 0.0, 1.0, 0.0]) - 1.75).abs() < 1e-15);
    }

    #[test]
    fn recovery_branches() {
        let (_, s) = unicycle();
        assert_eq!(s.recovery_control(&[0.0, 0.0, 0.0, 1.0, 0.0]).0, vec![-1.0, 0.0]);
        let u = s.recovery_control(&[0.0, 0.0, 0.0, 0.02, 0.0]);
        assert!((u[0] + 0.8).abs() < 1e-12 && u[1] == 0.0);
        assert_eq!(s.recovery_control(&[0.0, 0.0, 0.0, 0.0, 0.0])[0], 0.0);
        assert_eq!(s.recovery_control(&[0.0, 0.0, 0.0, -1.0, 3.0]).0, vec![1.0, 0.0]);
        // gap between the published branches: clamped, continuous
        assert_eq!(s.recovery_control(&[0.0, 0.0, 0.0, 0.04, 0.0])[0], -1.0);
        assert_eq!(s.recovery_control(&[0.0, 0.0, 0.0, -0.04, 0.0])[0], 1.0);
    }

    #[test]
    fn zero_speed_recovery_is_stationary() {
        let (p, s) = unicycle();
        let x = StateVector(vec![1.3, -0.2, 0.7, 0.0, 1.5]);
        let r = check_cbf_descent(&s, &p, &[x], CHECK_TOL, Execution::Sequential).unwrap();
        assert_eq!(r.rows[0].h_after, r.rows[0].h_before);
        assert!(r.passed());
    }

    #[test]
    fn descent_and_compatibility_sweeps() {
        let (p, s) = unicycle();
        let states = SampleRegion::unicycle_default().sample(10_000, 7);
        let r = check_cbf_descent(&s, &p, &states, CHECK_TOL, Execution::Parallel).unwrap();
        assert_eq!(r.samples_tested, 10_000);
        assert!(r.passed(), "{} violations", r.violations.len());
        assert!(r.max_descent_violation <= CHECK_TOL);
        for row in &r.rows {
            if row.h_before >= 0.0 {
                assert!(row.h_after >= -CHECK_TOL);
            }
        }
        let c = check_compatibility(&s, &states, CHECK_TOL, Execution::Parallel);
        assert!(c.passed());
        for x in &states {
            let gap = s.distance(x) - s.barrier(x);
            assert!((gap - x[3] * x[3] / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn squared_forms_share_sign_classes() {
        let (_, s) = unicycle();
        let states = SampleRegion::unicycle_default().sample(10_000, 11);
        for x in &states {
            assert_eq!(s.distance(x) >= 0.0, s.distance_sq(x) >= 0.0);
            assert_eq!(s.barrier(x) >= 0.0, s.barrier_sq(x) >= 0.0);
            assert!(s.distance(x) >= s.barrier(x));
        }
    }

    #[test]
    fn half_line_pair_is_compatible() {
        let p = Plant::by_name(DOUBLE_INTEGRATOR).unwrap();
        let s = SafetySpec::for_plant(&p);
        let states = SampleRegion::double_integrator_default().sample(2_000, 3);
        let c = check_compatibility(&s, &states, CHECK_TOL, Execution::Sequential);
        assert!(c.passed());
        for x in &states {
            if s.barrier(x) >= 0.0 {
                assert!(s.distance(x) >= 0.2 - 1e-15);
            }
        }
        let r = check_cbf_descent(&s, &p, &states, CHECK_TOL, Execution::Sequential).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let (p, s) = unicycle();
        let states = SampleRegion::unicycle_default().sample(5, 1);
        let r = check_cbf_descent(&s, &p, &states, CHECK_TOL, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("x0,x1,x2,x3,x4,h_before,h_after,d,violation_flag"));
    }
}
