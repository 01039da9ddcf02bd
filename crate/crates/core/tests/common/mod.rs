//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's dynamics or barrier code.
#![allow(dead_code)]

pub const DT: f64 = 0.05;
pub const R0: f64 = 1.0;
pub const A_M: f64 = 1.0;

/// Hand-written unicycle step.
pub fn step(x: [f64; 5], a: f64, alpha: f64) -> [f64; 5] {
    let [px, py, th, v, om] = x;
    let s = v * DT + 0.5 * a * DT * DT;
    [px + th.cos() * s, py + th.sin() * s, th + om * DT, v + a * DT, om + alpha * DT]
}

pub fn dist(x: &[f64; 5]) -> f64 {
    x[0].hypot(x[1]) - R0
}

pub fn barrier(x: &[f64; 5]) -> f64 {
    dist(x) - x[3] * x[3] / (2.0 * A_M)
}

fn braking(v: f64) -> f64 {
    (-2.0 * v / DT).clamp(-A_M, A_M)
}

#[derive(Clone, Copy)]
enum Accel {
    Fixed(f64),
    Brake,
}

/// Coarse search for a terminal-CBF-feasible control sequence of length `n`
/// from `x0`: piecewise-constant controls over three blocks, each block
/// choosing acceleration from {-1, 0, 1, braking law} and turn rate from
/// {-1, 0, 1}. Returns true when a sequence keeps `d >= 0` on steps
/// `1..n-1` and ends with `h >= 0`. A `true` is a proof of feasibility;
/// `false` is inconclusive.
pub fn brute_force_mci(x0: [f64; 5], n: usize) -> bool {
    if dist(&x0) < 0.0 {
        return false;
    }
    let accels = [Accel::Fixed(-1.0), Accel::Fixed(0.0), Accel::Fixed(1.0), Accel::Brake];
    let turns = [-1.0, 0.0, 1.0];
    let blocks = n.min(3);
    let per = n.div_ceil(blocks);
    let choices: Vec<(Accel, f64)> = accels
        .iter()
        .flat_map(|&a| turns.iter().map(move |&t| (a, t)))
        .collect();
    let total = choices.len().pow(blocks as u32);
    'seq: for code in 0..total {
        let mut c = code;
        let mut plan = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            plan.push(choices[c % choices.len()]);
            c /= choices.len();
        }
        let mut x = x0;
        for k in 0..n {
            let (acc, turn) = plan[(k / per).min(blocks - 1)];
            let a = match acc {
                Accel::Fixed(a) => a,
                Accel::Brake => braking(x[3]),
            };
            x = step(x, a, turn);
            if k + 1 < n && dist(&x) < 0.0 {
                continue 'seq;
            }
        }
        if barrier(&x) >= 0.0 {
            return true;
        }
    }
    false
}

/// Exact one-step NMPC test with the slack pinned to zero: the first state
/// must reach `h >= 0` (recovery keeps it there afterwards) and the turn
/// input does not move `x_1`, so a dense sweep over the acceleration
/// decides it. Returns the best `h(x_1)`.
pub fn best_next_barrier(x0: [f64; 5]) -> f64 {
    (0..=4000)
        .map(|i| {
            let a = -1.0 + 2.0 * i as f64 / 4000.0;
            barrier(&step(x0, a, 0.0))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `linspace(lo, hi, n)` with both endpoints.
pub fn axis(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}
