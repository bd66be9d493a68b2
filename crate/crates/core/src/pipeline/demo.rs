//! Seeding demo on one-dimensional quartics: how the located optimum moves
//! as the loss is swept, under neighbor seeding and under a fixed seed.
//!
//! * `neighbor_quartic`: `3x⁴ - 4(k+h)x³ + 6khx²`, with critical points at
//!   `0`, `h` and `k`. Each step starts from the previous step's optimum.
//! * `fixed_quartic`: `(x-h)⁴ - 2(x-h)²`, minima at `h ± 1`, always started
//!   from `x = 0`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoFamily {
    NeighborQuartic,
    FixedQuartic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoSweep {
    /// `(h, k)` pairs; the first step starts from `start`.
    NeighborQuartic { params: Vec<(f64, f64)>, start: f64 },
    /// `h` values.
    FixedQuartic { params: Vec<f64> },
}

impl DemoSweep {
    /// `(h, k) = (2 - 2t, -2t)` for `t` evenly spaced on `[t0, t1]`, started
    /// at `x = 3`. Passes through `(1, -1)` at `t = 0.5`, where both minima
    /// have the same loss.
    pub fn neighbor_line(t0: f64, t1: f64, steps: usize) -> Self {
        let params = linspace(t0, t1, steps)
            .into_iter()
            .map(|t| (2.0 - 2.0 * t, -2.0 * t))
            .collect();
        DemoSweep::NeighborQuartic { params, start: 3.0 }
    }

    pub fn fixed_line(h0: f64, h1: f64, steps: usize) -> Self {
        DemoSweep::FixedQuartic {
            params: linspace(h0, h1, steps),
        }
    }

    pub fn family(&self) -> DemoFamily {
        match self {
            DemoSweep::NeighborQuartic { .. } => DemoFamily::NeighborQuartic,
            DemoSweep::FixedQuartic { .. } => DemoFamily::FixedQuartic,
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub params: Vec<f64>,
    pub seed: f64,
    pub optimum: f64,
    pub loss: f64,
    /// Set on the step whose optimum jumped away from the previous one.
    pub jump: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTrajectory {
    pub family: DemoFamily,
    pub steps: Vec<DemoStep>,
    pub jumps: Vec<usize>,
}

/// Loss, slope and curvature of one quartic.
trait Quartic {
    fn eval(&self, x: f64) -> (f64, f64, f64);
}

struct Neighbor {
    h: f64,
    k: f64,
}

impl Quartic for Neighbor {
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let (h, k) = (self.h, self.k);
        let f = 3.0 * x.powi(4) - 4.0 * (k + h) * x.powi(3) + 6.0 * k * h * x * x;
        let g = 12.0 * x * (x - h) * (x - k);
        let c = 36.0 * x * x - 24.0 * (k + h) * x + 12.0 * k * h;
        (f, g, c)
    }
}

struct Shifted {
    h: f64,
}

impl Quartic for Shifted {
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let z = x - self.h;
        (z.powi(4) - 2.0 * z * z, 4.0 * z.powi(3) - 4.0 * z, 12.0 * z * z - 4.0)
    }
}

const GRAD_TOL: f64 = 1e-10;
const PROBE: f64 = 1e-3;
const MAX_MOVE: f64 = 0.05;

/// Backtracking gradient descent with moves of at most 0.05. Every stationary point is probed at
/// `x ± 1e-3` and descent resumes from a lower probe (ties go to `+`), so
/// flat inflections and maxima are not reported as optima.
fn descend(q: &impl Quartic, mut x: f64) -> f64 {
    for _ in 0..100 {
        for _ in 0..100_000 {
            let (f, g, _) = q.eval(x);
            if g.abs() < GRAD_TOL {
                break;
            }
            // capped moves keep each descent inside its starting basin
            let mut step = (MAX_MOVE / g.abs()).min(1.0);
            loop {
                let trial = x - step * g;
                if q.eval(trial).0 <= f - 1e-4 * step * g * g {
                    x = trial;
                    break;
                }
                step *= 0.5;
                if step < 1e-20 {
                    return x;
                }
            }
        }
        let f = q.eval(x).0;
        let (up, down) = (q.eval(x + PROBE).0, q.eval(x - PROBE).0);
        if up.min(down) >= f {
            return x;
        }
        x = if up <= down { x + PROBE } else { x - PROBE };
    }
    x
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs the sweep and flags steps whose move exceeds 10× the median move.
pub fn seed_demo(sweep: &DemoSweep) -> DemoTrajectory {
    let mut steps = Vec::new();
    match sweep {
        DemoSweep::NeighborQuartic { params, start } => {
            let mut x = *start;
            for &(h, k) in params {
                let q = Neighbor { h, k };
                let seed = x;
                x = descend(&q, seed);
                steps.push(DemoStep {
                    params: vec![h, k],
                    seed,
                    optimum: x,
                    loss: q.eval(x).0,
                    jump: false,
                });
            }
        }
        DemoSweep::FixedQuartic { params } => {
            for &h in params {
                let q = Shifted { h };
                let x = descend(&q, 0.0);
                steps.push(DemoStep {
                    params: vec![h],
                    seed: 0.0,
                    optimum: x,
                    loss: q.eval(x).0,
                    jump: false,
                });
            }
        }
    }
    let diffs: Vec<f64> = steps.windows(2).map(|p| (p[1].optimum - p[0].optimum).abs()).collect();
    let mut jumps = Vec::new();
    if !diffs.is_empty() {
        let threshold = 10.0 * median(diffs.clone());
        for (i, d) in diffs.iter().enumerate() {
            if *d > threshold && *d > 1e-9 {
                steps[i + 1].jump = true;
                jumps.push(i + 1);
            }
        }
    }
    DemoTrajectory {
        family: sweep.family(),
        steps,
        jumps,
    }
}
