use crate::error::{Error, Result};

/// Growth below which the geometric schedule is treated as degenerate.
const MIN_GROWTH: f64 = 1e-8;
/// Largest fixed-step range (in initial steps) accepted for the fallback.
const MAX_FIXED_STEPS: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub index: usize,
    /// Distance of the sample from the march origin.
    pub s: f64,
    /// Step length that led to this sample.
    pub delta: f64,
}

/// Sample distances `s_0 = delta_0 = c0`,
/// `delta_n = c * s_{n-1} * tan(theta)`, `s_n = s_{n-1} + delta_n`,
/// ending before the first `s_n` beyond `limit`.
#[derive(Clone, Debug)]
pub struct Schedule {
    c0: f64,
    ratio: f64,
    fixed: bool,
    limit: f64,
    next: usize,
    s: f64,
}

impl Schedule {
    pub fn new(c0: f64, growth: f64, theta: f64, limit: f64, fixed_fallback: bool) -> Result<Self> {
        let ratio = growth * theta.tan();
        let fixed = ratio <= MIN_GROWTH;
        if fixed && (!fixed_fallback || limit / c0 > MAX_FIXED_STEPS) {
            return Err(Error::DegenerateSchedule {
                growth: ratio,
                ratio: limit / c0,
            });
        }
        Ok(Self {
            c0,
            ratio,
            fixed,
            limit,
            next: 0,
            s: 0.0,
        })
    }

    pub fn is_fixed_step(&self) -> bool {
        self.fixed
    }

    /// `s_n = c0 * (1 + c * tan(theta))^n` for the geometric schedule.
    pub fn closed_form(&self, n: usize) -> f64 {
        if self.fixed {
            (n + 1) as f64 * self.c0
        } else {
            self.c0 * (1.0 + self.ratio).powi(n as i32)
        }
    }
}

impl Iterator for Schedule {
    type Item = Step;

    fn next(&mut self) -> Option<Step> {
        let n = self.next;
        let (s, delta) = if n == 0 {
            (self.c0, self.c0)
        } else if self.fixed {
            ((n + 1) as f64 * self.c0, self.c0)
        } else {
            let delta = self.ratio * self.s;
            (self.s + delta, delta)
        };
        if s > self.limit {
            return None;
        }
        self.next += 1;
        self.s = s;
        Some(Step { index: n, s, delta })
    }
}

/// Octree level whose cell side matches the cone footprint
/// `max(delta, 2 s tan(theta))` at a sample.
pub fn select_depth(delta: f64, s: f64, theta: f64, max_depth: u8) -> u8 {
    let footprint = delta.max(2.0 * s * theta.tan());
    // footprint in leaf units
    let ratio = footprint * (1u64 << max_depth) as f64;
    if !(ratio > 1.0) {
        return max_depth;
    }
    let coarser = ratio.log2().floor();
    if coarser >= max_depth as f64 {
        0
    } else {
        max_depth - coarser as u8
    }
}
