//! Differentiable cone tracing through a lighting octree.
//!
//! Samples are placed on a geometric schedule whose step grows with
//! distance, each sample reads the octree level whose cell size matches the
//! cone footprint, and radiance is accumulated with an emission-absorption
//! model. The backward pass recomputes the schedule and writes analytic
//! gradients into a [`GradientBuffer`].

mod gradient;
mod oracle;
mod schedule;
mod trace;

pub use gradient::GradientBuffer;
pub use oracle::{trace_cone_oracle, OracleField};
pub use schedule::{select_depth, Schedule, Step};
pub use trace::{
    backward, render_image, trace_cone, trace_cone_samples, unit_cube_span, RenderOutput,
    SamplePoint, TraceResult,
};
pub(crate) use trace::trace_with_backward;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample weighting of the accumulated radiance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// `w_n = delta_n / s_n`.
    #[default]
    Paper,
    /// `w_n = 1`, standard emission-absorption volume rendering.
    Unit,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(WeightMode::Paper),
            "unit" => Ok(WeightMode::Unit),
            other => Err(Error::InvalidConfig(format!("weight mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarchConfig {
    /// Initial step in unit-cube lengths; `None` uses the octree leaf side.
    pub c0: Option<f64>,
    /// Step growth factor `c`.
    pub growth: f64,
    /// Replaces every cone's half-angle when set.
    pub theta_override: Option<f64>,
    /// Marching stops once transmittance drops below this value.
    pub min_transmittance: f64,
    /// Maximum march distance from the march origin.
    pub max_distance: f64,
    pub weight_mode: WeightMode,
    /// Use uniform steps of `c0` when the growth `c * tan(theta)` vanishes.
    pub fixed_step_fallback: bool,
}

impl Default for MarchConfig {
    fn default() -> Self {
        Self {
            c0: None,
            growth: 2.0,
            theta_override: None,
            min_transmittance: 1e-4,
            max_distance: 3f64.sqrt(),
            weight_mode: WeightMode::Paper,
            fixed_step_fallback: true,
        }
    }
}

impl MarchConfig {
    pub fn unit() -> Self {
        Self {
            weight_mode: WeightMode::Unit,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if let Some(c0) = self.c0 {
            if !(c0 > 0.0 && c0.is_finite()) {
                return bad(format!("c0 = {c0}"));
            }
        }
        if !(self.growth > 0.0 && self.growth.is_finite()) {
            return bad(format!("growth = {}", self.growth));
        }
        if let Some(t) = self.theta_override {
            if !(0.0..std::f64::consts::FRAC_PI_2).contains(&t) {
                return bad(format!("theta override = {t}"));
            }
        }
        if !(0.0..1.0).contains(&self.min_transmittance) {
            return bad(format!("min transmittance = {}", self.min_transmittance));
        }
        if !(self.max_distance > 0.0) {
            return bad(format!("max distance = {}", self.max_distance));
        }
        Ok(())
    }

    pub fn initial_step(&self, leaf_side: f64) -> f64 {
        self.c0.unwrap_or(leaf_side)
    }
}
