//! Learning-rate schedules indexed by optimizer step `0..steps`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// Half-cosine from `lr_max` at step 0 to exactly `lr_min` at the last step.
    Cosine { lr_max: f64, lr_min: f64, steps: usize },
    /// Cosine warmup from `peak / div_factor` to `peak` over `warmup_frac` of the run, then
    /// cosine decay to `peak / final_div_factor`.
    OneCycle { peak: f64, warmup_frac: f64, div_factor: f64, final_div_factor: f64, steps: usize },
}

impl LrSchedule {
    pub fn cosine(lr_max: f64, lr_min: f64, steps: usize) -> Self {
        Self::Cosine { lr_max, lr_min, steps }
    }

    pub fn one_cycle(peak: f64, warmup_frac: f64, steps: usize) -> Self {
        Self::OneCycle { peak, warmup_frac, div_factor: 25.0, final_div_factor: 1e4, steps }
    }

    pub fn lr(&self, step: usize) -> f64 {
        // cosine interpolation from a (t = 0) to b (t = 1)
        let cos_interp = |a: f64, b: f64, t: f64| b + (a - b) * 0.5 * (1.0 + (PI * t.clamp(0.0, 1.0)).cos());
        match *self {
            Self::Constant { lr } => lr,
            Self::Cosine { lr_max, lr_min, steps } => {
                if steps <= 1 {
                    return lr_min;
                }
                cos_interp(lr_max, lr_min, step as f64 / (steps - 1) as f64)
            }
            Self::OneCycle { peak, warmup_frac, div_factor, final_div_factor, steps } => {
                let last = steps.saturating_sub(1).max(1) as f64;
                let warm = (warmup_frac * last).round().max(1.0);
                let s = step as f64;
                if s <= warm {
                    cos_interp(peak / div_factor, peak, s / warm)
                } else {
                    cos_interp(peak, peak / final_div_factor, (s - warm) / (last - warm).max(1.0))
                }
            }
        }
    }

    pub fn steps(&self) -> Option<usize> {
        match *self {
            Self::Constant { .. } => None,
            Self::Cosine { steps, .. } | Self::OneCycle { steps, .. } => Some(steps),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let fine = match *self {
            Self::Constant { lr } => ok(lr),
            Self::Cosine { lr_max, lr_min, steps } => ok(lr_max) && ok(lr_min) && lr_min <= lr_max && steps > 0,
            Self::OneCycle { peak, warmup_frac, div_factor, final_div_factor, steps } => {
                ok(peak) && (0.0..1.0).contains(&warmup_frac) && div_factor >= 1.0 && final_div_factor >= 1.0 && steps > 0
            }
        };
        if fine {
            Ok(())
        } else {
            Err(format!("invalid learning-rate schedule {self:?}"))
        }
    }
}
