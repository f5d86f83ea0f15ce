//! Analytic desired states.

use serde::{Deserialize, Serialize};

use crate::grid::{Grid, ScalarField};

/// One isotropic Gaussian `amp * exp(-|x - c|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amp: f64,
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
}

impl Bump {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r2 = (x - self.cx).powi(2) + (y - self.cy).powi(2);
        self.amp * (-r2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Sum of two Gaussians; the default places a positive and a negative bump
/// inside the lower-left and upper-right parts of the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoBumps {
    pub first: Bump,
    pub second: Bump,
}

impl Default for TwoBumps {
    fn default() -> Self {
        TwoBumps {
            first: Bump {
                amp: 1.0,
                cx: 0.35,
                cy: 0.35,
                sigma: 0.1,
            },
            second: Bump {
                amp: -1.0,
                cx: 0.65,
                cy: 0.65,
                sigma: 0.1,
            },
        }
    }
}

impl TwoBumps {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.first.eval(x, y) + self.second.eval(x, y)
    }

    pub fn sample(&self, grid: &Grid) -> ScalarField {
        grid.scalar_from_fn(|x, y| self.eval(x, y))
    }
}
