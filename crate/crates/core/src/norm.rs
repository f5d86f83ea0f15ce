//! Choice of the vector norm on R^2 used inside the total variation.
//!
//! Naming convention: `L2` is the Euclidean norm and gives the isotropic
//! total variation. `LInf` means the max-norm is imposed on the *test
//! functions* (`|z(x)|_inf <= 1`); on the measure side this dualizes to the
//! sum of component variations, so `LInf` is the anisotropic TV with an
//! l1 aggregation of the gradient components.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormChoice {
    /// Euclidean norm, isotropic total variation.
    L2,
    /// Max-norm on test functions, anisotropic (component-sum) total variation.
    LInf,
}

impl NormChoice {
    /// Mass of a vector weight as seen by the measure norm.
    ///
    /// `L2` gives `|w|_2`, `LInf` gives `|w_1| + |w_2|`.
    #[inline]
    pub fn mass(self, w: [f64; 2]) -> f64 {
        match self {
            NormChoice::L2 => w[0].hypot(w[1]),
            NormChoice::LInf => w[0].abs() + w[1].abs(),
        }
    }

    /// Pointwise norm of a test function or dual variable value.
    ///
    /// `L2` gives `|z|_2`, `LInf` gives `max(|z_1|, |z_2|)`.
    #[inline]
    pub fn dual(self, z: [f64; 2]) -> f64 {
        match self {
            NormChoice::L2 => z[0].hypot(z[1]),
            NormChoice::LInf => z[0].abs().max(z[1].abs()),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormChoice::L2 => "l2",
            NormChoice::LInf => "linf",
        }
    }
}

impl fmt::Display for NormChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" | "euclidean" | "isotropic" => Ok(NormChoice::L2),
            "linf" | "l_inf" | "infinity" | "max" | "anisotropic" => Ok(NormChoice::LInf),
            other => Err(format!("unknown norm choice '{other}' (expected l2 or linf)")),
        }
    }
}
