//! First-order certificates and plateau diagnostics for a computed control.
//!
//! The stationarity residual is `-alpha div lambda + grad_F(u)`, where
//! `grad_F(u) = phi|omega + gamma u + beta int u`. Its relative version divides
//! by the larger of the two parts, which coincide at a solution.

use serde::{Deserialize, Serialize};

use crate::grid::{ControlField, GradField, Grid};
use crate::norm::NormChoice;
use crate::objective::{self, ObjectiveError, ProblemSpec};

/// Saturation tolerance used when none is given.
pub const DEFAULT_STOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub norm: NormChoice,
    pub residual: f64,
    pub residual_relative: f64,
    pub grad_f_norm: f64,
    pub alpha_div_lambda_norm: f64,
    pub max_dual_norm: f64,
    /// `max(0, max_dual_norm - 1)`
    pub dual_overshoot: f64,
    pub pairing: f64,
    pub tv: f64,
    /// `|<lambda, grad u> - TV(u)|`
    pub pairing_gap: f64,
    /// Active cells (ℓ2) or active components (ℓ∞).
    pub active_count: usize,
    pub active_fraction: f64,
    /// Share of the active set where `lambda` is saturated within `stol`;
    /// 1 when the active set is empty.
    pub saturation_fraction: f64,
    /// ℓ∞ only: sign agreement of `lambda_j` on `{d_j u > theta}` and on
    /// `{d_j u < -theta}`, for j = x, y.
    pub sign_fraction_x_pos: Option<f64>,
    pub sign_fraction_x_neg: Option<f64>,
    pub sign_fraction_y_pos: Option<f64>,
    pub sign_fraction_y_neg: Option<f64>,
    pub theta: f64,
    pub stol: f64,
}

fn fraction(hit: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Checks the discrete first-order system at `(u, lambda)`. A non-positive
/// `theta` selects `1e-3 * max |grad u|`.
pub fn check_first_order(
    spec: &ProblemSpec,
    u: &ControlField,
    lambda: &GradField,
    theta: f64,
    stol: f64,
) -> Result<Certificate, ObjectiveError> {
    let g = &spec.grid;
    let norm = spec.norm;
    let gu = g.gradient(u);
    let theta = if theta > 0.0 {
        theta
    } else {
        objective::default_theta(&gu, norm).max(f64::MIN_POSITIVE)
    };
    let stol = if stol > 0.0 { stol } else { DEFAULT_STOL };

    let grad_f = objective::grad_f(spec, u)?;
    let div = g.divergence(lambda).scaled(-spec.alpha);
    let r = grad_f.add_scaled(1.0, &div);
    let residual = g.norm_omega(&r);
    let grad_f_norm = g.norm_omega(&grad_f);
    let alpha_div_lambda_norm = g.norm_omega(&div);
    let scale = grad_f_norm.max(alpha_div_lambda_norm);
    let residual_relative = if scale > 0.0 { residual / scale } else { 0.0 };

    let max_dual_norm = (0..lambda.len()).fold(0.0f64, |m, c| m.max(norm.dual(lambda.at(c))));
    let pairing = g.dot_grad(lambda, &gu);
    let tv = objective::tv_of_gradient(g, &gu, norm);

    let mut cert = Certificate {
        norm,
        residual,
        residual_relative,
        grad_f_norm,
        alpha_div_lambda_norm,
        max_dual_norm,
        dual_overshoot: (max_dual_norm - 1.0).max(0.0),
        pairing,
        tv,
        pairing_gap: (pairing - tv).abs(),
        active_count: 0,
        active_fraction: 0.0,
        saturation_fraction: 1.0,
        sign_fraction_x_pos: None,
        sign_fraction_x_neg: None,
        sign_fraction_y_pos: None,
        sign_fraction_y_neg: None,
        theta,
        stol,
    };
    match norm {
        NormChoice::L2 => {
            let (mut active, mut sat) = (0, 0);
            for c in 0..gu.len() {
                if norm.dual(gu.at(c)) > theta {
                    active += 1;
                    if norm.dual(lambda.at(c)) >= 1.0 - stol {
                        sat += 1;
                    }
                }
            }
            cert.active_count = active;
            cert.active_fraction = if gu.is_empty() {
                0.0
            } else {
                active as f64 / gu.len() as f64
            };
            cert.saturation_fraction = fraction(sat, active);
        }
        NormChoice::LInf => {
            // [component][positive, negative] -> (active, agreeing)
            let mut counts = [[(0usize, 0usize); 2]; 2];
            for c in 0..gu.len() {
                let d = gu.at(c);
                let l = lambda.at(c);
                for j in 0..2 {
                    if d[j].abs() > theta {
                        let side = usize::from(d[j] < 0.0);
                        let sign = d[j].signum();
                        counts[j][side].0 += 1;
                        if (l[j] - sign).abs() <= stol {
                            counts[j][side].1 += 1;
                        }
                    }
                }
            }
            let active: usize = counts.iter().flatten().map(|p| p.0).sum();
            let agree: usize = counts.iter().flatten().map(|p| p.1).sum();
            cert.active_count = active;
            cert.active_fraction = if gu.is_empty() {
                0.0
            } else {
                active as f64 / (2 * gu.len()) as f64
            };
            cert.saturation_fraction = fraction(agree, active);
            let f = |p: (usize, usize)| Some(fraction(p.1, p.0));
            cert.sign_fraction_x_pos = f(counts[0][0]);
            cert.sign_fraction_x_neg = f(counts[0][1]);
            cert.sign_fraction_y_pos = f(counts[1][0]);
            cert.sign_fraction_y_neg = f(counts[1][1]);
        }
    }
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub quantization_tol: f64,
    /// Number of distinct control levels.
    pub plateau_count: usize,
    /// Number of connected pieces before pieces of equal level are pooled.
    pub component_count: usize,
    /// Area of each level, in decreasing order.
    pub plateau_areas: Vec<f64>,
    /// Mean control value of each level, in the order of `plateau_areas`.
    pub plateau_levels: Vec<f64>,
    pub omega_area: f64,
    /// Area share of cells with `|grad u|_2 > 1e-3 max |grad u|_2`.
    pub active_fraction: f64,
    /// `h` times the number of cell interfaces between different levels.
    pub jump_length: f64,
}

impl StructureReport {
    /// Share of `|omega|` covered by the `k` largest plateaus.
    pub fn coverage(&self, k: usize) -> f64 {
        if self.omega_area <= 0.0 {
            return 0.0;
        }
        self.plateau_areas.iter().take(k).sum::<f64>() / self.omega_area
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, so labels do not depend on visiting order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Default plateau tolerance `1e-3 * (max u - min u)`, or 1 for constant `u`.
pub fn default_quantization(u: &ControlField) -> f64 {
    let (lo, hi) = u
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if range > 0.0 {
        1e-3 * range
    } else {
        1.0
    }
}

/// Plateaus in two passes: connected components of the graph joining
/// neighbouring window cells whose values differ by at most
/// `quantization_tol`, then components whose mean values lie within the
/// tolerance of each other (after sorting) are pooled into one level. A
/// non-positive tolerance selects [`default_quantization`].
pub fn structure_report(grid: &Grid, u: &ControlField, quantization_tol: f64) -> StructureReport {
    plateau_partition(grid, u, quantization_tol).1
}

/// Per-cell plateau index, numbered as in [`StructureReport::plateau_areas`].
pub fn plateau_labels(grid: &Grid, u: &ControlField, quantization_tol: f64) -> Vec<usize> {
    plateau_partition(grid, u, quantization_tol).0
}

fn plateau_partition(grid: &Grid, u: &ControlField, quantization_tol: f64) -> (Vec<usize>, StructureReport) {
    let tol = if quantization_tol > 0.0 {
        quantization_tol
    } else {
        default_quantization(u)
    };
    let (mx, my) = grid.omega_shape();
    let m = mx * my;
    let mut uf = UnionFind::new(m);
    let v = &u.values;
    for b in 0..my {
        for x in 0..mx {
            let c = b * mx + x;
            if x + 1 < mx && (v[c] - v[c + 1]).abs() <= tol {
                uf.union(c, c + 1);
            }
            if b + 1 < my && (v[c] - v[c + mx]).abs() <= tol {
                uf.union(c, c + mx);
            }
        }
    }
    let roots: Vec<usize> = (0..m).map(|c| uf.find(c)).collect();
    let mut size = vec![0usize; m];
    let mut sum = vec![0.0; m];
    for c in 0..m {
        size[roots[c]] += 1;
        sum[roots[c]] += v[c];
    }
    // pool components by level
    let mut comps: Vec<(f64, usize)> = (0..m)
        .filter(|&r| size[r] > 0)
        .map(|r| (sum[r] / size[r] as f64, r))
        .collect();
    let component_count = comps.len();
    comps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut level_of = vec![usize::MAX; m];
    let mut levels: Vec<(usize, f64)> = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for &(mean, r) in &comps {
        if levels.is_empty() || mean - prev > tol {
            levels.push((0, 0.0));
        }
        let k = levels.len() - 1;
        level_of[r] = k;
        levels[k].0 += size[r];
        levels[k].1 += sum[r];
        prev = mean;
    }
    let mut plateaus: Vec<(usize, f64, usize)> = levels
        .iter()
        .enumerate()
        .map(|(k, &(n, s))| (n, s / n as f64, k))
        .collect();
    plateaus.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)));
    let mut rank = vec![0; plateaus.len()];
    for (i, p) in plateaus.iter().enumerate() {
        rank[p.2] = i;
    }
    let label: Vec<usize> = roots.iter().map(|&r| rank[level_of[r]]).collect();
    let w = grid.cell_weight();

    let mut interfaces = 0usize;
    for b in 0..my {
        for x in 0..mx {
            let c = b * mx + x;
            if x + 1 < mx && label[c] != label[c + 1] {
                interfaces += 1;
            }
            if b + 1 < my && label[c] != label[c + mx] {
                interfaces += 1;
            }
        }
    }

    let mag = grid.gradient(u).magnitude();
    let gmax = mag.iter().cloned().fold(0.0, f64::max);
    let active = if gmax > 0.0 {
        mag.iter().filter(|&&a| a > 1e-3 * gmax).count()
    } else {
        0
    };

    let report = StructureReport {
        quantization_tol: tol,
        plateau_count: plateaus.len(),
        component_count,
        plateau_areas: plateaus.iter().map(|p| p.0 as f64 * w).collect(),
        plateau_levels: plateaus.iter().map(|p| p.1).collect(),
        omega_area: m as f64 * w,
        active_fraction: if m == 0 { 0.0 } else { active as f64 / m as f64 },
        jump_length: interfaces as f64 * grid.h(),
    };
    (label, report)
}
