//! Second-order probes at a computed control `u_bar`.
//!
//! Critical cones are sampled, not characterized. Candidate directions come
//! from three families (smoothed noise, plateau indicators, functions of
//! `u_bar`), and each is tested against the cone inequality
//! `F'(u_bar) v + alpha G'(u_bar; v) <= tau ||z_v||`.
//!
//! A computed `u_bar` is only stationary up to the residual `r` of its
//! certificate, so the strict cone (equality) is tested on the corrected
//! value `F'(u_bar) v + alpha G'(u_bar; v) - <r, v>`, which vanishes exactly
//! for directions whose gradient lives on the active set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate;
use crate::grid::{ControlField, GradField, Grid};
use crate::norm::NormChoice;
use crate::objective::{self, ActiveSetDecomposition, ObjectiveError, ProblemSpec, SmoothPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SocError {
    #[error("invalid second-order configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMode {
    RandomSmooth,
    PlateauIndicator,
    GradientAligned,
}

impl ProbeMode {
    pub const ALL: [ProbeMode; 3] = [
        ProbeMode::RandomSmooth,
        ProbeMode::PlateauIndicator,
        ProbeMode::GradientAligned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProbeMode::RandomSmooth => "random-smooth",
            ProbeMode::PlateauIndicator => "plateau-indicator",
            ProbeMode::GradientAligned => "gradient-aligned",
        }
    }
}

impl std::fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProbeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "random-smooth" | "random" => Ok(ProbeMode::RandomSmooth),
            "plateau-indicator" | "plateau" => Ok(ProbeMode::PlateauIndicator),
            "gradient-aligned" | "gradient" => Ok(ProbeMode::GradientAligned),
            other => Err(format!("unknown probe mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SOCConfig {
    /// Cone slack.
    pub tau: f64,
    /// Activity threshold on `|grad u_bar|`; `None` means
    /// `1e-3 * max |grad u_bar|`.
    pub theta: Option<f64>,
    /// Number of random smooth directions, and the cap on plateau indicators.
    pub samples: usize,
    pub modes: Vec<ProbeMode>,
    pub seed: u64,
    /// Relative tolerance of the strict cone and of the sign checks.
    pub strict_tol: f64,
    pub smoothing_passes: usize,
    pub growth_directions: usize,
    pub growth_steps: Vec<f64>,
}

impl Default for SOCConfig {
    fn default() -> Self {
        SOCConfig {
            tau: 1e-3,
            theta: None,
            samples: 16,
            modes: ProbeMode::ALL.to_vec(),
            seed: 0,
            strict_tol: 1e-8,
            smoothing_passes: 8,
            growth_directions: 10,
            growth_steps: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
        }
    }
}

impl SOCConfig {
    pub fn validate(&self) -> Result<(), SocError> {
        let bad = |m: String| Err(SocError::InvalidConfig(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("theta must be positive, got {t}"));
            }
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("at least one probe mode is required".into());
        }
        if !(self.strict_tol > 0.0) {
            return bad(format!("strict_tol must be positive, got {}", self.strict_tol));
        }
        if self.growth_steps.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("growth steps must be positive".into());
        }
        Ok(())
    }
}

/// A unit-norm candidate direction and the family it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub mode: ProbeMode,
    pub v: ControlField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub id: usize,
    pub mode: ProbeMode,
    /// `F'(u_bar) v + alpha G'(u_bar; v)`
    pub cone_value: f64,
    /// `<r, v>` with the stationarity residual `r`.
    pub residual_pairing: f64,
    pub z_norm: f64,
    pub v_norm: f64,
    pub member: bool,
    pub strict_member: bool,
    /// `F''(u_bar) v^2`
    pub f_second: f64,
    /// ℓ2 only: the curvature term of the TV part.
    pub curvature: Option<f64>,
    /// `F''(u_bar) v^2`, plus `alpha` times the curvature term for ℓ2.
    pub form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthProbe {
    pub id: usize,
    pub steps: Vec<f64>,
    /// `J(u_bar + t v) - J(u_bar)` per step.
    pub increments: Vec<f64>,
    /// Least-squares fit of `increments = kappa / 2 * t^2`.
    pub kappa: f64,
    pub nonnegative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SOCReport {
    pub norm: NormChoice,
    pub tau: f64,
    pub theta: f64,
    pub strict_tol: f64,
    /// `||grad_F(u_bar)||`, the scale of the strict-cone test.
    pub scale: f64,
    pub residual_norm: f64,
    pub directions: Vec<DirectionRecord>,
    pub cone_members: usize,
    pub strict_members: usize,
    /// `min F'' v^2 / ||z_v||^2` over cone members.
    pub delta_state: Option<f64>,
    /// `min F'' v^2 / ||v||^2` over cone members, reported when `gamma > 0`.
    pub delta_control: Option<f64>,
    /// Strict-cone members whose second-order form is negative.
    pub necessary_violations: usize,
    /// Directions with a corrected cone value below `-strict_tol * scale`.
    pub sanity_violations: usize,
    pub growth: Vec<GrowthProbe>,
    pub kappa_min: Option<f64>,
    pub growth_ok: bool,
}

fn resolve_theta(grid: &Grid, ubar: &ControlField, norm: NormChoice, cfg: &SOCConfig) -> f64 {
    cfg.theta
        .unwrap_or_else(|| objective::default_theta(&grid.gradient(ubar), norm))
        .max(f64::MIN_POSITIVE)
}

/// `sum_A (|grad v|^2 - (h_bar . grad v)^2) / |grad u_bar|_2 * h^2` over the
/// cells `A` where `|grad u_bar|_2 > theta`; nonnegative by Cauchy-Schwarz.
pub fn curvature_term(grid: &Grid, ubar: &ControlField, v: &ControlField, theta: f64) -> f64 {
    let gu = grid.gradient(ubar);
    let gv = grid.gradient(v);
    let mut s = 0.0;
    for c in 0..gu.len() {
        let [ux, uy] = gu.at(c);
        let r = ux.hypot(uy);
        if r > theta {
            let [vx, vy] = gv.at(c);
            // |v|^2 - (e.v)^2 = (e_perp . v)^2, which cannot round below zero
            let cross = (ux * vy - uy * vx) / r;
            s += cross * cross / r;
        }
    }
    grid.cell_weight() * s
}

fn normalized(grid: &Grid, v: ControlField) -> Option<ControlField> {
    let n = grid.norm_omega(&v);
    if n > 0.0 && n.is_finite() {
        Some(v.scaled(1.0 / n))
    } else {
        None
    }
}

fn smoothed_noise(grid: &Grid, rng: &mut ChaCha8Rng, passes: usize) -> ControlField {
    let (mx, my) = grid.omega_shape();
    let mut v: Vec<f64> = (0..mx * my).map(|_| StandardNormal.sample(rng)).collect();
    let mut next = vec![0.0; v.len()];
    for _ in 0..passes {
        for b in 0..my {
            for x in 0..mx {
                let c = b * mx + x;
                let (mut s, mut k) = (v[c], 1.0);
                if x > 0 {
                    s += v[c - 1];
                    k += 1.0;
                }
                if x + 1 < mx {
                    s += v[c + 1];
                    k += 1.0;
                }
                if b > 0 {
                    s += v[c - mx];
                    k += 1.0;
                }
                if b + 1 < my {
                    s += v[c + mx];
                    k += 1.0;
                }
                next[c] = s / k;
            }
        }
        std::mem::swap(&mut v, &mut next);
    }
    ControlField::from_vec(v)
}

/// All candidate directions of the configured families, unit norm.
pub fn candidate_directions(grid: &Grid, ubar: &ControlField, cfg: &SOCConfig) -> Vec<Probe> {
    let mut out = Vec::new();
    for &mode in &cfg.modes {
        let mut push = |v: ControlField| {
            if let Some(v) = normalized(grid, v) {
                out.push(Probe { mode, v });
            }
        };
        match mode {
            ProbeMode::RandomSmooth => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                for _ in 0..cfg.samples {
                    push(smoothed_noise(grid, &mut rng, cfg.smoothing_passes));
                }
            }
            ProbeMode::PlateauIndicator => {
                push(ControlField::constant(ubar.len(), 1.0));
                let report = certificate::structure_report(grid, ubar, 0.0);
                if report.plateau_count > 1 {
                    let labels = certificate::plateau_labels(grid, ubar, 0.0);
                    for p in 0..report.plateau_count.min(cfg.samples) {
                        push(ControlField::from_vec(
                            labels.iter().map(|&l| if l == p { 1.0 } else { 0.0 }).collect(),
                        ));
                    }
                }
            }
            ProbeMode::GradientAligned => {
                let umax = ubar.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                push(ubar.clone());
                push(ControlField::from_vec(ubar.values.iter().map(|v| v * v.abs()).collect()));
                if umax > 0.0 {
                    let s = 0.5 * umax;
                    push(ControlField::from_vec(ubar.values.iter().map(|v| (v / s).tanh()).collect()));
                }
            }
        }
    }
    out
}

/// Stationarity residual `grad_F(u_bar) - alpha div lambda` and the point.
fn residual_at(
    spec: &ProblemSpec,
    ubar: &ControlField,
    lambda: &GradField,
) -> Result<(SmoothPoint, ControlField), SocError> {
    let point = SmoothPoint::evaluate(spec, ubar, None)?;
    let div = spec.grid.divergence(lambda).scaled(-spec.alpha);
    let r = point.grad.add_scaled(1.0, &div);
    Ok((point, r))
}

struct Context<'a> {
    spec: &'a ProblemSpec,
    ubar: &'a ControlField,
    point: SmoothPoint,
    r: ControlField,
    active: ActiveSetDecomposition,
    theta: f64,
    scale: f64,
    cfg: &'a SOCConfig,
}

impl<'a> Context<'a> {
    fn new(
        spec: &'a ProblemSpec,
        ubar: &'a ControlField,
        lambda: &GradField,
        cfg: &'a SOCConfig,
    ) -> Result<Self, SocError> {
        cfg.validate()?;
        let g = &spec.grid;
        let theta = resolve_theta(g, ubar, spec.norm, cfg);
        let (point, r) = residual_at(spec, ubar, lambda)?;
        let scale = g.norm_omega(&point.grad).max(f64::MIN_POSITIVE);
        Ok(Context {
            spec,
            ubar,
            active: ActiveSetDecomposition::new(g, ubar, spec.norm, theta),
            point,
            r,
            theta,
            scale,
            cfg,
        })
    }

    fn record(&self, id: usize, probe: &Probe) -> Result<DirectionRecord, SocError> {
        let spec = self.spec;
        let g = &spec.grid;
        let v = &probe.v;
        let zv = self.point.linearized(spec, v)?;
        let z_norm = g.norm_domain(&zv);
        let v_norm = g.norm_omega(v);
        let cone_value =
            g.dot_omega(&self.point.grad, v) + spec.alpha * self.active.directional_derivative(g, v);
        let residual_pairing = g.dot_omega(&self.r, v);
        let member = cone_value <= self.cfg.tau * z_norm;
        let strict_member = (cone_value - residual_pairing).abs() <= self.cfg.strict_tol * self.scale * v_norm;
        let f_second = self.point.hess_bilinear_with(spec, v, v, &zv, &zv);
        let curvature = match spec.norm {
            NormChoice::L2 => Some(curvature_term(g, self.ubar, v, self.theta)),
            NormChoice::LInf => None,
        };
        let form = f_second + spec.alpha * curvature.unwrap_or(0.0);
        Ok(DirectionRecord {
            id,
            mode: probe.mode,
            cone_value,
            residual_pairing,
            z_norm,
            v_norm,
            member,
            strict_member,
            f_second,
            curvature,
            form,
        })
    }

    fn records(&self, probes: &[Probe]) -> Result<Vec<DirectionRecord>, SocError> {
        probes
            .par_iter()
            .enumerate()
            .map(|(i, p)| self.record(i, p))
            .collect()
    }

    fn form_tol(&self, rec: &DirectionRecord) -> f64 {
        self.cfg.strict_tol * (rec.z_norm * rec.z_norm + self.spec.gamma.abs() * rec.v_norm * rec.v_norm) + 1e-15
    }

    fn report(&self, directions: Vec<DirectionRecord>, growth: Vec<GrowthProbe>) -> SOCReport {
        let members: Vec<&DirectionRecord> = directions.iter().filter(|d| d.member).collect();
        let min_of = |f: &dyn Fn(&DirectionRecord) -> f64| {
            members.iter().map(|d| f(d)).fold(None, |m: Option<f64>, x| {
                Some(m.map_or(x, |m| m.min(x)))
            })
        };
        let delta_state = min_of(&|d| d.f_second / (d.z_norm * d.z_norm));
        let delta_control = if self.spec.gamma > 0.0 {
            min_of(&|d| d.f_second / (d.v_norm * d.v_norm))
        } else {
            None
        };
        let necessary_violations = directions
            .iter()
            .filter(|d| d.strict_member && d.form < -self.form_tol(d))
            .count();
        let sanity_violations = directions
            .iter()
            .filter(|d| d.cone_value - d.residual_pairing < -self.cfg.strict_tol * self.scale * d.v_norm)
            .count();
        let kappa_min = growth.iter().map(|p| p.kappa).fold(None, |m: Option<f64>, x| {
            Some(m.map_or(x, |m| m.min(x)))
        });
        SOCReport {
            norm: self.spec.norm,
            tau: self.cfg.tau,
            theta: self.theta,
            strict_tol: self.cfg.strict_tol,
            scale: self.scale,
            residual_norm: self.spec.grid.norm_omega(&self.r),
            cone_members: members.len(),
            strict_members: directions.iter().filter(|d| d.strict_member).count(),
            delta_state,
            delta_control,
            necessary_violations,
            sanity_violations,
            growth_ok: growth.iter().all(|p| p.nonnegative),
            kappa_min,
            growth,
            directions,
        }
    }

    fn growth_probe(&self, id: usize, v: &ControlField) -> Result<GrowthProbe, SocError> {
        let j0 = objective::eval_j(self.spec, self.ubar)?;
        let steps = self.cfg.growth_steps.clone();
        let increments = steps
            .iter()
            .map(|&t| Ok(objective::eval_j(self.spec, &self.ubar.add_scaled(t, v))? - j0))
            .collect::<Result<Vec<f64>, SocError>>()?;
        let vn2 = self.spec.grid.dot_omega(v, v);
        let num: f64 = steps.iter().zip(&increments).map(|(t, d)| d * t * t).sum();
        let den: f64 = steps.iter().map(|t| t.powi(4)).sum();
        Ok(GrowthProbe {
            id,
            kappa: 2.0 * num / (den * vn2),
            nonnegative: increments.iter().all(|d| *d >= 0.0),
            increments,
            steps,
        })
    }
}

/// Candidates that satisfy the cone inequality with slack `tau`.
pub fn sample_critical_directions(
    spec: &ProblemSpec,
    ubar: &ControlField,
    lambda: &GradField,
    cfg: &SOCConfig,
) -> Result<Vec<Probe>, SocError> {
    let ctx = Context::new(spec, ubar, lambda, cfg)?;
    let probes = candidate_directions(&spec.grid, ubar, cfg);
    let recs = ctx.records(&probes)?;
    Ok(probes
        .into_iter()
        .zip(recs)
        .filter(|(_, r)| r.member)
        .map(|(p, _)| p)
        .collect())
}

/// Evaluates the second-order forms on `directions` and counts strict-cone
/// members with a negative form.
pub fn necessary_condition_check(
    spec: &ProblemSpec,
    ubar: &ControlField,
    lambda: &GradField,
    directions: &[Probe],
    cfg: &SOCConfig,
) -> Result<SOCReport, SocError> {
    let ctx = Context::new(spec, ubar, lambda, cfg)?;
    let recs = ctx.records(directions)?;
    Ok(ctx.report(recs, Vec::new()))
}

/// Samples candidates, estimates the growth constants over cone members,
/// and probes `J(u_bar + t v) - J(u_bar)` along up to
/// `cfg.growth_directions` directions (cone members first).
pub fn sufficient_condition_scan(
    spec: &ProblemSpec,
    ubar: &ControlField,
    lambda: &GradField,
    cfg: &SOCConfig,
) -> Result<SOCReport, SocError> {
    let ctx = Context::new(spec, ubar, lambda, cfg)?;
    let probes = candidate_directions(&spec.grid, ubar, cfg);
    let recs = ctx.records(&probes)?;
    let mut order: Vec<usize> = (0..probes.len()).collect();
    order.sort_by_key(|&i| !recs[i].member);
    order.truncate(cfg.growth_directions);
    let growth = order
        .par_iter()
        .map(|&i| ctx.growth_probe(i, &probes[i].v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ctx.report(recs, growth))
}
