//! Vector measures with finitely many atoms.
//!
//! For atomic measures every quantity of the total-variation calculus has a
//! closed form: norms are sums over atoms, the Lebesgue decomposition of
//! `nu` with respect to `|mu|` splits atoms by shared location, and the
//! directional derivative of the norm is an atom sum. These serve as exact
//! references for the grid-based machinery.

use serde::Serialize;
use thiserror::Error;

use crate::grid::Window;
use crate::norm::NormChoice;

/// Absolute tolerance on pairing gaps.
pub const PAIRING_TOL: f64 = 1e-9;
/// Absolute tolerance on saturation and sign conditions and the dual bound.
pub const SUPPORT_TOL: f64 = 1e-6;
/// Samples per axis for the dual-norm check over the window.
pub const SAMPLE_RES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("two atoms share the location ({0}, {1})")]
    DuplicateAtom(f64, f64),
    #[error("atom {0} has a non-finite location or weight")]
    NonFinite(usize),
    #[error("measures use different norms ({0} vs {1})")]
    NormMismatch(NormChoice, NormChoice),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub at: [f64; 2],
    pub weight: [f64; 2],
}

impl Atom {
    pub fn new(at: [f64; 2], weight: [f64; 2]) -> Self {
        Atom { at, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointMassMeasure {
    atoms: Vec<Atom>,
    norm: NormChoice,
}

impl PointMassMeasure {
    pub fn new(atoms: Vec<Atom>, norm: NormChoice) -> Result<Self, MeasureError> {
        for (i, a) in atoms.iter().enumerate() {
            if !a.at.iter().chain(&a.weight).all(|v| v.is_finite()) {
                return Err(MeasureError::NonFinite(i));
            }
            if atoms[..i].iter().any(|b| b.at == a.at) {
                return Err(MeasureError::DuplicateAtom(a.at[0], a.at[1]));
            }
        }
        Ok(PointMassMeasure { atoms, norm })
    }

    pub fn zero(norm: NormChoice) -> Self {
        PointMassMeasure {
            atoms: Vec::new(),
            norm,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn norm_choice(&self) -> NormChoice {
        self.norm
    }

    pub fn with_norm(&self, norm: NormChoice) -> Self {
        PointMassMeasure {
            atoms: self.atoms.clone(),
            norm,
        }
    }

    pub fn weight_at(&self, p: [f64; 2]) -> [f64; 2] {
        self.atoms
            .iter()
            .find(|a| a.at == p)
            .map(|a| a.weight)
            .unwrap_or([0.0, 0.0])
    }

    /// `|mu|({p})`
    pub fn mass_at(&self, p: [f64; 2]) -> f64 {
        self.norm.mass(self.weight_at(p))
    }

    /// `mu + t nu`, merging atoms at equal locations.
    pub fn add_scaled(&self, t: f64, nu: &PointMassMeasure) -> PointMassMeasure {
        let mut atoms = self.atoms.clone();
        for b in &nu.atoms {
            let w = [t * b.weight[0], t * b.weight[1]];
            match atoms.iter_mut().find(|a| a.at == b.at) {
                Some(a) => {
                    a.weight[0] += w[0];
                    a.weight[1] += w[1];
                }
                None => atoms.push(Atom::new(b.at, w)),
            }
        }
        PointMassMeasure {
            atoms,
            norm: self.norm,
        }
    }

    pub fn scaled(&self, t: f64) -> PointMassMeasure {
        PointMassMeasure {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom::new(a.at, [t * a.weight[0], t * a.weight[1]]))
                .collect(),
            norm: self.norm,
        }
    }

    /// Total variation `||mu_j||` of each scalar component.
    pub fn component_norms(&self) -> [f64; 2] {
        let mut c = [0.0, 0.0];
        for a in &self.atoms {
            c[0] += a.weight[0].abs();
            c[1] += a.weight[1].abs();
        }
        c
    }
}

/// The measure norm `||mu||` for the measure's norm choice.
pub fn tv_norm(mu: &PointMassMeasure) -> f64 {
    mu.atoms.iter().map(|a| mu.norm.mass(a.weight)).sum()
}

/// `(sum_j ||mu_j||^2)^{1/2}`
pub fn component_aggregate(mu: &PointMassMeasure) -> f64 {
    let [a, b] = mu.component_norms();
    a.hypot(b)
}

/// Lebesgue decomposition of `nu` with respect to `|mu|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    /// `(location, h_nu)` for each atom of `nu` where `|mu|` has mass.
    pub density: Vec<([f64; 2], [f64; 2])>,
    /// `|mu|({x})` at the same locations.
    pub base_mass: Vec<f64>,
    pub singular: PointMassMeasure,
}

impl Decomposition {
    /// The absolutely continuous part `h_nu |mu|` as a measure.
    pub fn absolutely_continuous(&self, norm: NormChoice) -> PointMassMeasure {
        PointMassMeasure {
            atoms: self
                .density
                .iter()
                .zip(&self.base_mass)
                .map(|((p, h), m)| Atom::new(*p, [h[0] * m, h[1] * m]))
                .collect(),
            norm,
        }
    }
}

fn check_norms(a: &PointMassMeasure, b: &PointMassMeasure) -> Result<(), MeasureError> {
    if a.norm != b.norm {
        return Err(MeasureError::NormMismatch(a.norm, b.norm));
    }
    Ok(())
}

pub fn lebesgue_decompose(
    nu: &PointMassMeasure,
    mu: &PointMassMeasure,
) -> Result<Decomposition, MeasureError> {
    check_norms(nu, mu)?;
    let mut density = Vec::new();
    let mut base_mass = Vec::new();
    let mut singular = Vec::new();
    for a in &nu.atoms {
        let m = mu.mass_at(a.at);
        if m > 0.0 {
            density.push((a.at, [a.weight[0] / m, a.weight[1] / m]));
            base_mass.push(m);
        } else {
            singular.push(*a);
        }
    }
    Ok(Decomposition {
        density,
        base_mass,
        singular: PointMassMeasure {
            atoms: singular,
            norm: nu.norm,
        },
    })
}

/// Directional derivative of the norm, `g'(mu; nu)`.
///
/// `L2`: `int h_nu . dmu + ||nu_s||`. `LInf`: per component, the same
/// formula for the scalar measures `mu_j`, `nu_j`, summed over `j`.
pub fn directional_derivative(
    mu: &PointMassMeasure,
    nu: &PointMassMeasure,
) -> Result<f64, MeasureError> {
    check_norms(mu, nu)?;
    let mut d = 0.0;
    match mu.norm {
        NormChoice::L2 => {
            for a in &nu.atoms {
                let w = mu.weight_at(a.at);
                let m = w[0].hypot(w[1]);
                if m > 0.0 {
                    d += (w[0] * a.weight[0] + w[1] * a.weight[1]) / m;
                } else {
                    d += a.weight[0].hypot(a.weight[1]);
                }
            }
        }
        NormChoice::LInf => {
            for a in &nu.atoms {
                let w = mu.weight_at(a.at);
                for j in 0..2 {
                    d += if w[j] != 0.0 {
                        w[j].signum() * a.weight[j]
                    } else {
                        a.weight[j].abs()
                    };
                }
            }
        }
    }
    Ok(d)
}

/// A continuous vector field on the window, vanishing on its boundary.
pub struct TestVectorFunction {
    f: Box<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>,
}

impl std::fmt::Debug for TestVectorFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TestVectorFunction")
    }
}

impl TestVectorFunction {
    pub fn new(f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static) -> Self {
        TestVectorFunction { f: Box::new(f) }
    }

    pub fn zero() -> Self {
        Self::new(|_| [0.0, 0.0])
    }

    /// Sum of cone-shaped bumps `value_k * max(0, 1 - |x - c_k|_2 / r)`.
    ///
    /// With pairwise distance of the centers at least `2r`, `|z|` never
    /// exceeds the largest `|value_k|` in either norm.
    pub fn bumps(bumps: Vec<([f64; 2], [f64; 2])>, radius: f64) -> Self {
        Self::new(move |x| {
            let mut z = [0.0, 0.0];
            for (c, v) in &bumps {
                let r = (x[0] - c[0]).hypot(x[1] - c[1]);
                let s = (1.0 - r / radius).max(0.0);
                z[0] += s * v[0];
                z[1] += s * v[1];
            }
            z
        })
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomCheck {
    pub at: [f64; 2],
    /// Component index for the signed checks, `None` for the Euclidean one.
    pub component: Option<usize>,
    /// `|lambda(x)|_2` or `lambda_j(x)`.
    pub value: f64,
    /// `1` or `sign(mu_j({x}))`.
    pub target: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub norm_choice: NormChoice,
    /// `<lambda, mu>`
    pub pairing: f64,
    pub mu_norm: f64,
    /// `||mu|| - <lambda, mu>`
    pub pairing_gap: f64,
    pub pairing_ok: bool,
    /// Largest dual norm of `lambda` over atoms and the sample.
    pub sup_dual_norm: f64,
    pub dual_bound_ok: bool,
    pub atom_checks: Vec<AtomCheck>,
    pub support_ok: bool,
    pub member: bool,
}

/// Checks whether `lambda` is a subgradient of the measure norm at `mu`.
pub fn subdiff_membership(
    lambda: &TestVectorFunction,
    mu: &PointMassMeasure,
    window: &Window,
) -> MembershipReport {
    let norm = mu.norm;
    let mut pairing = 0.0;
    let mut sup = 0.0f64;
    let mut checks = Vec::new();
    for a in &mu.atoms {
        let z = lambda.eval(a.at);
        pairing += z[0] * a.weight[0] + z[1] * a.weight[1];
        sup = sup.max(norm.dual(z));
        match norm {
            NormChoice::L2 => {
                if a.weight[0].hypot(a.weight[1]) > 0.0 {
                    let v = z[0].hypot(z[1]);
                    checks.push(AtomCheck {
                        at: a.at,
                        component: None,
                        value: v,
                        target: 1.0,
                        holds: (v - 1.0).abs() <= SUPPORT_TOL,
                    });
                }
            }
            NormChoice::LInf => {
                for j in 0..2 {
                    if a.weight[j] != 0.0 {
                        let t = a.weight[j].signum();
                        checks.push(AtomCheck {
                            at: a.at,
                            component: Some(j),
                            value: z[j],
                            target: t,
                            holds: (z[j] - t).abs() <= SUPPORT_TOL,
                        });
                    }
                }
            }
        }
    }
    let n = SAMPLE_RES;
    for jy in 0..n {
        for ix in 0..n {
            let x = window.x0 + (ix as f64 + 0.5) / n as f64 * (window.x1 - window.x0);
            let y = window.y0 + (jy as f64 + 0.5) / n as f64 * (window.y1 - window.y0);
            sup = sup.max(norm.dual(lambda.eval([x, y])));
        }
    }
    let mu_norm = tv_norm(mu);
    let gap = mu_norm - pairing;
    let pairing_ok = gap.abs() <= PAIRING_TOL;
    let dual_bound_ok = sup <= 1.0 + SUPPORT_TOL;
    let support_ok = checks.iter().all(|c| c.holds);
    MembershipReport {
        norm_choice: norm,
        pairing,
        mu_norm,
        pairing_gap: gap,
        pairing_ok,
        sup_dual_norm: sup,
        dual_bound_ok,
        atom_checks: checks,
        support_ok,
        member: pairing_ok && dual_bound_ok && support_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_diracs(norm: NormChoice) -> PointMassMeasure {
        PointMassMeasure::new(
            vec![
                Atom::new([0.3, 0.3], [1.0, 0.0]),
                Atom::new([0.6, 0.7], [0.0, 1.0]),
            ],
            norm,
        )
        .unwrap()
    }

    #[test]
    fn dirac_example_norms() {
        let mu = two_diracs(NormChoice::L2);
        assert_eq!(tv_norm(&mu), 2.0);
        assert_eq!(component_aggregate(&mu), 2f64.sqrt());
        assert!(tv_norm(&mu) > component_aggregate(&mu));
        assert_eq!(tv_norm(&two_diracs(NormChoice::LInf)), 2.0);
    }

    #[test]
    fn single_atom_norms() {
        let a = vec![Atom::new([0.5, 0.5], [3.0, 4.0])];
        assert_eq!(tv_norm(&PointMassMeasure::new(a.clone(), NormChoice::L2).unwrap()), 5.0);
        assert_eq!(tv_norm(&PointMassMeasure::new(a, NormChoice::LInf).unwrap()), 7.0);
    }

    #[test]
    fn rejects_duplicate_locations() {
        let r = PointMassMeasure::new(
            vec![
                Atom::new([0.5, 0.5], [1.0, 0.0]),
                Atom::new([0.5, 0.5], [0.0, 1.0]),
            ],
            NormChoice::L2,
        );
        assert!(matches!(r, Err(MeasureError::DuplicateAtom(..))));
    }

    #[test]
    fn decomposition_examples() {
        let p = [0.4, 0.4];
        let mu = PointMassMeasure::new(vec![Atom::new(p, [1.0, 0.0])], NormChoice::L2).unwrap();
        let nu = PointMassMeasure::new(vec![Atom::new(p, [2.0, 2.0])], NormChoice::L2).unwrap();
        let d = lebesgue_decompose(&nu, &mu).unwrap();
        assert_eq!(d.density, vec![(p, [2.0, 2.0])]);
        assert!(d.singular.atoms().is_empty());

        let d = lebesgue_decompose(&mu, &mu).unwrap();
        assert_eq!(d.density, vec![(p, [1.0, 0.0])]);

        let far = PointMassMeasure::new(vec![Atom::new([0.7, 0.2], [1.0, -1.0])], NormChoice::L2)
            .unwrap();
        let d = lebesgue_decompose(&far, &mu).unwrap();
        assert!(d.density.is_empty());
        assert_eq!(d.singular, far);
    }

    #[test]
    fn derivative_special_cases() {
        for norm in [NormChoice::L2, NormChoice::LInf] {
            let mu = two_diracs(norm);
            assert!((directional_derivative(&mu, &mu).unwrap() - tv_norm(&mu)).abs() < 1e-15);
            let nu = PointMassMeasure::new(vec![Atom::new([0.1, 0.9], [-2.0, 0.5])], norm).unwrap();
            assert_eq!(directional_derivative(&mu, &nu).unwrap(), tv_norm(&nu));
        }
    }

    #[test]
    fn saturating_bump_is_a_subgradient() {
        let p = [0.5, 0.5];
        let w = Window::square(0.2, 0.8);
        for norm in [NormChoice::L2, NormChoice::LInf] {
            let mu = PointMassMeasure::new(vec![Atom::new(p, [1.0, 0.0])], norm).unwrap();
            let lam = TestVectorFunction::bumps(vec![(p, [1.0, 0.0])], 0.2);
            let r = subdiff_membership(&lam, &mu, &w);
            assert!(r.member, "{r:?}");
            assert!((r.pairing - 1.0).abs() < 1e-15);
            let r = subdiff_membership(&TestVectorFunction::zero(), &mu, &w);
            assert!(!r.member);
            assert_eq!(r.pairing, 0.0);
            assert!(!r.pairing_ok);
        }
    }

    #[test]
    fn signed_support_condition_for_box_dual() {
        // mu = (delta_p - delta_q, 0); brute force over lambda values on a
        // lattice of the box shows the maximizers of <lambda, mu> are exactly
        // those with lambda_1(p) = 1, lambda_1(q) = -1.
        let (p, q) = ([0.3, 0.5], [0.7, 0.5]);
        let mu = PointMassMeasure::new(
            vec![Atom::new(p, [1.0, 0.0]), Atom::new(q, [-1.0, 0.0])],
            NormChoice::LInf,
        )
        .unwrap();
        let w = Window::square(0.1, 0.9);
        let levels = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let mut best = f64::NEG_INFINITY;
        let mut records = Vec::new();
        for &a in &levels {
            for &b in &levels {
                for &c in &levels {
                    let lam = TestVectorFunction::bumps(vec![(p, [a, c]), (q, [b, -c])], 0.15);
                    let r = subdiff_membership(&lam, &mu, &w);
                    best = best.max(r.pairing);
                    records.push((a, b, r));
                }
            }
        }
        assert_eq!(best, tv_norm(&mu));
        for (a, b, r) in records {
            let maximizer = r.pairing == best;
            assert_eq!(maximizer, a == 1.0 && b == -1.0);
            assert_eq!(r.member, maximizer);
            assert_eq!(r.support_ok, maximizer);
        }
    }

    #[test]
    fn norm_mismatch_is_an_error() {
        let a = two_diracs(NormChoice::L2);
        let b = two_diracs(NormChoice::LInf);
        assert!(directional_derivative(&a, &b).is_err());
        assert!(lebesgue_decompose(&a, &b).is_err());
    }
}
