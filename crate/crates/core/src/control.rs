//! Switched-LTI closed-loop dynamics under control execution skips:
//! per-step and per-sequence simulation, common quadratic Lyapunov
//! certificates over skip subsequences, skip-limit derivation, and
//! empirical exponential-stability checks.
//!
//! A skip subsequence of length `i` executes the controller once and then
//! holds the last input for `i - 1` sampling periods; its transition matrix
//! is `A0^(i-1) * A1`. A common `P` with `Mᵀ P M - γ² P ≺ 0` for every
//! participating subsequence certifies a `γ` decay per subsequence under
//! arbitrary switching among them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Augmented closed-loop state: plant state stacked on the estimate.
pub type AugmentedState = DVector<f64>;

/// Discrete-time plant with estimator and controller gains.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Controller gain (m x n).
    pub k: DMatrix<f64>,
    /// Estimator gain (n x p).
    pub l: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        k: DMatrix<f64>,
        l: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension("A must be square".into()));
        }
        let m = b.ncols();
        let p = c.nrows();
        if b.nrows() != n {
            return Err(Error::Dimension("B must be n x m".into()));
        }
        if c.ncols() != n {
            return Err(Error::Dimension("C must be p x n".into()));
        }
        if k.nrows() != m || k.ncols() != n {
            return Err(Error::Dimension("K must be m x n".into()));
        }
        if l.nrows() != n || l.ncols() != p {
            return Err(Error::Dimension("L must be n x p".into()));
        }
        Ok(PlantModel { a, b, c, k, l })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Augmented dimension 2n.
    pub fn aug_dim(&self) -> usize {
        2 * self.state_dim()
    }

    /// Closed-loop transition for an executed control step:
    /// `[[A, BK], [LC, A - LC + BK]]`.
    pub fn a1(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let bk = &self.b * &self.k;
        let lc = &self.l * &self.c;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.a);
        m.view_mut((0, n), (n, n)).copy_from(&bk);
        m.view_mut((n, 0), (n, n)).copy_from(&lc);
        m.view_mut((n, n), (n, n))
            .copy_from(&(&self.a - &lc + &bk));
        m
    }

    /// Closed-loop transition for a skipped step: the estimate is held and
    /// the plant reuses the last input, `[[A, BK], [0, I]]`.
    pub fn a0(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let bk = &self.b * &self.k;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.a);
        m.view_mut((0, n), (n, n)).copy_from(&bk);
        m.view_mut((n, n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        m
    }
}

/// Advances the augmented state by one sampling period.
pub fn step(plant: &PlantModel, x: &AugmentedState, executed: bool) -> AugmentedState {
    assert_eq!(x.len(), plant.aug_dim(), "state dimension mismatch");
    if executed {
        plant.a1() * x
    } else {
        plant.a0() * x
    }
}

/// A control skipping sequence: `true` executes, `false` skips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Css {
    bits: Vec<bool>,
}

impl Css {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() || !bits[0] {
            return Err(Error::InvalidFrame(
                "a skipping sequence must start with an executed step".into(),
            ));
        }
        Ok(Css { bits })
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::InvalidFrame(format!(
                    "invalid skipping-sequence character `{other}`"
                ))),
            })
            .collect::<Result<Vec<bool>>>()?;
        Css::from_bits(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Longest run of consecutive skips.
    pub fn max_skip_run(&self) -> u32 {
        let mut best = 0u32;
        let mut run = 0u32;
        for &b in &self.bits {
            if b {
                run = 0;
            } else {
                run += 1;
                best = best.max(run);
            }
        }
        best
    }

    /// Decomposition into subsequences `1 0^(i-1)`; the trailing
    /// subsequence may still be open but its length is reported as-is.
    pub fn subsequence_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = 0usize;
        for &b in &self.bits {
            if b {
                if cur > 0 {
                    out.push(cur);
                }
                cur = 1;
            } else {
                cur += 1;
            }
        }
        if cur > 0 {
            out.push(cur);
        }
        out
    }

    pub fn respects_skip_limit(&self, limit: u32) -> bool {
        self.max_skip_run() <= limit
    }
}

/// Runs the sequence from `x0`; the trajectory has `css.len() + 1` entries.
pub fn simulate_css(plant: &PlantModel, css: &Css, x0: &AugmentedState) -> Vec<AugmentedState> {
    let a1 = plant.a1();
    let a0 = plant.a0();
    let mut traj = Vec::with_capacity(css.len() + 1);
    traj.push(x0.clone());
    let mut x = x0.clone();
    for &b in css.bits() {
        x = if b { &a1 * x } else { &a0 * x };
        traj.push(x.clone());
    }
    traj
}

/// Picks the trajectory samples at subsequence boundaries (the switching
/// instants of the induced switched system), including the start and final
/// states. The per-subsequence decay certificate applies at exactly these
/// indices.
pub fn boundary_samples(traj: &[AugmentedState], css: &Css) -> Vec<AugmentedState> {
    let mut out = vec![traj[0].clone()];
    let mut k = 0usize;
    for len in css.subsequence_lengths() {
        k += len;
        out.push(traj[k].clone());
    }
    out
}

/// Transition matrix of one skip subsequence together with its length.
#[derive(Debug, Clone, PartialEq)]
pub struct SubseqDynamics {
    /// Subsequence length `i` (one execution, `i - 1` skips).
    pub len: usize,
    /// `A0^(i-1) * A1`.
    pub matrix: DMatrix<f64>,
}

/// Builds the subsequence matrices for lengths `1..=max_len`.
pub fn subsequence_dynamics(plant: &PlantModel, max_len: usize) -> Vec<SubseqDynamics> {
    assert!(max_len >= 1);
    let a1 = plant.a1();
    let a0 = plant.a0();
    let mut out = Vec::with_capacity(max_len);
    let mut m = a1.clone();
    for len in 1..=max_len {
        out.push(SubseqDynamics {
            len,
            matrix: m.clone(),
        });
        m = &a0 * &m;
    }
    out
}

/// A common quadratic Lyapunov certificate for a set of subsequence
/// matrices at decay rate `gamma` (jump factor 1, decay `γ²` per switch).
#[derive(Debug, Clone, PartialEq)]
pub struct Clf {
    pub p: DMatrix<f64>,
    pub gamma: f64,
}

impl Clf {
    /// Condition number of `P`.
    pub fn condition_number(&self) -> f64 {
        let eig = self.p.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        max / min
    }

    /// Overshoot constant for the exponential envelope: `sqrt(cond(P))`.
    pub fn gues_constant(&self) -> f64 {
        self.condition_number().sqrt()
    }
}

/// Result of a CLF search.
#[derive(Debug, Clone, PartialEq)]
pub enum ClfOutcome {
    Feasible(Clf),
    /// Either a necessary condition failed outright or the projection
    /// budget ran out; both are reported (conservatively) as infeasible.
    Infeasible(InfeasibleReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasibleReason {
    /// Some subsequence matrix has spectral radius at or above `gamma`.
    SpectralRadius,
    BudgetExhausted,
}

impl ClfOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, ClfOutcome::Feasible(_))
    }

    pub fn clf(self) -> Option<Clf> {
        match self {
            ClfOutcome::Feasible(c) => Some(c),
            ClfOutcome::Infeasible(_) => None,
        }
    }
}

/// Iteration budget of the projection loop.
pub const CLF_ITERATION_BUDGET: usize = 10_000;

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Positive definiteness with the documented tolerance: smallest eigenvalue
/// above `1e-8 * trace(P) / dim`.
pub fn is_positive_definite(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let eig = sym(p).symmetric_eigen();
    let floor = 1e-8 * p.trace() / n as f64;
    p.trace() > 0.0 && eig.eigenvalues.min() > floor
}

/// The definitional certificate check: `P ≻ 0` and every
/// `Mᵀ P M - γ² P ≺ 0` strictly.
pub fn clf_post_check(mats: &[DMatrix<f64>], gamma: f64, p: &DMatrix<f64>) -> bool {
    if !is_positive_definite(p) {
        return false;
    }
    let g2 = gamma * gamma;
    mats.iter().all(|m| {
        let lhs = sym(&(m.transpose() * p * m - p * g2));
        lhs.symmetric_eigen().eigenvalues.max() < 0.0
    })
}

/// Searches for one symmetric positive-definite `P` satisfying
/// `Mᵀ P M - γ² P ≺ 0` for every matrix, by alternating projections
/// between the positive-definite cone and the violated spectral
/// half-spaces of each inequality. Every returned certificate has passed
/// [`clf_post_check`]; running out of budget reports infeasible.
pub fn find_clf(mats: &[DMatrix<f64>], gamma: f64) -> Result<ClfOutcome> {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    if mats.is_empty() {
        return Err(Error::Dimension("no subsequence matrices given".into()));
    }
    let dim = mats[0].nrows();
    for m in mats {
        if m.nrows() != m.ncols() || m.nrows() != dim {
            return Err(Error::Dimension(
                "subsequence matrices must be square and share one dimension".into(),
            ));
        }
    }
    // Necessary condition: the quadratic form contracts only if every
    // subsequence matrix is gamma-stable.
    if mats.iter().any(|m| spectral_radius(m) >= gamma) {
        return Ok(ClfOutcome::Infeasible(InfeasibleReason::SpectralRadius));
    }

    let g2 = gamma * gamma;
    let n = dim as f64;
    let mut p: DMatrix<f64> = DMatrix::identity(dim, dim);

    for _ in 0..CLF_ITERATION_BUDGET {
        // project onto the positive-definite cone (with margin), then
        // renormalise; the constraints are homogeneous in P
        p = sym(&p);
        let mut eig = p.clone().symmetric_eigen();
        let floor = 1e-6;
        for ev in eig.eigenvalues.iter_mut() {
            if *ev < floor {
                *ev = floor;
            }
        }
        p = eig.recompose();
        p *= n / p.trace();

        let margin = 1e-6 * p.trace() / n;
        let mut satisfied = true;
        for m in mats {
            // E = γ²P - MᵀPM must stay ⪰ margin·I
            let e = sym(&(&p * g2 - m.transpose() * &p * m));
            let eig_e = e.symmetric_eigen();
            let mut deficiency = DMatrix::zeros(dim, dim);
            let mut any = false;
            for (j, &lam) in eig_e.eigenvalues.iter().enumerate() {
                if lam < margin {
                    any = true;
                    let v = eig_e.eigenvectors.column(j);
                    deficiency += (margin - lam) * (v * v.transpose());
                }
            }
            if !any {
                continue;
            }
            satisfied = false;
            // Half-space correction along the adjoint direction
            // G = γ²D - M D Mᵀ, stepped so the deficient eigendirections
            // reach the margin at first order.
            let g = sym(&(&deficiency * g2 - m * &deficiency * m.transpose()));
            let gnorm2 = g.dot(&g);
            if gnorm2 <= f64::MIN_POSITIVE {
                // deficiency sits in the kernel of the adjoint: stuck
                return Ok(ClfOutcome::Infeasible(InfeasibleReason::BudgetExhausted));
            }
            let t = deficiency.dot(&deficiency) / gnorm2;
            p += g * t;
        }

        if satisfied {
            let candidate = sym(&p);
            if clf_post_check(mats, gamma, &candidate) {
                return Ok(ClfOutcome::Feasible(Clf {
                    p: candidate,
                    gamma,
                }));
            }
        }
    }
    Ok(ClfOutcome::Infeasible(InfeasibleReason::BudgetExhausted))
}

/// Largest number of consecutive skips for which a common certificate over
/// the subsequences `{1, 10, 100, ...}` still exists, searched
/// incrementally up to subsequence length `i_max`.
pub fn skip_limit(plant: &PlantModel, gamma: f64, i_max: usize) -> Result<u32> {
    assert!(i_max >= 1);
    let subseqs = subsequence_dynamics(plant, i_max);
    let mats: Vec<DMatrix<f64>> = subseqs.into_iter().map(|s| s.matrix).collect();

    if !find_clf(&mats[..1], gamma)?.is_feasible() {
        return Err(Error::UnstableBaseline { gamma });
    }
    let mut feasible_len = 1usize;
    for len in 2..=i_max {
        if find_clf(&mats[..len], gamma)?.is_feasible() {
            feasible_len = len;
        } else {
            break;
        }
    }
    Ok((feasible_len - 1) as u32)
}

/// Checks the exponential envelope `‖X[k]‖ ≤ M γ^k ‖X[0]‖` at every index.
pub fn verify_gues(trajectory: &[AugmentedState], m: f64, gamma: f64) -> bool {
    assert!(!trajectory.is_empty(), "trajectory must be non-empty");
    let x0 = trajectory[0].norm();
    trajectory.iter().enumerate().all(|(k, x)| {
        let bound = m * gamma.powi(k as i32) * x0;
        x.norm() <= bound * (1.0 + 1e-9)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_plant(a: f64, b: f64, c: f64, k: f64, l: f64) -> PlantModel {
        PlantModel::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
            DMatrix::from_row_slice(1, 1, &[c]),
            DMatrix::from_row_slice(1, 1, &[k]),
            DMatrix::from_row_slice(1, 1, &[l]),
        )
        .unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let p = scalar_plant(1.0, 1.0, 1.0, -0.5, 0.5);
        let x = DVector::zeros(2);
        assert_eq!(step(&p, &x, true), x);
        assert_eq!(step(&p, &x, false), x);
    }

    #[test]
    fn skipped_step_holds_the_estimate() {
        let p = scalar_plant(0.9, 1.0, 1.0, -0.4, 0.4);
        let x = DVector::from_vec(vec![2.0, 3.0]);
        let next = step(&p, &x, false);
        assert_relative_eq!(next[1], 3.0);
    }

    #[test]
    fn executed_scalar_step_matches_hand_multiply() {
        // A1 = [[1, -0.5], [0.5, 1 - 0.5 + (-0.5)]] = [[1, -0.5], [0.5, 0]]
        let p = scalar_plant(1.0, 1.0, 1.0, -0.5, 0.5);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let next = step(&p, &x, true);
        assert_relative_eq!(next[0], 0.5);
        assert_relative_eq!(next[1], 0.5);
    }

    #[test]
    fn css_fold_matches_subsequence_products() {
        let plant = scalar_plant(0.9, 1.0, 1.0, -0.4, 0.4);
        let css = Css::parse("1101001").unwrap();
        assert_eq!(css.subsequence_lengths(), vec![1, 2, 3, 1]);
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let traj = simulate_css(&plant, &css, &x0);
        assert_eq!(traj.len(), 8);

        let sub = subsequence_dynamics(&plant, 3);
        // time order 1, 10, 100, 1 applied left to right
        let product = &sub[0].matrix * &sub[2].matrix * &sub[1].matrix * &sub[0].matrix;
        let expect = product * &x0;
        assert_relative_eq!(traj[7].norm(), expect.norm(), max_relative = 1e-9);
        assert_relative_eq!((&traj[7] - expect).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn all_ones_css_equals_matrix_power() {
        let plant = scalar_plant(0.9, 1.0, 1.0, -0.4, 0.4);
        let css = Css::parse("11111").unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let traj = simulate_css(&plant, &css, &x0);
        let a1 = plant.a1();
        let mut pow = DMatrix::identity(2, 2);
        for _ in 0..5 {
            pow = &a1 * pow;
        }
        assert_relative_eq!((pow * x0 - &traj[5]).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn css_must_start_executed() {
        assert!(Css::parse("011").is_err());
        assert!(Css::parse("").is_err());
        assert_eq!(Css::parse("1001").unwrap().max_skip_run(), 2);
    }

    #[test]
    fn contractive_single_matrix_is_feasible() {
        let m = DMatrix::identity(2, 2) * 0.5;
        let out = find_clf(&[m.clone()], 0.9).unwrap();
        let clf = out.clf().expect("0.5 I is certifiable at gamma 0.9");
        assert!(clf_post_check(&[m], 0.9, &clf.p));
    }

    #[test]
    fn spectral_radius_violation_is_infeasible() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let out = find_clf(&[m], 0.9).unwrap();
        assert_eq!(
            out,
            ClfOutcome::Infeasible(InfeasibleReason::SpectralRadius)
        );
    }

    #[test]
    fn returned_certificates_always_pass_the_post_check() {
        // a handful of random-ish stable systems
        let cases = [
            vec![DMatrix::from_row_slice(2, 2, &[0.4, 0.2, -0.1, 0.3])],
            vec![
                DMatrix::from_row_slice(2, 2, &[0.4, 0.2, -0.1, 0.3]),
                DMatrix::from_row_slice(2, 2, &[0.1, -0.3, 0.2, 0.5]),
            ],
            vec![DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.0, 0.4, 0.1, 0.0, 0.0, 0.6])],
        ];
        for mats in cases {
            if let ClfOutcome::Feasible(clf) = find_clf(&mats, 0.95).unwrap() {
                assert!(clf_post_check(&mats, 0.95, &clf.p));
            }
        }
    }

    #[test]
    fn unstable_baseline_reported() {
        // no control authority and an unstable plant: A1 itself violates γ
        let plant = scalar_plant(1.1, 0.0, 1.0, 0.0, 0.0);
        let err = skip_limit(&plant, 0.95, 3).unwrap_err();
        assert!(matches!(err, Error::UnstableBaseline { .. }));
    }

    #[test]
    fn skip_limit_monotone_in_gamma() {
        let plant = scalar_plant(0.9, 1.0, 1.0, -0.4, 0.4);
        let tight = skip_limit(&plant, 0.80, 6).unwrap();
        let loose = skip_limit(&plant, 0.97, 6).unwrap();
        assert!(tight <= loose, "tighter decay allowed more skips");
    }

    #[test]
    fn gues_holds_on_certified_boundaries() {
        let plant = scalar_plant(0.9, 1.0, 1.0, -0.4, 0.4);
        let limit = skip_limit(&plant, 0.95, 4).unwrap();
        assert!(limit >= 1, "test plant should tolerate at least one skip");
        let mats: Vec<DMatrix<f64>> = subsequence_dynamics(&plant, (limit + 1) as usize)
            .into_iter()
            .map(|s| s.matrix)
            .collect();
        let clf = find_clf(&mats, 0.95).unwrap().clf().unwrap();

        let css = Css::parse("1011010").unwrap();
        assert!(css.respects_skip_limit(limit));
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let traj = simulate_css(&plant, &css, &x0);
        let samples = boundary_samples(&traj, &css);
        assert!(verify_gues(&samples, clf.gues_constant(), 0.95));
    }

    #[test]
    fn zero_trajectory_passes_any_envelope() {
        let traj = vec![DVector::zeros(2); 5];
        assert!(verify_gues(&traj, 0.001, 0.5));
    }

    #[test]
    fn diverging_trajectory_fails() {
        // all-skip dynamics on an unstable plant blow up past any envelope
        let plant = scalar_plant(1.3, 0.0, 1.0, 0.0, 0.0);
        let css = Css::from_bits(std::iter::once(true).chain([false; 30]).collect()).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = simulate_css(&plant, &css, &x0);
        assert!(!verify_gues(&traj, 100.0, 0.99));
    }
}
