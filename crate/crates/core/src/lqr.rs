//! LQR synthesis for subsystems and composites, and the checks that decide
//! whether composing subsystem LQR gains reproduces the composite LQR gain.
//!
//! Gains follow `u = F x` throughout, so a synthesized gain is
//! `F = -R⁻¹BᵀP`.
//!
//! Three checks are provided:
//!
//! * [`check_equivalence`]: exact test `P̄K = K𝒫` (needs the composite ARE).
//! * [`check_necessary`]: necessary condition, `P̄KKᵀ` symmetric PSD.
//!   Failure means not compositional; success is inconclusive.
//! * [`check_sufficient`]: sufficient condition through controllability of
//!   `(ĀKKᵀ, B̄ΣΛ^{-1/2})` and observability of `(ĀKKᵀ, Δ)` with
//!   `ΔᵀΔ = K𝒬Kᵀ`. Success means compositional; failure is inconclusive.
//!   When states are shared, every vector in `ker Kᵀ` is an unobservable
//!   zero mode of `(ĀKKᵀ, Δ)`, so this test can only succeed for `k = 0`.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matkit::{self, block_diag, Definiteness, RankTest, PSD_TOL};
use crate::riccati::{self, RiccatiSolution};
use crate::rsm::{
    self, CompositeCost, CompositeSystem, CompositionPattern, CostWeights, LinearSystem,
};
use crate::sim::{self, GapResult};
use crate::Matrix;

/// Default relative tolerance on `‖P̄K - K𝒫‖_∞`.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LqrDesign {
    pub riccati: RiccatiSolution,
    /// `F = -R⁻¹BᵀP`
    pub gain: Matrix,
    /// `(A, Q^{1/2})` detectability; when false the stabilizing solution was
    /// still computed but need not be the unique PSD one.
    pub detectable: bool,
}

impl LqrDesign {
    pub fn p(&self) -> &Matrix {
        &self.riccati.p
    }
}

fn synthesize(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<LqrDesign> {
    let riccati = riccati::solve_care(a, b, q, r)?;
    let r_inv = riccati::invert(r)?;
    let gain = -(r_inv * b.transpose() * &riccati.p);
    let q_root = matkit::psd_sqrt_factor(q, PSD_TOL)?;
    let detectable = matkit::is_detectable(a, &q_root)?;
    Ok(LqrDesign {
        riccati,
        gain,
        detectable,
    })
}

pub fn lqr_subsystem(sys: &LinearSystem, w: &CostWeights) -> Result<LqrDesign> {
    synthesize(&sys.a, &sys.b, &w.q, &w.r)
}

pub fn lqr_composite(sys: &CompositeSystem, cost: &CompositeCost) -> Result<LqrDesign> {
    synthesize(&sys.acal, &sys.bcal, &cost.qcal, &cost.rbar)
}

#[derive(Debug, Clone)]
pub struct EquivalenceCheck {
    pub pbar_k: Matrix,
    pub k_pcal: Matrix,
    /// `‖P̄K - K𝒫‖_∞`
    pub deviation: f64,
    /// `deviation / (1 + max(‖P̄K‖_∞, ‖K𝒫‖_∞))`
    pub relative_deviation: f64,
    pub equivalent: bool,
    /// Estimated numerical error in `deviation` from the Riccati solves.
    pub resolution: f64,
    /// False when `resolution` is too coarse to decide `equivalent` at the
    /// tolerance used.
    pub resolved: bool,
}

impl EquivalenceCheck {
    /// Records the numerical resolution of the deviation and whether the
    /// verdict at `tol` survives it.
    pub fn with_resolution(mut self, resolution: f64, tol: f64) -> Self {
        let scale = 1.0 + matkit::inf_norm(&self.pbar_k).max(matkit::inf_norm(&self.k_pcal));
        self.resolution = resolution;
        self.resolved = resolution <= tol * scale || self.deviation > tol * scale + resolution;
        self
    }
}

pub fn check_equivalence(pbar: &Matrix, k: &Matrix, pcal: &Matrix, tol: f64) -> Result<EquivalenceCheck> {
    if pbar.shape() != (k.nrows(), k.nrows()) || pcal.shape() != (k.ncols(), k.ncols()) {
        return Err(Error::DimensionMismatch(format!(
            "P̄ {}x{}, K {}x{}, 𝒫 {}x{}",
            pbar.nrows(),
            pbar.ncols(),
            k.nrows(),
            k.ncols(),
            pcal.nrows(),
            pcal.ncols()
        )));
    }
    let pbar_k = pbar * k;
    let k_pcal = k * pcal;
    let deviation = matkit::inf_norm(&(&pbar_k - &k_pcal));
    let scale = 1.0 + matkit::inf_norm(&pbar_k).max(matkit::inf_norm(&k_pcal));
    let relative_deviation = deviation / scale;
    Ok(EquivalenceCheck {
        pbar_k,
        k_pcal,
        deviation,
        relative_deviation,
        equivalent: relative_deviation <= tol,
        resolution: 0.0,
        resolved: true,
    })
}

#[derive(Debug, Clone)]
pub struct NecessaryCheck {
    /// `P̄KKᵀ`
    pub product: Matrix,
    pub definiteness: Definiteness,
}

impl NecessaryCheck {
    /// False means the composition cannot be compositional.
    pub fn holds(&self) -> bool {
        self.definiteness.symmetric && self.definiteness.psd
    }
}

pub fn check_necessary(pbar: &Matrix, k: &Matrix, tol: f64) -> Result<NecessaryCheck> {
    if pbar.shape() != (k.nrows(), k.nrows()) {
        return Err(Error::DimensionMismatch(format!(
            "P̄ is {}x{} but K has {} rows",
            pbar.nrows(),
            pbar.ncols(),
            k.nrows()
        )));
    }
    let product = pbar * k * k.transpose();
    let definiteness = matkit::definiteness(&product, tol)?;
    Ok(NecessaryCheck {
        product,
        definiteness,
    })
}

#[derive(Debug, Clone)]
pub struct SufficientCheck {
    pub hypothesis_ok: bool,
    /// `(ĀKKᵀ, B̄ΣΛ^{-1/2})`
    pub controllable: RankTest,
    /// `(ĀKKᵀ, Δ)`, `ΔᵀΔ = K𝒬Kᵀ`
    pub observable: RankTest,
    pub predicts_compositional: bool,
}

pub fn check_sufficient(
    abar: &Matrix,
    bbar: &Matrix,
    k: &Matrix,
    qcal: &Matrix,
    rbar: &Matrix,
    pbar: &Matrix,
    tol: f64,
) -> Result<SufficientCheck> {
    let big = matkit::ensure_square(abar)?;
    if k.nrows() != big
        || bbar.nrows() != big
        || pbar.shape() != (big, big)
        || qcal.shape() != (k.ncols(), k.ncols())
        || rbar.shape() != (bbar.ncols(), bbar.ncols())
    {
        return Err(Error::DimensionMismatch(
            "inconsistent shapes for the sufficient-condition check".into(),
        ));
    }
    let cor1 = check_necessary(pbar, k, tol)?;
    let hypothesis_ok = cor1.holds();

    let rdef = matkit::definiteness(rbar, matkit::SYM_TOL)?;
    if !rdef.pd {
        return Err(Error::RNotPd {
            min_eig: rdef.min_eigenvalue,
        });
    }
    let eig = matkit::sym_eig(rbar)?;
    let inv_sqrt = Matrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let input = bbar * &eig.eigenvectors * inv_sqrt;

    let kkt = k * k.transpose();
    let system = abar * &kkt;
    let delta = matkit::psd_sqrt_factor(&(k * qcal * k.transpose()), PSD_TOL)?;

    let controllable = matkit::is_controllable(&system, &input, None)?;
    let observable = matkit::is_observable(&system, &delta, None)?;
    Ok(SufficientCheck {
        hypothesis_ok,
        predicts_compositional: hypothesis_ok && controllable.full_rank && observable.full_rank,
        controllable,
        observable,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainComparison {
    /// `‖ℱ̂ - ℱ‖_∞`
    pub deviation: f64,
    pub relative_deviation: f64,
    pub equivalent: bool,
}

/// Compares a directly designed composite gain with a composed one.
pub fn compare_gains(direct: &Matrix, composed: &Matrix, tol: f64) -> Result<GainComparison> {
    if direct.shape() != composed.shape() {
        return Err(Error::ShapeMismatch(format!(
            "gains are {}x{} and {}x{}",
            direct.nrows(),
            direct.ncols(),
            composed.nrows(),
            composed.ncols()
        )));
    }
    let deviation = matkit::inf_norm(&(direct - composed));
    let scale = 1.0 + matkit::inf_norm(direct).max(matkit::inf_norm(composed));
    let relative_deviation = deviation / scale;
    Ok(GainComparison {
        deviation,
        relative_deviation,
        equivalent: relative_deviation <= tol,
    })
}

/// Two subsystems, their weights and how they are glued.
#[derive(Debug, Clone)]
pub struct Instance {
    pub s1: LinearSystem,
    pub w1: CostWeights,
    pub s2: LinearSystem,
    pub w2: CostWeights,
    pub pattern: CompositionPattern,
}

#[derive(Debug, Clone)]
pub struct CompositionalityReport {
    pub equivalence: EquivalenceCheck,
    pub necessary: NecessaryCheck,
    pub sufficient: SufficientCheck,
    /// `ℱ̂ = -R̄⁻¹ℬᵀ𝒫`
    pub gain_direct: Matrix,
    /// `ℱ = F̄K`
    pub gain_composed: Matrix,
    pub gains: GainComparison,
    pub gare_residual_pbar_k: f64,
    pub gare_residual_k_pcal: f64,
    pub optimality_gap: Option<GapResult>,
    /// Violated implications between the checks. Non-empty means a numerical
    /// or theoretical inconsistency that must not be ignored.
    pub inconsistencies: Vec<String>,
    pub warnings: Vec<String>,
}

impl CompositionalityReport {
    pub fn compositional(&self) -> bool {
        self.equivalence.equivalent
    }

    pub fn verdict(&self) -> Verdict {
        if !self.equivalence.resolved {
            Verdict::Inconclusive
        } else if self.equivalence.equivalent {
            Verdict::Compositional
        } else {
            Verdict::NotCompositional
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.inconsistencies.is_empty()
    }
}

/// Everything computed for one instance.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub composite: CompositeSystem,
    pub cost: CompositeCost,
    pub design1: LqrDesign,
    pub design2: LqrDesign,
    pub direct: LqrDesign,
    pub pbar: Matrix,
    pub report: CompositionalityReport,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub tol: f64,
    /// Initial state for the optimality gap; skipped when `None`.
    pub x0: Option<DVector<f64>>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            x0: None,
        }
    }
}

/// Composes, synthesizes both ways and runs every check.
pub fn analyze(inst: &Instance, opts: &AnalysisOptions) -> Result<Analysis> {
    let composite = rsm::compose_open_loop(&inst.s1, &inst.s2, &inst.pattern)?;
    let cost = rsm::compose_cost(&inst.w1, &inst.w2, &composite.kmat)?;
    let design1 = lqr_subsystem(&inst.s1, &inst.w1)?;
    let design2 = lqr_subsystem(&inst.s2, &inst.w2)?;
    let direct = lqr_composite(&composite, &cost)?;
    let pbar = block_diag(design1.p(), design2.p());
    let k = composite.k();

    // ‖·‖_∞ ≤ √n ‖·‖_F, and ‖K‖_∞ = 1
    let err = |d: &LqrDesign| (d.p().nrows() as f64).sqrt() * d.riccati.error_estimate;
    let resolution = err(&design1) + err(&design2) + err(&direct);
    let equivalence = check_equivalence(&pbar, k, direct.p(), opts.tol)?.with_resolution(resolution, opts.tol);
    let necessary = check_necessary(&pbar, k, opts.tol)?;
    let sufficient = check_sufficient(
        &composite.abar,
        &composite.bbar,
        k,
        &cost.qcal,
        &cost.rbar,
        &pbar,
        opts.tol,
    )?;
    let gain_composed = rsm::compose_gains(&design1.gain, &design2.gain, &composite.kmat)?;
    let gain_direct = direct.gain.clone();
    let gains = compare_gains(&gain_direct, &gain_composed, opts.tol)?;

    let gare = |x: &Matrix| {
        riccati::gare_residual(
            &composite.abar,
            &composite.bbar,
            k,
            &cost.qcal,
            &cost.rbar,
            x,
        )
        .map(|(_, n)| n)
    };
    let gare_residual_pbar_k = gare(&equivalence.pbar_k)?;
    let gare_residual_k_pcal = gare(&equivalence.k_pcal)?;

    let optimality_gap = match &opts.x0 {
        Some(x0) => Some(sim::optimality_gap(
            &composite,
            &cost,
            &gain_composed,
            &gain_direct,
            x0,
        )?),
        None => None,
    };

    let mut inconsistencies = Vec::new();
    if sufficient.predicts_compositional && !equivalence.equivalent && equivalence.resolved {
        inconsistencies.push(format!(
            "sufficient condition holds but P̄K != K𝒫 (relative deviation {:e})",
            equivalence.relative_deviation
        ));
    }
    if equivalence.equivalent && equivalence.resolved && !necessary.holds() {
        inconsistencies.push(format!(
            "P̄K = K𝒫 but P̄KKᵀ is not symmetric PSD (asymmetry {:e}, min eigenvalue {:e})",
            necessary.definiteness.asymmetry, necessary.definiteness.min_eigenvalue
        ));
    }

    let mut warnings = Vec::new();
    if !equivalence.resolved {
        warnings.push(format!(
            "deviation {:e} is within the numerical resolution {:e} of the Riccati solutions; the verdict is inconclusive at tolerance {:e}",
            equivalence.deviation, equivalence.resolution, opts.tol
        ));
    }
    for (design, name) in [
        (&design1, inst.s1.name.as_str()),
        (&design2, inst.s2.name.as_str()),
        (&direct, "composite"),
    ] {
        if !design.detectable {
            warnings.push(format!(
                "{name}: (A, Q^1/2) is not detectable; the stabilizing solution may not be the unique PSD one"
            ));
        }
    }

    Ok(Analysis {
        report: CompositionalityReport {
            equivalence,
            necessary,
            sufficient,
            gain_direct,
            gain_composed,
            gains,
            gare_residual_pbar_k,
            gare_residual_k_pcal,
            optimality_gap,
            inconsistencies,
            warnings,
        },
        composite,
        cost,
        design1,
        design2,
        direct,
        pbar,
    })
}

/// Verdict from the checks that need only the subsystem Riccati solutions.
#[derive(Debug, Clone)]
pub struct SubsystemOnlyChecks {
    pub necessary: NecessaryCheck,
    pub sufficient: SufficientCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Compositional,
    NotCompositional,
    Inconclusive,
}

impl SubsystemOnlyChecks {
    pub fn verdict(&self) -> Verdict {
        if !self.necessary.holds() {
            Verdict::NotCompositional
        } else if self.sufficient.predicts_compositional {
            Verdict::Compositional
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Runs the necessary and sufficient conditions without solving the
/// composite Riccati equation.
pub fn subsystem_only_checks(inst: &Instance, tol: f64) -> Result<SubsystemOnlyChecks> {
    let composite = rsm::compose_open_loop(&inst.s1, &inst.s2, &inst.pattern)?;
    let cost = rsm::compose_cost(&inst.w1, &inst.w2, &composite.kmat)?;
    let d1 = lqr_subsystem(&inst.s1, &inst.w1)?;
    let d2 = lqr_subsystem(&inst.s2, &inst.w2)?;
    let pbar = block_diag(d1.p(), d2.p());
    let k = composite.k();
    Ok(SubsystemOnlyChecks {
        necessary: check_necessary(&pbar, k, tol)?,
        sufficient: check_sufficient(
            &composite.abar,
            &composite.bbar,
            k,
            &cost.qcal,
            &cost.rbar,
            &pbar,
            tol,
        )?,
    })
}

/// Inclusive ranges and trial budget for [`counterexample_search`].
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub n_range: (usize, usize),
    pub m_range: (usize, usize),
    pub k_range: (usize, usize),
    pub trials: usize,
    pub seed: u64,
    pub deviation_threshold: f64,
    pub tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_range: (1, 4),
            m_range: (1, 2),
            k_range: (0, 2),
            trials: 100,
            seed: 0,
            deviation_threshold: 1e-2,
            tol: DEFAULT_TOL,
        }
    }
}

impl SearchConfig {
    fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (usize, usize)| lo <= hi;
        if !ok(self.n_range) || !ok(self.m_range) || !ok(self.k_range) {
            return Err(Error::InvalidArgument("empty range in search config".into()));
        }
        if self.n_range.0 == 0 || self.m_range.0 == 0 {
            return Err(Error::InvalidArgument(
                "state and input dimensions must be at least 1".into(),
            ));
        }
        if self.deviation_threshold.is_nan() {
            return Err(Error::InvalidArgument("threshold is NaN".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn sample_system(rng: &mut ChaCha8Rng, name: &str, n: usize, m: usize) -> Result<(LinearSystem, CostWeights)> {
    let mut a = uniform(rng, n, n, -2.0, 2.0);
    let mut b = uniform(rng, n, m, -1.0, 1.0);
    while b.column_iter().any(|c| c.norm() < 1e-12) {
        b = uniform(rng, n, m, -1.0, 1.0);
    }
    if !matkit::is_stabilizable(&a, &b)? {
        let max_re = matkit::is_hurwitz(&a, 0.0)?.max_real_part;
        a -= Matrix::identity(n, n) * (max_re + 0.5);
    }
    let g = uniform(rng, n, n, -1.0, 1.0);
    let h = uniform(rng, m, m, -1.0, 1.0);
    let q = matkit::symmetrize(&(g.transpose() * g + Matrix::identity(n, n) * 0.1));
    let r = matkit::symmetrize(&(h.transpose() * h + Matrix::identity(m, m) * 0.1));
    Ok((LinearSystem::new(name, a, b)?, CostWeights::new(q, r)?))
}

/// Draws one random instance from the trial's own stream.
pub fn sample_instance(config: &SearchConfig, trial: u64) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial);
    let (nlo, nhi) = config.n_range;
    let (mlo, mhi) = config.m_range;
    let n1 = rng.random_range(nlo..=nhi);
    let n2 = rng.random_range(nlo..=nhi);
    let m1 = rng.random_range(mlo..=mhi);
    let m2 = rng.random_range(mlo..=mhi);
    let kmax = config.k_range.1.min(n1.min(n2));
    let kmin = config.k_range.0.min(kmax);
    let shared = rng.random_range(kmin..=kmax);
    let left = sample(&mut rng, n1, shared).into_vec();
    let right = sample(&mut rng, n2, shared).into_vec();
    let pattern = CompositionPattern::new(n1, n2, left.into_iter().zip(right).collect())?;
    let (s1, w1) = sample_system(&mut rng, "s1", n1, m1)?;
    let (s2, w2) = sample_system(&mut rng, "s2", n2, m2)?;
    Ok(Instance {
        s1,
        w1,
        s2,
        w2,
        pattern,
    })
}

#[derive(Debug, Clone)]
pub struct Finding {
    pub trial: u64,
    pub instance: Instance,
    pub analysis: Analysis,
}

#[derive(Debug, Clone, Default)]
pub struct SearchOutcome {
    /// Instances with deviation above the threshold, in trial order.
    pub found: Vec<Finding>,
    pub evaluated: usize,
    /// Trials where synthesis failed (typically a non-stabilizable composite).
    pub skipped: usize,
}

/// Samples random instances and keeps those where `‖P̄K - K𝒫‖_∞` exceeds
/// the threshold. Deterministic for a fixed seed regardless of thread count.
pub fn counterexample_search(config: &SearchConfig) -> Result<SearchOutcome> {
    config.validate()?;
    let results: Vec<Option<(Instance, Analysis)>> = (0..config.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let inst = sample_instance(config, trial).ok()?;
            let opts = AnalysisOptions {
                tol: config.tol,
                x0: None,
            };
            analyze(&inst, &opts).ok().map(|a| (inst, a))
        })
        .collect();

    let mut outcome = SearchOutcome::default();
    for (trial, res) in results.into_iter().enumerate() {
        match res {
            None => outcome.skipped += 1,
            Some((instance, analysis)) => {
                outcome.evaluated += 1;
                if analysis.report.equivalence.deviation > config.deviation_threshold {
                    outcome.found.push(Finding {
                        trial: trial as u64,
                        instance,
                        analysis,
                    });
                }
            }
        }
    }
    Ok(outcome)
}
