//! JSON report sections. Every float is written with 17 significant digits so
//! reports round-trip exactly and are byte-stable; non-finite values become
//! `null`.

use serde::ser::{SerializeSeq, Serializer};
use serde::Serialize;
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use rsmlqr_core::lqr::{
    CompositionalityReport, NecessaryCheck, GainComparison, LqrDesign, SubsystemOnlyChecks, EquivalenceCheck,
    SufficientCheck, Verdict,
};
use rsmlqr_core::matkit::{RankTest, PSD_TOL, SYM_TOL};
use rsmlqr_core::rsm::{CompositeCost, CompositeSystem, StateOrigin};
use rsmlqr_core::sim::GapResult;
use rsmlqr_core::{DVector, Matrix};

pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            RawValue::from_string(format_f64(self.0))
                .map_err(serde::ser::Error::custom)?
                .serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

pub fn ser_rows<S: Serializer>(rows: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(rows.len()))?;
    for row in rows {
        seq.serialize_element(&row.iter().map(|&x| Num(x)).collect::<Vec<_>>())?;
    }
    seq.end()
}

/// Row-major nested arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct NumMatrix(pub Vec<Vec<f64>>);

impl From<&Matrix> for NumMatrix {
    fn from(m: &Matrix) -> Self {
        NumMatrix(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

impl Serialize for NumMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ser_rows(&self.0, s)
    }
}

fn vector(v: &DVector<f64>) -> Vec<Num> {
    v.iter().map(|&x| Num(x)).collect()
}

pub fn digest(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

pub fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Compositional => "compositional",
        Verdict::NotCompositional => "not_compositional",
        Verdict::Inconclusive => "inconclusive",
    }
}

#[derive(Serialize)]
pub struct CompositeSection {
    pub n1: usize,
    pub n2: usize,
    pub shared: usize,
    pub states: usize,
    pub inputs: usize,
    pub pairs: Vec<[usize; 2]>,
    /// Origin of each composite state, e.g. `s1[1]=s2[0]`.
    pub states_from: Vec<String>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<u8>>,
    #[serde(rename = "A")]
    pub a: NumMatrix,
    #[serde(rename = "B")]
    pub b: NumMatrix,
    #[serde(rename = "Q")]
    pub q: NumMatrix,
    #[serde(rename = "R")]
    pub r: NumMatrix,
}

impl CompositeSection {
    pub fn new(sys: &CompositeSystem, cost: &CompositeCost, names: [&str; 2]) -> Self {
        let states_from = sys
            .kmat
            .index_map
            .iter()
            .map(|o| match *o {
                StateOrigin::First(j) => format!("{}[{j}]", names[0]),
                StateOrigin::Second(k) => format!("{}[{k}]", names[1]),
                StateOrigin::Shared { first, second } => {
                    format!("{}[{first}]={}[{second}]", names[0], names[1])
                }
            })
            .collect();
        let pairs = sys
            .kmat
            .index_map
            .iter()
            .filter_map(|o| match *o {
                StateOrigin::Shared { first, second } => Some([first, second]),
                _ => None,
            })
            .collect();
        CompositeSection {
            n1: sys.dims.n1,
            n2: sys.dims.n2,
            shared: sys.dims.shared,
            states: sys.dims.states(),
            inputs: sys.dims.inputs(),
            pairs,
            states_from,
            k: sys.kmat.to_integer_rows(),
            a: (&sys.acal).into(),
            b: (&sys.bcal).into(),
            q: (&cost.qcal).into(),
            r: (&cost.rbar).into(),
        }
    }
}

#[derive(Serialize)]
pub struct DesignSection {
    #[serde(rename = "P")]
    pub p: NumMatrix,
    #[serde(rename = "F")]
    pub f: NumMatrix,
    pub residual_norm: Num,
    pub error_estimate: Num,
    pub newton_sweeps: usize,
    pub closed_loop_max_re: Num,
    pub detectable: bool,
}

impl From<&LqrDesign> for DesignSection {
    fn from(d: &LqrDesign) -> Self {
        DesignSection {
            p: d.p().into(),
            f: (&d.gain).into(),
            residual_norm: Num(d.riccati.residual_norm),
            error_estimate: Num(d.riccati.error_estimate),
            newton_sweeps: d.riccati.newton_sweeps,
            closed_loop_max_re: Num(d.riccati.closed_loop_max_re),
            detectable: d.detectable,
        }
    }
}

#[derive(Serialize)]
pub struct NamedDesign {
    pub name: String,
    #[serde(flatten)]
    pub design: DesignSection,
}

#[derive(Serialize)]
pub struct ComposedSection {
    pub subsystems: Vec<NamedDesign>,
    /// `blockdiag(P¹, P²)`
    #[serde(rename = "P_bar")]
    pub p_bar: NumMatrix,
    /// Subsystem gains lifted to the composite state, `F̄K`.
    #[serde(rename = "F")]
    pub f: NumMatrix,
}

#[derive(Serialize)]
pub struct EquivalenceSection {
    /// `‖P̄K - K𝒫‖_∞`
    pub deviation: Num,
    pub relative_deviation: Num,
    pub resolution: Num,
    pub equivalent: bool,
    pub resolved: bool,
}

impl From<&EquivalenceCheck> for EquivalenceSection {
    fn from(t: &EquivalenceCheck) -> Self {
        EquivalenceSection {
            deviation: Num(t.deviation),
            relative_deviation: Num(t.relative_deviation),
            resolution: Num(t.resolution),
            equivalent: t.equivalent,
            resolved: t.resolved,
        }
    }
}

#[derive(Serialize)]
pub struct NecessarySection {
    /// `P̄KKᵀ` is symmetric and positive semidefinite.
    pub holds: bool,
    pub symmetric: bool,
    pub psd: bool,
    pub asymmetry: Num,
    pub min_eigenvalue: Num,
}

impl From<&NecessaryCheck> for NecessarySection {
    fn from(c: &NecessaryCheck) -> Self {
        NecessarySection {
            holds: c.holds(),
            symmetric: c.definiteness.symmetric,
            psd: c.definiteness.psd,
            asymmetry: Num(c.definiteness.asymmetry),
            min_eigenvalue: Num(c.definiteness.min_eigenvalue),
        }
    }
}

#[derive(Serialize)]
pub struct RankSection {
    pub rank: usize,
    pub dim: usize,
    pub full_rank: bool,
}

impl From<&RankTest> for RankSection {
    fn from(r: &RankTest) -> Self {
        RankSection {
            rank: r.rank,
            dim: r.dim,
            full_rank: r.full_rank,
        }
    }
}

#[derive(Serialize)]
pub struct SufficientSection {
    pub predicts_compositional: bool,
    /// `P̄KKᵀ` symmetric, so the constructed Riccati equation applies.
    pub hypothesis_ok: bool,
    pub controllable: RankSection,
    pub observable: RankSection,
}

impl From<&SufficientCheck> for SufficientSection {
    fn from(t: &SufficientCheck) -> Self {
        SufficientSection {
            predicts_compositional: t.predicts_compositional,
            hypothesis_ok: t.hypothesis_ok,
            controllable: (&t.controllable).into(),
            observable: (&t.observable).into(),
        }
    }
}

#[derive(Serialize)]
pub struct GainSection {
    /// `‖ℱ̂ - F̄K‖_∞`
    pub deviation: Num,
    pub relative_deviation: Num,
    pub equivalent: bool,
}

impl From<&GainComparison> for GainSection {
    fn from(g: &GainComparison) -> Self {
        GainSection {
            deviation: Num(g.deviation),
            relative_deviation: Num(g.relative_deviation),
            equivalent: g.equivalent,
        }
    }
}

#[derive(Serialize)]
pub struct GareSection {
    pub pbar_k: Num,
    pub k_pcal: Num,
}

#[derive(Serialize)]
pub struct ChecksSection {
    pub verdict: &'static str,
    pub equivalence: Option<EquivalenceSection>,
    pub necessary: NecessarySection,
    pub sufficient: SufficientSection,
    pub gains: Option<GainSection>,
    pub gare_residual: Option<GareSection>,
    pub inconsistencies: Vec<String>,
    pub warnings: Vec<String>,
}

impl From<&CompositionalityReport> for ChecksSection {
    fn from(r: &CompositionalityReport) -> Self {
        ChecksSection {
            verdict: verdict_name(r.verdict()),
            equivalence: Some((&r.equivalence).into()),
            necessary: (&r.necessary).into(),
            sufficient: (&r.sufficient).into(),
            gains: Some((&r.gains).into()),
            gare_residual: Some(GareSection {
                pbar_k: Num(r.gare_residual_pbar_k),
                k_pcal: Num(r.gare_residual_k_pcal),
            }),
            inconsistencies: r.inconsistencies.clone(),
            warnings: r.warnings.clone(),
        }
    }
}

impl From<&SubsystemOnlyChecks> for ChecksSection {
    fn from(c: &SubsystemOnlyChecks) -> Self {
        ChecksSection {
            verdict: verdict_name(c.verdict()),
            equivalence: None,
            necessary: (&c.necessary).into(),
            sufficient: (&c.sufficient).into(),
            gains: None,
            gare_residual: None,
            inconsistencies: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Serialize)]
pub struct GapSection {
    pub x0: Vec<Num>,
    /// `null` when the composed loop is unstable (infinite cost).
    pub j_composed: Num,
    pub j_direct: Num,
    pub gap: Option<Num>,
    pub composed_stable: bool,
    pub direct_stable: bool,
}

impl GapSection {
    pub fn new(x0: &DVector<f64>, g: &GapResult) -> Self {
        GapSection {
            x0: vector(x0),
            j_composed: Num(g.j_composed.value),
            j_direct: Num(g.j_direct.value),
            gap: g.gap.map(Num),
            composed_stable: g.j_composed.stable,
            direct_stable: g.j_direct.stable,
        }
    }
}

#[derive(Serialize)]
pub struct Tolerances {
    pub equivalence: Num,
    pub symmetry: Num,
    pub psd: Num,
}

#[derive(Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub tolerances: Tolerances,
    /// Wall-clock seconds per stage; only with `--timings`, since timings
    /// would break byte-identical reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<StageTiming>>,
}

#[derive(Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: Num,
}

impl Meta {
    pub fn new(tol: f64) -> Self {
        Meta {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            tolerances: Tolerances {
                equivalence: Num(tol),
                symmetry: Num(SYM_TOL),
                psd: Num(PSD_TOL),
            },
            timings: None,
        }
    }
}

#[derive(Serialize)]
pub struct Report {
    pub input_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composite: Option<CompositeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lqr_direct: Option<DesignSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lqr_composed: Option<ComposedSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checks: Option<ChecksSection>,
    /// Always present in check reports; `null` unless requested.
    #[serde(skip_serializing_if = "GapField::is_omitted")]
    pub gap: GapField,
    pub meta: Meta,
}

/// Distinguishes "not part of this output" from an explicit `null`.
pub enum GapField {
    Omitted,
    NotRequested,
    Computed(GapSection),
}

impl GapField {
    fn is_omitted(&self) -> bool {
        matches!(self, GapField::Omitted)
    }
}

impl Serialize for GapField {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GapField::Computed(g) => g.serialize(s),
            _ => s.serialize_none(),
        }
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("reports always serialize");
        text.push('\n');
        text
    }
}
