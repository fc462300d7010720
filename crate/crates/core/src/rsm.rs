//! Resource-sharing composition of two linear systems.
//!
//! Two subsystems are glued along identified states. The composition matrix
//! `K` maps a composite state `x̄` to the stacked subsystem states
//! `(x¹, x²) = K x̄`, duplicating shared entries; `Kᵀ` sums the subsystem
//! dynamics back onto the composite state.
//!
//! Composite indices are assigned by walking subsystem 1's states in order
//! (shared states take their index there), then subsystem 2's non-shared
//! states in order. All indices are zero-based.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matkit::{self, block_diag, SYM_TOL};
use crate::Matrix;

/// `ẋ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub name: String,
    pub a: Matrix,
    pub b: Matrix,
}

impl LinearSystem {
    pub fn new(name: impl Into<String>, a: Matrix, b: Matrix) -> Result<Self> {
        let name = name.into();
        let n = matkit::ensure_square(&a)?;
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{name}: A is {n}x{n} but B has {} rows",
                b.nrows()
            )));
        }
        if b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!("{name}: B has no columns")));
        }
        matkit::ensure_finite(&a, &format!("{name}.A"))?;
        matkit::ensure_finite(&b, &format!("{name}.B"))?;
        Ok(Self { name, a, b })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// Pairs `(j, k)` identifying state `j` of subsystem 1 with state `k` of
/// subsystem 2. Each state is shared at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionPattern {
    n1: usize,
    n2: usize,
    pairs: Vec<(usize, usize)>,
}

impl CompositionPattern {
    pub fn new(n1: usize, n2: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen1 = vec![false; n1];
        let mut seen2 = vec![false; n2];
        for &(j, k) in &pairs {
            if j >= n1 {
                return Err(Error::IndexOutOfRange {
                    subsystem: 1,
                    index: j,
                    dim: n1,
                });
            }
            if k >= n2 {
                return Err(Error::IndexOutOfRange {
                    subsystem: 2,
                    index: k,
                    dim: n2,
                });
            }
            if std::mem::replace(&mut seen1[j], true) {
                return Err(Error::DuplicateSharedIndex {
                    subsystem: 1,
                    index: j,
                });
            }
            if std::mem::replace(&mut seen2[k], true) {
                return Err(Error::DuplicateSharedIndex {
                    subsystem: 2,
                    index: k,
                });
            }
        }
        Ok(Self { n1, n2, pairs })
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn shared(&self) -> usize {
        self.pairs.len()
    }

    pub fn composite_dim(&self) -> usize {
        self.n1 + self.n2 - self.pairs.len()
    }
}

/// Where a composite state comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateOrigin {
    First(usize),
    Second(usize),
    Shared { first: usize, second: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    /// `(n1+n2) × (n1+n2-k)` with 0/1 entries.
    pub k: Matrix,
    pub index_map: Vec<StateOrigin>,
    pub n1: usize,
    pub n2: usize,
}

impl CompositionMatrix {
    pub fn shared(&self) -> usize {
        self.index_map
            .iter()
            .filter(|o| matches!(o, StateOrigin::Shared { .. }))
            .count()
    }

    pub fn composite_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn stacked_dim(&self) -> usize {
        self.k.nrows()
    }

    /// `K` as integers, for exact comparisons.
    pub fn to_integer_rows(&self) -> Vec<Vec<u8>> {
        self.k
            .row_iter()
            .map(|r| r.iter().map(|&x| x as u8).collect())
            .collect()
    }
}

pub fn build_composition_matrix(pattern: &CompositionPattern) -> Result<CompositionMatrix> {
    // Re-validate: the fields are private, but keep the invariant local.
    let pattern = CompositionPattern::new(pattern.n1, pattern.n2, pattern.pairs.clone())?;
    let (n1, n2) = (pattern.n1, pattern.n2);
    let partner: HashMap<usize, usize> = pattern.pairs.iter().copied().collect();
    let shared2: Vec<bool> = {
        let mut v = vec![false; n2];
        for &(_, k) in &pattern.pairs {
            v[k] = true;
        }
        v
    };

    let mut index_map = Vec::with_capacity(pattern.composite_dim());
    for j in 0..n1 {
        index_map.push(match partner.get(&j) {
            Some(&k) => StateOrigin::Shared {
                first: j,
                second: k,
            },
            None => StateOrigin::First(j),
        });
    }
    index_map.extend((0..n2).filter(|&k| !shared2[k]).map(StateOrigin::Second));

    let mut k = Matrix::zeros(n1 + n2, index_map.len());
    for (i, origin) in index_map.iter().enumerate() {
        match *origin {
            StateOrigin::First(j) => k[(j, i)] = 1.0,
            StateOrigin::Second(s) => k[(n1 + s, i)] = 1.0,
            StateOrigin::Shared { first, second } => {
                k[(first, i)] = 1.0;
                k[(n1 + second, i)] = 1.0;
            }
        }
    }
    Ok(CompositionMatrix {
        k,
        index_map,
        n1,
        n2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeDims {
    pub n1: usize,
    pub n2: usize,
    pub shared: usize,
    pub m1: usize,
    pub m2: usize,
}

impl CompositeDims {
    pub fn states(&self) -> usize {
        self.n1 + self.n2 - self.shared
    }

    pub fn inputs(&self) -> usize {
        self.m1 + self.m2
    }
}

/// Composite open-loop system `ẋ̄ = 𝒜 x̄ + ℬ u` with `𝒜 = KᵀĀK`, `ℬ = KᵀB̄`.
#[derive(Debug, Clone)]
pub struct CompositeSystem {
    pub acal: Matrix,
    pub bcal: Matrix,
    pub abar: Matrix,
    pub bbar: Matrix,
    pub kmat: CompositionMatrix,
    pub dims: CompositeDims,
}

impl CompositeSystem {
    pub fn k(&self) -> &Matrix {
        &self.kmat.k
    }
}

pub fn compose_open_loop(
    s1: &LinearSystem,
    s2: &LinearSystem,
    pattern: &CompositionPattern,
) -> Result<CompositeSystem> {
    if pattern.n1 != s1.states() || pattern.n2 != s2.states() {
        return Err(Error::DimensionMismatch(format!(
            "pattern is for {}+{} states but systems have {}+{}",
            pattern.n1,
            pattern.n2,
            s1.states(),
            s2.states()
        )));
    }
    let kmat = build_composition_matrix(pattern)?;
    let abar = block_diag(&s1.a, &s2.a);
    let bbar = block_diag(&s1.b, &s2.b);
    let kt = kmat.k.transpose();
    let acal = &kt * &abar * &kmat.k;
    let bcal = &kt * &bbar;
    Ok(CompositeSystem {
        acal,
        bcal,
        abar,
        bbar,
        dims: CompositeDims {
            n1: s1.states(),
            n2: s2.states(),
            shared: kmat.shared(),
            m1: s1.inputs(),
            m2: s2.inputs(),
        },
        kmat,
    })
}

/// LQR penalty weights: `Q` symmetric PSD on states, `R` symmetric PD on inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Matrix,
    pub r: Matrix,
}

impl CostWeights {
    pub fn new(q: Matrix, r: Matrix) -> Result<Self> {
        matkit::ensure_finite(&q, "Q")?;
        matkit::ensure_finite(&r, "R")?;
        let qd = matkit::definiteness(&q, SYM_TOL)?;
        if !qd.symmetric {
            return Err(Error::InvalidWeight {
                which: "Q".into(),
                reason: format!("not symmetric (asymmetry {:e})", qd.asymmetry),
            });
        }
        if !qd.psd {
            return Err(Error::InvalidWeight {
                which: "Q".into(),
                reason: format!("not PSD (min eigenvalue {:e})", qd.min_eigenvalue),
            });
        }
        let rd = matkit::definiteness(&r, SYM_TOL)?;
        if !rd.symmetric {
            return Err(Error::InvalidWeight {
                which: "R".into(),
                reason: format!("not symmetric (asymmetry {:e})", rd.asymmetry),
            });
        }
        if !rd.pd {
            return Err(Error::InvalidWeight {
                which: "R".into(),
                reason: format!("not PD (min eigenvalue {:e})", rd.min_eigenvalue),
            });
        }
        Ok(Self { q, r })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeCost {
    /// `𝒬 = Kᵀ blockdiag(Q¹, Q²) K`
    pub qcal: Matrix,
    /// `R̄ = blockdiag(R¹, R²)`
    pub rbar: Matrix,
}

pub fn compose_cost(
    w1: &CostWeights,
    w2: &CostWeights,
    kmat: &CompositionMatrix,
) -> Result<CompositeCost> {
    if w1.q.nrows() != kmat.n1 || w2.q.nrows() != kmat.n2 {
        return Err(Error::DimensionMismatch(format!(
            "Q weights are {}+{} but K expects {}+{}",
            w1.q.nrows(),
            w2.q.nrows(),
            kmat.n1,
            kmat.n2
        )));
    }
    let qbar = block_diag(&w1.q, &w2.q);
    let qcal = kmat.k.transpose() * qbar * &kmat.k;
    let rbar = block_diag(&w1.r, &w2.r);
    let qd = matkit::definiteness(&qcal, SYM_TOL)?;
    if !qd.psd {
        return Err(Error::InvalidWeight {
            which: "composite Q".into(),
            reason: format!("not symmetric PSD (min eigenvalue {:e})", qd.min_eigenvalue),
        });
    }
    let rd = matkit::definiteness(&rbar, SYM_TOL)?;
    if !rd.pd {
        return Err(Error::InvalidWeight {
            which: "composite R".into(),
            reason: format!("not symmetric PD (min eigenvalue {:e})", rd.min_eigenvalue),
        });
    }
    Ok(CompositeCost { qcal, rbar })
}

/// `ℱ = blockdiag(F¹, F²)·K`, gains acting as `u = F x`.
pub fn compose_gains(f1: &Matrix, f2: &Matrix, kmat: &CompositionMatrix) -> Result<Matrix> {
    if f1.ncols() != kmat.n1 || f2.ncols() != kmat.n2 {
        return Err(Error::DimensionMismatch(format!(
            "gains act on {}+{} states but K expects {}+{}",
            f1.ncols(),
            f2.ncols(),
            kmat.n1,
            kmat.n2
        )));
    }
    Ok(block_diag(f1, f2) * &kmat.k)
}

/// `𝒜 + ℬℱ`.
pub fn closed_loop_matrix(sys: &CompositeSystem, fcal: &Matrix) -> Result<Matrix> {
    if fcal.shape() != (sys.bcal.ncols(), sys.acal.ncols()) {
        return Err(Error::DimensionMismatch(format!(
            "composite gain must be {}x{}, got {}x{}",
            sys.bcal.ncols(),
            sys.acal.ncols(),
            fcal.nrows(),
            fcal.ncols()
        )));
    }
    Ok(&sys.acal + &sys.bcal * fcal)
}
