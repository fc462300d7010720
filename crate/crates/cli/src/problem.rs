//! Problem files: two subsystems with weights plus a sharing pattern.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rsmlqr_core::lqr::Instance;
use rsmlqr_core::rsm::{CompositionPattern, CostWeights, LinearSystem};
use rsmlqr_core::Matrix;

use crate::error::CliError;
use crate::report::{self, NumMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub subsystems: Vec<SubsystemRecord>,
    pub pattern: PatternRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemRecord {
    pub name: String,
    #[serde(rename = "A", serialize_with = "report::ser_rows")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B", serialize_with = "report::ser_rows")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q", serialize_with = "report::ser_rows")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R", serialize_with = "report::ser_rows")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRecord {
    /// Zero-based `[subsystem-1 index, subsystem-2 index]` identifications.
    pub pairs: Vec<[usize; 2]>,
}

/// Reads, parses and validates a problem file. Returns the raw bytes too so
/// callers can digest exactly what was read.
pub fn parse_problem(path: &Path) -> Result<(ProblemFile, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::FileNotFound(path.display().to_string()),
        _ => CliError::Io {
            path: path.display().to_string(),
            source: e,
        },
    })?;
    let problem = parse_problem_bytes(&bytes)?;
    Ok((problem, bytes))
}

pub fn parse_problem_bytes(bytes: &[u8]) -> Result<ProblemFile, CliError> {
    // Syntax first, so malformed JSON is reported as such rather than as a
    // schema mismatch.
    if let Err(e) = serde_json::from_slice::<serde::de::IgnoredAny>(bytes) {
        return Err(CliError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        });
    }
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let problem: ProblemFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Schema {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    problem.validate()?;
    Ok(problem)
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn dimension(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Dimension {
        path: path.into(),
        message: message.into(),
    }
}

/// Rows × columns of a nested array, rejecting ragged and empty input.
fn shape(rows: &[Vec<f64>], path: &str, name: &str) -> Result<(usize, usize), CliError> {
    if rows.is_empty() {
        return Err(dimension(path, format!("{name} must have at least one row")));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(dimension(format!("{path}[0]"), format!("{name} must have at least one column")));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(schema(
                format!("{path}[{i}]"),
                format!("row has {} entries but row 0 has {cols}", row.len()),
            ));
        }
    }
    Ok((rows.len(), cols))
}

impl ProblemFile {
    /// Checks counts, shapes and the pattern, reporting the first violation
    /// with its JSON path.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.subsystems.len() != 2 {
            return Err(schema(
                "subsystems",
                format!("expected exactly 2 subsystems, found {}", self.subsystems.len()),
            ));
        }
        let mut states = [0usize; 2];
        for (s, sub) in self.subsystems.iter().enumerate() {
            let base = format!("subsystems[{s}]");
            let (ar, ac) = shape(&sub.a, &format!("{base}.A"), "A")?;
            if ar != ac {
                return Err(dimension(format!("{base}.A"), format!("A must be square, got {ar}x{ac}")));
            }
            let (br, bc) = shape(&sub.b, &format!("{base}.B"), "B")?;
            if br != ar {
                return Err(dimension(
                    format!("{base}.B"),
                    format!("B must have {ar} rows to match A, got {br}"),
                ));
            }
            let (qr, qc) = shape(&sub.q, &format!("{base}.Q"), "Q")?;
            if (qr, qc) != (ar, ar) {
                return Err(dimension(format!("{base}.Q"), format!("Q must be {ar}x{ar}, got {qr}x{qc}")));
            }
            let (rr, rc) = shape(&sub.r, &format!("{base}.R"), "R")?;
            if (rr, rc) != (bc, bc) {
                return Err(dimension(format!("{base}.R"), format!("R must be {bc}x{bc}, got {rr}x{rc}")));
            }
            states[s] = ar;
        }
        let mut seen = [vec![false; states[0]], vec![false; states[1]]];
        for (p, pair) in self.pattern.pairs.iter().enumerate() {
            for side in 0..2 {
                let idx = pair[side];
                let path = format!("pattern.pairs[{p}][{side}]");
                if idx >= states[side] {
                    return Err(schema(
                        path,
                        format!(
                            "index {idx} out of range for subsystem-{} with {} states",
                            side + 1,
                            states[side]
                        ),
                    ));
                }
                if seen[side][idx] {
                    return Err(schema(path, format!("duplicate subsystem-{} index {idx}", side + 1)));
                }
                seen[side][idx] = true;
            }
        }
        Ok(())
    }

    pub fn to_instance(&self) -> Result<Instance, CliError> {
        self.validate()?;
        let mat = |rows: &Vec<Vec<f64>>| {
            Matrix::from_row_iterator(rows.len(), rows[0].len(), rows.iter().flatten().copied())
        };
        let mut parts = Vec::with_capacity(2);
        for sub in &self.subsystems {
            let sys = LinearSystem::new(sub.name.clone(), mat(&sub.a), mat(&sub.b))?;
            let w = CostWeights::new(mat(&sub.q), mat(&sub.r))?;
            parts.push((sys, w));
        }
        let (s2, w2) = parts.pop().unwrap();
        let (s1, w1) = parts.pop().unwrap();
        let pattern = CompositionPattern::new(
            s1.states(),
            s2.states(),
            self.pattern.pairs.iter().map(|p| (p[0], p[1])).collect(),
        )?;
        Ok(Instance {
            s1,
            w1,
            s2,
            w2,
            pattern,
        })
    }

    pub fn from_instance(inst: &Instance) -> Self {
        let rows = |m: &Matrix| NumMatrix::from(m).0;
        let record = |s: &LinearSystem, w: &CostWeights| SubsystemRecord {
            name: s.name.clone(),
            a: rows(&s.a),
            b: rows(&s.b),
            q: rows(&w.q),
            r: rows(&w.r),
        };
        ProblemFile {
            subsystems: vec![record(&inst.s1, &inst.w1), record(&inst.s2, &inst.w2)],
            pattern: PatternRecord {
                pairs: inst.pattern.pairs().iter().map(|&(j, k)| [j, k]).collect(),
            },
        }
    }

    /// Pretty JSON with every number at 17 significant digits.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }
}
