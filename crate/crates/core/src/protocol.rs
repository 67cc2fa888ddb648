//! Protocol specifications: two-matrix Markov descriptions of one user's
//! transmission strategy.
//!
//! A protocol is a finite Markov process over `S` user states with two
//! transition matrices selected by the sensing bit observed at the end of
//! each slot: `m0` applies when the channel was idle for the user (no other
//! transmission, or own ACK received) and `m1` applies when another user
//! transmitted. State indices are 1-based in all I/O; state `tx_state` is
//! the transmission state.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// Tolerance for row-stochasticity checks.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A sensing-conditioned Markov protocol for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    /// Number of user states S (at least 2).
    pub num_states: usize,
    /// 1-based index of the transmission state.
    pub tx_state: usize,
    /// Transition matrix applied when the slot was clean for the user.
    pub m0: Vec<Vec<f64>>,
    /// Transition matrix applied when another user transmitted.
    pub m1: Vec<Vec<f64>>,
}

impl ProtocolSpec {
    /// 0-based index of the transmission state.
    pub fn tx_index(&self) -> usize {
        self.tx_state - 1
    }
}

/// Parameters of the age-threshold ALOHA family: pause for `threshold`
/// slots after a collision, then contend with probability `tx_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeThresholdParams {
    /// Age threshold H in slots (at least 1).
    pub threshold: u32,
    /// ALOHA transmission probability p in (0, 1].
    pub tx_prob: f64,
}

impl AgeThresholdParams {
    pub fn new(threshold: u32, tx_prob: f64) -> Self {
        Self { threshold, tx_prob }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold < 1 {
            return Err(Error::InvalidParameter(
                "age threshold H must be at least 1".into(),
            ));
        }
        if !(self.tx_prob > 0.0 && self.tx_prob <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tx_prob must lie in (0, 1], got {}",
                self.tx_prob
            )));
        }
        Ok(())
    }
}

/// Outcome of [`validate_spec`]: empty `violations` means the spec is valid.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    /// Converts the report into a `Result`, erroring when violations exist.
    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::Validation {
                violations: self.violations,
            })
        }
    }
}

/// Checks every structural invariant of a [`ProtocolSpec`]. Violations are
/// returned, not raised, so callers can report all of them at once.
pub fn validate_spec(spec: &ProtocolSpec) -> ValidationReport {
    let mut violations = Vec::new();
    let s = spec.num_states;

    if s < 2 {
        violations.push(format!("num_states must be at least 2, got {s}"));
    }
    if spec.tx_state < 1 || spec.tx_state > s {
        violations.push(format!(
            "tx_state out of range: {} not in 1..={s}",
            spec.tx_state
        ));
    }

    for (name, m) in [("m0", &spec.m0), ("m1", &spec.m1)] {
        if m.len() != s {
            violations.push(format!("{name} has {} rows, expected {s}", m.len()));
            continue;
        }
        for (i, row) in m.iter().enumerate() {
            if row.len() != s {
                violations.push(format!(
                    "{name} row {} has {} entries, expected {s}",
                    i + 1,
                    row.len()
                ));
                continue;
            }
            let mut sum = 0.0;
            let mut row_ok = true;
            for (j, &x) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&x) {
                    violations.push(format!(
                        "{name}[{}][{}] = {x} outside [0, 1]",
                        i + 1,
                        j + 1
                    ));
                    row_ok = false;
                }
                sum += x;
            }
            if row_ok && (sum - 1.0).abs() > ROW_SUM_TOL {
                violations.push(format!(
                    "{name} row {} sums to {sum:.15} (must be 1 within {ROW_SUM_TOL:.0e})",
                    i + 1
                ));
            }
        }
    }

    ValidationReport { violations }
}

/// Builds the age-threshold ALOHA protocol for `(H, p)`.
///
/// The spec has `S = H + 2` states: state 1 transmits, state 2 idles
/// (contend with probability `p`), and states 3..=H+2 form the pausing
/// chain entered after a collision. Rows 1, 2 and H+2 of `m0` are
/// `[p, 1-p, 0, ...]`; rows 3..=H+1 shift deterministically to the next
/// pausing state; `m1` equals `m0` except row 1, which jumps to state 3.
pub fn build_age_threshold_aloha(params: &AgeThresholdParams) -> Result<ProtocolSpec> {
    params.validate()?;
    let h = params.threshold as usize;
    let p = params.tx_prob;
    let s = h + 2;

    let mut contend = vec![0.0; s];
    contend[0] = p;
    contend[1] = 1.0 - p;

    let mut m0 = Vec::with_capacity(s);
    for i in 0..s {
        if i == 0 || i == 1 || i == s - 1 {
            m0.push(contend.clone());
        } else {
            let mut row = vec![0.0; s];
            row[i + 1] = 1.0;
            m0.push(row);
        }
    }

    let mut m1 = m0.clone();
    let mut pause_entry = vec![0.0; s];
    pause_entry[2] = 1.0;
    m1[0] = pause_entry;

    let spec = ProtocolSpec {
        num_states: s,
        tx_state: 1,
        m0,
        m1,
    };
    debug_assert!(validate_spec(&spec).is_ok());
    Ok(spec)
}

/// Builds the 2-state pure (slotted) ALOHA protocol: transmit with
/// probability `p` every slot, regardless of sensing. Both matrices equal
/// `[[p, 1-p], [p, 1-p]]`, making the delivery process memoryless.
pub fn build_pure_aloha(tx_prob: f64) -> Result<ProtocolSpec> {
    if !(tx_prob > 0.0 && tx_prob <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tx_prob must lie in (0, 1], got {tx_prob}"
        )));
    }
    let row = vec![tx_prob, 1.0 - tx_prob];
    let m = vec![row.clone(), row];
    Ok(ProtocolSpec {
        num_states: 2,
        tx_state: 1,
        m0: m.clone(),
        m1: m,
    })
}

/// Reads a protocol spec from a JSON file, checking dimensions and
/// invariants. Dimension problems are parse errors; stochasticity problems
/// are validation errors.
pub fn read_spec(path: impl AsRef<Path>) -> Result<ProtocolSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let spec: ProtocolSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;

    // Shape errors are reported as parse errors naming the mismatch.
    let s = spec.num_states;
    for (name, m) in [("m0", &spec.m0), ("m1", &spec.m1)] {
        if m.len() != s {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!(
                    "dimension mismatch: {name} has {} rows but num_states = {s}",
                    m.len()
                ),
            });
        }
        for (i, row) in m.iter().enumerate() {
            if row.len() != s {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    message: format!(
                        "dimension mismatch: {name} row {} has {} entries but num_states = {s}",
                        i + 1,
                        row.len()
                    ),
                });
            }
        }
    }

    validate_spec(&spec).into_result()?;
    Ok(spec)
}

/// Writes a protocol spec as pretty-printed JSON. Matrix entries round-trip
/// bit-exactly (shortest-representation decimal floats).
pub fn write_spec(spec: &ProtocolSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(spec).expect("spec serialization cannot fail");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
