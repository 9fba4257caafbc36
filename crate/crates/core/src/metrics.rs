//! Agreement metrics between two labelings.

use serde::Serialize;

use crate::error::{DopeError, Result};

/// Dice similarity of the foreground sets; two empty masks score 1.
pub fn dice(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DopeError::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut inter, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x != 0, y != 0);
        inter += usize::from(x && y);
        sa += usize::from(x);
        sb += usize::from(y);
    }
    if sa + sb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (sa + sb) as f64)
}

/// `(e − e_ref) / |e_ref|`; signed, positive when `e` is worse. Equal
/// energies give 0 even when both are zero.
pub fn relative_energy_diff(e: f64, e_ref: f64) -> Result<f64> {
    if e == e_ref {
        return Ok(0.0);
    }
    if e_ref == 0.0 {
        return Err(DopeError::ZeroReferenceEnergy);
    }
    Ok((e - e_ref) / e_ref.abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WallTimes {
    pub serial_ms: f64,
    pub dope_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub serial_energy: f64,
    pub dope_energy: f64,
    /// `None` when the serial energy is zero and the two differ.
    pub relative_energy_diff: Option<f64>,
    pub dice: f64,
    pub iterations: usize,
    pub converged: bool,
    pub blocks: usize,
    pub solver: String,
    pub wall_times: Option<WallTimes>,
}

impl ComparisonReport {
    pub fn new(
        serial: (&[u8], f64),
        dope: (&[u8], f64),
        iterations: usize,
        converged: bool,
        blocks: usize,
        solver: &str,
    ) -> Result<Self> {
        Ok(Self {
            serial_energy: serial.1,
            dope_energy: dope.1,
            relative_energy_diff: relative_energy_diff(dope.1, serial.1).ok(),
            dice: dice(serial.0, dope.0)?,
            iterations,
            converged,
            blocks,
            solver: solver.to_string(),
            wall_times: None,
        })
    }
}
