//! Deterministic text artifacts: CSV trajectories (`t,u1,...,uK`), JSON
//! documents, and a coordinate-format matrix dump for debugging.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::linear_ops::TruncatedOperator;
use crate::model::TailVector;

/// Writes `t,u1,u2,...,uK` rows. Shared schema for deterministic and
/// simulated trajectories.
pub fn write_trajectory_csv<W: Write>(
    mut w: W,
    times: &[f64],
    states: &[TailVector],
) -> Result<()> {
    assert_eq!(times.len(), states.len());
    let kmax = states.first().map_or(0, TailVector::kmax);
    write!(w, "t")?;
    for k in 1..=kmax {
        write!(w, ",u{k}")?;
    }
    writeln!(w)?;
    for (t, s) in times.iter().zip(states) {
        write!(w, "{t}")?;
        for v in s.values() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// CSV for raw numeric rows (OU paths): header `t,z1,...,zK`.
pub fn write_path_csv<W: Write>(mut w: W, times: &[f64], rows: &[Vec<f64>]) -> Result<()> {
    assert_eq!(times.len(), rows.len());
    let kmax = rows.first().map_or(0, Vec::len);
    write!(w, "t")?;
    for k in 1..=kmax {
        write!(w, ",z{k}")?;
    }
    writeln!(w)?;
    for (t, row) in times.iter().zip(rows) {
        write!(w, "{t}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Pretty JSON with a trailing newline; byte-stable for a given value.
pub fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

/// `row col value` lines (1-based) for the structural nonzeros of a
/// tridiagonal truncation.
pub fn write_matrix_coordinate<W: Write>(mut w: W, op: &TruncatedOperator) -> Result<()> {
    let n = op.kmax();
    for i in 0..n {
        if i > 0 {
            writeln!(w, "{} {} {}", i + 1, i, op.sub()[i - 1])?;
        }
        writeln!(w, "{} {} {}", i + 1, i + 1, op.diag()[i])?;
        if i + 1 < n {
            writeln!(w, "{} {} {}", i + 1, i + 2, op.sup()[i])?;
        }
    }
    Ok(())
}
