//! Plain-text sparse triplet dump of a [`ConeProgram`].
//!
//! ```text
//! vars <n>
//! obj <index> <value>            (nonzeros of f)
//! cone <j> <rows>                (one line per constraint, rows = m_j)
//! G <row> <col> <value>          (conic form G z + s = h, rows stacked per cone)
//! h <row> <value>
//! ```
//!
//! Row 0 of each cone block is the scalar side `c^T z + d`, the remaining
//! rows are `A z + b`; `G` stores `(-c; -A)` and `h` stores `(d; b)`.

use std::io::{self, Write};

use crate::ConeProgram;

pub fn write_triplets<W: Write>(prog: &ConeProgram, out: &mut W) -> io::Result<()> {
    writeln!(out, "vars {}", prog.num_vars())?;
    for (i, v) in prog.objective.iter().enumerate() {
        if *v != 0.0 {
            writeln!(out, "obj {i} {v:e}")?;
        }
    }
    for (j, con) in prog.constraints.iter().enumerate() {
        writeln!(out, "cone {j} {}", con.rows())?;
    }
    let mut row = 0;
    for con in &prog.constraints {
        for (col, v) in con.c.iter().enumerate() {
            if *v != 0.0 {
                writeln!(out, "G {row} {col} {:e}", -v)?;
            }
        }
        if con.d != 0.0 {
            writeln!(out, "h {row} {:e}", con.d)?;
        }
        for r in 0..con.rows() {
            let gr = row + 1 + r;
            for col in 0..con.a.ncols() {
                let v = con.a[(r, col)];
                if v != 0.0 {
                    writeln!(out, "G {gr} {col} {:e}", -v)?;
                }
            }
            if con.b[r] != 0.0 {
                writeln!(out, "h {gr} {:e}", con.b[r])?;
            }
        }
        row += con.rows() + 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn dump_lists_nonzeros() {
        let mut prog = ConeProgram::new(2);
        prog.objective[0] = 1.0;
        prog.add_soc(DMatrix::identity(2, 2), DVector::from_vec(vec![-3.0, 0.0]), DVector::zeros(2), 1.0).unwrap();
        let mut buf = Vec::new();
        write_triplets(&prog, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("vars 2\nobj 0 1e0\ncone 0 2\n"));
        assert!(text.contains("h 0 1e0"));
        assert!(text.contains("G 1 0 -1e0"));
        assert!(text.contains("h 1 -3e0"));
    }
}
