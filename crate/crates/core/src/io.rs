//! Plain-text field snapshots.
//!
//! ```text
//! spacetime-ns field 1          (or: spacetime-ns slice 1)
//! nx <int>
//! ny <int>
//! lx <real>
//! ly <real>
//! m <int>                       (field only)
//! T <real>                      (field only)
//! slice <j> <t_j>               (one block per slice; a single block for a slice file)
//! <ux> <uy>                     (nx * ny lines, row-major: point (i, j) on line j * nx + i)
//! ```
//!
//! Reals are written in shortest round-trip exponent form, so reading a
//! written file reproduces it bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, SpaceTimeField, TimeGrid, VelocitySlice};

const MAGIC: &str = "spacetime-ns";

fn write_header(w: &mut impl Write, kind: &str, grid: &Grid) -> std::io::Result<()> {
    writeln!(w, "{MAGIC} {kind} 1")?;
    writeln!(w, "nx {}", grid.nx())?;
    writeln!(w, "ny {}", grid.ny())?;
    writeln!(w, "lx {:e}", grid.lx())?;
    writeln!(w, "ly {:e}", grid.ly())
}

fn write_block(w: &mut impl Write, j: usize, t: f64, s: &VelocitySlice) -> std::io::Result<()> {
    writeln!(w, "slice {j} {t:e}")?;
    for (x, y) in s.x.iter().zip(&s.y) {
        writeln!(w, "{x:e} {y:e}")?;
    }
    Ok(())
}

pub fn write_field(path: &Path, u: &SpaceTimeField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, "field", u.grid())?;
    writeln!(w, "m {}", u.time().m())?;
    writeln!(w, "T {:e}", u.time().t_final())?;
    for (j, s) in u.slices().iter().enumerate() {
        write_block(&mut w, j, u.time().t(j), s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_slice(path: &Path, grid: &Grid, s: &VelocitySlice) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, "slice", grid)?;
    write_block(&mut w, 0, 0.0, s)?;
    w.flush()?;
    Ok(())
}

struct Reader<L> {
    lines: L,
    line_no: usize,
}

impl<L: Iterator<Item = std::io::Result<String>>> Reader<L> {
    fn next(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.lines.next() {
            Some(l) => Ok(l?),
            None => Err(Error::Data(format!("unexpected end of file at line {}", self.line_no))),
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Data(format!("line {}: {msg}", self.line_no))
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let l = self.next()?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        let v = it.next().ok_or_else(|| self.err(format!("missing value for `{key}`")))?;
        v.parse().map_err(|_| self.err(format!("bad value `{v}` for `{key}`")))
    }

    fn block(&mut self, grid: &Grid, j: usize) -> Result<VelocitySlice> {
        let l = self.next()?;
        let mut it = l.split_whitespace();
        if it.next() != Some("slice") || it.next().and_then(|v| v.parse::<usize>().ok()) != Some(j) {
            return Err(self.err(format!("expected `slice {j}`")));
        }
        let mut s = VelocitySlice::zeros(grid);
        for p in 0..grid.len() {
            let l = self.next()?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| self.err("bad number"))?;
            if vals.len() != 2 {
                return Err(self.err("expected two components"));
            }
            s.x[p] = vals[0];
            s.y[p] = vals[1];
        }
        Ok(s)
    }
}

fn open(path: &Path, kind: &str) -> Result<(Reader<impl Iterator<Item = std::io::Result<String>>>, Grid)> {
    let mut r = Reader { lines: BufReader::new(File::open(path)?).lines(), line_no: 0 };
    let head = r.next()?;
    if head.trim() != format!("{MAGIC} {kind} 1") {
        return Err(r.err(format!("not a {kind} snapshot (header `{head}`)")));
    }
    let nx = r.keyed("nx")?;
    let ny = r.keyed("ny")?;
    let lx = r.keyed("lx")?;
    let ly = r.keyed("ly")?;
    let grid = Grid::new(nx, ny, lx, ly).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((r, grid))
}

/// Reads a field snapshot; every slice must be admissible.
pub fn read_field(path: &Path) -> Result<SpaceTimeField> {
    let (mut r, grid) = open(path, "field")?;
    let m = r.keyed("m")?;
    let t_final = r.keyed("T")?;
    let time = TimeGrid::new(m, t_final).map_err(|e| Error::Data(e.to_string()))?;
    let slices = (0..=m).map(|j| r.block(&grid, j)).collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(grid, time, slices).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Reads a single-slice snapshot; the slice must be admissible.
pub fn read_slice(path: &Path) -> Result<(Grid, VelocitySlice)> {
    let (mut r, grid) = open(path, "slice")?;
    let s = r.block(&grid, 0)?;
    grid.check_admissible(&s).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((grid, s))
}
