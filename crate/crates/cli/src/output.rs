//! On-disk artifacts: PGM images, convergence CSV and the restart dump.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use microtop_core::mesh::{DesignLayout, MeshTopology};
use microtop_core::optimizer::ConvergenceRecord;

use crate::CliError;

pub const DUMP_MAGIC: &[u8; 8] = b"MICROTOP";
pub const DUMP_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

fn pixel(rho: f64) -> u8 {
    (255.0 * (1.0 - rho.clamp(0.0, 1.0))).round() as u8
}

/// Binary 8-bit PGM; `pixels` is row-major from the top-left.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), CliError> {
    assert_eq!(pixels.len(), width * height);
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    write!(w, "P5\n{width} {height}\n255\n").map_err(io_err(path))?;
    w.write_all(pixels).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Tiles stacked into one `n × (k·n)` image in the given order. `design` uses
/// the tile numbering `tile·n² + lx·n + ly` with `ly` counted from the bottom.
pub fn tile_pixels(design: &[f64], n: usize, order: &[usize]) -> (usize, usize, Vec<u8>) {
    let mut px = Vec::with_capacity(order.len() * n * n);
    for &t in order {
        for r in 0..n {
            let ly = n - 1 - r;
            for lx in 0..n {
                px.push(pixel(design[t * n * n + lx * n + ly]));
            }
        }
    }
    (n, order.len() * n, px)
}

/// Distinct tiles as they appear from the top coarse row down.
pub fn tiles_top_down(layout: &DesignLayout) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::new();
    for &t in layout.tile_of_row.iter().rev() {
        if !order.contains(&t) {
            order.push(t);
        }
    }
    order
}

/// One pixel per fine element of the whole domain.
pub fn macro_pixels(design: &[f64], tiling: &[u32], mesh: &MeshTopology) -> (usize, usize, Vec<u8>) {
    let mut px = Vec::with_capacity(mesh.num_elements());
    for r in 0..mesh.ney {
        let ey = mesh.ney - 1 - r;
        for ex in 0..mesh.nex {
            px.push(pixel(design[tiling[mesh.element(ex, ey)] as usize]));
        }
    }
    (mesh.nex, mesh.ney, px)
}

/// Shortest round-trip decimal.
fn num(v: f64) -> String {
    format!("{v}")
}

pub fn convergence_header(realizations: usize) -> Vec<String> {
    let mut h: Vec<String> = ["iter", "stage", "p", "beta", "objective"].map(String::from).to_vec();
    h.extend((0..realizations).map(|k| format!("compliance_{k}")));
    h.extend(["g", "mnd"].map(String::from));
    h.extend((0..realizations).map(|k| format!("gmres_{k}")));
    h.extend(["basis_rebuilt", "n_t", "seconds"].map(String::from));
    h
}

pub fn convergence_row(r: &ConvergenceRecord) -> Vec<String> {
    let mut row = vec![
        r.iter.to_string(),
        r.stage.to_string(),
        num(r.penal),
        num(r.beta),
        num(r.objective),
    ];
    row.extend(r.compliances.iter().map(|&c| num(c)));
    row.push(num(r.constraint));
    row.push(num(r.nondiscreteness));
    row.extend(r.gmres_iterations.iter().map(usize::to_string));
    row.push(u8::from(r.basis_rebuilt).to_string());
    row.push(r.coarse_size.to_string());
    row.push(num(r.seconds));
    row
}

/// 16-byte header (magic, version, count) then little-endian `f64`s.
pub fn write_dump(path: &Path, x: &[f64]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let count = u32::try_from(x.len()).map_err(|_| CliError::Config("design too large to dump".into()))?;
    w.write_all(DUMP_MAGIC).map_err(io_err(path))?;
    w.write_all(&DUMP_VERSION.to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&count.to_le_bytes()).map_err(io_err(path))?;
    for v in x {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_dump(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    let bad = |msg: &str| CliError::Config(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != DUMP_MAGIC {
        return Err(bad("not a design dump"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != DUMP_VERSION {
        return Err(bad(&format!("unsupported dump version {version}")));
    }
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + 8 * count {
        return Err(bad(&format!("expected {count} values, file holds {} bytes", bytes.len())));
    }
    Ok(bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
