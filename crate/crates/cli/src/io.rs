//! Binary field container, CSV writers and JSON manifests.
//!
//! Container layout (little endian): magic `KSPF`, format version `u32`, cutoff
//! `N: u64`, snapshot count `u64`, then per snapshot a time tag `f64` followed by
//! the `(2N+1)^2` coefficients `(re, im)` in row-major frequency order
//! (`k1` outer, `k2` inner, each from `-N` to `N`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use ks_para_core::{Lattice, SpectralField};
use num_complex::Complex64 as C64;
use serde::Serialize;

const MAGIC: &[u8; 4] = b"KSPF";
const VERSION: u32 = 1;

/// Writes `(time, field)` snapshots sharing one lattice.
pub fn write_fields(path: &Path, snapshots: &[(f64, &SpectralField)]) -> anyhow::Result<()> {
    let Some((_, first)) = snapshots.first() else { bail!("no snapshots to write") };
    let lattice = first.lattice().clone();
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(lattice.n() as u64).to_le_bytes())?;
    w.write_all(&(snapshots.len() as u64).to_le_bytes())?;
    for (t, f) in snapshots {
        if f.lattice() != &lattice {
            bail!("snapshots live on different lattices");
        }
        w.write_all(&t.to_le_bytes())?;
        for c in f.coeffs() {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_field(path: &Path, t: f64, field: &SpectralField) -> anyhow::Result<()> {
    write_fields(path, &[(t, field)])
}

fn read_u64(r: &mut impl Read) -> anyhow::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> anyhow::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Reads every snapshot of a container.
pub fn read_fields(path: &Path) -> anyhow::Result<Vec<(f64, SpectralField)>> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        bail!("{} is not a field container", path.display());
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    if u32::from_le_bytes(v) != VERSION {
        bail!("unsupported container version {}", u32::from_le_bytes(v));
    }
    let n = read_u64(&mut r)? as usize;
    let count = read_u64(&mut r)?;
    let lattice = Lattice::new(n)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let t = read_f64(&mut r)?;
        let coeffs = (0..lattice.len())
            .map(|_| Ok(C64::new(read_f64(&mut r)?, read_f64(&mut r)?)))
            .collect::<anyhow::Result<Vec<_>>>()?;
        out.push((t, SpectralField::from_coeffs(&lattice, coeffs)?));
    }
    Ok(out)
}

/// The last snapshot of a container.
pub fn read_field(path: &Path) -> anyhow::Result<(SpectralField, f64)> {
    let mut all = read_fields(path)?;
    let (t, f) = all.pop().context("container holds no snapshot")?;
    Ok((f, t))
}

/// CSV writer with a header row, LF line endings and shortest round-trip floats.
pub struct CsvOut {
    inner: csv::Writer<File>,
    path: PathBuf,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> anyhow::Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(header)?;
        Ok(CsvOut { inner, path: path.to_path_buf() })
    }

    pub fn row(&mut self, fields: &[String]) -> anyhow::Result<()> {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.inner.flush()?;
        Ok(self.path)
    }
}

/// Float cell in shortest round-trip form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Coefficient table `(k1, k2, re, im)`.
pub fn write_coefficients_csv(path: &Path, field: &SpectralField) -> anyhow::Result<PathBuf> {
    let mut out = CsvOut::create(path, &["k1", "k2", "re", "im"])?;
    let l = field.lattice();
    for i in 0..l.len() {
        let (a, b) = l.freq(i);
        let c = field.coeffs()[i];
        out.row(&[a.to_string(), b.to_string(), num(c.re), num(c.im)])?;
    }
    out.finish()
}

/// JSON record of a run: parameters, seeds, version, wall time and outputs.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub parameters: serde_json::Value,
    pub results: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub wall_time_seconds: f64,
}

/// Times a run and writes its manifest.
pub struct ManifestBuilder {
    command: String,
    parameters: serde_json::Value,
    start: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str, parameters: impl Serialize) -> anyhow::Result<Self> {
        Ok(ManifestBuilder {
            command: command.into(),
            parameters: serde_json::to_value(parameters)?,
            start: Instant::now(),
        })
    }

    pub fn finish(self, dir: &Path, results: impl Serialize, outputs: Vec<PathBuf>) -> anyhow::Result<Manifest> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            parameters: self.parameters,
            results: serde_json::to_value(results)?,
            outputs,
            wall_time_seconds: self.start.elapsed().as_secs_f64(),
        };
        let path = dir.join(format!("{}.manifest.json", manifest.command));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
