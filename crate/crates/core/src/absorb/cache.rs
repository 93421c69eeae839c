//! On-disk store of absorption tables.
//!
//! One file per `(model, params hash, n, budget)`:
//! magic `DCAT`, format version (u32), header length (u64), JSON header,
//! then per state `lo` (u64), length (u64), pruned mass, mean and the
//! probabilities, all little endian.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AbsorbError, AbsorptionTable, DenseLaw};
use crate::models::DecrementModel;

const MAGIC: &[u8; 4] = b"DCAT";
pub const CACHE_FORMAT_VERSION: u32 = 1;
const EXTENSION: &str = "dcat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub model: String,
    pub params_hash: String,
    pub n_max: u64,
    pub budget: f64,
    #[serde(skip_deserializing)]
    pub path: PathBuf,
    #[serde(skip_deserializing)]
    pub version: u32,
    #[serde(skip_deserializing)]
    pub bytes: u64,
}

#[derive(Debug, Clone)]
pub struct TableCache {
    dir: PathBuf,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TableCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, model: &str, hash: &str, n: u64, budget: f64) -> PathBuf {
        self.dir.join(format!(
            "{model}-{hash}-n{n}-b{:016x}.{EXTENSION}",
            budget.to_bits()
        ))
    }

    pub fn load(
        &self,
        model: &DecrementModel,
        n: u64,
        budget: f64,
    ) -> Result<Option<AbsorptionTable>, AbsorbError> {
        let path = self.path_for(model.name(), &model.params_hash(), n, budget);
        if !path.exists() {
            return Ok(None);
        }
        let table = read_table(&path)?;
        if table.model != model.name()
            || table.params_hash != model.params_hash()
            || table.n_max != n
        {
            return Err(corrupt(&path, "header does not match its file name"));
        }
        Ok(Some(table))
    }

    /// Writes through a temporary file and renames, so readers never see a
    /// partial entry.
    pub fn store(&self, table: &AbsorptionTable) -> Result<PathBuf, AbsorbError> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&table.model, &table.params_hash, table.n_max, table.budget);
        let tmp = path.with_extension(format!("{EXTENSION}.tmp{}", std::process::id()));
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            write_table(&mut w, table)?;
            w.flush()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Loads the table or builds and stores it.
    pub fn get_or_build(
        &self,
        model: &DecrementModel,
        n: u64,
        budget: f64,
    ) -> Result<AbsorptionTable, AbsorbError> {
        if let Some(t) = self.load(model, n, budget)? {
            return Ok(t);
        }
        let t = AbsorptionTable::build(model, n, budget)?;
        self.store(&t)?;
        Ok(t)
    }

    /// Headers of all entries, sorted by file name. Unreadable files are skipped.
    pub fn list(&self) -> Result<Vec<CacheEntry>, AbsorbError> {
        let mut out = Vec::new();
        if !self.dir.exists() {
            return Ok(out);
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
            .collect();
        paths.sort();
        for p in paths {
            if let Ok(e) = read_header(&p) {
                out.push(e);
            }
        }
        Ok(out)
    }

    /// Removes entries written with the current format version; returns them.
    pub fn clean(&self) -> Result<Vec<CacheEntry>, AbsorbError> {
        let mut removed = Vec::new();
        for e in self.list()? {
            if e.version == CACHE_FORMAT_VERSION {
                fs::remove_file(&e.path)?;
                removed.push(e);
            }
        }
        Ok(removed)
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> AbsorbError {
    AbsorbError::CacheCorrupt {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn write_table<W: Write>(w: &mut W, t: &AbsorptionTable) -> Result<(), AbsorbError> {
    let header = serde_json::json!({
        "model": t.model,
        "params_hash": t.params_hash,
        "n_max": t.n_max,
        "budget": t.budget,
    });
    let header = serde_json::to_vec(&header).expect("header serializes");
    w.write_all(MAGIC)?;
    w.write_all(&CACHE_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (law, mean) in t.laws.iter().zip(&t.means) {
        w.write_all(&law.lo.to_le_bytes())?;
        w.write_all(&(law.probs.len() as u64).to_le_bytes())?;
        w.write_all(&law.pruned.to_le_bytes())?;
        w.write_all(&mean.to_le_bytes())?;
        for p in &law.probs {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_prefix<R: Read>(r: &mut R, path: &Path) -> Result<(u32, CacheEntry), AbsorbError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt(path, "truncated magic"))?;
    if &magic != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)
        .map_err(|_| corrupt(path, "truncated version"))?;
    let version = u32::from_le_bytes(v);
    let len = read_u64(r).map_err(|_| corrupt(path, "truncated header"))?;
    if len > 1 << 20 {
        return Err(corrupt(path, "header too long"));
    }
    let mut h = vec![0u8; len as usize];
    r.read_exact(&mut h)
        .map_err(|_| corrupt(path, "truncated header"))?;
    let mut e: CacheEntry = serde_json::from_slice(&h).map_err(|e| corrupt(path, e.to_string()))?;
    e.path = path.to_path_buf();
    e.version = version;
    e.bytes = fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    Ok((version, e))
}

fn read_header(path: &Path) -> Result<CacheEntry, AbsorbError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    Ok(read_prefix(&mut r, path)?.1)
}

fn read_table(path: &Path) -> Result<AbsorptionTable, AbsorbError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let (version, e) = read_prefix(&mut r, path)?;
    if version != CACHE_FORMAT_VERSION {
        return Err(corrupt(
            path,
            format!("format version {version}, expected {CACHE_FORMAT_VERSION}"),
        ));
    }
    let states = e.n_max as usize + 1;
    let mut laws = Vec::with_capacity(states);
    let mut means = Vec::with_capacity(states);
    let trunc = |_| corrupt(path, "truncated body");
    for _ in 0..states {
        let lo = read_u64(&mut r).map_err(trunc)?;
        let len = read_u64(&mut r).map_err(trunc)?;
        if len == 0 || len > e.n_max.saturating_mul(64).max(1 << 20) {
            return Err(corrupt(path, "implausible law length"));
        }
        let pruned = read_f64(&mut r).map_err(trunc)?;
        let mean = read_f64(&mut r).map_err(trunc)?;
        let mut probs = Vec::with_capacity(len as usize);
        for _ in 0..len {
            probs.push(read_f64(&mut r).map_err(trunc)?);
        }
        let total: f64 = probs.iter().sum::<f64>() + pruned;
        if !((total - 1.0).abs() < 1e-9) || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(corrupt(path, "law does not sum to one"));
        }
        laws.push(DenseLaw { lo, probs, pruned });
        means.push(mean);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(corrupt(path, "trailing bytes"));
    }
    Ok(AbsorptionTable {
        model: e.model,
        params_hash: e.params_hash,
        n_max: e.n_max,
        budget: e.budget,
        laws,
        means,
    })
}
