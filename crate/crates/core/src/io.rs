//! Persistence and emission: the spectrum cache, CSV and heatmap output,
//! run manifests, and the flat key=value run configuration.

use crate::grid::{CellFlag, ScalarMap};
use crate::model::ModelParams;
use crate::spectrum::{BasisKind, BasisSpec, Parity, ParitySel, SpectrumResult};
use ndarray::{Array2, ShapeBuilder};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cache entry corrupt: {0}")]
    Corrupt(String),
    #[error("config error at '{key}': {reason}")]
    Config { key: String, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------
// Spectrum cache
// ---------------------------------------------------------------------

/// Cache file header; one JSON object on the first line of the file,
/// followed by little-endian f64 arrays: eigenvalues, then eigenvectors
/// column by column (absent for eigenvalue-only entries).
#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    format: u32,
    params: ModelParams,
    basis: BasisSpec,
    dimension: usize,
    n_converged: Option<usize>,
    /// Whether eigenvector data follows the eigenvalues.
    vectors: bool,
    endianness: String,
    /// SHA-256 of the binary payload, hex.
    payload_sha256: String,
}

const CACHE_FORMAT: u32 = 1;

/// Content-addressed store for diagonalization results.
///
/// Keys hash the exact parameters and basis, so a hit is only possible
/// for a bit-identical configuration. Writes go through a temp file and
/// an atomic rename; interrupted writes leave no partial entry.
pub struct SpectrumCache {
    dir: PathBuf,
}

/// Environment variable overriding the cache directory.
pub const CACHE_DIR_ENV: &str = "DICKE_CACHE_DIR";

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, IoError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(SpectrumCache { dir })
    }

    /// Cache at `dir`, unless `DICKE_CACHE_DIR` overrides it.
    pub fn from_env_or(dir: impl Into<PathBuf>) -> Result<Self, IoError> {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) => Self::new(PathBuf::from(d)),
            None => Self::new(dir),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, params: &ModelParams, basis: &BasisSpec, vectors: bool) -> PathBuf {
        // Hash the exact bit patterns: a cache hit requires exact match.
        let mut hasher = Sha256::new();
        for v in [params.omega, params.omega0, params.gamma, params.delta, params.j] {
            hasher.update(v.to_le_bytes());
        }
        hasher.update([match basis.kind {
            BasisKind::Fock => 0u8,
            BasisKind::Ecb => 1,
        }]);
        hasher.update((basis.n_max as u64).to_le_bytes());
        hasher.update([match basis.parity {
            ParitySel::Plus => 0u8,
            ParitySel::Minus => 1,
            ParitySel::Both => 2,
        }]);
        hasher.update([u8::from(vectors), CACHE_FORMAT as u8]);
        let hash = hasher.finalize();
        self.dir.join(format!("{}.spec", hex_string(&hash[..16])))
    }

    /// Store a full spectrum (eigenvalues and eigenvectors).
    pub fn store(&self, result: &SpectrumResult) -> Result<PathBuf, IoError> {
        let dim = result.dimension();
        let mut payload = Vec::with_capacity(8 * dim * (dim + 1));
        for v in &result.eigenvalues {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        for k in 0..dim {
            for v in result.eigenvectors.column(k) {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CacheHeader {
            format: CACHE_FORMAT,
            params: result.params,
            basis: result.basis,
            dimension: dim,
            n_converged: result.n_converged(),
            vectors: true,
            endianness: "little".into(),
            payload_sha256: hex_string(&Sha256::digest(&payload)),
        };
        let path = self.entry_path(&result.params, &result.basis, true);
        self.write_entry(&path, &header, &payload)?;
        Ok(path)
    }

    /// Store an eigenvalue-only entry (used for the reduced-cutoff runs
    /// of the convergence assessment).
    pub fn store_values(
        &self,
        params: &ModelParams,
        basis: &BasisSpec,
        values: &[f64],
    ) -> Result<PathBuf, IoError> {
        let mut payload = Vec::with_capacity(8 * values.len());
        for v in values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let header = CacheHeader {
            format: CACHE_FORMAT,
            params: *params,
            basis: *basis,
            dimension: values.len(),
            n_converged: None,
            vectors: false,
            endianness: "little".into(),
            payload_sha256: hex_string(&Sha256::digest(&payload)),
        };
        let path = self.entry_path(params, basis, false);
        self.write_entry(&path, &header, &payload)?;
        Ok(path)
    }

    fn write_entry(
        &self,
        path: &Path,
        header: &CacheHeader,
        payload: &[u8],
    ) -> Result<(), IoError> {
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        {
            let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
            serde_json::to_writer(&mut w, header)?;
            w.write_all(b"\n")?;
            w.write_all(payload)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn read_entry(&self, path: &Path) -> Result<(CacheHeader, Vec<u8>), IoError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CacheHeader = serde_json::from_str(line.trim_end())?;
        if header.format != CACHE_FORMAT {
            return Err(IoError::Corrupt(format!("unknown format {}", header.format)));
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let digest = hex_string(&Sha256::digest(&payload));
        if digest != header.payload_sha256 {
            return Err(IoError::Corrupt("payload checksum mismatch".into()));
        }
        Ok((header, payload))
    }

    /// Load a full spectrum; `Ok(None)` on a cache miss.
    pub fn load(
        &self,
        params: &ModelParams,
        basis: &BasisSpec,
    ) -> Result<Option<SpectrumResult>, IoError> {
        let path = self.entry_path(params, basis, true);
        if !path.exists() {
            return Ok(None);
        }
        let (header, payload) = self.read_entry(&path)?;
        if header.params != *params || header.basis != *basis {
            return Ok(None); // hash collision; treat as a miss
        }
        let dim = header.dimension;
        let expect = 8 * dim * (dim + 1);
        if payload.len() != expect {
            return Err(IoError::Corrupt(format!(
                "payload size {} != expected {expect}",
                payload.len()
            )));
        }
        let mut values = Vec::with_capacity(dim);
        for c in payload[..8 * dim].chunks_exact(8) {
            values.push(f64::from_le_bytes(c.try_into().unwrap()));
        }
        let mut vecs = Vec::with_capacity(dim * dim);
        for c in payload[8 * dim..].chunks_exact(8) {
            vecs.push(f64::from_le_bytes(c.try_into().unwrap()));
        }
        let eigenvectors = Array2::from_shape_vec((dim, dim).f(), vecs)
            .map_err(|e| IoError::Corrupt(e.to_string()))?;
        let parities = match basis.parity {
            ParitySel::Plus => vec![Parity::Plus; dim],
            ParitySel::Minus => vec![Parity::Minus; dim],
            ParitySel::Both => Vec::new(),
        };
        Ok(Some(SpectrumResult {
            params: *params,
            basis: *basis,
            eigenvalues: values,
            eigenvectors,
            parities,
            converged: None,
        }))
    }

    /// Load an eigenvalue-only entry; `Ok(None)` on a miss.
    pub fn load_values(
        &self,
        params: &ModelParams,
        basis: &BasisSpec,
    ) -> Result<Option<Vec<f64>>, IoError> {
        let path = self.entry_path(params, basis, false);
        if !path.exists() {
            return Ok(None);
        }
        let (header, payload) = self.read_entry(&path)?;
        if header.params != *params || header.basis != *basis {
            return Ok(None);
        }
        let mut values = Vec::with_capacity(header.dimension);
        for c in payload.chunks_exact(8) {
            values.push(f64::from_le_bytes(c.try_into().unwrap()));
        }
        Ok(Some(values))
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

// ---------------------------------------------------------------------
// CSV emission
// ---------------------------------------------------------------------

/// Format a float with 17 significant digits: lossless for f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Write a CSV file with a header row; values already formatted.
pub fn write_csv<P, I>(path: P, header: &[&str], rows: I) -> Result<(), IoError>
where
    P: AsRef<Path>,
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows (phi, jz, value, flag) of a scalar map, in grid order.
pub fn scalar_map_rows(map: &ScalarMap) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(map.grid.jz.len() * map.grid.phi.len());
    for (iv, iu, jz, phi) in map.cells() {
        rows.push(vec![
            fmt_f64(phi),
            fmt_f64(jz),
            fmt_f64(map.values[[iv, iu]]),
            map.flags[[iv, iu]].label().to_string(),
        ]);
    }
    rows
}

// ---------------------------------------------------------------------
// Heatmap emission (binary PPM)
// ---------------------------------------------------------------------

/// Fixed colormap anchors (approximate viridis), interpolated linearly.
const COLORMAP: [(f64, [u8; 3]); 9] = [
    (0.000, [68, 1, 84]),
    (0.125, [72, 40, 120]),
    (0.250, [62, 74, 137]),
    (0.375, [49, 104, 142]),
    (0.500, [38, 130, 142]),
    (0.625, [31, 158, 137]),
    (0.750, [53, 183, 121]),
    (0.875, [109, 205, 89]),
    (1.000, [253, 231, 37]),
];

/// Color of cells the computation could not fill.
const FLAG_COLOR: [u8; 3] = [40, 40, 40];

fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let mut lo = COLORMAP[0];
    for &hi in &COLORMAP[1..] {
        if t <= hi.0 {
            let f = if hi.0 > lo.0 { (t - lo.0) / (hi.0 - lo.0) } else { 0.0 };
            let mut c = [0u8; 3];
            for (i, ch) in c.iter_mut().enumerate() {
                *ch = (lo.1[i] as f64 + f * (hi.1[i] as f64 - lo.1[i] as f64)).round() as u8;
            }
            return c;
        }
        lo = hi;
    }
    COLORMAP[COLORMAP.len() - 1].1
}

/// Render a scalar map as a binary PPM image (one pixel per cell, jz
/// increasing upward). Values are scaled linearly over the Ok cells
/// unless an explicit range is given; flagged cells use a fixed gray.
pub fn write_heatmap_ppm(
    path: impl AsRef<Path>,
    map: &ScalarMap,
    range: Option<(f64, f64)>,
) -> Result<(), IoError> {
    let (n_jz, n_phi) = map.grid.shape();
    let (vmin, vmax) = range.unwrap_or_else(|| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (iv, iu, _, _) in map.cells() {
            if map.flags[[iv, iu]] == CellFlag::Ok {
                lo = lo.min(map.values[[iv, iu]]);
                hi = hi.max(map.values[[iv, iu]]);
            }
        }
        if lo >= hi {
            (0.0, 1.0)
        } else {
            (lo, hi)
        }
    });
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "P6 {n_phi} {n_jz} 255")?;
    for iv in (0..n_jz).rev() {
        for iu in 0..n_phi {
            let px = if map.flags[[iv, iu]] == CellFlag::Ok {
                colormap((map.values[[iv, iu]] - vmin) / (vmax - vmin))
            } else {
                FLAG_COLOR
            };
            w.write_all(&px)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Inputs and outputs of one CLI run; enough to re-run it exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<ManifestEntry>,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String, IoError> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

impl RunManifest {
    pub fn new(subcommand: &str, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            tool: "dicke".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let p = path.as_ref();
        self.outputs.push(ManifestEntry {
            path: p.display().to_string(),
            bytes: std::fs::metadata(p)?.len(),
            sha256: sha256_file(p)?,
        });
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IoError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------
// Run configuration (flat key=value text with CLI overrides)
// ---------------------------------------------------------------------

/// Flat run configuration; every field has a line form `key = value`.
/// Unset fields fall back to defaults at the point of use.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub omega: Option<f64>,
    pub omega0: Option<f64>,
    pub gamma: Option<f64>,
    /// Coupling in units of the critical coupling (overrides gamma).
    pub gamma_rel: Option<f64>,
    pub delta: Option<f64>,
    pub j: Option<f64>,
    pub n_max: Option<usize>,
    pub basis: Option<String>,
    pub parity: Option<String>,
    pub epsilon: Option<f64>,
    pub branch: Option<String>,
    pub phi: Option<f64>,
    pub jz: Option<f64>,
    pub state_index: Option<usize>,
    pub grid_phi: Option<usize>,
    pub grid_jz: Option<usize>,
    pub j_list: Option<Vec<f64>>,
    pub n_max_policy: Option<String>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub drift_bound: Option<f64>,
    pub lyap_time: Option<f64>,
    pub renorm_interval: Option<f64>,
    pub n_crossings: Option<usize>,
    pub t_final: Option<f64>,
    pub restrict_converged: Option<bool>,
    pub n_min: Option<f64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

macro_rules! config_fields {
    ($macro_cb:ident) => {
        $macro_cb!(omega, f64);
        $macro_cb!(omega0, f64);
        $macro_cb!(gamma, f64);
        $macro_cb!(gamma_rel, f64);
        $macro_cb!(delta, f64);
        $macro_cb!(j, f64);
        $macro_cb!(n_max, usize);
        $macro_cb!(basis, String);
        $macro_cb!(parity, String);
        $macro_cb!(epsilon, f64);
        $macro_cb!(branch, String);
        $macro_cb!(phi, f64);
        $macro_cb!(jz, f64);
        $macro_cb!(state_index, usize);
        $macro_cb!(grid_phi, usize);
        $macro_cb!(grid_jz, usize);
        $macro_cb!(n_max_policy, String);
        $macro_cb!(rel_tol, f64);
        $macro_cb!(abs_tol, f64);
        $macro_cb!(drift_bound, f64);
        $macro_cb!(lyap_time, f64);
        $macro_cb!(renorm_interval, f64);
        $macro_cb!(n_crossings, usize);
        $macro_cb!(t_final, f64);
        $macro_cb!(restrict_converged, bool);
        $macro_cb!(n_min, f64);
        $macro_cb!(threads, usize);
    };
}

impl RunConfig {
    /// Serialize to the flat text form; floats keep 17 significant
    /// digits so the round-trip is lossless.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        macro_rules! emit {
            ($field:ident, f64) => {
                if let Some(v) = self.$field {
                    push(stringify!($field), fmt_f64(v));
                }
            };
            ($field:ident, usize) => {
                if let Some(v) = self.$field {
                    push(stringify!($field), v.to_string());
                }
            };
            ($field:ident, bool) => {
                if let Some(v) = self.$field {
                    push(stringify!($field), v.to_string());
                }
            };
            ($field:ident, String) => {
                if let Some(v) = &self.$field {
                    push(stringify!($field), v.clone());
                }
            };
        }
        config_fields!(emit);
        if let Some(list) = &self.j_list {
            push("j_list", list.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";"));
        }
        if let Some(d) = &self.out_dir {
            push("out_dir", d.display().to_string());
        }
        if let Some(d) = &self.cache_dir {
            push("cache_dir", d.display().to_string());
        }
        out
    }

    /// Parse the flat text form. Unknown keys are errors (they are
    /// usually typos in sweep scripts).
    pub fn from_text(text: &str) -> Result<Self, IoError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(IoError::Config {
                    key: format!("line {}", lineno + 1),
                    reason: "expected key = value".into(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            let parse_err = |reason: String| IoError::Config { key: key.to_string(), reason };
            macro_rules! grab {
                ($field:ident, f64) => {
                    if key == stringify!($field) {
                        cfg.$field =
                            Some(value.parse::<f64>().map_err(|e| parse_err(e.to_string()))?);
                        continue;
                    }
                };
                ($field:ident, usize) => {
                    if key == stringify!($field) {
                        cfg.$field =
                            Some(value.parse::<usize>().map_err(|e| parse_err(e.to_string()))?);
                        continue;
                    }
                };
                ($field:ident, bool) => {
                    if key == stringify!($field) {
                        cfg.$field =
                            Some(value.parse::<bool>().map_err(|e| parse_err(e.to_string()))?);
                        continue;
                    }
                };
                ($field:ident, String) => {
                    if key == stringify!($field) {
                        cfg.$field = Some(value.to_string());
                        continue;
                    }
                };
            }
            config_fields!(grab);
            match key {
                "j_list" => {
                    let mut list = Vec::new();
                    for part in value.split(';') {
                        list.push(
                            part.trim().parse::<f64>().map_err(|e| parse_err(e.to_string()))?,
                        );
                    }
                    cfg.j_list = Some(list);
                }
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                "cache_dir" => cfg.cache_dir = Some(PathBuf::from(value)),
                other => {
                    return Err(IoError::Config {
                        key: other.to_string(),
                        reason: "unknown key".into(),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level sanity checks shared by file and flag input.
    pub fn validate(&self) -> Result<(), IoError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("drift_bound", self.drift_bound),
            ("lyap_time", self.lyap_time),
            ("renorm_interval", self.renorm_interval),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(IoError::Config {
                        key: name.into(),
                        reason: format!("must be positive, got {v}"),
                    });
                }
            }
        }
        for (name, v) in [("grid_phi", self.grid_phi), ("grid_jz", self.grid_jz)] {
            if let Some(v) = v {
                if v < 2 {
                    return Err(IoError::Config {
                        key: name.into(),
                        reason: format!("grid dimensions must be >= 2, got {v}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Flat key/value view for manifests.
    pub fn as_map(&self) -> BTreeMap<String, String> {
        self.to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseGrid;
    use crate::spectrum::{build_fock_hamiltonian, diagonalize};

    fn small_spectrum() -> SpectrumResult {
        let p = ModelParams::new(1.0, 1.0, 0.4, 1.0, 1.0).unwrap();
        let h = build_fock_hamiltonian(&p, 6).unwrap();
        diagonalize(&p, &h).unwrap()
    }

    #[test]
    fn cache_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path()).unwrap();
        let spec = small_spectrum();
        cache.store(&spec).unwrap();
        let loaded = cache.load(&spec.params, &spec.basis).unwrap().expect("hit");
        assert_eq!(spec.eigenvalues, loaded.eigenvalues);
        assert_eq!(
            spec.eigenvectors.as_slice_memory_order().unwrap(),
            loaded.eigenvectors.as_slice_memory_order().unwrap()
        );
    }

    #[test]
    fn cache_miss_on_changed_params() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path()).unwrap();
        let spec = small_spectrum();
        cache.store(&spec).unwrap();
        let mut other = spec.params;
        other.gamma += 1e-9;
        assert!(cache.load(&other, &spec.basis).unwrap().is_none());
    }

    #[test]
    fn cache_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path()).unwrap();
        let spec = small_spectrum();
        let path = cache.store(&spec).unwrap();
        // Flip a payload byte.
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(cache.load(&spec.params, &spec.basis), Err(IoError::Corrupt(_))));
    }

    #[test]
    fn no_partial_entry_from_interrupted_write() {
        // The temp-then-rename contract: either the final file exists and
        // is complete, or nothing with the entry name exists.
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path()).unwrap();
        let spec = small_spectrum();
        let final_path = cache.entry_path(&spec.params, &spec.basis, true);
        assert!(!final_path.exists());
        cache.store(&spec).unwrap();
        assert!(final_path.exists());
        // No temp litter.
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref().unwrap().path().extension().map(|x| x != "spec").unwrap_or(true)
            })
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn values_only_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SpectrumCache::new(dir.path()).unwrap();
        let p = ModelParams::new(1.0, 1.0, 0.4, 1.0, 1.0).unwrap();
        let basis = BasisSpec { kind: BasisKind::Ecb, n_max: 30, parity: ParitySel::Plus };
        let values = vec![-1.5, 0.25, 3.75];
        cache.store_values(&p, &basis, &values).unwrap();
        assert_eq!(cache.load_values(&p, &basis).unwrap().unwrap(), values);
    }

    #[test]
    fn f64_formatting_round_trips() {
        for v in [0.1, -2.125, 1.0 / 3.0, 6.626e-34, f64::MAX, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg = RunConfig {
            omega: Some(1.0),
            gamma_rel: Some(2.0),
            j: Some(30.0),
            n_max: Some(100),
            epsilon: Some(-1.4),
            branch: Some("plus".into()),
            j_list: Some(vec![10.0, 20.0, 30.0]),
            restrict_converged: Some(true),
            rel_tol: Some(1e-10),
            out_dir: Some(PathBuf::from("/tmp/out")),
            ..Default::default()
        };
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_text("wibble = 3\n").is_err());
        assert!(RunConfig::from_text("rel_tol = -1.0\n").is_err());
        assert!(RunConfig::from_text("grid_phi = 1\n").is_err());
        assert!(RunConfig::from_text("# comment only\n").is_ok());
    }

    #[test]
    fn heatmap_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = ScalarMap::new(PhaseGrid::uniform(8, 6));
        for (iv, iu, jz, phi) in map.cells().collect::<Vec<_>>() {
            map.values[[iv, iu]] = (jz + phi.sin()).abs();
            map.flags[[iv, iu]] =
                if iu % 5 == 0 { CellFlag::Unreachable } else { CellFlag::Ok };
        }
        let p1 = dir.path().join("a.ppm");
        let p2 = dir.path().join("b.ppm");
        write_heatmap_ppm(&p1, &map, None).unwrap();
        write_heatmap_ppm(&p2, &map, None).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let bytes = std::fs::read(&p1).unwrap();
        assert!(bytes.starts_with(b"P6 8 6 255"));
    }

    #[test]
    fn manifest_lists_outputs_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data.csv");
        write_csv(&out, &["a", "b"], vec![vec!["1".into(), "2".into()]]).unwrap();
        let mut manifest = RunManifest::new("test", BTreeMap::new());
        manifest.add_output(&out).unwrap();
        let mpath = dir.path().join("manifest.json");
        manifest.write(&mpath).unwrap();
        let loaded: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
        assert_eq!(loaded.outputs.len(), 1);
        assert_eq!(loaded.outputs[0].sha256, sha256_file(&out).unwrap());
    }
}
