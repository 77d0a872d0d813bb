//! On-disk formats: symbols and coefficient fields (JSON), kernel fields and
//! transforms (CSV), a binary kernel cache, and Matrix Market export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anikern_core::aniso::{MultiIndex, Symbol, Term, WeightVector};
use anikern_core::estimator::BoundFit;
use anikern_core::grid::AnisoGrid;
use anikern_core::kernel::KernelField;
use anikern_core::legendre::LfField;
use anikern_core::linalg::CMatrix;
use anikern_core::operator::{CoefficientField, CoefficientPair, PrincipalCoefficients};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] anikern_core::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| FormatError::Json { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| FormatError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// symbols

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub beta: Vec<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    pub m: Vec<u32>,
    pub terms: Vec<TermSpec>,
}

impl SymbolSpec {
    pub fn build(&self) -> anikern_core::Result<Symbol> {
        let w = WeightVector::new(self.m.clone())?;
        let terms = self
            .terms
            .iter()
            .map(|t| Term { beta: MultiIndex::new(t.beta.clone()), coeff: Complex64::new(t.re, t.im) })
            .collect();
        Symbol::new(w, terms)
    }

    pub fn from_symbol(s: &Symbol) -> Self {
        SymbolSpec {
            m: s.weights().as_slice().to_vec(),
            terms: s.terms().iter().map(|t| TermSpec { beta: t.beta.0.clone(), re: t.coeff.re, im: t.coeff.im }).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub radii: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn build(&self) -> anikern_core::Result<AnisoGrid> {
        AnisoGrid::new(self.radii.clone(), self.counts.clone())
    }

    pub fn from_grid(g: &AnisoGrid) -> Self {
        GridSpec { radii: g.radii().to_vec(), counts: g.counts().to_vec() }
    }
}

// ---------------------------------------------------------------------------
// coefficient fields

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

/// How the node values of one coefficient are given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ValuesSpec {
    Constant { re: f64, #[serde(default)] im: f64 },
    /// Alternating real values on cubes of side `cell` anchored at the lower box corner.
    Checkerboard { values: [f64; 2], cell: f64 },
    /// Little-endian `f64` pairs `(re, im)` for every grid node in C order,
    /// path relative to the document.
    Blob { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub alpha: Vec<u32>,
    pub beta: Vec<u32>,
    pub values: ValuesSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub m: Vec<u32>,
    /// Constant principal matrix `A` of the reference operator.
    pub reference: Vec<EntrySpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub pairs: Vec<PairSpec>,
}

impl CoefficientSpec {
    /// Blob files referenced by the spec, resolved against `base`.
    pub fn blob_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.pairs
            .iter()
            .filter_map(|p| match &p.values {
                ValuesSpec::Blob { path } => Some(base.join(path)),
                _ => None,
            })
            .collect()
    }

    pub fn reference(&self) -> anikern_core::Result<PrincipalCoefficients> {
        let w = WeightVector::new(self.m.clone())?;
        let entries: Vec<_> = self
            .reference
            .iter()
            .map(|e| (MultiIndex::new(e.alpha.clone()), MultiIndex::new(e.beta.clone()), Complex64::new(e.re, e.im)))
            .collect();
        PrincipalCoefficients::new(w, &entries)
    }

    pub fn build(&self, grid: &AnisoGrid, base: &Path) -> Result<CoefficientField> {
        if let Some(g) = &self.grid {
            if g.build()? != *grid {
                return Err(FormatError::Invalid("coefficient grid differs from the experiment grid".into()));
            }
        }
        let reference = self.reference()?;
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            let values = match &p.values {
                ValuesSpec::Constant { re, im } => vec![Complex64::new(*re, *im); grid.len()],
                ValuesSpec::Checkerboard { values, cell } => {
                    if !(*cell > 0.0) {
                        return Err(FormatError::Invalid("checkerboard cell must be positive".into()));
                    }
                    (0..grid.len())
                        .map(|j| {
                            let x = grid.node(j);
                            let parity: i64 = x
                                .iter()
                                .zip(grid.radii())
                                .map(|(xk, r)| (((xk + r) / cell) * (1.0 + 1e-12)).floor() as i64)
                                .sum();
                            Complex64::new(values[parity.rem_euclid(2) as usize], 0.0)
                        })
                        .collect()
                }
                ValuesSpec::Blob { path } => read_blob(&base.join(path), grid.len())?,
            };
            pairs.push(CoefficientPair { alpha: MultiIndex::new(p.alpha.clone()), beta: MultiIndex::new(p.beta.clone()), values });
        }
        Ok(CoefficientField::new(grid.clone(), reference, pairs)?)
    }
}

pub fn read_blob(path: &Path, n: usize) -> Result<Vec<Complex64>> {
    let mut bytes = Vec::new();
    File::open(path).map_err(io_err(path))?.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() != 16 * n {
        return Err(FormatError::Invalid(format!("{}: expected {} bytes, found {}", path.display(), 16 * n, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect())
}

pub fn write_blob(path: &Path, values: &[Complex64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for v in values {
        w.write_all(&v.re.to_le_bytes()).map_err(io_err(path))?;
        w.write_all(&v.im.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// kernel fields

pub fn write_kernel_csv(path: &Path, k: &KernelField) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = k.grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.extend(["re", "im", "abs"].map(String::from));
    w.write_record(&header)?;
    for (j, v) in k.values.iter().enumerate() {
        let mut row = vec![k.t.to_string()];
        row.extend(k.grid.node(j).iter().map(|x| x.to_string()));
        row.extend([v.re.to_string(), v.im.to_string(), v.norm().to_string()]);
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub grid: GridSpec,
    pub t: f64,
    pub symbol_hash: String,
    pub freq_radii: Vec<f64>,
    pub freq_counts: Vec<usize>,
}

/// JSON header line, then the values as little-endian `f64` pairs `(re, im)`.
pub fn write_kernel_cache(path: &Path, k: &KernelField) -> Result<()> {
    let header = CacheHeader {
        grid: GridSpec::from_grid(&k.grid),
        t: k.t,
        symbol_hash: k.symbol_hash.clone(),
        freq_radii: k.freq_radii.clone(),
        freq_counts: k.freq_counts.clone(),
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    serde_json::to_writer(&mut w, &header).map_err(|source| FormatError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for v in &k.values {
        w.write_all(&v.re.to_le_bytes()).map_err(io_err(path))?;
        w.write_all(&v.im.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_kernel_cache(path: &Path) -> Result<KernelField> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err(path))?;
    let header: CacheHeader =
        serde_json::from_str(&line).map_err(|source| FormatError::Json { path: path.to_path_buf(), source })?;
    let grid = header.grid.build()?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() != 16 * grid.len() {
        return Err(FormatError::Invalid(format!("{}: truncated kernel cache", path.display())));
    }
    let values = bytes
        .chunks_exact(16)
        .map(|c| Complex64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
        .collect();
    Ok(KernelField {
        grid,
        t: header.t,
        values,
        symbol_hash: header.symbol_hash,
        freq_radii: header.freq_radii,
        freq_counts: header.freq_counts,
    })
}

// ---------------------------------------------------------------------------
// transforms, fits, matrices

pub fn write_lf_csv(path: &Path, f: &LfField) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = f.grid.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    header.push("lf_value".into());
    header.extend((1..=d).map(|i| format!("argmax_{i}")));
    header.push("status".into());
    w.write_record(&header)?;
    for (j, r) in f.results.iter().enumerate() {
        let mut row: Vec<String> = f.grid.node(j).iter().map(|x| x.to_string()).collect();
        row.push(r.value.to_string());
        row.extend(r.argmax.iter().map(|x| x.to_string()));
        row.push(r.status.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_margins_csv(path: &Path, fit: &BoundFit) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = fit.margins.first().map(|m| m.x.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.extend((1..=d).map(|i| format!("y_{i}")));
    header.extend(["abs_k", "log_bound", "margin"].map(String::from));
    w.write_record(&header)?;
    for m in &fit.margins {
        let mut row = vec![m.t.to_string()];
        row.extend(m.x.iter().chain(&m.y).map(|v| v.to_string()));
        row.extend([m.abs_k.to_string(), m.log_bound.to_string(), m.margin.to_string()]);
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))
}

/// Two-column numeric CSV with a header.
pub fn write_pairs_csv(path: &Path, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(io_err(path))
}

/// Matrix Market `coordinate complex general`, 1-based, nonzeros only.
pub fn write_matrix_market(path: &Path, m: &CMatrix) -> Result<()> {
    let nnz = m.iter().filter(|v| v.norm() != 0.0).count();
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let e = io_err(path);
    let mut body = String::new();
    body.push_str("%%MatrixMarket matrix coordinate complex general\n");
    body.push_str(&format!("{} {} {nnz}\n", m.nrows(), m.ncols()));
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if v.norm() != 0.0 {
                body.push_str(&format!("{} {} {:e} {:e}\n", r + 1, c + 1, v.re, v.im));
            }
        }
    }
    w.write_all(body.as_bytes()).map_err(e)?;
    w.flush().map_err(io_err(path))
}

pub fn read_matrix_market(path: &Path) -> Result<CMatrix> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let bad = || FormatError::Invalid(format!("{}: malformed Matrix Market file", path.display()));
    let size: Vec<usize> = lines.next().ok_or_else(bad)?.split_whitespace().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    if size.len() != 3 {
        return Err(bad());
    }
    let mut m = CMatrix::zeros(size[0], size[1]);
    for line in lines.take(size[2]) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let r: usize = f[0].parse().map_err(|_| bad())?;
        let c: usize = f[1].parse().map_err(|_| bad())?;
        m[(r - 1, c - 1)] = Complex64::new(f[2].parse().map_err(|_| bad())?, f[3].parse().map_err(|_| bad())?);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use anikern_core::kernel::kernel_cc;

    #[test]
    fn symbol_json_roundtrip() {
        let text = r#"{"m":[1,2],"terms":[{"beta":[2,0],"re":1.0,"im":0.0},{"beta":[0,4],"re":1.0}]}"#;
        let spec: SymbolSpec = serde_json::from_str(text).unwrap();
        let s = spec.build().unwrap();
        assert_eq!(SymbolSpec::from_symbol(&s).build().unwrap(), s);
        assert!(serde_json::from_str::<SymbolSpec>(r#"{"m":[1],"terms":[],"x":1}"#).is_err());
    }

    #[test]
    fn kernel_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = SymbolSpec { m: vec![1], terms: vec![TermSpec { beta: vec![2], re: 1.0, im: 0.0 }] }.build().unwrap();
        let k = kernel_cc(&s, 1.0, &AnisoGrid::cube(1, 10.0, 40).unwrap(), &[128]).unwrap();
        let p = dir.path().join("k.bin");
        write_kernel_cache(&p, &k).unwrap();
        assert_eq!(read_kernel_cache(&p).unwrap(), k);
    }

    #[test]
    fn matrix_market_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = CMatrix::from_fn(3, 3, |r, c| if r == c { Complex64::new(0.1 + r as f64, -1.0 / 3.0) } else { Complex64::new(0.0, 0.0) });
        let p = dir.path().join("m.mtx");
        write_matrix_market(&p, &m).unwrap();
        assert_eq!(read_matrix_market(&p).unwrap(), m);
    }

    #[test]
    fn checkerboard_and_blob_values() {
        let dir = tempfile::tempdir().unwrap();
        let grid = AnisoGrid::cube(1, 4.0, 16).unwrap();
        write_blob(&dir.path().join("a.bin"), &vec![Complex64::new(1.2, 0.0); grid.len()]).unwrap();
        let spec = CoefficientSpec {
            m: vec![1],
            reference: vec![EntrySpec { alpha: vec![1], beta: vec![1], re: 1.0, im: 0.0 }],
            grid: None,
            pairs: vec![
                PairSpec { alpha: vec![1], beta: vec![1], values: ValuesSpec::Checkerboard { values: [0.75, 1.5], cell: 0.5 } },
                PairSpec { alpha: vec![0], beta: vec![0], values: ValuesSpec::Blob { path: "a.bin".into() } },
            ],
        };
        let field = spec.build(&grid, dir.path()).unwrap();
        let principal = &field.pairs().iter().find(|p| p.alpha.0 == [1]).unwrap().values;
        assert_eq!(principal[0].re, 0.75);
        assert_eq!(principal[1].re, 1.5);
        assert_eq!(principal[2].re, 0.75);
        assert!((field.upper_constant() - 1.5).abs() < 1e-12);
    }
}
