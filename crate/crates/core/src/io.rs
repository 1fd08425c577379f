//! Synthetic data, noise, error metrics, file formats and the experiment driver.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::element::{DictionaryElement, ElementClass, PenaltyNorm};
use crate::error::{invalid, Error, Result};
use crate::geom::{driscoll_healy_grid, reuter_grid, BallPoint, CapRegion, Grid, SurfacePoint};
use crate::kernel::KernelKind;
use crate::learn::{InfiniteDictionarySpec, LearnConfig, LearningSelector, LearntDictionary};
use crate::pursuit::{
    run_pursuit, DictionaryScan, FiniteSelector, ForwardModel, IterationRecord, PursuitConfig, PursuitState,
    Selection, Selector, StepInfo, Termination,
};
use crate::sh::{ShIndex, SpectralCoeffs};

/// Mean Earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// `σ` for a satellite orbit `h` km above the mean sphere.
pub fn sigma_from_height(height_km: f64) -> f64 {
    (EARTH_RADIUS_KM + height_km) / EARTH_RADIUS_KM
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelTerms {
    /// Band-limited coefficient table.
    Coefficients(SpectralCoeffs),
    /// Weighted combination of dictionary elements.
    Elements(Vec<(DictionaryElement, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialModel {
    pub name: String,
    pub terms: ModelTerms,
}

impl PotentialModel {
    /// Value of the potential at `σ η` (`σ = 1` is the surface).
    pub fn value_at(&self, sigma: f64, p: &SurfacePoint) -> f64 {
        match &self.terms {
            ModelTerms::Coefficients(c) => {
                let ys = crate::sh::eval_all(c.band_limit(), p);
                let mut acc = 0.0;
                for (k, (v, y)) in c.table().iter().zip(&ys).enumerate() {
                    let n = ShIndex::from_linear(k).n;
                    acc += v * y * sigma.powi(-(n as i32) - 1);
                }
                acc
            }
            ModelTerms::Elements(es) => es.iter().map(|(e, w)| w * e.value_at(sigma, p)).sum(),
        }
    }
}

/// Three harmonics plus three normalized Abel–Poisson kernels; the third
/// coordinate of every centre is used as `t` as written.
pub fn contrived_model() -> PotentialModel {
    use std::f64::consts::PI;
    let mut terms = vec![
        (DictionaryElement::sh(9, 5).expect("valid"), 1.0),
        (DictionaryElement::sh(5, 5).expect("valid"), 1.0),
        (DictionaryElement::sh(2, 0).expect("valid"), 1.0),
    ];
    for (r, phi, t) in [(0.5, 1.5 * PI, PI / 4.0), (0.75, 2.0 * PI, -PI / 4.0), (0.9, 0.5 * PI, PI / 4.0)] {
        terms.push((DictionaryElement::apk(r, phi, t, true).expect("valid"), 1.0));
    }
    PotentialModel {
        name: "contrived".into(),
        terms: ModelTerms::Elements(terms),
    }
}

/// Random band-limited model with degree amplitudes `scale / (n+1)^decay`.
pub fn random_model(band_limit: usize, decay: f64, seed: u64) -> PotentialModel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut c = SpectralCoeffs::zeros(band_limit);
    for (k, v) in c.table_mut().iter_mut().enumerate() {
        let n = ShIndex::from_linear(k).n;
        let g: f64 = StandardNormal.sample(&mut rng);
        *v = g / ((n + 1) as f64).powf(decay);
    }
    PotentialModel {
        name: format!("random-{band_limit}"),
        terms: ModelTerms::Coefficients(c),
    }
}

/// `y_i = (T f)(σ η_i)`.
pub fn synthesize(model: &PotentialModel, grid: &Grid, sigma: f64) -> Result<Vec<f64>> {
    if !(sigma >= 1.0) {
        return Err(invalid(format!("sigma = {sigma} must be at least 1")));
    }
    use rayon::prelude::*;
    Ok(grid.points().par_iter().map(|p| model.value_at(sigma, p)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: Option<u64>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { level: 0.05, seed: None }
    }
}

/// `y_i (1 + level ε_i)` with `ε_i` standard Gaussians from ChaCha20 seeded
/// by `seed_from_u64`.
pub fn add_noise(y: &[f64], spec: &NoiseSpec) -> Result<Vec<f64>> {
    if !(spec.level >= 0.0) {
        return Err(invalid("noise level must be non-negative"));
    }
    if spec.level == 0.0 {
        return Ok(y.to_vec());
    }
    let seed = spec
        .seed
        .ok_or_else(|| Error::Config("a seed is required for noisy data".into()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(y.iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v * (1.0 + spec.level * e)
        })
        .collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖residual‖ / ‖y‖`.
pub fn rel_data_error(residual: &[f64], y: &[f64]) -> Result<f64> {
    let d = norm(y);
    if d == 0.0 {
        return Err(Error::DivisionByZero("data norm"));
    }
    Ok(norm(residual) / d)
}

/// Root mean square of `approx − truth` over root mean square of `truth`.
pub fn rel_rmse(approx: &[f64], truth: &[f64]) -> Result<f64> {
    if approx.len() != truth.len() {
        return Err(invalid("approximation and truth differ in length"));
    }
    let d = norm(truth);
    if d == 0.0 {
        return Err(Error::DivisionByZero("truth norm"));
    }
    let diff: Vec<f64> = approx.iter().zip(truth).map(|(a, t)| a - t).collect();
    Ok(norm(&diff) / d)
}

/// [`rel_rmse`] with per-point weights (e.g. cell areas).
pub fn rel_rmse_weighted(approx: &[f64], truth: &[f64], weights: &[f64]) -> Result<f64> {
    if approx.len() != truth.len() || weights.len() != truth.len() {
        return Err(invalid("approximation, truth and weights differ in length"));
    }
    let num: f64 = approx
        .iter()
        .zip(truth)
        .zip(weights)
        .map(|((a, t), w)| w * (a - t) * (a - t))
        .sum();
    let den: f64 = truth.iter().zip(weights).map(|(t, w)| w * t * t).sum();
    if den == 0.0 {
        return Err(Error::DivisionByZero("truth norm"));
    }
    Ok((num / den).sqrt())
}

/// Area weights `sin θ` of an equiangular grid.
pub fn area_weights(grid: &Grid) -> Vec<f64> {
    grid.points().iter().map(|p| (1.0 - p.t() * p.t()).max(0.0).sqrt()).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CoeffRow {
    n: usize,
    j: i64,
    value: f64,
}

/// Reads `n,j,value` rows into a coefficient model.
pub fn ingest_coeffs<R: Read>(input: R) -> Result<PotentialModel> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut seen: BTreeMap<(usize, i64), f64> = BTreeMap::new();
    for (i, row) in rd.deserialize::<CoeffRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if row.j.unsigned_abs() as usize > row.n {
            return Err(invalid(format!("line {line}: index ({}, {}) has |j| > n", row.n, row.j)));
        }
        if seen.insert((row.n, row.j), row.value).is_some() {
            return Err(invalid(format!("line {line}: duplicate index ({}, {})", row.n, row.j)));
        }
    }
    let band_limit = seen.keys().map(|k| k.0).max().unwrap_or(0);
    let mut c = SpectralCoeffs::zeros(band_limit);
    for ((n, j), v) in seen {
        c.table_mut()[ShIndex { n, j }.linear()] = v;
    }
    Ok(PotentialModel {
        name: "coefficients".into(),
        terms: ModelTerms::Coefficients(c),
    })
}

/// Writes every coefficient of a table as `n,j,value`.
pub fn export_coeffs<W: Write>(c: &SpectralCoeffs, out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    for (k, v) in c.table().iter().enumerate() {
        let idx = ShIndex::from_linear(k);
        wr.serialize(CoeffRow {
            n: idx.n,
            j: idx.j,
            value: *v,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// One line of the dictionary file format.
pub fn element_line(e: &DictionaryElement) -> String {
    match e {
        DictionaryElement::Sh(i) => format!("SH {} {}", i.n, i.j),
        DictionaryElement::Slepian(s) => {
            let r = &s.region;
            format!("SL {:?} {:?} {:?} {:?} {} {}", r.c, r.alpha, r.beta, r.gamma, s.k, s.band_limit)
        }
        DictionaryElement::Apk { x, normalized } | DictionaryElement::Apw { x, normalized } => format!(
            "{} {:?} {:?} {:?} {}",
            e.class(),
            x.r(),
            x.phi(),
            x.t(),
            u8::from(*normalized)
        ),
    }
}

fn parse_f(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("{tok:?}: {e}"),
    })
}

fn parse_u(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>().map_err(|e| Error::Parse {
        line,
        msg: format!("{tok:?}: {e}"),
    })
}

/// Parses one dictionary line (`line` is used in diagnostics).
pub fn parse_element(text: &str, line: usize) -> Result<DictionaryElement> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let want = |n: usize| -> Result<()> {
        if toks.len() == n {
            Ok(())
        } else {
            Err(Error::Parse {
                line,
                msg: format!("expected {n} fields, found {}", toks.len()),
            })
        }
    };
    let wrap = |r: Result<DictionaryElement>| {
        r.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })
    };
    match toks.first().copied() {
        Some("SH") => {
            want(3)?;
            let j = toks[2].parse::<i64>().map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            wrap(DictionaryElement::sh(parse_u(toks[1], line)?, j))
        }
        Some("SL") => {
            want(7)?;
            let region = CapRegion::new(
                parse_f(toks[1], line)?,
                parse_f(toks[2], line)?,
                parse_f(toks[3], line)?,
                parse_f(toks[4], line)?,
            );
            let region = region.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            wrap(DictionaryElement::slepian(region, parse_u(toks[5], line)?, parse_u(toks[6], line)?))
        }
        Some(kind @ ("APK" | "APW")) => {
            want(5)?;
            let norm = match toks[4] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("normalization flag {other:?} is not 0 or 1"),
                    })
                }
            };
            let x = BallPoint::new(parse_f(toks[1], line)?, parse_f(toks[2], line)?, parse_f(toks[3], line)?);
            let x = x.map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?;
            let k = if kind == "APK" { KernelKind::Apk } else { KernelKind::Apw };
            Ok(DictionaryElement::kernel(k, x, norm))
        }
        other => Err(Error::Parse {
            line,
            msg: format!("unknown element tag {other:?}"),
        }),
    }
}

pub fn write_dictionary<W: Write>(elements: &[DictionaryElement], out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    for e in elements {
        writeln!(w, "{}", element_line(e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dictionary file; blank lines and `#` comments are skipped.
pub fn read_dictionary<R: Read>(input: R) -> Result<Vec<DictionaryElement>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        out.push(parse_element(text, line_no)?);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct DataRow {
    phi: f64,
    t: f64,
    value: f64,
}

/// Writes `phi,t,value` rows.
pub fn write_values<W: Write>(points: &[SurfacePoint], values: &[f64], out: W) -> Result<()> {
    if points.len() != values.len() {
        return Err(invalid("points and values differ in length"));
    }
    let mut wr = csv::Writer::from_writer(out);
    for (p, v) in points.iter().zip(values) {
        wr.serialize(DataRow {
            phi: p.phi(),
            t: p.t(),
            value: *v,
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `phi,t,value` rows into a grid and a value vector.
pub fn read_values<R: Read>(input: R) -> Result<(Grid, Vec<f64>)> {
    let mut rd = csv::Reader::from_reader(input);
    let mut pts = Vec::new();
    let mut vals = Vec::new();
    for (i, row) in rd.deserialize::<DataRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        pts.push(SurfacePoint::new(row.phi, row.t)?);
        vals.push(row.value);
    }
    Ok((Grid::custom(pts)?, vals))
}

pub fn write_records<W: Write>(records: &[IterationRecord], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads a log written by [`write_records`] or [`run_experiment`].
pub fn read_records<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    rd.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GridSpec {
    Reuter { gamma: u32 },
    DriscollHealy { bandwidth: u32 },
    File { path: PathBuf },
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        match self {
            GridSpec::Reuter { gamma } => reuter_grid(*gamma),
            GridSpec::DriscollHealy { bandwidth } => driscoll_healy_grid(*bandwidth),
            GridSpec::File { path } => Grid::read_csv(File::open(path)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Contrived,
    Coefficients { path: PathBuf },
    Random { band_limit: usize, decay: f64, seed: u64 },
    Dictionary { path: PathBuf },
}

impl ModelSpec {
    pub fn build(&self) -> Result<PotentialModel> {
        match self {
            ModelSpec::Contrived => Ok(contrived_model()),
            ModelSpec::Coefficients { path } => ingest_coeffs(File::open(path)?),
            ModelSpec::Random { band_limit, decay, seed } => Ok(random_model(*band_limit, *decay, *seed)),
            ModelSpec::Dictionary { path } => Ok(PotentialModel {
                name: path.display().to_string(),
                terms: ModelTerms::Elements(read_dictionary(File::open(path)?)?.into_iter().map(|e| (e, 1.0)).collect()),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Synthetic model evaluated on the data grid.
    pub model: Option<ModelSpec>,
    /// Measured values as a `phi,t,value` file (its points replace the grid).
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

/// Normalized kernels at every point of a Reuter grid, for each radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFamily {
    pub class: ElementClass,
    pub radii: Vec<f64>,
    pub reuter_gamma: u32,
}

/// All members of the rotated cap bases on a parameter lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlepianFamily {
    pub caps: Vec<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub band_limit: usize,
}

/// A finite dictionary described by families or a file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionarySpec {
    pub file: Option<PathBuf>,
    pub sh_max: Option<usize>,
    pub kernels: Vec<KernelFamily>,
    pub slepian: Option<SlepianFamily>,
}

impl DictionarySpec {
    pub fn build(&self) -> Result<Vec<DictionaryElement>> {
        let mut out = Vec::new();
        if let Some(path) = &self.file {
            out.extend(read_dictionary(File::open(path)?)?);
        }
        if let Some(n) = self.sh_max {
            out.extend(ShIndex::all(n).map(DictionaryElement::Sh));
        }
        if let Some(s) = &self.slepian {
            let count = (s.band_limit + 1) * (s.band_limit + 1);
            for &c in &s.caps {
                for &a in &s.alphas {
                    for &b in &s.betas {
                        for &g in &s.gammas {
                            let region = CapRegion::new(c, a, b, g)?;
                            for k in 1..=count {
                                out.push(DictionaryElement::slepian(region, k, s.band_limit)?);
                            }
                        }
                    }
                }
            }
        }
        for fam in &self.kernels {
            let kind = match fam.class {
                ElementClass::Apk => KernelKind::Apk,
                ElementClass::Apw => KernelKind::Apw,
                other => return Err(Error::Config(format!("{other} is not a kernel class"))),
            };
            let dirs = reuter_grid(fam.reuter_gamma)?;
            for &r in &fam.radii {
                for p in dirs.points() {
                    out.push(DictionaryElement::kernel(kind, BallPoint::new(r, p.phi(), p.t())?, true));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Exhaustive selection over the finite dictionary.
    Finite,
    /// Selection from the infinite dictionary, seeded by the finite one.
    Learn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnSection {
    pub spec: InfiniteDictionarySpec,
    pub config: LearnConfig,
}

impl Default for LearnSection {
    fn default() -> Self {
        Self {
            spec: InfiniteDictionarySpec::default(),
            config: LearnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub grid: Option<GridSpec>,
    pub area_weighted: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            grid: Some(GridSpec::DriscollHealy { bandwidth: 180 }),
            area_weighted: false,
        }
    }
}

fn default_grid() -> GridSpec {
    GridSpec::Reuter { gamma: 100 }
}

fn default_height() -> Option<f64> {
    Some(500.0)
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_grid")]
    pub grid: GridSpec,
    /// Satellite height in km; ignored when `sigma` is set.
    #[serde(default = "default_height")]
    pub height_km: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub penalty: PenaltyNorm,
    #[serde(default)]
    pub pursuit: PursuitConfig,
    pub mode: RunMode,
    #[serde(default)]
    pub learn: LearnSection,
    #[serde(default)]
    pub dictionary: DictionarySpec,
    /// Allow only the first `N + 1` dictionary elements in iteration `N + 1`.
    #[serde(default)]
    pub replay: bool,
    pub data: DataSection,
    #[serde(default)]
    pub evaluation: EvalSection,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn sigma(&self) -> Result<f64> {
        match (self.sigma, self.height_km) {
            (Some(s), _) => Ok(s),
            (None, Some(h)) => Ok(sigma_from_height(h)),
            (None, None) => Err(Error::Config("either sigma or height_km is required".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pursuit.validate()?;
        match (&self.data.model, &self.data.file) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(Error::Config("exactly one data source (model or file) is required".into())),
        }
        if self.mode == RunMode::Learn {
            self.learn.spec.validate()?;
            self.learn.config.validate()?;
        }
        if self.data.noise.level > 0.0 && self.data.noise.seed.is_none() && self.data.model.is_some() {
            return Err(Error::Config("a seed is required for noisy data".into()));
        }
        Ok(())
    }
}

/// Forward model, data and dictionaries of an experiment, ready to run.
pub struct Prepared {
    pub fm: ForwardModel,
    pub y: Vec<f64>,
    pub truth: Option<PotentialModel>,
    pub dictionary: Vec<DictionaryElement>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let sigma = cfg.sigma()?;
    let (grid, y, truth) = match (&cfg.data.model, &cfg.data.file) {
        (Some(m), _) => {
            let grid = cfg.grid.build()?;
            let model = m.build()?;
            let clean = synthesize(&model, &grid, sigma)?;
            (grid, add_noise(&clean, &cfg.data.noise)?, Some(model))
        }
        (None, Some(path)) => {
            let (grid, y) = read_values(File::open(path)?)?;
            (grid, y, None)
        }
        (None, None) => unreachable!("validated"),
    };
    let fm = ForwardModel::new(grid, sigma, cfg.penalty)?;
    let dictionary = cfg.dictionary.build()?;
    Ok(Prepared {
        fm,
        y,
        truth,
        dictionary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub iterations: usize,
    pub termination: Termination,
    /// Maximal SH degree among the selected elements.
    pub nu: Option<usize>,
    pub rel_rmse: Option<f64>,
    pub rel_data_error: f64,
    pub lambda: f64,
    pub wall_seconds: f64,
}

/// Everything an experiment produces.
pub struct RunArtifacts {
    pub report: RunReport,
    pub records: Vec<IterationRecord>,
    pub seconds: Vec<f64>,
    pub learnt: LearntDictionary,
    pub state: PursuitState,
    pub eval_points: Vec<SurfacePoint>,
    pub approximation: Vec<f64>,
    /// Best starting-dictionary value and chosen value of every selection.
    pub dominance: Vec<(Option<f64>, f64)>,
}

/// Runs the pursuit of a prepared experiment. `observer` may stream each
/// log record (e.g. to disk).
pub fn execute(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    observer: &mut dyn FnMut(&IterationRecord) -> Result<()>,
) -> Result<RunArtifacts> {
    let start = Instant::now();
    let mut state = PursuitState::new(prep.y.clone());
    let mut selector: Box<dyn Selector> = match cfg.mode {
        RunMode::Finite => Box::new(FiniteSelector {
            scan: DictionaryScan::new(&prep.fm, prep.dictionary.clone())?,
            replay: cfg.replay,
        }),
        RunMode::Learn => Box::new(LearningSelector::new(
            &prep.fm,
            cfg.learn.spec.clone(),
            cfg.learn.config,
            prep.dictionary.clone(),
        )?),
    };
    let mut learnt = LearntDictionary::new();
    let mut dominance = Vec::new();
    let mut hook = |_: &PursuitState, sel: &Selection, info: &StepInfo, rec: &IterationRecord| -> Result<()> {
        learnt.push(sel.element.clone(), rec.iteration, info.alpha);
        dominance.push((sel.start_best, sel.value));
        observer(rec)
    };
    struct Hook<'h>(&'h mut dyn FnMut(&PursuitState, &Selection, &StepInfo, &IterationRecord) -> Result<()>);
    impl crate::pursuit::IterationObserver for Hook<'_> {
        fn observe(&mut self, s: &PursuitState, sel: &Selection, i: &StepInfo, r: &IterationRecord) -> Result<()> {
            (self.0)(s, sel, i, r)
        }
    }
    let outcome = run_pursuit(&mut state, &prep.fm, &cfg.pursuit, selector.as_mut(), &mut Hook(&mut hook))?;
    learnt.finalize(&state);
    let (eval_points, approximation, rel) = match &cfg.evaluation.grid {
        Some(g) => {
            let grid = g.build()?;
            let approx = state.approximation_at(grid.points());
            let rel = match &prep.truth {
                Some(m) => {
                    let truth = synthesize(m, &grid, 1.0)?;
                    Some(if cfg.evaluation.area_weighted {
                        rel_rmse_weighted(&approx, &truth, &area_weights(&grid))?
                    } else {
                        rel_rmse(&approx, &truth)?
                    })
                }
                None => None,
            };
            (grid.points().to_vec(), approx, rel)
        }
        None => (Vec::new(), Vec::new(), None),
    };
    let report = RunReport {
        iterations: state.iteration(),
        termination: outcome.termination,
        nu: learnt.nu(),
        rel_rmse: rel,
        rel_data_error: state.rel_data_error(),
        lambda: state.lambda(&cfg.pursuit),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(RunArtifacts {
        report,
        records: outcome.records,
        seconds: outcome.seconds,
        learnt,
        state,
        eval_points,
        approximation,
        dominance,
    })
}

/// File names written into the output directory.
pub mod files {
    pub const LOG: &str = "log.csv";
    pub const TIMINGS: &str = "timings.csv";
    pub const DICTIONARY: &str = "dictionary.txt";
    pub const APPROXIMATION: &str = "approximation.csv";
    pub const SUMMARY: &str = "summary.json";
}

const LOG_HEADER: &str = "iteration,element,provenance,alpha,objective,rel_data_error,tikhonov\n";

/// Prepares, runs and writes all outputs of an experiment. The iteration log
/// is streamed, so it survives a failure later in the run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let dir = &cfg.output;
    fs::create_dir_all(dir)?;
    let prep = prepare(cfg)?;
    let mut log = csv::Writer::from_path(dir.join(files::LOG))?;
    let mut observer = |rec: &IterationRecord| -> Result<()> {
        log.serialize(rec)?;
        log.flush()?;
        Ok(())
    };
    let art = execute(cfg, &prep, &mut observer)?;
    drop(log);
    if art.records.is_empty() {
        fs::write(dir.join(files::LOG), LOG_HEADER)?;
    }
    let mut t = csv::Writer::from_path(dir.join(files::TIMINGS))?;
    t.write_record(["iteration", "seconds"])?;
    for (i, s) in art.seconds.iter().enumerate() {
        t.write_record([(i + 1).to_string(), s.to_string()])?;
    }
    t.flush()?;
    write_dictionary(&art.learnt.elements(), File::create(dir.join(files::DICTIONARY))?)?;
    write_values(&art.eval_points, &art.approximation, File::create(dir.join(files::APPROXIMATION))?)?;
    fs::write(
        dir.join(files::SUMMARY),
        serde_json::to_string_pretty(&art.report).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(art.report)
}
