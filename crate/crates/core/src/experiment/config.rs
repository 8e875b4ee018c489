//! Line-oriented `key = value` experiment files with `[section]` headers.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::alg1::{EnrichmentOptions, QSource};
use crate::alg2::Alg2Init;
use crate::basis::{BasisMatrix, BasisSet, BasisVector};
use crate::error::{Error, Result};
use crate::forward::{CostSpec, ForwardOptions, GainModel};
use crate::linalg::Quadrature;
use crate::sgd::{BatchMode, SgdOptions};
use crate::sim::{builtin_basis, make_builtin_system, BuiltinSystem, DynamicalSystem, DEFAULT_DT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Alg1,
    Alg2,
}

/// How the expert generates its demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertSpec {
    pub cost: CostSpec,
    /// Explicit expert gain over `sigma_u`; otherwise solved from `cost`.
    pub gain: Option<DMatrix<f64>>,
    pub x0: DVector<f64>,
    pub duration: f64,
    pub dt: f64,
    /// Recorded trajectory to use instead of simulating.
    pub trajectory: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Multiplicative measurement noise fraction.
    pub pct: f64,
    /// Input-dynamics uncertainty of the learner model.
    pub uncertainty: f64,
    pub grid: Vec<f64>,
    pub trials: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            pct: 0.0,
            uncertainty: 0.0,
            grid: (0..=10).map(|i| i as f64 * 0.01).collect(),
            trials: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub system: String,
    pub system_params: BTreeMap<String, f64>,
    pub basis: BasisSet,
    pub expert: ExpertSpec,
    pub init: CostSpec,
    pub algorithm: Algorithm,
    pub sgd: SgdOptions,
    pub forward: ForwardOptions,
    pub q_source: QSource,
    pub enrichment: EnrichmentOptions,
    /// Starting point for the known-dynamics estimator; random when absent.
    pub alg2_init: Option<Alg2Init>,
    pub noise: NoiseSpec,
    /// Approximate point count of the verification grid over the domain.
    pub verify_points: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses a config; relative file paths inside resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let ini = Ini::parse(text)?;
        ini.check_sections(&[
            "system",
            "basis",
            "expert",
            "init",
            "algorithm",
            "stack",
            "forward",
            "enrichment",
            "noise",
            "verify",
            "run",
        ])?;
        let empty = Section::default();
        let sec = |name: &str| ini.section(name).unwrap_or(&empty);

        let system_sec = ini.require_section("system")?;
        let name_entry = system_sec.require("name")?;
        let system = name_entry.value.clone();
        let builtin: BuiltinSystem = system
            .parse()
            .map_err(|e: Error| Error::config(name_entry.line, name_entry.col, e.to_string()))?;
        let mut system_params = BTreeMap::new();
        for e in &system_sec.entries {
            if e.key != "name" {
                system_params.insert(e.key.clone(), e.number()?);
                e.used.set(true);
            }
        }
        let sys = make_builtin_system(&system, &system_params)
            .map_err(|e| Error::config(system_sec.line, 1, e.to_string()))?;
        system_sec.finish()?;
        let n = sys.state_dim();
        let m = sys.input_dim();

        let basis = parse_basis(sec("basis"), builtin, n)?;

        let ex = ini.require_section("expert")?;
        let expert_cost = parse_cost(ex, &basis, &sys)?;
        let gain = match ex.get("gain") {
            Some(e) => Some(e.matrix_shaped(m, basis.l_u())?),
            None => None,
        };
        let x0 = ex.require("x0")?.vector_len(n)?;
        let duration = ex.f64_or("duration", 10.0)?;
        let dt = ex.f64_or("dt", DEFAULT_DT)?;
        let trajectory = ex.get("trajectory").map(|e| {
            e.used.set(true);
            base_dir.join(&e.value)
        });
        ex.finish()?;
        let expert = ExpertSpec {
            cost: expert_cost,
            gain,
            x0,
            duration,
            dt,
            trajectory,
        };

        let init_sec = ini.require_section("init")?;
        let init = parse_cost(init_sec, &basis, &sys)?;
        let alg2_init = match init_sec.get("w_v") {
            Some(e) => Some(Alg2Init {
                r: init.r.clone(),
                w_v: e.vector_len(basis.l_v())?,
            }),
            None => None,
        };
        init_sec.finish()?;

        let alg = sec("algorithm");
        let algorithm = match alg.get("kind") {
            None => Algorithm::Alg1,
            Some(e) => e.choice(&[("alg1", Algorithm::Alg1), ("alg2", Algorithm::Alg2)])?,
        };
        let mut sgd = SgdOptions {
            fix_r: m == 1,
            ..SgdOptions::default()
        };
        sgd.alpha_r = alg.f64_or("alpha_r", sgd.alpha_r)?;
        sgd.alpha_v = alg.f64_or("alpha_v", sgd.alpha_v)?;
        if let Some(e) = alg.get("epsilon_e") {
            sgd.epsilon_e = Some(e.number()?);
        }
        sgd.window = alg.usize_or("window", sgd.window)?;
        sgd.sample_floor = alg.f64_or("sample_floor", sgd.sample_floor)?;
        sgd.max_iter = alg.usize_or("max_iter", sgd.max_iter)?;
        sgd.max_restarts = alg.usize_or("max_restarts", sgd.max_restarts)?;
        sgd.eval_batch = alg.usize_or("eval_batch", sgd.eval_batch)?;
        sgd.positivity_samples = alg.usize_or("positivity_samples", sgd.positivity_samples)?;
        sgd.fix_r = alg.bool_or("fix_r", sgd.fix_r)?;
        if let Some(e) = alg.get("batch_mode") {
            sgd.batch_mode = e.choice(&[("stochastic", BatchMode::Stochastic), ("full_batch", BatchMode::FullBatch)])?;
        }
        let q_source = match alg.get("q_source") {
            None => QSource::Auto,
            Some(e) => e.choice(&[
                ("expert", QSource::Expert),
                ("enhanced", QSource::Enhanced),
                ("auto", QSource::Auto),
            ])?,
        };
        alg.finish()?;

        let st = sec("stack");
        sgd.stack.window = st.f64_or("window", sgd.stack.window)?;
        sgd.stack.stride = st.f64_or("stride", sgd.stack.stride)?;
        sgd.stack.amplitude_floor = st.f64_or("amplitude_floor", sgd.stack.amplitude_floor)?;
        sgd.sigma_min_threshold = st.f64_or("sigma_min", sgd.sigma_min_threshold)?;
        if let Some(e) = st.get("quadrature") {
            sgd.stack.quadrature = e.quadrature()?;
        }
        st.finish()?;

        let fw = sec("forward");
        let mut forward = ForwardOptions {
            gain_model: if sys.input_weights().is_some() {
                GainModel::FromValue
            } else {
                GainModel::Free
            },
            ..ForwardOptions::default()
        };
        forward.window = fw.f64_or("window", forward.window)?;
        forward.tol = fw.f64_or("tol", forward.tol)?;
        forward.max_iter = fw.usize_or("max_iter", forward.max_iter)?;
        forward.rollouts = fw.usize_or("rollouts", forward.rollouts)?;
        forward.start_fraction = fw.f64_or("start_fraction", forward.start_fraction)?;
        forward.rollout_duration = fw.f64_or("rollout_duration", forward.rollout_duration)?;
        forward.probe_count = fw.usize_or("probe_count", forward.probe_count)?;
        forward.probe_fraction = fw.f64_or("probe_fraction", forward.probe_fraction)?;
        forward.probe_band_hz.0 = fw.f64_or("probe_band_lo", forward.probe_band_hz.0)?;
        forward.probe_band_hz.1 = fw.f64_or("probe_band_hi", forward.probe_band_hz.1)?;
        if let Some(e) = fw.get("quadrature") {
            forward.quadrature = e.quadrature()?;
        }
        if let Some(e) = fw.get("gain_model") {
            forward.gain_model = e.choice(&[("free", GainModel::Free), ("from_value", GainModel::FromValue)])?;
        }
        fw.finish()?;

        let en = sec("enrichment");
        let mut enrichment = EnrichmentOptions::default();
        enrichment.count = en.usize_or("count", enrichment.count)?;
        enrichment.band_hz.0 = en.f64_or("band_lo", enrichment.band_hz.0)?;
        enrichment.band_hz.1 = en.f64_or("band_hi", enrichment.band_hz.1)?;
        enrichment.fraction = en.f64_or("fraction", enrichment.fraction)?;
        if let Some(e) = en.get("duration") {
            enrichment.duration = Some(e.number()?);
        }
        en.finish()?;

        let no = sec("noise");
        let mut noise = NoiseSpec::default();
        noise.pct = no.f64_or("pct", noise.pct)?;
        noise.uncertainty = no.f64_or("uncertainty", noise.uncertainty)?;
        if let Some(e) = no.get("grid") {
            noise.grid = e.vector()?.iter().copied().collect();
        }
        noise.trials = no.usize_or("trials", noise.trials)?;
        no.finish()?;

        let ve = sec("verify");
        let verify_points = ve.usize_or("points", 4096)?;
        ve.finish()?;

        let run = ini.require_section("run")?;
        let seed_entry = run.require("seed")?;
        let seed = seed_entry
            .value
            .parse::<u64>()
            .map_err(|_| Error::config(seed_entry.line, seed_entry.col, "seed must be an unsigned integer"))?;
        let out_dir = match run.get("out") {
            Some(e) => {
                e.used.set(true);
                PathBuf::from(&e.value)
            }
            None => PathBuf::from("out").join(&system),
        };
        run.finish()?;

        sgd.seed = seed;
        forward.seed = seed;
        let cfg = ExperimentConfig {
            system,
            system_params,
            basis,
            expert,
            init,
            algorithm,
            sgd,
            forward,
            q_source,
            enrichment,
            alg2_init,
            noise,
            verify_points,
            seed,
            out_dir,
        };
        cfg.sgd.validate().map_err(|e| Error::config(alg_line(&ini), 1, e.to_string()))?;
        Ok(cfg)
    }

    pub fn build_system(&self) -> Result<DynamicalSystem> {
        make_builtin_system(&self.system, &self.system_params)
    }

    /// Replaces the master seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sgd.seed = seed;
        self.forward.seed = seed;
        self
    }
}

fn alg_line(ini: &Ini) -> usize {
    ini.section("algorithm").map_or(1, |s| s.line)
}

fn parse_basis(sec: &Section, builtin: BuiltinSystem, n: usize) -> Result<BasisSet> {
    let default = builtin_basis(builtin);
    let vector = |key: &str, fallback: &BasisVector| -> Result<BasisVector> {
        match sec.get_alias(key) {
            None => Ok(fallback.clone()),
            Some(e) => BasisVector::parse(&e.value, n).map_err(|err| e.located(err)),
        }
    };
    let sigma_v = vector("sigma_v", &default.sigma_v)?;
    let sigma_q = vector("sigma_q", &default.sigma_q)?;
    let sigma_u = vector("sigma_u", &default.sigma_u)?;
    let sigma_g = match sec.get_alias("sigma_g") {
        None => default.sigma_g.clone(),
        Some(e) => BasisMatrix::parse(&e.value, n).map_err(|err| e.located(err))?,
    };
    sec.finish()?;
    BasisSet::new(n, sigma_v, sigma_q, sigma_g, sigma_u).map_err(|e| Error::config(sec.line.max(1), 1, e.to_string()))
}

/// `w_q` (weights) or `q_bar` (quadratic matrix) plus `r` (scalar, diagonal or matrix).
fn parse_cost(sec: &Section, basis: &BasisSet, sys: &DynamicalSystem) -> Result<CostSpec> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    let w_q = match (sec.get("w_q"), sec.get("q_bar")) {
        (Some(e), None) => e.vector_len(basis.l_q())?,
        (None, Some(e)) => {
            let q = e.matrix_shaped(n, n)?;
            basis
                .sigma_q
                .weights_for_quadratic(&q, sys.domain(), 0)
                .map_err(|err| Error::config(e.line, e.col, err.to_string()))?
        }
        (Some(e), Some(_)) => return Err(Error::config(e.line, e.col, "give either `w_q` or `q_bar`, not both")),
        (None, None) => return Err(Error::config(sec.line, 1, format!("[{}] needs `w_q` or `q_bar`", sec.name))),
    };
    let r_entry = sec.require("r")?;
    let r = r_entry.weight_matrix(m)?;
    CostSpec::new(w_q, r).map_err(|err| Error::config(r_entry.line, r_entry.col, err.to_string()))
}

#[derive(Debug, Default)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    /// 1-based column where the value starts.
    col: usize,
    used: Cell<bool>,
}

impl Entry {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::config(self.line, self.col, message)
    }

    /// Maps a basis parse error onto this entry's position.
    fn located(&self, err: Error) -> Error {
        match err {
            Error::BasisParse { column, message } => {
                Error::config(self.line, self.col + column.saturating_sub(1), message)
            }
            other => self.err(other.to_string()),
        }
    }

    fn number(&self) -> Result<f64> {
        self.used.set(true);
        parse_number(&self.value).ok_or_else(|| self.err(format!("`{}` is not a number", self.value)))
    }

    fn vector(&self) -> Result<DVector<f64>> {
        self.used.set(true);
        let mut out = Vec::new();
        let mut offset = 0;
        for item in self.value.split(',') {
            let t = item.trim();
            match parse_number(t) {
                Some(v) => out.push(v),
                None => {
                    let lead = item.len() - item.trim_start().len();
                    return Err(Error::config(
                        self.line,
                        self.col + offset + lead,
                        format!("`{t}` is not a number"),
                    ));
                }
            }
            offset += item.len() + 1;
        }
        Ok(DVector::from_vec(out))
    }

    fn vector_len(&self, len: usize) -> Result<DVector<f64>> {
        let v = self.vector()?;
        if v.len() != len {
            return Err(self.err(format!("`{}` needs {len} values, found {}", self.key, v.len())));
        }
        Ok(v)
    }

    /// Rows separated by `;`, entries by `,`.
    fn matrix(&self) -> Result<DMatrix<f64>> {
        self.used.set(true);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for row in self.value.split(';') {
            let vals: Option<Vec<f64>> = row.split(',').map(|t| parse_number(t.trim())).collect();
            rows.push(vals.ok_or_else(|| self.err(format!("malformed matrix row `{}`", row.trim())))?);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(self.err("matrix rows have different lengths"));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    fn matrix_shaped(&self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mat = self.matrix()?;
        if mat.shape() == (rows, cols) {
            return Ok(mat);
        }
        if rows == 1 && mat.nrows() * mat.ncols() == cols {
            return Ok(DMatrix::from_row_slice(1, cols, mat.as_slice()));
        }
        Err(self.err(format!(
            "`{}` must be {rows}x{cols}, found {}x{}",
            self.key,
            mat.nrows(),
            mat.ncols()
        )))
    }

    /// Scalar (times identity), `m` diagonal entries, or a full `m x m` matrix.
    fn weight_matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        let mat = self.matrix()?;
        match mat.shape() {
            (1, 1) => Ok(DMatrix::identity(m, m) * mat[(0, 0)]),
            (1, c) if c == m => Ok(DMatrix::from_diagonal(&DVector::from_row_slice(mat.as_slice()))),
            (r, c) if r == m && c == m => Ok(mat),
            (r, c) => Err(self.err(format!("`{}` must be a scalar, {m} values or {m}x{m}, found {r}x{c}", self.key))),
        }
    }

    fn choice<T: Copy>(&self, options: &[(&str, T)]) -> Result<T> {
        self.used.set(true);
        options.iter().find(|(name, _)| *name == self.value).map(|(_, v)| *v).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            self.err(format!("`{}` must be one of {}", self.key, names.join(", ")))
        })
    }

    fn quadrature(&self) -> Result<Quadrature> {
        self.choice(&[("trapezoid", Quadrature::Trapezoid), ("simpson", Quadrature::Simpson)])
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Default)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        let e = self.entries.iter().find(|e| e.key == key)?;
        e.used.set(true);
        Some(e)
    }

    /// `sigma_v` also matches `sigmaV`.
    fn get_alias(&self, key: &str) -> Option<&Entry> {
        let camel = key
            .strip_prefix("sigma_")
            .map(|rest| format!("sigma{}", rest.to_uppercase()));
        match (self.get(key), camel) {
            (Some(e), _) => Some(e),
            (None, Some(c)) => self.get(&c),
            (None, None) => None,
        }
    }

    fn require(&self, key: &str) -> Result<&Entry> {
        self.get(key)
            .ok_or_else(|| Error::config(self.line.max(1), 1, format!("[{}] is missing `{key}`", self.name)))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), Entry::number)
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse::<usize>()
                .map_err(|_| e.err(format!("`{key}` must be a non-negative integer"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(e) => e.choice(&[("true", true), ("false", false)]),
        }
    }

    /// Rejects keys that no getter consumed.
    fn finish(&self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used.get()) {
            Some(e) => Err(Error::config(
                e.line,
                1,
                format!("unknown key `{}` in [{}]", e.key, self.name),
            )),
            None => Ok(()),
        }
    }
}

#[derive(Debug)]
struct Ini {
    sections: Vec<Section>,
}

impl Ini {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<Section> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let trimmed = content.trim();
            if trimmed.is_empty() {
                continue;
            }
            let indent = content.len() - content.trim_start().len();
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(line, indent + trimmed.len(), "expected `]`"))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::config(line, indent + 2, "empty section name"));
                }
                if sections.iter().any(|s| s.name == name) {
                    return Err(Error::config(line, indent + 2, format!("duplicate section [{name}]")));
                }
                sections.push(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let eq = content
                .find('=')
                .ok_or_else(|| Error::config(line, indent + 1, "expected `key = value`"))?;
            let key = content[..eq].trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::config(line, indent + 1, format!("invalid key `{key}`")));
            }
            let after = &content[eq + 1..];
            let value = after.trim();
            if value.is_empty() {
                return Err(Error::config(line, eq + 2, format!("`{key}` has no value")));
            }
            let col = eq + 2 + (after.len() - after.trim_start().len());
            let section = sections
                .last_mut()
                .ok_or_else(|| Error::config(line, indent + 1, "key outside of any [section]"))?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::config(line, indent + 1, format!("duplicate key `{key}`")));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line,
                col,
                used: Cell::new(false),
            });
        }
        Ok(Ini { sections })
    }

    fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn require_section(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::config(1, 1, format!("missing section [{name}]")))
    }

    fn check_sections(&self, known: &[&str]) -> Result<()> {
        match self.sections.iter().find(|s| !known.contains(&s.name.as_str())) {
            Some(s) => Err(Error::config(s.line, 2, format!("unknown section [{}]", s.name))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[system]
name = example1

[expert]
w_q = 1, 0, 1
r = 1
x0 = 2, 2

[init]
w_q = 0.5, 0, 1.5
r = 0.8

[run]
seed = 7
";

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("."))
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.system, "example1");
        assert_eq!(c.seed, 7);
        assert_eq!(c.algorithm, Algorithm::Alg1);
        assert!(c.sgd.fix_r);
        assert_eq!(c.init.r[(0, 0)], 0.8);
        assert_eq!(c.basis.l_q(), 3);
        assert_eq!(c.noise.grid.len(), 11);
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = MINIMAL.replace("seed = 7\n", "out = x\n");
        let err = parse(&text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn undefined_basis_symbol_is_located() {
        let text = format!("{MINIMAL}\n[basis]\nsigmaQ = x1^2, 2*x1*y, x2^2\n");
        match parse(&text).unwrap_err() {
            Error::Config { line, column, message } => {
                assert_eq!(line, 17);
                assert!(message.contains("`y`"), "{message}");
                assert_eq!(&"sigmaQ = x1^2, 2*x1*y, x2^2"[column - 1..column], "y");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_number_reports_column() {
        let text = MINIMAL.replace("x0 = 2, 2", "x0 = 2, two");
        match parse(&text).unwrap_err() {
            Error::Config { line, column, .. } => {
                assert_eq!(line, 7);
                assert_eq!(column, 9);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_and_section_rejected() {
        assert!(parse(&MINIMAL.replace("r = 0.8", "r = 0.8\nbogus = 1")).unwrap_err().is_config());
        assert!(parse(&format!("{MINIMAL}[extra]\na = 1\n")).unwrap_err().is_config());
    }

    #[test]
    fn quadratic_cost_and_diagonal_r() {
        let text = "\
[system]
name = quadrotor_rot
[expert]
q_bar = 3,0,0,0.2,0,0; 0,3,0,0,0.2,0; 0,0,3,0,0,0.2; 0.2,0,0,1,0,0; 0,0.2,0,0,1,0; 0,0,0.2,0,0,1
r = 1
x0 = 1.5, 1.7, 1.8, 0, 0, 0
[init]
q_bar = 1,0,0,0,0,0; 0,1,0,0,0,0; 0,0,1,0,0,0; 0,0,0,1,0,0; 0,0,0,0,1,0; 0,0,0,0,0,1
r = 0.8, 0.5, 0.7
[run]
seed = 1
";
        let c = parse(text).unwrap();
        assert_eq!(c.init.r, DMatrix::from_diagonal(&DVector::from_column_slice(&[0.8, 0.5, 0.7])));
        assert!(!c.sgd.fix_r);
        assert_eq!(c.expert.cost.w_q.len(), 21);
    }
}
