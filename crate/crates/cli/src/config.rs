//! Flat `key = value` configuration, frequency/potential aliases and the
//! config hash.

use std::collections::BTreeMap;
use std::path::PathBuf;

use qpgap::arithmetic::{expand_cf, synth_liouville, Frequency};
use qpgap::fourier::ScalarMap;
use qpgap::hexfloat;
use qpgap::pipeline::Edge;
use qpgap::spectrum::Precision;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Recognized keys with a one-line description; `hashed` keys enter the
/// config hash.
pub struct KeySpec {
    pub key: &'static str,
    pub help: &'static str,
    pub hashed: bool,
}

pub const KEYS: &[KeySpec] = &[
    KeySpec { key: "lambda", help: "coupling λ (required except for beta)", hashed: true },
    KeySpec { key: "freq", help: "golden | sqrt2m1 | liouville:beta=<x>:seed=<s> | cf:a1,a2,... | decimal α", hashed: true },
    KeySpec { key: "potential", help: "amo | trig:<a0>;<c1>,<c2>,...;<s1>,<s2>,... (cos/sin 2πkx coefficients)", hashed: true },
    KeySpec { key: "depth", help: "continued-fraction depth for frequency aliases (default 40)", hashed: true },
    KeySpec { key: "q", help: "approximant denominator: finest convergent with q' ≤ q (spectrum, gaps)", hashed: true },
    KeySpec { key: "q_max", help: "largest denominator for decay/homogeneity/reduce/dual (default 233)", hashed: true },
    KeySpec { key: "sweep", help: "spectrum only: bands for every reduced p/q with q ≤ sweep", hashed: true },
    KeySpec { key: "m", help: "gap label for reduce/dual (default 1)", hashed: true },
    KeySpec { key: "m_max", help: "largest |m| in the decay table (default 8)", hashed: true },
    KeySpec { key: "levels", help: "convergents compared in the decay table (default 2)", hashed: true },
    KeySpec { key: "sigmas", help: "comma-separated window half-widths (default 1e-2,3e-3,1e-3)", hashed: true },
    KeySpec { key: "energy", help: "dual only: energy (default: the gap edge of label m)", hashed: true },
    KeySpec { key: "edge", help: "upper | lower gap edge for reduce/dual (default upper)", hashed: true },
    KeySpec { key: "truncation", help: "dual truncation N, matrix size 2N+1 (default 128)", hashed: true },
    KeySpec { key: "kmax", help: "beta only: largest k examined (default 10000)", hashed: true },
    KeySpec { key: "theta_factor", help: "θ samples per band computation, times q (default 4)", hashed: true },
    KeySpec { key: "precision", help: "double | extended trace and width arithmetic (default double)", hashed: true },
    KeySpec { key: "e_samples", help: "uniform samples per homogeneity scan (default 2000)", hashed: true },
    KeySpec { key: "rho_iterations", help: "rotation-number iterations (default 100000)", hashed: true },
    KeySpec { key: "jobs", help: "worker threads (default: all cores); never changes outputs", hashed: false },
    KeySpec { key: "out", help: "output directory (default qpgap-out)", hashed: false },
    KeySpec { key: "emit_plot_data", help: "true | false: also write whitespace-separated x/y columns", hashed: false },
    KeySpec { key: "cache_dir", help: "cache directory (default .qpgap-cache)", hashed: false },
    KeySpec { key: "no_cache", help: "true | false: bypass the cache", hashed: false },
];

pub fn keys_help() -> String {
    let mut s = String::from("Config keys (file lines `key = value`, `#` comments; flags override the file):\n");
    for k in KEYS {
        s.push_str(&format!("  {:<15} {}\n", k.key, k.help));
    }
    s
}

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig(pub BTreeMap<String, String>);

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim().replace('-', "_");
            if spec(&k).is_none() {
                return Err(CliError::Config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(RawConfig(map))
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        debug_assert!(spec(key).is_some(), "{key}");
        self.0.insert(key.to_string(), value.into());
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|_| CliError::Config(format!("bad value `{v}` for `{key}`"))))
            .transpose()
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(v) => Err(CliError::Config(format!("`{key}` must be true or false, got `{v}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FreqSpec {
    Golden,
    Sqrt2m1,
    Liouville { beta: f64, seed: u64 },
    Quotients(Vec<u64>),
    Value(f64),
}

/// Growth levels requested for synthesized Liouville frequencies.
const LIOUVILLE_LEVELS: usize = 4;

impl FreqSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("bad frequency `{s}`"));
        match s {
            "golden" => return Ok(FreqSpec::Golden),
            "sqrt2m1" => return Ok(FreqSpec::Sqrt2m1),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("liouville:") {
            let mut beta = None;
            let mut seed = 0u64;
            for part in rest.split(':') {
                match part.split_once('=') {
                    Some(("beta", v)) => beta = Some(v.parse::<f64>().map_err(|_| bad())?),
                    Some(("seed", v)) => seed = v.parse().map_err(|_| bad())?,
                    _ => return Err(bad()),
                }
            }
            return Ok(FreqSpec::Liouville { beta: beta.ok_or_else(bad)?, seed });
        }
        if let Some(rest) = s.strip_prefix("cf:") {
            let qs = rest.split(',').map(|t| t.trim().parse::<u64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?;
            return Ok(FreqSpec::Quotients(qs));
        }
        let v: f64 = s.parse().map_err(|_| bad())?;
        Ok(FreqSpec::Value(v))
    }

    pub fn build(&self, depth: usize) -> Result<Frequency, CliError> {
        let cfg = |e: qpgap::Error| CliError::Config(e.to_string());
        match self {
            FreqSpec::Golden => Ok(Frequency::golden(depth)),
            FreqSpec::Sqrt2m1 => Ok(Frequency::sqrt2_minus_1(depth)),
            FreqSpec::Liouville { beta, seed } => synth_liouville(*beta, LIOUVILLE_LEVELS, *seed).map_err(cfg),
            FreqSpec::Quotients(qs) => Frequency::from_quotients(qs, None).map_err(cfg),
            FreqSpec::Value(v) => expand_cf(*v, depth).map_err(cfg),
        }
    }

    pub fn canonical(&self) -> String {
        match self {
            FreqSpec::Golden => "golden".into(),
            FreqSpec::Sqrt2m1 => "sqrt2m1".into(),
            FreqSpec::Liouville { beta, seed } => format!("liouville:beta={}:seed={seed}", hexfloat::format(*beta)),
            FreqSpec::Quotients(qs) => format!("cf:{}", qs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(",")),
            FreqSpec::Value(v) => hexfloat::format(*v),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Amo,
    Trig { a0: f64, cos: Vec<f64>, sin: Vec<f64> },
}

impl PotentialSpec {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if s == "amo" {
            return Ok(PotentialSpec::Amo);
        }
        let bad = || CliError::Config(format!("bad potential `{s}`"));
        let rest = s.strip_prefix("trig:").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(';').collect();
        if parts.is_empty() || parts.len() > 3 {
            return Err(bad());
        }
        let list = |t: Option<&&str>| -> Result<Vec<f64>, CliError> {
            match t.map(|t| t.trim()) {
                None | Some("") => Ok(vec![]),
                Some(t) => t.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect(),
            }
        };
        let a0 = parts[0].trim().parse::<f64>().map_err(|_| bad())?;
        Ok(PotentialSpec::Trig { a0, cos: list(parts.get(1))?, sin: list(parts.get(2))? })
    }

    pub fn build(&self) -> ScalarMap {
        match self {
            PotentialSpec::Amo => ScalarMap::amo(),
            PotentialSpec::Trig { a0, cos, sin } => ScalarMap::trig(*a0, cos, sin),
        }
    }

    pub fn canonical(&self) -> String {
        match self {
            PotentialSpec::Amo => "amo".into(),
            PotentialSpec::Trig { a0, cos, sin } => {
                let h = |v: &[f64]| v.iter().map(|x| hexfloat::format(*x)).collect::<Vec<_>>().join(",");
                format!("trig:{};{};{}", hexfloat::format(*a0), h(cos), h(sin))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub lambda: Option<f64>,
    pub freq: FreqSpec,
    pub potential: PotentialSpec,
    pub depth: usize,
    pub q: Option<u64>,
    pub q_max: u64,
    pub sweep: Option<u64>,
    pub m: i64,
    pub m_max: u64,
    pub levels: usize,
    pub sigmas: Vec<f64>,
    pub energy: Option<f64>,
    pub edge: Edge,
    pub truncation: usize,
    pub kmax: u64,
    pub theta_factor: usize,
    pub precision: Precision,
    pub e_samples: usize,
    pub rho_iterations: usize,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub emit_plot_data: bool,
    pub cache_dir: PathBuf,
    pub no_cache: bool,
}

impl Settings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let sigmas = match raw.get("sigmas") {
            None => vec![1e-2, 3e-3, 1e-3],
            Some(s) => s
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad sigma `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?,
        };
        if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(CliError::Config("sigmas must be positive".into()));
        }
        let edge = match raw.get("edge") {
            None | Some("upper") => Edge::Upper,
            Some("lower") => Edge::Lower,
            Some(v) => return Err(CliError::Config(format!("edge must be upper or lower, got `{v}`"))),
        };
        let precision = match raw.get("precision") {
            None | Some("double") => Precision::Double,
            Some("extended") => Precision::Extended,
            Some(v) => return Err(CliError::Config(format!("precision must be double or extended, got `{v}`"))),
        };
        let jobs: Option<usize> = raw.parsed("jobs")?;
        if jobs == Some(0) {
            return Err(CliError::Config("jobs must be positive".into()));
        }
        let s = Settings {
            lambda: raw.parsed("lambda")?,
            freq: FreqSpec::parse(raw.get("freq").unwrap_or("golden"))?,
            potential: PotentialSpec::parse(raw.get("potential").unwrap_or("amo"))?,
            depth: raw.parsed("depth")?.unwrap_or(40),
            q: raw.parsed("q")?,
            q_max: raw.parsed("q_max")?.unwrap_or(233),
            sweep: raw.parsed("sweep")?,
            m: raw.parsed("m")?.unwrap_or(1),
            m_max: raw.parsed("m_max")?.unwrap_or(8),
            levels: raw.parsed("levels")?.unwrap_or(2),
            sigmas,
            energy: raw.parsed("energy")?,
            edge,
            truncation: raw.parsed("truncation")?.unwrap_or(128),
            kmax: raw.parsed("kmax")?.unwrap_or(10_000),
            theta_factor: raw.parsed("theta_factor")?.unwrap_or(4),
            precision,
            e_samples: raw.parsed("e_samples")?.unwrap_or(2000),
            rho_iterations: raw.parsed("rho_iterations")?.unwrap_or(100_000),
            jobs,
            out: raw.get("out").unwrap_or("qpgap-out").into(),
            emit_plot_data: raw.flag("emit_plot_data")?,
            cache_dir: raw.get("cache_dir").unwrap_or(".qpgap-cache").into(),
            no_cache: raw.flag("no_cache")?,
        };
        if s.lambda.is_some_and(|l| !l.is_finite()) {
            return Err(CliError::Config("lambda must be finite".into()));
        }
        if s.depth == 0 || s.theta_factor == 0 || s.levels == 0 || s.m_max == 0 {
            return Err(CliError::Config("depth, theta_factor, levels and m_max must be positive".into()));
        }
        Ok(s)
    }

    pub fn lambda(&self) -> Result<f64, CliError> {
        self.lambda.ok_or_else(|| CliError::Config("missing `lambda`".into()))
    }

    /// Canonical values of every hashed key, exact for floats.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let h = |x: f64| hexfloat::format(x);
        let mut m = BTreeMap::new();
        m.insert("lambda", self.lambda.map(h).unwrap_or_default());
        m.insert("freq", self.freq.canonical());
        m.insert("potential", self.potential.canonical());
        m.insert("depth", self.depth.to_string());
        m.insert("q", self.q.map(|q| q.to_string()).unwrap_or_default());
        m.insert("q_max", self.q_max.to_string());
        m.insert("sweep", self.sweep.map(|q| q.to_string()).unwrap_or_default());
        m.insert("m", self.m.to_string());
        m.insert("m_max", self.m_max.to_string());
        m.insert("levels", self.levels.to_string());
        m.insert("sigmas", self.sigmas.iter().map(|s| h(*s)).collect::<Vec<_>>().join(","));
        m.insert("energy", self.energy.map(h).unwrap_or_default());
        m.insert("edge", format!("{:?}", self.edge).to_lowercase());
        m.insert("truncation", self.truncation.to_string());
        m.insert("kmax", self.kmax.to_string());
        m.insert("theta_factor", self.theta_factor.to_string());
        m.insert("precision", format!("{:?}", self.precision).to_lowercase());
        m.insert("e_samples", self.e_samples.to_string());
        m.insert("rho_iterations", self.rho_iterations.to_string());
        debug_assert!(KEYS.iter().filter(|k| k.hashed).all(|k| m.contains_key(k.key)));
        m
    }

    /// SHA-256 over the command name and the canonical hashed keys, first 16 hex digits.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        for (k, v) in self.canonical() {
            h.update(b"\n");
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn frequency(&self) -> Result<Frequency, CliError> {
        self.freq.build(self.depth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_grammar() {
        let raw = RawConfig::parse("# comment\nlambda = 0.25\n\nfreq = golden  # trailing\nm-max = 6\n").unwrap();
        let s = Settings::from_raw(&raw).unwrap();
        assert_eq!(s.lambda, Some(0.25));
        assert_eq!(s.freq, FreqSpec::Golden);
        assert_eq!(s.m_max, 6);
        assert!(RawConfig::parse("lambda 0.3").is_err());
        assert!(RawConfig::parse("bogus = 1").is_err());
        assert!(RawConfig::parse("lambda = 1\nlambda = 2").is_err());
    }

    #[test]
    fn frequency_aliases() {
        assert_eq!(FreqSpec::parse("liouville:beta=0.2:seed=7").unwrap(), FreqSpec::Liouville { beta: 0.2, seed: 7 });
        assert_eq!(FreqSpec::parse("cf:1,2,2").unwrap(), FreqSpec::Quotients(vec![1, 2, 2]));
        assert!(FreqSpec::parse("liouville:seed=7").is_err());
        assert!(FreqSpec::parse("silver").is_err());
        let g = FreqSpec::Golden.build(40).unwrap();
        assert!((g.value() - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        let s = FreqSpec::Sqrt2m1.build(40).unwrap();
        assert!((s.value() - (2f64.sqrt() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn potential_grammar() {
        assert_eq!(PotentialSpec::parse("amo").unwrap().build(), ScalarMap::amo());
        let p = PotentialSpec::parse("trig:0;2").unwrap();
        assert_eq!(p.build(), ScalarMap::trig(0.0, &[2.0], &[]));
        assert!(PotentialSpec::parse("trig:a").is_err());
    }

    #[test]
    fn hash_ignores_unhashed_keys() {
        let mut raw = RawConfig::parse("lambda = 0.25").unwrap();
        let a = Settings::from_raw(&raw).unwrap().hash("gaps");
        raw.set("jobs", "3");
        raw.set("out", "elsewhere");
        assert_eq!(Settings::from_raw(&raw).unwrap().hash("gaps"), a);
        raw.set("lambda", "0.3");
        assert_ne!(Settings::from_raw(&raw).unwrap().hash("gaps"), a);
        assert_ne!(Settings::from_raw(&raw).unwrap().hash("decay"), Settings::from_raw(&raw).unwrap().hash("gaps"));
    }
}
