//! Run configuration: `[section]` headers with `key = value` lines.
//!
//! ```text
//! [domain]
//! kind = circle
//! nodes = 256
//!
//! [potential]
//! preset = fourier(0.5, 0.2, 0.0, 0.1)
//!
//! [task]
//! index = 2
//!
//! [output]
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{parse_number, DomainGrid, DomainKind, GridSpec, Potential};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

/// One `[section]` with its entries in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub line: usize,
    pub entries: BTreeMap<String, Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    /// Rejects any key outside `allowed`, naming it with its line.
    pub fn check_keys(&self, section: &str, allowed: &[&str]) -> Result<()> {
        for (k, e) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse {
                    line: e.line,
                    message: format!("unknown key `{k}` in [{section}] (allowed: {})", allowed.join(", ")),
                });
            }
        }
        Ok(())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Parse {
                line: e.line,
                message: format!("invalid value `{}` for `{key}`", e.value),
            }),
        }
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => parse_number(&e.value).map(Some).map_err(|err| at_line(e.line, err)),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.parse(key)?.ok_or_else(|| Error::Parse {
            line: self.line,
            message: format!("missing key `{key}` in [{section}]"),
        })
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }
}

fn at_line(line: usize, err: Error) -> Error {
    match err {
        Error::Config(message) => Error::Parse { line, message },
        other => other,
    }
}

const SECTIONS: [&str; 4] = ["domain", "potential", "task", "output"];

/// Split into sections; unknown sections, duplicate keys and stray lines are errors.
pub fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown section [{name}]"),
                });
            }
            if sections.contains_key(&name) {
                return Err(Error::Parse {
                    line,
                    message: format!("section [{name}] appears twice"),
                });
            }
            sections.insert(name.clone(), Section { line, entries: BTreeMap::new() });
            current = Some(name);
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `key = value`, got `{body}`"),
        })?;
        let Some(sec) = current.as_ref().and_then(|c| sections.get_mut(c)) else {
            return Err(Error::Parse {
                line,
                message: "key outside of any [section]".into(),
            });
        };
        let key = k.trim().to_ascii_lowercase();
        if key.is_empty() {
            return Err(Error::Parse { line, message: "empty key".into() });
        }
        if sec.entries.contains_key(&key) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate key `{key}`"),
            });
        }
        sec.entries.insert(key, Entry { value: v.trim().to_string(), line });
    }
    Ok(sections)
}

/// How the potential is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialPreset {
    Zero,
    Constant(f64),
    /// `a0, a1, b1, a2, b2, …` for `a0 + Σ a_k cos(kωx) + b_k sin(kωx)`, with
    /// `ω = 2π / period` and period the circumference (circle, torus in x) or
    /// twice the length (interval).
    Fourier(Vec<f64>),
    /// CSV whose last column holds the node values; a header row is optional.
    File(PathBuf),
}

impl std::str::FromStr for PotentialPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<PotentialPreset> {
        let s = s.trim();
        let (name, arg) = match s.split_once('(') {
            Some((n, rest)) => {
                let arg = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Config(format!("unbalanced parentheses in `{s}`")))?;
                (n.trim().to_ascii_lowercase(), Some(arg.trim()))
            }
            None => (s.to_ascii_lowercase(), None),
        };
        match (name.as_str(), arg) {
            ("zero", None) => Ok(PotentialPreset::Zero),
            ("constant", Some(a)) => Ok(PotentialPreset::Constant(parse_number(a)?)),
            ("fourier", Some(a)) => {
                let coeffs = a.split(',').map(parse_number).collect::<Result<Vec<_>>>()?;
                if coeffs.is_empty() {
                    return Err(Error::Config("fourier() needs at least one coefficient".into()));
                }
                Ok(PotentialPreset::Fourier(coeffs))
            }
            ("file", Some(a)) if !a.is_empty() => Ok(PotentialPreset::File(PathBuf::from(a))),
            _ => Err(Error::Config(format!(
                "unknown potential preset `{s}` (expected zero, constant(c), fourier(a0, a1, b1, …), file(path))"
            ))),
        }
    }
}

impl PotentialPreset {
    /// Node values on `grid`; relative file paths resolve against `base_dir`.
    pub fn build(&self, grid: &DomainGrid, base_dir: &Path) -> Result<Potential> {
        match self {
            PotentialPreset::Zero => Ok(Potential::zero(grid)),
            PotentialPreset::Constant(c) => Ok(Potential::constant(grid, *c)),
            PotentialPreset::Fourier(coeffs) => {
                let period = match grid.kind() {
                    DomainKind::Circle { circumference } => circumference,
                    DomainKind::Interval { length } => 2.0 * length,
                    DomainKind::Torus2D { lx, .. } => lx,
                };
                let omega = 2.0 * std::f64::consts::PI / period;
                Ok(Potential::from_fn(grid, |x, _| fourier_series(coeffs, omega * x)))
            }
            PotentialPreset::File(path) => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = fs::read_to_string(&full)?;
                let values = read_last_column(&text)?;
                Potential::new(grid, nalgebra::DVector::from_vec(values))
            }
        }
    }
}

pub fn fourier_series(coeffs: &[f64], theta: f64) -> f64 {
    let mut v = coeffs[0];
    for (k, pair) in coeffs[1..].chunks(2).enumerate() {
        let kk = (k + 1) as f64;
        v += pair[0] * (kk * theta).cos();
        if let Some(b) = pair.get(1) {
            v += b * (kk * theta).sin();
        }
    }
    v
}

fn read_last_column(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let last = line.rsplit(',').next().unwrap_or(line).trim();
        match last.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if idx == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("cannot parse potential value `{last}`"),
                })
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub seed: Option<u64>,
}

impl OutputSection {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: GridSpec,
    pub potential: PotentialPreset,
    pub task: Section,
    pub output: OutputSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let sections = parse_sections(text)?;
        let domain_sec = sections.get("domain").ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing [domain] section".into(),
        })?;
        domain_sec.check_keys("domain", &["kind", "length", "nodes", "bc"])?;
        let pairs = domain_sec.entries.iter().map(|(k, e)| (k.as_str(), e.value.as_str()));
        let domain = GridSpec::from_pairs(pairs).map_err(|err| at_line(domain_sec.line, err))?;

        let potential = match sections.get("potential") {
            None => PotentialPreset::Zero,
            Some(sec) => {
                sec.check_keys("potential", &["preset"])?;
                match sec.get("preset") {
                    None => PotentialPreset::Zero,
                    Some(e) => e.value.parse().map_err(|err| at_line(e.line, err))?,
                }
            }
        };

        let task = sections.get("task").cloned().unwrap_or_default();

        let output = match sections.get("output") {
            None => OutputSection {
                directory: None,
                formats: vec![Format::Json, Format::Csv],
                seed: None,
            },
            Some(sec) => {
                sec.check_keys("output", &["directory", "formats", "seed"])?;
                let formats = match sec.get("formats") {
                    None => vec![Format::Json, Format::Csv],
                    Some(e) => e
                        .value
                        .split(',')
                        .map(|f| match f.trim().to_ascii_lowercase().as_str() {
                            "json" => Ok(Format::Json),
                            "csv" => Ok(Format::Csv),
                            other => Err(Error::Parse {
                                line: e.line,
                                message: format!("unknown format `{other}` (json, csv)"),
                            }),
                        })
                        .collect::<Result<Vec<_>>>()?,
                };
                OutputSection {
                    directory: sec.get("directory").map(|e| PathBuf::from(&e.value)),
                    formats,
                    seed: sec.parse("seed")?,
                }
            }
        };
        Ok(RunConfig {
            domain,
            potential,
            task,
            output,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::parse(&text, &base)
    }

    /// The seed, which must be present whenever random probes are drawn.
    pub fn require_seed(&self, why: &str) -> Result<u64> {
        self.output.seed.ok_or_else(|| {
            Error::Config(format!("`seed` in [output] is required: {why}"))
        })
    }

    pub fn grid(&self) -> Result<DomainGrid> {
        self.domain.build()
    }

    pub fn build_potential(&self, grid: &DomainGrid) -> Result<Potential> {
        self.potential.build(grid, &self.base_dir)
    }
}
