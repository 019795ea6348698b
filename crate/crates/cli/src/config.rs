//! Run configuration: TOML file keys, overridden per command section,
//! overridden by flags.
//!
//! Top-level keys may only be the shared ones in [`Common`]. A `[command]`
//! section may repeat them and adds the keys of that command. Everything is
//! merged as JSON values and then deserialized with unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use loja_core::curve::Curve;
use loja_core::expr::{max_indexed_var, parse, Vars};
use loja_core::registry::{self, ExampleEntry};
use loja_core::{CompiledFn, Expr};
use serde::de::{DeserializeOwned, Deserializer};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const COMMANDS: [&str; 7] = ["sweep", "fit", "check", "witness", "certify", "project", "examples"];
const COMMON_KEYS: [&str; 6] = ["seed", "out", "expr", "vars", "example", "arity"];

/// Parses `p/q` or a decimal.
pub fn parse_real(text: &str) -> Result<f64, String> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad numerator in `{text}`"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("bad denominator in `{text}`"))?;
            p / q
        }
        None => text.parse().map_err(|_| format!("`{text}` is not a number"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("`{text}` is not finite"))
    }
}

/// Comma-separated reals, each as in [`parse_real`].
pub fn parse_reals(text: &str) -> Result<Coords, String> {
    text.split(',').map(parse_real).collect::<Result<_, _>>().map(Coords)
}

/// A point or box corner given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Coords(pub Vec<f64>);

/// A real given as a number or as a string like `"1/18"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Text(s) => parse_real(&s).map(Real).map_err(serde::de::Error::custom),
        }
    }
}

/// Reals given as an array or as a comma-separated string.
#[derive(Debug, Clone, PartialEq)]
pub struct RealList(pub Vec<f64>);

impl<'de> Deserialize<'de> for RealList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<Real>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(RealList(v.into_iter().map(|r| r.0).collect())),
            Raw::Text(s) => parse_reals(&s).map(|c| RealList(c.0)).map_err(serde::de::Error::custom),
        }
    }
}

/// Names given as an array or as a comma-separated string.
#[derive(Debug, Clone, PartialEq)]
pub struct NameList(pub Vec<String>);

impl<'de> Deserialize<'de> for NameList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<String>),
            Text(String),
        }
        Ok(NameList(match Raw::deserialize(d)? {
            Raw::List(v) => v,
            Raw::Text(s) => s.split(',').map(|n| n.trim().to_string()).collect(),
        }))
    }
}

/// Keys shared by every command.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Common {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub expr: Option<String>,
    pub vars: Option<NameList>,
    pub example: Option<String>,
    /// Arity of an inline expression written in `x1 .. xn`.
    pub arity: Option<usize>,
}

/// Config file contents, or an empty table.
pub fn load_file(path: Option<&Path>) -> Result<Map<String, Value>, CliError> {
    let Some(path) = path else { return Ok(Map::new()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = serde_json::to_value(table).map_err(|e| CliError::config(e.to_string()))? else {
        unreachable!("a TOML table serializes to an object")
    };
    for (key, value) in &map {
        match value {
            Value::Object(_) if COMMANDS.contains(&key.as_str()) => {}
            Value::Object(_) => return Err(CliError::config(format!("unknown section [{key}]"))),
            _ if COMMON_KEYS.contains(&key.as_str()) => {}
            _ => return Err(CliError::config(format!("top-level key `{key}` is not shared; move it into a section"))),
        }
    }
    Ok(map)
}

/// Flag values as a JSON object without the unset ones.
fn flags<T: Serialize>(flags: &T) -> Result<Map<String, Value>, CliError> {
    match serde_json::to_value(flags)? {
        Value::Object(m) => Ok(m.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        _ => Ok(Map::new()),
    }
}

fn finish<T: DeserializeOwned>(map: Map<String, Value>, what: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| CliError::config(format!("{what}: {e}")))
}

/// Shared keys: file top level, then the command section, then flags.
pub fn common<F: Serialize>(file: &Map<String, Value>, command: &str, global: &F) -> Result<Common, CliError> {
    let mut map: Map<String, Value> = file.iter().filter(|(_, v)| !v.is_object()).map(|(k, v)| (k.clone(), v.clone())).collect();
    if let Some(Value::Object(section)) = file.get(command) {
        map.extend(section.iter().filter(|(k, _)| COMMON_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())));
    }
    map.extend(flags(global)?);
    finish(map, "shared keys")
}

/// Command keys: the command section (minus shared keys), then flags.
pub fn command<T: DeserializeOwned, F: Serialize>(
    file: &Map<String, Value>,
    command: &str,
    args: &F,
) -> Result<T, CliError> {
    let mut map = Map::new();
    if let Some(Value::Object(section)) = file.get(command) {
        map.extend(section.iter().filter(|(k, _)| !COMMON_KEYS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())));
    }
    map.extend(flags(args)?);
    finish(map, &format!("[{command}]"))
}

/// The function a command works on.
pub struct Function {
    /// Registry id, or the expression text.
    pub id: String,
    pub expr: Expr,
    pub compiled: CompiledFn,
    pub entry: Option<&'static ExampleEntry>,
}

impl Function {
    /// `t` if given, else the first registry level, else 0.
    pub fn level(&self, t: Option<Real>) -> f64 {
        t.map(|r| r.0).or_else(|| self.entry.map(|e| e.levels[0])).unwrap_or(0.0)
    }

    /// `"default"` (or nothing) picks the first registry curve, a number
    /// picks that registry curve, anything else is read as components in `s`
    /// separated by `;`. Also returns the default end of a certificate grid:
    /// the registry value, or `1e6` for inline curves.
    pub fn curve(&self, spec: Option<&str>, s_min: Option<f64>) -> Result<(Curve, f64), CliError> {
        let spec = spec.unwrap_or("default").trim();
        let registered = if spec == "default" { Some(0) } else { spec.parse::<usize>().ok() };
        let (curve, s_max) = match registered {
            Some(i) => {
                let entry = self
                    .entry
                    .ok_or_else(|| CliError::config("inline expressions need explicit curve components"))?;
                let c = entry
                    .curves
                    .get(i)
                    .ok_or_else(|| CliError::config(format!("example `{}` has {} curve(s)", entry.id, entry.curves.len())))?;
                (Curve::parse(c.components, s_min.unwrap_or(c.s_min))?, c.s_max)
            }
            None => {
                let parts: Vec<&str> = spec.split(';').map(str::trim).collect();
                (Curve::parse(&parts, s_min.unwrap_or(1.0))?, 1e6)
            }
        };
        if curve.arity() != self.expr.arity() {
            return Err(CliError::config(format!(
                "curve has {} components, function has arity {}",
                curve.arity(),
                self.expr.arity()
            )));
        }
        Ok((curve, s_max))
    }
}

/// Looks up `--example` or parses `--expr`. `arity_hint` (e.g. the length of
/// a query point) sizes indexed variables when no arity is configured.
pub fn function(common: &Common, arity_hint: Option<usize>) -> Result<Function, CliError> {
    match (&common.example, &common.expr) {
        (Some(_), Some(_)) => Err(CliError::config("give either an example or an expression, not both")),
        (None, None) => Err(CliError::config("no function: pass --example ID or --expr STRING")),
        (Some(id), None) => {
            if common.vars.is_some() || common.arity.is_some() {
                return Err(CliError::config("vars and arity only apply to inline expressions"));
            }
            let entry = registry::lookup(id).ok_or_else(|| CliError::config(format!("unknown example `{id}`")))?;
            let expr = entry.expr()?;
            Ok(Function { id: id.clone(), compiled: CompiledFn::new(&expr), expr, entry: Some(entry) })
        }
        (None, Some(text)) => {
            let vars = match (&common.vars, common.arity) {
                (Some(_), Some(_)) => return Err(CliError::config("give either vars or arity, not both")),
                (Some(names), None) => Vars::named(names.0.iter().cloned()),
                (None, Some(n)) => Vars::indexed(n),
                (None, None) => Vars::indexed(max_indexed_var(text).max(arity_hint.unwrap_or(0)).max(1)),
            };
            let expr = parse(text, &vars)?;
            Ok(Function { id: text.clone(), compiled: CompiledFn::new(&expr), expr, entry: None })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn reals() {
        assert_eq!(parse_real("1/18").unwrap(), 1.0 / 18.0);
        assert_eq!(parse_real(" 0.5 ").unwrap(), 0.5);
        assert_eq!(parse_real("-2").unwrap(), -2.0);
        assert!(parse_real("1/0").is_err());
        assert!(parse_real("abc").is_err());
        assert_eq!(parse_reals("3,4").unwrap().0, vec![3.0, 4.0]);
        let r: Real = serde_json::from_value(json!("1/18")).unwrap();
        assert_eq!(r.0, 1.0 / 18.0);
        let l: RealList = serde_json::from_value(json!([1, "1/2"])).unwrap();
        assert_eq!(l.0, vec![1.0, 0.5]);
    }

    #[derive(Serialize)]
    struct Flags {
        seed: Option<u64>,
        example: Option<String>,
    }

    #[test]
    fn precedence_is_file_then_section_then_flags() {
        let file: Map<String, Value> = serde_json::from_value(json!({
            "seed": 1, "example": "e1", "fit": {"seed": 2, "count": 500}
        }))
        .unwrap();
        let c = common(&file, "fit", &Flags { seed: None, example: None }).unwrap();
        assert_eq!((c.seed, c.example.as_deref()), (2, Some("e1")));
        let c = common(&file, "sweep", &Flags { seed: Some(7), example: None }).unwrap();
        assert_eq!(c.seed, 7);
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Fit {
            count: usize,
        }
        let f: Fit = command(&file, "fit", &Flags { seed: None, example: None }).unwrap();
        assert_eq!(f.count, 500);
    }

    #[test]
    fn inline_arity_follows_the_hint() {
        let c = Common { expr: Some("x1".into()), ..Default::default() };
        assert_eq!(function(&c, Some(2)).unwrap().expr.arity(), 2);
        assert_eq!(function(&c, None).unwrap().expr.arity(), 1);
        let c = Common { expr: Some("x + y".into()), vars: Some(NameList(vec!["x".into(), "y".into()])), ..Default::default() };
        assert_eq!(function(&c, None).unwrap().expr.arity(), 2);
        let both = Common { expr: Some("x1".into()), example: Some("e1".into()), ..Default::default() };
        assert!(function(&both, None).is_err());
    }
}
