//! Metric-by-metric comparison of two reports.
//!
//! Both reports are flattened to dotted paths (`results.runs.0.summary.mean.0`).
//! Numbers pass when `|a - b| <= abs + rel * max(|a|, |b|)`; other values must
//! be equal. The tolerance spec is either inline (`abs=1e-9,rel=1e-6`) or a
//! TOML file:
//!
//! ```toml
//! [default]
//! abs = 0.0
//! rel = 1e-12
//!
//! [[rule]]
//! pattern = "results.runs.*.summary.mean.*"
//! abs = 0.01
//!
//! [[rule]]
//! pattern = "config.*"
//! ignore = true
//! ```
//!
//! The first rule whose pattern matches a path applies.

use std::collections::BTreeMap;
use std::path::Path;

use glob::Pattern;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn allows(&self, a: f64, b: f64) -> bool {
        if a == b {
            return true;
        }
        (a - b).abs() <= self.abs + self.rel * a.abs().max(b.abs())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    pattern: String,
    #[serde(default)]
    abs: f64,
    #[serde(default)]
    rel: f64,
    #[serde(default)]
    ignore: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TolFile {
    #[serde(default)]
    default: Tolerance,
    #[serde(default)]
    rule: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub pattern: Pattern,
    pub tol: Tolerance,
    pub ignore: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TolSpec {
    pub default: Tolerance,
    pub rules: Vec<Rule>,
}

impl TolSpec {
    /// A path to a TOML file, or an inline `abs=..,rel=..` list.
    pub fn load(spec: &str) -> Result<Self> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            return Self::from_toml(&text).map_err(|e| CliError::config(format!("{spec}: {e}")));
        }
        Self::inline(spec)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: TolFile = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        let rules = f
            .rule
            .into_iter()
            .map(|r| {
                Ok(Rule {
                    pattern: Pattern::new(&r.pattern).map_err(|e| CliError::config(format!("pattern `{}`: {e}", r.pattern)))?,
                    tol: Tolerance { abs: r.abs, rel: r.rel },
                    ignore: r.ignore,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { default: f.default, rules })
    }

    pub fn inline(spec: &str) -> Result<Self> {
        let mut tol = Tolerance::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("tolerance `{part}` is not key=value (or `{spec}` is not a file)")))?;
            let v: f64 = v.trim().parse().map_err(|_| CliError::config(format!("tolerance `{part}` has a non-numeric value")))?;
            match k.trim() {
                "abs" => tol.abs = v,
                "rel" => tol.rel = v,
                other => return Err(CliError::config(format!("unknown tolerance key `{other}`"))),
            }
        }
        Ok(Self {
            default: tol,
            rules: Vec::new(),
        })
    }

    /// `None` when the path is ignored.
    fn lookup(&self, path: &str) -> Option<Tolerance> {
        match self.rules.iter().find(|r| r.pattern.matches(path)) {
            Some(r) if r.ignore => None,
            Some(r) => Some(r.tol),
            None => Some(self.default),
        }
    }
}

/// Dotted-path view of the leaves of a JSON value.
pub fn flatten(v: &Value) -> BTreeMap<String, Value> {
    fn walk(v: &Value, prefix: &str, out: &mut BTreeMap<String, Value>) {
        let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(m) => m.iter().for_each(|(k, c)| walk(c, &join(k), out)),
            Value::Array(a) => a.iter().enumerate().for_each(|(i, c)| walk(c, &join(&i.to_string()), out)),
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(v, "", &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub metric: String,
    pub a: Option<Value>,
    pub b: Option<Value>,
    pub abs_diff: Option<f64>,
    pub tolerance: Tolerance,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub rows: Vec<Row>,
    pub passed: usize,
    pub failed: usize,
}

impl Table {
    pub fn all_pass(&self) -> bool {
        self.failed == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn render(&self, all: bool) -> String {
        let show = |v: &Option<Value>| v.as_ref().map_or("<missing>".to_string(), Value::to_string);
        let mut s = String::new();
        for r in self.rows.iter().filter(|r| all || !r.pass) {
            let diff = r.abs_diff.map_or("-".to_string(), |d| format!("{d:.3e}"));
            s.push_str(&format!(
                "{} {}  a={} b={} diff={} tol(abs={:e}, rel={:e})\n",
                if r.pass { "PASS" } else { "FAIL" },
                r.metric,
                show(&r.a),
                show(&r.b),
                diff,
                r.tolerance.abs,
                r.tolerance.rel
            ));
        }
        s.push_str(&format!("{} passed, {} failed\n", self.passed, self.failed));
        s
    }
}

pub fn compare_values(a: &Value, b: &Value, spec: &TolSpec) -> Table {
    let (fa, fb) = (flatten(a), flatten(b));
    let mut keys: Vec<&String> = fa.keys().chain(fb.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for k in keys {
        let Some(tol) = spec.lookup(k) else { continue };
        let (va, vb) = (fa.get(k), fb.get(k));
        let (abs_diff, pass) = match (va, vb) {
            (Some(Value::Number(x)), Some(Value::Number(y))) => {
                let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
                (Some((x - y).abs()), tol.allows(x, y))
            }
            (Some(x), Some(y)) => (None, x == y),
            _ => (None, false),
        };
        rows.push(Row {
            metric: k.clone(),
            a: va.cloned(),
            b: vb.cloned(),
            abs_diff,
            tolerance: tol,
            pass,
        });
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    Table {
        passed: rows.len() - failed,
        failed,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn report(mean: f64) -> Value {
        json!({"name": "x", "results": {"runs": [{"summary": {"mean": [mean], "n": 10}}]}})
    }

    #[test]
    fn identical_reports_pass() {
        let t = compare_values(&report(0.5), &report(0.5), &TolSpec::default());
        assert!(t.all_pass());
        assert_eq!(t.passed, 3);
    }

    #[test]
    fn perturbed_mean_is_named() {
        let t = compare_values(&report(0.5), &report(0.6), &TolSpec::inline("abs=0.01").unwrap());
        let fails: Vec<_> = t.failures().map(|r| r.metric.as_str()).collect();
        assert_eq!(fails, vec!["results.runs.0.summary.mean.0"]);
        assert!(t.render(false).contains("FAIL results.runs.0.summary.mean.0"));
    }

    #[test]
    fn rules_and_ignores() {
        let spec = TolSpec::from_toml(
            "[[rule]]\npattern = \"results.runs.*.summary.mean.*\"\nabs = 0.2\n[[rule]]\npattern = \"name\"\nignore = true\n",
        )
        .unwrap();
        let mut b = report(0.6);
        b["name"] = json!("y");
        let t = compare_values(&report(0.5), &b, &spec);
        assert!(t.all_pass(), "{}", t.render(true));
        let mut c = report(0.5);
        c["results"]["extra"] = json!(1);
        let t = compare_values(&report(0.5), &c, &spec);
        assert_eq!(t.failed, 1);
    }

    #[test]
    fn inline_spec_errors() {
        assert!(TolSpec::inline("abs=x").is_err());
        assert!(TolSpec::inline("tol=1").is_err());
        assert_eq!(TolSpec::inline("abs=1e-3, rel=2e-2").unwrap().default, Tolerance { abs: 1e-3, rel: 2e-2 });
    }
}
