//! JSON system configurations.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::expr::{parse_expression, Expr, Scope};
use crate::dynsys::{DynSystem, LinearTV, SlowFastSystem};
use crate::{Error, Matrix, Result, Vector};

/// Step size used for slow/fast systems that do not set `epsilon`.
pub const DEFAULT_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Autonomous,
    Nonautonomous,
    LinearTv,
    SlowFast,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Autonomous => "autonomous",
            SystemKind::Nonautonomous => "nonautonomous",
            SystemKind::LinearTv => "linear_tv",
            SystemKind::SlowFast => "slow_fast",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnalysisRequest {
    pub command: String,
    pub options: Map<String, Value>,
    /// JSON pointer of this entry, for option errors.
    pub pointer: String,
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub x_dim: usize,
    pub y_dim: usize,
    pub map_x: Vec<Expr>,
    pub map_y: Vec<Expr>,
    pub ystar: Vec<Expr>,
    pub params: BTreeMap<String, f64>,
    pub epsilon: Option<f64>,
    pub equilibrium: Option<Vec<f64>>,
    pub period: Option<usize>,
    pub analyses: Vec<AnalysisRequest>,
    pub seed: u64,
    /// Hex sha256 of the config text.
    pub digest: String,
}

fn cfg_err(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| cfg_err(format!("{at}/{key}"), "missing field"))
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| cfg_err(at, "expected an object"))
}

fn as_dim(v: &Value, at: &str) -> Result<usize> {
    match v.as_u64() {
        Some(d) if d > 0 => Ok(d as usize),
        _ => Err(cfg_err(at, "expected a positive integer")),
    }
}

fn as_number(v: &Value, at: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| cfg_err(at, "expected a number"))
}

fn number_list(v: &Value, at: &str) -> Result<Vec<f64>> {
    let items = v.as_array().ok_or_else(|| cfg_err(at, "expected an array of numbers"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, x)| as_number(x, &format!("{at}/{i}")))
        .collect()
}

fn parse_list(v: &Value, at: &str, len: usize, params: &BTreeMap<String, f64>, scope: Scope) -> Result<Vec<Expr>> {
    let items = v.as_array().ok_or_else(|| cfg_err(at, "expected an array of expressions"))?;
    if items.len() != len {
        return Err(cfg_err(at, format!("expected {len} expressions, got {}", items.len())));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let at = format!("{at}/{i}");
            let src = e.as_str().ok_or_else(|| cfg_err(&at, "expected an expression string"))?;
            parse_expression(src)
                .and_then(|e| e.bind(params, scope))
                .map_err(|e| cfg_err(&at, e.to_string()))
        })
        .collect()
}

impl SystemConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let root = as_object(&root, "")?;
        let kind = match get(root, "kind", "")?.as_str() {
            Some("autonomous") => SystemKind::Autonomous,
            Some("nonautonomous") => SystemKind::Nonautonomous,
            Some("linear_tv") => SystemKind::LinearTv,
            Some("slow_fast") => SystemKind::SlowFast,
            _ => {
                return Err(cfg_err(
                    "/kind",
                    "expected one of autonomous, nonautonomous, linear_tv, slow_fast",
                ))
            }
        };
        let dims = as_object(get(root, "dims", "")?, "/dims")?;
        let x_dim = as_dim(get(dims, "x", "/dims")?, "/dims/x")?;
        let y_dim = match dims.get("y") {
            Some(v) => as_dim(v, "/dims/y")?,
            None if kind == SystemKind::SlowFast => return Err(cfg_err("/dims/y", "missing field")),
            None => 0,
        };
        if kind != SystemKind::SlowFast && y_dim != 0 {
            return Err(cfg_err("/dims/y", "only slow_fast systems have a fast state"));
        }

        let mut params = BTreeMap::new();
        if let Some(p) = root.get("params") {
            for (name, v) in as_object(p, "/params")? {
                if matches!(name.as_str(), "t" | "x" | "y") {
                    return Err(cfg_err(format!("/params/{name}"), "reserved name"));
                }
                params.insert(name.clone(), as_number(v, &format!("/params/{name}"))?);
            }
        }

        let map = as_object(get(root, "map", "")?, "/map")?;
        let time = kind != SystemKind::Autonomous;
        let map_x = parse_list(get(map, "x", "/map")?, "/map/x", x_dim, &params, Scope { x_dim, y_dim, time })?;
        let (map_y, ystar) = if kind == SystemKind::SlowFast {
            let my = parse_list(get(map, "y", "/map")?, "/map/y", y_dim, &params, Scope { x_dim, y_dim, time })?;
            let ys = match map.get("ystar") {
                Some(v) => parse_list(
                    v,
                    "/map/ystar",
                    y_dim,
                    &params,
                    Scope {
                        x_dim,
                        y_dim: 0,
                        time: false,
                    },
                )?,
                None => vec![Expr::Num(0.0); y_dim],
            };
            (my, ys)
        } else {
            for key in ["y", "ystar"] {
                if map.contains_key(key) {
                    return Err(cfg_err(format!("/map/{key}"), "only slow_fast systems have a fast map"));
                }
            }
            (Vec::new(), Vec::new())
        };

        let epsilon = match root.get("epsilon") {
            Some(v) => {
                let e = as_number(v, "/epsilon")?;
                if !(e > 0.0 && e <= 1.0) {
                    return Err(cfg_err("/epsilon", "must lie in (0, 1]"));
                }
                Some(e)
            }
            None => None,
        };
        let equilibrium = match root.get("equilibrium") {
            Some(v) => {
                let eq = number_list(v, "/equilibrium")?;
                if eq.len() != x_dim {
                    return Err(cfg_err("/equilibrium", format!("expected {x_dim} entries")));
                }
                Some(eq)
            }
            None => None,
        };
        let period = match root.get("period") {
            Some(v) => Some(as_dim(v, "/period")?),
            None => None,
        };
        let seed = match root.get("seed") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| cfg_err("/seed", "expected a non-negative integer"))?,
            None => 0,
        };
        let mut analyses = Vec::new();
        if let Some(v) = root.get("analyses") {
            let items = v.as_array().ok_or_else(|| cfg_err("/analyses", "expected an array"))?;
            for (i, item) in items.iter().enumerate() {
                let at = format!("/analyses/{i}");
                let obj = as_object(item, &at)?;
                let command = get(obj, "command", &at)?
                    .as_str()
                    .ok_or_else(|| cfg_err(format!("{at}/command"), "expected a string"))?
                    .to_string();
                let mut options = obj.clone();
                options.remove("command");
                analyses.push(AnalysisRequest {
                    command,
                    options,
                    pointer: at,
                });
            }
        }
        Ok(Self {
            kind,
            x_dim,
            y_dim,
            map_x,
            map_y,
            ystar,
            params,
            epsilon,
            equilibrium,
            period,
            analyses,
            seed,
            digest: Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect(),
        })
    }

    /// Options of the first analysis entry for `command`.
    pub fn analysis(&self, command: &str) -> Option<&AnalysisRequest> {
        self.analyses.iter().find(|a| a.command == command)
    }

    /// `x(t+1) = f(t, x)` for the non-slow/fast kinds.
    pub fn dyn_system(&self) -> Result<DynSystem> {
        if self.kind == SystemKind::SlowFast {
            return self.slow_fast_combined();
        }
        let exprs = Arc::new(self.map_x.clone());
        let map = move |t: i64, x: &Vector| eval_vec(&exprs, t, x.as_slice(), &[]);
        let autonomous = self.kind == SystemKind::Autonomous;
        match &self.equilibrium {
            Some(eq) => DynSystem::with_equilibrium(self.x_dim, autonomous, map, Vector::from_column_slice(eq)),
            None => {
                let origin_fixed = (0..4).all(|t| map(t, &Vector::zeros(self.x_dim)).norm() <= 1e-9);
                if origin_fixed {
                    DynSystem::new(self.x_dim, autonomous, map)
                } else {
                    DynSystem::without_equilibrium(self.x_dim, autonomous, map)
                }
            }
        }
    }

    /// `A(t)` with columns `f(t, e_i)`.
    pub fn linear_tv(&self) -> Result<LinearTV> {
        let exprs = Arc::new(self.map_x.clone());
        let n = self.x_dim;
        let generator = move |t: i64| {
            let mut a = Matrix::zeros(n, n);
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                a.set_column(j, &eval_vec(&exprs, t, &e, &[]));
            }
            a
        };
        let period = match self.kind {
            SystemKind::Autonomous => Some(1),
            _ => self.period,
        };
        LinearTV::new(n, generator, period)
    }

    /// Slow/fast pair with `phi = map.x`, `varphi = map.y`, `y* = map.ystar`.
    pub fn slow_fast(&self) -> Result<SlowFastSystem> {
        if self.kind != SystemKind::SlowFast {
            return Err(cfg_err("/kind", "a slow_fast system is required"));
        }
        let (px, py, ys) = (
            Arc::new(self.map_x.clone()),
            Arc::new(self.map_y.clone()),
            Arc::new(self.ystar.clone()),
        );
        SlowFastSystem::new(
            self.x_dim,
            self.y_dim,
            move |k, x, y| eval_vec(&px, k, x.as_slice(), y.as_slice()),
            move |k, y, x| eval_vec(&py, k, x.as_slice(), y.as_slice()),
            move |x| eval_vec(&ys, 0, x.as_slice(), &[]),
            self.epsilon.unwrap_or(DEFAULT_EPSILON),
        )
    }

    /// The slow/fast pair in original coordinates as one system on `(x, y)`.
    fn slow_fast_combined(&self) -> Result<DynSystem> {
        let sf = self.slow_fast()?;
        let n = self.x_dim;
        DynSystem::without_equilibrium(n + self.y_dim, false, move |k, z| {
            let x = z.rows(0, n).into_owned();
            let y = z.rows(n, z.len() - n).into_owned();
            let mut out = z.clone();
            out.rows_mut(0, n).copy_from(&(&x + sf.phi(k, &x, &y) * sf.epsilon()));
            out.rows_mut(n, z.len() - n).copy_from(&sf.varphi(k, &y, &x));
            out
        })
    }
}

/// Evaluates a component list; evaluation errors become NaN.
fn eval_vec(exprs: &[Expr], t: i64, x: &[f64], y: &[f64]) -> Vector {
    Vector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(t as f64, x, y).unwrap_or(f64::NAN)))
}

/// Typed access to one analysis entry's options.
pub struct Options<'a> {
    map: Option<&'a Map<String, Value>>,
    pointer: String,
}

impl<'a> Options<'a> {
    pub fn new(req: Option<&'a AnalysisRequest>) -> Self {
        Self {
            map: req.map(|r| &r.options),
            pointer: req.map(|r| r.pointer.clone()).unwrap_or_default(),
        }
    }

    fn at(&self, key: &str) -> String {
        format!("{}/{key}", self.pointer)
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.map.and_then(|m| m.get(key))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.raw(key).map_or(Ok(default), |v| as_number(v, &self.at(key)))
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>> {
        self.raw(key).map(|v| as_number(v, &self.at(key))).transpose()
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .map(|u| u as usize)
                .ok_or_else(|| cfg_err(self.at(key), "expected a non-negative integer")),
        }
    }

    pub fn i64_or(&self, key: &str, default: i64) -> Result<i64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.as_i64().ok_or_else(|| cfg_err(self.at(key), "expected an integer")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| cfg_err(self.at(key), "expected a boolean")),
        }
    }

    pub fn str_opt(&self, key: &str) -> Result<Option<&'a str>> {
        self.raw(key)
            .map(|v| v.as_str().ok_or_else(|| cfg_err(self.at(key), "expected a string")))
            .transpose()
    }

    pub fn vec_opt(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.raw(key).map(|v| number_list(v, &self.at(key))).transpose()
    }

    pub fn usize_list_opt(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.vec_opt(key)?
            .map(|v| {
                v.into_iter()
                    .map(|x| {
                        if x >= 1.0 && x.fract() == 0.0 {
                            Ok(x as usize)
                        } else {
                            Err(cfg_err(self.at(key), "expected positive integers"))
                        }
                    })
                    .collect()
            })
            .transpose()
    }

    /// Square matrix given as nested rows.
    pub fn matrix_opt(&self, key: &str, n: usize) -> Result<Option<Matrix>> {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let at = self.at(key);
        let rows = v.as_array().ok_or_else(|| cfg_err(&at, "expected an array of rows"))?;
        if rows.len() != n {
            return Err(cfg_err(&at, format!("expected {n} rows")));
        }
        let mut m = Matrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            let r = number_list(row, &format!("{at}/{i}"))?;
            if r.len() != n {
                return Err(cfg_err(format!("{at}/{i}"), format!("expected {n} entries")));
            }
            for (j, x) in r.into_iter().enumerate() {
                m[(i, j)] = x;
            }
        }
        Ok(Some(m))
    }

    /// Expression over `x` only, bound against the config parameters.
    pub fn expr_opt(&self, key: &str, cfg: &SystemConfig, x_dim: usize) -> Result<Option<Expr>> {
        self.str_opt(key)?
            .map(|src| {
                parse_expression(src)
                    .and_then(|e| {
                        e.bind(
                            &cfg.params,
                            Scope {
                                x_dim,
                                y_dim: 0,
                                time: false,
                            },
                        )
                    })
                    .map_err(|e| cfg_err(self.at(key), e.to_string()))
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_autonomous() {
        let cfg =
            SystemConfig::from_text(r#"{"kind":"autonomous","dims":{"x":1},"map":{"x":["a*x[0]"]},"params":{"a":0.5}}"#).unwrap();
        let sys = cfg.dyn_system().unwrap();
        assert_eq!(sys.dim(), 1);
        assert_eq!(sys.eval(0, &Vector::from_element(1, 8.0))[0], 4.0);
        assert_eq!(cfg.linear_tv().unwrap().at(3)[(0, 0)], 0.5);
        assert_eq!(cfg.digest.len(), 64);
    }

    fn pointer(text: &str) -> String {
        match SystemConfig::from_text(text) {
            Err(Error::Config { pointer, .. }) => pointer,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_pointers() {
        assert_eq!(pointer(r#"{"kind":"autonomous","map":{"x":["x[0]"]}}"#), "/dims");
        assert_eq!(pointer(r#"{"kind":"nope","dims":{"x":1},"map":{"x":["x[0]"]}}"#), "/kind");
        assert_eq!(
            pointer(r#"{"kind":"autonomous","dims":{"x":1},"map":{"x":["x[0]","1"]}}"#),
            "/map/x"
        );
        assert_eq!(
            pointer(r#"{"kind":"autonomous","dims":{"x":1},"map":{"x":["b*x[0]"]}}"#),
            "/map/x/0"
        );
        assert_eq!(
            pointer(r#"{"kind":"autonomous","dims":{"x":1},"map":{"x":["t*x[0]"]}}"#),
            "/map/x/0"
        );
        assert_eq!(
            pointer(r#"{"kind":"slow_fast","dims":{"x":1},"map":{"x":["x[0]"]}}"#),
            "/dims/y"
        );
        assert_eq!(
            pointer(r#"{"kind":"autonomous","dims":{"x":1},"map":{"x":["x[0]"]},"analyses":[{"horizon":3}]}"#),
            "/analyses/0/command"
        );
    }

    #[test]
    fn slow_fast_config() {
        let cfg = SystemConfig::from_text(
            r#"{"kind":"slow_fast","dims":{"x":1,"y":1},"map":{"x":["-x[0]+y[0]"],"y":["0.5*y[0]"]},"epsilon":0.1}"#,
        )
        .unwrap();
        let sf = cfg.slow_fast().unwrap();
        assert_eq!(sf.epsilon(), 0.1);
        let v = |a: f64| Vector::from_element(1, a);
        assert_eq!(sf.phi(0, &v(1.0), &v(2.0))[0], 1.0);
        assert_eq!(sf.ystar(&v(3.0))[0], 0.0);
        let combined = cfg.dyn_system().unwrap();
        let z = combined.eval(0, &Vector::from_vec(vec![1.0, 2.0]));
        assert!((z[0] - 1.1).abs() < 1e-15 && z[1] == 1.0);
    }

    #[test]
    fn eval_errors_become_nan() {
        let cfg = SystemConfig::from_text(r#"{"kind":"autonomous","dims":{"x":1},"map":{"x":["1/x[0]"]}}"#).unwrap();
        let sys = cfg.dyn_system().unwrap();
        assert!(sys.eval(0, &Vector::zeros(1))[0].is_nan());
    }
}
