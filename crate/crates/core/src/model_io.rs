//! JSON file formats for models, fields and controls.
//!
//! Rates and velocities are written as decimal strings with 17 significant
//! digits, which round-trip every `f64` bit-exactly. Plain JSON numbers are
//! accepted on input, as are the strings `"inf"` and `"-inf"` and `null`
//! (read as `+∞`) wherever infinite values make sense.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doob::{ControlSpec, Velocity};
use crate::error::{Error, Result};
use crate::kernel::{PairField, RateKernel, ScalarField, StateSet};

/// A real number as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Number(f64),
    Text(String),
    Null,
}

impl Real {
    pub fn exact(v: f64) -> Self {
        Real::Text(format_exact(v))
    }

    pub fn value(&self, field: &str) -> Result<f64> {
        match self {
            Real::Number(v) => Ok(*v),
            Real::Null => Ok(f64::INFINITY),
            Real::Text(s) => parse_real(s).ok_or_else(|| Error::Field {
                field: field.to_string(),
                msg: format!("`{s}` is not a number"),
            }),
        }
    }
}

/// `v` with 17 significant digits.
pub fn format_exact(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.16e}")
}

pub fn parse_real(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" | "+infinity" => Some(f64::INFINITY),
        "-inf" | "-infinity" => Some(f64::NEG_INFINITY),
        t => t.parse::<f64>().ok().filter(|v| !v.is_nan()),
    }
}

/// A kernel together with optional transition sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kernel: RateKernel,
    pub a: StateSet,
    pub b: StateSet,
}

impl Model {
    pub fn new(kernel: RateKernel, a: StateSet, b: StateSet) -> Self {
        Self { kernel, a, b }
    }

    pub fn without_sets(kernel: RateKernel) -> Self {
        let n = kernel.n_states();
        Self {
            kernel,
            a: StateSet::empty(n),
            b: StateSet::empty(n),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    n_states: usize,
    rates: Vec<(usize, usize, Real)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(rename = "A", default)]
    a: Vec<usize>,
    #[serde(rename = "B", default)]
    b: Vec<usize>,
}

impl ModelFile {
    fn from_model(m: &Model) -> Self {
        Self {
            n_states: m.kernel.n_states(),
            rates: m
                .kernel
                .entries()
                .map(|(x, y, r)| (x, y, Real::exact(r)))
                .collect(),
            labels: m.kernel.labels().map(<[String]>::to_vec),
            a: m.a.members().to_vec(),
            b: m.b.members().to_vec(),
        }
    }

    fn into_model(self) -> Result<Model> {
        let triplets = self
            .rates
            .iter()
            .enumerate()
            .map(|(i, (x, y, r))| Ok((*x, *y, r.value(&format!("rates[{i}]"))?)))
            .collect::<Result<Vec<_>>>()?;
        let mut kernel = RateKernel::from_triplets(self.n_states, &triplets)?;
        if let Some(labels) = self.labels {
            kernel = kernel.with_labels(labels)?;
        }
        let a = StateSet::new(self.n_states, self.a).map_err(|e| field_err("A", e))?;
        let b = StateSet::new(self.n_states, self.b).map_err(|e| field_err("B", e))?;
        Ok(Model { kernel, a, b })
    }
}

fn field_err(field: &str, e: Error) -> Error {
    Error::Field {
        field: field.to_string(),
        msg: e.to_string(),
    }
}

pub fn parse_model(text: &str) -> Result<Model> {
    serde_json::from_str::<ModelFile>(text)?.into_model()
}

pub fn emit_model(m: &Model) -> String {
    to_pretty(&ModelFile::from_model(m))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    parse_model(&read(path)?)
}

pub fn write_model(path: impl AsRef<Path>, m: &Model) -> Result<()> {
    write(path, &emit_model(m))
}

pub fn read(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

#[derive(Deserialize)]
#[serde(untagged)]
enum VectorFile {
    Bare(Vec<Real>),
    Keyed(serde_json::Map<String, serde_json::Value>),
}

/// Reads a per-state vector stored either as a bare array or under `key`
/// in an object (as in the committor output `{"h": [...]}`).
pub fn parse_vector(text: &str, key: &str) -> Result<Vec<f64>> {
    let values = match serde_json::from_str::<VectorFile>(text)? {
        VectorFile::Bare(v) => v,
        VectorFile::Keyed(mut map) => {
            let raw = map.remove(key).ok_or_else(|| Error::Field {
                field: key.to_string(),
                msg: "missing".into(),
            })?;
            serde_json::from_value::<Vec<Real>>(raw).map_err(|e| Error::Field {
                field: key.to_string(),
                msg: e.to_string(),
            })?
        }
    };
    values
        .iter()
        .enumerate()
        .map(|(i, r)| r.value(&format!("{key}[{i}]")))
        .collect()
}

pub fn load_vector(path: impl AsRef<Path>, key: &str) -> Result<Vec<f64>> {
    parse_vector(&read(path)?, key)
}

/// The controlled kernel in model format plus the velocity map it came from.
#[derive(Debug, Serialize, Deserialize)]
struct ControlFile {
    #[serde(flatten)]
    model: ModelFile,
    velocity: Vec<(usize, usize, Real)>,
    h: Vec<Real>,
    absorbing: Vec<usize>,
    #[serde(default)]
    excluded: Vec<usize>,
}

/// Writes a homogeneous control over `base` together with its controlled
/// kernel. The sets of `base_model` are carried over.
pub fn emit_control(
    base_model: &Model,
    spec: &ControlSpec,
    controlled: &RateKernel,
) -> Result<String> {
    let base = &base_model.kernel;
    let v = spec
        .homogeneous()
        .ok_or_else(|| Error::InvalidField("only homogeneous controls can be written".into()))?;
    v.check_aligned(base)?;
    let model = Model {
        kernel: controlled.clone(),
        a: base_model.a.clone(),
        b: base_model.b.clone(),
    };
    let file = ControlFile {
        model: ModelFile::from_model(&model),
        velocity: base
            .entries()
            .enumerate()
            .map(|(e, (x, y, _))| (x, y, Real::exact(v[e])))
            .collect(),
        h: spec.source_field.iter().map(|&h| Real::exact(h)).collect(),
        absorbing: spec.absorbing.members().to_vec(),
        excluded: spec.excluded.members().to_vec(),
    };
    Ok(to_pretty(&file))
}

/// Reads a control written by [`emit_control`], aligning the velocity map
/// with `base`. Every pair of `base` must be listed.
pub fn parse_control(text: &str, base: &RateKernel) -> Result<(ControlSpec, RateKernel)> {
    let file: ControlFile = serde_json::from_str(text)?;
    let n = base.n_states();
    let mut values = vec![f64::NAN; base.n_entries()];
    for (i, (x, y, r)) in file.velocity.iter().enumerate() {
        let field = format!("velocity[{i}]");
        let e = base.entry_index(*x, *y).ok_or_else(|| Error::Field {
            field: field.clone(),
            msg: format!("pair ({x}, {y}) is not in the model"),
        })?;
        if !values[e].is_nan() {
            return Err(Error::DuplicateRateEntry { from: *x, to: *y });
        }
        values[e] = r.value(&field)?;
    }
    if let Some(e) = values.iter().position(|v| v.is_nan()) {
        let (x, y, _) = base.entries().nth(e).expect("entry in range");
        return Err(Error::Field {
            field: "velocity".into(),
            msg: format!("pair ({x}, {y}) has no velocity"),
        });
    }
    let h = file
        .h
        .iter()
        .enumerate()
        .map(|(i, r)| r.value(&format!("h[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    base.check_len(h.len())?;
    let spec = ControlSpec {
        velocity: Velocity::Homogeneous(PairField::from_values(base, values)?),
        source_field: ScalarField(h),
        absorbing: StateSet::new(n, file.absorbing).map_err(|e| field_err("absorbing", e))?,
        excluded: StateSet::new(n, file.excluded).map_err(|e| field_err("excluded", e))?,
    };
    let controlled = file.model.into_model()?.kernel;
    Ok((spec, controlled))
}

pub fn load_control(
    path: impl AsRef<Path>,
    base: &RateKernel,
) -> Result<(ControlSpec, RateKernel)> {
    parse_control(&read(path)?, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doob::doob_transform;

    fn m3_model() -> Model {
        let k = RateKernel::from_triplets(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 2.0), (2, 1, 1.0)])
            .unwrap();
        Model::new(
            k,
            StateSet::new(3, [0]).unwrap(),
            StateSet::new(3, [2]).unwrap(),
        )
    }

    #[test]
    fn m3_round_trip() {
        let m = m3_model();
        assert_eq!(parse_model(&emit_model(&m)).unwrap(), m);
    }

    #[test]
    fn awkward_rates_round_trip_bit_exactly() {
        let rates = [
            0.1,
            1.0 / 3.0,
            2.0f64.sqrt(),
            1e-300,
            5e-324,
            1.7976931348623157e308,
            0.30000000000000004,
        ];
        let trip: Vec<_> = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| (0, i + 1, r))
            .collect();
        let k = RateKernel::from_triplets(rates.len() + 1, &trip).unwrap();
        let m = Model::without_sets(
            k.with_labels((0..8).map(|i| format!("s{i}")).collect())
                .unwrap(),
        );
        let back = parse_model(&emit_model(&m)).unwrap();
        for ((_, _, a), (_, _, b)) in m.kernel.entries().zip(back.kernel.entries()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, m);
    }

    #[test]
    fn plain_numbers_accepted() {
        let m = parse_model(
            r#"{"n_states": 2, "rates": [[0, 1, 1.5], [1, 0, "2"]], "A": [0], "B": [1]}"#,
        )
        .unwrap();
        assert_eq!(m.kernel.rate(0, 1), 1.5);
        assert_eq!(m.kernel.rate(1, 0), 2.0);
    }

    #[test]
    fn structural_errors() {
        let diag = r#"{"n_states": 2, "rates": [[1, 1, 1.0]], "A": [0], "B": [1]}"#;
        assert_eq!(parse_model(diag), Err(Error::DiagonalEntry { state: 1 }));
        let dup = r#"{"n_states": 2, "rates": [[0, 1, 1.0], [0, 1, 2.0]], "A": [0], "B": [1]}"#;
        assert_eq!(
            parse_model(dup),
            Err(Error::DuplicateRateEntry { from: 0, to: 1 })
        );
        let bad = r#"{"n_states": 2, "rates": [[0, 1, "fast"]]}"#;
        assert!(matches!(parse_model(bad), Err(Error::Field { field, .. }) if field == "rates[0]"));
        let broken = "{\n  \"n_states\": 2,\n  \"rates\": [[0, 1, 1.0]\n}";
        assert!(matches!(
            parse_model(broken),
            Err(Error::Parse { line: 4, .. })
        ));
        let out = r#"{"n_states": 2, "rates": [], "A": [5]}"#;
        assert!(matches!(parse_model(out), Err(Error::Field { field, .. }) if field == "A"));
    }

    #[test]
    fn vectors_with_infinity() {
        assert_eq!(
            parse_vector(r#"[1.0, "inf", null]"#, "f").unwrap(),
            vec![1.0, f64::INFINITY, f64::INFINITY]
        );
        assert_eq!(
            parse_vector(r#"{"h": [0.5, 1], "residual": 0}"#, "h").unwrap(),
            vec![0.5, 1.0]
        );
        assert!(parse_vector(r#"{"g": []}"#, "h").is_err());
    }

    #[test]
    fn control_round_trip() {
        let m = m3_model();
        let h = ScalarField(vec![0.1, 0.7, 1.0]);
        let (spec, c) = doob_transform(&m.kernel, &h, &m.a.union(&m.b)).unwrap();
        let text = emit_control(&m, &spec, &c).unwrap();
        let (spec2, c2) = parse_control(&text, &m.kernel).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(c2, c);
        // the file is also a valid model
        assert_eq!(parse_model(&text).unwrap().kernel, c);
    }
}
