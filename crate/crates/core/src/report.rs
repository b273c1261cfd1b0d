//! Structured experiment output.
//!
//! Floating point values round-trip exactly through JSON; non-finite values
//! are written as the strings `"NaN"`, `"inf"` and `"-inf"`.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const REPORT_SCHEMA: &str = "hofer-lab/report/v1";

/// An `f64` that serializes losslessly, including non-finite values.
#[derive(Clone, Copy, Debug)]
pub struct Num(pub f64);

impl PartialEq for Num {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits() || (self.0.is_nan() && other.0.is_nan())
    }
}

impl From<f64> for Num {
    fn from(v: f64) -> Self {
        Num(v)
    }
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_nan() {
            s.serialize_str("NaN")
        } else if v == f64::INFINITY {
            s.serialize_str("inf")
        } else if v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(v)
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Num;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or one of \"NaN\", \"inf\", \"-inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Num, E> {
                Ok(Num(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Num, E> {
                Ok(Num(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Num, E> {
                match v {
                    "NaN" => Ok(Num(f64::NAN)),
                    "inf" => Ok(Num(f64::INFINITY)),
                    "-inf" => Ok(Num(f64::NEG_INFINITY)),
                    _ => Err(E::custom(format!("bad number string {v}"))),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scalar {
    pub value: Num,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_bar: Option<Num>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Curve {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Num>>,
}

impl Curve {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row.iter().map(|v| Num(*v)).collect());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub value: Num,
    pub tolerance: Num,
    /// How `value` is compared with `tolerance`, e.g. `"<="`.
    pub comparison: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema: String,
    #[serde(default)]
    pub version: String,
    pub experiment: String,
    /// The claim the experiment reproduces, in words.
    pub claim: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub scalars: BTreeMap<String, Scalar>,
    #[serde(default)]
    pub curves: BTreeMap<String, Curve>,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
    /// Structured values that are not single scalars.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub results: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<Num>,
}

impl Report {
    pub fn new(experiment: &str, claim: &str) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: experiment.into(),
            claim: claim.into(),
            config: serde_json::Value::Null,
            scalars: BTreeMap::new(),
            curves: BTreeMap::new(),
            verdicts: Vec::new(),
            results: BTreeMap::new(),
            notes: Vec::new(),
            runtime_ms: None,
        }
    }

    pub fn scalar(&mut self, name: &str, v: f64) -> &mut Self {
        self.scalars.insert(name.into(), Scalar { value: Num(v), error_bar: None });
        self
    }

    pub fn scalar_with_error(&mut self, name: &str, v: f64, err: f64) -> &mut Self {
        self.scalars.insert(name.into(), Scalar { value: Num(v), error_bar: Some(Num(err)) });
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).map(|s| s.value.0)
    }

    pub fn curve(&mut self, name: &str, c: Curve) -> &mut Self {
        self.curves.insert(name.into(), c);
        self
    }

    pub fn result(&mut self, name: &str, v: serde_json::Value) -> &mut Self {
        self.results.insert(name.into(), v);
        self
    }

    pub fn note(&mut self, s: impl Into<String>) -> &mut Self {
        self.notes.push(s.into());
        self
    }

    /// Record `value <= tol`.
    pub fn check_le(&mut self, name: &str, value: f64, tol: f64) -> bool {
        let passed = value <= tol;
        self.verdicts.push(Verdict {
            name: name.into(),
            passed,
            value: Num(value),
            tolerance: Num(tol),
            comparison: "<=".into(),
            detail: String::new(),
        });
        passed
    }

    /// Record `value >= tol`.
    pub fn check_ge(&mut self, name: &str, value: f64, tol: f64) -> bool {
        let passed = value >= tol;
        self.verdicts.push(Verdict {
            name: name.into(),
            passed,
            value: Num(value),
            tolerance: Num(tol),
            comparison: ">=".into(),
            detail: String::new(),
        });
        passed
    }

    /// Record a boolean outcome.
    pub fn check_true(&mut self, name: &str, ok: bool, detail: impl Into<String>) -> bool {
        self.verdicts.push(Verdict {
            name: name.into(),
            passed: ok,
            value: Num(if ok { 1.0 } else { 0.0 }),
            tolerance: Num(1.0),
            comparison: "==".into(),
            detail: detail.into(),
        });
        ok
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn non_finite_values_round_trip() {
        let mut r = Report::new("x", "y");
        r.scalar("nan", f64::NAN).scalar("inf", f64::INFINITY).scalar("ninf", f64::NEG_INFINITY);
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(back.get("nan").unwrap().is_nan());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&Report::new("a", "b").to_json()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<Report>(v).is_err());
    }

    proptest! {
        #[test]
        fn reports_round_trip(vals in proptest::collection::vec(proptest::num::f64::ANY, 1..20), pass in any::<bool>()) {
            let mut r = Report::new("exp", "claim");
            let mut c = Curve::new(&["i", "v"]);
            for (i, v) in vals.iter().enumerate() {
                r.scalar(&format!("s{i}"), *v);
                c.push(&[i as f64, *v]);
            }
            r.curve("c", c);
            r.check_true("flag", pass, "");
            r.check_le("le", vals[0], 1.0);
            let back = Report::from_json(&r.to_json()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
