//! Verification reports and their JSON, CSV and SVG renderings.
//!
//! Output is deterministic: keys are sorted, floats are rounded to 12
//! significant digits, and runtimes are emitted only on request.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|computed - reference| ≤ tolerance`
    Absolute,
    /// `|computed - reference| ≤ tolerance·|reference|`
    Relative,
    /// `|computed - reference| ≤ 3·SE + tolerance`
    Statistical,
    /// `computed ≤ reference + tolerance`
    UpperBound,
    /// `computed ≥ reference - tolerance`
    LowerBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub inputs: BTreeMap<String, f64>,
    pub inputs_digest: String,
    pub computed: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub standard_error: Option<f64>,
    pub comparison: Comparison,
    pub pass: bool,
    pub runtime_s: f64,
    pub note: Option<String>,
    pub extra: BTreeMap<String, f64>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl VerificationReport {
    pub fn new(
        check_name: impl Into<String>,
        comparison: Comparison,
        computed: f64,
        reference: f64,
        tolerance: f64,
        standard_error: Option<f64>,
    ) -> Self {
        let mut r = VerificationReport {
            check_name: check_name.into(),
            inputs: BTreeMap::new(),
            inputs_digest: String::new(),
            computed,
            reference,
            tolerance,
            standard_error,
            comparison,
            pass: false,
            runtime_s: 0.0,
            note: None,
            extra: BTreeMap::new(),
        };
        r.refresh();
        r
    }

    pub fn absolute(name: impl Into<String>, computed: f64, reference: f64, tol: f64) -> Self {
        Self::new(name, Comparison::Absolute, computed, reference, tol, None)
    }

    pub fn relative(name: impl Into<String>, computed: f64, reference: f64, tol: f64) -> Self {
        Self::new(name, Comparison::Relative, computed, reference, tol, None)
    }

    pub fn statistical(name: impl Into<String>, computed: f64, reference: f64, se: f64, bias: f64) -> Self {
        Self::new(name, Comparison::Statistical, computed, reference, bias, Some(se))
    }

    pub fn upper_bound(name: impl Into<String>, computed: f64, bound: f64, tol: f64) -> Self {
        Self::new(name, Comparison::UpperBound, computed, bound, tol, None)
    }

    pub fn lower_bound(name: impl Into<String>, computed: f64, bound: f64, tol: f64) -> Self {
        Self::new(name, Comparison::LowerBound, computed, bound, tol, None)
    }

    pub fn with_input(mut self, key: &str, value: f64) -> Self {
        self.inputs.insert(key.to_string(), value);
        self.refresh();
        self
    }

    pub fn with_extra(mut self, key: &str, value: f64) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn with_runtime(mut self, seconds: f64) -> Self {
        self.runtime_s = seconds;
        self
    }

    /// Force a failing verdict, e.g. when a computation errored.
    pub fn failed(mut self, note: impl Into<String>) -> Self {
        self.pass = false;
        self.note = Some(note.into());
        self
    }

    fn refresh(&mut self) {
        let mut s = self.check_name.clone();
        for (k, v) in &self.inputs {
            let _ = write!(s, ";{k}={}", round12(*v));
        }
        self.inputs_digest = format!("{:016x}", fnv1a(s.as_bytes()));
        self.pass = self.evaluate();
    }

    fn evaluate(&self) -> bool {
        let (c, r, t) = (self.computed, self.reference, self.tolerance);
        if !c.is_finite() {
            return false;
        }
        match self.comparison {
            Comparison::Absolute => (c - r).abs() <= t,
            Comparison::Relative => (c - r).abs() <= t * r.abs(),
            Comparison::Statistical => (c - r).abs() <= 3.0 * self.standard_error.unwrap_or(0.0) + t,
            Comparison::UpperBound => c <= r + t,
            Comparison::LowerBound => c >= r - t,
        }
    }

    /// One line of the form `[PASS] name: computed=… reference=…`.
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "[{}] {}: computed={} reference={} tol={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.check_name,
            fmt12(self.computed),
            fmt12(self.reference),
            fmt12(self.tolerance)
        );
        if let Some(se) = self.standard_error {
            let _ = write!(s, " se={}", fmt12(se));
        }
        s
    }
}

/// Round to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn fmt12(x: f64) -> String {
    if x.is_finite() {
        format!("{}", round12(x))
    } else {
        format!("{x}")
    }
}

fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(round12(x))
    } else {
        Value::String(format!("{x}"))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EmitOptions {
    pub include_runtime: bool,
}

/// JSON value of a report with stable key order.
pub fn report_value(r: &VerificationReport, opts: EmitOptions) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("check_name".into(), json!(r.check_name));
    m.insert("comparison".into(), serde_json::to_value(r.comparison).unwrap());
    m.insert("computed".into(), num(r.computed));
    m.insert("reference".into(), num(r.reference));
    m.insert("tolerance".into(), num(r.tolerance));
    m.insert(
        "standard_error".into(),
        r.standard_error.map(num).unwrap_or(Value::Null),
    );
    m.insert("pass".into(), json!(r.pass));
    m.insert("inputs_digest".into(), json!(r.inputs_digest));
    let inputs: serde_json::Map<_, _> = r.inputs.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
    m.insert("inputs".into(), Value::Object(inputs));
    let extra: serde_json::Map<_, _> = r.extra.iter().map(|(k, v)| (k.clone(), num(*v))).collect();
    m.insert("extra".into(), Value::Object(extra));
    m.insert("note".into(), r.note.clone().map(Value::String).unwrap_or(Value::Null));
    if opts.include_runtime {
        m.insert("runtime_s".into(), num(r.runtime_s));
    }
    Value::Object(m)
}

pub fn reports_to_json(reports: &[VerificationReport], opts: EmitOptions) -> String {
    let arr: Vec<Value> = reports.iter().map(|r| report_value(r, opts)).collect();
    let mut s = serde_json::to_string_pretty(&Value::Array(arr)).unwrap();
    s.push('\n');
    s
}

/// Parse reports previously written by [`reports_to_json`].
pub fn reports_from_json(text: &str) -> Result<Vec<VerificationReport>> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let arr = v.as_array().ok_or_else(|| Error::Format("expected a JSON array".into()))?;
    fn as_num(v: Option<&Value>) -> f64 {
        match v {
            Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
            Some(Value::String(s)) => s.parse().unwrap_or(f64::NAN),
            _ => f64::NAN,
        }
    }
    let f = |o: &Value, k: &str| as_num(o.get(k));
    let map = |o: &Value, k: &str| -> BTreeMap<String, f64> {
        o.get(k)
            .and_then(|m| m.as_object())
            .map(|m| m.iter().map(|(key, v)| (key.clone(), as_num(Some(v)))).collect())
            .unwrap_or_default()
    };
    arr.iter()
        .map(|o| {
            let comparison: Comparison = serde_json::from_value(o["comparison"].clone())
                .map_err(|e| Error::Format(e.to_string()))?;
            Ok(VerificationReport {
                check_name: o["check_name"].as_str().unwrap_or_default().to_string(),
                inputs: map(o, "inputs"),
                inputs_digest: o["inputs_digest"].as_str().unwrap_or_default().to_string(),
                computed: f(o, "computed"),
                reference: f(o, "reference"),
                tolerance: f(o, "tolerance"),
                standard_error: o.get("standard_error").and_then(|v| v.as_f64()),
                comparison,
                pass: o["pass"].as_bool().unwrap_or(false),
                runtime_s: f(o, "runtime_s").max(0.0),
                note: o.get("note").and_then(|v| v.as_str()).map(str::to_string),
                extra: map(o, "extra"),
            })
        })
        .collect()
}

pub fn reports_to_csv(reports: &[VerificationReport]) -> String {
    let mut s = String::from(
        "check_name,comparison,computed,reference,tolerance,standard_error,pass,inputs_digest\n",
    );
    for r in reports {
        let cmp = serde_json::to_value(r.comparison).unwrap();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.check_name),
            cmp.as_str().unwrap(),
            fmt12(r.computed),
            fmt12(r.reference),
            fmt12(r.tolerance),
            r.standard_error.map(fmt12).unwrap_or_default(),
            r.pass,
            r.inputs_digest
        );
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| Error::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A polyline or scatter series for [`svg_plot`].
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub markers: bool,
}

#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub annotation: Option<String>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Static SVG line/scatter plot with optional log axes.
pub fn svg_plot(spec: &PlotSpec, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 70.0, 20.0, 40.0, 50.0);
    let tx = |x: f64| if spec.log_x { x.log10() } else { x };
    let ty = |y: f64| if spec.log_y { y.log10() } else { y };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        w / 2.0,
        xml_escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let lx = if spec.log_x { format!("1e{:.2}", fx) } else { format!("{:.3}", fx) };
        let ly = if spec.log_y { format!("1e{:.2}", fy) } else { format!("{:.3}", fy) };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(fx),
            h - mb + 16.0,
            lx
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 4.0,
            py(fy) + 4.0,
            ly
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (ml + w - mr) / 2.0,
        h - 10.0,
        xml_escape(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        xml_escape(&spec.y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mapped: Vec<(f64, f64)> = ser
            .points
            .iter()
            .map(|&(x, y)| (tx(x), ty(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| (px(x), py(y)))
            .collect();
        if ser.markers {
            for (x, y) in &mapped {
                let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
            }
        } else if !mapped.is_empty() {
            let d: Vec<String> = mapped.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                d.join(" ")
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            ml + 10.0,
            mt + 16.0 + 14.0 * k as f64,
            xml_escape(&ser.label)
        );
    }
    if let Some(a) = &spec.annotation {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            w - mr - 8.0,
            h - mb - 10.0,
            xml_escape(a)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_is_empty_array() {
        let s = reports_to_json(&[], EmitOptions::default());
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v, json!([]));
    }

    #[test]
    fn deterministic_bytes() {
        let r = VerificationReport::relative("c", 1.0 / 3.0, 0.3333, 1e-3).with_input("h", 0.3);
        let a = reports_to_json(&[r.clone(), r.clone()], EmitOptions::default());
        let b = reports_to_json(&[r.clone(), r], EmitOptions::default());
        assert_eq!(a, b);
        assert!(a.contains("0.333333333333"));
        assert!(!a.contains("0.3333333333333"));
    }

    #[test]
    fn pass_rules() {
        assert!(VerificationReport::absolute("a", 1.0, 1.05, 0.1).pass);
        assert!(!VerificationReport::relative("r", 1.0, 1.05, 0.01).pass);
        assert!(VerificationReport::statistical("s", 1.0, 1.25, 0.1, 0.0).pass);
        assert!(!VerificationReport::statistical("s", 1.0, 1.35, 0.1, 0.0).pass);
        assert!(VerificationReport::upper_bound("u", 0.9, 1.0, 0.0).pass);
        assert!(!VerificationReport::lower_bound("l", 0.9, 1.0, 0.0).pass);
        assert!(!VerificationReport::absolute("nan", f64::NAN, 1.0, 1.0).pass);
    }

    #[test]
    fn digest_depends_on_inputs() {
        let a = VerificationReport::absolute("x", 1.0, 1.0, 0.0).with_input("h", 0.3);
        let b = VerificationReport::absolute("x", 1.0, 1.0, 0.0).with_input("h", 0.4);
        assert_ne!(a.inputs_digest, b.inputs_digest);
    }

    #[test]
    fn json_round_trip() {
        let r = VerificationReport::statistical("s", 1.0, 1.1, 0.05, 0.01)
            .with_input("h", 0.3)
            .with_extra("slope", 0.61)
            .with_note("n");
        let text = reports_to_json(&[r.clone()], EmitOptions::default());
        let back = reports_from_json(&text).unwrap();
        assert_eq!(back[0].check_name, r.check_name);
        assert_eq!(back[0].inputs, r.inputs);
        assert_eq!(back[0].extra, r.extra);
        assert_eq!(back[0].pass, r.pass);
        assert_eq!(reports_to_json(&back, EmitOptions::default()), text);
    }

    #[test]
    fn svg_contains_annotation() {
        let spec = PlotSpec {
            title: "fit".into(),
            x_label: "lag".into(),
            y_label: "moment".into(),
            log_x: true,
            log_y: true,
            annotation: Some("slope = 0.6".into()),
        };
        let s = svg_plot(
            &spec,
            &[Series {
                label: "data".into(),
                points: vec![(0.1, 0.2), (0.2, 0.3)],
                markers: true,
            }],
        );
        assert!(s.starts_with("<svg") && s.contains("slope = 0.6") && s.contains("<circle"));
    }
}
