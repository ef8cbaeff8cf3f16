//! Table serialization (CSV, JSON) and SVG line plots.
//!
//! CSV cells use `{:.16e}`: 17 significant digits, which round-trips every
//! finite `f64`. Non-finite values are written as `NaN`, `inf`, `-inf` in
//! both formats. Output bytes depend only on the table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::sweep::SweepResult;

pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn parse_value(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Table(format!("`{s}` is not a number")))
}

pub fn to_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&result.columns).map_err(csv_error)?;
    for (i, row) in result.rows.iter().enumerate() {
        if row.len() != result.columns.len() {
            return Err(Error::Table(format!(
                "row {i} has {} values for {} columns",
                row.len(),
                result.columns.len()
            )));
        }
        w.write_record(row.iter().map(|&x| format_value(x))).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Table(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Table(e.to_string()))
}

pub fn from_csv(text: &str) -> Result<SweepResult> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let columns: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        rows.push(rec.iter().map(parse_value).collect::<Result<Vec<_>>>()?);
    }
    Ok(SweepResult::new(columns, rows))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Table(e.to_string())
}

fn value_to_json(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::String(format_value(x))
    }
}

fn value_from_json(v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::Table(format!("`{n}` is not an f64"))),
        Value::String(s) => match s.as_str() {
            "NaN" | "inf" | "-inf" => parse_value(s),
            _ => Err(Error::Table(format!("unexpected string `{s}` in rows"))),
        },
        other => Err(Error::Table(format!("unexpected value `{other}` in rows"))),
    }
}

pub fn to_json(result: &SweepResult) -> Result<String> {
    let rows: Vec<Value> = result
        .rows
        .iter()
        .map(|r| Value::Array(r.iter().map(|&x| value_to_json(x)).collect()))
        .collect();
    let meta: Map<String, Value> = result.meta.clone().into_iter().collect();
    let doc = json!({ "columns": result.columns, "rows": rows, "meta": meta });
    let mut s = serde_json::to_string(&doc).map_err(|e| Error::Table(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(text: &str) -> Result<SweepResult> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Table(e.to_string()))?;
    let field = |name: &str| doc.get(name).ok_or_else(|| Error::Table(format!("missing key `{name}`")));
    let columns = field("columns")?
        .as_array()
        .ok_or_else(|| Error::Table("`columns` must be an array".into()))?
        .iter()
        .map(|c| c.as_str().map(str::to_string).ok_or_else(|| Error::Table("column names must be strings".into())))
        .collect::<Result<Vec<_>>>()?;
    let rows = field("rows")?
        .as_array()
        .ok_or_else(|| Error::Table("`rows` must be an array".into()))?
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| Error::Table("each row must be an array".into()))?
                .iter()
                .map(value_from_json)
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let meta: BTreeMap<String, Value> = match field("meta")? {
        Value::Object(m) => m.clone().into_iter().collect(),
        _ => return Err(Error::Table("`meta` must be an object".into())),
    };
    Ok(SweepResult { columns, rows, meta })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("format must be `csv` or `json`, got `{s}`")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub fn write_table(result: &SweepResult, format: Format, path: &Path) -> Result<()> {
    let body = match format {
        Format::Csv => to_csv(result)?,
        Format::Json => to_json(result)?,
    };
    fs::write(path, body)?;
    Ok(())
}

/// Writes `meta` (plus `wall_time_s` when given) as a JSON sidecar.
pub fn write_meta(result: &SweepResult, path: &Path, wall_time: Option<f64>) -> Result<()> {
    let mut meta: Map<String, Value> = result.meta.clone().into_iter().collect();
    if let Some(w) = wall_time {
        meta.insert("wall_time_s".into(), json!(w));
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(meta)).map_err(|e| Error::Table(e.to_string()))?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Ticks at multiples of 1, 2 or 5 × 10ⁿ covering `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    let ticks = (first..=last).map(|i| i as f64 * step).collect();
    (ticks, decimals)
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// A standalone SVG with one polyline per `y_cols` entry against `x_col`.
pub fn render_svg(result: &SweepResult, x_col: &str, y_cols: &[&str]) -> Result<String> {
    let xi = result.column_index(x_col)?;
    let yis = y_cols.iter().map(|c| result.column_index(c)).collect::<Result<Vec<_>>>()?;
    if result.rows.len() < 2 {
        return Err(Error::TooFewRows(result.rows.len()));
    }
    let (x0, x1) = padded_range(result.rows.iter().map(|r| r[xi]));
    let (y0, y1) = padded_range(result.rows.iter().flat_map(|r| yis.iter().map(move |&i| r[i])));
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    let (xt, xd) = nice_ticks(x0, x1);
    for t in xt {
        let px = sx(t);
        let yb = MARGIN_TOP + ph;
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{yb}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, yb + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{t:.xd$}</text>"#, yb + 20.0);
    }
    let (yt, yd) = nice_ticks(y0, y1);
    for t in yt {
        let py = sy(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{MARGIN_LEFT}" y2="{py:.2}" stroke="black"/>"#,
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.yd$}</text>"#,
            MARGIN_LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_col)
    );

    for (n, (&yi, name)) in yis.iter().zip(y_cols).enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let points: Vec<String> = result
            .rows
            .iter()
            .filter(|r| r[xi].is_finite() && r[yi].is_finite())
            .map(|r| format!("{:.2},{:.2}", sx(r[xi]), sy(r[yi])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN_TOP + 15.0 + 18.0 * n as f64;
        let lx = WIDTH - MARGIN_RIGHT + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(result: &SweepResult, x_col: &str, y_cols: &[&str], path: &Path) -> Result<()> {
    fs::write(path, render_svg(result, x_col, y_cols)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(cols: &[&str], rows: Vec<Vec<f64>>) -> SweepResult {
        SweepResult::new(cols.iter().map(|c| c.to_string()).collect(), rows)
    }

    #[test]
    fn csv_rendering_contract() {
        let t = table(&["x"], vec![vec![0.5]]);
        assert_eq!(to_csv(&t).unwrap(), "x\n5.0000000000000000e-1\n");
        let empty = table(&["t", "e_density"], Vec::new());
        assert_eq!(to_csv(&empty).unwrap(), "t,e_density\n");
        assert_eq!(format_value(f64::NAN), "NaN");
        assert_eq!(format_value(-1.0 / 3.0), "-3.3333333333333331e-1");
        assert!(to_csv(&table(&["a", "b"], vec![vec![1.0]])).is_err());
    }

    #[test]
    fn non_finite_values_survive_both_formats() {
        let t = table(&["a", "b", "c"], vec![vec![f64::NAN, f64::INFINITY, f64::NEG_INFINITY]]);
        for back in [from_csv(&to_csv(&t).unwrap()).unwrap(), from_json(&to_json(&t).unwrap()).unwrap()] {
            assert!(back.rows[0][0].is_nan());
            assert_eq!(back.rows[0][1..], [f64::INFINITY, f64::NEG_INFINITY]);
        }
    }

    #[test]
    fn json_layout_and_meta() {
        let mut t = table(&["t"], vec![vec![0.1], vec![-0.0]]);
        t.meta.insert("gf".into(), json!(1.3));
        let s = to_json(&t).unwrap();
        assert!(s.starts_with(r#"{"columns":["t"],"meta":{"gf":1.3},"rows":[[0.1],[-0.0]]}"#));
        let back = from_json(&s).unwrap();
        assert_eq!(back, t);
        assert!(back.rows[1][0].is_sign_negative());
        assert!(from_json(r#"{"columns":["t"],"rows":[["x"]],"meta":{}}"#).is_err());
    }

    #[test]
    fn svg_contract() {
        let rows = (0..10).map(|i| vec![i as f64, (i * i) as f64, i as f64]).collect();
        let t = table(&["t", "a", "b"], rows);
        let svg = render_svg(&t, "t", &["a", "b"]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains(">a</text>") && svg.contains(">b</text>"));
        assert_eq!(svg, render_svg(&t, "t", &["a", "b"]).unwrap());
        assert!(matches!(render_svg(&t, "x", &["a"]), Err(Error::MissingColumn(c)) if c == "x"));
        assert!(matches!(render_svg(&t, "t", &["zz"]), Err(Error::MissingColumn(_))));
        let one = table(&["t", "a"], vec![vec![0.0, 1.0]]);
        assert!(matches!(render_svg(&one, "t", &["a"]), Err(Error::TooFewRows(1))));
        let flat = table(&["t", "a"], vec![vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert!(render_svg(&flat, "t", &["a"]).is_ok());
    }

    #[test]
    fn ticks_are_round() {
        let (t, d) = nice_ticks(0.0, 8.0);
        assert_eq!(t, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(d, 0);
        let (t, d) = nice_ticks(0.0, 0.5);
        assert_eq!(t.len(), 6);
        assert_eq!(d, 1);
    }

    fn arb_table() -> impl Strategy<Value = SweepResult> {
        (1usize..6, 0usize..20).prop_flat_map(|(nc, nr)| {
            let cell = prop_oneof![
                8 => any::<f64>(),
                1 => -1e300f64..1e300,
                1 => Just(f64::MIN_POSITIVE / 3.0),
            ];
            proptest::collection::vec(proptest::collection::vec(cell, nc), nr)
                .prop_map(move |rows| table(&["a", "b", "c", "d", "e"][..nc], rows))
        })
    }

    fn same_bits(a: &SweepResult, b: &SweepResult) -> bool {
        a.columns == b.columns
            && a.rows.len() == b.rows.len()
            && a.rows.iter().zip(&b.rows).all(|(x, y)| {
                x.len() == y.len()
                    && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits() || (p.is_nan() && q.is_nan()))
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn csv_round_trip_is_exact(t in arb_table()) {
            prop_assert!(same_bits(&from_csv(&to_csv(&t).unwrap()).unwrap(), &t));
        }

        #[test]
        fn json_round_trip_is_exact(t in arb_table()) {
            prop_assert!(same_bits(&from_json(&to_json(&t).unwrap()).unwrap(), &t));
        }
    }
}
