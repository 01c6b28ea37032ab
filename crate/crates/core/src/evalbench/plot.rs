//! Static SVG line charts from long-format CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{GenliError, Result};

#[derive(Clone, Debug)]
pub struct ChartSpec {
    pub x: String,
    pub y: String,
    /// Columns whose values, joined, name a series.
    pub series: Vec<String>,
    /// Only rows whose column equals the value are drawn.
    pub filter: Vec<(String, String)>,
    pub log_x: bool,
    pub log_y: bool,
    pub title: String,
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 180.0, 40.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        GenliError::config(format!(
            "column '{name}' not in table (have {})",
            headers.iter().collect::<Vec<_>>().join(", ")
        ))
    })
}

/// Groups rows into series of (x, y) points sorted by x.
pub fn read_series(csv_text: &str, spec: &ChartSpec) -> Result<Series> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(|e| GenliError::data(format!("bad csv header: {e}")))?.clone();
    let xi = column(&headers, &spec.x)?;
    let yi = column(&headers, &spec.y)?;
    let si = spec.series.iter().map(|s| column(&headers, s)).collect::<Result<Vec<_>>>()?;
    let fi = spec.filter.iter().map(|(c, v)| Ok((column(&headers, c)?, v.as_str()))).collect::<Result<Vec<_>>>()?;
    let mut out = Series::new();
    for (n, row) in reader.records().enumerate() {
        let row = row.map_err(|e| GenliError::data(format!("csv row {}: {e}", n + 2)))?;
        if fi.iter().any(|&(c, v)| row.get(c) != Some(v)) {
            continue;
        }
        let num = |i: usize| -> Result<f64> {
            let raw = row.get(i).unwrap_or("");
            raw.parse().map_err(|_| GenliError::data(format!("csv row {}: '{raw}' is not a number", n + 2)))
        };
        let name = if si.is_empty() {
            spec.y.clone()
        } else {
            si.iter()
                .map(|&i| format!("{}={}", headers[i].to_owned(), row.get(i).unwrap_or("")))
                .collect::<Vec<_>>()
                .join(" ")
        };
        out.entry(name).or_default().push((num(xi)?, num(yi)?));
    }
    if out.is_empty() {
        return Err(GenliError::data("no rows to plot"));
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

fn axis(lo: f64, hi: f64, log: bool) -> (f64, f64) {
    let (lo, hi) = if log { (lo.log10(), hi.log10()) } else { (lo.min(0.0), hi) };
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn label(v: f64, log: bool) -> String {
    let v = if log { 10f64.powf(v) } else { v };
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

pub fn render_svg(series: &Series, spec: &ChartSpec) -> Result<String> {
    let tx = |v: f64| if spec.log_x { v.log10() } else { v };
    let ty = |v: f64| if spec.log_y { v.log10() } else { v };
    let points = series.values().flatten();
    if (spec.log_x && points.clone().any(|p| p.0 <= 0.0)) || (spec.log_y && points.clone().any(|p| p.1 <= 0.0)) {
        return Err(GenliError::data("log axis needs strictly positive values"));
    }
    if points.clone().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(GenliError::data("non-finite value in plotted columns"));
    }
    let fold = |f: fn(&(f64, f64)) -> f64, init: f64, pick: fn(f64, f64) -> f64| points.clone().map(f).fold(init, pick);
    let (x0, x1) = axis(fold(|p| p.0, f64::INFINITY, f64::min), fold(|p| p.0, f64::NEG_INFINITY, f64::max), spec.log_x);
    let (y0, y1) = axis(fold(|p| p.1, f64::INFINITY, f64::min), fold(|p| p.1, f64::NEG_INFINITY, f64::max), spec.log_y);
    let (ml, mr, mt, mb) = MARGIN;
    let pw = WIDTH - ml - mr;
    let ph = HEIGHT - mt - mb;
    let px = |v: f64| ml + (v - x0) / (x1 - x0) * pw;
    let py = |v: f64| mt + ph - (v - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        ml + pw / 2.0,
        escape(&spec.title)
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#ddd"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"##,
            px(xv),
            mt,
            mt + ph,
            mt + ph + 18.0,
            label(xv, spec.log_x)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#ddd"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5}</text>"##,
            ml,
            py(yv),
            ml + pw,
            ml - 6.0,
            py(yv) + 4.0,
            label(yv, spec.log_y)
        );
    }
    let _ = writeln!(svg, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        HEIGHT - 10.0,
        escape(&spec.x)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        mt + ph / 2.0,
        escape(&spec.y)
    );
    for (n, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(tx(x)), py(ty(y)))).collect();
        let _ =
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for p in &path {
            let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = mt + 10.0 + 18.0 * n as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#,
            ml + pw + 10.0,
            ly,
            ml + pw + 30.0,
            ml + pw + 36.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn plot_file(input: &Path, output: &Path, spec: &ChartSpec) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| GenliError::data(format!("cannot read {}: {e}", input.display())))?;
    let svg = render_svg(&read_series(&text, spec)?, spec)?;
    std::fs::write(output, svg).map_err(GenliError::Io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ChartSpec {
        ChartSpec {
            x: "L".into(),
            y: "ns".into(),
            series: vec!["method".into()],
            filter: vec![("d_h".into(), "8".into())],
            log_x: true,
            log_y: false,
            title: "t".into(),
        }
    }

    const TABLE: &str = "method,L,d_h,ns\na,1000,8,2.0\na,500,8,1.0\nb,1000,8,3\na,1000,16,9\n";

    #[test]
    fn groups_filters_and_sorts() {
        let s = read_series(TABLE, &spec()).unwrap();
        assert_eq!(s["method=a"], vec![(500.0, 1.0), (1000.0, 2.0)]);
        assert_eq!(s["method=b"], vec![(1000.0, 3.0)]);
    }

    #[test]
    fn renders_one_polyline_per_series() {
        let s = read_series(TABLE, &spec()).unwrap();
        let svg = render_svg(&s, &spec()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn unknown_column_is_a_config_error() {
        let bad = ChartSpec { y: "nope".into(), ..spec() };
        assert!(matches!(read_series(TABLE, &bad), Err(GenliError::Config(_))));
    }

    #[test]
    fn log_axis_rejects_zero() {
        let s = read_series("method,L,d_h,ns\na,0,8,1\n", &spec()).unwrap();
        assert!(matches!(render_svg(&s, &spec()), Err(GenliError::Data(_))));
    }
}
