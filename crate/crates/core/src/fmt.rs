//! Deterministic number formatting, CSV and SVG emission.

use std::io::Write;

use crate::error::Result;

/// `%.9g`-style rendering: 9 significant digits, '.' decimal point.
pub fn g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let s = format!("{:.*}", (8 - exp) as usize, x);
        trim_zeros(&s).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W, I, R>(out: W, header: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = R>,
    R: AsRef<[String]>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 600.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

/// Line chart with one polyline per series on a fixed 800×600 viewport.
pub fn svg_lines(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|s| s.1.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (SVG_W - ml - mr);
    let sy = |y: f64| SVG_H - mb - (y - y0) / (y1 - y0) * (SVG_H - mt - mb);
    let mut s = String::new();
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">\n";
    s += "<rect width=\"800\" height=\"600\" fill=\"white\"/>\n";
    s += &format!("<text x=\"400\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n", esc(title));
    s += &format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        SVG_W - ml - mr,
        SVG_H - mt - mb
    );
    s += &format!("<text x=\"400\" y=\"590\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n", esc(x_label));
    s += &format!(
        "<text x=\"16\" y=\"300\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 300)\">{}</text>\n",
        esc(y_label)
    );
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        s += &format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{}</text>\n",
            ml - 4.0,
            y + 4.0,
            g9_short(v)
        );
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        s += &format!(
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">{}</text>\n",
            SVG_H - mb + 16.0,
            g9_short(v)
        );
    }
    for (k, (label, data)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = data
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s += &format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        );
        s += &format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            ml + 10.0,
            mt + 16.0 + 16.0 * k as f64,
            esc(label)
        );
    }
    s += "</svg>\n";
    s
}

fn g9_short(v: f64) -> String {
    format!("{:.4}", v)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
