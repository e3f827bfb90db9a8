//! The `.pts` landmark annotation format used by the 300-W tooling.
//!
//! ```text
//! version: 1
//! n_points: 2
//! {
//! 1.5 2.5
//! 3 4
//! }
//! ```

use crate::error::{Error, Result};
use crate::geometry::{Point2, Shape};

/// Significant digits written per coordinate.
pub const PTS_SIGNIFICANT_DIGITS: usize = 9;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn header_value<'a>(line_no: usize, line: &'a str, key: &str) -> Result<&'a str> {
    let (k, v) = line
        .split_once(':')
        .ok_or_else(|| parse_err(line_no, format!("expected `{key}: <value>`")))?;
    if k.trim() != key {
        return Err(parse_err(
            line_no,
            format!("expected `{key}`, found `{}`", k.trim()),
        ));
    }
    Ok(v.trim())
}

pub fn read_pts(text: &str, schema_id: &str) -> Result<Shape> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (n, l) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing version line"))?;
    header_value(n, l, "version")?;

    let (n, l) = lines
        .next()
        .ok_or_else(|| parse_err(n + 1, "missing n_points line"))?;
    let count: usize = header_value(n, l, "n_points")?
        .parse()
        .map_err(|_| parse_err(n, "n_points is not a non-negative integer"))?;

    let (n, l) = lines
        .next()
        .ok_or_else(|| parse_err(n + 1, "missing `{`"))?;
    if l != "{" {
        return Err(parse_err(n, format!("expected `{{`, found `{l}`")));
    }

    let mut points = Vec::with_capacity(count);
    let mut last = n;
    loop {
        let (n, l) = lines
            .next()
            .ok_or_else(|| parse_err(last + 1, "missing closing `}`"))?;
        last = n;
        if l == "}" {
            break;
        }
        let mut tokens = l.split_whitespace();
        let mut coord = |name: &str| -> Result<f64> {
            let tok = tokens
                .next()
                .ok_or_else(|| parse_err(n, format!("missing {name} coordinate")))?;
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(n, format!("non-numeric token `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(n, format!("non-finite coordinate `{tok}`")));
            }
            Ok(v)
        };
        let x = coord("x")?;
        let y = coord("y")?;
        if let Some(extra) = tokens.next() {
            return Err(parse_err(n, format!("unexpected token `{extra}`")));
        }
        points.push(Point2::new(x, y));
    }
    if let Some((n, l)) = lines.next() {
        return Err(parse_err(
            n,
            format!("unexpected content after `}}`: `{l}`"),
        ));
    }
    if points.len() != count {
        return Err(parse_err(
            last,
            format!("n_points is {count} but {} pairs were given", points.len()),
        ));
    }
    Shape::new(schema_id, points)
}

/// Formats `v` with at most nine significant digits, trailing zeros trimmed.
pub fn format_coordinate(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (PTS_SIGNIFICANT_DIGITS as i32 - 1 - magnitude).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn write_pts(shape: &Shape) -> String {
    let mut out = format!("version: 1\nn_points: {}\n{{\n", shape.len());
    for p in shape.points() {
        out.push_str(&format_coordinate(p.x));
        out.push(' ');
        out.push_str(&format_coordinate(p.y));
        out.push('\n');
    }
    out.push_str("}\n");
    out
}
