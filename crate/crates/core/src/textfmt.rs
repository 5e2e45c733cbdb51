//! Number formatting shared by the line-oriented file formats and CSV.

use crate::error::Error;

/// Formats `x` in plain decimal with `sig` significant digits, switching to
/// exponent notation for very small or very large magnitudes.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return format!("{:.*}", sig - 1, 0.0);
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&mag) {
        return format!("{:.*e}", sig - 1, x);
    }
    let decimals = (sig as i32 - 1 - mag).max(0) as usize;
    format!("{:.*}", decimals, x)
}

/// 17 significant digits: every `f64` survives a round trip.
pub fn fmt_exact(x: f64) -> String {
    fmt_sig(x, 17)
}

pub(crate) fn parse_f64(tok: &str, line: usize) -> Result<f64, Error> {
    tok.parse::<f64>().map_err(|e| Error::Parse {
        line,
        msg: format!("bad number {tok:?}: {e}"),
    })
}

pub(crate) fn parse_usize(tok: &str, line: usize) -> Result<usize, Error> {
    tok.parse::<usize>().map_err(|e| Error::Parse {
        line,
        msg: format!("bad integer {tok:?}: {e}"),
    })
}

/// Non-empty lines that are not `#` comments, with 1-based line numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}
