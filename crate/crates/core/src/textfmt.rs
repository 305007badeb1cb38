//! Small helpers shared by the line-oriented text formats.

use std::collections::BTreeMap;

/// Error raised while reading one of the text formats.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

impl LineError {
    pub fn new(line: usize, reason: impl Into<String>) -> Self {
        Self {
            line,
            reason: reason.into(),
        }
    }
}

/// Splits `key=value` tokens into a map. Duplicate keys and bare tokens are
/// rejected.
pub fn key_values<'a, I>(tokens: I, line: usize) -> Result<BTreeMap<&'a str, &'a str>, LineError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = BTreeMap::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| LineError::new(line, format!("expected key=value, found `{tok}`")))?;
        if out.insert(k, v).is_some() {
            return Err(LineError::new(line, format!("duplicate key `{k}`")));
        }
    }
    Ok(out)
}

pub fn required<'a>(map: &BTreeMap<&'a str, &'a str>, key: &str, line: usize) -> Result<&'a str, LineError> {
    map.get(key)
        .copied()
        .ok_or_else(|| LineError::new(line, format!("missing `{key}`")))
}

pub fn parse_num<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> Result<T, LineError> {
    s.parse()
        .map_err(|_| LineError::new(line, format!("invalid {what} `{s}`")))
}

/// Parses a finite float; `NaN` and infinities are format errors everywhere
/// in this crate.
pub fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64, LineError> {
    let v: f64 = parse_num(s, what, line)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LineError::new(line, format!("non-finite {what} `{s}`")))
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
