//! The `family:key=value,...` mini-grammar shared by distribution and tail specs.

use crate::error::{Error, Result};

pub(crate) struct ParsedSpec<'a> {
    pub family: &'a str,
    params: Vec<(&'a str, f64)>,
    source: &'a str,
}

impl<'a> ParsedSpec<'a> {
    pub fn parse(source: &'a str) -> Result<Self> {
        let source = source.trim();
        let (family, rest) = source
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("`{source}`: expected `family:key=value,...`")))?;
        let mut params = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("`{source}`: `{item}` is not key=value")))?;
            let key = key.trim();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("`{source}`: `{value}` is not a number")))?;
            if params.iter().any(|&(k, _)| k == key) {
                return Err(Error::invalid(format!("`{source}`: duplicate key `{key}`")));
            }
            params.push((key, value));
        }
        Ok(Self { family: family.trim(), params, source })
    }

    /// Returns the values of `keys` in order; unknown or missing keys are errors.
    pub fn take<const N: usize>(&self, keys: [&str; N]) -> Result<[f64; N]> {
        if let Some((unknown, _)) = self.params.iter().find(|(k, _)| !keys.contains(k)) {
            return Err(Error::invalid(format!(
                "`{}`: unknown key `{unknown}` for `{}` (expected {})",
                self.source,
                self.family,
                keys.join(", ")
            )));
        }
        let mut out = [0.0; N];
        for (slot, key) in out.iter_mut().zip(keys) {
            *slot = self
                .params
                .iter()
                .find(|(k, _)| *k == key)
                .map(|&(_, v)| v)
                .ok_or_else(|| Error::invalid(format!("`{}`: missing key `{key}`", self.source)))?;
        }
        Ok(out)
    }
}
