//! Top layer of the SPE10 permeability dataset.

use std::path::Path;

use crate::error::CliError;

pub const NX: usize = 60;
pub const NY: usize = 220;

/// Log permeability of the first 60×220 values (x fastest), or `None` when
/// the file does not exist.
pub fn load_log_permeability(path: &Path) -> Result<Option<Vec<f64>>, CliError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(CliError::io(path, e)),
    };
    parse_log_permeability(&text)
        .map(Some)
        .map_err(|msg| CliError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, msg)))
}

pub fn parse_log_permeability(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(NX * NY);
    for tok in text.split_whitespace().take(NX * NY) {
        let k: f64 = tok.parse().map_err(|_| format!("not a number: {tok:?}"))?;
        if !(k > 0.0) || !k.is_finite() {
            return Err(format!("permeability value {k} at position {} is not positive", out.len()));
        }
        out.push(k.ln());
    }
    if out.len() < NX * NY {
        return Err(format!("expected at least {} values, found {}", NX * NY, out.len()));
    }
    Ok(out)
}
