use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Binary (P5) 8-bit grayscale image; each value is scaled, rounded and
/// clamped to `0..=255`.
pub fn pgm_bytes(values: &[f64], [height, width]: [usize; 2], scale: f64) -> CliResult<Vec<u8>> {
    if values.len() != height * width {
        return Err(CliError::Usage(format!(
            "image shape {height}x{width} does not match {} values",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| {
        let s = (v * scale).round();
        if s.is_nan() {
            0
        } else {
            s.clamp(0.0, 255.0) as u8
        }
    }));
    Ok(out)
}

pub fn write_pgm(path: &Path, values: &[f64], shape: [usize; 2], scale: f64) -> CliResult<()> {
    let bytes = pgm_bytes(values, shape, scale)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
