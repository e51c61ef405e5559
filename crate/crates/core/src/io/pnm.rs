//! Binary PGM/PPM rasters with ASCII headers.

use std::path::Path;

use super::{write_atomic, FormatResult};

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[[u8; 3]]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().flatten());
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> FormatResult<()> {
    write_atomic(path, &encode_pgm(width, height, gray))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[[u8; 3]]) -> FormatResult<()> {
    write_atomic(path, &encode_ppm(width, height, rgb))
}

/// Maps a score in [−1, 1] to a gray level.
pub fn score_to_gray(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}
