//! Plain-text sidecar formats: SH coefficients, camera lists, config.
//!
//! Floats are written with Rust's shortest-round-trip formatting, so
//! write→read is bit-exact for f64 values. `#` starts a comment in all
//! three formats.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::sh::{SHLighting, SH_COUNT};
use crate::{Error, Result};

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn malformed(path: &Path, format: &'static str, detail: String) -> Error {
    Error::Malformed {
        path: path.into(),
        format,
        detail,
    }
}

/// 16 lines of 3 floats, (l, m) band order as in [`SHLighting`].
pub fn write_sh_text(path: &Path, light: &SHLighting) -> Result<()> {
    let mut out = String::new();
    for row in &light.coeffs {
        writeln!(out, "{} {} {}", row[0], row[1], row[2]).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_sh_text(path: &Path) -> Result<SHLighting> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut coeffs = [[0.0f64; 3]; SH_COUNT];
    let mut row = 0usize;
    for (line_no, line) in data_lines(&text) {
        if row >= SH_COUNT {
            return Err(malformed(path, "SH text", format!("more than {SH_COUNT} rows (line {line_no})")));
        }
        let vals: Vec<f64> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
        if vals.len() != 3 || line.split_whitespace().count() != 3 {
            return Err(malformed(path, "SH text", format!("line {line_no}: expected 3 floats, got {line:?}")));
        }
        coeffs[row] = [vals[0], vals[1], vals[2]];
        row += 1;
    }
    if row != SH_COUNT {
        return Err(malformed(path, "SH text", format!("expected {SH_COUNT} rows, found {row}")));
    }
    let light = SHLighting { coeffs };
    light.validate()?;
    Ok(light)
}

/// One camera per line, 18 numbers: fx fy cx cy width height, then the
/// world←camera rotation row-major (9), then the camera center (3).
pub fn write_cameras(path: &Path, cams: &[Camera]) -> Result<()> {
    let mut out = String::from("# fx fy cx cy w h r00..r22 (world<-camera, row-major) cx cy cz\n");
    for c in cams {
        let r = c.rotation_wc();
        let t = c.center();
        write!(out, "{} {} {} {} {} {}", c.focal.x, c.focal.y, c.principal_point.x, c.principal_point.y, c.width(), c.height()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                write!(out, " {}", r[(i, j)]).unwrap();
            }
        }
        writeln!(out, " {} {} {}", t.x, t.y, t.z).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cams = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 18 {
            return Err(malformed(path, "cameras", format!("line {line_no}: expected 18 fields, got {}", toks.len())));
        }
        let mut nums = [0.0f64; 18];
        for (i, t) in toks.iter().enumerate() {
            nums[i] = t
                .parse()
                .map_err(|_| malformed(path, "cameras", format!("line {line_no}: bad number {t:?}")))?;
        }
        let (w, h) = (nums[4], nums[5]);
        if w < 1.0 || h < 1.0 || w.fract() != 0.0 || h.fract() != 0.0 {
            return Err(malformed(path, "cameras", format!("line {line_no}: bad resolution {w}x{h}")));
        }
        #[rustfmt::skip]
        let rot = Matrix3::new(
            nums[6], nums[7], nums[8],
            nums[9], nums[10], nums[11],
            nums[12], nums[13], nums[14],
        );
        cams.push(Camera::from_matrix_parts(
            Vector2::new(nums[0], nums[1]),
            Vector2::new(nums[2], nums[3]),
            (w as usize, h as usize),
            rot,
            Vector3::new(nums[15], nums[16], nums[17]),
        )?);
    }
    if cams.is_empty() {
        return Err(malformed(path, "cameras", "no camera lines".into()));
    }
    Ok(cams)
}

/// `key = value` pairs in file order; later duplicates override earlier
/// ones at lookup time (callers resolve).
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let Some((k, v)) = line.split_once('=') else {
            return Err(malformed(path, "config", format!("line {line_no}: expected key=value, got {line:?}")));
        };
        let key = k.trim();
        let value = v.trim();
        if key.is_empty() {
            return Err(malformed(path, "config", format!("line {line_no}: empty key")));
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}

pub fn write_config(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        writeln!(out, "{k} = {v}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::look_at;
    use tempfile::tempdir;

    #[test]
    fn sh_text_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sh.txt");
        let mut l = SHLighting::uniform([0.3, 0.7, 1.1]);
        l.coeffs[5] = [-0.123456789012345, 1e-17, 3.9e8];
        l.coeffs[15] = [f64::MIN_POSITIVE, -0.0, 0.1 + 0.2];
        write_sh_text(&path, &l).unwrap();
        let back = read_sh_text(&path).unwrap();
        for k in 0..SH_COUNT {
            for ch in 0..3 {
                assert_eq!(l.coeffs[k][ch].to_bits(), back.coeffs[k][ch].to_bits());
            }
        }
    }

    #[test]
    fn sh_text_rejects_wrong_shape() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("sh.txt");
        std::fs::write(&path, "1 2 3\n4 5 6\n").unwrap();
        assert!(read_sh_text(&path).is_err());
        let mut many = String::new();
        for _ in 0..17 {
            many.push_str("0 0 0\n");
        }
        std::fs::write(&path, many).unwrap();
        assert!(read_sh_text(&path).is_err());
        std::fs::write(&path, "0 0 0\n".repeat(15) + "0 nan 0\n").unwrap();
        assert!(read_sh_text(&path).is_err());
    }

    #[test]
    fn cameras_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cameras.txt");
        let cams: Vec<Camera> = (0..4)
            .map(|i| {
                let angle = i as f64 * 1.3;
                let eye = Vector3::new(3.0 * angle.cos(), 3.0 * angle.sin(), 1.0 + 0.2 * i as f64);
                Camera::new(
                    Vector2::new(120.0, 115.0),
                    Vector2::new(31.5, 32.5),
                    (64, 64),
                    look_at(eye, Vector3::zeros(), Vector3::z()).unwrap(),
                )
                .unwrap()
            })
            .collect();
        write_cameras(&path, &cams).unwrap();
        let back = read_cameras(&path).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in cams.iter().zip(&back) {
            assert_eq!(a.focal, b.focal);
            assert_eq!(a.resolution, b.resolution);
            assert!((a.rotation_wc() - b.rotation_wc()).abs().max() < 1e-12);
            assert!((a.center() - b.center()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn cameras_reject_malformed_lines() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cameras.txt");
        std::fs::write(&path, "1 2 3\n").unwrap();
        assert!(read_cameras(&path).is_err());
        std::fs::write(&path, "# only comments\n").unwrap();
        assert!(read_cameras(&path).is_err());
    }

    #[test]
    fn config_parses_comments_and_spacing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fit.cfg");
        std::fs::write(&path, "# run\niterations = 200\nseed=7 # trailing\n\nk = 64\n").unwrap();
        let pairs = read_config(&path).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("iterations".to_string(), "200".to_string()),
                ("seed".to_string(), "7".to_string()),
                ("k".to_string(), "64".to_string()),
            ]
        );
        std::fs::write(&path, "novalue\n").unwrap();
        assert!(read_config(&path).is_err());
    }
}
