//! Image, vector and CSV file formats.

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

fn data_err(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {msg}", path.display()))
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".part");
    fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Little-endian `f64` vector.
pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    write_atomic(path, &f64_bytes(values))
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    if bytes.len() % 8 != 0 {
        return Err(data_err(path, format!("length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Grayscale image with intensities scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

/// Binary PGM with maxval 255. Values are clamped to `[0, 1]` first.
pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|&v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * 255.0).round() as u8
    }));
    out
}

pub fn write_pgm(path: &Path, side: usize, pixels: &[f64]) -> Result<()> {
    write_atomic(path, &encode_pgm(side, side, pixels))
}

/// Reads `P2` or `P5` PGM, dividing by the declared maxval.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let num = |s: String| s.parse::<usize>().map_err(|_| format!("bad header field `{s}`"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} out of range"));
    }
    let count = width * height;
    let scale = maxval as f64;
    let pixels = match magic.as_str() {
        "P5" => {
            let start = pos + 1;
            let wide = maxval > 255;
            let need = count * if wide { 2 } else { 1 };
            let body = bytes.get(start..start + need).ok_or("truncated pixel data")?;
            if wide {
                body.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
                    .collect()
            } else {
                body.iter().map(|&b| b as f64 / scale).collect()
            }
        }
        "P2" => {
            let mut px = Vec::with_capacity(count);
            for _ in 0..count {
                px.push(num(token()?)? as f64 / scale);
            }
            px
        }
        other => return Err(format!("unsupported magic `{other}`")),
    };
    if pixels.iter().any(|&p| p > 1.0) {
        return Err("pixel exceeds maxval".into());
    }
    Ok(Image { width, height, pixels })
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode_pgm(&bytes).map_err(|e| data_err(path, e))
}

/// Reads a comma separated numeric grid and divides by its largest entry.
pub fn decode_csv_image(text: &str) -> std::result::Result<Image, String> {
    let mut rows = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| format!("line {}: not numeric", no + 1))?;
        rows.push(row);
    }
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if height == 0 || rows.iter().any(|r| r.len() != width) {
        return Err("rows are empty or ragged".into());
    }
    let mut pixels: Vec<f64> = rows.into_iter().flatten().collect();
    if pixels.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("entries must be finite and nonnegative".into());
    }
    let max = pixels.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        pixels.iter_mut().for_each(|p| *p /= max);
    }
    Ok(Image { width, height, pixels })
}

pub fn read_csv_image(path: &Path) -> Result<Image> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    decode_csv_image(&text).map_err(|e| data_err(path, e))
}

/// Square images from every `.pgm`/`.csv` file in `dir`, in file-name order.
pub fn read_image_dir(dir: &Path, side: usize) -> Result<Vec<Vec<f64>>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(CliError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm") | Some("csv")))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let img = if p.extension().is_some_and(|e| e == "pgm") {
            read_pgm(&p)?
        } else {
            read_csv_image(&p)?
        };
        if img.width != side || img.height != side {
            return Err(data_err(
                &p,
                format!("image is {}x{}, expected {side}x{side}", img.width, img.height),
            ));
        }
        out.push(img.pixels);
    }
    Ok(out)
}

/// `row,col,value` listing of a sparse matrix.
pub fn triplets_csv(triplets: &[(usize, usize, f64)]) -> String {
    let mut s = String::from("row,col,value\n");
    for (r, c, v) in triplets {
        s.push_str(&format!("{r},{c},{v}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_quantises_to_bytes() {
        let px = [0.0, 0.5, 1.0, 2.0, -1.0, 0.25];
        let img = decode_pgm(&encode_pgm(3, 2, &px)).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
        let want = [0.0, 128.0 / 255.0, 1.0, 1.0, 0.0, 64.0 / 255.0];
        for (a, b) in img.pixels.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ascii_pgm_with_comments_and_wide_binary() {
        let img = decode_pgm(b"P2\n# c\n2 1\n# more\n10\n5 10\n").unwrap();
        assert_eq!(img.pixels, vec![0.5, 1.0]);
        let mut wide = b"P5 1 1 1000\n".to_vec();
        wide.extend(500u16.to_be_bytes());
        assert_eq!(decode_pgm(&wide).unwrap().pixels, vec![0.5]);
        assert!(decode_pgm(b"P5 2 2 255\n\x01").is_err());
        assert!(decode_pgm(b"P6 1 1 255\n\x01").is_err());
    }

    #[test]
    fn csv_images_scale_by_their_maximum() {
        let img = decode_csv_image("1,2\n4, 0\n").unwrap();
        assert_eq!(img.pixels, vec![0.25, 0.5, 1.0, 0.0]);
        assert!(decode_csv_image("1,2\n3\n").is_err());
        assert!(decode_csv_image("1,-2\n").is_err());
    }

    #[test]
    fn f64_blobs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.f64");
        let v = [1.5, -0.0, f64::MIN_POSITIVE, 1e300];
        write_f64s(&p, &v).unwrap();
        assert_eq!(read_f64s(&p).unwrap(), v);
        fs::write(&p, [0u8; 5]).unwrap();
        assert!(read_f64s(&p).is_err());
    }
}
