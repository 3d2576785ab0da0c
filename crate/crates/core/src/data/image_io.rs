//! 8-bit PNG and binary PPM/PGM reading and writing.

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loads a PNG (8-bit gray or RGB), PPM (P6) or PGM (P5) image as a 1×C×H×W tensor in [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else {
        Err(Error::Format("unrecognized image signature (expected PNG, P5 or P6)".into()))
    }
}

fn png_err(e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::Truncated("PNG stream ended early".into())
        }
        other => Error::Format(format!("PNG: {other}")),
    }
}

fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("PNG dimensions overflow".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!("unsupported PNG bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Format(format!("unsupported PNG color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(h * w * channels);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        data.extend_from_slice(row);
    }
    Ok(interleaved_to_planar(&data, channels, h, w))
}

fn interleaved_to_planar(bytes: &[u8], c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut t = Tensor::zeros(&[1, c, h, w]);
    let d = t.data_mut();
    for p in 0..hw {
        for ch in 0..c {
            d[ch * hw + p] = bytes[p * c + ch] as f64 / 255.0;
        }
    }
    t
}

/// Splits the ASCII header of a binary PNM into its four tokens and the payload offset.
fn pnm_header(bytes: &[u8]) -> Result<([String; 4], usize)> {
    let mut tokens: Vec<String> = Vec::with_capacity(4);
    let mut i = 0;
    while tokens.len() < 4 {
        if i >= bytes.len() {
            return Err(Error::Truncated("PNM header ended early".into()));
        }
        let b = bytes[i];
        if b == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else if b.is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
        }
    }
    // exactly one whitespace byte separates the header from the payload
    if i >= bytes.len() {
        return Err(Error::Truncated("PNM payload missing".into()));
    }
    Ok((tokens.try_into().expect("four tokens"), i + 1))
}

fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let ([magic, w, h, maxval], offset) = pnm_header(bytes)?;
    let c = if magic == "P6" { 3 } else { 1 };
    let parse = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| Error::Format(format!("PNM {what} `{s}` is not a number")))
    };
    let (w, h, maxval) = (parse(&w, "width")?, parse(&h, "height")?, parse(&maxval, "maxval")?);
    if maxval != 255 {
        return Err(Error::Format(format!("PNM maxval {maxval} unsupported (only 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Format("PNM has zero size".into()));
    }
    let need = w * h * c;
    let payload = &bytes[offset..];
    if payload.len() < need {
        return Err(Error::Truncated(format!("PNM payload has {} of {need} bytes", payload.len())));
    }
    Ok(interleaved_to_planar(&payload[..need], c, h, w))
}

fn to_bytes(img: &Tensor) -> Result<(Vec<u8>, usize, usize, usize)> {
    let [n, c, h, w] = img.nchw()?;
    if n != 1 || !(c == 1 || c == 3) {
        return Err(Error::shape("save_image", format!("need one gray or RGB image, got {:?}", img.dims())));
    }
    let hw = h * w;
    let mut out = vec![0u8; hw * c];
    for p in 0..hw {
        for ch in 0..c {
            out[p * c + ch] = (img.data()[ch * hw + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok((out, c, h, w))
}

/// Encodes `img` by the path's extension: `.png`, `.ppm` or `.pgm`.
pub fn encode_image(img: &Tensor, ext: &str) -> Result<Vec<u8>> {
    let (bytes, c, h, w) = to_bytes(img)?;
    match ext.to_ascii_lowercase().as_str() {
        "png" => {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(BufWriter::new(&mut out), w as u32, h as u32);
                enc.set_color(if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
                enc.set_depth(png::BitDepth::Eight);
                let mut writer = enc.write_header().map_err(|e| Error::Format(format!("PNG: {e}")))?;
                writer.write_image_data(&bytes).map_err(|e| Error::Format(format!("PNG: {e}")))?;
            }
            Ok(out)
        }
        "ppm" | "pgm" => {
            let want = if ext.eq_ignore_ascii_case("ppm") { 3 } else { 1 };
            if c != want {
                return Err(Error::Format(format!(".{ext} needs {want} channel(s), image has {c}")));
            }
            let mut out = format!("{}\n{w} {h}\n255\n", if c == 3 { "P6" } else { "P5" }).into_bytes();
            out.extend_from_slice(&bytes);
            Ok(out)
        }
        other => Err(Error::Format(format!("unsupported output format `.{other}`"))),
    }
}

/// Writes `img` (values clamped to [0, 1], rounded to 8 bits) in the format named by the extension.
pub fn save_image(path: impl AsRef<Path>, img: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let bytes = encode_image(img, ext)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_scaling() {
        let bytes = b"P5\n2 2\n255\n\x00\xff\x80\x40";
        let t = decode_image(bytes).unwrap();
        assert_eq!(t.dims(), &[1, 1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn pnm_header_comments() {
        let bytes = b"P5 # comment\n1 # w\n1\n255\n\x07";
        assert_eq!(decode_image(bytes).unwrap().data(), &[7.0 / 255.0]);
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_image(b"P5\nx 2\n255\n"), Err(Error::Format(_))));
        assert!(matches!(decode_image(b"P6\n2 2\n65535\n"), Err(Error::Format(_))));
        assert!(matches!(decode_image(b"P6\n2 2\n255\n\x00\x01"), Err(Error::Truncated(_))));
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::Format(_))));
    }

    #[test]
    fn png_roundtrip_on_8bit_grid() {
        let img = Tensor::from_fn(&[1, 3, 5, 7], |i| ((i * 37) % 256) as f64 / 255.0);
        let bytes = encode_image(&img, "png").unwrap();
        assert_eq!(decode_image(&bytes).unwrap(), img);
        let gray = img.slice_channels(1, 1).unwrap();
        assert_eq!(decode_image(&encode_image(&gray, "png").unwrap()).unwrap(), gray);
    }

    #[test]
    fn truncated_png() {
        let img = Tensor::from_fn(&[1, 3, 16, 16], |i| ((i * 37) % 256) as f64 / 255.0);
        let bytes = encode_image(&img, "png").unwrap();
        let r = decode_image(&bytes[..bytes.len() / 2]);
        assert!(matches!(r, Err(Error::Truncated(_)) | Err(Error::Format(_))), "{r:?}");
    }
}
