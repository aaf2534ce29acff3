use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default quantization step of 16-bit PNG depth, meters per level.
pub const PNG16_DEFAULT_SCALE: f64 = 1.0 / 256.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Pfm,
    Png16,
    Rawf32,
}

impl DepthFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DepthFormat::Pfm => "pfm",
            DepthFormat::Png16 => "png",
            DepthFormat::Rawf32 => "raw",
        }
    }
}

impl FromStr for DepthFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pfm" => Ok(DepthFormat::Pfm),
            "png16" => Ok(DepthFormat::Png16),
            "rawf32" => Ok(DepthFormat::Rawf32),
            other => Err(Error::Format(format!("unknown depth format {other:?}"))),
        }
    }
}

impl std::fmt::Display for DepthFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DepthFormat::Pfm => "pfm",
            DepthFormat::Png16 => "png16",
            DepthFormat::Rawf32 => "rawf32",
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Png16Meta {
    scale_m_per_step: f64,
}

/// Path of the JSON side-car that carries the quantization step of a
/// 16-bit PNG depth file.
pub fn png16_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_depth(depth: &Tensor<f32>) -> Result<(usize, usize)> {
    let hw = depth.hw()?;
    if let Some(v) = depth.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("depth value {v}")));
    }
    if let Some(v) = depth.data().iter().find(|&&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!("non-positive depth {v}")));
    }
    Ok(hw)
}

/// Writes a depth map. `png16_scale` is the quantization step in meters,
/// used only by [`DepthFormat::Png16`].
pub fn save_depth(depth: &Tensor<f32>, path: &Path, format: DepthFormat, png16_scale: Option<f64>) -> Result<()> {
    let (h, w) = check_depth(depth)?;
    match format {
        DepthFormat::Pfm => write(path, &encode_pfm(depth.data(), h, w)),
        DepthFormat::Rawf32 => {
            let mut bytes = format!("RAWF32 {h} {w}\n").into_bytes();
            for v in depth.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            write(path, &bytes)
        }
        DepthFormat::Png16 => {
            let scale = png16_scale.unwrap_or(PNG16_DEFAULT_SCALE);
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidArgument(format!("png16 scale {scale}")));
            }
            let mut levels = Vec::with_capacity(h * w);
            for &v in depth.data() {
                let q = (v as f64 / scale).round();
                if q > u16::MAX as f64 {
                    return Err(Error::Overflow { value: v as f64, scale });
                }
                levels.push(q as u16);
            }
            write(path, &encode_png16(&levels, h, w)?)?;
            let meta = serde_json::to_vec(&Png16Meta { scale_m_per_step: scale })?;
            write(&png16_sidecar(path), &meta)
        }
    }
}

/// Reads a depth map, detecting the format from the file's magic bytes.
pub fn load_depth(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read(path)?;
    if bytes.starts_with(b"Pf") {
        decode_pfm(&bytes)
    } else if bytes.starts_with(b"RAWF32") {
        decode_raw(&bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        let side = png16_sidecar(path);
        if !side.exists() {
            return Err(Error::Missing(format!("png16 side-car {}", side.display())));
        }
        let meta: Png16Meta = serde_json::from_slice(&read(&side)?)?;
        let (levels, h, w) = decode_png16(&bytes)?;
        let data = levels
            .iter()
            .map(|&q| (q as f64 * meta.scale_m_per_step) as f32)
            .collect();
        Tensor::from_vec(&[h, w], data)
    } else {
        Err(Error::Format(format!("{}: unrecognized depth file", path.display())))
    }
}

fn encode_pfm(data: &[f32], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in data.chunks(w).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Splits `n` whitespace-separated ASCII header tokens off the front of
/// `bytes`, returning them and the offset of the payload (one whitespace
/// byte after the last token).
fn header_tokens(bytes: &[u8], n: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, i + 1))
}

fn parse<T: FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad header field {s:?}")))
}

fn payload_f32(bytes: &[u8], offset: usize, n: usize, little: bool) -> Result<Vec<f32>> {
    let body = bytes
        .get(offset..offset + 4 * n)
        .ok_or_else(|| Error::Format(format!("expected {n} float32 values")))?;
    Ok(body
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect())
}

fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (t, offset) = header_tokens(bytes, 4)?;
    if t[0] != "Pf" {
        return Err(Error::Format(format!("PFM type {:?} is not single-channel", t[0])));
    }
    let (w, h): (usize, usize) = (parse(&t[1])?, parse(&t[2])?);
    let scale: f64 = parse(&t[3])?;
    let rows = payload_f32(bytes, offset, w * h, scale < 0.0)?;
    let mut data = Vec::with_capacity(w * h);
    for row in rows.chunks(w.max(1)).rev() {
        data.extend_from_slice(row);
    }
    Tensor::from_vec(&[h, w], data)
}

fn decode_raw(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (t, offset) = header_tokens(bytes, 3)?;
    let (h, w): (usize, usize) = (parse(&t[1])?, parse(&t[2])?);
    Tensor::from_vec(&[h, w], payload_f32(bytes, offset, h * w, true)?)
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

fn encode_png(bytes: &[u8], h: usize, w: usize, color: png::ColorType, depth: png::BitDepth) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(bytes).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<(Vec<u8>, png::OutputInfo)> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    Ok((buf, info))
}

fn encode_png16(levels: &[u16], h: usize, w: usize) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = levels.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode_png(&bytes, h, w, png::ColorType::Grayscale, png::BitDepth::Sixteen)
}

fn decode_png16(bytes: &[u8]) -> Result<(Vec<u16>, usize, usize)> {
    let (buf, info) = decode_png(bytes)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Format("depth PNG must be 16-bit grayscale".into()));
    }
    let levels = buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((levels, info.height as usize, info.width as usize))
}

/// Writes a `[3, H, W]` image with values in `[0, 1]` as 8-bit RGB PNG.
pub fn save_image(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!("RGB image needs 3 channels, got {c}")));
    }
    let d = image.data();
    let mut bytes = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            bytes.push((d[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write(path, &encode_png(&bytes, h, w, png::ColorType::Rgb, png::BitDepth::Eight)?)
}

/// Reads an 8-bit RGB or RGBA PNG into a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let (buf, info) = decode_png(&read(path)?)?;
    let stride = match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (png::ColorType::Rgba, png::BitDepth::Eight) => 4,
        (ct, bd) => return Err(Error::Format(format!("{}: {ct:?} {bd:?} image", path.display()))),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in buf.chunks_exact(stride).enumerate() {
        for ch in 0..3 {
            data[ch * h * w + i] = px[ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Polynomial fit of the viridis colormap on `t ∈ [0, 1]`.
fn viridis(t: f64) -> [f64; 3] {
    const C: [[f64; 3]; 7] = [
        [0.2777273272234177, 0.005407344544966578, 0.3340998053353061],
        [0.1050930431085774, 1.404613529898575, 1.384590162594685],
        [-0.3308618287255563, 0.214847559468213, 0.09509516302823659],
        [-4.634230498983486, -5.799100973351585, -19.33244095627987],
        [6.228269936347081, 14.17993336680509, 56.69055260068105],
        [4.776384997670288, -13.74514537774601, -65.35303263337234],
        [-5.435455855934631, 4.645852612178535, 26.3124352495832],
    ];
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = C.iter().rev().fold(0.0, |acc, c| acc * t + c[k]).clamp(0.0, 1.0);
    }
    out
}

/// Writes a color visualization of a depth map, scaled in inverse depth
/// over the fixed range `[d_min, d_max]`.
pub fn save_depth_visualization(depth: &Tensor<f32>, path: &Path, d_min: f64, d_max: f64) -> Result<()> {
    let (h, w) = depth.hw()?;
    let (lo, hi) = (1.0 / d_max, 1.0 / d_min);
    let mut img = vec![0.0f32; 3 * h * w];
    for (i, &d) in depth.data().iter().enumerate() {
        let t = ((1.0 / (d as f64).max(1e-6) - lo) / (hi - lo)).clamp(0.0, 1.0);
        let rgb = viridis(t);
        for ch in 0..3 {
            img[ch * h * w + i] = rgb[ch] as f32;
        }
    }
    save_image(&Tensor::from_vec(&[3, h, w], img)?, path)
}
