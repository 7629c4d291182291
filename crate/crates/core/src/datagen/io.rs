//! On-disk formats: JSON-lines manifests, 8-bit PNG images and masks,
//! little-endian PFM depth/normal maps, and plain-text keypoint files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::Sample;
use crate::error::{io_err, Error, Result};
use crate::heads::{Keypoints, Visibility};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    /// `(x, y, w, h)` in pixels.
    pub bbox: [f64; 4],
    pub score: f64,
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image_path: String,
    pub width: usize,
    pub height: usize,
    pub persons: Vec<Person>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_path: Option<String>,
    /// Camera focal length in pixels, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal: Option<f64>,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        for p in &self.persons {
            let [x, y, w, h] = p.bbox;
            let inside = x >= 0.0 && y >= 0.0 && w >= 0.0 && h >= 0.0 && x + w <= self.width as f64 && y + h <= self.height as f64;
            if !inside || !(0.0..=1.0).contains(&p.score) {
                return Err(Error::Config(format!("record `{}`: person {:?} out of bounds or score", self.id, p)));
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format { path: path.into(), detail: e.to_string() })?;
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.into(),
            detail: format!("line {}: {e}", i + 1),
        })?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB or single-channel image as 8-bit PNG.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    write_png_bytes(path, img.width, img.height, img.channels, &bytes)
}

/// Writes raw 8-bit samples (1 or 3 channels) as PNG.
pub fn write_png_bytes(path: &Path, width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<()> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::BadSize(format!("{c}-channel png"))),
    };
    let f = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let fmt = |e: png::EncodingError| Error::Format { path: path.into(), detail: e.to_string() };
    let mut w = enc.write_header().map_err(fmt)?;
    w.write_image_data(bytes).map_err(fmt)?;
    w.finish().map_err(fmt)
}

/// Reads an 8-bit PNG as raw samples: `(width, height, channels, bytes)`.
pub fn read_png_bytes(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let f = File::open(path).map_err(io_err(path))?;
    let fmt = |e: png::DecodingError| Error::Format { path: path.into(), detail: e.to_string() };
    let mut dec = png::Decoder::new(BufReader::new(f));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(fmt)?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(fmt)?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    // drop alpha
    let (channels, buf) = match channels {
        2 => (1, buf.chunks(2).map(|p| p[0]).collect()),
        4 => (3, buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect()),
        c => (c, buf),
    };
    Ok((w, h, channels, buf))
}

/// Reads a PNG into `[0, 1]` floats.
pub fn read_png(path: &Path) -> Result<Image> {
    let (w, h, c, bytes) = read_png_bytes(path)?;
    Image::from_vec(h, w, c, bytes.iter().map(|&b| b as f32 / 255.0).collect())
}

/// Portable float map, little-endian (scale -1.0), rows stored bottom-up.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    let tag = match channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::BadSize(format!("{c}-channel pfm"))),
    };
    if data.len() != width * height * channels {
        return Err(Error::BadSize(format!("{} values for {width}x{height}x{channels}", data.len())));
    }
    let mut out = Vec::with_capacity(data.len() * 4 + 32);
    write!(out, "{tag}\n{width} {height}\n-1.0\n").expect("write to vec");
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Returns `(width, height, channels, top-down row-major data)`.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let mut bytes = Vec::new();
    File::open(path).map_err(io_err(path))?.read_to_end(&mut bytes).map_err(io_err(path))?;
    let bad = |d: &str| Error::Format { path: path.into(), detail: d.to_string() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("not a PFM file")),
    };
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f32 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let n = w * h * channels;
    if bytes.len() < pos + n * 4 {
        return Err(bad("truncated data"));
    }
    let word = |i: usize| {
        let b: [u8; 4] = bytes[pos + 4 * i..pos + 4 * i + 4].try_into().expect("4 bytes");
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let row = w * channels;
    let mut data = vec![0f32; n];
    for y in 0..h {
        let src = (h - 1 - y) * row;
        for i in 0..row {
            data[y * row + i] = word(src + i);
        }
    }
    Ok((w, h, channels, data))
}

/// One `x y visibility` row per joint, persons back to back.
pub fn write_keypoints(path: &Path, persons: &[Keypoints]) -> Result<()> {
    let mut s = String::new();
    for k in persons {
        for ([x, y], v) in k.coords.iter().zip(&k.visibility) {
            s.push_str(&format!("{x} {y} {}\n", *v as u8));
        }
    }
    fs::write(path, s).map_err(io_err(path))
}

/// Reads a keypoint file holding `k` joints per person.
pub fn read_keypoints(path: &Path, k: usize) -> Result<Vec<Keypoints>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |d: String| Error::Format { path: path.into(), detail: d };
    let mut coords = Vec::new();
    let mut vis = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(bad(format!("line {}: expected `x y visibility`", i + 1)));
        }
        let x: f64 = f[0].parse().map_err(|_| bad(format!("line {}: bad x", i + 1)))?;
        let y: f64 = f[1].parse().map_err(|_| bad(format!("line {}: bad y", i + 1)))?;
        let v = f[2]
            .parse::<u8>()
            .ok()
            .and_then(Visibility::from_code)
            .ok_or_else(|| bad(format!("line {}: bad visibility", i + 1)))?;
        coords.push([x, y]);
        vis.push(v);
    }
    if k == 0 || coords.len() % k != 0 {
        return Err(bad(format!("{} rows is not a multiple of {k} joints", coords.len())));
    }
    Ok(coords
        .chunks(k)
        .zip(vis.chunks(k))
        .map(|(c, v)| Keypoints::new(c.to_vec(), v.to_vec()))
        .collect())
}

/// Writes all modalities of `sample` under `dir` as `<id>.png`,
/// `<id>_mask.png`, `<id>_depth.pfm`, `<id>_normal.pfm`, `<id>_kps.txt`.
pub fn save_sample(dir: &Path, id: &str, sample: &Sample) -> Result<ManifestRecord> {
    let name = |suffix: &str| format!("{id}{suffix}");
    write_png(&dir.join(name(".png")), &sample.image)?;
    write_png_bytes(&dir.join(name("_mask.png")), sample.width, sample.height, 1, &sample.part_mask)?;
    write_pfm(&dir.join(name("_depth.pfm")), sample.width, sample.height, 1, &sample.depth)?;
    write_pfm(&dir.join(name("_normal.pfm")), sample.width, sample.height, 3, &sample.normal)?;
    write_keypoints(&dir.join(name("_kps.txt")), &sample.keypoints)?;
    Ok(ManifestRecord {
        id: id.to_string(),
        image_path: name(".png"),
        width: sample.width,
        height: sample.height,
        persons: sample
            .boxes
            .iter()
            .zip(&sample.scores)
            .map(|(b, &s)| Person { bbox: *b, score: s })
            .collect(),
        keypoints_path: Some(name("_kps.txt")),
        mask_path: Some(name("_mask.png")),
        depth_path: Some(name("_depth.pfm")),
        normal_path: Some(name("_normal.pfm")),
        focal: Some(sample.focal),
    })
}

/// Reads a record's files back into a [`Sample`]. Missing label files leave
/// the corresponding buffers empty (no keypoints, zero mask/depth/normals).
///
/// Per-person pixel ownership is not stored; every human pixel is assigned
/// to person 1.
pub fn load_sample(root: &Path, rec: &ManifestRecord, k: usize) -> Result<Sample> {
    let p = |rel: &str| -> PathBuf { root.join(rel) };
    let image = read_png(&p(&rec.image_path))?;
    if image.height != rec.height || image.width != rec.width {
        return Err(Error::Format {
            path: p(&rec.image_path),
            detail: format!("image is {}x{}, manifest says {}x{}", image.height, image.width, rec.height, rec.width),
        });
    }
    let n = rec.height * rec.width;
    let part_mask = match &rec.mask_path {
        Some(m) => {
            let (w, h, c, bytes) = read_png_bytes(&p(m))?;
            if (w, h, c) != (rec.width, rec.height, 1) {
                return Err(Error::Format { path: p(m), detail: "mask size mismatch".into() });
            }
            bytes
        }
        None => vec![0; n],
    };
    let pfm = |path: &Option<String>, channels: usize| -> Result<Vec<f32>> {
        match path {
            Some(d) => {
                let (w, h, c, data) = read_pfm(&p(d))?;
                if (w, h, c) != (rec.width, rec.height, channels) {
                    return Err(Error::Format { path: p(d), detail: "map size mismatch".into() });
                }
                Ok(data)
            }
            None => Ok(vec![0.0; n * channels]),
        }
    };
    let depth = pfm(&rec.depth_path, 1)?;
    let normal = pfm(&rec.normal_path, 3)?;
    let keypoints = match &rec.keypoints_path {
        Some(kp) => read_keypoints(&p(kp), k)?,
        None => Vec::new(),
    };
    Ok(Sample {
        height: rec.height,
        width: rec.width,
        image,
        person_id: part_mask.iter().map(|&c| (c > 0) as u8).collect(),
        part_mask,
        depth,
        normal,
        keypoints,
        boxes: rec.persons.iter().map(|q| q.bbox).collect(),
        scores: rec.persons.iter().map(|q| q.score).collect(),
        focal: rec.focal.unwrap_or(0.0),
    })
}
