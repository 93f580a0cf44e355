//! On-disk dataset layout: binary PPM (P6) images plus a plain-text
//! manifest.
//!
//! ```text
//! # osrlab dataset manifest v1
//! protocol=E1 fill=filled seed=42 classes=blue-circle,red-rectangle,blue-rectangle
//! images/00000.ppm blue-circle train
//! images/00001.ppm blue-circle train
//! ...
//! ```
//!
//! Images are written with 8 bits per channel. Rendered datasets only use the
//! values 0 and 1, which makes the round trip exact.

use std::fs;
use std::path::{Component, Path};

use super::{Fill, Image, LabeledDataset, Protocol, Role, Sample, ShapeClass};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "# osrlab dataset manifest v1";
const IMAGE_DIR: &str = "images";

/// Largest accepted image side; guards allocations on hostile headers.
const MAX_PPM_SIDE: usize = 1 << 14;

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.as_slice()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

struct PpmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PpmCursor<'_> {
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        let digits = &self.bytes[start..self.pos];
        if digits.is_empty() || digits.len() > 9 {
            return Err(Error::parse("ppm header", 1, format!("bad {field}")));
        }
        Ok(digits
            .iter()
            .fold(0usize, |acc, d| acc * 10 + usize::from(d - b'0')))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::parse("ppm header", 1, "missing P6 magic"));
    }
    let mut cur = PpmCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 || width > MAX_PPM_SIDE || height > MAX_PPM_SIDE {
        return Err(Error::parse(
            "ppm header",
            1,
            format!("unsupported dimensions {width}x{height}"),
        ));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(
            "ppm header",
            1,
            format!("unsupported maxval {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse("ppm header", 1, "missing raster separator"));
    }
    let raster = &bytes[cur.pos + 1..];
    let expected = width * height * 3;
    if raster.len() != expected {
        return Err(Error::parse(
            "ppm raster",
            1,
            format!("expected {expected} bytes, found {}", raster.len()),
        ));
    }
    let scale = maxval as f32;
    let data = raster
        .iter()
        .map(|&b| (f32::from(b) / scale).min(1.0))
        .collect();
    Image::from_raw(height, width, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub class: ShapeClass,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub protocol: Protocol,
    pub fill: Fill,
    pub seed: u64,
    pub classes: Vec<ShapeClass>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let classes: Vec<_> = self.classes.iter().map(|c| c.name()).collect();
        let mut out = format!(
            "{MANIFEST_MAGIC}\nprotocol={} fill={} seed={} classes={}\n",
            self.protocol,
            self.fill.name(),
            self.seed,
            classes.join(",")
        );
        for e in &self.entries {
            out.push_str(&format!("{} {} {}\n", e.path, e.class, e.role.name()));
        }
        out
    }
}

fn check_relative(path: &str, line: usize) -> Result<()> {
    let p = Path::new(path);
    let ok = !path.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_)));
    if ok {
        Ok(())
    } else {
        Err(Error::parse(
            "manifest",
            line,
            format!("image path `{path}` must be relative and stay inside the dataset directory"),
        ))
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, first)) if first.trim_end() == MANIFEST_MAGIC => {}
        _ => return Err(Error::parse("manifest", 1, "missing manifest magic line")),
    }
    let mut lines = lines.filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::parse("manifest", 2, "missing header line"))?;
    let mut protocol = None;
    let mut fill = None;
    let mut seed = None;
    let mut classes = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse("manifest", hline, format!("bad header field `{field}`")))?;
        let bad = |e: Error| Error::parse("manifest", hline, e.to_string());
        match key {
            "protocol" => protocol = Some(value.parse::<Protocol>().map_err(bad)?),
            "fill" => fill = Some(value.parse::<Fill>().map_err(bad)?),
            "seed" => {
                seed = Some(value.parse::<u64>().map_err(|e| {
                    Error::parse("manifest", hline, format!("bad seed: {e}"))
                })?)
            }
            "classes" => {
                classes = Some(
                    value
                        .split(',')
                        .map(str::parse::<ShapeClass>)
                        .collect::<Result<Vec<_>>>()
                        .map_err(bad)?,
                )
            }
            other => {
                return Err(Error::parse(
                    "manifest",
                    hline,
                    format!("unknown header key `{other}`"),
                ))
            }
        }
    }
    let missing = |k: &str| Error::parse("manifest", hline, format!("header lacks `{k}`"));
    let protocol = protocol.ok_or_else(|| missing("protocol"))?;
    let fill = fill.ok_or_else(|| missing("fill"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    let classes = classes.ok_or_else(|| missing("classes"))?;
    let mut expected = protocol.inlier_classes().to_vec();
    expected.push(protocol.outlier_class());
    if classes != expected {
        return Err(Error::parse(
            "manifest",
            hline,
            format!("class table does not match protocol {protocol}"),
        ));
    }

    let mut entries = Vec::new();
    for (line, row) in lines {
        let cols: Vec<&str> = row.split_whitespace().collect();
        let [path, class, role] = cols[..] else {
            return Err(Error::parse(
                "manifest",
                line,
                format!("expected 3 columns, found {}", cols.len()),
            ));
        };
        check_relative(path, line)?;
        let class: ShapeClass = class
            .parse()
            .map_err(|e: Error| Error::parse("manifest", line, e.to_string()))?;
        if !classes.contains(&class) {
            return Err(Error::parse(
                "manifest",
                line,
                format!("class `{class}` is not part of protocol {protocol}"),
            ));
        }
        let role: Role = role
            .parse()
            .map_err(|e: Error| Error::parse("manifest", line, e.to_string()))?;
        let is_outlier = class == protocol.outlier_class();
        if is_outlier != (role == Role::TestOutlier) {
            return Err(Error::parse(
                "manifest",
                line,
                format!("class `{class}` cannot have role `{}`", role.name()),
            ));
        }
        entries.push(ManifestEntry {
            path: path.to_owned(),
            class,
            role,
        });
    }

    Ok(Manifest {
        protocol,
        fill,
        seed,
        classes,
        entries,
    })
}

/// Writes images under `dir/images/` and the manifest at
/// `dir/manifest.txt`.
pub fn write_dataset(ds: &LabeledDataset, dir: &Path) -> Result<Manifest> {
    let image_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for (i, sample) in ds.samples.iter().enumerate() {
        let rel = format!("{IMAGE_DIR}/{i:05}.ppm");
        let path = dir.join(&rel);
        fs::write(&path, encode_ppm(&sample.image)).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            path: rel,
            class: sample.class,
            role: sample.role,
        });
    }
    let manifest = Manifest {
        protocol: ds.protocol,
        fill: ds.fill,
        seed: ds.seed,
        classes: ds.classes.clone(),
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<LabeledDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = parse_manifest(&text)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let path = dir.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let image = decode_ppm(&bytes)?;
        if image.height() != super::IMAGE_SIZE || image.width() != super::IMAGE_SIZE {
            return Err(Error::Shape(format!(
                "{} is {}x{}, manifest expects {}x{}",
                entry.path,
                image.width(),
                image.height(),
                super::IMAGE_SIZE,
                super::IMAGE_SIZE
            )));
        }
        let label = manifest
            .classes
            .iter()
            .position(|&c| c == entry.class)
            .expect("validated by parse_manifest");
        samples.push(Sample {
            image,
            class: entry.class,
            label,
            role: entry.role,
        });
    }
    Ok(LabeledDataset {
        protocol: manifest.protocol,
        fill: manifest.fill,
        seed: manifest.seed,
        classes: manifest.classes,
        samples,
    })
}
