//! Label map files: single-channel 8-bit PNG, value = class id, 255 = void.
//! Colour-coded label files are 8-bit RGB PNG decoded through a palette.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType, Compression, Decoder, Encoder, Filter, Transformations};

use segcurate_core::taxonomy::{ClassTaxonomy, Palette};
use segcurate_core::SemanticMap;

use crate::error::{Error, Result};

fn image_error(context: &str, message: impl ToString) -> Error {
    Error::Image {
        context: context.to_string(),
        message: message.to_string(),
    }
}

/// Decoded pixels with `transformations` applied.
fn decode_png(bytes: &[u8], context: &str, transformations: Transformations) -> Result<(png::OutputInfo, Vec<u8>)> {
    let mut decoder = Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(transformations);
    let mut reader = decoder.read_info().map_err(|e| image_error(context, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_error(context, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_error(context, e))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Decodes without checking values against a taxonomy; for raw source-dataset
/// label files that still need harmonizing.
pub fn decode_raw_label_map(bytes: &[u8]) -> Result<SemanticMap> {
    decode_raw_named(bytes, "label map")
}

fn decode_raw_named(bytes: &[u8], context: &str) -> Result<SemanticMap> {
    let (info, data) = decode_png(bytes, context, Transformations::IDENTITY)?;
    if (info.color_type, info.bit_depth) != (ColorType::Grayscale, BitDepth::Eight) {
        return Err(image_error(
            context,
            format!(
                "expected single-channel 8-bit, got {:?} at {} bits",
                info.color_type, info.bit_depth as u8
            ),
        ));
    }
    SemanticMap::new(info.width, info.height, data).map_err(|e| Error::map(context, e))
}

/// Decodes a label map and checks every value against `taxonomy` ∪ {void}.
pub fn decode_label_map(bytes: &[u8], taxonomy: &ClassTaxonomy) -> Result<SemanticMap> {
    let map = decode_raw_label_map(bytes)?;
    taxonomy
        .validate(&map)
        .map_err(|e| Error::map("label map", e))?;
    Ok(map)
}

/// Deterministic PNG encoding; equal maps give identical bytes.
pub fn encode_label_map(map: &SemanticMap) -> Vec<u8> {
    encode_png(map.width(), map.height(), map.as_slice(), ColorType::Grayscale)
}

pub fn encode_rgb(width: u32, height: u32, rgb: &[u8]) -> Vec<u8> {
    encode_png(width, height, rgb, ColorType::Rgb)
}

pub fn encode_gray(width: u32, height: u32, data: &[u8]) -> Vec<u8> {
    encode_png(width, height, data, ColorType::Grayscale)
}

fn encode_png(width: u32, height: u32, data: &[u8], color: ColorType) -> Vec<u8> {
    let mut out = Vec::new();
    let mut encoder = Encoder::new(&mut out, width, height);
    encoder.set_color(color);
    encoder.set_depth(BitDepth::Eight);
    encoder.set_compression(Compression::Balanced);
    encoder.set_filter(Filter::Adaptive);
    let mut writer = encoder.write_header().expect("writing to memory");
    writer
        .write_image_data(data)
        .expect("in-memory PNG encoding of a well-sized buffer");
    writer.finish().expect("writing to memory");
    out
}

/// Decodes any 8- or 16-bit PNG into `(width, height, packed rgb)`; alpha is
/// dropped and grey is replicated.
pub fn decode_rgb(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let (info, data) = decode_png(bytes, "rgb image", Transformations::EXPAND | Transformations::STRIP_16)?;
    let channels = info.color_type.samples();
    let rgb = match info.color_type {
        ColorType::Rgb => data,
        ColorType::Rgba => data.chunks_exact(channels).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        ColorType::Grayscale | ColorType::GrayscaleAlpha => {
            data.chunks_exact(channels).flat_map(|p| [p[0]; 3]).collect()
        }
        ColorType::Indexed => return Err(image_error("rgb image", "palette was not expanded")),
    };
    Ok((info.width, info.height, rgb))
}

pub fn decode_color_map(bytes: &[u8], palette: &Palette, strict: bool) -> Result<SemanticMap> {
    let (w, h, rgb) = decode_rgb(bytes)?;
    palette
        .decode(w, h, &rgb, strict)
        .map_err(|e| Error::taxonomy("color label map", e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_raw_label_map(path: &Path) -> Result<SemanticMap> {
    decode_raw_named(&read(path)?, &path.display().to_string())
}

pub fn read_label_map(path: &Path, taxonomy: &ClassTaxonomy) -> Result<SemanticMap> {
    let map = read_raw_label_map(path)?;
    taxonomy
        .validate(&map)
        .map_err(|e| Error::map(path.display().to_string(), e))?;
    Ok(map)
}

pub fn write_label_map(path: &Path, map: &SemanticMap) -> Result<()> {
    write_atomic(path, &encode_label_map(map))
}

pub fn image_dimensions(path: &Path) -> Result<(u32, u32)> {
    let context = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| image_error(&context, e))?;
    let info = reader.info();
    Ok((info.width, info.height))
}

/// Writes through a sibling temporary file and a rename, creating parent
/// directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn is_temporary(name: &str) -> bool {
    name.rsplit_once(".tmp")
        .is_some_and(|(_, pid)| !pid.is_empty() && pid.bytes().all(|b| b.is_ascii_digit()))
}

/// Deletes temporaries that interrupted [`write_atomic`] calls left under
/// `dir`; returns how many were removed.
pub fn remove_temporaries(dir: &Path) -> Result<usize> {
    let mut removed = 0;
    let entries = match fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let kind = entry.file_type().map_err(|e| Error::io(&path, e))?;
        if kind.is_dir() {
            removed += remove_temporaries(&path)?;
        } else if entry.file_name().to_str().is_some_and(is_temporary) {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            removed += 1;
        }
    }
    Ok(removed)
}
