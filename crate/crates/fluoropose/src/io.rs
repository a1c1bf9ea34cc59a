//! File formats: volumes (JSON header + raw float payload), meshes (ASCII
//! OFF), radiographs and patches (16-bit PGM + JSON sidecar), dataset
//! manifests (JSON lines) and network weights (JSON manifest + float32
//! blob file).  Every format carries a version number and loads verify it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2;
use crate::mesh::TriMesh;
use crate::net::{ConvNet, ConvNetConfig};
use crate::phantom::Volume;
use crate::render::Radiograph;
use crate::projection::ProjectionSetup;
use crate::sampler::DatasetRecord;

/// Version written into every header this module produces.
pub const FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn sibling(path: &Path, file: &str) -> PathBuf {
    path.parent().unwrap_or_else(|| Path::new("")).join(file)
}

fn replace_extension(path: &Path, ext: &str) -> String {
    path.with_extension(ext)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("data.{ext}"))
}

// ---------------------------------------------------------------------------
// Volumes: `<name>.json` header next to `<name>.raw` little-endian f32.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VolumeFileHeader {
    format_version: u32,
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    /// Unit of the voxel values.
    mu_units: String,
    /// How voxel values relate to space.
    pixel_convention: String,
    /// Raw payload file name, relative to the header.
    data_file: String,
}

/// Write a volume as a JSON header plus a sibling raw file of
/// little-endian 32-bit floats in x-fastest order.
pub fn save_volume(header_path: &Path, volume: &Volume) -> Result<()> {
    let data_file = replace_extension(header_path, "raw");
    let header = VolumeFileHeader {
        format_version: FORMAT_VERSION,
        dims: volume.dims,
        spacing_mm: volume.spacing_mm,
        origin_mm: volume.origin_mm,
        mu_units: "1/mm".into(),
        pixel_convention: "value at voxel center; index x-fastest".into(),
        data_file: data_file.clone(),
    };
    fs::write(header_path, serde_json::to_string_pretty(&header)?)?;

    let mut bytes = Vec::with_capacity(volume.data.len() * 4);
    for v in &volume.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(sibling(header_path, &data_file), bytes)?;
    Ok(())
}

/// Load a volume written by [`save_volume`].
pub fn load_volume(header_path: &Path) -> Result<Volume> {
    let header: VolumeFileHeader = serde_json::from_str(&fs::read_to_string(header_path)?)?;
    if header.format_version != FORMAT_VERSION {
        return Err(format_err(
            header_path,
            format!("unsupported volume format version {}", header.format_version),
        ));
    }
    let bytes = fs::read(sibling(header_path, &header.data_file))?;
    let expected = header.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(format_err(
            header_path,
            format!("payload has {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut volume = Volume::zeros(header.dims, header.spacing_mm, header.origin_mm)?;
    volume.data = data;
    Ok(volume)
}

// ---------------------------------------------------------------------------
// Meshes: ASCII OFF.
// ---------------------------------------------------------------------------

/// Write a triangle mesh as ASCII OFF.  Coordinates use Rust's
/// shortest-roundtrip float formatting, so the file parses back exactly.
pub fn save_mesh_off(path: &Path, mesh: &TriMesh) -> Result<()> {
    let mut out = String::new();
    out.push_str("OFF\n");
    out.push_str(&format!("{} {} 0\n", mesh.vertices.len(), mesh.faces.len()));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    for f in &mesh.faces {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load an ASCII OFF triangle mesh.
pub fn load_mesh_off(path: &Path) -> Result<TriMesh> {
    let text = fs::read_to_string(path)?;
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace());
    if tokens.next() != Some("OFF") {
        return Err(format_err(path, "missing OFF magic"));
    }
    let mut next_usize = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format_err(path, format!("bad or missing {what}")))
    };
    let nv = next_usize("vertex count")?;
    let nf = next_usize("face count")?;
    let _edges = next_usize("edge count")?;

    let mut rest = tokens;
    let mut next_f64 = |what: &str| -> Result<f64> {
        rest.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format_err(path, format!("bad or missing {what}")))
    };
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        vertices.push([
            next_f64("vertex x")?,
            next_f64("vertex y")?,
            next_f64("vertex z")?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let arity = next_f64("face arity")? as usize;
        if arity != 3 {
            return Err(format_err(path, format!("face with {arity} vertices; only triangles supported")));
        }
        let mut idx = [0usize; 3];
        for slot in &mut idx {
            let v = next_f64("face index")?;
            if v.fract() != 0.0 || v < 0.0 || v as usize >= nv {
                return Err(format_err(path, format!("face index {v} out of range")));
            }
            *slot = v as usize;
        }
        faces.push(idx);
    }
    Ok(TriMesh { vertices, faces })
}

// ---------------------------------------------------------------------------
// Images: 16-bit binary PGM (P5, maxval 65535, big-endian samples) with the
// raw intensity range in a JSON sidecar so values can be de-normalized.
// ---------------------------------------------------------------------------

/// Raw range stored alongside a normalized 16-bit image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RawRange {
    pub min: f64,
    pub max: f64,
}

/// Write an image as 16-bit PGM, mapping `[min, max]` to `[0, 65535]`.
/// A constant image maps to all zeros.  Returns the raw range needed to
/// undo the normalization.
pub fn save_image_pgm16(path: &Path, image: &Image2) -> Result<RawRange> {
    let (min, max) = image.min_max();
    let scale = if max > min { 65535.0 / (max - min) } else { 0.0 };
    let mut out = Vec::with_capacity(32 + image.data().len() * 2);
    write!(out, "P5\n{} {}\n65535\n", image.width(), image.height())?;
    for &v in image.data() {
        let q = (((v - min) * scale).round() as u16).to_be_bytes();
        out.extend_from_slice(&q);
    }
    fs::write(path, out)?;
    Ok(RawRange { min, max })
}

/// Load a 16-bit PGM written by [`save_image_pgm16`] and map pixel values
/// back into `[range.min, range.max]`.
pub fn load_image_pgm16(path: &Path, range: RawRange) -> Result<Image2> {
    let bytes = fs::read(path)?;
    // Header: three whitespace-separated tokens after the magic, then a
    // single whitespace byte, then the payload.
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(format_err(path, "not a binary PGM (P5)"));
    }
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| format_err(path, "bad width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| format_err(path, "bad height"))?;
    let maxval = token(&bytes)?;
    if maxval != "65535" {
        return Err(format_err(path, format!("expected maxval 65535, got {maxval}")));
    }
    pos += 1; // single whitespace separating header and payload
    let payload = &bytes[pos..];
    if payload.len() != width * height * 2 {
        return Err(format_err(
            path,
            format!("payload has {} bytes, expected {}", payload.len(), width * height * 2),
        ));
    }
    let span = range.max - range.min;
    let data: Vec<f64> = payload
        .chunks_exact(2)
        .map(|c| range.min + u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0 * span)
        .collect();
    Ok(Image2::from_vec(width, height, data))
}

// ---------------------------------------------------------------------------
// Radiographs: PGM + sidecar with the full projection setup.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RadiographSidecar {
    format_version: u32,
    raw_min: f64,
    raw_max: f64,
    width: usize,
    height: usize,
    setup: ProjectionSetup,
    /// PGM file name, relative to the sidecar.
    image_file: String,
}

/// Write a radiograph as `<name>.pgm` plus a `<name>.json` sidecar holding
/// the raw intensity range and the full projection setup.
pub fn save_radiograph(sidecar_path: &Path, radiograph: &Radiograph) -> Result<()> {
    let image_file = replace_extension(sidecar_path, "pgm");
    let range = save_image_pgm16(&sibling(sidecar_path, &image_file), &radiograph.image)?;
    let sidecar = RadiographSidecar {
        format_version: FORMAT_VERSION,
        raw_min: range.min,
        raw_max: range.max,
        width: radiograph.image.width(),
        height: radiograph.image.height(),
        setup: radiograph.setup,
        image_file,
    };
    fs::write(sidecar_path, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Load a radiograph written by [`save_radiograph`].  Pixel values are
/// reconstructed from the 16-bit image, so they match the originals to
/// within one quantization step of the stored range.
pub fn load_radiograph(sidecar_path: &Path) -> Result<Radiograph> {
    let sidecar: RadiographSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path)?)?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(format_err(
            sidecar_path,
            format!("unsupported radiograph format version {}", sidecar.format_version),
        ));
    }
    let image = load_image_pgm16(
        &sibling(sidecar_path, &sidecar.image_file),
        RawRange {
            min: sidecar.raw_min,
            max: sidecar.raw_max,
        },
    )?;
    if image.width() != sidecar.width || image.height() != sidecar.height {
        return Err(format_err(
            sidecar_path,
            format!(
                "image is {}x{}, sidecar says {}x{}",
                image.width(),
                image.height(),
                sidecar.width,
                sidecar.height
            ),
        ));
    }
    Ok(Radiograph {
        image,
        setup: sidecar.setup,
    })
}

// ---------------------------------------------------------------------------
// Dataset manifests: JSON lines, one record per line, each carrying the
// schema version.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    schema_version: u32,
    #[serde(flatten)]
    record: DatasetRecord,
}

/// Write a dataset manifest: one JSON object per line.
pub fn save_dataset_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut out = String::new();
    for record in records {
        let line = ManifestLine {
            schema_version: FORMAT_VERSION,
            record: record.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a dataset manifest written by [`save_dataset_manifest`].
pub fn load_dataset_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (number, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(line)
            .map_err(|e| format_err(path, format!("line {}: {e}", number + 1)))?;
        if parsed.schema_version != FORMAT_VERSION {
            return Err(format_err(
                path,
                format!(
                    "line {}: unsupported schema version {}",
                    number + 1,
                    parsed.schema_version
                ),
            ));
        }
        records.push(parsed.record);
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Network weights: JSON manifest + one float32 blob per state buffer in a
// sibling binary file.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobEntry {
    /// Layer kind the buffer belongs to (e.g. "conv3x3", "dense").
    layer: String,
    /// Element count of the buffer.
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsManifest {
    format_version: u32,
    config: ConvNetConfig,
    seed: u64,
    epoch: usize,
    /// Blob payload file name, relative to the manifest.
    data_file: String,
    /// Buffers in network order; payload stores them consecutively as
    /// little-endian f32.
    blobs: Vec<BlobEntry>,
}

/// Write a network's weights (and normalization statistics) as a JSON
/// manifest plus a float32 blob file.
pub fn save_weights(manifest_path: &Path, net: &mut ConvNet, epoch: usize) -> Result<()> {
    let data_file = replace_extension(manifest_path, "bin");
    let mut blobs = Vec::new();
    let mut bytes = Vec::new();
    for (layer, buffer) in net.state_buffers() {
        blobs.push(BlobEntry {
            layer: layer.to_string(),
            len: buffer.len(),
        });
        for &v in buffer.iter() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = WeightsManifest {
        format_version: FORMAT_VERSION,
        config: net.config.clone(),
        seed: net.seed,
        epoch,
        data_file: data_file.clone(),
        blobs,
    };
    fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    fs::write(sibling(manifest_path, &data_file), bytes)?;
    Ok(())
}

/// Rebuild a network from a manifest written by [`save_weights`].
/// Returns the network and the epoch recorded at save time.  Values pass
/// through float32, so weights match the originals to single precision.
pub fn load_weights(manifest_path: &Path) -> Result<(ConvNet, usize)> {
    let manifest: WeightsManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(format_err(
            manifest_path,
            format!("unsupported weights format version {}", manifest.format_version),
        ));
    }
    let bytes = fs::read(sibling(manifest_path, &manifest.data_file))?;
    let total: usize = manifest.blobs.iter().map(|b| b.len).sum();
    if bytes.len() != total * 4 {
        return Err(format_err(
            manifest_path,
            format!("payload has {} bytes, expected {}", bytes.len(), total * 4),
        ));
    }

    let mut net = ConvNet::new(manifest.config, manifest.seed)?;
    let buffers = net.state_buffers();
    if buffers.len() != manifest.blobs.len() {
        return Err(format_err(
            manifest_path,
            format!(
                "network has {} state buffers, manifest lists {}",
                buffers.len(),
                manifest.blobs.len()
            ),
        ));
    }
    let mut offset = 0usize;
    for ((layer, buffer), blob) in buffers.into_iter().zip(&manifest.blobs) {
        if layer != blob.layer || buffer.len() != blob.len {
            return Err(format_err(
                manifest_path,
                format!(
                    "buffer mismatch: network {layer}[{}] vs manifest {}[{}]",
                    buffer.len(),
                    blob.layer,
                    blob.len
                ),
            ));
        }
        for v in buffer.iter_mut() {
            let c = &bytes[offset..offset + 4];
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            offset += 4;
        }
    }
    Ok((net, manifest.epoch))
}
