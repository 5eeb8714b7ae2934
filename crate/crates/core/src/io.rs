//! On-disk formats: binary PLY clouds, scene directories and the tensor
//! checkpoint container.
//!
//! A scene directory `scene_<seed>/` holds
//! `cloud.ply`, `labels.bin` (one byte per point), `instances.json`,
//! `camera.json` (intrinsics plus world-to-camera pose), `depth.bin`
//! (row-major little-endian f32) with its `intrinsics.json` sidecar, and
//! `scene.json` (seed, layout and instance sources).

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, PointCloudFrame};
use crate::instance::InstanceRecord;
use crate::num::{Pose, Scalar, Vec3};
use crate::synth::{SceneGroundTruth, SceneLayout};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

impl IoError {
    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<(), IoError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

const PLY_PROPERTIES: [(&str, &str); 9] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("float", "nx"),
    ("float", "ny"),
    ("float", "nz"),
];

const PLY_RECORD_BYTES: usize = 3 * 4 + 3 + 3 * 4;

fn color_byte<T: Scalar>(c: T) -> u8 {
    (c.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ply<T: Scalar>(path: &Path, cloud: &PointCloudFrame<T>) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(256 + cloud.len() * PLY_RECORD_BYTES);
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len());
    for (ty, name) in PLY_PROPERTIES {
        header.push_str(&format!("property {ty} {name}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for i in 0..cloud.len() {
        for c in cloud.xyz[i].to_array() {
            out.extend_from_slice(&c.as_f32().to_le_bytes());
        }
        for c in cloud.rgb[i].to_array() {
            out.push(color_byte(c));
        }
        for c in cloud.normal[i].to_array() {
            out.extend_from_slice(&c.as_f32().to_le_bytes());
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a cloud written by [`write_ply`]. Pixel indices are recovered by
/// projecting each point with `intrinsics`; without intrinsics they are the
/// point indices.
pub fn read_ply<T: Scalar>(path: &Path, intrinsics: Option<&CameraIntrinsics>) -> Result<PointCloudFrame<T>, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut count = None;
    let mut props = Vec::new();
    let mut first = true;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err(path))? == 0 {
            return Err(IoError::format(path, "truncated PLY header"));
        }
        let trimmed = line.trim_end();
        if first {
            if trimmed != "ply" {
                return Err(IoError::format(path, "missing PLY magic"));
            }
            first = false;
            continue;
        }
        let words: Vec<&str> = trimmed.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(IoError::format(path, format!("unsupported PLY format {other}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| IoError::format(path, "bad vertex count"))?)
            }
            ["element", other, ..] => return Err(IoError::format(path, format!("unexpected element {other}"))),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["comment", ..] | [] => {}
            ["end_header"] => break,
            _ => return Err(IoError::format(path, format!("unexpected header line {trimmed:?}"))),
        }
    }
    let expected: Vec<(String, String)> =
        PLY_PROPERTIES.iter().map(|(t, n)| (t.to_string(), n.to_string())).collect();
    if props != expected {
        return Err(IoError::format(path, "PLY properties must be x y z red green blue nx ny nz"));
    }
    let n = count.ok_or_else(|| IoError::format(path, "missing vertex element"))?;
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(io_err(path))?;
    if body.len() != n * PLY_RECORD_BYTES {
        return Err(IoError::format(
            path,
            format!("expected {} bytes of vertex data, found {}", n * PLY_RECORD_BYTES, body.len()),
        ));
    }
    let f = |b: &[u8], at: usize| T::of(f32::from_le_bytes(b[at..at + 4].try_into().unwrap()) as f64);
    let mut cloud = PointCloudFrame { xyz: Vec::with_capacity(n), rgb: Vec::new(), normal: Vec::new(), pixel_index: Vec::new() };
    for (i, rec) in body.chunks_exact(PLY_RECORD_BYTES).enumerate() {
        let p = Vec3::new(f(rec, 0), f(rec, 4), f(rec, 8));
        cloud.xyz.push(p);
        let byte = |at: usize| T::of(rec[at] as f64 / 255.0);
        cloud.rgb.push(Vec3::new(byte(12), byte(13), byte(14)));
        cloud.normal.push(Vec3::new(f(rec, 15), f(rec, 19), f(rec, 23)));
        cloud.pixel_index.push(match intrinsics {
            Some(k) => {
                let (u, v) = k.project(p.cast::<f64>());
                let (u, v) = (u.round(), v.round());
                if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
                    return Err(IoError::format(path, format!("point {i} projects outside the image")));
                }
                v as usize * k.width + u as usize
            }
            None => i,
        });
    }
    Ok(cloud)
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<(), IoError> {
    fs::write(path, labels).map_err(io_err(path))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(io_err(path))
}

pub fn write_depth(path: &Path, depth: &[f32]) -> Result<(), IoError> {
    let bytes: Vec<u8> = depth.iter().flat_map(|d| d.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_depth(path: &Path, k: &CameraIntrinsics) -> Result<Vec<f32>, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != 4 * k.width * k.height {
        return Err(IoError::format(
            path,
            format!("expected {}x{} f32 depth values, found {} bytes", k.width, k.height, bytes.len()),
        ));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub intrinsics: CameraIntrinsics,
    pub world_to_camera: Pose<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub seed: u64,
    pub layout: SceneLayout,
    pub sources: Vec<(usize, usize)>,
}

pub const CLOUD_FILE: &str = "cloud.ply";
pub const LABELS_FILE: &str = "labels.bin";
pub const INSTANCES_FILE: &str = "instances.json";
pub const CAMERA_FILE: &str = "camera.json";
pub const DEPTH_FILE: &str = "depth.bin";
pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const SCENE_FILE: &str = "scene.json";

pub fn scene_dir_name(seed: u64) -> String {
    format!("scene_{seed}")
}

pub fn write_scene<T: Scalar>(dir: &Path, scene: &SceneGroundTruth<T>) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_ply(&dir.join(CLOUD_FILE), &scene.cloud)?;
    write_labels(&dir.join(LABELS_FILE), &scene.labels)?;
    write_instances(&dir.join(INSTANCES_FILE), &scene.instances)?;
    write_json(
        &dir.join(CAMERA_FILE),
        &CameraFile { intrinsics: scene.intrinsics, world_to_camera: scene.layout.camera_pose },
    )?;
    write_depth(&dir.join(DEPTH_FILE), &scene.depth)?;
    write_json(&dir.join(INTRINSICS_FILE), &scene.intrinsics)?;
    write_json(
        &dir.join(SCENE_FILE),
        &SceneFile { seed: scene.seed, layout: scene.layout.clone(), sources: scene.sources.clone() },
    )
}

pub fn write_instances<T: Scalar>(path: &Path, instances: &[InstanceRecord<T>]) -> Result<(), IoError> {
    write_json(path, instances)
}

pub fn read_instances<T: Scalar>(path: &Path) -> Result<Vec<InstanceRecord<T>>, IoError> {
    read_json(path)
}

/// Reads a scene directory and checks that its parts agree with each other.
pub fn read_scene<T: Scalar>(dir: &Path) -> Result<SceneGroundTruth<T>, IoError> {
    let camera: CameraFile = read_json(&dir.join(CAMERA_FILE))?;
    let sidecar: CameraIntrinsics = read_json(&dir.join(INTRINSICS_FILE))?;
    if sidecar != camera.intrinsics {
        return Err(IoError::format(dir, "intrinsics.json disagrees with camera.json"));
    }
    let meta: SceneFile = read_json(&dir.join(SCENE_FILE))?;
    if meta.layout.camera_pose != camera.world_to_camera {
        return Err(IoError::format(dir, "scene.json camera pose disagrees with camera.json"));
    }
    let cloud = read_ply(&dir.join(CLOUD_FILE), Some(&camera.intrinsics))?;
    let labels = read_labels(&dir.join(LABELS_FILE))?;
    if labels.len() != cloud.len() {
        return Err(IoError::format(
            dir,
            format!("{} labels for {} points", labels.len(), cloud.len()),
        ));
    }
    let instances = read_instances(&dir.join(INSTANCES_FILE))?;
    if meta.sources.len() != instances.len() {
        return Err(IoError::format(dir, "scene.json sources do not match instances.json"));
    }
    let depth = read_depth(&dir.join(DEPTH_FILE), &camera.intrinsics)?;
    Ok(SceneGroundTruth {
        seed: meta.seed,
        intrinsics: camera.intrinsics,
        layout: meta.layout,
        cloud,
        labels,
        instances,
        sources: meta.sources,
        depth,
    })
}

/// Subdirectories named `scene_<seed>`, ordered by seed.
pub fn list_scene_dirs(root: &Path) -> Result<Vec<(u64, PathBuf)>, IoError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name();
        let Some(seed) = name.to_str().and_then(|n| n.strip_prefix("scene_")).and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        if entry.path().is_dir() {
            out.push((seed, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AFKPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Layout: magic, u32 version, u32 tensor count, then per tensor a u32 name
/// length, the UTF-8 name, a u32 rank, u64 dimensions and the f32 data, all
/// little-endian.
pub fn encode_checkpoint(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.at.checked_add(n)?;
        let s = self.bytes.get(self.at..end)?;
        self.at = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<Tensor>, String> {
    let mut c = Cursor { bytes, at: 0 };
    let truncated = || "truncated checkpoint".to_string();
    if c.take(8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = c.u32().ok_or_else(truncated)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = c.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(c.take(len).ok_or_else(truncated)?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        let rank = c.u32().ok_or_else(truncated)? as usize;
        let shape: Vec<usize> =
            (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Option<_>>().ok_or_else(truncated)?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor too large")?;
        let raw = c.take(n.checked_mul(4).ok_or("tensor too large")?).ok_or_else(truncated)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        tensors.push(Tensor { name, shape, data });
    }
    if c.at != bytes.len() {
        return Err("trailing bytes after the last tensor".into());
    }
    Ok(tensors)
}

pub fn write_checkpoint(path: &Path, tensors: &[Tensor]) -> Result<(), IoError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&encode_checkpoint(tensors)).map_err(io_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Tensor>, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes).map_err(|m| IoError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_and_rejects_garbage() {
        let tensors = vec![
            Tensor { name: "a.weight".into(), shape: vec![2, 3], data: vec![1.0, -2.0, 3.5, 0.0, 1e-8, 7.0] },
            Tensor { name: "b".into(), shape: vec![0], data: vec![] },
        ];
        let bytes = encode_checkpoint(&tensors);
        assert_eq!(&bytes[..8], b"AFKPCKPT");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), tensors);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(decode_checkpoint(&bad).unwrap_err().contains("version"));
        assert!(decode_checkpoint(b"NOTACKPT").is_err());
    }
}
