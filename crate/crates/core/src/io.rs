//! File formats: binary PGM/PPM images, PFM float maps, pose text files,
//! and the `key = value` scene/run configuration grammar.
//!
//! Writers emit canonical bytes (so identical data produces identical
//! files) and every writer's output round-trips through its reader. PFM is
//! 32-bit little-endian float with scale line `-1.0`, rows stored bottom to
//! top. Pose text is one transform per line as 12 numbers, the row-major
//! 3x4 [R|t] layout of the usual odometry ground-truth files.

use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::grid::{Grid, MaskMap};
use crate::image::ImageBuffer;
use crate::loss::LossConfig;
use crate::optimize::OptimSettings;
use crate::synthscene::{Axis, Primitive, SceneSpec, ScenePreset, Shape, Texture};
use nalgebra::{Matrix3, Vector3};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: byte {offset}: {message}")]
    Binary {
        path: PathBuf,
        offset: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn binary_err(path: &Path, offset: usize, message: impl Into<String>) -> IoError {
    IoError::Binary {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Netpbm header handling
// ---------------------------------------------------------------------------

struct HeaderReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    /// Next whitespace-delimited token, skipping `#` comments.
    fn token(&mut self, path: &Path) -> Result<&'a str, IoError> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.data.len() && self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(binary_err(path, start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.data[start..self.pos])
            .map_err(|_| binary_err(path, start, "non-UTF8 header token"))
    }

    fn number<T: std::str::FromStr>(&mut self, path: &Path, what: &str) -> Result<T, IoError> {
        let at = self.pos;
        let tok = self.token(path)?;
        tok.parse::<T>()
            .map_err(|_| binary_err(path, at, format!("invalid {what}: '{tok}'")))
    }

    /// Skips the single whitespace byte separating header and raster.
    fn raster(&mut self, path: &Path) -> Result<&'a [u8], IoError> {
        if self.pos >= self.data.len() {
            return Err(binary_err(path, self.pos, "missing raster data"));
        }
        self.pos += 1;
        Ok(&self.data[self.pos..])
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

// ---------------------------------------------------------------------------
// PGM / PPM
// ---------------------------------------------------------------------------

#[inline]
fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// 8-bit grayscale PGM of a [0,1] grid.
pub fn write_pgm(path: &Path, grid: &Grid<f64>) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    write!(out, "P5\n{} {}\n255\n", grid.width(), grid.height()).map_err(io_err(path))?;
    let bytes: Vec<u8> = grid.data().iter().map(|&v| quantize(v)).collect();
    out.write_all(&bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_pgm(path: &Path) -> Result<Grid<f64>, IoError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let mut h = HeaderReader::new(&data);
    let magic = h.token(path)?;
    if magic != "P5" {
        return Err(binary_err(path, 0, format!("expected P5, found '{magic}'")));
    }
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let maxval: usize = h.number(path, "maxval")?;
    if maxval != 255 {
        return Err(binary_err(path, h.offset(), "only maxval 255 supported"));
    }
    let raster = h.raster(path)?;
    if raster.len() < width * height {
        return Err(binary_err(
            path,
            h.offset(),
            format!("raster truncated: {} < {}", raster.len(), width * height),
        ));
    }
    let values: Vec<f64> = raster[..width * height]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Grid::from_vec(width, height, values)
        .map_err(|e| binary_err(path, h.offset(), e.to_string()))
}

/// Binary mask as PGM with values exactly 0 or 255.
pub fn write_mask_pgm(path: &Path, mask: &MaskMap) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    write!(out, "P5\n{} {}\n255\n", mask.width(), mask.height()).map_err(io_err(path))?;
    let bytes: Vec<u8> = mask.data().iter().map(|&m| if m { 255 } else { 0 }).collect();
    out.write_all(&bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_mask_pgm(path: &Path) -> Result<MaskMap, IoError> {
    let grid = read_pgm(path)?;
    let mut data = Vec::with_capacity(grid.len());
    for (i, &v) in grid.data().iter().enumerate() {
        if v == 0.0 {
            data.push(false);
        } else if v == 1.0 {
            data.push(true);
        } else {
            return Err(binary_err(
                path,
                i,
                format!("mask sample {i} is {v}, must be 0 or 255"),
            ));
        }
    }
    Ok(MaskMap::from_vec(grid.width(), grid.height(), data).expect("same size"))
}

/// 8-bit color PPM. Grayscale images are replicated across channels.
pub fn write_ppm(path: &Path, img: &ImageBuffer) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height()).map_err(io_err(path))?;
    let mut bytes = Vec::with_capacity(img.width() * img.height() * 3);
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..3 {
                let ch = if img.channels() == 3 { c } else { 0 };
                bytes.push(quantize(img.value(x, y, ch)));
            }
        }
    }
    out.write_all(&bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_ppm(path: &Path) -> Result<ImageBuffer, IoError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let mut h = HeaderReader::new(&data);
    let magic = h.token(path)?;
    if magic != "P6" {
        return Err(binary_err(path, 0, format!("expected P6, found '{magic}'")));
    }
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let maxval: usize = h.number(path, "maxval")?;
    if maxval != 255 {
        return Err(binary_err(path, h.offset(), "only maxval 255 supported"));
    }
    let raster = h.raster(path)?;
    let need = width * height * 3;
    if raster.len() < need {
        return Err(binary_err(
            path,
            h.offset(),
            format!("raster truncated: {} < {need}", raster.len()),
        ));
    }
    let values: Vec<f64> = raster[..need].iter().map(|&b| b as f64 / 255.0).collect();
    ImageBuffer::new(width, height, 3, values)
        .map_err(|e| binary_err(path, h.offset(), e.to_string()))
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

/// Grayscale PFM: 32-bit floats, little-endian (scale -1.0), rows bottom to
/// top.
pub fn write_pfm(path: &Path, grid: &Grid<f64>) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    write!(out, "Pf\n{} {}\n-1.0\n", grid.width(), grid.height()).map_err(io_err(path))?;
    let mut bytes = Vec::with_capacity(grid.len() * 4);
    for y in (0..grid.height()).rev() {
        for x in 0..grid.width() {
            bytes.extend_from_slice(&(*grid.at(x, y) as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_pfm(path: &Path) -> Result<Grid<f64>, IoError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let mut h = HeaderReader::new(&data);
    let magic = h.token(path)?;
    if magic != "Pf" {
        return Err(binary_err(
            path,
            0,
            format!("expected grayscale 'Pf', found '{magic}'"),
        ));
    }
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let scale: f64 = h.number(path, "scale")?;
    if scale >= 0.0 {
        return Err(binary_err(
            path,
            h.offset(),
            "big-endian PFM (positive scale) not supported",
        ));
    }
    let raster = h.raster(path)?;
    let raster_start = h.offset();
    let need = width * height * 4;
    if raster.len() < need {
        return Err(binary_err(
            path,
            raster_start,
            format!("raster truncated: {} < {need}", raster.len()),
        ));
    }
    let mut grid = Grid::from_elem(width, height, 0.0f64);
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            let i = (row * width + x) * 4;
            let v = f32::from_le_bytes([raster[i], raster[i + 1], raster[i + 2], raster[i + 3]]);
            if !v.is_finite() {
                return Err(binary_err(
                    path,
                    raster_start + i,
                    format!("non-finite sample {v} at pixel ({x},{y})"),
                ));
            }
            *grid.at_mut(x, y) = v as f64;
        }
    }
    Ok(grid)
}

/// Color PFM (`PF`): three interleaved little-endian floats per pixel,
/// rows bottom to top. Lossless carrier for rendered frames; the 8-bit PPM
/// stays the inspection format.
pub fn write_pfm_color(path: &Path, img: &ImageBuffer) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    write!(out, "PF\n{} {}\n-1.0\n", img.width(), img.height()).map_err(io_err(path))?;
    let mut bytes = Vec::with_capacity(img.width() * img.height() * 12);
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            for c in 0..3 {
                let ch = if img.channels() == 3 { c } else { 0 };
                bytes.extend_from_slice(&(img.value(x, y, ch) as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&bytes).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_pfm_color(path: &Path) -> Result<ImageBuffer, IoError> {
    let data = fs::read(path).map_err(io_err(path))?;
    let mut h = HeaderReader::new(&data);
    let magic = h.token(path)?;
    if magic != "PF" {
        return Err(binary_err(
            path,
            0,
            format!("expected color 'PF', found '{magic}'"),
        ));
    }
    let width: usize = h.number(path, "width")?;
    let height: usize = h.number(path, "height")?;
    let scale: f64 = h.number(path, "scale")?;
    if scale >= 0.0 {
        return Err(binary_err(
            path,
            h.offset(),
            "big-endian PFM (positive scale) not supported",
        ));
    }
    let raster = h.raster(path)?;
    let raster_start = h.offset();
    let need = width * height * 12;
    if raster.len() < need {
        return Err(binary_err(
            path,
            raster_start,
            format!("raster truncated: {} < {need}", raster.len()),
        ));
    }
    let mut values = vec![0.0f64; width * height * 3];
    for row in 0..height {
        let y = height - 1 - row;
        for x in 0..width {
            for c in 0..3 {
                let i = ((row * width + x) * 3 + c) * 4;
                let v =
                    f32::from_le_bytes([raster[i], raster[i + 1], raster[i + 2], raster[i + 3]]);
                if !v.is_finite() {
                    return Err(binary_err(
                        path,
                        raster_start + i,
                        format!("non-finite sample {v} at pixel ({x},{y})"),
                    ));
                }
                values[(y * width + x) * 3 + c] = v as f64;
            }
        }
    }
    ImageBuffer::new(width, height, 3, values)
        .map_err(|e| binary_err(path, raster_start, e.to_string()))
}

/// 8-bit heatmap of a nonnegative map, normalized by its maximum.
pub fn write_heatmap_pgm(path: &Path, grid: &Grid<f64>) -> Result<(), IoError> {
    let max = grid.max_value().max(1e-300);
    write_pgm(path, &grid.map(|&v| (v / max).clamp(0.0, 1.0)))
}

// ---------------------------------------------------------------------------
// Pose text
// ---------------------------------------------------------------------------

/// One transform per line: 12 numbers, row-major 3x4 [R|t].
pub fn write_pose_file(path: &Path, poses: &[RigidTransform]) -> Result<(), IoError> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for t in poses {
        let r = &t.rotation;
        let tr = &t.translation;
        let mut fields = Vec::with_capacity(12);
        for row in 0..3 {
            for col in 0..3 {
                fields.push(format!("{:.17e}", r[(row, col)]));
            }
            fields.push(format!("{:.17e}", tr[row]));
        }
        writeln!(out, "{}", fields.join(" ")).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Parses a pose file, validating rotation orthonormality per line.
pub fn read_pose_file(path: &Path) -> Result<Vec<RigidTransform>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut poses = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let nums: Result<Vec<f64>, _> = trimmed.split_whitespace().map(str::parse).collect();
        let nums = nums
            .map_err(|e| parse_err(path, line_no, format!("invalid number: {e}")))?;
        if nums.len() != 12 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 12 numbers, found {}", nums.len()),
            ));
        }
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, line_no, "non-finite pose entry"));
        }
        let rotation = Matrix3::new(
            nums[0], nums[1], nums[2], nums[4], nums[5], nums[6], nums[8], nums[9], nums[10],
        );
        let translation = Vector3::new(nums[3], nums[7], nums[11]);
        let t = RigidTransform::new(rotation, translation)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        poses.push(t);
    }
    Ok(poses)
}

// ---------------------------------------------------------------------------
// key = value config grammar
// ---------------------------------------------------------------------------

struct Section {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

fn parse_sections(path: &Path, text: &str) -> Result<Vec<Section>, IoError> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(path, line_no, "unterminated section header"))?;
            sections.push(Section {
                name: name.trim().to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, line_no, "expected 'key = value'"))?;
        let section = sections
            .last_mut()
            .ok_or_else(|| parse_err(path, line_no, "entry before any [section]"))?;
        section
            .entries
            .push((key.trim().to_string(), value.trim().to_string(), line_no));
    }
    Ok(sections)
}

/// Key-value access with fail-fast unknown-key detection.
struct SectionReader<'a> {
    path: &'a Path,
    section: &'a Section,
    used: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    fn new(path: &'a Path, section: &'a Section) -> Self {
        Self {
            path,
            section,
            used: vec![false; section.entries.len()],
        }
    }

    fn get(&mut self, key: &str) -> Option<(&'a str, usize)> {
        for (i, (k, v, line)) in self.section.entries.iter().enumerate() {
            if k == key {
                self.used[i] = true;
                return Some((v.as_str(), *line));
            }
        }
        None
    }

    fn require(&mut self, key: &str) -> Result<(&'a str, usize), IoError> {
        self.get(key).ok_or_else(|| {
            parse_err(
                self.path,
                self.section.line,
                format!("[{}] is missing required key '{key}'", self.section.name),
            )
        })
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, IoError> {
        let (v, line) = self.require(key)?;
        v.parse::<T>()
            .map_err(|_| parse_err(self.path, line, format!("invalid value for '{key}': '{v}'")))
    }

    fn number_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, IoError> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v.parse::<T>().map_err(|_| {
                parse_err(self.path, line, format!("invalid value for '{key}': '{v}'"))
            }),
        }
    }

    fn flag_or(&mut self, key: &str, default: bool) -> Result<bool, IoError> {
        match self.get(key) {
            None => Ok(default),
            Some(("on", _)) | Some(("true", _)) | Some(("1", _)) => Ok(true),
            Some(("off", _)) | Some(("false", _)) | Some(("0", _)) => Ok(false),
            Some((v, line)) => Err(parse_err(
                self.path,
                line,
                format!("invalid flag for '{key}': '{v}' (use on/off)"),
            )),
        }
    }

    fn vector(&mut self, key: &str, n: usize) -> Result<Vec<f64>, IoError> {
        let (v, line) = self.require(key)?;
        let nums: Result<Vec<f64>, _> = v.split_whitespace().map(str::parse).collect();
        let nums = nums
            .map_err(|e| parse_err(self.path, line, format!("invalid number in '{key}': {e}")))?;
        if nums.len() != n {
            return Err(parse_err(
                self.path,
                line,
                format!("'{key}' needs {n} numbers, found {}", nums.len()),
            ));
        }
        Ok(nums)
    }

    fn vector_or(&mut self, key: &str, n: usize, default: Vec<f64>) -> Result<Vec<f64>, IoError> {
        if self.get(key).is_none() {
            return Ok(default);
        }
        // Re-read through the checked path to mark usage consistently.
        self.vector(key, n)
    }

    /// Unknown keys are errors: configs must be fully understood.
    fn finish(self) -> Result<(), IoError> {
        for (i, (k, _, line)) in self.section.entries.iter().enumerate() {
            if !self.used[i] {
                return Err(parse_err(
                    self.path,
                    *line,
                    format!("unknown key '{k}' in [{}]", self.section.name),
                ));
            }
        }
        Ok(())
    }
}

fn parse_texture(r: &mut SectionReader) -> Result<Texture, IoError> {
    let (kind, line) = r.require("texture")?;
    match kind {
        "noise" => Ok(Texture::Noise {
            scale: r.number("scale")?,
            seed: r.number("seed")?,
            amplitude: r.number("amplitude")?,
            base: r.number("base")?,
        }),
        "checker" => {
            let bright = r.vector("bright", 3)?;
            let dark = r.vector("dark", 3)?;
            Ok(Texture::Checker {
                scale: r.number("scale")?,
                bright: [bright[0], bright[1], bright[2]],
                dark: [dark[0], dark[1], dark[2]],
            })
        }
        "flat" => {
            let color = r.vector("color", 3)?;
            Ok(Texture::Flat {
                color: [color[0], color[1], color[2]],
            })
        }
        other => Err(parse_err(
            r.path,
            line,
            format!("unknown texture '{other}' (noise, checker or flat)"),
        )),
    }
}

fn parse_axis(r: &mut SectionReader) -> Result<Axis, IoError> {
    let (v, line) = r.require("axis")?;
    match v {
        "x" => Ok(Axis::X),
        "y" => Ok(Axis::Y),
        "z" => Ok(Axis::Z),
        other => Err(parse_err(r.path, line, format!("unknown axis '{other}'"))),
    }
}

/// Parses the declarative scene grammar: a `[camera]` section followed by
/// `[rect]` and `[box]` primitive sections.
pub fn read_scene_spec(path: &Path) -> Result<SceneSpec, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let sections = parse_sections(path, &text)?;
    let mut intrinsics: Option<CameraIntrinsics> = None;
    let mut trajectory: Vec<RigidTransform> = Vec::new();
    let mut primitives: Vec<Primitive> = Vec::new();

    for section in &sections {
        let mut r = SectionReader::new(path, section);
        match section.name.as_str() {
            "camera" => {
                let width: usize = r.number("width")?;
                let height: usize = r.number("height")?;
                let fx: f64 = r.number("fx")?;
                let fy: f64 = r.number("fy")?;
                let cx: f64 = r.number("cx")?;
                let cy: f64 = r.number("cy")?;
                let frames: usize = r.number("frames")?;
                let step = r.vector("step", 3)?;
                r.finish()?;
                let k = CameraIntrinsics::new(fx, fy, cx, cy, width, height)
                    .map_err(|e| parse_err(path, section.line, e.to_string()))?;
                intrinsics = Some(k);
                trajectory = (0..frames)
                    .map(|i| {
                        RigidTransform::from_translation(
                            -Vector3::new(step[0], step[1], step[2]) * i as f64,
                        )
                    })
                    .collect();
            }
            "rect" => {
                let axis = parse_axis(&mut r)?;
                let coord: f64 = r.number("coord")?;
                let min = r.vector("min", 2)?;
                let max = r.vector("max", 2)?;
                let texture = parse_texture(&mut r)?;
                let motion = r.vector_or("motion", 3, vec![0.0; 3])?;
                r.finish()?;
                primitives.push(Primitive {
                    shape: Shape::Rect {
                        axis,
                        coord,
                        min: (min[0], min[1]),
                        max: (max[0], max[1]),
                    },
                    texture,
                    motion: RigidTransform::from_translation(Vector3::new(
                        motion[0], motion[1], motion[2],
                    )),
                });
            }
            "box" => {
                let min = r.vector("min", 3)?;
                let max = r.vector("max", 3)?;
                let texture = parse_texture(&mut r)?;
                let motion = r.vector_or("motion", 3, vec![0.0; 3])?;
                r.finish()?;
                primitives.push(Primitive {
                    shape: Shape::Cuboid {
                        min: Vector3::new(min[0], min[1], min[2]),
                        max: Vector3::new(max[0], max[1], max[2]),
                    },
                    texture,
                    motion: RigidTransform::from_translation(Vector3::new(
                        motion[0], motion[1], motion[2],
                    )),
                });
            }
            other => {
                return Err(parse_err(
                    path,
                    section.line,
                    format!("unknown section [{other}]"),
                ));
            }
        }
    }

    let intrinsics = intrinsics
        .ok_or_else(|| parse_err(path, 1, "missing [camera] section"))?;
    let spec = SceneSpec {
        intrinsics,
        trajectory,
        primitives,
    };
    spec.validate()
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    Ok(spec)
}

/// Where a run gets its scene from.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Preset(ScenePreset),
    Path(PathBuf),
}

/// A full run description: scene, output directory, seed, loss weights and
/// optimizer settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene: SceneSource,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub loss: LossConfig,
    pub optimize: OptimSettings,
}

/// Parses `[run]` / `[loss]` / `[optimize]` sections. Unknown keys fail;
/// a scene given by path must exist at load time.
pub fn read_run_config(path: &Path) -> Result<RunConfig, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let sections = parse_sections(path, &text)?;
    let mut scene = None;
    let mut out = PathBuf::from(".");
    let mut seed = 0u64;
    let mut threads = 1usize;
    let mut loss = LossConfig::default();
    let mut optimize = OptimSettings::default();

    for section in &sections {
        let mut r = SectionReader::new(path, section);
        match section.name.as_str() {
            "run" => {
                let (scene_str, line) = r.require("scene")?;
                scene = Some(if let Some(name) = scene_str.strip_prefix("preset:") {
                    SceneSource::Preset(
                        name.parse::<ScenePreset>()
                            .map_err(|e| parse_err(path, line, e))?,
                    )
                } else {
                    let p = PathBuf::from(scene_str);
                    if !p.exists() {
                        return Err(parse_err(
                            path,
                            line,
                            format!("scene path '{scene_str}' does not exist"),
                        ));
                    }
                    SceneSource::Path(p)
                });
                if let Some((v, _)) = r.get("out") {
                    out = PathBuf::from(v);
                }
                seed = r.number_or("seed", 0u64)?;
                threads = r.number_or("threads", 1usize)?;
                r.finish()?;
            }
            "loss" => {
                loss.eta = r.number_or("eta", loss.eta)?;
                loss.lambda = r.number_or("lambda", loss.lambda)?;
                loss.e_scale = r.number_or("e", loss.e_scale)?;
                loss.f_scale = r.number_or("f", loss.f_scale)?;
                loss.l_threshold = r.number_or("l", loss.l_threshold)?;
                loss.u_threshold = r.number_or("u", loss.u_threshold)?;
                loss.scales = r.number_or("scales", loss.scales)?;
                loss.use_outlier = r.flag_or("outlier", loss.use_outlier)?;
                loss.use_principled = r.flag_or("principled", loss.use_principled)?;
                loss.use_auto = r.flag_or("auto", loss.use_auto)?;
                loss.use_min_reprojection =
                    r.flag_or("min_reprojection", loss.use_min_reprojection)?;
                r.finish()?;
            }
            "optimize" => {
                optimize.depth_step = r.number_or("depth_step", optimize.depth_step)?;
                optimize.pose_step = r.number_or("pose_step", optimize.pose_step)?;
                optimize.max_iters = r.number_or("max_iters", optimize.max_iters)?;
                optimize.tol = r.number_or("tol", optimize.tol)?;
                optimize.adaptive = r.flag_or("adaptive", optimize.adaptive)?;
                optimize.freeze_masks = r.flag_or("freeze_masks", optimize.freeze_masks)?;
                r.finish()?;
            }
            other => {
                return Err(parse_err(
                    path,
                    section.line,
                    format!("unknown section [{other}]"),
                ));
            }
        }
    }

    let scene = scene.ok_or_else(|| parse_err(path, 1, "missing [run] section with scene"))?;
    Ok(RunConfig {
        scene,
        out,
        seed,
        threads,
        loss,
        optimize,
    })
}

/// Single-line intrinsics file: `fx fy cx cy width height`.
pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<(), IoError> {
    let text = format!(
        "{:.17e} {:.17e} {:.17e} {:.17e} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(parse_err(
            path,
            1,
            format!("expected 6 fields, found {}", fields.len()),
        ));
    }
    let nums: Result<Vec<f64>, _> = fields[..4].iter().map(|s| s.parse::<f64>()).collect();
    let nums = nums.map_err(|e| parse_err(path, 1, format!("invalid number: {e}")))?;
    let width: usize = fields[4]
        .parse()
        .map_err(|e| parse_err(path, 1, format!("invalid width: {e}")))?;
    let height: usize = fields[5]
        .parse()
        .map_err(|e| parse_err(path, 1, format!("invalid height: {e}")))?;
    CameraIntrinsics::new(nums[0], nums[1], nums[2], nums[3], width, height)
        .map_err(|e| parse_err(path, 1, e.to_string()))
}
