//! Camera intrinsics, depth maps, scene-flow files and synthetic flow.
//!
//! Pixel coordinates are `(i, j) = (column, row)` with the origin at the top
//! left, matching raster order of every buffer in this module.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use nalgebra::Vector3;
use thiserror::Error;

use crate::estimate::PointFlowField;
use crate::lie::{AffineTransform, Twist};

/// Magic prefix of a flow file. The last byte is the format version.
pub const QSF_MAGIC: [u8; 4] = *b"QSF1";
const QSF_HEADER: usize = 12;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file not found: {0}")]
    Missing(PathBuf),
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: expected a 16-bit single-channel PNG, found {found}")]
    BitDepth { path: PathBuf, found: String },
    #[error("{what} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeMismatch {
        what: &'static str,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("not a flow file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported flow file version {0:?}")]
    UnsupportedVersion(char),
    #[error("flow payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("flow payload has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses a flat `key = value` text. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, SceneError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| SceneError::Parse {
            line: n + 1,
            message: format!("expected key = value, got {line:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(SceneError::Parse {
                line: n + 1,
                message: "empty key".into(),
            });
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Pinhole camera model.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Raw depth units per meter.
    pub depth_scale: f64,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        depth_scale: f64,
    ) -> Result<Self, SceneError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            depth_scale,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.depth_scale]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(SceneError::InvalidIntrinsics("non-finite value".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidIntrinsics("empty image size".into()));
        }
        if !(self.depth_scale > 0.0) {
            return Err(SceneError::InvalidIntrinsics("depth_scale must be positive".into()));
        }
        Ok(())
    }

    /// Reads `fx, fy, cx, cy, width, height` and optionally `depth_scale`
    /// (default 5000) from a key/value map. Other keys are ignored.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, SceneError> {
        fn get<T: std::str::FromStr>(
            map: &BTreeMap<String, String>,
            key: &str,
        ) -> Result<Option<T>, SceneError> {
            map.get(key)
                .map(|v| {
                    v.parse::<T>().map_err(|_| {
                        SceneError::InvalidIntrinsics(format!("cannot parse {key} = {v:?}"))
                    })
                })
                .transpose()
        }
        fn req<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T, SceneError> {
            get(map, key)?.ok_or_else(|| SceneError::InvalidIntrinsics(format!("missing key {key}")))
        }
        Self::new(
            req(map, "fx")?,
            req(map, "fy")?,
            req(map, "cx")?,
            req(map, "cy")?,
            req(map, "width")?,
            req(map, "height")?,
            get(map, "depth_scale")?.unwrap_or(5000.0),
        )
    }

    pub fn parse(text: &str) -> Result<Self, SceneError> {
        Self::from_map(&parse_key_values(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::parse(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\ndepth_scale = {}\n",
            self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.depth_scale
        )
    }

    /// Pixel position of a camera-frame point, or `None` behind the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        (x.z > 0.0).then(|| (self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy))
    }

    /// Camera-frame point at pixel `(i, j)` and depth `z`.
    pub fn unproject(&self, i: f64, j: f64, z: f64) -> Vector3<f64> {
        Vector3::new((i - self.cx) * z / self.fx, (j - self.cy) * z / self.fy, z)
    }
}

/// Per-pixel depth in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Pixels are valid where the depth is finite and positive.
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self, SceneError> {
        if depth.len() != width * height {
            return Err(SceneError::SizeMismatch {
                what: "depth buffer",
                got_w: depth.len(),
                got_h: 1,
                want_w: width,
                want_h: height,
            });
        }
        let valid = depth.iter().map(|z| z.is_finite() && *z > 0.0).collect();
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Median of the valid depths.
    pub fn median_depth(&self) -> Option<f64> {
        let mut z: Vec<f64> = self
            .depth
            .iter()
            .zip(&self.valid)
            .filter_map(|(z, ok)| ok.then_some(*z))
            .collect();
        if z.is_empty() {
            return None;
        }
        z.sort_unstable_by(|a, b| a.total_cmp(b));
        let n = z.len();
        Some(if n % 2 == 1 {
            z[n / 2]
        } else {
            0.5 * (z[n / 2 - 1] + z[n / 2])
        })
    }

    fn check_size(&self, k: &Intrinsics) -> Result<(), SceneError> {
        if self.width != k.width || self.height != k.height {
            return Err(SceneError::SizeMismatch {
                what: "depth map",
                got_w: self.width,
                got_h: self.height,
                want_w: k.width,
                want_h: k.height,
            });
        }
        Ok(())
    }
}

/// Back-projected points on a (possibly subsampled) pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGrid {
    /// Columns and rows of the subsampled grid.
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl PointGrid {
    /// Full-resolution pixel `(i, j)` of grid cell `idx`.
    pub fn pixel(&self, idx: usize) -> (usize, usize) {
        ((idx % self.width) * self.stride, (idx / self.width) * self.stride)
    }

    /// An unstructured cloud stored as one row, every point valid.
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            width: points.len(),
            height: 1,
            stride: 1,
            valid: vec![true; points.len()],
            points,
        }
    }
}

/// `x = ((i - cx) z / fx, (j - cy) z / fy, z)` for every `stride`-th pixel in
/// each direction. Invalid pixels keep a zero point and a false mask.
pub fn backproject(depth: &DepthMap, k: &Intrinsics, stride: usize) -> Result<PointGrid, SceneError> {
    depth.check_size(k)?;
    let stride = stride.max(1);
    let (w, h) = (depth.width.div_ceil(stride), depth.height.div_ceil(stride));
    let mut points = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for j in (0..depth.height).step_by(stride) {
        for i in (0..depth.width).step_by(stride) {
            let idx = j * depth.width + i;
            if depth.valid[idx] {
                points.push(k.unproject(i as f64, j as f64, depth.depth[idx]));
                valid.push(true);
            } else {
                points.push(Vector3::zeros());
                valid.push(false);
            }
        }
    }
    Ok(PointGrid {
        width: w,
        height: h,
        stride,
        points,
        valid,
    })
}

/// Loads a 16-bit single-channel PNG and divides by `k.depth_scale`. Raw
/// zeros are invalid.
pub fn load_depth(path: &Path, k: &Intrinsics) -> Result<DepthMap, SceneError> {
    if !path.exists() {
        return Err(SceneError::Missing(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| SceneError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let buf = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(SceneError::BitDepth {
                path: path.to_path_buf(),
                found: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let depth = buf
        .into_raw()
        .into_iter()
        .map(|raw| if raw == 0 { 0.0 } else { f64::from(raw) / k.depth_scale })
        .collect();
    let map = DepthMap::new(w, h, depth)?;
    map.check_size(k)?;
    Ok(map)
}

/// Writes depths as a 16-bit PNG, rounding `z * depth_scale`. Invalid or
/// out-of-range depths become raw 0.
pub fn save_depth(path: &Path, depth: &DepthMap, k: &Intrinsics) -> Result<(), SceneError> {
    let raw: Vec<u16> = depth
        .depth
        .iter()
        .zip(&depth.valid)
        .map(|(z, ok)| {
            let r = (z * k.depth_scale).round();
            if *ok && r >= 1.0 && r <= f64::from(u16::MAX) {
                r as u16
            } else {
                0
            }
        })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width as u32, depth.height as u32, raw).expect("buffer size matches");
    img.save(path).map_err(|e| SceneError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Raw contents of a flow file: per-pixel displacement in meters, NaN where
/// invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlow {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl SceneFlow {
    /// Converts velocities to single precision, writing NaN where invalid.
    pub fn from_field(field: &PointFlowField) -> Self {
        let data = field
            .velocities
            .iter()
            .zip(&field.valid)
            .map(|(v, ok)| {
                if *ok {
                    [v.x as f32, v.y as f32, v.z as f32]
                } else {
                    [f32::NAN; 3]
                }
            })
            .collect();
        Self {
            width: field.width,
            height: field.height,
            data,
        }
    }

    pub fn is_valid_at(&self, idx: usize) -> bool {
        self.data[idx].iter().all(|c| c.is_finite())
    }

    /// Pairs the flow with back-projected points, sampling the flow at the
    /// grid's pixels. A pixel is valid when both the point and the flow are.
    pub fn to_field(&self, grid: &PointGrid) -> Result<PointFlowField, SceneError> {
        let (want_w, want_h) = (self.width.div_ceil(grid.stride), self.height.div_ceil(grid.stride));
        if grid.width != want_w || grid.height != want_h {
            return Err(SceneError::SizeMismatch {
                what: "flow",
                got_w: self.width,
                got_h: self.height,
                want_w: grid.width * grid.stride,
                want_h: grid.height * grid.stride,
            });
        }
        let n = grid.points.len();
        let mut velocities = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for idx in 0..n {
            let (i, j) = grid.pixel(idx);
            let src = j * self.width + i;
            let ok = grid.valid[idx] && self.is_valid_at(src);
            let d = self.data[src];
            velocities.push(if ok {
                Vector3::new(f64::from(d[0]), f64::from(d[1]), f64::from(d[2]))
            } else {
                Vector3::zeros()
            });
            valid.push(ok);
        }
        Ok(PointFlowField::new(grid.width, grid.height, grid.points.clone(), velocities, valid)
            .expect("buffers sized from the grid"))
    }
}

/// The bytes of a flow file: magic, little-endian `u32` width and height,
/// then three little-endian `f32` per pixel in row-major order.
pub fn encode_flow(flow: &SceneFlow) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(QSF_HEADER + 12 * flow.data.len());
    bytes.extend_from_slice(&QSF_MAGIC);
    bytes.extend_from_slice(&(flow.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for d in &flow.data {
        for c in d {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    bytes
}

pub fn write_flow(path: &Path, flow: &SceneFlow) -> Result<(), SceneError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&encode_flow(flow)).map_err(io_err(path))
}

pub fn read_flow(path: &Path) -> Result<SceneFlow, SceneError> {
    if !path.exists() {
        return Err(SceneError::Missing(path.to_path_buf()));
    }
    decode_flow(&fs::read(path).map_err(io_err(path))?)
}

/// Parses the bytes of a flow file.
pub fn decode_flow(bytes: &[u8]) -> Result<SceneFlow, SceneError> {
    if bytes.len() < QSF_HEADER {
        return Err(SceneError::Truncated {
            expected: QSF_HEADER,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != QSF_MAGIC {
        if magic[..3] == QSF_MAGIC[..3] {
            return Err(SceneError::UnsupportedVersion(magic[3] as char));
        }
        return Err(SceneError::BadMagic(magic));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 * width * height;
    let payload = &bytes[QSF_HEADER..];
    if payload.len() < expected {
        return Err(SceneError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(SceneError::TrailingBytes {
            extra: payload.len() - expected,
        });
    }
    let f = |o: usize| f32::from_le_bytes(payload[o..o + 4].try_into().unwrap());
    let data = (0..width * height)
        .map(|p| [f(12 * p), f(12 * p + 4), f(12 * p + 8)])
        .collect();
    Ok(SceneFlow { width, height, data })
}

/// Ground-truth motion for [`synth_flow`].
#[derive(Debug, Clone, PartialEq)]
pub enum SynthMotion {
    /// `v = L x + t - x` for the transform's linear block `L` and translation `t`.
    Finite(AffineTransform),
    /// `v = v_lin + V x` for the algebra element of the twist.
    Infinitesimal(Twist),
}

/// Exact flow of every valid point under a known motion.
pub fn synth_flow(grid: &PointGrid, motion: &SynthMotion) -> PointFlowField {
    let (lin, t, finite) = match motion {
        SynthMotion::Finite(g) => (g.linear(), g.translation(), true),
        SynthMotion::Infinitesimal(xi) => {
            let x = xi.hat();
            (x.fixed_view::<3, 3>(0, 0).into_owned(), xi.translation(), false)
        }
    };
    let velocities = grid
        .points
        .iter()
        .zip(&grid.valid)
        .map(|(x, ok)| match (ok, finite) {
            (false, _) => Vector3::zeros(),
            (true, true) => lin * x + t - x,
            (true, false) => t + lin * x,
        })
        .collect();
    PointFlowField::new(grid.width, grid.height, grid.points.clone(), velocities, grid.valid.clone())
        .expect("buffers sized from the grid")
}

/// One row of a TUM association file with its loaded depth.
#[derive(Debug, Clone, PartialEq)]
pub struct TumFrame {
    pub timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_timestamp: f64,
    pub depth_path: PathBuf,
    pub depth: DepthMap,
}

/// Reads an association file with lines `ts_rgb rgb_path ts_depth depth_path`
/// (paths relative to `dir`) and loads every depth map. Frames are returned
/// in timestamp order.
pub fn load_tum_sequence(dir: &Path, association: &Path, k: &Intrinsics) -> Result<Vec<TumFrame>, SceneError> {
    let assoc_path = if association.is_absolute() {
        association.to_path_buf()
    } else {
        dir.join(association)
    };
    let text = fs::read_to_string(&assoc_path).map_err(io_err(&assoc_path))?;
    let mut frames = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| SceneError::Parse { line: n + 1, message };
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        }
        let ts = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| parse_err(format!("bad timestamp {s:?}")))
        };
        let timestamp = ts(fields[0])?;
        let depth_timestamp = ts(fields[2])?;
        let depth_path = dir.join(fields[3]);
        let depth = load_depth(&depth_path, k)?;
        frames.push(TumFrame {
            timestamp,
            rgb_path: dir.join(fields[1]),
            depth_timestamp,
            depth_path,
            depth,
        });
    }
    frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::lie::{exp_rot, GroupTag};

    fn kinect() -> Intrinsics {
        Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480, 5000.0).unwrap()
    }

    fn small() -> Intrinsics {
        Intrinsics::new(50.0, 55.0, 7.5, 5.5, 16, 12, 5000.0).unwrap()
    }

    #[test]
    fn parses_intrinsics() {
        let text = "# camera\nfx = 525\nfy=525.0\ncx = 319.5\ncy = 239.5\nwidth = 640\nheight = 480\n";
        assert_eq!(Intrinsics::parse(text).unwrap(), kinect());
        assert_eq!(Intrinsics::parse(&kinect().to_key_values()).unwrap(), kinect());
        assert!(Intrinsics::parse("fx = 1\n").is_err());
        assert!(Intrinsics::parse("fx = -1\nfy = 1\ncx = 0\ncy = 0\nwidth = 1\nheight = 1").is_err());
        assert!(matches!(
            parse_key_values("a = 1\nnonsense\n"),
            Err(SceneError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn backprojects_principal_point_and_unit_tangent() {
        let k = Intrinsics::new(2.0, 3.0, 1.0, 1.0, 4, 3, 5000.0).unwrap();
        let mut z = vec![0.0; 12];
        z[4 + 1] = 2.0; // (cx, cy)
        z[4 + 3] = 1.0; // (cx + fx, cy)
        let grid = backproject(&DepthMap::new(4, 3, z).unwrap(), &k, 1).unwrap();
        assert_eq!(grid.points[5], Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(grid.points[7], Vector3::new(1.0, 0.0, 1.0));
        assert_eq!(grid.valid.iter().filter(|v| **v).count(), 2);
    }

    #[test]
    fn projection_round_trip() {
        let k = kinect();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let depth: Vec<f64> = (0..k.width * k.height).map(|_| rng.random_range(0.5..5.0)).collect();
        let map = DepthMap::new(k.width, k.height, depth).unwrap();
        let grid = backproject(&map, &k, 7).unwrap();
        for (idx, x) in grid.points.iter().enumerate() {
            let (i, j) = grid.pixel(idx);
            let (pi, pj) = k.project(x).unwrap();
            assert!((pi - i as f64).abs() <= 1e-9 && (pj - j as f64).abs() <= 1e-9);
        }
        assert_eq!(grid.width, 640usize.div_ceil(7));
        assert!(backproject(&DepthMap::new(2, 2, vec![1.0; 4]).unwrap(), &k, 1).is_err());
    }

    #[test]
    fn depth_png_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let k = small();
        let mut raw = vec![5000u16; k.width * k.height];
        raw[3] = 0;
        raw[4] = 12345;
        let path = dir.path().join("d.png");
        ImageBuffer::<Luma<u16>, _>::from_raw(16, 12, raw).unwrap().save(&path).unwrap();
        let d = load_depth(&path, &k).unwrap();
        assert_eq!(d.depth[0], 1.0);
        assert!(!d.valid[3]);
        assert_eq!(d.depth[4], 12345.0 / 5000.0);

        let copy = dir.path().join("copy.png");
        save_depth(&copy, &d, &k).unwrap();
        assert_eq!(load_depth(&copy, &k).unwrap(), d);

        let eight = dir.path().join("e.png");
        ImageBuffer::<Luma<u8>, _>::from_raw(16, 12, vec![7u8; 192]).unwrap().save(&eight).unwrap();
        assert!(matches!(load_depth(&eight, &k), Err(SceneError::BitDepth { .. })));

        let wrong = Intrinsics { width: 8, ..k };
        assert!(matches!(load_depth(&path, &wrong), Err(SceneError::SizeMismatch { .. })));
        assert!(matches!(
            load_depth(&dir.path().join("none.png"), &k),
            Err(SceneError::Missing(_))
        ));
    }

    fn random_flow(rng: &mut ChaCha8Rng, w: usize, h: usize) -> SceneFlow {
        let data = (0..w * h)
            .map(|_| {
                if rng.random_bool(0.1) {
                    [f32::NAN; 3]
                } else {
                    [rng.random(), rng.random(), rng.random::<f32>() - 0.5]
                }
            })
            .collect();
        SceneFlow { width: w, height: h, data }
    }

    #[test]
    fn flow_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let flow = random_flow(&mut rng, 9, 7);
        let path = dir.path().join("f.qsf");
        write_flow(&path, &flow).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 12 + 12 * 63);
        let back = read_flow(&path).unwrap();
        let bits = |f: &SceneFlow| {
            f.data
                .iter()
                .flat_map(|d| d.map(f32::to_bits))
                .collect::<Vec<u32>>()
        };
        assert_eq!(bits(&back), bits(&flow));
        write_flow(&dir.path().join("g.qsf"), &back).unwrap();
        assert_eq!(fs::read(dir.path().join("g.qsf")).unwrap(), bytes);
    }

    #[test]
    fn flow_header_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let flow = random_flow(&mut rng, 3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.qsf");
        write_flow(&path, &flow).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut v2 = bytes.clone();
        v2[3] = b'2';
        assert!(matches!(decode_flow(&v2), Err(SceneError::UnsupportedVersion('2'))));
        let mut junk = bytes.clone();
        junk[..4].copy_from_slice(b"PNG!");
        assert!(matches!(decode_flow(&junk), Err(SceneError::BadMagic(_))));
        assert!(matches!(
            decode_flow(&bytes[..bytes.len() - 1]),
            Err(SceneError::Truncated { expected: 72, found: 71 })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_flow(&long), Err(SceneError::TrailingBytes { extra: 1 })));
    }

    #[test]
    fn synth_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 2.0))
            .collect();
        let grid = PointGrid::from_points(pts);
        let id = synth_flow(&grid, &SynthMotion::Finite(AffineTransform::identity(GroupTag::Se3)));
        assert!(id.velocities.iter().all(|v| *v == Vector3::zeros()));
        let d = Vector3::new(0.01, -0.02, 0.03);
        let tr = synth_flow(
            &grid,
            &SynthMotion::Finite(AffineTransform::translation_only(GroupTag::Se3, &d)),
        );
        for v in &tr.velocities {
            assert_relative_eq!(*v, d, epsilon = 1e-15);
        }
    }

    #[test]
    fn synth_infinitesimal_is_rigid_kinematics() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let v = Vector3::new(0.1, -0.2, 0.05);
        let w = Vector3::new(0.02, 0.3, -0.1);
        let xi = Twist::from_parts(GroupTag::Se3, &v, w.as_slice()).unwrap();
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let field = synth_flow(&PointGrid::from_points(pts.clone()), &SynthMotion::Infinitesimal(xi));
        for (x, vel) in pts.iter().zip(&field.velocities) {
            assert_relative_eq!(*vel, v + w.cross(x), epsilon = 1e-14);
        }
        // finite motion agrees with the rotated point
        let r = exp_rot(&w);
        let g = AffineTransform::from_parts_unchecked(GroupTag::Se3, &r, &v);
        let fin = synth_flow(&PointGrid::from_points(pts.clone()), &SynthMotion::Finite(g));
        for (x, vel) in pts.iter().zip(&fin.velocities) {
            assert_relative_eq!(*vel, r * x + v - x, epsilon = 1e-14);
        }
    }

    #[test]
    fn flow_pairs_with_strided_grid() {
        let k = small();
        let map = DepthMap::new(16, 12, vec![2.0; 192]).unwrap();
        let grid = backproject(&map, &k, 3).unwrap();
        let mut data = vec![[0.5f32, 0.0, 0.0]; 192];
        data[3] = [f32::NAN; 3]; // pixel (3, 0) is grid cell 1
        let flow = SceneFlow { width: 16, height: 12, data };
        let field = flow.to_field(&grid).unwrap();
        assert_eq!((field.width, field.height), (6, 4));
        assert!(!field.valid[1]);
        assert_eq!(field.valid_count(), 23);
        let bad = backproject(&map, &k, 1).unwrap();
        let short = SceneFlow { width: 8, height: 12, data: vec![[0.0; 3]; 96] };
        assert!(short.to_field(&bad).is_err());
    }

    #[test]
    fn tum_sequence_sorted_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let k = small();
        fs::create_dir(dir.path().join("depth")).unwrap();
        for (n, raw) in [(0, 5000u16), (1, 10000), (2, 2500)] {
            ImageBuffer::<Luma<u16>, _>::from_raw(16, 12, vec![raw; 192])
                .unwrap()
                .save(dir.path().join(format!("depth/{n}.png")))
                .unwrap();
        }
        let assoc = "# timestamp rgb timestamp depth\n\
                     1305031102.2 rgb/2.png 1305031102.21 depth/2.png\n\
                     1305031102.0 rgb/0.png 1305031102.01 depth/0.png\n\
                     \n\
                     1305031102.1 rgb/1.png 1305031102.11 depth/1.png\n";
        fs::write(dir.path().join("assoc.txt"), assoc).unwrap();
        let frames = load_tum_sequence(dir.path(), Path::new("assoc.txt"), &k).unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].depth.depth[0], 1.0);
        assert_eq!(frames[1].depth.depth[0], 2.0);
        assert_eq!(frames[2].depth.depth[0], 0.5);
        assert!(frames.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        assert!(frames[0].rgb_path.ends_with("rgb/0.png"));

        fs::write(dir.path().join("bad.txt"), "1.0 rgb/0.png 1.0 depth/9.png\n").unwrap();
        match load_tum_sequence(dir.path(), Path::new("bad.txt"), &k) {
            Err(SceneError::Missing(p)) => assert!(p.ends_with("depth/9.png")),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(dir.path().join("short.txt"), "# c\n1.0 rgb/0.png\n").unwrap();
        assert!(matches!(
            load_tum_sequence(dir.path(), Path::new("short.txt"), &k),
            Err(SceneError::Parse { line: 2, .. })
        ));
    }
}
