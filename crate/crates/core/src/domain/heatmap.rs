use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MGSH";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

/// Axis layout of a range × Doppler × azimuth grid.
///
/// Bin `k` along an axis is centered at `origin + (k + 0.5) * res`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapGrid {
    pub range_bins: usize,
    pub doppler_bins: usize,
    pub angle_bins: usize,
    pub range_res_m: f64,
    pub doppler_res_mps: f64,
    pub angle_res_rad: f64,
    pub range_min_m: f64,
    pub doppler_min_mps: f64,
    pub angle_min_rad: f64,
}

impl Default for HeatmapGrid {
    /// 32 × 16 × 16 grid with bin centers at 3 m range, 0 m/s and 0 rad.
    fn default() -> Self {
        HeatmapGrid {
            range_bins: 32,
            doppler_bins: 16,
            angle_bins: 16,
            range_res_m: 0.05,
            doppler_res_mps: 0.25,
            angle_res_rad: 0.06,
            range_min_m: 2.175,
            doppler_min_mps: -2.125,
            angle_min_rad: -0.51,
        }
    }
}

/// One of the three heatmap axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Range,
    Doppler,
    Angle,
}

impl HeatmapGrid {
    pub fn validate(&self) -> Result<()> {
        if self.range_bins == 0 || self.doppler_bins == 0 || self.angle_bins == 0 {
            return Err(Error::Config("grid bin counts must be >= 1".into()));
        }
        for (name, res) in [
            ("range_res_m", self.range_res_m),
            ("doppler_res_mps", self.doppler_res_mps),
            ("angle_res_rad", self.angle_res_rad),
        ] {
            if !(res.is_finite() && res > 0.0) {
                return Err(Error::Config(format!("grid.{name} must be > 0, got {res}")));
            }
        }
        for (name, origin) in [
            ("range_min_m", self.range_min_m),
            ("doppler_min_mps", self.doppler_min_mps),
            ("angle_min_rad", self.angle_min_rad),
        ] {
            if !origin.is_finite() {
                return Err(Error::Config(format!("grid.{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.range_bins * self.doppler_bins * self.angle_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.range_bins, self.doppler_bins, self.angle_bins)
    }

    /// Flat row-major index, angle innermost.
    #[inline]
    pub fn index(&self, k: usize, m: usize, n: usize) -> usize {
        (k * self.doppler_bins + m) * self.angle_bins + n
    }

    /// Inverse of [`index`](Self::index).
    #[inline]
    pub fn unflatten(&self, flat: usize) -> (usize, usize, usize) {
        let n = flat % self.angle_bins;
        let rest = flat / self.angle_bins;
        (rest / self.doppler_bins, rest % self.doppler_bins, n)
    }

    fn axis(&self, axis: Axis) -> (usize, f64, f64) {
        match axis {
            Axis::Range => (self.range_bins, self.range_min_m, self.range_res_m),
            Axis::Doppler => (self.doppler_bins, self.doppler_min_mps, self.doppler_res_mps),
            Axis::Angle => (self.angle_bins, self.angle_min_rad, self.angle_res_rad),
        }
    }

    pub fn center_of(&self, axis: Axis, k: usize) -> f64 {
        let (_, origin, res) = self.axis(axis);
        origin + (k as f64 + 0.5) * res
    }

    /// Bin containing `value`, or `None` outside the axis coverage.
    pub fn bin_of(&self, axis: Axis, value: f64) -> Option<usize> {
        let (bins, origin, res) = self.axis(axis);
        let pos = ((value - origin) / res).floor();
        if pos >= 0.0 && pos < bins as f64 {
            Some(pos as usize)
        } else {
            None
        }
    }

    /// Continuous bin coordinate: integer values land on bin centers.
    #[inline]
    pub fn bin_coord(&self, axis: Axis, value: f64) -> f64 {
        let (_, origin, res) = self.axis(axis);
        (value - origin) / res - 0.5
    }

    /// Closed interval spanned by the axis.
    pub fn coverage(&self, axis: Axis) -> (f64, f64) {
        let (bins, origin, res) = self.axis(axis);
        (origin, origin + bins as f64 * res)
    }

    pub fn range_center(&self, k: usize) -> f64 {
        self.center_of(Axis::Range, k)
    }

    pub fn doppler_center(&self, m: usize) -> f64 {
        self.center_of(Axis::Doppler, m)
    }

    pub fn angle_center(&self, n: usize) -> f64 {
        self.center_of(Axis::Angle, n)
    }
}

/// Dense non-negative intensity grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    grid: HeatmapGrid,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(grid: HeatmapGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "heatmap expects {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!(
                "heatmap value at flat index {bad} is {} (must be finite and >= 0)",
                values[bad]
            )));
        }
        Ok(Heatmap { grid, values })
    }

    pub fn zeros(grid: HeatmapGrid) -> Self {
        Heatmap {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    /// Caller guarantees the values are finite and non-negative.
    pub(crate) fn from_raw(grid: HeatmapGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Heatmap { grid, values }
    }

    pub fn grid(&self) -> &HeatmapGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, k: usize, m: usize, n: usize) -> f64 {
        self.values[self.grid.index(k, m, n)]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Flat index of the largest value (lowest index among ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// Multiplies every value by `c >= 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Heatmap::new(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    pub fn check_same_grid(&self, other: &Heatmap) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape(format!(
                "heatmap grids differ: {:?} vs {:?}",
                self.grid.shape(),
                other.grid.shape()
            )));
        }
        Ok(())
    }

    /// Range profile: sum over Doppler and angle.
    pub fn range_profile(&self) -> Vec<f64> {
        let (r, v, a) = self.grid.shape();
        (0..r)
            .map(|k| self.values[k * v * a..(k + 1) * v * a].iter().sum())
            .collect()
    }

    pub fn doppler_profile(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.doppler_bins];
        for (i, &x) in self.values.iter().enumerate() {
            out[self.grid.unflatten(i).1] += x;
        }
        out
    }

    pub fn angle_profile(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.angle_bins];
        for (i, &x) in self.values.iter().enumerate() {
            out[i % self.grid.angle_bins] += x;
        }
        out
    }
}

/// Path of the JSON axis-metadata sidecar for a heatmap file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Serializes a heatmap into the `MGSH` byte layout.
pub fn encode_heatmap(h: &Heatmap) -> Vec<u8> {
    let (r, v, a) = h.grid.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * h.values.len());
    out.extend_from_slice(MAGIC);
    for word in [VERSION, r as u32, v as u32, a as u32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for &x in &h.values {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

/// Writes `h` to `path` and its axis metadata to `<path>.meta.json`.
pub fn heatmap_write(h: &Heatmap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_heatmap(h);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    let meta = meta_path(path);
    let json = serde_json::to_string_pretty(&h.grid).expect("grid serializes");
    fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))?;
    Ok(())
}

/// Reads a heatmap written by [`heatmap_write`].
pub fn heatmap_read(path: impl AsRef<Path>) -> Result<Heatmap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "file shorter than MGSH header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected MGSH"));
    }
    let word = |i: usize| {
        let off = 4 + 4 * i;
        u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap())
    };
    let version = word(0);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let (r, v, a) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let payload = &bytes[HEADER_LEN..];
    let expected = r * v * a;
    if payload.len() != 4 * expected {
        return Err(Error::format(
            path,
            format!(
                "header declares {r}x{v}x{a} = {expected} values but payload holds {} bytes",
                payload.len()
            ),
        ));
    }
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta)
        .map_err(|e| Error::format(path, format!("missing meta sidecar {}: {e}", meta.display())))?;
    let grid: HeatmapGrid = serde_json::from_str(&text)
        .map_err(|e| Error::format(&meta, format!("invalid grid metadata: {e}")))?;
    if grid.shape() != (r, v, a) {
        return Err(Error::format(
            path,
            format!("sidecar shape {:?} disagrees with header {:?}", grid.shape(), (r, v, a)),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Heatmap::new(grid, values).map_err(|e| Error::format(path, e.to_string()))
}
