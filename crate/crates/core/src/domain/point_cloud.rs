use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub position_m: Vector3<f64>,
    pub radial_velocity_mps: f64,
    pub intensity: f64,
}

/// Sparse set of radar detections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Detection>,
}

impl PointCloud {
    pub fn new(points: Vec<Detection>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !(p.intensity >= 0.0)) {
            return Err(Error::Domain(format!("point {i} has negative intensity")));
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One detection per line: `x y z v_r intensity`, 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            writeln!(
                out,
                "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e}",
                p.position_m.x, p.position_m.y, p.position_m.z, p.radial_velocity_mps, p.intensity
            )
            .unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let nums: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            if nums.len() != 5 {
                return Err(Error::Config(format!(
                    "line {}: expected 5 columns, got {}",
                    lineno + 1,
                    nums.len()
                )));
            }
            points.push(Detection {
                position_m: Vector3::new(nums[0], nums[1], nums[2]),
                radial_velocity_mps: nums[3],
                intensity: nums[4],
            });
        }
        PointCloud::new(points)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
