use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_SKELETON: &str = include_str!("../../assets/skeleton_14.toml");

/// Kinematic tree with canonical bone lengths and T-pose coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    joint_names: Vec<String>,
    edges: Vec<(usize, usize)>,
    bone_lengths_m: Vec<f64>,
    tpose_positions_m: Vec<Vector3<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    joint_names: Vec<String>,
    edges: Vec<[usize; 2]>,
    bone_lengths_m: Vec<f64>,
    tpose_positions_m: Vec<[f64; 3]>,
}

impl Skeleton {
    /// Validates that `edges` form a spanning tree and that bone lengths match
    /// the T-pose within 1e-6 m.
    pub fn new(
        joint_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        bone_lengths_m: Vec<f64>,
        tpose_positions_m: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if n < 2 {
            return Err(Error::Config(format!("skeleton needs >= 2 joints, got {n}")));
        }
        if tpose_positions_m.len() != n {
            return Err(Error::Config(format!(
                "skeleton has {n} names but {} T-pose positions",
                tpose_positions_m.len()
            )));
        }
        if edges.len() != n - 1 {
            return Err(Error::Config(format!(
                "skeleton over {n} joints needs {} edges for a tree, got {}",
                n - 1,
                edges.len()
            )));
        }
        if bone_lengths_m.len() != edges.len() {
            return Err(Error::Config(format!(
                "{} bone lengths for {} edges",
                bone_lengths_m.len(),
                edges.len()
            )));
        }
        // Union-find: n-1 edges without a cycle span all n joints.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Config(format!("invalid edge ({i}, {j})")));
            }
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri == rj {
                return Err(Error::Config(format!("edge ({i}, {j}) closes a cycle")));
            }
            parent[ri] = rj;
        }
        for (e, (&(i, j), &len)) in edges.iter().zip(&bone_lengths_m).enumerate() {
            let actual = (tpose_positions_m[i] - tpose_positions_m[j]).norm();
            if !(len.is_finite() && len > 0.0) || (actual - len).abs() > 1e-6 {
                return Err(Error::Config(format!(
                    "bone {e} ({}-{}) length {len} disagrees with T-pose distance {actual}",
                    joint_names[i], joint_names[j]
                )));
            }
        }
        Ok(Skeleton {
            joint_names,
            edges,
            bone_lengths_m,
            tpose_positions_m,
        })
    }

    /// The shipped 14-joint skeleton rooted at the pelvis.
    pub fn default_skeleton() -> Self {
        Skeleton::from_toml_str(DEFAULT_SKELETON).expect("shipped skeleton is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: SkeletonDoc =
            toml::from_str(text).map_err(|e| Error::Config(format!("skeleton: {e}")))?;
        Skeleton::new(
            doc.joint_names,
            doc.edges.into_iter().map(|[i, j]| (i, j)).collect(),
            doc.bone_lengths_m,
            doc.tpose_positions_m.into_iter().map(Vector3::from).collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Skeleton::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = SkeletonDoc {
            joint_names: self.joint_names.clone(),
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
            bone_lengths_m: self.bone_lengths_m.clone(),
            tpose_positions_m: self.tpose_positions_m.iter().map(|p| [p.x, p.y, p.z]).collect(),
        };
        toml::to_string(&doc).expect("skeleton serializes")
    }

    pub fn len(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_names.is_empty()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn bone_lengths(&self) -> &[f64] {
        &self.bone_lengths_m
    }

    pub fn tpose(&self) -> &[Vector3<f64>] {
        &self.tpose_positions_m
    }

    /// Root joint: the pelvis when present, otherwise joint 0.
    pub fn root(&self) -> usize {
        self.joint_index("pelvis").unwrap_or(0)
    }
}
