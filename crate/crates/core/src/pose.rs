//! Keypoint annotations and their Gaussian heatmap encoding.
//!
//! A pose is 18 joints in the OpenPose/COCO-18 ordering. Each joint becomes
//! one heatmap channel `exp(-|p - k|^2 / sigma^2)` over every pixel `p`,
//! with pixel centres at integer zero-indexed coordinates. Joints that are
//! not visible produce an all-zero channel.

use std::fmt::Write as _;
use std::path::Path;

use pona_tensor::ndarray::{concatenate, s, Array3, Axis};

use crate::error::{PonaError, Result};

pub const NUM_JOINTS: usize = 18;

/// Default heatmap spread in pixels.
pub const DEFAULT_SIGMA: f64 = 6.0;

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

pub const NOSE: usize = 0;
pub const NECK: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Joint {
    pub fn visible(x: f64, y: f64) -> Self {
        Self { x, y, visible: true }
    }

    /// The `(-1, -1, 0)` placeholder for a missing joint.
    pub fn missing() -> Self {
        Self {
            x: -1.0,
            y: -1.0,
            visible: false,
        }
    }
}

/// 18 joints plus the size of the image they were annotated on.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    joints: [Joint; NUM_JOINTS],
    height: usize,
    width: usize,
}

impl KeypointSet {
    /// Validates that every visible joint lies inside the image.
    pub fn new(joints: [Joint; NUM_JOINTS], height: usize, width: usize) -> Result<Self> {
        for (index, j) in joints.iter().enumerate() {
            if j.visible {
                let inside = j.x.is_finite()
                    && j.y.is_finite()
                    && j.x >= 0.0
                    && j.y >= 0.0
                    && j.x < width as f64
                    && j.y < height as f64;
                if !inside {
                    return Err(PonaError::JointOutOfBounds {
                        index,
                        name: JOINT_NAMES[index],
                        x: j.x,
                        y: j.y,
                        width,
                        height,
                    });
                }
            }
        }
        Ok(Self {
            joints,
            height,
            width,
        })
    }

    pub fn from_slice(joints: &[Joint], height: usize, width: usize) -> Result<Self> {
        let joints: [Joint; NUM_JOINTS] = joints.try_into().map_err(|_| PonaError::JointCount {
            expected: NUM_JOINTS,
            found: joints.len(),
        })?;
        Self::new(joints, height, width)
    }

    pub fn joints(&self) -> &[Joint; NUM_JOINTS] {
        &self.joints
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Shifts every visible joint; joints pushed off the image become missing.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut joints = self.joints;
        for j in joints.iter_mut().filter(|j| j.visible) {
            let (x, y) = (j.x + dx, j.y + dy);
            if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
                *j = Joint::visible(x, y);
            } else {
                *j = Joint::missing();
            }
        }
        Self { joints, ..*self }
    }
}

/// Per-joint Gaussian response maps, stored channel-first as `[18, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseHeatmap {
    pub data: Array3<f64>,
    pub sigma: f64,
}

impl PoseHeatmap {
    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}

/// Dense heatmap encoding over every pixel.
pub fn encode_pose(keypoints: &KeypointSet, sigma: f64) -> Result<PoseHeatmap> {
    encode_pose_truncated(keypoints, sigma, None)
}

/// As [`encode_pose`], but responses farther than `radius` pixels from the
/// joint are set to zero when a radius is given.
pub fn encode_pose_truncated(keypoints: &KeypointSet, sigma: f64, radius: Option<f64>) -> Result<PoseHeatmap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PonaError::InvalidSigma(sigma));
    }
    let (h, w) = (keypoints.height, keypoints.width);
    let mut data = Array3::zeros((NUM_JOINTS, h, w));
    let inv = 1.0 / (sigma * sigma);
    let cutoff = radius.map(|r| r * r);
    for (c, joint) in keypoints.joints.iter().enumerate() {
        if !joint.visible {
            continue;
        }
        let mut plane = data.index_axis_mut(Axis(0), c);
        for ((y, x), v) in plane.indexed_iter_mut() {
            let dx = x as f64 - joint.x;
            let dy = y as f64 - joint.y;
            let d2 = dx * dx + dy * dy;
            if cutoff.is_some_and(|c| d2 > c) {
                continue;
            }
            *v = (-d2 * inv).exp();
        }
    }
    Ok(PoseHeatmap { data, sigma })
}

/// Depth concatenation `[condition; target]` into a 36-channel array.
pub fn concat_pose_pair(condition: &PoseHeatmap, target: &PoseHeatmap) -> Result<Array3<f64>> {
    if condition.data.shape() != target.data.shape() {
        return Err(PonaError::shape(
            "pose pair",
            condition.data.shape(),
            target.data.shape(),
        ));
    }
    Ok(concatenate(Axis(0), &[condition.data.view(), target.data.view()]).expect("shapes checked"))
}

/// Splits a 36-channel pose pair back into its two halves.
pub fn split_pose_pair(pair: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
    (
        pair.slice(s![..NUM_JOINTS, .., ..]).to_owned(),
        pair.slice(s![NUM_JOINTS.., .., ..]).to_owned(),
    )
}

/// One line of a keypoint annotation file: an image path and its joints.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image: String,
    pub joints: [Joint; NUM_JOINTS],
}

impl AnnotationRecord {
    pub fn to_keypoints(&self, height: usize, width: usize) -> Result<KeypointSet> {
        KeypointSet::new(self.joints, height, width)
    }
}

/// Parses the text annotation format:
///
/// ```text
/// image_path,x0,y0,v0,x1,y1,v1,...,x17,y17,v17
/// ```
///
/// `v` is 0 or 1; missing joints are written `-1,-1,0`. Blank lines and
/// lines starting with `#` are skipped. Errors carry the 1-based line.
pub fn parse_annotations(text: &str, source: &Path) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| PonaError::Parse {
            path: source.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 1 + 3 * NUM_JOINTS {
            return Err(err(format!(
                "expected {} fields, found {}",
                1 + 3 * NUM_JOINTS,
                fields.len()
            )));
        }
        let mut joints = [Joint::missing(); NUM_JOINTS];
        for (j, joint) in joints.iter_mut().enumerate() {
            let num = |k: usize| -> Result<f64> {
                fields[1 + 3 * j + k]
                    .parse::<f64>()
                    .map_err(|e| err(format!("joint {j} field {k}: {e}")))
            };
            let (x, y) = (num(0)?, num(1)?);
            let visible = match fields[3 + 3 * j] {
                "1" => true,
                "0" => false,
                other => return Err(err(format!("joint {j}: visibility must be 0 or 1, got `{other}`"))),
            };
            *joint = if visible { Joint::visible(x, y) } else { Joint::missing() };
        }
        out.push(AnnotationRecord {
            image: fields[0].to_string(),
            joints,
        });
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| PonaError::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.image);
        for j in &r.joints {
            if j.visible {
                let _ = write!(out, ",{},{},1", j.x, j.y);
            } else {
                out.push_str(",-1,-1,0");
            }
        }
        out.push('\n');
    }
    out
}
