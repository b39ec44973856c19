//! Camera model, pinhole projection, pixel boxes and instance masks.
//!
//! Pixel convention: integer pixel `(i, j)` covers `[i, i+1) x [j, j+1)`, so
//! its center sits at `(i + 0.5, j + 0.5)`. Boxes derived from masks are
//! inclusive of all member pixels, which keeps mask/box/area arithmetic exact.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the camera plane cannot be projected.
pub const BEHIND_CAMERA_EPS: f64 = 1e-9;

/// Tolerance used when validating rotations supplied by callers.
pub const ROTATION_TOL: f64 = 1e-9;

pub type InstanceId = u32;

/// Rotation supplied either as a unit quaternion `[w, x, y, z]` or as a
/// row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    Quaternion([f64; 4]),
    Matrix([[f64; 3]; 3]),
}

impl Orientation {
    pub fn to_unit_quaternion(&self) -> Result<UnitQuaternion<f64>> {
        match *self {
            Orientation::Quaternion([w, x, y, z]) => {
                let q = nalgebra::Quaternion::new(w, x, y, z);
                let norm = q.norm();
                if !norm.is_finite() || (norm - 1.0).abs() > ROTATION_TOL {
                    return Err(Error::Config(format!(
                        "quaternion norm {norm} is not 1 within {ROTATION_TOL}"
                    )));
                }
                // Keep already-normalized input bit-exact so files re-serialize identically.
                if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
                    Ok(UnitQuaternion::new_unchecked(q))
                } else {
                    Ok(UnitQuaternion::from_quaternion(q))
                }
            }
            Orientation::Matrix(rows) => {
                let m = Matrix3::from_fn(|r, c| rows[r][c]);
                let gram = m * m.transpose();
                let ortho_err = (gram - Matrix3::identity()).abs().max();
                let det = m.determinant();
                if !ortho_err.is_finite() || ortho_err > ROTATION_TOL {
                    return Err(Error::Config(format!(
                        "rotation matrix is not orthonormal (max deviation {ortho_err:e})"
                    )));
                }
                if (det - 1.0).abs() > ROTATION_TOL {
                    return Err(Error::Config(format!(
                        "rotation matrix determinant is {det}, expected +1"
                    )));
                }
                Ok(UnitQuaternion::from_rotation_matrix(
                    &Rotation3::from_matrix_unchecked(m),
                ))
            }
        }
    }
}

/// Ideal pinhole camera with a world pose.
///
/// `orientation` maps world-frame directions into the camera frame
/// (x right, y down, z forward), so `p_cam = R * (p_world - position)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraModel {
    position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl CameraModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        position: Vector3<f64>,
        orientation: Orientation,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let orientation = orientation.to_unit_quaternion()?;
        Self::from_parts(position, orientation, fx, fy, cx, cy, width, height)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        position: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite()) || !position.iter().all(|c| c.is_finite()) {
            return Err(Error::Config("camera parameters must be finite".into()));
        }
        Ok(Self {
            position,
            orientation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn position(&self) -> Vector3<f64> {
        self.position
    }

    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.orientation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.orientation.to_rotation_matrix().matrix()
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// World point expressed in the camera frame.
    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * (point - self.position)
    }

    /// Optical axis direction in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.orientation.inverse() * Vector3::z()
    }

    /// World-frame ray through image coordinates `(u, v)`, scaled so that the
    /// ray parameter equals camera-frame depth.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let d_cam = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.orientation.inverse() * d_cam
    }

    /// Inverse of [`project`] for a known depth.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        self.position + self.ray_direction(u, v) * depth
    }
}

/// Pinhole projection. Coordinates outside the image are still returned.
pub fn project(point: &Vector3<f64>, cam: &CameraModel) -> Result<Projection> {
    if !point.iter().all(|c| c.is_finite()) {
        return Err(Error::Config("cannot project a non-finite point".into()));
    }
    let p = cam.to_camera_frame(point);
    if p.z <= BEHIND_CAMERA_EPS {
        return Err(Error::BehindCamera { depth: p.z });
    }
    Ok(Projection {
        u: cam.fx * p.x / p.z + cam.cx,
        v: cam.fy * p.y / p.z + cam.cy,
        depth: p.z,
    })
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    position: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quaternion: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[[f64; 3]; 3]>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        let orientation = match (r.quaternion, r.rotation) {
            (Some(q), None) => Orientation::Quaternion(q),
            (None, Some(m)) => Orientation::Matrix(m),
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "camera has both `quaternion` and `rotation`".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "camera needs `quaternion` or `rotation`".into(),
                ))
            }
        };
        CameraModel::new(
            Vector3::from(r.position),
            orientation,
            r.fx,
            r.fy,
            r.cx,
            r.cy,
            r.width,
            r.height,
        )
    }
}

impl From<CameraModel> for CameraRecord {
    fn from(c: CameraModel) -> Self {
        let q = c.orientation.quaternion();
        CameraRecord {
            position: [c.position.x, c.position.y, c.position.z],
            quaternion: Some([q.w, q.i, q.j, q.k]),
            rotation: None,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

/// Axis-aligned pixel box: top-left corner plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for PixelBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        PixelBox { x, y, w, h }
    }
}

impl From<PixelBox> for [f64; 4] {
    fn from(b: PixelBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl PixelBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        PixelBox { x, y, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.w >= 0.0 && self.h >= 0.0 && [self.x, self.y, self.w, self.h].iter().all(|c| c.is_finite())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn max_dim(&self) -> f64 {
        self.w.max(self.h)
    }

    pub fn intersection_area(&self, other: &PixelBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn contains_point(&self, u: f64, v: f64) -> bool {
        u >= self.x && u <= self.right() && v >= self.y && v <= self.bottom()
    }

    /// Clip to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> PixelBox {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = self.right().clamp(0.0, width);
        let y1 = self.bottom().clamp(0.0, height);
        PixelBox::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Per-pixel instance identifiers, row-major, `0` meaning background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMask {
    width: u32,
    height: u32,
    ids: Vec<InstanceId>,
}

impl InstanceMask {
    pub fn new(width: u32, height: u32, ids: Vec<InstanceId>) -> Result<Self> {
        if ids.len() != width as usize * height as usize {
            return Err(Error::Config(format!(
                "mask of {width}x{height} needs {} ids, got {}",
                width as usize * height as usize,
                ids.len()
            )));
        }
        Ok(Self { width, height, ids })
    }

    pub fn background(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ids: vec![0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn ids(&self) -> &[InstanceId] {
        &self.ids
    }

    pub fn get(&self, x: u32, y: u32) -> InstanceId {
        self.ids[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, id: InstanceId) {
        self.ids[y as usize * self.width as usize + x as usize] = id;
    }

    /// Id at continuous image coordinates, or `None` outside the frame.
    pub fn id_at(&self, u: f64, v: f64) -> Option<InstanceId> {
        if !(u.is_finite() && v.is_finite()) {
            return None;
        }
        let (i, j) = (u.floor(), v.floor());
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some(self.get(i as u32, j as u32))
    }

    pub fn pixel_count(&self, id: InstanceId) -> usize {
        self.ids.iter().filter(|&&p| p == id).count()
    }

    /// Distinct nonzero ids in ascending order.
    pub fn instance_ids(&self) -> Vec<InstanceId> {
        let mut ids: Vec<InstanceId> = self.ids.iter().copied().filter(|&p| p != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Tight boxes and pixel counts of every instance, in ascending id order.
    pub fn instance_boxes(&self) -> Vec<(InstanceId, PixelBox, usize)> {
        use std::collections::BTreeMap;
        let mut ext: BTreeMap<InstanceId, (u32, u32, u32, u32, usize)> = BTreeMap::new();
        for (k, &id) in self.ids.iter().enumerate() {
            if id == 0 {
                continue;
            }
            let x = (k % self.width as usize) as u32;
            let y = (k / self.width as usize) as u32;
            let e = ext.entry(id).or_insert((x, y, x, y, 0));
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
            e.4 += 1;
        }
        ext.into_iter()
            .map(|(id, (x0, y0, x1, y1, n))| (id, extent_box(x0, y0, x1, y1), n))
            .collect()
    }
}

fn extent_box(x0: u32, y0: u32, x1: u32, y1: u32) -> PixelBox {
    PixelBox::new(
        x0 as f64,
        y0 as f64,
        (x1 - x0 + 1) as f64,
        (y1 - y0 + 1) as f64,
    )
}

/// Tightest box containing every pixel labelled `id`.
pub fn mask_to_box(mask: &InstanceMask, id: InstanceId) -> Result<PixelBox> {
    let mut extent: Option<(u32, u32, u32, u32)> = None;
    for y in 0..mask.height {
        let row = &mask.ids[y as usize * mask.width as usize..(y as usize + 1) * mask.width as usize];
        for (x, &p) in row.iter().enumerate() {
            if p != id {
                continue;
            }
            let x = x as u32;
            extent = Some(match extent {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    let (x0, y0, x1, y1) = extent.ok_or(Error::MissingInstance(id))?;
    Ok(extent_box(x0, y0, x1, y1))
}
