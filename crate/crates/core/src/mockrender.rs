//! Desk-scale stand-in renderer: ray-casts per-instance ellipsoids into an
//! instance mask and a depth map. No shading; only geometry-derived labels.

use std::io::{Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, InstanceId, InstanceMask};
use crate::keypoints::{group_centroid, NUM_GROUPS};
use crate::scenelayout::{SceneInstance, SceneSpec};
use crate::standin;

const HIT_EPS: f64 = 1e-9;

/// Ellipsoid with orthonormal `axes` (columns) and per-axis `radii`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: Vector3<f64>,
    pub axes: Matrix3<f64>,
    pub radii: Vector3<f64>,
}

impl Ellipsoid {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Ellipsoid {
            center,
            axes: Matrix3::identity(),
            radii: Vector3::repeat(radius),
        }
    }

    /// Elongated ellipsoid enclosing both endpoints with `radius` to spare.
    pub fn segment(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Self {
        let axis = b - a;
        let len = axis.norm();
        let Some(e1) = axis.try_normalize(1e-12) else {
            return Self::sphere(a, radius);
        };
        let helper = if e1.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e2 = e1.cross(&helper).normalize();
        let e3 = e1.cross(&e2);
        Ellipsoid {
            center: (a + b) * 0.5,
            axes: Matrix3::from_columns(&[e1, e2, e3]),
            radii: Vector3::new(len * 0.5 + radius, radius, radius),
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.radii.max()
    }

    /// Smallest positive ray parameter where `origin + t * dir` meets the
    /// surface.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let o = (self.axes.transpose() * (origin - self.center)).component_div(&self.radii);
        let d = (self.axes.transpose() * dir).component_div(&self.radii);
        let a = d.dot(&d);
        let b = 2.0 * o.dot(&d);
        let c = o.dot(&o) - 1.0;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 || a <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let t0 = (-b - sq) / (2.0 * a);
        let t1 = (-b + sq) / (2.0 * a);
        if t0 > HIT_EPS {
            Some(t0)
        } else if t1 > HIT_EPS {
            Some(t1)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePrimitives {
    pub instance_id: InstanceId,
    pub ellipsoids: Vec<Ellipsoid>,
}

/// Ellipsoids around the instance's keypoint-group centroids: one per limb
/// segment plus spheres for the eyes and barrel.
pub fn fit_body_primitives(instance: &SceneInstance) -> Result<InstancePrimitives> {
    let mut c = [Vector3::zeros(); NUM_GROUPS];
    for (slot, v) in c.iter_mut().enumerate() {
        *v = group_centroid(instance, slot + 1)?;
    }
    let s = instance.scale;
    let mut ellipsoids: Vec<Ellipsoid> = standin::SEGMENTS
        .iter()
        .map(|&(a, b, r)| Ellipsoid::segment(c[a], c[b], r * s))
        .collect();
    ellipsoids.extend(standin::SPHERES.iter().map(|&(k, r)| Ellipsoid::sphere(c[k], r * s)));
    Ok(InstancePrimitives {
        instance_id: instance.id,
        ellipsoids,
    })
}

pub fn scene_primitives(scene: &SceneSpec) -> Result<Vec<InstancePrimitives>> {
    scene.instances.iter().map(fit_body_primitives).collect()
}

/// Instance mask plus per-pixel camera depth (`inf` for background).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub mask: InstanceMask,
    pub depth: Vec<f32>,
}

impl RenderedFrame {
    pub fn depth_at(&self, x: u32, y: u32) -> f32 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width as usize * self.height as usize;
        if self.mask.width() != self.width || self.mask.height() != self.height || self.depth.len() != n {
            return Err(Error::Consistency("mask/depth size does not match the frame".into()));
        }
        for (id, d) in self.mask.ids().iter().zip(&self.depth) {
            if *id != 0 && !d.is_finite() {
                return Err(Error::Consistency("labelled pixel without finite depth".into()));
            }
        }
        Ok(())
    }
}

/// Inclusive pixel range possibly covered by `e`, or the whole frame when
/// its bounding cube reaches behind the camera.
fn screen_bounds(e: &Ellipsoid, cam: &CameraModel) -> Option<(u32, u32, u32, u32)> {
    let (w, h) = (cam.width(), cam.height());
    let c = cam.to_camera_frame(&e.center);
    let r = e.bounding_radius();
    if c.z + r <= HIT_EPS {
        return None;
    }
    if c.z - r <= 1e-6 {
        return Some((0, 0, w - 1, h - 1));
    }
    let (mut u0, mut v0, mut u1, mut v1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let p = c + Vector3::new(sx * r, sy * r, sz * r);
                let u = cam.fx() * p.x / p.z + cam.cx();
                let v = cam.fy() * p.y / p.z + cam.cy();
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
        }
    }
    // pixel i is sampled at i + 0.5
    let lo = |x: f64| (x - 0.5).ceil().max(0.0);
    let hi = |x: f64, n: u32| (x - 0.5).floor().min(n as f64 - 1.0);
    let (i0, i1, j0, j1) = (lo(u0), hi(u1, w), lo(v0), hi(v1, h));
    if i0 > i1 || j0 > j1 {
        return None;
    }
    Some((i0 as u32, j0 as u32, i1 as u32, j1 as u32))
}

/// Z-buffered ray casting through every pixel center. The nearest surface
/// wins; on exact depth ties the earlier primitive set wins.
pub fn rasterize(cam: &CameraModel, primitives: &[InstancePrimitives], image_id: u64) -> RenderedFrame {
    let (w, h) = (cam.width(), cam.height());
    let mut zbuf = vec![f64::INFINITY; w as usize * h as usize];
    let mut mask = InstanceMask::background(w, h);
    let origin = cam.position();
    for set in primitives {
        for e in &set.ellipsoids {
            let Some((i0, j0, i1, j1)) = screen_bounds(e, cam) else {
                continue;
            };
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let dir = cam.ray_direction(i as f64 + 0.5, j as f64 + 0.5);
                    if let Some(t) = e.ray_hit(&origin, &dir) {
                        let k = j as usize * w as usize + i as usize;
                        if t < zbuf[k] {
                            zbuf[k] = t;
                            mask.set(i, j, set.instance_id);
                        }
                    }
                }
            }
        }
    }
    RenderedFrame {
        image_id,
        width: w,
        height: h,
        mask,
        depth: zbuf.into_iter().map(|z| z as f32).collect(),
    }
}

/// Renders `scene` from `cam` with the stand-in body primitives.
pub fn render_scene(scene: &SceneSpec, cam: &CameraModel, image_id: u64) -> Result<RenderedFrame> {
    Ok(rasterize(cam, &scene_primitives(scene)?, image_id))
}

/// Flat-shaded visualization: background dark, each instance a gray level
/// modulated by depth. Serves as the frame's image for downstream tools.
pub fn preview_image(frame: &RenderedFrame) -> RgbImage {
    let finite = frame.depth.iter().filter(|d| d.is_finite());
    let (dmin, dmax) = finite.fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let span = (dmax - dmin).max(1e-6);
    ImageBuffer::from_fn(frame.width, frame.height, |x, y| {
        let id = frame.mask.get(x, y);
        if id == 0 {
            return Rgb([40, 70, 40]);
        }
        let base = 110 + (id.wrapping_mul(37) % 120) as u8;
        let shade = 1.0 - 0.4 * (frame.depth_at(x, y) - dmin) / span;
        let g = (base as f32 * shade) as u8;
        Rgb([g, g, g])
    })
}

/// Writes the mask as a 16-bit single-channel PNG.
pub fn write_mask_png(path: &Path, mask: &InstanceMask) -> Result<()> {
    let mut data = Vec::with_capacity(mask.ids().len());
    for &id in mask.ids() {
        data.push(u16::try_from(id).map_err(|_| {
            Error::Conversion(format!("instance id {id} does not fit a 16-bit mask"))
        })?);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(mask.width(), mask.height(), data).expect("buffer matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<InstanceMask> {
    let img = image::open(path)?;
    let (w, h) = (img.width(), img.height());
    let ids: Vec<InstanceId> = match img {
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Conversion(format!(
                "{}: instance masks must be single-channel, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    InstanceMask::new(w, h, ids)
}

/// Depth grid: `width: u32`, `height: u32`, then `f32` values row-major, all
/// little-endian.
pub fn write_depth(path: &Path, width: u32, height: u32, depth: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + depth.len() * 4);
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    for d in depth {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 8 {
        return Err(Error::Conversion(format!("{}: truncated depth header", path.display())));
    }
    let w = u32::from_le_bytes(buf[0..4].try_into().unwrap());
    let h = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    let n = w as usize * h as usize;
    if buf.len() != 8 + 4 * n {
        return Err(Error::Conversion(format!(
            "{}: expected {} depth bytes for {w}x{h}, found {}",
            path.display(),
            4 * n,
            buf.len() - 8
        )));
    }
    let depth = buf[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((w, h, depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Orientation;
    use rand::{Rng, SeedableRng};

    fn cam(w: u32, h: u32, f: f64) -> CameraModel {
        CameraModel::new(
            Vector3::zeros(),
            Orientation::Quaternion([1.0, 0.0, 0.0, 0.0]),
            f,
            f,
            w as f64 / 2.0,
            h as f64 / 2.0,
            w,
            h,
        )
        .unwrap()
    }

    fn one(id: InstanceId, e: Ellipsoid) -> InstancePrimitives {
        InstancePrimitives {
            instance_id: id,
            ellipsoids: vec![e],
        }
    }

    #[test]
    fn empty_scene_is_background() {
        let f = rasterize(&cam(32, 24, 30.0), &[], 1);
        assert!(f.mask.ids().iter().all(|&i| i == 0));
        assert!(f.depth.iter().all(|d| d.is_infinite()));
        f.validate().unwrap();
    }

    #[test]
    fn on_axis_sphere_is_a_centered_disc() {
        let (z, r, f) = (10.0, 1.0, 100.0);
        let frame = rasterize(&cam(64, 64, f), &[one(1, Ellipsoid::sphere(Vector3::new(0.0, 0.0, z), r))], 1);
        // Silhouette of an on-axis sphere: radius f * r / sqrt(z^2 - r^2).
        let radius = f * r / (z * z - r * r).sqrt();
        for y in 0..64 {
            for x in 0..64 {
                let d = ((x as f64 + 0.5 - 32.0).powi(2) + (y as f64 + 0.5 - 32.0).powi(2)).sqrt();
                let id = frame.mask.get(x, y);
                if d < radius - 1e-6 {
                    assert_eq!(id, 1, "({x},{y}) d={d}");
                } else if d > radius + 1e-6 {
                    assert_eq!(id, 0, "({x},{y}) d={d}");
                }
            }
        }
        let (_, b, _) = frame.mask.instance_boxes()[0];
        assert_eq!(b.x + b.w / 2.0, 32.0);
        assert_eq!(b.y + b.h / 2.0, 32.0);
        frame.validate().unwrap();
    }

    #[test]
    fn nearer_sphere_occludes_farther() {
        let near = one(7, Ellipsoid::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0));
        let far = one(3, Ellipsoid::sphere(Vector3::new(0.0, 0.0, 10.0), 1.0));
        for order in [vec![near.clone(), far.clone()], vec![far, near]] {
            let frame = rasterize(&cam(48, 48, 40.0), &order, 1);
            let ids = frame.mask.instance_ids();
            assert_eq!(ids, vec![7]);
        }
    }

    /// Brute-force per-pixel z-test using the quadric form of every ellipsoid.
    fn oracle(cam: &CameraModel, prims: &[InstancePrimitives]) -> Vec<(InstanceId, f64)> {
        let mut out = Vec::new();
        for j in 0..cam.height() {
            for i in 0..cam.width() {
                let o = cam.position();
                let d = cam.ray_direction(i as f64 + 0.5, j as f64 + 0.5);
                let mut best = (0, f64::INFINITY);
                for set in prims {
                    for e in &set.ellipsoids {
                        let inv_r2 = Matrix3::from_diagonal(&e.radii.map(|r| 1.0 / (r * r)));
                        let m = e.axes * inv_r2 * e.axes.transpose();
                        let oc = o - e.center;
                        let a = (d.transpose() * m * d)[0];
                        let b = 2.0 * (d.transpose() * m * oc)[0];
                        let c = (oc.transpose() * m * oc)[0] - 1.0;
                        let disc = b * b - 4.0 * a * c;
                        if disc < 0.0 {
                            continue;
                        }
                        let roots = [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)];
                        if let Some(t) = roots.into_iter().find(|t| *t > 1e-9) {
                            if t < best.1 {
                                best = (set.instance_id, t);
                            }
                        }
                    }
                }
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn z_buffer_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let c = cam(48, 40, 45.0);
            let prims: Vec<InstancePrimitives> = (1..=5)
                .map(|id| InstancePrimitives {
                    instance_id: id,
                    ellipsoids: (0..3)
                        .map(|_| {
                            let a = Vector3::new(
                                rng.random_range(-3.0..3.0),
                                rng.random_range(-3.0..3.0),
                                rng.random_range(4.0..15.0),
                            );
                            let b = a + Vector3::new(
                                rng.random_range(-1.5..1.5),
                                rng.random_range(-1.5..1.5),
                                rng.random_range(-1.5..1.5),
                            );
                            Ellipsoid::segment(a, b, rng.random_range(0.1..0.8))
                        })
                        .collect(),
                })
                .collect();
            let frame = rasterize(&c, &prims, 1);
            let want = oracle(&c, &prims);
            let mut mismatches = 0;
            for (k, (id, t)) in want.iter().enumerate() {
                let got = frame.mask.ids()[k];
                if got != *id {
                    mismatches += 1;
                    continue;
                }
                if *id != 0 {
                    assert!((frame.depth[k] as f64 - t).abs() < 1e-4 * t);
                }
            }
            // Both routes solve the same quadratic; only exact depth ties could differ.
            assert_eq!(mismatches, 0);
        }
    }

    #[test]
    fn camera_inside_bounding_cube_still_renders() {
        // Ellipsoid straddles the camera plane; screen bounds fall back to the full frame.
        let prims = [one(2, Ellipsoid::segment(Vector3::new(0.5, 0.0, -1.0), Vector3::new(0.5, 0.0, 3.0), 0.3))];
        let frame = rasterize(&cam(32, 32, 20.0), &prims, 1);
        assert!(frame.mask.pixel_count(2) > 0);
        frame.validate().unwrap();
    }

    #[test]
    fn mask_png_and_depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frame = rasterize(
            &cam(40, 30, 30.0),
            &[one(300, Ellipsoid::sphere(Vector3::new(0.0, 0.0, 6.0), 1.0))],
            4,
        );
        let mp = dir.path().join("m.png");
        write_mask_png(&mp, &frame.mask).unwrap();
        assert_eq!(read_mask_png(&mp).unwrap(), frame.mask);

        let dp = dir.path().join("d.bin");
        write_depth(&dp, frame.width, frame.height, &frame.depth).unwrap();
        let bytes = std::fs::read(&dp).unwrap();
        assert_eq!(bytes.len(), 8 + 40 * 30 * 4);
        assert_eq!(&bytes[0..8], &[40, 0, 0, 0, 30, 0, 0, 0]);
        let (w, h, d) = read_depth(&dp).unwrap();
        assert_eq!((w, h), (40, 30));
        assert_eq!(
            d.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            frame.depth.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        std::fs::write(&dp, &bytes[..20]).unwrap();
        assert!(read_depth(&dp).is_err());

        let mut big = InstanceMask::background(2, 2);
        big.set(0, 0, 70_000);
        assert!(write_mask_png(&dir.path().join("big.png"), &big).is_err());
    }
}
