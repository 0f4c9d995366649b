//! Pinhole cameras and Plücker ray embeddings.
//!
//! Convention (fixed, the paper does not state one): right-handed,
//! camera looks down +z in camera space, y points down in image space.
//! Pixel `(i, j)` integrates over `[i, i+1) x [j, j+1)`; its ray passes
//! through the continuous image point `(i + 0.5, j + 0.5)`.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};

use crate::raster::Raster;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub focal: Vector2<f64>,
    pub principal_point: Vector2<f64>,
    /// (width, height) in pixels.
    pub resolution: (usize, usize),
    /// Rigid transform mapping camera-space points to world space.
    pub pose: Isometry3<f64>,
}

impl Camera {
    pub fn new(
        focal: Vector2<f64>,
        principal_point: Vector2<f64>,
        resolution: (usize, usize),
        pose: Isometry3<f64>,
    ) -> Result<Self> {
        if !(focal.x.is_finite() && focal.y.is_finite() && focal.x > 0.0 && focal.y > 0.0) {
            return Err(Error::Degenerate(format!("camera focal {:?}", focal)));
        }
        if !(principal_point.x.is_finite() && principal_point.y.is_finite()) {
            return Err(Error::NonFinite("camera principal point".into()));
        }
        if resolution.0 == 0 || resolution.1 == 0 {
            return Err(Error::Degenerate("camera with zero resolution".into()));
        }
        if !pose.translation.vector.iter().all(|v| v.is_finite())
            || !pose.rotation.coords.iter().all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("camera pose".into()));
        }
        Ok(Camera {
            focal,
            principal_point,
            resolution,
            pose,
        })
    }

    /// Builds the pose from an explicit rotation matrix and translation
    /// (both world←camera), rejecting non-orthonormal rotations.
    pub fn from_matrix_parts(
        focal: Vector2<f64>,
        principal_point: Vector2<f64>,
        resolution: (usize, usize),
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let defect = (gram - Matrix3::identity()).abs().max();
        if !defect.is_finite() || defect > 1e-6 {
            return Err(Error::Degenerate(format!(
                "camera rotation not orthonormal (defect {defect:.3e})"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::Degenerate("camera rotation is a reflection".into()));
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        Camera::new(
            focal,
            principal_point,
            resolution,
            Isometry3::from_parts(Translation3::from(translation), q),
        )
    }

    pub fn width(&self) -> usize {
        self.resolution.0
    }

    pub fn height(&self) -> usize {
        self.resolution.1
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    /// Rotation world←camera.
    pub fn rotation_wc(&self) -> Matrix3<f64> {
        *self.pose.rotation.to_rotation_matrix().matrix()
    }

    /// Rotation camera←world.
    pub fn rotation_cw(&self) -> Matrix3<f64> {
        self.rotation_wc().transpose()
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_cw() * (p_world - self.center())
    }

    /// Perspective projection to continuous pixel coordinates plus
    /// camera-space depth. Callers must cull non-positive depths.
    pub fn project(&self, p_world: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let t = self.to_camera(p_world);
        let px = self.focal.x * t.x / t.z + self.principal_point.x;
        let py = self.focal.y * t.y / t.z + self.principal_point.y;
        (Vector2::new(px, py), t.z)
    }

    /// Unit world-space direction of the ray through continuous image
    /// point `(px, py)`.
    pub fn ray_direction(&self, px: f64, py: f64) -> Vector3<f64> {
        let d_cam = Vector3::new(
            (px - self.principal_point.x) / self.focal.x,
            (py - self.principal_point.y) / self.focal.y,
            1.0,
        );
        (self.rotation_wc() * d_cam).normalize()
    }

    /// Ray through the center of integer pixel `(ix, iy)`.
    pub fn pixel_ray(&self, ix: usize, iy: usize) -> Vector3<f64> {
        self.ray_direction(ix as f64 + 0.5, iy as f64 + 0.5)
    }
}

/// World←camera pose of a camera at `eye` looking at `target`.
///
/// `up` fixes the roll; when it is (nearly) parallel to the view
/// direction the fallbacks +z, +y, +x are tried in order.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Isometry3<f64>> {
    let f = target - eye;
    let fl = f.norm();
    if fl < 1e-12 {
        return Err(Error::Degenerate("look_at with coincident eye and target".into()));
    }
    let z = f / fl;
    let mut x = Vector3::zeros();
    let mut found = false;
    for candidate in [up, Vector3::z(), Vector3::y(), Vector3::x()] {
        let c = z.cross(&candidate);
        if c.norm() > 1e-8 {
            x = c.normalize();
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Degenerate("look_at could not fix camera roll".into()));
    }
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Ok(Isometry3::from_parts(Translation3::from(eye), q))
}

/// Per-pixel 9-channel Plücker feature map: image value v (3), ray moment
/// o×d (3), unit ray direction d (3), in that channel order.
pub fn plucker_embedding(cam: &Camera, image: &Raster) -> Result<Raster> {
    image.expect_shape(cam.width(), cam.height(), 3)?;
    let o = cam.center();
    let mut out = Raster::new(cam.width(), cam.height(), 9);
    for y in 0..cam.height() {
        for x in 0..cam.width() {
            let d = cam.pixel_ray(x, y);
            let m = o.cross(&d);
            let v = image.pixel(x, y);
            let px = out.pixel_mut(x, y);
            px[0] = v[0];
            px[1] = v[1];
            px[2] = v[2];
            px[3] = m.x;
            px[4] = m.y;
            px[5] = m.z;
            px[6] = d.x;
            px[7] = d.y;
            px[8] = d.z;
        }
    }
    Ok(out)
}
