//! Relightable Gaussian primitives and their parameter activations.
//!
//! A [`RelightableGaussian`] stores raw optimization-friendly parameters:
//! scales as logs, opacity as a logit, normal and rotation unnormalized.
//! [`RelightableGaussian::activate`] maps them to the constrained values
//! everything downstream consumes. Color and BRDF parameters are stored
//! already activated in `[0, 1]`; the fitter keeps its own logits for them.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::{Error, Result};

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d sigmoid / dx expressed through the activated value `s = sigmoid(x)`.
#[inline]
pub fn sigmoid_derivative(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Inverse of [`sigmoid`]. Infinite at 0 and 1; see [`logit_clamped`].
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logit of `p` clamped into `[eps, 1 - eps]` first, so that re-activating
/// a saved value that sits exactly on a bound stays finite.
#[inline]
pub fn logit_clamped(p: f64, eps: f64) -> f64 {
    logit(p.clamp(eps, 1.0 - eps))
}

/// Jacobian of `v / |v|` with respect to `v`: `(I - n nᵀ) / |v|`.
pub(crate) fn d_normalize3(v: &Vector3<f64>) -> Matrix3<f64> {
    let len = v.norm();
    let n = v / len;
    (Matrix3::identity() - n * n.transpose()) / len
}

/// Raw per-primitive parameters, laid out exactly like one RGSA record.
///
/// `rotation` is kept as stored: a quaternion `(w, x, y, z)` that is unit
/// up to numerical drift. Activation renormalizes it; loading does not, so
/// save/load round trips are bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct RelightableGaussian {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Quaternion<f64>,
    pub opacity_raw: f64,
    pub color: Vector3<f64>,
    pub normal_raw: Vector3<f64>,
    pub albedo: Vector3<f64>,
    pub roughness: f64,
    pub metallic: f64,
}

/// Constrained parameters after activation: `scale > 0`, unit `rotation`
/// and `normal`, `opacity` in `(0, 1)`, color/BRDF values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatedGaussian {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub albedo: Vector3<f64>,
    pub roughness: f64,
    pub metallic: f64,
}

impl RelightableGaussian {
    fn check_finite(&self) -> Result<()> {
        let all = self
            .position
            .iter()
            .chain(self.log_scale.iter())
            .chain(self.rotation.coords.iter())
            .chain(self.color.iter())
            .chain(self.normal_raw.iter())
            .chain(self.albedo.iter())
            .chain([&self.opacity_raw, &self.roughness, &self.metallic]);
        for v in all {
            if !v.is_finite() {
                return Err(Error::NonFinite("gaussian parameter".into()));
            }
        }
        Ok(())
    }

    /// Maps raw parameters to constrained ones.
    ///
    /// Errors on non-finite input, near-zero rotation quaternions and
    /// near-zero raw normals; silently clamps color and BRDF values into
    /// `[0, 1]`.
    pub fn activate(&self) -> Result<ActivatedGaussian> {
        self.check_finite()?;
        let qn = self.rotation.norm();
        if qn < 1e-8 {
            return Err(Error::Degenerate(format!(
                "rotation quaternion norm {qn:.3e}"
            )));
        }
        let nn = self.normal_raw.norm();
        if nn < 1e-8 {
            return Err(Error::Degenerate(format!("raw normal norm {nn:.3e}")));
        }
        let scale = self.log_scale.map(f64::exp);
        if !scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::NonFinite("exp(log_scale)".into()));
        }
        Ok(ActivatedGaussian {
            position: self.position,
            scale,
            rotation: UnitQuaternion::from_quaternion(self.rotation),
            opacity: sigmoid(self.opacity_raw),
            color: self.color.map(|v| v.clamp(0.0, 1.0)),
            normal: self.normal_raw / nn,
            albedo: self.albedo.map(|v| v.clamp(0.0, 1.0)),
            roughness: self.roughness.clamp(0.0, 1.0),
            metallic: self.metallic.clamp(0.0, 1.0),
        })
    }
}

/// `Σ = R diag(s²) Rᵀ` for an already-unit rotation.
pub fn covariance(scale: &Vector3<f64>, rotation: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let r = rotation.to_rotation_matrix();
    let d = Matrix3::from_diagonal(&scale.map(|s| s * s));
    r.matrix() * d * r.matrix().transpose()
}

/// [`covariance`] from a possibly-unnormalized quaternion; rejects
/// near-zero quaternions instead of normalizing garbage.
pub fn covariance_from_raw(scale: &Vector3<f64>, rotation: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    let n = rotation.norm();
    if !n.is_finite() || n < 1e-8 {
        return Err(Error::Degenerate(format!("rotation quaternion norm {n:.3e}")));
    }
    Ok(covariance(scale, &UnitQuaternion::from_quaternion(*rotation)))
}

impl ActivatedGaussian {
    pub fn covariance(&self) -> Matrix3<f64> {
        covariance(&self.scale, &self.rotation)
    }

    /// Rejects covariances whose condition number `(s_max / s_min)²`
    /// exceeds 1e12; inverting those is meaningless in f64.
    pub fn check_condition(&self) -> Result<()> {
        let smax = self.scale.max();
        let smin = self.scale.min();
        let cond = (smax / smin).powi(2);
        if !cond.is_finite() || cond > 1e12 {
            return Err(Error::Degenerate(format!(
                "covariance condition number {cond:.3e} exceeds 1e12"
            )));
        }
        Ok(())
    }

    /// Unnormalized density `exp(-(x-μ)ᵀ Σ⁻¹ (x-μ) / 2)`, always in `(0, 1]`.
    pub fn eval_density(&self, x: &Vector3<f64>) -> Result<f64> {
        self.check_condition()?;
        let r = self.rotation.to_rotation_matrix();
        // Σ⁻¹ = R diag(1/s²) Rᵀ; go through the rotated frame directly.
        let local = r.matrix().transpose() * (x - self.position);
        let m = local
            .iter()
            .zip(self.scale.iter())
            .map(|(d, s)| (d / s) * (d / s))
            .sum::<f64>();
        Ok((-0.5 * m).exp())
    }
}

/// Evaluates the density of a raw primitive at a world point.
pub fn eval_gaussian(g: &RelightableGaussian, x: &Vector3<f64>) -> Result<f64> {
    g.activate()?.eval_density(x)
}

/// A scene's primitive set. Construction rejects empty sets; everything
/// else in the crate can then assume at least one primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub primitives: Vec<RelightableGaussian>,
}

impl GaussianCloud {
    pub fn new(primitives: Vec<RelightableGaussian>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::Degenerate("gaussian cloud with zero primitives".into()));
        }
        Ok(GaussianCloud { primitives })
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Activates every primitive, naming the offender on failure.
    pub fn activate(&self) -> Result<Vec<ActivatedGaussian>> {
        self.primitives
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.activate().map_err(|e| match e {
                    Error::NonFinite(s) => Error::NonFinite(format!("primitive {i}: {s}")),
                    Error::Degenerate(s) => Error::Degenerate(format!("primitive {i}: {s}")),
                    other => other,
                })
            })
            .collect()
    }
}
