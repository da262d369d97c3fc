//! Pinhole camera model, two-view triangulation and robust reprojection
//! refinement.
//!
//! Two frames of a monocular stream are treated as a pseudo-stereo pair.
//! A correspondence `(p, p')` between them is lifted to a scene point by
//! solving the homogeneous system `A * [P; 1] = 0` built from the two
//! projection matrices, then polished by a damped least-squares iteration
//! on the reprojection error under a soft-L1 loss.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point3, Vector2, Vector3, Vector4};
use thiserror::Error;

/// Minimum distance between the two camera centers before triangulation is
/// considered ill-posed. Consecutive frames with near-zero motion produce
/// garbage depths; reject them instead.
pub const BASELINE_MIN: f64 = 0.01;

const HOMOGENEOUS_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("camera baseline {0:.6} m is below the {BASELINE_MIN} m minimum")]
    DegenerateBaseline(f64),
    #[error("triangulated point lies at infinity (|w| = {0:.3e})")]
    PointAtInfinity(f64),
    #[error("soft-L1 loss domain error: argument {0} is negative")]
    DomainError(f64),
    #[error("point projects behind a camera (depth {0:.6} m)")]
    BehindCamera(f64),
    #[error("non-finite value encountered during refinement")]
    NonFinite,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!("focal lengths ({fx}, {fy}) must be positive")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Calibration matrix K with zero skew.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains_pixel(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// World-to-camera extrinsics: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let ortho_defect = (gram - Matrix3::identity()).norm();
        if ortho_defect > 1e-9 {
            return Err(GeometryError::InvalidPose(format!(
                "rotation is not orthonormal (defect {ortho_defect:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidPose(format!("rotation determinant {det} is not +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn transform(&self, world: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * world.coords + self.translation)
    }
}

/// The 3x4 camera matrix `M = K [R | t]`; rows are exposed for the
/// triangulation system.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    matrix: Matrix3x4<f64>,
}

impl ProjectionMatrix {
    pub fn from_matrix(matrix: Matrix3x4<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> Vector4<f64> {
        self.matrix.row(i).transpose()
    }

    /// Homogeneous projection of a world point.
    pub fn project_homogeneous(&self, world: &Point3<f64>) -> Vector3<f64> {
        self.matrix * world.to_homogeneous()
    }

    /// Pixel projection; errors when the point is not in front of the camera.
    ///
    /// Assumes the bottom row of K is `[0 0 1]`, so the homogeneous scale is
    /// the camera-frame depth.
    pub fn project_pixel(&self, world: &Point3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let h = self.project_homogeneous(world);
        if h.z <= 0.0 {
            return Err(GeometryError::BehindCamera(h.z));
        }
        Ok(Vector2::new(h.x / h.z, h.y / h.z))
    }

    /// Camera-frame depth of a world point (third row dotted with [P; 1]).
    pub fn depth_of(&self, world: &Point3<f64>) -> f64 {
        self.row(2).dot(&world.to_homogeneous())
    }

    /// Camera center: the null direction of the 3x4 matrix, `-A^{-1} b`
    /// for `M = [A | b]`.
    pub fn center(&self) -> Option<Point3<f64>> {
        let a = self.matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let b = self.matrix.column(3).into_owned();
        a.try_inverse().map(|inv| Point3::from(-(inv * b)))
    }
}

/// A correspondence between the first ("left") and second ("right") image
/// of a pseudo-stereo pair, stored in pixel coordinates. Homogeneous
/// accessors append the exact 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMatch {
    pub left: Vector2<f64>,
    pub right: Vector2<f64>,
}

impl PixelMatch {
    pub fn new(left: Vector2<f64>, right: Vector2<f64>) -> Self {
        Self { left, right }
    }

    pub fn left_homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.left.x, self.left.y, 1.0)
    }

    pub fn right_homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.right.x, self.right.y, 1.0)
    }
}

/// A recovered 3D point in meters, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ScenePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn point(&self) -> Point3<f64> {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<Point3<f64>> for ScenePoint {
    fn from(p: Point3<f64>) -> Self {
        Self::new(p.x, p.y, p.z)
    }
}

/// Termination parameters for [`refine_point`].
#[derive(Debug, Clone, Copy)]
pub struct RefineConfig {
    pub gradient_tol: f64,
    pub step_tol: f64,
    pub max_iters: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        // Small smooth 3-variable problem; generous budget.
        Self { gradient_tol: 1e-8, step_tol: 1e-10, max_iters: 50 }
    }
}

/// How a refinement run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineTermination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

/// Refinement outcome with the objective trace used by the descent tests.
#[derive(Debug, Clone)]
pub struct RefineReport {
    pub point: ScenePoint,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Robust objective after every accepted step, starting at the initial value.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: RefineTermination,
}

/// Assembles `M = K [R | t]`.
pub fn compose_projection(intrinsics: &CameraIntrinsics, pose: &CameraPose) -> ProjectionMatrix {
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&pose.rotation);
    rt.column_mut(3).copy_from(&pose.translation);
    ProjectionMatrix::from_matrix(intrinsics.matrix() * rt)
}

/// The 4x4 homogeneous triangulation system. Rows are
/// `[x_l*M_3 - M_1; y_l*M_3 - M_2; x_r*M'_3 - M'_1; y_r*M'_3 - M'_2]`.
pub fn build_triangulation_matrix(
    m: &PixelMatch,
    left: &ProjectionMatrix,
    right: &ProjectionMatrix,
) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a.set_row(0, &(m.left.x * left.row(2) - left.row(0)).transpose());
    a.set_row(1, &(m.left.y * left.row(2) - left.row(1)).transpose());
    a.set_row(2, &(m.right.x * right.row(2) - right.row(0)).transpose());
    a.set_row(3, &(m.right.y * right.row(2) - right.row(1)).transpose());
    a
}

/// Linear two-view triangulation: the right-singular vector of `A` for the
/// smallest singular value, dehomogenized by its fourth component.
pub fn triangulate(
    m: &PixelMatch,
    left: &ProjectionMatrix,
    right: &ProjectionMatrix,
) -> Result<ScenePoint, GeometryError> {
    let (cl, cr) = match (left.center(), right.center()) {
        (Some(cl), Some(cr)) => (cl, cr),
        _ => return Err(GeometryError::DegenerateBaseline(0.0)),
    };
    let baseline = (cl - cr).norm();
    if baseline < BASELINE_MIN {
        return Err(GeometryError::DegenerateBaseline(baseline));
    }

    let a = build_triangulation_matrix(m, left, right);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let min_index = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.partial_cmp(b).expect("singular values are finite"))
        .map(|(i, _)| i)
        .expect("4x4 SVD yields four singular values");
    let h = v_t.row(min_index).transpose();
    if h.w.abs() < HOMOGENEOUS_EPS {
        return Err(GeometryError::PointAtInfinity(h.w.abs()));
    }
    Ok(ScenePoint::new(h.x / h.w, h.y / h.w, h.z / h.w))
}

/// Robust loss `2(sqrt(1 + x) - 1)` applied to squared residuals.
pub fn soft_l1(x: f64) -> Result<f64, GeometryError> {
    if x < 0.0 {
        return Err(GeometryError::DomainError(x));
    }
    Ok(2.0 * ((1.0 + x).sqrt() - 1.0))
}

/// Derivative of the soft-L1 loss, `1 / sqrt(1 + x)`.
fn soft_l1_derivative(x: f64) -> f64 {
    1.0 / (1.0 + x).sqrt()
}

/// Per-axis reprojection residuals `[observed - projected]` for both images:
/// `(left_x, left_y, right_x, right_y)` in pixels. The squared norms of the
/// two halves sum to the reprojection objective.
pub fn reprojection_residuals(
    point: &ScenePoint,
    m: &PixelMatch,
    left: &ProjectionMatrix,
    right: &ProjectionMatrix,
) -> Result<Vector4<f64>, GeometryError> {
    let p = point.point();
    let pl = left.project_pixel(&p)?;
    let pr = right.project_pixel(&p)?;
    Ok(Vector4::new(
        m.left.x - pl.x,
        m.left.y - pl.y,
        m.right.x - pr.x,
        m.right.y - pr.y,
    ))
}

/// Analytic Jacobian of [`reprojection_residuals`] with respect to the
/// scene point, 4x3.
pub fn reprojection_jacobian(
    point: &ScenePoint,
    left: &ProjectionMatrix,
    right: &ProjectionMatrix,
) -> Result<nalgebra::Matrix4x3<f64>, GeometryError> {
    let p = point.point();
    let mut jac = nalgebra::Matrix4x3::zeros();
    for (block, proj) in [(0, left), (1, right)] {
        let h = proj.project_homogeneous(&p);
        if h.z <= 0.0 {
            return Err(GeometryError::BehindCamera(h.z));
        }
        let w2 = h.z * h.z;
        for axis in 0..2 {
            let num_row = proj.matrix().row(axis);
            let den_row = proj.matrix().row(2);
            for col in 0..3 {
                // d(observed - h_axis/h_w)/dP = -(w * dnum - num * dden) / w^2
                let d = (h.z * num_row[col] - h[axis] * den_row[col]) / w2;
                jac[(block * 2 + axis, col)] = -d;
            }
        }
    }
    Ok(jac)
}

/// Robust reprojection objective: soft-L1 of each image's squared residual
/// norm, summed over both images.
pub fn robust_objective(
    point: &ScenePoint,
    m: &PixelMatch,
    left: &ProjectionMatrix,
    right: &ProjectionMatrix,
) -> Result<f64, GeometryError> {
    let r = reprojection_residuals(point, m, left, right)?;
    let s_left = r.x * r.x + r.y * r.y;
    let s_right = r.z * r.z + r.w * r.w;
    Ok(soft_l1(s_left)? + soft_l1(s_right)?)
}

/// Minimizes the robust reprojection objective with a Levenberg-Marquardt
/// damped iteration on the soft-L1 reweighted residuals. Steps are accepted
/// only when the true robust objective decreases, so the trace in the
/// report is non-increasing.
pub fn refine_point(
    initial: &ScenePoint,
    m: &PixelMatch,
    left: &ProjectionMatrix,
    right: &ProjectionMatrix,
    config: &RefineConfig,
) -> Result<ScenePoint, GeometryError> {
    refine_point_report(initial, m, left, right, config).map(|r| r.point)
}

/// Same as [`refine_point`] but exposes the objective trace and
/// termination reason.
pub fn refine_point_report(
    initial: &ScenePoint,
    m: &PixelMatch,
    left: &ProjectionMatrix,
    right: &ProjectionMatrix,
    config: &RefineConfig,
) -> Result<RefineReport, GeometryError> {
    let mut point = *initial;
    let mut objective = robust_objective(&point, m, left, right)?;
    if !objective.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let initial_objective = objective;
    let mut trace = vec![objective];
    let mut lambda = 1e-3;
    let mut termination = RefineTermination::MaxIterations;
    let mut iterations = 0;

    for iter in 0..config.max_iters {
        iterations = iter + 1;
        let residuals = reprojection_residuals(&point, m, left, right)?;
        let jac = reprojection_jacobian(&point, left, right)?;
        if !residuals.iter().all(|v| v.is_finite()) || !jac.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }

        // IRLS reweighting: each image block scaled by sqrt(rho'(s)).
        let s_left = residuals.x * residuals.x + residuals.y * residuals.y;
        let s_right = residuals.z * residuals.z + residuals.w * residuals.w;
        let w_left = soft_l1_derivative(s_left).sqrt();
        let w_right = soft_l1_derivative(s_right).sqrt();
        let mut wr = residuals;
        let mut wj = jac;
        for row in 0..4 {
            let w = if row < 2 { w_left } else { w_right };
            wr[row] *= w;
            for col in 0..3 {
                wj[(row, col)] *= w;
            }
        }

        // Gradient of the robust objective: sum_i rho'(s_i) * 2 J_i^T r_i,
        // equal to 2 * (wJ)^T (wr).
        let gradient = 2.0 * wj.transpose() * wr;
        if gradient.norm() < config.gradient_tol {
            termination = RefineTermination::GradientTolerance;
            break;
        }

        let jtj = wj.transpose() * wj;
        let jtr = wj.transpose() * wr;

        // Damped sub-steps; bail to the next outer iteration on success.
        let mut stepped = false;
        for _ in 0..20 {
            let mut damped = jtj;
            for i in 0..3 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(inv) = damped.try_inverse() else {
                lambda *= 10.0;
                continue;
            };
            // Gauss-Newton step for residual e with Jacobian J:
            // delta = -(J^T J)^{-1} J^T e.
            let delta = -(inv * jtr);
            if !delta.iter().all(|v| v.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
            let candidate = ScenePoint::new(point.x + delta.x, point.y + delta.y, point.z + delta.z);
            let candidate_objective = match robust_objective(&candidate, m, left, right) {
                Ok(v) if v.is_finite() => v,
                Ok(_) => return Err(GeometryError::NonFinite),
                // A trial step behind a camera is rejected, not fatal.
                Err(GeometryError::BehindCamera(_)) => {
                    lambda *= 10.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if candidate_objective < objective {
                point = candidate;
                objective = candidate_objective;
                trace.push(objective);
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                if delta.norm() < config.step_tol {
                    termination = RefineTermination::StepTolerance;
                }
                break;
            }
            lambda *= 10.0;
        }

        if termination == RefineTermination::StepTolerance {
            break;
        }
        if !stepped {
            // No damping level makes progress: converged in practice.
            termination = RefineTermination::StepTolerance;
            break;
        }
    }

    Ok(RefineReport {
        point,
        initial_objective,
        final_objective: objective,
        objective_trace: trace,
        iterations,
        termination,
    })
}
