//! Scan-to-scan odometry from the planar range-flow constraint.
//!
//! For a static point seen at bearing α and range r, a sensor moving with
//! twist ξ = (vx, vy, ω) satisfies
//!
//! ```text
//! R_t + R_α·((vx·sin α − vy·cos α)/r − ω) + vx·cos α + vy·sin α = 0
//! ```
//!
//! which is linear in ξ. Each usable beam contributes one residual and the
//! twist is the robust (Cauchy) least-squares solution, found by iteratively
//! reweighted least squares. Derivatives are taken on the mean of the two
//! scans, which keeps the estimate exactly antisymmetric under swapping them.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::geometry::{LaserScan, Pose2D, Twist2D};

#[derive(Debug, Error, PartialEq)]
pub enum OdometryError {
    #[error("insufficient constraints: {0} usable beams")]
    InsufficientConstraints(usize),
    #[error("non-positive time step {0}")]
    NonPositiveDt(f64),
    #[error("scans have different bearing layouts")]
    LayoutMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeFlowConfig {
    pub max_iterations: usize,
    /// Early exit when the relative objective change drops below this.
    pub tolerance: f64,
    /// Cauchy scale = `scale_factor`·median(|ρ|).
    pub scale_factor: f64,
    /// Beams whose neighbor-to-neighbor range step exceeds
    /// `max_slope`·r·Δα are treated as depth discontinuities.
    pub max_slope: f64,
    /// Condition number above which the solve is declared degenerate.
    pub max_condition: f64,
    /// Force the robot-frame lateral velocity to zero.
    pub constrain_vy: bool,
    /// LiDAR mounting pose in the robot frame; only used with `constrain_vy`.
    pub sensor_offset: Pose2D,
}

impl Default for RangeFlowConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            tolerance: 1e-6,
            scale_factor: 3.0,
            max_slope: 6.0,
            max_condition: 1e6,
            constrain_vy: false,
            sensor_offset: Pose2D::IDENTITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeFlowEstimate {
    /// Sensor-frame twist.
    pub twist: Twist2D,
    pub covariance_proxy: Matrix3<f64>,
    pub degenerate: bool,
    pub residual_rms: f64,
    pub used_points: usize,
    /// Cauchy objective before and after each reweighted solve, same scale.
    pub trace: Vec<(f64, f64)>,
}

/// One linearized constraint `ρ = r_t + g·ξ`.
#[derive(Debug, Clone, Copy)]
pub struct Constraint {
    pub g: Vector3<f64>,
    pub r_t: f64,
}

impl Constraint {
    pub fn residual(&self, xi: &Vector3<f64>) -> f64 {
        self.r_t + self.g.dot(xi)
    }
}

/// Builds per-beam constraints; beams at `range_max`, next to no-returns or on
/// depth discontinuities are skipped.
pub fn constraints(prev: &LaserScan, curr: &LaserScan, cfg: &RangeFlowConfig) -> Result<Vec<Constraint>, OdometryError> {
    if !prev.same_layout(curr) {
        return Err(OdometryError::LayoutMismatch);
    }
    let dt = curr.timestamp - prev.timestamp;
    if !(dt > 0.0) {
        return Err(OdometryError::NonPositiveDt(dt));
    }
    let n = curr.len();
    let inc = curr.angle_increment;
    let valid: Vec<bool> = (0..n).map(|i| prev.is_return(i) && curr.is_return(i)).collect();
    let mid: Vec<f64> = (0..n).map(|i| 0.5 * (prev.ranges[i] + curr.ranges[i])).collect();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        let r = mid[i];
        if r <= 1e-6 {
            continue;
        }
        let gate = cfg.max_slope * r * inc;
        let back = (i > 0 && valid[i - 1]).then(|| mid[i] - mid[i - 1]);
        let fwd = (i + 1 < n && valid[i + 1]).then(|| mid[i + 1] - mid[i]);
        let r_alpha = match (back, fwd) {
            (Some(b), Some(f)) if b.abs() <= gate && f.abs() <= gate => 0.5 * (b + f) / inc,
            (Some(b), None) if i + 1 == n && b.abs() <= gate => b / inc,
            (None, Some(f)) if i == 0 && f.abs() <= gate => f / inc,
            _ => continue,
        };
        let alpha = curr.bearing(i);
        let (s, c) = alpha.sin_cos();
        out.push(Constraint {
            g: Vector3::new(r_alpha * s / r + c, -r_alpha * c / r + s, -r_alpha),
            r_t: (curr.ranges[i] - prev.ranges[i]) / dt,
        });
    }
    Ok(out)
}

fn cauchy_objective(cs: &[Constraint], xi: &Vector3<f64>, scale: f64) -> f64 {
    let c2 = scale * scale;
    cs.iter().map(|k| 0.5 * c2 * (1.0 + k.residual(xi).powi(2) / c2).ln()).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Sensor twist from the robot-frame parameters actually solved for.
struct Parametrization {
    /// Sensor twist = basis · params.
    basis: nalgebra::Matrix3xX<f64>,
}

impl Parametrization {
    fn new(cfg: &RangeFlowConfig) -> Self {
        if !cfg.constrain_vy {
            return Self { basis: nalgebra::Matrix3xX::from_column_slice(&Matrix3::<f64>::identity().as_slice()[..]) };
        }
        // robot twist (v, 0, ω) seen from the sensor mounted at offset
        let o = cfg.sensor_offset;
        let (s, c) = o.theta.sin_cos();
        let rot = |x: f64, y: f64| (c * x + s * y, -s * x + c * y);
        let v_col = rot(1.0, 0.0);
        let w_col = rot(-o.y, o.x);
        Self {
            basis: nalgebra::Matrix3xX::from_column_slice(&[v_col.0, v_col.1, 0.0, w_col.0, w_col.1, 1.0]),
        }
    }
}

struct Solve {
    xi: Vector3<f64>,
    normal: Matrix3<f64>,
    degenerate: bool,
}

fn weighted_solve(cs: &[Constraint], weights: &[f64], param: &Parametrization, max_condition: f64) -> Solve {
    let k = param.basis.ncols();
    let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut b = nalgebra::DVector::<f64>::zeros(k);
    let mut normal = Matrix3::<f64>::zeros();
    for (con, &w) in cs.iter().zip(weights) {
        let gp = param.basis.transpose() * con.g;
        a += w * &gp * gp.transpose();
        b -= w * con.r_t * &gp;
        normal += w * con.g * con.g.transpose();
    }
    let eig = SymmetricEigen::new(a);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let degenerate = !(lmax > 0.0) || lmin <= lmax / max_condition;
    let mut p = nalgebra::DVector::<f64>::zeros(k);
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if lmax > 0.0 && l > lmax / max_condition {
            let v = eig.eigenvectors.column(j);
            p += v * (v.dot(&b) / l);
        }
    }
    let xi = &param.basis * p;
    Solve { xi: Vector3::new(xi[0], xi[1], xi[2]), normal, degenerate }
}

fn pseudo_inverse(m: &Matrix3<f64>, max_condition: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*m);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let mut out = Matrix3::zeros();
    for j in 0..3 {
        let l = eig.eigenvalues[j];
        if lmax > 0.0 && l > lmax / max_condition {
            let v = eig.eigenvectors.column(j);
            out += v * v.transpose() / l;
        }
    }
    out
}

/// Robust twist estimate between two scans of identical layout.
pub fn estimate_twist(prev: &LaserScan, curr: &LaserScan, cfg: &RangeFlowConfig) -> Result<RangeFlowEstimate, OdometryError> {
    let cs = constraints(prev, curr, cfg)?;
    if cs.len() < 10 {
        return Err(OdometryError::InsufficientConstraints(cs.len()));
    }
    let param = Parametrization::new(cfg);
    let mut weights = vec![1.0; cs.len()];
    let mut sol = weighted_solve(&cs, &weights, &param, cfg.max_condition);
    let mut trace = Vec::new();

    for _ in 0..cfg.max_iterations {
        let scale = cfg.scale_factor * median(cs.iter().map(|k| k.residual(&sol.xi).abs()).collect());
        if !(scale > 1e-15) {
            break;
        }
        let before = cauchy_objective(&cs, &sol.xi, scale);
        for (w, k) in weights.iter_mut().zip(&cs) {
            *w = 1.0 / (1.0 + (k.residual(&sol.xi) / scale).powi(2));
        }
        let next = weighted_solve(&cs, &weights, &param, cfg.max_condition);
        let after = cauchy_objective(&cs, &next.xi, scale);
        trace.push((before, after));
        sol = next;
        if before <= 0.0 || (before - after).abs() / before < cfg.tolerance {
            break;
        }
    }

    let n = cs.len() as f64;
    let wsum: f64 = weights.iter().sum();
    let wres: f64 = cs.iter().zip(&weights).map(|(k, w)| w * k.residual(&sol.xi).powi(2)).sum();
    let sigma2 = if wsum > 0.0 { wres / wsum } else { 0.0 };
    let residual_rms = (cs.iter().map(|k| k.residual(&sol.xi).powi(2)).sum::<f64>() / n).sqrt();
    let covariance_proxy = pseudo_inverse(&sol.normal, cfg.max_condition) * sigma2;
    Ok(RangeFlowEstimate {
        twist: Twist2D::new(sol.xi[0], sol.xi[1], sol.xi[2]),
        covariance_proxy: 0.5 * (covariance_proxy + covariance_proxy.transpose()),
        degenerate: sol.degenerate,
        residual_rms,
        used_points: cs.len(),
        trace,
    })
}

/// Root-mean-square constraint residual of an arbitrary twist; used to check
/// that the constraint ranks the true motion best.
pub fn residual_rms_of(prev: &LaserScan, curr: &LaserScan, twist: &Twist2D, cfg: &RangeFlowConfig) -> Result<f64, OdometryError> {
    let cs = constraints(prev, curr, cfg)?;
    let xi = Vector3::new(twist.vx, twist.vy, twist.omega);
    Ok((cs.iter().map(|k| k.residual(&xi).powi(2)).sum::<f64>() / cs.len().max(1) as f64).sqrt())
}

/// Maps a sensor-frame displacement to the robot frame for a fixed mounting offset.
pub fn sensor_to_robot_delta(offset: &Pose2D, sensor_delta: &Pose2D) -> Pose2D {
    offset.compose(sensor_delta).compose(&offset.inverse())
}

/// Integrates scan-to-scan twists into a robot pose in the odometry frame.
#[derive(Debug, Clone)]
pub struct OdometryAccumulator {
    pub pose: Pose2D,
    pub last_scan: LaserScan,
    pub last_estimate: Option<RangeFlowEstimate>,
    /// Robot-frame velocity over the last interval.
    pub last_twist: Twist2D,
    pub dropouts: u64,
    pub sensor_offset: Pose2D,
    pub config: RangeFlowConfig,
}

impl OdometryAccumulator {
    pub fn new(first: LaserScan, sensor_offset: Pose2D, config: RangeFlowConfig) -> Self {
        Self {
            pose: Pose2D::IDENTITY,
            last_scan: first,
            last_estimate: None,
            last_twist: Twist2D::ZERO,
            dropouts: 0,
            sensor_offset,
            config,
        }
    }

    /// Advances with a new scan. On estimation failure the pose is held, the
    /// dropout counter increments and the scan still becomes the reference.
    pub fn accumulate(&mut self, curr: LaserScan) -> Result<Pose2D, OdometryError> {
        let dt = curr.timestamp - self.last_scan.timestamp;
        if !(dt > 0.0) {
            return Err(OdometryError::NonPositiveDt(dt));
        }
        let result = estimate_twist(&self.last_scan, &curr, &self.config);
        self.last_scan = curr;
        match result {
            Ok(est) => {
                let delta = sensor_to_robot_delta(&self.sensor_offset, &est.twist.integrate(dt));
                self.pose = self.pose.compose(&delta);
                self.last_twist = Twist2D::from_delta(&delta, dt);
                self.last_estimate = Some(est);
                Ok(delta)
            }
            Err(e) => {
                self.dropouts += 1;
                self.last_twist = Twist2D::ZERO;
                Err(e)
            }
        }
    }
}
