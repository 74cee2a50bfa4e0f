use std::path::Path;

use nalgebra::{DVector, Isometry3, Matrix3xX, Matrix6xX, Translation3, UnitQuaternion as NaQuat, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    #[default]
    Revolute,
    Prismatic,
}

/// Rigid transform in URDF style: translation plus fixed-axis roll/pitch/yaw.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameSpec {
    pub xyz: [f64; 3],
    pub rpy: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default, rename = "type")]
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub origin_xyz: [f64; 3],
    #[serde(default)]
    pub origin_rpy: [f64; 3],
    pub limit_lo: f64,
    pub limit_hi: f64,
}

/// On-disk chain description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: FrameSpec,
    #[serde(default)]
    pub tool: FrameSpec,
    pub joints: Vec<JointSpec>,
    pub nominal: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub origin: Isometry3<f64>,
}

/// Serial kinematic chain: base transform, joints, tool transform, limits.
#[derive(Clone, Debug)]
pub struct SerialChain {
    pub name: String,
    pub base: Isometry3<f64>,
    pub tool: Isometry3<f64>,
    pub joints: Vec<Joint>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub nominal: DVector<f64>,
    reach: f64,
}

/// World-frame joint axes and origins plus the tool pose for one configuration.
pub struct ChainFrames {
    pub axes: Vec<Vector3<f64>>,
    pub origins: Vec<Vector3<f64>>,
    pub ee: Isometry3<f64>,
}

pub(crate) fn frame(xyz: &[f64; 3], rpy: &[f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        NaQuat::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

impl SerialChain {
    pub fn from_spec(spec: &ChainSpec) -> Result<Self> {
        let n = spec.joints.len();
        if n == 0 {
            return Err(Error::Config("chain has no joints".into()));
        }
        if spec.nominal.len() != n {
            return Err(Error::Config(format!(
                "nominal has {} entries, chain has {n} joints",
                spec.nominal.len()
            )));
        }
        let mut joints = Vec::with_capacity(n);
        for (i, j) in spec.joints.iter().enumerate() {
            let axis = Vector3::from(j.axis);
            if axis.norm() < 1e-9 {
                return Err(Error::Config(format!("joint {i} has a zero axis")));
            }
            if j.limit_lo >= j.limit_hi {
                return Err(Error::Config(format!("joint {i} limits are not ordered")));
            }
            if spec.nominal[i] < j.limit_lo || spec.nominal[i] > j.limit_hi {
                return Err(Error::Config(format!("nominal of joint {i} is outside its limits")));
            }
            joints.push(Joint {
                name: j.name.clone(),
                kind: j.kind,
                axis: axis.normalize(),
                origin: frame(&j.origin_xyz, &j.origin_rpy),
            });
        }
        let tool = frame(&spec.tool.xyz, &spec.tool.rpy);
        // Upper bound on the distance from the first joint to the tool point.
        // Prismatic travel is added at its largest magnitude.
        let mut reach = tool.translation.vector.norm();
        for (i, j) in joints.iter().enumerate().skip(1) {
            reach += j.origin.translation.vector.norm();
            if j.kind == JointKind::Prismatic {
                let s = &spec.joints[i];
                reach += s.limit_lo.abs().max(s.limit_hi.abs());
            }
        }
        if joints[0].kind == JointKind::Prismatic {
            reach += spec.joints[0].limit_lo.abs().max(spec.joints[0].limit_hi.abs());
        }
        Ok(Self {
            name: spec.name.clone(),
            base: frame(&spec.base.xyz, &spec.base.rpy),
            tool,
            joints,
            lower: DVector::from_iterator(n, spec.joints.iter().map(|j| j.limit_lo)),
            upper: DVector::from_iterator(n, spec.joints.iter().map(|j| j.limit_hi)),
            nominal: DVector::from_column_slice(&spec.nominal),
            reach,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: ChainSpec = serde_json::from_str(s)?;
        Self::from_spec(&spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// The bundled 7-DoF arm with iiwa-like limits.
    pub fn default_robot() -> Self {
        Self::from_json_str(include_str!("../../data/robot_7dof.json"))
            .expect("bundled robot description is valid")
    }

    /// The bundled pelvis-to-hand human arm.
    pub fn default_human() -> Self {
        Self::from_json_str(include_str!("../../data/human_arm.json"))
            .expect("bundled human description is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Position of the first joint frame, the centre of the reach sphere.
    pub fn shoulder(&self) -> Vector3<f64> {
        (self.base * self.joints[0].origin).translation.vector
    }

    pub fn reach(&self) -> f64 {
        self.reach
    }

    pub fn frames(&self, theta: &DVector<f64>) -> ChainFrames {
        let n = self.dof();
        let mut axes = Vec::with_capacity(n);
        let mut origins = Vec::with_capacity(n);
        let mut t = self.base;
        for (j, q) in self.joints.iter().zip(theta.iter()) {
            t *= j.origin;
            let axis = t.rotation * j.axis;
            axes.push(axis);
            origins.push(t.translation.vector);
            match j.kind {
                JointKind::Revolute => {
                    t *= NaQuat::from_scaled_axis(j.axis * *q);
                }
                JointKind::Prismatic => {
                    t *= Translation3::from(j.axis * *q);
                }
            }
        }
        ChainFrames {
            axes,
            origins,
            ee: t * self.tool,
        }
    }

    pub fn fk_isometry(&self, theta: &DVector<f64>) -> Isometry3<f64> {
        self.frames(theta).ee
    }

    pub fn fk(&self, theta: &DVector<f64>) -> Pose {
        Pose::from_isometry(&self.fk_isometry(theta))
    }

    /// Geometric Jacobian in the world frame; rows are `[v; ω]` of the tool point.
    pub fn jacobian(&self, theta: &DVector<f64>) -> Matrix6xX<f64> {
        let f = self.frames(theta);
        self.jacobian_from_frames(&f)
    }

    pub fn jacobian_from_frames(&self, f: &ChainFrames) -> Matrix6xX<f64> {
        let n = self.dof();
        let p = f.ee.translation.vector;
        let mut j = Matrix6xX::zeros(n);
        for i in 0..n {
            let z = f.axes[i];
            match self.joints[i].kind {
                JointKind::Revolute => {
                    let lin = z.cross(&(p - f.origins[i]));
                    j.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
                    j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
                }
                JointKind::Prismatic => {
                    j.fixed_view_mut::<3, 1>(0, i).copy_from(&z);
                }
            }
        }
        j
    }

    /// Positional rows of the Jacobian.
    pub fn jacobian_pos(&self, theta: &DVector<f64>) -> Matrix3xX<f64> {
        self.jacobian(theta).fixed_rows::<3>(0).into_owned()
    }

    /// `(θ - θ_lo, θ - θ_hi)` per joint.
    pub fn joint_limit_distances(&self, theta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (theta - &self.lower, theta - &self.upper)
    }

    pub fn within_limits(&self, theta: &DVector<f64>, tol: f64) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(t, (lo, hi))| *t >= lo - tol && *t <= hi + tol)
    }

    pub fn clamp_to_limits(&self, theta: &mut DVector<f64>) {
        for i in 0..theta.len() {
            theta[i] = theta[i].clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn one_link() -> SerialChain {
        SerialChain::from_spec(&ChainSpec {
            name: "one".into(),
            base: FrameSpec::default(),
            tool: FrameSpec {
                xyz: [1.0, 0.0, 0.0],
                rpy: [0.0; 3],
            },
            joints: vec![JointSpec {
                name: "j".into(),
                kind: JointKind::Revolute,
                axis: [0.0, 0.0, 1.0],
                origin_xyz: [0.0; 3],
                origin_rpy: [0.0; 3],
                limit_lo: -PI,
                limit_hi: PI,
            }],
            nominal: vec![0.0],
        })
        .unwrap()
    }

    #[test]
    fn one_link_planar() {
        let c = one_link();
        let p0 = c.fk(&DVector::from_element(1, 0.0));
        assert_abs_diff_eq!(p0.p, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        let p = c.fk(&DVector::from_element(1, PI / 2.0));
        assert_abs_diff_eq!(p.p, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        let j = c.jacobian(&DVector::from_element(1, PI / 2.0));
        // d/dθ (cos θ, sin θ) = (-sin θ, cos θ); angular part is the axis.
        assert_abs_diff_eq!(j[(0, 0)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(1, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(j[(5, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn prismatic_column_is_axis() {
        let mut spec: ChainSpec =
            serde_json::from_str(include_str!("../../data/robot_7dof.json")).unwrap();
        spec.joints[2].kind = JointKind::Prismatic;
        spec.joints[2].axis = [1.0, 1.0, 0.0];
        spec.joints[2].limit_lo = -0.2;
        spec.joints[2].limit_hi = 0.2;
        spec.nominal[2] = 0.05;
        let c = SerialChain::from_spec(&spec).unwrap();
        let th = c.nominal.clone();
        let f = c.frames(&th);
        let j = c.jacobian_from_frames(&f);
        let col: Vector3<f64> = j.fixed_view::<3, 1>(0, 2).into();
        assert_abs_diff_eq!(col, f.axes[2], epsilon = 1e-15);
        assert_abs_diff_eq!(col.norm(), 1.0, epsilon = 1e-12);
        assert_eq!(j.fixed_view::<3, 1>(3, 2).norm(), 0.0);
    }

    #[test]
    fn robot_home_pose_golden() {
        let c = SerialChain::default_robot();
        let home = c.fk_isometry(&DVector::zeros(7));
        assert_abs_diff_eq!(
            home.translation.vector,
            Vector3::new(0.0, 0.0, 1.356),
            epsilon = 1e-12
        );
        let r = home.rotation.to_rotation_matrix();
        let expected = nalgebra::Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert_abs_diff_eq!(*r.matrix(), expected, epsilon = 1e-12);
    }

    #[test]
    fn robot_nominal_pose() {
        let c = SerialChain::default_robot();
        let p = c.fk(&c.nominal);
        assert_abs_diff_eq!(p.p, Vector3::new(0.55, 0.0, 0.30), epsilon = 1e-6);
        assert!(p.q.angle_to(&crate::rotmath::UnitQuaternion::identity()) < 1e-6);
    }

    #[test]
    fn human_nominal_hand() {
        let c = SerialChain::default_human();
        let p = c.fk(&c.nominal);
        // Nominal angles are stored to 8 decimals.
        assert_abs_diff_eq!(p.p, Vector3::new(1.05, 0.0, 0.30), epsilon = 1e-5);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for chain in [SerialChain::default_robot(), SerialChain::default_human()] {
            for _ in 0..100 {
                let th = DVector::from_iterator(
                    chain.dof(),
                    (0..chain.dof()).map(|i| rng.gen_range(chain.lower[i]..chain.upper[i])),
                );
                let j = chain.jacobian(&th);
                let t0 = chain.fk_isometry(&th);
                let h = 1e-7;
                for i in 0..chain.dof() {
                    let mut tp = th.clone();
                    tp[i] += h;
                    let mut tm = th.clone();
                    tm[i] -= h;
                    let ip = chain.fk_isometry(&tp);
                    let im = chain.fk_isometry(&tm);
                    let dp = (ip.translation.vector - im.translation.vector) / (2.0 * h);
                    let dr = (ip.rotation * im.rotation.inverse()).scaled_axis() / (2.0 * h);
                    let col = j.column(i);
                    for k in 0..3 {
                        assert!((dp[k] - col[k]).abs() < 1e-5, "{dp} vs {col}");
                        assert!((dr[k] - col[k + 3]).abs() < 1e-5);
                    }
                }
                assert!(t0.translation.vector.iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn limit_distances() {
        let c = SerialChain::default_robot();
        let mid = (&c.lower + &c.upper) * 0.5;
        let (lo, hi) = c.joint_limit_distances(&mid);
        assert!(lo.iter().all(|d| *d > 0.0));
        assert!(hi.iter().all(|d| *d < 0.0));
        let (lo, _) = c.joint_limit_distances(&c.lower);
        assert!(lo.iter().all(|d| *d == 0.0));
        let (_, hi) = c.joint_limit_distances(&c.upper);
        assert!(hi.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec: ChainSpec =
            serde_json::from_str(include_str!("../../data/robot_7dof.json")).unwrap();
        spec.nominal.pop();
        assert!(SerialChain::from_spec(&spec).is_err());
        let mut spec: ChainSpec =
            serde_json::from_str(include_str!("../../data/robot_7dof.json")).unwrap();
        spec.joints[0].limit_lo = 3.0;
        assert!(SerialChain::from_spec(&spec).is_err());
        assert!(SerialChain::from_json_str(r#"{"joints": [], "nominal": [], "extra": 1}"#).is_err());
    }
}
