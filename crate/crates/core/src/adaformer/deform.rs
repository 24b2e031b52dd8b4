//! Per-group scaling/rotation transforms and the deformable gather.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{select_members, GroupIndex, PointCloud};

pub type Mat3 = [[f64; 3]; 3];

/// Bound on |ln s| for every predicted scale.
pub const LOG_SCALE_BOUND: f64 = 1.098_612_288_668_109_8; // ln 3

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformParams {
    pub scale: [f64; 3],
    pub angle: [f64; 3],
}

impl DeformParams {
    pub const IDENTITY: DeformParams = DeformParams {
        scale: [1.0; 3],
        angle: [0.0; 3],
    };

    /// `s = exp(clamp(raw, -ln3, ln3))`, `theta = pi * tanh(raw)`.
    pub fn from_raw(raw: &[f64; 6]) -> Self {
        let s = |r: f64| r.clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND).exp();
        let a = |r: f64| PI * r.tanh();
        Self {
            scale: [s(raw[0]), s(raw[1]), s(raw[2])],
            angle: [a(raw[3]), a(raw[4]), a(raw[5])],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformTransform {
    pub m: Mat3,
}

impl DeformTransform {
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_identity(&self) -> bool {
        self.m == IDENTITY
    }
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn scale_mat(s: [f64; 3]) -> Mat3 {
    [[s[0], 0.0, 0.0], [0.0, s[1], 0.0], [0.0, 0.0, s[2]]]
}

pub fn rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Note the sign layout: -sin in the top-right entry.
pub fn rot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]]
}

pub fn rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn d_rot_x(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]]
}

fn d_rot_y(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[-s, 0.0, -c], [0.0, 0.0, 0.0], [c, 0.0, -s]]
}

fn d_rot_z(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]]
}

/// `T = T_s * T_rx * T_ry * T_rz`.
pub fn build_transform(p: &DeformParams) -> DeformTransform {
    let r = mat_mul(
        &mat_mul(&rot_x(p.angle[0]), &rot_y(p.angle[1])),
        &rot_z(p.angle[2]),
    );
    DeformTransform {
        m: mat_mul(&scale_mat(p.scale), &r),
    }
}

/// Derivatives of `T` with respect to each of the six raw regression outputs.
pub fn transform_jacobian(raw: &[f64; 6]) -> [Mat3; 6] {
    let p = DeformParams::from_raw(raw);
    let [ax, ay, az] = p.angle;
    let (rx, ry, rz) = (rot_x(ax), rot_y(ay), rot_z(az));
    let rot = mat_mul(&mat_mul(&rx, &ry), &rz);
    let s = scale_mat(p.scale);
    let mut out = [[[0.0; 3]; 3]; 6];
    for a in 0..3 {
        let inside = raw[a].abs() < LOG_SCALE_BOUND;
        if inside {
            // d s_a / d raw_a = s_a; only row a of T depends on s_a
            for j in 0..3 {
                out[a][a][j] = p.scale[a] * rot[a][j];
            }
        }
    }
    let dtheta = |r: f64| {
        let t = r.tanh();
        PI * (1.0 - t * t)
    };
    let terms = [
        mat_mul(&s, &mat_mul(&mat_mul(&d_rot_x(ax), &ry), &rz)),
        mat_mul(&s, &mat_mul(&mat_mul(&rx, &d_rot_y(ay)), &rz)),
        mat_mul(&s, &mat_mul(&mat_mul(&rx, &ry), &d_rot_z(az))),
    ];
    for (a, term) in terms.iter().enumerate() {
        let d = dtheta(raw[3 + a]);
        for i in 0..3 {
            for j in 0..3 {
                out[3 + a][i][j] = d * term[i][j];
            }
        }
    }
    out
}

/// Gathers the `k` points whose transformed, radius-normalized offsets
/// `T (c_i - c_j) / r` lie closest to the origin inside the unit sphere.
pub fn deform_group(
    cloud: &PointCloud,
    center_index: usize,
    t: &DeformTransform,
    r: f64,
    k: usize,
) -> Result<GroupIndex> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if center_index >= cloud.len() || !(r > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "deform_group: center {center_index} of {}, r={r}, k={k}",
            cloud.len()
        )));
    }
    let c = cloud.points[center_index];
    let inv_r = 1.0 / r;
    let keys: Vec<f64> = cloud
        .points
        .iter()
        .map(|&p| {
            let d = (p - c) * inv_r;
            let v = t.apply(d.to_array());
            v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        })
        .collect();
    let (member_indices, fallback) = select_members(&keys, k);
    Ok(GroupIndex {
        center_index,
        member_indices,
        fallback,
    })
}
