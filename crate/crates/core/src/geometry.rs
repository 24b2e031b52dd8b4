//! Oriented boxes, rotated IoU and the sampling/grouping primitives shared by
//! the encoder and the evaluator.
//!
//! Axis convention: z is up. At yaw 0 a box's length `l` runs along local x,
//! its width `w` along local y and its height `h` along z.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Collinearity tolerance (meters) used by the polygon clipper.
pub const CLIP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(self, o: Vec3) -> f64 {
        (self - o).norm_sq()
    }

    pub fn dist(self, o: Vec3) -> f64 {
        self.dist_sq(o).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Componentwise product.
    pub fn hadamard(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    /// Rotation about the z axis.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vec3::ZERO, |acc, &p| acc + p);
        Some(sum * (1.0 / self.points.len() as f64))
    }
}

impl From<Vec<Vec3>> for PointCloud {
    fn from(points: Vec<Vec3>) -> Self {
        Self { points }
    }
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Oriented box with rotation restricted to the up axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox3D {
    pub center: Vec3,
    pub w: f64,
    pub h: f64,
    pub l: f64,
    pub yaw: f64,
}

impl BBox3D {
    pub fn new(center: Vec3, w: f64, h: f64, l: f64, yaw: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && l > 0.0) || !w.is_finite() || !h.is_finite() || !l.is_finite() {
            return Err(Error::InvalidBox(format!(
                "extents must be positive and finite, got w={w} h={h} l={l}"
            )));
        }
        if !center.is_finite() || !yaw.is_finite() {
            return Err(Error::InvalidBox("non-finite center or yaw".into()));
        }
        Ok(Self {
            center,
            w,
            h,
            l,
            yaw: normalize_angle(yaw),
        })
    }

    /// Shorthand used heavily in tests: `(cx, cy, cz, w, h, l, yaw)`.
    pub fn from_params(
        cx: f64,
        cy: f64,
        cz: f64,
        w: f64,
        h: f64,
        l: f64,
        yaw: f64,
    ) -> Result<Self> {
        Self::new(Vec3::new(cx, cy, cz), w, h, l, yaw)
    }

    /// Extents along the canonical axes: (l, w, h) for (x, y, z).
    pub fn axis_extents(&self) -> Vec3 {
        Vec3::new(self.l, self.w, self.h)
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }

    /// Same box with every extent replaced.
    pub fn with_extents(&self, w: f64, h: f64, l: f64) -> Result<Self> {
        Self::new(self.center, w, h, l, self.yaw)
    }

    /// BEV corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.l / 2.0;
        let hw = self.w / 2.0;
        let local = [[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]];
        local.map(|[x, y]| [self.center.x + c * x - s * y, self.center.y + s * x + c * y])
    }

    /// All eight corners: bottom face first, both faces counter-clockwise.
    pub fn corners(&self) -> [Vec3; 8] {
        let bev = self.bev_corners();
        let zb = self.center.z - self.h / 2.0;
        let zt = self.center.z + self.h / 2.0;
        let mut out = [Vec3::ZERO; 8];
        for (i, [x, y]) in bev.iter().enumerate() {
            out[i] = Vec3::new(*x, *y, zb);
            out[i + 4] = Vec3::new(*x, *y, zt);
        }
        out
    }

    pub fn to_local(&self, p: Vec3) -> Vec3 {
        (p - self.center).rotate_z(-self.yaw)
    }

    pub fn from_local(&self, p: Vec3) -> Vec3 {
        p.rotate_z(self.yaw) + self.center
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let q = self.to_local(p);
        q.x.abs() <= self.l / 2.0 && q.y.abs() <= self.w / 2.0 && q.z.abs() <= self.h / 2.0
    }

    fn sort_key(&self) -> [f64; 7] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.w,
            self.h,
            self.l,
            self.yaw,
        ]
    }
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon (positive for counter-clockwise).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    acc / 2.0
}

/// Clips `subject` against the convex counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let edge_len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        // signed distance to the clip edge, positive on the inner side
        let side = |p: [f64; 2]| cross2(a, b, p) / edge_len;
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let dc = side(cur);
            let dp = side(prev);
            let cur_in = dc >= -CLIP_EPS;
            let prev_in = dp >= -CLIP_EPS;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, dp, dc));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    output
}

fn intersect(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn interval_overlap(c1: f64, h1: f64, c2: f64, h2: f64) -> f64 {
    let lo = (c1 - h1 / 2.0).max(c2 - h2 / 2.0);
    let hi = (c1 + h1 / 2.0).min(c2 + h2 / 2.0);
    (hi - lo).max(0.0)
}

/// BEV intersection area of two boxes.
pub fn bev_intersection_area(a: &BBox3D, b: &BBox3D) -> f64 {
    if a.yaw == 0.0 && b.yaw == 0.0 {
        return interval_overlap(a.center.x, a.l, b.center.x, b.l)
            * interval_overlap(a.center.y, a.w, b.center.y, b.w);
    }
    let clipped = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&clipped).max(0.0)
}

/// 3D IoU of two yaw-rotated boxes: BEV polygon overlap times vertical overlap.
pub fn rotated_iou_3d(a: &BBox3D, b: &BBox3D) -> f64 {
    // fixed argument order makes the result bit-symmetric
    let (a, b) = match cmp_keys(&a.sort_key(), &b.sort_key()) {
        std::cmp::Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let dz = interval_overlap(a.center.z, a.h, b.center.z, b.h);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

fn cmp_keys(a: &[f64; 7], b: &[f64; 7]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

pub fn center_distance(a: &BBox3D, b: &BBox3D) -> f64 {
    a.center.dist(b.center)
}

/// Greedy farthest point sampling seeded at index 0; ties go to the lowest index.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m > n {
        return Err(Error::InsufficientPoints {
            needed: m,
            available: n,
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let pts = &cloud.points;
    let mut picked = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut cur = 0usize;
    for _ in 0..m {
        picked.push(cur);
        taken[cur] = true;
        let c = pts[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            let d = pts[i].dist_sq(c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(picked)
}

/// Neighborhood of one center point, padded to exactly `k` members.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    pub center_index: usize,
    pub member_indices: Vec<usize>,
    /// Set when no point qualified and the globally nearest point was used.
    pub fallback: bool,
}

/// Selects up to `k` members by ascending key among candidates with key <= 1,
/// padding with the nearest member (or the global nearest when none qualify).
pub(crate) fn select_members(keys: &[f64], k: usize) -> (Vec<usize>, bool) {
    let mut inside: Vec<(f64, usize)> = keys
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= 1.0)
        .map(|(i, &d)| (d, i))
        .collect();
    let fallback = inside.is_empty();
    if fallback {
        let nearest = keys
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, &d)| (d, i))
            .expect("non-empty keys");
        inside.push(nearest);
    }
    let sel = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if inside.len() > k {
        inside.select_nth_unstable_by(k - 1, sel);
        inside.truncate(k);
    }
    inside.sort_by(sel);
    let mut members: Vec<usize> = inside.iter().map(|&(_, i)| i).collect();
    let nearest = members[0];
    members.resize(k, nearest);
    (members, fallback)
}

/// The `k` nearest points within `radius` of `center`, sorted by distance then index.
pub fn ball_query_topk(
    cloud: &PointCloud,
    center: Vec3,
    radius: f64,
    k: usize,
) -> Result<GroupIndex> {
    ball_query_at(cloud, center, usize::MAX, radius, k)
}

pub(crate) fn ball_query_at(
    cloud: &PointCloud,
    center: Vec3,
    center_index: usize,
    radius: f64,
    k: usize,
) -> Result<GroupIndex> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(radius > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "ball query needs radius > 0 and k >= 1, got radius={radius} k={k}"
        )));
    }
    let inv = 1.0 / (radius * radius);
    let keys: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| p.dist_sq(center) * inv)
        .collect();
    let (member_indices, fallback) = select_members(&keys, k);
    Ok(GroupIndex {
        center_index,
        member_indices,
        fallback,
    })
}

pub fn crop_points_in_box(cloud: &PointCloud, bbox: &BBox3D) -> PointCloud {
    PointCloud::new(
        cloud
            .points
            .iter()
            .copied()
            .filter(|&p| bbox.contains(p))
            .collect(),
    )
}

/// Maps points into the box frame: `R_z(-yaw) (p - center)`.
pub fn to_canonical(points: &PointCloud, bbox: &BBox3D) -> PointCloud {
    PointCloud::new(points.points.iter().map(|&p| bbox.to_local(p)).collect())
}

pub fn from_canonical(points: &PointCloud, bbox: &BBox3D) -> PointCloud {
    PointCloud::new(points.points.iter().map(|&p| bbox.from_local(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn bx(cx: f64, cy: f64, cz: f64, w: f64, h: f64, l: f64, yaw: f64) -> BBox3D {
        BBox3D::from_params(cx, cy, cz, w, h, l, yaw).unwrap()
    }

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&p| p.into()).collect())
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bx(0.3, -1.0, 0.2, 1.8, 1.6, 4.2, 0.7);
        assert_eq!(rotated_iou_3d(&a, &a), 1.0);
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let b = bx(10.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        assert_eq!(rotated_iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn iou_cocentered_quarter_turn() {
        // the overlap is a regular octagon inscribed in the unit-half-width square
        let a = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, PI / 4.0);
        let octagon = 8.0 * (2.0_f64.sqrt() - 1.0);
        let expected = octagon * 2.0 / (16.0 - octagon * 2.0);
        assert!((expected - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
        assert!((rotated_iou_3d(&a, &b) - expected).abs() < 1e-9);
    }

    #[test]
    fn iou_axis_aligned_closed_form_and_symmetry() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for _ in 0..500 {
            let mut r = || rng.random_range(0.2..3.0);
            let a = bx(r() - 1.5, r() - 1.5, r() - 1.5, r(), r(), r(), 0.0);
            let b = bx(r() - 1.5, r() - 1.5, r() - 1.5, r(), r(), r(), 0.0);
            let ix = interval_overlap(a.center.x, a.l, b.center.x, b.l);
            let iy = interval_overlap(a.center.y, a.w, b.center.y, b.w);
            let iz = interval_overlap(a.center.z, a.h, b.center.z, b.h);
            let inter = ix * iy * iz;
            let expected = inter / (a.volume() + b.volume() - inter);
            assert_eq!(rotated_iou_3d(&a, &b), expected);
        }
        for _ in 0..500 {
            let mut r = || rng.random_range(-2.0..2.0);
            let a = bx(
                r(),
                r(),
                r(),
                r().abs() + 0.1,
                r().abs() + 0.1,
                r().abs() + 0.1,
                r(),
            );
            let b = bx(
                r(),
                r(),
                r(),
                r().abs() + 0.1,
                r().abs() + 0.1,
                r().abs() + 0.1,
                r(),
            );
            let ab = rotated_iou_3d(&a, &b);
            assert_eq!(ab.to_bits(), rotated_iou_3d(&b, &a).to_bits());
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn yaw_wraps_consistently() {
        let a = bx(1.0, 2.0, 0.0, 1.0, 1.0, 3.0, 0.4);
        let b = bx(1.0, 2.0, 0.0, 1.0, 1.0, 3.0, 0.4 + 2.0 * PI);
        for (p, q) in a.corners().iter().zip(b.corners().iter()) {
            assert!(p.dist(*q) < 1e-12);
        }
        assert!(bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, -PI).yaw == PI);
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(BBox3D::from_params(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(BBox3D::from_params(0.0, 0.0, 0.0, 1.0, -1.0, 1.0, 0.0).is_err());
        assert!(BBox3D::from_params(f64::NAN, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn center_distance_examples() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(3.0, 4.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(center_distance(&a, &a), 0.0);
        assert_eq!(center_distance(&a, &b), 5.0);
        let c = bx(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0);
        let d = bx(2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.0);
        assert!((center_distance(&c, &d) - 3.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fps_forced_choice() {
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [2.0, 0.0, 0.0],
        ]);
        assert_eq!(farthest_point_sample(&c, 2).unwrap(), vec![0, 3]);
        let mut all = farthest_point_sample(&c, 4).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(matches!(
            farthest_point_sample(&c, 5),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn fps_greedy_property() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let c = PointCloud::new(
            (0..64)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        );
        let picks = farthest_point_sample(&c, 16).unwrap();
        assert_eq!(picks, farthest_point_sample(&c, 16).unwrap());
        let min_to_picks = |p: Vec3| {
            picks
                .iter()
                .map(|&j| c.points[j].dist(p))
                .fold(f64::INFINITY, f64::min)
        };
        let coverage = (0..64)
            .filter(|i| !picks.contains(i))
            .map(|i| min_to_picks(c.points[i]))
            .fold(0.0, f64::max);
        for (a, &i) in picks.iter().enumerate() {
            for &j in &picks[a + 1..] {
                assert!(c.points[i].dist(c.points[j]) >= coverage);
            }
        }
    }

    #[test]
    fn ball_query_examples() {
        let c = cloud(&[
            [0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0],
            [0.0, 0.3, 0.0],
            [3.0, 0.0, 0.0],
        ]);
        let g = ball_query_topk(&c, Vec3::new(0.5, 0.0, 0.0), 1.0, 1).unwrap();
        assert_eq!(g.member_indices, vec![1]);
        let g = ball_query_topk(&c, Vec3::new(0.1, 0.0, 0.0), 1.0, 5).unwrap();
        assert_eq!(g.member_indices, vec![0, 2, 1, 0, 0]);
        assert!(!g.fallback);
        let g = ball_query_topk(&c, Vec3::new(10.0, 0.0, 0.0), 1.0, 2).unwrap();
        assert_eq!(g.member_indices, vec![3, 3]);
        assert!(g.fallback);
        assert!(matches!(
            ball_query_topk(&PointCloud::default(), Vec3::ZERO, 1.0, 1),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn ball_query_matches_brute_force() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        for _ in 0..20 {
            let c = PointCloud::new(
                (0..100)
                    .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                    .collect(),
            );
            let center = Vec3::new(rng.random(), rng.random(), rng.random());
            let (r, k) = (0.3, 8);
            let mut brute: Vec<(f64, usize)> = c
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| (p.dist(center), i))
                .filter(|(d, _)| *d <= r)
                .collect();
            brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let g = ball_query_topk(&c, center, r, k).unwrap();
            let got: Vec<usize> = g
                .member_indices
                .iter()
                .take(brute.len().min(k))
                .copied()
                .collect();
            let want: Vec<usize> = brute.iter().take(k).map(|x| x.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn crop_examples() {
        let b = bx(0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 0.0);
        let c = cloud(&[[0.5, 0.0, 0.0], [1.01, 0.0, 0.0]]);
        assert_eq!(
            crop_points_in_box(&c, &b).points,
            vec![Vec3::new(0.5, 0.0, 0.0)]
        );
        let b = bx(0.0, 0.0, 0.0, 0.5, 2.0, 2.0, PI / 2.0);
        let c = cloud(&[[0.0, 0.9, 0.0], [0.9, 0.0, 0.0]]);
        // corner-transform oracle: the long side now spans y in [-1, 1]
        let ys: Vec<f64> = b.corners().iter().map(|p| p.y).collect();
        let xs: Vec<f64> = b.corners().iter().map(|p| p.x).collect();
        let (ymax, xmax) = (
            ys.iter().cloned().fold(f64::MIN, f64::max),
            xs.iter().cloned().fold(f64::MIN, f64::max),
        );
        assert!((ymax - 1.0).abs() < 1e-12 && (xmax - 0.25).abs() < 1e-12);
        assert_eq!(
            crop_points_in_box(&c, &b).points,
            vec![Vec3::new(0.0, 0.9, 0.0)]
        );
    }

    #[test]
    fn canonical_examples() {
        let b = bx(1.0, 2.0, 3.0, 1.0, 1.0, 1.0, 0.0);
        let p = to_canonical(&cloud(&[[1.0, 2.0, 3.0]]), &b);
        assert_eq!(p.points[0], Vec3::ZERO);
        let b = bx(1.0, 2.0, 3.0, 1.0, 1.0, 1.0, PI / 2.0);
        let p = to_canonical(&cloud(&[[1.0, 3.0, 3.0]]), &b);
        assert!(p.points[0].dist(Vec3::new(1.0, 0.0, 0.0)) < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn canonical_roundtrip(cx in -50.0..50.0f64, cy in -50.0..50.0f64, yaw in -4.0..4.0f64,
                               px in -50.0..50.0f64, py in -50.0..50.0f64, pz in -5.0..5.0f64) {
            let b = bx(cx, cy, 0.5, 1.0, 1.0, 1.0, yaw);
            let c = PointCloud::new(vec![Vec3::new(px, py, pz)]);
            let back = from_canonical(&to_canonical(&c, &b), &b);
            proptest::prop_assert!(back.points[0].dist(c.points[0]) < 1e-12);
        }

        #[test]
        fn crop_rigid_invariance(tx in -20.0..20.0f64, ty in -20.0..20.0f64, rot in -3.0..3.0f64, seed in 0u64..1000) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let b = bx(0.2, -0.1, 0.0, 1.2, 1.0, 2.5, 0.3);
            let c = PointCloud::new((0..200).map(|_| Vec3::new(
                rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0))).collect());
            let mv = |p: Vec3| p.rotate_z(rot) + Vec3::new(tx, ty, 0.0);
            let b2 = BBox3D::new(mv(b.center), b.w, b.h, b.l, b.yaw + rot).unwrap();
            let c2 = PointCloud::new(c.points.iter().map(|&p| mv(p)).collect());
            let inside: Vec<bool> = c.points.iter().map(|&p| b.contains(p)).collect();
            let inside2: Vec<bool> = c2.points.iter().map(|&p| b2.contains(p)).collect();
            // rounding can only flip points sitting on a face
            for (i, (a, z)) in inside.iter().zip(&inside2).enumerate() {
                if a != z {
                    let q = b.to_local(c.points[i]);
                    let margin = (q.x.abs() - b.l / 2.0).abs()
                        .min((q.y.abs() - b.w / 2.0).abs())
                        .min((q.z.abs() - b.h / 2.0).abs());
                    proptest::prop_assert!(margin < 1e-9);
                }
            }
        }
    }
}
