//! Arc geometry in the I/Q plane: trajectory PCA, diastolic direction and
//! arc-centre estimation for one window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Windows whose first component explains less than this are flagged.
pub const LOW_QUALITY_RATIO: f64 = 0.6;
/// Radius coefficient applied to the window chord.
pub const DEFAULT_ETA: f64 = 5.0;

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Clockwise quarter turn, `[[0, 1], [-1, 0]] * d`.
pub fn rotate_clockwise(d: Point) -> Point {
    [d[1], -d[0]]
}

/// Unsigned angle between two nonzero vectors, in `[0, pi]`.
pub fn angle_between(a: Point, b: Point) -> f64 {
    let cross = a[0] * b[1] - a[1] * b[0];
    cross.abs().atan2(dot(a, b))
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// `v_i = P_{i+1} - P_i`.
pub fn trajectory_vectors(points: &[Point]) -> Vec<Point> {
    points.windows(2).map(|w| sub(w[1], w[0])).collect()
}

pub fn max_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = 0.0f64;
    for (k, a) in points.iter().enumerate() {
        for b in &points[k + 1..] {
            let d = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            best = best.max(d);
        }
    }
    best.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrincipalDirection {
    pub pc1: Point,
    /// `lambda_1 / (lambda_1 + lambda_2)`, in `[0.5, 1]`.
    pub explained_ratio: f64,
}

impl PrincipalDirection {
    pub fn is_low_quality(&self) -> bool {
        self.explained_ratio < LOW_QUALITY_RATIO
    }
}

/// Leading eigenvector of the uncentred second-moment matrix of `vectors`.
pub fn primary_direction(vectors: &[Point]) -> Result<PrincipalDirection> {
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for v in vectors {
        sxx += v[0] * v[0];
        sxy += v[0] * v[1];
        syy += v[1] * v[1];
    }
    let trace = sxx + syy;
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::DegenerateSignal("trajectory vectors are all zero".into()));
    }
    let half_diff = 0.5 * (sxx - syy);
    let disc = half_diff.hypot(sxy);
    let l1 = 0.5 * trace + disc;
    let l2 = (0.5 * trace - disc).max(0.0);
    // Eigenvector of [[a, b], [b, c]] for l1, from whichever row is better conditioned.
    let mut v = if disc == 0.0 {
        [1.0, 0.0]
    } else if sxx >= syy {
        [l1 - syy, sxy]
    } else {
        [sxy, l1 - sxx]
    };
    let len = norm(v);
    v = [v[0] / len, v[1] / len];
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        v = [-v[0], -v[1]];
    }
    Ok(PrincipalDirection {
        pc1: v,
        explained_ratio: l1 / (l1 + l2),
    })
}

/// Direction of slower travel along `pc1`; `None` when one side is empty or
/// both sides move at the same mean speed.
pub fn diastolic_direction(vectors: &[Point], pc1: Point) -> Option<Point> {
    let (mut pos, mut n_pos, mut neg, mut n_neg) = (0.0, 0usize, 0.0, 0usize);
    for v in vectors {
        let p = dot(*v, pc1);
        if p > 0.0 {
            pos += p;
            n_pos += 1;
        } else if p < 0.0 {
            neg -= p;
            n_neg += 1;
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let (mp, mn) = (pos / n_pos as f64, neg / n_neg as f64);
    if mp < mn {
        Some(pc1)
    } else if mn < mp {
        Some([-pc1[0], -pc1[1]])
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcCenterEstimate {
    pub center: Point,
    pub centroid: Point,
    pub pc1: Point,
    pub diastolic_dir: Point,
    pub arc_dir: Point,
    pub d_max: f64,
    pub eta: f64,
    pub explained_ratio: f64,
}

/// `C = centroid + eta * d_max * rot_cw(d)`. `previous_d` is used when the
/// window alone cannot decide the diastolic direction.
pub fn estimate_center(points: &[Point], eta: f64, previous_d: Option<Point>) -> Result<ArcCenterEstimate> {
    if points.len() < 3 {
        return Err(Error::Length {
            found: points.len(),
            remedy: "an arc window needs at least 3 points".into(),
        });
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::DegenerateSignal("non-finite I/Q point".into()));
    }
    let vectors = trajectory_vectors(points);
    let pd = primary_direction(&vectors)?;
    let d = diastolic_direction(&vectors, pd.pc1)
        .or_else(|| previous_d.filter(|p| dot(*p, pd.pc1) != 0.0).map(|p| {
            if dot(p, pd.pc1) > 0.0 {
                pd.pc1
            } else {
                [-pd.pc1[0], -pd.pc1[1]]
            }
        }))
        .ok_or_else(|| Error::DegenerateSignal("diastolic direction undecided".into()))?;
    Ok(center_from(points, pd, d, eta))
}

fn center_from(points: &[Point], pd: PrincipalDirection, d: Point, eta: f64) -> ArcCenterEstimate {
    let g = centroid(points);
    let arc_dir = rotate_clockwise(d);
    let d_max = max_pairwise_distance(points);
    ArcCenterEstimate {
        center: [g[0] + eta * d_max * arc_dir[0], g[1] + eta * d_max * arc_dir[1]],
        centroid: g,
        pc1: pd.pc1,
        diastolic_dir: d,
        arc_dir,
        d_max,
        eta,
        explained_ratio: pd.explained_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    #[test]
    fn trajectory_examples() {
        let v = trajectory_vectors(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(v, vec![[1.0, 0.0], [0.0, 1.0]]);
        let flat = trajectory_vectors(&[[2.0, 3.0]; 5]);
        assert!(flat.iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn circle_vectors_are_tangent() {
        let pts: Vec<Point> = (0..200)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / 200.0;
                [a.cos(), a.sin()]
            })
            .collect();
        for (k, v) in trajectory_vectors(&pts).iter().enumerate() {
            // Radius at the chord midpoint is exactly orthogonal to the chord.
            let mid = [(pts[k][0] + pts[k + 1][0]) / 2.0, (pts[k][1] + pts[k + 1][1]) / 2.0];
            assert!(dot(*v, mid).abs() < 1e-12);
        }
    }

    #[test]
    fn primary_direction_examples() {
        let pd = primary_direction(&[[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]]).unwrap();
        assert!(close(pd.pc1, [1.0, 0.0], 1e-15));
        assert!((pd.explained_ratio - 1.0).abs() < 1e-15);

        let pd = primary_direction(&[[1.0, 1.0], [-1.0, -1.0], [2.0, 2.0]]).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!(close(pd.pc1, [r, r], 1e-12));

        let pd = primary_direction(&[[0.0, -3.0], [0.0, 1.0]]).unwrap();
        assert!(close(pd.pc1, [0.0, 1.0], 1e-15));

        assert!(primary_direction(&[[0.0, 0.0]; 4]).is_err());
    }

    #[test]
    fn isotropic_vectors_are_low_quality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<Point> = (0..5000)
            .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let pd = primary_direction(&v).unwrap();
        assert!((pd.explained_ratio - 0.5).abs() < 0.05);
        assert!(pd.is_low_quality());
    }

    #[test]
    fn diastolic_examples() {
        let v = [[2.0, 0.0], [2.0, 0.0], [-0.5, 0.0], [-0.5, 0.0], [-0.5, 0.0]];
        assert_eq!(diastolic_direction(&v, [1.0, 0.0]), Some([-1.0, 0.0]));
        let sym = [[1.0, 0.0], [-1.0, 0.0]];
        assert_eq!(diastolic_direction(&sym, [1.0, 0.0]), None);
        assert_eq!(diastolic_direction(&[[1.0, 0.0]], [1.0, 0.0]), None);
    }

    #[test]
    fn tie_falls_back_to_previous_direction() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]];
        assert!(estimate_center(&pts, 5.0, None).is_err());
        let est = estimate_center(&pts, 5.0, Some([-0.9, 0.1])).unwrap();
        assert_eq!(est.diastolic_dir, [-1.0, 0.0]);
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotate_clockwise([0.0, 1.0]), [1.0, 0.0]);
        let d = [0.6, -0.8];
        let rr = rotate_clockwise(rotate_clockwise(d));
        assert!(close(rr, [-0.6, 0.8], 0.0));
        assert!((norm(rotate_clockwise(d)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn collinear_center_formula() {
        // Slow steps toward +x, fast steps back; d = (1, 0).
        let mut pts = Vec::new();
        for k in 0..=10 {
            pts.push([k as f64 * 0.1, 0.0]);
        }
        pts.push([0.5, 0.0]);
        pts.push([0.0, 0.0]);
        let est = estimate_center(&pts, 5.0, None).unwrap();
        assert_eq!(est.diastolic_dir, [1.0, 0.0]);
        let g = centroid(&pts);
        assert!(close(est.center, [g[0], g[1] - 5.0 * 1.0], 1e-12));
        assert!((est.d_max - 1.0).abs() < 1e-12);
    }

    /// Points on an arc of a circle with centre `c`, sweeping clockwise slowly
    /// and counterclockwise quickly.
    fn pulsing_arc(c: Point, r: f64, mid: f64, span: f64) -> Vec<Point> {
        let mut out = Vec::new();
        for _ in 0..2 {
            for k in 0..30 {
                let a = mid - span / 2.0 + span * k as f64 / 29.0;
                out.push([c[0] + r * a.cos(), c[1] + r * a.sin()]);
            }
            for k in 0..100 {
                let a = mid + span / 2.0 - span * k as f64 / 99.0;
                out.push([c[0] + r * a.cos(), c[1] + r * a.sin()]);
            }
        }
        out
    }

    #[test]
    fn center_lies_on_concave_side() {
        for (c, mid) in [([0.4, -0.3], 0.7), ([-2.0, 1.0], 2.5), ([0.0, 0.0], -1.9)] {
            let pts = pulsing_arc(c, 1.0, mid, 0.4);
            let est = estimate_center(&pts, 5.0, None).unwrap();
            let g = centroid(&pts);
            let chord = [-(mid.sin()), mid.cos()];
            // Same side of the chord line through the centroid as the true centre.
            let side = |p: Point| {
                let w = sub(p, g);
                w[0] * chord[1] - w[1] * chord[0]
            };
            assert!(side(est.center) * side(c) > 0.0);
        }
    }

    proptest! {
        #[test]
        fn center_is_translation_equivariant(tx in -5.0..5.0f64, ty in -5.0..5.0f64, mid in -3.0..3.0f64) {
            let pts = pulsing_arc([0.1, 0.2], 0.5, mid, 0.5);
            let moved: Vec<Point> = pts.iter().map(|p| [p[0] + tx, p[1] + ty]).collect();
            let a = estimate_center(&pts, 5.0, None).unwrap();
            let b = estimate_center(&moved, 5.0, None).unwrap();
            prop_assert!((b.center[0] - a.center[0] - tx).abs() < 1e-9);
            prop_assert!((b.center[1] - a.center[1] - ty).abs() < 1e-9);
        }

        #[test]
        fn rotation_squares_to_minus_identity(x in -10.0..10.0f64, y in -10.0..10.0f64) {
            let r = rotate_clockwise(rotate_clockwise([x, y]));
            prop_assert_eq!(r, [-x, -y]);
            prop_assert!((norm(rotate_clockwise([x, y])) - norm([x, y])).abs() <= 1e-12 * (1.0 + norm([x, y])));
        }

        #[test]
        fn pc1_is_unit_with_sign_convention(v in proptest::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 2..40)) {
            let vs: Vec<Point> = v.iter().map(|&(a, b)| [a, b]).collect();
            if let Ok(pd) = primary_direction(&vs) {
                prop_assert!((norm(pd.pc1) - 1.0).abs() < 1e-12);
                prop_assert!(pd.pc1[0] > 0.0 || (pd.pc1[0] == 0.0 && pd.pc1[1] >= 0.0));
                prop_assert!(pd.explained_ratio >= 0.5 - 1e-12 && pd.explained_ratio <= 1.0 + 1e-12);
            }
        }
    }
}
