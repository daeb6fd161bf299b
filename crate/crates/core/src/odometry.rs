//! Scan-to-scan motion estimation by Levenberg-Marquardt.
//!
//! Edge features pair with the line through their two nearest edge points
//! in the previous sweep, planar features with the plane through their
//! three nearest planar points. The rigid motion minimizing the
//! Huber-weighted point-to-line and point-to-plane distances is found by
//! LM with re-association every iteration: damping shrinks tenfold on an
//! accepted step and grows tenfold on a rejected one, so the recorded cost
//! sequence never increases.

use crate::features::FeatureSet;
use crate::geom::{hat, so3_exp, so3_right_jacobian, Point3, Pose};
use crate::runpar;
use crate::spatial::PointGrid;
use nalgebra::{Matrix6, Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdometryError {
    #[error("only {found} correspondences (need {need}); scans do not overlap enough")]
    InsufficientOverlap { found: usize, need: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct OdometryParams {
    /// Correspondence distance gate, meters.
    pub gate: f64,
    /// Huber loss transition point, meters.
    pub huber_delta: f64,
    pub max_iterations: usize,
    /// Convergence threshold on the LM step norm.
    pub step_tolerance: f64,
    pub min_correspondences: usize,
    pub lambda_init: f64,
}

impl Default for OdometryParams {
    fn default() -> Self {
        Self {
            gate: 1.0,
            huber_delta: 0.1,
            max_iterations: 30,
            step_tolerance: 1e-6,
            min_correspondences: 10,
            lambda_init: 1e-4,
        }
    }
}

/// Target primitive of a correspondence.
#[derive(Debug, Clone, Copy)]
pub enum TargetPrimitive {
    /// Line through two previous edge points.
    Line { a: Point3, b: Point3 },
    /// Plane through three previous planar points.
    Plane { a: Point3, b: Point3, c: Point3 },
}

#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    /// Source point in the current sweep's frame.
    pub source: Point3,
    pub target: TargetPrimitive,
    /// Distance at the association state, meters.
    pub residual: f64,
}

/// Estimated rigid motion between two sweeps (previous → current frame
/// mapping: `p_prev = delta * p_cur`).
#[derive(Debug, Clone)]
pub struct MotionEstimate {
    pub delta: Pose,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub inliers: usize,
    /// Cost after each accepted step (non-increasing).
    pub accepted_costs: Vec<f64>,
}

const LINE_MIN_LENGTH: f64 = 1e-6;
const PLANE_MIN_AREA: f64 = 1e-8;

fn transform(state: &[f64; 6], p: &Point3) -> Vector3<f64> {
    let omega = Vector3::new(state[0], state[1], state[2]);
    let t = Vector3::new(state[3], state[4], state[5]);
    so3_exp(&omega) * p.as_vector() + t
}

fn point_to_target(p: &Vector3<f64>, target: &TargetPrimitive) -> Option<f64> {
    match target {
        TargetPrimitive::Line { a, b } => {
            let u = b.as_vector() - a.as_vector();
            let len = u.norm();
            if len < LINE_MIN_LENGTH {
                return None;
            }
            let u = u / len;
            Some((p - a.as_vector()).cross(&u).norm())
        }
        TargetPrimitive::Plane { a, b, c } => {
            let n = (b.as_vector() - a.as_vector()).cross(&(c.as_vector() - a.as_vector()));
            let norm = n.norm();
            if 0.5 * norm < PLANE_MIN_AREA {
                return None;
            }
            Some((p - a.as_vector()).dot(&(n / norm)))
        }
    }
}

/// Pairs each current feature with its target primitive in the previous
/// sweep under the transform `guess` applied to current points.
pub fn associate(
    current: &FeatureSet,
    previous: &FeatureSet,
    guess: &Pose,
    params: &OdometryParams,
) -> Result<Vec<Correspondence>, OdometryError> {
    let state = pose_to_state(guess);
    let corrs = associate_state(current, &PreviousIndex::build(previous, params), &state, params);
    if corrs.len() < params.min_correspondences {
        return Err(OdometryError::InsufficientOverlap {
            found: corrs.len(),
            need: params.min_correspondences,
        });
    }
    Ok(corrs)
}

/// Grid indexes over the previous sweep's feature classes.
struct PreviousIndex {
    edges: PointGrid,
    planars: PointGrid,
}

impl PreviousIndex {
    fn build(previous: &FeatureSet, params: &OdometryParams) -> Self {
        let e: Vec<Point3> = previous.edges.iter().map(|f| f.position).collect();
        let p: Vec<Point3> = previous.planars.iter().map(|f| f.position).collect();
        Self {
            edges: PointGrid::build(&e, params.gate),
            planars: PointGrid::build(&p, params.gate),
        }
    }
}

fn associate_state(
    current: &FeatureSet,
    index: &PreviousIndex,
    state: &[f64; 6],
    params: &OdometryParams,
) -> Vec<Correspondence> {
    let edge_corrs: Vec<Option<Correspondence>> = runpar::map_vec(&current.edges, |f| {
        let p = transform(state, &f.position);
        let nn = index.edges.nearest_k(&Point3::from_vector(p), 2, params.gate);
        if nn.len() < 2 {
            return None;
        }
        let target = TargetPrimitive::Line {
            a: *index.edges.point(nn[0].0),
            b: *index.edges.point(nn[1].0),
        };
        point_to_target(&p, &target).map(|residual| Correspondence {
            source: f.position,
            target,
            residual: residual.abs(),
        })
    });
    let planar_corrs: Vec<Option<Correspondence>> = runpar::map_vec(&current.planars, |f| {
        let p = transform(state, &f.position);
        let nn = index
            .planars
            .nearest_k(&Point3::from_vector(p), 3, params.gate);
        if nn.len() < 3 {
            return None;
        }
        let target = TargetPrimitive::Plane {
            a: *index.planars.point(nn[0].0),
            b: *index.planars.point(nn[1].0),
            c: *index.planars.point(nn[2].0),
        };
        point_to_target(&p, &target).map(|residual| Correspondence {
            source: f.position,
            target,
            residual: residual.abs(),
        })
    });
    edge_corrs
        .into_iter()
        .chain(planar_corrs)
        .flatten()
        .collect()
}

/// Signed residual and its analytic 1×6 Jacobian w.r.t. the state
/// `(axis-angle, translation)`. `None` on a degenerate target.
pub fn residual_and_jacobian(c: &Correspondence, state: &[f64; 6]) -> Option<(f64, Vector6<f64>)> {
    let omega = Vector3::new(state[0], state[1], state[2]);
    let rot = so3_exp(&omega);
    let p = rot * c.source.as_vector() + Vector3::new(state[3], state[4], state[5]);

    // ∂p/∂ω = −R [source]× Jr(ω); ∂p/∂t = I
    let dp_domega = -(rot.to_rotation_matrix().matrix()
        * hat(&c.source.as_vector())
        * so3_right_jacobian(&omega));

    let (residual, dr_dp): (f64, Vector3<f64>) = match &c.target {
        TargetPrimitive::Line { a, b } => {
            let u = b.as_vector() - a.as_vector();
            let len = u.norm();
            if len < LINE_MIN_LENGTH {
                return None;
            }
            let u = u / len;
            let v = (p - a.as_vector()).cross(&u);
            let r = v.norm();
            if r < 1e-12 {
                return Some((0.0, Vector6::zeros()));
            }
            (r, u.cross(&v) / r)
        }
        TargetPrimitive::Plane { a, b, c: cc } => {
            let n = (b.as_vector() - a.as_vector()).cross(&(cc.as_vector() - a.as_vector()));
            let norm = n.norm();
            if 0.5 * norm < PLANE_MIN_AREA {
                return None;
            }
            let n = n / norm;
            ((p - a.as_vector()).dot(&n), n)
        }
    };

    let j_omega = dp_domega.transpose() * dr_dp;
    let mut jac = Vector6::zeros();
    jac.fixed_rows_mut::<3>(0).copy_from(&j_omega);
    jac.fixed_rows_mut::<3>(3).copy_from(&dr_dp);
    Some((residual, jac))
}

fn pose_to_state(pose: &Pose) -> [f64; 6] {
    let w = pose.rotation.scaled_axis();
    [
        w.x,
        w.y,
        w.z,
        pose.translation.x,
        pose.translation.y,
        pose.translation.z,
    ]
}

fn state_to_pose(state: &[f64; 6]) -> Pose {
    Pose::new(
        Vector3::new(state[3], state[4], state[5]),
        so3_exp(&Vector3::new(state[0], state[1], state[2])),
    )
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

fn huber_cost(residuals: &[f64], delta: f64) -> f64 {
    residuals
        .iter()
        .map(|r| {
            let a = r.abs();
            if a <= delta {
                r * r
            } else {
                delta * (2.0 * a - delta)
            }
        })
        .sum()
}

/// Full LM loop between two feature sets, starting from the IMU-predicted
/// `init`. Returns the best state so far with `converged = false` when the
/// iteration budget runs out.
pub fn estimate_transform(
    current: &FeatureSet,
    previous: &FeatureSet,
    init: &Pose,
    params: &OdometryParams,
) -> Result<MotionEstimate, OdometryError> {
    let index = PreviousIndex::build(previous, params);
    let mut state = pose_to_state(init);

    let eval = |state: &[f64; 6]| -> (Vec<Correspondence>, f64) {
        let corrs = associate_state(current, &index, state, params);
        let residuals: Vec<f64> = corrs.iter().map(|c| c.residual).collect();
        let cost = huber_cost(&residuals, params.huber_delta);
        (corrs, cost)
    };

    let (mut corrs, mut cost) = eval(&state);
    if corrs.len() < params.min_correspondences {
        return Err(OdometryError::InsufficientOverlap {
            found: corrs.len(),
            need: params.min_correspondences,
        });
    }

    let mut lambda = params.lambda_init;
    let mut accepted_costs = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..params.max_iterations {
        iterations += 1;
        let rows: Vec<Option<(f64, Vector6<f64>)>> =
            runpar::map_vec(&corrs, |c| residual_and_jacobian(c, &state));
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for row in rows.iter().flatten() {
            let (r, jac) = row;
            let w = huber_weight(*r, params.huber_delta);
            h += jac * jac.transpose() * w;
            g += jac * (*r * w);
        }

        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
        }
        let step = match damped.cholesky() {
            Some(ch) => ch.solve(&(-g)),
            None => break,
        };

        let mut candidate = state;
        for i in 0..6 {
            candidate[i] += step[i];
        }
        let (new_corrs, new_cost) = eval(&candidate);
        if new_corrs.len() >= params.min_correspondences && new_cost <= cost {
            state = candidate;
            corrs = new_corrs;
            cost = new_cost;
            accepted_costs.push(cost);
            lambda = (lambda / 10.0).max(1e-12);
            if step.norm() < params.step_tolerance {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e8 {
                break;
            }
        }
    }

    debug_assert!(
        accepted_costs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
        "accepted LM costs must not increase"
    );

    Ok(MotionEstimate {
        delta: state_to_pose(&state),
        iterations,
        final_cost: cost,
        converged,
        inliers: corrs.len(),
        accepted_costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeaturePoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feature(p: Point3, index: usize) -> FeaturePoint {
        FeaturePoint {
            position: p,
            phi: 1.0,
            index,
        }
    }

    /// A synthetic scene: three mutually tilted planes and two edge lines,
    /// densely sampled.
    fn scene_features(seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut planars = Vec::new();
        for i in 0..240 {
            let u: f64 = rng.gen_range(-3.0..3.0);
            let v: f64 = rng.gen_range(-3.0..3.0);
            let p = match i % 3 {
                0 => Point3::new(u, v, 0.1 * u),          // floor-ish
                1 => Point3::new(8.0 + 0.05 * v, u, v + 3.0), // wall x
                _ => Point3::new(u, 7.0 - 0.03 * u, v + 3.0), // wall y
            };
            planars.push(feature(p, i));
        }
        let mut edges = Vec::new();
        for i in 0..60 {
            let z: f64 = rng.gen_range(0.0..4.0);
            let p = if i % 2 == 0 {
                Point3::new(4.0, 2.0, z)
            } else {
                Point3::new(-2.0, 5.0, z)
            };
            edges.push(feature(p, 1000 + i));
        }
        FeatureSet { edges, planars }
    }

    fn transformed(set: &FeatureSet, pose: &Pose) -> FeatureSet {
        FeatureSet {
            edges: set
                .edges
                .iter()
                .map(|f| feature(pose.transform_point(&f.position), f.index))
                .collect(),
            planars: set
                .planars
                .iter()
                .map(|f| feature(pose.transform_point(&f.position), f.index))
                .collect(),
        }
    }

    #[test]
    fn self_association_has_zero_residuals() {
        let set = scene_features(1);
        let corrs = associate(&set, &set, &Pose::identity(), &OdometryParams::default()).unwrap();
        assert!(corrs.len() >= set.len() / 2);
        for c in &corrs {
            assert!(c.residual < 1e-12);
        }
    }

    #[test]
    fn empty_previous_is_insufficient() {
        let set = scene_features(2);
        let empty = FeatureSet::default();
        assert!(matches!(
            associate(&set, &empty, &Pose::identity(), &OdometryParams::default()),
            Err(OdometryError::InsufficientOverlap { .. })
        ));
    }

    #[test]
    fn correct_guess_cancels_translation() {
        let prev = scene_features(3);
        let delta = Pose::from_translation(0.1, 0.0, 0.0);
        // current points are the same world points seen from a sensor moved
        // by delta: p_cur = delta⁻¹ p_prev
        let current = transformed(&prev, &delta.inverse());
        let corrs = associate(&current, &prev, &delta, &OdometryParams::default()).unwrap();
        for c in &corrs {
            assert!(c.residual < 1e-9, "residual {}", c.residual);
        }
    }

    #[test]
    fn plane_residual_and_jacobian_basics() {
        // point 1 m above the z=0 plane: residual 1, translation-z entry 1
        let corr = Correspondence {
            source: Point3::new(0.3, -0.2, 1.0),
            target: TargetPrimitive::Plane {
                a: Point3::new(0.0, 0.0, 0.0),
                b: Point3::new(1.0, 0.0, 0.0),
                c: Point3::new(0.0, 1.0, 0.0),
            },
            residual: 1.0,
        };
        let (r, jac) = residual_and_jacobian(&corr, &[0.0; 6]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!((jac[5] - 1.0).abs() < 1e-12);
        assert!(jac[3].abs() < 1e-12 && jac[4].abs() < 1e-12);
    }

    #[test]
    fn point_on_line_has_zero_residual() {
        let corr = Correspondence {
            source: Point3::new(0.5, 0.0, 0.0),
            target: TargetPrimitive::Line {
                a: Point3::new(0.0, 0.0, 0.0),
                b: Point3::new(1.0, 0.0, 0.0),
            },
            residual: 0.0,
        };
        let (r, _) = residual_and_jacobian(&corr, &[0.0; 6]).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 1000 {
            let mut rand_pt =
                || Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let target = if checked % 2 == 0 {
                TargetPrimitive::Line {
                    a: rand_pt(),
                    b: rand_pt(),
                }
            } else {
                TargetPrimitive::Plane {
                    a: rand_pt(),
                    b: rand_pt(),
                    c: rand_pt(),
                }
            };
            let corr = Correspondence {
                source: rand_pt(),
                target,
                residual: 0.0,
            };
            let mut state = [0.0; 6];
            for s in state.iter_mut().take(3) {
                *s = rng.gen_range(-1.0..1.0);
            }
            for s in state.iter_mut().skip(3) {
                *s = rng.gen_range(-2.0..2.0);
            }

            let Some((_, analytic)) = residual_and_jacobian(&corr, &state) else {
                continue;
            };
            let h = 1e-6;
            let mut fd = Vector6::zeros();
            let mut ok = true;
            for i in 0..6 {
                let mut sp = state;
                let mut sm = state;
                sp[i] += h;
                sm[i] -= h;
                let rp = point_to_target(&transform(&sp, &corr.source), &corr.target);
                let rm = point_to_target(&transform(&sm, &corr.source), &corr.target);
                match (rp, rm) {
                    (Some(rp), Some(rm)) => fd[i] = (rp - rm) / (2.0 * h),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || fd.norm() < 1e-3 {
                continue;
            }
            let rel = (analytic - fd).norm() / fd.norm();
            assert!(rel < 1e-5, "relative jacobian error {rel}");
            checked += 1;
        }
    }

    #[test]
    fn identical_sets_converge_to_identity() {
        let set = scene_features(4);
        let est =
            estimate_transform(&set, &set, &Pose::identity(), &OdometryParams::default()).unwrap();
        assert!(est.converged);
        assert!(est.iterations <= 2, "iterations {}", est.iterations);
        assert!(est.delta.translation.norm() < 1e-9);
        assert!(est.delta.rotation.angle() < 1e-9);
    }

    #[test]
    fn recovers_small_translation() {
        let prev = scene_features(5);
        let truth = Pose::from_translation(0.1, -0.04, 0.05);
        let current = transformed(&prev, &truth.inverse());
        let est = estimate_transform(&current, &prev, &Pose::identity(), &OdometryParams::default())
            .unwrap();
        assert!(
            (est.delta.translation - truth.translation).norm() < 1e-6,
            "got {:?}",
            est.delta.translation
        );
        assert!(est.accepted_costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn recovers_small_yaw() {
        let prev = scene_features(6);
        let truth = Pose::from_yaw_translation(5f64.to_radians(), Vector3::new(0.05, 0.0, 0.0));
        let current = transformed(&prev, &truth.inverse());
        let est = estimate_transform(&current, &prev, &Pose::identity(), &OdometryParams::default())
            .unwrap();
        let rot_err = est.delta.rotation.angle_to(&truth.rotation).to_degrees();
        assert!(rot_err < 0.01, "rotation error {rot_err}°");
    }

    #[test]
    fn forward_and_backward_estimates_are_inverse() {
        let a = scene_features(7);
        let truth = Pose::from_yaw_translation(0.03, Vector3::new(0.2, 0.1, -0.05));
        let b = transformed(&a, &truth.inverse());
        let params = OdometryParams::default();
        let fwd = estimate_transform(&b, &a, &Pose::identity(), &params).unwrap();
        let bwd = estimate_transform(&a, &b, &Pose::identity(), &params).unwrap();
        let compose = fwd.delta.compose(&bwd.delta);
        assert!(compose.translation.norm() < 1e-6, "{:?}", compose.translation);
        assert!(compose.rotation.angle() < 1e-6);
    }
}
