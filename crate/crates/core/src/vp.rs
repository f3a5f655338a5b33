//! Robust vanishing-point estimation from line segments.
//!
//! Hypotheses come from pairs of great circles, consensus is scored with
//! Rother's image-plane criterion, and the winning inlier set is refined by
//! the least-squares orthogonality system solved with an SVD.

use nalgebra::{DMatrix, Vector2, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ngc_of_segment, CameraIntrinsics, LineSegment, UnitVector3};
use crate::par::{map_range, map_slice, Execution};

/// Output of [`ransac_vp`].
#[derive(Debug, Clone, PartialEq)]
pub struct VpResult {
    /// Refined vanishing direction, `z >= 0`.
    pub vd: UnitVector3,
    /// Inlier set of the best hypothesis, in input order.
    pub inliers: Vec<LineSegment>,
    /// Positions of `inliers` in the input slice.
    pub inlier_indices: Vec<usize>,
    /// Best consensus score.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub n_loop: usize,
    /// Angular inlier threshold (radians).
    pub theta_th: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rng_seed: u64,
    /// Smallest acceptable consensus set.
    pub min_inliers: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            n_loop: 200,
            theta_th: 0.7f64.to_radians(),
            lambda1: 0.8,
            lambda2: 0.2,
            rng_seed: 0,
            min_inliers: 2,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_loop < 1
            || !(self.theta_th > 0.0)
            || !(self.lambda1 + self.lambda2 > 0.0)
            || self.min_inliers < 2
        {
            return Err(Error::Config(format!("invalid RANSAC config: {self:?}")));
        }
        Ok(())
    }
}

/// Intersection direction of the great circles of two segments.
pub fn vp_hypothesis(
    l_j: &LineSegment,
    l_k: &LineSegment,
    k: &CameraIntrinsics,
) -> Result<UnitVector3> {
    let nj = ngc_of_segment(k, l_j)?;
    let nk = ngc_of_segment(k, l_k)?;
    hypothesis_from_ngcs(&nj, &nk)
}

fn hypothesis_from_ngcs(nj: &UnitVector3, nk: &UnitVector3) -> Result<UnitVector3> {
    UnitVector3::try_normalize(nj.as_vector().cross(nk.as_vector()), 1e-12)
        .map(UnitVector3::canonical)
        .ok_or(Error::CollinearPair)
}

/// Angle between `seg` and the line joining its midpoint to the vanishing
/// point, in `[0, pi/2]`.
///
/// Works in homogeneous pixels so that a vanishing point at infinity still
/// yields a direction.
pub fn line_point_angle(vd: &UnitVector3, seg: &LineSegment, k: &CameraIntrinsics) -> Result<f64> {
    let vp = k.project_homogeneous(vd.as_vector());
    angle_to_vp(&vp, &seg.midpoint(), &seg.direction()).ok_or(Error::UndefinedAngle)
}

fn angle_to_vp(vp: &Vector3<f64>, mid: &Vector2<f64>, dir: &Vector2<f64>) -> Option<f64> {
    let to_vp = Vector2::new(vp.x - vp.z * mid.x, vp.y - vp.z * mid.y);
    let n = to_vp.norm();
    if n <= 1e-9 * vp.z.abs() || n == 0.0 {
        return None;
    }
    let cross = to_vp.x * dir.y - to_vp.y * dir.x;
    let dot = to_vp.dot(dir);
    Some(cross.abs().atan2(dot.abs()))
}

/// Per-segment term of the consensus score; zero at or beyond the threshold.
fn score_term(theta: f64, length: f64, l_m: f64, cfg: &RansacConfig) -> f64 {
    if theta >= cfg.theta_th {
        0.0
    } else {
        cfg.lambda1 * (1.0 - theta / cfg.theta_th) + cfg.lambda2 * (length / l_m)
    }
}

/// Rother consensus score of a vanishing direction over a segment set.
pub fn rother_score(
    vd: &UnitVector3,
    segments: &[LineSegment],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::EmptyInput);
    }
    let l_m = segments.iter().map(LineSegment::length).fold(0.0, f64::max);
    let vp = k.project_homogeneous(vd.as_vector());
    Ok(segments
        .iter()
        .filter_map(|s| {
            angle_to_vp(&vp, &s.midpoint(), &s.direction())
                .map(|theta| score_term(theta, s.length(), l_m, cfg))
        })
        .sum())
}

/// Direction minimizing `|A v|` over unit vectors, `A` stacking the normals.
pub fn solve_vp_svd(ngcs: &[UnitVector3]) -> Result<UnitVector3> {
    solve_vp_weighted(ngcs, &vec![1.0; ngcs.len()])
}

/// As [`solve_vp_svd`] with row `i` scaled by `weights[i]`.
pub fn solve_vp_weighted(ngcs: &[UnitVector3], weights: &[f64]) -> Result<UnitVector3> {
    if weights.len() != ngcs.len() {
        return Err(Error::DimensionMismatch(format!("{} normals, {} weights", ngcs.len(), weights.len())));
    }
    let rows = ngcs.len().max(3);
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    for (i, (n, w)) in ngcs.iter().zip(weights).enumerate() {
        a.set_row(i, &(n.as_vector().transpose() * *w));
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::RankDeficient)?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    if order.len() < 3 || svd.singular_values[order[1]] < 1e-9 * svd.singular_values[order[2]].max(1.0) {
        return Err(Error::RankDeficient);
    }
    let v = v_t.row(order[0]).transpose();
    Ok(UnitVector3::new_normalize(Vector3::new(v[0], v[1], v[2])).canonical())
}

/// RANSAC vanishing-point estimation with the default execution mode.
pub fn ransac_vp(
    segments: &[LineSegment],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<VpResult> {
    ransac_vp_with(segments, k, cfg, Execution::default())
}

struct Prepared {
    ngc: Option<UnitVector3>,
    mid: Vector2<f64>,
    dir: Vector2<f64>,
    length: f64,
}

/// RANSAC vanishing-point estimation.
///
/// Sample pairs are drawn up front from a seeded ChaCha stream, hypotheses
/// are scored (possibly in parallel), and the best is picked by a
/// sequential scan with a strict `>`, so the first of equal scores wins and
/// the result does not depend on `exec`. The inlier normals are refined
/// with weights proportional to segment length, since the direction error
/// of a segment with noisy endpoints falls off with its length.
pub fn ransac_vp_with(
    segments: &[LineSegment],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
    exec: Execution,
) -> Result<VpResult> {
    cfg.validate()?;
    if segments.len() < 2 {
        return Err(Error::TooFewSegments(segments.len()));
    }
    let prepared: Vec<Prepared> = map_slice(exec, segments, |s| Prepared {
        ngc: ngc_of_segment(k, s).ok(),
        mid: s.midpoint(),
        dir: s.direction(),
        length: s.length(),
    });
    let l_m = prepared.iter().map(|p| p.length).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let samples: Vec<(usize, usize)> = (0..cfg.n_loop)
        .map(|_| {
            let pick = index::sample(&mut rng, segments.len(), 2);
            (pick.index(0), pick.index(1))
        })
        .collect();

    let hypothesis = |i: usize| -> Option<(UnitVector3, Vector3<f64>)> {
        let (j, m) = samples[i];
        let v = hypothesis_from_ngcs(prepared[j].ngc.as_ref()?, prepared[m].ngc.as_ref()?).ok()?;
        Some((v, k.project_homogeneous(v.as_vector())))
    };
    let scores: Vec<f64> = map_range(exec, samples.len(), |i| {
        hypothesis(i).map_or(0.0, |(_, vp)| {
            prepared
                .iter()
                .filter_map(|p| {
                    angle_to_vp(&vp, &p.mid, &p.dir).map(|t| score_term(t, p.length, l_m, cfg))
                })
                .sum()
        })
    });

    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s > best.map_or(0.0, |b| b.1) {
            best = Some((i, s));
        }
    }
    let Some((best_i, score)) = best else {
        return Err(Error::NoConsensus(0));
    };
    let (_, vp) = hypothesis(best_i).expect("scored hypothesis exists");

    let inlier_indices: Vec<usize> = prepared
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            p.ngc.is_some()
                && angle_to_vp(&vp, &p.mid, &p.dir).is_some_and(|t| t < cfg.theta_th)
        })
        .map(|(i, _)| i)
        .collect();
    if inlier_indices.len() < cfg.min_inliers {
        return Err(Error::NoConsensus(inlier_indices.len()));
    }
    let ngcs: Vec<UnitVector3> = inlier_indices
        .iter()
        .filter_map(|&i| prepared[i].ngc)
        .collect();
    let weights: Vec<f64> = inlier_indices.iter().map(|&i| prepared[i].length / l_m).collect();
    let vd = solve_vp_weighted(&ngcs, &weights)?;
    Ok(VpResult {
        vd,
        inliers: inlier_indices.iter().map(|&i| segments[i]).collect(),
        inlier_indices,
        score,
    })
}
