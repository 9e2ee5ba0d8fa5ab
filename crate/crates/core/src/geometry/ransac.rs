//! Robust alignment of corner correspondences between the two camera views.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, SymmetricEigen, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformModel {
    Affine,
    Homography,
}

impl TransformModel {
    pub fn minimal_sample(self) -> usize {
        match self {
            TransformModel::Affine => 3,
            TransformModel::Homography => 4,
        }
    }
}

/// Point pairs `(view A, view B)` in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<(Point2<f64>, Point2<f64>)>,
    pub model: TransformModel,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Point2<f64>, Point2<f64>)>, model: TransformModel) -> Result<Self> {
        if pairs.len() < model.minimal_sample() {
            return Err(contract(format!(
                "{model:?} needs at least {} pairs, got {}",
                model.minimal_sample(),
                pairs.len()
            )));
        }
        Ok(Self { pairs, model })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// Maps view-A points to view-B points; `h33 = 1`.
    pub transform: Matrix3<f64>,
    pub inliers: Vec<bool>,
}

impl Alignment {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

pub fn apply_transform(t: &Matrix3<f64>, p: &Point2<f64>) -> Option<Point2<f64>> {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    (v.z.abs() > 1e-12).then(|| Point2::new(v.x / v.z, v.y / v.z))
}

fn transfer_error(t: &Matrix3<f64>, a: &Point2<f64>, b: &Point2<f64>) -> f64 {
    apply_transform(t, a).map_or(f64::INFINITY, |p| (p - b).norm())
}

/// RANSAC over minimal samples, then a least-squares refit on the consensus set.
pub fn ransac_align(
    set: &CorrespondenceSet,
    inlier_threshold: f64,
    max_iterations: usize,
    seed: u64,
) -> Result<Alignment> {
    let k = set.model.minimal_sample();
    if set.pairs.len() < k {
        return Err(contract(format!("need at least {k} correspondences")));
    }
    if !(inlier_threshold > 0.0) {
        return Err(contract("inlier threshold must be positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    let mut subset = Vec::with_capacity(k);
    for _ in 0..max_iterations {
        subset.clear();
        subset.extend(sample(&mut rng, set.pairs.len(), k).into_iter().map(|i| set.pairs[i]));
        if is_degenerate(&subset) {
            continue;
        }
        let Some(model) = fit(set.model, &subset) else { continue };
        let count = set
            .pairs
            .iter()
            .filter(|(a, b)| transfer_error(&model, a, b) < inlier_threshold)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, model));
        }
    }

    let best_inliers = best.as_ref().map_or(0, |(c, _)| *c);
    let Some((_, model)) = best.filter(|(c, _)| *c >= k) else {
        return Err(Error::NoConsensus { best_inliers, required: k });
    };

    let consensus: Vec<_> = set
        .pairs
        .iter()
        .filter(|(a, b)| transfer_error(&model, a, b) < inlier_threshold)
        .copied()
        .collect();
    let refined = fit(set.model, &consensus).unwrap_or(model);
    let inliers = set
        .pairs
        .iter()
        .map(|(a, b)| transfer_error(&refined, a, b) < inlier_threshold)
        .collect();
    Ok(Alignment { transform: refined, inliers })
}

fn collinear(p0: &Point2<f64>, p1: &Point2<f64>, p2: &Point2<f64>) -> bool {
    let u = p1 - p0;
    let v = p2 - p0;
    let cross = u.x * v.y - u.y * v.x;
    cross.abs() <= 1e-9 * u.norm() * v.norm() || u.norm() == 0.0 || v.norm() == 0.0
}

/// Any three points collinear in either view.
fn is_degenerate(pairs: &[(Point2<f64>, Point2<f64>)]) -> bool {
    let n = pairs.len();
    for i in 0..n {
        for j in i + 1..n {
            for l in j + 1..n {
                if collinear(&pairs[i].0, &pairs[j].0, &pairs[l].0)
                    || collinear(&pairs[i].1, &pairs[j].1, &pairs[l].1)
                {
                    return true;
                }
            }
        }
    }
    false
}

fn fit(model: TransformModel, pairs: &[(Point2<f64>, Point2<f64>)]) -> Option<Matrix3<f64>> {
    match model {
        TransformModel::Affine => fit_affine(pairs),
        TransformModel::Homography => fit_homography(pairs),
    }
}

fn fit_affine(pairs: &[(Point2<f64>, Point2<f64>)]) -> Option<Matrix3<f64>> {
    let n = pairs.len();
    let design = DMatrix::from_fn(n, 3, |r, c| match c {
        0 => pairs[r].0.x,
        1 => pairs[r].0.y,
        _ => 1.0,
    });
    let bx = DVector::from_fn(n, |r, _| pairs[r].1.x);
    let by = DVector::from_fn(n, |r, _| pairs[r].1.y);
    let svd = design.svd(true, true);
    let sx = svd.solve(&bx, 1e-12).ok()?;
    let sy = svd.solve(&by, 1e-12).ok()?;
    let t = Matrix3::new(sx[0], sx[1], sx[2], sy[0], sy[1], sy[2], 0.0, 0.0, 1.0);
    t.iter().all(|v| v.is_finite()).then_some(t)
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn hartley(points: impl Iterator<Item = Point2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points.map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

/// Normalized DLT.
fn fit_homography(pairs: &[(Point2<f64>, Point2<f64>)]) -> Option<Matrix3<f64>> {
    let ta = hartley(pairs.iter().map(|p| p.0));
    let tb = hartley(pairs.iter().map(|p| p.1));
    let mut ata = DMatrix::<f64>::zeros(9, 9);
    for (a, b) in pairs {
        let pa = ta * Vector3::new(a.x, a.y, 1.0);
        let pb = tb * Vector3::new(b.x, b.y, 1.0);
        let (x, y) = (pa.x / pa.z, pa.y / pa.z);
        let (u, v) = (pb.x / pb.z, pb.y / pb.z);
        let rows = [
            [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u],
            [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v],
        ];
        for row in &rows {
            for i in 0..9 {
                for j in 0..9 {
                    ata[(i, j)] += row[i] * row[j];
                }
            }
        }
    }
    let eig = SymmetricEigen::new(ata);
    let (min_idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let full = tb.try_inverse()? * hn * ta;
    let scale = full[(2, 2)];
    if scale.abs() < 1e-12 {
        return None;
    }
    let t = full / scale;
    t.iter().all(|v| v.is_finite()).then_some(t)
}
