use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::{FitError, MsacConfig, Result};
use crate::pointcloud::PointCloud;
use crate::rng;

/// Hypotheses evaluated per parallel batch. Early exit is only checked at
/// batch boundaries, which keeps `iterations_used` independent of threads.
const BATCH: usize = 32;

/// Even counters draw the minimal sample uniformly over the region, odd
/// counters draw it from the neighborhood of a uniformly chosen seed point.
const LOCAL_NEIGHBORS_PER_MIN_INLIER: usize = 2;

pub(crate) trait Estimator: Sync {
    type Model: Clone + Send + Sync;
    const SAMPLE_SIZE: usize;

    /// Region points, expressed relative to the region centroid.
    fn points(&self) -> &[Point3<f64>];
    fn from_sample(&self, sample: &[usize]) -> Option<Self::Model>;
    fn refine(&self, inliers: &[usize]) -> Option<Self::Model>;
    fn residual(&self, model: &Self::Model, p: &Point3<f64>) -> f64;
    fn radius(model: &Self::Model) -> f64;
}

/// Bookkeeping over one MSAC run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MsacTrace {
    /// Score of every admissible hypothesis (radius in range, enough
    /// inliers, not a planar patch), in counter order.
    pub sampled_scores: Vec<f64>,
    pub hypotheses_evaluated: usize,
    pub refined_model_kept: bool,
}

pub(crate) struct Outcome<M> {
    pub model: M,
    pub score: f64,
    /// Positions into the region slice, ascending.
    pub inliers: Vec<usize>,
    pub iterations: usize,
}

#[derive(Clone)]
struct Scored<M> {
    model: M,
    score: f64,
    inlier_count: usize,
}

struct Evaluation {
    score: f64,
    inlier_count: usize,
    planar: bool,
}

fn evaluate<E: Estimator>(est: &E, model: &E::Model, cfg: &MsacConfig) -> Evaluation {
    let tau = cfg.residual_threshold;
    let tau2 = tau * tau;
    let mut score = 0.0;
    let mut count = 0usize;
    let mut sum = Vector3::zeros();
    let mut outer = Matrix3::zeros();
    for p in est.points() {
        let r = est.residual(model, p);
        let r2 = r * r;
        if r <= tau {
            score += r2;
            count += 1;
            sum += p.coords;
            outer += p.coords * p.coords.transpose();
        } else {
            score += tau2;
        }
    }
    let planar = if count >= 3 {
        let mean = sum / count as f64;
        let cov = outer / count as f64 - mean * mean.transpose();
        let eig = SymmetricEigen::new(cov);
        let smallest = eig.eigenvalues.min().max(0.0);
        smallest.sqrt() <= tau
    } else {
        true
    };
    Evaluation {
        score,
        inlier_count: count,
        planar,
    }
}

fn admissible<E: Estimator>(model: &E::Model, ev: &Evaluation, cfg: &MsacConfig) -> bool {
    let r = E::radius(model);
    r >= cfg.r_min && r <= cfg.r_max && ev.inlier_count >= cfg.min_inliers && !ev.planar
}

fn required_iterations(inliers: usize, n: usize, sample_size: usize, confidence: f64) -> usize {
    let w = inliers as f64 / n as f64;
    let p_good = w.powi(sample_size as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

fn draw_sample<R: Rng>(rng: &mut R, counter: usize, n: usize, s: usize, local: &PointCloud, local_k: usize) -> Vec<usize> {
    if counter % 2 == 0 || local_k <= s {
        return index::sample(rng, n, s).into_vec();
    }
    let first = rng.random_range(0..n);
    let neighbors = local
        .knn(&local.point(first), local_k)
        .expect("region cloud is non-empty");
    let others: Vec<usize> = neighbors.iter().map(|&(i, _)| i).filter(|&i| i != first).collect();
    if others.len() < s - 1 {
        return index::sample(rng, n, s).into_vec();
    }
    let mut sample = vec![first];
    sample.extend(index::sample(rng, others.len(), s - 1).into_iter().map(|j| others[j]));
    sample
}

pub(crate) fn run<E: Estimator>(est: &E, cfg: &MsacConfig, trace: &mut MsacTrace) -> Result<Outcome<E::Model>> {
    let n = est.points().len();
    let s = E::SAMPLE_SIZE;
    let local = PointCloud::new(est.points().to_vec(), "region")?;
    let local_k = (LOCAL_NEIGHBORS_PER_MIN_INLIER * cfg.min_inliers).clamp(s + 4, n);

    let mut best: Option<Scored<E::Model>> = None;
    let mut evaluated = 0usize;
    let mut required = cfg.max_iterations;
    while evaluated < required.min(cfg.max_iterations) {
        let end = (evaluated + BATCH).min(cfg.max_iterations);
        let batch: Vec<Option<Scored<E::Model>>> = (evaluated..end)
            .into_par_iter()
            .map(|counter| {
                let mut rng = rng::stream(cfg.seed, counter as u64);
                let sample = draw_sample(&mut rng, counter, n, s, &local, local_k);
                let model = est.from_sample(&sample)?;
                let ev = evaluate(est, &model, cfg);
                admissible::<E>(&model, &ev, cfg).then_some(Scored {
                    model,
                    score: ev.score,
                    inlier_count: ev.inlier_count,
                })
            })
            .collect();
        for hyp in batch.into_iter().flatten() {
            trace.sampled_scores.push(hyp.score);
            // Strict comparison keeps the earlier hypothesis on ties.
            if best.as_ref().is_none_or(|b| hyp.score < b.score) {
                best = Some(hyp);
            }
        }
        evaluated = end;
        if let Some(b) = &best {
            required = required_iterations(b.inlier_count, n, s, cfg.confidence);
        }
    }
    trace.hypotheses_evaluated = evaluated;

    let best = best.ok_or_else(|| {
        FitError::NoFeatureFound(format!(
            "no admissible model in {evaluated} hypotheses over {n} points"
        ))
    })?;
    let tau = cfg.residual_threshold;
    let inliers_of = |model: &E::Model| -> Vec<usize> {
        est.points()
            .iter()
            .enumerate()
            .filter(|(_, p)| est.residual(model, p) <= tau)
            .map(|(i, _)| i)
            .collect()
    };

    let mut chosen = best.clone();
    if let Some(refined) = est.refine(&inliers_of(&best.model)) {
        let ev = evaluate(est, &refined, cfg);
        if admissible::<E>(&refined, &ev, cfg) && ev.score <= best.score {
            chosen = Scored {
                model: refined,
                score: ev.score,
                inlier_count: ev.inlier_count,
            };
            trace.refined_model_kept = true;
        }
    }
    let inliers = inliers_of(&chosen.model);
    debug_assert_eq!(inliers.len(), chosen.inlier_count);
    Ok(Outcome {
        model: chosen.model,
        score: chosen.score,
        inliers,
        iterations: evaluated,
    })
}
