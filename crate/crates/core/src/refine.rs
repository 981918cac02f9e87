//! Fermat refinement of coarse path candidates.
//!
//! Stage 1 minimizes the total path length with every interaction point
//! confined to the tangent plane it was found on. Stage 2 re-casts the path
//! segment by segment and checks that each ray lands where the plane said it
//! would (same orientation, same offset). A failing interaction is re-anchored
//! to the surface the ray actually hit and both stages run again.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::{angle_deg, tangent_basis, Vec3};
use crate::isect::Caster;
use crate::path::{InteractionKind, PropagationPath};

/// Segments shorter than this make the objective non-differentiable.
pub const MIN_SEGMENT: f64 = 1e-9;

/// Armijo constant for the backtracking line search.
const ARMIJO: f64 = 1e-4;

/// Newton steps taken after the convergence threshold is met.
const POLISH_STEPS: usize = 3;

/// Stage 1 gives up once a segment is shorter than this fraction of the
/// minimum vertex gap; such chains are collapsing and would be rejected.
const COLLAPSE_FRACTION: f64 = 0.1;

/// Neighbouring vertices must sit at least this far (cosine) on the reflecting side.
const MIN_SIDE_COS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    pub max_iterations: usize,
    pub retry_count: usize,
    /// Threshold on the squared gradient norm.
    pub convergence_threshold: f64,
    pub angle_threshold_deg: f64,
    pub distance_threshold: f64,
    /// Initial trial step in meters.
    pub step_size: f64,
    /// Coarse candidates sharing a reflection sequence are tried in order
    /// until one validates; at most this many are tried (0 = all).
    pub group_attempts: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            max_iterations: 50,
            retry_count: 10,
            convergence_threshold: 1e-4,
            angle_threshold_deg: 1.0,
            distance_threshold: 0.01,
            step_size: 0.05,
            group_attempts: 4,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iterations > 0
            && self.convergence_threshold > 0.0
            && self.angle_threshold_deg > 0.0
            && self.distance_threshold > 0.0
            && self.step_size > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "refinement iterations, thresholds and step size must be positive".into(),
            ))
        }
    }
}

/// Sum of consecutive segment lengths.
pub fn path_length(points: &[Vec3]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// An interaction plane with a fixed in-plane frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub origin: Vec3,
    pub normal: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

impl Plane {
    pub fn new(origin: Vec3, normal: Vec3) -> Self {
        let (u, v) = tangent_basis(&normal);
        Plane { origin, normal, u, v }
    }

    pub fn point(&self, a: f64, b: f64) -> Vec3 {
        self.origin + self.u * a + self.v * b
    }
}

/// Plane coordinates (two per interaction); inline up to the depth limit.
type Coords = SmallVec<[f64; 2 * crate::trace::MAX_DEPTH_LIMIT]>;

fn points_on_planes(planes: &[Plane], coords: &[f64]) -> SmallVec<[Vec3; crate::trace::MAX_DEPTH_LIMIT]> {
    planes
        .iter()
        .enumerate()
        .map(|(k, p)| p.point(coords[2 * k], coords[2 * k + 1]))
        .collect()
}

fn chain_length(tx: &Vec3, rx: &Vec3, points: &[Vec3]) -> f64 {
    let mut prev = *tx;
    let mut total = 0.0;
    for p in points.iter().chain(std::iter::once(rx)) {
        total += (p - prev).norm();
        prev = *p;
    }
    total
}

/// Path length with interaction `k` at `planes[k].point(coords[2k], coords[2k+1])`.
pub fn length_on_planes(tx: &Vec3, rx: &Vec3, planes: &[Plane], coords: &[f64]) -> f64 {
    chain_length(tx, rx, &points_on_planes(planes, coords))
}

/// Gradient of [`length_on_planes`] with respect to the plane coordinates, or
/// `None` when a segment is degenerate.
pub fn length_gradient(tx: &Vec3, rx: &Vec3, planes: &[Plane], coords: &[f64]) -> Option<Vec<f64>> {
    gradient(tx, rx, planes, coords, MIN_SEGMENT).map(|g| g.to_vec())
}

/// As [`length_gradient`], treating segments shorter than `min_segment` as degenerate.
fn gradient(tx: &Vec3, rx: &Vec3, planes: &[Plane], coords: &[f64], min_segment: f64) -> Option<Coords> {
    let pts = points_on_planes(planes, coords);
    let n = pts.len();
    let mut grad = Coords::new();
    for k in 0..n {
        let prev = if k == 0 { tx } else { &pts[k - 1] };
        let next = if k + 1 == n { rx } else { &pts[k + 1] };
        let a = pts[k] - prev;
        let b = pts[k] - next;
        let (la, lb) = (a.norm(), b.norm());
        if la < min_segment || lb < min_segment {
            return None;
        }
        let g = a / la + b / lb;
        grad.push(g.dot(&planes[k].u));
        grad.push(g.dot(&planes[k].v));
    }
    Some(grad)
}

/// Hessian of [`length_on_planes`] with respect to the plane coordinates.
///
/// A segment `a -> b` of length `L` and direction `d` contributes
/// `M = (I - d d^T) / L` to both diagonal blocks and `-M` off the diagonal.
fn hessian_at(tx: &Vec3, rx: &Vec3, planes: &[Plane], pts: &[Vec3]) -> Option<DMatrix<f64>> {
    let n = pts.len();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    let basis = |k: usize| Matrix3x2::from_columns(&[planes[k].u, planes[k].v]);
    for s in 0..=n {
        let a = if s == 0 { *tx } else { pts[s - 1] };
        let b = if s == n { *rx } else { pts[s] };
        let d = b - a;
        let len = d.norm();
        if len < MIN_SEGMENT {
            return None;
        }
        let d = d / len;
        let m = (Matrix3::identity() - d * d.transpose()) / len;
        // vertex indices of the segment ends (None for antennas)
        let ends = [s.checked_sub(1), (s < n).then_some(s)];
        for (i, ei) in ends.iter().enumerate() {
            for (j, ej) in ends.iter().enumerate() {
                if let (Some(p), Some(q)) = (ei, ej) {
                    let sign = if i == j { 1.0 } else { -1.0 };
                    let block = basis(*p).transpose() * m * basis(*q) * sign;
                    let mut view = h.view_mut((2 * p, 2 * q), (2, 2));
                    view += block;
                }
            }
        }
    }
    Some(h)
}

/// Result of one stage-1 minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimization {
    pub points: Vec<Vec3>,
    pub coords: Vec<f64>,
    pub length: f64,
    pub iterations: usize,
    pub grad_norm_sq: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Newton direction `-H^-1 g`, if `H` is positive definite and the direction descends.
fn newton_direction(tx: &Vec3, rx: &Vec3, planes: &[Plane], x: &[f64], g: &[f64]) -> Option<Coords> {
    let pts = points_on_planes(planes, x);
    let h = hessian_at(tx, rx, planes, &pts)?;
    let chol = h.cholesky()?;
    let step = chol.solve(&DVector::from_column_slice(g));
    let dir: Coords = step.iter().map(|v| -v).collect();
    (dot(&dir, g) < 0.0 && dir.iter().all(|v| v.is_finite())).then_some(dir)
}

/// Descent on the plane coordinates with Armijo backtracking.
///
/// Directions are Newton steps where the Hessian is positive definite and
/// gradient steps otherwise (Barzilai–Borwein trial length, starting from
/// `step_size`). Every accepted step strictly decreases the path length.
/// Once the squared gradient norm drops below the threshold, up to
/// `POLISH_STEPS` more Newton steps are taken while they still decrease the
/// length: the threshold alone leaves centimeter-scale residuals on
/// meter-scale geometry, and near grazing incidence the curvature is small
/// enough that a single step does not remove them. `None` on a
/// degenerate configuration.
pub fn minimize_on_planes(
    tx: &Vec3,
    rx: &Vec3,
    planes: &[Plane],
    config: &RefinementConfig,
) -> Option<Minimization> {
    minimize_until_collapse(tx, rx, planes, config, MIN_SEGMENT)
}

/// [`minimize_on_planes`], giving up as soon as an iterate has a segment
/// shorter than `collapse`. Chains folding into a concave corner approach
/// the crease only linearly, so waiting for a segment to vanish outright
/// costs dozens of iterations on candidates that are rejected anyway.
fn minimize_until_collapse(
    tx: &Vec3,
    rx: &Vec3,
    planes: &[Plane],
    config: &RefinementConfig,
    collapse: f64,
) -> Option<Minimization> {
    let dim = 2 * planes.len();
    let mut x: Coords = smallvec::smallvec![0.0; dim];
    let mut f = length_on_planes(tx, rx, planes, &x);
    let mut g = gradient(tx, rx, planes, &x, MIN_SEGMENT)?;
    let mut prev: Option<(Coords, Coords)> = None;
    let mut iterations = 0;

    let finish = |x: Coords, f: f64, g: Coords, iterations: usize, converged: bool| {
        let mut x = x;
        let mut f = f;
        let mut gg = dot(&g, &g);
        let mut g = g;
        for _ in 0..if converged { POLISH_STEPS } else { 0 } {
            let Some(d) = newton_direction(tx, rx, planes, &x, &g) else { break };
            let trial: Coords = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            let ft = length_on_planes(tx, rx, planes, &trial);
            if ft > f {
                break;
            }
            let Some(gt) = gradient(tx, rx, planes, &trial, MIN_SEGMENT) else { break };
            let done = ft == f;
            x = trial;
            f = ft;
            gg = dot(&gt, &gt);
            g = gt;
            if done {
                break;
            }
        }
        Minimization {
            points: points_on_planes(planes, &x).to_vec(),
            coords: x.to_vec(),
            length: f,
            iterations,
            grad_norm_sq: gg,
            converged,
        }
    };

    loop {
        let gg = dot(&g, &g);
        if gg < config.convergence_threshold {
            return Some(finish(x, f, g, iterations, true));
        }
        if iterations >= config.max_iterations {
            return Some(finish(x, f, g, iterations, false));
        }
        iterations += 1;

        let (dir, mut alpha) = match newton_direction(tx, rx, planes, &x, &g) {
            Some(d) => (d, 1.0),
            None => {
                let trial = match &prev {
                    Some((s, y)) if dot(s, y) > 0.0 => dot(s, s) / dot(s, y),
                    _ => config.step_size,
                };
                (g.iter().map(|v| -v).collect(), trial)
            }
        };
        let slope = dot(&dir, &g);
        let mut accepted = None;
        while alpha > 1e-14 {
            let trial: Coords = x.iter().zip(&dir).map(|(xi, di)| xi + alpha * di).collect();
            let ft = length_on_planes(tx, rx, planes, &trial);
            if ft <= f + ARMIJO * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((trial, ft)) = accepted else {
            // No descent left at machine precision.
            return Some(finish(x, f, g, iterations, false));
        };
        let g_new = gradient(tx, rx, planes, &trial, collapse)?;
        let s: Coords = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Coords = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        prev = Some((s, y));
        x = trial;
        f = ft;
        g = g_new;
    }
}

/// Bookkeeping across refinements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefineStats {
    pub candidates: usize,
    /// Candidates whose first stage-1 run met the convergence threshold.
    pub first_converged: usize,
    pub minimizations: usize,
    pub minimizations_converged: usize,
    pub retries: usize,
    pub accepted: usize,
    /// Rejections: degenerate stage-1 geometry.
    pub degenerate: usize,
    /// Rejections: a vertex ended up behind its reflecting plane.
    pub wrong_side: usize,
    /// Rejections: a stage-2 ray hit nothing.
    pub missed: usize,
    /// Rejections: still invalid after all retries.
    pub exhausted: usize,
    /// Rejections: last segment to the receiver blocked.
    pub blocked: usize,
}

impl RefineStats {
    pub fn merge(&mut self, o: &RefineStats) {
        self.candidates += o.candidates;
        self.first_converged += o.first_converged;
        self.minimizations += o.minimizations;
        self.minimizations_converged += o.minimizations_converged;
        self.retries += o.retries;
        self.accepted += o.accepted;
        self.degenerate += o.degenerate;
        self.wrong_side += o.wrong_side;
        self.missed += o.missed;
        self.exhausted += o.exhausted;
        self.blocked += o.blocked;
    }
}

fn is_on_reflecting_side(points: &[Vec3], tx: &Vec3, rx: &Vec3, planes: &[Plane]) -> bool {
    let n = points.len();
    (0..n).all(|k| {
        let prev = if k == 0 { tx } else { &points[k - 1] };
        let next = if k + 1 == n { rx } else { &points[k + 1] };
        let nk = &planes[k].normal;
        [prev, next].iter().all(|q| {
            let d = *q - points[k];
            let len = d.norm();
            len >= MIN_SEGMENT && nk.dot(&d) / len >= MIN_SIDE_COS
        })
    })
}

/// Refines a coarse all-specular candidate; `None` when it cannot be validated.
pub fn refine_specular(
    path: &PropagationPath,
    caster: &Caster,
    config: &RefinementConfig,
) -> Option<PropagationPath> {
    refine_specular_with_stats(path, caster, config, &mut RefineStats::default())
}

pub fn refine_specular_with_stats(
    path: &PropagationPath,
    caster: &Caster,
    config: &RefinementConfig,
    stats: &mut RefineStats,
) -> Option<PropagationPath> {
    debug_assert!(path
        .interactions
        .iter()
        .all(|i| i.kind == InteractionKind::Specular));
    stats.candidates += 1;
    let scene = caster.scene;
    let tx = scene.transmitters[path.tx_index];
    let rx = scene.receivers[path.rx_index];
    if path.is_los() {
        return caster.test_visibility(&tx, &rx).then(|| path.clone());
    }

    let mut out = path.clone();
    let mut planes: Vec<Plane> = path
        .interactions
        .iter()
        .map(|i| Plane::new(i.point, i.normal))
        .collect();

    for attempt in 0..=config.retry_count {
        if attempt > 0 {
            stats.retries += 1;
        }
        // Consecutive interactions closer than the self-hit distance cannot be
        // told apart on the point cloud: this is where chains folding into a
        // concave corner collapse.
        let min_gap = caster.config.self_hit_distance();
        let Some(m) = minimize_until_collapse(&tx, &rx, &planes, config, COLLAPSE_FRACTION * min_gap) else {
            stats.degenerate += 1;
            return None;
        };
        stats.minimizations += 1;
        if m.converged {
            stats.minimizations_converged += 1;
            if attempt == 0 {
                stats.first_converged += 1;
            }
        }
        if m.points.windows(2).any(|w| (w[1] - w[0]).norm() < min_gap) {
            stats.degenerate += 1;
            return None;
        }
        if !is_on_reflecting_side(&m.points, &tx, &rx, &planes) {
            stats.wrong_side += 1;
            return None;
        }

        let mut failed = false;
        for k in 0..m.points.len() {
            let target = m.points[k];
            let hit = if k == 0 {
                let (ray, _) = crate::geometry::Ray::towards(tx, target)?;
                caster.cast_ray(&ray)
            } else {
                let from = m.points[k - 1];
                let dir = (target - from).try_normalize(MIN_SEGMENT)?;
                caster.cast_from_surface(&from, &planes[k - 1].normal, out.interactions[k - 1].surface_label, &dir)
            };
            let Some(hit) = hit else {
                stats.missed += 1;
                return None;
            };
            let plane = &planes[k];
            let angle_ok = angle_deg(&plane.normal, &hit.normal) < config.angle_threshold_deg;
            let offset_ok = plane.normal.dot(&(hit.position - target)).abs() < config.distance_threshold;
            let it = &mut out.interactions[k];
            it.surface_label = hit.surface_label;
            it.material_label = hit.material_label;
            it.voxel_coord = hit.voxel_coord;
            if angle_ok && offset_ok {
                it.point = target;
                it.normal = plane.normal;
            } else {
                it.point = hit.position;
                it.normal = hit.normal;
                planes[k] = Plane::new(hit.position, hit.normal);
                failed = true;
                // Later segments depend on this one; recast after re-optimizing.
                break;
            }
        }
        if failed {
            continue;
        }
        let last = m.points.last().unwrap();
        if !caster.test_visibility(&rx, last) {
            stats.blocked += 1;
            return None;
        }
        out.refined = true;
        stats.accepted += 1;
        return Some(out);
    }
    stats.exhausted += 1;
    None
}

/// Minimizer of `|tx - e(t)| + |e(t) - rx|` over the edge, in arc length `t`
/// clamped to the segment, with the same step rule and threshold as the
/// plane case. Returns (point, arc length, converged).
pub fn minimize_on_edge(
    tx: &Vec3,
    rx: &Vec3,
    start: &Vec3,
    end: &Vec3,
    config: &RefinementConfig,
) -> Option<(Vec3, f64, bool)> {
    let axis = end - start;
    let len = axis.norm();
    if len < MIN_SEGMENT {
        return None;
    }
    let dir = axis / len;
    let at = |t: f64| start + dir * t;
    let f = |t: f64| (at(t) - tx).norm() + (at(t) - rx).norm();
    // first and second derivative
    let derivs = |t: f64| -> Option<(f64, f64)> {
        let p = at(t);
        let mut g = 0.0;
        let mut h = 0.0;
        for a in [tx, rx] {
            let d = p - a;
            let l = d.norm();
            if l < MIN_SEGMENT {
                return None;
            }
            let c = d.dot(&dir) / l;
            g += c;
            h += (1.0 - c * c) / l;
        }
        Some((g, h))
    };
    // Projected gradient: zero when pushing against a clamped end.
    let projected = |t: f64, g: f64| {
        if (t <= 0.0 && g > 0.0) || (t >= len && g < 0.0) {
            0.0
        } else {
            g
        }
    };

    let mut t = 0.5 * len;
    let mut ft = f(t);
    let (mut g, mut h) = derivs(t)?;
    let mut converged = false;
    for _ in 0..=config.max_iterations {
        let pg = projected(t, g);
        if pg * pg < config.convergence_threshold {
            converged = true;
            break;
        }
        let mut alpha = if h > 0.0 { 1.0 / h } else { config.step_size };
        let mut moved = false;
        while alpha > 1e-14 {
            let tn = (t - alpha * pg).clamp(0.0, len);
            let fnew = f(tn);
            if fnew <= ft - ARMIJO * pg * (t - tn) {
                (g, h) = derivs(tn)?;
                t = tn;
                ft = fnew;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    for _ in 0..if converged { POLISH_STEPS } else { 0 } {
        if !(h > 0.0) {
            break;
        }
        let tn = (t - projected(t, g) / h).clamp(0.0, len);
        let fnew = f(tn);
        if fnew > ft {
            break;
        }
        let Some(d) = derivs(tn) else { break };
        let done = fnew == ft;
        (g, h) = d;
        t = tn;
        ft = fnew;
        if done {
            break;
        }
    }
    Some((at(t), t, converged))
}

/// Places the diffraction point on its edge and checks that TX and RX both see it.
pub fn refine_diffraction(
    path: &PropagationPath,
    caster: &Caster,
    config: &RefinementConfig,
) -> Option<PropagationPath> {
    let [it] = path.interactions.as_slice() else {
        return None;
    };
    let edge = caster.scene.edges.get(it.edge_index?)?;
    let tx = caster.scene.transmitters[path.tx_index];
    let rx = caster.scene.receivers[path.rx_index];
    let (point, _, _) = minimize_on_edge(&tx, &rx, &edge.start, &edge.end, config)?;
    if !caster.test_visibility(&tx, &point) || !caster.test_visibility(&rx, &point) {
        return None;
    }
    let mut out = path.clone();
    out.interactions[0].point = point;
    out.refined = true;
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_examples() {
        let o = Vec3::zeros();
        assert_eq!(path_length(&[o, Vec3::new(0.0, 0.0, 2.0)]), 2.0);
        let l = path_length(&[Vec3::new(-1.0, 0.0, 1.0), o, Vec3::new(1.0, 0.0, 1.0)]);
        assert!((l - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_plane_converges_to_mirror_point() {
        let tx = Vec3::new(-1.0, 0.0, 1.0);
        let rx = Vec3::new(1.0, 0.0, 1.0);
        let plane = Plane::new(Vec3::new(0.3, 0.2, 0.0), Vec3::z());
        let m = minimize_on_planes(&tx, &rx, &[plane], &RefinementConfig::default()).unwrap();
        assert!(m.converged);
        assert!(m.points[0].norm() < 5e-3, "{:?}", m.points[0]);
        assert!(m.iterations < 10);
        assert!((m.length - 2.0 * 2f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn edge_minimum_by_symmetry() {
        let cfg = RefinementConfig::default();
        let (p, _, ok) = minimize_on_edge(
            &Vec3::new(-1.0, 0.3, 1.0),
            &Vec3::new(1.0, 0.3, 1.0),
            &Vec3::zeros(),
            &Vec3::new(0.0, 1.0, 0.0),
            &cfg,
        )
        .unwrap();
        assert!(ok);
        assert!((p.y - 0.3).abs() < 1e-6);
    }

    #[test]
    fn edge_clamps_to_end() {
        let cfg = RefinementConfig::default();
        let (p, t, _) = minimize_on_edge(
            &Vec3::new(-1.0, 3.0, 1.0),
            &Vec3::new(1.0, 3.0, 1.0),
            &Vec3::zeros(),
            &Vec3::new(0.0, 1.0, 0.0),
            &cfg,
        )
        .unwrap();
        assert_eq!(t, 1.0);
        assert!((p.y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_configuration_is_rejected() {
        let plane = Plane::new(Vec3::zeros(), Vec3::z());
        assert!(minimize_on_planes(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 1.0), &[plane], &RefinementConfig::default()).is_none());
    }
}
