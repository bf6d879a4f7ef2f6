//! Near-neighbour forecasting on a reconstructed attractor.
//!
//! A [`TransitionLibrary`] pairs every embedded point with the displacement
//! observed `horizon` steps later. Predictions average the displacements of
//! the query's nearest library points with exponential distance weights.
//! When the neighbours disagree (the observed system may have switched
//! regime) the neighbour set splits into several weighted modes; the
//! [`correction_vector`] to the mode that was fulfilled feeds a
//! [`RegimeTracker`].

use std::collections::BTreeMap;

use crate::embedding::PointCloud;
use crate::knn::{KdTree, Neighbor};
use crate::{Error, Exec, Result};

/// Queries farther than this multiple of the library's 95th-percentile
/// nearest-neighbour spacing are flagged as extrapolations.
const EXTRAPOLATION_FACTOR: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct TransitionLibrary {
    k: usize,
    horizon: usize,
    points: Vec<f64>,
    displacements: Vec<f64>,
    source_index: Vec<usize>,
    regime_label: Option<Vec<usize>>,
    tree: KdTree,
    /// Per-label trees, ascending by label.
    label_trees: Vec<(usize, KdTree)>,
    spacing_p95: f64,
}

impl TransitionLibrary {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.source_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_index.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.k..(i + 1) * self.k]
    }

    pub fn displacement(&self, i: usize) -> &[f64] {
        &self.displacements[i * self.k..(i + 1) * self.k]
    }

    pub fn source_index(&self, i: usize) -> usize {
        self.source_index[i]
    }

    pub fn regime_label(&self, i: usize) -> Option<usize> {
        self.regime_label.as_ref().map(|l| l[i])
    }

    /// Distinct regime labels, ascending (empty when unlabelled).
    pub fn regimes(&self) -> Vec<usize> {
        self.label_trees.iter().map(|(l, _)| *l).collect()
    }

    /// 95th percentile of the library's nearest-neighbour spacing.
    pub fn spacing_p95(&self) -> f64 {
        self.spacing_p95
    }

    /// Attaches a regime label to every pair, derived from its source index.
    pub fn with_regime_labels<F: Fn(usize) -> usize>(mut self, label_of: F) -> Self {
        let labels: Vec<usize> = self.source_index.iter().map(|&s| label_of(s)).collect();
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        self.label_trees = groups
            .into_iter()
            .map(|(l, ids)| (l, KdTree::build_subset(&self.points, self.k, &ids)))
            .collect();
        self.regime_label = Some(labels);
        self
    }

    fn check_query(&self, q: &[f64], kn: usize) -> Result<()> {
        if q.len() != self.k {
            return Err(Error::InvalidInput(format!(
                "query has dimension {}, library has {}",
                q.len(),
                self.k
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite query".into()));
        }
        if kn == 0 {
            return Err(Error::InvalidParameter("kn must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pairs each point with its successor `horizon` source steps ahead. Points
/// whose successor is missing (series end or a gap in the cloud) are skipped.
pub fn build_library(cloud: &PointCloud, horizon: usize) -> Result<TransitionLibrary> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let k = cloud.k();
    let mut points = Vec::new();
    let mut displacements = Vec::new();
    let mut source_index = Vec::new();
    for i in 0..cloud.len() {
        let s = cloud.source_index()[i];
        let Some(j) = cloud.position_of(s + horizon) else {
            continue;
        };
        let (p, succ) = (cloud.point(i), cloud.point(j));
        points.extend_from_slice(p);
        displacements.extend(succ.iter().zip(p).map(|(a, b)| a - b));
        source_index.push(s);
    }
    if source_index.len() < 2 {
        return Err(Error::InsufficientData {
            what: "transition library (usable pairs)",
            needed: 2,
            got: source_index.len(),
        });
    }
    let tree = KdTree::build(&points, k);
    let n = source_index.len();
    let mut spacing: Vec<f64> = (0..n)
        .map(|i| {
            tree.knn_filtered(&points[i * k..(i + 1) * k], 1, |j| j != i)
                .first()
                .map_or(0.0, Neighbor::dist)
        })
        .collect();
    spacing.sort_by(f64::total_cmp);
    let spacing_p95 = spacing[((n - 1) as f64 * 0.95).round() as usize];
    Ok(TransitionLibrary {
        k,
        horizon,
        points,
        displacements,
        source_index,
        regime_label: None,
        tree,
        label_trees: Vec::new(),
        spacing_p95,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborQueryResult {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    /// Fewer than the requested neighbours exist.
    pub truncated: bool,
}

/// The `kn` library points nearest to `q`; ties go to the lowest index.
pub fn query_knn(lib: &TransitionLibrary, q: &[f64], kn: usize) -> Result<NeighborQueryResult> {
    lib.check_query(q, kn)?;
    let found = lib.tree.knn(q, kn);
    Ok(NeighborQueryResult {
        truncated: found.len() < kn,
        indices: found.iter().map(|n| n.index).collect(),
        distances: found.iter().map(Neighbor::dist).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    /// Weighted per-dimension standard deviation of the member estimates.
    pub spread: Vec<f64>,
    pub weight: f64,
    /// Library indices of the contributing neighbours, ascending by distance.
    pub members: Vec<usize>,
    /// Dominant regime label among the members, if the library is labelled.
    pub regime: Option<usize>,
    /// The query lies well outside the library's sampled region.
    pub extrapolated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    /// Sorted by weight descending, ties by lowest smallest member index.
    pub modes: Vec<Prediction>,
}

/// Normalised exponential weights `exp(−d/d̄)`; uniform when all distances vanish.
pub(crate) fn neighbor_weights(distances: &[f64]) -> Vec<f64> {
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    let raw: Vec<f64> = if mean > 0.0 {
        distances.iter().map(|d| (-d / mean).exp()).collect()
    } else {
        vec![1.0; distances.len()]
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|u| u / total).collect()
}

/// Combines a subset of neighbours; `weights` are the globally normalised ones.
fn combine(lib: &TransitionLibrary, q: &[f64], members: &[usize], weights: &[f64], extrapolated: bool) -> Prediction {
    let k = lib.k;
    let total: f64 = weights.iter().sum();
    let mut mean = q.to_vec();
    for (&m, &w) in members.iter().zip(weights) {
        for (c, d) in mean.iter_mut().zip(lib.displacement(m)) {
            *c += w / total * d;
        }
    }
    let mut spread = vec![0.0; k];
    for (&m, &w) in members.iter().zip(weights) {
        for (j, s) in spread.iter_mut().enumerate() {
            let e = q[j] + lib.displacement(m)[j] - mean[j];
            *s += w / total * e * e;
        }
    }
    spread.iter_mut().for_each(|s| *s = s.sqrt());
    let regime = lib.regime_label.as_ref().and_then(|labels| {
        let mut votes: BTreeMap<usize, f64> = BTreeMap::new();
        for (&m, &w) in members.iter().zip(weights) {
            *votes.entry(labels[m]).or_default() += w;
        }
        votes
            .into_iter()
            .fold(None, |best: Option<(usize, f64)>, (l, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((l, v)),
            })
            .map(|(l, _)| l)
    });
    Prediction {
        mean,
        spread,
        weight: total,
        members: members.to_vec(),
        regime,
        extrapolated,
    }
}

fn is_extrapolated(lib: &TransitionLibrary, nearest: f64) -> bool {
    nearest > EXTRAPOLATION_FACTOR * lib.spacing_p95
}

/// Single-mode prediction of the point `horizon` steps after `q`.
pub fn predict_next(lib: &TransitionLibrary, q: &[f64], kn: usize) -> Result<Prediction> {
    let nb = query_knn(lib, q, kn)?;
    let w = neighbor_weights(&nb.distances);
    let mut p = combine(lib, q, &nb.indices, &w, is_extrapolated(lib, nb.distances[0]));
    p.weight = 1.0;
    Ok(p)
}

/// [`predict_next`] for every point of `queries`.
pub fn predict_batch(lib: &TransitionLibrary, queries: &PointCloud, kn: usize, exec: Exec) -> Result<Vec<Prediction>> {
    exec.try_map(queries.len(), |i| predict_next(lib, queries.point(i), kn))
}

fn sort_modes(modes: &mut [Prediction]) {
    modes.sort_by(|a, b| {
        b.weight.total_cmp(&a.weight).then_with(|| {
            let ma = a.members.iter().min();
            let mb = b.members.iter().min();
            ma.cmp(&mb)
        })
    });
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Multi-modal prediction: neighbour displacements are grouped by single
/// linkage, cutting links longer than `gap_factor` times the median
/// nearest-displacement distance. Each group becomes one weighted mode.
pub fn predict_multi(lib: &TransitionLibrary, q: &[f64], kn: usize, gap_factor: f64) -> Result<PredictionSet> {
    if gap_factor.is_nan() || gap_factor <= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "gap_factor must exceed 1, got {gap_factor}"
        )));
    }
    let nb = query_knn(lib, q, kn)?;
    let w = neighbor_weights(&nb.distances);
    let extrapolated = is_extrapolated(lib, nb.distances[0]);
    let n = nb.indices.len();
    if n == 1 {
        return Ok(PredictionSet {
            modes: vec![combine(lib, q, &nb.indices, &w, extrapolated)],
        });
    }
    let disp = |a: usize| lib.displacement(nb.indices[a]);
    let mut dist = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d = crate::knn::dist_sq(disp(a), disp(b)).sqrt();
            dist[a * n + b] = d;
            dist[b * n + a] = d;
        }
    }
    let mut nearest: Vec<f64> = (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| b != a)
                .map(|b| dist[a * n + b])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let cut = gap_factor * median(&mut nearest);

    // union-find over links no longer than the cut
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut a: usize) -> usize {
        while parent[a] != a {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        a
    }
    for a in 0..n {
        for b in a + 1..n {
            if dist[a * n + b] <= cut {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in 0..n {
        let r = root(&mut parent, a);
        groups.entry(r).or_default().push(a);
    }
    let mut modes: Vec<Prediction> = groups
        .into_values()
        .map(|g| {
            let members: Vec<usize> = g.iter().map(|&a| nb.indices[a]).collect();
            let weights: Vec<f64> = g.iter().map(|&a| w[a]).collect();
            combine(lib, q, &members, &weights, extrapolated)
        })
        .collect();
    renormalize(&mut modes);
    sort_modes(&mut modes);
    Ok(PredictionSet { modes })
}

/// One mode per regime label, each built from that regime's own `kn`
/// nearest library points. Mode weights come from the exponential weights
/// computed over the union of all selected neighbours.
pub fn predict_by_regime(lib: &TransitionLibrary, q: &[f64], kn: usize) -> Result<PredictionSet> {
    lib.check_query(q, kn)?;
    if lib.label_trees.is_empty() {
        return Err(Error::InvalidInput("library carries no regime labels".into()));
    }
    let per_label: Vec<(usize, Vec<Neighbor>)> = lib.label_trees.iter().map(|(l, t)| (*l, t.knn(q, kn))).collect();
    let all: Vec<f64> = per_label
        .iter()
        .flat_map(|(_, ns)| ns.iter().map(Neighbor::dist))
        .collect();
    let w = neighbor_weights(&all);
    let nearest = all.iter().copied().fold(f64::INFINITY, f64::min);
    let extrapolated = is_extrapolated(lib, nearest);
    let mut offset = 0;
    let mut modes = Vec::with_capacity(per_label.len());
    for (label, ns) in &per_label {
        let members: Vec<usize> = ns.iter().map(|n| n.index).collect();
        let weights = &w[offset..offset + ns.len()];
        offset += ns.len();
        let mut p = combine(lib, q, &members, weights, extrapolated);
        p.regime = Some(*label);
        modes.push(p);
    }
    renormalize(&mut modes);
    sort_modes(&mut modes);
    Ok(PredictionSet { modes })
}

fn renormalize(modes: &mut [Prediction]) {
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    modes.iter_mut().for_each(|m| m.weight /= total);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correction {
    pub mode: usize,
    /// `actual − chosen mode mean`.
    pub residual: Vec<f64>,
}

/// Picks the mode whose mean is nearest to what actually happened (ties to
/// the lowest mode index) and returns the residual to it.
pub fn correction_vector(pred: &PredictionSet, actual: &[f64]) -> Result<Correction> {
    let Some(first) = pred.modes.first() else {
        return Err(Error::InvalidInput("empty prediction set".into()));
    };
    if actual.len() != first.mean.len() {
        return Err(Error::InvalidInput(format!(
            "observation has dimension {}, prediction has {}",
            actual.len(),
            first.mean.len()
        )));
    }
    let mut best = (0, f64::INFINITY);
    for (i, m) in pred.modes.iter().enumerate() {
        let d = crate::knn::dist_sq(actual, &m.mean);
        if d < best.1 {
            best = (i, d);
        }
    }
    let mean = &pred.modes[best.0].mean;
    Ok(Correction {
        mode: best.0,
        residual: actual.iter().zip(mean).map(|(a, m)| a - m).collect(),
    })
}

/// Exponentially decaying credit per regime for having its prediction fulfilled.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeTracker {
    credits: BTreeMap<usize, f64>,
    decay: f64,
}

impl RegimeTracker {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "decay must lie in (0, 1), got {decay}"
            )));
        }
        Ok(RegimeTracker {
            credits: BTreeMap::new(),
            decay,
        })
    }

    pub fn with_credits(decay: f64, credits: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut t = Self::new(decay)?;
        for (r, c) in credits {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidParameter(format!(
                    "credit {c} for regime {r} outside [0, 1]"
                )));
            }
            t.credits.insert(r, c);
        }
        Ok(t)
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn credit(&self, regime: usize) -> f64 {
        self.credits.get(&regime).copied().unwrap_or(0.0)
    }

    pub fn credits(&self) -> &BTreeMap<usize, f64> {
        &self.credits
    }

    pub fn observe(&mut self, fulfilled: usize) {
        self.credits.entry(fulfilled).or_insert(0.0);
        for (r, c) in self.credits.iter_mut() {
            let hit = if *r == fulfilled { 1.0 } else { 0.0 };
            *c = ((1.0 - self.decay) * *c + self.decay * hit).clamp(0.0, 1.0);
        }
    }

    /// Regime with the highest credit; ties go to the lowest id.
    pub fn current(&self) -> Option<usize> {
        self.credits
            .iter()
            .fold(None, |best: Option<(usize, f64)>, (&r, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((r, c)),
            })
            .map(|(r, _)| r)
    }
}

/// Functional form of [`RegimeTracker::observe`].
pub fn track_regimes(state: &RegimeTracker, fulfilled: usize) -> RegimeTracker {
    let mut next = state.clone();
    next.observe(fulfilled);
    next
}
