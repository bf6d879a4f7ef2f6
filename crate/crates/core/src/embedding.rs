//! Delay-coordinate reconstruction of an attractor from one observable,
//! plus estimators for the lag (mutual information / autocorrelation) and the
//! embedding dimension (false nearest neighbours).

use crate::knn::{dist_sq, KdTree};
use crate::stats;
use crate::{Error, Exec, Result};

/// Uniformly sampled scalar observable.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::InsufficientData {
                what: "time series",
                needed: 1,
                got: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(TimeSeries { dt, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingSpec {
    pub tau: usize,
    pub k: usize,
}

impl EmbeddingSpec {
    pub fn new(tau: usize, k: usize) -> Result<Self> {
        if tau == 0 || k == 0 {
            return Err(Error::InvalidParameter(format!(
                "embedding needs tau >= 1 and k >= 1, got tau={tau}, k={k}"
            )));
        }
        Ok(EmbeddingSpec { tau, k })
    }

    /// Samples spanned by one delay vector.
    pub fn window(&self) -> usize {
        (self.k - 1) * self.tau + 1
    }
}

/// Delay vectors stored row-major, newest sample first.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    k: usize,
    coords: Vec<f64>,
    source_index: Vec<usize>,
}

impl PointCloud {
    /// Builds from explicit rows. `source_index` must be strictly increasing.
    pub fn from_parts(k: usize, coords: Vec<f64>, source_index: Vec<usize>) -> Result<Self> {
        if k == 0 || coords.len() != k * source_index.len() {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not form {} points of dimension {k}",
                coords.len(),
                source_index.len()
            )));
        }
        if source_index.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("source indices must be strictly increasing".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(PointCloud {
            k,
            coords,
            source_index,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.source_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_index.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.k..(i + 1) * self.k]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.k)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn source_index(&self) -> &[usize] {
        &self.source_index
    }

    /// Position of the point whose newest sample is `t`.
    pub fn position_of(&self, t: usize) -> Option<usize> {
        self.source_index.binary_search(&t).ok()
    }

    /// Multiplies every coordinate by `c`.
    pub fn scaled(&self, c: f64) -> PointCloud {
        PointCloud {
            k: self.k,
            coords: self.coords.iter().map(|v| v * c).collect(),
            source_index: self.source_index.clone(),
        }
    }

    /// Restricts both clouds to their common source indices.
    pub fn align(a: &PointCloud, b: &PointCloud) -> (PointCloud, PointCloud) {
        let (mut ia, mut ib) = (0, 0);
        let (mut ka, mut kb) = (Vec::new(), Vec::new());
        while ia < a.len() && ib < b.len() {
            match a.source_index[ia].cmp(&b.source_index[ib]) {
                std::cmp::Ordering::Less => ia += 1,
                std::cmp::Ordering::Greater => ib += 1,
                std::cmp::Ordering::Equal => {
                    ka.push(ia);
                    kb.push(ib);
                    ia += 1;
                    ib += 1;
                }
            }
        }
        (a.select(&ka), b.select(&kb))
    }

    pub fn select(&self, rows: &[usize]) -> PointCloud {
        let mut coords = Vec::with_capacity(rows.len() * self.k);
        for &r in rows {
            coords.extend_from_slice(self.point(r));
        }
        PointCloud {
            k: self.k,
            coords,
            source_index: rows.iter().map(|&r| self.source_index[r]).collect(),
        }
    }
}

/// Embeds `series` as `(x(t), x(t−τ), …, x(t−(k−1)τ))` for every admissible `t`.
pub fn delay_embed(series: &TimeSeries, spec: EmbeddingSpec) -> Result<PointCloud> {
    let spec = EmbeddingSpec::new(spec.tau, spec.k)?;
    let window = spec.window();
    let n = series.len();
    if n < window {
        return Err(Error::InsufficientData {
            what: "delay embedding",
            needed: window,
            got: n,
        });
    }
    let first = window - 1;
    let count = n - first;
    let mut coords = Vec::with_capacity(count * spec.k);
    for t in first..n {
        for j in 0..spec.k {
            coords.push(series.values[t - j * spec.tau]);
        }
    }
    Ok(PointCloud {
        k: spec.k,
        coords,
        source_index: (first..n).collect(),
    })
}

const MI_BINS: usize = 16;

/// Binned mutual information (nats) between `x[t]` and `x[t + lag]`.
pub fn mutual_information(values: &[f64], lag: usize, bins: usize) -> f64 {
    binned_mi(values, lag, values.len() - lag, bins)
}

/// MI over the first `pairs` pairs, with bins spanning the whole series.
fn binned_mi(values: &[f64], lag: usize, pairs: usize, bins: usize) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = hi - lo;
    let bin = |v: f64| -> usize {
        if width <= 0.0 {
            return 0;
        }
        (((v - lo) / width * bins as f64) as usize).min(bins - 1)
    };
    let mut joint = vec![0usize; bins * bins];
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for t in 0..pairs {
        let (a, b) = (bin(values[t]), bin(values[t + lag]));
        joint[a * bins + b] += 1;
        pa[a] += 1;
        pb[b] += 1;
    }
    let nf = pairs as f64;
    let mut mi = 0.0;
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c > 0 {
                let pab = c as f64 / nf;
                mi += pab * (pab * nf * nf / (pa[a] as f64 * pb[b] as f64)).ln();
            }
        }
    }
    mi
}

/// Sample autocorrelation at `lag` (biased estimator, normalised by lag-0 variance).
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let m = stats::mean(values);
    let var: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    if var <= 0.0 {
        return f64::NAN;
    }
    let cov: f64 = (0..values.len() - lag)
        .map(|t| (values[t] - m) * (values[t + lag] - m))
        .sum();
    cov / var
}

/// First lag where the autocorrelation drops below 1/e.
pub fn acf_decorrelation_lag(values: &[f64], max_lag: usize) -> Option<usize> {
    (1..=max_lag).find(|&l| autocorrelation(values, l) < (-1.0f64).exp())
}

/// Relative difference below which neighbouring MI values count as level.
const MI_FLAT_TOL: f64 = 2e-3;

/// First minimum of an MI curve indexed from lag 0.
///
/// Level runs (within [`MI_FLAT_TOL`]) form one basin and report their
/// midpoint; sampled periodic signals produce such plateaus. A lag whose MI
/// already sits at the independence level `floor` is returned immediately,
/// since the plug-in estimate only jitters around its bias from there on.
fn first_local_minimum(mi: &[f64], floor: f64) -> Option<usize> {
    let level = |a: f64, b: f64| (a - b).abs() <= MI_FLAT_TOL * a.abs().max(b.abs());
    let mut l = 1;
    while l + 1 < mi.len() {
        if mi[l] <= floor {
            return Some(l);
        }
        if mi[l + 1] < mi[l] && !level(mi[l], mi[l + 1]) {
            l += 1;
            continue;
        }
        let mut end = l;
        while end + 1 < mi.len() && level(mi[l], mi[end + 1]) {
            end += 1;
        }
        if end + 1 == mi.len() {
            return None;
        }
        if mi[end + 1] > mi[l] {
            return Some((l + end) / 2);
        }
        // a shoulder, the curve keeps falling
        l = end + 1;
    }
    None
}

/// Delay estimate: first local minimum of binned mutual information over
/// lags `1..=max_lag`, falling back to the 1/e autocorrelation lag, then to
/// `max_lag`.
pub fn estimate_tau(series: &TimeSeries, max_lag: usize) -> Result<usize> {
    if max_lag == 0 {
        return Err(Error::InvalidParameter("max_lag must be >= 1".into()));
    }
    let n = series.len();
    if n <= 2 * max_lag {
        return Err(Error::InsufficientData {
            what: "lag estimation",
            needed: 2 * max_lag + 1,
            got: n,
        });
    }
    let v = &series.values;
    if v.iter().all(|x| *x == v[0]) {
        return Err(Error::Degenerate("constant series has no delay structure".into()));
    }
    // lag 0 anchors the curve at the entropy; max_lag + 1 closes the last window
    let last = (max_lag + 1).min(n - 1);
    // every lag sees the same sample pairs so the curve is comparable across lags
    let pairs = n - last;
    let mi: Vec<f64> = (0..=last).map(|l| binned_mi(v, l, pairs, MI_BINS)).collect();
    // twice the expected plug-in MI of independent samples, (B − 1)² / 2n
    let floor = ((MI_BINS - 1) * (MI_BINS - 1)) as f64 / pairs as f64;
    if let Some(l) = first_local_minimum(&mi, floor).filter(|&l| l <= max_lag) {
        return Ok(l);
    }
    Ok(acf_decorrelation_lag(v, max_lag).unwrap_or(max_lag))
}

const FNN_RATIO: f64 = 15.0;
const FNN_ATTRACTOR_RATIO: f64 = 2.0;
const FNN_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct DimensionEstimate {
    pub k: usize,
    /// True when no dimension up to `k_max` brought the fraction below threshold.
    pub saturated: bool,
    /// False-neighbour fraction for k = 1, 2, … (as far as evaluated).
    pub fractions: Vec<f64>,
}

/// Fraction of false nearest neighbours when going from dimension `k` to `k + 1`.
///
/// Candidates within `theiler` samples of the reference point are skipped so
/// that neighbours come from other passes of the trajectory.
pub fn false_neighbor_fraction(series: &TimeSeries, tau: usize, k: usize, theiler: usize, exec: Exec) -> Result<f64> {
    let v = &series.values;
    let n = v.len();
    let first = k * tau;
    if n < first + 2 {
        return Err(Error::InsufficientData {
            what: "false-neighbour test",
            needed: first + 2,
            got: n,
        });
    }
    let m = n - first;
    let mut coords = Vec::with_capacity(m * k);
    for t in first..n {
        for j in 0..k {
            coords.push(v[t - j * tau]);
        }
    }
    let spread = stats::std_dev(v);
    // exact recurrences (rational periods) repeat a state up to round-off;
    // such copies are skipped, while points that coincide only in k
    // dimensions remain candidates and flag through the extra coordinate
    let coincident = spread * 1e-9;
    let tree = KdTree::build(&coords, k);
    let verdicts = exec.map(m, |i| {
        let q = &coords[i * k..(i + 1) * k];
        let same_state = |j: usize| {
            (v[i] - v[j]).abs() <= coincident && dist_sq(q, &coords[j * k..(j + 1) * k]) <= coincident * coincident
        };
        let nn = *tree
            .knn_filtered(q, 1, |j| j.abs_diff(i) > theiler && !same_state(j))
            .first()?;
        let r = nn.dist().max(coincident);
        let extra = (v[i + first - k * tau] - v[nn.index + first - k * tau]).abs();
        let grown = (nn.dist_sq + extra * extra).sqrt();
        Some(extra / r > FNN_RATIO || grown / spread > FNN_ATTRACTOR_RATIO)
    });
    let considered = verdicts.iter().flatten().count();
    if considered == 0 {
        return Ok(0.0);
    }
    let false_count = verdicts.iter().flatten().filter(|f| **f).count();
    Ok(false_count as f64 / considered as f64)
}

/// Smallest dimension whose false-neighbour fraction is below 1 %.
pub fn estimate_k(series: &TimeSeries, tau: usize, k_max: usize) -> Result<DimensionEstimate> {
    estimate_k_with(series, tau, k_max, Exec::default())
}

pub fn estimate_k_with(series: &TimeSeries, tau: usize, k_max: usize, exec: Exec) -> Result<DimensionEstimate> {
    if tau == 0 || k_max == 0 {
        return Err(Error::InvalidParameter("tau and k_max must be >= 1".into()));
    }
    let needed = k_max * tau + 2;
    if series.len() < needed {
        return Err(Error::InsufficientData {
            what: "dimension estimation",
            needed,
            got: series.len(),
        });
    }
    if stats::std_dev(&series.values) <= 0.0 {
        return Err(Error::Degenerate("constant series".into()));
    }
    let mut fractions = Vec::new();
    for k in 1..=k_max {
        let f = false_neighbor_fraction(series, tau, k, tau, exec)?;
        fractions.push(f);
        if f < FNN_FRACTION {
            return Ok(DimensionEstimate {
                k,
                saturated: false,
                fractions,
            });
        }
    }
    Ok(DimensionEstimate {
        k: k_max,
        saturated: true,
        fractions,
    })
}
