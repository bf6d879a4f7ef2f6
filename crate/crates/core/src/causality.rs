//! Coupling between two reconstructed systems: the rank-based L-index and
//! convergent cross mapping.
//!
//! `L(X|Y)` asks how well the neighbourhoods of `Y` pick out neighbourhoods
//! of `X`: 1 when they coincide, near 0 when `Y`'s neighbours are no better
//! than random points of `X`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{delay_embed, EmbeddingSpec, PointCloud, TimeSeries};
use crate::forecast::neighbor_weights;
use crate::knn::{dist_sq, KdTree};
use crate::stats;
use crate::{Error, Exec, Result};

/// Ranks of every admissible neighbour of one anchor, ordered by distance
/// with ties to the lowest index.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorRanks {
    /// Candidate positions, ascending by position.
    pub candidates: Vec<usize>,
    /// `ranks[c]` is the 1-based rank of `candidates[c]`.
    pub ranks: Vec<u32>,
}

impl AnchorRanks {
    fn compute(cloud: &PointCloud, anchor: usize, theiler_w: usize) -> Self {
        let src = cloud.source_index();
        let a = cloud.point(anchor);
        let candidates: Vec<usize> = (0..cloud.len())
            .filter(|&j| j != anchor && src[j].abs_diff(src[anchor]) > theiler_w)
            .collect();
        let d: Vec<f64> = candidates.iter().map(|&j| dist_sq(a, cloud.point(j))).collect();
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&p, &q| key_order(&(d[p], candidates[p]), &(d[q], candidates[q])));
        let mut ranks = vec![0u32; candidates.len()];
        for (r, &c) in order.iter().enumerate() {
            ranks[c] = r as u32 + 1;
        }
        AnchorRanks { candidates, ranks }
    }

    /// Candidates with rank ≤ `k`.
    pub fn nearest(&self, k: usize) -> Vec<usize> {
        let mut out: Vec<(u32, usize)> = self
            .ranks
            .iter()
            .zip(&self.candidates)
            .filter(|(r, _)| **r as usize <= k)
            .map(|(r, c)| (*r, *c))
            .collect();
        out.sort_unstable();
        out.into_iter().map(|(_, c)| c).collect()
    }
}

/// Full rank table of a cloud under a Theiler exclusion window.
#[derive(Clone, Debug, PartialEq)]
pub struct RankNeighborhood {
    pub theiler_w: usize,
    pub anchors: Vec<AnchorRanks>,
}

impl RankNeighborhood {
    pub fn build(cloud: &PointCloud, theiler_w: usize, exec: Exec) -> Self {
        RankNeighborhood {
            theiler_w,
            anchors: exec.map(cloud.len(), |i| AnchorRanks::compute(cloud, i, theiler_w)),
        }
    }
}

fn key_order(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LIndexResult {
    /// `L(X|Y)`.
    pub l_xy: f64,
    /// `L(Y|X)`.
    pub l_yx: f64,
    pub k: usize,
    pub n: usize,
}

fn check_pair(x: &PointCloud, y: &PointCloud, k: usize, theiler_w: usize) -> Result<()> {
    if x.source_index() != y.source_index() {
        return Err(Error::Alignment(format!(
            "clouds must share source indices ({} vs {} points); align them first",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let max_k = n.saturating_sub(2 + 2 * theiler_w);
    if k == 0 || k > max_k {
        return Err(Error::InvalidParameter(format!(
            "k must lie in 1..={max_k} for {n} points and Theiler window {theiler_w}, got {k}"
        )));
    }
    Ok(())
}

/// Rank-based interdependence in both directions, averaged over all anchors.
pub fn l_index(x: &PointCloud, y: &PointCloud, k: usize, theiler_w: usize) -> Result<LIndexResult> {
    l_index_with(x, y, k, theiler_w, Exec::default())
}

pub fn l_index_with(x: &PointCloud, y: &PointCloud, k: usize, theiler_w: usize, exec: Exec) -> Result<LIndexResult> {
    check_pair(x, y, k, theiler_w)?;
    let n = x.len();
    let min_mean = (k as f64 + 1.0) / 2.0;
    let terms = exec.map(n, |i| {
        let src = x.source_index();
        let keyed = |cloud: &PointCloud| -> Vec<(f64, usize)> {
            let a = cloud.point(i);
            (0..n)
                .filter(|&j| j != i && src[j].abs_diff(src[i]) > theiler_w)
                .map(|j| (dist_sq(a, cloud.point(j)), j))
                .collect()
        };
        let (kx, ky) = (keyed(x), keyed(y));
        let mean_rank = (kx.len() as f64 + 1.0) / 2.0;
        // mean rank in `own` of the k nearest candidates in `other`
        let cross = |own: &[(f64, usize)], other: &[(f64, usize)]| -> f64 {
            let mut sel = other.to_vec();
            sel.select_nth_unstable_by(k - 1, key_order);
            let sum: usize = sel[..k]
                .iter()
                .map(|&(_, j)| {
                    let slot = own.partition_point(|c| c.1 < j);
                    let me = &own[slot];
                    1 + own.iter().filter(|c| key_order(c, me).is_lt()).count()
                })
                .sum();
            sum as f64 / k as f64
        };
        let term_xy = (mean_rank - cross(&kx, &ky)) / (mean_rank - min_mean);
        let term_yx = (mean_rank - cross(&ky, &kx)) / (mean_rank - min_mean);
        (term_xy, term_yx)
    });
    let (sxy, syx) = terms.iter().fold((0.0, 0.0), |(a, b), (p, q)| (a + p, b + q));
    Ok(LIndexResult {
        l_xy: sxy / n as f64,
        l_yx: syx / n as f64,
        k,
        n,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossMapDirection {
    /// The target series is estimated from the source's manifold.
    TargetFromSource,
    SourceFromTarget,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcmCurve {
    pub library_sizes: Vec<usize>,
    /// Pearson correlation of cross-mapped estimates with the true values.
    pub skill: Vec<f64>,
    pub direction: CrossMapDirection,
}

/// Cross-map skill of estimating `target` from the delay manifold of
/// `source` for each library size. Each size draws its own seeded random
/// library; every manifold point is then estimated from its `kn` nearest
/// library neighbours (itself excluded).
pub fn ccm_skill(
    target: &TimeSeries,
    source: &TimeSeries,
    spec: EmbeddingSpec,
    library_sizes: &[usize],
    kn: usize,
    seed: u64,
) -> Result<CcmCurve> {
    ccm_skill_with(target, source, spec, library_sizes, kn, seed, Exec::default())
}

pub fn ccm_skill_with(
    target: &TimeSeries,
    source: &TimeSeries,
    spec: EmbeddingSpec,
    library_sizes: &[usize],
    kn: usize,
    seed: u64,
    exec: Exec,
) -> Result<CcmCurve> {
    if target.len() != source.len() {
        return Err(Error::Alignment(format!(
            "target has {} samples, source has {}",
            target.len(),
            source.len()
        )));
    }
    if kn == 0 {
        return Err(Error::InvalidParameter("kn must be >= 1".into()));
    }
    let manifold = delay_embed(source, spec)?;
    let n = manifold.len();
    let largest = library_sizes.iter().copied().max().unwrap_or(0);
    if largest > n {
        return Err(Error::InsufficientData {
            what: "cross-map library",
            needed: largest,
            got: n,
        });
    }
    if let Some(&small) = library_sizes.iter().find(|&&l| l <= kn) {
        return Err(Error::InvalidParameter(format!(
            "library size {small} leaves fewer than kn={kn} neighbours"
        )));
    }
    let truth: Vec<f64> = manifold.source_index().iter().map(|&t| target.values[t]).collect();
    let mut skill = Vec::with_capacity(library_sizes.len());
    for &size in library_sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (size as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut subset = index::sample(&mut rng, n, size).into_vec();
        subset.sort_unstable();
        let tree = KdTree::build_subset(manifold.coords(), manifold.k(), &subset);
        let estimates = exec.map(n, |i| {
            let nb = tree.knn_filtered(manifold.point(i), kn, |j| j != i);
            let d: Vec<f64> = nb.iter().map(|m| m.dist()).collect();
            neighbor_weights(&d)
                .iter()
                .zip(&nb)
                .map(|(w, m)| w * truth[m.index])
                .sum::<f64>()
        });
        skill.push(stats::pearson(&estimates, &truth));
    }
    Ok(CcmCurve {
        library_sizes: library_sizes.to_vec(),
        skill,
        direction: CrossMapDirection::TargetFromSource,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Independent,
    XDrivesY,
    YDrivesX,
    Bidirectional,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Independent => "independent",
            Verdict::XDrivesY => "x_drives_y",
            Verdict::YDrivesX => "y_drives_x",
            Verdict::Bidirectional => "bidirectional",
        }
    }
}

pub const SURROGATES: usize = 20;
pub const NULL_QUANTILE: f64 = 0.95;
/// L values below this are not reported as coupling even when they beat the
/// surrogates.
pub const MIN_EFFECT: f64 = 0.05;
/// When both directions are significant, the weaker must reach this
/// fraction of the stronger for the pair to count as bidirectional.
pub const DOMINANCE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct SynchronyReport {
    pub verdict: Verdict,
    pub observed: LIndexResult,
    pub null_xy: f64,
    pub null_yx: f64,
}

/// Tests both L directions against circularly shifted surrogates of `Y`.
///
/// A high `L(X|Y)` means `Y`'s neighbourhoods recover `X`'s: `Y` carries
/// the state of `X`, which is what a driven response does. So a significant
/// `L(X|Y)` alone, or one that dominates `L(Y|X)`, reads as X driving Y.
pub fn synchrony_test(
    x: &PointCloud,
    y: &PointCloud,
    k: usize,
    theiler_w: usize,
    seed: u64,
) -> Result<SynchronyReport> {
    synchrony_test_with(x, y, k, theiler_w, seed, Exec::default())
}

pub fn synchrony_test_with(
    x: &PointCloud,
    y: &PointCloud,
    k: usize,
    theiler_w: usize,
    seed: u64,
    exec: Exec,
) -> Result<SynchronyReport> {
    let observed = l_index_with(x, y, k, theiler_w, exec)?;
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = (n / 10).max(theiler_w + 1).min(n / 2);
    let shifts: Vec<usize> = (0..SURROGATES).map(|_| rng.random_range(margin..=n - margin)).collect();
    let nulls = exec.try_map(SURROGATES, |s| {
        let rows: Vec<usize> = (0..n).map(|i| (i + shifts[s]) % n).collect();
        let shifted = y.select(&rows);
        let shifted = PointCloud::from_parts(y.k(), shifted.coords().to_vec(), x.source_index().to_vec())?;
        l_index_with(x, &shifted, k, theiler_w, Exec::Sequential)
    })?;
    let null_xy = stats::quantile(&nulls.iter().map(|r| r.l_xy).collect::<Vec<_>>(), NULL_QUANTILE);
    let null_yx = stats::quantile(&nulls.iter().map(|r| r.l_yx).collect::<Vec<_>>(), NULL_QUANTILE);
    let sig_xy = observed.l_xy > null_xy && observed.l_xy > MIN_EFFECT;
    let sig_yx = observed.l_yx > null_yx && observed.l_yx > MIN_EFFECT;
    let verdict = match (sig_xy, sig_yx) {
        (false, false) => Verdict::Independent,
        (true, false) => Verdict::XDrivesY,
        (false, true) => Verdict::YDrivesX,
        (true, true) if observed.l_yx < DOMINANCE * observed.l_xy => Verdict::XDrivesY,
        (true, true) if observed.l_xy < DOMINANCE * observed.l_yx => Verdict::YDrivesX,
        (true, true) => Verdict::Bidirectional,
    };
    Ok(SynchronyReport {
        verdict,
        observed,
        null_xy,
        null_yx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_cloud(seed: u64, n: usize, k: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n + k - 1).map(|_| StandardNormal.sample(&mut rng)).collect();
        delay_embed(&TimeSeries::new(1.0, v).unwrap(), EmbeddingSpec { tau: 1, k }).unwrap()
    }

    #[test]
    fn identical_clouds_give_exactly_one() {
        let x = noise_cloud(1, 300, 3);
        for w in [0, 3] {
            let r = l_index(&x, &x, 7, w).unwrap();
            assert_eq!(r.l_xy, 1.0);
            assert_eq!(r.l_yx, 1.0);
        }
    }

    #[test]
    fn matches_full_rank_tables() {
        let x = noise_cloud(5, 120, 2);
        let y = noise_cloud(6, 120, 2).scaled(0.5);
        let (k, w) = (4, 3);
        let tx = RankNeighborhood::build(&x, w, Exec::Sequential);
        let ty = RankNeighborhood::build(&y, w, Exec::Sequential);
        let l = |own: &RankNeighborhood, other: &RankNeighborhood| -> f64 {
            let mut total = 0.0;
            for (a, b) in own.anchors.iter().zip(&other.anchors) {
                let g = (a.candidates.len() as f64 + 1.0) / 2.0;
                let picked = b.nearest(k);
                let mean: f64 = picked
                    .iter()
                    .map(|j| a.ranks[a.candidates.binary_search(j).unwrap()] as f64)
                    .sum::<f64>()
                    / k as f64;
                total += (g - mean) / (g - (k as f64 + 1.0) / 2.0);
            }
            total / own.anchors.len() as f64
        };
        let r = l_index_with(&x, &y, k, w, Exec::Sequential).unwrap();
        assert_eq!(r.l_xy, l(&tx, &ty));
        assert_eq!(r.l_yx, l(&ty, &tx));
    }

    #[test]
    fn rank_rows_are_permutations() {
        let x = noise_cloud(2, 80, 2);
        let table = RankNeighborhood::build(&x, 2, Exec::Sequential);
        for (i, a) in table.anchors.iter().enumerate() {
            let mut r = a.ranks.clone();
            r.sort_unstable();
            assert_eq!(r, (1..=a.candidates.len() as u32).collect::<Vec<_>>());
            assert!(a.candidates.iter().all(|&j| j.abs_diff(i) > 2));
        }
    }

    #[test]
    fn misaligned_and_bad_k() {
        let x = noise_cloud(3, 50, 2);
        let y = noise_cloud(4, 60, 2);
        assert!(matches!(l_index(&x, &y, 3, 0), Err(Error::Alignment(_))));
        assert!(matches!(l_index(&x, &x, 0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(l_index(&x, &x, 47, 1), Err(Error::InvalidParameter(_))));
        assert!(l_index(&x, &x, 46, 1).is_ok());
    }

    #[test]
    fn ccm_rejects_bad_sizes() {
        let s = TimeSeries::new(1.0, (0..100).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let spec = EmbeddingSpec { tau: 1, k: 2 };
        assert!(matches!(
            ccm_skill(&s, &s, spec, &[500], 3, 0),
            Err(Error::InsufficientData { .. })
        ));
        assert!(ccm_skill(&s, &s, spec, &[3], 3, 0).is_err());
        let short = TimeSeries::new(1.0, vec![0.0; 50]).unwrap();
        assert!(matches!(
            ccm_skill(&s, &short, spec, &[10], 3, 0),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn identical_pair_is_bidirectional() {
        let x = noise_cloud(5, 200, 2);
        let rep = synchrony_test(&x, &x, 5, 0, 9).unwrap();
        assert_eq!(rep.verdict, Verdict::Bidirectional);
    }
}
