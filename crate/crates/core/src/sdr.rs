//! Sparse distributed representations and a small cortical-layer model.
//!
//! * [`encode_scalar`] maps a real value to a contiguous block of active bits.
//! * [`kwta`] keeps the k highest-scoring units.
//! * [`TransitionMemory`] learns SDR-to-SDR transitions with columns of cells
//!   and distal segments. Each step it reports which columns were predicted
//!   and which burst; the bursting set is the correction to the prediction.
//! * [`TemporalPooler`] keeps a slowly changing SDR over runs of correctly
//!   predicted input and lets it drift in proportion to the anomaly.
//!
//! Columns map one-to-one onto input bits; there is no spatial pooler.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sdr {
    width: usize,
    active: Vec<u32>,
}

impl Sdr {
    pub fn new(width: usize, bits: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut active: Vec<u32> = Vec::new();
        for b in bits {
            if b >= width {
                return Err(Error::InvalidInput(format!("bit {b} outside width {width}")));
            }
            active.push(b as u32);
        }
        active.sort_unstable();
        active.dedup();
        Ok(Sdr { width, active })
    }

    pub fn empty(width: usize) -> Self {
        Sdr {
            width,
            active: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Active bits, ascending.
    pub fn active(&self) -> &[u32] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, bit: usize) -> bool {
        self.active.binary_search(&(bit as u32)).is_ok()
    }
}

/// Number of shared active bits.
pub fn overlap(a: &Sdr, b: &Sdr) -> Result<usize> {
    if a.width != b.width {
        return Err(Error::WidthMismatch {
            expected: a.width,
            got: b.width,
        });
    }
    Ok(sorted_intersection_len(&a.active, &b.active))
}

fn sorted_intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// The `k` highest scores win; ties go to the lowest index.
pub fn kwta(scores: &[f64], k: usize) -> Result<Sdr> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k must lie in 1..={n}, got {k}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < n {
        order.select_nth_unstable_by(k - 1, by_rank);
    }
    Sdr::new(n, order.into_iter().take(k))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarEncoderConfig {
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub w: usize,
}

impl Default for ScalarEncoderConfig {
    fn default() -> Self {
        ScalarEncoderConfig {
            min: 0.0,
            max: 1.0,
            n: 2048,
            w: 40,
        }
    }
}

impl ScalarEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::InvalidParameter(format!(
                "encoder range must satisfy min < max, got [{}, {}]",
                self.min, self.max
            )));
        }
        if self.w == 0 || self.w >= self.n {
            return Err(Error::InvalidParameter(format!(
                "encoder needs 1 <= w < n, got w={}, n={}",
                self.w, self.n
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarEncoding {
    pub sdr: Sdr,
    /// The value lay outside `[min, max]` and was clamped.
    pub clamped: bool,
}

/// `w` contiguous bits whose start moves linearly from 0 (at `min`) to
/// `n − w` (at `max`).
pub fn encode_scalar(cfg: &ScalarEncoderConfig, v: f64) -> Result<ScalarEncoding> {
    cfg.validate()?;
    if !v.is_finite() {
        return Err(Error::InvalidInput(format!("cannot encode {v}")));
    }
    let clamped = v < cfg.min || v > cfg.max;
    let v = v.clamp(cfg.min, cfg.max);
    let span = (cfg.n - cfg.w) as f64;
    let start = (((v - cfg.min) / (cfg.max - cfg.min)) * span).floor() as usize;
    let start = start.min(cfg.n - cfg.w);
    Ok(ScalarEncoding {
        sdr: Sdr::new(cfg.n, start..start + cfg.w)?,
        clamped,
    })
}

/// Concatenates one scalar encoding per field; field `i` occupies the bit
/// range after fields `0..i`. `clamped` is set if any field was clamped.
pub fn encode_fields(fields: &[(ScalarEncoderConfig, f64)]) -> Result<ScalarEncoding> {
    if fields.is_empty() {
        return Err(Error::InvalidParameter("no fields to encode".into()));
    }
    let mut bits = Vec::new();
    let mut offset = 0;
    let mut clamped = false;
    for (cfg, v) in fields {
        let e = encode_scalar(cfg, *v)?;
        clamped |= e.clamped;
        bits.extend(e.sdr.active().iter().map(|&b| b as usize + offset));
        offset += cfg.n;
    }
    Ok(ScalarEncoding {
        sdr: Sdr::new(offset, bits)?,
        clamped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TmConfig {
    pub columns: usize,
    pub cells_per_column: usize,
    pub activation_threshold: usize,
    pub learning_threshold: usize,
    pub connected_permanence: f64,
    pub initial_permanence: f64,
    pub permanence_increment: f64,
    pub permanence_decrement: f64,
    pub max_synapses_per_segment: usize,
    /// Synapses a learning segment aims to have onto the previous winners.
    pub new_synapse_count: usize,
    /// The least recently used segment is recycled beyond this count.
    pub max_segments_per_cell: usize,
    pub seed: u64,
}

impl Default for TmConfig {
    fn default() -> Self {
        TmConfig {
            columns: 2048,
            cells_per_column: 8,
            activation_threshold: 13,
            learning_threshold: 10,
            connected_permanence: 0.5,
            initial_permanence: 0.21,
            permanence_increment: 0.1,
            permanence_decrement: 0.02,
            max_synapses_per_segment: 32,
            new_synapse_count: 32,
            max_segments_per_cell: 64,
            seed: 0,
        }
    }
}

impl TmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.columns == 0 || self.cells_per_column == 0 {
            return bad("columns and cells_per_column must be positive");
        }
        if self.learning_threshold > self.activation_threshold {
            return bad("learning_threshold must not exceed activation_threshold");
        }
        if self.activation_threshold == 0 {
            return bad("activation_threshold must be positive");
        }
        for (name, p) in [
            ("connected_permanence", self.connected_permanence),
            ("initial_permanence", self.initial_permanence),
            ("permanence_increment", self.permanence_increment),
            ("permanence_decrement", self.permanence_decrement),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.max_synapses_per_segment == 0 || self.new_synapse_count == 0 || self.max_segments_per_cell == 0 {
            return bad("synapse and segment limits must be positive");
        }
        if (self.columns * self.cells_per_column) > u32::MAX as usize {
            return bad("too many cells");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Synapse {
    pub presynaptic: u32,
    pub permanence: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    cell: u32,
    synapses: Vec<Synapse>,
    last_used: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TmStepOutput {
    pub active_columns: Vec<u32>,
    pub active_cells: Vec<u32>,
    pub winner_cells: Vec<u32>,
    /// Cells predicted for the next step.
    pub predictive_cells: Vec<u32>,
    /// Active columns that held no predicted cell.
    pub bursting_columns: Vec<u32>,
    /// `|bursting| / |active columns|`, 0 for empty input.
    pub anomaly: f64,
}

/// Layer-4-style sequence memory over columns of cells.
#[derive(Clone, Debug)]
pub struct TransitionMemory {
    cfg: TmConfig,
    segments: Vec<Segment>,
    cell_segments: Vec<Vec<u32>>,
    /// `(segment, synapse slot)` pairs fed by each presynaptic cell.
    outgoing: Vec<Vec<(u32, u32)>>,
    active_cells: Vec<u32>,
    winner_cells: Vec<u32>,
    /// Segments active given `active_cells`, ascending.
    active_segments: Vec<u32>,
    /// Segments with at least `learning_threshold` potential synapses onto
    /// `active_cells`, with that count.
    matching_segments: Vec<(u32, u32)>,
    rng: ChaCha8Rng,
    iteration: u64,
}

impl PartialEq for TransitionMemory {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg
            && self.segments == other.segments
            && self.active_cells == other.active_cells
            && self.winner_cells == other.winner_cells
            && self.active_segments == other.active_segments
            && self.matching_segments == other.matching_segments
            && self.iteration == other.iteration
    }
}

impl TransitionMemory {
    pub fn new(cfg: TmConfig) -> Result<Self> {
        cfg.validate()?;
        let cells = cfg.columns * cfg.cells_per_column;
        Ok(TransitionMemory {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            segments: Vec::new(),
            cell_segments: vec![Vec::new(); cells],
            outgoing: vec![Vec::new(); cells],
            active_cells: Vec::new(),
            winner_cells: Vec::new(),
            active_segments: Vec::new(),
            matching_segments: Vec::new(),
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TmConfig {
        &self.cfg
    }

    pub fn segment_count(&self) -> usize {
        self.segments.iter().filter(|s| !s.synapses.is_empty()).count()
    }

    /// Every synapse of every segment.
    pub fn synapses(&self) -> impl Iterator<Item = &Synapse> {
        self.segments.iter().flat_map(|s| s.synapses.iter())
    }

    /// Cells predicted for the next input, ascending.
    pub fn predictive_cells(&self) -> Vec<u32> {
        let mut cells: Vec<u32> = self
            .active_segments
            .iter()
            .map(|&s| self.segments[s as usize].cell)
            .collect();
        cells.dedup();
        cells
    }

    fn column_of(&self, cell: u32) -> u32 {
        cell / self.cfg.cells_per_column as u32
    }

    /// Forgets the current sequence context without touching learned segments.
    pub fn reset(&mut self) {
        self.active_cells.clear();
        self.winner_cells.clear();
        self.active_segments.clear();
        self.matching_segments.clear();
    }

    pub fn step(&mut self, input: &Sdr, learn: bool) -> Result<TmStepOutput> {
        if input.width() != self.cfg.columns {
            return Err(Error::WidthMismatch {
                expected: self.cfg.columns,
                got: input.width(),
            });
        }
        self.iteration += 1;
        let cpc = self.cfg.cells_per_column as u32;
        let prev_active = std::mem::take(&mut self.active_cells);
        let prev_winners = std::mem::take(&mut self.winner_cells);
        let prev_active_segments = std::mem::take(&mut self.active_segments);
        let prev_matching = std::mem::take(&mut self.matching_segments);
        let prev_active_set = CellSet::from_sorted(&prev_active, self.cell_segments.len());

        // segments sorted by owning column for per-column lookup
        let seg_col = |tm: &Self, s: u32| tm.column_of(tm.segments[s as usize].cell);
        let mut active_by_col: Vec<u32> = prev_active_segments.clone();
        active_by_col.sort_by_key(|&s| (seg_col(self, s), s));
        let mut matching_by_col = prev_matching.clone();
        matching_by_col.sort_by_key(|&(s, _)| (seg_col(self, s), s));

        let mut active_cells = Vec::new();
        let mut winner_cells = Vec::new();
        let mut bursting = Vec::new();
        let mut learning: Vec<(u32, u32)> = Vec::new();
        let mut to_create: Vec<u32> = Vec::new();

        for &col in input.active() {
            let lo = active_by_col.partition_point(|&s| seg_col(self, s) < col);
            let hi = active_by_col.partition_point(|&s| seg_col(self, s) <= col);
            if lo < hi {
                let mut cells: Vec<u32> = active_by_col[lo..hi]
                    .iter()
                    .map(|&s| self.segments[s as usize].cell)
                    .collect();
                cells.dedup();
                active_cells.extend_from_slice(&cells);
                winner_cells.extend_from_slice(&cells);
                if learn {
                    for &s in &active_by_col[lo..hi] {
                        let potential = prev_matching.iter().find(|(m, _)| *m == s).map_or(0, |(_, n)| *n);
                        learning.push((s, potential));
                    }
                }
                continue;
            }
            bursting.push(col);
            active_cells.extend(col * cpc..(col + 1) * cpc);
            let mlo = matching_by_col.partition_point(|&(s, _)| seg_col(self, s) < col);
            let mhi = matching_by_col.partition_point(|&(s, _)| seg_col(self, s) <= col);
            let best = matching_by_col[mlo..mhi]
                .iter()
                .copied()
                .fold(None, |best: Option<(u32, u32)>, (s, n)| match best {
                    Some((_, bn)) if bn >= n => best,
                    _ => Some((s, n)),
                });
            match best {
                Some((s, n)) => {
                    winner_cells.push(self.segments[s as usize].cell);
                    if learn {
                        learning.push((s, n));
                    }
                }
                None => {
                    let cell = self.least_used_cell(col);
                    winner_cells.push(cell);
                    if learn && !prev_winners.is_empty() {
                        to_create.push(cell);
                    }
                }
            }
        }

        if learn {
            for (s, potential) in learning {
                self.adapt_segment(s, &prev_active_set);
                let wanted = self.cfg.new_synapse_count.saturating_sub(potential as usize);
                self.grow_synapses(s, &prev_winners, wanted);
            }
            for cell in to_create {
                let s = self.create_segment(cell);
                self.grow_synapses(s, &prev_winners, self.cfg.new_synapse_count);
            }
        }

        winner_cells.sort_unstable();
        winner_cells.dedup();
        self.active_cells = active_cells;
        self.winner_cells = winner_cells;
        self.compute_activity();

        let n_active = input.len();
        let anomaly = if n_active == 0 {
            0.0
        } else {
            bursting.len() as f64 / n_active as f64
        };
        Ok(TmStepOutput {
            active_columns: input.active().to_vec(),
            active_cells: self.active_cells.clone(),
            winner_cells: self.winner_cells.clone(),
            predictive_cells: self.predictive_cells(),
            bursting_columns: bursting,
            anomaly,
        })
    }

    /// Cell with the fewest segments in `col`; ties broken by the seeded generator.
    fn least_used_cell(&mut self, col: u32) -> u32 {
        let cpc = self.cfg.cells_per_column as u32;
        let cells = col * cpc..(col + 1) * cpc;
        let fewest = cells
            .clone()
            .map(|c| self.cell_segments[c as usize].len())
            .min()
            .unwrap_or(0);
        let ties: Vec<u32> = cells
            .filter(|&c| self.cell_segments[c as usize].len() == fewest)
            .collect();
        ties[self.rng.random_range(0..ties.len())]
    }

    fn adapt_segment(&mut self, s: u32, prev_active: &CellSet) {
        let (inc, dec) = (self.cfg.permanence_increment, self.cfg.permanence_decrement);
        let seg = &mut self.segments[s as usize];
        seg.last_used = self.iteration;
        for syn in &mut seg.synapses {
            let delta = if prev_active.contains(syn.presynaptic) {
                inc
            } else {
                -dec
            };
            syn.permanence = (syn.permanence + delta).clamp(0.0, 1.0);
        }
    }

    fn grow_synapses(&mut self, s: u32, candidates: &[u32], wanted: usize) {
        let seg = &self.segments[s as usize];
        let room = self.cfg.max_synapses_per_segment.saturating_sub(seg.synapses.len());
        let wanted = wanted.min(room);
        if wanted == 0 {
            return;
        }
        let mut pool: Vec<u32> = candidates
            .iter()
            .copied()
            .filter(|c| !seg.synapses.iter().any(|syn| syn.presynaptic == *c))
            .collect();
        pool.shuffle(&mut self.rng);
        pool.truncate(wanted);
        pool.sort_unstable();
        let init = self.cfg.initial_permanence;
        for pre in pool {
            let seg = &mut self.segments[s as usize];
            let slot = seg.synapses.len() as u32;
            seg.synapses.push(Synapse {
                presynaptic: pre,
                permanence: init,
            });
            self.outgoing[pre as usize].push((s, slot));
        }
    }

    fn create_segment(&mut self, cell: u32) -> u32 {
        let owned = &self.cell_segments[cell as usize];
        if owned.len() >= self.cfg.max_segments_per_cell {
            // recycle the least recently used segment of this cell
            let &victim = owned
                .iter()
                .min_by_key(|&&s| (self.segments[s as usize].last_used, s))
                .expect("cell owns segments");
            for syn in std::mem::take(&mut self.segments[victim as usize].synapses) {
                self.outgoing[syn.presynaptic as usize].retain(|(seg, _)| *seg != victim);
            }
            self.segments[victim as usize].last_used = self.iteration;
            return victim;
        }
        let id = self.segments.len() as u32;
        self.segments.push(Segment {
            cell,
            synapses: Vec::new(),
            last_used: self.iteration,
        });
        self.cell_segments[cell as usize].push(id);
        id
    }

    fn compute_activity(&mut self) {
        let mut connected = vec![0u32; self.segments.len()];
        let mut potential = vec![0u32; self.segments.len()];
        let mut touched = Vec::new();
        let p_con = self.cfg.connected_permanence;
        for &cell in &self.active_cells {
            for &(s, slot) in &self.outgoing[cell as usize] {
                let syn = &self.segments[s as usize].synapses[slot as usize];
                if potential[s as usize] == 0 {
                    touched.push(s);
                }
                potential[s as usize] += 1;
                if syn.permanence >= p_con {
                    connected[s as usize] += 1;
                }
            }
        }
        touched.sort_unstable();
        let act = self.cfg.activation_threshold as u32;
        let learn = self.cfg.learning_threshold as u32;
        self.active_segments = touched
            .iter()
            .copied()
            .filter(|&s| connected[s as usize] >= act)
            .collect();
        self.matching_segments = touched
            .iter()
            .copied()
            .filter(|&s| potential[s as usize] >= learn)
            .map(|s| (s, potential[s as usize]))
            .collect();
    }
}

/// Dense membership test over cell ids.
struct CellSet(Vec<bool>);

impl CellSet {
    fn from_sorted(cells: &[u32], n: usize) -> Self {
        let mut v = vec![false; n];
        for &c in cells {
            v[c as usize] = true;
        }
        CellSet(v)
    }

    fn contains(&self, c: u32) -> bool {
        self.0[c as usize]
    }
}

/// Functional form of [`TransitionMemory::step`].
pub fn tm_step(state: &mut TransitionMemory, input: &Sdr, learn: bool) -> Result<TmStepOutput> {
    state.step(input, learn)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoolerConfig {
    pub pool_size: usize,
    /// Per-step persistence retention of pooled bits whose column is inactive.
    pub decay: f64,
    /// Fraction of the pool replaced per unit of anomaly.
    pub replacement_gain: f64,
    pub persistence_cap: f64,
}

impl Default for PoolerConfig {
    fn default() -> Self {
        PoolerConfig {
            pool_size: 40,
            decay: 0.9,
            replacement_gain: 0.5,
            persistence_cap: 16.0,
        }
    }
}

/// Layer-2/3-style pooling over the transition memory's output.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalPooler {
    cfg: PoolerConfig,
    width: usize,
    pooled: Vec<u32>,
    persistence: Vec<f64>,
}

impl TemporalPooler {
    pub fn new(width: usize, cfg: PoolerConfig) -> Result<Self> {
        if cfg.pool_size == 0 || cfg.pool_size > width {
            return Err(Error::InvalidParameter(format!(
                "pool_size must lie in 1..={width}, got {}",
                cfg.pool_size
            )));
        }
        if !(cfg.decay > 0.0 && cfg.decay <= 1.0) || !(0.0..=1.0).contains(&cfg.replacement_gain) {
            return Err(Error::InvalidParameter(
                "decay must lie in (0, 1] and gain in [0, 1]".into(),
            ));
        }
        Ok(TemporalPooler {
            cfg,
            width,
            pooled: Vec::new(),
            persistence: vec![0.0; width],
        })
    }

    pub fn pooled(&self) -> Sdr {
        Sdr {
            width: self.width,
            active: self.pooled.clone(),
        }
    }

    pub fn persistence(&self, bit: usize) -> f64 {
        self.persistence[bit]
    }

    pub fn step(&mut self, out: &TmStepOutput) -> Result<Sdr> {
        if let Some(&c) = out
            .active_columns
            .iter()
            .chain(&out.bursting_columns)
            .find(|&&c| c as usize >= self.width)
        {
            return Err(Error::WidthMismatch {
                expected: self.width,
                got: c as usize + 1,
            });
        }
        let cap = self.cfg.persistence_cap;
        let bursting = &out.bursting_columns;
        let is_burst = |c: u32| bursting.binary_search(&c).is_ok();
        for &c in &out.active_columns {
            if !is_burst(c) {
                let p = &mut self.persistence[c as usize];
                *p = (*p + 1.0).min(cap);
            }
        }
        for &b in &self.pooled {
            if out.active_columns.binary_search(&b).is_err() {
                self.persistence[b as usize] *= self.cfg.decay;
            }
        }

        let in_pool = |c: &u32| self.pooled.binary_search(c).is_ok();
        let mut candidates: Vec<u32> = out.active_columns.iter().copied().filter(|c| !in_pool(c)).collect();
        candidates.sort_by(|a, b| {
            self.persistence[*b as usize]
                .total_cmp(&self.persistence[*a as usize])
                .then(a.cmp(b))
        });

        let quota = (self.cfg.replacement_gain * out.anomaly * self.pooled.len() as f64).ceil() as usize;
        let swaps = quota.min(candidates.len()).min(self.pooled.len());
        if swaps > 0 {
            let mut weakest = self.pooled.clone();
            weakest.sort_by(|a, b| {
                self.persistence[*a as usize]
                    .total_cmp(&self.persistence[*b as usize])
                    .then(a.cmp(b))
            });
            let evicted = &weakest[..swaps];
            self.pooled.retain(|b| !evicted.contains(b));
        }
        let mut fresh = candidates.into_iter();
        let mut added = 0;
        while added < swaps || self.pooled.len() < self.cfg.pool_size {
            let Some(c) = fresh.next() else { break };
            self.persistence[c as usize] = self.persistence[c as usize].max(1.0);
            let pos = self.pooled.partition_point(|&b| b < c);
            self.pooled.insert(pos, c);
            added += 1;
        }
        Ok(self.pooled())
    }
}

/// Functional form of [`TemporalPooler::step`].
pub fn temporal_pool(state: &mut TemporalPooler, tm_out: &TmStepOutput) -> Result<Sdr> {
    state.step(tm_out)
}
