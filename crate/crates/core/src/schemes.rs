//! Sampling scheme planners.
//!
//! * **Autoreg** fills the unobserved frames in consecutive blocks of
//!   `stride`, each conditioned on the `max_cond` frames right before it.
//! * **Hierarchy-2** first samples up to `stride` keyframes spread evenly
//!   over the unobserved range, conditioned on the last `max_cond` observed
//!   frames, then fills the gaps left to right in groups of at most
//!   `group_size`, each conditioned on its nearest known neighbours.
//! * **Adaptive Hierarchy-2** keeps the same `X` sets but picks each `Y` at
//!   sampling time: the `max_cond` known frames that are most spread out
//!   under a frame distance (max-min).
//!
//! Only observed sets that are a prefix `0..p` are planned.
//!
//! Plans are stored as text, one stage per line, with optional `#`
//! comments:
//!
//! ```text
//! # video_length 30
//! # observed [0,1,2,3,4,5,6,7,8,9]
//! 1: X=[10,11,12,13,14,15,16,17,18,19] Y=[0,1,2,3,4,5,6,7,8,9]
//! 2: X=[20,21,22,23,24,25,26,27,28,29] Y=[10,11,12,13,14,15,16,17,18,19]
//! ```

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::FrameIndexSet;
use crate::sampler::{SamplingScheme, SamplingStage, StageSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemePlanConfig {
    pub video_length: usize,
    pub observed: FrameIndexSet,
    /// Frames per Autoreg stage; also the Hierarchy-2 keyframe count.
    pub stride: usize,
    /// Widest Hierarchy-2 gap-filling group.
    pub group_size: usize,
    pub max_cond: usize,
}

impl SchemePlanConfig {
    /// Defaults: stride 10, group size 10, at most 10 conditioning frames.
    pub fn new(video_length: usize, observed: FrameIndexSet) -> Self {
        Self {
            video_length,
            observed,
            stride: 10,
            group_size: 10,
            max_cond: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.group_size == 0 || self.max_cond == 0 {
            return Err(Error::Config(
                "stride, group_size and max_cond must be at least 1".into(),
            ));
        }
        if self.observed.is_empty() {
            return Err(Error::Config("at least one frame must be observed".into()));
        }
        if self.observed.last().is_some_and(|i| i >= self.video_length) {
            return Err(Error::Config(format!(
                "observed frames {} exceed a video of {} frames",
                self.observed, self.video_length
            )));
        }
        Ok(())
    }

    /// Length of the observed prefix.
    fn prefix(&self) -> Result<usize> {
        self.validate()?;
        if !self.observed.is_prefix() {
            return Err(Error::UnsupportedLayout(format!(
                "observed frames {} are not a prefix 0..p",
                self.observed
            )));
        }
        Ok(self.observed.len())
    }
}

/// Scheme names accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "autoreg")]
    Autoreg,
    #[serde(rename = "hierarchy2")]
    Hierarchy2,
    #[serde(rename = "adaptive-hierarchy2")]
    AdaptiveHierarchy2,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [
        SchemeKind::Hierarchy2,
        SchemeKind::Autoreg,
        SchemeKind::AdaptiveHierarchy2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Autoreg => "autoreg",
            SchemeKind::Hierarchy2 => "hierarchy2",
            SchemeKind::AdaptiveHierarchy2 => "adaptive-hierarchy2",
        }
    }

    /// Row label in reports.
    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::Autoreg => "autoreg",
            SchemeKind::Hierarchy2 => "hierarchy-2",
            SchemeKind::AdaptiveHierarchy2 => "adaptive hierarchy-2",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Usage(format!(
                    "unknown scheme `{s}`; valid names are {}",
                    names.join(", ")
                ))
            })
    }
}

pub fn plan_autoreg(config: &SchemePlanConfig) -> Result<SamplingScheme> {
    let p = config.prefix()?;
    let n = config.video_length;
    let mut stages = Vec::new();
    let mut start = p;
    while start < n {
        let end = (start + config.stride).min(n);
        let y = FrameIndexSet::range(start.saturating_sub(config.max_cond), start);
        stages.push(SamplingStage::new(FrameIndexSet::range(start, end), y)?);
        start = end;
    }
    Ok(SamplingScheme::new(stages, n, config.observed.clone()))
}

fn round_half_away(v: f64) -> usize {
    // inputs are non-negative; f64::round already rounds half away from zero
    v.round() as usize
}

/// `count` indices spread evenly over `first..=last`, both ends included.
/// Collisions after rounding are pushed one frame later while room remains.
pub fn equidistant(first: usize, last: usize, count: usize) -> FrameIndexSet {
    if count == 0 || last < first {
        return FrameIndexSet::new();
    }
    if count == 1 {
        return FrameIndexSet::from([first]);
    }
    let span = (last - first) as f64;
    let mut picked: Vec<usize> = Vec::with_capacity(count);
    for k in 0..count {
        let mut v = first + round_half_away(k as f64 * span / (count - 1) as f64);
        if let Some(&prev) = picked.last() {
            if v <= prev {
                v = prev + 1;
            }
        }
        if v <= last {
            picked.push(v);
        }
    }
    picked.into()
}

/// Hierarchy-2 keyframe and gap stages; `Y` of the gap stages follows the
/// nearest-neighbour rule.
pub fn plan_hierarchy2(config: &SchemePlanConfig) -> Result<SamplingScheme> {
    let p = config.prefix()?;
    let n = config.video_length;
    if p == n {
        return Ok(SamplingScheme::new(Vec::new(), n, config.observed.clone()));
    }
    let keys = equidistant(p, n - 1, config.stride.min(n - p));
    let y1 = FrameIndexSet::range(p - config.max_cond.min(p), p);
    let mut stages = vec![SamplingStage::new(keys.clone(), y1)?];
    let mut known = config.observed.union(&keys);
    for group in gap_groups(&keys, p, n, config.group_size) {
        let y = nearest_known(&known, &group, config.max_cond);
        known.extend_from(&group);
        stages.push(SamplingStage::new(group, y)?);
    }
    Ok(SamplingScheme::new(stages, n, config.observed.clone()))
}

/// The unknown frames of `p..n` after the keyframes, as consecutive groups
/// of at most `group_size`, left to right.
fn gap_groups(keys: &FrameIndexSet, p: usize, n: usize, group_size: usize) -> Vec<FrameIndexSet> {
    let mut groups = Vec::new();
    let mut current = Vec::new();
    for i in p..n {
        if keys.contains(i) {
            if !current.is_empty() {
                groups.push(std::mem::take(&mut current).into());
            }
            continue;
        }
        current.push(i);
        if current.len() == group_size {
            groups.push(std::mem::take(&mut current).into());
        }
    }
    if !current.is_empty() {
        groups.push(current.into());
    }
    groups
}

/// Up to `max_cond` known frames around `group`: half from each side (the
/// extra one before), with any shortfall on one side taken from the other.
fn nearest_known(known: &FrameIndexSet, group: &FrameIndexSet, max_cond: usize) -> FrameIndexSet {
    let lo = group.first().expect("nonempty group");
    let hi = group.last().expect("nonempty group");
    let before: Vec<usize> = known.iter().rev().copied().filter(|&i| i < lo).collect();
    let after: Vec<usize> = known.iter().copied().filter(|&i| i > hi).collect();
    let mut n_after = (max_cond / 2).min(after.len());
    let n_before = (max_cond - n_after).min(before.len());
    n_after = (max_cond - n_before).min(after.len());
    before[..n_before]
        .iter()
        .chain(&after[..n_after])
        .copied()
        .collect()
}

/// Distance between two `(h, w, c)` frames.
pub trait FrameDistance: Sync {
    fn id(&self) -> String;
    fn distance(&self, a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>) -> f64;
}

/// Mean squared difference of grayscale versions of the frames, area-averaged
/// down to `size x size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownscaledGrayMse {
    pub size: usize,
}

impl Default for DownscaledGrayMse {
    fn default() -> Self {
        Self { size: 16 }
    }
}

impl DownscaledGrayMse {
    pub fn thumbnail(&self, frame: ArrayView3<'_, f32>) -> Array2<f64> {
        let (h, w, c) = frame.dim();
        let gray = Array2::from_shape_fn((h, w), |(r, col)| {
            if c == 3 || c == 4 {
                0.299 * frame[[r, col, 0]] as f64
                    + 0.587 * frame[[r, col, 1]] as f64
                    + 0.114 * frame[[r, col, 2]] as f64
            } else {
                (0..c).map(|ch| frame[[r, col, ch]] as f64).sum::<f64>() / c as f64
            }
        });
        let (th, tw) = (self.size.min(h), self.size.min(w));
        if (th, tw) == (h, w) {
            return gray;
        }
        // area weights: output cell covers [i*h/th, (i+1)*h/th) input rows
        let mut out = Array2::zeros((th, tw));
        let rows = overlap_weights(h, th);
        let cols = overlap_weights(w, tw);
        for (i, rw) in rows.iter().enumerate() {
            for (j, cw) in cols.iter().enumerate() {
                let mut acc = 0.0;
                let mut total = 0.0;
                for &(r, a) in rw {
                    for &(col, b) in cw {
                        acc += a * b * gray[[r, col]];
                        total += a * b;
                    }
                }
                out[[i, j]] = acc / total;
            }
        }
        out
    }
}

fn overlap_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = from as f64 / to as f64;
    (0..to)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            (lo.floor() as usize..(hi.ceil() as usize).min(from))
                .map(|s| (s, (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0)))
                .filter(|(_, w)| *w > 0.0)
                .collect()
        })
        .collect()
}

impl FrameDistance for DownscaledGrayMse {
    fn id(&self) -> String {
        format!("gray-mse-{}", self.size)
    }

    fn distance(&self, a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>) -> f64 {
        let (ta, tb) = (self.thumbnail(a), self.thumbnail(b));
        let diff = &ta - &tb;
        diff.mapv(|v| v * v).mean().unwrap_or(0.0)
    }
}

fn min_pairwise(chosen: &[usize], dist: &impl Fn(usize, usize) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in chosen.iter().enumerate() {
        for &j in &chosen[a + 1..] {
            best = best.min(dist(i, j));
        }
    }
    best
}

/// Greedy growth from a seed set: repeatedly add the item with the largest
/// minimum distance to the chosen ones, lower index on ties.
fn grow(
    mut chosen: Vec<usize>,
    n: usize,
    k: usize,
    dist: &impl Fn(usize, usize) -> f64,
) -> Vec<usize> {
    let mut taken = vec![false; n];
    for &i in &chosen {
        taken[i] = true;
    }
    while chosen.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..n).filter(|&c| !taken[c]) {
            let score = chosen
                .iter()
                .map(|&c| dist(cand, c))
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((cand, score));
            }
        }
        let (pick, _) = best.expect("k <= n");
        taken[pick] = true;
        chosen.push(pick);
    }
    chosen.sort_unstable();
    chosen
}

/// Textbook greedy max-min over items `0..n`: start from the farthest pair
/// (lowest indices on ties), then grow. Returns sorted positions.
pub fn greedy_max_min(n: usize, k: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let k = k.min(n);
    match k {
        0 => Vec::new(),
        1 => vec![0],
        _ => {
            let mut best = (0, 1, f64::NEG_INFINITY);
            for i in 0..n {
                for j in i + 1..n {
                    let d = dist(i, j);
                    if d > best.2 {
                        best = (i, j, d);
                    }
                }
            }
            grow(vec![best.0, best.1], n, k, &dist)
        }
    }
}

/// Subsets at or below this many are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: u64 = 5_000;

/// The textbook greedy, then the same growth restarted from every other
/// pair, keeping a restart only when its minimum pairwise distance is
/// strictly larger. Exact for `k <= 3`.
pub fn multi_start_greedy(n: usize, k: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let k = k.min(n);
    let mut best = greedy_max_min(n, k, &dist);
    if k < 3 {
        return best;
    }
    let mut best_score = min_pairwise(&best, &dist);
    for i in 0..n {
        for j in i + 1..n {
            let cand = grow(vec![i, j], n, k, &dist);
            let score = min_pairwise(&cand, &dist);
            if score > best_score {
                best = cand;
                best_score = score;
            }
        }
    }
    best
}

fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k);
    let mut c: u64 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u64) / (i + 1) as u64;
    }
    c
}

/// Lexicographically first subset with the largest minimum pairwise distance.
fn exhaustive_max_min(n: usize, k: usize, dist: &impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut cur: Vec<usize> = (0..k).collect();
    let mut best = cur.clone();
    let mut best_score = min_pairwise(&cur, dist);
    loop {
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return best;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
        let score = min_pairwise(&cur, dist);
        if score > best_score {
            best.clone_from(&cur);
            best_score = score;
        }
    }
}

/// Max-min selection over items `0..n`, returned as sorted positions. Small
/// instances (at most [`EXHAUSTIVE_LIMIT`] subsets) are solved exactly,
/// larger ones with [`multi_start_greedy`].
pub fn max_min_select(n: usize, k: usize, dist: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let k = k.min(n);
    if k >= 3 && binomial(n, k) <= EXHAUSTIVE_LIMIT {
        exhaustive_max_min(n, k, &dist)
    } else {
        multi_start_greedy(n, k, dist)
    }
}

/// Pick `min(k, |candidates|)` conditioning frames that are far apart under
/// `distance`. `frames` is the whole video buffer indexed by frame number.
/// The result does not depend on the order candidates were collected in.
pub fn select_diverse_conditioning(
    candidates: &FrameIndexSet,
    frames: &Array4<f32>,
    k: usize,
    distance: &dyn FrameDistance,
) -> FrameIndexSet {
    let idx = candidates.as_slice();
    let n = idx.len();
    if k >= n {
        return candidates.clone();
    }
    let mut table = vec![0.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let d = distance.distance(
                frames.index_axis(Axis(0), idx[a]),
                frames.index_axis(Axis(0), idx[b]),
            );
            table[a * n + b] = d;
            table[b * n + a] = d;
        }
    }
    max_min_select(n, k, |a, b| table[a * n + b])
        .into_iter()
        .map(|p| idx[p])
        .collect()
}

/// Adaptive Hierarchy-2 as a stage source: the Hierarchy-2 `X` sets in
/// order, each `Y` chosen from every frame known when the stage is issued.
pub struct AdaptiveHierarchy2<'d> {
    config: SchemePlanConfig,
    xs: Vec<FrameIndexSet>,
    next: usize,
    distance: &'d dyn FrameDistance,
}

impl<'d> AdaptiveHierarchy2<'d> {
    pub fn new(config: SchemePlanConfig, distance: &'d dyn FrameDistance) -> Result<Self> {
        let xs = plan_hierarchy2(&config)?
            .stages
            .into_iter()
            .map(|s| s.x)
            .collect();
        Ok(Self {
            config,
            xs,
            next: 0,
            distance,
        })
    }
}

impl StageSource for AdaptiveHierarchy2<'_> {
    fn video_length(&self) -> usize {
        self.config.video_length
    }

    fn observed(&self) -> &FrameIndexSet {
        &self.config.observed
    }

    fn next_stage(
        &mut self,
        known: &FrameIndexSet,
        video: &Array4<f32>,
    ) -> Result<Option<SamplingStage>> {
        let Some(x) = self.xs.get(self.next).cloned() else {
            return Ok(None);
        };
        self.next += 1;
        let y = select_diverse_conditioning(known, video, self.config.max_cond, self.distance);
        SamplingStage::new(x, y).map(Some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    /// Frames never observed nor sampled.
    Coverage,
    /// Frames sampled twice, or sampled while observed.
    Disjointness,
    /// Conditioning on frames not yet known.
    Causality,
    /// Empty `X`, `X` overlapping `Y`, or indices past the end.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based stage number; `None` for whole-scheme problems.
    pub stage: Option<usize>,
    pub kind: ViolationKind,
    pub frames: FrameIndexSet,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.stage {
            Some(s) => write!(f, "stage {s}: {}", self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

/// Every coverage, disjointness and causality failure. Empty iff the scheme
/// is well formed.
pub fn validate_scheme(scheme: &SamplingScheme) -> Vec<Violation> {
    let n = scheme.video_length;
    let mut out = Vec::new();
    let past_end: FrameIndexSet = scheme
        .observed
        .iter()
        .copied()
        .filter(|&i| i >= n)
        .collect();
    if !past_end.is_empty() {
        out.push(Violation {
            stage: None,
            kind: ViolationKind::Malformed,
            reason: format!("observed frames {past_end} are past the end of the video"),
            frames: past_end,
        });
    }
    let mut known = scheme.observed.clone();
    for (i, stage) in scheme.stages.iter().enumerate() {
        let s = Some(i + 1);
        if stage.x.is_empty() {
            out.push(Violation {
                stage: s,
                kind: ViolationKind::Malformed,
                frames: FrameIndexSet::new(),
                reason: "samples no frames".into(),
            });
        }
        let both = stage.x.intersection(&stage.y);
        if !both.is_empty() {
            out.push(Violation {
                stage: s,
                kind: ViolationKind::Malformed,
                reason: format!("samples and conditions on {both}"),
                frames: both,
            });
        }
        let beyond: FrameIndexSet = stage
            .x
            .union(&stage.y)
            .iter()
            .copied()
            .filter(|&f| f >= n)
            .collect();
        if !beyond.is_empty() {
            out.push(Violation {
                stage: s,
                kind: ViolationKind::Malformed,
                reason: format!("frames {beyond} are past the end of the video"),
                frames: beyond,
            });
        }
        let unknown = stage.y.difference(&known);
        if !unknown.is_empty() {
            out.push(Violation {
                stage: s,
                kind: ViolationKind::Causality,
                reason: format!("conditions on frames {unknown} that are not known yet"),
                frames: unknown,
            });
        }
        let again = stage.x.intersection(&known);
        if !again.is_empty() {
            out.push(Violation {
                stage: s,
                kind: ViolationKind::Disjointness,
                reason: format!("samples frames {again} that are already known"),
                frames: again,
            });
        }
        known.extend_from(&stage.x);
    }
    let missing = FrameIndexSet::range(0, n).difference(&known);
    if !missing.is_empty() {
        out.push(Violation {
            stage: None,
            kind: ViolationKind::Coverage,
            reason: format!("frames {missing} are never observed or sampled"),
            frames: missing,
        });
    }
    out
}

fn write_set(f: &mut String, set: &FrameIndexSet) {
    f.push('[');
    for (i, v) in set.iter().enumerate() {
        if i > 0 {
            f.push(',');
        }
        f.push_str(&v.to_string());
    }
    f.push(']');
}

/// `s: X=[..] Y=[..]` for one stage, without a line break.
pub fn format_stage(number: usize, stage: &SamplingStage) -> String {
    let mut line = format!("{number}: X=");
    write_set(&mut line, &stage.x);
    line.push_str(" Y=");
    write_set(&mut line, &stage.y);
    line
}

fn format_header(scheme: &SamplingScheme) -> String {
    let mut out = format!("# video_length {}\n# observed ", scheme.video_length);
    write_set(&mut out, &scheme.observed);
    out.push('\n');
    out
}

pub fn format_plan(scheme: &SamplingScheme) -> String {
    let mut out = format_header(scheme);
    for (i, stage) in scheme.stages.iter().enumerate() {
        out.push_str(&format_stage(i + 1, stage));
        out.push('\n');
    }
    out
}

/// A plan file whose stage lines also carry the seed and wall time of each
/// stage as a trailing comment. It parses back as a plan.
pub fn format_trace(scheme: &SamplingScheme, trace: &[crate::sampler::StageTrace]) -> String {
    let mut out = format_header(scheme);
    for t in trace {
        let stage = SamplingStage {
            x: t.x.clone(),
            y: t.y.clone(),
        };
        out.push_str(&format!(
            "{}  # seed={} wall_seconds={:.6}\n",
            format_stage(t.stage, &stage),
            t.seed,
            t.wall_seconds
        ));
    }
    out
}

fn parse_set(text: &str) -> Result<FrameIndexSet> {
    let inner = text
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| Error::Format(format!("expected [..], found `{text}`")))?;
    let mut values = Vec::new();
    for part in inner.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        values.push(
            part.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad frame index `{part}`")))?,
        );
    }
    let set = FrameIndexSet::from(values.clone());
    if set.len() != values.len() {
        return Err(Error::Format(format!("repeated frame index in `{text}`")));
    }
    Ok(set)
}

/// Parse a plan file. Without `# video_length` / `# observed` headers the
/// length is one past the largest index and the observed frames are the
/// ones no stage samples.
pub fn parse_plan(text: &str) -> Result<SamplingScheme> {
    let mut length = None;
    let mut observed = None;
    let mut stages = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let err = |m: String| Error::Format(format!("plan line {}: {m}", lineno + 1));
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("video_length") {
                length = Some(
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| err(format!("bad length `{v}`")))?,
                );
            } else if let Some(v) = comment.strip_prefix("observed") {
                observed = Some(parse_set(v)?);
            }
            continue;
        }
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (num, rest) = line
            .split_once(':')
            .ok_or_else(|| err("missing `s:`".into()))?;
        let num: usize = num
            .trim()
            .parse()
            .map_err(|_| err(format!("bad stage number `{num}`")))?;
        if num != stages.len() + 1 {
            return Err(err(format!("stage {num} out of order")));
        }
        let rest = rest.trim();
        let rest = rest
            .strip_prefix("X=")
            .ok_or_else(|| err("expected X=".into()))?;
        let (x, y) = rest
            .split_once("Y=")
            .ok_or_else(|| err("expected Y=".into()))?;
        stages.push(SamplingStage {
            x: parse_set(x)?,
            y: parse_set(y)?,
        });
    }
    let length = match length {
        Some(l) => l,
        None => stages
            .iter()
            .flat_map(|s: &SamplingStage| s.x.iter().chain(s.y.iter()))
            .chain(observed.iter().flat_map(|o| o.iter()))
            .max()
            .map_or(0, |m| m + 1),
    };
    let observed = observed.unwrap_or_else(|| {
        let mut sampled = FrameIndexSet::new();
        for s in &stages {
            sampled.extend_from(&s.x);
        }
        FrameIndexSet::range(0, length).difference(&sampled)
    });
    Ok(SamplingScheme::new(stages, length, observed))
}
