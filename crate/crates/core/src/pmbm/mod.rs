//! Poisson multi-Bernoulli mixture posterior over sets of trajectories and
//! its recursion: prediction for the current-trajectories and
//! all-trajectories formulations, the measurement update, hypothesis-table
//! reduction and trajectory extraction.
//!
//! Global hypotheses are rows of a look-up table: entry `(row, track)` names
//! the single-trajectory hypothesis of that track participating in the
//! global hypothesis, or nothing when the track is absent from it. Row and
//! hypothesis weights live in the log domain throughout.

mod update;

pub use update::{update, AssociationEngine, UpdateConfig};

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::ggiw::{ggiw_predict, GgiwDensity, MotionModel};
use crate::numeric::log_sum_exp;
use crate::trajectory::{
    TrajectoryBernoulli, TrajectoryComponent, TrajectoryDensity, TrajectoryPoisson,
    TrajectoryRecord,
};
use crate::{Error, Result};

/// Which set of trajectories the posterior tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackerMode {
    /// Only trajectories alive at the current time.
    CurrentTrajectories,
    /// Every trajectory that has existed up to the current time.
    AllTrajectories,
}

impl TrackerMode {
    fn name(&self) -> &'static str {
        match self {
            TrackerMode::CurrentTrajectories => "current-trajectories",
            TrackerMode::AllTrajectories => "all-trajectories",
        }
    }
}

/// One data-association sequence for one track: weight, Bernoulli density
/// and the history of claimed measurements.
#[derive(Debug, Clone)]
pub struct SingleTrajectoryHypothesis {
    pub log_weight: f64,
    pub bernoulli: TrajectoryBernoulli,
    /// Sorted (scan time, measurement index) pairs; extended targets may
    /// claim several measurements of the same scan.
    pub assoc_history: Vec<(u32, u32)>,
}

/// A potential target with its tree of single-trajectory hypotheses.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u32,
    pub hypotheses: Vec<SingleTrajectoryHypothesis>,
}

/// One global hypothesis: a log weight and one optional hypothesis index per
/// track. `None` is the zero entry of the look-up table: the track does not
/// exist in this global hypothesis (or was pruned out of it).
#[derive(Debug, Clone)]
pub struct TableRow {
    pub log_weight: f64,
    pub entries: Vec<Option<usize>>,
    /// Set once pruning or merging has folded factors into this row's
    /// weight; such rows no longer factorize over their references.
    pub pruned_lineage: bool,
}

impl TableRow {
    pub fn new(log_weight: f64, entries: Vec<Option<usize>>) -> Self {
        TableRow {
            log_weight,
            entries,
            pruned_lineage: false,
        }
    }
}

/// Global hypothesis look-up table; rows are normalized so their weights sum
/// to one.
#[derive(Debug, Clone, Default)]
pub struct HypothesisTable {
    pub rows: Vec<TableRow>,
}

impl HypothesisTable {
    pub fn normalize(&mut self) {
        let total = log_sum_exp(&self.rows.iter().map(|r| r.log_weight).collect::<Vec<_>>());
        if total.is_finite() {
            for row in &mut self.rows {
                row.log_weight -= total;
            }
        }
    }

    /// Highest-weight row; ties break toward the lower row index.
    pub fn best_row(&self) -> Option<&TableRow> {
        self.rows
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.log_weight
                    .partial_cmp(&b.log_weight)
                    .unwrap()
                    .then(ib.cmp(ia))
            })
            .map(|(_, r)| r)
    }
}

/// The PMBM posterior: undetected Poisson intensity plus the
/// multi-Bernoulli mixture of detected tracks.
#[derive(Debug, Clone)]
pub struct PmbmPosterior {
    pub mode: TrackerMode,
    /// Time index the densities refer to (number of prediction steps taken).
    pub time: u32,
    pub undetected: TrajectoryPoisson,
    pub tracks: Vec<Track>,
    pub table: HypothesisTable,
    next_track_id: u32,
}

impl PmbmPosterior {
    /// Empty posterior at time zero: no undetected intensity, no tracks and
    /// the single empty global hypothesis.
    pub fn new(mode: TrackerMode) -> Self {
        PmbmPosterior {
            mode,
            time: 0,
            undetected: TrajectoryPoisson::default(),
            tracks: Vec::new(),
            table: HypothesisTable {
                rows: vec![TableRow::new(0.0, Vec::new())],
            },
            next_track_id: 0,
        }
    }

    pub(crate) fn allocate_track_id(&mut self) -> u32 {
        let id = self.next_track_id;
        self.next_track_id += 1;
        id
    }

    /// Appends a track column. Existing rows do not reference it; callers
    /// set row entries themselves. Returns the column index.
    pub fn push_track(&mut self, hypotheses: Vec<SingleTrajectoryHypothesis>) -> usize {
        let id = self.allocate_track_id();
        self.tracks.push(Track { id, hypotheses });
        for row in &mut self.table.rows {
            row.entries.push(None);
        }
        self.tracks.len() - 1
    }

    pub fn hypothesis(&self, track: usize, hyp: usize) -> &SingleTrajectoryHypothesis {
        &self.tracks[track].hypotheses[hyp]
    }

    /// Diagnostics dump of the table, tracks and Poisson intensity.
    pub fn snapshot(&self) -> String {
        let mut s = String::new();
        writeln!(s, "pmbm mode={} time={}", self.mode.name(), self.time).unwrap();
        writeln!(
            s,
            "poisson components={} mass={:.6}",
            self.undetected.components.len(),
            self.undetected.total_weight()
        )
        .unwrap();
        writeln!(s, "tracks={}", self.tracks.len()).unwrap();
        for track in &self.tracks {
            writeln!(
                s,
                "  track id={} hypotheses={}",
                track.id,
                track.hypotheses.len()
            )
            .unwrap();
            for (h, hyp) in track.hypotheses.iter().enumerate() {
                let comp = hyp.bernoulli.density.dominant();
                writeln!(
                    s,
                    "    hyp {} log_w={:.6} r={:.6} components={} span={:?} history={}",
                    h,
                    hyp.log_weight,
                    hyp.bernoulli.existence,
                    hyp.bernoulli.density.components.len(),
                    comp.map(|c| (c.birth, c.end)),
                    hyp.assoc_history.len()
                )
                .unwrap();
            }
        }
        writeln!(s, "global hypotheses={}", self.table.rows.len()).unwrap();
        for row in &self.table.rows {
            let entries: Vec<String> = row
                .entries
                .iter()
                .map(|e| e.map(|i| (i + 1).to_string()).unwrap_or_else(|| "0".into()))
                .collect();
            writeln!(s, "  w={:.6} [{}]", row.log_weight.exp(), entries.join(" ")).unwrap();
        }
        s
    }
}

/// Poisson birth intensity: per-step birth components placed by the
/// scenario.
#[derive(Debug, Clone, Default)]
pub struct BirthModel {
    /// (expected births per scan, prior density) per birth site.
    pub components: Vec<(f64, GgiwDensity)>,
}

/// Thresholds of the reduction stage. Zeros disable all pruning; duplicate
/// global hypotheses are always merged.
#[derive(Debug, Clone, Copy)]
pub struct ReductionConfig {
    /// Global hypotheses below this normalized weight are removed.
    pub global_prune: f64,
    /// Bernoulli hypotheses below this existence probability are removed.
    pub existence_prune: f64,
    /// Poisson mixture components below this weight are removed.
    pub poisson_prune: f64,
}

impl ReductionConfig {
    pub fn none() -> Self {
        ReductionConfig {
            global_prune: 0.0,
            existence_prune: 0.0,
            poisson_prune: 0.0,
        }
    }
}

/// Missed-detection factors: the weight multiplier `1 - r + r * L` and the
/// posterior existence `r L / (1 - r + r L)`, where `L` is the hypothesis's
/// empty-set predictive likelihood.
pub fn missed_detection_factors(existence: f64, lik_empty: f64) -> (f64, f64) {
    let factor = 1.0 - existence + existence * lik_empty;
    let posterior_existence = if factor > 0.0 {
        existence * lik_empty / factor
    } else {
        0.0
    };
    (factor, posterior_existence)
}

/// New-track Bernoulli folding: for singleton cells the weight is
/// `kappa + <D_u; l>` and the existence the ratio; multi-measurement cells
/// cannot be clutter, so existence is one.
pub fn new_track_weight_existence(
    log_pred_lik: f64,
    log_clutter: f64,
    cell_size: usize,
) -> (f64, f64) {
    if cell_size == 1 {
        let log_w = log_sum_exp(&[log_clutter, log_pred_lik]);
        let existence = if log_w.is_finite() {
            (log_pred_lik - log_w).exp()
        } else {
            0.0
        };
        (log_w, existence)
    } else {
        (log_pred_lik, 1.0)
    }
}

fn predict_component(
    comp: &TrajectoryComponent,
    motion: &MotionModel,
) -> Result<TrajectoryComponent> {
    let mut steps = comp.steps.clone();
    steps.push(ggiw_predict(comp.final_state(), motion)?);
    Ok(TrajectoryComponent {
        weight: comp.weight,
        birth: comp.birth,
        end: comp.end + 1,
        steps,
    })
}

fn birth_components(birth: &BirthModel, time: u32) -> Vec<TrajectoryComponent> {
    birth
        .components
        .iter()
        .map(|(weight, density)| TrajectoryComponent::born(*weight, time, density.clone()))
        .collect()
}

/// Prediction for the set of current trajectories: existence scales by the
/// survival mass, densities condition on survival and extend by one step,
/// and the undetected intensity is survival-thinned and refreshed by birth.
pub fn predict_current(
    posterior: &PmbmPosterior,
    motion: &MotionModel,
    birth: &BirthModel,
) -> Result<PmbmPosterior> {
    if posterior.mode != TrackerMode::CurrentTrajectories {
        return Err(Error::ModeMismatch {
            expected: "current-trajectories",
            got: posterior.mode.name(),
        });
    }
    let now = posterior.time;
    let next = now + 1;
    let mut out = posterior.clone();
    out.time = next;

    for track in &mut out.tracks {
        for hyp in &mut track.hypotheses {
            let alive_mass = hyp.bernoulli.density.alive_mass(now);
            hyp.bernoulli.existence *= motion.survival * alive_mass;
            let mut survived = Vec::new();
            for comp in &hyp.bernoulli.density.components {
                if comp.end == now {
                    survived.push(predict_component(comp, motion)?);
                }
            }
            let mut density = TrajectoryDensity {
                components: survived,
            };
            density.normalize();
            hyp.bernoulli.density = density;
        }
    }

    let mut poisson = Vec::new();
    for comp in &out.undetected.components {
        if comp.end == now {
            let mut predicted = predict_component(comp, motion)?;
            predicted.weight *= motion.survival;
            poisson.push(predicted);
        }
    }
    poisson.extend(birth_components(birth, next));
    out.undetected = TrajectoryPoisson {
        components: poisson,
    };
    Ok(out)
}

/// Prediction for the set of all trajectories: weights and existence are
/// untouched; each component alive at the previous step splits into a dead
/// copy and a survival-weighted extension, and dead components persist.
pub fn predict_all(
    posterior: &PmbmPosterior,
    motion: &MotionModel,
    birth: &BirthModel,
) -> Result<PmbmPosterior> {
    if posterior.mode != TrackerMode::AllTrajectories {
        return Err(Error::ModeMismatch {
            expected: "all-trajectories",
            got: posterior.mode.name(),
        });
    }
    let now = posterior.time;
    let next = now + 1;
    let mut out = posterior.clone();
    out.time = next;

    let split = |comp: &TrajectoryComponent| -> Result<Vec<TrajectoryComponent>> {
        if comp.end < now {
            return Ok(vec![comp.clone()]);
        }
        let mut dead = comp.clone();
        dead.weight *= 1.0 - motion.survival;
        let mut alive = predict_component(comp, motion)?;
        alive.weight *= motion.survival;
        let mut parts = Vec::new();
        if dead.weight > 0.0 {
            parts.push(dead);
        }
        parts.push(alive);
        Ok(parts)
    };

    for track in &mut out.tracks {
        for hyp in &mut track.hypotheses {
            let mut components = Vec::new();
            for comp in &hyp.bernoulli.density.components {
                components.extend(split(comp)?);
            }
            hyp.bernoulli.density = TrajectoryDensity { components };
        }
    }

    let mut poisson = Vec::new();
    for comp in &out.undetected.components {
        poisson.extend(split(comp)?);
    }
    poisson.extend(birth_components(birth, next));
    out.undetected = TrajectoryPoisson {
        components: poisson,
    };
    Ok(out)
}

/// Reduction: prune light global hypotheses, drop Bernoulli hypotheses that
/// are weak or unreferenced, merge duplicate rows and thin the Poisson
/// mixture. Weights are renormalized at the end.
pub fn reduce(posterior: PmbmPosterior, cfg: &ReductionConfig) -> Result<PmbmPosterior> {
    let mut p = posterior;
    p.table.normalize();

    // Global hypothesis pruning on normalized weights.
    let threshold = if cfg.global_prune > 0.0 {
        cfg.global_prune.ln()
    } else {
        f64::NEG_INFINITY
    };
    p.table.rows.retain(|row| row.log_weight >= threshold);
    if p.table.rows.is_empty() {
        return Err(Error::EmptyPosterior);
    }
    p.table.normalize();

    // Existence pruning: drop weak Bernoullis out of the rows referencing
    // them.
    if cfg.existence_prune > 0.0 {
        for row in &mut p.table.rows {
            for (t, entry) in row.entries.iter_mut().enumerate() {
                if let Some(h) = *entry {
                    if p.tracks[t].hypotheses[h].bernoulli.existence < cfg.existence_prune {
                        *entry = None;
                        row.pruned_lineage = true;
                    }
                }
            }
        }
    }

    // Drop unreferenced hypotheses and re-index.
    let n_tracks = p.tracks.len();
    let mut referenced: Vec<Vec<bool>> = p
        .tracks
        .iter()
        .map(|t| vec![false; t.hypotheses.len()])
        .collect();
    for row in &p.table.rows {
        for (t, entry) in row.entries.iter().enumerate() {
            if let Some(h) = *entry {
                referenced[t][h] = true;
            }
        }
    }
    let mut remap: Vec<Vec<Option<usize>>> = Vec::with_capacity(n_tracks);
    for (t, track) in p.tracks.iter_mut().enumerate() {
        let mut map = vec![None; track.hypotheses.len()];
        let mut kept = Vec::new();
        for (h, hyp) in track.hypotheses.drain(..).enumerate() {
            if referenced[t][h] {
                map[h] = Some(kept.len());
                kept.push(hyp);
            }
        }
        track.hypotheses = kept;
        remap.push(map);
    }
    for row in &mut p.table.rows {
        for (t, entry) in row.entries.iter_mut().enumerate() {
            *entry = entry.and_then(|h| remap[t][h]);
        }
    }

    // Drop tracks that vanished from every global hypothesis.
    let keep_track: Vec<bool> = p.tracks.iter().map(|t| !t.hypotheses.is_empty()).collect();
    p.tracks = p
        .tracks
        .into_iter()
        .zip(keep_track.iter())
        .filter_map(|(t, keep)| keep.then_some(t))
        .collect();
    for row in &mut p.table.rows {
        row.entries = row
            .entries
            .iter()
            .zip(keep_track.iter())
            .filter_map(|(e, keep)| keep.then_some(*e))
            .collect();
    }

    // Merge duplicate rows: identical hypothesis-index vectors describe the
    // same global hypothesis, so their weights add.
    let mut merged: Vec<TableRow> = Vec::new();
    let mut index: HashMap<Vec<Option<usize>>, usize> = HashMap::new();
    for row in p.table.rows.drain(..) {
        match index.get(&row.entries) {
            Some(&i) => {
                merged[i].log_weight = log_sum_exp(&[merged[i].log_weight, row.log_weight]);
                merged[i].pruned_lineage = true;
            }
            None => {
                index.insert(row.entries.clone(), merged.len());
                merged.push(row);
            }
        }
    }
    p.table.rows = merged;
    p.table.normalize();

    // Poisson mixture pruning.
    if cfg.poisson_prune > 0.0 {
        p.undetected
            .components
            .retain(|c| c.weight >= cfg.poisson_prune);
    }
    Ok(p)
}

/// Trajectory extraction: from the highest-weight global hypothesis, each
/// referenced Bernoulli with existence above one half contributes its most
/// probable (birth, end) component as per-step kinematic means and extent
/// means.
pub fn estimate(posterior: &PmbmPosterior) -> Vec<TrajectoryRecord> {
    let Some(best) = posterior.table.best_row() else {
        return Vec::new();
    };
    let mut records = Vec::new();
    for (t, entry) in best.entries.iter().enumerate() {
        let Some(h) = *entry else { continue };
        let hyp = &posterior.tracks[t].hypotheses[h];
        if hyp.bernoulli.existence <= 0.5 {
            continue;
        }
        let Some(comp) = hyp.bernoulli.density.dominant() else {
            continue;
        };
        let states = comp
            .steps
            .iter()
            .map(|g| (g.kin_mean, g.extent_mean()))
            .collect();
        records.push(TrajectoryRecord {
            id: posterior.tracks[t].id,
            birth: comp.birth,
            states,
        });
    }
    records
}

/// Machine-checkable structural predicate for the PMBM form: table shape,
/// weight normalization, Bernoulli ranges, density support, per-row
/// disjointness of association histories and the factorization of row
/// weights into hypothesis weights. Passing scan sizes additionally demands
/// exact per-row coverage of every measurement, which is only sound when
/// nothing has been pruned.
pub fn check_structure(
    posterior: &PmbmPosterior,
    full_cover_scans: Option<&[usize]>,
) -> Vec<String> {
    let mut issues = Vec::new();
    let p = posterior;

    if p.table.rows.is_empty() {
        issues.push("table has no rows".into());
    }
    let log_total = log_sum_exp(
        &p.table
            .rows
            .iter()
            .map(|r| r.log_weight)
            .collect::<Vec<_>>(),
    );
    if (log_total.exp() - 1.0).abs() > 1e-12 {
        issues.push(format!("row weights sum to {} (expect 1)", log_total.exp()));
    }

    for comp in &p.undetected.components {
        if comp.weight < 0.0 {
            issues.push("negative poisson component weight".into());
        }
        if comp.end > p.time {
            issues.push("poisson component ends in the future".into());
        }
    }

    for track in &p.tracks {
        for hyp in &track.hypotheses {
            let r = hyp.bernoulli.existence;
            if !(0.0..=1.0 + 1e-12).contains(&r) {
                issues.push(format!("track {} existence {} out of range", track.id, r));
            }
            if r > 0.0 && !hyp.bernoulli.density.check_support(true, 1e-12) {
                issues.push(format!(
                    "track {} density support/normalization broken",
                    track.id
                ));
            }
            for comp in &hyp.bernoulli.density.components {
                if comp.end > p.time {
                    issues.push("bernoulli component ends in the future".into());
                }
                if p.mode == TrackerMode::CurrentTrajectories && comp.end != p.time {
                    issues.push("current-trajectories density has a dead component".into());
                }
            }
        }
    }

    for (ri, row) in p.table.rows.iter().enumerate() {
        if row.entries.len() != p.tracks.len() {
            issues.push(format!("row {ri} arity mismatch"));
            continue;
        }
        let mut claimed = std::collections::HashSet::new();
        for (t, entry) in row.entries.iter().enumerate() {
            let Some(h) = *entry else { continue };
            match p.tracks[t].hypotheses.get(h) {
                None => issues.push(format!("row {ri} references missing hypothesis")),
                Some(hyp) => {
                    for pair in &hyp.assoc_history {
                        if !claimed.insert(*pair) {
                            issues.push(format!("row {ri}: measurement {:?} claimed twice", pair));
                        }
                    }
                }
            }
        }
        if let Some(scans) = full_cover_scans {
            for (time0, &size) in scans.iter().enumerate() {
                let time = time0 as u32 + 1;
                for j in 0..size as u32 {
                    if !claimed.contains(&(time, j)) {
                        issues.push(format!("row {ri}: measurement ({time},{j}) not covered"));
                    }
                }
            }
        }
    }

    // Row weight factorization: log w_row - sum of referenced hypothesis log
    // weights must be the same constant for every row. Pruning and merging
    // fold factors into row weights irreversibly, so only clean-lineage rows
    // with finite weight are comparable.
    let mut constant: Option<f64> = None;
    for row in &p.table.rows {
        if row.pruned_lineage || !row.log_weight.is_finite() {
            continue;
        }
        let mut s = row.log_weight;
        for (t, entry) in row.entries.iter().enumerate() {
            if let Some(h) = *entry {
                if let Some(hyp) = p.tracks[t].hypotheses.get(h) {
                    s -= hyp.log_weight;
                }
            }
        }
        match constant {
            None => constant = Some(s),
            Some(c) => {
                if (s - c).abs() > 1e-9 * c.abs().max(1.0) {
                    issues.push(format!(
                        "row weight factorization broken: offset {s} vs {c}"
                    ));
                }
            }
        }
    }

    issues
}
