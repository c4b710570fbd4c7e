//! Measurement update of the PMBM posterior.
//!
//! Per global hypothesis, the association stage proposes partitions of the
//! row's gated measurements into cells assigned to tracks or new targets.
//! Each proposal spawns a child global hypothesis whose weight multiplies
//! the per-track missed/detected factors and the new-track factors. The
//! undetected Poisson intensity is thinned by the empty-set likelihood.
//! Measurements in nobody's track gate are clustered and spawn shared new
//! tracks appended to every child row.

use std::collections::HashMap;

use nalgebra::Vector2;

use crate::association::{
    cluster_unused, dedup_hypotheses, enumerate_all, gate, murty_hypotheses, sample_assignments,
    AssocProblem, AssocTarget, AssociationHypothesis, CellTarget, Evaluator, PoissonComponent,
};
use crate::ggiw::{ggiw_update, ggiw_update_empty, log_lik_empty, GgiwDensity, SensorModel};
use crate::numeric::{log_sum_exp, split_seed};
use crate::trajectory::{TrajectoryBernoulli, TrajectoryComponent, TrajectoryDensity};
use crate::Result;

use super::{
    missed_detection_factors, new_track_weight_existence, reduce, PmbmPosterior, ReductionConfig,
    SingleTrajectoryHypothesis, TableRow, Track,
};

/// How association hypotheses are generated per global hypothesis.
#[derive(Debug, Clone, Copy)]
pub enum AssociationEngine {
    /// Every partition and assignment; guarded to small scans. Oracle runs
    /// and exact tests only.
    Exhaustive,
    /// Gibbs sampling plus ranked assignments over single-linkage cells.
    Reduced {
        /// Full Gibbs sweeps per row (0 disables the sampler).
        sweeps: usize,
        /// Ranked assignments kept per row (0 disables the Murty stage).
        kbest: usize,
    },
}

/// Update-stage configuration.
#[derive(Debug, Clone)]
pub struct UpdateConfig {
    /// Gate probability; 1.0 disables gating.
    pub gate_prob: f64,
    /// Single-linkage distance for clustering and the Murty cell stage.
    pub link_distance: f64,
    pub engine: AssociationEngine,
    /// Master seed; rows draw deterministic sub-seeds from it.
    pub seed: u64,
    pub reduction: ReductionConfig,
}

impl UpdateConfig {
    /// Exact update: no gating, exhaustive association, no pruning.
    pub fn exact() -> Self {
        UpdateConfig {
            gate_prob: 1.0,
            link_distance: 10.0,
            engine: AssociationEngine::Exhaustive,
            seed: 0,
            reduction: ReductionConfig::none(),
        }
    }
}

/// Per-hypothesis quantities reused across rows.
struct HypPrep {
    existence: f64,
    /// <f; l_empty> with dead components contributing one.
    lik_empty: f64,
    log_missed: f64,
    /// (weight, final state) of alive components.
    alive: Vec<(f64, GgiwDensity)>,
    /// Per scan measurement: gated by any alive component.
    gate: Vec<bool>,
}

/// Alive Poisson component view.
struct PoissonPrep {
    component_index: usize,
    weight: f64,
    final_state: GgiwDensity,
    gate: Vec<bool>,
}

/// Key of a new track: the sorted scan measurement indices it commences on.
type CellKey = Vec<u32>;

enum ColumnRef {
    Existing(usize),
    New(usize),
}

struct ChildRow {
    log_weight: f64,
    pruned_lineage: bool,
    refs: Vec<(ColumnRef, usize)>,
}

/// PMBM update with the measurement set of the current scan, including the
/// reduction stage of the given configuration.
pub fn update(
    posterior: &PmbmPosterior,
    scan: &[Vector2<f64>],
    sensor: &SensorModel,
    cfg: &UpdateConfig,
) -> Result<PmbmPosterior> {
    let now = posterior.time;
    let m = scan.len();
    let log_clutter = sensor.clutter_intensity().ln();

    // Flatten predicted measurement densities of every alive component for
    // one gating pass: track hypothesis components first, then Poisson.
    let mut flat: Vec<(Vector2<f64>, nalgebra::Matrix2<f64>)> = Vec::new();
    let mut hyp_comp_cols: Vec<Vec<Vec<usize>>> = Vec::new(); // [track][hyp] -> columns
    for track in &posterior.tracks {
        let mut per_hyp = Vec::new();
        for hyp in &track.hypotheses {
            let mut cols = Vec::new();
            for comp in &hyp.bernoulli.density.components {
                if comp.end == now && comp.weight > 0.0 {
                    cols.push(flat.len());
                    flat.push(sensor.predicted_measurement(comp.final_state()));
                }
            }
            per_hyp.push(cols);
        }
        hyp_comp_cols.push(per_hyp);
    }
    let mut poisson_cols: Vec<usize> = Vec::new();
    let mut alive_poisson_indices: Vec<usize> = Vec::new();
    for (i, comp) in posterior.undetected.components.iter().enumerate() {
        if comp.end == now && comp.weight > 0.0 {
            poisson_cols.push(flat.len());
            alive_poisson_indices.push(i);
            flat.push(sensor.predicted_measurement(comp.final_state()));
        }
    }
    let gates = gate(scan, &flat, cfg.gate_prob)?;

    // Per-hypothesis preparation.
    let mut preps: Vec<Vec<HypPrep>> = Vec::new();
    for (t, track) in posterior.tracks.iter().enumerate() {
        let mut per_hyp = Vec::new();
        for (h, hyp) in track.hypotheses.iter().enumerate() {
            let mut lik_empty = 0.0;
            let mut alive = Vec::new();
            for comp in &hyp.bernoulli.density.components {
                if comp.end == now {
                    lik_empty += comp.weight * log_lik_empty(comp.final_state(), sensor).exp();
                    if comp.weight > 0.0 {
                        alive.push((comp.weight, comp.final_state().clone()));
                    }
                } else {
                    lik_empty += comp.weight;
                }
            }
            let existence = hyp.bernoulli.existence;
            let (factor, _) = missed_detection_factors(existence, lik_empty);
            let gate_flags: Vec<bool> = (0..m)
                .map(|j| hyp_comp_cols[t][h].iter().any(|&c| gates.gated(j, c)))
                .collect();
            per_hyp.push(HypPrep {
                existence,
                lik_empty,
                log_missed: factor.ln(),
                alive,
                gate: gate_flags,
            });
        }
        preps.push(per_hyp);
    }

    let poisson_preps: Vec<PoissonPrep> = alive_poisson_indices
        .iter()
        .zip(poisson_cols.iter())
        .map(|(&i, &col)| {
            let comp = &posterior.undetected.components[i];
            PoissonPrep {
                component_index: i,
                weight: comp.weight,
                final_state: comp.final_state().clone(),
                gate: (0..m).map(|j| gates.gated(j, col)).collect(),
            }
        })
        .collect();

    // Materialized children, deduplicated across rows.
    let n_tracks = posterior.tracks.len();
    let mut new_hyps: Vec<Vec<SingleTrajectoryHypothesis>> = vec![Vec::new(); n_tracks];
    let mut missed_children: HashMap<(usize, usize), usize> = HashMap::new();
    let mut detected_children: HashMap<(usize, usize, CellKey), usize> = HashMap::new();
    let mut new_track_specs: Vec<SingleTrajectoryHypothesis> = Vec::new();
    let mut new_track_index: HashMap<CellKey, usize> = HashMap::new();
    let mut child_rows: Vec<ChildRow> = Vec::new();

    for row in &posterior.table.rows {
        // Targets of this row and the measurements they gate.
        let row_targets: Vec<(usize, usize)> = row
            .entries
            .iter()
            .enumerate()
            .filter_map(|(t, entry)| entry.map(|h| (t, h)))
            .collect();
        // The exhaustive engine enumerates partitions of the whole scan;
        // otherwise only track-gated measurements enter the sampled problem
        // and the rest go through the clustering stage below.
        let exhaustive = matches!(cfg.engine, AssociationEngine::Exhaustive);
        let mut in_row_gate = vec![exhaustive; m];
        for &(t, h) in &row_targets {
            for (flag, &gated) in in_row_gate.iter_mut().zip(&preps[t][h].gate) {
                *flag |= gated;
            }
        }
        let row_meas: Vec<usize> = (0..m).filter(|&j| in_row_gate[j]).collect();
        let rest_meas: Vec<usize> = (0..m).filter(|&j| !in_row_gate[j]).collect();

        // Association problem over the row's measurements.
        let problem = AssocProblem {
            measurements: row_meas.iter().map(|&j| scan[j]).collect(),
            targets: row_targets
                .iter()
                .map(|&(t, h)| {
                    let prep = &preps[t][h];
                    AssocTarget {
                        log_missed: prep.log_missed,
                        log_existence: prep.existence.ln(),
                        components: prep.alive.clone(),
                        gate: row_meas.iter().map(|&j| prep.gate[j]).collect(),
                    }
                })
                .collect(),
            poisson: poisson_preps
                .iter()
                .map(|p| PoissonComponent {
                    weight: p.weight,
                    density: p.final_state.clone(),
                    gate: row_meas.iter().map(|&j| p.gate[j]).collect(),
                })
                .collect(),
            log_clutter,
            sensor,
        };

        let row_seed = split_seed(cfg.seed, ((now as u64) << 32) ^ child_rows.len() as u64);
        let assoc_hyps: Vec<AssociationHypothesis> = match cfg.engine {
            AssociationEngine::Exhaustive => enumerate_all(&problem)?,
            AssociationEngine::Reduced { sweeps, kbest } => {
                let mut lists = Vec::new();
                if sweeps > 0 {
                    lists.push(sample_assignments(&problem, sweeps, row_seed));
                }
                if kbest > 0 {
                    lists.push(murty_hypotheses(&problem, cfg.link_distance, kbest)?);
                }
                if lists.is_empty() {
                    lists.push(murty_hypotheses(&problem, cfg.link_distance, 1)?);
                }
                dedup_hypotheses(lists)
            }
        };

        // Measurements gated by no track of this row: cluster them and pick,
        // per cluster, the better of the joint cell or its singleton split.
        let rest_points: Vec<Vector2<f64>> = rest_meas.iter().map(|&j| scan[j]).collect();
        let rest_problem = AssocProblem {
            measurements: rest_points.clone(),
            targets: Vec::new(),
            poisson: poisson_preps
                .iter()
                .map(|p| PoissonComponent {
                    weight: p.weight,
                    density: p.final_state.clone(),
                    gate: rest_meas.iter().map(|&j| p.gate[j]).collect(),
                })
                .collect(),
            log_clutter,
            sensor,
        };
        let mut rest_eval = Evaluator::new(&rest_problem);
        let mut rest_cells: Vec<CellKey> = Vec::new();
        if !rest_meas.is_empty() {
            for cluster in cluster_unused(&rest_points, cfg.link_distance) {
                if cluster.len() > 1 {
                    let joint = rest_eval.log_new_cell(&cluster);
                    let split: f64 = cluster.iter().map(|&j| rest_eval.log_new_cell(&[j])).sum();
                    if joint >= split {
                        rest_cells.push(cluster.iter().map(|&j| rest_meas[j] as u32).collect());
                        continue;
                    }
                }
                for &j in &cluster {
                    rest_cells.push(vec![rest_meas[j] as u32]);
                }
            }
        }

        for assoc in &assoc_hyps {
            let mut child = ChildRow {
                log_weight: row.log_weight,
                pruned_lineage: row.pruned_lineage,
                refs: Vec::new(),
            };
            let mut assigned: Vec<Option<&Vec<usize>>> = vec![None; row_targets.len()];
            let mut cell_keys: Vec<CellKey> = Vec::new();
            for cell in &assoc.cells {
                match cell.target {
                    CellTarget::Track(local) => assigned[local] = Some(&cell.members),
                    CellTarget::NewTrack => {
                        cell_keys.push(cell.members.iter().map(|&j| row_meas[j] as u32).collect());
                    }
                }
            }

            for (local, &(t, h)) in row_targets.iter().enumerate() {
                let parent = &posterior.tracks[t].hypotheses[h];
                let prep = &preps[t][h];
                let child_hyp = match assigned[local] {
                    None => *missed_children.entry((t, h)).or_insert_with(|| {
                        new_hyps[t].push(materialize_missed(parent, prep, now, sensor));
                        new_hyps[t].len() - 1
                    }),
                    Some(members) => {
                        let key: CellKey = members.iter().map(|&j| row_meas[j] as u32).collect();
                        match detected_children.get(&(t, h, key.clone())) {
                            Some(&idx) => idx,
                            None => {
                                let points: Vec<Vector2<f64>> =
                                    key.iter().map(|&j| scan[j as usize]).collect();
                                let hyp = materialize_detected(parent, &points, &key, now, sensor)?;
                                new_hyps[t].push(hyp);
                                let idx = new_hyps[t].len() - 1;
                                detected_children.insert((t, h, key), idx);
                                idx
                            }
                        }
                    }
                };
                child.log_weight += new_hyps[t][child_hyp].log_weight - parent.log_weight;
                child.refs.push((ColumnRef::Existing(t), child_hyp));
            }

            cell_keys.extend(rest_cells.iter().cloned());
            for key in cell_keys {
                let idx = match new_track_index.get(&key) {
                    Some(&idx) => idx,
                    None => {
                        let spec = materialize_new_track(
                            &key,
                            scan,
                            &poisson_preps,
                            posterior,
                            log_clutter,
                            now,
                            sensor,
                        )?;
                        new_track_specs.push(spec);
                        let idx = new_track_specs.len() - 1;
                        new_track_index.insert(key, idx);
                        idx
                    }
                };
                child.log_weight += new_track_specs[idx].log_weight;
                child.refs.push((ColumnRef::New(idx), 0));
            }
            child_rows.push(child);
        }
    }

    // Assemble the updated posterior.
    let mut out = posterior.clone();
    out.tracks = posterior
        .tracks
        .iter()
        .zip(new_hyps)
        .map(|(track, hypotheses)| Track {
            id: track.id,
            hypotheses,
        })
        .collect();
    for spec in new_track_specs {
        let id = out.allocate_track_id();
        out.tracks.push(Track {
            id,
            hypotheses: vec![spec],
        });
    }

    let total_tracks = out.tracks.len();
    let keep_all_rows = child_rows.iter().all(|r| !r.log_weight.is_finite());
    let mut rows = Vec::new();
    for child in child_rows {
        if !child.log_weight.is_finite() && !keep_all_rows {
            continue;
        }
        let mut entries = vec![None; total_tracks];
        for (column, hyp_idx) in child.refs {
            match column {
                ColumnRef::Existing(t) => entries[t] = Some(hyp_idx),
                ColumnRef::New(ordinal) => entries[n_tracks + ordinal] = Some(hyp_idx),
            }
        }
        rows.push(TableRow {
            log_weight: child.log_weight,
            entries,
            pruned_lineage: child.pruned_lineage,
        });
    }
    out.table.rows = rows;
    out.table.normalize();

    // Poisson thinning: alive components scale by their empty-set likelihood
    // and take the rate-matched posterior; dead components pass through.
    for comp in &mut out.undetected.components {
        if comp.end == now {
            let final_state = comp.final_state().clone();
            comp.weight *= log_lik_empty(&final_state, sensor).exp();
            let updated = ggiw_update_empty(&final_state, sensor);
            *comp.steps.last_mut().expect("component has steps") = updated;
        }
    }

    reduce(out, &cfg.reduction)
}

fn materialize_missed(
    parent: &SingleTrajectoryHypothesis,
    prep: &HypPrep,
    now: u32,
    sensor: &SensorModel,
) -> SingleTrajectoryHypothesis {
    let (factor, existence) = missed_detection_factors(prep.existence, prep.lik_empty);
    if prep.existence == 0.0 {
        // The Bernoulli is empty almost surely: weight multiplies by one and
        // the density stays as it was.
        return SingleTrajectoryHypothesis {
            log_weight: parent.log_weight,
            bernoulli: parent.bernoulli.clone(),
            assoc_history: parent.assoc_history.clone(),
        };
    }
    let mut components = Vec::new();
    for comp in &parent.bernoulli.density.components {
        let mut comp = comp.clone();
        if comp.end == now {
            let final_state = comp.final_state().clone();
            comp.weight *= log_lik_empty(&final_state, sensor).exp();
            *comp.steps.last_mut().unwrap() = ggiw_update_empty(&final_state, sensor);
        }
        components.push(comp);
    }
    let mut density = TrajectoryDensity { components };
    density.normalize();
    SingleTrajectoryHypothesis {
        log_weight: parent.log_weight + factor.ln(),
        bernoulli: TrajectoryBernoulli { existence, density },
        assoc_history: parent.assoc_history.clone(),
    }
}

fn materialize_detected(
    parent: &SingleTrajectoryHypothesis,
    points: &[Vector2<f64>],
    key: &[u32],
    now: u32,
    sensor: &SensorModel,
) -> Result<SingleTrajectoryHypothesis> {
    let mut terms = Vec::new();
    let mut updated = Vec::new();
    for comp in &parent.bernoulli.density.components {
        if comp.end != now || comp.weight <= 0.0 {
            continue;
        }
        let (posterior, log_lik) = ggiw_update(comp.final_state(), points, sensor)?;
        terms.push(comp.weight.ln() + log_lik);
        updated.push((comp, posterior));
    }
    let log_pred = log_sum_exp(&terms);
    let mut components = Vec::new();
    for ((comp, posterior), term) in updated.into_iter().zip(terms.iter()) {
        let mut steps = comp.steps.clone();
        *steps.last_mut().unwrap() = posterior;
        components.push(TrajectoryComponent {
            weight: (term - log_pred).exp(),
            birth: comp.birth,
            end: comp.end,
            steps,
        });
    }
    let mut history = parent.assoc_history.clone();
    history.extend(key.iter().map(|&j| (now, j)));
    history.sort_unstable();
    Ok(SingleTrajectoryHypothesis {
        log_weight: parent.log_weight + parent.bernoulli.existence.ln() + log_pred,
        bernoulli: TrajectoryBernoulli {
            existence: 1.0,
            density: TrajectoryDensity { components },
        },
        assoc_history: history,
    })
}

fn materialize_new_track(
    key: &[u32],
    scan: &[Vector2<f64>],
    poisson_preps: &[PoissonPrep],
    posterior: &PmbmPosterior,
    log_clutter: f64,
    now: u32,
    sensor: &SensorModel,
) -> Result<SingleTrajectoryHypothesis> {
    let points: Vec<Vector2<f64>> = key.iter().map(|&j| scan[j as usize]).collect();

    // Mirror the association evaluator's gating rule exactly: components
    // gating the whole cell, falling back to all components for larger
    // cells nobody gates.
    let gated: Vec<&PoissonPrep> = poisson_preps
        .iter()
        .filter(|p| p.weight > 0.0 && key.iter().all(|&j| p.gate[j as usize]))
        .collect();
    let contributing: Vec<&PoissonPrep> = if gated.is_empty() && key.len() > 1 {
        poisson_preps.iter().filter(|p| p.weight > 0.0).collect()
    } else {
        gated
    };

    let mut terms = Vec::new();
    let mut updated = Vec::new();
    for prep in &contributing {
        let (post, log_lik) = ggiw_update(&prep.final_state, &points, sensor)?;
        terms.push(prep.weight.ln() + log_lik);
        updated.push((prep.component_index, post));
    }
    let log_ppp = log_sum_exp(&terms);
    let (log_weight, existence) = new_track_weight_existence(log_ppp, log_clutter, key.len());

    let mut components = Vec::new();
    if log_ppp.is_finite() {
        for ((comp_idx, post), term) in updated.into_iter().zip(terms.iter()) {
            let source = &posterior.undetected.components[comp_idx];
            let mut steps = source.steps.clone();
            *steps.last_mut().unwrap() = post;
            components.push(TrajectoryComponent {
                weight: (term - log_ppp).exp(),
                birth: source.birth,
                end: source.end,
                steps,
            });
        }
    }
    let mut density = TrajectoryDensity {
        components: merge_equal_support(components),
    };
    density.normalize();

    Ok(SingleTrajectoryHypothesis {
        log_weight,
        bernoulli: TrajectoryBernoulli { existence, density },
        assoc_history: key.iter().map(|&j| (now, j)).collect(),
    })
}

/// Several birth components can share a (birth, end) pair; the mixture
/// representation demands distinct support, so equal-support components are
/// moment-matched into one.
fn merge_equal_support(components: Vec<TrajectoryComponent>) -> Vec<TrajectoryComponent> {
    let mut groups: Vec<((u32, u32), Vec<TrajectoryComponent>)> = Vec::new();
    for comp in components {
        match groups
            .iter_mut()
            .find(|(k, _)| *k == (comp.birth, comp.end))
        {
            Some((_, list)) => list.push(comp),
            None => groups.push(((comp.birth, comp.end), vec![comp])),
        }
    }
    groups
        .into_iter()
        .map(|(_, mut list)| {
            if list.len() == 1 {
                return list.pop().unwrap();
            }
            let total: f64 = list.iter().map(|c| c.weight).sum();
            let n_steps = list[0].steps.len();
            let mut steps = Vec::with_capacity(n_steps);
            for s in 0..n_steps {
                let parts: Vec<(f64, &GgiwDensity)> = list
                    .iter()
                    .map(|c| (c.weight / total, &c.steps[s]))
                    .collect();
                steps.push(moment_match_ggiw(&parts));
            }
            TrajectoryComponent {
                weight: total,
                birth: list[0].birth,
                end: list[0].end,
                steps,
            }
        })
        .collect()
}

/// Single-GGIW reduction of a GGIW mixture: Gaussian moment matching,
/// Gamma mean/variance matching and an inverse-Wishart with the mixture's
/// mean extent at the averaged degrees of freedom.
fn moment_match_ggiw(parts: &[(f64, &GgiwDensity)]) -> GgiwDensity {
    let mut kin_mean = nalgebra::Vector4::zeros();
    let mut rate_mean = 0.0;
    let mut rate_second = 0.0;
    let mut extent_mean = nalgebra::Matrix2::zeros();
    let mut dof = 0.0;
    for (w, g) in parts {
        kin_mean += g.kin_mean * *w;
        let mean = g.rate_shape / g.rate_rate;
        rate_mean += w * mean;
        rate_second += w * (g.rate_shape * (g.rate_shape + 1.0) / (g.rate_rate * g.rate_rate));
        extent_mean += g.extent_mean() * *w;
        dof += w * g.extent_dof;
    }
    let mut kin_cov = nalgebra::Matrix4::zeros();
    for (w, g) in parts {
        let d = g.kin_mean - kin_mean;
        kin_cov += (g.kin_cov + d * d.transpose()) * *w;
    }
    let rate_var = (rate_second - rate_mean * rate_mean).max(1e-12);
    let d2 = 2.0 * crate::ggiw::EXTENT_DIM as f64 + 2.0;
    GgiwDensity {
        rate_shape: rate_mean * rate_mean / rate_var,
        rate_rate: rate_mean / rate_var,
        kin_mean,
        kin_cov,
        extent_dof: dof,
        extent_scale: extent_mean * (dof - d2),
    }
}
