//! Gibbs-style sampling of association hypotheses.
//!
//! The chain state labels every measurement with either a track or a
//! new-track cell id. Single-site moves resample one measurement's label
//! from its full conditional, which only needs the factor deltas of the two
//! cells the move touches. Every visited state is recorded with its exact
//! (recomputed, never frequency-estimated) log weight, and distinct states
//! are returned.

use std::collections::{BTreeMap, HashMap};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{AssocProblem, AssociationHypothesis, CellTarget, Evaluator, MeasurementCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Track(usize),
    /// New-track cell; ids are arbitrary but never reused, so distinct cells
    /// can never collide.
    Cell(u64),
}

struct ChainState {
    labels: Vec<Label>,
    /// Per target: sorted member measurements of its cell (possibly empty).
    track_cells: Vec<Vec<usize>>,
    /// New-track cells by id; ordered map keeps candidate order stable.
    new_cells: BTreeMap<u64, Vec<usize>>,
    next_cell_id: u64,
}

impl ChainState {
    fn all_singletons(m: usize, n_targets: usize) -> Self {
        ChainState {
            labels: (0..m as u64).map(Label::Cell).collect(),
            track_cells: vec![Vec::new(); n_targets],
            new_cells: (0..m).map(|j| (j as u64, vec![j])).collect(),
            next_cell_id: m as u64,
        }
    }

    fn remove(&mut self, j: usize) {
        match self.labels[j] {
            Label::Track(t) => self.track_cells[t].retain(|&x| x != j),
            Label::Cell(id) => {
                let cell = self.new_cells.get_mut(&id).expect("cell exists");
                cell.retain(|&x| x != j);
                if cell.is_empty() {
                    self.new_cells.remove(&id);
                }
            }
        }
    }

    fn insert(&mut self, j: usize, label: Label) {
        match label {
            Label::Track(t) => {
                let cell = &mut self.track_cells[t];
                let pos = cell.partition_point(|&x| x < j);
                cell.insert(pos, j);
            }
            Label::Cell(id) => {
                let cell = self.new_cells.entry(id).or_default();
                let pos = cell.partition_point(|&x| x < j);
                cell.insert(pos, j);
            }
        }
        self.labels[j] = label;
    }

    fn cells(&self) -> Vec<MeasurementCell> {
        let mut cells: Vec<MeasurementCell> = self
            .track_cells
            .iter()
            .enumerate()
            .filter(|(_, members)| !members.is_empty())
            .map(|(t, members)| MeasurementCell {
                members: members.clone(),
                target: CellTarget::Track(t),
            })
            .chain(self.new_cells.values().map(|members| MeasurementCell {
                members: members.clone(),
                target: CellTarget::NewTrack,
            }))
            .collect();
        cells.sort_by_key(|c| c.members[0]);
        cells
    }
}

fn with_member(cell: &[usize], j: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(cell.len() + 1);
    let pos = cell.partition_point(|&x| x < j);
    out.extend_from_slice(&cell[..pos]);
    out.push(j);
    out.extend_from_slice(&cell[pos..]);
    out
}

/// Markov-chain exploration of the association space, initialized at the
/// all-new-track (every measurement its own singleton cell) state.
///
/// `sweeps` counts full passes over the measurements; the chain is
/// deterministic given `seed`. Distinct visited hypotheses are returned in
/// canonical order.
pub fn sample_assignments(
    problem: &AssocProblem,
    sweeps: usize,
    seed: u64,
) -> Vec<AssociationHypothesis> {
    assert!(sweeps >= 1, "sampler needs at least one sweep");
    let m = problem.measurements.len();
    let n_targets = problem.targets.len();
    let mut evaluator = Evaluator::new(problem);
    let mut visited: HashMap<Vec<i64>, AssociationHypothesis> = HashMap::new();

    let mut record = |state: &ChainState, evaluator: &mut Evaluator| {
        let cells = state.cells();
        let probe = AssociationHypothesis {
            cells,
            log_weight: 0.0,
        };
        let key = probe.canonical_key();
        if let std::collections::hash_map::Entry::Vacant(e) = visited.entry(key) {
            let log_weight = evaluator.log_weight(&probe.cells);
            e.insert(AssociationHypothesis {
                log_weight,
                ..probe
            });
        }
    };

    let mut state = ChainState::all_singletons(m, n_targets);
    record(&state, &mut evaluator);

    if m > 0 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut candidates: Vec<Label> = Vec::new();
        let mut deltas: Vec<f64> = Vec::new();
        for _ in 0..sweeps {
            for j in 0..m {
                state.remove(j);

                // Candidate labels in a fixed order: gated tracks, existing
                // cells, fresh singleton. The conditional only needs the
                // factor delta each move induces on the touched cell.
                candidates.clear();
                deltas.clear();
                for (t, target) in problem.targets.iter().enumerate() {
                    if !target.gate[j] {
                        continue;
                    }
                    let current = &state.track_cells[t];
                    let without = if current.is_empty() {
                        target.log_missed
                    } else {
                        evaluator.log_track_cell(t, current)
                    };
                    let with = evaluator.log_track_cell(t, &with_member(current, j));
                    candidates.push(Label::Track(t));
                    deltas.push(with - without);
                }
                let ids: Vec<u64> = state.new_cells.keys().copied().collect();
                for id in ids {
                    let current = &state.new_cells[&id];
                    let without = evaluator.log_new_cell(current);
                    let with = evaluator.log_new_cell(&with_member(current, j));
                    candidates.push(Label::Cell(id));
                    deltas.push(with - without);
                }
                let fresh = Label::Cell(state.next_cell_id);
                state.next_cell_id += 1;
                candidates.push(fresh);
                deltas.push(evaluator.log_new_cell(&[j]));

                // Sample the conditional; if everything is -inf fall back to
                // the fresh singleton, which always has finite weight.
                let max = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let chosen = if max.is_finite() {
                    let weights: Vec<f64> = deltas.iter().map(|w| (w - max).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    let mut idx = weights.len() - 1;
                    for (i, w) in weights.iter().enumerate() {
                        if u < *w {
                            idx = i;
                            break;
                        }
                        u -= w;
                    }
                    idx
                } else {
                    candidates.len() - 1
                };
                state.insert(j, candidates[chosen]);
                record(&state, &mut evaluator);
            }
        }
    }

    let mut out: Vec<AssociationHypothesis> = visited.into_values().collect();
    out.retain(|h| h.log_weight.is_finite());
    out.sort_by_key(|a| a.canonical_key());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{enumerate_all, recompute_log_weight, AssocTarget, PoissonComponent};
    use crate::ggiw::{GgiwDensity, Region, SensorModel};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};

    fn sensor() -> SensorModel {
        SensorModel::position_sensor(
            0.5,
            0.9,
            10.0,
            Region {
                x_min: -100.0,
                x_max: 100.0,
                y_min: -100.0,
                y_max: 100.0,
            },
            0.25,
        )
    }

    fn ggiw_at(x: f64, y: f64) -> GgiwDensity {
        GgiwDensity {
            rate_shape: 8.0,
            rate_rate: 1.0,
            kin_mean: Vector4::new(x, y, 0.0, 0.0),
            kin_cov: Matrix4::identity() * 2.0,
            extent_dof: 20.0,
            extent_scale: Matrix2::identity() * 28.0,
        }
    }

    fn problem<'a>(
        sm: &'a SensorModel,
        measurements: Vec<Vector2<f64>>,
        tracks: &[(f64, f64)],
    ) -> AssocProblem<'a> {
        let m = measurements.len();
        AssocProblem {
            measurements,
            targets: tracks
                .iter()
                .map(|&(x, y)| AssocTarget {
                    log_missed: (0.2f64 + 0.8 * 0.2).ln(),
                    log_existence: 0.8f64.ln(),
                    components: vec![(1.0, ggiw_at(x, y))],
                    gate: vec![true; m],
                })
                .collect(),
            poisson: vec![PoissonComponent {
                weight: 0.1,
                density: ggiw_at(0.0, 0.0),
                gate: vec![true; m],
            }],
            log_clutter: (10.0f64 / 40_000.0).ln(),
            sensor: sm,
        }
    }

    #[test]
    fn no_tracks_single_measurement_visits_the_folded_hypothesis() {
        let sm = sensor();
        let p = problem(&sm, vec![Vector2::new(0.5, 0.0)], &[]);
        let sampled = sample_assignments(&p, 50, 1);
        let exhaustive = enumerate_all(&p).unwrap();
        assert_eq!(exhaustive.len(), 1);
        assert_eq!(sampled.len(), 1);
        assert_eq!(sampled[0].canonical_key(), exhaustive[0].canonical_key());
        assert_relative_eq!(
            sampled[0].log_weight,
            exhaustive[0].log_weight,
            epsilon = 1e-12
        );
    }

    #[test]
    fn stored_weights_are_exact() {
        let sm = sensor();
        let p = problem(
            &sm,
            vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.0, 1.0),
                Vector2::new(-2.0, 0.5),
            ],
            &[(0.0, 0.0), (1.0, 1.0)],
        );
        for hyp in sample_assignments(&p, 30, 7) {
            assert_relative_eq!(
                recompute_log_weight(&p, &hyp),
                hyp.log_weight,
                max_relative = 1e-12
            );
            assert!(hyp.is_valid_for(3, 2));
        }
    }

    /// On a small instance the sampler's distinct hypotheses must be a subset
    /// of the exhaustive enumeration, reaching equality with enough sweeps.
    #[test]
    fn matches_enumeration_on_small_instance() {
        let sm = sensor();
        let p = problem(
            &sm,
            vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.5)],
            &[(0.3, 0.2)],
        );
        let exhaustive = enumerate_all(&p).unwrap();
        let keys: Vec<_> = exhaustive.iter().map(|h| h.canonical_key()).collect();

        let few = sample_assignments(&p, 5, 42);
        for h in &few {
            assert!(keys.contains(&h.canonical_key()));
        }

        let many = sample_assignments(&p, 10_000, 42);
        assert_eq!(many.len(), exhaustive.len());
        for (s, e) in many.iter().zip(exhaustive.iter()) {
            assert_eq!(s.canonical_key(), e.canonical_key());
            assert_relative_eq!(s.log_weight, e.log_weight, max_relative = 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let sm = sensor();
        let p = problem(
            &sm,
            vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(2.0, 0.0),
                Vector2::new(0.0, 2.0),
            ],
            &[(0.0, 0.0)],
        );
        let a = sample_assignments(&p, 20, 5);
        let b = sample_assignments(&p, 20, 5);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.canonical_key(), y.canonical_key());
            assert_eq!(x.log_weight, y.log_weight);
        }
    }

    #[test]
    fn empty_scan_returns_all_missed() {
        let sm = sensor();
        let p = problem(&sm, vec![], &[(0.0, 0.0)]);
        let sampled = sample_assignments(&p, 5, 3);
        assert_eq!(sampled.len(), 1);
        assert!(sampled[0].cells.is_empty());
        assert_relative_eq!(
            sampled[0].log_weight,
            p.targets[0].log_missed,
            max_relative = 1e-12
        );
    }
}
