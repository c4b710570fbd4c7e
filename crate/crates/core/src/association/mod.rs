//! Data-association reduction for one scan: gating, clustering of
//! unassociated measurements, ranked assignments, stochastic sampling of
//! associations and an exhaustive enumerator used as a test oracle.
//!
//! An association hypothesis partitions the gated measurements of the scan
//! into disjoint cells; each cell is assigned either to an existing track (at
//! most one cell per track) or to a new track. The possibility that a
//! singleton cell is clutter is folded into the new-track existence
//! probability, so it does not branch hypotheses.

mod assignment;
mod sampler;

pub use assignment::{kbest_assignments, solve_assignment, Assignment};
pub use sampler::sample_assignments;

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::ggiw::{ggiw_update, GgiwDensity, SensorModel};
use crate::numeric::{chi_square_quantile, log_sum_exp, mahalanobis_sq2};
use crate::{Error, Result};

/// Guard for the exhaustive enumerator.
pub const MAX_EXHAUSTIVE_MEASUREMENTS: usize = 8;

/// Boolean gating matrix: rows are measurements, columns are predicted
/// measurement densities (track hypothesis components and Poisson intensity
/// components alike).
#[derive(Debug, Clone)]
pub struct GateMatrix {
    n_measurements: usize,
    n_components: usize,
    bits: Vec<bool>,
}

impl GateMatrix {
    pub fn gated(&self, measurement: usize, component: usize) -> bool {
        self.bits[measurement * self.n_components + component]
    }

    pub fn n_measurements(&self) -> usize {
        self.n_measurements
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }
}

/// Chi-square gating of a scan against predicted measurement densities.
///
/// A pair passes when its squared Mahalanobis distance does not exceed the
/// chi-square quantile at `threshold_prob` (measurement-dimension dof).
/// `threshold_prob = 1.0` gates everything.
pub fn gate(
    scan: &[Vector2<f64>],
    components: &[(Vector2<f64>, Matrix2<f64>)],
    threshold_prob: f64,
) -> Result<GateMatrix> {
    let threshold = chi_square_quantile(threshold_prob, 2.0);
    let mut bits = vec![false; scan.len() * components.len()];
    for (j, z) in scan.iter().enumerate() {
        for (c, (mean, cov)) in components.iter().enumerate() {
            let d2 = mahalanobis_sq2(z, mean, cov)?;
            bits[j * components.len() + c] = d2 <= threshold;
        }
    }
    Ok(GateMatrix {
        n_measurements: scan.len(),
        n_components: components.len(),
        bits,
    })
}

/// Single-linkage clustering: connected components of the graph linking
/// points at Euclidean distance <= `link_distance`. Clusters are sorted by
/// their smallest member index and every point lands in exactly one cluster.
pub fn cluster_unused(points: &[Vector2<f64>], link_distance: f64) -> Vec<Vec<usize>> {
    assert!(link_distance > 0.0, "link distance must be positive");
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (points[i] - points[j]).norm() <= link_distance {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters.sort_by_key(|c| c[0]);
    clusters
}

/// What a measurement cell is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellTarget {
    /// Index into [`AssocProblem::targets`].
    Track(usize),
    /// A track commencing on this cell; for singletons the clutter
    /// possibility is folded into the new track's existence probability.
    NewTrack,
}

/// One cell of an association hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementCell {
    /// Sorted indices into the problem's measurement list.
    pub members: Vec<usize>,
    pub target: CellTarget,
}

/// A partition of the problem's measurements into assigned cells, with the
/// exact log association weight (missed-detection factors included).
#[derive(Debug, Clone)]
pub struct AssociationHypothesis {
    /// Cells sorted by smallest member index.
    pub cells: Vec<MeasurementCell>,
    pub log_weight: f64,
}

impl AssociationHypothesis {
    /// Canonical identity of the partition/assignment, independent of
    /// construction order.
    pub fn canonical_key(&self) -> Vec<i64> {
        let mut key = Vec::new();
        for cell in &self.cells {
            key.push(match cell.target {
                CellTarget::Track(t) => t as i64,
                CellTarget::NewTrack => -1,
            });
            key.extend(cell.members.iter().map(|&m| m as i64));
            key.push(-2);
        }
        key
    }

    /// Cell assigned to track `t`, if any.
    pub fn cell_for_track(&self, t: usize) -> Option<&MeasurementCell> {
        self.cells.iter().find(|c| c.target == CellTarget::Track(t))
    }

    /// The partition must cover every measurement exactly once and assign at
    /// most one cell per track.
    pub fn is_valid_for(&self, n_measurements: usize, n_targets: usize) -> bool {
        let mut seen = vec![false; n_measurements];
        let mut track_used = vec![false; n_targets];
        for cell in &self.cells {
            if cell.members.is_empty() {
                return false;
            }
            for &m in &cell.members {
                if m >= n_measurements || seen[m] {
                    return false;
                }
                seen[m] = true;
            }
            if let CellTarget::Track(t) = cell.target {
                if t >= n_targets || track_used[t] {
                    return false;
                }
                track_used[t] = true;
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// An existing track hypothesis as seen by the association stage.
#[derive(Debug, Clone)]
pub struct AssocTarget {
    /// log(1 - r + r <f; l_empty>): the missed-detection factor.
    pub log_missed: f64,
    /// log r.
    pub log_existence: f64,
    /// Alive mixture components (weight, final-state density); dead
    /// components contribute nothing to detection likelihoods.
    pub components: Vec<(f64, GgiwDensity)>,
    /// Per-measurement gate flags, length = number of problem measurements.
    pub gate: Vec<bool>,
}

/// One alive component of the predicted Poisson intensity.
#[derive(Debug, Clone)]
pub struct PoissonComponent {
    pub weight: f64,
    pub density: GgiwDensity,
    pub gate: Vec<bool>,
}

/// The single-scan association problem for one global hypothesis: the gated
/// measurements, the track hypotheses that may claim them and the alive
/// Poisson intensity that seeds new tracks.
pub struct AssocProblem<'a> {
    pub measurements: Vec<Vector2<f64>>,
    pub targets: Vec<AssocTarget>,
    pub poisson: Vec<PoissonComponent>,
    /// log kappa: clutter intensity at any point of the region.
    pub log_clutter: f64,
    pub sensor: &'a SensorModel,
}

/// Memoizing evaluator of association factors.
pub struct Evaluator<'p, 'a> {
    problem: &'p AssocProblem<'a>,
    track_cell: HashMap<(usize, Vec<usize>), f64>,
    new_cell: HashMap<Vec<usize>, f64>,
}

impl<'p, 'a> Evaluator<'p, 'a> {
    pub fn new(problem: &'p AssocProblem<'a>) -> Self {
        Evaluator {
            problem,
            track_cell: HashMap::new(),
            new_cell: HashMap::new(),
        }
    }

    pub fn problem(&self) -> &'p AssocProblem<'a> {
        self.problem
    }

    fn cell_points(&self, cell: &[usize]) -> Vec<Vector2<f64>> {
        cell.iter().map(|&j| self.problem.measurements[j]).collect()
    }

    /// log(r * <f; l_cell>) for assigning `cell` to target `t`; `-inf` when
    /// any member is outside the target's gate.
    pub fn log_track_cell(&mut self, t: usize, cell: &[usize]) -> f64 {
        if let Some(&v) = self.track_cell.get(&(t, cell.to_vec())) {
            return v;
        }
        let target = &self.problem.targets[t];
        let value = if cell.iter().any(|&j| !target.gate[j]) {
            f64::NEG_INFINITY
        } else {
            let points = self.cell_points(cell);
            let terms: Vec<f64> = target
                .components
                .iter()
                .filter(|(w, _)| *w > 0.0)
                .map(
                    |(w, density)| match ggiw_update(density, &points, self.problem.sensor) {
                        Ok((_, log_lik)) => w.ln() + log_lik,
                        Err(_) => f64::NEG_INFINITY,
                    },
                )
                .collect();
            target.log_existence + log_sum_exp(&terms)
        };
        self.track_cell.insert((t, cell.to_vec()), value);
        value
    }

    /// log(kappa + <D_u; l_cell>) for singletons, log <D_u; l_cell> for
    /// larger cells.
    pub fn log_new_cell(&mut self, cell: &[usize]) -> f64 {
        if let Some(&v) = self.new_cell.get(cell) {
            return v;
        }
        let points = self.cell_points(cell);
        let mut terms: Vec<f64> = self
            .problem
            .poisson
            .iter()
            .filter(|c| c.weight > 0.0 && cell.iter().all(|&j| c.gate[j]))
            .map(
                |c| match ggiw_update(&c.density, &points, self.problem.sensor) {
                    Ok((_, log_lik)) => c.weight.ln() + log_lik,
                    Err(_) => f64::NEG_INFINITY,
                },
            )
            .collect();
        if terms.is_empty() && cell.len() > 1 {
            // No component gates the whole cell; fall back to the full
            // intensity so multi-measurement clutter groups keep a finite
            // (tiny) birth weight instead of annihilating the hypothesis.
            terms = self
                .problem
                .poisson
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(
                    |c| match ggiw_update(&c.density, &points, self.problem.sensor) {
                        Ok((_, log_lik)) => c.weight.ln() + log_lik,
                        Err(_) => f64::NEG_INFINITY,
                    },
                )
                .collect();
        }
        let ppp = log_sum_exp(&terms);
        let value = if cell.len() == 1 {
            log_sum_exp(&[self.problem.log_clutter, ppp])
        } else {
            ppp
        };
        self.new_cell.insert(cell.to_vec(), value);
        value
    }

    /// Exact log weight of a full association: assigned-cell factors, missed
    /// factors for unassigned targets and new-track factors.
    pub fn log_weight(&mut self, cells: &[MeasurementCell]) -> f64 {
        let mut assigned = vec![false; self.problem.targets.len()];
        let mut total = 0.0;
        for cell in cells {
            total += match cell.target {
                CellTarget::Track(t) => {
                    assigned[t] = true;
                    self.log_track_cell(t, &cell.members)
                }
                CellTarget::NewTrack => self.log_new_cell(&cell.members),
            };
        }
        for (t, was_assigned) in assigned.iter().enumerate() {
            if !was_assigned {
                total += self.problem.targets[t].log_missed;
            }
        }
        total
    }
}

/// Recomputes a hypothesis weight from scratch, without any shared cache.
/// Used by tests to confirm sampler outputs carry exact weights.
pub fn recompute_log_weight(problem: &AssocProblem, hypothesis: &AssociationHypothesis) -> f64 {
    Evaluator::new(problem).log_weight(&hypothesis.cells)
}

fn sort_cells(mut cells: Vec<MeasurementCell>) -> Vec<MeasurementCell> {
    for c in &mut cells {
        c.members.sort_unstable();
    }
    cells.sort_by_key(|c| c.members[0]);
    cells
}

/// Every partition of the measurement set combined with every admissible
/// cell-to-target mapping, each with its exact log weight.
///
/// Guarded to at most [`MAX_EXHAUSTIVE_MEASUREMENTS`] measurements; intended
/// as an oracle and for small exact runs.
pub fn enumerate_all(problem: &AssocProblem) -> Result<Vec<AssociationHypothesis>> {
    let m = problem.measurements.len();
    if m > MAX_EXHAUSTIVE_MEASUREMENTS {
        return Err(Error::EnumerationGuard {
            got: m,
            max: MAX_EXHAUSTIVE_MEASUREMENTS,
        });
    }

    // Enumerate set partitions by assigning each measurement to an existing
    // block or a fresh one.
    let mut partitions: Vec<Vec<Vec<usize>>> = Vec::new();
    fn build_partitions(
        next: usize,
        m: usize,
        current: &mut Vec<Vec<usize>>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if next == m {
            out.push(current.clone());
            return;
        }
        for i in 0..current.len() {
            current[i].push(next);
            build_partitions(next + 1, m, current, out);
            current[i].pop();
        }
        current.push(vec![next]);
        build_partitions(next + 1, m, current, out);
        current.pop();
    }
    build_partitions(0, m, &mut Vec::new(), &mut partitions);

    let mut evaluator = Evaluator::new(problem);
    let mut out = Vec::new();
    for partition in &partitions {
        // Injectively map cells to tracks-or-new.
        let n_cells = partition.len();
        let mut assignment: Vec<Option<usize>> = vec![None; n_cells];
        let mut used = vec![false; problem.targets.len()];
        fn assign_cells(
            cell: usize,
            partition: &[Vec<usize>],
            assignment: &mut Vec<Option<usize>>,
            used: &mut Vec<bool>,
            evaluator: &mut Evaluator,
            out: &mut Vec<AssociationHypothesis>,
        ) {
            if cell == partition.len() {
                let cells: Vec<MeasurementCell> = partition
                    .iter()
                    .zip(assignment.iter())
                    .map(|(members, target)| MeasurementCell {
                        members: members.clone(),
                        target: match target {
                            Some(t) => CellTarget::Track(*t),
                            None => CellTarget::NewTrack,
                        },
                    })
                    .collect();
                let cells = sort_cells(cells);
                let log_weight = evaluator.log_weight(&cells);
                out.push(AssociationHypothesis { cells, log_weight });
                return;
            }
            // New track is always admissible.
            assignment[cell] = None;
            assign_cells(cell + 1, partition, assignment, used, evaluator, out);
            // A track may take the cell if it gates every member.
            for t in 0..used.len() {
                if used[t] {
                    continue;
                }
                let gate = &evaluator.problem().targets[t].gate;
                if partition[cell].iter().all(|&j| gate[j]) {
                    used[t] = true;
                    assignment[cell] = Some(t);
                    assign_cells(cell + 1, partition, assignment, used, evaluator, out);
                    assignment[cell] = None;
                    used[t] = false;
                }
            }
        }
        assign_cells(
            0,
            partition,
            &mut assignment,
            &mut used,
            &mut evaluator,
            &mut out,
        );
    }
    out.sort_by_key(|a| a.canonical_key());
    Ok(out)
}

/// Two-stage reduced association: single-linkage cells over the problem's
/// measurements, then ranked cell-to-track assignment via Murty's algorithm.
/// Hypothesis weights are recomputed exactly from the factors.
pub fn murty_hypotheses(
    problem: &AssocProblem,
    link_distance: f64,
    k: usize,
) -> Result<Vec<AssociationHypothesis>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut evaluator = Evaluator::new(problem);
    if problem.measurements.is_empty() {
        let log_weight = evaluator.log_weight(&[]);
        return Ok(vec![AssociationHypothesis {
            cells: Vec::new(),
            log_weight,
        }]);
    }
    let cells = cluster_unused(&problem.measurements, link_distance);
    let n_cells = cells.len();
    let n_tracks = problem.targets.len();

    // Columns: tracks, then one new-track column per cell. Costs are negated
    // log factors normalized by the missed-detection baseline.
    let mut cost = DMatrix::from_element(n_cells, n_tracks + n_cells, f64::INFINITY);
    for (ci, cell) in cells.iter().enumerate() {
        for t in 0..n_tracks {
            let lw = evaluator.log_track_cell(t, cell);
            if lw.is_finite() {
                cost[(ci, t)] = -(lw - problem.targets[t].log_missed);
            }
        }
        let lw = evaluator.log_new_cell(cell);
        if lw.is_finite() {
            cost[(ci, n_tracks + ci)] = -lw;
        }
    }

    let assignments = match kbest_assignments(&cost, k) {
        Ok(a) => a,
        Err(Error::InfeasibleAssignment) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::new();
    for a in assignments {
        let hyp_cells: Vec<MeasurementCell> = cells
            .iter()
            .zip(a.row_to_col.iter())
            .map(|(members, &col)| MeasurementCell {
                members: members.clone(),
                target: if col < n_tracks {
                    CellTarget::Track(col)
                } else {
                    CellTarget::NewTrack
                },
            })
            .collect();
        let hyp_cells = sort_cells(hyp_cells);
        let log_weight = evaluator.log_weight(&hyp_cells);
        out.push(AssociationHypothesis {
            cells: hyp_cells,
            log_weight,
        });
    }
    Ok(out)
}

/// Merges hypothesis lists, dropping duplicates by canonical identity.
pub fn dedup_hypotheses(lists: Vec<Vec<AssociationHypothesis>>) -> Vec<AssociationHypothesis> {
    let mut seen = HashMap::new();
    let mut out: Vec<AssociationHypothesis> = Vec::new();
    for list in lists {
        for hyp in list {
            let key = hyp.canonical_key();
            if seen.insert(key, true).is_none() {
                out.push(hyp);
            }
        }
    }
    out.sort_by_key(|a| a.canonical_key());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ggiw::Region;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix4, Vector4};

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
        sensor: &'a SensorModel,
        measurements: Vec<Vector2<f64>>,
        track_positions: &[(f64, f64)],
    ) -> AssocProblem<'a> {
        let m = measurements.len();
        let targets = track_positions
            .iter()
            .map(|&(x, y)| {
                let density = ggiw_at(x, y);
                AssocTarget {
                    log_missed: (1.0f64 - 0.8 + 0.8 * 0.2).ln(),
                    log_existence: 0.8f64.ln(),
                    components: vec![(1.0, density)],
                    gate: vec![true; m],
                }
            })
            .collect();
        let poisson = vec![PoissonComponent {
            weight: 0.1,
            density: ggiw_at(0.0, 0.0),
            gate: vec![true; m],
        }];
        AssocProblem {
            measurements,
            targets,
            poisson,
            log_clutter: (10.0f64 / 40_000.0).ln(),
            sensor,
        }
    }

    #[test]
    fn gate_examples() {
        let components = vec![(Vector2::new(0.0, 0.0), Matrix2::identity())];
        // Distance zero gates.
        let g = gate(&[Vector2::new(0.0, 0.0)], &components, 0.99).unwrap();
        assert!(g.gated(0, 0));
        // A million sigma does not.
        let g = gate(&[Vector2::new(1e6, 0.0)], &components, 0.99).unwrap();
        assert!(!g.gated(0, 0));
        // Boundary: squared Mahalanobis 9.21 is inside the 9.2103 quantile.
        let inside = Vector2::new(9.21f64.sqrt(), 0.0);
        let outside = Vector2::new(9.22f64.sqrt(), 0.0);
        let g = gate(&[inside, outside], &components, 0.99).unwrap();
        assert!(g.gated(0, 0));
        assert!(!g.gated(1, 0));
    }

    #[test]
    fn gate_rejects_non_spd() {
        let bad = vec![(Vector2::zeros(), Matrix2::new(1.0, 2.0, 2.0, 1.0))];
        assert!(gate(&[Vector2::zeros()], &bad, 0.99).is_err());
    }

    #[test]
    fn cluster_examples() {
        assert!(cluster_unused(&[], 1.0).is_empty());

        let two = [Vector2::new(0.0, 0.0), Vector2::new(0.5, 0.0)];
        let clusters = cluster_unused(&two, 1.0);
        assert_eq!(clusters, vec![vec![0, 1]]);

        // Collinear points with gaps 0.9 and 1.1 times the link distance.
        let three = [
            Vector2::new(0.0, 0.0),
            Vector2::new(0.9, 0.0),
            Vector2::new(2.0, 0.0),
        ];
        let clusters = cluster_unused(&three, 1.0);
        assert_eq!(clusters, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn enumerate_counts_match_hand_enumeration() {
        let sm = sensor();
        // No measurements, one track: the single missed-detection hypothesis.
        let p = problem(&sm, vec![], &[(0.0, 0.0)]);
        let hyps = enumerate_all(&p).unwrap();
        assert_eq!(hyps.len(), 1);
        assert!(hyps[0].cells.is_empty());

        // One measurement, no tracks: one folded new-track hypothesis.
        let p = problem(&sm, vec![Vector2::new(0.0, 0.0)], &[]);
        let hyps = enumerate_all(&p).unwrap();
        assert_eq!(hyps.len(), 1);
        assert_eq!(hyps[0].cells.len(), 1);
        assert_eq!(hyps[0].cells[0].target, CellTarget::NewTrack);

        // Two measurements, one track: partitions {{0},{1}} and {{0,1}}
        // crossed with admissible mappings gives five hypotheses.
        let p = problem(
            &sm,
            vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0)],
            &[(0.0, 0.0)],
        );
        let hyps = enumerate_all(&p).unwrap();
        assert_eq!(hyps.len(), 5);
        for h in &hyps {
            assert!(h.is_valid_for(2, 1));
            assert!(h.log_weight.is_finite());
        }
    }

    #[test]
    fn enumerate_guard_fires() {
        let sm = sensor();
        let measurements: Vec<_> = (0..9).map(|i| Vector2::new(i as f64, 0.0)).collect();
        let p = problem(&sm, measurements, &[]);
        assert!(matches!(
            enumerate_all(&p),
            Err(Error::EnumerationGuard { got: 9, .. })
        ));
    }

    /// Summing Murty assignment weights over every partition must equal the
    /// exhaustive total: validates both the cost-matrix construction and the
    /// enumerator on the same instance.
    #[test]
    fn kbest_total_weight_matches_enumeration_over_partitions() {
        let sm = sensor();
        let p = problem(
            &sm,
            vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.5, 0.5),
                Vector2::new(-1.0, 0.5),
            ],
            &[(0.0, 0.0), (2.0, 0.0)],
        );
        let exhaustive = enumerate_all(&p).unwrap();
        let total_exhaustive =
            log_sum_exp(&exhaustive.iter().map(|h| h.log_weight).collect::<Vec<_>>());

        // Enumerate partitions, build the cost matrix for each fixed
        // partition, and take all assignments.
        let mut partitions: Vec<Vec<Vec<usize>>> = Vec::new();
        fn build(next: usize, m: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
            if next == m {
                out.push(cur.clone());
                return;
            }
            for i in 0..cur.len() {
                cur[i].push(next);
                build(next + 1, m, cur, out);
                cur[i].pop();
            }
            cur.push(vec![next]);
            build(next + 1, m, cur, out);
            cur.pop();
        }
        build(0, 3, &mut Vec::new(), &mut partitions);

        let mut evaluator = Evaluator::new(&p);
        let mut log_terms = Vec::new();
        for partition in &partitions {
            let n_cells = partition.len();
            let n_tracks = p.targets.len();
            let mut cost = DMatrix::from_element(n_cells, n_tracks + n_cells, f64::INFINITY);
            for (ci, cell) in partition.iter().enumerate() {
                for t in 0..n_tracks {
                    let lw = evaluator.log_track_cell(t, cell);
                    if lw.is_finite() {
                        cost[(ci, t)] = -(lw - p.targets[t].log_missed);
                    }
                }
                cost[(ci, n_tracks + ci)] = -evaluator.log_new_cell(cell);
            }
            let base: f64 = p.targets.iter().map(|t| t.log_missed).sum();
            if let Ok(assignments) = kbest_assignments(&cost, 10_000) {
                for a in assignments {
                    log_terms.push(base - a.cost);
                }
            }
        }
        let total_kbest = log_sum_exp(&log_terms);
        assert_relative_eq!(
            total_kbest.exp(),
            total_exhaustive.exp(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn murty_hypotheses_are_a_subset_with_exact_weights() {
        let sm = sensor();
        let p = problem(
            &sm,
            vec![Vector2::new(0.0, 0.0), Vector2::new(8.0, 0.0)],
            &[(0.0, 0.0)],
        );
        let hyps = murty_hypotheses(&p, 2.0, 10).unwrap();
        assert!(!hyps.is_empty());
        let exhaustive = enumerate_all(&p).unwrap();
        for h in &hyps {
            assert_relative_eq!(
                recompute_log_weight(&p, h),
                h.log_weight,
                max_relative = 1e-12
            );
            let key = h.canonical_key();
            assert!(
                exhaustive.iter().any(
                    |e| e.canonical_key() == key
                        && (e.log_weight - h.log_weight).abs() < 1e-9
                ),
                "murty hypothesis missing from exhaustive enumeration"
            );
        }
    }
}
