//! Trajectory state-space types: single trajectories, mixture densities over
//! discrete birth/end times, Bernoulli components and Poisson intensities.
//!
//! A trajectory density is a mixture where each component fixes a (birth,
//! end) pair and carries one single-target marginal per covered time step.
//! The per-step marginals are filtered marginals; within-trajectory state
//! correlations are not represented.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{Matrix2, Vector2, Vector4};

use crate::ggiw::GgiwDensity;
use crate::{Error, Result};

/// A realized trajectory: birth step, end step and one state per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub birth: u32,
    pub end: u32,
    pub states: Vec<Vector4<f64>>,
}

impl TrajectoryState {
    pub fn len(&self) -> usize {
        (self.end - self.birth + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State at absolute time step `t`, if covered.
    pub fn state_at(&self, t: u32) -> Option<&Vector4<f64>> {
        if t < self.birth || t > self.end {
            return None;
        }
        self.states.get((t - self.birth) as usize)
    }
}

/// One mixture component of a trajectory density: a (birth, end) pair and a
/// per-step sequence of single-target marginals.
#[derive(Debug, Clone)]
pub struct TrajectoryComponent {
    pub weight: f64,
    pub birth: u32,
    pub end: u32,
    /// Filtered marginal per covered step; length == end - birth + 1.
    pub steps: Vec<GgiwDensity>,
}

impl TrajectoryComponent {
    pub fn new(weight: f64, birth: u32, end: u32, steps: Vec<GgiwDensity>) -> Self {
        debug_assert_eq!(steps.len(), (end - birth + 1) as usize);
        TrajectoryComponent {
            weight,
            birth,
            end,
            steps,
        }
    }

    /// Fresh single-step component, used for births and new tracks.
    pub fn born(weight: f64, time: u32, density: GgiwDensity) -> Self {
        TrajectoryComponent {
            weight,
            birth: time,
            end: time,
            steps: vec![density],
        }
    }

    pub fn final_state(&self) -> &GgiwDensity {
        self.steps.last().expect("component has at least one step")
    }

    pub fn step_at(&self, t: u32) -> Option<&GgiwDensity> {
        if t < self.birth || t > self.end {
            return None;
        }
        self.steps.get((t - self.birth) as usize)
    }
}

/// Mixture density (or intensity) over trajectories.
///
/// Weights sum to one when the value is used as a density; a Poisson
/// intensity only requires nonnegative weights.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryDensity {
    pub components: Vec<TrajectoryComponent>,
}

impl TrajectoryDensity {
    pub fn single(component: TrajectoryComponent) -> Self {
        TrajectoryDensity {
            components: vec![component],
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// Scales weights so they sum to one. No-op on an empty mixture.
    pub fn normalize(&mut self) {
        let total = self.total_weight();
        if total > 0.0 {
            for c in &mut self.components {
                c.weight /= total;
            }
        }
    }

    /// Asserts distinct (birth, end) support and, for densities,
    /// normalization within `tol`.
    pub fn check_support(&self, as_density: bool, tol: f64) -> bool {
        let mut seen = std::collections::HashSet::new();
        for c in &self.components {
            if c.birth > c.end || c.weight < 0.0 {
                return false;
            }
            if c.steps.len() != (c.end - c.birth + 1) as usize {
                return false;
            }
            if !seen.insert((c.birth, c.end)) {
                return false;
            }
        }
        if as_density && !self.components.is_empty() {
            (self.total_weight() - 1.0).abs() <= tol
        } else {
            true
        }
    }

    /// Probability mass on components alive at step `k` (end == k).
    pub fn alive_mass(&self, k: u32) -> f64 {
        self.components
            .iter()
            .filter(|c| c.end == k)
            .map(|c| c.weight)
            .sum()
    }

    /// Highest-weight component, ties broken toward the earliest index.
    pub fn dominant(&self) -> Option<&TrajectoryComponent> {
        self.components
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.weight.partial_cmp(&b.weight).unwrap().then(ib.cmp(ia)))
            .map(|(_, c)| c)
    }
}

/// Bernoulli component over trajectories: empty with probability `1 - existence`.
#[derive(Debug, Clone)]
pub struct TrajectoryBernoulli {
    pub existence: f64,
    pub density: TrajectoryDensity,
}

/// Probability that the trajectory exists and is alive at step `k`:
/// `r * sum of weights with end == k`.
pub fn alive_probability(bernoulli: &TrajectoryBernoulli, k: u32) -> f64 {
    bernoulli.existence * bernoulli.density.alive_mass(k)
}

/// Marginal of a trajectory density at step `t`: the probability that the
/// trajectory covers `t` and the weighted per-step marginals of the covering
/// components. `None` when no component covers `t`.
pub fn state_marginal_at(
    density: &TrajectoryDensity,
    t: u32,
) -> Option<(f64, Vec<(f64, GgiwDensity)>)> {
    let mut mass = 0.0;
    let mut parts = Vec::new();
    for c in &density.components {
        if let Some(step) = c.step_at(t) {
            mass += c.weight;
            parts.push((c.weight, step.clone()));
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some((mass, parts))
    }
}

/// Weighted mixture of trajectory components used as a Poisson intensity.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryPoisson {
    pub components: Vec<TrajectoryComponent>,
}

impl TrajectoryPoisson {
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }
}

/// Flat trajectory record: per-step kinematic mean and extent matrix. Ground
/// truths, tracker estimates and metric inputs all use this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub id: u32,
    pub birth: u32,
    pub states: Vec<(Vector4<f64>, Matrix2<f64>)>,
}

impl TrajectoryRecord {
    pub fn end(&self) -> u32 {
        self.birth + self.states.len() as u32 - 1
    }

    pub fn alive_at(&self, t: u32) -> bool {
        t >= self.birth && t <= self.end()
    }

    pub fn state_at(&self, t: u32) -> Option<&(Vector4<f64>, Matrix2<f64>)> {
        if !self.alive_at(t) {
            return None;
        }
        self.states.get((t - self.birth) as usize)
    }

    pub fn position_at(&self, t: u32) -> Option<Vector2<f64>> {
        self.state_at(t).map(|(x, _)| Vector2::new(x[0], x[1]))
    }

    /// Record truncated to steps <= k; `None` if born after k.
    pub fn truncated(&self, k: u32) -> Option<TrajectoryRecord> {
        if self.birth > k {
            return None;
        }
        let keep = ((k.min(self.end()) - self.birth) as usize) + 1;
        Some(TrajectoryRecord {
            id: self.id,
            birth: self.birth,
            states: self.states[..keep].to_vec(),
        })
    }
}

/// Writes trajectory records in the line-oriented text format: one record per
/// line, `id birth end step;step;...` where a step is seven comma-separated
/// values `x,y,vx,vy,Xxx,Xxy,Xyy`.
pub fn write_trajectories<W: Write>(out: &mut W, records: &[TrajectoryRecord]) -> Result<()> {
    for rec in records {
        let mut line = format!("{} {} {} ", rec.id, rec.birth, rec.end());
        for (i, (x, ext)) in rec.states.iter().enumerate() {
            if i > 0 {
                line.push(';');
            }
            write!(
                line,
                "{},{},{},{},{},{},{}",
                x[0],
                x[1],
                x[2],
                x[3],
                ext[(0, 0)],
                ext[(0, 1)],
                ext[(1, 1)]
            )
            .expect("write to string");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Parses the format written by [`write_trajectories`]. Lines starting with
/// `#` and blank lines are skipped.
pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |msg: &str| Error::Parse {
            line: lineno + 1,
            msg: msg.to_string(),
        };
        let mut parts = line.splitn(4, ' ');
        let id: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse("bad trajectory id"))?;
        let birth: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse("bad birth step"))?;
        let end: u32 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse("bad end step"))?;
        if end < birth {
            return Err(parse("end precedes birth"));
        }
        let body = parts
            .next()
            .ok_or_else(|| parse("missing state sequence"))?;
        let mut states = Vec::new();
        for chunk in body.split(';') {
            let vals: Vec<f64> = chunk
                .split(',')
                .map(|v| v.trim().parse().map_err(|_| parse("bad number")))
                .collect::<Result<_>>()?;
            if vals.len() != 7 {
                return Err(parse("step record needs 7 values"));
            }
            let x = Vector4::new(vals[0], vals[1], vals[2], vals[3]);
            let ext = Matrix2::new(vals[4], vals[5], vals[5], vals[6]);
            states.push((x, ext));
        }
        if states.len() != (end - birth + 1) as usize {
            return Err(parse("step count does not match birth/end"));
        }
        records.push(TrajectoryRecord { id, birth, states });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn ggiw(tag: f64) -> GgiwDensity {
        GgiwDensity {
            rate_shape: 8.0,
            rate_rate: 1.0,
            kin_mean: Vector4::new(tag, 0.0, 0.0, 0.0),
            kin_cov: Matrix4::identity(),
            extent_dof: 10.0,
            extent_scale: Matrix2::identity() * 4.0,
        }
    }

    fn two_component_density(k: u32) -> TrajectoryDensity {
        TrajectoryDensity {
            components: vec![
                TrajectoryComponent::new(0.6, 0, k, vec![ggiw(0.0); (k + 1) as usize]),
                TrajectoryComponent::new(0.4, 0, k - 1, vec![ggiw(1.0); k as usize]),
            ],
        }
    }

    #[test]
    fn alive_probability_examples() {
        let k = 5;
        let density = two_component_density(k);
        // r = 0 kills everything.
        let b = TrajectoryBernoulli {
            existence: 0.0,
            density: density.clone(),
        };
        assert_eq!(alive_probability(&b, k), 0.0);

        // Point mass on alive with r = 1.
        let single = TrajectoryDensity::single(TrajectoryComponent::born(1.0, k, ggiw(0.0)));
        let b = TrajectoryBernoulli {
            existence: 1.0,
            density: single,
        };
        assert_relative_eq!(alive_probability(&b, k), 1.0);

        // r = 0.8 with weights 0.6 at end == k and 0.4 at end == k - 1.
        let b = TrajectoryBernoulli {
            existence: 0.8,
            density,
        };
        assert_relative_eq!(alive_probability(&b, k), 0.48, epsilon = 1e-15);
    }

    #[test]
    fn state_marginal_examples() {
        let comp = TrajectoryComponent::new(1.0, 2, 5, vec![ggiw(0.0); 4]);
        let d = TrajectoryDensity::single(comp);
        assert!(state_marginal_at(&d, 7).is_none());
        let (mass, parts) = state_marginal_at(&d, 3).unwrap();
        assert_relative_eq!(mass, 1.0);
        assert_eq!(parts.len(), 1);

        let k = 5;
        let d = TrajectoryDensity {
            components: vec![
                TrajectoryComponent::new(0.7, 0, k, vec![ggiw(0.0); (k + 1) as usize]),
                TrajectoryComponent::new(0.3, 0, k - 1, vec![ggiw(1.0); k as usize]),
            ],
        };
        let (mass, parts) = state_marginal_at(&d, k).unwrap();
        assert_relative_eq!(mass, 0.7, epsilon = 1e-15);
        assert_eq!(parts.len(), 1);
    }

    #[test]
    fn alive_probability_monotone_in_existence() {
        let density = two_component_density(4);
        let mut last = -1.0;
        for i in 0..=10 {
            let r = i as f64 / 10.0;
            let b = TrajectoryBernoulli {
                existence: r,
                density: density.clone(),
            };
            let p = alive_probability(&b, 4);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn marginal_masses_sum_to_born_by_t() {
        // Components with different birth times; masses at t must sum to the
        // probability that birth <= t <= end.
        let d = TrajectoryDensity {
            components: vec![
                TrajectoryComponent::new(0.5, 0, 4, vec![ggiw(0.0); 5]),
                TrajectoryComponent::new(0.3, 2, 4, vec![ggiw(1.0); 3]),
                TrajectoryComponent::new(0.2, 3, 3, vec![ggiw(2.0); 1]),
            ],
        };
        for t in 0..=4u32 {
            let expected: f64 = d
                .components
                .iter()
                .filter(|c| c.birth <= t && t <= c.end)
                .map(|c| c.weight)
                .sum();
            let got = state_marginal_at(&d, t).map(|(m, _)| m).unwrap_or(0.0);
            assert_relative_eq!(got, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn file_format_rejects_malformed_lines() {
        let bad = "1 3 2 0,0,0,0,1,0,1\n";
        assert!(read_trajectories(bad.as_bytes()).is_err());
        let short = "1 0 1 0,0,0,0,1,0,1\n";
        assert!(read_trajectories(short.as_bytes()).is_err());
        let not_seven = "1 0 0 0,0,0,0,1,0\n";
        assert!(read_trajectories(not_seven.as_bytes()).is_err());
    }

    #[test]
    fn file_format_skips_comments() {
        let text = "# header\n\n3 1 2 1,2,0.5,0.25,4,0,4;2,3,0.5,0.25,4,0,4\n";
        let recs = read_trajectories(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, 3);
        assert_eq!(recs[0].birth, 1);
        assert_eq!(recs[0].end(), 2);
    }

    proptest! {
        #[test]
        fn file_format_round_trips(
            id in 0u32..50,
            birth in 0u32..20,
            len in 1usize..6,
            seed in proptest::collection::vec(-100.0f64..100.0, 1..24),
        ) {
            let mut states = Vec::new();
            for i in 0..len {
                let v = seed[i % seed.len()];
                let x = Vector4::new(v, -v, v * 0.5, 0.25);
                let ext = Matrix2::new(v.abs() + 1.0, 0.1, 0.1, v.abs() + 2.0);
                states.push((x, ext));
            }
            let rec = TrajectoryRecord { id, birth, states };
            let mut buf = Vec::new();
            write_trajectories(&mut buf, std::slice::from_ref(&rec)).unwrap();
            let parsed = read_trajectories(buf.as_slice()).unwrap();
            prop_assert_eq!(parsed.len(), 1);
            prop_assert_eq!(&parsed[0], &rec);
        }
    }
}
