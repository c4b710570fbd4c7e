//! Scenario and measurement generation: Poisson births with
//! nearly-constant-velocity motion and fixed elliptic extents, plus the
//! standard extended-target measurement model (Bernoulli detection, Poisson
//! measurement count, uniform Poisson clutter).

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix2, Vector2, Vector4};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Normal, Poisson};

use crate::ggiw::{GgiwDensity, MotionModel, Region, SensorModel, EXTENT_DIM};
use crate::numeric::split_seed;
use crate::pmbm::BirthModel;
use crate::trajectory::TrajectoryRecord;
use crate::{Error, Result};

/// One Poisson birth site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BirthSite {
    /// Expected births per scan.
    pub weight: f64,
    pub position: [f64; 2],
    pub position_std: f64,
    pub velocity_std: f64,
}

/// Scenario file: the simulation ground-truth parameters and the matching
/// tracker priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Number of scans.
    pub horizon: u32,
    /// Default seed; the CLI can override it.
    pub seed: u64,
    pub survival: f64,
    pub detection: f64,
    pub clutter_rate: f64,
    pub region: Region,
    /// Measurement-rate choices, one drawn per target.
    pub rates: Vec<f64>,
    pub step_len: f64,
    pub accel_std: f64,
    pub meas_std: f64,
    /// Scaling of the extent in the per-measurement spread.
    pub extent_scaling: f64,
    /// Semi-axis range of the random target ellipses.
    pub extent_axis_range: [f64; 2],
    /// Tracker priors.
    pub rate_prior_shape: f64,
    pub extent_prior_dof: f64,
    pub extent_prior_axis: f64,
    pub rate_forgetting: f64,
    /// Extent decorrelation time constant (seconds).
    pub extent_tau: f64,
    pub birth: Vec<BirthSite>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn motion_model(&self) -> MotionModel {
        MotionModel::nearly_constant_velocity(
            self.step_len,
            self.accel_std,
            self.survival,
            self.extent_tau,
            self.rate_forgetting,
        )
    }

    pub fn sensor_model(&self) -> SensorModel {
        SensorModel::position_sensor(
            self.meas_std,
            self.detection,
            self.clutter_rate,
            self.region,
            self.extent_scaling,
        )
    }

    pub fn birth_model(&self) -> BirthModel {
        let rate_mean = self.rates.iter().sum::<f64>() / self.rates.len() as f64;
        let floor = 2.0 * EXTENT_DIM as f64 + 2.0;
        let extent_mean = self.extent_prior_axis * self.extent_prior_axis;
        BirthModel {
            components: self
                .birth
                .iter()
                .map(|site| {
                    let mut kin_cov = nalgebra::Matrix4::zeros();
                    kin_cov[(0, 0)] = site.position_std * site.position_std;
                    kin_cov[(1, 1)] = site.position_std * site.position_std;
                    kin_cov[(2, 2)] = site.velocity_std * site.velocity_std;
                    kin_cov[(3, 3)] = site.velocity_std * site.velocity_std;
                    (
                        site.weight,
                        GgiwDensity {
                            rate_shape: self.rate_prior_shape,
                            rate_rate: self.rate_prior_shape / rate_mean,
                            kin_mean: Vector4::new(site.position[0], site.position[1], 0.0, 0.0),
                            kin_cov,
                            extent_dof: self.extent_prior_dof,
                            extent_scale: Matrix2::identity()
                                * extent_mean
                                * (self.extent_prior_dof - floor),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Small scenario for fast runs: a handful of well-separated targets
    /// over forty scans with moderate clutter.
    pub fn desk() -> Self {
        ScenarioConfig {
            name: "desk".into(),
            horizon: 40,
            seed: 1,
            survival: 0.99,
            detection: 0.9,
            clutter_rate: 10.0,
            region: Region {
                x_min: -100.0,
                x_max: 100.0,
                y_min: -100.0,
                y_max: 100.0,
            },
            rates: vec![7.0, 8.0, 9.0],
            step_len: 1.0,
            accel_std: 0.15,
            meas_std: 0.7,
            extent_scaling: 0.25,
            extent_axis_range: [1.5, 3.0],
            rate_prior_shape: 16.0,
            extent_prior_dof: 20.0,
            extent_prior_axis: 2.2,
            rate_forgetting: 1.25,
            extent_tau: 99.5,
            birth: vec![
                BirthSite {
                    weight: 0.03,
                    position: [75.0, 75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
                BirthSite {
                    weight: 0.03,
                    position: [-75.0, 75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
                BirthSite {
                    weight: 0.03,
                    position: [75.0, -75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
                BirthSite {
                    weight: 0.03,
                    position: [-75.0, -75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
            ],
        }
    }

    /// Scenario approximating the published study: a hundred scans, four
    /// birth sites, heavy clutter.
    pub fn paper() -> Self {
        ScenarioConfig {
            name: "paper".into(),
            horizon: 100,
            clutter_rate: 60.0,
            birth: vec![
                BirthSite {
                    weight: 0.0675,
                    position: [75.0, 75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
                BirthSite {
                    weight: 0.0675,
                    position: [-75.0, 75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
                BirthSite {
                    weight: 0.0675,
                    position: [75.0, -75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
                BirthSite {
                    weight: 0.0675,
                    position: [-75.0, -75.0],
                    position_std: 10.0,
                    velocity_std: 1.0,
                },
            ],
            ..ScenarioConfig::desk()
        }
    }
}

/// One true target: its realized trajectory, constant extent (inside the
/// record) and measurement rate.
#[derive(Debug, Clone)]
pub struct TruthTarget {
    pub record: TrajectoryRecord,
    pub rate: f64,
}

/// Realized ground truth over the scenario horizon.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub horizon: u32,
    pub targets: Vec<TruthTarget>,
}

impl GroundTruth {
    pub fn records(&self) -> Vec<TrajectoryRecord> {
        self.targets.iter().map(|t| t.record.clone()).collect()
    }

    pub fn alive_at(&self, time: u32) -> impl Iterator<Item = &TruthTarget> {
        self.targets.iter().filter(move |t| t.record.alive_at(time))
    }
}

fn sample_poisson(rng: &mut ChaCha12Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(rate).expect("positive rate");
    rng.sample::<f64, _>(dist) as usize
}

fn sample_standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample::<f64, _>(Normal::standard())
}

/// Poisson births per step and site, geometric lifetimes under the survival
/// probability, nearly-constant-velocity motion and a fixed random ellipse
/// per target. Deterministic given the seed.
pub fn generate_truth(cfg: &ScenarioConfig, seed: u64) -> GroundTruth {
    let mut rng = ChaCha12Rng::seed_from_u64(split_seed(seed, 0xB112A));
    let motion = cfg.motion_model();
    let chol_q = motion
        .process_noise
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(nalgebra::Matrix4::zeros);
    let mut targets = Vec::new();
    let mut next_id = 0u32;

    for birth_time in 1..=cfg.horizon {
        for site in &cfg.birth {
            let count = sample_poisson(&mut rng, site.weight);
            for _ in 0..count {
                let position = Vector2::new(
                    site.position[0] + site.position_std * sample_standard_normal(&mut rng),
                    site.position[1] + site.position_std * sample_standard_normal(&mut rng),
                );
                let velocity = Vector2::new(
                    site.velocity_std * sample_standard_normal(&mut rng),
                    site.velocity_std * sample_standard_normal(&mut rng),
                );
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let half_a = rng.random_range(cfg.extent_axis_range[0]..=cfg.extent_axis_range[1]);
                let half_b = rng.random_range(cfg.extent_axis_range[0]..=cfg.extent_axis_range[1]);
                let rot = Matrix2::new(angle.cos(), -angle.sin(), angle.sin(), angle.cos());
                let extent = rot
                    * Matrix2::new(half_a * half_a, 0.0, 0.0, half_b * half_b)
                    * rot.transpose();
                let rate = cfg.rates[rng.random_range(0..cfg.rates.len())];

                let mut state = Vector4::new(position[0], position[1], velocity[0], velocity[1]);
                let mut states = vec![(state, extent)];
                let mut time = birth_time;
                while time < cfg.horizon {
                    if rng.random::<f64>() > cfg.survival {
                        break;
                    }
                    let noise = Vector4::new(
                        sample_standard_normal(&mut rng),
                        sample_standard_normal(&mut rng),
                        sample_standard_normal(&mut rng),
                        sample_standard_normal(&mut rng),
                    );
                    state = motion.transition * state + chol_q * noise;
                    states.push((state, extent));
                    time += 1;
                }
                targets.push(TruthTarget {
                    record: TrajectoryRecord {
                        id: next_id,
                        birth: birth_time,
                        states,
                    },
                    rate,
                });
                next_id += 1;
            }
        }
    }
    GroundTruth {
        horizon: cfg.horizon,
        targets,
    }
}

/// One scan: measurement points with their origin labels (target id, or -1
/// for clutter), kept for diagnostics only.
#[derive(Debug, Clone)]
pub struct Scan {
    pub time: u32,
    pub points: Vec<Vector2<f64>>,
    pub origins: Vec<i64>,
}

/// Measurements of one scan: detected targets emit a Poisson number of
/// points spread by the scaled extent plus sensor noise; clutter is uniform
/// over the region. The union is shuffled. Deterministic given the seed.
pub fn generate_scan(truth: &GroundTruth, time: u32, cfg: &ScenarioConfig, seed: u64) -> Scan {
    let mut rng = ChaCha12Rng::seed_from_u64(split_seed(seed, 0x5CA0 + time as u64));
    let mut points = Vec::new();
    let mut origins: Vec<i64> = Vec::new();

    for target in truth.alive_at(time) {
        if rng.random::<f64>() > cfg.detection {
            continue;
        }
        let count = sample_poisson(&mut rng, target.rate);
        let (state, extent) = target.record.state_at(time).expect("alive");
        let spread =
            extent * cfg.extent_scaling + Matrix2::identity() * cfg.meas_std * cfg.meas_std;
        let chol = spread.cholesky().expect("spread is SPD").l();
        for _ in 0..count {
            let n = Vector2::new(
                sample_standard_normal(&mut rng),
                sample_standard_normal(&mut rng),
            );
            points.push(Vector2::new(state[0], state[1]) + chol * n);
            origins.push(target.record.id as i64);
        }
    }

    let clutter = sample_poisson(&mut rng, cfg.clutter_rate);
    for _ in 0..clutter {
        points.push(Vector2::new(
            rng.random_range(cfg.region.x_min..=cfg.region.x_max),
            rng.random_range(cfg.region.y_min..=cfg.region.y_max),
        ));
        origins.push(-1);
    }

    // Fisher-Yates shuffle so measurement order carries no information.
    for i in (1..points.len()).rev() {
        let j = rng.random_range(0..=i);
        points.swap(i, j);
        origins.swap(i, j);
    }
    Scan {
        time,
        points,
        origins,
    }
}

/// All scans of the scenario horizon.
pub fn generate_scans(truth: &GroundTruth, cfg: &ScenarioConfig, seed: u64) -> Vec<Scan> {
    (1..=cfg.horizon)
        .map(|k| generate_scan(truth, k, cfg, seed))
        .collect()
}

/// Per-step scan export: `k,x,y,origin` records.
pub fn write_scans<W: Write>(out: &mut W, scans: &[Scan]) -> Result<()> {
    writeln!(out, "k,x,y,origin")?;
    for scan in scans {
        for (p, origin) in scan.points.iter().zip(&scan.origins) {
            writeln!(out, "{},{},{},{}", scan.time, p[0], p[1], origin)?;
        }
    }
    Ok(())
}
