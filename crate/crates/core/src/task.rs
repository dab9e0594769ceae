//! Waste-capture episodes: goal placement, observations, shaped reward,
//! domain randomization and the curriculum schedule.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step_dynamics, wrap_angle, DisturbanceWrench, VesselParams, VesselState, PHYSICS_DT};
use crate::error::{Error, Result};

pub const GOAL_MIN_DISTANCE: f64 = 3.0;
pub const GOAL_MAX_DISTANCE: f64 = 10.0;
pub const GOAL_MAX_BEARING_DEG: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub gx: f64,
    pub gy: f64,
}

impl Goal {
    /// Goal at `distance` and `bearing_deg` (positive left) from a vessel at
    /// the origin heading +x.
    pub fn from_polar(distance: f64, bearing_deg: f64) -> Self {
        let b = bearing_deg.to_radians();
        Goal {
            gx: distance * b.cos(),
            gy: distance * b.sin(),
        }
    }

    pub fn distance_from(&self, x: f64, y: f64) -> f64 {
        (self.gx - x).hypot(self.gy - y)
    }
}

/// What the learned policy sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub cos_head: f64,
    pub sin_head: f64,
    pub d: f64,
}

impl Observation {
    pub const DIM: usize = 6;

    pub fn to_array(&self) -> [f64; 6] {
        [self.u, self.v, self.r, self.cos_head, self.sin_head, self.d]
    }

    pub fn heading_error(&self) -> f64 {
        self.sin_head.atan2(self.cos_head)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub left: f64,
    pub right: f64,
}

impl Action {
    /// Clamps to `[-1, 1]`; non-finite components become zero.
    pub fn new(left: f64, right: f64) -> Self {
        let clean = |v: f64| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        Action {
            left: clean(left),
            right: clean(right),
        }
    }

    pub fn as_pair(&self) -> (f64, f64) {
        (self.left, self.right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub k1: f64,
    pub k2: f64,
    pub d_threshold: f64,
    pub success_radius: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 0.001,
            lambda4: -1.0,
            lambda5: 10.0,
            k1: -4.0,
            k2: -0.1,
            d_threshold: 0.1,
            success_radius: 0.3,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
            self.k1,
            self.k2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("reward", "weights must be finite"));
        }
        if !(self.d_threshold > 0.0) {
            return Err(Error::invalid("reward.d_threshold", "must be > 0"));
        }
        if !(self.success_radius >= self.d_threshold) {
            return Err(Error::invalid("reward.success_radius", "must be >= d_threshold"));
        }
        Ok(())
    }
}

/// Half-widths of the uniform randomization, applied at level 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationConfig {
    pub obs_pos_noise: f64,
    pub obs_ang_noise: f64,
    /// Relative range of the linear yaw damping.
    pub nr_range: f64,
    /// Relative range of every other damping coefficient.
    pub damping_range: f64,
    pub com_radius: f64,
    pub force_range: f64,
    pub torque_range: f64,
    pub thrust_gain_range: f64,
    pub curriculum_ramp_epochs: usize,
    pub curriculum_hold_epochs: usize,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        Self {
            obs_pos_noise: 0.03,
            obs_ang_noise: 0.025,
            nr_range: 1.0,
            damping_range: 0.1,
            com_radius: 0.1,
            force_range: 2.5,
            torque_range: 1.0,
            thrust_gain_range: 0.5,
            curriculum_ramp_epochs: 300,
            curriculum_hold_epochs: 700,
        }
    }
}

impl RandomizationConfig {
    /// No randomization at any level.
    pub fn none() -> Self {
        Self {
            obs_pos_noise: 0.0,
            obs_ang_noise: 0.0,
            nr_range: 0.0,
            damping_range: 0.0,
            com_radius: 0.0,
            force_range: 0.0,
            torque_range: 0.0,
            thrust_gain_range: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("obs_pos_noise", self.obs_pos_noise),
            ("obs_ang_noise", self.obs_ang_noise),
            ("nr_range", self.nr_range),
            ("damping_range", self.damping_range),
            ("com_radius", self.com_radius),
            ("force_range", self.force_range),
            ("torque_range", self.torque_range),
            ("thrust_gain_range", self.thrust_gain_range),
        ];
        for (name, value) in ranges {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(format!("randomization.{name}"), "must be finite and >= 0"));
            }
        }
        if self.thrust_gain_range >= 1.0 {
            return Err(Error::invalid("randomization.thrust_gain_range", "must be < 1 to keep gains positive"));
        }
        if self.thrust_gain_range > 0.5 {
            return Err(Error::invalid("randomization.thrust_gain_range", "gains above 1.5 are not supported"));
        }
        if self.nr_range > 1.0 || self.damping_range > 1.0 {
            return Err(Error::invalid("randomization", "damping ranges above 100 % would make coefficients negative"));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.curriculum_ramp_epochs + self.curriculum_hold_epochs
    }
}

/// Linear ramp from 0 to 1 over `curriculum_ramp_epochs`, then 1.
pub fn curriculum_level(epoch: usize, config: &RandomizationConfig) -> f64 {
    if config.curriculum_ramp_epochs == 0 {
        return 1.0;
    }
    (epoch as f64 / config.curriculum_ramp_epochs as f64).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GoalSpec {
    /// Uniform over distance `[3, 10]` m and bearing `[-45, 45]` deg.
    Random,
    Polar { distance: f64, bearing_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    pub goal: GoalSpec,
    /// `None` samples uniformly in `[0, 1]` m/s.
    pub initial_speed: Option<f64>,
    pub params: VesselParams,
    pub level: f64,
}

impl EpisodeConfig {
    pub fn nominal(goal: GoalSpec, initial_speed: f64) -> Self {
        Self {
            goal,
            initial_speed: Some(initial_speed),
            params: VesselParams::default(),
            level: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStart {
    pub state: VesselState,
    pub goal: Goal,
    pub params: VesselParams,
    pub disturbance: DisturbanceWrench,
}

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    let unit: f64 = rng.random_range(-1.0..=1.0);
    unit * half_width
}

/// Samples the start of an episode. Draws a fixed number of random values
/// regardless of the level so RNG streams stay aligned.
pub fn reset(rng: &mut impl Rng, config: &EpisodeConfig, ranges: &RandomizationConfig) -> Result<EpisodeStart> {
    if !(0.0..=1.0).contains(&config.level) {
        return Err(Error::invalid("level", format!("must lie in [0, 1], got {}", config.level)));
    }
    let goal = match config.goal {
        GoalSpec::Random => {
            let d = rng.random_range(GOAL_MIN_DISTANCE..=GOAL_MAX_DISTANCE);
            let b = rng.random_range(-GOAL_MAX_BEARING_DEG..=GOAL_MAX_BEARING_DEG);
            Goal::from_polar(d, b)
        }
        GoalSpec::Polar { distance, bearing_deg } => {
            if !(GOAL_MIN_DISTANCE..=GOAL_MAX_DISTANCE).contains(&distance) {
                return Err(Error::invalid("goal.distance", format!("{distance} m is outside [3, 10] m")));
            }
            if !(bearing_deg.abs() <= GOAL_MAX_BEARING_DEG) {
                return Err(Error::invalid("goal.bearing", format!("{bearing_deg} deg is outside [-45, 45] deg")));
            }
            Goal::from_polar(distance, bearing_deg)
        }
    };
    let speed = match config.initial_speed {
        Some(v) => v,
        None => rng.random_range(0.0..=1.0),
    };

    let level = config.level;
    let mut params = config.params;
    let scale = |rng: &mut ChaCha8Rng, value: f64, range: f64| value * (1.0 + symmetric(rng, level * range));
    // Separate stream so the number of draws above cannot shift these.
    let mut prng = ChaCha8Rng::seed_from_u64(rng.random());
    params.damping_linear.yaw = scale(&mut prng, params.damping_linear.yaw, ranges.nr_range);
    params.damping_linear.surge = scale(&mut prng, params.damping_linear.surge, ranges.damping_range);
    params.damping_linear.sway = scale(&mut prng, params.damping_linear.sway, ranges.damping_range);
    params.damping_quadratic.surge = scale(&mut prng, params.damping_quadratic.surge, ranges.damping_range);
    params.damping_quadratic.sway = scale(&mut prng, params.damping_quadratic.sway, ranges.damping_range);
    params.damping_quadratic.yaw = scale(&mut prng, params.damping_quadratic.yaw, ranges.damping_range);
    params.com_offset_y += symmetric(&mut prng, level * ranges.com_radius);
    params.thrust_gain_left = scale(&mut prng, params.thrust_gain_left, ranges.thrust_gain_range);
    params.thrust_gain_right = scale(&mut prng, params.thrust_gain_right, ranges.thrust_gain_range);
    params.thrust_gain_left = params.thrust_gain_left.min(1.5);
    params.thrust_gain_right = params.thrust_gain_right.min(1.5);
    params.validate()?;

    let disturbance = DisturbanceWrench {
        force_x: symmetric(&mut prng, level * ranges.force_range),
        force_y: symmetric(&mut prng, level * ranges.force_range),
        torque_z: symmetric(&mut prng, level * ranges.torque_range),
    };
    // Exact zeros when randomization is off.
    let disturbance = if level == 0.0 { DisturbanceWrench::ZERO } else { disturbance };
    if level == 0.0 {
        params = config.params;
    }

    Ok(EpisodeStart {
        state: VesselState::with_surge(speed),
        goal,
        params,
        disturbance,
    })
}

/// Observation noise half-widths (position per axis, heading).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObservationNoise {
    pub position: f64,
    pub heading: f64,
}

impl ObservationNoise {
    pub fn scaled(ranges: &RandomizationConfig, level: f64) -> Self {
        Self {
            position: level * ranges.obs_pos_noise,
            heading: level * ranges.obs_ang_noise,
        }
    }

    pub fn is_off(&self) -> bool {
        self.position == 0.0 && self.heading == 0.0
    }
}

/// Builds the observation, perturbing the pose first when noise is on.
pub fn observe(state: &VesselState, goal: &Goal, noise: ObservationNoise, rng: &mut impl Rng) -> Observation {
    let (x, y, psi) = if noise.is_off() {
        (state.x, state.y, state.psi)
    } else {
        (
            state.x + symmetric(rng, noise.position),
            state.y + symmetric(rng, noise.position),
            state.psi + symmetric(rng, noise.heading),
        )
    };
    let dx = goal.gx - x;
    let dy = goal.gy - y;
    let delta = wrap_angle(dy.atan2(dx) - psi);
    let (sin_head, cos_head) = delta.sin_cos();
    Observation {
        u: state.u,
        v: state.v,
        r: state.r,
        cos_head,
        sin_head,
        d: dx.hypot(dy),
    }
}

/// `[dist, head, energy, time, goal]`
pub type RewardTerms = [f64; 5];

pub fn reward(prev_d: f64, obs: &Observation, action: &Action, weights: &RewardWeights) -> (f64, RewardTerms) {
    let delta = obs.heading_error().abs();
    let energy = action.left * action.left + action.right * action.right;
    let terms = [
        weights.lambda1 * (prev_d - obs.d),
        weights.lambda2 * (weights.k1 * delta).exp(),
        weights.lambda3 * ((weights.k2 * energy).exp() - 1.0),
        weights.lambda4,
        if obs.d < weights.d_threshold { weights.lambda5 } else { 0.0 },
    ];
    (terms.iter().sum(), terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub physics_dt: f64,
    /// Physics substeps per control action.
    pub substeps: usize,
    /// Episode budget in physics steps.
    pub max_physics_steps: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            physics_dt: PHYSICS_DT,
            substeps: 2,
            max_physics_steps: 3000,
        }
    }
}

impl TaskConfig {
    pub fn control_dt(&self) -> f64 {
        self.physics_dt * self.substeps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.physics_dt > 0.0 && self.physics_dt <= 0.1) {
            return Err(Error::invalid("task.physics_dt", "must lie in (0, 0.1]"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("task.substeps", "must be >= 1"));
        }
        if self.max_physics_steps < self.substeps {
            return Err(Error::invalid("task.max_physics_steps", "must cover at least one control step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub reward_terms: RewardTerms,
    pub done: bool,
    pub success: bool,
    /// Ended by the step budget rather than by capture.
    pub truncated: bool,
}

/// A running episode: plant state, goal and per-episode randomization.
#[derive(Debug, Clone)]
pub struct Episode {
    pub state: VesselState,
    pub goal: Goal,
    pub params: VesselParams,
    pub disturbance: DisturbanceWrench,
    pub noise: ObservationNoise,
    task: TaskConfig,
    weights: RewardWeights,
    physics_steps: usize,
    prev_d: f64,
    done: bool,
    success_time: Option<f64>,
    /// States after each physics substep of the most recent control step.
    pub substep_states: Vec<VesselState>,
}

impl Episode {
    pub fn new(start: EpisodeStart, noise: ObservationNoise, task: TaskConfig, weights: RewardWeights) -> Self {
        let prev_d = start.goal.distance_from(start.state.x, start.state.y);
        Self {
            state: start.state,
            goal: start.goal,
            params: start.params,
            disturbance: start.disturbance,
            noise,
            task,
            weights,
            physics_steps: 0,
            prev_d,
            done: false,
            success_time: None,
            substep_states: Vec::with_capacity(task.substeps),
        }
    }

    pub fn observe(&self, rng: &mut impl Rng) -> Observation {
        observe(&self.state, &self.goal, self.noise, rng)
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn time(&self) -> f64 {
        self.physics_steps as f64 * self.task.physics_dt
    }

    /// Time of first entry into the success radius.
    pub fn success_time(&self) -> Option<f64> {
        self.success_time
    }

    pub fn distance(&self) -> f64 {
        self.goal.distance_from(self.state.x, self.state.y)
    }

    /// Advances one control period with `action` held over every substep.
    pub fn step(&mut self, action: Action, rng: &mut impl Rng) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let action = Action::new(action.left, action.right);
        self.substep_states.clear();
        let mut success = false;
        for _ in 0..self.task.substeps {
            self.state = step_dynamics(
                &self.state,
                action.as_pair(),
                &self.params,
                &self.disturbance,
                self.task.physics_dt,
            )?;
            self.physics_steps += 1;
            self.substep_states.push(self.state);
            if self.distance() < self.weights.success_radius {
                success = true;
                self.success_time = Some(self.time());
                break;
            }
            if self.physics_steps >= self.task.max_physics_steps {
                break;
            }
        }
        let truncated = !success && self.physics_steps >= self.task.max_physics_steps;
        let observation = self.observe(rng);
        let (reward, reward_terms) = reward(self.prev_d, &observation, &action, &self.weights);
        self.prev_d = observation.d;
        self.done = success || truncated;
        Ok(StepOutcome {
            observation,
            reward,
            reward_terms,
            done: self.done,
            success,
            truncated,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub distance: f64,
    pub bearing_deg: f64,
    pub initial_speed: f64,
}

impl GridCell {
    pub fn goal_spec(&self) -> GoalSpec {
        GoalSpec::Polar {
            distance: self.distance,
            bearing_deg: self.bearing_deg,
        }
    }
}

pub const GRID_DISTANCES: [f64; 7] = [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
pub const GRID_SPEEDS: [f64; 3] = [0.0, 0.5, 1.0];

pub fn grid_bearings() -> Vec<f64> {
    (-9..=9).map(|k| 5.0 * k as f64).collect()
}

/// 7 distances x 19 bearings x 3 initial speeds.
pub fn evaluation_grid() -> Vec<GridCell> {
    let mut cells = Vec::with_capacity(399);
    for &distance in &GRID_DISTANCES {
        for bearing_deg in grid_bearings() {
            for &initial_speed in &GRID_SPEEDS {
                cells.push(GridCell {
                    distance,
                    bearing_deg,
                    initial_speed,
                });
            }
        }
    }
    cells
}

/// One row of a trajectory log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub u: f64,
    pub v: f64,
    pub r: f64,
    pub left: f64,
    pub right: f64,
    pub reward: f64,
    pub d: f64,
}

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<trajectory>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    fn quiet() -> (ObservationNoise, ChaCha8Rng) {
        (ObservationNoise::default(), ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn observe_examples() {
        let (noise, mut rng) = quiet();
        let s = VesselState { u: 0.3, v: -0.1, r: 0.2, ..Default::default() };
        let o = observe(&s, &Goal { gx: 5.0, gy: 0.0 }, noise, &mut rng);
        assert_eq!((o.u, o.v, o.r, o.cos_head, o.sin_head, o.d), (0.3, -0.1, 0.2, 1.0, 0.0, 5.0));

        let o = observe(&VesselState::at_rest(), &Goal { gx: 0.0, gy: 5.0 }, noise, &mut rng);
        assert_abs_diff_eq!(o.cos_head, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.sin_head, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.d, 5.0, epsilon = 1e-15);

        let s = VesselState { psi: FRAC_PI_4, ..Default::default() };
        let o = observe(&s, &Goal { gx: 3.0, gy: 3.0 }, noise, &mut rng);
        assert_abs_diff_eq!(o.cos_head, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.sin_head, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.d, 18f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn noisy_observation_stays_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = ObservationNoise { position: 0.03, heading: 0.025 };
        let goal = Goal { gx: 5.0, gy: 0.0 };
        for _ in 0..1000 {
            let o = observe(&VesselState::at_rest(), &goal, noise, &mut rng);
            assert!((o.d - 5.0).abs() <= 0.03 * 2f64.sqrt() + 1e-12);
            assert!(o.heading_error().abs() <= 0.025 + 0.03 * 2.0 / 4.9);
        }
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::default();
        let obs = Observation { u: 0.0, v: 0.0, r: 0.0, cos_head: 1.0, sin_head: 0.0, d: 5.0 };
        let (sum, terms) = reward(5.0, &obs, &Action::new(0.0, 0.0), &w);
        assert_eq!(terms, [0.0, 1.0, 0.0, -1.0, 0.0]);
        assert_eq!(sum, 0.0);

        let (_, terms) = reward(5.0, &obs, &Action::new(1.0, 1.0), &w);
        assert_abs_diff_eq!(terms[2], 0.001 * ((-0.2f64).exp() - 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(terms[2], -1.8127e-4, epsilon = 1e-8);

        let near = Observation { d: 0.05, ..obs };
        assert_eq!(reward(0.06, &near, &Action::default(), &w).1[4], 10.0);
    }

    #[test]
    fn heading_reward_is_symmetric() {
        let w = RewardWeights::default();
        let at = |a: f64| Observation { u: 0.0, v: 0.0, r: 0.0, cos_head: a.cos(), sin_head: a.sin(), d: 5.0 };
        let left = reward(5.0, &at(0.5), &Action::default(), &w).1[1];
        let right = reward(5.0, &at(-0.5), &Action::default(), &w).1[1];
        assert_abs_diff_eq!(left, right, epsilon = 1e-15);
        assert_abs_diff_eq!(left, (-2.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn curriculum_examples() {
        let c = RandomizationConfig::default();
        assert_eq!(curriculum_level(0, &c), 0.0);
        assert_eq!(curriculum_level(150, &c), 0.5);
        assert_eq!(curriculum_level(300, &c), 1.0);
        assert_eq!(curriculum_level(900, &c), 1.0);
        assert_eq!(c.total_epochs(), 1000);
    }

    #[test]
    fn reset_level_zero_is_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = EpisodeConfig::nominal(GoalSpec::Random, 0.5);
        let start = reset(&mut rng, &cfg, &RandomizationConfig::default()).unwrap();
        assert_eq!(start.params, VesselParams::default());
        assert_eq!(start.disturbance, DisturbanceWrench::ZERO);
        assert_eq!(start.state, VesselState::with_surge(0.5));
        let d = start.goal.distance_from(0.0, 0.0);
        assert!((3.0..=10.0).contains(&d));
        assert!(start.goal.gy.atan2(start.goal.gx).abs() <= FRAC_PI_4 + 1e-12);
    }

    #[test]
    fn reset_rejects_out_of_range_goals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ranges = RandomizationConfig::default();
        let bad_bearing = EpisodeConfig::nominal(GoalSpec::Polar { distance: 5.0, bearing_deg: 50.0 }, 0.0);
        assert!(reset(&mut rng, &bad_bearing, &ranges).is_err());
        let bad_distance = EpisodeConfig::nominal(GoalSpec::Polar { distance: 2.0, bearing_deg: 0.0 }, 0.0);
        assert!(reset(&mut rng, &bad_distance, &ranges).is_err());
        let bad_level = EpisodeConfig { level: 1.5, ..EpisodeConfig::nominal(GoalSpec::Random, 0.0) };
        assert!(reset(&mut rng, &bad_level, &ranges).is_err());
    }

    #[test]
    fn full_level_yaw_damping_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ranges = RandomizationConfig::default();
        let cfg = EpisodeConfig { level: 1.0, ..EpisodeConfig::nominal(GoalSpec::Random, 0.0) };
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for _ in 0..10_000 {
            let s = reset(&mut rng, &cfg, &ranges).unwrap();
            let nr = s.params.damping_linear.yaw;
            assert!((0.0..=11.66 + 1e-12).contains(&nr), "N_r = {nr}");
            lo = lo.min(nr);
            hi = hi.max(nr);
            assert!(s.params.com_offset_y.abs() <= 0.1);
            assert!(s.disturbance.force_x.abs() <= 2.5 && s.disturbance.torque_z.abs() <= 1.0);
            assert!((0.5..=1.5).contains(&s.params.thrust_gain_left));
        }
        // The samples should actually cover the range.
        assert!(lo < 0.5 && hi > 11.0);
    }

    #[test]
    fn grid_is_exhaustive_and_unique() {
        let grid = evaluation_grid();
        assert_eq!(grid.len(), 399);
        let mut keys: Vec<_> = grid
            .iter()
            .map(|c| ((c.distance * 10.0) as i64, (c.bearing_deg * 10.0) as i64, (c.initial_speed * 10.0) as i64))
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 399);
    }

    fn episode_towards(goal: Goal, state: VesselState) -> Episode {
        let start = EpisodeStart { state, goal, params: VesselParams::default(), disturbance: DisturbanceWrench::ZERO };
        Episode::new(start, ObservationNoise::default(), TaskConfig::default(), RewardWeights::default())
    }

    #[test]
    fn capture_inside_radius() {
        let (_, mut rng) = quiet();
        let mut ep = episode_towards(Goal { gx: 0.2, gy: 0.0 }, VesselState::at_rest());
        let out = ep.step(Action::new(-1.0, 1.0), &mut rng).unwrap();
        assert!(out.success && out.done && !out.truncated);
        assert!(matches!(ep.step(Action::default(), &mut rng), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn budget_exhaustion() {
        let (_, mut rng) = quiet();
        let mut ep = episode_towards(Goal { gx: 5.0, gy: 0.0 }, VesselState::at_rest());
        let first = ep.step(Action::default(), &mut rng).unwrap();
        assert!(!first.done);
        assert_abs_diff_eq!(first.reward, -1.0 + first.reward_terms[1], epsilon = 1e-12);
        assert_abs_diff_eq!(first.reward, 0.0, epsilon = 1e-12);
        let mut steps = 1;
        loop {
            let out = ep.step(Action::default(), &mut rng).unwrap();
            steps += 1;
            if out.done {
                assert!(!out.success && out.truncated);
                break;
            }
        }
        assert_eq!(steps * 2, 3000);
        assert_abs_diff_eq!(ep.time(), 30.0, epsilon = 1e-9);
    }

    #[test]
    fn proportional_controller_captures_dead_ahead_goals() {
        let (_, mut rng) = quiet();
        for &d in &GRID_DISTANCES {
            for &v0 in &GRID_SPEEDS {
                let mut ep = episode_towards(Goal::from_polar(d, 0.0), VesselState::with_surge(v0));
                let mut obs = ep.observe(&mut rng);
                let success = loop {
                    let turn = (2.0 * obs.heading_error()).clamp(-0.5, 0.5);
                    let out = ep.step(Action::new(0.8 - turn, 0.8 + turn), &mut rng).unwrap();
                    obs = out.observation;
                    if out.done {
                        break out.success;
                    }
                };
                assert!(success, "d={d} v0={v0}");
            }
        }
    }

    #[test]
    fn trajectory_csv_header() {
        let row = TrajectoryRow { t: 0.05, x: 0.0, y: 0.0, psi: 0.0, u: 0.0, v: 0.0, r: 0.0, left: 0.0, right: 0.0, reward: 0.0, d: 5.0 };
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,y,psi,u,v,r,left,right,reward,d\n"));
    }
}
