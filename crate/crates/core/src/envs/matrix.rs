use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_discrete_action, one_hot, ActionSpace, DecPomdpDescriptor, Env, JointAction, StepResult};
use crate::error::{Error, Result};

/// Payoff table of a two-agent, one-shot cooperative game.
///
/// Loadable from TOML:
///
/// ```toml
/// n_actions_per_agent = [3, 3]
/// payoffs = [8, -12, -12, -12, 0, 0, -12, 0, 0]
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixGameSpec {
    pub n_actions_per_agent: Vec<usize>,
    /// Row-major: agent 0 selects the row.
    pub payoffs: Vec<f64>,
}

impl MatrixGameSpec {
    /// The non-monotonic default: coordinating on action 0 pays 8, any
    /// miscoordination with action 0 costs 12, everything else pays 0.
    pub fn non_monotonic() -> Self {
        Self {
            n_actions_per_agent: vec![3, 3],
            payoffs: vec![8.0, -12.0, -12.0, -12.0, 0.0, 0.0, -12.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidValue { field: "payoffs".into(), reason };
        if self.n_actions_per_agent.len() != 2 || self.n_actions_per_agent.contains(&0) {
            return Err(Error::InvalidValue {
                field: "n_actions_per_agent".into(),
                reason: "need exactly two positive action counts".into(),
            });
        }
        let cells = self.n_actions_per_agent[0] * self.n_actions_per_agent[1];
        if self.payoffs.len() != cells {
            return Err(invalid(format!("expected {cells} entries, got {}", self.payoffs.len())));
        }
        if self.payoffs.iter().any(|p| !p.is_finite()) {
            return Err(invalid("entries must be finite".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let spec: Self = toml::from_str(&text).map_err(|e| Error::InvalidValue {
            field: "payoff file".into(),
            reason: format!("{}: {}", path.display(), e.message()),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn payoff(&self, a0: usize, a1: usize) -> f64 {
        self.payoffs[a0 * self.n_actions_per_agent[1] + a1]
    }
}

/// Single-step two-agent matrix game.
///
/// Observation: own previous action one-hot (all zeros at reset).
/// State: one-hot of the step index over `{0, 1}`.
#[derive(Clone, Debug)]
pub struct MatrixGame {
    spec: MatrixGameSpec,
    desc: DecPomdpDescriptor,
    done: bool,
}

impl MatrixGame {
    pub fn new(spec: MatrixGameSpec) -> Result<Self> {
        spec.validate()?;
        let width = *spec.n_actions_per_agent.iter().max().expect("two agents");
        let desc = DecPomdpDescriptor {
            n_agents: 2,
            state_width: 2,
            action_spaces: spec.n_actions_per_agent.iter().map(|n| ActionSpace::Discrete(*n)).collect(),
            obs_width: width,
            horizon: 1,
        };
        Ok(Self { spec, desc, done: false })
    }

    pub fn default_game() -> Self {
        Self::new(MatrixGameSpec::non_monotonic()).expect("default table is valid")
    }

    pub fn spec(&self) -> &MatrixGameSpec {
        &self.spec
    }
}

impl Env for MatrixGame {
    fn descriptor(&self) -> &DecPomdpDescriptor {
        &self.desc
    }

    fn reset(&mut self, _seed: u64) -> StepResult {
        self.done = false;
        StepResult {
            observations: vec![vec![0.0; self.desc.obs_width]; 2],
            state: one_hot(2, Some(0)),
            reward: 0.0,
            terminal: false,
        }
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(Error::Usage("step after terminal".into()));
        }
        let widths = &self.spec.n_actions_per_agent;
        let a = check_discrete_action(action, 2, *widths.iter().max().expect("two agents"))?;
        if a[0] >= widths[0] || a[1] >= widths[1] {
            return Err(Error::Usage(format!("joint action {a:?} out of range {widths:?}")));
        }
        self.done = true;
        Ok(StepResult {
            observations: a.iter().map(|u| one_hot(self.desc.obs_width, Some(*u))).collect(),
            state: one_hot(2, Some(1)),
            reward: self.spec.payoff(a[0], a[1]),
            terminal: true,
        })
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }

    fn name(&self) -> &str {
        "matrix"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{brute_force_optimum, joint_actions};

    #[test]
    fn reset_gives_zero_observations() {
        let mut g = MatrixGame::default_game();
        let r = g.reset(7);
        assert!(r.observations.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(r.state, vec![1.0, 0.0]);
        assert!(!r.terminal);
        assert_eq!(r.reward, 0.0);
        assert_eq!(r, g.reset(7));
    }

    #[test]
    fn coordinated_zero_pays_eight() {
        let mut g = MatrixGame::default_game();
        g.reset(0);
        let r = g.step(&JointAction::Discrete(vec![0, 0])).unwrap();
        assert_eq!(r.reward, 8.0);
        assert!(r.terminal);
        assert!(matches!(g.step(&JointAction::Discrete(vec![0, 0])), Err(Error::Usage(_))));
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let mut g = MatrixGame::default_game();
        g.reset(0);
        assert!(g.step(&JointAction::Discrete(vec![3, 0])).is_err());
        assert!(g.step(&JointAction::Discrete(vec![0])).is_err());
    }

    #[test]
    fn reward_equals_table_entry() {
        let spec = MatrixGameSpec::non_monotonic();
        for joint in joint_actions(&[3, 3]) {
            let mut g = MatrixGame::default_game();
            g.reset(0);
            let r = g.step(&JointAction::Discrete(joint.clone())).unwrap();
            assert_eq!(r.reward, spec.payoff(joint[0], joint[1]));
        }
    }

    #[test]
    fn optimum_of_default_game() {
        assert_eq!(brute_force_optimum(&MatrixGame::default_game()).unwrap(), 8.0);
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("game.toml");
        std::fs::write(&path, "n_actions_per_agent = [2, 2]\npayoffs = [1, 0, 0, 3.5]\n").unwrap();
        let spec = MatrixGameSpec::load(&path).unwrap();
        assert_eq!(spec.payoff(1, 1), 3.5);

        std::fs::write(&path, "n_actions_per_agent = [2, 2]\npayoffs = [1, 0, 0]\n").unwrap();
        assert!(MatrixGameSpec::load(&path).is_err());
        std::fs::write(&path, "n_actions_per_agent = [2, 2]\npayoffs = [1, 0, 0, 1]\nextra = 1\n").unwrap();
        assert!(MatrixGameSpec::load(&path).is_err());
        assert!(matches!(MatrixGameSpec::load(&dir.path().join("nope.toml")), Err(Error::MissingFile(_))));
    }
}
