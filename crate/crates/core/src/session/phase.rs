use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Phase of the tutoring workflow. Exactly one is active per session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskPhase {
    Introduction,
    Assessment,
    ScenarioSelection,
    RolePlay,
    Feedback,
    Ended,
}

impl TaskPhase {
    pub const ALL: [TaskPhase; 6] = [
        TaskPhase::Introduction,
        TaskPhase::Assessment,
        TaskPhase::ScenarioSelection,
        TaskPhase::RolePlay,
        TaskPhase::Feedback,
        TaskPhase::Ended,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskPhase::Introduction => "Introduction",
            TaskPhase::Assessment => "Assessment",
            TaskPhase::ScenarioSelection => "ScenarioSelection",
            TaskPhase::RolePlay => "RolePlay",
            TaskPhase::Feedback => "Feedback",
            TaskPhase::Ended => "Ended",
        }
    }

    pub fn is_terminal(self) -> bool {
        self == TaskPhase::Ended
    }

    /// The phase a saturated task hands over to.
    pub fn forward(self) -> Option<TaskPhase> {
        match self {
            TaskPhase::Introduction => Some(TaskPhase::Assessment),
            TaskPhase::Assessment => Some(TaskPhase::ScenarioSelection),
            TaskPhase::ScenarioSelection => Some(TaskPhase::RolePlay),
            TaskPhase::RolePlay => Some(TaskPhase::Feedback),
            TaskPhase::Feedback => Some(TaskPhase::ScenarioSelection),
            TaskPhase::Ended => None,
        }
    }

    /// Stable small integer used by the C ABI.
    pub fn code(self) -> i32 {
        match self {
            TaskPhase::Introduction => 0,
            TaskPhase::Assessment => 1,
            TaskPhase::ScenarioSelection => 2,
            TaskPhase::RolePlay => 3,
            TaskPhase::Feedback => 4,
            TaskPhase::Ended => 5,
        }
    }
}

impl fmt::Display for TaskPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        TaskPhase::ALL
            .into_iter()
            .find(|p| p.as_str().to_ascii_lowercase() == norm)
            .ok_or_else(|| format!("unknown phase {s:?}"))
    }
}

/// Whether the workflow may move from `from` to `to`.
///
/// Forward flow plus two loops back to scenario selection (after feedback, or
/// when the learner switches role-play), and `Ended` from anywhere.
pub fn validate_transition(from: TaskPhase, to: TaskPhase) -> bool {
    use TaskPhase::*;
    if to == Ended {
        return true;
    }
    matches!(
        (from, to),
        (Introduction, Assessment)
            | (Assessment, ScenarioSelection)
            | (ScenarioSelection, RolePlay)
            | (RolePlay, Feedback)
            | (Feedback, ScenarioSelection)
            | (RolePlay, ScenarioSelection)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use TaskPhase::*;

    const EDGES: [(TaskPhase, TaskPhase); 6] = [
        (Introduction, Assessment),
        (Assessment, ScenarioSelection),
        (ScenarioSelection, RolePlay),
        (RolePlay, Feedback),
        (Feedback, ScenarioSelection),
        (RolePlay, ScenarioSelection),
    ];

    #[test]
    fn full_truth_table() {
        for from in TaskPhase::ALL {
            for to in TaskPhase::ALL {
                let expected = to == Ended || EDGES.contains(&(from, to));
                assert_eq!(validate_transition(from, to), expected, "{from} -> {to}");
            }
        }
    }

    #[test]
    fn named_examples() {
        assert!(validate_transition(Introduction, Assessment));
        assert!(!validate_transition(Ended, Introduction));
    }

    #[test]
    fn forward_edges_are_legal() {
        for p in TaskPhase::ALL {
            if let Some(next) = p.forward() {
                assert!(validate_transition(p, next));
            }
        }
    }

    #[test]
    fn parse_loose_names() {
        assert_eq!("role_play".parse::<TaskPhase>(), Ok(RolePlay));
        assert_eq!("ENDED".parse::<TaskPhase>(), Ok(Ended));
        assert!("Lunch".parse::<TaskPhase>().is_err());
    }
}
