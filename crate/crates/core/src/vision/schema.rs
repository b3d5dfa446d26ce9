use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The five image-derived wound variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    UlcerType,
    Location,
    Stage,
    JointNecrosisExposed,
    LigamentBoneNecrosisExposed,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::UlcerType,
        Task::Location,
        Task::Stage,
        Task::JointNecrosisExposed,
        Task::LigamentBoneNecrosisExposed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::UlcerType => "ulcer_type",
            Task::Location => "location",
            Task::Stage => "stage",
            Task::JointNecrosisExposed => "joint_necrosis_exposed",
            Task::LigamentBoneNecrosisExposed => "ligament_bone_necrosis_exposed",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Task::JointNecrosisExposed | Task::LigamentBoneNecrosisExposed)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Output layer of a task head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Softmax(usize),
    Sigmoid,
}

impl HeadKind {
    pub fn logits(self) -> usize {
        match self {
            HeadKind::Softmax(k) => k,
            HeadKind::Sigmoid => 1,
        }
    }
}

/// Ordered class vocabularies of every task. Binary tasks use `["no", "yes"]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub ulcer_types: Vec<String>,
    pub locations: Vec<String>,
    pub stages: Vec<String>,
}

pub const BINARY_CLASSES: [&str; 2] = ["no", "yes"];

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for LabelSchema {
    fn default() -> Self {
        Self {
            ulcer_types: owned(&[
                "Diabetic Ulcer",
                "Pressure Ulcer",
                "Surgical Wound",
                "Trauma Wound",
                "Venous Ulcer",
            ]),
            locations: owned(&["Lower Leg", "Sacral", "Foot", "Heel", "Ankle", "GreatToe"]),
            stages: owned(&["Full Thickness", "Grade 2", "Stage-3", "Stage-4", "Unstageable"]),
        }
    }
}

impl LabelSchema {
    pub fn validate(&self) -> Result<()> {
        for task in [Task::UlcerType, Task::Location, Task::Stage] {
            let classes = self.classes(task);
            if classes.is_empty() {
                return Err(Error::Invalid(format!("{task}: empty class list")));
            }
            for (i, c) in classes.iter().enumerate() {
                if classes[..i].contains(c) {
                    return Err(Error::Invalid(format!("{task}: duplicate class `{c}`")));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self, task: Task) -> Vec<&str> {
        match task {
            Task::UlcerType => self.ulcer_types.iter().map(String::as_str).collect(),
            Task::Location => self.locations.iter().map(String::as_str).collect(),
            Task::Stage => self.stages.iter().map(String::as_str).collect(),
            Task::JointNecrosisExposed | Task::LigamentBoneNecrosisExposed => BINARY_CLASSES.to_vec(),
        }
    }

    pub fn class_count(&self, task: Task) -> usize {
        match task {
            Task::UlcerType => self.ulcer_types.len(),
            Task::Location => self.locations.len(),
            Task::Stage => self.stages.len(),
            Task::JointNecrosisExposed | Task::LigamentBoneNecrosisExposed => 2,
        }
    }

    pub fn head_kind(&self, task: Task) -> HeadKind {
        if task.is_binary() {
            HeadKind::Sigmoid
        } else {
            HeadKind::Softmax(self.class_count(task))
        }
    }

    /// Index of `label` for `task`. Binary tasks also accept true/false and 1/0.
    pub fn index_of(&self, task: Task, label: &str) -> Result<usize> {
        let label = label.trim();
        if task.is_binary() {
            return match label.to_ascii_lowercase().as_str() {
                "no" | "false" | "0" => Ok(0),
                "yes" | "true" | "1" => Ok(1),
                _ => Err(Error::LabelOutsideSchema {
                    task: task.name().into(),
                    label: label.into(),
                }),
            };
        }
        self.classes(task)
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| Error::LabelOutsideSchema {
                task: task.name().into(),
                label: label.into(),
            })
    }

    pub fn label(&self, task: Task, index: usize) -> &str {
        self.classes(task)[index]
    }

    /// SHA-256 over the canonical JSON form, lowercase hex.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-task labels of one sample; `None` marks an unlabelled task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WoundLabels(pub [Option<usize>; 5]);

impl WoundLabels {
    pub fn get(&self, task: Task) -> Option<usize> {
        self.0[task.index()]
    }

    pub fn set(&mut self, task: Task, value: Option<usize>) {
        self.0[task.index()] = value;
    }
}
