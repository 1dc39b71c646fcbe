use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Lead,
    Editor,
    Commenter,
    ReadOnly,
}

/// Every operation the service exposes, for permission checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    CreateProject,
    ListProjects,
    ReadProject,
    UploadTranscript,
    SetObjectives,
    StartExtraction,
    StartClustering,
    ReadRun,
    SubmitReview,
    SubmitEdit,
    ReadReports,
    RunAgreement,
    CreateShare,
    Chat,
}

impl Operation {
    pub const ALL: [Operation; 14] = [
        Operation::CreateProject,
        Operation::ListProjects,
        Operation::ReadProject,
        Operation::UploadTranscript,
        Operation::SetObjectives,
        Operation::StartExtraction,
        Operation::StartClustering,
        Operation::ReadRun,
        Operation::SubmitReview,
        Operation::SubmitEdit,
        Operation::ReadReports,
        Operation::RunAgreement,
        Operation::CreateShare,
        Operation::Chat,
    ];

    /// Operations that change stored state (and so append edit events or
    /// create projects and runs).
    pub fn is_mutation(self) -> bool {
        matches!(
            self,
            Operation::CreateProject
                | Operation::UploadTranscript
                | Operation::SetObjectives
                | Operation::StartExtraction
                | Operation::StartClustering
                | Operation::SubmitReview
                | Operation::SubmitEdit
                | Operation::CreateShare
        )
    }
}

impl Role {
    /// The permission table. Leads may do everything, editors everything
    /// except project creation and sharing, commenters may read and submit
    /// reviews, and read-only sessions may only read.
    pub fn permits(self, op: Operation) -> bool {
        use Operation::*;
        match self {
            Role::Lead => true,
            Role::Editor => !matches!(op, CreateProject | CreateShare),
            Role::Commenter => matches!(
                op,
                ListProjects
                    | ReadProject
                    | ReadRun
                    | ReadReports
                    | SubmitReview
                    | RunAgreement
                    | Chat
            ),
            Role::ReadOnly => matches!(
                op,
                ListProjects | ReadProject | ReadRun | ReadReports | Chat
            ),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Lead => "lead",
            Role::Editor => "editor",
            Role::Commenter => "commenter",
            Role::ReadOnly => "read_only",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lead" => Ok(Role::Lead),
            "editor" => Ok(Role::Editor),
            "commenter" => Ok(Role::Commenter),
            "read_only" | "read-only" => Ok(Role::ReadOnly),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}
