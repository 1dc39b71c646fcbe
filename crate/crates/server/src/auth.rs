use std::collections::BTreeMap;

use axum::http::{header, HeaderMap};
use serde::{Deserialize, Serialize};
use tapestry_core::project::Role;
use tapestry_core::workflow::{Actor, ProjectService};

/// Actor id used for requests authenticated by a share link.
pub const SHARE_ACTOR: &str = "share-link";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEntry {
    pub actor: String,
    pub role: Role,
}

/// Static bearer tokens mapped to actors and roles.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenTable(pub BTreeMap<String, TokenEntry>);

impl TokenTable {
    pub fn insert(&mut self, token: impl Into<String>, actor: impl Into<String>, role: Role) {
        self.0.insert(
            token.into(),
            TokenEntry {
                actor: actor.into(),
                role,
            },
        );
    }

    pub fn actor(&self, token: &str) -> Option<Actor> {
        self.0
            .get(token)
            .map(|e| Actor::new(e.actor.clone(), e.role))
    }
}

pub fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let token = value
        .strip_prefix("Bearer ")
        .or_else(|| value.strip_prefix("bearer "))?;
    let token = token.trim();
    (!token.is_empty()).then_some(token)
}

/// Resolves a project-scoped caller: a configured token first, then a share
/// link of this project, which always reads as `read_only`.
pub fn project_actor(tokens: &TokenTable, token: &str, svc: &ProjectService) -> Option<Actor> {
    tokens.actor(token).or_else(|| {
        svc.share_grants(token)
            .then(|| Actor::new(SHARE_ACTOR, Role::ReadOnly))
    })
}
