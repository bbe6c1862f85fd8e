use std::collections::BTreeMap;
use std::sync::Arc;

use super::{PortKind, Role, UserPort, UserQuery, UserSimError};
use crate::chat::{ChatClient, ChatMessage, ChatRequest};
use crate::task::GymKind;

/// Sampling temperatures per role. Judges always run at 0.0.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampling {
    pub responder: f64,
    /// Per-gym responder temperatures that replace `responder`.
    pub responder_overrides: BTreeMap<GymKind, f64>,
}

impl Default for Sampling {
    fn default() -> Self {
        // Only the intention responder converses freely; the other responders
        // make consistency-sensitive calls (yes/no answers, stance, classification).
        let responder_overrides = [GymKind::Telepathy, GymKind::Turtle, GymKind::Persuade, GymKind::Travel]
            .into_iter()
            .map(|g| (g, 0.0))
            .collect();
        Self { responder: 0.7, responder_overrides }
    }
}

impl Sampling {
    pub const JUDGE_TEMPERATURE: f64 = 0.0;

    pub fn temperature(&self, gym: GymKind, role: Role) -> f64 {
        match role {
            Role::Judge => Self::JUDGE_TEMPERATURE,
            Role::Responder => self.responder_overrides.get(&gym).copied().unwrap_or(self.responder),
        }
    }
}

/// Chat-endpoint simulator. Endpoints can be bound per (gym, role) or per role.
pub struct LlmUserPort {
    by_gym_role: BTreeMap<(GymKind, Role), Arc<ChatClient>>,
    by_role: BTreeMap<Role, Arc<ChatClient>>,
    sampling: Sampling,
}

impl LlmUserPort {
    pub fn new(sampling: Sampling) -> Self {
        Self { by_gym_role: BTreeMap::new(), by_role: BTreeMap::new(), sampling }
    }

    /// One endpoint for every role.
    pub fn single(client: Arc<ChatClient>) -> Self {
        Self::new(Sampling::default()).bind_role(Role::Responder, client.clone()).bind_role(Role::Judge, client)
    }

    pub fn bind_role(mut self, role: Role, client: Arc<ChatClient>) -> Self {
        self.by_role.insert(role, client);
        self
    }

    pub fn bind(mut self, gym: GymKind, role: Role, client: Arc<ChatClient>) -> Self {
        self.by_gym_role.insert((gym, role), client);
        self
    }

    fn client(&self, gym: GymKind, role: Role) -> Option<&Arc<ChatClient>> {
        self.by_gym_role.get(&(gym, role)).or_else(|| self.by_role.get(&role))
    }

    /// The request that [`UserPort::query`] would send. Exposed for inspection.
    pub fn build_request(&self, q: &UserQuery<'_>) -> Result<ChatRequest, UserSimError> {
        let client = self.client(q.gym, q.role).ok_or(UserSimError::Unbound { gym: q.gym, role: q.role })?;
        let mut messages = Vec::with_capacity(q.conversation.len() + 1);
        messages.push(ChatMessage::system(q.system));
        messages.extend(q.conversation.iter().cloned());
        Ok(ChatRequest {
            model: client.config().model.clone(),
            messages,
            temperature: self.sampling.temperature(q.gym, q.role),
            tools: None,
            tool_choice: None,
            max_tokens: None,
            seed: None,
        })
    }
}

impl UserPort for LlmUserPort {
    fn kind(&self) -> PortKind {
        PortKind::Llm
    }

    fn query(&self, q: &UserQuery<'_>) -> Result<String, UserSimError> {
        let request = self.build_request(q)?;
        let client = self.client(q.gym, q.role).ok_or(UserSimError::Unbound { gym: q.gym, role: q.role })?;
        let completion = client.complete(&request)?;
        Ok(completion.message.text().to_string())
    }

    fn supports(&self, gym: GymKind, role: Role) -> bool {
        self.client(gym, role).is_some()
    }
}
