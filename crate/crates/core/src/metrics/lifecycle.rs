//! Call-sequence grammar shared by every collector:
//! `start (pause | resume | on_node_begin on_node_end)* stop`, with node
//! callbacks only while resumed.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("collector contract violation: {0}")]
pub struct ContractViolation(pub String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call<'a> {
    Start,
    Stop,
    Pause,
    Resume,
    NodeBegin(&'a str),
    NodeEnd(&'a str),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
enum State {
    #[default]
    Idle,
    Paused,
    Resumed,
    InNode(String),
    Stopped,
}

/// Incremental validator; collectors feed every call through it.
#[derive(Debug, Clone, Default)]
pub struct LifecycleGuard {
    state: State,
}

impl LifecycleGuard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_resumed(&self) -> bool {
        matches!(self.state, State::Resumed | State::InNode(_))
    }

    pub fn is_stopped(&self) -> bool {
        self.state == State::Stopped
    }

    pub fn step(&mut self, call: &Call<'_>) -> Result<(), ContractViolation> {
        let violation = |msg: &str| Err(ContractViolation(msg.to_owned()));
        let next = match (&self.state, call) {
            (State::Stopped, _) => return violation("call after stop"),
            (State::Idle, Call::Start) => State::Paused,
            (State::Idle, Call::Stop) => return violation("stop before start"),
            (State::Idle, _) => return violation("call before start"),
            (_, Call::Start) => return violation("start while already started"),

            (State::Paused, Call::Pause) => State::Paused,
            (State::Paused, Call::Resume) => State::Resumed,
            (State::Paused, Call::NodeBegin(_)) => return violation("begin while paused"),
            (State::Paused, Call::NodeEnd(_)) => return violation("end while paused"),
            (State::Paused, Call::Stop) => State::Stopped,

            (State::Resumed, Call::Pause) => State::Paused,
            (State::Resumed, Call::Resume) => State::Resumed,
            (State::Resumed, Call::NodeBegin(id)) => State::InNode((*id).to_owned()),
            (State::Resumed, Call::NodeEnd(_)) => return violation("end without begin"),
            (State::Resumed, Call::Stop) => State::Stopped,

            (State::InNode(open), Call::NodeEnd(id)) if open == id => State::Resumed,
            (State::InNode(open), Call::NodeEnd(id)) => {
                return Err(ContractViolation(format!("end of `{id}` while `{open}` is open")))
            }
            (State::InNode(_), Call::NodeBegin(_)) => return violation("begin inside open node"),
            (State::InNode(_), Call::Pause) => return violation("pause inside open node"),
            (State::InNode(_), Call::Resume) => return violation("resume inside open node"),
            (State::InNode(_), Call::Stop) => return violation("stop inside open node"),
        };
        self.state = next;
        Ok(())
    }
}

/// Validates a complete call sequence, which must end with `stop`.
pub fn lifecycle_guard(calls: &[Call<'_>]) -> Result<(), ContractViolation> {
    let mut guard = LifecycleGuard::new();
    for call in calls {
        guard.step(call)?;
    }
    if !guard.is_stopped() {
        return Err(ContractViolation("sequence does not end with stop".into()));
    }
    Ok(())
}
