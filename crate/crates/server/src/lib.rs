//! Conversational recommendation server: a tool registry with JSON-RPC
//! access, a multi-turn orchestrator and the HTTP routes the chat UI talks to.

pub mod http;
pub mod orchestrator;
pub mod rpc;
pub mod tools;

pub use orchestrator::{
    AssistantReply, Clock, FixedClock, Orchestrator, OrchestratorConfig, OrchestratorError, Session, SessionTurn,
    SystemClock, ToolCall, UserMessage,
};
pub use tools::{Tool, ToolContext, ToolDescriptor, ToolError, ToolRegistry};
