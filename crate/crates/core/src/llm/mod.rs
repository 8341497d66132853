//! Two-stage taxonomy construction with a chat model.
//!
//! Stage one asks the model to regroup the labels of each category into
//! sound event classes; stage two asks for subcategories of every class.
//! Requests are hashed so that a directory of recorded transcripts can stand
//! in for the endpoint ([`ReplayStore`]).

mod client;
mod parse;
mod pipeline;
mod prompt;

pub use client::{
    ChatBackend, ChatMessage, ChatRequest, Completion, HttpChatClient, LlmTranscript, RecordingClient,
    ReplayStore, RetryPolicy, Role, API_KEY_ENV,
};
pub use parse::{
    extract_json_object, parse_cluster_response, parse_subcategory_response, Cluster, ClusterResult,
    ItemViolation, ParseError, SubcategoryParse,
};
pub use pipeline::{
    run_taxonomy_pipeline, DropReason, DroppedClass, PipelineOptions, PipelineOutput, PipelineReport,
    RejectedSubcategory,
};
pub use prompt::{build_cluster_prompt, build_subcategory_prompt, PromptSet, PromptTemplate, Stage};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("{0}")]
    Precondition(String),
    #[error("failed to access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("chat request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("chat endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion: {0}")]
    BadCompletion(String),
    #[error("replay miss: no transcript for request {0}")]
    ReplayMiss(String),
    #[error("corrupt transcript: {0}")]
    CorruptTranscript(String),
    #[error("invalid {stage} response for {context} (request {request_hash})")]
    Response {
        stage: Stage,
        context: String,
        request_hash: String,
        #[source]
        source: ParseError,
    },
}

impl LlmError {
    /// True for failures reaching the endpoint or the replay store.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            LlmError::Transport { .. } | LlmError::Status { .. } | LlmError::BadCompletion(_) | LlmError::ReplayMiss(_)
        )
    }
}
