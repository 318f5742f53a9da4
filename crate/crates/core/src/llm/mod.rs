//! LLM access: prompt construction, answer parsing, and a provider client
//! with cassette-based record and replay.

pub mod client;
pub mod parse;
pub mod prompt;

pub use client::{
    request_hash, CassetteStore, CompletionRecord, CompletionRequest, FnProvider, HttpProvider, LlmClient, LlmError,
    Mode, Provider, RetryPolicy, ENV_API_KEY, ENV_BASE_URL,
};
pub use parse::{
    extract_matrix_json, parse_ranking, parse_ranking_n, parse_top_choice, parse_top_choice_n, ParseError,
    RankingResponse, TopChoiceResponse,
};
pub use prompt::{
    build_ranking_prompt, build_sat_update_prompt, build_scenario_generation_prompt, build_top_choice_prompt,
    emphasis_sentence, PromptError, PromptKind, PromptTemplate,
};
