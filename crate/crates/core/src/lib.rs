pub mod agent;
pub mod embed;
pub mod gateway;
pub mod map;
pub mod planner;
pub mod scenario;
pub mod simulator;
pub mod vector_store;

// The guide's code listings run as doc-tests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/map-format.md")]
    mod map_format {}
    #[doc = include_str!("../../../book/src/planning.md")]
    mod planning {}
    #[doc = include_str!("../../../book/src/place-recognition.md")]
    mod place_recognition {}
    #[doc = include_str!("../../../book/src/agent-loop.md")]
    mod agent_loop {}
    #[doc = include_str!("../../../book/src/hazards-and-preferences.md")]
    mod hazards_and_preferences {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
