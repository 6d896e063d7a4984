pub mod detect;
pub mod evaluate;
pub mod gateway;
pub mod improve;
pub mod ingest;
pub mod jsonl;
pub mod model;
pub mod preprocess;
pub mod prompts;
pub mod rag;
#[cfg(test)]
mod testkit;
pub mod text;
pub mod tfidf;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    mod preprocessing {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/replay.md")]
    mod replay {}
    #[doc = include_str!("../../../book/src/retrieval.md")]
    mod retrieval {}
    #[doc = include_str!("../../../book/src/improvement.md")]
    mod improvement {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
}
