//! Bilingual retrieval-training toolkit: ingest Greek and English corpora,
//! build an ontology-validated knowledge graph, sample anchor-positive
//! training pairs with cross-lingual augmentation, benchmark retrieval
//! backends with Acc@k and NDCG@k, and compare models across datasets with
//! an aligned-ranks significance test.
//!
//! The stages compose as a pipeline but each module stands alone:
//!
//! - [`corpus`] reads JSONL documents and chunks them on whitespace near a
//!   configurable size;
//! - [`kg`] stores typed nodes and edges under a fixed ontology and
//!   persists them with tamper-evident headers;
//! - [`extract`] turns chunks into entities, relations, facts, and
//!   questions via pluggable backends (a deterministic mock ships in-tree);
//! - [`pairgen`] samples anchors per chunk with seeded, chunk-local RNG
//!   substreams and augments pairs across languages;
//! - [`embed`] and [`eval`] score retrieval backends over an exact-search
//!   index;
//! - [`stats`] ranks models across datasets and tests the differences for
//!   significance;
//! - [`remote`] adapts HTTP services to the backend traits, and
//!   [`backend`] holds the shared retry machinery.
//!
//! Everything is deterministic given a seed: collections iterate in sorted
//! order, identifiers derive from content hashes, and random choices come
//! from per-chunk streams that do not observe each other.

pub mod backend;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod extract;
pub mod jsonl;
pub mod kg;
pub mod pairgen;
pub mod remote;
pub mod stats;
pub mod util;
