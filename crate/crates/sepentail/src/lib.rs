//! Entailment checking for separation-logic symbolic heaps with user-defined
//! inductive predicates.
//!
//! The library decides sequents `lhs |->{V} rhs` between symbolic heaps, where
//! the predicates are defined by progressing inductive rules that allocate
//! exactly one cell per unfolding (the root of the predicate). For rule sets
//! that are additionally loc-deterministic, [`prover::prove`] runs a cyclic
//! proof search that is sound, complete and polynomial in the input size.
//! Independently of the prover, [`semantics`] provides an executable model
//! semantics with bounded counter-model enumeration, usable both for
//! cross-validation and for counter-example extraction.
//!
//! Overview of the modules:
//!
//! * [`syntax`] — terms, pure/spatial formulas, symbolic heaps, sequents and
//!   their canonical forms.
//! * [`rules`] — inductive rule sets and their static validation
//!   (productivity, out-parameters, determinism, measures).
//! * [`semantics`] — stores, heaps, the satisfaction relation, bounded model
//!   enumeration and constructive model building.
//! * [`analysis`] — syntactic analyses used by the calculus: allocated
//!   variables, path relation, restricted pure entailment, axiom and
//!   anti-axiom recognition.
//! * [`calculus`] — the eight inference rules and the strategy that selects
//!   admissible applications.
//! * [`prover`] — normalization, the sequent graph, the non-provability
//!   fixpoint and proof/refutation extraction.
//! * [`cli`] — the textual problem format and the command-line driver.

pub mod analysis;
pub mod calculus;
pub mod cli;
pub mod prover;
pub mod rules;
pub mod semantics;
pub mod syntax;
