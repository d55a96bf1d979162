//! Specification files, built-in fixtures and the audit report.

pub mod example;
pub mod fixtures;
pub mod json;
pub mod report;
pub mod spec;

pub use fixtures::{
    fixture_by_name, fixture_divergence, fixture_on_policy, fixture_random, fixture_two_state, RandomFixture,
};
pub use report::{audit, AuditOptions, AuditReport};
pub use spec::{parse_spec, parse_spec_str, Instance, Origin, SpecError, SpecFile};
