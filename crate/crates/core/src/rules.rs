//! Rule files shipped with the crate.

use crate::logic::{parse_rule_file, RuleSet};

/// Annotation, symmetry and transitivity rules for three-way NLI.
pub const NLI_RULES: &str = include_str!("../../../rules/nli.rules");

pub fn nli() -> RuleSet {
    parse_rule_file(NLI_RULES).expect("shipped rule file parses")
}
