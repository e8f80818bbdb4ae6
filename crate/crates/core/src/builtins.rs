//! Bundled target documents, addressable as `builtin:NAME`.

use crate::target::{load_program, GuardProgram, TargetError};

const BUILTINS: &[(&str, &str)] = &[
    ("le15", include_str!("../targets/le15.json")),
    ("magic32", include_str!("../targets/magic32.json")),
    ("magic32_be", include_str!("../targets/magic32_be.json")),
    ("magic_str", include_str!("../targets/magic_str.json")),
    ("magic4", include_str!("../targets/magic4.json")),
    ("chain6", include_str!("../targets/chain6.json")),
    ("mixed", include_str!("../targets/mixed.json")),
    ("ranges", include_str!("../targets/ranges.json")),
    ("xor", include_str!("../targets/xor.json")),
    ("bug", include_str!("../targets/bug.json")),
];

/// Targets used for mode comparisons.
pub const SUITE: [&str; 8] = [
    "magic32",
    "magic32_be",
    "magic_str",
    "chain6",
    "mixed",
    "ranges",
    "xor",
    "bug",
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTINS.iter().map(|(name, _)| *name)
}

pub fn document(name: &str) -> Option<&'static str> {
    BUILTINS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, doc)| *doc)
}

pub fn builtin(name: &str) -> Result<GuardProgram, TargetError> {
    let doc = document(name)
        .ok_or_else(|| TargetError::Invalid(format!("no builtin target named `{name}`")))?;
    load_program(doc.as_bytes())
}

/// The default seed for a target: one all-zero input of maximal length.
pub fn default_seed(program: &GuardProgram) -> Vec<u8> {
    vec![0; program.max_input_len()]
}
