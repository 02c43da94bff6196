//! Built-in types, parsed like user code and placed before it.

use crate::parser::parse_program;
use crate::syntax::Program;

pub const PRELUDE: &str = "\
abstract int
fact duplicable int
abstract bool
fact duplicable bool
data mutable ref a = Ref { contents: a }
data option a = None | Some { value: a }
";

pub fn prelude() -> Program {
    parse_program(PRELUDE).expect("prelude parses")
}

/// Names of the built-in types and constructors; hidden from dumps.
pub fn builtin_type_names() -> Vec<&'static str> {
    vec!["int", "bool", "ref", "option"]
}
