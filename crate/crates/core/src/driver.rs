//! The pipeline from source text to a checked or evaluated program.

use crate::desugar::Desugarer;
use crate::facts::{infer_datatype_facts, FactEnv, FactError};
use crate::interp::{with_big_stack, Interpreter, RuntimeError};
use crate::kindcheck::{self, KindError};
use crate::parser::{parse_program, ParseError};
use crate::permissions::{Ctx, Defs};
use crate::prelude::{builtin_type_names, prelude};
use crate::syntax::*;
use crate::typecheck::{Checker, Snapshot, TypeError};

pub const DEFAULT_DEPTH: usize = 8;

#[derive(Clone, Debug)]
pub struct Options {
    pub depth: usize,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Options { depth: DEFAULT_DEPTH, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Parse(ParseError),
    #[error("{0}")]
    Kind(KindError),
    #[error("{0}")]
    Fact(FactError),
    #[error("{0}")]
    Type(TypeError),
    #[error("{0}")]
    Runtime(RuntimeError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Parse(_) => 3,
            PipelineError::Kind(_) => 2,
            PipelineError::Fact(_) | PipelineError::Type(_) => 1,
            PipelineError::Runtime(_) => 4,
        }
    }

    /// The rule or error class, as shown between brackets.
    pub fn rule(&self) -> String {
        match self {
            PipelineError::Parse(_) => "Parse".into(),
            PipelineError::Kind(k) => k.rule.into(),
            PipelineError::Fact(FactError::FactMismatch { .. }) => "FactMismatch".into(),
            PipelineError::Fact(_) => "Fact".into(),
            PipelineError::Type(t) => t.rule.into(),
            PipelineError::Runtime(r) => format!("{r:?}").split([' ', '{', '(']).next().unwrap_or("").to_string(),
        }
    }

    pub fn diagnostic(&self, file: &str) -> String {
        match self {
            PipelineError::Parse(p) => format!("{file}:{}:{}: error[Parse]: {p}", p.line, p.col),
            PipelineError::Kind(k) => format!("{file}:{}: error[{}]: {}", k.span, k.rule, k.message),
            PipelineError::Fact(f) => {
                let span = match f {
                    FactError::FactMismatch { span, .. } | FactError::UnknownType(_, span) => *span,
                    FactError::MeetUndefined => Span::default(),
                };
                format!("{file}:{span}: error[{}]: {f}", self.rule())
            }
            PipelineError::Type(t) => format!("{file}:{}: {t}", t.span),
            PipelineError::Runtime(r) => format!("{file}: runtime error: {r}"),
        }
    }
}

/// A program after parsing, kind checking, desugaring and fact inference.
pub struct Frontend {
    pub program: Program,
    pub facts: FactEnv,
    pub defs: Defs,
    pub supply: NameSupply,
}

impl Frontend {
    pub fn ctx(&self, depth: usize) -> Ctx<'_> {
        Ctx { facts: &self.facts, defs: &self.defs, supply: &self.supply, depth }
    }

    /// One line per user-defined type.
    pub fn facts_dump(&self) -> String {
        let builtin = builtin_type_names();
        self.facts
            .dump()
            .lines()
            .filter(|l| {
                let name = l.trim_start_matches("fact ").split(':').next().unwrap_or("");
                !builtin.contains(&name)
            })
            .map(|l| format!("{l}\n"))
            .collect()
    }
}

pub fn frontend(src: &str, opts: &Options) -> Result<Frontend, PipelineError> {
    let user = parse_program(src).map_err(PipelineError::Parse)?;
    let full = prelude().concat(user);
    kindcheck::check_program(&full).map_err(PipelineError::Kind)?;
    let supply = NameSupply::new(opts.seed);
    let program = Desugarer::for_program(&supply, &full).desugar_program(&full);
    let facts = infer_datatype_facts(&program).map_err(PipelineError::Fact)?;
    let defs = Defs::from_program(&program);
    Ok(Frontend { program, facts, defs, supply })
}

pub struct CheckReport {
    pub snapshots: Vec<Snapshot>,
    pub facts: String,
}

impl CheckReport {
    /// The snapshot before (or after) the instruction on `line` of `function`.
    pub fn at(&self, function: &str, line: u32, after: bool) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.function == function && s.line == line && s.after == after)
    }
}

pub fn check_source(src: &str, opts: &Options) -> Result<(Frontend, CheckReport), PipelineError> {
    let fe = frontend(src, opts)?;
    let snapshots = {
        let mut checker = Checker::new(fe.ctx(opts.depth));
        checker.check_program(&fe.program).map_err(PipelineError::Type)?;
        checker.snapshots()
    };
    let facts = fe.facts_dump();
    Ok((fe, CheckReport { snapshots, facts }))
}

/// The outcome of a run: the rendered value of the last top-level
/// definition, and the interpreter for further inspection.
pub struct RunResult {
    pub output: String,
    pub interp: Interpreter,
}

/// Checks (unless `unchecked`) and evaluates a program.
pub fn run_source(src: &str, opts: &Options, unchecked: bool) -> Result<RunResult, PipelineError> {
    let program = if unchecked {
        frontend(src, opts)?.program
    } else {
        check_source(src, opts)?.0.program
    };
    with_big_stack(move || {
        let mut it = Interpreter::new(&program);
        it.load(&program).map_err(PipelineError::Runtime)?;
        let output = it.last.as_ref().map(|v| it.show(v)).unwrap_or_default();
        Ok(RunResult { output, interp: it })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn failure(src: &str) -> PipelineError {
        match run_source(src, &Options::default(), false) {
            Ok(_) => panic!("accepted: {src}"),
            Err(e) => e,
        }
    }

    #[test]
    fn exit_codes_follow_the_stage() {
        assert_eq!(failure("val = 1").exit_code(), 3);
        assert_eq!(failure("val f (x: nope) : int = 1").exit_code(), 2);
        assert_eq!(failure("val f (x: int) : bool = x").exit_code(), 1);
        assert_eq!(failure("data mutable b = B { v: int }\nfact duplicable b").exit_code(), 1);
        assert_eq!(failure("val main = fail").exit_code(), 4);
    }

    #[test]
    fn diagnostics_name_the_rule() {
        let e = failure("val f (x: int) : bool = x");
        assert_eq!(e.rule(), "Sub/Return");
        assert_eq!(e.diagnostic("a.mz"), "a.mz:1:1: error[Sub/Return]: missing permission: x @ bool");
        assert_eq!(failure("val main = fail").rule(), "ExplicitFail");
    }

    #[test]
    fn seed_shifts_fresh_names_only() {
        let src = "val f (consumes x: (int, int)) : int = let (a, b) = x in a + b";
        let a = check_source(src, &Options { seed: 0, ..Options::default() }).unwrap().1;
        let b = check_source(src, &Options { seed: 1000, ..Options::default() }).unwrap().1;
        assert_eq!(a.snapshots.len(), b.snapshots.len());
        assert_eq!(a.facts, b.facts);
    }

    #[test]
    fn builtins_are_hidden_from_fact_dumps() {
        let (_, r) = check_source("data pair a = P { l: a; r: a }", &Options::default()).unwrap();
        assert_eq!(r.facts, "fact pair: duplicable a => duplicable\n");
    }
}
