//! Acceptance criteria, one line each.

use mzc::driver::{check_source, frontend, run_source, Options, PipelineError};
use mzc::interp::{Interpreter, RuntimeError, Value};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::VecDeque;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

#[path = "acceptance/criteria.rs"]
mod criteria;

fn programs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/programs")
}

fn program(name: &str) -> String {
    std::fs::read_to_string(programs_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn opts() -> Options {
    Options::default()
}

type Check = fn() -> Result<(), String>;

fn main() {
    let all: [(u32, &str, Check); 9] = [
        (1, "golden programs check, append runs, bag is FIFO", golden_programs),
        (2, "permission walkthrough", criteria::walkthrough),
        (3, "negative suite", negative_suite),
        (4, "fact inference", criteria::facts),
        (5, "lattice laws", criteria::lattice_laws),
        (6, "desugaring goldens and kind preservation", criteria::desugaring),
        (7, "duplicable oracle", criteria::duplicable_oracle),
        (8, "runtime adoption", runtime_adoption),
        (9, "no stuck states across the corpus", soundness_smoke),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, what, check) in all {
        if !filter.is_empty() && !filter.iter().any(|f| what.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let start = std::time::Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(check)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(()) => println!("criterion {n}: PASS  {what} ({ms} ms)"),
            Err(e) => {
                failed += 1;
                println!("criterion {n}: FAIL  {what} ({ms} ms)\n    {}", e.replace('\n', "\n    "));
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 ------------------------------------------------------------------------

fn golden_programs() -> Result<(), String> {
    for f in ["append.mz", "bag.mz"] {
        check_source(&program(f), &opts()).map_err(|e| e.diagnostic(f))?;
    }
    let run = run_source(&program("append.mz"), &opts(), false).map_err(|e| e.to_string())?;
    let got = run.interp.int_list(run.interp.last.as_ref().unwrap());
    ensure(got == Some(vec![1, 2, 3]), || format!("append gave {}", run.output))?;

    let fe = frontend(&program("bag.mz"), &opts()).map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(4);
    for round in 0..1000 {
        let mut it = Interpreter::new(&fe.program);
        it.load(&fe.program).map_err(|e| e.to_string())?;
        let bag = it.call("create", Value::unit()).map_err(|e| e.to_string())?;
        let mut model = VecDeque::new();
        let steps = rng.gen_range(1..40);
        for _ in 0..steps {
            if rng.gen_bool(0.55) {
                let x: i64 = rng.gen_range(-1000..1000);
                it.call("insert", Value::Tuple(vec![Value::Int(x), bag.clone()])).map_err(|e| e.to_string())?;
                model.push_back(x);
            } else {
                let got = it.call("retrieve", bag.clone()).map_err(|e| e.to_string())?;
                let got = option_int(&it, &got)?;
                let want = model.pop_front();
                ensure(got == want, || format!("round {round}: retrieve gave {got:?}, queue has {want:?}"))?;
            }
        }
    }
    Ok(())
}

fn option_int(it: &Interpreter, v: &Value) -> Result<Option<i64>, String> {
    let Value::Loc(l) = v else { return Err(format!("not an option: {v:?}")) };
    let b = &it.heap[*l];
    match (b.tag.as_str(), b.fields.as_slice()) {
        ("None", []) => Ok(None),
        ("Some", [(_, Value::Int(n))]) => Ok(Some(*n)),
        _ => Err(format!("not an option of int: {}", it.show(v))),
    }
}

// 3 ------------------------------------------------------------------------

const MUTANTS: &[(&str, &str, i32)] = &[
    ("bad_aliased_args.mz", "Application", 1),
    ("bad_write_immutable.mz", "Write", 1),
    ("bad_read_dynamic.mz", "Read", 1),
    ("bad_read_after_give.mz", "Read", 1),
    ("bad_writetag_arity.mz", "WriteTag", 1),
    ("bad_consumes_rhs.mz", "K-Consumes", 2),
    ("bad_capture.mz", "Function", 1),
    ("bad_reuse.mz", "Application", 1),
    ("bad_give_bottom.mz", "Give", 1),
    ("bad_take_noadopts.mz", "Take", 1),
    ("bad_return.mz", "Sub/Return", 1),
    ("bad_unbound_type.mz", "K-Var", 2),
    ("bad_partial_app.mz", "K-App", 2),
    ("bad_unsolved.mz", "UnsolvedFlexible", 1),
    ("bad_fact_mismatch.mz", "FactMismatch", 1),
    ("bad_typestate.mz", "Application", 1),
    ("double_give.mz", "Give", 1),
];

fn negative_suite() -> Result<(), String> {
    let mut bad = Vec::new();
    for (file, rule, code) in MUTANTS {
        match check_source(&program(file), &opts()) {
            Ok(_) => bad.push(format!("{file}: accepted")),
            Err(e) if e.rule() != *rule || e.exit_code() != *code => {
                bad.push(format!("{file}: {} (exit {}), expected {rule} (exit {code})", e.diagnostic(file), e.exit_code()))
            }
            Err(_) => {}
        }
    }
    ensure(bad.is_empty(), || bad.join("\n"))
}

// 8 ------------------------------------------------------------------------

fn runtime_adoption() -> Result<(), String> {
    let src = program("bag_doubletake.mz");
    check_source(&src, &opts()).map_err(|e| format!("double take should check: {}", e.diagnostic("doubletake")))?;
    match run_source(&src, &opts(), false) {
        Err(PipelineError::Runtime(RuntimeError::AbandonFailure { .. })) => {}
        other => return Err(format!("double take: {:?}", other.map(|r| r.output))),
    }

    let src = program("adopt_roundtrip.mz");
    let (_, report) = check_source(&src, &opts()).map_err(|e| e.diagnostic("roundtrip"))?;
    let after_take = report.at("main", 10, false).ok_or("no snapshot before the write")?;
    ensure(after_take.atoms.iter().any(|a| a == "c @ Cell { v: int }" || a == "c @ cell"), || {
        format!("after take: {after_take}")
    })?;
    let run = run_source(&src, &opts(), false).map_err(|e| e.to_string())?;
    ensure(run.output == "2", || format!("round trip printed {}", run.output))?;
    let cell = run.interp.heap.iter().position(|b| b.tag == "Cell").ok_or("no cell")?;
    ensure(run.interp.heap[cell].adopter.is_none(), || "adopter slot not cleared".into())?;

    let src = program("double_give.mz");
    ensure(check_source(&src, &opts()).is_err(), || "double give was accepted".into())?;
    match run_source(&src, &opts(), true) {
        Err(PipelineError::Runtime(RuntimeError::GiveToAdopted { .. })) => Ok(()),
        other => Err(format!("double give unchecked: {:?}", other.map(|r| r.output))),
    }
}

// 9 ------------------------------------------------------------------------

fn soundness_smoke() -> Result<(), String> {
    let mut files: Vec<_> = std::fs::read_dir(programs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mz"))
        .collect();
    files.sort();
    let mut accepted = 0;
    for path in files {
        let src = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        if check_source(&src, &opts()).is_err() {
            continue;
        }
        accepted += 1;
        if let Err(PipelineError::Runtime(e @ RuntimeError::StuckState { .. })) = run_source(&src, &opts(), false) {
            return Err(format!("{}: {e}", path.display()));
        }
    }
    ensure(accepted >= 8, || format!("only {accepted} accepted programs"))
}
