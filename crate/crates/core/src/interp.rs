//! Big-step evaluator over desugared programs. Every heap block carries a
//! hidden adopter slot, written by `give` and checked by `take`.

use crate::syntax::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub const DEFAULT_RECURSION_LIMIT: usize = 100_000;

#[derive(Clone, Debug)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Tuple(Vec<Value>),
    Loc(usize),
    Closure(Arc<Closure>),
    /// A value declared with `val x : t` and no body.
    Opaque(Name),
}

#[derive(Debug)]
pub struct Closure {
    pub func: Function,
    pub env: Env,
}

impl Value {
    pub fn unit() -> Value {
        Value::Tuple(Vec::new())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub tag: Name,
    pub fields: Vec<(Name, Value)>,
    pub adopter: Option<usize>,
    pub frozen: bool,
}

impl PartialEq for Value {
    /// Physical equality, as computed by `==`.
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Loc(a), Value::Loc(b)) => a == b,
            (Value::Tuple(a), Value::Tuple(b)) => a == b,
            (Value::Closure(a), Value::Closure(b)) => Arc::ptr_eq(a, b),
            (Value::Opaque(a), Value::Opaque(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Event {
    Alloc { loc: usize, tag: Name },
    Read { loc: usize, field: Name },
    Write { loc: usize, field: Name },
    Retag { loc: usize, from: Name, to: Name },
    Give { child: usize, parent: usize },
    Take { child: usize, parent: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("abandon failed at {line}")]
    AbandonFailure { line: u32, child: usize, expected: usize },
    #[error("give to an object that already has an adopter at {line}")]
    GiveToAdopted { line: u32 },
    #[error("write to a frozen block at {line}")]
    WriteToFrozen { line: u32 },
    #[error("no pattern matched at {line}")]
    MatchFailure { line: u32 },
    #[error("stuck at {line}: {what}")]
    StuckState { line: u32, what: String },
    #[error("recursion limit of {0} calls exceeded")]
    RecursionLimit(usize),
    #[error("explicit failure at {line}")]
    ExplicitFail { line: u32 },
}

/// Immutable linked environment of variable bindings.
#[derive(Clone, Debug, Default)]
pub struct Env(Option<Arc<Frame>>);

#[derive(Debug)]
pub struct Frame {
    name: Name,
    value: Value,
    next: Env,
}

impl Env {
    pub fn bind(&self, name: &str, value: Value) -> Env {
        Env(Some(Arc::new(Frame { name: name.to_string(), value, next: self.clone() })))
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        let mut cur = &self.0;
        while let Some(f) = cur {
            if f.name == name {
                return Some(&f.value);
            }
            cur = &f.next.0;
        }
        None
    }
}

type R<T> = Result<T, RuntimeError>;

pub struct Interpreter {
    /// Constructor → (owner is mutable, field names in order).
    ctors: BTreeMap<Name, (bool, Vec<Name>)>,
    pub heap: Vec<Block>,
    pub trace: Vec<Event>,
    pub globals: Env,
    pub last: Option<Value>,
    depth: usize,
    pub limit: usize,
}

impl Interpreter {
    pub fn new(program: &Program) -> Self {
        let mut ctors = BTreeMap::new();
        for d in program.datatypes() {
            for b in &d.branches {
                ctors.insert(b.ctor.clone(), (d.mutable, b.fields.iter().map(|(f, _)| f.clone()).collect()));
            }
        }
        Interpreter {
            ctors,
            heap: Vec::new(),
            trace: Vec::new(),
            globals: Env::default(),
            last: None,
            depth: 0,
            limit: DEFAULT_RECURSION_LIMIT,
        }
    }

    /// Evaluates every top-level definition in order.
    pub fn load(&mut self, program: &Program) -> R<()> {
        for item in &program.items {
            match item {
                Item::Value(v) => {
                    let globals = self.globals.clone();
                    let val = self.eval(&globals, &v.body)?;
                    self.globals = self.globals.bind(&v.name, val.clone());
                    self.last = Some(val);
                }
                Item::Decl(x, _, _) => self.globals = self.globals.bind(x, Value::Opaque(x.clone())),
                _ => {}
            }
        }
        Ok(())
    }

    /// Calls the top-level function `name`.
    pub fn call(&mut self, name: &str, arg: Value) -> R<Value> {
        let f = self.globals.get(name).cloned().ok_or_else(|| RuntimeError::StuckState {
            line: 0,
            what: format!("no function {name}"),
        })?;
        self.apply(f, arg, 0)
    }

    fn stuck<T>(line: u32, what: impl Into<String>) -> R<T> {
        Err(RuntimeError::StuckState { line, what: what.into() })
    }

    fn loc(&self, v: &Value, line: u32) -> R<usize> {
        match v {
            Value::Loc(l) => Ok(*l),
            other => Self::stuck(line, format!("expected a block, found {other:?}")),
        }
    }

    fn int(v: &Value, line: u32) -> R<i64> {
        match v {
            Value::Int(n) => Ok(*n),
            other => Self::stuck(line, format!("expected an integer, found {other:?}")),
        }
    }

    pub fn alloc(&mut self, tag: &str, fields: Vec<(Name, Value)>) -> usize {
        let frozen = !self.ctors.get(tag).map(|(m, _)| *m).unwrap_or(false);
        self.heap.push(Block { tag: tag.to_string(), fields, adopter: None, frozen });
        let loc = self.heap.len() - 1;
        self.trace.push(Event::Alloc { loc, tag: tag.to_string() });
        loc
    }

    fn apply(&mut self, f: Value, arg: Value, line: u32) -> R<Value> {
        let Value::Closure(c) = f else {
            return Self::stuck(line, "application of a non-function");
        };
        if self.depth >= self.limit {
            return Err(RuntimeError::RecursionLimit(self.limit));
        }
        self.depth += 1;
        let mut env = c.env.clone();
        if c.func.recursive {
            if let Some(n) = &c.func.name {
                env = env.bind(n, Value::Closure(c.clone()));
            }
        }
        if let Some(z) = &c.func.param {
            env = env.bind(z, arg);
        }
        let out = self.eval(&env, &c.func.body);
        self.depth -= 1;
        out
    }

    /// The arms that recurse in tail-ish position live here so that deep
    /// object-level recursion uses small native frames.
    pub fn eval(&mut self, env: &Env, e: &Expr) -> R<Value> {
        use ExprKind as E;
        match &e.kind {
            E::Var(x) => match env.get(x) {
                Some(v) => Ok(v.clone()),
                None => Self::stuck(e.span.line, format!("unbound {x}")),
            },
            E::Let(p, a, b) => {
                let v = self.eval(env, a)?;
                match self.matches(env, p, &v) {
                    Some(env2) => self.eval(&env2, b),
                    None => Err(RuntimeError::MatchFailure { line: e.span.line }),
                }
            }
            E::Apply(f, a) => {
                let fv = self.eval(env, f)?;
                let av = self.eval(env, a)?;
                self.apply(fv, av, e.span.line)
            }
            E::TypeApp(x, _, _) | E::Annot(x, _) => self.eval(env, x),
            E::Match(s, arms) => {
                let v = self.eval(env, s)?;
                for (p, body) in arms {
                    if let Some(env2) = self.matches(env, p, &v) {
                        return self.eval(&env2, body);
                    }
                }
                Err(RuntimeError::MatchFailure { line: e.span.line })
            }
            E::If(c, a, b) => match self.eval(env, c)? {
                Value::Bool(true) => self.eval(env, a),
                Value::Bool(false) => self.eval(env, b),
                other => Self::stuck(e.span.line, format!("condition is {other:?}")),
            },
            E::Prim(op, a, b) => {
                let x = self.eval(env, a)?;
                let y = self.eval(env, b)?;
                Self::prim(*op, x, y, e.span.line)
            }
            E::Tuple(es) => self.eval_tuple(env, es),
            E::Construct(c, fs, _) => self.eval_construct(env, c, fs, e.span.line),
            _ => self.eval_rest(env, e),
        }
    }

    #[inline(never)]
    fn eval_rest(&mut self, env: &Env, e: &Expr) -> R<Value> {
        use ExprKind as E;
        let line = e.span.line;
        match &e.kind {
            E::Var(x) => match env.get(x) {
                Some(v) => Ok(v.clone()),
                None => Self::stuck(line, format!("unbound {x}")),
            },
            E::Int(n) => Ok(Value::Int(*n)),
            E::Bool(b) => Ok(Value::Bool(*b)),
            E::Fail => Err(RuntimeError::ExplicitFail { line }),
            E::Let(p, a, b) => {
                let v = self.eval(env, a)?;
                match self.matches(env, p, &v) {
                    Some(env2) => self.eval(&env2, b),
                    None => Err(RuntimeError::MatchFailure { line }),
                }
            }
            E::Fun(f) => Ok(Value::Closure(Arc::new(Closure { func: (**f).clone(), env: env.clone() }))),
            E::TypeApp(x, _, _) | E::Annot(x, _) => self.eval(env, x),
            E::Apply(f, a) => {
                let fv = self.eval(env, f)?;
                let av = self.eval(env, a)?;
                self.apply(fv, av, line)
            }
            E::Read(x, f) => {
                let v = self.eval(env, x)?;
                let l = self.loc(&v, line)?;
                self.trace.push(Event::Read { loc: l, field: f.clone() });
                match self.heap[l].fields.iter().find(|(g, _)| g == f) {
                    Some((_, v)) => Ok(v.clone()),
                    None => Self::stuck(line, format!("no field {f} in {}", self.heap[l].tag)),
                }
            }
            E::Write(x, f, y) => {
                let v = self.eval(env, x)?;
                let w = self.eval(env, y)?;
                let l = self.loc(&v, line)?;
                if self.heap[l].frozen {
                    return Err(RuntimeError::WriteToFrozen { line });
                }
                self.trace.push(Event::Write { loc: l, field: f.clone() });
                match self.heap[l].fields.iter_mut().find(|(g, _)| g == f) {
                    Some(slot) => slot.1 = w,
                    None => return Self::stuck(line, format!("no field {f}")),
                }
                Ok(Value::unit())
            }
            E::WriteTag(x, c) => {
                let v = self.eval(env, x)?;
                let l = self.loc(&v, line)?;
                if self.heap[l].frozen {
                    return Err(RuntimeError::WriteToFrozen { line });
                }
                let Some((mutable, names)) = self.ctors.get(c).cloned() else {
                    return Self::stuck(line, format!("unknown constructor {c}"));
                };
                let block = &mut self.heap[l];
                if names.len() != block.fields.len() {
                    return Self::stuck(line, format!("{c} has {} fields", names.len()));
                }
                for (slot, n) in block.fields.iter_mut().zip(names) {
                    slot.0 = n;
                }
                let from = std::mem::replace(&mut block.tag, c.clone());
                block.frozen = !mutable;
                self.trace.push(Event::Retag { loc: l, from, to: c.clone() });
                Ok(Value::unit())
            }
            E::Give(a, b) => {
                let child = self.eval(env, a)?;
                let parent = self.eval(env, b)?;
                let (c, p) = (self.loc(&child, line)?, self.loc(&parent, line)?);
                if self.heap[c].adopter.is_some() {
                    return Err(RuntimeError::GiveToAdopted { line });
                }
                self.heap[c].adopter = Some(p);
                self.trace.push(Event::Give { child: c, parent: p });
                Ok(Value::unit())
            }
            E::Take(a, b) => {
                let child = self.eval(env, a)?;
                let parent = self.eval(env, b)?;
                let (c, p) = (self.loc(&child, line)?, self.loc(&parent, line)?);
                if self.heap[c].adopter != Some(p) {
                    return Err(RuntimeError::AbandonFailure { line, child: c, expected: p });
                }
                self.heap[c].adopter = None;
                self.trace.push(Event::Take { child: c, parent: p });
                Ok(Value::unit())
            }
            E::Taking(..) => Self::stuck(line, "taking must be desugared"),
            _ => unreachable!("handled by eval"),
        }
    }

    #[inline(never)]
    fn eval_tuple(&mut self, env: &Env, es: &[Expr]) -> R<Value> {
        let mut vs = Vec::with_capacity(es.len());
        for x in es {
            vs.push(self.eval(env, x)?);
        }
        Ok(Value::Tuple(vs))
    }

    #[inline(never)]
    fn eval_construct(&mut self, env: &Env, c: &Name, fs: &[(Name, Expr)], line: u32) -> R<Value> {
        let Some((_, names)) = self.ctors.get(c).cloned() else {
            return Self::stuck(line, format!("unknown constructor {c}"));
        };
        let mut given = BTreeMap::new();
        for (f, x) in fs {
            let v = self.eval(env, x)?;
            given.insert(f.clone(), v);
        }
        let mut fields = Vec::new();
        for n in names {
            match given.remove(&n) {
                Some(v) => fields.push((n, v)),
                None => return Self::stuck(line, format!("missing field {n}")),
            }
        }
        Ok(Value::Loc(self.alloc(c, fields)))
    }

    #[inline(never)]
    fn prim(op: PrimOp, x: Value, y: Value, line: u32) -> R<Value> {
        Ok(match op {
            PrimOp::Eq => Value::Bool(x == y),
            PrimOp::Ne => Value::Bool(x != y),
            _ => {
                let (m, n) = (Self::int(&x, line)?, Self::int(&y, line)?);
                match op {
                    PrimOp::Add => Value::Int(m.wrapping_add(n)),
                    PrimOp::Sub => Value::Int(m.wrapping_sub(n)),
                    PrimOp::Mul => Value::Int(m.wrapping_mul(n)),
                    PrimOp::Lt => Value::Bool(m < n),
                    PrimOp::Le => Value::Bool(m <= n),
                    PrimOp::Gt => Value::Bool(m > n),
                    _ => Value::Bool(m >= n),
                }
            }
        })
    }

    fn matches(&self, env: &Env, p: &Pattern, v: &Value) -> Option<Env> {
        match (p, v) {
            (Pattern::Var(x), _) if x == "_" => Some(env.clone()),
            (Pattern::Var(x), _) => Some(env.bind(x, v.clone())),
            (Pattern::Tuple(ps), Value::Tuple(vs)) if ps.len() == vs.len() => {
                let mut env = env.clone();
                for (q, w) in ps.iter().zip(vs) {
                    env = self.matches(&env, q, w)?;
                }
                Some(env)
            }
            (Pattern::Construct(c, fs), Value::Loc(l)) => {
                let block = &self.heap[*l];
                if block.tag != *c {
                    return None;
                }
                let mut env = env.clone();
                for (f, q) in fs {
                    let (_, w) = block.fields.iter().find(|(g, _)| g == f)?;
                    env = self.matches(&env, q, w)?;
                }
                Some(env)
            }
            _ => None,
        }
    }

    /// Reads an immutable or mutable list of integers built from
    /// `Nil`/`Cons`-like blocks with `head` and `tail` fields.
    pub fn int_list(&self, v: &Value) -> Option<Vec<i64>> {
        let mut out = Vec::new();
        let mut cur = v.clone();
        let mut seen = BTreeSet::new();
        loop {
            let l = match cur {
                Value::Loc(l) => l,
                _ => return None,
            };
            if !seen.insert(l) {
                return None;
            }
            let b = &self.heap[l];
            if b.fields.is_empty() {
                return Some(out);
            }
            let head = b.fields.iter().find(|(f, _)| f == "head")?;
            let tail = b.fields.iter().find(|(f, _)| f == "tail")?;
            match head.1 {
                Value::Int(n) => out.push(n),
                _ => return None,
            }
            cur = tail.1.clone();
        }
    }

    /// Renders a value, following heap pointers.
    pub fn show(&self, v: &Value) -> String {
        let mut s = String::new();
        self.show_into(v, &mut BTreeSet::new(), &mut s);
        s
    }

    fn show_into(&self, v: &Value, visiting: &mut BTreeSet<usize>, out: &mut String) {
        match v {
            Value::Int(n) => out.push_str(&n.to_string()),
            Value::Bool(b) => out.push_str(&b.to_string()),
            Value::Tuple(vs) => {
                out.push('(');
                for (i, w) in vs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.show_into(w, visiting, out);
                }
                out.push(')');
            }
            Value::Closure(_) => out.push_str("<fun>"),
            Value::Opaque(x) => out.push_str(x),
            Value::Loc(l) => {
                let b = &self.heap[*l];
                if !visiting.insert(*l) {
                    out.push_str(&format!("<{} #{l}>", b.tag));
                    return;
                }
                out.push_str(&b.tag);
                if !b.fields.is_empty() {
                    out.push_str(" { ");
                    for (i, (f, w)) in b.fields.iter().enumerate() {
                        if i > 0 {
                            out.push_str("; ");
                        }
                        out.push_str(f);
                        out.push_str(" = ");
                        self.show_into(w, visiting, out);
                    }
                    out.push_str(" }");
                }
                visiting.remove(l);
            }
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Alloc { loc, tag } => write!(f, "alloc #{loc} {tag}"),
            Event::Read { loc, field } => write!(f, "read #{loc}.{field}"),
            Event::Write { loc, field } => write!(f, "write #{loc}.{field}"),
            Event::Retag { loc, from, to } => write!(f, "retag #{loc} {from} -> {to}"),
            Event::Give { child, parent } => write!(f, "give #{child} to #{parent}"),
            Event::Take { child, parent } => write!(f, "take #{child} from #{parent}"),
        }
    }
}

/// Runs `f` on a thread with a stack large enough for deep recursion.
pub fn with_big_stack<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    std::thread::Builder::new()
        .stack_size(1 << 30)
        .spawn(f)
        .expect("spawn evaluator thread")
        .join()
        .expect("evaluator thread panicked")
}
