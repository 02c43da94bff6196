//! Typing of internal expressions. Expressions are first put in
//! administrative normal form; checking then threads the current permission
//! through a continuation, so each branch of a `match` or `if` checks the
//! rest of the code on its own.

use crate::permissions::{Ctx, Failure, PermEnv};
use crate::syntax::*;
use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Clone, Debug, PartialEq)]
pub struct TypeError {
    pub rule: &'static str,
    pub span: Span,
    pub missing: String,
    pub residual: Vec<String>,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: missing permission: {}", self.rule, self.missing)
    }
}

impl std::error::Error for TypeError {}

fn err(rule: &'static str, span: Span, missing: impl Into<String>, env: &PermEnv) -> TypeError {
    TypeError { rule, span, missing: missing.into(), residual: env.render() }
}

fn from_failure(rule: &'static str, span: Span, f: Failure) -> TypeError {
    TypeError { rule, span, missing: f.goal, residual: f.residual }
}

/// The current permission at one program point.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub function: Name,
    pub line: u32,
    /// Taken after the instruction on `line` rather than before it.
    pub after: bool,
    pub atoms: Vec<String>,
}

impl fmt::Display for Snapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let when = if self.after { "after" } else { "before" };
        writeln!(f, "== {}:{} {when}", self.function, self.line)?;
        for a in &self.atoms {
            writeln!(f, "{a}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Normalization

/// Names every intermediate result and flattens deep patterns, so that
/// every operand of a rule is a variable.
pub fn normalize(e: &Expr, supply: &NameSupply) -> Expr {
    Normalizer { supply }.norm(e)
}

struct Normalizer<'a> {
    supply: &'a NameSupply,
}

fn temp_base(e: &Expr) -> &str {
    use ExprKind as E;
    match &e.kind {
        E::Read(_, f) => f,
        E::Int(_) => "n",
        E::Bool(_) => "b",
        E::Tuple(es) if es.is_empty() => "unit",
        E::Tuple(_) => "tup",
        E::Construct(..) => "obj",
        E::Fun(_) => "fun",
        E::Apply(..) => "res",
        _ => "tmp",
    }
}

impl Normalizer<'_> {
    fn norm(&self, e: &Expr) -> Expr {
        use ExprKind as E;
        let sp = e.span;
        let mk = |k| Expr::new(k, sp);
        match &e.kind {
            E::Var(_) | E::Int(_) | E::Bool(_) | E::Fail => e.clone(),
            E::Let(p, a, b) => {
                let a = self.norm(a);
                let b = self.norm(b);
                self.flatten_let(p, a, b, sp)
            }
            E::Fun(f) => mk(E::Fun(Box::new(Function { body: self.norm(&f.body), ..(**f).clone() }))),
            E::TypeApp(x, t, k) => self.atomize(x, &|v| mk(E::TypeApp(Box::new(v), t.clone(), k.clone()))),
            E::Annot(x, t) => self.atomize(x, &|v| mk(E::Annot(Box::new(v), t.clone()))),
            E::Apply(f, a) => self.atomize(f, &|fv| {
                self.atomize(a, &|av| mk(E::Apply(Box::new(fv.clone()), Box::new(av))))
            }),
            E::Tuple(es) => self.atomize_all(es, &|vs| mk(E::Tuple(vs))),
            E::Construct(c, fs, adopts) => {
                let es: Vec<Expr> = fs.iter().map(|(_, x)| x.clone()).collect();
                self.atomize_all(&es, &|vs| {
                    let fs = fs.iter().map(|(f, _)| f.clone()).zip(vs).collect();
                    mk(E::Construct(c.clone(), fs, adopts.clone()))
                })
            }
            E::Match(s, arms) => self.atomize(s, &|v| {
                let arms = arms.iter().map(|(p, a)| self.shallow_arm(p, self.norm(a))).collect();
                mk(E::Match(Box::new(v), arms))
            }),
            E::If(c, a, b) => {
                let (a, b) = (self.norm(a), self.norm(b));
                self.atomize(c, &|v| mk(E::If(Box::new(v), Box::new(a.clone()), Box::new(b.clone()))))
            }
            E::Read(x, f) => self.atomize(x, &|v| mk(E::Read(Box::new(v), f.clone()))),
            E::Write(x, f, y) => self.atomize(x, &|xv| {
                self.atomize(y, &|yv| mk(E::Write(Box::new(xv.clone()), f.clone(), Box::new(yv))))
            }),
            E::WriteTag(x, c) => self.atomize(x, &|v| mk(E::WriteTag(Box::new(v), c.clone()))),
            E::Give(a, b) => self.atomize(a, &|av| {
                self.atomize(b, &|bv| mk(E::Give(Box::new(av.clone()), Box::new(bv))))
            }),
            E::Take(a, b) => self.atomize(a, &|av| {
                self.atomize(b, &|bv| mk(E::Take(Box::new(av.clone()), Box::new(bv))))
            }),
            E::Prim(op, a, b) => self.atomize(a, &|av| {
                self.atomize(b, &|bv| mk(E::Prim(*op, Box::new(av.clone()), Box::new(bv))))
            }),
            E::Taking(p, b, body) => mk(E::Taking(
                Box::new(self.norm(p)),
                Box::new(self.norm(b)),
                Box::new(self.norm(body)),
            )),
        }
    }

    fn atomize(&self, e: &Expr, k: &dyn Fn(Expr) -> Expr) -> Expr {
        if let ExprKind::Var(_) = e.kind {
            return k(e.clone());
        }
        let x = self.supply.fresh(temp_base(e));
        let rest = k(Expr::var(&x, e.span));
        Expr::new(ExprKind::Let(Pattern::Var(x), Box::new(self.norm(e)), Box::new(rest)), e.span)
    }

    fn atomize_all(&self, es: &[Expr], k: &dyn Fn(Vec<Expr>) -> Expr) -> Expr {
        match es.split_first() {
            None => k(Vec::new()),
            Some((first, rest)) => self.atomize(first, &|v| {
                self.atomize_all(rest, &|mut vs| {
                    vs.insert(0, v.clone());
                    k(vs)
                })
            }),
        }
    }

    /// Replaces nested sub-patterns by fresh variables, returning the
    /// shallow pattern and the deferred bindings.
    fn split_pattern(&self, p: &Pattern) -> (Pattern, Vec<(Pattern, Name)>) {
        let mut later = Vec::new();
        let mut sub = |q: &Pattern| match q {
            Pattern::Var(_) => q.clone(),
            _ => {
                let x = self.supply.fresh("pat");
                later.push((q.clone(), x.clone()));
                Pattern::Var(x)
            }
        };
        let shallow = match p {
            Pattern::Var(_) => p.clone(),
            Pattern::Tuple(ps) => Pattern::Tuple(ps.iter().map(&mut sub).collect()),
            Pattern::Construct(c, fs) => {
                Pattern::Construct(c.clone(), fs.iter().map(|(f, q)| (f.clone(), sub(q))).collect())
            }
        };
        (shallow, later)
    }

    fn wrap_later(&self, later: Vec<(Pattern, Name)>, body: Expr, sp: Span) -> Expr {
        later.into_iter().rev().fold(body, |acc, (q, x)| self.flatten_let(&q, Expr::var(&x, sp), acc, sp))
    }

    fn flatten_let(&self, p: &Pattern, a: Expr, b: Expr, sp: Span) -> Expr {
        let (shallow, later) = self.split_pattern(p);
        let b = self.wrap_later(later, b, sp);
        Expr::new(ExprKind::Let(shallow, Box::new(a), Box::new(b)), sp)
    }

    fn shallow_arm(&self, p: &Pattern, body: Expr) -> (Pattern, Expr) {
        let (shallow, later) = self.split_pattern(p);
        let sp = body.span;
        (shallow, self.wrap_later(later, body, sp))
    }
}

// ---------------------------------------------------------------------------
// Checking

#[derive(Clone, Debug, Default)]
struct Scope {
    vars: BTreeMap<Name, Name>,
    types: BTreeMap<Name, TypeExpr>,
    label: Name,
}

type K<'k> = &'k dyn Fn(PermEnv, Name) -> Result<(), TypeError>;

pub struct Checker<'a> {
    pub ctx: Ctx<'a>,
    hidden: BTreeSet<Name>,
    recording: Cell<bool>,
    snapshots: RefCell<Vec<Snapshot>>,
    seen: RefCell<BTreeSet<(Name, u32, bool)>>,
}

impl<'a> Checker<'a> {
    pub fn new(ctx: Ctx<'a>) -> Self {
        Checker {
            ctx,
            hidden: BTreeSet::new(),
            recording: Cell::new(true),
            snapshots: RefCell::new(Vec::new()),
            seen: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn snapshots(&self) -> Vec<Snapshot> {
        self.snapshots.borrow().clone()
    }

    fn snap(&self, env: &PermEnv, sc: &Scope, line: u32, after: bool) {
        if !self.recording.get() || env.inconsistent {
            return;
        }
        let key = (sc.label.clone(), line, after);
        if !self.seen.borrow_mut().insert(key) {
            return;
        }
        let atoms = self.visible_atoms(env);
        self.snapshots.borrow_mut().push(Snapshot { function: sc.label.clone(), line, after, atoms });
    }

    /// The atoms shown to the user: those reachable from source names,
    /// with single-use duplicable field referents inlined and redundant
    /// `dynamic` atoms hidden.
    pub fn visible_atoms(&self, env: &PermEnv) -> Vec<String> {
        let listing: Vec<(Name, TypeExpr)> =
            env.listing().into_iter().filter(|(x, _)| !self.hidden.contains(x)).collect();
        let mut by_subject: BTreeMap<Name, Vec<TypeExpr>> = BTreeMap::new();
        for (x, t) in &listing {
            by_subject.entry(x.clone()).or_default().push(t.clone());
        }
        let mut refs: BTreeMap<Name, usize> = BTreeMap::new();
        for (_, t) in &listing {
            count_singletons(t, &mut refs);
        }
        let inline: BTreeMap<Name, TypeExpr> = by_subject
            .iter()
            .filter(|(y, ts)| {
                is_generated(y)
                    && refs.get(*y) == Some(&1)
                    && ts.len() == 1
                    && env.is_duplicable(&self.ctx, &ts[0])
            })
            .map(|(y, ts)| (y.clone(), ts[0].clone()))
            .collect();
        let shown: BTreeMap<Name, Vec<TypeExpr>> = by_subject
            .into_iter()
            .filter(|(x, _)| !inline.contains_key(x))
            .map(|(x, ts)| (x, ts.iter().map(|t| inline_singletons(t, &inline)).collect()))
            .collect();
        let mut reach: BTreeSet<Name> = shown.keys().filter(|x| !is_generated(x)).cloned().collect();
        let mut todo: Vec<Name> = reach.iter().cloned().collect();
        while let Some(x) = todo.pop() {
            let mut found = BTreeMap::new();
            for t in shown.get(&x).into_iter().flatten() {
                count_singletons(t, &mut found);
            }
            for y in found.into_keys() {
                if reach.insert(y.clone()) {
                    todo.push(y);
                }
            }
        }
        let mut out = Vec::new();
        for (x, ts) in &shown {
            if !reach.contains(x) {
                continue;
            }
            let others = ts.iter().any(|t| *t != T::Dynamic);
            for t in ts {
                if *t == T::Dynamic && others {
                    continue;
                }
                out.push(format!("{x} @ {t}"));
            }
        }
        out.sort();
        out
    }

    fn lookup(&self, sc: &Scope, x: &str, span: Span, env: &PermEnv) -> Result<Name, TypeError> {
        sc.vars.get(x).cloned().ok_or_else(|| err("Var", span, format!("{x} is unbound"), env))
    }

    fn ty(&self, sc: &Scope, t: &TypeExpr) -> TypeExpr {
        let mut map: BTreeMap<Name, TypeExpr> =
            sc.vars.iter().filter(|(k, v)| k != v).map(|(k, v)| (k.clone(), T::Var(v.clone()))).collect();
        map.extend(sc.types.iter().map(|(k, v)| (k.clone(), v.clone())));
        map.retain(|k, v| *v != T::Var(k.clone()));
        if map.is_empty() {
            t.clone()
        } else {
            subst_many(t, &map)
        }
    }

    fn fresh_name(&self, env: &PermEnv, sc: &Scope, x: &str) -> Name {
        if env.is_known(x) || sc.types.contains_key(x) {
            self.ctx.supply.fresh(x)
        } else {
            x.to_string()
        }
    }

    fn value(&self, mut env: PermEnv, base: &str, t: TypeExpr, k: K) -> Result<(), TypeError> {
        let n = self.ctx.supply.fresh(base);
        env.introduce(&n);
        env.add(&self.ctx, &n, &t);
        k(env, n)
    }

    fn unit(&self, env: PermEnv, k: K) -> Result<(), TypeError> {
        self.value(env, "unit", T::unit(), k)
    }

    /// Checks the whole program, which must already be desugared.
    pub fn check_program(&mut self, program: &Program) -> Result<(), TypeError> {
        for item in &program.items {
            match item {
                Item::Value(v) if matches!(v.body.kind, ExprKind::Fun(_)) => {
                    self.hidden.insert(v.name.clone());
                }
                Item::Decl(x, t, _) if matches!(t, T::Forall(..) | T::InternalArrow(..)) => {
                    self.hidden.insert(x.clone());
                }
                _ => {}
            }
        }
        let items: Vec<Item> = program
            .items
            .iter()
            .map(|i| match i {
                Item::Value(v) => Item::Value(ValueDef { body: normalize(&v.body, self.ctx.supply), ..v.clone() }),
                other => other.clone(),
            })
            .collect();
        let sc = Scope { label: "<top>".into(), ..Scope::default() };
        self.check_items(PermEnv::new(), &sc, &items)
    }

    fn check_items(&self, mut env: PermEnv, sc: &Scope, items: &[Item]) -> Result<(), TypeError> {
        let Some((item, rest)) = items.split_first() else { return Ok(()) };
        match item {
            Item::Value(v) => {
                let label = if v.name == "_" { sc.label.clone() } else { v.name.clone() };
                let body_sc = Scope { label, ..sc.clone() };
                self.check(env, &body_sc, &v.body, &|mut env, n| {
                    let mut sc2 = sc.clone();
                    if v.name != "_" {
                        let x = self.fresh_name(&env, sc, &v.name);
                        env.merge(&self.ctx, &x, &n);
                        sc2.vars.insert(v.name.clone(), x);
                    }
                    self.check_items(env, &sc2, rest)
                })
            }
            Item::Decl(x, t, _) => {
                let t = self.ty(sc, t);
                let mut sc2 = sc.clone();
                let name = self.fresh_name(&env, sc, x);
                env.introduce(&name);
                env.add(&self.ctx, &name, &t);
                sc2.vars.insert(x.clone(), name);
                self.check_items(env, &sc2, rest)
            }
            _ => self.check_items(env, sc, rest),
        }
    }

    fn check(&self, env: PermEnv, sc: &Scope, e: &Expr, k: K) -> Result<(), TypeError> {
        use ExprKind as E;
        if env.inconsistent {
            return Ok(());
        }
        self.snap(&env, sc, e.span.line, false);
        let sp = e.span;
        let ctx = &self.ctx;
        match &e.kind {
            E::Var(x) => {
                let v = self.lookup(sc, x, sp, &env)?;
                k(env, v)
            }
            E::Int(_) => self.value(env, "n", T::app("int", vec![]), k),
            E::Bool(_) => self.value(env, "b", T::app("bool", vec![]), k),
            E::Fail => Ok(()),
            E::Tuple(es) => self.check_all(env, sc, es, Vec::new(), &|env, vs| {
                let base = if vs.is_empty() { "unit" } else { "tup" };
                self.value(env, base, T::Tuple(vs.iter().map(|v| T::singleton(v)).collect()), k)
            }),
            E::Construct(c, fs, adopts) => {
                let Some(def) = ctx.defs.owner(c) else {
                    return Err(err("New", sp, format!("unknown constructor {c}"), &env));
                };
                let branch = def.branch(c).expect("owner has branch");
                let given: BTreeSet<&Name> = fs.iter().map(|(f, _)| f).collect();
                let want: BTreeSet<&Name> = branch.fields.iter().map(|(f, _)| f).collect();
                if given != want || given.len() != fs.len() {
                    return Err(err("New", sp, format!("fields of {c}"), &env));
                }
                let es: Vec<Expr> = fs.iter().map(|(_, x)| x.clone()).collect();
                let adopts = adopts.as_ref().map(|t| self.ty(sc, t)).unwrap_or_else(T::bottom);
                self.check_all(env, sc, &es, Vec::new(), &|env, vs| {
                    let by_name: BTreeMap<&Name, &Name> = fs.iter().map(|(f, _)| f).zip(vs.iter()).collect();
                    let fields = branch.fields.iter().map(|(f, _)| (f.clone(), T::singleton(by_name[f]))).collect();
                    let s = StructuralType { ctor: c.clone(), fields, adopts: Box::new(adopts.clone()) };
                    self.value(env, "obj", T::Structural(s), k)
                })
            }
            E::Let(p, a, b) => self.check(env, sc, a, &|env, v| {
                match self.bind_pattern(env, sc, p, &v, sp, false)? {
                    Some((env, sc2)) => self.check(env, &sc2, b, k),
                    None => Ok(()),
                }
            }),
            E::Fun(f) => {
                let (env, n) = self.check_function(env, sc, f, sp)?;
                k(env, n)
            }
            E::TypeApp(x, t, kind) => self.check(env, sc, x, &|env, v| {
                let t = self.ty(sc, t);
                let inst = env.atoms_of(&v).iter().find_map(|a| match a {
                    T::Forall(b, k2, body) if k2 == kind => Some(substitute(body, &t, b)),
                    _ => None,
                });
                match inst {
                    Some(body) => self.value(env, "inst", body, k),
                    None => Err(err("Instantiation", sp, format!("{v} @ [_: {kind}] _"), &env)),
                }
            }),
            E::Apply(f, a) => self.check(env, sc, f, &|env, fv| {
                self.check(env, sc, a, &|env, av| self.apply(env, sc, &fv, &av, sp, k))
            }),
            E::Match(s, arms) => self.check(env, sc, s, &|env, v| {
                for (p, body) in arms {
                    if let Some((env2, sc2)) = self.bind_pattern(env.clone(), sc, p, &v, sp, true)? {
                        self.check(env2, &sc2, body, k)?;
                    }
                }
                Ok(())
            }),
            E::If(c, a, b) => self.check(env, sc, c, &|env, v| {
                let env = env
                    .subsume_atom(ctx, &v, &T::app("bool", vec![]))
                    .map_err(|f| from_failure("If", sp, f))?;
                self.check(env.clone(), sc, a, k)?;
                self.check(env, sc, b, k)
            }),
            E::Read(x, f) => self.check(env, sc, x, &|env, v| {
                let env = self.unfold_single(env, &v);
                let Some(s) = env.structural(&v) else {
                    return Err(err("Read", sp, format!("{} @ {{ {f} }}", env.find(&v)), &env));
                };
                match s.fields.iter().find(|(g, _)| g == f) {
                    Some((_, T::Singleton(y))) => {
                        let y = y.clone();
                        k(env, y)
                    }
                    _ => Err(err("Read", sp, format!("{} @ {} {{ {f} }}", env.find(&v), s.ctor), &env)),
                }
            }),
            E::Write(x, f, y) => self.check(env, sc, x, &|env, v| {
                self.check(env, sc, y, &|env, w| {
                    let mut env = self.unfold_single(env, &v);
                    let s = match env.structural(&v) {
                        Some(s) if ctx.defs.is_mutable_ctor(&s.ctor) && s.fields.iter().any(|(g, _)| g == f) => s.clone(),
                        other => {
                            let have = other.map(|s| s.ctor.clone()).unwrap_or_else(|| "?".into());
                            return Err(err("Write", sp, format!("{} @ mutable {have} {{ {f} }}", env.find(&v)), &env));
                        }
                    };
                    let mut s2 = s.clone();
                    for (g, t) in s2.fields.iter_mut() {
                        if g == f {
                            *t = T::singleton(&w);
                        }
                    }
                    env.remove_atom(&v, &T::Structural(s));
                    env.add(ctx, &v, &T::Structural(s2));
                    self.unit(env, k)
                })
            }),
            E::WriteTag(x, c) => self.check(env, sc, x, &|env, v| {
                let mut env = self.unfold_single(env, &v);
                let s = match env.structural(&v) {
                    Some(s) if ctx.defs.is_mutable_ctor(&s.ctor) => s.clone(),
                    _ => return Err(err("WriteTag", sp, format!("{} @ mutable block", env.find(&v)), &env)),
                };
                let target = ctx.defs.owner(c).and_then(|d| d.branch(c));
                let Some(target) = target.filter(|b| b.fields.len() == s.fields.len()) else {
                    return Err(err("WriteTag", sp, format!("{c} with {} fields", s.fields.len()), &env));
                };
                let fields = target.fields.iter().zip(&s.fields).map(|((g, _), (_, t))| (g.clone(), t.clone())).collect();
                let s2 = StructuralType { ctor: c.clone(), fields, adopts: s.adopts.clone() };
                env.remove_atom(&v, &T::Structural(s));
                env.add(ctx, &v, &T::Structural(s2));
                self.unit(env, k)
            }),
            E::Give(a, b) => self.check(env, sc, a, &|env, x| {
                self.check(env, sc, b, &|env, y| {
                    let Some(t) = self.adopts_of(&env, &y) else {
                        return Err(err("Give", sp, format!("{} @ _ adopts _", env.find(&y)), &env));
                    };
                    if !env.is_exclusive(ctx, &t) {
                        return Err(err("Give", sp, format!("exclusive {t}"), &env));
                    }
                    let env = env.subsume_atom(ctx, &x, &t).map_err(|f| from_failure("Give", sp, f))?;
                    self.unit(env, k)
                })
            }),
            E::Take(a, b) => self.check(env, sc, a, &|env, x| {
                self.check(env, sc, b, &|env, y| {
                    let Some(t) = self.adopts_of(&env, &y) else {
                        return Err(err("Take", sp, format!("{} @ _ adopts _", env.find(&y)), &env));
                    };
                    let mut env = env.subsume_atom(ctx, &x, &T::Dynamic).map_err(|f| from_failure("Take", sp, f))?;
                    env.add(ctx, &x, &t);
                    self.unit(env, k)
                })
            }),
            E::Prim(op, a, b) => self.check(env, sc, a, &|env, x| {
                self.check(env, sc, b, &|env, y| {
                    let int = T::app("int", vec![]);
                    let env = if op.is_physical() {
                        env
                    } else {
                        env.subsume_goals(ctx, vec![
                            crate::permissions::Goal::Atom(x.clone(), int.clone()),
                            crate::permissions::Goal::Atom(y.clone(), int.clone()),
                        ])
                        .map_err(|f| from_failure("Prim", sp, f))?
                    };
                    let out = if op.is_arith() { int } else { T::app("bool", vec![]) };
                    self.value(env, if op.is_arith() { "n" } else { "b" }, out, k)
                })
            }),
            E::Annot(x, t) => self.check(env, sc, x, &|env, v| {
                let t = self.ty(sc, t);
                let mut env = env.subsume_atom(ctx, &v, &t).map_err(|f| from_failure("Sub", sp, f))?;
                env.add(ctx, &v, &t);
                k(env, v)
            }),
            E::Taking(..) => Err(err("Taking", sp, "desugared program", &env)),
        }
    }

    fn check_all(&self, env: PermEnv, sc: &Scope, es: &[Expr], acc: Vec<Name>, k: &dyn Fn(PermEnv, Vec<Name>) -> Result<(), TypeError>) -> Result<(), TypeError> {
        match es.split_first() {
            None => k(env, acc),
            Some((e, rest)) => self.check(env, sc, e, &|env, v| {
                let mut acc = acc.clone();
                acc.push(v);
                self.check_all(env, sc, rest, acc, k)
            }),
        }
    }

    fn apply(&self, env: PermEnv, sc: &Scope, fv: &str, av: &str, sp: Span, k: K) -> Result<(), TypeError> {
        let ctx = &self.ctx;
        let candidates: Vec<TypeExpr> = env
            .atoms_of(fv)
            .iter()
            .filter(|t| matches!(t, T::Forall(..) | T::InternalArrow(..)))
            .cloned()
            .collect();
        if candidates.is_empty() {
            return Err(err("Application", sp, format!("{} @ _ -> _", env.find(fv)), &env));
        }
        let mut first = None;
        for t in candidates {
            let mut e2 = env.clone();
            let mut cur = t;
            let mut flexes = Vec::new();
            while let T::Forall(b, kind, body) = cur {
                let f = ctx.supply.fresh(&b);
                e2.new_flex(&f, kind);
                flexes.push(f.clone());
                cur = substitute(&body, &T::Var(f), &b);
            }
            let T::InternalArrow(dom, cod) = cur else { continue };
            match e2.subsume_atom(ctx, av, &dom) {
                Ok(mut e3) => {
                    let unsolved = e3.unsolved_flex_in(&cod);
                    if let Some(u) = unsolved.first() {
                        return Err(err("UnsolvedFlexible", sp, format!("{} in {}", base_name(u), e3.canon(&cod)), &e3));
                    }
                    let r = ctx.supply.fresh("res");
                    e3.introduce(&r);
                    e3.add(ctx, &r, &cod);
                    self.snap(&e3, sc, sp.line, true);
                    return k(e3, r);
                }
                Err(f) => {
                    first.get_or_insert(f);
                }
            }
        }
        Err(from_failure("Application", sp, first.unwrap_or_default()))
    }

    /// Replaces a one-branch nominal atom by its structural unfolding.
    fn unfold_single(&self, mut env: PermEnv, v: &str) -> PermEnv {
        if env.structural(v).is_some() {
            return env;
        }
        let found = env.atoms_of(v).iter().find_map(|a| match a {
            T::App(d, args) => {
                let def = self.ctx.defs.types.get(d)?;
                if def.branches.len() != 1 {
                    return None;
                }
                Some((a.clone(), self.ctx.defs.unfold(d, args, &def.branches[0].ctor)?))
            }
            _ => None,
        });
        if let Some((old, s)) = found {
            env.remove_atom(v, &old);
            env.add(&self.ctx, v, &T::Structural(s));
        }
        env
    }

    /// The adopts clause of an exclusive permission held for `y`.
    fn adopts_of(&self, env: &PermEnv, y: &str) -> Option<TypeExpr> {
        if let Some(s) = env.structural(y) {
            return (self.ctx.defs.is_mutable_ctor(&s.ctor) && !s.adopts.is_bottom()).then(|| (*s.adopts).clone());
        }
        env.atoms_of(y).iter().find_map(|a| match a {
            T::App(d, args) if self.ctx.defs.types.get(d).is_some_and(|def| def.mutable) => {
                self.ctx.defs.adopts_of(d, args).filter(|t| !t.is_bottom())
            }
            _ => None,
        })
    }

    /// Binds `p` to the value `v`. `None` means the pattern cannot match
    /// and the code under it is dead.
    fn bind_pattern(&self, mut env: PermEnv, sc: &Scope, p: &Pattern, v: &str, sp: Span, in_match: bool) -> Result<Option<(PermEnv, Scope)>, TypeError> {
        let ctx = &self.ctx;
        match p {
            Pattern::Var(x) => {
                let mut sc2 = sc.clone();
                if x != "_" {
                    let n = self.fresh_name(&env, sc, x);
                    env.introduce(&n);
                    env.merge(ctx, &n, v);
                    sc2.vars.insert(x.clone(), n);
                }
                Ok(Some((env, sc2)))
            }
            Pattern::Tuple(ps) => {
                let comps = match env.tuple(v) {
                    Some(c) if c.len() == ps.len() => c.clone(),
                    _ => {
                        let want = T::Tuple(vec![T::Unknown; ps.len()]);
                        return Err(err("Let", sp, format!("{} @ {want}", env.find(v)), &env));
                    }
                };
                self.bind_fields(env, sc, ps.iter().zip(comps.iter()), sp, in_match)
            }
            Pattern::Construct(c, fps) => {
                let rule = if in_match { "Match" } else { "Let" };
                if env.structural(v).is_none() {
                    let found = env.atoms_of(v).iter().find_map(|a| match a {
                        T::App(d, args) => {
                            let def = ctx.defs.types.get(d)?;
                            def.branch(c)?;
                            if !in_match && def.branches.len() != 1 {
                                return None;
                            }
                            Some((a.clone(), ctx.defs.unfold(d, args, c)?))
                        }
                        _ => None,
                    });
                    match found {
                        Some((old, s)) => {
                            env.remove_atom(v, &old);
                            env.add(ctx, v, &T::Structural(s));
                        }
                        None => return Err(err(rule, sp, format!("{} @ {c} {{ .. }}", env.find(v)), &env)),
                    }
                }
                if env.inconsistent {
                    return Ok(None);
                }
                let s = env.structural(v).expect("structural").clone();
                if s.ctor != *c {
                    return Ok(None);
                }
                let mut pairs = Vec::new();
                for (f, q) in fps {
                    match s.fields.iter().find(|(g, _)| g == f) {
                        Some((_, t)) => pairs.push((q, t.clone())),
                        None => return Err(err(rule, sp, format!("{} @ {c} {{ {f} }}", env.find(v)), &env)),
                    }
                }
                self.bind_fields(env, sc, pairs.iter().map(|(q, t)| (*q, t)), sp, in_match)
            }
        }
    }

    fn bind_fields<'p>(
        &self,
        env: PermEnv,
        sc: &Scope,
        pairs: impl Iterator<Item = (&'p Pattern, &'p TypeExpr)>,
        sp: Span,
        in_match: bool,
    ) -> Result<Option<(PermEnv, Scope)>, TypeError> {
        let mut state = (env, sc.clone());
        for (q, t) in pairs {
            let T::Singleton(y) = t else { continue };
            match self.bind_pattern(state.0, &state.1, q, y, sp, in_match)? {
                Some(s) => state = s,
                None => return Ok(None),
            }
        }
        Ok(Some(state))
    }

    fn check_function(&self, env: PermEnv, sc: &Scope, f: &Function, sp: Span) -> Result<(PermEnv, Name), TypeError> {
        let fty = self.ty(sc, &f.internal_type());
        let label = f.name.clone().unwrap_or_else(|| format!("{}/fun", sc.label));
        let inner = env.duplicable_part(&self.ctx);
        if let Err(e) = self.check_body(inner, sc, f, &label, &fty, sp) {
            let was = self.recording.replace(false);
            let with_all = self.check_body(env.clone(), sc, f, &label, &fty, sp);
            self.recording.set(was);
            if with_all.is_ok() {
                return Err(TypeError { rule: "Function", ..e });
            }
            return Err(e);
        }
        let mut env = env;
        let n = match &f.name {
            Some(x) => self.fresh_name(&env, sc, x),
            None => self.ctx.supply.fresh("fun"),
        };
        env.introduce(&n);
        env.add(&self.ctx, &n, &fty);
        Ok((env, n))
    }

    fn check_body(&self, mut env: PermEnv, sc: &Scope, f: &Function, label: &str, fty: &TypeExpr, sp: Span) -> Result<(), TypeError> {
        let mut sc2 = Scope { label: label.to_string(), ..sc.clone() };
        for (n, k) in &f.type_params {
            let clash = env.is_known(n)
                || sc.types.values().any(|t| t.mentions(n))
                || env.all_atoms().any(|(_, t)| t.mentions(n));
            let n2 = if clash { self.ctx.supply.fresh(n) } else { n.clone() };
            if *k == Kind::Term {
                env.introduce(&n2);
            }
            sc2.vars.remove(n);
            sc2.types.insert(n.clone(), T::Var(n2));
        }
        let arg = self.ty(&sc2, &f.arg);
        let ret = self.ty(&sc2, &f.ret);
        if f.recursive {
            if let Some(name) = &f.name {
                let own = self.fresh_name(&env, &sc2, name);
                env.introduce(&own);
                env.add(&self.ctx, &own, fty);
                sc2.vars.insert(name.clone(), own);
            }
        }
        if let Some(z) = &f.param {
            let zn = self.fresh_name(&env, &sc2, z);
            env.introduce(&zn);
            env.add(&self.ctx, &zn, &arg);
            sc2.vars.insert(z.clone(), zn);
        }
        self.check(env, &sc2, &f.body, &|env, v| {
            env.subsume_atom(&self.ctx, &v, &ret).map(|_| ()).map_err(|fl| from_failure("Sub/Return", sp, fl))
        })
    }
}

fn count_singletons(t: &TypeExpr, out: &mut BTreeMap<Name, usize>) {
    if let T::Singleton(y) = t {
        *out.entry(y.clone()).or_default() += 1;
    }
    t.for_each_child(&mut |c| count_singletons(c, out));
}

fn inline_singletons(t: &TypeExpr, map: &BTreeMap<Name, TypeExpr>) -> TypeExpr {
    match t {
        T::Singleton(y) => map.get(y).cloned().unwrap_or_else(|| t.clone()),
        _ => crate::desugar::map_children(t, &mut |c| inline_singletons(c, map)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{check_source, Options, PipelineError};
    use crate::parser::parse_expr;

    fn is_atom(e: &Expr) -> bool {
        matches!(e.kind, ExprKind::Var(_))
    }

    fn is_anf(e: &Expr) -> bool {
        use ExprKind as E;
        match &e.kind {
            E::Var(_) | E::Int(_) | E::Bool(_) | E::Fail => true,
            E::Let(p, a, b) => p.is_shallow() && is_anf(a) && is_anf(b),
            E::Fun(f) => is_anf(&f.body),
            E::TypeApp(x, ..) | E::Annot(x, _) | E::Read(x, _) | E::WriteTag(x, _) => is_atom(x),
            E::Apply(a, b) | E::Give(a, b) | E::Take(a, b) | E::Prim(_, a, b) | E::Write(a, _, b) => {
                is_atom(a) && is_atom(b)
            }
            E::Tuple(es) => es.iter().all(is_atom),
            E::Construct(_, fs, _) => fs.iter().all(|(_, x)| is_atom(x)),
            E::Match(s, arms) => is_atom(s) && arms.iter().all(|(p, a)| p.is_shallow() && is_anf(a)),
            E::If(c, a, b) => is_atom(c) && is_anf(a) && is_anf(b),
            E::Taking(p, b, body) => is_anf(p) && is_anf(b) && is_anf(body),
        }
    }

    #[test]
    fn normal_form_names_intermediate_results() {
        let supply = NameSupply::new(0);
        for src in [
            "f (g x, 1 + h y)",
            "let (a, Cons { head = (b, c); tail }) = e in a.x <- b.y",
            "match f x with | Cons { head = Some { value }; tail } -> value | Nil -> 0 end",
            "Cons { head = x.head; tail = if b then Nil else ys }",
            "give (f x) to (g y); take c from b.bag",
        ] {
            let out = normalize(&parse_expr(src).unwrap(), &supply);
            assert!(is_anf(&out), "{src}\n=> {out}");
        }
        let out = normalize(&parse_expr("f (g x)").unwrap(), &supply);
        let ExprKind::Let(Pattern::Var(t), _, _) = &out.kind else { panic!("{out}") };
        assert!(t.starts_with("res#"));
    }

    fn rule(src: &str) -> Option<String> {
        match check_source(src, &Options::default()) {
            Ok(_) => None,
            Err(PipelineError::Type(e)) => Some(e.rule.to_string()),
            Err(e) => panic!("{e}"),
        }
    }

    const LIST: &str = "data list a = Nil | Cons { head: a; tail: list a }\n";
    const MUT: &str = "data mutable t = A { x: int } | B { x: int; y: int } | C { x: int }\n";
    const GROUP: &str = "data mutable cell = Cell { v: int }\ndata mutable group = Group { size: int } adopts cell\n";

    #[test]
    fn reads_need_a_structural_or_unfoldable_permission() {
        assert_eq!(rule(&format!("{LIST}val f (x: Cons {{ head: int; tail: list int }}) : int = x.head")), None);
        assert_eq!(rule("val f (x: ref int) : int = x.contents"), None);
        assert_eq!(rule(&format!("{LIST}val f (x: list int) : int = x.head")), Some("Read".into()));
    }

    #[test]
    fn writes_update_the_field_type() {
        assert_eq!(rule("val f (consumes x: ref int) : ref bool = x.contents <- true; x"), None);
        assert_eq!(rule("val f (x: ref int) : () = x.contents <- true"), Some("Sub/Return".into()));
    }

    #[test]
    fn tag_updates_keep_the_arity() {
        assert_eq!(rule(&format!("{MUT}val f (consumes v: t) : t = match v with | A -> tag of v <- C; v | _ -> v end")), None);
        assert_eq!(rule(&format!("{MUT}val f (consumes v: t) : () = match v with | A -> tag of v <- B | _ -> () end")), Some("WriteTag".into()));
    }

    #[test]
    fn match_refines_and_skips_dead_arms() {
        let src = format!("{LIST}val f (xs: list int) : int = match xs with | Nil -> 0 | Cons {{ head }} -> head end");
        assert_eq!(rule(&src), None);
        let src = format!("{LIST}val f (xs: Nil) : int = match xs with | Nil -> 0 | Cons {{ head }} -> head.x end");
        assert_eq!(rule(&src), None);
    }

    #[test]
    fn adoption_rules() {
        let ok = format!("{GROUP}val f (g: group) : () = let c = Cell {{ v = 1 }} in give c to g; take c from g; c.v <- 2");
        assert_eq!(rule(&ok), None);
        let twice = format!("{GROUP}val f (g: group, consumes c: cell) : () = give c to g; give c to g");
        assert_eq!(rule(&twice), Some("Give".into()));
        let from_ref = "val f (c: dynamic, r: ref int) : () = take c from r";
        assert_eq!(rule(from_ref), Some("Take".into()));
    }

    #[test]
    fn instantiation_is_inferred() {
        let src = format!(
            "{LIST}val id [a] (consumes x: a) : a = x\nval main = let l = Cons {{ head = 1; tail = Nil }} in id l"
        );
        assert_eq!(rule(&src), None);
        let src = "val make [a] () : option a = None\nval main = make ()";
        assert_eq!(rule(src), Some("UnsolvedFlexible".into()));
        assert_eq!(rule("val make [a] () : option a = None\nval main = make [int] ()"), None);
    }

    #[test]
    fn closures_capture_only_duplicable_permissions() {
        assert_eq!(rule("val main = let n = 1 in let f = fun () : int = n in f ()"), None);
        let src = "val main = let r = Ref { contents = 1 } in let f = fun () : int = r.contents in f ()";
        assert_eq!(rule(src), Some("Function".into()));
    }

    #[test]
    fn snapshots_follow_the_program() {
        let src = "val f (consumes x: ref int) : ref bool =\n  x.contents <- true;\n  x\n";
        let (_, report) = check_source(src, &Options::default()).unwrap();
        assert_eq!(report.at("f", 2, false).unwrap().atoms, vec!["x @ ref int"]);
        assert_eq!(report.at("f", 3, false).unwrap().atoms, vec!["x @ Ref { contents: bool }"]);
    }
}
