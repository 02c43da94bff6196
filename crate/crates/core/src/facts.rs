//! Modes, facts, and the fixed-point fact inference over data types.
//!
//! A fact maps each mode `m` to a hypothesis under which the type has mode
//! `m`. A hypothesis is either `False` or a conjunction with one clause per
//! parameter; the clause `m α` means that `α` has mode at most `m`, so the
//! clause `affine α` is trivially satisfied.

use crate::syntax::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub fn mode_leq(a: Mode, b: Mode) -> bool {
    a == b || a == Mode::Bottom || b == Mode::Affine
}

pub fn mode_join(a: Mode, b: Mode) -> Mode {
    if mode_leq(a, b) {
        b
    } else if mode_leq(b, a) {
        a
    } else {
        Mode::Affine
    }
}

pub fn mode_meet(a: Mode, b: Mode) -> Mode {
    if mode_leq(a, b) {
        a
    } else if mode_leq(b, a) {
        b
    } else {
        Mode::Bottom
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Hyp {
    False,
    Conj(Vec<Mode>),
}

impl Hyp {
    pub fn truth(arity: usize) -> Hyp {
        Hyp::Conj(vec![Mode::Affine; arity])
    }

    pub fn and(&self, other: &Hyp) -> Hyp {
        match (self, other) {
            (Hyp::Conj(a), Hyp::Conj(b)) => {
                Hyp::Conj(a.iter().zip(b).map(|(x, y)| mode_meet(*x, *y)).collect())
            }
            _ => Hyp::False,
        }
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Hyp::False)
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Hyp::Conj(v) if v.iter().all(|m| *m == Mode::Affine))
    }

    /// Does `self` entail `other`?
    pub fn entails(&self, other: &Hyp) -> bool {
        match (self, other) {
            (Hyp::False, _) => true,
            (_, Hyp::False) => false,
            (Hyp::Conj(a), Hyp::Conj(b)) => a.iter().zip(b).all(|(x, y)| mode_leq(*x, *y)),
        }
    }

    /// Evaluates the hypothesis under an assignment of modes to parameters.
    pub fn holds(&self, modes: &[Mode]) -> bool {
        match self {
            Hyp::False => false,
            Hyp::Conj(v) => v.iter().zip(modes).all(|(bound, actual)| mode_leq(*actual, *bound)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fact {
    pub arity: usize,
    /// Indexed by `Mode::index`.
    pub hyps: [Hyp; 4],
}

impl Fact {
    pub fn constant(arity: usize, m: Mode) -> Fact {
        let h = |m2: Mode| if mode_leq(m, m2) { Hyp::truth(arity) } else { Hyp::False };
        Fact { arity, hyps: Mode::ALL.map(h) }
    }

    pub fn top(arity: usize) -> Fact {
        Fact::constant(arity, Mode::Affine)
    }

    pub fn parameter(arity: usize, i: usize) -> Fact {
        let h = |m: Mode| {
            let mut v = vec![Mode::Affine; arity];
            v[i] = m;
            Hyp::Conj(v)
        };
        Fact { arity, hyps: Mode::ALL.map(h) }
    }

    pub fn hyp(&self, m: Mode) -> &Hyp {
        &self.hyps[m.index()]
    }

    /// Returns the mode `m` if this fact is exactly `constant(m)`.
    pub fn as_constant(&self) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| *self == Fact::constant(self.arity, *m))
    }

    pub fn join(&self, other: &Fact) -> Fact {
        Fact {
            arity: self.arity,
            hyps: std::array::from_fn(|i| self.hyps[i].and(&other.hyps[i])),
        }
    }

    /// Meet with a constant fact. Only defined when `c` is constant.
    pub fn meet_constant(c: &Fact, f: &Fact) -> Result<Fact, FactError> {
        if c.as_constant().is_none() {
            return Err(FactError::MeetUndefined);
        }
        Ok(Fact {
            arity: f.arity,
            hyps: std::array::from_fn(|i| {
                if c.hyps[i].is_false() {
                    f.hyps[i].clone()
                } else {
                    Hyp::truth(f.arity)
                }
            }),
        })
    }

    /// Substitutes, in every clause `m α_i`, the hypothesis under which
    /// `args[i]` has mode `m`.
    pub fn compose(&self, args: &[Fact]) -> Fact {
        let arity = args.first().map_or(0, |a| a.arity);
        self.compose_at(args, arity)
    }

    pub fn compose_at(&self, args: &[Fact], arity: usize) -> Fact {
        let hyps = std::array::from_fn(|i| match &self.hyps[i] {
            Hyp::False => Hyp::False,
            Hyp::Conj(bounds) => {
                let mut acc = Hyp::truth(arity);
                for (bound, arg) in bounds.iter().zip(args) {
                    if *bound != Mode::Affine {
                        acc = acc.and(arg.hyp(*bound));
                    }
                }
                acc
            }
        });
        Fact { arity, hyps }
    }

    /// The least mode whose hypothesis holds under `modes`.
    pub fn mode_under(&self, modes: &[Mode]) -> Mode {
        Mode::ALL
            .into_iter()
            .find(|m| self.hyp(*m).holds(modes))
            .unwrap_or(Mode::Affine)
    }

    /// Lattice order: `self ≤ other` when `self` is at least as precise.
    pub fn leq(&self, other: &Fact) -> bool {
        (0..4).all(|i| other.hyps[i].entails(&self.hyps[i]))
    }

    /// Renders the fact in declaration syntax, e.g. `duplicable a => duplicable`.
    pub fn render(&self, params: &[Name]) -> String {
        let concl = [Mode::Bottom, Mode::Duplicable, Mode::Exclusive]
            .into_iter()
            .find(|m| !self.hyp(*m).is_false());
        let Some(m) = concl else { return "affine".to_string() };
        let mut parts = Vec::new();
        if let Hyp::Conj(bounds) = self.hyp(m) {
            for (i, b) in bounds.iter().enumerate() {
                if *b != Mode::Affine {
                    let p = params.get(i).cloned().unwrap_or_else(|| format!("_{i}"));
                    parts.push(format!("{b} {p}"));
                }
            }
        }
        parts.push(m.keyword().to_string());
        parts.join(" => ")
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<Name> = (0..self.arity).map(|i| format!("a{i}")).collect();
        f.write_str(&self.render(&params))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FactError {
    #[error("meet is only defined when one argument is a constant fact")]
    MeetUndefined,
    #[error("declared fact for `{name}` is `{declared}` but the definition gives `{inferred}`")]
    FactMismatch { name: Name, declared: String, inferred: String, span: Span },
    #[error("fact declared for unknown type `{0}`")]
    UnknownType(Name, Span),
}

/// Facts for every named type, plus which constructors are mutable.
#[derive(Clone, Debug, Default)]
pub struct FactEnv {
    pub types: BTreeMap<Name, Fact>,
    pub params: BTreeMap<Name, Vec<Name>>,
    pub mutable_ctors: BTreeSet<Name>,
}

/// Facts for the type variables in scope, over a fixed parameter vector.
pub type VarFacts = BTreeMap<Name, Fact>;

impl FactEnv {
    pub fn infer(&self, vars: &VarFacts, arity: usize, t: &TypeExpr) -> Fact {
        let dup = || Fact::constant(arity, Mode::Duplicable);
        match t {
            T::Var(n) => match vars.get(n) {
                Some(f) => f.clone(),
                None => match self.types.get(n) {
                    Some(f) if f.arity == 0 => f.compose_at(&[], arity),
                    _ => Fact::top(arity),
                },
            },
            T::App(h, args) => match self.types.get(h) {
                Some(f) => {
                    let fs: Vec<Fact> = args.iter().map(|a| self.infer(vars, arity, a)).collect();
                    f.compose_at(&fs, arity)
                }
                None => Fact::top(arity),
            },
            T::InternalArrow(..) | T::ExternalArrow(..) => dup(),
            T::Singleton(_) | T::Dynamic | T::EmptyPerm | T::Unknown => dup(),
            T::Tuple(ts) => self.concrete_dup(vars, arity, ts.iter()),
            T::Structural(s) => {
                if self.mutable_ctors.contains(&s.ctor) {
                    Fact::constant(arity, Mode::Exclusive)
                } else {
                    self.concrete_dup(vars, arity, s.fields.iter().map(|(_, t)| t))
                }
            }
            T::Forall(b, _, body) | T::Exists(b, _, body) => {
                let m = if matches!(t, T::Forall(..)) { Mode::Bottom } else { Mode::Affine };
                let mut inner = vars.clone();
                inner.insert(b.clone(), Fact::constant(arity, m));
                self.infer(&inner, arity, body)
            }
            T::Bar(a, p) => {
                let f1 = self.infer(vars, arity, a);
                let f2 = self.infer(vars, arity, p);
                let c = Fact::constant(arity, Mode::Exclusive);
                f1.join(&Fact::meet_constant(&c, &f2).expect("constant"))
            }
            T::Anchored(_, t) => {
                let mut f = self.infer(vars, arity, t);
                f.hyps[Mode::Exclusive.index()] = Hyp::False;
                f
            }
            T::Star(p, q) => self.infer(vars, arity, p).join(&self.infer(vars, arity, q)),
            T::Consumes(t) => self.infer(vars, arity, t),
            T::NameIntro(x, t) => {
                let anchored = T::anchored(x, (**t).clone());
                self.infer(vars, arity, &T::bar(T::singleton(x), anchored))
            }
            T::ModeAnd(m, subject, body) => {
                let mut inner = vars.clone();
                if let T::Var(a) = &**subject {
                    let cur = inner.get(a).cloned().unwrap_or_else(|| Fact::top(arity));
                    let c = Fact::constant(arity, *m);
                    inner.insert(a.clone(), Fact::meet_constant(&c, &cur).expect("constant"));
                }
                self.infer(&inner, arity, body)
            }
        }
    }

    fn concrete_dup<'a>(
        &self,
        vars: &VarFacts,
        arity: usize,
        fields: impl Iterator<Item = &'a TypeExpr>,
    ) -> Fact {
        let mut d = Hyp::truth(arity);
        for t in fields {
            d = d.and(self.infer(vars, arity, t).hyp(Mode::Duplicable));
        }
        let mut f = Fact::constant(arity, Mode::Affine);
        f.hyps[Mode::Duplicable.index()] = d;
        f
    }

    /// Mode of a closed type, with type variables given modes by `assumptions`.
    pub fn mode_of(&self, assumptions: &BTreeMap<Name, Mode>, t: &TypeExpr) -> Mode {
        let vars: VarFacts =
            assumptions.iter().map(|(n, m)| (n.clone(), Fact::constant(0, *m))).collect();
        self.infer(&vars, 0, t).mode_under(&[])
    }

    pub fn is_duplicable(&self, assumptions: &BTreeMap<Name, Mode>, t: &TypeExpr) -> bool {
        mode_leq(self.mode_of(assumptions, t), Mode::Duplicable)
    }

    pub fn is_exclusive(&self, assumptions: &BTreeMap<Name, Mode>, t: &TypeExpr) -> bool {
        mode_leq(self.mode_of(assumptions, t), Mode::Exclusive)
    }

    /// One line per named type, sorted by name.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (name, f) in &self.types {
            let params = self.params.get(name).cloned().unwrap_or_default();
            out.push_str(&format!("fact {name}: {}\n", f.render(&params)));
        }
        out
    }
}

fn definition_fact(env: &FactEnv, d: &DataTypeDef) -> Fact {
    let arity = d.params.len();
    if d.mutable {
        return Fact::constant(arity, Mode::Exclusive);
    }
    let vars: VarFacts = d
        .params
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (n.clone(), Fact::parameter(arity, i)))
        .collect();
    let mut f = Fact::constant(arity, Mode::Bottom);
    for b in &d.branches {
        let fields = b.fields.iter().map(|(_, t)| t);
        f = f.join(&env.concrete_dup(&vars, arity, fields));
    }
    f
}

/// Converts a user fact declaration into a fact over `params`.
pub fn declared_fact(decl: &FactDecl, params: &[Name]) -> Fact {
    let arity = params.len();
    let mut bounds = vec![Mode::Affine; arity];
    for (m, a) in &decl.hypotheses {
        // Hypotheses name the declaration's own argument names.
        let pos = decl.args.iter().position(|x| x == a).or_else(|| params.iter().position(|x| x == a));
        if let Some(i) = pos {
            bounds[i] = mode_meet(bounds[i], *m);
        }
    }
    let hyps = Mode::ALL.map(|m| {
        if m == Mode::Affine {
            Hyp::truth(arity)
        } else if mode_leq(decl.conclusion, m) {
            Hyp::Conj(bounds.clone())
        } else {
            Hyp::False
        }
    });
    Fact { arity, hyps }
}

/// Combines two declarations for the same type, keeping for each mode the
/// weaker hypothesis when one entails the other.
fn combine_declared(a: &Fact, b: &Fact) -> Fact {
    Fact {
        arity: a.arity,
        hyps: std::array::from_fn(|i| {
            let (x, y) = (&a.hyps[i], &b.hyps[i]);
            if x.entails(y) {
                y.clone()
            } else {
                x.clone()
            }
        }),
    }
}

pub fn check_exposed_fact(name: &str, params: &[Name], declared: &Fact, inferred: &Fact, span: Span) -> Result<(), FactError> {
    if declared == inferred {
        Ok(())
    } else {
        Err(FactError::FactMismatch {
            name: name.to_string(),
            declared: declared.render(params),
            inferred: inferred.render(params),
            span,
        })
    }
}

/// Computes facts for all data types by iterating from the optimistic
/// assignment until nothing changes. Abstract types take their declared
/// fact, or the top fact.
pub fn infer_datatype_facts(program: &Program) -> Result<FactEnv, FactError> {
    let (env, _) = infer_with_trace(program)?;
    Ok(env)
}

/// Same as `infer_datatype_facts`, also returning every iterate.
pub fn infer_with_trace(program: &Program) -> Result<(FactEnv, Vec<BTreeMap<Name, Fact>>), FactError> {
    let mut env = FactEnv::default();
    let mut declared: BTreeMap<Name, (Fact, Span)> = BTreeMap::new();
    for d in program.datatypes() {
        env.params.insert(d.name.clone(), d.params.iter().map(|(n, _)| n.clone()).collect());
        if d.mutable {
            env.mutable_ctors.extend(d.branches.iter().map(|b| b.ctor.clone()));
        }
        env.types.insert(d.name.clone(), Fact::constant(d.params.len(), Mode::Bottom));
    }
    for a in program.abstracts() {
        env.params.insert(a.name.clone(), a.params.iter().map(|(n, _)| n.clone()).collect());
        env.types.insert(a.name.clone(), Fact::top(a.params.len()));
    }
    for fd in program.facts() {
        let Some(params) = env.params.get(&fd.type_name).cloned() else {
            return Err(FactError::UnknownType(fd.type_name.clone(), fd.span));
        };
        let f = declared_fact(fd, &params);
        let merged = match declared.get(&fd.type_name) {
            Some((prev, _)) => combine_declared(prev, &f),
            None => f,
        };
        declared.insert(fd.type_name.clone(), (merged, fd.span));
    }
    for a in program.abstracts() {
        if let Some((f, _)) = declared.get(&a.name) {
            env.types.insert(a.name.clone(), f.clone());
        }
    }
    let defs: Vec<&DataTypeDef> = program.datatypes().collect();
    let mut trace = vec![env.types.clone()];
    loop {
        let mut changed = false;
        let mut next = env.clone();
        for d in &defs {
            let f = definition_fact(&env, d);
            if next.types.get(&d.name) != Some(&f) {
                changed = true;
                next.types.insert(d.name.clone(), f);
            }
        }
        env = next;
        if !changed {
            break;
        }
        trace.push(env.types.clone());
    }
    for d in &defs {
        if let Some((f, span)) = declared.get(&d.name) {
            check_exposed_fact(&d.name, &env.params[&d.name], f, &env.types[&d.name], *span)?;
        }
    }
    Ok((env, trace))
}
