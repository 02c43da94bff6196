//! The current permission: atoms `x @ t` in expanded form, keyed by the
//! representative of a union-find over term variables, and a goal-directed
//! backtracking search deciding subsumption.

use crate::desugar::map_children;
use crate::facts::{mode_leq, FactEnv};
use crate::syntax::*;
use std::collections::{BTreeMap, VecDeque};

/// Data type definitions indexed by name and by constructor.
#[derive(Clone, Debug, Default)]
pub struct Defs {
    pub types: BTreeMap<Name, DataTypeDef>,
    pub ctor_owner: BTreeMap<Name, Name>,
}

impl Defs {
    pub fn from_program(p: &Program) -> Self {
        let mut d = Defs::default();
        for def in p.datatypes() {
            for b in &def.branches {
                d.ctor_owner.insert(b.ctor.clone(), def.name.clone());
            }
            d.types.insert(def.name.clone(), def.clone());
        }
        d
    }

    pub fn owner(&self, ctor: &str) -> Option<&DataTypeDef> {
        self.ctor_owner.get(ctor).and_then(|n| self.types.get(n))
    }

    pub fn is_mutable_ctor(&self, ctor: &str) -> bool {
        self.owner(ctor).is_some_and(|d| d.mutable)
    }

    /// The branch `ctor` of `d args`, with parameters replaced by arguments.
    pub fn unfold(&self, d: &str, args: &[TypeExpr], ctor: &str) -> Option<StructuralType> {
        let def = self.types.get(d)?;
        if def.params.len() != args.len() {
            return None;
        }
        let b = def.branch(ctor)?;
        let map: BTreeMap<Name, TypeExpr> =
            def.params.iter().map(|(n, _)| n.clone()).zip(args.iter().cloned()).collect();
        Some(StructuralType {
            ctor: ctor.to_string(),
            fields: b.fields.iter().map(|(f, t)| (f.clone(), subst_many(t, &map))).collect(),
            adopts: Box::new(subst_many(&def.adopts, &map)),
        })
    }

    /// The adopts clause of a nominal type, if it has one.
    pub fn adopts_of(&self, d: &str, args: &[TypeExpr]) -> Option<TypeExpr> {
        let def = self.types.get(d)?;
        let map: BTreeMap<Name, TypeExpr> =
            def.params.iter().map(|(n, _)| n.clone()).zip(args.iter().cloned()).collect();
        Some(subst_many(&def.adopts, &map))
    }
}

/// Read-only context shared by all environment operations.
pub struct Ctx<'a> {
    pub facts: &'a FactEnv,
    pub defs: &'a Defs,
    pub supply: &'a NameSupply,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flex {
    pub kind: Kind,
    pub solution: Option<TypeExpr>,
}

#[derive(Clone, Debug, Default)]
pub struct PermEnv {
    parent: BTreeMap<Name, Name>,
    atoms: BTreeMap<Name, Vec<TypeExpr>>,
    /// Permissions that are not anchored at a variable, such as `p` with `p: perm`.
    pub abstract_perms: Vec<TypeExpr>,
    pub flex: BTreeMap<Name, Flex>,
    pub assumptions: BTreeMap<Name, Mode>,
    pub inconsistent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Goal {
    Perm(TypeExpr),
    Atom(Name, TypeExpr),
    Mode(Mode, TypeExpr),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Failure {
    /// The first conjunct that could not be satisfied.
    pub goal: String,
    /// What was left in the environment at that point.
    pub residual: Vec<String>,
}

fn rep_order(a: &str, b: &str) -> std::cmp::Ordering {
    (is_generated(a), a.len(), a).cmp(&(is_generated(b), b.len(), b))
}

impl PermEnv {
    pub fn new() -> Self {
        Self::default()
    }

    // -- union-find

    pub fn find(&self, x: &str) -> Name {
        if let Some(Flex { solution: Some(T::Var(y)), kind: Kind::Term }) = self.flex.get(x) {
            return self.find(y);
        }
        let mut cur = x.to_string();
        while let Some(p) = self.parent.get(&cur) {
            if *p == cur {
                break;
            }
            cur = p.clone();
        }
        cur
    }

    pub fn same(&self, x: &str, y: &str) -> bool {
        self.find(x) == self.find(y)
    }

    pub fn is_known(&self, x: &str) -> bool {
        self.parent.contains_key(x)
    }

    pub fn introduce(&mut self, x: &str) {
        self.parent.entry(x.to_string()).or_insert_with(|| x.to_string());
    }

    pub fn is_unsolved_flex(&self, x: &str) -> bool {
        matches!(self.flex.get(x), Some(Flex { solution: None, .. }))
    }

    pub fn new_flex(&mut self, name: &str, kind: Kind) {
        self.flex.insert(name.to_string(), Flex { kind, solution: None });
    }

    fn solve_flex(&mut self, name: &str, t: TypeExpr) -> bool {
        let t = self.zonk(&t);
        if t.free_vars().contains(name) {
            return false;
        }
        if let Some(f) = self.flex.get_mut(name) {
            f.solution = Some(t);
            true
        } else {
            false
        }
    }

    /// Replaces solved flexible variables by their solutions.
    pub fn zonk(&self, t: &TypeExpr) -> TypeExpr {
        let fv = t.free_vars();
        let map: BTreeMap<Name, TypeExpr> = fv
            .iter()
            .filter_map(|n| match self.flex.get(n) {
                Some(Flex { solution: Some(s), .. }) => Some((n.clone(), self.zonk(s))),
                _ => None,
            })
            .collect();
        if map.is_empty() {
            t.clone()
        } else {
            subst_many(t, &map)
        }
    }

    /// Rewrites term names to their representatives.
    pub fn canon(&self, t: &TypeExpr) -> TypeExpr {
        rename_terms(&self.zonk(t), &|x| self.find(x))
    }

    pub fn unsolved_flex_in(&self, t: &TypeExpr) -> Vec<Name> {
        self.zonk(t).free_vars().into_iter().filter(|n| self.is_unsolved_flex(n)).collect()
    }

    pub fn merge(&mut self, ctx: &Ctx, x: &str, y: &str) {
        self.introduce(x);
        self.introduce(y);
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return;
        }
        let (keep, drop) = if rep_order(&rx, &ry).is_le() { (rx, ry) } else { (ry, rx) };
        self.parent.insert(drop.clone(), keep.clone());
        let moved = self.atoms.remove(&drop).unwrap_or_default();
        for t in moved {
            self.add(ctx, &keep, &t);
        }
    }

    // -- atoms

    pub fn atoms_of(&self, x: &str) -> &[TypeExpr] {
        self.atoms.get(&self.find(x)).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn all_atoms(&self) -> impl Iterator<Item = (&Name, &TypeExpr)> {
        self.atoms.iter().flat_map(|(x, ts)| ts.iter().map(move |t| (x, t)))
    }

    pub fn names(&self) -> impl Iterator<Item = &Name> {
        self.parent.keys()
    }

    pub fn remove_atom(&mut self, x: &str, t: &TypeExpr) -> bool {
        let r = self.find(x);
        if let Some(v) = self.atoms.get_mut(&r) {
            if let Some(i) = v.iter().position(|u| u == t) {
                v.remove(i);
                return true;
            }
        }
        false
    }

    fn push_atom(&mut self, x: &str, t: TypeExpr) {
        let r = self.find(x);
        self.atoms.entry(r).or_default().push(t);
    }

    pub fn structural(&self, x: &str) -> Option<&StructuralType> {
        self.atoms_of(x).iter().find_map(|t| match t {
            T::Structural(s) => Some(s),
            _ => None,
        })
    }

    pub fn tuple(&self, x: &str) -> Option<&Vec<TypeExpr>> {
        self.atoms_of(x).iter().find_map(|t| match t {
            T::Tuple(v) => Some(v),
            _ => None,
        })
    }

    pub fn mode(&self, ctx: &Ctx, t: &TypeExpr) -> Mode {
        let t = self.zonk(t);
        let mut asm = self.assumptions.clone();
        for n in t.free_vars() {
            if self.is_unsolved_flex(&n) {
                asm.insert(n, Mode::Affine);
            }
        }
        ctx.facts.mode_of(&asm, &t)
    }

    pub fn is_duplicable(&self, ctx: &Ctx, t: &TypeExpr) -> bool {
        mode_leq(self.mode(ctx, t), Mode::Duplicable)
    }

    pub fn is_exclusive(&self, ctx: &Ctx, t: &TypeExpr) -> bool {
        mode_leq(self.mode(ctx, t), Mode::Exclusive)
    }

    /// Names every field or component with a singleton, introducing fresh
    /// variables where needed.
    fn expand_fields(&mut self, ctx: &Ctx, fields: &[(Name, TypeExpr)]) -> Vec<(Name, TypeExpr)> {
        fields
            .iter()
            .map(|(f, t)| match self.zonk(t) {
                T::Singleton(y) => {
                    self.introduce(&y);
                    (f.clone(), T::Singleton(y))
                }
                other => {
                    let y = ctx.supply.fresh(f);
                    self.introduce(&y);
                    self.add(ctx, &y, &other);
                    (f.clone(), T::Singleton(y))
                }
            })
            .collect()
    }

    /// Adds the permission `x @ t`.
    pub fn add(&mut self, ctx: &Ctx, x: &str, t: &TypeExpr) {
        self.introduce(x);
        let t = self.zonk(t);
        match t {
            T::Singleton(y) => self.merge(ctx, x, &y),
            T::Unknown => {}
            T::Bar(a, p) => {
                self.add(ctx, x, &a);
                self.add_perm(ctx, &p);
            }
            T::Exists(b, k, body) => {
                let body = self.open(ctx, &b, &k, &body);
                self.add(ctx, x, &body);
            }
            T::ModeAnd(m, s, body) => {
                self.assume(m, &s);
                self.add(ctx, x, &body);
            }
            T::Tuple(ts) => {
                let named: Vec<(Name, TypeExpr)> =
                    ts.into_iter().enumerate().map(|(i, t)| (format!("c{i}"), t)).collect();
                let exp = self.expand_fields(ctx, &named);
                let comps: Vec<TypeExpr> = exp.into_iter().map(|(_, t)| t).collect();
                if let Some(old) = self.tuple(x).cloned() {
                    if old.len() != comps.len() {
                        self.inconsistent = true;
                        return;
                    }
                    for (a, b) in old.iter().zip(&comps) {
                        if let (T::Singleton(p), T::Singleton(q)) = (a, b) {
                            self.merge(ctx, p, q);
                        }
                    }
                    return;
                }
                self.push_atom(x, T::Tuple(comps));
            }
            T::Structural(s) => {
                let fields = self.expand_fields(ctx, &s.fields);
                let s2 = StructuralType { ctor: s.ctor.clone(), fields, adopts: s.adopts.clone() };
                if let Some(old) = self.structural(x).cloned() {
                    if old.ctor != s2.ctor || ctx.defs.is_mutable_ctor(&s2.ctor) {
                        self.inconsistent = true;
                        self.push_atom(x, T::Structural(s2));
                        return;
                    }
                    for ((_, a), (_, b)) in old.fields.iter().zip(&s2.fields) {
                        if let (T::Singleton(p), T::Singleton(q)) = (a, b) {
                            self.merge(ctx, p, q);
                        }
                    }
                    return;
                }
                self.add_plain(ctx, x, T::Structural(s2));
            }
            other => self.add_plain(ctx, x, other),
        }
    }

    fn add_plain(&mut self, ctx: &Ctx, x: &str, t: TypeExpr) {
        let dup = self.is_duplicable(ctx, &t);
        let canon = self.canon(&t);
        if dup && self.atoms_of(x).iter().any(|u| alpha_equal(&self.canon(u), &canon)) {
            return;
        }
        let excl = !dup && self.is_exclusive(ctx, &t);
        if excl {
            let clash = self
                .atoms_of(x)
                .iter()
                .any(|u| !matches!(u, T::Dynamic) && self.is_exclusive(ctx, u));
            if clash {
                self.inconsistent = true;
            }
        }
        if let Some(d) = data_family(ctx, &t) {
            if self.atoms_of(x).iter().filter_map(|u| data_family(ctx, u)).any(|e| e != d) {
                self.inconsistent = true;
            }
        }
        self.push_atom(x, t);
        if excl && !self.atoms_of(x).contains(&T::Dynamic) {
            self.push_atom(x, T::Dynamic);
        }
    }

    pub fn add_perm(&mut self, ctx: &Ctx, p: &TypeExpr) {
        match self.zonk(p) {
            T::Star(a, b) => {
                self.add_perm(ctx, &a);
                self.add_perm(ctx, &b);
            }
            T::EmptyPerm => {}
            T::Anchored(x, t) => self.add(ctx, &x, &t),
            T::Exists(b, k, body) => {
                let body = self.open(ctx, &b, &k, &body);
                self.add_perm(ctx, &body);
            }
            T::ModeAnd(m, s, body) => {
                self.assume(m, &s);
                self.add_perm(ctx, &body);
            }
            other => self.abstract_perms.push(other),
        }
    }

    fn open(&mut self, ctx: &Ctx, b: &str, k: &Kind, body: &TypeExpr) -> TypeExpr {
        let fresh = ctx.supply.fresh(b);
        if *k == Kind::Term {
            self.introduce(&fresh);
        }
        substitute(body, &T::Var(fresh), b)
    }

    pub fn assume(&mut self, m: Mode, subject: &TypeExpr) {
        if let T::Var(a) = subject {
            let cur = self.assumptions.get(a).copied().unwrap_or(Mode::Affine);
            self.assumptions.insert(a.clone(), crate::facts::mode_meet(cur, m));
        }
    }

    /// Keeps only what may be captured by a closure: duplicable atoms,
    /// equations and assumptions.
    pub fn duplicable_part(&self, ctx: &Ctx) -> PermEnv {
        let mut out = self.clone();
        out.abstract_perms.retain(|p| self.is_duplicable(ctx, p));
        for v in out.atoms.values_mut() {
            v.retain(|t| self.is_duplicable(ctx, t));
        }
        out
    }

    /// Every atom as `x @ t`, with names replaced by representatives.
    pub fn listing(&self) -> Vec<(Name, TypeExpr)> {
        let mut out: Vec<(Name, TypeExpr)> =
            self.all_atoms().map(|(x, t)| (x.clone(), self.canon(t))).collect();
        out.sort_by(|a, b| (a.0.as_str(), a.1.to_string()).cmp(&(b.0.as_str(), b.1.to_string())));
        out
    }

    pub fn render(&self) -> Vec<String> {
        let mut v: Vec<String> = self.listing().iter().map(|(x, t)| format!("{x} @ {t}")).collect();
        v.extend(self.abstract_perms.iter().map(|p| self.canon(p).to_string()));
        v.sort();
        v
    }

    // -- unification

    /// Unifies two types, solving flexible variables.
    pub fn unify(&mut self, a: &TypeExpr, b: &TypeExpr) -> bool {
        let (a, b) = (self.zonk(a), self.zonk(b));
        match (&a, &b) {
            (T::Var(x), _) if self.is_unsolved_flex(x) => {
                if matches!(&b, T::Var(y) if y == x) {
                    return true;
                }
                self.solve_flex(x, b.clone())
            }
            (_, T::Var(y)) if self.is_unsolved_flex(y) => self.solve_flex(y, a.clone()),
            (T::Var(x), T::Var(y)) => x == y,
            (T::Singleton(x), T::Singleton(y)) => self.unify_terms(x, y),
            (T::Anchored(x, t), T::Anchored(y, u)) => self.unify_terms(x, y) && self.unify(t, u),
            (T::Forall(x, k1, t), T::Forall(y, k2, u)) | (T::Exists(x, k1, t), T::Exists(y, k2, u)) => {
                if k1 != k2 {
                    return false;
                }
                let fresh = format!("{}#rigid{}", base_name(x), self.flex.len() + self.parent.len());
                let t2 = substitute(t, &T::Var(fresh.clone()), x);
                let u2 = substitute(u, &T::Var(fresh.clone()), y);
                if !self.unify(&t2, &u2) {
                    return false;
                }
                !self.flex.values().any(|f| f.solution.as_ref().is_some_and(|s| s.mentions(&fresh)))
            }
            (T::App(h1, xs), T::App(h2, ys)) => h1 == h2 && self.unify_all(xs, ys),
            (T::Tuple(xs), T::Tuple(ys)) => self.unify_all(xs, ys),
            (T::Structural(s1), T::Structural(s2)) => {
                s1.ctor == s2.ctor
                    && s1.fields.len() == s2.fields.len()
                    && s1.fields.iter().zip(&s2.fields).all(|((f1, _), (f2, _))| f1 == f2)
                    && {
                        let xs: Vec<TypeExpr> = s1.fields.iter().map(|(_, t)| t.clone()).collect();
                        let ys: Vec<TypeExpr> = s2.fields.iter().map(|(_, t)| t.clone()).collect();
                        self.unify_all(&xs, &ys)
                    }
                    && self.unify(&s1.adopts, &s2.adopts)
            }
            (T::InternalArrow(a1, b1), T::InternalArrow(a2, b2))
            | (T::ExternalArrow(a1, b1), T::ExternalArrow(a2, b2))
            | (T::Bar(a1, b1), T::Bar(a2, b2))
            | (T::Star(a1, b1), T::Star(a2, b2)) => self.unify(a1, a2) && self.unify(b1, b2),
            (T::ModeAnd(m1, a1, b1), T::ModeAnd(m2, a2, b2)) => {
                m1 == m2 && self.unify(a1, a2) && self.unify(b1, b2)
            }
            (T::Consumes(x), T::Consumes(y)) => self.unify(x, y),
            (T::NameIntro(x, t), T::NameIntro(y, u)) => self.unify_terms(x, y) && self.unify(t, u),
            (T::Dynamic, T::Dynamic) | (T::Unknown, T::Unknown) | (T::EmptyPerm, T::EmptyPerm) => true,
            _ => false,
        }
    }

    fn unify_all(&mut self, xs: &[TypeExpr], ys: &[TypeExpr]) -> bool {
        xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify(x, y))
    }

    fn unify_terms(&mut self, x: &str, y: &str) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return true;
        }
        if self.is_unsolved_flex(&rx) {
            return self.solve_flex(&rx, T::Var(ry));
        }
        if self.is_unsolved_flex(&ry) {
            return self.solve_flex(&ry, T::Var(rx));
        }
        false
    }

    // -- subsumption

    /// Checks that the permission `p` can be extracted from the environment,
    /// returning the environment without what was consumed.
    pub fn subsume(&self, ctx: &Ctx, p: &TypeExpr) -> Result<PermEnv, Failure> {
        self.subsume_goals(ctx, vec![Goal::Perm(p.clone())])
    }

    pub fn subsume_atom(&self, ctx: &Ctx, x: &str, t: &TypeExpr) -> Result<PermEnv, Failure> {
        self.subsume_goals(ctx, vec![Goal::Atom(x.to_string(), t.clone())])
    }

    pub fn subsume_goals(&self, ctx: &Ctx, goals: Vec<Goal>) -> Result<PermEnv, Failure> {
        if self.inconsistent {
            return Ok(self.clone());
        }
        let mut fail = None;
        match solve(ctx, self.clone(), goals.into(), ctx.depth, &mut fail) {
            Some(env) => Ok(env),
            None => Err(fail.unwrap_or_default()),
        }
    }

    /// Splits the environment into what `wanted` consumes and what is framed out.
    pub fn frame_split(&self, ctx: &Ctx, wanted: &TypeExpr) -> Result<(Vec<String>, PermEnv), Failure> {
        let after = self.subsume(ctx, wanted)?;
        let mut remaining = after.render();
        let mut consumed = Vec::new();
        for a in self.render() {
            if let Some(i) = remaining.iter().position(|b| *b == a) {
                remaining.remove(i);
            } else {
                consumed.push(a);
            }
        }
        Ok((consumed, after))
    }
}

/// Applies `f` to every name in a term position.
pub fn rename_terms(t: &TypeExpr, f: &dyn Fn(&str) -> Name) -> TypeExpr {
    match t {
        T::Singleton(x) => T::Singleton(f(x)),
        T::Anchored(x, b) => T::Anchored(f(x), Box::new(rename_terms(b, f))),
        T::NameIntro(x, b) => T::NameIntro(f(x), Box::new(rename_terms(b, f))),
        T::Forall(b, Kind::Term, body) | T::Exists(b, Kind::Term, body) => {
            let inner = |x: &str| if x == b { x.to_string() } else { f(x) };
            let body = Box::new(rename_terms(body, &inner));
            match t {
                T::Forall(..) => T::Forall(b.clone(), Kind::Term, body),
                _ => T::Exists(b.clone(), Kind::Term, body),
            }
        }
        other => map_children(other, &mut |c| rename_terms(c, f)),
    }
}

fn record_failure(fail: &mut Option<Failure>, env: &PermEnv, goal: &Goal) {
    if fail.is_some() {
        return;
    }
    let goal = match goal {
        Goal::Atom(x, t) => format!("{} @ {}", env.find(x), env.canon(t)),
        Goal::Perm(p) => env.canon(p).to_string(),
        Goal::Mode(m, t) => format!("{m} {}", env.canon(t)),
    };
    *fail = Some(Failure { goal, residual: env.render() });
}

fn is_deferred(env: &PermEnv, g: &Goal) -> bool {
    match g {
        Goal::Atom(x, t) => {
            let x = env.find(x);
            env.is_unsolved_flex(&x)
                && !matches!(env.zonk(t), T::Singleton(y) if !env.is_unsolved_flex(&env.find(&y)))
        }
        Goal::Mode(_, t) => !env.unsolved_flex_in(t).is_empty(),
        Goal::Perm(p) => matches!(env.zonk(p), T::Var(v) if env.is_unsolved_flex(&v)),
    }
}

fn solve(ctx: &Ctx, mut env: PermEnv, mut goals: VecDeque<Goal>, budget: usize, fail: &mut Option<Failure>) -> Option<PermEnv> {
    // Pick the first goal that is not waiting on an unsolved flexible.
    let pos = match goals.iter().position(|g| !is_deferred(&env, g)) {
        Some(i) => i,
        None => {
            if let Some(g) = goals.front() {
                if let Goal::Perm(T::Var(v)) = g {
                    // A flexible permission is solved by the empty permission.
                    let v = v.clone();
                    env.solve_flex(&v, T::EmptyPerm);
                    goals.pop_front();
                    return solve(ctx, env, goals, budget, fail);
                }
                record_failure(fail, &env, g);
                return None;
            }
            return Some(env);
        }
    };
    let goal = goals.remove(pos).expect("goal");
    let next = |env: PermEnv, mut goals: VecDeque<Goal>, front: Vec<Goal>, budget, fail: &mut Option<Failure>| {
        for g in front.into_iter().rev() {
            goals.push_front(g);
        }
        solve(ctx, env, goals, budget, fail)
    };
    match goal.clone() {
        Goal::Perm(p) => match env.zonk(&p) {
            T::Star(a, b) => next(env, goals, vec![Goal::Perm(*a), Goal::Perm(*b)], budget, fail),
            T::EmptyPerm => next(env, goals, vec![], budget, fail),
            T::Anchored(x, t) => next(env, goals, vec![Goal::Atom(x, *t)], budget, fail),
            T::Exists(b, k, body) => {
                let f = ctx.supply.fresh(&b);
                env.new_flex(&f, k);
                let body = substitute(&body, &T::Var(f), &b);
                next(env, goals, vec![Goal::Perm(body)], budget, fail)
            }
            T::ModeAnd(m, s, body) => {
                next(env, goals, vec![Goal::Mode(m, *s), Goal::Perm(*body)], budget, fail)
            }
            other => {
                for (i, q) in env.abstract_perms.iter().enumerate() {
                    let mut e2 = env.clone();
                    if e2.unify(q, &other) {
                        if !e2.is_duplicable(ctx, q) {
                            e2.abstract_perms.remove(i);
                        }
                        if let Some(r) = next(e2, goals.clone(), vec![], budget, fail) {
                            return Some(r);
                        }
                    }
                }
                record_failure(fail, &env, &goal);
                None
            }
        },
        Goal::Mode(m, t) => {
            if mode_leq(env.mode(ctx, &t), m) {
                next(env, goals, vec![], budget, fail)
            } else {
                record_failure(fail, &env, &goal);
                None
            }
        }
        Goal::Atom(x, t) => {
            let r = solve_atom(ctx, env.clone(), &goals, &x, &env.zonk(&t), budget, fail);
            if r.is_none() {
                record_failure(fail, &env, &goal);
            }
            r
        }
    }
}

/// Consumes `t` from `x` unless it is duplicable.
fn consume(ctx: &Ctx, env: &mut PermEnv, x: &str, t: &TypeExpr) {
    if !env.is_duplicable(ctx, t) {
        env.remove_atom(x, t);
    }
}

fn solve_atom(
    ctx: &Ctx,
    mut env: PermEnv,
    goals: &VecDeque<Goal>,
    x: &str,
    t: &TypeExpr,
    budget: usize,
    fail: &mut Option<Failure>,
) -> Option<PermEnv> {
    let cont = |env: PermEnv, front: Vec<Goal>, budget, fail: &mut Option<Failure>| {
        let mut gs = goals.clone();
        for g in front.into_iter().rev() {
            gs.push_front(g);
        }
        solve(ctx, env, gs, budget, fail)
    };
    let rx = env.find(x);
    if env.is_unsolved_flex(&rx) {
        if let T::Singleton(y) = t {
            let ry = env.find(y);
            env.solve_flex(&rx, T::Var(ry));
            return cont(env, vec![], budget, fail);
        }
        return None;
    }
    match t {
        T::Singleton(y) => {
            let ry = env.find(y);
            if ry == rx {
                return cont(env, vec![], budget, fail);
            }
            if env.is_unsolved_flex(&ry) {
                env.solve_flex(&ry, T::Var(rx));
                return cont(env, vec![], budget, fail);
            }
            None
        }
        T::Unknown => cont(env, vec![], budget, fail),
        T::Bar(a, p) => cont(env, vec![Goal::Atom(rx, (**a).clone()), Goal::Perm((**p).clone())], budget, fail),
        T::Exists(b, k, body) => {
            let f = ctx.supply.fresh(b);
            env.new_flex(&f, k.clone());
            let body = substitute(body, &T::Var(f), b);
            cont(env, vec![Goal::Atom(rx, body)], budget, fail)
        }
        T::ModeAnd(m, s, body) => {
            cont(env, vec![Goal::Mode(*m, (**s).clone()), Goal::Atom(rx, (**body).clone())], budget, fail)
        }
        T::Tuple(ts) => {
            let comps = env.tuple(&rx)?.clone();
            if comps.len() != ts.len() {
                return None;
            }
            let front = comps
                .iter()
                .zip(ts)
                .map(|(c, t)| match c {
                    T::Singleton(y) => Goal::Atom(y.clone(), t.clone()),
                    other => Goal::Atom(rx.clone(), other.clone()),
                })
                .collect();
            cont(env, front, budget, fail)
        }
        T::Structural(goal) => solve_structural(ctx, env, goals, &rx, goal, budget, fail),
        T::App(d, args) => {
            // A nominal atom with the same head.
            let atoms: Vec<TypeExpr> = env.atoms_of(&rx).to_vec();
            for a in &atoms {
                if let T::App(d2, args2) = a {
                    if d2 == d && args2.len() == args.len() {
                        let mut e2 = env.clone();
                        if e2.unify_all(args2, args) {
                            consume(ctx, &mut e2, &rx, a);
                            if let Some(r) = cont(e2, vec![], budget, fail) {
                                return Some(r);
                            }
                        }
                    }
                }
            }
            // Fold a structural atom into the nominal type.
            if budget == 0 {
                return None;
            }
            let s = env.structural(&rx)?.clone();
            let owner = ctx.defs.owner(&s.ctor)?;
            if owner.name != *d {
                return None;
            }
            let unfolded = ctx.defs.unfold(d, args, &s.ctor)?;
            cont(env, vec![Goal::Atom(rx, T::Structural(unfolded))], budget - 1, fail)
        }
        T::Var(v) if env.is_unsolved_flex(v) => {
            let mut atoms: Vec<TypeExpr> = env.atoms_of(&rx).to_vec();
            atoms.sort_by_key(|a| match a {
                T::Structural(_) | T::Tuple(_) => 1,
                T::Dynamic => 2,
                _ => 0,
            });
            for a in atoms {
                let mut e2 = env.clone();
                if e2.solve_flex(v, a.clone()) {
                    consume(ctx, &mut e2, &rx, &a);
                    if let Some(r) = cont(e2, vec![], budget, fail) {
                        return Some(r);
                    }
                }
            }
            None
        }
        T::Dynamic => {
            if env.atoms_of(&rx).contains(&T::Dynamic) {
                return cont(env, vec![], budget, fail);
            }
            // Dynamic appears out of any exclusive permission.
            let excl = env.atoms_of(&rx).iter().any(|a| env.is_exclusive(ctx, a));
            if excl {
                return cont(env, vec![], budget, fail);
            }
            None
        }
        _ => {
            let atoms: Vec<TypeExpr> = env.atoms_of(&rx).to_vec();
            for a in &atoms {
                let mut e2 = env.clone();
                if e2.unify(a, t) {
                    consume(ctx, &mut e2, &rx, a);
                    if let Some(r) = cont(e2, vec![], budget, fail) {
                        return Some(r);
                    }
                }
            }
            None
        }
    }
}

fn solve_structural(
    ctx: &Ctx,
    mut env: PermEnv,
    goals: &VecDeque<Goal>,
    rx: &str,
    goal: &StructuralType,
    budget: usize,
    fail: &mut Option<Failure>,
) -> Option<PermEnv> {
    let atom = match env.structural(rx).cloned() {
        Some(s) => s,
        None => {
            // Unfold a one-branch nominal atom.
            if budget == 0 {
                return None;
            }
            let (old, s) = env.atoms_of(rx).iter().find_map(|a| match a {
                T::App(d, args) => {
                    let def = ctx.defs.types.get(d)?;
                    if def.branches.len() != 1 || def.branches[0].ctor != goal.ctor {
                        return None;
                    }
                    Some((a.clone(), ctx.defs.unfold(d, args, &goal.ctor)?))
                }
                _ => None,
            })?;
            env.remove_atom(rx, &old);
            env.add(ctx, rx, &T::Structural(s));
            return solve_structural(ctx, env, goals, rx, goal, budget - 1, fail);
        }
    };
    if atom.ctor != goal.ctor || atom.fields.len() != goal.fields.len() {
        return None;
    }
    if !atom.adopts.is_bottom() && !env.unify(&atom.adopts, &goal.adopts) {
        return None;
    }
    let mut front = Vec::new();
    for (f, t) in &goal.fields {
        let (_, ft) = atom.fields.iter().find(|(g, _)| g == f)?;
        match ft {
            T::Singleton(y) => front.push(Goal::Atom(y.clone(), t.clone())),
            other => front.push(Goal::Atom(rx.to_string(), other.clone())),
        }
    }
    if ctx.defs.is_mutable_ctor(&atom.ctor) {
        env.remove_atom(rx, &T::Structural(atom));
    }
    let mut gs = goals.clone();
    for g in front.into_iter().rev() {
        gs.push_front(g);
    }
    solve(ctx, env, gs, budget, fail)
}

/// The data type a value of type `t` must belong to, if known.
fn data_family(ctx: &Ctx, t: &TypeExpr) -> Option<Name> {
    match t {
        T::Structural(s) => ctx.defs.owner(&s.ctor).map(|d| d.name.clone()),
        T::App(d, _) if ctx.defs.types.contains_key(d) => Some(d.clone()),
        _ => None,
    }
}
