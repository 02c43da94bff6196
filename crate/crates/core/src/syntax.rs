//! Abstract syntax shared by every stage: kinds, types, expressions,
//! patterns and top-level items, plus substitution and alpha-equivalence.
//!
//! Surface and internal types live in one enum. The surface-only forms
//! (`ExternalArrow`, `Consumes`, `NameIntro`) are removed by `desugar`.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type Name = String;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Type,
    Term,
    Perm,
    /// Kind of a data type constructor: always fully applied.
    Arrow(Vec<Kind>, Box<Kind>),
}

impl Kind {
    pub fn is_base(&self) -> bool {
        !matches!(self, Kind::Arrow(..))
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Type => write!(f, "type"),
            Kind::Term => write!(f, "term"),
            Kind::Perm => write!(f, "perm"),
            Kind::Arrow(params, res) => {
                for p in params {
                    write!(f, "{p} -> ")?;
                }
                write!(f, "{res}")
            }
        }
    }
}

/// Position in the mode lattice. The lattice operations live in `facts`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Bottom,
    Duplicable,
    Exclusive,
    Affine,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Bottom, Mode::Duplicable, Mode::Exclusive, Mode::Affine];

    pub fn index(self) -> usize {
        match self {
            Mode::Bottom => 0,
            Mode::Duplicable => 1,
            Mode::Exclusive => 2,
            Mode::Affine => 3,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Mode::Bottom => "bottom",
            Mode::Duplicable => "duplicable",
            Mode::Exclusive => "exclusive",
            Mode::Affine => "affine",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StructuralType {
    pub ctor: Name,
    pub fields: Vec<(Name, TypeExpr)>,
    pub adopts: Box<TypeExpr>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TypeExpr {
    Var(Name),
    InternalArrow(Box<TypeExpr>, Box<TypeExpr>),
    ExternalArrow(Box<TypeExpr>, Box<TypeExpr>),
    Tuple(Vec<TypeExpr>),
    Structural(StructuralType),
    App(Name, Vec<TypeExpr>),
    Forall(Name, Kind, Box<TypeExpr>),
    Exists(Name, Kind, Box<TypeExpr>),
    Singleton(Name),
    Bar(Box<TypeExpr>, Box<TypeExpr>),
    Anchored(Name, Box<TypeExpr>),
    EmptyPerm,
    Star(Box<TypeExpr>, Box<TypeExpr>),
    Dynamic,
    Unknown,
    Consumes(Box<TypeExpr>),
    NameIntro(Name, Box<TypeExpr>),
    /// `m t1 | t2`: assume `t1` has mode `m` while looking at `t2`.
    ModeAnd(Mode, Box<TypeExpr>, Box<TypeExpr>),
}

pub use TypeExpr as T;

impl TypeExpr {
    pub fn var(n: &str) -> Self {
        T::Var(n.to_string())
    }
    pub fn unit() -> Self {
        T::Tuple(Vec::new())
    }
    /// `⊥`, encoded as `[a] a`.
    pub fn bottom() -> Self {
        T::Forall("a".into(), Kind::Type, Box::new(T::var("a")))
    }
    pub fn is_bottom(&self) -> bool {
        match self {
            T::Forall(b, Kind::Type, body) => matches!(&**body, T::Var(v) if v == b),
            _ => false,
        }
    }
    pub fn is_unit(&self) -> bool {
        matches!(self, T::Tuple(v) if v.is_empty())
    }
    pub fn app(head: &str, args: Vec<TypeExpr>) -> Self {
        T::App(head.to_string(), args)
    }
    pub fn singleton(x: &str) -> Self {
        T::Singleton(x.to_string())
    }
    pub fn anchored(x: &str, t: TypeExpr) -> Self {
        T::Anchored(x.to_string(), Box::new(t))
    }
    pub fn bar(t: TypeExpr, p: TypeExpr) -> Self {
        T::Bar(Box::new(t), Box::new(p))
    }
    pub fn star(p: TypeExpr, q: TypeExpr) -> Self {
        T::Star(Box::new(p), Box::new(q))
    }
    pub fn forall(b: &str, k: Kind, body: TypeExpr) -> Self {
        T::Forall(b.to_string(), k, Box::new(body))
    }
    pub fn exists(b: &str, k: Kind, body: TypeExpr) -> Self {
        T::Exists(b.to_string(), k, Box::new(body))
    }
    pub fn arrow(d: TypeExpr, c: TypeExpr) -> Self {
        T::InternalArrow(Box::new(d), Box::new(c))
    }
    pub fn earrow(d: TypeExpr, c: TypeExpr) -> Self {
        T::ExternalArrow(Box::new(d), Box::new(c))
    }
    pub fn structural(ctor: &str, fields: Vec<(&str, TypeExpr)>) -> Self {
        T::Structural(StructuralType {
            ctor: ctor.to_string(),
            fields: fields.into_iter().map(|(f, t)| (f.to_string(), t)).collect(),
            adopts: Box::new(T::bottom()),
        })
    }

    /// Does the tree contain a node satisfying `pred`?
    pub fn any_node(&self, pred: &dyn Fn(&TypeExpr) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        let mut found = false;
        self.for_each_child(&mut |c| {
            if !found && c.any_node(pred) {
                found = true;
            }
        });
        found
    }

    pub fn for_each_child(&self, f: &mut dyn FnMut(&TypeExpr)) {
        match self {
            T::Var(_) | T::Singleton(_) | T::EmptyPerm | T::Dynamic | T::Unknown => {}
            T::InternalArrow(a, b) | T::ExternalArrow(a, b) | T::Bar(a, b) | T::Star(a, b) => {
                f(a);
                f(b)
            }
            T::ModeAnd(_, a, b) => {
                f(a);
                f(b)
            }
            T::Tuple(ts) | T::App(_, ts) => ts.iter().for_each(f),
            T::Structural(s) => {
                s.fields.iter().for_each(|(_, t)| f(t));
                f(&s.adopts)
            }
            T::Forall(_, _, b) | T::Exists(_, _, b) => f(b),
            T::Anchored(_, t) | T::Consumes(t) | T::NameIntro(_, t) => f(t),
        }
    }

    pub fn has_surface_nodes(&self) -> bool {
        self.any_node(&|t| {
            matches!(t, T::ExternalArrow(..) | T::Consumes(_) | T::NameIntro(..))
        })
    }

    /// Free names, both type-level and term-level. Data type heads are not
    /// counted.
    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        collect_free(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.free_vars().contains(name)
    }
}

fn collect_free(t: &TypeExpr, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
    let note = |n: &Name, bound: &Vec<Name>, out: &mut BTreeSet<Name>| {
        if !bound.contains(n) {
            out.insert(n.clone());
        }
    };
    match t {
        T::Var(n) | T::Singleton(n) => note(n, bound, out),
        T::Anchored(n, b) | T::NameIntro(n, b) => {
            note(n, bound, out);
            collect_free(b, bound, out)
        }
        T::Forall(b, _, body) | T::Exists(b, _, body) => {
            bound.push(b.clone());
            collect_free(body, bound, out);
            bound.pop();
        }
        _ => t.for_each_child(&mut |c| collect_free(c, bound, out)),
    }
}

/// Picks a variant of `base` that does not occur in `avoid`; suffixes are
/// drawn from an increasing counter so the result is deterministic.
pub fn fresh_variant(base: &str, avoid: &BTreeSet<Name>) -> Name {
    let stem = base.split('#').next().unwrap_or(base);
    let mut n = 1u32;
    loop {
        let cand = format!("{stem}_{n}");
        if !avoid.contains(&cand) {
            return cand;
        }
        n += 1;
    }
}

/// Capture-avoiding substitution of `replacement` for `binder` in `target`.
pub fn substitute(target: &TypeExpr, replacement: &TypeExpr, binder: &str) -> TypeExpr {
    let mut map = BTreeMap::new();
    map.insert(binder.to_string(), replacement.clone());
    subst_many(target, &map)
}

/// Simultaneous capture-avoiding substitution. Term-position occurrences
/// (`=x`, `x @ t`, `x: t`) are renamed only when the replacement is a
/// variable.
pub fn subst_many(target: &TypeExpr, map: &BTreeMap<Name, TypeExpr>) -> TypeExpr {
    if map.is_empty() {
        return target.clone();
    }
    let rename = |n: &Name| -> Name {
        match map.get(n) {
            Some(T::Var(y)) => y.clone(),
            _ => n.clone(),
        }
    };
    match target {
        T::Var(n) => map.get(n).cloned().unwrap_or_else(|| target.clone()),
        T::Singleton(n) => T::Singleton(rename(n)),
        T::Anchored(n, t) => T::Anchored(rename(n), Box::new(subst_many(t, map))),
        T::NameIntro(n, t) => T::NameIntro(rename(n), Box::new(subst_many(t, map))),
        T::Forall(b, k, body) | T::Exists(b, k, body) => {
            let (b2, body2) = subst_binder(b, body, map);
            if matches!(target, T::Forall(..)) {
                T::Forall(b2, k.clone(), Box::new(body2))
            } else {
                T::Exists(b2, k.clone(), Box::new(body2))
            }
        }
        T::InternalArrow(a, b) => T::arrow(subst_many(a, map), subst_many(b, map)),
        T::ExternalArrow(a, b) => T::earrow(subst_many(a, map), subst_many(b, map)),
        T::Bar(a, b) => T::bar(subst_many(a, map), subst_many(b, map)),
        T::Star(a, b) => T::star(subst_many(a, map), subst_many(b, map)),
        T::ModeAnd(m, a, b) => {
            T::ModeAnd(*m, Box::new(subst_many(a, map)), Box::new(subst_many(b, map)))
        }
        T::Tuple(ts) => T::Tuple(ts.iter().map(|t| subst_many(t, map)).collect()),
        T::App(h, ts) => T::App(h.clone(), ts.iter().map(|t| subst_many(t, map)).collect()),
        T::Structural(s) => T::Structural(StructuralType {
            ctor: s.ctor.clone(),
            fields: s.fields.iter().map(|(f, t)| (f.clone(), subst_many(t, map))).collect(),
            adopts: Box::new(subst_many(&s.adopts, map)),
        }),
        T::Consumes(t) => T::Consumes(Box::new(subst_many(t, map))),
        T::EmptyPerm | T::Dynamic | T::Unknown => target.clone(),
    }
}

fn subst_binder(b: &Name, body: &TypeExpr, map: &BTreeMap<Name, TypeExpr>) -> (Name, TypeExpr) {
    let body_fv = body.free_vars();
    let mut inner: BTreeMap<Name, TypeExpr> = map
        .iter()
        .filter(|(k, _)| *k != b && body_fv.contains(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if inner.is_empty() {
        return (b.clone(), body.clone());
    }
    let repl_fv: BTreeSet<Name> = inner.values().flat_map(|v| v.free_vars()).collect();
    if repl_fv.contains(b) {
        let mut avoid = repl_fv;
        avoid.extend(body_fv);
        avoid.extend(inner.keys().cloned());
        let b2 = fresh_variant(b, &avoid);
        inner.insert(b.clone(), T::Var(b2.clone()));
        (b2, subst_many(body, &inner))
    } else {
        (b.clone(), subst_many(body, &inner))
    }
}

/// Equality up to consistent renaming of bound variables.
pub fn alpha_equal(t1: &TypeExpr, t2: &TypeExpr) -> bool {
    alpha_eq(t1, t2, &mut Vec::new())
}

fn same_name(a: &Name, b: &Name, env: &[(Name, Name)]) -> bool {
    for (l, r) in env.iter().rev() {
        if l == a || r == b {
            return l == a && r == b;
        }
    }
    a == b
}

fn alpha_eq(t1: &TypeExpr, t2: &TypeExpr, env: &mut Vec<(Name, Name)>) -> bool {
    match (t1, t2) {
        (T::Var(a), T::Var(b)) | (T::Singleton(a), T::Singleton(b)) => same_name(a, b, env),
        (T::Anchored(a, x), T::Anchored(b, y)) | (T::NameIntro(a, x), T::NameIntro(b, y)) => {
            same_name(a, b, env) && alpha_eq(x, y, env)
        }
        (T::Forall(a, k1, x), T::Forall(b, k2, y)) | (T::Exists(a, k1, x), T::Exists(b, k2, y)) => {
            if k1 != k2 {
                return false;
            }
            env.push((a.clone(), b.clone()));
            let r = alpha_eq(x, y, env);
            env.pop();
            r
        }
        (T::InternalArrow(a, b), T::InternalArrow(c, d))
        | (T::ExternalArrow(a, b), T::ExternalArrow(c, d))
        | (T::Bar(a, b), T::Bar(c, d))
        | (T::Star(a, b), T::Star(c, d)) => alpha_eq(a, c, env) && alpha_eq(b, d, env),
        (T::ModeAnd(m1, a, b), T::ModeAnd(m2, c, d)) => {
            m1 == m2 && alpha_eq(a, c, env) && alpha_eq(b, d, env)
        }
        (T::Tuple(xs), T::Tuple(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| alpha_eq(x, y, env))
        }
        (T::App(h1, xs), T::App(h2, ys)) => {
            h1 == h2 && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| alpha_eq(x, y, env))
        }
        (T::Structural(s1), T::Structural(s2)) => {
            s1.ctor == s2.ctor
                && s1.fields.len() == s2.fields.len()
                && s1
                    .fields
                    .iter()
                    .zip(&s2.fields)
                    .all(|((f1, x), (f2, y))| f1 == f2 && alpha_eq(x, y, env))
                && alpha_eq(&s1.adopts, &s2.adopts, env)
        }
        (T::Consumes(a), T::Consumes(b)) => alpha_eq(a, b, env),
        (T::EmptyPerm, T::EmptyPerm) | (T::Dynamic, T::Dynamic) | (T::Unknown, T::Unknown) => true,
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// Expressions

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimOp {
    Add,
    Sub,
    Mul,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl PrimOp {
    pub fn symbol(self) -> &'static str {
        match self {
            PrimOp::Add => "+",
            PrimOp::Sub => "-",
            PrimOp::Mul => "*",
            PrimOp::Lt => "<",
            PrimOp::Le => "<=",
            PrimOp::Gt => ">",
            PrimOp::Ge => ">=",
            PrimOp::Eq => "==",
            PrimOp::Ne => "!=",
        }
    }
    pub fn is_arith(self) -> bool {
        matches!(self, PrimOp::Add | PrimOp::Sub | PrimOp::Mul)
    }
    pub fn is_physical(self) -> bool {
        matches!(self, PrimOp::Eq | PrimOp::Ne)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pattern {
    Var(Name),
    Tuple(Vec<Pattern>),
    Construct(Name, Vec<(Name, Pattern)>),
}

impl Pattern {
    pub fn bound_names(&self) -> Vec<Name> {
        let mut out = Vec::new();
        self.collect_names(&mut out);
        out
    }
    fn collect_names(&self, out: &mut Vec<Name>) {
        match self {
            Pattern::Var(n) => out.push(n.clone()),
            Pattern::Tuple(ps) => ps.iter().for_each(|p| p.collect_names(out)),
            Pattern::Construct(_, fs) => fs.iter().for_each(|(_, p)| p.collect_names(out)),
        }
    }
    pub fn is_shallow(&self) -> bool {
        match self {
            Pattern::Var(_) => true,
            Pattern::Tuple(ps) => ps.iter().all(|p| matches!(p, Pattern::Var(_))),
            Pattern::Construct(_, fs) => fs.iter().all(|(_, p)| matches!(p, Pattern::Var(_))),
        }
    }
}

/// A function literal. In surface form `param` is `None` and `arg` is a
/// type read as a pattern; after desugaring `param` names the single
/// argument and `arg`/`ret` are internal types.
#[derive(Clone, Debug, PartialEq)]
pub struct Function {
    pub name: Option<Name>,
    pub recursive: bool,
    pub type_params: Vec<(Name, Kind)>,
    pub param: Option<Name>,
    pub arg: TypeExpr,
    pub ret: TypeExpr,
    pub body: Expr,
}

impl Function {
    /// The function's own type. Only meaningful for internal functions.
    pub fn internal_type(&self) -> TypeExpr {
        let mut t = T::arrow(self.arg.clone(), self.ret.clone());
        for (n, k) in self.type_params.iter().rev() {
            t = T::Forall(n.clone(), k.clone(), Box::new(t));
        }
        t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Var(Name),
    Int(i64),
    Bool(bool),
    Let(Pattern, Box<Expr>, Box<Expr>),
    Fun(Box<Function>),
    TypeApp(Box<Expr>, TypeExpr, Kind),
    Apply(Box<Expr>, Box<Expr>),
    Tuple(Vec<Expr>),
    Construct(Name, Vec<(Name, Expr)>, Option<TypeExpr>),
    Match(Box<Expr>, Vec<(Pattern, Expr)>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Read(Box<Expr>, Name),
    Write(Box<Expr>, Name, Box<Expr>),
    WriteTag(Box<Expr>, Name),
    Give(Box<Expr>, Box<Expr>),
    Take(Box<Expr>, Box<Expr>),
    Taking(Box<Expr>, Box<Expr>, Box<Expr>),
    Prim(PrimOp, Box<Expr>, Box<Expr>),
    Annot(Box<Expr>, TypeExpr),
    Fail,
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }
    pub fn var(n: &str, span: Span) -> Self {
        Expr::new(ExprKind::Var(n.to_string()), span)
    }
    pub fn unit(span: Span) -> Self {
        Expr::new(ExprKind::Tuple(Vec::new()), span)
    }
    pub fn as_var(&self) -> Option<&Name> {
        match &self.kind {
            ExprKind::Var(n) => Some(n),
            _ => None,
        }
    }

    /// Visits every type embedded in the expression tree.
    pub fn any_type(&self, pred: &dyn Fn(&TypeExpr) -> bool) -> bool {
        use ExprKind as E;
        let sub = |e: &Expr| e.any_type(pred);
        match &self.kind {
            E::Var(_) | E::Int(_) | E::Bool(_) | E::Fail => false,
            E::Let(_, a, b) | E::Apply(a, b) | E::Give(a, b) | E::Take(a, b) | E::Prim(_, a, b) => {
                sub(a) || sub(b)
            }
            E::Write(a, _, b) => sub(a) || sub(b),
            E::Fun(f) => pred(&f.arg) || pred(&f.ret) || sub(&f.body),
            E::TypeApp(e, t, _) | E::Annot(e, t) => pred(t) || sub(e),
            E::Tuple(es) => es.iter().any(sub),
            E::Construct(_, fs, adopts) => {
                fs.iter().any(|(_, e)| sub(e)) || adopts.as_ref().is_some_and(pred)
            }
            E::Match(e, arms) => sub(e) || arms.iter().any(|(_, a)| sub(a)),
            E::If(a, b, c) | E::Taking(a, b, c) => sub(a) || sub(b) || sub(c),
            E::Read(e, _) | E::WriteTag(e, _) => sub(e),
        }
    }
}

// ---------------------------------------------------------------------------
// Programs

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub ctor: Name,
    pub fields: Vec<(Name, TypeExpr)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataTypeDef {
    pub name: Name,
    pub mutable: bool,
    pub params: Vec<(Name, Kind)>,
    pub branches: Vec<Branch>,
    pub adopts: TypeExpr,
    pub span: Span,
}

impl DataTypeDef {
    pub fn kind(&self) -> Kind {
        if self.params.is_empty() {
            Kind::Type
        } else {
            Kind::Arrow(self.params.iter().map(|(_, k)| k.clone()).collect(), Box::new(Kind::Type))
        }
    }
    pub fn branch(&self, ctor: &str) -> Option<&Branch> {
        self.branches.iter().find(|b| b.ctor == ctor)
    }
}

/// A fact as written by the user: `fact duplicable a => duplicable list a`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactDecl {
    pub type_name: Name,
    pub args: Vec<Name>,
    pub hypotheses: Vec<(Mode, Name)>,
    pub conclusion: Mode,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbstractDef {
    pub name: Name,
    pub params: Vec<(Name, Kind)>,
    pub result: Kind,
    pub span: Span,
}

impl AbstractDef {
    pub fn kind(&self) -> Kind {
        if self.params.is_empty() {
            self.result.clone()
        } else {
            Kind::Arrow(
                self.params.iter().map(|(_, k)| k.clone()).collect(),
                Box::new(self.result.clone()),
            )
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueDef {
    pub name: Name,
    pub body: Expr,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Item {
    Data(DataTypeDef),
    Abstract(AbstractDef),
    Fact(FactDecl),
    /// `val x = e`, or a function definition `val [rec] f ... = e`.
    Value(ValueDef),
    /// `val x : t`, an axiomatized value with no implementation.
    Decl(Name, TypeExpr, Span),
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Program {
    pub items: Vec<Item>,
}

impl Program {
    pub fn datatypes(&self) -> impl Iterator<Item = &DataTypeDef> {
        self.items.iter().filter_map(|i| match i {
            Item::Data(d) => Some(d),
            _ => None,
        })
    }
    pub fn abstracts(&self) -> impl Iterator<Item = &AbstractDef> {
        self.items.iter().filter_map(|i| match i {
            Item::Abstract(d) => Some(d),
            _ => None,
        })
    }
    pub fn facts(&self) -> impl Iterator<Item = &FactDecl> {
        self.items.iter().filter_map(|i| match i {
            Item::Fact(d) => Some(d),
            _ => None,
        })
    }
    pub fn concat(mut self, other: Program) -> Program {
        self.items.extend(other.items);
        self
    }
}

/// Counter-based supply of fresh names. Generated names carry a `#`
/// suffix, which the lexer never produces, so they cannot clash with
/// source names.
#[derive(Debug, Default)]
pub struct NameSupply {
    next: Cell<u64>,
}

impl NameSupply {
    pub fn new(start: u64) -> Self {
        NameSupply { next: Cell::new(start) }
    }
    pub fn fresh(&self, base: &str) -> Name {
        let n = self.next.get();
        self.next.set(n + 1);
        format!("{}#{n}", base_name(base))
    }
}

/// Strips the `#n` suffix of a generated name.
pub fn base_name(n: &str) -> &str {
    n.split('#').next().unwrap_or(n)
}

pub fn is_generated(n: &str) -> bool {
    n.contains('#')
}

// ---------------------------------------------------------------------------
// Printing

fn write_binders(f: &mut fmt::Formatter<'_>, open: &str, close: &str, t: &TypeExpr) -> fmt::Result {
    // Collapse runs of the same quantifier: `[a, b] t`.
    let mut cur = t;
    let mut parts = Vec::new();
    loop {
        match (open, cur) {
            ("[", T::Forall(b, k, body)) | ("{", T::Exists(b, k, body)) => {
                parts.push(if *k == Kind::Type { b.clone() } else { format!("{b}: {k}") });
                cur = body;
            }
            _ => break,
        }
    }
    write!(f, "{open}{}{close} ", parts.join(", "))?;
    fmt_ty(f, cur, Prec::Top)
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Top,
    Star,
    Prefix,
    App,
    Atom,
}

fn fmt_ty(f: &mut fmt::Formatter<'_>, t: &TypeExpr, ctx: Prec) -> fmt::Result {
    let needed = match t {
        T::Forall(..) | T::Exists(..) | T::InternalArrow(..) | T::ExternalArrow(..) => Prec::Top,
        T::Star(..) => Prec::Star,
        T::Anchored(..) | T::Consumes(_) | T::NameIntro(..) => Prec::Prefix,
        T::App(_, args) if !args.is_empty() => Prec::App,
        T::Structural(s) if !s.adopts.is_bottom() => Prec::App,
        T::Singleton(_) => Prec::App,
        _ => Prec::Atom,
    };
    if needed < ctx {
        write!(f, "(")?;
        fmt_ty(f, t, Prec::Top)?;
        return write!(f, ")");
    }
    match t {
        T::Var(n) => write!(f, "{n}"),
        T::App(h, args) => {
            write!(f, "{h}")?;
            for a in args {
                write!(f, " ")?;
                fmt_ty(f, a, Prec::Atom)?;
            }
            Ok(())
        }
        T::Forall(..) => write_binders(f, "[", "]", t),
        T::Exists(..) => write_binders(f, "{", "}", t),
        T::InternalArrow(a, b) | T::ExternalArrow(a, b) => {
            fmt_ty(f, a, Prec::Star)?;
            write!(f, "{}", if matches!(t, T::InternalArrow(..)) { " ~> " } else { " -> " })?;
            fmt_ty(f, b, Prec::Top)
        }
        T::Star(p, q) => {
            fmt_ty(f, p, Prec::Star)?;
            write!(f, " * ")?;
            fmt_ty(f, q, Prec::Prefix)
        }
        T::Anchored(x, t) => {
            write!(f, "{x} @ ")?;
            fmt_ty(f, t, Prec::App)
        }
        T::Consumes(t) => {
            write!(f, "consumes ")?;
            fmt_ty(f, t, Prec::Prefix)
        }
        T::NameIntro(x, t) => {
            write!(f, "{x}: ")?;
            fmt_ty(f, t, Prec::Prefix)
        }
        T::Singleton(x) => write!(f, "={x}"),
        T::Tuple(ts) => {
            write!(f, "(")?;
            for (i, c) in ts.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                fmt_ty(f, c, Prec::Top)?;
            }
            write!(f, ")")
        }
        T::Bar(t, p) => {
            write!(f, "(")?;
            if !t.is_unit() {
                fmt_ty(f, t, Prec::Top)?;
                write!(f, " ")?;
            }
            write!(f, "| ")?;
            fmt_ty(f, p, Prec::Top)?;
            write!(f, ")")
        }
        T::ModeAnd(m, s, b) => {
            write!(f, "({m} ")?;
            fmt_ty(f, s, Prec::Atom)?;
            write!(f, " | ")?;
            fmt_ty(f, b, Prec::Top)?;
            write!(f, ")")
        }
        T::Structural(s) => {
            write!(f, "{}", s.ctor)?;
            if !s.fields.is_empty() {
                write!(f, " {{ ")?;
                for (i, (name, ft)) in s.fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, "; ")?;
                    }
                    match ft {
                        T::Singleton(y) => write!(f, "{name} = {y}")?,
                        _ => {
                            write!(f, "{name}: ")?;
                            fmt_ty(f, ft, Prec::Top)?;
                        }
                    }
                }
                write!(f, " }}")?;
            }
            if !s.adopts.is_bottom() {
                write!(f, " adopts ")?;
                fmt_ty(f, &s.adopts, Prec::App)?;
            }
            Ok(())
        }
        T::EmptyPerm => write!(f, "empty"),
        T::Dynamic => write!(f, "dynamic"),
        T::Unknown => write!(f, "unknown"),
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_ty(f, self, Prec::Top)
    }
}

/// Renders a type, flattening conjunctions and dropping `empty` units.
pub fn pretty_print(t: &TypeExpr) -> String {
    canonical_perm(t).to_string()
}

/// Removes `empty` units from `*` chains.
pub fn canonical_perm(t: &TypeExpr) -> TypeExpr {
    match t {
        T::Star(p, q) => {
            let (p, q) = (canonical_perm(p), canonical_perm(q));
            match (&p, &q) {
                (T::EmptyPerm, _) => q,
                (_, T::EmptyPerm) => p,
                _ => T::star(p, q),
            }
        }
        T::Bar(a, p) => T::bar(canonical_perm(a), canonical_perm(p)),
        _ => t.clone(),
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Var(n) => write!(f, "{n}"),
            Pattern::Tuple(ps) => {
                write!(f, "(")?;
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, ")")
            }
            Pattern::Construct(c, fs) => {
                write!(f, "{c}")?;
                if !fs.is_empty() {
                    write!(f, " {{ ")?;
                    for (i, (n, p)) in fs.iter().enumerate() {
                        if i > 0 {
                            write!(f, "; ")?;
                        }
                        write!(f, "{n} = {p}")?;
                    }
                    write!(f, " }}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ExprKind as E;
        match &self.kind {
            E::Var(n) => write!(f, "{n}"),
            E::Int(i) => write!(f, "{i}"),
            E::Bool(b) => write!(f, "{b}"),
            E::Let(p, a, b) => write!(f, "let {p} = {a} in\n{b}"),
            E::Fun(func) => {
                write!(f, "fun ")?;
                if !func.type_params.is_empty() {
                    let ps: Vec<String> =
                        func.type_params.iter().map(|(n, k)| format!("{n}: {k}")).collect();
                    write!(f, "[{}] ", ps.join(", "))?;
                }
                match &func.param {
                    Some(p) => write!(f, "({p}: {})", func.arg)?,
                    None => write!(f, "({})", func.arg)?,
                }
                write!(f, " : {} = ({})", func.ret, func.body)
            }
            E::TypeApp(e, t, _) => write!(f, "{e} [{t}]"),
            E::Apply(a, b) => write!(f, "({a} {b})"),
            E::Tuple(es) => {
                write!(f, "(")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
            E::Construct(c, fs, adopts) => {
                write!(f, "{c}")?;
                if !fs.is_empty() {
                    write!(f, " {{ ")?;
                    for (i, (n, e)) in fs.iter().enumerate() {
                        if i > 0 {
                            write!(f, "; ")?;
                        }
                        write!(f, "{n} = {e}")?;
                    }
                    write!(f, " }}")?;
                }
                if let Some(t) = adopts {
                    write!(f, " adopts {t}")?;
                }
                Ok(())
            }
            E::Match(e, arms) => {
                write!(f, "match {e} with")?;
                for (p, a) in arms {
                    write!(f, "\n| {p} -> {a}")?;
                }
                write!(f, "\nend")
            }
            E::If(c, a, b) => write!(f, "if {c} then begin {a} end else begin {b} end"),
            E::Read(e, fld) => write!(f, "{e}.{fld}"),
            E::Write(e, fld, v) => write!(f, "{e}.{fld} <- {v}"),
            E::WriteTag(e, c) => write!(f, "tag of {e} <- {c}"),
            E::Give(a, b) => write!(f, "give {a} to {b}"),
            E::Take(a, b) => write!(f, "take {a} from {b}"),
            E::Taking(a, b, e) => write!(f, "taking {a} from {b} begin {e} end"),
            E::Prim(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            E::Annot(e, t) => write!(f, "({e} : {t})"),
            E::Fail => write!(f, "fail"),
        }
    }
}
