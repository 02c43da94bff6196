//! Kinding for surface and internal types, with the left/right side
//! discipline for `consumes` and the collection of introduced names.

use crate::syntax::*;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{message}")]
pub struct KindError {
    pub rule: &'static str,
    pub message: String,
    pub span: Span,
}

fn kerr<T>(rule: &'static str, message: impl Into<String>) -> Result<T, KindError> {
    Err(KindError { rule, message: message.into(), span: Span::default() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Ordered bindings; later bindings mask earlier ones.
#[derive(Clone, Debug, Default)]
pub struct KindEnv {
    bindings: Vec<(Name, Kind)>,
}

impl KindEnv {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn lookup(&self, n: &str) -> Option<&Kind> {
        self.bindings.iter().rev().find(|(m, _)| m == n).map(|(_, k)| k)
    }
    pub fn push(&mut self, n: &str, k: Kind) {
        self.bindings.push((n.to_string(), k));
    }
    /// `Γ; Γ'`
    pub fn extended(&self, more: &[(Name, Kind)]) -> KindEnv {
        let mut e = self.clone();
        e.bindings.extend(more.iter().cloned());
        e
    }
    pub fn names(&self) -> impl Iterator<Item = &(Name, Kind)> {
        self.bindings.iter()
    }
}

/// `⊎`: fails when the same name is bound twice.
fn disjoint_union(parts: Vec<Vec<(Name, Kind)>>) -> Result<Vec<(Name, Kind)>, KindError> {
    let mut out: Vec<(Name, Kind)> = Vec::new();
    for p in parts {
        for (n, k) in p {
            if out.iter().any(|(m, _)| *m == n) {
                return kerr("DuplicateName", format!("name `{n}` is introduced twice"));
            }
            out.push((n, k));
        }
    }
    Ok(out)
}

/// Names introduced by a type, collected through tuples, structural
/// fields, the left of a bar, `consumes` and mode assumptions.
pub fn collect_bound_names(t: &TypeExpr) -> Result<Vec<(Name, Kind)>, KindError> {
    match t {
        T::NameIntro(x, _) => Ok(vec![(x.clone(), Kind::Term)]),
        T::Tuple(ts) => disjoint_union(ts.iter().map(collect_bound_names).collect::<Result<_, _>>()?),
        T::Structural(s) => {
            disjoint_union(s.fields.iter().map(|(_, t)| collect_bound_names(t)).collect::<Result<_, _>>()?)
        }
        T::Bar(t, _) | T::Consumes(t) | T::ModeAnd(_, _, t) => collect_bound_names(t),
        _ => Ok(Vec::new()),
    }
}

/// Everything the kind checker needs to know about the program's types.
#[derive(Clone, Debug, Default)]
pub struct TypeTable {
    /// Data type name to its field names per constructor.
    pub ctors: BTreeMap<Name, (Name, Vec<Name>)>,
}

pub struct KindChecker<'a> {
    pub table: &'a TypeTable,
}

impl<'a> KindChecker<'a> {
    pub fn new(table: &'a TypeTable) -> Self {
        KindChecker { table }
    }

    /// `Γ ⊢▸ t : κ`
    pub fn kind_of_extended(&self, env: &KindEnv, t: &TypeExpr) -> Result<Kind, KindError> {
        let bv = collect_bound_names(t)?;
        self.kind_of(&env.extended(&bv), Side::Right, t)
    }

    pub fn check_extended(&self, env: &KindEnv, t: &TypeExpr, want: &Kind) -> Result<(), KindError> {
        let k = self.kind_of_extended(env, t)?;
        expect_kind(t, &k, want)
    }

    fn check(&self, env: &KindEnv, side: Side, t: &TypeExpr, want: &Kind) -> Result<(), KindError> {
        let k = self.kind_of(env, side, t)?;
        expect_kind(t, &k, want)
    }

    fn term_bound(&self, env: &KindEnv, x: &str, rule: &'static str) -> Result<(), KindError> {
        match env.lookup(x) {
            Some(Kind::Term) => Ok(()),
            Some(k) => kerr(rule, format!("`{x}` has kind {k}, expected term")),
            None => kerr(rule, format!("unbound term variable `{x}`")),
        }
    }

    /// `Γ, s ⊢ t : κ`
    pub fn kind_of(&self, env: &KindEnv, side: Side, t: &TypeExpr) -> Result<Kind, KindError> {
        match t {
            T::Var(x) => match env.lookup(x) {
                Some(k) => Ok(k.clone()),
                None => kerr("K-Var", format!("unbound type variable `{x}`")),
            },
            T::Dynamic | T::Unknown => Ok(Kind::Type),
            T::EmptyPerm => Ok(Kind::Perm),
            T::InternalArrow(a, b) => {
                self.check(env, Side::Right, a, &Kind::Type)?;
                self.check(env, Side::Right, b, &Kind::Type)?;
                Ok(Kind::Type)
            }
            T::ExternalArrow(a, b) => {
                let bv = collect_bound_names(a)?;
                let env2 = env.extended(&bv);
                self.check(&env2, Side::Left, a, &Kind::Type)?;
                self.check_extended(&env2, b, &Kind::Type)?;
                Ok(Kind::Type)
            }
            T::Tuple(ts) => {
                for c in ts {
                    self.check(env, side, c, &Kind::Type)?;
                }
                Ok(Kind::Type)
            }
            T::Structural(s) => {
                let Some((_, fields)) = self.table.ctors.get(&s.ctor) else {
                    return kerr("K-Concrete", format!("unknown constructor `{}`", s.ctor));
                };
                let given: BTreeSet<&Name> = s.fields.iter().map(|(f, _)| f).collect();
                let wanted: BTreeSet<&Name> = fields.iter().collect();
                if given != wanted || given.len() != s.fields.len() {
                    return kerr(
                        "K-Concrete",
                        format!("constructor `{}` expects fields {{{}}}", s.ctor, fields.join(", ")),
                    );
                }
                for (_, ft) in &s.fields {
                    self.check(env, side, ft, &Kind::Type)?;
                }
                if !collect_bound_names(&s.adopts)?.is_empty() {
                    return kerr("K-Concrete", "an adopts clause cannot introduce names");
                }
                self.check(env, Side::Right, &s.adopts, &Kind::Type)?;
                Ok(Kind::Type)
            }
            T::App(h, args) => {
                let Some(k) = env.lookup(h) else {
                    return kerr("K-Var", format!("unbound type `{h}`"));
                };
                let Kind::Arrow(params, res) = k else {
                    return kerr("K-App", format!("`{h}` has kind {k} and cannot be applied"));
                };
                if params.len() != args.len() {
                    return kerr(
                        "K-App",
                        format!("`{h}` expects {} arguments, got {}", params.len(), args.len()),
                    );
                }
                for (a, pk) in args.iter().zip(params) {
                    self.check_extended(env, a, pk)?;
                }
                Ok((**res).clone())
            }
            T::Forall(x, k, body) | T::Exists(x, k, body) => {
                let env2 = env.extended(&[(x.clone(), k.clone())]);
                self.kind_of_extended(&env2, body)
            }
            T::NameIntro(x, inner) => {
                self.term_bound(env, x, "K-NameIntro")?;
                self.check(env, side, inner, &Kind::Type)?;
                Ok(Kind::Type)
            }
            T::Consumes(inner) => {
                if side != Side::Left {
                    return kerr("K-Consumes", "`consumes` may only appear in the domain of a function type");
                }
                let k = self.kind_of(env, Side::Right, inner)?;
                if k != Kind::Type && k != Kind::Perm {
                    return kerr("K-Consumes", format!("cannot consume something of kind {k}"));
                }
                Ok(k)
            }
            T::Bar(a, p) => {
                self.check(env, side, a, &Kind::Type)?;
                self.check(env, side, p, &Kind::Perm)?;
                Ok(Kind::Type)
            }
            T::Singleton(x) => {
                self.term_bound(env, x, "K-Singleton")?;
                Ok(Kind::Type)
            }
            T::ModeAnd(_, subject, body) => {
                let k = self.kind_of(env, side, subject)?;
                if k != Kind::Type && k != Kind::Perm {
                    return kerr("K-And", format!("a mode constraint needs a type or a permission, not {k}"));
                }
                self.kind_of(env, side, body)
            }
            T::Star(p, q) => {
                self.check(env, side, p, &Kind::Perm)?;
                self.check(env, side, q, &Kind::Perm)?;
                Ok(Kind::Perm)
            }
            T::Anchored(x, inner) => {
                self.term_bound(env, x, "K-Anchored")?;
                self.check_extended(env, inner, &Kind::Type)?;
                Ok(Kind::Perm)
            }
        }
    }
}

fn expect_kind(t: &TypeExpr, got: &Kind, want: &Kind) -> Result<(), KindError> {
    if got == want {
        return Ok(());
    }
    if let (Kind::Arrow(..), T::Var(h)) = (got, t) {
        return kerr("K-App", format!("`{h}` must be applied to its parameters"));
    }
    kerr("K-Kind", format!("`{t}` has kind {got}, expected {want}"))
}

fn with_span<T>(r: Result<T, KindError>, span: Span) -> Result<T, KindError> {
    r.map_err(|mut e| {
        if e.span == Span::default() {
            e.span = span;
        }
        e
    })
}

/// Kind environment holding every named type of the program.
pub fn global_env(program: &Program) -> Result<(KindEnv, TypeTable), KindError> {
    let mut env = KindEnv::new();
    let mut table = TypeTable::default();
    let mut seen = BTreeSet::new();
    for item in &program.items {
        let (name, kind, span) = match item {
            Item::Data(d) => (&d.name, d.kind(), d.span),
            Item::Abstract(a) => (&a.name, a.kind(), a.span),
            _ => continue,
        };
        if !seen.insert(name.clone()) {
            return with_span(kerr("DuplicateName", format!("type `{name}` is defined twice")), span);
        }
        env.push(name, kind);
        if let Item::Data(d) = item {
            for b in &d.branches {
                if table.ctors.contains_key(&b.ctor) {
                    return with_span(
                        kerr("DuplicateName", format!("constructor `{}` is defined twice", b.ctor)),
                        d.span,
                    );
                }
                let fields: Vec<Name> = b.fields.iter().map(|(f, _)| f.clone()).collect();
                table.ctors.insert(b.ctor.clone(), (d.name.clone(), fields));
            }
        }
    }
    Ok((env, table))
}

/// Checks every definition, declaration, annotation and signature.
pub fn check_program(program: &Program) -> Result<(), KindError> {
    let (genv, table) = global_env(program)?;
    let kc = KindChecker::new(&table);
    let mut terms = genv.clone();
    for item in &program.items {
        match item {
            Item::Data(d) => {
                let env = genv.extended(&d.params);
                for b in &d.branches {
                    let mut names = BTreeSet::new();
                    for (f, t) in &b.fields {
                        if !names.insert(f) {
                            return with_span(
                                kerr("DuplicateName", format!("field `{f}` appears twice in `{}`", b.ctor)),
                                d.span,
                            );
                        }
                        with_span(kc.check_extended(&env, t, &Kind::Type), d.span)?;
                    }
                }
                if !with_span(collect_bound_names(&d.adopts), d.span)?.is_empty() {
                    return with_span(kerr("K-Concrete", "an adopts clause cannot introduce names"), d.span);
                }
                with_span(kc.check(&env, Side::Right, &d.adopts, &Kind::Type), d.span)?;
            }
            Item::Abstract(_) => {}
            Item::Fact(f) => {
                let span = f.span;
                let Some(k) = genv.lookup(&f.type_name) else {
                    return with_span(kerr("K-Var", format!("unbound type `{}`", f.type_name)), span);
                };
                let arity = match k {
                    Kind::Arrow(ps, _) => ps.len(),
                    _ => 0,
                };
                if arity != f.args.len() {
                    return with_span(
                        kerr("K-App", format!("`{}` expects {arity} arguments", f.type_name)),
                        span,
                    );
                }
                for (_, a) in &f.hypotheses {
                    if !f.args.contains(a) {
                        return with_span(kerr("K-Var", format!("`{a}` is not a parameter")), span);
                    }
                }
            }
            Item::Decl(x, t, span) => {
                with_span(kc.check_extended(&terms, t, &Kind::Type), *span)?;
                terms.push(x, Kind::Term);
            }
            Item::Value(v) => {
                let mut env = terms.clone();
                let recursive = matches!(&v.body.kind, ExprKind::Fun(f) if f.recursive);
                if recursive {
                    env.push(&v.name, Kind::Term);
                }
                check_expr(&kc, &env, &v.body)?;
                terms.push(&v.name, Kind::Term);
            }
        }
    }
    Ok(())
}

fn bind_pattern(env: &KindEnv, p: &Pattern) -> KindEnv {
    let names: Vec<(Name, Kind)> = p.bound_names().into_iter().map(|n| (n, Kind::Term)).collect();
    env.extended(&names)
}

fn check_expr(kc: &KindChecker, env: &KindEnv, e: &Expr) -> Result<(), KindError> {
    use ExprKind as E;
    let sp = e.span;
    let go = |env: &KindEnv, e: &Expr| check_expr(kc, env, e);
    match &e.kind {
        E::Var(_) | E::Int(_) | E::Bool(_) | E::Fail => Ok(()),
        E::Let(p, a, b) => {
            go(env, a)?;
            go(&bind_pattern(env, p), b)
        }
        E::Fun(f) => {
            let mut fenv = env.extended(&f.type_params);
            if let Some(n) = &f.name {
                if f.recursive {
                    fenv.push(n, Kind::Term);
                }
            }
            let sig = match &f.param {
                None => T::earrow(f.arg.clone(), f.ret.clone()),
                Some(_) => T::arrow(f.arg.clone(), f.ret.clone()),
            };
            with_span(kc.kind_of(&fenv, Side::Right, &sig).map(|_| ()), sp)?;
            let mut benv = match &f.param {
                None => fenv.extended(&with_span(collect_bound_names(&f.arg), sp)?),
                Some(p) => fenv.extended(&[(p.clone(), Kind::Term)]),
            };
            if let Some(p) = &f.param {
                benv.push(p, Kind::Term);
            }
            go(&benv, &f.body)
        }
        E::TypeApp(x, t, _) => {
            with_span(kc.kind_of_extended(env, t).map(|_| ()), sp)?;
            go(env, x)
        }
        E::Annot(x, t) => {
            with_span(kc.check_extended(env, t, &Kind::Type), sp)?;
            go(env, x)
        }
        E::Apply(a, b) | E::Give(a, b) | E::Take(a, b) | E::Prim(_, a, b) | E::Write(a, _, b) => {
            go(env, a)?;
            go(env, b)
        }
        E::Tuple(es) => es.iter().try_for_each(|x| go(env, x)),
        E::Construct(_, fs, adopts) => {
            if let Some(t) = adopts {
                with_span(kc.check_extended(env, t, &Kind::Type), sp)?;
            }
            fs.iter().try_for_each(|(_, x)| go(env, x))
        }
        E::Match(s, arms) => {
            go(env, s)?;
            arms.iter().try_for_each(|(p, a)| go(&bind_pattern(env, p), a))
        }
        E::If(a, b, c) | E::Taking(a, b, c) => {
            go(env, a)?;
            go(env, b)?;
            go(env, c)
        }
        E::Read(x, _) | E::WriteTag(x, _) => go(env, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_program, parse_type};

    fn table() -> TypeTable {
        let mut t = TypeTable::default();
        t.ctors.insert("MCons".into(), ("mlist".into(), vec!["head".into(), "tail".into()]));
        t
    }

    fn base_env() -> KindEnv {
        let mut env = KindEnv::new();
        env.push("ref", Kind::Arrow(vec![Kind::Type], Box::new(Kind::Type)));
        env.push("list", Kind::Arrow(vec![Kind::Type], Box::new(Kind::Type)));
        env.push("int", Kind::Type);
        env.push("a", Kind::Type);
        env.push("b", Kind::Type);
        env
    }

    #[test]
    fn bound_names() {
        let t = parse_type("(x: int, =x)").unwrap();
        assert_eq!(collect_bound_names(&t).unwrap(), vec![("x".to_string(), Kind::Term)]);
        let t = parse_type("[a] (x: a)").unwrap();
        assert!(collect_bound_names(&t).unwrap().is_empty());
        let t = parse_type("(x: int, x: int)").unwrap();
        assert_eq!(collect_bound_names(&t).unwrap_err().rule, "DuplicateName");
    }

    #[test]
    fn assign_type_is_well_kinded() {
        let tab = table();
        let kc = KindChecker::new(&tab);
        let t = parse_type("(consumes x: ref a, consumes b) -> (| x @ ref b)").unwrap();
        assert_eq!(kc.kind_of_extended(&base_env(), &t).unwrap(), Kind::Type);
    }

    #[test]
    fn consumes_side() {
        let tab = table();
        let kc = KindChecker::new(&tab);
        let t = parse_type("consumes int").unwrap();
        assert_eq!(kc.kind_of(&base_env(), Side::Right, &t).unwrap_err().rule, "K-Consumes");
        let t = parse_type("int -> consumes int").unwrap();
        assert_eq!(kc.kind_of_extended(&base_env(), &t).unwrap_err().rule, "K-Consumes");
    }

    #[test]
    fn applications() {
        let tab = table();
        let kc = KindChecker::new(&tab);
        let env = base_env();
        assert_eq!(kc.kind_of(&env, Side::Right, &T::app("list", vec![T::var("int")])).unwrap(), Kind::Type);
        assert_eq!(kc.kind_of(&env, Side::Right, &T::app("list", vec![])).unwrap_err().rule, "K-App");
        let t = parse_type("(int, list)").unwrap();
        assert_eq!(kc.kind_of(&env, Side::Right, &t).unwrap_err().rule, "K-App");
        let t = parse_type("(int, c)").unwrap();
        assert_eq!(kc.kind_of(&env, Side::Right, &t).unwrap_err().rule, "K-Var");
    }

    #[test]
    fn singletons_need_terms() {
        let tab = table();
        let kc = KindChecker::new(&tab);
        let t = parse_type("=a").unwrap();
        assert_eq!(kc.kind_of(&base_env(), Side::Right, &t).unwrap_err().rule, "K-Singleton");
        let t = parse_type("{x: term} (=x | x @ int)").unwrap();
        assert_eq!(kc.kind_of(&base_env(), Side::Right, &t).unwrap(), Kind::Type);
    }

    #[test]
    fn structural_fields_must_match() {
        let tab = table();
        let kc = KindChecker::new(&tab);
        let ok = parse_type("MCons { head: int; tail: () }").unwrap();
        assert!(kc.kind_of(&base_env(), Side::Right, &ok).is_ok());
        let bad = parse_type("MCons { head: int }").unwrap();
        assert_eq!(kc.kind_of(&base_env(), Side::Right, &bad).unwrap_err().rule, "K-Concrete");
    }

    #[test]
    fn programs() {
        let ok = "data list a = Nil | Cons { head: a; tail: list a }\n\
                  val f [a] (consumes x: list a) : (| x @ list a) = x";
        assert!(check_program(&parse_program(ok).unwrap()).is_ok());
        let bad = "data list a = Nil | Cons { head: a; tail: list a }\n\
                   val f [a] (x: list a) : consumes list a = x";
        let err = check_program(&parse_program(bad).unwrap()).unwrap_err();
        assert_eq!(err.rule, "K-Consumes");
        assert_eq!(err.span.line, 2);
    }
}
