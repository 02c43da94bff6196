//! Translation from the surface syntax to the internal syntax: name
//! introductions, `consumes` and external arrows are removed, and external
//! functions become internal single-argument lambdas.

use crate::kindcheck::collect_bound_names;
use crate::syntax::*;
use std::collections::BTreeSet;

/// An internal arrow with its implicit universal binders.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrowParts {
    pub binders: Vec<(Name, Kind)>,
    pub dom: TypeExpr,
    pub cod: TypeExpr,
}

impl ArrowParts {
    pub fn to_type(&self) -> TypeExpr {
        let mut t = T::arrow(self.dom.clone(), self.cod.clone());
        for (n, k) in self.binders.iter().rev() {
            t = T::Forall(n.clone(), k.clone(), Box::new(t));
        }
        t
    }
}

pub struct Desugarer<'a> {
    pub supply: &'a NameSupply,
    /// Data and abstract types without parameters.
    pub nullary: BTreeSet<Name>,
    /// Type variables bound at kind perm anywhere in the program.
    pub perm_vars: BTreeSet<Name>,
}

impl<'a> Desugarer<'a> {
    pub fn new(supply: &'a NameSupply) -> Self {
        Desugarer { supply, nullary: BTreeSet::new(), perm_vars: BTreeSet::new() }
    }

    pub fn for_program(supply: &'a NameSupply, program: &Program) -> Self {
        let mut d = Desugarer::new(supply);
        for item in &program.items {
            match item {
                Item::Data(dt) if dt.params.is_empty() => {
                    d.nullary.insert(dt.name.clone());
                }
                Item::Abstract(a) if a.params.is_empty() => {
                    d.nullary.insert(a.name.clone());
                }
                _ => {}
            }
        }
        d
    }

    /// Turns bare references to parameterless types into applications.
    pub fn resolve(&self, t: &TypeExpr, bound: &BTreeSet<Name>) -> TypeExpr {
        match t {
            T::Var(n) if self.nullary.contains(n) && !bound.contains(n) => T::App(n.clone(), vec![]),
            T::Forall(b, k, body) | T::Exists(b, k, body) => {
                let mut inner = bound.clone();
                inner.insert(b.clone());
                let body = Box::new(self.resolve(body, &inner));
                if matches!(t, T::Forall(..)) {
                    T::Forall(b.clone(), k.clone(), body)
                } else {
                    T::Exists(b.clone(), k.clone(), body)
                }
            }
            _ => map_children(t, &mut |c| self.resolve(c, bound)),
        }
    }

    /// `t ▷ t'`
    pub fn translate_type(&self, t: &TypeExpr) -> TypeExpr {
        match t {
            T::NameIntro(x, inner) => {
                T::bar(T::singleton(x), T::anchored(x, self.translate_type(inner)))
            }
            T::Consumes(inner) => T::Consumes(Box::new(self.translate_type(inner))),
            T::ExternalArrow(d, c) => self.translate_arrow(d, c),
            T::InternalArrow(d, c) => T::arrow(self.translate_extended(d), self.translate_extended(c)),
            T::App(h, args) => T::App(h.clone(), args.iter().map(|a| self.translate_extended(a)).collect()),
            T::Forall(b, k, body) => T::Forall(b.clone(), k.clone(), Box::new(self.translate_extended(body))),
            T::Exists(b, k, body) => T::Exists(b.clone(), k.clone(), Box::new(self.translate_extended(body))),
            T::Anchored(x, inner) => T::anchored(x, self.translate_extended(inner)),
            T::Structural(s) => T::Structural(StructuralType {
                ctor: s.ctor.clone(),
                fields: s.fields.iter().map(|(f, ft)| (f.clone(), self.translate_type(ft))).collect(),
                adopts: Box::new(self.translate_extended(&s.adopts)),
            }),
            _ => map_children(t, &mut |c| self.translate_type(c)),
        }
    }

    /// `t ▶ t'`: the translation, under existentials for the names it introduces.
    pub fn translate_extended(&self, t: &TypeExpr) -> TypeExpr {
        let names = collect_bound_names(t).unwrap_or_default();
        let mut out = self.translate_type(t);
        for (n, k) in names.into_iter().rev() {
            out = T::Exists(n, k, Box::new(out));
        }
        out
    }

    pub fn translate_arrow(&self, dom: &TypeExpr, cod: &TypeExpr) -> TypeExpr {
        self.arrow_parts(dom, cod).to_type()
    }

    pub fn arrow_parts(&self, dom: &TypeExpr, cod: &TypeExpr) -> ArrowParts {
        let cod2 = self.translate_extended(cod);
        // A domain that is a single named argument uses that name for the
        // whole argument.
        let (named, consumed) = match dom {
            T::NameIntro(_, inner) if matches!(&**inner, T::Consumes(_)) => (Some(dom), true),
            T::NameIntro(..) => (Some(dom), false),
            T::Consumes(inner) if matches!(&**inner, T::NameIntro(..)) => (Some(&**inner), true),
            _ => (None, false),
        };
        if let Some(T::NameIntro(x, inner)) = named.filter(|n| !has_consumes(&erase_outer_consumes(n))) {
            let t1 = self.translate_type(&erase_outer_consumes(inner));
            let dom2 = T::bar(T::singleton(x), T::anchored(x, t1.clone()));
            let cod3 = if consumed { cod2 } else { add_perm(cod2, T::anchored(x, t1)) };
            return ArrowParts { binders: vec![(x.clone(), Kind::Term)], dom: dom2, cod: cod3 };
        }
        let mut binders: Vec<(Name, Kind)> = collect_bound_names(dom).unwrap_or_default();
        let t1 = self.translate_type(dom);
        let t1l = erase_consumes(&t1);
        let t1r = self.replace_consumed(&t1);
        if is_trivial(&t1r) {
            return ArrowParts { binders, dom: t1l, cod: cod2 };
        }
        let r = self.supply.fresh("r");
        binders.push((r.clone(), Kind::Term));
        let dom2 = T::bar(T::singleton(&r), T::anchored(&r, t1l));
        let cod3 = add_perm(cod2, T::anchored(&r, t1r));
        ArrowParts { binders, dom: dom2, cod: cod3 }
    }

    fn is_perm_shaped(&self, t: &TypeExpr) -> bool {
        match t {
            T::Star(..) | T::Anchored(..) | T::EmptyPerm => true,
            T::Var(v) => self.perm_vars.contains(v),
            T::ModeAnd(_, _, b) | T::Forall(_, _, b) | T::Exists(_, _, b) => self.is_perm_shaped(b),
            _ => false,
        }
    }

    /// Replaces each outermost `consumes t` with the top element at t's kind.
    fn replace_consumed(&self, t: &TypeExpr) -> TypeExpr {
        match t {
            T::Consumes(inner) => {
                if self.is_perm_shaped(inner) {
                    T::EmptyPerm
                } else {
                    T::Unknown
                }
            }
            _ => map_children(t, &mut |c| self.replace_consumed(c)),
        }
    }

    /// Reads an argument type as a pattern binding the names it introduces.
    pub fn type_to_pattern(&self, t: &TypeExpr) -> Pattern {
        match t {
            T::NameIntro(x, _) => Pattern::Var(x.clone()),
            T::Tuple(ts) => Pattern::Tuple(ts.iter().map(|c| self.type_to_pattern(c)).collect()),
            T::Structural(s) => Pattern::Construct(
                s.ctor.clone(),
                s.fields.iter().map(|(f, ft)| (f.clone(), self.type_to_pattern(ft))).collect(),
            ),
            T::Consumes(inner) | T::Bar(inner, _) | T::ModeAnd(_, _, inner) => self.type_to_pattern(inner),
            _ => Pattern::Var(self.supply.fresh("arg")),
        }
    }

    /// Translates a surface function into an internal one.
    pub fn translate_function(&self, f: &Function) -> Function {
        self.translate_function_in(f, &BTreeSet::new())
    }

    fn translate_function_in(&self, f: &Function, outer: &BTreeSet<Name>) -> Function {
        let mut bound = outer.clone();
        bound.extend(f.type_params.iter().map(|(n, _)| n.clone()));
        let arg = self.resolve(&f.arg, &bound);
        let ret = self.resolve(&f.ret, &bound);
        let body = self.translate_expr_in(&f.body, &bound);
        if f.param.is_some() {
            return Function {
                arg: self.translate_extended(&arg),
                ret: self.translate_extended(&ret),
                body,
                ..f.clone()
            };
        }
        let parts = self.arrow_parts(&arg, &ret);
        let z = self.supply.fresh("z");
        let pat = self.type_to_pattern(&arg);
        let span = f.body.span;
        let body = Expr::new(
            ExprKind::Let(pat, Box::new(Expr::var(&z, span)), Box::new(body)),
            span,
        );
        let mut type_params = f.type_params.clone();
        type_params.extend(parts.binders);
        Function {
            name: f.name.clone(),
            recursive: f.recursive,
            type_params,
            param: Some(z),
            arg: parts.dom,
            ret: parts.cod,
            body,
        }
    }

    pub fn translate_expr(&self, e: &Expr) -> Expr {
        self.translate_expr_in(e, &BTreeSet::new())
    }

    fn ty_in(&self, t: &TypeExpr, bound: &BTreeSet<Name>) -> TypeExpr {
        self.translate_extended(&self.resolve(t, bound))
    }

    fn translate_expr_in(&self, e: &Expr, bound: &BTreeSet<Name>) -> Expr {
        use ExprKind as E;
        let go = |x: &Expr| Box::new(self.translate_expr_in(x, bound));
        let kind = match &e.kind {
            E::Var(_) | E::Int(_) | E::Bool(_) | E::Fail => e.kind.clone(),
            E::Let(p, a, b) => E::Let(p.clone(), go(a), go(b)),
            E::Fun(f) => E::Fun(Box::new(self.translate_function_in(f, bound))),
            E::TypeApp(x, t, k) => E::TypeApp(go(x), self.ty_in(t, bound), k.clone()),
            E::Annot(x, t) => E::Annot(go(x), self.ty_in(t, bound)),
            E::Apply(a, b) => E::Apply(go(a), go(b)),
            E::Tuple(es) => E::Tuple(es.iter().map(|x| self.translate_expr_in(x, bound)).collect()),
            E::Construct(c, fs, adopts) => E::Construct(
                c.clone(),
                fs.iter().map(|(f, x)| (f.clone(), self.translate_expr_in(x, bound))).collect(),
                adopts.as_ref().map(|t| self.ty_in(t, bound)),
            ),
            E::Match(s, arms) => E::Match(
                go(s),
                arms.iter().map(|(p, a)| (p.clone(), self.translate_expr_in(a, bound))).collect(),
            ),
            E::If(a, b, c) => E::If(go(a), go(b), go(c)),
            E::Read(x, f) => E::Read(go(x), f.clone()),
            E::Write(x, f, v) => E::Write(go(x), f.clone(), go(v)),
            E::WriteTag(x, c) => E::WriteTag(go(x), c.clone()),
            E::Give(a, b) => E::Give(go(a), go(b)),
            E::Take(a, b) => E::Take(go(a), go(b)),
            E::Prim(op, a, b) => E::Prim(*op, go(a), go(b)),
            E::Taking(p, b, body) => {
                // let y = p in take y from b; let r = body in give y to b; r
                let sp = e.span;
                let y = self.supply.fresh("taken");
                let r = self.supply.fresh("res");
                let bvar = self.supply.fresh("owner");
                let v = |n: &str| Expr::var(n, sp);
                let seq = |a: Expr, rest: Expr| {
                    Expr::new(E::Let(Pattern::Var("_".into()), Box::new(a), Box::new(rest)), sp)
                };
                let give = Expr::new(E::Give(Box::new(v(&y)), Box::new(v(&bvar))), sp);
                let inner = Expr::new(
                    E::Let(Pattern::Var(r.clone()), go(body), Box::new(seq(give, v(&r)))),
                    sp,
                );
                let take = Expr::new(E::Take(Box::new(v(&y)), Box::new(v(&bvar))), sp);
                let with_y = Expr::new(E::Let(Pattern::Var(y), go(p), Box::new(seq(take, inner))), sp);
                E::Let(Pattern::Var(bvar), go(b), Box::new(with_y))
            }
        };
        Expr::new(kind, e.span)
    }

    pub fn desugar_program(&mut self, program: &Program) -> Program {
        self.perm_vars = collect_perm_binders(program);
        let empty = BTreeSet::new();
        let items = program
            .items
            .iter()
            .map(|item| match item {
                Item::Data(d) => {
                    let bound: BTreeSet<Name> = d.params.iter().map(|(n, _)| n.clone()).collect();
                    Item::Data(DataTypeDef {
                        branches: d
                            .branches
                            .iter()
                            .map(|b| Branch {
                                ctor: b.ctor.clone(),
                                fields: b.fields.iter().map(|(f, t)| (f.clone(), self.ty_in(t, &bound))).collect(),
                            })
                            .collect(),
                        adopts: self.ty_in(&d.adopts, &bound),
                        ..d.clone()
                    })
                }
                Item::Decl(x, t, sp) => Item::Decl(x.clone(), self.ty_in(t, &empty), *sp),
                Item::Value(v) => Item::Value(ValueDef { body: self.translate_expr(&v.body), ..v.clone() }),
                other => other.clone(),
            })
            .collect();
        Program { items }
    }
}

/// Rebuilds a type by applying `f` to each immediate child.
pub fn map_children(t: &TypeExpr, f: &mut dyn FnMut(&TypeExpr) -> TypeExpr) -> TypeExpr {
    match t {
        T::Var(_) | T::Singleton(_) | T::EmptyPerm | T::Dynamic | T::Unknown => t.clone(),
        T::InternalArrow(a, b) => T::arrow(f(a), f(b)),
        T::ExternalArrow(a, b) => T::earrow(f(a), f(b)),
        T::Bar(a, b) => T::bar(f(a), f(b)),
        T::Star(a, b) => T::star(f(a), f(b)),
        T::ModeAnd(m, a, b) => T::ModeAnd(*m, Box::new(f(a)), Box::new(f(b))),
        T::Tuple(ts) => T::Tuple(ts.iter().map(|c| f(c)).collect()),
        T::App(h, ts) => T::App(h.clone(), ts.iter().map(|c| f(c)).collect()),
        T::Structural(s) => T::Structural(StructuralType {
            ctor: s.ctor.clone(),
            fields: s.fields.iter().map(|(n, c)| (n.clone(), f(c))).collect(),
            adopts: Box::new(f(&s.adopts)),
        }),
        T::Forall(b, k, body) => T::Forall(b.clone(), k.clone(), Box::new(f(body))),
        T::Exists(b, k, body) => T::Exists(b.clone(), k.clone(), Box::new(f(body))),
        T::Anchored(x, c) => T::Anchored(x.clone(), Box::new(f(c))),
        T::Consumes(c) => T::Consumes(Box::new(f(c))),
        T::NameIntro(x, c) => T::NameIntro(x.clone(), Box::new(f(c))),
    }
}

fn has_consumes(t: &TypeExpr) -> bool {
    let mut found = false;
    map_children(t, &mut |c| {
        found |= matches!(c, T::Consumes(_)) || has_consumes(c);
        c.clone()
    });
    found
}

/// `x: consumes t` and `consumes x: t` read the same.
fn erase_outer_consumes(t: &TypeExpr) -> TypeExpr {
    match t {
        T::Consumes(inner) => erase_outer_consumes(inner),
        T::NameIntro(x, inner) => T::NameIntro(x.clone(), Box::new(erase_outer_consumes(inner))),
        other => other.clone(),
    }
}

fn erase_consumes(t: &TypeExpr) -> TypeExpr {
    match t {
        T::Consumes(inner) => erase_consumes(inner),
        _ => map_children(t, &mut erase_consumes),
    }
}

fn is_trivial(t: &TypeExpr) -> bool {
    match t {
        T::Unknown | T::EmptyPerm => true,
        T::Tuple(ts) => !ts.is_empty() && ts.iter().all(is_trivial),
        _ => false,
    }
}

/// `(t | P)` extended with one more permission.
fn add_perm(t: TypeExpr, p: TypeExpr) -> TypeExpr {
    match t {
        T::Bar(a, q) => T::bar(*a, T::star(*q, p)),
        other => T::bar(other, p),
    }
}

fn collect_perm_binders(program: &Program) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    fn in_type(t: &TypeExpr, out: &mut BTreeSet<Name>) {
        if let T::Forall(b, Kind::Perm, _) | T::Exists(b, Kind::Perm, _) = t {
            out.insert(b.clone());
        }
        t.for_each_child(&mut |c| in_type(c, out));
    }
    fn in_expr(e: &Expr, out: &mut BTreeSet<Name>) {
        if let ExprKind::Fun(f) = &e.kind {
            for (n, k) in &f.type_params {
                if *k == Kind::Perm {
                    out.insert(n.clone());
                }
            }
            in_type(&f.arg, out);
            in_type(&f.ret, out);
            in_expr(&f.body, out);
            return;
        }
        for_each_subexpr(e, &mut |c| in_expr(c, out));
    }
    for item in &program.items {
        match item {
            Item::Data(d) => {
                for (n, k) in &d.params {
                    if *k == Kind::Perm {
                        out.insert(n.clone());
                    }
                }
            }
            Item::Abstract(a) => {
                for (n, k) in &a.params {
                    if *k == Kind::Perm {
                        out.insert(n.clone());
                    }
                }
            }
            Item::Decl(_, t, _) => in_type(t, &mut out),
            Item::Value(v) => in_expr(&v.body, &mut out),
            Item::Fact(_) => {}
        }
    }
    out
}

pub fn for_each_subexpr(e: &Expr, f: &mut dyn FnMut(&Expr)) {
    use ExprKind as E;
    match &e.kind {
        E::Var(_) | E::Int(_) | E::Bool(_) | E::Fail => {}
        E::Let(_, a, b) | E::Apply(a, b) | E::Give(a, b) | E::Take(a, b) | E::Prim(_, a, b) | E::Write(a, _, b) => {
            f(a);
            f(b)
        }
        E::Fun(func) => f(&func.body),
        E::TypeApp(x, _, _) | E::Annot(x, _) | E::Read(x, _) | E::WriteTag(x, _) => f(x),
        E::Tuple(es) => es.iter().for_each(f),
        E::Construct(_, fs, _) => fs.iter().for_each(|(_, x)| f(x)),
        E::Match(s, arms) => {
            f(s);
            arms.iter().for_each(|(_, a)| f(a))
        }
        E::If(a, b, c) | E::Taking(a, b, c) => {
            f(a);
            f(b);
            f(c)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_expr, parse_type};

    fn translate(src: &str) -> TypeExpr {
        let supply = NameSupply::new(0);
        let d = Desugarer::new(&supply);
        d.translate_extended(&parse_type(src).unwrap())
    }

    fn same(a: &TypeExpr, b: &str) {
        let b = parse_type(b).unwrap();
        assert!(alpha_equal(a, &b), "{a}\n  vs {b}");
    }

    #[test]
    fn name_intro_in_tuple() {
        let t = translate("(x: int, =x)");
        same(&t, "{x: term} ((=x | x @ int), =x)");
    }

    #[test]
    fn singleton_is_unchanged() {
        assert_eq!(translate("=y"), T::singleton("y"));
    }

    #[test]
    fn consumes_stays_until_the_arrow() {
        let supply = NameSupply::new(0);
        let d = Desugarer::new(&supply);
        let t = d.translate_type(&parse_type("consumes (x: int)").unwrap());
        assert!(matches!(t, T::Consumes(_)));
    }

    #[test]
    fn assign_golden() {
        let t = translate("[a, b] (consumes x: ref a, consumes b) -> (| x @ ref b)");
        same(&t, "[a, b] [x: term] ((=x | x @ ref a), b) ~> (| x @ ref b)");
    }

    #[test]
    fn length_golden() {
        let t = translate("[a] list a -> int");
        same(&t, "[a] [x: term] (=x | x @ list a) ~> (int | x @ list a)");
    }

    #[test]
    fn insert_golden() {
        let t = translate("[a] (consumes a, bag a) -> ()");
        same(&t, "[a] [x: term] (=x | x @ (a, bag a)) ~> (| x @ (unknown, bag a))");
    }

    #[test]
    fn swap_golden() {
        let t = translate("[a, b] (consumes x: mpair a b) -> (| x @ mpair b a)");
        same(&t, "[a, b] [x: term] (=x | x @ mpair a b) ~> (| x @ mpair b a)");
    }

    #[test]
    fn consumes_inside_a_name() {
        same(
            &translate("(x: consumes ref int) -> int"),
            "[x: term] (=x | x @ ref int) ~> int",
        );
        let t = translate("(x: (consumes ref int, int)) -> int");
        assert!(!t.has_surface_nodes(), "{t}");
    }

    #[test]
    fn surface_nodes_are_gone() {
        for s in [
            "[a] (consumes x: ref a, y: (int, z: int) -> int) -> (| x @ ref a)",
            "(p: int -> (q: int), consumes (int | empty)) -> (r: int)",
        ] {
            assert!(!translate(s).has_surface_nodes(), "{s}");
        }
    }

    #[test]
    fn patterns_from_types() {
        let supply = NameSupply::new(0);
        let d = Desugarer::new(&supply);
        let p = d.type_to_pattern(&parse_type("(x: ref a, y: b)").unwrap());
        assert_eq!(p, Pattern::Tuple(vec![Pattern::Var("x".into()), Pattern::Var("y".into())]));
        assert!(matches!(d.type_to_pattern(&parse_type("int").unwrap()), Pattern::Var(n) if n.contains('#')));
        let p = d.type_to_pattern(
            &parse_type("(consumes dst: MCons { head: a; tail: () }, consumes xs: list a, consumes ys: list a)").unwrap(),
        );
        assert_eq!(p.bound_names(), vec!["dst", "xs", "ys"]);
    }

    #[test]
    fn functions_become_lambdas() {
        let supply = NameSupply::new(0);
        let d = Desugarer::new(&supply);
        let e = parse_expr("fun (x: int, y: int) : int = x + y").unwrap();
        let out = d.translate_expr(&e);
        let ExprKind::Fun(f) = out.kind else { panic!() };
        let z = f.param.clone().unwrap();
        let ExprKind::Let(p, v, _) = &f.body.kind else { panic!() };
        assert_eq!(v.as_var(), Some(&z));
        assert_eq!(p.bound_names(), vec!["x", "y"]);
        assert!(!f.arg.has_surface_nodes() && !f.ret.has_surface_nodes());
        let plain = parse_expr("let x = 1 in x").unwrap();
        assert_eq!(d.translate_expr(&plain), plain);
    }

    #[test]
    fn idempotent_on_internal_types() {
        let t = translate("[a] (x: list a) -> int");
        assert!(alpha_equal(&translate(&t.to_string()), &t));
    }
}
