use super::{ensure, opts, program};
use mzc::driver::{check_source, frontend, Frontend};
use mzc::facts::{mode_join, mode_meet, Fact, Hyp};
use mzc::parser::parse_type;
use mzc::permissions::PermEnv;
use mzc::syntax::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::BTreeMap;

// 2 ------------------------------------------------------------------------

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\'' || c == '#'
}

/// Replaces whole identifiers.
fn subst(s: &str, map: &BTreeMap<&str, &str>) -> String {
    let mut out = String::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        out.push_str(map.get(word.as_str()).copied().unwrap_or(word.as_str()));
        word.clear();
    };
    for c in s.chars() {
        if is_ident_char(c) {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn generated_names(atoms: &[String]) -> Vec<String> {
    let mut names: Vec<String> = atoms
        .iter()
        .flat_map(|a| a.split(|c| !is_ident_char(c)).filter(|w| w.contains('#')).map(str::to_string))
        .collect();
    names.sort();
    names.dedup();
    names
}

/// Every injective assignment of `placeholders` to `names`.
fn assignments<'a>(placeholders: &[&'a str], names: &'a [String]) -> Vec<BTreeMap<&'a str, &'a str>> {
    let Some((first, rest)) = placeholders.split_first() else {
        return vec![BTreeMap::new()];
    };
    let mut out = Vec::new();
    for n in names {
        for mut m in assignments(rest, names) {
            if !m.values().any(|v| v == n) {
                m.insert(first, n.as_str());
                out.push(m);
            }
        }
    }
    out
}

/// The listing equals ours once the placeholders are mapped one-to-one
/// onto our generated names.
fn same_atoms(ours: &[String], expected: &[&str], placeholders: &[&str]) -> bool {
    let names = generated_names(ours);
    if names.len() != placeholders.len() {
        return false;
    }
    let mut ours = ours.to_vec();
    ours.sort();
    assignments(placeholders, &names).iter().any(|m| {
        let mut theirs: Vec<String> = expected.iter().map(|a| subst(a, m)).collect();
        theirs.sort();
        theirs == ours
    })
}

fn parsed_atom(a: &str) -> (Name, TypeExpr) {
    let src = a.replace('#', "_g");
    match parse_type(&src) {
        Ok(T::Anchored(x, t)) => (x, *t),
        other => panic!("cannot read atom {a}: {other:?}"),
    }
}

/// Our permission can be rewritten into the listing, and what it does not
/// mention is duplicable.
fn entails(fe: &Frontend, ours: &[String], expected: &[&str], placeholders: &[&str]) -> Result<(), String> {
    let ctx = fe.ctx(8);
    let mut env = PermEnv::new();
    for a in ours {
        let (x, t) = parsed_atom(a);
        env.add(&ctx, &x, &t);
    }
    let names: Vec<String> = generated_names(ours).iter().map(|n| n.replace('#', "_g")).collect();
    let mut last = String::new();
    for m in assignments(placeholders, &names) {
        let wanted = expected.iter().map(|a| subst(a, &m)).collect::<Vec<_>>().join(" * ");
        let p = parse_type(&wanted).map_err(|e| format!("{wanted}: {e}"))?;
        match env.subsume(&ctx, &p) {
            Ok(rest) => {
                let leftover: Vec<String> = rest
                    .all_atoms()
                    .filter(|(_, t)| !rest.is_duplicable(&ctx, t))
                    .map(|(x, t)| format!("{x} @ {t}"))
                    .collect();
                if leftover.is_empty() {
                    return Ok(());
                }
                last = format!("unaccounted: {leftover:?}");
            }
            Err(f) => last = format!("missing {}", f.goal),
        }
    }
    Err(last)
}

pub fn walkthrough() -> Result<(), String> {
    let src = program("append.mz");
    let (fe, report) = check_source(&src, &opts()).map_err(|e| e.to_string())?;
    let at = |f: &str, line: u32, after: bool| {
        report.at(f, line, after).map(|s| s.atoms.clone()).ok_or(format!("no snapshot {f}:{line}"))
    };
    let exact: [(&str, u32, bool, &[&str], &[&str]); 5] = [
        ("append", 26, false, &["xs @ list a", "ys @ list a"], &[]),
        ("append", 28, false, &["xs @ Nil", "ys @ list a"], &[]),
        (
            "append",
            30,
            false,
            &["xs @ Cons { head = hd; tail = tl }", "hd @ a", "tl @ list a", "ys @ list a"],
            &["hd", "tl"],
        ),
        (
            "append",
            32,
            false,
            &[
                "xs @ Cons { head = hd; tail = tl }",
                "hd @ a",
                "tl @ list a",
                "ys @ list a",
                "dst @ MCons { head = hd; tail: () }",
            ],
            &["hd", "tl"],
        ),
        ("append", 32, true, &["xs @ Cons { head = hd; tail = tl }", "dst @ list a"], &["hd", "tl"]),
    ];
    for (f, line, after, expected, ph) in exact {
        let ours = at(f, line, after)?;
        ensure(same_atoms(&ours, expected, ph), || format!("{f}:{line} after={after}\n ours:  {ours:?}\n expected: {expected:?}"))?;
    }

    let rewritten: [(&str, u32, bool, &[&str], &[&str]); 3] = [
        ("append", 32, false, &["dst @ MCons { head: a; tail: () }", "tl @ list a", "ys @ list a"], &["tl"]),
        (
            "appendAux",
            20,
            false,
            &[
                "xs @ Cons { head = hd; tail = tl }",
                "dst @ Cons { head: a; tail = dst' }",
                "dst' @ MCons { head: a; tail: () }",
                "tl @ list a",
                "ys @ list a",
            ],
            &["hd", "tl"],
        ),
        (
            "appendAux",
            20,
            true,
            &["xs @ Cons { head = hd; tail = tl }", "dst @ Cons { head: a; tail = dst' }", "dst' @ list a"],
            &["hd", "tl"],
        ),
    ];
    for (f, line, after, expected, ph) in rewritten {
        let ours = at(f, line, after)?;
        entails(&fe, &ours, expected, ph).map_err(|e| format!("{f}:{line} after={after}: {e}\n ours: {ours:?}"))?;
    }
    Ok(())
}

// 4 ------------------------------------------------------------------------

pub fn facts() -> Result<(), String> {
    let src = format!("{}\n{}", program("append.mz"), program("listpair.mz").replace(
        "data list a = Nil | Cons { head: a; tail: list a }\n",
        "",
    ));
    let (fe, report) = check_source(&src, &opts()).map_err(|e| e.to_string())?;
    for line in [
        "fact list: duplicable a => duplicable",
        "fact mlist: exclusive",
        "fact listpair: duplicable a => duplicable b => duplicable",
    ] {
        ensure(report.facts.lines().any(|l| l == line), || format!("missing `{line}` in\n{}", report.facts))?;
    }
    let lp = &fe.facts.types["listpair"];
    let want = Hyp::Conj(vec![Mode::Duplicable, Mode::Duplicable]);
    ensure(*lp.hyp(Mode::Duplicable) == want, || format!("listpair: {lp:?}"))?;
    ensure(lp.hyp(Mode::Exclusive).is_false(), || format!("listpair: {lp:?}"))?;

    let t = parse_type("list (ref int)").unwrap();
    let t = resolve_nullary(&t);
    let none = BTreeMap::new();
    ensure(!fe.facts.is_duplicable(&none, &t) && !fe.facts.is_exclusive(&none, &t), || {
        "list (ref int) should be neither duplicable nor exclusive".into()
    })?;
    ensure(fe.facts.is_duplicable(&none, &resolve_nullary(&parse_type("list (int, bool)").unwrap())), || {
        "list (int, bool) should be duplicable".into()
    })?;

    match check_source(&program("bad_fact_mismatch.mz"), &opts()) {
        Err(e) if e.rule() == "FactMismatch" => {}
        other => return Err(format!("declared fact mismatch: {:?}", other.err().map(|e| e.to_string()))),
    }
    let ok = "data mutable box a = Box { contents: a }\nfact exclusive box a\n";
    check_source(ok, &opts()).map_err(|e| format!("matching declaration rejected: {e}"))?;
    Ok(())
}

fn resolve_nullary(t: &TypeExpr) -> TypeExpr {
    match t {
        T::Var(n) if n == "int" || n == "bool" => T::App(n.clone(), vec![]),
        other => mzc::desugar::map_children(other, &mut |c| resolve_nullary(c)),
    }
}

// 5 ------------------------------------------------------------------------

fn random_hyp(rng: &mut StdRng, arity: usize) -> Hyp {
    if rng.gen_bool(0.25) {
        Hyp::False
    } else {
        Hyp::Conj((0..arity).map(|_| Mode::ALL[rng.gen_range(0..4)]).collect())
    }
}

fn random_fact(rng: &mut StdRng, arity: usize) -> Fact {
    Fact { arity, hyps: std::array::from_fn(|_| random_hyp(rng, arity)) }
}

pub fn lattice_laws() -> Result<(), String> {
    let modes = Mode::ALL;
    for a in modes {
        ensure(mode_join(a, a) == a && mode_meet(a, a) == a, || format!("idempotence at {a}"))?;
        for b in modes {
            ensure(mode_join(a, b) == mode_join(b, a), || format!("join commutes at {a},{b}"))?;
            ensure(mode_meet(a, b) == mode_meet(b, a), || format!("meet commutes at {a},{b}"))?;
            ensure(mode_join(a, mode_meet(a, b)) == a, || format!("absorption join at {a},{b}"))?;
            ensure(mode_meet(a, mode_join(a, b)) == a, || format!("absorption meet at {a},{b}"))?;
            for c in modes {
                ensure(mode_join(a, mode_join(b, c)) == mode_join(mode_join(a, b), c), || {
                    format!("join associates at {a},{b},{c}")
                })?;
                ensure(mode_meet(a, mode_meet(b, c)) == mode_meet(mode_meet(a, b), c), || {
                    format!("meet associates at {a},{b},{c}")
                })?;
            }
        }
    }

    let mut rng = StdRng::seed_from_u64(5);
    for case in 0..1000 {
        let arity = rng.gen_range(0..3);
        let (f, g, h) = (random_fact(&mut rng, arity), random_fact(&mut rng, arity), random_fact(&mut rng, arity));
        let c = Fact::constant(arity, modes[rng.gen_range(0..4)]);
        let d = Fact::constant(arity, modes[rng.gen_range(0..4)]);
        let meet = |c: &Fact, f: &Fact| Fact::meet_constant(c, f).map_err(|e| e.to_string());
        let laws = [
            ("join commutes", f.join(&g) == g.join(&f)),
            ("join associates", f.join(&g.join(&h)) == f.join(&g).join(&h)),
            ("join is idempotent", f.join(&f) == f),
            ("meet commutes", meet(&c, &meet(&d, &f)?)? == meet(&d, &meet(&c, &f)?)?),
            ("meet associates", match meet(&c, &d)? {
                cd if cd.as_constant().is_some() => meet(&c, &meet(&d, &f)?)? == meet(&cd, &f)?,
                _ => true,
            }),
            ("meet is idempotent", meet(&c, &c)? == c && meet(&c, &meet(&c, &f)?)? == meet(&c, &f)?),
            ("join absorbs meet", f.join(&meet(&c, &f)?) == f),
            ("meet absorbs join", meet(&c, &c.join(&f))? == c),
            ("units", f.join(&Fact::constant(arity, Mode::Bottom)) == f),
            ("bottom absorbs", meet(&Fact::constant(arity, Mode::Bottom), &f)? == Fact::constant(arity, Mode::Bottom)),
        ];
        for (law, ok) in laws {
            ensure(ok, || format!("case {case}: {law} fails for f={f:?} g={g:?} h={h:?} c={c:?} d={d:?}"))?;
        }
    }
    ensure(Fact::meet_constant(&Fact::parameter(1, 0), &Fact::top(1)).is_err(), || {
        "meet with a non-constant fact should be undefined".into()
    })
}

// 6 ------------------------------------------------------------------------

const GOLDENS: [(&str, &str); 4] = [
    ("[a, b] (consumes x: ref a, consumes b) -> (| x @ ref b)", "[a, b] [x: term] ((=x | x @ ref a), b) ~> (| x @ ref b)"),
    ("[a] list a -> int", "[a] [x: term] (=x | x @ list a) ~> (int | x @ list a)"),
    ("[a] (consumes a, bag a) -> ()", "[a] [x: term] (=x | x @ (a, bag a)) ~> (| x @ (unknown, bag a))"),
    ("[a, b] (consumes x: mpair a b) -> (| x @ mpair b a)", "[a, b] [x: term] (=x | x @ mpair a b) ~> (| x @ mpair b a)"),
];

struct TypeGen {
    rng: StdRng,
    next: usize,
}

impl TypeGen {
    fn fresh(&mut self) -> Name {
        self.next += 1;
        format!("x{}", self.next)
    }

    fn pick<'a>(&mut self, xs: &'a [Name]) -> Option<&'a Name> {
        if xs.is_empty() {
            None
        } else {
            Some(&xs[self.rng.gen_range(0..xs.len())])
        }
    }

    fn leaf(&mut self, names: &[Name]) -> TypeExpr {
        match self.rng.gen_range(0..7) {
            0 => T::var("int"),
            1 => T::var("bool"),
            2 => T::var("a"),
            3 => T::Dynamic,
            4 => T::Unknown,
            _ => match self.pick(names) {
                Some(x) => T::Singleton(x.clone()),
                None => T::unit(),
            },
        }
    }

    fn perm(&mut self, depth: usize, names: &[Name]) -> TypeExpr {
        match (self.rng.gen_range(0..3), self.pick(names).cloned()) {
            (0, _) | (_, None) => T::EmptyPerm,
            (1, Some(x)) => T::Anchored(x, Box::new(self.ty(depth, names, false))),
            (_, Some(x)) => T::Star(
                Box::new(T::Anchored(x.clone(), Box::new(self.ty(depth, names, false)))),
                Box::new(self.perm(depth, names)),
            ),
        }
    }

    /// A type over `a`, `int`, `bool`, `ref`, `list`; `names` are the
    /// term names visible so far, and `domain` allows `consumes`.
    fn ty(&mut self, depth: usize, names: &[Name], domain: bool) -> TypeExpr {
        if depth == 0 {
            return self.leaf(names);
        }
        let d = depth - 1;
        match self.rng.gen_range(0..10) {
            0 => self.leaf(names),
            1 => T::App("ref".into(), vec![self.ty(d, names, false)]),
            2 => T::App("list".into(), vec![self.ty(d, names, false)]),
            3 => {
                let n = self.rng.gen_range(2..4);
                T::Tuple((0..n).map(|_| self.ty(d, names, domain)).collect())
            }
            4 => {
                let x = self.fresh();
                let mut inner = names.to_vec();
                inner.push(x.clone());
                T::NameIntro(x, Box::new(self.ty(d, &inner, domain)))
            }
            5 if domain => T::Consumes(Box::new(self.ty(d, names, false))),
            5 | 6 => {
                let x = self.fresh();
                let mut inner = names.to_vec();
                inner.push(x.clone());
                let dom = T::NameIntro(x, Box::new(self.ty(d, &inner, true)));
                let cod = self.ty(d, &inner, false);
                T::ExternalArrow(Box::new(dom), Box::new(cod))
            }
            7 => T::Bar(Box::new(self.ty(d, names, domain)), Box::new(self.perm(d, names))),
            8 => T::Structural(StructuralType {
                ctor: "Cons".into(),
                fields: vec![("head".into(), self.ty(d, names, domain)), ("tail".into(), T::App("list".into(), vec![T::var("a")]))],
                adopts: Box::new(T::bottom()),
            }),
            _ => T::Forall("c".into(), Kind::Type, Box::new(self.ty(d, names, domain))),
        }
    }
}

pub fn desugaring() -> Result<(), String> {
    use mzc::desugar::Desugarer;
    use mzc::kindcheck::{global_env, KindChecker, KindEnv};

    let supply = NameSupply::new(0);
    let d = Desugarer::new(&supply);
    for (surface, internal) in GOLDENS {
        let got = d.translate_extended(&parse_type(surface).unwrap());
        let want = parse_type(internal).unwrap();
        ensure(alpha_equal(&got, &want), || format!("{surface}\n  gave {got}\n  want {want}"))?;
        ensure(!got.has_surface_nodes(), || format!("{surface}: surface nodes remain in {got}"))?;
    }

    let decls = "data list a = Nil | Cons { head: a; tail: list a }";
    let full = mzc::prelude::prelude().concat(mzc::parser::parse_program(decls).unwrap());
    let (genv, table) = global_env(&full).map_err(|e| e.to_string())?;
    let kc = KindChecker::new(&table);
    let env: KindEnv = genv.extended(&[("a".into(), Kind::Type)]);

    let mut gen = TypeGen { rng: StdRng::seed_from_u64(6), next: 0 };
    let (mut kept, mut with_intro, mut tries) = (0, 0, 0);
    while kept < 500 {
        tries += 1;
        ensure(tries < 20_000, || format!("only {kept} well-kinded types generated"))?;
        let t = gen.ty(3, &[], false);
        if kc.check_extended(&env, &t, &Kind::Type).is_err() {
            continue;
        }
        kept += 1;
        if t.to_string().contains(':') {
            with_intro += 1;
        }
        let out = d.translate_extended(&t);
        ensure(!out.has_surface_nodes(), || format!("{t}\n  gave {out} with surface nodes"))?;
        kc.check_extended(&env, &out, &Kind::Type).map_err(|e| format!("{t}\n  gave {out}, ill-kinded: {e}"))?;
    }
    ensure(with_intro >= 50, || format!("only {with_intro} generated types introduce names"))
}

// 7 ------------------------------------------------------------------------

/// A field type in a generated definition.
#[derive(Clone, Debug)]
enum Ty {
    Param(usize),
    Int,
    Dynamic,
    Arrow,
    Ref(Box<Ty>),
    Pair(Box<Ty>, Box<Ty>),
    Def(usize, Vec<Ty>),
}

#[derive(Clone, Debug)]
struct Def {
    mutable: bool,
    arity: usize,
    branches: Vec<Vec<Ty>>,
}

fn gen_ty(rng: &mut StdRng, depth: usize, arity: usize, defs: &[(usize, bool)]) -> Ty {
    let leaf = |rng: &mut StdRng| match rng.gen_range(0..4) {
        0 if arity > 0 => Ty::Param(rng.gen_range(0..arity)),
        1 => Ty::Dynamic,
        2 => Ty::Arrow,
        _ => Ty::Int,
    };
    if depth == 0 {
        return leaf(rng);
    }
    match rng.gen_range(0..6) {
        0 | 1 => leaf(rng),
        2 => Ty::Ref(Box::new(gen_ty(rng, depth - 1, arity, defs))),
        3 => Ty::Pair(Box::new(gen_ty(rng, depth - 1, arity, defs)), Box::new(gen_ty(rng, depth - 1, arity, defs))),
        _ => {
            let i = rng.gen_range(0..defs.len());
            let args = (0..defs[i].0).map(|_| gen_ty(rng, depth - 1, arity, defs)).collect();
            Ty::Def(i, args)
        }
    }
}

fn gen_defs(rng: &mut StdRng) -> Vec<Def> {
    let n = rng.gen_range(1..4);
    let shape: Vec<(usize, bool)> = (0..n).map(|_| (rng.gen_range(0..3), rng.gen_bool(0.2))).collect();
    shape
        .iter()
        .map(|&(arity, mutable)| Def {
            mutable,
            arity,
            branches: (0..rng.gen_range(1..3))
                .map(|_| (0..rng.gen_range(0..3)).map(|_| gen_ty(rng, 3, arity, &shape)).collect())
                .collect(),
        })
        .collect()
}

fn render_ty(t: &Ty) -> String {
    match t {
        Ty::Param(i) => ["a", "b"][*i].to_string(),
        Ty::Int => "int".into(),
        Ty::Dynamic => "dynamic".into(),
        Ty::Arrow => "(int -> int)".into(),
        Ty::Ref(t) => format!("ref ({})", render_ty(t)),
        Ty::Pair(a, b) => format!("({}, {})", render_ty(a), render_ty(b)),
        Ty::Def(i, args) if args.is_empty() => format!("d{i}"),
        Ty::Def(i, args) => {
            format!("d{i} {}", args.iter().map(|a| format!("({})", render_ty(a))).collect::<Vec<_>>().join(" "))
        }
    }
}

fn render_defs(defs: &[Def]) -> String {
    let mut out = String::new();
    for (i, d) in defs.iter().enumerate() {
        let params: String = (0..d.arity).map(|p| [" a", " b"][p]).collect();
        let m = if d.mutable { "mutable " } else { "" };
        let branches: Vec<String> = d
            .branches
            .iter()
            .enumerate()
            .map(|(j, fs)| {
                let fields: Vec<String> = fs.iter().enumerate().map(|(k, t)| format!("f{k}: {}", render_ty(t))).collect();
                format!("C{i}x{j} {{ {} }}", fields.join("; "))
            })
            .collect();
        out.push_str(&format!("data {m}d{i}{params} = {}\n", branches.join(" | ")));
    }
    out
}

fn subst_ty(t: &Ty, args: &[Ty]) -> Ty {
    match t {
        Ty::Param(i) => args[*i].clone(),
        Ty::Ref(u) => Ty::Ref(Box::new(subst_ty(u, args))),
        Ty::Pair(a, b) => Ty::Pair(Box::new(subst_ty(a, args)), Box::new(subst_ty(b, args))),
        Ty::Def(i, xs) => Ty::Def(*i, xs.iter().map(|x| subst_ty(x, args)).collect()),
        other => other.clone(),
    }
}

/// Unfolds definitions `fuel` times; running out of fuel counts as
/// duplicable, which is the greatest fixed point in the limit.
fn brute_duplicable(defs: &[Def], t: &Ty, fuel: usize, var_dup: bool) -> bool {
    match t {
        Ty::Param(_) => var_dup,
        Ty::Int | Ty::Dynamic | Ty::Arrow => true,
        Ty::Ref(_) => false,
        Ty::Pair(a, b) => brute_duplicable(defs, a, fuel, var_dup) && brute_duplicable(defs, b, fuel, var_dup),
        Ty::Def(i, args) => {
            let d = &defs[*i];
            if d.mutable {
                return false;
            }
            if fuel == 0 {
                return true;
            }
            d.branches.iter().flatten().all(|f| brute_duplicable(defs, &subst_ty(f, args), fuel - 1, var_dup))
        }
    }
}

fn to_type(t: &Ty) -> TypeExpr {
    match t {
        Ty::Param(_) => T::var("z"),
        Ty::Int => T::App("int".into(), vec![]),
        Ty::Dynamic => T::Dynamic,
        Ty::Arrow => T::InternalArrow(Box::new(T::App("int".into(), vec![])), Box::new(T::App("int".into(), vec![]))),
        Ty::Ref(u) => T::App("ref".into(), vec![to_type(u)]),
        Ty::Pair(a, b) => T::Tuple(vec![to_type(a), to_type(b)]),
        Ty::Def(i, xs) => T::App(format!("d{i}"), xs.iter().map(to_type).collect()),
    }
}

pub fn duplicable_oracle() -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(7);
    let arg_choices = [Ty::Int, Ty::Ref(Box::new(Ty::Int)), Ty::Param(0), Ty::Pair(Box::new(Ty::Int), Box::new(Ty::Param(0)))];
    let (mut queries, mut positive, mut definitions) = (0, 0, 0);
    while definitions < 400 {
        let defs = gen_defs(&mut rng);
        let src = render_defs(&defs);
        let fe = frontend(&src, &opts()).map_err(|e| format!("{e}\n{src}"))?;
        definitions += defs.len();
        for (i, d) in defs.iter().enumerate() {
            for _ in 0..4 {
                let args: Vec<Ty> = (0..d.arity).map(|_| arg_choices[rng.gen_range(0..arg_choices.len())].clone()).collect();
                let t = Ty::Def(i, args);
                for var_dup in [false, true] {
                    let mode = if var_dup { Mode::Duplicable } else { Mode::Affine };
                    let assumptions = BTreeMap::from([("z".to_string(), mode)]);
                    let got = fe.facts.is_duplicable(&assumptions, &to_type(&t));
                    let want = brute_duplicable(&defs, &t, 8, var_dup);
                    queries += 1;
                    positive += want as usize;
                    ensure(got == want, || {
                        format!("{} with z {mode}: inferred {got}, oracle {want}\n{src}", render_ty(&t))
                    })?;
                }
            }
        }
    }
    ensure(positive > queries / 10 && positive < queries * 9 / 10, || {
        format!("unbalanced sample: {positive} of {queries} duplicable")
    })
}
