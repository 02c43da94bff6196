//! Lexer and recursive-descent parser for the surface language.

use crate::syntax::*;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub expected: Vec<String>,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expected {}, found {}", self.expected.join(" or "), self.found)
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    UIdent(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::UIdent(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

const KEYWORDS: &[&str] = &[
    "data", "mutable", "abstract", "fact", "val", "rec", "fun", "let", "in", "match", "with", "end",
    "if", "then", "else", "begin", "take", "from", "give", "to", "taking", "tag", "of", "fail",
    "true", "false", "consumes", "dynamic", "unknown", "empty", "adopts", "duplicable",
    "exclusive", "affine", "type", "term", "perm",
];

// Longest first.
const SYMBOLS: &[&str] = &[
    "==", "!=", "<=", ">=", "<-", "->", "~>", "=>", "(", ")", "[", "]", "{", "}", ",", ";", ":",
    "=", "<", ">", "+", "-", "*", "|", "@", ".",
];

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: Span,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |line, col, found: String| ParseError {
        line,
        col,
        expected: vec!["a token".into()],
        found,
    };
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '(' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            let mut depth = 0;
            loop {
                if i >= chars.len() {
                    return Err(err(sl, sc, "unterminated comment".into()));
                }
                if chars[i] == '(' && chars.get(i + 1) == Some(&'*') {
                    depth += 1;
                    bump!();
                    bump!();
                } else if chars[i] == '*' && chars.get(i + 1) == Some(&')') {
                    depth -= 1;
                    bump!();
                    bump!();
                    if depth == 0 {
                        break;
                    }
                } else {
                    bump!();
                }
            }
            continue;
        }
        let span = Span::new(line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'')
            {
                bump!();
            }
            let word: String = chars[start..i].iter().collect();
            let tok = if let Some(k) = KEYWORDS.iter().find(|k| **k == word) {
                Tok::Sym(k)
            } else if c.is_ascii_uppercase() {
                Tok::UIdent(word)
            } else {
                Tok::Ident(word)
            };
            out.push(Token { tok, span });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            let text: String = chars[start..i].iter().collect();
            let n = text.parse::<i64>().map_err(|_| err(span.line, span.col, text.clone()))?;
            out.push(Token { tok: Tok::Int(n), span });
            continue;
        }
        let sym = SYMBOLS.iter().find(|s| {
            let s: Vec<char> = s.chars().collect();
            chars.len() >= i + s.len() && chars[i..i + s.len()] == s[..]
        });
        match sym {
            Some(s) => {
                for _ in 0..s.len() {
                    bump!();
                }
                out.push(Token { tok: Tok::Sym(s), span });
            }
            None => return Err(err(line, col, format!("`{c}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(line, col) });
    Ok(out)
}

type PResult<T> = Result<T, ParseError>;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    wild: u32,
}

fn is_mode_kw(t: &Tok) -> Option<Mode> {
    match t {
        Tok::Sym("duplicable") => Some(Mode::Duplicable),
        Tok::Sym("exclusive") => Some(Mode::Exclusive),
        Tok::Sym("affine") => Some(Mode::Affine),
        _ => None,
    }
}

impl Parser {
    fn new(src: &str) -> PResult<Self> {
        Ok(Parser { toks: lex(src)?, pos: 0, wild: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }
    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }
    fn span(&self) -> Span {
        self.toks[self.pos].span
    }
    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }
    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        let sp = self.span();
        Err(ParseError {
            line: sp.line,
            col: sp.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().to_string(),
        })
    }
    fn is(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }
    fn eat(&mut self, s: &str) -> bool {
        if self.is(s) {
            self.advance();
            true
        } else {
            false
        }
    }
    fn expect(&mut self, s: &str) -> PResult<()> {
        if self.eat(s) {
            Ok(())
        } else {
            self.error(&[&format!("`{s}`")])
        }
    }
    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.error(&["identifier"]),
        }
    }
    fn uident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::UIdent(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.error(&["constructor"]),
        }
    }
    fn expect_eof(&self) -> PResult<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            self.error(&["end of input"])
        }
    }

    // -- kinds and binders

    fn kind(&mut self) -> PResult<Kind> {
        match self.peek() {
            Tok::Sym("type") => {
                self.advance();
                Ok(Kind::Type)
            }
            Tok::Sym("term") => {
                self.advance();
                Ok(Kind::Term)
            }
            Tok::Sym("perm") => {
                self.advance();
                Ok(Kind::Perm)
            }
            _ => self.error(&["`type`", "`term`", "`perm`"]),
        }
    }

    fn binder(&mut self) -> PResult<(Name, Kind)> {
        let n = self.ident()?;
        let k = if self.eat(":") { self.kind()? } else { Kind::Type };
        Ok((n, k))
    }

    /// `[a, b: term]` or `{a}`; the opening bracket is already consumed.
    fn binders(&mut self, close: &str) -> PResult<Vec<(Name, Kind)>> {
        let mut out = Vec::new();
        if self.eat(close) {
            return Ok(out);
        }
        loop {
            out.push(self.binder()?);
            if self.eat(close) {
                return Ok(out);
            }
            self.expect(",")?;
        }
    }

    // -- types

    fn ty(&mut self) -> PResult<TypeExpr> {
        if self.eat("[") {
            let bs = self.binders("]")?;
            let body = self.ty()?;
            return Ok(bs.into_iter().rev().fold(body, |b, (n, k)| T::Forall(n, k, Box::new(b))));
        }
        if self.is("{") {
            self.advance();
            let bs = self.binders("}")?;
            let body = self.ty()?;
            return Ok(bs.into_iter().rev().fold(body, |b, (n, k)| T::Exists(n, k, Box::new(b))));
        }
        if let Some(m) = is_mode_kw(self.peek()) {
            self.advance();
            let subject = self.atom_ty()?;
            self.expect("=>")?;
            let body = self.ty()?;
            return Ok(match body {
                T::ExternalArrow(d, c) => T::ExternalArrow(Box::new(T::ModeAnd(m, Box::new(subject), d)), c),
                T::InternalArrow(d, c) => T::InternalArrow(Box::new(T::ModeAnd(m, Box::new(subject), d)), c),
                other => T::ModeAnd(m, Box::new(subject), Box::new(other)),
            });
        }
        let lhs = self.star_ty()?;
        if self.eat("->") {
            Ok(T::earrow(lhs, self.ty()?))
        } else if self.eat("~>") {
            Ok(T::arrow(lhs, self.ty()?))
        } else {
            Ok(lhs)
        }
    }

    fn star_ty(&mut self) -> PResult<TypeExpr> {
        let mut t = self.prefix_ty()?;
        while self.eat("*") {
            let r = self.prefix_ty()?;
            t = T::star(t, r);
        }
        Ok(t)
    }

    fn prefix_ty(&mut self) -> PResult<TypeExpr> {
        if self.eat("consumes") {
            return Ok(T::Consumes(Box::new(self.prefix_ty()?)));
        }
        if let Tok::Ident(x) = self.peek().clone() {
            if *self.peek_at(1) == Tok::Sym(":") {
                self.advance();
                self.advance();
                return Ok(T::NameIntro(x, Box::new(self.prefix_ty()?)));
            }
            if *self.peek_at(1) == Tok::Sym("@") {
                self.advance();
                self.advance();
                return Ok(T::Anchored(x, Box::new(self.app_ty()?)));
            }
        }
        self.app_ty()
    }

    fn starts_atom(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Ident(_)
                | Tok::UIdent(_)
                | Tok::Sym("(")
                | Tok::Sym("dynamic")
                | Tok::Sym("unknown")
                | Tok::Sym("empty")
        )
    }

    fn app_ty(&mut self) -> PResult<TypeExpr> {
        match self.peek().clone() {
            Tok::Sym("=") => {
                self.advance();
                Ok(T::Singleton(self.ident()?))
            }
            Tok::Ident(h) => {
                self.advance();
                let mut args = Vec::new();
                while self.starts_atom() {
                    args.push(self.atom_ty()?);
                }
                Ok(if args.is_empty() { T::Var(h) } else { T::App(h, args) })
            }
            Tok::UIdent(_) => {
                let mut t = self.structural()?;
                if self.eat("adopts") {
                    let a = self.app_ty()?;
                    if let T::Structural(s) = &mut t {
                        s.adopts = Box::new(a);
                    }
                }
                Ok(t)
            }
            _ => self.atom_ty(),
        }
    }

    fn structural(&mut self) -> PResult<TypeExpr> {
        let ctor = self.uident()?;
        let fields = if self.is("{") { self.field_types(true)? } else { Vec::new() };
        Ok(T::Structural(StructuralType { ctor, fields, adopts: Box::new(T::bottom()) }))
    }

    /// `{ f: t; g = y; h, k: t }`.
    fn field_types(&mut self, allow_eq: bool) -> PResult<Vec<(Name, TypeExpr)>> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.is("}") {
            let mut names = vec![self.ident()?];
            while self.eat(",") {
                names.push(self.ident()?);
            }
            let t = if allow_eq && names.len() == 1 && self.eat("=") {
                T::Singleton(self.ident()?)
            } else {
                self.expect(":")?;
                self.ty()?
            };
            for n in names {
                out.push((n, t.clone()));
            }
            if !self.eat(";") {
                break;
            }
        }
        self.expect("}")?;
        Ok(out)
    }

    fn atom_ty(&mut self) -> PResult<TypeExpr> {
        match self.peek().clone() {
            Tok::Ident(x) => {
                self.advance();
                Ok(T::Var(x))
            }
            Tok::UIdent(_) => self.structural(),
            Tok::Sym("dynamic") => {
                self.advance();
                Ok(T::Dynamic)
            }
            Tok::Sym("unknown") => {
                self.advance();
                Ok(T::Unknown)
            }
            Tok::Sym("empty") => {
                self.advance();
                Ok(T::EmptyPerm)
            }
            Tok::Sym("(") => {
                self.advance();
                if self.eat(")") {
                    return Ok(T::unit());
                }
                if self.eat("|") {
                    let p = self.ty()?;
                    self.expect(")")?;
                    return Ok(T::bar(T::unit(), p));
                }
                if let Some(m) = is_mode_kw(self.peek()) {
                    if !matches!(self.peek_at(2), Tok::Sym("=>")) {
                        self.advance();
                        let s = self.atom_ty()?;
                        self.expect("|")?;
                        let b = self.ty()?;
                        self.expect(")")?;
                        return Ok(T::ModeAnd(m, Box::new(s), Box::new(b)));
                    }
                }
                let first = self.ty()?;
                if self.is(",") {
                    let mut items = vec![first];
                    while self.eat(",") {
                        items.push(self.ty()?);
                    }
                    self.expect(")")?;
                    return Ok(T::Tuple(items));
                }
                if self.eat("|") {
                    let p = self.ty()?;
                    self.expect(")")?;
                    return Ok(T::bar(first, p));
                }
                self.expect(")")?;
                Ok(first)
            }
            _ => self.error(&["type"]),
        }
    }

    // -- patterns

    fn pattern(&mut self) -> PResult<Pattern> {
        match self.peek().clone() {
            Tok::Ident(x) => {
                self.advance();
                Ok(Pattern::Var(x))
            }
            Tok::UIdent(c) => {
                self.advance();
                let mut fields = Vec::new();
                if self.eat("{") {
                    while !self.is("}") {
                        let f = self.ident()?;
                        let p = if self.eat("=") { self.pattern()? } else { Pattern::Var(f.clone()) };
                        fields.push((f, p));
                        if !self.eat(";") {
                            break;
                        }
                    }
                    self.expect("}")?;
                }
                Ok(Pattern::Construct(c, fields))
            }
            Tok::Sym("(") => {
                self.advance();
                let mut items = Vec::new();
                if !self.is(")") {
                    items.push(self.pattern()?);
                    while self.eat(",") {
                        items.push(self.pattern()?);
                    }
                }
                self.expect(")")?;
                if items.len() == 1 {
                    Ok(items.pop().unwrap())
                } else {
                    Ok(Pattern::Tuple(items))
                }
            }
            _ => self.error(&["pattern"]),
        }
    }

    // -- expressions

    fn wildcard(&mut self) -> Pattern {
        self.wild += 1;
        Pattern::Var("_".to_string())
    }

    fn seq(&mut self) -> PResult<Expr> {
        let e = self.expr()?;
        if self.eat(";") {
            if self.seq_ends() {
                return Ok(e);
            }
            let rest = self.seq()?;
            let span = e.span;
            let p = self.wildcard();
            Ok(Expr::new(ExprKind::Let(p, Box::new(e), Box::new(rest)), span))
        } else {
            Ok(e)
        }
    }

    fn seq_ends(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Eof | Tok::Sym("end") | Tok::Sym("|") | Tok::Sym(")") | Tok::Sym("val")
                | Tok::Sym("data") | Tok::Sym("abstract") | Tok::Sym("fact")
        )
    }

    fn expr(&mut self) -> PResult<Expr> {
        let span = self.span();
        let mk = |k| Expr::new(k, span);
        match self.peek() {
            Tok::Sym("let") => {
                self.advance();
                let p = self.pattern()?;
                self.expect("=")?;
                let e1 = self.seq()?;
                self.expect("in")?;
                let e2 = self.seq()?;
                Ok(mk(ExprKind::Let(p, Box::new(e1), Box::new(e2))))
            }
            Tok::Sym("fun") => {
                self.advance();
                let f = self.function_rest(None, false, true)?;
                Ok(mk(ExprKind::Fun(Box::new(f))))
            }
            Tok::Sym("match") => {
                self.advance();
                let scrut = self.seq()?;
                self.expect("with")?;
                let mut arms = Vec::new();
                self.eat("|");
                if !self.is("end") {
                    loop {
                        let p = self.pattern()?;
                        self.expect("->")?;
                        let body = self.seq()?;
                        arms.push((p, body));
                        if !self.eat("|") {
                            break;
                        }
                    }
                }
                self.expect("end")?;
                Ok(mk(ExprKind::Match(Box::new(scrut), arms)))
            }
            Tok::Sym("if") => {
                self.advance();
                let c = self.seq()?;
                self.expect("then")?;
                let a = self.expr()?;
                let b = if self.eat("else") { self.expr()? } else { Expr::unit(span) };
                Ok(mk(ExprKind::If(Box::new(c), Box::new(a), Box::new(b))))
            }
            Tok::Sym("take") | Tok::Sym("give") | Tok::Sym("taking") => {
                let kw = self.advance();
                let a = self.assign()?;
                let b = if kw == Tok::Sym("give") {
                    self.expect("to")?;
                    self.assign()?
                } else {
                    self.expect("from")?;
                    self.assign()?
                };
                match kw {
                    Tok::Sym("take") => Ok(mk(ExprKind::Take(Box::new(a), Box::new(b)))),
                    Tok::Sym("give") => Ok(mk(ExprKind::Give(Box::new(a), Box::new(b)))),
                    _ => {
                        self.expect("begin")?;
                        let body = self.seq()?;
                        self.expect("end")?;
                        Ok(mk(ExprKind::Taking(Box::new(a), Box::new(b), Box::new(body))))
                    }
                }
            }
            Tok::Sym("tag") => {
                self.advance();
                self.expect("of")?;
                let e = self.postfix()?;
                self.expect("<-")?;
                let c = self.uident()?;
                Ok(mk(ExprKind::WriteTag(Box::new(e), c)))
            }
            _ => self.assign(),
        }
    }

    fn assign(&mut self) -> PResult<Expr> {
        let lhs = self.cmp()?;
        if self.is("<-") {
            let span = self.span();
            self.advance();
            let rhs = self.expr()?;
            match lhs.kind {
                ExprKind::Read(e, f) => {
                    Ok(Expr::new(ExprKind::Write(e, f, Box::new(rhs)), lhs.span))
                }
                _ => Err(ParseError {
                    line: span.line,
                    col: span.col,
                    expected: vec!["field access before `<-`".into()],
                    found: "`<-`".into(),
                }),
            }
        } else {
            Ok(lhs)
        }
    }

    fn cmp(&mut self) -> PResult<Expr> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Sym("==") => PrimOp::Eq,
            Tok::Sym("!=") => PrimOp::Ne,
            Tok::Sym("<") => PrimOp::Lt,
            Tok::Sym("<=") => PrimOp::Le,
            Tok::Sym(">") => PrimOp::Gt,
            Tok::Sym(">=") => PrimOp::Ge,
            _ => return Ok(lhs),
        };
        self.advance();
        let rhs = self.additive()?;
        let span = lhs.span;
        Ok(Expr::new(ExprKind::Prim(op, Box::new(lhs), Box::new(rhs)), span))
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => PrimOp::Add,
                Tok::Sym("-") => PrimOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.multiplicative()?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Prim(op, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.application()?;
        while self.eat("*") {
            let rhs = self.application()?;
            let span = lhs.span;
            lhs = Expr::new(ExprKind::Prim(PrimOp::Mul, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn starts_expr_atom(&self) -> bool {
        matches!(
            self.peek(),
            Tok::Ident(_)
                | Tok::UIdent(_)
                | Tok::Int(_)
                | Tok::Sym("(")
                | Tok::Sym("true")
                | Tok::Sym("false")
                | Tok::Sym("begin")
                | Tok::Sym("fail")
        )
    }

    fn application(&mut self) -> PResult<Expr> {
        let mut f = self.postfix()?;
        while self.starts_expr_atom() {
            let a = self.postfix()?;
            let span = f.span;
            f = Expr::new(ExprKind::Apply(Box::new(f), Box::new(a)), span);
        }
        Ok(f)
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.expr_atom()?;
        loop {
            if self.is(".") {
                self.advance();
                let f = self.ident()?;
                let span = e.span;
                e = Expr::new(ExprKind::Read(Box::new(e), f), span);
            } else if self.is("[") {
                self.advance();
                let t = self.ty()?;
                self.expect("]")?;
                let span = e.span;
                e = Expr::new(ExprKind::TypeApp(Box::new(e), t, Kind::Type), span);
            } else {
                return Ok(e);
            }
        }
    }

    fn expr_atom(&mut self) -> PResult<Expr> {
        let span = self.span();
        let mk = |k| Expr::new(k, span);
        match self.peek().clone() {
            Tok::Ident(x) => {
                self.advance();
                Ok(mk(ExprKind::Var(x)))
            }
            Tok::Int(n) => {
                self.advance();
                Ok(mk(ExprKind::Int(n)))
            }
            Tok::Sym("true") => {
                self.advance();
                Ok(mk(ExprKind::Bool(true)))
            }
            Tok::Sym("false") => {
                self.advance();
                Ok(mk(ExprKind::Bool(false)))
            }
            Tok::Sym("fail") => {
                self.advance();
                Ok(mk(ExprKind::Fail))
            }
            Tok::Sym("begin") => {
                self.advance();
                let e = self.seq()?;
                self.expect("end")?;
                Ok(e)
            }
            Tok::UIdent(c) => {
                self.advance();
                let mut fields = Vec::new();
                if self.eat("{") {
                    while !self.is("}") {
                        let fspan = self.span();
                        let f = self.ident()?;
                        let e = if self.eat("=") { self.expr()? } else { Expr::var(&f, fspan) };
                        fields.push((f, e));
                        if !self.eat(";") {
                            break;
                        }
                    }
                    self.expect("}")?;
                }
                let adopts = if self.eat("adopts") { Some(self.app_ty()?) } else { None };
                Ok(mk(ExprKind::Construct(c, fields, adopts)))
            }
            Tok::Sym("(") => {
                self.advance();
                if self.eat(")") {
                    return Ok(Expr::unit(span));
                }
                let first = self.seq()?;
                if self.eat(":") {
                    let t = self.ty()?;
                    self.expect(")")?;
                    return Ok(mk(ExprKind::Annot(Box::new(first), t)));
                }
                if self.is(",") {
                    let mut items = vec![first];
                    while self.eat(",") {
                        items.push(self.seq()?);
                    }
                    self.expect(")")?;
                    return Ok(mk(ExprKind::Tuple(items)));
                }
                self.expect(")")?;
                Ok(first)
            }
            _ => self.error(&["expression"]),
        }
    }

    /// `[tps] (argty) : ret = body`, shared by `fun` and `val`.
    fn function_rest(&mut self, name: Option<Name>, recursive: bool, in_expr: bool) -> PResult<Function> {
        let type_params = if self.eat("[") { self.binders("]")? } else { Vec::new() };
        if !self.is("(") {
            return self.error(&["`(`"]);
        }
        let arg = self.atom_ty()?;
        self.expect(":")?;
        let ret = self.star_ty()?;
        self.expect("=")?;
        let body = if in_expr { self.expr()? } else { self.seq()? };
        Ok(Function { name, recursive, type_params, param: None, arg, ret, body })
    }

    // -- items

    fn program(&mut self) -> PResult<Program> {
        let mut items = Vec::new();
        while *self.peek() != Tok::Eof {
            items.push(self.item()?);
        }
        Ok(Program { items })
    }

    fn params(&mut self) -> PResult<Vec<(Name, Kind)>> {
        let mut out = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Ident(x) => {
                    self.advance();
                    out.push((x, Kind::Type));
                }
                Tok::Sym("(") => {
                    self.advance();
                    out.push(self.binder()?);
                    self.expect(")")?;
                }
                _ => return Ok(out),
            }
        }
    }

    fn item(&mut self) -> PResult<Item> {
        let span = self.span();
        match self.peek() {
            Tok::Sym("data") => {
                self.advance();
                let mutable = self.eat("mutable");
                let name = self.ident()?;
                let params = self.params()?;
                self.expect("=")?;
                self.eat("|");
                let mut branches = Vec::new();
                loop {
                    let ctor = self.uident()?;
                    let fields = if self.is("{") { self.field_types(false)? } else { Vec::new() };
                    branches.push(Branch { ctor, fields });
                    if !self.eat("|") {
                        break;
                    }
                }
                let adopts = if self.eat("adopts") { self.ty()? } else { T::bottom() };
                Ok(Item::Data(DataTypeDef { name, mutable, params, branches, adopts, span }))
            }
            Tok::Sym("abstract") => {
                self.advance();
                let name = self.ident()?;
                let params = self.params()?;
                let result = if self.eat(":") { self.kind()? } else { Kind::Type };
                Ok(Item::Abstract(AbstractDef { name, params, result, span }))
            }
            Tok::Sym("fact") => {
                self.advance();
                let mut hypotheses = Vec::new();
                loop {
                    let Some(m) = is_mode_kw(self.peek()) else {
                        return self.error(&["`duplicable`", "`exclusive`", "`affine`"]);
                    };
                    self.advance();
                    let head = self.ident()?;
                    if self.eat("=>") {
                        hypotheses.push((m, head));
                        continue;
                    }
                    let mut args = Vec::new();
                    while let Tok::Ident(a) = self.peek().clone() {
                        self.advance();
                        args.push(a);
                    }
                    return Ok(Item::Fact(FactDecl {
                        type_name: head,
                        args,
                        hypotheses,
                        conclusion: m,
                        span,
                    }));
                }
            }
            Tok::Sym("val") => {
                self.advance();
                let recursive = self.eat("rec");
                let name = self.ident()?;
                if self.eat(":") {
                    let t = self.ty()?;
                    return Ok(Item::Decl(name, t, span));
                }
                if self.eat("=") {
                    let body = self.seq()?;
                    return Ok(Item::Value(ValueDef { name, body, span }));
                }
                let f = self.function_rest(Some(name.clone()), recursive, false)?;
                let body = Expr::new(ExprKind::Fun(Box::new(f)), span);
                Ok(Item::Value(ValueDef { name, body, span }))
            }
            _ => self.error(&["`data`", "`abstract`", "`fact`", "`val`"]),
        }
    }
}

pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let mut p = Parser::new(src)?;
    let prog = p.program()?;
    p.expect_eof()?;
    Ok(prog)
}

pub fn parse_type(src: &str) -> Result<TypeExpr, ParseError> {
    let mut p = Parser::new(src)?;
    let t = p.ty()?;
    p.expect_eof()?;
    Ok(t)
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.seq()?;
    p.expect_eof()?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ty(s: &str) -> TypeExpr {
        parse_type(s).unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    #[test]
    fn list_definition() {
        let p = parse_program("data list a =\n Nil | Cons { head: a; tail: list a }").unwrap();
        let Item::Data(d) = &p.items[0] else { panic!() };
        assert_eq!(d.name, "list");
        assert!(!d.mutable);
        assert_eq!(d.params, vec![("a".to_string(), Kind::Type)]);
        assert_eq!(d.branches.len(), 2);
        assert_eq!(d.branches[0].ctor, "Nil");
        assert!(d.branches[0].fields.is_empty());
        assert_eq!(
            d.branches[1].fields,
            vec![("head".into(), T::var("a")), ("tail".into(), T::app("list", vec![T::var("a")]))]
        );
        assert!(d.adopts.is_bottom());
    }

    #[test]
    fn mode_assumption_wraps_domain() {
        let t = ty("[a] duplicable a => (list a, a -> bool) -> option a");
        let T::Forall(_, _, body) = t else { panic!() };
        let T::ExternalArrow(dom, cod) = *body else { panic!() };
        assert!(matches!(*dom, T::ModeAnd(Mode::Duplicable, _, _)));
        assert_eq!(*cod, T::app("option", vec![T::var("a")]));
    }

    #[test]
    fn malformed_field() {
        assert!(parse_program("data d = A { f: }").is_err());
    }

    #[test]
    fn assign_type() {
        let t = ty("(consumes x: ref a, consumes b) -> (| x @ ref b)");
        let T::ExternalArrow(dom, cod) = t else { panic!() };
        let T::Tuple(cs) = *dom else { panic!() };
        assert!(matches!(&cs[0], T::Consumes(inner) if matches!(&**inner, T::NameIntro(x, _) if x == "x")));
        assert_eq!(cs[1], T::Consumes(Box::new(T::var("b"))));
        assert_eq!(*cod, T::bar(T::unit(), T::anchored("x", T::app("ref", vec![T::var("b")]))));
    }

    #[test]
    fn singleton_and_structural() {
        assert_eq!(ty("=x"), T::singleton("x"));
        let s = ty("MCons { head: a; tail: () }");
        let T::Structural(s) = s else { panic!() };
        assert_eq!(s.ctor, "MCons");
        assert!(s.adopts.is_bottom());
        let g = ty("Empty { head, tail: () }");
        let T::Structural(g) = g else { panic!() };
        assert_eq!(g.fields.len(), 2);
    }

    #[test]
    fn precedence() {
        let t = ty("x @ list a * y @ int");
        assert!(matches!(t, T::Star(..)));
        let t = ty("(int | x @ a * y @ b)");
        let T::Bar(_, p) = t else { panic!() };
        assert!(matches!(*p, T::Star(..)));
    }

    #[test]
    fn comments_and_primes() {
        let e = parse_expr("let dst' = 1 in (* c (* nested *) *) dst' -- trailing").unwrap();
        assert!(matches!(e.kind, ExprKind::Let(Pattern::Var(ref x), _, _) if x == "dst'"));
    }

    #[test]
    fn expressions() {
        let e = parse_expr("b.tail.next <- c").unwrap();
        assert!(matches!(e.kind, ExprKind::Write(_, ref f, _) if f == "next"));
        let e = parse_expr("appendAux (dst', xs.tail, ys)").unwrap();
        assert!(matches!(e.kind, ExprKind::Apply(..)));
        let e = parse_expr("tag of dst <- Cons").unwrap();
        assert!(matches!(e.kind, ExprKind::WriteTag(_, ref c) if c == "Cons"));
        let e = parse_expr("create [int] ()").unwrap();
        let ExprKind::Apply(f, _) = e.kind else { panic!() };
        assert!(matches!(f.kind, ExprKind::TypeApp(..)));
        let e = parse_expr("match xs with | Nil -> ys | Cons { head = h } -> h end").unwrap();
        let ExprKind::Match(_, arms) = e.kind else { panic!() };
        assert_eq!(arms.len(), 2);
    }

    #[test]
    fn function_items() {
        let p = parse_program(
            "val rec f [a] (consumes x: a) : a = x\nval g : [a] a -> a\nval z = f [int] 3",
        )
        .unwrap();
        assert_eq!(p.items.len(), 3);
        let Item::Value(v) = &p.items[0] else { panic!() };
        let ExprKind::Fun(f) = &v.body.kind else { panic!() };
        assert!(f.recursive);
        assert!(matches!(p.items[1], Item::Decl(..)));
    }

    #[test]
    fn fact_items() {
        let p = parse_program("abstract t a\nfact duplicable a => duplicable t a\nfact exclusive u").unwrap();
        let Item::Fact(f) = &p.items[1] else { panic!() };
        assert_eq!(f.hypotheses, vec![(Mode::Duplicable, "a".to_string())]);
        assert_eq!(f.conclusion, Mode::Duplicable);
        assert_eq!(f.args, vec!["a".to_string()]);
    }

    #[test]
    fn error_positions() {
        let e = parse_program("val x =\n  (1,").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_type("(").is_err());
        assert!(parse_type("").is_err());
    }

    #[test]
    fn print_then_parse() {
        for s in [
            "[a, b] (=x | x @ ref a) ~> (| x @ ref b)",
            "{x: term} ((=x | x @ a), =x)",
            "(duplicable a | list a)",
            "Cons { head = hd; tail: list a } adopts cell a",
            "p * q * x @ =y",
        ] {
            let t = ty(s);
            let printed = t.to_string();
            assert_eq!(ty(&printed), t, "{s} -> {printed}");
        }
    }
}
