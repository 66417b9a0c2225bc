//! The textual problem format.
//!
//! A problem file is line-oriented with `%` comments and carries
//! declarations, inductive rules and entailment queries:
//!
//! ```text
//! sort data;
//! const cons : data;
//! pred ls(loc, loc);
//! rule ls(x,y) <= x -> (y);
//! rule ls(x,y) <= x -> (z) * ls(z,y);
//! entail V: u (ls(x,y) * ls(z,u)) /\ x != z |- ls(x,y);
//! ```
//!
//! Variable sorts are inferred from predicate profiles, points-to roots and
//! pure atoms; unconstrained variables default to `loc`. An explicit
//! ascription `u:data` pins the sort of a variable wherever inference would
//! default.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::rules::{InductiveRule, Profile};
use crate::syntax::{
    Polarity, PureAtom, PureFormula, Sequent, Sort, SpatialAtom, SpatialFormula, SymbolicHeap,
    Term,
};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct Pos {
    line: usize,
    col: usize,
}

impl Pos {
    fn err(self, msg: impl Into<String>) -> ParseError {
        ParseError { line: self.line, col: self.col, msg: msg.into() }
    }
}

/// A parsed and sort-checked problem: declarations, rules and queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProblemFile {
    pub sorts: Vec<Sort>,
    pub constants: Vec<Term>,
    pub profiles: Vec<Profile>,
    pub rules: Vec<InductiveRule>,
    pub queries: Vec<Sequent>,
}

impl ProblemFile {
    /// Regenerates the textual form; parsing it back yields an identical
    /// value.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        for s in &self.sorts {
            if !s.is_loc() {
                out.push_str(&format!("sort {s};\n"));
            }
        }
        for c in &self.constants {
            out.push_str(&format!("const {} : {};\n", c.name, c.sort));
        }
        for p in &self.profiles {
            let sorts: Vec<String> = p.sorts.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!("pred {}({});\n", p.name, sorts.join(", ")));
        }
        for r in &self.rules {
            let params: Vec<String> = r.params.iter().map(print_term).collect();
            out.push_str(&format!(
                "rule {}({}) <= {};\n",
                r.head,
                params.join(", "),
                print_heap(&r.body)
            ));
        }
        for q in &self.queries {
            out.push_str("entail ");
            if !q.vset.is_empty() {
                let vars: Vec<String> = q.vset.iter().map(|v| v.name.clone()).collect();
                out.push_str(&format!("V: {} ", vars.join(", ")));
            }
            out.push_str(&format!("{} |- {};\n", print_heap(&q.lhs), print_heap(&q.rhs)));
        }
        out
    }
}

fn print_term(t: &Term) -> String {
    if t.is_var() && !t.is_loc() {
        format!("{}:{}", t.name, t.sort)
    } else {
        t.name.clone()
    }
}

fn print_atom(a: &SpatialAtom) -> String {
    match a {
        SpatialAtom::PointsTo { root, tuple } => {
            let items: Vec<String> = tuple.iter().map(print_term).collect();
            format!("{} -> ({})", root.name, items.join(","))
        }
        SpatialAtom::Pred { name, args } => {
            let items: Vec<String> = args.iter().map(print_term).collect();
            format!("{}({})", name, items.join(","))
        }
    }
}

fn print_heap(h: &SymbolicHeap) -> String {
    let spatial = if h.spatial.is_emp() {
        "emp".to_string()
    } else {
        let items: Vec<String> = h.spatial.atoms().iter().map(print_atom).collect();
        items.join(" * ")
    };
    if h.pure.is_top() {
        return spatial;
    }
    let pure: Vec<String> = h
        .pure
        .atoms()
        .map(|a| {
            let op = if a.is_eq() { "=" } else { "!=" };
            format!("{} {} {}", print_term(&a.left), op, print_term(&a.right))
        })
        .collect();
    if h.spatial.len() >= 2 {
        format!("({}) /\\ {}", spatial, pure.join(" /\\ "))
    } else {
        format!("{} /\\ {}", spatial, pure.join(" /\\ "))
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, PartialEq, Eq, Debug)]
enum Tok {
    Ident(String),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::Sym(s) => write!(f, "'{s}'"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1usize;
    let mut col = 1usize;
    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }
    loop {
        let pos = Pos { line, col };
        let Some(&c) = chars.peek() else {
            out.push((Tok::Eof, pos));
            return Ok(out);
        };
        match c {
            '%' => {
                while chars.peek().is_some_and(|&c| c != '\n') {
                    bump!();
                }
            }
            c if c.is_whitespace() => {
                bump!();
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut name = String::new();
                while chars
                    .peek()
                    .is_some_and(|&c| c.is_alphanumeric() || c == '_' || c == '\'')
                {
                    name.push(bump!().unwrap());
                }
                out.push((Tok::Ident(name), pos));
            }
            ';' | ':' | '(' | ')' | ',' | '*' | '=' => {
                bump!();
                let sym = match c {
                    ';' => ";",
                    ':' => ":",
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    '*' => "*",
                    _ => "=",
                };
                out.push((Tok::Sym(sym), pos));
            }
            '!' => {
                bump!();
                if bump!() != Some('=') {
                    return Err(pos.err("expected '!='"));
                }
                out.push((Tok::Sym("!="), pos));
            }
            '/' => {
                bump!();
                if bump!() != Some('\\') {
                    return Err(pos.err("expected '/\\'"));
                }
                out.push((Tok::Sym("/\\"), pos));
            }
            '<' => {
                bump!();
                if bump!() != Some('=') {
                    return Err(pos.err("expected '<='"));
                }
                out.push((Tok::Sym("<="), pos));
            }
            '|' => {
                bump!();
                if bump!() != Some('-') {
                    return Err(pos.err("expected '|-'"));
                }
                out.push((Tok::Sym("|-"), pos));
            }
            '-' => {
                bump!();
                if bump!() != Some('>') {
                    return Err(pos.err("expected '->'"));
                }
                out.push((Tok::Sym("->"), pos));
            }
            other => return Err(pos.err(format!("unexpected character '{other}'"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Raw syntax

#[derive(Clone, Debug)]
struct RawTerm {
    name: String,
    ascription: Option<String>,
    pos: Pos,
}

#[derive(Clone, Debug)]
enum RawAtom {
    PointsTo { root: RawTerm, tuple: Vec<RawTerm> },
    Pred { name: String, args: Vec<RawTerm>, pos: Pos },
}

#[derive(Clone, Debug, Default)]
struct RawHeap {
    atoms: Vec<RawAtom>,
    pure: Vec<(RawTerm, Polarity, RawTerm)>,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), ParseError> {
        let pos = self.pos();
        match self.next().0 {
            Tok::Sym(s) if s == sym => Ok(()),
            other => Err(pos.err(format!("expected '{sym}', found {other}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), ParseError> {
        let pos = self.pos();
        match self.next().0 {
            Tok::Ident(s) => Ok((s, pos)),
            other => Err(pos.err(format!("expected {what}, found {other}"))),
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.next();
            true
        } else {
            false
        }
    }

    fn term(&mut self) -> Result<RawTerm, ParseError> {
        let (name, pos) = self.ident("a term")?;
        let ascription =
            if self.eat_sym(":") { Some(self.ident("a sort")?.0) } else { None };
        Ok(RawTerm { name, ascription, pos })
    }

    fn term_list(&mut self) -> Result<Vec<RawTerm>, ParseError> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        if self.eat_sym(")") {
            return Ok(out);
        }
        loop {
            out.push(self.term()?);
            if self.eat_sym(")") {
                return Ok(out);
            }
            self.expect_sym(",")?;
        }
    }

    /// One spatial piece: `emp`, a parenthesized spatial expression, or an
    /// atom.
    fn spatial_piece(&mut self, out: &mut Vec<RawAtom>) -> Result<(), ParseError> {
        if self.eat_sym("(") {
            self.spatial_expr(out)?;
            self.expect_sym(")")?;
            return Ok(());
        }
        let pos = self.pos();
        let (name, _) = self.ident("a spatial atom or 'emp'")?;
        if name == "emp" {
            return Ok(());
        }
        if self.eat_sym("->") {
            let tuple = self.term_list()?;
            out.push(RawAtom::PointsTo {
                root: RawTerm { name, ascription: None, pos },
                tuple,
            });
            return Ok(());
        }
        if *self.peek() == Tok::Sym("(") {
            let args = self.term_list()?;
            out.push(RawAtom::Pred { name, args, pos });
            return Ok(());
        }
        Err(pos.err(format!("expected '->' or '(' after '{name}'")))
    }

    fn spatial_expr(&mut self, out: &mut Vec<RawAtom>) -> Result<(), ParseError> {
        self.spatial_piece(out)?;
        while self.eat_sym("*") {
            self.spatial_piece(out)?;
        }
        Ok(())
    }

    fn pure_atom(&mut self) -> Result<(RawTerm, Polarity, RawTerm), ParseError> {
        let left = self.term()?;
        let pos = self.pos();
        let polarity = match self.next().0 {
            Tok::Sym("=") => Polarity::Eq,
            Tok::Sym("!=") => Polarity::Neq,
            other => return Err(pos.err(format!("expected '=' or '!=', found {other}"))),
        };
        let right = self.term()?;
        Ok((left, polarity, right))
    }

    fn symbolic_heap(&mut self) -> Result<RawHeap, ParseError> {
        let mut heap = RawHeap::default();
        self.spatial_expr(&mut heap.atoms)?;
        while self.eat_sym("/\\") {
            heap.pure.push(self.pure_atom()?);
        }
        Ok(heap)
    }
}

// ---------------------------------------------------------------------------
// Sort inference and elaboration

struct Decls {
    sorts: Vec<Sort>,
    constants: BTreeMap<String, Sort>,
    const_order: Vec<String>,
    profiles: BTreeMap<String, Profile>,
    profile_order: Vec<String>,
}

impl Decls {
    fn sort(&self, name: &str, pos: Pos) -> Result<Sort, ParseError> {
        if name == Sort::LOC {
            return Ok(Sort::loc());
        }
        self.sorts
            .iter()
            .find(|s| s.name() == name)
            .cloned()
            .ok_or_else(|| pos.err(format!("unknown sort '{name}'")))
    }
}

/// Per-scope sort inference: a union-find over variable names whose classes
/// carry an optional sort.
struct Scope<'a> {
    decls: &'a Decls,
    parent: BTreeMap<String, String>,
    sort_of: BTreeMap<String, (Sort, Pos)>,
}

impl<'a> Scope<'a> {
    fn new(decls: &'a Decls) -> Self {
        Scope { decls, parent: BTreeMap::new(), sort_of: BTreeMap::new() }
    }

    fn find(&mut self, name: &str) -> String {
        let mut cur = name.to_string();
        while let Some(p) = self.parent.get(&cur) {
            if *p == cur {
                break;
            }
            cur = p.clone();
        }
        self.parent.entry(name.to_string()).or_insert_with(|| cur.clone());
        cur
    }

    fn constrain(&mut self, name: &str, sort: Sort, pos: Pos) -> Result<(), ParseError> {
        let rep = self.find(name);
        match self.sort_of.get(&rep) {
            Some((s, _)) if *s == sort => Ok(()),
            Some((s, _)) => Err(pos.err(format!(
                "variable '{name}' has conflicting sorts {s} and {sort}"
            ))),
            None => {
                self.sort_of.insert(rep, (sort, pos));
                Ok(())
            }
        }
    }

    fn unify(&mut self, a: &str, b: &str, pos: Pos) -> Result<(), ParseError> {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra == rb {
            return Ok(());
        }
        let sa = self.sort_of.get(&ra).cloned();
        let sb = self.sort_of.get(&rb).cloned();
        self.parent.insert(ra.clone(), rb.clone());
        match (sa, sb) {
            (Some((sa, _)), Some((sb, _))) if sa != sb => Err(pos.err(format!(
                "terms '{a}' and '{b}' have conflicting sorts {sa} and {sb}"
            ))),
            (Some(s), None) => {
                self.sort_of.insert(rb, s);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Registers the constraints of one raw term; constants check against
    /// `expected` immediately.
    fn see_term(&mut self, t: &RawTerm, expected: Option<Sort>) -> Result<(), ParseError> {
        if let Some(csort) = self.decls.constants.get(&t.name) {
            if let Some(a) = &t.ascription {
                let asort = self.decls.sort(a, t.pos)?;
                if asort != *csort {
                    return Err(t.pos.err(format!(
                        "constant '{}' has sort {csort}, not {asort}",
                        t.name
                    )));
                }
            }
            if let Some(e) = expected {
                if e != *csort {
                    return Err(t.pos.err(format!(
                        "constant '{}' has sort {csort} where {e} is required",
                        t.name
                    )));
                }
            }
            return Ok(());
        }
        if let Some(a) = &t.ascription {
            let asort = self.decls.sort(a, t.pos)?;
            self.constrain(&t.name, asort, t.pos)?;
        }
        if let Some(e) = expected {
            self.constrain(&t.name, e, t.pos)?;
        }
        Ok(())
    }

    fn see_heap(&mut self, h: &RawHeap) -> Result<(), ParseError> {
        for atom in &h.atoms {
            match atom {
                RawAtom::PointsTo { root, tuple } => {
                    if self.decls.constants.contains_key(&root.name) {
                        return Err(root
                            .pos
                            .err(format!("constant '{}' cannot be allocated", root.name)));
                    }
                    self.see_term(root, Some(Sort::loc()))?;
                    for t in tuple {
                        self.see_term(t, None)?;
                    }
                }
                RawAtom::Pred { name, args, pos } => {
                    let profile = self
                        .decls
                        .profiles
                        .get(name)
                        .ok_or_else(|| pos.err(format!("unknown predicate '{name}'")))?;
                    if args.len() != profile.arity() {
                        return Err(pos.err(format!(
                            "predicate '{name}' takes {} arguments, got {}",
                            profile.arity(),
                            args.len()
                        )));
                    }
                    for (t, s) in args.iter().zip(profile.sorts.clone()) {
                        self.see_term(t, Some(s))?;
                    }
                }
            }
        }
        for (l, _, r) in &h.pure {
            self.see_term(l, None)?;
            self.see_term(r, None)?;
            match (
                self.decls.constants.get(&l.name).cloned(),
                self.decls.constants.get(&r.name).cloned(),
            ) {
                (Some(sl), Some(sr)) => {
                    if sl != sr {
                        return Err(l.pos.err(format!(
                            "pure atom relates sorts {sl} and {sr}"
                        )));
                    }
                }
                (Some(s), None) => self.constrain(&r.name, s, r.pos)?,
                (None, Some(s)) => self.constrain(&l.name, s, l.pos)?,
                (None, None) => self.unify(&l.name, &r.name, l.pos)?,
            }
        }
        Ok(())
    }

    /// The resolved sort of a variable; unconstrained variables are `loc`.
    fn var_sort(&mut self, name: &str) -> Sort {
        let rep = self.find(name);
        self.sort_of.get(&rep).map(|(s, _)| s.clone()).unwrap_or_else(Sort::loc)
    }

    fn build_term(&mut self, t: &RawTerm) -> Result<Term, ParseError> {
        if let Some(csort) = self.decls.constants.get(&t.name) {
            return Term::constant(&t.name, csort.clone())
                .map_err(|e| t.pos.err(e.to_string()));
        }
        Ok(Term::var(&t.name, self.var_sort(&t.name)))
    }

    fn build_heap(&mut self, h: &RawHeap) -> Result<SymbolicHeap, ParseError> {
        let mut atoms = Vec::new();
        for atom in &h.atoms {
            match atom {
                RawAtom::PointsTo { root, tuple } => {
                    let root_t = self.build_term(root)?;
                    let tuple_t: Result<Vec<Term>, _> =
                        tuple.iter().map(|t| self.build_term(t)).collect();
                    atoms.push(
                        SpatialAtom::points_to(root_t, tuple_t?)
                            .map_err(|e| root.pos.err(e.to_string()))?,
                    );
                }
                RawAtom::Pred { name, args, pos } => {
                    let args_t: Result<Vec<Term>, _> =
                        args.iter().map(|t| self.build_term(t)).collect();
                    atoms.push(
                        SpatialAtom::pred(name, args_t?).map_err(|e| pos.err(e.to_string()))?,
                    );
                }
            }
        }
        let mut pure = Vec::new();
        for (l, polarity, r) in &h.pure {
            let lt = self.build_term(l)?;
            let rt = self.build_term(r)?;
            pure.push(PureAtom::new(*polarity, lt, rt).map_err(|e| l.pos.err(e.to_string()))?);
        }
        Ok(SymbolicHeap::new(SpatialFormula::new(atoms), PureFormula::new(pure)))
    }
}

/// Parses and sort-checks a problem file.
pub fn parse(text: &str) -> Result<ProblemFile, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };

    enum Item {
        Rule { head: String, params: Vec<RawTerm>, body: RawHeap, pos: Pos },
        Query { vset: Vec<RawTerm>, lhs: RawHeap, rhs: RawHeap },
    }

    let mut decls = Decls {
        sorts: vec![Sort::loc()],
        constants: BTreeMap::new(),
        const_order: Vec::new(),
        profiles: BTreeMap::new(),
        profile_order: Vec::new(),
    };
    let mut items = Vec::new();

    loop {
        let pos = p.pos();
        match p.next().0 {
            Tok::Eof => break,
            Tok::Ident(kw) => match kw.as_str() {
                "sort" => {
                    let (name, npos) = p.ident("a sort name")?;
                    if name == Sort::LOC || decls.sorts.iter().any(|s| s.name() == name) {
                        return Err(npos.err(format!("sort '{name}' already declared")));
                    }
                    decls.sorts.push(Sort::new(name));
                    p.expect_sym(";")?;
                }
                "const" => {
                    let (name, npos) = p.ident("a constant name")?;
                    p.expect_sym(":")?;
                    let (sort_name, spos) = p.ident("a sort")?;
                    let sort = decls.sort(&sort_name, spos)?;
                    if sort.is_loc() {
                        return Err(spos.err("constants of sort loc are not allowed"));
                    }
                    if decls.constants.insert(name.clone(), sort).is_some() {
                        return Err(npos.err(format!("constant '{name}' already declared")));
                    }
                    decls.const_order.push(name);
                    p.expect_sym(";")?;
                }
                "pred" => {
                    let (name, npos) = p.ident("a predicate name")?;
                    p.expect_sym("(")?;
                    let mut sorts = Vec::new();
                    if !p.eat_sym(")") {
                        loop {
                            let (s, spos) = p.ident("a sort")?;
                            sorts.push(decls.sort(&s, spos)?);
                            if p.eat_sym(")") {
                                break;
                            }
                            p.expect_sym(",")?;
                        }
                    }
                    let profile =
                        Profile::new(&name, sorts).map_err(|e| npos.err(e.to_string()))?;
                    if decls.profiles.insert(name.clone(), profile).is_some() {
                        return Err(npos.err(format!("predicate '{name}' already declared")));
                    }
                    decls.profile_order.push(name);
                    p.expect_sym(";")?;
                }
                "rule" => {
                    let (head, _) = p.ident("a predicate name")?;
                    let params = p.term_list()?;
                    p.expect_sym("<=")?;
                    let body = p.symbolic_heap()?;
                    p.expect_sym(";")?;
                    items.push(Item::Rule { head, params, body, pos });
                }
                "entail" => {
                    let mut vset = Vec::new();
                    if *p.peek() == Tok::Ident("V".to_string()) {
                        p.next();
                        p.expect_sym(":")?;
                        vset.push(p.term()?);
                        while p.eat_sym(",") {
                            vset.push(p.term()?);
                        }
                    }
                    let lhs = p.symbolic_heap()?;
                    p.expect_sym("|-")?;
                    let rhs = p.symbolic_heap()?;
                    p.expect_sym(";")?;
                    items.push(Item::Query { vset, lhs, rhs });
                }
                other => {
                    return Err(pos.err(format!(
                        "expected 'sort', 'const', 'pred', 'rule' or 'entail', found '{other}'"
                    )))
                }
            },
            other => return Err(pos.err(format!("expected a declaration, found {other}"))),
        }
    }

    let mut rules = Vec::new();
    let mut queries = Vec::new();
    for item in items {
        match item {
            Item::Rule { head, params, body, pos } => {
                let profile = decls
                    .profiles
                    .get(&head)
                    .cloned()
                    .ok_or_else(|| pos.err(format!("unknown predicate '{head}'")))?;
                if params.len() != profile.arity() {
                    return Err(pos.err(format!(
                        "rule head '{head}' takes {} parameters, got {}",
                        profile.arity(),
                        params.len()
                    )));
                }
                let mut scope = Scope::new(&decls);
                for (t, s) in params.iter().zip(profile.sorts.clone()) {
                    if decls.constants.contains_key(&t.name) {
                        return Err(t.pos.err("rule parameters must be variables"));
                    }
                    scope.see_term(t, Some(s))?;
                }
                scope.see_heap(&body)?;
                let params_t: Result<Vec<Term>, _> =
                    params.iter().map(|t| scope.build_term(t)).collect();
                let body_t = scope.build_heap(&body)?;
                rules.push(InductiveRule::new(head, params_t?, body_t));
            }
            Item::Query { vset, lhs, rhs } => {
                let mut scope = Scope::new(&decls);
                for v in &vset {
                    if decls.constants.contains_key(&v.name) {
                        return Err(v.pos.err("V entries must be variables"));
                    }
                    scope.see_term(v, Some(Sort::loc()))?;
                }
                scope.see_heap(&lhs)?;
                scope.see_heap(&rhs)?;
                let vset_t: Result<Vec<Term>, _> =
                    vset.iter().map(|t| scope.build_term(t)).collect();
                let lhs_t = scope.build_heap(&lhs)?;
                let rhs_t = scope.build_heap(&rhs)?;
                queries.push(Sequent::new(lhs_t, vset_t?, rhs_t));
            }
        }
    }

    let constants = decls
        .const_order
        .iter()
        .map(|n| Term::constant(n, decls.constants[n].clone()).expect("non-loc by construction"))
        .collect();
    let profiles =
        decls.profile_order.iter().map(|n| decls.profiles[n].clone()).collect();
    Ok(ProblemFile { sorts: decls.sorts, constants, profiles, rules, queries })
}
