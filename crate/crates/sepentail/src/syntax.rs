//! Terms, formulas, sequents and their canonical forms.
//!
//! All values in this module are immutable once built and kept in a canonical
//! shape: pure formulas are sets of atoms with a fixed orientation, spatial
//! formulas are multisets of atoms in a fixed sorted order. Two formulas that
//! are equal modulo associativity/commutativity of `*` and `/\` (and modulo
//! contraction of duplicate pure atoms) are therefore structurally equal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// A sort name. The sort of memory locations is [`Sort::LOC`]; every other
/// sort denotes non-addressable data (constructors, payloads, ...).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Sort(pub String);

impl Sort {
    pub const LOC: &'static str = "loc";

    pub fn new(name: impl Into<String>) -> Self {
        Sort(name.into())
    }

    pub fn loc() -> Self {
        Sort(Self::LOC.to_string())
    }

    pub fn is_loc(&self) -> bool {
        self.0 == Self::LOC
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sort({})", self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub enum TermKind {
    /// Constants come first in the term order.
    Const,
    Var,
}

/// A term: a variable or a constant, with its sort.
///
/// There are no constants of sort `loc`; [`Term::constant`] rejects them.
#[derive(Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Term {
    pub kind: TermKind,
    pub name: String,
    pub sort: Sort,
}

impl Term {
    pub fn var(name: impl Into<String>, sort: Sort) -> Self {
        Term { kind: TermKind::Var, name: name.into(), sort }
    }

    pub fn constant(name: impl Into<String>, sort: Sort) -> Result<Self, SortError> {
        if sort.is_loc() {
            return Err(SortError::LocConstant { name: name.into() });
        }
        Ok(Term { kind: TermKind::Const, name: name.into(), sort })
    }

    pub fn is_var(&self) -> bool {
        self.kind == TermKind::Var
    }

    pub fn is_const(&self) -> bool {
        self.kind == TermKind::Const
    }

    pub fn is_loc(&self) -> bool {
        self.sort.is_loc()
    }
}

/// Total term order: constants before variables, then by (sort, name).
impl Ord for Term {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.kind, &self.sort, &self.name).cmp(&(other.kind, &other.sort, &other.name))
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.sort)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub enum Polarity {
    Eq,
    Neq,
}

/// An equation or disequation between two terms of the same sort, stored with
/// the smaller term on the left.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct PureAtom {
    pub polarity: Polarity,
    pub left: Term,
    pub right: Term,
}

impl PureAtom {
    pub fn new(polarity: Polarity, a: Term, b: Term) -> Result<Self, SortError> {
        if a.sort != b.sort {
            return Err(SortError::Mismatch {
                context: format!("{} and {} in a pure atom", a.name, b.name),
                left: a.sort,
                right: b.sort,
            });
        }
        let (left, right) = if a <= b { (a, b) } else { (b, a) };
        Ok(PureAtom { polarity, left, right })
    }

    pub fn eq(a: Term, b: Term) -> Result<Self, SortError> {
        Self::new(Polarity::Eq, a, b)
    }

    pub fn neq(a: Term, b: Term) -> Result<Self, SortError> {
        Self::new(Polarity::Neq, a, b)
    }

    pub fn is_eq(&self) -> bool {
        self.polarity == Polarity::Eq
    }

    pub fn is_neq(&self) -> bool {
        self.polarity == Polarity::Neq
    }

    /// A disequation `t != t`, the canonical representation of falsity.
    pub fn is_bottom(&self) -> bool {
        self.is_neq() && self.left == self.right
    }

    pub fn terms(&self) -> [&Term; 2] {
        [&self.left, &self.right]
    }
}

impl fmt::Display for PureAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.polarity {
            Polarity::Eq => "=",
            Polarity::Neq => "!=",
        };
        write!(f, "{} {} {}", self.left, op, self.right)
    }
}

/// A conjunction of pure atoms, as a set. The empty set is `true`.
///
/// Construction performs contraction and two rewrites that preserve the set
/// of satisfying stores: reflexive equations are dropped, and equations
/// between distinct constants (unsatisfiable, since constants denote pairwise
/// distinct elements) are replaced by the falsity marker `t != t`. Falsity
/// markers themselves are never simplified away.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize)]
pub struct PureFormula {
    atoms: BTreeSet<PureAtom>,
}

impl PureFormula {
    pub fn top() -> Self {
        PureFormula::default()
    }

    pub fn new(atoms: impl IntoIterator<Item = PureAtom>) -> Self {
        let mut set = BTreeSet::new();
        for atom in atoms {
            if atom.is_eq() {
                if atom.left == atom.right {
                    continue;
                }
                if atom.left.is_const() && atom.right.is_const() {
                    let t = atom.left.clone();
                    set.insert(PureAtom { polarity: Polarity::Neq, left: t.clone(), right: t });
                    continue;
                }
            }
            set.insert(atom);
        }
        PureFormula { atoms: set }
    }

    pub fn is_top(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = &PureAtom> {
        self.atoms.iter()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn contains(&self, atom: &PureAtom) -> bool {
        self.atoms.contains(atom)
    }

    pub fn is_subset(&self, other: &PureFormula) -> bool {
        self.atoms.is_subset(&other.atoms)
    }

    pub fn contains_bottom(&self) -> bool {
        self.atoms.iter().any(PureAtom::is_bottom)
    }

    pub fn has_equation(&self) -> bool {
        self.atoms.iter().any(PureAtom::is_eq)
    }

    pub fn and(&self, other: &PureFormula) -> PureFormula {
        PureFormula::new(self.atoms.iter().chain(other.atoms.iter()).cloned())
    }

    pub fn without(&self, drop: &BTreeSet<PureAtom>) -> PureFormula {
        PureFormula { atoms: self.atoms.difference(drop).cloned().collect() }
    }

    pub fn insert(&self, atom: PureAtom) -> PureFormula {
        PureFormula::new(self.atoms.iter().cloned().chain(std::iter::once(atom)))
    }

    pub fn vars(&self) -> BTreeSet<Term> {
        self.atoms
            .iter()
            .flat_map(|a| a.terms())
            .filter(|t| t.is_var())
            .cloned()
            .collect()
    }

    pub fn terms(&self) -> BTreeSet<Term> {
        self.atoms.iter().flat_map(|a| a.terms()).cloned().collect()
    }
}

impl fmt::Display for PureFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.atoms.is_empty() {
            return f.write_str("true");
        }
        let mut first = true;
        for atom in &self.atoms {
            if !first {
                f.write_str(" /\\ ")?;
            }
            first = false;
            write!(f, "{atom}")?;
        }
        Ok(())
    }
}

/// A points-to atom `x -> (t1,...,tk)` or a predicate atom `p(x,t...)`.
///
/// The root is a variable of sort `loc`; for predicate atoms it is the first
/// argument.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize)]
pub enum SpatialAtom {
    PointsTo { root: Term, tuple: Vec<Term> },
    Pred { name: String, args: Vec<Term> },
}

impl SpatialAtom {
    pub fn points_to(root: Term, tuple: Vec<Term>) -> Result<Self, SortError> {
        if !root.is_var() || !root.is_loc() {
            return Err(SortError::BadRoot { term: root.name });
        }
        Ok(SpatialAtom::PointsTo { root, tuple })
    }

    pub fn pred(name: impl Into<String>, args: Vec<Term>) -> Result<Self, SortError> {
        let name = name.into();
        match args.first() {
            Some(root) if root.is_var() && root.is_loc() => {}
            Some(root) => return Err(SortError::BadRoot { term: root.name.clone() }),
            None => return Err(SortError::NullaryPredicate { name }),
        }
        Ok(SpatialAtom::Pred { name, args })
    }

    pub fn root(&self) -> &Term {
        match self {
            SpatialAtom::PointsTo { root, .. } => root,
            SpatialAtom::Pred { args, .. } => &args[0],
        }
    }

    pub fn is_points_to(&self) -> bool {
        matches!(self, SpatialAtom::PointsTo { .. })
    }

    pub fn is_pred(&self) -> bool {
        matches!(self, SpatialAtom::Pred { .. })
    }

    pub fn terms(&self) -> Vec<&Term> {
        match self {
            SpatialAtom::PointsTo { root, tuple } => {
                std::iter::once(root).chain(tuple.iter()).collect()
            }
            SpatialAtom::Pred { args, .. } => args.iter().collect(),
        }
    }

    pub fn vars(&self) -> BTreeSet<Term> {
        self.terms().into_iter().filter(|t| t.is_var()).cloned().collect()
    }

    fn sort_key(&self) -> String {
        self.to_string()
    }
}

impl Ord for SpatialAtom {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl PartialOrd for SpatialAtom {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SpatialAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpatialAtom::PointsTo { root, tuple } => {
                write!(f, "{root} -> (")?;
                for (i, t) in tuple.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
            SpatialAtom::Pred { name, args } => {
                write!(f, "{name}(")?;
                for (i, t) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A multiset of spatial atoms in canonical sorted order. `emp` is the empty
/// multiset. Duplicate atoms are kept: occurrences matter, since a variable
/// allocated twice makes the formula heap-unsatisfiable.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize)]
pub struct SpatialFormula {
    atoms: Vec<SpatialAtom>,
}

impl SpatialFormula {
    pub fn emp() -> Self {
        SpatialFormula::default()
    }

    pub fn new(mut atoms: Vec<SpatialAtom>) -> Self {
        atoms.sort_by_cached_key(SpatialAtom::sort_key);
        SpatialFormula { atoms }
    }

    pub fn atom(atom: SpatialAtom) -> Self {
        SpatialFormula { atoms: vec![atom] }
    }

    pub fn is_emp(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[SpatialAtom] {
        &self.atoms
    }

    pub fn star(&self, other: &SpatialFormula) -> SpatialFormula {
        SpatialFormula::new(self.atoms.iter().chain(other.atoms.iter()).cloned().collect())
    }

    pub fn vars(&self) -> BTreeSet<Term> {
        self.atoms.iter().flat_map(SpatialAtom::vars).collect()
    }

    pub fn terms(&self) -> BTreeSet<Term> {
        self.atoms.iter().flat_map(|a| a.terms().into_iter().cloned()).collect()
    }
}

impl fmt::Display for SpatialFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.atoms.is_empty() {
            return f.write_str("emp");
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                f.write_str(" * ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// A symbolic heap: a spatial formula together with a pure constraint.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default, Serialize)]
pub struct SymbolicHeap {
    pub spatial: SpatialFormula,
    pub pure: PureFormula,
}

impl SymbolicHeap {
    pub fn new(spatial: SpatialFormula, pure: PureFormula) -> Self {
        SymbolicHeap { spatial, pure }
    }

    pub fn emp() -> Self {
        SymbolicHeap::default()
    }

    pub fn spatial(spatial: SpatialFormula) -> Self {
        SymbolicHeap { spatial, pure: PureFormula::top() }
    }

    pub fn vars(&self) -> BTreeSet<Term> {
        let mut v = self.spatial.vars();
        v.extend(self.pure.vars());
        v
    }

    pub fn terms(&self) -> BTreeSet<Term> {
        let mut t = self.spatial.terms();
        t.extend(self.pure.terms());
        t
    }

    pub fn loc_vars(&self) -> BTreeSet<Term> {
        self.vars().into_iter().filter(Term::is_loc).collect()
    }
}

impl fmt::Display for SymbolicHeap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pure.is_top() {
            write!(f, "{}", self.spatial)
        } else {
            write!(f, "{} /\\ {}", self.spatial, self.pure)
        }
    }
}

/// Re-establishes the canonical form of a symbolic heap. Construction already
/// canonicalizes, so this is the identity on values built through the public
/// constructors; it is exposed for values assembled field by field.
pub fn canonicalize(h: &SymbolicHeap) -> SymbolicHeap {
    SymbolicHeap {
        spatial: SpatialFormula::new(h.spatial.atoms().to_vec()),
        pure: PureFormula::new(h.pure.atoms().cloned()),
    }
}

/// A sort-preserving substitution from variables to terms. Identity bindings
/// are dropped; application is simultaneous.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Substitution {
    map: BTreeMap<Term, Term>,
}

impl Substitution {
    pub fn new() -> Self {
        Substitution::default()
    }

    pub fn singleton(from: Term, to: Term) -> Result<Self, SortError> {
        let mut s = Substitution::new();
        s.bind(from, to)?;
        Ok(s)
    }

    pub fn bind(&mut self, from: Term, to: Term) -> Result<(), SortError> {
        if !from.is_var() {
            return Err(SortError::SubstitutionOfConstant { name: from.name });
        }
        if from.sort != to.sort {
            return Err(SortError::Mismatch {
                context: format!("binding {} to {}", from.name, to.name),
                left: from.sort,
                right: to.sort,
            });
        }
        if from != to {
            self.map.insert(from, to);
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.map.is_empty()
    }

    pub fn domain(&self) -> impl Iterator<Item = &Term> {
        self.map.keys()
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&Term, &Term)> {
        self.map.iter()
    }

    pub fn get(&self, t: &Term) -> Option<&Term> {
        self.map.get(t)
    }

    pub fn apply_term(&self, t: &Term) -> Term {
        self.map.get(t).cloned().unwrap_or_else(|| t.clone())
    }

    pub fn apply_atom(&self, a: &SpatialAtom) -> SpatialAtom {
        match a {
            SpatialAtom::PointsTo { root, tuple } => SpatialAtom::PointsTo {
                root: self.apply_term(root),
                tuple: tuple.iter().map(|t| self.apply_term(t)).collect(),
            },
            SpatialAtom::Pred { name, args } => SpatialAtom::Pred {
                name: name.clone(),
                args: args.iter().map(|t| self.apply_term(t)).collect(),
            },
        }
    }

    pub fn apply_pure_atom(&self, a: &PureAtom) -> PureAtom {
        // Orientation is re-established; sorts are preserved by construction.
        PureAtom::new(a.polarity, self.apply_term(&a.left), self.apply_term(&a.right))
            .expect("substitution preserves sorts")
    }

    pub fn apply_heap(&self, h: &SymbolicHeap) -> SymbolicHeap {
        SymbolicHeap {
            spatial: SpatialFormula::new(
                h.spatial.atoms().iter().map(|a| self.apply_atom(a)).collect(),
            ),
            pure: PureFormula::new(h.pure.atoms().map(|a| self.apply_pure_atom(a))),
        }
    }

    pub fn apply_sequent(&self, s: &Sequent) -> Sequent {
        Sequent::new(
            self.apply_heap(&s.lhs),
            s.vset.iter().map(|v| self.apply_term(v)).collect(),
            self.apply_heap(&s.rhs),
        )
    }
}

/// An entailment obligation `lhs |-{V} rhs`. `V` is a multiset of
/// location variables that counter-models must leave unallocated and
/// interpret injectively.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct Sequent {
    pub lhs: SymbolicHeap,
    /// Sorted multiset of loc variables.
    pub vset: Vec<Term>,
    pub rhs: SymbolicHeap,
}

impl Sequent {
    pub fn new(lhs: SymbolicHeap, mut vset: Vec<Term>, rhs: SymbolicHeap) -> Self {
        debug_assert!(vset.iter().all(|v| v.is_var() && v.is_loc()));
        vset.sort();
        Sequent { lhs, vset, rhs }
    }

    pub fn vars(&self) -> BTreeSet<Term> {
        let mut v = self.lhs.vars();
        v.extend(self.rhs.vars());
        v.extend(self.vset.iter().cloned());
        v
    }

    pub fn is_equality_free(&self) -> bool {
        !self.lhs.pure.has_equation() && !self.rhs.pure.has_equation()
    }

    /// Removes one occurrence of `v` from the multiset `V`.
    pub fn without_vset_occurrence(&self, v: &Term) -> Sequent {
        let mut vset = self.vset.clone();
        if let Some(pos) = vset.iter().position(|x| x == v) {
            vset.remove(pos);
        }
        Sequent::new(self.lhs.clone(), vset, self.rhs.clone())
    }
}

impl fmt::Display for Sequent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} |-", self.lhs)?;
        if !self.vset.is_empty() {
            f.write_str("{")?;
            for (i, v) in self.vset.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{v}")?;
            }
            f.write_str("}")?;
        }
        write!(f, " {}", self.rhs)
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SortError {
    #[error("sort mismatch ({context}): {left} vs {right}")]
    Mismatch { context: String, left: Sort, right: Sort },
    #[error("constants of sort loc are not allowed: {name}")]
    LocConstant { name: String },
    #[error("root of a spatial atom must be a variable of sort loc, got {term}")]
    BadRoot { term: String },
    #[error("predicate {name} must have at least one argument")]
    NullaryPredicate { name: String },
    #[error("cannot substitute for the constant {name}")]
    SubstitutionOfConstant { name: String },
}

/// Conjoins pointwise equations between two term vectors, or reports falsity
/// when the vectors have different lengths or mismatched sorts.
pub fn vector_equation(left: &[Term], right: &[Term]) -> Option<Vec<PureAtom>> {
    if left.len() != right.len() {
        return None;
    }
    let mut atoms = Vec::new();
    for (l, r) in left.iter().zip(right) {
        match PureAtom::eq(l.clone(), r.clone()) {
            Ok(a) => atoms.push(a),
            Err(_) => return None,
        }
    }
    Some(atoms)
}

/// Decides satisfiability of a conjunction of pure atoms, where distinct
/// constants denote distinct elements: equations are merged by congruence
/// classes, then every disequation (and every pair of distinct constants)
/// must separate two classes.
pub fn pure_satisfiable(atoms: &[PureAtom]) -> bool {
    let mut terms: Vec<Term> = Vec::new();
    let mut index = BTreeMap::new();
    for atom in atoms {
        for t in atom.terms() {
            index.entry(t.clone()).or_insert_with(|| {
                terms.push(t.clone());
                terms.len() - 1
            });
        }
    }
    let mut uf = UnionFind::new(terms.len());
    for atom in atoms {
        if atom.is_eq() {
            uf.union(index[&atom.left], index[&atom.right]);
        }
    }
    // Two distinct constants in one class make the conjunction false.
    let mut const_rep: BTreeMap<usize, &Term> = BTreeMap::new();
    for (i, t) in terms.iter().enumerate() {
        if t.is_const() {
            let root = uf.find(i);
            if let Some(other) = const_rep.get(&root) {
                if **other != *t {
                    return false;
                }
            } else {
                const_rep.insert(root, t);
            }
        }
    }
    for atom in atoms {
        if atom.is_neq() && uf.find(index[&atom.left]) == uf.find(index[&atom.right]) {
            return false;
        }
    }
    true
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}
