//! Syntactic analyses consulted by the calculus: allocated variables, the
//! path relation between location variables, the restricted pure entailment
//! used as a side condition, and the recognition of axioms (trivially valid
//! sequents) and anti-axioms (sequents that always admit counter-models).

use std::collections::{BTreeMap, BTreeSet};

use crate::rules::RuleSet;
use crate::syntax::{PureAtom, PureFormula, Sequent, SpatialAtom, SpatialFormula, SymbolicHeap, Term};

/// Multiset of allocated variables: the roots of all spatial atoms, with
/// multiplicity, in sorted order.
pub fn alloc(spatial: &SpatialFormula) -> Vec<Term> {
    let mut roots: Vec<Term> = spatial.atoms().iter().map(|a| a.root().clone()).collect();
    roots.sort();
    roots
}

pub fn alloc_heap(h: &SymbolicHeap) -> Vec<Term> {
    alloc(&h.spatial)
}

/// A formula allocating the same variable twice has no model.
pub fn heap_satisfiable(h: &SymbolicHeap) -> bool {
    let roots = alloc(&h.spatial);
    roots.windows(2).all(|w| w[0] != w[1])
}

/// Multiset membership of the pair `{a, b}` in `m` (which must be sorted):
/// two occurrences of the same element when `a == b`.
pub fn pair_in_multiset(a: &Term, b: &Term, m: &[Term]) -> bool {
    if a == b {
        m.iter().filter(|t| *t == a).count() >= 2
    } else {
        m.contains(a) && m.contains(b)
    }
}

fn multiset_sub(small: &[Term], big: &[Term]) -> bool {
    let mut counts: BTreeMap<&Term, isize> = BTreeMap::new();
    for t in big {
        *counts.entry(t).or_default() += 1;
    }
    for t in small {
        let c = counts.entry(t).or_default();
        *c -= 1;
        if *c < 0 {
            return false;
        }
    }
    true
}

/// The syntactic edge relation between loc variables of a formula: a
/// points-to atom links its root to every loc variable of its tuple, a
/// predicate atom links its root to the arguments at out-parameter indices.
#[derive(Clone, Debug, Default)]
pub struct PathRelation {
    edges: BTreeMap<Term, BTreeSet<Term>>,
}

impl PathRelation {
    pub fn edge(&self, from: &Term, to: &Term) -> bool {
        self.edges.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn targets(&self, from: &Term) -> impl Iterator<Item = &Term> {
        self.edges.get(from).into_iter().flatten()
    }

    /// Reflexive-transitive reachability.
    pub fn reaches(&self, from: &Term, to: &Term) -> bool {
        if from == to {
            return true;
        }
        self.reachable_from(from).contains(to)
    }

    pub fn reachable_from(&self, from: &Term) -> BTreeSet<Term> {
        let mut seen = BTreeSet::from([from.clone()]);
        let mut stack = vec![from.clone()];
        while let Some(v) = stack.pop() {
            for t in self.targets(&v) {
                if seen.insert(t.clone()) {
                    stack.push(t.clone());
                }
            }
        }
        seen
    }

    pub fn edges(&self) -> impl Iterator<Item = (&Term, &Term)> {
        self.edges.iter().flat_map(|(f, ts)| ts.iter().map(move |t| (f, t)))
    }
}

pub fn atom_edges(rs: &RuleSet, atom: &SpatialAtom) -> Vec<(Term, Term)> {
    let root = atom.root().clone();
    let mut out = Vec::new();
    match atom {
        SpatialAtom::PointsTo { tuple, .. } => {
            for t in tuple {
                if t.is_var() && t.is_loc() {
                    out.push((root.clone(), t.clone()));
                }
            }
        }
        SpatialAtom::Pred { name, args } => {
            for &i in rs.out_params(name) {
                if let Some(t) = args.get(i - 1) {
                    if t.is_var() && t.is_loc() {
                        out.push((root.clone(), t.clone()));
                    }
                }
            }
        }
    }
    out
}

pub fn path_to(rs: &RuleSet, h: &SymbolicHeap) -> PathRelation {
    let mut rel = PathRelation::default();
    for atom in h.spatial.atoms() {
        for (from, to) in atom_edges(rs, atom) {
            rel.edges.entry(from).or_default().insert(to);
        }
    }
    rel
}

/// The restricted entailment `lhs |>_V xi`: every atom of `xi` must occur in
/// `lhs`, be trivially true, or be a disequation forced by the injectivity of
/// stores on allocated variables and on `V`.
pub fn entails_pure(lhs: &SymbolicHeap, vset: &[Term], xi: &PureFormula) -> bool {
    let mut ground: Vec<Term> = alloc_heap(lhs);
    ground.extend(vset.iter().cloned());
    ground.sort();
    xi.atoms().all(|atom| entails_pure_atom(lhs, &ground, atom))
}

fn entails_pure_atom(lhs: &SymbolicHeap, alloc_plus_v: &[Term], atom: &PureAtom) -> bool {
    if lhs.pure.contains(atom) {
        return true;
    }
    if atom.is_eq() && atom.left == atom.right {
        return true;
    }
    if atom.is_neq() && atom.left.is_const() && atom.right.is_const() && atom.left != atom.right {
        return true;
    }
    atom.is_neq()
        && atom.left.is_var()
        && atom.right.is_var()
        && pair_in_multiset(&atom.left, &atom.right, alloc_plus_v)
}

/// The four axiom forms. A sequent matching any of them is valid.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AxiomForm {
    /// The right-hand side is subsumed: equal spatial part, smaller pure part.
    Subsumption = 1,
    /// The left-hand side contains `t != t`.
    BottomLhs = 2,
    /// The left-hand side is heap-unsatisfiable.
    HeapUnsatLhs = 3,
    /// `V` contains an allocated variable or a duplicate.
    VsetClash = 4,
}

pub fn axiom_form(s: &Sequent) -> Option<AxiomForm> {
    if s.rhs.spatial == s.lhs.spatial && s.rhs.pure.is_subset(&s.lhs.pure) {
        return Some(AxiomForm::Subsumption);
    }
    if s.lhs.pure.contains_bottom() {
        return Some(AxiomForm::BottomLhs);
    }
    if !heap_satisfiable(&s.lhs) {
        return Some(AxiomForm::HeapUnsatLhs);
    }
    let lhs_alloc = alloc_heap(&s.lhs);
    let dup = s.vset.windows(2).any(|w| w[0] == w[1]);
    if dup || s.vset.iter().any(|v| lhs_alloc.contains(v)) {
        return Some(AxiomForm::VsetClash);
    }
    None
}

pub fn is_axiom(s: &Sequent) -> bool {
    axiom_form(s).is_some()
}

/// The five anti-axiom conditions, tested in order on sequents that are not
/// axioms, have an equality-free left pure part and a trivial right pure
/// part. A matching sequent always admits a counter-model.
pub fn anti_axiom_condition(rs: &RuleSet, s: &Sequent) -> Option<u8> {
    if axiom_form(s).is_some() || s.lhs.pure.has_equation() || !s.rhs.pure.is_top() {
        return None;
    }
    let lhs_alloc = alloc_heap(&s.lhs);
    let rhs_alloc = alloc_heap(&s.rhs);

    // 1: the right-hand side allocates a variable the left-hand side does not.
    if !multiset_sub(&rhs_alloc, &lhs_alloc) {
        return Some(1);
    }
    // 2: emp against a non-empty left-hand side.
    if s.rhs.spatial.is_emp() && !s.lhs.spatial.is_emp() {
        return Some(2);
    }
    // 3: a left-allocated variable unreachable from every right-hand root.
    let rel = path_to(rs, &s.lhs);
    let rhs_alloc_set: BTreeSet<&Term> = rhs_alloc.iter().collect();
    for x in lhs_alloc.iter().filter(|x| !rhs_alloc_set.contains(x)) {
        if rhs_alloc.iter().all(|y| !rel.reaches(y, x)) {
            return Some(3);
        }
    }
    // 4: a non-allocatable variable occurs only on the left.
    let lhs_vars = s.lhs.spatial.vars();
    let rhs_vars = s.rhs.spatial.vars();
    if s.vset.iter().any(|v| lhs_vars.contains(v) && !rhs_vars.contains(v)) {
        return Some(4);
    }
    // 5: a left loc variable that is neither allocated nor mentioned on the
    // right; its location is referenced but can never be allocated by the
    // right-hand side.
    let lhs_alloc_set: BTreeSet<&Term> = lhs_alloc.iter().collect();
    if lhs_vars
        .iter()
        .any(|v| v.is_loc() && !rhs_vars.contains(v) && !lhs_alloc_set.contains(v))
    {
        return Some(5);
    }
    None
}

pub fn is_anti_axiom(rs: &RuleSet, s: &Sequent) -> bool {
    anti_axiom_condition(rs, s).is_some()
}

/// The loc variables of the right-hand side outside `V` and outside the
/// right-hand side's own allocated set.
pub fn narrow_vars(s: &Sequent) -> BTreeSet<Term> {
    let rhs_alloc: BTreeSet<Term> = alloc_heap(&s.rhs).into_iter().collect();
    s.rhs
        .loc_vars()
        .into_iter()
        .filter(|v| !s.vset.contains(v) && !rhs_alloc.contains(v))
        .collect()
}

/// A sequent is narrow when it is equality-free and has at most `width`
/// narrow variables; on narrow sequents the separation rule branches over
/// all admissible splits.
pub fn is_narrow(rs: &RuleSet, s: &Sequent) -> bool {
    s.is_equality_free() && narrow_vars(s).len() <= rs.width()
}

/// The loc variables of the right-hand side outside `V` and outside the
/// LEFT-hand side's allocated set; these are the candidates for case splits.
pub fn spec_vars(s: &Sequent) -> BTreeSet<Term> {
    let lhs_alloc: BTreeSet<Term> = alloc_heap(&s.lhs).into_iter().collect();
    s.rhs
        .loc_vars()
        .into_iter()
        .filter(|v| !s.vset.contains(v) && !lhs_alloc.contains(v))
        .collect()
}
