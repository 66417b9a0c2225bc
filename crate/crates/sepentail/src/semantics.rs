//! Executable model semantics: stores, heaps, the satisfaction relation,
//! bounded counter-model search and constructive model building.
//!
//! This module is independent of the proof calculus and serves as its oracle:
//! `satisfies` decides whether a finite structure is a model of a symbolic
//! heap (termination is guaranteed because every predicate unfolding consumes
//! one heap cell), and `find_countermodel` enumerates structures up to a
//! cell/location bound. The search is exhaustive up to its bounds, so a
//! reported counter-model refutes the entailment outright, while an empty
//! result is only evidence within the bounds.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::analysis;
use crate::rules::RuleSet;
use crate::syntax::{PureAtom, Sequent, Sort, SpatialAtom, SpatialFormula, SymbolicHeap, Term};

/// A universe element, tagged with its sort. For non-loc sorts the first
/// indices are the (pairwise distinct) images of the declared constants.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct Val {
    pub sort: Sort,
    pub idx: usize,
}

impl Val {
    pub fn is_loc(&self) -> bool {
        self.sort.is_loc()
    }
}

/// Per-sort carriers with reserved injective images for constants.
#[derive(Clone, Debug, Default)]
pub struct Universe {
    constants: BTreeMap<Sort, Vec<String>>,
}

impl Universe {
    /// Collects the constants of the rule set and of any extra terms (the
    /// query), so that every constant has a fixed distinct image.
    pub fn new(rs: &RuleSet, extra: impl IntoIterator<Item = Term>) -> Self {
        let mut constants: BTreeMap<Sort, Vec<String>> = BTreeMap::new();
        let mut all: BTreeSet<Term> = rs.constants();
        all.extend(extra.into_iter().filter(Term::is_const));
        for c in all {
            constants.entry(c.sort).or_default().push(c.name);
        }
        Universe { constants }
    }

    pub fn const_val(&self, c: &Term) -> Option<Val> {
        let names = self.constants.get(&c.sort)?;
        let idx = names.iter().position(|n| *n == c.name)?;
        Some(Val { sort: c.sort.clone(), idx })
    }

    pub fn const_count(&self, sort: &Sort) -> usize {
        self.constants.get(sort).map_or(0, Vec::len)
    }

    pub fn loc(&self, i: usize) -> Val {
        Val { sort: Sort::loc(), idx: i }
    }

    /// A data element: constants first, anonymous elements after.
    pub fn data(&self, sort: &Sort, i: usize) -> Val {
        Val { sort: sort.clone(), idx: i }
    }

    pub fn display_val(&self, v: &Val) -> String {
        if v.is_loc() {
            return format!("l{}", v.idx + 1);
        }
        match self.constants.get(&v.sort).and_then(|names| names.get(v.idx)) {
            Some(name) => name.clone(),
            None => format!("{}#{}", v.sort, v.idx - self.const_count(&v.sort) + 1),
        }
    }
}

/// A finite store: values for the variables of interest, extended canonically
/// on constants.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize)]
pub struct Store {
    map: BTreeMap<Term, Val>,
}

impl Store {
    pub fn new(bindings: impl IntoIterator<Item = (Term, Val)>) -> Self {
        Store { map: bindings.into_iter().collect() }
    }

    pub fn eval(&self, t: &Term, universe: &Universe) -> Option<Val> {
        if t.is_const() {
            universe.const_val(t)
        } else {
            self.map.get(t).cloned()
        }
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&Term, &Val)> {
        self.map.iter()
    }

    pub fn with(&self, t: Term, v: Val) -> Store {
        let mut map = self.map.clone();
        map.insert(t, v);
        Store { map }
    }

    pub fn injective_on(&self, vars: &[Term], universe: &Universe) -> bool {
        let mut seen = BTreeSet::new();
        for v in vars {
            match self.eval(v, universe) {
                Some(val) => {
                    if !seen.insert(val) {
                        return false;
                    }
                }
                None => return false,
            }
        }
        true
    }
}

/// A finite heap: a map from locations to tuples of values.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Default, Serialize)]
pub struct Heap {
    cells: BTreeMap<Val, Vec<Val>>,
}

impl Heap {
    pub fn new(cells: impl IntoIterator<Item = (Val, Vec<Val>)>) -> Self {
        Heap { cells: cells.into_iter().collect() }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, l: &Val) -> Option<&Vec<Val>> {
        self.cells.get(l)
    }

    pub fn dom(&self) -> impl Iterator<Item = &Val> {
        self.cells.keys()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Val, &Vec<Val>)> {
        self.cells.iter()
    }

    /// All locations occurring in the heap: the domain plus every loc value
    /// referenced by a tuple.
    pub fn locs(&self) -> BTreeSet<Val> {
        let mut out: BTreeSet<Val> = self.cells.keys().cloned().collect();
        for tuple in self.cells.values() {
            out.extend(tuple.iter().filter(|v| v.is_loc()).cloned());
        }
        out
    }

    pub fn without(&self, l: &Val) -> Heap {
        let mut cells = self.cells.clone();
        cells.remove(l);
        Heap { cells }
    }

    pub fn disjoint(&self, other: &Heap) -> bool {
        self.cells.keys().all(|l| !other.cells.contains_key(l))
    }

    pub fn union(&self, other: &Heap) -> Heap {
        let mut cells = self.cells.clone();
        for (l, t) in &other.cells {
            cells.insert(l.clone(), t.clone());
        }
        Heap { cells }
    }

    pub fn is_subheap_of(&self, other: &Heap) -> bool {
        self.cells.iter().all(|(l, t)| other.get(l) == Some(t))
    }

    /// Location-to-location reachability within the heap.
    pub fn reaches(&self, from: &Val, to: &Val) -> bool {
        if from == to {
            return true;
        }
        let mut seen = BTreeSet::from([from.clone()]);
        let mut stack = vec![from.clone()];
        while let Some(l) = stack.pop() {
            if let Some(tuple) = self.cells.get(&l) {
                for v in tuple.iter().filter(|v| v.is_loc()) {
                    if v == to {
                        return true;
                    }
                    if seen.insert(v.clone()) {
                        stack.push(v.clone());
                    }
                }
            }
        }
        false
    }
}

/// A store paired with a heap.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Structure {
    pub store: Store,
    pub heap: Heap,
}

/// Printable form of a structure, resolving constant names via the universe.
pub fn display_structure(st: &Structure, universe: &Universe) -> String {
    let mut out = String::new();
    out.push_str("store:");
    let mut first = true;
    for (t, v) in st.store.bindings() {
        out.push_str(if first { " " } else { ", " });
        first = false;
        out.push_str(&format!("{} = {}", t, universe.display_val(v)));
    }
    if first {
        out.push_str(" (empty)");
    }
    out.push_str("\nheap:");
    if st.heap.is_empty() {
        out.push_str(" (empty)");
    }
    for (l, tuple) in st.heap.cells() {
        let vals: Vec<String> = tuple.iter().map(|v| universe.display_val(v)).collect();
        out.push_str(&format!(" {} -> ({});", universe.display_val(l), vals.join(",")));
    }
    out
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SemanticsError {
    #[error("term {0} has no value in the store")]
    Unbound(String),
    #[error("search bounds must be positive")]
    BadBounds,
    #[error("cannot build a model of a heap-unsatisfiable formula")]
    HeapUnsatisfiable,
    #[error("fresh location pool exhausted while building a model")]
    PoolExhausted,
    #[error("store is not injective on the allocated variables")]
    NonInjectiveStore,
    #[error("structure is not a model of the formula")]
    NotAModel,
}

fn eval(store: &Store, universe: &Universe, t: &Term) -> Result<Val, SemanticsError> {
    store.eval(t, universe).ok_or_else(|| SemanticsError::Unbound(t.name.clone()))
}

fn eval_pure(
    store: &Store,
    universe: &Universe,
    atom: &PureAtom,
) -> Result<bool, SemanticsError> {
    let l = eval(store, universe, &atom.left)?;
    let r = eval(store, universe, &atom.right)?;
    Ok(if atom.is_eq() { l == r } else { l != r })
}

/// Decides `(store, heap) |= h` against the rule set.
///
/// Predicate atoms are unfolded rule by rule; the witnesses for the
/// existential variables of a rule are forced by matching the points-to
/// tuple of its body against the cell stored at the root, so no search over
/// candidate values is needed.
pub fn satisfies(
    rs: &RuleSet,
    universe: &Universe,
    st: &Structure,
    h: &SymbolicHeap,
) -> Result<bool, SemanticsError> {
    for atom in h.pure.atoms() {
        if !eval_pure(&st.store, universe, atom)? {
            return Ok(false);
        }
    }
    // Points-to atoms first: their subheaps are forced.
    let mut atoms: Vec<&SpatialAtom> = h.spatial.atoms().iter().collect();
    atoms.sort_by_key(|a| a.is_pred());
    let mut goals = Vec::new();
    for atom in atoms {
        match atom {
            SpatialAtom::PointsTo { root, tuple } => {
                let root_v = eval(&st.store, universe, root)?;
                let mut vals = Vec::new();
                for t in tuple {
                    vals.push(eval(&st.store, universe, t)?);
                }
                goals.push(Goal::Cell(root_v, vals));
            }
            SpatialAtom::Pred { name, args } => {
                let mut vals = Vec::new();
                for t in args {
                    vals.push(eval(&st.store, universe, t)?);
                }
                goals.push(Goal::Pred(name.clone(), vals));
            }
        }
    }
    Ok(sat_goals(rs, universe, &goals, &st.heap))
}

enum Goal {
    Cell(Val, Vec<Val>),
    Pred(String, Vec<Val>),
}

fn sat_goals(rs: &RuleSet, universe: &Universe, goals: &[Goal], heap: &Heap) -> bool {
    let Some((first, rest)) = goals.split_first() else {
        return heap.is_empty();
    };
    match first {
        Goal::Cell(root, vals) => {
            heap.get(root) == Some(vals) && sat_goals(rs, universe, rest, &heap.without(root))
        }
        Goal::Pred(name, args) => {
            if rest.is_empty() {
                return sat_pred(rs, universe, name, args, heap);
            }
            // The predicate owns some subheap containing its root cell;
            // enumerate the subsets of the other cells.
            let root = &args[0];
            if !heap.cells.contains_key(root) {
                return false;
            }
            let others: Vec<(&Val, &Vec<Val>)> =
                heap.cells().filter(|(l, _)| *l != root).collect();
            for mask in 0..(1usize << others.len()) {
                let mut sub = Heap::default();
                sub.cells.insert(root.clone(), heap.get(root).unwrap().clone());
                let mut rest_heap = Heap::default();
                for (i, (l, t)) in others.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        sub.cells.insert((*l).clone(), (*t).clone());
                    } else {
                        rest_heap.cells.insert((*l).clone(), (*t).clone());
                    }
                }
                if sat_pred(rs, universe, name, args, &sub)
                    && sat_goals(rs, universe, rest, &rest_heap)
                {
                    return true;
                }
            }
            false
        }
    }
}

/// Does the heap, in its entirety, model `name(args)`?
fn sat_pred(rs: &RuleSet, universe: &Universe, name: &str, args: &[Val], heap: &Heap) -> bool {
    let root = &args[0];
    let Some(cell) = heap.get(root) else {
        return false;
    };
    'rules: for rule in rs.rules_of(name) {
        let Some((_, tuple)) = rule.points_to() else { continue };
        if tuple.len() != cell.len() {
            continue;
        }
        // Environment over the rule's own variables.
        let mut env: BTreeMap<Term, Val> = BTreeMap::new();
        for (p, a) in rule.params.iter().zip(args) {
            if let Some(prev) = env.get(p) {
                if prev != a {
                    continue 'rules;
                }
            }
            env.insert(p.clone(), a.clone());
        }
        // Unify the tuple pattern with the stored cell; this forces the
        // values of all existential variables.
        let mut ok = true;
        for (pat, val) in tuple.iter().zip(cell) {
            if pat.is_const() {
                if universe.const_val(pat).as_ref() != Some(val) {
                    ok = false;
                    break;
                }
                continue;
            }
            match env.get(pat) {
                Some(prev) => {
                    if prev != val {
                        ok = false;
                        break;
                    }
                }
                None => {
                    if pat.sort != val.sort {
                        ok = false;
                        break;
                    }
                    env.insert(pat.clone(), val.clone());
                }
            }
        }
        if !ok {
            continue;
        }
        let pure_ok = rule.body.pure.atoms().all(|a| {
            let l = lookup(&env, universe, &a.left);
            let r = lookup(&env, universe, &a.right);
            match (l, r) {
                (Some(l), Some(r)) => {
                    if a.is_eq() {
                        l == r
                    } else {
                        l != r
                    }
                }
                _ => false,
            }
        });
        if !pure_ok {
            continue;
        }
        let preds: Option<Vec<(String, Vec<Val>)>> = rule
            .body_preds()
            .map(|(q, qargs)| {
                let vals: Option<Vec<Val>> =
                    qargs.iter().map(|t| lookup(&env, universe, t)).collect();
                vals.map(|v| (q.clone(), v))
            })
            .collect();
        let Some(preds) = preds else { continue };
        let remaining = heap.without(root);
        if sat_pred_list(rs, universe, &preds, &remaining) {
            return true;
        }
    }
    false
}

fn lookup(env: &BTreeMap<Term, Val>, universe: &Universe, t: &Term) -> Option<Val> {
    if t.is_const() {
        universe.const_val(t)
    } else {
        env.get(t).cloned()
    }
}

fn sat_pred_list(
    rs: &RuleSet,
    universe: &Universe,
    preds: &[(String, Vec<Val>)],
    heap: &Heap,
) -> bool {
    let Some(((name, args), rest)) = preds.split_first() else {
        return heap.is_empty();
    };
    if rest.is_empty() {
        return sat_pred(rs, universe, name, args, heap);
    }
    let root = &args[0];
    if !heap.cells.contains_key(root) {
        return false;
    }
    let others: Vec<(&Val, &Vec<Val>)> = heap.cells().filter(|(l, _)| *l != root).collect();
    for mask in 0..(1usize << others.len()) {
        let mut sub = Heap::default();
        sub.cells.insert(root.clone(), heap.get(root).unwrap().clone());
        let mut rest_heap = Heap::default();
        for (i, (l, t)) in others.iter().enumerate() {
            if mask & (1 << i) != 0 {
                sub.cells.insert((*l).clone(), (*t).clone());
            } else {
                rest_heap.cells.insert((*l).clone(), (*t).clone());
            }
        }
        if sat_pred(rs, universe, name, args, &sub)
            && sat_pred_list(rs, universe, rest, &rest_heap)
        {
            return true;
        }
    }
    false
}

/// Search bounds for the counter-model enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bounds {
    pub max_cells: usize,
    pub max_locs: usize,
}

impl Bounds {
    pub fn new(max_cells: usize, max_locs: usize) -> Result<Self, SemanticsError> {
        if max_cells == 0 || max_locs == 0 {
            return Err(SemanticsError::BadBounds);
        }
        Ok(Bounds { max_cells, max_locs })
    }
}

/// Enumerates the models of a spatial formula under a fixed store, up to a
/// cell budget. The returned heaps are exactly the heaps `h` over the given
/// location pool such that `(store, h) |= spatial`.
pub fn models_of_spatial(
    rs: &RuleSet,
    universe: &Universe,
    store: &Store,
    spatial: &SpatialFormula,
    budget: usize,
    loc_pool: &[Val],
    data_fresh: &BTreeMap<Sort, usize>,
) -> Result<BTreeSet<Heap>, SemanticsError> {
    let mut goals = Vec::new();
    for atom in spatial.atoms() {
        match atom {
            SpatialAtom::PointsTo { root, tuple } => {
                let root_v = eval(store, universe, root)?;
                let vals: Result<Vec<Val>, _> =
                    tuple.iter().map(|t| eval(store, universe, t)).collect();
                goals.push((None, root_v, vals?));
            }
            SpatialAtom::Pred { name, args } => {
                let vals: Result<Vec<Val>, _> =
                    args.iter().map(|t| eval(store, universe, t)).collect();
                let vals = vals?;
                goals.push((Some(name.clone()), vals[0].clone(), vals));
            }
        }
    }
    let ctx = ModelCtx::new(rs, universe, loc_pool, data_fresh);
    Ok(ctx.models_of_goals(&goals, budget).as_ref().clone())
}

type Goals = [(Option<String>, Val, Vec<Val>)];

struct ModelCtx<'a> {
    rs: &'a RuleSet,
    universe: &'a Universe,
    loc_pool: &'a [Val],
    data_fresh: &'a BTreeMap<Sort, usize>,
    // Predicate models depend only on the argument values and the budget;
    // memoization keeps the goal-list recursion polynomial at these bounds.
    pred_memo: std::cell::RefCell<BTreeMap<(String, Vec<Val>, usize), std::rc::Rc<BTreeSet<Heap>>>>,
}

impl<'a> ModelCtx<'a> {
    fn new(
        rs: &'a RuleSet,
        universe: &'a Universe,
        loc_pool: &'a [Val],
        data_fresh: &'a BTreeMap<Sort, usize>,
    ) -> Self {
        ModelCtx {
            rs,
            universe,
            loc_pool,
            data_fresh,
            pred_memo: std::cell::RefCell::new(BTreeMap::new()),
        }
    }

    fn models_of_goals(&self, goals: &Goals, budget: usize) -> std::rc::Rc<BTreeSet<Heap>> {
        let Some(((name, root, vals), rest)) = goals.split_first() else {
            return std::rc::Rc::new(BTreeSet::from([Heap::default()]));
        };
        let firsts = match name {
            None => {
                if budget == 0 {
                    std::rc::Rc::new(BTreeSet::new())
                } else {
                    std::rc::Rc::new(BTreeSet::from([Heap::new([(
                        root.clone(),
                        vals.clone(),
                    )])]))
                }
            }
            Some(p) => self.models_of_pred_memo(p, vals, budget),
        };
        let mut out = BTreeSet::new();
        for h1 in firsts.iter() {
            let rest_models = self.models_of_goals(rest, budget - h1.len());
            for h2 in rest_models.iter() {
                if h1.disjoint(h2) {
                    out.insert(h1.union(h2));
                }
            }
        }
        std::rc::Rc::new(out)
    }

    fn models_of_pred_memo(
        &self,
        name: &str,
        args: &[Val],
        budget: usize,
    ) -> std::rc::Rc<BTreeSet<Heap>> {
        let key = (name.to_string(), args.to_vec(), budget);
        if let Some(hit) = self.pred_memo.borrow().get(&key) {
            return hit.clone();
        }
        let computed = std::rc::Rc::new(self.models_of_pred(name, args, budget));
        self.pred_memo.borrow_mut().insert(key, computed.clone());
        computed
    }

    fn models_of_pred(&self, name: &str, args: &[Val], budget: usize) -> BTreeSet<Heap> {
        let mut out = BTreeSet::new();
        if budget == 0 {
            return out;
        }
        let root = &args[0];
        for rule in self.rs.rules_of(name) {
            let Some((_, tuple)) = rule.points_to() else { continue };
            let mut env: BTreeMap<Term, Val> = BTreeMap::new();
            let mut ok = true;
            for (p, a) in rule.params.iter().zip(args) {
                if let Some(prev) = env.get(p) {
                    if prev != a {
                        ok = false;
                        break;
                    }
                }
                env.insert(p.clone(), a.clone());
            }
            if !ok {
                continue;
            }
            // Enumerate values for the existential tuple variables.
            let exist: Vec<Term> = {
                let mut seen = BTreeSet::new();
                tuple
                    .iter()
                    .filter(|t| t.is_var() && !env.contains_key(*t) && seen.insert((*t).clone()))
                    .cloned()
                    .collect()
            };
            let choices: Vec<Vec<Val>> = exist
                .iter()
                .map(|v| {
                    if v.is_loc() {
                        self.loc_pool.to_vec()
                    } else {
                        let consts = self.universe.const_count(&v.sort);
                        let fresh = self.data_fresh.get(&v.sort).copied().unwrap_or(1);
                        (0..consts + fresh)
                            .map(|i| self.universe.data(&v.sort, i))
                            .collect()
                    }
                })
                .collect();
            let mut assignment = vec![0usize; exist.len()];
            loop {
                let mut env2 = env.clone();
                for (v, &i) in exist.iter().zip(&assignment) {
                    env2.insert(v.clone(), choices[exist.iter().position(|e| e == v).unwrap()][i].clone());
                }
                self.models_for_instance(rule, &env2, root, tuple, budget, &mut out);
                // Advance the mixed-radix counter.
                let mut k = 0;
                loop {
                    if k == exist.len() {
                        break;
                    }
                    assignment[k] += 1;
                    if assignment[k] < choices[k].len() {
                        break;
                    }
                    assignment[k] = 0;
                    k += 1;
                }
                if k == exist.len() {
                    break;
                }
            }
        }
        out
    }

    fn models_for_instance(
        &self,
        rule: &crate::rules::InductiveRule,
        env: &BTreeMap<Term, Val>,
        root: &Val,
        tuple: &[Term],
        budget: usize,
        out: &mut BTreeSet<Heap>,
    ) {
        let pure_ok = rule.body.pure.atoms().all(|a| {
            match (lookup(env, self.universe, &a.left), lookup(env, self.universe, &a.right)) {
                (Some(l), Some(r)) => {
                    if a.is_eq() {
                        l == r
                    } else {
                        l != r
                    }
                }
                _ => false,
            }
        });
        if !pure_ok {
            return;
        }
        let cell: Option<Vec<Val>> =
            tuple.iter().map(|t| lookup(env, self.universe, t)).collect();
        let Some(cell) = cell else { return };
        let preds: Option<Vec<(Option<String>, Val, Vec<Val>)>> = rule
            .body_preds()
            .map(|(q, qargs)| {
                let vals: Option<Vec<Val>> =
                    qargs.iter().map(|t| lookup(env, self.universe, t)).collect();
                vals.map(|v| (Some(q.clone()), v[0].clone(), v))
            })
            .collect();
        let Some(preds) = preds else { return };
        for sub in self.models_of_goals(&preds, budget - 1).iter() {
            if !sub.dom().any(|l| l == root) {
                out.insert(sub.union(&Heap::new([(root.clone(), cell.clone())])));
            }
        }
    }
}

/// Canonical store enumeration for a sequent: location values are introduced
/// in first-use order (so stores are enumerated up to renaming of
/// locations), data values range over the constants plus a small pool of
/// anonymous elements, also introduced in first-use order.
fn canonical_stores(
    vars: &[Term],
    universe: &Universe,
    max_locs: usize,
    data_fresh: &BTreeMap<Sort, usize>,
) -> Vec<Store> {
    let mut out = Vec::new();
    let mut current: Vec<(Term, Val)> = Vec::new();
    fn rec(
        vars: &[Term],
        universe: &Universe,
        max_locs: usize,
        data_fresh: &BTreeMap<Sort, usize>,
        current: &mut Vec<(Term, Val)>,
        out: &mut Vec<Store>,
    ) {
        let Some((v, rest)) = vars.split_first() else {
            out.push(Store::new(current.iter().cloned()));
            return;
        };
        if v.is_loc() {
            let used = current
                .iter()
                .filter(|(_, val)| val.is_loc())
                .map(|(_, val)| val.idx + 1)
                .max()
                .unwrap_or(0);
            let limit = (used + 1).min(max_locs);
            for i in 0..limit {
                current.push((v.clone(), universe.loc(i)));
                rec(rest, universe, max_locs, data_fresh, current, out);
                current.pop();
            }
        } else {
            let consts = universe.const_count(&v.sort);
            let fresh_cap = data_fresh.get(&v.sort).copied().unwrap_or(1);
            let used_fresh = current
                .iter()
                .filter(|(_, val)| !val.is_loc() && val.sort == v.sort && val.idx >= consts)
                .map(|(_, val)| val.idx - consts + 1)
                .max()
                .unwrap_or(0);
            let limit = consts + (used_fresh + 1).min(fresh_cap);
            for i in 0..limit {
                current.push((v.clone(), universe.data(&v.sort, i)));
                rec(rest, universe, max_locs, data_fresh, current, out);
                current.pop();
            }
        }
    }
    rec(vars, universe, max_locs, data_fresh, &mut current, &mut out);
    out
}

fn data_fresh_pool(seq_vars: &BTreeSet<Term>) -> BTreeMap<Sort, usize> {
    let mut pool: BTreeMap<Sort, usize> = BTreeMap::new();
    for v in seq_vars {
        if !v.is_loc() {
            *pool.entry(v.sort.clone()).or_insert(0) += 1;
        }
    }
    for count in pool.values_mut() {
        *count += 1;
    }
    pool
}

/// Searches for a counter-model of the sequent: a structure satisfying the
/// left-hand side but not the right-hand side, leaving every `V` variable
/// unallocated and interpreting `V` injectively. Enumeration is by
/// increasing cell count, then store, then heap, so the first hit is the
/// minimal counter-model in that order.
pub fn find_countermodel(
    rs: &RuleSet,
    universe: &Universe,
    s: &Sequent,
    bounds: Bounds,
) -> Result<Option<Structure>, SemanticsError> {
    Ok(countermodels(rs, universe, s, bounds, 1)?.into_iter().next())
}

/// Enumerates counter-models in the same order as [`find_countermodel`], up
/// to `max_results` of them (0 for all within bounds).
pub fn countermodels(
    rs: &RuleSet,
    universe: &Universe,
    s: &Sequent,
    bounds: Bounds,
    max_results: usize,
) -> Result<Vec<Structure>, SemanticsError> {
    let vars: Vec<Term> = s.vars().into_iter().collect();
    let data_fresh = {
        let mut pool = data_fresh_pool(&s.vars());
        // Sorts that occur only inside the rules still need one element.
        for p in rs.profiles() {
            for sort in &p.sorts {
                if !sort.is_loc() {
                    pool.entry(sort.clone()).or_insert(1);
                }
            }
        }
        for rule in rs.rules() {
            for t in rule.body.terms() {
                if !t.is_loc() {
                    pool.entry(t.sort.clone()).or_insert(1);
                }
            }
        }
        pool
    };
    let loc_pool: Vec<Val> = (0..bounds.max_locs).map(|i| universe.loc(i)).collect();
    let stores = canonical_stores(&vars, universe, bounds.max_locs, &data_fresh);

    // Stores satisfying the pure part.
    let stores: Vec<Store> = stores
        .into_iter()
        .map(|store| {
            let pure_ok = s
                .lhs
                .pure
                .atoms()
                .map(|a| eval_pure(&store, universe, a))
                .collect::<Result<Vec<bool>, _>>()?
                .into_iter()
                .all(|b| b);
            Ok(pure_ok.then_some(store))
        })
        .collect::<Result<Vec<Option<Store>>, SemanticsError>>()?
        .into_iter()
        .flatten()
        .collect();

    let is_cm = |st: &Structure| -> Result<bool, SemanticsError> {
        if !st.store.injective_on(&s.vset, universe) {
            return Ok(false);
        }
        let v_ok = s
            .vset
            .iter()
            .all(|v| st.store.eval(v, universe).is_some_and(|val| st.heap.get(&val).is_none()));
        if !v_ok {
            return Ok(false);
        }
        Ok(!satisfies(rs, universe, st, &s.rhs)?)
    };

    if max_results == 1 {
        // Best-first with budget pruning: once a counter-model with c cells
        // is known, later stores are only enumerated up to c - 1 cells. The
        // result is still the minimum in (cells, store, heap) order.
        let mut best: Option<Structure> = None;
        for store in &stores {
            let budget = match &best {
                Some(st) if st.heap.is_empty() => break,
                Some(st) => st.heap.len() - 1,
                None => bounds.max_cells,
            };
            let models = models_of_spatial(
                rs,
                universe,
                store,
                &s.lhs.spatial,
                budget,
                &loc_pool,
                &data_fresh,
            )?;
            let mut by_size: BTreeMap<usize, Vec<Heap>> = BTreeMap::new();
            for m in models {
                by_size.entry(m.len()).or_default().push(m);
            }
            'store: for heaps in by_size.values() {
                for heap in heaps {
                    let st = Structure { store: store.clone(), heap: heap.clone() };
                    if is_cm(&st)? {
                        best = Some(st);
                        break 'store;
                    }
                }
            }
        }
        return Ok(best.into_iter().collect());
    }

    // Full enumeration in (cells, store, heap) order.
    let mut per_store: Vec<(&Store, BTreeMap<usize, Vec<Heap>>)> = Vec::new();
    for store in &stores {
        let models = models_of_spatial(
            rs,
            universe,
            store,
            &s.lhs.spatial,
            bounds.max_cells,
            &loc_pool,
            &data_fresh,
        )?;
        let mut by_size: BTreeMap<usize, Vec<Heap>> = BTreeMap::new();
        for m in models {
            by_size.entry(m.len()).or_default().push(m);
        }
        per_store.push((store, by_size));
    }
    let mut found = Vec::new();
    for cells in 0..=bounds.max_cells {
        for (store, by_size) in &per_store {
            let Some(heaps) = by_size.get(&cells) else { continue };
            for heap in heaps {
                let st = Structure { store: (*store).clone(), heap: heap.clone() };
                if is_cm(&st)? {
                    found.push(st);
                    if max_results != 0 && found.len() == max_results {
                        return Ok(found);
                    }
                }
            }
        }
    }
    Ok(found)
}

/// Builds a model of a heap-satisfiable spatial formula: each predicate atom
/// is unfolded with the rule that has the fewest body predicate atoms (ties
/// broken by rule order), allocating fresh locations from the pool for the
/// loc existentials and fresh data elements for the rest.
pub fn construct_model(
    rs: &RuleSet,
    universe: &Universe,
    phi: &SpatialFormula,
    store: &Store,
    fresh_pool: &[Val],
) -> Result<Heap, SemanticsError> {
    let allocated = analysis::alloc(phi);
    if allocated.windows(2).any(|w| w[0] == w[1]) {
        return Err(SemanticsError::HeapUnsatisfiable);
    }
    if !store.injective_on(&allocated, universe) {
        return Err(SemanticsError::NonInjectiveStore);
    }
    let mut pool = fresh_pool.iter().cloned();
    // Fresh data elements start above the constants and above every data
    // value used by the store.
    let mut next_data: BTreeMap<Sort, usize> = BTreeMap::new();
    for (_, v) in store.bindings() {
        if !v.is_loc() {
            let e = next_data.entry(v.sort.clone()).or_insert(0);
            *e = (*e).max(v.idx + 1);
        }
    }
    let mut heap = Heap::default();
    for atom in phi.atoms() {
        let sub = build_atom(rs, universe, store, atom, &mut pool, &mut next_data)?;
        if !heap.disjoint(&sub) {
            return Err(SemanticsError::PoolExhausted);
        }
        heap = heap.union(&sub);
    }
    Ok(heap)
}

fn build_atom(
    rs: &RuleSet,
    universe: &Universe,
    store: &Store,
    atom: &SpatialAtom,
    pool: &mut dyn Iterator<Item = Val>,
    next_data: &mut BTreeMap<Sort, usize>,
) -> Result<Heap, SemanticsError> {
    match atom {
        SpatialAtom::PointsTo { root, tuple } => {
            let root_v = eval(store, universe, root)?;
            let vals: Result<Vec<Val>, _> = tuple.iter().map(|t| eval(store, universe, t)).collect();
            Ok(Heap::new([(root_v, vals?)]))
        }
        SpatialAtom::Pred { name, args } => {
            let vals: Result<Vec<Val>, _> = args.iter().map(|t| eval(store, universe, t)).collect();
            build_pred(rs, universe, name, &vals?, pool, next_data)
        }
    }
}

fn build_pred(
    rs: &RuleSet,
    universe: &Universe,
    name: &str,
    args: &[Val],
    pool: &mut dyn Iterator<Item = Val>,
    next_data: &mut BTreeMap<Sort, usize>,
) -> Result<Heap, SemanticsError> {
    // Smallest rule first: fewest body predicate atoms, then rule order.
    let rule = rs
        .rules_of(name)
        .min_by_key(|r| r.body_preds().count())
        .ok_or(SemanticsError::HeapUnsatisfiable)?;
    let Some((_, tuple)) = rule.points_to() else {
        return Err(SemanticsError::HeapUnsatisfiable);
    };
    let mut env: BTreeMap<Term, Val> = BTreeMap::new();
    for (p, a) in rule.params.iter().zip(args) {
        env.insert(p.clone(), a.clone());
    }
    for t in tuple {
        if t.is_var() && !env.contains_key(t) {
            let val = if t.is_loc() {
                pool.next().ok_or(SemanticsError::PoolExhausted)?
            } else {
                let consts = universe.const_count(&t.sort);
                let idx = next_data.entry(t.sort.clone()).or_insert(consts);
                let v = universe.data(&t.sort, (*idx).max(consts));
                *idx = v.idx + 1;
                v
            };
            env.insert(t.clone(), val);
        }
    }
    let root = args[0].clone();
    let cell: Option<Vec<Val>> = tuple.iter().map(|t| lookup(&env, universe, t)).collect();
    let mut heap = Heap::new([(root, cell.ok_or(SemanticsError::HeapUnsatisfiable)?)]);
    for (q, qargs) in rule.body_preds() {
        let vals: Option<Vec<Val>> = qargs.iter().map(|t| lookup(&env, universe, t)).collect();
        let sub = build_pred(
            rs,
            universe,
            q,
            &vals.ok_or(SemanticsError::HeapUnsatisfiable)?,
            pool,
            next_data,
        )?;
        if !heap.disjoint(&sub) {
            return Err(SemanticsError::PoolExhausted);
        }
        heap = heap.union(&sub);
    }
    Ok(heap)
}

/// Checks path-compatibility of a model: whenever the location of `x`
/// reaches the location of `y` inside the heap, the formula must already
/// contain a syntactic path from `x` to `y`.
pub fn is_path_compatible(
    rs: &RuleSet,
    universe: &Universe,
    st: &Structure,
    h: &SymbolicHeap,
) -> Result<bool, SemanticsError> {
    if !satisfies(rs, universe, st, h)? {
        return Err(SemanticsError::NotAModel);
    }
    let rel = analysis::path_to(rs, h);
    let loc_vars: Vec<Term> = h.loc_vars().into_iter().collect();
    for x in &loc_vars {
        let xv = eval(&st.store, universe, x)?;
        for y in &loc_vars {
            let yv = eval(&st.store, universe, y)?;
            if st.heap.reaches(&xv, &yv) && !rel.reaches(x, y) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{InductiveRule, Profile};
    use crate::syntax::PureFormula;

    fn lv(n: &str) -> Term {
        Term::var(n, Sort::loc())
    }

    fn pt(root: &str, tuple: &[&str]) -> SpatialAtom {
        SpatialAtom::points_to(lv(root), tuple.iter().map(|t| lv(t)).collect()).unwrap()
    }

    fn pa(name: &str, args: &[&str]) -> SpatialAtom {
        SpatialAtom::pred(name, args.iter().map(|t| lv(t)).collect()).unwrap()
    }

    fn sh(atoms: Vec<SpatialAtom>) -> SymbolicHeap {
        SymbolicHeap::spatial(SpatialFormula::new(atoms))
    }

    fn intro_ls() -> RuleSet {
        let profile = Profile::new("ls", vec![Sort::loc(), Sort::loc()]).unwrap();
        let r1 = InductiveRule::new("ls", vec![lv("x"), lv("y")], sh(vec![pt("x", &["y"])]));
        let r2 = InductiveRule::new(
            "ls",
            vec![lv("x"), lv("y")],
            sh(vec![pt("x", &["z"]), pa("ls", &["z", "y"])]),
        );
        RuleSet::new(vec![profile], vec![r1, r2]).unwrap()
    }

    fn intro_als() -> RuleSet {
        let profile = Profile::new("als", vec![Sort::loc(), Sort::loc()]).unwrap();
        let r1 = InductiveRule::new(
            "als",
            vec![lv("x"), lv("y")],
            SymbolicHeap::new(
                SpatialFormula::new(vec![pt("x", &["z"]), pa("als", &["z", "y"])]),
                PureFormula::new(vec![PureAtom::neq(lv("y"), lv("z")).unwrap()]),
            ),
        );
        let r2 = InductiveRule::new("als", vec![lv("x"), lv("y")], sh(vec![pt("x", &["y"])]));
        RuleSet::new(vec![profile], vec![r1, r2]).unwrap()
    }

    fn intro_tree() -> RuleSet {
        let profile = Profile::new("tree", vec![Sort::loc()]).unwrap();
        let r1 = InductiveRule::new("tree", vec![lv("x")], sh(vec![pt("x", &[])]));
        let r2 = InductiveRule::new(
            "tree",
            vec![lv("x")],
            sh(vec![pt("x", &["y", "z"]), pa("tree", &["y"]), pa("tree", &["z"])]),
        );
        RuleSet::new(vec![profile], vec![r1, r2]).unwrap()
    }

    fn store2(universe: &Universe) -> Store {
        Store::new([(lv("x"), universe.loc(0)), (lv("y"), universe.loc(1))])
    }

    #[test]
    fn satisfies_list_segment() {
        let rs = intro_ls();
        let u = Universe::new(&rs, []);
        let store = store2(&u);
        // h = { l1 -> (l2), l2 -> (l2) } models ls(x,y).
        let h = Heap::new([(u.loc(0), vec![u.loc(1)]), (u.loc(1), vec![u.loc(1)])]);
        let st = Structure { store: store.clone(), heap: h };
        assert!(satisfies(&rs, &u, &st, &sh(vec![pa("ls", &["x", "y"])])).unwrap());
        // h' = { l1 -> (l2) } also models ls(x,y).
        let h2 = Heap::new([(u.loc(0), vec![u.loc(1)])]);
        let st2 = Structure { store, heap: h2 };
        assert!(satisfies(&rs, &u, &st2, &sh(vec![pa("ls", &["x", "y"])])).unwrap());
    }

    #[test]
    fn satisfies_acyclic_list() {
        let rs = intro_als();
        let u = Universe::new(&rs, []);
        let store = store2(&u);
        let atom = sh(vec![pa("als", &["x", "y"])]);
        // One cell: holds.
        let st = Structure {
            store: store.clone(),
            heap: Heap::new([(u.loc(0), vec![u.loc(1)])]),
        };
        assert!(satisfies(&rs, &u, &st, &atom).unwrap());
        // Two cells ending in a loop on y: the disequation blocks it.
        let st = Structure {
            store,
            heap: Heap::new([(u.loc(0), vec![u.loc(1)]), (u.loc(1), vec![u.loc(1)])]),
        };
        assert!(!satisfies(&rs, &u, &st, &atom).unwrap());
    }

    #[test]
    fn satisfies_emp_and_points_to() {
        let rs = intro_ls();
        let u = Universe::new(&rs, []);
        let store = store2(&u);
        let empty = Structure { store: store.clone(), heap: Heap::default() };
        assert!(satisfies(&rs, &u, &empty, &SymbolicHeap::emp()).unwrap());
        assert!(!satisfies(&rs, &u, &empty, &sh(vec![pt("x", &[])])).unwrap());
    }

    #[test]
    fn countermodel_swapped_arguments() {
        // p(x,y) |- p(y,x) with p(x,y) <= x -> (y): counter-model with one
        // cell leaving y unallocated.
        let profile = Profile::new("p", vec![Sort::loc(), Sort::loc()]).unwrap();
        let rules =
            vec![InductiveRule::new("p", vec![lv("x"), lv("y")], sh(vec![pt("x", &["y"])]))];
        let rs = RuleSet::new(vec![profile], rules).unwrap();
        let u = Universe::new(&rs, []);
        let s = Sequent::new(
            sh(vec![pa("p", &["x", "y"])]),
            vec![],
            sh(vec![pa("p", &["y", "x"])]),
        );
        let cm = find_countermodel(&rs, &u, &s, Bounds::new(1, 3).unwrap()).unwrap().unwrap();
        assert_eq!(cm.heap.len(), 1);
        assert_eq!(cm.store.eval(&lv("x"), &u), Some(u.loc(0)));
        assert_eq!(cm.store.eval(&lv("y"), &u), Some(u.loc(1)));
        assert_eq!(cm.heap.get(&u.loc(0)), Some(&vec![u.loc(1)]));
    }

    #[test]
    fn countermodel_emp_rhs() {
        let rs = intro_tree();
        let u = Universe::new(&rs, []);
        let s = Sequent::new(sh(vec![pt("x", &[])]), vec![], SymbolicHeap::emp());
        let cm = find_countermodel(&rs, &u, &s, Bounds::new(2, 2).unwrap()).unwrap().unwrap();
        assert_eq!(cm.heap.len(), 1);
        assert_eq!(cm.heap.get(&u.loc(0)), Some(&vec![]));
    }

    #[test]
    fn bad_bounds_are_rejected() {
        assert_eq!(Bounds::new(0, 3).unwrap_err(), SemanticsError::BadBounds);
        assert_eq!(Bounds::new(3, 0).unwrap_err(), SemanticsError::BadBounds);
    }

    #[test]
    fn construct_model_points_to() {
        let rs = intro_ls();
        let u = Universe::new(&rs, []);
        let store = store2(&u);
        let phi = SpatialFormula::new(vec![pt("x", &["y"])]);
        let h = construct_model(&rs, &u, &phi, &store, &[]).unwrap();
        assert_eq!(h, Heap::new([(u.loc(0), vec![u.loc(1)])]));
    }

    #[test]
    fn construct_model_prefers_smallest_rule() {
        let rs = intro_tree();
        let u = Universe::new(&rs, []);
        let store = Store::new([(lv("x"), u.loc(0))]);
        let phi = SpatialFormula::new(vec![pa("tree", &["x"])]);
        let pool: Vec<Val> = (1..6).map(|i| u.loc(i)).collect();
        let h = construct_model(&rs, &u, &phi, &store, &pool).unwrap();
        assert_eq!(h, Heap::new([(u.loc(0), vec![])]));
        let st = Structure { store, heap: h };
        assert!(satisfies(&rs, &u, &st, &sh(vec![pa("tree", &["x"])])).unwrap());
    }

    #[test]
    fn construct_model_disjoint_atoms() {
        // p(x) * q(y): two disjoint single cells.
        let profiles = vec![
            Profile::new("p", vec![Sort::loc()]).unwrap(),
            Profile::new("q", vec![Sort::loc()]).unwrap(),
        ];
        let rules = vec![
            InductiveRule::new("p", vec![lv("x")], sh(vec![pt("x", &[])])),
            InductiveRule::new("q", vec![lv("x")], sh(vec![pt("x", &[])])),
        ];
        let rs = RuleSet::new(profiles, rules).unwrap();
        let u = Universe::new(&rs, []);
        let store = store2(&u);
        let phi = SpatialFormula::new(vec![pa("p", &["x"]), pa("q", &["y"])]);
        let h = construct_model(&rs, &u, &phi, &store, &[]).unwrap();
        assert_eq!(h.len(), 2);
        let st = Structure { store, heap: h };
        assert!(satisfies(&rs, &u, &st, &sh(vec![pa("p", &["x"]), pa("q", &["y"])])).unwrap());
        // Rejects a heap-unsatisfiable formula.
        let bad = SpatialFormula::new(vec![pa("p", &["x"]), pa("q", &["x"])]);
        let store2 = Store::new([(lv("x"), u.loc(0))]);
        assert_eq!(
            construct_model(&rs, &u, &bad, &store2, &[]).unwrap_err(),
            SemanticsError::HeapUnsatisfiable
        );
    }

    #[test]
    fn path_compatibility() {
        let rs = intro_ls();
        let u = Universe::new(&rs, []);
        let store = store2(&u);
        // Single points-to model of x -> (y).
        let st = Structure {
            store: store.clone(),
            heap: Heap::new([(u.loc(0), vec![u.loc(1)])]),
        };
        assert!(is_path_compatible(&rs, &u, &st, &sh(vec![pt("x", &["y"])])).unwrap());
        // x -> (y) * y -> (x): heap reachability matches the syntactic paths.
        let st = Structure {
            store: store.clone(),
            heap: Heap::new([(u.loc(0), vec![u.loc(1)]), (u.loc(1), vec![u.loc(0)])]),
        };
        assert!(
            is_path_compatible(&rs, &u, &st, &sh(vec![pt("x", &["y"]), pt("y", &["x"])])).unwrap()
        );
        // Non-models are rejected.
        let st = Structure { store, heap: Heap::default() };
        assert_eq!(
            is_path_compatible(&rs, &u, &st, &sh(vec![pt("x", &["y"])])).unwrap_err(),
            SemanticsError::NotAModel
        );
    }

    #[test]
    fn disjoint_components_are_path_compatible() {
        let profiles = vec![Profile::new("p", vec![Sort::loc()]).unwrap()];
        let rules = vec![InductiveRule::new("p", vec![lv("x")], sh(vec![pt("x", &[])]))];
        let rs = RuleSet::new(profiles, rules).unwrap();
        let u = Universe::new(&rs, []);
        let store = Store::new([(lv("x"), u.loc(0)), (lv("z"), u.loc(1))]);
        let st = Structure {
            store,
            heap: Heap::new([(u.loc(0), vec![]), (u.loc(1), vec![])]),
        };
        assert!(
            is_path_compatible(&rs, &u, &st, &sh(vec![pa("p", &["x"]), pa("p", &["z"])])).unwrap()
        );
    }

    #[test]
    fn model_enumeration_matches_satisfies() {
        // Every enumerated model satisfies the formula, and every model found
        // by satisfies over raw heaps is enumerated.
        let rs = intro_ls();
        let u = Universe::new(&rs, []);
        let store = store2(&u);
        let phi = SpatialFormula::new(vec![pa("ls", &["x", "y"])]);
        let pool: Vec<Val> = (0..3).map(|i| u.loc(i)).collect();
        let models =
            models_of_spatial(&rs, &u, &store, &phi, 3, &pool, &BTreeMap::new()).unwrap();
        assert!(!models.is_empty());
        for m in &models {
            let st = Structure { store: store.clone(), heap: m.clone() };
            assert!(satisfies(&rs, &u, &st, &SymbolicHeap::spatial(phi.clone())).unwrap());
        }
        // The two-model witness is present.
        let h1 = Heap::new([(u.loc(0), vec![u.loc(1)])]);
        let h2 = Heap::new([(u.loc(0), vec![u.loc(1)]), (u.loc(1), vec![u.loc(1)])]);
        assert!(models.contains(&h1));
        assert!(models.contains(&h2));
    }
}
