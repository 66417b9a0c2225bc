//! The eight inference rules and the strategy that selects admissible
//! applications.
//!
//! Rules are applied bottom-up: each `apply_*` function enumerates the
//! instances whose conclusion is the given sequent and whose side conditions
//! hold, returning the premises of each instance. [`enumerate_admissible`]
//! layers the strategy on top: nothing applies to axioms or anti-axioms, the
//! rules are tried in a fixed priority order, applications with an anti-axiom
//! premise are discarded, and except for the separation rule on narrow
//! sequents only one selected application survives.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::analysis::{
    alloc, alloc_heap, anti_axiom_condition, atom_edges, axiom_form, entails_pure, is_narrow,
    narrow_vars,
};
use crate::rules::{instantiate, RuleSet};
use crate::syntax::{
    PureAtom, PureFormula, Sequent, SpatialAtom, SpatialFormula, Substitution, SymbolicHeap, Term,
};

/// Rule identifiers, in priority order (highest first).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum RuleId {
    W,
    V,
    R,
    E,
    S,
    U,
    C,
    I,
}

impl RuleId {
    pub const ALL: [RuleId; 8] =
        [RuleId::W, RuleId::V, RuleId::R, RuleId::E, RuleId::S, RuleId::U, RuleId::C, RuleId::I];

    pub fn name(self) -> &'static str {
        match self {
            RuleId::W => "W",
            RuleId::V => "V",
            RuleId::R => "R",
            RuleId::E => "E",
            RuleId::S => "S",
            RuleId::U => "U",
            RuleId::C => "C",
            RuleId::I => "I",
        }
    }
}

impl std::fmt::Display for RuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Instantiation data of a rule application, kept for proof printing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AppDetail {
    /// The equation consumed by R, oriented as applied.
    Replace { from: Term, to: Term },
    /// Pure atoms dropped from the right-hand side by E.
    DropRhs { atoms: Vec<PureAtom> },
    /// Pure atoms dropped from the left-hand side by W.
    DropLhs { atoms: Vec<PureAtom> },
    /// The variable removed from V.
    DropVar { var: Term },
    /// The selected atom and the left part of the split for S.
    Split { selected: SpatialAtom, left: Vec<SpatialAtom> },
    /// The left-hand atom unfolded by U.
    Unfold { atom: SpatialAtom },
    /// The inductive rule used by I and the tuple substitution.
    Imitate { rule_index: usize, sigma: Vec<(Term, Term)> },
    /// The case-split pair of C.
    Cases { x: Term, y: Term },
}

impl std::fmt::Display for AppDetail {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppDetail::Replace { from, to } => write!(f, "{from} <- {to}"),
            AppDetail::DropRhs { atoms } | AppDetail::DropLhs { atoms } => {
                let items: Vec<String> = atoms.iter().map(|a| a.to_string()).collect();
                write!(f, "drop {}", items.join(", "))
            }
            AppDetail::DropVar { var } => write!(f, "drop {var}"),
            AppDetail::Split { selected, .. } => write!(f, "select {selected}"),
            AppDetail::Unfold { atom } => write!(f, "unfold {atom}"),
            AppDetail::Imitate { rule_index, sigma } => {
                let items: Vec<String> =
                    sigma.iter().map(|(a, b)| format!("{a} <- {b}")).collect();
                write!(f, "rule #{rule_index} {{{}}}", items.join(", "))
            }
            AppDetail::Cases { x, y } => write!(f, "{x} = {y} or {x} != {y}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleApplication {
    pub rule: RuleId,
    pub detail: AppDetail,
    pub premises: Vec<Sequent>,
}

impl RuleApplication {
    /// Fixed serialization used by the selection function.
    fn sort_key(&self) -> String {
        let premises: Vec<String> = self.premises.iter().map(|p| p.to_string()).collect();
        format!("{} [{}] {}", self.rule, premises.join(" || "), self.detail)
    }
}

#[derive(Error, Debug)]
pub enum CalculusError {
    #[error("a validity oracle is required to split a sequent that is not narrow")]
    OracleUnavailable,
    #[error("validity oracle failed: {0}")]
    OracleFailed(String),
}

/// Validity callback used by the separation rule on sequents that are not
/// narrow; the left premise of each candidate split is passed to it.
pub type ValidityOracle<'a> = dyn FnMut(&Sequent) -> Result<bool, String> + 'a;

/// R: consumes one equation of the left-hand side by substituting throughout
/// the sequent, V included.
pub fn apply_r(s: &Sequent) -> Vec<RuleApplication> {
    let mut out = Vec::new();
    for atom in s.lhs.pure.atoms().filter(|a| a.is_eq()) {
        // Canonical orientation puts the smaller term left; replace the
        // right-hand variable (constants cannot be replaced).
        let (from, to) = (atom.right.clone(), atom.left.clone());
        if !from.is_var() {
            continue;
        }
        let sigma = Substitution::singleton(from.clone(), to.clone())
            .expect("pure atoms are sort-homogeneous");
        out.push(RuleApplication {
            rule: RuleId::R,
            detail: AppDetail::Replace { from, to },
            premises: vec![sigma.apply_sequent(s)],
        });
    }
    out
}

/// E: drops every right-hand pure atom that the left-hand side entails
/// syntactically (one maximal application).
pub fn apply_e(s: &Sequent) -> Vec<RuleApplication> {
    let droppable: BTreeSet<PureAtom> = s
        .rhs
        .pure
        .atoms()
        .filter(|a| entails_pure(&s.lhs, &s.vset, &PureFormula::new(vec![(*a).clone()])))
        .cloned()
        .collect();
    if droppable.is_empty() {
        return Vec::new();
    }
    let premise = Sequent::new(
        s.lhs.clone(),
        s.vset.clone(),
        SymbolicHeap::new(s.rhs.spatial.clone(), s.rhs.pure.without(&droppable)),
    );
    vec![RuleApplication {
        rule: RuleId::E,
        detail: AppDetail::DropRhs { atoms: droppable.into_iter().collect() },
        premises: vec![premise],
    }]
}

/// W: drops left-hand disequations that are either forced by allocation (so
/// they carry no information) or isolated on a variable occurring nowhere
/// else. Dropping is iterated to a fixpoint and emitted as one application.
pub fn apply_w(s: &Sequent) -> Vec<RuleApplication> {
    let spatial_only = SymbolicHeap::spatial(s.lhs.spatial.clone());
    let mut remaining: Vec<PureAtom> = s.lhs.pure.atoms().cloned().collect();
    let mut dropped: Vec<PureAtom> = Vec::new();
    loop {
        let mut changed = false;
        // (i) disequations entailed by the spatial part alone.
        let mut keep = Vec::new();
        for atom in remaining.drain(..) {
            if atom.is_neq()
                && !atom.is_bottom()
                && entails_pure(&spatial_only, &s.vset, &PureFormula::new(vec![atom.clone()]))
            {
                dropped.push(atom);
                changed = true;
            } else {
                keep.push(atom);
            }
        }
        remaining = keep;
        // (ii) a variable whose every remaining occurrence is a disequation
        // and which occurs nowhere else in the sequent.
        let spatial_vars = s.lhs.spatial.vars();
        let rhs_vars = s.rhs.vars();
        let candidates: BTreeSet<Term> = remaining
            .iter()
            .flat_map(|a| a.terms())
            .filter(|t| t.is_var())
            .cloned()
            .collect();
        for x in candidates {
            if spatial_vars.contains(&x) || rhs_vars.contains(&x) {
                continue;
            }
            let (mine, rest): (Vec<PureAtom>, Vec<PureAtom>) =
                remaining.iter().cloned().partition(|a| a.terms().contains(&&x));
            if mine.is_empty() {
                continue;
            }
            let all_diseq = mine.iter().all(|a| {
                a.is_neq() && {
                    let other = if a.left == x { &a.right } else { &a.left };
                    *other != x
                }
            });
            let rest_vars: BTreeSet<Term> =
                rest.iter().flat_map(|a| a.terms()).cloned().collect();
            if all_diseq && !rest_vars.contains(&x) {
                dropped.extend(mine);
                remaining = rest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if dropped.is_empty() {
        return Vec::new();
    }
    let premise = Sequent::new(
        SymbolicHeap::new(s.lhs.spatial.clone(), PureFormula::new(remaining)),
        s.vset.clone(),
        s.rhs.clone(),
    );
    dropped.sort();
    vec![RuleApplication {
        rule: RuleId::W,
        detail: AppDetail::DropLhs { atoms: dropped },
        premises: vec![premise],
    }]
}

/// V: removes one occurrence of a variable of `V` that occurs on neither
/// side.
pub fn apply_v(s: &Sequent) -> Vec<RuleApplication> {
    let lhs_vars = s.lhs.vars();
    let rhs_vars = s.rhs.vars();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for v in &s.vset {
        if !seen.insert(v.clone()) {
            continue;
        }
        if lhs_vars.contains(v) || rhs_vars.contains(v) {
            continue;
        }
        out.push(RuleApplication {
            rule: RuleId::V,
            detail: AppDetail::DropVar { var: v.clone() },
            premises: vec![s.without_vset_occurrence(v)],
        });
    }
    out
}

/// The single right-hand atom of a sequent eligible for U, C or I.
fn single_rhs_atom(s: &Sequent) -> Option<&SpatialAtom> {
    if !s.rhs.pure.is_top() {
        return None;
    }
    match s.rhs.spatial.atoms() {
        [atom] => Some(atom),
        _ => None,
    }
}

fn spatial_without_index(f: &SpatialFormula, idx: usize) -> SpatialFormula {
    let mut atoms = f.atoms().to_vec();
    atoms.remove(idx);
    SpatialFormula::new(atoms)
}

/// U: unfolds the left-hand predicate atom whose root matches the single
/// right-hand atom, one premise per inductive rule.
pub fn apply_u(rs: &RuleSet, s: &Sequent) -> Vec<RuleApplication> {
    let Some(goal) = single_rhs_atom(s) else { return Vec::new() };
    let root = goal.root();
    let Some((idx, atom)) = s
        .lhs
        .spatial
        .atoms()
        .iter()
        .enumerate()
        .find(|(_, a)| a.is_pred() && a.root() == root)
    else {
        return Vec::new();
    };
    let SpatialAtom::Pred { name, args } = atom else { unreachable!() };
    let frame = spatial_without_index(&s.lhs.spatial, idx);
    let avoid = s.vars();
    let mut premises = Vec::new();
    for rule in rs.rules_of(name) {
        let inst = instantiate(rule, args, &avoid);
        premises.push(Sequent::new(
            SymbolicHeap::new(frame.star(&inst.spatial), s.lhs.pure.and(&inst.pure)),
            s.vset.clone(),
            s.rhs.clone(),
        ));
    }
    if premises.is_empty() {
        return Vec::new();
    }
    vec![RuleApplication {
        rule: RuleId::U,
        detail: AppDetail::Unfold { atom: atom.clone() },
        premises,
    }]
}

/// I: matches the single right-hand predicate atom against an inductive rule
/// whose instantiated points-to tuple covers the left-hand cell at the same
/// root; the tuple substitution may only bind rule existentials, and the
/// instantiated rule constraint must be entailed syntactically.
pub fn apply_i(rs: &RuleSet, s: &Sequent) -> Vec<RuleApplication> {
    let Some(goal) = single_rhs_atom(s) else { return Vec::new() };
    let SpatialAtom::Pred { name, args } = goal else { return Vec::new() };
    let root = goal.root();
    let Some(cell) = s.lhs.spatial.atoms().iter().find_map(|a| match a {
        SpatialAtom::PointsTo { root: r, tuple } if r == root => Some(tuple),
        _ => None,
    }) else {
        return Vec::new();
    };
    let seq_vars = s.vars();
    let mut out = Vec::new();
    for (rule_index, rule) in rs.rules_of(name).enumerate() {
        let inst = instantiate(rule, args, &seq_vars);
        let Some(pattern) = inst.spatial.atoms().iter().find_map(|a| match a {
            SpatialAtom::PointsTo { root: r, tuple } if r == root => Some(tuple),
            _ => None,
        }) else {
            continue;
        };
        if pattern.len() != cell.len() {
            continue;
        }
        let mut sigma = Substitution::new();
        let mut ok = true;
        for (u, y) in pattern.iter().zip(cell) {
            // Rule existentials were renamed away from the sequent, so a
            // variable outside the sequent is exactly a rule existential.
            let existential = u.is_var() && !seq_vars.contains(u);
            if existential {
                match sigma.get(u) {
                    Some(prev) if prev != y => {
                        ok = false;
                        break;
                    }
                    Some(_) => {}
                    None => {
                        if sigma.bind(u.clone(), y.clone()).is_err() {
                            ok = false;
                            break;
                        }
                    }
                }
            } else if u != y {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        let constraint = PureFormula::new(inst.pure.atoms().map(|a| sigma.apply_pure_atom(a)));
        if !entails_pure(&s.lhs, &s.vset, &constraint) {
            continue;
        }
        let rhs_spatial = SpatialFormula::new(
            inst.spatial.atoms().iter().map(|a| sigma.apply_atom(a)).collect(),
        );
        debug_assert!(rhs_spatial.vars().iter().all(|v| seq_vars.contains(v)));
        out.push(RuleApplication {
            rule: RuleId::I,
            detail: AppDetail::Imitate {
                rule_index,
                sigma: sigma.bindings().map(|(a, b)| (a.clone(), b.clone())).collect(),
            },
            premises: vec![Sequent::new(
                s.lhs.clone(),
                s.vset.clone(),
                SymbolicHeap::spatial(rhs_spatial),
            )],
        });
    }
    out
}

/// C: case-splits on the equality of an allocated left-hand variable with a
/// right-hand variable that is neither allocated nor in `V`.
pub fn apply_c(s: &Sequent) -> Vec<RuleApplication> {
    let Some(goal) = single_rhs_atom(s) else { return Vec::new() };
    if !goal.is_pred() {
        return Vec::new();
    }
    let lhs_alloc: BTreeSet<Term> = alloc_heap(&s.lhs).into_iter().collect();
    let ys: Vec<Term> = s
        .rhs
        .vars()
        .into_iter()
        .filter(|y| y.is_loc() && !lhs_alloc.contains(y) && !s.vset.contains(y))
        .collect();
    let mut out = Vec::new();
    for x in &lhs_alloc {
        if !x.is_loc() {
            continue;
        }
        for y in &ys {
            let diseq = PureAtom::neq(x.clone(), y.clone()).expect("both loc");
            if s.lhs.pure.contains(&diseq) {
                continue;
            }
            let sigma = Substitution::singleton(x.clone(), y.clone()).expect("both loc");
            let equal_premise = sigma.apply_sequent(s);
            let diseq_premise = Sequent::new(
                SymbolicHeap::new(s.lhs.spatial.clone(), s.lhs.pure.insert(diseq)),
                s.vset.clone(),
                s.rhs.clone(),
            );
            out.push(RuleApplication {
                rule: RuleId::C,
                detail: AppDetail::Cases { x: x.clone(), y: y.clone() },
                premises: vec![equal_premise, diseq_premise],
            });
        }
    }
    out
}

/// S: splits the left-hand side along the selected right-hand atom.
///
/// The atom rooted at the selected atom's root is forced into the left part;
/// atoms rooted at the other variables of the selected atom (and, on narrow
/// sequents, at narrow variables) are free choices; every remaining atom
/// follows the reachability of the left part and defaults to the right part.
/// Splits with an anti-axiom premise are discarded. On sequents that are not
/// narrow the oracle must confirm the left premise and only the selected
/// split is kept.
pub fn apply_s(
    rs: &RuleSet,
    s: &Sequent,
    mut oracle: Option<&mut ValidityOracle>,
) -> Result<Vec<RuleApplication>, CalculusError> {
    if !s.rhs.pure.is_top() || s.rhs.spatial.len() < 2 {
        return Ok(Vec::new());
    }
    let narrow = is_narrow(rs, s);
    let rhs_atoms = s.rhs.spatial.atoms();
    // Canonical order makes the first atom the selected one.
    let psi1 = rhs_atoms[0].clone();
    let psi2 = SpatialFormula::new(rhs_atoms[1..].to_vec());
    let lhs_atoms = s.lhs.spatial.atoms();
    let root = psi1.root().clone();

    let mut root_of: BTreeMap<Term, usize> = BTreeMap::new();
    for (i, a) in lhs_atoms.iter().enumerate() {
        root_of.entry(a.root().clone()).or_insert(i);
    }
    let Some(&root_idx) = root_of.get(&root) else {
        return Ok(Vec::new());
    };

    let psi1_locs: BTreeSet<Term> =
        psi1.vars().into_iter().filter(|v| v.is_loc()).collect();
    let mut choice_roots: BTreeSet<Term> = psi1_locs.clone();
    if narrow {
        choice_roots.extend(narrow_vars(s));
    }
    choice_roots.remove(&root);
    let choice_idxs: Vec<usize> = choice_roots
        .iter()
        .filter_map(|v| root_of.get(v).copied())
        .filter(|&i| i != root_idx)
        .collect();

    let atom_targets: Vec<Vec<Term>> = lhs_atoms
        .iter()
        .map(|a| atom_edges(rs, a).into_iter().map(|(_, t)| t).collect())
        .collect();

    let mut partitions: BTreeSet<Vec<bool>> = BTreeSet::new();
    for mask in 0..(1usize << choice_idxs.len()) {
        let mut side: Vec<Option<bool>> = vec![None; lhs_atoms.len()];
        side[root_idx] = Some(true);
        for (k, &ci) in choice_idxs.iter().enumerate() {
            side[ci] = Some(mask & (1 << k) != 0);
        }
        // Variables that block propagation into the left part: selected-atom
        // variables without a left-side atom, and roots explicitly sent right.
        let mut blocked: BTreeSet<Term> = psi1_locs
            .iter()
            .filter(|v| match root_of.get(*v) {
                Some(&i) => side[i] == Some(false),
                None => true,
            })
            .cloned()
            .collect();
        for (i, a) in lhs_atoms.iter().enumerate() {
            if side[i] == Some(false) {
                blocked.insert(a.root().clone());
            }
        }
        // Left-side reachability closure.
        let mut queue: VecDeque<usize> =
            (0..lhs_atoms.len()).filter(|&i| side[i] == Some(true)).collect();
        while let Some(i) = queue.pop_front() {
            for t in &atom_targets[i] {
                if blocked.contains(t) {
                    continue;
                }
                if let Some(&j) = root_of.get(t) {
                    if side[j].is_none() {
                        side[j] = Some(true);
                        queue.push_back(j);
                    }
                }
            }
        }
        partitions.insert(side.into_iter().map(|o| o == Some(true)).collect());
    }

    let mut apps = Vec::new();
    for partition in partitions {
        let (left, right): (Vec<_>, Vec<_>) = lhs_atoms
            .iter()
            .enumerate()
            .partition(|(i, _)| partition[*i]);
        if right.is_empty() {
            continue;
        }
        let phi1 = SpatialFormula::new(left.iter().map(|(_, a)| (*a).clone()).collect());
        let phi2 = SpatialFormula::new(right.iter().map(|(_, a)| (*a).clone()).collect());
        let mut v1 = s.vset.clone();
        v1.extend(alloc(&phi2));
        let mut v2 = s.vset.clone();
        v2.extend(alloc(&phi1));
        let p1 = Sequent::new(
            SymbolicHeap::new(phi1.clone(), s.lhs.pure.clone()),
            v1,
            SymbolicHeap::spatial(SpatialFormula::atom(psi1.clone())),
        );
        let p2 = Sequent::new(
            SymbolicHeap::new(phi2, s.lhs.pure.clone()),
            v2,
            SymbolicHeap::spatial(psi2.clone()),
        );
        if anti_axiom_condition(rs, &p1).is_some() || anti_axiom_condition(rs, &p2).is_some() {
            continue;
        }
        apps.push(RuleApplication {
            rule: RuleId::S,
            detail: AppDetail::Split {
                selected: psi1.clone(),
                left: phi1.atoms().to_vec(),
            },
            premises: vec![p1, p2],
        });
    }
    apps.sort_by_cached_key(RuleApplication::sort_key);

    if narrow {
        return Ok(apps);
    }
    let oracle = oracle.as_deref_mut().ok_or(CalculusError::OracleUnavailable)?;
    let mut confirmed = Vec::new();
    for app in apps {
        if oracle(&app.premises[0]).map_err(CalculusError::OracleFailed)? {
            confirmed.push(app);
        }
    }
    Ok(confirmed.into_iter().next().into_iter().collect())
}

fn select(mut apps: Vec<RuleApplication>) -> Vec<RuleApplication> {
    apps.sort_by_cached_key(RuleApplication::sort_key);
    apps.truncate(1);
    apps
}

/// Enumerates the admissible rule applications for a sequent under the
/// strategy. Axioms and anti-axioms have none. The first rule in priority
/// order with matching instances claims the sequent; applications with an
/// anti-axiom premise are then discarded, and a single selected application
/// is returned except for S on a narrow sequent, where every admissible
/// split is.
pub fn enumerate_admissible(
    rs: &RuleSet,
    s: &Sequent,
    oracle: Option<&mut ValidityOracle>,
) -> Result<Vec<RuleApplication>, CalculusError> {
    if axiom_form(s).is_some() || anti_axiom_condition(rs, s).is_some() {
        return Ok(Vec::new());
    }
    let drop_anti = |apps: Vec<RuleApplication>| -> Vec<RuleApplication> {
        apps.into_iter()
            .filter(|a| {
                a.premises.iter().all(|p| anti_axiom_condition(rs, p).is_none())
            })
            .collect()
    };
    for rule in RuleId::ALL {
        let apps = match rule {
            RuleId::W => apply_w(s),
            RuleId::V => apply_v(s),
            RuleId::R => apply_r(s),
            RuleId::E => apply_e(s),
            RuleId::S => {
                if !s.rhs.pure.is_top() || s.rhs.spatial.len() < 2 {
                    continue;
                }
                // apply_s discards anti-axiom splits and applies the oracle
                // and the selection itself.
                return apply_s(rs, s, oracle);
            }
            RuleId::U => apply_u(rs, s),
            RuleId::C => apply_c(s),
            RuleId::I => apply_i(rs, s),
        };
        if apps.is_empty() {
            continue;
        }
        return Ok(select(drop_anti(apps)));
    }
    Ok(Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{InductiveRule, Profile};
    use crate::syntax::Sort;

    fn lv(n: &str) -> Term {
        Term::var(n, Sort::loc())
    }

    fn dv(n: &str) -> Term {
        Term::var(n, Sort::new("data"))
    }

    fn dc(n: &str) -> Term {
        Term::constant(n, Sort::new("data")).unwrap()
    }

    fn pt(root: &str, tuple: Vec<Term>) -> SpatialAtom {
        SpatialAtom::points_to(lv(root), tuple).unwrap()
    }

    fn pa(name: &str, args: &[&str]) -> SpatialAtom {
        SpatialAtom::pred(name, args.iter().map(|t| lv(t)).collect()).unwrap()
    }

    fn sp(atoms: Vec<SpatialAtom>) -> SymbolicHeap {
        SymbolicHeap::spatial(SpatialFormula::new(atoms))
    }

    fn unary_pqr() -> RuleSet {
        let profiles = vec![
            Profile::new("p", vec![Sort::loc()]).unwrap(),
            Profile::new("q", vec![Sort::loc()]).unwrap(),
            Profile::new("r", vec![Sort::loc()]).unwrap(),
        ];
        let rules = vec![
            InductiveRule::new("p", vec![lv("x")], sp(vec![pt("x", vec![])])),
            InductiveRule::new("q", vec![lv("x")], sp(vec![pt("x", vec![])])),
            InductiveRule::new("r", vec![lv("x")], sp(vec![pt("x", vec![])])),
        ];
        RuleSet::new(profiles, rules).unwrap()
    }

    /// The chained-pair rule set used by the rational-proof examples, with
    /// `y` and `u` of the constants' sort:
    /// p(x,y) <= x -> (a,y,z) * p(z,y) ; p(x,y) <= x -> (b)
    /// r(x)   <= x -> (a,y,z) * r(z)   ; r(x)   <= x -> (u)
    pub fn chain_pair() -> RuleSet {
        let profiles = vec![
            Profile::new("p", vec![Sort::loc(), Sort::new("data")]).unwrap(),
            Profile::new("r", vec![Sort::loc()]).unwrap(),
        ];
        let rules = vec![
            InductiveRule::new(
                "p",
                vec![lv("x"), dv("y")],
                sp(vec![
                    pt("x", vec![dc("a"), dv("y"), lv("z")]),
                    SpatialAtom::pred("p", vec![lv("z"), dv("y")]).unwrap(),
                ]),
            ),
            InductiveRule::new("p", vec![lv("x"), dv("y")], sp(vec![pt("x", vec![dc("b")])])),
            InductiveRule::new(
                "r",
                vec![lv("x")],
                sp(vec![pt("x", vec![dc("a"), dv("y"), lv("z")]), pa("r", &["z"])]),
            ),
            InductiveRule::new("r", vec![lv("x")], sp(vec![pt("x", vec![dv("u")])])),
        ];
        RuleSet::new(profiles, rules).unwrap()
    }

    #[test]
    fn r_consumes_an_equation() {
        // (p(x,u) * p(y,u)) /\ u = v |- (p(x,u) * p(y,v)) /\ x != y
        let s = Sequent::new(
            SymbolicHeap::new(
                SpatialFormula::new(vec![pa("p", &["x", "u"]), pa("p", &["y", "u"])]),
                PureFormula::new(vec![PureAtom::eq(lv("u"), lv("v")).unwrap()]),
            ),
            vec![],
            SymbolicHeap::new(
                SpatialFormula::new(vec![pa("p", &["x", "u"]), pa("p", &["y", "v"])]),
                PureFormula::new(vec![PureAtom::neq(lv("x"), lv("y")).unwrap()]),
            ),
        );
        let apps = apply_r(&s);
        assert_eq!(apps.len(), 1);
        let premise = &apps[0].premises[0];
        assert!(premise.lhs.pure.is_top());
        assert_eq!(premise.rhs.spatial.to_string(), "p(x,u) * p(y,u)");
        assert_eq!(premise.rhs.pure.to_string(), "x != y");
    }

    #[test]
    fn r_maps_vset() {
        // V = {x} with x = t yields V = {t}.
        let s = Sequent::new(
            SymbolicHeap::new(
                SpatialFormula::emp(),
                PureFormula::new(vec![PureAtom::eq(lv("x"), lv("t")).unwrap()]),
            ),
            vec![lv("x")],
            SymbolicHeap::emp(),
        );
        let apps = apply_r(&s);
        assert_eq!(apps.len(), 1);
        assert_eq!(apps[0].premises[0].vset, vec![lv("t")]);
    }

    #[test]
    fn e_drops_entailed_rhs_atoms() {
        // p(x,u) * p(y,u) |- (p(x,u) * p(y,u)) /\ x != y: the disequation is
        // entailed by allocation and dropped, yielding an axiom.
        let lhs = sp(vec![pa("p", &["x", "u"]), pa("p", &["y", "u"])]);
        let s = Sequent::new(
            lhs.clone(),
            vec![],
            SymbolicHeap::new(
                lhs.spatial.clone(),
                PureFormula::new(vec![PureAtom::neq(lv("x"), lv("y")).unwrap()]),
            ),
        );
        let apps = apply_e(&s);
        assert_eq!(apps.len(), 1);
        let premise = &apps[0].premises[0];
        assert!(premise.rhs.pure.is_top());
        assert!(axiom_form(premise).is_some());
        // Disequations between distinct constants are droppable too.
        let s = Sequent::new(
            sp(vec![pa("p", &["x", "u"])]),
            vec![],
            SymbolicHeap::new(
                SpatialFormula::new(vec![pa("p", &["x", "u"])]),
                PureFormula::new(vec![PureAtom::neq(dc("a"), dc("b")).unwrap()]),
            ),
        );
        let apps = apply_e(&s);
        assert_eq!(apps.len(), 1);
        assert!(apps[0].premises[0].rhs.pure.is_top());
    }

    #[test]
    fn w_drops_isolated_and_forced_disequations() {
        // p(x) /\ (u != v /\ u != w) |- q(x)
        let s = Sequent::new(
            SymbolicHeap::new(
                SpatialFormula::new(vec![pa("p", &["x"])]),
                PureFormula::new(vec![
                    PureAtom::neq(lv("u"), lv("v")).unwrap(),
                    PureAtom::neq(lv("u"), lv("w")).unwrap(),
                ]),
            ),
            vec![],
            sp(vec![pa("q", &["x"])]),
        );
        let apps = apply_w(&s);
        assert_eq!(apps.len(), 1);
        assert!(apps[0].premises[0].lhs.pure.is_top());

        // (p(x) * q(y)) /\ x != y: both allocated, condition (i).
        let s = Sequent::new(
            SymbolicHeap::new(
                SpatialFormula::new(vec![pa("p", &["x"]), pa("q", &["y"])]),
                PureFormula::new(vec![PureAtom::neq(lv("x"), lv("y")).unwrap()]),
            ),
            vec![],
            sp(vec![pa("r", &["x"])]),
        );
        let apps = apply_w(&s);
        assert_eq!(apps.len(), 1);
        assert!(apps[0].premises[0].lhs.pure.is_top());

        // p(y) /\ x != y |- q(x): x occurs on the right, y on the left, so
        // neither condition matches.
        let s = Sequent::new(
            SymbolicHeap::new(
                SpatialFormula::new(vec![pa("p", &["y"])]),
                PureFormula::new(vec![PureAtom::neq(lv("x"), lv("y")).unwrap()]),
            ),
            vec![],
            sp(vec![pa("q", &["x"])]),
        );
        assert!(apply_w(&s).is_empty());
    }

    #[test]
    fn v_removes_unused_vset_variables() {
        // p(z,y) |-{x} r(z)
        let s = Sequent::new(sp(vec![pa("p", &["z", "y"])]), vec![lv("x")], sp(vec![pa("r", &["z"])]));
        let apps = apply_v(&s);
        assert_eq!(apps.len(), 1);
        assert!(apps[0].premises[0].vset.is_empty());

        // V = {x,x} needs two steps.
        let s = Sequent::new(
            sp(vec![pa("p", &["z", "y"])]),
            vec![lv("x"), lv("x")],
            sp(vec![pa("r", &["z"])]),
        );
        let apps = apply_v(&s);
        assert_eq!(apps.len(), 1);
        assert_eq!(apps[0].premises[0].vset, vec![lv("x")]);

        // A vset variable used on the right stays.
        let s = Sequent::new(sp(vec![pa("p", &["z", "y"])]), vec![lv("y")], sp(vec![pa("r", &["y"])]));
        assert!(apply_v(&s).is_empty());
    }

    /// p(<loc>, <data>) atom of the chain_pair rule set.
    fn chain_p(x: &str, y: &str) -> SpatialAtom {
        SpatialAtom::pred("p", vec![lv(x), dv(y)]).unwrap()
    }

    #[test]
    fn u_unfolds_matching_root() {
        let rs = chain_pair();
        // p(x,y) |- r(x): two premises, one per rule of p.
        let s = Sequent::new(sp(vec![chain_p("x", "y")]), vec![], sp(vec![pa("r", &["x"])]));
        let apps = apply_u(&rs, &s);
        assert_eq!(apps.len(), 1);
        let premises = &apps[0].premises;
        assert_eq!(premises.len(), 2);
        assert_eq!(premises[0].lhs.to_string(), "p(z,y) * x -> (a,y,z)");
        assert_eq!(premises[1].lhs.to_string(), "x -> (b)");

        // No left-hand predicate with the right root: not applicable.
        let s = Sequent::new(sp(vec![chain_p("z", "y")]), vec![], sp(vec![pa("r", &["x"])]));
        assert!(apply_u(&rs, &s).is_empty());
    }

    #[test]
    fn i_matches_base_rule() {
        let rs = chain_pair();
        // x -> (b) |- r(x): matches r's base rule with u <- b.
        let s =
            Sequent::new(sp(vec![pt("x", vec![dc("b")])]), vec![], sp(vec![pa("r", &["x"])]));
        let apps = apply_i(&rs, &s);
        assert_eq!(apps.len(), 1);
        assert_eq!(apps[0].premises[0].to_string(), "x -> (b) |- x -> (b)");
    }

    #[test]
    fn i_requires_tuple_instance() {
        // q(x) <= x -> (z,y) * t(y) ; q(x) <= x -> (z1,z2,x) * t(x)?, with
        // z,z1,z2 of the constants' sort. Only the arity-2 rule matches
        // x -> (a,x); the substitution binds only rule existentials.
        let data = Sort::new("data");
        let profiles = vec![
            Profile::new("q", vec![Sort::loc()]).unwrap(),
            Profile::new("t", vec![Sort::loc()]).unwrap(),
        ];
        let rules = vec![
            InductiveRule::new(
                "q",
                vec![lv("x")],
                sp(vec![
                    pt("x", vec![Term::var("z", data.clone()), lv("y")]),
                    pa("t", &["y"]),
                ]),
            ),
            InductiveRule::new(
                "q",
                vec![lv("x")],
                sp(vec![pt("x", vec![Term::var("z1", data.clone()), Term::var("z2", data), lv("x")])]),
            ),
            InductiveRule::new("t", vec![lv("y")], sp(vec![pt("y", vec![])])),
        ];
        let rs = RuleSet::new(profiles, rules).unwrap();
        let s = Sequent::new(
            sp(vec![pt("x", vec![dc("a"), lv("x")]), pa("t", &["x"])]),
            vec![],
            sp(vec![pa("q", &["x"])]),
        );
        let apps = apply_i(&rs, &s);
        assert_eq!(apps.len(), 1);
        match &apps[0].detail {
            AppDetail::Imitate { rule_index, sigma } => {
                assert_eq!(*rule_index, 0);
                let bound: BTreeSet<String> =
                    sigma.iter().map(|(a, b)| format!("{a}<-{b}")).collect();
                assert_eq!(bound, BTreeSet::from(["y<-x".to_string(), "z<-a".to_string()]));
            }
            other => panic!("unexpected detail {other:?}"),
        }
        assert_eq!(apps[0].premises[0].rhs.to_string(), "t(x) * x -> (a,x)");
    }

    /// q(u,y) <= u -> (y,z) * p(z) ; q(u,y) <= (u -> (z,z) * p(z)) /\ z != y,
    /// all loc; p(z) <= z -> ().
    fn case_split_rules() -> RuleSet {
        let profiles = vec![
            Profile::new("q", vec![Sort::loc(), Sort::loc()]).unwrap(),
            Profile::new("p", vec![Sort::loc()]).unwrap(),
        ];
        let rules = vec![
            InductiveRule::new(
                "q",
                vec![lv("u"), lv("y")],
                sp(vec![pt("u", vec![lv("y"), lv("z")]), pa("p", &["z"])]),
            ),
            InductiveRule::new(
                "q",
                vec![lv("u"), lv("y")],
                SymbolicHeap::new(
                    SpatialFormula::new(vec![pt("u", vec![lv("z"), lv("z")]), pa("p", &["z"])]),
                    PureFormula::new(vec![PureAtom::neq(lv("z"), lv("y")).unwrap()]),
                ),
            ),
            InductiveRule::new("p", vec![lv("z")], sp(vec![pt("z", vec![])])),
        ];
        RuleSet::new(profiles, rules).unwrap()
    }

    #[test]
    fn i_blocked_without_case_split() {
        let rs = case_split_rules();
        // u -> (x,x) * p(x) |- q(u,y): no rule instance matches, because the
        // first rule needs y at position 1 and the second needs x != y.
        let s = Sequent::new(
            sp(vec![pt("u", vec![lv("x"), lv("x")]), pa("p", &["x"])]),
            vec![],
            sp(vec![pa("q", &["u", "y"])]),
        );
        assert!(apply_i(&rs, &s).is_empty());

        // C applies on (x, y) with the expected premises.
        let apps = apply_c(&s);
        let with_xy = apps
            .iter()
            .find(|a| a.detail == AppDetail::Cases { x: lv("x"), y: lv("y") })
            .expect("case split on (x,y)");
        assert_eq!(
            with_xy.premises[0].to_string(),
            "p(y) * u -> (y,y) |- q(u,y)"
        );
        assert_eq!(
            with_xy.premises[1].to_string(),
            "p(x) * u -> (x,x) /\\ x != y |- q(u,y)"
        );

        // After the split, I applies on both premises.
        assert!(!apply_i(&rs, &with_xy.premises[0]).is_empty());
        assert!(!apply_i(&rs, &with_xy.premises[1]).is_empty());
    }

    #[test]
    fn c_needs_candidates() {
        let rs = unary_pqr();
        let _ = &rs;
        // No right-hand variable outside alloc(lhs) and V: not applicable.
        let s = Sequent::new(sp(vec![pa("p", &["x"])]), vec![], sp(vec![pa("q", &["x"])]));
        assert!(apply_c(&s).is_empty());
    }

    #[test]
    fn s_splits_disjoint_predicates() {
        let rs = unary_pqr();
        // p(x) * p(y) |- q(x) * r(y)
        let s = Sequent::new(
            sp(vec![pa("p", &["x"]), pa("p", &["y"])]),
            vec![],
            sp(vec![pa("q", &["x"]), pa("r", &["y"])]),
        );
        let apps = apply_s(&rs, &s, None).unwrap();
        assert_eq!(apps.len(), 1);
        let prem: Vec<String> = apps[0].premises.iter().map(|p| p.to_string()).collect();
        assert_eq!(prem, vec!["p(x) |-{y} q(x)", "p(y) |-{x} r(y)"]);
    }

    #[test]
    fn s_on_points_to_frame() {
        let rs = chain_pair();
        // x -> (a,y,z) * p(z,y) |- x -> (a,y,z) * r(z)
        let s = Sequent::new(
            sp(vec![pt("x", vec![dc("a"), dv("y"), lv("z")]), chain_p("z", "y")]),
            vec![],
            sp(vec![pt("x", vec![dc("a"), dv("y"), lv("z")]), pa("r", &["z"])]),
        );
        let apps = apply_s(&rs, &s, None).unwrap();
        assert_eq!(apps.len(), 1);
        let premises: BTreeSet<String> =
            apps[0].premises.iter().map(|p| p.to_string()).collect();
        assert_eq!(
            premises,
            BTreeSet::from([
                "x -> (a,y,z) |-{z} x -> (a,y,z)".to_string(),
                "p(z,y) |-{x} r(z)".to_string(),
            ])
        );
    }

    #[test]
    fn s_not_applicable_on_single_atom() {
        let rs = unary_pqr();
        let s = Sequent::new(
            sp(vec![pa("p", &["x"]), pa("p", &["y"])]),
            vec![],
            sp(vec![pa("q", &["x"])]),
        );
        assert!(apply_s(&rs, &s, None).unwrap().is_empty());
    }

    #[test]
    fn s_requires_oracle_when_not_narrow() {
        // Width is 1, so two narrow variables on the right break narrowness.
        let profiles = vec![
            Profile::new("p", vec![Sort::loc()]).unwrap(),
            Profile::new("q", vec![Sort::loc()]).unwrap(),
        ];
        let rules = vec![
            InductiveRule::new("p", vec![lv("x")], sp(vec![pt("x", vec![])])),
            InductiveRule::new("q", vec![lv("x")], sp(vec![pt("x", vec![])])),
        ];
        let rs = RuleSet::new(profiles, rules).unwrap();
        let s = Sequent::new(
            sp(vec![pa("p", &["x"]), pa("p", &["y"])]),
            vec![],
            sp(vec![
                SpatialAtom::points_to(lv("x"), vec![lv("u1"), lv("u2")]).unwrap(),
                pa("q", &["y"]),
            ]),
        );
        assert!(!is_narrow(&rs, &s));
        assert!(matches!(
            apply_s(&rs, &s, None),
            Err(CalculusError::OracleUnavailable)
        ));
        // With an oracle that validates everything, a single selected split
        // comes back.
        let mut yes = |_: &Sequent| Ok(true);
        let apps = apply_s(&rs, &s, Some(&mut yes)).unwrap();
        assert_eq!(apps.len(), 1);
    }

    /// Brute-force split enumeration: all partitions of the left-hand atoms
    /// with the selected atom's root on the left and a non-empty right part,
    /// filtered by the anti-axiom check. This is the reference that apply_s
    /// must reproduce on narrow sequents.
    fn brute_force_splits(rs: &RuleSet, s: &Sequent) -> BTreeSet<Vec<String>> {
        let rhs_atoms = s.rhs.spatial.atoms();
        let psi1 = rhs_atoms[0].clone();
        let psi2 = SpatialFormula::new(rhs_atoms[1..].to_vec());
        let lhs_atoms = s.lhs.spatial.atoms();
        let mut out = BTreeSet::new();
        for mask in 0..(1usize << lhs_atoms.len()) {
            let mut left = Vec::new();
            let mut right = Vec::new();
            for (i, a) in lhs_atoms.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    left.push(a.clone());
                } else {
                    right.push(a.clone());
                }
            }
            if right.is_empty() || left.is_empty() {
                continue;
            }
            let phi1 = SpatialFormula::new(left);
            let phi2 = SpatialFormula::new(right);
            let mut v1 = s.vset.clone();
            v1.extend(alloc(&phi2));
            let mut v2 = s.vset.clone();
            v2.extend(alloc(&phi1));
            let p1 = Sequent::new(
                SymbolicHeap::new(phi1, s.lhs.pure.clone()),
                v1,
                SymbolicHeap::spatial(SpatialFormula::atom(psi1.clone())),
            );
            let p2 = Sequent::new(
                SymbolicHeap::new(phi2, s.lhs.pure.clone()),
                v2,
                SymbolicHeap::spatial(psi2.clone()),
            );
            if anti_axiom_condition(rs, &p1).is_some() || anti_axiom_condition(rs, &p2).is_some()
            {
                continue;
            }
            out.insert(vec![p1.to_string(), p2.to_string()]);
        }
        out
    }

    #[test]
    fn s_narrow_returns_all_admissible_splits() {
        // p3(x,u,w) * p3(y,u,w) * p(u,u) * p(w,w) |- q(x,u,w) * r(y,u,w):
        // the atoms at u and w may go either way, giving four admissible
        // splits, all of which must be returned.
        let profiles = vec![
            Profile::new("p3", vec![Sort::loc(), Sort::loc(), Sort::loc()]).unwrap(),
            Profile::new("p", vec![Sort::loc(), Sort::loc()]).unwrap(),
            Profile::new("q", vec![Sort::loc(), Sort::loc(), Sort::loc()]).unwrap(),
            Profile::new("r", vec![Sort::loc(), Sort::loc(), Sort::loc()]).unwrap(),
        ];
        let mk3 = |name: &str| {
            InductiveRule::new(
                name,
                vec![lv("x"), lv("y"), lv("z")],
                sp(vec![pt("x", vec![lv("y"), lv("z")])]),
            )
        };
        let rules = vec![
            mk3("p3"),
            mk3("q"),
            mk3("r"),
            InductiveRule::new(
                "p",
                vec![lv("x"), lv("y")],
                sp(vec![pt("x", vec![lv("y")])]),
            ),
        ];
        let rs = RuleSet::new(profiles, rules).unwrap();
        let s = Sequent::new(
            sp(vec![
                pa("p3", &["x", "u", "w"]),
                pa("p3", &["y", "u", "w"]),
                pa("p", &["u", "u"]),
                pa("p", &["w", "w"]),
            ]),
            vec![],
            sp(vec![pa("q", &["x", "u", "w"]), pa("r", &["y", "u", "w"])]),
        );
        assert!(is_narrow(&rs, &s));
        let apps = apply_s(&rs, &s, None).unwrap();
        let got: BTreeSet<Vec<String>> = apps
            .iter()
            .map(|a| a.premises.iter().map(|p| p.to_string()).collect())
            .collect();
        let expected = brute_force_splits(&rs, &s);
        assert_eq!(got, expected);
        assert_eq!(got.len(), 4);
        // All returned applications are S applications on the same selected
        // atom, and enumerate_admissible passes them through unchanged.
        let via_enumerate = enumerate_admissible(&rs, &s, None).unwrap();
        assert_eq!(via_enumerate.len(), 4);
        assert!(via_enumerate.iter().all(|a| a.rule == RuleId::S));
    }

    #[test]
    fn s_narrow_matches_brute_force_on_asymmetric_split() {
        // p(x,a) * p(a,a) * r2(b,a) |- q(x,a) * r2(b,a): the atom at a can go
        // either way; the right premise of the split keeping it left is an
        // axiom.
        let profiles = vec![
            Profile::new("p", vec![Sort::loc(), Sort::loc()]).unwrap(),
            Profile::new("q", vec![Sort::loc(), Sort::loc()]).unwrap(),
            Profile::new("r2", vec![Sort::loc(), Sort::loc()]).unwrap(),
        ];
        let mk = |name: &str| {
            InductiveRule::new(
                name,
                vec![lv("x"), lv("y")],
                sp(vec![pt("x", vec![lv("y")])]),
            )
        };
        let rules = vec![mk("p"), mk("q"), mk("r2")];
        let rs = RuleSet::new(profiles, rules).unwrap();
        let s = Sequent::new(
            sp(vec![pa("p", &["x", "a"]), pa("p", &["a", "a"]), pa("r2", &["b", "a"])]),
            vec![],
            sp(vec![pa("q", &["x", "a"]), pa("r2", &["b", "a"])]),
        );
        assert!(is_narrow(&rs, &s));
        let apps = apply_s(&rs, &s, None).unwrap();
        let got: BTreeSet<Vec<String>> = apps
            .iter()
            .map(|a| a.premises.iter().map(|p| p.to_string()).collect())
            .collect();
        assert_eq!(got, brute_force_splits(&rs, &s));
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn priority_prefers_w_over_i() {
        let rs = chain_pair();
        // x -> (b) /\ u != v |- r(x): both W and I match; W wins.
        let s = Sequent::new(
            SymbolicHeap::new(
                SpatialFormula::new(vec![pt("x", vec![dc("b")])]),
                PureFormula::new(vec![PureAtom::neq(lv("u"), lv("v")).unwrap()]),
            ),
            vec![],
            sp(vec![pa("r", &["x"])]),
        );
        let apps = enumerate_admissible(&rs, &s, None).unwrap();
        assert_eq!(apps.len(), 1);
        assert_eq!(apps[0].rule, RuleId::W);
    }

    #[test]
    fn axioms_and_anti_axioms_get_no_applications() {
        let profiles = vec![Profile::new("p", vec![Sort::loc(), Sort::loc()]).unwrap()];
        let rules = vec![InductiveRule::new(
            "p",
            vec![lv("x"), lv("y")],
            sp(vec![pt("x", vec![lv("y")])]),
        )];
        let rs = RuleSet::new(profiles, rules).unwrap();
        let axiom = Sequent::new(sp(vec![pt("x", vec![])]), vec![], sp(vec![pt("x", vec![])]));
        assert!(enumerate_admissible(&rs, &axiom, None).unwrap().is_empty());
        let anti = Sequent::new(
            sp(vec![pa("p", &["x", "y"])]),
            vec![],
            sp(vec![pa("p", &["y", "x"])]),
        );
        assert!(enumerate_admissible(&rs, &anti, None).unwrap().is_empty());
    }
}
