//! Inductive rule sets and their static validation.
//!
//! A rule set is accepted when every rule is progressing (exactly one
//! points-to atom, rooted at the first parameter, with the fresh loc tuple
//! variables as the roots of the body predicate atoms), every predicate is
//! productive, and no loc parameter is useless. Determinism and
//! loc-determinism are computed and cached as verdicts; they are required by
//! the prover but not by the model semantics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::syntax::{
    pure_satisfiable, vector_equation, PureAtom, Sort, SpatialAtom, SymbolicHeap, Term,
};

/// Predicate profile: argument sorts, the first of which is always `loc`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct Profile {
    pub name: String,
    pub sorts: Vec<Sort>,
}

impl Profile {
    pub fn new(name: impl Into<String>, sorts: Vec<Sort>) -> Result<Self, RuleSetError> {
        let name = name.into();
        match sorts.first() {
            Some(s) if s.is_loc() => {}
            _ => return Err(RuleSetError::BadProfile { pred: name }),
        }
        Ok(Profile { name, sorts })
    }

    pub fn arity(&self) -> usize {
        self.sorts.len()
    }
}

/// An inductive rule `head(params) <= body`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct InductiveRule {
    pub head: String,
    pub params: Vec<Term>,
    pub body: SymbolicHeap,
}

impl InductiveRule {
    pub fn new(head: impl Into<String>, params: Vec<Term>, body: SymbolicHeap) -> Self {
        InductiveRule { head: head.into(), params, body }
    }

    pub fn existentials(&self) -> BTreeSet<Term> {
        let params: BTreeSet<_> = self.params.iter().cloned().collect();
        self.body.vars().difference(&params).cloned().collect()
    }

    /// The single points-to atom of a progressing rule body.
    pub fn points_to(&self) -> Option<(&Term, &[Term])> {
        self.body.spatial.atoms().iter().find_map(|a| match a {
            SpatialAtom::PointsTo { root, tuple } => Some((root, tuple.as_slice())),
            _ => None,
        })
    }

    pub fn body_preds(&self) -> impl Iterator<Item = (&String, &Vec<Term>)> {
        self.body.spatial.atoms().iter().filter_map(|a| match a {
            SpatialAtom::Pred { name, args } => Some((name, args)),
            _ => None,
        })
    }
}

impl fmt::Display for InductiveRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.head)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ") <= {}", self.body)
    }
}

/// A single structural violation of the progressing-rule conditions.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum RuleViolation {
    /// The body has no points-to atom.
    NoPointsTo,
    /// The body has more than one points-to atom.
    MultiplePointsTo,
    /// The points-to atom is not rooted at the first parameter.
    WrongPointsToRoot { root: String },
    /// Condition 1: a pure atom that is not a disequation `u != v` with
    /// `u` among the parameters or tuple variables and `v` a fresh tuple
    /// variable.
    Condition1 { atom: String },
    /// Condition 2: the roots of the body predicate atoms are not exactly
    /// the fresh loc variables of the points-to tuple, pairwise distinct.
    Condition2 { detail: String },
    /// Condition 3: a body predicate argument outside params, tuple
    /// variables and constants.
    Condition3 { term: String },
    /// Parameters are not pairwise distinct variables matching the profile.
    BadParams { detail: String },
}

impl fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleViolation::NoPointsTo => f.write_str("no points-to atom"),
            RuleViolation::MultiplePointsTo => f.write_str("more than one points-to atom"),
            RuleViolation::WrongPointsToRoot { root } => {
                write!(f, "points-to atom rooted at {root}, not at the first parameter")
            }
            RuleViolation::Condition1 { atom } => write!(f, "condition 1 violated by {atom}"),
            RuleViolation::Condition2 { detail } => write!(f, "condition 2 violated: {detail}"),
            RuleViolation::Condition3 { term } => {
                write!(f, "condition 3 violated: argument {term} is not a parameter, tuple variable or constant")
            }
            RuleViolation::BadParams { detail } => write!(f, "bad parameters: {detail}"),
        }
    }
}

impl RuleViolation {
    pub fn condition(&self) -> Option<u8> {
        match self {
            RuleViolation::Condition1 { .. } => Some(1),
            RuleViolation::Condition2 { .. } => Some(2),
            RuleViolation::Condition3 { .. } => Some(3),
            _ => None,
        }
    }
}

/// Structural checks for one rule against its profile.
pub fn validate_prule(profile: &Profile, rule: &InductiveRule) -> Vec<RuleViolation> {
    let mut out = Vec::new();

    if rule.params.len() != profile.arity() {
        out.push(RuleViolation::BadParams {
            detail: format!("expected {} parameters, got {}", profile.arity(), rule.params.len()),
        });
        return out;
    }
    let mut seen = BTreeSet::new();
    for (p, s) in rule.params.iter().zip(&profile.sorts) {
        if !p.is_var() || p.sort != *s {
            out.push(RuleViolation::BadParams { detail: format!("parameter {p} has the wrong sort") });
            return out;
        }
        if !seen.insert(p.clone()) {
            out.push(RuleViolation::BadParams { detail: format!("parameter {p} repeated") });
            return out;
        }
    }

    let pts: Vec<_> = rule.body.spatial.atoms().iter().filter(|a| a.is_points_to()).collect();
    let (root, tuple): (&Term, &[Term]) = match pts.as_slice() {
        [] => {
            out.push(RuleViolation::NoPointsTo);
            return out;
        }
        [SpatialAtom::PointsTo { root, tuple }] => (root, tuple),
        _ => {
            out.push(RuleViolation::MultiplePointsTo);
            return out;
        }
    };
    if *root != rule.params[0] {
        out.push(RuleViolation::WrongPointsToRoot { root: root.name.clone() });
    }

    let params: BTreeSet<&Term> = rule.params.iter().collect();
    let tuple_terms: BTreeSet<&Term> = tuple.iter().collect();
    let fresh_tuple_vars: BTreeSet<&Term> =
        tuple.iter().filter(|t| t.is_var() && !params.contains(t)).collect();

    // Condition 1: only disequations u != v with u in params or tuple and
    // v a fresh tuple variable.
    for atom in rule.body.pure.atoms() {
        let ok = atom.is_neq()
            && atom.terms().iter().any(|t| fresh_tuple_vars.contains(*t))
            && atom.terms().iter().all(|t| params.contains(*t) || tuple_terms.contains(*t))
            && {
                // At least one orientation must have u in params+tuple and
                // v a fresh tuple variable.
                let u_ok = |u: &Term| params.contains(u) || tuple_terms.contains(u);
                let v_ok = |v: &Term| fresh_tuple_vars.contains(v);
                (u_ok(&atom.left) && v_ok(&atom.right)) || (u_ok(&atom.right) && v_ok(&atom.left))
            };
        if !ok {
            out.push(RuleViolation::Condition1 { atom: atom.to_string() });
        }
    }

    // Condition 2: body predicate roots = fresh loc tuple variables, pairwise
    // distinct.
    let fresh_locs: BTreeSet<&Term> =
        fresh_tuple_vars.iter().copied().filter(|t| t.is_loc()).collect();
    let roots: Vec<&Term> = rule.body_preds().map(|(_, args)| &args[0]).collect();
    let root_set: BTreeSet<&Term> = roots.iter().copied().collect();
    if roots.len() != root_set.len() {
        out.push(RuleViolation::Condition2 { detail: "repeated body predicate root".into() });
    } else if root_set != fresh_locs {
        let missing: Vec<String> =
            fresh_locs.difference(&root_set).map(|t| t.name.clone()).collect();
        let extra: Vec<String> = root_set.difference(&fresh_locs).map(|t| t.name.clone()).collect();
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("fresh loc variables without a predicate atom: {}", missing.join(", ")));
        }
        if !extra.is_empty() {
            parts.push(format!("predicate roots that are not fresh tuple variables: {}", extra.join(", ")));
        }
        out.push(RuleViolation::Condition2 { detail: parts.join("; ") });
    }

    // Condition 3: predicate arguments from params, tuple variables and
    // constants.
    for (_, args) in rule.body_preds() {
        for t in args {
            if t.is_const() || params.contains(t) || tuple_terms.contains(t) {
                continue;
            }
            out.push(RuleViolation::Condition3 { term: t.name.clone() });
        }
    }

    out
}

/// Diagnostics for a whole rule set. Empty diagnostics mean the set can be
/// used with the model semantics; the prover additionally requires the
/// loc-determinism verdict.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RuleDiagnostics {
    pub rule_violations: Vec<(usize, RuleViolation)>,
    pub unproductive: Vec<String>,
    /// (predicate, 1-based parameter index) pairs violating the
    /// no-useless-parameter assumption.
    pub useless_params: Vec<(String, usize)>,
    /// Witness for non-determinism: rule indices plus the satisfiable
    /// overlap constraint.
    pub determinism_witness: Option<DeterminismWitness>,
    /// Disequations over non-loc terms, which break loc-determinism.
    pub non_loc_disequations: Vec<(usize, String)>,
    pub empty: bool,
}

impl RuleDiagnostics {
    pub fn structurally_valid(&self) -> bool {
        !self.empty
            && self.rule_violations.is_empty()
            && self.unproductive.is_empty()
            && self.useless_params.is_empty()
    }

    pub fn is_loc_deterministic(&self) -> bool {
        self.determinism_witness.is_none() && self.non_loc_disequations.is_empty()
    }

    pub fn fully_valid(&self) -> bool {
        self.structurally_valid() && self.is_loc_deterministic()
    }
}

impl fmt::Display for RuleDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.empty {
            writeln!(f, "rule set is empty")?;
        }
        for (i, v) in &self.rule_violations {
            writeln!(f, "rule #{i}: {v}")?;
        }
        for p in &self.unproductive {
            writeln!(f, "predicate {p} is not productive")?;
        }
        for (p, i) in &self.useless_params {
            writeln!(f, "predicate {p}: loc parameter #{i} is never referenced (useless)")?;
        }
        if let Some(w) = &self.determinism_witness {
            writeln!(
                f,
                "rules #{} and #{} overlap: {} is satisfiable",
                w.rule_a, w.rule_b, w.constraint
            )?;
        }
        for (i, d) in &self.non_loc_disequations {
            writeln!(f, "rule #{i}: disequation {d} relates non-loc terms")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DeterminismWitness {
    pub rule_a: usize,
    pub rule_b: usize,
    /// Printable form of the satisfiable overlap constraint.
    pub constraint: String,
    #[serde(skip)]
    pub atoms: Vec<PureAtom>,
}

#[derive(Error, Debug)]
pub enum RuleSetError {
    #[error("predicate {pred} must have a profile whose first sort is loc")]
    BadProfile { pred: String },
    #[error("predicate {pred} is used but has no profile")]
    UnknownPredicate { pred: String },
    #[error("rule set rejected:\n{diagnostics}")]
    Invalid { diagnostics: Box<RuleDiagnostics> },
}

/// A validated rule set with cached static analyses.
#[derive(Clone, Debug)]
pub struct RuleSet {
    profiles: BTreeMap<String, Profile>,
    rules: Vec<InductiveRule>,
    rules_by_head: BTreeMap<String, Vec<usize>>,
    productive: BTreeSet<String>,
    out_params: BTreeMap<String, BTreeSet<usize>>,
    deterministic: bool,
    loc_deterministic: bool,
    ar_max: usize,
    record_max: usize,
}

impl RuleSet {
    /// Validates and builds a rule set. Structural violations, unproductive
    /// predicates and useless parameters are rejected; the determinism
    /// verdicts are cached, not enforced.
    pub fn new(
        profiles: Vec<Profile>,
        rules: Vec<InductiveRule>,
    ) -> Result<Self, RuleSetError> {
        let (rs, diagnostics) = Self::analyze(profiles, rules)?;
        if !diagnostics.structurally_valid() {
            return Err(RuleSetError::Invalid { diagnostics: Box::new(diagnostics) });
        }
        Ok(rs)
    }

    /// Runs all analyses and returns the rule set together with its full
    /// diagnostics, without rejecting anything except unknown predicates.
    pub fn analyze(
        profiles: Vec<Profile>,
        rules: Vec<InductiveRule>,
    ) -> Result<(Self, RuleDiagnostics), RuleSetError> {
        let profile_map: BTreeMap<String, Profile> =
            profiles.into_iter().map(|p| (p.name.clone(), p)).collect();
        for rule in &rules {
            if !profile_map.contains_key(&rule.head) {
                return Err(RuleSetError::UnknownPredicate { pred: rule.head.clone() });
            }
            for (name, _) in rule.body_preds() {
                if !profile_map.contains_key(name) {
                    return Err(RuleSetError::UnknownPredicate { pred: name.clone() });
                }
            }
        }

        let mut diagnostics = RuleDiagnostics { empty: rules.is_empty(), ..Default::default() };
        for (i, rule) in rules.iter().enumerate() {
            for v in validate_prule(&profile_map[&rule.head], rule) {
                diagnostics.rule_violations.push((i, v));
            }
        }

        let mut rules_by_head: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, rule) in rules.iter().enumerate() {
            rules_by_head.entry(rule.head.clone()).or_default().push(i);
        }

        let mut rs = RuleSet {
            profiles: profile_map,
            rules,
            rules_by_head,
            productive: BTreeSet::new(),
            out_params: BTreeMap::new(),
            deterministic: false,
            loc_deterministic: false,
            ar_max: 0,
            record_max: 0,
        };

        rs.productive = compute_productive(&rs);
        rs.out_params = compute_out_params(&rs);
        let (ar_max, record_max) = rs.compute_measures();
        rs.ar_max = ar_max;
        rs.record_max = record_max;

        for p in rs.predicates() {
            if !rs.productive.contains(p) {
                diagnostics.unproductive.push(p.clone());
            }
        }
        diagnostics.useless_params = check_assumption2(&rs);
        diagnostics.determinism_witness = check_deterministic(&rs);
        diagnostics.non_loc_disequations = non_loc_disequations(&rs);
        rs.deterministic = diagnostics.determinism_witness.is_none();
        rs.loc_deterministic = diagnostics.is_loc_deterministic();

        Ok((rs, diagnostics))
    }

    pub fn profiles(&self) -> impl Iterator<Item = &Profile> {
        self.profiles.values()
    }

    pub fn profile(&self, pred: &str) -> Option<&Profile> {
        self.profiles.get(pred)
    }

    pub fn rules(&self) -> &[InductiveRule] {
        &self.rules
    }

    pub fn rules_of(&self, pred: &str) -> impl Iterator<Item = &InductiveRule> {
        self.rules_by_head
            .get(pred)
            .into_iter()
            .flatten()
            .map(move |&i| &self.rules[i])
    }

    /// Predicates occurring in the rules.
    pub fn predicates(&self) -> impl Iterator<Item = &String> {
        self.rules_by_head.keys()
    }

    pub fn constants(&self) -> BTreeSet<Term> {
        self.rules
            .iter()
            .flat_map(|r| r.body.terms())
            .filter(Term::is_const)
            .collect()
    }

    pub fn is_productive(&self, pred: &str) -> bool {
        self.productive.contains(pred)
    }

    /// Out-parameter indices (1-based) of a predicate.
    pub fn out_params(&self, pred: &str) -> &BTreeSet<usize> {
        static EMPTY: std::sync::OnceLock<BTreeSet<usize>> = std::sync::OnceLock::new();
        self.out_params.get(pred).unwrap_or_else(|| EMPTY.get_or_init(BTreeSet::new))
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn is_loc_deterministic(&self) -> bool {
        self.loc_deterministic
    }

    pub fn ar_max(&self) -> usize {
        self.ar_max
    }

    pub fn record_max(&self) -> usize {
        self.record_max
    }

    pub fn width(&self) -> usize {
        self.ar_max.max(self.record_max)
    }

    fn compute_measures(&self) -> (usize, usize) {
        let ar_max = self
            .predicates()
            .filter_map(|p| self.profiles.get(p))
            .map(Profile::arity)
            .max()
            .unwrap_or(0);
        let record_max = self
            .rules
            .iter()
            .filter_map(|r| r.points_to().map(|(_, t)| t.len()))
            .max()
            .unwrap_or(0);
        (ar_max, record_max)
    }
}

/// Least fixpoint of productivity: a predicate is productive when one of its
/// rules only calls productive predicates.
pub fn compute_productive(rs: &RuleSet) -> BTreeSet<String> {
    let mut productive = BTreeSet::new();
    loop {
        let mut changed = false;
        for rule in rs.rules() {
            if productive.contains(&rule.head) {
                continue;
            }
            if rule.body_preds().all(|(name, _)| productive.contains(name)) {
                productive.insert(rule.head.clone());
                changed = true;
            }
        }
        if !changed {
            return productive;
        }
    }
}

/// Least fixpoint of the out-parameter sets: index `i` of `p` (with sort
/// `loc`) is out when some rule body mentions the parameter in its points-to
/// tuple, or passes it to an out position of a body predicate.
pub fn compute_out_params(rs: &RuleSet) -> BTreeMap<String, BTreeSet<usize>> {
    let mut out: BTreeMap<String, BTreeSet<usize>> =
        rs.predicates().map(|p| (p.clone(), BTreeSet::new())).collect();
    loop {
        let mut changed = false;
        for rule in rs.rules() {
            let Some((_, tuple)) = rule.points_to() else { continue };
            for (i, param) in rule.params.iter().enumerate() {
                let idx = i + 1;
                if !param.is_loc() || out[&rule.head].contains(&idx) {
                    continue;
                }
                let in_tuple = tuple.contains(param);
                let via_pred = rule.body_preds().any(|(q, args)| {
                    out.get(q).is_some_and(|qs| {
                        qs.iter().any(|&j| args.get(j - 1) == Some(param))
                    })
                });
                if in_tuple || via_pred {
                    out.get_mut(&rule.head).unwrap().insert(idx);
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Loc parameters (index >= 2) that are not out-parameters; such parameters
/// are semantically irrelevant and rejected.
pub fn check_assumption2(rs: &RuleSet) -> Vec<(String, usize)> {
    let mut violations = Vec::new();
    for pred in rs.predicates() {
        let Some(profile) = rs.profile(pred) else { continue };
        let out = rs.out_params(pred);
        for (i, sort) in profile.sorts.iter().enumerate().skip(1) {
            let idx = i + 1;
            if sort.is_loc() && !out.contains(&idx) {
                violations.push((pred.clone(), idx));
            }
        }
    }
    violations
}

/// Tests every pair of distinct same-head rules for overlap: the pair is
/// renamed apart, the parameter vectors and points-to tuples are equated and
/// the rule constraints conjoined; a satisfiable conjunction is a witness of
/// non-determinism.
pub fn check_deterministic(rs: &RuleSet) -> Option<DeterminismWitness> {
    for pred in rs.predicates() {
        let indices: Vec<usize> = rs
            .rules()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.head == *pred)
            .map(|(i, _)| i)
            .collect();
        for (a_pos, &a) in indices.iter().enumerate() {
            for &b in &indices[a_pos + 1..] {
                let left = &rs.rules()[a];
                let right = rename_apart(&rs.rules()[b]);
                let Some((_, t_left)) = left.points_to() else { continue };
                let Some((_, t_right)) = right.points_to() else { continue };
                let mut atoms = Vec::new();
                let Some(params_eq) = vector_equation(&left.params, &right.params) else {
                    continue;
                };
                atoms.extend(params_eq);
                let Some(tuples_eq) = vector_equation(t_left, t_right) else { continue };
                atoms.extend(tuples_eq);
                atoms.extend(left.body.pure.atoms().cloned());
                atoms.extend(right.body.pure.atoms().cloned());
                if pure_satisfiable(&atoms) {
                    let constraint = atoms
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(" /\\ ");
                    return Some(DeterminismWitness { rule_a: a, rule_b: b, constraint, atoms });
                }
            }
        }
    }
    None
}

/// Renames every variable of a rule with a reserved `'` suffix; used to
/// compare two rules over disjoint variables.
fn rename_apart(rule: &InductiveRule) -> InductiveRule {
    let mut sigma = crate::syntax::Substitution::new();
    for v in rule.body.vars().into_iter().chain(rule.params.iter().cloned()) {
        let renamed = Term::var(format!("{}'", v.name), v.sort.clone());
        sigma.bind(v, renamed).expect("renaming preserves sorts");
    }
    InductiveRule {
        head: rule.head.clone(),
        params: rule.params.iter().map(|p| sigma.apply_term(p)).collect(),
        body: sigma.apply_heap(&rule.body),
    }
}

fn non_loc_disequations(rs: &RuleSet) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    for (i, rule) in rs.rules().iter().enumerate() {
        for atom in rule.body.pure.atoms() {
            if atom.is_neq() && !(atom.left.is_loc() && atom.left.is_var() && atom.right.is_var())
            {
                out.push((i, atom.to_string()));
            }
        }
    }
    out
}

/// Instantiates a rule for the given head arguments, renaming existential
/// variables so that they avoid `avoid`. Renaming is deterministic: the
/// original name is kept when free, otherwise a numeric suffix is appended.
pub fn instantiate(
    rule: &InductiveRule,
    args: &[Term],
    avoid: &BTreeSet<Term>,
) -> SymbolicHeap {
    debug_assert_eq!(rule.params.len(), args.len());
    let mut sigma = crate::syntax::Substitution::new();
    let mut taken: BTreeSet<Term> = avoid.clone();
    taken.extend(args.iter().cloned());
    for (p, a) in rule.params.iter().zip(args) {
        sigma.bind(p.clone(), a.clone()).expect("profile sorts match");
    }
    for v in rule.existentials() {
        let mut fresh = v.clone();
        let mut i = 0;
        while taken.contains(&fresh) {
            i += 1;
            fresh = Term::var(format!("{}{}", v.name, i), v.sort.clone());
        }
        taken.insert(fresh.clone());
        sigma.bind(v, fresh).expect("renaming preserves sorts");
    }
    sigma.apply_heap(&rule.body)
}
