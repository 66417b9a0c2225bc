//! Shared fixtures and a seeded corpus generator for the integration suites.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use sepentail::rules::{InductiveRule, Profile, RuleSet};
use sepentail::semantics::{countermodels, find_countermodel, Bounds, Universe};
use sepentail::syntax::{
    Polarity, PureAtom, PureFormula, Sequent, Sort, SpatialAtom, SpatialFormula, SymbolicHeap,
    Term,
};

pub fn lv(n: &str) -> Term {
    Term::var(n, Sort::loc())
}

pub fn dv(n: &str) -> Term {
    Term::var(n, Sort::new("data"))
}

pub fn dc(n: &str) -> Term {
    Term::constant(n, Sort::new("data")).unwrap()
}

// ---------------------------------------------------------------------------
// Textual fixtures

/// The list-segment and tree definitions used across the examples.
pub const INTRO_LS: &str = "\
pred ls(loc, loc);
rule ls(x,y) <= x -> (y);
rule ls(x,y) <= x -> (z) * ls(z,y);
";

pub const INTRO_TREE: &str = "\
pred tree(loc);
rule tree(x) <= x -> ();
rule tree(x) <= x -> (y,z) * tree(y) * tree(z);
";

pub const ALS: &str = "\
pred als(loc, loc);
rule als(x,y) <= x -> (z) * als(z,y) /\\ y != z;
rule als(x,y) <= x -> (y);
";

pub const TLL: &str = "\
pred tree(loc);
pred tll(loc, loc);
rule tll(x,y) <= x -> (y,z) * tree(z);
rule tll(x,y) <= x -> (z,u) * tll(z,y) * tree(u) /\\ y != z;
rule tree(x) <= x -> ();
rule tree(x) <= x -> (y,z) * tree(y) * tree(z);
";

pub const DLL: &str = "\
pred dll(loc, loc);
rule dll(x,y) <= x -> (y,z) * dll(z,x);
rule dll(x,y) <= x -> ();
";

pub const TPTR: &str = "\
pred tptr(loc, loc, loc);
rule tptr(x,y,z) <= x -> (u,v,y,z) * tptr(u,v,x) * tptr(v,u,x);
rule tptr(x,y,z) <= x -> ();
";

/// Deterministic but not loc-deterministic: the disequation relates data.
pub const DATA_DISEQ: &str = "\
sort data;
pred p(loc, data);
rule p(x,u) <= x -> (v:data) /\\ v != u;
rule p(x,u) <= x -> (u);
";

/// The chained-pair rules whose entailment has a rational cyclic proof.
pub const CHAIN_PAIR: &str = "\
sort data;
const a : data;
const b : data;
pred p(loc, data);
pred r(loc);
rule p(x,y) <= x -> (a, y, z) * p(z,y);
rule p(x,y) <= x -> (b);
rule r(x) <= x -> (a, y:data, z) * r(z);
rule r(x) <= x -> (u:data);
entail p(x,y) |- r(x);
";

/// Single-cell binary predicates with the five refutable sequent shapes.
pub const ANTI_AXIOMS: &str = "\
pred p(loc, loc);
pred q(loc, loc);
pred r(loc);
rule p(x,y) <= x -> (y);
rule q(x,y) <= x -> (y);
rule r(x) <= x -> ();
entail p(x,y) |- p(y,x);
entail p(x,y) |- emp;
entail p(x,y) * p(z,y) |- q(x,y);
entail V: y p(x,y) |- r(x);
entail p(x,y) |- r(x);
";

pub fn parse_rules(text: &str) -> (RuleSet, Vec<Sequent>) {
    let file = sepentail::cli::parse(text).expect("fixture parses");
    let rs = RuleSet::new(file.profiles.clone(), file.rules.clone()).expect("fixture is valid");
    (rs, file.queries)
}

pub fn analyze_rules(text: &str) -> (RuleSet, sepentail::rules::RuleDiagnostics) {
    let file = sepentail::cli::parse(text).expect("fixture parses");
    RuleSet::analyze(file.profiles, file.rules).expect("profiles resolve")
}

// ---------------------------------------------------------------------------
// Corpus generator

pub struct Corpus {
    pub rulesets: Vec<RuleSet>,
}

/// Generates `count` loc-deterministic rule sets with width <= 2, at most 3
/// predicates and at most 3 rules per predicate.
pub fn gen_rulesets(rng: &mut ChaCha8Rng, count: usize) -> Vec<RuleSet> {
    let mut out = Vec::new();
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        assert!(attempts < count * 400, "rule-set generator starved");
        if let Some(rs) = gen_ruleset(rng) {
            out.push(rs);
        }
    }
    out
}

fn gen_ruleset(rng: &mut ChaCha8Rng) -> Option<RuleSet> {
    let data = Sort::new("data");
    let n_consts = rng.gen_range(0..=2);
    let consts: Vec<Term> = (0..n_consts).map(|i| dc(&format!("c{i}"))).collect();
    let n_preds = rng.gen_range(1..=3);
    let mut profiles = Vec::new();
    for i in 0..n_preds {
        let arity = rng.gen_range(1..=2);
        let mut sorts = vec![Sort::loc()];
        for _ in 1..arity {
            sorts.push(if rng.gen_bool(0.7) { Sort::loc() } else { data.clone() });
        }
        profiles.push(Profile::new(format!("p{i}"), sorts).unwrap());
    }
    let mut rules = Vec::new();
    for profile in &profiles {
        let n_rules = rng.gen_range(1..=3);
        for _ in 0..n_rules {
            rules.push(gen_rule(rng, profile, &profiles, &consts)?);
        }
    }
    let (rs, diagnostics) =
        RuleSet::analyze(profiles, rules).expect("all predicates have profiles");
    if diagnostics.structurally_valid() && diagnostics.is_loc_deterministic() && rs.width() <= 2 {
        Some(rs)
    } else {
        None
    }
}

fn gen_rule(
    rng: &mut ChaCha8Rng,
    profile: &Profile,
    profiles: &[Profile],
    consts: &[Term],
) -> Option<InductiveRule> {
    let data = Sort::new("data");
    let params: Vec<Term> = profile
        .sorts
        .iter()
        .enumerate()
        .map(|(i, s)| Term::var(format!("x{}", i + 1), s.clone()))
        .collect();
    let tuple_len = rng.gen_range(0..=2);
    let mut tuple: Vec<Term> = Vec::new();
    let mut fresh_locs: Vec<Term> = Vec::new();
    for i in 0..tuple_len {
        let choice = rng.gen_range(0..100);
        let term = if choice < 35 {
            let z = Term::var(format!("z{i}"), Sort::loc());
            fresh_locs.push(z.clone());
            z
        } else if choice < 55 && params.iter().any(Term::is_loc) {
            let locs: Vec<&Term> = params.iter().filter(|p| p.is_loc()).collect();
            (*locs[rng.gen_range(0..locs.len())]).clone()
        } else if choice < 80 && !consts.is_empty() {
            consts[rng.gen_range(0..consts.len())].clone()
        } else if choice < 90 && params.iter().any(|p| !p.is_loc()) {
            params.iter().find(|p| !p.is_loc()).unwrap().clone()
        } else {
            Term::var(format!("w{i}"), data.clone())
        };
        tuple.push(term);
    }
    let mut atoms =
        vec![SpatialAtom::points_to(params[0].clone(), tuple.clone()).unwrap()];
    // Every fresh loc tuple variable must root a body predicate atom.
    for z in &fresh_locs {
        let q = &profiles[rng.gen_range(0..profiles.len())];
        let mut args = vec![z.clone()];
        for s in q.sorts.iter().skip(1) {
            // Arguments must come from the parameters, tuple and constants.
            let pool: Vec<Term> = params
                .iter()
                .chain(tuple.iter())
                .chain(consts.iter())
                .filter(|t| t.sort == *s)
                .cloned()
                .collect();
            if pool.is_empty() {
                return None;
            }
            args.push(pool[rng.gen_range(0..pool.len())].clone());
        }
        atoms.push(SpatialAtom::pred(&q.name, args).unwrap());
    }
    let mut pure = Vec::new();
    if !fresh_locs.is_empty() && rng.gen_bool(0.3) {
        let v = fresh_locs[rng.gen_range(0..fresh_locs.len())].clone();
        let pool: Vec<Term> = params
            .iter()
            .chain(tuple.iter())
            .filter(|t| t.is_loc() && t.is_var() && **t != v)
            .cloned()
            .collect();
        if !pool.is_empty() {
            let u = pool[rng.gen_range(0..pool.len())].clone();
            pure.push(PureAtom::neq(u, v).unwrap());
        }
    }
    Some(InductiveRule::new(
        profile.name.clone(),
        params,
        SymbolicHeap::new(SpatialFormula::new(atoms), PureFormula::new(pure)),
    ))
}

/// Generates a well-sorted sequent over the rule set, with at most
/// `max_lhs_atoms` left-hand atoms.
pub fn gen_sequent(rng: &mut ChaCha8Rng, rs: &RuleSet, max_lhs_atoms: usize) -> Sequent {
    let loc_pool: Vec<Term> = (1..=4).map(|i| lv(&format!("v{i}"))).collect();
    let data_pool: Vec<Term> = (1..=2).map(|i| dv(&format!("d{i}"))).collect();
    let consts: Vec<Term> = rs.constants().into_iter().collect();
    let preds: Vec<String> = rs.predicates().cloned().collect();

    let pick = |sort: &Sort, rng: &mut ChaCha8Rng| -> Term {
        if sort.is_loc() {
            loc_pool[rng.gen_range(0..loc_pool.len())].clone()
        } else {
            let mut pool: Vec<Term> =
                consts.iter().filter(|c| c.sort == *sort).cloned().collect();
            pool.extend(data_pool.iter().filter(|d| d.sort == *sort).cloned());
            if pool.is_empty() {
                Term::var("d0", sort.clone())
            } else {
                pool[rng.gen_range(0..pool.len())].clone()
            }
        }
    };

    let gen_atom = |rng: &mut ChaCha8Rng| -> SpatialAtom {
        if rng.gen_bool(0.6) {
            let name = preds[rng.gen_range(0..preds.len())].clone();
            let profile = rs.profile(&name).unwrap().clone();
            let mut args = vec![loc_pool[rng.gen_range(0..loc_pool.len())].clone()];
            for s in profile.sorts.iter().skip(1) {
                args.push(pick(s, rng));
            }
            SpatialAtom::pred(name, args).unwrap()
        } else {
            let root = loc_pool[rng.gen_range(0..loc_pool.len())].clone();
            let len = rng.gen_range(0..=2usize.min(rs.record_max().max(1)));
            let tuple: Vec<Term> = (0..len)
                .map(|_| {
                    let s = if rng.gen_bool(0.8) { Sort::loc() } else { Sort::new("data") };
                    pick(&s, rng)
                })
                .collect();
            SpatialAtom::points_to(root, tuple).unwrap()
        }
    };

    let lhs_atoms: Vec<SpatialAtom> =
        (0..rng.gen_range(1..=max_lhs_atoms)).map(|_| gen_atom(rng)).collect();
    let rhs_atoms: Vec<SpatialAtom> =
        (0..rng.gen_range(1..=2)).map(|_| gen_atom(rng)).collect();

    let mut lhs_pure = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let a = loc_pool[rng.gen_range(0..loc_pool.len())].clone();
        let b = loc_pool[rng.gen_range(0..loc_pool.len())].clone();
        if a == b {
            continue;
        }
        let polarity = if rng.gen_bool(0.25) { Polarity::Eq } else { Polarity::Neq };
        lhs_pure.push(PureAtom::new(polarity, a, b).unwrap());
    }
    let rhs_pure = if rng.gen_bool(0.2) {
        let a = loc_pool[rng.gen_range(0..loc_pool.len())].clone();
        let b = loc_pool[rng.gen_range(0..loc_pool.len())].clone();
        if a == b {
            vec![]
        } else {
            vec![PureAtom::neq(a, b).unwrap()]
        }
    } else {
        vec![]
    };
    let vset = if rng.gen_bool(0.25) {
        vec![loc_pool[rng.gen_range(0..loc_pool.len())].clone()]
    } else {
        vec![]
    };
    Sequent::new(
        SymbolicHeap::new(SpatialFormula::new(lhs_atoms), PureFormula::new(lhs_pure)),
        vset,
        SymbolicHeap::new(SpatialFormula::new(rhs_atoms), PureFormula::new(rhs_pure)),
    )
}

// ---------------------------------------------------------------------------
// Bounded counter-model helpers

/// Bounded counter-model existence at the given cell budget; the location
/// budget scales with the sequent so that fresh-location witnesses fit.
pub fn cm_exists(rs: &RuleSet, s: &Sequent, cells: usize, locs: usize) -> bool {
    let universe = Universe::new(rs, s.vars().into_iter().chain(s.lhs.terms()));
    find_countermodel(rs, &universe, s, Bounds::new(cells, locs).unwrap())
        .expect("bounded search succeeds")
        .is_some()
}

/// All counter-model heaps (deduplicated) within the bounds, used by the
/// heap-for-heap invertibility checks.
pub fn cm_heaps(
    rs: &RuleSet,
    s: &Sequent,
    cells: usize,
    locs: usize,
) -> std::collections::BTreeSet<sepentail::semantics::Heap> {
    let universe = Universe::new(rs, s.vars().into_iter().chain(s.lhs.terms()));
    countermodels(rs, &universe, s, Bounds::new(cells, locs).unwrap(), 0)
        .expect("bounded search succeeds")
        .into_iter()
        .map(|st| st.heap)
        .collect()
}

/// Memoizing wrapper around [`cm_exists`] keyed on the printed sequent and
/// the search bounds.
pub struct CmCache {
    cache: BTreeMap<(usize, String, usize, usize), bool>,
    pub cells: usize,
    pub locs: usize,
}

impl CmCache {
    pub fn new(cells: usize, locs: usize) -> Self {
        CmCache { cache: BTreeMap::new(), cells, locs }
    }

    /// `tag` must identify the rule set the sequent is interpreted under.
    pub fn exists(&mut self, tag: usize, rs: &RuleSet, s: &Sequent) -> bool {
        let key = (tag, s.to_string(), self.cells, self.locs);
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        let v = cm_exists(rs, s, self.cells, self.locs);
        self.cache.insert(key, v);
        v
    }
}
