//! The decision procedure: normalized sequents, the reachable sequent graph
//! under the strategy, the non-provability fixpoint, and the extraction of
//! rational proofs and refutation traces.
//!
//! Provability is the complement of the least set NP of sequents such that a
//! non-axiom belongs to NP when each of its admissible applications has a
//! premise in NP (a non-axiom with no application is in NP vacuously). Cyclic
//! proofs never need to be materialized: a back-edge in an extracted proof
//! tree points to an ancestor with the same normalized sequent.
//!
//! Narrow sequents form a closed subgraph (their descendants stay narrow), so
//! the validity queries issued while splitting a non-narrow sequent are
//! answered by demand-driven exploration of that subgraph, memoized across
//! the whole run.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{anti_axiom_condition, axiom_form, is_narrow};
use crate::calculus::{enumerate_admissible, RuleApplication};
use crate::rules::RuleSet;
use crate::semantics::{find_countermodel, Bounds, SemanticsError, Structure, Universe};
use crate::syntax::{canonicalize, Sequent, Sort, Substitution, SymbolicHeap, Term};

/// Resource limits for the graph exploration.
#[derive(Clone, Copy, Debug)]
pub struct Limits {
    pub max_nodes: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_nodes: 200_000 }
    }
}

#[derive(Error, Debug)]
pub enum ProveError {
    #[error("the rule set is not loc-deterministic; the prover cannot run")]
    NotLocDeterministic,
    #[error("node cap exceeded: {nodes} normalized sequents explored, cap {cap}")]
    NodeCapExceeded { nodes: usize, cap: usize },
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error("the root sequent is not provable; no proof to extract")]
    NotProvable,
    #[error("the root sequent is provable; no refutation to extract")]
    NotRefutable,
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// Node classification after expansion.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum Mark {
    Axiom(u8),
    AntiAxiom(u8),
    Expanded,
}

struct NodeData {
    seq: Sequent,
    explored: bool,
    mark: Mark,
    apps: Vec<RuleApplication>,
    premise_ids: Vec<Vec<usize>>,
    verdict: Option<bool>,
    rank: u64,
}

/// The explored graph of normalized sequents.
pub struct ProofGraph {
    nodes: Vec<NodeData>,
    index: BTreeMap<Sequent, usize>,
    root_id: usize,
}

impl ProofGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_sequent(&self) -> &Sequent {
        &self.nodes[self.root_id].seq
    }

    pub fn sequents(&self) -> impl Iterator<Item = &Sequent> {
        self.nodes.iter().map(|n| &n.seq)
    }

    pub fn verdict_of(&self, s: &Sequent) -> Option<bool> {
        self.index.get(s).and_then(|&id| self.nodes[id].verdict)
    }

    /// All rule applications stored in the graph, with their conclusion.
    pub fn applications(&self) -> impl Iterator<Item = (&Sequent, &RuleApplication)> {
        self.nodes.iter().flat_map(|n| n.apps.iter().map(move |a| (&n.seq, a)))
    }

    fn rule_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for n in &self.nodes {
            for a in &n.apps {
                *counts.entry(a.rule.name().to_string()).or_insert(0) += 1;
            }
        }
        counts
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Stats {
    pub nodes: usize,
    pub applications: BTreeMap<String, usize>,
}

/// The outcome of a proof search: the verdict plus the graph that justifies
/// it.
pub struct Verdict {
    pub valid: bool,
    pub stats: Stats,
    pub graph: ProofGraph,
}

/// Renames every variable of `s` outside the root sequent into the reserved
/// per-sort namespace `$<sort><i>`.
///
/// Among all such renamings (grouped by a renaming-invariant signature
/// refinement to keep the search tiny), the one with the least serialized
/// form is chosen, so normalization is idempotent and sequents equal up to a
/// renaming of their non-root variables normalize identically.
pub fn normalize(root: &Sequent, s: &Sequent) -> Sequent {
    let root_vars = root.vars();
    let targets: BTreeSet<Term> =
        s.vars().into_iter().filter(|v| !root_vars.contains(v)).collect();
    if targets.is_empty() {
        return s.clone();
    }
    let groups = signature_groups(s, &targets);
    let mut candidates: usize = 1;
    for g in &groups {
        candidates = candidates.saturating_mul(factorial(g.len()));
        if candidates > 720 {
            // Symmetry too large; fall back to first-occurrence renaming.
            return rename_by(first_occurrence_order(s, &targets), s);
        }
    }
    let mut best: Option<(String, Sequent)> = None;
    let mut orders: Vec<Vec<Term>> = vec![Vec::new()];
    for g in &groups {
        let mut next = Vec::new();
        for prefix in &orders {
            for perm in permutations(g) {
                let mut o = prefix.clone();
                o.extend(perm);
                next.push(o);
            }
        }
        orders = next;
    }
    for order in orders {
        let candidate = rename_by(order, s);
        let key = candidate.to_string();
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((key, candidate));
        }
    }
    best.expect("at least one renaming").1
}

fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}

fn permutations(items: &[Term]) -> Vec<Vec<Term>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, t) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, t.clone());
            out.push(p);
        }
    }
    out
}

/// Builds the renaming that maps the i-th variable of `order` (counted per
/// sort) to the i-th reserved variable of its sort, and applies it.
fn rename_by(order: Vec<Term>, s: &Sequent) -> Sequent {
    let mut sigma = Substitution::new();
    let mut counters: BTreeMap<Sort, usize> = BTreeMap::new();
    for v in order {
        let n = counters.entry(v.sort.clone()).or_insert(0);
        *n += 1;
        let fresh = Term::var(format!("${}{}", v.sort, n), v.sort.clone());
        sigma.bind(v, fresh).expect("renaming preserves sorts");
    }
    sigma.apply_sequent(s)
}

/// Orders the target variables by first occurrence in the canonical
/// serialization of the sequent.
fn first_occurrence_order(s: &Sequent, targets: &BTreeSet<Term>) -> Vec<Term> {
    let mut order = Vec::new();
    let mut push = |t: &Term| {
        if targets.contains(t) && !order.contains(t) {
            order.push(t.clone());
        }
    };
    let walk_heap = |h: &SymbolicHeap, push: &mut dyn FnMut(&Term)| {
        for atom in h.spatial.atoms() {
            for t in atom.terms() {
                push(t);
            }
        }
        for atom in h.pure.atoms() {
            push(&atom.left);
            push(&atom.right);
        }
    };
    walk_heap(&s.lhs, &mut push);
    for v in &s.vset {
        push(v);
    }
    walk_heap(&s.rhs, &mut push);
    order
}

/// Partitions the target variables into renaming-invariant signature groups,
/// refined with neighbor-group information until stable. Groups are ordered
/// deterministically; only permutations within a group need to be explored.
fn signature_groups(s: &Sequent, targets: &BTreeSet<Term>) -> Vec<Vec<Term>> {
    // Occurrence descriptors: (context label, position), with non-target
    // terms named explicitly and target terms abstracted.
    let occurrences = |v: &Term, group_of: &BTreeMap<Term, usize>| -> String {
        let mut descr: Vec<String> = Vec::new();
        let abstract_term = |t: &Term| -> String {
            if targets.contains(t) {
                match group_of.get(t) {
                    Some(g) => format!("g{g}"),
                    None => "?".to_string(),
                }
            } else {
                t.name.clone()
            }
        };
        for (side, h) in [("L", &s.lhs), ("R", &s.rhs)] {
            for atom in h.spatial.atoms() {
                let terms = atom.terms();
                if !terms.iter().any(|t| *t == v) {
                    continue;
                }
                let label = match atom {
                    crate::syntax::SpatialAtom::PointsTo { tuple, .. } => {
                        format!("pt{}", tuple.len())
                    }
                    crate::syntax::SpatialAtom::Pred { name, .. } => name.clone(),
                };
                let shape: Vec<String> = terms
                    .iter()
                    .map(|t| if *t == v { "*".to_string() } else { abstract_term(t) })
                    .collect();
                descr.push(format!("{side}:{label}({})", shape.join(",")));
            }
            for atom in h.pure.atoms() {
                for (mine, other) in [(&atom.left, &atom.right), (&atom.right, &atom.left)] {
                    if mine == v {
                        descr.push(format!(
                            "{side}:{:?}:{}",
                            atom.polarity,
                            abstract_term(other)
                        ));
                    }
                }
            }
        }
        for v2 in &s.vset {
            if v2 == v {
                descr.push("V".to_string());
            }
        }
        descr.sort();
        format!("{}|{}", v.sort, descr.join(";"))
    };

    let mut group_of: BTreeMap<Term, usize> = BTreeMap::new();
    loop {
        let mut sigs: Vec<(String, Term)> =
            targets.iter().map(|v| (occurrences(v, &group_of), v.clone())).collect();
        sigs.sort();
        let mut new_group_of = BTreeMap::new();
        let mut groups: Vec<Vec<Term>> = Vec::new();
        let mut last_sig: Option<&str> = None;
        for (sig, v) in &sigs {
            if last_sig != Some(sig.as_str()) {
                groups.push(Vec::new());
                last_sig = Some(sig.as_str());
            }
            new_group_of.insert(v.clone(), groups.len() - 1);
            groups.last_mut().unwrap().push(v.clone());
        }
        if new_group_of == group_of {
            return groups;
        }
        group_of = new_group_of;
    }
}

struct Engine<'a> {
    rs: &'a RuleSet,
    root: Sequent,
    nodes: Vec<NodeData>,
    index: BTreeMap<Sequent, usize>,
    limits: Limits,
    clock: u64,
}

impl<'a> Engine<'a> {
    fn intern(&mut self, seq: Sequent) -> Result<usize, ProveError> {
        if let Some(&id) = self.index.get(&seq) {
            return Ok(id);
        }
        if self.nodes.len() >= self.limits.max_nodes {
            return Err(ProveError::NodeCapExceeded {
                nodes: self.nodes.len(),
                cap: self.limits.max_nodes,
            });
        }
        let id = self.nodes.len();
        self.index.insert(seq.clone(), id);
        self.nodes.push(NodeData {
            seq,
            explored: false,
            mark: Mark::Expanded,
            apps: Vec::new(),
            premise_ids: Vec::new(),
            verdict: None,
            rank: 0,
        });
        Ok(id)
    }

    fn expand(&mut self, id: usize) -> Result<(), ProveError> {
        if self.nodes[id].explored {
            return Ok(());
        }
        self.nodes[id].explored = true;
        let seq = self.nodes[id].seq.clone();
        if let Some(form) = axiom_form(&seq) {
            self.nodes[id].mark = Mark::Axiom(form as u8);
            self.nodes[id].verdict = Some(true);
            self.nodes[id].rank = self.tick();
            return Ok(());
        }
        if let Some(cond) = anti_axiom_condition(self.rs, &seq) {
            self.nodes[id].mark = Mark::AntiAxiom(cond);
            self.nodes[id].verdict = Some(false);
            self.nodes[id].rank = self.tick();
            return Ok(());
        }
        let rs = self.rs;
        let narrow = is_narrow(rs, &seq);
        let mut oracle_err: Option<ProveError> = None;
        let apps = {
            let mut oracle = |aux: &Sequent| -> Result<bool, String> {
                match self.query_narrow(aux) {
                    Ok(b) => Ok(b),
                    Err(e) => {
                        let msg = e.to_string();
                        oracle_err = Some(e);
                        Err(msg)
                    }
                }
            };
            enumerate_admissible(rs, &seq, Some(&mut oracle))
        };
        let apps = match apps {
            Ok(apps) => apps,
            Err(e) => {
                return Err(oracle_err.unwrap_or(ProveError::Internal(e.to_string())));
            }
        };
        let mut premise_ids = Vec::with_capacity(apps.len());
        for app in &apps {
            let mut ids = Vec::with_capacity(app.premises.len());
            for p in &app.premises {
                let n = normalize(&self.root, p);
                if narrow && !is_narrow(rs, &n) {
                    return Err(ProveError::Internal(format!(
                        "narrow sequent {seq} has a non-narrow successor {n}"
                    )));
                }
                ids.push(self.intern(n)?);
            }
            premise_ids.push(ids);
        }
        self.nodes[id].apps = apps;
        self.nodes[id].premise_ids = premise_ids;
        Ok(())
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Expands the full closure reachable from `start`.
    fn explore(&mut self, start: usize) -> Result<(), ProveError> {
        let mut queue = VecDeque::from([start]);
        let mut visited = BTreeSet::new();
        while let Some(id) = queue.pop_front() {
            if !visited.insert(id) {
                continue;
            }
            self.expand(id)?;
            for ids in self.nodes[id].premise_ids.clone() {
                for p in ids {
                    queue.push_back(p);
                }
            }
        }
        Ok(())
    }

    /// Runs the non-provability fixpoint on the still-unsolved component
    /// reachable from `start`. Previously solved nodes act as fixed boundary
    /// values, which is sound because a verdict only depends on descendants.
    fn solve(&mut self, start: usize) {
        let mut component = Vec::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) || self.nodes[id].verdict.is_some() {
                continue;
            }
            component.push(id);
            for ids in &self.nodes[id].premise_ids {
                for &p in ids {
                    stack.push(p);
                }
            }
        }
        if component.is_empty() {
            return;
        }
        let in_component: BTreeSet<usize> = component.iter().copied().collect();
        // dependents[premise] = (node, application index) pairs inside the
        // component.
        let mut dependents: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        let mut dead: BTreeMap<(usize, usize), bool> = BTreeMap::new();
        let mut dead_count: BTreeMap<usize, usize> = BTreeMap::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &id in &component {
            let app_count = self.nodes[id].premise_ids.len();
            dead_count.insert(id, 0);
            for (k, ids) in self.nodes[id].premise_ids.iter().enumerate() {
                let initially_dead =
                    ids.iter().any(|&p| self.nodes[p].verdict == Some(false));
                dead.insert((id, k), initially_dead);
                if initially_dead {
                    *dead_count.get_mut(&id).unwrap() += 1;
                }
                for &p in ids {
                    if in_component.contains(&p) {
                        dependents.entry(p).or_default().push((id, k));
                    }
                }
            }
            if dead_count[&id] == app_count {
                queue.push_back(id);
            }
        }
        while let Some(id) = queue.pop_front() {
            if self.nodes[id].verdict.is_some() {
                continue;
            }
            self.nodes[id].verdict = Some(false);
            self.nodes[id].rank = self.tick();
            for &(n, k) in dependents.get(&id).into_iter().flatten() {
                if self.nodes[n].verdict.is_some() || dead[&(n, k)] {
                    continue;
                }
                dead.insert((n, k), true);
                let c = dead_count.get_mut(&n).unwrap();
                *c += 1;
                if *c == self.nodes[n].premise_ids.len() {
                    queue.push_back(n);
                }
            }
        }
        // Everything that never entered NP is provable.
        for &id in &component {
            if self.nodes[id].verdict.is_none() {
                self.nodes[id].verdict = Some(true);
            }
        }
    }

    /// Validity of a narrow auxiliary sequent, explored on demand and
    /// memoized.
    fn query_narrow(&mut self, s: &Sequent) -> Result<bool, ProveError> {
        let n = normalize(&self.root, s);
        let id = self.intern(n)?;
        if let Some(v) = self.nodes[id].verdict {
            return Ok(v);
        }
        self.explore(id)?;
        self.solve(id);
        self.nodes[id]
            .verdict
            .ok_or_else(|| ProveError::Internal("unsolved auxiliary sequent".into()))
    }
}

/// Decides the sequent against a loc-deterministic rule set.
pub fn prove(rs: &RuleSet, root: &Sequent, limits: Limits) -> Result<Verdict, ProveError> {
    if !rs.is_loc_deterministic() {
        return Err(ProveError::NotLocDeterministic);
    }
    let root = normalize(root, &canonicalize_sequent(root));
    let mut engine = Engine {
        rs,
        root: root.clone(),
        nodes: Vec::new(),
        index: BTreeMap::new(),
        limits,
        clock: 0,
    };
    let root_id = engine.intern(root)?;
    engine.explore(root_id)?;
    engine.solve(root_id);
    let valid = engine.nodes[root_id].verdict == Some(true);
    let graph = ProofGraph { nodes: engine.nodes, index: engine.index, root_id };
    let stats = Stats { nodes: graph.len(), applications: graph.rule_counts() };
    Ok(Verdict { valid, stats, graph })
}

fn canonicalize_sequent(s: &Sequent) -> Sequent {
    Sequent::new(canonicalize(&s.lhs), s.vset.clone(), canonicalize(&s.rhs))
}

/// A rational proof tree: children of a node are the premises of one
/// admissible application; leaves are axioms or back-edges to ancestors with
/// the same normalized sequent.
#[derive(Clone, Debug, Serialize)]
pub struct ProofTree {
    pub sequent: Sequent,
    pub step: ProofStep,
}

#[derive(Clone, Debug, Serialize)]
pub enum ProofStep {
    Axiom { form: u8 },
    BackEdge,
    Inference { rule: String, detail: String, children: Vec<ProofTree> },
}

impl ProofTree {
    pub fn node_count(&self) -> usize {
        match &self.step {
            ProofStep::Axiom { .. } => 1,
            ProofStep::BackEdge => 0,
            ProofStep::Inference { children, .. } => {
                1 + children.iter().map(ProofTree::node_count).sum::<usize>()
            }
        }
    }

    pub fn back_edge_count(&self) -> usize {
        match &self.step {
            ProofStep::Axiom { .. } => 0,
            ProofStep::BackEdge => 1,
            ProofStep::Inference { children, .. } => {
                children.iter().map(ProofTree::back_edge_count).sum()
            }
        }
    }

    /// Rule names in prefix order, back-edges and axioms excluded.
    pub fn rule_sequence(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_rules(&mut out);
        out
    }

    fn collect_rules(&self, out: &mut Vec<String>) {
        if let ProofStep::Inference { rule, children, .. } = &self.step {
            out.push(rule.clone());
            for c in children {
                c.collect_rules(out);
            }
        }
    }

    fn render(&self, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match &self.step {
            ProofStep::Axiom { form } => {
                out.push_str(&format!("{pad}{}   [axiom {form}]\n", self.sequent));
            }
            ProofStep::BackEdge => {
                out.push_str(&format!("{pad}{}   [back-edge]\n", self.sequent));
            }
            ProofStep::Inference { rule, detail, children } => {
                out.push_str(&format!("{pad}{}   [{rule}: {detail}]\n", self.sequent));
                for c in children {
                    c.render(indent + 1, out);
                }
            }
        }
    }
}

impl std::fmt::Display for ProofTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut out = String::new();
        self.render(0, &mut out);
        f.write_str(&out)
    }
}

/// Extracts the rational proof of a provable root.
pub fn extract_proof(v: &Verdict) -> Result<ProofTree, ProveError> {
    if !v.valid {
        return Err(ProveError::NotProvable);
    }
    let g = &v.graph;
    let mut path = Vec::new();
    Ok(build_proof(g, g.root_id, &mut path))
}

fn build_proof(g: &ProofGraph, id: usize, path: &mut Vec<usize>) -> ProofTree {
    let node = &g.nodes[id];
    if path.contains(&id) {
        return ProofTree { sequent: node.seq.clone(), step: ProofStep::BackEdge };
    }
    if let Mark::Axiom(form) = node.mark {
        return ProofTree { sequent: node.seq.clone(), step: ProofStep::Axiom { form } };
    }
    let (app, ids) = node
        .apps
        .iter()
        .zip(&node.premise_ids)
        .find(|(_, ids)| ids.iter().all(|&p| g.nodes[p].verdict == Some(true)))
        .expect("a provable non-axiom has an application with provable premises");
    path.push(id);
    let children = ids.iter().map(|&p| build_proof(g, p, path)).collect();
    path.pop();
    ProofTree {
        sequent: node.seq.clone(),
        step: ProofStep::Inference {
            rule: app.rule.name().to_string(),
            detail: app.detail.to_string(),
            children,
        },
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceStep {
    pub sequent: Sequent,
    /// The rule taken to descend, absent at the final leaf.
    pub rule: Option<String>,
    pub leaf: Option<LeafKind>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub enum LeafKind {
    AntiAxiom { condition: u8 },
    /// A non-axiom on which no admissible rule application exists.
    Stuck,
}

/// The path from the root to a non-provable leaf: each step follows, inside
/// the first stored application, the non-provable premise that entered the
/// fixpoint earliest.
pub fn refutation_trace(v: &Verdict) -> Result<Vec<TraceStep>, ProveError> {
    if v.valid {
        return Err(ProveError::NotRefutable);
    }
    let g = &v.graph;
    let mut id = g.root_id;
    let mut out = Vec::new();
    loop {
        let node = &g.nodes[id];
        if let Mark::AntiAxiom(cond) = node.mark {
            out.push(TraceStep {
                sequent: node.seq.clone(),
                rule: None,
                leaf: Some(LeafKind::AntiAxiom { condition: cond }),
            });
            return Ok(out);
        }
        if node.apps.is_empty() {
            out.push(TraceStep {
                sequent: node.seq.clone(),
                rule: None,
                leaf: Some(LeafKind::Stuck),
            });
            return Ok(out);
        }
        let next = node.premise_ids[0]
            .iter()
            .copied()
            .filter(|&p| g.nodes[p].verdict == Some(false))
            .min_by_key(|&p| g.nodes[p].rank)
            .expect("a non-provable node has a non-provable premise in every application");
        out.push(TraceStep {
            sequent: node.seq.clone(),
            rule: Some(node.apps[0].rule.name().to_string()),
            leaf: None,
        });
        id = next;
    }
}

#[derive(Debug, Serialize)]
pub struct RefutationReport {
    pub trace: Vec<TraceStep>,
    /// A counter-model of the root sequent, when one exists within the
    /// search bounds.
    pub countermodel: Option<Structure>,
}

/// Builds the refutation report for an invalid root: the trace to a
/// non-provable leaf, plus a concrete counter-model of the root found by the
/// bounded search (absence within bounds is reported as such).
pub fn explain_invalid(
    rs: &RuleSet,
    universe: &Universe,
    v: &Verdict,
    bounds: Bounds,
) -> Result<RefutationReport, ProveError> {
    let trace = refutation_trace(v)?;
    let countermodel = find_countermodel(rs, universe, v.graph.root_sequent(), bounds)?;
    Ok(RefutationReport { trace, countermodel })
}
