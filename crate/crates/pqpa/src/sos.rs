//! Structured operational semantics over quantum configurations.
//!
//! Static terms take probabilistic steps (which never change the
//! quantum part), dynamic terms take action steps (which apply the
//! action's quantum effect). `build_graph` closes both step relations
//! into a fully probabilistic quantum graph with bounded recursion
//! unfolding; the quantum part carried by graph states is the state of
//! the public registers.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::prob::{fmt_rational, one, Rational};
use crate::quantum::{QState, QuantumError, EPS_Q};
use crate::registry::{ActionKind, ActionRegistry, QEffect, RegistryError};
use crate::term::{check_guarded, print_term, unfold, ActionName, ProcessTerm, TermError};

#[derive(Debug, Error)]
pub enum SosError {
    #[error("term is not a static process: {0}")]
    NotStatic(String),
    #[error("term is not a dynamic process: {0}")]
    NotDynamic(String),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("recursion unfolding exceeded {0} steps without reaching an atom")]
    UnfoldBudget(u32),
}

/// A process term paired with the current quantum state.
#[derive(Clone, Debug)]
pub struct Configuration {
    pub term: ProcessTerm,
    pub state: Arc<QState>,
}

impl Configuration {
    pub fn new(term: ProcessTerm, state: QState) -> Self {
        Configuration { term, state: Arc::new(state) }
    }
}

/// Is this a dynamic process (one that takes action transitions)?
pub fn is_dynamic(t: &ProcessTerm) -> bool {
    use ProcessTerm::*;
    match t {
        DynAtom(_) => true,
        Seq(x, _) | LeftMerge(x, _) | Unless(x, _) => is_dynamic(x),
        Alt(x, y) | CommMerge(x, y) | EntMerge(x, y) => is_dynamic(x) && is_dynamic(y),
        Encap(_, x) | Abstr(_, x) | Proj(_, x) | Rename(_, x) | Priority(x) => is_dynamic(x),
        _ => false,
    }
}

// ---------------------------------------------------------------------
// Probabilistic transitions.

/// All one-step probabilistic successors with cumulative weights.
/// Weights over distinct successors sum to exactly 1.
pub fn prob_step(
    cfg: &Configuration,
    reg: &ActionRegistry,
) -> Result<Vec<(ProcessTerm, Rational)>, SosError> {
    if is_dynamic(&cfg.term) {
        return Err(SosError::NotStatic(print_term(&cfg.term)));
    }
    let mut budget = 10_000u32;
    let dist = dist(&cfg.term, reg, &mut budget)?;
    Ok(dist.into_values().collect())
}

type Dist = BTreeMap<String, (ProcessTerm, Rational)>;

fn singleton(t: ProcessTerm) -> Dist {
    let mut m = BTreeMap::new();
    m.insert(print_term(&t), (t, one()));
    m
}

fn add_weighted(into: &mut Dist, t: ProcessTerm, w: Rational) {
    let key = print_term(&t);
    match into.get_mut(&key) {
        Some((_, acc)) => *acc += w,
        None => {
            into.insert(key, (t, w));
        }
    }
}

fn map_dist(d: Dist, f: impl Fn(ProcessTerm) -> ProcessTerm) -> Dist {
    let mut out = BTreeMap::new();
    for (_, (t, w)) in d {
        add_weighted(&mut out, f(t), w);
    }
    out
}

fn product_dist(a: Dist, b: Dist, f: impl Fn(ProcessTerm, ProcessTerm) -> ProcessTerm) -> Dist {
    let mut out = BTreeMap::new();
    for (_, (ta, wa)) in &a {
        for (_, (tb, wb)) in &b {
            add_weighted(&mut out, f(ta.clone(), tb.clone()), wa.clone() * wb.clone());
        }
    }
    out
}

/// `x' |_ w  +  y' |_ z  +  x' | y'  +  x' >< y'`, left-associated.
fn merge_sum(x1: ProcessTerm, w: ProcessTerm, y1: ProcessTerm, z: ProcessTerm) -> ProcessTerm {
    use ProcessTerm::*;
    let lm1 = LeftMerge(Box::new(x1.clone()), Box::new(w));
    let lm2 = LeftMerge(Box::new(y1.clone()), Box::new(z));
    let cm = CommMerge(Box::new(x1.clone()), Box::new(y1.clone()));
    let em = EntMerge(Box::new(x1), Box::new(y1));
    Alt(
        Box::new(Alt(Box::new(Alt(Box::new(lm1), Box::new(lm2))), Box::new(cm))),
        Box::new(em),
    )
}

fn dist(t: &ProcessTerm, reg: &ActionRegistry, budget: &mut u32) -> Result<Dist, SosError> {
    use ProcessTerm::*;
    if *budget == 0 {
        return Err(SosError::UnfoldBudget(10_000));
    }
    *budget -= 1;
    Ok(match t {
        Atom(a) => {
            reg.kind_of(a)?;
            singleton(DynAtom(a.clone()))
        }
        DynAtom(_) => return Err(SosError::NotStatic(print_term(t))),
        Seq(x, y) => {
            let y = y.clone();
            map_dist(dist(x, reg, budget)?, move |x1| Seq(Box::new(x1), y.clone()))
        }
        Alt(x, y) => product_dist(dist(x, reg, budget)?, dist(y, reg, budget)?, |a, b| {
            Alt(Box::new(a), Box::new(b))
        }),
        PChoice(x, p, y) => {
            let mut out = BTreeMap::new();
            for (_, (t, w)) in dist(x, reg, budget)? {
                add_weighted(&mut out, t, p.clone() * w);
            }
            let q = one() - p.clone();
            for (_, (t, w)) in dist(y, reg, budget)? {
                add_weighted(&mut out, t, q.clone() * w);
            }
            out
        }
        Par(x, y) => {
            let (xs, ys) = (x.clone(), y.clone());
            product_dist(dist(x, reg, budget)?, dist(y, reg, budget)?, move |x1, y1| {
                merge_sum(x1, (*ys).clone(), y1, (*xs).clone())
            })
        }
        MergeMem(x, z, y, w) => {
            let (zs, ws) = (z.clone(), w.clone());
            product_dist(dist(x, reg, budget)?, dist(y, reg, budget)?, move |x1, y1| {
                merge_sum(x1, (*ws).clone(), y1, (*zs).clone())
            })
        }
        LeftMerge(x, y) => {
            let y = y.clone();
            map_dist(dist(x, reg, budget)?, move |x1| LeftMerge(Box::new(x1), y.clone()))
        }
        CommMerge(x, y) => product_dist(dist(x, reg, budget)?, dist(y, reg, budget)?, |a, b| {
            CommMerge(Box::new(a), Box::new(b))
        }),
        EntMerge(x, y) => product_dist(dist(x, reg, budget)?, dist(y, reg, budget)?, |a, b| {
            EntMerge(Box::new(a), Box::new(b))
        }),
        Encap(h, x) => {
            let h = h.clone();
            map_dist(dist(x, reg, budget)?, move |x1| Encap(h.clone(), Box::new(x1)))
        }
        Abstr(i, x) => {
            reg.check_abstraction_set(i)?;
            let i = i.clone();
            map_dist(dist(x, reg, budget)?, move |x1| Abstr(i.clone(), Box::new(x1)))
        }
        Proj(n, x) => {
            let n = *n;
            map_dist(dist(x, reg, budget)?, move |x1| Proj(n, Box::new(x1)))
        }
        Rename(f, x) => {
            reg.rename_map(f)?;
            let f = f.clone();
            map_dist(dist(x, reg, budget)?, move |x1| Rename(f.clone(), Box::new(x1)))
        }
        Priority(x) => map_dist(dist(x, reg, budget)?, |x1| Priority(Box::new(x1))),
        Unless(x, y) => {
            let y = y.clone();
            map_dist(dist(x, reg, budget)?, move |x1| Unless(Box::new(x1), y.clone()))
        }
        RecVar(v) => return Err(SosError::Term(TermError::UnboundVariable(v.clone()))),
        RecSpec(v, env) => {
            check_guarded(env)?;
            dist(&unfold(v, env)?, reg, budget)?
        }
    })
}

// ---------------------------------------------------------------------
// Action transitions.

#[derive(Clone, Debug)]
pub struct ATrans {
    pub label: ActionName,
    /// Produced by an entanglement merge; passes encapsulation.
    pub entangled: bool,
    /// `None` means successful termination.
    pub target: Option<ProcessTerm>,
    pub state: Arc<QState>,
}

#[derive(Clone, Debug, Default)]
pub struct ActionOutcome {
    pub transitions: Vec<ATrans>,
    /// Number of transitions suppressed solely because a projection had
    /// probability below tolerance. A deadlock with such evidence is a
    /// zero-probability branch, not a real deadlock.
    pub suppressed_zero: u32,
}

/// All enabled action transitions of a dynamic configuration.
pub fn action_step(cfg: &Configuration, reg: &ActionRegistry) -> Result<ActionOutcome, SosError> {
    if !is_dynamic(&cfg.term) {
        return Err(SosError::NotDynamic(print_term(&cfg.term)));
    }
    let mut out = go(&cfg.term, &cfg.state, reg)?;
    out.transitions.sort_by(|a, b| {
        (a.label.clone(), a.target.as_ref().map(print_term))
            .cmp(&(b.label.clone(), b.target.as_ref().map(print_term)))
    });
    Ok(out)
}

fn go(t: &ProcessTerm, state: &Arc<QState>, reg: &ActionRegistry) -> Result<ActionOutcome, SosError> {
    use ProcessTerm::*;
    let mut out = ActionOutcome::default();
    match t {
        DynAtom(a) => match reg.kind_of(a)? {
            ActionKind::Deadlock => {}
            ActionKind::Classical | ActionKind::Silent | ActionKind::Shadow(_) => {
                out.transitions.push(ATrans {
                    label: a.clone(),
                    entangled: false,
                    target: None,
                    state: Arc::clone(state),
                });
            }
            ActionKind::Unitary => {
                let QEffect::Unitary { mat, targets } = reg.effect_of(a)? else {
                    unreachable!("validated registry");
                };
                let names: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
                let next = state.apply_unitary(mat, &names)?;
                out.transitions.push(ATrans {
                    label: a.clone(),
                    entangled: false,
                    target: None,
                    state: Arc::new(next),
                });
            }
            ActionKind::Projection => {
                let QEffect::Projection { mat, targets, .. } = reg.effect_of(a)? else {
                    unreachable!("validated registry");
                };
                let names: Vec<&str> = targets.iter().map(|s| s.as_str()).collect();
                let p = state.measure_probability(mat, &names)?;
                if p <= EPS_Q {
                    out.suppressed_zero += 1;
                } else {
                    let next = state.apply_projection(mat, &names)?;
                    out.transitions.push(ATrans {
                        label: a.clone(),
                        entangled: false,
                        target: None,
                        state: Arc::new(next),
                    });
                }
            }
        },
        Seq(x, y) => {
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            for t in sub.transitions {
                let target = match t.target {
                    Some(x1) => Seq(Box::new(x1), y.clone()),
                    None => (**y).clone(),
                };
                out.transitions.push(ATrans { target: Some(target), ..t });
            }
        }
        Alt(x, y) => {
            for side in [x, y] {
                if !is_dynamic(side) {
                    return Err(SosError::NotDynamic(print_term(side)));
                }
                let sub = go(side, state, reg)?;
                out.suppressed_zero += sub.suppressed_zero;
                out.transitions.extend(sub.transitions);
            }
        }
        Proj(n, x) => {
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            for t in sub.transitions {
                let target = match t.target {
                    None => None,
                    Some(x1) if *n >= 2 => Some(Proj(n - 1, Box::new(x1))),
                    Some(_) => None,
                };
                out.transitions.push(ATrans { target, ..t });
            }
        }
        LeftMerge(x, y) => {
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            for t in sub.transitions {
                let target = match t.target {
                    Some(x1) => Par(Box::new(x1), y.clone()),
                    None => (**y).clone(),
                };
                out.transitions.push(ATrans { target: Some(target), ..t });
            }
        }
        CommMerge(x, y) => {
            for side in [x, y] {
                if !is_dynamic(side) {
                    return Err(SosError::NotDynamic(print_term(side)));
                }
            }
            let xs = go(x, state, reg)?;
            let ys = go(y, state, reg)?;
            out.suppressed_zero += xs.suppressed_zero + ys.suppressed_zero;
            for tx in &xs.transitions {
                if !matches!(reg.kind_of(&tx.label)?, ActionKind::Classical) {
                    continue;
                }
                for ty in &ys.transitions {
                    if !matches!(reg.kind_of(&ty.label)?, ActionKind::Classical) {
                        continue;
                    }
                    let Some(c) = reg.gamma.get(&tx.label, &ty.label) else {
                        continue;
                    };
                    out.transitions.push(ATrans {
                        label: c.clone(),
                        entangled: false,
                        target: combine_remainders(&tx.target, &ty.target),
                        state: Arc::clone(state),
                    });
                }
            }
        }
        EntMerge(x, y) => {
            for side in [x, y] {
                if !is_dynamic(side) {
                    return Err(SosError::NotDynamic(print_term(side)));
                }
            }
            let xs = go(x, state, reg)?;
            let ys = go(y, state, reg)?;
            out.suppressed_zero += xs.suppressed_zero + ys.suppressed_zero;
            // One side performs a unitary or projection, the other the
            // matching shadow, evaluated after the quantum effect.
            for swapped in [false, true] {
                let (active, passive) = if swapped { (&ys, x) } else { (&xs, y) };
                for ta in &active.transitions {
                    if !matches!(
                        reg.kind_of(&ta.label)?,
                        ActionKind::Unitary | ActionKind::Projection
                    ) {
                        continue;
                    }
                    let partner = go(passive, &ta.state, reg)?;
                    for tp in &partner.transitions {
                        let ActionKind::Shadow(of) = reg.kind_of(&tp.label)? else {
                            continue;
                        };
                        if of != &ta.label {
                            continue;
                        }
                        let target = if swapped {
                            combine_remainders(&tp.target, &ta.target)
                        } else {
                            combine_remainders(&ta.target, &tp.target)
                        };
                        out.transitions.push(ATrans {
                            label: ta.label.clone(),
                            entangled: true,
                            target,
                            state: Arc::clone(&ta.state),
                        });
                    }
                }
            }
        }
        Encap(h, x) => {
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            for t in sub.transitions {
                if !t.entangled && h.contains(&t.label) {
                    continue;
                }
                let target = t.target.map(|x1| Encap(h.clone(), Box::new(x1)));
                out.transitions.push(ATrans { target, ..t });
            }
        }
        Abstr(i, x) => {
            reg.check_abstraction_set(i)?;
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            for t in sub.transitions {
                let label = if i.contains(&t.label) { ActionName::tau() } else { t.label };
                let target = t.target.map(|x1| Abstr(i.clone(), Box::new(x1)));
                out.transitions.push(ATrans { label, target, ..t });
            }
        }
        Rename(f, x) => {
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            for t in sub.transitions {
                let label = reg.apply_rename(f, &t.label)?;
                let target = t.target.map(|x1| Rename(f.clone(), Box::new(x1)));
                out.transitions.push(ATrans { label, target, ..t });
            }
        }
        Priority(x) => {
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            let labels: Vec<ActionName> = sub.transitions.iter().map(|t| t.label.clone()).collect();
            for t in sub.transitions {
                if labels.iter().any(|b| reg.priority.lt(&t.label, b)) {
                    continue;
                }
                let target = t.target.map(|x1| Priority(Box::new(x1)));
                out.transitions.push(ATrans { target, ..t });
            }
        }
        Unless(x, y) => {
            let sub = go(x, state, reg)?;
            out.suppressed_zero += sub.suppressed_zero;
            let blocking = potential_labels(y, state, reg)?;
            for t in sub.transitions {
                if blocking.iter().any(|b| reg.priority.lt(&t.label, b)) {
                    continue;
                }
                out.transitions.push(t);
            }
        }
        other => return Err(SosError::NotDynamic(print_term(other))),
    }
    Ok(out)
}

fn combine_remainders(a: &Option<ProcessTerm>, b: &Option<ProcessTerm>) -> Option<ProcessTerm> {
    match (a, b) {
        (Some(x), Some(y)) => Some(ProcessTerm::par(x.clone(), y.clone())),
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    }
}

/// Action labels a term could perform (after probabilistic resolution
/// when static); used by the negative premises of the priority rules.
fn potential_labels(
    t: &ProcessTerm,
    state: &Arc<QState>,
    reg: &ActionRegistry,
) -> Result<Vec<ActionName>, SosError> {
    let mut labels = Vec::new();
    if is_dynamic(t) {
        for tr in go(t, state, reg)?.transitions {
            labels.push(tr.label);
        }
    } else {
        let mut budget = 10_000u32;
        for (_, (d, _)) in dist(t, reg, &mut budget)? {
            for tr in go(&d, state, reg)?.transitions {
                labels.push(tr.label);
            }
        }
    }
    labels.sort();
    labels.dedup();
    Ok(labels)
}

// ---------------------------------------------------------------------
// Graph construction.

pub type StateId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateKind {
    Prob,
    Action,
    Nil,
}

#[derive(Clone, Debug)]
pub struct PEdge {
    pub to: StateId,
    /// Weight after pruning and renormalization; sums to 1 per state.
    pub weight: Rational,
    /// Weight before pruning (the syntactic distribution).
    pub declared: Rational,
}

#[derive(Clone, Debug)]
pub struct AEdge {
    pub to: StateId,
    pub label: ActionName,
    pub entangled: bool,
}

#[derive(Clone, Debug)]
pub struct GState {
    pub id: StateId,
    pub kind: StateKind,
    /// Canonical term text; `"√"` for termination states.
    pub text: String,
    pub term: Option<ProcessTerm>,
    pub full_state: Arc<QState>,
    pub truncated: bool,
    pub depth: u32,
    pub out_p: Vec<PEdge>,
    pub out_a: Vec<AEdge>,
}

/// A fully probabilistic quantum graph. State identity is the pair
/// (canonical term, public quantum state); the public state is also
/// what exports and bisimulations compare.
#[derive(Clone, Debug)]
pub struct ConfigGraph {
    pub states: Vec<GState>,
    pub root: StateId,
    pub depth_bound: u32,
    pub registry_fp: u64,
    /// Branches removed as zero-probability measurement branches.
    pub pruned: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl ConfigGraph {
    pub fn prob_states(&self) -> impl Iterator<Item = &GState> {
        self.states.iter().filter(|s| s.kind == StateKind::Prob)
    }

    pub fn action_states(&self) -> impl Iterator<Item = &GState> {
        self.states.iter().filter(|s| s.kind == StateKind::Action)
    }

    pub fn truncated_count(&self) -> usize {
        self.states.iter().filter(|s| s.truncated).count()
    }

    /// Every expanded probabilistic state's outgoing weights must sum
    /// to exactly one.
    pub fn check_mu_sums(&self) -> Result<(), String> {
        for s in self.prob_states() {
            if s.truncated || s.out_p.is_empty() {
                continue;
            }
            let total: Rational = s.out_p.iter().map(|e| e.weight.clone()).sum();
            if total != one() {
                return Err(format!(
                    "state {} has outgoing probability {}",
                    s.id,
                    fmt_rational(&total)
                ));
            }
        }
        Ok(())
    }
}

type StateKey = (String, Vec<(i64, i64)>);

struct Builder {
    states: Vec<GState>,
    prob_index: BTreeMap<StateKey, StateId>,
    action_index: BTreeMap<StateKey, StateId>,
    nil_index: BTreeMap<Vec<(i64, i64)>, StateId>,
    pruned: Vec<String>,
    diagnostics: Vec<String>,
}

impl Builder {
    fn push(&mut self, kind: StateKind, text: String, term: Option<ProcessTerm>, state: &Arc<QState>, depth: u32) -> StateId {
        let id = self.states.len();
        self.states.push(GState {
            id,
            kind,
            text,
            term,
            full_state: Arc::clone(state),
            truncated: false,
            depth,
            out_p: Vec::new(),
            out_a: Vec::new(),
        });
        id
    }

    fn intern_prob(&mut self, term: &ProcessTerm, state: &Arc<QState>, depth: u32) -> (StateId, bool) {
        let key = (print_term(term), state.public_fingerprint());
        if let Some(&id) = self.prob_index.get(&key) {
            return (id, false);
        }
        let id = self.push(StateKind::Prob, key.0.clone(), Some(term.clone()), state, depth);
        self.prob_index.insert(key, id);
        (id, true)
    }

    fn intern_action(&mut self, term: &ProcessTerm, state: &Arc<QState>, depth: u32) -> (StateId, bool) {
        let key = (print_term(term), state.public_fingerprint());
        if let Some(&id) = self.action_index.get(&key) {
            return (id, false);
        }
        let id = self.push(StateKind::Action, key.0.clone(), Some(term.clone()), state, depth);
        self.action_index.insert(key, id);
        (id, true)
    }

    fn intern_nil(&mut self, state: &Arc<QState>, depth: u32) -> StateId {
        let key = state.public_fingerprint();
        if let Some(&id) = self.nil_index.get(&key) {
            return id;
        }
        let id = self.push(StateKind::Nil, "√".to_string(), None, state, depth);
        self.nil_index.insert(key, id);
        id
    }
}

/// Breadth-first closure of the step relations up to `depth` action
/// transitions along every path. Paths cut by the bound end in states
/// flagged `truncated` (never conflated with termination).
pub fn build_graph(c0: &Configuration, depth: u32, reg: &ActionRegistry) -> Result<ConfigGraph, SosError> {
    assert!(depth >= 1, "depth bound must be at least 1");
    if is_dynamic(&c0.term) {
        return Err(SosError::NotStatic(print_term(&c0.term)));
    }
    let mut b = Builder {
        states: Vec::new(),
        prob_index: BTreeMap::new(),
        action_index: BTreeMap::new(),
        nil_index: BTreeMap::new(),
        pruned: Vec::new(),
        diagnostics: Vec::new(),
    };
    let (root, _) = b.intern_prob(&c0.term, &c0.state, 0);
    let mut queue: std::collections::VecDeque<StateId> = [root].into();
    while let Some(pid) = queue.pop_front() {
        let (term, full, d) = {
            let s = &b.states[pid];
            (s.term.clone().unwrap(), Arc::clone(&s.full_state), s.depth)
        };
        if d >= depth {
            b.states[pid].truncated = true;
            continue;
        }
        let cfg = Configuration { term, state: Arc::clone(&full) };
        let branches = prob_step(&cfg, reg)?;
        // Evaluate each branch's action outcome once; prune branches
        // that are dead purely through zero-probability projections.
        let mut evaluated: Vec<(ProcessTerm, Rational, ActionOutcome)> = Vec::new();
        for (dt, w) in branches {
            let outcome =
                action_step(&Configuration { term: dt.clone(), state: Arc::clone(&full) }, reg)?;
            evaluated.push((dt, w, outcome));
        }
        let prunable = |o: &ActionOutcome| o.transitions.is_empty() && o.suppressed_zero > 0;
        let surviving_mass: Rational = evaluated
            .iter()
            .filter(|(_, _, o)| !prunable(o))
            .map(|(_, w, _)| w.clone())
            .sum();
        let all_dead = surviving_mass == crate::prob::zero();
        if all_dead && evaluated.iter().any(|(_, _, o)| prunable(o)) {
            b.diagnostics.push(format!(
                "state {}: every branch is a zero-probability measurement branch; kept as-is",
                b.states[pid].text
            ));
        }
        for (dt, w, outcome) in evaluated {
            if !all_dead && prunable(&outcome) {
                b.pruned.push(format!(
                    "pruned zero-probability branch {} (weight {})",
                    print_term(&dt),
                    fmt_rational(&w)
                ));
                continue;
            }
            let weight = if all_dead { w.clone() } else { w.clone() / surviving_mass.clone() };
            let (aid, fresh) = b.intern_action(&dt, &full, d);
            b.states[pid].out_p.push(PEdge { to: aid, weight, declared: w });
            if fresh {
                for t in &outcome.transitions {
                    let to = match &t.target {
                        None => b.intern_nil(&t.state, d + 1),
                        Some(next_term) => {
                            let (sid, new_state) = b.intern_prob(next_term, &t.state, d + 1);
                            if new_state {
                                queue.push_back(sid);
                            }
                            sid
                        }
                    };
                    b.states[aid].out_a.push(AEdge {
                        to,
                        label: t.label.clone(),
                        entangled: t.entangled,
                    });
                }
            }
        }
    }
    Ok(ConfigGraph {
        states: b.states,
        root,
        depth_bound: depth,
        registry_fp: reg.fingerprint(),
        pruned: b.pruned,
        diagnostics: b.diagnostics,
    })
}

/// Compare declared branch weights against the quantum probabilities of
/// the projections those branches begin with.
pub fn check_measurement_consistency(
    g: &ConfigGraph,
    reg: &ActionRegistry,
) -> Result<Vec<String>, SosError> {
    let mut warnings = Vec::new();
    for s in g.prob_states() {
        for e in &s.out_p {
            let n = &g.states[e.to];
            let mut proj_labels: Vec<&ActionName> = n
                .out_a
                .iter()
                .filter(|a| matches!(reg.kind_of(&a.label), Ok(ActionKind::Projection)))
                .map(|a| &a.label)
                .collect();
            proj_labels.dedup();
            if proj_labels.len() != 1 {
                continue;
            }
            let label = proj_labels[0];
            let QEffect::Projection { mat, targets, .. } = reg.effect_of(label)? else {
                continue;
            };
            let names: Vec<&str> = targets.iter().map(|x| x.as_str()).collect();
            let actual = s.full_state.measure_probability(mat, &names)?;
            let declared = crate::prob::to_f64(&e.declared);
            if (declared - actual).abs() > EPS_Q {
                warnings.push(format!(
                    "branch {} of {}: declared weight {} but tr(P rho) = {:.6}",
                    label,
                    s.text,
                    fmt_rational(&e.declared),
                    actual
                ));
            }
        }
    }
    Ok(warnings)
}

// ---------------------------------------------------------------------
// Exports.

impl ConfigGraph {
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph pqa {\n  rankdir=TB;\n");
        for s in &self.states {
            let (shape, extra) = match s.kind {
                StateKind::Prob if s.truncated => ("diamond", ", style=dotted"),
                StateKind::Prob => ("ellipse", ""),
                StateKind::Action => ("box", ""),
                StateKind::Nil => ("doublecircle", ""),
            };
            let label = s.text.replace('"', "'");
            out.push_str(&format!("  n{} [shape={shape}{extra}, label=\"{label}\"];\n", s.id));
        }
        for s in &self.states {
            for e in &s.out_p {
                out.push_str(&format!(
                    "  n{} -> n{} [style=dashed, label=\"{}\"];\n",
                    s.id,
                    e.to,
                    fmt_rational(&e.weight)
                ));
            }
            for e in &s.out_a {
                out.push_str(&format!("  n{} -> n{} [label=\"{}\"];\n", s.id, e.to, e.label));
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        let states: Vec<_> = self
            .states
            .iter()
            .map(|s| {
                let (_, public) = s.full_state.public_view();
                let rho: Vec<Vec<(f64, f64)>> = (0..public.dim)
                    .map(|r| {
                        (0..public.dim).map(|c| (public[(r, c)].re, public[(r, c)].im)).collect()
                    })
                    .collect();
                json!({
                    "id": s.id,
                    "kind": match s.kind {
                        StateKind::Prob => "prob",
                        StateKind::Action => "action",
                        StateKind::Nil => "nil",
                    },
                    "term": s.text,
                    "truncated": s.truncated,
                    "rho": rho,
                })
            })
            .collect();
        let mut pedges = Vec::new();
        let mut aedges = Vec::new();
        for s in &self.states {
            for e in &s.out_p {
                pedges.push(json!({
                    "from": s.id,
                    "to": e.to,
                    "weight": fmt_rational(&e.weight),
                    "declared": fmt_rational(&e.declared),
                }));
            }
            for e in &s.out_a {
                aedges.push(json!({
                    "from": s.id,
                    "to": e.to,
                    "label": e.label.to_string(),
                    "entangled": e.entangled,
                }));
            }
        }
        json!({
            "root": self.root,
            "depth": self.depth_bound,
            "states": states,
            "prob_edges": pedges,
            "action_edges": aedges,
            "pruned": self.pruned,
            "diagnostics": self.diagnostics,
        })
    }
}

// ---------------------------------------------------------------------
// Path enumeration (no deduplication) for protocol-level checks.

#[derive(Clone, Debug)]
pub struct PathLeaf {
    pub weight: Rational,
    pub labels: Vec<ActionName>,
    pub state: Arc<QState>,
    /// True when the path reached successful termination or the stop
    /// label; false for a deadlocked or budget-cut path.
    pub completed: bool,
}

/// Walk the step relations as a tree, stopping a path after its first
/// label satisfying `stop`. Nondeterministic action states fan out
/// without splitting the probabilistic weight.
pub fn enumerate_paths(
    c0: &Configuration,
    reg: &ActionRegistry,
    stop: &dyn Fn(&ActionName) -> bool,
    max_actions: u32,
) -> Result<Vec<PathLeaf>, SosError> {
    let mut leaves = Vec::new();
    let mut stack = vec![(c0.term.clone(), Arc::clone(&c0.state), one(), Vec::new(), 0u32)];
    while let Some((term, state, weight, labels, used)) = stack.pop() {
        if used >= max_actions {
            leaves.push(PathLeaf { weight, labels, state, completed: false });
            continue;
        }
        let cfg = Configuration { term, state: Arc::clone(&state) };
        let branches = prob_step(&cfg, reg)?;
        let mut evaluated = Vec::new();
        for (dt, w) in branches {
            let o = action_step(&Configuration { term: dt, state: Arc::clone(&state) }, reg)?;
            evaluated.push((w, o));
        }
        let prunable = |o: &ActionOutcome| o.transitions.is_empty() && o.suppressed_zero > 0;
        let surviving: Rational = evaluated
            .iter()
            .filter(|(_, o)| !prunable(o))
            .map(|(w, _)| w.clone())
            .sum();
        let all_dead = surviving == crate::prob::zero();
        for (w, o) in evaluated {
            if !all_dead && prunable(&o) {
                continue;
            }
            let bw = if all_dead {
                weight.clone() * w
            } else {
                weight.clone() * w / surviving.clone()
            };
            if o.transitions.is_empty() {
                leaves.push(PathLeaf {
                    weight: bw,
                    labels: labels.clone(),
                    state: Arc::clone(&state),
                    completed: false,
                });
                continue;
            }
            for t in &o.transitions {
                let mut ls = labels.clone();
                ls.push(t.label.clone());
                let done = stop(&t.label);
                match (&t.target, done) {
                    (Some(next), false) => {
                        stack.push((next.clone(), Arc::clone(&t.state), bw.clone(), ls, used + 1))
                    }
                    _ => leaves.push(PathLeaf {
                        weight: bw.clone(),
                        labels: ls,
                        state: Arc::clone(&t.state),
                        completed: true,
                    }),
                }
            }
        }
    }
    Ok(leaves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmatrix::gates::*;
    use crate::prob::rat;
    use crate::quantum::Register;
    use crate::registry::ActionRegistry;
    use crate::term::ProcessTerm as T;

    pub(crate) fn test_registry() -> ActionRegistry {
        ActionRegistry::builder()
            .register(Register::public("q0"))
            .register(Register::public("q1"))
            .unitary(ActionName::plain("h"), hadamard(), &["q0"])
            .unitary(ActionName::plain("x"), pauli_x(), &["q1"])
            .unitary(ActionName::plain("cx"), cnot(), &["q0", "q1"])
            .projection(ActionName::indexed("m", &[0]), basis_projector(1, 0), &["q0"], "m")
            .projection(ActionName::indexed("m", &[1]), basis_projector(1, 1), &["q0"], "m")
            .shadow(ActionName::plain("sh"), ActionName::plain("h"))
            .shadow(ActionName::indexed("sm", &[0]), ActionName::indexed("m", &[0]))
            .classical(ActionName::plain("a"))
            .classical(ActionName::plain("b"))
            .classical(ActionName::plain("c"))
            .classical(ActionName::plain("d"))
            .comm(ActionName::plain("a"), ActionName::plain("b"), ActionName::plain("c"))
            .prefer(ActionName::plain("a"), ActionName::plain("d"))
            .build()
            .unwrap()
    }

    fn ground() -> QState {
        QState::ground(vec![Register::public("q0"), Register::public("q1")]).unwrap()
    }

    fn cfg(t: T) -> Configuration {
        Configuration::new(t, ground())
    }

    #[test]
    fn pchoice_weights_and_merging() {
        let reg = test_registry();
        let t = T::pchoice(T::atom("a"), rat(1, 3), T::atom("b"));
        let d = prob_step(&cfg(t), &reg).unwrap();
        assert_eq!(d.len(), 2);
        let m: BTreeMap<String, Rational> =
            d.into_iter().map(|(t, w)| (print_term(&t), w)).collect();
        assert_eq!(m["~a"], rat(1, 3));
        assert_eq!(m["~b"], rat(2, 3));

        let t = T::pchoice(T::atom("a"), rat(1, 2), T::atom("a"));
        let d = prob_step(&cfg(t), &reg).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].1, rat(1, 1));
    }

    #[test]
    fn delta_resolves_but_never_acts() {
        let reg = test_registry();
        let d = prob_step(&cfg(T::atom("delta")), &reg).unwrap();
        assert_eq!(d.len(), 1);
        let o = action_step(&Configuration::new(d[0].0.clone(), ground()), &reg).unwrap();
        assert!(o.transitions.is_empty());
        assert_eq!(o.suppressed_zero, 0);
    }

    #[test]
    fn unitary_atom_applies_effect() {
        let reg = test_registry();
        let o = action_step(&cfg(T::DynAtom(ActionName::plain("h"))), &reg).unwrap();
        assert_eq!(o.transitions.len(), 1);
        let t = &o.transitions[0];
        assert!(t.target.is_none());
        let red = t.state.reduced(&["q0"]).unwrap();
        assert!(red.materialize().max_abs_diff(&plus_state()) < 1e-12);
    }

    #[test]
    fn communication_uses_gamma() {
        let reg = test_registry();
        let t = T::CommMerge(
            Box::new(T::DynAtom(ActionName::plain("a"))),
            Box::new(T::DynAtom(ActionName::plain("b"))),
        );
        let o = action_step(&cfg(t), &reg).unwrap();
        assert_eq!(o.transitions.len(), 1);
        assert_eq!(o.transitions[0].label, ActionName::plain("c"));
        assert!(o.transitions[0].target.is_none());

        let t = T::CommMerge(
            Box::new(T::DynAtom(ActionName::plain("a"))),
            Box::new(T::DynAtom(ActionName::plain("c"))),
        );
        let o = action_step(&cfg(t), &reg).unwrap();
        assert!(o.transitions.is_empty());
    }

    #[test]
    fn entanglement_merge_requires_matching_shadow() {
        let reg = test_registry();
        let t = T::EntMerge(
            Box::new(T::DynAtom(ActionName::plain("h"))),
            Box::new(T::DynAtom(ActionName::plain("sh"))),
        );
        let o = action_step(&cfg(t), &reg).unwrap();
        assert_eq!(o.transitions.len(), 1);
        assert_eq!(o.transitions[0].label, ActionName::plain("h"));
        assert!(o.transitions[0].entangled);

        // Mismatched pairing: no transition.
        let t = T::EntMerge(
            Box::new(T::DynAtom(ActionName::plain("h"))),
            Box::new(T::DynAtom(ActionName::indexed("sm", &[0]))),
        );
        let o = action_step(&cfg(t), &reg).unwrap();
        assert!(o.transitions.is_empty());
        assert_eq!(o.suppressed_zero, 0);
    }

    #[test]
    fn shadow_side_can_be_left_operand() {
        let reg = test_registry();
        let t = T::EntMerge(
            Box::new(T::DynAtom(ActionName::plain("sh"))),
            Box::new(T::DynAtom(ActionName::plain("h"))),
        );
        let o = action_step(&cfg(t), &reg).unwrap();
        assert_eq!(o.transitions.len(), 1);
        assert_eq!(o.transitions[0].label, ActionName::plain("h"));
    }

    #[test]
    fn priority_blocks_lower_action() {
        let reg = test_registry();
        let t = T::Priority(Box::new(T::Alt(
            Box::new(T::DynAtom(ActionName::plain("a"))),
            Box::new(T::DynAtom(ActionName::plain("d"))),
        )));
        let o = action_step(&cfg(t), &reg).unwrap();
        let labels: Vec<String> = o.transitions.iter().map(|t| t.label.to_string()).collect();
        assert_eq!(labels, vec!["d"]);
    }

    #[test]
    fn unless_blocks_via_right_operand() {
        let reg = test_registry();
        // a < d: a <| d deadlocks, a <| b proceeds.
        let t = T::Unless(Box::new(T::DynAtom(ActionName::plain("a"))), Box::new(T::atom("d")));
        let o = action_step(&cfg(t), &reg).unwrap();
        assert!(o.transitions.is_empty());
        let t = T::Unless(Box::new(T::DynAtom(ActionName::plain("a"))), Box::new(T::atom("b")));
        let o = action_step(&cfg(t), &reg).unwrap();
        assert_eq!(o.transitions.len(), 1);
    }

    #[test]
    fn graph_of_single_atom() {
        let reg = test_registry();
        let g = build_graph(&cfg(T::atom("a")), 1, &reg).unwrap();
        assert_eq!(g.states.len(), 3);
        assert_eq!(g.truncated_count(), 0);
        g.check_mu_sums().unwrap();
    }

    #[test]
    fn guarded_loop_closes_by_deduplication() {
        let reg = test_registry();
        let t = crate::parse::parse("rec X where { X = a . X; }").unwrap();
        let g = build_graph(&cfg(t), 4, &reg).unwrap();
        assert_eq!(g.prob_states().count(), 1);
        assert_eq!(g.truncated_count(), 0);
    }

    #[test]
    fn depth_bound_truncates_fresh_states() {
        let reg = test_registry();
        let t = crate::parse::parse("a . b . c . a").unwrap();
        let g = build_graph(&cfg(t), 2, &reg).unwrap();
        assert!(g.truncated_count() > 0);
        g.check_mu_sums().unwrap();
    }

    #[test]
    fn zero_probability_branch_is_pruned_and_renormalized() {
        let reg = test_registry();
        let t = T::pchoice(
            T::Atom(ActionName::indexed("m", &[0])),
            rat(1, 2),
            T::Atom(ActionName::indexed("m", &[1])),
        );
        let g = build_graph(&cfg(t), 1, &reg).unwrap();
        let root = &g.states[g.root];
        assert_eq!(root.out_p.len(), 1);
        assert_eq!(root.out_p[0].weight, rat(1, 1));
        assert_eq!(root.out_p[0].declared, rat(1, 2));
        assert_eq!(g.pruned.len(), 1);
        g.check_mu_sums().unwrap();
    }

    #[test]
    fn consistency_warnings() {
        let reg = test_registry();
        let plus = QState::from_factors(vec![
            (vec![Register::public("q0")], plus_state()),
            (vec![Register::public("q1")], basis_state(1, 0)),
        ])
        .unwrap();
        let t = T::pchoice(
            T::Atom(ActionName::indexed("m", &[0])),
            rat(1, 2),
            T::Atom(ActionName::indexed("m", &[1])),
        );
        let g = build_graph(&Configuration::new(t.clone(), plus), 1, &reg).unwrap();
        assert!(check_measurement_consistency(&g, &reg).unwrap().is_empty());

        let g = build_graph(&cfg(t), 1, &reg).unwrap();
        let warnings = check_measurement_consistency(&g, &reg).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn unregistered_action_fails_fast() {
        let reg = test_registry();
        let t = T::atom("nosuch");
        assert!(matches!(
            prob_step(&cfg(t), &reg),
            Err(SosError::Registry(RegistryError::UnknownAction(_)))
        ));
    }
}
