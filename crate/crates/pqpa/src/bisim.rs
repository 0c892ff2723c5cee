//! Strong and branching probabilistic quantum bisimulation.
//!
//! Both checkers work on the disjoint union of two configuration
//! graphs. Quantum agreement is the public-state equality carried by
//! graph states; probability agreement is exact rational arithmetic.
//!
//! The branching checker first removes confluent internal steps so the
//! graphs become fully probabilistic (action states with one outgoing
//! transition), then refines an equivalence by the stuttering clauses,
//! and finally refines a second relation over entry states by the
//! cumulative internal-reachability measures, solved per candidate
//! class as an absorbing chain over exact rationals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::prob::{one, zero, Rational};
use crate::quantum::EPS_Q;
use crate::sos::{ConfigGraph, StateId, StateKind};
use crate::term::ActionName;

#[derive(Debug, Error)]
pub enum BisimError {
    #[error("the two graphs were built against different registries")]
    IncompatibleRegistries,
    #[error("divergence without exit: class {0} has an internal cycle with no escape probability")]
    DivergenceWithoutExit(String),
    #[error("graph is not fully probabilistic after reduction: state {0} keeps {1} transitions")]
    NotFullyProbabilistic(String, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FailedCondition {
    KindMismatch,
    QuantumMismatch,
    ActionMismatch(String),
    MuClassMismatch,
    RootCondition(String),
    SuccessorMismatch(String),
}

impl std::fmt::Display for FailedCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailedCondition::KindMismatch => write!(f, "state kind mismatch"),
            FailedCondition::QuantumMismatch => write!(f, "quantum state mismatch"),
            FailedCondition::ActionMismatch(l) => write!(f, "action mismatch on {l}"),
            FailedCondition::MuClassMismatch => write!(f, "probability mass per class mismatch"),
            FailedCondition::RootCondition(s) => write!(f, "root condition: {s}"),
            FailedCondition::SuccessorMismatch(l) => write!(f, "no matching {l}-successor"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Witness {
    pub left: String,
    pub right: String,
    pub condition: FailedCondition,
}

#[derive(Clone, Debug)]
pub struct PartitionResult {
    pub equivalent: bool,
    /// Class index per state of the union (graph 1 first, then graph 2).
    pub partition: Vec<usize>,
    pub class_count: usize,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug)]
pub struct BranchingResult {
    pub equivalent: bool,
    pub r_classes: usize,
    pub rt_classes: usize,
    pub witness: Option<Witness>,
}

// ---------------------------------------------------------------------
// Union view.

#[derive(Clone)]
struct UState {
    kind: StateKind,
    truncated: bool,
    text: String,
    /// Index into the table of distinct public quantum states.
    rho_class: usize,
    out_p: Vec<(Rational, usize)>,
    out_a: Vec<(ActionName, usize)>,
}

struct Union {
    states: Vec<UState>,
    root1: usize,
    root2: usize,
}

fn build_union(g1: &ConfigGraph, g2: &ConfigGraph, erase_quantum: bool) -> Union {
    // Distinct public states across both graphs, compared at tolerance.
    let mut reps: Vec<(Vec<crate::quantum::Register>, crate::cmatrix::CMatrix)> = Vec::new();
    let mut rho_of = |st: &crate::quantum::QState| -> usize {
        if erase_quantum {
            if reps.is_empty() {
                reps.push((Vec::new(), crate::cmatrix::CMatrix::identity(1)));
            }
            return 0;
        }
        let (regs, mat) = st.public_view();
        for (i, (r, m)) in reps.iter().enumerate() {
            if *r == regs && m.dim == mat.dim && m.max_abs_diff(&mat) <= EPS_Q {
                return i;
            }
        }
        reps.push((regs, mat));
        reps.len() - 1
    };
    let mut states = Vec::new();
    let mut offsets = [0usize; 2];
    for (gi, g) in [g1, g2].into_iter().enumerate() {
        offsets[gi] = states.len();
        for s in &g.states {
            states.push(UState {
                kind: s.kind,
                truncated: s.truncated,
                text: s.text.clone(),
                rho_class: rho_of(&s.full_state),
                out_p: s
                    .out_p
                    .iter()
                    .map(|e| (e.weight.clone(), e.to + offsets[gi]))
                    .collect(),
                out_a: s.out_a.iter().map(|e| (e.label.clone(), e.to + offsets[gi])).collect(),
            });
        }
    }
    Union { states, root1: offsets[0] + g1.root, root2: offsets[1] + g2.root }
}

fn normalize_classes(assign: &mut [usize]) -> usize {
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    for a in assign.iter_mut() {
        let next = remap.len();
        let id = *remap.entry(*a).or_insert(next);
        *a = id;
    }
    remap.len()
}

fn split_by_key<K: Ord>(assign: &mut Vec<usize>, key: impl Fn(usize) -> K) -> bool {
    let mut table: BTreeMap<(usize, K), usize> = BTreeMap::new();
    let mut next = 0usize;
    let mut out = Vec::with_capacity(assign.len());
    for (s, &c) in assign.iter().enumerate() {
        let k = (c, key(s));
        let id = *table.entry(k).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        out.push(id);
    }
    let changed = next != normalize_classes(assign.clone().as_mut_slice());
    let changed = changed || &out != assign;
    *assign = out;
    normalize_classes(assign);
    changed
}

// ---------------------------------------------------------------------
// Strong probabilistic quantum bisimulation.

pub fn strong_bisim(g1: &ConfigGraph, g2: &ConfigGraph) -> Result<PartitionResult, BisimError> {
    strong_bisim_opts(g1, g2, false)
}

/// `erase_quantum` replaces every quantum state by a single token; used
/// to check that quantum bisimilarity implies plain bisimilarity.
pub fn strong_bisim_opts(
    g1: &ConfigGraph,
    g2: &ConfigGraph,
    erase_quantum: bool,
) -> Result<PartitionResult, BisimError> {
    if g1.registry_fp != g2.registry_fp {
        return Err(BisimError::IncompatibleRegistries);
    }
    let u = build_union(g1, g2, erase_quantum);
    let n = u.states.len();
    // Initial partition: kind, truncation flag, quantum class.
    let mut assign: Vec<usize> = vec![0; n];
    split_by_key(&mut assign, |s| {
        let st = &u.states[s];
        (st.kind as u8, st.truncated, st.rho_class)
    });
    // Refine to fixpoint. Action states split by (label, class) sets;
    // probabilistic states by mass-per-class maps.
    loop {
        let snapshot = assign.clone();
        split_by_key(&mut assign, |s| {
            let st = &u.states[s];
            match st.kind {
                StateKind::Action => {
                    let sig: BTreeSet<(String, usize)> = st
                        .out_a
                        .iter()
                        .map(|(l, t)| (l.to_string(), snapshot[*t]))
                        .collect();
                    (Some(sig), None)
                }
                StateKind::Prob => {
                    let mut mass: BTreeMap<usize, Rational> = BTreeMap::new();
                    for (w, t) in &st.out_p {
                        *mass.entry(snapshot[*t]).or_insert_with(zero) += w.clone();
                    }
                    let sig: Vec<(usize, String)> =
                        mass.into_iter().map(|(c, w)| (c, w.to_string())).collect();
                    (None, Some(sig))
                }
                StateKind::Nil => (None, None),
            }
        });
        if assign == snapshot {
            break;
        }
    }
    let class_count = normalize_classes(&mut assign);
    let equivalent = assign[u.root1] == assign[u.root2];
    let witness = if equivalent {
        None
    } else {
        Some(strong_witness(&u, &assign, u.root1, u.root2))
    };
    Ok(PartitionResult { equivalent, partition: assign, class_count, witness })
}

fn strong_witness(u: &Union, assign: &[usize], mut p: usize, mut q: usize) -> Witness {
    let mut visited: BTreeSet<(usize, usize)> = BTreeSet::new();
    loop {
        let (sp, sq) = (&u.states[p], &u.states[q]);
        let make = |condition| Witness { left: sp.text.clone(), right: sq.text.clone(), condition };
        if sp.kind != sq.kind || sp.truncated != sq.truncated {
            return make(FailedCondition::KindMismatch);
        }
        if sp.rho_class != sq.rho_class {
            return make(FailedCondition::QuantumMismatch);
        }
        if !visited.insert((p, q)) {
            return make(FailedCondition::MuClassMismatch);
        }
        match sp.kind {
            StateKind::Action => {
                let labels = |st: &UState| -> BTreeSet<String> {
                    st.out_a.iter().map(|(l, _)| l.to_string()).collect()
                };
                let (lp, lq) = (labels(sp), labels(sq));
                if lp != lq {
                    let diff = lp.symmetric_difference(&lq).next().unwrap().clone();
                    return make(FailedCondition::ActionMismatch(diff));
                }
                // Find a label whose successor classes disagree and
                // descend into the first unmatched pair.
                for (l, t) in &sp.out_a {
                    let matched = sq
                        .out_a
                        .iter()
                        .any(|(l2, t2)| l2 == l && assign[*t2] == assign[*t]);
                    if !matched {
                        let (_, t2) = sq.out_a.iter().find(|(l2, _)| l2 == l).unwrap();
                        if assign[*t] != assign[*t2] {
                            p = *t;
                            q = *t2;
                            break;
                        }
                        return make(FailedCondition::SuccessorMismatch(l.to_string()));
                    }
                }
                if visited.contains(&(p, q)) {
                    return make(FailedCondition::SuccessorMismatch("?".to_string()));
                }
            }
            StateKind::Prob => {
                let mass = |st: &UState| -> BTreeMap<usize, Rational> {
                    let mut m = BTreeMap::new();
                    for (w, t) in &st.out_p {
                        *m.entry(assign[*t]).or_insert_with(zero) += w.clone();
                    }
                    m
                };
                let (mp, mq) = (mass(sp), mass(sq));
                let keys_p: BTreeSet<usize> = mp.keys().copied().collect();
                let keys_q: BTreeSet<usize> = mq.keys().copied().collect();
                if keys_p == keys_q {
                    // Same successor classes, so only the masses differ.
                    return make(FailedCondition::MuClassMismatch);
                }
                // Descend into a pair of successors in differing classes.
                let mut advanced = false;
                for (_, t) in &sp.out_p {
                    for (_, t2) in &sq.out_p {
                        if assign[*t] != assign[*t2] && !visited.contains(&(*t, *t2)) {
                            p = *t;
                            q = *t2;
                            advanced = true;
                            break;
                        }
                    }
                    if advanced {
                        break;
                    }
                }
                if !advanced {
                    return make(FailedCondition::MuClassMismatch);
                }
            }
            StateKind::Nil => return make(FailedCondition::KindMismatch),
        }
    }
}

// ---------------------------------------------------------------------
// Confluent internal-step reduction.

/// Remove sibling transitions next to a confluent internal step so
/// interleaving diamonds collapse to one order. Preserves branching
/// equivalence; needed because the branching definition expects action
/// states with a single outgoing transition.
pub fn confluence_reduce(g: &ConfigGraph) -> ConfigGraph {
    let mut g = g.clone();
    let tau = ActionName::tau();
    loop {
        let mut change: Option<(StateId, usize)> = None;
        'outer: for s in 0..g.states.len() {
            if g.states[s].kind != StateKind::Action || g.states[s].out_a.len() <= 1 {
                continue;
            }
            for (ei, e) in g.states[s].out_a.iter().enumerate() {
                if e.label != tau {
                    continue;
                }
                let p1 = e.to;
                if g.states[p1].kind != StateKind::Prob || g.states[p1].truncated {
                    continue;
                }
                let ok = g.states[s].out_a.iter().enumerate().all(|(oi, other)| {
                    oi == ei || diamond_closes(&g, p1, &other.label, other.to)
                });
                if ok {
                    change = Some((s, ei));
                    break 'outer;
                }
            }
        }
        match change {
            Some((s, ei)) => {
                let keep = g.states[s].out_a[ei].clone();
                g.states[s].out_a = vec![keep];
            }
            None => return g,
        }
    }
}

/// After the internal step into `p1`, doing `label` must produce the
/// same weighted successors as doing `label` first (into `after`) and
/// the internal step second.
fn diamond_closes(g: &ConfigGraph, p1: StateId, label: &ActionName, after: StateId) -> bool {
    let Some(lhs) = successors_after(g, p1, label) else {
        return false;
    };
    match g.states[after].kind {
        StateKind::Nil => lhs.keys().all(|t| *t == after),
        StateKind::Prob => {
            let Some(rhs) = successors_after(g, after, &ActionName::tau()) else {
                return false;
            };
            lhs == rhs
        }
        StateKind::Action => false,
    }
}

/// Weighted multiset of states reached from a probabilistic state by
/// resolving and then performing exactly one `label` transition.
fn successors_after(
    g: &ConfigGraph,
    p: StateId,
    label: &ActionName,
) -> Option<BTreeMap<StateId, Rational>> {
    if g.states[p].kind != StateKind::Prob || g.states[p].truncated {
        return None;
    }
    let mut out: BTreeMap<StateId, Rational> = BTreeMap::new();
    for e in &g.states[p].out_p {
        let n = &g.states[e.to];
        let mut hits = n.out_a.iter().filter(|a| &a.label == label);
        let first = hits.next()?;
        if hits.next().is_some() {
            return None;
        }
        *out.entry(first.to).or_insert_with(zero) += e.weight.clone();
    }
    Some(out)
}

// ---------------------------------------------------------------------
// Branching probabilistic quantum bisimulation.

pub fn branching_bisim(g1: &ConfigGraph, g2: &ConfigGraph) -> Result<BranchingResult, BisimError> {
    if g1.registry_fp != g2.registry_fp {
        return Err(BisimError::IncompatibleRegistries);
    }
    let g1 = confluence_reduce(g1);
    let g2 = confluence_reduce(g2);
    for g in [&g1, &g2] {
        for s in g.action_states() {
            if s.out_a.len() > 1 {
                return Err(BisimError::NotFullyProbabilistic(s.text.clone(), s.out_a.len()));
            }
        }
    }
    let u = build_union(&g1, &g2, false);
    let n = u.states.len();
    let tau = ActionName::tau();

    // R: refine by the stuttering transfer clauses.
    let mut assign: Vec<usize> = vec![0; n];
    split_by_key(&mut assign, |s| {
        let st = &u.states[s];
        (st.truncated, st.rho_class)
    });
    loop {
        let before = assign.clone();
        let reach = tau_reachability(&u);
        for class in 0..normalize_classes(&mut assign.clone()) {
            let members: Vec<usize> = (0..n).filter(|&s| assign[s] == class).collect();
            if members.len() <= 1 {
                continue;
            }
            // Greedy grouping into mutually compatible subclasses.
            let mut groups: Vec<Vec<usize>> = Vec::new();
            for &s in &members {
                let mut placed = false;
                for grp in groups.iter_mut() {
                    if grp.iter().all(|&t| {
                        clauses_hold(&u, &assign, &reach, s, t)
                            && clauses_hold(&u, &assign, &reach, t, s)
                    }) {
                        grp.push(s);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    groups.push(vec![s]);
                }
            }
            if groups.len() > 1 {
                let base = assign.iter().max().copied().unwrap_or(0) + 1;
                for (gi, grp) in groups.iter().enumerate().skip(1) {
                    for &s in grp {
                        assign[s] = base + gi;
                    }
                }
            }
        }
        normalize_classes(&mut assign);
        if assign == before {
            break;
        }
    }

    // Entries and the second relation over them.
    let entries = entry_states(&u, &assign);
    let mut rt: BTreeMap<usize, usize> = entries.iter().map(|&e| (e, assign[e])).collect();
    let alphabet: BTreeSet<ActionName> = u
        .states
        .iter()
        .flat_map(|s| s.out_a.iter().map(|(l, _)| l.clone()))
        .filter(|l| *l != tau)
        .collect();
    loop {
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&e, &c) in &rt {
            classes.entry(c).or_default().push(e);
        }
        let class_sets: Vec<(usize, BTreeSet<usize>)> = classes
            .iter()
            .map(|(c, v)| (*c, v.iter().copied().collect()))
            .collect();
        // Signature per entry: internal-reachability measures into every
        // candidate class, with and without a final visible action.
        let mut sigs: BTreeMap<usize, Vec<(usize, Option<String>, String)>> = BTreeMap::new();
        for &e in &entries {
            let mut sig = Vec::new();
            for (cid, cset) in &class_sets {
                let b: BTreeSet<usize> =
                    (0..n).filter(|&s| assign[s] == assign[e]).collect();
                let v = internal_measure(&u, &b, cset, None, e)?;
                if v != zero() {
                    sig.push((*cid, None, v.to_string()));
                }
                for a in &alphabet {
                    let v = internal_measure(&u, &b, cset, Some(a), e)?;
                    if v != zero() {
                        sig.push((*cid, Some(a.to_string()), v.to_string()));
                    }
                }
            }
            sigs.insert(e, sig);
        }
        let mut table: BTreeMap<(usize, Vec<(usize, Option<String>, String)>), usize> =
            BTreeMap::new();
        let mut next = 0usize;
        let mut new_rt = BTreeMap::new();
        for &e in &entries {
            let k = (rt[&e], sigs[&e].clone());
            let id = *table.entry(k).or_insert_with(|| {
                let id = next;
                next += 1;
                id
            });
            new_rt.insert(e, id);
        }
        if new_rt == rt {
            break;
        }
        rt = new_rt;
    }

    let r_classes = normalize_classes(&mut assign.clone());
    let rt_classes = rt.values().collect::<BTreeSet<_>>().len();
    let mut witness = None;
    let mut equivalent = assign[u.root1] == assign[u.root2];
    if !equivalent {
        witness = Some(Witness {
            left: u.states[u.root1].text.clone(),
            right: u.states[u.root2].text.clone(),
            condition: FailedCondition::SuccessorMismatch("branching clauses".to_string()),
        });
    } else if rt[&u.root1] != rt[&u.root2] {
        equivalent = false;
        witness = Some(Witness {
            left: u.states[u.root1].text.clone(),
            right: u.states[u.root2].text.clone(),
            condition: FailedCondition::MuClassMismatch,
        });
    } else if let Some(reason) = root_condition_failure(&u, &assign) {
        equivalent = false;
        witness = Some(Witness {
            left: u.states[u.root1].text.clone(),
            right: u.states[u.root2].text.clone(),
            condition: FailedCondition::RootCondition(reason),
        });
    }
    Ok(BranchingResult { equivalent, r_classes, rt_classes, witness })
}

/// States reachable through internal structure: alternating resolution
/// steps and internal transitions, in any prefix.
fn tau_reachability(u: &Union) -> Vec<BTreeSet<usize>> {
    let tau = ActionName::tau();
    let n = u.states.len();
    let mut out = Vec::with_capacity(n);
    for s in 0..n {
        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut queue = VecDeque::from([s]);
        while let Some(x) = queue.pop_front() {
            if !seen.insert(x) {
                continue;
            }
            let st = &u.states[x];
            match st.kind {
                StateKind::Prob => {
                    for (_, t) in &st.out_p {
                        if u.states[*t].out_a.iter().any(|(l, _)| *l == tau) {
                            queue.push_back(*t);
                        }
                    }
                }
                StateKind::Action => {
                    for (l, t) in &st.out_a {
                        if *l == tau {
                            queue.push_back(*t);
                        }
                    }
                }
                StateKind::Nil => {}
            }
        }
        out.push(seen);
    }
    out
}

/// The transfer clauses of the branching definition for the ordered
/// pair `(p, q)` under the current candidate partition.
fn clauses_hold(
    u: &Union,
    assign: &[usize],
    reach: &[BTreeSet<usize>],
    p: usize,
    q: usize,
) -> bool {
    let tau = ActionName::tau();
    let sp = &u.states[p];
    // Resolution steps of p.
    for (_, s) in &sp.out_p {
        let matched = assign[*s] == assign[q]
            || reach[q].iter().any(|&v| {
                u.states[v].kind == StateKind::Prob
                    && assign[v] == assign[p]
                    && u.states[v].out_p.iter().any(|(_, t)| assign[*t] == assign[*s])
            });
        if !matched {
            return false;
        }
    }
    // Action steps of p.
    for (l, s) in &sp.out_a {
        if *l == tau && assign[*s] == assign[q] {
            continue;
        }
        // Candidate matching states: q itself when dynamic, or action
        // states one resolution step after an internal walk from q.
        let mut candidates: Vec<usize> = Vec::new();
        if u.states[q].kind == StateKind::Action {
            candidates.push(q);
        }
        for &v in &reach[q] {
            match u.states[v].kind {
                StateKind::Action => candidates.push(v),
                StateKind::Prob => {
                    for (_, t) in &u.states[v].out_p {
                        candidates.push(*t);
                    }
                }
                StateKind::Nil => {}
            }
        }
        let matched = candidates.iter().any(|&v| {
            u.states[v].kind == StateKind::Action
                && assign[v] == assign[p]
                && u.states[v]
                    .out_a
                    .iter()
                    .any(|(l2, t)| l2 == l && assign[*t] == assign[*s])
        });
        if !matched {
            return false;
        }
    }
    true
}

/// Entry states: the roots plus every state entered from a different
/// class.
fn entry_states(u: &Union, assign: &[usize]) -> Vec<usize> {
    let mut set: BTreeSet<usize> = [u.root1, u.root2].into();
    for (s, st) in u.states.iter().enumerate() {
        for (_, t) in &st.out_p {
            if assign[s] != assign[*t] {
                set.insert(*t);
            }
        }
        for (_, t) in &st.out_a {
            if assign[s] != assign[*t] {
                set.insert(*t);
            }
        }
    }
    set.into_iter().collect()
}

/// Probability of reaching `target` from `from`, walking only inside
/// `inside`, optionally requiring a final visible `action` into the
/// target set. Solved exactly as an absorbing chain.
fn internal_measure(
    u: &Union,
    inside: &BTreeSet<usize>,
    target: &BTreeSet<usize>,
    action: Option<&ActionName>,
    from: usize,
) -> Result<Rational, BisimError> {
    let tau = ActionName::tau();
    let vars: Vec<usize> = inside.iter().copied().collect();
    let index: BTreeMap<usize, usize> = vars.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let k = vars.len();
    // x = A x + b over the class members.
    let mut a = vec![vec![zero(); k]; k];
    let mut b = vec![zero(); k];
    // Value of stepping into a state outside the unknown set.
    let leaf = |s: usize| -> Rational {
        match action {
            None => {
                if target.contains(&s) {
                    one()
                } else {
                    zero()
                }
            }
            Some(act) => {
                // One final visible action from an action state.
                let st = &u.states[s];
                if st.kind == StateKind::Action
                    && st
                        .out_a
                        .iter()
                        .any(|(l, t)| l == act && target.contains(t))
                {
                    one()
                } else {
                    zero()
                }
            }
        }
    };
    for (i, &s) in vars.iter().enumerate() {
        let st = &u.states[s];
        match st.kind {
            StateKind::Prob => {
                for (w, t) in &st.out_p {
                    if action.is_none() && target.contains(t) {
                        b[i] += w.clone();
                    } else if let Some(&j) = index.get(t) {
                        a[i][j] += w.clone();
                    } else {
                        b[i] += w.clone() * leaf(*t);
                    }
                }
            }
            StateKind::Action => {
                for (l, t) in &st.out_a {
                    if let Some(act) = action {
                        if l == act && target.contains(t) {
                            b[i] += one();
                            continue;
                        }
                    }
                    if *l == tau {
                        if action.is_none() && target.contains(t) {
                            b[i] += one();
                        } else if let Some(&j) = index.get(t) {
                            a[i][j] += one();
                        }
                    }
                }
            }
            StateKind::Nil => {}
        }
    }
    // Solve (I - A) x = b by exact Gaussian elimination.
    let mut m = vec![vec![zero(); k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            m[i][j] = if i == j { one() - a[i][j].clone() } else { -a[i][j].clone() };
        }
        m[i][k] = b[i].clone();
    }
    for col in 0..k {
        let pivot = (col..k).find(|&r| m[r][col] != zero());
        let Some(pivot) = pivot else {
            // A singular system means an internal cycle that never
            // escapes: divergence the caller must surface.
            return Err(BisimError::DivergenceWithoutExit(
                u.states[vars[col]].text.clone(),
            ));
        };
        m.swap(col, pivot);
        let inv = m[col][col].clone();
        for j in col..=k {
            m[col][j] = m[col][j].clone() / inv.clone();
        }
        for r in 0..k {
            if r != col && m[r][col] != zero() {
                let f = m[r][col].clone();
                for j in col..=k {
                    m[r][j] = m[r][j].clone() - f.clone() * m[col][j].clone();
                }
            }
        }
    }
    let i = index[&from];
    Ok(m[i][k].clone())
}

/// The four additional clauses of the rooted variant.
fn root_condition_failure(u: &Union, assign: &[usize]) -> Option<String> {
    let (r1, r2) = (u.root1, u.root2);
    for (a, b, side) in [(r1, r2, "left"), (r2, r1, "right")] {
        for (_, n) in &u.states[a].out_p {
            let matched = u.states[b].out_p.iter().any(|(_, n2)| assign[*n2] == assign[*n]);
            if !matched {
                return Some(format!("{side} root resolution is unmatched"));
            }
            for (l, s) in &u.states[*n].out_a {
                let matched = u.states[b].out_p.iter().any(|(_, n2)| {
                    assign[*n2] == assign[*n]
                        && u.states[*n2]
                            .out_a
                            .iter()
                            .any(|(l2, s2)| l2 == l && assign[*s2] == assign[*s])
                });
                if !matched {
                    return Some(format!("{side} root action {l} is unmatched"));
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse;
    use crate::quantum::{QState, Register};
    use crate::registry::ActionRegistry;
    use crate::sos::{build_graph, Configuration};
    use crate::term::ActionName;

    fn reg() -> ActionRegistry {
        ActionRegistry::builder()
            .register(Register::public("q0"))
            .unitary(ActionName::plain("h"), crate::cmatrix::gates::hadamard(), &["q0"])
            .classical(ActionName::plain("a"))
            .classical(ActionName::plain("b"))
            .classical(ActionName::plain("i"))
            .build()
            .unwrap()
    }

    fn graph(src: &str) -> ConfigGraph {
        let t = parse(src).unwrap();
        let st = QState::ground(vec![Register::public("q0")]).unwrap();
        build_graph(&Configuration::new(t, st), 12, &reg()).unwrap()
    }

    #[test]
    fn idempotent_pchoice_is_strongly_bisimilar() {
        let r = strong_bisim(&graph("a [+1/2] a"), &graph("a")).unwrap();
        assert!(r.equivalent);
    }

    #[test]
    fn alternative_is_commutative() {
        let r = strong_bisim(&graph("a + b"), &graph("b + a")).unwrap();
        assert!(r.equivalent);
    }

    #[test]
    fn different_weights_are_distinguished() {
        let r = strong_bisim(&graph("a [+1/3] b"), &graph("a [+1/2] b")).unwrap();
        assert!(!r.equivalent);
        assert_eq!(
            r.witness.unwrap().condition,
            FailedCondition::MuClassMismatch
        );
    }

    #[test]
    fn different_labels_are_distinguished() {
        let r = strong_bisim(&graph("a"), &graph("b")).unwrap();
        assert!(!r.equivalent);
        assert!(matches!(
            r.witness.unwrap().condition,
            FailedCondition::ActionMismatch(_)
        ));
    }

    #[test]
    fn quantum_effect_matters_strongly() {
        // h changes the public state, a does not.
        let r = strong_bisim(&graph("h"), &graph("a")).unwrap();
        assert!(!r.equivalent);
    }

    #[test]
    fn trailing_tau_is_branching_inert() {
        let r = branching_bisim(&graph("a . tau"), &graph("a")).unwrap();
        assert!(r.equivalent, "{:?}", r.witness);
    }

    #[test]
    fn leading_tau_fails_the_root_condition() {
        let r = branching_bisim(&graph("tau . a"), &graph("a")).unwrap();
        assert!(!r.equivalent);
        assert!(matches!(
            r.witness.unwrap().condition,
            FailedCondition::RootCondition(_)
        ));
    }

    #[test]
    fn branching_separates_weights() {
        let r = branching_bisim(&graph("a [+1/3] b"), &graph("a [+1/2] b")).unwrap();
        assert!(!r.equivalent);
    }

    #[test]
    fn branching_accepts_mid_tau() {
        let r = branching_bisim(&graph("a . tau . b"), &graph("a . b")).unwrap();
        assert!(r.equivalent, "{:?}", r.witness);
    }

    #[test]
    fn divergence_is_reported() {
        let t = parse("abstr{i}(rec X where { X = i . X; })").unwrap();
        let st = QState::ground(vec![Register::public("q0")]).unwrap();
        let g1 = build_graph(&Configuration::new(t, st.clone()), 8, &reg()).unwrap();
        let g2 = graph("a");
        match branching_bisim(&g1, &g2) {
            Err(BisimError::DivergenceWithoutExit(_)) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn incompatible_registries_rejected() {
        let other = ActionRegistry::builder()
            .register(Register::public("q0"))
            .classical(ActionName::plain("a"))
            .build()
            .unwrap();
        let t = parse("a").unwrap();
        let st = QState::ground(vec![Register::public("q0")]).unwrap();
        let g1 = graph("a");
        let g2 = build_graph(&Configuration::new(t, st), 4, &other).unwrap();
        assert!(matches!(
            strong_bisim(&g1, &g2),
            Err(BisimError::IncompatibleRegistries)
        ));
    }
}
