//! Axiom-directed normalization of closed, recursion-free terms to
//! basic-term form.
//!
//! Equations are oriented left-to-right and applied innermost-first.
//! The conditional axioms (the `x = x + x` guards) fire only when the
//! operand is an atom-rooted or sum-rooted term of the intermediate
//! basic layer, mirroring the case analyses of the elimination
//! arguments. Every step is recorded so a trace can be replayed.

use thiserror::Error;

use crate::prob::{one, Rational};
use crate::registry::{ActionKind, ActionRegistry, RegistryError};
use crate::term::{is_basic_plus, is_basic_term, print_term, ActionName, ProcessTerm};

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("term is not closed")]
    NotClosed,
    #[error("recursion must be handled at the graph level, not by rewriting")]
    RecursionPresent,
    #[error("dynamic markers cannot appear in rewriter input")]
    DynamicMarker,
    #[error("stuck at {redex}: {reason}")]
    Stuck { redex: String, reason: String },
    #[error("axiom {0} does not match at the given position")]
    NoMatch(String),
    #[error("side condition of {0} failed: {1}")]
    SideConditionFailed(String, String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Clone, Debug)]
pub struct RewriteStep {
    pub axiom: String,
    pub path: Vec<usize>,
    pub before: String,
    pub after: String,
}

impl std::fmt::Display for RewriteStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let path = if self.path.is_empty() {
            "ε".to_string()
        } else {
            self.path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
        };
        write!(f, "{} @ {} : {} => {}", self.axiom, path, self.before, self.after)
    }
}

pub type RewriteTrace = Vec<RewriteStep>;

/// Abstraction over alternative composition has no axioms; combining
/// the two with probabilistic choice is an open axiomatization gap, so
/// such terms are rejected with a dedicated diagnostic.
const OPEN_PROBLEM: &str = "abstraction over alternative composition is not axiomatized \
     (the combination of +, probabilistic choice and abstraction is an open problem)";

struct Engine<'r> {
    reg: &'r ActionRegistry,
    trace: RewriteTrace,
    steps_left: u64,
}

const STEP_BUDGET: u64 = 2_000_000;

pub fn normalize(
    t: &ProcessTerm,
    reg: &ActionRegistry,
) -> Result<(ProcessTerm, RewriteTrace), RewriteError> {
    if t.contains_dynamic() {
        return Err(RewriteError::DynamicMarker);
    }
    if t.contains_recursion() {
        return Err(RewriteError::RecursionPresent);
    }
    if !t.is_closed() {
        return Err(RewriteError::NotClosed);
    }
    let mut eng = Engine { reg, trace: Vec::new(), steps_left: STEP_BUDGET };
    let mut path = Vec::new();
    let out = eng.normalize_at(t.clone(), &mut path)?;
    if !is_basic_term(&out) {
        let (rpath, redex) = first_non_basic(&out);
        return Err(RewriteError::Stuck {
            redex: format!("{} at {}", print_term(redex), fmt_path(&rpath)),
            reason: "no axiom applies and the term is not basic".to_string(),
        });
    }
    Ok((out, eng.trace))
}

fn fmt_path(path: &[usize]) -> String {
    if path.is_empty() {
        "ε".to_string()
    } else {
        path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
    }
}

fn first_non_basic(t: &ProcessTerm) -> (Vec<usize>, &ProcessTerm) {
    fn walk<'a>(t: &'a ProcessTerm, path: &mut Vec<usize>) -> Option<(Vec<usize>, &'a ProcessTerm)> {
        for (i, c) in t.children().iter().enumerate() {
            path.push(i);
            if let Some(hit) = walk(c, path) {
                return Some(hit);
            }
            path.pop();
        }
        if !is_basic_term(t) && !matches!(t, ProcessTerm::Alt(_, _) | ProcessTerm::Seq(_, _)) {
            return Some((path.clone(), t));
        }
        None
    }
    let mut path = Vec::new();
    walk(t, &mut path).unwrap_or((Vec::new(), t))
}

impl Engine<'_> {
    fn normalize_at(
        &mut self,
        t: ProcessTerm,
        path: &mut Vec<usize>,
    ) -> Result<ProcessTerm, RewriteError> {
        let mut t = self.normalize_children(t, path)?;
        loop {
            if self.steps_left == 0 {
                return Err(RewriteError::Stuck {
                    redex: print_term(&t),
                    reason: format!("step budget of {STEP_BUDGET} exceeded"),
                });
            }
            match root_rule(&t, self.reg)? {
                Some((axiom, next)) => {
                    self.steps_left -= 1;
                    self.trace.push(RewriteStep {
                        axiom: axiom.to_string(),
                        path: path.clone(),
                        before: print_term(&t),
                        after: print_term(&next),
                    });
                    t = self.normalize_children(next, path)?;
                }
                None => return Ok(t),
            }
        }
    }

    fn normalize_children(
        &mut self,
        t: ProcessTerm,
        path: &mut Vec<usize>,
    ) -> Result<ProcessTerm, RewriteError> {
        match &t {
            ProcessTerm::RecVar(_) | ProcessTerm::RecSpec(_, _) => {
                return Err(RewriteError::RecursionPresent)
            }
            ProcessTerm::DynAtom(_) => return Err(RewriteError::DynamicMarker),
            _ => {}
        }
        let n = t.children().len();
        let mut t = t;
        for i in 0..n {
            let child = t.children()[i].clone();
            path.push(i);
            let done = self.normalize_at(child, path)?;
            path.pop();
            t = t.with_child(i, done);
        }
        Ok(t)
    }
}

/// Try the oriented axioms at the root; children are assumed normal.
fn root_rule(
    t: &ProcessTerm,
    reg: &ActionRegistry,
) -> Result<Option<(&'static str, ProcessTerm)>, RewriteError> {
    use ProcessTerm::*;
    let delta = || Atom(ActionName::delta());
    let is_delta = |t: &ProcessTerm| matches!(t, Atom(a) if a.is_delta());
    let is_tau = |t: &ProcessTerm| matches!(t, Atom(a) if a.is_tau());
    let atom = |t: &ProcessTerm| -> Option<ActionName> {
        match t {
            Atom(a) => Some(a.clone()),
            _ => None,
        }
    };
    // `a . rest` with an atomic guard; `rest` empty for a bare atom.
    let guarded = |t: &ProcessTerm| -> Option<(ActionName, Option<ProcessTerm>)> {
        match t {
            Atom(a) => Some((a.clone(), None)),
            Seq(h, rest) => atom(h).map(|a| (a, Some((**rest).clone()))),
            _ => None,
        }
    };
    let shadow_of = |name: &ActionName| -> Option<ActionName> {
        match reg.kind_of(name) {
            Ok(ActionKind::Shadow(of)) => Some(of.clone()),
            _ => None,
        }
    };

    Ok(match t {
        Seq(a, b) => {
            if is_delta(a) {
                Some(("A7", delta()))
            } else if is_tau(b) {
                Some(("T1", (**a).clone()))
            } else if let Seq(x, y) = a.as_ref() {
                Some(("A5", Seq(x.clone(), Box::new(Seq(y.clone(), b.clone())))))
            } else if let Alt(x, y) = a.as_ref() {
                Some((
                    "A4",
                    Alt(
                        Box::new(Seq(x.clone(), b.clone())),
                        Box::new(Seq(y.clone(), b.clone())),
                    ),
                ))
            } else if let PChoice(x, p, y) = a.as_ref() {
                Some((
                    "PrAC4",
                    PChoice(
                        Box::new(Seq(x.clone(), b.clone())),
                        p.clone(),
                        Box::new(Seq(y.clone(), b.clone())),
                    ),
                ))
            } else {
                None
            }
        }
        Alt(a, b) => {
            if is_delta(b) {
                Some(("A6", (**a).clone()))
            } else if is_delta(a) {
                Some(("A1", Alt(b.clone(), a.clone())))
            } else if a == b && matches!(a.as_ref(), Atom(_)) {
                Some(("AA3", (**a).clone()))
            } else if let PChoice(x, p, y) = a.as_ref() {
                Some((
                    "PrAC5",
                    PChoice(
                        Box::new(Alt(x.clone(), b.clone())),
                        p.clone(),
                        Box::new(Alt(y.clone(), b.clone())),
                    ),
                ))
            } else if matches!(b.as_ref(), PChoice(_, _, _)) {
                Some(("A1", Alt(b.clone(), a.clone())))
            } else if let Alt(x, y) = a.as_ref() {
                Some(("A2", Alt(x.clone(), Box::new(Alt(y.clone(), b.clone())))))
            } else {
                None
            }
        }
        PChoice(a, p, b) => {
            if a == b {
                Some(("PrAC3", (**a).clone()))
            } else if let PChoice(y, r, z) = b.as_ref() {
                // x [+p] (y [+r] z)  =>  (x [+p/s] y) [+s] z,  s = p+r-pr
                let s = p.clone() + r.clone() - p.clone() * r.clone();
                let inner = p.clone() / s.clone();
                Some((
                    "PrAC2",
                    PChoice(
                        Box::new(PChoice(a.clone(), inner, y.clone())),
                        s,
                        z.clone(),
                    ),
                ))
            } else {
                None
            }
        }
        Par(x, y) => Some(("PrMM1", MergeMem(x.clone(), x.clone(), y.clone(), y.clone()))),
        MergeMem(x, z, y, w) => {
            if let PChoice(x1, p, x2) = x.as_ref() {
                Some((
                    "PrMM2",
                    PChoice(
                        Box::new(MergeMem(x1.clone(), z.clone(), y.clone(), w.clone())),
                        p.clone(),
                        Box::new(MergeMem(x2.clone(), z.clone(), y.clone(), w.clone())),
                    ),
                ))
            } else if let PChoice(y1, p, y2) = y.as_ref() {
                Some((
                    "PrMM3",
                    PChoice(
                        Box::new(MergeMem(x.clone(), z.clone(), y1.clone(), w.clone())),
                        p.clone(),
                        Box::new(MergeMem(x.clone(), z.clone(), y2.clone(), w.clone())),
                    ),
                ))
            } else if is_basic_plus(x) && is_basic_plus(y) {
                let lm1 = LeftMerge(x.clone(), w.clone());
                let lm2 = LeftMerge(y.clone(), z.clone());
                let cm = CommMerge(x.clone(), y.clone());
                let em = EntMerge(x.clone(), y.clone());
                Some((
                    "PrMM4",
                    Alt(
                        Box::new(Alt(Box::new(Alt(Box::new(lm1), Box::new(lm2))), Box::new(cm))),
                        Box::new(em),
                    ),
                ))
            } else {
                None
            }
        }
        LeftMerge(x, y) => {
            if let PChoice(x1, p, x2) = x.as_ref() {
                Some((
                    "PrCM1",
                    PChoice(
                        Box::new(LeftMerge(x1.clone(), y.clone())),
                        p.clone(),
                        Box::new(LeftMerge(x2.clone(), y.clone())),
                    ),
                ))
            } else if let Alt(x1, x2) = x.as_ref() {
                Some((
                    "CM4",
                    Alt(
                        Box::new(LeftMerge(x1.clone(), y.clone())),
                        Box::new(LeftMerge(x2.clone(), y.clone())),
                    ),
                ))
            } else if let Some(a) = atom(x) {
                if a.is_tau() {
                    None
                } else {
                    Some(("CM2", Seq(Box::new(Atom(a)), y.clone())))
                }
            } else if let Seq(h, x1) = x.as_ref() {
                match atom(h) {
                    Some(a) if !a.is_tau() => Some((
                        "CM3",
                        Seq(Box::new(Atom(a)), Box::new(Par(x1.clone(), y.clone()))),
                    )),
                    _ => None,
                }
            } else {
                None
            }
        }
        CommMerge(x, y) => {
            if let PChoice(x1, p, x2) = x.as_ref() {
                Some((
                    "PrCM2",
                    PChoice(
                        Box::new(CommMerge(x1.clone(), y.clone())),
                        p.clone(),
                        Box::new(CommMerge(x2.clone(), y.clone())),
                    ),
                ))
            } else if let PChoice(y1, p, y2) = y.as_ref() {
                Some((
                    "PrCM3",
                    PChoice(
                        Box::new(CommMerge(x.clone(), y1.clone())),
                        p.clone(),
                        Box::new(CommMerge(x.clone(), y2.clone())),
                    ),
                ))
            } else if let Alt(x1, x2) = x.as_ref() {
                if is_basic_plus(y) {
                    Some((
                        "PrCM4",
                        Alt(
                            Box::new(CommMerge(x1.clone(), y.clone())),
                            Box::new(CommMerge(x2.clone(), y.clone())),
                        ),
                    ))
                } else {
                    None
                }
            } else if let Alt(y1, y2) = y.as_ref() {
                if is_basic_plus(x) {
                    Some((
                        "PrCM5",
                        Alt(
                            Box::new(CommMerge(x.clone(), y1.clone())),
                            Box::new(CommMerge(x.clone(), y2.clone())),
                        ),
                    ))
                } else {
                    None
                }
            } else {
                match (guarded(x), guarded(y)) {
                    (Some((a, None)), Some((b, None))) => Some(("CF", comm_result(reg, &a, &b))),
                    (Some((a, None)), Some((b, Some(y1)))) => Some((
                        "CM5",
                        Seq(
                            Box::new(CommMerge(Box::new(Atom(a)), Box::new(Atom(b)))),
                            Box::new(y1),
                        ),
                    )),
                    (Some((a, Some(x1))), Some((b, None))) => Some((
                        "CM6",
                        Seq(
                            Box::new(CommMerge(Box::new(Atom(a)), Box::new(Atom(b)))),
                            Box::new(x1),
                        ),
                    )),
                    (Some((a, Some(x1))), Some((b, Some(y1)))) => Some((
                        "CM7",
                        Seq(
                            Box::new(CommMerge(Box::new(Atom(a)), Box::new(Atom(b)))),
                            Box::new(Par(Box::new(x1), Box::new(y1))),
                        ),
                    )),
                    _ => None,
                }
            }
        }
        EntMerge(x, y) => {
            if let PChoice(x1, p, x2) = x.as_ref() {
                Some((
                    "PrEM1",
                    PChoice(
                        Box::new(EntMerge(x1.clone(), y.clone())),
                        p.clone(),
                        Box::new(EntMerge(x2.clone(), y.clone())),
                    ),
                ))
            } else if let PChoice(y1, p, y2) = y.as_ref() {
                Some((
                    "PrEM2",
                    PChoice(
                        Box::new(EntMerge(x.clone(), y1.clone())),
                        p.clone(),
                        Box::new(EntMerge(x.clone(), y2.clone())),
                    ),
                ))
            } else if let Alt(x1, x2) = x.as_ref() {
                if is_basic_plus(y) {
                    Some((
                        "PrEM3",
                        Alt(
                            Box::new(EntMerge(x1.clone(), y.clone())),
                            Box::new(EntMerge(x2.clone(), y.clone())),
                        ),
                    ))
                } else {
                    None
                }
            } else if let Alt(y1, y2) = y.as_ref() {
                if is_basic_plus(x) {
                    Some((
                        "PrEM4",
                        Alt(
                            Box::new(EntMerge(x.clone(), y1.clone())),
                            Box::new(EntMerge(x.clone(), y2.clone())),
                        ),
                    ))
                } else {
                    None
                }
            } else {
                match (guarded(x), guarded(y)) {
                    (Some((ax, rx)), Some((ay, ry))) => {
                        // Which side carries the operation, which the shadow?
                        let pick = if shadow_of(&ay) == Some(ax.clone()) {
                            Some((ax, rx, ry, false))
                        } else if shadow_of(&ax) == Some(ay.clone()) {
                            Some((ay, rx, ry, true))
                        } else {
                            None
                        };
                        match pick {
                            Some((alpha, rx, ry, flipped)) => {
                                let id = match (&rx, &ry, flipped) {
                                    (None, None, false) => "EM1",
                                    (None, None, true) => "EM2",
                                    (None, Some(_), false) => "EM3",
                                    (None, Some(_), true) => "EM4",
                                    (Some(_), None, false) => "EM5",
                                    (Some(_), None, true) => "EM6",
                                    (Some(_), Some(_), false) => "EM7",
                                    (Some(_), Some(_), true) => "EM8",
                                };
                                let rest = match (rx, ry) {
                                    (None, None) => None,
                                    (Some(r), None) | (None, Some(r)) => Some(r),
                                    (Some(r1), Some(r2)) => {
                                        Some(Par(Box::new(r1), Box::new(r2)))
                                    }
                                };
                                let out = match rest {
                                    None => Atom(alpha),
                                    Some(r) => Seq(Box::new(Atom(alpha)), Box::new(r)),
                                };
                                Some((id, out))
                            }
                            // The mismatch case of the elimination
                            // argument: unpaired operands deadlock.
                            None => Some(("EMD", delta())),
                        }
                    }
                    _ => None,
                }
            }
        }
        Encap(h, x) => match x.as_ref() {
            Atom(a) => {
                if h.contains(a) {
                    Some(("D2", delta()))
                } else {
                    Some(("D1", Atom(a.clone())))
                }
            }
            Alt(x1, x2) => Some((
                "D3",
                Alt(
                    Box::new(Encap(h.clone(), x1.clone())),
                    Box::new(Encap(h.clone(), x2.clone())),
                ),
            )),
            Seq(x1, x2) => Some((
                "D4",
                Seq(
                    Box::new(Encap(h.clone(), x1.clone())),
                    Box::new(Encap(h.clone(), x2.clone())),
                ),
            )),
            PChoice(x1, p, x2) => Some((
                "PrD5",
                PChoice(
                    Box::new(Encap(h.clone(), x1.clone())),
                    p.clone(),
                    Box::new(Encap(h.clone(), x2.clone())),
                ),
            )),
            _ => None,
        },
        Abstr(i, x) => {
            if contains_alt(x) {
                return Err(RewriteError::Stuck {
                    redex: print_term(t),
                    reason: OPEN_PROBLEM.to_string(),
                });
            }
            match x.as_ref() {
                Atom(a) if a.is_tau() => Some(("TI0", Atom(ActionName::tau()))),
                Atom(a) => {
                    if i.contains(a) {
                        Some(("TI2", Atom(ActionName::tau())))
                    } else {
                        Some(("TI1", Atom(a.clone())))
                    }
                }
                Seq(x1, x2) => Some((
                    "TI4",
                    Seq(
                        Box::new(Abstr(i.clone(), x1.clone())),
                        Box::new(Abstr(i.clone(), x2.clone())),
                    ),
                )),
                PChoice(x1, p, x2) => Some((
                    "PrTI",
                    PChoice(
                        Box::new(Abstr(i.clone(), x1.clone())),
                        p.clone(),
                        Box::new(Abstr(i.clone(), x2.clone())),
                    ),
                )),
                _ => None,
            }
        }
        Proj(n, x) => match x.as_ref() {
            Atom(a) => Some(("PR1", Atom(a.clone()))),
            Seq(h, x1) => match atom(h) {
                Some(a) if *n == 1 => Some(("PR2", Atom(a))),
                Some(a) => Some((
                    "PR3",
                    Seq(Box::new(Atom(a)), Box::new(Proj(n - 1, x1.clone()))),
                )),
                None => None,
            },
            Alt(x1, x2) => Some((
                "PR4",
                Alt(Box::new(Proj(*n, x1.clone())), Box::new(Proj(*n, x2.clone()))),
            )),
            PChoice(x1, p, x2) => Some((
                "prPR",
                PChoice(
                    Box::new(Proj(*n, x1.clone())),
                    p.clone(),
                    Box::new(Proj(*n, x2.clone())),
                ),
            )),
            _ => None,
        },
        Rename(f, x) => match x.as_ref() {
            Atom(a) if a.is_delta() => Some(("RN2", delta())),
            Atom(a) => Some(("RN1", Atom(reg.apply_rename(f, a)?))),
            Alt(x1, x2) => Some((
                "RN3",
                Alt(
                    Box::new(Rename(f.clone(), x1.clone())),
                    Box::new(Rename(f.clone(), x2.clone())),
                ),
            )),
            Seq(x1, x2) => Some((
                "RN4",
                Seq(
                    Box::new(Rename(f.clone(), x1.clone())),
                    Box::new(Rename(f.clone(), x2.clone())),
                ),
            )),
            PChoice(x1, p, x2) => Some((
                "PrRN1",
                PChoice(
                    Box::new(Rename(f.clone(), x1.clone())),
                    p.clone(),
                    Box::new(Rename(f.clone(), x2.clone())),
                ),
            )),
            _ => None,
        },
        Priority(x) => match x.as_ref() {
            Atom(a) => Some(("TH1", Atom(a.clone()))),
            Seq(x1, x2) => Some((
                "TH2",
                Seq(
                    Box::new(Priority(x1.clone())),
                    Box::new(Priority(x2.clone())),
                ),
            )),
            PChoice(x1, p, x2) => Some((
                "PrTH4",
                PChoice(
                    Box::new(Priority(x1.clone())),
                    p.clone(),
                    Box::new(Priority(x2.clone())),
                ),
            )),
            Alt(x1, x2) if is_basic_plus(x1) && is_basic_plus(x2) => Some((
                "DyTH3",
                Alt(
                    Box::new(Unless(Box::new(Priority(x1.clone())), x2.clone())),
                    Box::new(Unless(Box::new(Priority(x2.clone())), x1.clone())),
                ),
            )),
            _ => None,
        },
        Unless(x, y) => match (x.as_ref(), y.as_ref()) {
            (Atom(a), Atom(b)) => {
                if reg.priority.lt(a, b) {
                    Some(("P2", delta()))
                } else {
                    Some(("P1", Atom(a.clone())))
                }
            }
            (Seq(x1, x2), _) => Some((
                "P5",
                Seq(Box::new(Unless(x1.clone(), y.clone())), x2.clone()),
            )),
            (Alt(x1, x2), _) => Some((
                "P6",
                Alt(
                    Box::new(Unless(x1.clone(), y.clone())),
                    Box::new(Unless(x2.clone(), y.clone())),
                ),
            )),
            (_, Seq(y1, _)) => Some(("P3", Unless(x.clone(), y1.clone()))),
            (_, Alt(y1, y2)) => Some((
                "P4",
                Unless(Box::new(Unless(x.clone(), y1.clone())), y2.clone()),
            )),
            _ => None,
        },
        _ => None,
    })
}

fn comm_result(reg: &ActionRegistry, a: &ActionName, b: &ActionName) -> ProcessTerm {
    let classical = |n: &ActionName| matches!(reg.kind_of(n), Ok(ActionKind::Classical));
    if classical(a) && classical(b) {
        if let Some(c) = reg.gamma.get(a, b) {
            return ProcessTerm::Atom(c.clone());
        }
    }
    ProcessTerm::Atom(ActionName::delta())
}

fn contains_alt(t: &ProcessTerm) -> bool {
    matches!(t, ProcessTerm::Alt(_, _)) || t.children().iter().any(|c| contains_alt(c))
}

/// Apply one named axiom at a position; used for trace replay and the
/// single-step interface.
pub fn apply_axiom(
    t: &ProcessTerm,
    axiom: &str,
    path: &[usize],
    reg: &ActionRegistry,
) -> Result<ProcessTerm, RewriteError> {
    let sub = t
        .subterm_at(path)
        .ok_or_else(|| RewriteError::NoMatch(axiom.to_string()))?;
    // The A1 steps the normalizer records are directed swaps.
    if axiom == "A1" {
        if let ProcessTerm::Alt(a, b) = sub {
            return Ok(t.replace_at(path, ProcessTerm::Alt(b.clone(), a.clone())));
        }
        return Err(RewriteError::NoMatch(axiom.to_string()));
    }
    match root_rule(sub, reg)? {
        Some((id, next)) if id == axiom => Ok(t.replace_at(path, next)),
        Some((id, _)) => Err(RewriteError::SideConditionFailed(
            axiom.to_string(),
            format!("position rewrites by {id} instead"),
        )),
        None => Err(RewriteError::NoMatch(axiom.to_string())),
    }
}

/// Replay a trace from `t`; returns the final term.
pub fn replay(
    t: &ProcessTerm,
    trace: &RewriteTrace,
    reg: &ActionRegistry,
) -> Result<ProcessTerm, RewriteError> {
    let mut cur = t.clone();
    for step in trace {
        cur = apply_axiom(&cur, &step.axiom, &step.path, reg)?;
    }
    Ok(cur)
}

/// Axioms sound only up to branching equivalence (the silent-step laws).
pub fn axiom_needs_branching(id: &str) -> bool {
    matches!(id, "T1" | "TI0" | "TI1" | "TI2" | "TI4" | "PrTI")
}

/// Executable form of the soundness theorems: both sides are run to
/// configuration graphs and compared with the appropriate bisimulation.
pub fn check_soundness(
    lhs: &ProcessTerm,
    rhs: &ProcessTerm,
    reg: &ActionRegistry,
    state: &crate::quantum::QState,
    depth: u32,
    branching: bool,
) -> Result<bool, String> {
    let g1 = crate::sos::build_graph(
        &crate::sos::Configuration::new(lhs.clone(), state.clone()),
        depth,
        reg,
    )
    .map_err(|e| e.to_string())?;
    let g2 = crate::sos::build_graph(
        &crate::sos::Configuration::new(rhs.clone(), state.clone()),
        depth,
        reg,
    )
    .map_err(|e| e.to_string())?;
    if branching {
        crate::bisim::branching_bisim(&g1, &g2)
            .map(|r| r.equivalent)
            .map_err(|e| e.to_string())
    } else {
        crate::bisim::strong_bisim(&g1, &g2)
            .map(|r| r.equivalent)
            .map_err(|e| e.to_string())
    }
}

/// Leaf probabilities of the probabilistic-choice spine of a basic term.
pub fn pchoice_leaf_weights(t: &ProcessTerm) -> Vec<Rational> {
    match t {
        ProcessTerm::PChoice(a, p, b) => {
            let mut out: Vec<Rational> = pchoice_leaf_weights(a)
                .into_iter()
                .map(|w| w * p.clone())
                .collect();
            let q = one() - p.clone();
            out.extend(pchoice_leaf_weights(b).into_iter().map(|w| w * q.clone()));
            out
        }
        _ => vec![one()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse;
    use crate::prob::rat;
    use crate::quantum::{QState, Register};
    use crate::term::is_basic_term;

    fn reg() -> ActionRegistry {
        ActionRegistry::builder()
            .register(Register::public("q0"))
            .unitary(ActionName::plain("h"), crate::cmatrix::gates::hadamard(), &["q0"])
            .projection(
                ActionName::indexed("m", &[0]),
                crate::cmatrix::gates::basis_projector(1, 0),
                &["q0"],
                "m",
            )
            .projection(
                ActionName::indexed("m", &[1]),
                crate::cmatrix::gates::basis_projector(1, 1),
                &["q0"],
                "m",
            )
            .shadow(ActionName::plain("sh"), ActionName::plain("h"))
            .shadow(ActionName::indexed("sm", &[0]), ActionName::indexed("m", &[0]))
            .classical(ActionName::plain("a"))
            .classical(ActionName::plain("b"))
            .classical(ActionName::plain("c"))
            .classical(ActionName::plain("d"))
            .comm(ActionName::plain("a"), ActionName::plain("b"), ActionName::plain("c"))
            .prefer(ActionName::plain("a"), ActionName::plain("d"))
            .renaming(
                "f",
                vec![(ActionName::plain("a"), ActionName::plain("b"))],
            )
            .build()
            .unwrap()
    }

    fn norm(src: &str) -> (ProcessTerm, RewriteTrace) {
        normalize(&parse(src).unwrap(), &reg()).unwrap_or_else(|e| panic!("normalize {src}: {e}"))
    }

    #[test]
    fn right_distribution() {
        let (t, trace) = norm("(a + b) . c");
        assert_eq!(print_term(&t), "a . c + b . c");
        assert!(trace.iter().any(|s| s.axiom == "A4"));
    }

    #[test]
    fn pchoice_reassociation() {
        let (t, _) = norm("a [+1/2] (b [+1/2] c)");
        assert_eq!(print_term(&t), "a [+2/3] b [+3/4] c");
        assert_eq!(crate::parse::parse("a [+2/3] b [+3/4] c").unwrap(), t);
        // Leaf weights are conserved exactly.
        let w = pchoice_leaf_weights(&t);
        assert_eq!(w.iter().cloned().sum::<Rational>(), one());
        assert_eq!(w, vec![rat(1, 2), rat(1, 4), rat(1, 4)]);
    }

    #[test]
    fn entanglement_merge_elimination() {
        let (t, _) = norm("h >< sh");
        assert_eq!(print_term(&t), "h");
        let (t, _) = norm("sh >< h . a");
        assert_eq!(print_term(&t), "h . a");
        // Mismatch deadlocks.
        let (t, _) = norm("m[1] >< sm[0]");
        assert_eq!(print_term(&t), "delta");
    }

    #[test]
    fn parallel_expansion_reaches_basic_form() {
        let (t, _) = norm("a || b");
        assert!(is_basic_term(&t), "{}", print_term(&t));
        // a || b = a.b + b.a + c by the expansion laws.
        assert_eq!(print_term(&t), "a . b + b . a + c");
    }

    #[test]
    fn encapsulation_and_projection() {
        let (t, _) = norm("encap{b}(a . b + b . a)");
        assert_eq!(print_term(&t), "a . delta");
        let (t, _) = norm("proj[1](a . b . c)");
        assert_eq!(print_term(&t), "a");
        let (t, _) = norm("proj[2](a . b . c)");
        assert_eq!(print_term(&t), "a . b");
    }

    #[test]
    fn renaming_and_priorities() {
        let (t, _) = norm("rename[f](a . c)");
        assert_eq!(print_term(&t), "b . c");
        // a < d: theta prunes a.
        let (t, _) = norm("theta(a + d)");
        assert_eq!(print_term(&t), "d");
        let (t, _) = norm("a <| d");
        assert_eq!(print_term(&t), "delta");
        let (t, _) = norm("a <| b");
        assert_eq!(print_term(&t), "a");
    }

    #[test]
    fn abstraction_axioms() {
        let (t, _) = norm("abstr{a}(a . b)");
        assert_eq!(print_term(&t), "tau . b");
        let (t, _) = norm("abstr{a}(b . a)");
        assert_eq!(print_term(&t), "b");
        let (t, _) = norm("abstr{a}(b [+1/3] a . a)");
        assert_eq!(print_term(&t), "b [+1/3] tau");
    }

    #[test]
    fn abstraction_over_alternative_is_rejected() {
        let err = normalize(&parse("abstr{a}(b + c)").unwrap(), &reg()).unwrap_err();
        match err {
            RewriteError::Stuck { reason, .. } => {
                assert!(reason.contains("open problem"), "{reason}")
            }
            other => panic!("expected stuck, got {other}"),
        }
    }

    #[test]
    fn stuck_reports_redex() {
        // No axiom distributes <| over probabilistic choice.
        let err = normalize(&parse("(a [+1/2] b) <| c").unwrap(), &reg()).unwrap_err();
        assert!(matches!(err, RewriteError::Stuck { .. }));
    }

    #[test]
    fn traces_replay() {
        let src = "(a + b) . (c [+1/3] d) || encap{b}(a . b)";
        let t = parse(src).unwrap();
        let (out, trace) = normalize(&t, &reg()).unwrap();
        let replayed = replay(&t, &trace, &reg()).unwrap();
        assert_eq!(out, replayed);
    }

    #[test]
    fn rejects_recursion_and_open_terms() {
        let t = parse("rec X where { X = a . X; }").unwrap();
        assert!(matches!(
            normalize(&t, &reg()),
            Err(RewriteError::RecursionPresent)
        ));
    }

    #[test]
    fn normalization_is_strongly_sound() {
        let st = QState::ground(vec![Register::public("q0")]).unwrap();
        for src in [
            "(a + b) . c",
            "a || b",
            "(a [+1/4] b) || h",
            "encap{a, b}((a, a) ][ (b, b))",
            "h >< sh . b",
            "proj[2]((a + b) . c)",
        ] {
            let t = parse(src).unwrap();
            let (n, trace) = normalize(&t, &reg()).unwrap();
            assert!(is_basic_term(&n), "{src} -> {}", print_term(&n));
            assert!(
                !trace.iter().any(|s| axiom_needs_branching(&s.axiom)),
                "{src} used silent-step laws"
            );
            assert!(
                check_soundness(&t, &n, &reg(), &st, 24, false).unwrap(),
                "{src} not equivalent to {}",
                print_term(&n)
            );
        }
    }
}
