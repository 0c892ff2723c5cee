//! Process terms and their structural operations.
//!
//! Terms are immutable values. The dynamic (breve) counterpart of an
//! atom is `DynAtom`; it is produced only by the operational semantics
//! and rejected by the parser.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::prob::{fmt_rational, Rational};

/// Name of an atomic action, possibly indexed (`send_P[2]`, `M[0,1]`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionName {
    pub name: String,
    pub indices: Vec<i64>,
}

impl ActionName {
    pub fn plain(name: &str) -> Self {
        ActionName { name: name.to_string(), indices: Vec::new() }
    }

    pub fn indexed(name: &str, indices: &[i64]) -> Self {
        ActionName { name: name.to_string(), indices: indices.to_vec() }
    }

    pub fn tau() -> Self {
        ActionName::plain("tau")
    }

    pub fn delta() -> Self {
        ActionName::plain("delta")
    }

    pub fn is_tau(&self) -> bool {
        self.name == "tau" && self.indices.is_empty()
    }

    pub fn is_delta(&self) -> bool {
        self.name == "delta" && self.indices.is_empty()
    }
}

impl fmt::Display for ActionName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        if !self.indices.is_empty() {
            let parts: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
            write!(f, "[{}]", parts.join(","))?;
        }
        Ok(())
    }
}

/// A guarded recursive specification: variable names to bodies.
pub type RecEnv = Arc<BTreeMap<String, ProcessTerm>>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ProcessTerm {
    Atom(ActionName),
    /// Breve-marked atom; engine-internal.
    DynAtom(ActionName),
    Seq(Box<ProcessTerm>, Box<ProcessTerm>),
    Alt(Box<ProcessTerm>, Box<ProcessTerm>),
    PChoice(Box<ProcessTerm>, Rational, Box<ProcessTerm>),
    Par(Box<ProcessTerm>, Box<ProcessTerm>),
    /// `(x, z) ][ (y, w)` — merge with memory.
    MergeMem(Box<ProcessTerm>, Box<ProcessTerm>, Box<ProcessTerm>, Box<ProcessTerm>),
    LeftMerge(Box<ProcessTerm>, Box<ProcessTerm>),
    CommMerge(Box<ProcessTerm>, Box<ProcessTerm>),
    EntMerge(Box<ProcessTerm>, Box<ProcessTerm>),
    Encap(BTreeSet<ActionName>, Box<ProcessTerm>),
    Abstr(BTreeSet<ActionName>, Box<ProcessTerm>),
    Proj(u32, Box<ProcessTerm>),
    /// Renaming by a named map resolved through the registry.
    Rename(String, Box<ProcessTerm>),
    Priority(Box<ProcessTerm>),
    Unless(Box<ProcessTerm>, Box<ProcessTerm>),
    RecVar(String),
    RecSpec(String, RecEnv),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("unbound recursion variable {0}")]
    UnboundVariable(String),
    #[error("unguarded recursion variable {0}")]
    UnguardedRecursion(String),
    #[error("probability {0} outside the open interval (0,1)")]
    BadProbability(String),
}

use ProcessTerm::*;

impl ProcessTerm {
    pub fn atom(name: &str) -> Self {
        Atom(ActionName::plain(name))
    }

    pub fn seq(a: ProcessTerm, b: ProcessTerm) -> Self {
        Seq(Box::new(a), Box::new(b))
    }

    pub fn alt(a: ProcessTerm, b: ProcessTerm) -> Self {
        Alt(Box::new(a), Box::new(b))
    }

    pub fn pchoice(a: ProcessTerm, p: Rational, b: ProcessTerm) -> Self {
        PChoice(Box::new(a), p, Box::new(b))
    }

    pub fn par(a: ProcessTerm, b: ProcessTerm) -> Self {
        Par(Box::new(a), Box::new(b))
    }

    /// Children in a fixed order; used by path-addressed rewriting.
    pub fn children(&self) -> Vec<&ProcessTerm> {
        match self {
            Atom(_) | DynAtom(_) | RecVar(_) | RecSpec(_, _) => vec![],
            Seq(a, b) | Alt(a, b) | PChoice(a, _, b) | Par(a, b) | LeftMerge(a, b)
            | CommMerge(a, b) | EntMerge(a, b) | Unless(a, b) => vec![a, b],
            MergeMem(x, z, y, w) => vec![x, z, y, w],
            Encap(_, t) | Abstr(_, t) | Proj(_, t) | Rename(_, t) | Priority(t) => vec![t],
        }
    }

    pub fn with_child(&self, idx: usize, new: ProcessTerm) -> ProcessTerm {
        let mut t = self.clone();
        {
            let slot: &mut ProcessTerm = match (&mut t, idx) {
                (Seq(a, _), 0)
                | (Alt(a, _), 0)
                | (PChoice(a, _, _), 0)
                | (Par(a, _), 0)
                | (LeftMerge(a, _), 0)
                | (CommMerge(a, _), 0)
                | (EntMerge(a, _), 0)
                | (Unless(a, _), 0) => a,
                (Seq(_, b), 1)
                | (Alt(_, b), 1)
                | (PChoice(_, _, b), 1)
                | (Par(_, b), 1)
                | (LeftMerge(_, b), 1)
                | (CommMerge(_, b), 1)
                | (EntMerge(_, b), 1)
                | (Unless(_, b), 1) => b,
                (MergeMem(x, _, _, _), 0) => x,
                (MergeMem(_, z, _, _), 1) => z,
                (MergeMem(_, _, y, _), 2) => y,
                (MergeMem(_, _, _, w), 3) => w,
                (Encap(_, t), 0) | (Abstr(_, t), 0) | (Proj(_, t), 0) | (Rename(_, t), 0)
                | (Priority(t), 0) => t,
                _ => panic!("with_child: no child {idx} on {self:?}"),
            };
            *slot = new;
        }
        t
    }

    pub fn subterm_at(&self, path: &[usize]) -> Option<&ProcessTerm> {
        let mut cur = self;
        for &i in path {
            cur = *cur.children().get(i)?;
        }
        Some(cur)
    }

    pub fn replace_at(&self, path: &[usize], new: ProcessTerm) -> ProcessTerm {
        if path.is_empty() {
            return new;
        }
        let child = self.children()[path[0]].replace_at(&path[1..], new);
        self.with_child(path[0], child)
    }

    /// Free recursion variables (names not bound by an enclosing spec).
    pub fn free_vars(&self) -> BTreeSet<String> {
        fn walk(t: &ProcessTerm, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
            match t {
                RecVar(x) => {
                    if !bound.iter().any(|b| b == x) {
                        out.insert(x.clone());
                    }
                }
                RecSpec(x, env) => {
                    if !env.contains_key(x) {
                        out.insert(x.clone());
                    }
                    let n = env.len();
                    for name in env.keys() {
                        bound.push(name.clone());
                    }
                    for body in env.values() {
                        walk(body, bound, out);
                    }
                    bound.truncate(bound.len() - n);
                }
                _ => {
                    for c in t.children() {
                        walk(c, bound, out);
                    }
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    pub fn contains_recursion(&self) -> bool {
        match self {
            RecVar(_) | RecSpec(_, _) => true,
            _ => self.children().iter().any(|c| c.contains_recursion()),
        }
    }

    pub fn contains_dynamic(&self) -> bool {
        match self {
            DynAtom(_) => true,
            RecSpec(_, env) => env.values().any(|b| b.contains_dynamic()),
            _ => self.children().iter().any(|c| c.contains_dynamic()),
        }
    }

    /// All action names mentioned in the term (not in operator sets).
    pub fn action_names(&self) -> BTreeSet<ActionName> {
        let mut out = BTreeSet::new();
        fn walk(t: &ProcessTerm, out: &mut BTreeSet<ActionName>) {
            match t {
                Atom(a) | DynAtom(a) => {
                    out.insert(a.clone());
                }
                RecSpec(_, env) => {
                    for b in env.values() {
                        walk(b, out);
                    }
                }
                _ => {
                    for c in t.children() {
                        walk(c, out);
                    }
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

/// One-step unfolding of `<X|E>`: the body of `X` with every variable
/// bound by `E` replaced by its own `<Y|E>`.
pub fn unfold(var: &str, env: &RecEnv) -> Result<ProcessTerm, TermError> {
    let body = env
        .get(var)
        .ok_or_else(|| TermError::UnboundVariable(var.to_string()))?;
    fn subst(t: &ProcessTerm, env: &RecEnv) -> ProcessTerm {
        match t {
            RecVar(y) => {
                if env.contains_key(y) {
                    RecSpec(y.clone(), Arc::clone(env))
                } else {
                    t.clone()
                }
            }
            // An inner spec with its own bindings shadows ours for the
            // variables it binds; bodies of the inner spec are left alone.
            RecSpec(_, _) => t.clone(),
            _ => {
                let mut out = t.clone();
                for (i, c) in t.children().iter().enumerate() {
                    out = out.with_child(i, subst(c, env));
                }
                out
            }
        }
    }
    Ok(subst(body, env))
}

/// True when every path of `t` performs an atom before exposing a
/// recursion variable (conservative, exact on linear specifications).
fn must_initiate(t: &ProcessTerm) -> bool {
    match t {
        Atom(_) | DynAtom(_) => true,
        RecVar(_) => false,
        RecSpec(x, env) => env.get(x).map(must_initiate).unwrap_or(false),
        Seq(a, _) | LeftMerge(a, _) | Unless(a, _) => must_initiate(a),
        Alt(a, b) | PChoice(a, _, b) | Par(a, b) | CommMerge(a, b) | EntMerge(a, b) => {
            must_initiate(a) && must_initiate(b)
        }
        MergeMem(x, _, y, _) => must_initiate(x) && must_initiate(y),
        Encap(_, t) | Abstr(_, t) | Proj(_, t) | Rename(_, t) | Priority(t) => must_initiate(t),
    }
}

/// Check guardedness of every body of a recursive specification.
pub fn check_guarded(env: &RecEnv) -> Result<(), TermError> {
    fn walk(t: &ProcessTerm, guarded: bool) -> Result<(), TermError> {
        match t {
            RecVar(x) => {
                if guarded {
                    Ok(())
                } else {
                    Err(TermError::UnguardedRecursion(x.clone()))
                }
            }
            RecSpec(_, env) => {
                for body in env.values() {
                    walk(body, false)?;
                }
                Ok(())
            }
            Seq(a, b) => {
                walk(a, guarded)?;
                walk(b, guarded || must_initiate(a))
            }
            _ => {
                for c in t.children() {
                    walk(c, guarded)?;
                }
                Ok(())
            }
        }
    }
    for body in env.values() {
        walk(body, false)?;
    }
    Ok(())
}

/// Membership in the basic-term set: atoms, `a . t`, sums of those, and
/// probabilistic combinations at the outermost layer.
pub fn is_basic_term(t: &ProcessTerm) -> bool {
    match t {
        PChoice(a, _, b) => is_basic_term(a) && is_basic_term(b),
        _ => is_basic_plus(t),
    }
}

/// The intermediate layer of the basic-term definition: terms with a
/// trivial probability distribution.
pub fn is_basic_plus(t: &ProcessTerm) -> bool {
    match t {
        Atom(_) => true,
        Seq(a, b) => matches!(a.as_ref(), Atom(n) if !n.is_delta()) && is_basic_term(b),
        Alt(a, b) => is_basic_plus(a) && is_basic_plus(b),
        _ => false,
    }
}

// ---------------------------------------------------------------------
// Canonical printing.

/// Binding strength; larger binds tighter.
fn level(t: &ProcessTerm) -> u8 {
    match t {
        Atom(_) | DynAtom(_) | RecVar(_) | RecSpec(_, _) | Encap(_, _) | Abstr(_, _)
        | Proj(_, _) | Rename(_, _) | Priority(_) => 10,
        Seq(_, _) => 9,
        Unless(_, _) => 8,
        CommMerge(_, _) => 7,
        EntMerge(_, _) => 6,
        LeftMerge(_, _) => 5,
        Par(_, _) => 4,
        MergeMem(_, _, _, _) => 3,
        Alt(_, _) => 2,
        PChoice(_, _, _) => 1,
    }
}

impl fmt::Display for ProcessTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", print_term(self))
    }
}

pub fn print_term(t: &ProcessTerm) -> String {
    // `assoc_right`: whether nesting the same operator on the right side
    // needs no parentheses.
    fn bin(op: &str, l: &ProcessTerm, r: &ProcessTerm, lvl: u8, assoc_right: bool) -> String {
        let ls = child(l, lvl, !assoc_right);
        let rs = child(r, lvl, assoc_right);
        format!("{ls} {op} {rs}")
    }
    fn child(c: &ProcessTerm, parent_lvl: u8, same_ok: bool) -> String {
        let cl = level(c);
        let s = print_term(c);
        if cl < parent_lvl || (cl == parent_lvl && !same_ok) {
            format!("({s})")
        } else {
            s
        }
    }
    fn names(set: &BTreeSet<ActionName>) -> String {
        let parts: Vec<String> = set.iter().map(|a| a.to_string()).collect();
        parts.join(", ")
    }
    match t {
        Atom(a) => {
            if a.is_tau() {
                "tau".to_string()
            } else if a.is_delta() {
                "delta".to_string()
            } else {
                a.to_string()
            }
        }
        DynAtom(a) => format!("~{a}"),
        Seq(a, b) => bin(".", a, b, 9, true),
        Unless(a, b) => bin("<|", a, b, 8, false),
        CommMerge(a, b) => bin("|", a, b, 7, false),
        EntMerge(a, b) => bin("><", a, b, 6, false),
        LeftMerge(a, b) => bin("|_", a, b, 5, false),
        Par(a, b) => bin("||", a, b, 4, false),
        MergeMem(x, z, y, w) => format!(
            "({}, {}) ][ ({}, {})",
            print_term(x),
            print_term(z),
            print_term(y),
            print_term(w)
        ),
        Alt(a, b) => bin("+", a, b, 2, true),
        PChoice(a, p, b) => {
            let op = format!("[+{}]", fmt_rational(p));
            let ls = child(a, 1, true);
            let rs = child(b, 1, false);
            format!("{ls} {op} {rs}")
        }
        Encap(h, t) => format!("encap{{{}}}({})", names(h), print_term(t)),
        Abstr(i, t) => format!("abstr{{{}}}({})", names(i), print_term(t)),
        Proj(n, t) => format!("proj[{n}]({})", print_term(t)),
        Rename(fname, t) => format!("rename[{fname}]({})", print_term(t)),
        Priority(t) => format!("theta({})", print_term(t)),
        RecVar(x) => x.clone(),
        RecSpec(x, env) => {
            let mut body = String::new();
            for (name, t) in env.iter() {
                body.push_str(&format!("{name} = {}; ", print_term(t)));
            }
            format!("rec {x} where {{ {body}}}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::rat;

    #[test]
    fn precedence_in_printing() {
        let t = ProcessTerm::alt(
            ProcessTerm::seq(ProcessTerm::atom("a"), ProcessTerm::atom("b")),
            ProcessTerm::atom("c"),
        );
        assert_eq!(print_term(&t), "a . b + c");
        let t2 = ProcessTerm::seq(
            ProcessTerm::alt(ProcessTerm::atom("a"), ProcessTerm::atom("b")),
            ProcessTerm::atom("c"),
        );
        assert_eq!(print_term(&t2), "(a + b) . c");
    }

    #[test]
    fn pchoice_prints_exact_fraction() {
        let t = ProcessTerm::pchoice(ProcessTerm::atom("a"), rat(2, 6), ProcessTerm::atom("b"));
        assert_eq!(print_term(&t), "a [+1/3] b");
    }

    #[test]
    fn basic_terms_follow_the_layered_definition() {
        let a = ProcessTerm::atom("a");
        let b = ProcessTerm::atom("b");
        assert!(is_basic_term(&ProcessTerm::atom("delta")));
        assert!(is_basic_term(&ProcessTerm::seq(a.clone(), b.clone())));
        assert!(!is_basic_term(&ProcessTerm::par(a.clone(), b.clone())));
        // delta is not allowed as a sequential guard.
        assert!(!is_basic_term(&ProcessTerm::seq(
            ProcessTerm::atom("delta"),
            b.clone()
        )));
        // Probabilistic layer may not sit under `+`.
        let p = ProcessTerm::pchoice(a.clone(), rat(1, 2), b.clone());
        assert!(is_basic_term(&p));
        assert!(!is_basic_term(&ProcessTerm::alt(p.clone(), a.clone())));
        assert!(is_basic_term(&ProcessTerm::seq(a, p)));
    }

    #[test]
    fn unfold_substitutes_spec() {
        let mut env = BTreeMap::new();
        env.insert(
            "X".to_string(),
            ProcessTerm::seq(ProcessTerm::atom("a"), RecVar("Y".to_string())),
        );
        env.insert(
            "Y".to_string(),
            ProcessTerm::seq(ProcessTerm::atom("b"), RecVar("X".to_string())),
        );
        let env: RecEnv = Arc::new(env);
        let t = unfold("X", &env).unwrap();
        match t {
            Seq(a, rest) => {
                assert_eq!(*a, ProcessTerm::atom("a"));
                assert!(matches!(*rest, RecSpec(ref y, _) if y == "Y"));
            }
            other => panic!("unexpected unfolding {other:?}"),
        }
        assert_eq!(
            unfold("Z", &env),
            Err(TermError::UnboundVariable("Z".to_string()))
        );
    }

    #[test]
    fn guardedness() {
        let mut env = BTreeMap::new();
        env.insert(
            "X".to_string(),
            ProcessTerm::seq(ProcessTerm::atom("a"), RecVar("X".to_string())),
        );
        assert!(check_guarded(&Arc::new(env)).is_ok());

        let mut bad = BTreeMap::new();
        bad.insert(
            "X".to_string(),
            ProcessTerm::alt(RecVar("X".to_string()), ProcessTerm::atom("a")),
        );
        assert_eq!(
            check_guarded(&Arc::new(bad)),
            Err(TermError::UnguardedRecursion("X".to_string()))
        );
    }
}
