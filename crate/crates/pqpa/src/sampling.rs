//! Seeded random generation: terms, states, axiom instantiations and
//! small synthetic graphs. Everything is driven by an explicit RNG so
//! runs are reproducible from a recorded seed.

use num_complex::Complex64;
use rand::prelude::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cmatrix::{gates, CMatrix};
use crate::prob::{rat, Rational};
use crate::quantum::{QState, Register};
use crate::registry::ActionRegistry;
use crate::sos::{AEdge, ConfigGraph, GState, PEdge, StateKind};
use crate::term::{ActionName, ProcessTerm};

/// The two-qubit registry used by the randomized suites: Hadamard, X,
/// CNOT, one two-outcome measurement, four classical actions with one
/// communication, one priority pair, shadows and a renaming.
pub fn sweep_registry() -> ActionRegistry {
    ActionRegistry::builder()
        .register(Register::public("q0"))
        .register(Register::public("q1"))
        .unitary(ActionName::plain("h"), gates::hadamard(), &["q0"])
        .unitary(ActionName::plain("x"), gates::pauli_x(), &["q1"])
        .unitary(ActionName::plain("cx"), gates::cnot(), &["q0", "q1"])
        .projection(ActionName::indexed("m", &[0]), gates::basis_projector(1, 0), &["q0"], "m")
        .projection(ActionName::indexed("m", &[1]), gates::basis_projector(1, 1), &["q0"], "m")
        .shadow(ActionName::plain("sh_h"), ActionName::plain("h"))
        .shadow(ActionName::plain("sh_x"), ActionName::plain("x"))
        .shadow(ActionName::indexed("sh_m", &[0]), ActionName::indexed("m", &[0]))
        .shadow(ActionName::indexed("sh_m", &[1]), ActionName::indexed("m", &[1]))
        .classical(ActionName::plain("a"))
        .classical(ActionName::plain("b"))
        .classical(ActionName::plain("c"))
        .classical(ActionName::plain("d"))
        .comm(ActionName::plain("a"), ActionName::plain("b"), ActionName::plain("c"))
        .prefer(ActionName::plain("a"), ActionName::plain("d"))
        .renaming("f", vec![(ActionName::plain("a"), ActionName::plain("b"))])
        .build()
        .expect("sweep registry is valid")
}

fn atom_pool() -> Vec<ActionName> {
    vec![
        ActionName::plain("a"),
        ActionName::plain("b"),
        ActionName::plain("c"),
        ActionName::plain("d"),
        ActionName::plain("h"),
        ActionName::plain("x"),
        ActionName::plain("cx"),
        ActionName::indexed("m", &[0]),
        ActionName::indexed("m", &[1]),
        ActionName::plain("sh_h"),
        ActionName::indexed("sh_m", &[0]),
    ]
}

pub fn random_atom(rng: &mut ChaCha8Rng) -> ProcessTerm {
    if rng.random_ratio(1, 12) {
        return ProcessTerm::Atom(ActionName::delta());
    }
    ProcessTerm::Atom(atom_pool().choose(rng).unwrap().clone())
}

/// Proper probability with a small denominator.
pub fn random_prob(rng: &mut ChaCha8Rng) -> Rational {
    let den = rng.random_range(2..=6i64);
    let num = rng.random_range(1..den);
    rat(num, den)
}

/// Random closed term over the full parallel signature (no silent
/// step, no recursion): atoms, `.`, `+`, probabilistic choice, the
/// merges and encapsulation.
pub fn random_closed_term(rng: &mut ChaCha8Rng, depth: u32) -> ProcessTerm {
    use ProcessTerm::*;
    if depth == 0 {
        return random_atom(rng);
    }
    let d = depth - 1;
    match rng.random_range(0..14u32) {
        0 | 1 => random_atom(rng),
        2 | 3 | 4 => Seq(
            Box::new(random_closed_term(rng, d)),
            Box::new(random_closed_term(rng, d)),
        ),
        5 | 6 => Alt(
            Box::new(random_closed_term(rng, d)),
            Box::new(random_closed_term(rng, d)),
        ),
        7 | 8 => PChoice(
            Box::new(random_closed_term(rng, d)),
            random_prob(rng),
            Box::new(random_closed_term(rng, d)),
        ),
        9 => Par(
            Box::new(random_closed_term(rng, d)),
            Box::new(random_closed_term(rng, d)),
        ),
        10 => LeftMerge(
            Box::new(random_closed_term(rng, d)),
            Box::new(random_closed_term(rng, d)),
        ),
        11 => CommMerge(
            Box::new(random_closed_term(rng, d)),
            Box::new(random_closed_term(rng, d)),
        ),
        12 => EntMerge(
            Box::new(random_closed_term(rng, d)),
            Box::new(random_closed_term(rng, d)),
        ),
        _ => {
            let mut h = std::collections::BTreeSet::new();
            for name in ["a", "b", "c", "d"] {
                if rng.random_bool(0.4) {
                    h.insert(ActionName::plain(name));
                }
            }
            Encap(h, Box::new(random_closed_term(rng, d)))
        }
    }
}

/// Random term with a trivial probability distribution: atoms, guarded
/// terms and sums of those. These witness the `x = x + x` guards.
pub fn random_dclass_term(rng: &mut ChaCha8Rng, depth: u32) -> ProcessTerm {
    use ProcessTerm::*;
    if depth == 0 {
        return random_atom(rng);
    }
    let d = depth - 1;
    match rng.random_range(0..4u32) {
        0 => random_atom(rng),
        1 | 2 => {
            let a = loop {
                let a = random_atom(rng);
                if !matches!(&a, Atom(n) if n.is_delta()) {
                    break a;
                }
            };
            Seq(Box::new(a), Box::new(random_closed_term(rng, d)))
        }
        _ => Alt(
            Box::new(random_dclass_term(rng, d)),
            Box::new(random_dclass_term(rng, d)),
        ),
    }
}

/// Random density matrix: a mixture of a few random pure states.
pub fn random_density(rng: &mut ChaCha8Rng, qubits: usize) -> CMatrix {
    let dim = 1 << qubits;
    let pure = |rng: &mut ChaCha8Rng| -> Vec<Complex64> {
        let mut v: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in v.iter_mut() {
            *z /= norm;
        }
        v
    };
    let k = rng.random_range(1..=3usize);
    let mut weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    let mut rho = CMatrix::zeros(dim);
    for w in weights {
        let psi = pure(rng);
        for r in 0..dim {
            for c in 0..dim {
                rho[(r, c)] += Complex64::new(w, 0.0) * psi[r] * psi[c].conj();
            }
        }
    }
    rho
}

/// Random two-qubit state for the sweep registry's registers.
pub fn random_sweep_state(rng: &mut ChaCha8Rng) -> QState {
    QState::from_factors(vec![(
        vec![Register::public("q0"), Register::public("q1")],
        random_density(rng, 2),
    )])
    .expect("random density is a valid state")
}

// ---------------------------------------------------------------------
// Axiom instantiation for the soundness sweep.

pub struct AxiomInstance {
    pub axiom: &'static str,
    pub lhs: ProcessTerm,
    pub rhs: ProcessTerm,
    /// Sound only up to branching equivalence.
    pub branching: bool,
}

/// Axioms covered by the soundness sweep (the equational tables other
/// than the silent-step laws, which are not strongly sound).
pub fn axiom_names() -> Vec<&'static str> {
    vec![
        "A5", "PrAC1", "PrAC2", "PrAC3", "PrAC4", // sequential + probabilistic core
        "A1", "A2", "AA3", "A4", "PrAC5", // alternative composition
        "A6", "A7", // deadlock
        "PR1", "PR2", "PR3", "PR4", "prPR", // projection
        "PrMM1", "PrMM2", "PrMM3", "PrMM4", // merge with memory
        "CF", "CM2", "CM3", "CM4", "PrCM1", "CM5", "CM6", "CM7", "PrCM2", "PrCM3", // merges
        "D1", "D2", "D3", "D4", "PrD5", "PrCM4", "PrCM5", // encapsulation + guarded merges
        "EM1", "EM2", "EM3", "EM4", "EM5", "EM6", "EM7", "EM8", // entanglement merge
        "PrEM1", "PrEM2", "PrEM3", "PrEM4", // probabilistic entanglement laws
        "RN1", "RN2", "RN3", "RN4", "PrRN1", // renaming
        "TH1", "TH2", "PrTH4", "DyTH3", "P1", "P2", "P3", "P4", "P5", "P6", // priorities
    ]
}

/// Build one random instantiation of the named axiom over the sweep
/// registry's alphabet.
pub fn instantiate_axiom(axiom: &'static str, rng: &mut ChaCha8Rng) -> AxiomInstance {
    use ProcessTerm::*;
    let t = |rng: &mut ChaCha8Rng| random_closed_term(rng, 2);
    let dcl = |rng: &mut ChaCha8Rng| random_dclass_term(rng, 2);
    let p = random_prob(rng);
    let q = random_prob(rng);
    let atom = |name: &str| ProcessTerm::Atom(ActionName::plain(name));
    let any_atom = |rng: &mut ChaCha8Rng| loop {
        let a = random_atom(rng);
        if !matches!(&a, Atom(n) if n.is_delta()) {
            break a;
        }
    };
    // Quantum actions that have registered shadows.
    let shadowed: [(ActionName, ActionName); 4] = [
        (ActionName::plain("h"), ActionName::plain("sh_h")),
        (ActionName::plain("x"), ActionName::plain("sh_x")),
        (ActionName::indexed("m", &[0]), ActionName::indexed("sh_m", &[0])),
        (ActionName::indexed("m", &[1]), ActionName::indexed("sh_m", &[1])),
    ];
    let seq = ProcessTerm::seq;
    let alt = ProcessTerm::alt;
    let pch = ProcessTerm::pchoice;
    let par = ProcessTerm::par;
    let lm = |a, b| LeftMerge(Box::new(a), Box::new(b));
    let cm = |a, b| CommMerge(Box::new(a), Box::new(b));
    let em = |a, b| EntMerge(Box::new(a), Box::new(b));
    let mm = |x: ProcessTerm, z: ProcessTerm, y: ProcessTerm, w: ProcessTerm| {
        MergeMem(Box::new(x), Box::new(z), Box::new(y), Box::new(w))
    };
    let enc = |h: &[&str], x: ProcessTerm| {
        Encap(h.iter().map(|s| ActionName::plain(s)).collect(), Box::new(x))
    };
    let proj = |n: u32, x: ProcessTerm| Proj(n, Box::new(x));
    let ren = |x: ProcessTerm| Rename("f".to_string(), Box::new(x));
    let theta = |x: ProcessTerm| Priority(Box::new(x));
    let unl = |a, b| Unless(Box::new(a), Box::new(b));
    let delta = || ProcessTerm::Atom(ActionName::delta());

    let (lhs, rhs, branching) = match axiom {
        "A5" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (seq(seq(x.clone(), y.clone()), z.clone()), seq(x, seq(y, z)), false)
        }
        "PrAC1" => {
            let (x, y) = (t(rng), t(rng));
            let one_minus = crate::prob::one() - p.clone();
            (pch(x.clone(), p.clone(), y.clone()), pch(y, one_minus, x), false)
        }
        "PrAC2" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            let s = p.clone() + q.clone() - p.clone() * q.clone();
            let inner = p.clone() / s.clone();
            (
                pch(x.clone(), p.clone(), pch(y.clone(), q.clone(), z.clone())),
                pch(pch(x, inner, y), s, z),
                false,
            )
        }
        "PrAC3" => {
            let x = t(rng);
            (pch(x.clone(), p.clone(), x.clone()), x, false)
        }
        "PrAC4" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                seq(pch(x.clone(), p.clone(), y.clone()), z.clone()),
                pch(seq(x, z.clone()), p.clone(), seq(y, z)),
                false,
            )
        }
        "A1" => {
            let (x, y) = (t(rng), t(rng));
            (alt(x.clone(), y.clone()), alt(y, x), false)
        }
        "A2" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (alt(alt(x.clone(), y.clone()), z.clone()), alt(x, alt(y, z)), false)
        }
        "AA3" => {
            let a = any_atom(rng);
            (alt(a.clone(), a.clone()), a, false)
        }
        "A4" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                seq(alt(x.clone(), y.clone()), z.clone()),
                alt(seq(x, z.clone()), seq(y, z)),
                false,
            )
        }
        "PrAC5" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                alt(pch(x.clone(), p.clone(), y.clone()), z.clone()),
                pch(alt(x, z.clone()), p.clone(), alt(y, z)),
                false,
            )
        }
        "A6" => {
            let x = t(rng);
            (alt(x.clone(), delta()), x, false)
        }
        "A7" => {
            let x = t(rng);
            (seq(delta(), x), delta(), false)
        }
        "PR1" => {
            let a = any_atom(rng);
            let n = rng.random_range(1..=3u32);
            (proj(n, a.clone()), a, false)
        }
        "PR2" => {
            let (a, x) = (any_atom(rng), t(rng));
            (proj(1, seq(a.clone(), x)), a, false)
        }
        "PR3" => {
            let (a, x) = (any_atom(rng), t(rng));
            let n = rng.random_range(1..=3u32);
            (proj(n + 1, seq(a.clone(), x.clone())), seq(a, proj(n, x)), false)
        }
        "PR4" => {
            let (x, y) = (t(rng), t(rng));
            let n = rng.random_range(1..=3u32);
            (proj(n, alt(x.clone(), y.clone())), alt(proj(n, x), proj(n, y)), false)
        }
        "prPR" => {
            let (x, y) = (t(rng), t(rng));
            let n = rng.random_range(1..=3u32);
            (
                proj(n, pch(x.clone(), p.clone(), y.clone())),
                pch(proj(n, x), p.clone(), proj(n, y)),
                false,
            )
        }
        "PrMM1" => {
            let (x, y) = (t(rng), t(rng));
            (par(x.clone(), y.clone()), mm(x.clone(), x, y.clone(), y), false)
        }
        "PrMM2" => {
            let (x, x1, z, y, w) = (t(rng), t(rng), t(rng), t(rng), t(rng));
            (
                mm(pch(x.clone(), p.clone(), x1.clone()), z.clone(), y.clone(), w.clone()),
                pch(
                    mm(x, z.clone(), y.clone(), w.clone()),
                    p.clone(),
                    mm(x1, z, y, w),
                ),
                false,
            )
        }
        "PrMM3" => {
            let (x, z, y, y1, w) = (t(rng), t(rng), t(rng), t(rng), t(rng));
            (
                mm(x.clone(), z.clone(), pch(y.clone(), p.clone(), y1.clone()), w.clone()),
                pch(
                    mm(x.clone(), z.clone(), y, w.clone()),
                    p.clone(),
                    mm(x, z, y1, w),
                ),
                false,
            )
        }
        "PrMM4" => {
            let (x, y, z, w) = (dcl(rng), dcl(rng), t(rng), t(rng));
            (
                mm(x.clone(), z.clone(), y.clone(), w.clone()),
                alt(
                    alt(
                        alt(lm(x.clone(), w), lm(y.clone(), z)),
                        cm(x.clone(), y.clone()),
                    ),
                    em(x, y),
                ),
                false,
            )
        }
        "CF" => (cm(atom("a"), atom("b")), atom("c"), false),
        "CM2" => {
            let (a, x) = (any_atom(rng), t(rng));
            (lm(a.clone(), x.clone()), seq(a, x), false)
        }
        "CM3" => {
            let (a, x, y) = (any_atom(rng), t(rng), t(rng));
            (lm(seq(a.clone(), x.clone()), y.clone()), seq(a, par(x, y)), false)
        }
        "CM4" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                lm(alt(x.clone(), y.clone()), z.clone()),
                alt(lm(x, z.clone()), lm(y, z)),
                false,
            )
        }
        "PrCM1" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                lm(pch(x.clone(), p.clone(), y.clone()), z.clone()),
                pch(lm(x, z.clone()), p.clone(), lm(y, z)),
                false,
            )
        }
        "CM5" => {
            let x = t(rng);
            (
                cm(atom("a"), seq(atom("b"), x.clone())),
                seq(cm(atom("a"), atom("b")), x),
                false,
            )
        }
        "CM6" => {
            let x = t(rng);
            (
                cm(seq(atom("a"), x.clone()), atom("b")),
                seq(cm(atom("a"), atom("b")), x),
                false,
            )
        }
        "CM7" => {
            let (x, y) = (t(rng), t(rng));
            (
                cm(seq(atom("a"), x.clone()), seq(atom("b"), y.clone())),
                seq(cm(atom("a"), atom("b")), par(x, y)),
                false,
            )
        }
        "PrCM2" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                cm(pch(x.clone(), p.clone(), y.clone()), z.clone()),
                pch(cm(x, z.clone()), p.clone(), cm(y, z)),
                false,
            )
        }
        "PrCM3" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                cm(x.clone(), pch(y.clone(), p.clone(), z.clone())),
                pch(cm(x.clone(), y), p.clone(), cm(x, z)),
                false,
            )
        }
        "D1" => (enc(&["b"], atom("a")), atom("a"), false),
        "D2" => (enc(&["a"], atom("a")), delta(), false),
        "D3" => {
            let (x, y) = (t(rng), t(rng));
            (
                enc(&["a", "c"], alt(x.clone(), y.clone())),
                alt(enc(&["a", "c"], x), enc(&["a", "c"], y)),
                false,
            )
        }
        "D4" => {
            let (x, y) = (t(rng), t(rng));
            (
                enc(&["a", "c"], seq(x.clone(), y.clone())),
                seq(enc(&["a", "c"], x), enc(&["a", "c"], y)),
                false,
            )
        }
        "PrD5" => {
            let (x, y) = (t(rng), t(rng));
            (
                enc(&["a", "c"], pch(x.clone(), p.clone(), y.clone())),
                pch(enc(&["a", "c"], x), p.clone(), enc(&["a", "c"], y)),
                false,
            )
        }
        "PrCM4" => {
            let (x, y, z) = (t(rng), t(rng), dcl(rng));
            (
                cm(alt(x.clone(), y.clone()), z.clone()),
                alt(cm(x, z.clone()), cm(y, z)),
                false,
            )
        }
        "PrCM5" => {
            let (x, y, z) = (t(rng), t(rng), dcl(rng));
            (
                cm(z.clone(), alt(x.clone(), y.clone())),
                alt(cm(z.clone(), x), cm(z, y)),
                false,
            )
        }
        "EM1" | "EM2" | "EM3" | "EM4" | "EM5" | "EM6" | "EM7" | "EM8" => {
            let (alpha, shadow) = shadowed.choose(rng).unwrap().clone();
            let al = ProcessTerm::Atom(alpha);
            let sh = ProcessTerm::Atom(shadow);
            let (x, y) = (t(rng), t(rng));
            match axiom {
                "EM1" => (em(al.clone(), sh), al, false),
                "EM2" => (em(sh, al.clone()), al, false),
                "EM3" => (em(al.clone(), seq(sh, y.clone())), seq(al, y), false),
                "EM4" => (em(sh, seq(al.clone(), y.clone())), seq(al, y), false),
                "EM5" => (em(seq(al.clone(), x.clone()), sh), seq(al, x), false),
                "EM6" => (em(seq(sh, x.clone()), al.clone()), seq(al, x), false),
                "EM7" => (
                    em(seq(al.clone(), x.clone()), seq(sh, y.clone())),
                    seq(al, par(x, y)),
                    false,
                ),
                _ => (
                    em(seq(sh, x.clone()), seq(al.clone(), y.clone())),
                    seq(al, par(x, y)),
                    false,
                ),
            }
        }
        "PrEM1" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                em(pch(x.clone(), p.clone(), y.clone()), z.clone()),
                pch(em(x, z.clone()), p.clone(), em(y, z)),
                false,
            )
        }
        "PrEM2" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                em(x.clone(), pch(y.clone(), p.clone(), z.clone())),
                pch(em(x.clone(), y), p.clone(), em(x, z)),
                false,
            )
        }
        "PrEM3" => {
            let (x, y, z) = (t(rng), t(rng), dcl(rng));
            (
                em(alt(x.clone(), y.clone()), z.clone()),
                alt(em(x, z.clone()), em(y, z)),
                false,
            )
        }
        "PrEM4" => {
            let (x, y, z) = (t(rng), t(rng), dcl(rng));
            (
                em(z.clone(), alt(x.clone(), y.clone())),
                alt(em(z.clone(), x), em(z, y)),
                false,
            )
        }
        "RN1" => (ren(atom("a")), atom("b"), false),
        "RN2" => (ren(delta()), delta(), false),
        "RN3" => {
            let (x, y) = (t(rng), t(rng));
            (ren(alt(x.clone(), y.clone())), alt(ren(x), ren(y)), false)
        }
        "RN4" => {
            let (x, y) = (t(rng), t(rng));
            (ren(seq(x.clone(), y.clone())), seq(ren(x), ren(y)), false)
        }
        "PrRN1" => {
            let (x, y) = (t(rng), t(rng));
            (
                ren(pch(x.clone(), p.clone(), y.clone())),
                pch(ren(x), p.clone(), ren(y)),
                false,
            )
        }
        "TH1" => {
            let a = any_atom(rng);
            (theta(a.clone()), a, false)
        }
        "TH2" => {
            let (x, y) = (t(rng), t(rng));
            (theta(seq(x.clone(), y.clone())), seq(theta(x), theta(y)), false)
        }
        "PrTH4" => {
            let (x, y) = (t(rng), t(rng));
            (
                theta(pch(x.clone(), p.clone(), y.clone())),
                pch(theta(x), p.clone(), theta(y)),
                false,
            )
        }
        "DyTH3" => {
            let (x, y) = (dcl(rng), dcl(rng));
            (
                theta(alt(x.clone(), y.clone())),
                alt(unl(theta(x.clone()), y.clone()), unl(theta(y), x)),
                false,
            )
        }
        "P1" => {
            // Any pair outside the order; only a < d is ordered.
            let pairs = [("b", "c"), ("d", "a"), ("c", "d"), ("a", "b")];
            let (x, y) = pairs.choose(rng).unwrap();
            (unl(atom(x), atom(y)), atom(x), false)
        }
        "P2" => (unl(atom("a"), atom("d")), delta(), false),
        "P3" => {
            let (x, y, z) = (dcl(rng), t(rng), t(rng));
            (unl(x.clone(), seq(y.clone(), z)), unl(x, y), false)
        }
        "P4" => {
            let (x, y, z) = (dcl(rng), t(rng), t(rng));
            (unl(x.clone(), alt(y.clone(), z.clone())), unl(unl(x, y), z), false)
        }
        "P5" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (unl(seq(x.clone(), y.clone()), z.clone()), seq(unl(x, z), y), false)
        }
        "P6" => {
            let (x, y, z) = (t(rng), t(rng), t(rng));
            (
                unl(alt(x.clone(), y.clone()), z.clone()),
                alt(unl(x, z.clone()), unl(y, z)),
                false,
            )
        }
        other => panic!("unknown axiom {other}"),
    };
    AxiomInstance { axiom, lhs, rhs, branching }
}

// ---------------------------------------------------------------------
// Synthetic graphs for the bisimulation oracle.

/// A small random fully-built graph over one public qubit with labels
/// `a`/`b`; at most `max_prob + max_act + 2` states.
pub fn random_graph(rng: &mut ChaCha8Rng, max_prob: usize, max_act: usize) -> ConfigGraph {
    use std::sync::Arc;
    let rho_pool = [
        gates::basis_state(1, 0),
        gates::basis_state(1, 1),
        gates::plus_state(),
    ];
    let mk_state = |rng: &mut ChaCha8Rng| {
        let mat = rho_pool[rng.random_range(0..rho_pool.len())].clone();
        Arc::new(
            QState::from_factors(vec![(vec![Register::public("q0")], mat)])
                .expect("pool state"),
        )
    };
    let n_prob = rng.random_range(1..=max_prob);
    let n_act = rng.random_range(1..=max_act);
    let mut states: Vec<GState> = Vec::new();
    for i in 0..n_prob {
        states.push(GState {
            id: i,
            kind: StateKind::Prob,
            text: format!("p{i}"),
            term: None,
            full_state: mk_state(rng),
            truncated: false,
            depth: 0,
            out_p: Vec::new(),
            out_a: Vec::new(),
        });
    }
    for j in 0..n_act {
        states.push(GState {
            id: n_prob + j,
            kind: StateKind::Action,
            text: format!("n{j}"),
            term: None,
            full_state: mk_state(rng),
            truncated: false,
            depth: 0,
            out_p: Vec::new(),
            out_a: Vec::new(),
        });
    }
    let nil = states.len();
    states.push(GState {
        id: nil,
        kind: StateKind::Nil,
        text: "√".to_string(),
        term: None,
        full_state: mk_state(rng),
        truncated: false,
        depth: 0,
        out_p: Vec::new(),
        out_a: Vec::new(),
    });
    // Distributions over action states.
    let weight_menu: [&[(i64, i64)]; 4] =
        [&[(1, 1)], &[(1, 2), (1, 2)], &[(1, 3), (2, 3)], &[(1, 4), (3, 4)]];
    for i in 0..n_prob {
        let menu = weight_menu[rng.random_range(0..weight_menu.len())];
        let mut edges = Vec::new();
        for (num, den) in menu {
            edges.push(PEdge {
                to: n_prob + rng.random_range(0..n_act),
                weight: rat(*num, *den),
                declared: rat(*num, *den),
            });
        }
        // Merge duplicate targets so weights stay a distribution.
        let mut merged: std::collections::BTreeMap<usize, Rational> = Default::default();
        for e in edges {
            *merged.entry(e.to).or_insert_with(crate::prob::zero) += e.weight;
        }
        states[i].out_p = merged
            .into_iter()
            .map(|(to, w)| PEdge { to, weight: w.clone(), declared: w })
            .collect();
    }
    // Labeled transitions to probabilistic states or termination.
    for j in 0..n_act {
        let k = rng.random_range(0..=2usize);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..k {
            let label = if rng.random_bool(0.5) { "a" } else { "b" };
            if !seen.insert(label) {
                continue;
            }
            let to = if rng.random_bool(0.3) { nil } else { rng.random_range(0..n_prob) };
            states[n_prob + j].out_a.push(AEdge {
                to,
                label: ActionName::plain(label),
                entangled: false,
            });
        }
    }
    ConfigGraph {
        states,
        root: 0,
        depth_bound: 1,
        registry_fp: 0,
        pruned: Vec::new(),
        diagnostics: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn generators_are_deterministic() {
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(random_closed_term(&mut r1, 4), random_closed_term(&mut r2, 4));
    }

    #[test]
    fn dclass_terms_are_basic_plus_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = random_dclass_term(&mut rng, 3);
            // D-shaped terms resolve to exactly one successor.
            let reg = sweep_registry();
            let st = QState::ground(vec![
                Register::public("q0"),
                Register::public("q1"),
            ])
            .unwrap();
            let d = crate::sos::prob_step(&crate::sos::Configuration::new(t, st), &reg).unwrap();
            assert_eq!(d.len(), 1);
            assert_eq!(d[0].1, crate::prob::one());
        }
    }

    #[test]
    fn random_densities_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let rho = random_density(&mut rng, 2);
            assert!((rho.trace().re - 1.0).abs() < 1e-9);
            assert!(rho.is_hermitian(1e-9));
            assert!(rho.is_psd(1e-9));
        }
    }

    #[test]
    fn synthetic_graphs_have_valid_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let g = random_graph(&mut rng, 3, 3);
            g.check_mu_sums().unwrap();
        }
    }
}
