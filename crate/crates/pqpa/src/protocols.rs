//! Executable models of the teleportation, BB84 and E91 protocols and
//! their external-behaviour verification.
//!
//! Each model pairs the system term `abstr{I}(encap{H}(...))` with the
//! one-round receive/send specification loop, a registry carrying the
//! quantum effects and communication function, and the initial state.
//! Receivers and entanglement partners are passive alternative
//! compositions resolved by synchronization; measurement-driven choices
//! are probabilistic compositions with the declared weights.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::bisim::{branching_bisim, BisimError, BranchingResult};
use crate::cmatrix::{gates, CMatrix};
use crate::prob::{one, rat, Rational};
use crate::quantum::{state_eq, QState, Register};
use crate::registry::{ActionRegistry, RegistryError};
use crate::sos::{build_graph, enumerate_paths, Configuration, PathLeaf, SosError};
use crate::term::{ActionName, ProcessTerm, RecEnv};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("invalid input state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Bisim(#[from] BisimError),
    #[error("{0}")]
    Check(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProtocolName {
    Teleport,
    Bb84,
    E91,
}

/// A deliberately seeded fault, used by the mutation-sensitivity checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Teleportation: one Pauli correction is skipped.
    DropPauliCorrection,
    /// BB84: the basis-conditioned preparation is inverted.
    FlipBasisConditioning,
    /// E91: a party shadows the wrong measurement family.
    WrongShadowPairing,
    /// E91: the shadow partner offers one fixed, possibly mismatched index.
    MismatchedShadowIndex,
}

#[derive(Clone)]
pub struct ProtocolModel {
    pub name: ProtocolName,
    pub n: usize,
    /// `abstr{I}(encap{H}(parties))`.
    pub system: ProcessTerm,
    /// The same composition without abstraction; labels stay visible
    /// for path-level checks.
    pub visible_system: ProcessTerm,
    /// Visible one-round surface for path checks; for teleportation the
    /// source is one-shot so the next round's re-preparation cannot
    /// interleave with the round under scrutiny.
    pub probe_system: ProcessTerm,
    /// One-round external loop `receive_A . send_B . loop`.
    pub spec_term: ProcessTerm,
    pub registry: ActionRegistry,
    pub initial: QState,
    pub h_set: BTreeSet<ActionName>,
    pub i_set: BTreeSet<ActionName>,
    pub recommended_depth: u32,
}

fn atom(name: &str) -> ProcessTerm {
    ProcessTerm::Atom(ActionName::plain(name))
}

fn iatom(name: &str, i: i64) -> ProcessTerm {
    ProcessTerm::Atom(ActionName::indexed(name, &[i]))
}

fn seq_chain(parts: Vec<ProcessTerm>) -> ProcessTerm {
    let mut it = parts.into_iter().rev();
    let mut acc = it.next().expect("nonempty chain");
    for p in it {
        acc = ProcessTerm::seq(p, acc);
    }
    acc
}

/// Uniform probabilistic choice as a left comb with exact weights.
fn uniform_pchoice(parts: Vec<ProcessTerm>) -> ProcessTerm {
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("nonempty choice");
    for (j, p) in it.enumerate() {
        let k = (j + 2) as i64;
        acc = ProcessTerm::pchoice(acc, rat(k - 1, k), p);
    }
    acc
}

/// Passive choice resolved by the environment or a synchronization.
fn passive_sum(parts: Vec<ProcessTerm>) -> ProcessTerm {
    let mut it = parts.into_iter().rev();
    let mut acc = it.next().expect("nonempty sum");
    for p in it {
        acc = ProcessTerm::alt(p, acc);
    }
    acc
}

fn rec(start: &str, bindings: Vec<(String, ProcessTerm)>) -> ProcessTerm {
    let env: RecEnv = Arc::new(bindings.into_iter().collect::<BTreeMap<_, _>>());
    ProcessTerm::RecSpec(start.to_string(), env)
}

fn names(list: &[ActionName]) -> BTreeSet<ActionName> {
    list.iter().cloned().collect()
}

/// Embed `u` acting on the listed qubit positions into `total` qubits
/// (position 0 is the most significant bit).
fn embed_gate(u: &CMatrix, total: usize, positions: &[usize]) -> CMatrix {
    let dim = 1 << total;
    let tk = positions.len();
    assert_eq!(u.dim, 1 << tk);
    let sub = |x: usize| -> usize {
        let mut s = 0;
        for (i, &p) in positions.iter().enumerate() {
            let bit = (x >> (total - 1 - p)) & 1;
            s |= bit << (tk - 1 - i);
        }
        s
    };
    let rest_mask: usize = {
        let mut m = dim - 1;
        for &p in positions {
            m &= !(1 << (total - 1 - p));
        }
        m
    };
    let mut out = CMatrix::zeros(dim);
    for r in 0..dim {
        for c in 0..dim {
            if (r & rest_mask) == (c & rest_mask) {
                out[(r, c)] = u[(sub(r), sub(c))];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------
// Teleportation.

/// Pauli correction for measurement outcome `2a + b`: `Z^a X^b`.
fn pauli_correction(i: usize) -> CMatrix {
    let a = (i >> 1) & 1;
    let b = i & 1;
    let mut m = CMatrix::identity(2);
    if b == 1 {
        m = gates::pauli_x().mul(&m);
    }
    if a == 1 {
        m = gates::pauli_z().mul(&m);
    }
    m
}

fn teleport_registry(fault: Option<Fault>) -> Result<ActionRegistry, ProtocolError> {
    // EPR preparation: H on the first pair half, then CNOT onto the
    // second. Runs between rounds; the first round starts with the
    // pair already shared.
    let prep_h = embed_gate(&gates::cnot(), 2, &[0, 1])
        .mul(&embed_gate(&gates::hadamard(), 2, &[0]));
    let mut b = ActionRegistry::builder()
        .register(Register::internal("m"))
        .register(Register::internal("p1"))
        .register(Register::internal("p2"))
        .unitary(ActionName::plain("prep_set"), CMatrix::identity(4), &["p1", "p2"])
        .unitary(ActionName::plain("prep_h"), prep_h, &["p1", "p2"])
        .unitary(ActionName::plain("cnot"), gates::cnot(), &["m", "p1"])
        .unitary(ActionName::plain("h"), gates::hadamard(), &["m"])
        .classical(ActionName::indexed("receive_A", &[0]))
        .classical(ActionName::indexed("send_B", &[0]))
        .classical(ActionName::plain("send_QA"))
        .classical(ActionName::plain("receive_QA"))
        .classical(ActionName::plain("c_QA"))
        .classical(ActionName::plain("send_QB"))
        .classical(ActionName::plain("receive_QB"))
        .classical(ActionName::plain("c_QB"))
        .comm(
            ActionName::plain("send_QA"),
            ActionName::plain("receive_QA"),
            ActionName::plain("c_QA"),
        )
        .comm(
            ActionName::plain("send_QB"),
            ActionName::plain("receive_QB"),
            ActionName::plain("c_QB"),
        );
    for i in 0..4i64 {
        b = b
            .projection(
                ActionName::indexed("M", &[i]),
                gates::basis_projector(2, i as usize),
                &["m", "p1"],
                "M",
            )
            .unitary(ActionName::indexed("sigma", &[i]), pauli_correction(i as usize), &["p2"])
            .classical(ActionName::indexed("send_P", &[i]))
            .classical(ActionName::indexed("receive_P", &[i]))
            .classical(ActionName::indexed("c_P", &[i]))
            .comm(
                ActionName::indexed("send_P", &[i]),
                ActionName::indexed("receive_P", &[i]),
                ActionName::indexed("c_P", &[i]),
            );
    }
    let _ = fault;
    Ok(b.build()?)
}

/// Teleportation of a one-qubit state through a shared entangled pair.
pub fn build_teleport(input: &CMatrix) -> Result<ProtocolModel, ProtocolError> {
    build_teleport_with(input, None)
}

pub fn build_teleport_with(
    input: &CMatrix,
    fault: Option<Fault>,
) -> Result<ProtocolModel, ProtocolError> {
    if input.dim != 2 {
        return Err(ProtocolError::InvalidState("input must be one qubit".to_string()));
    }
    if (input.trace().re - 1.0).abs() > 1e-9
        || input.trace().im.abs() > 1e-9
        || !input.is_hermitian(1e-9)
        || !input.is_psd(1e-9)
    {
        return Err(ProtocolError::InvalidState(
            "input is not a density matrix".to_string(),
        ));
    }
    let registry = teleport_registry(fault)?;

    // Alice: receive input, receive the pair half, transform, measure,
    // announce the outcome.
    let alice = teleport_alice();
    let bob = teleport_bob(fault);
    teleport_model(input, fault, registry, alice, bob)
}

fn teleport_alice() -> ProcessTerm {
    rec(
        "A",
        vec![
            ("A".into(), seq_chain(vec![iatom("receive_A", 0), ProcessTerm::RecVar("A1".into())])),
            ("A1".into(), seq_chain(vec![atom("receive_QA"), ProcessTerm::RecVar("A2".into())])),
            ("A2".into(), seq_chain(vec![atom("cnot"), ProcessTerm::RecVar("A3".into())])),
            ("A3".into(), seq_chain(vec![atom("h"), ProcessTerm::RecVar("A4".into())])),
            (
                "A4".into(),
                ProcessTerm::seq(
                    uniform_pchoice(
                        (0..4)
                            .map(|i| ProcessTerm::seq(iatom("M", i), iatom("send_P", i)))
                            .collect(),
                    ),
                    ProcessTerm::RecVar("A".into()),
                ),
            ),
        ],
    )
}

/// Bob: receive the pair half, then apply the announced correction.
fn teleport_bob(fault: Option<Fault>) -> ProcessTerm {
    let correction = |i: i64| -> ProcessTerm {
        if fault == Some(Fault::DropPauliCorrection) && i == 1 {
            iatom("receive_P", i)
        } else {
            ProcessTerm::seq(iatom("receive_P", i), iatom("sigma", i))
        }
    };
    rec(
        "B",
        vec![
            ("B".into(), seq_chain(vec![atom("receive_QB"), ProcessTerm::RecVar("B1".into())])),
            (
                "B1".into(),
                ProcessTerm::seq(
                    passive_sum((0..4).map(correction).collect()),
                    ProcessTerm::RecVar("B2".into()),
                ),
            ),
            ("B2".into(), seq_chain(vec![iatom("send_B", 0), ProcessTerm::RecVar("B".into())])),
        ],
    )
}

fn teleport_model(
    input: &CMatrix,
    fault: Option<Fault>,
    registry: ActionRegistry,
    alice: ProcessTerm,
    bob: ProcessTerm,
) -> Result<ProtocolModel, ProtocolError> {
    let _ = fault;
    // The source distributes the pair; it re-prepares between rounds,
    // so it enters the loop at the send stage (the first pair is part
    // of the initial state).
    let source = rec(
        "E2",
        vec![
            ("E0".into(), seq_chain(vec![atom("prep_set"), ProcessTerm::RecVar("E1".into())])),
            ("E1".into(), seq_chain(vec![atom("prep_h"), ProcessTerm::RecVar("E2".into())])),
            ("E2".into(), seq_chain(vec![atom("send_QA"), ProcessTerm::RecVar("E3".into())])),
            ("E3".into(), seq_chain(vec![atom("send_QB"), ProcessTerm::RecVar("E0".into())])),
        ],
    );

    let mut h = vec![
        ActionName::plain("send_QA"),
        ActionName::plain("receive_QA"),
        ActionName::plain("send_QB"),
        ActionName::plain("receive_QB"),
    ];
    let mut i_set = vec![
        ActionName::plain("prep_set"),
        ActionName::plain("prep_h"),
        ActionName::plain("cnot"),
        ActionName::plain("h"),
        ActionName::plain("c_QA"),
        ActionName::plain("c_QB"),
    ];
    for i in 0..4 {
        h.push(ActionName::indexed("send_P", &[i]));
        h.push(ActionName::indexed("receive_P", &[i]));
        i_set.push(ActionName::indexed("M", &[i]));
        i_set.push(ActionName::indexed("sigma", &[i]));
        i_set.push(ActionName::indexed("c_P", &[i]));
    }
    let parties = ProcessTerm::par(ProcessTerm::par(alice.clone(), bob.clone()), source);
    let visible_system = ProcessTerm::Encap(names(&h), Box::new(parties));
    let system = ProcessTerm::Abstr(names(&i_set), Box::new(visible_system.clone()));
    let probe_system = ProcessTerm::Encap(
        names(&h),
        Box::new(ProcessTerm::par(
            ProcessTerm::par(alice, bob),
            seq_chain(vec![atom("send_QA"), atom("send_QB")]),
        )),
    );
    let spec_term = rec(
        "Z",
        vec![(
            "Z".into(),
            seq_chain(vec![iatom("receive_A", 0), iatom("send_B", 0), ProcessTerm::RecVar("Z".into())]),
        )],
    );
    let initial = QState::from_factors(vec![
        (vec![Register::internal("m")], input.clone()),
        (
            vec![Register::internal("p1"), Register::internal("p2")],
            gates::bell_state(),
        ),
    ])
    .map_err(|e| ProtocolError::InvalidState(e.to_string()))?;
    Ok(ProtocolModel {
        name: ProtocolName::Teleport,
        n: 1,
        system,
        visible_system,
        probe_system,
        spec_term,
        registry,
        initial,
        h_set: names(&h),
        i_set: names(&i_set),
        recommended_depth: 16,
    })
}

/// Bob's register after each completed correction, with path weights.
///
/// The walk uses a one-shot source: the looping source re-prepares the
/// pair registers for the next round, and that re-preparation may
/// interleave with the current round's tail. The output is Bob's
/// register at the moment his correction lands, so the next round must
/// not have started.
pub fn teleport_outputs(m: &ProtocolModel) -> Result<Vec<(Rational, QState)>, ProtocolError> {
    let cfg = Configuration::new(m.probe_system.clone(), m.initial.clone());
    let stop = |l: &ActionName| l.name == "sigma" || l.name == "receive_P";
    let leaves = enumerate_paths(&cfg, &m.registry, &stop, 24)?;
    let mut out = Vec::new();
    for leaf in leaves {
        if !leaf.completed {
            return Err(ProtocolError::Check(format!(
                "a path deadlocked before the correction: {:?}",
                leaf.labels.iter().map(|l| l.to_string()).collect::<Vec<_>>()
            )));
        }
        let bob = leaf
            .state
            .reduced(&["p2"])
            .map_err(|e| ProtocolError::Check(e.to_string()))?;
        out.push((leaf.weight, bob));
    }
    Ok(out)
}

/// Every terminal branch must leave Bob's register equal to the input.
pub fn check_teleport_fidelity(m: &ProtocolModel, input: &CMatrix) -> Result<(), ProtocolError> {
    let want = QState::from_factors(vec![(vec![Register::internal("p2")], input.clone())])
        .map_err(|e| ProtocolError::InvalidState(e.to_string()))?;
    let outputs = teleport_outputs(m)?;
    if outputs.is_empty() {
        return Err(ProtocolError::Check("no terminal branches".to_string()));
    }
    for (w, bob) in outputs {
        let same = state_eq(&bob, &want, 1e-9).map_err(|e| ProtocolError::Check(e.to_string()))?;
        if !same {
            return Err(ProtocolError::Check(format!(
                "branch of weight {w} leaves Bob's register away from the input"
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// BB84.

fn bit(i: usize, pos: usize, n: usize) -> usize {
    (i >> (n - 1 - pos)) & 1
}

fn bb84_registry(n: usize, fault: Option<Fault>) -> Result<ActionRegistry, ProtocolError> {
    let outcomes = 1i64 << n;
    let mut b = ActionRegistry::builder();
    let mut q_names = Vec::new();
    let mut ab_names = Vec::new();
    let mut ak_names = Vec::new();
    let mut bb_names = Vec::new();
    for j in 0..n {
        q_names.push(format!("q{j}"));
        ab_names.push(format!("ab{j}"));
        ak_names.push(format!("ak{j}"));
        bb_names.push(format!("bb{j}"));
    }
    for pool in [&q_names, &ab_names, &ak_names, &bb_names] {
        for name in pool {
            b = b.register(Register::internal(name));
        }
    }
    // Random-bit draws are measurements of ancillas prepared uniform.
    for (family, regs) in [("Rand_Ba", &ab_names), ("Rand_Ka", &ak_names), ("Rand_Bb", &bb_names)]
    {
        let targets: Vec<&str> = regs.iter().map(|s| s.as_str()).collect();
        for i in 0..outcomes {
            b = b.projection(
                ActionName::indexed(family, &[i]),
                gates::basis_projector(n, i as usize),
                &targets,
                family,
            );
        }
    }
    // Key-conditioned preparation: flip each data qubit where the key
    // ancilla is set.
    let set_targets: Vec<String> = ak_names.iter().chain(q_names.iter()).cloned().collect();
    let mut set_mat = CMatrix::identity(1 << (2 * n));
    for j in 0..n {
        set_mat = embed_gate(&gates::cnot(), 2 * n, &[j, n + j]).mul(&set_mat);
    }
    b = b.unitary(
        ActionName::plain("Set_Ka"),
        set_mat,
        &set_targets.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    );
    // Basis-conditioned preparation: Hadamard where the basis ancilla
    // is set (or, under the seeded fault, where it is clear).
    let hba_targets: Vec<String> = ab_names.iter().chain(q_names.iter()).cloned().collect();
    let cond_h = if fault == Some(Fault::FlipBasisConditioning) {
        // control on |0>
        let x = embed_gate(&gates::pauli_x(), 2, &[0]);
        x.mul(&gates::ch()).mul(&x)
    } else {
        gates::ch()
    };
    let mut hba_mat = CMatrix::identity(1 << (2 * n));
    for j in 0..n {
        hba_mat = embed_gate(&cond_h, 2 * n, &[j, n + j]).mul(&hba_mat);
    }
    b = b.unitary(
        ActionName::plain("H_Ba"),
        hba_mat,
        &hba_targets.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
    );
    // Bob's measurement in the basis recorded by his ancillas.
    let mkb_targets: Vec<String> = bb_names.iter().chain(q_names.iter()).cloned().collect();
    for i in 0..outcomes {
        let dim = 1 << (2 * n);
        let mut p = CMatrix::zeros(dim);
        for basis in 0..(1usize << n) {
            // H^basis |i><i| H^basis on the data qubits.
            let mut block = CMatrix::identity(1);
            for j in 0..n {
                let e = gates::basis_projector(1, bit(i as usize, j, n));
                let e = if bit(basis, j, n) == 1 {
                    gates::hadamard().mul(&e).mul(&gates::hadamard())
                } else {
                    e
                };
                block = block.kron(&e);
            }
            let anc = gates::basis_projector(n, basis);
            let full = anc.kron(&block);
            p = p.add(&full);
        }
        b = b.projection(
            ActionName::indexed("M_Kb", &[i]),
            p,
            &mkb_targets.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            "M_Kb",
        );
    }
    b = b
        .classical(ActionName::indexed("receive_A", &[0]))
        .classical(ActionName::indexed("send_B", &[0]))
        .classical(ActionName::plain("send_Q"))
        .classical(ActionName::plain("receive_Q"))
        .classical(ActionName::plain("c_Q"))
        .classical(ActionName::plain("cmp"))
        .comm(
            ActionName::plain("send_Q"),
            ActionName::plain("receive_Q"),
            ActionName::plain("c_Q"),
        );
    for i in 0..outcomes {
        b = b
            .classical(ActionName::indexed("send_Pb", &[i]))
            .classical(ActionName::indexed("receive_Pb", &[i]))
            .classical(ActionName::indexed("c_Pb", &[i]))
            .comm(
                ActionName::indexed("send_Pb", &[i]),
                ActionName::indexed("receive_Pb", &[i]),
                ActionName::indexed("c_Pb", &[i]),
            )
            .classical(ActionName::indexed("send_Pa", &[i]))
            .classical(ActionName::indexed("receive_Pa", &[i]))
            .classical(ActionName::indexed("c_Pa", &[i]))
            .comm(
                ActionName::indexed("send_Pa", &[i]),
                ActionName::indexed("receive_Pa", &[i]),
                ActionName::indexed("c_Pa", &[i]),
            );
    }
    Ok(b.build()?)
}

pub fn build_bb84(n: usize) -> Result<ProtocolModel, ProtocolError> {
    build_bb84_with(n, None)
}

pub fn build_bb84_with(n: usize, fault: Option<Fault>) -> Result<ProtocolModel, ProtocolError> {
    if !(1..=4).contains(&n) {
        return Err(ProtocolError::OutOfRange(format!("bb84 key length {n} not in 1..=4")));
    }
    let outcomes = 1i64 << n;
    let registry = bb84_registry(n, fault)?;

    // Alice's continuation is indexed by her basis string.
    let mut a_bind: Vec<(String, ProcessTerm)> = vec![
        ("A".into(), seq_chain(vec![iatom("receive_A", 0), ProcessTerm::RecVar("A1".into())])),
        (
            "A1".into(),
            uniform_pchoice(
                (0..outcomes)
                    .map(|i| {
                        ProcessTerm::seq(
                            iatom("Rand_Ba", i),
                            ProcessTerm::RecVar(format!("A2_{i}")),
                        )
                    })
                    .collect(),
            ),
        ),
        ("A8".into(), seq_chain(vec![atom("cmp"), ProcessTerm::RecVar("A".into())])),
    ];
    for i in 0..outcomes {
        a_bind.push((
            format!("A2_{i}"),
            ProcessTerm::seq(
                uniform_pchoice((0..outcomes).map(|k| iatom("Rand_Ka", k)).collect()),
                ProcessTerm::RecVar(format!("A3_{i}")),
            ),
        ));
        a_bind.push((
            format!("A3_{i}"),
            seq_chain(vec![atom("Set_Ka"), ProcessTerm::RecVar(format!("A4_{i}"))]),
        ));
        a_bind.push((
            format!("A4_{i}"),
            seq_chain(vec![atom("H_Ba"), ProcessTerm::RecVar(format!("A5_{i}"))]),
        ));
        a_bind.push((
            format!("A5_{i}"),
            seq_chain(vec![atom("send_Q"), ProcessTerm::RecVar(format!("A6_{i}"))]),
        ));
        a_bind.push((
            format!("A6_{i}"),
            ProcessTerm::seq(
                passive_sum((0..outcomes).map(|v| iatom("receive_Pb", v)).collect()),
                ProcessTerm::RecVar(format!("A7_{i}")),
            ),
        ));
        a_bind.push((
            format!("A7_{i}"),
            seq_chain(vec![iatom("send_Pa", i), ProcessTerm::RecVar("A8".into())]),
        ));
    }
    let alice = rec("A", a_bind);

    let mut b_bind: Vec<(String, ProcessTerm)> = vec![
        ("B".into(), seq_chain(vec![atom("receive_Q"), ProcessTerm::RecVar("B1".into())])),
        (
            "B1".into(),
            uniform_pchoice(
                (0..outcomes)
                    .map(|i| {
                        ProcessTerm::seq(
                            iatom("Rand_Bb", i),
                            ProcessTerm::RecVar(format!("B2_{i}")),
                        )
                    })
                    .collect(),
            ),
        ),
        (
            "B4".into(),
            ProcessTerm::seq(
                passive_sum((0..outcomes).map(|v| iatom("receive_Pa", v)).collect()),
                ProcessTerm::RecVar("B5".into()),
            ),
        ),
        ("B5".into(), seq_chain(vec![atom("cmp"), ProcessTerm::RecVar("B6".into())])),
        ("B6".into(), seq_chain(vec![iatom("send_B", 0), ProcessTerm::RecVar("B".into())])),
    ];
    for i in 0..outcomes {
        b_bind.push((
            format!("B2_{i}"),
            ProcessTerm::seq(
                uniform_pchoice((0..outcomes).map(|k| iatom("M_Kb", k)).collect()),
                ProcessTerm::RecVar(format!("B3_{i}")),
            ),
        ));
        b_bind.push((
            format!("B3_{i}"),
            seq_chain(vec![iatom("send_Pb", i), ProcessTerm::RecVar("B4".into())]),
        ));
    }
    let bob = rec("B", b_bind);

    let mut h = vec![ActionName::plain("send_Q"), ActionName::plain("receive_Q")];
    let mut i_set = vec![
        ActionName::plain("Set_Ka"),
        ActionName::plain("H_Ba"),
        ActionName::plain("c_Q"),
        ActionName::plain("cmp"),
    ];
    for i in 0..outcomes {
        for fam in ["send_Pb", "receive_Pb", "send_Pa", "receive_Pa"] {
            h.push(ActionName::indexed(fam, &[i]));
        }
        for fam in ["Rand_Ba", "Rand_Ka", "Rand_Bb", "M_Kb", "c_Pb", "c_Pa"] {
            i_set.push(ActionName::indexed(fam, &[i]));
        }
    }
    let parties = ProcessTerm::par(alice, bob);
    let visible_system = ProcessTerm::Encap(names(&h), Box::new(parties));
    let system = ProcessTerm::Abstr(names(&i_set), Box::new(visible_system.clone()));
    let spec_term = rec(
        "Z",
        vec![(
            "Z".into(),
            seq_chain(vec![iatom("receive_A", 0), iatom("send_B", 0), ProcessTerm::RecVar("Z".into())]),
        )],
    );
    // Data qubits ground, ancillas uniform.
    let mut groups = Vec::new();
    for j in 0..n {
        groups.push((vec![Register::internal(&format!("q{j}"))], gates::basis_state(1, 0)));
        for pool in ["ab", "ak", "bb"] {
            groups.push((
                vec![Register::internal(&format!("{pool}{j}"))],
                gates::plus_state(),
            ));
        }
    }
    let initial =
        QState::from_factors(groups).map_err(|e| ProtocolError::InvalidState(e.to_string()))?;
    Ok(ProtocolModel {
        name: ProtocolName::Bb84,
        n,
        system,
        probe_system: visible_system.clone(),
        visible_system,
        spec_term,
        registry,
        initial,
        h_set: names(&h),
        i_set: names(&i_set),
        recommended_depth: 17,
    })
}

/// One full round of visible behaviour per path.
pub fn bb84_paths(m: &ProtocolModel) -> Result<Vec<PathLeaf>, ProtocolError> {
    let cfg = Configuration::new(m.probe_system.clone(), m.initial.clone());
    let stop = |l: &ActionName| l.name == "send_B";
    Ok(enumerate_paths(&cfg, &m.registry, &stop, 20)?)
}

/// Extract the per-path strings and check key agreement on matched
/// positions; returns the number of checked paths.
pub fn check_bb84_key_agreement(m: &ProtocolModel) -> Result<usize, ProtocolError> {
    let n = m.n;
    let leaves = bb84_paths(m)?;
    let mut checked = 0usize;
    for leaf in &leaves {
        if !leaf.completed {
            return Err(ProtocolError::Check("a path deadlocked mid-round".to_string()));
        }
        let find = |fam: &str| -> Option<usize> {
            leaf.labels.iter().find(|l| l.name == fam).map(|l| l.indices[0] as usize)
        };
        let (Some(ba), Some(ka), Some(bb), Some(kb)) = (
            find("Rand_Ba"),
            find("Rand_Ka"),
            find("Rand_Bb"),
            find("M_Kb"),
        ) else {
            return Err(ProtocolError::Check("path missing a stage label".to_string()));
        };
        for p in 0..n {
            if bit(ba, p, n) == bit(bb, p, n) && bit(ka, p, n) != bit(kb, p, n) {
                return Err(ProtocolError::Check(format!(
                    "matched basis at position {p} but keys disagree: Ba={ba:0n$b} Bb={bb:0n$b} Ka={ka:0n$b} Kb={kb:0n$b}"
                )));
            }
        }
        checked += 1;
    }
    Ok(checked)
}

/// The basis draws must carry exactly one half per bit.
pub fn check_bb84_basis_weights(m: &ProtocolModel) -> Result<(), ProtocolError> {
    let n = m.n as u32;
    let g = build_graph(
        &Configuration::new(m.visible_system.clone(), m.initial.clone()),
        m.recommended_depth,
        &m.registry,
    )?;
    let expected = rat(1, 1 << n);
    let mut seen = false;
    for s in g.prob_states() {
        for e in &s.out_p {
            let node = &g.states[e.to];
            let is_basis_draw = node
                .out_a
                .iter()
                .any(|a| a.label.name == "Rand_Ba" || a.label.name == "Rand_Bb");
            if is_basis_draw {
                seen = true;
                if e.weight != expected {
                    return Err(ProtocolError::Check(format!(
                        "basis branch has weight {} instead of {}",
                        e.weight, expected
                    )));
                }
            }
        }
    }
    if !seen {
        return Err(ProtocolError::Check("no basis draws found".to_string()));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// E91.

fn e91_registry(n: usize) -> Result<ActionRegistry, ProtocolError> {
    let outcomes = 1i64 << n;
    let mut b = ActionRegistry::builder();
    let mut qa = Vec::new();
    let mut qb = Vec::new();
    for j in 0..n {
        qa.push(format!("qa{j}"));
        qb.push(format!("qb{j}"));
    }
    for name in qa.iter().chain(qb.iter()) {
        b = b.register(Register::internal(name));
    }
    for (family, regs) in [("M_Ka", &qa), ("M_Kb", &qb)] {
        let targets: Vec<&str> = regs.iter().map(|s| s.as_str()).collect();
        for i in 0..outcomes {
            b = b.projection(
                ActionName::indexed(family, &[i]),
                gates::basis_projector(n, i as usize),
                &targets,
                family,
            );
        }
    }
    for i in 0..outcomes {
        b = b
            .shadow(ActionName::indexed("S_Ka", &[i]), ActionName::indexed("M_Ka", &[i]))
            .shadow(ActionName::indexed("S_Kb", &[i]), ActionName::indexed("M_Kb", &[i]));
    }
    b = b
        .classical(ActionName::indexed("receive_A", &[0]))
        .classical(ActionName::indexed("send_B", &[0]))
        .classical(ActionName::plain("send_Q"))
        .classical(ActionName::plain("receive_Q"))
        .classical(ActionName::plain("c_Q"))
        .classical(ActionName::plain("send_Pb"))
        .classical(ActionName::plain("receive_Pb"))
        .classical(ActionName::plain("c_Pb"))
        .classical(ActionName::plain("send_Pa"))
        .classical(ActionName::plain("receive_Pa"))
        .classical(ActionName::plain("c_Pa"))
        .classical(ActionName::plain("cmp"))
        .comm(ActionName::plain("send_Q"), ActionName::plain("receive_Q"), ActionName::plain("c_Q"))
        .comm(
            ActionName::plain("send_Pb"),
            ActionName::plain("receive_Pb"),
            ActionName::plain("c_Pb"),
        )
        .comm(
            ActionName::plain("send_Pa"),
            ActionName::plain("receive_Pa"),
            ActionName::plain("c_Pa"),
        );
    Ok(b.build()?)
}

pub fn build_e91(n: usize) -> Result<ProtocolModel, ProtocolError> {
    build_e91_with(n, None)
}

pub fn build_e91_with(n: usize, fault: Option<Fault>) -> Result<ProtocolModel, ProtocolError> {
    if !(1..=3).contains(&n) {
        return Err(ProtocolError::OutOfRange(format!("e91 key length {n} not in 1..=3")));
    }
    let outcomes = 1i64 << n;
    let registry = e91_registry(n)?;

    let alice = rec(
        "A",
        vec![
            ("A".into(), seq_chain(vec![iatom("receive_A", 0), ProcessTerm::RecVar("A1".into())])),
            ("A1".into(), seq_chain(vec![atom("send_Q"), ProcessTerm::RecVar("A2".into())])),
            (
                "A2".into(),
                ProcessTerm::seq(
                    uniform_pchoice((0..outcomes).map(|i| iatom("M_Ka", i)).collect()),
                    ProcessTerm::RecVar("A3".into()),
                ),
            ),
            (
                "A3".into(),
                ProcessTerm::seq(
                    passive_sum((0..outcomes).map(|i| iatom("S_Kb", i)).collect()),
                    ProcessTerm::RecVar("A4".into()),
                ),
            ),
            ("A4".into(), seq_chain(vec![atom("receive_Pb"), ProcessTerm::RecVar("A5".into())])),
            ("A5".into(), seq_chain(vec![atom("send_Pa"), ProcessTerm::RecVar("A6".into())])),
            ("A6".into(), seq_chain(vec![atom("cmp"), ProcessTerm::RecVar("A".into())])),
        ],
    );
    // Bob shadows Alice's measurement; the seeded faults change which
    // shadows he offers.
    let bob_shadow = match fault {
        Some(Fault::WrongShadowPairing) => {
            passive_sum((0..outcomes).map(|i| iatom("S_Kb", i)).collect())
        }
        Some(Fault::MismatchedShadowIndex) => iatom("S_Ka", (outcomes - 1).max(0)),
        _ => passive_sum((0..outcomes).map(|i| iatom("S_Ka", i)).collect()),
    };
    let bob = rec(
        "B",
        vec![
            ("B".into(), seq_chain(vec![atom("receive_Q"), ProcessTerm::RecVar("B1".into())])),
            ("B1".into(), ProcessTerm::seq(bob_shadow, ProcessTerm::RecVar("B2".into()))),
            (
                "B2".into(),
                ProcessTerm::seq(
                    uniform_pchoice((0..outcomes).map(|i| iatom("M_Kb", i)).collect()),
                    ProcessTerm::RecVar("B3".into()),
                ),
            ),
            ("B3".into(), seq_chain(vec![atom("send_Pb"), ProcessTerm::RecVar("B4".into())])),
            ("B4".into(), seq_chain(vec![atom("receive_Pa"), ProcessTerm::RecVar("B5".into())])),
            ("B5".into(), seq_chain(vec![atom("cmp"), ProcessTerm::RecVar("B6".into())])),
            ("B6".into(), seq_chain(vec![iatom("send_B", 0), ProcessTerm::RecVar("B".into())])),
        ],
    );
    let mut h = vec![
        ActionName::plain("send_Q"),
        ActionName::plain("receive_Q"),
        ActionName::plain("send_Pb"),
        ActionName::plain("receive_Pb"),
        ActionName::plain("send_Pa"),
        ActionName::plain("receive_Pa"),
    ];
    let mut i_set = vec![
        ActionName::plain("c_Q"),
        ActionName::plain("c_Pb"),
        ActionName::plain("c_Pa"),
        ActionName::plain("cmp"),
    ];
    for i in 0..outcomes {
        for fam in ["M_Ka", "S_Ka", "M_Kb", "S_Kb"] {
            h.push(ActionName::indexed(fam, &[i]));
        }
        for fam in ["M_Ka", "M_Kb"] {
            i_set.push(ActionName::indexed(fam, &[i]));
        }
    }
    let parties = ProcessTerm::par(alice, bob);
    let visible_system = ProcessTerm::Encap(names(&h), Box::new(parties));
    let system = ProcessTerm::Abstr(names(&i_set), Box::new(visible_system.clone()));
    let spec_term = rec(
        "Z",
        vec![(
            "Z".into(),
            seq_chain(vec![iatom("receive_A", 0), iatom("send_B", 0), ProcessTerm::RecVar("Z".into())]),
        )],
    );
    let mut groups = Vec::new();
    for j in 0..n {
        groups.push((
            vec![
                Register::internal(&format!("qa{j}")),
                Register::internal(&format!("qb{j}")),
            ],
            gates::bell_state(),
        ));
    }
    let initial =
        QState::from_factors(groups).map_err(|e| ProtocolError::InvalidState(e.to_string()))?;
    Ok(ProtocolModel {
        name: ProtocolName::E91,
        n,
        system,
        probe_system: visible_system.clone(),
        visible_system,
        spec_term,
        registry,
        initial,
        h_set: names(&h),
        i_set: names(&i_set),
        recommended_depth: 13,
    })
}

/// Matched-basis outcome agreement over surviving branches, as an exact
/// probability.
pub fn e91_correlation(m: &ProtocolModel) -> Result<Rational, ProtocolError> {
    let cfg = Configuration::new(m.probe_system.clone(), m.initial.clone());
    let stop = |l: &ActionName| l.name == "send_B";
    let leaves = enumerate_paths(&cfg, &m.registry, &stop, 16)?;
    let mut total = crate::prob::zero();
    let mut agree = crate::prob::zero();
    for leaf in &leaves {
        if !leaf.completed {
            return Err(ProtocolError::Check("a path deadlocked mid-round".to_string()));
        }
        let find = |fam: &str| -> Option<usize> {
            leaf.labels.iter().find(|l| l.name == fam).map(|l| l.indices[0] as usize)
        };
        let (Some(ka), Some(kb)) = (find("M_Ka"), find("M_Kb")) else {
            return Err(ProtocolError::Check("path missing a measurement".to_string()));
        };
        total += leaf.weight.clone();
        if ka == kb {
            agree += leaf.weight.clone();
        }
    }
    if total == crate::prob::zero() {
        return Err(ProtocolError::Check("no complete paths".to_string()));
    }
    Ok(agree / total)
}

// ---------------------------------------------------------------------
// Verification and export.

/// Build the system graph, abstract the internal actions, and decide
/// rooted branching bisimilarity against the external-behaviour loop.
pub fn verify_external_behavior(
    m: &ProtocolModel,
    depth: u32,
) -> Result<BranchingResult, ProtocolError> {
    let sys = build_graph(
        &Configuration::new(m.system.clone(), m.initial.clone()),
        depth,
        &m.registry,
    )?;
    let spec = build_graph(
        &Configuration::new(m.spec_term.clone(), m.initial.clone()),
        depth,
        &m.registry,
    )?;
    Ok(branching_bisim(&sys, &spec)?)
}

/// The files that reproduce the built-in verification through the CLI:
/// system term, specification term, and the registry with its initial
/// state.
pub fn export_model(m: &ProtocolModel) -> (String, String, serde_json::Value) {
    let system = format!(
        "# system: abstracted composition of the protocol parties\n{}\n",
        crate::term::print_term(&m.system)
    );
    let spec = format!(
        "# external behaviour: one receive/send round per iteration\n{}\n",
        crate::term::print_term(&m.spec_term)
    );
    let mut registry = m.registry.clone();
    registry.initial = state_factors(&m.initial);
    (system, spec, registry.to_json())
}

fn state_factors(state: &QState) -> Vec<(Vec<String>, CMatrix)> {
    // Reconstruct factor groups from the state via its public API: the
    // full matrix over all registers, as one group. Protocол states are
    // small enough for export.
    let regs: Vec<String> = state.registers().iter().map(|r| r.name.clone()).collect();
    vec![(regs, state.materialize())]
}

pub fn weights_total(outputs: &[(Rational, QState)]) -> Rational {
    outputs.iter().map(|(w, _)| w.clone()).sum()
}

/// Convenience for the randomized suites: a Haar-ish random pure or
/// mixed qubit.
pub fn random_qubit_input(rng: &mut rand_chacha::ChaCha8Rng, mixed: bool) -> CMatrix {
    if mixed {
        crate::sampling::random_density(rng, 1)
    } else {
        use rand::Rng;
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let phi: f64 = rng.random_range(0.0..(2.0 * std::f64::consts::PI));
        let a = Complex64::new((theta / 2.0).cos(), 0.0);
        let b = Complex64::from_polar((theta / 2.0).sin(), phi);
        let mut m = CMatrix::zeros(2);
        m[(0, 0)] = a * a.conj();
        m[(0, 1)] = a * b.conj();
        m[(1, 0)] = b * a.conj();
        m[(1, 1)] = b * b.conj();
        m
    }
}

pub fn one_rational() -> Rational {
    one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teleport_ground_input() {
        let input = gates::basis_state(1, 0);
        let m = build_teleport(&input).unwrap();
        check_teleport_fidelity(&m, &input).unwrap();
        // Interleaving orders duplicate leaves without splitting the
        // probabilistic weight; every leaf carries one measurement.
        let outputs = teleport_outputs(&m).unwrap();
        assert!(outputs.len() >= 4);
        for (w, _) in &outputs {
            assert_eq!(*w, rat(1, 4));
        }
        // The measurement stage itself: four branches of weight 1/4.
        let g = build_graph(
            &Configuration::new(m.visible_system.clone(), m.initial.clone()),
            m.recommended_depth,
            &m.registry,
        )
        .unwrap();
        let mstates: Vec<_> = g
            .prob_states()
            .filter(|s| {
                s.out_p.len() == 4
                    && s.out_p.iter().all(|e| {
                        g.states[e.to].out_a.iter().any(|a| a.label.name == "M")
                    })
            })
            .collect();
        assert!(!mstates.is_empty());
        for s in mstates {
            for e in &s.out_p {
                assert_eq!(e.weight, rat(1, 4));
            }
        }
    }

    #[test]
    fn teleport_plus_input() {
        let input = gates::plus_state();
        let m = build_teleport(&input).unwrap();
        check_teleport_fidelity(&m, &input).unwrap();
    }

    #[test]
    fn teleport_rejects_bad_input() {
        let bad = CMatrix::from_real(&[&[0.7, 0.0], &[0.0, 0.7]]);
        assert!(matches!(
            build_teleport(&bad),
            Err(ProtocolError::InvalidState(_))
        ));
    }

    #[test]
    fn teleport_external_behavior() {
        let m = build_teleport(&gates::basis_state(1, 0)).unwrap();
        let r = verify_external_behavior(&m, m.recommended_depth).unwrap();
        assert!(r.equivalent, "{:?}", r.witness);
    }

    #[test]
    fn teleport_consistency_warning_free() {
        let m = build_teleport(&gates::plus_state()).unwrap();
        let g = build_graph(
            &Configuration::new(m.system.clone(), m.initial.clone()),
            m.recommended_depth,
            &m.registry,
        )
        .unwrap();
        assert_eq!(g.truncated_count(), 0, "graph must close within the depth");
        let warnings = crate::sos::check_measurement_consistency(&g, &m.registry).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
    }

    #[test]
    fn dropped_correction_is_detected() {
        let input = gates::plus_state();
        let m = build_teleport_with(&input, Some(Fault::DropPauliCorrection)).unwrap();
        assert!(check_teleport_fidelity(&m, &input).is_err());
    }

    #[test]
    fn bb84_n1_agreement_and_behavior() {
        let m = build_bb84(1).unwrap();
        let count = check_bb84_key_agreement(&m).unwrap();
        assert!(count >= 4);
        check_bb84_basis_weights(&m).unwrap();
        let r = verify_external_behavior(&m, m.recommended_depth).unwrap();
        assert!(r.equivalent, "{:?}", r.witness);
    }

    #[test]
    fn bb84_flipped_basis_is_detected() {
        let m = build_bb84_with(1, Some(Fault::FlipBasisConditioning)).unwrap();
        assert!(check_bb84_key_agreement(&m).is_err());
    }

    #[test]
    fn bb84_out_of_range() {
        assert!(matches!(build_bb84(0), Err(ProtocolError::OutOfRange(_))));
        assert!(matches!(build_bb84(5), Err(ProtocolError::OutOfRange(_))));
    }

    #[test]
    fn e91_n1_correlation_and_behavior() {
        let m = build_e91(1).unwrap();
        assert_eq!(e91_correlation(&m).unwrap(), one());
        let r = verify_external_behavior(&m, m.recommended_depth).unwrap();
        assert!(r.equivalent, "{:?}", r.witness);
    }

    #[test]
    fn e91_wrong_shadow_family_is_detected() {
        let m = build_e91_with(1, Some(Fault::WrongShadowPairing)).unwrap();
        let r = verify_external_behavior(&m, m.recommended_depth).unwrap();
        assert!(!r.equivalent);
    }

    #[test]
    fn e91_mismatched_index_is_detected() {
        let m = build_e91_with(1, Some(Fault::MismatchedShadowIndex)).unwrap();
        let r = verify_external_behavior(&m, m.recommended_depth).unwrap();
        assert!(!r.equivalent);
    }

    #[test]
    fn e91_out_of_range() {
        assert!(matches!(build_e91(4), Err(ProtocolError::OutOfRange(_))));
    }

    #[test]
    fn exports_parse_back() {
        let m = build_teleport(&gates::basis_state(1, 0)).unwrap();
        let (sys, spec, reg) = export_model(&m);
        let reg2 = ActionRegistry::from_json(&reg).unwrap();
        let sys_t = crate::parse::parse(&sys).unwrap();
        let spec_t = crate::parse::parse(&spec).unwrap();
        assert_eq!(sys_t, m.system);
        assert_eq!(spec_t, m.spec_term);
        let st = reg2.initial_state().unwrap();
        assert!(state_eq(&st, &m.initial, 1e-9).unwrap());
    }
}
