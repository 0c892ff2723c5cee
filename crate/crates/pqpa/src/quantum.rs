//! Density-matrix backend for the quantum part of configurations.
//!
//! A `QState` owns a set of named one-qubit registers, each public or
//! internal, and stores the density operator as a product of factors
//! over disjoint register groups. Factors merge when a gate spans
//! them and split again when a measurement collapses a register to a
//! basis state, so protocol-sized systems stay cheap. All operations
//! return new states.

use std::collections::BTreeSet;

use num_complex::Complex64;
use thiserror::Error;

use crate::cmatrix::CMatrix;

/// Tolerance for all quantum-side validity checks and comparisons.
pub const EPS_Q: f64 = 1e-9;

/// Granularity of state fingerprints used for graph deduplication.
const FP_GRAIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum Visibility {
    Public,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Register {
    pub name: String,
    pub visibility: Visibility,
}

impl Register {
    pub fn public(name: &str) -> Self {
        Register { name: name.to_string(), visibility: Visibility::Public }
    }

    pub fn internal(name: &str) -> Self {
        Register { name: name.to_string(), visibility: Visibility::Internal }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QuantumError {
    #[error("unknown register {0}")]
    UnknownRegister(String),
    #[error("matrix is not unitary")]
    NonUnitary,
    #[error("matrix is not a projector")]
    NonProjector,
    #[error("projection branch has probability {0}, below tolerance")]
    ZeroProbabilityBranch(f64),
    #[error("register name {0} already present")]
    RegisterNameClash(String),
    #[error("register sets differ: {0}")]
    RegisterMismatch(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Clone, Debug, PartialEq)]
struct Factor {
    /// Sorted global register indices; position 0 is the most
    /// significant bit of the factor's basis index.
    regs: Vec<usize>,
    mat: CMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QState {
    /// Sorted by name; global indices refer to this list.
    registers: Vec<Register>,
    factors: Vec<Factor>,
}

fn check_density(mat: &CMatrix, what: &str) -> Result<(), QuantumError> {
    if (mat.trace().re - 1.0).abs() > EPS_Q || mat.trace().im.abs() > EPS_Q {
        return Err(QuantumError::InvalidState(format!("{what}: trace is not 1")));
    }
    if !mat.is_hermitian(EPS_Q) {
        return Err(QuantumError::InvalidState(format!("{what}: not Hermitian")));
    }
    if !mat.is_psd(EPS_Q) {
        return Err(QuantumError::InvalidState(format!("{what}: not positive semidefinite")));
    }
    Ok(())
}

impl QState {
    /// Build a state from disjoint register groups and their density
    /// matrices. Group order of registers fixes bit significance within
    /// the group (first register = most significant bit).
    pub fn from_factors(groups: Vec<(Vec<Register>, CMatrix)>) -> Result<Self, QuantumError> {
        let mut registers: Vec<Register> = Vec::new();
        for (regs, mat) in &groups {
            if mat.dim != 1 << regs.len() {
                return Err(QuantumError::DimensionMismatch(format!(
                    "group of {} registers with a {}x{} matrix",
                    regs.len(),
                    mat.dim,
                    mat.dim
                )));
            }
            check_density(mat, "factor")?;
            for r in regs {
                if registers.iter().any(|x| x.name == r.name) {
                    return Err(QuantumError::RegisterNameClash(r.name.clone()));
                }
                registers.push(r.clone());
            }
        }
        registers.sort();
        let index_of = |name: &str| registers.iter().position(|r| r.name == name).unwrap();
        let mut factors = Vec::new();
        for (regs, mat) in groups {
            let order: Vec<usize> = regs.iter().map(|r| index_of(&r.name)).collect();
            factors.push(sort_factor(Factor { regs: order, mat }));
        }
        factors.sort_by_key(|f| f.regs.clone());
        let mut st = QState { registers, factors };
        st.split_all();
        Ok(st)
    }

    /// All registers in `|0>`, one factor per register.
    pub fn ground(registers: Vec<Register>) -> Result<Self, QuantumError> {
        let groups = registers
            .into_iter()
            .map(|r| (vec![r], crate::cmatrix::gates::basis_state(1, 0)))
            .collect();
        QState::from_factors(groups)
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn qubit_count(&self) -> usize {
        self.registers.len()
    }

    fn index_of(&self, name: &str) -> Result<usize, QuantumError> {
        self.registers
            .iter()
            .position(|r| r.name == name)
            .ok_or_else(|| QuantumError::UnknownRegister(name.to_string()))
    }

    /// Full density matrix over all registers in sorted order.
    pub fn materialize(&self) -> CMatrix {
        self.materialize_subset(&(0..self.registers.len()).collect::<Vec<_>>())
    }

    /// Density matrix of the given global register indices (sorted order
    /// of that subset), tracing out everything else.
    fn materialize_subset(&self, keep: &[usize]) -> CMatrix {
        let keep_set: BTreeSet<usize> = keep.iter().copied().collect();
        let mut acc: Option<(Vec<usize>, CMatrix)> = None;
        for f in &self.factors {
            let local_keep: Vec<usize> = f
                .regs
                .iter()
                .enumerate()
                .filter(|(_, g)| keep_set.contains(g))
                .map(|(i, _)| i)
                .collect();
            if local_keep.is_empty() {
                continue;
            }
            let kept_regs: Vec<usize> =
                f.regs.iter().copied().filter(|g| keep_set.contains(g)).collect();
            let mat = partial_trace_keep(&f.mat, f.regs.len(), &local_keep);
            acc = Some(match acc {
                None => (kept_regs, mat),
                Some((regs, m)) => {
                    let mut regs2 = regs.clone();
                    regs2.extend_from_slice(&kept_regs);
                    (regs2, m.kron(&mat))
                }
            });
        }
        match acc {
            None => CMatrix::identity(1),
            Some((regs, mat)) => {
                let f = sort_factor(Factor { regs, mat });
                f.mat
            }
        }
    }

    /// Reduced state of the named registers, as a `QState`.
    pub fn reduced(&self, names: &[&str]) -> Result<QState, QuantumError> {
        let mut idx: Vec<usize> = Vec::new();
        for n in names {
            idx.push(self.index_of(n)?);
        }
        idx.sort_unstable();
        let mat = self.materialize_subset(&idx);
        let regs: Vec<Register> = idx.iter().map(|&i| self.registers[i].clone()).collect();
        QState::from_factors(vec![(regs, mat)])
    }

    /// State of the public registers only — the quantum part carried by
    /// fully probabilistic quantum graphs.
    pub fn public_view(&self) -> (Vec<Register>, CMatrix) {
        let keep: Vec<usize> = self
            .registers
            .iter()
            .enumerate()
            .filter(|(_, r)| r.visibility == Visibility::Public)
            .map(|(i, _)| i)
            .collect();
        let mat = self.materialize_subset(&keep);
        let regs = keep.iter().map(|&i| self.registers[i].clone()).collect();
        (regs, mat)
    }

    /// Deterministic key for graph deduplication: public registers plus
    /// the public state rounded to a fixed grain.
    pub fn public_fingerprint(&self) -> Vec<(i64, i64)> {
        let (_, mat) = self.public_view();
        mat.fingerprint(FP_GRAIN)
    }

    /// Merge every factor that touches one of the given global indices
    /// into a single factor; returns its position.
    fn merge_touching(&mut self, touched: &[usize]) -> usize {
        let (mut hit, rest): (Vec<Factor>, Vec<Factor>) = self
            .factors
            .drain(..)
            .partition(|f| f.regs.iter().any(|g| touched.contains(g)));
        self.factors = rest;
        assert!(!hit.is_empty(), "targets must exist in some factor");
        let mut regs = Vec::new();
        let mut mat = CMatrix::identity(1);
        for f in hit.drain(..) {
            regs.extend_from_slice(&f.regs);
            mat = mat.kron(&f.mat);
        }
        let merged = sort_factor(Factor { regs, mat });
        self.factors.push(merged);
        self.factors.sort_by_key(|f| f.regs.clone());
        self.factors
            .iter()
            .position(|f| f.regs.iter().any(|g| touched.contains(g)))
            .unwrap()
    }

    fn resolve_targets(&self, targets: &[&str]) -> Result<Vec<usize>, QuantumError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for t in targets {
            let i = self.index_of(t)?;
            if !seen.insert(i) {
                return Err(QuantumError::RegisterNameClash(t.to_string()));
            }
            out.push(i);
        }
        Ok(out)
    }

    /// Apply a unitary on the targets (target order = matrix bit order,
    /// first target most significant).
    pub fn apply_unitary(&self, u: &CMatrix, targets: &[&str]) -> Result<QState, QuantumError> {
        if !u.is_unitary(EPS_Q) {
            return Err(QuantumError::NonUnitary);
        }
        let idx = self.resolve_targets(targets)?;
        if u.dim != 1 << idx.len() {
            return Err(QuantumError::DimensionMismatch(format!(
                "{} targets with a {}x{} matrix",
                idx.len(),
                u.dim,
                u.dim
            )));
        }
        let mut st = self.clone();
        let fpos = st.merge_touching(&idx);
        let f = &mut st.factors[fpos];
        let emb = embed(u, &f.regs, &idx);
        f.mat = emb.mul(&f.mat).mul(&emb.adjoint());
        Ok(st)
    }

    /// `tr((P ⊗ I) rho)` for a projector on the targets.
    pub fn measure_probability(
        &self,
        p: &CMatrix,
        targets: &[&str],
    ) -> Result<f64, QuantumError> {
        if !p.is_projector(EPS_Q) {
            return Err(QuantumError::NonProjector);
        }
        let idx = self.resolve_targets(targets)?;
        if p.dim != 1 << idx.len() {
            return Err(QuantumError::DimensionMismatch(format!(
                "{} targets with a {}x{} matrix",
                idx.len(),
                p.dim,
                p.dim
            )));
        }
        // Untouched factors contribute trace 1.
        let mut st = self.clone();
        let fpos = st.merge_touching(&idx);
        let f = &st.factors[fpos];
        let emb = embed(p, &f.regs, &idx);
        Ok(emb.mul(&f.mat).trace().re)
    }

    /// Collapse: `P rho P / tr(P rho)`.
    pub fn apply_projection(&self, p: &CMatrix, targets: &[&str]) -> Result<QState, QuantumError> {
        if !p.is_projector(EPS_Q) {
            return Err(QuantumError::NonProjector);
        }
        let idx = self.resolve_targets(targets)?;
        if p.dim != 1 << idx.len() {
            return Err(QuantumError::DimensionMismatch(format!(
                "{} targets with a {}x{} matrix",
                idx.len(),
                p.dim,
                p.dim
            )));
        }
        let mut st = self.clone();
        let fpos = st.merge_touching(&idx);
        let f = &mut st.factors[fpos];
        let emb = embed(p, &f.regs, &idx);
        let prob = emb.mul(&f.mat).trace().re;
        if prob <= EPS_Q {
            return Err(QuantumError::ZeroProbabilityBranch(prob));
        }
        f.mat = emb
            .mul(&f.mat)
            .mul(&emb.adjoint())
            .scale(Complex64::new(1.0 / prob, 0.0));
        st.split_all();
        Ok(st)
    }

    /// Disjoint union of register sets, product of states.
    pub fn tensor(&self, other: &QState) -> Result<QState, QuantumError> {
        for r in &other.registers {
            if self.registers.iter().any(|x| x.name == r.name) {
                return Err(QuantumError::RegisterNameClash(r.name.clone()));
            }
        }
        let mut groups: Vec<(Vec<Register>, CMatrix)> = Vec::new();
        for st in [self, other] {
            for f in &st.factors {
                let regs = f.regs.iter().map(|&i| st.registers[i].clone()).collect();
                groups.push((regs, f.mat.clone()));
            }
        }
        QState::from_factors(groups)
    }

    /// Split every factor whose registers have collapsed to basis
    /// states; keeps factor dimensions small after measurements.
    fn split_all(&mut self) {
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..self.factors.len() {
                if self.factors[i].regs.len() <= 1 {
                    continue;
                }
                if let Some((single, rest)) = split_factor(&self.factors[i]) {
                    self.factors.swap_remove(i);
                    self.factors.push(single);
                    self.factors.push(rest);
                    self.factors.sort_by_key(|f| f.regs.clone());
                    changed = true;
                    break;
                }
            }
        }
    }
}

fn sort_factor(f: Factor) -> Factor {
    let k = f.regs.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&i| f.regs[i]);
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return f;
    }
    // position j of the sorted factor takes the bit of old position order[j]
    let dim = 1 << k;
    let map = |x: usize| -> usize {
        let mut y = 0;
        for (j, &o) in order.iter().enumerate() {
            let bit = (x >> (k - 1 - o)) & 1;
            y |= bit << (k - 1 - j);
        }
        y
    };
    // new[y] built from old[x] where y = map(x); invert by iterating x.
    let mut mat = CMatrix::zeros(dim);
    for r in 0..dim {
        for c in 0..dim {
            mat[(map(r), map(c))] = f.mat[(r, c)];
        }
    }
    let mut regs = f.regs.clone();
    regs.sort_unstable();
    Factor { regs, mat }
}

/// Embed `u` (bit order = `targets` order, first most significant) into
/// the factor whose sorted global registers are `factor_regs`.
fn embed(u: &CMatrix, factor_regs: &[usize], targets: &[usize]) -> CMatrix {
    let k = factor_regs.len();
    let dim = 1 << k;
    let tpos: Vec<usize> = targets
        .iter()
        .map(|t| factor_regs.iter().position(|g| g == t).expect("target in factor"))
        .collect();
    let tk = tpos.len();
    let sub = |x: usize| -> usize {
        let mut s = 0;
        for (i, &p) in tpos.iter().enumerate() {
            let bit = (x >> (k - 1 - p)) & 1;
            s |= bit << (tk - 1 - i);
        }
        s
    };
    let rest_mask: usize = {
        let mut m = dim - 1;
        for &p in &tpos {
            m &= !(1 << (k - 1 - p));
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

/// Partial trace keeping the given local bit positions (sorted).
fn partial_trace_keep(mat: &CMatrix, k: usize, keep: &[usize]) -> CMatrix {
    let kk = keep.len();
    let out_dim = 1 << kk;
    let drop: Vec<usize> = (0..k).filter(|p| !keep.contains(p)).collect();
    let dk = drop.len();
    let mut out = CMatrix::zeros(out_dim);
    let compose = |kept: usize, dropped: usize| -> usize {
        let mut x = 0;
        for (i, &p) in keep.iter().enumerate() {
            let bit = (kept >> (kk - 1 - i)) & 1;
            x |= bit << (k - 1 - p);
        }
        for (i, &p) in drop.iter().enumerate() {
            let bit = (dropped >> (dk - 1 - i)) & 1;
            x |= bit << (k - 1 - p);
        }
        x
    };
    for r in 0..out_dim {
        for c in 0..out_dim {
            let mut acc = Complex64::ZERO;
            for d in 0..(1usize << dk) {
                acc += mat[(compose(r, d), compose(c, d))];
            }
            out[(r, c)] = acc;
        }
    }
    out
}

/// If some register of the factor is exactly in a basis state, split it
/// off. Detection tolerance is strict so only true collapses split.
fn split_factor(f: &Factor) -> Option<(Factor, Factor)> {
    const SPLIT_EPS: f64 = 1e-12;
    let k = f.regs.len();
    let dim = 1 << k;
    for p in 0..k {
        for b in [0usize, 1] {
            let mut ok = true;
            'scan: for r in 0..dim {
                for c in 0..dim {
                    let br = (r >> (k - 1 - p)) & 1;
                    let bc = (c >> (k - 1 - p)) & 1;
                    if (br != b || bc != b) && f.mat[(r, c)].norm() > SPLIT_EPS {
                        ok = false;
                        break 'scan;
                    }
                }
            }
            if !ok {
                continue;
            }
            let rest_positions: Vec<usize> = (0..k).filter(|&q| q != p).collect();
            let rest = partial_trace_keep(&f.mat, k, &rest_positions);
            let mut single = CMatrix::zeros(2);
            single[(b, b)] = Complex64::ONE;
            let single_f = Factor { regs: vec![f.regs[p]], mat: single };
            let rest_f = Factor {
                regs: rest_positions.iter().map(|&q| f.regs[q]).collect(),
                mat: rest,
            };
            return Some((single_f, rest_f));
        }
    }
    None
}

/// Max-norm equality of two states over the same (order-normalized)
/// register set.
pub fn state_eq(a: &QState, b: &QState, tol: f64) -> Result<bool, QuantumError> {
    if a.registers != b.registers {
        let an: Vec<&str> = a.registers.iter().map(|r| r.name.as_str()).collect();
        let bn: Vec<&str> = b.registers.iter().map(|r| r.name.as_str()).collect();
        return Err(QuantumError::RegisterMismatch(format!("{an:?} vs {bn:?}")));
    }
    Ok(a.materialize().max_abs_diff(&b.materialize()) <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmatrix::gates::*;

    fn one_qubit(name: &str, mat: CMatrix) -> QState {
        QState::from_factors(vec![(vec![Register::public(name)], mat)]).unwrap()
    }

    #[test]
    fn hadamard_on_ground() {
        let s = one_qubit("q", basis_state(1, 0));
        let s2 = s.apply_unitary(&hadamard(), &["q"]).unwrap();
        let expect = CMatrix::from_real(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert!(s2.materialize().max_abs_diff(&expect) < 1e-12);
        // H is an involution.
        let s3 = s2.apply_unitary(&hadamard(), &["q"]).unwrap();
        assert!(state_eq(&s3, &s, 1e-9).unwrap());
    }

    #[test]
    fn x_flips_ground() {
        let s = one_qubit("q", basis_state(1, 0));
        let s2 = s.apply_unitary(&pauli_x(), &["q"]).unwrap();
        assert!(s2.materialize().max_abs_diff(&basis_state(1, 1)) < 1e-12);
    }

    #[test]
    fn measurement_probabilities() {
        let s = one_qubit("q", plus_state());
        let p0 = s.measure_probability(&basis_projector(1, 0), &["q"]).unwrap();
        assert!((p0 - 0.5).abs() < 1e-12);
        let s0 = s.apply_projection(&basis_projector(1, 0), &["q"]).unwrap();
        assert!(s0.materialize().max_abs_diff(&basis_state(1, 0)) < 1e-12);
        // Dead branch.
        let s1 = one_qubit("q", basis_state(1, 0));
        assert!(matches!(
            s1.apply_projection(&basis_projector(1, 1), &["q"]),
            Err(QuantumError::ZeroProbabilityBranch(_))
        ));
        // Projection idempotence.
        let once = s.apply_projection(&basis_projector(1, 0), &["q"]).unwrap();
        let twice = once.apply_projection(&basis_projector(1, 0), &["q"]).unwrap();
        assert!(state_eq(&once, &twice, 1e-9).unwrap());
    }

    #[test]
    fn tensor_and_clash() {
        let a = one_qubit("a", basis_state(1, 0));
        let b = one_qubit("b", plus_state());
        let ab = a.tensor(&b).unwrap();
        assert_eq!(ab.qubit_count(), 2);
        assert!((ab.materialize().trace().re - 1.0).abs() < 1e-12);
        assert!(matches!(
            a.tensor(&a),
            Err(QuantumError::RegisterNameClash(_))
        ));
    }

    #[test]
    fn entangling_merges_factors_and_collapse_splits() {
        let a = one_qubit("a", basis_state(1, 0));
        let b = one_qubit("b", basis_state(1, 0));
        let mut s = a.tensor(&b).unwrap();
        s = s.apply_unitary(&hadamard(), &["a"]).unwrap();
        s = s.apply_unitary(&cnot(), &["a", "b"]).unwrap();
        assert!(s.materialize().max_abs_diff(&bell_state()) < 1e-12);
        assert_eq!(s.factors.len(), 1);
        // Measuring `a` collapses both; factors split again.
        let s0 = s
            .apply_projection(&basis_projector(1, 0), &["a"])
            .unwrap();
        assert_eq!(s0.factors.len(), 2);
        let reduced = s0.reduced(&["b"]).unwrap();
        assert!(reduced.materialize().max_abs_diff(&basis_state(1, 0)) < 1e-12);
    }

    #[test]
    fn public_view_traces_out_internal() {
        let s = QState::from_factors(vec![
            (vec![Register::public("p")], plus_state()),
            (vec![Register::internal("i")], basis_state(1, 1)),
        ])
        .unwrap();
        let (regs, mat) = s.public_view();
        assert_eq!(regs.len(), 1);
        assert_eq!(mat.dim, 2);
        assert!(mat.max_abs_diff(&plus_state()) < 1e-12);
    }

    #[test]
    fn gate_embedding_respects_target_order() {
        // CNOT with control b, target a (reverse of register order).
        let a = one_qubit("a", basis_state(1, 0));
        let b = one_qubit("b", basis_state(1, 1));
        let s = a.tensor(&b).unwrap();
        let s2 = s.apply_unitary(&cnot(), &["b", "a"]).unwrap();
        // a flipped because control b is |1>.
        let ra = s2.reduced(&["a"]).unwrap();
        assert!(ra.materialize().max_abs_diff(&basis_state(1, 1)) < 1e-12);
    }
}
