//! The action registry: the ambient structure binding action names to
//! quantum effects, the communication function, the priority order and
//! named renamings. Loaded from JSON and validated up front so the
//! engine never meets an unchecked matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmatrix::CMatrix;
use crate::quantum::{QState, Register, Visibility, EPS_Q};
use crate::term::ActionName;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ActionKind {
    Unitary,
    Projection,
    Classical,
    Shadow(ActionName),
    Silent,
    Deadlock,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QEffect {
    Unitary { mat: CMatrix, targets: Vec<String> },
    Projection { mat: CMatrix, targets: Vec<String>, family: String },
    Identity,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("action {0} is not registered")]
    UnknownAction(String),
    #[error("matrix for {0} is not unitary")]
    NonUnitary(String),
    #[error("matrix for {0} is not a projector")]
    NonProjector(String),
    #[error("register {0} is not declared")]
    UnknownRegister(String),
    #[error("measurement family {family} does not resolve the identity (defect {defect:.3e})")]
    IncompleteFamily { family: String, defect: f64 },
    #[error("family weights for {0} do not sum to 1")]
    BadFamilyWeights(String),
    #[error("shadow {0} must reference a unitary or projection action")]
    BadShadow(String),
    #[error("communication function must pair classical actions: {0}")]
    BadGamma(String),
    #[error("priority order has a cycle through {0}")]
    PriorityCycle(String),
    #[error("renaming {0} must preserve kind and effect ({1})")]
    BadRenaming(String, String),
    #[error("abstraction set contains {0}, whose effect touches public register {1}")]
    AbstractionNotInternal(String, String),
    #[error("invalid registry: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Symmetric partial map over classical action names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommFunction {
    map: BTreeMap<(ActionName, ActionName), ActionName>,
}

impl CommFunction {
    pub fn insert(&mut self, a: ActionName, b: ActionName, c: ActionName) {
        self.map.insert(key(&a, &b), c);
    }

    pub fn get(&self, a: &ActionName, b: &ActionName) -> Option<&ActionName> {
        self.map.get(&key(a, b))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(ActionName, ActionName), &ActionName)> {
        self.map.iter()
    }
}

fn key(a: &ActionName, b: &ActionName) -> (ActionName, ActionName) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Strict partial order on action names (transitively closed).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PriorityOrder {
    below: BTreeSet<(ActionName, ActionName)>,
}

impl PriorityOrder {
    pub fn from_pairs(pairs: Vec<(ActionName, ActionName)>) -> Result<Self, RegistryError> {
        let mut below: BTreeSet<(ActionName, ActionName)> = pairs.into_iter().collect();
        // Transitive closure.
        loop {
            let mut added = Vec::new();
            for (a, b) in &below {
                for (c, d) in &below {
                    if b == c && !below.contains(&(a.clone(), d.clone())) {
                        added.push((a.clone(), d.clone()));
                    }
                }
            }
            if added.is_empty() {
                break;
            }
            below.extend(added);
        }
        for (a, b) in &below {
            if a == b {
                return Err(RegistryError::PriorityCycle(a.to_string()));
            }
        }
        Ok(PriorityOrder { below })
    }

    pub fn lt(&self, a: &ActionName, b: &ActionName) -> bool {
        self.below.contains(&(a.clone(), b.clone()))
    }

    pub fn pairs(&self) -> impl Iterator<Item = &(ActionName, ActionName)> {
        self.below.iter()
    }
}

#[derive(Clone, Debug)]
pub struct ActionRegistry {
    pub registers: Vec<Register>,
    effects: BTreeMap<ActionName, (ActionKind, QEffect)>,
    pub gamma: CommFunction,
    pub priority: PriorityOrder,
    pub renamings: BTreeMap<String, BTreeMap<ActionName, ActionName>>,
    /// Initial state factor groups (register names, density matrix).
    pub initial: Vec<(Vec<String>, CMatrix)>,
    fingerprint: u64,
}

impl ActionRegistry {
    pub fn builder() -> RegistryBuilder {
        RegistryBuilder::default()
    }

    pub fn kind_of(&self, a: &ActionName) -> Result<&ActionKind, RegistryError> {
        if a.is_tau() {
            return Ok(&ActionKind::Silent);
        }
        if a.is_delta() {
            return Ok(&ActionKind::Deadlock);
        }
        self.effects
            .get(a)
            .map(|(k, _)| k)
            .ok_or_else(|| RegistryError::UnknownAction(a.to_string()))
    }

    pub fn effect_of(&self, a: &ActionName) -> Result<&QEffect, RegistryError> {
        if a.is_tau() || a.is_delta() {
            return Ok(&QEffect::Identity);
        }
        self.effects
            .get(a)
            .map(|(_, e)| e)
            .ok_or_else(|| RegistryError::UnknownAction(a.to_string()))
    }

    pub fn actions(&self) -> impl Iterator<Item = (&ActionName, &(ActionKind, QEffect))> {
        self.effects.iter()
    }

    pub fn rename_map(&self, name: &str) -> Result<&BTreeMap<ActionName, ActionName>, RegistryError> {
        self.renamings
            .get(name)
            .ok_or_else(|| RegistryError::Invalid(format!("renaming {name} is not declared")))
    }

    pub fn apply_rename(&self, fname: &str, a: &ActionName) -> Result<ActionName, RegistryError> {
        if a.is_tau() || a.is_delta() {
            return Ok(a.clone());
        }
        let map = self.rename_map(fname)?;
        Ok(map.get(a).cloned().unwrap_or_else(|| a.clone()))
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn initial_state(&self) -> Result<QState, RegistryError> {
        let lookup = |n: &String| -> Result<Register, RegistryError> {
            self.registers
                .iter()
                .find(|r| &r.name == n)
                .cloned()
                .ok_or_else(|| RegistryError::UnknownRegister(n.clone()))
        };
        let mut groups = Vec::new();
        let mut covered: BTreeSet<String> = BTreeSet::new();
        for (names, mat) in &self.initial {
            let regs: Result<Vec<Register>, _> = names.iter().map(lookup).collect();
            let regs = regs?;
            for r in &regs {
                covered.insert(r.name.clone());
            }
            groups.push((regs, mat.clone()));
        }
        for r in &self.registers {
            if !covered.contains(&r.name) {
                groups.push((vec![r.clone()], crate::cmatrix::gates::basis_state(1, 0)));
            }
        }
        QState::from_factors(groups).map_err(|e| RegistryError::Invalid(e.to_string()))
    }

    /// Every action of an abstraction set must leave the public part of
    /// the state untouched: classical, silent, or a quantum effect whose
    /// targets are all internal registers (shadows inherit their base).
    pub fn check_abstraction_set(&self, set: &BTreeSet<ActionName>) -> Result<(), RegistryError> {
        for a in set {
            let base = match self.kind_of(a)? {
                ActionKind::Shadow(of) => of.clone(),
                _ => a.clone(),
            };
            match self.effect_of(&base)? {
                QEffect::Identity => {}
                QEffect::Unitary { targets, .. } | QEffect::Projection { targets, .. } => {
                    for t in targets {
                        let reg = self
                            .registers
                            .iter()
                            .find(|r| &r.name == t)
                            .ok_or_else(|| RegistryError::UnknownRegister(t.clone()))?;
                        if reg.visibility == Visibility::Public {
                            return Err(RegistryError::AbstractionNotInternal(
                                a.to_string(),
                                t.clone(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Projector family members, in index order.
    pub fn family_members(&self, family: &str) -> Vec<(ActionName, CMatrix, Vec<String>)> {
        let mut out = Vec::new();
        for (name, (_, e)) in &self.effects {
            if let QEffect::Projection { mat, targets, family: f } = e {
                if f == family {
                    out.push((name.clone(), mat.clone(), targets.clone()));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(RegistryFile::from(self)).expect("registry serialization")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, RegistryError> {
        let file: RegistryFile = serde_json::from_value(v.clone())?;
        file.build()
    }
}

#[derive(Default)]
pub struct RegistryBuilder {
    registers: Vec<Register>,
    entries: Vec<(ActionName, ActionKind, QEffect)>,
    gamma: Vec<(ActionName, ActionName, ActionName)>,
    priority: Vec<(ActionName, ActionName)>,
    renamings: BTreeMap<String, BTreeMap<ActionName, ActionName>>,
    initial: Vec<(Vec<String>, CMatrix)>,
}

impl RegistryBuilder {
    pub fn register(mut self, r: Register) -> Self {
        self.registers.push(r);
        self
    }

    pub fn classical(mut self, a: ActionName) -> Self {
        self.entries.push((a, ActionKind::Classical, QEffect::Identity));
        self
    }

    pub fn unitary(mut self, a: ActionName, mat: CMatrix, targets: &[&str]) -> Self {
        let targets = targets.iter().map(|s| s.to_string()).collect();
        self.entries.push((a, ActionKind::Unitary, QEffect::Unitary { mat, targets }));
        self
    }

    pub fn projection(
        mut self,
        a: ActionName,
        mat: CMatrix,
        targets: &[&str],
        family: &str,
    ) -> Self {
        let targets = targets.iter().map(|s| s.to_string()).collect();
        self.entries.push((
            a,
            ActionKind::Projection,
            QEffect::Projection { mat, targets, family: family.to_string() },
        ));
        self
    }

    pub fn shadow(mut self, a: ActionName, of: ActionName) -> Self {
        self.entries.push((a, ActionKind::Shadow(of), QEffect::Identity));
        self
    }

    pub fn comm(mut self, a: ActionName, b: ActionName, c: ActionName) -> Self {
        self.gamma.push((a, b, c));
        self
    }

    pub fn prefer(mut self, low: ActionName, high: ActionName) -> Self {
        self.priority.push((low, high));
        self
    }

    pub fn renaming(mut self, name: &str, map: Vec<(ActionName, ActionName)>) -> Self {
        self.renamings.insert(name.to_string(), map.into_iter().collect());
        self
    }

    pub fn initial_factor(mut self, regs: &[&str], mat: CMatrix) -> Self {
        self.initial.push((regs.iter().map(|s| s.to_string()).collect(), mat));
        self
    }

    pub fn build(self) -> Result<ActionRegistry, RegistryError> {
        let mut effects = BTreeMap::new();
        for (a, k, e) in self.entries {
            if a.is_tau() || a.is_delta() {
                return Err(RegistryError::Invalid(format!(
                    "{a} is a built-in constant and cannot be registered"
                )));
            }
            if effects.insert(a.clone(), (k, e)).is_some() {
                return Err(RegistryError::Invalid(format!("duplicate action {a}")));
            }
        }
        let mut gamma = CommFunction::default();
        for (a, b, c) in self.gamma {
            gamma.insert(a, b, c);
        }
        let priority = PriorityOrder::from_pairs(self.priority)?;
        let mut reg = ActionRegistry {
            registers: self.registers,
            effects,
            gamma,
            priority,
            renamings: self.renamings,
            initial: self.initial,
            fingerprint: 0,
        };
        validate(&reg)?;
        reg.fingerprint = compute_fingerprint(&reg);
        Ok(reg)
    }
}

fn validate(reg: &ActionRegistry) -> Result<(), RegistryError> {
    let mut names = BTreeSet::new();
    for r in &reg.registers {
        if !names.insert(r.name.clone()) {
            return Err(RegistryError::Invalid(format!("duplicate register {}", r.name)));
        }
    }
    let check_targets = |who: &ActionName, targets: &[String]| -> Result<(), RegistryError> {
        let mut seen = BTreeSet::new();
        for t in targets {
            if !names.contains(t) {
                return Err(RegistryError::UnknownRegister(t.clone()));
            }
            if !seen.insert(t) {
                return Err(RegistryError::Invalid(format!("{who} lists register {t} twice")));
            }
        }
        Ok(())
    };
    let mut families: BTreeMap<String, Vec<(&ActionName, &CMatrix, &Vec<String>)>> =
        BTreeMap::new();
    for (a, (k, e)) in &reg.effects {
        match (k, e) {
            (ActionKind::Unitary, QEffect::Unitary { mat, targets }) => {
                check_targets(a, targets)?;
                if mat.dim != 1 << targets.len() {
                    return Err(RegistryError::Invalid(format!("{a}: dimension mismatch")));
                }
                if !mat.is_unitary(EPS_Q) {
                    return Err(RegistryError::NonUnitary(a.to_string()));
                }
            }
            (ActionKind::Projection, QEffect::Projection { mat, targets, family }) => {
                check_targets(a, targets)?;
                if mat.dim != 1 << targets.len() {
                    return Err(RegistryError::Invalid(format!("{a}: dimension mismatch")));
                }
                if !mat.is_projector(EPS_Q) {
                    return Err(RegistryError::NonProjector(a.to_string()));
                }
                families.entry(family.clone()).or_default().push((a, mat, targets));
            }
            (ActionKind::Classical, QEffect::Identity) => {}
            (ActionKind::Shadow(of), QEffect::Identity) => {
                match reg.effects.get(of).map(|(k, _)| k) {
                    Some(ActionKind::Unitary) | Some(ActionKind::Projection) => {}
                    _ => return Err(RegistryError::BadShadow(a.to_string())),
                }
            }
            _ => {
                return Err(RegistryError::Invalid(format!(
                    "{a}: kind and effect do not match"
                )))
            }
        }
    }
    // Sibling projections of one measurement must resolve the identity.
    for (family, members) in &families {
        let (first, rest) = members.split_first().unwrap();
        let mut sum = first.1.clone();
        for m in rest {
            if m.2 != first.2 {
                return Err(RegistryError::Invalid(format!(
                    "family {family}: members disagree on targets"
                )));
            }
            sum = sum.add(m.1);
        }
        let defect = sum.max_abs_diff(&CMatrix::identity(sum.dim));
        if defect > EPS_Q {
            return Err(RegistryError::IncompleteFamily { family: family.clone(), defect });
        }
    }
    for ((a, b), c) in reg.gamma.entries() {
        for x in [a, b, c] {
            match reg.effects.get(x).map(|(k, _)| k) {
                Some(ActionKind::Classical) => {}
                _ => {
                    return Err(RegistryError::BadGamma(format!(
                        "gamma({a}, {b}) = {c}: {x} is not classical"
                    )))
                }
            }
        }
    }
    for (fname, map) in &reg.renamings {
        for (from, to) in map {
            let (fk, fe) = reg
                .effects
                .get(from)
                .ok_or_else(|| RegistryError::UnknownAction(from.to_string()))?;
            let (tk, te) = reg
                .effects
                .get(to)
                .ok_or_else(|| RegistryError::UnknownAction(to.to_string()))?;
            let same_kind = std::mem::discriminant(fk) == std::mem::discriminant(tk);
            let same_effect = match (fe, te) {
                (QEffect::Identity, QEffect::Identity) => true,
                (
                    QEffect::Unitary { mat: m1, targets: t1 },
                    QEffect::Unitary { mat: m2, targets: t2 },
                ) => t1 == t2 && m1.max_abs_diff(m2) <= EPS_Q,
                (
                    QEffect::Projection { mat: m1, targets: t1, .. },
                    QEffect::Projection { mat: m2, targets: t2, .. },
                ) => t1 == t2 && m1.max_abs_diff(m2) <= EPS_Q,
                _ => false,
            };
            if !same_kind || !same_effect {
                return Err(RegistryError::BadRenaming(
                    fname.clone(),
                    format!("{from} -> {to}"),
                ));
            }
        }
    }
    Ok(())
}

fn compute_fingerprint(reg: &ActionRegistry) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    format!("{:?}", reg.to_json()).hash(&mut h);
    h.finish()
}

// ---------------------------------------------------------------------
// JSON file format.

#[derive(Serialize, Deserialize)]
struct RegisterFile {
    name: String,
    visibility: String,
}

#[derive(Serialize, Deserialize)]
struct ActionFile {
    name: String,
    #[serde(default)]
    indices: Vec<i64>,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<(f64, f64)>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    family: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shadow_of: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct InitialFile {
    registers: Vec<String>,
    matrix: Vec<Vec<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    registers: Vec<RegisterFile>,
    actions: Vec<ActionFile>,
    #[serde(default)]
    gamma: Vec<[String; 3]>,
    #[serde(default)]
    priority: Vec<[String; 2]>,
    #[serde(default)]
    renamings: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    initial: Vec<InitialFile>,
}

fn parse_action_name(s: &str) -> Result<ActionName, RegistryError> {
    crate::parse::parse(s)
        .ok()
        .and_then(|t| match t {
            crate::term::ProcessTerm::Atom(a) => Some(a),
            _ => None,
        })
        .ok_or_else(|| RegistryError::Invalid(format!("bad action name {s:?}")))
}

fn matrix_of(rows: &[Vec<(f64, f64)>]) -> Result<CMatrix, RegistryError> {
    CMatrix::from_rows(rows).ok_or_else(|| RegistryError::Invalid("ragged matrix".to_string()))
}

impl RegistryFile {
    fn build(self) -> Result<ActionRegistry, RegistryError> {
        let mut b = ActionRegistry::builder();
        for r in self.registers {
            let vis = match r.visibility.as_str() {
                "public" => Visibility::Public,
                "internal" => Visibility::Internal,
                other => {
                    return Err(RegistryError::Invalid(format!("visibility {other:?}")))
                }
            };
            b = b.register(Register { name: r.name, visibility: vis });
        }
        for a in self.actions {
            let name = ActionName { name: a.name, indices: a.indices };
            b = match a.kind.as_str() {
                "classical" => b.classical(name),
                "unitary" => {
                    let m = matrix_of(a.matrix.as_deref().ok_or_else(|| {
                        RegistryError::Invalid(format!("{name}: unitary without matrix"))
                    })?)?;
                    let targets: Vec<&str> = a.targets.iter().map(|s| s.as_str()).collect();
                    b.unitary(name, m, &targets)
                }
                "projection" => {
                    let m = matrix_of(a.matrix.as_deref().ok_or_else(|| {
                        RegistryError::Invalid(format!("{name}: projection without matrix"))
                    })?)?;
                    let family = a.family.clone().ok_or_else(|| {
                        RegistryError::Invalid(format!("{name}: projection without family"))
                    })?;
                    let targets: Vec<&str> = a.targets.iter().map(|s| s.as_str()).collect();
                    b.projection(name, m, &targets, &family)
                }
                "shadow" => {
                    let of = a.shadow_of.as_deref().ok_or_else(|| {
                        RegistryError::Invalid(format!("{name}: shadow without shadow_of"))
                    })?;
                    let of = parse_action_name(of)?;
                    b.shadow(name, of)
                }
                other => return Err(RegistryError::Invalid(format!("kind {other:?}"))),
            };
        }
        for [a, bb, c] in self.gamma {
            b = b.comm(parse_action_name(&a)?, parse_action_name(&bb)?, parse_action_name(&c)?);
        }
        for [a, bb] in self.priority {
            b = b.prefer(parse_action_name(&a)?, parse_action_name(&bb)?);
        }
        for (fname, map) in self.renamings {
            let mut entries = Vec::new();
            for (from, to) in map {
                entries.push((parse_action_name(&from)?, parse_action_name(&to)?));
            }
            b = b.renaming(&fname, entries);
        }
        for i in self.initial {
            let m = matrix_of(&i.matrix)?;
            let regs: Vec<&str> = i.registers.iter().map(|s| s.as_str()).collect();
            b = b.initial_factor(&regs, m);
        }
        b.build()
    }
}

impl From<&ActionRegistry> for RegistryFile {
    fn from(reg: &ActionRegistry) -> Self {
        let rows = |m: &CMatrix| -> Vec<Vec<(f64, f64)>> {
            (0..m.dim)
                .map(|r| (0..m.dim).map(|c| (m[(r, c)].re, m[(r, c)].im)).collect())
                .collect()
        };
        RegistryFile {
            registers: reg
                .registers
                .iter()
                .map(|r| RegisterFile {
                    name: r.name.clone(),
                    visibility: match r.visibility {
                        Visibility::Public => "public".to_string(),
                        Visibility::Internal => "internal".to_string(),
                    },
                })
                .collect(),
            actions: reg
                .effects
                .iter()
                .map(|(a, (k, e))| {
                    let (kind, matrix, targets, family, shadow_of) = match (k, e) {
                        (ActionKind::Classical, _) => ("classical", None, vec![], None, None),
                        (ActionKind::Unitary, QEffect::Unitary { mat, targets }) => {
                            ("unitary", Some(rows(mat)), targets.clone(), None, None)
                        }
                        (
                            ActionKind::Projection,
                            QEffect::Projection { mat, targets, family },
                        ) => (
                            "projection",
                            Some(rows(mat)),
                            targets.clone(),
                            Some(family.clone()),
                            None,
                        ),
                        (ActionKind::Shadow(of), _) => {
                            ("shadow", None, vec![], None, Some(of.to_string()))
                        }
                        _ => unreachable!("validated registry"),
                    };
                    ActionFile {
                        name: a.name.clone(),
                        indices: a.indices.clone(),
                        kind: kind.to_string(),
                        matrix,
                        targets,
                        family,
                        shadow_of,
                    }
                })
                .collect(),
            gamma: reg
                .gamma
                .entries()
                .map(|((a, b), c)| [a.to_string(), b.to_string(), c.to_string()])
                .collect(),
            priority: reg
                .priority
                .pairs()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
            renamings: reg
                .renamings
                .iter()
                .map(|(f, m)| {
                    (
                        f.clone(),
                        m.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
                    )
                })
                .collect(),
            initial: reg
                .initial
                .iter()
                .map(|(regs, m)| InitialFile { registers: regs.clone(), matrix: rows(m) })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmatrix::gates::*;

    fn small() -> ActionRegistry {
        ActionRegistry::builder()
            .register(Register::public("q0"))
            .register(Register::public("q1"))
            .unitary(ActionName::plain("h"), hadamard(), &["q0"])
            .projection(ActionName::indexed("m", &[0]), basis_projector(1, 0), &["q0"], "m")
            .projection(ActionName::indexed("m", &[1]), basis_projector(1, 1), &["q0"], "m")
            .classical(ActionName::plain("a"))
            .classical(ActionName::plain("b"))
            .classical(ActionName::plain("c"))
            .comm(ActionName::plain("a"), ActionName::plain("b"), ActionName::plain("c"))
            .prefer(ActionName::plain("a"), ActionName::plain("b"))
            .build()
            .unwrap()
    }

    #[test]
    fn roundtrips_through_json() {
        let reg = small();
        let v = reg.to_json();
        let reg2 = ActionRegistry::from_json(&v).unwrap();
        assert_eq!(reg.fingerprint(), reg2.fingerprint());
        assert_eq!(
            reg2.kind_of(&ActionName::plain("a")).unwrap(),
            &ActionKind::Classical
        );
    }

    #[test]
    fn incomplete_family_rejected() {
        let r = ActionRegistry::builder()
            .register(Register::public("q0"))
            .projection(ActionName::indexed("m", &[0]), basis_projector(1, 0), &["q0"], "m")
            .build();
        assert!(matches!(r, Err(RegistryError::IncompleteFamily { .. })));
    }

    #[test]
    fn gamma_requires_classical() {
        let r = ActionRegistry::builder()
            .register(Register::public("q0"))
            .unitary(ActionName::plain("h"), hadamard(), &["q0"])
            .classical(ActionName::plain("a"))
            .classical(ActionName::plain("c"))
            .comm(ActionName::plain("a"), ActionName::plain("h"), ActionName::plain("c"))
            .build();
        assert!(matches!(r, Err(RegistryError::BadGamma(_))));
    }

    #[test]
    fn priority_cycle_rejected() {
        let r = ActionRegistry::builder()
            .classical(ActionName::plain("a"))
            .classical(ActionName::plain("b"))
            .prefer(ActionName::plain("a"), ActionName::plain("b"))
            .prefer(ActionName::plain("b"), ActionName::plain("a"))
            .build();
        assert!(matches!(r, Err(RegistryError::PriorityCycle(_))));
    }

    #[test]
    fn abstraction_internality() {
        let reg = ActionRegistry::builder()
            .register(Register::public("p"))
            .register(Register::internal("i"))
            .unitary(ActionName::plain("u_pub"), hadamard(), &["p"])
            .unitary(ActionName::plain("u_int"), hadamard(), &["i"])
            .classical(ActionName::plain("a"))
            .build()
            .unwrap();
        let ok: BTreeSet<_> = [ActionName::plain("u_int"), ActionName::plain("a")].into();
        assert!(reg.check_abstraction_set(&ok).is_ok());
        let bad: BTreeSet<_> = [ActionName::plain("u_pub")].into();
        assert!(matches!(
            reg.check_abstraction_set(&bad),
            Err(RegistryError::AbstractionNotInternal(_, _))
        ));
    }
}
