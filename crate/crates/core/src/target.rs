//! Guard-tree targets: the in-process stand-in for an instrumented binary.
//!
//! A [`GuardProgram`] is a DAG of comparison guards. Executing an input walks
//! the DAG from the entry node, records every edge taken, and (for the sites
//! whose adaptive switch is on) reports the comparison outcome, relation and
//! operand difference the way compare-hooking instrumentation would.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("node {node}: {message}")]
    InvalidNode { node: NodeId, message: String },
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
}

/// Relation between the two compared operands, applied as `f R 0` where
/// `f = op1 - op2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionType {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl ConditionType {
    pub const ALL: [ConditionType; 6] = [
        ConditionType::Lt,
        ConditionType::Le,
        ConditionType::Gt,
        ConditionType::Ge,
        ConditionType::Eq,
        ConditionType::Ne,
    ];

    pub fn holds(self, f: i128) -> bool {
        match self {
            ConditionType::Lt => f < 0,
            ConditionType::Le => f <= 0,
            ConditionType::Gt => f > 0,
            ConditionType::Ge => f >= 0,
            ConditionType::Eq => f == 0,
            ConditionType::Ne => f != 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionType::Lt => "lt",
            ConditionType::Le => "le",
            ConditionType::Gt => "gt",
            ConditionType::Ge => "ge",
            ConditionType::Eq => "eq",
            ConditionType::Ne => "ne",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endian {
    Little,
    Big,
}

/// Location and interpretation of an integer operand inside the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntOperand {
    pub offset: usize,
    pub width: usize,
    pub endian: Endian,
    pub signed: bool,
}

impl IntOperand {
    /// Reads the operand, zero-extending past the end of `input`.
    pub fn read(&self, input: &[u8]) -> i128 {
        let mut raw: u64 = 0;
        for i in 0..self.width {
            let pos = match self.endian {
                Endian::Little => self.width - 1 - i,
                Endian::Big => i,
            };
            let byte = input.get(self.offset + pos).copied().unwrap_or(0);
            raw = (raw << 8) | byte as u64;
        }
        if self.signed {
            let shift = 64 - 8 * self.width as u32;
            (((raw << shift) as i64) >> shift) as i128
        } else {
            raw as i128
        }
    }

    /// Inclusive value range representable by this operand.
    pub fn range(&self) -> (i128, i128) {
        let bits = 8 * self.width as u32;
        if self.signed {
            (-(1i128 << (bits - 1)), (1i128 << (bits - 1)) - 1)
        } else {
            (0, (1i128 << bits) - 1)
        }
    }

    /// Writes `value` (clamped to the operand range) back into `input`. Bytes
    /// past the end of `input` are dropped.
    pub fn write(&self, input: &mut [u8], value: i128) {
        let (lo, hi) = self.range();
        let raw = value.clamp(lo, hi) as u64;
        for i in 0..self.width {
            let byte = (raw >> (8 * i)) as u8;
            let pos = match self.endian {
                Endian::Little => i,
                Endian::Big => self.width - 1 - i,
            };
            if let Some(slot) = input.get_mut(self.offset + pos) {
                *slot = byte;
            }
        }
    }

    pub fn bytes(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Comparison {
    /// Integer operand read from the input against a constant.
    Int { operand: IntOperand, constant: i128 },
    /// Byte string read from the input against a constant string; shorter
    /// side is zero-padded.
    Str {
        offset: usize,
        length: usize,
        constant: Vec<u8>,
    },
    /// XOR of all bytes in a window against a one-byte constant.
    Xor {
        offset: usize,
        length: usize,
        constant: u8,
    },
}

impl Comparison {
    /// Input byte positions the comparison reads.
    pub fn window(&self) -> std::ops::Range<usize> {
        match self {
            Comparison::Int { operand, .. } => operand.bytes(),
            Comparison::Str { offset, length, .. } | Comparison::Xor { offset, length, .. } => {
                *offset..*offset + *length
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeBody {
    Guard {
        comparison: Comparison,
        relation: ConditionType,
        taken: Option<NodeId>,
        nottaken: Option<NodeId>,
    },
    /// Terminal node; reaching it is reported as a finding.
    Bug,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuardNode {
    pub id: NodeId,
    pub body: NodeBody,
}

impl GuardNode {
    pub fn is_guard(&self) -> bool {
        matches!(self.body, NodeBody::Guard { .. })
    }

    pub fn children(&self) -> [Option<NodeId>; 2] {
        match &self.body {
            NodeBody::Guard {
                taken, nottaken, ..
            } => [*taken, *nottaken],
            NodeBody::Bug => [None, None],
        }
    }
}

pub fn taken_edge(node: NodeId) -> EdgeId {
    2 * node
}

pub fn nottaken_edge(node: NodeId) -> EdgeId {
    2 * node + 1
}

pub fn edge_source(edge: EdgeId) -> NodeId {
    edge / 2
}

/// A validated guard program. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuardProgram {
    nodes: Vec<GuardNode>,
    entry: NodeId,
    max_input_len: usize,
}

impl GuardProgram {
    pub fn new(
        nodes: Vec<GuardNode>,
        entry: NodeId,
        max_input_len: usize,
    ) -> Result<Self, TargetError> {
        let program = GuardProgram {
            nodes,
            entry,
            max_input_len,
        };
        program.validate()?;
        Ok(program)
    }

    pub fn nodes(&self) -> &[GuardNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&GuardNode> {
        self.nodes.get(id)
    }

    pub fn entry(&self) -> NodeId {
        self.entry
    }

    pub fn max_input_len(&self) -> usize {
        self.max_input_len
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Size of the edge id space (`2 * node_count`); ids belonging to bug
    /// nodes are never produced.
    pub fn edge_space(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn is_edge(&self, edge: EdgeId) -> bool {
        self.nodes
            .get(edge_source(edge))
            .is_some_and(GuardNode::is_guard)
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edge_space()).filter(|e| self.is_edge(*e))
    }

    pub fn edge_count(&self) -> usize {
        2 * self.nodes.iter().filter(|n| n.is_guard()).count()
    }

    pub fn edge_target(&self, edge: EdgeId) -> Option<NodeId> {
        let node = self.nodes.get(edge_source(edge))?;
        node.children()[edge % 2]
    }

    pub fn guard_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.is_guard()).map(|n| n.id)
    }

    fn validate(&self) -> Result<(), TargetError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(TargetError::Invalid("program has no nodes".into()));
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.id != idx {
                return Err(TargetError::InvalidNode {
                    node: node.id,
                    message: format!("node ids must be dense 0..{n}, found id at position {idx}"),
                });
            }
        }
        match self.nodes.get(self.entry) {
            None => {
                return Err(TargetError::Invalid(format!(
                    "entry node {} does not exist",
                    self.entry
                )))
            }
            Some(node) if !node.is_guard() => {
                return Err(TargetError::InvalidNode {
                    node: self.entry,
                    message: "entry must be a guard node".into(),
                })
            }
            Some(_) => {}
        }
        for node in &self.nodes {
            let bad = |message: String| TargetError::InvalidNode {
                node: node.id,
                message,
            };
            let NodeBody::Guard { comparison, .. } = &node.body else {
                continue;
            };
            for child in node.children().into_iter().flatten() {
                if child >= n {
                    return Err(bad(format!("child {child} does not exist")));
                }
            }
            match comparison {
                Comparison::Int { operand, .. } => {
                    if ![1, 2, 4, 8].contains(&operand.width) {
                        return Err(bad(format!("width {} not in {{1,2,4,8}}", operand.width)));
                    }
                }
                Comparison::Str { length, .. } | Comparison::Xor { length, .. } => {
                    if *length == 0 {
                        return Err(bad("length must be positive".into()));
                    }
                }
            }
            let window = comparison.window();
            if window.end > self.max_input_len {
                return Err(bad(format!(
                    "operand window {}..{} exceeds max_input_len {}",
                    window.start, window.end, self.max_input_len
                )));
            }
        }
        // Reject cycles with an iterative three-colour DFS.
        let mut colour = vec![0u8; n];
        for start in 0..n {
            if colour[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            colour[start] = 1;
            while let Some((node, next)) = stack.pop() {
                let children = self.nodes[node].children();
                if next < 2 {
                    stack.push((node, next + 1));
                    if let Some(child) = children[next] {
                        match colour[child] {
                            0 => {
                                colour[child] = 1;
                                stack.push((child, 0));
                            }
                            1 => {
                                return Err(TargetError::InvalidNode {
                                    node,
                                    message: format!("edge to {child} closes a cycle"),
                                })
                            }
                            _ => {}
                        }
                    }
                } else {
                    colour[node] = 2;
                }
            }
        }
        Ok(())
    }
}

/// Value half of the feedback tuple a hooked comparison reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObservedValue {
    Int { f: i128, operand: IntOperand },
    Xor { f: i128 },
    Str {
        byte_diffs: Vec<i128>,
        compared_length: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchObservation {
    pub site: NodeId,
    pub outcome: bool,
    pub relation: ConditionType,
    pub value: ObservedValue,
}

impl BranchObservation {
    /// Scalar `op1 - op2`; for strings, the sign of the first differing byte.
    pub fn f_value(&self) -> i128 {
        match &self.value {
            ObservedValue::Int { f, .. } | ObservedValue::Xor { f } => *f,
            ObservedValue::Str { byte_diffs, .. } => byte_diffs
                .iter()
                .find(|d| **d != 0)
                .map_or(0, |d| d.signum()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExecutionTrace {
    /// Edges in path order. A path through a DAG never repeats an edge.
    pub edges: Vec<EdgeId>,
    pub observations: Vec<BranchObservation>,
    pub exec_time: u64,
    pub finding: Option<NodeId>,
}

impl ExecutionTrace {
    pub fn observation(&self, site: NodeId) -> Option<&BranchObservation> {
        self.observations.iter().find(|o| o.site == site)
    }

    pub fn edge_set(&self) -> BTreeSet<EdgeId> {
        self.edges.iter().copied().collect()
    }
}

fn evaluate(comparison: &Comparison, input: &[u8]) -> (i128, ObservedValue) {
    match comparison {
        Comparison::Int { operand, constant } => {
            let f = operand.read(input) - constant;
            (
                f,
                ObservedValue::Int {
                    f,
                    operand: *operand,
                },
            )
        }
        Comparison::Xor {
            offset,
            length,
            constant,
        } => {
            let acc = (*offset..offset + length)
                .map(|i| input.get(i).copied().unwrap_or(0))
                .fold(0u8, |a, b| a ^ b);
            let f = acc as i128 - *constant as i128;
            (f, ObservedValue::Xor { f })
        }
        Comparison::Str {
            offset,
            length,
            constant,
        } => {
            let compared_length = (*length).max(constant.len());
            let byte_diffs: Vec<i128> = (0..compared_length)
                .map(|i| {
                    let lhs = if i < *length {
                        input.get(offset + i).copied().unwrap_or(0)
                    } else {
                        0
                    };
                    let rhs = constant.get(i).copied().unwrap_or(0);
                    lhs as i128 - rhs as i128
                })
                .collect();
            let f = byte_diffs
                .iter()
                .find(|d| **d != 0)
                .map_or(0, |d| d.signum());
            (
                f,
                ObservedValue::Str {
                    byte_diffs,
                    compared_length,
                },
            )
        }
    }
}

/// Runs `input` through `program`. Observations are emitted only for sites
/// with `active[site] == true`.
pub fn execute(program: &GuardProgram, input: &[u8], active: &[bool]) -> ExecutionTrace {
    let mut edges = Vec::new();
    let mut observations = Vec::new();
    let mut finding = None;
    let mut current = Some(program.entry);
    while let Some(id) = current {
        let node = &program.nodes[id];
        match &node.body {
            NodeBody::Bug => {
                finding = Some(id);
                current = None;
            }
            NodeBody::Guard {
                comparison,
                relation,
                taken,
                nottaken,
            } => {
                let (f, value) = evaluate(comparison, input);
                let outcome = relation.holds(f);
                if active.get(id).copied().unwrap_or(false) {
                    observations.push(BranchObservation {
                        site: id,
                        outcome,
                        relation: *relation,
                        value,
                    });
                }
                if outcome {
                    edges.push(taken_edge(id));
                    current = *taken;
                } else {
                    edges.push(nottaken_edge(id));
                    current = *nottaken;
                }
            }
        }
    }
    ExecutionTrace {
        edges,
        observations,
        exec_time: 0,
        finding,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    /// Every execution costs one time unit.
    Synthetic,
    Wall,
}

/// An execution handle: shared program plus this handle's adaptive switches.
#[derive(Clone, Debug)]
pub struct Harness {
    program: Arc<GuardProgram>,
    active: Vec<bool>,
    clock: Clock,
}

impl Harness {
    pub fn new(program: Arc<GuardProgram>, clock: Clock) -> Self {
        let active = vec![false; program.node_count()];
        Harness {
            program,
            active,
            clock,
        }
    }

    pub fn program(&self) -> &Arc<GuardProgram> {
        &self.program
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn set_active_sites<I>(&mut self, sites: I) -> Result<(), TargetError>
    where
        I: IntoIterator<Item = NodeId>,
    {
        let mut active = vec![false; self.program.node_count()];
        for site in sites {
            *active.get_mut(site).ok_or(TargetError::UnknownNode(site))? = true;
        }
        self.active = active;
        Ok(())
    }

    pub fn active_sites(&self) -> BTreeSet<NodeId> {
        (0..self.active.len()).filter(|i| self.active[*i]).collect()
    }

    pub fn execute(&self, input: &[u8]) -> ExecutionTrace {
        match self.clock {
            Clock::Synthetic => {
                let mut trace = execute(&self.program, input, &self.active);
                trace.exec_time = 1;
                trace
            }
            Clock::Wall => {
                let start = Instant::now();
                let mut trace = execute(&self.program, input, &self.active);
                trace.exec_time = (start.elapsed().as_nanos() as u64).max(1);
                trace
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Target documents
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetDocument {
    pub max_input_len: usize,
    pub entry: NodeId,
    pub nodes: Vec<NodeDocument>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDocument {
    pub id: NodeId,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endian: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<serde_json::Value>,
    #[serde(default)]
    pub taken: Option<NodeId>,
    #[serde(default)]
    pub nottaken: Option<NodeId>,
}

/// Parses and validates a JSON target document.
pub fn load_program(document: &[u8]) -> Result<GuardProgram, TargetError> {
    let doc: TargetDocument = serde_json::from_slice(document).map_err(|e| TargetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    program_from_document(&doc)
}

pub fn program_from_document(doc: &TargetDocument) -> Result<GuardProgram, TargetError> {
    let mut nodes: Vec<GuardNode> = doc
        .nodes
        .iter()
        .map(node_from_document)
        .collect::<Result<_, _>>()?;
    nodes.sort_by_key(|n| n.id);
    GuardProgram::new(nodes, doc.entry, doc.max_input_len)
}

fn node_from_document(doc: &NodeDocument) -> Result<GuardNode, TargetError> {
    let bad = |message: String| TargetError::InvalidNode {
        node: doc.id,
        message,
    };
    let need = |field: &str, v: Option<usize>| v.ok_or_else(|| bad(format!("missing field `{field}`")));
    if doc.kind == "bug" {
        return Ok(GuardNode {
            id: doc.id,
            body: NodeBody::Bug,
        });
    }
    let relation = doc
        .relation
        .as_deref()
        .ok_or_else(|| bad("missing field `relation`".into()))?;
    let relation = ConditionType::parse(relation)
        .ok_or_else(|| bad(format!("unknown relation `{relation}`")))?;
    let constant = doc
        .constant
        .as_ref()
        .ok_or_else(|| bad("missing field `constant`".into()))?;
    let offset = need("offset", doc.offset)?;
    let int_constant = || -> Result<i128, TargetError> {
        constant
            .as_i64()
            .map(i128::from)
            .or_else(|| constant.as_u64().map(i128::from))
            .ok_or_else(|| bad(format!("constant {constant} is not a 64-bit integer")))
    };
    let comparison = match doc.kind.as_str() {
        "int" => {
            let endian = match doc.endian.as_deref().unwrap_or("le") {
                "le" => Endian::Little,
                "be" => Endian::Big,
                other => return Err(bad(format!("unknown endian `{other}`"))),
            };
            Comparison::Int {
                operand: IntOperand {
                    offset,
                    width: need("width", doc.width)?,
                    endian,
                    signed: doc.signed.unwrap_or(false),
                },
                constant: int_constant()?,
            }
        }
        "str" => {
            let encoded = constant
                .as_str()
                .ok_or_else(|| bad("string constant must be base64".into()))?;
            let constant = BASE64
                .decode(encoded)
                .map_err(|e| bad(format!("bad base64 constant: {e}")))?;
            Comparison::Str {
                offset,
                length: need("length", doc.length)?,
                constant,
            }
        }
        "xor" => {
            let value = int_constant()?;
            let constant = u8::try_from(value)
                .map_err(|_| bad(format!("xor constant {value} does not fit one byte")))?;
            Comparison::Xor {
                offset,
                length: need("length", doc.length)?,
                constant,
            }
        }
        other => return Err(bad(format!("unknown kind `{other}`"))),
    };
    Ok(GuardNode {
        id: doc.id,
        body: NodeBody::Guard {
            comparison,
            relation,
            taken: doc.taken,
            nottaken: doc.nottaken,
        },
    })
}

impl GuardProgram {
    pub fn to_document(&self) -> TargetDocument {
        let nodes = self
            .nodes
            .iter()
            .map(|node| match &node.body {
                NodeBody::Bug => NodeDocument {
                    id: node.id,
                    kind: "bug".into(),
                    ..Default::default()
                },
                NodeBody::Guard {
                    comparison,
                    relation,
                    taken,
                    nottaken,
                } => {
                    let mut doc = NodeDocument {
                        id: node.id,
                        relation: Some(relation.as_str().into()),
                        taken: *taken,
                        nottaken: *nottaken,
                        ..Default::default()
                    };
                    match comparison {
                        Comparison::Int { operand, constant } => {
                            doc.kind = "int".into();
                            doc.offset = Some(operand.offset);
                            doc.width = Some(operand.width);
                            doc.endian = Some(
                                match operand.endian {
                                    Endian::Little => "le",
                                    Endian::Big => "be",
                                }
                                .into(),
                            );
                            doc.signed = Some(operand.signed);
                            doc.constant = Some(if *constant < 0 {
                                (*constant as i64).into()
                            } else {
                                (*constant as u64).into()
                            });
                        }
                        Comparison::Str {
                            offset,
                            length,
                            constant,
                        } => {
                            doc.kind = "str".into();
                            doc.offset = Some(*offset);
                            doc.length = Some(*length);
                            doc.constant = Some(BASE64.encode(constant).into());
                        }
                        Comparison::Xor {
                            offset,
                            length,
                            constant,
                        } => {
                            doc.kind = "xor".into();
                            doc.offset = Some(*offset);
                            doc.length = Some(*length);
                            doc.constant = Some((*constant as u64).into());
                        }
                    }
                    doc
                }
            })
            .collect();
        TargetDocument {
            max_input_len: self.max_input_len,
            entry: self.entry,
            nodes,
        }
    }
}
