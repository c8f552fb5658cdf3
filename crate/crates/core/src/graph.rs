//! Hierarchical program model: token types, task definitions, channels, and
//! the elaboration of a definition tree into concrete leaf instances.
//!
//! A [`ProgramGraph`] is a set of [`TaskDefinition`]s plus the name of the
//! top-level task. Leaf definitions carry a behavior; parent definitions
//! declare local channels and invoke children with explicit port bindings.
//! [`ProgramGraph::validate`] reports every structural violation as data, and
//! [`ProgramGraph::flatten`] turns a valid graph into an [`Elaboration`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::behavior::{BehaviorLibrary, BehaviorRef};

/// Capacity used when a builder does not state one.
pub const DEFAULT_CAPACITY: usize = 2;

/// Widest payload a token can carry.
pub const MAX_TOKEN_BITS: u32 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("graph is not valid:\n{0}")]
    NotValidated(ValidationReport),
    #[error("failed to parse graph: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenType {
    pub name: String,
    /// Payload bits, not counting the EoT sideband bit.
    pub bit_width: u32,
}

impl TokenType {
    pub fn new(name: impl Into<String>, bit_width: u32) -> Self {
        Self {
            name: name.into(),
            bit_width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortDirection {
    InputStream,
    OutputStream,
    Scalar,
}

impl PortDirection {
    pub fn is_stream(self) -> bool {
        !matches!(self, PortDirection::Scalar)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDecl {
    pub name: String,
    pub direction: PortDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_type: Option<String>,
}

impl PortDecl {
    pub fn input(name: impl Into<String>, token_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            direction: PortDirection::InputStream,
            token_type: Some(token_type.into()),
        }
    }

    pub fn output(name: impl Into<String>, token_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            direction: PortDirection::OutputStream,
            token_type: Some(token_type.into()),
        }
    }

    pub fn scalar(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            direction: PortDirection::Scalar,
            token_type: None,
        }
    }
}

/// Constant bound to a scalar port at instantiation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarValue {
    Int(i64),
    Float(f64),
    IntList(Vec<i64>),
    FloatList(Vec<f64>),
}

impl ScalarValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ScalarValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match self {
            ScalarValue::Float(v) => Some(*v),
            ScalarValue::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_int_list(&self) -> Option<&[i64]> {
        match self {
            ScalarValue::IntList(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_float_list(&self) -> Option<Vec<f64>> {
        match self {
            ScalarValue::FloatList(v) => Some(v.clone()),
            ScalarValue::IntList(v) => Some(v.iter().map(|&x| x as f64).collect()),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binding {
    /// A channel declared by the invoking parent.
    Channel(String),
    /// One of the invoking parent's own ports (pass-through).
    Port(String),
    /// A constant for a scalar port.
    Scalar(ScalarValue),
}

impl Binding {
    pub fn channel(name: impl Into<String>) -> Self {
        Binding::Channel(name.into())
    }

    pub fn port(name: impl Into<String>) -> Self {
        Binding::Port(name.into())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDecl {
    pub name: String,
    pub token_type: String,
    pub capacity: usize,
}

/// One child invocation inside a parent definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildInvocation {
    pub definition: String,
    pub bindings: BTreeMap<String, Binding>,
}

impl ChildInvocation {
    pub fn of(definition: impl Into<String>) -> Self {
        Self {
            definition: definition.into(),
            bindings: BTreeMap::new(),
        }
    }

    pub fn bind(mut self, port: impl Into<String>, binding: Binding) -> Self {
        self.bindings.insert(port.into(), binding);
        self
    }

    pub fn channel(self, port: impl Into<String>, channel: impl Into<String>) -> Self {
        self.bind(port, Binding::Channel(channel.into()))
    }

    pub fn pass(self, port: impl Into<String>, parent_port: impl Into<String>) -> Self {
        self.bind(port, Binding::Port(parent_port.into()))
    }

    pub fn scalar(self, port: impl Into<String>, value: ScalarValue) -> Self {
        self.bind(port, Binding::Scalar(value))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Leaf,
    Parent,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskDefinition {
    pub name: String,
    pub ports: Vec<PortDecl>,
    pub kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<BehaviorRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ChildInvocation>,
    #[serde(default, alias = "channels", skip_serializing_if = "Vec::is_empty")]
    pub local_channels: Vec<ChannelDecl>,
}

impl PartialEq for TaskDefinition {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.ports == other.ports
            && self.kind == other.kind
            && self.behavior.as_ref().map(BehaviorRef::key)
                == other.behavior.as_ref().map(BehaviorRef::key)
            && self.children == other.children
            && self.local_channels == other.local_channels
    }
}

impl TaskDefinition {
    pub fn leaf(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ports: Vec::new(),
            kind: TaskKind::Leaf,
            behavior: None,
            children: Vec::new(),
            local_channels: Vec::new(),
        }
    }

    pub fn parent(name: impl Into<String>) -> Self {
        Self {
            kind: TaskKind::Parent,
            ..Self::leaf(name)
        }
    }

    pub fn input(mut self, name: impl Into<String>, token_type: impl Into<String>) -> Self {
        self.ports.push(PortDecl::input(name, token_type));
        self
    }

    pub fn output(mut self, name: impl Into<String>, token_type: impl Into<String>) -> Self {
        self.ports.push(PortDecl::output(name, token_type));
        self
    }

    pub fn scalar(mut self, name: impl Into<String>) -> Self {
        self.ports.push(PortDecl::scalar(name));
        self
    }

    pub fn behavior(mut self, behavior: BehaviorRef) -> Self {
        self.behavior = Some(behavior);
        self
    }

    /// Declares a local channel, like `channel<type, capacity>`.
    pub fn channel(
        mut self,
        name: impl Into<String>,
        token_type: impl Into<String>,
        capacity: usize,
    ) -> Self {
        self.local_channels.push(ChannelDecl {
            name: name.into(),
            token_type: token_type.into(),
            capacity,
        });
        self
    }

    /// Invokes a child task with its bindings.
    pub fn invoke(mut self, child: ChildInvocation) -> Self {
        self.children.push(child);
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.kind == TaskKind::Leaf
    }

    pub fn port(&self, name: &str) -> Option<&PortDecl> {
        self.ports.iter().find(|p| p.name == name)
    }

    /// Fingerprint of the behavior, used for content hashing by codegen.
    pub fn fingerprint(&self) -> &str {
        self.behavior.as_ref().map(BehaviorRef::key).unwrap_or("")
    }
}

/// One structural problem found by [`ProgramGraph::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            message: message.into(),
        });
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId(pub usize);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ch{}", self.0)
    }
}

/// Where a flattened channel attaches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Instance { instance: InstanceId, port: String },
    /// An external port of the top-level task, driven or drained by the harness.
    Boundary { port: String },
}

/// A placed leaf task wired to concrete channels.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub instance_id: InstanceId,
    pub definition: String,
    pub path: String,
    /// Index into [`Elaboration::parents`]; `None` when the top task is a leaf.
    pub parent: Option<usize>,
    pub channel_bindings: BTreeMap<String, ChannelId>,
    pub scalars: BTreeMap<String, ScalarValue>,
}

/// A channel after elaboration, connecting two leaves or a leaf and the boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlatChannel {
    pub id: ChannelId,
    pub path: String,
    pub token_type: TokenType,
    pub capacity: usize,
    /// Declaring parent (index into [`Elaboration::parents`]); `None` for boundary channels.
    pub owner: Option<usize>,
    pub producer: Endpoint,
    pub consumer: Endpoint,
}

impl FlatChannel {
    pub fn is_boundary(&self) -> bool {
        self.owner.is_none()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Leaf(InstanceId),
    Parent(usize),
}

/// A placed parent task. Parents never execute; they only group children.
#[derive(Clone, Debug, PartialEq)]
pub struct ParentInstance {
    pub path: String,
    pub definition: String,
    pub parent: Option<usize>,
    pub children: Vec<NodeRef>,
    pub channels: Vec<ChannelId>,
    /// For each stream port of this parent, the channel it resolves to.
    pub port_channels: BTreeMap<String, ChannelId>,
}

/// The flattened program: leaf instances in depth-first declaration order,
/// the channels between them, and the parent tree kept for codegen.
#[derive(Clone, Debug, PartialEq)]
pub struct Elaboration {
    pub top: String,
    pub instances: Vec<TaskInstance>,
    pub channels: Vec<FlatChannel>,
    pub parents: Vec<ParentInstance>,
}

impl Elaboration {
    pub fn instance(&self, id: InstanceId) -> &TaskInstance {
        &self.instances[id.0]
    }

    pub fn channel(&self, id: ChannelId) -> &FlatChannel {
        &self.channels[id.0]
    }

    pub fn channel_by_path(&self, path: &str) -> Option<&FlatChannel> {
        self.channels.iter().find(|c| c.path == path)
    }

    pub fn instance_by_path(&self, path: &str) -> Option<&TaskInstance> {
        self.instances.iter().find(|i| i.path == path)
    }

    pub fn boundary_channels(&self) -> impl Iterator<Item = &FlatChannel> {
        self.channels.iter().filter(|c| c.is_boundary())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    /// Unique leaf definitions reachable from the top.
    pub num_definitions: usize,
    /// Leaf task instances after flattening.
    pub num_instances: usize,
    pub num_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgramGraph {
    pub token_types: Vec<TokenType>,
    pub definitions: Vec<TaskDefinition>,
    pub top: String,
    /// Values for the top-level task's scalar ports.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub top_args: BTreeMap<String, ScalarValue>,
}

impl ProgramGraph {
    pub fn new(top: impl Into<String>) -> Self {
        Self {
            token_types: Vec::new(),
            definitions: Vec::new(),
            top: top.into(),
            top_args: BTreeMap::new(),
        }
    }

    pub fn add_token_type(&mut self, ty: TokenType) -> Result<&mut Self, GraphError> {
        if self.token_type(&ty.name).is_some() {
            return Err(GraphError::DuplicateName(ty.name));
        }
        self.token_types.push(ty);
        Ok(self)
    }

    pub fn add_definition(&mut self, def: TaskDefinition) -> Result<&mut Self, GraphError> {
        if self.definition(&def.name).is_some() {
            return Err(GraphError::DuplicateName(def.name));
        }
        self.definitions.push(def);
        Ok(self)
    }

    pub fn definition(&self, name: &str) -> Option<&TaskDefinition> {
        self.definitions.iter().find(|d| d.name == name)
    }

    pub fn token_type(&self, name: &str) -> Option<&TokenType> {
        self.token_types.iter().find(|t| t.name == name)
    }

    /// Attaches behavior factories from `library` to leaves whose behavior
    /// was loaded by key only. Returns the keys that could not be resolved.
    pub fn resolve_behaviors(&mut self, library: &BehaviorLibrary) -> Vec<String> {
        let mut missing = Vec::new();
        for def in &mut self.definitions {
            if let Some(b) = &mut def.behavior {
                if !b.is_resolved() {
                    match library.get(b.key()) {
                        Some(found) => *b = found.clone(),
                        None => missing.push(b.key().to_owned()),
                    }
                }
            }
        }
        missing
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        let mut seen = BTreeSet::new();
        for ty in &self.token_types {
            if !seen.insert(ty.name.as_str()) {
                report.push(&ty.name, "duplicate token type name");
            }
            if ty.bit_width == 0 || ty.bit_width > MAX_TOKEN_BITS {
                report.push(
                    &ty.name,
                    format!("token bit_width {} outside 1..={MAX_TOKEN_BITS}", ty.bit_width),
                );
            }
        }

        let mut seen = BTreeSet::new();
        for def in &self.definitions {
            if !seen.insert(def.name.as_str()) {
                report.push(&def.name, "duplicate definition name");
            }
        }

        let Some(top) = self.definition(&self.top) else {
            report.push(&self.top, "top-level task is not defined");
            return report;
        };
        for def in &self.definitions {
            for child in &def.children {
                if child.definition == self.top {
                    report.push(&def.name, "instantiates the top-level task");
                }
            }
        }
        for port in top.ports.iter().filter(|p| p.direction == PortDirection::Scalar) {
            if !self.top_args.contains_key(&port.name) {
                report.push(format!("{}/{}", top.name, port.name), "unbound port");
            }
        }

        for def in &self.definitions {
            self.validate_definition(def, &mut report);
        }
        self.check_recursion(&mut report);
        report
    }

    fn validate_definition(&self, def: &TaskDefinition, report: &mut ValidationReport) {
        let mut names = BTreeSet::new();
        for port in &def.ports {
            let path = format!("{}/{}", def.name, port.name);
            if !names.insert(port.name.as_str()) {
                report.push(&path, "duplicate port name");
            }
            match (&port.direction, &port.token_type) {
                (d, None) if d.is_stream() => report.push(&path, "stream port has no token type"),
                (d, Some(t)) if d.is_stream() && self.token_type(t).is_none() => {
                    report.push(&path, format!("unknown token type `{t}`"))
                }
                (PortDirection::Scalar, Some(_)) => {
                    report.push(&path, "scalar port must not declare a token type")
                }
                _ => {}
            }
        }

        match def.kind {
            TaskKind::Leaf => {
                if !def.children.is_empty() || !def.local_channels.is_empty() {
                    report.push(&def.name, "leaf task instantiates children or channels");
                }
            }
            TaskKind::Parent => {
                if def.children.is_empty() {
                    report.push(&def.name, "parent task has no children");
                }
                if def.behavior.is_some() {
                    report.push(&def.name, "parent task must not carry a behavior");
                }
                self.validate_parent(def, report);
            }
        }
    }

    fn validate_parent(&self, def: &TaskDefinition, report: &mut ValidationReport) {
        let mut channels: BTreeMap<&str, (&ChannelDecl, usize, usize)> = BTreeMap::new();
        for ch in &def.local_channels {
            let path = format!("{}/{}", def.name, ch.name);
            if def.port(&ch.name).is_some() {
                report.push(&path, "channel name clashes with a port name");
            }
            if channels.insert(&ch.name, (ch, 0, 0)).is_some() {
                report.push(&path, "duplicate channel name");
            }
            if ch.capacity == 0 {
                report.push(&path, "channel capacity must be at least 1");
            }
            if self.token_type(&ch.token_type).is_none() {
                report.push(&path, format!("unknown token type `{}`", ch.token_type));
            }
        }
        let mut port_uses: BTreeMap<&str, usize> = BTreeMap::new();

        let mut per_def_count: HashMap<&str, usize> = HashMap::new();
        for child in &def.children {
            let k = per_def_count.entry(&child.definition).or_default();
            let child_path = format!("{}/{}.{}", def.name, child.definition, k);
            *k += 1;
            let Some(child_def) = self.definition(&child.definition) else {
                report.push(
                    &child_path,
                    format!("unknown task definition `{}`", child.definition),
                );
                continue;
            };
            for bound in child.bindings.keys() {
                if child_def.port(bound).is_none() {
                    report.push(format!("{child_path}/{bound}"), "binding to unknown port");
                }
            }
            for port in &child_def.ports {
                let path = format!("{child_path}/{}", port.name);
                let Some(binding) = child.bindings.get(&port.name) else {
                    report.push(&path, "unbound port");
                    continue;
                };
                match (port.direction, binding) {
                    (PortDirection::Scalar, Binding::Scalar(_)) => {}
                    (PortDirection::Scalar, Binding::Port(p)) => match def.port(p) {
                        Some(pp) if pp.direction == PortDirection::Scalar => {}
                        _ => report.push(&path, format!("`{p}` is not a scalar port of the parent")),
                    },
                    (PortDirection::Scalar, Binding::Channel(_)) => {
                        report.push(&path, "scalar port bound to a channel")
                    }
                    (_, Binding::Scalar(_)) => report.push(&path, "stream port bound to a scalar"),
                    (dir, Binding::Channel(c)) => match channels.get_mut(c.as_str()) {
                        None => report.push(&path, format!("unknown channel `{c}`")),
                        Some((decl, producers, consumers)) => {
                            if port.token_type.as_deref() != Some(decl.token_type.as_str()) {
                                report.push(&path, format!("token type mismatch with channel `{c}`"));
                            }
                            if dir == PortDirection::OutputStream {
                                *producers += 1;
                            } else {
                                *consumers += 1;
                            }
                        }
                    },
                    (dir, Binding::Port(p)) => match def.port(p) {
                        Some(pp) if pp.direction == dir => {
                            if pp.token_type != port.token_type {
                                report.push(&path, format!("token type mismatch with parent port `{p}`"));
                            }
                            *port_uses.entry(p.as_str()).or_default() += 1;
                        }
                        Some(_) => report.push(&path, format!("direction mismatch with parent port `{p}`")),
                        None => report.push(&path, format!("unknown parent port `{p}`")),
                    },
                }
            }
        }

        for (name, (_, producers, consumers)) in &channels {
            let path = format!("{}/{}", def.name, name);
            if *producers != 1 {
                report.push(&path, format!("channel has {producers} producers"));
            }
            if *consumers != 1 {
                report.push(&path, format!("channel has {consumers} consumers"));
            }
        }
        for port in def.ports.iter().filter(|p| p.direction.is_stream()) {
            let uses = port_uses.get(port.name.as_str()).copied().unwrap_or(0);
            if uses != 1 {
                report.push(
                    format!("{}/{}", def.name, port.name),
                    format!("parent port is passed to {uses} children"),
                );
            }
        }
    }

    fn check_recursion(&self, report: &mut ValidationReport) {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        fn visit<'a>(
            graph: &'a ProgramGraph,
            name: &'a str,
            marks: &mut HashMap<&'a str, Mark>,
            stack: &mut Vec<&'a str>,
            report: &mut ValidationReport,
        ) {
            match marks.get(name).copied().unwrap_or(Mark::Fresh) {
                Mark::Done => return,
                Mark::Active => {
                    let start = stack.iter().position(|n| *n == name).unwrap_or(0);
                    let mut cycle: Vec<&str> = stack[start..].to_vec();
                    cycle.push(name);
                    report.push(name, format!("recursive instantiation: {}", cycle.join(" -> ")));
                    return;
                }
                Mark::Fresh => {}
            }
            let Some(def) = graph.definition(name) else {
                return;
            };
            marks.insert(name, Mark::Active);
            stack.push(name);
            for child in &def.children {
                visit(graph, &child.definition, marks, stack, report);
            }
            stack.pop();
            marks.insert(name, Mark::Done);
        }

        let mut marks = HashMap::new();
        for def in &self.definitions {
            visit(self, &def.name, &mut marks, &mut Vec::new(), report);
        }
    }

    /// Elaborates the hierarchy depth-first in declaration order.
    pub fn flatten(&self) -> Result<Elaboration, GraphError> {
        let report = self.validate();
        if !report.is_valid() {
            return Err(GraphError::NotValidated(report));
        }
        let top = self.definition(&self.top).expect("validated");
        let mut elab = Elaboration {
            top: top.name.clone(),
            instances: Vec::new(),
            channels: Vec::new(),
            parents: Vec::new(),
        };

        let mut env = Env::default();
        for port in &top.ports {
            match port.direction {
                PortDirection::Scalar => {
                    env.scalars.insert(port.name.clone(), self.top_args[&port.name].clone());
                }
                dir => {
                    let id = ChannelId(elab.channels.len());
                    let ty = self.token_type(port.token_type.as_deref().unwrap()).unwrap();
                    // Both ends start at the boundary; the task side is
                    // overwritten when the bound leaf is placed.
                    let boundary = Endpoint::Boundary {
                        port: port.name.clone(),
                    };
                    debug_assert!(dir.is_stream());
                    elab.channels.push(FlatChannel {
                        id,
                        path: format!("{}/{}", top.name, port.name),
                        token_type: ty.clone(),
                        capacity: DEFAULT_CAPACITY,
                        owner: None,
                        producer: boundary.clone(),
                        consumer: boundary,
                    });
                    env.channels.insert(port.name.clone(), id);
                }
            }
        }
        self.elaborate(top, top.name.clone(), None, &env, &mut elab);
        Ok(elab)
    }

    fn elaborate(
        &self,
        def: &TaskDefinition,
        path: String,
        parent: Option<usize>,
        env: &Env,
        elab: &mut Elaboration,
    ) -> NodeRef {
        if def.is_leaf() {
            let id = InstanceId(elab.instances.len());
            let mut channel_bindings = BTreeMap::new();
            for port in def.ports.iter().filter(|p| p.direction.is_stream()) {
                let ch = env.channels[&port.name];
                let endpoint = Endpoint::Instance {
                    instance: id,
                    port: port.name.clone(),
                };
                let flat = &mut elab.channels[ch.0];
                if port.direction == PortDirection::OutputStream {
                    flat.producer = endpoint;
                } else {
                    flat.consumer = endpoint;
                }
                channel_bindings.insert(port.name.clone(), ch);
            }
            elab.instances.push(TaskInstance {
                instance_id: id,
                definition: def.name.clone(),
                path,
                parent,
                channel_bindings,
                scalars: env.scalars.clone(),
            });
            return NodeRef::Leaf(id);
        }

        let index = elab.parents.len();
        elab.parents.push(ParentInstance {
            path: path.clone(),
            definition: def.name.clone(),
            parent,
            children: Vec::new(),
            channels: Vec::new(),
            port_channels: env.channels.clone().into_iter().collect(),
        });

        let mut local = BTreeMap::new();
        for decl in &def.local_channels {
            let id = ChannelId(elab.channels.len());
            let unplaced = Endpoint::Boundary {
                port: String::new(),
            };
            elab.channels.push(FlatChannel {
                id,
                path: format!("{path}/{}", decl.name),
                token_type: self.token_type(&decl.token_type).unwrap().clone(),
                capacity: decl.capacity,
                owner: Some(index),
                producer: unplaced.clone(),
                consumer: unplaced,
            });
            local.insert(decl.name.as_str(), id);
            elab.parents[index].channels.push(id);
        }

        let mut per_def_count: HashMap<&str, usize> = HashMap::new();
        for child in &def.children {
            let child_def = self.definition(&child.definition).unwrap();
            let k = per_def_count.entry(&child.definition).or_default();
            let child_path = format!("{path}/{}.{}", child.definition, k);
            *k += 1;

            let mut child_env = Env::default();
            for port in &child_def.ports {
                match &child.bindings[&port.name] {
                    Binding::Channel(c) => {
                        child_env.channels.insert(port.name.clone(), local[c.as_str()]);
                    }
                    Binding::Port(p) if port.direction.is_stream() => {
                        child_env.channels.insert(port.name.clone(), env.channels[p]);
                    }
                    Binding::Port(p) => {
                        child_env.scalars.insert(port.name.clone(), env.scalars[p].clone());
                    }
                    Binding::Scalar(v) => {
                        child_env.scalars.insert(port.name.clone(), v.clone());
                    }
                }
            }
            let node = self.elaborate(child_def, child_path, Some(index), &child_env, elab);
            elab.parents[index].children.push(node);
        }
        NodeRef::Parent(index)
    }

    pub fn stats(&self) -> Result<GraphStats, GraphError> {
        Ok(self.flatten()?.stats())
    }
}

impl Elaboration {
    pub fn stats(&self) -> GraphStats {
        let defs: BTreeSet<&str> = self.instances.iter().map(|i| i.definition.as_str()).collect();
        GraphStats {
            num_definitions: defs.len(),
            num_instances: self.instances.len(),
            num_channels: self.channels.len(),
        }
    }
}

#[derive(Default)]
struct Env {
    channels: HashMap<String, ChannelId>,
    scalars: BTreeMap<String, ScalarValue>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word() -> TokenType {
        TokenType::new("Word", 32)
    }

    fn pipeline() -> ProgramGraph {
        let mut g = ProgramGraph::new("Top");
        g.add_token_type(word()).unwrap();
        g.add_definition(TaskDefinition::leaf("A").output("out", "Word")).unwrap();
        g.add_definition(TaskDefinition::leaf("B").input("in", "Word")).unwrap();
        g.add_definition(
            TaskDefinition::parent("Top")
                .channel("link", "Word", 2)
                .invoke(ChildInvocation::of("A").channel("out", "link"))
                .invoke(ChildInvocation::of("B").channel("in", "link")),
        )
        .unwrap();
        g
    }

    #[test]
    fn add_definition_counts_and_rejects_duplicates() {
        let mut g = ProgramGraph::new("Kernel");
        g.add_definition(TaskDefinition::leaf("RingNode")).unwrap();
        assert_eq!(g.definitions.len(), 1);
        g.add_definition(
            TaskDefinition::parent("Kernel").invoke(ChildInvocation::of("RingNode")),
        )
        .unwrap();
        assert_eq!(g.definitions.len(), 2);
        let err = g.add_definition(TaskDefinition::leaf("RingNode")).unwrap_err();
        assert_eq!(err, GraphError::DuplicateName("RingNode".into()));
    }

    #[test]
    fn minimal_pipeline_flattens_to_two_instances_one_channel() {
        let g = pipeline();
        assert!(g.validate().is_valid(), "{}", g.validate());
        let e = g.flatten().unwrap();
        assert_eq!(e.instances.len(), 2);
        assert_eq!(e.channels.len(), 1);
        assert_eq!(e.instances[0].path, "Top/A.0");
        assert_eq!(e.instances[1].path, "Top/B.0");
        let ch = &e.channels[0];
        assert_eq!(ch.path, "Top/link");
        assert_eq!(
            ch.producer,
            Endpoint::Instance {
                instance: InstanceId(0),
                port: "out".into()
            }
        );
        assert_eq!(
            ch.consumer,
            Endpoint::Instance {
                instance: InstanceId(1),
                port: "in".into()
            }
        );
    }

    #[test]
    fn single_leaf_top() {
        let mut g = ProgramGraph::new("Solo");
        g.add_definition(TaskDefinition::leaf("Solo")).unwrap();
        let e = g.flatten().unwrap();
        assert_eq!(e.instances.len(), 1);
        assert_eq!(e.channels.len(), 0);
        assert_eq!(
            e.stats(),
            GraphStats {
                num_definitions: 1,
                num_instances: 1,
                num_channels: 0
            }
        );
        assert_eq!(e.instances[0].path, "Solo");
    }

    #[test]
    fn two_producers_reported() {
        let mut g = pipeline();
        g.definitions.retain(|d| d.name != "Top");
        g.add_definition(
            TaskDefinition::parent("Top")
                .channel("link", "Word", 2)
                .invoke(ChildInvocation::of("A").channel("out", "link"))
                .invoke(ChildInvocation::of("A").channel("out", "link"))
                .invoke(ChildInvocation::of("B").channel("in", "link")),
        )
        .unwrap();
        let r = g.validate();
        assert!(r.mentions("channel has 2 producers"), "{r}");
    }

    #[test]
    fn unbound_port_reported() {
        let mut g = pipeline();
        g.definitions.retain(|d| d.name != "Top");
        g.add_definition(
            TaskDefinition::parent("Top")
                .channel("link", "Word", 2)
                .invoke(ChildInvocation::of("A").channel("out", "link"))
                .invoke(ChildInvocation::of("B")),
        )
        .unwrap();
        let r = g.validate();
        assert!(r.mentions("unbound port"), "{r}");
        assert!(r.violations.iter().any(|v| v.path == "Top/B.0/in"));
        assert!(matches!(g.flatten(), Err(GraphError::NotValidated(_))));
    }

    #[test]
    fn recursion_rejected() {
        let mut g = ProgramGraph::new("Top");
        g.add_definition(TaskDefinition::parent("Top").invoke(ChildInvocation::of("Loop")))
            .unwrap();
        g.add_definition(TaskDefinition::parent("Loop").invoke(ChildInvocation::of("Loop")))
            .unwrap();
        assert!(g.validate().mentions("recursive instantiation"));
    }

    #[test]
    fn zero_capacity_and_bad_width_reported() {
        let mut g = pipeline();
        g.token_types[0].bit_width = 0;
        g.definitions.iter_mut().find(|d| d.name == "Top").unwrap().local_channels[0].capacity = 0;
        let r = g.validate();
        assert!(r.mentions("capacity must be at least 1"));
        assert!(r.mentions("bit_width 0"));
    }

    #[test]
    fn pass_through_ports_are_spliced() {
        let mut g = ProgramGraph::new("Top");
        g.add_token_type(word()).unwrap();
        g.add_definition(TaskDefinition::leaf("A").output("out", "Word")).unwrap();
        g.add_definition(TaskDefinition::leaf("B").input("in", "Word")).unwrap();
        g.add_definition(
            TaskDefinition::parent("Wrap")
                .input("in", "Word")
                .invoke(ChildInvocation::of("B").pass("in", "in")),
        )
        .unwrap();
        g.add_definition(
            TaskDefinition::parent("Top")
                .channel("link", "Word", 3)
                .invoke(ChildInvocation::of("A").channel("out", "link"))
                .invoke(ChildInvocation::of("Wrap").channel("in", "link")),
        )
        .unwrap();
        let e = g.flatten().unwrap();
        assert_eq!(e.channels.len(), 1);
        assert_eq!(e.instances[1].path, "Top/Wrap.0/B.0");
        assert_eq!(
            e.channels[0].consumer,
            Endpoint::Instance {
                instance: InstanceId(1),
                port: "in".into()
            }
        );
        assert_eq!(e.parents.len(), 2);
        assert_eq!(e.parents[1].port_channels["in"], ChannelId(0));
    }

    #[test]
    fn top_boundary_ports_become_channels() {
        let mut g = ProgramGraph::new("Top");
        g.add_token_type(word()).unwrap();
        g.add_definition(
            TaskDefinition::leaf("Pass").input("in", "Word").output("out", "Word"),
        )
        .unwrap();
        g.add_definition(
            TaskDefinition::parent("Top")
                .input("in", "Word")
                .output("out", "Word")
                .invoke(ChildInvocation::of("Pass").pass("in", "in").pass("out", "out")),
        )
        .unwrap();
        let e = g.flatten().unwrap();
        assert_eq!(e.channels.len(), 2);
        assert!(e.channels.iter().all(FlatChannel::is_boundary));
        assert_eq!(e.channels[0].producer, Endpoint::Boundary { port: "in".into() });
        assert_eq!(e.channels[1].consumer, Endpoint::Boundary { port: "out".into() });
    }

    #[test]
    fn scalar_ports_receive_constants_and_pass_through() {
        let mut g = ProgramGraph::new("Top");
        g.add_definition(TaskDefinition::leaf("K").scalar("n")).unwrap();
        g.add_definition(
            TaskDefinition::parent("Top")
                .scalar("size")
                .invoke(ChildInvocation::of("K").pass("n", "size"))
                .invoke(ChildInvocation::of("K").scalar("n", ScalarValue::Int(9))),
        )
        .unwrap();
        assert!(g.validate().mentions("unbound port"));
        g.top_args.insert("size".into(), ScalarValue::Int(4));
        let e = g.flatten().unwrap();
        assert_eq!(e.instances[0].scalars["n"], ScalarValue::Int(4));
        assert_eq!(e.instances[1].scalars["n"], ScalarValue::Int(9));
        assert_eq!(e.instances[1].path, "Top/K.1");
        assert_eq!(e.stats().num_definitions, 1);
    }

    #[test]
    fn json_round_trip_preserves_topology() {
        let g = pipeline();
        let back = ProgramGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.flatten().unwrap(), g.flatten().unwrap());
        assert!(g.to_json().contains("\"local_channels\""));
    }

    #[test]
    fn channels_alias_accepted_on_import() {
        let text = r#"{
          "token_types": [{"name": "W", "bit_width": 8}],
          "definitions": [
            {"name": "A", "kind": "leaf", "ports": [{"name": "o", "direction": "output-stream", "token_type": "W"}]},
            {"name": "B", "kind": "leaf", "ports": [{"name": "i", "direction": "input-stream", "token_type": "W"}]},
            {"name": "T", "kind": "parent", "ports": [],
             "channels": [{"name": "c", "token_type": "W", "capacity": 4}],
             "children": [
               {"definition": "A", "bindings": {"o": {"channel": "c"}}},
               {"definition": "B", "bindings": {"i": {"channel": "c"}}}
             ]}
          ],
          "top": "T"
        }"#;
        let g = ProgramGraph::from_json(text).unwrap();
        assert_eq!(g.stats().unwrap().num_channels, 1);
        assert_eq!(g.flatten().unwrap().channels[0].capacity, 4);
    }
}
