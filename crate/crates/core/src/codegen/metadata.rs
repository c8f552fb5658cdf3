//! Step one: the communication topology and per-task interfaces, detached
//! from behavior internals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CodegenError;
use crate::graph::{Binding, ChannelDecl, Endpoint, PortDirection, ProgramGraph, ScalarValue};

/// Width of scalar argument ports in emitted modules.
pub const SCALAR_WIDTH: u32 = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortMeta {
    pub name: String,
    pub direction: PortDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_type: Option<String>,
    /// Payload bits, without the EoT sideband bit. `None` for scalars.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_width: Option<u32>,
}

/// A leaf definition as the backend sees it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub name: String,
    pub ports: Vec<PortMeta>,
    /// Opaque behavior identity supplied by the builder.
    pub fingerprint: String,
    pub instance_count: usize,
}

impl TaskMeta {
    /// Digest over the canonical serialization of name, ports and fingerprint.
    pub fn content_hash(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            name: &'a str,
            ports: &'a [PortMeta],
            fingerprint: &'a str,
        }
        let bytes = serde_json::to_vec(&Canonical {
            name: &self.name,
            ports: &self.ports,
            fingerprint: &self.fingerprint,
        })
        .expect("metadata serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointMeta {
    /// Hierarchical instance path; `None` for the top-level boundary.
    pub instance: Option<String>,
    pub port: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyRow {
    pub channel: String,
    pub producer: EndpointMeta,
    pub consumer: EndpointMeta,
    pub token_type: String,
    pub bit_width: u32,
    pub capacity: usize,
    /// Path of the declaring parent; `None` for boundary channels.
    pub owner: Option<String>,
}

impl TopologyRow {
    pub fn is_boundary(&self) -> bool {
        self.owner.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub path: String,
    pub definition: String,
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildMeta {
    /// Local instance name, `<definition>.<k>`.
    pub name: String,
    pub definition: String,
    pub bindings: BTreeMap<String, Binding>,
}

/// A parent definition, kept structurally so each one becomes one module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParentMeta {
    pub name: String,
    pub ports: Vec<PortMeta>,
    pub channels: Vec<ChannelDecl>,
    pub children: Vec<ChildMeta>,
    /// Instance paths of this definition, sorted.
    pub instances: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignMetadata {
    pub top: String,
    pub top_ports: Vec<PortMeta>,
    pub top_args: BTreeMap<String, ScalarValue>,
    /// Payload bits per token type name.
    pub token_widths: BTreeMap<String, u32>,
    /// Leaf definitions in first-instantiation order.
    pub tasks: Vec<TaskMeta>,
    pub parents: Vec<ParentMeta>,
    /// Leaf instances in flattening order.
    pub instances: Vec<InstanceMeta>,
    pub topology: Vec<TopologyRow>,
}

impl DesignMetadata {
    pub fn task(&self, name: &str) -> Option<&TaskMeta> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn parent(&self, name: &str) -> Option<&ParentMeta> {
        self.parents.iter().find(|p| p.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }
}

fn port_meta(graph: &ProgramGraph, ports: &[crate::graph::PortDecl]) -> Vec<PortMeta> {
    ports
        .iter()
        .map(|p| PortMeta {
            name: p.name.clone(),
            direction: p.direction,
            token_type: p.token_type.clone(),
            bit_width: p
                .token_type
                .as_deref()
                .and_then(|t| graph.token_type(t))
                .map(|t| t.bit_width),
        })
        .collect()
}

pub fn extract_metadata(graph: &ProgramGraph) -> Result<DesignMetadata, CodegenError> {
    let elab = graph.flatten()?;
    let top = graph.definition(&graph.top).expect("flattened");

    let mut tasks: Vec<TaskMeta> = Vec::new();
    for inst in &elab.instances {
        match tasks.iter_mut().find(|t| t.name == inst.definition) {
            Some(t) => t.instance_count += 1,
            None => {
                let def = graph.definition(&inst.definition).expect("flattened");
                tasks.push(TaskMeta {
                    name: def.name.clone(),
                    ports: port_meta(graph, &def.ports),
                    fingerprint: def.fingerprint().to_owned(),
                    instance_count: 1,
                });
            }
        }
    }

    let mut parents: Vec<ParentMeta> = Vec::new();
    for p in &elab.parents {
        if let Some(existing) = parents.iter_mut().find(|m| m.name == p.definition) {
            existing.instances.push(p.path.clone());
            continue;
        }
        let def = graph.definition(&p.definition).expect("flattened");
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let children = def
            .children
            .iter()
            .map(|c| {
                let k = counts.entry(&c.definition).or_default();
                let name = format!("{}.{}", c.definition, k);
                *k += 1;
                ChildMeta {
                    name,
                    definition: c.definition.clone(),
                    bindings: c.bindings.clone(),
                }
            })
            .collect();
        parents.push(ParentMeta {
            name: def.name.clone(),
            ports: port_meta(graph, &def.ports),
            channels: def.local_channels.clone(),
            children,
            instances: vec![p.path.clone()],
        });
    }
    for p in &mut parents {
        p.instances.sort();
    }

    let instance_path = |e: &Endpoint| match e {
        Endpoint::Instance { instance, port } => EndpointMeta {
            instance: Some(elab.instance(*instance).path.clone()),
            port: port.clone(),
        },
        Endpoint::Boundary { port } => EndpointMeta {
            instance: None,
            port: port.clone(),
        },
    };
    let topology = elab
        .channels
        .iter()
        .map(|c| TopologyRow {
            channel: c.path.clone(),
            producer: instance_path(&c.producer),
            consumer: instance_path(&c.consumer),
            token_type: c.token_type.name.clone(),
            bit_width: c.token_type.bit_width,
            capacity: c.capacity,
            owner: c.owner.map(|i| elab.parents[i].path.clone()),
        })
        .collect();

    let instances = elab
        .instances
        .iter()
        .map(|i| InstanceMeta {
            path: i.path.clone(),
            definition: i.definition.clone(),
            parent: i.parent.map(|p| elab.parents[p].path.clone()),
        })
        .collect();

    Ok(DesignMetadata {
        top: top.name.clone(),
        top_ports: port_meta(graph, &top.ports),
        top_args: graph.top_args.clone(),
        token_widths: graph.token_types.iter().map(|t| (t.name.clone(), t.bit_width)).collect(),
        tasks,
        parents,
        instances,
        topology,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PinDir {
    Input,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdlPort {
    pub name: String,
    pub dir: PinDir,
    pub width: u32,
}

impl HdlPort {
    fn new(name: String, dir: PinDir, width: u32) -> Self {
        Self { name, dir, width }
    }
}

/// Handshake and control pins shared by every module.
pub fn control_ports() -> Vec<HdlPort> {
    vec![
        HdlPort::new("ap_clk".into(), PinDir::Input, 1),
        HdlPort::new("ap_rst_n".into(), PinDir::Input, 1),
        HdlPort::new("ap_start".into(), PinDir::Input, 1),
        HdlPort::new("ap_done".into(), PinDir::Output, 1),
    ]
}

/// Pin list for a set of task ports. Stream data and peek pins carry one
/// extra bit for EoT; only consumers get a peek pin.
pub fn interface_ports(ports: &[PortMeta]) -> Vec<HdlPort> {
    let mut out = Vec::new();
    for p in ports {
        let n = &p.name;
        match p.direction {
            PortDirection::InputStream => {
                let w = p.bit_width.expect("stream port has a width") + 1;
                out.push(HdlPort::new(format!("{n}_data"), PinDir::Input, w));
                out.push(HdlPort::new(format!("{n}_valid"), PinDir::Input, 1));
                out.push(HdlPort::new(format!("{n}_ready"), PinDir::Output, 1));
                out.push(HdlPort::new(format!("{n}_peek"), PinDir::Input, w));
            }
            PortDirection::OutputStream => {
                let w = p.bit_width.expect("stream port has a width") + 1;
                out.push(HdlPort::new(format!("{n}_data"), PinDir::Output, w));
                out.push(HdlPort::new(format!("{n}_valid"), PinDir::Output, 1));
                out.push(HdlPort::new(format!("{n}_ready"), PinDir::Input, 1));
            }
            PortDirection::Scalar => out.push(HdlPort::new(n.clone(), PinDir::Input, SCALAR_WIDTH)),
        }
    }
    out
}
