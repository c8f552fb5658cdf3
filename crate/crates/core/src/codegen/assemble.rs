//! Step three: wire leaf units through FIFOs and give each parent a control FSM.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metadata::{DesignMetadata, EndpointMeta, PinDir, PortMeta};
use super::synth::ModuleUnit;
use super::CodegenError;
use crate::graph::{PortDirection, ScalarValue};

/// Pin owner name used for the top-level boundary in wires.
pub const BOUNDARY: &str = "<top>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetInstance {
    pub path: String,
    pub unit: String,
    pub parent: Option<String>,
}

/// A first-word-fall-through FIFO: the head is visible on `dout` whenever
/// `empty_n` is high, which is what consumer peek pins rely on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fifo {
    pub name: String,
    /// Payload bits plus the EoT bit.
    pub width: u32,
    pub depth: usize,
    pub parent: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pin {
    /// Instance path, FIFO name, parent path (for FSM pins) or [`BOUNDARY`].
    pub owner: String,
    pub pin: String,
}

impl Pin {
    fn new(owner: impl Into<String>, pin: impl Into<String>) -> Self {
        Self {
            owner: owner.into(),
            pin: pin.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireKind {
    Data,
    Valid,
    Ready,
    Peek,
    Start,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Wire {
    pub kind: WireKind,
    pub driver: Pin,
    pub sink: Pin,
    pub width: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FsmState {
    Idle,
    Run,
    Done,
}

/// Starts every child on `ap_start` and reports done once all children have.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlFsm {
    pub parent: String,
    pub states: Vec<FsmState>,
    /// `(from, condition, to)`.
    pub transitions: Vec<(FsmState, String, FsmState)>,
    pub children: Vec<String>,
}

impl ControlFsm {
    fn new(parent: String, children: Vec<String>) -> Self {
        use FsmState::*;
        Self {
            parent,
            states: vec![Idle, Run, Done],
            transitions: vec![
                (Idle, "ap_start".into(), Run),
                (Run, "all_children_done".into(), Done),
                (Done, "!ap_start".into(), Idle),
            ],
            children,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopArg {
    pub name: String,
    pub direction: PortDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ScalarValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub top: String,
    pub units: Vec<ModuleUnit>,
    pub instances: Vec<NetInstance>,
    pub fifos: Vec<Fifo>,
    pub wires: Vec<Wire>,
    pub fsms: Vec<ControlFsm>,
    pub top_args: Vec<TopArg>,
    /// Carried for per-definition parent module emission.
    pub metadata: DesignMetadata,
}

impl Netlist {
    pub fn unit(&self, name: &str) -> Option<&ModuleUnit> {
        self.units.iter().find(|u| u.name == name)
    }

    pub fn fifo(&self, name: &str) -> Option<&Fifo> {
        self.fifos.iter().find(|f| f.name == name)
    }

    pub fn wires_of(&self, kind: WireKind) -> impl Iterator<Item = &Wire> {
        self.wires.iter().filter(move |w| w.kind == kind)
    }
}

fn endpoint_pin(e: &EndpointMeta, suffix: &str) -> Pin {
    let owner = e.instance.clone().unwrap_or_else(|| BOUNDARY.to_owned());
    Pin::new(owner, format!("{}_{suffix}", e.port))
}

pub fn assemble(meta: &DesignMetadata, units: &[ModuleUnit]) -> Result<Netlist, CodegenError> {
    let unit_of = |def: &str| {
        units
            .iter()
            .find(|u| u.name == def)
            .ok_or_else(|| CodegenError::MissingUnit(def.to_owned()))
    };
    for task in &meta.tasks {
        unit_of(&task.name)?;
    }

    let mut instances: Vec<NetInstance> = meta
        .instances
        .iter()
        .map(|i| NetInstance {
            path: i.path.clone(),
            unit: i.definition.clone(),
            parent: i.parent.clone(),
        })
        .collect();
    instances.sort_by(|a, b| a.path.cmp(&b.path));
    let definition_of: BTreeMap<&str, &str> =
        meta.instances.iter().map(|i| (i.path.as_str(), i.definition.as_str())).collect();

    let check_width = |e: &EndpointMeta, channel: &str, width: u32| -> Result<(), CodegenError> {
        let Some(inst) = &e.instance else { return Ok(()) };
        let unit = unit_of(definition_of[inst.as_str()])?;
        let pin = format!("{}_data", e.port);
        let found = unit.port(&pin).map(|p| p.width).unwrap_or(0);
        if found != width {
            return Err(CodegenError::WidthMismatch {
                channel: channel.to_owned(),
                pin: format!("{inst}.{pin}"),
                expected: width,
                found,
            });
        }
        Ok(())
    };

    let mut fifos = Vec::new();
    let mut wires = Vec::new();
    for row in &meta.topology {
        let width = row.bit_width + 1;
        check_width(&row.producer, &row.channel, width)?;
        check_width(&row.consumer, &row.channel, width)?;
        let p = &row.producer;
        let c = &row.consumer;
        let wire = |kind, driver, sink, width| Wire {
            kind,
            driver,
            sink,
            width,
        };
        match &row.owner {
            None => {
                // Boundary: the top-level interface connects straight to the leaf.
                wires.push(wire(WireKind::Data, endpoint_pin(p, "data"), endpoint_pin(c, "data"), width));
                wires.push(wire(WireKind::Valid, endpoint_pin(p, "valid"), endpoint_pin(c, "valid"), 1));
                wires.push(wire(WireKind::Ready, endpoint_pin(c, "ready"), endpoint_pin(p, "ready"), 1));
                if c.instance.is_some() {
                    wires.push(wire(WireKind::Peek, endpoint_pin(p, "data"), endpoint_pin(c, "peek"), width));
                }
            }
            Some(parent) => {
                let f = &row.channel;
                fifos.push(Fifo {
                    name: f.clone(),
                    width,
                    depth: row.capacity,
                    parent: parent.clone(),
                });
                wires.push(wire(WireKind::Data, endpoint_pin(p, "data"), Pin::new(f, "din"), width));
                wires.push(wire(WireKind::Valid, endpoint_pin(p, "valid"), Pin::new(f, "write"), 1));
                wires.push(wire(WireKind::Ready, Pin::new(f, "full_n"), endpoint_pin(p, "ready"), 1));
                wires.push(wire(WireKind::Data, Pin::new(f, "dout"), endpoint_pin(c, "data"), width));
                wires.push(wire(WireKind::Peek, Pin::new(f, "dout"), endpoint_pin(c, "peek"), width));
                wires.push(wire(WireKind::Valid, Pin::new(f, "empty_n"), endpoint_pin(c, "valid"), 1));
                wires.push(wire(WireKind::Ready, endpoint_pin(c, "ready"), Pin::new(f, "read"), 1));
            }
        }
    }

    // One FSM per parent instance over its direct children.
    let mut children: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for parent in meta.parents.iter().flat_map(|p| p.instances.iter()) {
        children.entry(parent.as_str()).or_default();
    }
    for inst in &meta.instances {
        if let Some(p) = &inst.parent {
            children.entry(p.as_str()).or_default().push(inst.path.clone());
        }
    }
    for parent in meta.parents.iter().flat_map(|p| p.instances.iter()) {
        if let Some((up, _)) = parent.rsplit_once('/') {
            if let Some(list) = children.get_mut(up) {
                list.push(parent.clone());
            }
        }
    }
    let mut fsms = Vec::new();
    for (parent, mut kids) in children {
        kids.sort();
        for kid in &kids {
            wires.push(Wire {
                kind: WireKind::Start,
                driver: Pin::new(parent, "fsm_start"),
                sink: Pin::new(kid, "ap_start"),
                width: 1,
            });
            wires.push(Wire {
                kind: WireKind::Done,
                driver: Pin::new(kid, "ap_done"),
                sink: Pin::new(parent, "fsm_done"),
                width: 1,
            });
        }
        fsms.push(ControlFsm::new(parent.to_owned(), kids));
    }

    fifos.sort_by(|a, b| a.name.cmp(&b.name));
    wires.sort();

    let mut sorted_units: Vec<ModuleUnit> = Vec::new();
    for task in &meta.tasks {
        sorted_units.push(unit_of(&task.name)?.clone());
    }
    sorted_units.sort_by(|a, b| a.name.cmp(&b.name));

    let top_args = meta.top_ports.iter().map(|p: &PortMeta| TopArg {
        name: p.name.clone(),
        direction: p.direction,
        width: p.bit_width.map(|w| w + 1),
        value: meta.top_args.get(&p.name).cloned(),
    });

    Ok(Netlist {
        top: meta.top.clone(),
        units: sorted_units,
        instances,
        fifos,
        wires,
        fsms,
        top_args: top_args.collect(),
        metadata: meta.clone(),
    })
}

/// Checks netlist soundness: every FIFO has exactly one driver on `din` and
/// one reader on `dout` data, and each consumer's peek wire comes from the
/// same source as its data wire.
pub fn check_soundness(netlist: &Netlist) -> Result<(), String> {
    for f in &netlist.fifos {
        let din = netlist
            .wires
            .iter()
            .filter(|w| w.sink.owner == f.name && w.sink.pin == "din")
            .count();
        let dout = netlist
            .wires_of(WireKind::Data)
            .filter(|w| w.driver.owner == f.name && w.driver.pin == "dout")
            .count();
        if din != 1 || dout != 1 {
            return Err(format!("fifo {} has {din} drivers and {dout} readers", f.name));
        }
    }
    for peek in netlist.wires_of(WireKind::Peek) {
        let data_pin = peek.sink.pin.replace("_peek", "_data");
        let paired = netlist.wires_of(WireKind::Data).any(|w| {
            w.sink.owner == peek.sink.owner && w.sink.pin == data_pin && w.driver == peek.driver
        });
        if !paired {
            return Err(format!("peek {}.{} has no matching data wire", peek.sink.owner, peek.sink.pin));
        }
    }
    for inst in &netlist.instances {
        let unit = netlist.unit(&inst.unit).ok_or_else(|| format!("no unit {}", inst.unit))?;
        for port in unit.ports.iter().filter(|p| p.name.ends_with("_peek")) {
            let wired = netlist
                .wires_of(WireKind::Peek)
                .any(|w| w.sink.owner == inst.path && w.sink.pin == port.name);
            if !wired || port.dir != PinDir::Input {
                return Err(format!("{}.{} peek pin is not wired", inst.path, port.name));
            }
        }
    }
    Ok(())
}
