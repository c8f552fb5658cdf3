//! Step two: synthesize each unique task once, in parallel.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::backend::{Backend, SynthRequest};
use super::metadata::{interface_ports, DesignMetadata, HdlPort};
use super::CodegenError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleUnit {
    pub name: String,
    /// Stream and scalar pins; control pins are in [`super::metadata::control_ports`].
    pub ports: Vec<HdlPort>,
    pub body: String,
    pub content_hash: String,
}

impl ModuleUnit {
    pub fn port(&self, name: &str) -> Option<&HdlPort> {
        self.ports.iter().find(|p| p.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisStats {
    pub backend_calls: usize,
    pub unique_definitions: usize,
    pub instances: usize,
    pub jobs: usize,
    /// Rounds needed with unit-cost backend calls and `jobs` parallel slots.
    pub wall_slots: usize,
}

impl SynthesisStats {
    /// Sequential calls a per-instance flow would need, over `wall_slots`.
    pub fn modeled_speedup(&self) -> f64 {
        if self.wall_slots == 0 {
            return 1.0;
        }
        self.instances as f64 / self.wall_slots as f64
    }
}

type Memo = Mutex<HashMap<String, Arc<OnceLock<Result<String, String>>>>>;

/// Runs the backend once per unique content hash, with up to `jobs`
/// invocations in flight. Units come back in first-instantiation order.
pub fn synthesize_tasks(
    meta: &DesignMetadata,
    backend: &dyn Backend,
    jobs: usize,
) -> Result<(Vec<ModuleUnit>, SynthesisStats), CodegenError> {
    if jobs == 0 {
        return Err(CodegenError::InvalidJobs);
    }
    let prepared: Vec<(String, Vec<HdlPort>)> = meta
        .tasks
        .iter()
        .map(|t| (t.content_hash(), interface_ports(&t.ports)))
        .collect();
    let by_name: HashMap<&str, usize> =
        meta.tasks.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();

    let memo: Memo = Mutex::new(HashMap::new());
    let calls = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);

    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(inst) = meta.instances.get(i) else { break };
        let t = by_name[inst.definition.as_str()];
        let (hash, interface) = &prepared[t];
        let cell = memo
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(hash.clone())
            .or_default()
            .clone();
        cell.get_or_init(|| {
            calls.fetch_add(1, Ordering::SeqCst);
            backend.synthesize(&SynthRequest {
                task: &meta.tasks[t],
                interface,
                content_hash: hash,
            })
        });
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.min(meta.instances.len().max(1)) {
            s.spawn(work);
        }
        work();
    });

    let memo = memo.into_inner().unwrap_or_else(|e| e.into_inner());
    let mut units = Vec::with_capacity(meta.tasks.len());
    for (task, (hash, interface)) in meta.tasks.iter().zip(&prepared) {
        let result = memo[hash].get().expect("every instance was visited");
        let body = result.clone().map_err(|diagnostic| CodegenError::BackendFailure {
            definition: task.name.clone(),
            diagnostic,
        })?;
        units.push(ModuleUnit {
            name: task.name.clone(),
            ports: interface.clone(),
            body,
            content_hash: hash.clone(),
        });
    }

    let unique = memo.len();
    let stats = SynthesisStats {
        backend_calls: calls.into_inner(),
        unique_definitions: unique,
        instances: meta.instances.len(),
        jobs,
        wall_slots: unique.div_ceil(jobs),
    };
    Ok((units, stats))
}
