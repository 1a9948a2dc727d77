//! Multi-device streaming over a host-rooted bandwidth tree: loader
//! selection, ring forwarding schedules, and a fluid event simulator where
//! concurrent transfers split each link direction's bandwidth equally.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RingError {
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("{chunks} chunks cannot fill a ring of {devices} devices")]
    TooFewChunks { chunks: usize, devices: usize },
    #[error("invalid loader set: {0}")]
    Loaders(String),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("schedule violates {0}")]
    Invalid(String),
    #[error("schedule stalled at step {0}")]
    Stalled(usize),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = RingError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Host,
    Switch,
    Device,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Bandwidth of the link to the parent in bytes per second, each way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub nodes: Vec<NodeSpec>,
    /// Device names in ring order; defaults to device order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring: Option<Vec<String>>,
}

/// A link is named by its child node; traffic goes up (towards the host)
/// or down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkDir {
    pub child: usize,
    pub up: bool,
}

/// Host-rooted bandwidth tree with devices at the leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceTopology {
    names: Vec<String>,
    kinds: Vec<NodeKind>,
    parent: Vec<Option<usize>>,
    bandwidth: Vec<f64>,
    devices: Vec<usize>,
    ring: Vec<usize>,
}

impl DeviceTopology {
    pub fn from_spec(spec: &TopologySpec) -> Result<Self> {
        let bad = |m: String| RingError::Topology(m);
        let mut index = BTreeMap::new();
        for (k, n) in spec.nodes.iter().enumerate() {
            if index.insert(n.name.clone(), k).is_some() {
                return Err(bad(format!("duplicate node {}", n.name)));
            }
        }
        let hosts: Vec<_> = spec.nodes.iter().filter(|n| n.kind == NodeKind::Host).collect();
        if hosts.len() != 1 {
            return Err(bad(format!("expected one host, found {}", hosts.len())));
        }
        let mut parent = Vec::new();
        let mut bandwidth = Vec::new();
        for n in &spec.nodes {
            match (n.kind, &n.parent) {
                (NodeKind::Host, None) => {
                    parent.push(None);
                    bandwidth.push(f64::INFINITY);
                }
                (NodeKind::Host, Some(_)) => return Err(bad("the host cannot have a parent".into())),
                (_, None) => return Err(bad(format!("{} has no parent", n.name))),
                (_, Some(p)) => {
                    let &pk = index.get(p).ok_or_else(|| bad(format!("unknown parent {p}")))?;
                    if spec.nodes[pk].kind == NodeKind::Device {
                        return Err(bad(format!("device {p} has children")));
                    }
                    let bw = n.bandwidth.ok_or_else(|| bad(format!("{} has no link bandwidth", n.name)))?;
                    if !(bw > 0.0 && bw.is_finite()) {
                        return Err(bad(format!("{} has bandwidth {bw}", n.name)));
                    }
                    parent.push(Some(pk));
                    bandwidth.push(bw);
                }
            }
        }
        for start in 0..parent.len() {
            let (mut k, mut hops) = (start, 0);
            while let Some(p) = parent[k] {
                k = p;
                hops += 1;
                if hops > parent.len() {
                    return Err(bad("parent links form a cycle".into()));
                }
            }
        }
        let devices: Vec<usize> =
            spec.nodes.iter().enumerate().filter(|(_, n)| n.kind == NodeKind::Device).map(|(k, _)| k).collect();
        if devices.is_empty() {
            return Err(bad("no devices".into()));
        }
        let ring = match &spec.ring {
            None => (0..devices.len()).collect(),
            Some(names) => {
                let mut order = Vec::new();
                for name in names {
                    let node = index.get(name).ok_or_else(|| bad(format!("unknown ring device {name}")))?;
                    let d = devices
                        .iter()
                        .position(|x| x == node)
                        .ok_or_else(|| bad(format!("{name} in ring is not a device")))?;
                    order.push(d);
                }
                let distinct: BTreeSet<_> = order.iter().collect();
                if order.len() != devices.len() || distinct.len() != devices.len() {
                    return Err(bad("ring order is not a permutation of the devices".into()));
                }
                order
            }
        };
        Ok(Self {
            names: spec.nodes.iter().map(|n| n.name.clone()).collect(),
            kinds: spec.nodes.iter().map(|n| n.kind).collect(),
            parent,
            bandwidth,
            devices,
            ring,
        })
    }

    pub fn to_spec(&self) -> TopologySpec {
        let nodes = (0..self.names.len())
            .map(|k| NodeSpec {
                name: self.names[k].clone(),
                kind: self.kinds[k],
                parent: self.parent[k].map(|p| self.names[p].clone()),
                bandwidth: self.parent[k].map(|_| self.bandwidth[k]),
            })
            .collect();
        let ring = Some(self.ring.iter().map(|&d| self.names[self.devices[d]].clone()).collect());
        TopologySpec { nodes, ring }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: TopologySpec = serde_json::from_str(text).map_err(|e| RingError::Topology(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RingError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_json(&text)
    }

    fn build(nodes: Vec<(String, NodeKind, Option<usize>, f64)>) -> Self {
        let spec = TopologySpec {
            nodes: nodes
                .iter()
                .map(|(name, kind, parent, bw)| NodeSpec {
                    name: name.clone(),
                    kind: *kind,
                    parent: parent.map(|p| nodes[p].0.clone()),
                    bandwidth: parent.map(|_| *bw),
                })
                .collect(),
            ring: None,
        };
        Self::from_spec(&spec).expect("generated topology is valid")
    }

    /// Every device on its own link to the host.
    pub fn flat(devices: usize, bandwidth: f64) -> Self {
        let mut nodes = vec![("host".to_string(), NodeKind::Host, None, 0.0)];
        for d in 0..devices {
            nodes.push((format!("dev{d}"), NodeKind::Device, Some(0), bandwidth));
        }
        Self::build(nodes)
    }

    /// Devices grouped `per_switch` to a switch, each switch on its own host
    /// link. Every link has the same bandwidth.
    pub fn switched(devices: usize, per_switch: usize, bandwidth: f64) -> Self {
        let mut nodes = vec![("host".to_string(), NodeKind::Host, None, 0.0)];
        let per = per_switch.max(1);
        let mut sw = 0;
        for d in 0..devices {
            if d % per == 0 {
                nodes.push((format!("sw{}", d / per), NodeKind::Switch, Some(0), bandwidth));
                sw = nodes.len() - 1;
            }
            nodes.push((format!("dev{d}"), NodeKind::Device, Some(sw), bandwidth));
        }
        Self::build(nodes)
    }

    /// All devices behind one switch, sharing its host link.
    pub fn shared_root(devices: usize, bandwidth: f64) -> Self {
        Self::switched(devices, devices, bandwidth)
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn device_name(&self, d: usize) -> &str {
        &self.names[self.devices[d]]
    }

    pub fn ring_order(&self) -> &[usize] {
        &self.ring
    }

    pub fn set_ring_order(&mut self, order: Vec<usize>) -> Result<()> {
        let distinct: BTreeSet<_> = order.iter().copied().collect();
        if order.len() != self.devices.len() || distinct != (0..self.devices.len()).collect() {
            return Err(RingError::Topology("ring order is not a permutation of the devices".into()));
        }
        self.ring = order;
        Ok(())
    }

    /// Nodes from a device up to, not including, the host.
    fn path_nodes(&self, d: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut k = self.devices[d];
        while let Some(p) = self.parent[k] {
            out.push(k);
            k = p;
        }
        out
    }

    /// Links crossed by a host-to-device load.
    pub fn load_path(&self, d: usize) -> Vec<LinkDir> {
        self.path_nodes(d).into_iter().map(|child| LinkDir { child, up: false }).collect()
    }

    /// Links crossed by a device-to-device copy.
    pub fn peer_path(&self, from: usize, to: usize) -> Vec<LinkDir> {
        let (a, b) = (self.path_nodes(from), self.path_nodes(to));
        let shared: BTreeSet<usize> = a.iter().copied().filter(|k| b.contains(k)).collect();
        let mut out: Vec<LinkDir> =
            a.iter().filter(|k| !shared.contains(k)).map(|&child| LinkDir { child, up: true }).collect();
        out.extend(b.iter().filter(|k| !shared.contains(k)).map(|&child| LinkDir { child, up: false }));
        out
    }

    pub fn link_bandwidth(&self, l: LinkDir) -> f64 {
        self.bandwidth[l.child]
    }

    /// Slowest link on the device's host path.
    pub fn host_bandwidth(&self, d: usize) -> f64 {
        self.path_nodes(d).iter().map(|&k| self.bandwidth[k]).fold(f64::INFINITY, f64::min)
    }

    /// The tree reduced to a single device's host path.
    pub fn single(&self, d: usize) -> Self {
        let path = self.path_nodes(d);
        let root = self.parent.iter().position(Option::is_none).expect("validated host");
        let mut keep: Vec<usize> = vec![root];
        keep.extend(path.iter().rev());
        let nodes = keep
            .iter()
            .map(|&k| {
                let parent = self.parent[k].map(|p| keep.iter().position(|&x| x == p).expect("path is closed"));
                (self.names[k].clone(), self.kinds[k], parent, self.bandwidth[k])
            })
            .collect();
        Self::build(nodes)
    }
}

/// Devices allowed to load from the host, chosen greedily in device-id
/// order: a device joins unless some link on its host path would carry more
/// than its bandwidth with every selected device loading at full speed.
pub fn maximal_fat_tree(t: &DeviceTopology) -> Vec<usize> {
    let mut demand: BTreeMap<usize, f64> = BTreeMap::new();
    let mut chosen = Vec::new();
    for d in 0..t.num_devices() {
        let want = t.host_bandwidth(d);
        let path = t.path_nodes(d);
        let fits = path.iter().all(|&k| demand.get(&k).copied().unwrap_or(0.0) + want <= t.bandwidth[k] * (1.0 + 1e-12));
        if fits {
            for k in path {
                *demand.entry(k).or_default() += want;
            }
            chosen.push(d);
        }
    }
    chosen
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RingAction {
    LoadFromHost(usize),
    FetchFromPrev(usize),
    Compute(usize),
    Drop(usize),
}

impl RingAction {
    pub fn name(self) -> &'static str {
        match self {
            RingAction::LoadFromHost(_) => "load",
            RingAction::FetchFromPrev(_) => "fetch",
            RingAction::Compute(_) => "compute",
            RingAction::Drop(_) => "drop",
        }
    }

    pub fn chunk(self) -> usize {
        match self {
            RingAction::LoadFromHost(c) | RingAction::FetchFromPrev(c) | RingAction::Compute(c) | RingAction::Drop(c) => c,
        }
    }

    fn is_transfer(self) -> bool {
        matches!(self, RingAction::LoadFromHost(_) | RingAction::FetchFromPrev(_))
    }
}

impl fmt::Display for RingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.name(), self.chunk())
    }
}

/// Per-step, per-device actions. An empty action list is an idle step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingSchedule {
    pub devices: usize,
    pub num_chunks: usize,
    pub loaders: Vec<usize>,
    /// Ring order used; for non-ring schedules, device order.
    pub ring: Vec<usize>,
    /// Whether devices forward chunks to each other.
    pub forwarding: bool,
    /// `steps[s][d]` lists device `d`'s actions in step `s`.
    pub steps: Vec<Vec<Vec<RingAction>>>,
}

impl RingSchedule {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    fn predecessor(&self, d: usize) -> usize {
        let pos = self.ring.iter().position(|&x| x == d).expect("device in ring");
        self.ring[(pos + self.devices - 1) % self.devices]
    }

    fn transfer_path(&self, t: &DeviceTopology, d: usize, a: RingAction) -> Vec<LinkDir> {
        match a {
            RingAction::LoadFromHost(_) => t.load_path(d),
            _ => t.peer_path(self.predecessor(d), d),
        }
    }

    /// Rows of (step, device, action, chunk), both counted from zero.
    pub fn rows(&self) -> Vec<(usize, usize, &'static str, Option<usize>)> {
        let mut out = Vec::new();
        for (s, step) in self.steps.iter().enumerate() {
            for (d, acts) in step.iter().enumerate() {
                if acts.is_empty() {
                    out.push((s, d, "idle", None));
                }
                for a in acts {
                    out.push((s, d, a.name(), Some(a.chunk())));
                }
            }
        }
        out
    }

    /// Checks that every chunk is host-loaded once (per device without
    /// forwarding), computed once per device, fetched only from a
    /// predecessor that finished receiving it and still holds it, and that
    /// no link direction carries two transfers in a step.
    pub fn validate(&self, t: &DeviceTopology) -> Result<()> {
        let bad = |m: String| Err(RingError::Invalid(m));
        let (n, dn) = (self.num_chunks, self.devices);
        let mut received: Vec<Vec<Option<usize>>> = vec![vec![None; n]; dn];
        let mut dropped: Vec<Vec<Option<usize>>> = vec![vec![None; n]; dn];
        let mut computed = vec![vec![0usize; n]; dn];
        let mut loads = vec![0usize; n];
        for (s, step) in self.steps.iter().enumerate() {
            let mut used: BTreeSet<LinkDir> = BTreeSet::new();
            for (d, acts) in step.iter().enumerate() {
                for &a in acts {
                    let c = a.chunk();
                    if c >= n {
                        return bad(format!("chunk {c} out of range"));
                    }
                    match a {
                        RingAction::LoadFromHost(_) => {
                            loads[c] += 1;
                            if self.forwarding && !self.loaders.contains(&d) {
                                return bad(format!("device {d} loads but is not a loader"));
                            }
                        }
                        RingAction::FetchFromPrev(_) => {
                            let p = self.predecessor(d);
                            let ready = received[p][c].is_some_and(|r| r < s);
                            let held = dropped[p][c].is_none_or(|x| x >= s);
                            if !ready || !held {
                                return bad(format!("device {d} fetches chunk {c} at step {s} before device {p} holds it"));
                            }
                        }
                        RingAction::Compute(_) => {
                            if !received[d][c].is_some_and(|r| r < s) {
                                return bad(format!("device {d} computes chunk {c} at step {s} before receiving it"));
                            }
                            computed[d][c] += 1;
                        }
                        RingAction::Drop(_) => {
                            if received[d][c].is_none() || dropped[d][c].is_some() {
                                return bad(format!("device {d} drops chunk {c} it does not hold"));
                            }
                            dropped[d][c] = Some(s);
                        }
                    }
                    if a.is_transfer() {
                        if received[d][c].is_some() {
                            return bad(format!("device {d} receives chunk {c} twice"));
                        }
                        received[d][c] = Some(s);
                        for l in self.transfer_path(t, d, a) {
                            if !used.insert(l) {
                                return bad(format!("two transfers on one link direction at step {s}"));
                            }
                        }
                    }
                }
            }
        }
        let want_loads = if self.forwarding { 1 } else { dn };
        if let Some(c) = loads.iter().position(|&k| k != want_loads) {
            return bad(format!("chunk {c} loaded {} times", loads[c]));
        }
        for (d, row) in computed.iter().enumerate() {
            if let Some(c) = row.iter().position(|&k| k != 1) {
                return bad(format!("device {d} computes chunk {c} {} times", row[c]));
            }
        }
        Ok(())
    }
}

struct Held {
    chunk: usize,
    received: usize,
    computed: bool,
    forwarded: bool,
    last: bool,
}

/// Builds the ring streaming schedule. Each loader owns the ring segment up
/// to the next loader and host-loads that many consecutive chunks per
/// round of `devices` chunks; other devices fetch from their predecessor.
/// A device prefers fetching over loading, keeps at most one chunk waiting
/// besides the one it computes, and drops a chunk once it has computed it
/// and either it is the chunk's last consumer or its successor has a copy.
pub fn build_ring_schedule(t: &DeviceTopology, num_chunks: usize, loaders: &[usize]) -> Result<RingSchedule> {
    let dn = t.num_devices();
    if num_chunks < dn {
        return Err(RingError::TooFewChunks { chunks: num_chunks, devices: dn });
    }
    let ring = t.ring_order().to_vec();
    let pos = |d: usize| ring.iter().position(|&x| x == d).expect("device in ring");
    let mut ls: Vec<usize> = loaders.to_vec();
    ls.sort_by_key(|&d| pos(d));
    ls.dedup();
    if ls.is_empty() || ls.iter().any(|&d| d >= dn) {
        return Err(RingError::Loaders(format!("{loaders:?} for {dn} devices")));
    }
    let mut queue: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut offset = 0;
    let mut segments = Vec::new();
    for (m, &l) in ls.iter().enumerate() {
        let next = ls[(m + 1) % ls.len()];
        let len = if ls.len() == 1 { dn } else { (pos(next) + dn - pos(l)) % dn };
        segments.push((l, offset, len));
        offset += len;
    }
    for &(l, off, len) in &segments {
        let mut q = Vec::new();
        let mut round = 0;
        while round * dn < num_chunks {
            q.extend((round * dn + off..round * dn + off + len).filter(|&c| c < num_chunks));
            round += 1;
        }
        q.reverse();
        queue.insert(l, q);
    }
    // Last device on each chunk's route: the one just before its loader.
    let mut last_of = vec![0; num_chunks];
    for (&l, q) in &queue {
        for &c in q {
            last_of[c] = ring[(pos(l) + dn - 1) % dn];
        }
    }
    let mut held: Vec<Vec<Held>> = (0..dn).map(|_| Vec::new()).collect();
    let mut remaining = num_chunks * dn;
    let mut steps = Vec::new();
    let limit = 4 * (num_chunks + dn) * dn + 8;
    while remaining > 0 {
        let s = steps.len();
        if s > limit {
            return Err(RingError::Stalled(s));
        }
        let mut acts: Vec<Vec<RingAction>> = vec![Vec::new(); dn];
        let mut computing: Vec<Option<usize>> = vec![None; dn];
        for d in 0..dn {
            if let Some(h) = held[d].iter_mut().find(|h| !h.computed && h.received < s) {
                h.computed = true;
                computing[d] = Some(h.chunk);
                acts[d].push(RingAction::Compute(h.chunk));
                remaining -= 1;
            }
        }
        let mut used: BTreeSet<LinkDir> = BTreeSet::new();
        let mut fetched_from: Vec<Option<usize>> = vec![None; dn];
        for &d in &ring {
            let waiting = held[d].iter().filter(|h| !h.computed).count();
            if waiting > 0 {
                continue;
            }
            let p = ring[(pos(d) + dn - 1) % dn];
            let have: BTreeSet<usize> = held[d].iter().map(|h| h.chunk).collect();
            let candidate = held[p]
                .iter()
                .find(|h| h.received < s && !h.last && !h.forwarded && !have.contains(&h.chunk))
                .map(|h| RingAction::FetchFromPrev(h.chunk))
                .or_else(|| queue.get(&d).and_then(|q| q.last()).map(|&c| RingAction::LoadFromHost(c)));
            let Some(a) = candidate else { continue };
            let path = match a {
                RingAction::LoadFromHost(_) => t.load_path(d),
                _ => t.peer_path(p, d),
            };
            if path.iter().any(|l| used.contains(l)) {
                continue;
            }
            used.extend(path);
            match a {
                RingAction::LoadFromHost(c) => {
                    queue.get_mut(&d).expect("loader queue").pop();
                    held[d].push(Held { chunk: c, received: s, computed: false, forwarded: false, last: last_of[c] == d });
                }
                RingAction::FetchFromPrev(c) => {
                    fetched_from[d] = Some(c);
                    held[d].push(Held { chunk: c, received: s, computed: false, forwarded: false, last: last_of[c] == d });
                }
                _ => unreachable!(),
            }
            acts[d].push(a);
        }
        for d in 0..dn {
            let succ = ring[(pos(d) + 1) % dn];
            if let Some(c) = fetched_from[succ] {
                if let Some(h) = held[d].iter_mut().find(|h| h.chunk == c) {
                    h.forwarded = true;
                }
            }
            let mut keep = Vec::new();
            for h in held[d].drain(..) {
                if h.computed && (h.last || h.forwarded) {
                    acts[d].push(RingAction::Drop(h.chunk));
                } else {
                    keep.push(h);
                }
            }
            held[d] = keep;
        }
        if acts.iter().all(Vec::is_empty) && remaining > 0 {
            return Err(RingError::Stalled(s));
        }
        steps.push(acts);
    }
    Ok(RingSchedule { devices: dn, num_chunks, loaders: ls, ring, forwarding: true, steps })
}

/// Every device loads every chunk from the host itself, computing the
/// previous one meanwhile.
pub fn build_nonring_schedule(t: &DeviceTopology, num_chunks: usize) -> Result<RingSchedule> {
    let dn = t.num_devices();
    if num_chunks == 0 {
        return Err(RingError::NonPositive("number of chunks"));
    }
    let steps = (0..=num_chunks)
        .map(|s| {
            (0..dn)
                .map(|_| {
                    let mut a = Vec::new();
                    if s > 0 {
                        a.push(RingAction::Compute(s - 1));
                        a.push(RingAction::Drop(s - 1));
                    }
                    if s < num_chunks {
                        a.push(RingAction::LoadFromHost(s));
                    }
                    a
                })
                .collect()
        })
        .collect();
    Ok(RingSchedule {
        devices: dn,
        num_chunks,
        loaders: (0..dn).collect(),
        ring: (0..dn).collect(),
        forwarding: false,
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingEvent {
    pub step: usize,
    pub device: usize,
    pub action: RingAction,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RingTimeline {
    pub events: Vec<RingEvent>,
    pub makespan: f64,
    /// Bytes loaded from host memory.
    pub host_bytes: f64,
}

struct Active {
    device: usize,
    step: usize,
    action: RingAction,
    path: Vec<LinkDir>,
    remaining: f64,
    start: f64,
}

/// Event simulation of a schedule. A device starts step `s` once all of
/// its step `s-1` actions have finished; a fetch additionally waits until
/// the predecessor has fully received the chunk. Within a step the
/// transfer and the compute run concurrently. Transfers sharing a link
/// direction split its bandwidth equally; directions are independent.
pub fn simulate_ring(
    t: &DeviceTopology,
    schedule: &RingSchedule,
    chunk_bytes: f64,
    compute_time_per_chunk: f64,
) -> Result<RingTimeline> {
    if !(chunk_bytes > 0.0) {
        return Err(RingError::NonPositive("chunk size"));
    }
    if !(compute_time_per_chunk > 0.0) {
        return Err(RingError::NonPositive("compute time"));
    }
    let dn = schedule.devices;
    let ns = schedule.steps.len();
    // Step each device is on, and when it may begin it.
    let mut step = vec![0usize; dn];
    let mut started = vec![false; dn];
    let mut pending = vec![0usize; dn];
    let mut ready_at = vec![0.0f64; dn];
    let mut received: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut computes: Vec<(f64, usize, usize, RingAction, f64)> = Vec::new();
    let mut active: Vec<Active> = Vec::new();
    let mut events = Vec::new();
    // Drops take effect when their step completes.
    let mut drops: Vec<Vec<RingAction>> = vec![Vec::new(); dn];
    let mut host_bytes = 0.0;
    let mut now = 0.0f64;
    loop {
        // Start every step whose dependencies are met, repeating since idle
        // steps finish at once.
        let mut progressed = true;
        while progressed {
            progressed = false;
            for d in 0..dn {
                if started[d] || step[d] >= ns || ready_at[d] > now {
                    continue;
                }
                let acts = &schedule.steps[step[d]][d];
                let fetch_ok = acts.iter().all(|a| match a {
                    RingAction::FetchFromPrev(c) => received.get(&(schedule.predecessor(d), *c)).is_some_and(|&x| x <= now),
                    _ => true,
                });
                if !fetch_ok {
                    continue;
                }
                started[d] = true;
                progressed = true;
                for &a in acts {
                    match a {
                        RingAction::Compute(_) => {
                            pending[d] += 1;
                            computes.push((now + compute_time_per_chunk, d, step[d], a, now));
                        }
                        RingAction::LoadFromHost(_) | RingAction::FetchFromPrev(_) => {
                            pending[d] += 1;
                            let path = schedule.transfer_path(t, d, a);
                            if matches!(a, RingAction::LoadFromHost(_)) {
                                host_bytes += chunk_bytes;
                            }
                            active.push(Active { device: d, step: step[d], action: a, path, remaining: chunk_bytes, start: now });
                        }
                        RingAction::Drop(_) => drops[d].push(a),
                    }
                }
                if pending[d] == 0 {
                    for a in drops[d].drain(..) {
                        events.push(RingEvent { step: step[d], device: d, action: a, start: now, end: now });
                    }
                    started[d] = false;
                    step[d] += 1;
                }
            }
        }
        if active.is_empty() && computes.is_empty() {
            break;
        }
        let mut load: BTreeMap<LinkDir, usize> = BTreeMap::new();
        for a in &active {
            for l in &a.path {
                *load.entry(*l).or_default() += 1;
            }
        }
        let rates: Vec<f64> = active
            .iter()
            .map(|a| a.path.iter().map(|l| t.link_bandwidth(*l) / load[l] as f64).fold(f64::INFINITY, f64::min))
            .collect();
        let mut next = computes.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        for (a, r) in active.iter().zip(&rates) {
            next = next.min(now + a.remaining / r);
        }
        if !next.is_finite() {
            return Err(RingError::Stalled(step.iter().copied().min().unwrap_or(0)));
        }
        let dt = next - now;
        now = next;
        let eps = 1e-9 * chunk_bytes;
        let mut finished = Vec::new();
        let mut keep = Vec::new();
        for (mut a, r) in active.drain(..).zip(rates) {
            a.remaining -= r * dt;
            if a.remaining <= eps {
                finished.push(a);
            } else {
                keep.push(a);
            }
        }
        active = keep;
        for a in finished {
            received.insert((a.device, a.action.chunk()), now);
            events.push(RingEvent { step: a.step, device: a.device, action: a.action, start: a.start, end: now });
            pending[a.device] -= 1;
        }
        let tol = 1e-12 * now.max(1.0);
        let (done, rest): (Vec<_>, Vec<_>) = computes.into_iter().partition(|c| c.0 <= now + tol);
        computes = rest;
        for (end, d, s, a, start) in done {
            events.push(RingEvent { step: s, device: d, action: a, start, end });
            pending[d] -= 1;
        }
        for d in 0..dn {
            if started[d] && pending[d] == 0 {
                for a in drops[d].drain(..) {
                    events.push(RingEvent { step: step[d], device: d, action: a, start: now, end: now });
                }
                started[d] = false;
                step[d] += 1;
                ready_at[d] = now;
            }
        }
    }
    if step.iter().any(|&s| s < ns) {
        return Err(RingError::Stalled(step.iter().copied().min().unwrap_or(0)));
    }
    events.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.device.cmp(&b.device)));
    let makespan = events.iter().map(|e| e.end).fold(0.0, f64::max);
    Ok(RingTimeline { events, makespan, host_bytes })
}

/// Non-ring loading under the same parameters.
pub fn simulate_nonring(t: &DeviceTopology, num_chunks: usize, chunk_bytes: f64, compute_time_per_chunk: f64) -> Result<RingTimeline> {
    let s = build_nonring_schedule(t, num_chunks)?;
    simulate_ring(t, &s, chunk_bytes, compute_time_per_chunk)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Speedup {
    pub single_device: f64,
    pub ring: f64,
    pub nonring: f64,
}

impl Speedup {
    pub fn ring_speedup(&self) -> f64 {
        self.single_device / self.ring
    }

    pub fn nonring_speedup(&self) -> f64 {
        self.single_device / self.nonring
    }
}

/// Each device produces its own share of the output and must see every
/// input chunk. One device doing the whole job streams the input once per
/// share, so it is simulated on the first device's host path with
/// `num_chunks * devices` chunks.
pub fn speedup(t: &DeviceTopology, num_chunks: usize, chunk_bytes: f64, compute_time_per_chunk: f64) -> Result<Speedup> {
    let dn = t.num_devices();
    let single = t.single(t.ring_order()[0]);
    let base = simulate_nonring(&single, num_chunks * dn, chunk_bytes, compute_time_per_chunk)?.makespan;
    let loaders = maximal_fat_tree(t);
    let rs = build_ring_schedule(t, num_chunks, &loaders)?;
    let ring = simulate_ring(t, &rs, chunk_bytes, compute_time_per_chunk)?.makespan;
    let nonring = simulate_nonring(t, num_chunks, chunk_bytes, compute_time_per_chunk)?.makespan;
    Ok(Speedup { single_device: base, ring, nonring })
}
