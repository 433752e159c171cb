use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Counters, FlowRecords, MetricsError, MetricsReport};
use super::scenario::{Scenario, ScenarioError, Site, Topology};
use crate::app::{packet_priority, Client, ReplyServer};
use crate::codec::{NodeAddress, Packet, PacketHeader, PacketType};
use crate::mac::{listen_before_talk, Demultiplexer, LbtDecision, MacConfig};
use crate::network::{RelayOutcome, Router};
use crate::phy::{deliver_or_collide, RadioConfig, Reception, Transmission};
use crate::time::SimTime;

/// One transmission as seen in the optional trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub sender: usize,
    pub channel: u8,
    pub t_start: SimTime,
    pub t_end: SimTime,
    pub header: PacketHeader,
    pub payload: Vec<u8>,
}

/// One successful frame reception as seen in the optional trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxRecord {
    pub receiver: usize,
    pub sender: usize,
    pub channel: u8,
    pub t_start: SimTime,
    pub t_end: SimTime,
    pub header: PacketHeader,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub transmissions: Vec<TxRecord>,
    pub receptions: Vec<RxRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Hello(usize),
    RouteTimer(usize),
    Triggered(usize),
    AppNext(usize),
    AppTimeout(usize, u16),
    MacAttempt(usize),
    TxEnd { channel: usize, id: u64 },
}

#[derive(Debug)]
enum TxState {
    Idle,
    Deferring(Vec<(usize, Packet)>),
    Transmitting(usize),
}

#[derive(Debug)]
struct AirFrame {
    id: u64,
    sender: usize,
    tx: Transmission,
}

#[derive(Debug)]
pub struct Node {
    pub site: Site,
    pub router: Router,
    pub demux: Demultiplexer,
    pub client: Option<Client>,
    pub server: Option<ReplyServer>,
    /// Start offset within the first hello period.
    pub offset: SimTime,
    tx: TxState,
    trigger_pending: bool,
    finished: bool,
}

/// Discrete-event simulation of one scenario.
#[derive(Debug)]
pub struct Simulation {
    scenario: Scenario,
    topology: Topology,
    radios: Vec<RadioConfig>,
    mac: MacConfig,
    nodes: Vec<Node>,
    index_of: HashMap<NodeAddress, usize>,
    /// `audible[i * n + j]`: node `i` hears node `j`.
    audible: Vec<bool>,
    adjacency: Vec<Vec<usize>>,
    air: Vec<Vec<AirFrame>>,
    /// Frames ending before `now - air_horizon` can no longer overlap a
    /// frame still on the air.
    air_horizon: SimTime,
    queue: BinaryHeap<Reverse<(SimTime, u64, Event)>>,
    ordinal: u64,
    next_frame_id: u64,
    now: SimTime,
    rng: ChaCha8Rng,
    counters: Counters,
    trace: Option<Trace>,
    clients: usize,
    finished_clients: usize,
    issued_total: u64,
    discovery: SimTime,
    learning: SimTime,
    end: SimTime,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        let topology = scenario.validate()?;
        let mac = scenario.mac_config()?;
        let radios = scenario.radios();
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
        let n = topology.len();
        let adjacency = topology.adjacency(&radios[0]);
        let mut audible = vec![false; n * n];
        for (i, row) in adjacency.iter().enumerate() {
            for &j in row {
                audible[i * n + j] = true;
            }
        }
        let routing = scenario.routing.clone();
        let hello = SimTime::from_secs_f64(scenario.hello_period_s);
        let mut nodes = Vec::with_capacity(n);
        let mut clients = 0;
        for site in &topology.sites {
            let priority = scenario.priority_of(site);
            let router = Router::new(
                site.address,
                routing.clone(),
                scenario.hello_period_s,
                scenario.route_period_s,
                priority,
            );
            let (client, server) = if site.is_gateway {
                (
                    None,
                    Some(ReplyServer::new(site.address, scenario.reply_timeout_s)),
                )
            } else {
                clients += 1;
                (
                    Some(Client::new(site.address, scenario.app_config(site))),
                    None,
                )
            };
            nodes.push(Node {
                site: site.clone(),
                router,
                demux: Demultiplexer::new(&mac),
                client,
                server,
                offset: SimTime(rng.random_range(0..hello.0.max(1))),
                tx: TxState::Idle,
                trigger_pending: false,
                finished: false,
            });
        }
        let index_of = topology
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| (s.address, i))
            .collect();
        let longest = radios
            .iter()
            .map(|r| r.airtime(crate::codec::MAX_FRAME_LEN))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ScenarioError::Mac(e.into()))?
            .into_iter()
            .max()
            .unwrap_or(SimTime::ZERO);
        let mut sim = Simulation {
            discovery: SimTime::from_secs_f64(scenario.discovery_duration()),
            learning: SimTime::from_secs_f64(scenario.learning_duration()),
            end: SimTime::from_secs_f64(scenario.sim_duration()),
            air: (0..radios.len()).map(|_| Vec::new()).collect(),
            air_horizon: longest,
            scenario,
            topology,
            radios,
            mac,
            nodes,
            index_of,
            audible,
            adjacency,
            queue: BinaryHeap::new(),
            ordinal: 0,
            next_frame_id: 0,
            now: SimTime::ZERO,
            rng,
            counters: Counters::default(),
            trace: None,
            clients,
            finished_clients: 0,
            issued_total: 0,
        };
        for i in 0..n {
            let off = sim.nodes[i].offset;
            sim.schedule(off, Event::Hello(i));
            sim.schedule(off + sim.discovery, Event::RouteTimer(i));
            if sim.nodes[i].client.is_some() {
                sim.schedule(off + sim.discovery + sim.learning, Event::AppNext(i));
            }
        }
        Ok(sim)
    }

    /// Records every transmission and reception from now on.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Trace::default);
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.trace.as_ref()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn radios(&self) -> &[RadioConfig] {
        &self.radios
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// Earliest instant at which every node has finished learning.
    pub fn forwarding_start(&self) -> SimTime {
        let last = self
            .nodes
            .iter()
            .map(|n| n.offset)
            .max()
            .unwrap_or(SimTime::ZERO);
        last + self.discovery + self.learning
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        self.ordinal += 1;
        self.queue.push(Reverse((at, self.ordinal, ev)));
    }

    fn hears(&self, i: usize, j: usize) -> bool {
        i == j || self.audible[i * self.nodes.len() + j]
    }

    /// Processes events up to and including `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while let Some(Reverse((at, _, _))) = self.queue.peek() {
            if *at > until {
                break;
            }
            let Reverse((at, _, ev)) = self.queue.pop().expect("peeked");
            debug_assert!(at >= self.now, "event scheduled in the past");
            self.now = at;
            self.counters.events += 1;
            self.handle(ev);
        }
        self.now = self.now.max(until.min(self.end));
    }

    /// Runs until every client is done or the duration elapses.
    pub fn run(mut self) -> Result<MetricsReport, MetricsError> {
        self.run_to_completion();
        self.report()
    }

    pub fn run_to_completion(&mut self) {
        while self.finished_clients < self.clients {
            let Some(Reverse((at, _, ev))) = self.queue.pop() else {
                break;
            };
            if at > self.end {
                break;
            }
            debug_assert!(at >= self.now, "event scheduled in the past");
            self.now = at;
            self.counters.events += 1;
            self.handle(ev);
        }
    }

    /// Metrics as of now; requests still in flight count as lost.
    pub fn report(&mut self) -> Result<MetricsReport, MetricsError> {
        let mut flows = Vec::with_capacity(self.clients);
        let mut c = self.counters;
        for node in &mut self.nodes {
            let stats = node.router.stats();
            c.forwarded += stats.forwarded;
            c.ttl_drops += stats.ttl_drops;
            c.no_route_drops += stats.no_route_drops;
            c.queue_drops += stats.queue_drops;
            c.fragment_losses += node.demux.fragment_losses();
            if let Some(s) = &node.server {
                c.corrupt_payloads += s.corrupt();
            }
            if let Some(client) = &mut node.client {
                client.finish();
                flows.push(FlowRecords {
                    source: client.address(),
                    priority: client.config().priority,
                    records: client.records().to_vec(),
                });
            }
        }
        let mut report = compute_metrics(&flows)?;
        report.counters = c;
        Ok(report)
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Hello(i) => {
                let now = self.now;
                let node = &mut self.nodes[i];
                let _ = node.router.queue_hello(now);
                if node.router.expire_state(now) {
                    self.trigger(i);
                }
                self.nodes[i].demux.expire(now);
                self.kick(i);
                let next = now + SimTime::from_secs_f64(self.scenario.hello_period_s);
                self.schedule(next, Event::Hello(i));
            }
            Event::RouteTimer(i) => {
                let now = self.now;
                let node = &mut self.nodes[i];
                node.router.queue_route_messages(now);
                node.trigger_pending = false;
                self.kick(i);
                let next = now + SimTime::from_secs_f64(self.scenario.route_period_s);
                self.schedule(next, Event::RouteTimer(i));
            }
            Event::Triggered(i) => {
                let node = &mut self.nodes[i];
                if node.trigger_pending {
                    node.trigger_pending = false;
                    node.router.queue_route_messages(self.now);
                    self.kick(i);
                }
            }
            Event::AppNext(i) => self.issue_request(i),
            Event::AppTimeout(i, seq) => {
                let now = self.now;
                let resolved = self.nodes[i]
                    .client
                    .as_mut()
                    .is_some_and(|c| c.on_timeout(seq, now));
                if resolved {
                    self.after_resolution(i);
                }
            }
            Event::MacAttempt(i) => self.attempt(i),
            Event::TxEnd { channel, id } => self.end_transmission(channel, id),
        }
    }

    /// Schedules a rate-limited triggered update once learning has begun.
    fn trigger(&mut self, i: usize) {
        let node = &self.nodes[i];
        if node.trigger_pending || self.now < node.offset + self.discovery {
            return;
        }
        self.nodes[i].trigger_pending = true;
        let max = self.scenario.routing.triggered_update_delay_s;
        let delay = if max > 0.0 {
            self.rng.random_range(0.0..=max)
        } else {
            0.0
        };
        self.schedule(
            self.now + SimTime::from_secs_f64(delay),
            Event::Triggered(i),
        );
    }

    fn issue_request(&mut self, i: usize) {
        let now = self.now;
        if let Some(cap) = self.scenario.max_total_requests {
            if self.issued_total >= cap {
                if let Some(c) = self.nodes[i].client.as_mut() {
                    c.stop();
                }
                self.check_finished(i);
                return;
            }
        }
        let node = &mut self.nodes[i];
        let Some(client) = node.client.as_mut() else {
            return;
        };
        let Some(request) = client.next_request(now) else {
            self.check_finished(i);
            return;
        };
        let seq = client.outstanding().expect("just issued");
        let priority = client.config().priority;
        let timeout = SimTime::from_secs_f64(client.config().reply_timeout_s);
        self.issued_total += 1;
        // A failed originate is a lost request; the timeout resolves it.
        let _ = node.router.originate(request, priority, now);
        self.schedule(now + timeout, Event::AppTimeout(i, seq));
        self.kick(i);
    }

    fn after_resolution(&mut self, i: usize) {
        let max = self.scenario.request_jitter_s;
        let jitter = if max > 0.0 {
            self.rng.random_range(0.0..=max)
        } else {
            0.0
        };
        let gap = SimTime::from_secs_f64(self.scenario.request_gap_s + jitter);
        self.schedule(self.now + gap, Event::AppNext(i));
        self.check_finished(i);
    }

    fn check_finished(&mut self, i: usize) {
        let node = &mut self.nodes[i];
        if !node.finished && node.client.as_ref().is_some_and(Client::is_finished) {
            node.finished = true;
            self.finished_clients += 1;
        }
    }

    /// Starts sending the next queued packet if the radio is free.
    fn kick(&mut self, i: usize) {
        if !matches!(self.nodes[i].tx, TxState::Idle) {
            return;
        }
        let Some((packet, _)) = self.nodes[i].router.pop_outgoing() else {
            return;
        };
        let frames = self.mac.plan_frames(&packet);
        self.nodes[i].tx = TxState::Deferring(frames);
        self.attempt(i);
    }

    fn attempt(&mut self, i: usize) {
        let TxState::Deferring(frames) = &self.nodes[i].tx else {
            return;
        };
        let channels: Vec<u8> = frames
            .iter()
            .map(|(r, _)| self.radios[*r].channel_id)
            .collect();
        let (index_of, heard, n) = (&self.index_of, &self.audible, self.nodes.len());
        let audible = |addr: NodeAddress| {
            index_of
                .get(&addr)
                .is_some_and(|&j| i == j || heard[i * n + j])
        };
        let active = self.air.iter().flatten().map(|f| &f.tx);
        let decision = listen_before_talk(
            active,
            &channels,
            self.now,
            audible,
            self.mac.backoff_max_s,
            &mut self.rng,
        );
        match decision {
            LbtDecision::RetryAt(t) => self.schedule(t, Event::MacAttempt(i)),
            LbtDecision::TransmitNow => {
                let TxState::Deferring(frames) =
                    std::mem::replace(&mut self.nodes[i].tx, TxState::Idle)
                else {
                    unreachable!()
                };
                self.nodes[i].tx = TxState::Transmitting(frames.len());
                let sender = self.nodes[i].site.address;
                for (radio, packet) in frames {
                    let cfg = &self.radios[radio];
                    let tx = Transmission::new(packet, sender, cfg, self.now)
                        .expect("frames are planned within the size limit");
                    self.next_frame_id += 1;
                    let id = self.next_frame_id;
                    self.counters.frames_sent += 1;
                    if let Some(trace) = &mut self.trace {
                        trace.transmissions.push(TxRecord {
                            sender: i,
                            channel: tx.channel_id,
                            t_start: tx.t_start,
                            t_end: tx.t_end,
                            header: tx.packet.header,
                            payload: tx.packet.payload.clone(),
                        });
                    }
                    self.schedule(tx.t_end, Event::TxEnd { channel: radio, id });
                    self.air[radio].push(AirFrame { id, sender: i, tx });
                }
            }
        }
    }

    fn end_transmission(&mut self, channel: usize, id: u64) {
        let pos = self.air[channel]
            .iter()
            .position(|f| f.id == id)
            .expect("ending frame is on the air");
        let sender = self.air[channel][pos].sender;
        let mut delivered = Vec::new();
        {
            let frames = &self.air[channel];
            let frame = &frames[pos];
            for &r in &self.adjacency[sender] {
                let outcome = if !self.scenario.collisions {
                    Reception::Delivered
                } else {
                    let mut set = vec![&frame.tx];
                    set.extend(
                        frames
                            .iter()
                            .filter(|o| {
                                o.id != id && o.tx.overlaps(&frame.tx) && self.hears(r, o.sender)
                            })
                            .map(|o| &o.tx),
                    );
                    if set.len() == 1 {
                        Reception::Delivered
                    } else {
                        deliver_or_collide(&set, self.nodes[r].site.address)[0]
                    }
                };
                match outcome {
                    Reception::Delivered => delivered.push(r),
                    Reception::Collided => self.counters.collisions += 1,
                    Reception::ReceiverBusy => self.counters.half_duplex_losses += 1,
                    Reception::OwnFrame => {}
                }
            }
        }
        let packet = self.air[channel][pos].tx.packet.clone();
        let t_start = self.air[channel][pos].tx.t_start;
        let horizon = self.now.saturating_sub(self.air_horizon);
        // Keep the finished frame until nothing overlapping it can still end.
        self.air[channel].retain(|f| f.tx.t_end > horizon);
        for r in delivered {
            self.counters.frames_delivered += 1;
            if let Some(trace) = &mut self.trace {
                trace.receptions.push(RxRecord {
                    receiver: r,
                    sender,
                    channel: self.radios[channel].channel_id,
                    t_start,
                    t_end: self.now,
                    header: packet.header,
                });
            }
            self.receive(r, channel, packet.clone());
        }
        if let TxState::Transmitting(left) = &mut self.nodes[sender].tx {
            *left -= 1;
            if *left == 0 {
                self.nodes[sender].tx = TxState::Idle;
                self.kick(sender);
            }
        }
    }

    fn receive(&mut self, i: usize, radio: usize, frame: Packet) {
        let now = self.now;
        let node = &mut self.nodes[i];
        if !node.router.accepts(&frame) {
            return;
        }
        let Some(p) = node.demux.receive(frame, radio, now) else {
            return;
        };
        match p.ptype() {
            PacketType::Hello => node.router.on_hello(&p, now),
            PacketType::Route => {
                if node.router.on_route_message(&p, now) {
                    self.trigger(i);
                }
            }
            PacketType::Data => {
                let priority = packet_priority(&p);
                match node.router.relay(p, priority, now) {
                    RelayOutcome::Deliver(p) => self.deliver_local(i, p),
                    RelayOutcome::Forwarded => self.kick(i),
                    RelayOutcome::Dropped(_) => {}
                }
            }
            PacketType::MoreSignificant | PacketType::LessSignificant => {
                unreachable!("demultiplexer only returns whole packets")
            }
        }
    }

    fn deliver_local(&mut self, i: usize, p: Packet) {
        let now = self.now;
        let node = &mut self.nodes[i];
        if let Some(server) = node.server.as_mut() {
            if let Some(reply) = server.serve(&p, now) {
                let priority = packet_priority(&reply);
                let _ = node.router.originate(reply, priority, now);
                self.kick(i);
            }
        } else if let Some(client) = node.client.as_mut() {
            if client.on_reply(&p, now) {
                self.after_resolution(i);
            }
        }
    }
}

/// Builds and runs one scenario.
pub fn run(scenario: &Scenario) -> Result<MetricsReport, RunError> {
    Ok(Simulation::new(scenario.clone())?.run()?)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
