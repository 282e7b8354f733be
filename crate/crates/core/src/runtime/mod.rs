//! Node-level messaging and schedule configuration: `send_msg`,
//! `recv_msg`, `set_conf` and `get_conf`.

mod fragment;

pub use fragment::{
    fragment, fragment_count, FragmentError, FragmentHeader, Message, Reassembly,
    DEFAULT_REASSEMBLY_TIMEOUT_NS, ETHERTYPE_RUNTIME, FRAGMENT_HEADER_LEN, MAX_FRAGMENT_DATA,
};

use thiserror::Error;

use crate::fabric::{decode_id, AddrError, NodeId, DATA_PORTS};
use crate::net::{Action, Network};
use crate::nic::regs::{scr, tqcr, COMMIT, GUARDBAND_NS, NUM_ENTRIES, SCR_ENABLE, WINDOW_US};
use crate::nic::{Frame, RegisterError, ScheduleTable, MAX_ENTRIES};
use crate::sim::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApiError {
    #[error("message size must be at least 1 byte")]
    EmptyMessage,
    #[error("size {size} exceeds the {available} bytes supplied")]
    ShortBuffer { size: u32, available: usize },
    #[error("message of {0} bytes needs more than 65535 fragments")]
    TooLarge(u32),
    #[error("no node {0} in this topology")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Addr(#[from] AddrError),
    #[error("priority {0} does not fit the 3-bit PCP field")]
    Priority(u8),
    #[error("node {node} has no data port {port}")]
    NoSuchPort { node: NodeId, port: usize },
    #[error("{0} schedule entries exceed the table capacity")]
    TooManyEntries(usize),
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error("receive timed out")]
    Timeout,
    #[error("no pending event can complete the receive")]
    WouldBlockForever,
}

/// State of a posted receive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Ticket {
    Pending { node: usize, size: u32, src_id: u32 },
    Ready(Vec<u8>),
    TimedOut,
}

/// Handle for a posted receive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RecvHandle(u64);

impl Network {
    fn node_of(&self, id: NodeId) -> Result<usize, ApiError> {
        self.node_index(id).ok_or(ApiError::UnknownNode(id))
    }

    /// Send the first `size` bytes of `data` from `src` to the node encoded
    /// in `dst`. Returns the message id.
    pub fn send_msg(
        &mut self,
        src: NodeId,
        data: &[u8],
        size: u32,
        dst: u32,
        pcp: u8,
    ) -> Result<u32, ApiError> {
        if size == 0 {
            return Err(ApiError::EmptyMessage);
        }
        if size as usize > data.len() {
            return Err(ApiError::ShortBuffer {
                size,
                available: data.len(),
            });
        }
        if fragment_count(size as usize) > u16::MAX as usize {
            return Err(ApiError::TooLarge(size));
        }
        if pcp > 7 {
            return Err(ApiError::Priority(pcp));
        }
        let n = self.node_of(src)?;
        let dst_node = decode_id(dst);
        self.node_of(dst_node)?;
        let src_id = src.encode()?;
        let counter = self.nodes[n].next_msg_id.entry(dst).or_insert(0);
        let msg_id = *counter;
        *counter = counter.wrapping_add(1);

        let now = self.now();
        for payload in fragment(&data[..size as usize], msg_id, src_id, dst) {
            let app = (payload.len() - FRAGMENT_HEADER_LEN) as u32;
            let f = self.host_frame(now, n, dst_node, pcp, &payload, app, None);
            self.route_from_host(n, dst_node, f);
        }
        Ok(msg_id)
    }

    /// Post a receive for a `size`-byte message from `src`. Completes from
    /// already-delivered messages when possible.
    pub fn post_recv(
        &mut self,
        node: NodeId,
        size: u32,
        src: u32,
        timeout_ns: Option<u64>,
    ) -> Result<RecvHandle, ApiError> {
        let n = self.node_of(node)?;
        let id = self.next_ticket;
        self.next_ticket += 1;
        let ticket = match take_matching(&mut self.nodes[n].inbox, size, src) {
            Some(data) => Ticket::Ready(data),
            None => {
                if let Some(t) = timeout_ns {
                    self.events
                        .schedule_in(t, Action::RecvTimeout { ticket: id });
                }
                Ticket::Pending {
                    node: n,
                    size,
                    src_id: src,
                }
            }
        };
        self.tickets.insert(id, ticket);
        Ok(RecvHandle(id))
    }

    pub fn recv_state(&self, h: RecvHandle) -> Option<&Ticket> {
        self.tickets.get(&h.0)
    }

    /// Remove a finished receive. Pending receives stay posted.
    pub fn take_recv(&mut self, h: RecvHandle) -> Option<Result<Vec<u8>, ApiError>> {
        match self.tickets.get(&h.0)? {
            Ticket::Pending { .. } => None,
            _ => match self.tickets.remove(&h.0)? {
                Ticket::Ready(d) => Some(Ok(d)),
                _ => Some(Err(ApiError::Timeout)),
            },
        }
    }

    /// Blocking receive: runs the simulation until the message arrives or
    /// the timeout fires.
    pub fn recv_msg(
        &mut self,
        node: NodeId,
        size: u32,
        src: u32,
        timeout_ns: Option<u64>,
    ) -> Result<Vec<u8>, ApiError> {
        let h = self.post_recv(node, size, src, timeout_ns)?;
        let mut steps = 0u64;
        loop {
            if let Some(r) = self.take_recv(h) {
                return r;
            }
            steps += 1;
            let stuck = timeout_ns.is_none() && steps.is_multiple_of(4096) && self.quiescent();
            if stuck || !self.step() {
                self.tickets.remove(&h.0);
                return Err(ApiError::WouldBlockForever);
            }
        }
    }

    pub(crate) fn recv_timeout(&mut self, ticket: u64) {
        if let Some(t @ Ticket::Pending { .. }) = self.tickets.get_mut(&ticket) {
            *t = Ticket::TimedOut;
        }
    }

    pub(crate) fn runtime_deliver(&mut self, now: SimTime, n: usize, f: Frame) {
        let Ok(h) = FragmentHeader::decode(&f.payload) else {
            self.nodes[n].counters.malformed += 1;
            return;
        };
        let timeout = self.reassembly_timeout_ns;
        let node = &mut self.nodes[n];
        let opened = h.frag_count > 1 && node.reassembly.deadline(h.src_id, h.msg_id).is_none();
        let done = node.reassembly.accept(&h, &f.payload, now, timeout);
        if opened && done.is_none() {
            self.events
                .schedule_in(timeout, Action::ReassemblyExpire { node: n });
        }
        let Some(msg) = done else { return };
        self.nodes[n].counters.messages_delivered += 1;
        let waiting = self.tickets.iter_mut().find(|(_, t)| {
            matches!(t, Ticket::Pending { node, size, src_id }
                if *node == n && *size as usize == msg.data.len() && *src_id == msg.src_id)
        });
        match waiting {
            Some((_, t)) => *t = Ticket::Ready(msg.data),
            None => self.nodes[n].inbox.push_back(msg),
        }
    }

    /// Set the reassembly deadline for buffers opened from now on.
    pub fn set_reassembly_timeout(&mut self, ns: u64) {
        self.reassembly_timeout_ns = ns;
    }

    fn port_of(&self, node: NodeId, port: usize) -> Result<usize, ApiError> {
        let n = self.node_of(node)?;
        if !DATA_PORTS.contains(&port) || self.port(n, port).is_none() {
            return Err(ApiError::NoSuchPort { node, port });
        }
        Ok(n)
    }

    /// Program a port's schedule through its registers and commit. The new
    /// table takes effect at the next window boundary.
    pub fn set_conf(
        &mut self,
        node: NodeId,
        port: usize,
        cfg: &ScheduleTable,
    ) -> Result<(), ApiError> {
        let n = self.port_of(node, port)?;
        if cfg.entries.len() > MAX_ENTRIES {
            return Err(ApiError::TooManyEntries(cfg.entries.len()));
        }
        let local = self.nodes[n].clock.ns_at(self.now());
        let nic = &mut self.nodes[n].ports[port].as_mut().expect("checked").nic;
        nic.write_register(WINDOW_US, cfg.window_us, local)?;
        nic.write_register(GUARDBAND_NS, cfg.guardband_ns, local)?;
        nic.write_register(NUM_ENTRIES, cfg.entries.len() as u32, local)?;
        for (j, e) in cfg.entries.iter().enumerate() {
            nic.write_register(scr(j as u32), SCR_ENABLE | e.queue_idx as u32, local)?;
            nic.write_register(tqcr(j as u32), e.slot_us, local)?;
        }
        nic.write_register(COMMIT, 1, local)?;
        self.kick_port(n, port);
        Ok(())
    }

    /// The most recently committed schedule of a port.
    pub fn get_conf(&self, node: NodeId, port: usize) -> Result<ScheduleTable, ApiError> {
        let n = self.port_of(node, port)?;
        Ok(self
            .port(n, port)
            .expect("checked")
            .regs()
            .committed_table()
            .clone())
    }
}

fn take_matching(
    inbox: &mut std::collections::VecDeque<Message>,
    size: u32,
    src: u32,
) -> Option<Vec<u8>> {
    let i = inbox
        .iter()
        .position(|m| m.src_id == src && m.data.len() == size as usize)?;
    inbox.remove(i).map(|m| m.data)
}
