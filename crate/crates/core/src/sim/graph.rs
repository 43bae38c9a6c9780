//! Server/content storage graph with per-content idle-replica sets.
//!
//! Slots are numbered `server * d + k`. Each content keeps the list of slots
//! holding it and the subset of those on idle servers, both with position
//! indices so that insert, delete and uniform sampling are O(1).

use rand::seq::SliceRandom;
use rand::Rng;

use super::indexed_set::IndexedSet;
use crate::error::{Error, Result};
use crate::model::{ReplicationProfile, SystemParams};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct CacheGraph {
    m: usize,
    d: usize,
    slot_content: Vec<u32>,
    holders: Vec<Vec<u32>>,
    holder_pos: Vec<u32>,
    idle: Vec<Vec<u32>>,
    idle_pos: Vec<u32>,
    serving: Vec<u32>,
    busy: usize,
    available: IndexedSet,
}

/// What [`CacheGraph::check_consistency`] found wrong, if anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inconsistency(pub String);

impl CacheGraph {
    /// Random bipartite graph with `d` slots per server and `D_c` replicas
    /// per content: stubs are paired by a seeded shuffle, then duplicate
    /// (server, content) pairs are removed by random slot swaps.
    pub fn build<R: Rng + ?Sized>(profile: &ReplicationProfile, params: &SystemParams, rng: &mut R) -> Result<Self> {
        let (m, d) = (params.m, params.d);
        let total = m * d;
        if profile.total() != total {
            return Err(Error::Infeasible(format!(
                "profile holds {} replicas but the servers have {} slots",
                profile.total(),
                total
            )));
        }
        if let Some((c, &dc)) = profile.replicas().iter().enumerate().find(|(_, &x)| x > m) {
            return Err(Error::Infeasible(format!(
                "content {c} needs {dc} replicas on {m} servers"
            )));
        }
        let mut slots: Vec<u32> = Vec::with_capacity(total);
        for (c, &dc) in profile.replicas().iter().enumerate() {
            slots.extend(std::iter::repeat(c as u32).take(dc));
        }
        slots.shuffle(rng);
        repair_duplicates(&mut slots, m, d, rng)?;
        Ok(Self::from_slots(slots, profile.len(), m, d))
    }

    /// Graph from an explicit slot assignment. Panics on duplicates.
    pub fn from_slots(slot_content: Vec<u32>, n: usize, m: usize, d: usize) -> Self {
        assert_eq!(slot_content.len(), m * d, "slot count must equal m*d");
        let mut holders = vec![Vec::new(); n];
        let mut holder_pos = vec![NONE; m * d];
        for (slot, &c) in slot_content.iter().enumerate() {
            let list = &mut holders[c as usize];
            holder_pos[slot] = list.len() as u32;
            list.push(slot as u32);
        }
        let idle = holders.clone();
        let idle_pos = holder_pos.clone();
        let mut available = IndexedSet::with_universe(n);
        for (c, h) in holders.iter().enumerate() {
            if !h.is_empty() {
                available.insert(c);
            }
        }
        let g = CacheGraph {
            m,
            d,
            slot_content,
            holders,
            holder_pos,
            idle,
            idle_pos,
            serving: vec![NONE; m],
            busy: 0,
            available,
        };
        if let Err(Inconsistency(msg)) = g.check_consistency() {
            panic!("invalid slot assignment: {msg}");
        }
        g
    }

    pub fn servers(&self) -> usize {
        self.m
    }

    pub fn slots_per_server(&self) -> usize {
        self.d
    }

    pub fn contents(&self) -> usize {
        self.holders.len()
    }

    pub fn busy_count(&self) -> usize {
        self.busy
    }

    /// Available replicas of `c`: copies on idle servers.
    pub fn z(&self, c: usize) -> usize {
        self.idle[c].len()
    }

    pub fn replicas(&self, c: usize) -> usize {
        self.holders[c].len()
    }

    pub fn replica_counts(&self) -> Vec<usize> {
        self.holders.iter().map(Vec::len).collect()
    }

    pub fn is_busy(&self, server: usize) -> bool {
        self.serving[server] != NONE
    }

    pub fn serving(&self, server: usize) -> Option<usize> {
        let c = self.serving[server];
        (c != NONE).then_some(c as usize)
    }

    pub fn server_contents(&self, server: usize) -> &[u32] {
        &self.slot_content[server * self.d..(server + 1) * self.d]
    }

    pub fn server_stores(&self, server: usize, c: usize) -> bool {
        self.server_contents(server).contains(&(c as u32))
    }

    pub fn holder_servers(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        self.holders[c].iter().map(move |&s| s as usize / self.d)
    }

    pub fn idle_slots(&self, c: usize) -> &[u32] {
        &self.idle[c]
    }

    /// Contents with at least one available replica.
    pub fn available(&self) -> &IndexedSet {
        &self.available
    }

    pub fn slot_server(&self, slot: usize) -> usize {
        slot / self.d
    }

    pub fn slot_content(&self, slot: usize) -> usize {
        self.slot_content[slot] as usize
    }

    /// Uniformly random idle server storing `c`, or `None` when `c` has no
    /// available replica.
    pub fn pick_idle<R: Rng + ?Sized>(&self, c: usize, rng: &mut R) -> Option<usize> {
        let z = self.idle[c].len();
        match z {
            0 => None,
            1 => Some(self.idle[c][0] as usize / self.d),
            _ => Some(self.idle[c][rng.random_range(0..z)] as usize / self.d),
        }
    }

    /// Marks an idle server busy serving `c`; all its contents lose one
    /// available replica.
    pub fn occupy(&mut self, server: usize, c: usize) {
        assert!(!self.is_busy(server), "server {server} is already busy");
        debug_assert!(self.server_stores(server, c));
        for slot in server * self.d..(server + 1) * self.d {
            self.remove_idle(slot);
        }
        self.serving[server] = c as u32;
        self.busy += 1;
    }

    /// [`pick_idle`](Self::pick_idle) followed by [`occupy`](Self::occupy).
    pub fn assign<R: Rng + ?Sized>(&mut self, c: usize, rng: &mut R) -> Option<usize> {
        let server = self.pick_idle(c, rng)?;
        self.occupy(server, c);
        Some(server)
    }

    /// Frees a busy server and returns the content it was serving. All its
    /// contents gain one available replica.
    pub fn release(&mut self, server: usize) -> usize {
        let c = self.serving[server];
        assert!(c != NONE, "departure from idle server {server}");
        for slot in server * self.d..(server + 1) * self.d {
            self.insert_idle(slot);
        }
        self.serving[server] = NONE;
        self.busy -= 1;
        c as usize
    }

    /// Overwrites the content of an idle slot. The new content must not
    /// already be on that server. Returns the evicted content.
    pub fn replace(&mut self, slot: usize, new: usize) -> usize {
        let server = slot / self.d;
        assert!(!self.is_busy(server), "replacing a slot of busy server {server}");
        assert!(!self.server_stores(server, new), "server {server} already stores {new}");
        let old = self.slot_content[slot] as usize;
        self.remove_idle(slot);
        let p = self.holder_pos[slot] as usize;
        let list = &mut self.holders[old];
        list.swap_remove(p);
        if p < list.len() {
            self.holder_pos[list[p] as usize] = p as u32;
        }
        self.slot_content[slot] = new as u32;
        self.holder_pos[slot] = self.holders[new].len() as u32;
        self.holders[new].push(slot as u32);
        self.insert_idle(slot);
        old
    }

    fn remove_idle(&mut self, slot: usize) {
        let c = self.slot_content[slot] as usize;
        let p = self.idle_pos[slot] as usize;
        let list = &mut self.idle[c];
        list.swap_remove(p);
        if p < list.len() {
            self.idle_pos[list[p] as usize] = p as u32;
        }
        self.idle_pos[slot] = NONE;
        if list.is_empty() {
            self.available.remove(c);
        }
    }

    fn insert_idle(&mut self, slot: usize) {
        let c = self.slot_content[slot] as usize;
        let list = &mut self.idle[c];
        self.idle_pos[slot] = list.len() as u32;
        list.push(slot as u32);
        if list.len() == 1 {
            self.available.insert(c);
        }
    }

    /// Recomputes every derived structure from the slot table and compares.
    pub fn check_consistency(&self) -> std::result::Result<(), Inconsistency> {
        let fail = |msg: String| Err(Inconsistency(msg));
        let n = self.holders.len();
        for s in 0..self.m {
            let row = self.server_contents(s);
            for (i, &c) in row.iter().enumerate() {
                if row[..i].contains(&c) {
                    return fail(format!("server {s} stores content {c} twice"));
                }
            }
        }
        let mut replicas = vec![0usize; n];
        let mut z = vec![0usize; n];
        for (slot, &c) in self.slot_content.iter().enumerate() {
            let c = c as usize;
            replicas[c] += 1;
            let hp = self.holder_pos[slot] as usize;
            if self.holders[c].get(hp) != Some(&(slot as u32)) {
                return fail(format!("holder index of slot {slot} is stale"));
            }
            let idle_server = !self.is_busy(slot / self.d);
            let ip = self.idle_pos[slot];
            if idle_server {
                z[c] += 1;
                if self.idle[c].get(ip as usize) != Some(&(slot as u32)) {
                    return fail(format!("idle index of slot {slot} is stale"));
                }
            } else if ip != NONE {
                return fail(format!("slot {slot} on a busy server is marked idle"));
            }
        }
        for c in 0..n {
            if replicas[c] != self.holders[c].len() {
                return fail(format!(
                    "content {c}: {} holders listed, {} stored",
                    self.holders[c].len(),
                    replicas[c]
                ));
            }
            if z[c] != self.idle[c].len() {
                return fail(format!(
                    "content {c}: Z is {} but {} idle copies exist",
                    self.idle[c].len(),
                    z[c]
                ));
            }
            if (z[c] > 0) != self.available.contains(c) {
                return fail(format!("availability flag of content {c} is wrong"));
            }
        }
        let busy = self.serving.iter().filter(|&&c| c != NONE).count();
        if busy != self.busy {
            return fail(format!("busy count {} but {} servers serving", self.busy, busy));
        }
        Ok(())
    }
}

fn server_has(slots: &[u32], d: usize, server: usize, c: u32, except: usize) -> bool {
    (server * d..(server + 1) * d).any(|i| i != except && slots[i] == c)
}

fn repair_duplicates<R: Rng + ?Sized>(slots: &mut [u32], m: usize, d: usize, rng: &mut R) -> Result<()> {
    let total = m * d;
    let mut bad: Vec<usize> = Vec::new();
    for s in 0..m {
        for i in s * d..(s + 1) * d {
            if slots[s * d..i].contains(&slots[i]) {
                bad.push(i);
            }
        }
    }
    let limit = 100 * total as u64;
    let mut attempts = 0u64;
    while let Some(&a) = bad.last() {
        let sa = a / d;
        let x = slots[a];
        if !server_has(slots, d, sa, x, a) {
            bad.pop();
            continue;
        }
        if attempts >= limit {
            return Err(Error::GraphRepair {
                attempts,
                remaining: bad.len(),
            });
        }
        attempts += 1;
        let b = rng.random_range(0..total);
        let sb = b / d;
        let y = slots[b];
        if sb == sa || x == y {
            continue;
        }
        if server_has(slots, d, sa, y, a) || server_has(slots, d, sb, x, b) {
            continue;
        }
        slots.swap(a, b);
        bad.pop();
    }
    Ok(())
}
