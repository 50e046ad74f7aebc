//! Persona-driven synthetic worlds and traces.
//!
//! A world is a hostname universe split into disjoint per-(persona,
//! category) pools, a shared unlabeled background set and unused filler,
//! plus a partial labeling and a population of users. Traces are Poisson
//! request processes per user, emitted as tuples or as pcap frames carrying
//! HTTP GET requests.

use std::collections::HashMap;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::{CaptureError, Endianness, PacketRecord, PcapHeader, PcapWriter, TsResolution};
use crate::par::{self, Exec};
use crate::profiling::{CategoryId, CategoryStore, CategoryTaxonomy};
use crate::tuple_gen::{FlowTuple, TupleCsvError, TupleCsvWriter};

pub const MICROS_PER_HOUR: f64 = 3_600_000_000.0;
pub const DEFAULT_START_TS: u64 = 1_700_000_000_000_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible world: {0}")]
    InfeasibleSpec(String),
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("capture: {0}")]
    Capture(#[from] CaptureError),
    #[error("csv: {0}")]
    Csv(#[from] TupleCsvError),
}

fn default_zipf() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaSpec {
    pub name: String,
    /// Category names from the taxonomy.
    pub interest_categories: Vec<String>,
    pub num_hostnames_per_category: usize,
    /// Share of requests that go to the shared background hostnames.
    pub background_ratio: f64,
    /// Mean requests per user-hour.
    pub request_rate: f64,
    #[serde(default = "default_zipf")]
    pub zipf_s: f64,
    /// Overrides the world's `users_per_persona`.
    #[serde(default)]
    pub users: Option<usize>,
    /// Log-normal spread of per-user rates around `request_rate` (0 = all equal).
    #[serde(default)]
    pub rate_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Taxonomy file; the bundled IAB tier-1 list when absent.
    #[serde(default)]
    pub taxonomy: Option<std::path::PathBuf>,
    pub total_hostnames: usize,
    pub labeled_fraction: f64,
    pub background_hostnames: usize,
    pub personas: Vec<PersonaSpec>,
    pub users_per_persona: usize,
    pub duration_hours: f64,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_ts_micros: u64,
}

fn default_start() -> u64 {
    DEFAULT_START_TS
}

impl WorldSpec {
    /// The default evaluation world: 2k hostnames, three personas, 200 users,
    /// about 200k requests over two days.
    pub fn desk() -> Self {
        let persona = |name: &str, cats: &[&str], users: usize| PersonaSpec {
            name: name.to_string(),
            interest_categories: cats.iter().map(|c| c.to_string()).collect(),
            num_hostnames_per_category: 120,
            background_ratio: 0.3,
            request_rate: 21.0,
            zipf_s: 1.0,
            users: Some(users),
            rate_sigma: 0.0,
        };
        WorldSpec {
            taxonomy: None,
            total_hostnames: 2000,
            labeled_fraction: 0.25,
            background_hostnames: 400,
            personas: vec![
                persona("gamer", &["Technology & Computing", "Hobbies & Interests"], 67),
                persona("sports", &["Sports", "Health & Fitness"], 67),
                persona("travel", &["Travel"], 66),
            ],
            users_per_persona: 67,
            duration_hours: 48.0,
            seed: 7,
            start_ts_micros: DEFAULT_START_TS,
        }
    }

    pub fn taxonomy(&self) -> Result<CategoryTaxonomy, SynthError> {
        match &self.taxonomy {
            None => Ok(CategoryTaxonomy::iab_tier1()),
            Some(p) => CategoryTaxonomy::load(p).map_err(|e| SynthError::InvalidSpec(e.to_string())),
        }
    }

    pub fn users_of(&self, persona: &PersonaSpec) -> usize {
        persona.users.unwrap_or(self.users_per_persona)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return bad(format!("labeled_fraction {} outside [0, 1]", self.labeled_fraction));
        }
        if !(self.duration_hours.is_finite() && self.duration_hours >= 0.0) {
            return bad("duration_hours must be non-negative".into());
        }
        for p in &self.personas {
            if p.interest_categories.is_empty() {
                return bad(format!("persona {} has no interests", p.name));
            }
            if !(0.0..1.0).contains(&p.background_ratio) {
                return bad(format!("persona {} background_ratio outside [0, 1)", p.name));
            }
            if !(p.request_rate.is_finite() && p.request_rate >= 0.0) {
                return bad(format!("persona {} request_rate must be non-negative", p.name));
            }
            if !(p.zipf_s.is_finite() && p.zipf_s >= 0.0) {
                return bad(format!("persona {} zipf_s must be non-negative", p.name));
            }
            if !(p.rate_sigma.is_finite() && p.rate_sigma >= 0.0) {
                return bad(format!("persona {} rate_sigma must be non-negative", p.name));
            }
            if p.num_hostnames_per_category == 0 {
                return bad(format!("persona {} has empty pools", p.name));
            }
            if p.background_ratio > 0.0 && self.background_hostnames == 0 {
                return bad(format!("persona {} needs background hostnames", p.name));
            }
        }
        Ok(())
    }
}

/// Hostnames reserved for one interest of one persona.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub category: CategoryId,
    /// Universe indices, in popularity order (most popular first).
    pub hosts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Persona {
    pub spec: PersonaSpec,
    pub categories: Vec<CategoryId>,
    pub pools: Vec<Pool>,
    /// All pool hostnames interleaved in popularity order.
    pub ranked_hosts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub ip: IpAddr,
    pub persona: usize,
    /// Requests per hour.
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostRole {
    Pool {
        persona: u16,
        category: CategoryId,
    },
    Background,
    /// Part of the universe but never requested.
    Filler,
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub taxonomy: CategoryTaxonomy,
    pub hostnames: Vec<Arc<str>>,
    index: HashMap<Arc<str>, u32>,
    pub roles: Vec<HostRole>,
    pub personas: Vec<Persona>,
    /// Background hostnames in popularity order.
    pub background: Vec<u32>,
    /// Pool and filler hostnames in labeling order: the first
    /// `⌊labeled_fraction · total_hostnames⌋` are labeled.
    pub label_order: Vec<u32>,
    pub store: CategoryStore,
    pub users: Vec<User>,
}

const TLDS: [&str; 5] = ["com", "net", "org", "io", "example"];

fn hostname_for(i: usize) -> String {
    format!("h{i:05}.{}", TLDS[i % TLDS.len()])
}

pub fn user_ip(index: usize) -> IpAddr {
    IpAddr::V4(Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 0, 0, 0)) + index as u32 + 1))
}

impl World {
    pub fn generate(spec: &WorldSpec) -> Result<World, SynthError> {
        spec.validate()?;
        let taxonomy = spec.taxonomy()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let mut categories = Vec::new();
        for p in &spec.personas {
            let ids = p
                .interest_categories
                .iter()
                .map(|c| taxonomy.id(c).ok_or_else(|| SynthError::UnknownCategory(c.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            categories.push(ids);
        }
        let pooled: usize =
            spec.personas.iter().zip(&categories).map(|(p, c)| p.num_hostnames_per_category * c.len()).sum();
        let n = spec.total_hostnames;
        if pooled + spec.background_hostnames > n {
            return Err(SynthError::InfeasibleSpec(format!(
                "{pooled} pool and {} background hostnames exceed a universe of {n}",
                spec.background_hostnames
            )));
        }
        let labeled = (spec.labeled_fraction * n as f64).floor() as usize;
        let labelable = n - spec.background_hostnames;
        if labeled > labelable {
            return Err(SynthError::InfeasibleSpec(format!(
                "{labeled} labels requested but only {labelable} hostnames are labelable"
            )));
        }

        // Hostname names are assigned to roles through a permutation so a
        // name says nothing about its role.
        let hostnames: Vec<Arc<str>> = (0..n).map(|i| Arc::from(hostname_for(i))).collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.shuffle(&mut rng);
        let mut roles = vec![HostRole::Filler; n];
        let mut next = order.into_iter();
        let mut personas = Vec::new();
        for (pi, (p, cats)) in spec.personas.iter().zip(categories).enumerate() {
            let mut pools = Vec::new();
            for &c in &cats {
                let hosts: Vec<u32> = next.by_ref().take(p.num_hostnames_per_category).collect();
                for &h in &hosts {
                    roles[h as usize] = HostRole::Pool { persona: pi as u16, category: c };
                }
                pools.push(Pool { category: c, hosts });
            }
            let width = pools.len();
            let ranked_hosts = (0..p.num_hostnames_per_category)
                .flat_map(|rank| (0..width).map(move |k| (rank, k)))
                .map(|(rank, k)| pools[k].hosts[rank])
                .collect();
            personas.push(Persona { spec: p.clone(), categories: cats, pools, ranked_hosts });
        }
        let background: Vec<u32> = next.by_ref().take(spec.background_hostnames).collect();
        for &h in &background {
            roles[h as usize] = HostRole::Background;
        }

        let mut label_order: Vec<u32> = (0..n as u32).filter(|&h| roles[h as usize] != HostRole::Background).collect();
        label_order.shuffle(&mut rng);
        // Draw a label for every labelable hostname so the RNG stream (and
        // everything generated after it) does not depend on the fraction.
        let label_of: Vec<CategoryId> = label_order
            .iter()
            .map(|&h| {
                let filler = rng.random_range(0..taxonomy.len()) as CategoryId;
                match roles[h as usize] {
                    HostRole::Pool { category, .. } => category,
                    _ => filler,
                }
            })
            .collect();
        let mut store = CategoryStore::new(&taxonomy);
        for (&h, &cat) in label_order.iter().zip(&label_of).take(labeled) {
            store.insert(&hostnames[h as usize], [cat]);
        }

        let mut users = Vec::new();
        for (pi, p) in spec.personas.iter().enumerate() {
            let spread = LogNormal::new(-p.rate_sigma * p.rate_sigma / 2.0, p.rate_sigma)
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            for _ in 0..spec.users_of(p) {
                let factor = if p.rate_sigma > 0.0 { spread.sample(&mut rng) } else { 1.0 };
                users.push(User { ip: user_ip(users.len()), persona: pi, rate: p.request_rate * factor });
            }
        }

        let index = hostnames.iter().enumerate().map(|(i, h)| (h.clone(), i as u32)).collect();
        Ok(World {
            spec: spec.clone(),
            taxonomy,
            hostnames,
            index,
            roles,
            personas,
            background,
            label_order,
            store,
            users,
        })
    }

    /// Same world with a different labeled fraction. Label sets are nested:
    /// a larger fraction labels a superset of hostnames.
    pub fn relabeled(&self, fraction: f64) -> Result<World, SynthError> {
        let mut spec = self.spec.clone();
        spec.labeled_fraction = fraction;
        World::generate(&spec)
    }

    pub fn labeled_count(&self) -> usize {
        self.store.len()
    }

    pub fn hostname(&self, idx: u32) -> &Arc<str> {
        &self.hostnames[idx as usize]
    }

    /// Ground-truth persona owning a pool hostname.
    pub fn persona_of_host(&self, hostname: &str) -> Option<usize> {
        match self.role_of(hostname)? {
            HostRole::Pool { persona, .. } => Some(persona as usize),
            _ => None,
        }
    }

    pub fn role_of(&self, hostname: &str) -> Option<HostRole> {
        self.index.get(hostname).map(|&i| self.roles[i as usize])
    }

    pub fn user_index(&self, ip: IpAddr) -> Option<usize> {
        let IpAddr::V4(v4) = ip else { return None };
        let idx = u32::from(v4).checked_sub(u32::from(Ipv4Addr::new(10, 0, 0, 1)))? as usize;
        (idx < self.users.len()).then_some(idx)
    }

    /// Per-user Poisson request processes merged by timestamp.
    pub fn generate_trace(&self, exec: Exec) -> Trace {
        let duration = self.spec.duration_hours * MICROS_PER_HOUR;
        let per_user = par::map_range(exec, self.users.len(), |u| self.user_events(u, duration));
        let mut events: Vec<TraceEvent> = per_user.into_iter().flatten().collect();
        events.sort_by_key(|e| (e.ts_micros, e.user));
        Trace { events }
    }

    fn user_events(&self, u: usize, duration: f64) -> Vec<TraceEvent> {
        let user = &self.users[u];
        let persona = &self.personas[user.persona];
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(u as u64 + 1);
        if user.rate <= 0.0 || duration <= 0.0 {
            return Vec::new();
        }
        let gap = Exp::new(user.rate / MICROS_PER_HOUR).expect("positive rate");
        let pool_pick = zipf(persona.ranked_hosts.len(), persona.spec.zipf_s);
        let bg_pick = zipf(self.background.len(), persona.spec.zipf_s);
        let mut out = Vec::new();
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t >= duration {
                break;
            }
            let host = if rng.random::<f64>() < persona.spec.background_ratio {
                self.background[pick(&bg_pick, &mut rng)]
            } else {
                persona.ranked_hosts[pick(&pool_pick, &mut rng)]
            };
            out.push(TraceEvent { ts_micros: self.spec.start_ts_micros + t as u64, user: u as u32, host });
        }
        out
    }
}

fn zipf(n: usize, s: f64) -> Option<Zipf<f64>> {
    (n > 0).then(|| Zipf::new(n as f64, s).expect("valid zipf parameters"))
}

fn pick<R: Rng>(z: &Option<Zipf<f64>>, rng: &mut R) -> usize {
    let z = z.as_ref().expect("non-empty pool");
    (z.sample(rng) as usize).saturating_sub(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub ts_micros: u64,
    pub user: u32,
    pub host: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn tuple(&self, world: &World, e: &TraceEvent) -> FlowTuple {
        FlowTuple {
            src_ip: world.users[e.user as usize].ip,
            hostname: world.hostname(e.host).clone(),
            ts_micros: e.ts_micros,
        }
    }

    pub fn tuples<'a>(&'a self, world: &'a World) -> impl Iterator<Item = FlowTuple> + 'a {
        self.events.iter().map(move |e| self.tuple(world, e))
    }

    pub fn per_user_counts(&self, users: usize) -> Vec<u64> {
        let mut c = vec![0; users];
        for e in &self.events {
            c[e.user as usize] += 1;
        }
        c
    }

    pub fn write_tuple_csv<W: Write>(&self, world: &World, w: W) -> Result<W, SynthError> {
        let mut out = TupleCsvWriter::new(w)?;
        for t in self.tuples(world) {
            out.write(&t)?;
        }
        Ok(out.into_inner()?)
    }

    pub fn packets(&self, world: &World, exec: Exec) -> Vec<PacketRecord> {
        par::map_slice(exec, &self.events, |e| {
            let IpAddr::V4(src) = world.users[e.user as usize].ip else { unreachable!("synthetic users are IPv4") };
            let frame = http_get_frame(src, server_ip(e.host), ephemeral_port(e), world.hostname(e.host));
            PacketRecord::new(e.ts_micros, frame)
        })
    }

    pub fn write_pcap<W: Write>(&self, world: &World, w: W) -> Result<W, SynthError> {
        let mut out = PcapWriter::new(w, PcapHeader::new(Endianness::Little, TsResolution::Micro, 65_535))?;
        for e in &self.events {
            let IpAddr::V4(src) = world.users[e.user as usize].ip else { unreachable!("synthetic users are IPv4") };
            let frame = http_get_frame(src, server_ip(e.host), ephemeral_port(e), world.hostname(e.host));
            out.write_packet(&PacketRecord::new(e.ts_micros, frame))?;
        }
        Ok(out.into_inner()?)
    }

    pub fn save_pcap(&self, world: &World, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pcap(world, f)?.flush()?;
        Ok(())
    }

    pub fn save_tuple_csv(&self, world: &World, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_tuple_csv(world, f)?.flush()?;
        Ok(())
    }
}

fn server_ip(host: u32) -> Ipv4Addr {
    Ipv4Addr::from(u32::from(Ipv4Addr::new(198, 18, 0, 0)) + host)
}

fn ephemeral_port(e: &TraceEvent) -> u16 {
    49152 + (e.ts_micros % 16384) as u16
}

/// Internet checksum over `data`, starting from a partial sum.
fn checksum(mut sum: u32, data: &[u8]) -> u16 {
    for chunk in data.chunks(2) {
        let word = if chunk.len() == 2 { u16::from_be_bytes([chunk[0], chunk[1]]) } else { u16::from(chunk[0]) << 8 };
        sum += u32::from(word);
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Ethernet + IPv4 + TCP (PSH|ACK) frame with valid checksums.
pub fn tcp_frame(src: Ipv4Addr, dst: Ipv4Addr, src_port: u16, dst_port: u16, payload: &[u8]) -> Vec<u8> {
    let mut f = Vec::with_capacity(54 + payload.len());
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    let s = src.octets();
    f.extend_from_slice(&[0x02, 0, s[0], s[1], s[2], s[3]]);
    f.extend_from_slice(&0x0800u16.to_be_bytes());

    let total = (20 + 20 + payload.len()) as u16;
    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&total.to_be_bytes());
    ip[6] = 0x40;
    ip[8] = 64;
    ip[9] = 6;
    ip[12..16].copy_from_slice(&src.octets());
    ip[16..20].copy_from_slice(&dst.octets());
    let c = checksum(0, &ip);
    ip[10..12].copy_from_slice(&c.to_be_bytes());
    f.extend_from_slice(&ip);

    let mut tcp = [0u8; 20];
    tcp[0..2].copy_from_slice(&src_port.to_be_bytes());
    tcp[2..4].copy_from_slice(&dst_port.to_be_bytes());
    tcp[4..8].copy_from_slice(&1u32.to_be_bytes());
    tcp[8..12].copy_from_slice(&1u32.to_be_bytes());
    tcp[12] = 0x50;
    tcp[13] = 0x18;
    tcp[14..16].copy_from_slice(&0xffffu16.to_be_bytes());
    let tcp_len = (20 + payload.len()) as u32;
    let mut pseudo = 0u32;
    for w in [src.octets(), dst.octets()] {
        pseudo += u32::from(u16::from_be_bytes([w[0], w[1]])) + u32::from(u16::from_be_bytes([w[2], w[3]]));
    }
    pseudo += 6 + tcp_len;
    let mut seg = tcp.to_vec();
    seg.extend_from_slice(payload);
    let c = checksum(pseudo, &seg);
    seg[16..18].copy_from_slice(&c.to_be_bytes());
    f.extend_from_slice(&seg);
    f
}

pub fn http_get(host: &str) -> Vec<u8> {
    format!("GET / HTTP/1.1\r\nHost: {host}\r\nUser-Agent: netvec-synth/1\r\nAccept: */*\r\n\r\n").into_bytes()
}

pub fn http_get_frame(src: Ipv4Addr, dst: Ipv4Addr, src_port: u16, host: &str) -> Vec<u8> {
    tcp_frame(src, dst, src_port, 80, &http_get(host))
}

/// A port-80 frame of exactly `len` bytes (at least 54). The request is
/// padded with an `X-Pad` header, or cut short when the frame is too small
/// to hold it.
pub fn sized_http_frame(len: usize, src: Ipv4Addr, host: &str) -> Vec<u8> {
    assert!(len >= 54, "frame must hold Ethernet, IPv4 and TCP headers");
    let room = len - 54;
    let base = http_get(host);
    let payload = if room <= base.len() {
        base[..room].to_vec()
    } else {
        let head = format!("GET / HTTP/1.1\r\nHost: {host}\r\nX-Pad: ");
        let tail = "\r\n\r\n";
        let pad = room.saturating_sub(head.len() + tail.len());
        let mut p = head.into_bytes();
        p.extend(std::iter::repeat_n(b'a', pad));
        p.extend_from_slice(tail.as_bytes());
        p.truncate(room);
        p
    };
    tcp_frame(src, Ipv4Addr::new(198, 18, 0, 1), 50000, 80, &payload)
}

/// Minimal TLS 1.2-framed ClientHello carrying one SNI host_name: fixed
/// random `00..1f`, empty session id, one cipher suite (0x1301), null
/// compression, and only the server_name extension.
pub fn client_hello(host: &str) -> Vec<u8> {
    let name = host.as_bytes();
    let mut sni = Vec::new();
    sni.extend_from_slice(&((name.len() + 3) as u16).to_be_bytes());
    sni.push(0);
    sni.extend_from_slice(&(name.len() as u16).to_be_bytes());
    sni.extend_from_slice(name);
    let mut exts = Vec::new();
    exts.extend_from_slice(&0u16.to_be_bytes());
    exts.extend_from_slice(&(sni.len() as u16).to_be_bytes());
    exts.extend_from_slice(&sni);

    let mut body = vec![0x03, 0x03];
    body.extend(0u8..32);
    body.push(0);
    body.extend_from_slice(&[0x00, 0x02, 0x13, 0x01]);
    body.extend_from_slice(&[0x01, 0x00]);
    body.extend_from_slice(&(exts.len() as u16).to_be_bytes());
    body.extend_from_slice(&exts);

    let mut hs = vec![0x01];
    hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend_from_slice(&body);
    let mut rec = vec![0x16, 0x03, 0x01];
    rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
    rec.extend_from_slice(&hs);
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::FilterSpec;
    use crate::tuple_gen::{extract_tls_sni, process_frame, FrameOutcome, TupleCsvReader};

    fn small_spec() -> WorldSpec {
        let mut s = WorldSpec::desk();
        s.total_hostnames = 1000;
        s.background_hostnames = 100;
        s.duration_hours = 2.0;
        for p in &mut s.personas {
            p.num_hostnames_per_category = 50;
            p.users = Some(5);
        }
        s
    }

    #[test]
    fn labeled_count_is_floor() {
        let w = World::generate(&small_spec()).unwrap();
        assert_eq!(w.labeled_count(), 250);
        let w = w.relabeled(0.0037).unwrap();
        assert_eq!(w.labeled_count(), 3);
        assert!(w.store.hostnames().iter().all(|h| w.role_of(h) != Some(HostRole::Background)));
    }

    #[test]
    fn infeasible_pools() {
        let mut s = small_spec();
        s.personas.truncate(2);
        for p in &mut s.personas {
            p.interest_categories.truncate(1);
            p.num_hostnames_per_category = 600;
        }
        s.background_hostnames = 0;
        for p in &mut s.personas {
            p.background_ratio = 0.0;
        }
        assert!(matches!(World::generate(&s), Err(SynthError::InfeasibleSpec(_))));
    }

    #[test]
    fn labels_nest_across_fractions() {
        let mut spec = small_spec();
        spec.personas[0].rate_sigma = 1.0;
        let w = World::generate(&spec).unwrap();
        let lo = w.relabeled(0.05).unwrap();
        assert!(lo.store.hostnames().iter().all(|h| w.store.contains(h) && w.store.get(h) == lo.store.get(h)));
        assert_eq!(lo.users, w.users);
    }

    #[test]
    fn deterministic() {
        let a = World::generate(&small_spec()).unwrap();
        let b = World::generate(&small_spec()).unwrap();
        assert_eq!(a.store, b.store);
        assert_eq!(a.roles, b.roles);
        assert_eq!(a.generate_trace(Exec::Parallel), b.generate_trace(Exec::Sequential));
    }

    #[test]
    fn zero_rate_is_empty() {
        let mut s = small_spec();
        for p in &mut s.personas {
            p.request_rate = 0.0;
        }
        assert!(World::generate(&s).unwrap().generate_trace(Exec::Sequential).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let w = World::generate(&small_spec()).unwrap();
        let trace = w.generate_trace(Exec::Sequential);
        assert!(trace.len() > 100);
        let bytes = trace.write_tuple_csv(&w, Vec::new()).unwrap();
        let back: Vec<FlowTuple> = TupleCsvReader::new(&bytes[..]).unwrap().map(Result::unwrap).collect();
        assert_eq!(back, trace.tuples(&w).collect::<Vec<_>>());
    }

    #[test]
    fn frames_parse_back() {
        let w = World::generate(&small_spec()).unwrap();
        let trace = w.generate_trace(Exec::Sequential);
        let spec = FilterSpec::tcp_ports(&[80]);
        for (pkt, t) in trace.packets(&w, Exec::Parallel).iter().zip(trace.tuples(&w)).take(500) {
            assert_eq!(process_frame(&spec, pkt.ts_micros, &pkt.data), FrameOutcome::Tuple(t));
        }
    }

    #[test]
    fn checksums_verify() {
        let f = http_get_frame(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(198, 18, 0, 9), 50000, "odd.example");
        assert_eq!(checksum(0, &f[14..34]), 0);
        let seg = &f[34..];
        let mut pseudo = 0u32;
        for w in [[10u8, 0, 0, 1], [198, 18, 0, 9]] {
            pseudo += u32::from(u16::from_be_bytes([w[0], w[1]])) + u32::from(u16::from_be_bytes([w[2], w[3]]));
        }
        pseudo += 6 + seg.len() as u32;
        assert_eq!(checksum(pseudo, seg), 0);
    }

    #[test]
    fn sized_frames() {
        for len in [64, 256, 512, 1024, 1500] {
            assert_eq!(sized_http_frame(len, Ipv4Addr::new(10, 0, 0, 1), "a.example").len(), len);
        }
        let f = sized_http_frame(256, Ipv4Addr::new(10, 0, 0, 1), "a.example");
        let spec = FilterSpec::tcp_ports(&[80]);
        assert!(matches!(process_frame(&spec, 0, &f), FrameOutcome::Tuple(_)));
    }

    #[test]
    fn client_hello_parses() {
        let hello = client_hello("video.example.org");
        assert_eq!(hello.len(), 78);
        assert_eq!(extract_tls_sni(&hello).unwrap(), "video.example.org");
    }

    #[test]
    fn background_share_matches_ratio() {
        let w = World::generate(&small_spec()).unwrap();
        let trace = w.generate_trace(Exec::Sequential);
        let n = trace.len() as f64;
        let bg = trace.events.iter().filter(|e| w.roles[e.host as usize] == HostRole::Background).count() as f64;
        let p = 0.3;
        let chi2 = (bg - n * p).powi(2) / (n * p) + ((n - bg) - n * (1.0 - p)).powi(2) / (n * (1.0 - p));
        assert!(chi2 < 10.83, "chi2 {chi2}");
    }
}
