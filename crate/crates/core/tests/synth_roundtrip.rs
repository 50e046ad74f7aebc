use std::collections::HashMap;
use std::net::IpAddr;

use netvec::capture::{PacketSource, PcapReader};
use netvec::filter::FilterSpec;
use netvec::par::Exec;
use netvec::synth::{World, WorldSpec};
use netvec::tuple_gen::{process_batch, FlowTuple, FrameOutcome, TupleCsvReader};

fn small() -> WorldSpec {
    let mut w = WorldSpec::desk();
    w.duration_hours = 3.0;
    w
}

fn per_user(tuples: &[FlowTuple]) -> HashMap<IpAddr, Vec<(String, u64)>> {
    let mut m: HashMap<IpAddr, Vec<(String, u64)>> = HashMap::new();
    for t in tuples {
        m.entry(t.src_ip).or_default().push((t.hostname.to_string(), t.ts_micros));
    }
    m
}

#[test]
fn pcap_output_parses_back_to_the_tuple_log() {
    let world = World::generate(&small()).unwrap();
    let trace = world.generate_trace(Exec::Parallel);
    let expected: Vec<FlowTuple> = trace.tuples(&world).collect();

    let pcap = trace.write_pcap(&world, Vec::new()).unwrap();
    let mut reader = PcapReader::new(&pcap[..]).unwrap();
    let mut packets = Vec::new();
    while let Some(p) = reader.next_packet().unwrap() {
        packets.push(p);
    }
    let parsed: Vec<FlowTuple> = process_batch(Exec::Parallel, &FilterSpec::tcp_ports(&[80]), &packets)
        .into_iter()
        .map(|o| match o {
            FrameOutcome::Tuple(t) => t,
            other => panic!("generated frame did not parse: {other:?}"),
        })
        .collect();
    assert_eq!(parsed, expected);
    assert_eq!(per_user(&parsed), per_user(&expected));

    let csv = trace.write_tuple_csv(&world, Vec::new()).unwrap();
    let from_log: Vec<FlowTuple> = TupleCsvReader::new(&csv[..]).unwrap().map(Result::unwrap).collect();
    assert_eq!(from_log, expected);
}

#[test]
fn sequential_and_parallel_generation_agree() {
    let world = World::generate(&small()).unwrap();
    let a = world.generate_trace(Exec::Sequential);
    let b = world.generate_trace(Exec::Parallel);
    assert_eq!(a.events, b.events);
    assert_eq!(a.packets(&world, Exec::Sequential), b.packets(&world, Exec::Parallel));
}

#[test]
fn pools_are_disjoint_and_labels_nest() {
    let world = World::generate(&WorldSpec::desk()).unwrap();
    let mut owner = HashMap::new();
    for (pi, p) in world.personas.iter().enumerate() {
        for pool in &p.pools {
            for &h in &pool.hosts {
                assert!(owner.insert(h, pi).is_none(), "hostname {h} in two pools");
            }
        }
    }
    let small = world.relabeled(0.05).unwrap();
    let large = world.relabeled(0.5).unwrap();
    assert_eq!(small.labeled_count(), 100);
    assert_eq!(large.labeled_count(), 1000);
    for h in small.store.hostnames() {
        assert_eq!(small.store.get(h), large.store.get(h));
    }
    for h in &world.background {
        assert!(!large.store.contains(world.hostname(*h)));
    }
}
