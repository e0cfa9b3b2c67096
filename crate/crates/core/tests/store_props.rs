use discedge_core::codec::LENGTH_PREFIX;
use discedge_core::context::{deserialize_context, serialize_context, ContextKey, Payload, SessionContext, StorageMode};
use discedge_core::store::{Outbound, ReplicatedStore, VersionedValue};
use discedge_core::transport::{FrameTransport, SimNetwork, NANOS_PER_MS};
use discedge_core::TokenSequence;
use proptest::prelude::*;

const NODES: [&str; 3] = ["A", "B", "C"];
const NOW: u64 = 1_000_000;
const TTL: u64 = 3_600_000;

#[derive(Debug, Clone)]
enum Op {
    Put { node: usize, key: usize, version: u64, tag: u8 },
    Delete { node: usize, key: usize },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..3usize, 0..2usize, 1..5u64, any::<u8>())
            .prop_map(|(node, key, version, tag)| Op::Put { node, key, version, tag }),
        1 => (0..3usize, 0..2usize).prop_map(|(node, key)| Op::Delete { node, key }),
    ]
}

fn stores() -> Vec<ReplicatedStore> {
    NODES
        .iter()
        .map(|n| {
            let mut s = ReplicatedStore::new(*n, TTL);
            s.create_keygroup("m", NODES).unwrap();
            s
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    /// Every replica applies every frame, in whatever order; all replicas
    /// end in the same state.
    #[test]
    fn replicas_converge(ops in prop::collection::vec(op(), 1..20), order in any::<prop::sample::Index>(), interleave in prop::collection::vec(any::<prop::sample::Index>(), 0..200)) {
        let mut stores = stores();
        let mut in_flight: Vec<(usize, Outbound)> = vec![];
        let mut picks = interleave.into_iter();
        let deliver = |stores: &mut Vec<ReplicatedStore>, (from, o): (usize, Outbound)| {
            let to = NODES.iter().position(|n| *n == o.peer).unwrap();
            stores[to].apply_remote(NODES[from], &o.body, o.body.len() + LENGTH_PREFIX, NOW).unwrap();
        };
        for op in ops {
            // randomly deliver some pending frames before the next op
            if let Some(ix) = picks.next() {
                if !in_flight.is_empty() {
                    let f = in_flight.remove(ix.index(in_flight.len()));
                    deliver(&mut stores, f);
                }
            }
            let (node, outcome) = match op {
                Op::Put { node, key, version, tag } => {
                    let v = VersionedValue::new(vec![tag], version, NODES[node], NOW + TTL);
                    (node, stores[node].put("m", &format!("k{key}"), v, NOW).unwrap())
                }
                Op::Delete { node, key } => (node, stores[node].delete("m", &format!("k{key}"), NOW).unwrap()),
            };
            in_flight.extend(outcome.outbound.into_iter().map(|o| (node, o)));
        }
        let mut rot = order.index(in_flight.len().max(1));
        while !in_flight.is_empty() {
            rot %= in_flight.len();
            let f = in_flight.remove(rot);
            deliver(&mut stores, f);
            rot += 7;
        }
        let first = stores[0].snapshot(NOW);
        for s in &stores[1..] {
            prop_assert_eq!(&s.snapshot(NOW), &first);
        }
    }

    #[test]
    fn context_frames_round_trip(
        tokenized in any::<bool>(),
        system in prop::option::of("\\PC{0,20}"),
        pairs in prop::collection::vec(("\\PC{0,30}", prop::collection::vec(0u32..70_000, 0..30)), 0..6),
        expires in any::<u64>(),
    ) {
        let key = ContextKey::new("qwen", "user", "sess").unwrap();
        let (mode, wrap): (StorageMode, fn(&str, &[u32]) -> Payload) = if tokenized {
            (StorageMode::Tokenized, |_, ids| Payload::Tokens(TokenSequence::from(ids.to_vec())))
        } else {
            (StorageMode::Raw, |s, _| Payload::Text(s.to_string()))
        };
        let sys = system.as_deref().map(|s| wrap(s, &[1, 2, 3]));
        let mut ctx = SessionContext::new(key, mode, sys, expires, "edge-1").unwrap();
        for (text, ids) in &pairs {
            ctx = ctx.append_turn(wrap(text, ids), wrap(text, ids)).unwrap();
        }
        let bytes = serialize_context(&ctx).unwrap();
        prop_assert_eq!(deserialize_context(&bytes).unwrap(), ctx);
    }

    /// Frames on one link arrive in send order even with jitter.
    #[test]
    fn links_are_fifo(seed in any::<u64>(), jitter in 0.0f64..40.0, gaps in prop::collection::vec(0u64..5, 1..40)) {
        let mut net = SimNetwork::new(seed);
        net.add_duplex("a", "b", 10.0, jitter).unwrap();
        for (i, gap) in gaps.iter().enumerate() {
            let t = net.now() + gap * NANOS_PER_MS;
            net.advance_to(t);
            net.send("a", "b", vec![i as u8]).unwrap();
        }
        net.advance_to(u64::MAX / 2);
        let got: Vec<u8> = net.take_inbox("b").into_iter().map(|d| d.payload[0]).collect();
        let want: Vec<u8> = (0..gaps.len() as u8).collect();
        prop_assert_eq!(got, want);
    }
}
