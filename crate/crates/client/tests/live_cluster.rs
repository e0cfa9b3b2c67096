use std::collections::BTreeMap;

use discedge_client::TcpNodeLink;
use discedge_core::client::{ask, ClientSession, Schedule};
use discedge_core::manager::NodeConfig;
use discedge_core::protocol::{Consistency, ContextMode, ErrorCode, Response, SessionRef};
use discedge_core::SimCluster;
use discedge_server::RunningNode;

const MODEL: &str = "qwen";
const PROMPTS: [&str; 5] = ["What is a robot?", "And sensors?", "Explain PID.", "Show code.", "What is kp?"];

fn config(id: &str) -> NodeConfig {
    let mut c = NodeConfig::new(id, &[MODEL]);
    c.keygroups.insert(MODEL.into(), vec!["A".into(), "B".into()]);
    c.listen = Some("127.0.0.1:0".into());
    c.sync_listen = Some("127.0.0.1:0".into());
    c.time_scale = 0.01;
    c
}

async fn start_pair() -> (RunningNode, RunningNode, TcpNodeLink) {
    let a = RunningNode::start(config("A")).await.unwrap();
    let b = RunningNode::start(config("B")).await.unwrap();
    let sync: BTreeMap<String, String> = [("A", &a), ("B", &b)]
        .iter()
        .map(|(id, n)| (id.to_string(), n.sync_addr.unwrap().to_string()))
        .collect();
    a.set_peers(sync.clone());
    b.set_peers(sync);
    let api = [("A", &a), ("B", &b)]
        .iter()
        .map(|(id, n)| (id.to_string(), n.api_addr.unwrap().to_string()))
        .collect();
    (a, b, TcpNodeLink::new(api))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn roaming_session_over_sockets_matches_simulation() {
    let (_a, _b, link) = start_pair().await;
    for n in ["A", "B"] {
        assert!(matches!(link.health(n).await.unwrap(), Response::HealthOk { .. }));
    }

    let schedule = Schedule::mobility("A", "B");
    let mut live = ClientSession::new(MODEL, ContextMode::Tokenized).with_ids("u", "s");
    let mut live_tokens = vec![];
    for p in PROMPTS {
        let node = schedule.roam(live.turn).unwrap().to_string();
        let (resp, metrics) = ask(&mut live, &link, &node, p).await;
        let resp = resp.unwrap();
        assert!(metrics.request_bytes > 4);
        assert_ne!(resp.consistency, Consistency::StaleServed);
        live_tokens.push(resp.tokens);
    }

    let mut sim = SimCluster::new(7);
    for id in ["A", "B"] {
        let mut c = config(id);
        c.listen = None;
        c.sync_listen = None;
        sim.add_node(c).unwrap();
        sim.add_duplex("c", id, 5.0, 0.0).unwrap();
    }
    sim.add_duplex("A", "B", 5.0, 0.0).unwrap();
    let client = sim.client("c");
    let mut s = ClientSession::new(MODEL, ContextMode::Tokenized).with_ids("u", "s");
    for (p, expected) in PROMPTS.iter().zip(&live_tokens) {
        let node = schedule.roam(s.turn).unwrap().to_string();
        let resp = ask(&mut s, &client, &node, p).await.0.unwrap();
        assert_eq!(&resp.tokens, expected);
    }

    let Response::StatsOk { sync_sent, .. } = link.stats("A").await.unwrap() else { panic!() };
    assert!(sync_sent["B"] > 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stopped_peer_surfaces_as_staleness() {
    let (mut a, _b, link) = start_pair().await;
    let mut s = ClientSession::new(MODEL, ContextMode::Raw).with_ids("u", "s");
    ask(&mut s, &link, "A", "hello").await.0.unwrap();
    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    a.shutdown();

    // A's turn-1 write reached B; turn 2 continues on B
    ask(&mut s, &link, "B", "moved").await.0.unwrap();
    let err = ask(&mut s, &link, "A", "back").await.0.unwrap_err();
    assert_eq!(err.code(), ErrorCode::Transport);
    assert_eq!(s.turn, 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn delete_propagates_over_sockets() {
    let (_a, _b, link) = start_pair().await;
    let mut s = ClientSession::new(MODEL, ContextMode::Tokenized).with_ids("u", "s");
    ask(&mut s, &link, "A", "hello").await.0.unwrap();
    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    let r = SessionRef { model_id: MODEL.into(), user_id: "u".into(), session_id: "s".into() };
    link.delete_session("A", r).await.unwrap();
    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    let mut again = ClientSession::new(MODEL, ContextMode::Tokenized).with_ids("u", "s");
    let resp = ask(&mut again, &link, "B", "hello").await.0.unwrap();
    assert_eq!(resp.consistency, Consistency::Created);
}
