use mlbm::graph::MultiplexBipartiteGraph;
use mlbm::ingest::{AuthRecord, AuthRules, InternalHosts, NetflowRecord, NetflowRules, PortWhitelist, RecordOutcome};
use proptest::prelude::*;

fn host() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u8..3, 0u8..4).prop_map(|(a, b)| format!("172.{}.0.{b}", 10 * (a + 1))),
        (0u8..3, 0u8..4).prop_map(|(a, b)| format!("10.{a}.0.{b}")),
    ]
}

fn flow() -> impl Strategy<Value = NetflowRecord> {
    (
        host(),
        host(),
        prop::sample::select(vec!["TCP", "UDP", "ICMP", "tcp"]),
        prop::option::of(prop::sample::select(vec![20u16, 22, 53, 80, 443, 587, 8080, 65535, 0])),
    )
        .prop_map(|(src_host, dst_host, protocol, dst_port)| NetflowRecord {
            src_host,
            dst_host,
            protocol: protocol.into(),
            dst_port,
        })
}

fn logon() -> impl Strategy<Value = AuthRecord> {
    let id = |p: &'static str| (0u8..3).prop_map(move |i| format!("{p}{i}"));
    (
        id("U"),
        id("U"),
        id("C"),
        id("C"),
        prop::sample::select(vec!["Network", "Service"]),
        prop::sample::select(vec!["Kerberos", "NTLM"]),
        prop::sample::select(vec!["LogOn", "LogOff"]),
        prop::sample::select(vec!["Success", "Fail"]),
    )
        .prop_map(|(su, du, sh, dh, lt, ap, kind, outcome)| AuthRecord {
            src_user: su,
            dst_user: du,
            src_host: sh,
            dst_host: dh,
            logon_type: lt.into(),
            auth_package: ap.into(),
            event_kind: kind.into(),
            outcome: outcome.into(),
        })
}

fn rules() -> NetflowRules {
    NetflowRules {
        internal: InternalHosts::new(&["172.0.0.0/8".into()], &[]).unwrap(),
        whitelist: PortWhitelist::default(),
    }
}

proptest! {
    #[test]
    fn netflow_layers_stay_in_domain(flows in prop::collection::vec(flow(), 0..60)) {
        let rules = rules();
        let mut g = MultiplexBipartiteGraph::new();
        for f in &flows {
            rules.apply(&mut g, f).unwrap();
        }
        let ports = ["20", "21", "22", "23", "25", "53", "80", "443", "465", "587", "Other"];
        for label in g.layers().labels() {
            let parts: Vec<&str> = label.split('/').collect();
            prop_assert_eq!(parts.len(), 3);
            prop_assert!(["TCP", "UDP", "ICMP"].contains(&parts[0]));
            prop_assert!(ports.contains(&parts[1]));
            prop_assert!(parts[0] == "TCP" || parts[1] == "Other");
            prop_assert!(["inbound", "outbound"].contains(&parts[2]));
        }
        for name in g.top().names() {
            prop_assert!(name.starts_with("172."));
        }
        for name in g.bottom().names() {
            prop_assert!(!name.starts_with("172."));
        }
    }

    #[test]
    fn auth_arity_and_event_total(records in prop::collection::vec(logon(), 0..60)) {
        let rules = AuthRules::default();
        let mut g = MultiplexBipartiteGraph::new();
        let mut expected = 0;
        for r in &records {
            let outcome = rules.apply(&mut g, r).unwrap();
            let accepted = r.event_kind == "LogOn" && r.outcome == "Success";
            let arity = if r.src_host == r.dst_host { 1 } else { 2 };
            if accepted {
                prop_assert_eq!(outcome, RecordOutcome::Added(arity));
                expected += arity;
            } else {
                prop_assert_eq!(outcome, RecordOutcome::Filtered);
            }
        }
        prop_assert_eq!(g.stats().events, expected);
    }

    #[test]
    fn ingesting_twice_doubles_events_only(flows in prop::collection::vec(flow(), 1..60)) {
        let rules = rules();
        let mut once = MultiplexBipartiteGraph::new();
        let mut twice = MultiplexBipartiteGraph::new();
        for f in &flows {
            rules.apply(&mut once, f).unwrap();
            rules.apply(&mut twice, f).unwrap();
        }
        for f in &flows {
            rules.apply(&mut twice, f).unwrap();
        }
        let (a, b) = (once.stats(), twice.stats());
        prop_assert_eq!(b.events, 2 * a.events);
        prop_assert_eq!(
            (a.top_nodes, a.bottom_nodes, a.layers, a.distinct_edges),
            (b.top_nodes, b.bottom_nodes, b.layers, b.distinct_edges)
        );
        prop_assert_eq!(once.binary_view().nonzeros().collect::<Vec<_>>(), twice.binary_view().nonzeros().collect::<Vec<_>>());
    }
}
