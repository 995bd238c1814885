//! Whole-system properties over randomly drawn configurations.

use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use tdp_core::nf::{DropTally, Gate, Instance, NfChain, NfContext, OpKind, Scenario};
use tdp_core::pkt::{FrameBuffer, Mbuf};
use tdp_core::tee::{measure, BufferMode, EnclaveConfig, Platform};
use tdp_core::topo::{self, Mode, RunLimit, TopoConfig, TopologyKind};
use tdp_core::traffic::{self, FrameSource, Layer, TrafficSpec};

fn multiset(frames: &[Vec<u8>]) -> HashMap<&[u8], usize> {
    let mut m = HashMap::new();
    for f in frames {
        *m.entry(f.as_slice()).or_insert(0) += 1;
    }
    m
}

fn config(scenario: Scenario, kind: TopologyKind, mode: Mode, seed: u64) -> TopoConfig {
    let mut c = TopoConfig::new(scenario, kind, mode, 64);
    c.seed = seed;
    c.cardinality = 2_000;
    c.capture = true;
    c.oversubscribe = true;
    c
}

fn forwarding() -> impl Strategy<Value = (Scenario, TopologyKind)> {
    let scenario = prop_oneof![
        Just(Scenario::L2Fwd),
        Just(Scenario::L3Fwd),
        Just(Scenario::L2FwdEnc),
        Just(Scenario::L3FwdEnc),
    ];
    let kind = prop_oneof![
        Just(TopologyKind::Baseline),
        (1usize..=3).prop_map(|enclaves| TopologyKind::Parallel { enclaves }),
        (1usize..=3).prop_map(|stages| TopologyKind::Pipeline { stages }),
    ];
    (scenario, kind)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn output_multiset_is_deterministic((scenario, kind) in forwarding(), seed in 1u64..1000, trusted in any::<bool>()) {
        let mode = if trusted { Mode::Trusted } else { Mode::Vanilla };
        let c = config(scenario, kind, mode, seed);
        let a = topo::build(&c).unwrap().run(RunLimit::Frames(3_000));
        let b = topo::build(&c).unwrap().run(RunLimit::Frames(3_000));
        let (fa, fb) = (a.capture.clone().unwrap(), b.capture.clone().unwrap());
        prop_assert_eq!(multiset(&fa), multiset(&fb));
        prop_assert!(a.conserved() && b.conserved());
        prop_assert_eq!(a.drops, b.drops);
    }

    #[test]
    fn conservation_under_small_rings_and_batches(
        (scenario, kind) in forwarding(),
        ring_log in 3u32..8,
        batch in 1usize..=8,
        frames in 1u64..4_000,
    ) {
        let mut c = config(scenario, kind, Mode::Trusted, 7);
        c.ring_capacity = 1 << ring_log;
        c.burst = batch;
        c.capture = false;
        let r = topo::build(&c).unwrap().run(RunLimit::Frames(frames));
        prop_assert_eq!(r.rx_frames, frames);
        prop_assert_eq!(r.rx_frames, r.tx_frames + r.drops_total);
    }

    #[test]
    fn lb_trusted_and_vanilla_forward_the_same_frames(
        servers in 0usize..=4,
        two in any::<bool>(),
        copy in any::<bool>(),
        seed in 1u64..1000,
    ) {
        let kind = TopologyKind::LoadBalancer { servers, two_per_server: two && servers > 0 };
        let vanilla = topo::build(&config(Scenario::LbServer, kind, Mode::Vanilla, seed))
            .unwrap()
            .run(RunLimit::Frames(3_000));
        let mut t = config(Scenario::LbServer, kind, Mode::Trusted, seed);
        t.buffer_mode = if copy { BufferMode::TrustedCopy } else { BufferMode::Untrusted };
        let trusted = topo::build(&t).unwrap().run(RunLimit::Frames(3_000));
        let (fv, ft) = (vanilla.capture.clone().unwrap(), trusted.capture.clone().unwrap());
        prop_assert_eq!(multiset(&fv), multiset(&ft));
        prop_assert_eq!(vanilla.drops, trusted.drops);
        prop_assert_eq!(vanilla.per_backend, trusted.per_backend);
    }

    #[test]
    fn lb_ocall_arithmetic(sizes in proptest::collection::vec(0usize..=32, 1..40), copy in any::<bool>()) {
        let spec = TrafficSpec { cardinality: 512, ..TrafficSpec::new(Layer::L3, 64, 3) };
        let source = FrameSource::new(spec.clone(), None).unwrap();
        let ctx = NfContext {
            ports: Arc::new(traffic::port_macs()),
            mac_table: None,
            lpm: None,
            flow_table: Some(Arc::new(traffic::flow_table_for(&spec, 4))),
            server_tables: Vec::new(),
            icv: true,
            burst: 32,
        };
        let mut ecfg = EnclaveConfig::new("lb-server", "properties");
        ecfg.buffer_mode = if copy { BufferMode::TrustedCopy } else { BufferMode::Untrusted };
        let mut gate = Gate::Enclave(
            Platform::new(topo::traffic_keys(3)).launch(&ecfg, &measure(&ecfg)).unwrap(),
        );
        let mut chain = NfChain::build(&[OpKind::LbClassify], &mut gate, &ctx, Instance { index: 0, backend: 0 });
        let before = gate.enclave().unwrap().stats().snapshot();
        let (mut k, mut dropped, mut tally) = (0u64, Vec::new(), DropTally::default());
        for &n in &sizes {
            let mut burst: Vec<Mbuf> = (0..n)
                .map(|_| {
                    k += 1;
                    FrameBuffer::from_bytes(0, &source.frame(k)).unwrap()
                })
                .collect();
            chain.run(&gate, &mut burst, &mut dropped, &mut tally).unwrap();
            prop_assert_eq!(burst.len(), n);
        }
        let after = gate.enclave().unwrap().stats().snapshot();
        let packets: u64 = sizes.iter().sum::<usize>() as u64;
        let batches = sizes.iter().filter(|&&n| n > 0).count() as u64;
        prop_assert_eq!(after.ocalls - before.ocalls, batches);
        let (out, inn) = if copy { (4 * packets, packets) } else { (0, 0) };
        prop_assert_eq!(after.bytes_copied_out - before.bytes_copied_out, out);
        prop_assert_eq!(after.bytes_copied_in - before.bytes_copied_in, inn);
    }
}
