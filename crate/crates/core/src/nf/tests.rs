use super::*;
use crate::crypto::Key128;
use crate::pkt::secure::{open_l2, open_l3, seal_l2, seal_l3, ICV_LEN};
use crate::pkt::test_frames::ipv4_frame;
use crate::pkt::{ipv4_checksum_valid, FrameBuffer};
use crate::tee::{measure, EnclaveConfig, Platform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn keys() -> KeyPair {
    KeyPair {
        encryption: Key128::new([0x11; 16]),
        integrity: Key128::new([0x22; 16]),
    }
}

fn vanilla() -> Gate {
    Gate::Vanilla(keys())
}

fn enclave(mode: BufferMode) -> Gate {
    let mut cfg = EnclaveConfig::new("test", "nf-tests");
    cfg.buffer_mode = mode;
    let mut p = Platform::new(keys());
    Gate::Enclave(p.launch(&cfg, &measure(&cfg)).unwrap())
}

const PORT0: MacAddr = MacAddr([0x0a, 0, 0, 0, 0, 0]);
const PORT1: MacAddr = MacAddr([0x0a, 0, 0, 0, 0, 1]);
const DST: MacAddr = MacAddr([0x02, 0, 0, 0, 0, 1]);

fn context() -> NfContext {
    let mut mac = MacTable::new();
    mac.insert(DST, 1).unwrap();
    let mut lpm = LpmTable::new();
    let hop = |port, last| NextHop {
        port,
        mac: MacAddr([0x0e, 0, 0, 0, 0, last]),
    };
    lpm.insert(u32::from_be_bytes([10, 0, 0, 0]), 8, hop(1, 1)).unwrap();
    lpm.insert(u32::from_be_bytes([10, 1, 0, 0]), 16, hop(0, 2)).unwrap();
    let mut flows = FlowTable::new(4, 16);
    for i in 0..16u32 {
        flows.insert(u32::from_be_bytes([10, 0, 0, i as u8]), (i % 4) as u8).unwrap();
    }
    let servers = server_tables_from(&flows).into_iter().map(Arc::new).collect();
    NfContext {
        ports: Arc::new(PortMacs::new(vec![PORT0, PORT1])),
        mac_table: Some(Arc::new(mac)),
        lpm: Some(Arc::new(lpm)),
        flow_table: Some(Arc::new(flows)),
        server_tables: servers,
        icv: true,
        burst: 32,
    }
}

fn mbuf(bytes: &[u8]) -> Mbuf {
    FrameBuffer::from_bytes(0, bytes).unwrap()
}

struct Outcome {
    out: Vec<Vec<u8>>,
    dropped: usize,
    tally: DropTally,
}

fn run(chain: &mut NfChain, gate: &Gate, frames: &[Vec<u8>]) -> Outcome {
    let mut out = Vec::new();
    let mut dropped = Vec::new();
    let mut tally = DropTally::default();
    for chunk in frames.chunks(32) {
        let mut burst: Vec<Mbuf> = chunk.iter().map(|f| mbuf(f)).collect();
        chain.run(gate, &mut burst, &mut dropped, &mut tally).unwrap();
        out.extend(burst.iter().map(|m| m.as_slice().to_vec()));
    }
    Outcome {
        out,
        dropped: dropped.len(),
        tally,
    }
}

fn chain(kinds: &[OpKind], gate: &mut Gate, ctx: &NfContext) -> NfChain {
    NfChain::build(kinds, gate, ctx, Instance::default())
}

#[test]
fn l2_forwards_known_dst_and_rewrites_src() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(Scenario::L2Fwd.ops(), &mut g, &ctx);
    let f = ipv4_frame(64, [10, 0, 0, 1], 64);
    let r = run(&mut c, &g, std::slice::from_ref(&f));
    assert_eq!(r.out.len(), 1);
    assert_eq!(&r.out[0][6..12], &PORT1.0);
    assert_eq!(&r.out[0][..6], &f[..6]);
    assert_eq!(&r.out[0][12..], &f[12..]);
}

#[test]
fn l2_drops_unknown_dst_as_miss() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(Scenario::L2Fwd.ops(), &mut g, &ctx);
    let mut f = ipv4_frame(64, [10, 0, 0, 1], 64);
    f[5] = 0x77;
    let r = run(&mut c, &g, &[f]);
    assert!(r.out.is_empty());
    assert_eq!(r.tally.get(DropReason::MacMiss), 1);
    assert_eq!(r.dropped, 1);
}

/// Straight-line reference for L2 forwarding over raw bytes.
fn l2_scalar(frame: &[u8], table: &std::collections::HashMap<[u8; 6], u16>, ports: &[MacAddr]) -> Option<Vec<u8>> {
    if frame.len() < 64 || frame.len() > 1518 {
        return None;
    }
    let dst: [u8; 6] = frame[..6].try_into().unwrap();
    let port = *table.get(&dst)?;
    let mut out = frame.to_vec();
    out[6..12].copy_from_slice(&ports[port as usize].0);
    Some(out)
}

#[test]
fn l2_matches_scalar_reference_on_mixed_workload() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ports = vec![PORT0, PORT1, MacAddr([0x0a, 0, 0, 0, 0, 2])];
    let mut table = MacTable::new();
    let mut reference = std::collections::HashMap::new();
    for i in 0..500u64 {
        let m = MacAddr::from_u64(0x0200_0000_0000 + i);
        let p = rng.gen_range(0..3u16);
        table.insert(m, p).unwrap();
        reference.insert(m.0, p);
    }
    let mut ctx = context();
    ctx.mac_table = Some(Arc::new(table));
    ctx.ports = Arc::new(PortMacs::new(ports.clone()));
    let frames: Vec<Vec<u8>> = (0..100_000)
        .map(|_| {
            let len = match rng.gen_range(0..20) {
                0 => rng.gen_range(20..64),
                1 => rng.gen_range(1519..1600),
                _ => rng.gen_range(64..=1518),
            };
            let mut f = vec![0u8; len];
            rng.fill(&mut f[..]);
            // Mostly known destinations, some misses.
            let d = MacAddr::from_u64(0x0200_0000_0000 + rng.gen_range(0..600));
            f[..6].copy_from_slice(&d.0);
            f
        })
        .collect();
    let mut g = vanilla();
    let mut c = chain(Scenario::L2Fwd.ops(), &mut g, &ctx);
    let r = run(&mut c, &g, &frames);
    let expected: Vec<Vec<u8>> = frames.iter().filter_map(|f| l2_scalar(f, &reference, &ports)).collect();
    assert_eq!(r.out, expected);
    assert_eq!(r.out.len() + r.dropped, frames.len());
    assert_eq!(r.tally.total() as usize, r.dropped);
}

#[test]
fn l3_longest_prefix_wins_and_header_is_updated() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(Scenario::L3Fwd.ops(), &mut g, &ctx);
    let a = ipv4_frame(128, [10, 1, 2, 3], 64);
    let b = ipv4_frame(128, [10, 2, 2, 3], 64);
    let r = run(&mut c, &g, &[a.clone(), b]);
    assert_eq!(r.out.len(), 2);
    // 10.1/16 → port 0 via next hop ..:02
    assert_eq!(&r.out[0][..6], &[0x0e, 0, 0, 0, 0, 2]);
    assert_eq!(&r.out[0][6..12], &PORT0.0);
    assert_eq!(&r.out[1][..6], &[0x0e, 0, 0, 0, 0, 1]);
    assert_eq!(&r.out[1][6..12], &PORT1.0);
    let ip = &r.out[0][ETH_HDR_LEN..ETH_HDR_LEN + 20];
    assert_eq!(ip[8], 63);
    assert!(ipv4_checksum_valid(ip));
    assert_eq!(&r.out[0][34..], &a[34..]);
}

#[test]
fn l3_drops_misses_and_expiring_ttl() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(Scenario::L3Fwd.ops(), &mut g, &ctx);
    let r = run(
        &mut c,
        &g,
        &[
            ipv4_frame(64, [11, 0, 0, 1], 64),
            ipv4_frame(64, [10, 0, 0, 1], 1),
            ipv4_frame(64, [10, 0, 0, 1], 0),
        ],
    );
    assert!(r.out.is_empty());
    assert_eq!(r.tally.get(DropReason::RouteMiss), 1);
    assert_eq!(r.tally.get(DropReason::TtlExpired), 2);
}

#[test]
fn l3_default_route_matches_every_valid_packet() {
    let mut ctx = context();
    let mut lpm = LpmTable::new();
    lpm.insert(0, 0, NextHop { port: 1, mac: DST }).unwrap();
    ctx.lpm = Some(Arc::new(lpm));
    let mut g = vanilla();
    let mut c = chain(Scenario::L3Fwd.ops(), &mut g, &ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames: Vec<_> = (0..1000).map(|_| ipv4_frame(64, rng.gen(), 9)).collect();
    assert_eq!(run(&mut c, &g, &frames).out.len(), 1000);
}

#[test]
fn trusted_and_vanilla_produce_identical_output() {
    let ctx = context();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames: Vec<_> = (0..2000)
        .map(|_| ipv4_frame(rng.gen_range(64..1500), [10, rng.gen_range(0..3), 0, rng.gen()], rng.gen_range(0..4)))
        .collect();
    for sc in [Scenario::L2Fwd, Scenario::L3Fwd] {
        let mut gv = vanilla();
        let mut ge = enclave(BufferMode::TrustedCopy);
        let a = run(&mut chain(sc.ops(), &mut gv, &ctx), &gv, &frames);
        let b = run(&mut chain(sc.ops(), &mut ge, &ctx), &ge, &frames);
        assert_eq!(a.out, b.out);
        assert_eq!(a.tally, b.tally);
        // Tables were charged to the arena.
        assert!(ge.enclave().unwrap().arena_used() > 32);
    }
}

fn sealed_l2(plain: &[u8], pn: u32, icv: bool) -> Vec<u8> {
    let sa = SecurityAssociation::new(&keys());
    let mut m = mbuf(plain);
    seal_l2(&mut m, &sa, 1, pn, icv).unwrap();
    m.as_slice().to_vec()
}

#[test]
fn secure_l2_end_to_end_round_trip() {
    let ctx = context();
    let mut g = enclave(BufferMode::TrustedCopy);
    let mut c = chain(Scenario::L2FwdEnc.ops(), &mut g, &ctx);
    let plain = ipv4_frame(200, [10, 0, 0, 1], 64);
    let r = run(&mut c, &g, &[sealed_l2(&plain, 1, true)]);
    assert_eq!(r.out.len(), 1);
    // Whoever holds the keys can open and verify the re-sealed frame.
    let mut m = mbuf(&r.out[0]);
    open_l2(&mut m, &SecurityAssociation::new(&keys()), true).unwrap();
    let mut expect = plain.clone();
    expect[6..12].copy_from_slice(&PORT1.0);
    assert_eq!(m.as_slice(), &expect[..]);
    // Re-sealed under the instance's own sender id.
    assert_eq!(&r.out[0][15..17], &(instance_sender(0) as u16).to_be_bytes());
}

#[test]
fn secure_l2_every_single_bit_flip_is_dropped() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(Scenario::L2FwdEnc.ops(), &mut g, &ctx);
    let frame = sealed_l2(&ipv4_frame(64, [10, 0, 0, 1], 64), 9, true);
    let start = crate::pkt::secure::L2_HDR_LEN;
    let mut tampered = Vec::new();
    for bit in start * 8..frame.len() * 8 {
        let mut f = frame.clone();
        f[bit / 8] ^= 1 << (bit % 8);
        tampered.push(f);
    }
    let n = tampered.len();
    assert_eq!(n, (frame.len() - start) * 8);
    let r = run(&mut c, &g, &tampered);
    assert!(r.out.is_empty());
    assert_eq!(r.tally.get(DropReason::Tamper), n as u64);
}

#[test]
fn secure_l2_without_icv_is_encrypt_process_decrypt() {
    let mut ctx = context();
    ctx.icv = false;
    let mut g = vanilla();
    let mut c = chain(Scenario::L2FwdEnc.ops(), &mut g, &ctx);
    let plain = ipv4_frame(300, [10, 0, 0, 1], 64);
    let r = run(&mut c, &g, &[sealed_l2(&plain, 4, false)]);
    let mut processed = plain.clone();
    processed[6..12].copy_from_slice(&PORT1.0);
    let sa = SecurityAssociation::new(&keys());
    let mut m = mbuf(&processed);
    seal_l2(&mut m, &sa, instance_sender(0) as u16, 1, false).unwrap();
    assert_eq!(r.out, vec![m.as_slice().to_vec()]);
    assert!(r.out[0][r.out[0].len() - ICV_LEN..].iter().all(|&b| b == 0));
}

#[test]
fn sealing_counter_increases_per_frame() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(Scenario::L2FwdEnc.ops(), &mut g, &ctx);
    let plain = ipv4_frame(64, [10, 0, 0, 1], 64);
    let frames: Vec<_> = (1..=70).map(|pn| sealed_l2(&plain, pn, true)).collect();
    let r = run(&mut c, &g, &frames);
    let pns: Vec<u32> = r.out.iter().map(|f| u32::from_be_bytes(f[17..21].try_into().unwrap())).collect();
    assert_eq!(pns, (1..=70).collect::<Vec<_>>());
}

fn sealed_l3(plain: &[u8], seq: u32) -> Vec<u8> {
    let sa = SecurityAssociation::new(&keys());
    let mut m = mbuf(plain);
    seal_l3(&mut m, &sa, 1, seq, true).unwrap();
    m.as_slice().to_vec()
}

#[test]
fn secure_l3_round_trip_and_sequence_tamper() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(Scenario::L3FwdEnc.ops(), &mut g, &ctx);
    let plain = ipv4_frame(128, [10, 1, 0, 9], 64);
    let good = sealed_l3(&plain, 3);
    let r = run(&mut c, &g, std::slice::from_ref(&good));
    assert_eq!(r.out.len(), 1);
    let mut m = mbuf(&r.out[0]);
    open_l3(&mut m, &SecurityAssociation::new(&keys()), true).unwrap();
    assert_eq!(m.as_slice()[ETH_HDR_LEN + 8], 63);
    assert!(ipv4_checksum_valid(&m.as_slice()[ETH_HDR_LEN..ETH_HDR_LEN + 20]));

    let mut tampered = Vec::new();
    for bit in 0..32 {
        let mut f = good.clone();
        f[ETH_HDR_LEN + 4 + bit / 8] ^= 1 << (bit % 8);
        tampered.push(f);
    }
    let r = run(&mut c, &g, &tampered);
    assert!(r.out.is_empty());
    assert_eq!(r.tally.get(DropReason::Tamper), 32);
}

#[test]
fn lb_ocall_accounting_copy_mode() {
    let ctx = context();
    let mut g = enclave(BufferMode::TrustedCopy);
    let mut c = chain(&[OpKind::LbClassify], &mut g, &ctx);
    let frames: Vec<_> = (0..100).map(|i| ipv4_frame(64, [10, 0, 0, (i % 16) as u8], 64)).collect();
    let base = g.enclave().unwrap().stats().snapshot();
    let r = run(&mut c, &g, &frames);
    let s = g.enclave().unwrap().stats().snapshot();
    assert_eq!(r.out.len(), 100);
    assert_eq!(s.ocalls - base.ocalls, 4); // 32+32+32+4
    assert_eq!(s.bytes_copied_out - base.bytes_copied_out, 400);
    assert_eq!(s.bytes_copied_in - base.bytes_copied_in, 100);
}

#[test]
fn lb_untrusted_buffers_copy_nothing() {
    let ctx = context();
    let mut g = enclave(BufferMode::Untrusted);
    let mut c = chain(&[OpKind::LbClassify], &mut g, &ctx);
    let frames: Vec<_> = (0..32).map(|i| ipv4_frame(64, [10, 0, 0, i as u8], 64)).collect();
    run(&mut c, &g, &frames);
    let s = g.enclave().unwrap().stats().snapshot();
    assert_eq!(s.ocalls, 1);
    assert_eq!(s.bytes_copied_out + s.bytes_copied_in, 0);
}

#[test]
fn lb_empty_batch_issues_no_ocall() {
    let ctx = context();
    let mut g = enclave(BufferMode::TrustedCopy);
    let mut c = chain(&[OpKind::LbClassify], &mut g, &ctx);
    let mut burst = Vec::new();
    let mut dropped = Vec::new();
    c.run(&g, &mut burst, &mut dropped, &mut DropTally::default()).unwrap();
    assert_eq!(g.enclave().unwrap().stats().snapshot().ocalls, 0);
}

#[test]
fn lb_classifies_by_flow_table() {
    let ctx = context();
    let mut g = vanilla();
    let mut c = chain(&[OpKind::LbClassify], &mut g, &ctx);
    let mut burst = vec![mbuf(&ipv4_frame(64, [10, 0, 0, 7], 64)), mbuf(&ipv4_frame(64, [99, 0, 0, 7], 64))];
    c.run(&g, &mut burst, &mut Vec::new(), &mut DropTally::default()).unwrap();
    assert_eq!(burst[0].meta.egress, 3);
    assert_eq!(
        burst[1].meta.egress,
        u16::from(fallback_backend(u32::from_be_bytes([99, 0, 0, 7]), 4))
    );
}

#[test]
fn server_filters_non_members() {
    let ctx = context();
    let mut g = enclave(BufferMode::TrustedCopy);
    let mut c = NfChain::build(&[OpKind::ServerFilter], &mut g, &ctx, Instance { index: 2, backend: 3 });
    // 10.0.0.3 belongs to backend 3, 10.0.0.4 does not.
    let r = run(
        &mut c,
        &g,
        &[ipv4_frame(64, [10, 0, 0, 3], 64), ipv4_frame(64, [10, 0, 0, 4], 64)],
    );
    assert_eq!(r.out.len(), 1);
    assert_eq!(r.tally.get(DropReason::Filtered), 1);
    let s = g.enclave().unwrap().stats().snapshot();
    assert_eq!((s.ocalls, s.bytes_copied_out, s.bytes_copied_in), (1, 8, 8));
}

#[test]
fn stage_split_covers_all_ops_in_order() {
    for sc in Scenario::ALL {
        let ops = sc.ops();
        for stages in 1..=ops.len() {
            let parts = split_stages(ops, stages);
            assert_eq!(parts.len(), stages);
            assert!(parts.iter().all(|p| !p.is_empty()));
            assert_eq!(parts.concat(), ops);
        }
    }
}

#[test]
fn scenario_names_round_trip() {
    for sc in Scenario::ALL {
        assert_eq!(sc.name().parse::<Scenario>().unwrap(), sc);
    }
    assert!("l4fwd".parse::<Scenario>().is_err());
}
