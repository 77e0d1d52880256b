use super::dpt::{dpt9_exponent, dpt9_is_canonical, DPT9_INVALID, DPT9_MAX, DPT9_MIN};
use super::*;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ga(s: &str) -> GroupAddress {
    s.parse().unwrap()
}

fn ia(s: &str) -> IndividualAddress {
    s.parse().unwrap()
}

#[test]
fn group_address_examples() {
    assert_eq!(ga("0/0/0").encode(), 0x0000);
    // 1 << 11 | 2 << 8 | 3
    assert_eq!(ga("1/2/3").encode(), 2048 + 512 + 3);
    assert_eq!(ga("1/2/3").encode(), 0x0A03);
    assert!(matches!(GroupAddress::new(32, 0, 0), Err(IotError::Range(_))));
    assert!(matches!(GroupAddress::new(0, 8, 0), Err(IotError::Range(_))));
    assert_eq!(ga("31/7/255").to_string(), "31/7/255");
    assert!("1/2".parse::<GroupAddress>().is_err());
}

#[test]
fn group_address_codec_is_a_bijection() {
    let mut seen = std::collections::HashSet::new();
    for raw in 0..=u16::MAX {
        let g = GroupAddress::decode(raw);
        assert_eq!(g.encode(), raw);
        assert_eq!(GroupAddress::new(g.main(), g.middle(), g.sub()).unwrap(), g);
        assert!(seen.insert(g));
    }
}

#[test]
fn individual_address_parsing() {
    assert_eq!(ia("1.1.10").to_string(), "1.1.10");
    assert!("16.0.1".parse::<IndividualAddress>().is_err());
    assert!("1.1".parse::<IndividualAddress>().is_err());
}

// Oracle: value = 0.01 * M * 2^E read straight off the bit fields.
fn dpt9_oracle(raw: u16) -> f64 {
    let sign = raw >> 15;
    let e = (raw >> 11) & 0xF;
    let mut m = i64::from(raw & 0x7FF);
    if sign == 1 {
        m -= 2048;
    }
    0.01 * (m as f64) * 2f64.powi(i32::from(e))
}

#[test]
fn dpt9_examples() {
    assert_eq!(dpt9_encode(0.0).unwrap(), [0x00, 0x00]);
    assert_eq!(dpt9_encode(21.0).unwrap(), [0x0C, 0x1A]);
    assert_eq!(dpt9_encode(-30.0).unwrap(), [0x8A, 0x24]);
    assert!((dpt9_oracle(0x0C1A) - 21.0).abs() < 1e-9);
    assert!((dpt9_oracle(0x8A24) + 30.0).abs() < 1e-9);
    assert_eq!(dpt9_decode([0x7F, 0xFF]), Err(IotError::InvalidEncoding));
    assert!(matches!(dpt9_encode(700_000.0), Err(IotError::OutOfRange(_))));
    assert!(matches!(dpt9_encode(f64::NAN), Err(IotError::OutOfRange(_))));
    assert_eq!(dpt9_decode(dpt9_encode(DPT9_MIN).unwrap()).unwrap(), DPT9_MIN);
    // The top of the range sits just below the reserved code.
    assert_eq!(dpt9_encode(DPT9_MAX).unwrap(), [0x7F, 0xFE]);
    assert!(dpt9_encode(DPT9_MAX + 0.01).is_err());
}

#[test]
fn dpt9_canonical_codes_round_trip() {
    let mut canonical = 0;
    for raw in 0..=u16::MAX {
        let b = raw.to_be_bytes();
        if raw == DPT9_INVALID {
            continue;
        }
        let v = dpt9_decode(b).unwrap();
        assert!((v - dpt9_oracle(raw)).abs() < 1e-6, "{raw:#06x}");
        if dpt9_is_canonical(b) {
            canonical += 1;
            assert_eq!(dpt9_encode(v).unwrap(), b, "{raw:#06x} -> {v}");
        } else {
            let re = dpt9_encode(v).unwrap();
            assert!(dpt9_exponent(re) < dpt9_exponent(b));
            assert_eq!(dpt9_decode(re).unwrap(), v);
        }
    }
    assert!(canonical > 30_000);
}

#[test]
fn dpt9_random_values_within_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let v: f64 = rng.gen_range(DPT9_MIN..670_000.0);
        let b = dpt9_encode(v).unwrap();
        let step = 0.01 * 2f64.powi(dpt9_exponent(b) as i32);
        let back = dpt9_decode(b).unwrap();
        assert!((back - v).abs() <= step / 2.0 + 1e-9, "{v} -> {back}");
    }
}

#[test]
fn dpt_text_codec() {
    assert_eq!(dpt::render(DpValue::Float(21.0)), "21.00");
    assert_eq!(dpt::render(DpValue::Bool(true)), "1");
    assert_eq!(dpt::parse_text(Dpt::Switch, "1").unwrap(), DpValue::Bool(true));
    assert_eq!(dpt::parse_text(Dpt::Count, "2").unwrap(), DpValue::Count(2));
    assert!(dpt::parse_text(Dpt::Switch, "maybe").is_err());
    assert!(matches!(dpt::decode(Dpt::Ppm, &[1]), Err(IotError::BadPayload(_))));
    assert!(dpt::encode(Dpt::Switch, DpValue::Float(1.0)).is_err());
}

fn light(id: &str, addr: &str, group: &str) -> CommissioningRecord {
    CommissioningRecord {
        device_id: id.into(),
        individual_address: ia(addr),
        objects: vec!["switch".into()],
        links: vec![GroupLink {
            object: "switch".into(),
            ga: ga(group),
            dpt: Dpt::Switch,
            direction: Direction::In,
        }],
        parameters: BTreeMap::new(),
    }
}

fn status_light(id: &str, addr: &str, group: &str) -> CommissioningRecord {
    let mut rec = light(id, addr, group);
    rec.links.push(GroupLink {
        direction: Direction::Out,
        ..rec.links[0].clone()
    });
    rec.links[1].object = "status".into();
    rec.objects.push("status".into());
    rec
}

#[test]
fn commissioned_light_follows_group_writes() {
    let mut bus = Bus::new();
    bus.commission(light("light-1", "1.1.10", "1/2/3")).unwrap();
    let n = bus.group_write(ia("1.1.1"), ga("1/2/3"), &[1]).unwrap();
    assert_eq!(n, 1);
    assert_eq!(bus.device("light-1").unwrap().object_value("switch"), Some(&[1u8][..]));
    assert_eq!(
        bus.commission(light("light-2", "1.1.10", "1/2/3")),
        Err(IotError::AddressInUse(ia("1.1.10")))
    );
}

#[test]
fn bad_links_are_rejected() {
    let mut bus = Bus::new();
    let mut rec = light("x", "1.1.20", "1/2/3");
    rec.links[0].object = "ghost".into();
    assert!(matches!(bus.commission(rec), Err(IotError::BadLink { .. })));

    bus.commission(light("a", "1.1.21", "1/2/3")).unwrap();
    let mut rec = light("b", "1.1.22", "1/2/3");
    rec.links[0].dpt = Dpt::Ppm;
    assert!(matches!(bus.commission(rec), Err(IotError::BadLink { .. })));
    assert!(bus.device("b").is_none());
}

#[test]
fn write_reaches_every_in_device_and_read_echoes() {
    let mut bus = Bus::new();
    bus.commission(light("l1", "1.1.10", "1/2/3")).unwrap();
    bus.commission(status_light("l2", "1.1.11", "1/2/3")).unwrap();
    assert_eq!(bus.group_write(ia("1.1.1"), ga("1/2/3"), &[1]).unwrap(), 2);
    for id in ["l1", "l2"] {
        assert_eq!(bus.device(id).unwrap().object_value("switch"), Some(&[1u8][..]));
    }
    let resp = bus.group_read(ga("1/2/3")).unwrap();
    assert_eq!(resp.payload, vec![1]);
    assert_eq!(resp.src, ia("1.1.11"));
    assert_eq!(resp.service, Service::Response);
    assert_eq!(bus.group_read(ga("5/0/1")), Err(IotError::NoResponder(ga("5/0/1"))));
    assert!(matches!(
        bus.group_write(ia("1.1.1"), ga("1/2/3"), &[1, 2]),
        Err(IotError::BadPayload(_))
    ));
}

#[test]
fn read_prefers_lowest_individual_address() {
    let mut bus = Bus::new();
    bus.commission(status_light("hi", "1.1.40", "1/2/3")).unwrap();
    bus.commission(status_light("lo", "1.1.4", "1/2/3")).unwrap();
    assert_eq!(bus.group_read(ga("1/2/3")).unwrap().src, ia("1.1.4"));
}

#[test]
fn topic_matching_examples() {
    assert!(topic_matches("shed/+/co2", "shed/room1/co2"));
    assert!(topic_matches("shed/#", "shed/room1/co2/raw"));
    assert!(!topic_matches("shed/#", "garage/x"));
    assert!(topic_matches("shed/#", "shed"));
    assert!(!topic_matches("shed/+", "shed/a/b"));
    assert!(!topic_matches("shed/+/co2", "shed/co2"));
    for bad in ["a/#/b", "a+/b", "", "a/b#"] {
        assert!(validate_filter(bad).is_err(), "{bad}");
    }
    let mut broker = Broker::new();
    assert!(matches!(broker.subscribe("x", "a/#/b"), Err(IotError::BadFilter(_))));
}

// Oracle: build the segment lists and compare index by index.
fn matches_oracle(filter: &str, topic: &str) -> bool {
    let f: Vec<&str> = filter.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    if f.last() == Some(&"#") {
        let head = &f[..f.len() - 1];
        if t.len() < head.len() {
            return false;
        }
        return head.iter().zip(&t).all(|(a, b)| *a == "+" || a == b);
    }
    f.len() == t.len() && f.iter().zip(&t).all(|(a, b)| *a == "+" || a == b)
}

#[test]
fn topic_matching_equals_segment_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let words = ["shed", "room1", "room2", "co2", "raw", ""];
    for _ in 0..10_000 {
        let tn = rng.gen_range(1..5);
        let topic: Vec<&str> = (0..tn).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let topic = topic.join("/");
        let fnn = rng.gen_range(1..5);
        let mut filter: Vec<&str> = (0..fnn)
            .map(|_| match rng.gen_range(0..4) {
                0 => "+",
                _ => words[rng.gen_range(0..words.len())],
            })
            .collect();
        if rng.gen_bool(0.3) {
            filter.push("#");
        }
        let filter = filter.join("/");
        if filter.is_empty() || topic.is_empty() {
            continue;
        }
        assert!(validate_filter(&filter).is_ok());
        assert_eq!(
            topic_matches(&filter, &topic),
            matches_oracle(&filter, &topic),
            "{filter} vs {topic}"
        );
    }
}

#[test]
fn broker_delivers_in_subscription_order_and_keeps_retained() {
    let mut broker = Broker::new();
    let (a, _) = broker.subscribe("a", "shed/#").unwrap();
    let (b, _) = broker.subscribe("b", "shed/+/co2").unwrap();
    broker.subscribe("c", "garage/#").unwrap();
    let mut msg = PubSubMessage::text("shed/room1/co2", "900.00");
    msg.retained = true;
    let got = broker.publish(&msg).unwrap();
    assert_eq!(got.iter().map(|s| s.id).collect::<Vec<_>>(), vec![a.id, b.id]);
    let (_, retained) = broker.subscribe("d", "shed/room1/#").unwrap();
    assert_eq!(retained, vec![msg]);
    assert!(broker.publish(&PubSubMessage::text("shed/+", "x")).is_err());
}

fn hub() -> Hub {
    Hub::new(
        ia("1.1.1"),
        &[
            BridgeMapping {
                ga: ga("2/1/1"),
                topic: "shed/room1/co2".into(),
                dpt: Dpt::Ppm,
                direction: BridgeDirection::Telemetry,
            },
            BridgeMapping {
                ga: ga("1/2/3"),
                topic: "shed/room1/light/set".into(),
                dpt: Dpt::Switch,
                direction: BridgeDirection::Command,
            },
            BridgeMapping {
                ga: ga("1/2/3"),
                topic: "shed/room1/light/state".into(),
                dpt: Dpt::Switch,
                direction: BridgeDirection::Telemetry,
            },
        ],
    )
    .unwrap()
}

#[test]
fn co2_telegram_is_published_as_decoded_text() {
    let payload = dpt9_encode(850.0).unwrap();
    let t = Telegram {
        src: ia("1.1.30"),
        ga: ga("2/1/1"),
        service: Service::Write,
        payload: payload.to_vec(),
    };
    let BridgeOutcome::Forwarded(msg) = hub().on_telegram(&t).unwrap() else {
        panic!("not forwarded");
    };
    // 850 needs exponent 6; the nearest code is 1328 * 64 / 100.
    let expected = format!("{:.2}", dpt9_oracle(u16::from_be_bytes(payload)));
    assert_eq!(expected, "849.92");
    assert_eq!(msg.topic, "shed/room1/co2");
    assert_eq!(msg.payload_text(), expected);
}

#[test]
fn command_topic_becomes_write_telegram() {
    let h = hub();
    let BridgeOutcome::Forwarded(t) = h.on_message(&PubSubMessage::text("shed/room1/light/set", "1")).unwrap() else {
        panic!("not forwarded");
    };
    assert_eq!(t.ga, ga("1/2/3"));
    assert_eq!(t.payload, vec![0x01]);
    assert_eq!(t.src, h.address());
    assert_eq!(h.on_telegram(&t).unwrap(), BridgeOutcome::Suppressed);
    assert_eq!(
        h.on_message(&PubSubMessage::text("shed/room9/x", "1")).unwrap(),
        BridgeOutcome::Unmapped
    );
}

#[test]
fn bridge_conserves_frames_under_random_traffic() {
    let h = hub();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut external = 0;
    let mut published = 0;
    let mut commands = 0;
    let mut written = 0;
    for _ in 0..2000 {
        if rng.gen_bool(0.5) {
            // External telegram on a mapped group.
            let (g, payload) = if rng.gen_bool(0.5) {
                (ga("2/1/1"), dpt9_encode(rng.gen_range(300.0..3000.0)).unwrap().to_vec())
            } else {
                (ga("1/2/3"), vec![rng.gen_range(0..2)])
            };
            external += 1;
            let t = Telegram {
                src: ia("1.1.50"),
                ga: g,
                service: Service::Write,
                payload,
            };
            if let BridgeOutcome::Forwarded(_) = h.on_telegram(&t).unwrap() {
                published += 1;
            }
        } else {
            commands += 1;
            let text = if rng.gen_bool(0.5) { "1" } else { "0" };
            let BridgeOutcome::Forwarded(t) = h.on_message(&PubSubMessage::text("shed/room1/light/set", text)).unwrap()
            else {
                panic!("command dropped");
            };
            written += 1;
            // The hub's own write reappears on the bus; it must not echo.
            assert_eq!(h.on_telegram(&t).unwrap(), BridgeOutcome::Suppressed);
        }
    }
    assert_eq!(external, published);
    assert_eq!(commands, written);
}

// Oracle: replay the thresholds by hand.
fn hvac_oracle(samples: &[f64]) -> Vec<u8> {
    let mut level: i32 = 0;
    let mut out = Vec::new();
    for &s in samples {
        let next = if s > 1000.0 && level < 2 {
            level + 1
        } else if s < 800.0 && level > 0 {
            level - 1
        } else {
            level
        };
        if next != level {
            out.push(next as u8);
        }
        level = next;
    }
    out
}

fn run_hvac(samples: &[f64]) -> Vec<u8> {
    let mut c = HvacController::new(HvacThresholds::default());
    samples.iter().filter_map(|s| c.on_sample(*s)).collect()
}

#[test]
fn hvac_examples() {
    assert_eq!(run_hvac(&[750.0, 1100.0]), vec![1]);
    assert_eq!(run_hvac(&[1100.0, 900.0, 1100.0]), vec![1, 2]);
    assert!(run_hvac(&[850.0; 20]).is_empty());
    assert_eq!(run_hvac(&[1100.0, 1100.0, 1100.0, 700.0, 700.0, 700.0]), vec![1, 2, 1, 0]);
}

#[test]
fn hvac_matches_oracle_and_stays_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let samples: Vec<f64> = (0..rng.gen_range(0..40)).map(|_| rng.gen_range(500.0..1400.0)).collect();
        let got = run_hvac(&samples);
        assert_eq!(got, hvac_oracle(&samples));
        assert!(got.iter().all(|l| *l <= hvac::MAX_LEVEL));
    }
}

#[test]
fn topology_loop_latency() {
    let t = Topology {
        hop_latency_ms: 5,
        mesh_hops: 1,
        backhaul_hops: 1,
    };
    assert_eq!(t.loop_latency_ms(), 2 * (1 + 1) * 5);
}
