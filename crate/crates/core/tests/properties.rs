use plcmimic_core::capture::{build_context, split_dataset, unframe};
use plcmimic_core::config::{Area, Function, Protocol, ProtocolConfig};
use plcmimic_core::dataset::{triplet, weighted_x_samples, SamplePair, SamplerConfig};
use plcmimic_core::hexstr;
use plcmimic_core::metrics::score_record;
use plcmimic_core::modbus;
use plcmimic_core::plant::{eval_block, MathKind, Plant, PlantConfig};
use plcmimic_core::protocol::{ExceptionCode, Outcome, Request, RequestBody, RequestId};
use plcmimic_core::s7::S7Frame;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn request_strategy(protocol: Protocol) -> impl Strategy<Value = Request> {
    let id = match protocol {
        Protocol::Modbus => (any::<u16>(), any::<u8>())
            .prop_map(|(t, u)| RequestId::Modbus { transaction_id: t, unit_id: u })
            .boxed(),
        Protocol::S7comm => any::<u16>().prop_map(|r| RequestId::S7 { pdu_ref: r }).boxed(),
    };
    // S7 items must fit one 480-byte PDU
    let (max_regs, max_coils) = match protocol {
        Protocol::Modbus => (modbus::MAX_WRITE_REGISTERS as usize, modbus::MAX_WRITE_COILS as usize),
        Protocol::S7comm => (100, 200),
    };
    let area = prop_oneof![Just(Area::Digital), Just(Area::Analog)];
    (id, area, any::<u16>(), any::<bool>(), 1..=max_regs, any::<u64>()).prop_map(
        move |(id, area, address, read, n, seed)| {
            let n = match area {
                Area::Analog => n,
                Area::Digital => (n * max_coils / max_regs).max(1),
            };
            let n = n.min(u16::MAX as usize - address as usize + 1).max(1);
            if read {
                return Request::read(id, area, address, n as u16);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..n)
                .map(|_| match area {
                    Area::Digital => rand::Rng::gen_range(&mut rng, 0..=1u16),
                    Area::Analog => rand::Rng::gen(&mut rng),
                })
                .collect();
            Request::write(id, area, address, values)
        },
    )
}

fn outcome_for(req: &Request, code: u8, values_seed: u64, exception: bool) -> Outcome {
    if exception {
        return Outcome::Exception(ExceptionCode(code));
    }
    match &req.body {
        RequestBody::Write { .. } => Outcome::Written,
        RequestBody::Read { quantity } => {
            let mut rng = ChaCha8Rng::seed_from_u64(values_seed);
            Outcome::Values(
                (0..*quantity)
                    .map(|_| match req.area() {
                        Area::Digital => rand::Rng::gen_range(&mut rng, 0..=1u16),
                        Area::Analog => rand::Rng::gen(&mut rng),
                    })
                    .collect(),
            )
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn modbus_request_decode_encode_is_identity(req in request_strategy(Protocol::Modbus)) {
        let bytes = Protocol::Modbus.encode_request(&req).unwrap();
        let back = Protocol::Modbus.decode_request(&bytes).unwrap();
        prop_assert_eq!(&back, &req);
        prop_assert_eq!(Protocol::Modbus.encode_request(&back).unwrap(), bytes);
    }

    #[test]
    fn modbus_response_frames_round_trip(
        req in request_strategy(Protocol::Modbus),
        code in 1u8..=4,
        seed in any::<u64>(),
        exception in any::<bool>(),
    ) {
        let outcome = outcome_for(&req, code, seed, exception);
        let bytes = Protocol::Modbus.encode_response(&req, &outcome).unwrap();
        prop_assert_eq!(modbus::Frame::decode_response(&bytes).unwrap().to_bytes().unwrap(), bytes.clone());
        prop_assert_eq!(Protocol::Modbus.interpret_response(&req, &bytes), Ok(outcome));
    }

    #[test]
    fn s7_frames_round_trip(
        req in request_strategy(Protocol::S7comm),
        code in 1u8..=4,
        seed in any::<u64>(),
        exception in any::<bool>(),
    ) {
        let bytes = Protocol::S7comm.encode_request(&req).unwrap();
        prop_assert_eq!(S7Frame::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes.clone());
        prop_assert_eq!(&Protocol::S7comm.decode_request(&bytes).unwrap(), &req);
        let outcome = outcome_for(&req, code, seed, exception);
        let resp = Protocol::S7comm.encode_response(&req, &outcome).unwrap();
        prop_assert_eq!(S7Frame::from_bytes(&resp).unwrap().to_bytes().unwrap(), resp.clone());
        prop_assert_eq!(Protocol::S7comm.interpret_response(&req, &resp), Ok(outcome));
    }

    /// Requests touching any address past the configured points get exception 2;
    /// supported in-range requests with legal values never get one.
    #[test]
    fn exception_boundary(
        points in 1u32..200,
        req in request_strategy(Protocol::Modbus),
        s7 in any::<bool>(),
    ) {
        let protocol = if s7 { Protocol::S7comm } else { Protocol::Modbus };
        let cfg = ProtocolConfig::with_points(protocol, points);
        let mut plant = Plant::new(cfg.clone().into()).unwrap();
        let last = req.address as u32 + req.quantity() as u32 - 1;
        let outcome = plant.apply(&req);
        if last >= points {
            prop_assert_eq!(outcome, Outcome::Exception(ExceptionCode::ILLEGAL_ADDRESS));
        } else {
            prop_assert!(!matches!(outcome, Outcome::Exception(_)));
        }
    }

    #[test]
    fn write_then_read_returns_the_written_values(
        points in 1u32..300,
        start in 0u32..300,
        values in prop::collection::vec(any::<u16>(), 1..20),
        digital in any::<bool>(),
    ) {
        let cfg = ProtocolConfig::with_points(Protocol::Modbus, points);
        let mut plant = Plant::new(PlantConfig::from(cfg)).unwrap();
        let (area, values): (Area, Vec<u16>) = if digital {
            (Area::Digital, values.iter().map(|v| v & 1).collect())
        } else {
            (Area::Analog, values)
        };
        prop_assume!(start + values.len() as u32 <= points);
        let id = RequestId::Modbus { transaction_id: 1, unit_id: 1 };
        let n = values.len() as u16;
        prop_assert_eq!(plant.apply(&Request::write(id, area, start as u16, values.clone())), Outcome::Written);
        prop_assert_eq!(plant.apply(&Request::read(id, area, start as u16, n)), Outcome::Values(values));
    }

    /// For any candidate answer: bca implies rva_eps(0), rva_eps is monotone in
    /// eps, and every rva_eps implies rva.
    #[test]
    fn metric_ordering(
        req in request_strategy(Protocol::Modbus),
        flips in prop::collection::vec((any::<prop::sample::Index>(), 1u8..=255), 0..3),
        truncate in any::<bool>(),
    ) {
        let cfg = ProtocolConfig::with_points(Protocol::Modbus, 40);
        let mut plant = Plant::new(cfg.clone().into()).unwrap();
        let reference = plant.handle_frame(&Protocol::Modbus.encode_request(&req).unwrap()).unwrap();
        let mut pred = reference.clone();
        for (i, x) in &flips {
            let at = i.index(pred.len());
            pred[at] ^= x;
        }
        if truncate {
            pred.pop();
        }
        let eps = [0, 1, 2, 5, 10, 100, 1_000_000];
        let s = score_record(&cfg, &req, &hexstr::encode(&pred), &hexstr::encode(&reference), &eps);
        prop_assert_eq!(s.rva_eps[0], s.bca);
        for w in s.rva_eps.windows(2) {
            prop_assert!(!w[0] || w[1]);
        }
        prop_assert!(!s.rva_eps[6] || s.rva.is_ok());
    }

    #[test]
    fn context_framing_is_lossless(
        session in prop::collection::vec(("[0-9a-f]{2,16}", "[0-9a-f]{2,16}"), 1..12),
        len in 0usize..4,
    ) {
        let pairs: Vec<SamplePair> = session
            .into_iter()
            .map(|(q, r)| SamplePair { source_text: q, target_text: r })
            .collect();
        prop_assume!(pairs.len() > len);
        let windows = build_context(&pairs, len).unwrap();
        prop_assert_eq!(windows.len(), pairs.len() - len);
        prop_assert_eq!(unframe(&windows).unwrap(), pairs);
    }

    #[test]
    fn split_is_a_partition(n in 0usize..500, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let s = split_dataset(&items, 0.1, 0.1, seed);
        prop_assert_eq!(s.validation.len(), n / 10);
        prop_assert_eq!(s.test.len(), n / 10);
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn triplet_is_strictly_ordered(low in 0u32..1000, span in 0u32..1000, elem in 0u32..4, seed in any::<u64>()) {
        let high = low + span;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match triplet(&mut rng, low, high, elem) {
            Ok([a, b, c]) => {
                prop_assert!(a == low && a < b && b < c && c == high - elem);
            }
            Err(_) => prop_assert!(high < low + elem + 2),
        }
    }

    #[test]
    fn sampler_output_sorted_and_in_range(
        kind in prop::sample::select(MathKind::ALL.to_vec()),
        mix in 0.05f64..=1.0,
        power in 0.05f64..=1.0,
        x_low in -10.0f64..0.0,
        width in 0.5f64..20.0,
        seed in any::<u64>(),
    ) {
        let cfg = SamplerConfig { n_samples: 200, x_low, x_high: x_low + width, mix_ratio: mix, power };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = weighted_x_samples(&cfg, |x| eval_block(kind, x), &mut rng).unwrap();
        prop_assert_eq!(xs.len(), 200);
        prop_assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(xs.iter().all(|x| *x >= cfg.x_low && *x <= cfg.x_high));
    }

    #[test]
    fn unsupported_functions_get_exception_one(req in request_strategy(Protocol::Modbus)) {
        let mut cfg = ProtocolConfig::with_points(Protocol::Modbus, 40);
        cfg.functions = vec![Function::ReadAnalog];
        let mut plant = Plant::new(cfg.into()).unwrap();
        let outcome = plant.apply(&req);
        if req.function != Function::ReadAnalog {
            prop_assert_eq!(outcome, Outcome::Exception(ExceptionCode::ILLEGAL_FUNCTION));
        }
    }
}
