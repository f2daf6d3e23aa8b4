//! Property tests over randomly generated traces and network models.

use proptest::prelude::*;

use ettrace::feeder::{drain_order_windowed, Policy};
use ettrace::generator::{generate_random_dag, generate_transformer, GenSpec};
use ettrace::schema::{parse_trace, serialize_trace, validate_trace, CommType};
use ettrace::sim::{collective_time, NetworkModel, Topology};

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    /// Serialization is a bijection on canonical traces, and canonicalize
    /// is a fixpoint of itself.
    #[test]
    fn random_dag_round_trips(n in 1u64..150, p in 0.0f64..0.3, seed in any::<u64>()) {
        let trace = generate_random_dag(n, p, seed).unwrap();
        prop_assert!(validate_trace(&trace).is_valid());
        let bytes = serialize_trace(&trace).unwrap();
        let parsed = parse_trace(&bytes).unwrap();
        prop_assert_eq!(&bytes, &serialize_trace(&parsed).unwrap());
        let mut canon = parsed;
        canon.canonicalize();
        prop_assert_eq!(&bytes, &serialize_trace(&canon).unwrap());
    }

    /// Every feeder policy emits a topological order and never loses or
    /// duplicates a node, at any window size.
    #[test]
    fn feeder_emits_topological_orders(
        n in 1u64..400,
        p in 0.0f64..0.1,
        seed in any::<u64>(),
        window in 1usize..64,
        policy in prop_oneof![
            Just(Policy::Fifo),
            Just(Policy::StartTime),
            Just(Policy::CommPriority),
        ],
    ) {
        let trace = generate_random_dag(n, p, seed).unwrap();
        let order = drain_order_windowed(&trace, policy, window).unwrap();
        prop_assert_eq!(order.len(), trace.nodes.len());
        let pos: std::collections::HashMap<u64, usize> =
            order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        for node in &trace.nodes {
            for d in node.ctrl_deps.iter().chain(node.data_deps.iter()) {
                prop_assert!(pos[d] < pos[&node.id]);
            }
        }
    }

    /// Collective cost is monotone: more bytes never get cheaper, more
    /// bandwidth never gets slower, and a single rank is always free.
    #[test]
    fn collective_time_is_monotone(
        s in 1u64..1_000_000,
        extra in 0u64..1_000_000,
        bw in 1.0f64..10_000.0,
        alpha in 0.0f64..8.0,
        n in 2u64..64,
        ct in prop_oneof![
            Just(CommType::AllReduce),
            Just(CommType::AllGather),
            Just(CommType::ReduceScatter),
            Just(CommType::All2All),
            Just(CommType::Broadcast),
            Just(CommType::PointToPoint),
        ],
        top in prop_oneof![
            Just(Topology::Switch),
            Just(Topology::Ring),
            Just(Topology::FullyConnected),
        ],
    ) {
        let m = NetworkModel::new(top, bw, alpha);
        let t1 = collective_time(ct, n, s, &m).unwrap();
        let t2 = collective_time(ct, n, s + extra, &m).unwrap();
        prop_assert!(t2 >= t1, "more bytes got cheaper: {t1} -> {t2}");
        let fast = NetworkModel::new(top, bw * 2.0, alpha);
        let t3 = collective_time(ct, n, s, &fast).unwrap();
        prop_assert!(t3 <= t1, "more bandwidth got slower: {t1} -> {t3}");
        prop_assert_eq!(collective_time(ct, 1, s, &m).unwrap(), 0);
    }

    /// Transformer traces honor their own closed-form collective counts.
    #[test]
    fn transformer_counts_hold(
        layers in 1u64..5,
        tp in prop_oneof![Just(1u64), Just(2), Just(4)],
        dp in prop_oneof![Just(1u64), Just(2)],
        microbatches in 1u64..3,
        grad_buckets in 0u64..3,
        sequence_parallel: bool,
    ) {
        let spec = GenSpec {
            layers, tp, dp, pp: 1, microbatches, grad_buckets, sequence_parallel,
            ..Default::default()
        };
        for trace in generate_transformer(&spec).unwrap() {
            prop_assert!(validate_trace(&trace).is_valid());
            let mut ar = 0u64;
            let mut ag = 0u64;
            let mut rs = 0u64;
            for node in &trace.nodes {
                match node.comm_type() {
                    Some(CommType::AllReduce) => ar += 1,
                    Some(CommType::AllGather) => ag += 1,
                    Some(CommType::ReduceScatter) => rs += 1,
                    _ => {}
                }
            }
            prop_assert_eq!(ar, spec.expected_allreduce(trace.rank));
            prop_assert_eq!(ag, spec.expected_allgather(trace.rank));
            prop_assert_eq!(rs, spec.expected_allgather(trace.rank));
        }
    }
}
