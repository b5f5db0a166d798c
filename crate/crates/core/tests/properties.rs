//! Property tests for the invariants that hold across modules: gate simplex
//! geometry, per-node mass conservation, bitwise parity of the plain and
//! taped scalar paths, split partitioning, and statistic monotonicity.

use mcpnet::autodiff::Tape;
use mcpnet::checkpoint;
use mcpnet::dataio::{split, Forcing, SplitLabel};
use mcpnet::metrics::{kge_parts, DistStats};
use mcpnet::network::{self, NetworkSpec, NetworkType};
use mcpnet::node::{self, NodeParams, Sharing, STATE_FLOOR};
use proptest::prelude::*;

fn any_sharing() -> impl Strategy<Value = Sharing> {
    prop_oneof![
        Just(Sharing::None),
        Just(Sharing::Sal),
        Just(Sharing::Sao),
        Just(Sharing::Salo),
    ]
}

fn any_ntype() -> impl Strategy<Value = NetworkType> {
    prop_oneof![
        Just(NetworkType::Di),
        Just(NetworkType::Ds),
        Just(NetworkType::Dir),
        Just(NetworkType::Dsr),
        Just(NetworkType::Mlb),
    ]
}

fn node_params(width: usize) -> impl Strategy<Value = NodeParams<f64>> {
    let c = -3.0..3.0f64;
    (
        c.clone(),
        proptest::collection::vec(c.clone(), width),
        c.clone(),
        c.clone(),
        proptest::collection::vec(c.clone(), width),
        c.clone(),
        c.clone(),
        c,
    )
        .prop_map(
            |(
                out_bias,
                out_state_coef,
                loss_bias,
                loss_pet_coef,
                loss_state_coef,
                logit_out,
                logit_loss,
                logit_rem,
            )| NodeParams {
                out_bias,
                out_state_coef,
                loss_bias,
                loss_pet_coef,
                loss_state_coef,
                logit_out,
                logit_loss,
                logit_rem,
            },
        )
}

fn forcing(steps: usize) -> impl Strategy<Value = Forcing> {
    (
        proptest::collection::vec(
            prop_oneof![3 => Just(0.0f64), 2 => 0.0..40.0f64],
            steps,
        ),
        proptest::collection::vec(0.0..10.0f64, steps),
    )
        .prop_map(|(precip, pet)| Forcing { precip, pet })
}

/// Random architecture with random free parameters, packed through the
/// public layout so frozen slots stay frozen.
fn network_case() -> impl Strategy<Value = (NetworkSpec, Vec<f64>)> {
    (
        any_ntype(),
        any_sharing(),
        prop_oneof![
            proptest::collection::vec(1usize..4, 1),
            proptest::collection::vec(1usize..3, 2),
        ],
    )
        .prop_flat_map(|(ntype, sharing, layer_sizes)| {
            let spec = NetworkSpec::new(ntype, sharing, layer_sizes);
            let n = network::count_parameters(&spec);
            (
                Just(spec),
                proptest::collection::vec(-2.0..2.0f64, n),
            )
        })
}

proptest! {
    #[test]
    fn gates_stay_on_the_simplex_and_respect_the_demand_cap(
        width in 1usize..4,
        pet in 0.0..10.0f64,
        sharing in any_sharing(),
        seed_states in proptest::collection::vec(0.0..500.0f64, 4),
        params in node_params(4),
    ) {
        let states = &seed_states[..width];
        let mut p = params.clone();
        p.out_state_coef.truncate(width);
        p.loss_state_coef.truncate(width);
        let scales = node::gate_scales(&p);
        for own in 0..width {
            let g = node::compute_gates(&p, &scales, own, states, pet, sharing);
            for (name, v) in [
                ("g_out", g.g_out),
                ("g_loss_con", g.g_loss_con),
                ("g_rem", g.g_rem),
            ] {
                prop_assert!((0.0..=1.0).contains(&v), "{name} = {v}");
            }
            let sum = g.g_out + g.g_loss_con + g.g_rem;
            prop_assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
            let loss = g.g_loss_con * states[own];
            prop_assert!(loss <= pet + 1e-12, "loss {loss} exceeds demand {pet}");
            prop_assert!(g.g_loss_con <= g.g_loss_raw + 1e-15);
        }
    }

    #[test]
    fn one_step_conserves_mass_exactly(
        width in 1usize..4,
        pet in 0.0..10.0f64,
        input in 0.0..40.0f64,
        sharing in any_sharing(),
        seed_states in proptest::collection::vec(0.0..500.0f64, 4),
        params in node_params(4),
    ) {
        let states = &seed_states[..width];
        let mut p = params.clone();
        p.out_state_coef.truncate(width);
        p.loss_state_coef.truncate(width);
        let scales = node::gate_scales(&p);
        for own in 0..width {
            let (next, fluxes, _) = node::node_step(&p, &scales, own, states, input, pet, sharing);
            prop_assert!(next >= 0.0);
            prop_assert!(fluxes.output >= 0.0 && fluxes.loss >= 0.0);
            let x = states[own];
            let residual = (next - x) - (fluxes.input - fluxes.output - fluxes.loss);
            prop_assert!(
                residual.abs() <= 1e-12 * x.max(1.0),
                "residual {residual} at state {x}"
            );
        }
    }

    #[test]
    fn every_node_closes_its_mass_budget(
        (spec, flat) in network_case(),
        forcing in forcing(40),
    ) {
        let params = network::unpack::<f64>(&spec, &flat).unwrap();
        let trace =
            network::simulate_trace(&spec, &params, &forcing, &Default::default()).unwrap();
        for (l, layer) in trace.final_states.iter().enumerate() {
            for (j, &x_end) in layer.iter().enumerate() {
                let x_start = trace.states[0][l][j];
                let mut balance = x_start;
                let mut scale: f64 = x_start.max(1.0);
                for t in 0..forcing.precip.len() {
                    balance += trace.in_flux[t][l][j]
                        - trace.out_flux[t][l][j]
                        - trace.loss_flux[t][l][j];
                    scale = scale.max(trace.states[t][l][j]);
                }
                prop_assert!(
                    (balance - x_end).abs() <= 1e-9 * scale.max(1.0),
                    "node {l}/{j}: budget {balance} vs state {x_end}"
                );
            }
        }
    }

    #[test]
    fn plain_and_taped_simulations_agree_bitwise(
        (spec, flat) in network_case(),
        forcing in forcing(15),
    ) {
        let params = network::unpack::<f64>(&spec, &flat).unwrap();
        let plain =
            network::simulate_q(&spec, &params, &forcing, &Default::default()).unwrap();

        let tape = Tape::new();
        let lifted: Vec<_> = flat.iter().map(|&p| tape.lift(p)).collect();
        let taped_params = network::unpack(&spec, &lifted).unwrap();
        let taped =
            network::simulate_q(&spec, &taped_params, &forcing, &Default::default()).unwrap();

        prop_assert_eq!(plain.len(), taped.len());
        for (a, b) in plain.iter().zip(&taped) {
            prop_assert_eq!(a.to_bits(), b.value().to_bits());
        }
    }

    #[test]
    fn split_partition_is_balanced_and_deterministic(
        flows in proptest::collection::vec(0.0..1000.0f64, 8..300),
    ) {
        let mask = split(&flows);
        prop_assert_eq!(mask.labels.len(), flows.len());
        let (train, test, select) = mask.counts();
        prop_assert_eq!(train + test + select, flows.len());
        // Half the record trains; the other half splits between testing and
        // selection, never more than one pair apart.
        let gap = (train as i64) - (test + select) as i64;
        prop_assert!(gap.abs() <= 2, "train {train} test {test} select {select}");
        let diff = (test as i64) - (select as i64);
        prop_assert!(diff.abs() <= 2);
        prop_assert!(train > 0 && test > 0 && select > 0);
        let again = split(&flows);
        prop_assert_eq!(mask.labels, again.labels);
    }

    #[test]
    fn paired_extremes_share_a_subset(
        flows in proptest::collection::vec(0.0..1000.0f64, 8..120),
    ) {
        let mask = split(&flows);
        // Ranks pair first-with-last, so the overall largest and smallest
        // flows always land in the same subset.
        let mut order: Vec<usize> = (0..flows.len()).collect();
        order.sort_by(|&a, &b| flows[b].total_cmp(&flows[a]).then(a.cmp(&b)));
        let largest = order[0];
        let smallest = order[flows.len() - 1];
        prop_assert_eq!(mask.labels[largest], mask.labels[smallest]);
        prop_assert_eq!(mask.labels[largest], SplitLabel::Train);
    }

    #[test]
    fn distribution_stats_are_monotone(
        values in proptest::collection::vec(-1e6..1e6f64, 1..200),
    ) {
        let s = DistStats::from_values(&values);
        prop_assert!(s.min <= s.p5);
        prop_assert!(s.p5 <= s.p25);
        prop_assert!(s.p25 <= s.median);
        prop_assert!(s.median <= s.p75);
        prop_assert!(s.p75 <= s.p95);
        prop_assert!(s.p95 <= s.max);
        let lo = values.iter().cloned().fold(f64::MAX, f64::min);
        let hi = values.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(s.min, lo);
        prop_assert_eq!(s.max, hi);
    }

    #[test]
    fn kge_components_follow_uniform_scaling(
        base in 0.1..50.0f64,
        step in 0.01..5.0f64,
        scale in 0.1..10.0f64,
        n in 10usize..100,
    ) {
        // A strictly increasing observation series is never degenerate.
        let obs: Vec<f64> = (0..n).map(|i| base + step * i as f64).collect();
        let perfect = kge_parts::<f64>(&obs, &obs).unwrap();
        prop_assert!((perfect.kge - 1.0).abs() <= 1e-12);
        prop_assert!((perfect.rho - 1.0).abs() <= 1e-12);

        let sim: Vec<f64> = obs.iter().map(|&o| scale * o).collect();
        let parts = kge_parts::<f64>(&sim, &obs).unwrap();
        prop_assert!((parts.rho - 1.0).abs() <= 1e-9, "rho {}", parts.rho);
        prop_assert!(
            (parts.alpha - scale).abs() <= 1e-9 * scale,
            "alpha {} scale {scale}",
            parts.alpha
        );
        prop_assert!(
            (parts.beta - scale).abs() <= 1e-9 * scale,
            "beta {} scale {scale}",
            parts.beta
        );
    }

    #[test]
    fn checkpoints_round_trip_value_exact(
        (spec, flat) in network_case(),
        seed in any::<u64>(),
    ) {
        let params = network::unpack::<f64>(&spec, &flat).unwrap();
        let ck = checkpoint::from_mcp(&spec, &params, "hash", seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        checkpoint::save(&path, &ck).unwrap();
        let loaded = checkpoint::load(&path).unwrap();
        prop_assert_eq!(&loaded, &ck);
        let (respec, back) = loaded.as_mcp().unwrap();
        prop_assert_eq!(&respec, &spec);
        let reflat = network::pack(&spec, &back).unwrap();
        prop_assert_eq!(flat.len(), reflat.len());
        for (a, b) in flat.iter().zip(&reflat) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn zero_forcing_keeps_everything_at_zero() {
    let spec = NetworkSpec::new(NetworkType::Ds, Sharing::Salo, vec![3]);
    let n = network::count_parameters(&spec);
    let flat = vec![0.5; n];
    let params = network::unpack::<f64>(&spec, &flat).unwrap();
    let forcing = Forcing {
        precip: vec![0.0; 30],
        pet: vec![4.0; 30],
    };
    let trace = network::simulate_trace(&spec, &params, &forcing, &Default::default()).unwrap();
    assert!(trace.q.iter().all(|&q| q == 0.0));
    assert!(trace
        .final_states
        .iter()
        .flatten()
        .all(|&x| x == 0.0));
}

#[test]
fn states_never_go_negative_under_heavy_demand() {
    let spec = NetworkSpec::new(NetworkType::Ds, Sharing::None, vec![2]);
    let n = network::count_parameters(&spec);
    let flat = vec![1.5; n];
    let params = network::unpack::<f64>(&spec, &flat).unwrap();
    let forcing = Forcing {
        precip: (0..60).map(|t| if t % 7 == 0 { 25.0 } else { 0.0 }).collect(),
        pet: vec![9.5; 60],
    };
    let trace = network::simulate_trace(&spec, &params, &forcing, &Default::default()).unwrap();
    for step in &trace.states {
        for layer in step {
            for &x in layer {
                assert!(x >= 0.0, "negative state {x}");
            }
        }
    }
    let _ = STATE_FLOOR;
}
