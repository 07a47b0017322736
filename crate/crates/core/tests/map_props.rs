mod common;

use common::{directed_cycles, perturbed, random_map, residual};
use guide_core::map::{parse_map, serialize_map, Heading, DEFAULT_GEOMETRY_TOLERANCE};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn serialize_then_parse_is_identity(seed in any::<u64>()) {
        let map = random_map(seed, 10);
        let text = serialize_map(&map);
        let back = parse_map(&text).unwrap();
        prop_assert_eq!(&back, &map);
        prop_assert_eq!(serialize_map(&back), text);
    }

    #[test]
    fn generated_maps_are_consistent(seed in any::<u64>()) {
        let map = random_map(seed, 10);
        prop_assert!(map.validate_geometry(DEFAULT_GEOMETRY_TOLERANCE).is_empty());
        for e in map.edges() {
            prop_assert!(Heading::ALL.contains(&e.direction));
            if let Some(r) = map.edge(&e.to, &e.from) {
                prop_assert_eq!(r.direction, e.direction.reverse());
                prop_assert_eq!(r.distance, e.distance);
            }
        }
    }

    #[test]
    fn cycles_close(seed in any::<u64>()) {
        let map = random_map(seed, 8);
        for cycle in directed_cycles(&map) {
            let (mut x, mut y, mut total) = (0.0, 0.0, 0.0);
            for (i, from) in cycle.iter().enumerate() {
                let to = &cycle[(i + 1) % cycle.len()];
                let e = map.edge(from, to).unwrap();
                let (c, s) = e.direction.unit();
                x += e.distance * c;
                y += e.distance * s;
                total += e.distance;
            }
            prop_assert!((x * x + y * y).sqrt() <= DEFAULT_GEOMETRY_TOLERANCE * total);
        }
    }

    #[test]
    fn every_single_edge_perturbation_is_flagged(seed in any::<u64>(), pick in any::<prop::sample::Index>(), mutate_direction in any::<bool>(), delta in 1u32..8) {
        let map = random_map(seed, 10);
        prop_assume!(map.edge_count() > 0);
        let edges: Vec<_> = map.edges().cloned().collect();
        let target = pick.get(&edges).clone();
        let mutated = if mutate_direction {
            perturbed(&map, &target, 0.0, delta as i32 % 3 + 1)
        } else {
            perturbed(&map, &target, delta as f64 * 0.25, 0)
        };
        let violations = mutated.validate_geometry(DEFAULT_GEOMETRY_TOLERANCE);
        prop_assert_eq!(violations.len(), 1);
        prop_assert_eq!(&violations[0].from, &target.from);
        let e = mutated.edge(&target.from, &target.to).unwrap();
        prop_assert!((violations[0].residual - residual(&mutated, e)).abs() < 1e-9);
    }
}

#[test]
fn residual_of_the_worked_example() {
    let map = parse_map("MAP v1\nNODE A 0 0\nNODE B 4 0\nEDGE A B dist=5 dir=0\n").unwrap();
    let v = map.validate_geometry(DEFAULT_GEOMETRY_TOLERANCE);
    assert_eq!(v.len(), 1);
    assert!((v[0].residual - 1.0).abs() < 1e-12);
}
