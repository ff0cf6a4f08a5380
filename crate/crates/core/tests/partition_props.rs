use equifl_core::{dirichlet_partition, dirichlet_partition_indices, PartitionSpec, Record};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = PartitionSpec> {
    (proptest::collection::vec(0.05f64..20.0, 1..=7), any::<u64>())
        .prop_map(|(a, s)| PartitionSpec::new(a, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_conserves_rows_and_values(
        groups in proptest::collection::vec(0usize..3, 1..400),
        spec in spec_strategy(),
    ) {
        let part = dirichlet_partition_indices(&groups, &spec).unwrap();
        prop_assert_eq!(part.clients.len(), spec.num_clients());
        let mut all: Vec<usize> = part.clients.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..groups.len()).collect::<Vec<_>>());
        for v in 0..3 {
            let expected = groups.iter().filter(|&&g| g == v).count();
            let got: usize = part.clients.iter().map(|c| c.iter().filter(|&&r| groups[r] == v).count()).sum();
            prop_assert_eq!(got, expected);
        }
        for p in &part.proportions {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn partition_is_deterministic(groups in proptest::collection::vec(0usize..2, 1..200), spec in spec_strategy()) {
        let recs: Vec<Record> = groups.iter().enumerate()
            .map(|(i, &g)| Record { features: vec![i as f64], sensitive: g, label: i % 2 == 0 })
            .collect();
        prop_assert_eq!(dirichlet_partition(&recs, &spec).unwrap(), dirichlet_partition(&recs, &spec).unwrap());
    }
}
