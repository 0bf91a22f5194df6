mod support;

use std::collections::BTreeSet;

use autocompose::composer::{quote_cost, synthesize_composites};
use autocompose::mining::generate_rules;
use autocompose::{Itemset, PriceCatalog, ServiceId};
use proptest::prelude::*;
use support::oracle::{self, Instance};

fn instances() -> impl Strategy<Value = Instance> {
    (
        1u32..=7,
        1usize..=25,
        10u32..=70,
        prop::sample::select(vec![0.3, 0.6, 0.9]),
    )
        .prop_flat_map(|(universe, n, sup, conf)| {
            let row = prop::collection::btree_set(1..=universe, 0..=universe as usize);
            prop::collection::vec(row, n).prop_map(move |rows| Instance {
                universe,
                rows: rows
                    .into_iter()
                    .map(|r| Itemset::from_indices(r).unwrap())
                    .collect(),
                support_percent: sup as f64,
                min_confidence: conf,
            })
        })
}

fn registered() -> impl Strategy<Value = BTreeSet<Itemset>> {
    prop::collection::btree_set(
        prop::collection::btree_set(1u32..=7, 2..=4)
            .prop_map(|s| Itemset::from_indices(s).unwrap()),
        0..3,
    )
}

proptest! {
    #[test]
    fn composites_are_maximal_and_backed_by_rules(inst in instances(), reg in registered()) {
        let table = inst.mine();
        let rules = generate_rules(&table, &inst.config());
        let composites = synthesize_composites(&rules, &table, &reg);

        let truth = oracle::mine(inst.universe, &inst.rows, inst.support_percent);
        let qualifying: BTreeSet<Itemset> = truth
            .rules(inst.min_confidence)
            .into_iter()
            .map(|(a, c, _, _)| a.union(&c))
            .collect();
        let want: Vec<Itemset> = truth
            .maximal()
            .into_iter()
            .filter(|m| m.len() >= 2 && qualifying.contains(m))
            .filter(|m| !reg.iter().any(|r| m.is_subset_of(r)))
            .collect();
        let mut got: Vec<Itemset> = composites.iter().map(|c| c.itemset.clone()).collect();
        got.sort();
        prop_assert_eq!(&got, &want);

        for c in &composites {
            prop_assert_eq!(&c.service_id, &ServiceId::composite(&c.itemset));
            prop_assert!(!c.source_rules.is_empty());
            for r in &c.source_rules {
                prop_assert_eq!(r.itemset(), c.itemset.clone());
                prop_assert!(r.confidence >= inst.min_confidence);
            }
            for other in got.iter().chain(reg.iter()) {
                prop_assert!(!(c.itemset.is_subset_of(other) && &c.itemset != other));
            }
        }
    }

    #[test]
    fn quotes_are_additive(
        prices in prop::collection::vec(0u64..1_000_000, 8),
        a in prop::collection::btree_set(1u32..=8, 0..=8),
        b in prop::collection::btree_set(1u32..=8, 0..=8),
    ) {
        let catalog = prices
            .iter()
            .enumerate()
            .fold(PriceCatalog::new(), |c, (i, &p)| c.with_item(i as u32 + 1, "x", p));
        let a = Itemset::from_indices(a).unwrap();
        let b = Itemset::from_indices(b).unwrap().difference(&a);
        let whole = quote_cost(&a.union(&b), &catalog).unwrap();
        prop_assert_eq!(whole, quote_cost(&a, &catalog).unwrap() + quote_cost(&b, &catalog).unwrap());
    }

    #[test]
    fn service_ids_depend_only_on_the_set(v in prop::collection::vec(1u32..=30, 1..8)) {
        let mut shuffled = v.clone();
        shuffled.reverse();
        shuffled.extend(v.iter().copied());
        let a = Itemset::from_indices(v).unwrap();
        let b = Itemset::from_indices(shuffled).unwrap();
        prop_assert_eq!(ServiceId::composite(&a), ServiceId::composite(&b));
        let parsed: Itemset = ServiceId::composite(&a).as_str()[2..].replace('-', ",").parse().unwrap();
        prop_assert_eq!(parsed, a);
    }
}

#[test]
fn reference_composites_are_the_four_triples() {
    let inst = Instance {
        universe: 6,
        rows: oracle::reference_rows(),
        support_percent: 40.0,
        min_confidence: 0.6,
    };
    let table = inst.mine();
    let rules = generate_rules(&table, &inst.config());
    let ids: Vec<String> = synthesize_composites(&rules, &table, &BTreeSet::new())
        .iter()
        .map(|c| c.service_id.to_string())
        .collect();
    assert_eq!(ids, ["c-1-2-3", "c-1-3-4", "c-2-3-4", "c-2-3-6"]);
}

#[test]
fn unpriced_items_are_reported() {
    let catalog = PriceCatalog::new().with_item(1, "a", 5);
    assert!(quote_cost(&Itemset::from_indices([1, 2]).unwrap(), &catalog).is_err());
}
