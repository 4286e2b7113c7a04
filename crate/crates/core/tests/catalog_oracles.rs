mod common;

use std::collections::BTreeSet;

use fashionrec_core::catalog::{Catalog, CatalogError};
use fashionrec_core::embedding::{item_feature, mock_embed, Embedding, MockEmbedder};
use fashionrec_core::synth::{self, SynthConfig};
use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{features, fixture, fixture_with, raw_cosine, raw_feature, DIM};

#[test]
fn stats_match_one_pass_recount() {
    let corpus = synth::generate(&SynthConfig { n_outfits: 200, ..SynthConfig::default() });
    let (mut members, mut links) = (0usize, 0usize);
    for o in &corpus.outfits {
        members += o.item_ids.len();
    }
    for u in &corpus.users {
        links += u.outfit_ids.len();
    }
    let want_ipo = members as f64 / corpus.outfits.len() as f64;
    let want_opu = links as f64 / corpus.users.len() as f64;
    let n_items = corpus.items.len();
    let stats = corpus.into_catalog().unwrap().stats();
    assert_eq!((stats.n_items, stats.n_outfits, stats.n_users), (n_items, 200, 36));
    assert!((stats.items_per_outfit - want_ipo).abs() < 1e-9);
    assert!((stats.outfits_per_user - want_opu).abs() < 1e-9);
}

#[test]
fn ingest_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth::generate(&SynthConfig { n_outfits: 60, n_users: 5, ..SynthConfig::default() });
    corpus.write(dir.path()).unwrap();
    let catalog = Catalog::open_dir(dir.path()).unwrap();
    assert_eq!(catalog.items(), corpus.items.as_slice());
    assert_eq!(catalog.outfits(), corpus.outfits.as_slice());
    assert_eq!(catalog.users(), corpus.users.as_slice());
    assert!(catalog.resolve_path(&catalog.items()[0].image_ref).exists());
}

#[test]
fn interaction_counts_match_nested_loops() {
    let catalog = fixture();
    for u in catalog.users() {
        for item in catalog.items().iter().step_by(5) {
            let mut want = 0;
            for oid in &u.outfit_ids {
                for o in catalog.outfits() {
                    if o.id == *oid && o.item_ids.contains(&item.id) {
                        want += 1;
                    }
                }
            }
            assert_eq!(catalog.item_interaction_count(&u.id, &item.id).unwrap(), want);
        }
    }
}

#[test]
fn cooccurrence_matches_pair_scan_on_100_outfits() {
    let catalog = fixture_with(SynthConfig { n_outfits: 100, ..SynthConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ids: Vec<&str> = catalog.items().iter().map(|i| i.id.as_str()).collect();
    for _ in 0..300 {
        let j = *ids.choose(&mut rng).unwrap();
        let p: Vec<&str> = (0..rng.random_range(1..4)).map(|_| *ids.choose(&mut rng).unwrap()).collect();
        let mut want = 0;
        for o in catalog.outfits() {
            let has_j = o.item_ids.iter().any(|m| m == j);
            let has_other = o.item_ids.iter().any(|m| m != j && p.contains(&m.as_str()));
            if has_j && has_other {
                want += 1;
            }
        }
        assert_eq!(catalog.cooccurrence_count(j, &p).unwrap(), want, "{j} {p:?}");
    }
}

#[test]
fn category_sets_match_exhaustive_filters() {
    let catalog = fixture();
    for (n, o) in catalog.outfits().iter().enumerate().step_by(7) {
        let p = &o.item_ids[1..];
        for c in catalog.categories() {
            let want: BTreeSet<String> = catalog
                .items()
                .iter()
                .filter(|j| j.category == c && !p.contains(&j.id))
                .filter(|j| catalog.cooccurrence_count(&j.id, p).unwrap() > 0)
                .map(|j| j.id.clone())
                .collect();
            assert_eq!(catalog.items_cooccurring_in_category(p, c).unwrap(), want);

            let u = &catalog.users()[n % catalog.users().len()];
            let mut want = BTreeSet::new();
            for oid in &u.outfit_ids {
                for m in &catalog.outfit(oid).unwrap().item_ids {
                    if catalog.item(m).unwrap().category == c {
                        want.insert(m.clone());
                    }
                }
            }
            assert_eq!(catalog.user_items_in_category(&u.id, c).unwrap(), want);
        }
    }
}

#[test]
fn nearest_items_match_full_scan_sort() {
    let catalog = fixture_with(SynthConfig { items_per_category: 7, n_outfits: 30, n_users: 3, ..SynthConfig::default() });
    assert!(catalog.items().len() >= 50);
    let fs = features(DIM);
    let query = mock_embed("a linen summer look", DIM);
    let mut want: Vec<(String, f64)> = catalog
        .items()
        .iter()
        .map(|i| (i.id.clone(), raw_cosine(query.values(), &raw_feature(i, DIM))))
        .collect();
    want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in [1, 5, 56, 500] {
        let got = catalog.nearest_items(&fs, &query, None, k).unwrap();
        let seq = catalog.nearest_items_sequential(&fs, &query, None, k).unwrap();
        assert_eq!(got, seq);
        assert_eq!(got.len(), k.min(want.len()));
        for (g, w) in got.iter().zip(&want) {
            assert_eq!(g.id, w.0);
            assert!((g.similarity - w.1).abs() < 1e-12);
        }
    }
    let shoes = catalog.nearest_items(&fs, &query, Some("shoes"), 3).unwrap();
    assert!(shoes.iter().all(|n| catalog.category_of(&n.id).unwrap() == "shoes"));
}

#[test]
fn nearest_items_finds_exact_feature_first() {
    let catalog = fixture();
    let fs = features(DIM);
    let target = &catalog.items()[17];
    let q = item_feature(&MockEmbedder::new(DIM).unwrap(), target).unwrap();
    let got = catalog.nearest_items(&fs, &q, None, 3).unwrap();
    assert_eq!(got[0].id, target.id);
    assert!((got[0].similarity - 1.0).abs() < 1e-12);

    let wrong = Embedding::new(vec![1.0; DIM + 1]).unwrap();
    assert!(matches!(
        catalog.nearest_items(&fs, &wrong, None, 3),
        Err(CatalogError::Embedding(_))
    ));
}

fn shared() -> &'static Catalog {
    use std::sync::OnceLock;
    static CATALOG: OnceLock<Catalog> = OnceLock::new();
    CATALOG.get_or_init(fixture)
}

proptest! {
    #[test]
    fn cooccurrence_is_monotone_in_partial(j in 0usize..224, p in prop::collection::btree_set(0usize..224, 1..4), extra in prop::collection::btree_set(0usize..224, 0..4)) {
        let catalog = shared();
        let id = |n: usize| catalog.items()[n].id.clone();
        let small: Vec<String> = p.iter().map(|&n| id(n)).collect();
        let big: Vec<String> = p.union(&extra).map(|&n| id(n)).collect();
        prop_assert!(catalog.cooccurrence_count(&id(j), &small).unwrap() <= catalog.cooccurrence_count(&id(j), &big).unwrap());
    }

    #[test]
    fn nearest_order_is_total(seed in "[a-z ]{1,20}", k in 1usize..30) {
        let catalog = shared();
        let fs = features(8);
        let got = catalog.nearest_items(&fs, &mock_embed(&seed, 8), None, k).unwrap();
        for w in got.windows(2) {
            prop_assert!(w[0].similarity > w[1].similarity || (w[0].similarity == w[1].similarity && w[0].id < w[1].id));
        }
    }

    #[test]
    fn referential_integrity_after_ingest(seed in 0u64..50) {
        let catalog = fixture_with(SynthConfig { seed, n_outfits: 40, n_users: 6, ..SynthConfig::default() });
        for o in catalog.outfits() {
            prop_assert!(o.item_ids.iter().all(|i| catalog.item(i).is_ok()));
        }
        for u in catalog.users() {
            prop_assert!(u.outfit_ids.iter().all(|o| catalog.outfit(o).is_ok()));
        }
    }
}
