//! Independent references shared by the integration suites.

use std::collections::{BTreeSet, HashMap};

use fashionrec_core::catalog::{Catalog, Item, Outfit};
use fashionrec_core::history::FilterConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{item, outfit, raw_cosine, raw_feature, user, DIM};

#[derive(Debug, PartialEq)]
pub struct OracleOutcome {
    pub partial: Vec<String>,
    pub target: String,
    pub ranked: Vec<(String, f64)>,
}

/// Straight-line transcription over the raw records. Shares no code with the
/// library beyond the mock vectors themselves.
pub fn oracle(catalog: &Catalog, outfit_id: &str, user_id: &str, cfg: &FilterConfig) -> Option<OracleOutcome> {
    let items: HashMap<&str, &Item> = catalog.items().iter().map(|i| (i.id.as_str(), i)).collect();
    let outfits: HashMap<&str, &Outfit> = catalog.outfits().iter().map(|o| (o.id.as_str(), o)).collect();
    let o = outfits[outfit_id];
    let u = catalog.users().iter().find(|u| u.id == user_id).unwrap();
    let user_outfits: Vec<&Outfit> = u.outfit_ids.iter().map(|id| outfits[id.as_str()]).collect();

    // (P, t, H_c, U_c) per admitted target
    type Row = (Vec<String>, String, BTreeSet<String>, BTreeSet<String>);
    let mut r: Vec<Row> = Vec::new();
    for i in &o.item_ids {
        let p: Vec<String> = o.item_ids.iter().filter(|x| *x != i).cloned().collect();
        let c = &items[i.as_str()].category;
        let mut u_c = BTreeSet::new();
        for uo in &user_outfits {
            for m in &uo.item_ids {
                if items[m.as_str()].category == *c {
                    u_c.insert(m.clone());
                }
            }
        }
        let mut h_c = BTreeSet::new();
        for any in catalog.outfits() {
            if any.item_ids.iter().any(|m| p.contains(m)) {
                for m in &any.item_ids {
                    if !p.contains(m) && items[m.as_str()].category == *c {
                        h_c.insert(m.clone());
                    }
                }
            }
        }
        if u_c.len() >= cfg.min_user_history && h_c.len() >= cfg.min_compatible {
            r.push((p, i.clone(), h_c, u_c));
        }
    }
    if r.is_empty() {
        return None;
    }

    let mut best = 0;
    for n in 1..r.len() {
        let obj = |k: usize| cfg.alpha * r[k].2.len() as f64 + r[k].3.len() as f64;
        if obj(n) > obj(best) || (obj(n) == obj(best) && r[n].1 < r[best].1) {
            best = n;
        }
    }
    let (p, t, h_c, u_c) = &r[best];

    let mut counts = Vec::new();
    for j in h_c {
        let mut n = 0usize;
        for any in catalog.outfits() {
            if any.item_ids.contains(j) && any.item_ids.iter().any(|m| m != j && p.contains(m)) {
                n += 1;
            }
        }
        counts.push((j, n));
    }
    let total: usize = counts.iter().map(|c| c.1).sum();
    let mut profile = vec![0.0; DIM];
    for (j, n) in &counts {
        let w = *n as f64 / total as f64;
        for (acc, x) in profile.iter_mut().zip(raw_feature(items[j.as_str()], DIM)) {
            *acc += w * x;
        }
    }

    let interactions = |j: &str| user_outfits.iter().filter(|uo| uo.item_ids.iter().any(|m| m == j)).count();
    let max_count = u_c.iter().map(|j| interactions(j)).max().unwrap();
    let mut ranked: Vec<(String, f64)> = u_c
        .iter()
        .map(|j| {
            let sim = raw_cosine(&raw_feature(items[j.as_str()], DIM), &profile);
            let score = (cfg.beta * interactions(j) as f64 / max_count as f64 + 1.0) * sim;
            (j.clone(), score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.top_k);
    Some(OracleOutcome { partial: p.clone(), target: t.clone(), ranked })
}

pub fn draws(catalog: &Catalog, n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = &catalog.users()[rng.random_range(0..catalog.users().len())];
            // Half the draws use one of the user's own outfits so that the
            // thresholds are met often enough to exercise the scoring path.
            let o = if rng.random_bool(0.5) && !u.outfit_ids.is_empty() {
                u.outfit_ids[rng.random_range(0..u.outfit_ids.len())].clone()
            } else {
                catalog.outfits()[rng.random_range(0..catalog.outfits().len())].id.clone()
            };
            (o, u.id.clone())
        })
        .collect()
}


/// Target `t` (jeans) with partial `{p1, p2}`. `H_jeans` is `{t, j1, j2}` and
/// the user owns `n_history` distinct jeans.
pub fn boundary_catalog(n_history: usize, with_j2: bool) -> Catalog {
    let mut items = vec![
        item("p1", "top", &["black"]),
        item("p2", "shoes", &["white"]),
        item("t", "jeans", &["blue", "slim"]),
        item("j1", "jeans", &["black"]),
        item("j2", "jeans", &["grey"]),
    ];
    let mut outfits = vec![outfit("o-main", &["p1", "p2", "t"]), outfit("o-j1", &["p1", "j1"])];
    if with_j2 {
        outfits.push(outfit("o-j2", &["p2", "j2"]));
    }
    let mut owned = Vec::new();
    for k in 0..n_history {
        items.push(item(&format!("ut{k}"), "top", &["red"]));
        items.push(item(&format!("uj{k}"), "jeans", &["blue"]));
        outfits.push(outfit(&format!("u{k}"), &[&format!("ut{k}"), &format!("uj{k}")]));
        owned.push(format!("u{k}"));
    }
    let owned: Vec<&str> = owned.iter().map(String::as_str).collect();
    Catalog::from_records(items, outfits, vec![user("alice", &owned)]).unwrap()
}
