//! Seeded synthetic catalog used by tests, benches and the demo pipeline.
//!
//! Outfits always hold a top, a bottom and shoes, plus optional extras.
//! Item choice is skewed towards low indices so popular items co-occur, and a
//! share of outfits are remixes of an earlier outfit with one item swapped
//! for a same-category alternative.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{self, Catalog, CatalogError, Item, Outfit, UserRecord};

const COLORS: &[(&str, [u8; 3])] = &[
    ("black", [20, 20, 20]),
    ("white", [240, 240, 236]),
    ("navy", [25, 35, 80]),
    ("beige", [215, 195, 160]),
    ("red", [190, 30, 40]),
    ("olive", [110, 115, 50]),
    ("grey", [128, 128, 128]),
    ("pink", [235, 160, 185]),
    ("brown", [110, 70, 40]),
    ("cream", [250, 240, 215]),
];
const MATERIALS: &[&str] = &["cotton", "denim", "leather", "wool", "linen", "silk", "suede", "knit"];
const FITS: &[&str] = &["slim", "relaxed", "oversized", "cropped", "tailored", "straight"];
const DESIGNS: &[&str] = &[
    "ribbed", "striped", "plain", "pleated", "quilted", "embroidered", "distressed", "floral",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_outfits: usize,
    pub n_users: usize,
    pub items_per_category: usize,
    /// Probability that an outfit remixes an earlier one.
    pub remix_rate: f64,
    pub min_history: usize,
    pub max_history: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_outfits: 240,
            n_users: 36,
            items_per_category: 28,
            remix_rate: 0.25,
            min_history: 4,
            max_history: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub items: Vec<Item>,
    pub outfits: Vec<Outfit>,
    pub users: Vec<UserRecord>,
}

fn skewed_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = rng.random();
    ((u * u) * n as f64) as usize
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let categories = ["top", "jeans", "skirt", "shoes", "bag", "jacket", "hat", "earrings"];

    let mut items = Vec::new();
    let mut by_category: Vec<Vec<usize>> = Vec::new();
    for cat in categories {
        let mut idx = Vec::new();
        for n in 0..config.items_per_category {
            let (color, _) = *COLORS.choose(&mut rng).expect("non-empty");
            let material = *MATERIALS.choose(&mut rng).expect("non-empty");
            let fit = *FITS.choose(&mut rng).expect("non-empty");
            let design = *DESIGNS.choose(&mut rng).expect("non-empty");
            let id = format!("{cat}-{n:03}");
            idx.push(items.len());
            items.push(Item {
                description: format!("{color} {fit} {design} {material} {cat}"),
                image_ref: format!("images/{id}.png"),
                attributes: vec![color.into(), fit.into(), design.into(), material.into()],
                category: cat.into(),
                id,
            });
        }
        by_category.push(idx);
    }
    let cat_pos = |c: &str| categories.iter().position(|x| *x == c).expect("known category");
    let pick = |rng: &mut ChaCha8Rng, c: &str| by_category[cat_pos(c)][skewed_index(rng, by_category[cat_pos(c)].len())];

    let mut outfits: Vec<Outfit> = Vec::with_capacity(config.n_outfits);
    for n in 0..config.n_outfits {
        let id = format!("outfit-{n:04}");
        if !outfits.is_empty() && rng.random_bool(config.remix_rate) {
            let base = outfits[rng.random_range(0..outfits.len())].item_ids.clone();
            let slot = rng.random_range(0..base.len());
            let cat = items
                .iter()
                .find(|i| i.id == base[slot])
                .map(|i| i.category.clone())
                .expect("base items exist");
            let pool = &by_category[cat_pos(&cat)];
            let mut remixed = base.clone();
            remixed[slot] = loop {
                let candidate = &items[pool[rng.random_range(0..pool.len())]].id;
                if *candidate != base[slot] {
                    break candidate.clone();
                }
            };
            outfits.push(Outfit { id, item_ids: remixed });
            continue;
        }
        let mut members = vec![pick(&mut rng, "top")];
        let bottom = if rng.random_bool(0.6) { "jeans" } else { "skirt" };
        members.push(pick(&mut rng, bottom));
        members.push(pick(&mut rng, "shoes"));
        for (cat, p) in [("bag", 0.6), ("jacket", 0.4), ("hat", 0.2), ("earrings", 0.15)] {
            if rng.random_bool(p) {
                members.push(pick(&mut rng, cat));
            }
        }
        outfits.push(Outfit {
            id,
            item_ids: members.into_iter().map(|i| items[i].id.clone()).collect(),
        });
    }

    let users = (0..config.n_users)
        .map(|n| {
            let len = rng
                .random_range(config.min_history..=config.max_history)
                .min(outfits.len());
            let mut picked = index::sample(&mut rng, outfits.len(), len).into_vec();
            picked.sort_unstable();
            UserRecord {
                id: format!("user-{n:03}"),
                outfit_ids: picked.into_iter().map(|i| outfits[i].id.clone()).collect(),
            }
        })
        .collect();

    SynthCorpus { items, outfits, users }
}

impl SynthCorpus {
    pub fn into_catalog(self) -> Result<Catalog, CatalogError> {
        Catalog::from_records(self.items, self.outfits, self.users)
    }

    /// Writes the three JSONL files and a small PNG swatch per item.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir.join("images"))?;
        catalog::write_jsonl(&dir.join(catalog::ITEMS_FILE), &self.items)?;
        catalog::write_jsonl(&dir.join(catalog::OUTFITS_FILE), &self.outfits)?;
        catalog::write_jsonl(&dir.join(catalog::USERS_FILE), &self.users)?;
        for item in &self.items {
            swatch(item)
                .save(dir.join(&item.image_ref))
                .map_err(std::io::Error::other)?;
        }
        Ok(())
    }
}

/// 32x32 swatch: the item's color with a stripe band keyed by its design.
fn swatch(item: &Item) -> RgbImage {
    let base = item
        .attributes
        .first()
        .and_then(|c| COLORS.iter().find(|(name, _)| name == c))
        .map_or([128, 128, 128], |(_, rgb)| *rgb);
    let band = item
        .attributes
        .get(2)
        .and_then(|d| DESIGNS.iter().position(|x| x == d))
        .unwrap_or(0) as u32;
    let accent = base.map(|c| c.wrapping_add(64));
    // id mark in the bottom row so no two swatches share bytes
    let mark = crate::embedding::fnv1a64(item.id.as_bytes()).to_le_bytes();
    RgbImage::from_fn(32, 32, |x, y| {
        if y == 31 && x < 8 {
            let v = mark[x as usize];
            Rgb([v, v.rotate_left(3), v.rotate_left(5)])
        } else if (y / 4) % 8 == band || !(2..=29).contains(&x) {
            Rgb(accent)
        } else {
            Rgb(base)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::default();
        assert_eq!(generate(&cfg), generate(&cfg));
        let other = SynthConfig { seed: 7, ..cfg.clone() };
        assert_ne!(generate(&cfg).outfits, generate(&other).outfits);
    }

    #[test]
    fn corpus_is_a_valid_catalog() {
        let corpus = generate(&SynthConfig::default());
        let c = corpus.into_catalog().unwrap();
        let s = c.stats();
        assert_eq!((s.n_outfits, s.n_users), (240, 36));
        assert!(s.items_per_outfit >= 3.0);
    }

    #[test]
    fn swatches_differ_per_item() {
        let corpus = generate(&SynthConfig::default());
        let raws: std::collections::HashSet<Vec<u8>> = corpus.items.iter().map(|i| swatch(i).into_raw()).collect();
        assert_eq!(raws.len(), corpus.items.len());
    }
}
