#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use fashionrec_core::catalog::{Catalog, FeatureStore, Item, Outfit, UserRecord};
use fashionrec_core::embedding::{mock_embed, MockEmbedder};
use fashionrec_core::synth::{self, SynthConfig};

pub const DIM: usize = 32;

pub fn fixture() -> Catalog {
    synth::generate(&SynthConfig::default()).into_catalog().unwrap()
}

pub fn fixture_with(config: SynthConfig) -> Catalog {
    synth::generate(&config).into_catalog().unwrap()
}

pub fn features(dim: usize) -> FeatureStore {
    FeatureStore::new(Arc::new(MockEmbedder::new(dim).unwrap()))
}

/// `(e_v + e_t) / 2` from raw mock vectors, bypassing the embedder stack.
pub fn raw_feature(item: &Item, dim: usize) -> Vec<f64> {
    let v = mock_embed(&item.image_ref, dim);
    let t = mock_embed(&item.description, dim);
    v.values()
        .iter()
        .zip(t.values())
        .map(|(a, b)| (a + b) / 2.0)
        .collect()
}

pub fn raw_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

pub fn item(id: &str, category: &str, attrs: &[&str]) -> Item {
    Item {
        id: id.into(),
        category: category.into(),
        description: format!("{} {category} number {id}", attrs.join(" ")),
        image_ref: format!("images/{id}.png"),
        attributes: attrs.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn outfit(id: &str, items: &[&str]) -> Outfit {
    Outfit {
        id: id.into(),
        item_ids: items.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn user(id: &str, outfits: &[&str]) -> UserRecord {
    UserRecord {
        id: id.into(),
        outfit_ids: outfits.iter().map(|s| s.to_string()).collect(),
    }
}
