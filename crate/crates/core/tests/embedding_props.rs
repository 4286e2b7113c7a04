use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use fashionrec_core::catalog::Item;
use fashionrec_core::embedding::{
    average_feature, cosine, item_feature, mock_embed, CachedEmbedder, EmbedKind, Embedder, Embedding,
    EmbeddingError, MockEmbedder, RemoteEmbedder,
};
use proptest::prelude::*;

/// Serves `responses` in order, one connection each, and counts requests.
fn stub_server(responses: Vec<String>) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for body in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (addr, hits)
}

fn vector_body(dim: usize) -> String {
    let values: Vec<f64> = (0..dim).map(|d| d as f64 + 1.0).collect();
    serde_json::json!({ "dim": dim, "values": values }).to_string()
}

#[test]
fn remote_dimension_mismatch_is_reported() {
    let (url, _) = stub_server(vec![vector_body(384)]);
    let remote = RemoteEmbedder::new(&url, 512);
    match remote.embed_text("black jeans") {
        Err(EmbeddingError::DimensionMismatch { expected: 512, actual: 384 }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn remote_success_and_cache_hit() {
    let (url, hits) = stub_server(vec![vector_body(4)]);
    let cached = CachedEmbedder::in_memory(RemoteEmbedder::new(&url, 4));
    let a = cached.embed_text("black jeans").unwrap();
    let b = cached.embed_text("black jeans").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.values(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn remote_unreachable_is_an_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let remote = RemoteEmbedder::new(&format!("http://127.0.0.1:{port}"), 8);
    assert!(matches!(remote.embed_text("x"), Err(EmbeddingError::Unreachable { .. })));
}

#[test]
fn mock_is_deterministic_and_separates_strings() {
    let m = MockEmbedder::new(64).unwrap();
    assert_eq!(m.embed_text("black slim jeans").unwrap(), m.embed_text("black slim jeans").unwrap());
    let fixtures = ["black slim jeans", "white canvas sneakers", "navy wool coat", "red silk scarf"];
    for a in fixtures {
        for b in fixtures {
            if a != b {
                let c = cosine(&m.embed_text(a).unwrap(), &m.embed_text(b).unwrap()).unwrap();
                assert!(c < 1.0);
            }
        }
    }
    let img = m.embed_image("images/top-001.png").unwrap();
    let txt = m.embed_text("white relaxed plain cotton top").unwrap();
    let c = cosine(&img, &txt).unwrap();
    assert!(c > -1.0 && c < 1.0);
    assert_eq!(m.embed_image("images/top-001.png").unwrap(), img);
}

#[test]
fn empty_input_is_rejected() {
    let m = MockEmbedder::new(8).unwrap();
    assert!(matches!(m.embed_text(""), Err(EmbeddingError::EmptyInput)));
    assert!(matches!(m.embed_image("  "), Err(EmbeddingError::EmptyInput)));
}

#[test]
fn item_feature_equals_mean_of_separate_fetches() {
    let m = MockEmbedder::new(16).unwrap();
    let item = Item {
        id: "x".into(),
        category: "bag".into(),
        description: "tan leather tote bag".into(),
        image_ref: "images/x.png".into(),
        attributes: vec![],
    };
    let f = item_feature(&m, &item).unwrap();
    let v = m.embed(EmbedKind::Image, &item.image_ref).unwrap();
    let t = m.embed(EmbedKind::Text, &item.description).unwrap();
    for d in 0..16 {
        assert!((f.values()[d] - (v.values()[d] + t.values()[d]) / 2.0).abs() < 1e-15);
    }
    let same = average_feature(&v, &v).unwrap();
    assert_eq!(same, v);
}

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_scale_invariant(a in vec_strategy(6), b in vec_strategy(6), lambda in 0.01f64..100.0) {
        let (ea, eb) = (Embedding::new(a).unwrap(), Embedding::new(b).unwrap());
        let ab = cosine(&ea, &eb).unwrap();
        prop_assert_eq!(ab, cosine(&eb, &ea).unwrap());
        prop_assert!((cosine(&ea.scaled(lambda), &eb).unwrap() - ab).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn average_feature_is_commutative(a in vec_strategy(5), b in vec_strategy(5)) {
        let (ea, eb) = (Embedding::new(a).unwrap(), Embedding::new(b).unwrap());
        prop_assert_eq!(average_feature(&ea, &eb).unwrap(), average_feature(&eb, &ea).unwrap());
    }

    #[test]
    fn mock_is_unit_norm_and_pure(seed in ".{0,40}", dim in 2usize..300) {
        let v = mock_embed(&seed, dim);
        prop_assert_eq!(v.dim(), dim);
        prop_assert!((v.norm() - 1.0).abs() < 1e-9);
        prop_assert_eq!(v, mock_embed(&seed, dim));
    }
}
