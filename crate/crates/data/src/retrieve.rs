//! Nearest-neighbour lookup over asset embeddings with an aspect-ratio gate.

use serde::{Deserialize, Serialize};

use crate::asset::{cosine, LayerAsset, LayerDatabase};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_AR_TOL: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub similarity: f64,
}

/// Whether two aspect ratios are within a factor `tol` of each other.
pub fn aspect_compatible(a: f64, b: f64, tol: f64) -> bool {
    (a / b).max(b / a) <= tol
}

/// Top `k` assets by cosine similarity to `query`, excluding the query's own
/// id and anything whose aspect ratio differs by more than a factor `ar_tol`.
/// Ties break by id so the order is total.
pub fn retrieve(query: &LayerAsset, db: &LayerDatabase, k: usize, ar_tol: f64) -> Vec<Hit> {
    let mut hits: Vec<Hit> = db
        .assets()
        .iter()
        .filter(|a| a.id != query.id && aspect_compatible(query.aspect_ratio, a.aspect_ratio, ar_tol))
        .map(|a| Hit {
            id: a.id.clone(),
            similarity: cosine(&query.embedding, &a.embedding),
        })
        .collect();
    hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then_with(|| a.id.cmp(&b.id)));
    hits.truncate(k);
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset::{DownsampleEmbedder, Style};
    use image::{Rgba, RgbaImage};

    fn asset(id: &str, color: [u8; 4], w: u32, h: u32) -> LayerAsset {
        LayerAsset::new(id, RgbaImage::from_pixel(w, h, Rgba(color)), "", Style::None, &DownsampleEmbedder).unwrap()
    }

    #[test]
    fn duplicate_ranks_first() {
        let q = asset("q", [200, 10, 10, 255], 10, 10);
        let mut db = LayerDatabase::new();
        db.insert(asset("q", [200, 10, 10, 255], 10, 10)).unwrap();
        db.insert(asset("other", [10, 200, 10, 255], 10, 10)).unwrap();
        db.insert(asset("dup", [200, 10, 10, 255], 10, 10)).unwrap();
        let hits = retrieve(&q, &db, 10, 1.5);
        assert_eq!(hits[0].id, "dup");
        assert!((hits[0].similarity - 1.0).abs() < 1e-12);
        assert!(hits.iter().all(|h| h.id != "q"));
    }

    #[test]
    fn aspect_gate_can_empty_result() {
        let q = asset("q", [1, 1, 1, 255], 10, 10);
        let mut db = LayerDatabase::new();
        db.insert(asset("wide", [1, 1, 1, 255], 20, 10)).unwrap();
        db.insert(asset("tall", [1, 1, 1, 255], 10, 20)).unwrap();
        assert!(retrieve(&q, &db, 10, 1.5).is_empty());
        assert_eq!(retrieve(&q, &db, 10, 2.0).len(), 2);
        assert!(retrieve(&q, &LayerDatabase::new(), 10, 1.5).is_empty());
    }

    #[test]
    fn truncates_to_k() {
        let q = asset("q", [1, 1, 1, 255], 4, 4);
        let mut db = LayerDatabase::new();
        for i in 0..15u8 {
            db.insert(asset(&format!("a{i}"), [i * 10, 0, 0, 255], 4, 4)).unwrap();
        }
        let hits = retrieve(&q, &db, 10, 1.5);
        assert_eq!(hits.len(), 10);
        assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }
}
