#![allow(dead_code)]

use dms_core::clustering::FeatureScaling;
use dms_core::datastore::{Label, NewRecord};
use dms_core::embedding::{EmbeddingVector, RawSample};
use dms_service::api::{IngestRequest, Samples};
use dms_service::{Service, ServiceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CENTERS: [[f32; 2]; 3] = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];

pub fn config() -> ServiceConfig {
    ServiceConfig {
        output_dim: 2,
        k_min: 2,
        k_max: 6,
        restarts: 2,
        scaling: FeatureScaling::Unit,
        pseudo_label_threshold: Some(1.0),
        auto_update: false,
        ..ServiceConfig::default()
    }
}

/// Points scattered within ±0.5 of each centre, `per` per centre.
pub fn blob_points(seed: u64, per: usize) -> Vec<(usize, [f32; 2])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..per * CENTERS.len())
        .map(|i| {
            let c = i % CENTERS.len();
            let p = [
                CENTERS[c][0] + rng.random_range(-0.5..0.5),
                CENTERS[c][1] + rng.random_range(-0.5..0.5),
            ];
            (c, p)
        })
        .collect()
}

pub fn embedding_records(seed: u64, per: usize, source: &str) -> Vec<NewRecord> {
    blob_points(seed, per)
        .into_iter()
        .enumerate()
        .map(|(i, (c, p))| NewRecord {
            sample_id: format!("{source}-{i:05}"),
            embedding: Some(EmbeddingVector::new(p.to_vec()).unwrap()),
            label: Label::new("blob", vec![c as u8]),
            source: source.into(),
            raw: None,
        })
        .collect()
}

/// Vectors near the centres, for in-distribution queries.
pub fn embedding_samples(seed: u64, per: usize) -> Samples {
    let points = blob_points(seed, per);
    Samples::Embeddings {
        ids: (0..points.len()).map(|i| format!("q{i}")).collect(),
        vectors: points.into_iter().map(|(_, p)| EmbeddingVector::new(p.to_vec()).unwrap()).collect(),
    }
}

/// Vectors near the circumcentre of the three centres, where no cluster owns them.
pub fn drifted_samples(n: usize) -> Samples {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let c = 5.0;
    Samples::Embeddings {
        ids: Vec::new(),
        vectors: (0..n)
            .map(|_| EmbeddingVector::new(vec![c + rng.random_range(-0.05..0.05), c + rng.random_range(-0.05..0.05)]).unwrap())
            .collect(),
    }
}

/// Raw 3-value samples: blob `c` is high in feature `c`.
pub fn raw_samples(seed: u64, per: usize, source: &str) -> Vec<(usize, RawSample)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..per * 3)
        .map(|i| {
            let c = i % 3;
            let payload: Vec<f32> = (0..3)
                .map(|j| if j == c { 10.0 } else { 0.0 } + rng.random_range(-0.3..0.3))
                .collect();
            (c, RawSample::new(format!("{source}-{i:05}"), vec![3], payload, source).unwrap())
        })
        .collect()
}

pub fn raw_records(seed: u64, per: usize, source: &str) -> Vec<NewRecord> {
    raw_samples(seed, per, source)
        .into_iter()
        .map(|(c, s)| NewRecord {
            sample_id: s.id.clone(),
            embedding: None,
            label: Label::new("blob", vec![c as u8]),
            source: source.into(),
            raw: Some(s),
        })
        .collect()
}

/// A service holding 3 × `per` embedded records after one update.
pub fn ready_service(per: usize) -> Service {
    let service = Service::new(config()).unwrap();
    service
        .ingest(IngestRequest {
            records: embedding_records(1, per, "train"),
        })
        .unwrap();
    service.force_update().unwrap();
    service
}
