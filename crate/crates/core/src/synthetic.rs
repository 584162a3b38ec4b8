//! Seeded synthetic data generators.
//!
//! Pixel-level feature extraction is out of scope, so tests and the
//! bundled fixture use Gaussian cluster features keyed to the true
//! label, plus planted-topic document corpora with disjoint vocabularies.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{FeatureTable, Label};
use crate::error::Result;

/// Gaussian cluster features: each photo's vector is unit noise around a
/// class mean placed at `separation` along the axis `class_index % dim`.
/// Photos labeled `none` get a `true_label` cluster too, so a classifier
/// trained on the concrete-labeled subset can be checked against ground
/// truth.
pub fn gaussian_features(
    photos: &[(String, Label)],
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<FeatureTable> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut vectors = Vec::with_capacity(photos.len());
    for (photo_id, label) in photos {
        let axis = label.class_index().unwrap_or(0) % dim.max(1);
        let vector: Vec<f64> = (0..dim)
            .map(|j| {
                let mean = if j == axis { separation } else { 0.0 };
                mean + noise.sample(&mut rng)
            })
            .collect();
        vectors.push((photo_id.clone(), vector));
    }
    FeatureTable::from_vectors(vectors)
}

/// A corpus in which each document draws all of its tokens from exactly
/// one topic's private word list.
#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub documents: Vec<Vec<String>>,
    pub topic_of_doc: Vec<usize>,
    pub topic_words: Vec<Vec<String>>,
}

/// Build `n_docs` documents of `doc_len` tokens over `n_topics` disjoint
/// vocabularies of `words_per_topic` terms each. Topics rotate over
/// documents so every topic gets an equal share.
pub fn planted_topic_corpus(
    n_docs: usize,
    doc_len: usize,
    words_per_topic: usize,
    n_topics: usize,
    seed: u64,
) -> PlantedCorpus {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let topic_words: Vec<Vec<String>> = (0..n_topics)
        .map(|k| (0..words_per_topic).map(|w| format!("t{k}w{w:03}")).collect())
        .collect();
    let mut documents = Vec::with_capacity(n_docs);
    let mut topic_of_doc = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let topic = d % n_topics;
        let words = &topic_words[topic];
        let doc: Vec<String> = (0..doc_len)
            .map(|_| {
                let idx = rand::Rng::random_range(&mut rng, 0..words.len());
                words[idx].clone()
            })
            .collect();
        documents.push(doc);
        topic_of_doc.push(topic);
    }
    PlantedCorpus {
        documents,
        topic_of_doc,
        topic_words,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_are_deterministic_and_separated() {
        let photos: Vec<(String, Label)> = (0..40)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Food } else { Label::Drink };
                (format!("p{i}"), label)
            })
            .collect();
        let a = gaussian_features(&photos, 4, 8.0, 3).unwrap();
        let b = gaussian_features(&photos, 4, 8.0, 3).unwrap();
        assert_eq!(a.get("p0"), b.get("p0"));
        assert_eq!(a.dim(), 4);

        // Cluster means sit on different axes, so coordinate 0 separates
        // food (axis 0) from drink (axis 1).
        for (id, label) in &photos {
            let v = a.get(id).unwrap();
            let expect_axis = label.class_index().unwrap();
            assert!(v[expect_axis] > 3.0, "{id} not near its cluster mean");
        }
    }

    #[test]
    fn planted_corpus_uses_disjoint_vocabularies() {
        let corpus = planted_topic_corpus(20, 30, 10, 2, 5);
        assert_eq!(corpus.documents.len(), 20);
        for (doc, &topic) in corpus.documents.iter().zip(&corpus.topic_of_doc) {
            for word in doc {
                assert!(corpus.topic_words[topic].contains(word));
            }
        }
    }
}
