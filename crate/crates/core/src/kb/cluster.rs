use super::{ConceptId, KbError, KnowledgeIndex};
use crate::providers::EmbeddingProvider;
use crate::simmath::dot;

pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.6;

const EMBED_BATCH: usize = 2048;
// absorbs rounding when comparing identical unit vectors at threshold 1.0
const COSINE_SLACK: f64 = 1e-12;

struct Cluster {
    members: Vec<ConceptId>,
    sum: Vec<f64>,
    centroid: Vec<f64>,
}

impl Cluster {
    fn add(&mut self, id: ConceptId, v: &[f64]) {
        self.members.push(id);
        for (s, x) in self.sum.iter_mut().zip(v) {
            *s += x;
        }
        let norm = self.sum.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (c, s) in self.centroid.iter_mut().zip(&self.sum) {
                *c = s / norm;
            }
        }
    }
}

/// Greedy online clustering of concept surfaces.
///
/// Concepts are visited in id order; each joins the first group whose unit
/// centroid has cosine ≥ `threshold` with it, or founds a new group.
pub fn build_node_groups(
    mut index: KnowledgeIndex,
    embedder: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<KnowledgeIndex, KbError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(KbError::BadThreshold(threshold));
    }
    let mut clusters: Vec<Cluster> = Vec::new();
    let n = index.concepts.len();
    for start in (0..n).step_by(EMBED_BATCH) {
        let end = (start + EMBED_BATCH).min(n);
        let surfaces: Vec<&str> = index.concepts[start..end]
            .iter()
            .map(|c| c.surface.as_str())
            .collect();
        let vectors = embedder.embed(&surfaces)?;
        for (offset, v) in vectors.iter().enumerate() {
            let id = ConceptId((start + offset) as u32);
            let v = v.values();
            match clusters
                .iter_mut()
                .find(|c| dot(&c.centroid, v) >= threshold - COSINE_SLACK)
            {
                Some(cluster) => cluster.add(id, v),
                None => {
                    let mut cluster = Cluster {
                        members: Vec::new(),
                        sum: vec![0.0; v.len()],
                        centroid: vec![0.0; v.len()],
                    };
                    cluster.add(id, v);
                    clusters.push(cluster);
                }
            }
        }
    }
    index.set_groups(clusters.into_iter().map(|c| c.members).collect());
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::tests::tiny_index;
    use crate::providers::{FileVectorStore, ProviderError, ProviderVector, StubEmbedder};

    fn rows() -> Vec<(&'static str, &'static str)> {
        vec![
            ("apple", "apple"),
            ("pear", "pear"),
            ("plum", "plum"),
            ("car", "car"),
            ("bus", "bus"),
            ("van", "van"),
        ]
    }

    /// Two planted clusters: fruit near e0, vehicles near e1.
    fn planted() -> FileVectorStore {
        FileVectorStore::from_texts(
            4,
            [
                ("apple", vec![1.0, 0.0, 0.1, 0.0]),
                ("pear", vec![0.9, 0.0, 0.0, 0.2]),
                ("plum", vec![1.0, 0.0, 0.3, 0.1]),
                ("car", vec![0.0, 1.0, 0.1, 0.0]),
                ("bus", vec![0.0, 0.8, 0.0, 0.3]),
                ("van", vec![0.1, 1.0, 0.2, 0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn threshold_one_gives_singletons() {
        let idx = build_node_groups(tiny_index(&rows()), &StubEmbedder::default(), 1.0).unwrap();
        assert_eq!(idx.groups().len(), 6);
    }

    #[test]
    fn threshold_zero_gives_one_group() {
        let idx = build_node_groups(tiny_index(&rows()), &StubEmbedder::default(), 0.0).unwrap();
        assert_eq!(idx.groups().len(), 1);
        assert_eq!(idx.groups()[0].member_concepts.len(), 6);
        assert_eq!(idx.groups()[0].sentence_ids.len(), 6);
    }

    #[test]
    fn planted_clusters_recovered() {
        let store = planted();
        let idx = build_node_groups(tiny_index(&rows()), &store, 0.6).unwrap();

        // oracle: connected components of the pairwise cosine ≥ 0.6 graph
        let surfaces: Vec<&str> = idx.concepts().iter().map(|c| c.surface.as_str()).collect();
        let vecs: Vec<ProviderVector> = store.embed(&surfaces).unwrap();
        let n = vecs.len();
        let mut comp: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in 0..n {
                if dot(vecs[i].values(), vecs[j].values()) >= 0.6 {
                    let (a, b) = (comp[i], comp[j]);
                    for c in comp.iter_mut() {
                        if *c == b {
                            *c = a;
                        }
                    }
                }
            }
        }
        let mut expected: Vec<Vec<ConceptId>> = Vec::new();
        for root in 0..n {
            let members: Vec<ConceptId> =
                (0..n).filter(|&i| comp[i] == root).map(|i| ConceptId(i as u32)).collect();
            if !members.is_empty() {
                expected.push(members);
            }
        }
        assert_eq!(expected.len(), 2);
        let mut got: Vec<Vec<ConceptId>> =
            idx.groups().iter().map(|g| g.member_concepts.clone()).collect();
        got.sort();
        expected.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn provider_failure_aborts() {
        let store = FileVectorStore::from_texts(2, [("apple", vec![1.0, 0.0])]).unwrap();
        let err = build_node_groups(tiny_index(&rows()), &store, 0.6).unwrap_err();
        assert!(matches!(err, KbError::Provider(ProviderError::MissingKey { .. })));
    }

    #[test]
    fn threshold_out_of_range() {
        assert!(matches!(
            build_node_groups(tiny_index(&rows()), &StubEmbedder::default(), 1.5),
            Err(KbError::BadThreshold(_))
        ));
    }
}
