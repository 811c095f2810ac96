#![allow(dead_code)]

use std::collections::BTreeSet;

use kbwalk::kb::{index_rows, ConceptId, KnowledgeIndex, KnowledgeSentence, RawRow, SentenceId};
use kbwalk::mcts::{SearchError, SearchState, SearchTask};
use kbwalk::pipeline::{ConversationInput, Turn};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WORDS: &[&str] = &[
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet",
    "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango",
];

pub fn index_from(rows: &[(String, String)]) -> KnowledgeIndex {
    let rows = rows.iter().map(|(t, s)| RawRow {
        term: t.clone(),
        sentence: s.clone(),
        score: 1.0,
    });
    index_rows(rows).unwrap().0
}

/// Search task driven by fixed per-sentence and per-concept tables.
pub struct TableTask {
    pub context: String,
    pub seeds: Vec<ConceptId>,
    pub critic: Vec<f64>,
    pub policy: Vec<f64>,
    /// Higher wins when marking a concept; ties to lower id.
    pub mark: Vec<f64>,
}

impl TableTask {
    pub fn random(index: &KnowledgeIndex, seeds: Vec<ConceptId>, seed: u64) -> Self {
        let mut r = rng(seed);
        Self {
            context: "table".into(),
            seeds,
            critic: (0..index.sentences().len()).map(|_| r.random::<f64>()).collect(),
            policy: (0..index.sentences().len()).map(|_| r.random::<f64>()).collect(),
            mark: (0..index.concepts().len()).map(|_| r.random::<f64>()).collect(),
        }
    }

    /// Rounds critic values onto a grid of width `step`, so distinct leaf
    /// values differ by at least `step`.
    pub fn on_grid(mut self, step: f64) -> Self {
        for v in &mut self.critic {
            *v = (*v / step).round() * step;
        }
        self
    }

    pub fn marked(&self, sentence: &KnowledgeSentence) -> ConceptId {
        let mut best = sentence.concepts[0];
        for &c in &sentence.concepts[1..] {
            if self.mark[c.index()] > self.mark[best.index()] {
                best = c;
            }
        }
        best
    }
}

impl SearchTask for TableTask {
    fn context(&self) -> &str {
        &self.context
    }

    fn seed_concepts(&self) -> &[ConceptId] {
        &self.seeds
    }

    fn prune_similarity(&self, s: &KnowledgeSentence) -> Result<f64, SearchError> {
        Ok(self.policy[s.id.index()])
    }

    fn policy_score(&self, s: &KnowledgeSentence) -> Result<f64, SearchError> {
        Ok(self.policy[s.id.index()])
    }

    fn mark_concept(&self, _index: &KnowledgeIndex, s: &KnowledgeSentence) -> Result<ConceptId, SearchError> {
        Ok(self.marked(s))
    }

    fn critic(&self, _index: &KnowledgeIndex, state: &SearchState, _path: &[SentenceId]) -> Result<f64, SearchError> {
        Ok(self.critic[state.sentence_id.unwrap().index()])
    }
}

/// Children of a state under the expansion rule: unvisited candidates,
/// the `pool` most similar kept, then the `branch` best by policy, ties to
/// the lower sentence id. `TableTask` prunes and ranks with the same table,
/// so the two cuts collapse into one.
pub fn oracle_children(
    task: &TableTask,
    candidates: impl IntoIterator<Item = SentenceId>,
    path: &[SentenceId],
    pool: usize,
    branch: usize,
) -> Vec<SentenceId> {
    let mut c: Vec<SentenceId> = candidates.into_iter().filter(|s| !path.contains(s)).collect();
    c.sort_by(|a, b| task.policy[b.index()].total_cmp(&task.policy[a.index()]).then(a.cmp(b)));
    c.truncate(pool.min(branch));
    c
}

/// Every maximal path (length `horizon`, or shorter when no unvisited
/// candidate remains) with its leaf critic.
pub fn enumerate_paths(
    index: &KnowledgeIndex,
    task: &TableTask,
    horizon: usize,
    branch: usize,
) -> Vec<(Vec<SentenceId>, f64)> {
    let mut roots: BTreeSet<SentenceId> = BTreeSet::new();
    for &c in &task.seeds {
        roots.extend(index.group_sentences(c).unwrap());
    }
    let mut out = Vec::new();
    let mut path = Vec::new();
    for r in oracle_children(task, roots, &[], 50, branch) {
        walk(index, task, horizon, branch, r, &mut path, &mut out);
    }
    out
}

fn walk(
    index: &KnowledgeIndex,
    task: &TableTask,
    horizon: usize,
    branch: usize,
    at: SentenceId,
    path: &mut Vec<SentenceId>,
    out: &mut Vec<(Vec<SentenceId>, f64)>,
) {
    path.push(at);
    let next: Vec<SentenceId> = if path.len() < horizon {
        let marked = task.marked(index.sentence(at).unwrap());
        let group = index.group_sentences(marked).unwrap().iter().copied();
        oracle_children(task, group, path, 50, branch)
    } else {
        Vec::new()
    };
    if next.is_empty() {
        out.push((path.clone(), task.critic[at.index()]));
    }
    for n in next {
        walk(index, task, horizon, branch, n, path, out);
    }
    path.pop();
}

/// Small random index whose node groups each hold at most `branch`
/// sentences, with a single seed concept and between 1 and `max_paths`
/// maximal horizon-3 paths.
pub fn random_search_instance(seed: u64, branch: usize, max_paths: usize) -> (KnowledgeIndex, TableTask) {
    let mut r = rng(seed);
    loop {
        let vocab = r.random_range(5..=9);
        let n = r.random_range(6..=14);
        let mut texts: BTreeSet<String> = BTreeSet::new();
        let mut rows = Vec::new();
        for _ in 0..n * 3 {
            if rows.len() == n {
                break;
            }
            let k = r.random_range(1..=3);
            let mut words: Vec<&str> = WORDS[..vocab].choose_multiple(&mut r, k).copied().collect();
            words.sort();
            let text = words.join(" ");
            if texts.insert(text.clone()) {
                rows.push((words[0].to_owned(), text));
            }
        }
        let index = index_from(&rows);
        if index.groups().iter().any(|g| g.sentence_ids.len() > branch) {
            continue;
        }
        let seed_concept = ConceptId(r.random_range(0..index.concepts().len() as u32));
        let task = TableTask::random(&index, vec![seed_concept], r.random());
        let paths = enumerate_paths(&index, &task, 3, branch);
        if !paths.is_empty() && paths.len() <= max_paths {
            return (index, task);
        }
    }
}

/// Exact optimal-transport cost between uniform clouds with `1 − cos` ground
/// cost, by successive shortest paths on the integer-scaled flow network.
pub fn exact_ot(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let cost = |i: usize, j: usize| -> f64 {
        let d: f64 = a[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
        1.0 - d.clamp(-1.0, 1.0)
    };
    // nodes: 0 source, 1..=n left, n+1..=n+m right, n+m+1 sink
    let nodes = n + m + 2;
    let sink = n + m + 1;
    struct Edge {
        to: usize,
        cap: i64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut add = |edges: &mut Vec<Edge>, u: usize, v: usize, cap: i64, c: f64| {
        adj[u].push(edges.len());
        edges.push(Edge { to: v, cap, cost: c });
        adj[v].push(edges.len());
        edges.push(Edge { to: u, cap: 0, cost: -c });
    };
    for i in 0..n {
        add(&mut edges, 0, 1 + i, m as i64, 0.0);
    }
    for j in 0..m {
        add(&mut edges, 1 + n + j, sink, n as i64, 0.0);
    }
    for i in 0..n {
        for j in 0..m {
            add(&mut edges, 1 + i, 1 + n + j, i64::MAX / 4, cost(i, j));
        }
    }
    let mut remaining = (n * m) as i64;
    let mut total = 0.0;
    while remaining > 0 {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<Option<usize>> = vec![None; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &adj[u] {
                    let ed = &edges[e];
                    if ed.cap > 0 && dist[u] + ed.cost < dist[ed.to] - 1e-15 {
                        dist[ed.to] = dist[u] + ed.cost;
                        prev[ed.to] = Some(e);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        assert!(dist[sink].is_finite(), "flow network disconnected");
        let mut push = remaining;
        let mut v = sink;
        while let Some(e) = prev[v] {
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = prev[v] {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            v = edges[e ^ 1].to;
        }
        total += push as f64 * dist[sink];
        remaining -= push;
    }
    total / (n * m) as f64
}

pub struct PlantedInstance {
    pub index: KnowledgeIndex,
    pub task: TableTask,
    pub chain: Vec<SentenceId>,
}

/// Index with one planted three-hop chain `seed → s1 → s2 → s3` whose
/// sentences carry the highest critic values, among distractors that share
/// the chain's link concepts.
pub fn planted_chain_instance(seed: u64) -> PlantedInstance {
    let mut r = rng(seed);
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut texts = BTreeSet::new();
    let mut push = |rows: &mut Vec<(String, String)>, text: String| {
        if texts.insert(text.clone()) {
            let term = text.split(' ').next().unwrap().to_owned();
            rows.push((term, text));
        }
    };
    for _ in 0..30 {
        let w: Vec<&str> = WORDS.choose_multiple(&mut r, 2).copied().collect();
        push(&mut rows, format!("root {} {}", w[0], w[1]));
    }
    for _ in 0..60 {
        let w: Vec<&str> = WORDS.choose_multiple(&mut r, 3).copied().collect();
        push(&mut rows, w.join(" "));
    }
    for i in 0..8 {
        push(&mut rows, format!("linkone fillone{i}"));
        push(&mut rows, format!("linktwo filltwo{i}"));
    }
    push(&mut rows, "root linkone".into());
    push(&mut rows, "linkone linktwo".into());
    push(&mut rows, "linktwo linkthree".into());
    let index = index_from(&rows);
    let find = |text: &str| {
        index
            .sentences()
            .iter()
            .find(|s| s.text == text)
            .map(|s| s.id)
            .unwrap()
    };
    let chain = vec![find("root linkone"), find("linkone linktwo"), find("linktwo linkthree")];

    let mut task = TableTask::random(&index, vec![index.lookup("root").unwrap()], r.random());
    for v in task.critic.iter_mut() {
        *v = r.random_range(0.0..0.7);
    }
    for (s, v) in chain.iter().zip([0.85, 0.9, 1.0]) {
        task.critic[s.index()] = v;
    }
    for i in 0..task.policy.len() {
        task.policy[i] = task.critic[i] + r.random_range(-0.1..0.1);
    }
    for (word, v) in [("linkone", 2.0), ("linktwo", 3.0), ("linkthree", 4.0)] {
        task.mark[index.lookup(word).unwrap().index()] = v;
    }
    PlantedInstance { index, task, chain }
}

const NOUNS: &[&str] = &[
    "dog", "cat", "bird", "fish", "horse", "cow", "tree", "flower", "river", "mountain", "ocean",
    "forest", "rain", "snow", "sun", "moon", "car", "bicycle", "train", "boat", "bread", "cheese",
    "apple", "coffee", "tea", "music", "book", "school", "doctor", "teacher", "farmer", "garden",
    "kitchen", "hospital", "library", "market", "phone", "computer", "game", "movie", "song",
    "friend", "family", "child", "baby", "storm", "fire", "water", "stone", "wind",
];

const ADJECTIVES: &[&str] = &[
    "loyal", "quiet", "loud", "fast", "slow", "warm", "cold", "bright", "dark", "heavy", "light",
    "sweet", "bitter", "fresh", "old", "young", "strong", "gentle", "busy", "calm",
];

const VERBS: &[&str] = &[
    "need", "love", "avoid", "produce", "carry", "protect", "require", "attract", "damage",
    "support", "feed", "shelter", "follow", "visit", "use",
];

/// Template generic-knowledge corpus: statements about a noun, often in
/// several near-paraphrases, the way mined corpora repeat facts.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let mut seen = BTreeSet::new();
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let subject = NOUNS.choose(&mut r).unwrap();
        let object = NOUNS.choose(&mut r).unwrap();
        let adjective = ADJECTIVES.choose(&mut r).unwrap();
        let verb = VERBS.choose(&mut r).unwrap();
        let variants = [
            format!("{subject}s {verb} {object}s."),
            format!("Most {subject}s {verb} {adjective} {object}s."),
            format!("A {subject} can {verb} a {object}."),
            format!("{subject}s are often {adjective}."),
            format!("Some {subject}s {verb} {object}s every day."),
        ];
        let take = r.random_range(1..=3);
        let start = r.random_range(0..variants.len());
        for v in variants.iter().cycle().skip(start).take(take) {
            if rows.len() < n && seen.insert(v.clone()) {
                rows.push((subject.to_string(), v.clone()));
            }
        }
    }
    rows
}

/// Short two-speaker conversation about two or three nouns of the corpus vocabulary.
pub fn synthetic_conversation(id: &str, seed: u64) -> ConversationInput {
    let mut r = rng(seed);
    let topics: Vec<&str> = NOUNS.choose_multiple(&mut r, 3).copied().collect();
    let adjective = ADJECTIVES.choose(&mut r).unwrap();
    let verb = VERBS.choose(&mut r).unwrap();
    let lines = [
        format!("I saw a {} near the {} today.", topics[0], topics[1]),
        format!("Was the {} {}?", topics[0], adjective),
        format!("Yes, and I think {}s {} {}s.", topics[0], verb, topics[2]),
    ];
    ConversationInput {
        id: id.to_owned(),
        turns: lines
            .iter()
            .enumerate()
            .map(|(i, t)| Turn {
                speaker: if i % 2 == 0 { "A" } else { "B" }.to_owned(),
                text: t.clone(),
            })
            .collect(),
    }
}

/// Bag-of-words embedder over hand-placed token vectors. Unlisted tokens get
/// a hashed one-hot direction above the listed dimensions.
pub struct TableEmbedder {
    pub table: std::collections::HashMap<String, Vec<f64>>,
    pub base_dim: usize,
}

impl TableEmbedder {
    pub const HASHED: usize = 64;

    pub fn new(entries: &[(&str, &[f64])]) -> Self {
        let base_dim = entries.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
        Self {
            table: entries.iter().map(|(k, v)| ((*k).to_owned(), v.to_vec())).collect(),
            base_dim,
        }
    }
}

impl kbwalk::providers::EmbeddingProvider for TableEmbedder {
    fn id(&self) -> &str {
        "table"
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<kbwalk::providers::ProviderVector>, kbwalk::providers::ProviderError> {
        texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0; self.base_dim + Self::HASHED];
                for token in kbwalk::kb::text::tokenize(t) {
                    match self.table.get(&token) {
                        Some(x) => v.iter_mut().zip(x).for_each(|(a, b)| *a += b),
                        None => {
                            let h = kbwalk::providers::fnv1a64(token.as_bytes()) as usize % Self::HASHED;
                            v[self.base_dim + h] += 1.0;
                        }
                    }
                }
                kbwalk::providers::ProviderVector::normalized(v, kbwalk::providers::Provenance::Stub)
            })
            .collect()
    }
}
