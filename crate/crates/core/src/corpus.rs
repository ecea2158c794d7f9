//! Chat corpus ingestion: session-labeled and reply-annotated logs,
//! reply-graph to session conversion, fixed-length windowing, and splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default windowing length for long logs.
pub const DEFAULT_WINDOW: usize = 50;

/// A single message by one speaker at one position in the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub text: String,
    /// Gold session label, if annotated. May be raw (non-canonical) on input.
    pub session: Option<usize>,
    /// Ids of earlier utterances this one replies to, if annotated.
    pub reply_to: Option<Vec<String>>,
}

/// An ordered list of utterances; the unit of training and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub utterances: Vec<Utterance>,
}

impl Dialogue {
    pub fn n(&self) -> usize {
        self.utterances.len()
    }

    /// Structural validation: n >= 2, unique ids, all-or-none session labels,
    /// reply edges pointing at earlier utterances.
    pub fn validate(&self) -> Result<()> {
        if self.n() < 2 {
            return Err(Error::Validation(format!(
                "dialogue {:?} has {} utterances, need at least 2",
                self.dialogue_id,
                self.n()
            )));
        }
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (pos, utt) in self.utterances.iter().enumerate() {
            if let Some(prev) = seen.insert(utt.id.as_str(), pos) {
                return Err(Error::Validation(format!(
                    "dialogue {:?}: duplicate utterance id {:?} (positions {} and {})",
                    self.dialogue_id, utt.id, prev, pos
                )));
            }
        }
        for (pos, utt) in self.utterances.iter().enumerate() {
            if let Some(parents) = &utt.reply_to {
                for parent in parents {
                    match seen.get(parent.as_str()) {
                        None => {
                            return Err(Error::Validation(format!(
                                "dialogue {:?}: utterance {:?} replies to unknown id {:?}",
                                self.dialogue_id, utt.id, parent
                            )))
                        }
                        Some(&ppos) if ppos >= pos => {
                            return Err(Error::Validation(format!(
                                "dialogue {:?}: utterance {:?} replies to later utterance {:?}",
                                self.dialogue_id, utt.id, parent
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        let labeled = self.utterances.iter().filter(|u| u.session.is_some()).count();
        if labeled != 0 && labeled != self.n() {
            return Err(Error::Validation(format!(
                "dialogue {:?} is partially labeled ({} of {} utterances)",
                self.dialogue_id,
                labeled,
                self.n()
            )));
        }
        Ok(())
    }

    pub fn is_labeled(&self) -> bool {
        !self.utterances.is_empty() && self.utterances.iter().all(|u| u.session.is_some())
    }

    /// Gold labeling, canonicalized by first appearance. None if unlabeled.
    pub fn gold_labeling(&self) -> Option<SessionLabeling> {
        let raw: Option<Vec<usize>> = self.utterances.iter().map(|u| u.session).collect();
        raw.map(|r| SessionLabeling::from_raw(&r))
    }

    /// Rewrite session labels in place to first-appearance canonical form.
    pub fn canonicalize_labels(&mut self) {
        if let Some(labeling) = self.gold_labeling() {
            for (utt, &label) in self.utterances.iter_mut().zip(labeling.labels()) {
                utt.session = Some(label);
            }
        }
    }
}

/// Per-utterance session assignment for one dialogue, canonicalized so that
/// labels are 0..k-1 in order of first appearance and every label occurs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLabeling {
    labels: Vec<usize>,
    k: usize,
}

impl SessionLabeling {
    /// Canonicalize arbitrary non-negative labels by order of first appearance.
    pub fn from_raw(raw: &[usize]) -> Self {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = remap.len();
            let c = *remap.entry(r).or_insert(next);
            labels.push(c);
        }
        let k = remap.len();
        SessionLabeling { labels, k }
    }

    /// Accept labels that are already canonical; error otherwise.
    pub fn try_new(labels: Vec<usize>) -> Result<Self> {
        let canon = Self::from_raw(&labels);
        if canon.labels == labels {
            Ok(canon)
        } else {
            Err(Error::Validation(
                "labels are not first-appearance canonical".into(),
            ))
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Size m_i of each session, indexed by label.
    pub fn session_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Reply-to annotation as a graph over utterance ids.
/// Edges run from a replying utterance to an earlier one.
#[derive(Debug, Clone)]
pub struct ReplyGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

impl ReplyGraph {
    /// Collect the reply graph of an ordered utterance list.
    pub fn from_utterances(utterances: &[Utterance]) -> Self {
        let nodes = utterances.iter().map(|u| u.id.clone()).collect();
        let mut edges = Vec::new();
        for utt in utterances {
            if let Some(parents) = &utt.reply_to {
                for parent in parents {
                    edges.push((utt.id.clone(), parent.clone()));
                }
            }
        }
        ReplyGraph { nodes, edges }
    }
}

/// Sessions are the connected components of the reply graph with edges
/// treated as undirected; labels canonical by first appearance in `node_order`.
pub fn reply_graph_to_sessions(
    graph: &ReplyGraph,
    node_order: &[String],
) -> Result<SessionLabeling> {
    let index: HashMap<&str, usize> = node_order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    for id in &graph.nodes {
        if !index.contains_key(id.as_str()) {
            return Err(Error::Validation(format!(
                "reply graph node {id:?} not present in node order"
            )));
        }
    }
    let mut dsu = DisjointSet::new(node_order.len());
    for (child, parent) in &graph.edges {
        let (&a, &b) = match (index.get(child.as_str()), index.get(parent.as_str())) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Validation(format!(
                    "reply edge ({child:?} -> {parent:?}) references an unknown utterance id"
                )))
            }
        };
        dsu.union(a, b);
    }
    let roots: Vec<usize> = (0..node_order.len()).map(|i| dsu.find(i)).collect();
    Ok(SessionLabeling::from_raw(&roots))
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[rb.max(ra)] = ra.min(rb);
        }
    }
}

/// Load dialogues from a line-delimited JSON file without requiring labels.
pub fn load_dialogues(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let file = File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut dialogues = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dialogue: Dialogue = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        dialogue.validate()?;
        dialogues.push(dialogue);
    }
    Ok(dialogues)
}

/// Load session-labeled dialogues and canonicalize their labels.
/// Every utterance must carry a session label.
pub fn load_session_labeled(path: impl AsRef<Path>) -> Result<Vec<Dialogue>> {
    let mut dialogues = load_dialogues(path)?;
    for dialogue in &mut dialogues {
        if !dialogue.is_labeled() {
            return Err(Error::Validation(format!(
                "dialogue {:?} is missing session labels",
                dialogue.dialogue_id
            )));
        }
        dialogue.canonicalize_labels();
    }
    Ok(dialogues)
}

/// Write dialogues as canonical line-delimited JSON.
pub fn write_dialogues(path: impl AsRef<Path>, dialogues: &[Dialogue]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut writer = BufWriter::new(file);
    for dialogue in dialogues {
        let line = serde_json::to_string(dialogue)
            .map_err(|e| Error::Format(format!("dialogue serialization failed: {e}")))?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Cut a long labeled log into non-overlapping windows of exactly `window`
/// utterances. The trailing remainder is dropped, as is any window with fewer
/// than two distinct sessions. Labels are re-canonicalized per window and
/// reply edges are not carried into windows.
pub fn window_dialogues(log: &Dialogue, window: usize) -> Vec<Dialogue> {
    assert!(window >= 2, "window must be at least 2");
    let mut out = Vec::new();
    for (ordinal, chunk) in log.utterances.chunks_exact(window).enumerate() {
        let raw: Vec<usize> = chunk
            .iter()
            .map(|u| u.session.expect("window_dialogues requires a labeled log"))
            .collect();
        let labeling = SessionLabeling::from_raw(&raw);
        if labeling.k() < 2 {
            continue;
        }
        let utterances = chunk
            .iter()
            .zip(labeling.labels())
            .map(|(u, &label)| Utterance {
                id: u.id.clone(),
                speaker: u.speaker.clone(),
                text: u.text.clone(),
                session: Some(label),
                reply_to: None,
            })
            .collect();
        out.push(Dialogue {
            dialogue_id: format!("{}:w{}", log.dialogue_id, ordinal),
            utterances,
        });
    }
    out
}

/// Deterministic, disjoint, exhaustive split into (train, dev, test).
pub fn split_corpus(
    dialogues: Vec<Dialogue>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Dialogue>, Vec<Dialogue>, Vec<Dialogue>)> {
    let (ft, fd, fe) = fractions;
    for f in [ft, fd, fe] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!(
                "split fraction {f} is outside (0, 1)"
            )));
        }
    }
    if (ft + fd + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {}, expected 1",
            ft + fd + fe
        )));
    }
    let mut order: Vec<usize> = (0..dialogues.len()).collect();
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = dialogues.len() as f64;
    let cut1 = (ft * n).round() as usize;
    let cut2 = ((ft + fd) * n).round() as usize;
    let mut slots: Vec<Option<Dialogue>> = dialogues.into_iter().map(Some).collect();
    let take = |slots: &mut Vec<Option<Dialogue>>, idxs: &[usize]| -> Vec<Dialogue> {
        idxs.iter().map(|&i| slots[i].take().unwrap()).collect()
    };
    let train = take(&mut slots, &order[..cut1]);
    let dev = take(&mut slots, &order[cut1..cut2]);
    let test = take(&mut slots, &order[cut2..]);
    Ok((train, dev, test))
}
