//! The full trainable model: optional token-embedding encoder, the fusion
//! stack, and the session-count head, with a fixed tensor ordering shared by
//! the optimizer, checkpoints, and gradient checks.

use ndarray::Array2;
use rand::SeedableRng;

use crate::cluster_head::{
    head_backward, head_forward, predict_k, ClusterHeadParams, HeadCache,
    SessionCountDistribution,
};
use crate::corpus::{Dialogue, SessionLabeling};
use crate::encoder::{PrecomputedEmbeddings, TokenVocabulary};
use crate::error::{Error, Result};
use crate::objective::{contrastive_loss, total_loss, ContrastiveConfig};
use crate::sff::{sff_backward, sff_forward, SffMode, SffParams};

/// Loss components for one dialogue.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub head: f64,
    pub total: f64,
}

/// Gradients shaped like the model's trainable tensors.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub table: Option<Array2<f64>>,
    pub sff: SffParams,
    pub head: ClusterHeadParams,
}

/// Trainable model state.
#[derive(Debug, Clone)]
pub struct Model {
    pub mode: SffMode,
    pub encoder: Option<TokenVocabulary>,
    pub sff: SffParams,
    pub head: ClusterHeadParams,
}

impl Model {
    pub fn init(
        d: usize,
        k_max: usize,
        mode: SffMode,
        encoder: Option<TokenVocabulary>,
        seed: u64,
    ) -> Self {
        if let Some(vocab) = &encoder {
            assert_eq!(vocab.d(), d, "encoder table width must match model d");
        }
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        Model {
            mode,
            encoder,
            sff: SffParams::init(d, &mut rng),
            head: ClusterHeadParams::init(d, k_max, &mut rng),
        }
    }

    pub fn d(&self) -> usize {
        self.sff.d()
    }

    pub fn k_max(&self) -> usize {
        self.head.k_max()
    }

    /// Utterance embeddings for a dialogue, from the trainable table or a
    /// precomputed embedding set. Token ids are returned for table training.
    pub fn embeddings_for(
        &self,
        dialogue: &Dialogue,
        precomputed: Option<&PrecomputedEmbeddings>,
    ) -> Result<(Option<Vec<Vec<usize>>>, Array2<f64>)> {
        if let Some(emb) = precomputed {
            if emb.d() != self.d() {
                return Err(Error::Validation(format!(
                    "precomputed embeddings have d = {}, model expects {}",
                    emb.d(),
                    self.d()
                )));
            }
            let seq = emb.sequence_for(dialogue)?;
            return Ok((None, seq.vectors));
        }
        let vocab = self.encoder.as_ref().ok_or_else(|| {
            Error::Validation(
                "model has no encoder table and no precomputed embeddings were given".into(),
            )
        })?;
        let (token_ids, vectors) = vocab.encode_dialogue(dialogue);
        Ok((Some(token_ids), vectors))
    }

    /// Final representations (unit rows) for clustering.
    pub fn representations(&self, embeddings: &Array2<f64>) -> Array2<f64> {
        sff_forward(&self.sff, embeddings, self.mode).r
    }

    /// Session-count distribution for a dialogue's embeddings.
    pub fn session_count_distribution(
        &self,
        embeddings: &Array2<f64>,
    ) -> (SessionCountDistribution, HeadCache) {
        head_forward(&self.head, embeddings)
    }

    /// Predicted session count (argmax, ties toward smaller k).
    pub fn predict_k_for(&self, embeddings: &Array2<f64>) -> usize {
        let (dist, _) = head_forward(&self.head, embeddings);
        predict_k(&dist)
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            table: self
                .encoder
                .as_ref()
                .map(|vocab| Array2::zeros(vocab.table.dim())),
            sff: self.sff.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Total loss (contrastive + gamma * head) and its exact gradients.
    /// Table gradients are produced only when `token_ids` is given.
    pub fn loss_and_grads(
        &self,
        embeddings: &Array2<f64>,
        token_ids: Option<&[Vec<usize>]>,
        gold: &SessionLabeling,
        cfg: &ContrastiveConfig,
    ) -> Result<(LossBreakdown, ModelGrads)> {
        let k_gold = gold.k();
        if k_gold > self.k_max() {
            return Err(Error::Validation(format!(
                "dialogue has {k_gold} sessions but the head only models up to {}",
                self.k_max()
            )));
        }

        let acts = sff_forward(&self.sff, embeddings, self.mode);
        let (l_c, grad_r) = contrastive_loss(&acts.r, gold, cfg)?;
        let (sff_grads, grad_emb_sff) = sff_backward(&self.sff, &acts, &grad_r);

        let (dist, head_cache) = head_forward(&self.head, embeddings);
        let l_h = crate::cluster_head::head_loss(&dist, k_gold)?;
        let (mut head_grads, grad_emb_head) = head_backward(&self.head, &head_cache, k_gold)?;

        // The head contributes through gamma * L_H.
        scale_head_grads(&mut head_grads, cfg.gamma);
        let grad_emb = grad_emb_sff + grad_emb_head * cfg.gamma;

        let mut grads = ModelGrads {
            table: None,
            sff: sff_grads,
            head: head_grads,
        };
        if let (Some(ids), Some(vocab)) = (token_ids, &self.encoder) {
            let mut table = Array2::zeros(vocab.table.dim());
            for (i, tokens) in ids.iter().enumerate() {
                vocab.accumulate_grad(tokens, &grad_emb.row(i).to_owned(), &mut table);
            }
            grads.table = Some(table);
        }

        Ok((
            LossBreakdown {
                contrastive: l_c,
                head: l_h,
                total: total_loss(l_c, l_h, cfg.gamma),
            },
            grads,
        ))
    }

    /// Immutable views of every tensor in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let table = self.encoder.as_ref().map(|v| &v.table);
        list_tensors(table, &self.sff, &self.head)
    }

    /// Mutable views of every tensor in checkpoint order.
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let table = self.encoder.as_mut().map(|v| &mut v.table);
        list_tensors_mut(table, &mut self.sff, &mut self.head)
    }
}

impl ModelGrads {
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        list_tensors(self.table.as_ref(), &self.sff, &self.head)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        list_tensors_mut(self.table.as_mut(), &mut self.sff, &mut self.head)
    }

    /// Scale every gradient, e.g. when averaging over a batch.
    pub fn scale(&mut self, factor: f64) {
        for (_, slice) in self.tensors_mut() {
            for v in slice {
                *v *= factor;
            }
        }
    }

    /// Accumulate another gradient set (same shapes).
    pub fn add(&mut self, other: &ModelGrads) {
        let mut mine = self.tensors_mut();
        let theirs = other.tensors();
        assert_eq!(mine.len(), theirs.len(), "gradient tensor lists differ");
        for ((name_a, a), (name_b, b)) in mine.iter_mut().zip(theirs.iter()) {
            assert_eq!(name_a, name_b, "gradient tensor order differs");
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    /// Global L2 norm across all gradient tensors.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, s)| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn scale_head_grads(grads: &mut ClusterHeadParams, gamma: f64) {
    grads.lstm.w *= gamma;
    grads.lstm.u *= gamma;
    grads.lstm.b *= gamma;
    grads.w_out *= gamma;
    grads.b_out *= gamma;
}

/// Tensor name for the encoder table, referenced by freeze handling.
pub const ENCODER_TABLE: &str = "encoder.table";

fn list_tensors<'a>(
    table: Option<&'a Array2<f64>>,
    sff: &'a SffParams,
    head: &'a ClusterHeadParams,
) -> Vec<(&'static str, &'a [f64])> {
    let mut out: Vec<(&'static str, &[f64])> = Vec::with_capacity(16);
    if let Some(t) = table {
        out.push((ENCODER_TABLE, t.as_slice().unwrap()));
    }
    out.push(("sff.w_fc", sff.w_fc.as_slice().unwrap()));
    out.push(("sff.b_fc", sff.b_fc.as_slice().unwrap()));
    out.push(("sff.fwd.w", sff.fwd.w.as_slice().unwrap()));
    out.push(("sff.fwd.u", sff.fwd.u.as_slice().unwrap()));
    out.push(("sff.fwd.b", sff.fwd.b.as_slice().unwrap()));
    out.push(("sff.bwd.w", sff.bwd.w.as_slice().unwrap()));
    out.push(("sff.bwd.u", sff.bwd.u.as_slice().unwrap()));
    out.push(("sff.bwd.b", sff.bwd.b.as_slice().unwrap()));
    out.push(("sff.w_ffn", sff.w_ffn.as_slice().unwrap()));
    out.push(("sff.b_ffn", sff.b_ffn.as_slice().unwrap()));
    out.push(("head.lstm.w", head.lstm.w.as_slice().unwrap()));
    out.push(("head.lstm.u", head.lstm.u.as_slice().unwrap()));
    out.push(("head.lstm.b", head.lstm.b.as_slice().unwrap()));
    out.push(("head.w_out", head.w_out.as_slice().unwrap()));
    out.push(("head.b_out", head.b_out.as_slice().unwrap()));
    out
}

fn list_tensors_mut<'a>(
    table: Option<&'a mut Array2<f64>>,
    sff: &'a mut SffParams,
    head: &'a mut ClusterHeadParams,
) -> Vec<(&'static str, &'a mut [f64])> {
    let mut out: Vec<(&'static str, &mut [f64])> = Vec::with_capacity(16);
    if let Some(t) = table {
        out.push((ENCODER_TABLE, t.as_slice_mut().unwrap()));
    }
    out.push(("sff.w_fc", sff.w_fc.as_slice_mut().unwrap()));
    out.push(("sff.b_fc", sff.b_fc.as_slice_mut().unwrap()));
    out.push(("sff.fwd.w", sff.fwd.w.as_slice_mut().unwrap()));
    out.push(("sff.fwd.u", sff.fwd.u.as_slice_mut().unwrap()));
    out.push(("sff.fwd.b", sff.fwd.b.as_slice_mut().unwrap()));
    out.push(("sff.bwd.w", sff.bwd.w.as_slice_mut().unwrap()));
    out.push(("sff.bwd.u", sff.bwd.u.as_slice_mut().unwrap()));
    out.push(("sff.bwd.b", sff.bwd.b.as_slice_mut().unwrap()));
    out.push(("sff.w_ffn", sff.w_ffn.as_slice_mut().unwrap()));
    out.push(("sff.b_ffn", sff.b_ffn.as_slice_mut().unwrap()));
    out.push(("head.lstm.w", head.lstm.w.as_slice_mut().unwrap()));
    out.push(("head.lstm.u", head.lstm.u.as_slice_mut().unwrap()));
    out.push(("head.lstm.b", head.lstm.b.as_slice_mut().unwrap()));
    out.push(("head.w_out", head.w_out.as_slice_mut().unwrap()));
    out.push(("head.b_out", head.b_out.as_slice_mut().unwrap()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use rand::prelude::*;

    fn toy_dialogue(texts: &[&str], labels: &[usize]) -> Dialogue {
        Dialogue {
            dialogue_id: "toy".into(),
            utterances: texts
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (t, &l))| Utterance {
                    id: format!("toy-{i}"),
                    speaker: "s".into(),
                    text: t.to_string(),
                    session: Some(l),
                    reply_to: None,
                })
                .collect(),
        }
    }

    fn toy_model(d: usize, k_max: usize, seed: u64) -> (Model, Dialogue) {
        let dialogue = toy_dialogue(
            &["alpha beta", "beta gamma", "delta epsilon", "epsilon zeta"],
            &[0, 0, 1, 1],
        );
        let mut vocab = TokenVocabulary::build(
            dialogue.utterances.iter().map(|u| u.text.clone()),
            d,
            seed,
        );
        // Scale embeddings to O(1) so the normalization layer is probed away
        // from its zero-vector singularity, where finite differences at a
        // fixed step cannot resolve the (correct) large gradients.
        vocab.table *= 20.0;
        let model = Model::init(d, k_max, SffMode::Full, Some(vocab), seed);
        (model, dialogue)
    }

    #[test]
    fn tensor_lists_are_aligned() {
        let (mut model, _) = toy_model(8, 4, 0);
        let names: Vec<&str> = model.tensors().iter().map(|(n, _)| *n).collect();
        let grads = model.zero_grads();
        let grad_names: Vec<&str> = grads.tensors().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, grad_names);
        let mut_names: Vec<&str> = model.tensors_mut().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, mut_names);
        assert_eq!(names[0], ENCODER_TABLE);
    }

    #[test]
    fn loss_rejects_too_many_sessions() {
        let (model, _) = toy_model(8, 2, 1);
        let dialogue = toy_dialogue(&["a", "b", "c"], &[0, 1, 2]);
        let (ids, emb) = model.embeddings_for(&dialogue, None).unwrap();
        let gold = dialogue.gold_labeling().unwrap();
        let err = model
            .loss_and_grads(&emb, ids.as_deref(), &gold, &ContrastiveConfig::default())
            .unwrap_err();
        assert!(err.to_string().contains("sessions"));
    }

    /// Full-model gradient check through the encoder table: total loss vs
    /// central finite differences on every tensor.
    #[test]
    fn full_model_gradients_match_finite_differences() {
        let cfg = ContrastiveConfig::default();
        for seed in 0..3u64 {
            let (mut model, dialogue) = toy_model(8, 4, 11 + seed);
            let gold = dialogue.gold_labeling().unwrap();

            let loss_of = |m: &Model| -> f64 {
                let (ids, emb) = m.embeddings_for(&dialogue, None).unwrap();
                let (parts, _) = m
                    .loss_and_grads(&emb, ids.as_deref(), &gold, &cfg)
                    .unwrap();
                parts.total
            };

            let (ids, emb) = model.embeddings_for(&dialogue, None).unwrap();
            let (_, grads) = model
                .loss_and_grads(&emb, ids.as_deref(), &gold, &cfg)
                .unwrap();

            let step = 1e-5;
            let grad_list: Vec<(String, Vec<f64>)> = grads
                .tensors()
                .iter()
                .map(|(n, s)| (n.to_string(), s.to_vec()))
                .collect();
            let mut rng = StdRng::seed_from_u64(seed);
            for (t_idx, (name, analytic)) in grad_list.iter().enumerate() {
                // Probe a few random coordinates per tensor.
                let len = analytic.len();
                let probes: Vec<usize> = (0..3).map(|_| rng.random_range(0..len)).collect();
                for &flat in &probes {
                    let orig = model.tensors()[t_idx].1[flat];
                    model.tensors_mut()[t_idx].1[flat] = orig + step;
                    let up = loss_of(&model);
                    model.tensors_mut()[t_idx].1[flat] = orig - step;
                    let down = loss_of(&model);
                    model.tensors_mut()[t_idx].1[flat] = orig;
                    let numeric = (up - down) / (2.0 * step);
                    let a = analytic[flat];
                    let denom = a.abs().max(numeric.abs()).max(1e-6);
                    assert!(
                        (a - numeric).abs() / denom < 1e-4,
                        "{name}[{flat}] seed {seed}: {a} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn grads_add_and_scale() {
        let (model, dialogue) = toy_model(8, 4, 21);
        let gold = dialogue.gold_labeling().unwrap();
        let cfg = ContrastiveConfig::default();
        let (ids, emb) = model.embeddings_for(&dialogue, None).unwrap();
        let (_, g1) = model
            .loss_and_grads(&emb, ids.as_deref(), &gold, &cfg)
            .unwrap();
        let mut acc = model.zero_grads();
        acc.add(&g1);
        acc.add(&g1);
        acc.scale(0.5);
        for ((_, a), (_, b)) in acc.tensors().iter().zip(g1.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert!(acc.global_norm() > 0.0);
    }
}
