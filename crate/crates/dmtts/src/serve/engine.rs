//! Streaming decode engine: immutable weights shared by any number of
//! sessions, each session owning paged KV caches taken from one shared
//! pool. Attention walks the pages with an online softmax, so no step ever
//! materializes a full score row, and all arithmetic stays f64; the
//! quantized mode changes only how weight rows are stored and dotted.
//!
//! Admission allocates every page the prompt needs atomically or rejects
//! the session with the pool untouched. Running out of pages mid-stream
//! terminates only the offending session; its tokens so far stay valid and
//! its pages return to the pool on drop.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::forward::build_input;
use crate::model::params::Parameters;
use crate::numerics::ops::{argmax, dot, silu, softmax_in_place};
use crate::numerics::tensor::Tensor;
use crate::serve::kv_cache::{pages_for, PagePool, PlaneCache, PoolConfig};
use crate::serve::quant::{quantize_weights, MatRepr};
use std::time::{Duration, Instant};

/// Weight storage mode. Float is the exact reference; Int8 stores every
/// linear projection as int8 with per-channel scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Float,
    Int8,
}

#[derive(Debug, Clone)]
struct EngineExpert {
    w1: MatRepr,
    b1: Vec<f64>,
    w2: MatRepr,
    b2: Vec<f64>,
}

#[derive(Debug, Clone)]
struct EngineLayer {
    ln1_gain: Vec<f64>,
    ln1_bias: Vec<f64>,
    ln2_gain: Vec<f64>,
    ln2_bias: Vec<f64>,
    wq: MatRepr,
    wk: MatRepr,
    wv: MatRepr,
    wo: MatRepr,
    ca_wq: MatRepr,
    ca_wk: MatRepr,
    ca_wv: MatRepr,
    ca_wo: MatRepr,
    router: MatRepr,
    experts: Vec<EngineExpert>,
}

/// Shared, immutable serving state. Sessions borrow it; the only mutable
/// shared structure is the page pool behind its mutex.
#[derive(Debug)]
pub struct Engine {
    cfg: ModelConfig,
    precision: Precision,
    tok_emb: Tensor,
    pos_emb: Tensor,
    dialect_tokens: Tensor,
    layers: Vec<EngineLayer>,
    final_gain: Vec<f64>,
    final_bias: Vec<f64>,
    head: MatRepr,
    allowed: Vec<u32>,
    pool: PagePool,
}

impl Engine {
    pub fn new(
        params: &Parameters,
        cfg: &ModelConfig,
        pool_cfg: &PoolConfig,
        precision: Precision,
    ) -> Result<Engine> {
        cfg.validate()?;
        if !params.is_all_finite() {
            return Err(Error::Numeric("engine weights must be finite".into()));
        }
        let pool = PagePool::new(pool_cfg, cfg.head_dim())?;
        let mut quant = match precision {
            Precision::Float => None,
            Precision::Int8 => Some(quantize_weights(params, cfg)?),
        };
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for (l, lp) in params.layers.iter().enumerate() {
            let mat = |dense: &Tensor, pick: fn(&crate::serve::quant::QuantLayer) -> &crate::serve::quant::Int8Matrix| match &quant {
                None => MatRepr::Dense(dense.clone()),
                Some(qp) => MatRepr::Int8(pick(&qp.layers[l]).clone()),
            };
            let experts = lp
                .experts
                .iter()
                .enumerate()
                .map(|(e, ex)| EngineExpert {
                    w1: match &quant {
                        None => MatRepr::Dense(ex.w1.clone()),
                        Some(qp) => MatRepr::Int8(qp.layers[l].experts[e].0.clone()),
                    },
                    b1: ex.b1.data().to_vec(),
                    w2: match &quant {
                        None => MatRepr::Dense(ex.w2.clone()),
                        Some(qp) => MatRepr::Int8(qp.layers[l].experts[e].1.clone()),
                    },
                    b2: ex.b2.data().to_vec(),
                })
                .collect();
            layers.push(EngineLayer {
                ln1_gain: lp.ln1_gain.data().to_vec(),
                ln1_bias: lp.ln1_bias.data().to_vec(),
                ln2_gain: lp.ln2_gain.data().to_vec(),
                ln2_bias: lp.ln2_bias.data().to_vec(),
                wq: mat(&lp.wq, |q| &q.wq),
                wk: mat(&lp.wk, |q| &q.wk),
                wv: mat(&lp.wv, |q| &q.wv),
                wo: mat(&lp.wo, |q| &q.wo),
                ca_wq: mat(&lp.ca_wq, |q| &q.ca_wq),
                ca_wk: mat(&lp.ca_wk, |q| &q.ca_wk),
                ca_wv: mat(&lp.ca_wv, |q| &q.ca_wv),
                ca_wo: mat(&lp.ca_wo, |q| &q.ca_wo),
                router: mat(&lp.router, |q| &q.router),
                experts,
            });
        }
        let head = match quant.take() {
            None => MatRepr::Dense(params.head.clone()),
            Some(qp) => MatRepr::Int8(qp.head),
        };
        Ok(Engine {
            cfg: cfg.clone(),
            precision,
            tok_emb: params.tok_emb.clone(),
            pos_emb: params.pos_emb.clone(),
            dialect_tokens: params.dialect_tokens.clone(),
            layers,
            final_gain: params.final_norm_gain.data().to_vec(),
            final_bias: params.final_norm_bias.data().to_vec(),
            head,
            allowed: cfg.vocab.allowed_output_ids(),
            pool,
        })
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn pool(&self) -> &PagePool {
        &self.pool
    }

    fn n_planes(&self) -> usize {
        self.cfg.n_layers * self.cfg.n_kv_heads
    }

    /// Admits one decode session: validates and assembles the prompt,
    /// atomically takes every page the prompt needs (ceil(L/p) per plane),
    /// and runs the prefill forward once. On pool exhaustion the session is
    /// rejected and the pool is left exactly as it was.
    pub fn new_session(
        &self,
        text: &[u32],
        speaker_prompt: Option<&[u32]>,
        dialect_id: u32,
    ) -> Result<Session<'_>> {
        let started = Instant::now();
        let item = build_input(
            text,
            &[],
            speaker_prompt,
            dialect_id,
            &self.cfg.vocab,
            self.cfg.max_seq_len,
        )?;
        let prefix = item.input;
        let per_plane = pages_for(prefix.len(), self.pool.page_size());
        let total = per_plane * self.n_planes();
        let mut pages = self.pool.try_alloc(total).ok_or_else(|| {
            Error::Serve(format!(
                "session rejected: prompt needs {total} pages, pool has {} free",
                self.pool.available()
            ))
        })?;
        let mut planes = Vec::with_capacity(self.n_planes());
        for _ in 0..self.n_planes() {
            let mut plane = PlaneCache::new(self.pool.page_size(), self.cfg.head_dim());
            for page in pages.drain(pages.len() - per_plane..) {
                plane.grant(page);
            }
            planes.push(plane);
        }
        let m = self.cfg.m_dialect_tokens;
        let d = self.cfg.d_model;
        let start = dialect_id as usize * m;
        let mut ca_kv = Vec::with_capacity(self.cfg.n_layers);
        for layer in &self.layers {
            let mut kc = vec![0.0; m * d];
            let mut vc = vec![0.0; m * d];
            for j in 0..m {
                let row = self.dialect_tokens.row(start + j);
                layer.ca_wk.matvec(row, &mut kc[j * d..(j + 1) * d]);
                layer.ca_wv.matvec(row, &mut vc[j * d..(j + 1) * d]);
            }
            ca_kv.push((kc, vc));
        }
        let mut session = Session {
            engine: self,
            dialect_id,
            candidates: self.cfg.candidate_experts(dialect_id)?,
            ca_kv,
            planes,
            len: 0,
            emitted: Vec::new(),
            status: SessionStatus::Live,
            pending_logits: Vec::new(),
            started,
            first_token_time: None,
            token_times: Vec::new(),
        };
        session.pending_logits = self.forward_rows(&mut session.planes, &session.ca_kv, &session.candidates, &prefix, 0)?;
        session.len = prefix.len();
        Ok(session)
    }

    /// Runs `ids` as positions `start_pos..` through every layer, appending
    /// K/V to the planes (capacity must already be granted), and returns
    /// the masked logits at the last row. Rows are processed in order, so
    /// causality falls out of the walk: row i attends over exactly the
    /// positions cached when it runs.
    fn forward_rows(
        &self,
        planes: &mut [PlaneCache],
        ca_kv: &[(Vec<f64>, Vec<f64>)],
        candidates: &[usize],
        ids: &[u32],
        start_pos: usize,
    ) -> Result<Vec<f64>> {
        let t = ids.len();
        let d = self.cfg.d_model;
        let hd = self.cfg.head_dim();
        let kv = self.cfg.kv_dim();
        let group = self.cfg.n_heads / self.cfg.n_kv_heads;
        let attn_scale = 1.0 / (hd as f64).sqrt();
        let ca_scale = 1.0 / (d as f64).sqrt();
        let m = self.cfg.m_dialect_tokens;
        let k_exp = self.cfg.top_k.min(candidates.len());

        let mut x = vec![0.0; t * d];
        for (i, &id) in ids.iter().enumerate() {
            let row = &mut x[i * d..(i + 1) * d];
            for ((o, &e), &p) in row
                .iter_mut()
                .zip(self.tok_emb.row(id as usize))
                .zip(self.pos_emb.row(start_pos + i))
            {
                *o = e + p;
            }
        }

        let mut a = vec![0.0; d];
        let mut q_row = vec![0.0; d];
        let mut k_row = vec![0.0; kv];
        let mut v_row = vec![0.0; kv];
        let mut concat = vec![0.0; d];
        let mut proj = vec![0.0; d];
        let mut qc = vec![0.0; d];
        let mut ctx = vec![0.0; d];
        let mut ca_probs = vec![0.0; m];
        let mut b = vec![0.0; d];
        let mut u = vec![0.0; self.cfg.d_ff];
        let mut s = vec![0.0; self.cfg.d_ff];
        let mut eo = vec![0.0; d];

        for (l, layer) in self.layers.iter().enumerate() {
            let (kc, vc) = &ca_kv[l];
            for i in 0..t {
                let xi = &mut x[i * d..(i + 1) * d];
                ln_row(xi, &layer.ln1_gain, &layer.ln1_bias, &mut a);

                layer.wq.matvec(&a, &mut q_row);
                layer.wk.matvec(&a, &mut k_row);
                layer.wv.matvec(&a, &mut v_row);
                for kvh in 0..self.cfg.n_kv_heads {
                    planes[l * self.cfg.n_kv_heads + kvh]
                        .push(&k_row[kvh * hd..(kvh + 1) * hd], &v_row[kvh * hd..(kvh + 1) * hd]);
                }
                for h in 0..self.cfg.n_heads {
                    let plane = &planes[l * self.cfg.n_kv_heads + h / group];
                    attend_plane(
                        plane,
                        &q_row[h * hd..(h + 1) * hd],
                        attn_scale,
                        &mut concat[h * hd..(h + 1) * hd],
                    )?;
                }
                layer.wo.matvec(&concat, &mut proj);
                for (o, &v) in xi.iter_mut().zip(&proj) {
                    *o += v; // h1 = x + attn
                }

                layer.ca_wq.matvec(xi, &mut qc);
                for j in 0..m {
                    ca_probs[j] = dot(&qc, &kc[j * d..(j + 1) * d]) * ca_scale;
                }
                softmax_in_place(&mut ca_probs)?;
                ctx.fill(0.0);
                for (j, &p) in ca_probs.iter().enumerate() {
                    for (c, &vv) in ctx.iter_mut().zip(&vc[j * d..(j + 1) * d]) {
                        *c += p * vv;
                    }
                }
                layer.ca_wo.matvec(&ctx, &mut proj);
                for (o, &v) in xi.iter_mut().zip(&proj) {
                    *o += v; // h2 = h1 + cross-attn
                }

                ln_row(xi, &layer.ln2_gain, &layer.ln2_bias, &mut b);
                let logits: Vec<f64> =
                    candidates.iter().map(|&e| layer.router.row_dot(e, &b)).collect();
                if !logits.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric("non-finite router logits".into()));
                }
                let mut order: Vec<usize> = (0..candidates.len()).collect();
                order.sort_by(|&p, &q| {
                    logits[q]
                        .partial_cmp(&logits[p])
                        .expect("finite")
                        .then(candidates[p].cmp(&candidates[q]))
                });
                let mut gates: Vec<f64> = order[..k_exp].iter().map(|&c| logits[c]).collect();
                softmax_in_place(&mut gates)?;
                for (&c, &gate) in order[..k_exp].iter().zip(&gates) {
                    let ex = &layer.experts[candidates[c]];
                    ex.w1.matvec(&b, &mut u);
                    for (uv, &bv) in u.iter_mut().zip(&ex.b1) {
                        *uv += bv;
                    }
                    for (sv, &uv) in s.iter_mut().zip(&u) {
                        *sv = silu(uv);
                    }
                    ex.w2.matvec(&s, &mut eo);
                    for ((o, &ev), &bv) in xi.iter_mut().zip(&eo).zip(&ex.b2) {
                        *o += gate * (ev + bv); // h3 = h2 + moe
                    }
                }
            }
        }

        let mut hf = vec![0.0; d];
        ln_row(&x[(t - 1) * d..t * d], &self.final_gain, &self.final_bias, &mut hf);
        let mut logits = vec![f64::NEG_INFINITY; self.cfg.vocab.total() as usize];
        for &id in &self.allowed {
            logits[id as usize] = self.head.row_dot(id as usize, &hf);
        }
        Ok(logits)
    }
}

/// y = gain * (x - mean) / sqrt(var + eps) + bias for one row; same
/// arithmetic as the training layer norm.
fn ln_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) {
    let d = x.len();
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv = 1.0 / (var + crate::numerics::ops::LN_EPS).sqrt();
    for ((o, &xv), (&g, &b)) in out.iter_mut().zip(x).zip(gain.iter().zip(bias)) {
        *o = (xv - mean) * inv * g + b;
    }
}

/// softmax(q k^T) v over every cached position of one plane, walked page by
/// page with an online softmax: running max, rescaled accumulator, one
/// division at the end. Never materializes more than one page of scores.
fn attend_plane(plane: &PlaneCache, q: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
    let hd = q.len();
    let mut m = f64::NEG_INFINITY;
    let mut z = 0.0;
    let mut acc = vec![0.0; hd];
    let mut scores = Vec::new();
    for pi in 0..plane.n_pages() {
        let (ks, vs, used) = plane.page_rows(pi);
        if used == 0 {
            break;
        }
        scores.clear();
        let mut block_max = f64::NEG_INFINITY;
        for j in 0..used {
            let sc = dot(q, &ks[j * hd..(j + 1) * hd]) * scale;
            if !sc.is_finite() {
                return Err(Error::Numeric("non-finite attention score".into()));
            }
            scores.push(sc);
            block_max = block_max.max(sc);
        }
        if block_max > m {
            let factor = if m == f64::NEG_INFINITY { 0.0 } else { (m - block_max).exp() };
            for a in acc.iter_mut() {
                *a *= factor;
            }
            z *= factor;
            m = block_max;
        }
        for (j, &sc) in scores.iter().enumerate() {
            let w = (sc - m).exp();
            z += w;
            for (a, &vv) in acc.iter_mut().zip(&vs[j * hd..(j + 1) * hd]) {
                *a += w * vv;
            }
        }
    }
    if z == 0.0 {
        return Err(Error::Numeric("attention over an empty plane".into()));
    }
    for (o, a) in out.iter_mut().zip(&acc) {
        *o = a / z;
    }
    Ok(())
}

/// Why a session ended (or hasn't).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Live,
    /// EOS reached.
    Finished,
    /// Context window filled; the emitted stream is a truncation.
    Truncated,
    /// Page pool ran dry mid-stream; the session was terminated.
    Overflow,
}

/// One decode step's result. A token may be the session's last: check
/// `status()` before stepping again.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Token(u32),
    Eos,
}

/// One streaming decode session. Emitted tokens are append-only and the
/// timing record is monotone; pages go back to the pool on drop.
#[derive(Debug)]
pub struct Session<'e> {
    engine: &'e Engine,
    dialect_id: u32,
    candidates: Vec<usize>,
    ca_kv: Vec<(Vec<f64>, Vec<f64>)>,
    planes: Vec<PlaneCache>,
    len: usize,
    emitted: Vec<u32>,
    status: SessionStatus,
    pending_logits: Vec<f64>,
    started: Instant,
    first_token_time: Option<Duration>,
    token_times: Vec<Duration>,
}

impl Session<'_> {
    /// Greedy-decodes one token from the cached state. Appends the new
    /// position's K/V (allocating a page per plane on a boundary) and
    /// computes the next logits from the cache only; nothing is recomputed.
    pub fn decode_step(&mut self) -> Result<StepOutcome> {
        if self.status != SessionStatus::Live {
            return Err(Error::Serve(format!(
                "decode_step on a session with status {:?}",
                self.status
            )));
        }
        let next = argmax(&self.pending_logits) as u32;
        if next == self.engine.cfg.vocab.eos() {
            self.status = SessionStatus::Finished;
            return Ok(StepOutcome::Eos);
        }
        self.emitted.push(next);
        let elapsed = self.started.elapsed();
        if self.first_token_time.is_none() {
            self.first_token_time = Some(elapsed);
        }
        self.token_times.push(elapsed);

        if self.len == self.engine.cfg.max_seq_len {
            self.status = SessionStatus::Truncated;
            return Ok(StepOutcome::Token(next));
        }
        if self.planes[0].at_page_boundary() {
            match self.engine.pool.try_alloc(self.planes.len()) {
                Some(mut pages) => {
                    for plane in self.planes.iter_mut() {
                        plane.grant(pages.pop().expect("one page per plane"));
                    }
                }
                None => {
                    self.status = SessionStatus::Overflow;
                    return Ok(StepOutcome::Token(next));
                }
            }
        }
        self.pending_logits = self.engine.forward_rows(
            &mut self.planes,
            &self.ca_kv,
            &self.candidates,
            &[next],
            self.len,
        )?;
        self.len += 1;
        Ok(StepOutcome::Token(next))
    }

    /// Steps until EOS, `max_new` tokens, or a capacity stop. Returns the
    /// tokens emitted by this call.
    pub fn run_greedy(&mut self, max_new: usize) -> Result<Vec<u32>> {
        if max_new == 0 {
            return Err(Error::Config("max_new must be >= 1".into()));
        }
        let mut out = Vec::new();
        while out.len() < max_new && self.status == SessionStatus::Live {
            match self.decode_step()? {
                StepOutcome::Token(t) => out.push(t),
                StepOutcome::Eos => break,
            }
        }
        Ok(out)
    }

    pub fn emitted(&self) -> &[u32] {
        &self.emitted
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn dialect_id(&self) -> u32 {
        self.dialect_id
    }

    /// Positions currently cached (prompt plus ingested tokens).
    pub fn cached_len(&self) -> usize {
        self.len
    }

    /// Masked logits the next step would argmax over.
    pub fn last_logits(&self) -> &[f64] {
        &self.pending_logits
    }

    /// Elapsed time from admission to the first emitted token.
    pub fn first_token_time(&self) -> Option<Duration> {
        self.first_token_time
    }

    /// Elapsed time from admission to each emitted token; nondecreasing.
    pub fn token_times(&self) -> &[Duration] {
        &self.token_times
    }

    /// Ids of every page this session holds, over all planes.
    pub fn page_ids(&self) -> Vec<u32> {
        self.planes.iter().flat_map(|p| p.page_ids()).collect()
    }
}

impl Drop for Session<'_> {
    fn drop(&mut self) {
        for plane in self.planes.iter_mut() {
            self.engine.pool.release(plane.take_pages());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;
    use crate::model::decode::{decode_extend, greedy_decode, DecodeState};
    use crate::model::params::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 16,
            experts_shared: 2,
            experts_per_dialect: 1,
            top_k: 2,
            m_dialect_tokens: 2,
            max_seq_len: 32,
            vocab: build_vocab(6, 4, 2, 2, 1).unwrap(),
            seed: 21,
        }
    }

    fn engine(cfg: &ModelConfig, page_size: usize, n_pages: usize, precision: Precision) -> Engine {
        let p = init_params(cfg).unwrap();
        Engine::new(&p, cfg, &PoolConfig { page_size, n_pages }, precision).unwrap()
    }

    #[test]
    fn float_prefill_logits_match_full_recompute() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let eng = Engine::new(&p, &cfg, &PoolConfig { page_size: 3, n_pages: 64 }, Precision::Float)
            .unwrap();
        let text = [0u32, 3, 5];
        let prompt = [cfg.vocab.speech_id(1, 0), cfg.vocab.speech_id(2, 1)];
        let session = eng.new_session(&text, Some(&prompt), 1).unwrap();

        let item = build_input(&text, &[], Some(&prompt), 1, &cfg.vocab, cfg.max_seq_len).unwrap();
        let mut st = DecodeState::new(&cfg, 1).unwrap();
        let want = decode_extend(&p, &cfg, &mut st, &item.input).unwrap();
        for (a, b) in session.last_logits().iter().zip(&want) {
            if a.is_finite() || b.is_finite() {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn float_step_logits_match_full_recompute() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let eng = Engine::new(&p, &cfg, &PoolConfig { page_size: 1, n_pages: 256 }, Precision::Float)
            .unwrap();
        let text = [2u32, 4];
        let mut session = eng.new_session(&text, None, 0).unwrap();

        let item = build_input(&text, &[], None, 0, &cfg.vocab, cfg.max_seq_len).unwrap();
        let mut st = DecodeState::new(&cfg, 0).unwrap();
        decode_extend(&p, &cfg, &mut st, &item.input).unwrap();
        for _ in 0..5 {
            let tok = match session.decode_step().unwrap() {
                StepOutcome::Token(t) => t,
                StepOutcome::Eos => break,
            };
            if session.status() != SessionStatus::Live {
                break;
            }
            let want = decode_extend(&p, &cfg, &mut st, &[tok]).unwrap();
            for (a, b) in session.last_logits().iter().zip(&want) {
                if a.is_finite() || b.is_finite() {
                    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn streams_match_cached_greedy_for_every_page_size() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        let text = [1u32, 0, 4];
        let (want, _) = greedy_decode(&p, &cfg, &text, None, 1, 8).unwrap();
        for page_size in [1usize, 3, 16, 64] {
            let eng = Engine::new(
                &p,
                &cfg,
                &PoolConfig { page_size, n_pages: 512 },
                Precision::Float,
            )
            .unwrap();
            let mut session = eng.new_session(&text, None, 1).unwrap();
            let got = session.run_greedy(8).unwrap();
            assert_eq!(got, want, "page_size {page_size}");
        }
    }

    #[test]
    fn quantized_engine_emits_allowed_ids_deterministically() {
        let cfg = cfg();
        let eng = engine(&cfg, 4, 128, Precision::Int8);
        let text = [0u32, 5];
        let mut s1 = eng.new_session(&text, None, 0).unwrap();
        let a = s1.run_greedy(6).unwrap();
        drop(s1);
        let mut s2 = eng.new_session(&text, None, 0).unwrap();
        let b = s2.run_greedy(6).unwrap();
        assert_eq!(a, b);
        let v = &cfg.vocab;
        for &t in &a {
            assert!(v.is_speech(t) || v.is_fp(t) || t == v.prolong());
        }
    }

    #[test]
    fn admission_rejection_leaves_pool_unchanged() {
        let cfg = cfg();
        // Prompt needs ceil(7/2)=4 pages x 4 planes = 16; give the pool 15.
        let eng = engine(&cfg, 2, 15, Precision::Float);
        let before = eng.pool().available();
        let err = eng.new_session(&[0, 1, 2, 3, 4], None, 0).unwrap_err();
        assert!(matches!(err, Error::Serve(_)), "{err:?}");
        assert_eq!(eng.pool().available(), before);
        // A smaller prompt still fits afterwards.
        let s = eng.new_session(&[0], None, 0).unwrap();
        assert!(eng.pool().in_use() > 0);
        drop(s);
        assert_eq!(eng.pool().available(), before);
    }

    #[test]
    fn midstream_pool_exhaustion_terminates_only_that_session() {
        let cfg = cfg();
        // The isolated reference stream for the bystander prompt.
        let isolated = {
            let eng = engine(&cfg, 1, 512, Precision::Float);
            let mut s = eng.new_session(&[2, 3], None, 1).unwrap();
            s.run_greedy(6).unwrap()
        };
        // page_size 1: each prefix of 4 takes 4 pages per plane, 4 planes.
        // 40 pages = two admissions (32) + two decode steps (8); the next
        // step starves.
        let eng = engine(&cfg, 1, 40, Precision::Float);
        let mut big = eng.new_session(&[0, 1], None, 0).unwrap();
        let mut bystander = eng.new_session(&[2, 3], None, 1).unwrap();
        assert_eq!(eng.pool().in_use(), 32);
        assert!(matches!(bystander.decode_step().unwrap(), StepOutcome::Token(_)));
        assert!(matches!(big.decode_step().unwrap(), StepOutcome::Token(_)));
        assert_eq!(eng.pool().in_use(), 40);
        assert!(matches!(big.decode_step().unwrap(), StepOutcome::Token(_)));
        assert_eq!(big.status(), SessionStatus::Overflow);
        assert!(matches!(big.decode_step(), Err(Error::Serve(_))));
        // The failed allocation must not have corrupted the bystander or
        // leaked pages: dropping the dead session frees its pages and the
        // bystander finishes with exactly the isolated stream.
        assert_eq!(bystander.status(), SessionStatus::Live);
        drop(big);
        assert_eq!(eng.pool().in_use(), 20);
        let mut rest = bystander.emitted().to_vec();
        rest.extend(bystander.run_greedy(5).unwrap());
        assert_eq!(rest, isolated);
        drop(bystander);
        assert_eq!(eng.pool().in_use(), 0);
    }

    #[test]
    fn interleaved_sessions_match_isolated_streams() {
        let cfg = cfg();
        let eng = engine(&cfg, 2, 256, Precision::Float);
        let text_a = [0u32, 1];
        let text_b = [5u32, 3, 2];
        let isolated_a = {
            let mut s = eng.new_session(&text_a, None, 0).unwrap();
            s.run_greedy(6).unwrap()
        };
        let isolated_b = {
            let mut s = eng.new_session(&text_b, None, 1).unwrap();
            s.run_greedy(6).unwrap()
        };
        let mut sa = eng.new_session(&text_a, None, 0).unwrap();
        let mut sb = eng.new_session(&text_b, None, 1).unwrap();
        for _ in 0..6 {
            if sa.status() == SessionStatus::Live {
                let _ = sa.decode_step().unwrap();
            }
            if sb.status() == SessionStatus::Live {
                let _ = sb.decode_step().unwrap();
            }
        }
        assert_eq!(sa.emitted(), isolated_a.as_slice());
        assert_eq!(sb.emitted(), isolated_b.as_slice());
    }

    #[test]
    fn concurrent_sessions_from_threads_match_isolated_streams() {
        let cfg = cfg();
        let eng = engine(&cfg, 2, 256, Precision::Float);
        let prompts: Vec<Vec<u32>> = vec![vec![0, 1], vec![2, 3], vec![4, 5]];
        let isolated: Vec<Vec<u32>> = prompts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut s = eng.new_session(t, None, (i % 2) as u32).unwrap();
                s.run_greedy(5).unwrap()
            })
            .collect();
        let mut results = vec![Vec::new(); prompts.len()];
        std::thread::scope(|scope| {
            for (i, (t, slot)) in prompts.iter().zip(results.iter_mut()).enumerate() {
                let eng = &eng;
                scope.spawn(move || {
                    let mut s = eng.new_session(t, None, (i % 2) as u32).unwrap();
                    *slot = s.run_greedy(5).unwrap();
                });
            }
        });
        assert_eq!(results, isolated);
        assert_eq!(eng.pool().in_use(), 0);
    }

    #[test]
    fn live_sessions_never_share_pages() {
        let cfg = cfg();
        let eng = engine(&cfg, 2, 64, Precision::Float);
        let s1 = eng.new_session(&[0, 1], None, 0).unwrap();
        let s2 = eng.new_session(&[2, 3], None, 0).unwrap();
        let mut ids = s1.page_ids();
        ids.extend(s2.page_ids());
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert_eq!(eng.pool().in_use(), n);
    }

    #[test]
    fn timing_is_monotone_and_anchored_to_first_token() {
        let cfg = cfg();
        let eng = engine(&cfg, 4, 64, Precision::Float);
        let mut s = eng.new_session(&[1, 2, 3], None, 0).unwrap();
        let _ = s.run_greedy(6).unwrap();
        let times = s.token_times();
        if times.is_empty() {
            return; // immediate EOS: nothing to check
        }
        assert_eq!(s.first_token_time().unwrap(), times[0]);
        for w in times.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(times.len(), s.emitted().len());
    }

    #[test]
    fn capacity_truncation_is_flagged() {
        let mut cfg = cfg();
        cfg.max_seq_len = 8;
        let eng = engine(&cfg, 2, 64, Precision::Float);
        // Prefix BOS t t SEP = 4; four more positions fill the window.
        let mut s = eng.new_session(&[0, 1], None, 0).unwrap();
        let out = s.run_greedy(20).unwrap();
        match s.status() {
            SessionStatus::Truncated => assert_eq!(out.len() + 4, cfg.max_seq_len + 1),
            SessionStatus::Finished => {} // EOS before the wall is also legal
            other => panic!("unexpected status {other:?}"),
        }
    }
}
