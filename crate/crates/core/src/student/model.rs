use super::cache::KVCache;
use super::mask::train_mask;
use super::params::{LayerLayout, Layout, StudentParams};
use super::StudentConfig;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::{ArdError, Result};

/// Splits a `(C, H, W)` state into non-overlapping patches, one row per
/// token (row-major over the patch grid), features ordered `(c, py, px)`.
pub fn patchify<T: Real>(cfg: &StudentConfig, x: &[T]) -> Result<Vec<T>> {
    let (c, h, w) = cfg.image;
    if x.len() != c * h * w {
        return Err(ArdError::dim(format!("state of length {}, expected {}", x.len(), c * h * w)));
    }
    let p = cfg.patch;
    let (gh, gw) = (h / p, w / p);
    let pd = cfg.patch_dim();
    let mut out = vec![T::zero(); gh * gw * pd];
    for gy in 0..gh {
        for gx in 0..gw {
            let tok = gy * gw + gx;
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        out[tok * pd + ch * p * p + py * p + px] = x[ch * h * w + (gy * p + py) * w + gx * p + px];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Real>(cfg: &StudentConfig, tokens: &[T]) -> Result<Vec<T>> {
    let (c, h, w) = cfg.image;
    let p = cfg.patch;
    let (gh, gw) = (h / p, w / p);
    let pd = cfg.patch_dim();
    if tokens.len() != gh * gw * pd {
        return Err(ArdError::dim(format!("{} token features, expected {}", tokens.len(), gh * gw * pd)));
    }
    let mut out = vec![T::zero(); c * h * w];
    for gy in 0..gh {
        for gx in 0..gw {
            let tok = gy * gw + gx;
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        out[ch * h * w + (gy * p + py) * w + gx * p + px] = tokens[tok * pd + ch * p * p + py * p + px];
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn load_params<T: Real>(tape: &mut Tape<T>, params: &StudentParams<T>, trainable: bool) -> Result<Vec<Var>> {
    params.tensors.iter().map(|t| tape.leaf(t, trainable)).collect()
}

/// Shared linear patch embedding of one state: `[tokens × d_model]`.
pub fn patch_embed(params: &StudentParams, cfg: &StudentConfig, x: &[f32]) -> Result<Tensor> {
    let lay = Layout::new(cfg);
    let mut tape = Tape::new();
    let patches = tape.constant(&Tensor::new(vec![cfg.tokens(), cfg.patch_dim()], patchify(cfg, x)?)?)?;
    let w = tape.constant(&params.tensors[lay.patch_w])?;
    let b = tape.constant(&params.tensors[lay.patch_b])?;
    let e = tape.matmul(patches, w)?;
    let e = tape.add(e, b)?;
    Ok(tape.value(e).clone())
}

struct Ctx<'a> {
    cfg: &'a StudentConfig,
    lay: Layout,
    v: Vec<Var>,
}

impl Ctx<'_> {
    fn p(&self, i: usize) -> Var {
        self.v[i]
    }
}

/// Token features of `states` with positional and token-wise time
/// embeddings added. Returns `(patches, embedded)`.
fn embed<T: Real>(tape: &mut Tape<T>, ctx: &Ctx, states: &[&[T]], block_steps: &[usize]) -> Result<(Var, Var)> {
    let cfg = ctx.cfg;
    let tok = cfg.tokens();
    let mut flat = Vec::with_capacity(states.len() * tok * cfg.patch_dim());
    for s in states {
        flat.extend(patchify(cfg, s)?);
    }
    for &s in block_steps {
        if s == 0 || s > cfg.steps {
            return Err(ArdError::Range { what: "input step", detail: format!("{s} not in 1..={}", cfg.steps) });
        }
    }
    let patches = tape.constant(&Tensor::new(vec![states.len() * tok, cfg.patch_dim()], flat)?)?;
    let x = tape.matmul(patches, ctx.p(ctx.lay.patch_w))?;
    let x = tape.add(x, ctx.p(ctx.lay.patch_b))?;
    let pos_idx: Vec<usize> = (0..states.len()).flat_map(|_| 0..tok).collect();
    let pos = tape.gather_rows(ctx.p(ctx.lay.pos), &pos_idx)?;
    let time_idx: Vec<usize> = block_steps.iter().flat_map(|&s| std::iter::repeat_n(s, tok)).collect();
    let time = tape.gather_rows(ctx.p(ctx.lay.time), &time_idx)?;
    let x = tape.add(x, pos)?;
    let x = tape.add(x, time)?;
    Ok((patches, x))
}

/// Activated class + current-step conditioning, one row per query block.
fn conditioning<T: Real>(tape: &mut Tape<T>, ctx: &Ctx, class: usize, query_steps: &[usize]) -> Result<Var> {
    if class >= ctx.cfg.num_classes {
        return Err(ArdError::UnknownClass(class));
    }
    let c = tape.gather_rows(ctx.p(ctx.lay.class_emb), &vec![class; query_steps.len()])?;
    let s = tape.gather_rows(ctx.p(ctx.lay.step_emb), query_steps)?;
    let c = tape.add(c, s)?;
    tape.gelu(c)
}

/// Per-token modulation rows `[blocks·tokens × k·d]`.
fn modulation<T: Real>(tape: &mut Tape<T>, cond: Var, w: Var, b: Var, blocks: usize, tokens: usize) -> Result<Var> {
    let m = tape.matmul(cond, w)?;
    let m = tape.add(m, b)?;
    let idx: Vec<usize> = (0..blocks).flat_map(|j| std::iter::repeat_n(j, tokens)).collect();
    tape.gather_rows(m, &idx)
}

fn chunk<T: Real>(tape: &mut Tape<T>, m: Var, i: usize, d: usize) -> Result<Var> {
    tape.slice_cols(m, i * d, (i + 1) * d)
}

/// `LN(x)·(1 + scale) + shift`.
fn modulated_norm<T: Real>(tape: &mut Tape<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let h = tape.layernorm(x, None, None)?;
    let hs = tape.mul(h, scale)?;
    let h = tape.add(h, hs)?;
    tape.add(h, shift)
}

/// Multi-head attention; returns the concatenated head outputs and the
/// per-head attention probabilities.
fn attention<T: Real>(
    tape: &mut Tape<T>,
    cfg: &StudentConfig,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let dh = cfg.head_dim();
    let inv = T::of(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(cfg.heads);
    let mut probs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = tape.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = tape.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = tape.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, inv)?;
        let p = tape.softmax_rows(scores, mask)?;
        outs.push(tape.matmul(p, vh)?);
        probs.push(p);
    }
    Ok((tape.concat_cols(&outs)?, probs))
}

struct LayerIn {
    q: Var,
    k: Var,
    v: Var,
    gate1: Var,
    shift2: Var,
    scale2: Var,
    gate2: Var,
}

fn layer_pre<T: Real>(
    tape: &mut Tape<T>,
    ctx: &Ctx,
    ll: &LayerLayout,
    x: Var,
    cond: Var,
    blocks: usize,
) -> Result<LayerIn> {
    let d = ctx.cfg.d_model;
    let m = modulation(tape, cond, ctx.p(ll.ada_w), ctx.p(ll.ada_b), blocks, ctx.cfg.tokens())?;
    let shift1 = chunk(tape, m, 0, d)?;
    let scale1 = chunk(tape, m, 1, d)?;
    let gate1 = chunk(tape, m, 2, d)?;
    let shift2 = chunk(tape, m, 3, d)?;
    let scale2 = chunk(tape, m, 4, d)?;
    let gate2 = chunk(tape, m, 5, d)?;
    let h = modulated_norm(tape, x, shift1, scale1)?;
    let qkv = tape.matmul(h, ctx.p(ll.qkv_w))?;
    let qkv = tape.add(qkv, ctx.p(ll.qkv_b))?;
    Ok(LayerIn {
        q: tape.slice_cols(qkv, 0, d)?,
        k: tape.slice_cols(qkv, d, 2 * d)?,
        v: tape.slice_cols(qkv, 2 * d, 3 * d)?,
        gate1,
        shift2,
        scale2,
        gate2,
    })
}

fn layer_post<T: Real>(
    tape: &mut Tape<T>,
    ctx: &Ctx,
    ll: &LayerLayout,
    x: Var,
    li: &LayerIn,
    attn: Var,
) -> Result<Var> {
    let a = tape.matmul(attn, ctx.p(ll.proj_w))?;
    let a = tape.add(a, ctx.p(ll.proj_b))?;
    let a = tape.mul(a, li.gate1)?;
    let x = tape.add(x, a)?;
    let h = modulated_norm(tape, x, li.shift2, li.scale2)?;
    let h = tape.matmul(h, ctx.p(ll.mlp1_w))?;
    let h = tape.add(h, ctx.p(ll.mlp1_b))?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, ctx.p(ll.mlp2_w))?;
    let h = tape.add(h, ctx.p(ll.mlp2_b))?;
    let h = tape.mul(h, li.gate2)?;
    tape.add(x, h)
}

/// Final adaLN, linear head and skip connection; output is in patch space.
fn head<T: Real>(tape: &mut Tape<T>, ctx: &Ctx, x: Var, cond: Var, patches: Var, blocks: usize) -> Result<Var> {
    let d = ctx.cfg.d_model;
    let m = modulation(tape, cond, ctx.p(ctx.lay.final_ada_w), ctx.p(ctx.lay.final_ada_b), blocks, ctx.cfg.tokens())?;
    let shift = chunk(tape, m, 0, d)?;
    let scale = chunk(tape, m, 1, d)?;
    let h = modulated_norm(tape, x, shift, scale)?;
    let o = tape.matmul(h, ctx.p(ctx.lay.head_w))?;
    let o = tape.add(o, ctx.p(ctx.lay.head_b))?;
    tape.add(o, patches)
}

/// Tape handles produced by the parallel (masked) pass.
pub struct TrainForward {
    /// Patch-space predictions `[S·tokens × patch_dim]`, blocks ordered
    /// `S, …, 1`.
    pub pred: Var,
    /// Patch-space inputs, same layout as `pred`.
    pub patches: Var,
    /// Attention probabilities per layer and head, `[S·tokens × S·tokens]`.
    pub attention: Vec<Vec<Var>>,
}

/// One masked pass over the whole input trajectory `x_{τ_S}, …, x_{τ_1}`.
/// Parameters are loaded as trainable leaves; their vars are returned.
pub fn forward_train_tape<T: Real>(
    tape: &mut Tape<T>,
    params: &StudentParams<T>,
    cfg: &StudentConfig,
    inputs: &[&[T]],
    class: usize,
    trainable: bool,
) -> Result<(TrainForward, Vec<Var>)> {
    if inputs.len() != cfg.steps {
        return Err(ArdError::dim(format!("{} input blocks for S = {}", inputs.len(), cfg.steps)));
    }
    let ctx = Ctx { cfg, lay: Layout::new(cfg), v: load_params(tape, params, trainable)? };
    let s_total = cfg.steps;
    let tok = cfg.tokens();
    let steps: Vec<usize> = (1..=s_total).rev().collect();
    let (patches, mut x) = embed(tape, &ctx, inputs, &steps)?;
    let cond = conditioning(tape, &ctx, class, &steps)?;
    let mut attn_probs = Vec::with_capacity(cfg.layers);
    for (l, ll) in ctx.lay.layers.iter().enumerate() {
        let li = layer_pre(tape, &ctx, ll, x, cond, s_total)?;
        let mask = train_mask(s_total, cfg.mask, l, cfg.n_history, tok);
        let (attn, probs) = attention(tape, cfg, li.q, li.k, li.v, Some(&mask))?;
        x = layer_post(tape, &ctx, ll, x, &li, attn)?;
        attn_probs.push(probs);
    }
    let pred = head(tape, &ctx, x, cond, patches, s_total)?;
    Ok((TrainForward { pred, patches, attention: attn_probs }, ctx.v))
}

fn split_blocks<T: Real>(cfg: &StudentConfig, flat: &[T]) -> Result<Vec<Vec<T>>> {
    let per = cfg.tokens() * cfg.patch_dim();
    flat.chunks(per).map(|c| unpatchify(cfg, c)).collect()
}

/// Network outputs `ŷ_S, …, ŷ_1` for teacher-forced inputs.
pub fn forward_train<T: Real>(
    params: &StudentParams<T>,
    cfg: &StudentConfig,
    inputs: &[&[T]],
    class: usize,
) -> Result<Vec<Vec<T>>> {
    let mut tape = Tape::new();
    let (fw, _) = forward_train_tape(&mut tape, params, cfg, inputs, class, false)?;
    split_blocks(cfg, tape.value(fw.pred).data())
}

/// As [`forward_train`], also returning attention probabilities
/// `[layer][head]` of shape `[S·tokens × S·tokens]`.
pub fn forward_train_with_attention(
    params: &StudentParams,
    cfg: &StudentConfig,
    inputs: &[&[f32]],
    class: usize,
) -> Result<(Vec<Vec<f32>>, Vec<Vec<Tensor>>)> {
    let mut tape = Tape::new();
    let (fw, _) = forward_train_tape(&mut tape, params, cfg, inputs, class, false)?;
    let preds = split_blocks(cfg, tape.value(fw.pred).data())?;
    let attn = fw.attention.iter().map(|heads| heads.iter().map(|&p| tape.value(p).clone()).collect()).collect();
    Ok((preds, attn))
}

/// Output of one cached inference step.
pub type StepOutput = Vec<f32>;

/// Processes the state consumed at step `s`, attending to the cached history
/// allowed by the mask option, and appends this block's keys/values to the
/// cache for the history-aware layers.
pub fn forward_step(
    params: &StudentParams,
    cfg: &StudentConfig,
    x_s: &[f32],
    s: usize,
    cache: &mut KVCache,
    class: usize,
) -> Result<StepOutput> {
    cache.check(cfg, s)?;
    let mut tape = Tape::new();
    let ctx = Ctx { cfg, lay: Layout::new(cfg), v: load_params(&mut tape, params, false)? };
    let (patches, mut x) = embed(&mut tape, &ctx, &[x_s], &[s])?;
    let cond = conditioning(&mut tape, &ctx, class, &[s])?;
    let mut fresh = Vec::with_capacity(cfg.n_history);
    for (l, ll) in ctx.lay.layers.iter().enumerate() {
        let li = layer_pre(&mut tape, &ctx, ll, x, cond, 1)?;
        let history = cache.history(l, s);
        let (k, v) = if history.is_empty() {
            (li.k, li.v)
        } else {
            let mut ks = Vec::with_capacity(history.len() + 1);
            let mut vs = Vec::with_capacity(history.len() + 1);
            for b in &history {
                ks.push(tape.constant(&b.keys)?);
                vs.push(tape.constant(&b.values)?);
            }
            ks.push(li.k);
            vs.push(li.v);
            (tape.concat_rows(&ks)?, tape.concat_rows(&vs)?)
        };
        let (attn, _) = attention(&mut tape, cfg, li.q, k, v, None)?;
        if l < cfg.n_history {
            fresh.push((l, tape.value(li.k).clone(), tape.value(li.v).clone()));
        }
        x = layer_post(&mut tape, &ctx, ll, x, &li, attn)?;
    }
    let pred = head(&mut tape, &ctx, x, cond, patches, 1)?;
    for (l, k, v) in fresh {
        cache.store(l, s, k, v);
    }
    cache.advance();
    unpatchify(cfg, tape.value(pred).data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::student::{MaskOption, PredictionTarget};
    use rand::Rng;

    fn small(mask: MaskOption, n_history: usize, steps: usize) -> StudentConfig {
        StudentConfig {
            layers: 3,
            n_history,
            d_model: 16,
            heads: 2,
            patch: 2,
            image: (1, 4, 4),
            steps,
            mask,
            target: PredictionTarget::NextSample,
            num_classes: 3,
            mlp_ratio: 2,
        }
    }

    fn states(cfg: &StudentConfig, seed: u64) -> Vec<Vec<f32>> {
        let mut r = crate::rng::rng_from_seed(seed);
        (0..cfg.steps).map(|_| (0..cfg.dim()).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
    }

    fn refs(v: &[Vec<f32>]) -> Vec<&[f32]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn patchify_roundtrip_and_token_count() {
        let cfg = StudentConfig { image: (2, 8, 8), ..Default::default() };
        let x: Vec<f32> = (0..128).map(|i| i as f32).collect();
        let p = patchify(&cfg, &x).unwrap();
        assert_eq!(p.len() / cfg.patch_dim(), 16);
        assert_eq!(&p[..4], &[0.0, 1.0, 8.0, 9.0]);
        assert_eq!(unpatchify(&cfg, &p).unwrap(), x);
    }

    #[test]
    fn zero_image_embeds_to_bias_rows() {
        let cfg = StudentConfig::default();
        let p = StudentParams::<f32>::random(&cfg, 3, 0.5);
        let e = patch_embed(&p, &cfg, &vec![0.0; 64]).unwrap();
        let lay = Layout::new(&cfg);
        assert_eq!(e.shape(), &[16, 64]);
        for row in e.data().chunks(64) {
            assert_eq!(row, p.tensors[lay.patch_b].data());
        }
        let x: Vec<f32> = (0..64).map(|i| (i as f32).sin()).collect();
        assert_eq!(patch_embed(&p, &cfg, &x).unwrap(), patch_embed(&p, &cfg, &x).unwrap());
        let mut y = x.clone();
        y[5] += 0.5;
        assert_ne!(patch_embed(&p, &cfg, &x).unwrap(), patch_embed(&p, &cfg, &y).unwrap());
    }

    #[test]
    fn wrong_block_count_is_rejected() {
        let cfg = small(MaskOption::M4, 2, 3);
        let p = StudentParams::<f32>::random(&cfg, 0, 0.1);
        let xs = states(&cfg, 1);
        assert!(forward_train(&p, &cfg, &refs(&xs[..2]), 0).is_err());
        assert!(matches!(forward_train(&p, &cfg, &refs(&xs), 7), Err(ArdError::UnknownClass(7))));
    }

    #[test]
    fn fresh_student_is_identity() {
        let cfg = small(MaskOption::M4, 2, 3);
        let p = StudentParams::<f32>::init(&cfg, 0);
        let xs = states(&cfg, 2);
        let out = forward_train(&p, &cfg, &refs(&xs), 1).unwrap();
        assert_eq!(out, xs);
    }

    #[test]
    fn step_path_matches_parallel_pass() {
        for mask in MaskOption::ALL {
            for n in [0, 1, 3] {
                let cfg = small(mask, n, 4);
                let p = StudentParams::<f32>::random(&cfg, 7, 0.3);
                let xs = states(&cfg, 8);
                let par = forward_train(&p, &cfg, &refs(&xs), 2).unwrap();
                let mut cache = KVCache::new(&cfg);
                for (j, x) in xs.iter().enumerate() {
                    let s = cfg.steps - j;
                    let y = forward_step(&p, &cfg, x, s, &mut cache, 2).unwrap();
                    let diff = y.iter().zip(&par[j]).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
                    assert!(diff <= 1e-5, "{mask} N={n} s={s}: {diff}");
                }
            }
        }
    }

    #[test]
    fn cache_bookkeeping_for_m4() {
        let cfg = small(MaskOption::M4, 2, 4);
        let p = StudentParams::<f32>::random(&cfg, 1, 0.2);
        let xs = states(&cfg, 3);
        let mut cache = KVCache::new(&cfg);
        assert!(matches!(forward_step(&p, &cfg, &xs[0], 3, &mut cache, 0), Err(ArdError::CacheState(_))));
        for (j, x) in xs.iter().enumerate() {
            let s = cfg.steps - j;
            forward_step(&p, &cfg, x, s, &mut cache, 0).unwrap();
            for l in 0..cfg.layers {
                let want = if l < cfg.n_history { (cfg.steps - s + 1) * cfg.tokens() } else { 0 };
                assert_eq!(cache.key_len(l), want);
            }
        }
        let total: usize = (1..=cfg.steps).map(|s| (cfg.steps - s) * cfg.tokens()).sum();
        assert_eq!(cache.rows_read(0), total);
        assert_eq!(cache.rows_read(2), 0);
    }

    #[test]
    fn later_blocks_never_leak_into_earlier_outputs() {
        for (mask, n) in MaskOption::ALL.into_iter().flat_map(|m| [(m, 1), (m, 2)]) {
            let cfg = small(mask, n, 4);
            let p = StudentParams::<f32>::random(&cfg, 4, 0.3);
            let xs = states(&cfg, 5);
            let base = forward_train(&p, &cfg, &refs(&xs), 0).unwrap();
            for k in 0..cfg.steps {
                let mut ys = xs.clone();
                ys[k][3] += 0.7;
                let out = forward_train(&p, &cfg, &refs(&ys), 0).unwrap();
                for j in 0..k {
                    assert_eq!(out[j], base[j], "{mask}: block {k} leaked into block {j}");
                }
                let s_query = cfg.steps - k;
                for j in (k + 1..cfg.steps).filter(|_| n == 1) {
                    let allowed = allowed_steps_for(&cfg, cfg.steps - j);
                    if !allowed.contains(&s_query) {
                        assert_eq!(out[j], base[j], "{mask}: block {k} visible to block {j}");
                    }
                }
            }
        }
    }

    fn allowed_steps_for(cfg: &StudentConfig, s: usize) -> Vec<usize> {
        crate::student::allowed_steps(cfg.mask, cfg.steps, s)
    }

    #[test]
    fn no_history_layers_collapse_to_m1() {
        let base = small(MaskOption::M1, 0, 3);
        let p = StudentParams::<f32>::random(&base, 9, 0.3);
        let xs = states(&base, 10);
        let want = forward_train(&p, &base, &refs(&xs), 1).unwrap();
        for mask in MaskOption::ALL {
            let cfg = StudentConfig { mask, ..base.clone() };
            assert_eq!(forward_train(&p, &cfg, &refs(&xs), 1).unwrap(), want);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let cfg = small(MaskOption::M4, 2, 3);
        let p = StudentParams::<f64>::random(&cfg, 11, 0.2);
        let xs: Vec<Vec<f64>> = states(&cfg, 12).into_iter().map(|v| v.into_iter().map(f64::from).collect()).collect();
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let loss = |p: &StudentParams<f64>| {
            let mut tape = Tape::new();
            let (fw, vars) = forward_train_tape(&mut tape, p, &cfg, &xr, 2, true).unwrap();
            let sq = tape.mul(fw.pred, fw.pred).unwrap();
            let l = tape.mean(sq).unwrap();
            (tape, l, vars)
        };
        let (mut tape, l, vars) = loss(&p);
        let grads = tape.backward(l).unwrap();
        let mut r = crate::rng::rng_from_seed(13);
        for (ti, var) in vars.iter().enumerate() {
            let g = grads.get(*var);
            for _ in 0..2 {
                let k = r.random_range(0..p.tensors[ti].numel());
                let h = 1e-6;
                let mut plus = p.clone();
                plus.tensors[ti].data_mut()[k] += h;
                let mut minus = p.clone();
                minus.tensors[ti].data_mut()[k] -= h;
                let eval = |q: &StudentParams<f64>| {
                    let (t, l, _) = loss(q);
                    t.value(l).item()
                };
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = g.data()[k];
                let tol = 1e-3 * fd.abs().max(an.abs()).max(1e-6);
                assert!((fd - an).abs() <= tol, "tensor {ti}[{k}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn parameter_count_matches_layout_formula() {
        let cfg = StudentConfig::default();
        let (d, pd, t, s, nc, r) = (64, 4, 16, 4, 4, 4);
        let per_layer = d * 6 * d + 6 * d + d * 3 * d + 3 * d + d * d + d + 2 * r * d * d + r * d + d;
        let want =
            pd * d + d + t * d + (s + 1) * d + nc * d + (s + 1) * d + 8 * per_layer + d * 2 * d + 2 * d + d * pd + pd;
        assert_eq!(StudentParams::<f32>::init(&cfg, 0).count(), want);
    }
}
