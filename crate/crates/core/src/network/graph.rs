//! Forward pass with saved activations and the matching reverse pass.

use super::ops::{
    conv_backward, conv_forward, maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace,
    sigmoid, upsample2, upsample2_backward, ConvCache,
};
use super::{Branches, ConvSlot, DecoderSlots, ModelState};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Branch probabilities; absent branches are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub q_fg: Raster,
    pub q_bg: Option<Raster>,
    pub q_mix: Option<Raster>,
}

/// Loss gradients with respect to each branch's probabilities.
#[derive(Debug, Clone)]
pub struct PredictionGrads {
    pub d_fg: Raster,
    pub d_bg: Option<Raster>,
    pub d_mix: Option<Raster>,
}

struct EncoderLevel {
    conv1: ConvCache,
    act1: Raster,
    conv2: ConvCache,
    out: Raster,
    pool: Option<(Vec<u32>, (usize, usize, usize))>,
}

struct DecoderLevel {
    up: ConvCache,
    up_act: Raster,
    merge: ConvCache,
    out: Raster,
}

struct DecoderCache {
    /// Indexed by resolution level.
    levels: Vec<Option<DecoderLevel>>,
    head: ConvCache,
    q: Raster,
}

/// Everything [`backward`] needs from a forward pass.
pub struct ForwardCache {
    encoder: Vec<EncoderLevel>,
    fg: DecoderCache,
    bg: Option<DecoderCache>,
    mix: Option<(ConvCache, Raster)>,
}

fn conv(model: &ModelState, slot: &ConvSlot, x: &Raster) -> (Raster, ConvCache) {
    let p = model.params();
    conv_forward(x, &p[slot.w.clone()], &p[slot.b.clone()], slot.cout, slot.kernel)
}

fn conv_grad(
    model: &ModelState,
    slot: &ConvSlot,
    dout: &Raster,
    cache: &ConvCache,
    grads: &mut [f64],
    need_dx: bool,
) -> Option<Raster> {
    let p = model.params();
    let (gw, gb) = split_two(grads, slot);
    conv_backward(dout, cache, &p[slot.w.clone()], gw, gb, need_dx)
}

fn split_two<'a>(grads: &'a mut [f64], slot: &ConvSlot) -> (&'a mut [f64], &'a mut [f64]) {
    // weights are immediately followed by biases in the layout
    debug_assert_eq!(slot.w.end, slot.b.start);
    let (w, rest) = grads[slot.w.start..slot.b.end].split_at_mut(slot.w.len());
    (w, rest)
}

fn decode(model: &ModelState, slots: &DecoderSlots, skips: &[&Raster]) -> DecoderCache {
    let depth = model.arch().depth;
    let mut levels: Vec<Option<DecoderLevel>> = (0..depth).map(|_| None).collect();
    let mut d = skips[depth].clone();
    for l in (0..depth).rev() {
        let u = upsample2(&d);
        let (mut up_act, up) = conv(model, &slots.up[l], &u);
        relu_inplace(&mut up_act);
        let cat = Raster::concat_channels(&[&up_act, skips[l]]).expect("matching spatial shape");
        let (mut out, merge) = conv(model, &slots.merge[l], &cat);
        relu_inplace(&mut out);
        d = out.clone();
        levels[l] = Some(DecoderLevel {
            up,
            up_act,
            merge,
            out,
        });
    }
    let (logits, head) = conv(model, &slots.head, &d);
    let q = logits.map(sigmoid);
    DecoderCache { levels, head, q }
}

pub fn forward_cached(
    model: &ModelState,
    x: &Raster,
    branches: Branches,
) -> Result<(Predictions, ForwardCache)> {
    model.check_input(x)?;
    if branches.mix && !branches.bg {
        return Err(Error::domain("mixing head requires the background branch"));
    }
    let layout = model.layout();
    let depth = model.arch().depth;
    let mut encoder = Vec::with_capacity(depth + 1);
    let mut input = x.clone();
    for (l, slots) in layout.encoder.iter().enumerate() {
        let (mut act1, conv1) = conv(model, &slots[0], &input);
        relu_inplace(&mut act1);
        let (mut out, conv2) = conv(model, &slots[1], &act1);
        relu_inplace(&mut out);
        let pool = if l < depth {
            let (pooled, arg) = maxpool2(&out);
            input = pooled;
            Some((arg, out.shape()))
        } else {
            None
        };
        encoder.push(EncoderLevel {
            conv1,
            act1,
            conv2,
            out,
            pool,
        });
    }
    let skips: Vec<&Raster> = encoder.iter().map(|e| &e.out).collect();
    let fg = decode(model, &layout.fg, &skips);
    let bg = branches.bg.then(|| decode(model, &layout.bg, &skips));
    let mix = match (&bg, branches.mix) {
        (Some(bg), true) => {
            let cat = Raster::concat_channels(&[&fg.q, &bg.q]).expect("same shape");
            let (logits, cache) = conv(model, &layout.mix, &cat);
            Some((cache, logits.map(sigmoid)))
        }
        _ => None,
    };
    let preds = Predictions {
        q_fg: fg.q.clone(),
        q_bg: bg.as_ref().map(|b| b.q.clone()),
        q_mix: mix.as_ref().map(|m| m.1.clone()),
    };
    Ok((
        preds,
        ForwardCache {
            encoder,
            fg,
            bg,
            mix,
        },
    ))
}

fn sigmoid_backward(dq: &Raster, q: &Raster) -> Raster {
    let mut d = dq.clone();
    for (g, &p) in d.data_mut().iter_mut().zip(q.data()) {
        *g *= p * (1.0 - p);
    }
    d
}

fn add_into(acc: &mut Raster, g: &Raster) {
    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Reverse pass through one decoder; accumulates gradients on the encoder skips.
fn decode_backward(
    model: &ModelState,
    slots: &DecoderSlots,
    cache: &DecoderCache,
    dq: &Raster,
    skip_grads: &mut [Raster],
    grads: &mut [f64],
) {
    let depth = model.arch().depth;
    let dlogits = sigmoid_backward(dq, &cache.q);
    let mut dd = conv_grad(model, &slots.head, &dlogits, &cache.head, grads, true).expect("dx");
    for l in 0..depth {
        let lvl = cache.levels[l].as_ref().expect("level cached");
        relu_backward_inplace(&mut dd, &lvl.out);
        let dcat = conv_grad(model, &slots.merge[l], &dd, &lvl.merge, grads, true).expect("dx");
        let up_c = lvl.up_act.channels();
        let plane = dcat.plane_len();
        let (h, w) = (dcat.height(), dcat.width());
        let mut dup = Raster::from_vec(up_c, h, w, dcat.data()[..up_c * plane].to_vec()).expect("shape");
        let dskip = Raster::from_vec(dcat.channels() - up_c, h, w, dcat.data()[up_c * plane..].to_vec())
            .expect("shape");
        add_into(&mut skip_grads[l], &dskip);
        relu_backward_inplace(&mut dup, &lvl.up_act);
        let du = conv_grad(model, &slots.up[l], &dup, &lvl.up, grads, true).expect("dx");
        dd = upsample2_backward(&du);
    }
    add_into(&mut skip_grads[depth], &dd);
}

/// Gradient of a scalar loss with respect to every parameter, given the loss
/// gradients on the branch probabilities.
pub fn backward(model: &ModelState, cache: &ForwardCache, dq: &PredictionGrads) -> Result<Vec<f64>> {
    let layout = model.layout();
    let depth = model.arch().depth;
    let mut grads = vec![0.0; model.param_count()];
    let mut d_fg = dq.d_fg.clone();
    let mut d_bg = dq.d_bg.clone();
    if d_fg.shape() != cache.fg.q.shape() {
        return Err(Error::domain("foreground gradient shape mismatch"));
    }
    if let Some(dm) = &dq.d_mix {
        let (mix_cache, q_mix) = cache
            .mix
            .as_ref()
            .ok_or_else(|| Error::domain("mix gradient supplied but mix branch was not run"))?;
        let dlogits = sigmoid_backward(dm, q_mix);
        let dcat = conv_grad(model, &layout.mix, &dlogits, mix_cache, &mut grads, true).expect("dx");
        let c = d_fg.channels();
        let plane = d_fg.plane_len();
        for (g, &v) in d_fg.data_mut().iter_mut().zip(&dcat.data()[..c * plane]) {
            *g += v;
        }
        let bg_part = Raster::from_vec(c, d_fg.height(), d_fg.width(), dcat.data()[c * plane..].to_vec())
            .expect("shape");
        match &mut d_bg {
            Some(b) => add_into(b, &bg_part),
            None => d_bg = Some(bg_part),
        }
    }

    let mut skip_grads: Vec<Raster> = cache
        .encoder
        .iter()
        .map(|e| {
            let (c, h, w) = e.out.shape();
            Raster::zeros(c, h, w)
        })
        .collect();
    decode_backward(model, &layout.fg, &cache.fg, &d_fg, &mut skip_grads, &mut grads);
    if let Some(db) = &d_bg {
        let bgc = cache
            .bg
            .as_ref()
            .ok_or_else(|| Error::domain("bg gradient supplied but bg branch was not run"))?;
        decode_backward(model, &layout.bg, bgc, db, &mut skip_grads, &mut grads);
    }

    let mut carry: Option<Raster> = None;
    for l in (0..=depth).rev() {
        let lvl = &cache.encoder[l];
        let mut dout = skip_grads[l].clone();
        if let (Some(dpooled), Some((arg, shape))) = (&carry, &lvl.pool) {
            add_into(&mut dout, &maxpool2_backward(dpooled, arg, *shape));
        }
        relu_backward_inplace(&mut dout, &lvl.out);
        let slots = &layout.encoder[l];
        let mut dact1 = conv_grad(model, &slots[1], &dout, &lvl.conv2, &mut grads, true).expect("dx");
        relu_backward_inplace(&mut dact1, &lvl.act1);
        carry = conv_grad(model, &slots[0], &dact1, &lvl.conv1, &mut grads, l > 0);
    }
    Ok(grads)
}
