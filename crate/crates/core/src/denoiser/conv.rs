//! Small convolutional encoder–decoder with a sinusoidal step embedding.
//!
//! ```text
//! e      = sinusoid(t)                       (embed_dim)
//! m      = W2 silu(W1 e + c1) + c2           (scale1, shift1, scale2, shift2, skip gain)
//! h1     = silu(conv1([x, P]) * (1 + scale1) + shift1)
//! h2     = silu(conv2(h1) * (1 + scale2) + shift2)
//! eps    = conv3(h2) + gain * x
//! ```
//!
//! `P` are learned full-resolution position maps, which let a memorising model place
//! content at fixed pixel locations. All convolutions are 3×3 with zero padding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ArchDescriptor, Denoiser, TrainableDenoiser};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::standard_normal;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub position_channels: usize,
    pub embed_dim: usize,
    pub embed_hidden: usize,
}

impl ConvConfig {
    /// Desk-scale defaults for a `channels x height x width` input.
    pub fn desk(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            hidden: 16,
            position_channels: 4,
            embed_dim: 16,
            embed_hidden: 32,
        }
    }

    fn layout(&self) -> Layout {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let hw = self.height * self.width;
        let cin = self.channels + self.position_channels;
        let f = self.hidden;
        let film = 4 * f + self.channels;
        let pos = take(self.position_channels * hw);
        let w1 = take(f * cin * 9);
        let b1 = take(f);
        let w2 = take(f * f * 9);
        let b2 = take(f);
        let w3 = take(self.channels * f * 9);
        let b3 = take(self.channels);
        let tw1 = take(self.embed_hidden * self.embed_dim);
        let tb1 = take(self.embed_hidden);
        let tw2 = take(film * self.embed_hidden);
        let tb2 = take(film);
        Layout {
            pos,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            tw1,
            tb1,
            tw2,
            tb2,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
struct Layout {
    pos: std::ops::Range<usize>,
    w1: std::ops::Range<usize>,
    b1: std::ops::Range<usize>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
    w3: std::ops::Range<usize>,
    b3: std::ops::Range<usize>,
    tw1: std::ops::Range<usize>,
    tb1: std::ops::Range<usize>,
    tw2: std::ops::Range<usize>,
    tb2: std::ops::Range<usize>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiser<S> {
    config: ConvConfig,
    params: Vec<S>,
}

/// Intermediate values kept for the backward pass.
struct Trace<S> {
    embed: Vec<S>,
    pre_u: Vec<S>,
    u: Vec<S>,
    film: Vec<S>,
    input: Vec<S>,
    z1: Vec<S>,
    a1: Vec<S>,
    h1: Vec<S>,
    z2: Vec<S>,
    a2: Vec<S>,
    h2: Vec<S>,
    out: Vec<S>,
}

#[inline]
fn sigmoid<S: Scalar>(a: S) -> S {
    S::one() / (S::one() + (-a).exp())
}

#[inline]
fn silu<S: Scalar>(a: S) -> S {
    a * sigmoid(a)
}

#[inline]
fn silu_grad<S: Scalar>(a: S) -> S {
    let s = sigmoid(a);
    s * (S::one() + a * (S::one() - s))
}

/// Sinusoidal embedding of a step index.
pub fn step_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = vec![S::zero(); dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[k] = S::of(arg.sin());
        out[k + half] = S::of(arg.cos());
    }
    out
}

fn conv3x3_forward<S: Scalar>(
    input: &[S],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[S],
    bias: &[S],
    cout: usize,
    out: &mut [S],
) {
    let hw = h * w;
    for co in 0..cout {
        let o = &mut out[co * hw..(co + 1) * hw];
        o.fill(bias[co]);
        for ci in 0..cin {
            let inp = &input[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = weight[((co * cin + ci) * 3 + ky) * 3 + kx];
                    let (y_lo, y_hi) = valid_range(ky, h);
                    let (x_lo, x_hi) = valid_range(kx, w);
                    for y in y_lo..y_hi {
                        let iy = y + ky - 1;
                        let orow = &mut o[y * w + x_lo..y * w + x_hi];
                        let irow = &inp[iy * w + x_lo + kx - 1..iy * w + x_hi + kx - 1];
                        for (ov, &iv) in orow.iter_mut().zip(irow) {
                            *ov = *ov + wv * iv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when requested, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<S: Scalar>(
    input: &[S],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[S],
    cout: usize,
    grad_out: &[S],
    mut grad_in: Option<&mut [S]>,
    grad_w: &mut [S],
    grad_b: &mut [S],
) {
    let hw = h * w;
    for co in 0..cout {
        let go = &grad_out[co * hw..(co + 1) * hw];
        grad_b[co] = grad_b[co] + go.iter().copied().sum::<S>();
        for ci in 0..cin {
            let inp = &input[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                    let wv = weight[widx];
                    let (y_lo, y_hi) = valid_range(ky, h);
                    let (x_lo, x_hi) = valid_range(kx, w);
                    let mut gw = S::zero();
                    for y in y_lo..y_hi {
                        let iy = y + ky - 1;
                        let grow = &go[y * w + x_lo..y * w + x_hi];
                        let irow = &inp[iy * w + x_lo + kx - 1..iy * w + x_hi + kx - 1];
                        for (&g, &iv) in grow.iter().zip(irow) {
                            gw = gw + g * iv;
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            let gi = &mut gi[ci * hw..(ci + 1) * hw];
                            let girow = &mut gi[iy * w + x_lo + kx - 1..iy * w + x_hi + kx - 1];
                            for (gv, &g) in girow.iter_mut().zip(grow) {
                                *gv = *gv + wv * g;
                            }
                        }
                    }
                    grad_w[widx] = grad_w[widx] + gw;
                }
            }
        }
    }
}

/// Output rows/cols `[lo, hi)` whose tap `k` (0..3) lands inside an axis of length `n`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

impl<S: Scalar> ConvDenoiser<S> {
    pub fn new<R: Rng + ?Sized>(config: ConvConfig, rng: &mut R) -> Self {
        let layout = config.layout();
        let mut params = vec![S::zero(); layout.total];
        let mut fill = |range: std::ops::Range<usize>, std: f64, rng: &mut R| {
            for p in &mut params[range] {
                *p = S::of(std) * standard_normal::<S, _>(rng);
            }
        };
        let cin = config.channels + config.position_channels;
        fill(layout.pos.clone(), 0.5, rng);
        fill(layout.w1.clone(), (1.0 / (9 * cin) as f64).sqrt(), rng);
        fill(layout.w2.clone(), (1.0 / (9 * config.hidden) as f64).sqrt(), rng);
        fill(layout.w3.clone(), 0.5 * (1.0 / (9 * config.hidden) as f64).sqrt(), rng);
        fill(layout.tw1.clone(), (1.0 / config.embed_dim as f64).sqrt(), rng);
        fill(layout.tw2.clone(), 0.1 * (1.0 / config.embed_hidden as f64).sqrt(), rng);
        Self { config, params }
    }

    pub fn from_params(config: ConvConfig, params: Vec<S>) -> Result<Self> {
        let expected = config.param_count();
        if params.len() != expected {
            return Err(Error::Incongruent(params.len(), expected));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ConvConfig {
        &self.config
    }

    fn check_input(&self, x: &Image<S>) -> Result<()> {
        let c = &self.config;
        let want = (c.channels, c.height, c.width);
        if x.shape() != want {
            return Err(Error::ShapeMismatch {
                expected: want,
                got: x.shape(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &Image<S>, t: usize) -> Trace<S> {
        let c = &self.config;
        let l = c.layout();
        let p = &self.params;
        let hw = c.height * c.width;
        let f = c.hidden;
        let cin = c.channels + c.position_channels;

        let embed = step_embedding::<S>(t, c.embed_dim);
        let mut pre_u = p[l.tb1.clone()].to_vec();
        let tw1 = &p[l.tw1.clone()];
        for (j, pu) in pre_u.iter_mut().enumerate() {
            let row = &tw1[j * c.embed_dim..(j + 1) * c.embed_dim];
            *pu = *pu + row.iter().zip(&embed).map(|(&a, &b)| a * b).sum::<S>();
        }
        let u: Vec<S> = pre_u.iter().map(|&a| silu(a)).collect();
        let mut film = p[l.tb2.clone()].to_vec();
        let tw2 = &p[l.tw2.clone()];
        for (j, m) in film.iter_mut().enumerate() {
            let row = &tw2[j * c.embed_hidden..(j + 1) * c.embed_hidden];
            *m = *m + row.iter().zip(&u).map(|(&a, &b)| a * b).sum::<S>();
        }

        let mut input = Vec::with_capacity(cin * hw);
        input.extend_from_slice(x.data());
        input.extend_from_slice(&p[l.pos.clone()]);

        let mut z1 = vec![S::zero(); f * hw];
        conv3x3_forward(&input, cin, c.height, c.width, &p[l.w1.clone()], &p[l.b1.clone()], f, &mut z1);
        let (a1, h1) = modulate(&z1, &film[0..f], &film[f..2 * f], hw);

        let mut z2 = vec![S::zero(); f * hw];
        conv3x3_forward(&h1, f, c.height, c.width, &p[l.w2.clone()], &p[l.b2.clone()], f, &mut z2);
        let (a2, h2) = modulate(&z2, &film[2 * f..3 * f], &film[3 * f..4 * f], hw);

        let mut out = vec![S::zero(); c.channels * hw];
        conv3x3_forward(&h2, f, c.height, c.width, &p[l.w3.clone()], &p[l.b3.clone()], c.channels, &mut out);
        let gain = &film[4 * f..4 * f + c.channels];
        for ch in 0..c.channels {
            for (o, &xv) in out[ch * hw..(ch + 1) * hw]
                .iter_mut()
                .zip(&x.data()[ch * hw..(ch + 1) * hw])
            {
                *o = *o + gain[ch] * xv;
            }
        }

        Trace {
            embed,
            pre_u,
            u,
            film,
            input,
            z1,
            a1,
            h1,
            z2,
            a2,
            h2,
            out,
        }
    }
}

/// `a = z * (1 + scale[c]) + shift[c]`, `h = silu(a)`.
fn modulate<S: Scalar>(z: &[S], scale: &[S], shift: &[S], hw: usize) -> (Vec<S>, Vec<S>) {
    let mut a = Vec::with_capacity(z.len());
    for (ch, zc) in z.chunks(hw).enumerate() {
        let k = S::one() + scale[ch];
        a.extend(zc.iter().map(|&v| v * k + shift[ch]));
    }
    let h = a.iter().map(|&v| silu(v)).collect();
    (a, h)
}

/// Backward through [`modulate`]: returns `dz`, adds into `dscale`/`dshift`.
fn modulate_backward<S: Scalar>(
    dh: &[S],
    z: &[S],
    a: &[S],
    scale: &[S],
    dscale: &mut [S],
    dshift: &mut [S],
    hw: usize,
) -> Vec<S> {
    let mut dz = Vec::with_capacity(z.len());
    for ch in 0..scale.len() {
        let k = S::one() + scale[ch];
        let range = ch * hw..(ch + 1) * hw;
        let mut ds = S::zero();
        let mut dsh = S::zero();
        for ((&g, &zv), &av) in dh[range.clone()].iter().zip(&z[range.clone()]).zip(&a[range]) {
            let da = g * silu_grad(av);
            ds = ds + da * zv;
            dsh = dsh + da;
            dz.push(da * k);
        }
        dscale[ch] = dscale[ch] + ds;
        dshift[ch] = dshift[ch] + dsh;
    }
    dz
}

impl<S: Scalar> Denoiser<S> for ConvDenoiser<S> {
    fn predict(&self, x: &Image<S>, t: usize) -> Result<Image<S>> {
        self.check_input(x)?;
        let trace = self.forward(x, t);
        let (c, h, w) = x.shape();
        Image::from_vec(c, h, w, trace.out)
    }
}

impl<S: Scalar> TrainableDenoiser<S> for ConvDenoiser<S> {
    fn params(&self) -> &[S] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    fn descriptor(&self) -> ArchDescriptor {
        ArchDescriptor {
            id: "conv-film".into(),
            hyper: serde_json::to_value(self.config).expect("plain struct"),
        }
    }

    fn accumulate_gradient(
        &self,
        x: &Image<S>,
        t: usize,
        target: &Image<S>,
        weight: S,
        grad: &mut [S],
    ) -> Result<S> {
        self.check_input(x)?;
        x.ensure_same_shape(target)?;
        if grad.len() != self.params.len() {
            return Err(Error::Incongruent(grad.len(), self.params.len()));
        }
        let c = self.config;
        let l = c.layout();
        let p = &self.params;
        let hw = c.height * c.width;
        let f = c.hidden;
        let cin = c.channels + c.position_channels;
        let tr = self.forward(x, t);

        let two = S::of(2.0);
        let mut sse = S::zero();
        let dout: Vec<S> = tr
            .out
            .iter()
            .zip(target.data())
            .map(|(&o, &y)| {
                let r = o - y;
                sse = sse + r * r;
                weight * two * r
            })
            .collect();

        let mut dfilm = vec![S::zero(); tr.film.len()];
        for ch in 0..c.channels {
            let range = ch * hw..(ch + 1) * hw;
            dfilm[4 * f + ch] = dout[range.clone()]
                .iter()
                .zip(&x.data()[range])
                .map(|(&g, &xv)| g * xv)
                .sum();
        }

        let mut dh2 = vec![S::zero(); f * hw];
        {
            let (gw, gb) = split_pair(grad, &l.w3, &l.b3);
            conv3x3_backward(&tr.h2, f, c.height, c.width, &p[l.w3.clone()], c.channels, &dout, Some(&mut dh2), gw, gb);
        }
        let dz2 = {
            let (ds, dsh) = dfilm[2 * f..4 * f].split_at_mut(f);
            modulate_backward(&dh2, &tr.z2, &tr.a2, &tr.film[2 * f..3 * f], ds, dsh, hw)
        };
        let mut dh1 = vec![S::zero(); f * hw];
        {
            let (gw, gb) = split_pair(grad, &l.w2, &l.b2);
            conv3x3_backward(&tr.h1, f, c.height, c.width, &p[l.w2.clone()], f, &dz2, Some(&mut dh1), gw, gb);
        }
        let dz1 = {
            let (ds, dsh) = dfilm[0..2 * f].split_at_mut(f);
            modulate_backward(&dh1, &tr.z1, &tr.a1, &tr.film[0..f], ds, dsh, hw)
        };
        let mut dinput = vec![S::zero(); cin * hw];
        {
            let (gw, gb) = split_pair(grad, &l.w1, &l.b1);
            conv3x3_backward(&tr.input, cin, c.height, c.width, &p[l.w1.clone()], f, &dz1, Some(&mut dinput), gw, gb);
        }
        for (g, &d) in grad[l.pos.clone()].iter_mut().zip(&dinput[c.channels * hw..]) {
            *g = *g + d;
        }

        // Step-embedding MLP.
        let mut du = vec![S::zero(); c.embed_hidden];
        {
            let tw2 = &p[l.tw2.clone()];
            let (gw, gb) = split_pair(grad, &l.tw2, &l.tb2);
            for (j, &dm) in dfilm.iter().enumerate() {
                gb[j] = gb[j] + dm;
                for k in 0..c.embed_hidden {
                    gw[j * c.embed_hidden + k] = gw[j * c.embed_hidden + k] + dm * tr.u[k];
                    du[k] = du[k] + dm * tw2[j * c.embed_hidden + k];
                }
            }
        }
        {
            let (gw, gb) = split_pair(grad, &l.tw1, &l.tb1);
            for (j, (&d, &pre)) in du.iter().zip(&tr.pre_u).enumerate() {
                let dpre = d * silu_grad(pre);
                gb[j] = gb[j] + dpre;
                for k in 0..c.embed_dim {
                    gw[j * c.embed_dim + k] = gw[j * c.embed_dim + k] + dpre * tr.embed[k];
                }
            }
        }
        Ok(sse)
    }
}

/// Disjoint mutable views of a weight range and the bias range that follows it.
fn split_pair<'a, S>(
    grad: &'a mut [S],
    w: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [S], &'a mut [S]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}
