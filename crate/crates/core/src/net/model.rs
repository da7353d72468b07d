use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DecoderKind, EncoderKind, ModelConfig, ModelKind};
use super::params::{glorot, normal, ParamStore};
use crate::autodiff::{Tape, Tensor, Unary, Var, PAD};
use crate::dict::{store::atoms_hash, IvimDictionary, NoddiDictionary, TAU};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::solvers::{IhtOperator, StepRule};

const LN_EPS: f64 = 1e-5;

/// The dictionary a model is initialized from.
#[derive(Clone, Copy, Debug)]
pub enum DictBinding<'a, T> {
    Ivim(&'a IvimDictionary<T>),
    Noddi(&'a NoddiDictionary<T>),
}

impl<T: Real> DictBinding<'_, T> {
    fn atoms(&self) -> &Tensor<T> {
        match self {
            Self::Ivim(d) => d.atoms(),
            Self::Noddi(d) => d.atoms(),
        }
    }

    fn kind(&self) -> ModelKind {
        match self {
            Self::Ivim(_) => ModelKind::Ivim,
            Self::Noddi(_) => ModelKind::Noddi,
        }
    }
}

/// Everything besides the tensors needed to rebuild a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// Hash of the measurement scheme the network input is laid out on.
    pub scheme_hash: String,
    pub dict_hash: String,
    /// Dictionary columns.
    pub atoms: usize,
    /// First block length: `j` for IVIM, anisotropic atom count for NODDI.
    pub split: usize,
    /// Clamp boxes of the two learnable grid vectors.
    pub boxes: [(f64, f64); 2],
    pub iht_step: f64,
    /// Output standardization used by the loss and the model-free head.
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct InitOptions {
    pub seed: u64,
    /// Noise added to the identity-like embedding and projection.
    pub encoder_noise: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            encoder_noise: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BlockIdx {
    ln1: (usize, usize),
    mix: usize,
    mix_b: Option<usize>,
    msa: Option<usize>,
    ln2: (usize, usize),
    ffn1: (usize, usize),
    ffn2: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
enum DecoderIdx {
    Unrolled {
        w: Vec<usize>,
        s: Vec<usize>,
        log_lambda: usize,
        grids: (usize, usize),
    },
    ModelFree {
        layers: [(usize, usize); 3],
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: usize,
    pos: Option<usize>,
    blocks: Vec<BlockIdx>,
    proj: (usize, usize),
    fusion: Option<usize>,
    decoder: DecoderIdx,
}

/// Encoder, sparse decoder and parameter mapping with their weights.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub meta: ModelMeta,
    pub params: ParamStore<T>,
    layout: Layout,
}

/// Tape handles of one forward pass.
pub struct Forward {
    pub params: Vec<Var>,
    /// `[B × outputs]`
    pub out: Var,
    /// Sparse code `[B × atoms]` when the decoder is unrolled.
    pub code: Option<Var>,
}

type Filler<'a, T> = dyn FnMut(&str, usize, usize) -> Tensor<T> + 'a;

impl<T: Real> Model<T> {
    /// Fresh model: analytic decoder (`W = step·Φ`, `S = I − step·ΦᵀΦ`,
    /// thresholds `λ_init`, grids at the dictionary values), fusion `[0; I]`,
    /// identity-like embedding plus `encoder_noise`, random encoder blocks.
    pub fn new(cfg: ModelConfig, dict: DictBinding<T>, scheme_hash: &str, init: &InitOptions) -> Result<Self> {
        cfg.validate()?;
        if cfg.kind != dict.kind() {
            return Err(Error::Config(format!(
                "{} model bound to a {} dictionary",
                cfg.kind.name(),
                dict.kind().name()
            )));
        }
        let atoms = dict.atoms();
        if atoms.rows() != cfg.channels {
            return Err(Error::Dimension(format!(
                "dictionary has {} rows, model expects {} channels",
                atoms.rows(),
                cfg.channels
            )));
        }
        let op = IhtOperator::new(atoms, StepRule::Auto)?;
        let (split, boxes, grid_a, grid_b) = match dict {
            DictBinding::Ivim(d) => {
                let bx = |g: &[T]| (g[0].as_f64(), g[g.len() - 1].as_f64());
                (d.j(), [bx(&d.d_grid), bx(&d.dstar_grid)], d.d_grid.clone(), d.dstar_grid.clone())
            }
            DictBinding::Noddi(d) => {
                let kmin = d.kappa_grid.iter().fold(f64::INFINITY, |a, k| a.min(k.as_f64()));
                let kmax = d.kappa_grid.iter().fold(0.0f64, |a, k| a.max(k.as_f64()));
                (d.n_aniso(), [(0.0, 1.0), (kmin, kmax)], d.vic_grid.clone(), d.kappa_grid.clone())
            }
        };
        let n_out = cfg.kind.outputs().len();
        let meta = ModelMeta {
            scheme_hash: scheme_hash.to_string(),
            dict_hash: atoms_hash(atoms),
            atoms: atoms.cols(),
            split,
            boxes,
            iht_step: op.step.as_f64(),
            target_mean: vec![0.0; n_out],
            target_std: vec![1.0; n_out],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed);
        let c = cfg.channels;
        let p = cfg.encoder.patch_size;
        let centre = (p / 2) * p + p / 2;
        let noise = init.encoder_noise;
        let lambda = T::of(cfg.decoder.lambda_init.ln());
        let n_layers = cfg.decoder.n_layers;
        let mut fill = |name: &str, r: usize, k: usize| -> Tensor<T> {
            let leaf = name.rsplit('.').next().unwrap_or(name);
            match name {
                "enc.embed" => {
                    let mut t = noisy(r, k, noise, &mut rng);
                    for ch in 0..c {
                        t.data_mut()[(centre * c + ch) * k + ch] += T::one();
                    }
                    t
                }
                "enc.proj" => {
                    let mut t = noisy(r, k, noise, &mut rng);
                    for ch in 0..c {
                        t.data_mut()[ch * k + ch] += T::one();
                    }
                    t
                }
                "fusion" => {
                    let mut t = Tensor::zeros(&[r, k]);
                    for ch in 0..c {
                        t.data_mut()[(c + ch) * k + ch] = T::one();
                    }
                    t
                }
                "dec.log_lambda" => Tensor::full(&[r, k], lambda),
                "map.a" => Tensor::column(grid_a.clone()),
                "map.b" => Tensor::column(grid_b.clone()),
                "head.1" | "head.2" => normal(r, k, (2.0 / r as f64).sqrt(), &mut rng),
                "head.3" => normal(r, k, 0.1 / (r as f64).sqrt(), &mut rng),
                "enc.pos" => normal(r, k, 0.02, &mut rng),
                _ if name.starts_with("dec.w") => op.w.clone(),
                _ if name.starts_with("dec.s") => op.s.clone(),
                _ => match leaf {
                    "g" => Tensor::full(&[r, k], T::one()),
                    "b" | "bias" => Tensor::zeros(&[r, k]),
                    "qkv" | "ffn1" | "conv" => glorot(r, k, &mut rng),
                    _ => normal(r, k, 0.02, &mut rng),
                },
            }
        };
        let (params, layout) = assemble(&cfg, &meta, n_layers, &mut fill)?;
        Ok(Self {
            cfg,
            meta,
            params,
            layout,
        })
    }

    /// Empty model with the right parameter shapes, for loading checkpoints.
    pub fn skeleton(cfg: ModelConfig, meta: ModelMeta) -> Result<Self> {
        cfg.validate()?;
        let mut fill = |_: &str, r: usize, k: usize| Tensor::zeros(&[r, k]);
        let (params, layout) = assemble(&cfg, &meta, cfg.decoder.n_layers, &mut fill)?;
        Ok(Self {
            cfg,
            meta,
            params,
            layout,
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.cfg.kind.outputs().len()
    }

    /// Current per-layer thresholds.
    pub fn thresholds(&self) -> Vec<T> {
        match &self.layout.decoder {
            DecoderIdx::Unrolled { log_lambda, .. } => self.params.get(*log_lambda).data().iter().map(|v| v.exp()).collect(),
            DecoderIdx::ModelFree { .. } => Vec::new(),
        }
    }

    /// Runs the network on `input` (`[B × region²·C]`).
    pub fn forward<R: Rng>(&self, tape: &mut Tape<T>, input: &Tensor<T>, rng: &mut R) -> Result<Forward> {
        let pv = self.params.bind(tape);
        self.forward_with(tape, pv, input, rng)
    }

    /// [`Model::forward`] with parameters already on the tape, in store order.
    /// Thresholds are always read from the store.
    pub fn forward_with<R: Rng>(&self, tape: &mut Tape<T>, pv: Vec<Var>, input: &Tensor<T>, rng: &mut R) -> Result<Forward> {
        if pv.len() != self.params.len() {
            return Err(Error::Dimension(format!("{} parameter handles for {} tensors", pv.len(), self.params.len())));
        }
        let b = input.rows();
        if input.cols() != self.cfg.input_len() {
            return Err(Error::Dimension(format!(
                "input has {} columns, model expects {}",
                input.cols(),
                self.cfg.input_len()
            )));
        }
        let x = tape.constant(input.clone());
        let (encoded, raw) = self.encode(tape, &pv, x, b, rng)?;
        let z = match self.layout.fusion {
            Some(f) => {
                let cat = tape.concat_cols(&[encoded, raw])?;
                tape.matmul(cat, pv[f])?
            }
            None => encoded,
        };
        let (out, code) = match &self.layout.decoder {
            DecoderIdx::Unrolled {
                w,
                s,
                log_lambda,
                grids,
            } => {
                let lambdas: Vec<T> = self.params.get(*log_lambda).data().iter().map(|v| v.exp()).collect();
                let code = unrolled(tape, &pv, z, w, s, &lambdas)?;
                let out = self.map(tape, &pv, code, *grids)?;
                (out, Some(code))
            }
            DecoderIdx::ModelFree { layers } => {
                let mut h = z;
                for (i, &(w, bias)) in layers.iter().enumerate() {
                    let m = tape.matmul(h, pv[w])?;
                    h = tape.add_row(m, pv[bias])?;
                    if i < 2 {
                        h = tape.relu(h);
                    }
                }
                let std = tape.constant(Tensor::row(self.meta.target_std.iter().map(|&v| T::of(v)).collect()));
                let mean = tape.constant(Tensor::row(self.meta.target_mean.iter().map(|&v| T::of(v)).collect()));
                let scaled = tape.mul_row(h, std)?;
                (tape.add_row(scaled, mean)?, None)
            }
        };
        Ok(Forward {
            params: pv,
            out,
            code,
        })
    }

    /// Inference without gradients: parameter rows and the sparse code if any.
    pub fn predict(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward(&mut tape, input, &mut rng)?;
        let code = f.code.map(|c| tape.value(c).clone());
        Ok((tape.value(f.out).clone(), code))
    }

    fn encode<R: Rng>(&self, tape: &mut Tape<T>, pv: &[Var], x: Var, b: usize, rng: &mut R) -> Result<(Var, Var)> {
        let e = &self.cfg.encoder;
        let c = self.cfg.channels;
        let (p, w, r) = (e.patch_size, e.window, e.region());
        let d = e.embed_dim;
        let seq = w * w;
        let rows = b * seq;
        let patch_len = p * p * c;
        let mut idx = Vec::with_capacity(rows * patch_len);
        for s in 0..b {
            for a in 0..w {
                for bb in 0..w {
                    for u in 0..p {
                        for v in 0..p {
                            let base = s * r * r * c + ((a + u) * r + bb + v) * c;
                            idx.extend(base..base + c);
                        }
                    }
                }
            }
        }
        let patches = tape.gather(x, vec![rows, patch_len], Arc::new(idx))?;
        let mut z = tape.matmul(patches, pv[self.layout.embed])?;
        if let Some(pos) = self.layout.pos {
            let tile: Vec<usize> = (0..rows).flat_map(|i| (0..d).map(move |k| (i % seq) * d + k)).collect();
            let pe = tape.gather(pv[pos], vec![rows, d], Arc::new(tile))?;
            z = tape.add(z, pe)?;
        }
        let rate = T::of(e.dropout);
        for blk in &self.layout.blocks {
            let h = tape.layer_norm(z, pv[blk.ln1.0], pv[blk.ln1.1], T::of(LN_EPS))?;
            let mixed = match e.kind {
                EncoderKind::Transformer => {
                    let qkv = tape.matmul(h, pv[blk.mix])?;
                    let att = tape.attention(qkv, seq, e.heads)?;
                    tape.matmul(att, pv[blk.msa.expect("transformer block has msa")])?
                }
                EncoderKind::Conv => {
                    let cols = tape.gather(h, vec![rows, 9 * d], Arc::new(im2col(b, w, d)))?;
                    let m = tape.matmul(cols, pv[blk.mix])?;
                    let m = tape.add_row(m, pv[blk.mix_b.expect("conv block has bias")])?;
                    tape.gelu(m)
                }
            };
            let mixed = tape.dropout(mixed, rate, rng);
            let z1 = tape.add(z, mixed)?;
            let h2 = tape.layer_norm(z1, pv[blk.ln2.0], pv[blk.ln2.1], T::of(LN_EPS))?;
            let f1 = tape.matmul(h2, pv[blk.ffn1.0])?;
            let f1 = tape.add_row(f1, pv[blk.ffn1.1])?;
            let f1 = tape.gelu(f1);
            let f2 = tape.matmul(f1, pv[blk.ffn2.0])?;
            let f2 = tape.add_row(f2, pv[blk.ffn2.1])?;
            let f2 = tape.dropout(f2, rate, rng);
            z = tape.add(z1, f2)?;
        }
        let core = (w / 2) * w + w / 2;
        let core_rows: Vec<usize> = (0..b).map(|s| s * seq + core).collect();
        let zc = tape.select_rows(z, &core_rows)?;
        let proj = tape.matmul(zc, pv[self.layout.proj.0])?;
        let encoded = tape.add_row(proj, pv[self.layout.proj.1])?;
        let mid = ((r / 2) * r + r / 2) * c;
        let raw_idx: Vec<usize> = (0..b).flat_map(|s| (0..c).map(move |k| s * r * r * c + mid + k)).collect();
        let raw = tape.gather(x, vec![b, c], Arc::new(raw_idx))?;
        Ok((encoded, raw))
    }

    fn map(&self, tape: &mut Tape<T>, pv: &[Var], code: Var, grids: (usize, usize)) -> Result<Var> {
        let k = self.meta.atoms;
        let j = self.meta.split;
        let tau = T::of(TAU);
        let xt = tape.add_scalar(code, tau);
        let tot = tape.row_sum(xt);
        let xn = tape.div_col(xt, tot)?;
        let tail = tape.slice_cols(xn, j, k - j)?;
        let frac = tape.row_sum(tail);
        let head = tape.slice_cols(xn, 0, j)?;
        let bary = |tape: &mut Tape<T>, block: Var, grid: Var, bx: (f64, f64)| -> Result<Var> {
            let bt = tape.add_scalar(block, tau);
            let s = tape.row_sum(bt);
            let wts = tape.div_col(bt, s)?;
            let g = tape.clamp(grid, T::of(bx.0), T::of(bx.1));
            tape.matmul(wts, g)
        };
        let cols = match self.cfg.kind {
            ModelKind::Ivim => {
                let d = bary(tape, head, pv[grids.0], self.meta.boxes[0])?;
                let ds = bary(tape, tail, pv[grids.1], self.meta.boxes[1])?;
                vec![frac, d, ds]
            }
            ModelKind::Noddi => {
                let vic = bary(tape, head, pv[grids.0], self.meta.boxes[0])?;
                let kappa = bary(tape, head, pv[grids.1], self.meta.boxes[1])?;
                let od = tape.unary(kappa, Unary::OrientationDispersion);
                vec![vic, frac, od]
            }
        };
        tape.concat_cols(&cols)
    }
}

fn noisy<T: Real, R: Rng>(r: usize, k: usize, std: f64, rng: &mut R) -> Tensor<T> {
    if std > 0.0 {
        normal(r, k, std, rng)
    } else {
        Tensor::zeros(&[r, k])
    }
}

/// `x ← H(z·W + x·S)` repeated once per threshold, starting from `x = 0`.
fn unrolled<T: Real>(tape: &mut Tape<T>, pv: &[Var], z: Var, w: &[usize], s: &[usize], lambdas: &[T]) -> Result<Var> {
    let shared = w.len() == 1;
    let mut x: Option<Var> = None;
    for (l, &lam) in lambdas.iter().enumerate() {
        let li = if shared { 0 } else { l };
        let drive = tape.matmul(z, pv[w[li]])?;
        let pre = match x {
            None => drive,
            Some(prev) => {
                let sx = tape.matmul(prev, pv[s[li]])?;
                tape.add(drive, sx)?
            }
        };
        x = Some(tape.hard_threshold(pre, lam, true)?);
    }
    Ok(x.expect("at least one layer"))
}

/// Neighbour gather for a 3×3 convolution over each `w×w` patch grid.
fn im2col(b: usize, w: usize, d: usize) -> Vec<usize> {
    let seq = w * w;
    let mut idx = Vec::with_capacity(b * seq * 9 * d);
    for s in 0..b {
        for a in 0..w as isize {
            for c in 0..w as isize {
                for da in -1..=1isize {
                    for dc in -1..=1isize {
                        let (na, nc) = (a + da, c + dc);
                        if na < 0 || nc < 0 || na >= w as isize || nc >= w as isize {
                            idx.extend(std::iter::repeat_n(PAD, d));
                        } else {
                            let row = s * seq + na as usize * w + nc as usize;
                            idx.extend(row * d..(row + 1) * d);
                        }
                    }
                }
            }
        }
    }
    idx
}

fn assemble<T: Real>(cfg: &ModelConfig, meta: &ModelMeta, n_layers: usize, fill: &mut Filler<T>) -> Result<(ParamStore<T>, Layout)> {
    let e = &cfg.encoder;
    let c = cfg.channels;
    let d = e.embed_dim;
    let mut ps = ParamStore::default();
    let mut add = |ps: &mut ParamStore<T>, name: String, r: usize, k: usize| {
        let t = fill(&name, r, k);
        debug_assert_eq!(t.len(), r * k, "{name}");
        let t = t.reshape(vec![r, k]).expect("filled tensor has the requested size");
        ps.push(name, t)
    };
    let embed = add(&mut ps, "enc.embed".into(), e.patch_size * e.patch_size * c, d);
    let pos = e.positional.then(|| add(&mut ps, "enc.pos".into(), e.window * e.window, d));
    let mut blocks = Vec::with_capacity(e.depth);
    for i in 0..e.depth {
        let ln1 = (add(&mut ps, format!("enc.{i}.ln1.g"), 1, d), add(&mut ps, format!("enc.{i}.ln1.b"), 1, d));
        let (mix, mix_b, msa) = match e.kind {
            EncoderKind::Transformer => (
                add(&mut ps, format!("enc.{i}.qkv"), d, 3 * d),
                None,
                Some(add(&mut ps, format!("enc.{i}.msa"), d, d)),
            ),
            EncoderKind::Conv => (
                add(&mut ps, format!("enc.{i}.conv"), 9 * d, d),
                Some(add(&mut ps, format!("enc.{i}.conv.bias"), 1, d)),
                None,
            ),
        };
        let ln2 = (add(&mut ps, format!("enc.{i}.ln2.g"), 1, d), add(&mut ps, format!("enc.{i}.ln2.b"), 1, d));
        let ffn1 = (
            add(&mut ps, format!("enc.{i}.ffn1"), d, e.ffn_dim),
            add(&mut ps, format!("enc.{i}.ffn1.bias"), 1, e.ffn_dim),
        );
        let ffn2 = (
            add(&mut ps, format!("enc.{i}.ffn2"), e.ffn_dim, d),
            add(&mut ps, format!("enc.{i}.ffn2.bias"), 1, d),
        );
        blocks.push(BlockIdx {
            ln1,
            mix,
            mix_b,
            msa,
            ln2,
            ffn1,
            ffn2,
        });
    }
    let proj = (add(&mut ps, "enc.proj".into(), d, c), add(&mut ps, "enc.proj.bias".into(), 1, c));
    let fusion = cfg.skip.then(|| add(&mut ps, "fusion".into(), 2 * c, c));
    let k = meta.atoms;
    let decoder = match cfg.decoder.kind {
        DecoderKind::Unrolled => {
            if meta.split == 0 || meta.split >= k {
                return Err(Error::Config(format!("dictionary split {} of {k} atoms", meta.split)));
            }
            let copies = if cfg.decoder.weights_shared { 1 } else { n_layers };
            let suffix = |l: usize| if copies == 1 { String::new() } else { format!(".{l}") };
            let mut w = Vec::new();
            let mut s = Vec::new();
            for l in 0..copies {
                w.push(add(&mut ps, format!("dec.w{}", suffix(l)), c, k));
                s.push(add(&mut ps, format!("dec.s{}", suffix(l)), k, k));
            }
            let log_lambda = add(&mut ps, "dec.log_lambda".into(), 1, n_layers);
            let (na, nb) = match cfg.kind {
                ModelKind::Ivim => (meta.split, k - meta.split),
                ModelKind::Noddi => (meta.split, meta.split),
            };
            let grids = (add(&mut ps, "map.a".into(), na, 1), add(&mut ps, "map.b".into(), nb, 1));
            DecoderIdx::Unrolled {
                w,
                s,
                log_lambda,
                grids,
            }
        }
        DecoderKind::ModelFree => {
            let h = cfg.decoder.hidden;
            let n_out = cfg.kind.outputs().len();
            let l1 = (add(&mut ps, "head.1".into(), c, h), add(&mut ps, "head.1.bias".into(), 1, h));
            let l2 = (add(&mut ps, "head.2".into(), h, h), add(&mut ps, "head.2.bias".into(), 1, h));
            let l3 = (add(&mut ps, "head.3".into(), h, n_out), add(&mut ps, "head.3.bias".into(), 1, n_out));
            DecoderIdx::ModelFree { layers: [l1, l2, l3] }
        }
    };
    Ok((
        ps,
        Layout {
            embed,
            pos,
            blocks,
            proj,
            fusion,
            decoder,
        },
    ))
}
