//! Central finite-difference checks of tape gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Unary, Var, PAD};
use crate::error::{Error, Result};

/// Finite-difference step of [`op_suite`].
pub const FD_STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-3;

/// Largest disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// `|analytic − fd| / max(|analytic|, |fd|, floor)` at the worst entry.
    pub max_rel_err: f64,
    /// (input, flat element) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares reverse-mode gradients of `Σ f(inputs) ⊙ W` with central
/// differences of step `h`, for every entry of every input. `W` is a fixed
/// non-degenerate weighting so that all outputs contribute. `f` is rebuilt on
/// a fresh training-mode tape for every evaluation and must be deterministic.
/// `floor` keeps near-zero gradients from dominating the relative error.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, h: f64, floor: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new().training(true);
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let n = tape.value(out).len();
        let shape = tape.value(out).shape().to_vec();
        let w = Tensor::new(shape, (0..n).map(|i| 0.5 + (0.7 * i as f64 + 0.3).cos()).collect())?;
        let w = tape.constant(w);
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).data()[0];
        if !grads {
            return Ok((value, Vec::new()));
        }
        let g = tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| g.get(v)).collect()))
    };
    let (_, analytic) = eval(inputs, true)?;
    let mut vals = inputs.to_vec();
    let mut best = GradCheck {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for i in 0..vals.len() {
        for e in 0..vals[i].len() {
            let orig = vals[i].data()[e];
            vals[i].data_mut()[e] = orig + h;
            let (up, _) = eval(&vals, false)?;
            vals[i].data_mut()[e] = orig - h;
            let (dn, _) = eval(&vals, false)?;
            vals[i].data_mut()[e] = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = analytic[i].data()[e];
            if !fd.is_finite() || !an.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient at input {i}[{e}]")));
            }
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
            best.checked += 1;
            if rel >= best.max_rel_err {
                best.max_rel_err = rel;
                best.worst = (i, e);
                best.analytic = an;
                best.numeric = fd;
            }
        }
    }
    Ok(best)
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Worst gradient disagreement of one op over its random configurations.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub configs: usize,
    pub worst: GradCheck,
}

/// Uniform draws in `[−2, 2]`, redrawn while `bad` holds (kinks of
/// piecewise ops).
fn draw(rng: &mut ChaCha8Rng, shape: &[usize], bad: impl Fn(f64) -> bool) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.gen_range(-2.0..2.0);
            if !bad(v) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Random 1–4 × 1–4 matrix.
fn random_matrix(rng: &mut ChaCha8Rng, bad: impl Fn(f64) -> bool) -> Tensor<f64> {
    let d = dims(rng, 2);
    draw(rng, &d, bad)
}

fn dims(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(1..=4)).collect()
}

const OPS: &[&str] = &[
    "matmul", "add", "sub", "mul", "add_row", "mul_row", "div_col", "scale", "add_scalar", "gelu", "relu", "exp", "square",
    "orientation_dispersion", "layer_norm", "softmax_rows", "hard_threshold", "hard_threshold_nonneg", "dropout", "gather",
    "slice_cols", "select_rows", "concat_cols", "row_sum", "sum", "mean", "transpose", "clamp", "attention", "msa_block",
    "ffn_block",
];

fn case(op: &str, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Build) {
    let any = |_: f64| false;
    let lam = 0.5;
    match op {
        "matmul" => {
            let d = dims(rng, 3);
            (vec![draw(rng, &[d[0], d[1]], any), draw(rng, &[d[1], d[2]], any)], Box::new(|t, v| t.matmul(v[0], v[1])))
        }
        "add" | "sub" | "mul" => {
            let d = dims(rng, 2);
            let ins = vec![draw(rng, &d, any), draw(rng, &d, any)];
            let b: Build = match op {
                "add" => Box::new(|t, v| t.add(v[0], v[1])),
                "sub" => Box::new(|t, v| t.sub(v[0], v[1])),
                _ => Box::new(|t, v| t.mul(v[0], v[1])),
            };
            (ins, b)
        }
        "add_row" | "mul_row" => {
            let d = dims(rng, 2);
            let ins = vec![draw(rng, &d, any), draw(rng, &[1, d[1]], any)];
            let b: Build = if op == "add_row" { Box::new(|t, v| t.add_row(v[0], v[1])) } else { Box::new(|t, v| t.mul_row(v[0], v[1])) };
            (ins, b)
        }
        "div_col" => {
            let d = dims(rng, 2);
            (vec![draw(rng, &d, any), draw(rng, &[d[0], 1], |x| x.abs() < 0.5)], Box::new(|t, v| t.div_col(v[0], v[1])))
        }
        "scale" => {
            let k = rng.gen_range(-2.0..2.0);
            (vec![random_matrix(rng, any)], Box::new(move |t, v| Ok(t.scale(v[0], k))))
        }
        "add_scalar" => {
            let k = rng.gen_range(-2.0..2.0);
            (vec![random_matrix(rng, any)], Box::new(move |t, v| Ok(t.add_scalar(v[0], k))))
        }
        "gelu" | "relu" | "exp" | "square" | "orientation_dispersion" => {
            let (kind, bad): (Unary, fn(f64) -> bool) = match op {
                "gelu" => (Unary::Gelu, |_| false),
                "relu" => (Unary::Relu, |x| x.abs() < 1e-3),
                "exp" => (Unary::Exp, |_| false),
                "square" => (Unary::Square, |_| false),
                _ => (Unary::OrientationDispersion, |x| x < 0.1),
            };
            (vec![random_matrix(rng, bad)], Box::new(move |t, v| Ok(t.unary(v[0], kind))))
        }
        "layer_norm" => {
            let n = rng.gen_range(1..=4);
            let d = rng.gen_range(2..=5);
            let ins = vec![draw(rng, &[n, d], any), draw(rng, &[1, d], any), draw(rng, &[1, d], any)];
            (ins, Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)))
        }
        "softmax_rows" => (vec![random_matrix(rng, any)], Box::new(|t, v| Ok(t.softmax_rows(v[0])))),
        "hard_threshold" | "hard_threshold_nonneg" => {
            let nonneg = op.ends_with("nonneg");
            let x = random_matrix(rng, |x| (x.abs() - lam).abs() < 1e-3);
            (vec![x], Box::new(move |t, v| t.hard_threshold(v[0], lam, nonneg)))
        }
        "dropout" => {
            let seed = rng.gen();
            (
                vec![random_matrix(rng, any)],
                Box::new(move |t, v| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    Ok(t.dropout(v[0], 0.3, &mut r))
                }),
            )
        }
        "gather" => {
            let d = dims(rng, 2);
            let n = d[0] * d[1];
            let out = dims(rng, 2);
            let index: Vec<usize> = (0..out[0] * out[1]).map(|_| if rng.gen_bool(0.2) { PAD } else { rng.gen_range(0..n) }).collect();
            let index = Arc::new(index);
            (vec![draw(rng, &d, any)], Box::new(move |t, v| t.gather(v[0], out.clone(), index.clone())))
        }
        "slice_cols" => {
            let d = dims(rng, 2);
            let start = rng.gen_range(0..d[1]);
            let len = rng.gen_range(1..=d[1] - start);
            (vec![draw(rng, &d, any)], Box::new(move |t, v| t.slice_cols(v[0], start, len)))
        }
        "select_rows" => {
            let d = dims(rng, 2);
            let rows: Vec<usize> = (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..d[0])).collect();
            (vec![draw(rng, &d, any)], Box::new(move |t, v| t.select_rows(v[0], &rows)))
        }
        "concat_cols" => {
            let r = rng.gen_range(1..=4);
            let ins: Vec<Tensor<f64>> = (0..rng.gen_range(1..=3)).map(|_| {
                let c = rng.gen_range(1..=3);
                draw(rng, &[r, c], any)
            }).collect();
            (ins, Box::new(|t, v| t.concat_cols(v)))
        }
        "row_sum" => (vec![random_matrix(rng, any)], Box::new(|t, v| Ok(t.row_sum(v[0])))),
        "sum" => (vec![random_matrix(rng, any)], Box::new(|t, v| Ok(t.sum(v[0])))),
        "mean" => (vec![random_matrix(rng, any)], Box::new(|t, v| Ok(t.mean(v[0])))),
        "transpose" => (vec![random_matrix(rng, any)], Box::new(|t, v| Ok(t.transpose(v[0])))),
        "clamp" => (
            vec![random_matrix(rng, |x| (x.abs() - 1.0).abs() < 1e-3)],
            Box::new(|t, v| Ok(t.clamp(v[0], -1.0, 1.0))),
        ),
        "attention" => {
            let (batch, seq, heads, dh) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=2), rng.gen_range(1..=3));
            let d = heads * dh;
            (vec![draw(rng, &[batch * seq, 3 * d], any)], Box::new(move |t, v| t.attention(v[0], seq, heads)))
        }
        "msa_block" => {
            // x + W_o·MSA(LN(x)·W_qkv)
            let (batch, seq, heads, dh) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=2), rng.gen_range(1..=2));
            let d = heads * dh;
            let ins = vec![
                draw(rng, &[batch * seq, d], any),
                draw(rng, &[1, d], any),
                draw(rng, &[1, d], any),
                draw(rng, &[d, 3 * d], any),
                draw(rng, &[d, d], any),
            ];
            (
                ins,
                Box::new(move |t, v| {
                    let n = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    let qkv = t.matmul(n, v[3])?;
                    let a = t.attention(qkv, seq, heads)?;
                    let o = t.matmul(a, v[4])?;
                    t.add(v[0], o)
                }),
            )
        }
        "ffn_block" => {
            // x + GELU(LN(x)·W₁ + b₁)·W₂ + b₂
            let (n, d, f) = (rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(1..=5));
            let ins = vec![
                draw(rng, &[n, d], any),
                draw(rng, &[1, d], any),
                draw(rng, &[1, d], any),
                draw(rng, &[d, f], any),
                draw(rng, &[1, f], any),
                draw(rng, &[f, d], any),
                draw(rng, &[1, d], any),
            ];
            (
                ins,
                Box::new(|t, v| {
                    let h = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    let h = t.matmul(h, v[3])?;
                    let h = t.add_row(h, v[4])?;
                    let h = t.gelu(h);
                    let h = t.matmul(h, v[5])?;
                    let h = t.add_row(h, v[6])?;
                    t.add(v[0], h)
                }),
            )
        }
        _ => unreachable!("unknown op {op}"),
    }
}

/// Runs [`check_gradients`] on every differentiable tape op, and on the
/// attention and feed-forward blocks they compose into, over `configs`
/// random shapes and inputs each.
pub fn op_suite(configs: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(OPS.len());
    for &op in OPS {
        let mut worst: Option<GradCheck> = None;
        for _ in 0..configs {
            let (ins, f) = case(op, &mut rng);
            let r = check_gradients(&ins, f, FD_STEP, FD_FLOOR)?;
            if worst.as_ref().is_none_or(|w| r.max_rel_err > w.max_rel_err) {
                worst = Some(r);
            }
        }
        if let Some(worst) = worst {
            out.push(OpCheck { op, configs, worst });
        }
    }
    Ok(out)
}
