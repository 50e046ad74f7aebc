//! CBOW negative-sampling loss and gradients for one target position.
//!
//! Generic over the float type so the same code runs in `f32` for training
//! and in `f64` for finite-difference checks.

use num_traits::Float;

/// One training position: context ids, the target id and drawn negatives.
#[derive(Debug, Clone, Copy)]
pub struct Position<'a> {
    pub context: &'a [u32],
    pub target: u32,
    pub negatives: &'a [u32],
}

impl Position<'_> {
    /// Output rows in coefficient order: target first, then negatives.
    fn outputs(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.target).chain(self.negatives.iter().copied())
    }
}

/// Working buffers reused across positions.
#[derive(Debug, Clone, Default)]
pub struct Scratch<F> {
    /// Mean context vector.
    pub ctx: Vec<F>,
    /// dL/d(score) for the target and each negative.
    pub coef: Vec<F>,
    /// dL/d(ctx).
    pub d_ctx: Vec<F>,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row<F>(m: &[F], d: usize, id: u32) -> &[F] {
    &m[id as usize * d..(id as usize + 1) * d]
}

fn row_mut<F>(m: &mut [F], d: usize, id: u32) -> &mut [F] {
    &mut m[id as usize * d..(id as usize + 1) * d]
}

fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Computes the loss `-ln σ(c·o_t) - Σ ln σ(-c·o_n)` at the current
/// parameters, filling `scratch` with the pieces the gradient needs.
pub fn forward<F: Float>(e_in: &[F], e_out: &[F], d: usize, pos: &Position<'_>, scratch: &mut Scratch<F>) -> f64 {
    assert!(!pos.context.is_empty(), "position needs at least one context token");
    scratch.ctx.clear();
    scratch.ctx.resize(d, F::zero());
    for &c in pos.context {
        for (acc, &x) in scratch.ctx.iter_mut().zip(row(e_in, d, c)) {
            *acc = *acc + x;
        }
    }
    let inv = F::one() / F::from(pos.context.len()).unwrap();
    for x in &mut scratch.ctx {
        *x = *x * inv;
    }

    scratch.coef.clear();
    scratch.d_ctx.clear();
    scratch.d_ctx.resize(d, F::zero());
    let mut loss = 0.0;
    for (j, o) in pos.outputs().enumerate() {
        let o_row = row(e_out, d, o);
        let s = dot(&scratch.ctx, o_row).to_f64().unwrap();
        let g = if j == 0 {
            loss += softplus(-s);
            sigmoid(s) - 1.0
        } else {
            loss += softplus(s);
            sigmoid(s)
        };
        let g = F::from(g).unwrap();
        scratch.coef.push(g);
        for (acc, &x) in scratch.d_ctx.iter_mut().zip(o_row) {
            *acc = *acc + g * x;
        }
    }
    loss
}

/// Adds the gradient computed by `forward` into dense accumulators shaped
/// like `e_in` and `e_out`.
pub fn accumulate<F: Float>(d: usize, pos: &Position<'_>, scratch: &Scratch<F>, g_in: &mut [F], g_out: &mut [F]) {
    for (o, &g) in pos.outputs().zip(&scratch.coef) {
        for (acc, &c) in row_mut(g_out, d, o).iter_mut().zip(&scratch.ctx) {
            *acc = *acc + g * c;
        }
    }
    let inv = F::one() / F::from(pos.context.len()).unwrap();
    for &c in pos.context {
        for (acc, &x) in row_mut(g_in, d, c).iter_mut().zip(&scratch.d_ctx) {
            *acc = *acc + x * inv;
        }
    }
}

/// Applies one SGD step with the gradient computed by `forward`.
pub fn apply<F: Float>(e_in: &mut [F], e_out: &mut [F], d: usize, pos: &Position<'_>, scratch: &Scratch<F>, lr: F) {
    for (o, &g) in pos.outputs().zip(&scratch.coef) {
        let step = lr * g;
        for (w, &c) in row_mut(e_out, d, o).iter_mut().zip(&scratch.ctx) {
            *w = *w - step * c;
        }
    }
    let step = lr / F::from(pos.context.len()).unwrap();
    for &c in pos.context {
        for (w, &x) in row_mut(e_in, d, c).iter_mut().zip(&scratch.d_ctx) {
            *w = *w - step * x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_scalar_helpers() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn zero_parameters_give_ln2_per_term() {
        let (d, v) = (2, 5);
        let e_in = vec![0.0f64; v * d];
        let e_out = vec![0.0f64; v * d];
        let pos = Position { context: &[3], target: 2, negatives: &[3, 4, 3, 4, 4] };
        let loss = forward(&e_in, &e_out, d, &pos, &mut Scratch::default());
        assert!((loss - 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (d, v) = (3, 6);
        let e_in: Vec<f64> = (0..v * d).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect();
        let e_out: Vec<f64> = (0..v * d).map(|i| ((i * 5 % 13) as f64 - 6.0) / 10.0).collect();
        let pos = Position { context: &[2, 3, 3], target: 4, negatives: &[5, 2, 5] };
        let mut s = Scratch::default();
        forward(&e_in, &e_out, d, &pos, &mut s);
        let (mut g_in, mut g_out) = (vec![0.0; v * d], vec![0.0; v * d]);
        accumulate(d, &pos, &s, &mut g_in, &mut g_out);
        let h = 1e-6;
        let loss_at = |a: &[f64], b: &[f64]| forward(a, b, d, &pos, &mut Scratch::default());
        for i in 0..v * d {
            let (mut p, mut m) = (e_in.clone(), e_in.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (loss_at(&p, &e_out) - loss_at(&m, &e_out)) / (2.0 * h);
            assert!((fd - g_in[i]).abs() < 1e-7, "e_in[{i}]");
            let (mut p, mut m) = (e_out.clone(), e_out.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (loss_at(&e_in, &p) - loss_at(&e_in, &m)) / (2.0 * h);
            assert!((fd - g_out[i]).abs() < 1e-7, "e_out[{i}]");
        }
    }

    #[test]
    fn apply_moves_downhill() {
        let d = 2;
        let mut e_in = vec![0.0f32, 0.0, 0.0, 0.0, 0.1, 0.2, -0.1, 0.3];
        let mut e_out = vec![0.0f32; 8];
        e_out[6] = 0.5;
        let pos = Position { context: &[2], target: 3, negatives: &[2] };
        let mut s = Scratch::default();
        let before = forward(&e_in, &e_out, d, &pos, &mut s);
        apply(&mut e_in, &mut e_out, d, &pos, &s, 0.1);
        assert!(forward(&e_in, &e_out, d, &pos, &mut s) < before);
    }
}
