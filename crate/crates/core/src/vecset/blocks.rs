//! Pre-norm attention blocks.
//!
//! Both block kinds compute `h = x + Wo * MHA(LN(x), LN(kv))` followed by
//! `h + W2 * gelu(W1 * LN(h))`. Layer norms carry no affine terms because the
//! following projections absorb them. Keys carry no bias: softmax is
//! invariant to it.

use crate::autodiff::{AttnKind, Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamInit};
use crate::tensor::Scalar;

pub const BLOCK_LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnBlock {
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl AttnBlock {
    pub fn init(init: &mut ParamInit, prefix: &str, width: usize, mlp_ratio: usize, heads: usize) -> Self {
        let hidden = width * mlp_ratio;
        let wk = init.weight(&format!("{prefix}.k.w"), width, width);
        let mut lin = |name: &str, i: usize, o: usize| {
            (init.weight(&format!("{prefix}.{name}.w"), i, o), init.zeros(&format!("{prefix}.{name}.b"), 1, o))
        };
        let (wq, bq) = lin("q", width, width);
        let (wv, bv) = lin("v", width, width);
        let (wo, bo) = lin("o", width, width);
        let (w1, b1) = lin("mlp1", width, hidden);
        let (w2, b2) = lin("mlp2", hidden, width);
        Self { heads, wq, bq, wk, wv, bv, wo, bo, w1, b1, w2, b2 }
    }

    fn attend<T: Scalar>(&self, g: &mut Graph<T>, x: Var, xn: Var, kvn: Var, kind: AttnKind) -> Var {
        let p = |g: &mut Graph<T>, id| g.param(id);
        let (wq, bq, wk, wv, bv) = (p(g, self.wq), p(g, self.bq), p(g, self.wk), p(g, self.wv), p(g, self.bv));
        let q = g.linear(xn, wq, Some(bq));
        let k = g.linear(kvn, wk, None);
        let v = g.linear(kvn, wv, Some(bv));
        let a = g.attention(q, k, v, self.heads, kind);
        let (wo, bo) = (p(g, self.wo), p(g, self.bo));
        let o = g.linear(a, wo, Some(bo));
        let h = g.add(x, o);
        self.feed_forward(g, h)
    }

    fn feed_forward<T: Scalar>(&self, g: &mut Graph<T>, h: Var) -> Var {
        let eps = T::of(BLOCK_LN_EPS);
        let hn = g.layer_norm(h, eps);
        let (w1, b1, w2, b2) = (g.param(self.w1), g.param(self.b1), g.param(self.w2), g.param(self.b2));
        let u = g.linear(hn, w1, Some(b1));
        let u = g.gelu(u);
        let u = g.linear(u, w2, Some(b2));
        g.add(h, u)
    }

    /// Queries `x` attend to the set `kv`.
    pub fn cross<T: Scalar>(&self, g: &mut Graph<T>, x: Var, kv: Var) -> Var {
        let eps = T::of(BLOCK_LN_EPS);
        let xn = g.layer_norm(x, eps);
        let kvn = g.layer_norm(kv, eps);
        self.attend(g, x, xn, kvn, AttnKind::CrossAttn)
    }

    pub fn self_attn<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let xn = g.layer_norm(x, T::of(BLOCK_LN_EPS));
        self.attend(g, x, xn, xn, AttnKind::SelfAttn)
    }
}

/// Cross attention of `queries` into `kv`, with shape checks.
pub fn cross_attention<T: Scalar>(g: &mut Graph<T>, block: &AttnBlock, queries: Var, kv: Var) -> Result<Var> {
    let (qw, kw) = (g.value(queries).ncols(), g.value(kv).ncols());
    if qw != kw {
        return Err(Error::contract(format!("cross attention width mismatch: queries {qw}, keys {kw}")));
    }
    if g.value(kv).nrows() == 0 {
        return Err(Error::contract("cross attention over an empty set"));
    }
    Ok(block.cross(g, queries, kv))
}

pub fn self_attention_stack<T: Scalar>(g: &mut Graph<T>, blocks: &[AttnBlock], x: Var) -> Var {
    blocks.iter().fold(x, |h, b| b.self_attn(g, h))
}
