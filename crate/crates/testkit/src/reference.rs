//! Cache-free full-sequence transformer forward, coded independently of
//! the graph path: plain loops, two-pass statistics, no KV cache, no tape.
//! Serves as the oracle for cache equivalence and prefix encoding.

use vital_core::numerics::store::ParamStore;
use vital_core::Real;

#[derive(Debug, Clone, Copy)]
pub struct RefDims {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
}

fn ref_layer_norm<F: Real>(x: &[F], gain: &[F], bias: &[F]) -> Vec<F> {
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = x
        .iter()
        .map(|v| {
            let d = v.as_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(&v, (&g, &b))| {
            F::from_f64((v.as_f64() - mean) * inv * g.as_f64() + b.as_f64())
        })
        .collect()
}

fn ref_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// `W[out,in] @ x`, optionally with the low-rank delta
/// `scaling * B @ (A @ x)` added on top.
fn ref_project<F: Real>(
    store: &ParamStore<F>,
    base: &str,
    adapter: Option<(&str, f64)>,
    x: &[F],
) -> Vec<F> {
    let w = store.get(base);
    let mut y: Vec<f64> = (0..w.rows())
        .map(|r| {
            w.row(r)
                .iter()
                .zip(x)
                .map(|(&wv, &xv)| wv.as_f64() * xv.as_f64())
                .sum()
        })
        .collect();
    if let Some((ns, scaling)) = adapter {
        let a = store.get(&format!("{ns}.a"));
        let b = store.get(&format!("{ns}.b"));
        let mid: Vec<f64> = (0..a.rows())
            .map(|r| {
                a.row(r)
                    .iter()
                    .zip(x)
                    .map(|(&av, &xv)| av.as_f64() * xv.as_f64())
                    .sum()
            })
            .collect();
        for (r, slot) in y.iter_mut().enumerate() {
            let delta: f64 = b
                .row(r)
                .iter()
                .zip(&mid)
                .map(|(&bv, &mv)| bv.as_f64() * mv)
                .sum();
            *slot += scaling * delta;
        }
    }
    y.into_iter().map(F::from_f64).collect()
}

fn ref_rope(x: &mut [f64], pos: usize, heads: usize) {
    let hd = x.len() / heads;
    let half = hd / 2;
    for h in 0..heads {
        let off = h * hd;
        for j in 0..half {
            let theta = pos as f64 / 10_000f64.powf(2.0 * j as f64 / hd as f64);
            let (sin, cos) = theta.sin_cos();
            let xi = x[off + j];
            let xj = x[off + half + j];
            x[off + j] = xi * cos - xj * sin;
            x[off + half + j] = xi * sin + xj * cos;
        }
    }
}

/// Full-sequence causal forward over explicit input vectors. Position `t`
/// of the output is what an incremental path should produce after feeding
/// `inputs[0..=t]`. Returns final-normed hidden states.
pub fn forward_full<F: Real>(
    store: &ParamStore<F>,
    base_ns: &str,
    adapter: Option<(&str, f64)>,
    dims: RefDims,
    inputs: &[Vec<F>],
) -> Vec<Vec<F>> {
    let t_len = inputs.len();
    let hd = dims.hidden / dims.heads;
    let mut h: Vec<Vec<F>> = inputs.to_vec();

    for l in 0..dims.layers {
        let site = |s: &str| format!("{base_ns}.l{l}.{s}");
        let ad = |s: &str| adapter.map(|(ns, sc)| (format!("{ns}.l{l}.{s}"), sc));

        // attention, every position against its causal prefix
        let mut q_all = Vec::with_capacity(t_len);
        let mut k_all = Vec::with_capacity(t_len);
        let mut v_all = Vec::with_capacity(t_len);
        let mut normed = Vec::with_capacity(t_len);
        for (pos, row) in h.iter().enumerate() {
            let ln = ref_layer_norm(
                row,
                store.get(&site("ln1.g")).data(),
                store.get(&site("ln1.b")).data(),
            );
            let adq = ad("attn.q");
            let mut q: Vec<f64> = ref_project(
                store,
                &site("attn.q.w"),
                adq.as_ref().map(|(n, s)| (n.as_str(), *s)),
                &ln,
            )
            .iter()
            .map(|v| v.as_f64())
            .collect();
            let adk = ad("attn.k");
            let mut k: Vec<f64> = ref_project(
                store,
                &site("attn.k.w"),
                adk.as_ref().map(|(n, s)| (n.as_str(), *s)),
                &ln,
            )
            .iter()
            .map(|v| v.as_f64())
            .collect();
            let adv = ad("attn.v");
            let v: Vec<f64> = ref_project(
                store,
                &site("attn.v.w"),
                adv.as_ref().map(|(n, s)| (n.as_str(), *s)),
                &ln,
            )
            .iter()
            .map(|x| x.as_f64())
            .collect();
            ref_rope(&mut q, pos, dims.heads);
            ref_rope(&mut k, pos, dims.heads);
            q_all.push(q);
            k_all.push(k);
            v_all.push(v);
            normed.push(ln);
        }
        for pos in 0..t_len {
            let mut ctx = vec![0.0f64; dims.hidden];
            for head in 0..dims.heads {
                let off = head * hd;
                let scores: Vec<f64> = (0..=pos)
                    .map(|j| {
                        let dot: f64 = (0..hd)
                            .map(|c| q_all[pos][off + c] * k_all[j][off + c])
                            .sum();
                        dot / (hd as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for (j, e) in exps.iter().enumerate() {
                    let p = e / denom;
                    for c in 0..hd {
                        ctx[off + c] += p * v_all[j][off + c];
                    }
                }
            }
            let ctx_f: Vec<F> = ctx.iter().map(|&v| F::from_f64(v)).collect();
            let ado = ad("attn.o");
            let attn_out = ref_project(
                store,
                &site("attn.o.w"),
                ado.as_ref().map(|(n, s)| (n.as_str(), *s)),
                &ctx_f,
            );
            for (c, slot) in h[pos].iter_mut().enumerate() {
                *slot = F::from_f64(slot.as_f64() + attn_out[c].as_f64());
            }
        }

        // feed-forward
        for row in h.iter_mut() {
            let ln = ref_layer_norm(
                row,
                store.get(&site("ln2.g")).data(),
                store.get(&site("ln2.b")).data(),
            );
            let adi = ad("ffn.in");
            let inner = ref_project(
                store,
                &site("ffn.in.w"),
                adi.as_ref().map(|(n, s)| (n.as_str(), *s)),
                &ln,
            );
            let act: Vec<F> = inner
                .iter()
                .map(|v| F::from_f64(ref_gelu(v.as_f64())))
                .collect();
            let ado = ad("ffn.out");
            let out = ref_project(
                store,
                &site("ffn.out.w"),
                ado.as_ref().map(|(n, s)| (n.as_str(), *s)),
                &act,
            );
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = F::from_f64(slot.as_f64() + out[c].as_f64());
            }
        }
    }

    h.iter()
        .map(|row| {
            ref_layer_norm(
                row,
                store.get(&format!("{base_ns}.final_ln.g")).data(),
                store.get(&format!("{base_ns}.final_ln.b")).data(),
            )
        })
        .collect()
}

/// Brute-force softmax cross-entropy over masked rows; the oracle for the
/// graph's fused op.
pub fn ce_reference<F: Real>(logits: &[F], vocab: usize, targets: &[usize], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (&t, &keep)) in targets.iter().zip(mask).enumerate() {
        if !keep {
            continue;
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        let denom: f64 = row.iter().map(|v| v.as_f64().exp()).sum();
        total -= (row[t].as_f64().exp() / denom).ln();
        count += 1;
    }
    total / count as f64
}
