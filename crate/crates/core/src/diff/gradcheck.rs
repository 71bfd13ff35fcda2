use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Grads, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so coordinates whose true gradient
/// is exactly zero compare by absolute difference.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares reverse-mode gradients of `loss` with the fourth-order central
/// difference `(8 (L(+h) - L(-h)) - (L(+2h) - L(-2h))) / 12 h`. The higher
/// order lets `h` stay large enough that rounding in a loss of size ~100
/// does not swamp gradients of size ~1e-6.
///
/// Every parameter tensor contributes at least one coordinate; the remaining
/// budget of `max_coords` is filled uniformly at random. Relative error is
/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(store: &ParamStore, loss: F, epsilon: f64, max_coords: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let out = loss(&mut g)?;
        let v = g.scalar(out);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Inference(format!("non-finite loss {v}")))
        }
    };

    let mut g = Graph::new(store);
    let out = loss(&mut g)?;
    let base = g.scalar(out);
    if !base.is_finite() {
        return Err(Error::Inference(format!("non-finite loss {base}")));
    }
    let mut grads = Grads::zeros_like(store);
    g.backward(out, &mut grads);
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.value(id).len()).map(move |k| (id, k)))
        .collect();
    let chosen = if coords.len() <= max_coords {
        coords
    } else {
        coords.shuffle(&mut rng);
        let mut picked: Vec<(ParamId, usize)> = Vec::with_capacity(max_coords);
        let mut covered = vec![false; store.len()];
        for &(id, k) in &coords {
            if !covered[id.index()] {
                covered[id.index()] = true;
                picked.push((id, k));
            }
        }
        for &c in &coords {
            if picked.len() >= max_coords.max(store.len()) {
                break;
            }
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        picked
    };

    let mut report = GradCheckReport {
        loss: base,
        checked: chosen.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
    };
    let mut work = store.clone();
    for (id, k) in chosen {
        let cols = store.value(id).ncols();
        let (r, c) = (k / cols, k % cols);
        let orig = store.value(id)[[r, c]];
        let mut at = |delta: f64| -> Result<f64> {
            work.value_mut(id)[[r, c]] = orig + delta;
            eval(&work)
        };
        let near = at(epsilon)? - at(-epsilon)?;
        let far = at(2.0 * epsilon)? - at(-2.0 * epsilon)?;
        work.value_mut(id)[[r, c]] = orig;
        let numeric = (8.0 * near - far) / (12.0 * epsilon);
        let analytic = grads.get(id)[[r, c]];
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((store.name(id).to_string(), k));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{AttentionBlock, Init, Mlp};
    use ndarray::Array2;

    #[test]
    fn quadratic_loss() {
        let mut s = ParamStore::new(2);
        let id = s.add("theta", (3, 4), Init::Uniform(2.0));
        let r = grad_check(
            &s,
            |g| {
                let t = g.param(id);
                let sq = g.square(t);
                let l = g.sum(sq);
                Ok(g.scale(l, 0.5))
            },
            1e-4,
            100,
            0,
        )
        .unwrap();
        assert_eq!(r.checked, 12);
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut s = ParamStore::new(2);
        let id = s.add("theta", (2, 2), Init::Uniform(1.0));
        let loss = |g: &mut Graph| {
            let t = g.param(id);
            let z = g.scale(t, 0.0);
            let l = g.sum(z);
            Ok(g.add_scalar(l, 3.0))
        };
        let mut g = Graph::new(&s);
        let out = loss(&mut g).unwrap();
        let mut grads = Grads::zeros_like(&s);
        g.backward(out, &mut grads);
        assert!(grads.get(id).iter().all(|&x| x == 0.0));
        let r = grad_check(&s, loss, 1e-4, 10, 0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn two_layer_network_with_attention() {
        let mut s = ParamStore::new(9);
        let mlp = Mlp::new(&mut s, "mlp", 6, &[12], 8);
        let blk = AttentionBlock::new(&mut s, "attn", 8, 2, 16).unwrap();
        let head = Mlp::new(&mut s, "head", 8, &[], 1);
        let x = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin());
        let r = grad_check(
            &s,
            |g| {
                let xi = g.input(x.clone());
                let h = mlp.forward(g, xi);
                let h = g.gelu(h);
                let h = blk.forward(g, h)?;
                let y = head.forward(g, h);
                let y = g.square(y);
                Ok(g.sum(y))
            },
            1e-4,
            400,
            1,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn non_finite_loss_rejected() {
        let mut s = ParamStore::new(2);
        let id = s.add("theta", (1, 1), Init::Zeros);
        let r = grad_check(
            &s,
            |g| {
                let t = g.param(id);
                let l = g.ln(t);
                Ok(g.sum(l))
            },
            1e-4,
            10,
            0,
        );
        assert!(r.is_err());
    }
}
