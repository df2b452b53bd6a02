//! Central finite-difference checks for analytic gradients.
//!
//! Outputs are reduced to a scalar through a fixed, non-uniform projection so
//! that ops whose outputs sum to a constant (softmax, normalization) still
//! expose their full Jacobian.
//!
//! Errors are relative to the larger of the two gradient norms, but never to
//! less than a floor tied to the finite-difference resolution: a central
//! difference of a loss `L` cannot resolve gradients much below
//! `ε·|L|/STEP`, and leaves whose true gradient is zero by construction
//! (a key bias under softmax, a bias ahead of a normalization) would
//! otherwise compare rounding noise with rounding noise.

use crate::autograd::{Graph, Mat, Var};
use crate::error::Result;
use crate::params::{LeafId, ParamGrads, ParamTree};

pub const STEP: f64 = 1e-5;

/// Deterministic projection weights for reducing an output to a scalar.
pub fn projection(rows: usize, cols: usize) -> Mat {
    Mat::from_shape_fn((rows, cols), |(i, j)| {
        ((i * 7 + j * 13) as f64 * 0.37 + 0.5).sin() + 0.25
    })
}

/// Multiple of the rounding resolution below which gradients count as zero.
pub const FLOOR_FACTOR: f64 = 1e5;

/// Smallest gradient norm over `coords` probed entries that central
/// differences of a loss of size `loss` resolve.
pub fn noise_floor(loss: f64, coords: usize) -> f64 {
    FLOOR_FACTOR * (coords.max(1) as f64).sqrt() * f64::EPSILON * loss.abs().max(1.0) / STEP
}

/// Norm-wise relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    relative_error_with_floor(analytic, numeric, 1e-12)
}

/// [`relative_error`] whose denominator is at least `floor`.
pub fn relative_error_with_floor(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(floor)
}

fn projected(g: &Graph, out: Var) -> f64 {
    let v = g.value(out);
    (v * &projection(v.nrows(), v.ncols())).sum()
}

/// Relative error of d(projected output)/dx for every element of `x`.
pub fn check_input_grad<F>(x: &Mat, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = f(&mut g, xv)?;
    let value = projected(&g, out);
    let shape = g.value(out).dim();
    let grads = g.backward(&[(out, projection(shape.0, shape.1))])?;
    let analytic: Vec<f64> = match grads.get(xv) {
        Some(m) => m.iter().copied().collect(),
        None => vec![0.0; x.len()],
    };

    let eval = |xp: &Mat| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.input(xp.clone());
        let out = f(&mut g, v)?;
        Ok(projected(&g, out))
    };
    let mut numeric = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for idx in 0..x.len() {
        let orig = xp.as_slice().expect("standard layout")[idx];
        xp.as_slice_mut().expect("standard layout")[idx] = orig + STEP;
        let up = eval(&xp)?;
        xp.as_slice_mut().expect("standard layout")[idx] = orig - STEP;
        let down = eval(&xp)?;
        xp.as_slice_mut().expect("standard layout")[idx] = orig;
        numeric.push((up - down) / (2.0 * STEP));
    }
    Ok(relative_error_with_floor(&analytic, &numeric, noise_floor(value, x.len())))
}

/// Per-leaf relative errors of a scalar loss, probing at most
/// `max_coords` evenly spaced entries of each leaf.
pub fn leaf_errors<F>(tree: &ParamTree, max_coords: usize, loss: F) -> Result<Vec<(String, f64)>>
where
    F: Fn(&ParamTree) -> Result<(f64, ParamGrads)>,
{
    let (value, grads) = loss(tree)?;
    let mut probe = tree.clone();
    let mut out = Vec::new();
    for id in tree.ids() {
        let n = tree.value(id).len();
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        let coords: Vec<usize> = (0..n).step_by(stride).collect();
        let analytic: Vec<f64> = coords
            .iter()
            .map(|&c| {
                grads
                    .get(id)
                    .map(|g| g.as_slice().expect("standard layout")[c])
                    .unwrap_or(0.0)
            })
            .collect();
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = slot(&mut probe, id, c);
            set(&mut probe, id, c, orig + STEP);
            let up = loss(&probe)?.0;
            set(&mut probe, id, c, orig - STEP);
            let down = loss(&probe)?.0;
            set(&mut probe, id, c, orig);
            numeric.push((up - down) / (2.0 * STEP));
        }
        let floor = noise_floor(value, coords.len());
        out.push((tree.leaf(id).name.clone(), relative_error_with_floor(&analytic, &numeric, floor)));
    }
    Ok(out)
}

fn slot(tree: &mut ParamTree, id: LeafId, c: usize) -> f64 {
    tree.value_mut(id).as_slice().expect("standard layout")[c]
}

fn set(tree: &mut ParamTree, id: LeafId, c: usize, v: f64) {
    tree.value_mut(id).as_slice_mut().expect("standard layout")[c] = v;
}

/// Worst per-leaf relative error of a layer's projected output with respect
/// to every parameter it touches.
pub fn check_param_grads<F>(tree: &ParamTree, x: &Mat, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamTree, Var) -> Result<Var>,
{
    let errs = leaf_errors(tree, usize::MAX, |t| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = f(&mut g, t, xv)?;
        let (r, c) = g.value(out).dim();
        let loss = projected(&g, out);
        let grads = g.backward(&[(out, projection(r, c))])?;
        let mut pg = ParamGrads::new(t);
        for (id, m) in g.param_grads(&grads) {
            pg.add(id, m);
        }
        Ok((loss, pg))
    })?;
    Ok(errs.into_iter().map(|(_, e)| e).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `L = Σ w²·s + b·0 + c·Σ w`, where `b` has a structurally zero gradient.
    fn quadratic(tree: &ParamTree, scale_bug: f64) -> Result<(f64, ParamGrads)> {
        let w = tree.id("w").unwrap();
        let b = tree.id("b").unwrap();
        let wv = tree.value(w);
        let loss = wv.mapv(|v| 3.0 * v * v + v).sum() + 0.0 * tree.value(b).sum();
        let mut grads = ParamGrads::new(tree);
        grads.add(w, &wv.mapv(|v| (6.0 * v + 1.0) * scale_bug));
        grads.add(b, &Mat::from_elem(tree.value(b).dim(), 1e-17));
        Ok((loss, grads))
    }

    fn tree() -> ParamTree {
        let mut t = ParamTree::new();
        t.insert("w", Mat::from_shape_fn((2, 3), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64), true)
            .unwrap();
        t.insert("b", Mat::zeros((1, 3)), true).unwrap();
        t
    }

    #[test]
    fn zero_gradient_leaf_passes_and_wrong_gradient_fails() {
        let errs = leaf_errors(&tree(), usize::MAX, |t| quadratic(t, 1.0)).unwrap();
        assert!(errs.iter().all(|(_, e)| *e < 1e-6), "{errs:?}");
        let errs = leaf_errors(&tree(), usize::MAX, |t| quadratic(t, 1.01)).unwrap();
        let w = errs.iter().find(|(n, _)| n == "w").unwrap().1;
        assert!(w > 5e-3, "{w}");
    }

    #[test]
    fn floor_bounds_the_denominator() {
        assert_eq!(relative_error_with_floor(&[0.0], &[1e-9], 1e-3), 1e-6);
        assert_eq!(relative_error_with_floor(&[2.0], &[1.0], 1e-3), 0.5);
        assert!(noise_floor(1e3, 4) > noise_floor(1.0, 4));
        assert_eq!(noise_floor(0.1, 1), noise_floor(1.0, 1));
    }
}
