use std::sync::Arc;

use crate::autodiff::Var;
use crate::error::Result;
use crate::tensor::{bhwc, Real, Tensor};
use crate::Error;

pub fn reshape<'t, T: Real>(x: &Var<'t, T>, shape: &[usize]) -> Result<Var<'t, T>> {
    let y = x.value().reshape(shape)?;
    let original = x.shape().to_vec();
    Ok(x.tape().record(y, &[x], move |g, _| {
        vec![Some(g.reshape(&original).expect("same element count"))]
    }))
}

pub fn sum<'t, T: Real>(x: &Var<'t, T>) -> Var<'t, T> {
    let y = Tensor::scalar(x.value().sum());
    let shape = x.shape().to_vec();
    x.tape().record(y, &[x], move |g, _| {
        vec![Some(Tensor::full(&shape, g.data()[0]).expect("valid shape"))]
    })
}

pub fn mean<'t, T: Real>(x: &Var<'t, T>) -> Var<'t, T> {
    let n = T::lit(x.value().numel() as f64);
    let y = Tensor::scalar(x.value().sum() / n);
    let shape = x.shape().to_vec();
    x.tape().record(y, &[x], move |g, _| {
        vec![Some(Tensor::full(&shape, g.data()[0] / n).expect("valid shape"))]
    })
}

/// Concatenates along the last axis; all leading dimensions must agree.
pub fn concat_last<'t, T: Real>(parts: &[&Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "inputs", "nothing to concatenate"))?;
    let lead = &first.shape()[..first.shape().len() - 1];
    for p in parts {
        if &p.shape()[..p.shape().len() - 1] != lead {
            return Err(Error::shape(
                "concat",
                "leading dimensions",
                format!("{:?} vs {:?}", first.shape(), p.shape()),
            ));
        }
    }
    let widths: Vec<usize> = parts.iter().map(|p| p.value().last_dim()).collect();
    let total: usize = widths.iter().sum();
    let rows = first.value().numel() / widths[0];
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&p.value().data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    let y = Tensor::from_parts(shape, out);
    Ok(first.tape().record(y, parts, move |g, needs| {
        let mut offset = 0;
        widths
            .iter()
            .zip(needs)
            .map(|(&w, &need)| {
                let start = offset;
                offset += w;
                need.then(|| g.slice_last(start, w).expect("in range"))
            })
            .collect()
    }))
}

/// `y[i] = x[index[i]]`. The adjoint scatter-adds, so repeated indices (as in
/// reflect padding) are handled.
pub fn gather<'t, T: Real>(
    x: &Var<'t, T>,
    index: Arc<Vec<usize>>,
    shape: &[usize],
) -> Result<Var<'t, T>> {
    if shape.iter().product::<usize>() != index.len() {
        return Err(Error::shape(
            "gather",
            "index length",
            format!("{} indices for output shape {shape:?}", index.len()),
        ));
    }
    let n = x.value().numel();
    if let Some(bad) = index.iter().find(|&&i| i >= n) {
        return Err(Error::shape("gather", "index", format!("{bad} out of range for {n} elements")));
    }
    let src = x.value().data();
    let y = Tensor::new(shape, index.iter().map(|&i| src[i]).collect())?;
    let in_shape = x.shape().to_vec();
    Ok(x.tape().record(y, &[x], move |g, _| {
        let mut dx = vec![T::zero(); n];
        for (&i, &gv) in index.iter().zip(g.data()) {
            dx[i] += gv;
        }
        vec![Some(Tensor::from_parts(in_shape, dx))]
    }))
}

/// Row gather over the last axis: with `x` viewed as `R×D`, output row `i`
/// is `x[index[i]]`. `lead` is the output shape without the trailing `D`.
pub fn gather_rows<'t, T: Real>(
    x: &Var<'t, T>,
    index: Arc<Vec<usize>>,
    lead: &[usize],
) -> Result<Var<'t, T>> {
    if lead.iter().product::<usize>() != index.len() {
        return Err(Error::shape(
            "gather_rows",
            "index length",
            format!("{} indices for leading shape {lead:?}", index.len()),
        ));
    }
    let d = x.value().last_dim();
    let rows = x.value().numel() / d;
    if let Some(bad) = index.iter().find(|&&i| i >= rows) {
        return Err(Error::shape("gather_rows", "index", format!("row {bad} out of range for {rows} rows")));
    }
    let src = x.value().data();
    let mut out = Vec::with_capacity(index.len() * d);
    for &i in index.iter() {
        out.extend_from_slice(&src[i * d..(i + 1) * d]);
    }
    let mut shape = lead.to_vec();
    shape.push(d);
    let y = Tensor::new(&shape, out)?;
    let in_shape = x.shape().to_vec();
    Ok(x.tape().record(y, &[x], move |g, _| {
        let mut dx = vec![T::zero(); rows * d];
        for (&i, gr) in index.iter().zip(g.data().chunks_exact(d)) {
            for (a, &b) in dx[i * d..(i + 1) * d].iter_mut().zip(gr) {
                *a += b;
            }
        }
        vec![Some(Tensor::from_parts(in_shape, dx))]
    }))
}

/// Source indices realising an axis permutation of a row-major tensor.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    assert_eq!(shape.len(), axes.len());
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let n: usize = shape.iter().product();
    let mut index = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    for _ in 0..n {
        index.push(counter.iter().zip(&out_strides).map(|(c, s)| c * s).sum());
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    (index, out_shape)
}

pub fn permute<'t, T: Real>(x: &Var<'t, T>, axes: &[usize]) -> Result<Var<'t, T>> {
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    if sorted != (0..x.shape().len()).collect::<Vec<_>>() {
        return Err(Error::shape("permute", "axes", format!("{axes:?} is not a permutation")));
    }
    let (index, shape) = permute_index(x.shape(), axes);
    gather(x, Arc::new(index), &shape)
}

/// Mean over height and width: `B×H×W×C → B×C`.
pub fn global_avg_pool<'t, T: Real>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let [b, h, w, c] = bhwc("global_avg_pool", x.value())?;
    let hw = h * w;
    let inv = T::one() / T::lit(hw as f64);
    let mut out = vec![T::zero(); b * c];
    for bi in 0..b {
        let acc = &mut out[bi * c..(bi + 1) * c];
        for px in x.value().data()[bi * hw * c..(bi + 1) * hw * c].chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    let y = Tensor::from_parts(vec![b, c], out);
    let in_shape = x.shape().to_vec();
    Ok(x.tape().record(y, &[x], move |g, _| {
        let mut dx = Vec::with_capacity(b * hw * c);
        for bi in 0..b {
            let gb = &g.data()[bi * c..(bi + 1) * c];
            for _ in 0..hw {
                dx.extend(gb.iter().map(|&v| v * inv));
            }
        }
        vec![Some(Tensor::from_parts(in_shape, dx))]
    }))
}
