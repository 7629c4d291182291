use crate::error::{shape_err, Result};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside the broadcast `out` shape (0 on broadcast axes).
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                own[i - off]
            }
        })
        .collect()
}

/// Resolve a possibly negative axis.
pub fn axis(op: &'static str, ax: isize, rank: usize) -> Result<usize> {
    let r = rank as isize;
    let a = if ax < 0 { ax + r } else { ax };
    if a < 0 || a >= r {
        return Err(shape_err(op, format!("axis {ax} out of range for rank {rank}")));
    }
    Ok(a as usize)
}

/// Gather `src` (shape `shape`) into the broadcast shape `out`.
pub fn expand<F: Copy>(src: &[F], shape: &[usize], out: &[usize]) -> Vec<F> {
    if shape == out {
        return src.to_vec();
    }
    let n = numel(out);
    if src.len() == 1 {
        return vec![src[0]; n];
    }
    let bs = broadcast_strides(shape, out);
    let mut res = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    let mut off = 0usize;
    for _ in 0..n {
        res.push(src[off]);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            off += bs[d];
            if idx[d] < out[d] {
                break;
            }
            off -= bs[d] * idx[d];
            idx[d] = 0;
        }
    }
    res
}

/// Sum a buffer of shape `from` down to the broadcast-compatible shape `to`.
pub fn sum_to<F: crate::Float>(src: &[F], from: &[usize], to: &[usize]) -> Vec<F> {
    if from == to {
        return src.to_vec();
    }
    let n_to = numel(to);
    if n_to == 1 {
        let mut acc = F::zero();
        for &v in src {
            acc += v;
        }
        return vec![acc];
    }
    let mut res = vec![F::zero(); n_to];
    // trailing-suffix broadcast, e.g. a bias over rows
    if from.ends_with(to) || from.ends_with(&to[to.iter().take_while(|&&d| d == 1).count()..]) {
        for chunk in src.chunks(n_to) {
            res.iter_mut().zip(chunk).for_each(|(r, &v)| *r += v);
        }
        return res;
    }
    let bs = broadcast_strides(to, from);
    let mut idx = vec![0usize; from.len()];
    let mut off = 0usize;
    for &v in src {
        res[off] += v;
        for d in (0..from.len()).rev() {
            idx[d] += 1;
            off += bs[d];
            if idx[d] < from[d] {
                break;
            }
            off -= bs[d] * idx[d];
            idx[d] = 0;
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shapes("t", &[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shapes("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn expand_then_sum_to() {
        let src = [1.0f64, 2.0, 3.0];
        let e = expand(&src, &[3], &[2, 3]);
        assert_eq!(e, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(sum_to(&e, &[2, 3], &[3]), vec![2.0, 4.0, 6.0]);
        assert_eq!(sum_to(&e, &[2, 3], &[2, 1]), vec![6.0, 6.0]);
    }
}
