//! Reindexing ops: gather, concatenation, stacking and slicing.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn concat_grad<T: Scalar>(g: &[T], ca: usize, cb: usize) -> (Vec<T>, Vec<T>) {
    let c = ca + cb;
    let rows = g.len() / c;
    let mut ga = Vec::with_capacity(rows * ca);
    let mut gb = Vec::with_capacity(rows * cb);
    for r in 0..rows {
        ga.extend_from_slice(&g[r * c..r * c + ca]);
        gb.extend_from_slice(&g[r * c + ca..(r + 1) * c]);
    }
    (ga, gb)
}

impl<T: Scalar> Tape<T> {
    /// `out[i] = x[index[i]]` over flat offsets, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<u32>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i as usize >= src.len()) {
            return Err(Error::Dimension(alloc::format!(
                "gather index {bad} out of range for {} elements",
                src.len()
            )));
        }
        let data = index.iter().map(|&i| src[i as usize]).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Gather { x, index }))
    }

    /// Concatenate along the trailing axis.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return shape_err("concat", &sa, &sb);
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let rows = da.len() / ca;
        let mut data = Vec::with_capacity(da.len() + db.len());
        for r in 0..rows {
            data.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ca + cb;
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, Op::Concat { a, b, ca, cb }))
    }

    /// Stack equally shaped tensors along a new axis inserted at `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis > first.len() {
            return Err(Error::Dimension(alloc::format!(
                "stack axis {axis} on rank {}",
                first.len()
            )));
        }
        for &p in &parts[1..] {
            if self.shape(p) != first.as_slice() {
                return shape_err("stack", &first, self.shape(p));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * inner * parts.len());
        for o in 0..outer {
            for &p in parts {
                data.extend_from_slice(&self.value(p).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = first[..axis].to_vec();
        shape.push(parts.len());
        shape.extend_from_slice(&first[axis..]);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(
            out,
            Op::Stack {
                parts: parts.to_vec(),
                inner,
            },
        ))
    }

    /// Channels `[start, start + len)` of the trailing axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = shape[shape.len() - 1];
        if len == 0 || start + len > c {
            return Err(Error::Dimension(alloc::format!(
                "slice [{start}, {}) outside trailing extent {c}",
                start + len
            )));
        }
        let rows = self.value(x).len() / c;
        let index = (0..rows)
            .flat_map(|r| (start..start + len).map(move |j| (r * c + j) as u32))
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        self.gather(x, index, &out_shape)
    }

    /// Index `i` of axis `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, i: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || i >= shape[axis] {
            return Err(Error::Dimension(alloc::format!(
                "select {i} on axis {axis} of {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let index = (0..outer)
            .flat_map(|o| (0..inner).map(move |j| ((o * n + i) * inner + j) as u32))
            .collect();
        let mut out_shape = shape[..axis].to_vec();
        out_shape.extend_from_slice(&shape[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.gather(x, index, &out_shape)
    }

    /// Nearest-neighbour spatial upsampling of `[B, H, W, C]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || factor == 0 {
            return Err(Error::Dimension(alloc::format!(
                "upsample_nearest on {s:?} by {factor}"
            )));
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let mut index = Vec::with_capacity(b * oh * ow * c);
        for bi in 0..b {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ((bi * h + y / factor) * w + xx / factor) * c;
                    index.extend((0..c).map(|ch| (base + ch) as u32));
                }
            }
        }
        self.gather(x, index, &[b, oh, ow, c])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::uniform_tensor;

    #[test]
    fn concat_slice_roundtrip() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(uniform_tensor(&[2, 3, 5], -1.0, 1.0, 1));
        let a = t.slice_last(x, 0, 2).unwrap();
        let b = t.slice_last(x, 2, 3).unwrap();
        let y = t.concat_last(a, b).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn stack_and_select_invert() {
        let mut t = Tape::<f64>::new();
        let parts: Vec<Var> = (0..3)
            .map(|i| t.constant(uniform_tensor(&[2, 4], 0.0, 1.0, i)))
            .collect();
        let s = t.stack(&parts, 1).unwrap();
        assert_eq!(t.shape(s), &[2, 3, 4]);
        for (i, &p) in parts.iter().enumerate() {
            let back = t.select(s, 1, i).unwrap();
            assert_eq!(t.value(back), t.value(p));
        }
    }

    #[test]
    fn reindexing_gradients() {
        let a = uniform_tensor::<f64>(&[2, 2, 2, 3], -1.0, 1.0, 7);
        let b = uniform_tensor::<f64>(&[2, 2, 2, 3], -1.0, 1.0, 8);
        let w = uniform_tensor::<f64>(&[2, 4, 4, 6], -1.0, 1.0, 9);
        let r = grad_check(
            |t, v| {
                let c = t.concat_last(v[0], v[1])?;
                let d = t.concat_last(v[1], v[0])?;
                let s = t.stack(&[c, d, c], 1)?;
                let s = t.select(s, 1, 1)?;
                let s2 = t.slice_last(s, 1, 4)?;
                let s = t.concat_last(s2, s2)?;
                let s = t.slice_last(s, 1, 6)?;
                let u = t.upsample_nearest(s, 2)?;
                let w = t.constant(w.clone());
                let y = t.mul(u, w)?;
                Ok(t.sum(y))
            },
            &[a, b],
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
