//! Four-direction traversal of 2-D feature maps and channel reindexing.
//!
//! Feature maps are `[B, H, W, C]`. Directional sequences are `[B, 4, H·W, C]`
//! in the fixed order row-major forward, row-major reverse, column-major
//! forward, column-major reverse.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

pub const NUM_DIRECTIONS: usize = 4;

/// Map position visited at each step of direction `k`: `out[t] = row·W + col`.
pub fn direction_positions(k: usize, h: usize, w: usize) -> Vec<usize> {
    let l = h * w;
    let col_major = |t: usize| (t % h) * w + t / h;
    match k {
        0 => (0..l).collect(),
        1 => (0..l).rev().collect(),
        2 => (0..l).map(col_major).collect(),
        3 => (0..l).rev().map(col_major).collect(),
        _ => panic!("direction index {k} out of range"),
    }
}

/// Inverse of [`direction_positions`]: step at which each map position is visited.
pub fn direction_steps(k: usize, h: usize, w: usize) -> Vec<usize> {
    let pos = direction_positions(k, h, w);
    let mut inv = alloc::vec![0; pos.len()];
    for (t, p) in pos.into_iter().enumerate() {
        inv[p] = t;
    }
    inv
}

fn map_dims<T: Scalar>(tape: &Tape<T>, x: Var) -> Result<[usize; 4]> {
    match *tape.shape(x) {
        [b, h, w, c] => Ok([b, h, w, c]),
        ref s => Err(Error::Dimension(alloc::format!(
            "expected a [B, H, W, C] feature map, got {s:?}"
        ))),
    }
}

/// Flatten a map into its four directional sequences.
pub fn scan_expand<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let [b, h, w, c] = map_dims(tape, x)?;
    let l = h * w;
    let dirs: Vec<Vec<usize>> = (0..NUM_DIRECTIONS).map(|k| direction_positions(k, h, w)).collect();
    let mut index = Vec::with_capacity(b * NUM_DIRECTIONS * l * c);
    for bi in 0..b {
        for pos in &dirs {
            for &p in pos {
                let base = (bi * l + p) * c;
                index.extend((base..base + c).map(|i| i as u32));
            }
        }
    }
    tape.gather(x, index, &[b, NUM_DIRECTIONS, l, c])
}

/// Single directional sequence `[B, H·W, C]` of direction `k`.
pub fn scan_direction<T: Scalar>(tape: &mut Tape<T>, x: Var, k: usize) -> Result<Var> {
    let [b, h, w, c] = map_dims(tape, x)?;
    if k >= NUM_DIRECTIONS {
        return Err(Error::Dimension(alloc::format!("direction index {k} out of range")));
    }
    let l = h * w;
    let pos = direction_positions(k, h, w);
    let mut index = Vec::with_capacity(b * l * c);
    for bi in 0..b {
        for &p in &pos {
            let base = (bi * l + p) * c;
            index.extend((base..base + c).map(|i| i as u32));
        }
    }
    tape.gather(x, index, &[b, l, c])
}

/// Undo each direction's ordering and sum the four maps.
pub fn scan_merge<T: Scalar>(tape: &mut Tape<T>, seqs: Var, h: usize, w: usize) -> Result<Var> {
    tape.scan_merge_raw(seqs, h, w)
}

/// First and second halves of the channel axis.
pub fn channel_split<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<(Var, Var)> {
    let c = tape.value(x).last_dim();
    if c % 2 != 0 {
        return Err(Error::Contract(alloc::format!(
            "channel split needs an even channel count, got {c}"
        )));
    }
    let a = tape.slice_last(x, 0, c / 2)?;
    let b = tape.slice_last(x, c / 2, c / 2)?;
    Ok((a, b))
}

/// Source channel for each output channel of a `groups`-way shuffle.
pub fn shuffle_permutation(c: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || c % groups != 0 {
        return Err(Error::Contract(alloc::format!(
            "channel shuffle needs channels ({c}) divisible by groups ({groups})"
        )));
    }
    let per = c / groups;
    Ok((0..c).map(|j| (j % groups) * per + j / groups).collect())
}

/// View channels as `[groups, C/groups]`, transpose, flatten.
pub fn channel_shuffle<T: Scalar>(tape: &mut Tape<T>, x: Var, groups: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let c = tape.value(x).last_dim();
    let perm = shuffle_permutation(c, groups)?;
    let rows = tape.value(x).len() / c;
    let index = (0..rows)
        .flat_map(|r| perm.iter().map(move |&p| (r * c + p) as u32))
        .collect();
    tape.gather(x, index, &shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_tensor;
    use crate::tensor::Tensor;

    fn labels(t: &Tape<f64>, v: Var) -> Vec<f64> {
        t.value(v).data().to_vec()
    }

    #[test]
    fn two_by_two_traversals() {
        // a b / c d labelled 0 1 / 2 3
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[1, 2, 2, 1], &[0.0, 1.0, 2.0, 3.0]).unwrap());
        let s = scan_expand(&mut t, x).unwrap();
        assert_eq!(t.shape(s), &[1, 4, 4, 1]);
        assert_eq!(
            labels(&t, s),
            vec![0.0, 1.0, 2.0, 3.0, 3.0, 2.0, 1.0, 0.0, 0.0, 2.0, 1.0, 3.0, 3.0, 1.0, 2.0, 0.0]
        );
    }

    #[test]
    fn single_pixel() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[1, 1, 1, 1], &[7.0]).unwrap());
        let s = scan_expand(&mut t, x).unwrap();
        assert_eq!(labels(&t, s), vec![7.0; 4]);
    }

    #[test]
    fn direction_matches_expand() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(uniform_tensor(&[2, 3, 4, 5], -1.0, 1.0, 9));
        let s = scan_expand(&mut t, x).unwrap();
        for k in 0..NUM_DIRECTIONS {
            let a = scan_direction(&mut t, x, k).unwrap();
            let b = t.select(s, 1, k).unwrap();
            assert_eq!(t.value(a), t.value(b));
        }
        assert!(scan_direction(&mut t, x, 4).is_err());
    }

    #[test]
    fn merge_of_expand_is_four_x() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(uniform_tensor(&[2, 3, 5, 8], -10.0, 10.0, 4));
        let s = scan_expand(&mut t, x).unwrap();
        let m = scan_merge(&mut t, s, 3, 5).unwrap();
        for (a, b) in t.value(m).data().iter().zip(t.value(x).data()) {
            assert_eq!(*a, 4.0 * b);
        }
        let z = t.constant(Tensor::zeros(&[1, 4, 6, 2]));
        let mz = scan_merge(&mut t, z, 2, 3).unwrap();
        assert!(t.value(mz).data().iter().all(|&v| v == 0.0));
        assert!(scan_merge(&mut t, z, 2, 2).is_err());
    }

    #[test]
    fn directions_invert() {
        for (h, w) in [(1, 1), (2, 3), (4, 4), (5, 2)] {
            for k in 0..NUM_DIRECTIONS {
                let pos = direction_positions(k, h, w);
                let steps = direction_steps(k, h, w);
                for (t, &p) in pos.iter().enumerate() {
                    assert_eq!(steps[p], t);
                }
            }
        }
    }

    #[test]
    fn split_and_shuffle() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_f64(&[1, 1, 1, 4], &[0.0, 1.0, 2.0, 3.0]).unwrap());
        let (a, b) = channel_split(&mut t, x).unwrap();
        assert_eq!(labels(&t, a), vec![0.0, 1.0]);
        assert_eq!(labels(&t, b), vec![2.0, 3.0]);
        let y = t.concat_last(a, b).unwrap();
        assert_eq!(t.value(y), t.value(x));

        let s = channel_shuffle(&mut t, x, 2).unwrap();
        assert_eq!(labels(&t, s), vec![0.0, 2.0, 1.0, 3.0]);
        let s2 = channel_shuffle(&mut t, s, 2).unwrap();
        assert_eq!(t.value(s2), t.value(x));
        let s1 = channel_shuffle(&mut t, x, 1).unwrap();
        assert_eq!(t.value(s1), t.value(x));

        let odd = t.constant(Tensor::zeros(&[1, 1, 1, 3]));
        assert!(matches!(channel_split(&mut t, odd), Err(Error::Contract(_))));
        assert!(matches!(channel_shuffle(&mut t, odd, 2), Err(Error::Contract(_))));

        let two = t.constant(Tensor::from_f64(&[1, 1, 1, 2], &[5.0, 6.0]).unwrap());
        let (p, q) = channel_split(&mut t, two).unwrap();
        assert_eq!((t.shape(p)[3], t.shape(q)[3]), (1, 1));
    }
}
