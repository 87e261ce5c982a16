//! Row-major shape arithmetic shared by the kernel ops.

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `b` viewed as broadcast against `out_shape` (align-right,
/// extent-1 axes get stride 0). Returns `None` when the shapes are not
/// broadcast-compatible.
pub fn broadcast_strides(b_shape: &[usize], out_shape: &[usize]) -> Option<Vec<usize>> {
    if b_shape.len() > out_shape.len() {
        return None;
    }
    let b_strides = strides(b_shape);
    let offset = out_shape.len() - b_shape.len();
    let mut out = vec![0; out_shape.len()];
    for (i, &extent) in out_shape.iter().enumerate() {
        if i < offset {
            continue;
        }
        let bi = i - offset;
        if b_shape[bi] == extent {
            out[i] = b_strides[bi];
        } else if b_shape[bi] != 1 {
            return None;
        }
    }
    Some(out)
}

/// Walk every multi-index of `shape`, giving the linear offset into a
/// broadcast operand with `bstrides`.
pub fn for_each_broadcast(shape: &[usize], bstrides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n = numel(shape);
    let mut idx = vec![0usize; shape.len()];
    let mut boff = 0usize;
    for lin in 0..n {
        f(lin, boff);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            boff += bstrides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            boff -= bstrides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[5]), vec![1]);
    }

    #[test]
    fn broadcast_align_right() {
        assert_eq!(broadcast_strides(&[4], &[2, 3, 4]), Some(vec![0, 0, 1]));
        assert_eq!(broadcast_strides(&[3, 1], &[2, 3, 4]), Some(vec![0, 1, 0]));
        assert_eq!(broadcast_strides(&[5], &[2, 3, 4]), None);
    }
}
