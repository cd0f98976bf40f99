//! Periodic one-axis stencils over flat arrays.

/// Extents of a periodic array, first axis fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    extents: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl Shape {
    pub fn new(extents: &[usize]) -> Self {
        let mut strides = Vec::with_capacity(extents.len());
        let mut s = 1;
        for &e in extents {
            strides.push(s);
            s *= e;
        }
        Self { extents: extents.to_vec(), strides, len: s }
    }

    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.extents[axis]
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `(outer, extent, stride)` decomposition along `axis`.
    fn split(&self, axis: usize) -> (usize, usize, usize) {
        let m = self.extents[axis];
        let s = self.strides[axis];
        (self.len / (m * s), m, s)
    }
}

/// Visits every `(row, neighbour row)` pair along `axis`, where the
/// neighbour sits `+1` (`forward`) or `-1` away with wraparound. Rows are
/// contiguous runs of `stride` elements.
#[inline]
fn for_rows(
    shape: &Shape,
    axis: usize,
    forward: bool,
    mut f: impl FnMut(usize, usize, usize),
) {
    let (outer, m, s) = shape.split(axis);
    for o in 0..outer {
        let base = o * m * s;
        for c in 0..m {
            let cn = if forward {
                if c + 1 == m {
                    0
                } else {
                    c + 1
                }
            } else if c == 0 {
                m - 1
            } else {
                c - 1
            };
            f(base + c * s, base + cn * s, s);
        }
    }
}

/// `dst = (src(z + e_axis) - src(z)) * inv_h`.
pub(crate) fn forward_diff_into(
    src: &[f64],
    dst: &mut [f64],
    shape: &Shape,
    axis: usize,
    inv_h: f64,
) {
    debug_assert_eq!(src.len(), shape.len());
    debug_assert_eq!(dst.len(), shape.len());
    for_rows(shape, axis, true, |r, rn, s| {
        let (a, b) = (&src[r..r + s], &src[rn..rn + s]);
        for ((d, &x), &y) in dst[r..r + s].iter_mut().zip(a).zip(b) {
            *d = (y - x) * inv_h;
        }
    });
}

/// `dst += scale * (src(z) - src(z - e_axis))`.
pub(crate) fn backward_diff_acc(
    src: &[f64],
    dst: &mut [f64],
    shape: &Shape,
    axis: usize,
    scale: f64,
) {
    debug_assert_eq!(src.len(), shape.len());
    debug_assert_eq!(dst.len(), shape.len());
    for_rows(shape, axis, false, |r, rp, s| {
        let (a, b) = (&src[r..r + s], &src[rp..rp + s]);
        for ((d, &x), &y) in dst[r..r + s].iter_mut().zip(a).zip(b) {
            *d += (x - y) * scale;
        }
    });
}

/// `dst += scale * (src(z + e) - 2 src(z) + src(z - e))`.
pub(crate) fn central_second_acc(
    src: &[f64],
    dst: &mut [f64],
    shape: &Shape,
    axis: usize,
    scale: f64,
) {
    let (outer, m, s) = shape.split(axis);
    for o in 0..outer {
        let base = o * m * s;
        for c in 0..m {
            let cp = if c + 1 == m { 0 } else { c + 1 };
            let cm = if c == 0 { m - 1 } else { c - 1 };
            let (r, rp, rm) = (base + c * s, base + cp * s, base + cm * s);
            for j in 0..s {
                dst[r + j] += scale * (src[rp + j] - 2.0 * src[r + j] + src[rm + j]);
            }
        }
    }
}

/// Periodic roll: `dst(z) = src(z + shift)`, one signed shift per axis.
pub(crate) fn roll_into(src: &[f64], dst: &mut [f64], shape: &Shape, shift: &[isize]) {
    let rank = shape.rank();
    let mut coord = vec![0usize; rank];
    for (i, d) in dst.iter_mut().enumerate() {
        let mut rem = i;
        let mut j = 0;
        for a in 0..rank {
            let m = shape.extent(a);
            coord[a] = rem % m;
            rem /= m;
            let sa = shift.get(a).copied().unwrap_or(0);
            let c = (coord[a] as isize + sa).rem_euclid(m as isize) as usize;
            j += c * shape.stride(a);
        }
        *d = src[j];
    }
}

/// `dst(z) += w * src(z - shift)` with wraparound; missing shift entries are zero.
pub(crate) fn shifted_acc(src: &[f64], dst: &mut [f64], shape: &Shape, shift: &[isize], w: f64) {
    let rank = shape.rank();
    let tables: Vec<Vec<usize>> = (0..rank)
        .map(|a| {
            let m = shape.extent(a) as isize;
            let s = shift.get(a).copied().unwrap_or(0);
            (0..m).map(|c| ((c - s).rem_euclid(m)) as usize * shape.stride(a)).collect()
        })
        .collect();
    // rows along axis 0 are contiguous runs split at the wrap point
    let m0 = shape.extent(0);
    let s0 = (shift.first().copied().unwrap_or(0)).rem_euclid(m0 as isize) as usize;
    let mut coord = vec![0usize; rank];
    let rows = shape.len() / m0;
    for row in 0..rows {
        let base_src: usize = (1..rank).map(|a| tables[a][coord[a]]).sum();
        let base_dst = row * m0;
        let out = &mut dst[base_dst..base_dst + m0];
        let inp = &src[base_src..base_src + m0];
        // out[c] += w * inp[(c - s0) mod m0]
        for (c, o) in out[s0..].iter_mut().enumerate() {
            *o += w * inp[c];
        }
        for (c, o) in out[..s0].iter_mut().enumerate() {
            *o += w * inp[m0 - s0 + c];
        }
        for a in 1..rank {
            coord[a] += 1;
            if coord[a] < shape.extent(a) {
                break;
            }
            coord[a] = 0;
        }
    }
}
