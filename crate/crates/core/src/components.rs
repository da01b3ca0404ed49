//! Binary masks and 8-connected component extraction.
//!
//! Labelling works on horizontal runs: each row is split into maximal runs of
//! set pixels, and a run is joined (union-find) with every run on the previous
//! row whose span touches it including the diagonal neighbours.

use crate::geometry::Rect;

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Sets every pixel of `r` clipped to the mask bounds.
    pub fn fill_rect(&mut self, r: &Rect, v: bool) {
        let right = r.right().min(self.width);
        let bottom = r.bottom().min(self.height);
        for y in r.top()..bottom {
            let row = y as usize * self.width as usize;
            for x in r.left()..right {
                self.data[row + x as usize] = v;
            }
        }
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn row(&self, y: u32) -> &[bool] {
        let start = y as usize * self.width as usize;
        &self.data[start..start + self.width as usize]
    }

    /// `true` iff every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// One connected component: tight bounding rect and pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub rect: Rect,
    pub pixel_count: u64,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    y: u32,
    start: u32,
    end: u32,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn with_len(n: usize) -> Self {
        DisjointSet {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            // smaller root wins so labels follow raster order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

fn runs_with_roots(mask: &BinaryMask) -> (Vec<Run>, Vec<u32>) {
    let mut runs: Vec<Run> = Vec::new();
    let mut row_start = Vec::with_capacity(mask.height as usize + 1);
    for y in 0..mask.height {
        row_start.push(runs.len());
        let row = mask.row(y);
        let mut x = 0usize;
        while x < row.len() {
            if row[x] {
                let start = x;
                while x < row.len() && row[x] {
                    x += 1;
                }
                runs.push(Run {
                    y,
                    start: start as u32,
                    end: x as u32,
                });
            } else {
                x += 1;
            }
        }
    }
    row_start.push(runs.len());

    let mut ds = DisjointSet::with_len(runs.len());
    for y in 1..mask.height as usize {
        let (prev_lo, prev_hi) = (row_start[y - 1], row_start[y]);
        let (cur_lo, cur_hi) = (row_start[y], row_start[y + 1]);
        let mut p = prev_lo;
        for c in cur_lo..cur_hi {
            let cur = runs[c];
            // skip previous-row runs that end strictly before the diagonal neighbour
            while p < prev_hi && runs[p].end < cur.start {
                p += 1;
            }
            let mut q = p;
            while q < prev_hi && runs[q].start <= cur.end {
                ds.union(c as u32, q as u32);
                q += 1;
            }
        }
    }
    let roots = (0..runs.len() as u32).map(|i| ds.find(i)).collect();
    (runs, roots)
}

/// 8-connected components in raster order of their first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (runs, roots) = runs_with_roots(mask);
    let mut slot = vec![u32::MAX; runs.len()];
    let mut acc: Vec<(u32, u32, u32, u32, u64)> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let root = roots[i] as usize;
        if slot[root] == u32::MAX {
            slot[root] = acc.len() as u32;
            acc.push((run.start, run.y, run.end, run.y + 1, 0));
        }
        let a = &mut acc[slot[root] as usize];
        a.0 = a.0.min(run.start);
        a.1 = a.1.min(run.y);
        a.2 = a.2.max(run.end);
        a.3 = a.3.max(run.y + 1);
        a.4 += (run.end - run.start) as u64;
    }
    acc.into_iter()
        .map(|(l, t, r, b, n)| Component {
            rect: Rect::new(l, t, r, b).expect("runs are non-empty"),
            pixel_count: n,
        })
        .collect()
}

/// Per-pixel component labels: 0 for background, `k + 1` for the `k`-th
/// component returned by [`connected_components`].
pub fn label_image(mask: &BinaryMask) -> Vec<u32> {
    let (runs, roots) = runs_with_roots(mask);
    let mut slot = vec![0u32; runs.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; mask.data.len()];
    for (i, run) in runs.iter().enumerate() {
        let root = roots[i] as usize;
        if slot[root] == 0 {
            next += 1;
            slot[root] = next;
        }
        let row = run.y as usize * mask.width as usize;
        labels[row + run.start as usize..row + run.end as usize].fill(slot[root]);
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Flood fill reference.
    fn flood_components(mask: &BinaryMask) -> Vec<Component> {
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        let mut seen = vec![false; (w * h) as usize];
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !mask.get(x as u32, y as u32) || seen[(y * w + x) as usize] {
                    continue;
                }
                let mut stack = vec![(x, y)];
                seen[(y * w + x) as usize] = true;
                let (mut l, mut t, mut r, mut b, mut n) = (x, y, x + 1, y + 1, 0u64);
                while let Some((px, py)) = stack.pop() {
                    n += 1;
                    l = l.min(px);
                    t = t.min(py);
                    r = r.max(px + 1);
                    b = b.max(py + 1);
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (nx, ny) = (px + dx, py + dy);
                            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                                continue;
                            }
                            let idx = (ny * w + nx) as usize;
                            if mask.get(nx as u32, ny as u32) && !seen[idx] {
                                seen[idx] = true;
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
                out.push(Component {
                    rect: Rect::from_i64(l, t, r, b).unwrap(),
                    pixel_count: n,
                });
            }
        }
        out
    }

    fn sorted(mut v: Vec<Component>) -> Vec<(Rect, u64)> {
        let mut out: Vec<_> = v.drain(..).map(|c| (c.rect, c.pixel_count)).collect();
        out.sort();
        out
    }

    #[test]
    fn empty_mask() {
        assert!(connected_components(&BinaryMask::new(10, 10)).is_empty());
    }

    #[test]
    fn two_squares() {
        let mut m = BinaryMask::new(20, 20);
        m.fill_rect(&Rect::new(1, 1, 4, 4).unwrap(), true);
        m.fill_rect(&Rect::new(10, 12, 15, 18).unwrap(), true);
        let cs = connected_components(&m);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].rect, Rect::new(1, 1, 4, 4).unwrap());
        assert_eq!(cs[1].rect, Rect::new(10, 12, 15, 18).unwrap());
        assert_eq!(cs[1].pixel_count, 30);
    }

    #[test]
    fn diagonal_touch_is_connected() {
        let mut m = BinaryMask::new(10, 10);
        m.fill_rect(&Rect::new(0, 0, 3, 3).unwrap(), true);
        m.fill_rect(&Rect::new(3, 3, 6, 6).unwrap(), true);
        let cs = connected_components(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].rect, Rect::new(0, 0, 6, 6).unwrap());
    }

    #[test]
    fn u_shape_merges_late() {
        let m = BinaryMask::from_fn(7, 5, |x, y| x == 0 || x == 6 || y == 4);
        let cs = connected_components(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].pixel_count, 5 + 5 + 5);
    }

    proptest! {
        #[test]
        fn matches_flood_fill(bits in proptest::collection::vec(any::<bool>(), 24 * 17)) {
            let m = BinaryMask::from_vec(24, 17, bits).unwrap();
            prop_assert_eq!(sorted(connected_components(&m)), sorted(flood_components(&m)));
            let labels = label_image(&m);
            let cs = connected_components(&m);
            for y in 0..17 {
                for x in 0..24 {
                    let l = labels[y * 24 + x];
                    prop_assert_eq!(l != 0, m.get(x as u32, y as u32));
                    if l != 0 {
                        prop_assert!(cs[(l - 1) as usize].rect.contains_point(x as u32, y as u32));
                    }
                }
            }
        }
    }
}
