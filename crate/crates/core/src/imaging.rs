//! Pad-to-square and resampling helpers shared by the network inputs.

/// Placement of an `h×w` image centered inside a square canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SquarePad {
    pub side: usize,
    pub off_y: usize,
    pub off_x: usize,
    pub h: usize,
    pub w: usize,
}

impl SquarePad {
    pub fn new(h: usize, w: usize) -> Self {
        let side = h.max(w);
        SquarePad {
            side,
            off_y: (side - h) / 2,
            off_x: (side - w) / 2,
            h,
            w,
        }
    }

    /// Copies a single-channel plane onto the square canvas.
    pub fn pad<T: Copy>(&self, plane: &[T], fill: T) -> Vec<T> {
        assert_eq!(plane.len(), self.h * self.w);
        let mut out = vec![fill; self.side * self.side];
        for r in 0..self.h {
            let dst = (r + self.off_y) * self.side + self.off_x;
            out[dst..dst + self.w].copy_from_slice(&plane[r * self.w..(r + 1) * self.w]);
        }
        out
    }

    /// Crops the original image region back out of a square canvas.
    pub fn crop<T: Copy>(&self, square: &[T]) -> Vec<T> {
        assert_eq!(square.len(), self.side * self.side);
        let mut out = Vec::with_capacity(self.h * self.w);
        for r in 0..self.h {
            let src = (r + self.off_y) * self.side + self.off_x;
            out.extend_from_slice(&square[src..src + self.w]);
        }
        out
    }
}

/// Nearest-neighbour resampling sampling each target pixel's center.
pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, nh: usize, nw: usize) -> Vec<T> {
    assert_eq!(src.len(), h * w);
    let ys: Vec<usize> = (0..nh).map(|y| (((y as f64 + 0.5) * h as f64 / nh as f64) as usize).min(h - 1)).collect();
    let xs: Vec<usize> = (0..nw).map(|x| (((x as f64 + 0.5) * w as f64 / nw as f64) as usize).min(w - 1)).collect();
    let mut out = Vec::with_capacity(nh * nw);
    for &sy in &ys {
        for &sx in &xs {
            out.push(src[sy * w + sx]);
        }
    }
    out
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    let coords = |n: usize, size: usize| -> Vec<(usize, usize, f32)> {
        (0..n)
            .map(|i| {
                let s = ((i as f64 + 0.5) * size as f64 / n as f64 - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(size - 1);
                let i1 = (i0 + 1).min(size - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = coords(nh, h);
    let xs = coords(nw, w);
    let mut out = Vec::with_capacity(nh * nw);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Area-weighted resampling: each target pixel averages the source area it
/// covers, with fractional weights at the cell edges.
pub fn resize_area(src: &[f32], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    let weights = |n: usize, size: usize| -> Vec<Vec<(usize, f32)>> {
        let f = size as f64 / n as f64;
        (0..n)
            .map(|i| {
                let (a, b) = (i as f64 * f, (i + 1) as f64 * f);
                let mut ws = Vec::new();
                let mut j = a.floor() as usize;
                while (j as f64) < b && j < size {
                    let overlap = (b.min(j as f64 + 1.0) - a.max(j as f64)).max(0.0);
                    if overlap > 0.0 {
                        ws.push((j, (overlap / f) as f32));
                    }
                    j += 1;
                }
                ws
            })
            .collect()
    };
    let ys = weights(nh, h);
    let xs = weights(nw, w);
    let mut out = Vec::with_capacity(nh * nw);
    for wy in &ys {
        for wx in &xs {
            let mut acc = 0.0f32;
            for &(sy, fy) in wy {
                for &(sx, fx) in wx {
                    acc += src[sy * w + sx] * fy * fx;
                }
            }
            out.push(acc);
        }
    }
    out
}
