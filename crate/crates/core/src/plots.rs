//! Static figure artifacts: dendrogram, elbow curve and t-SNE scatter as
//! SVG, cluster exemplars as a PNG montage.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::clustering::LinkageTree;
use crate::ingest::{normalize_thermal, TempWindow, ThermalGrid};

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error("cannot write {path}: {detail}")]
    Write { path: PathBuf, detail: String },
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 50.0;

/// Qualitative colours for cluster labels 1, 2, ...
const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn colour(label: usize) -> &'static str {
    PALETTE[label.saturating_sub(1) % PALETTE.len()]
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    s
}

fn axes(s: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 2.0 + 10.0);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
}

/// Maps data coordinates into the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x.1 - self.x.0).max(1e-12);
        MARGIN + (x - self.x.0) / span * (W - 1.5 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y.1 - self.y.0).max(1e-12);
        H - MARGIN - (y - self.y.0) / span * (H - 2.0 * MARGIN - 10.0)
    }
}

/// Dendrogram with merge heights on the vertical axis; leaves are coloured
/// by `labels` when given.
pub fn dendrogram_svg(tree: &LinkageTree, labels: Option<&[usize]>) -> Result<String, PlotError> {
    let n = tree.n_leaves;
    if n == 0 {
        return Err(PlotError::Empty("dendrogram has no leaves"));
    }
    let top = tree.merges.iter().map(|m| m.height).fold(0.0, f64::max);
    let frame = Frame {
        x: (0.0, (n.max(2) - 1) as f64),
        y: (0.0, if top > 0.0 { top } else { 1.0 }),
    };
    let mut pos = vec![(0.0, 0.0); n + tree.merges.len()];
    for (slot, &leaf) in tree.leaf_order().iter().enumerate() {
        pos[leaf] = (slot as f64, 0.0);
    }
    let mut s = header("Ward dendrogram");
    axes(&mut s, "thermographs", "distance");
    for (i, m) in tree.merges.iter().enumerate() {
        let (xa, ya) = pos[m.a];
        let (xb, yb) = pos[m.b];
        let h = m.height;
        pos[n + i] = ((xa + xb) / 2.0, h);
        let _ = writeln!(
            s,
            r#"<polyline points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="black" stroke-width="0.6"/>"#,
            frame.px(xa),
            frame.py(ya),
            frame.px(xa),
            frame.py(h),
            frame.px(xb),
            frame.py(h),
            frame.px(xb),
            frame.py(yb)
        );
    }
    if let Some(labels) = labels {
        for (leaf, &(x, _)) in pos[..n].iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}"/>"#,
                frame.px(x),
                frame.py(0.0) + 4.0,
                colour(labels[leaf])
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{top:.2}</text>"#, MARGIN - 4.0, frame.py(top));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Explained variance against k with the selected k marked.
pub fn elbow_svg(curve: &[(usize, f64)], chosen_k: usize) -> Result<String, PlotError> {
    if curve.is_empty() {
        return Err(PlotError::Empty("elbow curve is empty"));
    }
    let k_max = curve.iter().map(|c| c.0).max().unwrap_or(1);
    let frame = Frame {
        x: (1.0, k_max.max(2) as f64),
        y: (0.0, 1.0),
    };
    let mut s = header("Elbow method");
    axes(&mut s, "number of clusters k", "explained variance");
    let points: Vec<String> = curve
        .iter()
        .map(|&(k, v)| format!("{:.2},{:.2}", frame.px(k as f64), frame.py(v)))
        .collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, points.join(" "), colour(2));
    for &(k, v) in curve {
        let (x, y) = (frame.px(k as f64), frame.py(v));
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{}"/>"#, colour(2));
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{k}</text>"#, H - MARGIN + 14.0);
        if k == chosen_k {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="7" fill="none" stroke="{}" stroke-width="2"/>"#, colour(1));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">elbow (k = {k})</text>"#, x + 9.0, y + 14.0);
        }
    }
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{tick:.1}</text>"#, MARGIN - 4.0, frame.py(tick) + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Two-dimensional embedding coloured by cluster label.
pub fn tsne_svg(embedding: &[[f64; 2]], labels: &[usize]) -> Result<String, PlotError> {
    if embedding.is_empty() {
        return Err(PlotError::Empty("embedding is empty"));
    }
    assert_eq!(embedding.len(), labels.len(), "one label per point");
    let lo_hi = |d: usize| {
        embedding
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[d]), hi.max(p[d])))
    };
    let frame = Frame { x: lo_hi(0), y: lo_hi(1) };
    let mut s = header("t-SNE of latent representations");
    axes(&mut s, "t-SNE 1", "t-SNE 2");
    for (p, &l) in embedding.iter().zip(labels) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.75"/>"#,
            frame.px(p[0]),
            frame.py(p[1]),
            colour(l)
        );
    }
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    for (i, l) in seen.iter().enumerate() {
        let y = 40.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/>"#, W - 110.0, colour(*l));
        let _ = writeln!(s, r#"<text x="{}" y="{}">cluster {l}</text>"#, W - 100.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Black → red → yellow → white ramp on `[0, 1]`; background (NaN) is black.
fn hot(v: f32) -> [u8; 3] {
    if v.is_nan() {
        return [0, 0, 0];
    }
    let c = |x: f32| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [c(3.0 * v), c(3.0 * v - 1.0), c(3.0 * v - 2.0)]
}

/// One row per cluster of segmented thermographs, left to right in the
/// given order, separated by 4-pixel gaps.
pub fn exemplar_montage(rows: &[Vec<&ThermalGrid>], window: TempWindow) -> Result<image::RgbImage, PlotError> {
    let first = rows
        .iter()
        .flatten()
        .next()
        .ok_or(PlotError::Empty("no exemplars"))?;
    let (h, w) = first.dims();
    let gap = 4;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width = cols * w + (cols + 1) * gap;
    let height = rows.len() * h + (rows.len() + 1) * gap;
    let mut img = image::RgbImage::from_pixel(width as u32, height as u32, image::Rgb([255, 255, 255]));
    for (r, row) in rows.iter().enumerate() {
        for (c, grid) in row.iter().enumerate() {
            assert_eq!(grid.dims(), (h, w), "exemplars share one size");
            let unit = normalize_thermal(grid, window);
            let (ox, oy) = (gap + c * (w + gap), gap + r * (h + gap));
            for y in 0..h {
                for x in 0..w {
                    img.put_pixel((ox + x) as u32, (oy + y) as u32, image::Rgb(hot(unit[y * w + x])));
                }
            }
        }
    }
    Ok(img)
}

pub fn save_png(img: &image::RgbImage, path: &Path) -> Result<(), PlotError> {
    img.save(path).map_err(|e| PlotError::Write {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
