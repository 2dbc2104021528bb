//! Polygon fill: even-odd rule sampled at pixel centres.

/// Class index and polygon vertices `(x, y)` in pixel units.
pub type LabeledPolygon = (u8, Vec<(f64, f64)>);

/// A polygon that was not drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterWarning {
    pub shape: usize,
    pub label: u8,
    pub detail: String,
}

/// Draws `shapes` in order onto an `h×w` zero mask; later shapes overwrite
/// earlier ones. Vertices are clamped to `[0,w]×[0,h]`.
pub fn rasterize(shapes: &[LabeledPolygon], h: usize, w: usize) -> (Vec<u8>, Vec<RasterWarning>) {
    let mut mask = vec![0u8; h * w];
    let mut warnings = Vec::new();
    let mut xs = Vec::new();
    for (si, (label, pts)) in shapes.iter().enumerate() {
        if pts.len() < 3 {
            log::warn!("skipping degenerate polygon {si} ({} vertices)", pts.len());
            warnings.push(RasterWarning {
                shape: si,
                label: *label,
                detail: format!("degenerate polygon with {} vertices", pts.len()),
            });
            continue;
        }
        let pts: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(x, y)| (x.clamp(0.0, w as f64), y.clamp(0.0, h as f64)))
            .collect();
        for row in 0..h {
            let py = row as f64 + 0.5;
            xs.clear();
            let mut j = pts.len() - 1;
            for i in 0..pts.len() {
                let (xi, yi) = pts[i];
                let (xj, yj) = pts[j];
                if (yi > py) != (yj > py) {
                    xs.push((xj - xi) * (py - yi) / (yj - yi) + xi);
                }
                j = i;
            }
            if xs.is_empty() {
                continue;
            }
            // A centre is inside when an odd number of crossings lie strictly to its right.
            xs.sort_by(|a, b| a.total_cmp(b));
            let line = &mut mask[row * w..(row + 1) * w];
            for (col, px) in line.iter_mut().enumerate() {
                let cx = col as f64 + 0.5;
                let right = xs.len() - xs.partition_point(|&x| x <= cx);
                if right % 2 == 1 {
                    *px = *label;
                }
            }
        }
    }
    (mask, warnings)
}
