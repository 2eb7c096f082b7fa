//! Exact Euclidean distance transform on anisotropic grids.
//!
//! Separable lower-envelope-of-parabolas transform (Felzenszwalb & Huttenlocher),
//! applied once per axis with that axis's physical spacing.

/// Squared physical distance from every voxel to the nearest `true` voxel of
/// `features`. `INFINITY` everywhere if there are no features.
pub fn squared_distance_field(features: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let mut field: Vec<f64> = features
        .iter()
        .map(|&f| if f { 0.0 } else { f64::INFINITY })
        .collect();
    let [nx, ny, nz] = dims;
    let strides = [1, nx, nx * ny];
    let mut line = Vec::new();
    let mut out = Vec::new();
    for axis in 0..3 {
        let len = dims[axis];
        if len < 2 {
            continue;
        }
        let stride = strides[axis];
        let (a, b) = match axis {
            0 => ((ny, nx), (nz, nx * ny)),
            1 => ((nx, 1), (nz, nx * ny)),
            _ => ((nx, 1), (ny, nx)),
        };
        for j in 0..b.0 {
            for i in 0..a.0 {
                let base = i * a.1 + j * b.1;
                line.clear();
                line.extend((0..len).map(|k| field[base + k * stride]));
                transform_line(&line, spacing[axis], &mut out);
                for (k, v) in out.iter().enumerate() {
                    field[base + k * stride] = *v;
                }
            }
        }
    }
    field
}

/// 1D pass: `out[p] = min_q (s(p - q))^2 + f[q]`.
fn transform_line(f: &[f64], s: f64, out: &mut Vec<f64>) {
    let n = f.len();
    out.clear();
    out.resize(n, f64::INFINITY);
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);
    let pos = |q: usize| q as f64 * s;
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        loop {
            let Some(&v) = hull.last() else {
                hull.push(q);
                bounds.clear();
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            let cross = ((f[q] + pos(q) * pos(q)) - (f[v] + pos(v) * pos(v))) / (2.0 * (pos(q) - pos(v)));
            if cross <= *bounds.last().expect("bounds track hull") {
                hull.pop();
                bounds.pop();
                if hull.is_empty() {
                    continue;
                }
            } else {
                hull.push(q);
                bounds.push(cross);
                break;
            }
        }
    }
    if hull.is_empty() {
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let x = pos(p);
        while k + 1 < hull.len() && bounds[k + 1] < x {
            k += 1;
        }
        let q = hull[k];
        let d = (p as f64 - q as f64) * s;
        *o = d * d + f[q];
    }
}
