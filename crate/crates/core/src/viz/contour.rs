/// Marching squares: segments of the zero level of `values`, sampled on the
/// grid `xs` x `ys` with `values[j * xs.len() + i]` at `(xs[i], ys[j])`.
///
/// Saddle cells are resolved by the sign of the cell-center average.
pub fn contour_segments(xs: &[f64], ys: &[f64], values: &[f64]) -> Vec<[(f64, f64); 2]> {
    let nx = xs.len();
    assert_eq!(values.len(), nx * ys.len());
    let at = |i: usize, j: usize| values[j * nx + i];
    let mut out = Vec::new();
    if nx < 2 || ys.len() < 2 {
        return out;
    }
    let cross = |pa: (f64, f64), pb: (f64, f64), a: f64, b: f64| -> Option<(f64, f64)> {
        if (a > 0.0) == (b > 0.0) {
            return None;
        }
        let t = a / (a - b);
        Some((pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)))
    };
    for j in 0..ys.len() - 1 {
        for i in 0..nx - 1 {
            let (v00, v10, v11, v01) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            let (p00, p10, p11, p01) = (
                (xs[i], ys[j]),
                (xs[i + 1], ys[j]),
                (xs[i + 1], ys[j + 1]),
                (xs[i], ys[j + 1]),
            );
            let bottom = cross(p00, p10, v00, v10);
            let right = cross(p10, p11, v10, v11);
            let top = cross(p01, p11, v01, v11);
            let left = cross(p00, p01, v00, v01);
            match (bottom, right, top, left) {
                (Some(b), Some(r), Some(t), Some(l)) => {
                    let center = 0.25 * (v00 + v10 + v11 + v01);
                    if (center > 0.0) == (v00 > 0.0) {
                        out.push([b, r]);
                        out.push([t, l]);
                    } else {
                        out.push([l, b]);
                        out.push([r, t]);
                    }
                }
                _ => {
                    let hits: Vec<(f64, f64)> = [bottom, right, top, left].into_iter().flatten().collect();
                    if hits.len() == 2 {
                        out.push([hits[0], hits[1]]);
                    }
                }
            }
        }
    }
    out
}
