//! Exact Euclidean distance transform (Felzenszwalb & Huttenlocher lower
//! envelope of parabolas), separable over axes.

const INF: f64 = f64::INFINITY;

/// 1D squared distance transform of `f` sampled at spacing `h`.
fn dt1d(f: &[f64], h: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * h;
    for q in 0..n {
        if f[q] == INF {
            continue;
        }
        loop {
            if let Some(&p) = v.last() {
                let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                if s <= *z.last().unwrap() {
                    v.pop();
                    z.pop();
                    continue;
                }
                v.push(q);
                z.push(s);
            } else {
                v.push(q);
                z.push(-INF);
            }
            break;
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = INF);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Distance (mm) from each pixel inside `mask` to the nearest pixel center
/// outside it; zero outside. Pixels are `spacing` apart, x fastest.
pub fn inward_distance(mask: &[bool], nx: usize, ny: usize, spacing: [f64; 2]) -> Vec<f64> {
    let mut g: Vec<f64> = mask.iter().map(|&m| if m { INF } else { 0.0 }).collect();
    let (mut v, mut z) = (Vec::new(), Vec::new());
    let mut col = vec![0.0; ny];
    let mut res = vec![0.0; ny.max(nx)];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = g[j * nx + i];
        }
        dt1d(&col, spacing[1], &mut res[..ny], &mut v, &mut z);
        for j in 0..ny {
            g[j * nx + i] = res[j];
        }
    }
    for j in 0..ny {
        let row = g[j * nx..(j + 1) * nx].to_vec();
        dt1d(&row, spacing[0], &mut res[..nx], &mut v, &mut z);
        g[j * nx..(j + 1) * nx].copy_from_slice(&res[..nx]);
    }
    g.iter().map(|d| d.sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(mask: &[bool], nx: usize, ny: usize, s: [f64; 2]) -> Vec<f64> {
        (0..nx * ny)
            .map(|a| {
                if !mask[a] {
                    return 0.0;
                }
                (0..nx * ny)
                    .filter(|&b| !mask[b])
                    .map(|b| {
                        let dx = ((a % nx) as f64 - (b % nx) as f64) * s[0];
                        let dy = ((a / nx) as f64 - (b / nx) as f64) * s[1];
                        dx.hypot(dy)
                    })
                    .fold(INF, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let (nx, ny) = (23, 17);
        let mask: Vec<bool> = (0..nx * ny)
            .map(|a| {
                let (x, y) = ((a % nx) as f64 - 11.0, (a / nx) as f64 - 8.0);
                x * x / 60.0 + y * y / 30.0 < 1.0 || (a * 2654435761) % 11 == 0
            })
            .collect();
        for s in [[1.0, 1.0], [0.3, 0.7]] {
            let fast = inward_distance(&mask, nx, ny, s);
            let slow = brute(&mask, nx, ny, s);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn all_inside_is_infinite() {
        assert!(inward_distance(&[true; 4], 2, 2, [1.0, 1.0]).iter().all(|d| d.is_infinite()));
    }
}
