//! Exact Euclidean distance transform (Felzenszwalb–Huttenlocher lower envelope).

/// Squared distance, in cells², from every cell to the nearest `true` cell.
/// Returns `f64::INFINITY` everywhere when the mask has no set cell.
pub fn squared_distance_transform(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(mask.len(), width * height);
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { f64::INFINITY }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for col in 0..width {
        for row in 0..height {
            f[row] = grid[row * width + col];
        }
        transform_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for row in 0..height {
            grid[row * width + col] = d[row];
        }
    }
    for row in 0..height {
        let line = &mut grid[row * width..(row + 1) * width];
        f[..width].copy_from_slice(line);
        transform_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        line.copy_from_slice(&d[..width]);
    }
    grid
}

/// Distance in meters to the nearest `true` cell.
pub fn distance_transform(mask: &[bool], width: usize, height: usize, resolution: f64) -> Vec<f64> {
    squared_distance_transform(mask, width, height)
        .into_iter()
        .map(|d2| d2.sqrt() * resolution)
        .collect()
}

fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => {
            d.iter_mut().for_each(|x| *x = f64::INFINITY);
            return;
        }
    };
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                // k > 0 here: z[0] is -inf
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
        let pts: Vec<(i64, i64)> = (0..w * h).filter(|&i| mask[i]).map(|i| ((i % w) as i64, (i / w) as i64)).collect();
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                pts.iter()
                    .map(|&(a, b)| ((a - x).pow(2) + (b - y).pow(2)) as f64)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn single_cell() {
        let mut mask = vec![false; 49];
        mask[3 * 7 + 3] = true;
        let d = distance_transform(&mask, 7, 7, 0.05);
        assert_eq!(d[3 * 7 + 3], 0.0);
        assert!((d[3 * 7 + 6] - 0.15).abs() < 1e-12);
        assert!((d[0] - (18.0f64).sqrt() * 0.05).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_infinite() {
        assert!(squared_distance_transform(&[false; 6], 3, 2).iter().all(|d| d.is_infinite()));
    }

    proptest! {
        #[test]
        fn matches_brute_force(w in 1usize..14, h in 1usize..14, bits in proptest::collection::vec(proptest::bool::weighted(0.1), 196)) {
            let mask = &bits[..w * h];
            prop_assert_eq!(squared_distance_transform(mask, w, h), brute(mask, w, h));
        }
    }
}
