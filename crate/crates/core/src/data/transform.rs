//! Pixel-level transforms on single-channel u8 images stored row-major.

/// Round-half-up conversion of a non-negative intensity to u8.
fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Rotates counterclockwise by `theta_degrees` about the image center.
///
/// Each destination pixel is inverse-mapped into the source and sampled
/// bilinearly; source taps outside the image read as 0, so corners clip.
pub fn rotate_about_center(img: &[u8], h: usize, w: usize, theta_degrees: f64) -> Vec<u8> {
    assert_eq!(img.len(), h * w, "rotate: buffer is not {h}x{w}");
    if theta_degrees == 0.0 {
        return img.to_vec();
    }
    let (sin, cos) = theta_degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let tap = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            img[y as usize * w + x as usize] as f64
        }
    };
    let mut out = vec![0u8; h * w];
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = (1.0 - fy) * ((1.0 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1))
                + fy * ((1.0 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
            out[y * w + x] = quantize(v);
        }
    }
    out
}

/// Source coordinate and weights for one output index (align-corners false,
/// edge-clamped).
fn axis_taps(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize of an `h × w` image to `th × tw`.
pub fn resize_bilinear(img: &[u8], h: usize, w: usize, th: usize, tw: usize) -> Vec<u8> {
    assert_eq!(img.len(), h * w, "resize: buffer is not {h}x{w}");
    assert!(th >= 1 && tw >= 1, "resize: empty target");
    if (h, w) == (th, tw) {
        return img.to_vec();
    }
    let cols: Vec<_> = (0..tw).map(|x| axis_taps(x, w, tw)).collect();
    let mut out = vec![0u8; th * tw];
    for y in 0..th {
        let (y0, y1, fy) = axis_taps(y, h, th);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let p = |yy: usize, xx: usize| img[yy * w + xx] as f64;
            let v =
                (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1));
            out[y * tw + x] = quantize(v);
        }
    }
    out
}

/// `round(gray · channel / 255)` with halves rounded up.
#[inline]
pub fn colorize_value(gray: u8, channel: u8) -> u8 {
    ((gray as u32 * channel as u32 + 127) / 255) as u8
}

/// Modulates `color` by a grayscale image; returns C×H×W (3 planes).
pub fn colorize(gray: &[u8], color: [u8; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(gray.len() * 3);
    for c in color {
        out.extend(gray.iter().map(|&g| colorize_value(g, c)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture5() -> Vec<u8> {
        (0..25u32).map(|i| ((i * 37 + 11) % 251) as u8).collect()
    }

    /// Exact quarter-turn counterclockwise by index permutation.
    fn rot90_oracle(img: &[u8], n: usize) -> Vec<u8> {
        let mut out = vec![0; n * n];
        for y in 0..n {
            for x in 0..n {
                out[y * n + x] = img[x * n + (n - 1 - y)];
            }
        }
        out
    }

    #[test]
    fn rotate_zero_is_identity() {
        let img = fixture5();
        assert_eq!(rotate_about_center(&img, 5, 5, 0.0), img);
    }

    #[test]
    fn rotate_preserves_center_pixel() {
        let mut img = vec![0u8; 49];
        img[24] = 255;
        for theta in [5.0, 10.0, 17.5, 30.0, 45.0, 90.0, 180.0] {
            let r = rotate_about_center(&img, 7, 7, theta);
            assert!(r[24] >= 254, "theta {theta}: {}", r[24]);
        }
    }

    #[test]
    fn rotate_quarter_turn_matches_permutation() {
        let img = fixture5();
        let want = rot90_oracle(&img, 5);
        let got = rotate_about_center(&img, 5, 5, 90.0);
        for (a, b) in got.iter().zip(&want) {
            assert!((*a as i32 - *b as i32).abs() <= 1, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn rotate_is_counterclockwise() {
        // A pixel right of center moves above center.
        let mut img = vec![0u8; 25];
        img[2 * 5 + 4] = 200;
        let r = rotate_about_center(&img, 5, 5, 90.0);
        assert_eq!(r[4 * 5 + 2], 0);
        assert!(r[2] >= 199);
    }

    #[test]
    fn rotate_clips_corners() {
        let img = vec![255u8; 28 * 28];
        let r = rotate_about_center(&img, 28, 28, 30.0);
        assert_eq!(r[0], 0);
        assert_eq!(r[14 * 28 + 14], 255);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = fixture5();
        assert_eq!(resize_bilinear(&img, 5, 5, 5, 5), img);
        let flat = vec![93u8; 28 * 28];
        for s in [20, 22, 24, 26, 28, 3, 40] {
            assert!(resize_bilinear(&flat, 28, 28, s, s).iter().all(|&v| v == 93));
        }
    }

    #[test]
    fn resize_halving_is_block_mean() {
        let img: Vec<u8> = vec![0, 10, 200, 100, 20, 30, 50, 250, 7, 9, 0, 255, 1, 3, 255, 0];
        let got = resize_bilinear(&img, 4, 4, 2, 2);
        for by in 0..2 {
            for bx in 0..2 {
                let mut sum = 0u32;
                for y in 0..2 {
                    for x in 0..2 {
                        sum += img[(2 * by + y) * 4 + 2 * bx + x] as u32;
                    }
                }
                let mean = sum as f64 / 4.0;
                let v = got[by * 2 + bx] as f64;
                assert!((v - mean).abs() <= 1.0, "block ({by},{bx}) {v} vs {mean}");
            }
        }
    }

    #[test]
    fn colorize_examples() {
        assert_eq!(colorize(&[255], [255, 0, 0]), vec![255, 0, 0]);
        assert_eq!(colorize(&[0], [31, 119, 180]), vec![0, 0, 0]);
        let got = colorize(&[128], [0, 200, 100]);
        assert_eq!(got[0], 0);
        assert!((got[1] as i32 - 100).abs() <= 1 && (got[2] as i32 - 50).abs() <= 1, "{got:?}");
    }

    proptest! {
        #[test]
        fn colorize_matches_real_rounding(g in any::<u8>(), c in any::<u8>()) {
            let exact = g as f64 * c as f64 / 255.0;
            prop_assert_eq!(colorize_value(g, c) as f64, (exact + 0.5).floor());
        }

        #[test]
        fn resize_stays_within_source_range(
            img in proptest::collection::vec(any::<u8>(), 64), s in 1usize..12
        ) {
            let lo = *img.iter().min().unwrap();
            let hi = *img.iter().max().unwrap();
            let out = resize_bilinear(&img, 8, 8, s, s);
            prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
        }

        #[test]
        fn full_turns_compose(img in proptest::collection::vec(any::<u8>(), 36)) {
            let twice = rotate_about_center(&rotate_about_center(&img, 6, 6, 90.0), 6, 6, 90.0);
            let half = rotate_about_center(&img, 6, 6, 180.0);
            for (a, b) in twice.iter().zip(&half) {
                prop_assert!((*a as i32 - *b as i32).abs() <= 1);
            }
        }
    }
}
