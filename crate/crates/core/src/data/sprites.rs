//! Pentomino masks and their exact rigid transforms.

use serde::{Deserialize, Serialize};

/// A binary mask on an `h × w` grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub cells: Vec<bool>,
}

impl Mask {
    /// Parses rows of `X` (filled) and `.` (empty).
    pub fn from_rows(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        let mut cells = Vec::with_capacity(h * w);
        for r in rows {
            assert_eq!(r.len(), w, "ragged mask row {r:?}");
            cells.extend(r.bytes().map(|b| b == b'X'));
        }
        Mask { h, w, cells }
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// One counterclockwise quarter turn: `h × w` becomes `w × h`.
    pub fn rot90(&self) -> Mask {
        let (h, w) = (self.w, self.h);
        let mut cells = vec![false; h * w];
        for y in 0..h {
            for x in 0..w {
                cells[y * w + x] = self.get(x, self.w - 1 - y);
            }
        }
        Mask { h, w, cells }
    }

    /// Counterclockwise rotation by a multiple of 90 degrees.
    pub fn rotate(&self, degrees: u32) -> Mask {
        assert_eq!(degrees % 90, 0, "sprite rotation must be a multiple of 90");
        let mut m = self.clone();
        for _ in 0..(degrees / 90) % 4 {
            m = m.rot90();
        }
        m
    }

    /// Integer pixel replication.
    pub fn scale(&self, k: usize) -> Mask {
        let (h, w) = (self.h * k, self.w * k);
        let cells = (0..h * w).map(|i| self.get(i / w / k, i % w / k)).collect();
        Mask { h, w, cells }
    }

    /// Bounding box `(h, w)` after rotation and scaling.
    pub fn transformed_dims(&self, degrees: u32, k: usize) -> (usize, usize) {
        if (degrees / 90) % 2 == 1 {
            (self.w * k, self.h * k)
        } else {
            (self.h * k, self.w * k)
        }
    }
}

/// The ten pentominoes other than the straight `I`, each on a grid no larger
/// than 4 × 4 cells.
pub const PENTOMINO_TABLE: [(&str, &[&str]); 10] = [
    ("F", &[".XX", "XX.", ".X."]),
    ("L", &["X.", "X.", "X.", "XX"]),
    ("N", &[".X", ".X", "XX", "X."]),
    ("P", &["XX", "XX", "X."]),
    ("T", &["XXX", ".X.", ".X."]),
    ("U", &["X.X", "XXX"]),
    ("V", &["X..", "X..", "XXX"]),
    ("W", &["X..", "XX.", ".XX"]),
    ("Y", &[".X", "XX", ".X", ".X"]),
    ("Z", &["XX.", ".X.", ".XX"]),
];

pub fn pentomino_names() -> Vec<String> {
    PENTOMINO_TABLE.iter().map(|(n, _)| n.to_string()).collect()
}

pub fn pentomino_mask(name: &str) -> Option<Mask> {
    PENTOMINO_TABLE.iter().find(|(n, _)| *n == name).map(|(_, rows)| Mask::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    /// Cell coordinates normalized to the origin; equal sets mean congruent
    /// placement up to translation.
    fn normalized(m: &Mask) -> BTreeSet<(i32, i32)> {
        let pts: Vec<(i32, i32)> = (0..m.h)
            .flat_map(|y| (0..m.w).map(move |x| (y, x)))
            .filter(|&(y, x)| m.get(y, x))
            .map(|(y, x)| (y as i32, x as i32))
            .collect();
        let y0 = pts.iter().map(|p| p.0).min().unwrap();
        let x0 = pts.iter().map(|p| p.1).min().unwrap();
        pts.into_iter().map(|(y, x)| (y - y0, x - x0)).collect()
    }

    /// All eight symmetries via coordinate algebra, independent of `rot90`.
    fn free_forms(m: &Mask) -> Vec<BTreeSet<(i32, i32)>> {
        let base = normalized(m);
        type Map = fn((i32, i32)) -> (i32, i32);
        let maps: [Map; 8] = [
            |(y, x)| (y, x),
            |(y, x)| (-x, y),
            |(y, x)| (-y, -x),
            |(y, x)| (x, -y),
            |(y, x)| (y, -x),
            |(y, x)| (x, y),
            |(y, x)| (-y, x),
            |(y, x)| (-x, -y),
        ];
        maps.iter()
            .map(|f| {
                let pts: Vec<_> = base.iter().map(|&p| f(p)).collect();
                let y0 = pts.iter().map(|p| p.0).min().unwrap();
                let x0 = pts.iter().map(|p| p.1).min().unwrap();
                pts.into_iter().map(|(y, x)| (y - y0, x - x0)).collect()
            })
            .collect()
    }

    fn connected(m: &Mask) -> bool {
        let cells: Vec<(usize, usize)> =
            (0..m.h).flat_map(|y| (0..m.w).map(move |x| (y, x))).filter(|&(y, x)| m.get(y, x)).collect();
        let mut seen = vec![cells[0]];
        let mut frontier = vec![cells[0]];
        while let Some((y, x)) = frontier.pop() {
            for &c in &cells {
                let adj = (c.0 as i32 - y as i32).abs() + (c.1 as i32 - x as i32).abs() == 1;
                if adj && !seen.contains(&c) {
                    seen.push(c);
                    frontier.push(c);
                }
            }
        }
        seen.len() == cells.len()
    }

    #[test]
    fn table_is_ten_distinct_pentominoes() {
        let masks: Vec<Mask> = PENTOMINO_TABLE.iter().map(|(_, r)| Mask::from_rows(r)).collect();
        assert_eq!(masks.len(), 10);
        for (i, m) in masks.iter().enumerate() {
            assert_eq!(m.count(), 5, "{}", PENTOMINO_TABLE[i].0);
            assert!(m.h <= 4 && m.w <= 4);
            assert!(connected(m), "{}", PENTOMINO_TABLE[i].0);
            for other in &masks[i + 1..] {
                let forms = free_forms(m);
                assert!(!forms.contains(&normalized(other)), "duplicate free pentomino");
            }
        }
        assert!(pentomino_mask("I").is_none());
    }

    #[test]
    fn rot90_matches_coordinate_oracle() {
        for (_, rows) in PENTOMINO_TABLE {
            let m = Mask::from_rows(rows);
            let r = m.rot90();
            assert_eq!((r.h, r.w), (m.w, m.h));
            for y in 0..r.h {
                for x in 0..r.w {
                    assert_eq!(r.get(y, x), m.get(x, m.w - 1 - y));
                }
            }
            assert!(free_forms(&m).contains(&normalized(&r)));
            assert_eq!(m.rotate(360), m);
            assert_eq!(m.rotate(180), m.rot90().rot90());
        }
    }

    #[test]
    fn ccw_direction() {
        // A top bar with a foot hanging at the left becomes a left column
        // whose foot points right.
        let m = Mask::from_rows(&["XXX", "X.."]);
        assert_eq!(m.rot90(), Mask::from_rows(&["X.", "X.", "XX"]));
    }

    #[test]
    fn scale_replicates_pixels() {
        let m = Mask::from_rows(&["X.", ".X"]);
        let s = m.scale(2);
        assert_eq!(s, Mask::from_rows(&["XX..", "XX..", "..XX", "..XX"]));
        for (_, rows) in PENTOMINO_TABLE {
            let m = Mask::from_rows(rows);
            for deg in [0, 90, 180, 270] {
                let t = m.rotate(deg).scale(2);
                assert_eq!((t.h, t.w), m.transformed_dims(deg, 2));
                assert!(t.h <= 8 && t.w <= 8);
                assert_eq!(t.count(), 20);
            }
        }
    }
}
