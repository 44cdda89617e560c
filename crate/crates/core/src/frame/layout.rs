//! Physical sensor placement on the canvas.
//!
//! Board `b` fills tile `(b / 4, b % 4)` of the 2 x 4 grid of 32 x 32 tiles.
//! Boards 0-5 each carry one 32 x 32 body array. Boards 6 and 7 carry the
//! smaller arrays and the forelimb points at the offsets in [`PATCHES`];
//! every other pixel of those two tiles is padding and always reads 0.

use super::{BOARD_COUNT, TILE};

/// One sensor (array or single point) mapped into its board tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPatch {
    pub name: &'static str,
    pub board: u8,
    /// Offset inside the 32 x 32 tile.
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    /// Full-scale force in kilograms.
    pub range_kg: f64,
}

impl SensorPatch {
    /// Canvas coordinates of the patch's top-left pixel.
    pub fn canvas_origin(&self) -> (usize, usize) {
        let (r, c) = tile_origin(self.board);
        (r + self.row, c + self.col)
    }

    fn contains_tile_pixel(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }
}

const fn body(name: &'static str, board: u8) -> SensorPatch {
    SensorPatch {
        name,
        board,
        row: 0,
        col: 0,
        height: TILE,
        width: TILE,
        range_kg: 2.0,
    }
}

const fn small(name: &'static str, board: u8, row: usize) -> SensorPatch {
    SensorPatch {
        name,
        board,
        row,
        col: 0,
        height: 13,
        width: 16,
        range_kg: 2.0,
    }
}

const fn point(name: &'static str, col: usize) -> SensorPatch {
    SensorPatch {
        name,
        board: 7,
        row: 16,
        col,
        height: 1,
        width: 1,
        range_kg: 25.0,
    }
}

pub const PATCHES: [SensorPatch; 13] = [
    body("body_0", 0),
    body("body_1", 1),
    body("body_2", 2),
    body("body_3", 3),
    body("body_4", 4),
    body("body_5", 5),
    small("cheeks", 6, 0),
    small("chin", 6, 16),
    small("head", 7, 0),
    point("left_forelimb_front", 0),
    point("left_forelimb_back", 1),
    point("right_forelimb_front", 2),
    point("right_forelimb_back", 3),
];

/// Canvas coordinates of the top-left pixel of a board's tile.
pub fn tile_origin(board: u8) -> (usize, usize) {
    let b = board as usize;
    debug_assert!(b < BOARD_COUNT);
    ((b / 4) * TILE, (b % 4) * TILE)
}

/// Which board and tile-local pixel a canvas pixel belongs to.
pub fn board_of(row: usize, col: usize) -> (u8, usize, usize) {
    ((row / TILE * 4 + col / TILE) as u8, row % TILE, col % TILE)
}

/// The sensor covering a canvas pixel, or `None` for padding.
pub fn sensor_at(row: usize, col: usize) -> Option<&'static SensorPatch> {
    if row >= 2 * TILE || col >= 4 * TILE {
        return None;
    }
    let (board, r, c) = board_of(row, col);
    PATCHES.iter().find(|p| p.board == board && p.contains_tile_pixel(r, c))
}

/// Per-tile mask of sensor pixels, indexed `board * 1024 + r * 32 + c`.
pub fn sensor_mask() -> &'static [bool] {
    use std::sync::OnceLock;
    static MASK: OnceLock<Vec<bool>> = OnceLock::new();
    MASK.get_or_init(|| {
        let mut m = vec![false; BOARD_COUNT * TILE * TILE];
        for p in &PATCHES {
            for r in p.row..p.row + p.height {
                for c in p.col..p.col + p.width {
                    m[p.board as usize * TILE * TILE + r * TILE + c] = true;
                }
            }
        }
        m
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensor_pixel_count() {
        // six body arrays, three 13 x 16 arrays, four points
        let expected = 6 * 1024 + 3 * 13 * 16 + 4;
        assert_eq!(sensor_mask().iter().filter(|&&m| m).count(), expected);
    }

    #[test]
    fn tiles_follow_board_order() {
        assert_eq!(tile_origin(0), (0, 0));
        assert_eq!(tile_origin(3), (0, 96));
        assert_eq!(tile_origin(4), (32, 0));
        assert_eq!(tile_origin(7), (32, 96));
        assert_eq!(board_of(40, 100), (7, 8, 4));
    }

    #[test]
    fn patches_do_not_overlap() {
        for (i, a) in PATCHES.iter().enumerate() {
            for b in &PATCHES[i + 1..] {
                if a.board != b.board {
                    continue;
                }
                let disjoint = a.row + a.height <= b.row
                    || b.row + b.height <= a.row
                    || a.col + a.width <= b.col
                    || b.col + b.width <= a.col;
                assert!(disjoint, "{} overlaps {}", a.name, b.name);
            }
        }
    }
}
