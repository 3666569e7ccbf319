use std::collections::VecDeque;

use super::{HwError, StreamBeat};
use crate::fixedpoint::Fx32;

/// A 2x2 neighbourhood anchored at output coordinate (row, col).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    /// `taps[di][dj]` is pixel (row + di, col + dj), zero past the bottom/right edge.
    pub taps: [[Fx32; 2]; 2],
}

/// Line-buffer windowing unit for a 2x2 "same" convolution.
///
/// Holds the last `width + 1` pixels (one row plus one). Windows come out in
/// raster order, at most one per step, as soon as every in-range tap has
/// arrived; the last row and the final right-column window are drained by
/// [`WindowUnit::flush_step`] once the frame is complete. Reads past the
/// bottom row or right column are zero.
#[derive(Debug, Clone)]
pub struct WindowUnit {
    height: usize,
    width: usize,
    line: VecDeque<Fx32>,
    received: usize,
    emitted: usize,
}

impl WindowUnit {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "window unit needs a non-empty frame");
        WindowUnit { height, width, line: VecDeque::with_capacity(width + 1), received: 0, emitted: 0 }
    }

    fn total(&self) -> usize {
        self.height * self.width
    }

    pub fn received(&self) -> usize {
        self.received
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    pub fn is_finished(&self) -> bool {
        self.emitted == self.total()
    }

    /// Capacity of the line buffer in words.
    pub fn line_capacity(&self) -> usize {
        self.width + 1
    }

    /// Accepts one beat. Bubbles (valid low) are ignored.
    pub fn window_step(&mut self, beat: StreamBeat) -> Result<Option<Window>, HwError> {
        if !beat.valid {
            return Ok(None);
        }
        let total = self.total();
        if self.received == total {
            return Err(HwError::Overrun { total });
        }
        let expect_last = self.received + 1 == total;
        if beat.last != expect_last {
            return Err(HwError::Protocol { index: self.received, total, found: beat.last, expected: expect_last });
        }
        // a window left over from the previous beat reads the oldest slot,
        // which this beat is about to evict
        let backlog = self.try_emit();
        // the incoming beat is visible to the taps alongside the stored line
        self.line.push_back(beat.data);
        self.received += 1;
        let out = backlog.or_else(|| self.try_emit());
        while self.line.len() > self.line_capacity() {
            self.line.pop_front();
        }
        Ok(out)
    }

    /// Drains windows that need no further input. Only legal after the final beat.
    pub fn flush_step(&mut self) -> Result<Option<Window>, HwError> {
        if self.received < self.total() {
            return Err(HwError::Underrun { received: self.received, total: self.total() });
        }
        Ok(self.try_emit())
    }

    /// Raster index of the newest pixel window `n` reads.
    fn newest_tap(&self, n: usize) -> usize {
        let (i, j) = (n / self.width, n % self.width);
        let (r, c) = ((i + 1).min(self.height - 1), (j + 1).min(self.width - 1));
        r * self.width + c
    }

    fn try_emit(&mut self) -> Option<Window> {
        let n = self.emitted;
        if n == self.total() || self.newest_tap(n) >= self.received {
            return None;
        }
        let (row, col) = (n / self.width, n % self.width);
        let taps = [[self.tap(row, col), self.tap(row, col + 1)], [self.tap(row + 1, col), self.tap(row + 1, col + 1)]];
        self.emitted += 1;
        Some(Window { row, col, taps })
    }

    fn tap(&self, r: usize, c: usize) -> Fx32 {
        if r >= self.height || c >= self.width {
            return Fx32::ZERO;
        }
        let pos = r * self.width + c;
        let oldest = self.received - self.line.len();
        assert!(
            pos >= oldest && pos < self.received,
            "pixel {pos} outside line buffer [{oldest}, {})",
            self.received
        );
        self.line[pos - oldest]
    }
}
