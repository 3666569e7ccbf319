use std::collections::VecDeque;

use crate::fixedpoint::Fx32;
use crate::netcore::FeatureMap;

/// Input FIFO depth in words: one full 28x28 frame.
pub const FIFO_CAPACITY: usize = 784;

/// One word on a stream interface. `last` marks the final beat of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamBeat {
    pub data: Fx32,
    pub valid: bool,
    pub last: bool,
}

impl StreamBeat {
    pub fn valid(data: Fx32, last: bool) -> Self {
        StreamBeat { data, valid: true, last }
    }

    /// An idle cycle on the bus.
    pub fn bubble() -> Self {
        StreamBeat { data: Fx32::ZERO, valid: false, last: false }
    }
}

/// Row-major beats for a whole map, all valid, `last` on the final one.
pub fn stream_image(image: &FeatureMap<Fx32>) -> Vec<StreamBeat> {
    let n = image.data().len();
    image.data().iter().enumerate().map(|(i, &v)| StreamBeat::valid(v, i + 1 == n)).collect()
}

#[derive(Debug, Clone)]
pub struct InputFifo {
    queue: VecDeque<StreamBeat>,
    capacity: usize,
}

impl InputFifo {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "FIFO needs at least one slot");
        InputFifo { queue: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn is_full(&self) -> bool {
        self.queue.len() >= self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Hands the beat back when the FIFO is full; the writer must hold it.
    pub fn try_push(&mut self, beat: StreamBeat) -> Result<(), StreamBeat> {
        if self.is_full() {
            Err(beat)
        } else {
            self.queue.push_back(beat);
            Ok(())
        }
    }

    pub fn pop(&mut self) -> Option<StreamBeat> {
        self.queue.pop_front()
    }
}

pub trait BeatSource {
    fn next_beat(&mut self) -> Option<StreamBeat>;
}

/// DMA-style feeder writing a beat stream into an [`InputFifo`]. The feeder
/// stalls while the FIFO is full and resumes once the consumer drains it.
#[derive(Debug, Clone)]
pub struct DmaSource {
    pending: VecDeque<StreamBeat>,
    fifo: InputFifo,
    stalls: usize,
    peak_occupancy: usize,
}

impl DmaSource {
    pub fn new(beats: Vec<StreamBeat>, fifo_capacity: usize) -> Self {
        DmaSource { pending: beats.into(), fifo: InputFifo::new(fifo_capacity), stalls: 0, peak_occupancy: 0 }
    }

    /// Feeder bursts until the FIFO is full or the transfer is done.
    fn burst(&mut self) {
        while let Some(beat) = self.pending.pop_front() {
            if let Err(beat) = self.fifo.try_push(beat) {
                self.pending.push_front(beat);
                self.stalls += 1;
                break;
            }
        }
        self.peak_occupancy = self.peak_occupancy.max(self.fifo.len());
    }

    /// Number of times the feeder found the FIFO full.
    pub fn stalls(&self) -> usize {
        self.stalls
    }

    pub fn peak_occupancy(&self) -> usize {
        self.peak_occupancy
    }
}

impl BeatSource for DmaSource {
    fn next_beat(&mut self) -> Option<StreamBeat> {
        if self.fifo.is_empty() {
            self.burst();
        }
        self.fifo.pop()
    }
}

/// Streams an on-chip buffer in raster order.
#[derive(Debug, Clone)]
pub struct BramSource<'a> {
    data: &'a [Fx32],
    pos: usize,
}

impl<'a> BramSource<'a> {
    pub fn new(data: &'a [Fx32]) -> Self {
        BramSource { data, pos: 0 }
    }
}

impl BeatSource for BramSource<'_> {
    fn next_beat(&mut self) -> Option<StreamBeat> {
        let v = *self.data.get(self.pos)?;
        self.pos += 1;
        Some(StreamBeat::valid(v, self.pos == self.data.len()))
    }
}
