//! Bucketed sliding-window counters.

/// Anomaly classes tracked per source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyClass {
    SynIncomplete = 0,
    BareAck = 1,
    Rst = 2,
    PshAnomaly = 3,
    UrgAnomaly = 4,
}

const CLASSES: usize = 5;
const EMPTY: u64 = u64::MAX;

#[derive(Debug, Clone, Copy)]
struct Slot {
    epoch: u64,
    counts: [u32; CLASSES],
}

/// Ring of `n` sub-bucket counters per anomaly class.
///
/// Bucket `e` covers `[e * width, (e + 1) * width)`. At bucket `now` the
/// window is buckets `now - n + 1 ..= now`, so every counted event is strictly
/// newer than `now_ts - window`.
#[derive(Debug, Clone)]
pub struct SourceWindow {
    slots: Vec<Slot>,
}

impl SourceWindow {
    pub fn new(bucket_count: usize) -> Self {
        SourceWindow {
            slots: vec![
                Slot {
                    epoch: EMPTY,
                    counts: [0; CLASSES],
                };
                bucket_count
            ],
        }
    }

    fn n(&self) -> u64 {
        self.slots.len() as u64
    }

    fn in_window(&self, epoch: u64, now_epoch: u64) -> bool {
        epoch != EMPTY && epoch <= now_epoch && epoch + self.n() > now_epoch
    }

    /// Records one event in bucket `epoch`. Events already outside the window
    /// are dropped.
    pub fn add(&mut self, class: AnomalyClass, epoch: u64, now_epoch: u64) {
        if !self.in_window(epoch, now_epoch) {
            return;
        }
        let idx = (epoch % self.n()) as usize;
        let slot = &mut self.slots[idx];
        if slot.epoch != epoch {
            if slot.epoch != EMPTY && slot.epoch > epoch {
                return;
            }
            slot.epoch = epoch;
            slot.counts = [0; CLASSES];
        }
        slot.counts[class as usize] += 1;
    }

    pub fn count(&self, class: AnomalyClass, now_epoch: u64) -> u32 {
        self.slots
            .iter()
            .filter(|s| self.in_window(s.epoch, now_epoch))
            .map(|s| s.counts[class as usize])
            .sum()
    }

    /// True when nothing in the ring still counts at `now_epoch`.
    pub fn is_stale(&self, now_epoch: u64) -> bool {
        !self
            .slots
            .iter()
            .any(|s| self.in_window(s.epoch, now_epoch))
    }
}
