use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("sequence regression: got {got} after {last}")]
pub struct SeqRegression {
    pub last: u64,
    pub got: u64,
}

/// Per-connection sequence bookkeeping. Outbound numbers start at 1 and
/// strictly increase; inbound numbers must strictly increase too.
#[derive(Debug, Default)]
pub struct SeqTracker {
    last_inbound: Option<u64>,
    last_outbound: u64,
}

impl SeqTracker {
    pub fn new() -> SeqTracker {
        SeqTracker::default()
    }

    pub fn next_outbound(&mut self) -> u64 {
        self.last_outbound += 1;
        self.last_outbound
    }

    /// Records an inbound sequence number. A regression (or repeat) is
    /// reported and leaves the tracker unchanged.
    pub fn check_inbound(&mut self, seq: u64) -> Result<(), SeqRegression> {
        match self.last_inbound {
            Some(last) if seq <= last => Err(SeqRegression { last, got: seq }),
            _ => {
                self.last_inbound = Some(seq);
                Ok(())
            }
        }
    }
}
