//! Event-locked epoching and averaging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ErpError {
    #[error("no events given")]
    NoEvents,
    #[error("event #{index} at sample {event} needs samples {start}..={end}, recording has {len}")]
    OutOfBounds {
        index: usize,
        event: usize,
        start: i64,
        end: i64,
        len: usize,
    },
}

/// Milliseconds to samples, rounded down.
pub fn ms_to_samples(ms: f64, fs: f64) -> usize {
    (ms * fs / 1000.0).floor().max(0.0) as usize
}

/// Samples kept before and after each event; the event sample itself is
/// always included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochWindow {
    pub pre: usize,
    pub post: usize,
}

impl EpochWindow {
    pub fn from_ms(pre_ms: f64, post_ms: f64, fs: f64) -> Self {
        Self {
            pre: ms_to_samples(pre_ms, fs),
            post: ms_to_samples(post_ms, fs),
        }
    }

    pub fn len(&self) -> usize {
        self.pre + self.post + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Slices one epoch per event; fails on the first epoch that leaves the
/// recording.
pub fn epochs<'a>(
    signal: &'a [f64],
    events: &[usize],
    window: EpochWindow,
) -> Result<Vec<&'a [f64]>, ErpError> {
    events
        .iter()
        .enumerate()
        .map(|(index, &event)| {
            let start = event as i64 - window.pre as i64;
            let end = event as i64 + window.post as i64;
            if start < 0 || end >= signal.len() as i64 {
                return Err(ErpError::OutOfBounds {
                    index,
                    event,
                    start,
                    end,
                    len: signal.len(),
                });
            }
            Ok(&signal[start as usize..=end as usize])
        })
        .collect()
}

/// Mean of all epochs.
pub fn average(
    signal: &[f64],
    events: &[usize],
    window: EpochWindow,
) -> Result<Vec<f64>, ErpError> {
    if events.is_empty() {
        return Err(ErpError::NoEvents);
    }
    let eps = epochs(signal, events, window)?;
    let mut out = vec![0.0; window.len()];
    for e in &eps {
        for (o, v) in out.iter_mut().zip(*e) {
            *o += v;
        }
    }
    let n = eps.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}
