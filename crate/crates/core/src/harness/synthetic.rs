//! Seeded stand-ins for the instruments that feed the service.

use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{Agent, PublishReceipt};
use crate::wire::DataMessage;
use crate::Result;

pub const PLIF_BYTES: usize = 10_000_000;
pub const SEM_BYTES: usize = 4_250_000;
pub const SEQ_HEADER: &str = "synthetic.seq";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// Planar laser-induced fluorescence frames.
    Plif,
    /// Scanning electron microscope images.
    Sem,
    /// Small JSON readings.
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub kind: SourceKind,
    pub seed: u64,
    pub rate_hz: f64,
    /// Overrides the kind's natural size for binary kinds.
    pub payload_size: Option<usize>,
}

impl SyntheticSource {
    pub fn new(kind: SourceKind, seed: u64, rate_hz: f64) -> Self {
        SyntheticSource { kind, seed, rate_hz, payload_size: None }
    }

    pub fn with_size(mut self, bytes: usize) -> Self {
        self.payload_size = Some(bytes);
        self
    }

    pub fn size(&self) -> usize {
        match (self.payload_size, self.kind) {
            (Some(n), _) => n,
            (None, SourceKind::Plif) => PLIF_BYTES,
            (None, SourceKind::Sem) => SEM_BYTES,
            (None, SourceKind::Scalar) => self.payload(0).len(),
        }
    }

    fn rng(&self, seq: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(seq);
        rng
    }

    /// Payload number `seq`; a pure function of seed and sequence number.
    pub fn payload(&self, seq: u64) -> Vec<u8> {
        let mut rng = self.rng(seq);
        match self.kind {
            SourceKind::Scalar => {
                let value: f64 = rng.gen_range(0.0..100.0);
                serde_json::to_vec(&json!({"seq": seq, "value": value, "unit": "arb"})).expect("scalar reading serializes")
            }
            _ => {
                let mut buf = vec![0u8; self.payload_size.unwrap_or(match self.kind {
                    SourceKind::Plif => PLIF_BYTES,
                    _ => SEM_BYTES,
                })];
                rng.fill_bytes(&mut buf);
                buf
            }
        }
    }

    pub fn message(&self, topic: &str, seq: u64) -> DataMessage {
        let msg = DataMessage::new(topic, self.payload(seq)).with_header(SEQ_HEADER, seq.to_string());
        match self.kind {
            SourceKind::Scalar => msg.with_header("content-type", "application/json"),
            _ => msg,
        }
    }

    pub fn period(&self) -> Option<Duration> {
        (self.rate_hz > 0.0 && self.rate_hz.is_finite()).then(|| Duration::from_secs_f64(1.0 / self.rate_hz))
    }

    /// Publishes `count` messages at the source's rate, falling behind rather than
    /// bursting when publishing is slower than the rate.
    pub fn run(&self, agent: &Agent, topic: &str, count: u64) -> Result<Vec<PublishReceipt>> {
        let start = Instant::now();
        let mut receipts = Vec::with_capacity(count as usize);
        for seq in 0..count {
            if let Some(p) = self.period() {
                let due = start + p * seq as u32;
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                }
            }
            receipts.push(agent.produce(self.message(topic, seq))?);
        }
        Ok(receipts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_match_the_instruments() {
        assert_eq!(SyntheticSource::new(SourceKind::Plif, 1, 10.0).payload(0).len(), 10_000_000);
        assert_eq!(SyntheticSource::new(SourceKind::Sem, 1, 1.0).payload(3).len(), 4_250_000);
        let scalar = SyntheticSource::new(SourceKind::Scalar, 1, 10.0);
        for seq in [0, 1, u64::MAX] {
            let p = scalar.payload(seq);
            assert!(p.len() <= 1024);
            let v: serde_json::Value = serde_json::from_slice(&p).unwrap();
            assert_eq!(v["seq"], seq);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = SyntheticSource::new(SourceKind::Sem, 42, 1.0).with_size(4096);
        let b = SyntheticSource::new(SourceKind::Sem, 42, 1.0).with_size(4096);
        let c = SyntheticSource::new(SourceKind::Sem, 43, 1.0).with_size(4096);
        assert_eq!(a.payload(7), b.payload(7));
        assert_ne!(a.payload(7), a.payload(8));
        assert_ne!(a.payload(7), c.payload(7));
    }

    #[test]
    fn rate_gives_period() {
        assert_eq!(SyntheticSource::new(SourceKind::Plif, 0, 10.0).period(), Some(Duration::from_millis(100)));
        assert_eq!(SyntheticSource::new(SourceKind::Plif, 0, 0.0).period(), None);
    }
}
