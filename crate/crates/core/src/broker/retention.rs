use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Bounds on how much of a partition log is kept. Both limits unset means keep everything.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    #[serde(default)]
    pub max_bytes: Option<u64>,
    #[serde(default, with = "opt_secs")]
    pub max_age: Option<Duration>,
}

impl RetentionPolicy {
    pub fn unlimited() -> Self {
        RetentionPolicy::default()
    }

    pub fn is_unlimited(&self) -> bool {
        self.max_bytes.is_none() && self.max_age.is_none()
    }

    /// Number of leading segments that may be deleted. A segment qualifies when it
    /// falls outside the byte budget counted from the newest segment, or when its
    /// newest record is older than `max_age`. The last (active) segment never qualifies.
    pub fn expired_prefix(&self, sizes: &[u64], last_ts: &[Option<i64>], now: i64) -> usize {
        if self.is_unlimited() || sizes.len() <= 1 {
            return 0;
        }
        let mut tail_bytes: Vec<u64> = vec![0; sizes.len()];
        let mut acc = 0u64;
        for i in (0..sizes.len()).rev() {
            acc += sizes[i];
            tail_bytes[i] = acc;
        }
        let mut n = 0;
        for i in 0..sizes.len() - 1 {
            let over_budget = self.max_bytes.is_some_and(|b| tail_bytes[i] > b);
            let too_old = match (self.max_age, last_ts[i]) {
                (Some(age), Some(ts)) => ts < now - age.as_nanos() as i64,
                (Some(_), None) => true,
                _ => false,
            };
            if over_budget || too_old {
                n += 1;
            } else {
                break;
            }
        }
        n
    }
}

mod opt_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_some(&d.as_secs_f64()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}
