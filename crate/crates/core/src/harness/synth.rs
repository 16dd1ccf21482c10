//! Planted-interest synthetic corpus.
//!
//! Item `i` belongs to topic `i % n_topics`. Topics below `interest_topics`
//! are interest topics: targets are drawn from them, and they appear in a
//! history only where the generator puts them. Every other history event is
//! background noise drawn from the remaining topics.
//!
//! Each user owns a few planted interest topics. About `planted_rate` of
//! the history positions at depth `planted_min_depth` or beyond carry an item
//! from one of them, cycling through the planted topics so each appears
//! whenever there is room. A sample's target is either a planted topic (label
//! `~ Bernoulli(p_hi)`), an intent topic that also sits at the newest
//! history position (label `p_hi` when the request follows that event
//! within `fresh_window_secs`, `p_lo` otherwise), or an unrelated interest
//! topic (`p_lo`).
//!
//! Every user is generated from its own ChaCha8 stream, so any user can be
//! regenerated alone and generation order does not matter.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::store::{BehaviorEvent, SequenceSchema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryLen {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    pub interest_topics: usize,
    pub history_len: HistoryLen,
    pub planted_topics_per_user: usize,
    pub planted_rate: f64,
    pub planted_min_depth: usize,
    /// Fraction of background history events drawn from the interest
    /// topics, so unplanted targets can also occur by chance.
    pub distractor_rate: f64,
    pub positive_rate: f64,
    pub intent_rate: f64,
    pub fresh_window_secs: i64,
    pub stale_min_secs: i64,
    pub mean_event_gap_secs: i64,
    pub p_hi: f64,
    pub p_lo: f64,
    pub seed: u64,
    pub base_time: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 2000,
            n_items: 10_000,
            n_topics: 100,
            interest_topics: 20,
            history_len: HistoryLen { min: 1000, max: 1000 },
            planted_topics_per_user: 2,
            planted_rate: 0.01,
            planted_min_depth: 0,
            distractor_rate: 0.0,
            positive_rate: 0.3,
            intent_rate: 0.2,
            fresh_window_secs: 600,
            stale_min_secs: 3 * 86_400,
            mean_event_gap_secs: 3600,
            p_hi: 0.9,
            p_lo: 0.1,
            seed: 0,
            base_time: 1_700_000_000,
        }
    }
}

impl SynthConfig {
    /// Planted items only at depth 500 and beyond; no intent events.
    pub fn deep_signal(seed: u64) -> Self {
        Self {
            planted_min_depth: 500,
            intent_rate: 0.0,
            positive_rate: 0.5,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(0.0 <= self.p_lo && self.p_lo < self.p_hi && self.p_hi <= 1.0) {
            return bad(format!("need 0 <= p_lo < p_hi <= 1, got p_lo={} p_hi={}", self.p_lo, self.p_hi));
        }
        if self.n_topics < 2 || self.interest_topics == 0 || self.interest_topics >= self.n_topics {
            return bad(format!(
                "need 0 < interest_topics ({}) < n_topics ({})",
                self.interest_topics, self.n_topics
            ));
        }
        if self.n_items < self.n_topics {
            return bad(format!("n_items {} < n_topics {}", self.n_items, self.n_topics));
        }
        if self.planted_topics_per_user >= self.interest_topics {
            return bad(format!(
                "planted_topics_per_user {} leaves no unplanted interest topic out of {}",
                self.planted_topics_per_user, self.interest_topics
            ));
        }
        if self.history_len.min > self.history_len.max {
            return bad(format!("history_len {:?}", self.history_len));
        }
        let rates = [self.planted_rate, self.distractor_rate, self.positive_rate, self.intent_rate];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) || self.positive_rate + self.intent_rate > 1.0 {
            return bad("rates must lie in [0, 1] with positive_rate + intent_rate <= 1".into());
        }
        if self.fresh_window_secs < 2 || self.stale_min_secs <= self.fresh_window_secs || self.mean_event_gap_secs < 1 {
            return bad("need 2 <= fresh_window_secs < stale_min_secs and mean_event_gap_secs >= 1".into());
        }
        Ok(())
    }

    pub fn topic_of(&self, item: u64) -> u32 {
        (item % self.n_topics as u64) as u32
    }

    fn item_of_topic(&self, rng: &mut ChaCha8Rng, topic: u32) -> u64 {
        let t = self.n_topics as u64;
        let count = (self.n_items as u64 - topic as u64).div_ceil(t);
        topic as u64 + t * rng.gen_range(0..count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub item: u64,
    pub category: u32,
    pub ts: i64,
}

impl HistoryEvent {
    /// Maps onto [`SequenceSchema::behavior_default`]: scenario and action 0,
    /// optional fields null.
    pub fn to_behavior(&self) -> BehaviorEvent {
        BehaviorEvent {
            values: vec![
                Value::U64(self.item),
                Value::U32(self.category),
                Value::U32(0),
                Value::U32(0),
                Value::I64(self.ts),
                Value::Null,
                Value::Null,
            ],
        }
    }

    /// Reads `item_id`, `category` and the timestamp column of any schema that
    /// has them. A missing or null item or category reads as 0.
    pub fn from_behavior(schema: &SequenceSchema, ev: &BehaviorEvent) -> Self {
        let get = |name: &str| schema.field_index(name).and_then(|i| ev.values.get(i));
        let item = match get("item_id") {
            Some(Value::U64(v)) => *v,
            _ => 0,
        };
        let category = match get("category") {
            Some(Value::U32(v)) => *v,
            Some(Value::U16(v)) => *v as u32,
            _ => 0,
        };
        Self {
            item,
            category,
            ts: ev.timestamp(schema),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetItem {
    pub item: u64,
    pub category: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Planted,
    FreshIntent,
    StaleIntent,
    Background,
}

impl SampleKind {
    /// Whether the label is drawn with `p_hi`.
    pub fn is_signal(self) -> bool {
        matches!(self, SampleKind::Planted | SampleKind::FreshIntent)
    }
}

/// Everything about a sample except its history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub user: u64,
    pub target: TargetItem,
    pub request_time: i64,
    pub label: bool,
    pub kind: SampleKind,
    pub history_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub meta: SampleMeta,
    /// Newest first; every timestamp is strictly below `request_time`.
    pub history: Vec<HistoryEvent>,
    pub planted_topics: Vec<u32>,
}

/// Generates user `user` (one sample) from its own stream.
pub fn generate_user(cfg: &SynthConfig, user: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(user);

    let interest = cfg.interest_topics;
    let planted: Vec<u32> = sample_indices(&mut rng, interest, cfg.planted_topics_per_user)
        .into_iter()
        .map(|t| t as u32)
        .collect();
    let fresh = rng.gen_bool(0.5);
    let gap = if fresh {
        rng.gen_range(1..cfg.fresh_window_secs)
    } else {
        rng.gen_range(cfg.stale_min_secs..2 * cfg.stale_min_secs)
    };
    let request_time = cfg.base_time + rng.gen_range(0..30 * 86_400);
    let len = rng.gen_range(cfg.history_len.min..=cfg.history_len.max);

    let mut history = Vec::with_capacity(len);
    let mut ts = request_time - gap;
    for _ in 0..len {
        let topic = if cfg.distractor_rate > 0.0 && rng.gen_bool(cfg.distractor_rate) {
            rng.gen_range(0..interest) as u32
        } else {
            rng.gen_range(interest..cfg.n_topics) as u32
        };
        let item = cfg.item_of_topic(&mut rng, topic);
        history.push(HistoryEvent { item, category: topic, ts });
        ts -= rng.gen_range(1..=2 * cfg.mean_event_gap_secs);
    }

    let first = cfg.planted_min_depth.max(1);
    if len > first && !planted.is_empty() {
        let eligible = len - first;
        let count = ((eligible as f64 * cfg.planted_rate).round() as usize)
            .max(planted.len())
            .min(eligible);
        for (k, pos) in sample_indices(&mut rng, eligible, count).into_iter().enumerate() {
            let topic = planted[k % planted.len()];
            let ev = &mut history[first + pos];
            ev.item = cfg.item_of_topic(&mut rng, topic);
            ev.category = topic;
        }
    }

    let roll: f64 = rng.gen();
    let unplanted = |rng: &mut ChaCha8Rng| loop {
        let t = rng.gen_range(0..interest) as u32;
        if !planted.contains(&t) {
            break t;
        }
    };
    let (kind, topic) = if roll < cfg.positive_rate && !planted.is_empty() {
        (SampleKind::Planted, planted[rng.gen_range(0..planted.len())])
    } else if roll < cfg.positive_rate + cfg.intent_rate && len > 0 {
        let t = unplanted(&mut rng);
        history[0].item = cfg.item_of_topic(&mut rng, t);
        history[0].category = t;
        (if fresh { SampleKind::FreshIntent } else { SampleKind::StaleIntent }, t)
    } else {
        (SampleKind::Background, unplanted(&mut rng))
    };
    let target = TargetItem {
        item: cfg.item_of_topic(&mut rng, topic),
        category: topic,
    };
    let p = if kind.is_signal() { cfg.p_hi } else { cfg.p_lo };
    let label = rng.gen::<f64>() < p;

    Sample {
        meta: SampleMeta {
            user,
            target,
            request_time,
            label,
            kind,
            history_len: len,
        },
        history,
        planted_topics: planted,
    }
}

/// Sample headers of every user. Histories are regenerated on demand by
/// [`Corpus::sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: SynthConfig,
    pub samples: Vec<SampleMeta>,
}

impl Corpus {
    pub fn generate(config: SynthConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let samples = (0..config.n_users as u64)
            .map(|u| generate_user(&config, u).meta)
            .collect();
        Ok(Self { config, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, idx: usize) -> Sample {
        generate_user(&self.config, self.samples[idx].user)
    }

    /// Leading users train, the last `val_fraction` validate.
    pub fn split(&self, val_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let n = self.samples.len();
        let val = ((n as f64) * val_fraction.clamp(0.0, 1.0)).round() as usize;
        ((0..n - val).collect(), (n - val..n).collect())
    }

    /// FNV-1a over every sample header and history event.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        for i in 0..self.len() {
            let s = self.sample(i);
            let m = &s.meta;
            h.eat(&m.user.to_le_bytes());
            h.eat(&m.target.item.to_le_bytes());
            h.eat(&m.request_time.to_le_bytes());
            h.eat(&[m.label as u8, m.kind as u8]);
            for ev in &s.history {
                h.eat(&ev.item.to_le_bytes());
                h.eat(&ev.ts.to_le_bytes());
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Fnv {
    fn eat(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
